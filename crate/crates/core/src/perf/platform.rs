use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rational::{parse_rate, rate_from_f64, to_f64, Rate};
use crate::sdf::BlockKind;

pub const PLATFORM_FORMAT_VERSION: u32 = 1;

const ZYNQ7045: &str = include_str!("../../platforms/zynq7045.toml");

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("cannot read platform file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("platform file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("platform format_version {0} is not supported (expected {PLATFORM_FORMAT_VERSION})")]
    FormatVersion(u32),
    #[error("platform field `{0}` must be positive")]
    NonPositive(&'static str),
    #[error("platform field `{0}` must be finite and non-negative")]
    Negative(&'static str),
    #[error("memory.port_words_per_cycle {given} disagrees with bandwidth-derived {derived:.6}")]
    PortRate { given: String, derived: f64 },
    #[error("cost table has no entry for block kind {0}")]
    MissingCost(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockSection {
    pub mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceSection {
    pub dsp: u64,
    pub bram_kb: f64,
    pub lut: u64,
    pub peak_gops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySection {
    pub bandwidth_gbps: f64,
    pub word_bytes: u64,
    pub reconfig_time_ms: f64,
    /// Optional exact override such as "84/5".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port_words_per_cycle: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTable {
    pub dsp_per_mac: u64,
    pub lut_base: BTreeMap<String, u64>,
    pub lut_per_lane: BTreeMap<String, u64>,
}

impl CostTable {
    pub fn lut_base(&self, kind: BlockKind) -> u64 {
        self.lut_base.get(kind.name()).copied().unwrap_or(0)
    }

    pub fn lut_per_lane(&self, kind: BlockKind) -> u64 {
        self.lut_per_lane.get(kind.name()).copied().unwrap_or(0)
    }
}

/// Target device: budgets, clock, off-chip memory and cost coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformSpec {
    pub format_version: u32,
    pub name: String,
    pub clock: ClockSection,
    pub resources: ResourceSection,
    pub memory: MemorySection,
    pub cost_table: CostTable,
}

const KINDS: [BlockKind; 9] = [
    BlockKind::MemRead,
    BlockKind::SlidingWindow,
    BlockKind::Fork,
    BlockKind::ConvBank,
    BlockKind::PoolBank,
    BlockKind::NonlinBank,
    BlockKind::ConcatJoin,
    BlockKind::EltwiseAddJoin,
    BlockKind::MemWrite,
];

impl PlatformSpec {
    /// The shipped Zynq-7045 description.
    pub fn zynq7045() -> Self {
        Self::from_toml(ZYNQ7045).expect("shipped platform file is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, PlatformError> {
        let p: PlatformSpec = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PlatformError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PlatformError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("platform serializes")
    }

    pub fn validate(&self) -> Result<(), PlatformError> {
        if self.format_version != PLATFORM_FORMAT_VERSION {
            return Err(PlatformError::FormatVersion(self.format_version));
        }
        let positive = [
            ("clock.mhz", self.clock.mhz),
            ("memory.bandwidth_gbps", self.memory.bandwidth_gbps),
            ("memory.word_bytes", self.memory.word_bytes as f64),
            ("resources.peak_gops", self.resources.peak_gops),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PlatformError::NonPositive(name));
            }
        }
        let non_negative = [
            ("resources.bram_kb", self.resources.bram_kb),
            ("memory.reconfig_time_ms", self.memory.reconfig_time_ms),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PlatformError::Negative(name));
            }
        }
        for k in KINDS {
            if !self.cost_table.lut_base.contains_key(k.name()) {
                return Err(PlatformError::MissingCost(k.name().to_string()));
            }
        }
        if let Some(given) = &self.memory.port_words_per_cycle {
            let derived = self.derived_words_per_cycle();
            let ok = parse_rate(given)
                .filter(|r| *r > Rate::from_integer(0))
                .is_some_and(|r| (to_f64(&r) - derived).abs() <= 1e-3 * derived);
            if !ok {
                return Err(PlatformError::PortRate {
                    given: given.clone(),
                    derived,
                });
            }
        }
        Ok(())
    }

    fn derived_words_per_cycle(&self) -> f64 {
        self.memory.bandwidth_gbps * 1e9 / self.memory.word_bytes as f64 / (self.clock.mhz * 1e6)
    }

    /// Off-chip words per cycle across all ports (B_mem).
    pub fn mem_rate(&self) -> Rate {
        self.memory
            .port_words_per_cycle
            .as_deref()
            .and_then(parse_rate)
            .unwrap_or_else(|| rate_from_f64(self.derived_words_per_cycle()))
    }

    pub fn clock_hz(&self) -> f64 {
        self.clock.mhz * 1e6
    }

    pub fn reconfig_time_s(&self) -> f64 {
        self.memory.reconfig_time_ms * 1e-3
    }

    pub fn bandwidth_bytes_s(&self) -> f64 {
        self.memory.bandwidth_gbps * 1e9
    }

    /// Short content hash identifying the platform in descriptors.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }
}
