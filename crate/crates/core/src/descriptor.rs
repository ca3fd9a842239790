//! Versioned, hash-sealed JSON record of a chosen design.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dse::{evaluate_design, DesignPoint, DseError, SearchSpace, Strategy};
use crate::model::{serialize_native, ConvNetModel};
use crate::perf::{PerfEstimate, PlatformSpec, ResourceUsage};
use crate::sdf::{BlockKind, Folding, FoldingConfig};
use crate::validate::design_graphs;

pub const DESCRIPTOR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("descriptor is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("descriptor format_version {0} is not supported (expected {DESCRIPTOR_FORMAT_VERSION})")]
    FormatVersion(u32),
    #[error("descriptor hash mismatch: recorded {recorded}, computed {computed}")]
    Hash { recorded: String, computed: String },
    #[error("descriptor was produced for model fingerprint {recorded}, given model has {given}")]
    Model { recorded: String, given: String },
    #[error("descriptor was produced for platform fingerprint {recorded}, given platform has {given}")]
    Platform { recorded: String, given: String },
    #[error(transparent)]
    Dse(#[from] DseError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockParams {
    pub id: String,
    pub kind: BlockKind,
    pub layer: String,
    pub coarse: u64,
    pub fine: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub layers: Vec<String>,
    pub blocks: Vec<BlockParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignDescriptor {
    pub format_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub model: String,
    pub model_fingerprint: String,
    pub platform: String,
    pub platform_fingerprint: String,
    pub objective: String,
    pub seed: Option<u64>,
    pub cuts: Vec<usize>,
    pub strategy: Strategy,
    pub batch: u64,
    pub foldings: BTreeMap<String, Folding>,
    pub stages: Vec<StageRecord>,
    pub predicted: PerfEstimate,
    pub resources: ResourceUsage,
    pub feasible: bool,
    /// SHA-256 of the document serialized with this field empty.
    pub hash: String,
}

pub fn model_fingerprint(model: &ConvNetModel) -> String {
    hex::encode(&Sha256::digest(serialize_native(model).as_bytes())[..8])
}

impl DesignDescriptor {
    pub fn from_point(
        model: &ConvNetModel,
        platform: &PlatformSpec,
        space: &SearchSpace,
        point: &DesignPoint,
        objective: &str,
        seed: Option<u64>,
    ) -> Result<Self, DescriptorError> {
        let c = &point.config;
        let foldings = space.folding_config(&c.foldings);
        let graphs = design_graphs(model, platform, &c.cuts, &foldings, c.strategy).map_err(DseError::from)?;
        let stages = graphs
            .iter()
            .map(|g| {
                let mut layers: Vec<String> = Vec::new();
                for b in &g.blocks {
                    if !b.kind.is_memory() && !layers.contains(&b.layer_id) {
                        layers.push(b.layer_id.clone());
                    }
                }
                StageRecord {
                    layers,
                    blocks: g
                        .blocks
                        .iter()
                        .map(|b| BlockParams {
                            id: b.id.clone(),
                            kind: b.kind,
                            layer: b.layer_id.clone(),
                            coarse: b.coarse,
                            fine: b.fine,
                        })
                        .collect(),
                }
            })
            .collect();
        let mut d = Self {
            format_version: DESCRIPTOR_FORMAT_VERSION,
            tool: "convsdf".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            model: model.name().into(),
            model_fingerprint: model_fingerprint(model),
            platform: platform.name.clone(),
            platform_fingerprint: platform.fingerprint(),
            objective: objective.into(),
            seed,
            cuts: c.cuts.clone(),
            strategy: c.strategy,
            batch: c.batch,
            foldings,
            stages,
            predicted: point.estimate.clone(),
            resources: point.resources,
            feasible: point.feasible,
            hash: String::new(),
        };
        d.hash = d.compute_hash();
        Ok(d)
    }

    pub fn compute_hash(&self) -> String {
        let unsealed = Self {
            hash: String::new(),
            ..self.clone()
        };
        let json = serde_json::to_string(&unsealed).expect("descriptor serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Pretty JSON with a trailing newline; field order is fixed.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("descriptor serializes");
        s.push('\n');
        s
    }

    /// Parses and checks version and hash.
    pub fn from_json(text: &str) -> Result<Self, DescriptorError> {
        let d: Self = serde_json::from_str(text)?;
        if d.format_version != DESCRIPTOR_FORMAT_VERSION {
            return Err(DescriptorError::FormatVersion(d.format_version));
        }
        let computed = d.compute_hash();
        if computed != d.hash {
            return Err(DescriptorError::Hash {
                recorded: d.hash,
                computed,
            });
        }
        Ok(d)
    }

    pub fn check_model(&self, model: &ConvNetModel) -> Result<(), DescriptorError> {
        let given = model_fingerprint(model);
        if given != self.model_fingerprint {
            return Err(DescriptorError::Model {
                recorded: self.model_fingerprint.clone(),
                given,
            });
        }
        Ok(())
    }

    pub fn check_platform(&self, platform: &PlatformSpec) -> Result<(), DescriptorError> {
        let given = platform.fingerprint();
        if given != self.platform_fingerprint {
            return Err(DescriptorError::Platform {
                recorded: self.platform_fingerprint.clone(),
                given,
            });
        }
        Ok(())
    }

    pub fn folding_config(&self) -> FoldingConfig {
        self.foldings.clone()
    }

    /// Re-runs the estimator on the recorded design.
    pub fn reestimate(
        &self,
        model: &ConvNetModel,
        platform: &PlatformSpec,
    ) -> Result<(PerfEstimate, ResourceUsage, bool), DescriptorError> {
        Ok(evaluate_design(
            model,
            platform,
            &self.cuts,
            &self.foldings,
            self.strategy,
            self.batch,
        )?)
    }
}
