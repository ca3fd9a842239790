//! Exact rational helpers shared by the dataflow model.
//!
//! Data rates are small fractions (elements per cycle) and are kept as
//! `Ratio<i64>`. Linear algebra over the topology matrix promotes to
//! arbitrary precision so elimination never overflows.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Elements per cycle, exact.
pub type Rate = Ratio<i64>;

pub fn rate(n: i64) -> Rate {
    Rate::from_integer(n)
}

pub fn ratio(num: i64, den: i64) -> Rate {
    Rate::new(num, den)
}

/// Renders a rate as `p` or `p/q`.
pub fn format_rate(r: &Rate) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses `p` or `p/q`.
pub fn parse_rate(s: &str) -> Option<Rate> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n: i64 = n.trim().parse().ok()?;
            let d: i64 = d.trim().parse().ok()?;
            (d != 0).then(|| Rate::new(n, d))
        }
        None => s.parse::<i64>().ok().map(Rate::from_integer),
    }
}

/// Converts a decimal value to a rate with at most 1e-6 granularity.
pub fn rate_from_f64(x: f64) -> Rate {
    const SCALE: i64 = 1_000_000;
    Rate::new((x * SCALE as f64).round() as i64, SCALE)
}

pub fn to_f64(r: &Rate) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

pub fn ceil_u64(r: &Rate) -> u64 {
    r.ceil().to_integer().max(0) as u64
}

/// All positive divisors of `n`, ascending.
pub fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1;
    while d * d <= n {
        if n % d == 0 {
            small.push(d);
            if d * d != n {
                large.push(n / d);
            }
        }
        d += 1;
    }
    large.reverse();
    small.extend(large);
    small
}

pub fn to_big(r: &Rate) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

/// Reduced row echelon form in place; returns the pivot columns.
pub fn rref(m: &mut [Vec<BigRational>]) -> Vec<usize> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let inv = m[r][c].recip();
        for x in m[r].iter_mut() {
            *x = &*x * &inv;
        }
        for i in 0..rows {
            if i != r && !m[i][c].is_zero() {
                let factor = m[i][c].clone();
                for j in 0..cols {
                    let delta = &factor * &m[r][j];
                    m[i][j] = &m[i][j] - delta;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

pub fn rank(m: &[Vec<BigRational>]) -> usize {
    let mut work = m.to_vec();
    rref(&mut work).len()
}

/// Basis of the right null space `{x : m x = 0}` for a matrix with `cols`
/// columns (needed when `m` has no rows).
pub fn null_space(m: &[Vec<BigRational>], cols: usize) -> Vec<Vec<BigRational>> {
    let mut work = m.to_vec();
    let pivots = rref(&mut work);
    let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut v = vec![BigRational::zero(); cols];
            v[f] = BigRational::one();
            for (row, &pc) in pivots.iter().enumerate() {
                v[pc] = -work[row][f].clone();
            }
            v
        })
        .collect()
}

/// Scales a rational vector to the smallest integer vector with the same
/// direction, oriented so the first non-zero entry is positive.
pub fn primitive_integer_vector(v: &[BigRational]) -> Vec<BigInt> {
    let lcm = v
        .iter()
        .fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
    let ints: Vec<BigInt> = v.iter().map(|x| (x * &lcm).to_integer()).collect();
    let gcd = ints.iter().fold(BigInt::zero(), |acc, x| acc.gcd(x));
    if gcd.is_zero() {
        return ints;
    }
    let sign = ints
        .iter()
        .find(|x| !x.is_zero())
        .map_or(BigInt::one(), |x| x.signum());
    ints.into_iter().map(|x| x / &gcd * &sign).collect()
}
