use std::collections::BTreeSet;

use rand::distributions::{Distribution as _, WeightedIndex};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::IngestError;
use crate::exec::SparseOperand;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Distribution {
    Uniform,
    /// Positions with `|row - col| <= width`.
    Banded(usize),
    /// Row of rank `r` is picked with weight `1 / (r + 1)^s`.
    SkewedRows(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub nnz: usize,
    pub distribution: Distribution,
    pub seed: u64,
}

fn value(rng: &mut ChaCha8Rng) -> f64 {
    // Small nonzero integers keep results exact across summation orders.
    let v = rng.gen_range(1..=9) as f64;
    if rng.gen_bool(0.5) {
        v
    } else {
        -v
    }
}

/// Deterministic square test matrix with exactly `nnz` distinct entries.
pub fn synth_matrix(spec: &SynthSpec) -> Result<SparseOperand, IngestError> {
    let SynthSpec { n, nnz, seed, .. } = *spec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<(usize, usize)> = match spec.distribution {
        Distribution::Uniform => {
            let total = n.checked_mul(n).ok_or_else(|| IngestError::Infeasible("n is too large".into()))?;
            if nnz > total {
                return Err(IngestError::Infeasible(format!(
                    "{nnz} entries do not fit in a {n}x{n} matrix"
                )));
            }
            index::sample(&mut rng, total, nnz)
                .into_iter()
                .map(|p| (p / n, p % n))
                .collect()
        }
        Distribution::Banded(width) => {
            let cands: Vec<(usize, usize)> = (0..n)
                .flat_map(|r| {
                    let lo = r.saturating_sub(width);
                    let hi = (r + width + 1).min(n);
                    (lo..hi).map(move |c| (r, c))
                })
                .collect();
            if nnz > cands.len() {
                return Err(IngestError::Infeasible(format!(
                    "{nnz} entries do not fit in a band of width {width} ({} positions)",
                    cands.len()
                )));
            }
            index::sample(&mut rng, cands.len(), nnz)
                .into_iter()
                .map(|i| cands[i])
                .collect()
        }
        Distribution::SkewedRows(s) => skewed(&mut rng, n, nnz, s)?,
    };
    let mut entries: Vec<(usize, usize, f64)> = positions.into_iter().map(|(r, c)| (r, c, 0.0)).collect();
    entries.sort_by_key(|&(r, c, _)| (r, c));
    for e in &mut entries {
        e.2 = value(&mut rng);
    }
    Ok(SparseOperand::new(n, n, entries).expect("positions are distinct"))
}

fn skewed(rng: &mut ChaCha8Rng, n: usize, nnz: usize, s: f64) -> Result<Vec<(usize, usize)>, IngestError> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(IngestError::Infeasible(format!("skew exponent {s} must be >= 0")));
    }
    if n.checked_mul(n).is_none_or(|t| nnz > t) {
        return Err(IngestError::Infeasible(format!(
            "{nnz} entries do not fit in a {n}x{n} matrix"
        )));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(rng);
    let mut weights: Vec<f64> = (0..n).map(|r| 1.0 / ((r + 1) as f64).powf(s)).collect();
    let mut used: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut out = Vec::with_capacity(nnz);
    let mut dist = WeightedIndex::new(&weights).ok();
    while out.len() < nnz {
        let d = dist.as_ref().expect("free positions remain");
        let rank = d.sample(rng);
        let row = rows[rank];
        let free = n - used[row].len();
        let mut k = rng.gen_range(0..free);
        let col = (0..n)
            .filter(|c| !used[row].contains(c))
            .find(|_| {
                let hit = k == 0;
                k = k.saturating_sub(1);
                hit
            })
            .expect("row has a free column");
        used[row].insert(col);
        out.push((row, col));
        if used[row].len() == n {
            weights[rank] = 0.0;
            dist = WeightedIndex::new(&weights).ok();
        }
    }
    Ok(out)
}
