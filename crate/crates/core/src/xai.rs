//! Mutual-information ranking of candidate input features against the
//! optimal schedule length.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{NetworkInstance, SystemParams};
use crate::error::{Error, Result};

/// Default number of equal-frequency bins per marginal.
pub const DEFAULT_BINS: usize = 64;

/// Per-user candidate inputs. Declaration order is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Alpha,
    Gamma,
    GainUp,
    GainDn,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [
        FeatureKind::Alpha,
        FeatureKind::Gamma,
        FeatureKind::GainUp,
        FeatureKind::GainDn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Alpha => "alpha",
            FeatureKind::Gamma => "gamma",
            FeatureKind::GainUp => "gain_up",
            FeatureKind::GainDn => "gain_dn",
        }
    }

    /// Value of this feature for every user of `inst`.
    pub fn values(self, inst: &NetworkInstance, params: &SystemParams) -> Vec<f64> {
        let noise = params.noise_power_w();
        let hs = params.harvest_scale_w();
        match self {
            FeatureKind::Alpha => inst
                .gain_up
                .iter()
                .zip(&inst.gain_dn)
                .map(|(u, d)| hs * d * u / noise)
                .collect(),
            FeatureKind::Gamma => inst.gain_up.iter().map(|u| u / noise).collect(),
            FeatureKind::GainUp => inst.gain_up.clone(),
            FeatureKind::GainDn => inst.gain_dn.clone(),
        }
    }
}

/// Equal-frequency bin of every sample. Tied values share the bin of the first
/// tied rank, so the assignment depends only on the multiset of values.
pub fn equal_frequency_bins(x: &[f64], bins: usize) -> Vec<usize> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let b = start * bins / n;
        for &i in &idx[start..end] {
            out[i] = b;
        }
        start = end;
    }
    out
}

/// Histogram mutual information in nats between `x` and `y`, with
/// equal-frequency marginals and the Miller-Madow bias correction, clamped at
/// zero. A constant input carries no information.
pub fn mi_score(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: x.len(),
            got: y.len(),
        });
    }
    if bins < 2 {
        return Err(Error::Domain(format!("need at least 2 bins, got {bins}")));
    }
    let n = x.len();
    if n == 0 {
        return Ok(0.0);
    }
    let bx = equal_frequency_bins(x, bins);
    let by = equal_frequency_bins(y, bins);
    Ok(mi_from_bins(&bx, &by, bins))
}

fn mi_from_bins(bx: &[usize], by: &[usize], bins: usize) -> f64 {
    let n = bx.len();
    let mut joint = vec![0usize; bins * bins];
    let mut px = vec![0usize; bins];
    let mut py = vec![0usize; bins];
    for (&a, &b) in bx.iter().zip(by) {
        joint[a * bins + b] += 1;
        px[a] += 1;
        py[b] += 1;
    }
    let occupied = |v: &[usize]| v.iter().filter(|&&c| c > 0).count();
    let (kx, ky, kxy) = (occupied(&px), occupied(&py), occupied(&joint));
    if kx < 2 || ky < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for a in 0..bins {
        for b in 0..bins {
            let c = joint[a * bins + b];
            if c > 0 {
                let c = c as f64;
                mi += c / nf * (c * nf / (px[a] as f64 * py[b] as f64)).ln();
            }
        }
    }
    let bias = (kxy as f64 - kx as f64 - ky as f64 + 1.0) / (2.0 * nf);
    (mi - bias).max(0.0)
}

/// Candidate scores and the chosen input kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCatalog {
    pub candidates: Vec<FeatureKind>,
    /// Score of `candidates[k]`, nats.
    pub scores: Vec<f64>,
    /// Chosen kinds, in declaration order.
    pub selected: Vec<FeatureKind>,
}

impl FeatureCatalog {
    /// Catalog selecting `kinds` without any scoring.
    pub fn fixed(kinds: &[FeatureKind]) -> Self {
        let mut selected = kinds.to_vec();
        selected.sort();
        selected.dedup();
        Self {
            candidates: selected.clone(),
            scores: vec![0.0; selected.len()],
            selected,
        }
    }

    pub fn width(&self, n_users: usize) -> usize {
        self.selected.len() * n_users
    }

    /// Raw (unnormalised) input vector: every selected kind for every user.
    pub fn inputs(&self, inst: &NetworkInstance, params: &SystemParams) -> Vec<f64> {
        self.selected
            .iter()
            .flat_map(|k| k.values(inst, params))
            .collect()
    }

    /// Candidates ordered from highest to lowest score.
    pub fn ranking(&self) -> Vec<(FeatureKind, f64)> {
        rank(&self.candidates, &self.scores)
    }
}

fn rank(kinds: &[FeatureKind], scores: &[f64]) -> Vec<(FeatureKind, f64)> {
    let mut r: Vec<(FeatureKind, f64)> =
        kinds.iter().copied().zip(scores.iter().copied()).collect();
    r.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    r
}

/// Scores every candidate kind by its MI with the schedule length, averaged
/// over user indices, and keeps the best `per_user_budget` kinds.
pub fn select_features(
    instances: &[NetworkInstance],
    lengths: &[f64],
    kinds: &[FeatureKind],
    per_user_budget: usize,
    bins: usize,
    params: &SystemParams,
) -> Result<FeatureCatalog> {
    if instances.len() != lengths.len() {
        return Err(Error::Shape {
            expected: instances.len(),
            got: lengths.len(),
        });
    }
    if instances.is_empty() {
        return Err(Error::Domain(
            "feature selection needs labelled instances".into(),
        ));
    }
    let mut candidates = kinds.to_vec();
    candidates.sort();
    candidates.dedup();
    if per_user_budget == 0 || per_user_budget > candidates.len() {
        return Err(Error::Config(format!(
            "budget {per_user_budget} must be in 1..={} candidate kinds",
            candidates.len()
        )));
    }
    let n = instances[0].n_users();
    if let Some(bad) = instances.iter().find(|i| i.n_users() != n) {
        return Err(Error::Shape {
            expected: n,
            got: bad.n_users(),
        });
    }
    let by = equal_frequency_bins(lengths, bins);
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|&kind| {
            let values: Vec<Vec<f64>> = instances
                .iter()
                .map(|inst| kind.values(inst, params))
                .collect();
            (0..n)
                .map(|i| {
                    let col: Vec<f64> = values.iter().map(|v| v[i]).collect();
                    mi_from_bins(&equal_frequency_bins(&col, bins), &by, bins)
                })
                .sum::<f64>()
                / n as f64
        })
        .collect();
    let mut selected: Vec<FeatureKind> = rank(&candidates, &scores)
        .into_iter()
        .take(per_user_budget)
        .map(|(k, _)| k)
        .collect();
    selected.sort();
    Ok(FeatureCatalog {
        candidates,
        scores,
        selected,
    })
}
