use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-input standardisation, optionally in the log10 domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub log10: Vec<bool>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(n: usize) -> Self {
        Self {
            log10: vec![false; n],
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Fits statistics over `rows`; `log10[j]` selects the log domain for input `j`.
    pub fn fit<'a, I>(rows: I, log10: Vec<bool>) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let n = log10.len();
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut count = 0usize;
        for row in rows {
            if row.len() != n {
                return Err(Error::Shape {
                    expected: n,
                    got: row.len(),
                });
            }
            for j in 0..n {
                let v = if log10[j] { row[j].log10() } else { row[j] };
                if !v.is_finite() {
                    return Err(Error::Domain(format!(
                        "input {j}: cannot normalise {}",
                        row[j]
                    )));
                }
                sum[j] += v;
                sq[j] += v * v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::Domain("cannot fit a normaliser on zero rows".into()));
        }
        let c = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / c - m * m).max(0.0);
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { log10, mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| self.normalize_one(j, v))
            .collect()
    }

    /// Normalized value of input `j` alone.
    pub fn normalize_one(&self, j: usize, v: f64) -> f64 {
        let v = if self.log10[j] { v.log10() } else { v };
        (v - self.mean[j]) / self.std[j]
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(j, &v)| {
                let v = v * self.std[j] + self.mean[j];
                if self.log10[j] {
                    10f64.powf(v)
                } else {
                    v
                }
            })
            .collect()
    }

    /// Concatenation of two normalisers, inputs of `self` first.
    pub fn concat(mut self, other: &Normalizer) -> Self {
        self.log10.extend_from_slice(&other.log10);
        self.mean.extend_from_slice(&other.mean);
        self.std.extend_from_slice(&other.std);
        self
    }
}
