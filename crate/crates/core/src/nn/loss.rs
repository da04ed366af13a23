//! Joint supervised + data-outage loss on predicted schedule pieces.

use serde::{Deserialize, Serialize};

use crate::channel::SystemParams;
use crate::physics::Features;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mse: f64,
    pub outage: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mse: 1.0,
            outage: 1.0,
        }
    }
}

/// Any subset of a schedule: EH length, IT lengths, powers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Pieces {
    pub eh_s: Option<f64>,
    pub it_s: Option<Vec<f64>>,
    pub power_w: Option<Vec<f64>>,
}

/// How transmit powers are obtained when counting undelivered bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutageModel {
    /// No outage term.
    None,
    /// Users send at the predicted powers for the predicted IT lengths.
    PredictedPower,
    /// EH length fixed; each user spends its harvested energy over the
    /// predicted IT length, capped at `P_max`.
    FixedEh(f64),
}

/// Loss value and its gradient with respect to every predicted piece.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub mse: f64,
    pub outage: f64,
    pub d_eh: f64,
    pub d_it: Vec<f64>,
    pub d_power: Vec<f64>,
}

const FLOOR: f64 = 1e-300;

/// `ln(ŷ/y)` and its derivative in `ŷ`.
fn log_ratio(pred: f64, label: f64) -> (f64, f64) {
    let p = pred.max(FLOOR);
    ((p / label.max(FLOOR)).ln(), 1.0 / p)
}

/// `w_mse · mean(ln(ŷ/y)²) + w_outage · Σ_i max(0, D - bits_i) / (n·D)`.
///
/// Pieces are compared in the log domain, so EH lengths, IT lengths and
/// powers spanning several decades contribute on the same footing and
/// over- and undershoot by the same factor cost the same. The hinge has
/// subgradient zero at its kink.
pub fn loss_joint(
    pred: &Pieces,
    label: &Pieces,
    features: &Features,
    params: &SystemParams,
    weights: &LossWeights,
    outage: OutageModel,
) -> LossValue {
    let n = features.n_users();
    let mut out = LossValue {
        d_it: vec![0.0; n],
        d_power: vec![0.0; n],
        ..Default::default()
    };

    let mut terms = 0usize;
    let mut sq = 0.0;
    let mut grad_eh = 0.0;
    let mut grad_it = vec![0.0; n];
    let mut grad_p = vec![0.0; n];
    if let (Some(p), Some(l)) = (pred.eh_s, label.eh_s) {
        let (r, d) = log_ratio(p, l);
        sq += r * r;
        grad_eh = 2.0 * r * d;
        terms += 1;
    }
    for (pv, lv, g) in [
        (&pred.it_s, &label.it_s, &mut grad_it),
        (&pred.power_w, &label.power_w, &mut grad_p),
    ] {
        if let (Some(p), Some(l)) = (pv, lv) {
            for i in 0..n {
                let (r, d) = log_ratio(p[i], l[i]);
                sq += r * r;
                g[i] = 2.0 * r * d;
                terms += 1;
            }
        }
    }
    if terms > 0 {
        let k = weights.mse / terms as f64;
        out.mse = sq / terms as f64;
        out.d_eh += k * grad_eh;
        for i in 0..n {
            out.d_it[i] += k * grad_it[i];
            out.d_power[i] += k * grad_p[i];
        }
    }

    let norm = params.demand_bits * n.max(1) as f64;
    let w = params.bandwidth_hz / std::f64::consts::LN_2;
    match outage {
        OutageModel::None => {}
        OutageModel::PredictedPower => {
            let (Some(tau), Some(pw)) = (&pred.it_s, &pred.power_w) else {
                panic!("PredictedPower outage needs predicted IT lengths and powers");
            };
            for i in 0..n {
                let g = features.gamma[i];
                let snr = pw[i] * g;
                let bits = tau[i] * w * snr.ln_1p();
                let short = params.demand_bits - bits;
                if short > 0.0 {
                    out.outage += short / norm;
                    out.d_it[i] -= weights.outage * w * snr.ln_1p() / norm;
                    out.d_power[i] -= weights.outage * tau[i] * w * g / (1.0 + snr) / norm;
                }
            }
        }
        OutageModel::FixedEh(tau0) => {
            let Some(tau) = &pred.it_s else {
                panic!("FixedEh outage needs predicted IT lengths");
            };
            for i in 0..n {
                let g = features.gamma[i];
                let t = tau[i];
                let energy = features.harvest_w[i] * tau0;
                let capped = energy / t >= params.max_tx_power_w;
                let (bits, d_bits) = if capped {
                    let l = (params.max_tx_power_w * g).ln_1p();
                    (t * w * l, w * l)
                } else {
                    // bits = t·w·ln(1 + c/t), c = E·γ
                    let x = energy * g / t;
                    (t * w * x.ln_1p(), w * (x.ln_1p() - x / (1.0 + x)))
                };
                let short = params.demand_bits - bits;
                if short > 0.0 {
                    out.outage += short / norm;
                    out.d_it[i] -= weights.outage * d_bits / norm;
                }
            }
        }
    }
    out.total = weights.mse * out.mse + weights.outage * out.outage;
    out
}
