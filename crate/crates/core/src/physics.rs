//! Link physics, optimality-condition features and the output set mapping.
//!
//! With harvested power `E_i = ζ·P_A·g_dn,i` per second of downlink, a user
//! that transmits at power `p` for `τ` seconds needs `p·τ ≤ E_i·τ0` and
//! delivers `τ·W·log2(1 + p·γ_i)` bits, with `γ_i = g_up,i / (N0·W)`.

use serde::{Deserialize, Serialize};

use crate::channel::{NetworkInstance, SystemParams};
use crate::error::{Error, Result};

/// Relative slack accepted on energy causality.
pub const ENERGY_REL_TOL: f64 = 1e-9;
/// Relative slack accepted on the transmit power cap.
pub const POWER_REL_TOL: f64 = 1e-12;
/// Total outage, relative to `n·D`, below which a schedule counts as feasible.
pub const OUTAGE_REL_TOL: f64 = 1e-9;

/// Shannon rate `W·log2(1 + p·γ)`.
pub fn rate_bps(p: f64, gamma: f64, bandwidth: f64) -> Result<f64> {
    if !(p >= 0.0) {
        return Err(Error::Domain(format!(
            "transmit power must be non-negative, got {p}"
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    Ok(bandwidth * (p * gamma).ln_1p() / std::f64::consts::LN_2)
}

#[inline]
fn rate_unchecked(p: f64, gamma: f64, bandwidth: f64) -> f64 {
    bandwidth * (p * gamma).ln_1p() / std::f64::consts::LN_2
}

/// Per-user optimality-condition quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Features {
    /// `ζ·P_A·g_dn·γ`; the subproblem only sees `α·τ0`.
    pub alpha: Vec<f64>,
    /// Uplink SNR per watt, `g_up / (N0·W)`.
    pub gamma: Vec<f64>,
    /// IT length when transmitting at the power cap.
    pub beta: Vec<f64>,
    /// EH length needed to sustain the power cap for `beta` seconds.
    pub theta: Vec<f64>,
    /// Harvested power `ζ·P_A·g_dn`.
    pub harvest_w: Vec<f64>,
}

impl Features {
    pub fn n_users(&self) -> usize {
        self.alpha.len()
    }
}

/// Input set construction: features of every user.
pub fn isc_features(inst: &NetworkInstance, params: &SystemParams) -> Result<Features> {
    inst.validate()?;
    let n = inst.n_users();
    let noise = params.noise_power_w();
    let mut f = Features {
        alpha: Vec::with_capacity(n),
        gamma: Vec::with_capacity(n),
        beta: Vec::with_capacity(n),
        theta: Vec::with_capacity(n),
        harvest_w: Vec::with_capacity(n),
    };
    for (&up, &dn) in inst.gain_up.iter().zip(&inst.gain_dn) {
        let gamma = up / noise;
        let harvest = params.harvest_scale_w() * dn;
        let beta =
            params.demand_bits / rate_unchecked(params.max_tx_power_w, gamma, params.bandwidth_hz);
        f.alpha.push(harvest * gamma);
        f.gamma.push(gamma);
        f.beta.push(beta);
        f.theta.push(params.max_tx_power_w * beta / harvest);
        f.harvest_w.push(harvest);
    }
    Ok(f)
}

/// One energy-harvesting phase followed by one IT slot per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub eh_s: f64,
    pub it_s: Vec<f64>,
    pub power_w: Vec<f64>,
}

impl Schedule {
    pub fn zeros(n: usize) -> Self {
        Self {
            eh_s: 0.0,
            it_s: vec![0.0; n],
            power_w: vec![0.0; n],
        }
    }

    pub fn n_users(&self) -> usize {
        self.it_s.len()
    }

    /// Reorders users: user `k` of the result is user `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            eh_s: self.eh_s,
            it_s: perm.iter().map(|&i| self.it_s[i]).collect(),
            power_w: perm.iter().map(|&i| self.power_w[i]).collect(),
        }
    }
}

pub fn schedule_length(schedule: &Schedule) -> f64 {
    schedule.eh_s + schedule.it_s.iter().sum::<f64>()
}

/// A schedule made of consecutive rounds. Energy harvested in a round is only
/// spent within that round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub rounds: Vec<Schedule>,
}

impl SchedulePlan {
    pub fn single(schedule: Schedule) -> Self {
        Self {
            rounds: vec![schedule],
        }
    }

    pub fn length(&self) -> f64 {
        self.rounds.iter().map(schedule_length).sum()
    }

    pub fn primary(&self) -> &Schedule {
        &self.rounds[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub delivered_bits: Vec<f64>,
    pub outage_bits: f64,
    pub energy_ok: Vec<bool>,
    pub power_ok: Vec<bool>,
}

impl FeasibilityReport {
    /// Zero outage (within tolerance) and every constraint flag set.
    pub fn is_feasible(&self, params: &SystemParams) -> bool {
        let n = self.delivered_bits.len() as f64;
        self.outage_bits <= OUTAGE_REL_TOL * params.demand_bits * n.max(1.0)
            && self.energy_ok.iter().all(|&b| b)
            && self.power_ok.iter().all(|&b| b)
    }
}

/// Effective transmit power: the requested power, limited by the cap and by the
/// energy available for the slot.
fn effective_power(p: f64, tau: f64, eh: f64, harvest_w: f64, p_max: f64) -> f64 {
    if !(tau > 0.0) {
        return 0.0;
    }
    p.max(0.0).min(p_max).min(harvest_w * eh.max(0.0) / tau)
}

fn check_shape(schedule: &Schedule, n: usize) -> Result<()> {
    if schedule.it_s.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: schedule.it_s.len(),
        });
    }
    if schedule.power_w.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: schedule.power_w.len(),
        });
    }
    Ok(())
}

/// Output set mapping: for given powers, the shortest IT slots that carry each
/// demand and the shortest EH phase that funds them all.
pub fn osm(
    power_w: &[f64],
    inst: &NetworkInstance,
    params: &SystemParams,
    demand_bits: &[f64],
) -> Result<Schedule> {
    let n = inst.n_users();
    if power_w.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: power_w.len(),
        });
    }
    if demand_bits.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: demand_bits.len(),
        });
    }
    let noise = params.noise_power_w();
    let mut out = Schedule::zeros(n);
    for i in 0..n {
        let (p, d) = (power_w[i], demand_bits[i]);
        if !(d >= 0.0) {
            return Err(Error::Domain(format!("user {i}: negative demand {d}")));
        }
        if d == 0.0 {
            continue;
        }
        if !(p > 0.0) || p > params.max_tx_power_w * (1.0 + POWER_REL_TOL) {
            return Err(Error::Infeasible(format!(
                "user {i}: power {p} outside (0, P_max] with demand {d}"
            )));
        }
        let gamma = inst.gain_up[i] / noise;
        let tau = d / rate_unchecked(p, gamma, params.bandwidth_hz);
        let harvest = params.harvest_scale_w() * inst.gain_dn[i];
        out.it_s[i] = tau;
        out.power_w[i] = p;
        out.eh_s = out.eh_s.max(p * tau / harvest);
    }
    Ok(out)
}

/// Bits delivered, outage and constraint flags of one round.
pub fn evaluate(
    schedule: &Schedule,
    inst: &NetworkInstance,
    params: &SystemParams,
    demand_bits: &[f64],
) -> Result<FeasibilityReport> {
    evaluate_plan(std::slice::from_ref(schedule), inst, params, demand_bits)
}

/// Like [`evaluate`], summing deliveries over consecutive rounds.
pub fn evaluate_plan(
    rounds: &[Schedule],
    inst: &NetworkInstance,
    params: &SystemParams,
    demand_bits: &[f64],
) -> Result<FeasibilityReport> {
    let n = inst.n_users();
    if demand_bits.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: demand_bits.len(),
        });
    }
    let noise = params.noise_power_w();
    let p_max = params.max_tx_power_w;
    let mut rep = FeasibilityReport {
        delivered_bits: vec![0.0; n],
        outage_bits: 0.0,
        energy_ok: vec![true; n],
        power_ok: vec![true; n],
    };
    for s in rounds {
        check_shape(s, n)?;
        for i in 0..n {
            let (p, tau) = (s.power_w[i], s.it_s[i]);
            let harvest = params.harvest_scale_w() * inst.gain_dn[i];
            let budget = harvest * s.eh_s.max(0.0);
            if tau > 0.0 && p > 0.0 {
                if p * tau > budget * (1.0 + ENERGY_REL_TOL) {
                    rep.energy_ok[i] = false;
                }
                if p > p_max * (1.0 + POWER_REL_TOL) {
                    rep.power_ok[i] = false;
                }
            }
            if p < 0.0 || tau < 0.0 {
                rep.power_ok[i] &= p >= 0.0;
                rep.energy_ok[i] &= tau >= 0.0;
            }
            let pe = effective_power(p, tau, s.eh_s, harvest, p_max);
            if pe > 0.0 {
                rep.delivered_bits[i] +=
                    tau * rate_unchecked(pe, inst.gain_up[i] / noise, params.bandwidth_hz);
            }
        }
    }
    rep.outage_bits = rep
        .delivered_bits
        .iter()
        .zip(demand_bits)
        .map(|(&got, &want)| (want - got).max(0.0))
        .sum();
    Ok(rep)
}

/// Replaces every power by the power the user can actually sustain.
pub fn with_effective_powers(
    schedule: &Schedule,
    inst: &NetworkInstance,
    params: &SystemParams,
) -> Schedule {
    let mut out = schedule.clone();
    for i in 0..schedule.n_users() {
        let harvest = params.harvest_scale_w() * inst.gain_dn[i];
        out.power_w[i] = effective_power(
            schedule.power_w[i],
            schedule.it_s[i],
            schedule.eh_s,
            harvest,
            params.max_tx_power_w,
        );
        out.it_s[i] = out.it_s[i].max(0.0);
    }
    out.eh_s = out.eh_s.max(0.0);
    out
}
