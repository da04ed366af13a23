//! Random network instances: users dropped uniformly over a disc around the
//! access point, log-distance path loss with log-normal shadowing, and
//! Rayleigh small-scale fading.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemParams {
    /// Access point transmit power during harvesting (W).
    pub ap_tx_power_w: f64,
    /// Energy harvesting efficiency, in (0, 1].
    pub harvest_eff: f64,
    /// Per-user transmit power cap (W).
    pub max_tx_power_w: f64,
    /// Per-user demand (bits).
    pub demand_bits: f64,
    pub bandwidth_hz: f64,
    /// Noise power spectral density, linear (W/Hz).
    pub noise_psd_w_per_hz: f64,
    pub cell_radius_m: f64,
    pub ref_dist_m: f64,
    /// Path loss at the reference distance (dB).
    pub ref_pl_db: f64,
    pub pl_exponent: f64,
    pub shadow_sigma_db: f64,
    /// Users are never placed closer than this to the access point.
    pub min_dist_m: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            ap_tx_power_w: 2.0,
            harvest_eff: 0.5,
            max_tx_power_w: 0.01,
            demand_bits: 50.0,
            bandwidth_hz: 1e6,
            noise_psd_w_per_hz: 10f64.powf(-110.0 / 10.0) * 1e-3,
            cell_radius_m: 1.0,
            ref_dist_m: 1.0,
            ref_pl_db: 30.0,
            pl_exponent: 2.0,
            shadow_sigma_db: 2.0,
            min_dist_m: 0.05,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ap_tx_power_w", self.ap_tx_power_w),
            ("harvest_eff", self.harvest_eff),
            ("max_tx_power_w", self.max_tx_power_w),
            ("demand_bits", self.demand_bits),
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_psd_w_per_hz", self.noise_psd_w_per_hz),
            ("cell_radius_m", self.cell_radius_m),
            ("ref_dist_m", self.ref_dist_m),
            ("pl_exponent", self.pl_exponent),
            ("shadow_sigma_db", self.shadow_sigma_db),
            ("min_dist_m", self.min_dist_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.harvest_eff > 1.0 {
            return Err(Error::Config(format!(
                "harvest_eff must be in (0, 1], got {}",
                self.harvest_eff
            )));
        }
        if self.min_dist_m >= self.cell_radius_m {
            return Err(Error::Config(
                "min_dist_m must be below cell_radius_m".into(),
            ));
        }
        if !self.ref_pl_db.is_finite() {
            return Err(Error::Config("ref_pl_db must be finite".into()));
        }
        Ok(())
    }

    /// Noise power over the whole band, N0·W (W).
    pub fn noise_power_w(&self) -> f64 {
        self.noise_psd_w_per_hz * self.bandwidth_hz
    }

    /// Harvested power per unit downlink gain, ζ·P_A (W).
    pub fn harvest_scale_w(&self) -> f64 {
        self.harvest_eff * self.ap_tx_power_w
    }
}

/// Channel state of one network: linear power gains of every uplink and
/// downlink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkInstance {
    pub gain_up: Vec<f64>,
    pub gain_dn: Vec<f64>,
    /// User distances, kept for reproducibility only.
    #[serde(default)]
    pub dist_m: Vec<f64>,
}

impl NetworkInstance {
    pub fn new(gain_up: Vec<f64>, gain_dn: Vec<f64>) -> Result<Self> {
        let inst = Self {
            gain_up,
            gain_dn,
            dist_m: Vec::new(),
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn n_users(&self) -> usize {
        self.gain_up.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.gain_up.len();
        if self.gain_dn.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: self.gain_dn.len(),
            });
        }
        if !self.dist_m.is_empty() && self.dist_m.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: self.dist_m.len(),
            });
        }
        for (i, (&u, &d)) in self.gain_up.iter().zip(&self.gain_dn).enumerate() {
            if !(u.is_finite() && u > 0.0 && d.is_finite() && d > 0.0) {
                return Err(Error::Domain(format!(
                    "user {i}: gains must be positive and finite (up {u}, dn {d})"
                )));
            }
        }
        Ok(())
    }

    /// Reorders users: user `k` of the result is user `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let pick = |v: &Vec<f64>| {
            if v.is_empty() {
                Vec::new()
            } else {
                perm.iter().map(|&i| v[i]).collect()
            }
        };
        Self {
            gain_up: pick(&self.gain_up),
            gain_dn: pick(&self.gain_dn),
            dist_m: pick(&self.dist_m),
        }
    }
}

/// Log-distance path loss in dB.
pub fn path_loss_db(d: f64, params: &SystemParams, shadow_z: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {d}")));
    }
    Ok(params.ref_pl_db + 10.0 * params.pl_exponent * (d / params.ref_dist_m).log10() + shadow_z)
}

/// Exponentially distributed power gain (squared Rayleigh amplitude) whose mean
/// equals the large-scale level `10^(-pl_db/10)`.
pub fn sample_gain<R: Rng + ?Sized>(pl_db: f64, rng: &mut R) -> f64 {
    let mean = 10f64.powf(-pl_db / 10.0);
    let e: f64 = Exp1.sample(rng);
    mean * e
}

fn sample_distance<R: Rng + ?Sized>(params: &SystemParams, rng: &mut R) -> f64 {
    let r2_min = params.min_dist_m * params.min_dist_m;
    let r2_max = params.cell_radius_m * params.cell_radius_m;
    let u: f64 = rng.random();
    (u * (r2_max - r2_min) + r2_min)
        .sqrt()
        .clamp(params.min_dist_m, params.cell_radius_m)
}

fn draw_gain<R: Rng + ?Sized>(
    d: f64,
    params: &SystemParams,
    shadow: &Normal<f64>,
    rng: &mut R,
) -> f64 {
    let z = shadow.sample(rng);
    let pl = path_loss_db(d, params, z).expect("distance is at least min_dist_m");
    // Exp1 can return exactly zero with vanishing probability.
    let g = sample_gain(pl, rng);
    if g > 0.0 {
        g
    } else {
        f64::MIN_POSITIVE
    }
}

/// Drops `n` users and draws independent uplink and downlink channels for each.
pub fn generate_instance<R: Rng + ?Sized>(
    n: usize,
    params: &SystemParams,
    rng: &mut R,
) -> Result<NetworkInstance> {
    if n == 0 {
        return Err(Error::Domain("instance needs at least one user".into()));
    }
    params.validate()?;
    let shadow =
        Normal::new(0.0, params.shadow_sigma_db).map_err(|e| Error::Config(e.to_string()))?;
    let mut inst = NetworkInstance {
        gain_up: Vec::with_capacity(n),
        gain_dn: Vec::with_capacity(n),
        dist_m: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let d = sample_distance(params, rng);
        let up = draw_gain(d, params, &shadow, rng);
        let dn = draw_gain(d, params, &shadow, rng);
        inst.dist_m.push(d);
        inst.gain_up.push(up);
        inst.gain_dn.push(dn);
    }
    Ok(inst)
}

pub fn generate_dataset<R: Rng + ?Sized>(
    n: usize,
    count: usize,
    params: &SystemParams,
    rng: &mut R,
) -> Result<Vec<NetworkInstance>> {
    if count == 0 {
        return Err(Error::Domain("dataset needs at least one instance".into()));
    }
    (0..count)
        .map(|_| generate_instance(n, params, rng))
        .collect()
}
