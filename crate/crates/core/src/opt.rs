//! Exact bi-level solver.
//!
//! For a fixed EH length `τ0`, each user's shortest IT slot solves a scalar
//! equation. The master problem `T(τ0) = τ0 + Σ τ_i(τ0)` is convex in `τ0`
//! and is minimised by bisection on the sign of its derivative.

use serde::{Deserialize, Serialize};

use crate::channel::{NetworkInstance, SystemParams};
use crate::error::{Error, Result};
use crate::physics::{isc_features, Features, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Relative stopping tolerance of the scalar root and of the bisection.
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Relative inflation of the lower bisection bound above the feasibility limit.
    pub bracket_eps: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            max_iter: 200,
            bracket_eps: 1e-9,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || self.max_iter < 8 || !(self.bracket_eps >= 0.0) {
            return Err(Error::Config(format!("invalid solver config {self:?}")));
        }
        Ok(())
    }
}

/// Relative step of the central-difference derivative of `T(τ0)`.
const DERIV_STEP: f64 = 1e-6;
const DERIV_FLOOR: f64 = 1e-11;

/// Solves `τ·log2(1 + c/τ) = q` for `τ > 0`, with `q = demand/bandwidth`.
///
/// Substituting `x = c/τ` gives `ln(1+x) = r·x` with `r = q·ln2/c ∈ (0, 1)`,
/// whose positive root lies in `[(1-r)/r, 1/r²]`; `φ(x) = ln(1+x) - r·x` is
/// concave, so Newton from the right end converges monotonically and any
/// excursion is caught by the bracket.
pub fn solve_tau(c: f64, demand_bits: f64, bandwidth: f64, cfg: &SolverConfig) -> Result<f64> {
    let q = demand_bits / bandwidth;
    let r = q * std::f64::consts::LN_2 / c;
    if !(c > 0.0) || !(r < 1.0) {
        return Err(Error::Infeasible(format!(
            "subproblem: asymptotic capacity {:e} s does not exceed demand {q:e} s",
            c / std::f64::consts::LN_2
        )));
    }
    if !(q > 0.0) {
        return Ok(0.0);
    }
    let phi = |x: f64| x.ln_1p() - r * x;
    let dphi = |x: f64| 1.0 / (1.0 + x) - r;

    let mut lo = (1.0 - r) / r;
    let mut hi = 1.0 / (r * r);
    let mut x = hi;
    for _ in 0..cfg.max_iter {
        let f = phi(x);
        if f == 0.0 {
            return Ok(c / x);
        }
        if f > 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let step = f / dphi(x);
        let mut next = x - step;
        if !(next > lo && next < hi) || !step.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let done = (next - x).abs() <= cfg.rel_tol * next || hi - lo <= f64::EPSILON * hi;
        x = next;
        if done {
            return Ok(c / x);
        }
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iter,
        lo: c / hi,
        hi: c / lo,
    })
}

/// Lowest EH length at which user `i` can meet its demand at all.
pub fn feasibility_bound(alpha: f64, params: &SystemParams) -> f64 {
    params.demand_bits * std::f64::consts::LN_2 / (params.bandwidth_hz * alpha)
}

/// Optimal IT length of user `i` for EH length `tau0`.
pub fn it_duration(
    tau0: f64,
    features: &Features,
    i: usize,
    params: &SystemParams,
    cfg: &SolverConfig,
) -> Result<f64> {
    if tau0 >= features.theta[i] {
        return Ok(features.beta[i]);
    }
    solve_tau(
        features.alpha[i] * tau0,
        params.demand_bits,
        params.bandwidth_hz,
        cfg,
    )
}

/// Master objective `T(τ0) = τ0 + Σ_i τ_i(τ0)`.
pub fn total_length(
    tau0: f64,
    features: &Features,
    params: &SystemParams,
    cfg: &SolverConfig,
) -> Result<f64> {
    let mut taus = (0..features.n_users())
        .map(|i| it_duration(tau0, features, i, params, cfg))
        .collect::<Result<Vec<f64>>>()?;
    Ok(tau0 + sum_sorted(&mut taus))
}

/// Sum in ascending order, so the result does not depend on user order.
pub(crate) fn sum_sorted(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Search interval of the master bisection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
}

impl Bracket {
    pub fn width(&self) -> f64 {
        (self.hi - self.lo).max(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.lo >= self.hi
    }
}

/// `[(1+ε)·max_i bound_i, max_i θ_i]`: the optimum lies in it, since past
/// `max θ` every user is capped and `T` grows with slope one.
pub fn master_bracket(features: &Features, params: &SystemParams, cfg: &SolverConfig) -> Bracket {
    let lo = features
        .alpha
        .iter()
        .map(|&a| feasibility_bound(a, params))
        .fold(0.0, f64::max)
        * (1.0 + cfg.bracket_eps);
    let hi = features.theta.iter().copied().fold(0.0, f64::max);
    Bracket { lo, hi }
}

/// Outcome of a bisection over the EH length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MasterSolution {
    pub tau0: f64,
    pub iterations: usize,
}

/// Bisection on the sign of the central-difference derivative of a convex
/// objective over `bracket`. `objective` may fail below the feasibility limit;
/// the derivative then falls back to a forward difference.
pub fn bisect_master<F>(
    bracket: Bracket,
    cfg: &SolverConfig,
    mut objective: F,
) -> Result<MasterSolution>
where
    F: FnMut(f64) -> Result<f64>,
{
    // The step shrinks with the bracket so that kinks of T at the θ_i do not
    // bias the result by more than the floor.
    bisect_slope(bracket, cfg, |t, width| {
        let h = (DERIV_STEP * t).min(0.25 * width).max(DERIV_FLOOR * t);
        let right = objective(t + h)?;
        match objective(t - h) {
            Ok(left) => Ok((right - left) / (2.0 * h)),
            Err(Error::Infeasible(_)) => Ok((right - objective(t)?) / h),
            Err(e) => Err(e),
        }
    })
}

/// Bisection on the sign of a slope oracle `slope(τ0, bracket width)`.
fn bisect_slope<F>(bracket: Bracket, cfg: &SolverConfig, mut slope: F) -> Result<MasterSolution>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    if bracket.is_empty() {
        return Ok(MasterSolution {
            tau0: bracket.hi,
            iterations: 0,
        });
    }
    if slope(bracket.lo, f64::INFINITY)? >= 0.0 {
        return Ok(MasterSolution {
            tau0: bracket.lo,
            iterations: 1,
        });
    }
    let (mut a, mut b) = (bracket.lo, bracket.hi);
    for it in 1..=cfg.max_iter {
        if b - a <= cfg.rel_tol * b {
            return Ok(MasterSolution {
                tau0: 0.5 * (a + b),
                iterations: it,
            });
        }
        let m = 0.5 * (a + b);
        if slope(m, b - a)? > 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iter,
        lo: a,
        hi: b,
    })
}

/// Bisection in `ln τ0` on the sign of `slope(τ0)`, stopping once the
/// interval is `rel_tol` of the initial log-width. Takes at most
/// `ceil(log2(1/rel_tol)) + 1` iterations, one slope call each.
pub fn bisect_log_slope<F>(bracket: Bracket, rel_tol: f64, mut slope: F) -> Result<MasterSolution>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::Config(format!(
            "bisection tolerance {rel_tol} outside (0, 1)"
        )));
    }
    if bracket.is_empty() {
        return Ok(MasterSolution {
            tau0: bracket.hi,
            iterations: 0,
        });
    }
    if slope(bracket.lo)? >= 0.0 {
        return Ok(MasterSolution {
            tau0: bracket.lo,
            iterations: 1,
        });
    }
    let (mut a, mut b) = (bracket.lo.ln(), bracket.hi.ln());
    let stop = rel_tol * (b - a);
    let mut it = 1;
    while b - a > stop {
        let m = 0.5 * (a + b);
        if slope(m.exp())? > 0.0 {
            b = m;
        } else {
            a = m;
        }
        it += 1;
    }
    Ok(MasterSolution {
        tau0: (0.5 * (a + b)).exp(),
        iterations: it,
    })
}

/// Full solution with the number of master iterations used.
#[derive(Debug, Clone, PartialEq)]
pub struct OptSolution {
    pub schedule: Schedule,
    pub iterations: usize,
}

/// Optimal schedule of `inst`.
pub fn solve_opt(
    inst: &NetworkInstance,
    params: &SystemParams,
    cfg: &SolverConfig,
) -> Result<Schedule> {
    solve_opt_detailed(inst, params, cfg).map(|s| s.schedule)
}

pub fn solve_opt_detailed(
    inst: &NetworkInstance,
    params: &SystemParams,
    cfg: &SolverConfig,
) -> Result<OptSolution> {
    let n = inst.n_users();
    if n == 0 {
        return Ok(OptSolution {
            schedule: Schedule::zeros(0),
            iterations: 0,
        });
    }
    let features = isc_features(inst, params)?;
    let bracket = master_bracket(&features, params, cfg);
    let master = bisect_master(bracket, cfg, |t| total_length(t, &features, params, cfg))?;
    let schedule = schedule_at(master.tau0, &features, params, cfg)?;
    Ok(OptSolution {
        schedule,
        iterations: master.iterations,
    })
}

/// Exact IT lengths at `tau0` and the powers that spend each user's energy,
/// capped at `P_max`.
pub fn schedule_at(
    tau0: f64,
    features: &Features,
    params: &SystemParams,
    cfg: &SolverConfig,
) -> Result<Schedule> {
    let n = features.n_users();
    let mut s = Schedule {
        eh_s: tau0,
        it_s: Vec::with_capacity(n),
        power_w: Vec::with_capacity(n),
    };
    for i in 0..n {
        let tau = it_duration(tau0, features, i, params, cfg)?;
        s.it_s.push(tau);
        s.power_w
            .push(recover_power(tau0, tau, features.harvest_w[i], params));
    }
    Ok(s)
}

/// `min(P_max, E·τ0/τ)`.
pub fn recover_power(tau0: f64, tau: f64, harvest_w: f64, params: &SystemParams) -> f64 {
    if !(tau > 0.0) {
        return 0.0;
    }
    params.max_tx_power_w.min(harvest_w * tau0 / tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{evaluate, osm, schedule_length};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    /// Scalar bisection on `τ·log2(1+c/τ) - q` in the τ domain, run to the
    /// last representable bracket. Independent of the Newton path.
    fn oracle_tau(c: f64, q: f64) -> f64 {
        let g = |t: f64| t * (c / t).ln_1p() / std::f64::consts::LN_2 - q;
        let (mut a, mut b) = (q * 1e-9, q);
        while g(b) < 0.0 {
            b *= 2.0;
        }
        for _ in 0..2000 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if g(m) < 0.0 {
                a = m
            } else {
                b = m
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn solve_tau_unit_ratio() {
        let t = solve_tau(5e-5, 50.0, 1e6, &cfg()).unwrap();
        assert!((t / 5e-5 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn solve_tau_constructed_inverse() {
        // c = 3τ, q = 2τ ⇒ τ·log2(4) = 2τ
        let tau = 7.3e-6;
        let t = solve_tau(3.0 * tau, 2.0 * tau * 1e6, 1e6, &cfg()).unwrap();
        assert!((t / tau - 1.0).abs() < 1e-12);
    }

    #[test]
    fn solve_tau_matches_bisection_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let q = 10f64.powf(rng.random_range(-7.0..-3.0));
            // r = q ln2 / c spread over (1e-4, 0.999)
            let r = 10f64.powf(rng.random_range(-4.0..-0.0005));
            let c = q * std::f64::consts::LN_2 / r;
            let t = solve_tau(c, q * 1e6, 1e6, &cfg()).unwrap();
            let o = oracle_tau(c, q);
            assert!(
                (t / o - 1.0).abs() < 1e-9,
                "c={c:e} q={q:e}: {t:e} vs {o:e}"
            );
        }
    }

    #[test]
    fn solve_tau_infeasible() {
        // c/ln2 == q exactly at the limit
        let q = 5e-5;
        let c = q * std::f64::consts::LN_2;
        assert!(matches!(
            solve_tau(c, q * 1e6, 1e6, &cfg()),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            solve_tau(0.5 * c, q * 1e6, 1e6, &cfg()),
            Err(Error::Infeasible(_))
        ));
    }

    fn random_features(seed: u64, n: usize) -> (NetworkInstance, Features, SystemParams) {
        let p = SystemParams::default();
        let inst =
            crate::channel::generate_instance(n, &p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let f = isc_features(&inst, &p).unwrap();
        (inst, f, p)
    }

    #[test]
    fn it_duration_branches() {
        let (_, f, p) = random_features(1, 3);
        for i in 0..3 {
            let at = it_duration(f.theta[i], &f, i, &p, &cfg()).unwrap();
            assert_eq!(at, f.beta[i]);
            // left limit agrees with the capped branch
            let just_below = it_duration(f.theta[i] * (1.0 - 1e-12), &f, i, &p, &cfg()).unwrap();
            assert!((just_below / f.beta[i] - 1.0).abs() < 1e-9);
            assert_eq!(
                it_duration(2.0 * f.theta[i], &f, i, &p, &cfg()).unwrap(),
                f.beta[i]
            );
            let t0 = 0.9 * f.theta[i];
            let t = it_duration(t0, &f, i, &p, &cfg()).unwrap();
            assert!(t > f.beta[i]);
            let power = f.harvest_w[i] * t0 / t;
            assert!(power < p.max_tx_power_w);
            let o = oracle_tau(f.alpha[i] * t0, p.demand_bits / p.bandwidth_hz);
            assert!((t / o - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn it_duration_infeasible_below_bound() {
        let (_, f, p) = random_features(2, 2);
        let b = feasibility_bound(f.alpha[0], &p);
        assert!(it_duration(0.99 * b, &f, 0, &p, &cfg()).is_err());
        assert!(it_duration(1.01 * b, &f, 0, &p, &cfg()).is_ok());
    }

    #[test]
    fn total_length_single_user_capped() {
        let (_, f, p) = random_features(3, 1);
        let t0 = 1.5 * f.theta[0];
        assert!((total_length(t0, &f, &p, &cfg()).unwrap() - (t0 + f.beta[0])).abs() < 1e-18);
    }

    #[test]
    fn total_length_blows_up_near_bound() {
        let (_, f, p) = random_features(3, 4);
        let br = master_bracket(&f, &p, &cfg());
        let near = total_length(br.lo, &f, &p, &cfg()).unwrap();
        let mid = total_length(0.5 * (br.lo + br.hi), &f, &p, &cfg()).unwrap();
        assert!(near > 100.0 * mid, "{near:e} vs {mid:e}");
    }

    /// Log-spaced grid minimum of `T` over the bracket, with the bisection
    /// subproblem oracle.
    fn grid_min(f: &Features, p: &SystemParams, points: usize) -> (f64, f64) {
        let br = master_bracket(f, p, &cfg());
        let q = p.demand_bits / p.bandwidth_hz;
        let ratio = br.hi / br.lo;
        (1..=points)
            .map(|k| {
                let t0 = br.lo * ratio.powf(k as f64 / points as f64);
                let len: f64 = (0..f.n_users())
                    .map(|i| {
                        if t0 >= f.theta[i] {
                            f.beta[i]
                        } else {
                            oracle_tau(f.alpha[i] * t0, q)
                        }
                    })
                    .sum();
                (t0 + len, t0)
            })
            .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a })
    }

    #[test]
    fn single_user_at_unit_harvest_sits_on_theta_at_low_snr() {
        // With E = P_max, T'(θ⁻) = 1 - s/((1+s)ln(1+s) - s) for s = P_max·γ,
        // which is negative only below s ≈ 2.51.
        let p = SystemParams::default();
        let dn = p.max_tx_power_w / p.harvest_scale_w();
        for snr in [0.5, 1.0, 2.0] {
            let up = snr / p.max_tx_power_w * p.noise_power_w();
            let inst = NetworkInstance::new(vec![up], vec![dn]).unwrap();
            let f = isc_features(&inst, &p).unwrap();
            let s = solve_opt(&inst, &p, &cfg()).unwrap();
            assert!(
                (s.eh_s / f.theta[0] - 1.0).abs() < 1e-9,
                "{} vs {}",
                s.eh_s,
                f.theta[0]
            );
            assert!((s.it_s[0] / f.beta[0] - 1.0).abs() < 1e-9);
            assert!((s.power_w[0] / p.max_tx_power_w - 1.0).abs() < 1e-9);
            let (glen, gt0) = grid_min(&f, &p, 20_000);
            assert!((gt0 / f.theta[0] - 1.0).abs() < 1e-3);
            assert!((schedule_length(&s) / glen - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_user_at_unit_harvest_is_interior_at_high_snr() {
        let p = SystemParams::default();
        let dn = p.max_tx_power_w / p.harvest_scale_w();
        for snr in [5.0, 100.0] {
            let up = snr / p.max_tx_power_w * p.noise_power_w();
            let inst = NetworkInstance::new(vec![up], vec![dn]).unwrap();
            let f = isc_features(&inst, &p).unwrap();
            let s = solve_opt(&inst, &p, &cfg()).unwrap();
            assert!(s.eh_s < 0.99 * f.theta[0]);
            assert!(s.power_w[0] < p.max_tx_power_w);
            let (glen, _) = grid_min(&f, &p, 100_000);
            let len = schedule_length(&s);
            assert!(len <= glen * (1.0 + 1e-12));
            assert!((len / glen - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn random_instances_match_grid_oracle() {
        for seed in 0..5 {
            let (inst, f, p) = random_features(500 + seed, 5);
            let s = solve_opt(&inst, &p, &cfg()).unwrap();
            let (glen, _) = grid_min(&f, &p, 100_000);
            assert!(
                (schedule_length(&s) / glen - 1.0).abs() < 1e-6,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn opt_is_permutation_equivariant() {
        let (inst, _, p) = random_features(17, 5);
        let perm = [3, 0, 4, 1, 2];
        let a = solve_opt(&inst, &p, &cfg()).unwrap();
        let b = solve_opt(&inst.permuted(&perm), &p, &cfg()).unwrap();
        assert_eq!(a.eh_s, b.eh_s);
        assert_eq!(a.permuted(&perm), b);
    }

    #[test]
    fn opt_round_trips_through_osm() {
        for seed in 0..50 {
            let (inst, _, p) = random_features(100 + seed, 1 + (seed as usize % 6));
            let s = solve_opt(&inst, &p, &cfg()).unwrap();
            let d = vec![p.demand_bits; inst.n_users()];
            let back = osm(&s.power_w, &inst, &p, &d).unwrap();
            assert!((back.eh_s / s.eh_s - 1.0).abs() < 1e-9, "seed {seed}");
            for (x, y) in back.it_s.iter().zip(&s.it_s) {
                assert!((x / y - 1.0).abs() < 1e-9);
            }
            let r = evaluate(&s, &inst, &p, &d).unwrap();
            assert!(r.is_feasible(&p), "seed {seed}: {r:?}");
            assert!((schedule_length(&s) - (s.eh_s + s.it_s.iter().sum::<f64>())).abs() == 0.0);
        }
    }

    #[test]
    fn empty_instance() {
        let p = SystemParams::default();
        let inst = NetworkInstance {
            gain_up: vec![],
            gain_dn: vec![],
            dist_m: vec![],
        };
        let s = solve_opt(&inst, &p, &cfg()).unwrap();
        assert_eq!(schedule_length(&s), 0.0);
    }

    #[test]
    fn empty_bracket_returns_upper_end() {
        let b = Bracket { lo: 2.0, hi: 1.0 };
        let m = bisect_master(b, &cfg(), Ok).unwrap();
        assert_eq!(m.tau0, 1.0);
    }

    #[test]
    fn increasing_objective_returns_lower_end() {
        let b = Bracket { lo: 1.0, hi: 2.0 };
        let m = bisect_master(b, &cfg(), |t| Ok(t * t)).unwrap();
        assert_eq!(m.tau0, 1.0);
    }

    #[test]
    fn bisection_iteration_bound() {
        let b = Bracket { lo: 1e-6, hi: 3e-4 };
        let m = bisect_master(b, &cfg(), |t| Ok((t - 1e-4).powi(2))).unwrap();
        assert!((m.tau0 / 1e-4 - 1.0).abs() < 1e-9);
        assert!(m.iterations <= 50);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(SolverConfig {
            max_iter: 4,
            ..cfg()
        }
        .validate()
        .is_err());
        assert!(SolverConfig {
            rel_tol: 0.0,
            ..cfg()
        }
        .validate()
        .is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn it_duration_is_non_increasing(seed in 0u64..100_000) {
            let (_, f, p) = random_features(seed, 1);
            let br = master_bracket(&f, &p, &cfg());
            let mut prev = f64::INFINITY;
            for k in 0..200 {
                let t0 = br.lo + (1.2 * br.hi - br.lo) * k as f64 / 199.0;
                let t = it_duration(t0, &f, 0, &p, &cfg()).unwrap();
                proptest::prop_assert!(t <= prev * (1.0 + 1e-12));
                if t0 < f.theta[0] && k > 0 {
                    proptest::prop_assert!(t < prev);
                }
                prev = t;
            }
        }
    }

    #[test]
    fn log_bisection_meets_its_iteration_bound() {
        let b = Bracket { lo: 1e-6, hi: 1e-2 };
        for target in [1.5e-6, 3e-5, 9e-3] {
            let m = bisect_log_slope(b, 1e-4, |t| Ok(t - target)).unwrap();
            assert!(m.iterations <= 15, "{}", m.iterations);
            assert!((m.tau0.ln() - target.ln()).abs() <= 1e-4 * (b.hi / b.lo).ln());
        }
        assert_eq!(
            bisect_log_slope(b, 1e-4, |_| Ok(1.0)).unwrap(),
            MasterSolution {
                tau0: 1e-6,
                iterations: 1
            }
        );
        assert!(bisect_log_slope(b, 0.0, |_| Ok(1.0)).is_err());
    }
}
