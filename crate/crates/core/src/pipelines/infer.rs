use std::f64::consts::LN_10;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::repair::repair;
use super::wiring::{from_state, max_state, start_state, unfold};
use super::{AlgorithmKind, TrainedPipeline};
use crate::channel::NetworkInstance;
use crate::error::{Error, Result};
use crate::nn::LastInputProbe;
use crate::opt::{
    bisect_log_slope, master_bracket, recover_power, schedule_at, solve_opt_detailed,
};
use crate::physics::{evaluate_plan, isc_features, osm, Schedule, SchedulePlan};

/// Outcome of one timed inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub kind: AlgorithmKind,
    /// Total length over all rounds, seconds.
    pub length_s: f64,
    /// Wall clock of the inference path, seconds.
    pub runtime_s: f64,
    pub repair_rounds: usize,
    pub outage_bits: f64,
    /// Power cap, energy causality and outage all within tolerance.
    pub feasible: bool,
    /// Network forward passes.
    pub model_calls: usize,
    pub master_iterations: usize,
    /// The unfolded EH length left the bracket and was clamped to its end.
    pub clamped: bool,
}

struct Run {
    plan: SchedulePlan,
    repair_rounds: usize,
    model_calls: usize,
    master_iterations: usize,
    clamped: bool,
}

impl Run {
    fn repaired(
        schedule: &Schedule,
        inst: &NetworkInstance,
        p: &TrainedPipeline,
        model_calls: usize,
    ) -> Result<Self> {
        let (plan, repair_rounds) = repair(schedule, inst, &p.params)?;
        Ok(Self {
            plan,
            repair_rounds,
            model_calls,
            master_iterations: 0,
            clamped: false,
        })
    }
}

impl TrainedPipeline {
    /// Schedules `inst` and reports length, wall clock and repair work.
    /// Timing covers the whole inference path; the final feasibility check
    /// is outside it.
    pub fn infer(&self, inst: &NetworkInstance) -> Result<(SchedulePlan, EvalRecord)> {
        inst.validate()?;
        if inst.n_users() != self.n_users {
            return Err(Error::Shape {
                expected: self.n_users,
                got: inst.n_users(),
            });
        }
        let start = Instant::now();
        let run = self.run(inst)?;
        let runtime_s = start.elapsed().as_secs_f64();
        let rep = evaluate_plan(
            &run.plan.rounds,
            inst,
            &self.params,
            &vec![self.params.demand_bits; self.n_users],
        )?;
        let record = EvalRecord {
            kind: self.kind,
            length_s: run.plan.length(),
            runtime_s,
            repair_rounds: run.repair_rounds,
            outage_bits: rep.outage_bits,
            feasible: rep.is_feasible(&self.params),
            model_calls: run.model_calls,
            master_iterations: run.master_iterations,
            clamped: run.clamped,
        };
        Ok((run.plan, record))
    }

    fn run(&self, inst: &NetworkInstance) -> Result<Run> {
        let params = &self.params;
        let solver = &self.config.solver;
        match self.kind {
            AlgorithmKind::Opt => {
                let sol = solve_opt_detailed(inst, params, solver)?;
                Ok(Run {
                    plan: SchedulePlan::single(sol.schedule),
                    repair_rounds: 0,
                    model_calls: 0,
                    master_iterations: sol.iterations,
                    clamped: false,
                })
            }
            AlgorithmKind::Dnn | AlgorithmKind::XaiDnn => {
                let x = self.models[0].normalizer.normalize(&self.raw_inputs(inst));
                let power_w = self.models[0].forward(&x)?;
                let t = self.models[1].forward(&x)?;
                let s = Schedule {
                    eh_s: t[0],
                    it_s: t[1..].to_vec(),
                    power_w,
                };
                Run::repaired(&s, inst, self, 2)
            }
            AlgorithmKind::XaiDnnOsm => {
                let x = self.models[0].normalizer.normalize(&self.raw_inputs(inst));
                let power_w = self.models[0].forward(&x)?;
                let s = osm(
                    &power_w,
                    inst,
                    params,
                    &vec![params.demand_bits; self.n_users],
                )?;
                Run::repaired(&s, inst, self, 1)
            }
            AlgorithmKind::XaiSbDnnOsm => {
                let net = &self.models[0];
                let norm = &net.normalizer;
                let features = isc_features(inst, params)?;
                let bracket = master_bracket(&features, params, solver);
                let last = norm.len() - 1;
                let mut probe = LastInputProbe::new(net, &norm.normalize(&self.raw_inputs(inst)))?;
                let (mut it_s, mut d_it) = (vec![0.0; self.n_users], vec![0.0; self.n_users]);
                let mut calls = 0usize;
                // exact slope of τ0 + Σ τ̂_i(τ0) through the input normalization
                let master = bisect_log_slope(bracket, self.config.sb_rel_tol, |t| {
                    probe.eval(norm.normalize_one(last, t), &mut it_s, &mut d_it);
                    calls += 1;
                    let dz = if norm.log10[last] {
                        1.0 / (t * LN_10)
                    } else {
                        1.0
                    } / norm.std[last];
                    Ok(1.0 + dz * d_it.iter().sum::<f64>())
                })?;
                let tau0 = master.tau0;
                probe.eval(norm.normalize_one(last, tau0), &mut it_s, &mut d_it);
                calls += 1;
                let power_w: Vec<f64> = (0..self.n_users)
                    .map(|i| recover_power(tau0, it_s[i], features.harvest_w[i], params))
                    .collect();
                let s = osm(
                    &power_w,
                    inst,
                    params,
                    &vec![params.demand_bits; self.n_users],
                )?;
                let mut run = Run::repaired(&s, inst, self, calls)?;
                run.master_iterations = master.iterations;
                Ok(run)
            }
            AlgorithmKind::DeepUnfold => {
                let features = isc_features(inst, params)?;
                let bracket = master_bracket(&features, params, solver);
                let h = self.models[0].normalizer.normalize(&self.raw_inputs(inst));
                let v = unfold(&self.models, &h, start_state(bracket));
                let top = max_state(bracket);
                let clamped = !(v <= top);
                let tau0 = from_state(if clamped { top } else { v }, bracket);
                let s = schedule_at(tau0, &features, params, solver)?;
                let mut run = Run::repaired(&s, inst, self, self.models.len())?;
                run.clamped = clamped;
                Ok(run)
            }
        }
    }
}
