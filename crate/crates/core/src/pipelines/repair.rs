use crate::channel::{NetworkInstance, SystemParams};
use crate::error::{Error, Result};
use crate::physics::{
    evaluate_plan, osm, with_effective_powers, Schedule, SchedulePlan, OUTAGE_REL_TOL,
};

/// Smallest predicted power reused by a repair round.
pub const P_MIN_W: f64 = 1e-9;

/// OSM delivers residual demands exactly, so one round suffices; the cap
/// only guards against floating-point pathologies.
const MAX_ROUNDS: usize = 4;

/// Makes a predicted schedule feasible.
///
/// Powers are first lowered to what each user can sustain from its harvested
/// energy. While demand is left undelivered, an OSM round for the residual
/// demands is appended, reusing the predicted powers. A predicted power below
/// [`P_MIN_W`] falls back to `P_max`. Returns the plan and the number of
/// appended rounds.
pub fn repair(
    schedule: &Schedule,
    inst: &NetworkInstance,
    params: &SystemParams,
) -> Result<(SchedulePlan, usize)> {
    let n = inst.n_users();
    if schedule.n_users() != n || schedule.power_w.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: schedule.n_users(),
        });
    }
    let demand = vec![params.demand_bits; n];
    let tol = OUTAGE_REL_TOL * params.demand_bits * n as f64;
    let powers: Vec<f64> = schedule
        .power_w
        .iter()
        .map(|&p| {
            if p.is_finite() && p >= P_MIN_W {
                p.min(params.max_tx_power_w)
            } else {
                params.max_tx_power_w
            }
        })
        .collect();
    let mut rounds = vec![sanitize(with_effective_powers(schedule, inst, params))];
    for _ in 0..=MAX_ROUNDS {
        let rep = evaluate_plan(&rounds, inst, params, &demand)?;
        if rep.outage_bits <= tol {
            let extra = rounds.len() - 1;
            return Ok((SchedulePlan { rounds }, extra));
        }
        let residual: Vec<f64> = demand
            .iter()
            .zip(&rep.delivered_bits)
            .map(|(d, got)| (d - got).max(0.0))
            .collect();
        rounds.push(osm(&powers, inst, params, &residual)?);
    }
    Err(Error::NoConvergence {
        iterations: MAX_ROUNDS,
        lo: 0.0,
        hi: 0.0,
    })
}

/// Non-finite pieces of a prediction become zero.
fn sanitize(mut s: Schedule) -> Schedule {
    let fix = |v: &mut f64| {
        if !v.is_finite() {
            *v = 0.0;
        }
    };
    fix(&mut s.eh_s);
    s.it_s.iter_mut().for_each(fix);
    s.power_w.iter_mut().for_each(fix);
    s
}
