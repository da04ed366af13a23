//! Training objectives of the learned kinds.

use crate::channel::SystemParams;
use crate::nn::{loss_joint, Gradients, LossWeights, MlpModel, Objective, OutageModel, Pieces};
use crate::opt::Bracket;
use crate::physics::{Features, Schedule};

/// Unfolding state of `tau0`: the log of its relative excess over the lower
/// bracket end. Every state maps back strictly inside the feasible region.
pub(crate) fn to_state(tau0: f64, b: Bracket) -> f64 {
    if b.is_empty() {
        return 0.0;
    }
    (tau0 / b.lo - 1.0).ln()
}

pub(crate) fn from_state(v: f64, b: Bracket) -> f64 {
    if b.is_empty() {
        return b.hi;
    }
    b.lo * (1.0 + v.exp())
}

/// State of the bracket midpoint, where unfolding starts.
pub(crate) fn start_state(b: Bracket) -> f64 {
    to_state(0.5 * (b.lo + b.hi), b)
}

/// Largest state inside the bracket.
pub(crate) fn max_state(b: Bracket) -> f64 {
    to_state(b.hi, b)
}

pub(crate) struct ScheduleSample {
    pub x: Vec<f64>,
    pub features: Features,
    pub label: Schedule,
}

/// Power net alone (`models = [power]`, MSE on powers) or power and time
/// nets together (`models = [power, time]`, MSE on every piece plus the
/// outage of the predicted schedule).
pub(crate) struct ScheduleObjective {
    pub samples: Vec<ScheduleSample>,
    pub params: SystemParams,
    pub weights: LossWeights,
    pub with_time: bool,
}

impl Objective for ScheduleObjective {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn sample_loss(&self, models: &[MlpModel], idx: usize, grads: Option<&mut [Gradients]>) -> f64 {
        let s = &self.samples[idx];
        let pt = models[0]
            .forward_trace(&s.x)
            .expect("input width checked at construction");
        let label = Pieces {
            eh_s: Some(s.label.eh_s),
            it_s: Some(s.label.it_s.clone()),
            power_w: Some(s.label.power_w.clone()),
        };
        let (pred, tt, outage) = if self.with_time {
            let tt = models[1]
                .forward_trace(&s.x)
                .expect("input width checked at construction");
            let pred = Pieces {
                eh_s: Some(tt.output[0]),
                it_s: Some(tt.output[1..].to_vec()),
                power_w: Some(pt.output.clone()),
            };
            (pred, Some(tt), OutageModel::PredictedPower)
        } else {
            (
                Pieces {
                    power_w: Some(pt.output.clone()),
                    ..Default::default()
                },
                None,
                OutageModel::None,
            )
        };
        let lv = loss_joint(
            &pred,
            &label,
            &s.features,
            &self.params,
            &self.weights,
            outage,
        );
        if let Some(g) = grads {
            models[0].backward(&pt, &lv.d_power, &mut g[0]);
            if let Some(tt) = tt {
                let mut d = Vec::with_capacity(lv.d_it.len() + 1);
                d.push(lv.d_eh);
                d.extend_from_slice(&lv.d_it);
                models[1].backward(&tt, &d, &mut g[1]);
            }
        }
        lv.total
    }
}

pub(crate) struct SbSample {
    pub x: Vec<f64>,
    pub instance: usize,
    pub tau0: f64,
    pub label: Vec<f64>,
}

/// IT lengths at a given EH length: MSE plus the outage left when each user
/// spends its harvest over the predicted slot.
pub(crate) struct SbObjective {
    pub samples: Vec<SbSample>,
    pub features: Vec<Features>,
    pub params: SystemParams,
    pub weights: LossWeights,
}

impl Objective for SbObjective {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn sample_loss(&self, models: &[MlpModel], idx: usize, grads: Option<&mut [Gradients]>) -> f64 {
        let s = &self.samples[idx];
        let tr = models[0]
            .forward_trace(&s.x)
            .expect("input width checked at construction");
        let pred = Pieces {
            it_s: Some(tr.output.clone()),
            ..Default::default()
        };
        let label = Pieces {
            it_s: Some(s.label.clone()),
            ..Default::default()
        };
        let f = &self.features[s.instance];
        let lv = loss_joint(
            &pred,
            &label,
            f,
            &self.params,
            &self.weights,
            OutageModel::FixedEh(s.tau0),
        );
        if let Some(g) = grads {
            models[0].backward(&tr, &lv.d_it, &mut g[0]);
        }
        lv.total
    }
}

pub(crate) struct UnfoldSample {
    /// Normalized instance inputs; the state is appended per block.
    pub h: Vec<f64>,
    pub start: f64,
    pub target: f64,
}

/// Blocks applied in sequence, `v ← v + block_t(h, v)`, with squared error
/// of the final state.
pub(crate) struct UnfoldObjective {
    pub samples: Vec<UnfoldSample>,
}

impl Objective for UnfoldObjective {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn sample_loss(&self, models: &[MlpModel], idx: usize, grads: Option<&mut [Gradients]>) -> f64 {
        let s = &self.samples[idx];
        let mut u = s.start;
        let mut x = s.h.clone();
        x.push(u);
        let last = x.len() - 1;
        let mut traces = Vec::with_capacity(models.len());
        for block in models {
            x[last] = u;
            let tr = block
                .forward_trace(&x)
                .expect("input width checked at construction");
            u += tr.output[0];
            traces.push(tr);
        }
        let r = u - s.target;
        if let Some(g) = grads {
            let mut du = 2.0 * r;
            for (t, tr) in traces.iter().enumerate().rev() {
                let dx = models[t].backward(tr, &[du], &mut g[t]);
                du += dx[last];
            }
        }
        r * r
    }
}

/// Runs the unfolding blocks from `start`. Returns the final state before
/// any clamping.
pub(crate) fn unfold(blocks: &[MlpModel], h: &[f64], start: f64) -> f64 {
    let mut x = h.to_vec();
    x.push(start);
    let last = x.len() - 1;
    let mut u = start;
    for block in blocks {
        x[last] = u;
        u += block.forward(&x).expect("input width checked at load")[0];
    }
    u
}
