//! The solver ladder: the exact solver, pure networks, and hybrids that keep
//! parts of the optimization structure.
//!
//! | kind | learned part | rest |
//! |---|---|---|
//! | `OPT` | none | bisection master + exact subproblems |
//! | `DNN` | powers, EH and IT lengths from raw gains | repair |
//! | `XAI_DNN` | same, from MI-selected features | repair |
//! | `XAI_DNN_OSM` | powers from selected features | output set mapping |
//! | `XAI_SB_DNN_OSM` | IT lengths given the EH length | bisection master, power recovery, output set mapping |
//! | `DEEP_UNFOLD` | `T` blocks refining the EH length | exact subproblems |

mod bundle;
mod infer;
mod repair;
mod wiring;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{NetworkInstance, SystemParams};
use crate::error::{Error, Result};
use crate::nn::{
    hidden_layers, train, HeadKind, HeadSpec, MlpModel, MlpSpec, Normalizer, TrainConfig,
    TrainReport,
};
use crate::opt::{it_duration, master_bracket, Bracket, SolverConfig};
use crate::physics::{isc_features, schedule_length, Features, Schedule};
use crate::xai::{select_features, FeatureCatalog, FeatureKind, DEFAULT_BINS};

pub use bundle::{params_hash, report_csv, Manifest, BUNDLE_FORMAT, BUNDLE_VERSION};
pub use infer::EvalRecord;
pub use repair::{repair, P_MIN_W};
use wiring::{
    start_state, to_state, SbObjective, SbSample, ScheduleObjective, ScheduleSample,
    UnfoldObjective, UnfoldSample,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AlgorithmKind {
    #[serde(rename = "OPT")]
    Opt,
    #[serde(rename = "DNN")]
    Dnn,
    #[serde(rename = "XAI_DNN")]
    XaiDnn,
    #[serde(rename = "XAI_DNN_OSM")]
    XaiDnnOsm,
    #[serde(rename = "XAI_SB_DNN_OSM")]
    XaiSbDnnOsm,
    #[serde(rename = "DEEP_UNFOLD")]
    DeepUnfold,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 6] = [
        AlgorithmKind::Opt,
        AlgorithmKind::Dnn,
        AlgorithmKind::XaiDnn,
        AlgorithmKind::XaiDnnOsm,
        AlgorithmKind::XaiSbDnnOsm,
        AlgorithmKind::DeepUnfold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Opt => "OPT",
            AlgorithmKind::Dnn => "DNN",
            AlgorithmKind::XaiDnn => "XAI_DNN",
            AlgorithmKind::XaiDnnOsm => "XAI_DNN_OSM",
            AlgorithmKind::XaiSbDnnOsm => "XAI_SB_DNN_OSM",
            AlgorithmKind::DeepUnfold => "DEEP_UNFOLD",
        }
    }

    /// Whether the kind's inputs come from a feature catalog.
    pub fn uses_catalog(self) -> bool {
        !matches!(self, AlgorithmKind::Opt | AlgorithmKind::Dnn)
    }

    pub fn is_learned(self) -> bool {
        self != AlgorithmKind::Opt
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown algorithm kind {s:?}")))
    }
}

/// `floor(n/2) + 1`.
pub fn unfold_depth(n_users: usize) -> usize {
    n_users / 2 + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub solver: SolverConfig,
    /// Feature kinds kept per user by the MI ranking.
    pub xai_budget: usize,
    pub xai_bins: usize,
    /// EH lengths drawn per training instance for the SB-DNN.
    pub sb_draws: usize,
    pub sb_sampling: Sampling,
    /// Stopping width of the SB-DNN master bisection, relative to the
    /// log-width of the bracket.
    pub sb_rel_tol: f64,
    /// Unfolding depth; `floor(n/2) + 1` when unset.
    pub unfold_blocks: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            solver: SolverConfig::default(),
            xai_budget: 3,
            xai_bins: DEFAULT_BINS,
            sb_draws: 10,
            sb_sampling: Sampling::LogUniform,
            sb_rel_tol: 1e-3,
            unfold_blocks: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.solver.validate()?;
        // the SB-DNN master must stay within 50 iterations
        let sb_tol_ok = self.sb_rel_tol < 1.0 && self.sb_rel_tol >= 2f64.powi(-49);
        if self.xai_bins < 2 || self.sb_draws == 0 || self.unfold_blocks == Some(0) || !sb_tol_ok {
            return Err(Error::Config(format!("invalid pipeline config {self:?}")));
        }
        Ok(())
    }
}

/// Density of the EH lengths drawn over the master bracket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Uniform,
    /// Uniform in `ln τ0`; the optimum usually sits within a small factor of
    /// the lower end while the upper end can be decades away.
    LogUniform,
}

impl Sampling {
    fn draw<R: Rng + ?Sized>(self, b: Bracket, rng: &mut R) -> f64 {
        if b.is_empty() {
            return b.hi;
        }
        match self {
            Sampling::Uniform => rng.random_range(b.lo..=b.hi),
            Sampling::LogUniform => b.lo * (b.hi / b.lo).powf(rng.random_range(0.0..=1.0)),
        }
    }
}

/// Change of the unfolding state produced by a block at unit pre-activation.
const UNFOLD_STEP_SCALE: f64 = 0.5;

/// One OPT-labeled instance.
pub type Labeled = (NetworkInstance, Schedule);

/// One SB training draw: input row, instance index, sampled `τ0` and targets.
type SbDraw = (Vec<f64>, usize, f64, Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPipeline {
    pub kind: AlgorithmKind,
    pub n_users: usize,
    pub params: SystemParams,
    pub config: PipelineConfig,
    pub catalog: Option<FeatureCatalog>,
    /// `[power, time]`, `[power]`, `[sb]` or the unfolding blocks, by kind.
    pub models: Vec<MlpModel>,
    pub reports: Vec<TrainReport>,
}

impl TrainedPipeline {
    /// The passthrough pipeline around the exact solver.
    pub fn opt(n_users: usize, params: &SystemParams, solver: &SolverConfig) -> Self {
        Self {
            kind: AlgorithmKind::Opt,
            n_users,
            params: *params,
            config: PipelineConfig {
                solver: *solver,
                ..Default::default()
            },
            catalog: None,
            models: Vec::new(),
            reports: Vec::new(),
        }
    }

    /// Unnormalized inputs for `inst`, without the SB-DNN/unfolding state slot.
    pub fn raw_inputs(&self, inst: &NetworkInstance) -> Vec<f64> {
        match &self.catalog {
            Some(c) => c.inputs(inst, &self.params),
            None => inst.gain_up.iter().chain(&inst.gain_dn).copied().collect(),
        }
    }

    /// Width of the instance part of the model inputs.
    pub fn instance_width(&self) -> usize {
        match &self.catalog {
            Some(c) => c.width(self.n_users),
            None => 2 * self.n_users,
        }
    }

    /// Checks the wiring invariants of the kind.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_users;
        let bad = |msg: String| Err(Error::Config(format!("{} pipeline: {msg}", self.kind)));
        if self.kind.uses_catalog() != self.catalog.is_some() {
            return bad("catalog presence does not match the kind".into());
        }
        let w = self.instance_width();
        let expect: Vec<(usize, usize)> = match self.kind {
            AlgorithmKind::Opt => vec![],
            AlgorithmKind::Dnn | AlgorithmKind::XaiDnn => vec![(w, n), (w, n + 1)],
            AlgorithmKind::XaiDnnOsm => vec![(w, n)],
            AlgorithmKind::XaiSbDnnOsm => vec![(w + 1, n)],
            AlgorithmKind::DeepUnfold => {
                let t = self.config.unfold_blocks.unwrap_or_else(|| unfold_depth(n));
                vec![(w + 1, 1); t]
            }
        };
        if self.models.len() != expect.len() {
            return bad(format!(
                "expected {} models, found {}",
                expect.len(),
                self.models.len()
            ));
        }
        for (m, &(i, o)) in self.models.iter().zip(&expect) {
            m.validate()?;
            if m.spec.input_size() != i || m.spec.output_size() != o {
                return bad(format!(
                    "model is {}→{}, expected {i}→{o}",
                    m.spec.input_size(),
                    m.spec.output_size()
                ));
            }
        }
        Ok(())
    }
}

fn check_widths(sets: &[&[Labeled]]) -> Result<usize> {
    let first = sets.iter().flat_map(|s| s.iter()).next();
    let Some((inst, _)) = first else {
        return Err(Error::Domain(
            "training and validation sets must be non-empty".into(),
        ));
    };
    let n = inst.n_users();
    for (inst, label) in sets.iter().flat_map(|s| s.iter()) {
        if inst.n_users() != n {
            return Err(Error::Shape {
                expected: n,
                got: inst.n_users(),
            });
        }
        if label.it_s.len() != n || label.power_w.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: label.it_s.len(),
            });
        }
    }
    Ok(n)
}

fn column_means(rows: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for r in rows {
        if sum.is_empty() {
            sum = vec![0.0; r.len()];
        }
        sum.iter_mut().zip(&r).for_each(|(s, v)| *s += v);
        count += 1;
    }
    sum.iter().map(|s| s / count.max(1) as f64).collect()
}

/// Trains the networks of `kind` on OPT-labeled instances.
pub fn train_pipeline(
    kind: AlgorithmKind,
    train_set: &[Labeled],
    val_set: &[Labeled],
    params: &SystemParams,
    cfg: &PipelineConfig,
) -> Result<TrainedPipeline> {
    params.validate()?;
    cfg.validate()?;
    let n = check_widths(&[train_set, val_set])?;
    let mut p = TrainedPipeline::opt(n, params, &cfg.solver);
    p.kind = kind;
    p.config = cfg.clone();
    if kind == AlgorithmKind::Opt {
        return Ok(p);
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Domain(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if kind.uses_catalog() {
        let insts: Vec<NetworkInstance> = train_set.iter().map(|(i, _)| i.clone()).collect();
        let lengths: Vec<f64> = train_set.iter().map(|(_, s)| schedule_length(s)).collect();
        p.catalog = Some(select_features(
            &insts,
            &lengths,
            &FeatureKind::ALL,
            cfg.xai_budget,
            cfg.xai_bins,
            params,
        )?);
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut draw_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    draw_rng.set_stream(1);
    let width = p.instance_width();
    let raw =
        |set: &[Labeled]| -> Vec<Vec<f64>> { set.iter().map(|(i, _)| p.raw_inputs(i)).collect() };
    let (raw_tr, raw_va) = (raw(train_set), raw(val_set));
    let features = |set: &[Labeled]| -> Result<Vec<Features>> {
        set.iter().map(|(i, _)| isc_features(i, params)).collect()
    };
    let (f_tr, f_va) = (features(train_set)?, features(val_set)?);
    let hidden = hidden_layers(n);

    match kind {
        AlgorithmKind::Opt => unreachable!(),
        AlgorithmKind::Dnn | AlgorithmKind::XaiDnn | AlgorithmKind::XaiDnnOsm => {
            let with_time = kind != AlgorithmKind::XaiDnnOsm;
            let norm = Normalizer::fit(raw_tr.iter().map(Vec::as_slice), vec![true; width])?;
            let power = MlpSpec::new(
                width,
                &hidden,
                vec![HeadSpec::uniform(HeadKind::Power, n, params.max_tx_power_w)],
            )?;
            p.models
                .push(MlpModel::init(power, norm.clone(), &mut init_rng)?);
            if with_time {
                let scale = column_means(train_set.iter().map(|(_, s)| {
                    std::iter::once(s.eh_s)
                        .chain(s.it_s.iter().copied())
                        .collect()
                }));
                let time =
                    MlpSpec::new(width, &hidden, vec![HeadSpec::new(HeadKind::Time, scale)])?;
                p.models
                    .push(MlpModel::init(time, norm.clone(), &mut init_rng)?);
            }
            let objective =
                |set: &[Labeled], raw: &[Vec<f64>], f: Vec<Features>| ScheduleObjective {
                    samples: set
                        .iter()
                        .zip(raw)
                        .zip(f)
                        .map(|(((_, label), r), features)| ScheduleSample {
                            x: norm.normalize(r),
                            features,
                            label: label.clone(),
                        })
                        .collect(),
                    params: *params,
                    weights: cfg.train.loss,
                    with_time,
                };
            let tr = objective(train_set, &raw_tr, f_tr);
            let va = objective(val_set, &raw_va, f_va);
            p.reports.push(train(&mut p.models, &tr, &va, &cfg.train)?);
        }
        AlgorithmKind::XaiSbDnnOsm => {
            let draws = |set: &[Labeled],
                         raw: &[Vec<f64>],
                         f: &[Features],
                         rng: &mut ChaCha8Rng|
             -> Result<Vec<SbDraw>> {
                let mut out = Vec::with_capacity(set.len() * cfg.sb_draws);
                for (k, features) in f.iter().enumerate() {
                    let b = master_bracket(features, params, &cfg.solver);
                    for _ in 0..cfg.sb_draws {
                        let tau0 = cfg.sb_sampling.draw(b, rng);
                        let label = (0..n)
                            .map(|i| it_duration(tau0, features, i, params, &cfg.solver))
                            .collect::<Result<Vec<_>>>()?;
                        let mut x = raw[k].clone();
                        x.push(tau0);
                        out.push((x, k, tau0, label));
                    }
                }
                Ok(out)
            };
            let d_tr = draws(train_set, &raw_tr, &f_tr, &mut draw_rng)?;
            let d_va = draws(val_set, &raw_va, &f_va, &mut draw_rng)?;
            let norm = Normalizer::fit(d_tr.iter().map(|d| d.0.as_slice()), vec![true; width + 1])?;
            let scale = column_means(d_tr.iter().map(|d| d.3.clone()));
            let spec = MlpSpec::new(
                width + 1,
                &hidden,
                vec![HeadSpec::new(HeadKind::Time, scale)],
            )?;
            p.models
                .push(MlpModel::init(spec, norm.clone(), &mut init_rng)?);
            let objective = |d: Vec<SbDraw>, features: Vec<Features>| SbObjective {
                samples: d
                    .into_iter()
                    .map(|(x, instance, tau0, label)| SbSample {
                        x: norm.normalize(&x),
                        instance,
                        tau0,
                        label,
                    })
                    .collect(),
                features,
                params: *params,
                weights: cfg.train.loss,
            };
            let tr = objective(d_tr, f_tr);
            let va = objective(d_va, f_va);
            p.reports.push(train(&mut p.models, &tr, &va, &cfg.train)?);
        }
        AlgorithmKind::DeepUnfold => {
            let depth = cfg.unfold_blocks.unwrap_or_else(|| unfold_depth(n));
            let norm = Normalizer::fit(raw_tr.iter().map(Vec::as_slice), vec![true; width])?
                .concat(&Normalizer::identity(1));
            let block_hidden = [4 * n, 4 * n];
            for _ in 0..depth {
                let spec = MlpSpec::new(
                    width + 1,
                    &block_hidden,
                    vec![HeadSpec::uniform(HeadKind::Raw, 1, UNFOLD_STEP_SCALE)],
                )?;
                p.models
                    .push(MlpModel::init(spec, norm.clone(), &mut init_rng)?);
            }
            let objective = |set: &[Labeled], raw: &[Vec<f64>], f: &[Features]| UnfoldObjective {
                samples: set
                    .iter()
                    .zip(raw)
                    .zip(f)
                    .map(|(((_, label), r), features)| {
                        let b = master_bracket(features, params, &cfg.solver);
                        UnfoldSample {
                            h: norm.normalize(r),
                            start: start_state(b),
                            target: to_state(label.eh_s, b),
                        }
                    })
                    .collect(),
            };
            let tr = objective(train_set, &raw_tr, &f_tr);
            let va = objective(val_set, &raw_va, &f_va);
            p.reports.push(train(&mut p.models, &tr, &va, &cfg.train)?);
        }
    }
    p.validate()?;
    Ok(p)
}
