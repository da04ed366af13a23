use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use wpcn::pipelines::{AlgorithmKind, PipelineConfig};
use wpcn::SystemParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for Sizes {
    fn default() -> Self {
        Self {
            train: 10_000,
            val: 1_000,
            test: 1_000,
        }
    }
}

/// Everything a run depends on. The training seed always follows `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub n_users: Vec<usize>,
    pub kinds: Vec<AlgorithmKind>,
    pub sizes: Sizes,
    /// Untimed inferences per kind before timing starts.
    pub warmup: usize,
    pub params: SystemParams,
    pub pipeline: PipelineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/desk"),
            seed: 1,
            n_users: vec![3, 5, 10],
            kinds: AlgorithmKind::ALL.to_vec(),
            sizes: Sizes::default(),
            warmup: 20,
            params: SystemParams::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Applies command-line overrides and checks every invariant.
    pub fn finalize(
        mut self,
        seed: Option<u64>,
        n: Option<usize>,
        kinds: &[AlgorithmKind],
        out: Option<PathBuf>,
    ) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(n) = n {
            self.n_users = vec![n];
        }
        if !kinds.is_empty() {
            self.kinds = kinds.to_vec();
        }
        if let Some(o) = out {
            self.out_dir = o;
        }
        self.pipeline.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.train == 0 || self.sizes.val == 0 || self.sizes.test == 0 {
            bail!("dataset sizes must be at least 1, got {:?}", self.sizes);
        }
        if self.kinds.is_empty() {
            bail!("at least one algorithm kind is required");
        }
        if self.n_users.is_empty() || self.n_users.contains(&0) {
            bail!(
                "n_users must list positive user counts, got {:?}",
                self.n_users
            );
        }
        self.params.validate()?;
        self.pipeline.validate()?;
        Ok(())
    }

    /// One-line JSON echo embedded in every output file.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn n_dir(&self, n: usize) -> PathBuf {
        self.out_dir.join(format!("n{n}"))
    }

    pub fn dataset_path(&self, n: usize, split: Split) -> PathBuf {
        self.n_dir(n).join(format!("{}.jsonl", split.name()))
    }

    pub fn bundle_dir(&self, n: usize, kind: AlgorithmKind) -> PathBuf {
        self.n_dir(n).join("bundles").join(kind.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// RNG stream of the split, so the three splits never share instances.
    pub fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn size(self, cfg: &ExperimentConfig) -> usize {
        match self {
            Split::Train => cfg.sizes.train,
            Split::Val => cfg.sizes.val,
            Split::Test => cfg.sizes.test,
        }
    }
}
