//! Pipeline bundles: a directory holding `manifest.json`, one JSON file per
//! model and `train_report.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AlgorithmKind, PipelineConfig, TrainedPipeline};
use crate::channel::SystemParams;
use crate::error::{Error, Result};
use crate::nn::{MlpModel, TrainReport};
use crate::xai::FeatureCatalog;

pub const BUNDLE_FORMAT: &str = "wpcn-pipeline";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub kind: AlgorithmKind,
    pub n_users: usize,
    pub params: SystemParams,
    pub params_hash: String,
    pub catalog: Option<FeatureCatalog>,
    pub config: PipelineConfig,
    pub models: Vec<String>,
    pub reports: Vec<TrainReport>,
}

/// SHA-256 of the canonical JSON encoding of `params`.
pub fn params_hash(params: &SystemParams) -> String {
    let json = serde_json::to_string(params).expect("plain struct serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Per-epoch losses with the best/stop epochs and training config in
/// leading `#` comment lines.
pub fn report_csv(report: &TrainReport) -> String {
    let mut out = String::new();
    let cfg = serde_json::to_string(&report.config).expect("plain struct serializes");
    let _ = writeln!(out, "# train_config: {cfg}");
    let stop = report
        .early_stop_epoch
        .map_or_else(|| "none".to_string(), |e| e.to_string());
    let _ = writeln!(
        out,
        "# best_epoch: {}, early_stop_epoch: {stop}",
        report.best_epoch
    );
    out.push_str("epoch,train_loss,val_loss,normalized_val_loss\n");
    for (e, norm) in report.epochs.iter().zip(report.normalized_val_loss()) {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?}",
            e.epoch, e.train_loss, e.val_loss, norm
        );
    }
    out
}

fn model_file(k: usize) -> String {
    format!("model_{k}.json")
}

impl TrainedPipeline {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            kind: self.kind,
            n_users: self.n_users,
            params: self.params,
            params_hash: params_hash(&self.params),
            catalog: self.catalog.clone(),
            config: self.config.clone(),
            models: (0..self.models.len()).map(model_file).collect(),
            reports: self.reports.clone(),
        }
    }

    /// Writes the bundle into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = self.manifest();
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        for (name, m) in manifest.models.iter().zip(&self.models) {
            fs::write(dir.join(name), m.to_json()?)?;
        }
        let csv: String = self.reports.iter().map(report_csv).collect();
        fs::write(dir.join("train_report.csv"), csv)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format != BUNDLE_FORMAT || manifest.version != BUNDLE_VERSION {
            return Err(Error::Config(format!(
                "unsupported bundle {} v{}",
                manifest.format, manifest.version
            )));
        }
        if params_hash(&manifest.params) != manifest.params_hash {
            return Err(Error::Config(
                "bundle params do not match their hash".into(),
            ));
        }
        let models = manifest
            .models
            .iter()
            .map(|name| MlpModel::from_json(&fs::read_to_string(dir.join(name))?))
            .collect::<Result<Vec<_>>>()?;
        let p = Self {
            kind: manifest.kind,
            n_users: manifest.n_users,
            params: manifest.params,
            config: manifest.config,
            catalog: manifest.catalog,
            models,
            reports: manifest.reports,
        };
        p.validate()?;
        Ok(p)
    }
}
