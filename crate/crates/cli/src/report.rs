//! CSV outputs. Each file opens with `# config: <json>` and then a header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use wpcn::pipelines::{AlgorithmKind, EvalRecord};

/// Repair-round histogram bins; the last one collects everything above.
pub const REPAIR_BINS: usize = 5;

/// Per-kind summary over the test set. Deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub n_users: usize,
    pub kind: AlgorithmKind,
    pub instances: usize,
    pub mean_length_s: f64,
    pub opt_mean_length_s: f64,
    /// `mean_length_s / opt_mean_length_s − 1`.
    pub gap_vs_opt: f64,
    pub max_instance_gap: f64,
    pub feasible: usize,
    pub mean_model_calls: f64,
    pub mean_master_iterations: f64,
    pub clamped: usize,
    pub repairs_0: usize,
    pub repairs_1: usize,
    pub repairs_2: usize,
    pub repairs_3: usize,
    pub repairs_4_plus: usize,
}

impl EvalRow {
    /// Every schedule feasible and none shorter than OPT.
    pub fn passed(&self) -> bool {
        self.feasible == self.instances
            && self.max_instance_gap.is_finite()
            && self.gap_vs_opt >= -1e-9
    }

    pub fn summarize(
        n_users: usize,
        kind: AlgorithmKind,
        records: &[(u64, f64, EvalRecord)],
    ) -> Self {
        let count = records.len().max(1) as f64;
        let mean = |f: &dyn Fn(&EvalRecord) -> f64| {
            records.iter().map(|(_, _, r)| f(r)).sum::<f64>() / count
        };
        let opt_mean = records.iter().map(|(_, opt, _)| opt).sum::<f64>() / count;
        let mean_length_s = mean(&|r| r.length_s);
        let mut hist = [0usize; REPAIR_BINS];
        for (_, _, r) in records {
            hist[r.repair_rounds.min(REPAIR_BINS - 1)] += 1;
        }
        Self {
            n_users,
            kind,
            instances: records.len(),
            mean_length_s,
            opt_mean_length_s: opt_mean,
            gap_vs_opt: mean_length_s / opt_mean - 1.0,
            max_instance_gap: records
                .iter()
                .map(|(_, opt, r)| r.length_s / opt - 1.0)
                .fold(f64::NEG_INFINITY, f64::max),
            feasible: records.iter().filter(|(_, _, r)| r.feasible).count(),
            mean_model_calls: mean(&|r| r.model_calls as f64),
            mean_master_iterations: mean(&|r| r.master_iterations as f64),
            clamped: records.iter().filter(|(_, _, r)| r.clamped).count(),
            repairs_0: hist[0],
            repairs_1: hist[1],
            repairs_2: hist[2],
            repairs_3: hist[3],
            repairs_4_plus: hist[4],
        }
    }
}

/// Wall-clock summary; the only output that is not bit-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub n_users: usize,
    pub kind: AlgorithmKind,
    pub instances: usize,
    pub mean_runtime_s: f64,
    pub median_runtime_s: f64,
}

impl RuntimeRow {
    pub fn summarize(
        n_users: usize,
        kind: AlgorithmKind,
        records: &[(u64, f64, EvalRecord)],
    ) -> Self {
        let mut t: Vec<f64> = records.iter().map(|(_, _, r)| r.runtime_s).collect();
        t.sort_by(f64::total_cmp);
        let median = match t.len() {
            0 => f64::NAN,
            len if len % 2 == 1 => t[len / 2],
            len => 0.5 * (t[len / 2 - 1] + t[len / 2]),
        };
        Self {
            n_users,
            kind,
            instances: t.len(),
            mean_runtime_s: t.iter().sum::<f64>() / t.len().max(1) as f64,
            median_runtime_s: median,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub n_users: usize,
    pub kind: AlgorithmKind,
    pub id: u64,
    pub length_s: f64,
    pub opt_length_s: f64,
    pub repair_rounds: usize,
    pub outage_bits: f64,
    pub feasible: bool,
    pub model_calls: usize,
    pub master_iterations: usize,
    pub clamped: bool,
}

impl RecordRow {
    pub fn new(n_users: usize, id: u64, opt_length_s: f64, r: &EvalRecord) -> Self {
        Self {
            n_users,
            kind: r.kind,
            id,
            length_s: r.length_s,
            opt_length_s,
            repair_rounds: r.repair_rounds,
            outage_bits: r.outage_bits,
            feasible: r.feasible,
            model_calls: r.model_calls,
            master_iterations: r.master_iterations,
            clamped: r.clamped,
        }
    }
}

/// One epoch of a kind's training curve; the validation loss is max-min
/// normalized per kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub n_users: usize,
    pub kind: AlgorithmKind,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub normalized_val_loss: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, echo: &str, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut file =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(file, "# config: {echo}")?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_csv`], skipping the config line.
pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(
        kind: AlgorithmKind,
        length_s: f64,
        runtime_s: f64,
        repair_rounds: usize,
    ) -> EvalRecord {
        EvalRecord {
            kind,
            length_s,
            runtime_s,
            repair_rounds,
            outage_bits: 0.0,
            feasible: true,
            model_calls: 2,
            master_iterations: 0,
            clamped: false,
        }
    }

    #[test]
    fn summary_counts_and_gap() {
        let recs = vec![
            (0, 1.0, record(AlgorithmKind::Dnn, 1.5, 3e-6, 0)),
            (1, 3.0, record(AlgorithmKind::Dnn, 3.0, 1e-6, 1)),
            (2, 2.0, record(AlgorithmKind::Dnn, 2.1, 2e-6, 7)),
        ];
        let row = EvalRow::summarize(3, AlgorithmKind::Dnn, &recs);
        assert!((row.gap_vs_opt - (6.6 / 6.0 - 1.0)).abs() < 1e-12);
        assert!((row.max_instance_gap - 0.5).abs() < 1e-12);
        assert_eq!(
            (row.repairs_0, row.repairs_1, row.repairs_4_plus),
            (1, 1, 1)
        );
        assert!(row.passed());
        assert_eq!(
            RuntimeRow::summarize(3, AlgorithmKind::Dnn, &recs).median_runtime_s,
            2e-6
        );
    }

    #[test]
    fn csv_reloads_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/eval.csv");
        let rec = record(AlgorithmKind::XaiSbDnnOsm, 0.1 + 0.2, 1.0 / 3.0, 0);
        let rows = vec![EvalRow::summarize(5, rec.kind, &[(4, 0.3, rec)])];
        write_csv(&path, "{\"seed\":1}", &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config: {\"seed\":1}\nn_users,kind,"));
        assert!(text.contains("XAI_SB_DNN_OSM"));
        assert_eq!(read_csv::<EvalRow>(&path).unwrap(), rows);
    }
}
