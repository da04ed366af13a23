use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use wpcn::dataset::Dataset;
use wpcn::physics::schedule_length;
use wpcn::pipelines::{train_pipeline, AlgorithmKind, EvalRecord, Labeled, TrainedPipeline};

use crate::config::{ExperimentConfig, Split};
use crate::report::{read_csv, write_csv, EvalRow, LossRow, RecordRow, RuntimeRow};

fn config_value(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

pub fn generate(cfg: &ExperimentConfig) -> Result<()> {
    for &n in &cfg.n_users {
        for split in Split::ALL {
            let mut ds =
                Dataset::generate(n, split.size(cfg), &cfg.params, cfg.seed, split.stream())?;
            ds.header.meta = config_value(cfg);
            let path = cfg.dataset_path(n, split);
            ds.save(&path)?;
            eprintln!("generated {} ({} rows)", path.display(), ds.rows.len());
        }
    }
    Ok(())
}

fn load_dataset(cfg: &ExperimentConfig, n: usize, split: Split) -> Result<Dataset> {
    let path = cfg.dataset_path(n, split);
    let ds = Dataset::load(&path)
        .with_context(|| format!("loading {} (run `wpcn generate` first?)", path.display()))?;
    ensure!(
        ds.header.params == cfg.params && ds.n_users() == n,
        "{} was generated with other system parameters or user count",
        path.display()
    );
    Ok(ds)
}

pub fn label(cfg: &ExperimentConfig) -> Result<()> {
    for &n in &cfg.n_users {
        for split in Split::ALL {
            let mut ds = load_dataset(cfg, n, split)?;
            let added = ds.label(&cfg.pipeline.solver)?;
            let bad = ds.invalid_labels()?;
            ensure!(bad.is_empty(), "labels of rows {bad:?} fail validation");
            let path = cfg.dataset_path(n, split);
            ds.save(&path)?;
            eprintln!(
                "labeled {}: {added} new, {} kept",
                path.display(),
                ds.rows.len() - added
            );
        }
    }
    Ok(())
}

fn labeled(cfg: &ExperimentConfig, n: usize, split: Split) -> Result<(Vec<u64>, Vec<Labeled>)> {
    let ds = load_dataset(cfg, n, split)?;
    ensure!(
        ds.is_labeled(),
        "{} has unlabeled rows (run `wpcn label`)",
        cfg.dataset_path(n, split).display()
    );
    Ok((ds.rows.iter().map(|r| r.id).collect(), ds.labeled()?))
}

pub fn train(cfg: &ExperimentConfig) -> Result<()> {
    for &n in &cfg.n_users {
        let (_, train_set) = labeled(cfg, n, Split::Train)?;
        let (_, val_set) = labeled(cfg, n, Split::Val)?;
        for &kind in &cfg.kinds {
            let p = train_pipeline(kind, &train_set, &val_set, &cfg.params, &cfg.pipeline)
                .with_context(|| format!("training {kind} at n = {n}"))?;
            let dir = cfg.bundle_dir(n, kind);
            p.save(&dir)?;
            match p.reports.first() {
                Some(r) => eprintln!(
                    "trained {kind} n={n}: {} epochs, best {} (val {:.4e}), early stop {:?}",
                    r.stop_epoch(),
                    r.best_epoch,
                    r.best_val_loss,
                    r.early_stop_epoch
                ),
                None => eprintln!("wrote {kind} n={n} passthrough bundle"),
            }
        }
    }
    Ok(())
}

fn load_bundle(cfg: &ExperimentConfig, n: usize, kind: AlgorithmKind) -> Result<TrainedPipeline> {
    let dir = cfg.bundle_dir(n, kind);
    let p = TrainedPipeline::load(&dir)
        .with_context(|| format!("loading bundle {} (run `wpcn train`?)", dir.display()))?;
    ensure!(p.kind == kind, "bundle {} holds {}", dir.display(), p.kind);
    ensure!(
        p.n_users == n,
        "bundle {} is for {} users, test set has {n}",
        dir.display(),
        p.n_users
    );
    ensure!(
        p.params == cfg.params,
        "bundle {} was trained with other system parameters",
        dir.display()
    );
    Ok(p)
}

/// Inference on every test instance, one at a time, after `warmup`
/// untimed calls.
fn run_kind(
    p: &TrainedPipeline,
    ids: &[u64],
    test: &[Labeled],
    warmup: usize,
) -> Result<Vec<(u64, f64, EvalRecord)>> {
    for (inst, _) in test.iter().cycle().take(warmup.min(test.len())) {
        p.infer(inst)?;
    }
    ids.iter()
        .zip(test)
        .map(|(&id, (inst, label))| {
            let (_, rec) = p
                .infer(inst)
                .with_context(|| format!("{} on test row {id}", p.kind))?;
            Ok((id, schedule_length(label), rec))
        })
        .collect()
}

/// Evaluation results of one user count.
pub struct EvalOutput {
    pub summary: Vec<EvalRow>,
    pub runtime: Vec<RuntimeRow>,
}

pub fn eval(cfg: &ExperimentConfig) -> Result<Vec<EvalRow>> {
    Ok(eval_all(cfg)?.into_iter().flat_map(|o| o.summary).collect())
}

fn eval_all(cfg: &ExperimentConfig) -> Result<Vec<EvalOutput>> {
    let echo = cfg.echo();
    let mut outputs = Vec::new();
    for &n in &cfg.n_users {
        let (ids, test) = labeled(cfg, n, Split::Test)?;
        let (mut summary, mut runtime, mut records, mut losses) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for &kind in &cfg.kinds {
            let p = load_bundle(cfg, n, kind)?;
            let recs = run_kind(&p, &ids, &test, cfg.warmup)?;
            summary.push(EvalRow::summarize(n, kind, &recs));
            runtime.push(RuntimeRow::summarize(n, kind, &recs));
            records.extend(
                recs.iter()
                    .map(|(id, opt, r)| RecordRow::new(n, *id, *opt, r)),
            );
            for report in &p.reports {
                for (e, norm) in report.epochs.iter().zip(report.normalized_val_loss()) {
                    losses.push(LossRow {
                        n_users: n,
                        kind,
                        epoch: e.epoch,
                        train_loss: e.train_loss,
                        val_loss: e.val_loss,
                        normalized_val_loss: norm,
                    });
                }
            }
        }
        let dir = cfg.n_dir(n);
        write_csv(&dir.join("eval.csv"), &echo, &summary)?;
        write_csv(&dir.join("records.csv"), &echo, &records)?;
        write_csv(&dir.join("loss.csv"), &echo, &losses)?;
        write_csv(&dir.join("runtime.csv"), &echo, &runtime)?;
        for (s, t) in summary.iter().zip(&runtime) {
            println!(
                "n={n:<3} {:<15} gap {:>+9.4}%  median {:>10.2} µs  feasible {}/{}  repaired {}",
                s.kind.name(),
                100.0 * s.gap_vs_opt,
                1e6 * t.median_runtime_s,
                s.feasible,
                s.instances,
                s.instances - s.repairs_0
            );
        }
        outputs.push(EvalOutput { summary, runtime });
    }
    Ok(outputs)
}

/// The whole chain for every user count, combined into `bench.csv` and
/// `bench_runtime.csv`. Returns whether every summary passed.
pub fn bench(cfg: &ExperimentConfig) -> Result<bool> {
    generate(cfg)?;
    label(cfg)?;
    train(cfg)?;
    let outputs = eval_all(cfg)?;
    let summary: Vec<EvalRow> = outputs
        .iter()
        .flat_map(|o| o.summary.iter().cloned())
        .collect();
    let runtime: Vec<RuntimeRow> = outputs
        .iter()
        .flat_map(|o| o.runtime.iter().cloned())
        .collect();
    let echo = cfg.echo();
    write_csv(&cfg.out_dir.join("bench.csv"), &echo, &summary)?;
    write_csv(&cfg.out_dir.join("bench_runtime.csv"), &echo, &runtime)?;
    Ok(summary.iter().all(EvalRow::passed))
}

fn check(ok: &mut bool, what: &str, result: Result<()>) {
    match result {
        Ok(()) => println!("ok    {what}"),
        Err(e) => {
            println!("FAIL  {what}: {e:#}");
            *ok = false;
        }
    }
}

fn check_eval(path: &Path) -> Result<()> {
    let rows: Vec<EvalRow> = read_csv(path)?;
    for r in &rows {
        if !r.passed() {
            bail!(
                "{} at n = {}: {}/{} feasible, gap {}",
                r.kind,
                r.n_users,
                r.feasible,
                r.instances,
                r.gap_vs_opt
            );
        }
    }
    Ok(())
}

/// Checks every artifact the config implies. Missing files fail.
pub fn validate(cfg: &ExperimentConfig) -> Result<bool> {
    let mut ok = true;
    println!("ok    config");
    for &n in &cfg.n_users {
        for split in Split::ALL {
            let what = format!("dataset {}", cfg.dataset_path(n, split).display());
            check(
                &mut ok,
                &what,
                load_dataset(cfg, n, split).and_then(|ds| {
                    ensure!(
                        ds.rows.len() == split.size(cfg),
                        "{} rows, config says {}",
                        ds.rows.len(),
                        split.size(cfg)
                    );
                    ensure!(ds.is_labeled(), "unlabeled rows");
                    let bad = ds.invalid_labels()?;
                    ensure!(bad.is_empty(), "labels of rows {bad:?} fail validation");
                    Ok(())
                }),
            );
        }
        for &kind in &cfg.kinds {
            let what = format!("bundle {}", cfg.bundle_dir(n, kind).display());
            check(&mut ok, &what, load_bundle(cfg, n, kind).map(|_| ()));
        }
        let eval_path = cfg.n_dir(n).join("eval.csv");
        check(
            &mut ok,
            &format!("report {}", eval_path.display()),
            check_eval(&eval_path),
        );
    }
    Ok(ok)
}
