//! The six subcommands. Every command is deterministic given its effective
//! configuration: rerunning with the same config and seed rewrites identical
//! bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use gard_core::corpus::{read_corpus, write_corpus, Corpus};
use gard_core::datagen::{gen_corpus, structure_probe_accuracy};
use gard_core::model::{load_checkpoint, save_checkpoint};
use gard_core::selfcheck::{full_loss_gradcheck, GRADCHECK_TOLERANCE};
use gard_core::training::{
    cross_validate, early_detect, evaluate, kfold_split, train_fold, write_early_curve_csv,
    write_train_log_csv,
};

use crate::config::RunConfig;
use crate::error::CliError;

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

/// Echo the effective configuration into the run directory.
fn echo_config(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    write_text(&out.join("config.txt"), &cfg.render())
}

fn load_corpus_checked(path: &Path) -> Result<Corpus, CliError> {
    if !path.exists() {
        return Err(CliError::MissingFile(path.to_path_buf()));
    }
    Ok(read_corpus(path)?)
}

/// `gen`: write the synthetic corpus plus a provenance echo of the generator
/// spec next to it.
pub fn cmd_gen(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let corpus = gen_corpus(&cfg.gen)?;
    let path = cfg.corpus_path();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            ensure_dir(dir)?;
        }
    }
    write_corpus(&corpus, &path)?;
    let genspec_echo = cfg
        .render()
        .split("\n[train]")
        .next()
        .unwrap_or_default()
        .to_string();
    write_text(&path.with_extension("genspec.txt"), &genspec_echo)?;
    println!(
        "gen: wrote {} events (d={}, classes={}) to {}",
        corpus.len(),
        corpus.meta.d,
        corpus.meta.classes,
        path.display()
    );
    Ok(path)
}

/// `train`: k-fold cross-validation, then a final model on the full corpus.
/// The run directory receives config.txt, metrics.json, train_log.csv, and
/// model.json.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let corpus = load_corpus_checked(&cfg.corpus_path())?;
    let out = cfg.out_dir();
    echo_config(cfg, &out)?;
    let outcome = cross_validate(&corpus, &cfg.train)?;

    let log_rows: Vec<(usize, &[gard_core::training::EpochLog])> = outcome
        .fold_logs
        .iter()
        .enumerate()
        .map(|(fold, logs)| (fold, logs.as_slice()))
        .collect();
    write_train_log_csv(out.join("train_log.csv"), cfg.train.variant, &log_rows)?;

    let metrics = json!({
        "config_hash": cfg.config_hash(),
        "variant": cfg.train.variant.to_string(),
        "folds": cfg.train.folds,
        "aggregate": outcome.aggregate,
        "per_fold": outcome.per_fold,
        "mean_accuracy": outcome.mean_accuracy,
        "std_accuracy": outcome.std_accuracy,
    });
    write_text(
        &out.join("metrics.json"),
        &format!("{}\n", serde_json::to_string_pretty(&metrics).expect("serializable")),
    )?;

    // Final model on the full corpus, for eval/early.
    let events: Vec<&gard_core::graph::EventGraph> = corpus.events.iter().collect();
    let (params, _) = train_fold(&events, corpus.meta.d, corpus.meta.classes, &cfg.train)?;
    save_checkpoint(&params, cfg.model_path())?;

    println!(
        "train: variant={} folds={} accuracy={:.4} (mean {:.4} ± {:.4}) → {}",
        cfg.train.variant,
        cfg.train.folds,
        outcome.aggregate.accuracy,
        outcome.mean_accuracy,
        outcome.std_accuracy,
        out.display()
    );
    Ok(out)
}

/// `eval`: metrics of a saved model over a corpus.
pub fn cmd_eval(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let corpus = load_corpus_checked(&cfg.corpus_path())?;
    let model_path = cfg.model_path();
    if !model_path.exists() {
        return Err(CliError::MissingFile(model_path));
    }
    let params = load_checkpoint::<f64>(&model_path)?;
    let events: Vec<&gard_core::graph::EventGraph> = corpus.events.iter().collect();
    let report = evaluate(&params, &events, corpus.meta.classes)?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let metrics = json!({
        "config_hash": cfg.config_hash(),
        "model": model_path.display().to_string(),
        "corpus": cfg.corpus_path().display().to_string(),
        "report": report,
    });
    let path = out.join("metrics.json");
    write_text(
        &path,
        &format!("{}\n", serde_json::to_string_pretty(&metrics).expect("serializable")),
    )?;
    println!("eval: accuracy={:.4} macro_f1={:.4} → {}", report.accuracy, report.macro_f1, path.display());
    Ok(path)
}

/// `early`: accuracy of a saved model on deadline-sliced copies of the
/// corpus, one CSV row per deadline.
pub fn cmd_early(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let corpus = load_corpus_checked(&cfg.corpus_path())?;
    let model_path = cfg.model_path();
    if !model_path.exists() {
        return Err(CliError::MissingFile(model_path));
    }
    let params = load_checkpoint::<f64>(&model_path)?;
    let events: Vec<&gard_core::graph::EventGraph> = corpus.events.iter().collect();
    let curve = early_detect(
        &params,
        &events,
        &cfg.train.deadlines_min,
        corpus.meta.classes,
    )?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let path = out.join("early_curve.csv");
    write_early_curve_csv(&path, &curve)?;
    let line: Vec<String> = curve
        .points
        .iter()
        .map(|p| format!("{}:{:.3}", p.deadline_min, p.accuracy))
        .collect();
    println!("early: {} → {}", line.join(" "), path.display());
    Ok(path)
}

/// Which weight a sweep varies.
pub enum SweepParam {
    Alpha1(Vec<f64>),
    Alpha2(Vec<f64>),
}

/// `sweep`: train/evaluate on one hold-out split per grid value and write
/// `<param>,accuracy` rows.
pub fn cmd_sweep(cfg: &RunConfig, param: SweepParam) -> Result<PathBuf, CliError> {
    let corpus = load_corpus_checked(&cfg.corpus_path())?;
    let (name, values) = match &param {
        SweepParam::Alpha1(v) => ("alpha1", v.clone()),
        SweepParam::Alpha2(v) => ("alpha2", v.clone()),
    };
    if values.is_empty() {
        return Err(CliError::Usage(format!("empty {name} grid")));
    }
    let out = cfg.out_dir();
    echo_config(cfg, &out)?;

    // One fixed hold-out split (fold 0 of the configured k-fold) reused for
    // every grid point.
    let labels = corpus.labels();
    let splits = kfold_split(&labels, cfg.train.folds, cfg.train.stratified, cfg.train.seed)?;
    let (train_ids, test_ids) = &splits[0];
    let train_events: Vec<&gard_core::graph::EventGraph> =
        train_ids.iter().map(|&i| &corpus.events[i]).collect();
    let test_events: Vec<&gard_core::graph::EventGraph> =
        test_ids.iter().map(|&i| &corpus.events[i]).collect();

    let mut rows = Vec::with_capacity(values.len());
    for &value in &values {
        let mut train_cfg = cfg.train.clone();
        match param {
            SweepParam::Alpha1(_) => train_cfg.alpha1 = value,
            SweepParam::Alpha2(_) => train_cfg.alpha2 = value,
        }
        let (params, _) = train_fold(
            &train_events,
            corpus.meta.d,
            corpus.meta.classes,
            &train_cfg,
        )?;
        let report = evaluate(&params, &test_events, corpus.meta.classes)?;
        rows.push((value, report.accuracy));
    }

    let path = out.join("sweep.csv");
    let mut text = format!("{name},accuracy\n");
    for (value, acc) in &rows {
        text.push_str(&format!("{value},{acc}\n"));
    }
    write_text(&path, &text)?;
    let best = rows
        .iter()
        .cloned()
        .fold((f64::NAN, f64::NEG_INFINITY), |acc, r| {
            if r.1 > acc.1 {
                r
            } else {
                acc
            }
        });
    println!(
        "sweep: {} over {} values, best accuracy {:.4} at {name}={} → {}",
        name,
        rows.len(),
        best.1,
        best.0,
        path.display()
    );
    Ok(path)
}

/// `gradcheck`: full-loss finite differences on three seeded fixtures; fails
/// (exit 1) if any tensor exceeds the tolerance.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<(), CliError> {
    let base = cfg.train.seed;
    let seeds = [base, base + 1, base + 2];
    let reports = full_loss_gradcheck(&seeds)?;
    let mut all_pass = true;
    for report in &reports {
        let status = if report.passes(GRADCHECK_TOLERANCE) {
            "PASS"
        } else {
            all_pass = false;
            "FAIL"
        };
        println!(
            "gradcheck fixture seed={}: max_rel_err={:.3e} [{status}]",
            report.seed, report.max_rel_err
        );
        for check in &report.checks {
            println!("  {:<16} {:.3e}", check.tensor, check.max_rel_err);
        }
    }
    if all_pass {
        println!("gradcheck: PASS (tolerance {GRADCHECK_TOLERANCE:.0e})");
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "gradient check exceeded tolerance {GRADCHECK_TOLERANCE:.0e}"
        )))
    }
}

/// `probe`: structure-only control accuracy (used by the corpus docs and the
/// verification suite; structure must stay near chance on planted-signal
/// corpora).
pub fn cmd_probe(cfg: &RunConfig) -> Result<f64, CliError> {
    let corpus = load_corpus_checked(&cfg.corpus_path())?;
    let acc = structure_probe_accuracy(&corpus, cfg.train.folds, cfg.train.seed)?;
    println!("probe: structure-only accuracy {acc:.4}");
    Ok(acc)
}
