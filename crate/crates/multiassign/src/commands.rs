//! The four subcommands as library functions. Human-readable progress goes
//! to the supplied writer; files go under the configured output directory.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use multiassign_core::harness::{evaluate, train_with_progress, CellResult, EvalConfig, EvalResult, MetricsLog};
use multiassign_core::model::Model;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{io_err, AppError, AppResult};
use crate::grid::{run_grid, thread_count};
use crate::report::{ablation_csv, loss_plot_svg, metrics_csv, sig6};
use crate::selftest::{run_all, SuiteReport};

pub const METRICS_FILE: &str = "metrics.csv";
pub const PLOT_FILE: &str = "loss.svg";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const STRIPPED_CHECKPOINT_FILE: &str = "model.stripped.ckpt";
pub const ABLATION_FILE: &str = "ablation.csv";

fn say(out: &mut dyn Write, msg: impl AsRef<str>) -> AppResult<()> {
    writeln!(out, "{}", msg.as_ref()).map_err(io_err("<output>"))
}

fn write_file(path: &Path, contents: &str) -> AppResult<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

fn prepare(cfg: &RunConfig) -> AppResult<()> {
    cfg.validate()?;
    cfg.write_resolved()?;
    Ok(())
}

#[derive(Debug)]
pub struct TrainArtifacts {
    pub log: MetricsLog,
    pub model: Model,
    pub metrics: PathBuf,
    pub plot: PathBuf,
    pub checkpoint: PathBuf,
    pub stripped_checkpoint: PathBuf,
}

/// Trains one run and writes the metrics CSV, loss plot and both checkpoints.
pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> AppResult<TrainArtifacts> {
    prepare(cfg)?;
    let e = &cfg.exp;
    say(
        out,
        format!(
            "training {} steps, {} auxiliary branches ({}), seed {}",
            e.train.steps,
            e.model.n_aux,
            e.model.aux_mode.as_str(),
            e.train.seed
        ),
    )?;
    let mut io_failure = None;
    let outcome = train_with_progress(e, &mut |rows| {
        let r = &rows[0];
        let line = format!(
            "epoch {:>3}  o2o primary loss {}  AP50 {}  mAP {}",
            r.epoch,
            sig6(r.o2o_primary_loss),
            sig6(r.ap50),
            sig6(r.map)
        );
        if let Err(err) = writeln!(out, "{line}") {
            io_failure.get_or_insert(err);
        }
    })?;
    if let Some(err) = io_failure {
        return Err(io_err("<output>")(err));
    }

    let csv = metrics_csv(&outcome.log);
    let metrics = cfg.out.join(METRICS_FILE);
    write_file(&metrics, &csv)?;
    let plot = cfg.out.join(PLOT_FILE);
    write_file(&plot, &loss_plot_svg(&csv)?)?;
    let ckpt = cfg.out.join(CHECKPOINT_FILE);
    checkpoint::save(&outcome.model, &ckpt)?;
    let stripped = cfg.out.join(STRIPPED_CHECKPOINT_FILE);
    checkpoint::save(&outcome.model.strip_for_inference(), &stripped)?;
    say(out, format!("wrote {}", cfg.out.display()))?;
    Ok(TrainArtifacts {
        log: outcome.log,
        model: outcome.model,
        metrics,
        plot,
        checkpoint: ckpt,
        stripped_checkpoint: stripped,
    })
}

pub fn format_ap_table(r: &EvalResult) -> String {
    let mut s = String::from("iou_threshold,ap\n");
    for (t, ap) in &r.per_threshold {
        let _ = writeln!(s, "{t:.2},{}", sig6(*ap));
    }
    let _ = writeln!(s, "AP50,{}", sig6(r.ap50));
    let _ = writeln!(s, "mAP,{}", sig6(r.map));
    s
}

/// Evaluates one branch of a checkpoint on the frozen validation set and
/// prints the AP table.
pub fn cmd_eval(cfg: &RunConfig, ckpt: &Path, eval: &EvalConfig, out: &mut dyn Write) -> AppResult<EvalResult> {
    if !ckpt.exists() {
        return Err(AppError::Invalid(format!(
            "checkpoint {} does not exist",
            ckpt.display()
        )));
    }
    let model = checkpoint::load(ckpt)?;
    let mut exp = cfg.exp.clone();
    exp.model = model.config;
    exp.eval = *eval;
    exp.validate()?;
    let scenes = exp.validation_set()?;
    let r = evaluate(&model, &scenes, eval)?;
    say(out, format_ap_table(&r).trim_end())?;
    Ok(r)
}

/// Runs the ablation grid in parallel and writes the comparison table.
pub fn cmd_ablate(cfg: &RunConfig, out: &mut dyn Write) -> AppResult<Vec<CellResult>> {
    prepare(cfg)?;
    let threads = thread_count();
    let jobs = cfg.grid.jobs()?.len();
    say(out, format!("ablation: {jobs} runs on {threads} threads"))?;
    let results = run_grid(&cfg.exp, &cfg.grid, threads, &|done, total| {
        eprintln!("finished run {done}/{total}");
    })?;
    let csv = ablation_csv(&results);
    let path = cfg.out.join(ABLATION_FILE);
    write_file(&path, &csv)?;
    say(out, csv.trim_end())?;
    Ok(results)
}

/// Runs every oracle suite; fails if any suite fails.
pub fn cmd_selftest(train_steps: usize, out: &mut dyn Write) -> AppResult<Vec<SuiteReport>> {
    let reports = run_all(train_steps);
    for r in &reports {
        say(
            out,
            format!(
                "{} {:<24} {:>7.2}s  {}",
                if r.passed { "ok  " } else { "FAIL" },
                r.name,
                r.seconds,
                r.detail
            ),
        )?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(reports)
    } else {
        Err(AppError::Selftest(failed.join(", ")))
    }
}
