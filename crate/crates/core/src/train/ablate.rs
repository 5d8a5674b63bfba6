//! Trains each variant under identical budgets and seeds and compares them.

use super::config::ExperimentConfig;
use super::evaluate::{evaluate, evaluate_per_sample, EvalOptions, HeadReports};
use super::trainer::{train, CurvePoint, TrainOptions};
use crate::data::SceneSample;
use crate::error::{Error, Result};
use crate::model::Variant;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub stage_iters: [usize; 4],
    pub train: HeadReports,
    pub heldout: Option<HeadReports>,
    /// Share of held-out scenes where the fused head's RMSE_log is at most
    /// the fine head's.
    pub fused_win_rate: Option<f64>,
    pub curve: Vec<CurvePoint>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub variant: Variant,
    /// Median over seeds of the fine head's training RMSE_log.
    pub train_rmse_log: f64,
    pub heldout_rmse_log: Option<f64>,
    pub fused_heldout_rmse_log: Option<f64>,
    pub fused_win_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub seeds: Vec<u64>,
    pub runs: Vec<RunResult>,
    pub summary: Vec<AblationSummary>,
    pub wall_seconds: f64,
}

/// Median of a non-empty list (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// The loss curve as CSV with header `iter,loss_r,loss_c,total`.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("iter,loss_r,loss_c,total\n");
    for p in curve {
        let _ = writeln!(out, "{},{},{},{}", p.iter, p.loss_r, p.loss_c, p.total);
    }
    out
}

impl ExperimentResult {
    /// Copy with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.wall_seconds = 0.0;
        r.runs.iter_mut().for_each(|run| run.wall_seconds = 0.0);
        r
    }

    pub fn summary_for(&self, variant: Variant) -> Option<&AblationSummary> {
        self.summary.iter().find(|s| s.variant == variant)
    }

    /// Markdown comparison table.
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let mut out = String::from(
            "| variant | train RMSE_log | held-out RMSE_log | fused held-out RMSE_log | fused win rate |\n|---|---|---|---|---|\n",
        );
        for s in &self.summary {
            let _ = writeln!(
                out,
                "| {} | {:.4} | {} | {} | {} |",
                s.variant,
                s.train_rmse_log,
                fmt(s.heldout_rmse_log),
                fmt(s.fused_heldout_rmse_log),
                fmt(s.fused_win_rate)
            );
        }
        out
    }

    /// Writes `result.json`, `table.md` and one curve CSV per run.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: String, bytes: Vec<u8>| {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))
        };
        put("result.json".into(), serde_json::to_vec_pretty(self)?)?;
        put("table.md".into(), self.table().into_bytes())?;
        for run in &self.runs {
            put(format!("curve_{}_seed{}.csv", run.variant, run.seed), curve_csv(&run.curve).into_bytes())?;
        }
        Ok(())
    }
}

/// Trains every variant in `variants` once per seed on `train_set` and
/// scores it on both sets. Refinement and fusion run only for variants in
/// `post_stages_for`.
pub fn ablate(
    cfg: &ExperimentConfig,
    train_set: &[SceneSample],
    heldout: &[SceneSample],
    variants: &[Variant],
    seeds: &[u64],
    post_stages_for: &[Variant],
    opts: &TrainOptions,
) -> Result<ExperimentResult> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one variant and one seed".into()));
    }
    let start = std::time::Instant::now();
    let eval = EvalOptions::default();
    let mut runs = Vec::new();
    for &variant in variants {
        for &seed in seeds {
            let mut c = cfg.clone();
            c.network.variant = variant;
            c.train.seed = seed;
            c.train.skip_post_stages = !post_stages_for.contains(&variant);
            let (model, report) = train(&c, train_set, opts)?;
            let train_reports = evaluate(&model, train_set, &eval)?;
            let (held, win) = if heldout.is_empty() {
                (None, None)
            } else {
                let per = evaluate_per_sample(&model, heldout, &eval)?;
                let win = per.first().and_then(|r| r.fused).map(|_| {
                    let wins = per
                        .iter()
                        .filter(|r| r.fused.map_or(false, |f| f.rmse_log <= r.fine.rmse_log))
                        .count();
                    wins as f64 / per.len() as f64
                });
                (Some(evaluate(&model, heldout, &eval)?), win)
            };
            runs.push(RunResult {
                variant,
                seed,
                stage_iters: report.stage_iters,
                train: train_reports,
                heldout: held,
                fused_win_rate: win,
                curve: report.curve,
                wall_seconds: report.wall_seconds,
            });
        }
    }
    let summary = variants
        .iter()
        .map(|&variant| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.variant == variant).collect();
            let med = |f: &dyn Fn(&RunResult) -> Option<f64>| -> Option<f64> {
                let v: Option<Vec<f64>> = mine.iter().map(|r| f(r)).collect();
                v.map(|v| median(&v))
            };
            AblationSummary {
                variant,
                train_rmse_log: med(&|r| Some(r.train.fine.rmse_log)).expect("every run has a fine head"),
                heldout_rmse_log: med(&|r| r.heldout.as_ref().map(|h| h.fine.rmse_log)),
                fused_heldout_rmse_log: med(&|r| r.heldout.as_ref().and_then(|h| h.fused).map(|f| f.rmse_log)),
                fused_win_rate: med(&|r| r.fused_win_rate),
            }
        })
        .collect();
    Ok(ExperimentResult {
        seeds: seeds.to_vec(),
        runs,
        summary,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
