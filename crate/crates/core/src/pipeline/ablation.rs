use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalReport};
use super::stress::stress_summary;
use super::train::{train, EpochLog, TrainConfig, TrainOutcome};
use crate::error::{Result, RoarError};
use crate::fieldsim::Episode;
use crate::fusion::Variant;

/// What to train and how to probe each trained model.
#[derive(Clone, Debug)]
pub struct AblationPlan {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Template; `variant` and `seed` are overwritten per run.
    pub train: TrainConfig,
    /// Occlusion lengths for the stress test; empty skips it.
    pub stress_ks: Vec<usize>,
    pub stress_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StressPoint {
    pub k: usize,
    pub fp_rate: f64,
    pub mean_max_probability: f64,
}

/// One trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub eval: EvalReport,
    pub first_epoch_loss: f64,
    pub final_epoch_loss: f64,
    pub stress: Vec<StressPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub runs: usize,
    pub mean_pr_auc: f64,
    pub mean_f1: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    /// Seed of the run with the highest PR-AUC.
    pub best_seed: u64,
    pub best_pr_auc: f64,
    pub best_f1: f64,
    /// Per occlusion length, averaged over seeds.
    pub stress: Vec<StressPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<AblationRow>,
    pub variants: BTreeMap<Variant, VariantSummary>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

impl MetricsReport {
    /// Summaries recomputed from the rows.
    pub fn from_rows(rows: Vec<AblationRow>) -> Self {
        let mut grouped: BTreeMap<Variant, Vec<&AblationRow>> = BTreeMap::new();
        for r in &rows {
            grouped.entry(r.variant).or_default().push(r);
        }
        let variants = grouped
            .into_iter()
            .map(|(v, runs)| {
                let best = runs
                    .iter()
                    .copied()
                    .reduce(|a, b| if b.eval.pr_auc > a.eval.pr_auc { b } else { a })
                    .expect("group is nonempty");
                let ks: Vec<usize> = runs[0].stress.iter().map(|p| p.k).collect();
                let stress = ks
                    .iter()
                    .enumerate()
                    .map(|(i, &k)| StressPoint {
                        k,
                        fp_rate: mean(runs.iter().map(|r| r.stress[i].fp_rate)),
                        mean_max_probability: mean(runs.iter().map(|r| r.stress[i].mean_max_probability)),
                    })
                    .collect();
                let summary = VariantSummary {
                    runs: runs.len(),
                    mean_pr_auc: mean(runs.iter().map(|r| r.eval.pr_auc)),
                    mean_f1: mean(runs.iter().map(|r| r.eval.f1.f1)),
                    mean_precision: mean(runs.iter().map(|r| r.eval.f1.precision)),
                    mean_recall: mean(runs.iter().map(|r| r.eval.f1.recall)),
                    best_seed: best.seed,
                    best_pr_auc: best.eval.pr_auc,
                    best_f1: best.eval.f1.f1,
                    stress,
                };
                (v, summary)
            })
            .collect();
        MetricsReport { rows, variants }
    }
}

/// Trains and evaluates every variant on every seed, in that order.
///
/// `on_run` receives each finished training before the next starts;
/// `on_epoch` sees every epoch of every run.
pub fn run_ablation(
    train_set: &[Episode],
    test_set: &[Episode],
    stress_set: &[Episode],
    plan: &AblationPlan,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
    on_run: &mut dyn FnMut(&TrainOutcome, &AblationRow) -> Result<()>,
) -> Result<MetricsReport> {
    if plan.variants.is_empty() || plan.seeds.is_empty() {
        return Err(RoarError::invalid("ablation needs at least one variant and one seed"));
    }
    if !plan.stress_ks.is_empty() && stress_set.is_empty() {
        return Err(RoarError::invalid("stress lengths given without stress episodes"));
    }
    let mut rows = Vec::with_capacity(plan.variants.len() * plan.seeds.len());
    for &variant in &plan.variants {
        for &seed in &plan.seeds {
            let cfg = TrainConfig {
                variant,
                seed,
                ..plan.train.clone()
            };
            let outcome = train(&cfg, train_set, on_epoch)?;
            let eval = evaluate(&outcome.model, &outcome.final_params, test_set)?;
            let stress = plan
                .stress_ks
                .iter()
                .map(|&k| {
                    let s = stress_summary(&outcome.model, &outcome.final_params, stress_set, k, plan.stress_seed)?;
                    Ok(StressPoint {
                        k,
                        fp_rate: s.fp_rate,
                        mean_max_probability: s.mean_max_probability,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let row = AblationRow {
                variant,
                seed,
                eval,
                first_epoch_loss: outcome.log.first().map_or(f64::NAN, |l| l.loss.total),
                final_epoch_loss: outcome.log.last().map_or(f64::NAN, |l| l.loss.total),
                stress,
            };
            on_run(&outcome, &row)?;
            rows.push(row);
        }
    }
    Ok(MetricsReport::from_rows(rows))
}
