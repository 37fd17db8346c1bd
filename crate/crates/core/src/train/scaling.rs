use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mae_param_count, param_count, ModelConfig, Trainable};
use crate::rollout::{all_rollout_error, ModelStepper};

use super::corpus::{previous_frame, Corpus, TrainingCase};
use super::schedule::PhaseSpec;
use super::trainer::{Seeds, Trainer};

/// Training compute `6 * P * D` in FLOPs, where `P` counts every parameter
/// applied per node (including the masked-autoencoder stack) and `D` is the
/// number of node-steps processed.
pub fn flops_estimate(config: &ModelConfig, node_steps: u64) -> f64 {
    6.0 * (param_count(config) + mae_param_count(config)) as f64 * node_steps as f64
}

/// Power law `P = coefficient * C^exponent` fitted in log-log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub coefficient: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `log P` on `log C` over `(C, P)` points.
pub fn fit_scaling_law(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("a scaling fit needs at least two points".into()));
    }
    if points.iter().any(|&(c, p)| !(c > 0.0 && p > 0.0 && c.is_finite() && p.is_finite())) {
        return Err(Error::InvalidArgument("scaling points must be positive and finite".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("scaling points need at least two distinct budgets".into()));
    }
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - exponent * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(ScalingFit { exponent, coefficient: intercept.exp(), r_squared })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    pub lr_max: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub noise_sigma: [f64; 3],
    pub seed: u64,
    /// Rollout horizon for the final error; `None` uses the whole case.
    pub eval_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub budget: f64,
    pub model: usize,
    pub params: u64,
    pub steps: u64,
    pub all_rollout_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub records: Vec<SweepRecord>,
    /// Per budget, the record index with the lowest error.
    pub best: Vec<(f64, usize)>,
    pub warnings: Vec<String>,
}

impl SweepReport {
    /// `(budget, params)` of each per-budget optimum, ready for fitting.
    pub fn optimum_points(&self) -> Vec<(f64, f64)> {
        self.best.iter().map(|&(c, i)| (c, self.records[i].params as f64)).collect()
    }
}

/// Trains every grid model at every compute budget with a cosine schedule
/// sized to the budget and records its all-rollout error on `eval`.
pub fn isoflops_sweep(
    budgets: &[f64],
    grid: &[ModelConfig],
    corpus: &Corpus,
    eval: &TrainingCase,
    settings: &SweepSettings,
) -> Result<SweepReport> {
    if corpus.cases.is_empty() {
        return Err(Error::InvalidArgument("sweep corpus is empty".into()));
    }
    let mean_nodes =
        corpus.cases.iter().map(|c| c.case.num_nodes()).sum::<usize>() as f64 / corpus.cases.len() as f64;
    let batch_nodes = settings.batch_size as f64 * mean_nodes;
    let mut records = Vec::new();
    let mut best = Vec::new();
    let mut warnings = Vec::new();
    let seeds = Seeds::from_base(settings.seed);
    grid.iter().try_for_each(ModelConfig::validate)?;
    let mut prepared: Vec<(Corpus, TrainingCase)> = Vec::with_capacity(grid.len());
    for config in grid {
        let mut c = corpus.clone();
        c.reaugment(config, seeds.augment)?;
        let mut e = eval.clone();
        e.reaugment(config, seeds.augment)?;
        prepared.push((c, e));
    }
    let stats = corpus.fit_norm_stats(settings.noise_sigma)?;
    for &budget in budgets {
        let mut best_here: Option<usize> = None;
        for (m, config) in grid.iter().enumerate() {
            let params = param_count(config) + mae_param_count(config);
            let steps = (budget / (6.0 * params as f64 * batch_nodes)).floor() as u64;
            if steps < 1 {
                warnings.push(format!("budget {budget:e}: model {m} ({params} parameters) needs more than one step, skipped"));
                continue;
            }
            let (c, e) = &prepared[m];
            let mut trainer = Trainer::<f32>::new(config.clone(), stats.clone(), seeds)?;
            let phase = PhaseSpec {
                name: "sweep".into(),
                dataset: c.cases[0].dataset,
                steps,
                lr_max: settings.lr_max,
                lr_min: settings.lr_min,
                batch_size: settings.batch_size,
                noise_sigma: settings.noise_sigma,
                mask_ratio: 0.0,
                trainable: Trainable::All,
            };
            let all: Vec<usize> = (0..c.cases.len()).collect();
            trainer.run_phase_on(0, &phase, c, &all, steps)?;
            let horizon = settings.eval_steps.unwrap_or(e.num_samples()).min(e.num_samples());
            let truth = &e.frames[..=horizon];
            let mut stepper = ModelStepper { model: &trainer.model, stats: &trainer.stats, aug: &e.aug };
            let err = all_rollout_error(&mut stepper, &e.case, truth, previous_frame(&e.frames, 0))?;
            records.push(SweepRecord { budget, model: m, params, steps, all_rollout_mse: err.mse });
            let idx = records.len() - 1;
            if best_here.is_none_or(|b| records[idx].all_rollout_mse < records[b].all_rollout_mse) {
                best_here = Some(idx);
            }
        }
        if let Some(b) = best_here {
            best.push((budget, b));
        }
    }
    Ok(SweepReport { records, best, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_is_recovered() {
        let pts: Vec<(f64, f64)> = [1e15, 1e16, 1e17, 1e18, 1e19, 1e20].iter().map(|&c| (c, 2.0 * f64::powf(c, 0.75))).collect();
        let fit = fit_scaling_law(&pts).unwrap();
        assert!((fit.exponent - 0.75).abs() < 1e-10);
        assert!((fit.coefficient / 2.0 - 1.0).abs() < 1e-8);
        assert!((fit.r_squared - 1.0).abs() < 1e-10);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(fit_scaling_law(&[(1.0, 1.0)]).is_err());
        assert!(fit_scaling_law(&[(1.0, 1.0), (1.0, 2.0)]).is_err());
        assert!(fit_scaling_law(&[(1.0, -1.0), (2.0, 2.0)]).is_err());
    }

    #[test]
    fn flops_scale_linearly() {
        let toy = ModelConfig::toy();
        assert_eq!(flops_estimate(&toy, 0), 0.0);
        let d = 1000;
        let p = (param_count(&toy) + mae_param_count(&toy)) as f64;
        assert_eq!(flops_estimate(&toy, d), 6.0 * p * d as f64);
        assert_eq!(flops_estimate(&toy, 2 * d), 2.0 * flops_estimate(&toy, d));
    }
}
