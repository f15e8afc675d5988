use rayon::prelude::*;

use super::model::{simulate_panel, ConductModel, ConductScenario};
use super::partition::{enumerate_partitions, Partition};
use crate::error::{Error, Result};
use crate::gmm::{MomentModel, OptimizerConfig, WeightingSpec};
use crate::selection::{cross_validate, fit_all, in_sample_criteria, Criterion, CvConfig};

/// One cell of the study grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ConductCell {
    pub t: usize,
    pub alpha: f64,
    pub true_partition: Partition,
}

impl ConductCell {
    pub fn label(&self) -> String {
        format!("T={};alpha={};true={}", self.t, self.alpha, self.true_partition)
    }
}

#[derive(Clone, Debug)]
pub struct ConductStudyConfig {
    /// Primitives shared by every cell; `t`, `alpha` and the true partition
    /// are overridden per cell.
    pub base: ConductScenario,
    pub cells: Vec<ConductCell>,
    pub reps: usize,
    pub r: usize,
    pub k: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for ConductStudyConfig {
    fn default() -> Self {
        Self {
            base: ConductScenario::default(),
            cells: Vec::new(),
            reps: 100,
            r: 2,
            k: 1,
            optimizer: OptimizerConfig::polish_only(),
        }
    }
}

/// Mean and standard deviation of one candidate's CV score in one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub cell: ConductCell,
    pub candidate: Partition,
    pub mean: f64,
    /// Sample standard deviation (divisor `n − 1`).
    pub sd: f64,
    /// Replications with a finite score for this candidate.
    pub count: usize,
}

/// How often a criterion picked one candidate in one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceRow {
    pub cell: ConductCell,
    pub criterion: Criterion,
    pub candidate: Partition,
    pub frequency: f64,
    /// Replications that entered the frequency.
    pub reps: usize,
}

#[derive(Clone, Debug, Default)]
pub struct ConductStudy {
    pub scores: Vec<ScoreRow>,
    pub choices: Vec<ChoiceRow>,
    /// `(cell, rep, message)` for replications that were excluded.
    pub failures: Vec<(String, u64, String)>,
    /// Largest equilibrium FOC residual over accepted markets.
    pub max_foc_residual: f64,
}

struct RepOutcome {
    cv_scores: Vec<f64>,
    cv_choice: usize,
    gmm_choice: usize,
    max_foc: f64,
}

fn run_rep(cfg: &ConductStudyConfig, cell: &ConductCell, candidates: &[Partition], rep: u64) -> Result<RepOutcome> {
    let scenario = ConductScenario {
        t: cell.t,
        alpha: cell.alpha,
        true_partition: cell.true_partition.clone(),
        ..cfg.base.clone()
    };
    let panel = simulate_panel(&scenario, rep)?;
    let data = panel.to_dataset()?;
    let models: Vec<ConductModel> = candidates
        .iter()
        .map(|p| ConductModel::new(p.clone(), panel.num_instruments()))
        .collect();
    let refs: Vec<&dyn MomentModel> = models.iter().map(|m| m as &dyn MomentModel).collect();

    let cv = cross_validate(
        &refs,
        &data,
        &CvConfig {
            r: cfg.r,
            k: cfg.k,
            weighting: WeightingSpec::InverseInstrumentGram,
            optimizer: cfg.optimizer.clone(),
            shuffle_seed: None,
        },
    )?;
    let fits = fit_all(&refs, &data, &WeightingSpec::InverseInstrumentGram, &cfg.optimizer);
    let [gmm, _, _] = in_sample_criteria(&refs, &fits, data.len())?;
    Ok(RepOutcome {
        cv_scores: cv.mean_scores(),
        cv_choice: cv.selected,
        gmm_choice: gmm.selected,
        max_foc: panel.markets.iter().map(|m| m.foc_residual).fold(0.0, f64::max),
    })
}

/// Simulates every cell `reps` times and tabulates CV scores and the
/// choices of CV and the in-sample GMM minimand. Replications within a
/// cell run in parallel and are reduced in replication order.
pub fn run_conduct_study(cfg: &ConductStudyConfig) -> Result<ConductStudy> {
    if cfg.reps == 0 {
        return Err(Error::config("reps must be at least 1"));
    }
    if cfg.cells.is_empty() {
        return Err(Error::config("no cells configured"));
    }
    let candidates = enumerate_partitions(cfg.base.j)?;
    let mut study = ConductStudy::default();
    for cell in &cfg.cells {
        if cell.true_partition.num_firms() != cfg.base.j {
            return Err(Error::config(format!(
                "true partition {} does not match J = {}",
                cell.true_partition, cfg.base.j
            )));
        }
        let label = cell.label();
        let outcomes: Vec<Result<RepOutcome>> = (0..cfg.reps as u64)
            .into_par_iter()
            .map(|rep| run_rep(cfg, cell, &candidates, rep))
            .collect();

        let n = candidates.len();
        let mut sums = vec![(0usize, 0.0f64, 0.0f64); n];
        let mut cv_counts = vec![0usize; n];
        let mut gmm_counts = vec![0usize; n];
        let mut ok = 0usize;
        let mut per_candidate: Vec<Vec<f64>> = vec![Vec::new(); n];
        for (rep, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(o) => {
                    ok += 1;
                    cv_counts[o.cv_choice] += 1;
                    gmm_counts[o.gmm_choice] += 1;
                    study.max_foc_residual = study.max_foc_residual.max(o.max_foc);
                    for (i, s) in o.cv_scores.into_iter().enumerate() {
                        if s.is_finite() {
                            per_candidate[i].push(s);
                        }
                    }
                }
                Err(e) => study.failures.push((label.clone(), rep as u64, e.to_string())),
            }
        }
        for (i, scores) in per_candidate.iter().enumerate() {
            let m = scores.len();
            let mean = scores.iter().sum::<f64>() / m as f64;
            let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
            sums[i] = (m, mean, var.sqrt());
        }
        for (i, cand) in candidates.iter().enumerate() {
            let (count, mean, sd) = sums[i];
            study.scores.push(ScoreRow {
                cell: cell.clone(),
                candidate: cand.clone(),
                mean,
                sd,
                count,
            });
        }
        for (criterion, counts) in [(Criterion::Cv, &cv_counts), (Criterion::Gmm, &gmm_counts)] {
            for (i, cand) in candidates.iter().enumerate() {
                study.choices.push(ChoiceRow {
                    cell: cell.clone(),
                    criterion,
                    candidate: cand.clone(),
                    frequency: counts[i] as f64 / ok as f64,
                    reps: ok,
                });
            }
        }
    }
    Ok(study)
}
