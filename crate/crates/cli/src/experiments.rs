//! Turns a resolved [`ExperimentConfig`] into a [`ResultBundle`].

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use cvgmm_core::conduct::{run_conduct_study, ConductCell, ConductScenario, ConductStudyConfig};
use cvgmm_core::iv_lab::{candidate_columns, generate_iv_data, random_design, run_iv_study, IvDesign};
use cvgmm_core::mpec::{cross_validate_mpec, estimate_mpec, ConstrainedModel, LinearIvMpec, MpecConfig};
use cvgmm_core::selection::{cross_validate, CvConfig};
use cvgmm_core::synthetic::{run_null_study, NullDesign};
use cvgmm_core::{estimate, LinearIvModel, MomentModel, OptimizerConfig, WeightingSpec};

use crate::bundle::{ResultBundle, Table, SCHEMA_VERSION};
use crate::config::{ConductSection, Design, ExperimentConfig, IvSection, MpecSection, NullSection};
use crate::error::Result;

pub const IV_TABLE: &str = "iv_accuracy.csv";
pub const CONDUCT_SCORE_TABLE: &str = "conduct_scores.csv";
pub const CONDUCT_CHOICE_TABLE: &str = "conduct_choice.csv";
pub const NULL_TABLE: &str = "null_test.csv";
pub const NULL_DRAWS_TABLE: &str = "null_statistics.csv";
pub const MPEC_TABLE: &str = "mpec_check.csv";

/// Runs `cfg` on a dedicated pool of `cfg.parallelism` workers.
///
/// Every task is keyed by `(seed, replication)` and results are reduced in
/// key order, so the bundle does not depend on the pool size.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultBundle> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.parallelism).build()?;
    let mut opt = cfg.optimizer.clone();
    opt.seed = cfg.seed;
    let (tables, body, failures) = pool.install(|| match &cfg.design {
        Design::Iv(s) => iv_study(s, cfg.seed, &opt),
        Design::Conduct(s) => conduct_study(s, cfg.seed, &opt),
        Design::NullTest(s) => null_test_study(s, cfg.seed, &opt),
        Design::Mpec(s) => mpec_check(s, cfg.seed),
    })?;
    let mut summary = Map::new();
    summary.insert("schema_version".into(), json!(SCHEMA_VERSION));
    summary.insert("experiment".into(), json!(cfg.experiment.name()));
    summary.insert("seed".into(), json!(cfg.seed));
    summary.insert("failures".into(), json!(failures.len()));
    summary.extend(body);
    Ok(ResultBundle {
        resolved_config: cfg.render(),
        tables,
        summary: Value::Object(summary),
        failures,
    })
}

type Outcome = (Vec<Table>, Map<String, Value>, Vec<String>);

/// Shortest round-trip form; scientific notation for tiny magnitudes.
fn num(x: f64) -> String {
    format!("{x:?}")
}

/// JSON has no infinities or NaN; they become `null`.
fn json_num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn nested(map: &mut BTreeMap<String, BTreeMap<String, Value>>, outer: &str, inner: String, v: Value) {
    map.entry(outer.to_string()).or_default().insert(inner, v);
}

fn iv_study(s: &IvSection, seed: u64, opt: &OptimizerConfig) -> Result<Outcome> {
    let mut table = Table::new(
        IV_TABLE,
        &["criterion", "T", "p1", "p2", "alpha", "accuracy", "stderr", "reps", "failures"],
    );
    let mut accuracy = BTreeMap::new();
    let mut failures = Vec::new();
    for &alpha in &s.alpha {
        for &p2 in &s.p2 {
            for &t in &s.t {
                let design = IvDesign {
                    t,
                    p1: s.p1,
                    p2,
                    c1: s.c1,
                    c2: s.c2,
                    alpha,
                    beta1: s.beta1,
                    beta2: s.beta2,
                    noise_sd: s.noise_sd,
                    r: s.r,
                    k: s.k,
                    reps: s.reps,
                    seed,
                };
                let result = run_iv_study(&design, &s.criteria, opt)?;
                let cell = format!("T={t};p1={};p2={p2};alpha={alpha}", s.p1);
                for row in &result.rows {
                    table.push(vec![
                        row.criterion.to_string(),
                        row.t.to_string(),
                        row.p1.to_string(),
                        row.p2.to_string(),
                        num(row.alpha),
                        num(row.accuracy),
                        num(row.stderr),
                        row.reps.to_string(),
                        row.failures.to_string(),
                    ]);
                    nested(&mut accuracy, row.criterion.label(), cell.clone(), json_num(row.accuracy));
                }
                for (rep, criterion, msg) in &result.failures {
                    failures.push(format!("{cell}\trep={rep}\t{criterion}\t{msg}"));
                }
            }
        }
    }
    let mut body = Map::new();
    body.insert("accuracy".into(), json!(accuracy));
    Ok((vec![table], body, failures))
}

fn conduct_study(s: &ConductSection, seed: u64, opt: &OptimizerConfig) -> Result<Outcome> {
    let mut cells = Vec::new();
    for p in &s.true_partitions {
        for &alpha in &s.alpha {
            for &t in &s.t {
                cells.push(ConductCell {
                    t,
                    alpha,
                    true_partition: p.clone(),
                });
            }
        }
    }
    let study = run_conduct_study(&ConductStudyConfig {
        base: ConductScenario {
            j: s.j,
            beta: s.beta,
            gamma: s.gamma,
            char_sd: s.char_sd,
            shock_sd: s.shock_sd,
            market_size: s.market_size,
            seed,
            ..ConductScenario::default()
        },
        cells,
        reps: s.reps,
        r: s.r,
        k: s.k,
        optimizer: opt.clone(),
    })?;

    let mut scores = Table::new(
        CONDUCT_SCORE_TABLE,
        &["T", "alpha", "true_partition", "candidate", "mean", "sd", "count"],
    );
    let mut true_score = BTreeMap::new();
    for row in &study.scores {
        scores.push(vec![
            row.cell.t.to_string(),
            num(row.cell.alpha),
            row.cell.true_partition.to_string(),
            row.candidate.to_string(),
            num(row.mean),
            num(row.sd),
            row.count.to_string(),
        ]);
        if row.candidate == row.cell.true_partition {
            true_score.insert(row.cell.label(), json_num(row.mean));
        }
    }
    let mut choices = Table::new(
        CONDUCT_CHOICE_TABLE,
        &["criterion", "T", "alpha", "true_partition", "candidate", "frequency", "reps"],
    );
    let mut true_choice = BTreeMap::new();
    for row in &study.choices {
        choices.push(vec![
            row.criterion.to_string(),
            row.cell.t.to_string(),
            num(row.cell.alpha),
            row.cell.true_partition.to_string(),
            row.candidate.to_string(),
            num(row.frequency),
            row.reps.to_string(),
        ]);
        if row.candidate == row.cell.true_partition {
            nested(&mut true_choice, row.criterion.label(), row.cell.label(), json_num(row.frequency));
        }
    }
    let failures = study
        .failures
        .iter()
        .map(|(cell, rep, msg)| format!("{cell}\trep={rep}\t{msg}"))
        .collect();
    let mut body = Map::new();
    body.insert("true_selection".into(), json!(true_choice));
    body.insert("true_mean_score".into(), json!(true_score));
    body.insert("max_foc_residual".into(), json_num(study.max_foc_residual));
    Ok((vec![scores, choices], body, failures))
}

fn null_test_study(s: &NullSection, seed: u64, opt: &OptimizerConfig) -> Result<Outcome> {
    let mut table = Table::new(
        NULL_TABLE,
        &[
            "T",
            "reps",
            "failures",
            "rejection_rate",
            "mean",
            "variance",
            "ks_statistic",
            "ks_p_value",
        ],
    );
    let mut draws = Table::new(NULL_DRAWS_TABLE, &["T", "draw", "statistic"]);
    let mut rejection = BTreeMap::new();
    let mut ks = BTreeMap::new();
    let mut failures = Vec::new();
    for &t in &s.t {
        let study = run_null_study(
            &NullDesign {
                t,
                reps: s.reps,
                seed,
                variances: s.variances,
                r: s.r,
                k: s.k,
                normalization: s.normalization,
                mode: s.variance_mode,
                level: s.level,
            },
            opt,
        )?;
        table.push(vec![
            t.to_string(),
            study.statistics.len().to_string(),
            study.failures.to_string(),
            num(study.rejection_rate),
            num(study.mean),
            num(study.variance),
            num(study.ks_statistic),
            num(study.ks_p_value),
        ]);
        for (i, x) in study.statistics.iter().enumerate() {
            draws.push(vec![t.to_string(), i.to_string(), num(*x)]);
        }
        if study.failures > 0 {
            failures.push(format!("T={t}\t{} replications excluded", study.failures));
        }
        rejection.insert(format!("T={t}"), json_num(study.rejection_rate));
        ks.insert(format!("T={t}"), json_num(study.ks_p_value));
    }
    let mut body = Map::new();
    body.insert("rejection_rate".into(), json!(rejection));
    body.insert("ks_p_value".into(), json!(ks));
    Ok((vec![table, draws], body, failures))
}

struct MpecInstance {
    row: Vec<String>,
    theta_diff: f64,
    agree: bool,
}

fn mpec_instance(s: &MpecSection, seed: u64, index: u64) -> std::result::Result<MpecInstance, String> {
    let design = random_design(seed, index, s.t);
    let data = generate_iv_data(&design, 0).to_dataset().map_err(|e| e.to_string())?;
    let columns = candidate_columns(design.p1, design.p2, design.c1, design.c2);
    let gmm: Vec<LinearIvModel> = columns
        .iter()
        .enumerate()
        .map(|(i, (x, z))| LinearIvModel::with_columns(format!("model-{}", i + 1), 0, x.clone(), z.clone()))
        .collect();
    let mpec: Vec<LinearIvMpec> = columns
        .iter()
        .enumerate()
        .map(|(i, (x, z))| LinearIvMpec::with_columns(format!("model-{}", i + 1), 0, x.clone(), z.clone()))
        .collect();
    let spec = WeightingSpec::InverseInstrumentGram;
    let opt = OptimizerConfig::polish_only();
    let mcfg = MpecConfig::default();

    let mut theta_diff = 0.0f64;
    let mut feasibility = 0.0f64;
    for (g, m) in gmm.iter().zip(&mpec) {
        let a = estimate(g, &data, &spec, &opt).map_err(|e| e.to_string())?;
        let b = estimate_mpec(m, &data, &spec, &mcfg).map_err(|e| e.to_string())?;
        theta_diff = theta_diff.max((&a.theta_hat - &b.theta).amax());
        feasibility = feasibility.max(b.feasibility_residual);
    }
    let cv = CvConfig {
        r: s.r,
        k: s.k,
        weighting: spec,
        optimizer: opt,
        shuffle_seed: None,
    };
    let grefs: Vec<&dyn MomentModel> = gmm.iter().map(|m| m as &dyn MomentModel).collect();
    let mrefs: Vec<&dyn ConstrainedModel> = mpec.iter().map(|m| m as &dyn ConstrainedModel).collect();
    let a = cross_validate(&grefs, &data, &cv).map_err(|e| e.to_string())?;
    let b = cross_validate_mpec(&mrefs, &data, &cv, &mcfg).map_err(|e| e.to_string())?;
    let score_diff = a
        .mean_scores()
        .iter()
        .zip(b.mean_scores())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let agree = a.selected == b.selected;
    Ok(MpecInstance {
        row: vec![
            index.to_string(),
            design.p1.to_string(),
            design.p2.to_string(),
            design.c1.to_string(),
            design.c2.to_string(),
            num(theta_diff),
            num(feasibility),
            (a.selected + 1).to_string(),
            (b.selected + 1).to_string(),
            num(score_diff),
        ],
        theta_diff,
        agree,
    })
}

fn mpec_check(s: &MpecSection, seed: u64) -> Result<Outcome> {
    let mut table = Table::new(
        MPEC_TABLE,
        &[
            "instance",
            "p1",
            "p2",
            "c1",
            "c2",
            "max_theta_diff",
            "max_feasibility",
            "gmm_selected",
            "mpec_selected",
            "max_score_diff",
        ],
    );
    let results: Vec<_> = (0..s.instances as u64)
        .into_par_iter()
        .map(|i| mpec_instance(s, seed, i))
        .collect();
    let mut failures = Vec::new();
    let (mut worst, mut agree, mut ok) = (0.0f64, 0usize, 0usize);
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(inst) => {
                ok += 1;
                worst = worst.max(inst.theta_diff);
                agree += usize::from(inst.agree);
                table.push(inst.row);
            }
            Err(msg) => failures.push(format!("instance={i}\t{msg}")),
        }
    }
    let mut body = Map::new();
    body.insert("instances".into(), json!(ok));
    body.insert("max_theta_diff".into(), json_num(worst));
    body.insert(
        "selection_agreement".into(),
        json_num(if ok > 0 { agree as f64 / ok as f64 } else { f64::NAN }),
    );
    Ok((vec![table], body, failures))
}
