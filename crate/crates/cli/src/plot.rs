//! Long-format plot data: `series, x, y, stderr`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::bundle::{write_atomic, Table, CONFIG_FILE};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{HarnessError, Result};
use crate::experiments::{CONDUCT_CHOICE_TABLE, IV_TABLE, MPEC_TABLE, NULL_TABLE};

pub const PLOT_FILE: &str = "plot_data.csv";

struct Rows {
    path: PathBuf,
    header: csv::StringRecord,
    records: Vec<csv::StringRecord>,
}

impl Rows {
    fn read(path: PathBuf) -> Result<Self> {
        let mut reader = csv::Reader::from_path(&path).map_err(|source| HarnessError::Csv {
            path: path.clone(),
            source,
        })?;
        let header = reader
            .headers()
            .map_err(|source| HarnessError::Csv {
                path: path.clone(),
                source,
            })?
            .clone();
        let records = reader
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|source| HarnessError::Csv {
                path: path.clone(),
                source,
            })?;
        Ok(Self { path, header, records })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| HarnessError::Bundle {
            path: self.path.clone(),
            message: format!("missing column `{name}`"),
        })
    }

    fn number(&self, record: &csv::StringRecord, col: usize) -> Result<f64> {
        record[col].parse().map_err(|_| HarnessError::Bundle {
            path: self.path.clone(),
            message: format!("non-numeric value {:?}", &record[col]),
        })
    }
}

fn binomial_stderr(p: f64, n: f64) -> f64 {
    (p * (1.0 - p) / n).sqrt()
}

/// Series in order of first appearance, points in table order.
fn collect(points: Vec<(String, String, String, String)>) -> Table {
    let mut order: Vec<String> = Vec::new();
    for p in &points {
        if !order.contains(&p.0) {
            order.push(p.0.clone());
        }
    }
    let mut table = Table::new(PLOT_FILE, &["series", "x", "y", "stderr"]);
    for s in &order {
        for p in points.iter().filter(|p| &p.0 == s) {
            table.push(vec![p.0.clone(), p.1.clone(), p.2.clone(), p.3.clone()]);
        }
    }
    table
}

/// Reshapes a finished bundle into plot-ready series and writes them to
/// `plot_data.csv` inside the bundle.
///
/// * `iv_study`: one series per criterion (and `p2`, `alpha`), accuracy over `T`.
/// * `conduct_study`: one series per criterion, `alpha` and true partition;
///   frequency of choosing the true partition over `T`.
/// * `null_test_study`: rejection rate over `T`.
/// * `mpec_check`: largest parameter gap per instance.
pub fn emit_plot_data(bundle: &Path) -> Result<PathBuf> {
    let cfg_path = bundle.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(HarnessError::io(&cfg_path))?;
    let cfg = ExperimentConfig::parse(&text)?;
    let mut points = Vec::new();
    match cfg.experiment {
        ExperimentKind::IvStudy => {
            let rows = Rows::read(bundle.join(IV_TABLE))?;
            let [c, t, p2, a, acc, se] =
                ["criterion", "T", "p2", "alpha", "accuracy", "stderr"].map(|n| rows.column(n));
            let (c, t, p2, a, acc, se) = (c?, t?, p2?, a?, acc?, se?);
            for r in &rows.records {
                let series = format!("{} p2={} alpha={}", &r[c], &r[p2], &r[a]);
                points.push((series, r[t].to_string(), r[acc].to_string(), r[se].to_string()));
            }
        }
        ExperimentKind::ConductStudy => {
            let rows = Rows::read(bundle.join(CONDUCT_CHOICE_TABLE))?;
            let [c, t, a, tp, cand, f, n] =
                ["criterion", "T", "alpha", "true_partition", "candidate", "frequency", "reps"]
                    .map(|n| rows.column(n));
            let (c, t, a, tp, cand, f, n) = (c?, t?, a?, tp?, cand?, f?, n?);
            for r in rows.records.iter().filter(|r| r[tp] == r[cand]) {
                let series = format!("{} alpha={} true={}", &r[c], &r[a], &r[tp]);
                let se = binomial_stderr(rows.number(r, f)?, rows.number(r, n)?);
                points.push((series, r[t].to_string(), r[f].to_string(), se.to_string()));
            }
        }
        ExperimentKind::NullTestStudy => {
            let rows = Rows::read(bundle.join(NULL_TABLE))?;
            let (t, rate, n) = (rows.column("T")?, rows.column("rejection_rate")?, rows.column("reps")?);
            for r in &rows.records {
                let se = binomial_stderr(rows.number(r, rate)?, rows.number(r, n)?);
                points.push(("rejection_rate".into(), r[t].to_string(), r[rate].to_string(), se.to_string()));
            }
        }
        ExperimentKind::MpecCheck => {
            let rows = Rows::read(bundle.join(MPEC_TABLE))?;
            let (i, d) = (rows.column("instance")?, rows.column("max_theta_diff")?);
            for r in &rows.records {
                points.push(("max_theta_diff".into(), r[i].to_string(), r[d].to_string(), String::new()));
            }
        }
    }
    let out = bundle.join(PLOT_FILE);
    write_atomic(&out, &collect(points).to_csv())?;
    Ok(out)
}
