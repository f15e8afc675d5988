//! Experiment configuration files.
//!
//! The format is flat `key = value` text, one entry per line:
//!
//! ```text
//! # comments start with '#'
//! experiment = iv_study
//! seed = 7
//! iv.t = 100, 200, 400
//! iv.criteria = CV, GMM
//! ```
//!
//! Keys are either global (`experiment`, `seed`, `parallelism`,
//! `output_dir`, `optimizer.*`) or carry the dotted prefix of the selected
//! experiment (`iv.`, `conduct.`, `null.`, `mpec.`). Lists are comma
//! separated; commas inside `{...}` do not split, so partitions can be
//! written as `{1,2}{3}`. Unknown keys, repeated keys and keys of another
//! experiment are errors. Every key has a default, and [`ExperimentConfig::render`]
//! prints the fully resolved file, which parses back to the same config.

use std::fmt::{self, Display};
use std::str::FromStr;

use cvgmm_core::conduct::{Partition, MAX_FIRMS};
use cvgmm_core::hypothesis::{Normalization, VarianceMode};
use cvgmm_core::selection::Criterion;
use cvgmm_core::OptimizerConfig;

use crate::error::{HarnessError, Result};

/// Upper bound on the worker pool size.
pub const MAX_PARALLELISM: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    IvStudy,
    ConductStudy,
    NullTestStudy,
    MpecCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::IvStudy,
        ExperimentKind::ConductStudy,
        ExperimentKind::NullTestStudy,
        ExperimentKind::MpecCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::IvStudy => "iv_study",
            ExperimentKind::ConductStudy => "conduct_study",
            ExperimentKind::NullTestStudy => "null_test_study",
            ExperimentKind::MpecCheck => "mpec_check",
        }
    }

    /// Key prefix of the experiment's design section.
    pub fn section(self) -> &'static str {
        match self {
            ExperimentKind::IvStudy => "iv",
            ExperimentKind::ConductStudy => "conduct",
            ExperimentKind::NullTestStudy => "null",
            ExperimentKind::MpecCheck => "mpec",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::IvStudy => "linear IV selection accuracy of CV and in-sample GMM criteria",
            ExperimentKind::ConductStudy => "collusion detection in simulated logit oligopolies",
            ExperimentKind::NullTestStudy => "null distribution of the CV comparison statistic",
            ExperimentKind::MpecCheck => "MPEC versus eliminated-parameter GMM on random linear IV models",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IvSection {
    pub t: Vec<usize>,
    pub p1: usize,
    pub p2: Vec<usize>,
    pub c1: usize,
    pub c2: usize,
    pub alpha: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub noise_sd: f64,
    pub r: usize,
    pub k: usize,
    pub reps: usize,
    pub criteria: Vec<Criterion>,
}

impl Default for IvSection {
    fn default() -> Self {
        Self {
            t: vec![100, 200, 400, 800, 1600],
            p1: 3,
            p2: vec![9],
            c1: 10,
            c2: 10,
            alpha: vec![12.0],
            beta1: 5.0,
            beta2: 1.0,
            noise_sd: 1.0,
            r: 2,
            k: 1,
            reps: 500,
            criteria: Criterion::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConductSection {
    pub t: Vec<usize>,
    pub alpha: Vec<f64>,
    pub true_partitions: Vec<Partition>,
    pub j: usize,
    pub beta: [f64; 2],
    pub gamma: [f64; 3],
    pub char_sd: f64,
    pub shock_sd: f64,
    pub market_size: f64,
    pub reps: usize,
    pub r: usize,
    pub k: usize,
}

impl Default for ConductSection {
    fn default() -> Self {
        Self {
            t: vec![25, 50, 75, 100],
            alpha: vec![-0.1],
            true_partitions: vec![Partition::collusive(3)],
            j: 3,
            beta: [2.0, 1.0],
            gamma: [3.0, 0.0, 1.0],
            char_sd: 0.1,
            shock_sd: 1.0,
            market_size: 1.0,
            reps: 100,
            r: 2,
            k: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NullSection {
    pub t: Vec<usize>,
    pub reps: usize,
    pub variances: [f64; 2],
    pub r: usize,
    pub k: usize,
    pub normalization: Normalization,
    pub variance_mode: VarianceMode,
    pub level: f64,
}

impl Default for NullSection {
    fn default() -> Self {
        Self {
            t: vec![2000],
            reps: 1000,
            variances: [1.3, 0.7],
            r: 2,
            k: 1,
            normalization: Normalization::Studentized,
            variance_mode: VarianceMode::GeneralSplit,
            level: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpecSection {
    pub instances: usize,
    pub t: usize,
    pub r: usize,
    pub k: usize,
}

impl Default for MpecSection {
    fn default() -> Self {
        Self {
            instances: 50,
            t: 200,
            r: 2,
            k: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Design {
    Iv(IvSection),
    Conduct(ConductSection),
    NullTest(NullSection),
    Mpec(MpecSection),
}

impl Design {
    fn default_for(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::IvStudy => Design::Iv(IvSection::default()),
            ExperimentKind::ConductStudy => Design::Conduct(ConductSection::default()),
            ExperimentKind::NullTestStudy => Design::NullTest(NullSection::default()),
            ExperimentKind::MpecCheck => Design::Mpec(MpecSection::default()),
        }
    }
}

/// A fully resolved experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub parallelism: usize,
    /// Bundle directory; relative paths resolve against the output root.
    pub output_dir: String,
    /// `seed` is kept equal to the top-level seed.
    pub optimizer: OptimizerConfig,
    pub design: Design,
}

impl ExperimentConfig {
    /// Defaults for `kind`.
    pub fn new(kind: ExperimentKind) -> Self {
        // The synthetic null design has a bimodal objective in small
        // samples and needs the multistart search; the linear and conduct
        // designs are polished from a single (warm) start.
        let optimizer = match kind {
            ExperimentKind::NullTestStudy => OptimizerConfig::default(),
            _ => OptimizerConfig::polish_only(),
        };
        Self {
            experiment: kind,
            seed: 0,
            parallelism: 1,
            output_dir: kind.name().to_string(),
            optimizer,
            design: Design::default_for(kind),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(HarnessError::Syntax {
                    line: line_no,
                    message: format!("expected `key = value`, got {line:?}"),
                });
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(HarnessError::Syntax {
                    line: line_no,
                    message: "empty key".into(),
                });
            }
            if let Some((first, _, _)) = entries.iter().find(|e| e.1 == key) {
                return Err(HarnessError::Syntax {
                    line: line_no,
                    message: format!("key `{key}` already set on line {first}"),
                });
            }
            entries.push((line_no, key, value.trim().to_string()));
        }

        let kind_value = entries
            .iter()
            .find(|e| e.1 == "experiment")
            .map(|e| e.2.clone())
            .ok_or(HarnessError::MissingKey("experiment"))?;
        let kind = ExperimentKind::parse(&kind_value).ok_or_else(|| {
            invalid(
                "experiment",
                format!(
                    "unknown experiment {kind_value:?}; expected one of {}",
                    ExperimentKind::ALL.map(|k| k.name()).join(", ")
                ),
            )
        })?;

        let mut cfg = Self::new(kind);
        for (line, key, value) in &entries {
            cfg.set(*line, key, value)?;
        }
        cfg.optimizer.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => Ok(()),
            "seed" => set_scalar(&mut self.seed, key, value),
            "parallelism" => set_scalar(&mut self.parallelism, key, value),
            "output_dir" => {
                self.output_dir = value.to_string();
                Ok(())
            }
            "optimizer.starts" => set_scalar(&mut self.optimizer.starts, key, value),
            "optimizer.simplex_max_evals" => set_scalar(&mut self.optimizer.simplex_max_evals, key, value),
            "optimizer.polish_max_iter" => set_scalar(&mut self.optimizer.polish_max_iter, key, value),
            _ => {
                let (prefix, field) = key.split_once('.').unwrap_or(("", key));
                if prefix == self.experiment.section() {
                    let known = match &mut self.design {
                        Design::Iv(s) => s.set(field, key, value)?,
                        Design::Conduct(s) => s.set(field, key, value)?,
                        Design::NullTest(s) => s.set(field, key, value)?,
                        Design::Mpec(s) => s.set(field, key, value)?,
                    };
                    if known {
                        return Ok(());
                    }
                } else if let Some(other) = ExperimentKind::ALL.into_iter().find(|k| k.section() == prefix) {
                    return Err(HarnessError::Syntax {
                        line,
                        message: format!("key `{key}` belongs to experiment {other}, not {}", self.experiment),
                    });
                }
                Err(HarnessError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
    }

    /// Range checks; every error names the offending field.
    pub fn validate(&self) -> Result<()> {
        ensure(
            (1..=MAX_PARALLELISM).contains(&self.parallelism),
            "parallelism",
            format!("must lie in 1..={MAX_PARALLELISM}"),
        )?;
        ensure(!self.output_dir.trim().is_empty(), "output_dir", "must not be empty")?;
        ensure(self.optimizer.starts >= 1, "optimizer.starts", "must be at least 1")?;
        ensure(
            self.optimizer.polish_max_iter >= 1,
            "optimizer.polish_max_iter",
            "must be at least 1",
        )?;
        match &self.design {
            Design::Iv(s) => s.validate(),
            Design::Conduct(s) => s.validate(),
            Design::NullTest(s) => s.validate(),
            Design::Mpec(s) => s.validate(),
        }
    }

    /// The resolved configuration, defaults included, in the input format.
    pub fn render(&self) -> String {
        let mut out = String::from("# resolved configuration\n");
        let mut line = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        line("experiment", self.experiment.to_string());
        line("seed", self.seed.to_string());
        line("parallelism", self.parallelism.to_string());
        line("output_dir", self.output_dir.clone());
        line("optimizer.starts", self.optimizer.starts.to_string());
        line("optimizer.simplex_max_evals", self.optimizer.simplex_max_evals.to_string());
        line("optimizer.polish_max_iter", self.optimizer.polish_max_iter.to_string());
        let prefix = self.experiment.section();
        let entries = match &self.design {
            Design::Iv(s) => s.entries(),
            Design::Conduct(s) => s.entries(),
            Design::NullTest(s) => s.entries(),
            Design::Mpec(s) => s.entries(),
        };
        for (k, v) in entries {
            line(&format!("{prefix}.{k}"), v);
        }
        out
    }
}

impl IvSection {
    fn set(&mut self, field: &str, key: &str, value: &str) -> Result<bool> {
        match field {
            "t" => self.t = parse_list(key, value)?,
            "p1" => set_scalar(&mut self.p1, key, value)?,
            "p2" => self.p2 = parse_list(key, value)?,
            "c1" => set_scalar(&mut self.c1, key, value)?,
            "c2" => set_scalar(&mut self.c2, key, value)?,
            "alpha" => self.alpha = parse_list(key, value)?,
            "beta1" => set_scalar(&mut self.beta1, key, value)?,
            "beta2" => set_scalar(&mut self.beta2, key, value)?,
            "noise_sd" => set_scalar(&mut self.noise_sd, key, value)?,
            "r" => set_scalar(&mut self.r, key, value)?,
            "k" => set_scalar(&mut self.k, key, value)?,
            "reps" => set_scalar(&mut self.reps, key, value)?,
            "criteria" => {
                self.criteria = split_list(value)
                    .iter()
                    .map(|s| Criterion::parse(s).ok_or_else(|| invalid(key, format!("unknown criterion {s:?}"))))
                    .collect::<Result<_>>()?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn validate(&self) -> Result<()> {
        check_cv("iv", self.r, self.k)?;
        check_sizes("iv.t", &self.t, 2 * self.r)?;
        ensure(self.p1 >= 1, "iv.p1", "must be at least 1")?;
        ensure(!self.p2.is_empty(), "iv.p2", "must not be empty")?;
        ensure(self.p2.iter().all(|&p| p >= 1), "iv.p2", "entries must be at least 1")?;
        ensure(self.c1 >= self.p1, "iv.c1", "must be at least iv.p1")?;
        ensure(
            self.p2.iter().all(|&p| self.c2 >= p),
            "iv.c2",
            "must be at least every entry of iv.p2",
        )?;
        ensure(!self.alpha.is_empty(), "iv.alpha", "must not be empty")?;
        ensure(
            self.alpha.iter().all(|a| a.is_finite() && *a >= 0.0),
            "iv.alpha",
            "entries must be finite and nonnegative",
        )?;
        ensure(self.beta1.is_finite(), "iv.beta1", "must be finite")?;
        ensure(self.beta2.is_finite(), "iv.beta2", "must be finite")?;
        ensure(
            self.noise_sd.is_finite() && self.noise_sd > 0.0,
            "iv.noise_sd",
            "must be positive",
        )?;
        ensure(self.reps >= 1, "iv.reps", "must be at least 1")?;
        ensure(!self.criteria.is_empty(), "iv.criteria", "must not be empty")?;
        ensure(no_duplicates(&self.criteria), "iv.criteria", "contains duplicates")
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("t", join(&self.t)),
            ("p1", self.p1.to_string()),
            ("p2", join(&self.p2)),
            ("c1", self.c1.to_string()),
            ("c2", self.c2.to_string()),
            ("alpha", join(&self.alpha)),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("noise_sd", self.noise_sd.to_string()),
            ("r", self.r.to_string()),
            ("k", self.k.to_string()),
            ("reps", self.reps.to_string()),
            ("criteria", join(&self.criteria)),
        ]
    }
}

impl ConductSection {
    fn set(&mut self, field: &str, key: &str, value: &str) -> Result<bool> {
        match field {
            "t" => self.t = parse_list(key, value)?,
            "alpha" => self.alpha = parse_list(key, value)?,
            "true_partitions" => {
                self.true_partitions = split_list(value)
                    .iter()
                    .map(|s| Partition::parse(s).map_err(|e| invalid(key, e.to_string())))
                    .collect::<Result<_>>()?
            }
            "j" => set_scalar(&mut self.j, key, value)?,
            "beta" => self.beta = parse_array(key, value)?,
            "gamma" => self.gamma = parse_array(key, value)?,
            "char_sd" => set_scalar(&mut self.char_sd, key, value)?,
            "shock_sd" => set_scalar(&mut self.shock_sd, key, value)?,
            "market_size" => set_scalar(&mut self.market_size, key, value)?,
            "reps" => set_scalar(&mut self.reps, key, value)?,
            "r" => set_scalar(&mut self.r, key, value)?,
            "k" => set_scalar(&mut self.k, key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn validate(&self) -> Result<()> {
        check_cv("conduct", self.r, self.k)?;
        check_sizes("conduct.t", &self.t, self.r.max(2))?;
        ensure(!self.alpha.is_empty(), "conduct.alpha", "must not be empty")?;
        ensure(
            self.alpha.iter().all(|a| a.is_finite() && *a < 0.0),
            "conduct.alpha",
            "entries must be negative",
        )?;
        ensure(
            (2..=MAX_FIRMS).contains(&self.j),
            "conduct.j",
            format!("must lie in 2..={MAX_FIRMS}"),
        )?;
        ensure(
            !self.true_partitions.is_empty(),
            "conduct.true_partitions",
            "must not be empty",
        )?;
        ensure(
            self.true_partitions.iter().all(|p| p.num_firms() == self.j),
            "conduct.true_partitions",
            "every partition must cover firms 1..=conduct.j",
        )?;
        ensure(
            no_duplicates(&self.true_partitions),
            "conduct.true_partitions",
            "contains duplicates",
        )?;
        ensure(
            self.beta.iter().chain(&self.gamma).all(|v| v.is_finite()),
            "conduct.beta",
            "coefficients must be finite",
        )?;
        ensure(positive(self.char_sd), "conduct.char_sd", "must be positive")?;
        ensure(positive(self.shock_sd), "conduct.shock_sd", "must be positive")?;
        ensure(positive(self.market_size), "conduct.market_size", "must be positive")?;
        ensure(self.reps >= 1, "conduct.reps", "must be at least 1")
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("t", join(&self.t)),
            ("alpha", join(&self.alpha)),
            ("true_partitions", join(&self.true_partitions)),
            ("j", self.j.to_string()),
            ("beta", join(&self.beta)),
            ("gamma", join(&self.gamma)),
            ("char_sd", self.char_sd.to_string()),
            ("shock_sd", self.shock_sd.to_string()),
            ("market_size", self.market_size.to_string()),
            ("reps", self.reps.to_string()),
            ("r", self.r.to_string()),
            ("k", self.k.to_string()),
        ]
    }
}

fn normalization_name(n: Normalization) -> &'static str {
    match n {
        Normalization::Studentized => "studentized",
        Normalization::Variance => "variance",
    }
}

fn variance_mode_name(m: VarianceMode) -> &'static str {
    match m {
        VarianceMode::GeneralSplit => "general",
        VarianceMode::IndependentSplits => "independent",
    }
}

impl NullSection {
    fn set(&mut self, field: &str, key: &str, value: &str) -> Result<bool> {
        match field {
            "t" => self.t = parse_list(key, value)?,
            "reps" => set_scalar(&mut self.reps, key, value)?,
            "variances" => self.variances = parse_array(key, value)?,
            "r" => set_scalar(&mut self.r, key, value)?,
            "k" => set_scalar(&mut self.k, key, value)?,
            "normalization" => {
                self.normalization = [Normalization::Studentized, Normalization::Variance]
                    .into_iter()
                    .find(|n| normalization_name(*n) == value)
                    .ok_or_else(|| invalid(key, "expected `studentized` or `variance`"))?
            }
            "variance_mode" => {
                self.variance_mode = [VarianceMode::GeneralSplit, VarianceMode::IndependentSplits]
                    .into_iter()
                    .find(|m| variance_mode_name(*m) == value)
                    .ok_or_else(|| invalid(key, "expected `general` or `independent`"))?
            }
            "level" => set_scalar(&mut self.level, key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn validate(&self) -> Result<()> {
        check_cv("null", self.r, self.k)?;
        check_sizes("null.t", &self.t, 2 * self.r)?;
        ensure(self.reps >= 2, "null.reps", "must be at least 2")?;
        ensure(
            self.variances.iter().all(|v| positive(*v)),
            "null.variances",
            "must be positive",
        )?;
        ensure(self.level > 0.0 && self.level < 1.0, "null.level", "must lie in (0, 1)")
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("t", join(&self.t)),
            ("reps", self.reps.to_string()),
            ("variances", join(&self.variances)),
            ("r", self.r.to_string()),
            ("k", self.k.to_string()),
            ("normalization", normalization_name(self.normalization).into()),
            ("variance_mode", variance_mode_name(self.variance_mode).into()),
            ("level", self.level.to_string()),
        ]
    }
}

impl MpecSection {
    fn set(&mut self, field: &str, key: &str, value: &str) -> Result<bool> {
        match field {
            "instances" => set_scalar(&mut self.instances, key, value)?,
            "t" => set_scalar(&mut self.t, key, value)?,
            "r" => set_scalar(&mut self.r, key, value)?,
            "k" => set_scalar(&mut self.k, key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn validate(&self) -> Result<()> {
        check_cv("mpec", self.r, self.k)?;
        ensure(self.instances >= 1, "mpec.instances", "must be at least 1")?;
        // Each training subset must hold more rows than the largest model
        // has instruments.
        ensure(self.t >= 8 * self.r, "mpec.t", format!("must be at least {}", 8 * self.r))
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("instances", self.instances.to_string()),
            ("t", self.t.to_string()),
            ("r", self.r.to_string()),
            ("k", self.k.to_string()),
        ]
    }
}

fn invalid(field: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::InvalidValue {
        field: field.to_string(),
        message: message.into(),
    }
}

fn ensure(ok: bool, field: &str, message: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(invalid(field, message))
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn check_cv(section: &str, r: usize, k: usize) -> Result<()> {
    ensure(r >= 2, &format!("{section}.r"), "must be at least 2")?;
    ensure(k >= 1 && k < r, &format!("{section}.k"), format!("must lie in 1..{r}"))
}

fn check_sizes(field: &str, t: &[usize], min: usize) -> Result<()> {
    ensure(!t.is_empty(), field, "must not be empty")?;
    ensure(t.iter().all(|&v| v >= min), field, format!("entries must be at least {min}"))?;
    ensure(no_duplicates(t), field, "contains duplicates")
}

fn no_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items.iter().enumerate().all(|(i, a)| !items[..i].contains(a))
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

/// Splits on commas that are not inside braces.
fn split_list(value: &str) -> Vec<String> {
    let mut items = Vec::new();
    let mut depth = 0i32;
    let mut current = String::new();
    for ch in value.chars() {
        match ch {
            '{' => depth += 1,
            '}' => depth -= 1,
            ',' if depth == 0 => {
                items.push(current.trim().to_string());
                current.clear();
                continue;
            }
            _ => {}
        }
        current.push(ch);
    }
    items.push(current.trim().to_string());
    if items.len() == 1 && items[0].is_empty() {
        items.clear();
    }
    items
}

fn parse_scalar<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    if value.is_empty() {
        return Err(invalid(key, "missing value"));
    }
    value.parse().map_err(|e: T::Err| invalid(key, format!("{value:?}: {e}")))
}

fn set_scalar<T: FromStr>(slot: &mut T, key: &str, value: &str) -> Result<()>
where
    T::Err: Display,
{
    *slot = parse_scalar(key, value)?;
    Ok(())
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    let items = split_list(value);
    if items.is_empty() {
        return Err(invalid(key, "missing value"));
    }
    items.iter().map(|s| parse_scalar(key, s)).collect()
}

fn parse_array<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let v: Vec<f64> = parse_list(key, value)?;
    v.try_into()
        .map_err(|v: Vec<f64>| invalid(key, format!("expected {N} values, got {}", v.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_render() {
        for kind in ExperimentKind::ALL {
            let cfg = ExperimentConfig::parse(&format!("experiment = {kind}\n")).unwrap();
            assert_eq!(ExperimentConfig::parse(&cfg.render()).unwrap(), cfg);
        }
    }

    #[test]
    fn overrides_apply() {
        let cfg = ExperimentConfig::parse(
            "experiment = conduct_study\nseed = 9\nconduct.true_partitions = {1,2}{3}, {1}{2}{3}\nconduct.alpha = -0.3\n",
        )
        .unwrap();
        let Design::Conduct(s) = &cfg.design else { panic!() };
        assert_eq!(s.true_partitions.len(), 2);
        assert_eq!(s.true_partitions[0].to_string(), "{1,2}{3}");
        assert_eq!(s.alpha, vec![-0.3]);
        assert_eq!(cfg.optimizer.seed, 9);
    }

    #[test]
    fn unknown_and_foreign_keys_are_rejected() {
        let e = ExperimentConfig::parse("experiment = iv_study\niv.tt = 3\n").unwrap_err();
        assert!(matches!(e, HarnessError::UnknownKey { line: 2, .. }), "{e}");
        let e = ExperimentConfig::parse("experiment = iv_study\nconduct.t = 3\n").unwrap_err();
        assert!(e.to_string().contains("belongs to experiment conduct_study"), "{e}");
        let e = ExperimentConfig::parse("experiment = iv_study\nseed = 1\nseed = 2\n").unwrap_err();
        assert!(e.to_string().contains("already set"), "{e}");
    }

    #[test]
    fn range_errors_name_the_field() {
        let e = ExperimentConfig::parse("experiment = iv_study\niv.reps = 0\n").unwrap_err();
        assert!(matches!(&e, HarnessError::InvalidValue { field, .. } if field == "iv.reps"), "{e}");
        let e = ExperimentConfig::parse("experiment = conduct_study\nconduct.alpha = 0.2\n").unwrap_err();
        assert!(e.to_string().contains("conduct.alpha"), "{e}");
        let e = ExperimentConfig::parse("experiment = null_test_study\nnull.level = 2\n").unwrap_err();
        assert!(e.to_string().contains("null.level"), "{e}");
        let e = ExperimentConfig::parse("experiment = iv_study\nparallelism = 0\n").unwrap_err();
        assert!(e.to_string().contains("parallelism"), "{e}");
    }

    #[test]
    fn missing_experiment_is_an_error() {
        assert!(matches!(
            ExperimentConfig::parse("seed = 1\n"),
            Err(HarnessError::MissingKey("experiment"))
        ));
    }

    #[test]
    fn lists_respect_braces() {
        assert_eq!(split_list("{1,2}{3}, {1,2,3}"), vec!["{1,2}{3}", "{1,2,3}"]);
        assert_eq!(split_list("  "), Vec::<String>::new());
    }
}
