//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are comma
//! separated. Command-line flags are applied through [`RunConfig::set`], so
//! they share the same validation as file keys.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use del_core::byzantine::{SelectionMode, Threshold};
use del_core::datagen::{ByzantineMode, ExperimentDesign, Family, Metric};
use del_core::protocol::InitialMultiplier;
use del_core::stats::Method;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub mu0: Option<Vec<f64>>,
    pub alpha: f64,
    /// Method for `test` and `confregion`.
    pub method: Method,
    pub a: f64,
    /// Explicit selection threshold; overrides `a`.
    pub gamma: Option<f64>,
    pub rounds: Option<usize>,
    pub initial: InitialMultiplier,
    pub selection_mode: SelectionMode,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub levels: Vec<f64>,
    pub center: Option<[f64; 2]>,
    pub angles: usize,
    pub family: Family,
    pub total: usize,
    /// One simulation cell per value; `test` and `gen` use the first.
    pub machines: Vec<usize>,
    pub dim: usize,
    /// One simulation cell per value.
    pub n_byzantine: Vec<usize>,
    /// One simulation cell per value.
    pub delta_b: Vec<f64>,
    pub byzantine_mode: ByzantineMode,
    pub metric: Metric,
    pub repetitions: usize,
    pub methods: Vec<Method>,
    pub central_budget: usize,
    pub truth_shift: f64,
    /// Power-curve grid; empty means a single Monte Carlo run.
    pub shifts: Vec<f64>,
    pub repetition: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let desk = ExperimentDesign::desk(10_000, 50);
        Self {
            data_dir: None,
            mu0: None,
            alpha: 0.05,
            method: Method::Del,
            a: 2.0,
            gamma: None,
            rounds: None,
            initial: InitialMultiplier::Zero,
            selection_mode: SelectionMode::ReceivedGradient,
            seed: desk.seed,
            out: None,
            levels: vec![0.90, 0.95],
            center: None,
            angles: 64,
            family: desk.family,
            total: desk.total,
            machines: vec![desk.machines],
            dim: desk.dim,
            n_byzantine: vec![0],
            delta_b: vec![desk.delta_b],
            byzantine_mode: desk.byzantine_mode,
            metric: Metric::TypeOne,
            repetitions: desk.repetitions,
            methods: desk.methods,
            central_budget: desk.central_budget,
            truth_shift: 0.0,
            shifts: Vec::new(),
            repetition: 0,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::config(key, format!("cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn parse_method(key: &str, value: &str) -> Result<Method> {
    match value.trim().to_ascii_lowercase().as_str() {
        "el" => Ok(Method::El),
        "del" => Ok(Method::Del),
        "dels" | "del_s" => Ok(Method::DelS),
        other => Err(CliError::config(key, format!("unknown method `{other}`"))),
    }
}

fn method_key(m: Method) -> &'static str {
    match m {
        Method::El => "el",
        Method::Del => "del",
        Method::DelS => "dels",
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Parses a config file and validates it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Parse {
                file: origin.to_path_buf(),
                line: idx as u64 + 1,
                column: 1,
                message: "expected `key = value`".into(),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Sets one key, validating its value's type and domain.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "mu0" => self.mu0 = Some(parse_list(key, value)?),
            "alpha" => self.alpha = parse_num(key, value)?,
            "method" => self.method = parse_method(key, value)?,
            "a" => self.a = parse_num(key, value)?,
            "gamma" => self.gamma = Some(parse_num(key, value)?),
            "rounds" => {
                self.rounds = match value {
                    "auto" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "initial" => {
                self.initial = match value {
                    "zero" => InitialMultiplier::Zero,
                    "warm" => InitialMultiplier::Warm,
                    v => {
                        return Err(CliError::config(
                            key,
                            format!("expected zero or warm, got `{v}`"),
                        ))
                    }
                }
            }
            "selection_mode" => {
                self.selection_mode = match value {
                    "received" => SelectionMode::ReceivedGradient,
                    "data" => SelectionMode::Data,
                    v => {
                        return Err(CliError::config(
                            key,
                            format!("expected received or data, got `{v}`"),
                        ))
                    }
                }
            }
            "seed" => self.seed = parse_num(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "levels" => self.levels = parse_list(key, value)?,
            "center" => {
                let v: Vec<f64> = parse_list(key, value)?;
                match v.as_slice() {
                    [x, y] => self.center = Some([*x, *y]),
                    _ => return Err(CliError::config(key, "expected two values")),
                }
            }
            "angles" => self.angles = parse_num(key, value)?,
            "family" => {
                self.family = match value {
                    "normal" => Family::Normal { rho: 0.5 },
                    "exponential" => Family::Exponential { decay: 0.5 },
                    v => {
                        return Err(CliError::config(
                            key,
                            format!("expected normal or exponential, got `{v}`"),
                        ))
                    }
                }
            }
            "rho" => match &mut self.family {
                Family::Normal { rho } => *rho = parse_num(key, value)?,
                _ => {
                    return Err(CliError::config(
                        key,
                        "only valid with family = normal (set family first)",
                    ))
                }
            },
            "decay" => match &mut self.family {
                Family::Exponential { decay } => *decay = parse_num(key, value)?,
                _ => {
                    return Err(CliError::config(
                        key,
                        "only valid with family = exponential (set family first)",
                    ))
                }
            },
            "N" | "total" => self.total = parse_num(key, value)?,
            "K" | "machines" => self.machines = parse_list(key, value)?,
            "d" | "dim" => self.dim = parse_num(key, value)?,
            "n_byzantine" => self.n_byzantine = parse_list(key, value)?,
            "delta_b" => self.delta_b = parse_list(key, value)?,
            "byzantine_mode" => {
                self.byzantine_mode = match value {
                    "mean_shift" => ByzantineMode::MeanShift,
                    "gradient_bias" => ByzantineMode::GradientBias,
                    "gradient_replace" => ByzantineMode::GradientReplace,
                    v => {
                        return Err(CliError::config(
                            key,
                            format!(
                                "expected mean_shift, gradient_bias or gradient_replace, got `{v}`"
                            ),
                        ))
                    }
                }
            }
            "metric" => {
                self.metric = match value {
                    "type1" => Metric::TypeOne,
                    "coverage" => Metric::Coverage { level: 0.9 },
                    "power" => Metric::Power,
                    v => {
                        return Err(CliError::config(
                            key,
                            format!("expected type1, coverage or power, got `{v}`"),
                        ))
                    }
                }
            }
            "level" => match &mut self.metric {
                Metric::Coverage { level } => *level = parse_num(key, value)?,
                _ => {
                    return Err(CliError::config(
                        key,
                        "only valid with metric = coverage (set metric first)",
                    ))
                }
            },
            "repetitions" => self.repetitions = parse_num(key, value)?,
            "methods" => {
                self.methods = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_method(key, s))
                    .collect::<Result<_>>()?
            }
            "central_budget" => self.central_budget = parse_num(key, value)?,
            "truth_shift" => self.truth_shift = parse_num(key, value)?,
            "shifts" => self.shifts = parse_list(key, value)?,
            "repetition" => self.repetition = parse_num(key, value)?,
            other => return Err(CliError::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Numeric domain checks shared by every command.
    pub fn validate(&self) -> Result<()> {
        let open_unit = |key: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(CliError::config(key, format!("must be in (0, 1), got {v}")))
            }
        };
        open_unit("alpha", self.alpha)?;
        for &l in &self.levels {
            open_unit("levels", l)?;
        }
        if self.levels.is_empty() {
            return Err(CliError::config("levels", "at least one level is required"));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(CliError::config(
                "a",
                format!("must be positive, got {}", self.a),
            ));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(CliError::config(
                    "gamma",
                    format!("must be positive, got {g}"),
                ));
            }
        }
        if self.rounds == Some(0) {
            return Err(CliError::config("rounds", "must be at least 1"));
        }
        if self.angles == 0 {
            return Err(CliError::config("angles", "must be at least 1"));
        }
        if let Some(mu0) = &self.mu0 {
            if mu0.is_empty() || mu0.iter().any(|v| !v.is_finite()) {
                return Err(CliError::config("mu0", "needs finite values"));
            }
        }
        if let Some(dir) = &self.data_dir {
            if !dir.is_dir() {
                return Err(CliError::config(
                    "data_dir",
                    format!("{} is not a directory", dir.display()),
                ));
            }
        }
        if self.n_byzantine.is_empty() || self.delta_b.is_empty() || self.machines.is_empty() {
            return Err(CliError::config(
                "n_byzantine",
                "K, n_byzantine and delta_b need at least one value",
            ));
        }
        if self.shifts.iter().any(|s| !s.is_finite()) {
            return Err(CliError::config("shifts", "must be finite"));
        }
        if self.method == Method::El {
            return Err(CliError::config("method", "expected del or dels"));
        }
        Ok(())
    }

    pub fn del_config(&self) -> del_core::protocol::DelConfig {
        del_core::protocol::DelConfig {
            rounds: self.rounds,
            initial: self.initial,
            ..Default::default()
        }
    }

    pub fn selection_config(&self) -> del_core::byzantine::SelectionConfig {
        del_core::byzantine::SelectionConfig {
            threshold: match self.gamma {
                Some(g) => Threshold::Fixed(g),
                None => Threshold::Constant(self.a),
            },
            mode: self.selection_mode,
            ..Default::default()
        }
    }

    /// Number of simulation cells.
    pub fn cell_count(&self) -> usize {
        self.machines.len() * self.delta_b.len() * self.n_byzantine.len()
    }

    /// One design per (K, delta_b, n_byzantine) cell, in that nesting order.
    pub fn designs(&self) -> Result<Vec<ExperimentDesign>> {
        let mut out = Vec::new();
        for &machines in &self.machines {
            for &delta_b in &self.delta_b {
                for &n_byzantine in &self.n_byzantine {
                    let design = ExperimentDesign {
                        total: self.total,
                        machines,
                        dim: self.dim,
                        family: self.family,
                        n_byzantine,
                        delta_b,
                        byzantine_mode: self.byzantine_mode,
                        alpha: self.alpha,
                        metric: self.metric,
                        repetitions: self.repetitions,
                        methods: self.methods.clone(),
                        seed: self.seed,
                        truth_shift: self.truth_shift,
                        mu0: self.mu0.clone(),
                        selection: self.selection_config(),
                        del: self.del_config(),
                        central_budget: self.central_budget,
                    };
                    design
                        .validate()
                        .map_err(|e| CliError::config("design", e.to_string()))?;
                    out.push(design);
                }
            }
        }
        Ok(out)
    }

    /// Resolved configuration in the same `key = value` format.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(d) = &self.data_dir {
            kv("data_dir", d.display().to_string());
        }
        if let Some(m) = &self.mu0 {
            kv("mu0", join(m));
        }
        kv("alpha", self.alpha.to_string());
        kv("method", method_key(self.method).into());
        kv("a", self.a.to_string());
        if let Some(g) = self.gamma {
            kv("gamma", g.to_string());
        }
        kv(
            "rounds",
            self.rounds.map_or("auto".into(), |r| r.to_string()),
        );
        kv(
            "initial",
            match self.initial {
                InitialMultiplier::Zero => "zero",
                InitialMultiplier::Warm => "warm",
            }
            .into(),
        );
        kv(
            "selection_mode",
            match self.selection_mode {
                SelectionMode::ReceivedGradient => "received",
                SelectionMode::Data => "data",
            }
            .into(),
        );
        kv("seed", self.seed.to_string());
        if let Some(o) = &self.out {
            kv("out", o.display().to_string());
        }
        kv("levels", join(&self.levels));
        if let Some(c) = self.center {
            kv("center", join(&c));
        }
        kv("angles", self.angles.to_string());
        match self.family {
            Family::Normal { rho } => {
                kv("family", "normal".into());
                kv("rho", rho.to_string());
            }
            Family::Exponential { decay } => {
                kv("family", "exponential".into());
                kv("decay", decay.to_string());
            }
        }
        kv("N", self.total.to_string());
        kv("K", join(&self.machines));
        kv("d", self.dim.to_string());
        kv("n_byzantine", join(&self.n_byzantine));
        kv("delta_b", join(&self.delta_b));
        kv(
            "byzantine_mode",
            match self.byzantine_mode {
                ByzantineMode::MeanShift => "mean_shift",
                ByzantineMode::GradientBias => "gradient_bias",
                ByzantineMode::GradientReplace => "gradient_replace",
            }
            .into(),
        );
        kv("metric", self.metric.label().into());
        if let Metric::Coverage { level } = self.metric {
            kv("level", level.to_string());
        }
        kv("repetitions", self.repetitions.to_string());
        kv(
            "methods",
            self.methods
                .iter()
                .map(|m| method_key(*m))
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("central_budget", self.central_budget.to_string());
        kv("truth_shift", self.truth_shift.to_string());
        if !self.shifts.is_empty() {
            kv("shifts", join(&self.shifts));
        }
        kv("repetition", self.repetition.to_string());
        s
    }
}
