//! Seeded simulation designs and the Monte Carlo harness.
//!
//! Every machine of every repetition draws from its own ChaCha stream keyed
//! by `(seed, repetition)` with the machine id as stream number, so data do
//! not depend on generation order or on how repetitions are scheduled.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::byzantine::{self, ByzantineBehavior, DelSConfig, SelectionConfig};
use crate::el::{Partition, SolverOptions};
use crate::protocol::{self, DelConfig, GradientTamper};
use crate::stats::{self, Method};
use crate::{Error, MachineId, Result};

/// Per-machine random stream.
pub fn stream(seed: u64, repetition: u64, machine: u64) -> ChaCha8Rng {
    let mut state = seed ^ repetition.wrapping_mul(0xA076_1D64_78BD_642F);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(machine);
    rng
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` rows of `N(0, Sigma)` with unit variances and common correlation `rho`,
/// via `x = sqrt(rho) z0 1 + sqrt(1 - rho) z`.
pub fn normal_draw<R: Rng + ?Sized>(d: usize, rho: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let common = libm::sqrt(rho);
    let own = libm::sqrt(1.0 - rho);
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        let z0: f64 = rng.sample(StandardNormal);
        for _ in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            out.push(common * z0 + own * z);
        }
    }
    out
}

/// Mixing matrix with entries `decay^|a-b|`, row-major.
pub fn decay_matrix(d: usize, decay: f64) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            m[a * d + b] = libm::pow(decay, (a as f64 - b as f64).abs());
        }
    }
    m
}

/// `n` rows of `M e` with `e` i.i.d. exponential(rate) and `M = decay_matrix`.
pub fn exponential_draw<R: Rng + ?Sized>(
    d: usize,
    decay: f64,
    rate: f64,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mix = decay_matrix(d, decay);
    let mut e = vec![0.0; d];
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        for v in e.iter_mut() {
            let x: f64 = rng.sample(Exp1);
            *v = x / rate;
        }
        for a in 0..d {
            out.push(crate::linalg::dot(&mix[a * d..(a + 1) * d], &e));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// Equicorrelated normal with unit variances.
    Normal { rho: f64 },
    /// Mixed exponentials `M e` with `M_ab = decay^|a-b|`.
    Exponential { decay: f64 },
}

/// One machine's data-generating law: the family plus a shift.
///
/// For the normal family the mean is `shift * 1`; for the exponential family
/// the coordinates of `e` have rate `1 + shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorSpec {
    pub family: Family,
    pub dim: usize,
    pub shift: f64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::config("dimension must be at least 1"));
        }
        match self.family {
            Family::Normal { rho } if !(0.0..1.0).contains(&rho) => Err(Error::config(
                alloc::format!("rho must be in [0, 1), got {rho}"),
            )),
            Family::Exponential { decay } if !(0.0..1.0).contains(&decay) => Err(Error::config(
                alloc::format!("decay must be in [0, 1), got {decay}"),
            )),
            Family::Exponential { .. } if !(1.0 + self.shift > 0.0) => Err(Error::config(
                alloc::format!("exponential rate 1 + {} must be positive", self.shift),
            )),
            _ if !self.shift.is_finite() => Err(Error::config("shift must be finite")),
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self.family {
            Family::Normal { .. } => vec![self.shift; self.dim],
            Family::Exponential { decay } => {
                let mix = decay_matrix(self.dim, decay);
                (0..self.dim)
                    .map(|a| {
                        mix[a * self.dim..(a + 1) * self.dim].iter().sum::<f64>()
                            / (1.0 + self.shift)
                    })
                    .collect()
            }
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match self.family {
            Family::Normal { rho } => {
                let mut x = normal_draw(self.dim, rho, n, rng);
                if self.shift != 0.0 {
                    x.iter_mut().for_each(|v| *v += self.shift);
                }
                x
            }
            Family::Exponential { decay } => {
                exponential_draw(self.dim, decay, 1.0 + self.shift, n, rng)
            }
        }
    }
}

/// How the Byzantine machines of a design misbehave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ByzantineMode {
    /// Data drawn with shift `delta_b`.
    #[default]
    MeanShift,
    /// Honest data; every gradient message has `delta_b * 1` added.
    GradientBias,
    /// Honest data; every gradient message is replaced by `delta_b * 1`.
    GradientReplace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    /// Rejection rate at the true mean.
    TypeOne,
    /// Fraction of repetitions where the true mean is inside the region at `level`.
    Coverage { level: f64 },
    /// Rejection rate of `mu0` when honest data are shifted by `truth_shift`.
    Power,
}

impl Metric {
    pub fn label(&self) -> &'static str {
        match self {
            Metric::TypeOne => "type1",
            Metric::Coverage { .. } => "coverage",
            Metric::Power => "power",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentDesign {
    /// Total sample size `N = K * n`.
    pub total: usize,
    pub machines: usize,
    pub dim: usize,
    pub family: Family,
    pub n_byzantine: usize,
    pub delta_b: f64,
    pub byzantine_mode: ByzantineMode,
    pub alpha: f64,
    pub metric: Metric,
    pub repetitions: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Shift of the honest machines' law (power studies); 0 under the null.
    pub truth_shift: f64,
    /// Hypothesised mean; `None` means the honest law's mean at zero shift.
    pub mu0: Option<Vec<f64>>,
    pub selection: SelectionConfig,
    pub del: DelConfig,
    /// EL pools all rows on one machine only when `N` is at most this.
    pub central_budget: usize,
}

impl ExperimentDesign {
    /// Desk-scale normal design with `d = 5` and `rho = 0.5`.
    pub fn desk(total: usize, machines: usize) -> Self {
        Self {
            total,
            machines,
            dim: 5,
            family: Family::Normal { rho: 0.5 },
            n_byzantine: 0,
            delta_b: 0.3,
            byzantine_mode: ByzantineMode::MeanShift,
            alpha: 0.05,
            metric: Metric::TypeOne,
            repetitions: 1000,
            methods: vec![Method::El, Method::Del, Method::DelS],
            seed: 20_240_601,
            truth_shift: 0.0,
            mu0: None,
            selection: SelectionConfig::default(),
            del: DelConfig::default(),
            central_budget: 1_000_000,
        }
    }

    pub fn rows_per_machine(&self) -> usize {
        self.total / self.machines.max(1)
    }

    pub fn honest_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            family: self.family,
            dim: self.dim,
            shift: self.truth_shift,
        }
    }

    pub fn byzantine_spec(&self) -> GeneratorSpec {
        match self.byzantine_mode {
            ByzantineMode::MeanShift => GeneratorSpec {
                shift: self.delta_b,
                ..self.honest_spec()
            },
            _ => self.honest_spec(),
        }
    }

    /// Hypothesised mean under test.
    pub fn mu0(&self) -> Vec<f64> {
        self.mu0.clone().unwrap_or_else(|| {
            GeneratorSpec {
                shift: 0.0,
                ..self.honest_spec()
            }
            .mean()
        })
    }

    /// Ids of the Byzantine machines (the last `n_byzantine`).
    pub fn byzantine_ids(&self) -> core::ops::RangeInclusive<MachineId> {
        (self.machines - self.n_byzantine + 1) as MachineId..=self.machines as MachineId
    }

    pub fn validate(&self) -> Result<()> {
        if self.machines < 1 {
            return Err(Error::config("K must be at least 1"));
        }
        if self.total % self.machines != 0 {
            return Err(Error::config(alloc::format!(
                "N = {} is not a multiple of K = {}",
                self.total,
                self.machines
            )));
        }
        if self.rows_per_machine() < 2 {
            return Err(Error::config("each machine needs at least 2 rows"));
        }
        if self.n_byzantine >= self.machines {
            return Err(Error::config("n_byzantine must be smaller than K"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha must be in (0, 1)"));
        }
        if let Metric::Coverage { level } = self.metric {
            if !(level > 0.0 && level < 1.0) {
                return Err(Error::config("coverage level must be in (0, 1)"));
            }
        }
        if self.repetitions < 1 {
            return Err(Error::config("repetitions must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("no methods requested"));
        }
        if let Some(mu0) = &self.mu0 {
            if mu0.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: mu0.len(),
                });
            }
        }
        self.honest_spec().validate()?;
        self.byzantine_spec().validate()
    }
}

/// Draws the cluster of one repetition: honest machines first, Byzantine
/// machines last.
pub fn generate_cluster(
    design: &ExperimentDesign,
    repetition: u64,
) -> Result<(Vec<Partition>, Vec<ByzantineBehavior>)> {
    design.validate()?;
    let n = design.rows_per_machine();
    let honest = design.honest_spec();
    let byz = design.byzantine_spec();
    let first_byz = design.machines - design.n_byzantine;
    let mut cluster = Vec::with_capacity(design.machines);
    let mut behaviors = Vec::with_capacity(design.machines);
    for i in 0..design.machines {
        let id = (i + 1) as MachineId;
        let mut rng = stream(design.seed, repetition, id as u64);
        let is_byz = i >= first_byz;
        let spec = if is_byz { &byz } else { &honest };
        cluster.push(Partition::new(id, design.dim, spec.draw(n, &mut rng))?);
        behaviors.push(if !is_byz {
            ByzantineBehavior::Honest
        } else {
            match design.byzantine_mode {
                ByzantineMode::MeanShift => {
                    ByzantineBehavior::MeanShifted(crate::linalg::sub(&byz.mean(), &honest.mean()))
                }
                ByzantineMode::GradientBias => {
                    ByzantineBehavior::GradientTampered(GradientTamper::Bias(vec![
                        design.delta_b;
                        design.dim
                    ]))
                }
                ByzantineMode::GradientReplace => {
                    ByzantineBehavior::GradientTampered(GradientTamper::Replace(vec![
                        design.delta_b;
                        design.dim
                    ]))
                }
            }
        });
    }
    Ok((cluster, behaviors))
}

/// What one method produced in one repetition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodOutcome {
    Statistic(f64),
    /// Selection did not keep a strict majority.
    Degenerate,
    /// Any other engine error.
    Failed,
    /// Not run (EL above the central budget).
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionOutcome {
    pub repetition: u64,
    /// One entry per requested method, in request order.
    pub outcomes: Vec<(Method, MethodOutcome)>,
    /// Whether selection returned exactly the honest machines, when DEL_S ran.
    pub selection_exact: Option<bool>,
}

impl RepetitionOutcome {
    pub fn statistic(&self, method: Method) -> Option<f64> {
        self.outcomes.iter().find_map(|(m, o)| match o {
            MethodOutcome::Statistic(s) if *m == method => Some(*s),
            _ => None,
        })
    }
}

/// Runs every requested method on one freshly drawn cluster at `mu0`.
pub fn run_repetition(design: &ExperimentDesign, repetition: u64) -> Result<RepetitionOutcome> {
    let (cluster, behaviors) = generate_cluster(design, repetition)?;
    let mu0 = design.mu0();
    let mut outcomes = Vec::with_capacity(design.methods.len());
    let mut selection_exact = None;
    let classify = |r: Result<f64>| match r {
        Ok(s) => MethodOutcome::Statistic(s),
        Err(Error::SelectionDegenerate { .. }) => MethodOutcome::Degenerate,
        Err(_) => MethodOutcome::Failed,
    };
    for &method in &design.methods {
        let outcome = match method {
            Method::El if design.total > design.central_budget => MethodOutcome::Skipped,
            Method::El => classify(
                protocol::pooled_statistic(&cluster, &mu0, &design.del.solver).map(|(s, _)| s),
            ),
            Method::Del => classify(
                byzantine::run_del_with_behaviors(&cluster, &behaviors, &mu0, &design.del)
                    .map(|r| r.statistic),
            ),
            Method::DelS => {
                let cfg = DelSConfig {
                    selection: design.selection,
                    del: design.del,
                };
                let res = byzantine::run_del_s(&cluster, &behaviors, &mu0, &cfg);
                let honest: Vec<MachineId> =
                    (1..=(design.machines - design.n_byzantine) as MachineId).collect();
                selection_exact = Some(match &res {
                    Ok(r) => r.selection.selected == honest,
                    Err(_) => byzantine::run_selection(
                        &cluster,
                        &behaviors,
                        &design.selection,
                        &design.del.solver,
                    )
                    .map(|s| s.selected == honest)
                    .unwrap_or(false),
                });
                classify(res.map(|r| r.statistic))
            }
        };
        outcomes.push((method, outcome));
    }
    Ok(RepetitionOutcome {
        repetition,
        outcomes,
        selection_exact,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub design: ExperimentDesign,
    pub rows: Vec<ReportRow>,
}

impl MonteCarloReport {
    pub fn row(&self, method: Method, metric: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.metric == metric)
    }

    /// Main metric value for a method.
    pub fn rate(&self, method: Method) -> Option<f64> {
        self.row(method, self.design.metric.label())
            .map(|r| r.value)
    }
}

fn proportion_row(method: Method, metric: &str, hits: usize, reps: usize) -> ReportRow {
    let p = if reps == 0 {
        f64::NAN
    } else {
        hits as f64 / reps as f64
    };
    let stderr = if reps == 0 {
        f64::NAN
    } else {
        libm::sqrt(p * (1.0 - p) / reps as f64)
    };
    ReportRow {
        method,
        metric: metric.into(),
        value: p,
        stderr,
        reps,
    }
}

/// Tallies repetition outcomes (in the given order) into a report.
///
/// The main metric is computed over repetitions where the method produced a
/// statistic; degenerate selections and failures get their own rows.
pub fn tally(
    design: &ExperimentDesign,
    outcomes: &[RepetitionOutcome],
) -> Result<MonteCarloReport> {
    let df = design.dim as u32;
    let (critical, count_if_above) = match design.metric {
        Metric::TypeOne | Metric::Power => (stats::chi2_quantile(1.0 - design.alpha, df)?, true),
        Metric::Coverage { level } => (stats::chi2_quantile(level, df)?, false),
    };
    let total = outcomes.len();
    let mut rows = Vec::new();
    for &method in &design.methods {
        let mut hits = 0;
        let mut valid = 0;
        let mut degenerate = 0;
        let mut failed = 0;
        let mut skipped = 0;
        for rep in outcomes {
            match rep
                .outcomes
                .iter()
                .find(|(m, _)| *m == method)
                .map(|(_, o)| *o)
            {
                Some(MethodOutcome::Statistic(s)) => {
                    valid += 1;
                    if (s > critical) == count_if_above {
                        hits += 1;
                    }
                }
                Some(MethodOutcome::Degenerate) => degenerate += 1,
                Some(MethodOutcome::Failed) => failed += 1,
                Some(MethodOutcome::Skipped) | None => skipped += 1,
            }
        }
        if skipped == total {
            continue;
        }
        rows.push(proportion_row(method, design.metric.label(), hits, valid));
        rows.push(proportion_row(method, "failed", failed, total));
        if method == Method::DelS {
            rows.push(proportion_row(method, "degenerate", degenerate, total));
            let exact = outcomes
                .iter()
                .filter(|r| r.selection_exact == Some(true))
                .count();
            rows.push(proportion_row(method, "selection", exact, total));
        }
    }
    Ok(MonteCarloReport {
        design: design.clone(),
        rows,
    })
}

/// Sequential Monte Carlo over `design.repetitions` repetitions.
pub fn monte_carlo(design: &ExperimentDesign) -> Result<MonteCarloReport> {
    design.validate()?;
    let outcomes = (0..design.repetitions as u64)
        .map(|rep| run_repetition(design, rep))
        .collect::<Result<Vec<_>>>()?;
    tally(design, &outcomes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerPoint {
    pub shift: f64,
    pub method: Method,
    pub power: f64,
    pub stderr: f64,
    pub reps: usize,
}

/// Design for one point of a power curve.
pub fn power_design(design: &ExperimentDesign, shift: f64) -> ExperimentDesign {
    ExperimentDesign {
        truth_shift: shift,
        metric: Metric::Power,
        mu0: Some(design.mu0()),
        ..design.clone()
    }
}

/// Flattens per-shift reports into power-curve points.
pub fn power_points(shift: f64, report: &MonteCarloReport) -> Vec<PowerPoint> {
    report
        .rows
        .iter()
        .filter(|r| r.metric == Metric::Power.label())
        .map(|r| PowerPoint {
            shift,
            method: r.method,
            power: r.value,
            stderr: r.stderr,
            reps: r.reps,
        })
        .collect()
}

/// Rejection rate of `mu0` with the honest machines shifted by each value.
pub fn power_curve(design: &ExperimentDesign, shifts: &[f64]) -> Result<Vec<PowerPoint>> {
    let mut points = Vec::new();
    for &shift in shifts {
        if !shift.is_finite() {
            return Err(Error::config("power-curve shifts must be finite"));
        }
        let report = monte_carlo(&power_design(design, shift))?;
        points.extend(power_points(shift, &report));
    }
    Ok(points)
}

/// Solver options used by the harness unless overridden.
pub fn default_solver() -> SolverOptions {
    SolverOptions::default()
}
