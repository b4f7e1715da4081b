//! Empirical-likelihood dual primitives for a mean.
//!
//! For one machine holding rows `x_1..x_n` and a hypothesised mean `mu`, the
//! local dual objective is
//!
//! ```text
//! g(lambda) = -(1/n) * sum_j log(1 + lambda' (x_j - mu))
//! ```
//!
//! defined on the open set where every log argument is positive. The global
//! multiplier minimises the average of these over machines, and each worker
//! of the distributed protocol minimises `g(lambda) + shift' lambda` for a
//! gradient-correction `shift` supplied by the coordinator.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use crate::linalg;
use crate::{Error, MachineId, Result};

/// One machine's block of `n` observations of dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    machine_id: MachineId,
    dim: usize,
    data: Vec<f64>,
}

impl Partition {
    /// Builds a partition from row-major data. Rejects empty or non-finite input.
    pub fn new(machine_id: MachineId, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("partition dimension must be at least 1"));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: data.len() % dim,
            });
        }
        if !linalg::all_finite(&data) {
            return Err(Error::config("observations must be finite"));
        }
        Ok(Self {
            machine_id,
            dim,
            data,
        })
    }

    pub fn from_rows(machine_id: MachineId, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(machine_id, dim, data)
    }

    pub fn machine_id(&self) -> MachineId {
        self.machine_id
    }

    pub fn with_machine_id(mut self, id: MachineId) -> Self {
        self.machine_id = id;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sample_mean(&self) -> Vec<f64> {
        linalg::mean_of(self.rows(), self.dim)
    }

    /// Concatenates partitions (in the given order) into one block.
    pub fn pooled(machine_id: MachineId, parts: &[Partition]) -> Result<Self> {
        let dim = parts.first().map_or(0, Partition::dim);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        for p in parts {
            if p.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.dim,
                });
            }
            data.extend_from_slice(&p.data);
        }
        Self::new(machine_id, dim, data)
    }
}

/// A Lagrange multiplier in the dual domain.
///
/// Feasibility is a property of the (partition, mean) pair it is evaluated
/// against, not of the vector itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Multiplier(pub Vec<f64>);

impl Multiplier {
    pub fn zeros(dim: usize) -> Self {
        Multiplier(vec![0.0; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Multiplier {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Multiplier {
    fn from(v: Vec<f64>) -> Self {
        Multiplier(v)
    }
}

/// Objective value and derivatives of the local dual at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Row-major `dim * dim`, present only when requested.
    pub hessian: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub lambda: Multiplier,
    pub iterations: usize,
    pub converged: bool,
    pub final_gradient_norm: f64,
}

/// Newton solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Absolute tolerance on the gradient norm of the (shifted) objective.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Divergence is declared once `|lambda| > factor * n / max_j |x_j - mu|`.
    pub divergence_factor: f64,
    /// Step halvings tried per Newton iteration before giving up.
    pub max_halvings: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 200,
            divergence_factor: 1e3,
            max_halvings: 60,
        }
    }
}

fn check_dims(part: &Partition, mu: &[f64], lam: &[f64]) -> Result<()> {
    for len in [mu.len(), lam.len()] {
        if len != part.dim {
            return Err(Error::DimensionMismatch {
                expected: part.dim,
                found: len,
            });
        }
    }
    Ok(())
}

/// `1 + lambda' (x_j - mu)` for one row.
#[inline]
fn log_argument(row: &[f64], mu: &[f64], lam: &[f64]) -> f64 {
    let mut s = 1.0;
    for ((x, m), l) in row.iter().zip(mu).zip(lam) {
        s += l * (x - m);
    }
    s
}

/// Smallest log argument over the rows.
pub fn feasibility_margin(part: &Partition, mu: &[f64], lam: &[f64]) -> f64 {
    part.rows()
        .map(|row| log_argument(row, mu, lam))
        .fold(f64::INFINITY, f64::min)
}

pub fn is_feasible(part: &Partition, mu: &[f64], lam: &[f64]) -> bool {
    feasibility_margin(part, mu, lam) > 0.0
}

/// Sum of `log(1 + lambda'(x_j - mu))`, accumulated in row order.
fn log_sum(part: &Partition, mu: &[f64], lam: &[f64]) -> Result<f64> {
    check_dims(part, mu, lam)?;
    let mut sum = 0.0;
    for row in part.rows() {
        let arg = log_argument(row, mu, lam);
        if !(arg > 0.0) {
            return Err(Error::InfeasibleMultiplier {
                machine: Some(part.machine_id),
            });
        }
        sum += libm::log(arg);
    }
    Ok(sum)
}

pub fn dual_value(part: &Partition, mu: &[f64], lam: &[f64]) -> Result<f64> {
    Ok(-log_sum(part, mu, lam)? / part.len() as f64)
}

pub fn dual_gradient(part: &Partition, mu: &[f64], lam: &[f64]) -> Result<Vec<f64>> {
    Ok(dual_eval(part, mu, lam, false)?.gradient)
}

pub fn dual_hessian(part: &Partition, mu: &[f64], lam: &[f64]) -> Result<Vec<f64>> {
    Ok(dual_eval(part, mu, lam, true)?
        .hessian
        .expect("hessian requested"))
}

/// Value, gradient and optionally Hessian in a single pass over the rows.
pub fn dual_eval(part: &Partition, mu: &[f64], lam: &[f64], hessian: bool) -> Result<DualEval> {
    check_dims(part, mu, lam)?;
    let d = part.dim;
    let mut sum = 0.0;
    let mut grad = vec![0.0; d];
    let mut hess = if hessian {
        vec![0.0; d * d]
    } else {
        Vec::new()
    };
    let mut z = vec![0.0; d];
    for row in part.rows() {
        let mut arg = 1.0;
        for a in 0..d {
            z[a] = row[a] - mu[a];
            arg += lam[a] * z[a];
        }
        if !(arg > 0.0) {
            return Err(Error::InfeasibleMultiplier {
                machine: Some(part.machine_id),
            });
        }
        sum += libm::log(arg);
        let inv = 1.0 / arg;
        for a in 0..d {
            grad[a] += z[a] * inv;
        }
        if hessian {
            let inv2 = inv * inv;
            for a in 0..d {
                let za = z[a] * inv2;
                for b in 0..=a {
                    hess[a * d + b] += za * z[b];
                }
            }
        }
    }
    let n = part.len() as f64;
    grad.iter_mut().for_each(|g| *g = -*g / n);
    let hessian = hessian.then(|| {
        for a in 0..d {
            for b in 0..=a {
                let v = hess[a * d + b] / n;
                hess[a * d + b] = v;
                hess[b * d + a] = v;
            }
        }
        hess
    });
    Ok(DualEval {
        value: -sum / n,
        gradient: grad,
        hessian,
    })
}

/// One machine's contribution `2 * sum_j log(1 + lambda'(x_j - mu))` to the
/// log-likelihood ratio statistic.
pub fn elr_contribution(part: &Partition, mu: &[f64], lam: &[f64]) -> Result<f64> {
    Ok(2.0 * log_sum(part, mu, lam)?)
}

/// Minimises `g(lambda) + shift' lambda` by damped Newton from `lam_init`.
///
/// Each step is halved until every log argument stays at or above
/// `min(1/(2n), m/2)`, where `m` is the current smallest argument, and the
/// objective does not increase beyond rounding. `shift = 0` gives the plain
/// local multiplier.
pub fn shifted_minimize(
    part: &Partition,
    mu: &[f64],
    shift: &[f64],
    lam_init: &[f64],
    opts: &SolverOptions,
) -> Result<SolveOutcome> {
    check_dims(part, mu, lam_init)?;
    if shift.len() != part.dim {
        return Err(Error::DimensionMismatch {
            expected: part.dim,
            found: shift.len(),
        });
    }
    if !linalg::all_finite(shift) || !linalg::all_finite(lam_init) {
        return Err(Error::config("shift and initial multiplier must be finite"));
    }
    let machine = Some(part.machine_id);
    let n = part.len() as f64;
    let d = part.dim;

    let spread = part
        .rows()
        .map(|row| linalg::distance(row, mu))
        .fold(0.0_f64, f64::max);
    let bound = if spread > 0.0 {
        opts.divergence_factor * n / spread
    } else {
        f64::INFINITY
    };
    let floor = 0.5 / n;

    let objective =
        |lam: &[f64]| -> Result<f64> { Ok(dual_value(part, mu, lam)? + linalg::dot(shift, lam)) };

    let mut lam = lam_init.to_vec();
    let mut margin = feasibility_margin(part, mu, &lam);
    if !(margin > 0.0) {
        return Err(Error::InfeasibleMultiplier { machine });
    }

    let mut gnorm = f64::INFINITY;
    for iter in 0..opts.max_iterations {
        let eval = dual_eval(part, mu, &lam, true)?;
        let grad = linalg::add(&eval.gradient, shift);
        gnorm = linalg::norm(&grad);
        if gnorm <= opts.tolerance {
            return Ok(SolveOutcome {
                lambda: Multiplier(lam),
                iterations: iter,
                converged: true,
                final_gradient_norm: gnorm,
            });
        }
        let lam_norm = linalg::norm(&lam);
        if lam_norm > bound {
            return Err(Error::HullViolation {
                machine,
                norm: lam_norm,
            });
        }
        let hess = eval.hessian.expect("hessian requested");
        let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
        let Some(step) = linalg::solve_spd(&hess, d, &neg_grad) else {
            // Flat directions with a non-zero slope: the objective is unbounded.
            return Err(Error::HullViolation {
                machine,
                norm: lam_norm,
            });
        };
        let decrement = -linalg::dot(&grad, &step);
        let f0 = eval.value + linalg::dot(shift, &lam);
        let slack = 8.0 * f64::EPSILON * (1.0 + f0.abs());
        let required = floor.min(0.5 * margin);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_halvings {
            let cand = linalg::add_scaled(&lam, t, &step);
            let m = feasibility_margin(part, mu, &cand);
            if m >= required {
                let f = objective(&cand)?;
                if f <= f0 - 1e-4 * t * decrement || (f <= f0 + slack && t * decrement <= slack) {
                    accepted = Some((cand, m));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, m)) => {
                lam = cand;
                margin = m;
            }
            None => {
                return Err(Error::MaxIterations {
                    machine,
                    iterations: iter + 1,
                    gradient_norm: gnorm,
                })
            }
        }
    }

    let lam_norm = linalg::norm(&lam);
    if lam_norm > bound {
        return Err(Error::HullViolation {
            machine,
            norm: lam_norm,
        });
    }
    let grad = linalg::add(&dual_gradient(part, mu, &lam)?, shift);
    let final_norm = linalg::norm(&grad);
    if final_norm <= opts.tolerance {
        return Ok(SolveOutcome {
            lambda: Multiplier(lam),
            iterations: opts.max_iterations,
            converged: true,
            final_gradient_norm: final_norm,
        });
    }
    Err(Error::MaxIterations {
        machine,
        iterations: opts.max_iterations,
        gradient_norm: gnorm.min(final_norm),
    })
}

/// Local multiplier (`shift = 0`) started from zero.
pub fn local_minimize(part: &Partition, mu: &[f64], opts: &SolverOptions) -> Result<SolveOutcome> {
    let zero = vec![0.0; part.dim];
    shifted_minimize(part, mu, &zero, &zero, opts)
}
