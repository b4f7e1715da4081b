//! Byzantine machine selection by pairwise gradient-distance voting.
//!
//! Every machine reports its local dual gradient at a pilot multiplier and a
//! robust pilot mean (the geometric median of the local sample means). A
//! machine is kept when strictly more than half of all machines, itself
//! included, report a gradient within `gamma_n` of its own. The distributed
//! protocol is then run on the kept machines only.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::el::{self, Partition, SolverOptions};
use crate::linalg;
use crate::protocol::{self, DelConfig, DelResult, GradientTamper, LocalTransport, Worker};
use crate::{Error, MachineId, Result};

/// Failure model of one machine, fixed for a whole experiment.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ByzantineBehavior {
    #[default]
    Honest,
    /// Data drawn around a shifted mean. The shift is applied by the data
    /// generator; the machine itself computes honestly.
    MeanShifted(Vec<f64>),
    /// Every upstream gradient message is corrupted.
    GradientTampered(GradientTamper),
}

impl ByzantineBehavior {
    pub fn is_honest(&self) -> bool {
        matches!(self, ByzantineBehavior::Honest)
    }

    pub fn tamper(&self) -> Option<&GradientTamper> {
        match self {
            ByzantineBehavior::GradientTampered(t) => Some(t),
            _ => None,
        }
    }
}

/// What the coordinator votes on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionMode {
    /// Gradients as computed from each machine's data.
    Data,
    /// Gradients as received, after any tampering in transit.
    #[default]
    ReceivedGradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// `gamma_n = a * n^{-1/2} * ln K`.
    Constant(f64),
    /// Explicit `gamma_n`.
    Fixed(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Constant(2.0)
    }
}

/// Pilot multiplier at which selection gradients are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PilotMultiplier {
    #[default]
    Zero,
    /// Local minimiser on a machine assumed trustworthy.
    Trusted(MachineId),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SelectionConfig {
    pub threshold: Threshold,
    pub mode: SelectionMode,
    pub pilot: PilotMultiplier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub gamma_n: f64,
    /// Machine ids in the order of `counts`.
    pub machine_ids: Vec<MachineId>,
    pub counts: Vec<usize>,
    /// Selected ids, ascending.
    pub selected: Vec<MachineId>,
    pub pilot_mu: Vec<f64>,
    pub pilot_lambda: Vec<f64>,
}

impl SelectionOutcome {
    /// Whether the selected set is a strict majority of all machines.
    pub fn is_majority(&self) -> bool {
        2 * self.selected.len() > self.machine_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelSResult {
    pub selection: SelectionOutcome,
    pub del: DelResult,
    pub statistic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DelSConfig {
    pub selection: SelectionConfig,
    pub del: DelConfig,
}

/// Weiszfeld iteration limits.
const WEISZFELD_MAX_ITER: usize = 500;
const WEISZFELD_STEP_TOL: f64 = 1e-10;

fn median_objective(y: &[f64], points: &[Vec<f64>]) -> f64 {
    points.iter().map(|p| linalg::distance(y, p)).sum()
}

/// Sum of unit vectors from `y` towards the points that differ from it, and
/// the number of points equal to `y`.
fn pull(y: &[f64], points: &[Vec<f64>]) -> (Vec<f64>, usize) {
    let mut r = vec![0.0; y.len()];
    let mut coincident = 0;
    for p in points {
        let dist = linalg::distance(y, p);
        if dist == 0.0 {
            coincident += 1;
            continue;
        }
        for (ri, (pi, yi)) in r.iter_mut().zip(p.iter().zip(y)) {
            *ri += (pi - yi) / dist;
        }
    }
    (r, coincident)
}

/// Geometric median: the minimiser of the summed Euclidean distances.
///
/// Input points are first tested for optimality with the subgradient
/// condition; otherwise the Weiszfeld iteration (with the Vardi–Zhang
/// modification when an iterate lands on a data point) is run from the
/// coordinate-wise mean.
pub fn geometric_median(points: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = points
        .first()
        .ok_or_else(|| Error::config("geometric median of an empty set"))?;
    let d = first.len();
    for p in points {
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: p.len(),
            });
        }
        if !linalg::all_finite(p) {
            return Err(Error::config("geometric median input must be finite"));
        }
    }

    for p in points {
        let (r, mult) = pull(p, points);
        if linalg::norm(&r) <= mult as f64 {
            return Ok(p.clone());
        }
    }

    let mut y = linalg::mean_of(points.iter().map(Vec::as_slice), d);
    for _ in 0..WEISZFELD_MAX_ITER {
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        for p in points {
            let dist = linalg::distance(&y, p);
            if dist == 0.0 {
                continue;
            }
            let w = 1.0 / dist;
            den += w;
            for (ni, pi) in num.iter_mut().zip(p) {
                *ni += w * pi;
            }
        }
        if den == 0.0 {
            break;
        }
        let target: Vec<f64> = num.iter().map(|v| v / den).collect();
        let (r, mult) = pull(&y, points);
        let next = if mult == 0 {
            target
        } else {
            let rn = linalg::norm(&r);
            let eta = mult as f64;
            if rn <= eta {
                break;
            }
            let keep = eta / rn;
            target
                .iter()
                .zip(&y)
                .map(|(t, yi)| (1.0 - keep) * t + keep * yi)
                .collect()
        };
        let step = linalg::distance(&next, &y);
        y = next;
        if step < WEISZFELD_STEP_TOL {
            break;
        }
    }

    // The iteration is monotone from the mean; guard against an input point
    // still being better after a truncated run.
    let best_point = points
        .iter()
        .min_by(|a, b| median_objective(a, points).total_cmp(&median_objective(b, points)))
        .expect("non-empty");
    if median_objective(best_point, points) < median_objective(&y, points) {
        return Ok(best_point.clone());
    }
    Ok(y)
}

/// `a * n^{-1/2} * ln K`.
pub fn default_threshold(n: usize, machines: usize, a: f64) -> Result<f64> {
    if n < 2 || machines < 2 {
        return Err(Error::config(format!(
            "threshold needs n >= 2 and K >= 2 (got n = {n}, K = {machines})"
        )));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::config(format!(
            "threshold constant must be positive, got {a}"
        )));
    }
    Ok(a / libm::sqrt(n as f64) * libm::log(machines as f64))
}

/// Votes on the reported gradients.
///
/// `s_i` counts machines (itself included) within strict distance `gamma_n`;
/// a machine is selected when `s_i > K/2` strictly. The returned outcome has
/// empty pilot fields.
pub fn select_machines(
    gradients: &[(MachineId, Vec<f64>)],
    gamma_n: f64,
) -> Result<SelectionOutcome> {
    if gradients.len() < 2 {
        return Err(Error::config("selection needs at least two machines"));
    }
    if !(gamma_n > 0.0) {
        return Err(Error::config(format!(
            "threshold must be positive, got {gamma_n}"
        )));
    }
    let d = gradients[0].1.len();
    if let Some((_, g)) = gradients.iter().find(|(_, g)| g.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: g.len(),
        });
    }
    let k = gradients.len();
    let mut counts = vec![0usize; k];
    for i in 0..k {
        counts[i] += 1;
        for j in i + 1..k {
            if linalg::distance(&gradients[i].1, &gradients[j].1) < gamma_n {
                counts[i] += 1;
                counts[j] += 1;
            }
        }
    }
    let machine_ids: Vec<MachineId> = gradients.iter().map(|(id, _)| *id).collect();
    let mut selected: Vec<MachineId> = machine_ids
        .iter()
        .zip(&counts)
        .filter(|(_, &s)| 2 * s > k)
        .map(|(id, _)| *id)
        .collect();
    selected.sort_unstable();
    Ok(SelectionOutcome {
        gamma_n,
        machine_ids,
        counts,
        selected,
        pilot_mu: Vec::new(),
        pilot_lambda: Vec::new(),
    })
}

fn behavior_at<'b>(
    behaviors: &'b [ByzantineBehavior],
    index: usize,
) -> Result<Option<&'b ByzantineBehavior>> {
    match behaviors.len() {
        0 => Ok(None),
        _ => behaviors
            .get(index)
            .map(Some)
            .ok_or_else(|| Error::config("one behaviour per machine is required")),
    }
}

/// Pilot estimates and the selection gradients.
///
/// `behaviors` is aligned with `cluster` by position; an empty slice means
/// every machine is honest.
pub fn collect_selection_gradients(
    cluster: &[Partition],
    behaviors: &[ByzantineBehavior],
    cfg: &SelectionConfig,
    solver: &SolverOptions,
) -> Result<(Vec<f64>, Vec<f64>, Vec<(MachineId, Vec<f64>)>)> {
    let (d, _) = protocol::validate_cluster(cluster)?;
    if !behaviors.is_empty() && behaviors.len() != cluster.len() {
        return Err(Error::config(format!(
            "{} behaviours for {} machines",
            behaviors.len(),
            cluster.len()
        )));
    }
    let means: Vec<Vec<f64>> = cluster.iter().map(Partition::sample_mean).collect();
    let pilot_mu = geometric_median(&means)?;
    let pilot_lambda = match cfg.pilot {
        PilotMultiplier::Zero => vec![0.0; d],
        PilotMultiplier::Trusted(id) => {
            let part = cluster
                .iter()
                .find(|p| p.machine_id() == id)
                .ok_or_else(|| {
                    Error::config(format!("trusted machine {id} is not in the cluster"))
                })?;
            el::local_minimize(part, &pilot_mu, solver)
                .map_err(|e| e.on_machine(id))?
                .lambda
                .into_inner()
        }
    };
    let mut grads = Vec::with_capacity(cluster.len());
    for (idx, part) in cluster.iter().enumerate() {
        let honest = el::dual_gradient(part, &pilot_mu, &pilot_lambda)
            .map_err(|e| e.on_machine(part.machine_id()))?;
        let reported = match (
            cfg.mode,
            behavior_at(behaviors, idx)?.and_then(|b| b.tamper()),
        ) {
            (SelectionMode::ReceivedGradient, Some(t)) => t.apply(&honest),
            _ => honest,
        };
        grads.push((part.machine_id(), reported));
    }
    Ok((pilot_mu, pilot_lambda, grads))
}

/// Full selection step: pilots, gradients, threshold and vote.
pub fn run_selection(
    cluster: &[Partition],
    behaviors: &[ByzantineBehavior],
    cfg: &SelectionConfig,
    solver: &SolverOptions,
) -> Result<SelectionOutcome> {
    let (_, n) = protocol::validate_cluster(cluster)?;
    let (pilot_mu, pilot_lambda, grads) =
        collect_selection_gradients(cluster, behaviors, cfg, solver)?;
    let gamma_n = match cfg.threshold {
        Threshold::Constant(a) => default_threshold(n, cluster.len(), a)?,
        Threshold::Fixed(g) => g,
    };
    let mut outcome = select_machines(&grads, gamma_n)?;
    outcome.pilot_mu = pilot_mu;
    outcome.pilot_lambda = pilot_lambda;
    Ok(outcome)
}

/// The distributed protocol over `cluster` with each machine's tampering
/// applied to every gradient it sends.
pub fn run_del_with_behaviors(
    cluster: &[Partition],
    behaviors: &[ByzantineBehavior],
    mu: &[f64],
    cfg: &DelConfig,
) -> Result<DelResult> {
    let (d, n) = protocol::validate_cluster(cluster)?;
    if mu.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: mu.len(),
        });
    }
    let lam0 = protocol::initial_multiplier(cluster, mu, cfg.initial, &cfg.solver)?;
    let rounds = protocol::round_count(cluster.len(), n, cfg.rounds)?;
    let mut workers = Vec::with_capacity(cluster.len());
    for (idx, part) in cluster.iter().enumerate() {
        let tamper = behavior_at(behaviors, idx)?
            .and_then(|b| b.tamper())
            .cloned();
        workers.push(Worker::new(part, mu, &lam0, cfg.solver).with_tamper(tamper));
    }
    let mut transport = LocalTransport::new(workers);
    protocol::coordinate(&mut transport, &lam0, rounds, cfg.early_exit)
}

/// Selection followed by the distributed protocol on the selected machines.
pub fn run_del_s(
    cluster: &[Partition],
    behaviors: &[ByzantineBehavior],
    mu: &[f64],
    cfg: &DelSConfig,
) -> Result<DelSResult> {
    let selection = run_selection(cluster, behaviors, &cfg.selection, &cfg.del.solver)?;
    if !selection.is_majority() {
        return Err(Error::SelectionDegenerate {
            selected: selection.selected.len(),
            machines: cluster.len(),
        });
    }
    let mut kept = Vec::with_capacity(selection.selected.len());
    let mut kept_behaviors = Vec::new();
    for (idx, part) in cluster.iter().enumerate() {
        if selection.selected.binary_search(&part.machine_id()).is_ok() {
            kept.push(part.clone());
            if let Some(b) = behavior_at(behaviors, idx)? {
                kept_behaviors.push(b.clone());
            }
        }
    }
    let del = run_del_with_behaviors(&kept, &kept_behaviors, mu, &cfg.del)?;
    let statistic = del.statistic;
    Ok(DelSResult {
        selection,
        del,
        statistic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads(values: &[f64]) -> Vec<(MachineId, Vec<f64>)> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| (i as MachineId + 1, vec![*v]))
            .collect()
    }

    #[test]
    fn median_of_single_point() {
        assert_eq!(
            geometric_median(&[vec![1.5, -2.0]]).unwrap(),
            vec![1.5, -2.0]
        );
    }

    #[test]
    fn median_of_majority_mass() {
        let m = geometric_median(&[vec![0.0], vec![0.0], vec![10.0]]).unwrap();
        assert_eq!(m, vec![0.0]);
    }

    #[test]
    fn median_of_square() {
        let pts = [
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ];
        let m = geometric_median(&pts).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-12 && (m[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn median_rejects_empty() {
        assert!(matches!(
            geometric_median(&[]),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn threshold_values() {
        let g = default_threshold(800, 250, 2.0).unwrap();
        assert!((g - 0.39043).abs() < 1e-5);
        let quarter = default_threshold(3200, 250, 2.0).unwrap();
        assert!((quarter - g / 2.0).abs() < 1e-15);
        assert!(default_threshold(800, 250, 0.0).is_err());
        assert!(default_threshold(1, 250, 1.0).is_err());
        assert!(default_threshold(10, 1, 1.0).is_err());
    }

    #[test]
    fn selection_examples() {
        let s = select_machines(&grads(&[0.3, 0.3, 0.3]), 0.01).unwrap();
        assert_eq!(s.counts, vec![3, 3, 3]);
        assert_eq!(s.selected, vec![1, 2, 3]);

        let s = select_machines(&grads(&[0.0, 0.01, 0.02, 5.0]), 0.1).unwrap();
        assert_eq!(s.counts, vec![3, 3, 3, 1]);
        assert_eq!(s.selected, vec![1, 2, 3]);

        let s = select_machines(&grads(&[0.0, 5.0]), 0.1).unwrap();
        assert_eq!(s.counts, vec![1, 1]);
        assert!(s.selected.is_empty());
        assert!(!s.is_majority());
    }

    #[test]
    fn ties_are_excluded() {
        // distance exactly gamma does not count; s = K/2 is not a majority
        let s = select_machines(&grads(&[0.0, 0.5, 10.0, 10.5]), 0.5).unwrap();
        assert_eq!(s.counts, vec![1, 1, 1, 1]);
        let s = select_machines(&grads(&[0.0, 0.25, 10.0, 10.25]), 0.5).unwrap();
        assert_eq!(s.counts, vec![2, 2, 2, 2]);
        assert!(s.selected.is_empty());
    }

    #[test]
    fn selection_preconditions() {
        assert!(select_machines(&grads(&[0.0]), 0.1).is_err());
        assert!(select_machines(&grads(&[0.0, 1.0]), 0.0).is_err());
        assert!(select_machines(&[(1, vec![0.0]), (2, vec![0.0, 1.0])], 0.1).is_err());
    }

    #[test]
    fn tampered_payload_reaches_selection_only_in_received_mode() {
        let p1 = Partition::new(1, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let p2 = Partition::new(2, 1, vec![2.0, 3.0, 4.0]).unwrap();
        let p3 = Partition::new(3, 1, vec![1.5, 2.5, 3.5]).unwrap();
        let cluster = [p1, p2, p3];
        let behaviors = [
            ByzantineBehavior::Honest,
            ByzantineBehavior::GradientTampered(GradientTamper::Replace(vec![0.0])),
            ByzantineBehavior::Honest,
        ];
        let mut cfg = SelectionConfig {
            mode: SelectionMode::ReceivedGradient,
            ..SelectionConfig::default()
        };
        let opts = SolverOptions::default();
        let (mu, _, g) = collect_selection_gradients(&cluster, &behaviors, &cfg, &opts).unwrap();
        assert_eq!(mu, vec![2.5]);
        assert_eq!(g[1].1, vec![0.0]);
        cfg.mode = SelectionMode::Data;
        let (_, _, g) = collect_selection_gradients(&cluster, &behaviors, &cfg, &opts).unwrap();
        assert_eq!(g[1].1, vec![-0.5]);
    }

    #[test]
    fn two_machines_one_byzantine_is_degenerate() {
        let cluster = [
            Partition::new(1, 1, vec![-1.0, 0.0, 1.0]).unwrap(),
            Partition::new(2, 1, vec![9.0, 10.0, 11.0]).unwrap(),
        ];
        let behaviors = [
            ByzantineBehavior::Honest,
            ByzantineBehavior::MeanShifted(vec![10.0]),
        ];
        let err = run_del_s(&cluster, &behaviors, &[0.0], &DelSConfig::default()).unwrap_err();
        assert_eq!(
            err,
            Error::SelectionDegenerate {
                selected: 0,
                machines: 2
            }
        );
    }
}
