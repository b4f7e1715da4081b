//! Multi-round distributed computation of the empirical-likelihood multiplier.
//!
//! Each round `t` exchanges exactly four vectors with every worker:
//!
//! 1. worker → coordinator: local gradient at `lambda_t`;
//! 2. coordinator → workers: the average gradient;
//! 3. worker → coordinator: minimiser of the gradient-corrected local objective
//!    `g_i(lambda) + (grad g(lambda_t) - grad g_i(lambda_t))' lambda`;
//! 4. coordinator → workers: the averaged multiplier `lambda_{t+1}`.
//!
//! After the last round every worker returns one scalar, its share of the
//! log-likelihood ratio statistic at the final multiplier. Workers learn the
//! initial multiplier when they are constructed; step 1 is triggered by a
//! payload-free [`Message::Collect`] control message.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::el::{self, Multiplier, Partition, SolverOptions};
use crate::linalg;
use crate::{Error, MachineId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Gradient,
    Statistic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    GradientUp {
        machine: MachineId,
        gradient: Vec<f64>,
    },
    MultiplierUp {
        machine: MachineId,
        lambda: Vec<f64>,
    },
    GradientBroadcast(Vec<f64>),
    MultiplierBroadcast(Vec<f64>),
    StatContribUp {
        machine: MachineId,
        contribution: f64,
    },
    Collect(Phase),
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::GradientUp { .. } => 1,
            Message::MultiplierUp { .. } => 2,
            Message::GradientBroadcast(_) => 3,
            Message::MultiplierBroadcast(_) => 4,
            Message::StatContribUp { .. } => 5,
            Message::Collect(Phase::Gradient) => 6,
            Message::Collect(Phase::Statistic) => 7,
        }
    }

    pub fn is_upstream(&self) -> bool {
        matches!(
            self,
            Message::GradientUp { .. }
                | Message::MultiplierUp { .. }
                | Message::StatContribUp { .. }
        )
    }

    /// Sender of an upstream message.
    pub fn sender(&self) -> Option<MachineId> {
        match self {
            Message::GradientUp { machine, .. }
            | Message::MultiplierUp { machine, .. }
            | Message::StatContribUp { machine, .. } => Some(*machine),
            _ => None,
        }
    }

    fn payload(&self) -> &[f64] {
        match self {
            Message::GradientUp { gradient: v, .. }
            | Message::MultiplierUp { lambda: v, .. }
            | Message::GradientBroadcast(v)
            | Message::MultiplierBroadcast(v) => v,
            Message::StatContribUp { contribution, .. } => core::slice::from_ref(contribution),
            Message::Collect(_) => &[],
        }
    }
}

/// One wire frame: the message plus the machine it was sent by (upstream)
/// or delivered to (downstream).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub machine_id: MachineId,
    pub message: Message,
}

/// Encodes `u32 LE length | u8 tag | u32 LE machine id | f64 LE payload...`,
/// where the length counts the bytes after the length field.
pub fn encode_frame(machine_id: MachineId, msg: &Message, out: &mut Vec<u8>) {
    let payload = msg.payload();
    let len = 1 + 4 + 8 * payload.len();
    out.reserve(4 + len);
    out.extend_from_slice(&(len as u32).to_le_bytes());
    out.push(msg.tag());
    out.extend_from_slice(&machine_id.to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decodes one frame from the front of `bytes`, returning it with the number
/// of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize)> {
    let bad = |what: &str| Error::Transport(format!("malformed frame: {what}"));
    if bytes.len() < 4 {
        return Err(bad("truncated length"));
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    if len < 5 || (len - 5) % 8 != 0 {
        return Err(bad("bad length"));
    }
    let body = bytes.get(4..4 + len).ok_or_else(|| bad("truncated body"))?;
    let tag = body[0];
    let machine_id = u32::from_le_bytes(body[1..5].try_into().unwrap());
    let payload: Vec<f64> = body[5..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let scalar = |p: &[f64]| -> Result<f64> {
        match p {
            [v] => Ok(*v),
            _ => Err(bad("scalar frame must carry one value")),
        }
    };
    let message = match tag {
        1 => Message::GradientUp {
            machine: machine_id,
            gradient: payload,
        },
        2 => Message::MultiplierUp {
            machine: machine_id,
            lambda: payload,
        },
        3 => Message::GradientBroadcast(payload),
        4 => Message::MultiplierBroadcast(payload),
        5 => Message::StatContribUp {
            machine: machine_id,
            contribution: scalar(&payload)?,
        },
        6 | 7 if payload.is_empty() => Message::Collect(if tag == 6 {
            Phase::Gradient
        } else {
            Phase::Statistic
        }),
        6 | 7 => return Err(bad("control frame with payload")),
        t => return Err(Error::Transport(format!("unknown frame tag {t}"))),
    };
    Ok((
        Frame {
            machine_id,
            message,
        },
        4 + len,
    ))
}

pub fn decode_frames(mut bytes: &[u8]) -> Result<Vec<Frame>> {
    let mut frames = Vec::new();
    while !bytes.is_empty() {
        let (frame, used) = decode_frame(bytes)?;
        frames.push(frame);
        bytes = &bytes[used..];
    }
    Ok(frames)
}

/// How a worker corrupts the gradient messages it sends upstream.
#[derive(Debug, Clone, PartialEq)]
pub enum GradientTamper {
    /// Payload replaced by this vector.
    Replace(Vec<f64>),
    /// This vector added to the honest payload.
    Bias(Vec<f64>),
}

impl GradientTamper {
    pub fn apply(&self, honest: &[f64]) -> Vec<f64> {
        match self {
            GradientTamper::Replace(v) => v.clone(),
            GradientTamper::Bias(b) => linalg::add(honest, b),
        }
    }
}

/// Worker-side state machine. Owns nothing but a borrowed partition.
#[derive(Debug, Clone)]
pub struct Worker<'a> {
    part: &'a Partition,
    mu: Vec<f64>,
    lambda: Vec<f64>,
    local_gradient: Option<Vec<f64>>,
    tamper: Option<GradientTamper>,
    solver: SolverOptions,
}

impl<'a> Worker<'a> {
    pub fn new(part: &'a Partition, mu: &[f64], lam0: &[f64], solver: SolverOptions) -> Self {
        Self {
            part,
            mu: mu.to_vec(),
            lambda: lam0.to_vec(),
            local_gradient: None,
            tamper: None,
            solver,
        }
    }

    pub fn with_tamper(mut self, tamper: Option<GradientTamper>) -> Self {
        self.tamper = tamper;
        self
    }

    pub fn machine_id(&self) -> MachineId {
        self.part.machine_id()
    }

    /// Handles one downstream message, returning the reply if the phase has one.
    pub fn handle(&mut self, msg: &Message) -> Result<Option<Message>> {
        let id = self.machine_id();
        let reply = match msg {
            Message::Collect(Phase::Gradient) => {
                let grad = el::dual_gradient(self.part, &self.mu, &self.lambda)?;
                let sent = match &self.tamper {
                    Some(t) => t.apply(&grad),
                    None => grad.clone(),
                };
                self.local_gradient = Some(grad);
                Some(Message::GradientUp {
                    machine: id,
                    gradient: sent,
                })
            }
            Message::GradientBroadcast(global) => {
                let local = self.local_gradient.take().ok_or_else(|| {
                    Error::Transport(format!(
                        "machine {id} received a global gradient before reporting its own"
                    ))
                })?;
                let shift = linalg::sub(global, &local);
                let out =
                    el::shifted_minimize(self.part, &self.mu, &shift, &self.lambda, &self.solver)?;
                Some(Message::MultiplierUp {
                    machine: id,
                    lambda: out.lambda.into_inner(),
                })
            }
            Message::MultiplierBroadcast(lam) => {
                self.lambda.clone_from(lam);
                None
            }
            Message::Collect(Phase::Statistic) => Some(Message::StatContribUp {
                machine: id,
                contribution: el::elr_contribution(self.part, &self.mu, &self.lambda)?,
            }),
            up => {
                return Err(Error::Transport(format!(
                    "machine {id} received upstream message tag {}",
                    up.tag()
                )))
            }
        };
        Ok(reply)
    }
}

/// Duplex channel set between the coordinator and its workers.
///
/// Delivery is reliable and ordered; every broadcast reaches each worker once
/// and yields at most one reply per worker.
pub trait Transport {
    /// Participating machine ids, ascending.
    fn machine_ids(&self) -> Vec<MachineId>;

    /// Delivers `msg` to every worker and returns the replies ordered by
    /// ascending machine id.
    fn broadcast(&mut self, msg: &Message) -> Result<Vec<Message>>;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn machine_ids(&self) -> Vec<MachineId> {
        (**self).machine_ids()
    }

    fn broadcast(&mut self, msg: &Message) -> Result<Vec<Message>> {
        (**self).broadcast(msg)
    }
}

/// Sequential in-process transport: workers are driven one after another in
/// machine-id order on the calling thread.
#[derive(Debug, Clone)]
pub struct LocalTransport<'a> {
    workers: Vec<Worker<'a>>,
}

impl<'a> LocalTransport<'a> {
    pub fn new(mut workers: Vec<Worker<'a>>) -> Self {
        workers.sort_by_key(Worker::machine_id);
        Self { workers }
    }
}

impl Transport for LocalTransport<'_> {
    fn machine_ids(&self) -> Vec<MachineId> {
        self.workers.iter().map(Worker::machine_id).collect()
    }

    fn broadcast(&mut self, msg: &Message) -> Result<Vec<Message>> {
        let mut replies = Vec::new();
        for w in &mut self.workers {
            if let Some(r) = w.handle(msg)? {
                replies.push(r);
            }
        }
        Ok(replies)
    }
}

/// Destination for recorded frames.
pub trait FrameSink {
    fn write_frame(&mut self, frame: &[u8]) -> Result<()>;
}

impl FrameSink for Vec<u8> {
    fn write_frame(&mut self, frame: &[u8]) -> Result<()> {
        self.extend_from_slice(frame);
        Ok(())
    }
}

/// Wraps a transport and writes every delivered and received message as a frame.
///
/// Broadcasts are recorded once per recipient, so the log reflects what each
/// channel carried.
#[derive(Debug)]
pub struct RecordingTransport<T, S> {
    inner: T,
    sink: S,
    buf: Vec<u8>,
}

impl<T: Transport, S: FrameSink> RecordingTransport<T, S> {
    pub fn new(inner: T, sink: S) -> Self {
        Self {
            inner,
            sink,
            buf: Vec::new(),
        }
    }

    pub fn into_parts(self) -> (T, S) {
        (self.inner, self.sink)
    }

    fn record(&mut self, machine: MachineId, msg: &Message) -> Result<()> {
        self.buf.clear();
        encode_frame(machine, msg, &mut self.buf);
        self.sink.write_frame(&self.buf)
    }
}

impl<T: Transport, S: FrameSink> Transport for RecordingTransport<T, S> {
    fn machine_ids(&self) -> Vec<MachineId> {
        self.inner.machine_ids()
    }

    fn broadcast(&mut self, msg: &Message) -> Result<Vec<Message>> {
        for id in self.inner.machine_ids() {
            self.record(id, msg)?;
        }
        let replies = self.inner.broadcast(msg)?;
        for r in &replies {
            self.record(r.sender().unwrap_or(0), r)?;
        }
        Ok(replies)
    }
}

/// Coordinator-side view of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub round: usize,
    /// Multiplier the round started from.
    pub lambda_t: Vec<f64>,
    /// Averaged multiplier the round produced.
    pub lambda_next: Vec<f64>,
    pub global_gradient: Vec<f64>,
    pub per_worker_lambda: Vec<Vec<f64>>,
    pub step_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelResult {
    pub lambda_t: Multiplier,
    pub rounds_run: usize,
    pub traces: Vec<RoundTrace>,
    pub statistic: f64,
    pub participating: Vec<MachineId>,
}

impl DelResult {
    /// Little-endian binary serialisation, used for reproducibility checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
        put(self.statistic);
        self.lambda_t.iter().copied().for_each(&mut put);
        for tr in &self.traces {
            tr.lambda_t.iter().copied().for_each(&mut put);
            tr.lambda_next.iter().copied().for_each(&mut put);
            tr.global_gradient.iter().copied().for_each(&mut put);
            tr.per_worker_lambda
                .iter()
                .flatten()
                .copied()
                .for_each(&mut put);
            put(tr.step_change);
        }
        out.extend_from_slice(&(self.rounds_run as u64).to_le_bytes());
        for id in &self.participating {
            out.extend_from_slice(&id.to_le_bytes());
        }
        out
    }
}

/// Initial multiplier for the first round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialMultiplier {
    #[default]
    Zero,
    /// Local minimiser of the lowest-id machine.
    Warm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelConfig {
    /// Round count; `None` uses [`round_count`].
    pub rounds: Option<usize>,
    pub initial: InitialMultiplier,
    pub solver: SolverOptions,
    /// Stop once `|lambda_{t+1} - lambda_t| < early_exit`.
    pub early_exit: f64,
}

impl Default for DelConfig {
    fn default() -> Self {
        Self {
            rounds: None,
            initial: InitialMultiplier::Zero,
            solver: SolverOptions::default(),
            early_exit: 1e-12,
        }
    }
}

/// Number of rounds: `max(2, floor(log K / log n) + 1)` unless overridden.
pub fn round_count(machines: usize, n: usize, override_rounds: Option<usize>) -> Result<usize> {
    if let Some(t) = override_rounds {
        return Ok(t);
    }
    if n < 2 {
        return Err(Error::config(
            "round count needs at least 2 rows per machine",
        ));
    }
    if machines < 1 {
        return Err(Error::config("round count needs at least one machine"));
    }
    // floor(log K / log n) computed exactly as the largest m with n^m <= K.
    let (k, n) = (machines as u128, n as u128);
    let mut power = n;
    let mut m = 0usize;
    while power <= k {
        m += 1;
        power *= n;
    }
    Ok((m + 1).max(2))
}

/// Validates a cluster: non-empty, unique ids, common dimension and row count.
pub fn validate_cluster(cluster: &[Partition]) -> Result<(usize, usize)> {
    let first = cluster
        .first()
        .ok_or_else(|| Error::config("cluster has no machines"))?;
    let (d, n) = (first.dim(), first.len());
    let mut ids: Vec<MachineId> = cluster.iter().map(Partition::machine_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("machine ids must be unique"));
    }
    for p in cluster {
        if p.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: p.dim(),
            });
        }
        if p.len() != n {
            return Err(Error::config(format!(
                "machine {} holds {} rows but machine {} holds {n}; equal sizes are required",
                p.machine_id(),
                p.len(),
                first.machine_id()
            )));
        }
    }
    Ok((d, n))
}

fn expect_vectors(
    replies: Vec<Message>,
    ids: &[MachineId],
    dim: usize,
    pick: impl Fn(Message) -> Option<(MachineId, Vec<f64>)>,
) -> Result<Vec<Vec<f64>>> {
    if replies.len() != ids.len() {
        return Err(Error::Transport(format!(
            "expected {} replies, received {}",
            ids.len(),
            replies.len()
        )));
    }
    let mut out = Vec::with_capacity(ids.len());
    for (reply, &id) in replies.into_iter().zip(ids) {
        let tag = reply.tag();
        let (from, v) =
            pick(reply).ok_or_else(|| Error::Transport(format!("unexpected reply tag {tag}")))?;
        if from != id {
            return Err(Error::Transport(format!(
                "reply from machine {from}, expected {id}"
            )));
        }
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        if !linalg::all_finite(&v) {
            return Err(Error::Transport(format!(
                "machine {id} sent a non-finite vector"
            )));
        }
        out.push(v);
    }
    Ok(out)
}

/// Coordinator loop over any transport. Workers must have been constructed
/// with the same `lam0`.
pub fn coordinate<T: Transport + ?Sized>(
    transport: &mut T,
    lam0: &[f64],
    rounds: usize,
    early_exit: f64,
) -> Result<DelResult> {
    let ids = transport.machine_ids();
    if ids.is_empty() {
        return Err(Error::config("no participating machines"));
    }
    let dim = lam0.len();
    let mut lam = lam0.to_vec();
    let mut traces = Vec::with_capacity(rounds);

    for round in 0..rounds {
        let replies = transport.broadcast(&Message::Collect(Phase::Gradient))?;
        let grads = expect_vectors(replies, &ids, dim, |m| match m {
            Message::GradientUp { machine, gradient } => Some((machine, gradient)),
            _ => None,
        })?;
        let global = linalg::mean_of(grads.iter().map(Vec::as_slice), dim);

        let replies = transport.broadcast(&Message::GradientBroadcast(global.clone()))?;
        let locals = expect_vectors(replies, &ids, dim, |m| match m {
            Message::MultiplierUp { machine, lambda } => Some((machine, lambda)),
            _ => None,
        })?;
        let next = linalg::mean_of(locals.iter().map(Vec::as_slice), dim);
        let step_change = linalg::distance(&next, &lam);

        let replies = transport.broadcast(&Message::MultiplierBroadcast(next.clone()))?;
        if !replies.is_empty() {
            return Err(Error::Transport(
                "workers replied to a multiplier broadcast".into(),
            ));
        }
        traces.push(RoundTrace {
            round,
            lambda_t: core::mem::replace(&mut lam, next.clone()),
            lambda_next: next,
            global_gradient: global,
            per_worker_lambda: locals,
            step_change,
        });
        if step_change < early_exit {
            break;
        }
    }

    let replies = transport.broadcast(&Message::Collect(Phase::Statistic))?;
    if replies.len() != ids.len() {
        return Err(Error::Transport("missing statistic contributions".into()));
    }
    let mut statistic = 0.0;
    for (reply, &id) in replies.iter().zip(&ids) {
        match reply {
            Message::StatContribUp {
                machine,
                contribution,
            } if *machine == id => statistic += contribution,
            other => {
                return Err(Error::Transport(format!(
                    "unexpected statistic reply tag {} for machine {id}",
                    other.tag()
                )))
            }
        }
    }

    Ok(DelResult {
        lambda_t: Multiplier(lam),
        rounds_run: traces.len(),
        traces,
        statistic,
        participating: ids,
    })
}

/// Resolves the initial multiplier for a cluster.
pub fn initial_multiplier(
    cluster: &[Partition],
    mu: &[f64],
    initial: InitialMultiplier,
    solver: &SolverOptions,
) -> Result<Vec<f64>> {
    let (d, _) = validate_cluster(cluster)?;
    match initial {
        InitialMultiplier::Zero => Ok(vec![0.0; d]),
        InitialMultiplier::Warm => {
            let first = cluster
                .iter()
                .min_by_key(|p| p.machine_id())
                .expect("validated non-empty");
            Ok(el::local_minimize(first, mu, solver)
                .map_err(|e| e.on_machine(first.machine_id()))?
                .lambda
                .into_inner())
        }
    }
}

/// Builds one worker per partition.
pub fn make_workers<'a>(
    cluster: &'a [Partition],
    mu: &[f64],
    lam0: &[f64],
    solver: SolverOptions,
) -> Vec<Worker<'a>> {
    cluster
        .iter()
        .map(|p| Worker::new(p, mu, lam0, solver))
        .collect()
}

/// Runs the protocol on an in-process sequential transport.
///
/// `rounds` of `None` uses [`round_count`] for the cluster shape.
pub fn run_del(
    cluster: &[Partition],
    mu: &[f64],
    lam0: &[f64],
    cfg: &DelConfig,
) -> Result<DelResult> {
    let (d, n) = validate_cluster(cluster)?;
    if mu.len() != d || lam0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: if mu.len() != d { mu.len() } else { lam0.len() },
        });
    }
    let rounds = round_count(cluster.len(), n, cfg.rounds)?;
    let mut transport = LocalTransport::new(make_workers(cluster, mu, lam0, cfg.solver));
    coordinate(&mut transport, lam0, rounds, cfg.early_exit)
}

/// Log-likelihood ratio statistic at a fixed multiplier, summed in ascending
/// machine order.
pub fn elr_statistic(cluster: &[Partition], mu: &[f64], lam: &[f64]) -> Result<f64> {
    let mut order: Vec<&Partition> = cluster.iter().collect();
    order.sort_by_key(|p| p.machine_id());
    let mut total = 0.0;
    for p in order {
        total += el::elr_contribution(p, mu, lam)?;
    }
    Ok(total)
}

/// Centralised statistic: pools all rows and solves on one machine.
pub fn pooled_statistic(
    cluster: &[Partition],
    mu: &[f64],
    solver: &SolverOptions,
) -> Result<(f64, Multiplier)> {
    let mut order: Vec<Partition> = cluster.to_vec();
    order.sort_by_key(Partition::machine_id);
    let pooled = Partition::pooled(0, &order)?;
    let out = el::local_minimize(&pooled, mu, solver)?;
    let stat = el::elr_contribution(&pooled, mu, &out.lambda)?;
    Ok((stat, out.lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(id: MachineId, values: &[f64]) -> Partition {
        Partition::new(id, 1, values.to_vec()).unwrap()
    }

    #[test]
    fn round_count_examples() {
        assert_eq!(round_count(250, 800, None).unwrap(), 2);
        assert_eq!(round_count(1, 100, None).unwrap(), 2);
        assert_eq!(round_count(1_000_000, 100, None).unwrap(), 4);
        assert_eq!(round_count(999_999, 100, None).unwrap(), 3);
        assert_eq!(round_count(10, 10, Some(7)).unwrap(), 7);
        assert!(matches!(
            round_count(10, 1, None),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn frame_layout_is_fixed() {
        let mut buf = Vec::new();
        encode_frame(
            7,
            &Message::StatContribUp {
                machine: 7,
                contribution: 1.5,
            },
            &mut buf,
        );
        let mut expected = Vec::new();
        expected.extend_from_slice(&13u32.to_le_bytes());
        expected.push(5);
        expected.extend_from_slice(&7u32.to_le_bytes());
        expected.extend_from_slice(&1.5f64.to_le_bytes());
        assert_eq!(buf, expected);

        buf.clear();
        encode_frame(2, &Message::Collect(Phase::Gradient), &mut buf);
        assert_eq!(buf, [5, 0, 0, 0, 6, 2, 0, 0, 0]);
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(decode_frame(&[1, 0]).is_err());
        assert!(decode_frame(&[6, 0, 0, 0, 9, 0, 0, 0, 0, 0]).is_err());
        assert!(decode_frame(&[5, 0, 0, 0, 99, 0, 0, 0, 0]).is_err());
        assert!(decode_frame(&[13, 0, 0, 0, 5, 1, 0, 0, 0]).is_err());
    }

    #[test]
    fn statistic_of_copies() {
        let cluster = [part(1, &[1.0, 3.0]), part(2, &[1.0, 3.0])];
        let s = elr_statistic(&cluster, &[2.0], &[0.1]).unwrap();
        assert!((s + 0.0402013).abs() < 1e-7);
        assert_eq!(elr_statistic(&cluster, &[2.0], &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn infeasible_statistic_names_machine() {
        let cluster = [part(1, &[1.0, 3.0]), part(2, &[-10.0, 3.0])];
        assert_eq!(
            elr_statistic(&cluster, &[2.0], &[0.1]).unwrap_err(),
            Error::InfeasibleMultiplier { machine: Some(2) }
        );
    }

    #[test]
    fn single_machine_reduces_to_local_solve() {
        let cluster = [part(1, &[-1.0, 0.0, 2.0, 0.5])];
        let res = run_del(&cluster, &[0.0], &[0.0], &DelConfig::default()).unwrap();
        let local = el::local_minimize(&cluster[0], &[0.0], &SolverOptions::default()).unwrap();
        assert!((res.lambda_t[0] - local.lambda[0]).abs() < 1e-12);
        assert_eq!(res.participating, vec![1]);
    }

    #[test]
    fn identical_partitions_converge_in_one_round() {
        let rows = [-1.0, 0.3, 2.0, 0.5, -0.2];
        let cluster = [part(1, &rows), part(2, &rows), part(3, &rows)];
        let cfg = DelConfig {
            rounds: Some(1),
            ..DelConfig::default()
        };
        let res = run_del(&cluster, &[0.1], &[0.0], &cfg).unwrap();
        let local = el::local_minimize(&cluster[0], &[0.1], &SolverOptions::default()).unwrap();
        assert_eq!(res.lambda_t.0, local.lambda.0);
        assert_eq!(res.rounds_run, 1);
    }

    #[test]
    fn hull_violation_is_propagated_with_machine() {
        let cluster = [part(1, &[-1.0, 1.0]), part(2, &[1.0, 2.0])];
        let err = run_del(&cluster, &[5.0], &[0.0], &DelConfig::default()).unwrap_err();
        assert!(
            matches!(
                err,
                Error::HullViolation {
                    machine: Some(_),
                    ..
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn mismatched_cluster_is_rejected() {
        let cluster = [part(1, &[-1.0, 1.0]), part(2, &[1.0, 2.0, 3.0])];
        assert!(matches!(
            run_del(&cluster, &[0.0], &[0.0], &DelConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
        let dup = [part(1, &[-1.0, 1.0]), part(1, &[1.0, 2.0])];
        assert!(validate_cluster(&dup).is_err());
    }

    #[test]
    fn worker_rejects_out_of_order_messages() {
        let p = part(1, &[-1.0, 1.0]);
        let mut w = Worker::new(&p, &[0.0], &[0.0], SolverOptions::default());
        assert!(w.handle(&Message::GradientBroadcast(vec![0.0])).is_err());
        assert!(w
            .handle(&Message::GradientUp {
                machine: 2,
                gradient: vec![0.0]
            })
            .is_err());
    }

    #[test]
    fn tampered_worker_sends_configured_payload() {
        let p = part(1, &[-1.0, 1.0, 3.0]);
        let mut w = Worker::new(&p, &[0.0], &[0.0], SolverOptions::default())
            .with_tamper(Some(GradientTamper::Replace(vec![0.0])));
        let reply = w.handle(&Message::Collect(Phase::Gradient)).unwrap();
        assert_eq!(
            reply,
            Some(Message::GradientUp {
                machine: 1,
                gradient: vec![0.0]
            })
        );
    }
}
