//! Threaded channel transport and file record/replay.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::mpsc;

use del_core::protocol::{decode_frames, Frame, FrameSink, Message, Transport, Worker};
use del_core::{Error, MachineId};

use crate::error::{CliError, Result};

/// Thread count from `DEL_THREADS`, else the available parallelism.
pub fn thread_budget() -> usize {
    std::env::var("DEL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
}

type Reply = (MachineId, del_core::Result<Option<Message>>);

/// Workers spread over at most `threads` scoped threads, one request channel
/// per thread and a shared reply channel. Replies are re-ordered by machine id
/// before they reach the coordinator.
pub struct ThreadedTransport {
    ids: Vec<MachineId>,
    requests: Vec<mpsc::Sender<Message>>,
    replies: mpsc::Receiver<Reply>,
}

impl Transport for ThreadedTransport {
    fn machine_ids(&self) -> Vec<MachineId> {
        self.ids.clone()
    }

    fn broadcast(&mut self, msg: &Message) -> del_core::Result<Vec<Message>> {
        for tx in &self.requests {
            tx.send(msg.clone())
                .map_err(|_| Error::Transport("worker thread exited".into()))?;
        }
        let mut got: Vec<Reply> = Vec::with_capacity(self.ids.len());
        for _ in 0..self.ids.len() {
            got.push(
                self.replies
                    .recv()
                    .map_err(|_| Error::Transport("worker thread exited".into()))?,
            );
        }
        got.sort_by_key(|(id, _)| *id);
        let mut out = Vec::with_capacity(got.len());
        for (id, r) in got {
            if let Some(m) = r.map_err(|e| e.on_machine(id))? {
                out.push(m);
            }
        }
        Ok(out)
    }
}

/// Runs `f` with a threaded transport over `workers`; threads are joined
/// before returning.
pub fn with_threaded_transport<R>(
    mut workers: Vec<Worker<'_>>,
    threads: usize,
    f: impl FnOnce(&mut ThreadedTransport) -> R,
) -> R {
    workers.sort_by_key(Worker::machine_id);
    let ids: Vec<MachineId> = workers.iter().map(Worker::machine_id).collect();
    let threads = threads.clamp(1, workers.len().max(1));
    let chunk = workers.len().div_ceil(threads).max(1);
    let (reply_tx, replies) = mpsc::channel::<Reply>();
    std::thread::scope(|scope| {
        let mut requests = Vec::with_capacity(threads);
        let mut rest = workers;
        while !rest.is_empty() {
            let tail = rest.split_off(chunk.min(rest.len()));
            let mut group = std::mem::replace(&mut rest, tail);
            let (tx, rx) = mpsc::channel::<Message>();
            requests.push(tx);
            let reply_tx = reply_tx.clone();
            scope.spawn(move || {
                for msg in rx {
                    for w in &mut group {
                        let r = w.handle(&msg);
                        if reply_tx.send((w.machine_id(), r)).is_err() {
                            return;
                        }
                    }
                }
            });
        }
        drop(reply_tx);
        let mut transport = ThreadedTransport {
            ids,
            requests,
            replies,
        };
        let out = f(&mut transport);
        // closing the request channels ends the worker loops
        drop(transport);
        out
    })
}

/// Frame sink writing to a file.
pub struct FileSink {
    inner: BufWriter<File>,
}

impl FileSink {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            inner: BufWriter::new(file),
        })
    }

    pub fn finish(mut self) -> del_core::Result<()> {
        self.inner
            .flush()
            .map_err(|e| Error::Transport(format!("flushing frame log: {e}")))
    }
}

impl FrameSink for FileSink {
    fn write_frame(&mut self, frame: &[u8]) -> del_core::Result<()> {
        self.inner
            .write_all(frame)
            .map_err(|e| Error::Transport(format!("writing frame log: {e}")))
    }
}

/// Plays the worker side back from a recorded frame log. Each broadcast must
/// match the recorded downstream frames exactly.
pub struct ReplayTransport {
    frames: Vec<Frame>,
    pos: usize,
    ids: Vec<MachineId>,
}

impl ReplayTransport {
    pub fn open(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self::from_frames(decode_frames(&bytes)?))
    }

    pub fn from_frames(frames: Vec<Frame>) -> Self {
        let ids = frames
            .iter()
            .take_while(|f| !f.message.is_upstream())
            .map(|f| f.machine_id)
            .collect();
        Self {
            frames,
            pos: 0,
            ids,
        }
    }

    /// Whether every recorded frame has been consumed.
    pub fn is_exhausted(&self) -> bool {
        self.pos == self.frames.len()
    }
}

impl Transport for ReplayTransport {
    fn machine_ids(&self) -> Vec<MachineId> {
        self.ids.clone()
    }

    fn broadcast(&mut self, msg: &Message) -> del_core::Result<Vec<Message>> {
        for &id in &self.ids {
            match self.frames.get(self.pos) {
                Some(f) if f.machine_id == id && f.message == *msg => self.pos += 1,
                Some(f) => {
                    return Err(Error::Transport(format!(
                        "replay diverged at frame {}: recorded tag {} to machine {}, sent tag {} to machine {id}",
                        self.pos,
                        f.message.tag(),
                        f.machine_id,
                        msg.tag()
                    )))
                }
                None => return Err(Error::Transport("replay log ended early".into())),
            }
        }
        let mut replies = Vec::new();
        while let Some(f) = self
            .frames
            .get(self.pos)
            .filter(|f| f.message.is_upstream())
        {
            replies.push(f.message.clone());
            self.pos += 1;
        }
        Ok(replies)
    }
}
