//! Simulated-clock harness for the queue protocol: scripted senders and
//! polling receivers driven by one event loop over a single [`Queue`].

use crate::des::EventQueue;
use crate::protocol::{PullResult, Queue};
use crate::{Error, Result};

/// A sender connected at time 0 that pushes `(time, payload)` items and
/// closes at `close_at`.
#[derive(Debug, Clone)]
pub struct SenderScript {
    pub id: String,
    pub pushes: Vec<(f64, u64)>,
    pub close_at: f64,
}

#[derive(Debug, Clone)]
pub struct Schedule {
    pub senders: Vec<SenderScript>,
    /// Handler time per item, one entry per receiver. Receivers start
    /// pulling at time 0.
    pub service_s: Vec<f64>,
    pub poll_interval: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PullKind {
    Data,
    Wait,
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pull {
    pub receiver: usize,
    pub at: f64,
    pub kind: PullKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub receiver: usize,
    pub payload: u64,
    pub taken_at: f64,
    pub done_at: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub deliveries: Vec<Delivery>,
    pub pulls: Vec<Pull>,
    /// Termination time per receiver; `None` if it never saw `Empty`.
    pub terminated_at: Vec<Option<f64>>,
    /// Time of the last sender close.
    pub final_close: Option<f64>,
}

impl Outcome {
    pub fn waits(&self) -> usize {
        self.pulls.iter().filter(|p| p.kind == PullKind::Wait).count()
    }

    /// Time the receiver finished its last handler call, if any.
    pub fn last_done(&self, receiver: usize) -> Option<f64> {
        self.deliveries
            .iter()
            .filter(|d| d.receiver == receiver)
            .map(|d| d.done_at)
            .reduce(f64::max)
    }
}

enum Event {
    Push { sender: usize, item: usize },
    Close { sender: usize },
    Pull { receiver: usize },
}

pub fn run(schedule: &Schedule) -> Result<Outcome> {
    if schedule.poll_interval.is_nan() || schedule.poll_interval <= 0.0 {
        return Err(Error::Config("poll interval must be positive".into()));
    }
    let mut queue: Queue<u64> = Queue::new("sim");
    let mut events = EventQueue::new();
    for (s, script) in schedule.senders.iter().enumerate() {
        queue.register(&script.id)?;
        for (item, &(t, _)) in script.pushes.iter().enumerate() {
            events.schedule(t, (0, s as u64), Event::Push { sender: s, item });
        }
        events.schedule(script.close_at, (0, s as u64), Event::Close { sender: s });
    }
    for r in 0..schedule.service_s.len() {
        events.schedule(0.0, (1, r as u64), Event::Pull { receiver: r });
    }

    let mut out = Outcome {
        terminated_at: vec![None; schedule.service_s.len()],
        ..Outcome::default()
    };
    while let Some((now, event)) = events.pop() {
        match event {
            Event::Push { sender, item } => {
                let script = &schedule.senders[sender];
                queue.push(&script.id, script.pushes[item].1)?;
            }
            Event::Close { sender } => {
                queue.close(&schedule.senders[sender].id)?;
                out.final_close = Some(out.final_close.map_or(now, |t: f64| t.max(now)));
            }
            Event::Pull { receiver } => {
                let name = format!("r{receiver}");
                let (kind, next) = match queue.pull(&name) {
                    PullResult::Data(payload) => {
                        let done_at = now + schedule.service_s[receiver];
                        out.deliveries.push(Delivery {
                            receiver,
                            payload,
                            taken_at: now,
                            done_at,
                        });
                        (PullKind::Data, Some(done_at))
                    }
                    PullResult::Wait => (PullKind::Wait, Some(now + schedule.poll_interval)),
                    PullResult::Empty => {
                        out.terminated_at[receiver] = Some(now);
                        (PullKind::Empty, None)
                    }
                };
                out.pulls.push(Pull {
                    receiver,
                    at: now,
                    kind,
                });
                if let Some(t) = next {
                    events.schedule(t, (1, receiver as u64), Event::Pull { receiver });
                }
            }
        }
    }
    Ok(out)
}
