//! Sender/Receiver/Queue coordination protocol.
//!
//! Senders register with a queue, push payloads and close when done.
//! Receivers pull: they get the next payload, a `Wait` while the queue is
//! empty but some sender is still connected, or `Empty` once the queue is
//! drained and every sender has closed. `Empty` tells a receiver to
//! disconnect and terminate.
//!
//! [`Queue`] is the plain state machine, mutated by a single owner (the
//! simulator's event loop). [`SharedQueue`] wraps it for concurrent threads
//! and [`wire::RemoteQueue`] reaches one over a local socket. All three
//! implement [`QueueHandle`], which is what [`receive_loop`] drives.

pub mod sim;
pub mod wire;

use std::collections::{BTreeSet, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::{Error, Result};

/// Opaque payload bytes.
pub type Payload = Vec<u8>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PullResult<P = Payload> {
    Data(P),
    /// Nothing queued, but at least one sender is still connected.
    Wait,
    /// Nothing queued and no sender connected.
    Empty,
}

#[derive(Debug, Clone)]
pub struct Queue<P = Payload> {
    id: String,
    items: VecDeque<P>,
    open: BTreeSet<String>,
    closed: BTreeSet<String>,
}

impl<P> Queue<P> {
    pub fn new(id: impl Into<String>) -> Self {
        Queue {
            id: id.into(),
            items: VecDeque::new(),
            open: BTreeSet::new(),
            closed: BTreeSet::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Connects a sender. Re-registering after a close is allowed.
    pub fn register(&mut self, sender: &str) -> Result<()> {
        if self.open.contains(sender) {
            return Err(Error::Protocol(format!(
                "sender {sender} is already connected to queue {}",
                self.id
            )));
        }
        self.closed.remove(sender);
        self.open.insert(sender.to_owned());
        Ok(())
    }

    pub fn push(&mut self, sender: &str, payload: P) -> Result<()> {
        if !self.open.contains(sender) {
            return Err(Error::Protocol(format!(
                "sender {sender} is not connected to queue {}",
                self.id
            )));
        }
        self.items.push_back(payload);
        Ok(())
    }

    /// Disconnects a sender. Items it pushed stay pullable.
    pub fn close(&mut self, sender: &str) -> Result<()> {
        if !self.open.remove(sender) {
            return Err(Error::Protocol(format!(
                "sender {sender} is not connected to queue {}",
                self.id
            )));
        }
        self.closed.insert(sender.to_owned());
        Ok(())
    }

    pub fn pull(&mut self, _receiver: &str) -> PullResult<P> {
        match self.items.pop_front() {
            Some(item) => PullResult::Data(item),
            None if self.open.is_empty() => PullResult::Empty,
            None => PullResult::Wait,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn open_senders(&self) -> impl Iterator<Item = &str> {
        self.open.iter().map(String::as_str)
    }

    pub fn closed_senders(&self) -> impl Iterator<Item = &str> {
        self.closed.iter().map(String::as_str)
    }
}

/// Operations a sender or receiver can perform on some queue endpoint.
pub trait QueueHandle<P> {
    fn register(&self, sender: &str) -> Result<()>;
    fn push(&self, sender: &str, payload: P) -> Result<()>;
    fn close(&self, sender: &str) -> Result<()>;
    fn pull(&self, receiver: &str) -> Result<PullResult<P>>;
}

/// Thread-safe queue. Each operation, including the
/// check-items/check-senders/dequeue of a pull, happens under one lock.
#[derive(Debug)]
pub struct SharedQueue<P = Payload>(Arc<Mutex<Queue<P>>>);

impl<P> Clone for SharedQueue<P> {
    fn clone(&self) -> Self {
        SharedQueue(Arc::clone(&self.0))
    }
}

impl<P> SharedQueue<P> {
    pub fn new(id: impl Into<String>) -> Self {
        SharedQueue(Arc::new(Mutex::new(Queue::new(id))))
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Queue<P>> {
        self.0.lock().expect("queue lock poisoned")
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.lock().is_empty()
    }
}

impl<P> QueueHandle<P> for SharedQueue<P> {
    fn register(&self, sender: &str) -> Result<()> {
        self.lock().register(sender)
    }

    fn push(&self, sender: &str, payload: P) -> Result<()> {
        self.lock().push(sender, payload)
    }

    fn close(&self, sender: &str) -> Result<()> {
        self.lock().close(sender)
    }

    fn pull(&self, receiver: &str) -> Result<PullResult<P>> {
        Ok(self.lock().pull(receiver))
    }
}

/// Source of time for [`receive_loop`], in seconds.
pub trait Clock {
    fn now(&self) -> f64;
    fn sleep(&self, secs: f64);
}

#[derive(Debug, Clone, Copy)]
pub struct RealClock {
    origin: Instant,
}

impl RealClock {
    pub fn new() -> Self {
        RealClock {
            origin: Instant::now(),
        }
    }

    pub fn starting_at(origin: Instant) -> Self {
        RealClock { origin }
    }
}

impl Default for RealClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for RealClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    fn sleep(&self, secs: f64) {
        if secs > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(secs));
        }
    }
}

/// Default delay before a receiver pulls again after a `Wait`.
pub const DEFAULT_POLL_INTERVAL_S: f64 = 1.0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReceiveReport {
    /// Items whose handler succeeded.
    pub processed: usize,
    pub failed: usize,
    pub failures: Vec<String>,
    pub waits: usize,
    /// Clock reading when `Empty` was pulled.
    pub terminated_at: f64,
}

/// Pulls until `Empty`, handing every payload to `handler` and sleeping
/// `poll_interval` seconds after each `Wait`. A failing handler is recorded
/// and the loop carries on. Errors are transport or protocol failures of the
/// queue itself.
pub fn receive_loop<P, Q, C, F, E>(
    queue: &Q,
    receiver: &str,
    mut handler: F,
    poll_interval: f64,
    clock: &C,
) -> Result<ReceiveReport>
where
    Q: QueueHandle<P> + ?Sized,
    C: Clock + ?Sized,
    F: FnMut(P) -> std::result::Result<(), E>,
    E: std::fmt::Display,
{
    let mut report = ReceiveReport::default();
    loop {
        match queue.pull(receiver)? {
            PullResult::Data(item) => match handler(item) {
                Ok(()) => report.processed += 1,
                Err(e) => {
                    log::warn!("receiver {receiver}: handler failed: {e}");
                    report.failed += 1;
                    report.failures.push(e.to_string());
                }
            },
            PullResult::Wait => {
                report.waits += 1;
                clock.sleep(poll_interval);
            }
            PullResult::Empty => {
                report.terminated_at = clock.now();
                return Ok(report);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(q: &mut Queue<u32>) -> Vec<PullResult<u32>> {
        let mut out = Vec::new();
        loop {
            let r = q.pull("r");
            let stop = !matches!(r, PullResult::Data(_));
            out.push(r);
            if stop {
                return out;
            }
        }
    }

    #[test]
    fn register_guards() {
        let mut q: Queue<u32> = Queue::new("q");
        q.register("s1").unwrap();
        assert_eq!(q.open_senders().collect::<Vec<_>>(), ["s1"]);
        assert!(matches!(q.register("s1"), Err(Error::Protocol(_))));
        q.close("s1").unwrap();
        q.register("s1").unwrap();
        assert_eq!(q.open_senders().collect::<Vec<_>>(), ["s1"]);
        assert_eq!(q.closed_senders().count(), 0);
    }

    #[test]
    fn fifo_for_one_sender() {
        let mut q = Queue::new("q");
        q.register("s").unwrap();
        for i in 0..3 {
            q.push("s", i).unwrap();
        }
        q.close("s").unwrap();
        assert_eq!(
            drain(&mut q),
            [PullResult::Data(0), PullResult::Data(1), PullResult::Data(2), PullResult::Empty]
        );
    }

    #[test]
    fn push_requires_open_sender() {
        let mut q = Queue::new("q");
        assert!(q.push("ghost", 1).is_err());
        q.register("s").unwrap();
        q.close("s").unwrap();
        assert!(matches!(q.push("s", 1), Err(Error::Protocol(_))));
        assert!(matches!(q.close("s"), Err(Error::Protocol(_))));
    }

    #[test]
    fn close_keeps_queued_items() {
        let mut q = Queue::new("q");
        q.register("s").unwrap();
        q.push("s", 7).unwrap();
        q.push("s", 8).unwrap();
        q.close("s").unwrap();
        assert_eq!(
            drain(&mut q),
            [PullResult::Data(7), PullResult::Data(8), PullResult::Empty]
        );
    }

    #[test]
    fn wait_while_any_sender_open() {
        let mut q: Queue<u32> = Queue::new("q");
        assert_eq!(q.pull("r"), PullResult::Empty);
        q.register("a").unwrap();
        assert_eq!(q.pull("r"), PullResult::Wait);
        q.register("b").unwrap();
        q.close("a").unwrap();
        assert_eq!(q.pull("r"), PullResult::Wait);
        q.close("b").unwrap();
        assert_eq!(q.pull("r"), PullResult::Empty);
    }

    // Every interleaving of two senders pushing two items each: the merged
    // stream keeps each sender's order.
    #[test]
    fn per_sender_order_over_all_interleavings() {
        let mut seen = std::collections::BTreeSet::new();
        for mask in 0u32..16 {
            let order: Vec<u8> = (0..4).map(|i| ((mask >> i) & 1) as u8).collect();
            if order.iter().filter(|&&s| s == 0).count() != 2 {
                continue;
            }
            let mut q = Queue::new("q");
            q.register("a").unwrap();
            q.register("b").unwrap();
            let mut next = [0u32, 0];
            for &s in &order {
                let sender = if s == 0 { "a" } else { "b" };
                q.push(sender, (u32::from(s), next[s as usize])).unwrap();
                next[s as usize] += 1;
            }
            q.close("a").unwrap();
            q.close("b").unwrap();
            let mut last = [None, None];
            let mut delivered = 0;
            while let PullResult::Data((s, k)) = q.pull("r") {
                assert!(last[s as usize].is_none_or(|prev| prev < k));
                last[s as usize] = Some(k);
                delivered += 1;
            }
            assert_eq!(delivered, 4);
            seen.insert(order);
        }
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn concurrent_receivers_take_each_item_once() {
        let q = SharedQueue::new("q");
        q.register("s").unwrap();
        for i in 0..100u32 {
            q.push("s", i).unwrap();
        }
        q.close("s").unwrap();
        let clock = RealClock::new();
        let delivered = Mutex::new(Vec::new());
        std::thread::scope(|s| {
            for r in 0..4 {
                let (q, clock, delivered) = (&q, &clock, &delivered);
                s.spawn(move || {
                    receive_loop(
                        q,
                        &format!("r{r}"),
                        |item| {
                            delivered.lock().unwrap().push(item);
                            Ok::<_, String>(())
                        },
                        0.001,
                        clock,
                    )
                    .unwrap()
                });
            }
        });
        let mut got = delivered.into_inner().unwrap();
        got.sort_unstable();
        assert_eq!(got, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn loop_counts_and_terminates() {
        let q = SharedQueue::new("q");
        q.register("s").unwrap();
        for i in 0..5 {
            q.push("s", i).unwrap();
        }
        q.close("s").unwrap();
        let report =
            receive_loop(&q, "r", |_| Ok::<_, String>(()), 1.0, &RealClock::new()).unwrap();
        assert_eq!((report.processed, report.failed, report.waits), (5, 0, 0));
    }

    #[test]
    fn loop_with_sender_that_never_pushes() {
        let q: SharedQueue<u32> = SharedQueue::new("q");
        q.register("s").unwrap();
        q.close("s").unwrap();
        let report =
            receive_loop(&q, "r", |_| Ok::<_, String>(()), 1.0, &RealClock::new()).unwrap();
        assert_eq!(report.processed, 0);
    }

    #[test]
    fn handler_failure_does_not_stop_the_loop() {
        let q = SharedQueue::new("q");
        q.register("s").unwrap();
        for i in 0..4 {
            q.push("s", i).unwrap();
        }
        q.close("s").unwrap();
        let report = receive_loop(
            &q,
            "r",
            |i| if i == 2 { Err("boom") } else { Ok(()) },
            1.0,
            &RealClock::new(),
        )
        .unwrap();
        assert_eq!((report.processed, report.failed), (3, 1));
        assert_eq!(report.failures, ["boom"]);
    }

    #[test]
    fn loop_waits_for_slow_sender() {
        let q = SharedQueue::new("q");
        q.register("s").unwrap();
        let clock = RealClock::new();
        let report = std::thread::scope(|s| {
            let receiver = s.spawn(|| {
                receive_loop(&q, "r", |_| Ok::<_, String>(()), 0.002, &clock).unwrap()
            });
            for i in 0..3 {
                std::thread::sleep(Duration::from_millis(10));
                q.push("s", i).unwrap();
            }
            q.close("s").unwrap();
            receiver.join().unwrap()
        });
        assert_eq!(report.processed, 3);
        assert!(report.waits >= 1);
    }
}
