//! The queue protocol under real threads, in process and over sockets.

use std::sync::{Arc, Barrier, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use hetflow::protocol::wire::{QueueServer, RemoteQueue};
use hetflow::protocol::{receive_loop, Payload, QueueHandle, RealClock, SharedQueue};

const POLL: f64 = 0.01;

/// Runs `senders` x `per_sender` pushes against `receivers` receive loops and
/// returns every delivered payload plus the longest gap between the last
/// close and a receiver stopping.
fn exchange<Q, F>(connect: F, senders: usize, receivers: usize, per_sender: usize) -> (Vec<Payload>, Duration)
where
    Q: QueueHandle<Payload>,
    F: Fn() -> Q + Send + Sync + 'static,
{
    let connect = Arc::new(connect);
    let got = Arc::new(Mutex::new(Vec::new()));
    let closed_at = Arc::new(Mutex::new(None::<Instant>));
    let registered = Arc::new(Barrier::new(senders + receivers));

    let mut handles = Vec::new();
    for s in 0..senders {
        let (connect, registered, closed_at) = (connect.clone(), registered.clone(), closed_at.clone());
        handles.push(thread::spawn(move || {
            let q = connect();
            let id = format!("s{s}");
            q.register(&id).unwrap();
            registered.wait();
            for i in 0..per_sender {
                q.push(&id, format!("{s}:{i}").into_bytes()).unwrap();
                if i % 7 == 0 {
                    thread::sleep(Duration::from_millis(1));
                }
            }
            q.close(&id).unwrap();
            let mut c = closed_at.lock().unwrap();
            let now = Instant::now();
            *c = Some(c.map_or(now, |t| t.max(now)));
            None
        }));
    }
    for r in 0..receivers {
        let (connect, registered, got) = (connect.clone(), registered.clone(), got.clone());
        handles.push(thread::spawn(move || {
            let q = connect();
            registered.wait();
            let report = receive_loop(
                &q,
                &format!("r{r}"),
                |p: Payload| {
                    got.lock().unwrap().push(p);
                    Ok::<_, String>(())
                },
                POLL,
                &RealClock::new(),
            )
            .unwrap();
            assert_eq!(report.failed, 0);
            Some(Instant::now())
        }));
    }
    let stops: Vec<Instant> = handles.into_iter().filter_map(|h| h.join().unwrap()).collect();
    let closed = closed_at.lock().unwrap().expect("senders closed");
    let lag = stops
        .iter()
        .map(|t| t.saturating_duration_since(closed))
        .max()
        .unwrap_or_default();
    let got = std::mem::take(&mut *got.lock().unwrap());
    (got, lag)
}

fn expected(senders: usize, per_sender: usize) -> Vec<Payload> {
    let mut v: Vec<Payload> = (0..senders)
        .flat_map(|s| (0..per_sender).map(move |i| format!("{s}:{i}").into_bytes()))
        .collect();
    v.sort();
    v
}

#[test]
fn in_process_exactly_once() {
    let queue = SharedQueue::<Payload>::new("images");
    let (mut got, lag) = exchange(move || queue.clone(), 3, 6, 400);
    got.sort();
    assert_eq!(got, expected(3, 400));
    // One poll interval plus scheduling slack.
    assert!(lag < Duration::from_secs_f64(POLL) + Duration::from_millis(200), "lag {lag:?}");
}

#[test]
fn over_sockets_exactly_once() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("queue.sock");
    let _server = QueueServer::bind(&path, SharedQueue::new("tiles")).unwrap();
    let (mut got, lag) = exchange(move || RemoteQueue::connect(&path).unwrap(), 2, 4, 150);
    got.sort();
    assert_eq!(got, expected(2, 150));
    assert!(lag < Duration::from_secs_f64(POLL) + Duration::from_millis(500), "lag {lag:?}");
}

#[test]
fn receivers_started_before_any_sender_wait_then_drain() {
    let queue = SharedQueue::<Payload>::new("late");
    queue.register("s").unwrap();
    let rq = queue.clone();
    let receiver = thread::spawn(move || {
        receive_loop(&rq, "r", |_p: Payload| Ok::<_, String>(()), POLL, &RealClock::new()).unwrap()
    });
    thread::sleep(Duration::from_millis(50));
    queue.push("s", vec![1]).unwrap();
    queue.close("s").unwrap();
    let report = receiver.join().unwrap();
    assert_eq!(report.processed, 1);
    assert!(report.waits >= 1);
}
