//! Real-concurrency backend. Workers are OS threads that sleep for scaled
//! task durations and coordinate only through protocol queues, the slot
//! ledger and a record channel. Timestamps are wall-clock seconds since the
//! run started; overhead intervals are measured, not injected.

use std::sync::mpsc;
use std::sync::{Arc, Barrier};
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sim::{manifest, PipelineScheduler};
use super::trace::{IntervalLabel, LabeledInterval, Outcome, TaskRecord, Trace};
use super::{decode, encode, partition, DesignId, RunConfig, RunOutput, TaskKind, TileSet};
use crate::cluster::{NodeId, SharedLedger, SlotLedger};
use crate::perfmodel::sample_duration;
use crate::protocol::{receive_loop, Clock, QueueHandle, RealClock, SharedQueue};
use crate::workload::ImageSpec;
use crate::{Error, Result};

pub(super) fn run(images: &[ImageSpec], cfg: &RunConfig) -> Result<RunOutput> {
    match cfg.design {
        DesignId::D1 => run_pipelines(images, cfg),
        DesignId::D2 | DesignId::D2A => run_workers(images, cfg),
    }
}

struct Stopwatch<'a> {
    clock: &'a RealClock,
    intervals: Vec<LabeledInterval>,
}

impl<'a> Stopwatch<'a> {
    fn time<T>(&mut self, label: IntervalLabel, f: impl FnOnce() -> T) -> T {
        let start_s = self.clock.now();
        let out = f();
        self.intervals.push(LabeledInterval {
            label,
            start_s,
            end_s: self.clock.now(),
        });
        out
    }
}

/// Gives records task ids in start order.
fn number(mut trace: Trace) -> Trace {
    trace.sort_by(|a, b| {
        a.start_s
            .total_cmp(&b.start_s)
            .then_with(|| a.node_id.cmp(&b.node_id))
            .then_with(|| a.image_id.cmp(&b.image_id))
    });
    for (i, rec) in trace.iter_mut().enumerate() {
        rec.task_id = i as u64;
    }
    trace
}

fn run_workers(images: &[ImageSpec], cfg: &RunConfig) -> Result<RunOutput> {
    let clock = RealClock::new();
    let mut watch = Stopwatch {
        clock: &clock,
        intervals: Vec::new(),
    };
    let early_binding = cfg.design == DesignId::D2A;
    let n = cfg.cluster.len();
    let speeds = cfg.speeds();
    let t1_model = cfg.models.get(cfg.design, TaskKind::Tiling)?.clone();
    let t2_model = cfg.models.get(cfg.design, TaskKind::Counting)?.clone();

    let payloads: Vec<Vec<u8>> =
        watch.time(IntervalLabel::DatasetDiscovery, || images.iter().map(encode).collect());
    watch.time(IntervalLabel::ClientSubmission, || ());

    let ledger = Arc::new(SharedLedger::new(SlotLedger::new(&cfg.cluster, cfg.caps)));
    let workers_per_node = (cfg.caps.max_t1_per_node + cfg.caps.max_t2_per_node) as usize;
    let start = Arc::new(Barrier::new(n * workers_per_node + 1));
    let (tx, rx) = mpsc::channel::<TaskRecord>();

    let (image_queues, handles) = watch.time(IntervalLabel::Setup, || -> Result<_> {
        let image_queues: Vec<SharedQueue> = if early_binding {
            cfg.cluster
                .nodes
                .iter()
                .map(|node| SharedQueue::new(format!("images.{}", node.id)))
                .collect()
        } else {
            vec![SharedQueue::new("images")]
        };
        let tile_queues: Vec<SharedQueue> = cfg
            .cluster
            .nodes
            .iter()
            .map(|node| SharedQueue::new(format!("tiles.{}", node.id)))
            .collect();

        let mut handles = Vec::new();
        let mut worker_index = 0u64;
        for (i, node) in cfg.cluster.nodes.iter().enumerate() {
            let images_q = image_queues[if early_binding { i } else { 0 }].clone();
            for (kind, count) in [
                (TaskKind::Tiling, cfg.caps.max_t1_per_node),
                (TaskKind::Counting, cfg.caps.max_t2_per_node),
            ] {
                for k in 0..count {
                    let name = format!("{}.{kind}.{k}", node.id);
                    if kind == TaskKind::Tiling {
                        tile_queues[i].register(&name)?;
                    }
                    let ctx = WorkerCtx {
                        name,
                        node: node.id.clone(),
                        kind,
                        model: if kind == TaskKind::Tiling { t1_model.clone() } else { t2_model.clone() },
                        speed: speeds[i].factor(kind),
                        time_scale: cfg.time_scale,
                        poll_interval: cfg.poll_interval_s,
                        rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed().wrapping_add(worker_index)),
                        source: if kind == TaskKind::Tiling { images_q.clone() } else { tile_queues[i].clone() },
                        tiles: tile_queues[i].clone(),
                        ledger: Arc::clone(&ledger),
                        records: tx.clone(),
                        clock,
                    };
                    worker_index += 1;
                    let start = Arc::clone(&start);
                    handles.push(thread::spawn(move || {
                        start.wait();
                        ctx.run()
                    }));
                }
            }
        }
        Ok((image_queues, handles))
    })?;
    drop(tx);

    const LOADER: &str = "loader";
    let load = |queue: &SharedQueue, items: &mut dyn Iterator<Item = Vec<u8>>| -> Result<()> {
        queue.register(LOADER)?;
        for p in items {
            queue.push(LOADER, p)?;
        }
        queue.close(LOADER)
    };
    let loaded = if early_binding {
        watch.time(IntervalLabel::Distributing, || -> Result<()> {
            let model = cfg.models.get(cfg.design, cfg.partition_by)?;
            let parts = partition(images, n, model, cfg.partition)?;
            for (queue, part) in image_queues.iter().zip(&parts) {
                load(queue, &mut part.iter().map(encode))?;
            }
            Ok(())
        })
    } else {
        load(&image_queues[0], &mut payloads.into_iter())
    };
    // Workers are parked on the barrier; release them even on failure so
    // they see Empty and exit.
    start.wait();
    loaded?;

    let mut last_activity = 0.0f64;
    let mut failures = Vec::new();
    for h in handles {
        match h.join().expect("worker thread panicked") {
            Ok(done) => last_activity = last_activity.max(done),
            Err(e) => failures.push(e.to_string()),
        }
    }
    let trace = number(rx.into_iter().collect());
    if let Some(e) = failures.first() {
        return Err(Error::Protocol(format!("worker failed: {e}")));
    }
    last_activity = trace.iter().map(|r| r.end_s).fold(last_activity, f64::max);
    let teardown = clock.now() - last_activity;
    Ok(RunOutput {
        manifest: manifest(images, cfg, watch.intervals, last_activity, teardown.max(0.0)),
        trace,
    })
}

struct WorkerCtx {
    name: String,
    node: NodeId,
    kind: TaskKind,
    model: crate::perfmodel::ExecTimeModel,
    speed: f64,
    time_scale: f64,
    poll_interval: f64,
    rng: ChaCha8Rng,
    source: SharedQueue,
    tiles: SharedQueue,
    ledger: Arc<SharedLedger>,
    records: mpsc::Sender<TaskRecord>,
    clock: RealClock,
}

impl WorkerCtx {
    /// Runs the receive loop; returns the termination time.
    fn run(mut self) -> Result<f64> {
        let source = self.source.clone();
        let clock = self.clock;
        let name = self.name.clone();
        let poll = self.poll_interval;
        let report = receive_loop(&source, &name, |payload| self.handle(&payload), poll, &clock)?;
        if self.kind == TaskKind::Tiling {
            self.tiles.close(&self.name)?;
        }
        if report.failed > 0 {
            return Err(Error::Protocol(format!(
                "{}: {} failed items: {}",
                self.name,
                report.failed,
                report.failures.join("; ")
            )));
        }
        Ok(report.terminated_at)
    }

    fn handle(&mut self, payload: &[u8]) -> Result<()> {
        let image: ImageSpec = match self.kind {
            TaskKind::Tiling => decode(payload)?,
            TaskKind::Counting => {
                let tiles: TileSet = decode(payload)?;
                ImageSpec {
                    id: tiles.image_id,
                    size_mb: tiles.size_mb,
                }
            }
        };
        if !self.ledger.try_acquire(&self.node, self.kind)? {
            return Err(Error::Invariant(format!(
                "{}: no free {} slot on {}",
                self.name, self.kind, self.node
            )));
        }
        let start_s = self.clock.now();
        let sampled = sample_duration(&self.model, image.size_mb, &mut self.rng);
        let outcome = match sampled {
            Ok(d) => {
                self.clock.sleep(d / self.speed * self.time_scale);
                Outcome::Ok
            }
            Err(_) => Outcome::Failed,
        };
        let end_s = self.clock.now();
        self.ledger.release(&self.node, self.kind)?;
        let _ = self.records.send(TaskRecord {
            task_id: 0,
            kind: self.kind,
            image_id: image.id.clone(),
            node_id: self.node.clone(),
            start_s,
            end_s,
            outcome,
        });
        sampled?;
        if self.kind == TaskKind::Tiling {
            let tiles = TileSet {
                image_id: image.id,
                size_mb: image.size_mb,
            };
            self.tiles.push(&self.name, encode(&tiles))?;
        }
        Ok(())
    }
}

struct Completion {
    pipeline: usize,
    record: TaskRecord,
}

fn run_pipelines(images: &[ImageSpec], cfg: &RunConfig) -> Result<RunOutput> {
    let clock = RealClock::new();
    let mut watch = Stopwatch {
        clock: &clock,
        intervals: Vec::new(),
    };
    let mut sched = watch.time(IntervalLabel::DatasetDiscovery, || {
        PipelineScheduler::new(images, &cfg.cluster, cfg.caps)
    });
    watch.time(IntervalLabel::ClientSubmission, || ());

    let speeds = cfg.speeds();
    let models = [
        cfg.models.get(cfg.design, TaskKind::Tiling)?,
        cfg.models.get(cfg.design, TaskKind::Counting)?,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed());
    let (tx, rx) = mpsc::channel::<Completion>();
    let mut running = 0usize;
    let mut trace = Vec::with_capacity(images.len() * 2);

    loop {
        for pl in sched.placements() {
            let image = sched.pipelines[pl.pipeline].image.clone();
            let sleep = sample_duration(models[pl.kind as usize], image.size_mb, &mut rng)?
                / speeds[pl.node].factor(pl.kind)
                * cfg.time_scale;
            let node = cfg.cluster.nodes[pl.node].id.clone();
            let tx = tx.clone();
            running += 1;
            thread::spawn(move || {
                let start_s = clock.now();
                clock.sleep(sleep);
                let record = TaskRecord {
                    task_id: 0,
                    kind: pl.kind,
                    image_id: image.id,
                    node_id: node,
                    start_s,
                    end_s: clock.now(),
                    outcome: Outcome::Ok,
                };
                let _ = tx.send(Completion {
                    pipeline: pl.pipeline,
                    record,
                });
            });
        }
        if running == 0 {
            break;
        }
        let done = rx
            .recv()
            .map_err(|_| Error::Invariant("task thread vanished".into()))?;
        running -= 1;
        sched.complete(done.pipeline, done.record.kind)?;
        trace.push(done.record);
    }
    if !sched.finished() {
        return Err(Error::Invariant("pipelines left unfinished".into()));
    }
    let trace = number(trace);
    let last = trace.iter().map(|r| r.end_s).fold(0.0, f64::max);
    let teardown = (clock.now() - last).max(0.0);
    Ok(RunOutput {
        manifest: manifest(images, cfg, watch.intervals, last, teardown),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{audit, Backend};
    use super::*;
    use crate::cluster::ClusterSpec;
    use crate::workload::{generate_workload, WorkloadSpec};

    fn cfg(design: DesignId) -> RunConfig {
        let mut cfg = RunConfig::reference(design, 4);
        cfg.backend = Backend::Realtime;
        cfg.cluster = ClusterSpec::homogeneous(2, 32, 2, 128.0);
        cfg.poll_interval_s = 0.005;
        cfg.time_scale = 1e-4;
        cfg
    }

    #[test]
    fn every_design_completes_and_passes_audit() {
        let work = generate_workload(&WorkloadSpec::reference(16, 3)).unwrap();
        let ids: Vec<_> = work.iter().map(|i| i.id.clone()).collect();
        for design in DesignId::ALL {
            let cfg = cfg(design);
            let out = super::super::run(&work, &cfg).unwrap();
            assert_eq!(out.trace.len(), 32, "{design}");
            audit(&out.trace, &cfg.cluster, &cfg.caps, Some(&ids)).unwrap();
            assert_eq!(out.manifest.time_scale, Some(1e-4));
            assert!(out.manifest.run_end_s >= out.trace.iter().map(|r| r.end_s).fold(0.0, f64::max));
        }
    }
}
