use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{water_fill, NodeLedger, Placement, Result, SimError, SimJobSpec, SimResult};
use crate::alloc::ClusterSpec;
use crate::trace::{MpiCall, RankTrace, TraceEvent};

/// Compute demands below this many core-seconds count as satisfied.
const DONE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JobId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PodRate {
    pub job: usize,
    pub rank: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NodeSegment {
    pub cores: f64,
    pub pods: Vec<PodRate>,
}

impl NodeSegment {
    pub fn usage(&self) -> f64 {
        self.pods.iter().map(|p| p.rate).sum()
    }
}

/// Rates in force over `[start, start + duration)`.
#[derive(Debug)]
pub struct Segment<'a> {
    pub start: f64,
    pub duration: f64,
    pub nodes: &'a [NodeSegment],
}

/// Bins node usage into fixed-width time buckets for a utilisation series.
#[derive(Debug, Clone)]
pub struct UtilizationSampler {
    interval: f64,
    /// `bins[b][node]` holds core-seconds used in bucket `b`.
    bins: Vec<Vec<f64>>,
}

impl UtilizationSampler {
    pub fn new(interval: f64) -> Self {
        assert!(interval > 0.0, "sampling interval must be positive");
        Self {
            interval,
            bins: Vec::new(),
        }
    }

    pub fn observe(&mut self, seg: &Segment<'_>) {
        let mut t = seg.start;
        let end = seg.start + seg.duration;
        while t < end {
            let b = (t / self.interval).floor() as usize;
            let bin_end = ((b + 1) as f64 * self.interval).min(end);
            let dt = bin_end - t;
            if self.bins.len() <= b {
                self.bins.resize(b + 1, vec![0.0; seg.nodes.len()]);
            }
            for (n, node) in seg.nodes.iter().enumerate() {
                self.bins[b][n] += node.usage() * dt;
            }
            if bin_end <= t {
                break;
            }
            t = bin_end;
        }
    }

    /// `time_s,node,cores_used` rows, one per bucket and node.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,node,cores_used\n");
        for (b, nodes) in self.bins.iter().enumerate() {
            for (n, used) in nodes.iter().enumerate() {
                out.push_str(&format!(
                    "{:.1},{n},{:.4}\n",
                    b as f64 * self.interval,
                    used / self.interval
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Pending,
    Computing,
    Collective { release_at: f64 },
    Done,
}

#[derive(Debug, Clone)]
struct RankState {
    node: usize,
    request: u32,
    demand: f64,
    remaining: f64,
    done_at: Option<f64>,
}

#[derive(Debug, Clone)]
struct Recorder {
    wanted: u32,
    recorded: u32,
    start_us: Option<u64>,
    events: Vec<Vec<TraceEvent>>,
}

#[derive(Debug, Clone)]
struct JobState {
    spec: SimJobSpec,
    ranks: Vec<RankState>,
    phase: Phase,
    completed_iterations: u32,
    iteration_started_at: f64,
    started_at: Option<f64>,
    completed_at: Option<f64>,
    recorder: Option<Recorder>,
    finished_trace: Option<Vec<RankTrace>>,
}

fn to_us(t: f64) -> u64 {
    (t * 1e6).round() as u64
}

/// Incrementally advanced simulation. Jobs can be added and pod requests
/// changed while it runs; [`super::run`] drives a static scenario.
#[derive(Debug, Clone)]
pub struct Engine {
    cluster: ClusterSpec,
    ledger: NodeLedger,
    jobs: Vec<JobState>,
    now: f64,
    rng: ChaCha8Rng,
    busy_core_seconds: Vec<f64>,
    event_count: u64,
    restarts: u64,
}

impl Engine {
    pub fn new(cluster: ClusterSpec, seed: u64) -> Result<Self> {
        cluster
            .validate()
            .map_err(|e| SimError::InvalidPlacement(e.to_string()))?;
        Ok(Self {
            ledger: NodeLedger::new(&cluster),
            busy_core_seconds: vec![0.0; cluster.nodes as usize],
            cluster,
            jobs: Vec::new(),
            now: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            event_count: 0,
            restarts: 0,
        })
    }

    pub fn with_placement(
        cluster: ClusterSpec,
        jobs: &[SimJobSpec],
        placement: &Placement,
        seed: u64,
    ) -> Result<Self> {
        let mut engine = Self::new(cluster, seed)?;
        if placement.nodes.len() != jobs.len() {
            return Err(SimError::InvalidPlacement(format!(
                "{} jobs but {} placement rows",
                jobs.len(),
                placement.nodes.len()
            )));
        }
        for (job, nodes) in jobs.iter().zip(&placement.nodes) {
            job.validate()?;
            if nodes.len() != job.ranks() {
                return Err(SimError::InvalidPlacement(format!(
                    "job {} has {} ranks but {} placed pods",
                    job.id,
                    job.ranks(),
                    nodes.len()
                )));
            }
            if let Some(&bad) = nodes.iter().find(|&&n| n >= cluster.nodes as usize) {
                return Err(SimError::InvalidPlacement(format!("node {bad} does not exist")));
            }
            for (&n, &req) in nodes.iter().zip(&job.requests.per_rank_millicpu) {
                engine.ledger.commit(n, req);
            }
            engine.insert_job(job.clone(), nodes.clone());
        }
        Ok(engine)
    }

    pub fn cluster(&self) -> &ClusterSpec {
        &self.cluster
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn event_count(&self) -> u64 {
        self.event_count
    }

    /// Pods are never restarted by this engine; resizes happen in place.
    pub fn restart_count(&self) -> u64 {
        self.restarts
    }

    pub fn committed_millicpu(&self) -> u64 {
        self.ledger.total()
    }

    pub fn job_count(&self) -> usize {
        self.jobs.len()
    }

    /// Places a new job next to the existing pods. A start offset in the
    /// past means "start now".
    pub fn add_job(&mut self, spec: SimJobSpec) -> Result<JobId> {
        spec.validate()?;
        let requested = self.ledger.total() + spec.requests.total_millicpu();
        let capacity = self.cluster.schedulable_millicpu();
        if requested > capacity {
            return Err(SimError::CapacityExceeded {
                requested,
                capacity,
            });
        }
        let nodes = self.ledger.place_job(&spec)?;
        Ok(self.insert_job(spec, nodes))
    }

    fn insert_job(&mut self, spec: SimJobSpec, nodes: Vec<usize>) -> JobId {
        let ranks = nodes
            .iter()
            .zip(&spec.requests.per_rank_millicpu)
            .zip(&spec.per_rank_compute)
            .map(|((&node, &request), &demand)| RankState {
                node,
                request,
                demand,
                remaining: 0.0,
                done_at: None,
            })
            .collect();
        self.jobs.push(JobState {
            spec,
            ranks,
            phase: Phase::Pending,
            completed_iterations: 0,
            iteration_started_at: 0.0,
            started_at: None,
            completed_at: None,
            recorder: None,
            finished_trace: None,
        });
        let id = JobId(self.jobs.len() - 1);
        self.process_due_events();
        id
    }

    fn job(&self, id: JobId) -> Result<&JobState> {
        self.jobs.get(id.0).ok_or(SimError::UnknownJob(id.0))
    }

    pub fn spec(&self, id: JobId) -> Result<&SimJobSpec> {
        Ok(&self.job(id)?.spec)
    }

    pub fn placement_of(&self, id: JobId) -> Result<Vec<usize>> {
        Ok(self.job(id)?.ranks.iter().map(|r| r.node).collect())
    }

    pub fn requests(&self, id: JobId) -> Result<Vec<u32>> {
        Ok(self.job(id)?.ranks.iter().map(|r| r.request).collect())
    }

    /// Changes a running pod's CPU request in place.
    pub fn set_request(&mut self, id: JobId, rank: usize, millicpu: u32) -> Result<()> {
        if millicpu == 0 {
            return Err(SimError::InvalidJob {
                job: self.job(id)?.spec.id.clone(),
                reason: "request must be positive".into(),
            });
        }
        let state = self.jobs.get_mut(id.0).ok_or(SimError::UnknownJob(id.0))?;
        let r = state.ranks.get_mut(rank).ok_or_else(|| SimError::InvalidJob {
            job: state.spec.id.clone(),
            reason: format!("no rank {rank}"),
        })?;
        self.ledger.adjust(r.node, r.request, millicpu)?;
        r.request = millicpu;
        state.spec.requests.per_rank_millicpu[rank] = millicpu;
        Ok(())
    }

    pub fn completed_iterations(&self, id: JobId) -> Result<u32> {
        Ok(self.job(id)?.completed_iterations)
    }

    pub fn is_done(&self, id: JobId) -> Result<bool> {
        Ok(self.job(id)?.phase == Phase::Done)
    }

    pub fn started_at(&self, id: JobId) -> Result<Option<f64>> {
        Ok(self.job(id)?.started_at)
    }

    pub fn completed_at(&self, id: JobId) -> Result<Option<f64>> {
        Ok(self.job(id)?.completed_at)
    }

    pub fn all_done(&self) -> bool {
        self.jobs.iter().all(|j| j.phase == Phase::Done)
    }

    /// Records the next `iterations` complete iterations of a job as
    /// per-rank traces, starting at the next iteration boundary.
    pub fn start_trace(&mut self, id: JobId, iterations: u32) -> Result<()> {
        let now = self.now;
        let state = self.jobs.get_mut(id.0).ok_or(SimError::UnknownJob(id.0))?;
        if state.phase == Phase::Done {
            return Err(SimError::InvalidJob {
                job: state.spec.id.clone(),
                reason: "cannot trace a finished job".into(),
            });
        }
        let at_boundary = state.phase == Phase::Computing && state.iteration_started_at == now;
        state.finished_trace = None;
        state.recorder = Some(Recorder {
            wanted: iterations.max(1),
            recorded: 0,
            start_us: at_boundary.then(|| to_us(now)),
            events: vec![Vec::new(); state.ranks.len()],
        });
        Ok(())
    }

    pub fn take_trace(&mut self, id: JobId) -> Result<Option<Vec<RankTrace>>> {
        Ok(self
            .jobs
            .get_mut(id.0)
            .ok_or(SimError::UnknownJob(id.0))?
            .finished_trace
            .take())
    }

    pub fn trace_pending(&self, id: JobId) -> Result<bool> {
        Ok(self.job(id)?.recorder.is_some())
    }

    fn begin_iteration(&mut self, j: usize) {
        let now = self.now;
        let jitter = self.jobs[j].spec.compute_jitter;
        let demands: Vec<f64> = self.jobs[j]
            .ranks
            .iter()
            .map(|r| {
                if jitter > 0.0 {
                    r.demand * (1.0 + self.rng.random_range(-jitter..=jitter))
                } else {
                    r.demand
                }
            })
            .collect();
        let job = &mut self.jobs[j];
        job.phase = Phase::Computing;
        job.iteration_started_at = now;
        for (r, d) in job.ranks.iter_mut().zip(demands) {
            r.remaining = d;
            r.done_at = (d <= DONE_TOLERANCE).then_some(now);
        }
        if let Some(rec) = job.recorder.as_mut() {
            rec.start_us.get_or_insert(to_us(now));
        }
        self.maybe_enter_collective(j);
    }

    fn maybe_enter_collective(&mut self, j: usize) {
        let job = &mut self.jobs[j];
        if job.phase == Phase::Computing && job.ranks.iter().all(|r| r.done_at.is_some()) {
            job.phase = Phase::Collective {
                release_at: self.now + job.spec.collective_latency,
            };
        }
    }

    fn release(&mut self, j: usize) {
        let now = self.now;
        let job = &mut self.jobs[j];
        job.completed_iterations += 1;
        if let Some(rec) = job.recorder.as_mut().filter(|r| r.start_us.is_some()) {
            let last = job
                .ranks
                .iter()
                .filter_map(|r| r.done_at)
                .fold(job.iteration_started_at, f64::max);
            let (last_us, release_us) = (to_us(last), to_us(now));
            for (rank, (r, events)) in job.ranks.iter().zip(rec.events.iter_mut()).enumerate() {
                let done_us = to_us(r.done_at.unwrap_or(last));
                events.push(TraceEvent {
                    rank: rank as u32,
                    call: MpiCall::Allreduce,
                    t_enter_us: done_us,
                    t_exit_us: last_us,
                });
                events.push(TraceEvent {
                    rank: rank as u32,
                    call: MpiCall::Barrier,
                    t_enter_us: last_us,
                    t_exit_us: release_us,
                });
            }
            rec.recorded += 1;
            if rec.recorded >= rec.wanted {
                let rec = job.recorder.take().expect("recorder present");
                let start = rec.start_us.unwrap_or(0);
                job.finished_trace = Some(
                    rec.events
                        .into_iter()
                        .enumerate()
                        .map(|(rank, ev)| {
                            RankTrace::new(rank as u32, start, ev).expect("simulated events are ordered")
                        })
                        .collect(),
                );
            }
        }
        if job.completed_iterations >= job.spec.iterations {
            job.phase = Phase::Done;
            job.completed_at = Some(now);
        } else {
            self.begin_iteration(j);
        }
    }

    fn next_timed_event(&self) -> Option<f64> {
        self.jobs
            .iter()
            .filter_map(|j| match j.phase {
                Phase::Pending => Some(j.spec.start_offset.max(self.now)),
                Phase::Collective { release_at } => Some(release_at),
                _ => None,
            })
            .min_by(f64::total_cmp)
    }

    /// Fires job starts and barrier releases due at the current time, in
    /// job order, until none remain.
    fn process_due_events(&mut self) {
        loop {
            let mut fired = false;
            for j in 0..self.jobs.len() {
                match self.jobs[j].phase {
                    Phase::Pending if self.jobs[j].spec.start_offset <= self.now => {
                        self.jobs[j].started_at = Some(self.now);
                        self.event_count += 1;
                        self.begin_iteration(j);
                        fired = true;
                    }
                    Phase::Collective { release_at } if release_at <= self.now => {
                        self.event_count += 1;
                        self.release(j);
                        fired = true;
                    }
                    _ => {}
                }
            }
            if !fired {
                return;
            }
        }
    }

    fn current_rates(&self) -> Vec<NodeSegment> {
        let cores = f64::from(self.cluster.vcpus_per_node);
        let mut nodes: Vec<NodeSegment> = (0..self.cluster.nodes)
            .map(|_| NodeSegment {
                cores,
                pods: Vec::new(),
            })
            .collect();
        let mut weights: Vec<Vec<f64>> = vec![Vec::new(); nodes.len()];
        for (j, job) in self.jobs.iter().enumerate() {
            if job.phase != Phase::Computing {
                continue;
            }
            for (rank, r) in job.ranks.iter().enumerate() {
                if r.done_at.is_none() {
                    nodes[r.node].pods.push(PodRate {
                        job: j,
                        rank,
                        rate: 0.0,
                    });
                    weights[r.node].push(f64::from(r.request));
                }
            }
        }
        for (node, w) in nodes.iter_mut().zip(&weights) {
            for (pod, rate) in node.pods.iter_mut().zip(water_fill(cores, w)) {
                pod.rate = rate;
            }
        }
        nodes
    }

    /// Advances to the next event or to `horizon`, whichever comes first.
    /// Returns `false` when nothing is left to simulate before `horizon`.
    fn step<F: FnMut(&Segment<'_>)>(&mut self, horizon: f64, observer: &mut F) -> bool {
        self.process_due_events();
        if self.all_done() || self.now >= horizon {
            return false;
        }
        let nodes = self.current_rates();
        let mut dt = self.next_timed_event().map_or(f64::INFINITY, |t| t - self.now);
        for pod in nodes.iter().flat_map(|n| &n.pods) {
            let r = &self.jobs[pod.job].ranks[pod.rank];
            dt = dt.min(r.remaining / pod.rate);
        }
        let dt = dt.min(horizon - self.now).max(0.0);
        if !dt.is_finite() {
            return false;
        }

        observer(&Segment {
            start: self.now,
            duration: dt,
            nodes: &nodes,
        });
        for (n, node) in nodes.iter().enumerate() {
            self.busy_core_seconds[n] += node.usage() * dt;
        }
        self.now += dt;

        let mut touched = Vec::new();
        for pod in nodes.iter().flat_map(|n| &n.pods) {
            let r = &mut self.jobs[pod.job].ranks[pod.rank];
            let finish_in = r.remaining / pod.rate;
            r.remaining -= pod.rate * dt;
            if finish_in <= dt * (1.0 + 1e-12) || r.remaining <= DONE_TOLERANCE {
                r.remaining = 0.0;
                r.done_at = Some(self.now);
                self.event_count += 1;
                touched.push(pod.job);
            }
        }
        touched.dedup();
        for j in touched {
            self.maybe_enter_collective(j);
        }
        self.process_due_events();
        true
    }

    pub fn advance_until<F: FnMut(&Segment<'_>)>(&mut self, t: f64, observer: &mut F) {
        while self.step(t, observer) {}
        if !self.all_done() && self.now < t {
            // Nothing runnable and nothing scheduled before `t`: idle time.
            self.now = t;
            self.process_due_events();
        }
    }

    pub fn run_to_completion<F: FnMut(&Segment<'_>)>(&mut self, observer: &mut F) {
        while self.step(f64::INFINITY, observer) {}
    }

    /// Runs until the job has completed `iterations` iterations in total
    /// or finished.
    pub fn run_until_iterations<F: FnMut(&Segment<'_>)>(
        &mut self,
        id: JobId,
        iterations: u32,
        observer: &mut F,
    ) -> Result<()> {
        self.job(id)?;
        while self.jobs[id.0].completed_iterations < iterations && self.jobs[id.0].phase != Phase::Done {
            if !self.step(f64::INFINITY, observer) {
                break;
            }
        }
        Ok(())
    }

    pub fn result(&self) -> Result<SimResult> {
        let mut per_job_completion = Vec::with_capacity(self.jobs.len());
        let mut per_job_duration = Vec::with_capacity(self.jobs.len());
        for j in &self.jobs {
            let (Some(done), Some(start)) = (j.completed_at, j.started_at) else {
                return Err(SimError::NotFinished);
            };
            per_job_completion.push(done);
            per_job_duration.push(done - start);
        }
        let makespan = per_job_completion.iter().copied().fold(0.0, f64::max);
        let per_node_utilization = self
            .busy_core_seconds
            .iter()
            .map(|b| if makespan > 0.0 { b / makespan } else { 0.0 })
            .collect();
        let fairness_ratio = (per_job_duration.len() >= 2).then(|| {
            let hi = per_job_duration.iter().copied().fold(0.0, f64::max);
            let lo = per_job_duration.iter().copied().fold(f64::INFINITY, f64::min);
            hi / lo
        });
        Ok(SimResult {
            job_ids: self.jobs.iter().map(|j| j.spec.id.clone()).collect(),
            per_job_completion,
            per_job_duration,
            makespan,
            per_node_utilization,
            fairness_ratio,
            event_count: self.event_count,
        })
    }
}
