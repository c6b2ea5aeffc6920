//! Discrete-event simulation of bulk-synchronous jobs sharing a cluster
//! under proportional-share CPU scheduling.
//!
//! Every rank is a single-threaded pod. Within an iteration a rank computes
//! until it has received its demand in core-seconds, then waits at the
//! collective without using CPU. When the last rank of a job arrives, the
//! job spends its collective latency `L` and all ranks start the next
//! iteration together.
//!
//! On a node whose runnable pods fit on its cores each pod runs at full
//! speed. Otherwise cores are water-filled: shares proportional to CPU
//! request, capped at one core per pod, excess handed back to the uncapped
//! pods until nothing changes. Rates are constant between events, so the
//! simulation is exact up to floating-point rounding.

mod engine;
pub mod scenario;

use serde::{Deserialize, Serialize};

use crate::alloc::{AllocationPlan, ClusterSpec};
use crate::trace::DutyCycleReport;

pub use engine::{Engine, JobId, NodeSegment, PodRate, Segment, UtilizationSampler};
pub use scenario::{SimScenario, JobEntry};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("requests of {requested} m exceed schedulable capacity of {capacity} m")]
    CapacityExceeded { requested: u64, capacity: u64 },
    #[error("pod {job}/{rank} ({request} m) fits on no node")]
    Unschedulable { job: String, rank: usize, request: u32 },
    #[error("node {node} would hold {committed} m of requests, above its {capacity} m")]
    NodeOvercommitted { node: usize, committed: u64, capacity: u64 },
    #[error("invalid job {job}: {reason}")]
    InvalidJob { job: String, reason: String },
    #[error("invalid placement: {0}")]
    InvalidPlacement(String),
    #[error("unknown job {0}")]
    UnknownJob(usize),
    #[error("simulation has unfinished jobs")]
    NotFinished,
    #[error("fairness needs at least two jobs in the group")]
    GroupTooSmall,
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("scenario: {0}")]
    Scenario(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimJobSpec {
    pub id: String,
    /// Core-seconds each rank computes per iteration.
    pub per_rank_compute: Vec<f64>,
    pub iterations: u32,
    /// Seconds between the last rank reaching the collective and the
    /// release of all ranks.
    pub collective_latency: f64,
    pub requests: AllocationPlan,
    pub start_offset: f64,
    /// Half-width of a uniform per-iteration perturbation of each rank's
    /// demand, as a fraction of it. Zero disables the random stream.
    #[serde(default)]
    pub compute_jitter: f64,
}

impl SimJobSpec {
    pub fn ranks(&self) -> usize {
        self.per_rank_compute.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(SimError::InvalidJob {
                job: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.per_rank_compute.is_empty() {
            return bad("no ranks");
        }
        if self.per_rank_compute.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return bad("compute demand must be finite and non-negative");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if !(self.collective_latency.is_finite() && self.collective_latency >= 0.0) {
            return bad("collective latency must be non-negative");
        }
        if self.requests.n_ranks() != self.ranks() {
            return bad("request count differs from rank count");
        }
        if self.requests.per_rank_millicpu.contains(&0) {
            return bad("every rank needs a positive CPU request");
        }
        if !(self.start_offset.is_finite() && self.start_offset >= 0.0) {
            return bad("start offset must be non-negative");
        }
        if !(0.0..1.0).contains(&self.compute_jitter) {
            return bad("compute jitter must lie in [0, 1)");
        }
        Ok(())
    }

    /// Wall time of one uncontended iteration.
    pub fn uncontended_iteration(&self) -> f64 {
        self.per_rank_compute.iter().copied().fold(0.0, f64::max) + self.collective_latency
    }
}

/// Node index of every pod: `nodes[job][rank]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub nodes: Vec<Vec<usize>>,
}

impl Placement {
    pub fn pods_per_node(&self, n_nodes: usize) -> Vec<usize> {
        let mut c = vec![0; n_nodes];
        for &n in self.nodes.iter().flatten() {
            c[n] += 1;
        }
        c
    }
}

/// Greedy placement state: committed requests per node.
#[derive(Debug, Clone)]
pub(crate) struct NodeLedger {
    committed: Vec<u64>,
    capacity: u64,
}

impl NodeLedger {
    pub(crate) fn new(cluster: &ClusterSpec) -> Self {
        Self {
            committed: vec![0; cluster.nodes as usize],
            capacity: cluster.node_capacity_millicpu(),
        }
    }

    pub(crate) fn total(&self) -> u64 {
        self.committed.iter().sum()
    }

    /// Places every rank on the node with the least committed requests,
    /// lowest index first on ties.
    pub(crate) fn place_job(&mut self, job: &SimJobSpec) -> Result<Vec<usize>> {
        let mut trial = self.committed.clone();
        let mut nodes = Vec::with_capacity(job.ranks());
        for (rank, &req) in job.requests.per_rank_millicpu.iter().enumerate() {
            let (node, &load) = trial
                .iter()
                .enumerate()
                .min_by_key(|&(i, &c)| (c, i))
                .expect("cluster has at least one node");
            if load + u64::from(req) > self.capacity {
                return Err(SimError::Unschedulable {
                    job: job.id.clone(),
                    rank,
                    request: req,
                });
            }
            trial[node] += u64::from(req);
            nodes.push(node);
        }
        self.committed = trial;
        Ok(nodes)
    }

    pub(crate) fn adjust(&mut self, node: usize, old: u32, new: u32) -> Result<()> {
        let committed = self.committed[node] - u64::from(old) + u64::from(new);
        if committed > self.capacity {
            return Err(SimError::NodeOvercommitted {
                node,
                committed,
                capacity: self.capacity,
            });
        }
        self.committed[node] = committed;
        Ok(())
    }

    pub(crate) fn commit(&mut self, node: usize, req: u32) {
        self.committed[node] += u64::from(req);
    }
}

pub fn place(jobs: &[SimJobSpec], cluster: &ClusterSpec) -> Result<Placement> {
    cluster
        .validate()
        .map_err(|e| SimError::InvalidPlacement(e.to_string()))?;
    let requested: u64 = jobs.iter().map(|j| j.requests.total_millicpu()).sum();
    let capacity = cluster.schedulable_millicpu();
    if requested > capacity {
        return Err(SimError::CapacityExceeded {
            requested,
            capacity,
        });
    }
    let mut ledger = NodeLedger::new(cluster);
    let nodes = jobs
        .iter()
        .map(|j| ledger.place_job(j))
        .collect::<Result<Vec<_>>>()?;
    Ok(Placement { nodes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub job_ids: Vec<String>,
    /// Absolute completion time of each job.
    pub per_job_completion: Vec<f64>,
    /// Completion minus start offset: the job's own wall-clock time.
    pub per_job_duration: Vec<f64>,
    pub makespan: f64,
    /// Time-weighted mean cores in use per node over `[0, makespan]`.
    pub per_node_utilization: Vec<f64>,
    /// max/min duration over all jobs, when there are at least two.
    pub fairness_ratio: Option<f64>,
    pub event_count: u64,
}

impl SimResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("job,completion_s,duration_s\n");
        for ((id, c), d) in self.job_ids.iter().zip(&self.per_job_completion).zip(&self.per_job_duration) {
            out.push_str(&format!("{id},{c:.6},{d:.6}\n"));
        }
        out
    }
}

/// Runs a static scenario to completion.
pub fn run(cluster: &ClusterSpec, jobs: &[SimJobSpec], placement: &Placement, seed: u64) -> Result<SimResult> {
    let mut engine = Engine::with_placement(*cluster, jobs, placement, seed)?;
    engine.run_to_completion(&mut |_: &Segment<'_>| {});
    engine.result()
}

/// max/min of the wall-clock durations of `group`.
pub fn fairness(result: &SimResult, group: &[usize]) -> Result<f64> {
    if group.len() < 2 {
        return Err(SimError::GroupTooSmall);
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &j in group {
        let d = *result.per_job_duration.get(j).ok_or(SimError::UnknownJob(j))?;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    Ok(hi / lo)
}

/// Simulator inputs recovered from measured duties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub iteration_wall: f64,
    pub per_rank_compute: Vec<f64>,
    pub collective_latency: f64,
    pub iterations: u32,
}

impl Calibration {
    pub fn job(&self, id: impl Into<String>, requests: AllocationPlan, start_offset: f64) -> SimJobSpec {
        SimJobSpec {
            id: id.into(),
            per_rank_compute: self.per_rank_compute.clone(),
            iterations: self.iterations,
            collective_latency: self.collective_latency,
            requests,
            start_offset,
            compute_jitter: 0.0,
        }
    }

    pub fn uncontended_makespan(&self) -> f64 {
        f64::from(self.iterations) * self.iteration_wall
    }
}

/// `wall = T1/K`, `compute_i = d_i·wall`, `L = wall − max_i compute_i`,
/// so an uncontended job takes exactly `T1`.
pub fn calibrate_duties(duties: &[f64], t1: f64, iterations: u32) -> Result<Calibration> {
    if iterations == 0 {
        return Err(SimError::Calibration("iterations must be at least 1".into()));
    }
    if !(t1 > 0.0 && t1.is_finite()) {
        return Err(SimError::Calibration(format!("T1 = {t1} must be positive")));
    }
    if duties.is_empty() {
        return Err(SimError::Calibration("no ranks".into()));
    }
    if let Some(d) = duties.iter().find(|d| !(0.0..1.0).contains(*d)) {
        return Err(SimError::Calibration(format!(
            "duty {d} outside [0, 1) leaves no room for the collective"
        )));
    }
    let wall = t1 / f64::from(iterations);
    let per_rank_compute: Vec<f64> = duties.iter().map(|d| d * wall).collect();
    let max_compute = per_rank_compute.iter().copied().fold(0.0, f64::max);
    Ok(Calibration {
        iteration_wall: wall,
        per_rank_compute,
        collective_latency: wall - max_compute,
        iterations,
    })
}

pub fn calibrate(report: &DutyCycleReport, t1: f64, iterations: u32) -> Result<Calibration> {
    let duties: Vec<f64> = report.per_rank.values().copied().collect();
    calibrate_duties(&duties, t1, iterations)
}

/// Proportional shares of `capacity` cores among pods with the given
/// weights, each capped at one core.
pub fn water_fill(capacity: f64, weights: &[f64]) -> Vec<f64> {
    let n = weights.len();
    if n as f64 <= capacity {
        return vec![1.0; n];
    }
    let mut rates = vec![0.0; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut cap = capacity;
    loop {
        let total_w: f64 = active.iter().map(|&i| weights[i]).sum();
        let (capped, open): (Vec<usize>, Vec<usize>) =
            active.iter().partition(|&&i| cap * weights[i] / total_w >= 1.0);
        if capped.is_empty() {
            for &i in &open {
                rates[i] = cap * weights[i] / total_w;
            }
            return rates;
        }
        for &i in &capped {
            rates[i] = 1.0;
        }
        cap -= capped.len() as f64;
        active = open;
        if active.is_empty() {
            return rates;
        }
    }
}
