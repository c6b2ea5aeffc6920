//! The profile → resize → pack → monitor pipeline.
//!
//! The controller talks to a cluster only through [`Actuator`]. The shipped
//! backend, [`SimActuator`], drives the discrete-event simulator; a live
//! backend would implement the same trait over the Kubernetes API.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::alloc::{
    duty_proportional_requests, AllocError, AllocationPlan, ClusterSpec, DEFAULT_SIM_BUDGET_MILLICPU,
    MIN_REQUEST_MILLICPU,
};
use crate::sim::{self, calibrate_duties, Calibration, Engine, JobId, Segment, SimError};
use crate::trace::{analyze, reference_duties, segment_iterations, RankTrace, TraceError, DEFAULT_SKIP_FRACTION};

#[derive(Debug, thiserror::Error)]
pub enum ControllerError {
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
    #[error("pipeline precondition: {0}")]
    Precondition(String),
    #[error("actuator: {0}")]
    Actuator(String),
    /// The backend cannot place a new simulation's pods.
    #[error("unschedulable: {0}")]
    Unschedulable(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("scenario: {0}")]
    Scenario(String),
}

pub type Result<T> = std::result::Result<T, ControllerError>;

fn default_window() -> u32 {
    50
}
fn default_threshold() -> f64 {
    1.10
}
fn default_budget() -> u64 {
    DEFAULT_SIM_BUDGET_MILLICPU
}
fn default_max_sims() -> u32 {
    4
}
fn default_cap() -> f64 {
    0.20
}
fn default_min_request() -> u32 {
    MIN_REQUEST_MILLICPU
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// Iterations traced per profiling pass.
    #[serde(default = "default_window")]
    pub profile_window: u32,
    /// Progress ratio above which the slowest simulation is bumped.
    #[serde(default = "default_threshold")]
    pub fairness_threshold: f64,
    #[serde(default = "default_budget")]
    pub per_sim_budget: u64,
    #[serde(default = "default_max_sims")]
    pub max_sims: u32,
    /// Fractional request increase of one fairness adjustment.
    #[serde(default = "default_cap")]
    pub adjustment_cap: f64,
    #[serde(default = "default_min_request")]
    pub min_request: u32,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            profile_window: default_window(),
            fairness_threshold: default_threshold(),
            per_sim_budget: default_budget(),
            max_sims: default_max_sims(),
            adjustment_cap: default_cap(),
            min_request: default_min_request(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self, ranks: usize) -> Result<()> {
        let bad = |m: String| Err(ControllerError::InvalidConfig(m));
        if self.profile_window < 2 {
            return bad(format!("profile_window {} < 2", self.profile_window));
        }
        if !(self.fairness_threshold > 1.0 && self.fairness_threshold.is_finite()) {
            return bad(format!("fairness_threshold {} must exceed 1", self.fairness_threshold));
        }
        if !(self.adjustment_cap > 0.0 && self.adjustment_cap <= 1.0) {
            return bad(format!("adjustment_cap {} outside (0, 1]", self.adjustment_cap));
        }
        if self.max_sims == 0 {
            return bad("max_sims must be at least 1".into());
        }
        if self.min_request < MIN_REQUEST_MILLICPU {
            return bad(format!("min_request below {MIN_REQUEST_MILLICPU} m"));
        }
        let floor = ranks as u64 * u64::from(self.min_request);
        if self.per_sim_budget < floor {
            return bad(format!(
                "per_sim_budget {} m below {ranks} ranks x {} m",
                self.per_sim_budget, self.min_request
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PodInfo {
    pub sim: String,
    pub rank: u32,
    pub node: usize,
    pub request_millicpu: u32,
}

/// What the controller needs from a cluster. Calls are synchronous; a
/// backend advances its own clock as needed.
pub trait Actuator {
    fn cluster(&self) -> ClusterSpec;
    fn now(&self) -> f64;
    fn list_pods(&self) -> Vec<PodInfo>;
    /// Traces the next `iterations` complete iterations of `sim`.
    fn read_trace_window(&mut self, sim: &str, iterations: u32) -> Result<Vec<RankTrace>>;
    /// Changes a pod's CPU request without restarting it.
    fn resize_pod(&mut self, sim: &str, rank: u32, millicpu: u32) -> Result<()>;
    fn deploy_simulation(&mut self, sim: &str, plan: &AllocationPlan) -> Result<()>;
    /// Completed iterations per deployed simulation.
    fn progress(&self) -> BTreeMap<String, u32>;
    fn is_complete(&self, sim: &str) -> bool;
    /// Start and completion time of a simulation.
    fn sim_times(&self, sim: &str) -> Option<(f64, Option<f64>)>;
    fn restart_count(&self) -> u64;
    fn advance(&mut self, seconds: f64) -> Result<()>;

    fn all_complete(&self) -> bool {
        self.progress().keys().all(|s| self.is_complete(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    ProfilingPass {
        sim: String,
        iterations: u32,
        mean_duty: f64,
    },
    Resize {
        sim: String,
        pod: String,
        rank: u32,
        old: u32,
        new: u32,
    },
    Deploy {
        sim: String,
        ranks: usize,
        total_millicpu: u64,
    },
    FairnessAdjustment {
        sim: String,
        factor: f64,
        ratio: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub t: f64,
    /// Sum of all pod requests after the action.
    pub committed_millicpu: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActionCounts {
    pub profiling_passes: usize,
    pub resizes: usize,
    pub deployments: usize,
    pub fairness_adjustments: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionLog {
    entries: Vec<LogEntry>,
}

impl ActionLog {
    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    fn push(&mut self, t: f64, committed_millicpu: u64, action: Action) {
        debug_assert!(self.entries.last().is_none_or(|e| e.t <= t));
        log::info!("t={t:.1}s {action:?}");
        self.entries.push(LogEntry {
            t,
            committed_millicpu,
            action,
        });
    }

    pub fn counts(&self) -> ActionCounts {
        let mut c = ActionCounts::default();
        for e in &self.entries {
            match e.action {
                Action::ProfilingPass { .. } => c.profiling_passes += 1,
                Action::Resize { .. } => c.resizes += 1,
                Action::Deploy { .. } => c.deployments += 1,
                Action::FairnessAdjustment { .. } => c.fairness_adjustments += 1,
            }
        }
        c
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("log entries serialise") + "\n")
            .collect()
    }
}

/// Aggregate request check: does `next` fit beside `current`?
pub fn headroom_check(current: &[AllocationPlan], next: &AllocationPlan, cluster: &ClusterSpec) -> bool {
    let used: u64 = current.iter().map(AllocationPlan::total_millicpu).sum();
    used + next.total_millicpu() <= cluster.schedulable_millicpu()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjustment {
    pub sim: String,
    pub factor: f64,
    pub ratio: f64,
}

/// Bumps the slowest simulation when the max/min progress ratio, over
/// simulations with any progress, exceeds the threshold. Ties pick the
/// first simulation by name.
pub fn fairness_step(progress: &BTreeMap<String, u32>, config: &ControllerConfig) -> Option<Adjustment> {
    let active: Vec<(&String, u32)> = progress.iter().filter(|(_, &p)| p >= 1).map(|(s, &p)| (s, p)).collect();
    if active.len() < 2 {
        return None;
    }
    let max = active.iter().map(|&(_, p)| p).max()?;
    let (slowest, min) = active.iter().copied().min_by_key(|&(_, p)| p)?;
    let ratio = f64::from(max) / f64::from(min);
    (ratio > config.fairness_threshold).then(|| Adjustment {
        sim: slowest.clone(),
        factor: 1.0 + config.adjustment_cap,
        ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub sim: String,
    pub started_at: f64,
    pub completed_at: f64,
}

impl SimOutcome {
    pub fn duration(&self) -> f64 {
        self.completed_at - self.started_at
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub log: ActionLog,
    pub outcomes: Vec<SimOutcome>,
    pub wall_time: f64,
    pub restarts: u64,
    pub counts: ActionCounts,
}

impl PipelineReport {
    /// `N·T1 / max duration`, each simulation timed on its own clock.
    pub fn throughput(&self, t1: f64) -> f64 {
        let longest = self.outcomes.iter().map(SimOutcome::duration).fold(0.0, f64::max);
        self.outcomes.len() as f64 * t1 / longest
    }
}

/// Pipeline error carrying everything logged before the failure.
#[derive(Debug)]
pub struct PipelineAbort {
    pub log: ActionLog,
    pub error: ControllerError,
}

impl fmt::Display for PipelineAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pipeline aborted after {} actions: {}", self.log.entries.len(), self.error)
    }
}

impl std::error::Error for PipelineAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// `A`, `B`, … `Z`, then `S26`, `S27`, ….
pub fn sim_name(index: usize) -> String {
    match u8::try_from(index) {
        Ok(i) if i < 26 => char::from(b'A' + i).to_string(),
        _ => format!("S{index}"),
    }
}

fn committed(actuator: &dyn Actuator) -> u64 {
    actuator.list_pods().iter().map(|p| u64::from(p.request_millicpu)).sum()
}

fn pods_of(actuator: &dyn Actuator, sim: &str) -> Vec<PodInfo> {
    let mut pods: Vec<PodInfo> = actuator.list_pods().into_iter().filter(|p| p.sim == sim).collect();
    pods.sort_by_key(|p| p.rank);
    pods
}

fn current_plans(actuator: &dyn Actuator) -> Vec<AllocationPlan> {
    let mut by_sim: BTreeMap<String, Vec<PodInfo>> = BTreeMap::new();
    for p in actuator.list_pods() {
        by_sim.entry(p.sim.clone()).or_default().push(p);
    }
    by_sim
        .into_values()
        .map(|mut pods| {
            pods.sort_by_key(|p| p.rank);
            let per_rank_millicpu: Vec<u32> = pods.iter().map(|p| p.request_millicpu).collect();
            AllocationPlan {
                budget_millicpu: per_rank_millicpu.iter().map(|&m| u64::from(m)).sum(),
                per_rank_millicpu,
            }
        })
        .collect()
}

struct Pipeline<'a> {
    actuator: &'a mut dyn Actuator,
    config: &'a ControllerConfig,
    log: ActionLog,
}

impl Pipeline<'_> {
    fn record(&mut self, action: Action) {
        let committed = committed(self.actuator);
        self.log.push(self.actuator.now(), committed, action);
    }

    /// Free request capacity per node.
    fn node_room(&self) -> BTreeMap<usize, u64> {
        let node_cap = self.actuator.cluster().node_capacity_millicpu();
        let mut free: BTreeMap<usize, u64> = BTreeMap::new();
        for p in self.actuator.list_pods() {
            let room = free.entry(p.node).or_insert(node_cap);
            *room = room.saturating_sub(u64::from(p.request_millicpu));
        }
        free
    }

    /// Applies `targets` to `sim`, shrinking pods before growing any.
    /// Growth is limited to the free capacity of the pod's node; unchanged
    /// pods are skipped.
    fn resize_all(&mut self, sim: &str, targets: &[u32]) -> Result<()> {
        let pods = pods_of(self.actuator, sim);
        let mut changes: Vec<(i64, &PodInfo, u32)> = pods
            .iter()
            .zip(targets)
            .filter(|(p, &t)| p.request_millicpu != t)
            .map(|(p, &t)| (i64::from(t) - i64::from(p.request_millicpu), p, t))
            .collect();
        changes.sort_by_key(|&(delta, p, _)| (delta, p.rank));
        let mut room = self.node_room();
        let node_cap = self.actuator.cluster().node_capacity_millicpu();
        for (_, pod, target) in changes {
            let free = room.entry(pod.node).or_insert(node_cap);
            let new = if target > pod.request_millicpu {
                let grant = u64::from(target - pod.request_millicpu).min(*free);
                if grant < u64::from(target - pod.request_millicpu) {
                    log::warn!("{sim}/{}: node {} has room for {grant} m of growth only", pod.rank, pod.node);
                }
                *free -= grant;
                pod.request_millicpu + grant as u32
            } else {
                *free += u64::from(pod.request_millicpu - target);
                target
            };
            if new == pod.request_millicpu {
                continue;
            }
            self.actuator.resize_pod(sim, pod.rank, new)?;
            self.record(Action::Resize {
                sim: sim.to_string(),
                pod: crate::k8s::pod_name(sim, pod.rank).unwrap_or_else(|_| format!("{sim}-{}", pod.rank)),
                rank: pod.rank,
                old: pod.request_millicpu,
                new,
            });
        }
        Ok(())
    }

    /// Profiles `sim` and resizes it to duty-proportional requests.
    /// Returns the mean iteration wall time seen while profiling.
    fn profile_and_resize(&mut self, sim: &str) -> Result<f64> {
        let window = self.config.profile_window;
        let traces = self.actuator.read_trace_window(sim, window)?;
        let report = analyze::<fn(u32) -> Option<String>>(&traces, DEFAULT_SKIP_FRACTION, None)?;
        let slices = segment_iterations(&traces[0])?;
        let iteration_wall = slices.iter().map(|s| s.wall()).sum::<f64>() / slices.len() as f64;
        self.record(Action::ProfilingPass {
            sim: sim.to_string(),
            iterations: slices.len() as u32,
            mean_duty: report.mean_duty(),
        });
        let plan = duty_proportional_requests(&report.per_rank, self.config.per_sim_budget)?;
        let targets: Vec<u32> = plan
            .per_rank_millicpu
            .iter()
            .map(|&m| m.max(self.config.min_request))
            .collect();
        self.resize_all(sim, &targets)?;
        Ok(iteration_wall)
    }

    /// Multiplies every request of `adj.sim` by `adj.factor`, limited by
    /// the free capacity of each pod's node. Returns whether anything
    /// changed.
    fn apply_adjustment(&mut self, adj: &Adjustment) -> Result<bool> {
        let mut free = self.node_room();
        let pods = pods_of(self.actuator, &adj.sim);
        let mut targets = Vec::with_capacity(pods.len());
        for p in &pods {
            let wanted = (f64::from(p.request_millicpu) * adj.factor).floor() as u64;
            let room = free.get_mut(&p.node).expect("pod node is tracked");
            let grant = wanted.saturating_sub(u64::from(p.request_millicpu)).min(*room);
            *room -= grant;
            targets.push(p.request_millicpu + grant as u32);
        }
        if targets.iter().zip(&pods).all(|(&t, p)| t == p.request_millicpu) {
            return Ok(false);
        }
        for (p, &t) in pods.iter().zip(&targets) {
            if t != p.request_millicpu {
                self.actuator.resize_pod(&adj.sim, p.rank, t)?;
            }
        }
        self.record(Action::FairnessAdjustment {
            sim: adj.sim.clone(),
            factor: adj.factor,
            ratio: adj.ratio,
        });
        Ok(true)
    }

    fn run(&mut self) -> Result<()> {
        let sims: Vec<String> = self.actuator.progress().into_keys().collect();
        let [first] = sims.as_slice() else {
            return Err(ControllerError::Precondition(format!(
                "expected exactly one running simulation, found {}",
                sims.len()
            )));
        };
        let first = first.clone();
        let ranks = pods_of(self.actuator, &first).len();
        self.config.validate(ranks)?;

        let mut deployed = 1usize;
        let mut newest = first;
        let mut iteration_wall;
        loop {
            iteration_wall = self.profile_and_resize(&newest)?;
            if deployed >= self.config.max_sims as usize {
                break;
            }
            let next_plan = AllocationPlan::equal(ranks);
            if !headroom_check(&current_plans(self.actuator), &next_plan, &self.actuator.cluster()) {
                log::info!("no headroom for another simulation");
                break;
            }
            let name = sim_name(deployed);
            match self.actuator.deploy_simulation(&name, &next_plan) {
                Ok(()) => {}
                // Enough aggregate headroom but no node fits a pod.
                Err(ControllerError::Unschedulable(why)) => {
                    log::warn!("not deploying {name}: {why}");
                    break;
                }
                Err(e) => return Err(e),
            }
            self.record(Action::Deploy {
                sim: name.clone(),
                ranks,
                total_millicpu: next_plan.total_millicpu(),
            });
            deployed += 1;
            newest = name;
        }

        let interval = f64::from(self.config.profile_window) * iteration_wall;
        while !self.actuator.all_complete() {
            let before = self.actuator.progress();
            self.actuator.advance(interval)?;
            let during: BTreeMap<String, u32> = self
                .actuator
                .progress()
                .into_iter()
                .filter(|(s, _)| !self.actuator.is_complete(s))
                .map(|(s, p)| {
                    let base = before.get(&s).copied().unwrap_or(0);
                    (s, p - base)
                })
                .collect();
            if let Some(adj) = fairness_step(&during, self.config) {
                self.apply_adjustment(&adj)?;
            }
        }
        Ok(())
    }
}

pub fn run_pipeline(actuator: &mut dyn Actuator, config: &ControllerConfig) -> std::result::Result<PipelineReport, PipelineAbort> {
    let mut p = Pipeline {
        actuator,
        config,
        log: ActionLog::default(),
    };
    if let Err(error) = p.run() {
        return Err(PipelineAbort { log: p.log, error });
    }
    let mut outcomes = Vec::new();
    for sim in p.actuator.progress().into_keys() {
        if let Some((started_at, Some(completed_at))) = p.actuator.sim_times(&sim) {
            outcomes.push(SimOutcome {
                sim,
                started_at,
                completed_at,
            });
        }
    }
    let counts = p.log.counts();
    Ok(PipelineReport {
        wall_time: p.actuator.now(),
        restarts: p.actuator.restart_count(),
        log: p.log,
        outcomes,
        counts,
    })
}

/// Demand of the reference case: 16 ranks, `T1` = 1249 s over 200
/// iterations.
pub const REFERENCE_T1_S: f64 = 1249.0;
pub const REFERENCE_ITERATIONS: u32 = 200;

pub fn reference_calibration() -> Calibration {
    calibrate_duties(&reference_duties(), REFERENCE_T1_S, REFERENCE_ITERATIONS).expect("reference duties are valid")
}

/// Simulator-backed actuator. Every deployed simulation runs the same
/// calibrated demand.
#[derive(Debug, Clone)]
pub struct SimActuator {
    engine: Engine,
    template: Calibration,
    sims: BTreeMap<String, JobId>,
}

fn sim_err(e: SimError) -> ControllerError {
    ControllerError::Actuator(e.to_string())
}

impl SimActuator {
    /// Starts `first` at equal allocation at time zero.
    pub fn new(cluster: ClusterSpec, template: Calibration, first: &str, seed: u64) -> Result<Self> {
        let mut a = Self {
            engine: Engine::new(cluster, seed)?,
            template,
            sims: BTreeMap::new(),
        };
        let plan = AllocationPlan::equal(a.template.per_rank_compute.len());
        a.deploy_simulation(first, &plan)?;
        Ok(a)
    }

    pub fn reference(cluster: ClusterSpec, seed: u64) -> Result<Self> {
        Self::new(cluster, reference_calibration(), "A", seed)
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn template(&self) -> &Calibration {
        &self.template
    }

    fn job(&self, sim: &str) -> Result<JobId> {
        self.sims
            .get(sim)
            .copied()
            .ok_or_else(|| ControllerError::Actuator(format!("unknown simulation {sim}")))
    }
}

impl Actuator for SimActuator {
    fn cluster(&self) -> ClusterSpec {
        *self.engine.cluster()
    }

    fn now(&self) -> f64 {
        self.engine.now()
    }

    fn list_pods(&self) -> Vec<PodInfo> {
        let mut pods = Vec::new();
        for (sim, &id) in &self.sims {
            let nodes = self.engine.placement_of(id).expect("known job");
            let reqs = self.engine.requests(id).expect("known job");
            for (rank, (node, request_millicpu)) in nodes.into_iter().zip(reqs).enumerate() {
                pods.push(PodInfo {
                    sim: sim.clone(),
                    rank: rank as u32,
                    node,
                    request_millicpu,
                });
            }
        }
        pods
    }

    fn read_trace_window(&mut self, sim: &str, iterations: u32) -> Result<Vec<RankTrace>> {
        let id = self.job(sim)?;
        self.engine.start_trace(id, iterations).map_err(sim_err)?;
        while self.engine.trace_pending(id).map_err(sim_err)? {
            if self.engine.is_done(id).map_err(sim_err)? {
                return Err(ControllerError::Actuator(format!(
                    "{sim} finished before {iterations} iterations were traced"
                )));
            }
            let target = self.engine.completed_iterations(id).map_err(sim_err)? + 1;
            self.engine
                .run_until_iterations(id, target, &mut |_: &Segment<'_>| {})
                .map_err(sim_err)?;
        }
        self.engine
            .take_trace(id)
            .map_err(sim_err)?
            .ok_or_else(|| ControllerError::Actuator(format!("no trace recorded for {sim}")))
    }

    fn resize_pod(&mut self, sim: &str, rank: u32, millicpu: u32) -> Result<()> {
        let id = self.job(sim)?;
        self.engine.set_request(id, rank as usize, millicpu).map_err(sim_err)
    }

    fn deploy_simulation(&mut self, sim: &str, plan: &AllocationPlan) -> Result<()> {
        if self.sims.contains_key(sim) {
            return Err(ControllerError::Actuator(format!("{sim} already deployed")));
        }
        let spec = self.template.job(sim, plan.clone(), self.engine.now());
        let id = self.engine.add_job(spec).map_err(|e| match e {
            SimError::Unschedulable { .. } | SimError::CapacityExceeded { .. } => {
                ControllerError::Unschedulable(e.to_string())
            }
            e => sim_err(e),
        })?;
        self.sims.insert(sim.to_string(), id);
        Ok(())
    }

    fn progress(&self) -> BTreeMap<String, u32> {
        self.sims
            .iter()
            .map(|(s, &id)| (s.clone(), self.engine.completed_iterations(id).expect("known job")))
            .collect()
    }

    fn is_complete(&self, sim: &str) -> bool {
        self.sims
            .get(sim)
            .is_some_and(|&id| self.engine.is_done(id).expect("known job"))
    }

    fn sim_times(&self, sim: &str) -> Option<(f64, Option<f64>)> {
        let &id = self.sims.get(sim)?;
        let start = self.engine.started_at(id).ok()??;
        Some((start, self.engine.completed_at(id).ok()?))
    }

    fn restart_count(&self) -> u64 {
        self.engine.restart_count()
    }

    fn advance(&mut self, seconds: f64) -> Result<()> {
        if !(seconds > 0.0 && seconds.is_finite()) {
            return Err(ControllerError::Actuator(format!("cannot advance by {seconds} s")));
        }
        let until = self.engine.now() + seconds;
        self.engine.advance_until(until, &mut |_: &Segment<'_>| {});
        Ok(())
    }
}

/// Throughput of `n` simulations started together at duty-proportional
/// requests: `n·T1 / makespan`.
pub fn static_proportional_throughput(
    cluster: &ClusterSpec,
    template: &Calibration,
    duties: &[f64],
    n: usize,
    budget: u64,
    seed: u64,
) -> Result<f64> {
    let map: BTreeMap<u32, f64> = duties.iter().enumerate().map(|(r, &d)| (r as u32, d)).collect();
    let plan = duty_proportional_requests(&map, budget)?;
    let jobs: Vec<_> = (0..n).map(|i| template.job(sim_name(i), plan.clone(), 0.0)).collect();
    let placement = sim::place(&jobs, cluster)?;
    let result = sim::run(cluster, &jobs, &placement, seed)?;
    Ok(n as f64 * template.uncontended_makespan() / result.makespan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSpec {
    #[serde(default = "reference_duties")]
    pub duties: Vec<f64>,
    #[serde(default = "reference_t1")]
    pub t1_s: f64,
    #[serde(default = "reference_iterations")]
    pub iterations: u32,
}

fn reference_t1() -> f64 {
    REFERENCE_T1_S
}
fn reference_iterations() -> u32 {
    REFERENCE_ITERATIONS
}

impl Default for TemplateSpec {
    fn default() -> Self {
        Self {
            duties: reference_duties(),
            t1_s: REFERENCE_T1_S,
            iterations: REFERENCE_ITERATIONS,
        }
    }
}

fn default_cluster() -> ClusterSpec {
    ClusterSpec::reference()
}

fn default_first() -> String {
    "A".into()
}

fn default_seed() -> u64 {
    sim::scenario::DEFAULT_SEED
}

/// Controller scenario file: cluster, controller settings and the demand of
/// every simulation. All sections are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerScenario {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_cluster")]
    pub cluster: ClusterSpec,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub template: TemplateSpec,
    #[serde(default = "default_first")]
    pub first_sim: String,
}

impl Default for ControllerScenario {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            cluster: default_cluster(),
            controller: ControllerConfig::default(),
            template: TemplateSpec::default(),
            first_sim: default_first(),
        }
    }
}

impl ControllerScenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| ControllerError::Scenario(e.to_string()))?;
        s.cluster.validate()?;
        crate::k8s::pod_name(&s.first_sim, 0).map_err(|e| ControllerError::Scenario(e.to_string()))?;
        Ok(s)
    }

    pub fn calibration(&self) -> Result<Calibration> {
        Ok(calibrate_duties(&self.template.duties, self.template.t1_s, self.template.iterations)?)
    }

    pub fn actuator(&self) -> Result<SimActuator> {
        SimActuator::new(self.cluster, self.calibration()?, &self.first_sim, self.seed)
    }
}
