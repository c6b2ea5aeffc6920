//! Per-rank MPI trace ingestion and duty-cycle analysis.
//!
//! A trace file holds the intercepted MPI calls of one rank, one call per
//! row:
//!
//! ```text
//! # start_us=0
//! rank,call,t_enter_us,t_exit_us
//! 0,Allreduce,312250,5932750
//! 0,Barrier,5932750,6245000
//! ```
//!
//! Timestamps are integer microseconds on a monotonic clock. The optional
//! `# start_us=` directive marks the beginning of the recording window; when
//! absent, the window starts at the first event's entry time.
//!
//! Iterations are delimited by `Barrier` calls: iteration `k` runs from the
//! exit of barrier `k-1` (or the window start) to the exit of barrier `k`.
//! Everything inside an intercepted call counts as MPI time, every gap
//! between calls counts as compute time.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SKIP_FRACTION: f64 = 0.10;

const HEADER: &str = "rank,call,t_enter_us,t_exit_us";
const START_DIRECTIVE: &str = "# start_us=";

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error("row {row}: unknown MPI call `{name}`")]
    UnknownCall { row: usize, name: String },
    #[error("row {row}: event overlaps or precedes the previous event")]
    OutOfOrder { row: usize },
    #[error("row {row}: rank {found} differs from rank {expected} of this trace")]
    RankMismatch { row: usize, expected: u32, found: u32 },
    #[error("trace contains no events")]
    Empty,
    #[error("no .csv trace files in {0}")]
    NoTraceFiles(PathBuf),
    #[error("no iteration boundaries (trace has no Barrier events)")]
    NoIterationBoundaries,
    #[error("zero-length iteration slice")]
    ZeroLengthSlice,
    #[error("no iterations left after skipping {skipped} of {total}")]
    EmptyRetained { skipped: usize, total: usize },
    #[error("skip fraction {0} outside [0, 1)")]
    InvalidSkip(f64),
    #[error("duty and request maps cover different rank sets")]
    MismatchedRanks,
    #[error("invalid synthetic trace spec: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, TraceError>;

/// The six intercepted collective and synchronisation calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MpiCall {
    Barrier,
    Allreduce,
    Alltoall,
    Sendrecv,
    Wait,
    Waitall,
}

impl MpiCall {
    pub const ALL: [MpiCall; 6] = [
        MpiCall::Barrier,
        MpiCall::Allreduce,
        MpiCall::Alltoall,
        MpiCall::Sendrecv,
        MpiCall::Wait,
        MpiCall::Waitall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MpiCall::Barrier => "Barrier",
            MpiCall::Allreduce => "Allreduce",
            MpiCall::Alltoall => "Alltoall",
            MpiCall::Sendrecv => "Sendrecv",
            MpiCall::Wait => "Wait",
            MpiCall::Waitall => "Waitall",
        }
    }
}

impl fmt::Display for MpiCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MpiCall {
    type Err = ();

    /// Accepts both `Allreduce` and the full `MPI_Allreduce` spelling.
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        let name = s.strip_prefix("MPI_").unwrap_or(s);
        MpiCall::ALL
            .into_iter()
            .find(|c| c.as_str() == name)
            .ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub rank: u32,
    pub call: MpiCall,
    pub t_enter_us: u64,
    pub t_exit_us: u64,
}

impl TraceEvent {
    pub fn duration_us(&self) -> u64 {
        self.t_exit_us - self.t_enter_us
    }
}

/// All intercepted calls of a single rank, sorted and non-overlapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankTrace {
    rank: u32,
    start_us: u64,
    events: Vec<TraceEvent>,
}

impl RankTrace {
    /// Validates ordering and rank consistency. Errors carry 1-based event
    /// positions as row numbers.
    pub fn new(rank: u32, start_us: u64, events: Vec<TraceEvent>) -> Result<Self> {
        let mut prev_exit = start_us;
        for (i, ev) in events.iter().enumerate() {
            let row = i + 1;
            if ev.rank != rank {
                return Err(TraceError::RankMismatch {
                    row,
                    expected: rank,
                    found: ev.rank,
                });
            }
            if ev.t_exit_us < ev.t_enter_us || ev.t_enter_us < prev_exit {
                return Err(TraceError::OutOfOrder { row });
            }
            prev_exit = ev.t_exit_us;
        }
        Ok(Self {
            rank,
            start_us,
            events,
        })
    }

    pub fn rank(&self) -> u32 {
        self.rank
    }

    pub fn start_us(&self) -> u64 {
        self.start_us
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn barrier_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.call == MpiCall::Barrier)
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{START_DIRECTIVE}{}\n{HEADER}\n", self.start_us);
        for ev in &self.events {
            out.push_str(&format!(
                "{},{},{},{}\n",
                ev.rank, ev.call, ev.t_enter_us, ev.t_exit_us
            ));
        }
        out
    }

    /// Parses the CSV text of one rank's trace. Row numbers in errors are
    /// 1-based line numbers of `text`.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut start: Option<u64> = None;
        let mut saw_header = false;
        let mut rank: Option<u32> = None;
        let mut events = Vec::new();
        let mut prev_exit: Option<u64> = None;

        for (idx, raw) in text.lines().enumerate() {
            let row = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(v) = line.strip_prefix(START_DIRECTIVE) {
                start = Some(v.trim().parse().map_err(|_| TraceError::Malformed {
                    row,
                    reason: format!("bad start directive `{line}`"),
                })?);
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            if !saw_header && line.replace(' ', "") == HEADER {
                saw_header = true;
                continue;
            }

            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(TraceError::Malformed {
                    row,
                    reason: format!("expected 4 columns, found {}", cols.len()),
                });
            }
            let int = |s: &str, what: &str| -> Result<u64> {
                s.parse::<u64>().map_err(|_| TraceError::Malformed {
                    row,
                    reason: format!("unparsable {what} `{s}`"),
                })
            };
            let r = int(cols[0], "rank")?;
            let r = u32::try_from(r).map_err(|_| TraceError::Malformed {
                row,
                reason: format!("rank {r} out of range"),
            })?;
            let call: MpiCall = cols[1].parse().map_err(|_| TraceError::UnknownCall {
                row,
                name: cols[1].to_string(),
            })?;
            let t_enter_us = int(cols[2], "t_enter_us")?;
            let t_exit_us = int(cols[3], "t_exit_us")?;

            match rank {
                None => rank = Some(r),
                Some(expected) if expected != r => {
                    return Err(TraceError::RankMismatch {
                        row,
                        expected,
                        found: r,
                    })
                }
                Some(_) => {}
            }
            let floor = prev_exit.or(start).unwrap_or(0);
            if t_exit_us < t_enter_us || t_enter_us < floor {
                return Err(TraceError::OutOfOrder { row });
            }
            prev_exit = Some(t_exit_us);
            events.push(TraceEvent {
                rank: r,
                call,
                t_enter_us,
                t_exit_us,
            });
        }

        let rank = rank.ok_or(TraceError::Empty)?;
        let start_us = start.unwrap_or(events[0].t_enter_us);
        Ok(Self {
            rank,
            start_us,
            events,
        })
    }
}

pub fn parse_trace(path: &Path) -> Result<RankTrace> {
    let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    RankTrace::from_csv(&text)
}

/// Reads every `*.csv` file of a directory, sorted by rank.
pub fn load_trace_dir(dir: &Path) -> Result<Vec<RankTrace>> {
    let io_err = |source| TraceError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    if paths.is_empty() {
        return Err(TraceError::NoTraceFiles(dir.to_path_buf()));
    }
    paths.sort();
    let mut traces = paths
        .iter()
        .map(|p| parse_trace(p))
        .collect::<Result<Vec<_>>>()?;
    traces.sort_by_key(RankTrace::rank);
    Ok(traces)
}

pub fn trace_file_name(rank: u32) -> String {
    format!("rank_{rank:04}.csv")
}

pub fn write_trace_dir(dir: &Path, traces: &[RankTrace]) -> Result<Vec<PathBuf>> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TraceError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::with_capacity(traces.len());
    for t in traces {
        let path = dir.join(trace_file_name(t.rank()));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        w.write_all(t.to_csv().as_bytes())
            .and_then(|_| w.flush())
            .map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Compute and MPI time of one solver iteration, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationSlice {
    pub k: usize,
    pub t_compute: f64,
    pub t_mpi: f64,
}

impl IterationSlice {
    pub fn wall(&self) -> f64 {
        self.t_compute + self.t_mpi
    }
}

pub fn segment_iterations(trace: &RankTrace) -> Result<Vec<IterationSlice>> {
    let mut slices = Vec::new();
    let mut span_start = trace.start_us;
    let mut mpi_us: u64 = 0;
    let mut pending = 0usize;

    for ev in &trace.events {
        mpi_us += ev.duration_us();
        pending += 1;
        if ev.call == MpiCall::Barrier {
            let span = ev.t_exit_us - span_start;
            slices.push(IterationSlice {
                k: slices.len(),
                t_compute: us_to_s(span - mpi_us),
                t_mpi: us_to_s(mpi_us),
            });
            span_start = ev.t_exit_us;
            mpi_us = 0;
            pending = 0;
        }
    }
    if slices.is_empty() {
        return Err(TraceError::NoIterationBoundaries);
    }
    if pending > 0 {
        log::warn!(
            "rank {}: discarding {pending} trailing event(s) after the last Barrier",
            trace.rank
        );
    }
    Ok(slices)
}

fn us_to_s(us: u64) -> f64 {
    us as f64 * 1e-6
}

pub fn duty_cycle(slice: &IterationSlice) -> Result<f64> {
    let wall = slice.wall();
    if wall <= 0.0 {
        return Err(TraceError::ZeroLengthSlice);
    }
    Ok((slice.t_compute / wall).clamp(0.0, 1.0))
}

/// Time-weighted duty over the slices left after dropping the first
/// `floor(skip_fraction * K)`.
pub fn steady_state_duty(slices: &[IterationSlice], skip_fraction: f64) -> Result<f64> {
    let retained = retained_slices(slices, skip_fraction)?;
    let (compute, wall) = retained
        .iter()
        .fold((0.0, 0.0), |(c, w), s| (c + s.t_compute, w + s.wall()));
    if wall <= 0.0 {
        return Err(TraceError::ZeroLengthSlice);
    }
    Ok((compute / wall).clamp(0.0, 1.0))
}

fn retained_slices(slices: &[IterationSlice], skip_fraction: f64) -> Result<&[IterationSlice]> {
    if !(0.0..1.0).contains(&skip_fraction) {
        return Err(TraceError::InvalidSkip(skip_fraction));
    }
    let skipped = (skip_fraction * slices.len() as f64).floor() as usize;
    if skipped >= slices.len() {
        return Err(TraceError::EmptyRetained {
            skipped,
            total: slices.len(),
        });
    }
    Ok(&slices[skipped..])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutyCycleReport {
    pub per_rank: BTreeMap<u32, f64>,
    pub per_iteration: BTreeMap<u32, Vec<f64>>,
    pub skip_fraction: f64,
    pub groups: Option<BTreeMap<String, f64>>,
}

impl DutyCycleReport {
    pub fn ranks(&self) -> impl Iterator<Item = u32> + '_ {
        self.per_rank.keys().copied()
    }

    pub fn mean_duty(&self) -> f64 {
        if self.per_rank.is_empty() {
            return 0.0;
        }
        self.per_rank.values().sum::<f64>() / self.per_rank.len() as f64
    }
}

/// Segments every trace and builds the duty-cycle report.
///
/// `group_of` maps a rank to its group label; a group's value is the plain
/// mean of its members' steady-state duties.
pub fn analyze<F>(traces: &[RankTrace], skip_fraction: f64, group_of: Option<F>) -> Result<DutyCycleReport>
where
    F: Fn(u32) -> Option<String>,
{
    if traces.is_empty() {
        return Err(TraceError::Empty);
    }
    let mut per_rank = BTreeMap::new();
    let mut per_iteration = BTreeMap::new();
    for t in traces {
        let slices = segment_iterations(t)?;
        per_rank.insert(t.rank(), steady_state_duty(&slices, skip_fraction)?);
        let ds = slices.iter().map(duty_cycle).collect::<Result<Vec<_>>>()?;
        per_iteration.insert(t.rank(), ds);
    }

    let groups = group_of.map(|label| {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (&rank, &d) in &per_rank {
            if let Some(g) = label(rank) {
                let e = acc.entry(g).or_insert((0.0, 0));
                e.0 += d;
                e.1 += 1;
            }
        }
        acc.into_iter()
            .map(|(g, (sum, n))| (g, sum / n as f64))
            .collect()
    });

    Ok(DutyCycleReport {
        per_rank,
        per_iteration,
        skip_fraction,
        groups,
    })
}

/// Allocated-but-idle CPU, in millicores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReclaimableCapacity {
    pub per_rank: BTreeMap<u32, f64>,
    pub total: f64,
    pub fraction_of_budget: f64,
}

pub fn reclaimable(
    duties: &BTreeMap<u32, f64>,
    requests: &BTreeMap<u32, u32>,
) -> Result<ReclaimableCapacity> {
    if duties.len() != requests.len() || !duties.keys().eq(requests.keys()) {
        return Err(TraceError::MismatchedRanks);
    }
    let per_rank: BTreeMap<u32, f64> = duties
        .iter()
        .map(|(&rank, &d)| (rank, f64::from(requests[&rank]) * (1.0 - d.clamp(0.0, 1.0))))
        .collect();
    let total: f64 = per_rank.values().sum();
    let budget: f64 = requests.values().map(|&r| f64::from(r)).sum();
    let fraction_of_budget = if budget > 0.0 {
        (total / budget).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(ReclaimableCapacity {
        per_rank,
        total,
        fraction_of_budget,
    })
}

/// Parameters of the synthetic trace generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Target duty per rank; rank ids are the indices.
    pub duties: Vec<f64>,
    pub iterations: usize,
    pub iteration_wall_s: f64,
    /// Half-width of the uniform perturbation of each compute gap, as a
    /// fraction of the iteration wall time. At most 0.01.
    pub jitter: f64,
    pub seed: u64,
}

pub const MAX_SYNTHETIC_JITTER: f64 = 0.01;

/// Steady-state duties of the three rank groups of the reference 16-rank
/// case: 8 sparse, 4 medium, 4 dense.
pub const REFERENCE_GROUP_DUTIES: [(&str, usize, f64); 3] =
    [("sparse", 8, 0.050), ("medium", 4, 0.115), ("dense", 4, 0.194)];

/// Per-rank duties of the reference case, ranks ordered sparse to dense.
pub fn reference_duties() -> Vec<f64> {
    REFERENCE_GROUP_DUTIES
        .iter()
        .flat_map(|&(_, n, d)| std::iter::repeat_n(d, n))
        .collect()
}

/// Group name of a rank of the reference case.
pub fn reference_group(rank: u32) -> Option<String> {
    let mut first = 0u32;
    for &(name, n, _) in &REFERENCE_GROUP_DUTIES {
        if rank < first + n as u32 {
            return Some(name.to_string());
        }
        first += n as u32;
    }
    None
}

/// Share of an iteration's MPI time spent in the Allreduce; the closing
/// Barrier takes the rest.
const ALLREDUCE_SHARE: f64 = 0.8;

/// Emits one trace per rank. Each iteration is a compute gap of `d * wall`
/// followed by an Allreduce and a closing Barrier that fill the remaining
/// `(1 - d) * wall`.
pub fn gen_synthetic_trace(spec: &SyntheticSpec) -> Result<Vec<RankTrace>> {
    if spec.duties.is_empty() {
        return Err(TraceError::InvalidSpec("no ranks".into()));
    }
    if let Some(d) = spec.duties.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
        return Err(TraceError::InvalidSpec(format!("duty {d} outside (0, 1)")));
    }
    if spec.iterations < 2 {
        return Err(TraceError::InvalidSpec("need at least 2 iterations".into()));
    }
    if !(spec.iteration_wall_s > 0.0 && spec.iteration_wall_s.is_finite()) {
        return Err(TraceError::InvalidSpec("iteration wall must be positive".into()));
    }
    if !(0.0..=MAX_SYNTHETIC_JITTER).contains(&spec.jitter) {
        return Err(TraceError::InvalidSpec(format!(
            "jitter {} outside [0, {MAX_SYNTHETIC_JITTER}]",
            spec.jitter
        )));
    }

    let wall_us = (spec.iteration_wall_s * 1e6).round() as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut traces = Vec::with_capacity(spec.duties.len());
    for (rank, &duty) in spec.duties.iter().enumerate() {
        let rank = rank as u32;
        let mut events = Vec::with_capacity(spec.iterations * 2);
        let mut t: i64 = 0;
        for _ in 0..spec.iterations {
            let noise = if spec.jitter > 0.0 {
                rng.random_range(-spec.jitter..=spec.jitter) * wall_us as f64
            } else {
                0.0
            };
            let compute = ((duty * wall_us as f64 + noise).round() as i64).clamp(1, wall_us - 1);
            let mpi = wall_us - compute;
            let allreduce = (mpi as f64 * ALLREDUCE_SHARE).round() as i64;
            let enter = t + compute;
            events.push(TraceEvent {
                rank,
                call: MpiCall::Allreduce,
                t_enter_us: enter as u64,
                t_exit_us: (enter + allreduce) as u64,
            });
            events.push(TraceEvent {
                rank,
                call: MpiCall::Barrier,
                t_enter_us: (enter + allreduce) as u64,
                t_exit_us: (t + wall_us) as u64,
            });
            t += wall_us;
        }
        traces.push(RankTrace::new(rank, 0, events)?);
    }
    Ok(traces)
}
