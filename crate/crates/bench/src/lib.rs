//! Fixtures shared by the benchmarks.

use std::collections::BTreeMap;

use colocate_core::alloc::{duty_proportional_requests, ClusterSpec, DEFAULT_SIM_BUDGET_MILLICPU};
use colocate_core::sim::{calibrate_duties, SimJobSpec};
use colocate_core::trace::{gen_synthetic_trace, reference_duties, RankTrace, SyntheticSpec};

/// `n` calibrated reference jobs at duty-proportional requests, each
/// `iterations` long.
pub fn reference_jobs(n: usize, iterations: u32) -> Vec<SimJobSpec> {
    let duties = reference_duties();
    let cal = calibrate_duties(&duties, 1249.0 * f64::from(iterations) / 200.0, iterations)
        .expect("reference duties calibrate");
    let map: BTreeMap<u32, f64> = duties.iter().enumerate().map(|(r, &d)| (r as u32, d)).collect();
    let plan = duty_proportional_requests(&map, DEFAULT_SIM_BUDGET_MILLICPU).expect("budget covers the floor");
    (0..n).map(|i| cal.job(format!("S{i}"), plan.clone(), 0.0)).collect()
}

/// Holds five `reference_jobs` with 80 pods on 32 cores, so they contend.
pub fn small_cluster() -> ClusterSpec {
    ClusterSpec::new(4, 8, 1.0).expect("valid cluster")
}

pub fn reference_traces(iterations: usize) -> Vec<RankTrace> {
    gen_synthetic_trace(&SyntheticSpec {
        duties: reference_duties(),
        iterations,
        iteration_wall_s: 6.245,
        jitter: 0.01,
        seed: 42,
    })
    .expect("valid synthetic spec")
}
