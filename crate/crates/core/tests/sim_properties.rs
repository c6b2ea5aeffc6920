use std::collections::BTreeMap;

use colocate_core::alloc::{AllocationPlan, ClusterSpec};
use colocate_core::sim::{self, Engine, JobId, Segment, SimJobSpec};
use colocate_core::trace::MpiCall;
use proptest::prelude::*;

fn arb_job(id: usize) -> impl Strategy<Value = SimJobSpec> {
    (
        prop::collection::vec(0.0f64..2.0, 1..5),
        1u32..5,
        0.0f64..0.5,
        prop::collection::vec(10u32..60, 5),
        0.0f64..3.0,
    )
        .prop_map(move |(compute, iterations, latency, reqs, offset)| {
            let per_rank: Vec<u32> = reqs[..compute.len()].to_vec();
            SimJobSpec {
                id: format!("j{id}"),
                iterations,
                collective_latency: latency,
                requests: AllocationPlan {
                    budget_millicpu: per_rank.iter().map(|&r| u64::from(r)).sum(),
                    per_rank_millicpu: per_rank,
                },
                per_rank_compute: compute,
                start_offset: offset,
                compute_jitter: 0.0,
            }
        })
}

/// Up to four jobs of up to four ranks, requests small enough for any
/// single node to hold them all.
fn arb_scenario() -> impl Strategy<Value = (ClusterSpec, Vec<SimJobSpec>)> {
    (1u32..4, 1u32..4, 1usize..5).prop_flat_map(|(nodes, cores, n)| {
        let jobs: Vec<_> = (0..n).map(arb_job).collect();
        (Just(ClusterSpec::new(nodes, cores, 1.0).unwrap()), jobs)
    })
}

fn engine(cluster: ClusterSpec, jobs: &[SimJobSpec], seed: u64) -> Engine {
    let placement = sim::place(jobs, &cluster).unwrap();
    Engine::with_placement(cluster, jobs, &placement, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rates_conserve_work_and_respect_the_cap((cluster, jobs) in arb_scenario()) {
        let mut e = engine(cluster, &jobs, 1);
        let mut received: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut violations = Vec::new();
        e.run_to_completion(&mut |seg: &Segment<'_>| {
            for node in seg.nodes {
                let expect = node.cores.min(node.pods.len() as f64);
                if (node.usage() - expect).abs() > 1e-9 {
                    violations.push(format!("node uses {} of {}", node.usage(), expect));
                }
                for p in &node.pods {
                    if p.rate > 1.0 + 1e-12 {
                        violations.push(format!("rate {}", p.rate));
                    }
                    *received.entry((p.job, p.rank)).or_default() += p.rate * seg.duration;
                }
            }
        });
        prop_assert!(violations.is_empty(), "{:?}", violations);
        for (j, job) in jobs.iter().enumerate() {
            for (r, &c) in job.per_rank_compute.iter().enumerate() {
                let want = c * f64::from(job.iterations);
                let got = received.get(&(j, r)).copied().unwrap_or(0.0);
                prop_assert!((got - want).abs() < 1e-9 * (1.0 + want), "job {} rank {}: {} vs {}", j, r, got, want);
            }
        }
        let result = e.result().unwrap();
        for (n, u) in result.per_node_utilization.iter().enumerate() {
            prop_assert!(*u >= 0.0 && *u <= f64::from(cluster.vcpus_per_node) + 1e-9, "node {} utilisation {}", n, u);
        }
    }

    #[test]
    fn barriers_hold((cluster, jobs) in arb_scenario()) {
        let mut e = engine(cluster, &jobs, 1);
        for (j, job) in jobs.iter().enumerate() {
            e.start_trace(JobId(j), job.iterations).unwrap();
        }
        e.run_to_completion(&mut |_: &Segment<'_>| {});
        for (j, job) in jobs.iter().enumerate() {
            let Some(traces) = e.take_trace(JobId(j)).unwrap() else { continue };
            let latency_us = (job.collective_latency * 1e6).round() as i64;
            let per_rank_barriers: Vec<Vec<_>> = traces
                .iter()
                .map(|t| t.events().iter().filter(|ev| ev.call == MpiCall::Barrier).copied().collect())
                .collect();
            for k in 0..per_rank_barriers[0].len() {
                let release = per_rank_barriers[0][k].t_exit_us;
                let last_arrival = per_rank_barriers.iter().map(|b| b[k].t_enter_us).max().unwrap();
                for b in &per_rank_barriers {
                    prop_assert_eq!(b[k].t_exit_us, release);
                }
                prop_assert!((release as i64 - last_arrival as i64 - latency_us).abs() <= 1);
                // The next iteration's first arrival cannot precede this release.
                if k + 1 < per_rank_barriers[0].len() {
                    for t in &traces {
                        let next = t.events().iter().filter(|ev| ev.call == MpiCall::Allreduce).nth(k + 1).unwrap();
                        prop_assert!(next.t_enter_us >= release);
                    }
                }
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_runs((cluster, mut jobs) in arb_scenario(), seed in any::<u64>(), jitter in 0.0f64..0.2) {
        for j in &mut jobs {
            j.compute_jitter = jitter;
        }
        let placement = sim::place(&jobs, &cluster).unwrap();
        let a = sim::run(&cluster, &jobs, &placement, seed).unwrap();
        let b = sim::run(&cluster, &jobs, &placement, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn makespan_is_max_completion((cluster, jobs) in arb_scenario()) {
        let placement = sim::place(&jobs, &cluster).unwrap();
        let r = sim::run(&cluster, &jobs, &placement, 0).unwrap();
        let max = r.per_job_completion.iter().copied().fold(0.0, f64::max);
        prop_assert_eq!(r.makespan, max);
        for (c, job) in r.per_job_completion.iter().zip(&jobs) {
            prop_assert!(*c + 1e-9 >= job.start_offset + f64::from(job.iterations) * job.uncontended_iteration());
        }
    }

    /// Single-iteration jobs: an extra job can only take CPU away.
    #[test]
    fn adding_a_job_never_speeds_up_others((cluster, mut jobs) in arb_scenario(), extra in arb_job(9)) {
        for j in &mut jobs {
            j.iterations = 1;
        }
        let mut extra = extra;
        extra.iterations = 1;
        let base = sim::run(&cluster, &jobs, &sim::place(&jobs, &cluster).unwrap(), 0).unwrap();
        let mut more = jobs.clone();
        more.push(extra);
        let with = sim::run(&cluster, &more, &sim::place(&more, &cluster).unwrap(), 0).unwrap();
        for (a, b) in base.per_job_completion.iter().zip(&with.per_job_completion) {
            prop_assert!(*b + 1e-9 >= *a, "{} finished earlier with an extra job: {} < {}", "job", b, a);
        }
    }

    #[test]
    fn symmetric_jobs_are_fair(cores in 1u32..5, compute in prop::collection::vec(0.1f64..2.0, 1..5), latency in 0.0f64..1.0) {
        let cluster = ClusterSpec::new(1, cores, 1.0).unwrap();
        let job = |id: &str| SimJobSpec {
            id: id.into(),
            per_rank_compute: compute.clone(),
            iterations: 3,
            collective_latency: latency,
            requests: AllocationPlan::equal(compute.len()),
            start_offset: 0.0,
            compute_jitter: 0.0,
        };
        let jobs = vec![job("a"), job("b")];
        let placement = sim::Placement { nodes: vec![vec![0; compute.len()]; 2] };
        let r = sim::run(&cluster, &jobs, &placement, 0).unwrap();
        prop_assert!((sim::fairness(&r, &[0, 1]).unwrap() - 1.0).abs() < 1e-9);
    }
}
