use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use colocate_core::alloc::{
    aggregate_check, duty_proportional_requests, proportional_requests, ClusterSpec, QuotaSpec,
    EQUAL_REQUEST_MILLICPU,
};
use colocate_core::controller::{run_pipeline, ControllerScenario, PipelineReport};
use colocate_core::decomp::WeightVector;
use colocate_core::k8s;
use colocate_core::model::{
    cost_csv, cost_table, fit_beta, parse_points_csv, pareto_csv, pareto_table, prediction_csv, prediction_table,
    ContentionModel, MeasuredPoint,
};
use colocate_core::sim::{self, Engine, Segment, SimScenario, UtilizationSampler};
use colocate_core::trace::{self, gen_synthetic_trace, reclaimable, reference_duties, SyntheticSpec};
use log::info;
use serde_json::json;

use crate::exit::Constraint;
use crate::{AnalyzeArgs, Cli, ClusterArgs, Command, ControlArgs, EmitCommand, GenTracesArgs, PlanArgs, PredictArgs, SimulateArgs};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Plan(a) => plan(a),
        Command::Predict(a) => predict(a),
        Command::Simulate(a) => simulate(a, cli.seed),
        Command::Control(a) => control(a, cli.seed),
        Command::Emit(e) => emit(e),
        Command::GenTraces(a) => gen_traces(a, cli.seed),
    }
}

impl ClusterArgs {
    fn resolve(&self) -> Result<ClusterSpec> {
        let r = ClusterSpec::reference();
        Ok(ClusterSpec::new(
            self.nodes.unwrap_or(r.nodes),
            self.vcpus.unwrap_or(r.vcpus_per_node),
            self.price.unwrap_or(r.price_per_hour),
        )?)
    }
}

/// Writes `files` under `dir` when it is set.
fn write_outputs(dir: Option<&Path>, files: &[(&str, String)]) -> Result<()> {
    let Some(dir) = dir else { return Ok(()) };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

/// Two-column CSV with an optional header line, e.g. `rank,duty`.
fn parse_pairs<V: std::str::FromStr>(text: &str, what: &str) -> Result<BTreeMap<u32, V>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let (Some(a), Some(b)) = (cols.next(), cols.next()) else {
            bail!("{what} line {}: expected two columns", i + 1);
        };
        let Ok(rank) = a.parse::<u32>() else {
            if i == 0 {
                continue;
            }
            bail!("{what} line {}: bad rank `{a}`", i + 1);
        };
        let v = b.parse().map_err(|_| anyhow::anyhow!("{what} line {}: bad value `{b}`", i + 1))?;
        if out.insert(rank, v).is_some() {
            bail!("{what} line {}: rank {rank} repeated", i + 1);
        }
    }
    Ok(out)
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let traces = trace::load_trace_dir(&a.trace_dir)?;
    let labels: Option<BTreeMap<u32, String>> = match &a.groups {
        Some(p) => Some(parse_pairs(&read(p)?, "groups")?),
        None => None,
    };
    let report = if a.reference_groups {
        trace::analyze(&traces, a.skip, Some(trace::reference_group))?
    } else if let Some(labels) = &labels {
        trace::analyze(&traces, a.skip, Some(|r: u32| labels.get(&r).cloned()))?
    } else {
        trace::analyze(&traces, a.skip, None::<fn(u32) -> Option<String>>)?
    };

    let equal: BTreeMap<u32, u32> = report.ranks().map(|r| (r, EQUAL_REQUEST_MILLICPU)).collect();
    let plan = duty_proportional_requests(&report.per_rank, a.budget)?;
    let proportional: BTreeMap<u32, u32> = report.ranks().zip(plan.per_rank_millicpu.iter().copied()).collect();
    let rec_equal = reclaimable(&report.per_rank, &equal)?;
    let rec_prop = reclaimable(&report.per_rank, &proportional)?;

    println!("ranks: {}  mean duty: {}  skip: {}", report.per_rank.len(), pct(report.mean_duty()), report.skip_fraction);
    if let Some(groups) = &report.groups {
        for (g, d) in groups {
            println!("group {g}: {}", pct(*d));
        }
    }
    println!(
        "reclaimable at equal requests: {:.0} m of {} m ({})",
        rec_equal.total,
        equal.values().map(|&m| u64::from(m)).sum::<u64>(),
        pct(rec_equal.fraction_of_budget)
    );
    println!(
        "reclaimable at proportional requests: {:.0} m of {} m ({})",
        rec_prop.total,
        plan.total_millicpu(),
        pct(rec_prop.fraction_of_budget)
    );

    let mut duties = String::from("rank,duty,group,equal_request_millicpu,equal_reclaimable_millicpu,proportional_request_millicpu,proportional_reclaimable_millicpu\n");
    for (&r, &d) in &report.per_rank {
        let group = match (&labels, a.reference_groups) {
            (_, true) => trace::reference_group(r),
            (Some(l), _) => l.get(&r).cloned(),
            _ => None,
        };
        let _ = writeln!(
            duties,
            "{r},{d:.6},{},{},{:.1},{},{:.1}",
            group.unwrap_or_default(),
            equal[&r],
            rec_equal.per_rank[&r],
            proportional[&r],
            rec_prop.per_rank[&r]
        );
    }
    let mut per_iter = String::from("rank,iteration,duty\n");
    for (r, ds) in &report.per_iteration {
        for (k, d) in ds.iter().enumerate() {
            let _ = writeln!(per_iter, "{r},{k},{d:.6}");
        }
    }
    let json = json!({
        "report": report,
        "reclaimable_equal": rec_equal,
        "reclaimable_proportional": rec_prop,
        "proportional_plan": plan,
    });
    write_outputs(
        a.out.as_deref(),
        &[
            ("duties.csv", duties),
            ("iterations.csv", per_iter),
            ("report.json", serde_json::to_string_pretty(&json)?),
        ],
    )
}

fn plan(a: &PlanArgs) -> Result<()> {
    let cluster = a.cluster.resolve()?;
    let plan = if let Some(w) = &a.weights {
        proportional_requests(&WeightVector::new(w.clone())?, a.budget)?
    } else if a.three_zone {
        proportional_requests(&WeightVector::three_zone_16(), a.budget)?
    } else if let Some(n) = a.uniform {
        proportional_requests(&WeightVector::uniform(n)?, a.budget)?
    } else if let Some(p) = &a.duties {
        let duties: BTreeMap<u32, f64> = parse_pairs(&read(p)?, "duties")?;
        if !duties.keys().copied().eq(0..duties.len() as u32) {
            bail!("duties must cover ranks 0..{} exactly", duties.len());
        }
        duty_proportional_requests(&duties, a.budget)?
    } else {
        unreachable!("clap requires one source")
    };
    if a.sims == 0 {
        bail!("--sims must be at least 1");
    }
    let quota = a.quota.map(QuotaSpec::new).transpose()?;
    let plans = vec![plan.clone(); a.sims as usize];
    let check = aggregate_check(&plans, &cluster, quota.as_ref());

    for (r, m) in plan.per_rank_millicpu.iter().enumerate() {
        println!("rank {r:>3}: {m:>6} m");
    }
    println!("total {} m of budget {} m ({})", plan.total_millicpu(), plan.budget_millicpu, plan.qos());
    println!(
        "{} simulation(s): {} m, {} of cluster, {}",
        a.sims,
        check.total_millicpu,
        pct(check.fraction_of_cluster),
        if check.fits { "fits" } else { "does NOT fit" }
    );

    let json = json!({ "plan": plan, "sims": a.sims, "aggregate": check, "quota_millicpu": a.quota });
    write_outputs(
        a.out.as_deref(),
        &[("plan.csv", plan.to_csv()), ("plan.json", serde_json::to_string_pretty(&json)?)],
    )?;
    if !check.fits {
        return Err(Constraint(format!(
            "{} m of requests exceed the {} limit",
            check.total_millicpu,
            if quota.is_some() { "quota or cluster" } else { "cluster" }
        ))
        .into());
    }
    if let Some(dir) = &a.manifests {
        let paths = k8s::write_plan_manifests(dir, &a.sim, &plan, &a.image)?;
        println!("wrote {} manifests under {}", paths.len(), dir.display());
    }
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let cluster = a.cluster.resolve()?;
    let points = parse_points_csv(&read(&a.points)?, a.ranks).map_err(anyhow::Error::msg)?;
    if points.windows(2).any(|w| w[0].n == w[1].n) {
        bail!("points file repeats an N");
    }
    let t1 = match a.t1 {
        Some(t) => t,
        None => points
            .iter()
            .find(|p| p.n == 1)
            .map(|p| p.makespan)
            .context("no N = 1 point; pass --t1")?,
    };
    let all = fit_beta(&points, t1, &cluster)?;
    let pair: Vec<MeasuredPoint> = points.iter().copied().filter(|p| p.n <= 2).collect();
    let blind = fit_beta(&pair, t1, &cluster).ok();
    let max_n = points.iter().map(|p| p.n).max().unwrap_or(1);
    let up_to = a.up_to.unwrap_or(max_n);

    let beta = a.beta.unwrap_or(all.beta);
    let model = ContentionModel::for_cluster(t1, a.ranks, &cluster, beta)?;
    let rows = prediction_table(&model, &points, up_to);
    let blind_rows = match blind {
        Some(b) => prediction_table(&ContentionModel::for_cluster(t1, a.ranks, &cluster, b.beta)?, &points, up_to),
        None => Vec::new(),
    };
    let pareto = pareto_table(&points, t1)?;
    let costs = cost_table(&points, t1, &cluster)?;

    println!("T1 = {t1:.1} s, rho1 = {:.4}", model.load(1));
    println!("beta (all points) = {:.4} +/- {:.4} from {} point(s)", all.beta, all.stderr, all.used);
    match &blind {
        Some(b) => println!("beta (N = 2 only)  = {:.4}", b.beta),
        None => println!("beta (N = 2 only)  = n/a (no N = 2 point)"),
    }
    println!("predictions at beta = {beta:.4}:");
    for r in &rows {
        let err = r.error.map_or_else(|| "-".into(), |e| format!("{:+.2}%", 100.0 * e));
        let flag = if r.illustrative { "  (extrapolated)" } else { "" };
        println!("  N={}: {:.0} s, error {err}{flag}", r.n, r.predicted);
    }
    if !blind_rows.is_empty() {
        let errs: Vec<String> = blind_rows
            .iter()
            .filter(|r| r.n >= 3)
            .filter_map(|r| r.error.map(|e| format!("N={}: {:+.2}%", r.n, 100.0 * e)))
            .collect();
        if !errs.is_empty() {
            println!("blind prediction errors: {}", errs.join(", "));
        }
    }
    match pareto.knee {
        Some(k) => println!("knee at N = {k}"),
        None => println!("no knee: efficiency never drops"),
    }
    for c in &costs {
        let saving = c.saving_vs_single.map_or_else(|| "-".into(), pct);
        println!("  N={}: {:.2} per simulation, saving {saving}", c.n, c.cost_per_sim);
    }

    let json = json!({
        "t1_s": t1,
        "fit_all": all,
        "fit_n2": blind,
        "beta_used": beta,
        "predictions": rows,
        "pareto": pareto,
        "cost": costs,
    });
    let mut files = vec![
        ("predictions.csv", prediction_csv(&rows)),
        ("pareto.csv", pareto_csv(&pareto)),
        ("cost.csv", cost_csv(&costs)),
        ("model.json", serde_json::to_string_pretty(&json)?),
    ];
    if !blind_rows.is_empty() {
        files.push(("predictions_n2.csv", prediction_csv(&blind_rows)));
    }
    write_outputs(a.out.as_deref(), &files)
}

fn simulate(a: &SimulateArgs, seed: u64) -> Result<()> {
    let scenario = SimScenario::from_toml(&read(&a.scenario)?)?;
    let jobs = scenario.job_specs()?;
    let placement = sim::place(&jobs, &scenario.cluster)?;
    let mut engine = Engine::with_placement(scenario.cluster, &jobs, &placement, seed_for(seed, scenario.seed))?;
    let interval = a.sample_interval.or(scenario.sample_interval_s).unwrap_or(1.0);
    if !(interval > 0.0 && interval.is_finite()) {
        bail!("sample interval must be positive");
    }
    let mut sampler = UtilizationSampler::new(interval);
    engine.run_to_completion(&mut |seg: &Segment<'_>| sampler.observe(seg));
    let result = engine.result()?;

    println!("jobs: {}  makespan: {:.3} s  events: {}", result.job_ids.len(), result.makespan, result.event_count);
    for ((id, c), d) in result.job_ids.iter().zip(&result.per_job_completion).zip(&result.per_job_duration) {
        println!("  {id}: done at {c:.3} s after {d:.3} s");
    }
    if let Some(f) = result.fairness_ratio {
        println!("fairness (max/min duration): {f:.4}");
    }
    for (n, u) in result.per_node_utilization.iter().enumerate() {
        println!("  node {n}: {u:.3} cores");
    }
    write_outputs(
        a.out.as_deref(),
        &[
            ("jobs.csv", result.to_csv()),
            ("utilization.csv", sampler.to_csv()),
            ("result.json", serde_json::to_string_pretty(&result)?),
        ],
    )
}

/// The scenario's own seed unless `--seed` moved off the default.
fn seed_for(cli_seed: u64, scenario_seed: u64) -> u64 {
    if cli_seed == crate::DEFAULT_SEED {
        scenario_seed
    } else {
        cli_seed
    }
}

fn control(a: &ControlArgs, seed: u64) -> Result<()> {
    let mut scenario = match &a.scenario {
        Some(p) => ControllerScenario::from_toml(&read(p)?)?,
        None => ControllerScenario::default(),
    };
    scenario.seed = seed_for(seed, scenario.seed);
    if let Some(m) = a.max_sims {
        scenario.controller.max_sims = m;
    }
    let t1 = scenario.template.t1_s;
    let mut actuator = scenario.actuator()?;
    match run_pipeline(&mut actuator, &scenario.controller) {
        Ok(report) => {
            print_pipeline(&report, t1);
            write_outputs(a.out.as_deref(), &pipeline_files(&report, t1)?)
        }
        Err(abort) => {
            eprintln!("pipeline aborted after {} actions", abort.log.entries().len());
            write_outputs(a.out.as_deref(), &[("actions.jsonl", abort.log.to_jsonl())])?;
            Err(abort.into())
        }
    }
}

fn print_pipeline(report: &PipelineReport, t1: f64) {
    let c = report.counts;
    println!(
        "profiling passes: {}  resizes: {}  deployments: {}  fairness adjustments: {}  restarts: {}",
        c.profiling_passes, c.resizes, c.deployments, c.fairness_adjustments, report.restarts
    );
    for o in &report.outcomes {
        println!("  {}: {:.1} s to {:.1} s ({:.1} s)", o.sim, o.started_at, o.completed_at, o.duration());
    }
    println!("wall time: {:.1} s  throughput: {:.3} simulations per T1", report.wall_time, report.throughput(t1));
}

fn pipeline_files(report: &PipelineReport, t1: f64) -> Result<Vec<(&'static str, String)>> {
    let mut outcomes = String::from("sim,started_s,completed_s,duration_s\n");
    for o in &report.outcomes {
        let _ = writeln!(outcomes, "{},{:.6},{:.6},{:.6}", o.sim, o.started_at, o.completed_at, o.duration());
    }
    let mut timeline = String::from("t_s,committed_millicpu\n");
    for e in report.log.entries() {
        let _ = writeln!(timeline, "{:.6},{}", e.t, e.committed_millicpu);
    }
    let summary = json!({
        "counts": report.counts,
        "restarts": report.restarts,
        "wall_time_s": report.wall_time,
        "throughput": report.throughput(t1),
        "outcomes": report.outcomes,
    });
    Ok(vec![
        ("actions.jsonl", report.log.to_jsonl()),
        ("outcomes.csv", outcomes),
        ("committed.csv", timeline),
        ("summary.json", serde_json::to_string_pretty(&summary)?),
    ])
}

fn emit(e: &EmitCommand) -> Result<()> {
    match e {
        EmitCommand::Manifest { sim, rank, cpu, image } => {
            let mut spec = k8s::PodManifestSpec::new(sim.clone(), *rank, *cpu);
            spec.image = image.clone();
            print!("{}", k8s::emit_pod_manifest(&spec)?);
        }
        EmitCommand::Hostfile { sim, addresses } => print!("{}", k8s::emit_hostfile_configmap(sim, addresses)?),
        EmitCommand::Resize { pod, cpu } => {
            println!("{}", k8s::emit_resize_patch(pod, *cpu)?);
            println!("{}", k8s::resize_command(pod, *cpu)?);
        }
        EmitCommand::Mpirun { sim, ranks, hostfile } => println!("{}", k8s::emit_mpirun_command(sim, *ranks, hostfile)?),
    }
    Ok(())
}

fn gen_traces(a: &GenTracesArgs, seed: u64) -> Result<()> {
    let spec = SyntheticSpec {
        duties: a.duties.clone().unwrap_or_else(reference_duties),
        iterations: a.iterations,
        iteration_wall_s: a.wall,
        jitter: a.jitter,
        seed,
    };
    let traces = gen_synthetic_trace(&spec)?;
    let paths: Vec<PathBuf> = trace::write_trace_dir(&a.out, &traces)?;
    println!("wrote {} trace files under {}", paths.len(), a.out.display());
    Ok(())
}
