//! TOML scenario files for static simulator runs.
//!
//! ```toml
//! seed = 42
//!
//! [cluster]
//! nodes = 12
//! vcpus_per_node = 8
//! price_per_hour = 4.12
//!
//! [[jobs]]
//! id = "A"
//! replicas = 2            # A1, A2
//! iterations = 200
//! start_offset_s = 0.0
//! t1_s = 1249.0           # with `duties`: calibrated demand
//! duties = [0.05, 0.194]
//! allocation = "duty"     # or "equal"; or `weights` + `budget_millicpu`;
//!                         # or `requests_millicpu`
//! ```
//!
//! Explicit demands use `compute_s` (one entry per rank) and `latency_s`
//! instead of `duties` and `t1_s`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{calibrate_duties, Result, SimError, SimJobSpec};
use crate::alloc::{
    duty_proportional_requests, plan_from_shares, AllocationPlan, ClusterSpec, DEFAULT_SIM_BUDGET_MILLICPU,
};

pub const DEFAULT_SEED: u64 = 42;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub cluster: ClusterSpec,
    /// Width of the utilisation CSV buckets.
    #[serde(default)]
    pub sample_interval_s: Option<f64>,
    pub jobs: Vec<JobEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationRule {
    Equal,
    Duty,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobEntry {
    pub id: String,
    #[serde(default = "one")]
    pub replicas: u32,
    pub iterations: u32,
    #[serde(default)]
    pub start_offset_s: f64,
    /// Extra offset added per replica.
    #[serde(default)]
    pub replica_stagger_s: f64,
    #[serde(default)]
    pub jitter: f64,
    pub duties: Option<Vec<f64>>,
    pub t1_s: Option<f64>,
    pub compute_s: Option<Vec<f64>>,
    pub latency_s: Option<f64>,
    pub requests_millicpu: Option<Vec<u32>>,
    pub weights: Option<Vec<f64>>,
    pub budget_millicpu: Option<u64>,
    pub allocation: Option<AllocationRule>,
}

fn bad(job: &str, reason: impl Into<String>) -> SimError {
    SimError::InvalidJob {
        job: job.to_string(),
        reason: reason.into(),
    }
}

impl JobEntry {
    fn demand(&self) -> Result<(Vec<f64>, f64)> {
        match (&self.duties, self.t1_s, &self.compute_s, self.latency_s) {
            (Some(d), Some(t1), None, None) => {
                let cal = calibrate_duties(d, t1, self.iterations)?;
                Ok((cal.per_rank_compute, cal.collective_latency))
            }
            (None, None, Some(c), Some(l)) => Ok((c.clone(), l)),
            _ => Err(bad(
                &self.id,
                "give either `duties` with `t1_s` or `compute_s` with `latency_s`",
            )),
        }
    }

    fn plan(&self, ranks: usize) -> Result<AllocationPlan> {
        let budget = self.budget_millicpu.unwrap_or(DEFAULT_SIM_BUDGET_MILLICPU);
        let alloc_err = |e: crate::alloc::AllocError| bad(&self.id, e.to_string());
        let plan = match (&self.requests_millicpu, &self.weights, self.allocation) {
            (Some(r), None, None) => AllocationPlan {
                per_rank_millicpu: r.clone(),
                budget_millicpu: r.iter().map(|&x| u64::from(x)).sum(),
            },
            (None, Some(w), None) => plan_from_shares(w, budget).map_err(alloc_err)?,
            (None, None, Some(AllocationRule::Equal) | None) => AllocationPlan::equal(ranks),
            (None, None, Some(AllocationRule::Duty)) => {
                let duties = self
                    .duties
                    .as_ref()
                    .ok_or_else(|| bad(&self.id, "`allocation = \"duty\"` needs `duties`"))?;
                let map: BTreeMap<u32, f64> = duties.iter().enumerate().map(|(r, &d)| (r as u32, d)).collect();
                duty_proportional_requests(&map, budget).map_err(alloc_err)?
            }
            _ => {
                return Err(bad(
                    &self.id,
                    "give at most one of `requests_millicpu`, `weights`, `allocation`",
                ))
            }
        };
        if plan.n_ranks() != ranks {
            return Err(bad(
                &self.id,
                format!("{} requests for {ranks} ranks", plan.n_ranks()),
            ));
        }
        Ok(plan)
    }

    pub fn expand(&self) -> Result<Vec<SimJobSpec>> {
        if self.replicas == 0 {
            return Err(bad(&self.id, "replicas must be at least 1"));
        }
        let (compute, latency) = self.demand()?;
        let requests = self.plan(compute.len())?;
        let specs: Vec<SimJobSpec> = (0..self.replicas)
            .map(|i| SimJobSpec {
                id: if self.replicas == 1 {
                    self.id.clone()
                } else {
                    format!("{}{}", self.id, i + 1)
                },
                per_rank_compute: compute.clone(),
                iterations: self.iterations,
                collective_latency: latency,
                requests: requests.clone(),
                start_offset: self.start_offset_s + f64::from(i) * self.replica_stagger_s,
                compute_jitter: self.jitter,
            })
            .collect();
        for s in &specs {
            s.validate()?;
        }
        Ok(specs)
    }
}

impl SimScenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| SimError::Scenario(e.to_string()))?;
        s.cluster
            .validate()
            .map_err(|e| SimError::Scenario(e.to_string()))?;
        if s.jobs.is_empty() {
            return Err(SimError::Scenario("no jobs".into()));
        }
        if let Some(i) = s.sample_interval_s {
            if !(i > 0.0 && i.is_finite()) {
                return Err(SimError::Scenario("sample_interval_s must be positive".into()));
            }
        }
        Ok(s)
    }

    pub fn job_specs(&self) -> Result<Vec<SimJobSpec>> {
        let mut out = Vec::new();
        for entry in &self.jobs {
            out.extend(entry.expand()?);
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = out.iter().find(|j| !seen.insert(j.id.clone())) {
            return Err(SimError::Scenario(format!("duplicate job id {}", dup.id)));
        }
        Ok(out)
    }
}
