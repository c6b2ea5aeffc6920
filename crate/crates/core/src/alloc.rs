//! CPU request planning.
//!
//! Requests are integer millicores, floored so a plan never exceeds its
//! budget, with a 10 m minimum per rank. Plans carry requests only: no
//! CPU limit appears anywhere, so pods land in the Burstable QoS class and
//! share contended cores in proportion to their requests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decomp::WeightVector;

pub const MIN_REQUEST_MILLICPU: u32 = 10;
pub const DEFAULT_SIM_BUDGET_MILLICPU: u64 = 5900;
pub const EQUAL_REQUEST_MILLICPU: u32 = 1000;
pub const QOS_TAG: &str = "Burstable, requests-only";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AllocError {
    #[error("budget {budget} m cannot cover the {floor} m floor of {ranks} ranks")]
    BudgetTooSmall { budget: u64, ranks: usize, floor: u32 },
    #[error("plan needs at least one rank")]
    NoRanks,
    #[error("shares must be finite, non-negative and not all zero")]
    InvalidShares,
    #[error("invalid cluster: {0}")]
    InvalidCluster(String),
    #[error("quota must be positive")]
    InvalidQuota,
    #[error("{name} = {value} outside its domain")]
    Domain { name: &'static str, value: f64 },
}

pub type Result<T> = std::result::Result<T, AllocError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub nodes: u32,
    pub vcpus_per_node: u32,
    pub price_per_hour: f64,
}

impl ClusterSpec {
    pub fn new(nodes: u32, vcpus_per_node: u32, price_per_hour: f64) -> Result<Self> {
        let c = Self {
            nodes,
            vcpus_per_node,
            price_per_hour,
        };
        c.validate()?;
        Ok(c)
    }

    /// Twelve 8-vCPU workers at $4.12/hr on demand.
    pub fn reference() -> Self {
        Self {
            nodes: 12,
            vcpus_per_node: 8,
            price_per_hour: 4.12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.vcpus_per_node == 0 {
            return Err(AllocError::InvalidCluster(
                "nodes and vcpus_per_node must be at least 1".into(),
            ));
        }
        if !(self.price_per_hour >= 0.0 && self.price_per_hour.is_finite()) {
            return Err(AllocError::InvalidCluster("price must be non-negative".into()));
        }
        Ok(())
    }

    pub fn total_vcpus(&self) -> u64 {
        u64::from(self.nodes) * u64::from(self.vcpus_per_node)
    }

    pub fn node_capacity_millicpu(&self) -> u64 {
        u64::from(self.vcpus_per_node) * 1000
    }

    pub fn schedulable_millicpu(&self) -> u64 {
        self.total_vcpus() * 1000
    }
}

/// Namespace `ResourceQuota` on CPU requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaSpec {
    max_millicpu: u64,
}

impl QuotaSpec {
    pub fn new(max_millicpu: u64) -> Result<Self> {
        if max_millicpu == 0 {
            return Err(AllocError::InvalidQuota);
        }
        Ok(Self { max_millicpu })
    }

    pub fn max_millicpu(&self) -> u64 {
        self.max_millicpu
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationPlan {
    /// Request of rank `i` at index `i`.
    pub per_rank_millicpu: Vec<u32>,
    pub budget_millicpu: u64,
}

impl AllocationPlan {
    pub fn qos(&self) -> &'static str {
        QOS_TAG
    }

    pub fn total_millicpu(&self) -> u64 {
        self.per_rank_millicpu.iter().map(|&r| u64::from(r)).sum()
    }

    pub fn n_ranks(&self) -> usize {
        self.per_rank_millicpu.len()
    }

    /// 1000 m per rank; the budget is the plan total.
    pub fn equal(n_ranks: usize) -> Self {
        Self {
            per_rank_millicpu: vec![EQUAL_REQUEST_MILLICPU; n_ranks],
            budget_millicpu: n_ranks as u64 * u64::from(EQUAL_REQUEST_MILLICPU),
        }
    }

    pub fn as_map(&self) -> BTreeMap<u32, u32> {
        self.per_rank_millicpu
            .iter()
            .enumerate()
            .map(|(r, &m)| (r as u32, m))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,cpu_request_millicpu\n");
        for (r, m) in self.per_rank_millicpu.iter().enumerate() {
            out.push_str(&format!("{r},{m}\n"));
        }
        out
    }
}

/// Splits `budget` in proportion to `shares`, flooring each request.
///
/// Ranks whose share would fall under the 10 m floor are pinned at the
/// floor and the remaining budget is re-split among the others, so the
/// plan total never exceeds the budget.
pub fn plan_from_shares(shares: &[f64], budget_millicpu: u64) -> Result<AllocationPlan> {
    let n = shares.len();
    if n == 0 {
        return Err(AllocError::NoRanks);
    }
    if budget_millicpu < n as u64 * u64::from(MIN_REQUEST_MILLICPU) {
        return Err(AllocError::BudgetTooSmall {
            budget: budget_millicpu,
            ranks: n,
            floor: MIN_REQUEST_MILLICPU,
        });
    }
    if shares.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || shares.iter().sum::<f64>() <= 0.0 {
        return Err(AllocError::InvalidShares);
    }

    let floor = f64::from(MIN_REQUEST_MILLICPU);
    let mut pinned = vec![false; n];
    let (free_budget, free_weight) = loop {
        let n_pinned = pinned.iter().filter(|&&p| p).count() as f64;
        let free_budget = budget_millicpu as f64 - floor * n_pinned;
        let free_weight: f64 = (0..n).filter(|&i| !pinned[i]).map(|i| shares[i]).sum();
        let mut changed = false;
        for i in 0..n {
            if !pinned[i] && (free_weight <= 0.0 || free_budget * shares[i] / free_weight < floor) {
                pinned[i] = true;
                changed = true;
            }
        }
        if !changed {
            break (free_budget, free_weight);
        }
    };

    let per_rank_millicpu = (0..n)
        .map(|i| {
            if pinned[i] {
                MIN_REQUEST_MILLICPU
            } else {
                // The epsilon absorbs representation error on exact quotients.
                (free_budget * shares[i] / free_weight + 1e-9).floor() as u32
            }
        })
        .collect();
    Ok(AllocationPlan {
        per_rank_millicpu,
        budget_millicpu,
    })
}

/// `r_i = floor(B * w_i / Σw)` from decomposition weights.
pub fn proportional_requests(weights: &WeightVector, budget_millicpu: u64) -> Result<AllocationPlan> {
    let shares: Vec<f64> = weights.as_slice().iter().map(|&w| f64::from(w)).collect();
    plan_from_shares(&shares, budget_millicpu)
}

/// `r_i = floor(B * d_i / Σd)` from measured steady-state duties.
pub fn duty_proportional_requests(
    duties: &BTreeMap<u32, f64>,
    budget_millicpu: u64,
) -> Result<AllocationPlan> {
    // Ranks are expected to be 0..n; the plan is indexed by position.
    let shares: Vec<f64> = duties.values().copied().collect();
    plan_from_shares(&shares, budget_millicpu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub total_millicpu: u64,
    pub fraction_of_cluster: f64,
    pub fits: bool,
}

pub fn aggregate_check(
    plans: &[AllocationPlan],
    cluster: &ClusterSpec,
    quota: Option<&QuotaSpec>,
) -> AggregateReport {
    let total_millicpu: u64 = plans.iter().map(AllocationPlan::total_millicpu).sum();
    let capacity = cluster.schedulable_millicpu();
    let limit = quota.map_or(capacity, |q| q.max_millicpu.min(capacity));
    AggregateReport {
        total_millicpu,
        fraction_of_cluster: total_millicpu as f64 / capacity as f64,
        fits: total_millicpu <= limit,
    }
}

/// Probability that at least two of `pods` co-resident pods, each computing
/// a fraction `duty` of the time, compute at the same instant.
///
/// `pods` may be fractional (a mean pods-per-node figure).
pub fn overlap_probability(pods: f64, duty: f64) -> Result<f64> {
    if !(pods >= 0.0 && pods.is_finite()) {
        return Err(AllocError::Domain {
            name: "pods",
            value: pods,
        });
    }
    if !(0.0..=1.0).contains(&duty) {
        return Err(AllocError::Domain {
            name: "duty",
            value: duty,
        });
    }
    // At most one pod can be computing; the closed form is <= 0 here and
    // only rounding could make it positive.
    if pods <= 1.0 || duty == 0.0 {
        return Ok(0.0);
    }
    let idle = 1.0 - duty;
    let p = 1.0 - idle.powf(pods) - pods * duty * idle.powf(pods - 1.0);
    Ok(p.clamp(0.0, 1.0))
}
