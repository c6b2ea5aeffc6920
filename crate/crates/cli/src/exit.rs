use std::fmt;

use colocate_core::alloc::AllocError;
use colocate_core::controller::{ControllerError, PipelineAbort};
use colocate_core::sim::SimError;

pub const INPUT: u8 = 2;
pub const CONSTRAINT: u8 = 3;

/// Valid input that breaks a capacity, budget or quota limit.
#[derive(Debug)]
pub struct Constraint(pub String);

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Constraint {}

fn alloc_is_constraint(e: &AllocError) -> bool {
    matches!(e, AllocError::BudgetTooSmall { .. })
}

fn sim_is_constraint(e: &SimError) -> bool {
    matches!(
        e,
        SimError::CapacityExceeded { .. } | SimError::Unschedulable { .. } | SimError::NodeOvercommitted { .. }
    )
}

fn controller_is_constraint(e: &ControllerError) -> bool {
    match e {
        ControllerError::Unschedulable(_) => true,
        ControllerError::Alloc(a) => alloc_is_constraint(a),
        ControllerError::Sim(s) => sim_is_constraint(s),
        _ => false,
    }
}

/// Constraint errors anywhere in the chain win; everything else is input.
pub fn code_for(err: &anyhow::Error) -> u8 {
    let constraint = err.chain().any(|e| {
        e.is::<Constraint>()
            || e.downcast_ref::<AllocError>().is_some_and(alloc_is_constraint)
            || e.downcast_ref::<SimError>().is_some_and(sim_is_constraint)
            || e.downcast_ref::<ControllerError>().is_some_and(controller_is_constraint)
            || e.downcast_ref::<PipelineAbort>().is_some_and(|a| controller_is_constraint(&a.error))
    });
    if constraint {
        CONSTRAINT
    } else {
        INPUT
    }
}
