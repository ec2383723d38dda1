//! Placement proposed by a language model from a map digest, scored on the
//! map like every other method.

use super::{check_area_on_map, evaluate_on_map, Method, PlacementError, PlacementProblem, PlacementSolution};
use crate::coverage_map::CoverageMap;
use crate::llm_gateway::{build_prompt, Gateway};

/// Total number of proposals requested before giving up on infeasible ones.
pub const LLM_MAX_ATTEMPTS: usize = 3;

pub fn llm_placement(
    problem: &PlacementProblem,
    map: &CoverageMap,
    gateway: &mut Gateway,
) -> Result<PlacementSolution, PlacementError> {
    problem.validate()?;
    check_area_on_map(&problem.area, map)?;
    let prompt = build_prompt(problem, map, gateway.config().digest_stride_m)?;
    let mut last = String::new();
    for attempt in 1..=LLM_MAX_ATTEMPTS {
        let positions = gateway.request_placement(&prompt)?;
        let scored = problem
            .check_feasible(&positions)
            .and_then(|_| evaluate_on_map(&positions, problem, map, Method::Llm));
        match scored {
            Ok(mut sol) => {
                sol.iterations = attempt;
                sol.objective_trace = vec![sol.sum_rate];
                return Ok(sol);
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(PlacementError::LlmInfeasible { attempts: LLM_MAX_ATTEMPTS, last })
}
