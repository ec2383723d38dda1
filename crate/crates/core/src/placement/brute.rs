//! Exhaustive placement oracle over a stride-subsampled node grid.

use rayon::prelude::*;

use super::search::NodeField;
use super::{dist, evaluate_on_map, rates_from_links, Method, PlacementError, PlacementProblem, PlacementSolution, FEASIBILITY_TOL};
use crate::coverage_map::CoverageMap;

/// Largest number of placements enumerated for three or more UAVs.
pub const MAX_ENUMERATION: u128 = 100_000_000;

/// Exact optimum over the nodes of the area sampled every `grid_stride`
/// cells. Ties go to the lexicographically smallest position list.
pub fn brute_force_placement(
    problem: &PlacementProblem,
    map: &CoverageMap,
    grid_stride: usize,
) -> Result<PlacementSolution, PlacementError> {
    problem.validate()?;
    if grid_stride == 0 {
        return Err(PlacementError::Invalid("grid_stride must be >= 1".into()));
    }
    let field = NodeField::build(problem, map)?;
    // candidate cells in x-major (lexicographic) order
    let cells: Vec<usize> = (0..field.nx)
        .step_by(grid_stride)
        .flat_map(|gx| (0..field.ny).step_by(grid_stride).map(move |gy| (gx, gy)))
        .map(|(gx, gy)| field.index(gx, gy))
        .filter(|&c| field.links[c].is_some())
        .collect();
    let k = problem.uav_count;
    if k >= 3 {
        let count = binomial(cells.len() as u128, k as u128);
        if count > MAX_ENUMERATION {
            return Err(PlacementError::TooLarge { count, limit: MAX_ENUMERATION });
        }
    }
    let pos: Vec<(f64, f64)> = cells.iter().map(|&c| field.position(map, c)).collect();
    let links: Vec<_> = cells.iter().map(|&c| field.links[c].expect("filtered")).collect();
    let w = problem.channel.bandwidth_hz;
    let min_sep = problem.min_separation - FEASIBILITY_TOL;

    let best: Option<(f64, Vec<usize>)> = match k {
        1 => (0..cells.len()).fold(None, |best, i| {
            let s = rates_from_links(&[links[i]], w).1;
            pick(best, (s, vec![i]))
        }),
        2 => (0..cells.len())
            .into_par_iter()
            .map(|i| {
                let mut best = None;
                for j in i + 1..cells.len() {
                    if dist(pos[i], pos[j]) < min_sep {
                        continue;
                    }
                    let s = rates_from_links(&[links[i], links[j]], w).1;
                    best = pick(best, (s, vec![i, j]));
                }
                best
            })
            .reduce(|| None, |a, b| match b {
                Some(b) => pick(a, b),
                None => a,
            }),
        _ => {
            let mut best = None;
            let mut chosen = Vec::with_capacity(k);
            enumerate(&pos, &links, k, min_sep, w, 0, &mut chosen, &mut best);
            best
        }
    };
    let (_, idx) = best.ok_or_else(|| {
        PlacementError::Invalid(format!("no feasible placement of {k} UAVs on the stride-{grid_stride} grid"))
    })?;
    let positions: Vec<(f64, f64)> = idx.iter().map(|&i| pos[i]).collect();
    let mut sol = evaluate_on_map(&positions, problem, map, Method::BruteForce)?;
    sol.iterations = 1;
    sol.objective_trace = vec![sol.sum_rate];
    Ok(sol)
}

/// Higher score wins; equal scores go to the smaller index tuple, which is
/// the lexicographically smaller position list.
fn pick(best: Option<(f64, Vec<usize>)>, cand: (f64, Vec<usize>)) -> Option<(f64, Vec<usize>)> {
    match best {
        None => Some(cand),
        Some(b) if cand.0 > b.0 || (cand.0 == b.0 && cand.1 < b.1) => Some(cand),
        keep => keep,
    }
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    pos: &[(f64, f64)],
    links: &[crate::coverage_map::BeamLink],
    k: usize,
    min_sep: f64,
    w: f64,
    from: usize,
    chosen: &mut Vec<usize>,
    best: &mut Option<(f64, Vec<usize>)>,
) {
    if chosen.len() == k {
        let l: Vec<_> = chosen.iter().map(|&i| links[i]).collect();
        let s = rates_from_links(&l, w).1;
        *best = pick(best.take(), (s, chosen.clone()));
        return;
    }
    for i in from..pos.len() {
        if chosen.iter().all(|&c| dist(pos[c], pos[i]) >= min_sep) {
            chosen.push(i);
            enumerate(pos, links, k, min_sep, w, i + 1, chosen, best);
            chosen.pop();
        }
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}
