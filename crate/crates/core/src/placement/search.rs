//! Environment-aware placement computed directly on a coverage map.
//!
//! Multi-start pattern search over map nodes. Starts are a greedy build on
//! the single-UAV rate field, a greedy build on the best-beam RSRP field, and
//! `restarts` seeded random feasible placements. Each start is refined by
//! per-UAV coordinate moves of `stride`, halving down to one grid cell.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    check_area_on_map, dist, evaluate_on_map, lex_less, nodes_in_area, rates_from_links, Method, PlacementError,
    PlacementProblem, PlacementSolution, FEASIBILITY_TOL,
};
use crate::coverage_map::{BeamLink, CoverageMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub restarts: usize,
    pub seed: u64,
    /// Initial pattern-search step (meters).
    pub stride_m: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { restarts: 8, seed: 0, stride_m: 16.0 }
    }
}

/// Serving links of every map node inside the placement area.
pub(crate) struct NodeField {
    pub x0: usize,
    pub y0: usize,
    pub nx: usize,
    pub ny: usize,
    pub links: Vec<Option<BeamLink>>,
    pub best_rsrp: Vec<f64>,
}

impl NodeField {
    pub fn build(problem: &PlacementProblem, map: &CoverageMap) -> Result<Self, PlacementError> {
        check_area_on_map(&problem.area, map)?;
        let (xs, ys) = nodes_in_area(map, &problem.area)
            .ok_or_else(|| PlacementError::Invalid("placement area holds no map node".into()))?;
        let (x0, y0) = (*xs.start(), *ys.start());
        let (nx, ny) = (xs.end() - x0 + 1, ys.end() - y0 + 1);
        let noise = problem.channel.noise_power_dbm;
        let cells: Vec<(Option<BeamLink>, f64)> = (0..nx * ny)
            .into_par_iter()
            .map(|i| {
                let (ix, iy) = (x0 + i / ny, y0 + i % ny);
                let (x, y) = map.node_position(ix, iy);
                let link = map.sinr_at(x, y, noise).ok();
                let rsrp = link.map_or(f64::NEG_INFINITY, |l| map.node(l.beam, ix, iy));
                (link, rsrp)
            })
            .collect();
        let (links, best_rsrp) = cells.into_iter().unzip();
        Ok(Self { x0, y0, nx, ny, links, best_rsrp })
    }

    /// Cells are numbered x-major so that index order is lexicographic
    /// position order.
    pub fn index(&self, gx: usize, gy: usize) -> usize {
        gx * self.ny + gy
    }

    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i / self.ny, i % self.ny)
    }

    pub fn position(&self, map: &CoverageMap, i: usize) -> (f64, f64) {
        let (gx, gy) = self.coords(i);
        map.node_position(self.x0 + gx, self.y0 + gy)
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }
}

struct Evaluator<'a> {
    problem: &'a PlacementProblem,
    map: &'a CoverageMap,
    field: &'a NodeField,
}

impl Evaluator<'_> {
    fn score(&self, cells: &[usize]) -> Option<f64> {
        let links: Option<Vec<BeamLink>> = cells.iter().map(|&c| self.field.links[c]).collect();
        Some(rates_from_links(&links?, self.problem.channel.bandwidth_hz).1)
    }

    fn pos(&self, c: usize) -> (f64, f64) {
        self.field.position(self.map, c)
    }

    fn compatible(&self, cell: usize, others: impl Iterator<Item = usize>) -> bool {
        let p = self.pos(cell);
        let min = self.problem.min_separation - FEASIBILITY_TOL;
        others.into_iter().all(|o| dist(p, self.pos(o)) >= min)
    }

    /// Adds UAVs one at a time, each at the cell maximizing `key`.
    fn greedy(&self, key: impl Fn(&[usize], usize) -> Option<f64>) -> Option<Vec<usize>> {
        let mut placed: Vec<usize> = Vec::new();
        for _ in 0..self.problem.uav_count {
            let mut best: Option<(usize, f64)> = None;
            for c in 0..self.field.len() {
                if self.field.links[c].is_none() || !self.compatible(c, placed.iter().copied()) {
                    continue;
                }
                if let Some(v) = key(&placed, c) {
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((c, v));
                    }
                }
            }
            placed.push(best?.0);
        }
        Some(placed)
    }

    fn greedy_rate(&self) -> Option<Vec<usize>> {
        self.greedy(|placed, c| {
            let mut cells = placed.to_vec();
            cells.push(c);
            self.score(&cells)
        })
    }

    fn greedy_rsrp(&self) -> Option<Vec<usize>> {
        self.greedy(|_, c| Some(self.field.best_rsrp[c]))
    }

    fn random(&self, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
        let mut placed = Vec::new();
        let mut attempts = 0;
        while placed.len() < self.problem.uav_count {
            attempts += 1;
            if attempts > 1000 * self.problem.uav_count {
                return None;
            }
            let c = rng.random_range(0..self.field.len());
            if self.field.links[c].is_some() && self.compatible(c, placed.iter().copied()) {
                placed.push(c);
            }
        }
        Some(placed)
    }

    /// Coordinate pattern search; returns the refined cells, their score, the
    /// number of sweeps and the score after each sweep.
    fn refine(&self, mut cells: Vec<usize>, stride_cells: usize) -> (Vec<usize>, f64, usize, Vec<f64>) {
        let mut score = self.score(&cells).expect("starts use valid cells");
        let mut trace = vec![score];
        let mut step = stride_cells.max(1);
        let mut sweeps = 0;
        loop {
            sweeps += 1;
            let mut improved = false;
            for u in 0..cells.len() {
                let (gx, gy) = self.field.coords(cells[u]);
                let mut best: Option<(usize, f64)> = None;
                for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
                    let nx = gx as i64 + dx * step as i64;
                    let ny = gy as i64 + dy * step as i64;
                    if nx < 0 || ny < 0 || nx >= self.field.nx as i64 || ny >= self.field.ny as i64 {
                        continue;
                    }
                    let c = self.field.index(nx as usize, ny as usize);
                    if self.field.links[c].is_none()
                        || !self.compatible(c, cells.iter().enumerate().filter(|(v, _)| *v != u).map(|(_, &o)| o))
                    {
                        continue;
                    }
                    let mut trial = cells.clone();
                    trial[u] = c;
                    let Some(s) = self.score(&trial) else { continue };
                    if s > best.map_or(score, |(_, b)| b) {
                        best = Some((c, s));
                    }
                }
                if let Some((c, s)) = best {
                    cells[u] = c;
                    score = s;
                    improved = true;
                }
            }
            trace.push(score);
            if !improved {
                if step == 1 {
                    break;
                }
                step /= 2;
            }
        }
        (cells, score, sweeps, trace)
    }
}

/// Positions, score, sweeps and trace of the best refinement so far.
type Best = (Vec<(f64, f64)>, f64, usize, Vec<f64>);

pub fn map_search_placement(
    problem: &PlacementProblem,
    map: &CoverageMap,
    cfg: &SearchConfig,
) -> Result<PlacementSolution, PlacementError> {
    problem.validate()?;
    if !(cfg.stride_m > 0.0) {
        return Err(PlacementError::Invalid(format!("stride must be > 0, got {}", cfg.stride_m)));
    }
    let field = NodeField::build(problem, map)?;
    let ev = Evaluator { problem, map, field: &field };

    let mut starts: Vec<Vec<usize>> = Vec::new();
    starts.extend(ev.greedy_rate());
    starts.extend(ev.greedy_rsrp());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.restarts {
        starts.extend(ev.random(&mut rng));
    }
    if starts.is_empty() {
        return Err(PlacementError::Invalid(
            "no feasible placement of the requested UAVs on map nodes".into(),
        ));
    }

    let stride_cells = (cfg.stride_m / map.resolution).round().max(1.0) as usize;
    let results: Vec<_> = starts.into_par_iter().map(|s| ev.refine(s, stride_cells)).collect();

    let mut best: Option<Best> = None;
    let mut total_sweeps = 0;
    for (cells, score, sweeps, trace) in results {
        total_sweeps += sweeps;
        let pos: Vec<(f64, f64)> = cells.iter().map(|&c| ev.pos(c)).collect();
        let better = match &best {
            None => true,
            Some((bp, bs, _, _)) => score > *bs || (score == *bs && lex_less(&pos, bp)),
        };
        if better {
            best = Some((pos, score, sweeps, trace));
        }
    }
    let (positions, _, _, trace) = best.expect("at least one start");
    let mut sol = evaluate_on_map(&positions, problem, map, Method::MapSearch)?;
    sol.iterations = total_sweeps;
    sol.objective_trace = trace;
    Ok(sol)
}
