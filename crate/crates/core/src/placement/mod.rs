//! Multi-UAV placement over a multi-beam base station.
//!
//! UAVs are aerial users at a fixed altitude. Each one is served by its
//! strongest beam; leakage from the other beams is interference, and UAVs on
//! the same beam split its bandwidth equally. [`evaluate_on_map`] is the one
//! scoring function every method is judged by.

mod brute;
mod llm;
mod sca;
mod search;

pub use brute::{brute_force_placement, MAX_ENUMERATION};
pub use llm::{llm_placement, LLM_MAX_ATTEMPTS};
pub use sca::{los_greedy_init, sca_los_placement, ScaOptions};
pub use search::{map_search_placement, SearchConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{los_rsrp, rate_from_sinr, BeamPattern, ChannelError, ChannelModel, Position3D};
use crate::coverage_map::{link_from_rsrp, BeamLink, CoverageMap, MapError};
use crate::llm_gateway::GatewayError;

/// Slack allowed on area bounds and pairwise separation.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("invalid placement problem: {0}")]
    Invalid(String),
    #[error("UAV {uav} at ({x}, {y}) lies outside the placement area or map")]
    OutOfExtent { uav: usize, x: f64, y: f64 },
    #[error("UAVs {a} and {b} are {distance:.3} m apart, below the {min_separation} m minimum")]
    SeparationViolation { a: usize, b: usize, distance: f64, min_separation: f64 },
    #[error("expected {expected} positions, got {got}")]
    WrongCount { expected: usize, got: usize },
    #[error("initial placement is infeasible: {0}")]
    InfeasibleInit(String),
    #[error("search space of {count} placements exceeds the limit of {limit}")]
    TooLarge { count: u128, limit: u128 },
    #[error("llm_infeasible: no feasible placement after {attempts} attempts; last problem: {last}")]
    LlmInfeasible { attempts: usize, last: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Axis-aligned placement region (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Area {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min - FEASIBILITY_TOL
            && x <= self.x_max + FEASIBILITY_TOL
            && y >= self.y_min - FEASIBILITY_TOL
            && y <= self.y_max + FEASIBILITY_TOL
    }

    pub fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (x.clamp(self.x_min, self.x_max), y.clamp(self.y_min, self.y_max))
    }

    /// The full extent of a map.
    pub fn of_map(map: &CoverageMap) -> Self {
        let (x_max, y_max) = map.extent_max();
        Self { x_min: map.origin.0, x_max, y_min: map.origin.1, y_max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementProblem {
    pub uav_count: usize,
    pub area: Area,
    pub altitude: f64,
    pub min_separation: f64,
    pub channel: ChannelModel,
    pub beams: Vec<BeamPattern>,
    pub bs_position: Position3D,
}

impl PlacementProblem {
    /// Problem over a map's full extent and altitude, 10 m minimum separation.
    pub fn over_map(
        map: &CoverageMap,
        uav_count: usize,
        channel: ChannelModel,
        beams: Vec<BeamPattern>,
        bs_position: Position3D,
    ) -> Self {
        Self {
            uav_count,
            area: Area::of_map(map),
            altitude: map.altitude,
            min_separation: 10.0,
            channel,
            beams,
            bs_position,
        }
    }

    pub fn validate(&self) -> Result<(), PlacementError> {
        let bad = |m: String| Err(PlacementError::Invalid(m));
        self.channel.validate()?;
        self.bs_position.validate()?;
        for b in &self.beams {
            b.validate()?;
        }
        if self.beams.is_empty() {
            return bad("at least one beam is required".into());
        }
        if self.uav_count < 1 {
            return bad("uav_count must be >= 1".into());
        }
        let a = &self.area;
        if !(a.x_max > a.x_min && a.y_max > a.y_min) || ![a.x_min, a.x_max, a.y_min, a.y_max].iter().all(|v| v.is_finite()) {
            return bad(format!("degenerate area {a:?}"));
        }
        if !(self.altitude > 0.0) {
            return bad(format!("altitude must be > 0, got {}", self.altitude));
        }
        if !(self.min_separation >= 0.0 && self.min_separation.is_finite()) {
            return bad(format!("min_separation must be >= 0, got {}", self.min_separation));
        }
        if self.min_separation > 0.0 {
            let per_axis = |len: f64| (len / self.min_separation).floor() as u128 + 1;
            let capacity = per_axis(a.x_max - a.x_min) * per_axis(a.y_max - a.y_min);
            if capacity < self.uav_count as u128 {
                return bad(format!(
                    "{} UAVs cannot keep {} m apart inside {a:?}",
                    self.uav_count, self.min_separation
                ));
            }
        }
        Ok(())
    }

    /// Area, count and separation checks shared by every method.
    pub fn check_feasible(&self, positions: &[(f64, f64)]) -> Result<(), PlacementError> {
        if positions.len() != self.uav_count {
            return Err(PlacementError::WrongCount { expected: self.uav_count, got: positions.len() });
        }
        for (u, &(x, y)) in positions.iter().enumerate() {
            if !(x.is_finite() && y.is_finite()) || !self.area.contains(x, y) {
                return Err(PlacementError::OutOfExtent { uav: u, x, y });
            }
        }
        for a in 0..positions.len() {
            for b in a + 1..positions.len() {
                let d = dist(positions[a], positions[b]);
                if d < self.min_separation - FEASIBILITY_TOL {
                    return Err(PlacementError::SeparationViolation {
                        a,
                        b,
                        distance: d,
                        min_separation: self.min_separation,
                    });
                }
            }
        }
        Ok(())
    }

    fn position3d(&self, x: f64, y: f64) -> Position3D {
        Position3D { x, y, z: self.altitude }
    }

    /// Serving beam and SINR at `(x, y)` under the deterministic LoS model.
    pub fn los_link(&self, x: f64, y: f64) -> Result<BeamLink, PlacementError> {
        let p = self.position3d(x, y);
        let powers = self
            .beams
            .iter()
            .map(|b| los_rsrp(&self.channel, b, &self.bs_position, &p))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(link_from_rsrp(&powers, self.channel.noise_power_dbm))
    }

    /// Sum rate of `positions` under the LoS model (no feasibility checks).
    pub fn los_sum_rate(&self, positions: &[(f64, f64)]) -> Result<f64, PlacementError> {
        let links = positions
            .iter()
            .map(|&(x, y)| self.los_link(x, y))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(rates_from_links(&links, self.channel.bandwidth_hz).1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    ScaLos,
    MapSearch,
    Llm,
    BruteForce,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::ScaLos => "SCA_LOS",
            Method::MapSearch => "MAP_SEARCH",
            Method::Llm => "LLM",
            Method::BruteForce => "BRUTE_FORCE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementSolution {
    pub method: Method,
    pub positions: Vec<(f64, f64)>,
    pub serving_beam: Vec<usize>,
    pub sinr: Vec<f64>,
    pub per_uav_rate: Vec<f64>,
    pub sum_rate: f64,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub max_iter_reached: bool,
}

impl PlacementSolution {
    fn from_links(method: Method, positions: Vec<(f64, f64)>, links: &[BeamLink], bandwidth: f64) -> Self {
        let (per_uav_rate, sum_rate) = rates_from_links(links, bandwidth);
        Self {
            method,
            positions,
            serving_beam: links.iter().map(|l| l.beam).collect(),
            sinr: links.iter().map(|l| l.sinr).collect(),
            per_uav_rate,
            sum_rate,
            iterations: 0,
            objective_trace: Vec::new(),
            max_iter_reached: false,
        }
    }
}

/// Per-UAV rates and their sum. UAVs sharing a serving beam split its
/// bandwidth equally.
pub fn rates_from_links(links: &[BeamLink], bandwidth: f64) -> (Vec<f64>, f64) {
    let max_beam = links.iter().map(|l| l.beam).max().unwrap_or(0);
    let mut load = vec![0usize; max_beam + 1];
    for l in links {
        load[l.beam] += 1;
    }
    let rates: Vec<f64> = links
        .iter()
        .map(|l| {
            rate_from_sinr(l.sinr, bandwidth / load[l.beam] as f64)
                .expect("sinr and bandwidth are non-negative")
        })
        .collect();
    let sum = rates.iter().sum();
    (rates, sum)
}

/// Ground-truth score of a placement on a coverage map.
pub fn evaluate_on_map(
    positions: &[(f64, f64)],
    problem: &PlacementProblem,
    map: &CoverageMap,
    method: Method,
) -> Result<PlacementSolution, PlacementError> {
    problem.check_feasible(positions)?;
    let links = positions
        .iter()
        .enumerate()
        .map(|(u, &(x, y))| {
            if !map.contains(x, y) {
                return Err(PlacementError::OutOfExtent { uav: u, x, y });
            }
            Ok(map.sinr_at(x, y, problem.channel.noise_power_dbm)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PlacementSolution::from_links(method, positions.to_vec(), &links, problem.channel.bandwidth_hz))
}

pub(crate) fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Lexicographic comparison of position lists, used for tie-breaking.
pub(crate) fn lex_less(a: &[(f64, f64)], b: &[(f64, f64)]) -> bool {
    for (p, q) in a.iter().zip(b) {
        match p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Grid nodes of `map` lying inside `area`, as index ranges.
pub(crate) fn nodes_in_area(map: &CoverageMap, area: &Area) -> Option<(std::ops::RangeInclusive<usize>, std::ops::RangeInclusive<usize>)> {
    let lo = |min: f64, o: f64, n: usize| -> Option<usize> {
        let i = ((min - o) / map.resolution - 1e-9).ceil().max(0.0) as usize;
        (i < n).then_some(i)
    };
    let hi = |max: f64, o: f64, n: usize| -> Option<usize> {
        let f = ((max - o) / map.resolution + 1e-9).floor();
        (f >= 0.0).then(|| (f as usize).min(n - 1))
    };
    let (x0, x1) = (lo(area.x_min, map.origin.0, map.nx)?, hi(area.x_max, map.origin.0, map.nx)?);
    let (y0, y1) = (lo(area.y_min, map.origin.1, map.ny)?, hi(area.y_max, map.origin.1, map.ny)?);
    (x0 <= x1 && y0 <= y1).then_some((x0..=x1, y0..=y1))
}

/// Errors unless the whole area lies inside the map.
pub(crate) fn check_area_on_map(area: &Area, map: &CoverageMap) -> Result<(), PlacementError> {
    for (x, y) in [(area.x_min, area.y_min), (area.x_max, area.y_max)] {
        if !map.contains(x, y) {
            return Err(PlacementError::Invalid(format!(
                "placement area {area:?} is not covered by the map"
            )));
        }
    }
    Ok(())
}
