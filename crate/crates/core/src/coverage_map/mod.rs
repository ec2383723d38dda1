//! Gridded per-beam RSRP fields at a single altitude.
//!
//! A [`CoverageMap`] is the "environment" that every placement method is scored
//! against. Values are stored beam-major, then row (`iy`), then column (`ix`);
//! missing measurements are `NaN`.

mod io;
mod synth;

pub use io::{load_map, parse_map, render_map, save_map, MAP_HEADER};
pub use synth::{shadowing_field, synthesize, BlockageRect, SynthesisConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::dbm_to_mw;

/// Lowest RSRP a map may hold (dBm).
pub const RSRP_MIN_DBM: f64 = -160.0;
/// Highest RSRP a map may hold (dBm).
pub const RSRP_MAX_DBM: f64 = -20.0;

/// Fractional grid coordinates closer than this to a node snap onto it.
const NODE_SNAP: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid map: {0}")]
    Invalid(String),
    #[error("position ({x}, {y}) lies outside the map extent")]
    OutOfExtent { x: f64, y: f64 },
    #[error("beam {beam} out of range (map has {beam_count} beams)")]
    BeamOutOfRange { beam: usize, beam_count: usize },
    #[error("no data for beam {beam} around ({x}, {y})")]
    NoData { beam: usize, x: f64, y: f64 },
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageMap {
    pub origin: (f64, f64),
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    pub altitude: f64,
    pub beam_count: usize,
    rsrp: Vec<f64>,
}

/// Serving beam and linear SINR at one location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamLink {
    pub beam: usize,
    pub sinr: f64,
}

impl CoverageMap {
    /// Builds a map from a beam-major value buffer. `NaN` marks missing cells.
    pub fn from_values(
        origin: (f64, f64),
        resolution: f64,
        nx: usize,
        ny: usize,
        altitude: f64,
        beam_count: usize,
        rsrp: Vec<f64>,
    ) -> Result<Self, MapError> {
        let map = Self { origin, resolution, nx, ny, altitude, beam_count, rsrp };
        map.validate()?;
        Ok(map)
    }

    /// An all-`NaN` map with the given geometry.
    pub fn empty(
        origin: (f64, f64),
        resolution: f64,
        nx: usize,
        ny: usize,
        altitude: f64,
        beam_count: usize,
    ) -> Result<Self, MapError> {
        let len = nx
            .checked_mul(ny)
            .and_then(|n| n.checked_mul(beam_count))
            .ok_or_else(|| MapError::Invalid("grid size overflows".into()))?;
        Self::from_values(origin, resolution, nx, ny, altitude, beam_count, vec![f64::NAN; len])
    }

    pub fn validate(&self) -> Result<(), MapError> {
        validate_geometry(self.origin, self.resolution, self.nx, self.ny, self.altitude, self.beam_count)
            .map_err(MapError::Invalid)?;
        if self.rsrp.len() != self.nx * self.ny * self.beam_count {
            return Err(MapError::Invalid(format!(
                "expected {} values, got {}",
                self.nx * self.ny * self.beam_count,
                self.rsrp.len()
            )));
        }
        if let Some(v) = self.rsrp.iter().find(|v| !v.is_nan() && !rsrp_in_range(**v)) {
            return Err(MapError::Invalid(format!(
                "RSRP {v} outside [{RSRP_MIN_DBM}, {RSRP_MAX_DBM}] dBm"
            )));
        }
        Ok(())
    }

    fn index(&self, beam: usize, ix: usize, iy: usize) -> usize {
        (beam * self.ny + iy) * self.nx + ix
    }

    /// Stored node value; `NaN` when missing.
    pub fn node(&self, beam: usize, ix: usize, iy: usize) -> f64 {
        self.rsrp[self.index(beam, ix, iy)]
    }

    pub fn set_node(&mut self, beam: usize, ix: usize, iy: usize, value: f64) -> Result<(), MapError> {
        if beam >= self.beam_count {
            return Err(MapError::BeamOutOfRange { beam, beam_count: self.beam_count });
        }
        if ix >= self.nx || iy >= self.ny {
            return Err(MapError::Invalid(format!("node ({ix}, {iy}) outside {}x{}", self.nx, self.ny)));
        }
        if !value.is_nan() && !rsrp_in_range(value) {
            return Err(MapError::Invalid(format!("RSRP {value} out of range")));
        }
        let i = self.index(beam, ix, iy);
        self.rsrp[i] = value;
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.rsrp
    }

    pub fn node_position(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin.0 + ix as f64 * self.resolution,
            self.origin.1 + iy as f64 * self.resolution,
        )
    }

    /// Maximum x and y covered by the grid.
    pub fn extent_max(&self) -> (f64, f64) {
        self.node_position(self.nx - 1, self.ny - 1)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.grid_coords(x, y).is_some()
    }

    /// Fractional grid coordinates of `(x, y)`, snapped onto nodes when within
    /// rounding distance. `None` outside the extent.
    fn grid_coords(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let snap = |v: f64, n: usize| -> Option<f64> {
            let r = v.round();
            let v = if (v - r).abs() < NODE_SNAP { r } else { v };
            (v >= 0.0 && v <= (n - 1) as f64).then_some(v)
        };
        let fx = snap((x - self.origin.0) / self.resolution, self.nx)?;
        let fy = snap((y - self.origin.1) / self.resolution, self.ny)?;
        Some((fx, fy))
    }

    /// Nearest node index for a position inside the extent.
    pub fn nearest_node(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (fx, fy) = self.grid_coords(x, y)?;
        Some((fx.round() as usize, fy.round() as usize))
    }

    /// Bilinear interpolation of one beam in the dB domain.
    ///
    /// Only corners with non-zero weight need data, so a node query returns the
    /// stored value even when its neighbours are missing.
    pub fn sample_rsrp(&self, x: f64, y: f64, beam: usize) -> Result<f64, MapError> {
        if beam >= self.beam_count {
            return Err(MapError::BeamOutOfRange { beam, beam_count: self.beam_count });
        }
        let (fx, fy) = self.grid_coords(x, y).ok_or(MapError::OutOfExtent { x, y })?;
        let ix0 = (fx.floor() as usize).min(self.nx - 2);
        let iy0 = (fy.floor() as usize).min(self.ny - 2);
        let tx = fx - ix0 as f64;
        let ty = fy - iy0 as f64;
        let corners = [
            ((1.0 - tx) * (1.0 - ty), ix0, iy0),
            (tx * (1.0 - ty), ix0 + 1, iy0),
            ((1.0 - tx) * ty, ix0, iy0 + 1),
            (tx * ty, ix0 + 1, iy0 + 1),
        ];
        let mut acc = 0.0;
        for (w, ix, iy) in corners {
            if w == 0.0 {
                continue;
            }
            let v = self.node(beam, ix, iy);
            if v.is_nan() {
                return Err(MapError::NoData { beam, x, y });
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Serving beam (strongest, ties to the lowest index) and its SINR against
    /// the other beams plus noise.
    pub fn sinr_at(&self, x: f64, y: f64, noise_power_dbm: f64) -> Result<BeamLink, MapError> {
        let mut powers = Vec::with_capacity(self.beam_count);
        for b in 0..self.beam_count {
            powers.push(self.sample_rsrp(x, y, b)?);
        }
        Ok(link_from_rsrp(&powers, noise_power_dbm))
    }

    /// Per-beam min and max over non-missing nodes.
    pub fn beam_ranges(&self) -> Vec<Option<(f64, f64)>> {
        let cells = self.nx * self.ny;
        (0..self.beam_count)
            .map(|b| {
                self.rsrp[b * cells..(b + 1) * cells]
                    .iter()
                    .filter(|v| !v.is_nan())
                    .fold(None, |acc: Option<(f64, f64)>, &v| match acc {
                        None => Some((v, v)),
                        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
                    })
            })
            .collect()
    }

    /// Adds `offset_db` to every stored value.
    pub fn offset(&self, offset_db: f64) -> Result<Self, MapError> {
        let rsrp = self.rsrp.iter().map(|v| v + offset_db).collect();
        Self::from_values(self.origin, self.resolution, self.nx, self.ny, self.altitude, self.beam_count, rsrp)
    }
}

/// Serving beam and SINR from per-beam received powers in dBm.
pub fn link_from_rsrp(powers_dbm: &[f64], noise_power_dbm: f64) -> BeamLink {
    let mut serving = 0;
    for (b, p) in powers_dbm.iter().enumerate() {
        if *p > powers_dbm[serving] {
            serving = b;
        }
    }
    let interference: f64 = powers_dbm
        .iter()
        .enumerate()
        .filter(|(b, _)| *b != serving)
        .map(|(_, p)| dbm_to_mw(*p))
        .sum();
    BeamLink {
        beam: serving,
        sinr: dbm_to_mw(powers_dbm[serving]) / (interference + dbm_to_mw(noise_power_dbm)),
    }
}

pub(crate) fn rsrp_in_range(v: f64) -> bool {
    (RSRP_MIN_DBM..=RSRP_MAX_DBM).contains(&v)
}

pub(crate) fn validate_geometry(
    origin: (f64, f64),
    resolution: f64,
    nx: usize,
    ny: usize,
    altitude: f64,
    beam_count: usize,
) -> Result<(), String> {
    if !(origin.0.is_finite() && origin.1.is_finite()) {
        return Err("origin must be finite".into());
    }
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(format!("resolution must be > 0, got {resolution}"));
    }
    if nx < 2 || ny < 2 {
        return Err(format!("grid must be at least 2x2, got {nx}x{ny}"));
    }
    if !(altitude > 0.0 && altitude.is_finite()) {
        return Err(format!("altitude must be > 0, got {altitude}"));
    }
    if beam_count < 1 {
        return Err("beam_count must be >= 1".into());
    }
    Ok(())
}
