//! Parametric line-of-sight channel, synthetic beam patterns and rate formulas.
//!
//! Angles follow a compass convention: azimuth is measured in degrees clockwise
//! from the +y axis, elevation in degrees above the horizontal plane of the
//! transmitter. Powers are carried in dBm, gains in dBi.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Attenuation (dB) of the Gaussian main lobe at half its 3 dB width is 3 dB,
/// which fixes the quadratic coefficient to 12.
const LOBE_COEFF: f64 = 12.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    /// Altitude above ground.
    pub z: f64,
}

impl Position3D {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, ChannelError> {
        let p = Self { x, y, z };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite()) {
            return Err(ChannelError::Invalid {
                what: "position",
                why: format!("non-finite coordinate in {self:?}"),
            });
        }
        if self.z < 0.0 {
            return Err(ChannelError::Invalid {
                what: "position",
                why: format!("negative altitude {}", self.z),
            });
        }
        Ok(())
    }

    pub fn distance(&self, other: &Position3D) -> f64 {
        let (dx, dy, dz) = (other.x - self.x, other.y - self.y, other.z - self.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Large-scale propagation parameters shared by map synthesis and the LoS benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    /// Noise power integrated over `bandwidth_hz`.
    pub noise_power_dbm: f64,
    pub tx_power_per_beam_dbm: f64,
    pub pathloss_exponent: f64,
    pub ref_pathloss_1m_db: f64,
    pub shadowing_sigma_db: f64,
    pub shadowing_corr_len_m: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        let carrier_freq_hz = 4.9e9;
        Self {
            carrier_freq_hz,
            bandwidth_hz: 100e6,
            noise_power_dbm: -94.0,
            tx_power_per_beam_dbm: 43.0,
            pathloss_exponent: 2.0,
            ref_pathloss_1m_db: fspl(1.0, carrier_freq_hz).expect("positive constants"),
            shadowing_sigma_db: 6.0,
            shadowing_corr_len_m: 25.0,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |why: String| Err(ChannelError::Invalid { what: "channel model", why });
        let all_finite = [
            self.carrier_freq_hz,
            self.bandwidth_hz,
            self.noise_power_dbm,
            self.tx_power_per_beam_dbm,
            self.pathloss_exponent,
            self.ref_pathloss_1m_db,
            self.shadowing_sigma_db,
            self.shadowing_corr_len_m,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return bad("non-finite parameter".into());
        }
        if self.carrier_freq_hz <= 0.0 {
            return bad(format!("carrier_freq must be > 0, got {}", self.carrier_freq_hz));
        }
        if self.bandwidth_hz <= 0.0 {
            return bad(format!("bandwidth must be > 0, got {}", self.bandwidth_hz));
        }
        if !(1.5..=6.0).contains(&self.pathloss_exponent) {
            return bad(format!(
                "pathloss_exponent must lie in [1.5, 6], got {}",
                self.pathloss_exponent
            ));
        }
        if self.shadowing_sigma_db < 0.0 {
            return bad(format!("shadowing_sigma must be >= 0, got {}", self.shadowing_sigma_db));
        }
        if self.shadowing_corr_len_m <= 0.0 {
            return bad(format!(
                "shadowing_corr_len must be > 0, got {}",
                self.shadowing_corr_len_m
            ));
        }
        Ok(())
    }

    /// Deterministic path loss at 3D distance `d` (no shadowing).
    pub fn pathloss_db(&self, d: f64) -> f64 {
        self.ref_pathloss_1m_db + 10.0 * self.pathloss_exponent * d.log10()
    }

    pub fn noise_mw(&self) -> f64 {
        dbm_to_mw(self.noise_power_dbm)
    }
}

/// One synchronization-signal beam with a clamped Gaussian main lobe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamPattern {
    pub beam_id: usize,
    pub azimuth_center_deg: f64,
    /// Positive values tilt the beam upward.
    pub elevation_center_deg: f64,
    pub azimuth_width_3db_deg: f64,
    pub elevation_width_3db_deg: f64,
    pub peak_gain_dbi: f64,
    /// Sidelobe floor.
    pub floor_gain_dbi: f64,
}

impl BeamPattern {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |why: String| Err(ChannelError::Invalid { what: "beam pattern", why });
        if !(self.azimuth_width_3db_deg > 0.0 && self.elevation_width_3db_deg > 0.0) {
            return bad(format!("beam {}: 3 dB widths must be > 0", self.beam_id));
        }
        if !(self.peak_gain_dbi > self.floor_gain_dbi) {
            return bad(format!("beam {}: peak gain must exceed floor gain", self.beam_id));
        }
        if !(self.azimuth_center_deg.is_finite() && self.elevation_center_deg.is_finite()) {
            return bad(format!("beam {}: non-finite pointing angle", self.beam_id));
        }
        Ok(())
    }
}

/// Geometry knobs for the default fan of beams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamLayout {
    pub count: usize,
    pub azimuth_start_deg: f64,
    pub azimuth_step_deg: f64,
    pub elevation_center_deg: f64,
    pub azimuth_width_3db_deg: f64,
    pub elevation_width_3db_deg: f64,
    pub peak_gain_dbi: f64,
    pub floor_gain_dbi: f64,
}

impl Default for BeamLayout {
    /// Seven beams from -45 to +45 degrees in 15 degree steps, 20 degree uptilt.
    fn default() -> Self {
        Self {
            count: 7,
            azimuth_start_deg: -45.0,
            azimuth_step_deg: 15.0,
            elevation_center_deg: 20.0,
            azimuth_width_3db_deg: 15.0,
            elevation_width_3db_deg: 30.0,
            peak_gain_dbi: 17.0,
            floor_gain_dbi: -13.0,
        }
    }
}

impl BeamLayout {
    pub fn patterns(&self) -> Vec<BeamPattern> {
        (0..self.count)
            .map(|i| BeamPattern {
                beam_id: i,
                azimuth_center_deg: self.azimuth_start_deg + self.azimuth_step_deg * i as f64,
                elevation_center_deg: self.elevation_center_deg,
                azimuth_width_3db_deg: self.azimuth_width_3db_deg,
                elevation_width_3db_deg: self.elevation_width_3db_deg,
                peak_gain_dbi: self.peak_gain_dbi,
                floor_gain_dbi: self.floor_gain_dbi,
            })
            .collect()
    }
}

pub fn default_beams() -> Vec<BeamPattern> {
    BeamLayout::default().patterns()
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Free-space path loss in dB.
pub fn fspl(d: f64, f: f64) -> Result<f64, ChannelError> {
    if !(d > 0.0) || !(f > 0.0) {
        return Err(ChannelError::Domain(format!(
            "fspl needs positive distance and frequency, got d={d}, f={f}"
        )));
    }
    Ok(20.0 * (4.0 * std::f64::consts::PI * d * f / SPEED_OF_LIGHT).log10())
}

/// Wraps an angle difference into [-180, 180].
pub fn wrap_deg(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 && a > 0.0 {
        180.0
    } else {
        w
    }
}

/// Azimuth and elevation (degrees) of `p` as seen from `from`.
pub fn direction(from: &Position3D, p: &Position3D) -> (f64, f64) {
    let (dx, dy, dz) = (p.x - from.x, p.y - from.y, p.z - from.z);
    let rho = (dx * dx + dy * dy).sqrt();
    (dx.atan2(dy).to_degrees(), dz.atan2(rho).to_degrees())
}

pub fn beam_gain(pattern: &BeamPattern, azimuth_deg: f64, elevation_deg: f64) -> f64 {
    let daz = wrap_deg(azimuth_deg - pattern.azimuth_center_deg) / pattern.azimuth_width_3db_deg;
    let del = wrap_deg(elevation_deg - pattern.elevation_center_deg) / pattern.elevation_width_3db_deg;
    let g = pattern.peak_gain_dbi - LOBE_COEFF * (daz * daz + del * del);
    g.max(pattern.floor_gain_dbi)
}

/// Deterministic LoS received power of one beam at `p`.
pub fn los_rsrp(
    model: &ChannelModel,
    pattern: &BeamPattern,
    bs: &Position3D,
    p: &Position3D,
) -> Result<f64, ChannelError> {
    let d = bs.distance(p);
    if !(d > 0.0) {
        return Err(ChannelError::Domain(
            "receiver coincides with the base station".into(),
        ));
    }
    let (az, el) = direction(bs, p);
    Ok(model.tx_power_per_beam_dbm + beam_gain(pattern, az, el) - model.pathloss_db(d))
}

/// `los_rsrp` together with its horizontal gradient (dB per meter).
///
/// The gradient is taken with respect to the receiver's x and y at fixed
/// altitude. On the sidelobe floor the gain term contributes nothing.
pub fn los_rsrp_with_gradient(
    model: &ChannelModel,
    pattern: &BeamPattern,
    bs: &Position3D,
    p: &Position3D,
) -> Result<(f64, [f64; 2]), ChannelError> {
    let value = los_rsrp(model, pattern, bs, p)?;
    let (dx, dy, dz) = (p.x - bs.x, p.y - bs.y, p.z - bs.z);
    let rho2 = dx * dx + dy * dy;
    let d2 = rho2 + dz * dz;

    // path loss: -10 a log10(d)
    let pl_coeff = -10.0 * model.pathloss_exponent / std::f64::consts::LN_10 / d2;
    let mut grad = [pl_coeff * dx, pl_coeff * dy];

    let (az, el) = direction(bs, p);
    let daz = wrap_deg(az - pattern.azimuth_center_deg);
    let del = wrap_deg(el - pattern.elevation_center_deg);
    let waz = pattern.azimuth_width_3db_deg;
    let wel = pattern.elevation_width_3db_deg;
    let g = pattern.peak_gain_dbi - LOBE_COEFF * ((daz / waz).powi(2) + (del / wel).powi(2));
    if g > pattern.floor_gain_dbi && rho2 > 1e-18 {
        let deg = 180.0 / std::f64::consts::PI;
        let dg_daz = -2.0 * LOBE_COEFF * daz / (waz * waz);
        let dg_del = -2.0 * LOBE_COEFF * del / (wel * wel);
        // az = atan2(dx, dy), el = atan2(dz, rho)
        let daz_dx = deg * dy / rho2;
        let daz_dy = -deg * dx / rho2;
        let rho = rho2.sqrt();
        let del_drho = -deg * dz / d2;
        grad[0] += dg_daz * daz_dx + dg_del * del_drho * dx / rho;
        grad[1] += dg_daz * daz_dy + dg_del * del_drho * dy / rho;
    }
    Ok((value, grad))
}

/// Shannon rate in bits/s.
pub fn rate_from_sinr(sinr: f64, bandwidth_share_hz: f64) -> Result<f64, ChannelError> {
    if !(sinr >= 0.0) || !(bandwidth_share_hz >= 0.0) {
        return Err(ChannelError::Domain(format!(
            "rate needs non-negative sinr and bandwidth, got sinr={sinr}, W={bandwidth_share_hz}"
        )));
    }
    Ok(bandwidth_share_hz * (1.0 + sinr).log2())
}
