//! Synthetic coverage maps: LoS field plus correlated log-normal shadowing and
//! optional rectangular blockages.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CoverageMap, MapError, RSRP_MAX_DBM, RSRP_MIN_DBM};
use crate::channel::{default_beams, los_rsrp, BeamPattern, ChannelModel, Position3D};

/// Axis-aligned region with additional loss applied to every beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockageRect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub extra_loss_db: f64,
}

impl BlockageRect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub channel: ChannelModel,
    pub beams: Vec<BeamPattern>,
    pub bs_position: Position3D,
    pub origin: (f64, f64),
    /// (width, height) in meters.
    pub area: (f64, f64),
    pub resolution: f64,
    pub altitude: f64,
    pub seed: u64,
    pub blockage: Vec<BlockageRect>,
}

impl SynthesisConfig {
    /// The measurement campaign: 634 x 301 m at 1 m, 98 m above the BS,
    /// seven beams. The BS sits below the middle of the southern edge.
    pub fn campaign() -> Self {
        Self::scaled_campaign(634.0, 301.0)
    }

    /// Campaign geometry over a `width` x `height` area; the BS stays centred
    /// 20 m south of the area.
    pub fn scaled_campaign(width: f64, height: f64) -> Self {
        Self {
            channel: ChannelModel::default(),
            beams: default_beams(),
            bs_position: Position3D { x: width / 2.0, y: -20.0, z: 0.0 },
            origin: (0.0, 0.0),
            area: (width, height),
            resolution: 1.0,
            altitude: 98.0,
            seed: 0,
            blockage: Vec::new(),
        }
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        // tolerate widths that are a multiple of the resolution up to rounding
        let n = |len: f64| ((len / self.resolution) + 1e-9).floor() as usize + 1;
        (n(self.area.0), n(self.area.1))
    }

    pub fn validate(&self) -> Result<(), MapError> {
        let bad = |m: String| Err(MapError::Invalid(m));
        self.channel.validate()?;
        self.bs_position.validate()?;
        for b in &self.beams {
            b.validate()?;
        }
        if self.beams.is_empty() {
            return bad("at least one beam is required".into());
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return bad(format!("resolution must be > 0, got {}", self.resolution));
        }
        if !(self.area.0 >= 2.0 * self.resolution && self.area.1 >= 2.0 * self.resolution) {
            return bad(format!(
                "area {:?} must span at least two cells of {} m",
                self.area, self.resolution
            ));
        }
        if !(self.altitude > 0.0 && self.altitude.is_finite()) {
            return bad(format!("altitude must be > 0, got {}", self.altitude));
        }
        if let Some(r) = self.blockage.iter().find(|r| !(r.extra_loss_db >= 0.0)) {
            return bad(format!("blockage loss must be >= 0, got {}", r.extra_loss_db));
        }
        Ok(())
    }
}

/// Zero-mean Gaussian field on an `nx` x `ny` grid with standard deviation
/// `sigma` and autocorrelation `exp(-(|dx| + |dy|) / corr_len)`.
///
/// The field is a separable first-order autoregression run along rows, then
/// along columns, driven by white noise drawn from `ChaCha8Rng(seed)` on
/// stream `stream`. Output is independent of the thread count.
pub fn shadowing_field(
    nx: usize,
    ny: usize,
    resolution: f64,
    sigma: f64,
    corr_len: f64,
    seed: u64,
    stream: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut field: Vec<f64> = (0..nx * ny).map(|_| StandardNormal.sample(&mut rng)).collect();
    if sigma == 0.0 {
        return vec![0.0; nx * ny];
    }
    let rho = (-resolution / corr_len).exp();
    let innov = (1.0 - rho * rho).sqrt();
    for row in field.chunks_mut(nx) {
        for ix in 1..nx {
            row[ix] = rho * row[ix - 1] + innov * row[ix];
        }
    }
    for iy in 1..ny {
        for ix in 0..nx {
            field[iy * nx + ix] = rho * field[(iy - 1) * nx + ix] + innov * field[iy * nx + ix];
        }
    }
    field.iter_mut().for_each(|v| *v *= sigma);
    field
}

/// Generates a coverage map. Values are clamped into the storable RSRP range.
pub fn synthesize(cfg: &SynthesisConfig) -> Result<CoverageMap, MapError> {
    cfg.validate()?;
    let (nx, ny) = cfg.grid_dims();
    let ch = &cfg.channel;
    let per_beam: Vec<Vec<f64>> = cfg
        .beams
        .par_iter()
        .enumerate()
        .map(|(b, pattern)| -> Result<Vec<f64>, MapError> {
            let shadow = shadowing_field(
                nx,
                ny,
                cfg.resolution,
                ch.shadowing_sigma_db,
                ch.shadowing_corr_len_m,
                cfg.seed,
                b as u64,
            );
            let mut out = Vec::with_capacity(nx * ny);
            for iy in 0..ny {
                for ix in 0..nx {
                    let x = cfg.origin.0 + ix as f64 * cfg.resolution;
                    let y = cfg.origin.1 + iy as f64 * cfg.resolution;
                    let p = Position3D { x, y, z: cfg.altitude };
                    let mut v = los_rsrp(ch, pattern, &cfg.bs_position, &p)?;
                    if ch.shadowing_sigma_db > 0.0 {
                        v += shadow[iy * nx + ix];
                    }
                    for r in cfg.blockage.iter().filter(|r| r.contains(x, y)) {
                        v -= r.extra_loss_db;
                    }
                    out.push(v.clamp(RSRP_MIN_DBM, RSRP_MAX_DBM));
                }
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    let values = per_beam.into_iter().flatten().collect();
    CoverageMap::from_values(cfg.origin, cfg.resolution, nx, ny, cfg.altitude, cfg.beams.len(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(sigma: f64) -> SynthesisConfig {
        let mut cfg = SynthesisConfig::scaled_campaign(60.0, 40.0);
        cfg.channel.shadowing_sigma_db = sigma;
        cfg.seed = 7;
        cfg
    }

    #[test]
    fn campaign_grid_dimensions() {
        let cfg = SynthesisConfig::campaign();
        assert_eq!(cfg.grid_dims(), (635, 302));
        assert_eq!(cfg.beams.len(), 7);
        assert_eq!(cfg.altitude, 98.0);
    }

    #[test]
    fn zero_sigma_matches_closed_form() {
        let cfg = small(0.0);
        let m = synthesize(&cfg).unwrap();
        for (b, pattern) in cfg.beams.iter().enumerate() {
            for iy in 0..m.ny {
                for ix in 0..m.nx {
                    let (x, y) = m.node_position(ix, iy);
                    let p = Position3D { x, y, z: cfg.altitude };
                    let want = los_rsrp(&cfg.channel, pattern, &cfg.bs_position, &p).unwrap();
                    assert!((m.node(b, ix, iy) - want).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_map() {
        let a = synthesize(&small(8.0)).unwrap();
        let b = synthesize(&small(8.0)).unwrap();
        assert_eq!(a.values(), b.values());
        let mut other = small(8.0);
        other.seed = 8;
        assert_ne!(a.values(), synthesize(&other).unwrap().values());
    }

    #[test]
    fn blockage_subtracts_loss() {
        let mut cfg = small(0.0);
        let clear = synthesize(&cfg).unwrap();
        cfg.blockage.push(BlockageRect { x_min: 10.0, x_max: 20.0, y_min: 5.0, y_max: 15.0, extra_loss_db: 12.0 });
        let blocked = synthesize(&cfg).unwrap();
        for b in 0..7 {
            assert!((clear.node(b, 15, 10) - blocked.node(b, 15, 10) - 12.0).abs() < 1e-9);
            assert_eq!(clear.node(b, 30, 30), blocked.node(b, 30, 30));
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = small(6.0);
        cfg.beams.clear();
        assert!(synthesize(&cfg).is_err());
        let mut cfg = small(6.0);
        cfg.area = (1.0, 40.0);
        assert!(synthesize(&cfg).is_err());
        let mut cfg = small(6.0);
        cfg.blockage.push(BlockageRect { x_min: 0.0, x_max: 1.0, y_min: 0.0, y_max: 1.0, extra_loss_db: -1.0 });
        assert!(synthesize(&cfg).is_err());
    }

    #[test]
    fn shadowing_statistics() {
        // 400x400 field, corr length 10 cells: variance ~ sigma^2, lag-10
        // correlation along x ~ e^-1.
        let (n, sigma, l) = (400, 6.0, 10.0);
        let f = shadowing_field(n, n, 1.0, sigma, l, 3, 0);
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        let var = f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f.len() as f64;
        assert!(mean.abs() < 0.6, "mean {mean}");
        assert!((var.sqrt() - sigma).abs() < 0.6, "std {}", var.sqrt());
        let mut c = 0.0;
        let mut cnt = 0.0;
        for iy in 0..n {
            for ix in 0..n - 10 {
                c += (f[iy * n + ix] - mean) * (f[iy * n + ix + 10] - mean);
                cnt += 1.0;
            }
        }
        let corr = c / cnt / var;
        assert!((corr - (-1.0f64).exp()).abs() < 0.08, "corr {corr}");
    }
}
