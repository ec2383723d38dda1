//! Run configuration: one TOML file with a section per module. Every key is
//! optional and falls back to the library default; unknown keys are errors.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use skyplan_core::channel::{fspl, BeamLayout, BeamPattern, ChannelModel, Position3D};
use skyplan_core::coinference::{load_quality_table, InferenceModelProfile, LinkProfile, Mode, QosBudget};
use skyplan_core::coverage_map::{BlockageRect, SynthesisConfig};
use skyplan_core::llm_gateway::{GatewayConfig, Secret, DEFAULT_DIGEST_STRIDE_M};
use skyplan_core::pipeline::Adaptation;
use skyplan_core::placement::{ScaOptions, SearchConfig};

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub map: MapSection,
    pub channel: ChannelSection,
    pub beams: BeamLayout,
    pub placement: PlacementSection,
    pub coinference: CoinferenceSection,
    pub pipeline: PipelineSection,
    pub llm: Option<LlmSection>,
}

/// Synthesis geometry (meters), or an existing map file.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSection {
    /// Map CSV used instead of synthesis by `pipeline`.
    pub path: Option<PathBuf>,
    pub width_m: f64,
    pub height_m: f64,
    pub resolution_m: f64,
    pub altitude_m: f64,
    pub origin_x_m: f64,
    pub origin_y_m: f64,
    /// Base station position; x defaults to the middle of the area.
    pub bs_x_m: Option<f64>,
    pub bs_y_m: f64,
    pub bs_z_m: f64,
    pub blockage: Vec<BlockageRect>,
}

impl Default for MapSection {
    fn default() -> Self {
        let c = SynthesisConfig::campaign();
        Self {
            path: None,
            width_m: c.area.0,
            height_m: c.area.1,
            resolution_m: c.resolution,
            altitude_m: c.altitude,
            origin_x_m: c.origin.0,
            origin_y_m: c.origin.1,
            bs_x_m: None,
            bs_y_m: c.bs_position.y,
            bs_z_m: c.bs_position.z,
            blockage: Vec::new(),
        }
    }
}

/// Channel parameters; the 1 m reference loss defaults to free space at the
/// configured carrier.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_power_dbm: f64,
    pub tx_power_per_beam_dbm: f64,
    pub pathloss_exponent: f64,
    pub ref_pathloss_1m_db: Option<f64>,
    pub shadowing_sigma_db: f64,
    pub shadowing_corr_len_m: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let c = ChannelModel::default();
        Self {
            carrier_freq_hz: c.carrier_freq_hz,
            bandwidth_hz: c.bandwidth_hz,
            noise_power_dbm: c.noise_power_dbm,
            tx_power_per_beam_dbm: c.tx_power_per_beam_dbm,
            pathloss_exponent: c.pathloss_exponent,
            ref_pathloss_1m_db: None,
            shadowing_sigma_db: c.shadowing_sigma_db,
            shadowing_corr_len_m: c.shadowing_corr_len_m,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementSection {
    pub min_separation_m: f64,
    pub sca_tol: f64,
    pub sca_max_iter: usize,
    pub sca_inner_iter: usize,
    pub sca_max_step_m: f64,
    /// Grid spacing of the greedy SCA start (meters).
    pub init_stride_m: f64,
    pub search_restarts: usize,
    pub search_stride_m: f64,
    /// Brute-force subsampling (cells).
    pub brute_stride: usize,
}

impl Default for PlacementSection {
    fn default() -> Self {
        let sca = ScaOptions::default();
        let search = SearchConfig::default();
        Self {
            min_separation_m: 10.0,
            sca_tol: sca.tol,
            sca_max_iter: sca.max_iter,
            sca_inner_iter: sca.inner_iter,
            sca_max_step_m: sca.max_step_m,
            init_stride_m: 10.0,
            search_restarts: search.restarts,
            search_stride_m: search.stride_m,
            brute_stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Quality,
    Delay,
    Energy,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Quality => Mode::MaxQuality,
            ModeArg::Delay => Mode::MinDelay,
            ModeArg::Energy => Mode::MinEnergy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfilePreset {
    Default,
    Bottleneck,
}

/// Model profile, link and budget. Budget entries for the optimized metric
/// are ignored.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoinferenceSection {
    pub mode: ModeArg,
    pub profile: ProfilePreset,
    pub flops_per_layer: Option<Vec<f64>>,
    pub activation_bits: Option<Vec<f64>>,
    pub q_max: Option<f64>,
    pub gamma: Option<f64>,
    /// `rho,quality` CSV replacing the closed-form quality curve.
    pub quality_table: Option<PathBuf>,
    pub rho_max: f64,
    pub bandwidth_hz: f64,
    pub channel_gain: f64,
    pub noise_psd_dbm_hz: f64,
    pub p_min_w: f64,
    pub p_max_w: f64,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub cycles_per_flop: f64,
    pub kappa: f64,
    pub f_cloud_hz: f64,
    pub cloud_cycles_per_flop: f64,
    pub t_max_s: f64,
    pub e_max_j: f64,
    pub q_min: f64,
}

impl Default for CoinferenceSection {
    fn default() -> Self {
        let l = LinkProfile::default();
        let b = QosBudget::default();
        Self {
            mode: ModeArg::Energy,
            profile: ProfilePreset::Default,
            flops_per_layer: None,
            activation_bits: None,
            q_max: None,
            gamma: None,
            quality_table: None,
            rho_max: 0.9,
            bandwidth_hz: l.bandwidth_hz,
            channel_gain: l.channel_gain,
            noise_psd_dbm_hz: l.noise_psd_dbm_hz,
            p_min_w: l.p_min_w,
            p_max_w: l.p_max_w,
            f_min_hz: l.f_min_hz,
            f_max_hz: l.f_max_hz,
            cycles_per_flop: l.cycles_per_flop,
            kappa: l.kappa,
            f_cloud_hz: l.f_cloud_hz,
            cloud_cycles_per_flop: l.cloud_cycles_per_flop,
            t_max_s: b.t_max_s,
            e_max_j: b.e_max_j,
            q_min: b.q_min,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub uavs: usize,
    pub max_rounds: usize,
    pub step_m: f64,
    pub epsilon: f64,
    pub sensing_noise_db: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let a = Adaptation::default();
        Self { uavs: 3, max_rounds: a.max_rounds, step_m: a.step_m, epsilon: a.epsilon, sensing_noise_db: 0.0 }
    }
}

/// Gateway settings. A `mock_script` replays canned replies; otherwise the
/// endpoint is called with the key from the environment.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub endpoint_url: Option<String>,
    pub model_name: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub mock_script: Option<Vec<String>>,
    pub digest_stride_m: f64,
}

impl Default for LlmSection {
    fn default() -> Self {
        let g = GatewayConfig::default();
        Self {
            endpoint_url: None,
            model_name: g.model_name,
            timeout_s: g.timeout.as_secs_f64(),
            max_retries: g.max_retries,
            mock_script: None,
            digest_stride_m: DEFAULT_DIGEST_STRIDE_M,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn channel(&self) -> Result<ChannelModel, CliError> {
        let c = &self.channel;
        let ref_pathloss_1m_db = match c.ref_pathloss_1m_db {
            Some(v) => v,
            None => fspl(1.0, c.carrier_freq_hz).map_err(usage)?,
        };
        let model = ChannelModel {
            carrier_freq_hz: c.carrier_freq_hz,
            bandwidth_hz: c.bandwidth_hz,
            noise_power_dbm: c.noise_power_dbm,
            tx_power_per_beam_dbm: c.tx_power_per_beam_dbm,
            pathloss_exponent: c.pathloss_exponent,
            ref_pathloss_1m_db,
            shadowing_sigma_db: c.shadowing_sigma_db,
            shadowing_corr_len_m: c.shadowing_corr_len_m,
        };
        model.validate().map_err(usage)?;
        Ok(model)
    }

    pub fn beams(&self) -> Vec<BeamPattern> {
        self.beams.patterns()
    }

    pub fn bs_position(&self) -> Position3D {
        let m = &self.map;
        Position3D { x: m.bs_x_m.unwrap_or(m.origin_x_m + m.width_m / 2.0), y: m.bs_y_m, z: m.bs_z_m }
    }

    pub fn synthesis(&self) -> Result<SynthesisConfig, CliError> {
        let m = &self.map;
        let cfg = SynthesisConfig {
            channel: self.channel()?,
            beams: self.beams(),
            bs_position: self.bs_position(),
            origin: (m.origin_x_m, m.origin_y_m),
            area: (m.width_m, m.height_m),
            resolution: m.resolution_m,
            altitude: m.altitude_m,
            seed: self.seed,
            blockage: m.blockage.clone(),
        };
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }

    pub fn sca(&self) -> ScaOptions {
        let p = &self.placement;
        ScaOptions { tol: p.sca_tol, max_iter: p.sca_max_iter, inner_iter: p.sca_inner_iter, max_step_m: p.sca_max_step_m }
    }

    pub fn search(&self) -> SearchConfig {
        let p = &self.placement;
        SearchConfig { restarts: p.search_restarts, seed: self.seed, stride_m: p.search_stride_m }
    }

    pub fn profile(&self) -> Result<InferenceModelProfile, CliError> {
        let c = &self.coinference;
        let mut prof = match c.profile {
            ProfilePreset::Default => InferenceModelProfile::default(),
            ProfilePreset::Bottleneck => InferenceModelProfile::bottleneck(),
        };
        if let Some(f) = &c.flops_per_layer {
            prof.flops_per_layer = f.clone();
        }
        if let Some(d) = &c.activation_bits {
            prof.activation_bits = d.clone();
        }
        if let Some(q) = c.q_max {
            prof.q_max = q;
        }
        if let Some(g) = c.gamma {
            prof.gamma = g;
        }
        if let Some(path) = &c.quality_table {
            prof.quality_table = Some(load_quality_table(path).map_err(usage)?);
        }
        prof.validate().map_err(usage)?;
        Ok(prof)
    }

    pub fn link(&self) -> Result<LinkProfile, CliError> {
        let c = &self.coinference;
        let link = LinkProfile {
            bandwidth_hz: c.bandwidth_hz,
            channel_gain: c.channel_gain,
            noise_psd_dbm_hz: c.noise_psd_dbm_hz,
            p_min_w: c.p_min_w,
            p_max_w: c.p_max_w,
            f_min_hz: c.f_min_hz,
            f_max_hz: c.f_max_hz,
            cycles_per_flop: c.cycles_per_flop,
            kappa: c.kappa,
            f_cloud_hz: c.f_cloud_hz,
            cloud_cycles_per_flop: c.cloud_cycles_per_flop,
        };
        link.validate().map_err(usage)?;
        Ok(link)
    }

    pub fn budget(&self, mode: Mode) -> Result<QosBudget, CliError> {
        let c = &self.coinference;
        let budget = QosBudget { t_max_s: c.t_max_s, e_max_j: c.e_max_j, q_min: c.q_min }.relaxed_for(mode);
        budget.check_for(mode).map_err(usage)?;
        Ok(budget)
    }

    pub fn adaptation(&self) -> Adaptation {
        let p = &self.pipeline;
        Adaptation { max_rounds: p.max_rounds, step_m: p.step_m, epsilon: p.epsilon }
    }

    /// Gateway settings, or a usage error when `[llm]` is absent.
    pub fn gateway(&self) -> Result<GatewayConfig, CliError> {
        let Some(l) = &self.llm else {
            return Err(CliError::Usage("method llm requires an [llm] section in the config".into()));
        };
        if !(l.timeout_s > 0.0 && l.timeout_s.is_finite()) {
            return Err(CliError::Usage(format!("llm.timeout_s must be > 0, got {}", l.timeout_s)));
        }
        let cfg = GatewayConfig {
            endpoint_url: l.endpoint_url.clone(),
            model_name: l.model_name.clone(),
            api_key: if l.mock_script.is_some() { None } else { Secret::from_env() },
            timeout: Duration::from_secs_f64(l.timeout_s),
            max_retries: l.max_retries,
            mock_script: l.mock_script.clone(),
            digest_stride_m: l.digest_stride_m,
        };
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}
