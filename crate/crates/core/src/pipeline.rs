//! Closed-loop scenario runner.
//!
//! Round 0 places UAVs offline with the LoS benchmark on the predicted
//! channel, then senses the true map, realizes the rates and plans
//! co-inference on the serving link of UAV 0. Every later round first moves
//! each UAV (in index order) to its best sensed stencil neighbour when that
//! raises the true sum rate, then senses, transmits and plans again.

use std::fmt;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelModel;
use crate::coinference::{optimize_plan, CoinferenceError, ExecutionPlan, InferenceModelProfile, LinkProfile, Mode, QosBudget};
use crate::coverage_map::{link_from_rsrp, synthesize, CoverageMap, MapError, SynthesisConfig};
use crate::placement::{
    evaluate_on_map, los_greedy_init, rates_from_links, sca_los_placement, Method, PlacementError, PlacementProblem,
    PlacementSolution, ScaOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Offline,
    Sensing,
    Transmission,
    Execution,
    Adaptation,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Offline => "offline initialization",
            Stage::Sensing => "sensing",
            Stage::Transmission => "transmission",
            Stage::Execution => "execution",
            Stage::Adaptation => "adaptation",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("{stage} stage: {source}")]
    Placement { stage: Stage, source: PlacementError },
    #[error("{stage} stage: {source}")]
    Map { stage: Stage, source: MapError },
    #[error("execution stage: {0}")]
    Execution(CoinferenceError),
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
}

fn at<E>(stage: Stage) -> impl Fn(E) -> PipelineError
where
    E: Into<PlacementError>,
{
    move |e| PipelineError::Placement { stage, source: e.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adaptation {
    pub max_rounds: usize,
    /// Stencil spacing (meters).
    pub step_m: f64,
    /// Relative sum-rate improvement below which the loop stops.
    pub epsilon: f64,
}

impl Default for Adaptation {
    fn default() -> Self {
        Self { max_rounds: 20, step_m: 4.0, epsilon: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub true_map: CoverageMap,
    /// Idealized channel used for offline placement.
    pub predicted_channel: ChannelModel,
    /// Placement problem on the true map; its channel supplies noise and
    /// bandwidth for scoring.
    pub problem: PlacementProblem,
    pub sca: ScaOptions,
    /// Grid spacing of the offline greedy start (meters).
    pub init_stride_m: f64,
    pub profile: InferenceModelProfile,
    pub link: LinkProfile,
    pub budget: QosBudget,
    pub mode: Mode,
    pub rho_max: f64,
    pub adaptation: Adaptation,
    /// Standard deviation of sensing errors (dB); zero for exact sensing.
    pub sensing_noise_db: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Scenario on a synthesized map whose offline prior is the same model
    /// without shadowing or blockage.
    pub fn synthetic(synth: &SynthesisConfig, uav_count: usize) -> Result<Self, MapError> {
        let true_map = synthesize(synth)?;
        let problem =
            PlacementProblem::over_map(&true_map, uav_count, synth.channel, synth.beams.clone(), synth.bs_position);
        Ok(Self {
            true_map,
            predicted_channel: ChannelModel { shadowing_sigma_db: 0.0, ..synth.channel },
            problem,
            sca: ScaOptions::default(),
            init_stride_m: 10.0,
            profile: InferenceModelProfile::default(),
            link: LinkProfile::default(),
            budget: QosBudget::default().relaxed_for(Mode::MinEnergy),
            mode: Mode::MinEnergy,
            rho_max: 0.9,
            adaptation: Adaptation::default(),
            sensing_noise_db: 0.0,
            seed: synth.seed,
        })
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let a = &self.adaptation;
        if !(a.step_m >= self.true_map.resolution) || !a.step_m.is_finite() {
            return bad(format!("step {} m is below the map resolution {} m", a.step_m, self.true_map.resolution));
        }
        if !(a.epsilon > 0.0) {
            return bad(format!("epsilon must be > 0, got {}", a.epsilon));
        }
        if !(self.sensing_noise_db >= 0.0 && self.sensing_noise_db.is_finite()) {
            return bad(format!("sensing noise must be >= 0 dB, got {}", self.sensing_noise_db));
        }
        self.problem.validate().map_err(at(Stage::Offline))?;
        self.predicted_channel
            .validate()
            .map_err(|e| PipelineError::Config(format!("predicted channel: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub positions: Vec<(f64, f64)>,
    pub serving_beam: Vec<usize>,
    pub per_uav_rate: Vec<f64>,
    pub map_sum_rate: f64,
    /// Relative sum-rate gain over the previous round (0 for round 0).
    pub improvement: f64,
    /// Linear gain of UAV 0's serving link handed to the planner.
    pub channel_gain: f64,
    pub plan: Option<ExecutionPlan>,
    /// Why no plan exists (infeasible budget) when `plan` is empty.
    pub plan_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    /// Sum rate of the offline placement as predicted by the LoS model.
    pub predicted_sum_rate: f64,
    pub initial_sum_rate: f64,
    pub final_sum_rate: f64,
    pub rounds_used: usize,
    pub termination: String,
    pub rounds: Vec<RoundRecord>,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    /// `round,uav_id,x,y,beam,rate` rows.
    pub fn write_rounds_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "round,uav_id,x,y,beam,rate")?;
        for r in &self.rounds {
            for (u, &(x, y)) in r.positions.iter().enumerate() {
                writeln!(w, "{},{u},{x},{y},{},{}", r.round, r.serving_beam[u], r.per_uav_rate[u])?;
            }
        }
        Ok(())
    }
}

/// Sensed serving link at each stencil point around every UAV.
struct Sensing {
    /// `points[u]` holds `(position, link)`; entry 0 is the UAV itself.
    points: Vec<Vec<((f64, f64), crate::coverage_map::BeamLink)>>,
}

fn sense(
    cfg: &ScenarioConfig,
    positions: &[(f64, f64)],
    noise: Option<&Normal<f64>>,
    rng: &mut ChaCha8Rng,
) -> Result<Sensing, PipelineError> {
    let map = &cfg.true_map;
    let s = cfg.adaptation.step_m;
    let area = &cfg.problem.area;
    let mut points = Vec::with_capacity(positions.len());
    for &(x, y) in positions {
        let mut here = Vec::with_capacity(5);
        for (dx, dy) in [(0.0, 0.0), (s, 0.0), (-s, 0.0), (0.0, s), (0.0, -s)] {
            let (px, py) = (x + dx, y + dy);
            if !area.contains(px, py) || !map.contains(px, py) {
                continue;
            }
            let mut rsrp = Vec::with_capacity(map.beam_count);
            for b in 0..map.beam_count {
                let v = match map.sample_rsrp(px, py, b) {
                    Ok(v) => v,
                    Err(MapError::NoData { .. }) => f64::NEG_INFINITY,
                    Err(e) => return Err(PipelineError::Map { stage: Stage::Sensing, source: e }),
                };
                rsrp.push(v + noise.map_or(0.0, |n| n.sample(rng)));
            }
            if rsrp.iter().any(|v| v.is_finite()) {
                here.push(((px, py), link_from_rsrp(&rsrp, cfg.problem.channel.noise_power_dbm)));
            }
        }
        points.push(here);
    }
    Ok(Sensing { points })
}

fn execute(cfg: &ScenarioConfig, sol: &PlacementSolution) -> Result<(f64, Option<ExecutionPlan>, Option<String>), PipelineError> {
    let (x, y) = sol.positions[0];
    let rsrp = cfg
        .true_map
        .sample_rsrp(x, y, sol.serving_beam[0])
        .map_err(|e| PipelineError::Map { stage: Stage::Transmission, source: e })?;
    let gain = 10f64.powf((rsrp - cfg.problem.channel.tx_power_per_beam_dbm) / 10.0);
    let link = LinkProfile { channel_gain: gain, ..cfg.link };
    match optimize_plan(cfg.mode, &cfg.profile, &link, &cfg.budget, cfg.rho_max) {
        Ok(plan) => Ok((gain, Some(plan), None)),
        Err(e @ CoinferenceError::Infeasible(_)) => Ok((gain, None, Some(e.to_string()))),
        Err(e) => Err(PipelineError::Execution(e)),
    }
}

fn record(cfg: &ScenarioConfig, round: usize, sol: &PlacementSolution, prev: Option<f64>) -> Result<RoundRecord, PipelineError> {
    let (channel_gain, plan, plan_error) = execute(cfg, sol)?;
    let improvement = prev.map_or(0.0, |p| if p > 0.0 { (sol.sum_rate - p) / p } else { 0.0 });
    Ok(RoundRecord {
        round,
        positions: sol.positions.clone(),
        serving_beam: sol.serving_beam.clone(),
        per_uav_rate: sol.per_uav_rate.clone(),
        map_sum_rate: sol.sum_rate,
        improvement,
        channel_gain,
        plan,
        plan_error,
    })
}

/// One adaptation sweep: each UAV in turn takes its best sensed neighbour if
/// the move raises the true sum rate.
fn adapt(cfg: &ScenarioConfig, current: PlacementSolution, sensed: &Sensing) -> Result<PlacementSolution, PipelineError> {
    let w = cfg.problem.channel.bandwidth_hz;
    let mut best = current;
    let mut links: Vec<_> = sensed.points.iter().map(|p| p.first().map(|(_, l)| *l)).collect();
    for u in 0..best.positions.len() {
        let mut ranked: Vec<((f64, f64), f64, crate::coverage_map::BeamLink)> = Vec::new();
        for &(pos, link) in sensed.points[u].iter().skip(1) {
            let mut trial: Vec<_> = links.clone();
            trial[u] = Some(link);
            if let Some(all) = trial.into_iter().collect::<Option<Vec<_>>>() {
                ranked.push((pos, rates_from_links(&all, w).1, link));
            }
        }
        // best sensed score first; ties keep stencil order
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        for (pos, _, link) in ranked {
            let mut trial = best.positions.clone();
            trial[u] = pos;
            if cfg.problem.check_feasible(&trial).is_err() {
                continue;
            }
            let scored = evaluate_on_map(&trial, &cfg.problem, &cfg.true_map, Method::MapSearch)
                .map_err(at(Stage::Adaptation))?;
            if scored.sum_rate > best.sum_rate {
                best = scored;
                links[u] = Some(link);
            }
            break;
        }
    }
    Ok(best)
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport, PipelineError> {
    cfg.validate()?;
    let predicted = PlacementProblem { channel: cfg.predicted_channel, ..cfg.problem.clone() };
    let init = los_greedy_init(&predicted, cfg.init_stride_m).map_err(at(Stage::Offline))?;
    let offline = sca_los_placement(&predicted, &init, &cfg.sca).map_err(at(Stage::Offline))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = (cfg.sensing_noise_db > 0.0)
        .then(|| Normal::new(0.0, cfg.sensing_noise_db).expect("positive finite deviation"));

    let mut current = evaluate_on_map(&offline.positions, &cfg.problem, &cfg.true_map, Method::ScaLos)
        .map_err(at(Stage::Transmission))?;
    let mut rounds = vec![record(cfg, 0, &current, None)?];
    let mut termination = "adaptation_disabled".to_string();

    for round in 1..=cfg.adaptation.max_rounds {
        let sensed = sense(cfg, &current.positions, noise.as_ref(), &mut rng)?;
        let prev = current.sum_rate;
        current = adapt(cfg, current, &sensed)?;
        let rec = record(cfg, round, &current, Some(prev))?;
        let converged = rec.improvement < cfg.adaptation.epsilon;
        rounds.push(rec);
        if converged {
            termination = format!("converged_round_{round}");
            break;
        }
        termination = "max_rounds".into();
    }

    Ok(ScenarioReport {
        predicted_sum_rate: offline.sum_rate,
        initial_sum_rate: rounds[0].map_sum_rate,
        final_sum_rate: current.sum_rate,
        rounds_used: rounds.len() - 1,
        termination,
        rounds,
    })
}
