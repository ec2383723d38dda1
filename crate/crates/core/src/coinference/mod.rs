//! Split inference between an aerial agent and the cloud.
//!
//! A layered model runs its first `s` layers on the agent (optionally pruned
//! by ratio `rho`), uploads the boundary activation over a wireless link, and
//! finishes in the cloud. Delay, agent-side energy and output quality are
//! closed-form in `(s, rho, p, f)`.

mod brute;
mod optimize;

pub use brute::{brute_force_plan, Grid, MAX_GRID};
pub use optimize::{compare_paradigms, optimize_plan, ParadigmComparison, ParadigmRow};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::dbm_to_mw;

/// Relative slack allowed on budget constraints.
pub const BUDGET_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CoinferenceError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },
    #[error("inconsistent budget: {0}")]
    Budget(String),
    #[error("grid of {n} points per axis exceeds the limit of {limit}")]
    GridTooLarge { n: usize, limit: usize },
    #[error("no feasible plan: {}", describe(.0))]
    Infeasible(Vec<(Paradigm, Constraint)>),
    #[error("cannot read quality table {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("quality table line {line}: {msg}")]
    TableParse { line: usize, msg: String },
}

fn describe(v: &[(Paradigm, Constraint)]) -> String {
    v.iter().map(|(p, c)| format!("{} limited by {}", p.tag(), c.tag())).collect::<Vec<_>>().join("; ")
}

fn invalid<T>(what: &'static str, why: String) -> Result<T, CoinferenceError> {
    Err(CoinferenceError::Invalid { what, why })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceModelProfile {
    pub flops_per_layer: Vec<f64>,
    /// Bits sent when splitting after layer `s`; index 0 is the raw input,
    /// index `L` the final result.
    pub activation_bits: Vec<f64>,
    pub q_max: f64,
    pub gamma: f64,
    /// Measured `(rho, quality)` points replacing the parametric curve.
    pub quality_table: Option<Vec<(f64, f64)>>,
}

impl Default for InferenceModelProfile {
    /// Twelve equal layers with activations shrinking geometrically from a
    /// 16 Mbit input.
    fn default() -> Self {
        let l = 12;
        let mut activation_bits: Vec<f64> = (0..l).map(|s| 16e6 * 0.7f64.powi(s as i32)).collect();
        activation_bits.push(0.0);
        Self { flops_per_layer: vec![0.5e9; l], activation_bits, q_max: 0.40, gamma: 1.5, quality_table: None }
    }
}

impl InferenceModelProfile {
    /// Light front layers that narrow to a tiny activation after layer 4,
    /// followed by a heavy tail: the regime where splitting beats both pure
    /// paradigms.
    pub fn bottleneck() -> Self {
        let flops_per_layer = vec![
            0.05e9, 0.05e9, 0.1e9, 0.1e9, 0.7e9, 0.7e9, 0.7e9, 0.7e9, 0.7e9, 0.7e9, 0.7e9, 0.7e9,
        ];
        let activation_bits = vec![
            16e6, 24e6, 16e6, 8e6, 0.2e6, 8e6, 8e6, 6e6, 6e6, 4e6, 4e6, 2e6, 0.0,
        ];
        Self { flops_per_layer, activation_bits, ..Self::default() }
    }

    pub fn layer_count(&self) -> usize {
        self.flops_per_layer.len()
    }

    pub fn validate(&self) -> Result<(), CoinferenceError> {
        let l = self.layer_count();
        if l == 0 {
            return invalid("profile", "at least one layer is required".into());
        }
        if let Some(f) = self.flops_per_layer.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
            return invalid("profile", format!("layer FLOPs must be > 0, got {f}"));
        }
        if self.activation_bits.len() != l + 1 {
            return invalid(
                "profile",
                format!("expected {} activation sizes for {l} layers, got {}", l + 1, self.activation_bits.len()),
            );
        }
        if let Some(d) = self.activation_bits.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
            return invalid("profile", format!("activation sizes must be >= 0, got {d}"));
        }
        if !(0.0..=1.0).contains(&self.q_max) {
            return invalid("profile", format!("q_max must lie in [0, 1], got {}", self.q_max));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return invalid("profile", format!("gamma must be > 0, got {}", self.gamma));
        }
        if let Some(t) = &self.quality_table {
            validate_table(t, self.q_max)?;
        }
        Ok(())
    }

    fn prefix_flops(&self, s: usize) -> f64 {
        self.flops_per_layer[..s].iter().sum()
    }

    fn suffix_flops(&self, s: usize) -> f64 {
        self.flops_per_layer[s..].iter().sum()
    }
}

fn validate_table(t: &[(f64, f64)], q_max: f64) -> Result<(), CoinferenceError> {
    let Some(&(r0, q0)) = t.first() else {
        return invalid("quality table", "table is empty".into());
    };
    if r0 != 0.0 || q0 != q_max {
        return invalid("quality table", format!("first point must be (0, q_max = {q_max}), got ({r0}, {q0})"));
    }
    for w in t.windows(2) {
        let ((ra, qa), (rb, qb)) = (w[0], w[1]);
        if !(rb > ra) {
            return invalid("quality table", format!("rho values must increase, got {ra} then {rb}"));
        }
        if !(qb <= qa) {
            return invalid("quality table", format!("quality must not increase with rho, got {qa} then {qb}"));
        }
    }
    if let Some(&(r, q)) = t.iter().find(|(r, q)| !(*r < 1.0) || !(0.0..=1.0).contains(q)) {
        return invalid("quality table", format!("point ({r}, {q}) out of range"));
    }
    Ok(())
}

/// Reads a two-column `rho,quality` CSV; a header line is optional.
pub fn parse_quality_table(text: &str) -> Result<Vec<(f64, f64)>, CoinferenceError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.eq_ignore_ascii_case("rho,quality")) {
            continue;
        }
        let err = |msg: String| CoinferenceError::TableParse { line: i + 1, msg };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let [r, q] = cols.as_slice() else {
            return Err(err(format!("expected 2 columns, got {}", cols.len())));
        };
        let r: f64 = r.parse().map_err(|_| err(format!("bad rho {r:?}")))?;
        let q: f64 = q.parse().map_err(|_| err(format!("bad quality {q:?}")))?;
        out.push((r, q));
    }
    Ok(out)
}

pub fn load_quality_table(path: &Path) -> Result<Vec<(f64, f64)>, CoinferenceError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CoinferenceError::Io { path: path.display().to_string(), source })?;
    parse_quality_table(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    pub bandwidth_hz: f64,
    /// Linear power gain between agent and cloud access point.
    pub channel_gain: f64,
    pub noise_psd_dbm_hz: f64,
    pub p_min_w: f64,
    pub p_max_w: f64,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub cycles_per_flop: f64,
    /// Effective switched capacitance, J / (cycle Hz^2).
    pub kappa: f64,
    pub f_cloud_hz: f64,
    pub cloud_cycles_per_flop: f64,
}

impl Default for LinkProfile {
    fn default() -> Self {
        Self {
            bandwidth_hz: 10e6,
            channel_gain: 1e-12,
            noise_psd_dbm_hz: -174.0,
            p_min_w: 0.01,
            p_max_w: 1.0,
            f_min_hz: 0.2e9,
            f_max_hz: 2e9,
            cycles_per_flop: 1.0,
            kappa: 1e-27,
            f_cloud_hz: 50e9,
            cloud_cycles_per_flop: 1.0,
        }
    }
}

impl LinkProfile {
    pub fn validate(&self) -> Result<(), CoinferenceError> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.bandwidth_hz) {
            return invalid("link", format!("bandwidth must be > 0, got {}", self.bandwidth_hz));
        }
        if !(self.channel_gain >= 0.0 && self.channel_gain.is_finite()) {
            return invalid("link", format!("channel gain must be >= 0, got {}", self.channel_gain));
        }
        if !self.noise_psd_dbm_hz.is_finite() {
            return invalid("link", "noise PSD must be finite".into());
        }
        if !(pos(self.p_min_w) && self.p_min_w <= self.p_max_w && self.p_max_w.is_finite()) {
            return invalid("link", format!("need 0 < p_min <= p_max, got [{}, {}]", self.p_min_w, self.p_max_w));
        }
        if !(pos(self.f_min_hz) && self.f_min_hz <= self.f_max_hz && self.f_max_hz.is_finite()) {
            return invalid("link", format!("need 0 < f_min <= f_max, got [{}, {}]", self.f_min_hz, self.f_max_hz));
        }
        for (name, v) in [
            ("kappa", self.kappa),
            ("f_cloud", self.f_cloud_hz),
            ("cycles_per_flop", self.cycles_per_flop),
            ("cloud_cycles_per_flop", self.cloud_cycles_per_flop),
        ] {
            if !pos(v) {
                return invalid("link", format!("{name} must be > 0, got {v}"));
            }
        }
        Ok(())
    }

    /// Noise power spectral density in W/Hz.
    pub fn noise_psd_w(&self) -> f64 {
        dbm_to_mw(self.noise_psd_dbm_hz) * 1e-3
    }

    /// Uplink rate in bit/s at transmit power `p` watts.
    pub fn rate(&self, p: f64) -> f64 {
        let snr = p * self.channel_gain / (self.noise_psd_w() * self.bandwidth_hz);
        self.bandwidth_hz * snr.ln_1p() / std::f64::consts::LN_2
    }

    /// Smallest power delivering `bits` within `t` seconds (unclamped).
    pub(crate) fn power_for(&self, bits: f64, t: f64) -> f64 {
        let n = self.noise_psd_w() * self.bandwidth_hz / self.channel_gain;
        n * ((bits / (self.bandwidth_hz * t)) * std::f64::consts::LN_2).exp_m1()
    }
}

/// Quality, delay and energy limits; a relaxed field is infinite (or zero for
/// quality).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosBudget {
    pub t_max_s: f64,
    pub e_max_j: f64,
    pub q_min: f64,
}

impl Default for QosBudget {
    fn default() -> Self {
        Self { t_max_s: 1.0, e_max_j: 1.0, q_min: 0.3 }
    }
}

impl QosBudget {
    pub fn unconstrained() -> Self {
        Self { t_max_s: f64::INFINITY, e_max_j: f64::INFINITY, q_min: 0.0 }
    }

    /// Copy with the metric optimized by `mode` released.
    pub fn relaxed_for(self, mode: Mode) -> Self {
        match mode {
            Mode::MaxQuality => Self { q_min: 0.0, ..self },
            Mode::MinDelay => Self { t_max_s: f64::INFINITY, ..self },
            Mode::MinEnergy => Self { e_max_j: f64::INFINITY, ..self },
        }
    }

    pub fn check_for(&self, mode: Mode) -> Result<(), CoinferenceError> {
        if !(self.t_max_s > 0.0) || !(self.e_max_j > 0.0) || !(0.0..=1.0).contains(&self.q_min) {
            return Err(CoinferenceError::Budget(format!(
                "need t_max > 0, e_max > 0 and q_min in [0, 1], got {self:?}"
            )));
        }
        let clash = match mode {
            Mode::MaxQuality if self.q_min > 0.0 => Some("q_min"),
            Mode::MinDelay if self.t_max_s.is_finite() => Some("t_max"),
            Mode::MinEnergy if self.e_max_j.is_finite() => Some("e_max"),
            _ => None,
        };
        match clash {
            Some(f) => Err(CoinferenceError::Budget(format!("{} optimizes the metric bounded by {f}", mode.tag()))),
            None => Ok(()),
        }
    }

    /// Whether `a` meets every limit up to [`BUDGET_TOL`] relative slack.
    pub fn admits(&self, a: &Achieved) -> bool {
        a.quality >= self.q_min * (1.0 - BUDGET_TOL)
            && a.delay_s <= self.t_max_s * (1.0 + BUDGET_TOL)
            && a.energy_j <= self.e_max_j * (1.0 + BUDGET_TOL)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Paradigm {
    OnCloud,
    OnIaa,
    CoInference,
}

impl Paradigm {
    pub const ALL: [Paradigm; 3] = [Paradigm::OnCloud, Paradigm::OnIaa, Paradigm::CoInference];

    pub fn tag(&self) -> &'static str {
        match self {
            Paradigm::OnCloud => "ON_CLOUD",
            Paradigm::OnIaa => "ON_IAA",
            Paradigm::CoInference => "CO_INFERENCE",
        }
    }

    pub fn splits(&self, layers: usize) -> std::ops::RangeInclusive<usize> {
        match self {
            Paradigm::OnCloud => 0..=0,
            Paradigm::OnIaa => layers..=layers,
            Paradigm::CoInference => 0..=layers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    MaxQuality,
    MinDelay,
    MinEnergy,
}

impl Mode {
    pub fn tag(&self) -> &'static str {
        match self {
            Mode::MaxQuality => "MAX_QUALITY",
            Mode::MinDelay => "MIN_DELAY",
            Mode::MinEnergy => "MIN_ENERGY",
        }
    }

    pub fn objective(&self, a: &Achieved) -> f64 {
        match self {
            Mode::MaxQuality => a.quality,
            Mode::MinDelay => a.delay_s,
            Mode::MinEnergy => a.energy_j,
        }
    }

    /// Whether objective value `a` is strictly better than `b`.
    pub fn better(&self, a: f64, b: f64) -> bool {
        match self {
            Mode::MaxQuality => a > b,
            _ => a < b,
        }
    }
}

/// Budget constraint that rules a paradigm out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Quality,
    Delay,
    Energy,
}

impl Constraint {
    pub fn tag(&self) -> &'static str {
        match self {
            Constraint::Quality => "quality",
            Constraint::Delay => "delay",
            Constraint::Energy => "energy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Achieved {
    pub quality: f64,
    pub delay_s: f64,
    pub energy_j: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub paradigm: Paradigm,
    pub split: usize,
    pub rho: f64,
    pub p_w: f64,
    pub f_hz: f64,
    pub achieved: Achieved,
}

impl ExecutionPlan {
    /// Builds a plan and fills `achieved` from the model operations.
    pub fn evaluate(
        paradigm: Paradigm,
        split: usize,
        rho: f64,
        p_w: f64,
        f_hz: f64,
        profile: &InferenceModelProfile,
        link: &LinkProfile,
    ) -> Result<Self, CoinferenceError> {
        let zero = Achieved { quality: 0.0, delay_s: 0.0, energy_j: 0.0 };
        let mut plan = Self { paradigm, split, rho, p_w, f_hz, achieved: zero };
        plan.achieved = Achieved {
            quality: quality_of(profile, rho)?,
            delay_s: delay_of(&plan, profile, link)?,
            energy_j: energy_of(&plan, profile, link)?,
        };
        Ok(plan)
    }

    fn check(&self, profile: &InferenceModelProfile, link: &LinkProfile) -> Result<(), CoinferenceError> {
        let l = profile.layer_count();
        let dom = |m: String| Err(CoinferenceError::Domain(m));
        if !self.paradigm.splits(l).contains(&self.split) {
            return dom(format!("split {} not allowed for {} with {l} layers", self.split, self.paradigm.tag()));
        }
        if self.paradigm == Paradigm::OnCloud && self.rho != 0.0 {
            return dom("ON_CLOUD runs unpruned".into());
        }
        if !(0.0..1.0).contains(&self.rho) {
            return dom(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if !(self.p_w >= link.p_min_w && self.p_w <= link.p_max_w) {
            return dom(format!("power {} W outside [{}, {}]", self.p_w, link.p_min_w, link.p_max_w));
        }
        if !(self.f_hz >= link.f_min_hz && self.f_hz <= link.f_max_hz) {
            return dom(format!("frequency {} Hz outside [{}, {}]", self.f_hz, link.f_min_hz, link.f_max_hz));
        }
        Ok(())
    }
}

pub fn quality_of(profile: &InferenceModelProfile, rho: f64) -> Result<f64, CoinferenceError> {
    if !(0.0..1.0).contains(&rho) {
        return Err(CoinferenceError::Domain(format!("rho must lie in [0, 1), got {rho}")));
    }
    let Some(t) = &profile.quality_table else {
        return Ok(profile.q_max * (1.0 - rho).powf(profile.gamma));
    };
    let last = t.last().map_or(0.0, |p| p.0);
    if rho > last {
        return Err(CoinferenceError::Domain(format!("rho {rho} beyond the quality table range [0, {last}]")));
    }
    let i = t.partition_point(|(r, _)| *r <= rho);
    if i == t.len() {
        return Ok(t[i - 1].1);
    }
    let ((r0, q0), (r1, q1)) = (t[i - 1], t[i]);
    Ok(q0 + (q1 - q0) * (rho - r0) / (r1 - r0))
}

/// Cost terms fixed by the split and pruning ratio.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Workload {
    /// Agent cycles.
    pub c: f64,
    /// Upload bits.
    pub d: f64,
    /// Cloud compute delay.
    pub tc: f64,
}

impl Workload {
    pub fn new(profile: &InferenceModelProfile, link: &LinkProfile, s: usize, rho: f64) -> Self {
        let cloud = link.cloud_cycles_per_flop * profile.suffix_flops(s);
        Self {
            c: link.cycles_per_flop * (1.0 - rho) * profile.prefix_flops(s),
            d: profile.activation_bits[s],
            tc: if cloud == 0.0 { 0.0 } else { cloud / link.f_cloud_hz },
        }
    }

    pub fn tx_time(&self, rate: f64) -> f64 {
        if self.d == 0.0 {
            0.0
        } else if rate > 0.0 {
            self.d / rate
        } else {
            f64::INFINITY
        }
    }

    pub fn delay(&self, f: f64, rate: f64) -> f64 {
        let comp = if self.c == 0.0 { 0.0 } else { self.c / f };
        comp + self.tx_time(rate) + self.tc
    }

    pub fn energy(&self, f: f64, p: f64, rate: f64, kappa: f64) -> f64 {
        let tx = if self.d == 0.0 { 0.0 } else { p * self.tx_time(rate) };
        kappa * self.c * f * f + tx
    }
}

/// End-to-end delay in seconds; infinite when a non-empty upload meets a
/// zero-rate link.
pub fn delay_of(plan: &ExecutionPlan, profile: &InferenceModelProfile, link: &LinkProfile) -> Result<f64, CoinferenceError> {
    plan.check(profile, link)?;
    let w = Workload::new(profile, link, plan.split, plan.rho);
    Ok(w.delay(plan.f_hz, link.rate(plan.p_w)))
}

/// Agent-side energy in joules (compute plus transmission).
pub fn energy_of(plan: &ExecutionPlan, profile: &InferenceModelProfile, link: &LinkProfile) -> Result<f64, CoinferenceError> {
    plan.check(profile, link)?;
    let w = Workload::new(profile, link, plan.split, plan.rho);
    Ok(w.energy(plan.f_hz, plan.p_w, link.rate(plan.p_w), link.kappa))
}
