//! Constrained planner.
//!
//! For a fixed split the three objectives are monotone in the pruning ratio:
//! more pruning lowers delay and energy and lowers quality. The planner
//! therefore picks the pruning ratio by a boundary search (the most pruning
//! the quality floor allows, or the least pruning that meets delay and energy)
//! and solves the remaining power/frequency problem through its minimum-energy
//! deadline form `E*(t)`, a 1-D convex problem over the split of the deadline
//! between computing and transmitting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    quality_of, CoinferenceError, Constraint, ExecutionPlan, InferenceModelProfile, LinkProfile, Mode, Paradigm,
    QosBudget, Workload,
};
use crate::optim::{bisect_first_true, golden_section_minimize};

const GOLDEN_ITERS: usize = 120;
const BISECT_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Operating {
    p: f64,
    f: f64,
    energy: f64,
}

/// Least agent energy that finishes within `t` seconds.
fn min_energy_within(w: &Workload, link: &LinkProfile, t: f64) -> Option<Operating> {
    let rate = |p: f64| link.rate(p);
    let at = |p: f64, f: f64| Operating { p, f, energy: w.energy(f, p, rate(p), link.kappa) };
    let (p_lo, p_hi, f_lo, f_hi) = (link.p_min_w, link.p_max_w, link.f_min_hz, link.f_max_hz);
    let tau = t - w.tc;
    if !(tau >= 0.0) {
        return None;
    }
    if w.delay(f_lo, rate(p_lo)) <= t {
        // slowest clock and quietest transmitter already meet the deadline
        return Some(at(p_lo, f_lo));
    }
    if w.delay(f_hi, rate(p_hi)) > t {
        return None;
    }
    if w.c == 0.0 {
        let p = link.power_for(w.d, tau).clamp(p_lo, p_hi);
        return Some(at(p, f_lo));
    }
    if w.d == 0.0 {
        let f = (w.c / tau).clamp(f_lo, f_hi);
        return Some(at(p_lo, f));
    }
    // tau_c: time spent computing; the rest goes to transmission
    let lo = (w.c / f_hi).max(tau - w.tx_time(rate(p_lo)));
    let hi = (w.c / f_lo).min(tau - w.tx_time(rate(p_hi)));
    let op = |tau_c: f64| {
        let f = (w.c / tau_c).clamp(f_lo, f_hi);
        let p = link.power_for(w.d, tau - tau_c).clamp(p_lo, p_hi);
        at(p, f)
    };
    if !(lo < hi) {
        return Some(op(hi));
    }
    let (tau_c, _) = golden_section_minimize(|x| op(x).energy, lo, hi, GOLDEN_ITERS);
    Some(op(tau_c))
}

/// Shortest completion time with agent energy at most `e`.
fn min_delay_within(w: &Workload, link: &LinkProfile, e: f64) -> Option<Operating> {
    let fast = Operating {
        p: link.p_max_w,
        f: link.f_max_hz,
        energy: w.energy(link.f_max_hz, link.p_max_w, link.rate(link.p_max_w), link.kappa),
    };
    let t_fast = w.delay(fast.f, link.rate(fast.p));
    if !t_fast.is_finite() {
        return None;
    }
    if fast.energy <= e {
        return Some(fast);
    }
    let t_slow = w.delay(link.f_min_hz, link.rate(link.p_min_w));
    let floor = min_energy_within(w, link, t_slow)?;
    if floor.energy > e {
        return None;
    }
    let ok = |t: f64| min_energy_within(w, link, t).is_some_and(|o| o.energy <= e);
    let t = bisect_first_true(ok, t_fast, t_slow, BISECT_ITERS);
    min_energy_within(w, link, t)
}

/// Largest pruning ratio in `[0, rho_max]` whose quality meets `q_min`.
fn max_rho_for_quality(profile: &InferenceModelProfile, q_min: f64, rho_max: f64) -> Result<Option<f64>, CoinferenceError> {
    if quality_of(profile, 0.0)? < q_min {
        return Ok(None);
    }
    if quality_of(profile, rho_max)? >= q_min {
        return Ok(Some(rho_max));
    }
    let ok = |x: f64| quality_of(profile, rho_max - x).is_ok_and(|q| q >= q_min);
    let x = bisect_first_true(ok, 0.0, rho_max, BISECT_ITERS);
    Ok(Some(rho_max - x))
}

struct Problem<'a> {
    mode: Mode,
    profile: &'a InferenceModelProfile,
    link: &'a LinkProfile,
    budget: &'a QosBudget,
    rho_max: f64,
    /// Most pruning allowed by the quality floor.
    rho_q: Option<f64>,
}

impl Problem<'_> {
    fn workload(&self, s: usize, rho: f64) -> Workload {
        Workload::new(self.profile, self.link, s, rho)
    }

    fn solve_split(&self, paradigm: Paradigm, s: usize) -> Result<Option<ExecutionPlan>, CoinferenceError> {
        let prunable = paradigm != Paradigm::OnCloud && self.workload(s, 0.0).c > 0.0;
        let b = self.budget;
        let found = match self.mode {
            Mode::MinEnergy | Mode::MinDelay => {
                let Some(rho_q) = self.rho_q else { return Ok(None) };
                let rho = if prunable { rho_q } else { 0.0 };
                let w = self.workload(s, rho);
                let op = match self.mode {
                    Mode::MinEnergy => min_energy_within(&w, self.link, b.t_max_s),
                    _ => min_delay_within(&w, self.link, b.e_max_j),
                };
                op.map(|o| (rho, o))
            }
            Mode::MaxQuality => {
                let feasible = |rho: f64| {
                    min_energy_within(&self.workload(s, rho), self.link, b.t_max_s).filter(|o| o.energy <= b.e_max_j)
                };
                let top = if prunable { self.rho_max } else { 0.0 };
                if feasible(top).is_none() {
                    None
                } else {
                    let rho = if feasible(0.0).is_some() {
                        0.0
                    } else {
                        bisect_first_true(|r| feasible(r).is_some(), 0.0, top, BISECT_ITERS)
                    };
                    feasible(rho).map(|o| (rho, o))
                }
            }
        };
        let Some((rho, o)) = found else { return Ok(None) };
        let plan = ExecutionPlan::evaluate(paradigm, s, rho, o.p, o.f, self.profile, self.link)?;
        Ok(b.admits(&plan.achieved).then_some(plan))
    }

    /// First budget limit that no split of `paradigm` can meet.
    fn binding(&self, paradigm: Paradigm) -> Constraint {
        let Some(rho_q) = self.rho_q else { return Constraint::Quality };
        let rho = if self.mode == Mode::MaxQuality { self.rho_max } else { rho_q };
        let l = self.link;
        let fast_enough = paradigm.splits(self.profile.layer_count()).any(|s| {
            let r = if paradigm == Paradigm::OnCloud { 0.0 } else { rho };
            let t = self.workload(s, r).delay(l.f_max_hz, l.rate(l.p_max_w));
            t.is_finite() && t <= self.budget.t_max_s
        });
        if fast_enough {
            Constraint::Energy
        } else {
            Constraint::Delay
        }
    }
}

fn setup<'a>(
    mode: Mode,
    profile: &'a InferenceModelProfile,
    link: &'a LinkProfile,
    budget: &'a QosBudget,
    rho_max: f64,
) -> Result<Problem<'a>, CoinferenceError> {
    profile.validate()?;
    link.validate()?;
    budget.check_for(mode)?;
    if !(0.0..1.0).contains(&rho_max) {
        return Err(CoinferenceError::Invalid { what: "rho_max", why: format!("must lie in [0, 1), got {rho_max}") });
    }
    quality_of(profile, rho_max)?;
    let rho_q = max_rho_for_quality(profile, budget.q_min, rho_max)?;
    Ok(Problem { mode, profile, link, budget, rho_max, rho_q })
}

fn best_over(pb: &Problem<'_>, paradigms: &[Paradigm]) -> Result<Option<ExecutionPlan>, CoinferenceError> {
    let l = pb.profile.layer_count();
    let branches: Vec<(Paradigm, usize)> =
        paradigms.iter().flat_map(|&p| p.splits(l).map(move |s| (p, s))).collect();
    let solved: Vec<Option<ExecutionPlan>> =
        branches.par_iter().map(|&(p, s)| pb.solve_split(p, s)).collect::<Result<_, _>>()?;
    let mut best: Option<ExecutionPlan> = None;
    for plan in solved.into_iter().flatten() {
        let better = best.is_none_or(|b| {
            pb.mode.better(pb.mode.objective(&plan.achieved), pb.mode.objective(&b.achieved))
        });
        if better {
            best = Some(plan);
        }
    }
    Ok(best)
}

/// Binding constraint of every paradigm, for infeasibility reports.
pub(super) fn binding_report(
    mode: Mode,
    profile: &InferenceModelProfile,
    link: &LinkProfile,
    budget: &QosBudget,
    rho_max: f64,
) -> Result<Vec<(Paradigm, Constraint)>, CoinferenceError> {
    let pb = setup(mode, profile, link, budget, rho_max)?;
    Ok(Paradigm::ALL.iter().map(|&p| (p, pb.binding(p))).collect())
}

/// Best plan over all paradigms and splits for `mode` under `budget`.
pub fn optimize_plan(
    mode: Mode,
    profile: &InferenceModelProfile,
    link: &LinkProfile,
    budget: &QosBudget,
    rho_max: f64,
) -> Result<ExecutionPlan, CoinferenceError> {
    let pb = setup(mode, profile, link, budget, rho_max)?;
    best_over(&pb, &Paradigm::ALL)?
        .ok_or_else(|| CoinferenceError::Infeasible(Paradigm::ALL.iter().map(|&p| (p, pb.binding(p))).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParadigmRow {
    pub paradigm: Paradigm,
    pub plan: Option<ExecutionPlan>,
    pub objective: Option<f64>,
    /// Set when the paradigm has no feasible plan.
    pub binding: Option<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParadigmComparison {
    pub mode: Mode,
    pub rows: Vec<ParadigmRow>,
}

impl ParadigmComparison {
    pub fn row(&self, p: Paradigm) -> &ParadigmRow {
        self.rows.iter().find(|r| r.paradigm == p).expect("one row per paradigm")
    }
}

/// Optimizes each paradigm on its own.
pub fn compare_paradigms(
    mode: Mode,
    profile: &InferenceModelProfile,
    link: &LinkProfile,
    budget: &QosBudget,
    rho_max: f64,
) -> Result<ParadigmComparison, CoinferenceError> {
    let pb = setup(mode, profile, link, budget, rho_max)?;
    let rows = Paradigm::ALL
        .iter()
        .map(|&p| {
            let plan = best_over(&pb, &[p])?;
            Ok(ParadigmRow {
                paradigm: p,
                objective: plan.map(|pl| mode.objective(&pl.achieved)),
                binding: plan.is_none().then(|| pb.binding(p)),
                plan,
            })
        })
        .collect::<Result<_, CoinferenceError>>()?;
    Ok(ParadigmComparison { mode, rows })
}
