//! Grid oracle for the planner.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optimize::binding_report;
use super::{
    quality_of, Achieved, CoinferenceError, ExecutionPlan, InferenceModelProfile, LinkProfile, Mode, Paradigm,
    QosBudget, Workload,
};

/// Largest number of points per grid axis.
pub const MAX_GRID: usize = 200;

/// Points per axis; a single point sits at the lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub n_rho: usize,
    pub n_p: usize,
    pub n_f: usize,
}

impl Grid {
    pub fn cube(n: usize) -> Self {
        Self { n_rho: n, n_p: n, n_f: n }
    }
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect()
}

/// (objective, tie-break key) of a grid point; the key orders by split, then
/// rho, power and frequency indices, then paradigm.
type Candidate = (f64, [usize; 5]);

fn pick(mode: Mode, a: Option<Candidate>, b: Option<Candidate>) -> Option<Candidate> {
    match (a, b) {
        (Some(x), Some(y)) => {
            if mode.better(y.0, x.0) || (y.0 == x.0 && y.1 < x.1) {
                Some(y)
            } else {
                Some(x)
            }
        }
        (x, None) => x,
        (None, y) => y,
    }
}

/// Exact optimum over paradigms, splits and uniform `(rho, p, f)` grids.
pub fn brute_force_plan(
    mode: Mode,
    profile: &InferenceModelProfile,
    link: &LinkProfile,
    budget: &QosBudget,
    rho_max: f64,
    grid: Grid,
) -> Result<ExecutionPlan, CoinferenceError> {
    for n in [grid.n_rho, grid.n_p, grid.n_f] {
        if n == 0 || n > MAX_GRID {
            return Err(CoinferenceError::GridTooLarge { n, limit: MAX_GRID });
        }
    }
    profile.validate()?;
    link.validate()?;
    budget.check_for(mode)?;
    if !(0.0..1.0).contains(&rho_max) {
        return Err(CoinferenceError::Invalid { what: "rho_max", why: format!("must lie in [0, 1), got {rho_max}") });
    }
    let rhos = axis(0.0, rho_max, grid.n_rho);
    let ps = axis(link.p_min_w, link.p_max_w, grid.n_p);
    let fs = axis(link.f_min_hz, link.f_max_hz, grid.n_f);
    let quality: Vec<f64> = rhos.iter().map(|&r| quality_of(profile, r)).collect::<Result<_, _>>()?;
    let rates: Vec<f64> = ps.iter().map(|&p| link.rate(p)).collect();

    let l = profile.layer_count();
    let slabs: Vec<(usize, Paradigm, usize, usize)> = Paradigm::ALL
        .iter()
        .enumerate()
        .flat_map(|(pi, &par)| {
            let n_rho = if par == Paradigm::OnCloud { 1 } else { rhos.len() };
            par.splits(l).flat_map(move |s| (0..n_rho).map(move |ri| (pi, par, s, ri)))
        })
        .collect();

    let best = slabs
        .par_iter()
        .map(|&(pi, _, s, ri)| {
            let q = quality[ri];
            if q < budget.q_min * (1.0 - super::BUDGET_TOL) {
                return None;
            }
            let w = Workload::new(profile, link, s, rhos[ri]);
            let mut best = None;
            for (ki, &p) in ps.iter().enumerate() {
                for (fi, &f) in fs.iter().enumerate() {
                    let a = Achieved { quality: q, delay_s: w.delay(f, rates[ki]), energy_j: w.energy(f, p, rates[ki], link.kappa) };
                    if budget.admits(&a) {
                        best = pick(mode, best, Some((mode.objective(&a), [s, ri, ki, fi, pi])));
                    }
                }
            }
            best
        })
        .reduce(|| None, |a, b| pick(mode, a, b));

    let Some((_, [s, ri, ki, fi, pi])) = best else {
        return Err(CoinferenceError::Infeasible(binding_report(mode, profile, link, budget, rho_max)?));
    };
    ExecutionPlan::evaluate(Paradigm::ALL[pi], s, rhos[ri], ps[ki], fs[fi], profile, link)
}
