//! Successive convex approximation under the idealized LoS model.
//!
//! With serving beams and bandwidth shares frozen at the current iterate `Q_r`,
//! each UAV's spectral efficiency is
//!
//! ```text
//! R(q) = log2(S(q) + I(q) + N) - log2(I(q) + N)
//! ```
//!
//! Since `-log2(x)` is convex in the interference-plus-noise slack `x`, its
//! tangent at `x_r = I(q_r) + N` bounds it from below, giving the surrogate
//!
//! ```text
//! R~(q) = log2(S + I + N) - log2(x_r) - (I + N - x_r) / (x_r ln 2)
//! ```
//!
//! which is tight at `q_r` and a global minorant of `R`. Separation
//! constraints `|q_i - q_j|^2 >= d^2` are replaced by their first-order
//! expansion at `Q_r`, an inner approximation, so every point of the
//! linearized set is feasible. The surrogate subproblem is solved by projected
//! gradient ascent with a backtracking line search; a step is kept only if the
//! true LoS sum rate (with re-association) does not decrease, so the objective
//! trace is non-decreasing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dist, rates_from_links, Method, PlacementError, PlacementProblem, PlacementSolution, FEASIBILITY_TOL};
use crate::channel::{dbm_to_mw, los_rsrp_with_gradient, Position3D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaOptions {
    /// Stop once an outer iteration improves the sum rate by less than
    /// `tol` times its current value.
    pub tol: f64,
    pub max_iter: usize,
    /// Projected-gradient iterations per surrogate subproblem.
    pub inner_iter: usize,
    /// Longest trial displacement of the line search (meters).
    pub max_step_m: f64,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self { tol: 1e-4, max_iter: 200, inner_iter: 40, max_step_m: 20.0 }
    }
}

const DYKSTRA_SWEEPS: usize = 200;
const ARMIJO: f64 = 1e-4;

struct Frozen {
    serving: usize,
    share: f64,
    /// Interference plus noise at the expansion point (mW).
    slack_ref: f64,
}

/// Linearized separation constraint `a . (q_i - q_j) >= c`.
struct Halfspace {
    i: usize,
    j: usize,
    a: [f64; 2],
    c: f64,
}

pub fn sca_los_placement(
    problem: &PlacementProblem,
    init: &[(f64, f64)],
    opts: &ScaOptions,
) -> Result<PlacementSolution, PlacementError> {
    problem.validate()?;
    if !(opts.tol > 0.0) {
        return Err(PlacementError::Invalid(format!("tol must be > 0, got {}", opts.tol)));
    }
    problem
        .check_feasible(init)
        .map_err(|e| PlacementError::InfeasibleInit(e.to_string()))?;

    let mut q: Vec<(f64, f64)> = init.to_vec();
    let mut f = problem.los_sum_rate(&q)?;
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let frozen = freeze(problem, &q)?;
        let cuts = linearize_separation(problem, &q);
        let cand = solve_surrogate(problem, &frozen, &cuts, &q, opts)?;

        let mut accepted = None;
        let mut beta = 1.0;
        for _ in 0..30 {
            let trial: Vec<(f64, f64)> = q
                .iter()
                .zip(&cand)
                .map(|(a, b)| (a.0 + beta * (b.0 - a.0), a.1 + beta * (b.1 - a.1)))
                .collect();
            if problem.check_feasible(&trial).is_ok() {
                let ft = problem.los_sum_rate(&trial)?;
                if ft >= f {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            beta *= 0.5;
        }
        let Some((next, fnext)) = accepted else {
            converged = true;
            break;
        };
        let gain = fnext - f;
        q = next;
        f = fnext;
        trace.push(f);
        if gain <= opts.tol * f.abs() {
            converged = true;
            break;
        }
    }

    let links = q.iter().map(|&(x, y)| problem.los_link(x, y)).collect::<Result<Vec<_>, _>>()?;
    let mut sol = PlacementSolution::from_links(Method::ScaLos, q, &links, problem.channel.bandwidth_hz);
    sol.iterations = iterations;
    sol.objective_trace = trace;
    sol.max_iter_reached = !converged;
    Ok(sol)
}

/// Greedy start for the benchmark: UAVs are added one at a time at the
/// `stride_m` grid point that most increases the LoS sum rate.
pub fn los_greedy_init(problem: &PlacementProblem, stride_m: f64) -> Result<Vec<(f64, f64)>, PlacementError> {
    problem.validate()?;
    if !(stride_m > 0.0) {
        return Err(PlacementError::Invalid(format!("stride must be > 0, got {stride_m}")));
    }
    let a = problem.area;
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        let n = ((hi - lo) / stride_m + 1e-9).floor() as usize;
        let mut v: Vec<f64> = (0..=n).map(|i| lo + i as f64 * stride_m).collect();
        if hi - v[n] > 1e-9 {
            v.push(hi);
        }
        v
    };
    let xs = axis(a.x_min, a.x_max);
    let ys = axis(a.y_min, a.y_max);
    let cands: Vec<(f64, f64)> = xs.iter().flat_map(|&x| ys.iter().map(move |&y| (x, y))).collect();
    let links = cands
        .par_iter()
        .map(|&(x, y)| problem.los_link(x, y))
        .collect::<Result<Vec<_>, _>>()?;

    let mut placed: Vec<usize> = Vec::with_capacity(problem.uav_count);
    for _ in 0..problem.uav_count {
        let mut best: Option<(usize, f64)> = None;
        let mut trial: Vec<_> = placed.iter().map(|&i| links[i]).collect();
        trial.push(links[0]);
        for (c, &pos) in cands.iter().enumerate() {
            if placed.iter().any(|&i| dist(cands[i], pos) < problem.min_separation - FEASIBILITY_TOL) {
                continue;
            }
            *trial.last_mut().unwrap() = links[c];
            let score = rates_from_links(&trial, problem.channel.bandwidth_hz).1;
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((c, score));
            }
        }
        let (c, _) = best.ok_or_else(|| {
            PlacementError::Invalid(format!(
                "no {stride_m} m grid point keeps {} m from the UAVs already placed",
                problem.min_separation
            ))
        })?;
        placed.push(c);
    }
    Ok(placed.into_iter().map(|i| cands[i]).collect())
}

fn freeze(problem: &PlacementProblem, q: &[(f64, f64)]) -> Result<Vec<Frozen>, PlacementError> {
    let links = q.iter().map(|&(x, y)| problem.los_link(x, y)).collect::<Result<Vec<_>, _>>()?;
    let mut load = vec![0usize; problem.beams.len()];
    for l in &links {
        load[l.beam] += 1;
    }
    q.iter()
        .zip(&links)
        .map(|(&(x, y), l)| {
            let powers = beam_powers(problem, x, y)?;
            let interference: f64 = powers.iter().enumerate().filter(|(b, _)| *b != l.beam).map(|(_, p)| p.0).sum();
            Ok(Frozen {
                serving: l.beam,
                share: 1.0 / load[l.beam] as f64,
                slack_ref: interference + problem.channel.noise_mw(),
            })
        })
        .collect()
}

/// Received power (mW) of every beam with its horizontal gradient.
fn beam_powers(problem: &PlacementProblem, x: f64, y: f64) -> Result<Vec<(f64, [f64; 2])>, PlacementError> {
    let p = Position3D { x, y, z: problem.altitude };
    let k = std::f64::consts::LN_10 / 10.0;
    problem
        .beams
        .iter()
        .map(|b| {
            let (dbm, g) = los_rsrp_with_gradient(&problem.channel, b, &problem.bs_position, &p)?;
            let mw = dbm_to_mw(dbm);
            Ok((mw, [mw * k * g[0], mw * k * g[1]]))
        })
        .collect()
}

/// Surrogate value (bits/s/Hz) and gradient at `q`.
fn surrogate(
    problem: &PlacementProblem,
    frozen: &[Frozen],
    q: &[(f64, f64)],
) -> Result<(f64, Vec<[f64; 2]>), PlacementError> {
    let ln2 = std::f64::consts::LN_2;
    let noise = problem.channel.noise_mw();
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(q.len());
    for (fz, &(x, y)) in frozen.iter().zip(q) {
        let powers = beam_powers(problem, x, y)?;
        let (s, gs) = powers[fz.serving];
        let mut i = 0.0;
        let mut gi = [0.0; 2];
        for (b, (p, g)) in powers.iter().enumerate() {
            if b != fz.serving {
                i += p;
                gi[0] += g[0];
                gi[1] += g[1];
            }
        }
        let total = s + i + noise;
        let r = fz.slack_ref;
        value += fz.share * (total.log2() - r.log2() - (i + noise - r) / (r * ln2));
        grad.push([
            fz.share * ((gs[0] + gi[0]) / (total * ln2) - gi[0] / (r * ln2)),
            fz.share * ((gs[1] + gi[1]) / (total * ln2) - gi[1] / (r * ln2)),
        ]);
    }
    Ok((value, grad))
}

fn linearize_separation(problem: &PlacementProblem, q: &[(f64, f64)]) -> Vec<Halfspace> {
    let mut cuts = Vec::new();
    if problem.min_separation <= 0.0 {
        return cuts;
    }
    let d2 = problem.min_separation * problem.min_separation;
    for i in 0..q.len() {
        for j in i + 1..q.len() {
            let dr = [q[i].0 - q[j].0, q[i].1 - q[j].1];
            cuts.push(Halfspace {
                i,
                j,
                a: [2.0 * dr[0], 2.0 * dr[1]],
                c: d2 + dr[0] * dr[0] + dr[1] * dr[1],
            });
        }
    }
    cuts
}

/// Euclidean projection onto the area box intersected with the linearized
/// separation halfspaces (Dykstra's alternating projections).
fn project(problem: &PlacementProblem, cuts: &[Halfspace], y: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let clamp = |z: &mut Vec<(f64, f64)>| {
        for p in z.iter_mut() {
            *p = problem.area.clamp(p.0, p.1);
        }
    };
    let mut x = y.to_vec();
    if cuts.is_empty() {
        clamp(&mut x);
        return x;
    }
    let k = x.len();
    let mut inc_box = vec![(0.0, 0.0); k];
    let mut inc_cut = vec![vec![(0.0, 0.0); k]; cuts.len()];
    for _ in 0..DYKSTRA_SWEEPS {
        let before = x.clone();
        let mut z: Vec<(f64, f64)> = x.iter().zip(&inc_box).map(|(a, p)| (a.0 + p.0, a.1 + p.1)).collect();
        let pre = z.clone();
        clamp(&mut z);
        for u in 0..k {
            inc_box[u] = (pre[u].0 - z[u].0, pre[u].1 - z[u].1);
        }
        x = z;
        for (h, inc) in cuts.iter().zip(inc_cut.iter_mut()) {
            let mut z: Vec<(f64, f64)> = x.iter().zip(inc.iter()).map(|(a, p)| (a.0 + p.0, a.1 + p.1)).collect();
            let pre = z.clone();
            let lhs = h.a[0] * (z[h.i].0 - z[h.j].0) + h.a[1] * (z[h.i].1 - z[h.j].1);
            if lhs < h.c {
                let norm2 = 2.0 * (h.a[0] * h.a[0] + h.a[1] * h.a[1]);
                let t = (h.c - lhs) / norm2;
                z[h.i].0 += t * h.a[0];
                z[h.i].1 += t * h.a[1];
                z[h.j].0 -= t * h.a[0];
                z[h.j].1 -= t * h.a[1];
            }
            for u in 0..k {
                inc[u] = (pre[u].0 - z[u].0, pre[u].1 - z[u].1);
            }
            x = z;
        }
        let moved: f64 = x.iter().zip(&before).map(|(a, b)| dist(*a, *b)).sum();
        if moved < 1e-12 {
            break;
        }
    }
    x
}

fn solve_surrogate(
    problem: &PlacementProblem,
    frozen: &[Frozen],
    cuts: &[Halfspace],
    start: &[(f64, f64)],
    opts: &ScaOptions,
) -> Result<Vec<(f64, f64)>, PlacementError> {
    let mut q = start.to_vec();
    let (mut val, mut grad) = surrogate(problem, frozen, &q)?;
    for _ in 0..opts.inner_iter {
        let gnorm = grad.iter().map(|g| g[0] * g[0] + g[1] * g[1]).sum::<f64>().sqrt();
        if !(gnorm > 1e-300) {
            break;
        }
        let mut t = opts.max_step_m / gnorm;
        let mut next = None;
        for _ in 0..40 {
            let trial: Vec<(f64, f64)> = q
                .iter()
                .zip(&grad)
                .map(|(p, g)| (p.0 + t * g[0], p.1 + t * g[1]))
                .collect();
            let cand = project(problem, cuts, &trial);
            let ascent: f64 = cand
                .iter()
                .zip(&q)
                .zip(&grad)
                .map(|((c, p), g)| g[0] * (c.0 - p.0) + g[1] * (c.1 - p.1))
                .sum();
            if ascent > 0.0 && problem.check_feasible(&cand).is_ok() {
                let (cv, cg) = surrogate(problem, frozen, &cand)?;
                if cv >= val + ARMIJO * ascent {
                    next = Some((cand, cv, cg));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, cv, cg)) = next else { break };
        let moved: f64 = cand.iter().zip(&q).map(|(a, b)| dist(*a, *b)).sum();
        q = cand;
        val = cv;
        grad = cg;
        if moved < 1e-7 {
            break;
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{default_beams, BeamPattern, ChannelModel};
    use crate::placement::Area;

    fn problem(k: usize, beams: Vec<BeamPattern>) -> PlacementProblem {
        PlacementProblem {
            uav_count: k,
            area: Area { x_min: 0.0, x_max: 200.0, y_min: 0.0, y_max: 120.0 },
            altitude: 98.0,
            min_separation: 10.0,
            channel: ChannelModel { shadowing_sigma_db: 0.0, ..ChannelModel::default() },
            beams,
            bs_position: Position3D { x: 100.0, y: -20.0, z: 0.0 },
        }
    }

    /// Exhaustive LoS optimum over a `stride` grid, single UAV.
    fn brute_los_single(p: &PlacementProblem, stride: f64) -> ((f64, f64), f64) {
        let mut best = ((0.0, 0.0), f64::NEG_INFINITY);
        let nx = ((p.area.x_max - p.area.x_min) / stride) as usize;
        let ny = ((p.area.y_max - p.area.y_min) / stride) as usize;
        for i in 0..=nx {
            for j in 0..=ny {
                let q = (p.area.x_min + i as f64 * stride, p.area.y_min + j as f64 * stride);
                let r = p.los_sum_rate(&[q]).unwrap();
                if r > best.1 {
                    best = (q, r);
                }
            }
        }
        best
    }

    #[test]
    fn surrogate_is_tight_minorant() {
        let p = problem(2, default_beams());
        let q = vec![(40.0, 80.0), (150.0, 60.0)];
        let frozen = freeze(&p, &q).unwrap();
        let (v, _) = surrogate(&p, &frozen, &q).unwrap();
        let w = p.channel.bandwidth_hz;
        assert!((v * w - p.los_sum_rate(&q).unwrap()).abs() < 1e-6 * w);
        // away from the expansion point the surrogate stays below the frozen-association rate
        for dx in [-30.0, -5.0, 7.0, 25.0] {
            let moved = vec![(q[0].0 + dx, q[0].1 - dx / 2.0), (q[1].0 - dx, q[1].1 + dx / 3.0)];
            let (sv, _) = surrogate(&p, &frozen, &moved).unwrap();
            let mut exact = 0.0;
            for (fz, &(x, y)) in frozen.iter().zip(&moved) {
                let pw = beam_powers(&p, x, y).unwrap();
                let s = pw[fz.serving].0;
                let i: f64 = pw.iter().enumerate().filter(|(b, _)| *b != fz.serving).map(|(_, v)| v.0).sum();
                exact += fz.share * (1.0 + s / (i + p.channel.noise_mw())).log2();
            }
            assert!(sv <= exact + 1e-12, "dx={dx}: {sv} > {exact}");
        }
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let p = problem(2, default_beams());
        let q = vec![(40.0, 80.0), (150.0, 60.0)];
        let frozen = freeze(&p, &q).unwrap();
        let at = vec![(45.0, 77.0), (143.0, 66.0)];
        let (_, g) = surrogate(&p, &frozen, &at).unwrap();
        let h = 1e-4;
        for u in 0..2 {
            #[allow(clippy::needless_range_loop)]
            for c in 0..2 {
                let shift = |s: f64| {
                    let mut z = at.clone();
                    if c == 0 { z[u].0 += s } else { z[u].1 += s }
                    surrogate(&p, &frozen, &z).unwrap().0
                };
                let fd = (shift(h) - shift(-h)) / (2.0 * h);
                assert!((fd - g[u][c]).abs() < 1e-6 * fd.abs().max(1e-3), "{fd} vs {}", g[u][c]);
            }
        }
    }

    #[test]
    fn single_beam_matches_brute_force() {
        let beams = vec![default_beams()[3]];
        let p = problem(1, beams);
        let (opt, _) = brute_los_single(&p, 1.0);
        let init = los_greedy_init(&p, 20.0).unwrap();
        let opts = ScaOptions { tol: 1e-12, max_iter: 500, ..ScaOptions::default() };
        let sol = sca_los_placement(&p, &init, &opts).unwrap();
        let d = dist(sol.positions[0], opt);
        assert!(d <= 2.0, "sca {:?} vs brute {:?}", sol.positions[0], opt);
    }

    #[test]
    fn trace_is_non_decreasing() {
        for k in 1..=4 {
            let p = problem(k, default_beams());
            let init: Vec<(f64, f64)> = (0..k).map(|i| (20.0 + 45.0 * i as f64, 30.0 + 10.0 * i as f64)).collect();
            let sol = sca_los_placement(&p, &init, &ScaOptions::default()).unwrap();
            assert!(sol.objective_trace.windows(2).all(|w| w[1] >= w[0]), "k={k}: {:?}", sol.objective_trace);
            assert_eq!(sol.sum_rate, *sol.objective_trace.last().unwrap());
            assert!(p.check_feasible(&sol.positions).is_ok());
        }
    }

    #[test]
    fn symmetric_pair_respects_separation() {
        let mut beams = vec![default_beams()[2], default_beams()[4]];
        beams[0].beam_id = 0;
        beams[1].beam_id = 1;
        let mut p = problem(2, beams);
        p.min_separation = 50.0;
        // coarse brute force over pairs on a 10 m grid
        let mut pts = Vec::new();
        for i in 0..=20 {
            for j in 0..=12 {
                pts.push((i as f64 * 10.0, j as f64 * 10.0));
            }
        }
        let mut best = f64::NEG_INFINITY;
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                if dist(pts[a], pts[b]) >= 50.0 {
                    best = best.max(p.los_sum_rate(&[pts[a], pts[b]]).unwrap());
                }
            }
        }
        let init = los_greedy_init(&p, 10.0).unwrap();
        let sol = sca_los_placement(&p, &init, &ScaOptions { tol: 1e-9, ..ScaOptions::default() }).unwrap();
        assert!(dist(sol.positions[0], sol.positions[1]) >= 50.0 - 1e-9);
        assert!(sol.sum_rate >= best * (1.0 - 1e-3), "{} vs {}", sol.sum_rate, best);
        // mirror image about x = 100 (the BS meridian), up to which UAV is which
        let (a, b) = (sol.positions[0], sol.positions[1]);
        let mirrored = (200.0 - b.0, b.1);
        assert!(dist(a, mirrored) < 5.0, "{a:?} vs mirror of {b:?}");
        assert_ne!(sol.serving_beam[0], sol.serving_beam[1]);
    }

    #[test]
    fn infeasible_init_is_rejected() {
        let p = problem(2, default_beams());
        assert!(matches!(
            sca_los_placement(&p, &[(10.0, 10.0), (12.0, 10.0)], &ScaOptions::default()),
            Err(PlacementError::InfeasibleInit(_))
        ));
        assert!(matches!(
            sca_los_placement(&p, &[(10.0, 10.0), (250.0, 10.0)], &ScaOptions::default()),
            Err(PlacementError::InfeasibleInit(_))
        ));
    }

    #[test]
    fn max_iter_flag() {
        let p = problem(3, default_beams());
        let init = vec![(10.0, 10.0), (100.0, 10.0), (190.0, 10.0)];
        let sol = sca_los_placement(&p, &init, &ScaOptions { tol: 1e-15, max_iter: 1, ..ScaOptions::default() }).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.max_iter_reached || sol.objective_trace.len() <= 2);
    }
}
