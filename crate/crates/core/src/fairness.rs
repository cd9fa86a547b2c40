//! Utility-fair throughput allocation.
//!
//! In the coordinates `u_i = ln x_i` the log-rates
//! `ln s_i = u_i + ln(L_i / t_c) - ln X(exp(u))` are concave (`X` is a
//! posynomial in `x` plus a constant), so for every fairness exponent
//! `alpha >= 1` the weighted utility `sum_i w_i f(ln s_i)` with
//!
//! ```text
//! f(z) = w exp((1 - alpha) z) / (1 - alpha)   (alpha > 1)
//! f(z) = w z                                  (alpha = 1)
//! ```
//!
//! is concave over the box `u_floor <= u_i <= ln x_bar_i`. The solver is a
//! projected gradient ascent with Armijo backtracking. For `alpha > 1` it
//! ascends the equivalent objective `-(1/(alpha-1)) ln sum_i w_i exp(-(alpha-1) ln s_i)`,
//! a monotone transform of the utility that stays finite for large `alpha`
//! and whose gradient is the utility gradient divided by `sum_i w_i f'(ln s_i)`.

use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::format::{csv_line, g12};
use crate::model::{
    ln_big_x, ln_prod_1p, throughput_of_x, AttemptVector, ModelError, ThroughputVector, WlanParams,
};

pub const U_FLOOR: f64 = -30.0;
pub const KKT_TOL: f64 = 1e-8;
pub const MAX_ITERS: usize = 100_000;
/// Consecutive iterations at `u_floor` after which a station counts as off.
pub const OFF_STREAK: usize = 100;
/// Fairness exponent standing in for max-min fairness.
pub const MAXMIN_ALPHA: f64 = 16.0;
/// Exponents used to tighten the max-min surrogate after the first solve.
/// The smallest rate is within a factor `n^(-1/(alpha-1))` of the max-min value.
pub const MAXMIN_TIGHTENING: [f64; 7] = [64.0, 256.0, 1024.0, 4096.0, 16384.0, 65536.0, 262144.0];

#[derive(Debug, Error)]
pub enum FairnessError {
    #[error("fairness exponent must be >= 1, got {0}")]
    InvalidAlpha(f64),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("u[{index}] = {value} lies outside the feasible box")]
    OutOfBox { index: usize, value: f64 },
    #[error("solver did not converge ({reason}); best iterate has KKT residual {}", best.kkt_residual)]
    NotConverged {
        reason: &'static str,
        best: Box<FairAllocation>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// `f(exp(z))` for the alpha-fair family.
pub fn utility(z: f64, w: f64, fair_alpha: f64) -> Result<f64, FairnessError> {
    check_alpha(fair_alpha)?;
    Ok(utility_unchecked(z, w, fair_alpha))
}

fn utility_unchecked(z: f64, w: f64, fair_alpha: f64) -> f64 {
    if fair_alpha == 1.0 {
        w * z
    } else {
        w * ((1.0 - fair_alpha) * z).exp() / (1.0 - fair_alpha)
    }
}

/// Derivative of [`utility`] in `z`.
fn utility_slope(z: f64, w: f64, fair_alpha: f64) -> f64 {
    if fair_alpha == 1.0 {
        w
    } else {
        w * ((1.0 - fair_alpha) * z).exp()
    }
}

fn check_alpha(fair_alpha: f64) -> Result<(), FairnessError> {
    if fair_alpha >= 1.0 && fair_alpha.is_finite() {
        Ok(())
    } else {
        Err(FairnessError::InvalidAlpha(fair_alpha))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessProblem {
    pub params: WlanParams,
    pub weights: Vec<f64>,
    pub fair_alpha: f64,
    pub u_floor: f64,
}

impl FairnessProblem {
    pub fn new(
        params: WlanParams,
        weights: Vec<f64>,
        fair_alpha: f64,
    ) -> Result<Self, FairnessError> {
        check_alpha(fair_alpha)?;
        if weights.len() != params.n() {
            return Err(FairnessError::InvalidWeights(format!(
                "{} weights for {} stations",
                weights.len(),
                params.n()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(FairnessError::InvalidWeights(format!(
                "weight {w} is not positive"
            )));
        }
        Ok(FairnessProblem {
            params,
            weights,
            fair_alpha,
            u_floor: U_FLOOR,
        })
    }

    /// Unit weights, `alpha = 1`.
    pub fn proportional(params: WlanParams) -> Self {
        let n = params.n();
        Self::new(params, vec![1.0; n], 1.0).expect("unit weights are valid")
    }

    /// Station parameters plus optional `weights` (default all ones) and
    /// `fair_alpha` (default 1).
    pub fn from_config(cfg: &Config) -> Result<Self, FairnessError> {
        let params = WlanParams::from_config(cfg)?;
        let weights = cfg
            .get_f64_list("weights")?
            .unwrap_or_else(|| vec![1.0; params.n()]);
        let alpha = cfg.get_f64("fair_alpha")?.unwrap_or(1.0);
        Self::new(params, weights, alpha)
    }

    /// Box `[u_floor, ln x_bar_i]` in log-attempt coordinates. Caps of one use
    /// the saturation surrogate; a zero cap pins the station at the floor.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.params.n();
        let lo = vec![self.u_floor; n];
        let hi = (0..n)
            .map(|i| self.params.x_bar_finite(i).ln().max(self.u_floor))
            .collect();
        (lo, hi)
    }
}

/// Log-rates and the shared factor `r_j = x_j (dX/dx_j) / X`, so that
/// `d ln s_i / d u_j = [i = j] - r_j`.
struct LogRates {
    z: Vec<f64>,
    r: Vec<f64>,
}

fn log_rates(u: &[f64], p: &WlanParams) -> LogRates {
    let x: Vec<f64> = u.iter().map(|v| v.exp()).collect();
    let (a, k) = (p.a(), p.big_k());
    let ln_big = ln_big_x(&x, a, k);
    let ln_prod = ln_prod_1p(&x);
    let share = (ln_prod - ln_big).exp();
    let z = u
        .iter()
        .enumerate()
        .map(|(i, &ui)| ui + p.rate_scale(i).ln() - ln_big)
        .collect();
    let r = u
        .iter()
        .zip(&x)
        .map(|(&ui, &xi)| k * (ui - ln_big).exp() + xi / (1.0 + xi) * share)
        .collect();
    LogRates { z, r }
}

fn check_box(u: &[f64], prob: &FairnessProblem) -> Result<(), FairnessError> {
    prob.params.check_len(u.len())?;
    let (lo, hi) = prob.bounds();
    for (index, &value) in u.iter().enumerate() {
        let slack = 1e-12 * value.abs().max(1.0);
        if !(value >= lo[index] - slack && value <= hi[index] + slack) {
            return Err(FairnessError::OutOfBox { index, value });
        }
    }
    Ok(())
}

/// Utility `sum_i w_i f(ln s_i(u))` and its gradient in `u`.
pub fn objective_and_gradient(
    u: &[f64],
    prob: &FairnessProblem,
) -> Result<(f64, Vec<f64>), FairnessError> {
    check_box(u, prob)?;
    let lr = log_rates(u, &prob.params);
    let alpha = prob.fair_alpha;
    let value =
        lr.z.iter()
            .zip(&prob.weights)
            .map(|(&z, &w)| utility_unchecked(z, w, alpha))
            .sum();
    let c: Vec<f64> =
        lr.z.iter()
            .zip(&prob.weights)
            .map(|(&z, &w)| utility_slope(z, w, alpha))
            .collect();
    let total: f64 = c.iter().sum();
    let grad = c
        .iter()
        .zip(&lr.r)
        .map(|(ci, rj)| ci - total * rj)
        .collect();
    Ok((value, grad))
}

/// Ascent objective and its gradient (see module docs).
fn scaled_objective(u: &[f64], weights: &[f64], alpha: f64, p: &WlanParams) -> (f64, Vec<f64>) {
    let lr = log_rates(u, p);
    let (value, share): (f64, Vec<f64>) = if alpha == 1.0 {
        let total: f64 = weights.iter().sum();
        let v = lr.z.iter().zip(weights).map(|(z, w)| w * z).sum::<f64>() / total;
        (v, weights.iter().map(|w| w / total).collect())
    } else {
        let beta = alpha - 1.0;
        let t: Vec<f64> =
            lr.z.iter()
                .zip(weights)
                .map(|(z, w)| w.ln() - beta * z)
                .collect();
        let m = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + t.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        (-lse / beta, t.iter().map(|v| (v - lse).exp()).collect())
    };
    let grad = share.iter().zip(&lr.r).map(|(s, r)| s - r).collect();
    (value, grad)
}

fn projected_residual(u: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    u.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&ui, &gi), (&l, &h))| {
            if (ui >= h && gi > 0.0) || (ui <= l && gi < 0.0) {
                0.0
            } else {
                gi.abs()
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub step_init: f64,
    pub backtrack: f64,
    pub armijo: f64,
    /// Starting point in `u`; clamped into the box. Defaults to `x_i = 1/n`.
    pub start: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: KKT_TOL,
            max_iters: MAX_ITERS,
            step_init: 1.0,
            backtrack: 0.5,
            armijo: 1e-4,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairAllocation {
    pub tau_opt: AttemptVector,
    pub s_opt: ThroughputVector,
    /// Achieved utility; for [`maxmin_fair`] the smallest station rate.
    pub objective: f64,
    /// Largest projected-gradient component of the scale-free ascent objective.
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Stations held at `u_floor` for at least [`OFF_STREAK`] iterations.
    pub effectively_off: Vec<usize>,
}

impl FairAllocation {
    pub fn csv_header(n: usize) -> String {
        let mut h: Vec<String> = (1..=n).map(|i| format!("tau_{i}")).collect();
        h.extend((1..=n).map(|i| format!("s_{i}")));
        h.extend(["objective", "kkt_residual", "iterations"].map(String::from));
        csv_line(h)
    }

    pub fn to_csv_row(&self) -> String {
        let mut row: Vec<String> = self.tau_opt.tau().iter().map(|&v| g12(v)).collect();
        row.extend(self.s_opt.s().iter().map(|&v| g12(v)));
        row.push(g12(self.objective));
        row.push(g12(self.kkt_residual));
        row.push(self.iterations.to_string());
        csv_line(row)
    }

    pub fn to_csv(&self) -> String {
        Self::csv_header(self.tau_opt.len()) + &self.to_csv_row()
    }
}

pub fn solve_fair(prob: &FairnessProblem) -> Result<FairAllocation, FairnessError> {
    solve_fair_with(prob, &SolverOptions::default())
}

pub fn solve_fair_with(
    prob: &FairnessProblem,
    opts: &SolverOptions,
) -> Result<FairAllocation, FairnessError> {
    check_alpha(prob.fair_alpha)?;
    let (lo, hi) = prob.bounds();
    ascend(prob, opts, &lo, &hi)
}

fn ascend(
    prob: &FairnessProblem,
    opts: &SolverOptions,
    lo: &[f64],
    hi: &[f64],
) -> Result<FairAllocation, FairnessError> {
    let p = &prob.params;
    let n = p.n();
    let clamp = |v: &mut Vec<f64>| {
        for ((vi, l), h) in v.iter_mut().zip(lo).zip(hi) {
            *vi = vi.clamp(*l, *h);
        }
    };
    let mut u = match &opts.start {
        Some(s) => {
            p.check_len(s.len())?;
            s.clone()
        }
        None => vec![-(n as f64).ln(); n],
    };
    clamp(&mut u);

    let eval = |u: &[f64]| scaled_objective(u, &prob.weights, prob.fair_alpha, p);
    let (mut psi, mut g) = eval(&u);
    let mut streak = vec![0usize; n];
    let mut step = opts.step_init;

    let finish = |u: &[f64], g: &[f64], iterations: usize, streak: &[usize]| {
        let x: Vec<f64> = (0..n)
            .map(|i| {
                if u[i] >= hi[i] {
                    p.x_bar_finite(i)
                } else {
                    u[i].exp()
                }
            })
            .collect();
        let s_opt = throughput_of_x(&x, p);
        let objective = s_opt
            .log_s()
            .iter()
            .zip(&prob.weights)
            .map(|(&z, &w)| utility_unchecked(z, w, prob.fair_alpha))
            .sum();
        FairAllocation {
            tau_opt: AttemptVector::from_x(x).expect("exp(u) is positive"),
            s_opt,
            objective,
            kkt_residual: projected_residual(u, g, lo, hi),
            iterations,
            effectively_off: (0..n).filter(|&i| streak[i] >= OFF_STREAK).collect(),
        }
    };

    for iter in 0..opts.max_iters {
        for i in 0..n {
            streak[i] = if u[i] <= lo[i] { streak[i] + 1 } else { 0 };
        }
        if projected_residual(&u, &g, lo, hi) <= opts.tol {
            return Ok(finish(&u, &g, iter, &streak));
        }
        let mut t = step;
        let mut accepted = None;
        for _ in 0..200 {
            let mut trial: Vec<f64> = u.iter().zip(&g).map(|(ui, gi)| ui + t * gi).collect();
            clamp(&mut trial);
            let d: Vec<f64> = trial.iter().zip(&u).map(|(a, b)| a - b).collect();
            let gd: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            if gd > 0.0 {
                let (psi_new, g_new) = eval(&trial);
                // Concavity gives psi(u + d) - psi(u) >= g(u + d).d, which
                // certifies the Armijo condition when function values are
                // too close to compare.
                let gd_new: f64 = g_new.iter().zip(&d).map(|(a, b)| a * b).sum();
                if psi_new >= psi + opts.armijo * gd || gd_new >= opts.armijo * gd {
                    accepted = Some((trial, d, psi_new, g_new));
                    break;
                }
            }
            t *= opts.backtrack;
        }
        let Some((trial, d, psi_new, g_new)) = accepted else {
            return Err(FairnessError::NotConverged {
                reason: "line search failed",
                best: Box::new(finish(&u, &g, iter, &streak)),
            });
        };
        // Barzilai-Borwein estimate for the next trial step.
        let dd: f64 = d.iter().map(|v| v * v).sum();
        let dy: f64 = d
            .iter()
            .zip(g_new.iter().zip(&g))
            .map(|(di, (a, b))| di * (a - b))
            .sum();
        step = if dy < 0.0 {
            (dd / -dy).clamp(1e-10, 1e10)
        } else {
            opts.step_init
        };
        u = trial;
        psi = psi_new;
        g = g_new;
    }
    Err(FairnessError::NotConverged {
        reason: "iteration limit",
        best: Box::new(finish(&u, &g, opts.max_iters, &streak)),
    })
}

/// Max-min fair allocation under caps `tau_bar`.
///
/// Solved as the `alpha = 16` utility-fair problem with unit weights, then
/// tightened: stations whose cap binds are held at the cap and the others are
/// re-solved with larger exponents, warm-started. The reported objective is
/// the smallest station rate.
pub fn maxmin_fair(p: &WlanParams, tau_bar: &[f64]) -> Result<FairAllocation, FairnessError> {
    let params = p.with_tau_bar(tau_bar.to_vec())?;
    let n = params.n();
    let mut prob = FairnessProblem::new(params, vec![1.0; n], MAXMIN_ALPHA)?;
    let first = solve_fair(&prob)?;
    let (mut lo, hi) = prob.bounds();
    let mut u: Vec<f64> = first.tau_opt.x().iter().map(|v| v.ln()).collect();
    for i in 0..n {
        if u[i] >= hi[i] {
            lo[i] = hi[i];
            u[i] = hi[i];
        }
    }
    let mut last = first;
    for &alpha in &MAXMIN_TIGHTENING {
        prob.fair_alpha = alpha;
        let opts = SolverOptions {
            start: Some(u.clone()),
            ..SolverOptions::default()
        };
        last = ascend(&prob, &opts, &lo, &hi)?;
        u = last.tau_opt.x().iter().map(|v| v.ln()).collect();
    }
    last.objective = last.s_opt.s().iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(last)
}
