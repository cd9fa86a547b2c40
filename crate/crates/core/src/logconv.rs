//! Constructive log-convexity witnesses.
//!
//! Given interior operating points `T1`, `T2` and a mixing weight `alpha`,
//! the point `x* = y / delta` with `y_k = x1_k^alpha * x2_k^(1-alpha)`
//! realises the log-midpoint `alpha log S(T1) + (1-alpha) log S(T2)` whenever
//! `delta > 0` solves
//!
//! ```text
//! F(delta) := delta * X(y / delta) = X(T1)^alpha * X(T2)^(1-alpha).
//! ```
//!
//! `F` is strictly convex for two or more stations and unbounded at both
//! ends, so the equation has one root on each side of its minimiser
//! `delta*`, and the upper root is at least one. Using the upper root keeps
//! `x* <= y`, so capped domains are preserved.
//!
//! `F` is evaluated through the elementary symmetric polynomials `e_k` of
//! `z = y / delta`:
//!
//! ```text
//! F(delta)   = a delta + (K+1) sum(y) + delta * sum_{k>=2} e_k(z)
//! F'(delta)  = a - sum_{k>=2} (k-1) e_k(z)
//! F''(delta) = (1/delta) sum_{k>=2} k (k-1) e_k(z)
//! ```
//!
//! Every term is non-negative, so none of these suffer cancellation.

use thiserror::Error;

use crate::format::{csv_line, g12};
use crate::model::{big_x, throughput_of_x, AttemptVector, ModelError, WlanParams};

/// Root acceptance: `|F(delta) - target| <= ROOT_TOL * target`.
pub const ROOT_TOL: f64 = 1e-12;
/// A witness is accepted when its log-midpoint residual is at most this.
pub const WITNESS_TOL: f64 = 1e-9;
/// Roots closer than `TANGENCY_TOL * delta*` are flagged as near-tangent.
pub const TANGENCY_TOL: f64 = 1e-8;

const MAX_ITERS: usize = 400;

#[derive(Debug, Error, PartialEq)]
pub enum LogConvError {
    #[error(
        "endpoint {endpoint} has a boundary coordinate at station {index} (tau = 0 or 1); \
         witnesses are built for interior points only, boundary points follow by continuity of S"
    )]
    BoundaryPoint { endpoint: usize, index: usize },
    #[error("mixing weight {0} is outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("delta must be positive, got {0}")]
    InvalidDelta(f64),
    #[error("y must be positive and finite (component {index} is {value})")]
    InvalidY { index: usize, value: f64 },
    #[error("target {target} is below the minimum {minimum} of F; no root exists")]
    InfeasibleTarget { target: f64, minimum: f64 },
    #[error("root search did not converge ({0})")]
    NonConvergence(&'static str),
    #[error("x1 has {0} components but x2 has {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Branch {
    #[default]
    Upper,
    Lower,
}

impl std::str::FromStr for Branch {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "upper" => Ok(Branch::Upper),
            "lower" => Ok(Branch::Lower),
            other => Err(format!("unknown branch {other:?} (expected upper|lower)")),
        }
    }
}

/// `y_k = x1_k^alpha * x2_k^(1 - alpha)`, computed in the log domain.
/// The endpoints `alpha = 0, 1` and `x1 = x2` are returned exactly.
pub fn geometric_combination(x1: &[f64], x2: &[f64], alpha: f64) -> Result<Vec<f64>, LogConvError> {
    if x1.len() != x2.len() {
        return Err(LogConvError::LengthMismatch(x1.len(), x2.len()));
    }
    check_alpha(alpha)?;
    for (endpoint, x) in [(1, x1), (2, x2)] {
        if let Some(index) = x.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(LogConvError::BoundaryPoint { endpoint, index });
        }
    }
    Ok(x1
        .iter()
        .zip(x2)
        .map(|(&u, &v)| {
            if alpha == 1.0 || u == v {
                u
            } else if alpha == 0.0 {
                v
            } else {
                (alpha * u.ln() + (1.0 - alpha) * v.ln()).exp()
            }
        })
        .collect())
}

fn check_alpha(alpha: f64) -> Result<(), LogConvError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(LogConvError::InvalidAlpha(alpha))
    }
}

/// `e_0 .. e_n` of `z`.
fn elementary_symmetric(z: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; z.len() + 1];
    e[0] = 1.0;
    for (i, &zi) in z.iter().enumerate() {
        for k in (1..=i + 1).rev() {
            e[k] += zi * e[k - 1];
        }
    }
    e
}

/// The left-hand side `F` for a fixed `y`.
#[derive(Debug, Clone)]
struct Lhs<'a> {
    a: f64,
    k: f64,
    y: &'a [f64],
    sum_y: f64,
}

impl<'a> Lhs<'a> {
    fn new(y: &'a [f64], p: &WlanParams) -> Self {
        Lhs {
            a: p.a(),
            k: p.big_k(),
            y,
            sum_y: y.iter().sum(),
        }
    }

    fn sym(&self, delta: f64) -> Vec<f64> {
        let z: Vec<f64> = self.y.iter().map(|v| v / delta).collect();
        elementary_symmetric(&z)
    }

    fn value(&self, delta: f64) -> f64 {
        let e = self.sym(delta);
        let higher: f64 = e.iter().skip(2).sum();
        self.a * delta + (self.k + 1.0) * self.sum_y + delta * higher
    }

    fn d1(&self, delta: f64) -> f64 {
        let e = self.sym(delta);
        let s: f64 = e
            .iter()
            .enumerate()
            .skip(2)
            .map(|(k, v)| (k - 1) as f64 * v)
            .sum();
        self.a - s
    }

    fn d2(&self, delta: f64) -> f64 {
        let e = self.sym(delta);
        let s: f64 = e
            .iter()
            .enumerate()
            .skip(2)
            .map(|(k, v)| (k * (k - 1)) as f64 * v)
            .sum();
        s / delta
    }
}

fn check_y(y: &[f64]) -> Result<(), LogConvError> {
    match y.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        Some(index) => Err(LogConvError::InvalidY {
            index,
            value: y[index],
        }),
        None => Ok(()),
    }
}

fn check_delta(delta: f64) -> Result<(), LogConvError> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(LogConvError::InvalidDelta(delta))
    }
}

/// `F(delta) = delta * (a + K sum(y)/delta + prod(1 + y/delta) - 1)`.
pub fn lhs_f(delta: f64, y: &[f64], p: &WlanParams) -> Result<f64, LogConvError> {
    check_delta(delta)?;
    p.check_len(y.len())?;
    check_y(y)?;
    Ok(Lhs::new(y, p).value(delta))
}

/// `(F'(delta), F''(delta))`.
pub fn lhs_f_derivatives(
    delta: f64,
    y: &[f64],
    p: &WlanParams,
) -> Result<(f64, f64), LogConvError> {
    check_delta(delta)?;
    p.check_len(y.len())?;
    check_y(y)?;
    let f = Lhs::new(y, p);
    Ok((f.d1(delta), f.d2(delta)))
}

/// Both roots of `F(delta) = target` and the minimiser between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaRoots {
    pub lower: f64,
    pub star: f64,
    pub upper: f64,
    /// `upper - lower < TANGENCY_TOL * star`.
    pub near_tangent: bool,
}

impl DeltaRoots {
    pub fn pick(&self, branch: Branch) -> f64 {
        match branch {
            Branch::Upper => self.upper,
            Branch::Lower => self.lower,
        }
    }
}

pub fn solve_delta(y: &[f64], target: f64, p: &WlanParams) -> Result<DeltaRoots, LogConvError> {
    p.check_len(y.len())?;
    check_y(y)?;
    if !(target > 0.0 && target.is_finite()) {
        return Err(LogConvError::InfeasibleTarget {
            target,
            minimum: 0.0,
        });
    }
    let f = Lhs::new(y, p);

    if y.len() == 1 {
        // F is affine with slope a; the single root is closed-form.
        let floor = (f.k + 1.0) * f.sum_y;
        let delta = (target - floor) / f.a;
        if delta.is_nan() || delta <= 0.0 {
            return Err(LogConvError::InfeasibleTarget {
                target,
                minimum: floor,
            });
        }
        return Ok(DeltaRoots {
            lower: delta,
            star: delta,
            upper: delta,
            near_tangent: false,
        });
    }

    let star = minimiser(&f)?;
    let fmin = f.value(star);
    let gap = target - fmin;
    if gap < -ROOT_TOL * target {
        return Err(LogConvError::InfeasibleTarget {
            target,
            minimum: fmin,
        });
    }
    if gap <= ROOT_TOL * target {
        return Ok(DeltaRoots {
            lower: star,
            star,
            upper: star,
            near_tangent: true,
        });
    }

    let h = |d: f64| f.value(d) - target;
    let one_on_level = h(1.0) <= ROOT_TOL * target;

    // Upper root: grow by doubling from max(1, delta*).
    let start = if star < 1.0 && one_on_level {
        1.0
    } else {
        star
    };
    let mut hi = 2.0 * start;
    let mut guard = 0;
    while h(hi) < 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 2000 || !hi.is_finite() {
            return Err(LogConvError::NonConvergence("upper bracket"));
        }
    }
    let upper = bracketed_root(&f, target, start, hi)?;

    // Lower root: shrink by halving from min(1, delta*).
    let end = if star > 1.0 && one_on_level {
        1.0
    } else {
        star
    };
    let mut lo = 0.5 * end;
    guard = 0;
    while h(lo) < 0.0 {
        lo *= 0.5;
        guard += 1;
        if guard > 2000 || lo == 0.0 {
            return Err(LogConvError::NonConvergence("lower bracket"));
        }
    }
    let lower = bracketed_root(&f, target, lo, end)?;

    Ok(DeltaRoots {
        lower,
        star,
        upper,
        near_tangent: upper - lower < TANGENCY_TOL * star,
    })
}

/// Safeguarded Newton on `F'` (increasing, negative near zero, tending to `a`).
fn minimiser(f: &Lhs<'_>) -> Result<f64, LogConvError> {
    let g1 = f.d1(1.0);
    if g1 == 0.0 {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (1.0, 1.0);
    if g1 < 0.0 {
        while f.d1(hi) < 0.0 {
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(LogConvError::NonConvergence("minimiser bracket"));
            }
        }
    } else {
        while f.d1(lo) >= 0.0 {
            lo *= 0.5;
            if lo == 0.0 {
                return Err(LogConvError::NonConvergence("minimiser bracket"));
            }
        }
    }
    // invariant: d1(lo) < 0 <= d1(hi)
    let mut d = (lo * hi).sqrt();
    for _ in 0..MAX_ITERS {
        let g = f.d1(d);
        if g == 0.0 {
            return Ok(d);
        }
        if g < 0.0 {
            lo = d;
        } else {
            hi = d;
        }
        let newton = d - g / f.d2(d);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            (lo * hi).sqrt()
        };
        if (next - d).abs() <= 2.0 * f64::EPSILON * d || hi - lo <= 2.0 * f64::EPSILON * hi {
            return Ok(next);
        }
        d = next;
    }
    Err(LogConvError::NonConvergence("minimiser"))
}

/// Root of `F = target` on a monotone bracket `[lo, hi]` (either branch).
fn bracketed_root(f: &Lhs<'_>, target: f64, mut lo: f64, mut hi: f64) -> Result<f64, LogConvError> {
    let h = |d: f64| f.value(d) - target;
    let (hlo, hhi) = (h(lo), h(hi));
    if hlo.abs() <= ROOT_TOL * target && hlo.abs() <= hhi.abs() {
        return Ok(lo);
    }
    if hhi.abs() <= ROOT_TOL * target {
        return Ok(hi);
    }
    // `rising` means h(lo) < 0 < h(hi).
    let rising = hlo < hhi;
    let mut d = 0.5 * (lo + hi);
    let mut best = (f64::INFINITY, d);
    for _ in 0..MAX_ITERS {
        let hv = h(d);
        if hv.abs() < best.0 {
            best = (hv.abs(), d);
        }
        if hv == 0.0 {
            return Ok(d);
        }
        if (hv < 0.0) == rising {
            lo = d;
        } else {
            hi = d;
        }
        let newton = d - hv / f.d1(d);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - d).abs() <= 2.0 * f64::EPSILON * d || hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        d = next;
    }
    if best.0 <= ROOT_TOL * target {
        Ok(best.1)
    } else {
        Err(LogConvError::NonConvergence("root polish"))
    }
}

/// Everything needed to check that a log-midpoint of two operating points
/// is achieved.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationWitness {
    pub t1: AttemptVector,
    pub t2: AttemptVector,
    pub alpha: f64,
    pub y: Vec<f64>,
    /// `X(T1)^alpha X(T2)^(1-alpha)`.
    pub target: f64,
    pub delta_lower: f64,
    pub delta_star: f64,
    pub delta_upper: f64,
    /// The root actually used for `x_star`.
    pub delta: f64,
    pub branch: Branch,
    pub t_star: AttemptVector,
    pub residual: f64,
    pub near_tangent: bool,
}

impl CombinationWitness {
    pub fn x_star(&self) -> &[f64] {
        self.t_star.x()
    }

    pub fn is_accepted(&self) -> bool {
        self.residual <= WITNESS_TOL
    }

    /// `x*_i <= x_bar_i`, allowing for rounding in the log-domain mean.
    pub fn in_box(&self, p: &WlanParams) -> bool {
        self.t_star
            .x()
            .iter()
            .enumerate()
            .all(|(i, &x)| x <= p.x_bar(i) * (1.0 + 4.0 * f64::EPSILON))
    }
}

/// Builds the witness `T*` for `alpha log S(T1) + (1-alpha) log S(T2)`.
///
/// For the degenerate mixes (`alpha` in {0, 1} or `T1 = T2`) `delta = 1` is an
/// exact root and the witness is the endpoint itself, whatever the branch.
pub fn midpoint_witness(
    t1: &AttemptVector,
    t2: &AttemptVector,
    alpha: f64,
    p: &WlanParams,
    branch: Branch,
) -> Result<CombinationWitness, LogConvError> {
    p.check_len(t1.len())?;
    p.check_len(t2.len())?;
    check_alpha(alpha)?;
    for (endpoint, t) in [(1, t1), (2, t2)] {
        if let Some(index) = t.tau().iter().position(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(LogConvError::BoundaryPoint { endpoint, index });
        }
    }
    let (x1, x2) = (t1.x(), t2.x());
    let y = geometric_combination(x1, x2, alpha)?;
    let (a, k) = (p.a(), p.big_k());
    let (big1, big2) = (big_x(x1, a, k), big_x(x2, a, k));
    let target = if alpha == 1.0 {
        big1
    } else if alpha == 0.0 {
        big2
    } else {
        (alpha * big1.ln() + (1.0 - alpha) * big2.ln()).exp()
    };
    let roots = solve_delta(&y, target, p)?;

    let degenerate = alpha == 0.0 || alpha == 1.0 || x1 == x2;
    let (delta, x_star) = if degenerate {
        (1.0, y.clone())
    } else {
        let d = roots.pick(branch);
        (d, y.iter().map(|v| v / d).collect())
    };

    let ls1 = throughput_of_x(x1, p);
    let ls2 = throughput_of_x(x2, p);
    let ls_star = throughput_of_x(&x_star, p);
    let residual = (0..p.n())
        .map(|i| {
            let mix = alpha * ls1.log_s()[i] + (1.0 - alpha) * ls2.log_s()[i];
            (mix - ls_star.log_s()[i]).abs()
        })
        .fold(0.0, f64::max);

    Ok(CombinationWitness {
        t1: t1.clone(),
        t2: t2.clone(),
        alpha,
        y,
        target,
        delta_lower: roots.lower,
        delta_star: roots.star,
        delta_upper: roots.upper,
        delta,
        branch,
        t_star: AttemptVector::from_x(x_star)?,
        residual,
        near_tangent: roots.near_tangent,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WitnessRow {
    pub alpha: f64,
    pub delta_lower: f64,
    pub delta_star: f64,
    pub delta_upper: f64,
    pub residual: f64,
    pub in_box: bool,
}

pub const WITNESS_CSV_HEADER: &str = "alpha,delta_lower,delta_star,delta_upper,residual,in_box";

impl WitnessRow {
    pub fn from_witness(w: &CombinationWitness, p: &WlanParams) -> Self {
        WitnessRow {
            alpha: w.alpha,
            delta_lower: w.delta_lower,
            delta_star: w.delta_star,
            delta_upper: w.delta_upper,
            residual: w.residual,
            in_box: w.in_box(p),
        }
    }

    pub fn to_csv(&self) -> String {
        csv_line([
            g12(self.alpha),
            g12(self.delta_lower),
            g12(self.delta_star),
            g12(self.delta_upper),
            g12(self.residual),
            if self.in_box { "1".into() } else { "0".into() },
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentReport {
    pub rows: Vec<WitnessRow>,
    pub max_residual: f64,
    pub all_in_box: bool,
    pub tol: f64,
}

impl SegmentReport {
    /// Pass iff the largest residual is within tolerance.
    pub fn passed(&self) -> bool {
        self.max_residual <= self.tol
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(WITNESS_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.to_csv());
        }
        out
    }
}

/// Evenly spaced mixing weights in [0, 1]; a single weight means 0.5.
pub fn alpha_grid(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5],
        m => (0..m).map(|j| j as f64 / (m - 1) as f64).collect(),
    }
}

/// Upper-branch witnesses along the log-segment between `t1` and `t2`.
pub fn verify_segment(
    t1: &AttemptVector,
    t2: &AttemptVector,
    p: &WlanParams,
    num_alphas: usize,
    tol: f64,
) -> Result<SegmentReport, LogConvError> {
    let mut rows = Vec::with_capacity(num_alphas);
    for alpha in alpha_grid(num_alphas) {
        let w = midpoint_witness(t1, t2, alpha, p, Branch::Upper)?;
        rows.push(WitnessRow::from_witness(&w, p));
    }
    let max_residual = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    let all_in_box = rows.iter().all(|r| r.in_box);
    Ok(SegmentReport {
        rows,
        max_residual,
        all_in_box,
        tol,
    })
}
