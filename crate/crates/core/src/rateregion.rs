//! Sampling of the rate region `R(tau_bar)`, Pareto frontier extraction,
//! empirical log-convexity probes and the two-station figure data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::format::{csv_line, g12};
use crate::logconv::{midpoint_witness, Branch, LogConvError};
use crate::model::{throughput_of_x, AttemptVector, ModelError, WlanParams, SATURATION_X};

pub const DEFAULT_POINTS_PER_AXIS: usize = 201;
pub const DEFAULT_X_MIN: f64 = 1e-6;
pub const DEFAULT_MAX_POINTS: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("grid needs at least 2 points per axis, got {0}")]
    GridTooSmall(usize),
    #[error("grid of {points} points exceeds the cap of {cap}")]
    GridTooLarge { points: u128, cap: usize },
    #[error("figure data needs exactly 2 stations, got {0}")]
    NotTwoStations(usize),
    #[error("sample has no interior points (every point has some tau_i = 0)")]
    NoInterior,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Witness(#[from] LogConvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    /// Uniform in `ln x` between `x_min` and the cap, plus `x = 0`.
    GeometricX,
    /// Uniform in `tau` over `[0, tau_bar]`.
    UniformTau,
}

impl std::str::FromStr for Spacing {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "geometric" => Ok(Spacing::GeometricX),
            "uniform" => Ok(Spacing::UniformTau),
            other => Err(format!(
                "unknown spacing {other:?} (expected geometric|uniform)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    Raw,
    /// Divide station `i` by `L_i / t_s`.
    PhyRate,
}

impl std::str::FromStr for Normalization {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Normalization::Raw),
            "phy-rate" => Ok(Normalization::PhyRate),
            other => Err(format!(
                "unknown normalization {other:?} (expected raw|phy-rate)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub points_per_axis: usize,
    pub spacing: Spacing,
    /// Smallest positive `x` on a geometric axis.
    pub x_min: f64,
    pub max_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points_per_axis: DEFAULT_POINTS_PER_AXIS,
            spacing: Spacing::GeometricX,
            x_min: DEFAULT_X_MIN,
            max_points: DEFAULT_MAX_POINTS,
        }
    }
}

impl GridSpec {
    pub fn with_points(points_per_axis: usize) -> Self {
        GridSpec {
            points_per_axis,
            ..GridSpec::default()
        }
    }

    /// `(tau, x)` values of station `i`'s axis, ascending, endpoints exact.
    pub fn axis(&self, p: &WlanParams, i: usize) -> Vec<(f64, f64)> {
        let cap_tau = p.tau_bar()[i];
        if cap_tau == 0.0 {
            return vec![(0.0, 0.0)];
        }
        let cap_x = p.x_bar_finite(i);
        let cap = (
            if cap_tau >= 1.0 {
                cap_x / (1.0 + cap_x)
            } else {
                cap_tau
            },
            cap_x,
        );
        let n = self.points_per_axis;
        let mut out = Vec::with_capacity(n);
        out.push((0.0, 0.0));
        match self.spacing {
            Spacing::GeometricX => {
                let lo = self.x_min.min(cap_x * 1e-6);
                let steps = n - 2;
                for j in 0..steps {
                    let x = (lo.ln() + (cap_x / lo).ln() * j as f64 / steps as f64).exp();
                    out.push((x / (1.0 + x), x));
                }
            }
            Spacing::UniformTau => {
                for j in 1..n - 1 {
                    let t = cap_tau * j as f64 / (n - 1) as f64;
                    out.push((t, t / (1.0 - t)));
                }
            }
        }
        out.push(cap);
        out
    }
}

/// Throughputs over a Cartesian grid of attempt vectors, stored column-flat
/// (`n` values per point). Rates are raw; `divisors` holds the per-station
/// normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSample {
    n: usize,
    shape: Vec<usize>,
    grid_index: Vec<usize>,
    tau: Vec<f64>,
    x: Vec<f64>,
    s: Vec<f64>,
    divisors: Vec<f64>,
    pub grid: GridSpec,
    pub normalization: Normalization,
}

impl RegionSample {
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn len(&self) -> usize {
        self.grid_index.len()
    }
    pub fn is_empty(&self) -> bool {
        self.grid_index.is_empty()
    }
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
    pub fn tau(&self, k: usize) -> &[f64] {
        &self.tau[k * self.n..(k + 1) * self.n]
    }
    pub fn x(&self, k: usize) -> &[f64] {
        &self.x[k * self.n..(k + 1) * self.n]
    }
    /// Raw throughput of point `k`.
    pub fn raw(&self, k: usize) -> &[f64] {
        &self.s[k * self.n..(k + 1) * self.n]
    }
    /// Throughput of point `k` under the sample's normalisation.
    pub fn values(&self, k: usize) -> Vec<f64> {
        self.raw(k)
            .iter()
            .zip(&self.divisors)
            .map(|(s, d)| s / d)
            .collect()
    }
    pub fn flat_index(&self, k: usize) -> usize {
        self.grid_index[k]
    }
    /// Per-axis grid coordinates of point `k`.
    pub fn multi_index(&self, k: usize) -> Vec<usize> {
        let mut rest = self.grid_index[k];
        let mut idx = vec![0; self.n];
        for i in (0..self.n).rev() {
            idx[i] = rest % self.shape[i];
            rest /= self.shape[i];
        }
        idx
    }
    pub fn attempt_vector(&self, k: usize) -> AttemptVector {
        AttemptVector::from_x(self.x(k).to_vec()).expect("sampled x is finite and non-negative")
    }

    fn subset(&self, keep: &[bool]) -> RegionSample {
        let n = self.n;
        let mut out = RegionSample {
            grid_index: Vec::new(),
            tau: Vec::new(),
            x: Vec::new(),
            s: Vec::new(),
            ..self.clone()
        };
        for (k, _) in keep.iter().enumerate().filter(|(_, &b)| b) {
            out.grid_index.push(self.grid_index[k]);
            out.tau.extend_from_slice(&self.tau[k * n..(k + 1) * n]);
            out.x.extend_from_slice(&self.x[k * n..(k + 1) * n]);
            out.s.extend_from_slice(&self.s[k * n..(k + 1) * n]);
        }
        out
    }
}

pub fn sample_region(
    p: &WlanParams,
    grid: &GridSpec,
    normalization: Normalization,
) -> Result<RegionSample, RegionError> {
    if grid.points_per_axis < 2 {
        return Err(RegionError::GridTooSmall(grid.points_per_axis));
    }
    let n = p.n();
    let axes: Vec<Vec<(f64, f64)>> = (0..n).map(|i| grid.axis(p, i)).collect();
    let shape: Vec<usize> = axes.iter().map(Vec::len).collect();
    let total: u128 = shape.iter().map(|&l| l as u128).product();
    if total > grid.max_points as u128 {
        return Err(RegionError::GridTooLarge {
            points: total,
            cap: grid.max_points,
        });
    }
    let m = total as usize;
    let mut tau = vec![0.0; m * n];
    let mut x = vec![0.0; m * n];
    let mut s = vec![0.0; m * n];
    tau.par_chunks_mut(n)
        .zip(x.par_chunks_mut(n))
        .zip(s.par_chunks_mut(n))
        .enumerate()
        .for_each(|(k, ((tau_k, x_k), s_k))| {
            let mut rest = k;
            for i in (0..n).rev() {
                let (t, xv) = axes[i][rest % shape[i]];
                rest /= shape[i];
                tau_k[i] = t;
                x_k[i] = xv;
            }
            s_k.copy_from_slice(throughput_of_x(x_k, p).s());
        });
    let divisors = match normalization {
        Normalization::Raw => vec![1.0; n],
        Normalization::PhyRate => (0..n).map(|i| p.phy_rate(i)).collect(),
    };
    Ok(RegionSample {
        n,
        shape,
        grid_index: (0..m).collect(),
        tau,
        x,
        s,
        divisors,
        grid: *grid,
        normalization,
    })
}

/// `true` for every point no other point dominates (>= everywhere, > somewhere).
/// `values` holds `n` coordinates per point.
pub fn pareto_mask(values: &[f64], n: usize) -> Vec<bool> {
    let m = values.len().checked_div(n).unwrap_or(0);
    let pt = |k: usize| &values[k * n..(k + 1) * n];
    let mut order: Vec<usize> = (0..m).collect();
    // Lexicographically descending: a dominator always precedes what it dominates.
    order.sort_by(|&a, &b| {
        pt(b)
            .iter()
            .zip(pt(a))
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut keep = vec![false; m];
    if n == 2 {
        // Sweep groups of equal first coordinate.
        let mut best = f64::NEG_INFINITY;
        let mut g = 0;
        while g < m {
            let first = pt(order[g])[0];
            let mut end = g;
            while end < m && pt(order[end])[0] == first {
                end += 1;
            }
            let group_max = pt(order[g])[1];
            if group_max > best {
                for &k in &order[g..end] {
                    keep[k] = pt(k)[1] == group_max;
                }
                best = group_max;
            }
            g = end;
        }
        return keep;
    }
    let mut frontier: Vec<usize> = Vec::new();
    for &k in &order {
        let p = pt(k);
        let dominated = frontier.iter().any(|&f| {
            let q = pt(f);
            q.iter().zip(p).all(|(a, b)| a >= b) && q.iter().zip(p).any(|(a, b)| a > b)
        });
        if !dominated {
            keep[k] = true;
            frontier.push(k);
        }
    }
    keep
}

/// Frontier mask of a sample.
pub fn frontier_mask(sample: &RegionSample) -> Vec<bool> {
    pareto_mask(&sample.s, sample.n)
}

/// The non-dominated points of `sample`, in their original order.
pub fn pareto_filter(sample: &RegionSample) -> RegionSample {
    sample.subset(&frontier_mask(sample))
}

/// Chord between two single-station extremes whose midpoint no sampled
/// point reaches.
#[derive(Debug, Clone, PartialEq)]
pub struct NonConvexityCertificate {
    pub stations: (usize, usize),
    pub endpoint_a: Vec<f64>,
    pub endpoint_b: Vec<f64>,
    pub midpoint: Vec<f64>,
    /// `min_k max_i (midpoint_i - s_k,i)` over every sampled point; positive
    /// means no point dominates the midpoint.
    pub margin: f64,
    /// Change of the margin when only every other grid line is used.
    pub resolution: f64,
    pub certified: bool,
}

fn chord_margin<'a>(mid: &[f64], points: impl Iterator<Item = &'a [f64]>) -> f64 {
    points
        .map(|s| {
            mid.iter()
                .zip(s)
                .map(|(m, v)| m - v)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Best chord-midpoint infeasibility certificate over all station pairs.
/// `None` for a single station.
pub fn nonconvexity_certificate(sample: &RegionSample) -> Option<NonConvexityCertificate> {
    let n = sample.n();
    if n < 2 || sample.is_empty() {
        return None;
    }
    let values: Vec<Vec<f64>> = (0..sample.len()).map(|k| sample.values(k)).collect();
    let coarse: Vec<bool> = (0..sample.len())
        .map(|k| sample.multi_index(k).iter().all(|i| i % 2 == 0))
        .collect();
    let extreme = |i: usize| {
        (0..values.len())
            .max_by(|&a, &b| values[a][i].total_cmp(&values[b][i]).then(b.cmp(&a)))
            .expect("non-empty")
    };
    let mut best: Option<NonConvexityCertificate> = None;
    for i in 0..n {
        for j in i + 1..n {
            let (ea, eb) = (&values[extreme(i)], &values[extreme(j)]);
            let mid: Vec<f64> = ea.iter().zip(eb).map(|(u, v)| 0.5 * (u + v)).collect();
            let margin = chord_margin(&mid, values.iter().map(Vec::as_slice));
            let margin_coarse = chord_margin(
                &mid,
                values
                    .iter()
                    .zip(&coarse)
                    .filter(|(_, &c)| c)
                    .map(|(v, _)| v.as_slice()),
            );
            let resolution = (margin_coarse - margin).abs();
            let cert = NonConvexityCertificate {
                stations: (i, j),
                endpoint_a: ea.clone(),
                endpoint_b: eb.clone(),
                midpoint: mid,
                margin,
                resolution,
                certified: margin > 0.0 && margin >= 10.0 * resolution,
            };
            if best.as_ref().is_none_or(|b| cert.margin > b.margin) {
                best = Some(cert);
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub trials: usize,
    pub max_residual: f64,
    pub all_in_box: bool,
    /// Trials whose residual exceeded `tol` or whose witness left the box.
    pub failures: usize,
    pub tol: f64,
    pub certificate: Option<NonConvexityCertificate>,
}

impl ProbeReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.max_residual <= self.tol
    }
}

/// Checks `trials` random log-midpoints between interior sample points
/// against their witnesses, and looks for a chord midpoint the raw region
/// misses.
pub fn convexity_probe(
    sample: &RegionSample,
    p: &WlanParams,
    trials: usize,
    tol: f64,
    seed: u64,
) -> Result<ProbeReport, RegionError> {
    let certificate = nonconvexity_certificate(sample);
    if trials == 0 {
        return Ok(ProbeReport {
            trials,
            max_residual: 0.0,
            all_in_box: true,
            failures: 0,
            tol,
            certificate,
        });
    }
    let interior: Vec<usize> = (0..sample.len())
        .filter(|&k| sample.tau(k).iter().all(|&t| t > 0.0 && t < 1.0))
        .collect();
    if interior.is_empty() {
        return Err(RegionError::NoInterior);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_residual: f64 = 0.0;
    let mut all_in_box = true;
    let mut failures = 0;
    for _ in 0..trials {
        let a = interior[rng.gen_range(0..interior.len())];
        let b = interior[rng.gen_range(0..interior.len())];
        let alpha: f64 = rng.gen();
        let w = midpoint_witness(
            &sample.attempt_vector(a),
            &sample.attempt_vector(b),
            alpha,
            p,
            Branch::Upper,
        )?;
        let in_box = w.in_box(p);
        max_residual = max_residual.max(w.residual);
        all_in_box &= in_box;
        if w.residual > tol || !in_box {
            failures += 1;
        }
    }
    Ok(ProbeReport {
        trials,
        max_residual,
        all_in_box,
        failures,
        tol,
        certificate,
    })
}

/// `tau1..taun,s1..sn,frontier` rows for every sample point.
pub fn region_csv(sample: &RegionSample, frontier: &[bool]) -> String {
    let n = sample.n();
    let mut header: Vec<String> = (1..=n).map(|i| format!("tau{i}")).collect();
    header.extend((1..=n).map(|i| format!("s{i}")));
    header.push("frontier".into());
    let mut out = csv_line(header);
    for (k, &on) in frontier.iter().enumerate().take(sample.len()) {
        let mut row: Vec<String> = sample.tau(k).iter().map(|&v| g12(v)).collect();
        row.extend(sample.values(k).into_iter().map(g12));
        row.push(if on { "1" } else { "0" }.into());
        out.push_str(&csv_line(row));
    }
    out
}

/// File payloads for the two-station region and log-region plots.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureData {
    pub region_csv: String,
    pub logregion_csv: String,
    pub frontier_csv: String,
}

/// Region, log-region and frontier data for two stations, normalised by PHY
/// rate, on a `resolution x resolution` geometric grid.
pub fn figure_data(p: &WlanParams, resolution: usize) -> Result<FigureData, RegionError> {
    figure_data_with(p, &GridSpec::with_points(resolution))
}

pub fn figure_data_with(p: &WlanParams, grid: &GridSpec) -> Result<FigureData, RegionError> {
    if p.n() != 2 {
        return Err(RegionError::NotTwoStations(p.n()));
    }
    let sample = sample_region(p, grid, Normalization::PhyRate)?;
    let mask = frontier_mask(&sample);
    figure_files(&sample, &mask)
}

/// Figure payloads for an existing two-station sample and its frontier mask.
pub fn figure_files(sample: &RegionSample, mask: &[bool]) -> Result<FigureData, RegionError> {
    if sample.n() != 2 {
        return Err(RegionError::NotTwoStations(sample.n()));
    }
    let region = region_csv(sample, mask);

    let mut log = csv_line(["log_s1", "log_s2", "frontier"]);
    for (k, &on) in mask.iter().enumerate().take(sample.len()) {
        if sample.tau(k).iter().all(|&t| t > 0.0) {
            let v = sample.values(k);
            let flag = if on { "1" } else { "0" };
            log.push_str(&csv_line([g12(v[0].ln()), g12(v[1].ln()), flag.into()]));
        }
    }

    let mut front: Vec<usize> = (0..sample.len()).filter(|&k| mask[k]).collect();
    front.sort_by(|&a, &b| sample.raw(a)[0].total_cmp(&sample.raw(b)[0]));
    let mut frontier = csv_line(["tau1", "tau2", "s1", "s2"]);
    for k in front {
        let v = sample.values(k);
        let t = sample.tau(k);
        frontier.push_str(&csv_line([g12(t[0]), g12(t[1]), g12(v[0]), g12(v[1])]));
    }
    Ok(FigureData {
        region_csv: region,
        logregion_csv: log,
        frontier_csv: frontier,
    })
}

/// The attempt probability stored for a saturated grid endpoint.
pub fn saturated_tau() -> f64 {
    SATURATION_X / (1.0 + SATURATION_X)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::throughput;

    fn two_station() -> WlanParams {
        WlanParams::symmetric(2, 10.0, 100.0, 100.0, 1000.0).unwrap()
    }

    /// Symmetric optimum of x / (a + 2x + x^2) by golden-section search.
    fn symmetric_peak(a: f64) -> (f64, f64) {
        let f = |x: f64| x / (a + 2.0 * x + x * x);
        let (mut lo, mut hi) = (1e-6, 10.0);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let (c, d) = (hi - g * (hi - lo), lo + g * (hi - lo));
            if f(c) > f(d) {
                hi = d;
            } else {
                lo = c;
            }
        }
        let x = 0.5 * (lo + hi);
        (x, f(x))
    }

    #[test]
    fn peak_oracle() {
        let (x, s) = symmetric_peak(0.1);
        assert!((x - 0.1f64.sqrt()).abs() < 1e-7);
        assert!((s - 0.37987).abs() < 1e-5);
    }

    #[test]
    fn single_station_uniform_grid() {
        let p = WlanParams::symmetric(1, 10.0, 100.0, 100.0, 1000.0).unwrap();
        let grid = GridSpec {
            points_per_axis: 3,
            spacing: Spacing::UniformTau,
            ..GridSpec::default()
        };
        let s = sample_region(&p, &grid, Normalization::Raw).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.raw(0), &[0.0]);
        // tau = 0.5: x = 1, X = 0.1 + 1 = 1.1
        assert!((s.raw(1)[0] - 10.0 / 1.1).abs() < 1e-12);
        assert!((s.raw(2)[0] - 10.0).abs() < 1e-7);
        assert_eq!(s.tau(2)[0], saturated_tau());
    }

    #[test]
    fn grid_validation() {
        let p = two_station();
        assert!(matches!(
            sample_region(&p, &GridSpec::with_points(1), Normalization::Raw),
            Err(RegionError::GridTooSmall(1))
        ));
        let grid = GridSpec {
            max_points: 100,
            ..GridSpec::with_points(11)
        };
        assert!(matches!(
            sample_region(&p, &grid, Normalization::Raw),
            Err(RegionError::GridTooLarge { points: 121, .. })
        ));
    }

    #[test]
    fn corners_and_intercepts() {
        let p = two_station();
        let s = sample_region(&p, &GridSpec::with_points(21), Normalization::PhyRate).unwrap();
        assert_eq!(s.values(0), vec![0.0, 0.0]);
        let last_row = 20 * 21;
        let v = s.values(last_row);
        assert!((v[0] - 1.0).abs() < 1e-8 && v[1] == 0.0);
        assert_eq!(s.multi_index(last_row), vec![20, 0]);
    }

    #[test]
    fn stored_values_match_model() {
        let p = WlanParams::new(9.0, 120.0, 100.0, vec![800.0, 1200.0], vec![0.7, 1.0]).unwrap();
        let s = sample_region(&p, &GridSpec::with_points(9), Normalization::Raw).unwrap();
        for k in 0..s.len() {
            assert!(s.tau(k).iter().zip(p.tau_bar()).all(|(t, c)| t <= c));
            let t = AttemptVector::from_tau(s.tau(k).to_vec()).unwrap();
            let direct = throughput(&t, &p).unwrap();
            for (a, b) in direct.s().iter().zip(s.raw(k)) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300) || (a - b).abs() < 1e-7 * b);
            }
        }
    }

    #[test]
    fn pareto_examples() {
        let pts = [1.0, 0.0, 0.0, 1.0, 0.3, 0.3, 0.2, 0.2];
        assert_eq!(pareto_mask(&pts, 2), vec![true, true, true, false]);
        assert_eq!(pareto_mask(&[0.4, 0.1], 2), vec![true]);
        // duplicates are not dominated by each other
        assert_eq!(
            pareto_mask(&[0.5, 0.5, 0.5, 0.5, 0.5, 0.4], 2),
            vec![true, true, false]
        );
        let pts3 = [
            1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.2, 0.2, 0.2, 0.1, 0.2, 0.2, 0.2, 0.2, 0.2,
        ];
        assert_eq!(pareto_mask(&pts3, 3), vec![true, true, true, false, true]);
    }

    #[test]
    fn fast_path_agrees_with_general() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<f64> = (0..400)
            .map(|_| (rng.gen_range(0..20) as f64) / 20.0)
            .collect();
        let fast = pareto_mask(&pts, 2);
        let brute: Vec<bool> = (0..200)
            .map(|k| {
                !(0..200).any(|j| {
                    let (a, b) = (&pts[2 * j..2 * j + 2], &pts[2 * k..2 * k + 2]);
                    a[0] >= b[0] && a[1] >= b[1] && (a[0] > b[0] || a[1] > b[1])
                })
            })
            .collect();
        assert_eq!(fast, brute);
    }

    #[test]
    fn symmetric_frontier_point() {
        let p = two_station();
        let s = sample_region(&p, &GridSpec::default(), Normalization::PhyRate).unwrap();
        let front = pareto_filter(&s);
        let best = (0..front.len())
            .map(|k| front.values(k))
            .filter(|v| (v[0] - v[1]).abs() < 1e-12)
            .map(|v| v[0])
            .fold(0.0, f64::max);
        let (_, peak) = symmetric_peak(0.1);
        assert!((best - peak).abs() < 1e-3, "best {best}");
    }

    #[test]
    fn region_grows_with_caps() {
        let small = WlanParams::new(10.0, 100.0, 100.0, vec![1000.0; 2], vec![0.3, 0.3]).unwrap();
        let large = small.with_tau_bar(vec![0.6, 0.6]).unwrap();
        let uniform = |m| GridSpec {
            points_per_axis: m,
            spacing: Spacing::UniformTau,
            ..GridSpec::default()
        };
        let a = sample_region(&small, &uniform(13), Normalization::Raw).unwrap();
        let b = sample_region(&large, &uniform(25), Normalization::Raw).unwrap();
        for k in 0..a.len() {
            let v = a.raw(k);
            let covered =
                (0..b.len()).any(|j| b.raw(j).iter().zip(v).all(|(u, w)| *u >= w - 1e-12));
            assert!(covered, "point {k} not covered");
        }
    }

    #[test]
    fn identical_stations_are_symmetric() {
        let p = WlanParams::symmetric(2, 10.0, 150.0, 100.0, 1000.0).unwrap();
        let s = sample_region(&p, &GridSpec::with_points(15), Normalization::Raw).unwrap();
        for k in 0..s.len() {
            let idx = s.multi_index(k);
            let swapped = idx[1] * 15 + idx[0];
            assert_eq!(s.raw(k)[0], s.raw(swapped)[1]);
        }
    }

    #[test]
    fn probe_passes_and_certifies_nonconvexity() {
        let p = two_station();
        let s = sample_region(&p, &GridSpec::with_points(81), Normalization::PhyRate).unwrap();
        let r = convexity_probe(&s, &p, 300, 1e-9, 11).unwrap();
        assert!(r.passed(), "{r:?}");
        let c = r.certificate.unwrap();
        assert!((c.midpoint[0] - 0.5).abs() < 1e-8 && (c.midpoint[1] - 0.5).abs() < 1e-8);
        assert!(c.margin > 0.1 && c.certified, "{c:?}");
        let empty = convexity_probe(&s, &p, 0, 1e-9, 0).unwrap();
        assert!(empty.passed() && empty.trials == 0);
    }

    #[test]
    fn capped_probe_stays_in_box() {
        let p = WlanParams::new(
            5.0,
            130.0,
            100.0,
            vec![1000.0, 500.0, 1500.0],
            vec![0.2, 0.5, 0.05],
        )
        .unwrap();
        let s = sample_region(&p, &GridSpec::with_points(9), Normalization::Raw).unwrap();
        let r = convexity_probe(&s, &p, 200, 1e-9, 5).unwrap();
        assert!(r.passed() && r.all_in_box, "{r:?}");
    }

    #[test]
    fn probe_needs_interior() {
        let p = WlanParams::new(10.0, 100.0, 100.0, vec![1.0, 1.0], vec![0.0, 1.0]).unwrap();
        let s = sample_region(&p, &GridSpec::with_points(5), Normalization::Raw).unwrap();
        assert!(matches!(
            convexity_probe(&s, &p, 3, 1e-9, 0),
            Err(RegionError::NoInterior)
        ));
    }

    #[test]
    fn figure_files() {
        let p = two_station();
        let fig = figure_data(&p, 31).unwrap();
        let mut lines = fig.region_csv.lines();
        assert_eq!(lines.next(), Some("tau1,tau2,s1,s2,frontier"));
        assert_eq!(fig.region_csv.lines().count(), 31 * 31 + 1);
        assert_eq!(fig.logregion_csv.lines().count(), 30 * 30 + 1);
        assert!(!fig.logregion_csv.contains("inf"));
        assert!(fig.frontier_csv.starts_with("tau1,tau2,s1,s2\n"));
        let last: Vec<f64> = fig
            .frontier_csv
            .lines()
            .last()
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        assert!((last[2] - 1.0).abs() < 1e-9 && last[3] == 0.0);
        assert!(matches!(
            figure_data(&WlanParams::symmetric(3, 1.0, 1.0, 1.0, 1.0).unwrap(), 5),
            Err(RegionError::NotTwoStations(3))
        ));
    }
}
