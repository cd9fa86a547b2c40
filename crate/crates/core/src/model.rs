//! Analytic per-station throughput of an 802.11e WLAN.
//!
//! Time is divided into MAC slots: an idle PHY slot (`sigma`), a successful
//! transmission (`t_s`) or a collision (`t_c`). Station `i` attempts in a slot
//! with probability `tau_i`. The model is evaluated either directly in `tau`
//! or in the transformed coordinates `x_i = tau_i / (1 - tau_i)`, where the
//! mean slot length collapses to the polynomial
//!
//! ```text
//! X(x) = a + K * sum(x) + prod(1 + x) - 1,   a = sigma / t_c,  K = t_s / t_c - 1
//! ```
//!
//! and `s_i = x_i * (L_i / t_c) / X(x)`.

use std::path::Path;

use thiserror::Error;

use crate::config::{Config, ConfigError};

/// Finite stand-in for `x = +inf` (an attempt probability of exactly one).
/// The relative error on any throughput is below `a / (a + x) <= 1e-9`.
pub const SATURATION_X: f64 = 1e9;

/// Above this many stations (or any `x` above [`DIRECT_PRODUCT_MAX_X`]) the
/// product `prod(1 + x)` is accumulated as a sum of `ln_1p` terms.
pub const DIRECT_PRODUCT_MAX_N: usize = 16;
pub const DIRECT_PRODUCT_MAX_X: f64 = 1e6;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("attempt probability {value} at station {index} is outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },
    #[error(
        "attempt probability 1 at station {index} is saturated (x = inf); \
         use the large-x surrogate x = {SATURATION_X:e}"
    )]
    Saturated { index: usize },
    #[error("x = {value} at station {index} must be finite and non-negative")]
    InvalidX { index: usize, value: f64 },
    #[error("expected {expected} stations, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("contention window {0} must be at least 2")]
    ContentionWindow(u32),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// PHY/MAC constants of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct WlanParams {
    n: usize,
    sigma: f64,
    t_s: f64,
    t_c: f64,
    payloads: Vec<f64>,
    tau_bar: Vec<f64>,
}

impl WlanParams {
    pub fn new(
        sigma: f64,
        t_s: f64,
        t_c: f64,
        payloads: Vec<f64>,
        tau_bar: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let n = payloads.len();
        let bad = |m: String| Err(ModelError::InvalidParams(m));
        if n == 0 {
            return bad("at least one station is required".into());
        }
        if ![sigma, t_s, t_c].iter().all(|v| v.is_finite()) {
            return bad("durations must be finite".into());
        }
        if !(sigma > 0.0 && sigma <= t_c && t_c <= t_s) {
            return bad(format!(
                "durations must satisfy 0 < sigma <= t_c <= t_s (got sigma={sigma}, t_c={t_c}, t_s={t_s})"
            ));
        }
        if let Some((i, l)) = payloads
            .iter()
            .enumerate()
            .find(|(_, l)| !(l.is_finite() && **l > 0.0))
        {
            return bad(format!("payload of station {i} must be positive, got {l}"));
        }
        if tau_bar.len() != n {
            return bad(format!(
                "tau_bar has {} entries for {n} stations",
                tau_bar.len()
            ));
        }
        if let Some((i, c)) = tau_bar
            .iter()
            .enumerate()
            .find(|(_, c)| !(0.0..=1.0).contains(*c))
        {
            return bad(format!(
                "tau_bar of station {i} must lie in [0, 1], got {c}"
            ));
        }
        Ok(WlanParams {
            n,
            sigma,
            t_s,
            t_c,
            payloads,
            tau_bar,
        })
    }

    /// `n` identical stations with payload `payload` and no attempt caps.
    pub fn symmetric(
        n: usize,
        sigma: f64,
        t_s: f64,
        t_c: f64,
        payload: f64,
    ) -> Result<Self, ModelError> {
        Self::new(sigma, t_s, t_c, vec![payload; n], vec![1.0; n])
    }

    /// Reads keys `n`, `sigma`, `t_s`, `t_c`, `payloads`, `tau_bar` (optional,
    /// defaults to all ones). Unknown keys are left for other consumers.
    pub fn from_config(cfg: &Config) -> Result<Self, ModelError> {
        let n = cfg.require_usize("n")?;
        let payloads = cfg.require_f64_list("payloads")?;
        if payloads.len() != n {
            return Err(ModelError::InvalidParams(format!(
                "`payloads` has {} entries but n = {n}",
                payloads.len()
            )));
        }
        let tau_bar = cfg.get_f64_list("tau_bar")?.unwrap_or_else(|| vec![1.0; n]);
        Self::new(
            cfg.require_f64("sigma")?,
            cfg.require_f64("t_s")?,
            cfg.require_f64("t_c")?,
            payloads,
            tau_bar,
        )
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_config(&Config::load(path)?)
    }

    pub fn with_tau_bar(&self, tau_bar: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(
            self.sigma,
            self.t_s,
            self.t_c,
            self.payloads.clone(),
            tau_bar,
        )
    }

    pub fn with_payloads(&self, payloads: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(
            self.sigma,
            self.t_s,
            self.t_c,
            payloads,
            self.tau_bar.clone(),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn t_s(&self) -> f64 {
        self.t_s
    }
    pub fn t_c(&self) -> f64 {
        self.t_c
    }
    pub fn payloads(&self) -> &[f64] {
        &self.payloads
    }
    pub fn tau_bar(&self) -> &[f64] {
        &self.tau_bar
    }

    /// `sigma / t_c`, in (0, 1].
    pub fn a(&self) -> f64 {
        self.sigma / self.t_c
    }

    /// `t_s / t_c - 1`, non-negative.
    pub fn big_k(&self) -> f64 {
        self.t_s / self.t_c - 1.0
    }

    /// Cap on `x_i`; `+inf` when `tau_bar_i = 1`.
    pub fn x_bar(&self, i: usize) -> f64 {
        let c = self.tau_bar[i];
        if c >= 1.0 {
            f64::INFINITY
        } else {
            c / (1.0 - c)
        }
    }

    /// Cap on `x_i` with the saturation surrogate substituted for `+inf`.
    pub fn x_bar_finite(&self, i: usize) -> f64 {
        self.x_bar(i).min(SATURATION_X)
    }

    /// `L_i / t_c`, the numerator scale of the x-form.
    pub fn rate_scale(&self, i: usize) -> f64 {
        self.payloads[i] / self.t_c
    }

    /// `L_i / t_s`, the throughput of station `i` transmitting alone with
    /// `tau_i -> 1` ("PHY rate" normalisation).
    pub fn phy_rate(&self, i: usize) -> f64 {
        self.payloads[i] / self.t_s
    }

    pub(crate) fn check_len(&self, got: usize) -> Result<(), ModelError> {
        if got == self.n {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch {
                expected: self.n,
                got,
            })
        }
    }
}

pub fn tau_to_x(tau: f64) -> Result<f64, ModelError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(ModelError::InvalidProbability {
            index: 0,
            value: tau,
        });
    }
    if tau == 1.0 {
        return Err(ModelError::Saturated { index: 0 });
    }
    Ok(tau / (1.0 - tau))
}

pub fn x_to_tau(x: f64) -> Result<f64, ModelError> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(ModelError::InvalidX { index: 0, value: x });
    }
    Ok(x / (1.0 + x))
}

/// Attempt probability of a station with `CW_max = CW_min` that has a frame
/// ready with probability `q` when it wins the countdown. Post-backoff is
/// ignored, so the result is `min(2q / cw_min, 1)`.
pub fn tau_from_mac(q: f64, cw_min: u32) -> Result<f64, ModelError> {
    if cw_min < 2 {
        return Err(ModelError::ContentionWindow(cw_min));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(ModelError::InvalidProbability { index: 0, value: q });
    }
    Ok((2.0 * q / f64::from(cw_min)).min(1.0))
}

/// Per-station attempt probabilities together with their x-coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AttemptVector {
    tau: Vec<f64>,
    x: Vec<f64>,
}

impl AttemptVector {
    /// Every `tau_i` must lie in `[0, 1)`.
    pub fn from_tau(tau: Vec<f64>) -> Result<Self, ModelError> {
        let x = tau
            .iter()
            .enumerate()
            .map(|(index, &t)| {
                tau_to_x(t).map_err(|e| match e {
                    ModelError::InvalidProbability { value, .. } => {
                        ModelError::InvalidProbability { index, value }
                    }
                    ModelError::Saturated { .. } => ModelError::Saturated { index },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(AttemptVector { tau, x })
    }

    /// Like [`from_tau`](Self::from_tau) but maps `tau_i = 1` onto the
    /// saturation surrogate [`SATURATION_X`].
    pub fn from_tau_saturating(tau: &[f64]) -> Result<Self, ModelError> {
        let x = tau
            .iter()
            .enumerate()
            .map(|(index, &t)| match tau_to_x(t) {
                Ok(x) => Ok(x.min(SATURATION_X)),
                Err(ModelError::Saturated { .. }) => Ok(SATURATION_X),
                Err(_) => Err(ModelError::InvalidProbability { index, value: t }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_x(x)
    }

    pub fn from_x(x: Vec<f64>) -> Result<Self, ModelError> {
        let tau = x
            .iter()
            .enumerate()
            .map(|(index, &v)| x_to_tau(v).map_err(|_| ModelError::InvalidX { index, value: v }))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(AttemptVector { tau, x })
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    /// True when every `x_i <= x_bar_i`, i.e. `tau` lies in `D(tau_bar)`.
    pub fn respects_caps(&self, p: &WlanParams) -> bool {
        self.x.len() == p.n() && self.x.iter().enumerate().all(|(i, &x)| x <= p.x_bar(i))
    }

    /// Strictly inside the unit cube: no station is off or saturated.
    pub fn is_interior(&self) -> bool {
        self.tau.iter().all(|&t| t > 0.0 && t < 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotStats {
    pub p_idle: f64,
    pub p_succ: f64,
    pub p_coll: f64,
    pub mean_slot: f64,
}

/// Probabilities of `prod_{k != i} (1 - tau_k)` for every `i`, without division.
fn others_silent(tau: &[f64]) -> Vec<f64> {
    let n = tau.len();
    let mut out = vec![1.0; n];
    let mut prefix = 1.0;
    for i in 0..n {
        out[i] = prefix;
        prefix *= 1.0 - tau[i];
    }
    let mut suffix = 1.0;
    for i in (0..n).rev() {
        out[i] *= suffix;
        suffix *= 1.0 - tau[i];
    }
    out
}

pub fn slot_stats(t: &AttemptVector, p: &WlanParams) -> Result<SlotStats, ModelError> {
    p.check_len(t.len())?;
    let tau = t.tau();
    let p_idle: f64 = tau.iter().map(|t| 1.0 - t).product();
    let p_succ: f64 = others_silent(tau).iter().zip(tau).map(|(o, t)| t * o).sum();
    let p_coll = (1.0 - p_idle - p_succ).max(0.0);
    Ok(SlotStats {
        p_idle,
        p_succ,
        p_coll,
        mean_slot: p.sigma() * p_idle + p.t_s() * p_succ + p.t_c() * p_coll,
    })
}

/// `sum_i ln(1 + x_i)`.
pub(crate) fn ln_prod_1p(x: &[f64]) -> f64 {
    x.iter().map(|v| v.ln_1p()).sum()
}

/// `prod(1 + x) - 1`.
fn prod_1p_minus_one(x: &[f64]) -> f64 {
    let direct = x.len() <= DIRECT_PRODUCT_MAX_N && x.iter().all(|&v| v <= DIRECT_PRODUCT_MAX_X);
    if direct {
        x.iter().map(|v| 1.0 + v).product::<f64>() - 1.0
    } else {
        ln_prod_1p(x).exp_m1()
    }
}

/// `X(x) = a + K sum(x) + prod(1 + x) - 1` for raw constants.
pub(crate) fn big_x(x: &[f64], a: f64, k: f64) -> f64 {
    a + k * x.iter().sum::<f64>() + prod_1p_minus_one(x)
}

/// `ln X(x)`, finite even when `prod(1 + x)` overflows.
pub(crate) fn ln_big_x(x: &[f64], a: f64, k: f64) -> f64 {
    let lnp = ln_prod_1p(x);
    if lnp < 600.0 {
        big_x(x, a, k).ln()
    } else {
        let rest = a + k * x.iter().sum::<f64>() - 1.0;
        lnp + (rest * (-lnp).exp()).ln_1p()
    }
}

/// Mean MAC slot length in units of `t_c`, as a function of `x`.
pub fn x_denominator(x: &[f64], p: &WlanParams) -> Result<f64, ModelError> {
    p.check_len(x.len())?;
    if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| v.is_nan() || **v < 0.0) {
        return Err(ModelError::InvalidX { index, value });
    }
    Ok(big_x(x, p.a(), p.big_k()))
}

/// Per-station throughputs (bits per time unit) and their natural logs.
#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputVector {
    s: Vec<f64>,
    log_s: Vec<f64>,
}

impl ThroughputVector {
    pub fn from_rates(s: Vec<f64>) -> Self {
        let log_s = s.iter().map(|v| v.ln()).collect();
        ThroughputVector { s, log_s }
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn log_s(&self) -> &[f64] {
        &self.log_s
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Divides every rate by its station's PHY rate `L_i / t_s`.
    pub fn normalized(&self, p: &WlanParams) -> ThroughputVector {
        let s: Vec<f64> = self
            .s
            .iter()
            .enumerate()
            .map(|(i, v)| v / p.phy_rate(i))
            .collect();
        let log_s = self
            .log_s
            .iter()
            .enumerate()
            .map(|(i, v)| v - p.phy_rate(i).ln())
            .collect();
        ThroughputVector { s, log_s }
    }
}

/// Throughput in x-form; this is the canonical evaluation.
pub fn throughput(t: &AttemptVector, p: &WlanParams) -> Result<ThroughputVector, ModelError> {
    p.check_len(t.len())?;
    Ok(throughput_of_x(t.x(), p))
}

pub(crate) fn throughput_of_x(x: &[f64], p: &WlanParams) -> ThroughputVector {
    let (a, k) = (p.a(), p.big_k());
    let big = big_x(x, a, k);
    let ln_big = if big.is_finite() {
        big.ln()
    } else {
        ln_big_x(x, a, k)
    };
    let mut s = Vec::with_capacity(x.len());
    let mut log_s = Vec::with_capacity(x.len());
    for (i, &xi) in x.iter().enumerate() {
        let ls = xi.ln() + p.rate_scale(i).ln() - ln_big;
        log_s.push(ls);
        s.push(if big.is_finite() {
            xi * p.rate_scale(i) / big
        } else {
            ls.exp()
        });
    }
    ThroughputVector { s, log_s }
}

/// Throughput evaluated directly from the slot probabilities:
/// `tau_i prod_{k != i}(1 - tau_k) L_i / (sigma P_idle + t_s P_succ + t_c P_coll)`.
pub fn throughput_tau_form(
    t: &AttemptVector,
    p: &WlanParams,
) -> Result<ThroughputVector, ModelError> {
    let stats = slot_stats(t, p)?;
    let tau = t.tau();
    let s = others_silent(tau)
        .iter()
        .zip(tau)
        .enumerate()
        .map(|(i, (o, t))| t * o * p.payloads()[i] / stats.mean_slot)
        .collect();
    Ok(ThroughputVector::from_rates(s))
}
