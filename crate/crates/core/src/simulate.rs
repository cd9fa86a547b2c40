//! Slot-level Monte Carlo simulation of the throughput model.
//!
//! Every MAC slot each station transmits independently with probability
//! `tau_i`. No transmission gives an idle slot of length `sigma`, exactly one
//! gives a success of length `t_s` that delivers `L_i` bits, and two or more
//! give a collision of length `t_c`. Each station draws from its own ChaCha8
//! stream of the master seed, so adding a station leaves the draws of the
//! others unchanged.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::format::{csv_line, g12};
use crate::model::{throughput, AttemptVector, ModelError, WlanParams, SATURATION_X};

pub const DEFAULT_BATCHES: usize = 20;
pub const Z_LIMIT: f64 = 4.0;
pub const REL_LIMIT: f64 = 0.01;
pub const COMPARE_CSV_HEADER: &str = "station,s_analytic,s_hat,stderr,z";

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation settings: {0}")]
    InvalidConfig(String),
    #[error(
        "station {index} has attempt probability 1 and is not simulated; \
         its throughput is the analytic limit (evaluate the model with the saturation surrogate)"
    )]
    Saturated { index: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub slots: u64,
    pub seed: u64,
    pub batches: usize,
}

impl SimConfig {
    pub fn new(slots: u64, seed: u64, batches: usize) -> Result<Self, SimError> {
        if batches < 2 || slots < batches as u64 {
            return Err(SimError::InvalidConfig(format!(
                "need slots >= batches >= 2, got slots = {slots}, batches = {batches}"
            )));
        }
        Ok(SimConfig {
            slots,
            seed,
            batches,
        })
    }

    pub fn with_slots(slots: u64, seed: u64) -> Result<Self, SimError> {
        Self::new(slots, seed, DEFAULT_BATCHES)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SlotCounts {
    pub idle: u64,
    pub success: Vec<u64>,
    pub collision: u64,
}

impl SlotCounts {
    fn zeros(n: usize) -> Self {
        SlotCounts {
            idle: 0,
            success: vec![0; n],
            collision: 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.idle + self.success.iter().sum::<u64>() + self.collision
    }

    pub fn total_success(&self) -> u64 {
        self.success.iter().sum()
    }

    /// Sum of slot durations.
    pub fn elapsed(&self, p: &WlanParams) -> f64 {
        p.sigma() * self.idle as f64
            + p.t_s() * self.total_success() as f64
            + p.t_c() * self.collision as f64
    }

    fn add(&mut self, other: &SlotCounts) {
        self.idle += other.idle;
        self.collision += other.collision;
        for (a, b) in self.success.iter_mut().zip(&other.success) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub s_hat: Vec<f64>,
    pub stderr: Vec<f64>,
    pub counts: SlotCounts,
    pub elapsed_model_time: f64,
}

fn rates(counts: &SlotCounts, p: &WlanParams) -> Vec<f64> {
    let elapsed = counts.elapsed(p);
    counts
        .success
        .iter()
        .zip(p.payloads())
        .map(|(&c, &l)| c as f64 * l / elapsed)
        .collect()
}

fn check_inputs(p: &WlanParams, t: &AttemptVector) -> Result<(), SimError> {
    p.check_len(t.len())?;
    match t.x().iter().position(|&x| x >= SATURATION_X) {
        Some(index) => Err(SimError::Saturated { index }),
        None => Ok(()),
    }
}

pub fn run_slots(
    p: &WlanParams,
    t: &AttemptVector,
    cfg: &SimConfig,
) -> Result<SimResult, SimError> {
    check_inputs(p, t)?;
    SimConfig::new(cfg.slots, cfg.seed, cfg.batches)?;
    let n = p.n();
    let tau = t.tau();
    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            rng
        })
        .collect();

    let b = cfg.batches as u64;
    let mut total = SlotCounts::zeros(n);
    let mut batch_rates: Vec<Vec<f64>> = Vec::with_capacity(cfg.batches);
    for k in 0..b {
        let len = (k + 1) * cfg.slots / b - k * cfg.slots / b;
        let mut counts = SlotCounts::zeros(n);
        for _ in 0..len {
            let mut senders = 0u32;
            let mut last = 0;
            for (i, rng) in rngs.iter_mut().enumerate() {
                if rng.gen::<f64>() < tau[i] {
                    senders += 1;
                    last = i;
                }
            }
            match senders {
                0 => counts.idle += 1,
                1 => counts.success[last] += 1,
                _ => counts.collision += 1,
            }
        }
        batch_rates.push(rates(&counts, p));
        total.add(&counts);
    }

    let bf = cfg.batches as f64;
    let stderr = (0..n)
        .map(|i| {
            let mean = batch_rates.iter().map(|r| r[i]).sum::<f64>() / bf;
            let var = batch_rates
                .iter()
                .map(|r| (r[i] - mean).powi(2))
                .sum::<f64>()
                / (bf - 1.0);
            (var / bf).sqrt()
        })
        .collect();
    Ok(SimResult {
        s_hat: rates(&total, p),
        stderr,
        elapsed_model_time: total.elapsed(p),
        counts: total,
    })
}

/// Seeds for `count` replicas, drawn in order from the master seed.
pub fn replica_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    master.set_stream(u64::MAX);
    (0..count).map(|_| master.next_u64()).collect()
}

/// Runs independent replicas in parallel and pools them: rates are averaged
/// and the standard error is that of the average.
pub fn run_replicas(
    p: &WlanParams,
    t: &AttemptVector,
    cfg: &SimConfig,
    replicas: usize,
) -> Result<SimResult, SimError> {
    if replicas == 0 {
        return Err(SimError::InvalidConfig("need at least one replica".into()));
    }
    if replicas == 1 {
        return run_slots(p, t, cfg);
    }
    let runs = replica_seeds(cfg.seed, replicas)
        .into_par_iter()
        .map(|seed| run_slots(p, t, &SimConfig { seed, ..*cfg }))
        .collect::<Result<Vec<_>, _>>()?;
    let r = replicas as f64;
    let n = p.n();
    let mut counts = SlotCounts::zeros(n);
    for run in &runs {
        counts.add(&run.counts);
    }
    Ok(SimResult {
        s_hat: (0..n)
            .map(|i| runs.iter().map(|x| x.s_hat[i]).sum::<f64>() / r)
            .collect(),
        stderr: (0..n)
            .map(|i| runs.iter().map(|x| x.stderr[i].powi(2)).sum::<f64>().sqrt() / r)
            .collect(),
        elapsed_model_time: runs.iter().map(|x| x.elapsed_model_time).sum(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub station: usize,
    pub s_analytic: f64,
    pub s_hat: f64,
    pub stderr: f64,
    pub z: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub z_limit: f64,
    pub rel_limit: f64,
}

impl CompareReport {
    pub fn max_abs_z(&self) -> f64 {
        self.rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.z.abs() <= self.z_limit && r.rel_err <= self.rel_limit)
    }

    /// Stations are numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{COMPARE_CSV_HEADER}\n");
        for r in &self.rows {
            out += &csv_line([
                r.station.to_string(),
                g12(r.s_analytic),
                g12(r.s_hat),
                g12(r.stderr),
                g12(r.z),
            ]);
        }
        out
    }
}

/// Builds the report from analytic rates and a simulation result. A station
/// with zero analytic rate scores zero when it was never observed to succeed.
pub fn compare_parts(s_analytic: &[f64], sim: &SimResult) -> CompareReport {
    let rows = s_analytic
        .iter()
        .zip(sim.s_hat.iter().zip(&sim.stderr))
        .enumerate()
        .map(|(i, (&s, (&hat, &se)))| {
            let diff = hat - s;
            let z = if diff == 0.0 {
                0.0
            } else if se > 0.0 {
                diff / se
            } else {
                f64::INFINITY.copysign(diff)
            };
            let rel_err = if diff == 0.0 {
                0.0
            } else {
                diff.abs() / s.abs()
            };
            CompareRow {
                station: i + 1,
                s_analytic: s,
                s_hat: hat,
                stderr: se,
                z,
                rel_err,
            }
        })
        .collect();
    CompareReport {
        rows,
        z_limit: Z_LIMIT,
        rel_limit: REL_LIMIT,
    }
}

pub fn compare(
    p: &WlanParams,
    t: &AttemptVector,
    cfg: &SimConfig,
) -> Result<CompareReport, SimError> {
    compare_replicas(p, t, cfg, 1)
}

pub fn compare_replicas(
    p: &WlanParams,
    t: &AttemptVector,
    cfg: &SimConfig,
    replicas: usize,
) -> Result<CompareReport, SimError> {
    let sim = run_replicas(p, t, cfg, replicas)?;
    let analytic = throughput(t, p)?;
    Ok(compare_parts(analytic.s(), &sim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::slot_stats;

    fn params(n: usize) -> WlanParams {
        WlanParams::symmetric(n, 10.0, 100.0, 100.0, 1000.0).unwrap()
    }

    fn tau(v: &[f64]) -> AttemptVector {
        AttemptVector::from_tau(v.to_vec()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(100, 0, 1).is_err());
        assert!(SimConfig::new(10, 0, 20).is_err());
        assert!(SimConfig::new(20, 0, 20).is_ok());
        let bad = SimConfig {
            slots: 5,
            seed: 0,
            batches: 20,
        };
        assert!(run_slots(&params(1), &tau(&[0.5]), &bad).is_err());
    }

    #[test]
    fn silent_network_is_idle() {
        let cfg = SimConfig::with_slots(10_000, 3).unwrap();
        let r = run_slots(&params(2), &tau(&[0.0, 0.0]), &cfg).unwrap();
        assert_eq!(r.counts.idle, 10_000);
        assert_eq!(r.s_hat, vec![0.0, 0.0]);
        assert_eq!(r.elapsed_model_time, 100_000.0);
        let rep = compare(&params(2), &tau(&[0.0, 0.0]), &cfg).unwrap();
        assert!(rep.passed());
        assert_eq!(rep.max_abs_z(), 0.0);
    }

    #[test]
    fn saturated_station_rejected() {
        let t = AttemptVector::from_tau_saturating(&[0.3, 1.0]).unwrap();
        let cfg = SimConfig::with_slots(100, 0).unwrap();
        assert_eq!(
            run_slots(&params(2), &t, &cfg),
            Err(SimError::Saturated { index: 1 })
        );
    }

    #[test]
    fn tallies_and_elapsed_consistent() {
        let p =
            WlanParams::new(9.0, 120.0, 100.0, vec![1000.0, 300.0, 50.0], vec![1.0; 3]).unwrap();
        let cfg = SimConfig::new(100_003, 5, 7).unwrap();
        let r = run_slots(&p, &tau(&[0.1, 0.3, 0.2]), &cfg).unwrap();
        assert_eq!(r.counts.total(), 100_003);
        for i in 0..3 {
            let want = r.counts.success[i] as f64 * p.payloads()[i] / r.elapsed_model_time;
            assert_eq!(r.s_hat[i], want);
        }
    }

    #[test]
    fn single_station_renewal_reward() {
        let cfg = SimConfig::with_slots(1_000_000, 11).unwrap();
        let r = run_slots(&params(1), &tau(&[0.5]), &cfg).unwrap();
        let want = 0.5 * 1000.0 / (0.5 * 10.0 + 0.5 * 100.0);
        assert!((want - 9.0909f64).abs() < 1e-4);
        assert!(
            (r.s_hat[0] - want).abs() <= 3.0 * r.stderr[0],
            "{} +- {}",
            r.s_hat[0],
            r.stderr[0]
        );
    }

    #[test]
    fn two_station_example() {
        let cfg = SimConfig::with_slots(1_000_000, 12).unwrap();
        let r = run_slots(&params(2), &tau(&[0.5, 0.5]), &cfg).unwrap();
        for i in 0..2 {
            assert!((r.s_hat[i] - 10.0 / 3.1).abs() <= 3.0 * r.stderr[i]);
        }
    }

    #[test]
    fn slot_frequencies_match_chi_square() {
        let p =
            WlanParams::new(9.0, 120.0, 100.0, vec![1000.0, 300.0, 50.0], vec![1.0; 3]).unwrap();
        let t = tau(&[0.15, 0.3, 0.25]);
        let slots = 1_000_000u64;
        let r = run_slots(&p, &t, &SimConfig::with_slots(slots, 99).unwrap()).unwrap();
        let st = slot_stats(&t, &p).unwrap();
        let observed = [r.counts.idle, r.counts.total_success(), r.counts.collision];
        let expected = [st.p_idle, st.p_succ, st.p_coll].map(|q| q * slots as f64);
        let chi2: f64 = observed
            .iter()
            .zip(&expected)
            .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
            .sum();
        // 99.9% quantile of chi-square with 2 degrees of freedom
        assert!(chi2 < 13.816, "chi2 = {chi2}");
        let mean_slot = r.elapsed_model_time / slots as f64;
        assert!((mean_slot - st.mean_slot).abs() / st.mean_slot < 5e-3);
    }

    #[test]
    fn seeded_runs_repeat() {
        let cfg = SimConfig::with_slots(50_000, 42).unwrap();
        let t = tau(&[0.2, 0.4]);
        let a = compare(&params(2), &t, &cfg).unwrap().to_csv();
        let b = compare(&params(2), &t, &cfg).unwrap().to_csv();
        assert_eq!(a, b);
        let c = compare(&params(2), &t, &SimConfig { seed: 43, ..cfg })
            .unwrap()
            .to_csv();
        assert_ne!(a, c);
    }

    #[test]
    fn substreams_do_not_depend_on_station_count() {
        // A silent extra station must not shift the first station's draws.
        let cfg = SimConfig::with_slots(20_000, 8).unwrap();
        let one = run_slots(&params(1), &tau(&[0.3]), &cfg).unwrap();
        let two = run_slots(&params(2), &tau(&[0.3, 0.0]), &cfg).unwrap();
        assert_eq!(one.counts.success[0], two.counts.success[0]);
        assert_eq!(one.counts.idle, two.counts.idle);
    }

    #[test]
    fn replicas_are_thread_count_independent() {
        let cfg = SimConfig::with_slots(40_000, 7).unwrap();
        let t = tau(&[0.2, 0.35, 0.1]);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| compare_replicas(&params(3), &t, &cfg, 6).unwrap().to_csv())
        };
        assert_eq!(run(1), run(4));
        let pooled = run_replicas(&params(3), &t, &cfg, 6).unwrap();
        assert_eq!(pooled.counts.total(), 6 * 40_000);
    }

    #[test]
    fn mismatch_is_flagged() {
        let p = params(2);
        let t = tau(&[0.3, 0.25]);
        let cfg = SimConfig::with_slots(1_000_000, 5).unwrap();
        let sim = run_slots(&p, &t, &cfg).unwrap();
        let exact = throughput(&t, &p).unwrap();
        assert!(compare_parts(exact.s(), &sim).passed());
        let off: Vec<f64> = exact.s().iter().map(|s| s * 1.05).collect();
        let rep = compare_parts(&off, &sim);
        assert!(!rep.passed());
        assert!(rep.max_abs_z() > Z_LIMIT);
    }

    #[test]
    fn z_scores_look_standard_normal() {
        let p =
            WlanParams::new(9.0, 120.0, 100.0, vec![1000.0, 600.0, 1500.0], vec![1.0; 3]).unwrap();
        let t = tau(&[0.25, 0.1, 0.3]);
        let z: Vec<f64> = (0..50u64)
            .flat_map(|seed| {
                let cfg = SimConfig::with_slots(100_000, 1000 + seed).unwrap();
                compare(&p, &t, &cfg).unwrap().rows.into_iter().map(|r| r.z)
            })
            .collect();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let outliers = z.iter().filter(|v| v.abs() > 3.0).count();
        assert!(mean.abs() <= 0.5, "mean z {mean}");
        assert!(outliers <= 2, "{outliers} outliers");
    }

    #[test]
    fn report_csv_layout() {
        let cfg = SimConfig::with_slots(1_000, 1).unwrap();
        let csv = compare(&params(2), &tau(&[0.3, 0.3]), &cfg)
            .unwrap()
            .to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], COMPARE_CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,"));
    }
}
