//! Monte Carlo estimators over Gibbs ensembles, time autocorrelations, and
//! the scaling checks built on them.
//!
//! Error bars come from jackknife resampling over initial conditions. Sums
//! run in index order (pairwise) so results do not depend on thread count.

use rayon::prelude::*;
use serde::Serialize;

use crate::chain::{energies, ChainParams, ChainState, Propagator, Verlet};
use crate::error::{invalid, Result};
use crate::gibbs::{derive_seed, gibbs_ensemble};
use crate::packet::{phi_dot, PacketObservable, PsKind, PsTestFunction};
use crate::profiles::NuProfile;

/// Number of jackknife blocks used for curves and ratios.
pub const JACKKNIFE_BLOCKS: usize = 50;

/// Pairwise summation, independent of how the data was produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample mean and variance with jackknife standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub variance: f64,
    pub stderr_mean: f64,
    pub stderr_variance: f64,
    pub n_samples: usize,
}

impl Estimate {
    /// Panics on fewer than two samples; use [`mc_estimate`] for a checked
    /// entry point.
    pub fn from_samples(xs: &[f64]) -> Estimate {
        let n = xs.len();
        assert!(n >= 2, "need at least two samples");
        let nf = n as f64;
        let m = mean(xs);
        let dev: Vec<f64> = xs.iter().map(|x| x - m).collect();
        let s2 = pairwise_sum(&dev.iter().map(|d| d * d).collect::<Vec<_>>());
        let variance = s2 / (nf - 1.0);
        // leave-one-out variances from the centred sums
        let stderr_variance = if n > 2 {
            let loo: Vec<f64> = dev
                .iter()
                .map(|d| (s2 - d * d - d * d / (nf - 1.0)) / (nf - 2.0))
                .collect();
            let lm = mean(&loo);
            ((nf - 1.0) / nf * loo.iter().map(|v| (v - lm).powi(2)).sum::<f64>()).sqrt()
        } else {
            variance.abs()
        };
        Estimate {
            mean: m,
            variance,
            stderr_mean: (variance / nf).sqrt(),
            stderr_variance,
            n_samples: n,
        }
    }
}

/// Evaluates `observable` on every state, in parallel, and summarises.
pub fn mc_estimate<F>(observable: F, states: &[ChainState]) -> Result<Estimate>
where
    F: Fn(&ChainState) -> f64 + Sync,
{
    if states.len() < 2 {
        return Err(invalid("n_samples", "need at least two states"));
    }
    let values: Vec<f64> = states.par_iter().map(&observable).collect();
    Ok(Estimate::from_samples(&values))
}

/// Delete-one-block jackknife of `f(column means)`. Returns the full-sample
/// value and its standard error.
pub fn block_jackknife<F>(columns: &[&[f64]], blocks: usize, f: F) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = columns[0].len();
    let blocks = blocks.min(n).max(2);
    let full: Vec<f64> = columns.iter().map(|c| mean(c)).collect();
    let value = f(&full);
    let totals: Vec<f64> = columns.iter().map(|c| pairwise_sum(c)).collect();
    let bounds: Vec<usize> = (0..=blocks).map(|b| b * n / blocks).collect();
    let reps: Vec<f64> = (0..blocks)
        .map(|b| {
            let (lo, hi) = (bounds[b], bounds[b + 1]);
            let left = (n - (hi - lo)) as f64;
            let means: Vec<f64> = columns
                .iter()
                .zip(&totals)
                .map(|(c, t)| (t - pairwise_sum(&c[lo..hi])) / left)
                .collect();
            f(&means)
        })
        .collect();
    (value, jackknife_spread(&reps))
}

fn jackknife_spread(reps: &[f64]) -> f64 {
    let b = reps.len() as f64;
    let m = mean(reps);
    ((b - 1.0) / b * reps.iter().map(|r| (r - m).powi(2)).sum::<f64>()).sqrt()
}

/// Integrated autocorrelation time `1/2 + Σ ρ(t)` with a self-consistent
/// window `t < 5τ`.
pub fn integrated_autocorrelation_time(series: &[f64]) -> f64 {
    let n = series.len();
    let m = mean(series);
    let dev: Vec<f64> = series.iter().map(|x| x - m).collect();
    let c0 = dev.iter().map(|d| d * d).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 0.5;
    }
    let mut tau = 0.5;
    for t in 1..n / 4 {
        if t as f64 >= 5.0 * tau {
            break;
        }
        let ct = dev[..n - t].iter().zip(&dev[t..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        tau += ct / c0;
    }
    tau.max(0.5)
}

/// `C_F(t) = ⟨F·F(t)⟩ − ⟨F⟩²` on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// `σ²_F`, identical to `values[0]`.
    pub variance: f64,
    pub normalized: Vec<f64>,
    pub normalized_stderrs: Vec<f64>,
    /// Delete-one-block replicates of the normalized curve.
    #[serde(skip)]
    pub replicates: Vec<Vec<f64>>,
    pub n_samples: usize,
}

impl CorrelationCurve {
    /// Builds the curve from `series[i][t]`, the observable along the
    /// trajectory of initial condition `i`.
    pub fn from_series(times: Vec<f64>, series: &[Vec<f64>]) -> Result<CorrelationCurve> {
        let n = series.len();
        if n < 4 {
            return Err(invalid("n_samples", "need at least four initial conditions"));
        }
        let count = times.len();
        let f0: Vec<f64> = series.iter().map(|s| s[0]).collect();
        let m0 = mean(&f0);
        let nf = n as f64;
        let blocks = JACKKNIFE_BLOCKS.min(n);
        let bounds: Vec<usize> = (0..=blocks).map(|b| b * n / blocks).collect();
        let dev0: Vec<f64> = f0.iter().map(|x| x - m0).collect();
        let var = pairwise_sum(&dev0.iter().map(|d| d * d).collect::<Vec<_>>()) / (nf - 1.0);

        let mut values = Vec::with_capacity(count);
        let mut stderrs = Vec::with_capacity(count);
        let mut normalized = Vec::with_capacity(count);
        let mut normalized_stderrs = Vec::with_capacity(count);
        let mut replicates = vec![Vec::with_capacity(count); blocks];
        for t in 0..count {
            let ft: Vec<f64> = series.iter().map(|s| s[t]).collect();
            let prod: Vec<f64> = dev0.iter().zip(&ft).map(|(d, x)| d * (x - m0)).collect();
            let c = pairwise_sum(&prod) / (nf - 1.0);
            values.push(c);
            normalized.push(c / var);

            let sq: Vec<f64> = dev0.iter().map(|d| d * d).collect();
            let cols: [&[f64]; 4] = [&f0, &ft, &prod, &sq];
            // recentre on the replicate's own mean of F(0)
            let cov = |m: &[f64]| m[2] - (m[0] - m0) * (m[1] - m0);
            let (_, se) = block_jackknife(&cols, blocks, cov);
            stderrs.push(se);
            let ratio = |m: &[f64]| {
                let c = m[2] - (m[0] - m0) * (m[1] - m0);
                let v = m[3] - (m[0] - m0).powi(2);
                c / v
            };
            let totals: Vec<f64> = cols.iter().map(|c| pairwise_sum(c)).collect();
            let mut reps = Vec::with_capacity(blocks);
            for b in 0..blocks {
                let (lo, hi) = (bounds[b], bounds[b + 1]);
                let left = (n - (hi - lo)) as f64;
                let means: Vec<f64> = cols
                    .iter()
                    .zip(&totals)
                    .map(|(c, tot)| (tot - pairwise_sum(&c[lo..hi])) / left)
                    .collect();
                let r = ratio(&means);
                replicates[b].push(r);
                reps.push(r);
            }
            normalized_stderrs.push(jackknife_spread(&reps));
        }
        Ok(CorrelationCurve {
            times,
            variance: var,
            values,
            stderrs,
            normalized,
            normalized_stderrs,
            replicates,
            n_samples: n,
        })
    }
}

/// Time correlation of several observables along the same trajectories.
///
/// `observable` returns one value per curve. Trajectories are sampled at
/// `i·interval`, `i = 0..count`.
pub fn autocorrelation_multi<P, F>(
    propagator: &P,
    observable: F,
    n_observables: usize,
    states: &[ChainState],
    interval: f64,
    count: usize,
) -> Result<Vec<CorrelationCurve>>
where
    P: Propagator + ?Sized,
    F: Fn(&ChainState) -> Result<Vec<f64>> + Sync,
{
    if count == 0 {
        return Err(invalid("t_grid", "must contain at least one time"));
    }
    let paths: Vec<Result<Vec<Vec<f64>>>> = states
        .par_iter()
        .map(|s| {
            let mut rows: Vec<Vec<f64>> = vec![Vec::with_capacity(count); n_observables];
            let mut failure = None;
            propagator.sample_path(s, interval, count, &mut |_, st| match observable(st) {
                Ok(v) => {
                    for (row, x) in rows.iter_mut().zip(v) {
                        row.push(x);
                    }
                }
                Err(e) => {
                    failure.get_or_insert(e);
                }
            })?;
            match failure {
                Some(e) => Err(e),
                None => Ok(rows),
            }
        })
        .collect();
    let mut per_obs: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(states.len()); n_observables];
    for p in paths {
        for (k, row) in p?.into_iter().enumerate() {
            per_obs[k].push(row);
        }
    }
    let times: Vec<f64> = (0..count).map(|i| i as f64 * interval).collect();
    per_obs
        .iter()
        .map(|series| CorrelationCurve::from_series(times.clone(), series))
        .collect()
}

pub fn autocorrelation<P, F>(
    propagator: &P,
    observable: F,
    states: &[ChainState],
    interval: f64,
    count: usize,
) -> Result<CorrelationCurve>
where
    P: Propagator + ?Sized,
    F: Fn(&ChainState) -> Result<f64> + Sync,
{
    let mut curves =
        autocorrelation_multi(propagator, |s| Ok(vec![observable(s)?]), 1, states, interval, count)?;
    Ok(curves.remove(0))
}

fn first_crossing(times: &[f64], normalized: &[f64]) -> Option<f64> {
    for i in 1..normalized.len() {
        if normalized[i] < 0.5 {
            let (c0, c1) = (normalized[i - 1], normalized[i]);
            let frac = if c0 > c1 { (c0 - 0.5) / (c0 - c1) } else { 0.0 };
            return Some(times[i - 1] + frac * (times[i] - times[i - 1]));
        }
    }
    None
}

/// First time the normalized curve drops below 1/2, interpolated linearly.
pub fn half_life(curve: &CorrelationCurve) -> Option<f64> {
    first_crossing(&curve.times, &curve.normalized)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HalfLife {
    /// `None` when the curve stays above 1/2 on its grid.
    pub value: Option<f64>,
    pub stderr: f64,
    /// Last time on the grid; a lower bound when `value` is `None`.
    pub horizon: f64,
}

/// Half-life with a jackknife error; replicates that do not cross count at
/// the horizon.
pub fn half_life_with_error(curve: &CorrelationCurve) -> HalfLife {
    let horizon = *curve.times.last().unwrap_or(&0.0);
    let value = half_life(curve);
    let reps: Vec<f64> = curve
        .replicates
        .iter()
        .map(|r| first_crossing(&curve.times, r).unwrap_or(horizon))
        .collect();
    HalfLife {
        value,
        stderr: if reps.len() >= 2 { jackknife_spread(&reps) } else { 0.0 },
        horizon,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLaw {
    pub exponent: f64,
    pub stderr: f64,
    pub prefactor: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<PowerLaw> {
    fit_power_law_weighted(x, y, None)
}

/// As [`fit_power_law`], weighting each point by `(y/σ_y)²` when errors
/// are given.
pub fn fit_power_law_weighted(x: &[f64], y: &[f64], y_err: Option<&[f64]>) -> Result<PowerLaw> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(invalid("points", "need at least three (x, y) pairs"));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(invalid("points", "power-law fits need positive finite values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let w: Vec<f64> = match y_err {
        Some(e) => e
            .iter()
            .zip(y)
            .map(|(s, yv)| {
                let rel = s / yv;
                if rel > 0.0 {
                    1.0 / (rel * rel)
                } else {
                    1.0
                }
            })
            .collect(),
        None => vec![1.0; x.len()],
    };
    let sw: f64 = w.iter().sum();
    let mx = lx.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = ly.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = lx.iter().zip(&w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).zip(&w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    if sxx == 0.0 {
        return Err(invalid("points", "x values must not all coincide"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let n = x.len() as f64;
    let rss: f64 = lx
        .iter()
        .zip(&ly)
        .zip(&w)
        .map(|((a, c), b)| b * (c - intercept - slope * a).powi(2))
        .sum();
    let resid_se = (rss / (n - 2.0) / sxx).sqrt();
    // with known errors the formal slope error is 1/√Sxx
    let stderr = match y_err {
        Some(_) => resid_se.max((1.0 / sxx).sqrt()),
        None => resid_se,
    };
    Ok(PowerLaw {
        exponent: slope,
        stderr,
        prefactor: intercept.exp(),
    })
}

/// `‖Φ̇‖`, `σ_Φ` and their ratio over an ensemble, plus the sizes of the
/// two parts of `Φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioEstimate {
    pub phi_dot_norm: f64,
    pub sigma_phi: f64,
    pub ratio: f64,
    pub ratio_stderr: f64,
    pub sigma_phi0: f64,
    pub sigma_phi1: f64,
    pub corrector_ratio: f64,
    pub corrector_ratio_stderr: f64,
    pub n_samples: usize,
}

pub fn ratio_theorem1(
    packet: &PacketObservable,
    params: &ChainParams,
    states: &[ChainState],
) -> Result<RatioEstimate> {
    if states.len() < 4 {
        return Err(invalid("n_samples", "need at least four states"));
    }
    let rows: Vec<Result<[f64; 3]>> = states
        .par_iter()
        .map(|s| {
            let (p0, p1) = packet.values(s)?;
            Ok([phi_dot(s, packet, params)?, p0, p1])
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let col = |f: &dyn Fn(&[f64; 3]) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let dot2 = col(&|r| r[0] * r[0]);
    let phi = col(&|r| r[1] + r[2]);
    let phi2 = col(&|r| (r[1] + r[2]).powi(2));
    let p0 = col(&|r| r[1]);
    let p02 = col(&|r| r[1] * r[1]);
    let p1 = col(&|r| r[2]);
    let p12 = col(&|r| r[2] * r[2]);
    let (ratio, ratio_stderr) = block_jackknife(&[&dot2, &phi, &phi2], JACKKNIFE_BLOCKS, |m| {
        m[0].sqrt() / (m[2] - m[1] * m[1]).sqrt()
    });
    let (corrector_ratio, corrector_ratio_stderr) =
        block_jackknife(&[&p0, &p02, &p1, &p12], JACKKNIFE_BLOCKS, |m| {
            ((m[3] - m[2] * m[2]) / (m[1] - m[0] * m[0])).sqrt()
        });
    Ok(RatioEstimate {
        phi_dot_norm: mean(&dot2).sqrt(),
        sigma_phi: Estimate::from_samples(&phi).variance.sqrt(),
        ratio,
        ratio_stderr,
        sigma_phi0: Estimate::from_samples(&p0).variance.sqrt(),
        sigma_phi1: Estimate::from_samples(&p1).variance.sqrt(),
        corrector_ratio,
        corrector_ratio_stderr,
        n_samples: states.len(),
    })
}

/// One cell of a variance scan: `σ²_f β^s / (N ‖f‖₊²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma3Row {
    pub n: usize,
    pub beta: f64,
    pub variance: f64,
    pub variance_stderr: f64,
    pub normalized: f64,
    pub normalized_stderr: f64,
}

/// Normalized variance of one test function on one ensemble.
pub fn lemma3_row(
    test_fn: &PsTestFunction,
    params: &ChainParams,
    states: &[ChainState],
) -> Result<Lemma3Row> {
    let values: Vec<Result<f64>> = states.par_iter().map(|s| test_fn.value(s, params)).collect();
    let values = values.into_iter().collect::<Result<Vec<_>>>()?;
    let e = Estimate::from_samples(&values);
    let scale = params.beta().powi(test_fn.degree as i32)
        / (params.n() as f64 * test_fn.plus_norm * test_fn.plus_norm);
    Ok(Lemma3Row {
        n: params.n(),
        beta: params.beta(),
        variance: e.variance,
        variance_stderr: e.stderr_variance,
        normalized: e.variance * scale,
        normalized_stderr: e.stderr_variance * scale,
    })
}

/// Variance scan over `N × β` for the test function `kind` built on
/// `profile`; one fresh ensemble per cell.
pub fn lemma3_scan(
    kind: PsKind,
    profile: &NuProfile,
    n_list: &[usize],
    beta_list: &[f64],
    a: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Lemma3Row>> {
    let mut rows = Vec::new();
    for (i, &n) in n_list.iter().enumerate() {
        let test_fn = crate::packet::make_ps_test(kind, profile, n)?;
        for (j, &beta) in beta_list.iter().enumerate() {
            let params = ChainParams::new(n, a, beta)?;
            let cell_seed = derive_seed(seed, (i * beta_list.len() + j) as u64);
            let ens = gibbs_ensemble(&params, n_samples, cell_seed)?;
            rows.push(lemma3_row(&test_fn, &params, &ens.states)?);
        }
    }
    Ok(rows)
}

/// Drift statistics of `Φ₀` over the time `β^{1−a}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChebyshevResult {
    pub beta: f64,
    pub a: f64,
    pub time: f64,
    pub sigma_phi0: f64,
    pub threshold: f64,
    pub probability: f64,
    pub probability_stderr: f64,
    /// Mean square of the increment `Φ₀(t) − Φ₀(0)`.
    pub increment_variance: f64,
    pub increment_variance_stderr: f64,
    /// `increment_variance / threshold²`.
    pub chebyshev_bound: f64,
    pub chebyshev_bound_stderr: f64,
    pub n_samples: usize,
}

/// Rounds `t` to a whole number of steps, at least one.
pub fn steps_for(t: f64, dt: f64) -> usize {
    ((t / dt).round() as usize).max(1)
}

fn increments(
    packets: &[&PacketObservable],
    params: &ChainParams,
    states: &[ChainState],
    dt: f64,
    step_marks: &[usize],
) -> Result<Vec<Vec<Vec<f64>>>> {
    let verlet = Verlet::new(*params, dt)?;
    let rows: Vec<Result<Vec<Vec<f64>>>> = states
        .par_iter()
        .map(|s| {
            // rows[mark][packet], mark 0 is t = 0
            let mut out = Vec::with_capacity(step_marks.len() + 1);
            let eval = |st: &ChainState| -> Result<Vec<f64>> {
                packets.iter().map(|p| p.phi0(st)).collect()
            };
            out.push(eval(s)?);
            let mut state = s.clone();
            let mut force = vec![0.0; s.len()];
            let mut done = 0;
            for &mark in step_marks {
                verlet.advance(&mut state, mark - done, &mut force);
                done = mark;
                if !state.is_finite() {
                    return Err(crate::error::Error::NonFinite {
                        time: done as f64 * dt,
                    });
                }
                out.push(eval(&state)?);
            }
            Ok(out)
        })
        .collect();
    rows.into_iter().collect()
}

fn chebyshev_from(
    beta: f64,
    a: f64,
    time: f64,
    initial: &[f64],
    later: &[f64],
) -> ChebyshevResult {
    let n = initial.len() as f64;
    let sigma = Estimate::from_samples(initial).variance.sqrt();
    let threshold = sigma * beta.powf(-a / 2.0);
    let d: Vec<f64> = initial.iter().zip(later).map(|(x, y)| y - x).collect();
    let hits: Vec<f64> = d.iter().map(|x| if x.abs() >= threshold { 1.0 } else { 0.0 }).collect();
    let p = mean(&hits);
    let sq: Vec<f64> = d.iter().map(|x| x * x).collect();
    let e = Estimate::from_samples(&sq);
    ChebyshevResult {
        beta,
        a,
        time,
        sigma_phi0: sigma,
        threshold,
        probability: p,
        probability_stderr: (p * (1.0 - p) / n).sqrt().max(1.0 / n),
        increment_variance: e.mean,
        increment_variance_stderr: e.stderr_mean,
        chebyshev_bound: e.mean / (threshold * threshold),
        chebyshev_bound_stderr: e.stderr_mean / (threshold * threshold),
        n_samples: initial.len(),
    }
}

/// Empirical `P(|Φ₀(t) − Φ₀| ≥ σ_{Φ₀} β^{−a/2})` at `t = β^{1−a}`.
pub fn chebyshev_experiment(
    packet: &PacketObservable,
    params: &ChainParams,
    a: f64,
    states: &[ChainState],
    dt: f64,
) -> Result<ChebyshevResult> {
    if !(0.0..=0.5).contains(&a) {
        return Err(invalid("a", format!("must lie in [0, 1/2], got {a}")));
    }
    let beta = params.beta();
    let time = beta.powf(1.0 - a);
    chebyshev_at(packet, params, a, time, states, dt)
}

/// As [`chebyshev_experiment`] at an explicit time.
pub fn chebyshev_at(
    packet: &PacketObservable,
    params: &ChainParams,
    a: f64,
    time: f64,
    states: &[ChainState],
    dt: f64,
) -> Result<ChebyshevResult> {
    if states.len() < 2 {
        return Err(invalid("n_samples", "need at least two states"));
    }
    let steps = steps_for(time, dt);
    let rows = increments(&[packet], params, states, dt, &[steps])?;
    let initial: Vec<f64> = rows.iter().map(|r| r[0][0]).collect();
    let later: Vec<f64> = rows.iter().map(|r| r[1][0]).collect();
    Ok(chebyshev_from(params.beta(), a, steps as f64 * dt, &initial, &later))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiPacketResult {
    pub per_packet: Vec<ChebyshevResult>,
    /// Frequency with which at least one packet exceeds its threshold.
    pub joint_probability: f64,
    pub joint_stderr: f64,
    pub union_bound: f64,
    pub union_bound_stderr: f64,
    pub persistence_time: f64,
    /// Normalized autocorrelation of each packet at `persistence_time`.
    pub persistence: Vec<f64>,
    pub persistence_stderr: Vec<f64>,
}

/// Joint drift of `K` packets over `β^{1−a}` and their persistence at
/// `persistence_time`, from the same trajectories.
pub fn multi_packet_experiment(
    packets: &[PacketObservable],
    params: &ChainParams,
    a: f64,
    persistence_time: f64,
    states: &[ChainState],
    dt: f64,
) -> Result<MultiPacketResult> {
    if packets.is_empty() {
        return Err(invalid("K", "need at least one packet"));
    }
    if !(0.0..=0.5).contains(&a) {
        return Err(invalid("a", format!("must lie in [0, 1/2], got {a}")));
    }
    let beta = params.beta();
    let s_drift = steps_for(beta.powf(1.0 - a), dt);
    let s_pers = steps_for(persistence_time, dt);
    let mut marks = vec![s_drift, s_pers];
    marks.sort_unstable();
    marks.dedup();
    let refs: Vec<&PacketObservable> = packets.iter().collect();
    let rows = increments(&refs, params, states, dt, &marks)?;
    let idx = |s: usize| 1 + marks.iter().position(|&m| m == s).unwrap();
    let (i_drift, i_pers) = (idx(s_drift), idx(s_pers));

    let mut per_packet = Vec::with_capacity(packets.len());
    let mut persistence = Vec::new();
    let mut persistence_stderr = Vec::new();
    let mut exceed = vec![false; states.len()];
    let mut union_terms: Vec<Vec<f64>> = Vec::new();
    for k in 0..packets.len() {
        let initial: Vec<f64> = rows.iter().map(|r| r[0][k]).collect();
        let later: Vec<f64> = rows.iter().map(|r| r[i_drift][k]).collect();
        let res = chebyshev_from(beta, a, s_drift as f64 * dt, &initial, &later);
        for (i, (x, y)) in initial.iter().zip(&later).enumerate() {
            if (y - x).abs() >= res.threshold {
                exceed[i] = true;
            }
        }
        union_terms.push(
            initial
                .iter()
                .zip(&later)
                .map(|(x, y)| if (y - x).abs() >= res.threshold { 1.0 } else { 0.0 })
                .collect(),
        );
        per_packet.push(res);
        let series: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0][k], r[i_pers][k]]).collect();
        let curve = CorrelationCurve::from_series(vec![0.0, s_pers as f64 * dt], &series)?;
        persistence.push(curve.normalized[1]);
        persistence_stderr.push(curve.normalized_stderrs[1]);
    }
    let n = states.len() as f64;
    let joint = exceed.iter().filter(|&&e| e).count() as f64 / n;
    let per_state_union: Vec<f64> = (0..states.len())
        .map(|i| union_terms.iter().map(|t| t[i]).sum())
        .collect();
    let u = Estimate::from_samples(&per_state_union);
    Ok(MultiPacketResult {
        per_packet,
        joint_probability: joint,
        joint_stderr: (joint * (1.0 - joint) / n).sqrt().max(1.0 / n),
        union_bound: u.mean,
        union_bound_stderr: u.stderr_mean,
        persistence_time: s_pers as f64 * dt,
        persistence,
        persistence_stderr,
    })
}

/// `H₀`, convenient for equipartition checks.
pub fn quadratic_energy(state: &ChainState, params: &ChainParams) -> f64 {
    energies(state, params).h0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::derived_rng;
    use crate::packet::build_phi1_table;
    use crate::profiles::{default_profile, ProfileSpec};
    use crate::spectral::{HarmonicFlow, NormalModes};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = derived_rng(seed, 0);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn estimate_basics() {
        let e = Estimate::from_samples(&[2.0; 10]);
        assert_eq!(e.variance, 0.0);
        assert_eq!(e.stderr_mean, 0.0);
        let x = gaussian(1, 10_000);
        let e = Estimate::from_samples(&x);
        assert!(e.stderr_mean > 0.0 && e.stderr_variance > 0.0);
        // normal data: Var of the sample variance ≈ 2σ⁴/n
        assert_relative_eq!(e.stderr_variance, (2.0f64 / 10_000.0).sqrt(), max_relative = 0.15);
        assert!(mc_estimate(|_| 1.0, &[ChainState::zeros(3)]).is_err());
    }

    #[test]
    fn stderr_shrinks_with_more_samples() {
        let x = gaussian(2, 40_000);
        let a = Estimate::from_samples(&x[..20_000]);
        let b = Estimate::from_samples(&x);
        let r = a.stderr_mean / b.stderr_mean;
        assert!((r / 2f64.sqrt() - 1.0).abs() < 0.2);
    }

    #[test]
    fn momentum_modes_have_gibbs_variance() {
        let params = ChainParams::new(31, 1.0, 100.0).unwrap();
        let ens = gibbs_ensemble(&params, 4000, 3).unwrap();
        let modes = NormalModes::new(31);
        for k in [0, 10, 30] {
            let e = mc_estimate(|s| modes.to_modes(s).p_hat[k].powi(2), &ens.states).unwrap();
            assert!((e.mean - 0.01).abs() <= 3.0 * e.stderr_mean, "k={k}: {e:?}");
        }
    }

    #[test]
    fn phi0_variance_harmonic_oracle() {
        // ν = ω: Var(Φ₀) → N/β² as β grows
        let params = ChainParams::new(127, 1.0, 200.0).unwrap();
        let ens = gibbs_ensemble(&params, 4000, 4).unwrap();
        let packet = build_phi1_table(
            &NuProfile::new(ProfileSpec::Constant { value: 1.0 }).unwrap(),
            127,
        )
        .unwrap();
        let e = mc_estimate(|s| packet.phi0(s).unwrap(), &ens.states).unwrap();
        let oracle = 127.0 / 200.0f64.powi(2);
        assert!((e.variance - oracle).abs() <= 0.1 * oracle, "{} vs {oracle}", e.variance);
    }

    #[test]
    fn jackknife_of_linear_function_is_plain_stderr() {
        let x = gaussian(5, 1000);
        let (v, se) = block_jackknife(&[&x], 1000, |m| m[0]);
        let e = Estimate::from_samples(&x);
        assert_relative_eq!(v, e.mean, epsilon = 1e-14);
        assert_relative_eq!(se, e.stderr_mean, max_relative = 1e-9);
    }

    #[test]
    fn autocorrelation_time_of_ar1() {
        let phi: f64 = 0.8;
        let noise = gaussian(6, 200_000);
        let mut x = 0.0;
        let series: Vec<f64> = noise.iter().map(|e| {
            x = phi * x + e;
            x
        }).collect();
        let tau = integrated_autocorrelation_time(&series);
        let exact = 0.5 * (1.0 + phi) / (1.0 - phi);
        assert!((tau - exact).abs() < 0.1 * exact, "{tau} vs {exact}");
        assert_eq!(integrated_autocorrelation_time(&[1.0; 100]), 0.5);
    }

    #[test]
    fn half_life_examples() {
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 0.1).collect();
        let tau = 3.0;
        let curve = CorrelationCurve {
            normalized: times.iter().map(|t| (-t / tau).exp()).collect(),
            values: times.iter().map(|t| (-t / tau).exp()).collect(),
            stderrs: vec![0.0; 200],
            normalized_stderrs: vec![0.0; 200],
            variance: 1.0,
            replicates: Vec::new(),
            times: times.clone(),
            n_samples: 0,
        };
        let t = half_life(&curve).unwrap();
        assert!((t - tau * 2f64.ln()).abs() < 0.1 * 0.1);
        let flat = CorrelationCurve {
            normalized: vec![1.0; 200],
            ..curve
        };
        assert_eq!(half_life(&flat), None);
    }

    #[test]
    fn correlation_curve_invariants() {
        let params = ChainParams::new(31, 1.0, 100.0).unwrap();
        let ens = gibbs_ensemble(&params, 400, 7).unwrap();
        let packet = build_phi1_table(&NuProfile::new(default_profile()).unwrap(), 31).unwrap();
        let verlet = Verlet::new(params, 0.02).unwrap();
        let curve = autocorrelation(&verlet, |s| packet.phi0(s), &ens.states, 1.0, 30).unwrap();
        let var = Estimate::from_samples(
            &ens.states.iter().map(|s| packet.phi0(s).unwrap()).collect::<Vec<_>>(),
        )
        .variance;
        assert_eq!(curve.values[0], curve.variance);
        assert_relative_eq!(curve.variance, var, max_relative = 1e-12);
        assert_eq!(curve.normalized[0], 1.0);
        for (c, se) in curve.values.iter().zip(&curve.stderrs) {
            assert!(c.abs() <= curve.variance + 3.0 * se);
        }
    }

    #[test]
    fn harmonic_actions_are_flat() {
        let params = ChainParams::new(31, 1.0, 100.0).unwrap();
        let ens = gibbs_ensemble(&params, 200, 8).unwrap();
        let modes = NormalModes::new(31);
        let flow = HarmonicFlow::new(31);
        let curve = autocorrelation(&flow, |s| Ok(modes.actions(s)[4]), &ens.states, 7.3, 20).unwrap();
        for c in &curve.normalized {
            assert!((c - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn power_law_examples() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        let p = fit_power_law(&x, &sq).unwrap();
        assert_relative_eq!(p.exponent, 2.0, epsilon = 1e-12);
        assert!(p.stderr < 1e-12);
        let p = fit_power_law(&x, &[3.0; 4]).unwrap();
        assert!(p.exponent.abs() < 1e-12);
        assert!(fit_power_law(&x[..2], &sq[..2]).is_err());
        assert!(fit_power_law(&x, &[1.0, -1.0, 1.0, 1.0]).is_err());

        let mut rng = derived_rng(9, 0);
        let xs: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|v| (1.0 + 0.05 * rng.sample::<f64, _>(StandardNormal)) / v)
            .collect();
        let p = fit_power_law(&xs, &ys).unwrap();
        assert!((-1.15..=-0.85).contains(&p.exponent), "{p:?}");
    }

    #[test]
    fn harmonic_ratio_vanishes() {
        let params = ChainParams::new(31, 1.0, 100.0).unwrap();
        let ens = gibbs_ensemble(&params, 100, 10).unwrap();
        let lin = params.harmonic();
        let packet = build_phi1_table(&NuProfile::new(default_profile()).unwrap(), 31)
            .unwrap()
            .for_params(&lin);
        let r = ratio_theorem1(&packet, &lin, &ens.states).unwrap();
        assert!(r.ratio.abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn chebyshev_never_violated() {
        let params = ChainParams::new(31, 1.0, 100.0).unwrap();
        let ens = gibbs_ensemble(&params, 300, 12).unwrap();
        let packet = build_phi1_table(&NuProfile::new(default_profile()).unwrap(), 31).unwrap();
        let r = chebyshev_at(&packet, &params, 0.0, 1.0, &ens.states, 0.02).unwrap();
        assert!(r.probability < 0.9);
        assert!(r.probability <= r.chebyshev_bound + 3.0 * r.chebyshev_bound_stderr);
        assert!(chebyshev_experiment(&packet, &params, 0.7, &ens.states, 0.02).is_err());
    }

    #[test]
    fn single_packet_multi_matches_chebyshev() {
        let params = ChainParams::new(31, 1.0, 100.0).unwrap();
        let ens = gibbs_ensemble(&params, 200, 13).unwrap();
        let packet = build_phi1_table(&NuProfile::new(default_profile()).unwrap(), 31).unwrap();
        let single = chebyshev_experiment(&packet, &params, 0.4, &ens.states, 0.02).unwrap();
        let multi = multi_packet_experiment(&[packet], &params, 0.4, 25.0, &ens.states, 0.02).unwrap();
        assert_eq!(multi.per_packet[0], single);
        assert_eq!(multi.joint_probability, single.probability);
        assert!(multi.joint_probability <= multi.union_bound + 1e-15);
    }

    proptest! {
        #[test]
        fn leave_one_out_stays_in_range(xs in proptest::collection::vec(-5.0f64..5.0, 3..60)) {
            let n = xs.len() as f64;
            let m = mean(&xs);
            let range = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
            for x in &xs {
                let loo = (m * n - x) / (n - 1.0);
                prop_assert!((loo - m).abs() <= range / n + 1e-12);
            }
        }
    }
}
