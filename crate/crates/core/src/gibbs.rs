//! Sampling the Gibbs measure with fixed ends.
//!
//! Momenta are iid Gaussian. The `N+1` bond extensions are iid with density
//! `∝ e^{−βV(r)}` conditioned on `Σ r = 0`; a Metropolis chain with pair
//! moves keeps that constraint exactly. The one-site tilted density
//! `e^{−γr−βV(r)}` provides the quadrature oracle for single-site moments
//! and an independent sampler for reference runs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::chain::{ChainParams, ChainState, Potential};
use crate::error::{invalid, Error, Result};
use crate::stats::{block_jackknife, integrated_autocorrelation_time};

pub const BURN_IN_SWEEPS: usize = 100;
pub const TARGET_ACCEPTANCE: f64 = 0.3;
/// Sweeps in the pilot run that measures the autocorrelation time of `H₁`.
pub const PILOT_SWEEPS: usize = 4000;
/// Decorrelation stride in units of the integrated autocorrelation time.
pub const STRIDE_FACTOR: f64 = 5.0;
/// Independent chains per ensemble; fixed so results do not depend on the
/// thread count.
pub const DEFAULT_CHAINS: usize = 8;
/// The density is cut where the exponent exceeds its minimum by this much.
pub const TRUNCATION: f64 = 60.0;
pub const MAX_MOMENT: usize = 8;
const QUADRATURE_TOL: f64 = 1e-12;
const THETA_BRACKET: (f64, f64) = (-10.0, 10.0);

/// Tolerance on `|Σ r|` for `n_bonds` bonds.
pub fn constraint_tolerance(n_bonds: usize) -> f64 {
    1e-12 * n_bonds as f64
}

/// The one-site density `e^{−γr−βV(r)}/q_γ` with its moments.
#[derive(Debug, Clone)]
pub struct TiltedDensity {
    beta: f64,
    potential: Potential,
    gamma: f64,
    lo: f64,
    hi: f64,
    log_q: f64,
    moments: [f64; MAX_MOMENT + 1],
    halving_change: f64,
    nodes: Vec<f64>,
    cdf: Vec<f64>,
}

impl TiltedDensity {
    pub fn new(beta: f64, potential: Potential, gamma: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid("beta", format!("must be positive, got {beta}")));
        }
        if !(potential.quartic > 0.0) {
            return Err(invalid("A", "must be positive for a normalizable density"));
        }
        if !gamma.is_finite() {
            return Err(invalid("gamma", "must be finite"));
        }
        let phi = |r: f64| gamma * r + beta * potential.value(r);

        // widen a symmetric window until both ends clear the truncation level
        let mut radius = 1.0 / beta.sqrt();
        let (lo, hi, shift) = loop {
            let m = 4000;
            let h = 2.0 * radius / m as f64;
            let grid: Vec<f64> = (0..=m).map(|i| -radius + i as f64 * h).collect();
            let vals: Vec<f64> = grid.iter().map(|&r| phi(r)).collect();
            let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            if vals[0] - min >= TRUNCATION && vals[m] - min >= TRUNCATION {
                let first = vals.iter().position(|v| v - min < TRUNCATION).unwrap();
                let last = vals.iter().rposition(|v| v - min < TRUNCATION).unwrap();
                break (grid[first.saturating_sub(1)], grid[(last + 1).min(m)], min);
            }
            radius *= 2.0;
            if radius > 1e6 {
                return Err(invalid("beta", "density support could not be bracketed"));
            }
        };

        let weight = |r: f64| (-(phi(r) - shift)).exp();
        let integrate = |panels: usize| -> ([f64; MAX_MOMENT + 1], [f64; MAX_MOMENT + 1]) {
            let h = (hi - lo) / panels as f64;
            let mut m = [0.0; MAX_MOMENT + 1];
            let mut a = [0.0; MAX_MOMENT + 1];
            for i in 0..=panels {
                let r = lo + i as f64 * h;
                let c = if i == 0 || i == panels {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let w = c * weight(r);
                let mut pow = 1.0;
                for n in 0..=MAX_MOMENT {
                    m[n] += w * pow;
                    a[n] += w * pow.abs();
                    pow *= r;
                }
            }
            for n in 0..=MAX_MOMENT {
                m[n] *= h / 3.0;
                a[n] *= h / 3.0;
            }
            (m, a)
        };

        let mut panels = 512;
        let (mut prev, _) = integrate(panels);
        let (raw, change) = loop {
            panels *= 2;
            let (next, abs) = integrate(panels);
            let change = (0..=MAX_MOMENT)
                .map(|n| (next[n] - prev[n]).abs() / abs[n])
                .fold(0.0, f64::max);
            if change <= QUADRATURE_TOL || panels >= 1 << 20 {
                break (next, change);
            }
            prev = next;
        };

        let mut moments = [0.0; MAX_MOMENT + 1];
        for n in 0..=MAX_MOMENT {
            moments[n] = raw[n] / raw[0];
        }
        moments[0] = 1.0;

        // cumulative table for inverse-CDF sampling on the final grid
        let cells = panels.max(1 << 14);
        let h = (hi - lo) / cells as f64;
        let nodes: Vec<f64> = (0..=cells).map(|i| lo + i as f64 * h).collect();
        let mut cdf = Vec::with_capacity(cells + 1);
        let mut acc = 0.0;
        let mut prev_w = weight(lo);
        cdf.push(0.0);
        for &r in &nodes[1..] {
            let w = weight(r);
            acc += 0.5 * (w + prev_w) * h;
            cdf.push(acc);
            prev_w = w;
        }
        for c in cdf.iter_mut() {
            *c /= acc;
        }

        Ok(TiltedDensity {
            beta,
            potential,
            gamma,
            lo,
            hi,
            log_q: raw[0].ln() - shift,
            moments,
            halving_change: change,
            nodes,
            cdf,
        })
    }

    /// The density tilted by the solution of the θ-equation.
    pub fn centered(beta: f64, potential: Potential) -> Result<Self> {
        let theta = solve_theta_for(beta, potential)?;
        TiltedDensity::new(beta, potential, theta)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// `ln q_γ(β)`.
    pub fn log_q(&self) -> f64 {
        self.log_q
    }

    /// `⟨rⁿ⟩_γ` for `n ≤ 8`.
    pub fn moment(&self, n: usize) -> Result<f64> {
        self.moments
            .get(n)
            .copied()
            .ok_or_else(|| invalid("n", format!("moments are cached up to {MAX_MOMENT}, got {n}")))
    }

    pub fn mean(&self) -> f64 {
        self.moments[1]
    }

    pub fn variance(&self) -> f64 {
        self.moments[2] - self.moments[1] * self.moments[1]
    }

    /// Largest relative change of a moment in the last step-halving.
    pub fn halving_change(&self) -> f64 {
        self.halving_change
    }

    pub fn pdf(&self, r: f64) -> f64 {
        (-(self.gamma * r + self.beta * self.potential.value(r)) - self.log_q).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let i = self.cdf.partition_point(|&c| c <= u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.nodes[i - 1] + frac * (self.nodes[i] - self.nodes[i - 1])
    }
}

pub fn tilted_moments(density: &TiltedDensity, n: usize) -> Result<f64> {
    density.moment(n)
}

/// `θ` with `⟨r⟩_θ = 0`.
pub fn solve_theta(beta: f64, a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(invalid("A", format!("must be positive, got {a}")));
    }
    solve_theta_for(beta, Potential::fpu(a))
}

/// Safeguarded Newton on the decreasing mean function, `dm/dγ = −Var`.
pub fn solve_theta_for(beta: f64, potential: Potential) -> Result<f64> {
    let (mut lo, mut hi) = THETA_BRACKET;
    let m_lo = TiltedDensity::new(beta, potential, lo)?.mean();
    let m_hi = TiltedDensity::new(beta, potential, hi)?.mean();
    if !(m_lo > 0.0 && m_hi < 0.0) {
        return Err(Error::Bracketing { lo, hi });
    }
    let mut gamma = 0.0;
    let mut best = (f64::INFINITY, gamma);
    for _ in 0..100 {
        let d = TiltedDensity::new(beta, potential, gamma)?;
        let (m, var) = (d.mean(), d.variance());
        let scaled = m.abs() / var.sqrt();
        if scaled < best.0 {
            best = (scaled, gamma);
        }
        if scaled <= 1e-12 {
            return Ok(gamma);
        }
        if m > 0.0 {
            lo = gamma;
        } else {
            hi = gamma;
        }
        let newton = gamma + m / var;
        gamma = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * gamma.abs().max(1.0) {
            break;
        }
    }
    // the quadrature noise floor was reached before the requested residual
    Ok(best.1)
}

pub fn sample_momenta<R: Rng + ?Sized>(rng: &mut R, n: usize, beta: f64) -> Vec<f64> {
    let sd = 1.0 / beta.sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
        .collect()
}

/// Metropolis chain on `{Σ r = 0}` targeting `∏ e^{−βV(r_j)}`.
#[derive(Debug, Clone)]
pub struct ConstrainedSampler {
    potential: Potential,
    beta: f64,
    r: Vec<f64>,
    sigma: f64,
    proposed: u64,
    accepted: u64,
    sweeps: u64,
    max_drift: f64,
}

impl ConstrainedSampler {
    /// Starts from `r = 0` with proposal width `1/√β`.
    pub fn new(params: &ChainParams) -> Self {
        ConstrainedSampler {
            potential: params.potential(),
            beta: params.beta(),
            r: vec![0.0; params.n() + 1],
            sigma: 1.0 / params.beta().sqrt(),
            proposed: 0,
            accepted: 0,
            sweeps: 0,
            max_drift: 0.0,
        }
    }

    pub fn bonds(&self) -> &[f64] {
        &self.r
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    /// Largest `|Σ r|` left by a sweep's pair moves, before re-centring.
    pub fn max_drift(&self) -> f64 {
        self.max_drift
    }

    /// Acceptance rate since the end of burn-in.
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// `N+1` pair moves; returns the number accepted.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let m = self.r.len();
        let step = Normal::new(0.0, self.sigma).expect("positive proposal width");
        let mut accepted = 0;
        for _ in 0..m {
            let i = rng.gen_range(0..m);
            let mut j = rng.gen_range(0..m - 1);
            if j >= i {
                j += 1;
            }
            let delta: f64 = step.sample(rng);
            let (ri, rj) = (self.r[i], self.r[j]);
            let (ni, nj) = (ri + delta, rj - delta);
            let dv = self.potential.value(ni) + self.potential.value(nj)
                - self.potential.value(ri)
                - self.potential.value(rj);
            let log_u: f64 = rng.gen::<f64>().ln();
            if log_u < -self.beta * dv {
                self.r[i] = ni;
                self.r[j] = nj;
                accepted += 1;
            }
        }
        // pair moves conserve the sum up to rounding; remove the drift
        let sum: f64 = self.r.iter().sum();
        self.max_drift = self.max_drift.max(sum.abs());
        if sum != 0.0 {
            let shift = sum / m as f64;
            self.r.iter_mut().for_each(|x| *x -= shift);
        }
        self.proposed += m as u64;
        self.accepted += accepted as u64;
        self.sweeps += 1;
        accepted
    }

    /// Burn-in with the proposal width tuned toward the target acceptance,
    /// then frozen. Resets the acceptance counters.
    pub fn burn_in<R: Rng + ?Sized>(&mut self, rng: &mut R, sweeps: usize) {
        let m = self.r.len() as f64;
        for _ in 0..sweeps {
            let rate = self.sweep(rng) as f64 / m;
            self.sigma *= (1.5 * (rate - TARGET_ACCEPTANCE)).exp();
        }
        self.proposed = 0;
        self.accepted = 0;
    }
}

/// Bonds after `sweeps` sweeps from `r = 0`, the first [`BURN_IN_SWEEPS`]
/// of which tune the proposal.
pub fn sample_bonds<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ChainParams,
    sweeps: usize,
) -> Result<Vec<f64>> {
    if sweeps < BURN_IN_SWEEPS {
        return Err(invalid(
            "sweeps",
            format!("must cover the burn-in of {BURN_IN_SWEEPS} sweeps, got {sweeps}"),
        ));
    }
    let mut sampler = ConstrainedSampler::new(params);
    sampler.burn_in(rng, BURN_IN_SWEEPS);
    for _ in BURN_IN_SWEEPS..sweeps {
        sampler.sweep(rng);
    }
    Ok(sampler.bonds().to_vec())
}

/// `q_j = Σ_{i<j} r_i`.
pub fn bonds_to_state(r: &[f64], p: &[f64]) -> Result<ChainState> {
    if r.len() != p.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: p.len() + 1,
            got: r.len(),
        });
    }
    let sum: f64 = r.iter().sum();
    let tolerance = constraint_tolerance(r.len());
    if sum.abs() > tolerance {
        return Err(Error::ConstraintViolated { sum, tolerance });
    }
    let mut q = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for &ri in &r[..p.len()] {
        acc += ri;
        q.push(acc);
    }
    ChainState::new(p.to_vec(), q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsSample {
    pub state: ChainState,
    pub r: Vec<f64>,
    pub seed: Option<u64>,
    pub n: usize,
    pub sweeps: u64,
}

/// One independent draw: a fresh chain run for `sweeps` sweeps.
pub fn sample_state<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ChainParams,
    sweeps: usize,
) -> Result<GibbsSample> {
    let r = sample_bonds(rng, params, sweeps)?;
    let p = sample_momenta(rng, params.n(), params.beta());
    Ok(GibbsSample {
        state: bonds_to_state(&r, &p)?,
        r,
        seed: None,
        n: params.n(),
        sweeps: sweeps as u64,
    })
}

/// Seed for cell `index` of an experiment grid (SplitMix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for task `stream` under a master seed.
pub fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Integrated autocorrelation time of `H₁ ∝ Σ r³` in sweeps, and the
/// resulting stride.
pub fn measure_stride(params: &ChainParams, seed: u64) -> (f64, usize) {
    let mut rng = derived_rng(seed, 0);
    let mut sampler = ConstrainedSampler::new(params);
    sampler.burn_in(&mut rng, BURN_IN_SWEEPS);
    let series: Vec<f64> = (0..PILOT_SWEEPS)
        .map(|_| {
            sampler.sweep(&mut rng);
            sampler.bonds().iter().map(|r| r * r * r).sum::<f64>() / 3.0
        })
        .collect();
    let tau = integrated_autocorrelation_time(&series);
    (tau, ((STRIDE_FACTOR * tau).ceil() as usize).max(1))
}

/// Sampler settings and measured diagnostics, reported with every run.
#[derive(Debug, Clone, Serialize)]
pub struct SamplerDiagnostics {
    pub n: usize,
    pub beta: f64,
    pub acceptance_rate: f64,
    pub proposal_sigma: f64,
    pub tau_int_h1: f64,
    pub stride: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub max_constraint_drift: f64,
    pub theta: f64,
    pub log_q_theta: f64,
}

#[derive(Debug, Clone)]
pub struct GibbsEnsemble {
    pub states: Vec<ChainState>,
    pub diagnostics: SamplerDiagnostics,
}

/// `count` decorrelated Gibbs states from [`DEFAULT_CHAINS`] independent
/// chains, in chain order.
pub fn gibbs_ensemble(params: &ChainParams, count: usize, seed: u64) -> Result<GibbsEnsemble> {
    let (tau, stride) = measure_stride(params, seed);
    let chains = DEFAULT_CHAINS.min(count.max(1));
    let per_chain: Vec<usize> = (0..chains)
        .map(|c| count / chains + usize::from(c < count % chains))
        .collect();
    // per chain: states, acceptance rate, proposal width, constraint drift
    type ChainRun = (Vec<ChainState>, f64, f64, f64);
    let results: Vec<Result<ChainRun>> = per_chain
        .par_iter()
        .enumerate()
        .map(|(c, &m)| {
            let mut rng = derived_rng(seed, c as u64 + 1);
            let mut sampler = ConstrainedSampler::new(params);
            sampler.burn_in(&mut rng, BURN_IN_SWEEPS);
            let mut states = Vec::with_capacity(m);
            for _ in 0..m {
                for _ in 0..stride {
                    sampler.sweep(&mut rng);
                }
                let p = sample_momenta(&mut rng, params.n(), params.beta());
                states.push(bonds_to_state(sampler.bonds(), &p)?);
            }
            Ok((states, sampler.acceptance_rate(), sampler.sigma(), sampler.max_drift()))
        })
        .collect();
    let mut states = Vec::with_capacity(count);
    let (mut acc, mut sigma, mut drift) = (0.0, 0.0, 0.0f64);
    for res in results {
        let (s, a, sg, d) = res?;
        states.extend(s);
        acc += a / chains as f64;
        sigma += sg / chains as f64;
        drift = drift.max(d);
    }
    let (theta, log_q_theta) = if params.potential().quartic > 0.0 {
        let d = TiltedDensity::centered(params.beta(), params.potential())?;
        (d.gamma(), d.log_q())
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(GibbsEnsemble {
        states,
        diagnostics: SamplerDiagnostics {
            n: params.n(),
            beta: params.beta(),
            acceptance_rate: acc,
            proposal_sigma: sigma,
            tau_int_h1: tau,
            stride,
            burn_in: BURN_IN_SWEEPS,
            chains,
            max_constraint_drift: drift,
            theta,
            log_q_theta,
        },
    })
}

/// Where the bond variables come from in [`monomial_covariance_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondSource {
    Constrained,
    /// Test hook: iid draws from the θ-tilted density, no constraint.
    IndependentTilted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceEstimate {
    pub covariance: f64,
    pub stderr: f64,
    pub measurements: usize,
}

fn product(r: &[f64], sites: &[usize], shift: usize) -> f64 {
    let m = r.len();
    sites.iter().map(|&s| r[(s + shift) % m]).product()
}

/// `⟨r^k r^l⟩ − ⟨r^k⟩⟨r^l⟩` for the site multisets `k_sites`, `l_sites`.
pub fn monomial_covariance_test<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ChainParams,
    k_sites: &[usize],
    l_sites: &[usize],
    n_samples: usize,
) -> Result<CovarianceEstimate> {
    monomial_covariance_with(rng, params, k_sites, l_sites, n_samples, BondSource::Constrained)
}

/// One measurement per sweep. The bond law is invariant under relabelling
/// the bonds, so every measurement averages over all cyclic shifts of the
/// two site sets; errors come from a block jackknife over sweeps.
pub fn monomial_covariance_with<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ChainParams,
    k_sites: &[usize],
    l_sites: &[usize],
    n_samples: usize,
    source: BondSource,
) -> Result<CovarianceEstimate> {
    let m = params.n() + 1;
    if let Some(&s) = k_sites.iter().chain(l_sites).find(|&&s| s >= m) {
        return Err(invalid("sites", format!("site {s} outside 0..={}", m - 1)));
    }
    if n_samples < 20 {
        return Err(invalid("n_samples", "need at least 20 measurements"));
    }
    let mut fg = Vec::with_capacity(n_samples);
    let mut f = Vec::with_capacity(n_samples);
    let mut g = Vec::with_capacity(n_samples);
    let mut record = |r: &[f64]| {
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for shift in 0..m {
            let x = product(r, k_sites, shift);
            let y = product(r, l_sites, shift);
            a += x * y;
            b += x;
            c += y;
        }
        fg.push(a / m as f64);
        f.push(b / m as f64);
        g.push(c / m as f64);
    };
    match source {
        BondSource::Constrained => {
            let mut sampler = ConstrainedSampler::new(params);
            sampler.burn_in(rng, BURN_IN_SWEEPS);
            for _ in 0..n_samples {
                sampler.sweep(rng);
                record(sampler.bonds());
            }
        }
        BondSource::IndependentTilted => {
            let density = TiltedDensity::centered(params.beta(), params.potential())?;
            let mut r = vec![0.0; m];
            for _ in 0..n_samples {
                r.iter_mut().for_each(|x| *x = density.sample(rng));
                record(&r);
            }
        }
    }
    let (covariance, stderr) = block_jackknife(&[&fg, &f, &g], 20, |m| m[0] - m[1] * m[2]);
    Ok(CovarianceEstimate {
        covariance,
        stderr,
        measurements: n_samples,
    })
}

/// Reference sampler for small chains: iid tilted bonds accepted when
/// `|Σ r| ≤ half_width`. Returns `count` accepted bond vectors.
pub fn slab_rejection_bonds<R: Rng + ?Sized>(
    rng: &mut R,
    density: &TiltedDensity,
    n_bonds: usize,
    half_width: f64,
    count: usize,
) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut r = vec![0.0; n_bonds];
    while out.len() < count {
        r.iter_mut().for_each(|x| *x = density.sample(rng));
        if r.iter().sum::<f64>().abs() <= half_width {
            out.push(r.clone());
        }
    }
    out
}
