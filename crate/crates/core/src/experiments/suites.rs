//! The experiment suites. Each turns [`Settings`] into a [`Report`]: a
//! results table plus the checks against [`criteria`](super::criteria).
//!
//! Grid cell `(i, j)` of `n_list × beta_list` draws its ensemble from the
//! seed `derive_seed(seed, i·|beta_list| + j)`, so a cell's numbers do not
//! depend on the rest of the grid or on the thread count.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::config::{ExperimentKind, Settings};
use super::criteria::*;
use super::{fmt_f64, Check, Report};
use crate::chain::{energies, total_energy, ChainParams, ChainState, Propagator, Verlet};
use crate::error::Result;
use crate::gibbs::{
    derive_seed, derived_rng, gibbs_ensemble, monomial_covariance_test, slab_rejection_bonds,
    TiltedDensity,
};
use crate::packet::{
    bracket_norm_phi0_h1, from_packet, homological_residual, PacketObservable, PsKind,
};
use crate::profiles::{
    check_thm2_bound, disjoint_profiles, eval_h1, registered_family, NuProfile, ProfileSpec,
};
use crate::spectral::{NormalModes, SineTransform};
use crate::stats::{
    autocorrelation, chebyshev_experiment, fit_power_law_weighted, half_life_with_error,
    lemma3_row, multi_packet_experiment, ratio_theorem1, Estimate,
};

const HOMOLOGICAL: &[&str] = &["n", "beta", "sample", "residual"];
const IDENTITIES: &[&str] = &["quantity", "n", "beta", "value", "tolerance"];
const SAMPLER: &[&str] = &[
    "quantity",
    "n",
    "beta",
    "order",
    "value",
    "stderr",
    "reference",
    "reference_stderr",
];
const LEMMA3: &[&str] = &[
    "function",
    "n",
    "beta",
    "variance",
    "variance_stderr",
    "normalized",
    "normalized_stderr",
];
const RATIO: &[&str] = &[
    "n",
    "beta",
    "phi_dot_norm",
    "sigma_phi",
    "ratio",
    "ratio_stderr",
    "sigma_phi0",
    "sigma_phi1",
    "corrector_ratio",
    "corrector_ratio_stderr",
    "n_samples",
];
const AUTOCORRELATION: &[&str] = &[
    "n",
    "beta",
    "t",
    "c",
    "c_stderr",
    "normalized",
    "normalized_stderr",
];
const CHEBYSHEV: &[&str] = &[
    "n",
    "beta",
    "a",
    "time",
    "sigma_phi0",
    "threshold",
    "probability",
    "probability_stderr",
    "increment_variance",
    "increment_variance_stderr",
    "chebyshev_bound",
    "chebyshev_bound_stderr",
    "n_samples",
];
const MULTI: &[&str] = &[
    "n",
    "beta",
    "packet",
    "time",
    "threshold",
    "probability",
    "probability_stderr",
    "bound",
    "bound_stderr",
    "persistence_time",
    "persistence",
    "persistence_stderr",
];
const THEOREM2: &[&str] = &["profile", "kind", "grid", "h1", "c0", "c2", "ratio"];

/// CSV header of each experiment.
pub fn columns(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::Homological => HOMOLOGICAL,
        ExperimentKind::Identities => IDENTITIES,
        ExperimentKind::SamplerValidation => SAMPLER,
        ExperimentKind::Lemma3Scan => LEMMA3,
        ExperimentKind::RatioScaling => RATIO,
        ExperimentKind::Autocorrelation => AUTOCORRELATION,
        ExperimentKind::Chebyshev => CHEBYSHEV,
        ExperimentKind::MultiPacket => MULTI,
        ExperimentKind::Theorem2H1 => THEOREM2,
    }
}

pub fn execute(settings: &Settings) -> Result<Report> {
    let mut report = Report::new(columns(settings.experiment));
    let mut run = Suite {
        s: settings,
        report: &mut report,
    };
    match settings.experiment {
        ExperimentKind::Homological => run.homological()?,
        ExperimentKind::Identities => run.identities()?,
        ExperimentKind::SamplerValidation => run.sampler_validation()?,
        ExperimentKind::Lemma3Scan => run.lemma3_scan()?,
        ExperimentKind::RatioScaling => run.ratio_scaling()?,
        ExperimentKind::Autocorrelation => run.autocorrelation()?,
        ExperimentKind::Chebyshev => run.chebyshev()?,
        ExperimentKind::MultiPacket => run.multi_packet()?,
        ExperimentKind::Theorem2H1 => run.theorem2()?,
    }
    Ok(report)
}

fn f(x: f64) -> String {
    fmt_f64(x)
}

fn u(x: usize) -> String {
    x.to_string()
}

fn hypot(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

/// Rounds a sampling interval to a whole number of steps.
fn snap(interval: f64, dt: f64) -> f64 {
    (interval / dt).round().max(1.0) * dt
}

fn z_score(diff: f64, stderr: f64) -> f64 {
    if stderr > 0.0 {
        diff.abs() / stderr
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

struct Suite<'a> {
    s: &'a Settings,
    report: &'a mut Report,
}

impl Suite<'_> {
    fn cell(&self, i: usize, j: usize) -> u64 {
        derive_seed(self.s.seed, (i * self.s.beta_list.len() + j) as u64)
    }

    fn params(&self, n: usize, beta: f64) -> Result<ChainParams> {
        ChainParams::new(n, self.s.a, beta)
    }

    fn ensemble(&mut self, params: &ChainParams, count: usize, seed: u64) -> Result<Vec<ChainState>> {
        let ens = gibbs_ensemble(params, count, seed)?;
        self.report.diagnostics.push(ens.diagnostics);
        Ok(ens.states)
    }

    fn packet_for(&mut self, spec: &ProfileSpec, params: &ChainParams) -> Result<PacketObservable> {
        let nu = NuProfile::new(spec.clone())?;
        let packet = PacketObservable::new(&nu, params.n())?.for_params(params);
        let n = params.n();
        if !self.report.min_denominators.iter().any(|&(m, _)| m == n) {
            self.report.min_denominators.push((n, packet.min_denominator()));
        }
        Ok(packet)
    }

    fn packet(&mut self, params: &ChainParams) -> Result<PacketObservable> {
        let spec = self.s.profile.clone();
        self.packet_for(&spec, params)
    }

    fn check(&mut self, id: String, criterion: Option<u8>, passed: bool, detail: String) {
        self.report.checks.push(Check::new(id, criterion, passed, detail));
    }

    fn row(&mut self, row: Vec<String>) {
        self.report.table.push(row);
    }

    fn homological(&mut self) -> Result<()> {
        let s = self.s;
        for (i, &n) in s.n_list.iter().enumerate() {
            for (j, &beta) in s.beta_list.iter().enumerate() {
                let params = self.params(n, beta)?;
                let packet = self.packet(&params)?;
                if j == 0 {
                    let b = bracket_norm_phi0_h1(&packet);
                    self.check(
                        format!("bracket-norm.N{n}"),
                        Some(10),
                        b.holds(),
                        format!(
                            "‖{{Φ0,H1}}‖₊ = {:.4e}, bound 2⁴·3·‖Φ0‖₊‖H1‖₊ = {:.4e}",
                            b.bracket_norm, b.bound
                        ),
                    );
                }
                let states = self.ensemble(&params, s.n_samples, self.cell(i, j))?;
                let residuals: Vec<Result<f64>> = states
                    .par_iter()
                    .map(|st| homological_residual(st, &packet, &params))
                    .collect();
                let mut max = 0.0f64;
                for (k, r) in residuals.into_iter().enumerate() {
                    let r = r?;
                    max = max.max(r);
                    self.row(vec![u(n), f(beta), u(k), f(r)]);
                }
                self.check(
                    format!("homological.N{n}.beta{beta}"),
                    Some(1),
                    max <= HOMOLOGICAL_TOL,
                    format!(
                        "max relative residual {max:.3e} over {} states (tolerance {HOMOLOGICAL_TOL:e})",
                        states.len()
                    ),
                );
            }
        }
        Ok(())
    }

    fn identities(&mut self) -> Result<()> {
        let s = self.s;
        let grid = s.t_grid.expect("validated");
        for (i, &n) in s.n_list.iter().enumerate() {
            let mut rng = derived_rng(derive_seed(s.seed, (1 << 32) + i as u64), 0);
            let mut gauss = |scale: f64| -> Vec<f64> {
                (0..n)
                    .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .collect()
            };
            let v = gauss(1.0);
            let t = SineTransform::new(n);
            let back = t.apply(&t.apply(&v));
            let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let inv = v.iter().zip(&back).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / vmax;
            self.row(vec!["involution".into(), u(n), String::new(), f(inv), f(TRANSFORM_TOL)]);
            self.check(
                format!("involution.N{n}"),
                Some(2),
                inv <= TRANSFORM_TOL,
                format!("max |S²v − v|/max|v| = {inv:.3e}"),
            );

            let beta0 = s.beta_list[0];
            let scale = beta0.powf(-0.5);
            let state = ChainState::new(gauss(scale), gauss(scale))?;
            let params = self.params(n, beta0)?;
            let h0 = energies(&state, &params).h0;
            let modes = NormalModes::new(n);
            let sum: f64 = modes.actions(&state).iter().zip(modes.omega()).map(|(a, w)| a * w).sum();
            let pars = (sum - h0).abs() / h0.abs();
            self.row(vec!["parseval".into(), u(n), f(beta0), f(pars), f(TRANSFORM_TOL)]);
            self.check(
                format!("parseval.N{n}"),
                Some(2),
                pars <= TRANSFORM_TOL,
                format!("|Σ ω_k I_k − H0|/H0 = {pars:.3e}"),
            );

            for (j, &beta) in s.beta_list.iter().enumerate() {
                let params = self.params(n, beta)?;
                let states = self.ensemble(&params, s.n_samples, self.cell(i, j))?;
                let verlet = Verlet::new(params, s.dt)?;
                let interval = snap(grid.interval_at(beta), s.dt);
                let excursions: Vec<Result<f64>> = states
                    .par_iter()
                    .map(|st| {
                        let e0 = total_energy(st, &params);
                        let mut worst = 0.0f64;
                        verlet.sample_path(st, interval, grid.points, &mut |_, x| {
                            worst = worst.max((total_energy(x, &params) - e0).abs() / e0.abs());
                        })?;
                        Ok(worst)
                    })
                    .collect();
                let mut worst = 0.0f64;
                for e in excursions {
                    worst = worst.max(e?);
                }
                let horizon = interval * (grid.points - 1) as f64;
                self.row(vec![
                    "energy_fluctuation".into(),
                    u(n),
                    f(beta),
                    f(worst),
                    f(ENERGY_FLUCTUATION_TOL),
                ]);
                self.check(
                    format!("energy.N{n}.beta{beta}"),
                    Some(2),
                    worst <= ENERGY_FLUCTUATION_TOL,
                    format!(
                        "max |E(t) − E(0)|/E(0) = {worst:.3e} over t ≤ {horizon}, dt = {}, {} states",
                        s.dt,
                        states.len()
                    ),
                );
            }
        }
        Ok(())
    }

    fn sampler_validation(&mut self) -> Result<()> {
        let s = self.s;
        for (j, &beta) in s.beta_list.iter().enumerate() {
            let density = TiltedDensity::centered(beta, ChainParams::new(3, s.a, beta)?.potential())?;
            for (i, &n) in s.n_list.iter().enumerate() {
                let moments = n >= MOMENT_MIN_N;
                let slab = n <= SLAB_MAX_N;
                if !moments && !slab {
                    continue;
                }
                let params = self.params(n, beta)?;
                let states = self.ensemble(&params, s.n_samples, self.cell(i, j))?;
                let diag = self.report.diagnostics.last().expect("just pushed").clone();
                let b = f(beta);
                self.row(vec![
                    "constraint_drift".into(),
                    u(n),
                    b.clone(),
                    String::new(),
                    f(diag.max_constraint_drift),
                    String::new(),
                    f(CONSTRAINT_TOL),
                    String::new(),
                ]);
                self.check(
                    format!("constraint.N{n}.beta{beta}"),
                    Some(3),
                    diag.max_constraint_drift <= CONSTRAINT_TOL,
                    format!("max |Σr| drift per sweep {:.3e}", diag.max_constraint_drift),
                );
                self.row(vec![
                    "acceptance".into(),
                    u(n),
                    b.clone(),
                    String::new(),
                    f(diag.acceptance_rate),
                    String::new(),
                    String::new(),
                    String::new(),
                ]);
                let (lo, hi) = ACCEPTANCE_RANGE;
                self.check(
                    format!("acceptance.N{n}.beta{beta}"),
                    None,
                    (lo..=hi).contains(&diag.acceptance_rate),
                    format!("acceptance rate {:.3} (range [{lo}, {hi}])", diag.acceptance_rate),
                );
                let bonds: Vec<Vec<f64>> = states.iter().map(|st| st.bonds()).collect();

                if moments {
                    for k in 1..=MAX_MOMENT_CHECKED {
                        let xs: Vec<f64> = bonds.iter().map(|r| r[0].powi(k as i32)).collect();
                        let e = Estimate::from_samples(&xs);
                        let reference = density.moment(k)?;
                        let z = z_score(e.mean - reference, e.stderr_mean);
                        self.row(vec![
                            "site_moment".into(),
                            u(n),
                            b.clone(),
                            u(k),
                            f(e.mean),
                            f(e.stderr_mean),
                            f(reference),
                            f(0.0),
                        ]);
                        self.check(
                            format!("moment{k}.N{n}.beta{beta}"),
                            Some(3),
                            z <= MOMENT_SIGMAS,
                            format!(
                                "⟨r_0^{k}⟩ = {:.6e} ± {:.1e}, tilted density {reference:.6e} (z = {z:.2})",
                                e.mean, e.stderr_mean
                            ),
                        );
                    }
                }

                if slab {
                    let mut rng = derived_rng(self.cell(i, j), 1 << 20);
                    let reference =
                        slab_rejection_bonds(&mut rng, &density, n + 1, SLAB_HALF_WIDTH, s.n_samples);
                    let m = (n + 1) as f64;
                    for k in 1..=MAX_MOMENT_CHECKED {
                        let avg = |r: &Vec<f64>| r.iter().map(|x| x.powi(k as i32)).sum::<f64>() / m;
                        let a: Vec<f64> = bonds.iter().map(avg).collect();
                        let c: Vec<f64> = reference.iter().map(avg).collect();
                        let (ea, ec) = (Estimate::from_samples(&a), Estimate::from_samples(&c));
                        let z = z_score(ea.mean - ec.mean, hypot(ea.stderr_mean, ec.stderr_mean));
                        self.row(vec![
                            "slab_moment".into(),
                            u(n),
                            b.clone(),
                            u(k),
                            f(ea.mean),
                            f(ea.stderr_mean),
                            f(ec.mean),
                            f(ec.stderr_mean),
                        ]);
                        self.check(
                            format!("slab{k}.N{n}.beta{beta}"),
                            Some(3),
                            z <= MOMENT_SIGMAS,
                            format!(
                                "bond moment {k}: sampler {:.6e}, slab rejection {:.6e} (z = {z:.2})",
                                ea.mean, ec.mean
                            ),
                        );
                    }
                }
            }

            let mut sizes: Vec<(usize, usize)> = s
                .n_list
                .iter()
                .copied()
                .enumerate()
                .filter(|&(_, n)| n >= COVARIANCE_MIN_N)
                .collect();
            sizes.sort_by_key(|&(_, n)| n);
            sizes.dedup_by_key(|&mut (_, n)| n);
            if sizes.len() < 2 {
                continue;
            }
            let mut covs = Vec::new();
            for &(i, n) in [sizes[0], sizes[sizes.len() - 1]].iter() {
                let params = self.params(n, beta)?;
                let mut rng = derived_rng(self.cell(i, j), 1 << 21);
                let c = monomial_covariance_test(&mut rng, &params, &[0], &[1], s.sweeps)?;
                // exchangeable bonds with zero sum: cov(r_i, r_j) = −Var/(m − 1)
                let exact = -density.variance() / n as f64;
                self.row(vec![
                    "covariance".into(),
                    u(n),
                    f(beta),
                    u(1),
                    f(c.covariance),
                    f(c.stderr),
                    f(exact),
                    String::new(),
                ]);
                covs.push((n, c));
            }
            let ((ns, cs), (nl, cl)) = (&covs[0], &covs[1]);
            let excess = cl.covariance.abs() - COVARIANCE_SHRINK * cs.covariance.abs();
            let sigma = hypot(cl.stderr, COVARIANCE_SHRINK * cs.stderr);
            self.check(
                format!("covariance.N{ns}-N{nl}.beta{beta}"),
                Some(4),
                excess <= COMBINED_SIGMAS * sigma,
                format!(
                    "|cov(N={nl})| = {:.3e} ± {:.1e}, {COVARIANCE_SHRINK}·|cov(N={ns})| = {:.3e} ± {:.1e}",
                    cl.covariance.abs(),
                    cl.stderr,
                    COVARIANCE_SHRINK * cs.covariance.abs(),
                    COVARIANCE_SHRINK * cs.stderr
                ),
            );
        }
        Ok(())
    }

    fn lemma3_scan(&mut self) -> Result<()> {
        let s = self.s;
        let kinds = [PsKind::Phi0, PsKind::H1, PsKind::Phi1];
        let mut normalized: Vec<Vec<f64>> = vec![Vec::new(); kinds.len()];
        for (i, &n) in s.n_list.iter().enumerate() {
            let packet = Arc::new(self.packet(&self.params(n, s.beta_list[0])?)?);
            let tests: Vec<_> = kinds.iter().map(|&k| from_packet(k, packet.clone())).collect();
            for (j, &beta) in s.beta_list.iter().enumerate() {
                let params = self.params(n, beta)?;
                let states = self.ensemble(&params, s.n_samples, self.cell(i, j))?;
                for (t, test) in tests.iter().enumerate() {
                    let row = lemma3_row(test, &params, &states)?;
                    normalized[t].push(row.normalized);
                    self.row(vec![
                        test.kind.name().into(),
                        u(n),
                        f(beta),
                        f(row.variance),
                        f(row.variance_stderr),
                        f(row.normalized),
                        f(row.normalized_stderr),
                    ]);
                }
            }
        }
        for (t, kind) in kinds.iter().enumerate() {
            let v = &normalized[t];
            let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let spread = max / min;
            self.check(
                format!("variance-band.{}", kind.name()),
                Some(5),
                min > 0.0 && spread <= LEMMA3_BAND,
                format!(
                    "normalized variance in [{min:.4}, {max:.4}], spread {spread:.3} (limit {LEMMA3_BAND})"
                ),
            );
        }
        Ok(())
    }

    fn ratio_scaling(&mut self) -> Result<()> {
        let s = self.s;
        for (i, &n) in s.n_list.iter().enumerate() {
            let mut ratio = Vec::new();
            let mut corrector = Vec::new();
            for (j, &beta) in s.beta_list.iter().enumerate() {
                let params = self.params(n, beta)?;
                let packet = self.packet(&params)?;
                let states = self.ensemble(&params, s.n_samples, self.cell(i, j))?;
                let r = ratio_theorem1(&packet, &params, &states)?;
                self.row(vec![
                    u(n),
                    f(beta),
                    f(r.phi_dot_norm),
                    f(r.sigma_phi),
                    f(r.ratio),
                    f(r.ratio_stderr),
                    f(r.sigma_phi0),
                    f(r.sigma_phi1),
                    f(r.corrector_ratio),
                    f(r.corrector_ratio_stderr),
                    u(r.n_samples),
                ]);
                ratio.push((r.ratio, r.ratio_stderr));
                corrector.push((r.corrector_ratio, r.corrector_ratio_stderr));
            }
            for (name, data, (lo, hi)) in [
                ("ratio-slope", &ratio, RATIO_SLOPE),
                ("corrector-slope", &corrector, CORRECTOR_SLOPE),
            ] {
                let y: Vec<f64> = data.iter().map(|d| d.0).collect();
                let e: Vec<f64> = data.iter().map(|d| d.1).collect();
                let fit = fit_power_law_weighted(&s.beta_list, &y, Some(&e))?;
                self.check(
                    format!("{name}.N{n}"),
                    Some(6),
                    (lo..=hi).contains(&fit.exponent),
                    format!(
                        "log-log slope {:.3} ± {:.3} (window [{lo}, {hi}])",
                        fit.exponent, fit.stderr
                    ),
                );
            }
        }
        Ok(())
    }

    fn autocorrelation(&mut self) -> Result<()> {
        let s = self.s;
        let grid = s.t_grid.expect("validated");
        for (i, &n) in s.n_list.iter().enumerate() {
            let mut lives = Vec::new();
            for (j, &beta) in s.beta_list.iter().enumerate() {
                let params = self.params(n, beta)?;
                let packet = self.packet(&params)?;
                let states = self.ensemble(&params, s.n_samples, self.cell(i, j))?;
                let verlet = Verlet::new(params, s.dt)?;
                let interval = snap(grid.interval_at(beta), s.dt);
                let curve =
                    autocorrelation(&verlet, |st| packet.phi0(st), &states, interval, grid.points)?;
                for k in 0..curve.times.len() {
                    self.row(vec![
                        u(n),
                        f(beta),
                        f(curve.times[k]),
                        f(curve.values[k]),
                        f(curve.stderrs[k]),
                        f(curve.normalized[k]),
                        f(curve.normalized_stderrs[k]),
                    ]);
                }
                let (t_min, c_min) = curve
                    .times
                    .iter()
                    .zip(&curve.normalized)
                    .filter(|(t, _)| **t <= beta * (1.0 + 1e-12))
                    .fold((0.0, f64::INFINITY), |acc, (&t, &c)| if c < acc.1 { (t, c) } else { acc });
                self.check(
                    format!("persistence.N{n}.beta{beta}"),
                    Some(7),
                    c_min >= PERSISTENCE_LEVEL,
                    format!("min C(t)/C(0) over t ≤ β is {c_min:.4} at t = {t_min}"),
                );
                lives.push((beta, half_life_with_error(&curve)));
            }
            if lives.len() < 2 {
                continue;
            }
            let (b0, h0) = lives[0];
            let (b1, h1) = lives[lives.len() - 1];
            let id = format!("half-life-ratio.N{n}");
            let Some(t0) = h0.value else {
                self.check(
                    id,
                    Some(7),
                    false,
                    format!("no half-life at β = {b0} within t ≤ {}; ratio undetermined", h0.horizon),
                );
                continue;
            };
            let (t1, bound) = match h1.value {
                Some(t) => (t, ""),
                None => (h1.horizon, " (lower bound: no crossing on the grid)"),
            };
            let ratio = t1 / t0;
            let sigma = ratio * hypot(h1.stderr / t1, h0.stderr / t0);
            self.check(
                id,
                Some(7),
                ratio + COMBINED_SIGMAS * sigma >= HALF_LIFE_RATIO,
                format!(
                    "t_half(β={b1}) = {t1:.2}{bound}, t_half(β={b0}) = {t0:.2} ± {:.2}, ratio {ratio:.2} ± {sigma:.2}",
                    h0.stderr
                ),
            );
        }
        Ok(())
    }

    fn chebyshev(&mut self) -> Result<()> {
        let s = self.s;
        for (i, &n) in s.n_list.iter().enumerate() {
            let mut probs: Vec<(f64, f64, f64)> = Vec::new();
            for (j, &beta) in s.beta_list.iter().enumerate() {
                let params = self.params(n, beta)?;
                let packet = self.packet(&params)?;
                let states = self.ensemble(&params, s.n_samples, self.cell(i, j))?;
                let r = chebyshev_experiment(&packet, &params, s.chebyshev_a, &states, s.dt)?;
                self.row(vec![
                    u(n),
                    f(beta),
                    f(r.a),
                    f(r.time),
                    f(r.sigma_phi0),
                    f(r.threshold),
                    f(r.probability),
                    f(r.probability_stderr),
                    f(r.increment_variance),
                    f(r.increment_variance_stderr),
                    f(r.chebyshev_bound),
                    f(r.chebyshev_bound_stderr),
                    u(r.n_samples),
                ]);
                let sigma = hypot(r.probability_stderr, r.chebyshev_bound_stderr);
                self.check(
                    format!("chebyshev-bound.N{n}.beta{beta}"),
                    Some(8),
                    r.probability <= r.chebyshev_bound + CHEBYSHEV_SIGMAS * sigma,
                    format!(
                        "P = {:.4} ± {:.4}, bound {:.4} ± {:.4}",
                        r.probability, r.probability_stderr, r.chebyshev_bound, r.chebyshev_bound_stderr
                    ),
                );
                probs.push((beta, r.probability, r.probability_stderr));
            }
            for w in probs.windows(2) {
                let ((b0, p0, e0), (b1, p1, e1)) = (w[0], w[1]);
                let sigma = hypot(e0, e1);
                self.check(
                    format!("drift-trend.N{n}.beta{b0}-{b1}"),
                    Some(8),
                    p1 <= p0 + COMBINED_SIGMAS * sigma,
                    format!("P(β={b0}) = {p0:.4}, P(β={b1}) = {p1:.4}, combined stderr {sigma:.4}"),
                );
            }
        }
        Ok(())
    }

    fn multi_packet(&mut self) -> Result<()> {
        let s = self.s;
        let profiles = disjoint_profiles(s.packets, "bump")?;
        for (i, &n) in s.n_list.iter().enumerate() {
            for (j, &beta) in s.beta_list.iter().enumerate() {
                let params = self.params(n, beta)?;
                let packets = profiles
                    .iter()
                    .map(|p| self.packet_for(&p.spec().clone(), &params))
                    .collect::<Result<Vec<_>>>()?;
                let states = self.ensemble(&params, s.n_samples, self.cell(i, j))?;
                let persistence_time = MULTI_PERSISTENCE_FRACTION * beta;
                let r = multi_packet_experiment(
                    &packets,
                    &params,
                    s.chebyshev_a,
                    persistence_time,
                    &states,
                    s.dt,
                )?;
                for (k, c) in r.per_packet.iter().enumerate() {
                    self.row(vec![
                        u(n),
                        f(beta),
                        u(k),
                        f(c.time),
                        f(c.threshold),
                        f(c.probability),
                        f(c.probability_stderr),
                        f(c.chebyshev_bound),
                        f(c.chebyshev_bound_stderr),
                        f(r.persistence_time),
                        f(r.persistence[k]),
                        f(r.persistence_stderr[k]),
                    ]);
                    self.check(
                        format!("packet-persistence.N{n}.beta{beta}.k{k}"),
                        None,
                        r.persistence[k] >= PERSISTENCE_LEVEL,
                        format!(
                            "C(t)/C(0) = {:.4} ± {:.4} at t = {}",
                            r.persistence[k], r.persistence_stderr[k], r.persistence_time
                        ),
                    );
                }
                let time = r.per_packet.first().map_or(f64::NAN, |c| c.time);
                self.row(vec![
                    u(n),
                    f(beta),
                    "joint".into(),
                    f(time),
                    String::new(),
                    f(r.joint_probability),
                    f(r.joint_stderr),
                    f(r.union_bound),
                    f(r.union_bound_stderr),
                    String::new(),
                    String::new(),
                    String::new(),
                ]);
                let sigma = hypot(r.joint_stderr, r.union_bound_stderr);
                self.check(
                    format!("joint-drift.N{n}.beta{beta}"),
                    None,
                    r.joint_probability <= r.union_bound + CHEBYSHEV_SIGMAS * sigma,
                    format!(
                        "P(any packet drifts) = {:.4}, union of single-packet frequencies {:.4}",
                        r.joint_probability, r.union_bound
                    ),
                );
            }
        }
        Ok(())
    }

    fn theorem2(&mut self) -> Result<()> {
        let family = registered_family();
        let (g1, g2) = THM2_GRIDS;
        let mut constant = 0.0f64;
        let mut admissible = 0;
        for (idx, spec) in family.iter().enumerate() {
            let nu = NuProfile::new(spec.clone())?;
            let label = serde_json::to_string(spec)?;
            let mut ratios = Vec::new();
            for grid in [g1, g2] {
                let ratio = check_thm2_bound(&nu, grid)?;
                let h1 = eval_h1(&nu, grid)?.value;
                self.row(vec![
                    label.clone(),
                    spec.kind().into(),
                    u(grid),
                    f(h1),
                    f(nu.c0()),
                    f(nu.c2()),
                    f(ratio),
                ]);
                ratios.push(ratio);
            }
            admissible += 1;
            constant = constant.max(ratios[0]);
            let change = (ratios[1] - ratios[0]).abs() / ratios[0];
            self.check(
                format!("refinement.profile{idx}"),
                Some(9),
                change <= THM2_REFINEMENT_TOL,
                format!(
                    "{}: h1/(c0+c2) = {:.4} on {g1}, {:.4} on {g2} (change {:.2}%)",
                    spec.kind(),
                    ratios[0],
                    ratios[1],
                    100.0 * change
                ),
            );
        }
        self.check(
            "family-constant".into(),
            Some(9),
            admissible >= THM2_MIN_FAMILY,
            format!("{admissible} admissible profiles, h1 ≤ {constant:.4}·(c0+c2) on grid {g1}"),
        );

        let linear = ProfileSpec::Linear { slope: 1.0 };
        let nu = NuProfile::new(linear.clone())?;
        let label = serde_json::to_string(&linear)?;
        let (d1, d2) = DIVERGENCE_GRIDS;
        let mut h = Vec::new();
        for grid in [d1, d2] {
            let v = eval_h1(&nu, grid)?.value;
            self.row(vec![
                label.clone(),
                linear.kind().into(),
                u(grid),
                f(v),
                f(nu.c0()),
                f(nu.c2()),
                f(v / (nu.c0() + nu.c2())),
            ]);
            h.push(v);
        }
        let growth = h[1] / h[0];
        self.check(
            "divergence.linear".into(),
            Some(9),
            growth >= DIVERGENCE_FACTOR,
            format!("g(x) = x: h1 = {:.4} on {d1}, {:.4} on {d2} (growth {growth:.2}×)", h[0], h[1]),
        );
        self.check(
            "rejects-linear".into(),
            None,
            check_thm2_bound(&nu, d1).is_err(),
            "profiles with g'(0) ≠ 0 are rejected by the bound check".into(),
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::config::ExperimentConfig;

    #[test]
    fn columns_match_schema_file() {
        let text = include_str!("../../schema/csv_columns.json");
        let schema: serde_json::Value = serde_json::from_str(text).unwrap();
        let obj = schema.as_object().unwrap();
        assert_eq!(obj.len(), ExperimentKind::ALL.len());
        for kind in ExperimentKind::ALL {
            let listed: Vec<&str> = obj[kind.name()]["columns"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_str().unwrap())
                .collect();
            assert_eq!(listed, columns(kind), "{kind}");
        }
    }

    #[test]
    fn small_homological_run_passes() {
        let mut config = ExperimentConfig::minimal(ExperimentKind::Homological, 3);
        config.n_list = Some(vec![15]);
        config.n_samples = Some(10);
        let report = execute(&Settings::from_config(config).unwrap()).unwrap();
        assert!(report.passed(), "{:?}", report.checks);
        assert_eq!(report.table.rows.len(), 10);
        assert_eq!(report.criterion_passed(1), Some(true));
        assert_eq!(report.criterion_passed(10), Some(true));
        assert_eq!(report.criterion_passed(2), None);
    }

    #[test]
    fn theorem2_decides_criterion_nine() {
        let config = ExperimentConfig::minimal(ExperimentKind::Theorem2H1, 0);
        let report = execute(&Settings::from_config(config).unwrap()).unwrap();
        assert_eq!(report.criterion_passed(9), Some(true));
    }

    #[test]
    fn snapping_keeps_whole_steps() {
        assert_eq!(snap(1.25, 0.02), 1.26);
        assert_eq!(snap(0.001, 0.02), 0.02);
    }
}
