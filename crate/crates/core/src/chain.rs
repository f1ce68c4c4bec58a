//! FPU-αβ chain with fixed ends: potential, energies, forces and the
//! Störmer–Verlet flow.
//!
//! The boundary particles `q_0 = q_{N+1} = 0` are never stored. A state of
//! `N` particles has `N + 1` bonds `r_j = q_{j+1} - q_j`, `j = 0..=N`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default integration step. The largest harmonic frequency is 2.
pub const DEFAULT_DT: f64 = 0.02;

/// One-bond interaction `r²/2 + cubic·r³/3 + quartic·r⁴/4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub cubic: f64,
    pub quartic: f64,
}

impl Potential {
    /// The FPU potential with unit cubic coefficient and quartic coefficient `a`.
    pub fn fpu(a: f64) -> Self {
        Potential {
            cubic: 1.0,
            quartic: a,
        }
    }

    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        let r2 = r * r;
        r2 * (0.5 + r * (self.cubic / 3.0 + 0.25 * self.quartic * r))
    }

    #[inline]
    pub fn derivative(&self, r: f64) -> f64 {
        r * (1.0 + r * (self.cubic + self.quartic * r))
    }
}

/// `V(r) = r²/2 + r³/3 + A r⁴/4`.
pub fn potential_v(r: f64, a: f64) -> f64 {
    Potential::fpu(a).value(r)
}

/// `V'(r) = r + r² + A r³`.
pub fn potential_dv(r: f64, a: f64) -> f64 {
    Potential::fpu(a).derivative(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    n: usize,
    beta: f64,
    potential: Potential,
}

impl ChainParams {
    pub fn new(n: usize, a: f64, beta: f64) -> Result<Self> {
        if n < 3 {
            return Err(invalid("n", format!("need at least 3 particles, got {n}")));
        }
        if !(a > 0.0 && a.is_finite()) {
            return Err(invalid("a", format!("must be positive and finite, got {a}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid("beta", format!("must be positive and finite, got {beta}")));
        }
        Ok(ChainParams {
            n,
            beta,
            potential: Potential::fpu(a),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Quartic coefficient `A`.
    pub fn a(&self) -> f64 {
        self.potential.quartic
    }

    pub fn potential(&self) -> Potential {
        self.potential
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        ChainParams::new(self.n, self.a(), beta).map(|p| ChainParams {
            potential: self.potential,
            ..p
        })
    }

    /// Test hook: the same chain with every nonlinear term switched off.
    pub fn harmonic(&self) -> Self {
        ChainParams {
            potential: Potential {
                cubic: 0.0,
                quartic: 0.0,
            },
            ..*self
        }
    }

    /// Test hook: the same chain with the cubic term removed.
    pub fn symmetric(&self) -> Self {
        ChainParams {
            potential: Potential {
                cubic: 0.0,
                quartic: self.potential.quartic,
            },
            ..*self
        }
    }
}

/// Phase-space point of the chain (boundary values implicit).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl ChainState {
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::DimensionMismatch {
                expected: p.len(),
                got: q.len(),
            });
        }
        if p.iter().chain(q.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { time: 0.0 });
        }
        Ok(ChainState { p, q })
    }

    pub fn zeros(n: usize) -> Self {
        ChainState {
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// The `N + 1` bond extensions, including both fixed ends.
    pub fn bonds(&self) -> Vec<f64> {
        let n = self.q.len();
        let mut r = Vec::with_capacity(n + 1);
        let mut prev = 0.0;
        for &qj in &self.q {
            r.push(qj - prev);
            prev = qj;
        }
        r.push(-prev);
        r
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.q.iter()).all(|x| x.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ChainState {
            p: self.p.iter().map(|x| x * factor).collect(),
            q: self.q.iter().map(|x| x * factor).collect(),
        }
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.q.len() != n || self.p.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.q.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energies {
    pub h0: f64,
    pub h1: f64,
    pub h2: f64,
}

impl Energies {
    pub fn total(&self) -> f64 {
        self.h0 + self.h1 + self.h2
    }
}

pub fn energies(state: &ChainState, params: &ChainParams) -> Energies {
    let pot = params.potential;
    let kinetic: f64 = state.p.iter().map(|p| 0.5 * p * p).sum();
    let (mut quad, mut cub, mut quart) = (0.0, 0.0, 0.0);
    for r in state.bonds() {
        let r2 = r * r;
        quad += 0.5 * r2;
        cub += r2 * r;
        quart += r2 * r2;
    }
    Energies {
        h0: kinetic + quad,
        h1: pot.cubic * cub / 3.0,
        h2: pot.quartic * quart / 4.0,
    }
}

pub fn total_energy(state: &ChainState, params: &ChainParams) -> f64 {
    energies(state, params).total()
}

/// `-∂H/∂q_j = V'(r_j) - V'(r_{j-1})`, written into `out`.
pub fn forces_into(q: &[f64], pot: &Potential, out: &mut [f64]) {
    let n = q.len();
    let mut prev_dv = pot.derivative(q[0]);
    for j in 0..n {
        let next_q = if j + 1 < n { q[j + 1] } else { 0.0 };
        let dv = pot.derivative(next_q - q[j]);
        out[j] = dv - prev_dv;
        prev_dv = dv;
    }
}

pub fn forces(state: &ChainState, params: &ChainParams) -> Vec<f64> {
    let mut f = vec![0.0; state.len()];
    forces_into(&state.q, &params.potential, &mut f);
    f
}

/// Which piece of the Hamiltonian a gradient refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HamiltonianPart {
    Quadratic,
    Cubic,
    Quartic,
    Total,
}

/// Gradient of a phase-space function in particle coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGradient {
    pub dq: Vec<f64>,
    pub dp: Vec<f64>,
}

impl PhaseGradient {
    pub fn zeros(n: usize) -> Self {
        PhaseGradient {
            dq: vec![0.0; n],
            dp: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.dq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dq.is_empty()
    }

    pub fn add_assign(&mut self, other: &PhaseGradient) {
        for (a, b) in self.dq.iter_mut().zip(&other.dq) {
            *a += b;
        }
        for (a, b) in self.dp.iter_mut().zip(&other.dp) {
            *a += b;
        }
    }
}

/// Gradient of `H₀`, `H₁`, `H₂` or `H` at `state`.
pub fn hamiltonian_gradient(
    state: &ChainState,
    params: &ChainParams,
    part: HamiltonianPart,
) -> PhaseGradient {
    let n = state.len();
    let pot = params.potential;
    let bond_dv = |r: f64| -> f64 {
        match part {
            HamiltonianPart::Quadratic => r,
            HamiltonianPart::Cubic => pot.cubic * r * r,
            HamiltonianPart::Quartic => pot.quartic * r * r * r,
            HamiltonianPart::Total => pot.derivative(r),
        }
    };
    let r = state.bonds();
    let dq = (0..n).map(|j| bond_dv(r[j]) - bond_dv(r[j + 1])).collect();
    let dp = match part {
        HamiltonianPart::Quadratic | HamiltonianPart::Total => state.p.clone(),
        _ => vec![0.0; n],
    };
    PhaseGradient { dq, dp }
}

/// `{f, g} = Σ_j ∂f/∂q_j ∂g/∂p_j − ∂f/∂p_j ∂g/∂q_j`.
pub fn poisson_bracket(f: &PhaseGradient, g: &PhaseGradient) -> Result<f64> {
    if f.len() != g.len() || f.dp.len() != f.dq.len() || g.dp.len() != g.dq.len() {
        return Err(Error::DimensionMismatch {
            expected: f.len(),
            got: g.len(),
        });
    }
    Ok(f.dq
        .iter()
        .zip(&f.dp)
        .zip(g.dq.iter().zip(&g.dp))
        .map(|((fq, fp), (gq, gp))| fq * gp - fp * gq)
        .sum())
}

/// Leapfrog integrator holding the force from the previous step.
#[derive(Debug, Clone)]
pub struct Verlet {
    params: ChainParams,
    dt: f64,
}

impl Verlet {
    pub fn new(params: ChainParams, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt != 0.0) {
            return Err(invalid("dt", format!("must be finite and nonzero, got {dt}")));
        }
        Ok(Verlet { params, dt })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    /// Advance `steps` kick-drift-kick steps in place.
    pub fn advance(&self, state: &mut ChainState, steps: usize, force: &mut [f64]) {
        let pot = self.params.potential;
        let half = 0.5 * self.dt;
        forces_into(&state.q, &pot, force);
        for _ in 0..steps {
            for (p, f) in state.p.iter_mut().zip(force.iter()) {
                *p += half * f;
            }
            for (q, p) in state.q.iter_mut().zip(state.p.iter()) {
                *q += self.dt * p;
            }
            forces_into(&state.q, &pot, force);
            for (p, f) in state.p.iter_mut().zip(force.iter()) {
                *p += half * f;
            }
        }
    }
}

/// One Störmer–Verlet step of size `dt` (negative `dt` integrates backwards).
pub fn step_verlet(state: &ChainState, params: &ChainParams, dt: f64) -> Result<ChainState> {
    let v = Verlet::new(*params, dt)?;
    let mut out = state.clone();
    let mut force = vec![0.0; state.len()];
    v.advance(&mut out, 1, &mut force);
    Ok(out)
}

/// Number of steps of size `dt` contained in `[0, t_final]`.
pub fn step_count(dt: f64, t_final: f64) -> usize {
    ((t_final / dt) * (1.0 + 1e-12)).floor() as usize
}

/// A time evolution that can be sampled on an evenly spaced grid.
pub trait Propagator: Sync {
    /// Calls `visit(i, state)` at times `i·interval`, `i = 0..count`.
    fn sample_path(
        &self,
        initial: &ChainState,
        interval: f64,
        count: usize,
        visit: &mut dyn FnMut(usize, &ChainState),
    ) -> Result<()>;
}

impl Propagator for Verlet {
    fn sample_path(
        &self,
        initial: &ChainState,
        interval: f64,
        count: usize,
        visit: &mut dyn FnMut(usize, &ChainState),
    ) -> Result<()> {
        let stride = ((interval / self.dt).round() as usize).max(1);
        if ((stride as f64) * self.dt - interval).abs() > 1e-9 * interval.max(1.0) {
            return Err(invalid(
                "t_step",
                format!("sampling interval {interval} is not a multiple of dt = {}", self.dt),
            ));
        }
        let mut state = initial.clone();
        let mut force = vec![0.0; state.len()];
        for i in 0..count {
            if i > 0 {
                self.advance(&mut state, stride, &mut force);
                if !state.is_finite() {
                    return Err(Error::NonFinite {
                        time: i as f64 * interval,
                    });
                }
            }
            visit(i, &state);
        }
        Ok(())
    }
}

/// Trajectory snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub state: ChainState,
}

/// Integrates to `t_final`, emitting a snapshot every `sample_stride` steps
/// (including `t = 0`).
pub fn integrate(
    state: &ChainState,
    params: &ChainParams,
    dt: f64,
    t_final: f64,
    sample_stride: usize,
) -> Result<Vec<Snapshot>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(invalid("t_final", format!("must be non-negative, got {t_final}")));
    }
    if sample_stride == 0 {
        return Err(invalid("sample_stride", "must be at least 1"));
    }
    let verlet = Verlet::new(*params, dt)?;
    let steps = step_count(dt, t_final);
    let mut out = Vec::with_capacity(steps / sample_stride + 1);
    let mut current = state.clone();
    let mut force = vec![0.0; current.len()];
    forces_into(&current.q, &params.potential, &mut force);
    out.push(Snapshot {
        time: 0.0,
        state: current.clone(),
    });
    for step in 1..=steps {
        verlet.advance(&mut current, 1, &mut force);
        if !current.is_finite() {
            return Err(Error::NonFinite {
                time: step as f64 * dt,
            });
        }
        if step % sample_stride == 0 {
            out.push(Snapshot {
                time: step as f64 * dt,
                state: current.clone(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(n: usize, j: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[j] = 1.0;
        v
    }

    #[test]
    fn potential_values() {
        assert_eq!(potential_v(0.0, 1.0), 0.0);
        assert_relative_eq!(potential_v(1.0, 1.0), 13.0 / 12.0, epsilon = 1e-15);
        assert_relative_eq!(potential_v(-1.0, 1.0), 5.0 / 12.0, epsilon = 1e-15);
        assert_relative_eq!(potential_dv(-1.0, 1.0), -1.0, epsilon = 1e-15);
        assert_relative_eq!(potential_dv(2.0, 0.5), 2.0 + 4.0 + 4.0, epsilon = 1e-15);
    }

    #[test]
    fn params_validation() {
        assert!(ChainParams::new(2, 1.0, 1.0).is_err());
        assert!(ChainParams::new(3, 0.0, 1.0).is_err());
        assert!(ChainParams::new(3, 1.0, -1.0).is_err());
        assert!(ChainParams::new(3, 1.0, 1.0).is_ok());
    }

    #[test]
    fn energies_examples() {
        let params = ChainParams::new(5, 1.0, 1.0).unwrap();
        let s = ChainState::new(unit(5, 0), vec![0.0; 5]).unwrap();
        let e = energies(&s, &params);
        assert_eq!((e.h0, e.h1, e.h2), (0.5, 0.0, 0.0));

        let s = ChainState::new(vec![0.0; 5], unit(5, 0)).unwrap();
        let e = energies(&s, &params);
        assert_relative_eq!(e.h0, 1.0);
        assert_relative_eq!(e.h1, 0.0);
        assert_relative_eq!(e.h2, 0.5);

        let e = energies(&ChainState::zeros(5), &params);
        assert_eq!(e.total(), 0.0);
    }

    #[test]
    fn forces_examples() {
        let params = ChainParams::new(3, 1.0, 1.0).unwrap();
        assert_eq!(forces(&ChainState::zeros(3), &params), vec![0.0; 3]);
        let s = ChainState::new(vec![0.0; 3], unit(3, 0)).unwrap();
        assert_eq!(forces(&s, &params), vec![-4.0, 1.0, 0.0]);
    }

    #[test]
    fn forces_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = ChainParams::new(16, 1.0, 1.0).unwrap();
        let h = 1e-5;
        for _ in 0..200 {
            let q: Vec<f64> = (0..16).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let s = ChainState::new(vec![0.0; 16], q).unwrap();
            let f = forces(&s, &params);
            for j in 0..16 {
                let mut plus = s.clone();
                let mut minus = s.clone();
                plus.q[j] += h;
                minus.q[j] -= h;
                let fd = -(total_energy(&plus, &params) - total_energy(&minus, &params)) / (2.0 * h);
                let scale = f[j].abs().max(1e-3);
                assert!((fd - f[j]).abs() / scale <= 1e-6, "j={j} fd={fd} f={}", f[j]);
            }
        }
    }

    #[test]
    fn bracket_of_coordinates() {
        let n = 4;
        let qj = PhaseGradient {
            dq: unit(n, 2),
            dp: vec![0.0; n],
        };
        let pj = PhaseGradient {
            dq: vec![0.0; n],
            dp: unit(n, 2),
        };
        assert_eq!(poisson_bracket(&qj, &pj).unwrap(), 1.0);
        assert_eq!(poisson_bracket(&pj, &pj).unwrap(), 0.0);
        assert!(poisson_bracket(&qj, &PhaseGradient::zeros(3)).is_err());
    }

    #[test]
    fn bracket_of_hamiltonian_with_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ChainParams::new(12, 1.0, 1.0).unwrap();
        for _ in 0..20 {
            let p = (0..12).map(|_| rng.gen_range(-0.3..0.3)).collect();
            let q = (0..12).map(|_| rng.gen_range(-0.3..0.3)).collect();
            let s = ChainState::new(p, q).unwrap();
            let g = hamiltonian_gradient(&s, &params, HamiltonianPart::Total);
            let mut sum = hamiltonian_gradient(&s, &params, HamiltonianPart::Quadratic);
            sum.add_assign(&hamiltonian_gradient(&s, &params, HamiltonianPart::Cubic));
            sum.add_assign(&hamiltonian_gradient(&s, &params, HamiltonianPart::Quartic));
            let scale: f64 = g.dq.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(poisson_bracket(&g, &sum).unwrap().abs() <= 1e-10 * scale * scale);
            // the gradient of H is minus the force
            let f = forces(&s, &params);
            for j in 0..12 {
                assert_relative_eq!(g.dq[j], -f[j], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn zero_state_is_fixed_point() {
        let params = ChainParams::new(8, 1.0, 1.0).unwrap();
        let s = step_verlet(&ChainState::zeros(8), &params, 0.02).unwrap();
        assert_eq!(s, ChainState::zeros(8));
    }

    #[test]
    fn verlet_is_reversible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = ChainParams::new(32, 1.0, 1.0).unwrap();
        let p = (0..32).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let q = (0..32).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let s0 = ChainState::new(p, q).unwrap();
        let s1 = step_verlet(&s0, &params, 0.02).unwrap();
        let back = step_verlet(&s1, &params, -0.02).unwrap();
        for (a, b) in back.p.iter().zip(&s0.p).chain(back.q.iter().zip(&s0.q)) {
            assert!((a - b).abs() <= 1e-12);
        }

        let v = Verlet::new(params, 0.02).unwrap();
        let vb = Verlet::new(params, -0.02).unwrap();
        let mut s = s0.clone();
        let mut force = vec![0.0; 32];
        v.advance(&mut s, 1000, &mut force);
        vb.advance(&mut s, 1000, &mut force);
        for (a, b) in s.p.iter().zip(&s0.p).chain(s.q.iter().zip(&s0.q)) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn harmonic_mode_oscillates_at_its_frequency() {
        // exact solution of the linear chain: mode k with q̂(t) = cos(ω t)
        let n = 15;
        let k = 4;
        let params = ChainParams::new(n, 1.0, 1.0).unwrap().harmonic();
        let omega = 2.0 * (std::f64::consts::PI * k as f64 / (2.0 * (n + 1) as f64)).sin();
        let shape: Vec<f64> = (1..=n)
            .map(|j| {
                (2.0 / (n + 1) as f64).sqrt()
                    * (std::f64::consts::PI * (j * k) as f64 / (n + 1) as f64).sin()
            })
            .collect();
        let state = ChainState::new(vec![0.0; n], shape.clone()).unwrap();
        let period = 2.0 * std::f64::consts::PI / omega;
        let mut errs = Vec::new();
        // with p = 0 leapfrog gives q = cos(ω̃t) exactly, so the phase error
        // is visible where sin(ωt) = ±1
        for &dt in &[0.02, 0.01] {
            let steps = (10.25 * period / dt).round() as usize;
            let t = steps as f64 * dt;
            let snaps = integrate(&state, &params, dt, t, steps).unwrap();
            let last = &snaps.last().unwrap().state;
            let err = last
                .q
                .iter()
                .zip(&shape)
                .map(|(q, s)| (q - s * (omega * t).cos()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[0] < 1e-3, "{errs:?}");
        let order = (errs[0] / errs[1]).log2();
        assert!((1.6..2.4).contains(&order), "observed order {order}");
    }

    #[test]
    fn integrate_snapshot_counts() {
        let params = ChainParams::new(4, 1.0, 1.0).unwrap();
        let s = ChainState::zeros(4);
        assert_eq!(integrate(&s, &params, 0.02, 0.0, 1).unwrap().len(), 1);
        let snaps = integrate(&s, &params, 0.02, 1.0, 3).unwrap();
        assert_eq!(snaps.len(), (1.0f64 / (0.02 * 3.0)).floor() as usize + 1);
        assert!(integrate(&s, &params, 0.0, 1.0, 1).is_err());
        assert!(integrate(&s, &params, 0.02, 1.0, 0).is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        let params = ChainParams::new(4, 1.0, 1.0).unwrap();
        let s = ChainState::new(vec![0.0; 4], vec![50.0, -50.0, 50.0, -50.0]).unwrap();
        match integrate(&s, &params, 0.5, 100.0, 1) {
            Err(Error::NonFinite { time }) => assert!(time > 0.0),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }
}
