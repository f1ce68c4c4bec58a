//! Packet observable `Φ₀ = Σ ν_k I_k`, its cubic corrector `Φ₁`, analytic
//! gradients and Poisson brackets.
//!
//! In complex mode coordinates the cubic part of the Hamiltonian is
//!
//! ```text
//! H₁ = α/(12 √(N+1)) Σ_{τ,k} i τ₁τ₂τ₃ w(k) Ξ_{τ,k},
//! w(k) = 3 δ(k₁+k₂−k₃) − δ(k₁+k₂+k₃−2(N+1)),
//! ```
//!
//! where `Ξ_{τ,k}` takes `ξ_{k_l}` for `τ_l = +1` and `η_{k_l}` for `τ_l = −1`
//! and `α` is the cubic coefficient of the bond potential. Since
//! `{H₀, Ξ} = −i(τ·ω) Ξ` and `{Ξ, Φ₀} = i(τ·ν) Ξ`, the corrector solving
//! `{H₀, Φ₁} = −{H₁, Φ₀}` multiplies every coefficient of `H₁` by
//! `(τ·ν)/(τ·ω)`.

use std::sync::Arc;

use num_complex::Complex64;

use crate::chain::{
    energies, hamiltonian_gradient, poisson_bracket, ChainParams, ChainState, HamiltonianPart,
    PhaseGradient,
};
use crate::error::{Error, Result};
use crate::profiles::{eval_h1, NuProfile};
use crate::spectral::{NormalModes, SpectralState};

/// Tolerance on the imaginary part of `Φ₁` relative to `1 + |Re Φ₁|`.
pub const IMAGINARY_TOLERANCE: f64 = 1e-10;

/// Denominators below this magnitude are refused when building the table.
pub const DENOMINATOR_FLOOR: f64 = 1e-300;

/// The eight sign patterns `τ`, bit `l` set meaning `τ_l = −1`.
pub const SIGN_PATTERNS: [[f64; 3]; 8] = {
    let mut out = [[0.0; 3]; 8];
    let mut p = 0;
    while p < 8 {
        let mut l = 0;
        while l < 3 {
            out[p][l] = if (p >> l) & 1 == 0 { 1.0 } else { -1.0 };
            l += 1;
        }
        p += 1;
    }
    out
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripleKind {
    /// `k₁ + k₂ = k₃`
    Sum,
    /// `k₁ + k₂ + k₃ = 2(N+1)`
    Wrap,
}

impl TripleKind {
    /// Multiplicity of the resonance in `H₁`.
    pub fn weight(self) -> f64 {
        match self {
            TripleKind::Sum => 3.0,
            TripleKind::Wrap => 1.0,
        }
    }

    /// The wrap-around resonance comes from `cos(π(2j+1)) = −1` in the
    /// bond sum and enters with a minus sign.
    pub fn sign(self) -> f64 {
        match self {
            TripleKind::Sum => 1.0,
            TripleKind::Wrap => -1.0,
        }
    }
}

/// One resonant index triple with the ratio `(τ·ν)/(τ·ω)` for each pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonantTriple {
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
    pub kind: TripleKind,
    pub ratios: [f64; 8],
    pub denominators: [f64; 8],
}

impl ResonantTriple {
    pub fn weight(&self) -> f64 {
        self.kind.weight()
    }
}

/// Which observable a gradient is requested for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    Phi0,
    Phi1,
    Phi,
}

/// `Φ₀` together with the table defining `Φ₁` for one chain length.
#[derive(Debug, Clone)]
pub struct PacketObservable {
    n: usize,
    modes: NormalModes,
    nu_k: Vec<f64>,
    g_k: Vec<f64>,
    triples: Vec<ResonantTriple>,
    cubic: f64,
    /// Per triple and pattern: `Φ₁` coefficient divided by `i`.
    coefficients: Vec<[f64; 8]>,
    min_denominator: f64,
}

/// Enumerates the table and stores every coefficient ratio.
pub fn build_phi1_table(profile: &NuProfile, n: usize) -> Result<PacketObservable> {
    PacketObservable::new(profile, n)
}

impl PacketObservable {
    pub fn new(profile: &NuProfile, n: usize) -> Result<Self> {
        let modes = NormalModes::new(n);
        let nu_k: Vec<f64> = (1..=n).map(|k| profile.nu(k as f64 / (n + 1) as f64)).collect();
        let g_k: Vec<f64> = nu_k.iter().zip(modes.omega()).map(|(v, w)| v / w).collect();
        let omega = modes.omega().to_vec();

        let mut triples = Vec::new();
        let mut min_denominator = f64::INFINITY;
        let mut push = |k1: usize, k2: usize, k3: usize, kind: TripleKind| -> Result<()> {
            let mut ratios = [0.0; 8];
            let mut denominators = [0.0; 8];
            let idx = [k1 - 1, k2 - 1, k3 - 1];
            for (p, tau) in SIGN_PATTERNS.iter().enumerate() {
                let den: f64 = (0..3).map(|l| tau[l] * omega[idx[l]]).sum();
                let num: f64 = (0..3).map(|l| tau[l] * nu_k[idx[l]]).sum();
                if den.abs() < DENOMINATOR_FLOOR {
                    return Err(Error::SmallDenominator {
                        k1,
                        k2,
                        k3,
                        denominator: den,
                    });
                }
                min_denominator = min_denominator.min(den.abs());
                ratios[p] = num / den;
                denominators[p] = den;
            }
            triples.push(ResonantTriple {
                k1,
                k2,
                k3,
                kind,
                ratios,
                denominators,
            });
            Ok(())
        };
        for k1 in 1..=n {
            for k2 in 1..=n - k1 {
                push(k1, k2, k1 + k2, TripleKind::Sum)?;
            }
        }
        let period = 2 * (n + 1);
        for k1 in 1..=n {
            for k2 in 1..=n {
                let k3 = period as isize - (k1 + k2) as isize;
                if (1..=n as isize).contains(&k3) {
                    push(k1, k2, k3 as usize, TripleKind::Wrap)?;
                }
            }
        }
        let mut packet = PacketObservable {
            n,
            modes,
            nu_k,
            g_k,
            triples,
            cubic: 1.0,
            coefficients: Vec::new(),
            min_denominator,
        };
        packet.refresh_coefficients();
        Ok(packet)
    }

    /// The corrector for a bond potential with cubic coefficient `cubic`.
    pub fn with_cubic(mut self, cubic: f64) -> Self {
        self.cubic = cubic;
        self.refresh_coefficients();
        self
    }

    /// The corrector matched to the nonlinearity of `params`.
    pub fn for_params(self, params: &ChainParams) -> Self {
        let cubic = params.potential().cubic;
        self.with_cubic(cubic)
    }

    fn refresh_coefficients(&mut self) {
        let pref = self.cubic / (12.0 * ((self.n + 1) as f64).sqrt());
        self.coefficients = self
            .triples
            .iter()
            .map(|t| {
                let mut c = [0.0; 8];
                for (p, tau) in SIGN_PATTERNS.iter().enumerate() {
                    let parity = tau[0] * tau[1] * tau[2];
                    c[p] = pref * parity * t.kind.sign() * t.kind.weight() * t.ratios[p];
                }
                c
            })
            .collect();
    }

    /// Test hook: multiplies the stored ratios of triple `index` by `factor`.
    #[doc(hidden)]
    pub fn corrupt_triple(&mut self, index: usize, factor: f64) {
        for r in self.triples[index].ratios.iter_mut() {
            *r *= factor;
        }
        self.refresh_coefficients();
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cubic(&self) -> f64 {
        self.cubic
    }

    pub fn modes(&self) -> &NormalModes {
        &self.modes
    }

    pub fn nu_k(&self) -> &[f64] {
        &self.nu_k
    }

    pub fn g_k(&self) -> &[f64] {
        &self.g_k
    }

    pub fn triples(&self) -> &[ResonantTriple] {
        &self.triples
    }

    /// Smallest `|τ·ω|` in the table.
    pub fn min_denominator(&self) -> f64 {
        self.min_denominator
    }

    /// Largest `|(τ·ν)/(τ·ω)|` in the table.
    pub fn max_ratio(&self) -> f64 {
        self.triples
            .iter()
            .flat_map(|t| t.ratios.iter())
            .fold(0.0, |m, r| m.max(r.abs()))
    }

    fn check(&self, state: &ChainState) -> Result<()> {
        state.check_len(self.n)
    }

    pub fn phi0(&self, state: &ChainState) -> Result<f64> {
        self.check(state)?;
        let modes = self.modes.to_modes(state);
        Ok(self.phi0_modes(&modes))
    }

    fn phi0_modes(&self, modes: &SpectralState) -> f64 {
        modes
            .actions()
            .iter()
            .zip(&self.nu_k)
            .map(|(i, v)| i * v)
            .sum()
    }

    /// `Φ₁` as a complex number; the imaginary part is a rounding residue.
    pub fn phi1_complex(&self, state: &ChainState) -> Result<Complex64> {
        self.check(state)?;
        let xi = self.modes.to_complex(state);
        Ok(self.phi1_from_xi(&xi))
    }

    fn phi1_from_xi(&self, xi: &[Complex64]) -> Complex64 {
        let eta: Vec<Complex64> = xi.iter().map(|z| z.conj()).collect();
        let (mut re, mut im) = (0.0, 0.0);
        for (t, c) in self.triples.iter().zip(&self.coefficients) {
            let (a, b, d) = (t.k1 - 1, t.k2 - 1, t.k3 - 1);
            let z1 = [xi[a], eta[a]];
            let z2 = [xi[b], eta[b]];
            let z3 = [xi[d], eta[d]];
            for (p, &coef) in c.iter().enumerate() {
                let prod = z1[p & 1] * z2[(p >> 1) & 1] * z3[(p >> 2) & 1];
                // i·coef·prod
                re -= coef * prod.im;
                im += coef * prod.re;
            }
        }
        Complex64::new(re, im)
    }

    /// Real value of `Φ₁`, after checking that the imaginary residue is negligible.
    pub fn phi1(&self, state: &ChainState) -> Result<f64> {
        let z = self.phi1_complex(state)?;
        check_real(z)
    }

    pub fn phi(&self, state: &ChainState) -> Result<f64> {
        Ok(self.phi0(state)? + self.phi1(state)?)
    }

    /// `Φ₀` and `Φ₁` with a single pair of transforms.
    pub fn values(&self, state: &ChainState) -> Result<(f64, f64)> {
        self.check(state)?;
        let modes = self.modes.to_modes(state);
        let phi0 = self.phi0_modes(&modes);
        let phi1 = check_real(self.phi1_from_xi(&modes.xi()))?;
        Ok((phi0, phi1))
    }

    /// Gradient in particle coordinates by the chain rule through the
    /// sine transform.
    pub fn gradient(&self, state: &ChainState, which: Observable) -> Result<PhaseGradient> {
        self.check(state)?;
        let modes = self.modes.to_modes(state);
        let n = self.n;
        let mut dp_hat = vec![0.0; n];
        let mut dq_hat = vec![0.0; n];
        let omega = self.modes.omega();
        if matches!(which, Observable::Phi0 | Observable::Phi) {
            for k in 0..n {
                dp_hat[k] += self.g_k[k] * modes.p_hat[k];
                dq_hat[k] += self.nu_k[k] * omega[k] * modes.q_hat[k];
            }
        }
        if matches!(which, Observable::Phi1 | Observable::Phi) {
            let xi = modes.xi();
            let eta: Vec<Complex64> = xi.iter().map(|z| z.conj()).collect();
            // derivatives with respect to ξ_k and η_k, divided by i
            let mut g_xi = vec![Complex64::new(0.0, 0.0); n];
            let mut g_eta = vec![Complex64::new(0.0, 0.0); n];
            for (t, c) in self.triples.iter().zip(&self.coefficients) {
                let idx = [t.k1 - 1, t.k2 - 1, t.k3 - 1];
                let z = [
                    [xi[idx[0]], eta[idx[0]]],
                    [xi[idx[1]], eta[idx[1]]],
                    [xi[idx[2]], eta[idx[2]]],
                ];
                for (p, &coef) in c.iter().enumerate() {
                    let s = [p & 1, (p >> 1) & 1, (p >> 2) & 1];
                    let a = z[0][s[0]];
                    let b = z[1][s[1]];
                    let d = z[2][s[2]];
                    let partial = [b * d * coef, a * d * coef, a * b * coef];
                    for l in 0..3 {
                        if s[l] == 0 {
                            g_xi[idx[l]] += partial[l];
                        } else {
                            g_eta[idx[l]] += partial[l];
                        }
                    }
                }
            }
            let i = Complex64::new(0.0, 1.0);
            let r = std::f64::consts::FRAC_1_SQRT_2;
            for k in 0..n {
                let dxi = i * g_xi[k];
                let deta = i * g_eta[k];
                dp_hat[k] += r * (dxi + deta).re;
                dq_hat[k] += (i * omega[k] * r * (dxi - deta)).re;
            }
        }
        let t = self.modes.transform();
        Ok(PhaseGradient {
            dq: t.apply(&dq_hat),
            dp: t.apply(&dp_hat),
        })
    }
}

fn check_real(z: Complex64) -> Result<f64> {
    if z.im.abs() > IMAGINARY_TOLERANCE * (1.0 + z.re.abs()) {
        return Err(Error::ImaginaryResidue {
            real: z.re,
            imag: z.im,
        });
    }
    Ok(z.re)
}

pub fn phi0(state: &ChainState, packet: &PacketObservable) -> Result<f64> {
    packet.phi0(state)
}

pub fn phi1(state: &ChainState, packet: &PacketObservable) -> Result<f64> {
    packet.phi1(state)
}

pub fn grad_phi(
    state: &ChainState,
    packet: &PacketObservable,
    which: Observable,
) -> Result<PhaseGradient> {
    packet.gradient(state, which)
}

fn check_params(packet: &PacketObservable, params: &ChainParams) -> Result<()> {
    if params.n() != packet.n() {
        return Err(Error::DimensionMismatch {
            expected: packet.n(),
            got: params.n(),
        });
    }
    Ok(())
}

/// `Φ̇ = {Φ, H}` with `Φ = Φ₀ + Φ₁`.
pub fn phi_dot(state: &ChainState, packet: &PacketObservable, params: &ChainParams) -> Result<f64> {
    check_params(packet, params)?;
    let g_phi = packet.gradient(state, Observable::Phi)?;
    let g_h = hamiltonian_gradient(state, params, HamiltonianPart::Total);
    poisson_bracket(&g_phi, &g_h)
}

/// `{Φ₁, H₁+H₂} + {Φ₀, H₂}`, equal to [`phi_dot`] when `Φ₁` solves the
/// homological equation.
pub fn phi_dot_reduced(
    state: &ChainState,
    packet: &PacketObservable,
    params: &ChainParams,
) -> Result<f64> {
    check_params(packet, params)?;
    let g0 = packet.gradient(state, Observable::Phi0)?;
    let g1 = packet.gradient(state, Observable::Phi1)?;
    let h1 = hamiltonian_gradient(state, params, HamiltonianPart::Cubic);
    let h2 = hamiltonian_gradient(state, params, HamiltonianPart::Quartic);
    let mut h12 = h1;
    h12.add_assign(&h2);
    Ok(poisson_bracket(&g1, &h12)? + poisson_bracket(&g0, &h2)?)
}

/// `|{H₀,Φ₁} + {H₁,Φ₀}| / (1 + |{H₁,Φ₀}|)`.
pub fn homological_residual(
    state: &ChainState,
    packet: &PacketObservable,
    params: &ChainParams,
) -> Result<f64> {
    check_params(packet, params)?;
    let g0 = packet.gradient(state, Observable::Phi0)?;
    let g1 = packet.gradient(state, Observable::Phi1)?;
    let h0 = hamiltonian_gradient(state, params, HamiltonianPart::Quadratic);
    let h1 = hamiltonian_gradient(state, params, HamiltonianPart::Cubic);
    let a = poisson_bracket(&h0, &g1)?;
    let b = poisson_bracket(&h1, &g0)?;
    Ok((a + b).abs() / (1.0 + b.abs()))
}

/// Observables with a known place in the polynomial classes `𝒫_s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsKind {
    H1,
    Phi0,
    Phi1,
}

impl PsKind {
    pub fn name(self) -> &'static str {
        match self {
            PsKind::H1 => "H1",
            PsKind::Phi0 => "Phi0",
            PsKind::Phi1 => "Phi1",
        }
    }
}

/// An observable of degree `s` together with its coefficient norm `‖f‖₊`.
///
/// Coefficients are read off the representation
/// `f = (N+1)^{−(s−2)/2} Σ f_τ(k/(N+1)) Ξ_{τ,k}` over the momentum-conserving
/// index set.
#[derive(Debug, Clone)]
pub struct PsTestFunction {
    pub kind: PsKind,
    pub degree: u32,
    pub plus_norm: f64,
    packet: Arc<PacketObservable>,
}

impl PsTestFunction {
    pub fn packet(&self) -> &PacketObservable {
        &self.packet
    }

    pub fn value(&self, state: &ChainState, params: &ChainParams) -> Result<f64> {
        match self.kind {
            PsKind::H1 => Ok(energies(state, params).h1),
            PsKind::Phi0 => self.packet.phi0(state),
            PsKind::Phi1 => self.packet.phi1(state),
        }
    }
}

/// `‖H₁‖₊ = 3|α|/12`: the largest multiplicity over the normalisation.
pub fn h1_plus_norm(cubic: f64) -> f64 {
    cubic.abs() * TripleKind::Sum.weight() / 12.0
}

/// `‖Φ₀‖₊ = max_k ν_k/ω_k`.
pub fn phi0_plus_norm(packet: &PacketObservable) -> f64 {
    packet.g_k().iter().fold(0.0, |m, g| m.max(g.abs()))
}

/// `‖Φ₁‖₊`: largest stored coefficient with the `(N+1)^{−1/2}` removed.
pub fn phi1_plus_norm(packet: &PacketObservable) -> f64 {
    let scale = ((packet.n() + 1) as f64).sqrt();
    packet
        .coefficients
        .iter()
        .flat_map(|c| c.iter())
        .fold(0.0, |m, c| m.max(c.abs() * scale))
}

pub fn make_ps_test(kind: PsKind, profile: &NuProfile, n: usize) -> Result<PsTestFunction> {
    let packet = Arc::new(PacketObservable::new(profile, n)?);
    Ok(from_packet(kind, packet))
}

pub fn from_packet(kind: PsKind, packet: Arc<PacketObservable>) -> PsTestFunction {
    let (degree, plus_norm) = match kind {
        PsKind::H1 => (3, h1_plus_norm(packet.cubic())),
        PsKind::Phi0 => (2, phi0_plus_norm(&packet)),
        PsKind::Phi1 => (3, phi1_plus_norm(&packet)),
    };
    PsTestFunction {
        kind,
        degree,
        plus_norm,
        packet,
    }
}

/// Coefficient norm of `{Φ₀, H₁}` against the bracket-norm bound
/// `2⁴ max(s, r) ‖Φ₀‖₊ ‖H₁‖₊` with `s = 2`, `r = 3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BracketNormCheck {
    pub bracket_norm: f64,
    pub bound: f64,
}

impl BracketNormCheck {
    pub fn holds(&self) -> bool {
        self.bracket_norm <= self.bound
    }
}

/// `{Φ₀, Ξ_{τ,k}} = −i(τ·ν) Ξ_{τ,k}`, so each coefficient of `H₁` is
/// multiplied by `τ·ν`.
pub fn bracket_norm_phi0_h1(packet: &PacketObservable) -> BracketNormCheck {
    let h1_coef = packet.cubic().abs() / 12.0;
    let nu = packet.nu_k();
    let mut norm = 0.0f64;
    for t in packet.triples() {
        let idx = [t.k1 - 1, t.k2 - 1, t.k3 - 1];
        for tau in SIGN_PATTERNS.iter() {
            let tau_nu: f64 = (0..3).map(|l| tau[l] * nu[idx[l]]).sum();
            norm = norm.max(h1_coef * t.weight() * tau_nu.abs());
        }
    }
    BracketNormCheck {
        bracket_norm: norm,
        bound: 16.0 * 3.0 * phi0_plus_norm(packet) * h1_plus_norm(packet.cubic()),
    }
}

/// Grid value of `h₁` used to certify the stored ratios.
pub fn table_h1_bound(profile: &NuProfile, grid_size: usize) -> Result<f64> {
    Ok(eval_h1(profile, grid_size)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::integrate;
    use crate::profiles::{default_profile, ProfileSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn omega_profile() -> NuProfile {
        NuProfile::new(ProfileSpec::Constant { value: 1.0 }).unwrap()
    }

    fn bump() -> NuProfile {
        NuProfile::new(default_profile()).unwrap()
    }

    /// Gaussian state with unit-scale amplitude `sd`.
    fn random_state(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> ChainState {
        let d = Normal::new(0.0, sd).unwrap();
        ChainState::new(
            (0..n).map(|_| d.sample(rng)).collect(),
            (0..n).map(|_| d.sample(rng)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn table_for_three_modes() {
        let t = build_phi1_table(&omega_profile(), 3).unwrap();
        let listed: Vec<(usize, usize, usize, TripleKind)> =
            t.triples().iter().map(|t| (t.k1, t.k2, t.k3, t.kind)).collect();
        assert_eq!(
            listed,
            vec![
                (1, 1, 2, TripleKind::Sum),
                (1, 2, 3, TripleKind::Sum),
                (2, 1, 3, TripleKind::Sum),
                (2, 3, 3, TripleKind::Wrap),
                (3, 2, 3, TripleKind::Wrap),
                (3, 3, 2, TripleKind::Wrap),
            ]
        );
        for tr in t.triples() {
            assert_eq!(tr.weight(), if tr.kind == TripleKind::Sum { 3.0 } else { 1.0 });
        }
    }

    #[test]
    fn omega_profile_ratios_are_one() {
        let t = build_phi1_table(&omega_profile(), 31).unwrap();
        for tr in t.triples() {
            assert!((tr.ratios[0] - 1.0).abs() < 1e-13);
            for r in tr.ratios {
                assert!((r.abs() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn triple_count_grows_quadratically() {
        let c63 = build_phi1_table(&omega_profile(), 63).unwrap().triples().len() as f64;
        let c127 = build_phi1_table(&omega_profile(), 127).unwrap().triples().len() as f64;
        // direct count: N(N-1)/2 sum triples plus the wrap triples
        let brute = |n: usize| {
            let mut c = 0;
            for a in 1..=n {
                for b in 1..=n {
                    for d in 1..=n {
                        if a + b == d || a + b + d == 2 * (n + 1) {
                            c += 1;
                        }
                    }
                }
            }
            c as f64
        };
        assert_eq!(c63, brute(63));
        let ratio = c127 / c63;
        assert!((3.6..=4.4).contains(&ratio), "{ratio}");
    }

    #[test]
    fn complex_form_of_cubic_energy_matches_bonds() {
        // Φ₁ with ν = ω is exactly the complex form of H₁
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &n in &[3usize, 8, 31] {
            let params = ChainParams::new(n, 1.0, 1.0).unwrap();
            let packet = build_phi1_table(&omega_profile(), n).unwrap();
            for _ in 0..10 {
                let s = random_state(&mut rng, n, 0.7);
                let h1 = energies(&s, &params).h1;
                let p1 = packet.phi1(&s).unwrap();
                assert!((h1 - p1).abs() <= 1e-12 * (1.0 + h1.abs()), "n={n}: {h1} vs {p1}");
            }
        }
    }

    #[test]
    fn phi0_examples() {
        let n = 15;
        let packet = build_phi1_table(&bump(), n).unwrap();
        let modes = packet.modes().clone();
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let s = modes.from_modes(&e, &vec![0.0; n]);
            let expected = packet.nu_k()[k] / (2.0 * modes.omega()[k]);
            assert!((packet.phi0(&s).unwrap() - expected).abs() < 1e-13);
        }
        assert_eq!(packet.phi0(&ChainState::zeros(n)).unwrap(), 0.0);
        assert!(packet.phi0(&ChainState::zeros(n + 1)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = build_phi1_table(&omega_profile(), n).unwrap();
        let params = ChainParams::new(n, 1.0, 1.0).unwrap();
        let s = random_state(&mut rng, n, 1.0);
        let h0 = energies(&s, &params).h0;
        assert!((w.phi0(&s).unwrap() - h0).abs() <= 1e-12 * h0);
    }

    #[test]
    fn phi1_is_real_cubic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let packet = build_phi1_table(&bump(), 24).unwrap();
        assert_eq!(packet.phi1(&ChainState::zeros(24)).unwrap(), 0.0);
        for _ in 0..10 {
            let s = random_state(&mut rng, 24, 0.5);
            let z = packet.phi1_complex(&s).unwrap();
            assert!(z.im.abs() <= IMAGINARY_TOLERANCE * (1.0 + z.re.abs()));
            let lambda = 1.7;
            let scaled = packet.phi1(&s.scaled(lambda)).unwrap();
            assert!((scaled - lambda.powi(3) * z.re).abs() <= 1e-12 * scaled.abs().max(1.0));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 12;
        let packet = build_phi1_table(&bump(), n).unwrap();
        let h = 1e-5;
        for _ in 0..100 {
            let s = random_state(&mut rng, n, 0.3);
            for which in [Observable::Phi0, Observable::Phi1, Observable::Phi] {
                let g = packet.gradient(&s, which).unwrap();
                let f = |st: &ChainState| match which {
                    Observable::Phi0 => packet.phi0(st).unwrap(),
                    Observable::Phi1 => packet.phi1(st).unwrap(),
                    Observable::Phi => packet.phi(st).unwrap(),
                };
                let scale = g.dq.iter().chain(&g.dp).fold(0.0f64, |m, x| m.max(x.abs()));
                for j in 0..n {
                    for (is_p, analytic) in [(false, g.dq[j]), (true, g.dp[j])] {
                        let (mut plus, mut minus) = (s.clone(), s.clone());
                        if is_p {
                            plus.p[j] += h;
                            minus.p[j] -= h;
                        } else {
                            plus.q[j] += h;
                            minus.q[j] -= h;
                        }
                        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                        assert!(
                            (fd - analytic).abs() <= 1e-6 * scale,
                            "{which:?} j={j} p={is_p}: {fd} vs {analytic}"
                        );
                    }
                }
            }
        }
        let g = packet.gradient(&ChainState::zeros(n), Observable::Phi1).unwrap();
        assert!(g.dq.iter().chain(&g.dp).all(|&x| x == 0.0));
    }

    #[test]
    fn homological_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 31;
        let params = ChainParams::new(n, 1.0, 1.0).unwrap();
        for profile in [omega_profile(), bump()] {
            let packet = build_phi1_table(&profile, n).unwrap();
            assert_eq!(
                homological_residual(&ChainState::zeros(n), &packet, &params).unwrap(),
                0.0
            );
            for _ in 0..20 {
                let s = random_state(&mut rng, n, 1.0);
                let r = homological_residual(&s, &packet, &params).unwrap();
                assert!(r <= 1e-9, "{r}");
            }
        }
    }

    #[test]
    fn corrupted_table_breaks_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 31;
        let params = ChainParams::new(n, 1.0, 1.0).unwrap();
        let mut packet = build_phi1_table(&bump(), n).unwrap();
        // a triple far from resonance, so {H₀,·} does not shrink the defect
        let off_resonance = |t: &ResonantTriple| {
            let d = t.denominators.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
            let r = t.ratios.iter().fold(f64::INFINITY, |m, r| m.min(r.abs()));
            d.min(r)
        };
        let target = (0..packet.triples().len())
            .max_by(|&a, &b| {
                off_resonance(&packet.triples()[a]).total_cmp(&off_resonance(&packet.triples()[b]))
            })
            .unwrap();
        packet.corrupt_triple(target, 2.0);
        for _ in 0..10 {
            let s = random_state(&mut rng, n, 1.0);
            assert!(homological_residual(&s, &packet, &params).unwrap() > 1e-4);
        }
    }

    #[test]
    fn two_bracket_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 31;
        let params = ChainParams::new(n, 1.0, 1.0).unwrap();
        let packet = build_phi1_table(&bump(), n).unwrap();
        for _ in 0..20 {
            let s = random_state(&mut rng, n, 0.3);
            let a = phi_dot(&s, &packet, &params).unwrap();
            let b = phi_dot_reduced(&s, &packet, &params).unwrap();
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12), "{a} vs {b}");
        }
        assert_eq!(phi_dot(&ChainState::zeros(n), &packet, &params).unwrap(), 0.0);
    }

    #[test]
    fn phi_dot_matches_trajectory_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 15;
        let params = ChainParams::new(n, 1.0, 1.0).unwrap();
        let packet = build_phi1_table(&bump(), n).unwrap();
        let dt = 1e-3;
        for _ in 0..5 {
            let s = random_state(&mut rng, n, 0.3);
            let analytic = phi_dot(&s, &packet, &params).unwrap();
            let fwd = integrate(&s, &params, dt, dt, 1).unwrap();
            // one step backwards in time via momentum reversal
            let mut rev = s.clone();
            rev.p.iter_mut().for_each(|p| *p = -*p);
            let bwd = integrate(&rev, &params, dt, dt, 1).unwrap();
            let mut minus = bwd[1].state.clone();
            minus.p.iter_mut().for_each(|p| *p = -*p);
            let fd = (packet.phi(&fwd[1].state).unwrap() - packet.phi(&minus).unwrap()) / (2.0 * dt);
            assert!((fd - analytic).abs() <= 1e-2 * analytic.abs(), "{fd} vs {analytic}");
        }
    }

    #[test]
    fn harmonic_flow_preserves_phi0() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 31;
        let packet = build_phi1_table(&bump(), n).unwrap();
        let s = random_state(&mut rng, n, 0.3);
        let before = packet.phi0(&s).unwrap();
        for t in [1.0, 10.0, 50.0, 100.0] {
            let after = packet.phi0(&packet.modes().harmonic_flow(&s, t)).unwrap();
            assert!((after - before).abs() <= 1e-8 * before);
        }
        // with the nonlinearity off, the corrector vanishes and so does Φ̇
        let params = ChainParams::new(n, 1.0, 1.0).unwrap().harmonic();
        let lin = build_phi1_table(&bump(), n).unwrap().for_params(&params);
        assert!(phi_dot(&s, &lin, &params).unwrap().abs() < 1e-14);
    }

    #[test]
    fn denominators_follow_cubic_floor() {
        for &n in &[15usize, 31, 63, 127] {
            let packet = build_phi1_table(&bump(), n).unwrap();
            let scaled = packet.min_denominator() * ((n + 1) as f64).powi(3);
            assert!((1.0..=10.0).contains(&scaled), "n={n}: {scaled}");
        }
    }

    #[test]
    fn ratios_bounded_by_h1() {
        let profile = bump();
        let h1 = table_h1_bound(&profile, 2048).unwrap();
        for &n in &[31usize, 127] {
            let packet = build_phi1_table(&profile, n).unwrap();
            assert!(packet.max_ratio() <= 1.05 * h1, "{} vs {h1}", packet.max_ratio());
        }
    }

    #[test]
    fn plus_norms() {
        let t = make_ps_test(PsKind::Phi0, &omega_profile(), 31).unwrap();
        assert_eq!(t.degree, 2);
        assert!((t.plus_norm - 1.0).abs() < 1e-14);
        let a = make_ps_test(PsKind::H1, &omega_profile(), 31).unwrap();
        let b = make_ps_test(PsKind::H1, &omega_profile(), 127).unwrap();
        assert_eq!(a.degree, 3);
        assert_eq!(a.plus_norm, b.plus_norm);
        let c = make_ps_test(PsKind::Phi1, &omega_profile(), 31).unwrap();
        let d = make_ps_test(PsKind::Phi1, &omega_profile(), 63).unwrap();
        assert!((c.plus_norm - 0.25).abs() < 1e-12 && (d.plus_norm - 0.25).abs() < 1e-12);
        let check = bracket_norm_phi0_h1(&build_phi1_table(&bump(), 63).unwrap());
        assert!(check.holds(), "{check:?}");
    }
}
