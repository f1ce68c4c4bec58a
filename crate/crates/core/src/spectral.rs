//! Fixed-end normal modes: the orthogonal sine transform, frequencies,
//! actions and complex mode coordinates.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::chain::{ChainState, Propagator};
use crate::error::Result;

/// The symmetric orthogonal matrix `S_{jk} = sqrt(2/(N+1)) sin(π j k / (N+1))`.
///
/// `S` is its own inverse. Entries are read from a table of length `2(N+1)`
/// indexed by `j·k mod 2(N+1)`, so no `N × N` storage is needed.
#[derive(Debug, Clone)]
pub struct SineTransform {
    n: usize,
    table: Vec<f64>,
}

impl SineTransform {
    pub fn new(n: usize) -> Self {
        let period = 2 * (n + 1);
        let scale = (2.0 / (n + 1) as f64).sqrt();
        let table = (0..period)
            .map(|m| scale * (PI * m as f64 / (n + 1) as f64).sin())
            .collect();
        SineTransform { n, table }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.n, "sine transform length mismatch");
        let period = self.table.len();
        for (j, o) in (1..=self.n).zip(out.iter_mut()) {
            let mut m = 0;
            let mut acc = 0.0;
            for &vk in v {
                m += j;
                if m >= period {
                    m -= period;
                }
                acc += self.table[m] * vk;
            }
            *o = acc;
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.apply_into(v, &mut out);
        out
    }
}

/// `(Tv)_j = sqrt(2/(N+1)) Σ_k v_k sin(π j k/(N+1))`.
pub fn sine_transform(v: &[f64]) -> Vec<f64> {
    SineTransform::new(v.len()).apply(v)
}

/// `ω_k = 2 sin(π k / (2(N+1)))`, `k = 1..=N`.
pub fn frequencies(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|k| 2.0 * (PI * k as f64 / (2.0 * (n + 1) as f64)).sin())
        .collect()
}

/// Mode coordinates of a chain state.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    pub p_hat: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub omega: Vec<f64>,
}

impl SpectralState {
    pub fn actions(&self) -> Vec<f64> {
        self.p_hat
            .iter()
            .zip(&self.q_hat)
            .zip(&self.omega)
            .map(|((p, q), w)| (p * p + w * w * q * q) / (2.0 * w))
            .collect()
    }

    /// `ξ_k = (p̂_k + i ω_k q̂_k)/√2`; `η` is the conjugate.
    pub fn xi(&self) -> Vec<Complex64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        self.p_hat
            .iter()
            .zip(&self.q_hat)
            .zip(&self.omega)
            .map(|((p, q), w)| Complex64::new(s * p, s * w * q))
            .collect()
    }
}

/// Cached basis for one chain length.
#[derive(Debug, Clone)]
pub struct NormalModes {
    transform: SineTransform,
    omega: Vec<f64>,
}

impl NormalModes {
    pub fn new(n: usize) -> Self {
        NormalModes {
            transform: SineTransform::new(n),
            omega: frequencies(n),
        }
    }

    pub fn n(&self) -> usize {
        self.omega.len()
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn transform(&self) -> &SineTransform {
        &self.transform
    }

    pub fn to_modes(&self, state: &ChainState) -> SpectralState {
        SpectralState {
            p_hat: self.transform.apply(&state.p),
            q_hat: self.transform.apply(&state.q),
            omega: self.omega.clone(),
        }
    }

    pub fn from_modes(&self, p_hat: &[f64], q_hat: &[f64]) -> ChainState {
        ChainState {
            p: self.transform.apply(p_hat),
            q: self.transform.apply(q_hat),
        }
    }

    pub fn actions(&self, state: &ChainState) -> Vec<f64> {
        self.to_modes(state).actions()
    }

    pub fn to_complex(&self, state: &ChainState) -> Vec<Complex64> {
        self.to_modes(state).xi()
    }

    /// Exact flow of `H₀` for time `t`: every mode rotates at `ω_k`.
    pub fn harmonic_flow(&self, state: &ChainState, t: f64) -> ChainState {
        let modes = self.to_modes(state);
        let mut p_hat = vec![0.0; self.n()];
        let mut q_hat = vec![0.0; self.n()];
        for k in 0..self.n() {
            let w = self.omega[k];
            let (s, c) = (w * t).sin_cos();
            q_hat[k] = c * modes.q_hat[k] + s * modes.p_hat[k] / w;
            p_hat[k] = c * modes.p_hat[k] - s * w * modes.q_hat[k];
        }
        self.from_modes(&p_hat, &q_hat)
    }
}

pub fn actions(state: &ChainState) -> Vec<f64> {
    NormalModes::new(state.len()).actions(state)
}

pub fn to_complex(state: &ChainState) -> Vec<Complex64> {
    NormalModes::new(state.len()).to_complex(state)
}

/// Exact linear flow, used as the nonlinearity-free reference dynamics.
#[derive(Debug, Clone)]
pub struct HarmonicFlow {
    modes: NormalModes,
}

impl HarmonicFlow {
    pub fn new(n: usize) -> Self {
        HarmonicFlow {
            modes: NormalModes::new(n),
        }
    }
}

impl Propagator for HarmonicFlow {
    fn sample_path(
        &self,
        initial: &ChainState,
        interval: f64,
        count: usize,
        visit: &mut dyn FnMut(usize, &ChainState),
    ) -> Result<()> {
        initial.check_len(self.modes.n())?;
        for i in 0..count {
            let s = self.modes.harmonic_flow(initial, i as f64 * interval);
            visit(i, &s);
        }
        Ok(())
    }
}
