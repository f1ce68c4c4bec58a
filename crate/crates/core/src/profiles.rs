//! Packet weight functions `ν = g·ω` and the functionals `h₁`, `h₂`.
//!
//! Profiles come from a closed parametric family so that `c₀ = g(0)` and
//! `c₂ = sup |g''|` are known in closed form.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest number of disjoint packets [`disjoint_profiles`] will pack into `[0, 1]`.
pub const MAX_PACKETS: usize = 16;

/// Step and threshold of the central-difference test for `g'(0) = 0`.
pub const SLOPE_PROBE_STEP: f64 = 1e-6;
pub const SLOPE_PROBE_THRESHOLD: f64 = 1e-4;

/// Continuum dispersion relation `ω(x) = 2 sin(πx/2)`.
#[inline]
pub fn omega(x: f64) -> f64 {
    2.0 * (0.5 * PI * x).sin()
}

/// `x + y` folded back into `[0, 1]`.
#[inline]
pub fn z_fold(x: f64, y: f64) -> f64 {
    if x + y <= 1.0 {
        x + y
    } else {
        2.0 - x - y
    }
}

/// A member of the registered family of ratios `g = ν/ω`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    /// `g ≡ value`; `value = 1` gives `ν = ω`.
    Constant { value: f64 },
    /// `g(x) = Σ_i c_i x^{2i}`.
    EvenPolynomial { coefficients: Vec<f64> },
    /// `g(x) = offset + amplitude·cos(frequency·π·x)`.
    Cosine {
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `amplitude·(1 − s²)³` with `s ∈ [−1, 1]` across the support
    /// `[center − width/2, center + width/2]`, zero outside.
    Bump {
        center: f64,
        width: f64,
        amplitude: f64,
    },
    /// `g(x) = slope·x`. Violates `g'(0) = 0`; kept to exhibit divergence.
    Linear { slope: f64 },
}

fn one() -> f64 {
    1.0
}

impl ProfileSpec {
    pub const KINDS: [&'static str; 5] =
        ["constant", "even_polynomial", "cosine", "bump", "linear"];

    pub fn kind(&self) -> &'static str {
        match self {
            ProfileSpec::Constant { .. } => "constant",
            ProfileSpec::EvenPolynomial { .. } => "even_polynomial",
            ProfileSpec::Cosine { .. } => "cosine",
            ProfileSpec::Bump { .. } => "bump",
            ProfileSpec::Linear { .. } => "linear",
        }
    }

    /// The same shape multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> ProfileSpec {
        match self.clone() {
            ProfileSpec::Constant { value } => ProfileSpec::Constant {
                value: value * factor,
            },
            ProfileSpec::EvenPolynomial { coefficients } => ProfileSpec::EvenPolynomial {
                coefficients: coefficients.iter().map(|c| c * factor).collect(),
            },
            ProfileSpec::Cosine {
                amplitude,
                frequency,
                offset,
            } => ProfileSpec::Cosine {
                amplitude: amplitude * factor,
                frequency,
                offset: offset * factor,
            },
            ProfileSpec::Bump {
                center,
                width,
                amplitude,
            } => ProfileSpec::Bump {
                center,
                width,
                amplitude: amplitude * factor,
            },
            ProfileSpec::Linear { slope } => ProfileSpec::Linear {
                slope: slope * factor,
            },
        }
    }
}

/// Default packet: a bump on `[0.1, 0.4]`, low in the spectrum, whose
/// autocorrelation decays within a few `β` at moderate temperatures.
pub fn default_profile() -> ProfileSpec {
    ProfileSpec::Bump {
        center: 0.25,
        width: 0.3,
        amplitude: 1.0,
    }
}

/// A bump on `[0.5, 1]`. High-frequency packets reach the asymptotic
/// small-corrector regime at lower `β` than the default packet.
pub fn high_band_profile() -> ProfileSpec {
    ProfileSpec::Bump {
        center: 0.75,
        width: 0.5,
        amplitude: 1.0,
    }
}

/// Admissible profiles used for the family-wide `h₁/(c₀+c₂)` constant.
pub fn registered_family() -> Vec<ProfileSpec> {
    vec![
        ProfileSpec::Constant { value: 1.0 },
        ProfileSpec::Constant { value: 2.0 },
        ProfileSpec::EvenPolynomial {
            coefficients: vec![0.0, 1.0],
        },
        ProfileSpec::EvenPolynomial {
            coefficients: vec![1.0, 1.0],
        },
        ProfileSpec::EvenPolynomial {
            coefficients: vec![1.0, -1.0, 0.5],
        },
        ProfileSpec::Cosine {
            amplitude: 1.0,
            frequency: 1.0,
            offset: 0.0,
        },
        ProfileSpec::Cosine {
            amplitude: 0.5,
            frequency: 1.0,
            offset: 1.0,
        },
        ProfileSpec::Bump {
            center: 0.5,
            width: 0.5,
            amplitude: 1.0,
        },
        default_profile(),
        high_band_profile(),
        ProfileSpec::Bump {
            center: 0.125,
            width: 0.25,
            amplitude: 1.0,
        },
    ]
}

#[inline]
fn bump_shape(s: f64) -> (f64, f64, f64) {
    if s <= -1.0 || s >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let u = 1.0 - s * s;
    (u * u * u, -6.0 * s * u * u, u * (30.0 * s * s - 6.0))
}

/// A validated profile with `c₀ = g(0)` and `c₂ = sup |g''|` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NuProfile {
    spec: ProfileSpec,
    c0: f64,
    c2: f64,
}

impl NuProfile {
    pub fn new(spec: ProfileSpec) -> Result<Self> {
        let finite = |field: &'static str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("must be finite, got {v}")))
            }
        };
        match &spec {
            ProfileSpec::Constant { value } => finite("profile.value", *value)?,
            ProfileSpec::EvenPolynomial { coefficients } => {
                if coefficients.is_empty() {
                    return Err(invalid("profile.coefficients", "must not be empty"));
                }
                for &c in coefficients {
                    finite("profile.coefficients", c)?;
                }
            }
            ProfileSpec::Cosine {
                amplitude,
                frequency,
                offset,
            } => {
                finite("profile.amplitude", *amplitude)?;
                finite("profile.offset", *offset)?;
                if !(*frequency > 0.0 && frequency.is_finite()) {
                    return Err(invalid("profile.frequency", "must be positive"));
                }
            }
            ProfileSpec::Bump {
                center,
                width,
                amplitude,
            } => {
                finite("profile.amplitude", *amplitude)?;
                if !(*width > 0.0 && *width <= 1.0) {
                    return Err(invalid("profile.width", format!("must lie in (0, 1], got {width}")));
                }
                let (lo, hi) = (center - 0.5 * width, center + 0.5 * width);
                if lo < -1e-12 || hi > 1.0 + 1e-12 {
                    return Err(invalid(
                        "profile.center",
                        format!("support [{lo}, {hi}] leaves [0, 1]"),
                    ));
                }
            }
            ProfileSpec::Linear { slope } => finite("profile.slope", *slope)?,
        }
        let mut profile = NuProfile {
            spec,
            c0: 0.0,
            c2: 0.0,
        };
        profile.c0 = profile.g(0.0);
        profile.c2 = profile.sup_second_derivative();
        Ok(profile)
    }

    pub fn spec(&self) -> &ProfileSpec {
        &self.spec
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    /// `(g, g', g'')` at `x`. Defined on all of ℝ by the closed forms.
    pub fn derivatives(&self, x: f64) -> (f64, f64, f64) {
        match &self.spec {
            ProfileSpec::Constant { value } => (*value, 0.0, 0.0),
            ProfileSpec::EvenPolynomial { coefficients } => {
                let (mut g, mut d1, mut d2) = (0.0, 0.0, 0.0);
                for (i, &c) in coefficients.iter().enumerate() {
                    let e = 2 * i as i32;
                    g += c * x.powi(e);
                    if i >= 1 {
                        d1 += c * e as f64 * x.powi(e - 1);
                        d2 += c * (e * (e - 1)) as f64 * x.powi(e - 2);
                    }
                }
                (g, d1, d2)
            }
            ProfileSpec::Cosine {
                amplitude,
                frequency,
                offset,
            } => {
                let k = frequency * PI;
                let (s, c) = (k * x).sin_cos();
                (offset + amplitude * c, -amplitude * k * s, -amplitude * k * k * c)
            }
            ProfileSpec::Bump {
                center,
                width,
                amplitude,
            } => {
                let s = 2.0 * (x - center) / width;
                let (b, b1, b2) = bump_shape(s);
                let ds = 2.0 / width;
                (amplitude * b, amplitude * b1 * ds, amplitude * b2 * ds * ds)
            }
            ProfileSpec::Linear { slope } => (slope * x, *slope, 0.0),
        }
    }

    #[inline]
    pub fn g(&self, x: f64) -> f64 {
        self.derivatives(x).0
    }

    #[inline]
    pub fn nu(&self, x: f64) -> f64 {
        self.g(x) * omega(x)
    }

    /// Closed-form `g'(0) = 0` check.
    pub fn is_admissible(&self) -> bool {
        self.derivatives(0.0).1 == 0.0
    }

    /// Central-difference estimate of `g'(0)`.
    pub fn probe_slope_at_origin(&self) -> f64 {
        let h = SLOPE_PROBE_STEP;
        (self.g(h) - self.g(-h)) / (2.0 * h)
    }

    fn sup_second_derivative(&self) -> f64 {
        match &self.spec {
            ProfileSpec::Constant { .. } | ProfileSpec::Linear { .. } => 0.0,
            ProfileSpec::Cosine {
                amplitude,
                frequency,
                ..
            } => amplitude.abs() * (frequency * PI).powi(2),
            // sup |b''| = 6, attained at the centre of the support
            ProfileSpec::Bump {
                width, amplitude, ..
            } => 24.0 * amplitude.abs() / (width * width),
            ProfileSpec::EvenPolynomial { coefficients } => {
                // |g''| peaks at an endpoint or at a root of g'''
                let d2 = |x: f64| self.derivatives(x).2;
                let d3 = |x: f64| {
                    coefficients
                        .iter()
                        .enumerate()
                        .skip(2)
                        .map(|(i, &c)| {
                            let e = 2 * i as i32;
                            c * (e * (e - 1) * (e - 2)) as f64 * x.powi(e - 3)
                        })
                        .sum::<f64>()
                };
                let mut best = d2(0.0).abs().max(d2(1.0).abs());
                let cells = 2048;
                for c in 0..cells {
                    let (mut a, mut b) = (c as f64 / cells as f64, (c + 1) as f64 / cells as f64);
                    let (fa, fb) = (d3(a), d3(b));
                    if fa == 0.0 {
                        best = best.max(d2(a).abs());
                        continue;
                    }
                    if fa.signum() == fb.signum() {
                        continue;
                    }
                    for _ in 0..80 {
                        let m = 0.5 * (a + b);
                        if d3(m).signum() == fa.signum() {
                            a = m;
                        } else {
                            b = m;
                        }
                    }
                    best = best.max(d2(0.5 * (a + b)).abs());
                }
                best
            }
        }
    }
}

/// Result of the grid maximisation behind `h₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct H1Evaluation {
    pub value: f64,
    /// Grid point `(x, y)` attaining the maximum.
    pub argmax: (f64, f64),
    pub signs: [i8; 3],
    /// Smallest nonzero `|τ·ω|` met on the grid.
    pub min_denominator: f64,
    /// Points with vanishing denominator but nonzero numerator.
    pub singular_points: usize,
}

/// Grid approximation of `h₁(ν)` on `x, y ∈ {0, 1/m, …, 1}`.
///
/// Points where numerator and denominator both vanish exactly (the corner
/// `x = y = 0` and the edges where one frequency cancels another) are skipped.
/// Negating all three signs leaves the ratio unchanged, so only `τ₁ = +1` is
/// scanned.
pub fn eval_h1(profile: &NuProfile, grid_size: usize) -> Result<H1Evaluation> {
    if grid_size < 2 {
        return Err(invalid("grid_size", "must be at least 2"));
    }
    let m = grid_size;
    let xs: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
    let om: Vec<f64> = xs.iter().map(|&x| omega(x)).collect();
    let nu: Vec<f64> = xs.iter().zip(&om).map(|(&x, w)| profile.g(x) * w).collect();
    const PATTERNS: [[f64; 3]; 4] = [
        [1.0, 1.0, 1.0],
        [1.0, 1.0, -1.0],
        [1.0, -1.0, 1.0],
        [1.0, -1.0, -1.0],
    ];
    let mut best = H1Evaluation {
        value: 0.0,
        argmax: (0.0, 0.0),
        signs: [1, 1, 1],
        min_denominator: f64::INFINITY,
        singular_points: 0,
    };
    for i in 0..=m {
        for j in 0..=m {
            let z = if i + j <= m { i + j } else { 2 * m - i - j };
            for t in &PATTERNS {
                let den = t[0] * om[i] + t[1] * om[j] + t[2] * om[z];
                let num = t[0] * nu[i] + t[1] * nu[j] + t[2] * nu[z];
                if den == 0.0 {
                    if num != 0.0 {
                        best.singular_points += 1;
                    }
                    continue;
                }
                let a = den.abs();
                if a < best.min_denominator {
                    best.min_denominator = a;
                }
                let ratio = (num / den).abs();
                if ratio > best.value {
                    best.value = ratio;
                    best.argmax = (xs[i], xs[j]);
                    best.signs = [t[0] as i8, t[1] as i8, t[2] as i8];
                }
            }
        }
    }
    Ok(best)
}

/// `h₂(ν) = ∫₀¹ g(x)² dx` by composite Simpson, refined until two successive
/// halvings agree to 1e−10 relative.
pub fn eval_h2(profile: &NuProfile) -> f64 {
    let f = |x: f64| profile.g(x).powi(2);
    simpson_refined(&f, 0.0, 1.0, 1e-10)
}

pub(crate) fn simpson_composite(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

pub(crate) fn simpson_refined(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    let mut panels = 64;
    let mut prev = simpson_composite(f, a, b, panels);
    loop {
        panels *= 2;
        let next = simpson_composite(f, a, b, panels);
        if (next - prev).abs() <= rel_tol * next.abs() || panels >= 1 << 22 {
            return next;
        }
        prev = next;
    }
}

/// `h₁/(c₀+c₂)` on a grid; rejects profiles with `g'(0) ≠ 0`.
pub fn check_thm2_bound(profile: &NuProfile, grid_size: usize) -> Result<f64> {
    let slope = profile.probe_slope_at_origin();
    if slope.abs() > SLOPE_PROBE_THRESHOLD {
        return Err(Error::Inadmissible(format!("g'(0) ≈ {slope:e} is not zero")));
    }
    let denom = profile.c0() + profile.c2();
    if !(denom > 0.0) {
        return Err(Error::Inadmissible("c0 + c2 must be positive".into()));
    }
    Ok(eval_h1(profile, grid_size)?.value / denom)
}

/// `count` bumps with disjoint supports `[l/count, (l+1)/count]`.
pub fn disjoint_profiles(count: usize, kind: &str) -> Result<Vec<NuProfile>> {
    if kind != "bump" {
        return Err(invalid(
            "kind",
            format!("disjoint packets are built from `bump` profiles, not `{kind}`"),
        ));
    }
    if count == 0 || count > MAX_PACKETS {
        return Err(invalid(
            "packets",
            format!("must be between 1 and {MAX_PACKETS}, got {count}"),
        ));
    }
    let width = 1.0 / count as f64;
    (0..count)
        .map(|l| {
            NuProfile::new(ProfileSpec::Bump {
                center: (l as f64 + 0.5) * width,
                width,
                amplitude: 1.0,
            })
        })
        .collect()
}
