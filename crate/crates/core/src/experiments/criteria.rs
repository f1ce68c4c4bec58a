//! Acceptance thresholds. Every PASS/FAIL decision in the suites reads its
//! tolerance from here.

use super::config::{ExperimentConfig, ExperimentKind};

/// Seed of the canonical runs used by the acceptance target.
pub const CANONICAL_SEED: u64 = 20_240_611;

/// Relative residual of the homological equation.
pub const HOMOLOGICAL_TOL: f64 = 1e-9;
/// Involution and Parseval, relative.
pub const TRANSFORM_TOL: f64 = 1e-10;
/// Maximal relative energy excursion along a leapfrog trajectory.
pub const ENERGY_FLUCTUATION_TOL: f64 = 1e-4;
/// Maximal `|Σ r|` drift of the sampler over one sweep.
pub const CONSTRAINT_TOL: f64 = 1e-12;
/// Standard errors allowed between a measured moment and its reference.
pub const MOMENT_SIGMAS: f64 = 3.0;
pub const MAX_MOMENT_CHECKED: usize = 4;
/// Single-site moments are compared against the tilted density only for
/// chains at least this long; the marginal differs from it by `O(1/N)`.
pub const MOMENT_MIN_N: usize = 100;
/// Chains up to this size are also compared with the slab-rejection
/// reference, whose acceptance rate decays like `N^{-1/2}`.
pub const SLAB_MAX_N: usize = 16;
pub const SLAB_HALF_WIDTH: f64 = 1e-3;
/// Chains at least this long enter the covariance trend.
pub const COVARIANCE_MIN_N: usize = 32;
/// Required shrink factor of the disjoint-site covariance from the
/// smallest to the largest `N`.
pub const COVARIANCE_SHRINK: f64 = 0.7;
pub const ACCEPTANCE_RANGE: (f64, f64) = (0.2, 0.6);
/// "Within combined error" means this many combined standard errors.
pub const COMBINED_SIGMAS: f64 = 2.0;
/// Allowed max/min spread of normalized variances.
pub const LEMMA3_BAND: f64 = 3.0;
pub const RATIO_SLOPE: (f64, f64) = (-1.3, -0.8);
pub const CORRECTOR_SLOPE: (f64, f64) = (-0.7, -0.3);
pub const PERSISTENCE_LEVEL: f64 = 0.5;
pub const HALF_LIFE_RATIO: f64 = 2.0;
/// Standard errors by which a drift probability may exceed its bound.
pub const CHEBYSHEV_SIGMAS: f64 = 3.0;
pub const THM2_GRIDS: (usize, usize) = (1024, 2048);
pub const THM2_REFINEMENT_TOL: f64 = 0.05;
pub const THM2_MIN_FAMILY: usize = 5;
pub const DIVERGENCE_GRIDS: (usize, usize) = (256, 4096);
pub const DIVERGENCE_FACTOR: f64 = 2.0;
/// Persistence of each packet is checked at `β` times this fraction.
pub const MULTI_PERSISTENCE_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Criterion {
    pub id: u8,
    pub title: &'static str,
    pub experiment: ExperimentKind,
}

pub const CRITERIA: [Criterion; 10] = [
    Criterion {
        id: 1,
        title: "homological identity",
        experiment: ExperimentKind::Homological,
    },
    Criterion {
        id: 2,
        title: "transform and energy identities",
        experiment: ExperimentKind::Identities,
    },
    Criterion {
        id: 3,
        title: "sampler validity",
        experiment: ExperimentKind::SamplerValidation,
    },
    Criterion {
        id: 4,
        title: "disjoint-site covariance decreases with N",
        experiment: ExperimentKind::SamplerValidation,
    },
    Criterion {
        id: 5,
        title: "normalized variances within a factor-3 band",
        experiment: ExperimentKind::Lemma3Scan,
    },
    Criterion {
        id: 6,
        title: "ratio ‖Φ̇‖/σ_Φ and corrector size scale with β",
        experiment: ExperimentKind::RatioScaling,
    },
    Criterion {
        id: 7,
        title: "persistence of the packet autocorrelation",
        experiment: ExperimentKind::Autocorrelation,
    },
    Criterion {
        id: 8,
        title: "drift probability trend and Chebyshev bound",
        experiment: ExperimentKind::Chebyshev,
    },
    Criterion {
        id: 9,
        title: "h1/(c0+c2) bounded on the family, divergent for g'(0) ≠ 0",
        experiment: ExperimentKind::Theorem2H1,
    },
    Criterion {
        id: 10,
        title: "bracket-norm bound for {Φ0, H1}",
        experiment: ExperimentKind::Homological,
    },
];

pub fn criterion(id: u8) -> Option<&'static Criterion> {
    CRITERIA.iter().find(|c| c.id == id)
}

/// Experiments needed to decide every criterion, each listed once.
pub fn acceptance_experiments() -> Vec<ExperimentKind> {
    let mut out: Vec<ExperimentKind> = Vec::new();
    for c in &CRITERIA {
        if !out.contains(&c.experiment) {
            out.push(c.experiment);
        }
    }
    out
}

/// The run that decides the criteria of `kind`: defaults throughout.
pub fn canonical_config(kind: ExperimentKind) -> ExperimentConfig {
    ExperimentConfig::minimal(kind, CANONICAL_SEED)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn criteria_are_numbered_and_covered() {
        for (i, c) in CRITERIA.iter().enumerate() {
            assert_eq!(c.id as usize, i + 1);
        }
        let kinds = acceptance_experiments();
        assert_eq!(kinds.len(), 8);
        assert!(!kinds.contains(&ExperimentKind::MultiPacket));
    }
}
