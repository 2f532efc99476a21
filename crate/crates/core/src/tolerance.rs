//! Every numeric threshold used downstream lives in one [`ToleranceProfile`].

use serde::{Deserialize, Serialize};

use crate::error::{JacobiError, Result};

/// How derivatives are evaluated: closed-form evaluators or geodesic finite differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Analytic,
    Fd,
}

impl std::str::FromStr for Method {
    type Err = JacobiError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "analytic" => Ok(Method::Analytic),
            "fd" => Ok(Method::Fd),
            other => Err(JacobiError::Config(format!(
                "method must be `analytic` or `fd`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Analytic => f.write_str("analytic"),
            Method::Fd => f.write_str("fd"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceProfile {
    pub name: String,
    /// Central-difference step for first covariant derivatives.
    pub fd_step_first: f64,
    /// Step for second differences along geodesics.
    pub fd_step_second: f64,
    /// Relative eigen-residual bound on the closed-form path.
    pub analytic_residual: f64,
    /// Relative eigen-residual / sup-norm bound on the finite-difference path.
    pub fd_residual: f64,
    /// Bound for pointwise algebraic identities.
    pub algebraic: f64,
    /// Bound for Weitzenbock residuals.
    pub bochner: f64,
    /// Relative singular-value cutoff for Gram ranks.
    pub rank_epsilon: f64,
    /// Sup-norm of the tension field below which a map is treated as harmonic.
    pub harmonic_admission: f64,
    /// Sup-norm of the Yang-Mills residual below which a connection is treated as critical.
    pub yang_mills_admission: f64,
    /// Sup-norm of the mean curvature below which an immersion is treated as minimal.
    pub minimal_admission: f64,
    /// Largest admissible normal component of a "tangent" input.
    pub tangency: f64,
    /// Sup |B| below which an immersion is reported totally geodesic.
    pub totally_geodesic: f64,
    /// Relative gap allowed between finite-difference and quadratic-form second variations.
    pub second_variation_gap: f64,
    /// Variation-parameter ladder for Richardson-extrapolated second differences.
    pub variation_steps: [f64; 3],
    /// First-variation criticality bound: `rel * |F(0)| + abs`.
    pub first_variation_rel: f64,
    pub first_variation_abs: f64,
    /// Relative accuracy demanded of the discrete lowest-eigenvalue estimate.
    pub lowest_eigenvalue_rel: f64,
    /// Slack in the inequality `lambda_1 <= -m + slack`.
    pub lowest_eigenvalue_slack: f64,
    /// Smallest admissible `sigma_min / sigma_max` for full-rank Gram matrices.
    pub gram_condition: f64,
}

impl Default for ToleranceProfile {
    fn default() -> Self {
        Self {
            name: "default".to_string(),
            fd_step_first: 1e-4,
            fd_step_second: 1e-3,
            analytic_residual: 1e-8,
            fd_residual: 5e-4,
            algebraic: 1e-10,
            bochner: 1e-3,
            rank_epsilon: 1e-6,
            harmonic_admission: 1e-3,
            yang_mills_admission: 1e-3,
            minimal_admission: 1e-3,
            tangency: 1e-8,
            totally_geodesic: 1e-6,
            second_variation_gap: 1e-2,
            variation_steps: [1e-2, 5e-3, 2.5e-3],
            first_variation_rel: 1e-4,
            first_variation_abs: 1e-6,
            lowest_eigenvalue_rel: 0.02,
            lowest_eigenvalue_slack: 0.05,
            gram_condition: 1e-4,
        }
    }
}

impl ToleranceProfile {
    /// Resolves a named preset.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            // Halved finite-difference steps; thresholds unchanged.
            "fine" => Ok(Self {
                name: "fine".to_string(),
                fd_step_first: 5e-5,
                fd_step_second: 5e-4,
                ..Self::default()
            }),
            other => Err(JacobiError::Config(format!(
                "unknown tolerance profile `{other}` (known: default, fine)"
            ))),
        }
    }

    /// Residual bound for the given evaluation method.
    pub fn residual(&self, method: Method) -> f64 {
        match method {
            Method::Analytic => self.analytic_residual,
            Method::Fd => self.fd_residual,
        }
    }
}
