//! Brute-force second variations: the energy, Yang-Mills and area functionals
//! evaluated along explicit one-parameter families and compared with the
//! quadratic forms `∫<J V, V>`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{JacobiError, Result};
use crate::forms::{BundleValuedForm, FdSteps};
use crate::harmonic::{jacobi_apply, tension_sup, PullbackSection, SphereMap, Target};
use crate::linalg::{frobenius, unflatten, Matrix, Vector};
use crate::minimal::{
    jacobi_apply_minimal, mean_curvature_sup, ImmersedSubmanifold, ManifoldGrid, ManifoldPoint, MinimalSteps,
    NormalSection,
};
use crate::sphere::{geodesic, tangent_frame, QuadratureGrid, SpherePoint};
use crate::tolerance::{Method, ToleranceProfile};
use crate::yang_mills::{jacobi_apply_ym, ym_residual, AffinePerturbation, BundleConnection, ConnectionPerturbation};

/// Step of the fourth-order stencil used for derivatives of deformed objects.
const STENCIL_STEP: f64 = 1e-3;

/// `|∫<J V, V>| / ‖V‖²` below which a direction is treated as null for the gap.
pub const NULL_DIRECTION_RATIO: f64 = 1e-4;

/// `cos(|v|) y + sin(|v|) v/|v|`.
fn sphere_exp(y: &Vector, v: &Vector) -> Vector {
    let speed = v.norm();
    if speed == 0.0 {
        return y.clone();
    }
    y * speed.cos() + v * (speed.sin() / speed)
}

fn stencil<F>(f: F, h: f64) -> Vector
where
    F: Fn(f64) -> Vector,
{
    (f(h) * 8.0 - f(-h) * 8.0 - f(2.0 * h) + f(-2.0 * h)) / (12.0 * h)
}

/// `𝓔(u) = ½ ∫ Σ_i |du(e_i)|²`.
pub fn energy(u: &SphereMap, grid: &QuadratureGrid) -> f64 {
    0.5 * grid.integrate(|x| {
        tangent_frame(x)
            .vectors
            .iter()
            .map(|e| u.differential(x, e).norm_squared())
            .sum()
    })
}

/// `𝓨𝓜(D) = ½ ∫ Σ_{i<j} |R^D(e_i, e_j)|²` with the Frobenius norm.
pub fn ym_energy(d: &BundleConnection, grid: &QuadratureGrid) -> f64 {
    0.5 * grid.integrate(|x| {
        let frame = tangent_frame(x).vectors;
        let mut total = 0.0;
        for i in 0..frame.len() {
            for j in i + 1..frame.len() {
                total += d.curvature(x, &frame[i], &frame[j]).norm_squared();
            }
        }
        total
    })
}

/// Volume element of `p ↦ φ(p)` relative to the induced metric of `M`, by differentiating along an orthonormal frame.
fn volume_element<F>(m: &ImmersedSubmanifold, p: &ManifoldPoint, phi: F) -> f64
where
    F: Fn(&ManifoldPoint) -> Vector,
{
    let frame = m.tangent_frame(p);
    let cols: Vec<Vector> = frame
        .iter()
        .map(|e| stencil(|t| phi(&m.move_point(p, e, t)), STENCIL_STEP))
        .collect();
    let g = Matrix::from_fn(cols.len(), cols.len(), |i, j| cols[i].dot(&cols[j]));
    g.determinant().max(0.0).sqrt()
}

/// `𝓐(M) = ∫_M dμ`, with the volume element recomputed from the embedding.
pub fn area(m: &ImmersedSubmanifold, grid: &ManifoldGrid) -> f64 {
    grid.integrate(|p| volume_element(m, p, |q| q.position.clone()))
}

/// A one-parameter family through a critical object with prescribed initial velocity.
#[derive(Clone)]
pub enum VariationFamily {
    /// `u_s = cos(s|V|) u + sin(s|V|) V/|V|` for a sphere target.
    Map {
        base: SphereMap,
        direction: PullbackSection,
    },
    /// `D_s = D + s B`.
    Connection {
        base: BundleConnection,
        direction: ConnectionPerturbation,
    },
    /// `p ↦ exp_p(s V(p))` in the ambient sphere.
    Submanifold {
        base: ImmersedSubmanifold,
        direction: NormalSection,
    },
}

/// Grid matching the family's base space.
#[derive(Debug, Clone)]
pub enum VariationGrid {
    Sphere(QuadratureGrid),
    Submanifold(ManifoldGrid),
}

impl VariationFamily {
    pub fn map(base: SphereMap, direction: PullbackSection) -> Result<Self> {
        if !matches!(base.target(), Target::Sphere { .. }) {
            return Err(JacobiError::Capability(
                "geodesic map variations need a round-sphere target".into(),
            ));
        }
        Ok(Self::Map { base, direction })
    }

    pub fn connection(base: BundleConnection, direction: ConnectionPerturbation) -> Self {
        Self::Connection { base, direction }
    }

    pub fn submanifold(base: ImmersedSubmanifold, direction: NormalSection) -> Self {
        Self::Submanifold { base, direction }
    }

    pub fn setting(&self) -> &'static str {
        match self {
            Self::Map { .. } => "harmonic",
            Self::Connection { .. } => "yang-mills",
            Self::Submanifold { .. } => "minimal",
        }
    }

    /// The deformed map `u_s`.
    pub fn map_at(&self, s: f64) -> Result<SphereMap> {
        let Self::Map { base, direction } = self else {
            return Err(JacobiError::Capability("family does not deform a map".into()));
        };
        let (u, v) = (base.clone(), direction.clone());
        let value = move |x: &SpherePoint| sphere_exp(&u.value(x), &(v.evaluate(x, &[]) * s));
        let value = Arc::new(value);
        let value_j = value.clone();
        let (m, target) = (base.domain_dim(), base.target().clone());
        let n = target.ambient_dim();
        Ok(SphereMap::new(
            format!("{}[s={s}]", base.name()),
            m,
            target,
            move |x| value(x),
            move |x| {
                let mut jac = Matrix::zeros(n, m + 1);
                for e in tangent_frame(x).vectors {
                    let col = stencil(|t| value_j(&geodesic(x, &e, t)), STENCIL_STEP);
                    jac += col * e.transpose();
                }
                jac
            },
        ))
    }

    /// The deformed connection `D + sB`.
    pub fn connection_at(&self, s: f64, method: Method, steps: FdSteps) -> Result<BundleConnection> {
        let Self::Connection { base, direction } = self else {
            return Err(JacobiError::Capability("family does not deform a connection".into()));
        };
        if s == 0.0 {
            return Ok(base.clone());
        }
        let conn = AffinePerturbation::new(base.connection().clone(), direction.clone(), s, method, steps)?;
        Ok(BundleConnection::new(Arc::new(conn), false))
    }

    /// Position of the deformed submanifold over `p`.
    pub fn submanifold_point(&self, p: &ManifoldPoint, s: f64) -> Result<Vector> {
        let Self::Submanifold { direction, .. } = self else {
            return Err(JacobiError::Capability("family does not deform a submanifold".into()));
        };
        Ok(sphere_exp(&p.position, &(direction.evaluate(p) * s)))
    }

    /// `F(s)`: energy, Yang-Mills energy or area of the deformed object.
    pub fn functional(&self, s: f64, grid: &VariationGrid, method: Method, steps: FdSteps) -> Result<f64> {
        match (self, grid) {
            (Self::Map { .. }, VariationGrid::Sphere(g)) => Ok(energy(&self.map_at(s)?, g)),
            (Self::Connection { .. }, VariationGrid::Sphere(g)) => {
                Ok(ym_energy(&self.connection_at(s, method, steps)?, g))
            }
            (Self::Submanifold { base, direction }, VariationGrid::Submanifold(g)) => {
                Ok(g.integrate(|p| volume_element(base, p, |q| sphere_exp(&q.position, &(direction.evaluate(q) * s)))))
            }
            _ => Err(JacobiError::Config(format!(
                "grid does not match the {} family",
                self.setting()
            ))),
        }
    }

    /// Sup over the grid of the base object's Euler-Lagrange residual (tension, `d_D* R^D` or `H`)
    /// and the profile's admission threshold for it. Falls back to finite differences when the
    /// closed-form path is unavailable.
    pub fn euler_lagrange_residual(
        &self,
        grid: &VariationGrid,
        method: Method,
        profile: &ToleranceProfile,
    ) -> Result<(f64, f64)> {
        let steps = FdSteps::from(profile);
        let with_fallback = |f: &dyn Fn(Method) -> Result<f64>| match f(method) {
            Err(JacobiError::Capability(_)) => f(Method::Fd),
            other => other,
        };
        match (self, grid) {
            (Self::Map { base, .. }, VariationGrid::Sphere(g)) => Ok((
                with_fallback(&|m| tension_sup(base, g, m, steps))?,
                profile.harmonic_admission,
            )),
            (Self::Connection { base, .. }, VariationGrid::Sphere(g)) => Ok((
                with_fallback(&|m| ym_residual(base, g, m, steps))?,
                profile.yang_mills_admission,
            )),
            (Self::Submanifold { base, .. }, VariationGrid::Submanifold(g)) => Ok((
                mean_curvature_sup(base, g, method, MinimalSteps::from(profile)),
                profile.minimal_admission,
            )),
            _ => Err(JacobiError::Config(format!(
                "grid does not match the {} family",
                self.setting()
            ))),
        }
    }

    /// `‖V‖²_{L²}` of the direction (Frobenius over a frame for connection perturbations).
    pub fn direction_norm_sq(&self, grid: &VariationGrid) -> Result<f64> {
        match (self, grid) {
            (Self::Map { direction, .. }, VariationGrid::Sphere(g)) => {
                Ok(g.integrate(|x| direction.evaluate(x, &[]).norm_squared()))
            }
            (Self::Connection { direction, .. }, VariationGrid::Sphere(g)) => Ok(g.integrate(|x| {
                tangent_frame(x)
                    .vectors
                    .iter()
                    .map(|e| direction.evaluate(x, std::slice::from_ref(e)).norm_squared())
                    .sum()
            })),
            (Self::Submanifold { direction, .. }, VariationGrid::Submanifold(g)) => {
                Ok(g.integrate(|p| direction.evaluate(p).norm_squared()))
            }
            _ => Err(JacobiError::Config(format!(
                "grid does not match the {} family",
                self.setting()
            ))),
        }
    }

    /// `∫<J V, V>` for the family's direction.
    pub fn quadratic_form(&self, grid: &VariationGrid, method: Method, profile: &ToleranceProfile) -> Result<f64> {
        let steps = FdSteps::from(profile);
        match (self, grid) {
            (Self::Map { base, direction }, VariationGrid::Sphere(g)) => integrate_fallible(g, |x| {
                let jv = jacobi_apply(base, direction, x, &tangent_frame(x), method, steps)?;
                Ok(jv.dot(&direction.evaluate(x, &[])))
            }),
            (Self::Connection { base, direction }, VariationGrid::Sphere(g)) => {
                let n = base.ambient_rank();
                integrate_fallible(g, |x| {
                    let frame = tangent_frame(x);
                    let mut total = 0.0;
                    for e in &frame.vectors {
                        let jb = jacobi_apply_ym(base, direction, x, &frame, e, method, steps)?;
                        let b = unflatten(&direction.evaluate(x, std::slice::from_ref(e)), n);
                        total += frobenius(&jb, &b);
                    }
                    Ok(total)
                })
            }
            (Self::Submanifold { base, direction }, VariationGrid::Submanifold(g)) => {
                let msteps = MinimalSteps::from(profile);
                let values = g.map(|p| -> Result<f64> {
                    Ok(jacobi_apply_minimal(base, direction, p, method, msteps)?.dot(&direction.evaluate(p)))
                });
                g.nodes
                    .iter()
                    .zip(values)
                    .try_fold(0.0, |acc, (n, v)| Ok(acc + n.weight * v?))
            }
            _ => Err(JacobiError::Config(format!(
                "grid does not match the {} family",
                self.setting()
            ))),
        }
    }
}

fn integrate_fallible<F>(grid: &QuadratureGrid, f: F) -> Result<f64>
where
    F: Fn(&SpherePoint) -> Result<f64> + Sync + Send,
{
    grid.nodes
        .iter()
        .zip(grid.map(f))
        .try_fold(0.0, |acc, (n, v)| Ok(acc + n.weight * v?))
}

/// Outcome of comparing the finite-difference second derivative with the quadratic form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondVariation {
    pub functional_at_zero: f64,
    pub first_variation: f64,
    /// Central second differences at each ladder step.
    pub second_differences: Vec<f64>,
    /// Richardson-extrapolated second derivative.
    pub fd_value: f64,
    pub quadratic_form_value: f64,
    /// `‖V‖²_{L²}` of the direction.
    pub direction_norm_sq: f64,
    pub relative_gap: f64,
}

/// Richardson extrapolation of second differences `D(h) = F'' + c₂h² + c₄h⁴ + …`.
pub fn richardson(steps: &[f64], values: &[f64]) -> f64 {
    let mut level: Vec<f64> = values.to_vec();
    let mut power = 2;
    while level.len() > 1 {
        level = (0..level.len() - 1)
            .map(|k| {
                let q = (steps[k] / steps[k + 1]).powi(power);
                (q * level[k + 1] - level[k]) / (q - 1.0)
            })
            .collect();
        power += 2;
    }
    level[0]
}

/// `|a - b| / |b|`; when `|b|` is negligible against `‖V‖²` (a null direction
/// of the quadratic form) the gap is measured against `‖V‖²` instead, and
/// `|a - b|` is returned for a vanishing direction.
pub fn relative_gap(fd: f64, quadratic: f64, direction_norm_sq: f64) -> f64 {
    let diff = (fd - quadratic).abs();
    if quadratic.abs() > NULL_DIRECTION_RATIO * direction_norm_sq && quadratic.abs() > 0.0 {
        diff / quadratic.abs()
    } else if direction_norm_sq > 0.0 {
        diff / direction_norm_sq
    } else {
        diff
    }
}

/// Compares `d²F/ds²|_{s=0}` (Richardson over the profile's ladder) with `∫<J V, V>`.
///
/// The base object must be critical: its Euler-Lagrange residual has to pass the
/// admission threshold, and the central first difference at the smallest ladder
/// step has to stay below `rel |F(0)| + abs`.
pub fn second_variation_check(
    family: &VariationFamily,
    grid: &VariationGrid,
    method: Method,
    profile: &ToleranceProfile,
) -> Result<SecondVariation> {
    let (residual, threshold) = family.euler_lagrange_residual(grid, method, profile)?;
    if residual > threshold {
        return Err(JacobiError::NotCriticalResidual { residual, threshold });
    }
    let steps = FdSteps::from(profile);
    let ladder = profile.variation_steps;
    let mut params = vec![0.0];
    for h in ladder {
        params.push(h);
        params.push(-h);
    }
    let values = params
        .par_iter()
        .map(|&s| family.functional(s, grid, method, steps))
        .collect::<Result<Vec<_>>>()?;
    let f0 = values[0];
    let (fp, fm) = (values[5], values[6]);
    let first_variation = (fp - fm) / (2.0 * ladder[2]);
    let threshold = profile.first_variation_rel * f0.abs() + profile.first_variation_abs;
    if first_variation.abs() > threshold {
        return Err(JacobiError::NotCritical {
            first_variation,
            threshold,
        });
    }
    let second_differences: Vec<f64> = ladder
        .iter()
        .enumerate()
        .map(|(k, h)| (values[1 + 2 * k] - 2.0 * f0 + values[2 + 2 * k]) / (h * h))
        .collect();
    let fd_value = richardson(&ladder, &second_differences);
    let quadratic_form_value = family.quadratic_form(grid, method, profile)?;
    let direction_norm_sq = family.direction_norm_sq(grid)?;
    Ok(SecondVariation {
        functional_at_zero: f0,
        first_variation,
        second_differences,
        fd_value,
        quadratic_form_value,
        direction_norm_sq,
        relative_gap: relative_gap(fd_value, quadratic_form_value, direction_norm_sq),
    })
}

/// The zero perturbation of a connection.
pub fn zero_perturbation(d: &BundleConnection) -> ConnectionPerturbation {
    BundleValuedForm::zero(1, d.endomorphism_bundle())
}
