//! Submanifolds of round spheres built from products of scaled round spheres:
//! second fundamental form, shape operators, mean curvature, the 1-form `β`,
//! the normal Jacobi operator `J_M V = ∇*∇V - mV - Ã(V)` and the sections
//! `V_ℓ = (∇ℓ)^⊥`.

use std::sync::Arc;

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{JacobiError, Result};
use crate::harmonic::{EigenResidual, ZERO_SECTION_NORM};
use crate::linalg::{gram_rank, gram_schmidt, weighted_gram, GramRank, Matrix, Vector};
use crate::sphere::{geodesic, geodesic_rotation, quadrature_grid, tangent_frame, LinearFunction, SpherePoint};
use crate::tolerance::Method;

/// One factor `S^k(r)` of the product immersion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SphereFactor {
    pub dim: usize,
    pub radius: f64,
}

/// A point of `M`: one point per factor sphere plus its position in `R^{n+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    pub factors: Vec<SpherePoint>,
    pub position: Vector,
}

/// `M = S^{k_1}(r_1) x ... x S^{k_F}(r_F) x {c} ⊂ S^n`, `Σ r_f² + |c|² = 1`.
#[derive(Debug, Clone)]
pub struct ImmersedSubmanifold {
    name: String,
    factors: Vec<SphereFactor>,
    offset: Vector,
    m: usize,
    n: usize,
    claims_minimal: bool,
    claims_totally_geodesic: bool,
}

impl ImmersedSubmanifold {
    pub fn new(
        name: impl Into<String>,
        factors: Vec<SphereFactor>,
        offset: Vector,
        claims_minimal: bool,
    ) -> Result<Self> {
        let sq: f64 = factors.iter().map(|f| f.radius * f.radius).sum::<f64>() + offset.norm_squared();
        if (sq - 1.0).abs() > 1e-12 || factors.is_empty() || factors.iter().any(|f| f.dim == 0 || f.radius <= 0.0) {
            return Err(JacobiError::DegenerateInput(
                "product factors must lie on the unit sphere".into(),
            ));
        }
        let m = factors.iter().map(|f| f.dim).sum();
        let n = factors.iter().map(|f| f.dim + 1).sum::<usize>() + offset.len() - 1;
        if m >= n {
            return Err(JacobiError::UnsupportedDimension {
                dim: m,
                reason: format!("submanifold dimension must be below the ambient sphere dimension {n}"),
            });
        }
        let claims_totally_geodesic = factors.len() == 1 && (factors[0].radius - 1.0).abs() < 1e-15;
        Ok(Self {
            name: name.into(),
            factors,
            offset,
            m,
            n,
            claims_minimal,
            claims_totally_geodesic,
        })
    }

    /// Equatorial `S^m ⊂ S^n`.
    pub fn equator(m: usize, n: usize) -> Result<Self> {
        let offset = Vector::zeros(n.saturating_sub(m));
        Self::new(
            format!("equator-{m}-{n}"),
            vec![SphereFactor { dim: m, radius: 1.0 }],
            offset,
            true,
        )
    }

    /// Clifford torus `S¹(1/√2) x S¹(1/√2) ⊂ S³`.
    pub fn clifford_torus() -> Self {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        Self::new(
            "clifford-torus",
            vec![SphereFactor { dim: 1, radius: r }, SphereFactor { dim: 1, radius: r }],
            Vector::zeros(0),
            true,
        )
        .expect("valid factors")
    }

    /// Minimal `S^p(√(p/(p+q))) x S^q(√(q/(p+q))) ⊂ S^{p+q+1}`.
    pub fn generalized_clifford(p: usize, q: usize) -> Self {
        let total = (p + q) as f64;
        Self::new(
            format!("clifford-{p}-{q}"),
            vec![
                SphereFactor {
                    dim: p,
                    radius: (p as f64 / total).sqrt(),
                },
                SphereFactor {
                    dim: q,
                    radius: (q as f64 / total).sqrt(),
                },
            ],
            Vector::zeros(0),
            true,
        )
        .expect("valid factors")
    }

    /// Small circle `S¹(r) ⊂ S²` at height `√(1-r²)`; not minimal for `r < 1`.
    pub fn small_circle(r: f64) -> Result<Self> {
        if !(0.0 < r && r < 1.0) {
            return Err(JacobiError::DegenerateInput(format!(
                "small-circle radius must lie in (0,1), got {r}"
            )));
        }
        Self::new(
            format!("small-circle-{r}"),
            vec![SphereFactor { dim: 1, radius: r }],
            Vector::from_vec(vec![(1.0 - r * r).sqrt()]),
            false,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn dim(&self) -> usize {
        self.m
    }
    pub fn ambient_sphere_dim(&self) -> usize {
        self.n
    }
    pub fn factors(&self) -> &[SphereFactor] {
        &self.factors
    }
    pub fn claims_minimal(&self) -> bool {
        self.claims_minimal
    }
    pub fn claims_totally_geodesic(&self) -> bool {
        self.claims_totally_geodesic
    }

    /// Products of round spheres have parallel second fundamental form, which the closed-form path relies on.
    pub fn parallel_second_fundamental_form(&self) -> bool {
        true
    }

    fn block_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.factors.len());
        let mut start = 0;
        for f in &self.factors {
            out.push(start);
            start += f.dim + 1;
        }
        out
    }

    pub fn point(&self, factors: Vec<SpherePoint>) -> ManifoldPoint {
        let mut position = Vector::zeros(self.n + 1);
        for ((f, q), start) in self.factors.iter().zip(&factors).zip(self.block_offsets()) {
            position.rows_mut(start, f.dim + 1).copy_from(&(q.coords() * f.radius));
        }
        let tail = self.n + 1 - self.offset.len();
        position.rows_mut(tail, self.offset.len()).copy_from(&self.offset);
        ManifoldPoint { factors, position }
    }

    /// Orthonormal tangent frame: each factor's deterministic frame placed in its block.
    pub fn tangent_frame(&self, p: &ManifoldPoint) -> Vec<Vector> {
        let mut out = Vec::with_capacity(self.m);
        for (q, start) in p.factors.iter().zip(self.block_offsets()) {
            for v in tangent_frame(q).vectors {
                let mut e = Vector::zeros(self.n + 1);
                e.rows_mut(start, v.len()).copy_from(&v);
                out.push(e);
            }
        }
        out
    }

    pub fn tangent_projector(&self, p: &ManifoldPoint) -> Matrix {
        let mut out = Matrix::zeros(self.n + 1, self.n + 1);
        for e in self.tangent_frame(p) {
            out += &e * e.transpose();
        }
        out
    }

    /// Projector onto `N_p M` inside `T_p S^n`.
    pub fn normal_projector(&self, p: &ManifoldPoint) -> Matrix {
        Matrix::identity(self.n + 1, self.n + 1) - &p.position * p.position.transpose() - self.tangent_projector(p)
    }

    /// Orthonormal normal frame: Gram-Schmidt of the normal projections of the coordinate vectors.
    pub fn normal_frame(&self, p: &ManifoldPoint) -> Vec<Vector> {
        let pn = self.normal_projector(p);
        gram_schmidt((0..=self.n).map(|a| pn.column(a).into_owned()), 1e-8)
    }

    /// Moves `p` along the geodesic of `M` with initial velocity `x` (tangent) for time `t`.
    pub fn move_point(&self, p: &ManifoldPoint, x: &Vector, t: f64) -> ManifoldPoint {
        let factors = self
            .factors
            .iter()
            .zip(&p.factors)
            .zip(self.block_offsets())
            .map(|((f, q), start)| {
                let v = x.rows(start, f.dim + 1).into_owned() / f.radius;
                geodesic(q, &v, t)
            })
            .collect();
        self.point(factors)
    }

    /// Parallel transport in `TM` along `move_point(p, x, ·)` up to time `t`.
    pub fn transport(&self, p: &ManifoldPoint, x: &Vector, t: f64) -> Matrix {
        let mut out = Matrix::identity(self.n + 1, self.n + 1);
        for ((f, q), start) in self.factors.iter().zip(&p.factors).zip(self.block_offsets()) {
            let v = x.rows(start, f.dim + 1).into_owned() / f.radius;
            let rot = geodesic_rotation(q, &v, t);
            out.view_mut((start, start), (f.dim + 1, f.dim + 1)).copy_from(&rot);
        }
        out
    }

    /// Product quadrature over `M` with the induced area element.
    pub fn grid(&self, level: usize) -> Result<ManifoldGrid> {
        let factor_grids = self
            .factors
            .iter()
            .map(|f| quadrature_grid(f.dim, level))
            .collect::<Result<Vec<_>>>()?;
        let scale: f64 = self.factors.iter().map(|f| f.radius.powi(f.dim as i32)).product();
        let mut combos: Vec<(Vec<SpherePoint>, f64)> = vec![(Vec::new(), scale)];
        for g in &factor_grids {
            let mut next = Vec::with_capacity(combos.len() * g.len());
            for (pts, w) in &combos {
                for node in &g.nodes {
                    let mut p = pts.clone();
                    p.push(node.point.clone());
                    next.push((p, w * node.weight));
                }
            }
            combos = next;
        }
        Ok(ManifoldGrid {
            level,
            nodes: combos
                .into_iter()
                .map(|(pts, weight)| ManifoldNode {
                    point: self.point(pts),
                    weight,
                })
                .collect(),
        })
    }

    /// Closed-form `B(X,Y) = P_N(-Σ_f <X_f, Y_f> q_f / r_f)`.
    pub fn second_fundamental_form_exact(&self, p: &ManifoldPoint, x: &Vector, y: &Vector) -> Vector {
        let mut hess = Vector::zeros(self.n + 1);
        for ((f, q), start) in self.factors.iter().zip(&p.factors).zip(self.block_offsets()) {
            let k = f.dim + 1;
            let c = x.rows(start, k).dot(&y.rows(start, k));
            hess.rows_mut(start, k).axpy(-c / f.radius, q.coords(), 1.0);
        }
        self.normal_projector(p) * hess
    }

    /// `dP_T[X]` by central differences along the geodesic of `M`.
    fn tangent_projector_derivative(&self, p: &ManifoldPoint, x: &Vector, h: f64) -> Matrix {
        let plus = self.tangent_projector(&self.move_point(p, x, h));
        let minus = self.tangent_projector(&self.move_point(p, x, -h));
        (plus - minus) / (2.0 * h)
    }

    /// `B(X,Y) = (∇̄_X Y)^⊥`.
    pub fn second_fundamental_form(&self, p: &ManifoldPoint, x: &Vector, y: &Vector, method: Method, h: f64) -> Vector {
        match method {
            Method::Analytic => self.second_fundamental_form_exact(p, x, y),
            Method::Fd => self.normal_projector(p) * self.tangent_projector_derivative(p, x, h) * y,
        }
    }

    /// `H = Σ_j B(e_j, e_j)`.
    pub fn mean_curvature(&self, p: &ManifoldPoint, method: Method, h: f64) -> Vector {
        let mut out = Vector::zeros(self.n + 1);
        for e in self.tangent_frame(p) {
            out += self.second_fundamental_form(p, &e, &e, method, h);
        }
        out
    }

    /// `|B|² = Σ_{i,j} |B(e_i, e_j)|²`.
    pub fn second_fundamental_form_norm_sq(&self, p: &ManifoldPoint, method: Method, h: f64) -> f64 {
        let frame = self.tangent_frame(p);
        let mut total = 0.0;
        for a in &frame {
            for b in &frame {
                total += self.second_fundamental_form(p, a, b, method, h).norm_squared();
            }
        }
        total
    }

    /// Shape operator `A^V X = Σ_i <B(X, e_i), V> e_i`.
    pub fn shape_operator(&self, p: &ManifoldPoint, v: &Vector, x: &Vector, method: Method, h: f64) -> Vector {
        let mut out = Vector::zeros(self.n + 1);
        for e in self.tangent_frame(p) {
            out.axpy(self.second_fundamental_form(p, x, &e, method, h).dot(v), &e, 1.0);
        }
        out
    }

    /// `β(X) ∈ Hom(TM, NM)`, `β(X) Y = B(X, Y)`.
    pub fn beta(&self, p: &ManifoldPoint, x: &Vector, method: Method, h: f64) -> Matrix {
        match method {
            Method::Analytic => {
                let mut out = Matrix::zeros(self.n + 1, self.n + 1);
                for e in self.tangent_frame(p) {
                    out += self.second_fundamental_form_exact(p, x, &e) * e.transpose();
                }
                out
            }
            Method::Fd => {
                self.normal_projector(p) * self.tangent_projector_derivative(p, x, h) * self.tangent_projector(p)
            }
        }
    }

    /// `(D_Z β)(Y)` for the connection induced by `∇` and `∇^⊥` on `T*M ⊗ Hom(TM, NM)`.
    pub fn beta_derivative(&self, p: &ManifoldPoint, z: &Vector, y: &Vector, method: Method, h: f64) -> Matrix {
        let value = |t: f64| {
            let q = self.move_point(p, z, t);
            let yt = self.transport(p, z, t) * y;
            self.beta(&q, &yt, method, h)
        };
        let d = (value(h) - value(-h)) / (2.0 * h);
        self.normal_projector(p) * d * self.tangent_projector(p)
    }
}

/// A node of a [`ManifoldGrid`].
#[derive(Debug, Clone)]
pub struct ManifoldNode {
    pub point: ManifoldPoint,
    pub weight: f64,
}

/// Quadrature over a product immersion.
#[derive(Debug, Clone)]
pub struct ManifoldGrid {
    pub level: usize,
    pub nodes: Vec<ManifoldNode>,
}

impl ManifoldGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    pub fn map<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&ManifoldPoint) -> T + Sync + Send,
    {
        self.nodes.par_iter().map(|n| f(&n.point)).collect()
    }

    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: Fn(&ManifoldPoint) -> f64 + Sync + Send,
    {
        let values = self.map(f);
        self.nodes.iter().zip(values).map(|(n, v)| n.weight * v).sum()
    }
}

type NormalEval = Arc<dyn Fn(&ManifoldPoint) -> Vector + Send + Sync>;
type NormalDerivative = Arc<dyn Fn(&ManifoldPoint, &Vector) -> Vector + Send + Sync>;

/// A section of the normal bundle, optionally with closed-form `∇^⊥V` and `Δ^⊥V`.
#[derive(Clone)]
pub struct NormalSection {
    eval: NormalEval,
    exact_derivative: Option<NormalDerivative>,
    exact_laplacian: Option<NormalEval>,
}

impl NormalSection {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&ManifoldPoint) -> Vector + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(f),
            exact_derivative: None,
            exact_laplacian: None,
        }
    }

    /// `p -> P_N(p) w(p)` for an ambient vector field `w`.
    pub fn projected<F>(m: &ImmersedSubmanifold, w: F) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        let sub = m.clone();
        Self::new(move |p| sub.normal_projector(p) * w(&p.position))
    }

    pub fn zero(m: &ImmersedSubmanifold) -> Self {
        let k = m.n + 1;
        let mut s = Self::new(move |_| Vector::zeros(k));
        s.exact_derivative = Some(Arc::new(move |_, _| Vector::zeros(k)));
        s.exact_laplacian = Some(Arc::new(move |_| Vector::zeros(k)));
        s
    }

    pub fn evaluate(&self, p: &ManifoldPoint) -> Vector {
        (self.eval)(p)
    }

    pub fn has_exact_jets(&self) -> bool {
        self.exact_derivative.is_some() && self.exact_laplacian.is_some()
    }
}

/// `V_ℓ = P_N(a - ℓ p) = P_N a`.
///
/// With parallel `B`: `∇^⊥_X V_ℓ = -B(X, T_ℓ)` and `Δ^⊥ V_ℓ = ℓH - Σ_j B(e_j, A^{V_ℓ} e_j)`,
/// where `T_ℓ = P_T a`.
pub fn v_ell_section(m: &ImmersedSubmanifold, l: &LinearFunction) -> NormalSection {
    let a = l.a.clone();
    let a1 = a.clone();
    let mut s = NormalSection::projected(m, move |_| a1.clone());
    if m.parallel_second_fundamental_form() {
        let (sub_d, a_d) = (m.clone(), a.clone());
        let (sub_l, a_l) = (m.clone(), a);
        s.exact_derivative = Some(Arc::new(move |p, x| {
            let t = sub_d.tangent_projector(p) * &a_d;
            -sub_d.second_fundamental_form_exact(p, x, &t)
        }));
        s.exact_laplacian = Some(Arc::new(move |p| {
            let v = sub_l.normal_projector(p) * &a_l;
            let ell = a_l.dot(&p.position);
            let mut out = sub_l.mean_curvature(p, Method::Analytic, 0.0) * ell;
            for e in sub_l.tangent_frame(p) {
                let av = sub_l.shape_operator(p, &v, &e, Method::Analytic, 0.0);
                out -= sub_l.second_fundamental_form_exact(p, &e, &av);
            }
            out
        }));
    }
    s
}

/// Step sizes used by the submanifold finite differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimalSteps {
    /// Step for derivatives of the tangent projector.
    pub first: f64,
    /// Step for derivatives of normal sections (fourth-order stencil) and second differences.
    pub second: f64,
}

impl Default for MinimalSteps {
    fn default() -> Self {
        Self {
            first: 1e-4,
            second: 1e-3,
        }
    }
}

impl From<&crate::tolerance::ToleranceProfile> for MinimalSteps {
    fn from(p: &crate::tolerance::ToleranceProfile) -> Self {
        Self {
            first: p.fd_step_first,
            second: p.fd_step_second,
        }
    }
}

/// Ambient derivative `dV[X]` along the geodesic of `M` with a fourth-order stencil.
fn section_derivative(m: &ImmersedSubmanifold, v: &NormalSection, p: &ManifoldPoint, x: &Vector, h: f64) -> Vector {
    let f = |t: f64| v.evaluate(&m.move_point(p, x, t));
    (f(h) * 8.0 - f(-h) * 8.0 - f(2.0 * h) + f(-2.0 * h)) / (12.0 * h)
}

/// `∇^⊥_X V`.
pub fn normal_derivative(
    m: &ImmersedSubmanifold,
    v: &NormalSection,
    p: &ManifoldPoint,
    x: &Vector,
    method: Method,
    steps: MinimalSteps,
) -> Result<Vector> {
    match method {
        Method::Analytic => {
            let d = v
                .exact_derivative
                .as_ref()
                .ok_or_else(|| JacobiError::Capability("normal section carries no closed-form derivative".into()))?;
            Ok(d(p, x))
        }
        Method::Fd => Ok(m.normal_projector(p) * section_derivative(m, v, p, x, steps.second)),
    }
}

/// `Δ^⊥ V = Σ_j ∇^⊥²_{e_j,e_j} V`.
pub fn normal_laplacian(
    m: &ImmersedSubmanifold,
    v: &NormalSection,
    p: &ManifoldPoint,
    method: Method,
    steps: MinimalSteps,
) -> Result<Vector> {
    match method {
        Method::Analytic => {
            let l = v
                .exact_laplacian
                .as_ref()
                .ok_or_else(|| JacobiError::Capability("normal section carries no closed-form Laplacian".into()))?;
            Ok(l(p))
        }
        Method::Fd => {
            let h = steps.second;
            let pn = m.normal_projector(p);
            let mut out = Vector::zeros(m.n + 1);
            for e in m.tangent_frame(p) {
                let at = |t: f64| v.evaluate(&m.move_point(p, &e, t));
                let (v2, v0, vm2) = (at(2.0 * h), at(0.0), at(-2.0 * h));
                // W(t) = ∇^⊥_{c'} V at c(t); the velocity of a geodesic of M is parallel
                let w_plus = m.normal_projector(&m.move_point(p, &e, h)) * (&v2 - &v0);
                let w_minus = m.normal_projector(&m.move_point(p, &e, -h)) * (&v0 - &vm2);
                out += &pn * (w_plus - w_minus) / (4.0 * h * h);
            }
            Ok(out)
        }
    }
}

/// `Ã(V)` from `<Ã V, W> = Σ_j <(∇̄_{e_j} V)^T, (∇̄_{e_j} W)^T>` over a normal frame `W = ν_k`.
///
/// The analytic path uses `(∇̄_X V)^T = -A^V X`; the fd path differentiates the
/// section and the extended frame fields `P_N ν_k(p)` numerically.
pub fn a_tilde_by_derivatives(
    m: &ImmersedSubmanifold,
    v: &NormalSection,
    p: &ManifoldPoint,
    method: Method,
    steps: MinimalSteps,
) -> Vector {
    let frame = m.tangent_frame(p);
    let pt = m.tangent_projector(p);
    let vp = v.evaluate(p);
    let tangential = |field: &NormalSection, value: &Vector, e: &Vector| -> Vector {
        match method {
            Method::Analytic => -m.shape_operator(p, value, e, Method::Analytic, steps.first),
            Method::Fd => &pt * section_derivative(m, field, p, e, steps.second),
        }
    };
    let dv: Vec<Vector> = frame.iter().map(|e| tangential(v, &vp, e)).collect();
    let mut out = Vector::zeros(m.n + 1);
    for nu in m.normal_frame(p) {
        let nu_c = nu.clone();
        let w = NormalSection::projected(m, move |_| nu_c.clone());
        let coeff: f64 = frame.iter().zip(&dv).map(|(e, d)| d.dot(&tangential(&w, &nu, e))).sum();
        out.axpy(coeff, &nu, 1.0);
    }
    out
}

/// `Ã(V) = Σ_j B(e_j, A^V e_j)` at a point, for a normal vector `V`.
pub fn a_tilde_by_shape_operator(
    m: &ImmersedSubmanifold,
    p: &ManifoldPoint,
    v: &Vector,
    method: Method,
    h: f64,
) -> Vector {
    let mut out = Vector::zeros(m.n + 1);
    for e in m.tangent_frame(p) {
        let av = m.shape_operator(p, v, &e, method, h);
        out += m.second_fundamental_form(p, &e, &av, method, h);
    }
    out
}

/// `J_M V = -Δ^⊥V - mV - Ã(V)` at `p`.
pub fn jacobi_apply_minimal(
    m: &ImmersedSubmanifold,
    v: &NormalSection,
    p: &ManifoldPoint,
    method: Method,
    steps: MinimalSteps,
) -> Result<Vector> {
    let lap = normal_laplacian(m, v, p, method, steps)?;
    let vp = v.evaluate(p);
    let a = a_tilde_by_derivatives(m, v, p, method, steps);
    Ok(-lap - vp * m.m as f64 - a)
}

/// Relative L² residual of `J_M V_ℓ + m V_ℓ`.
pub fn eigen_residual_minimal(
    m: &ImmersedSubmanifold,
    l: &LinearFunction,
    grid: &ManifoldGrid,
    method: Method,
    steps: MinimalSteps,
) -> Result<EigenResidual> {
    let eigenvalue = -(m.m as f64);
    let v = v_ell_section(m, l);
    let samples = grid.map(|p| -> Result<(f64, f64)> {
        let vp = v.evaluate(p);
        let jv = jacobi_apply_minimal(m, &v, p, method, steps)?;
        Ok(((jv - &vp * eigenvalue).norm_squared(), vp.norm_squared()))
    });
    let (mut num, mut den) = (0.0, 0.0);
    for (node, s) in grid.nodes.iter().zip(samples) {
        let (a, b) = s?;
        num += node.weight * a;
        den += node.weight * b;
    }
    let section_norm = den.sqrt();
    if section_norm <= ZERO_SECTION_NORM {
        return Err(JacobiError::DegenerateInput(format!(
            "V_ℓ vanishes identically on {}",
            m.name
        )));
    }
    Ok(EigenResidual {
        residual: num.sqrt() / section_norm,
        eigenvalue,
        section_norm,
    })
}

/// Sup-norms over the grid of `d_D β` (Codazzi) and `d_D* β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaResiduals {
    pub codazzi_residual: f64,
    pub coclosed_residual: f64,
}

pub fn beta_residuals(
    m: &ImmersedSubmanifold,
    grid: &ManifoldGrid,
    method: Method,
    steps: MinimalSteps,
) -> BetaResiduals {
    let per_node = grid.map(|p| {
        let frame = m.tangent_frame(p);
        let h = steps.first;
        let d: Vec<Vec<Matrix>> = frame
            .iter()
            .map(|z| frame.iter().map(|y| m.beta_derivative(p, z, y, method, h)).collect())
            .collect();
        let mut codazzi: f64 = 0.0;
        let mut trace = Matrix::zeros(m.n + 1, m.n + 1);
        for i in 0..frame.len() {
            trace += &d[i][i];
            for j in i + 1..frame.len() {
                codazzi = codazzi.max((&d[i][j] - &d[j][i]).norm());
            }
        }
        (codazzi, trace.norm())
    });
    let (codazzi, coclosed) = per_node
        .into_iter()
        .fold((0.0f64, 0.0f64), |(a, b), (c, d)| (a.max(c), b.max(d)));
    BetaResiduals {
        codazzi_residual: codazzi,
        coclosed_residual: coclosed,
    }
}

/// Sup over the grid of `|H|`.
pub fn mean_curvature_sup(m: &ImmersedSubmanifold, grid: &ManifoldGrid, method: Method, steps: MinimalSteps) -> f64 {
    grid.map(|p| m.mean_curvature(p, method, steps.first).norm())
        .into_iter()
        .fold(0.0, f64::max)
}

/// Gram rank of `{V_ℓ}` and the totally-geodesic flag.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rigidity {
    pub gram: GramRank,
    pub totally_geodesic: bool,
    /// Sup over the grid of `|B|`.
    pub second_fundamental_form_sup: f64,
}

pub fn multiplicity_and_rigidity(
    m: &ImmersedSubmanifold,
    grid: &ManifoldGrid,
    epsilon: f64,
    geodesic_tol: f64,
    method: Method,
    steps: MinimalSteps,
) -> Rigidity {
    let sections: Vec<NormalSection> = LinearFunction::coordinate_basis(m.n + 1)
        .iter()
        .map(|l| v_ell_section(m, l))
        .collect();
    let samples = grid.map(|p| sections.iter().map(|s| s.evaluate(p)).collect::<Vec<_>>());
    let weights: Vec<f64> = grid.nodes.iter().map(|n| n.weight).collect();
    let gram = gram_rank(&weighted_gram(&weights, &samples), epsilon);
    let b_sup = grid
        .map(|p| m.second_fundamental_form_norm_sq(p, method, steps.first).sqrt())
        .into_iter()
        .fold(0.0, f64::max);
    Rigidity {
        gram,
        totally_geodesic: b_sup <= geodesic_tol,
        second_fundamental_form_sup: b_sup,
    }
}

/// Smallest eigenvalue of a discretised `J_M`.
///
/// Flat tori (all factors circles, codimension one): scalar fields `f ν` on a
/// uniform periodic grid with `8(level+1)` points per circle and the second-order
/// stencil for `Δ = Σ_f r_f^{-2} ∂²_θ`; the zeroth-order coefficient
/// `m + <Ã ν, ν>` is assembled from the shape operator at every node.
/// Equators: Rayleigh-Ritz on polynomials of degree at most two times a
/// constant normal frame.
pub fn lowest_eigenvalue_estimate(m: &ImmersedSubmanifold, level: usize) -> Result<f64> {
    let flat_torus = m.factors.iter().all(|f| f.dim == 1) && m.n == m.m + 1 && m.offset.is_empty();
    if flat_torus {
        return flat_torus_eigenvalue(m, 8 * (level + 1));
    }
    if m.claims_totally_geodesic {
        return equator_eigenvalue(m, level);
    }
    Err(JacobiError::Capability(format!(
        "no discrete eigensolver for {} (flat tori and equators only)",
        m.name
    )))
}

fn flat_torus_eigenvalue(m: &ImmersedSubmanifold, points: usize) -> Result<f64> {
    let f_count = m.factors.len();
    let total = points.pow(f_count as u32);
    let dtheta = 2.0 * std::f64::consts::PI / points as f64;
    let index_to_angles = |mut idx: usize| {
        let mut out = vec![0usize; f_count];
        for slot in out.iter_mut() {
            *slot = idx % points;
            idx /= points;
        }
        out
    };
    let angles_to_index = |a: &[usize]| a.iter().rev().fold(0usize, |acc, &i| acc * points + i);
    let mut j = Matrix::zeros(total, total);
    for idx in 0..total {
        let angles = index_to_angles(idx);
        let factors = angles
            .iter()
            .map(|&k| {
                let t = k as f64 * dtheta;
                SpherePoint::from_slice(&[t.cos(), t.sin()])
            })
            .collect::<Result<Vec<_>>>()?;
        let p = m.point(factors);
        let nu = m
            .normal_frame(&p)
            .into_iter()
            .next()
            .ok_or_else(|| JacobiError::DegenerateInput("torus entry has no normal direction".into()))?;
        let zeroth = m.m as f64 + a_tilde_by_shape_operator(m, &p, &nu, Method::Analytic, 0.0).dot(&nu);
        j[(idx, idx)] -= zeroth;
        for (f, factor) in m.factors.iter().enumerate() {
            let c = 1.0 / (factor.radius * factor.radius * dtheta * dtheta);
            j[(idx, idx)] += 2.0 * c;
            for delta in [1, points - 1] {
                let mut nb = angles.clone();
                nb[f] = (nb[f] + delta) % points;
                j[(idx, angles_to_index(&nb))] -= c;
            }
        }
    }
    let eig = SymmetricEigen::new(j);
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

fn equator_eigenvalue(m: &ImmersedSubmanifold, level: usize) -> Result<f64> {
    let grid = m.grid(level.max(2))?;
    let k = m.m + 1;
    // degree <= 2 polynomials in the factor coordinates and their ambient gradients
    let mut monomials: Vec<Vec<usize>> = vec![vec![]];
    for i in 0..k {
        monomials.push(vec![i]);
    }
    for i in 0..k {
        for jdx in i..k {
            monomials.push(vec![i, jdx]);
        }
    }
    let eval = |mono: &[usize], x: &Vector| -> (f64, Vector) {
        let value = mono.iter().map(|&i| x[i]).product::<f64>();
        let mut grad = Vector::zeros(k);
        match mono {
            [] => {}
            [i] => grad[*i] = 1.0,
            [i, j] => {
                grad[*i] += x[*j];
                grad[*j] += x[*i];
            }
            _ => unreachable!(),
        }
        (value, grad)
    };
    let base = &grid.nodes[0].point;
    let normals = m.normal_frame(base);
    let nf = monomials.len();
    let nb = nf * normals.len();
    let mut stiffness = Matrix::zeros(nb, nb);
    let mut mass = Matrix::zeros(nb, nb);
    for node in &grid.nodes {
        let q = &node.point.factors[0];
        let x = q.coords();
        let vals: Vec<(f64, Vector)> = monomials
            .iter()
            .map(|mono| {
                let (v, g) = eval(mono, x);
                (v, q.project_tangent(&g))
            })
            .collect();
        let zeroth: Vec<Vec<f64>> = normals
            .iter()
            .map(|nu| {
                let a = a_tilde_by_shape_operator(m, &node.point, nu, Method::Analytic, 0.0);
                normals.iter().map(|mu| (a.clone() + nu * m.m as f64).dot(mu)).collect()
            })
            .collect();
        for (a, (fa, ga)) in vals.iter().enumerate() {
            for (b, (fb, gb)) in vals.iter().enumerate() {
                for kk in 0..normals.len() {
                    for ll in 0..normals.len() {
                        let (r, c) = (a * normals.len() + kk, b * normals.len() + ll);
                        let mut s = -fa * fb * zeroth[kk][ll];
                        if kk == ll {
                            s += ga.dot(gb);
                            mass[(r, c)] += node.weight * fa * fb;
                        }
                        stiffness[(r, c)] += node.weight * s;
                    }
                }
            }
        }
    }
    // restrict to the numerically independent span of the basis
    let me = SymmetricEigen::new(mass);
    let max = me.eigenvalues.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..nb).filter(|&i| me.eigenvalues[i] > 1e-10 * max).collect();
    let mut t = Matrix::zeros(nb, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        t.set_column(c, &(me.eigenvectors.column(i) / me.eigenvalues[i].sqrt()));
    }
    let reduced = t.transpose() * stiffness * &t;
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    Ok(SymmetricEigen::new(reduced)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng, m: &ImmersedSubmanifold) -> ManifoldPoint {
        let factors = m
            .factors()
            .iter()
            .map(|f| SpherePoint::new(Vector::from_fn(f.dim + 1, |_, _| rng.gen_range(-1.0..1.0))).unwrap())
            .collect();
        m.point(factors)
    }

    fn random_tangent(rng: &mut ChaCha8Rng, m: &ImmersedSubmanifold, p: &ManifoldPoint) -> Vector {
        let w = Vector::from_fn(m.ambient_sphere_dim() + 1, |_, _| rng.gen_range(-1.0..1.0));
        m.tangent_projector(p) * w
    }

    fn catalog() -> Vec<ImmersedSubmanifold> {
        vec![
            ImmersedSubmanifold::equator(2, 3).unwrap(),
            ImmersedSubmanifold::equator(2, 5).unwrap(),
            ImmersedSubmanifold::equator(3, 5).unwrap(),
            ImmersedSubmanifold::clifford_torus(),
            ImmersedSubmanifold::generalized_clifford(1, 2),
            ImmersedSubmanifold::small_circle(0.6).unwrap(),
        ]
    }

    #[test]
    fn positions_are_unit_and_frames_have_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in catalog() {
            for _ in 0..20 {
                let p = random_point(&mut rng, &m);
                assert!((p.position.norm() - 1.0).abs() < 1e-12);
                let frame = m.tangent_frame(&p);
                assert_eq!(frame.len(), m.dim());
                let gram = Matrix::from_fn(frame.len(), frame.len(), |i, j| frame[i].dot(&frame[j]));
                let smin = gram.singular_values().min();
                assert!(smin > 1e-6);
                for e in &frame {
                    assert!(e.dot(&p.position).abs() < 1e-12);
                }
                assert_eq!(m.normal_frame(&p).len(), m.ambient_sphere_dim() - m.dim());
            }
        }
    }

    #[test]
    fn second_fundamental_form_symmetric_normal_and_fd_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let steps = MinimalSteps::default();
        for m in catalog() {
            for _ in 0..10 {
                let p = random_point(&mut rng, &m);
                let (x, y) = (random_tangent(&mut rng, &m, &p), random_tangent(&mut rng, &m, &p));
                let bxy = m.second_fundamental_form(&p, &x, &y, Method::Analytic, steps.first);
                let byx = m.second_fundamental_form(&p, &y, &x, Method::Analytic, steps.first);
                assert!((&bxy - &byx).norm() < 1e-10);
                assert!((m.tangent_projector(&p) * &bxy).norm() < 1e-8);
                let fd = m.second_fundamental_form(&p, &x, &y, Method::Fd, steps.first);
                assert!((&fd - &bxy).norm() < 1e-6, "{}", m.name());
                let fd_yx = m.second_fundamental_form(&p, &y, &x, Method::Fd, steps.first);
                assert!((&fd - fd_yx).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn clifford_torus_geometry() {
        let m = ImmersedSubmanifold::clifford_torus();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = random_point(&mut rng, &m);
            assert!((m.second_fundamental_form_norm_sq(&p, Method::Fd, 1e-4) - 2.0).abs() < 1e-6);
            assert!(m.mean_curvature(&p, Method::Fd, 1e-4).norm() < 5e-6);
        }
    }

    #[test]
    fn equator_is_totally_geodesic_and_small_circle_is_not_minimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let eq = ImmersedSubmanifold::equator(2, 3).unwrap();
        let sc = ImmersedSubmanifold::small_circle(0.6).unwrap();
        for _ in 0..10 {
            let p = random_point(&mut rng, &eq);
            assert!(eq.second_fundamental_form_norm_sq(&p, Method::Analytic, 1e-4) < 1e-28);
            let q = random_point(&mut rng, &sc);
            // geodesic curvature of a circle of radius r on the unit sphere is sqrt(1-r²)/r
            assert!((sc.mean_curvature(&q, Method::Analytic, 1e-4).norm() - 0.8 / 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn v_ell_examples() {
        let eq = ImmersedSubmanifold::equator(2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tangent = v_ell_section(&eq, &LinearFunction::coordinate(4, 1));
        let normal = v_ell_section(&eq, &LinearFunction::coordinate(4, 3));
        for _ in 0..10 {
            let p = random_point(&mut rng, &eq);
            assert!(tangent.evaluate(&p).norm() < 1e-15);
            assert!((normal.evaluate(&p) - Vector::from_vec(vec![0.0, 0.0, 0.0, 1.0])).norm() < 1e-15);
        }
    }

    #[test]
    fn v_ell_is_linear_and_rotation_equivariant() {
        let m = ImmersedSubmanifold::clifford_torus();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let l1 = LinearFunction::new(Vector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)));
        let l2 = LinearFunction::new(Vector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)));
        let combo = v_ell_section(&m, &l1.combine(0.3, &l2, 2.0));
        let (s1, s2) = (v_ell_section(&m, &l1), v_ell_section(&m, &l2));
        // rotation of the first circle preserves the torus
        let angle: f64 = 0.7;
        let mut rho = Matrix::identity(4, 4);
        rho[(0, 0)] = angle.cos();
        rho[(0, 1)] = -angle.sin();
        rho[(1, 0)] = angle.sin();
        rho[(1, 1)] = angle.cos();
        let rotated = v_ell_section(&m, &l1.precompose_inverse(&rho));
        for _ in 0..10 {
            let p = random_point(&mut rng, &m);
            let lhs = combo.evaluate(&p);
            let rhs = s1.evaluate(&p) * 0.3 + s2.evaluate(&p) * 2.0;
            assert!((lhs - rhs).norm() < 1e-14);
            let q0 = SpherePoint::new(rho.view((0, 0), (2, 2)) * p.factors[0].coords()).unwrap();
            let rp = m.point(vec![q0, p.factors[1].clone()]);
            assert!((rotated.evaluate(&rp) - &rho * s1.evaluate(&p)).norm() < 1e-12);
        }
    }

    #[test]
    fn a_tilde_assemblies_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let steps = MinimalSteps::default();
        for m in catalog() {
            let c = Matrix::from_fn(m.ambient_sphere_dim() + 1, m.ambient_sphere_dim() + 1, |_, _| {
                rng.gen_range(-1.0..1.0)
            });
            let d = Vector::from_fn(m.ambient_sphere_dim() + 1, |_, _| rng.gen_range(-1.0..1.0));
            let section = NormalSection::projected(&m, move |x| &c * x + &d);
            for _ in 0..5 {
                let p = random_point(&mut rng, &m);
                let a1 = a_tilde_by_derivatives(&m, &section, &p, Method::Fd, steps);
                let a2 = a_tilde_by_shape_operator(&m, &p, &section.evaluate(&p), Method::Analytic, steps.first);
                assert!((&a1 - &a2).norm() < 1e-8, "{}: {}", m.name(), (a1 - a2).norm());
            }
        }
    }

    #[test]
    fn clifford_constant_normal_is_minus_four_eigenfield() {
        let m = ImmersedSubmanifold::clifford_torus();
        let nu = NormalSection::new(|p: &ManifoldPoint| {
            let (a, b) = (p.factors[0].coords(), p.factors[1].coords());
            Vector::from_vec(vec![a[0], a[1], -b[0], -b[1]]) * std::f64::consts::FRAC_1_SQRT_2
        });
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let p = random_point(&mut rng, &m);
            let jv = jacobi_apply_minimal(&m, &nu, &p, Method::Fd, MinimalSteps::default()).unwrap();
            assert!((jv + nu.evaluate(&p) * 4.0).norm() < 1e-5);
        }
    }

    #[test]
    fn clifford_scalar_operator_matches_section_operator() {
        // J(f ν) = (-Δf - 4f) ν for f = cos θ, with Δ = 2(∂²_θ + ∂²_φ): J(f ν) = -2 f ν
        let m = ImmersedSubmanifold::clifford_torus();
        let section = NormalSection::new(|p: &ManifoldPoint| {
            let (a, b) = (p.factors[0].coords(), p.factors[1].coords());
            Vector::from_vec(vec![a[0], a[1], -b[0], -b[1]]) * (std::f64::consts::FRAC_1_SQRT_2 * a[0])
        });
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let p = random_point(&mut rng, &m);
            let jv = jacobi_apply_minimal(&m, &section, &p, Method::Fd, MinimalSteps::default()).unwrap();
            assert!((jv + section.evaluate(&p) * 2.0).norm() < 1e-5);
        }
    }

    #[test]
    fn zero_section_is_annihilated() {
        let m = ImmersedSubmanifold::clifford_torus();
        let z = NormalSection::zero(&m);
        let p = m.point(vec![
            SpherePoint::from_slice(&[1.0, 0.0]).unwrap(),
            SpherePoint::from_slice(&[0.0, 1.0]).unwrap(),
        ]);
        for method in [Method::Analytic, Method::Fd] {
            assert_eq!(
                jacobi_apply_minimal(&m, &z, &p, method, MinimalSteps::default())
                    .unwrap()
                    .norm(),
                0.0
            );
        }
    }

    #[test]
    fn equator_constant_normal_section_exact() {
        let m = ImmersedSubmanifold::equator(2, 4).unwrap();
        let l = LinearFunction::new(Vector::from_vec(vec![0.0, 0.0, 0.0, 0.6, -0.8]));
        let v = v_ell_section(&m, &l);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let p = random_point(&mut rng, &m);
            let jv = jacobi_apply_minimal(&m, &v, &p, Method::Analytic, MinimalSteps::default()).unwrap();
            assert!((jv + v.evaluate(&p) * 2.0).norm() < 1e-14);
        }
    }

    #[test]
    fn analytic_and_fd_v_ell_jets_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let steps = MinimalSteps::default();
        for m in catalog() {
            let l = LinearFunction::new(Vector::from_fn(m.ambient_sphere_dim() + 1, |_, _| {
                rng.gen_range(-1.0..1.0)
            }));
            let v = v_ell_section(&m, &l);
            for _ in 0..5 {
                let p = random_point(&mut rng, &m);
                let x = random_tangent(&mut rng, &m, &p);
                let da = normal_derivative(&m, &v, &p, &x, Method::Analytic, steps).unwrap();
                let df = normal_derivative(&m, &v, &p, &x, Method::Fd, steps).unwrap();
                assert!((da - df).norm() < 1e-8, "{}", m.name());
                let la = normal_laplacian(&m, &v, &p, Method::Analytic, steps).unwrap();
                let lf = normal_laplacian(&m, &v, &p, Method::Fd, steps).unwrap();
                assert!((la - lf).norm() < 1e-5, "{}", m.name());
            }
        }
    }

    #[test]
    fn analytic_path_requires_jets() {
        let m = ImmersedSubmanifold::clifford_torus();
        let s = NormalSection::projected(&m, |x| x.clone());
        let p = m.point(vec![
            SpherePoint::from_slice(&[1.0, 0.0]).unwrap(),
            SpherePoint::from_slice(&[1.0, 0.0]).unwrap(),
        ]);
        assert!(matches!(
            jacobi_apply_minimal(&m, &s, &p, Method::Analytic, MinimalSteps::default()),
            Err(JacobiError::Capability(_))
        ));
    }

    #[test]
    fn grid_areas() {
        let eq = ImmersedSubmanifold::equator(2, 3).unwrap();
        assert!((eq.grid(2).unwrap().total_weight() - 4.0 * std::f64::consts::PI).abs() < 1e-10);
        let cl = ImmersedSubmanifold::clifford_torus();
        let pi = std::f64::consts::PI;
        assert!((cl.grid(2).unwrap().total_weight() - 2.0 * pi * pi).abs() < 1e-10);
    }

    #[test]
    fn invalid_entries_rejected() {
        assert!(ImmersedSubmanifold::small_circle(1.5).is_err());
        assert!(ImmersedSubmanifold::equator(3, 3).is_err());
    }
}
