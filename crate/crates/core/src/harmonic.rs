//! Harmonic maps from round spheres: the pullback bundle, tension field,
//! Jacobi operator `J_u V = ∇*∇V - Σ R^N(V, du e_i) du e_i` and the sections
//! `X_ℓ = du(∇ℓ)` built from linear functions.

use std::sync::Arc;

use crate::error::{JacobiError, Result};
use crate::forms::{
    codifferential, generator_transport_back, rough_laplacian, tight_frame, Bundle, BundleValuedForm, Connection,
    FdSteps,
};
use crate::linalg::{gram_rank, weighted_gram, GramRank, Matrix, Vector};
use crate::sphere::{
    geodesic, geodesic_rotation, grad_linear, tangent_frame, LinearFunction, QuadratureGrid, SpherePoint, TangentFrame,
};
use crate::tolerance::Method;

/// A Riemannian target isometrically embedded in some `R^K`.
pub trait EmbeddedTarget: Send + Sync {
    fn name(&self) -> &str;
    fn ambient_dim(&self) -> usize;
    fn dim(&self) -> usize;
    /// Orthogonal projector onto `T_y N`.
    fn tangent_projector(&self, y: &Vector) -> Matrix;
    /// Derivative of the projector at `y` in the tangent direction `w`.
    fn projector_derivative(&self, y: &Vector, w: &Vector) -> Matrix;
    /// Curvature `R_{a,b} c` at `y`.
    fn curvature(&self, y: &Vector, a: &Vector, b: &Vector, c: &Vector) -> Vector;
}

/// Target manifold of a map.
#[derive(Clone)]
pub enum Target {
    /// Unit sphere `S^n ⊂ R^{n+1}`.
    Sphere {
        n: usize,
    },
    Embedded(Arc<dyn EmbeddedTarget>),
}

impl std::fmt::Debug for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Target::Sphere { n } => write!(f, "S^{n}"),
            Target::Embedded(t) => write!(f, "{}", t.name()),
        }
    }
}

impl Target {
    pub fn ambient_dim(&self) -> usize {
        match self {
            Target::Sphere { n } => n + 1,
            Target::Embedded(t) => t.ambient_dim(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Target::Sphere { n } => *n,
            Target::Embedded(t) => t.dim(),
        }
    }

    pub fn tangent_projector(&self, y: &Vector) -> Matrix {
        match self {
            Target::Sphere { n } => Matrix::identity(n + 1, n + 1) - y * y.transpose(),
            Target::Embedded(t) => t.tangent_projector(y),
        }
    }

    /// `R_{a,b} c` with the convention `<R_{a,b} b, a> > 0` on the round sphere.
    pub fn curvature(&self, y: &Vector, a: &Vector, b: &Vector, c: &Vector) -> Vector {
        match self {
            Target::Sphere { .. } => a * b.dot(c) - b * a.dot(c),
            Target::Embedded(t) => t.curvature(y, a, b, c),
        }
    }

    /// Curvature `R_{a,b}` as a matrix acting on `R^K` (composed with the tangent projector).
    pub fn curvature_matrix(&self, y: &Vector, a: &Vector, b: &Vector) -> Matrix {
        match self {
            Target::Sphere { .. } => a * b.transpose() - b * a.transpose(),
            Target::Embedded(t) => {
                let k = t.ambient_dim();
                let p = t.tangent_projector(y);
                let mut out = Matrix::zeros(k, k);
                for col in 0..k {
                    let c = p.column(col).into_owned();
                    out.set_column(col, &t.curvature(y, a, b, &c));
                }
                out
            }
        }
    }
}

pub type PointMap = Arc<dyn Fn(&SpherePoint) -> Vector + Send + Sync>;
pub type JacobianMap = Arc<dyn Fn(&SpherePoint) -> Matrix + Send + Sync>;
/// `(x, X, Y) -> (∇_X du)(Y)`.
pub type SecondDerivative = Arc<dyn Fn(&SpherePoint, &Vector, &Vector) -> Vector + Send + Sync>;
/// `(x, Y) -> (Δ du)(Y)`.
pub type DifferentialLaplacian = Arc<dyn Fn(&SpherePoint, &Vector) -> Vector + Send + Sync>;

/// A smooth map `u: S^m -> N` with closed-form value and differential.
///
/// `jacobian(x)` is the Jacobian of an ambient extension; applied to tangent
/// vectors it gives `du`.
#[derive(Clone)]
pub struct SphereMap {
    name: String,
    m: usize,
    target: Target,
    value: PointMap,
    jacobian: JacobianMap,
    second: Option<SecondDerivative>,
    laplacian: Option<DifferentialLaplacian>,
    great_circles_to_great_circles: bool,
    is_constant: bool,
    claims_harmonic: bool,
}

impl std::fmt::Debug for SphereMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SphereMap")
            .field("name", &self.name)
            .field("m", &self.m)
            .field("target", &self.target)
            .field("is_constant", &self.is_constant)
            .field("claims_harmonic", &self.claims_harmonic)
            .finish()
    }
}

impl SphereMap {
    /// A user-supplied map; derivatives beyond `du` are evaluated by finite differences.
    pub fn new<V, J>(name: impl Into<String>, m: usize, target: Target, value: V, jacobian: J) -> Self
    where
        V: Fn(&SpherePoint) -> Vector + Send + Sync + 'static,
        J: Fn(&SpherePoint) -> Matrix + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            m,
            target,
            value: Arc::new(value),
            jacobian: Arc::new(jacobian),
            second: None,
            laplacian: None,
            great_circles_to_great_circles: false,
            is_constant: false,
            claims_harmonic: false,
        }
    }

    pub fn with_flags(mut self, is_constant: bool, claims_harmonic: bool) -> Self {
        self.is_constant = is_constant;
        self.claims_harmonic = claims_harmonic;
        self
    }

    pub fn with_exact_derivatives<S, L>(mut self, second: S, laplacian: L) -> Self
    where
        S: Fn(&SpherePoint, &Vector, &Vector) -> Vector + Send + Sync + 'static,
        L: Fn(&SpherePoint, &Vector) -> Vector + Send + Sync + 'static,
    {
        self.second = Some(Arc::new(second));
        self.laplacian = Some(Arc::new(laplacian));
        self
    }

    /// Identity `S^m -> S^m`.
    pub fn identity(m: usize) -> Self {
        let n = m + 1;
        let mut u = Self::new(
            format!("identity-s{m}"),
            m,
            Target::Sphere { n: m },
            |x| x.coords().clone(),
            move |_| Matrix::identity(n, n),
        )
        .with_flags(false, true);
        u.set_totally_geodesic(n);
        u
    }

    /// Totally geodesic equatorial embedding `S^m -> S^n`, `x -> (x, 0)`.
    pub fn equator(m: usize, n: usize) -> Self {
        assert!(n >= m);
        let mut u = Self::new(
            format!("equator-s{m}-in-s{n}"),
            m,
            Target::Sphere { n },
            move |x| {
                let mut y = Vector::zeros(n + 1);
                y.rows_mut(0, m + 1).copy_from(x.coords());
                y
            },
            move |_| {
                let mut j = Matrix::zeros(n + 1, m + 1);
                j.view_mut((0, 0), (m + 1, m + 1)).fill_with_identity();
                j
            },
        )
        .with_flags(false, true);
        u.set_totally_geodesic(n + 1);
        u
    }

    /// Constant map onto the first coordinate point of `S^n`.
    pub fn constant(m: usize, n: usize) -> Self {
        let mut point = Vector::zeros(n + 1);
        point[0] = 1.0;
        let mut u = Self::new(
            format!("constant-s{m}-s{n}"),
            m,
            Target::Sphere { n },
            move |_| point.clone(),
            move |_| Matrix::zeros(n + 1, m + 1),
        )
        .with_flags(true, true);
        u.set_totally_geodesic(n + 1);
        u
    }

    /// Hopf fibration `S^3 -> S^2`.
    pub fn hopf() -> Self {
        Self::new(
            "hopf",
            3,
            Target::Sphere { n: 2 },
            |p| {
                let x = p.coords();
                Vector::from_vec(vec![
                    x[0] * x[0] + x[1] * x[1] - x[2] * x[2] - x[3] * x[3],
                    2.0 * (x[0] * x[2] + x[1] * x[3]),
                    2.0 * (x[1] * x[2] - x[0] * x[3]),
                ])
            },
            |p| {
                let x = p.coords();
                Matrix::from_row_slice(
                    3,
                    4,
                    &[
                        2.0 * x[0],
                        2.0 * x[1],
                        -2.0 * x[2],
                        -2.0 * x[3],
                        2.0 * x[2],
                        2.0 * x[3],
                        2.0 * x[0],
                        2.0 * x[1],
                        -2.0 * x[3],
                        2.0 * x[2],
                        2.0 * x[1],
                        -2.0 * x[0],
                    ],
                )
            },
        )
        .with_flags(false, true)
    }

    /// Linear isometric maps: `∇du = 0`, `Δdu = 0`, and great circles go to great circles.
    fn set_totally_geodesic(&mut self, k: usize) {
        self.second = Some(Arc::new(move |_, _, _| Vector::zeros(k)));
        self.laplacian = Some(Arc::new(move |_, _| Vector::zeros(k)));
        self.great_circles_to_great_circles = true;
    }

    /// `x -> u(ρ x)` for an orthogonal `ρ`.
    pub fn precompose(&self, rotation: &Matrix) -> SphereMap {
        let rot = rotation.clone();
        let (v, j) = (self.value.clone(), self.jacobian.clone());
        let (r1, r2) = (rot.clone(), rot.clone());
        let mut out = self.clone();
        out.name = format!("{}-rotated", self.name);
        out.value = Arc::new(move |x| v(&x.rotated(&r1)));
        out.jacobian = Arc::new(move |x| j(&x.rotated(&r2)) * &r2);
        if let Some(s) = self.second.clone() {
            let r = rot.clone();
            out.second = Some(Arc::new(move |x, a, b| s(&x.rotated(&r), &(&r * a), &(&r * b))));
        }
        if let Some(l) = self.laplacian.clone() {
            let r = rot.clone();
            out.laplacian = Some(Arc::new(move |x, a| l(&x.rotated(&r), &(&r * a))));
        }
        out
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn domain_dim(&self) -> usize {
        self.m
    }
    pub fn target(&self) -> &Target {
        &self.target
    }
    pub fn is_constant(&self) -> bool {
        self.is_constant
    }
    pub fn claims_harmonic(&self) -> bool {
        self.claims_harmonic
    }
    pub fn has_exact_derivatives(&self) -> bool {
        self.second.is_some() && self.laplacian.is_some()
    }

    pub fn value(&self, x: &SpherePoint) -> Vector {
        (self.value)(x)
    }

    pub fn jacobian(&self, x: &SpherePoint) -> Matrix {
        (self.jacobian)(x)
    }

    /// `du_x(X)`.
    pub fn differential(&self, x: &SpherePoint, v: &Vector) -> Vector {
        (self.jacobian)(x) * v
    }

    /// Largest `|u(x)| - 1` and `<du(X), u(x)>` defects over a frame, for sphere targets.
    pub fn sphere_target_defects(&self, x: &SpherePoint) -> (f64, f64) {
        let y = self.value(x);
        let frame = tangent_frame(x);
        let tangency = frame
            .vectors
            .iter()
            .map(|e| self.differential(x, e).dot(&y).abs())
            .fold(0.0, f64::max);
        ((y.norm() - 1.0).abs(), tangency)
    }
}

/// The pullback connection on `u^{-1} TN`, realised inside the target's ambient space.
pub struct PullbackConnection {
    name: String,
    map: SphereMap,
}

impl PullbackConnection {
    pub fn new(map: SphereMap) -> Self {
        Self {
            name: format!("pullback-{}", map.name),
            map,
        }
    }
}

impl Connection for PullbackConnection {
    fn name(&self) -> &str {
        &self.name
    }
    fn base_dim(&self) -> usize {
        self.map.m
    }
    fn ambient_rank(&self) -> usize {
        self.map.target.ambient_dim()
    }
    fn fiber_rank(&self) -> usize {
        self.map.target.dim()
    }
    fn fiber_projector(&self, x: &SpherePoint) -> Matrix {
        self.map.target.tangent_projector(&self.map.value(x))
    }
    fn transport_back(&self, x: &SpherePoint, dir: &Vector, t: f64) -> Matrix {
        if self.map.great_circles_to_great_circles {
            if let Target::Sphere { .. } = self.map.target {
                let y = self.map.value(x);
                let w = self.map.differential(x, dir);
                let end = self.map.value(&geodesic(x, dir, t));
                let p_end = self.map.target.tangent_projector(&end);
                if w.norm() == 0.0 {
                    return p_end;
                }
                let base = SpherePoint::new(y).expect("sphere-valued map");
                return geodesic_rotation(&base, &w, t).transpose() * p_end;
            }
        }
        generator_transport_back(self, x, dir, t)
    }
    fn curvature(&self, x: &SpherePoint, a: &Vector, b: &Vector) -> Matrix {
        let y = self.map.value(x);
        let (ua, ub) = (self.map.differential(x, a), self.map.differential(x, b));
        self.map.target.curvature_matrix(&y, &ua, &ub)
    }
    fn transport_generator(&self, x: &SpherePoint, v: &Vector) -> Matrix {
        let y = self.map.value(x);
        let w = self.map.differential(x, v);
        match &self.map.target {
            Target::Sphere { .. } => -(&y * w.transpose()),
            Target::Embedded(t) => t.projector_derivative(&y, &w),
        }
    }
    fn is_flat(&self) -> bool {
        self.map.is_constant
    }
}

/// The bundle `u^{-1} TN` with its pullback connection.
pub fn pullback_bundle(u: &SphereMap) -> Bundle {
    Bundle::vector(Arc::new(PullbackConnection::new(u.clone())))
}

/// A section of the pullback bundle (a degree-0 form).
pub type PullbackSection = BundleValuedForm;

/// `du` as a `u^{-1}TN`-valued 1-form, carrying `∇du` and `Δdu` when the map provides them.
pub fn differential_form(u: &SphereMap) -> BundleValuedForm {
    let map = u.clone();
    let mut form = BundleValuedForm::new(1, pullback_bundle(u), move |x, args| map.differential(x, &args[0]));
    if let (Some(s), Some(l)) = (u.second.clone(), u.laplacian.clone()) {
        form = form
            .with_exact_derivative(move |x, dir, args| s(x, dir, &args[0]))
            .with_exact_laplacian(move |x, args| l(x, &args[0]));
    }
    form
}

/// `X_ℓ = du(∇ℓ)`.
pub fn x_ell_field(u: &SphereMap, l: &LinearFunction) -> PullbackSection {
    let (map, ell) = (u.clone(), l.clone());
    let mut field = BundleValuedForm::new(0, pullback_bundle(u), move |x, _| {
        map.differential(x, &grad_linear(&ell, x))
    });
    if let (Some(s), Some(lap)) = (u.second.clone(), u.laplacian.clone()) {
        let (map_d, ell_d, s_d) = (u.clone(), l.clone(), s.clone());
        let (map_l, ell_l) = (u.clone(), l.clone());
        // ∇_Y X_ℓ = (∇_Y du)(∇ℓ) - ℓ du(Y)
        // ΔX_ℓ = (Δdu)(∇ℓ) - 2ℓ Σ_j (∇_{e_j} du)(e_j) - du(∇ℓ)
        field = field
            .with_exact_derivative(move |x, dir, _| {
                let g = grad_linear(&ell_d, x);
                s_d(x, dir, &g) - map_d.differential(x, dir) * ell_d.value(x)
            })
            .with_exact_laplacian(move |x, _| {
                let g = grad_linear(&ell_l, x);
                let mut trace = Vector::zeros(map_l.target.ambient_dim());
                for e in tight_frame(x) {
                    trace += s(x, &e, &e);
                }
                lap(x, &g) - trace * (2.0 * ell_l.value(x)) - map_l.differential(x, &g)
            });
    }
    field
}

/// Tension field `τ(u) = -d_D* du` at `x`.
pub fn tension_field(
    u: &SphereMap,
    x: &SpherePoint,
    frame: &TangentFrame,
    method: Method,
    steps: FdSteps,
) -> Result<Vector> {
    Ok(-codifferential(&differential_form(u), x, frame, &[], method, steps)?)
}

/// Sup-norm of the tension field over the grid.
pub fn tension_sup(u: &SphereMap, grid: &QuadratureGrid, method: Method, steps: FdSteps) -> Result<f64> {
    let du = differential_form(u);
    let values = grid.map(|x| codifferential(&du, x, &tangent_frame(x), &[], method, steps).map(|v| v.norm()));
    values.into_iter().try_fold(0.0, |acc, v| v.map(|v| f64::max(acc, v)))
}

/// `J_u V = ∇*∇V - Σ_i R^N(V, du e_i) du e_i` at `x`.
pub fn jacobi_apply(
    u: &SphereMap,
    v: &PullbackSection,
    x: &SpherePoint,
    frame: &TangentFrame,
    method: Method,
    steps: FdSteps,
) -> Result<Vector> {
    let lap = rough_laplacian(v, x, frame, &[], method, steps)?;
    let y = u.value(x);
    let val = v.evaluate(x, &[]);
    let mut out = -lap;
    for e in &frame.vectors {
        let w = u.differential(x, e);
        out -= u.target.curvature(&y, &val, &w, &w);
    }
    Ok(out)
}

/// Relative L² residual of an eigen-equation together with the norms involved.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EigenResidual {
    pub residual: f64,
    pub eigenvalue: f64,
    /// L² norm of the candidate section.
    pub section_norm: f64,
}

/// Sections below this L² norm are treated as identically zero.
pub const ZERO_SECTION_NORM: f64 = 1e-12;

/// `‖J_u X_ℓ + (m-2) X_ℓ‖ / ‖X_ℓ‖` in `L²` over the grid.
pub fn eigen_residual_harmonic(
    u: &SphereMap,
    l: &LinearFunction,
    grid: &QuadratureGrid,
    method: Method,
    steps: FdSteps,
) -> Result<EigenResidual> {
    let eigenvalue = -(u.m as f64 - 2.0);
    let field = x_ell_field(u, l);
    let samples = grid.map(|x| -> Result<(f64, f64)> {
        let frame = tangent_frame(x);
        let v = field.evaluate(x, &[]);
        let jv = jacobi_apply(u, &field, x, &frame, method, steps)?;
        Ok(((jv - &v * eigenvalue).norm_squared(), v.norm_squared()))
    });
    let (mut num, mut den) = (0.0, 0.0);
    for (node, s) in grid.nodes.iter().zip(samples) {
        let (r, v) = s?;
        num += node.weight * r;
        den += node.weight * v;
    }
    let section_norm = den.sqrt();
    if section_norm <= ZERO_SECTION_NORM {
        return Err(JacobiError::DegenerateInput(format!(
            "X_ℓ vanishes on the grid for {} (a constant map has no such eigensections)",
            u.name
        )));
    }
    Ok(EigenResidual {
        residual: num.sqrt() / section_norm,
        eigenvalue,
        section_norm,
    })
}

/// Gram rank of `{X_ℓ}` over the coordinate basis of linear functions.
pub fn multiplicity_bound_harmonic(u: &SphereMap, grid: &QuadratureGrid, epsilon: f64) -> GramRank {
    let basis = LinearFunction::coordinate_basis(u.m + 1);
    let fields: Vec<PullbackSection> = basis.iter().map(|l| x_ell_field(u, l)).collect();
    let samples = grid.map(|x| fields.iter().map(|f| f.evaluate(x, &[])).collect::<Vec<_>>());
    let weights: Vec<f64> = grid.nodes.iter().map(|n| n.weight).collect();
    gram_rank(&weighted_gram(&weights, &samples), epsilon)
}

/// Sup over the grid of `|X_ℓ|`.
pub fn x_ell_sup(u: &SphereMap, l: &LinearFunction, grid: &QuadratureGrid) -> f64 {
    let field = x_ell_field(u, l);
    grid.map(|x| field.evaluate(x, &[]).norm())
        .into_iter()
        .fold(0.0, f64::max)
}

/// Sup over the grid of the Frobenius norm of `du` restricted to tangent vectors.
pub fn differential_scale(u: &SphereMap, grid: &QuadratureGrid) -> f64 {
    grid.map(|x| (u.jacobian(x) * x.tangent_projector()).norm())
        .into_iter()
        .fold(0.0, f64::max)
}

/// Relative L² residual of `Δ(du) + Σ_α R^N(du ·, du e_α) du e_α - du(Ric ·)` for harmonic maps.
pub fn differential_laplacian_residual(
    u: &SphereMap,
    grid: &QuadratureGrid,
    method: Method,
    steps: FdSteps,
) -> Result<f64> {
    let du = differential_form(u);
    let ricci = u.m as f64 - 1.0;
    let samples = grid.map(|x| -> Result<(f64, f64)> {
        let frame = tangent_frame(x);
        let y = u.value(x);
        let (mut num, mut den) = (0.0, 0.0);
        for e in &frame.vectors {
            let lap = rough_laplacian(&du, x, &frame, std::slice::from_ref(e), method, steps)?;
            let ue = u.differential(x, e);
            let mut r = lap - &ue * ricci;
            for f in &frame.vectors {
                let uf = u.differential(x, f);
                r += u.target.curvature(&y, &ue, &uf, &uf);
            }
            num += r.norm_squared();
            den += ue.norm_squared();
        }
        Ok((num, den))
    });
    let (mut num, mut den) = (0.0, 0.0);
    for (node, s) in grid.nodes.iter().zip(samples) {
        let (a, b) = s?;
        num += node.weight * a;
        den += node.weight * b;
    }
    Ok(num.sqrt() / den.sqrt().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{covariant_derivative, exterior_d};
    use crate::sphere::quadrature_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng, m: usize) -> SpherePoint {
        SpherePoint::new(Vector::from_fn(m + 1, |_, _| rng.gen_range(-1.0..1.0))).unwrap()
    }

    fn random_rotation(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        a.qr().q()
    }

    /// The unit sphere presented through the embedded-target interface.
    struct EmbeddedSphere {
        n: usize,
    }

    impl EmbeddedTarget for EmbeddedSphere {
        fn name(&self) -> &str {
            "embedded-sphere"
        }
        fn ambient_dim(&self) -> usize {
            self.n + 1
        }
        fn dim(&self) -> usize {
            self.n
        }
        fn tangent_projector(&self, y: &Vector) -> Matrix {
            Matrix::identity(self.n + 1, self.n + 1) - y * y.transpose()
        }
        fn projector_derivative(&self, y: &Vector, w: &Vector) -> Matrix {
            -(w * y.transpose() + y * w.transpose())
        }
        fn curvature(&self, _y: &Vector, a: &Vector, b: &Vector, c: &Vector) -> Vector {
            a * b.dot(c) - b * a.dot(c)
        }
    }

    #[test]
    fn catalog_maps_are_sphere_valued_and_tangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for u in [
            SphereMap::identity(3),
            SphereMap::hopf(),
            SphereMap::equator(2, 4),
            SphereMap::constant(3, 2),
        ] {
            for _ in 0..50 {
                let x = random_point(&mut rng, u.domain_dim());
                let (norm, tangency) = u.sphere_target_defects(&x);
                assert!(norm < 1e-12, "{}", u.name());
                assert!(tangency < 1e-8, "{}", u.name());
            }
        }
    }

    #[test]
    fn hopf_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = SphereMap::hopf();
        for _ in 0..20 {
            let x = random_point(&mut rng, 3);
            let v = x.project_tangent(&Vector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)));
            let h = 1e-5;
            let fd = (u.value(&geodesic(&x, &v, h)) - u.value(&geodesic(&x, &v, -h))) / (2.0 * h);
            assert!((fd - u.differential(&x, &v)).norm() < 1e-8);
        }
    }

    #[test]
    fn identity_x_ell_is_gradient_and_constant_x_ell_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = LinearFunction::new(Vector::from_vec(vec![0.3, -0.1, 0.8, 0.5]));
        let id = x_ell_field(&SphereMap::identity(3), &l);
        let c = x_ell_field(&SphereMap::constant(3, 2), &l);
        for _ in 0..20 {
            let x = random_point(&mut rng, 3);
            assert!((id.evaluate(&x, &[]) - grad_linear(&l, &x)).norm() < 1e-15);
            assert_eq!(c.evaluate(&x, &[]).norm(), 0.0);
        }
    }

    #[test]
    fn x_ell_is_linear_in_ell() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = SphereMap::hopf();
        let l1 = LinearFunction::new(Vector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)));
        let l2 = LinearFunction::new(Vector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)));
        let (a, b) = (0.7, -1.3);
        let combined = x_ell_field(&u, &l1.combine(a, &l2, b));
        let (f1, f2) = (x_ell_field(&u, &l1), x_ell_field(&u, &l2));
        for _ in 0..20 {
            let x = random_point(&mut rng, 3);
            let lhs = combined.evaluate(&x, &[]);
            let rhs = f1.evaluate(&x, &[]) * a + f2.evaluate(&x, &[]) * b;
            assert!((lhs - rhs).norm() < 1e-14);
        }
    }

    #[test]
    fn identity_eigenfield_pointwise() {
        // J X_ℓ = -X_ℓ on S³ at sample points, both paths
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = SphereMap::identity(3);
        let l = LinearFunction::coordinate(4, 2);
        let field = x_ell_field(&u, &l);
        for _ in 0..10 {
            let x = random_point(&mut rng, 3);
            let frame = tangent_frame(&x);
            for (method, tol) in [(Method::Analytic, 1e-12), (Method::Fd, 1e-5)] {
                let jv = jacobi_apply(&u, &field, &x, &frame, method, FdSteps::default()).unwrap();
                assert!((jv + field.evaluate(&x, &[])).norm() < tol);
            }
        }
    }

    #[test]
    fn constant_map_parallel_section_is_annihilated() {
        let u = SphereMap::constant(3, 2);
        let v = BundleValuedForm::new(0, pullback_bundle(&u), |_, _| Vector::from_vec(vec![0.0, 0.6, -0.8]));
        let x = SpherePoint::from_slice(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let jv = jacobi_apply(&u, &v, &x, &tangent_frame(&x), Method::Fd, FdSteps::default()).unwrap();
        assert!(jv.norm() < 1e-9);
        let t = tension_field(&u, &x, &tangent_frame(&x), Method::Analytic, FdSteps::default()).unwrap();
        assert_eq!(t.norm(), 0.0);
    }

    #[test]
    fn identity_differential_is_closed_and_harmonic() {
        let u = SphereMap::identity(3);
        let ddu = exterior_d(&differential_form(&u), Method::Fd, FdSteps::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let x = random_point(&mut rng, 3);
            let f = tangent_frame(&x);
            assert!(ddu.evaluate(&x, &[f.vectors[0].clone(), f.vectors[1].clone()]).norm() < 1e-7);
            assert!(
                tension_field(&u, &x, &f, Method::Fd, FdSteps::default())
                    .unwrap()
                    .norm()
                    < 1e-7
            );
        }
    }

    #[test]
    fn great_circle_pullback_transport_matches_rk4() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = SphereMap::identity(3);
        let conn = PullbackConnection::new(u);
        let x = random_point(&mut rng, 3);
        let dir = x.project_tangent(&Vector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)));
        let exact = conn.transport_back(&x, &dir, 0.2);
        let integrated = generator_transport_back(&conn, &x, &dir, 0.2);
        assert!((exact - integrated).amax() < 1e-10);
    }

    #[test]
    fn embedded_target_interface_reproduces_sphere_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let hopf = SphereMap::hopf();
        let embedded = SphereMap::new(
            "hopf-embedded",
            3,
            Target::Embedded(Arc::new(EmbeddedSphere { n: 2 })),
            {
                let h = hopf.clone();
                move |x| h.value(x)
            },
            {
                let h = hopf.clone();
                move |x| h.jacobian(x)
            },
        );
        let l = LinearFunction::coordinate(4, 0);
        let (a, b) = (x_ell_field(&hopf, &l), x_ell_field(&embedded, &l));
        for _ in 0..5 {
            let x = random_point(&mut rng, 3);
            let frame = tangent_frame(&x);
            let ja = jacobi_apply(&hopf, &a, &x, &frame, Method::Fd, FdSteps::default()).unwrap();
            let jb = jacobi_apply(&embedded, &b, &x, &frame, Method::Fd, FdSteps::default()).unwrap();
            assert!((ja - jb).norm() < 1e-6);
        }
    }

    #[test]
    fn analytic_path_needs_exact_jets() {
        let u = SphereMap::hopf();
        let x = SpherePoint::from_slice(&[0.5, 0.5, 0.5, 0.5]).unwrap();
        let field = x_ell_field(&u, &LinearFunction::coordinate(4, 0));
        assert!(matches!(
            jacobi_apply(&u, &field, &x, &tangent_frame(&x), Method::Analytic, FdSteps::default()),
            Err(JacobiError::Capability(_))
        ));
    }

    #[test]
    fn fd_and_analytic_x_ell_derivatives_agree_under_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = SphereMap::equator(3, 4).precompose(&random_rotation(&mut rng, 4));
        let l = LinearFunction::new(Vector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)));
        let field = x_ell_field(&u, &l);
        for _ in 0..10 {
            let x = random_point(&mut rng, 3);
            let dir = x.project_tangent(&Vector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)));
            let a = covariant_derivative(&field, &x, &dir, &[], Method::Analytic, FdSteps::default()).unwrap();
            let f = covariant_derivative(&field, &x, &dir, &[], Method::Fd, FdSteps::default()).unwrap();
            assert!((a - f).norm() < 1e-7);
        }
    }

    #[test]
    fn identity_gram_rank_and_constant_rank() {
        let grid = quadrature_grid(3, 1).unwrap();
        assert_eq!(
            multiplicity_bound_harmonic(&SphereMap::identity(3), &grid, 1e-6).rank,
            4
        );
        assert_eq!(
            multiplicity_bound_harmonic(&SphereMap::constant(3, 2), &grid, 1e-6).rank,
            0
        );
    }

    #[test]
    fn constant_map_eigen_residual_is_degenerate() {
        let grid = quadrature_grid(3, 1).unwrap();
        let r = eigen_residual_harmonic(
            &SphereMap::constant(3, 2),
            &LinearFunction::coordinate(4, 0),
            &grid,
            Method::Fd,
            FdSteps::default(),
        );
        assert!(matches!(r, Err(JacobiError::DegenerateInput(_))));
    }
}
