//! Covariant calculus for bundle-valued forms over the round sphere.
//!
//! Fibers are realised extrinsically: a rank-`k` bundle sits inside a trivial
//! `R^N`, and fiber values of endomorphism bundles are `N x N` matrices stored
//! column-major. Finite-difference covariant derivatives move the base point
//! along great circles, carry the tangent arguments by Levi-Civita transport
//! (an exact rotation) and pull fiber values back with the connection's own
//! transport map, then central-difference at `x`.

use std::sync::Arc;

use rand::Rng;

use crate::error::{JacobiError, Result};
use crate::linalg::{commutator, flatten, unflatten, Matrix, Vector};
use crate::sphere::{geodesic, geodesic_rotation, SpherePoint, TangentFrame};
use crate::tolerance::{Method, ToleranceProfile};

/// A metric connection on a vector bundle over `S^m`, realised inside `R^N`.
pub trait Connection: Send + Sync {
    fn name(&self) -> &str;
    /// Dimension `m` of the base sphere.
    fn base_dim(&self) -> usize;
    /// Size `N` of the ambient space holding the fibers.
    fn ambient_rank(&self) -> usize;
    /// Fiber rank `k <= N`.
    fn fiber_rank(&self) -> usize;
    /// Orthogonal projector of `R^N` onto the fiber over `x`.
    fn fiber_projector(&self, x: &SpherePoint) -> Matrix;
    /// Parallel transport from the fiber over `geodesic(x, dir, t)` back to the fiber over `x`.
    fn transport_back(&self, x: &SpherePoint, dir: &Vector, t: f64) -> Matrix;
    /// Curvature `R_{a,b} = D_a D_b - D_b D_a - D_[a,b]` as an antisymmetric `N x N` matrix.
    fn curvature(&self, x: &SpherePoint, a: &Vector, b: &Vector) -> Matrix;
    /// Matrix `K` such that parallel sections along a curve through `x` with velocity `v` obey `σ' = K σ`.
    fn transport_generator(&self, x: &SpherePoint, v: &Vector) -> Matrix;
    fn is_flat(&self) -> bool;
}

/// Trivial bundle `S^m x R^k` with the flat product connection.
#[derive(Debug, Clone)]
pub struct TrivialConnection {
    name: String,
    m: usize,
    rank: usize,
}

impl TrivialConnection {
    pub fn new(m: usize, rank: usize) -> Self {
        Self {
            name: format!("flat-r{rank}-s{m}"),
            m,
            rank,
        }
    }
}

impl Connection for TrivialConnection {
    fn name(&self) -> &str {
        &self.name
    }
    fn base_dim(&self) -> usize {
        self.m
    }
    fn ambient_rank(&self) -> usize {
        self.rank
    }
    fn fiber_rank(&self) -> usize {
        self.rank
    }
    fn fiber_projector(&self, _x: &SpherePoint) -> Matrix {
        Matrix::identity(self.rank, self.rank)
    }
    fn transport_back(&self, _x: &SpherePoint, _dir: &Vector, _t: f64) -> Matrix {
        Matrix::identity(self.rank, self.rank)
    }
    fn curvature(&self, _x: &SpherePoint, _a: &Vector, _b: &Vector) -> Matrix {
        Matrix::zeros(self.rank, self.rank)
    }
    fn transport_generator(&self, _x: &SpherePoint, _v: &Vector) -> Matrix {
        Matrix::zeros(self.rank, self.rank)
    }
    fn is_flat(&self) -> bool {
        true
    }
}

/// Levi-Civita connection of the round `S^m` on `TS^m ⊂ R^{m+1}`.
#[derive(Debug, Clone)]
pub struct LeviCivitaConnection {
    name: String,
    m: usize,
}

impl LeviCivitaConnection {
    pub fn new(m: usize) -> Self {
        Self {
            name: format!("levicivita-ts{m}"),
            m,
        }
    }
}

/// Constant-curvature tensor `R_{a,b} c = <b,c> a - <a,c> b`.
pub fn sphere_curvature(a: &Vector, b: &Vector) -> Matrix {
    a * b.transpose() - b * a.transpose()
}

impl Connection for LeviCivitaConnection {
    fn name(&self) -> &str {
        &self.name
    }
    fn base_dim(&self) -> usize {
        self.m
    }
    fn ambient_rank(&self) -> usize {
        self.m + 1
    }
    fn fiber_rank(&self) -> usize {
        self.m
    }
    fn fiber_projector(&self, x: &SpherePoint) -> Matrix {
        x.tangent_projector()
    }
    fn transport_back(&self, x: &SpherePoint, dir: &Vector, t: f64) -> Matrix {
        let y = geodesic(x, dir, t);
        geodesic_rotation(x, dir, t).transpose() * y.tangent_projector()
    }
    fn curvature(&self, _x: &SpherePoint, a: &Vector, b: &Vector) -> Matrix {
        sphere_curvature(a, b)
    }
    fn transport_generator(&self, x: &SpherePoint, v: &Vector) -> Matrix {
        -(x.coords() * v.transpose())
    }
    fn is_flat(&self) -> bool {
        false
    }
}

/// Integrates `Phi' = K(s) Phi` from `s = t` (where `Phi = I`) down to `s = 0`
/// with classical RK4. For a transport generator `K` this returns the parallel
/// transport from the fiber at parameter `t` back to the fiber at `0`.
pub fn rk4_transport_back<K>(generator: K, t: f64, steps: usize, n: usize) -> Matrix
where
    K: Fn(f64) -> Matrix,
{
    let mut phi = Matrix::identity(n, n);
    if t == 0.0 {
        return phi;
    }
    let steps = steps.max(1);
    let dt = -t / steps as f64;
    let mut s = t;
    for _ in 0..steps {
        let k1 = generator(s) * &phi;
        let k2 = generator(s + 0.5 * dt) * (&phi + &k1 * (0.5 * dt));
        let k3 = generator(s + 0.5 * dt) * (&phi + &k2 * (0.5 * dt));
        let k4 = generator(s + dt) * (&phi + &k3 * dt);
        phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        s += dt;
    }
    phi
}

/// Transport back along `geodesic(x, dir, ·)` by RK4 integration of the
/// connection's transport generator, with step at most `1e-3` and at least ten steps.
pub fn generator_transport_back(conn: &dyn Connection, x: &SpherePoint, dir: &Vector, t: f64) -> Matrix {
    let n = conn.ambient_rank();
    let length = (t * dir.norm()).abs();
    if length == 0.0 {
        return conn.fiber_projector(x);
    }
    let steps = ((length / 1e-3).ceil() as usize).max(10);
    let generator = |s: f64| {
        let c = geodesic(x, dir, s);
        let vel = geodesic_rotation(x, dir, s) * dir;
        conn.transport_generator(&c, &vel)
    };
    rk4_transport_back(generator, t, steps, n) * conn.fiber_projector(&geodesic(x, dir, t))
}

/// Whether fiber values are sections of `E` itself or of its endomorphism bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FiberKind {
    Vector,
    Endomorphism,
}

/// A bundle over `S^m` in which forms take values: `E` or `End(E)` for a connection on `E`.
#[derive(Clone)]
pub struct Bundle {
    connection: Arc<dyn Connection>,
    kind: FiberKind,
}

impl std::fmt::Debug for Bundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bundle")
            .field("connection", &self.connection.name())
            .field("kind", &self.kind)
            .finish()
    }
}

impl Bundle {
    pub fn vector(connection: Arc<dyn Connection>) -> Self {
        Self {
            connection,
            kind: FiberKind::Vector,
        }
    }

    /// The endomorphism bundle, carrying the induced connection `[D, ·]`.
    pub fn endomorphisms(connection: Arc<dyn Connection>) -> Self {
        Self {
            connection,
            kind: FiberKind::Endomorphism,
        }
    }

    pub fn connection(&self) -> &Arc<dyn Connection> {
        &self.connection
    }

    pub fn kind(&self) -> FiberKind {
        self.kind
    }

    pub fn base_dim(&self) -> usize {
        self.connection.base_dim()
    }

    /// Length of a flattened fiber value.
    pub fn value_len(&self) -> usize {
        let n = self.connection.ambient_rank();
        match self.kind {
            FiberKind::Vector => n,
            FiberKind::Endomorphism => n * n,
        }
    }

    pub fn zero_value(&self) -> Vector {
        Vector::zeros(self.value_len())
    }

    /// Applies a transport matrix of the underlying bundle to a fiber value.
    pub fn apply_transport(&self, transport: &Matrix, value: &Vector) -> Vector {
        match self.kind {
            FiberKind::Vector => transport * value,
            FiberKind::Endomorphism => {
                let n = self.connection.ambient_rank();
                let a = unflatten(value, n);
                flatten(&(transport * a * transport.transpose()))
            }
        }
    }

    /// Curvature acting on a fiber value (as a derivation on endomorphisms).
    pub fn curvature_action(&self, x: &SpherePoint, a: &Vector, b: &Vector, value: &Vector) -> Vector {
        let r = self.connection.curvature(x, a, b);
        self.apply_endomorphism(&r, value)
    }

    /// Action of an antisymmetric endomorphism of `E` on a fiber value.
    pub fn apply_endomorphism(&self, r: &Matrix, value: &Vector) -> Vector {
        match self.kind {
            FiberKind::Vector => r * value,
            FiberKind::Endomorphism => {
                let n = self.connection.ambient_rank();
                flatten(&commutator(r, &unflatten(value, n)))
            }
        }
    }

    /// Projects an ambient value onto the fiber over `x`.
    pub fn project(&self, x: &SpherePoint, value: &Vector) -> Vector {
        let p = self.connection.fiber_projector(x);
        match self.kind {
            FiberKind::Vector => p * value,
            FiberKind::Endomorphism => {
                let n = self.connection.ambient_rank();
                flatten(&(&p * unflatten(value, n) * &p))
            }
        }
    }
}

pub type FormFn = Arc<dyn Fn(&SpherePoint, &[Vector]) -> Vector + Send + Sync>;
/// `(x, direction, args) -> (D_direction ω)(args)`.
pub type DerivFn = Arc<dyn Fn(&SpherePoint, &Vector, &[Vector]) -> Vector + Send + Sync>;

/// A `p`-form with values in a [`Bundle`], given by an evaluator closure.
#[derive(Clone)]
pub struct BundleValuedForm {
    degree: usize,
    bundle: Bundle,
    eval: FormFn,
    exact_derivative: Option<DerivFn>,
    exact_laplacian: Option<FormFn>,
    exact_exterior: Option<Box<BundleValuedForm>>,
}

impl std::fmt::Debug for BundleValuedForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BundleValuedForm")
            .field("degree", &self.degree)
            .field("bundle", &self.bundle)
            .field("exact_derivative", &self.exact_derivative.is_some())
            .field("exact_laplacian", &self.exact_laplacian.is_some())
            .finish()
    }
}

impl BundleValuedForm {
    pub fn new<F>(degree: usize, bundle: Bundle, eval: F) -> Self
    where
        F: Fn(&SpherePoint, &[Vector]) -> Vector + Send + Sync + 'static,
    {
        Self {
            degree,
            bundle,
            eval: Arc::new(eval),
            exact_derivative: None,
            exact_laplacian: None,
            exact_exterior: None,
        }
    }

    pub fn with_exact_derivative<F>(mut self, f: F) -> Self
    where
        F: Fn(&SpherePoint, &Vector, &[Vector]) -> Vector + Send + Sync + 'static,
    {
        self.exact_derivative = Some(Arc::new(f));
        self
    }

    pub fn with_exact_laplacian<F>(mut self, f: F) -> Self
    where
        F: Fn(&SpherePoint, &[Vector]) -> Vector + Send + Sync + 'static,
    {
        self.exact_laplacian = Some(Arc::new(f));
        self
    }

    /// Attaches a closed form of `d_D ω` (with its own exact jets) used by the analytic path.
    pub fn with_exact_exterior_derivative(mut self, d: BundleValuedForm) -> Self {
        assert_eq!(d.degree, self.degree + 1);
        self.exact_exterior = Some(Box::new(d));
        self
    }

    /// The zero `p`-form.
    pub fn zero(degree: usize, bundle: Bundle) -> Self {
        let len = bundle.value_len();
        Self::new(degree, bundle, move |_, _| Vector::zeros(len))
            .with_exact_derivative(move |_, _, _| Vector::zeros(len))
            .with_exact_laplacian(move |_, _| Vector::zeros(len))
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn bundle(&self) -> &Bundle {
        &self.bundle
    }

    pub fn has_exact_derivative(&self) -> bool {
        self.exact_derivative.is_some()
    }

    pub fn has_exact_laplacian(&self) -> bool {
        self.exact_laplacian.is_some()
    }

    pub fn evaluate(&self, x: &SpherePoint, args: &[Vector]) -> Vector {
        debug_assert_eq!(args.len(), self.degree);
        (self.eval)(x, args)
    }

    /// Linear combination `alpha * self + beta * other` of forms of equal degree and bundle.
    pub fn linear_combination(&self, alpha: f64, other: &BundleValuedForm, beta: f64) -> BundleValuedForm {
        let (e1, e2) = (self.eval.clone(), other.eval.clone());
        let mut out = BundleValuedForm::new(self.degree, self.bundle.clone(), move |x, a| {
            e1(x, a) * alpha + e2(x, a) * beta
        });
        if let (Some(d1), Some(d2)) = (&self.exact_derivative, &other.exact_derivative) {
            let (d1, d2) = (d1.clone(), d2.clone());
            out.exact_derivative = Some(Arc::new(move |x, v, a| d1(x, v, a) * alpha + d2(x, v, a) * beta));
        }
        if let (Some(l1), Some(l2)) = (&self.exact_laplacian, &other.exact_laplacian) {
            let (l1, l2) = (l1.clone(), l2.clone());
            out.exact_laplacian = Some(Arc::new(move |x, a| l1(x, a) * alpha + l2(x, a) * beta));
        }
        if let (Some(d1), Some(d2)) = (&self.exact_exterior, &other.exact_exterior) {
            out.exact_exterior = Some(Box::new(d1.linear_combination(alpha, d2, beta)));
        }
        out
    }
}

/// Finite-difference steps for geodesic central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSteps {
    pub first: f64,
    pub second: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        Self::from(&ToleranceProfile::default())
    }
}

impl From<&ToleranceProfile> for FdSteps {
    fn from(p: &ToleranceProfile) -> Self {
        Self {
            first: p.fd_step_first,
            second: p.fd_step_second,
        }
    }
}

/// Value of `ω` at `geodesic(x, dir, t)` on the parallel-transported arguments,
/// pulled back to the fiber over `x`.
fn transported_value(form: &BundleValuedForm, x: &SpherePoint, dir: &Vector, t: f64, args: &[Vector]) -> Vector {
    let y = geodesic(x, dir, t);
    let rot = geodesic_rotation(x, dir, t);
    let moved: Vec<Vector> = args.iter().map(|a| &rot * a).collect();
    let value = form.evaluate(&y, &moved);
    let back = form.bundle.connection.transport_back(x, dir, t);
    form.bundle.apply_transport(&back, &value)
}

fn fd_covariant_derivative(form: &BundleValuedForm, x: &SpherePoint, dir: &Vector, args: &[Vector], h: f64) -> Vector {
    if dir.norm() == 0.0 {
        return form.bundle.zero_value();
    }
    let plus = transported_value(form, x, dir, h, args);
    let minus = transported_value(form, x, dir, -h, args);
    (plus - minus) / (2.0 * h)
}

fn require_exact_derivative(form: &BundleValuedForm) -> Result<&DerivFn> {
    form.exact_derivative.as_ref().ok_or_else(|| {
        JacobiError::Capability(
            "analytic covariant derivative requested but the form carries no exact-derivative evaluator".into(),
        )
    })
}

/// `(D_dir ω)(args)` at `x`.
pub fn covariant_derivative(
    form: &BundleValuedForm,
    x: &SpherePoint,
    dir: &Vector,
    args: &[Vector],
    method: Method,
    steps: FdSteps,
) -> Result<Vector> {
    if args.len() != form.degree {
        return Err(JacobiError::UnsupportedDegree(args.len()));
    }
    match method {
        Method::Analytic => Ok(require_exact_derivative(form)?(x, dir, args)),
        Method::Fd => Ok(fd_covariant_derivative(form, x, dir, args, steps.first)),
    }
}

/// `(∇²_{dir,dir} ω)(args)` by a second central difference along the geodesic.
pub fn second_covariant_derivative_fd(
    form: &BundleValuedForm,
    x: &SpherePoint,
    dir: &Vector,
    args: &[Vector],
    h: f64,
) -> Vector {
    if dir.norm() == 0.0 {
        return form.bundle.zero_value();
    }
    let plus = transported_value(form, x, dir, h, args);
    let minus = transported_value(form, x, dir, -h, args);
    let center = form.evaluate(x, args);
    (plus - center * 2.0 + minus) / (h * h)
}

/// Trace Laplacian `Δω = Σ_j ∇²_{e_j,e_j} ω` (the negative of `∇*∇`).
pub fn rough_laplacian(
    form: &BundleValuedForm,
    x: &SpherePoint,
    frame: &TangentFrame,
    args: &[Vector],
    method: Method,
    steps: FdSteps,
) -> Result<Vector> {
    match method {
        Method::Analytic => {
            let lap = form.exact_laplacian.as_ref().ok_or_else(|| {
                JacobiError::Capability(
                    "analytic rough Laplacian requested but the form carries no exact Laplacian".into(),
                )
            })?;
            Ok(lap(x, args))
        }
        Method::Fd => {
            let mut acc = form.bundle.zero_value();
            for e in &frame.vectors {
                acc += second_covariant_derivative_fd(form, x, e, args, steps.second);
            }
            Ok(acc)
        }
    }
}

/// Projections of the ambient coordinate vectors onto `T_x S^m`: a tight frame
/// (`Σ_a v_a v_a^T = P_x`) that varies smoothly with `x`.
pub fn tight_frame(x: &SpherePoint) -> Vec<Vector> {
    let n = x.coords().len();
    (0..n)
        .map(|a| {
            let mut e = Vector::zeros(n);
            e[a] = 1.0;
            x.project_tangent(&e)
        })
        .collect()
}

fn without(args: &[Vector], skip: usize) -> Vec<Vector> {
    args.iter()
        .enumerate()
        .filter(|&(i, _)| i != skip)
        .map(|(_, a)| a.clone())
        .collect()
}

fn exterior_d_unbounded(form: &BundleValuedForm, method: Method, steps: FdSteps) -> Result<BundleValuedForm> {
    if method == Method::Analytic {
        if let Some(d) = &form.exact_exterior {
            return Ok((**d).clone());
        }
    }
    let k = form.degree;
    let inner = form.clone();
    let exact = match method {
        Method::Analytic => Some(require_exact_derivative(form)?.clone()),
        Method::Fd => None,
    };
    Ok(BundleValuedForm::new(k + 1, form.bundle.clone(), move |x, args| {
        let mut acc = inner.bundle.zero_value();
        for i in 0..=k {
            let rest = without(args, i);
            let term = match &exact {
                Some(d) => d(x, &args[i], &rest),
                None => fd_covariant_derivative(&inner, x, &args[i], &rest, steps.first),
            };
            if i % 2 == 0 {
                acc += term;
            } else {
                acc -= term;
            }
        }
        acc
    }))
}

/// Exterior covariant derivative `d_D` of a form of degree 0 or 1.
pub fn exterior_d(form: &BundleValuedForm, method: Method, steps: FdSteps) -> Result<BundleValuedForm> {
    if form.degree > 1 {
        return Err(JacobiError::UnsupportedDegree(form.degree));
    }
    exterior_d_unbounded(form, method, steps)
}

/// `(d_D* ω)(args) = -Σ_s (D_{e_s} ω)(e_s, args)` at `x` in the given frame.
pub fn codifferential(
    form: &BundleValuedForm,
    x: &SpherePoint,
    frame: &TangentFrame,
    args: &[Vector],
    method: Method,
    steps: FdSteps,
) -> Result<Vector> {
    if form.degree == 0 || form.degree > 3 {
        return Err(JacobiError::UnsupportedDegree(form.degree));
    }
    let mut acc = form.bundle.zero_value();
    for e in &frame.vectors {
        let mut full = Vec::with_capacity(args.len() + 1);
        full.push(e.clone());
        full.extend(args.iter().cloned());
        acc -= covariant_derivative(form, x, e, &full, method, steps)?;
    }
    Ok(acc)
}

/// `d_D* ω` as a form of degree `k - 1`, traced over the smooth tight frame.
pub fn codifferential_form(form: &BundleValuedForm, method: Method, steps: FdSteps) -> Result<BundleValuedForm> {
    if form.degree == 0 || form.degree > 3 {
        return Err(JacobiError::UnsupportedDegree(form.degree));
    }
    if method == Method::Analytic {
        require_exact_derivative(form)?;
    }
    let inner = form.clone();
    Ok(BundleValuedForm::new(
        form.degree - 1,
        form.bundle.clone(),
        move |x, args| {
            let mut acc = inner.bundle.zero_value();
            for e in tight_frame(x) {
                let mut full = Vec::with_capacity(args.len() + 1);
                full.push(e.clone());
                full.extend(args.iter().cloned());
                let d = match method {
                    Method::Analytic => (inner.exact_derivative.as_ref().expect("checked"))(x, &e, &full),
                    Method::Fd => fd_covariant_derivative(&inner, x, &e, &full, steps.first),
                };
                acc -= d;
            }
            acc
        },
    ))
}

/// Sphere-specific Weitzenbock constants: `Ric = (m-1) id` and the 2-form curvature factor `2m - 4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeitzenbockConstants {
    pub m: usize,
    pub ricci_factor: f64,
    pub two_form_factor: f64,
}

impl WeitzenbockConstants {
    pub fn new(m: usize) -> Self {
        let c = Self {
            m,
            ricci_factor: m as f64 - 1.0,
            two_form_factor: 2.0 * m as f64 - 4.0,
        };
        assert_eq!(c.ricci_factor, m as f64 - 1.0);
        assert_eq!(c.two_form_factor, 2.0 * m as f64 - 4.0);
        c
    }

    /// Factor multiplying `ω` in the curvature term of the Hodge Laplacian on `p`-forms.
    pub fn factor(&self, degree: usize) -> Result<f64> {
        match degree {
            0 => Ok(0.0),
            1 => Ok(self.ricci_factor),
            2 => Ok(self.two_form_factor),
            d => Err(JacobiError::UnsupportedDegree(d)),
        }
    }
}

/// `𝓡^D`-type term: `Σ_j R_{e_j,X}·ω(e_j)` for 1-forms and
/// `Σ_j (R_{e_j,X}·φ(e_j,Y) - R_{e_j,Y}·φ(e_j,X))` for 2-forms.
pub fn bundle_curvature_term(
    form: &BundleValuedForm,
    x: &SpherePoint,
    frame: &TangentFrame,
    args: &[Vector],
) -> Result<Vector> {
    let bundle = &form.bundle;
    let mut acc = bundle.zero_value();
    match form.degree {
        0 => {}
        1 => {
            for e in &frame.vectors {
                let val = form.evaluate(x, std::slice::from_ref(e));
                acc += bundle.curvature_action(x, e, &args[0], &val);
            }
        }
        2 => {
            let (a, b) = (&args[0], &args[1]);
            for e in &frame.vectors {
                let eb = form.evaluate(x, &[e.clone(), b.clone()]);
                let ea = form.evaluate(x, &[e.clone(), a.clone()]);
                acc += bundle.curvature_action(x, e, a, &eb);
                acc -= bundle.curvature_action(x, e, b, &ea);
            }
        }
        d => return Err(JacobiError::UnsupportedDegree(d)),
    }
    Ok(acc)
}

/// Full curvature term `S` of the Weitzenbock formula on the round sphere.
pub fn weitzenbock_curvature_term(
    form: &BundleValuedForm,
    x: &SpherePoint,
    frame: &TangentFrame,
    args: &[Vector],
) -> Result<Vector> {
    let c = WeitzenbockConstants::new(form.bundle.base_dim()).factor(form.degree)?;
    Ok(form.evaluate(x, args) * c + bundle_curvature_term(form, x, frame, args)?)
}

/// `(d_D d_D* + d_D* d_D) ω` at `x` on `args` via nested finite differences.
pub fn hodge_laplacian_fd(
    form: &BundleValuedForm,
    x: &SpherePoint,
    frame: &TangentFrame,
    args: &[Vector],
    steps: FdSteps,
) -> Result<Vector> {
    if form.degree > 2 {
        return Err(JacobiError::UnsupportedDegree(form.degree));
    }
    let d_form = exterior_d_unbounded(form, Method::Fd, steps)?;
    let mut out = codifferential(&d_form, x, frame, args, Method::Fd, steps)?;
    if form.degree >= 1 {
        let codiff = codifferential_form(form, Method::Fd, steps)?;
        let dd = exterior_d_unbounded(&codiff, Method::Fd, steps)?;
        out += dd.evaluate(x, args);
    }
    Ok(out)
}

/// Argument tuples `(e_{i_1}, ..., e_{i_p})`, `i_1 < ... < i_p`, from a frame.
pub fn increasing_frame_tuples(frame: &TangentFrame, degree: usize) -> Vec<Vec<Vector>> {
    let m = frame.vectors.len();
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..degree).collect();
    if degree > m {
        return out;
    }
    loop {
        out.push(idx.iter().map(|&i| frame.vectors[i].clone()).collect());
        // advance combination
        let mut i = degree;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < m - degree + i {
                idx[i] += 1;
                for j in i + 1..degree {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
        if degree == 0 {
            return out;
        }
    }
}

/// Pointwise inner product `Σ_{I increasing} <ω(e_I), η(e_I)>`.
pub fn form_inner(a: &BundleValuedForm, b: &BundleValuedForm, x: &SpherePoint, frame: &TangentFrame) -> f64 {
    increasing_frame_tuples(frame, a.degree)
        .iter()
        .map(|args| a.evaluate(x, args).dot(&b.evaluate(x, args)))
        .sum()
}

/// Pointwise norm of a form, `sqrt(form_inner(ω, ω))`, without re-evaluating twice.
pub fn form_norm(a: &BundleValuedForm, x: &SpherePoint, frame: &TangentFrame) -> f64 {
    increasing_frame_tuples(frame, a.degree)
        .iter()
        .map(|args| a.evaluate(x, args).norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// Norm of `Δ_{d_D} ω + Δω - S` at `x`: the Weitzenbock residual, summed over frame tuples.
pub fn bochner_residual(form: &BundleValuedForm, x: &SpherePoint, frame: &TangentFrame, steps: FdSteps) -> Result<f64> {
    if !(1..=2).contains(&form.degree) {
        return Err(JacobiError::UnsupportedDegree(form.degree));
    }
    let mut total = 0.0;
    for args in increasing_frame_tuples(frame, form.degree) {
        let hodge = hodge_laplacian_fd(form, x, frame, &args, steps)?;
        let rough = rough_laplacian(form, x, frame, &args, Method::Fd, steps)?;
        let s = weitzenbock_curvature_term(form, x, frame, &args)?;
        total += (hodge + rough - s).norm_squared();
    }
    Ok(total.sqrt())
}

/// Seeded smooth test forms: polynomial coefficients projected into the fiber.
///
/// `ω_x(X_1..X_p) = Π_x[ Σ_a (c_a + <α_a, x>) alt_a(X) C_a ]` where `alt_a` is a
/// product (p = 1) or determinant (p = 2) of linear functionals and `Π_x` the
/// fiber projection.
pub fn random_polynomial_form<R: Rng>(bundle: &Bundle, degree: usize, terms: usize, rng: &mut R) -> BundleValuedForm {
    let n = bundle.base_dim() + 1;
    let value_len = bundle.value_len();
    let rank = bundle.connection().ambient_rank();
    let kind = bundle.kind();
    let mut coeffs = Vec::with_capacity(terms);
    for _ in 0..terms {
        let c0: f64 = rng.gen_range(-1.0..1.0);
        let alpha = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let beta = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let gamma = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let value = match kind {
            FiberKind::Vector => Vector::from_fn(rank, |_, _| rng.gen_range(-1.0..1.0)),
            FiberKind::Endomorphism => {
                let m = Matrix::from_fn(rank, rank, |_, _| rng.gen_range(-1.0..1.0));
                flatten(&(&m - m.transpose()))
            }
        };
        coeffs.push((c0, alpha, beta, gamma, value));
    }
    let b = bundle.clone();
    BundleValuedForm::new(degree, bundle.clone(), move |x, args| {
        let mut acc = Vector::zeros(value_len);
        for (c0, alpha, beta, gamma, value) in &coeffs {
            let radial = c0 + alpha.dot(x.coords());
            let alt = match degree {
                0 => 1.0,
                1 => beta.dot(&args[0]),
                2 => beta.dot(&args[0]) * gamma.dot(&args[1]) - beta.dot(&args[1]) * gamma.dot(&args[0]),
                _ => unreachable!("test forms are generated up to degree 2"),
            };
            acc.axpy(radial * alt, value, 1.0);
        }
        b.project(x, &acc)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{grad_linear, tangent_frame, LinearFunction};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng, m: usize) -> SpherePoint {
        SpherePoint::new(Vector::from_fn(m + 1, |_, _| rng.gen_range(-1.0..1.0))).unwrap()
    }

    fn random_tangent(rng: &mut ChaCha8Rng, x: &SpherePoint) -> Vector {
        x.project_tangent(&Vector::from_fn(x.dim() + 1, |_, _| rng.gen_range(-1.0..1.0)))
    }

    /// Random orthonormal frame at x (Gram-Schmidt of random tangent vectors).
    fn random_frame(rng: &mut ChaCha8Rng, x: &SpherePoint) -> TangentFrame {
        let vs = crate::linalg::gram_schmidt((0..x.dim()).map(|_| random_tangent(rng, x)), 1e-8);
        TangentFrame {
            base: x.clone(),
            vectors: vs,
        }
    }

    fn gradient_field(m: usize, l: LinearFunction) -> BundleValuedForm {
        let bundle = Bundle::vector(Arc::new(LeviCivitaConnection::new(m)));
        let l2 = l.clone();
        let l3 = l.clone();
        BundleValuedForm::new(0, bundle, move |x, _| grad_linear(&l, x))
            .with_exact_derivative(move |x, dir, _| dir * (-l2.value(x)))
            .with_exact_laplacian(move |x, _| -grad_linear(&l3, x))
    }

    #[test]
    fn constant_section_of_flat_bundle_is_parallel() {
        let bundle = Bundle::vector(Arc::new(TrivialConnection::new(3, 2)));
        let c = Vector::from_vec(vec![0.3, -1.2]);
        let form = BundleValuedForm::new(0, bundle, move |_, _| c.clone());
        let x = SpherePoint::from_slice(&[0.1, 0.5, -0.3, 0.8]).unwrap();
        let f = tangent_frame(&x);
        let d = covariant_derivative(&form, &x, &f.vectors[0], &[], Method::Fd, FdSteps::default()).unwrap();
        assert!(d.norm() < 1e-12);
        let lap = rough_laplacian(&form, &x, &f, &[], Method::Fd, FdSteps::default()).unwrap();
        assert!(lap.norm() < 1e-9);
    }

    #[test]
    fn gradient_field_derivative_and_laplacian() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let m = rng.gen_range(2..=6);
            let l = LinearFunction::new(Vector::from_fn(m + 1, |_, _| rng.gen_range(-1.0..1.0)));
            let form = gradient_field(m, l.clone());
            for _ in 0..10 {
                let x = random_point(&mut rng, m);
                let dir = random_tangent(&mut rng, &x);
                let d = covariant_derivative(&form, &x, &dir, &[], Method::Fd, FdSteps::default()).unwrap();
                assert!((d + &dir * l.value(&x)).norm() < 1e-7);
                let frame = tangent_frame(&x);
                let lap = rough_laplacian(&form, &x, &frame, &[], Method::Fd, FdSteps::default()).unwrap();
                assert!((lap + grad_linear(&l, &x)).norm() < 1e-5);
            }
        }
    }

    #[test]
    fn analytic_derivative_requires_capability() {
        let bundle = Bundle::vector(Arc::new(TrivialConnection::new(2, 1)));
        let form = BundleValuedForm::new(0, bundle, |_, _| Vector::from_vec(vec![1.0]));
        let x = SpherePoint::from_slice(&[0.0, 0.0, 1.0]).unwrap();
        let dir = Vector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            covariant_derivative(&form, &x, &dir, &[], Method::Analytic, FdSteps::default()),
            Err(JacobiError::Capability(_))
        ));
        assert!(matches!(
            exterior_d(&form, Method::Analytic, FdSteps::default()),
            Err(JacobiError::Capability(_))
        ));
    }

    #[test]
    fn fd_and_analytic_derivatives_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let m = rng.gen_range(2..=5);
            let l = LinearFunction::new(Vector::from_fn(m + 1, |_, _| rng.gen_range(-1.0..1.0)));
            let form = gradient_field(m, l);
            let x = random_point(&mut rng, m);
            let dir = random_tangent(&mut rng, &x);
            let a = covariant_derivative(&form, &x, &dir, &[], Method::Analytic, FdSteps::default()).unwrap();
            let f = covariant_derivative(&form, &x, &dir, &[], Method::Fd, FdSteps::default()).unwrap();
            if a.norm() > 1e-3 {
                worst = worst.max((&a - f).norm() / a.norm().max(1.0));
            }
        }
        assert!(worst <= 5e-6, "worst {worst}");
    }

    #[test]
    fn rough_laplacian_is_frame_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bundle = Bundle::endomorphisms(Arc::new(LeviCivitaConnection::new(4)));
        let form = random_polynomial_form(&bundle, 1, 3, &mut rng);
        for _ in 0..5 {
            let x = random_point(&mut rng, 4);
            let arg = vec![random_tangent(&mut rng, &x)];
            let f1 = random_frame(&mut rng, &x);
            let f2 = random_frame(&mut rng, &x);
            let a = rough_laplacian(&form, &x, &f1, &arg, Method::Fd, FdSteps::default()).unwrap();
            let b = rough_laplacian(&form, &x, &f2, &arg, Method::Fd, FdSteps::default()).unwrap();
            assert!((a - &b).norm() <= 5e-3 * b.norm().max(1.0));
            let c1 = codifferential(&form, &x, &f1, &[], Method::Fd, FdSteps::default()).unwrap();
            let c2 = codifferential(&form, &x, &f2, &[], Method::Fd, FdSteps::default()).unwrap();
            assert!((c1 - &c2).norm() <= 5e-5 * c2.norm().max(1.0));
        }
    }

    #[test]
    fn exterior_d_of_scalar_function_is_its_gradient() {
        let bundle = Bundle::vector(Arc::new(TrivialConnection::new(3, 1)));
        let l = LinearFunction::new(Vector::from_vec(vec![0.4, -1.0, 0.2, 0.7]));
        let l2 = l.clone();
        let f = BundleValuedForm::new(0, bundle, move |x, _| Vector::from_vec(vec![l2.value(x)]));
        let df = exterior_d(&f, Method::Fd, FdSteps::default()).unwrap();
        let x = SpherePoint::from_slice(&[0.3, 0.3, -0.5, 0.2]).unwrap();
        for e in tangent_frame(&x).vectors {
            let got = df.evaluate(&x, std::slice::from_ref(&e))[0];
            assert!((got - grad_linear(&l, &x).dot(&e)).abs() < 1e-8);
        }
    }

    #[test]
    fn exterior_d_output_is_antisymmetric_and_degree_capped() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bundle = Bundle::endomorphisms(Arc::new(TrivialConnection::new(3, 3)));
        let form = random_polynomial_form(&bundle, 1, 4, &mut rng);
        let d = exterior_d(&form, Method::Fd, FdSteps::default()).unwrap();
        let x = random_point(&mut rng, 3);
        let a = random_tangent(&mut rng, &x);
        let b = random_tangent(&mut rng, &x);
        let ab = d.evaluate(&x, &[a.clone(), b.clone()]);
        let ba = d.evaluate(&x, &[b, a]);
        assert!((ab + ba).norm() < 1e-14);
        assert!(matches!(
            exterior_d(&d, Method::Fd, FdSteps::default()),
            Err(JacobiError::UnsupportedDegree(2))
        ));
    }

    #[test]
    fn random_forms_are_antisymmetric_multilinear_and_fiber_valued() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let conn: Arc<dyn Connection> = Arc::new(LeviCivitaConnection::new(4));
        let bundle = Bundle::endomorphisms(conn);
        let form = random_polynomial_form(&bundle, 2, 3, &mut rng);
        for _ in 0..20 {
            let x = random_point(&mut rng, 4);
            let (a, b, c) = (
                random_tangent(&mut rng, &x),
                random_tangent(&mut rng, &x),
                random_tangent(&mut rng, &x),
            );
            let ab = form.evaluate(&x, &[a.clone(), b.clone()]);
            let ba = form.evaluate(&x, &[b.clone(), a.clone()]);
            assert!((&ab + ba).norm() < 1e-10);
            let lin = form.evaluate(&x, &[&a * 2.0 - &c * 0.5, b.clone()]);
            let expect = &ab * 2.0 - form.evaluate(&x, &[c.clone(), b.clone()]) * 0.5;
            assert!((lin - expect).norm() < 1e-10);
            let mat = unflatten(&ab, 5);
            assert!(crate::linalg::is_antisymmetric(&mat, 1e-12));
            assert!((&mat * x.coords()).norm() < 1e-12);
        }
    }

    #[test]
    fn connections_are_metric_compatible() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let conns: Vec<Arc<dyn Connection>> = vec![
            Arc::new(TrivialConnection::new(3, 2)),
            Arc::new(LeviCivitaConnection::new(3)),
            Arc::new(LeviCivitaConnection::new(5)),
        ];
        for conn in conns {
            let m = conn.base_dim();
            let bundle = Bundle::vector(conn.clone());
            let s = random_polynomial_form(&bundle, 0, 3, &mut rng);
            let t = random_polynomial_form(&bundle, 0, 3, &mut rng);
            for _ in 0..10 {
                let x = random_point(&mut rng, m);
                let dir = random_tangent(&mut rng, &x);
                let h = 1e-4;
                let ip = |y: &SpherePoint| s.evaluate(y, &[]).dot(&t.evaluate(y, &[]));
                let lhs = (ip(&geodesic(&x, &dir, h)) - ip(&geodesic(&x, &dir, -h))) / (2.0 * h);
                let ds = covariant_derivative(&s, &x, &dir, &[], Method::Fd, FdSteps::default()).unwrap();
                let dt = covariant_derivative(&t, &x, &dir, &[], Method::Fd, FdSteps::default()).unwrap();
                let rhs = ds.dot(&t.evaluate(&x, &[])) + s.evaluate(&x, &[]).dot(&dt);
                assert!((lhs - rhs).abs() < 1e-6, "{} {lhs} {rhs}", conn.name());
            }
        }
    }

    #[test]
    fn rk4_transport_matches_exact_great_circle_transport() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_point(&mut rng, 3);
        let dir = random_tangent(&mut rng, &x);
        let t = 0.3;
        let exact = LeviCivitaConnection::new(3).transport_back(&x, &dir, t);
        // V' = -<V, c'> c along c(s) = geodesic(x, dir, s)
        let gen = |s: f64| {
            let c = geodesic(&x, &dir, s);
            let rot = geodesic_rotation(&x, &dir, s);
            let vel = &rot * &dir;
            -(c.coords() * vel.transpose())
        };
        let approx = rk4_transport_back(gen, t, 40, 4) * geodesic(&x, &dir, t).tangent_projector();
        assert!((&exact - approx).amax() < 1e-9);
        let lc = LeviCivitaConnection::new(3);
        assert!((&exact - generator_transport_back(&lc, &x, &dir, t)).amax() < 1e-11);
    }

    #[test]
    fn increasing_tuples_counts() {
        let x = SpherePoint::from_slice(&[0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let f = tangent_frame(&x);
        assert_eq!(increasing_frame_tuples(&f, 0).len(), 1);
        assert_eq!(increasing_frame_tuples(&f, 1).len(), 4);
        assert_eq!(increasing_frame_tuples(&f, 2).len(), 6);
        assert_eq!(increasing_frame_tuples(&f, 3).len(), 4);
    }

    #[test]
    fn weitzenbock_constants() {
        let c = WeitzenbockConstants::new(5);
        assert_eq!(c.ricci_factor, 4.0);
        assert_eq!(c.two_form_factor, 6.0);
    }

    #[test]
    fn flat_parallel_form_has_zero_bochner_sides() {
        let bundle = Bundle::vector(Arc::new(TrivialConnection::new(3, 2)));
        let form = BundleValuedForm::zero(1, bundle);
        let x = SpherePoint::from_slice(&[0.5, 0.5, 0.5, 0.5]).unwrap();
        let frame = tangent_frame(&x);
        assert_eq!(bochner_residual(&form, &x, &frame, FdSteps::default()).unwrap(), 0.0);
    }

    #[test]
    fn bochner_identities_hold_on_random_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let conns: Vec<Arc<dyn Connection>> = vec![
            Arc::new(TrivialConnection::new(4, 3)),
            Arc::new(LeviCivitaConnection::new(4)),
        ];
        for conn in conns {
            let bundle = Bundle::endomorphisms(conn.clone());
            for degree in 1..=2 {
                for _ in 0..3 {
                    let form = random_polynomial_form(&bundle, degree, 3, &mut rng);
                    let x = random_point(&mut rng, 4);
                    let frame = tangent_frame(&x);
                    let r = bochner_residual(&form, &x, &frame, FdSteps::default()).unwrap();
                    assert!(r < 1e-3, "{} degree {degree}: {r}", conn.name());
                }
            }
        }
    }
}
