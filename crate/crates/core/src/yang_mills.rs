//! Yang-Mills connections over round spheres: curvature forms, the operator
//! `𝓡^D`, the Jacobi operator `J_D B = d_D* d_D B + 𝓡^D(B)`, the eigenforms
//! `B_ℓ = ι_{∇ℓ} R^D` and the pointwise commutator identity they satisfy.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{JacobiError, Result};
use crate::forms::{
    codifferential, covariant_derivative, exterior_d, generator_transport_back, increasing_frame_tuples,
    rough_laplacian, Bundle, BundleValuedForm, Connection, FdSteps, LeviCivitaConnection, TrivialConnection,
};
use crate::harmonic::{EigenResidual, ZERO_SECTION_NORM};
use crate::linalg::{commutator, flatten, gram_rank, unflatten, weighted_gram, GramRank, Matrix, Vector};
use crate::sphere::{grad_linear, tangent_frame, LinearFunction, QuadratureGrid, SpherePoint, TangentFrame};
use crate::tolerance::Method;

/// Trivial bundle `S^m x R^k` with connection `d + A`, `A(x)(X) = Σ_a <α_a,x> <β_a,X> M_a`
/// for seeded vectors and antisymmetric `M_a`. Generically not Yang-Mills.
pub struct PerturbedTrivialConnection {
    name: String,
    m: usize,
    rank: usize,
    terms: Vec<(Vector, Vector, Matrix)>,
}

impl PerturbedTrivialConnection {
    pub fn seeded(m: usize, rank: usize, terms: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms = (0..terms)
            .map(|_| {
                let alpha = Vector::from_fn(m + 1, |_, _| rng.gen_range(-1.0..1.0));
                let beta = Vector::from_fn(m + 1, |_, _| rng.gen_range(-1.0..1.0));
                let a = Matrix::from_fn(rank, rank, |_, _| rng.gen_range(-1.0..1.0));
                (alpha, beta, &a - a.transpose())
            })
            .collect();
        Self {
            name: format!("perturbed-r{rank}-s{m}"),
            m,
            rank,
            terms,
        }
    }

    /// Connection 1-form `A(x)(v)`.
    pub fn potential(&self, x: &SpherePoint, v: &Vector) -> Matrix {
        let mut out = Matrix::zeros(self.rank, self.rank);
        for (alpha, beta, m) in &self.terms {
            out += m * (alpha.dot(x.coords()) * beta.dot(v));
        }
        out
    }
}

impl Connection for PerturbedTrivialConnection {
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
    fn transport_back(&self, x: &SpherePoint, dir: &Vector, t: f64) -> Matrix {
        generator_transport_back(self, x, dir, t)
    }
    fn curvature(&self, x: &SpherePoint, a: &Vector, b: &Vector) -> Matrix {
        let mut da = Matrix::zeros(self.rank, self.rank);
        for (alpha, beta, m) in &self.terms {
            da += m * (alpha.dot(a) * beta.dot(b) - alpha.dot(b) * beta.dot(a));
        }
        da + commutator(&self.potential(x, a), &self.potential(x, b))
    }
    fn transport_generator(&self, x: &SpherePoint, v: &Vector) -> Matrix {
        -self.potential(x, v)
    }
    fn is_flat(&self) -> bool {
        false
    }
}

/// `D + s B` for a connection `D` and an `End(E)`-valued 1-form `B`.
///
/// Curvature is assembled as `R^D + s d_D B + s² [B(X), B(Y)]`; transport is
/// integrated with RK4.
pub struct AffinePerturbation {
    name: String,
    base: Arc<dyn Connection>,
    perturbation: BundleValuedForm,
    d_perturbation: BundleValuedForm,
    s: f64,
}

impl AffinePerturbation {
    pub fn new(
        base: Arc<dyn Connection>,
        perturbation: BundleValuedForm,
        s: f64,
        method: Method,
        steps: FdSteps,
    ) -> Result<Self> {
        if perturbation.degree() != 1 {
            return Err(JacobiError::UnsupportedDegree(perturbation.degree()));
        }
        let d_perturbation = exterior_d(&perturbation, method, steps)?;
        Ok(Self {
            name: format!("{}+{s}B", base.name()),
            base,
            perturbation,
            d_perturbation,
            s,
        })
    }
}

impl Connection for AffinePerturbation {
    fn name(&self) -> &str {
        &self.name
    }
    fn base_dim(&self) -> usize {
        self.base.base_dim()
    }
    fn ambient_rank(&self) -> usize {
        self.base.ambient_rank()
    }
    fn fiber_rank(&self) -> usize {
        self.base.fiber_rank()
    }
    fn fiber_projector(&self, x: &SpherePoint) -> Matrix {
        self.base.fiber_projector(x)
    }
    fn transport_back(&self, x: &SpherePoint, dir: &Vector, t: f64) -> Matrix {
        generator_transport_back(self, x, dir, t)
    }
    fn curvature(&self, x: &SpherePoint, a: &Vector, b: &Vector) -> Matrix {
        let n = self.ambient_rank();
        let ba = unflatten(&self.perturbation.evaluate(x, std::slice::from_ref(a)), n);
        let bb = unflatten(&self.perturbation.evaluate(x, std::slice::from_ref(b)), n);
        let db = unflatten(&self.d_perturbation.evaluate(x, &[a.clone(), b.clone()]), n);
        self.base.curvature(x, a, b) + db * self.s + commutator(&ba, &bb) * (self.s * self.s)
    }
    fn transport_generator(&self, x: &SpherePoint, v: &Vector) -> Matrix {
        let n = self.ambient_rank();
        let bv = unflatten(&self.perturbation.evaluate(x, std::slice::from_ref(v)), n);
        self.base.transport_generator(x, v) - bv * self.s
    }
    fn is_flat(&self) -> bool {
        false
    }
}

/// A catalog metric connection with flags describing what is known in closed form.
#[derive(Clone)]
pub struct BundleConnection {
    connection: Arc<dyn Connection>,
    claims_yang_mills: bool,
    parallel_curvature: bool,
}

impl std::fmt::Debug for BundleConnection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BundleConnection")
            .field("name", &self.name())
            .field("m", &self.base_dim())
            .field("rank", &self.rank())
            .field("claims_yang_mills", &self.claims_yang_mills)
            .field("parallel_curvature", &self.parallel_curvature)
            .finish()
    }
}

impl BundleConnection {
    /// Wraps an arbitrary connection; closed-form derivatives are assumed unavailable.
    pub fn new(connection: Arc<dyn Connection>, claims_yang_mills: bool) -> Self {
        Self {
            connection,
            claims_yang_mills,
            parallel_curvature: false,
        }
    }

    pub fn flat(m: usize, rank: usize) -> Self {
        Self {
            connection: Arc::new(TrivialConnection::new(m, rank)),
            claims_yang_mills: true,
            parallel_curvature: true,
        }
    }

    pub fn levi_civita(m: usize) -> Self {
        Self {
            connection: Arc::new(LeviCivitaConnection::new(m)),
            claims_yang_mills: true,
            parallel_curvature: true,
        }
    }

    pub fn perturbed(m: usize, rank: usize, seed: u64) -> Self {
        Self::new(Arc::new(PerturbedTrivialConnection::seeded(m, rank, 3, seed)), false)
    }

    pub fn connection(&self) -> &Arc<dyn Connection> {
        &self.connection
    }
    pub fn name(&self) -> &str {
        self.connection.name()
    }
    pub fn base_dim(&self) -> usize {
        self.connection.base_dim()
    }
    pub fn rank(&self) -> usize {
        self.connection.fiber_rank()
    }
    pub fn ambient_rank(&self) -> usize {
        self.connection.ambient_rank()
    }
    pub fn is_flat(&self) -> bool {
        self.connection.is_flat()
    }
    pub fn claims_yang_mills(&self) -> bool {
        self.claims_yang_mills
    }
    pub fn parallel_curvature(&self) -> bool {
        self.parallel_curvature
    }

    /// `End(E)` with the induced connection.
    pub fn endomorphism_bundle(&self) -> Bundle {
        Bundle::endomorphisms(self.connection.clone())
    }

    pub fn curvature(&self, x: &SpherePoint, a: &Vector, b: &Vector) -> Matrix {
        self.connection.curvature(x, a, b)
    }

    /// `R^D` as an `End(E)`-valued 2-form (exact jets vanish when the curvature is parallel).
    pub fn curvature_form(&self) -> BundleValuedForm {
        let conn = self.connection.clone();
        let form = BundleValuedForm::new(2, self.endomorphism_bundle(), move |x, args| {
            flatten(&conn.curvature(x, &args[0], &args[1]))
        });
        if self.parallel_curvature {
            let len = self.ambient_rank() * self.ambient_rank();
            form.with_exact_derivative(move |_, _, _| Vector::zeros(len))
                .with_exact_laplacian(move |_, _| Vector::zeros(len))
        } else {
            form
        }
    }
}

/// A connection perturbation: an `End(E)`-valued 1-form with antisymmetric values.
pub type ConnectionPerturbation = BundleValuedForm;

/// `B_ℓ(X) = R^D(∇ℓ, X)`.
///
/// With parallel curvature the closed forms are `(D_Y B_ℓ)(X) = ℓ R(X,Y)`,
/// `ΔB_ℓ = -B_ℓ` and `d_D B_ℓ = -2ℓ R`.
pub fn b_ell_form(d: &BundleConnection, l: &LinearFunction) -> ConnectionPerturbation {
    let (conn, ell) = (d.connection.clone(), l.clone());
    let bundle = d.endomorphism_bundle();
    let form = BundleValuedForm::new(1, bundle.clone(), move |x, args| {
        flatten(&conn.curvature(x, &grad_linear(&ell, x), &args[0]))
    });
    if !d.parallel_curvature {
        return form;
    }
    let (c1, c2, c3, c4) = (
        d.connection.clone(),
        d.connection.clone(),
        d.connection.clone(),
        d.connection.clone(),
    );
    let (l1, l2, l3, l4) = (l.clone(), l.clone(), l.clone(), l.clone());
    let exterior = BundleValuedForm::new(2, bundle, move |x, args| {
        flatten(&(c1.curvature(x, &args[0], &args[1]) * (-2.0 * l1.value(x))))
    })
    .with_exact_derivative(move |x, dir, args| {
        flatten(&(c2.curvature(x, &args[0], &args[1]) * (-2.0 * grad_linear(&l2, x).dot(dir))))
    });
    form.with_exact_derivative(move |x, dir, args| flatten(&(c3.curvature(x, &args[0], dir) * l3.value(x))))
        .with_exact_laplacian(move |x, args| flatten(&(c4.curvature(x, &grad_linear(&l4, x), &args[0]) * -1.0)))
        .with_exact_exterior_derivative(exterior)
}

/// `𝓡(B)(X) = Σ_j [R_{e_j,X}, B(e_j)]` for an arbitrary curvature-like map and 1-form.
pub fn script_r_one_form<R, B>(curvature: R, b: B, frame: &[Vector], x_arg: &Vector) -> Matrix
where
    R: Fn(&Vector, &Vector) -> Matrix,
    B: Fn(&Vector) -> Matrix,
{
    frame
        .iter()
        .map(|e| commutator(&curvature(e, x_arg), &b(e)))
        .fold(None, |acc: Option<Matrix>, m| Some(acc.map_or(m.clone(), |a| a + m)))
        .unwrap_or_else(|| Matrix::zeros(0, 0))
}

/// `𝓡(φ)(X,Y) = Σ_j ([R_{e_j,X}, φ(e_j,Y)] - [R_{e_j,Y}, φ(e_j,X)])`.
pub fn script_r_two_form<R, P>(curvature: R, phi: P, frame: &[Vector], x_arg: &Vector, y_arg: &Vector) -> Matrix
where
    R: Fn(&Vector, &Vector) -> Matrix,
    P: Fn(&Vector, &Vector) -> Matrix,
{
    frame
        .iter()
        .map(|e| commutator(&curvature(e, x_arg), &phi(e, y_arg)) - commutator(&curvature(e, y_arg), &phi(e, x_arg)))
        .fold(None, |acc: Option<Matrix>, m| Some(acc.map_or(m.clone(), |a| a + m)))
        .unwrap_or_else(|| Matrix::zeros(0, 0))
}

/// `𝓡^D(B)(X)` at `x`.
pub fn script_r_apply(
    d: &BundleConnection,
    b: &ConnectionPerturbation,
    x: &SpherePoint,
    x_arg: &Vector,
    frame: &TangentFrame,
) -> Matrix {
    let n = d.ambient_rank();
    script_r_one_form(
        |a, c| d.curvature(x, a, c),
        |e| unflatten(&b.evaluate(x, std::slice::from_ref(e)), n),
        &frame.vectors,
        x_arg,
    )
}

/// `|2𝓡(B_v)(X) - 𝓡(R)(v, X)|` where `B_v = R(v, ·)`, for any antisymmetric 2-form `R`.
pub fn commutator_identity_residual<R>(curvature: R, frame: &[Vector], v: &Vector, x_arg: &Vector) -> f64
where
    R: Fn(&Vector, &Vector) -> Matrix,
{
    let lhs = script_r_one_form(&curvature, |e| curvature(v, e), frame, x_arg) * 2.0;
    let rhs = script_r_two_form(&curvature, &curvature, frame, v, x_arg);
    (lhs - rhs).norm()
}

/// The commutator identity for a random constant antisymmetric-valued 2-form on `R^m`,
/// `2 <= m <= 6`, fiber rank `2..=5`, at random `v` and `X`.
pub fn synthetic_commutator_residual<G: Rng>(rng: &mut G) -> f64 {
    let m = rng.gen_range(2..=6);
    let k = rng.gen_range(2..=5);
    let mut values = vec![vec![Matrix::zeros(k, k); m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let a = Matrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0));
            values[i][j] = &a - a.transpose();
            values[j][i] = -values[i][j].clone();
        }
    }
    let curvature = |a: &Vector, b: &Vector| {
        let mut out = Matrix::zeros(k, k);
        for i in 0..m {
            for j in 0..m {
                out += &values[i][j] * (a[i] * b[j]);
            }
        }
        out
    };
    let frame: Vec<Vector> = (0..m)
        .map(|i| Vector::from_fn(m, |r, _| if r == i { 1.0 } else { 0.0 }))
        .collect();
    let v = Vector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
    let xa = Vector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
    commutator_identity_residual(curvature, &frame, &v, &xa)
}

/// The commutator identity for `B_ℓ` of a catalog connection at `(x, X)`.
pub fn commutator_identity_check(
    d: &BundleConnection,
    l: &LinearFunction,
    x: &SpherePoint,
    x_arg: &Vector,
    frame: &TangentFrame,
) -> f64 {
    commutator_identity_residual(|a, b| d.curvature(x, a, b), &frame.vectors, &grad_linear(l, x), x_arg)
}

/// `J_D B (X) = (d_D* d_D B)(X) + 𝓡^D(B)(X)`.
pub fn jacobi_apply_ym(
    d: &BundleConnection,
    b: &ConnectionPerturbation,
    x: &SpherePoint,
    frame: &TangentFrame,
    x_arg: &Vector,
    method: Method,
    steps: FdSteps,
) -> Result<Matrix> {
    let db = exterior_d(b, method, steps)?;
    let n = d.ambient_rank();
    let dstar = unflatten(
        &codifferential(&db, x, frame, std::slice::from_ref(x_arg), method, steps)?,
        n,
    );
    Ok(dstar + script_r_apply(d, b, x, x_arg, frame))
}

/// Sup over the grid of `|d_D* R^D|` (summed over a frame): zero iff Yang-Mills.
pub fn ym_residual(d: &BundleConnection, grid: &QuadratureGrid, method: Method, steps: FdSteps) -> Result<f64> {
    let r = d.curvature_form();
    sup_over_grid(grid, |x| {
        let frame = tangent_frame(x);
        let mut total = 0.0;
        for e in &frame.vectors {
            total += codifferential(&r, x, &frame, std::slice::from_ref(e), method, steps)?.norm_squared();
        }
        Ok(total.sqrt())
    })
}

/// Sup over the grid of `|d_D* B_ℓ|`.
pub fn coclosed_check(
    d: &BundleConnection,
    l: &LinearFunction,
    grid: &QuadratureGrid,
    method: Method,
    steps: FdSteps,
) -> Result<f64> {
    let b = b_ell_form(d, l);
    sup_over_grid(grid, |x| {
        Ok(codifferential(&b, x, &tangent_frame(x), &[], method, steps)?.norm())
    })
}

/// Sup over the grid and frame triples of the cyclic sum `Σ_cyc (D_X R)(Y, Z)`.
pub fn bianchi_residual(d: &BundleConnection, grid: &QuadratureGrid, method: Method, steps: FdSteps) -> Result<f64> {
    let r = d.curvature_form();
    sup_over_grid(grid, |x| {
        let frame = tangent_frame(x);
        let mut worst: f64 = 0.0;
        for t in increasing_frame_tuples(&frame, 3) {
            let (a, b, c) = (&t[0], &t[1], &t[2]);
            let s = covariant_derivative(&r, x, a, &[b.clone(), c.clone()], method, steps)?
                + covariant_derivative(&r, x, b, &[c.clone(), a.clone()], method, steps)?
                + covariant_derivative(&r, x, c, &[a.clone(), b.clone()], method, steps)?;
            worst = worst.max(s.norm());
        }
        Ok(worst)
    })
}

fn sup_over_grid<F>(grid: &QuadratureGrid, f: F) -> Result<f64>
where
    F: Fn(&SpherePoint) -> Result<f64> + Sync + Send,
{
    grid.map(f)
        .into_iter()
        .try_fold(0.0, |acc, v| v.map(|v| f64::max(acc, v)))
}

fn relative_l2<F>(grid: &QuadratureGrid, f: F) -> Result<(f64, f64)>
where
    F: Fn(&SpherePoint) -> Result<(f64, f64)> + Sync + Send,
{
    let (mut num, mut den) = (0.0, 0.0);
    for (node, s) in grid.nodes.iter().zip(grid.map(f)) {
        let (a, b) = s?;
        num += node.weight * a;
        den += node.weight * b;
    }
    Ok((num.sqrt(), den.sqrt()))
}

/// Relative L² residual of `J_D B_ℓ + (m-4) B_ℓ`.
pub fn eigen_residual_ym(
    d: &BundleConnection,
    l: &LinearFunction,
    grid: &QuadratureGrid,
    method: Method,
    steps: FdSteps,
) -> Result<EigenResidual> {
    let eigenvalue = -(d.base_dim() as f64 - 4.0);
    let b = b_ell_form(d, l);
    let n = d.ambient_rank();
    let (num, den) = relative_l2(grid, |x| {
        let frame = tangent_frame(x);
        let (mut r, mut v) = (0.0, 0.0);
        for e in &frame.vectors {
            let be = unflatten(&b.evaluate(x, std::slice::from_ref(e)), n);
            let jb = jacobi_apply_ym(d, &b, x, &frame, e, method, steps)?;
            r += (jb - &be * eigenvalue).norm_squared();
            v += be.norm_squared();
        }
        Ok((r, v))
    })?;
    if den <= ZERO_SECTION_NORM {
        return Err(JacobiError::DegenerateInput(format!(
            "B_ℓ vanishes on the grid for {} (a flat connection has no such eigenforms)",
            d.name()
        )));
    }
    Ok(EigenResidual {
        residual: num / den,
        eigenvalue,
        section_norm: den,
    })
}

/// Relative L² residual of `ΔB_ℓ - 𝓡(R)_{∇ℓ,·} - (2m-5) B_ℓ`.
pub fn laplacian_identity_residual(
    d: &BundleConnection,
    l: &LinearFunction,
    grid: &QuadratureGrid,
    method: Method,
    steps: FdSteps,
) -> Result<f64> {
    let b = b_ell_form(d, l);
    let n = d.ambient_rank();
    let c = 2.0 * d.base_dim() as f64 - 5.0;
    let (num, den) = relative_l2(grid, |x| {
        let frame = tangent_frame(x);
        let g = grad_linear(l, x);
        let (mut r, mut v) = (0.0, 0.0);
        for e in &frame.vectors {
            let be = unflatten(&b.evaluate(x, std::slice::from_ref(e)), n);
            let lap = unflatten(
                &rough_laplacian(&b, x, &frame, std::slice::from_ref(e), method, steps)?,
                n,
            );
            let rr = script_r_two_form(
                |a, c| d.curvature(x, a, c),
                |a, c| d.curvature(x, a, c),
                &frame.vectors,
                &g,
                e,
            );
            r += (lap - rr - &be * c).norm_squared();
            v += be.norm_squared();
        }
        Ok((r, v))
    })?;
    Ok(num / den.max(1.0))
}

/// Gram rank of `{B_ℓ}` over the coordinate basis, pairing `Σ_i <B(e_i), B'(e_i)>`.
pub fn multiplicity_bound_ym(d: &BundleConnection, grid: &QuadratureGrid, epsilon: f64) -> GramRank {
    let forms: Vec<_> = LinearFunction::coordinate_basis(d.base_dim() + 1)
        .iter()
        .map(|l| b_ell_form(d, l))
        .collect();
    let samples = grid.map(|x| {
        let frame = tangent_frame(x);
        forms
            .iter()
            .map(|b| {
                let parts: Vec<f64> = frame
                    .vectors
                    .iter()
                    .flat_map(|e| {
                        b.evaluate(x, std::slice::from_ref(e))
                            .iter()
                            .copied()
                            .collect::<Vec<_>>()
                    })
                    .collect();
                Vector::from_vec(parts)
            })
            .collect::<Vec<_>>()
    });
    let weights: Vec<f64> = grid.nodes.iter().map(|n| n.weight).collect();
    gram_rank(&weighted_gram(&weights, &samples), epsilon)
}

/// Sup over the grid of `|B_ℓ|`.
pub fn b_ell_sup(d: &BundleConnection, l: &LinearFunction, grid: &QuadratureGrid) -> f64 {
    let b = b_ell_form(d, l);
    grid.map(|x| {
        let frame = tangent_frame(x);
        frame
            .vectors
            .iter()
            .map(|e| b.evaluate(x, std::slice::from_ref(e)).norm_squared())
            .sum::<f64>()
            .sqrt()
    })
    .into_iter()
    .fold(0.0, f64::max)
}
