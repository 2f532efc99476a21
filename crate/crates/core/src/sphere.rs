//! Exact geometry of the unit sphere `S^m ⊂ R^{m+1}`: points, frames, linear
//! functions, geodesics, parallel transport along great circles and
//! deterministic quadrature.

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{JacobiError, Result};
use crate::linalg::{Matrix, Vector};

/// A point on the unit sphere `S^m`, stored as a unit vector of length `m + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint {
    x: Vector,
}

impl SpherePoint {
    /// Normalises `x` onto the sphere. Rejects zero vectors and `m < 1`.
    pub fn new(x: Vector) -> Result<Self> {
        if x.len() < 2 {
            return Err(JacobiError::UnsupportedDimension {
                dim: x.len().saturating_sub(1),
                reason: "sphere dimension must be at least 1".into(),
            });
        }
        let n = x.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(JacobiError::DegenerateInput(
                "cannot normalise a zero or non-finite vector onto the sphere".into(),
            ));
        }
        Ok(Self { x: x / n })
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        Self::new(Vector::from_column_slice(x))
    }

    /// Intrinsic dimension `m`.
    pub fn dim(&self) -> usize {
        self.x.len() - 1
    }

    pub fn coords(&self) -> &Vector {
        &self.x
    }

    /// Orthogonal projector onto `T_x S^m`.
    pub fn tangent_projector(&self) -> Matrix {
        crate::linalg::complement_projector(&self.x)
    }

    pub fn project_tangent(&self, v: &Vector) -> Vector {
        v - &self.x * self.x.dot(v)
    }

    /// Normal component `<v, x>` of an ambient vector.
    pub fn normal_component(&self, v: &Vector) -> f64 {
        self.x.dot(v)
    }

    pub fn check_tangent(&self, v: &Vector, tol: f64) -> Result<()> {
        let c = self.normal_component(v);
        if c.abs() > tol * v.norm().max(1.0) {
            return Err(JacobiError::NonTangent { normal_component: c });
        }
        Ok(())
    }

    /// Rotates the point by an orthogonal matrix of matching size.
    pub fn rotated(&self, rotation: &Matrix) -> SpherePoint {
        SpherePoint { x: rotation * &self.x }
    }
}

/// A linear function `x -> <a, x>` restricted to the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFunction {
    pub a: Vector,
}

impl LinearFunction {
    pub fn new(a: Vector) -> Self {
        Self { a }
    }

    /// The `i`-th coordinate function of `R^{dim}`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        let mut a = Vector::zeros(dim);
        a[i] = 1.0;
        Self { a }
    }

    /// The coordinate basis of the `(m+1)`-dimensional space of linear functions.
    pub fn coordinate_basis(ambient_dim: usize) -> Vec<Self> {
        (0..ambient_dim).map(|i| Self::coordinate(ambient_dim, i)).collect()
    }

    pub fn value(&self, x: &SpherePoint) -> f64 {
        self.a.dot(x.coords())
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &LinearFunction, beta: f64) -> LinearFunction {
        LinearFunction {
            a: &self.a * alpha + &other.a * beta,
        }
    }

    /// `l ∘ rho^{-1}` for an orthogonal `rho`.
    pub fn precompose_inverse(&self, rotation: &Matrix) -> LinearFunction {
        LinearFunction { a: rotation * &self.a }
    }
}

/// Spherical gradient `a - l(x) x`.
pub fn grad_linear(l: &LinearFunction, x: &SpherePoint) -> Vector {
    &l.a - x.coords() * l.value(x)
}

/// Closed-form Hessian `-l(x) <X, Y>` for tangent `X`, `Y`.
pub fn hessian_linear(l: &LinearFunction, x: &SpherePoint, v: &Vector, w: &Vector, tangency_tol: f64) -> Result<f64> {
    x.check_tangent(v, tangency_tol)?;
    x.check_tangent(w, tangency_tol)?;
    Ok(-l.value(x) * v.dot(w))
}

/// Hessian of `l` by second central differences along geodesics, polarised.
pub fn hessian_linear_fd(l: &LinearFunction, x: &SpherePoint, v: &Vector, w: &Vector, h: f64) -> f64 {
    let quad = |dir: &Vector| {
        let f0 = l.value(x);
        let fp = l.value(&geodesic(x, dir, h));
        let fm = l.value(&geodesic(x, dir, -h));
        (fp - 2.0 * f0 + fm) / (h * h)
    };
    (quad(&(v + w)) - quad(&(v - w))) / 4.0
}

/// An orthonormal basis of `T_x S^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentFrame {
    pub base: SpherePoint,
    pub vectors: Vec<Vector>,
}

impl TangentFrame {
    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    /// Rotates base and vectors together.
    pub fn rotated(&self, rotation: &Matrix) -> TangentFrame {
        TangentFrame {
            base: self.base.rotated(rotation),
            vectors: self.vectors.iter().map(|v| rotation * v).collect(),
        }
    }

    /// Max deviation of the frame Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.vectors.iter().enumerate() {
            worst = worst.max(a.dot(self.base.coords()).abs());
            for (j, b) in self.vectors.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((a.dot(b) - target).abs());
            }
        }
        worst
    }
}

/// Deterministic frame: drop the axis with the largest `|x_i|` (lowest index on
/// ties), then Gram-Schmidt the remaining coordinate vectors in ascending order.
pub fn tangent_frame(x: &SpherePoint) -> TangentFrame {
    let coords = x.coords();
    let n = coords.len();
    let mut drop = 0;
    for i in 1..n {
        if coords[i].abs() > coords[drop].abs() {
            drop = i;
        }
    }
    let mut vectors: Vec<Vector> = Vec::with_capacity(n - 1);
    for i in (0..n).filter(|&i| i != drop) {
        let mut v = Vector::zeros(n);
        v[i] = 1.0;
        v.axpy(-coords[i], coords, 1.0);
        for b in &vectors {
            let c = b.dot(&v);
            v.axpy(-c, b, 1.0);
        }
        let norm = v.norm();
        vectors.push(v / norm);
    }
    TangentFrame {
        base: x.clone(),
        vectors,
    }
}

/// Great-circle geodesic `cos(t|v|) x + sin(t|v|) v/|v|`.
pub fn geodesic(x: &SpherePoint, v: &Vector, t: f64) -> SpherePoint {
    let speed = v.norm();
    if speed == 0.0 {
        return x.clone();
    }
    let theta = t * speed;
    let y = x.coords() * theta.cos() + v * (theta.sin() / speed);
    // renormalise against rounding drift
    let n = y.norm();
    SpherePoint { x: y / n }
}

/// Ambient rotation by angle `t|v|` in the plane spanned by `x` and `v`.
///
/// It carries `x` to `geodesic(x, v, t)` and restricts to Levi-Civita parallel
/// transport `T_x S^m -> T_{geodesic(x,v,t)} S^m`.
pub fn geodesic_rotation(x: &SpherePoint, v: &Vector, t: f64) -> Matrix {
    let n = x.coords().len();
    let speed = v.norm();
    if speed == 0.0 || t == 0.0 {
        return Matrix::identity(n, n);
    }
    let u = v / speed;
    let p = x.coords();
    let theta = t * speed;
    let (s, c) = theta.sin_cos();
    Matrix::identity(n, n)
        + (p * p.transpose() + &u * u.transpose()) * (c - 1.0)
        + (&u * p.transpose() - p * u.transpose()) * s
}

/// Volume of the unit sphere `S^m`.
pub fn sphere_volume(m: usize) -> f64 {
    match m {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (m as f64 - 1.0) * sphere_volume(m - 2),
    }
}

/// A node of a quadrature rule on the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureNode {
    pub point: SpherePoint,
    pub weight: f64,
}

/// Deterministic quadrature rule on `S^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub m: usize,
    pub level: usize,
    pub nodes: Vec<QuadratureNode>,
}

/// Exported node record for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub m: usize,
    pub level: usize,
    pub node_count: usize,
    pub total_weight: f64,
}

pub const MAX_QUADRATURE_DIM: usize = 8;

/// Gauss points per polar angle at a refinement level.
pub fn polar_points(level: usize) -> usize {
    level + 2
}

/// Trapezoid points in the azimuthal angle (and on `S^1`).
pub fn azimuth_points(m: usize, level: usize) -> usize {
    if m == 1 {
        8 * (level + 1)
    } else {
        2 * polar_points(level) + 2
    }
}

/// Builds the quadrature rule for `S^m` at the given refinement level.
///
/// `m = 1` uses the uniform trapezoid rule; `m >= 2` a product rule in
/// hyperspherical coordinates (Gauss-Gegenbauer in each polar angle,
/// uniform in the azimuth), exact for polynomials of moderate degree.
pub fn quadrature_grid(m: usize, level: usize) -> Result<QuadratureGrid> {
    if m == 0 || m > MAX_QUADRATURE_DIM {
        return Err(JacobiError::UnsupportedDimension {
            dim: m,
            reason: format!("quadrature is available for 1 <= m <= {MAX_QUADRATURE_DIM}"),
        });
    }
    if level == 0 {
        return Err(JacobiError::Config("quadrature level must be >= 1".into()));
    }
    let n_az = azimuth_points(m, level);
    let azimuth: Vec<(f64, f64)> = (0..n_az)
        .map(|k| (2.0 * PI * k as f64 / n_az as f64, 2.0 * PI / n_az as f64))
        .collect();

    // Polar angle k (1-based) carries the weight sin^{m-k}.
    let polar_rules: Vec<Vec<(f64, f64)>> = (1..m)
        .map(|k| gauss_gegenbauer(polar_points(level), (m - k) as f64 / 2.0 - 0.5))
        .collect();

    // Enumerate (t_1..t_{m-1}, phi) tuples.
    let mut partial: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
    for rule in &polar_rules {
        let mut next = Vec::with_capacity(partial.len() * rule.len());
        for (ts, w) in &partial {
            for &(t, wt) in rule {
                let mut ts2 = ts.clone();
                ts2.push(t);
                next.push((ts2, w * wt));
            }
        }
        partial = next;
    }

    let mut nodes = Vec::with_capacity(partial.len() * n_az);
    for (ts, w) in &partial {
        for &(phi, wphi) in &azimuth {
            let mut x = Vector::zeros(m + 1);
            let mut sin_prod = 1.0;
            for (i, &t) in ts.iter().enumerate() {
                x[i] = sin_prod * t;
                sin_prod *= (1.0 - t * t).max(0.0).sqrt();
            }
            x[m - 1] = sin_prod * phi.cos();
            x[m] = sin_prod * phi.sin();
            nodes.push(QuadratureNode {
                point: SpherePoint { x: x.normalize() },
                weight: w * wphi,
            });
        }
    }
    Ok(QuadratureGrid { m, level, nodes })
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    /// Evaluates `f` at every node in parallel, preserving node order.
    pub fn map<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&SpherePoint) -> T + Sync + Send,
    {
        self.nodes.par_iter().map(|n| f(&n.point)).collect()
    }

    /// `∫ f dμ`, summed in node order so results are reproducible.
    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: Fn(&SpherePoint) -> f64 + Sync + Send,
    {
        let values = self.map(f);
        self.nodes.iter().zip(values).map(|(n, v)| n.weight * v).sum()
    }

    pub fn summary(&self) -> GridSummary {
        GridSummary {
            m: self.m,
            level: self.level,
            node_count: self.len(),
            total_weight: self.total_weight(),
        }
    }
}

/// Gauss rule on `[-1, 1]` for the weight `(1 - t^2)^alpha`, `alpha >= 0`
/// (Golub-Welsch on the symmetric Jacobi matrix).
pub fn gauss_gegenbauer(n: usize, alpha: f64) -> Vec<(f64, f64)> {
    assert!(n >= 1 && alpha >= 0.0);
    let mut jac = Matrix::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let beta = kf * (kf + 2.0 * alpha) / ((2.0 * kf + 2.0 * alpha + 1.0) * (2.0 * kf + 2.0 * alpha - 1.0));
        let b = beta.sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let mu0 = gegenbauer_mass(alpha);
    let eig = SymmetricEigen::new(jac);
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    // symmetrise nodes and weights exactly
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let t = 0.5 * (rule[j].0 - rule[i].0);
        let w = 0.5 * (rule[i].1 + rule[j].1);
        rule[i] = (-t, w);
        rule[j] = (t, w);
    }
    if n % 2 == 1 {
        rule[n / 2].0 = 0.0;
    }
    rule
}

/// `∫_{-1}^{1} (1 - t^2)^alpha dt` for integer or half-integer `alpha`.
fn gegenbauer_mass(alpha: f64) -> f64 {
    let twice = (2.0 * alpha).round() as i64;
    assert!(
        (2.0 * alpha - twice as f64).abs() < 1e-12,
        "alpha must be a half-integer"
    );
    let (mut a, mut mass) = if twice % 2 == 0 { (0.0, 2.0) } else { (0.5, PI / 2.0) };
    while a + 0.5 < alpha {
        a += 1.0;
        mass *= 2.0 * a / (2.0 * a + 1.0);
    }
    mass
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn random_point(rng: &mut ChaCha8Rng, m: usize) -> SpherePoint {
        SpherePoint::new(Vector::from_fn(m + 1, |_, _| rng.gen_range(-1.0..1.0))).unwrap()
    }

    fn random_tangent(rng: &mut ChaCha8Rng, x: &SpherePoint) -> Vector {
        x.project_tangent(&Vector::from_fn(x.dim() + 1, |_, _| rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn sphere_point_is_renormalised() {
        let p = SpherePoint::from_slice(&[3.0, 4.0]).unwrap();
        assert!((p.coords().norm() - 1.0).abs() < 1e-15);
        assert_eq!(p.dim(), 1);
        assert!(SpherePoint::from_slice(&[0.0, 0.0]).is_err());
        assert!(SpherePoint::from_slice(&[1.0]).is_err());
    }

    #[test]
    fn grad_linear_examples() {
        let l = LinearFunction::new(v(&[1.0, 0.0, 0.0, 0.0]));
        let g = grad_linear(&l, &SpherePoint::from_slice(&[1.0, 0.0, 0.0, 0.0]).unwrap());
        assert!(g.norm() < 1e-15);
        let g = grad_linear(&l, &SpherePoint::from_slice(&[0.0, 1.0, 0.0, 0.0]).unwrap());
        assert!((g - v(&[1.0, 0.0, 0.0, 0.0])).norm() < 1e-15);
        let s = 1.0 / 2f64.sqrt();
        let l = LinearFunction::new(v(&[s, s, 0.0, 0.0]));
        let g = grad_linear(&l, &SpherePoint::from_slice(&[1.0, 0.0, 0.0, 0.0]).unwrap());
        assert!((g - v(&[0.0, s, 0.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn hessian_closed_form_examples() {
        let x = SpherePoint::from_slice(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let l = LinearFunction::new(v(&[1.0, 0.0, 0.0, 0.0]));
        let e = v(&[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(hessian_linear(&l, &x, &e, &e, 1e-8).unwrap(), -1.0);
        let l0 = LinearFunction::new(v(&[0.0, 1.0, 0.0, 0.0]));
        assert_eq!(hessian_linear(&l0, &x, &e, &e, 1e-8).unwrap(), 0.0);
        let bad = v(&[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            hessian_linear(&l, &x, &bad, &e, 1e-8),
            Err(JacobiError::NonTangent { .. })
        ));
    }

    #[test]
    fn hessian_fd_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let m = rng.gen_range(1..=6);
            let x = random_point(&mut rng, m);
            let l = LinearFunction::new(Vector::from_fn(m + 1, |_, _| rng.gen_range(-1.0..1.0)));
            let a = random_tangent(&mut rng, &x);
            let b = random_tangent(&mut rng, &x);
            let exact = hessian_linear(&l, &x, &a, &b, 1e-8).unwrap();
            let fd = hessian_linear_fd(&l, &x, &a, &b, 1e-3);
            worst = worst.max((exact - fd).abs());
        }
        assert!(worst < 1e-5, "worst {worst}");
    }

    #[test]
    fn frame_at_north_pole_is_coordinate_basis() {
        let x = SpherePoint::from_slice(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        let f = tangent_frame(&x);
        for (i, e) in f.vectors.iter().enumerate() {
            let mut c = Vector::zeros(4);
            c[i] = 1.0;
            assert_eq!(e, &c);
        }
    }

    #[test]
    fn frames_are_orthonormal_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let m = rng.gen_range(1..=8);
            let x = random_point(&mut rng, m);
            let f = tangent_frame(&x);
            assert_eq!(f.dim(), m);
            assert!(f.orthonormality_defect() < 1e-10);
            assert_eq!(f, tangent_frame(&x));
        }
    }

    #[test]
    fn geodesic_examples() {
        let x = SpherePoint::from_slice(&[1.0, 0.0, 0.0]).unwrap();
        let zero = Vector::zeros(3);
        assert_eq!(geodesic(&x, &zero, 2.3), x);
        let e = v(&[0.0, 1.0, 0.0]);
        let y = geodesic(&x, &e, PI / 2.0);
        assert!((y.coords() - &e).norm() < 1e-15);
    }

    #[test]
    fn geodesic_rotation_transports_tangent_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = random_point(&mut rng, 4);
            let dir = random_tangent(&mut rng, &x);
            let w = random_tangent(&mut rng, &x);
            let t = rng.gen_range(-1.0..1.0);
            let r = geodesic_rotation(&x, &dir, t);
            let y = geodesic(&x, &dir, t);
            assert!((&r * x.coords() - y.coords()).norm() < 1e-13);
            // transported vector stays tangent and keeps its length
            let tw = &r * &w;
            assert!(tw.dot(y.coords()).abs() < 1e-13);
            assert!((tw.norm() - w.norm()).abs() < 1e-13);
            assert!((&r.transpose() * &r - Matrix::identity(5, 5)).amax() < 1e-13);
        }
    }

    #[test]
    fn sphere_volumes() {
        assert!((sphere_volume(2) - 4.0 * PI).abs() < 1e-13);
        assert!((sphere_volume(3) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((sphere_volume(4) - 8.0 * PI * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gegenbauer_rules_integrate_polynomials() {
        for &alpha in &[0.0, 0.5, 1.0, 1.5, 2.0, 3.0] {
            let rule = gauss_gegenbauer(4, alpha);
            let mass: f64 = rule.iter().map(|r| r.1).sum();
            assert!((mass - gegenbauer_mass(alpha)).abs() < 1e-13);
            // ∫ t^2 (1-t^2)^a = mass(a) - mass(a+1)
            let second: f64 = rule.iter().map(|r| r.1 * r.0 * r.0).sum();
            let exact = gegenbauer_mass(alpha) - gegenbauer_mass(alpha + 1.0);
            assert!((second - exact).abs() < 1e-13, "alpha {alpha}");
        }
    }

    #[test]
    fn quadrature_s2_examples() {
        let g = quadrature_grid(2, 2).unwrap();
        assert!((g.total_weight() - 4.0 * PI).abs() < 1e-8);
        let l = LinearFunction::coordinate(3, 0);
        assert!(g.integrate(|x| l.value(x)).abs() < 1e-8 * 4.0 * PI);
        let int2 = g.integrate(|x| l.value(x).powi(2));
        assert!((int2 / (4.0 * PI / 3.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadrature_invariants_all_dimensions() {
        for m in 1..=MAX_QUADRATURE_DIM {
            for level in 1..=2 {
                let g = quadrature_grid(m, level).unwrap();
                let vol = sphere_volume(m);
                assert!((g.total_weight() / vol - 1.0).abs() < 1e-8, "m {m}");
                for i in 0..=m {
                    let l = LinearFunction::coordinate(m + 1, i);
                    assert!(g.integrate(|x| l.value(x)).abs() < 1e-8 * vol);
                    if level >= 2 {
                        let i2 = g.integrate(|x| l.value(x).powi(2));
                        assert!((i2 / (vol / (m as f64 + 1.0)) - 1.0).abs() < 1e-6, "m {m} i {i}");
                    }
                }
            }
        }
    }

    #[test]
    fn quadrature_rejects_unsupported_dimension() {
        assert!(matches!(
            quadrature_grid(9, 2),
            Err(JacobiError::UnsupportedDimension { dim: 9, .. })
        ));
        assert!(quadrature_grid(0, 2).is_err());
    }
}
