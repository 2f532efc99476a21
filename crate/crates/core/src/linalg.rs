//! Small dense linear-algebra helpers shared by the Jacobi modules.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// `a b^T - b a^T`, the endomorphism `z -> <b,z> a - <a,z> b`.
pub fn bivector(a: &Vector, b: &Vector) -> Matrix {
    a * b.transpose() - b * a.transpose()
}

/// The wedge `z ∧ w` normalised so that `frobenius(A, wedge(z, w)) == <A w, z>` for antisymmetric `A`.
pub fn wedge(z: &Vector, w: &Vector) -> Matrix {
    bivector(z, w) * 0.5
}

pub fn commutator(a: &Matrix, b: &Matrix) -> Matrix {
    a * b - b * a
}

/// Frobenius inner product `tr(A^T B)`.
pub fn frobenius(a: &Matrix, b: &Matrix) -> f64 {
    a.dot(b)
}

pub fn is_antisymmetric(a: &Matrix, tol: f64) -> bool {
    a.nrows() == a.ncols() && (a + a.transpose()).amax() <= tol
}

/// Column-major flattening used to store endomorphisms as fiber values.
pub fn flatten(a: &Matrix) -> Vector {
    Vector::from_column_slice(a.as_slice())
}

pub fn unflatten(v: &Vector, n: usize) -> Matrix {
    debug_assert_eq!(v.len(), n * n);
    Matrix::from_column_slice(n, n, v.as_slice())
}

/// Orthogonal projector `I - x x^T` onto the complement of a unit vector.
pub fn complement_projector(x: &Vector) -> Matrix {
    Matrix::identity(x.len(), x.len()) - x * x.transpose()
}

/// Numerical rank of a symmetric positive semidefinite Gram matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramRank {
    pub rank: usize,
    /// Singular values, descending.
    pub gram_spectrum: Vec<f64>,
}

impl GramRank {
    /// `sigma_min / sigma_max`; zero for an all-zero spectrum.
    pub fn condition_ratio(&self) -> f64 {
        match (self.gram_spectrum.first(), self.gram_spectrum.last()) {
            (Some(&max), Some(&min)) if max > 0.0 => min / max,
            _ => 0.0,
        }
    }

    /// `sigma_rank / sigma_max` over the retained singular values; zero when the rank is zero.
    pub fn retained_condition_ratio(&self) -> f64 {
        if self.rank == 0 {
            return 0.0;
        }
        self.gram_spectrum[self.rank - 1] / self.gram_spectrum[0]
    }
}

/// Counts singular values above `epsilon * sigma_max`.
pub fn gram_rank(gram: &Matrix, epsilon: f64) -> GramRank {
    let mut spectrum: Vec<f64> = gram.clone().singular_values().iter().copied().collect();
    spectrum.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let max = spectrum.first().copied().unwrap_or(0.0);
    let rank = if max <= f64::MIN_POSITIVE {
        0
    } else {
        spectrum.iter().filter(|&&s| s > epsilon * max).count()
    };
    GramRank {
        rank,
        gram_spectrum: spectrum,
    }
}

/// `G_ij = Σ_node w_node <s_i(node), s_j(node)>` for sampled fields `samples[node][i]`.
pub fn weighted_gram(weights: &[f64], samples: &[Vec<Vector>]) -> Matrix {
    let k = samples.first().map_or(0, |s| s.len());
    let mut g = Matrix::zeros(k, k);
    for (w, fields) in weights.iter().zip(samples) {
        for i in 0..k {
            for j in i..k {
                let v = w * fields[i].dot(&fields[j]);
                g[(i, j)] += v;
                if i != j {
                    g[(j, i)] += v;
                }
            }
        }
    }
    g
}

/// Gram-Schmidt over `candidates` in order, keeping vectors whose residual norm exceeds `drop_tol`.
pub fn gram_schmidt(candidates: impl IntoIterator<Item = Vector>, drop_tol: f64) -> Vec<Vector> {
    let mut basis: Vec<Vector> = Vec::new();
    for mut v in candidates {
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let n = v.norm();
        if n > drop_tol {
            basis.push(v / n);
        }
    }
    basis
}
