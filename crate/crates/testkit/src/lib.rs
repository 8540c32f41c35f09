//! Planted test families and reference oracles.
//!
//! Everything here is computed without going through the `qpstab` crate so
//! that tests can compare the library against an independent route.
//! Each family is constructed so that its answer (an equilibrium, a diagonal
//! scaling) is known by construction.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Raw system data with a planted interior equilibrium.
#[derive(Debug, Clone)]
pub struct PlantedSystem {
    pub lambda: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub xstar: DVector<f64>,
    /// A positive diagonal scaling with `C Q + Q^T C` negative (semi)definite,
    /// when the family guarantees one.
    pub scaling: Option<DVector<f64>>,
}

impl PlantedSystem {
    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    pub fn m(&self) -> usize {
        self.b.nrows()
    }

    pub fn a_rows(&self) -> Vec<Vec<f64>> {
        rows(&self.a)
    }

    pub fn b_rows(&self) -> Vec<Vec<f64>> {
        rows(&self.b)
    }
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn uniform_matrix(
    rng: &mut TestRng,
    rows: usize,
    cols: usize,
    lo: f64,
    hi: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn uniform_vector(rng: &mut TestRng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

/// Smallest over largest singular value.
pub fn inverse_condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let hi = sv.iter().copied().fold(0.0, f64::max);
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    lo / hi
}

/// Random `m x n` exponent matrix with entries in `[-r, r]` and singular
/// values spread by at most a factor 1e3.
pub fn random_exponents(rng: &mut TestRng, m: usize, n: usize, r: f64) -> DMatrix<f64> {
    loop {
        let b = uniform_matrix(rng, m, n, -r, r);
        if inverse_condition(&b) > 1e-3 {
            return b;
        }
    }
}

/// Naive `prod_j x_j^B_ij` with per-entry powers.
pub fn naive_quasimonomials(b: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(b.nrows(), |i, _| {
        (0..b.ncols()).map(|j| x[j].powf(b[(i, j)])).product()
    })
}

/// Symmetric matrix with eigenvalues at most `-shift`.
pub fn negative_definite(rng: &mut TestRng, m: usize, shift: f64) -> DMatrix<f64> {
    let g = uniform_matrix(rng, m, m, -1.0, 1.0);
    -(&g * g.transpose()) / m as f64 - DMatrix::identity(m, m) * shift
}

pub fn skew(rng: &mut TestRng, m: usize, scale: f64) -> DMatrix<f64> {
    let k = uniform_matrix(rng, m, m, -scale, scale);
    (&k - k.transpose()) * 0.5
}

/// `Q = C0^-1 R` with `R + R^T` negative definite, so `C0 Q + Q^T C0 = R + R^T`.
/// Returns `(Q, c0)`.
pub fn planted_certificate(rng: &mut TestRng, m: usize) -> (DMatrix<f64>, DVector<f64>) {
    let c0 = DVector::from_fn(m, |_, _| rng.random_range(-1.5f64..1.5).exp());
    let r = negative_definite(rng, m, 0.2) * 0.5 + skew(rng, m, 1.0);
    let q = DMatrix::from_fn(m, m, |i, j| r[(i, j)] / c0[i]);
    (q, c0)
}

/// Random `Q` with at least one strictly positive diagonal entry.
pub fn positive_diagonal_matrix(rng: &mut TestRng, m: usize) -> DMatrix<f64> {
    let mut q = uniform_matrix(rng, m, m, -1.0, 1.0);
    for i in 0..m {
        q[(i, i)] = -rng.random_range(0.0..2.0);
    }
    let k = rng.random_range(0..m);
    q[(k, k)] = rng.random_range(0.05..1.0);
    q
}

/// Planted equilibrium with a unique interior root.
///
/// For `m = n` the root is unique whenever `A` and `B` are invertible. For
/// `m > n`, `A = -P B^T D` with `P + P^T` and `D` positive definite makes the
/// root set that of a strictly convex gradient, hence a single point.
pub fn planted_equilibrium(rng: &mut TestRng) -> PlantedSystem {
    let n = rng.random_range(1..=6);
    let m = rng.random_range(n..=6);
    let b = random_exponents(rng, m, n, 2.0);
    let a = if m == n {
        loop {
            let a = uniform_matrix(rng, n, n, -1.0, 1.0);
            if inverse_condition(&a) > 0.05 {
                break a;
            }
        }
    } else {
        let p = DMatrix::identity(n, n) + uniform_matrix(rng, n, n, -0.3, 0.3);
        let d = DMatrix::from_diagonal(&uniform_vector(rng, m, 0.5, 2.0));
        -(p * b.transpose() * d)
    };
    let xstar = uniform_vector(rng, n, 0.5, 2.0);
    let phi = naive_quasimonomials(&b, &xstar);
    let lambda = -(&a * phi);
    PlantedSystem {
        lambda,
        a,
        b,
        xstar,
        scaling: None,
    }
}

/// QP system with a planted diagonal scaling `c0`.
///
/// `A = K B^T C0` gives `C0 Q + Q^T C0 = C0 B (K + K^T) B^T C0`, which is
/// negative definite for `m = n` and negative semidefinite for `m > n` when
/// `K + K^T` is negative definite.
pub fn certified_system(
    rng: &mut TestRng,
    n: usize,
    m: usize,
    exponent_range: f64,
) -> PlantedSystem {
    let b = random_exponents(rng, m, n, exponent_range);
    let c0 = DVector::from_fn(m, |_, _| rng.random_range(-1.0f64..1.0).exp());
    let k = negative_definite(rng, n, 0.5) + skew(rng, n, 1.0);
    let a = k * b.transpose() * DMatrix::from_diagonal(&c0);
    let xstar = uniform_vector(rng, n, 0.5, 2.0);
    let lambda = -(&a * naive_quasimonomials(&b, &xstar));
    PlantedSystem {
        lambda,
        a,
        b,
        xstar,
        scaling: Some(c0),
    }
}

/// Square system (`m = n`) with a planted definite certificate and
/// exponents near the identity, for trajectory convergence runs.
pub fn definite_system(rng: &mut TestRng, n: usize) -> PlantedSystem {
    let b = loop {
        let b = DMatrix::identity(n, n) + uniform_matrix(rng, n, n, -0.25, 0.25);
        if inverse_condition(&b) > 0.2 {
            break b;
        }
    };
    let c0 = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
    let r = negative_definite(rng, n, 1.0) + skew(rng, n, 1.0);
    let q = DMatrix::from_fn(n, n, |i, j| r[(i, j)] / c0[i]);
    let a = b.clone().try_inverse().expect("well-conditioned B") * q;
    let xstar = uniform_vector(rng, n, 0.5, 2.0);
    let lambda = -(&a * naive_quasimonomials(&b, &xstar));
    PlantedSystem {
        lambda,
        a,
        b,
        xstar,
        scaling: Some(c0),
    }
}

/// Lotka-Volterra system (`B = I`) with a planted definite certificate.
pub fn lotka_volterra(rng: &mut TestRng, n: usize) -> PlantedSystem {
    let (a, c0) = planted_certificate(rng, n);
    let xstar = uniform_vector(rng, n, 0.5, 2.0);
    let lambda = -(&a * &xstar);
    PlantedSystem {
        lambda,
        a,
        b: DMatrix::identity(n, n),
        xstar,
        scaling: Some(c0),
    }
}

/// `dx/dt = x (1 - y)`, `dy/dt = y (-1 + x)`.
pub fn predator_prey() -> PlantedSystem {
    PlantedSystem {
        lambda: DVector::from_vec(vec![1.0, -1.0]),
        a: DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
        b: DMatrix::identity(2, 2),
        xstar: DVector::from_vec(vec![1.0, 1.0]),
        scaling: Some(DVector::from_vec(vec![1.0, 1.0])),
    }
}

/// Two states, three quasimonomials `(x1, x2/x1, 1/x2)`, and an exactly
/// skew-symmetric `Q = B A`: the conservative case with `m > n`.
///
/// A rank-one skew matrix does not exist, so `n = 1` cannot host a
/// non-trivial conservative instance; `n = 2, m = 3` is the smallest.
pub fn skew_qp() -> PlantedSystem {
    let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 1.0, 0.0, -1.0]);
    let a = DMatrix::from_row_slice(2, 3, &[0.0, -1.0, 1.0, 1.0, -1.0, 0.0]);
    let xstar = DVector::from_vec(vec![2.0, 3.0]);
    let lambda = -(&a * naive_quasimonomials(&b, &xstar));
    PlantedSystem {
        lambda,
        a,
        b,
        xstar,
        scaling: Some(DVector::from_element(3, 1.0)),
    }
}

/// Lotka-Volterra Liapunov function `sum_i c_i (x_i - x_i* - x_i* ln(x_i/x_i*))`.
///
/// The logarithm is taken as `ln_1p((x - x*)/x*)`, which keeps the formula
/// accurate close to `x*` without changing it.
pub fn lotka_volterra_w(c: &DVector<f64>, x: &DVector<f64>, xstar: &DVector<f64>) -> f64 {
    (0..x.len())
        .map(|i| {
            let diff = x[i] - xstar[i];
            c[i] * (diff - xstar[i] * (diff / xstar[i]).ln_1p())
        })
        .sum()
}

/// Lotka-Volterra derivative `1/2 (x - x*)^T (C A + A^T C) (x - x*)`.
pub fn lotka_volterra_w_dot(
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    x: &DVector<f64>,
    xstar: &DVector<f64>,
) -> f64 {
    let n = x.len();
    let diff = x - xstar;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += diff[i] * (c[i] * a[(i, j)] + a[(j, i)] * c[j]) * diff[j];
        }
    }
    0.5 * total
}

/// Central difference of `f` along coordinate `j` with step `h`.
pub fn central_difference<F: Fn(&DVector<f64>) -> f64>(
    f: F,
    x: &DVector<f64>,
    j: usize,
    h: f64,
) -> f64 {
    let mut plus = x.clone();
    let mut minus = x.clone();
    plus[j] += h;
    minus[j] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Roots of the characteristic polynomial of a symmetric 2x2 or 3x3
/// matrix, ascending. The 3x3 case uses the trigonometric cubic formula.
pub fn characteristic_roots(m: &DMatrix<f64>) -> Vec<f64> {
    match m.nrows() {
        1 => vec![m[(0, 0)]],
        2 => {
            let tr = m[(0, 0)] + m[(1, 1)];
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
            vec![tr / 2.0 - disc, tr / 2.0 + disc]
        }
        3 => {
            let q = m.trace() / 3.0;
            let p1 = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
            let p2 = (m[(0, 0)] - q).powi(2)
                + (m[(1, 1)] - q).powi(2)
                + (m[(2, 2)] - q).powi(2)
                + 2.0 * p1;
            let p = (p2 / 6.0).sqrt();
            if p == 0.0 {
                return vec![q; 3];
            }
            let bm = (m - DMatrix::identity(3, 3) * q) / p;
            let r = (bm.determinant() / 2.0).clamp(-1.0, 1.0);
            let phi = r.acos() / 3.0;
            let e1 = q + 2.0 * p * phi.cos();
            let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
            let e2 = 3.0 * q - e1 - e3;
            let mut v = vec![e1, e2, e3];
            v.sort_by(f64::total_cmp);
            v
        }
        k => panic!("characteristic roots implemented for n <= 3, got {k}"),
    }
}

/// Closed-form logistic solution of `dx/dt = x (1 - x)`.
pub fn logistic(t: f64, x0: f64) -> f64 {
    x0 / (x0 + (1.0 - x0) * (-t).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_certificate_is_certified() {
        let mut rng = rng(1);
        for m in 1..=8 {
            let (q, c0) = planted_certificate(&mut rng, m);
            let c = DMatrix::from_diagonal(&c0);
            let form = &c * &q + q.transpose() * &c;
            let max = form.symmetric_eigenvalues().max();
            assert!(max < 0.0);
        }
    }

    #[test]
    fn planted_equilibria_are_roots() {
        let mut rng = rng(2);
        for _ in 0..50 {
            let sys = planted_equilibrium(&mut rng);
            let r = &sys.lambda + &sys.a * naive_quasimonomials(&sys.b, &sys.xstar);
            assert!(r.amax() < 1e-12 * (1.0 + sys.lambda.amax()));
        }
    }

    #[test]
    fn skew_instance_is_skew() {
        let sys = skew_qp();
        let q = &sys.b * &sys.a;
        assert_eq!(&q + q.transpose(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn characteristic_roots_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0, 2.0]));
        let r = characteristic_roots(&m);
        for (got, want) in r.iter().zip([-1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn logistic_closed_form() {
        assert!((logistic(10.0, 0.5) - 1.0 / (1.0 + (-10.0f64).exp())).abs() < 1e-15);
    }
}
