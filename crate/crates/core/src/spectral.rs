//! Graph Fourier transform and polynomial graph filters.
//!
//! Filters are applied in the vertex domain as `sum_k A^k Z W_k`, never
//! materializing `A^k`. Two independent references back this up: the
//! eigendecomposition route in [`spectral_oracle`], and the true Chebyshev
//! recursion on the scaled Laplacian in [`cheb_recursion`] /
//! [`cheb_filter_apply`].

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::{AffinityMatrix, Normalization};
use crate::linalg::{jacobi_eigh, Matrix};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Powers of the affinity, `A^k`.
    Monomial,
    /// Chebyshev polynomials of the scaled Laplacian, `T_k(-A)`.
    Chebyshev,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FilterCoefficients<T> {
    /// One coefficient per order, shared by every channel.
    Scalar(Vec<T>),
    /// One `C_s x C_out` channel-mixing matrix per order.
    Weights(Vec<Matrix<T>>),
}

/// Coefficients of a `K`-term polynomial graph filter.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterSpec<T> {
    order: usize,
    basis: Basis,
    coeffs: FilterCoefficients<T>,
}

impl<T: Scalar> FilterSpec<T> {
    /// Uses the first `order` coefficients of `coeffs`.
    pub fn new(order: usize, basis: Basis, coeffs: FilterCoefficients<T>) -> Result<Self> {
        if order == 0 {
            return Err(Error::Spec("filter order must be at least 1".into()));
        }
        let available = match &coeffs {
            FilterCoefficients::Scalar(t) => t.len(),
            FilterCoefficients::Weights(w) => {
                if let Some(first) = w.first() {
                    if w.iter().any(|m| m.shape() != first.shape()) {
                        return Err(Error::Spec("weight matrices differ in shape".into()));
                    }
                }
                w.len()
            }
        };
        if order > available {
            return Err(Error::Spec(format!(
                "order {order} exceeds the {available} supplied coefficients"
            )));
        }
        Ok(Self {
            order,
            basis,
            coeffs,
        })
    }

    pub fn monomial(theta: Vec<T>) -> Result<Self> {
        Self::new(theta.len(), Basis::Monomial, FilterCoefficients::Scalar(theta))
    }

    pub fn monomial_weights(weights: Vec<Matrix<T>>) -> Result<Self> {
        Self::new(weights.len(), Basis::Monomial, FilterCoefficients::Weights(weights))
    }

    pub fn chebyshev(theta_hat: Vec<T>) -> Result<Self> {
        Self::new(theta_hat.len(), Basis::Chebyshev, FilterCoefficients::Scalar(theta_hat))
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn coefficients(&self) -> &FilterCoefficients<T> {
        &self.coeffs
    }

    /// Rewrites a Chebyshev-basis filter in the monomial basis of `A`
    /// (using `T_k(-A)`); monomial specs are returned unchanged.
    pub fn to_monomial(&self) -> Result<Self> {
        if self.basis == Basis::Monomial {
            return Ok(self.clone());
        }
        let table = chebyshev_in_powers_of_affinity::<T>(self.order);
        let coeffs = match &self.coeffs {
            FilterCoefficients::Scalar(t) => FilterCoefficients::Scalar(
                (0..self.order)
                    .map(|j| (0..self.order).map(|k| t[k] * table[k][j]).sum())
                    .collect(),
            ),
            FilterCoefficients::Weights(w) => {
                let (r, c) = w[0].shape();
                let mut out = Vec::with_capacity(self.order);
                for j in 0..self.order {
                    let mut acc = Matrix::zeros(r, c);
                    for (k, wk) in w.iter().take(self.order).enumerate() {
                        acc.add_assign(&wk.scale(table[k][j]))?;
                    }
                    out.push(acc);
                }
                FilterCoefficients::Weights(out)
            }
        };
        Self::new(self.order, Basis::Monomial, coeffs)
    }
}

/// `table[k][j]` = coefficient of `x^j` in `T_k(-x)`.
pub fn chebyshev_in_powers_of_affinity<T: Scalar>(order: usize) -> Vec<Vec<T>> {
    let mut t: Vec<Vec<T>> = Vec::with_capacity(order);
    for k in 0..order {
        let mut row = vec![T::zero(); order];
        match k {
            0 => row[0] = T::one(),
            1 => row[1] = T::one(),
            _ => {
                for j in 1..order {
                    row[j] = T::of(2.0) * t[k - 1][j - 1];
                }
                for j in 0..order {
                    row[j] -= t[k - 2][j];
                }
            }
        }
        t.push(row);
    }
    for row in &mut t {
        for (j, v) in row.iter_mut().enumerate() {
            if j % 2 == 1 {
                *v = -*v;
            }
        }
    }
    t
}

fn check_orthonormal<T: Scalar>(u: &Matrix<T>) -> Result<()> {
    if !u.is_square() {
        return shape_err("basis must be square");
    }
    let gram = u.matmul_tn(u)?;
    let dev = gram.sub(&Matrix::identity(u.rows()))?.max_abs();
    if dev > T::tolerance(1e-9) {
        return Err(Error::Precondition(format!(
            "basis is not orthonormal (max |U^T U - I| = {dev:e})"
        )));
    }
    Ok(())
}

/// Graph Fourier transform `U^T z` of every column of `z`.
pub fn gft<T: Scalar>(u: &Matrix<T>, z: &Matrix<T>) -> Result<Matrix<T>> {
    check_orthonormal(u)?;
    u.matmul_tn(z)
}

pub fn inverse_gft<T: Scalar>(u: &Matrix<T>, z_hat: &Matrix<T>) -> Result<Matrix<T>> {
    u.matmul(z_hat)
}

/// `U diag(omega) U^T z`: a filter with one free response per eigenvector.
pub fn apply_generalized_filter<T: Scalar>(
    u: &Matrix<T>,
    omega: &[T],
    z: &Matrix<T>,
) -> Result<Matrix<T>> {
    if omega.len() != u.cols() || z.rows() != u.rows() {
        return shape_err(format!(
            "basis {}x{}, {} responses, signal {}x{}",
            u.rows(),
            u.cols(),
            omega.len(),
            z.rows(),
            z.cols()
        ));
    }
    let mut z_hat = u.matmul_tn(z)?;
    for (l, &w) in omega.iter().enumerate() {
        for v in z_hat.row_mut(l) {
            *v *= w;
        }
    }
    u.matmul(&z_hat)
}

/// `[T_0(L), ..., T_{K-1}(L)]` by the three-term recursion.
pub fn cheb_recursion<T: Scalar>(l_tilde: &Matrix<T>, k: usize) -> Result<Vec<Matrix<T>>> {
    if !l_tilde.is_square() {
        return shape_err("scaled Laplacian must be square");
    }
    if k == 0 {
        return Err(Error::Spec("need at least one Chebyshev term".into()));
    }
    let n = l_tilde.rows();
    let mut terms = vec![Matrix::identity(n)];
    if k > 1 {
        terms.push(l_tilde.clone());
    }
    for i in 2..k {
        let next = l_tilde.matmul(&terms[i - 1])?.scale(T::of(2.0)).sub(&terms[i - 2])?;
        terms.push(next);
    }
    Ok(terms)
}

/// `sum_k theta_k T_k(L) Z`, recursing on the signal rather than the matrix.
pub fn cheb_filter_apply<T: Scalar>(l_tilde: &Matrix<T>, z: &Matrix<T>, theta_hat: &[T]) -> Result<Matrix<T>> {
    if theta_hat.is_empty() {
        return Err(Error::Spec("need at least one Chebyshev coefficient".into()));
    }
    let mut prev = z.clone();
    let mut out = prev.scale(theta_hat[0]);
    if theta_hat.len() == 1 {
        return Ok(out);
    }
    let mut cur = l_tilde.matmul(z)?;
    out.add_assign(&cur.scale(theta_hat[1]))?;
    for &t in &theta_hat[2..] {
        let next = l_tilde.matmul(&cur)?.scale(T::of(2.0)).sub(&prev)?;
        out.add_assign(&next.scale(t))?;
        prev = cur;
        cur = next;
    }
    Ok(out)
}

/// `sum_k A^k Z W_k` (or `theta_k A^k Z`) on an arbitrary square operator.
///
/// Powers are applied to the signal one at a time, so the cost is
/// `O(K N^2 C)`.
pub fn polynomial_filter<T: Scalar>(a: &Matrix<T>, z: &Matrix<T>, spec: &FilterSpec<T>) -> Result<Matrix<T>> {
    if !a.is_square() || a.rows() != z.rows() {
        return shape_err(format!(
            "operator {}x{} cannot filter a {}x{} signal",
            a.rows(),
            a.cols(),
            z.rows(),
            z.cols()
        ));
    }
    let spec = spec.to_monomial()?;
    let term = |k: usize, p: &Matrix<T>| -> Result<Matrix<T>> {
        match &spec.coeffs {
            FilterCoefficients::Scalar(t) => Ok(p.scale(t[k])),
            FilterCoefficients::Weights(w) => p.matmul(&w[k]),
        }
    };
    let mut power = z.clone();
    let mut out = term(0, &power)?;
    for k in 1..spec.order {
        power = a.matmul(&power)?;
        out.add_assign(&term(k, &power)?)?;
    }
    Ok(out)
}

/// Polynomial filter on a normalized affinity.
pub fn poly_filter_apply<T: Scalar>(
    a: &AffinityMatrix<T>,
    z: &Matrix<T>,
    spec: &FilterSpec<T>,
) -> Result<Matrix<T>> {
    if a.normalization() == Normalization::None {
        return Err(Error::Precondition("polynomial filters expect a normalized affinity".into()));
    }
    polynomial_filter(a.values(), z, spec)
}

/// Ground truth for [`poly_filter_apply`]: eigendecompose `A`, evaluate the
/// response `p(lambda) = sum_k theta_k lambda^k` and return
/// `U diag(p(lambda)) U^T Z`.
pub fn spectral_oracle<T: Scalar>(a: &AffinityMatrix<T>, z: &Matrix<T>, theta: &[T]) -> Result<Matrix<T>> {
    let spec = FilterSpec::monomial(theta.to_vec())?;
    spectral_oracle_spec(a, z, &spec)
}

/// Eigendecomposition reference for any [`FilterSpec`], scalar or
/// multi-channel: `sum_k U diag(lambda^k) U^T Z W_k`.
pub fn spectral_oracle_spec<T: Scalar>(
    a: &AffinityMatrix<T>,
    z: &Matrix<T>,
    spec: &FilterSpec<T>,
) -> Result<Matrix<T>> {
    if !a.values().is_exactly_symmetric() {
        return Err(Error::Precondition(
            "spectral oracle needs an exactly symmetric affinity (real spectrum)".into(),
        ));
    }
    if z.rows() != a.vertices() {
        return shape_err("signal length does not match the graph");
    }
    let spec = spec.to_monomial()?;
    let dec = jacobi_eigh(a.values())?;
    let u = &dec.eigenvectors;
    let z_hat = u.matmul_tn(z)?;
    let response = |k: usize| -> Vec<T> { dec.eigenvalues.iter().map(|&l| l.powi(k as i32)).collect() };
    match &spec.coeffs {
        FilterCoefficients::Scalar(theta) => {
            let p: Vec<T> = (0..a.vertices())
                .map(|l| {
                    (0..spec.order)
                        .map(|k| theta[k] * dec.eigenvalues[l].powi(k as i32))
                        .sum()
                })
                .collect();
            let mut filtered = z_hat;
            for (l, &w) in p.iter().enumerate() {
                for v in filtered.row_mut(l) {
                    *v *= w;
                }
            }
            u.matmul(&filtered)
        }
        FilterCoefficients::Weights(w) => {
            let mut out: Option<Matrix<T>> = None;
            for (k, wk) in w.iter().take(spec.order).enumerate() {
                let mut filtered = z_hat.clone();
                for (l, r) in response(k).into_iter().enumerate() {
                    for v in filtered.row_mut(l) {
                        *v *= r;
                    }
                }
                let term = u.matmul(&filtered)?.matmul(wk)?;
                match out.as_mut() {
                    Some(acc) => acc.add_assign(&term)?,
                    None => out = Some(term),
                }
            }
            Ok(out.expect("order >= 1"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{compute_affinity, normalize, scaled_laplacian, symmetrize, Kernel};
    use crate::linalg::rel_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn sym_affinity(n: usize, rng: &mut ChaCha8Rng) -> AffinityMatrix<f64> {
        let phi = random(n, 3, rng);
        let psi = random(n, 3, rng);
        let m = compute_affinity(&phi, &psi, Kernel::ExpDot).unwrap();
        normalize(&symmetrize(&m).unwrap(), Normalization::Symmetric).unwrap()
    }

    #[test]
    fn gft_identity_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random(6, 1, &mut rng);
        assert_eq!(gft(&Matrix::identity(6), &z).unwrap(), z);
        let a = sym_affinity(16, &mut rng);
        let u = jacobi_eigh(a.values()).unwrap().eigenvectors;
        let z = random(16, 1, &mut rng);
        let zh = gft(&u, &z).unwrap();
        assert!((zh.frobenius_norm() - z.frobenius_norm()).abs() < 1e-10);
        let back = inverse_gft(&u, &zh).unwrap();
        assert!(rel_error(&back, &z).unwrap() <= 1e-12);
    }

    #[test]
    fn gft_rejects_non_orthonormal() {
        let u = Matrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]).unwrap();
        let z = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(matches!(gft(&u, &z), Err(Error::Precondition(_))));
    }

    #[test]
    fn generalized_filter_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = sym_affinity(10, &mut rng);
        let dec = jacobi_eigh(a.values()).unwrap();
        let z = random(10, 1, &mut rng);
        let u = &dec.eigenvectors;
        let same = apply_generalized_filter(u, &[1.0; 10], &z).unwrap();
        assert!(rel_error(&same, &z).unwrap() < 1e-12);
        let zero = apply_generalized_filter(u, &[0.0; 10], &z).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
        let az = apply_generalized_filter(u, &dec.eigenvalues, &z).unwrap();
        assert!(az.sub(&a.values().matmul(&z).unwrap()).unwrap().max_abs() < 1e-9);
        assert!(apply_generalized_filter(u, &[1.0; 9], &z).is_err());
    }

    #[test]
    fn recursion_first_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let l = random(4, 4, &mut rng);
        let t = cheb_recursion(&l, 2).unwrap();
        assert_eq!(t, vec![Matrix::identity(4), l.clone()]);
        let t = cheb_recursion(&l, 3).unwrap();
        let expect = l.matmul(&l).unwrap().scale(2.0).sub(&Matrix::identity(4)).unwrap();
        assert!(t[2].sub(&expect).unwrap().max_abs() < 1e-14);
        assert!(cheb_recursion(&Matrix::<f64>::zeros(2, 3), 2).is_err());
    }

    #[test]
    fn recursion_matches_cosine_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = sym_affinity(12, &mut rng);
        let lt = scaled_laplacian(&a).unwrap();
        let dec = jacobi_eigh(&lt).unwrap();
        let terms = cheb_recursion(&lt, 7).unwrap();
        for (k, tk) in terms.iter().enumerate() {
            let closed = dec.apply_response(|l| (k as f64 * l.clamp(-1.0, 1.0).acos()).cos());
            assert!(tk.sub(&closed).unwrap().max_abs() < 1e-8, "k = {k}");
        }
    }

    #[test]
    fn monomial_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = sym_affinity(8, &mut rng);
        let z = random(8, 2, &mut rng);
        let keep = poly_filter_apply(&a, &z, &FilterSpec::monomial(vec![1.0, 0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(keep, z);
        let az = poly_filter_apply(&a, &z, &FilterSpec::monomial(vec![0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(az, a.values().matmul(&z).unwrap());
    }

    #[test]
    fn monomial_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let a = sym_affinity(16, &mut rng);
        let z = random(16, 3, &mut rng);
        let theta: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = poly_filter_apply(&a, &z, &FilterSpec::monomial(theta.clone()).unwrap()).unwrap();
        let slow = spectral_oracle(&a, &z, &theta).unwrap();
        assert!(rel_error(&fast, &slow).unwrap() <= 1e-9);

        let a = sym_affinity(12, &mut rng);
        let z = random(12, 2, &mut rng);
        let theta: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = poly_filter_apply(&a, &z, &FilterSpec::monomial(theta.clone()).unwrap()).unwrap();
        assert!(rel_error(&fast, &spectral_oracle(&a, &z, &theta).unwrap()).unwrap() <= 1e-9);
    }

    #[test]
    fn oracle_trivial_responses() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let a = sym_affinity(9, &mut rng);
        let z = random(9, 2, &mut rng);
        let az = spectral_oracle(&a, &z, &[0.0, 1.0]).unwrap();
        assert!(rel_error(&az, &a.values().matmul(&z).unwrap()).unwrap() < 1e-10);
        assert!(rel_error(&spectral_oracle(&a, &z, &[1.0]).unwrap(), &z).unwrap() < 1e-10);
    }

    #[test]
    fn oracle_rejects_asymmetric() {
        let m = AffinityMatrix::from_values(
            Matrix::from_rows(&[[1.0, 2.0], [1.0, 1.0]]).unwrap(),
            Kernel::Dot,
        )
        .unwrap();
        let a = normalize(&m, Normalization::RandomWalk).unwrap();
        let z = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        assert!(matches!(spectral_oracle(&a, &z, &[1.0]), Err(Error::Precondition(_))));
    }

    #[test]
    fn multichannel_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let a = sym_affinity(10, &mut rng);
        let z = random(10, 3, &mut rng);
        let w: Vec<Matrix<f64>> = (0..4).map(|_| random(3, 5, &mut rng)).collect();
        let spec = FilterSpec::monomial_weights(w).unwrap();
        let fast = poly_filter_apply(&a, &z, &spec).unwrap();
        assert_eq!(fast.shape(), (10, 5));
        assert!(rel_error(&fast, &spectral_oracle_spec(&a, &z, &spec).unwrap()).unwrap() < 1e-9);
    }

    #[test]
    fn chebyshev_basis_change_preserves_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let a = sym_affinity(14, &mut rng);
        let z = random(14, 2, &mut rng);
        let lt = scaled_laplacian(&a).unwrap();
        let theta_hat: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let direct = cheb_filter_apply(&lt, &z, &theta_hat).unwrap();
        let spec = FilterSpec::chebyshev(theta_hat).unwrap();
        let via_powers = poly_filter_apply(&a, &z, &spec).unwrap();
        assert!(rel_error(&via_powers, &direct).unwrap() < 1e-8);
    }

    #[test]
    fn chebyshev_table_low_orders() {
        // T_2(-x) = 2x^2 - 1, T_3(-x) = -(4x^3 - 3x)
        let t = chebyshev_in_powers_of_affinity::<f64>(4);
        assert_eq!(t[2], vec![-1.0, 0.0, 2.0, 0.0]);
        assert_eq!(t[3], vec![0.0, 3.0, 0.0, -4.0]);
    }

    #[test]
    fn spec_validation() {
        let w = vec![Matrix::<f64>::zeros(2, 2), Matrix::zeros(2, 3)];
        assert!(matches!(FilterSpec::monomial_weights(w), Err(Error::Spec(_))));
        let theta = FilterCoefficients::Scalar(vec![1.0, 2.0]);
        assert!(matches!(FilterSpec::new(3, Basis::Monomial, theta), Err(Error::Spec(_))));
        assert!(FilterSpec::<f64>::monomial(vec![]).is_err());
    }

    #[test]
    fn requires_normalized_affinity() {
        let m = AffinityMatrix::from_values(Matrix::<f64>::identity(2), Kernel::Dot).unwrap();
        let spec = FilterSpec::monomial(vec![1.0]).unwrap();
        assert!(poly_filter_apply(&m, &Matrix::zeros(2, 1), &spec).is_err());
    }
}
