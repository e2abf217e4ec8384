//! Fully-connected graphs built from feature maps: affinity kernels,
//! symmetrization, degree normalizations, the scaled Laplacian and the
//! criss-cross mask.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// A signal on an `height x width` grid: row `i` of `values` holds the
/// channels of position `i` in row-major grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    height: usize,
    width: usize,
    values: Matrix<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(height: usize, width: usize, values: Matrix<T>) -> Result<Self> {
        if values.rows() != height * width {
            return shape_err(format!(
                "feature map has {} rows but the grid is {height}x{width}",
                values.rows()
            ));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Treats `values` as a single grid row of `N` positions.
    pub fn flat(values: Matrix<T>) -> Self {
        Self {
            height: 1,
            width: values.rows(),
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn into_values(self) -> Matrix<T> {
        self.values
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Matrix<T>) -> Result<Self> {
        Self::new(self.height, self.width, values)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Raw inner product `phi psi^T`.
    Dot,
    /// `exp(phi psi^T / sqrt(C_s))`, an embedded-Gaussian kernel.
    #[default]
    ExpDot,
}

impl Kernel {
    pub fn name(self) -> &'static str {
        match self {
            Kernel::Dot => "dot",
            Kernel::ExpDot => "exp_dot",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// `D^-1 M`.
    RandomWalk,
    /// `D^-1/2 M D^-1/2` of a symmetrized `M`.
    Symmetric,
}

/// Square affinity matrix together with how it was produced.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix<T> {
    values: Matrix<T>,
    kernel: Kernel,
    normalization: Normalization,
    symmetrized: bool,
    mask_applied: bool,
}

impl<T: Scalar> AffinityMatrix<T> {
    /// Wraps an unnormalized affinity produced outside [`compute_affinity`].
    pub fn from_values(values: Matrix<T>, kernel: Kernel) -> Result<Self> {
        if !values.is_square() {
            return shape_err(format!(
                "affinity must be square, got {}x{}",
                values.rows(),
                values.cols()
            ));
        }
        Ok(Self {
            values,
            kernel,
            normalization: Normalization::None,
            symmetrized: false,
            mask_applied: false,
        })
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn into_values(self) -> Matrix<T> {
        self.values
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn symmetrized(&self) -> bool {
        self.symmetrized
    }

    pub fn mask_applied(&self) -> bool {
        self.mask_applied
    }

    pub fn vertices(&self) -> usize {
        self.values.rows()
    }
}

/// Largest exponent accepted by the `exp_dot` kernel before evaluation.
pub fn exp_limit<T: Scalar>() -> T {
    T::of(700.0).min(T::max_value().ln() - T::one())
}

/// Pairwise affinities `M_ij = f(phi_i, psi_j)`.
pub fn compute_affinity<T: Scalar>(
    phi: &Matrix<T>,
    psi: &Matrix<T>,
    kernel: Kernel,
) -> Result<AffinityMatrix<T>> {
    if phi.shape() != psi.shape() {
        return shape_err(format!(
            "phi is {}x{} but psi is {}x{}",
            phi.rows(),
            phi.cols(),
            psi.rows(),
            psi.cols()
        ));
    }
    if phi.cols() == 0 {
        return shape_err("embeddings have no channels");
    }
    let dots = phi.matmul_nt(psi)?;
    let values = match kernel {
        Kernel::Dot => dots,
        Kernel::ExpDot => {
            let scale = T::one() / T::of(phi.cols() as f64).sqrt();
            let limit = exp_limit::<T>();
            let exponents = dots.scale(scale);
            let worst = exponents
                .as_slice()
                .iter()
                .fold(T::neg_infinity(), |m, &v| m.max(v));
            if worst > limit {
                return Err(Error::Overflow {
                    exponent: worst.to_f64_lossy(),
                    limit: limit.to_f64_lossy(),
                });
            }
            exponents.map(T::exp)
        }
    };
    AffinityMatrix::from_values(values, kernel)
}

/// `C ⊙ M` for a 0/1 mask `C`.
pub fn apply_mask<T: Scalar>(m: &AffinityMatrix<T>, mask: &Matrix<T>) -> Result<AffinityMatrix<T>> {
    if m.normalization != Normalization::None {
        return Err(Error::Precondition("mask must be applied before normalization".into()));
    }
    Ok(AffinityMatrix {
        values: m.values.hadamard(mask)?,
        mask_applied: true,
        ..m.clone()
    })
}

/// `(M + M^T) / 2`, computed once per unordered pair so the result is
/// bit-exactly symmetric.
pub fn symmetrize<T: Scalar>(m: &AffinityMatrix<T>) -> Result<AffinityMatrix<T>> {
    if !m.values.is_square() {
        return shape_err("symmetrize needs a square matrix");
    }
    if m.normalization != Normalization::None {
        return Err(Error::Precondition("symmetrize expects an unnormalized affinity".into()));
    }
    let n = m.values.rows();
    let half = T::of(0.5);
    let mut out = m.values.clone();
    for i in 0..n {
        for j in i..n {
            let v = (m.values[(i, j)] + m.values[(j, i)]) * half;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(AffinityMatrix {
        values: out,
        symmetrized: true,
        ..m.clone()
    })
}

/// Vertex degrees (row sums), validating the entries first.
pub fn degrees<T: Scalar>(m: &Matrix<T>) -> Result<Vec<T>> {
    for i in 0..m.rows() {
        for (j, &v) in m.row(i).iter().enumerate() {
            if v < T::zero() {
                return Err(Error::KernelDomain {
                    row: i,
                    col: j,
                    value: v.to_f64_lossy(),
                });
            }
        }
    }
    let floor = T::tolerance(1e-12);
    let d = m.row_sums();
    if let Some((vertex, &degree)) = d.iter().enumerate().find(|(_, &v)| v <= floor) {
        return Err(Error::DegenerateVertex {
            vertex,
            degree: degree.to_f64_lossy(),
        });
    }
    Ok(d)
}

/// Degree normalization of an unnormalized affinity.
pub fn normalize<T: Scalar>(m: &AffinityMatrix<T>, mode: Normalization) -> Result<AffinityMatrix<T>> {
    if m.normalization != Normalization::None {
        return Err(Error::Precondition("affinity is already normalized".into()));
    }
    let d = degrees(&m.values)?;
    let n = m.values.rows();
    let values = match mode {
        Normalization::None => m.values.clone(),
        Normalization::RandomWalk => {
            Matrix::from_fn(n, n, |i, j| m.values[(i, j)] / d[i])
        }
        Normalization::Symmetric => {
            if !m.symmetrized {
                return Err(Error::Precondition(
                    "symmetric normalization requires a symmetrized affinity".into(),
                ));
            }
            let root: Vec<T> = d.iter().map(|v| v.sqrt()).collect();
            let mut a = Matrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = m.values[(i, j)] / (root[i] * root[j]);
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
            a
        }
    };
    Ok(AffinityMatrix {
        values,
        normalization: mode,
        ..m.clone()
    })
}

/// `L = I - A` for a normalized affinity.
pub fn laplacian<T: Scalar>(a: &AffinityMatrix<T>) -> Result<Matrix<T>> {
    if a.normalization == Normalization::None {
        return Err(Error::Precondition("the Laplacian needs a normalized affinity".into()));
    }
    Matrix::identity(a.vertices()).sub(&a.values)
}

/// `2L / lambda_max - I` with the normalized-Laplacian bound `lambda_max = 2`,
/// which reduces to `-A`.
pub fn scaled_laplacian<T: Scalar>(a: &AffinityMatrix<T>) -> Result<Matrix<T>> {
    if a.normalization == Normalization::None {
        return Err(Error::Precondition(
            "scaled Laplacian needs a normalized affinity".into(),
        ));
    }
    #[cfg(debug_assertions)]
    if a.normalization == Normalization::Symmetric && a.vertices() <= 128 {
        if let Ok(dec) = crate::linalg::jacobi_eigh(&laplacian(a)?) {
            let tol = T::tolerance(1e-9);
            debug_assert!(
                dec.eigenvalues
                    .iter()
                    .all(|&l| l >= -tol && l <= T::of(2.0) + tol),
                "normalized Laplacian spectrum escaped [0, 2]"
            );
        }
    }
    Ok(a.values.neg())
}

/// 0/1 mask linking grid positions that share a row or a column.
pub fn crisscross_mask<T: Scalar>(height: usize, width: usize) -> Matrix<T> {
    let n = height * width;
    Matrix::from_fn(n, n, |i, j| {
        if i / width == j / width || i % width == j % width {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Column-major vectorization: entry `i + j * N` holds `Z[i][j]`.
pub fn flatten_spatial_channel<T: Scalar>(z: &Matrix<T>) -> Matrix<T> {
    let n = z.rows();
    let c = z.cols();
    Matrix::from_fn(n * c, 1, |idx, _| z[(idx % n, idx / n)])
}

/// Inverse of [`flatten_spatial_channel`].
pub fn unflatten_spatial_channel<T: Scalar>(v: &Matrix<T>, rows: usize, cols: usize) -> Result<Matrix<T>> {
    if v.cols() != 1 || v.rows() != rows * cols {
        return shape_err(format!(
            "cannot unflatten {}x{} into {rows}x{cols}",
            v.rows(),
            v.cols()
        ));
    }
    Ok(Matrix::from_fn(rows, cols, |i, j| v[(i + j * rows, 0)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{jacobi_eigh, rel_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    fn raw(values: Matrix<f64>) -> AffinityMatrix<f64> {
        AffinityMatrix::from_values(values, Kernel::Dot).unwrap()
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn affinity_examples() {
        let eye = Matrix::<f64>::identity(2);
        assert_eq!(compute_affinity(&eye, &eye, Kernel::Dot).unwrap().values(), &eye);
        let zero = Matrix::<f64>::zeros(4, 3);
        let ones = compute_affinity(&zero, &zero, Kernel::ExpDot).unwrap();
        assert!(ones.values().as_slice().iter().all(|&v| v == 1.0));
        assert_eq!(ones.vertices(), 4);
    }

    #[test]
    fn dot_affinity_matches_pairwise_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi = random(5, 2, &mut rng);
        let psi = random(5, 2, &mut rng);
        let a = compute_affinity(&phi, &psi, Kernel::Dot).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let mut dot = 0.0;
                for c in 0..2 {
                    dot += phi[(i, c)] * psi[(j, c)];
                }
                assert_eq!(a.values()[(i, j)], dot);
            }
        }
    }

    #[test]
    fn affinity_errors() {
        let a = Matrix::<f64>::zeros(3, 2);
        let b = Matrix::<f64>::zeros(2, 2);
        assert!(matches!(compute_affinity(&a, &b, Kernel::Dot), Err(Error::Shape(_))));
        let big = Matrix::from_fn(2, 1, |_, _| 30.0);
        assert!(matches!(
            compute_affinity(&big, &big, Kernel::ExpDot),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn symmetrize_examples() {
        let s = symmetrize(&raw(m(&[&[1.0, 2.0], &[0.0, 3.0]]))).unwrap();
        assert_eq!(s.values(), &m(&[&[1.0, 1.0], &[1.0, 3.0]]));
        assert!(s.symmetrized());
        let sym = m(&[&[1.0, 0.3], &[0.3, 2.0]]);
        assert_eq!(symmetrize(&raw(sym.clone())).unwrap().values(), &sym);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = symmetrize(&raw(random(6, 6, &mut rng))).unwrap();
        assert_eq!(r.values(), &r.values().transpose());
    }

    #[test]
    fn normalize_examples() {
        let rw = normalize(&raw(Matrix::from_fn(2, 2, |_, _| 1.0)), Normalization::RandomWalk).unwrap();
        assert_eq!(rw.values(), &Matrix::from_fn(2, 2, |_, _| 0.5));
        let perm = symmetrize(&raw(m(&[&[0.0, 1.0], &[1.0, 0.0]]))).unwrap();
        let s = normalize(&perm, Normalization::Symmetric).unwrap();
        assert_eq!(s.values(), perm.values());
        let eig = jacobi_eigh(s.values()).unwrap();
        assert!((eig.eigenvalues[0] + 1.0).abs() < 1e-14 && (eig.eigenvalues[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn symmetric_normalization_matches_explicit_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let r = Matrix::from_fn(5, 5, |_, _| rng.gen_range(0.1..2.0));
        let mhat = symmetrize(&raw(r)).unwrap();
        let a = normalize(&mhat, Normalization::Symmetric).unwrap();
        let mv = mhat.values();
        for i in 0..5 {
            let di: f64 = (0..5).map(|k| mv[(i, k)]).sum();
            for j in 0..5 {
                let dj: f64 = (0..5).map(|k| mv[(j, k)]).sum();
                let expect = (1.0 / di.sqrt()) * mv[(i, j)] * (1.0 / dj.sqrt());
                assert!((a.values()[(i, j)] - expect).abs() <= 1e-15 * expect.abs().max(1.0));
            }
        }
        assert!(a.values().is_exactly_symmetric());
    }

    #[test]
    fn normalize_errors() {
        let neg = raw(m(&[&[1.0, -0.5], &[0.2, 1.0]]));
        assert!(matches!(
            normalize(&neg, Normalization::RandomWalk),
            Err(Error::KernelDomain { row: 0, col: 1, .. })
        ));
        let dead = raw(m(&[&[1.0, 1.0], &[0.0, 0.0]]));
        assert!(matches!(
            normalize(&dead, Normalization::RandomWalk),
            Err(Error::DegenerateVertex { vertex: 1, .. })
        ));
        let unsym = raw(m(&[&[1.0, 1.0], &[1.0, 1.0]]));
        assert!(matches!(
            normalize(&unsym, Normalization::Symmetric),
            Err(Error::Precondition(_))
        ));
        let once = normalize(&unsym, Normalization::RandomWalk).unwrap();
        assert!(normalize(&once, Normalization::RandomWalk).is_err());
    }

    #[test]
    fn scaled_laplacian_examples() {
        let eye = symmetrize(&raw(Matrix::identity(3))).unwrap();
        let a = normalize(&eye, Normalization::Symmetric).unwrap();
        assert_eq!(scaled_laplacian(&a).unwrap(), Matrix::identity(3).neg());
        let half = normalize(&raw(Matrix::from_fn(2, 2, |_, _| 1.0)), Normalization::RandomWalk).unwrap();
        assert_eq!(scaled_laplacian(&half).unwrap(), Matrix::from_fn(2, 2, |_, _| -0.5));
        assert!(matches!(
            scaled_laplacian(&raw(Matrix::identity(2))),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn normalized_laplacian_spectrum_in_zero_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let phi = random(10, 3, &mut rng);
            let psi = random(10, 3, &mut rng);
            let mhat = symmetrize(&compute_affinity(&phi, &psi, Kernel::ExpDot).unwrap()).unwrap();
            let a = normalize(&mhat, Normalization::Symmetric).unwrap();
            let eig = jacobi_eigh(&laplacian(&a).unwrap()).unwrap();
            assert!(eig.eigenvalues.iter().all(|&l| (-1e-9..=2.0 + 1e-9).contains(&l)));
        }
    }

    #[test]
    fn crisscross_examples() {
        let line: Matrix<f64> = crisscross_mask(1, 4);
        assert!(line.as_slice().iter().all(|&v| v == 1.0));
        let c: Matrix<f64> = crisscross_mask(2, 2);
        assert_eq!(c.row(0), &[1.0, 1.0, 1.0, 0.0]);
        for (h, w) in [(3, 4), (5, 2), (1, 1)] {
            let c: Matrix<f64> = crisscross_mask(h, w);
            assert_eq!(c, c.transpose());
            assert!((0..h * w).all(|i| c[(i, i)] == 1.0));
            assert!(c.row_sums().iter().all(|&s| s == (h + w - 1) as f64));
        }
    }

    #[test]
    fn flatten_examples() {
        let z = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(flatten_spatial_channel(&z).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        let single = m(&[&[5.0, 6.0, 7.0]]);
        assert_eq!(flatten_spatial_channel(&single).as_slice(), single.as_slice());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random(6, 3, &mut rng);
        assert_eq!(unflatten_spatial_channel(&flatten_spatial_channel(&r), 6, 3).unwrap(), r);
        assert!(unflatten_spatial_channel(&r, 6, 3).is_err());
    }

    #[test]
    fn random_walk_is_row_stochastic_and_similar_to_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let phi = random(12, 4, &mut rng);
        let psi = random(12, 4, &mut rng);
        let mhat = symmetrize(&compute_affinity(&phi, &psi, Kernel::ExpDot).unwrap()).unwrap();
        let rw = normalize(&mhat, Normalization::RandomWalk).unwrap();
        let ones = Matrix::from_fn(12, 1, |_, _| 1.0);
        assert!(rel_error(&rw.values().matmul(&ones).unwrap(), &ones).unwrap() < 1e-10);
        // D^-1 M and D^-1/2 M D^-1/2 are similar; compare through the
        // symmetric one and the trace of powers.
        let sym = normalize(&mhat, Normalization::Symmetric).unwrap();
        let mut p_rw = Matrix::identity(12);
        let mut p_sym = Matrix::identity(12);
        for _ in 0..4 {
            p_rw = p_rw.matmul(rw.values()).unwrap();
            p_sym = p_sym.matmul(sym.values()).unwrap();
            assert!((p_rw.trace() - p_sym.trace()).abs() < 1e-10);
        }
    }
}
