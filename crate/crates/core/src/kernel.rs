//! Kernels over the standardized domain and their warped, domain-specific
//! counterparts.
//!
//! The standardized kernel is the unit squared-exponential
//! `k_uu(z, z') = exp(-½‖z − z'‖²)`. A domain with projection `W` (q×d) and
//! signal scale `σ_s` sees `f(x) = σ_s·u(Wx)`, which gives
//!
//! * `k_fu(x, z)  = σ_s·exp(-½‖Wx − z‖²)`
//! * `k_ff(x, x') = σ_s²·exp(-½(x − x')ᵀWᵀW(x − x'))`

use alloc::format;
use alloc::vec::Vec;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{sq_dist, Cholesky, Matrix};
use crate::rng;

pub const DEFAULT_JITTER: f64 = 1e-8;

#[inline]
fn unit_rbf(sq: f64) -> f64 {
    libm::exp(-0.5 * sq)
}

pub fn k_uu(z: &[f64], z2: &[f64]) -> Result<f64> {
    ensure_dim("k_uu", z.len(), z2.len())?;
    Ok(unit_rbf(sq_dist(z, z2)))
}

/// Per-domain parameters: projection `W` (q×d), signal scale and noise std.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainParams {
    pub projection: Matrix,
    pub signal_scale: f64,
    pub noise_std: f64,
}

impl DomainParams {
    pub fn new(projection: Matrix, signal_scale: f64, noise_std: f64) -> Result<Self> {
        if !(signal_scale > 0.0) || !(noise_std > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "signal scale and noise std must be positive (got {signal_scale}, {noise_std})"
            )));
        }
        Ok(Self {
            projection,
            signal_scale,
            noise_std,
        })
    }

    /// Dimension q of the standardized domain.
    pub fn std_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.projection.matvec(x)
    }
}

pub fn k_fu(x: &[f64], z: &[f64], params: &DomainParams) -> Result<f64> {
    let wx = params.project(x)?;
    ensure_dim("k_fu", wx.len(), z.len())?;
    Ok(params.signal_scale * unit_rbf(sq_dist(&wx, z)))
}

pub fn k_ff(x: &[f64], x2: &[f64], params: &DomainParams) -> Result<f64> {
    ensure_dim("k_ff", x.len(), x2.len())?;
    let diff: Vec<f64> = x.iter().zip(x2).map(|(a, b)| a - b).collect();
    let wd = params.project(&diff)?;
    let s2 = params.signal_scale * params.signal_scale;
    Ok(s2 * unit_rbf(wd.iter().map(|v| v * v).sum()))
}

/// Projects every row of `x` (n×d) through `w` (q×d), giving an n×q matrix.
pub fn project_rows(x: &Matrix, w: &Matrix) -> Result<Matrix> {
    ensure_dim("project_rows", w.cols(), x.cols())?;
    let mut out = Matrix::zeros(x.rows(), w.rows());
    for i in 0..x.rows() {
        let xi = x.row(i);
        for (o, wr) in out.row_mut(i).iter_mut().zip(0..w.rows()) {
            *o = crate::linalg::dot(w.row(wr), xi);
        }
    }
    Ok(out)
}

/// `K_DU` for inputs `x` (n×d), inducing points `z` (m×q) and an explicit
/// projection `w` (q×d).
pub fn cross_covariance(x: &Matrix, z: &Matrix, w: &Matrix, signal_scale: f64) -> Result<Matrix> {
    ensure_dim("cross_covariance", w.rows(), z.cols())?;
    let projected = project_rows(x, w)?;
    let mut out = Matrix::zeros(x.rows(), z.rows());
    for i in 0..x.rows() {
        let p = projected.row(i);
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = signal_scale * unit_rbf(sq_dist(p, z.row(j)));
        }
    }
    Ok(out)
}

/// The m inducing inputs shared by every agent, with their Gram matrix and
/// the factorization of `Kuu + jitter·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedVocabulary {
    points: Matrix,
    jitter: f64,
    kuu: Matrix,
    factor: Cholesky,
    kuu_inv: Matrix,
}

impl StandardizedVocabulary {
    pub fn new(points: Matrix, jitter: f64) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::InvalidArgument("vocabulary must contain at least one point".into()));
        }
        if !(jitter >= 0.0) {
            return Err(Error::InvalidArgument(format!("jitter must be nonnegative (got {jitter})")));
        }
        let m = points.rows();
        for i in 0..m {
            for j in 0..i {
                if sq_dist(points.row(i), points.row(j)) == 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "vocabulary points {j} and {i} coincide"
                    )));
                }
            }
        }
        let kuu = Matrix::from_fn(m, m, |i, j| {
            if i == j {
                1.0
            } else {
                unit_rbf(sq_dist(points.row(i), points.row(j)))
            }
        });
        let mut jittered = kuu.clone();
        jittered.add_to_diagonal(jitter);
        let factor = Cholesky::new(&jittered)?;
        let kuu_inv = factor.inverse();
        Ok(Self {
            points,
            jitter,
            kuu,
            factor,
            kuu_inv,
        })
    }

    /// Draws a pool of standard-normal candidates in `R^q` and greedily keeps
    /// the `m` that maximize the minimum pairwise distance.
    pub fn select(m: usize, q: usize, seed: u64, jitter: f64) -> Result<Self> {
        if m == 0 || q == 0 {
            return Err(Error::InvalidArgument("vocabulary size and dimension must be positive".into()));
        }
        let mut rng = rng::rng_from_seed(seed);
        let pool_size = (10 * m).max(64);
        let pool = rng::normal_matrix(&mut rng, pool_size, q);
        let mut chosen: Vec<usize> = Vec::with_capacity(m);
        let mut min_dist = alloc::vec![f64::INFINITY; pool_size];
        let mut current = 0usize;
        for _ in 0..m {
            chosen.push(current);
            min_dist[current] = -1.0;
            let c = pool.row(current);
            for (i, md) in min_dist.iter_mut().enumerate() {
                if *md >= 0.0 {
                    *md = md.min(sq_dist(pool.row(i), c));
                }
            }
            current = min_dist
                .iter()
                .enumerate()
                .fold((0, -1.0), |best, (i, &d)| if d > best.1 { (i, d) } else { best })
                .0;
        }
        let rows: Vec<&[f64]> = chosen.iter().map(|&i| pool.row(i)).collect();
        Self::new(Matrix::from_rows(&rows)?, jitter)
    }

    pub fn size(&self) -> usize {
        self.points.rows()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Raw Gram matrix (unit diagonal, no jitter).
    pub fn kuu(&self) -> &Matrix {
        &self.kuu
    }

    /// `Kuu + jitter·I`, the prior covariance of the inducing outputs.
    pub fn prior_covariance(&self) -> Matrix {
        let mut k = self.kuu.clone();
        k.add_to_diagonal(self.jitter);
        k
    }

    pub fn factor(&self) -> &Cholesky {
        &self.factor
    }

    /// `(Kuu + jitter·I)⁻¹`
    pub fn kuu_inv(&self) -> &Matrix {
        &self.kuu_inv
    }
}

/// `K_DU` (n×m) for the domain described by `params`.
pub fn gram_cross(x: &Matrix, vocab: &StandardizedVocabulary, params: &DomainParams) -> Result<Matrix> {
    ensure_dim("gram_cross", params.input_dim(), x.cols())?;
    ensure_dim("gram_cross", vocab.dim(), params.std_dim())?;
    cross_covariance(x, vocab.points(), &params.projection, params.signal_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(w: Matrix, s: f64) -> DomainParams {
        DomainParams::new(w, s, 0.1).unwrap()
    }

    #[test]
    fn k_uu_closed_forms() {
        assert_eq!(k_uu(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
        assert!((k_uu(&[0.0, 0.0], &[1.0, 1.0]).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert!((k_uu(&[0.0], &[1.0]).unwrap() - 0.606_530_659_712_633_4).abs() < 1e-15);
        assert!(matches!(k_uu(&[0.0], &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn k_fu_closed_forms() {
        let w = Matrix::from_rows(&[[2.0, 0.0], [0.0, 1.0]]).unwrap();
        let p = params(w, 1.7);
        // W·x == z
        assert_eq!(k_fu(&[0.5, 1.0], &[1.0, 1.0], &p).unwrap(), 1.7);
        let p1 = params(Matrix::identity(2), 1.0);
        let (x, z) = ([0.2, -0.4], [1.0, 0.3]);
        assert_eq!(k_fu(&x, &z, &p1).unwrap(), k_uu(&x, &z).unwrap());
        let p2 = params(Matrix::identity(2), 2.0);
        let v = k_fu(&[0.0, 0.0], &[1.0, 1.0], &p2).unwrap();
        assert!((v - 0.735_758_882_342_884_6).abs() < 1e-15);
        assert!(k_fu(&[0.0, 0.0], &[1.0], &p2).is_err());
    }

    #[test]
    fn k_ff_closed_forms() {
        let w = Matrix::from_rows(&[[1.2, -0.3], [0.4, 0.9]]).unwrap();
        let p = params(w, 1.5);
        assert!((k_ff(&[0.1, 0.2], &[0.1, 0.2], &p).unwrap() - 2.25).abs() < 1e-15);
        let p1 = params(Matrix::identity(2), 1.0);
        assert!(
            (k_ff(&[0.1, 0.7], &[-0.5, 0.2], &p1).unwrap() - k_uu(&[0.1, 0.7], &[-0.5, 0.2]).unwrap()).abs()
                < 1e-15
        );
        assert!(k_ff(&[0.1], &[0.1, 0.2], &p).is_err());
    }

    #[test]
    fn gram_cross_edge_cases() {
        let vocab = StandardizedVocabulary::new(Matrix::from_rows(&[[1.0, 1.0], [-1.0, 0.5]]).unwrap(), DEFAULT_JITTER)
            .unwrap();
        let p = params(Matrix::identity(2), 1.3);
        let empty = gram_cross(&Matrix::zeros(0, 2), &vocab, &p).unwrap();
        assert_eq!((empty.rows(), empty.cols()), (0, 2));
        let one = gram_cross(&Matrix::from_rows(&[[1.0, 1.0]]).unwrap(), &vocab, &p).unwrap();
        assert_eq!(one[(0, 0)], 1.3);
    }

    #[test]
    fn gram_cross_matches_scalar_loop_on_hand_instance() {
        let vocab =
            StandardizedVocabulary::new(Matrix::from_rows(&[[0.0, 0.5], [1.0, -1.0]]).unwrap(), DEFAULT_JITTER).unwrap();
        let w = Matrix::from_rows(&[[0.5, 1.0], [-1.0, 0.25]]).unwrap();
        let p = params(w, 0.8);
        let x = Matrix::from_rows(&[[0.1, 0.2], [-0.7, 0.4], [1.0, -1.0]]).unwrap();
        let g = gram_cross(&x, &vocab, &p).unwrap();
        assert_eq!((g.rows(), g.cols()), (3, 2));
        for i in 0..3 {
            for j in 0..2 {
                let expected = k_fu(x.row(i), vocab.points().row(j), &p).unwrap();
                assert!((g[(i, j)] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn vocabulary_invariants() {
        let v = StandardizedVocabulary::select(40, 3, 11, DEFAULT_JITTER).unwrap();
        assert_eq!(v.size(), 40);
        for i in 0..40 {
            assert_eq!(v.kuu()[(i, i)], 1.0);
            for j in 0..40 {
                assert_eq!(v.kuu()[(i, j)], v.kuu()[(j, i)]);
                let direct = k_uu(v.points().row(i), v.points().row(j)).unwrap();
                assert_eq!(v.kuu()[(i, j)], direct);
            }
        }
        let dup = Matrix::from_rows(&[[0.0, 1.0], [0.0, 1.0]]).unwrap();
        assert!(StandardizedVocabulary::new(dup, DEFAULT_JITTER).is_err());
    }

    #[test]
    fn factorization_succeeds_up_to_512_points() {
        for q in [2usize, 6] {
            let v = StandardizedVocabulary::select(512, q, 3, DEFAULT_JITTER).unwrap();
            assert_eq!(v.factor().dim(), 512);
        }
    }

    #[test]
    fn selection_is_seeded() {
        let a = StandardizedVocabulary::select(10, 2, 5, DEFAULT_JITTER).unwrap();
        let b = StandardizedVocabulary::select(10, 2, 5, DEFAULT_JITTER).unwrap();
        let c = StandardizedVocabulary::select(10, 2, 6, DEFAULT_JITTER).unwrap();
        assert_eq!(a.points(), b.points());
        assert_ne!(a.points(), c.points());
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0..3.0f64, n)
    }

    proptest! {
        #[test]
        fn k_uu_is_symmetric(z in vec_strategy(3), z2 in vec_strategy(3)) {
            let a = k_uu(&z, &z2).unwrap();
            prop_assert_eq!(a, k_uu(&z2, &z).unwrap());
            prop_assert!(a > 0.0 && a <= 1.0);
        }

        #[test]
        fn k_ff_is_scaled_standardized_kernel(
            x in vec_strategy(3), x2 in vec_strategy(3), w in vec_strategy(6), s in 0.1..3.0f64
        ) {
            let p = params(Matrix::from_vec(2, 3, w).unwrap(), s);
            let lhs = k_ff(&x, &x2, &p).unwrap();
            let rhs = s * s * k_uu(&p.project(&x).unwrap(), &p.project(&x2).unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }

        #[test]
        fn gram_cross_agrees_with_scalar_kernel(
            xs in proptest::collection::vec(vec_strategy(2), 0..6),
            w in vec_strategy(4),
            s in 0.1..3.0f64,
            seed in 0u64..1000,
        ) {
            let vocab = StandardizedVocabulary::select(4, 2, seed, DEFAULT_JITTER).unwrap();
            let p = params(Matrix::from_vec(2, 2, w).unwrap(), s);
            let x = Matrix::from_rows(&xs).unwrap_or_else(|_| Matrix::zeros(0, 2));
            let x = if xs.is_empty() { Matrix::zeros(0, 2) } else { x };
            let g = gram_cross(&x, &vocab, &p).unwrap();
            for i in 0..x.rows() {
                for j in 0..vocab.size() {
                    let e = k_fu(x.row(i), vocab.points().row(j), &p).unwrap();
                    prop_assert!((g[(i, j)] - e).abs() <= 1e-15 && g[(i, j)].is_finite());
                }
            }
        }
    }
}
