//! The communicable agent state: natural parameters of q(u), the factored
//! Gaussian q(W) over the projection, and the fixed bank of prior projection
//! samples with per-sample cached kernel aggregates.
//!
//! With `P = (Kuu + jitter·I)⁻¹`, the representation after absorbing blocks
//! `D_1..D_p` is
//!
//! ```text
//! R1 = P + (1/σ_n²)·P·Ĉ·P,   Ĉ = (1/k)·Σ_t w_t·A_t,   A_t = Σ_i K⁽ᵗ⁾_UDi·K⁽ᵗ⁾_DiU
//! R2 =     (1/σ_n²)·P·ĉ,     ĉ = (1/k)·Σ_t w_t·b_t,   b_t = Σ_i K⁽ᵗ⁾_UDi·y_i
//! ```
//!
//! where `w_t = q(W_t)/p(W_t)` are raw (unnormalized) importance weights.
//! Because the caches are summed over blocks per sample, reweighting after a
//! change of q(W) costs O(k·m²) no matter how much data has been seen.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure_dim, Error, Result};
use crate::kernel::{cross_covariance, StandardizedVocabulary};
use crate::linalg::{axpy, Cholesky, Matrix};
use crate::rng;

/// Relative tolerance for the symmetry of `R1`.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Natural parameters `R = [R1; R2] = [S⁻¹; S⁻¹·m]` of q(u).
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalRepresentation {
    precision: Matrix,
    shift: Vec<f64>,
}

impl NaturalRepresentation {
    pub fn new(precision: Matrix, shift: Vec<f64>) -> Result<Self> {
        ensure_dim("NaturalRepresentation", precision.rows(), precision.cols())?;
        ensure_dim("NaturalRepresentation", precision.rows(), shift.len())?;
        if !precision.is_symmetric(SYMMETRY_TOL) {
            return Err(Error::InvalidArgument("precision matrix R1 is not symmetric".into()));
        }
        Ok(Self { precision, shift })
    }

    /// `R1 = S⁻¹`
    pub fn precision(&self) -> &Matrix {
        &self.precision
    }

    /// `R2 = S⁻¹·m`
    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    /// `self + alpha·other`, componentwise.
    pub fn add_scaled(&self, alpha: f64, other: &NaturalRepresentation) -> Result<NaturalRepresentation> {
        ensure_dim("NaturalRepresentation::add_scaled", self.dim(), other.dim())?;
        let mut precision = self.precision.clone();
        precision.add_scaled(alpha, &other.precision)?;
        let mut shift = self.shift.clone();
        axpy(alpha, &other.shift, &mut shift);
        Ok(Self { precision, shift })
    }

    pub(crate) fn add_assign_scaled(&mut self, alpha: f64, other: &NaturalRepresentation) -> Result<()> {
        ensure_dim("NaturalRepresentation::add_assign_scaled", self.dim(), other.dim())?;
        self.precision.add_scaled(alpha, &other.precision)?;
        axpy(alpha, &other.shift, &mut self.shift);
        Ok(())
    }

    /// Frobenius norm of the stacked `[R1; R2]` difference.
    pub fn distance(&self, other: &NaturalRepresentation) -> Result<f64> {
        let d = self.add_scaled(-1.0, other)?;
        let p = d.precision.frobenius_norm();
        let s: f64 = d.shift.iter().map(|v| v * v).sum();
        Ok(libm::sqrt(p * p + s))
    }

    pub fn norm(&self) -> f64 {
        let p = self.precision.frobenius_norm();
        let s: f64 = self.shift.iter().map(|v| v * v).sum();
        libm::sqrt(p * p + s)
    }

    /// True when `R1 + jitter·I` admits a Cholesky factorization.
    pub fn is_positive_definite(&self, jitter: f64) -> bool {
        let mut p = self.precision.clone();
        p.add_to_diagonal(jitter);
        Cholesky::new(&p).is_ok()
    }
}

/// Mean and covariance of q(u).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentParameters {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

pub fn natural_from_moments(mp: &MomentParameters) -> Result<NaturalRepresentation> {
    ensure_dim("natural_from_moments", mp.cov.rows(), mp.mean.len())?;
    let factor = Cholesky::new(&mp.cov)?;
    let precision = factor.inverse();
    let shift = factor.solve_vec(&mp.mean)?;
    NaturalRepresentation::new(precision, shift)
}

/// Inverse map; fails when `R1` is not positive definite, which signals a
/// corrupted or inconsistently fused representation.
pub fn moments_from_natural(rep: &NaturalRepresentation) -> Result<MomentParameters> {
    let factor = Cholesky::new(&rep.precision)?;
    Ok(MomentParameters {
        mean: factor.solve_vec(&rep.shift)?,
        cov: factor.inverse(),
    })
}

/// Representation `R0` of the prior `p(u) = N(0, Kuu + jitter·I)`.
pub fn prior_natural(vocab: &StandardizedVocabulary) -> NaturalRepresentation {
    NaturalRepresentation {
        precision: vocab.kuu_inv().clone(),
        shift: vec![0.0; vocab.size()],
    }
}

/// Factored Gaussian `q(W) = Π N(w_ij | μ_ij, σ_ij²)` over the q×d projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPosterior {
    mu: Matrix,
    sigma: Matrix,
}

impl ProjectionPosterior {
    pub fn new(mu: Matrix, sigma: Matrix) -> Result<Self> {
        ensure_dim("ProjectionPosterior", mu.rows(), sigma.rows())?;
        ensure_dim("ProjectionPosterior", mu.cols(), sigma.cols())?;
        if let Some(s) = sigma.as_slice().iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("projection std must be positive and finite (got {s})")));
        }
        if !mu.is_finite() {
            return Err(Error::InvalidArgument("projection mean must be finite".into()));
        }
        Ok(Self { mu, sigma })
    }

    /// `q(W) = p(W)`: zero means, unit stds.
    pub fn standard(rows: usize, cols: usize) -> Self {
        Self {
            mu: Matrix::zeros(rows, cols),
            sigma: Matrix::from_fn(rows, cols, |_, _| 1.0),
        }
    }

    pub fn mu(&self) -> &Matrix {
        &self.mu
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.mu.rows(), self.mu.cols())
    }

    /// `log q(W) − log p(W)` for one projection.
    pub fn log_ratio_to_prior(&self, w: &Matrix) -> Result<f64> {
        ensure_dim("log_ratio_to_prior", self.mu.rows(), w.rows())?;
        ensure_dim("log_ratio_to_prior", self.mu.cols(), w.cols())?;
        let mut acc = 0.0;
        for ((&m, &s), &x) in self.mu.as_slice().iter().zip(self.sigma.as_slice()).zip(w.as_slice()) {
            let z = (x - m) / s;
            acc += -libm::log(s) - 0.5 * z * z + 0.5 * x * x;
        }
        Ok(acc)
    }

    /// `W = μ + σ ⊙ ε`
    pub fn reparameterize(&self, eps: &Matrix) -> Matrix {
        let mut w = self.mu.clone();
        for ((wi, s), e) in w.as_mut_slice().iter_mut().zip(self.sigma.as_slice()).zip(eps.as_slice()) {
            *wi += s * e;
        }
        w
    }
}

/// `KL(q(W) ‖ p(W))` against the standard-normal prior.
pub fn kl_qw(qw: &ProjectionPosterior) -> f64 {
    qw.mu
        .as_slice()
        .iter()
        .zip(qw.sigma.as_slice())
        .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0 - 2.0 * libm::log(s)))
        .sum()
}

/// The fixed projection samples `W_1..W_k` drawn from the prior, plus their
/// accumulated kernel aggregates `A_t` and `b_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBank {
    samples: Vec<Matrix>,
    seed: u64,
    gram_sums: Vec<Matrix>,
    target_sums: Vec<Vec<f64>>,
    vocab_size: usize,
    blocks_absorbed: usize,
}

impl SampleBank {
    /// `k` projections of shape `d_out×d_in` with i.i.d. standard-normal
    /// entries; caches are sized lazily for the vocabulary on first absorb.
    pub fn init(k: usize, d_out: usize, d_in: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("sample bank needs at least one projection".into()));
        }
        let mut rng = rng::rng_from_seed(seed);
        let samples = (0..k).map(|_| rng::normal_matrix(&mut rng, d_out, d_in)).collect();
        Ok(Self::from_samples(samples, seed))
    }

    /// A bank holding exactly the given projections.
    pub fn from_samples(samples: Vec<Matrix>, seed: u64) -> Self {
        let k = samples.len();
        Self {
            samples,
            seed,
            gram_sums: Vec::with_capacity(k),
            target_sums: Vec::with_capacity(k),
            vocab_size: 0,
            blocks_absorbed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn samples(&self) -> &[Matrix] {
        &self.samples
    }

    pub fn blocks_absorbed(&self) -> usize {
        self.blocks_absorbed
    }

    /// `A_t`, or `None` before any block was absorbed.
    pub fn gram_sum(&self, t: usize) -> Option<&Matrix> {
        self.gram_sums.get(t)
    }

    /// `b_t`, or `None` before any block was absorbed.
    pub fn target_sum(&self, t: usize) -> Option<&[f64]> {
        self.target_sums.get(t).map(Vec::as_slice)
    }

    /// Same samples, empty caches.
    pub fn cleared(&self) -> Self {
        Self::from_samples(self.samples.clone(), self.seed)
    }

    fn ensure_caches(&mut self, m: usize) -> Result<()> {
        if self.gram_sums.is_empty() {
            self.vocab_size = m;
            self.gram_sums = vec![Matrix::zeros(m, m); self.samples.len()];
            self.target_sums = vec![vec![0.0; m]; self.samples.len()];
            Ok(())
        } else {
            ensure_dim("SampleBank caches", self.vocab_size, m)
        }
    }

    /// Adds `K⁽ᵗ⁾_UD·K⁽ᵗ⁾_DU` and `K⁽ᵗ⁾_UD·y` to every sample's caches.
    pub fn absorb_block(
        &mut self,
        x: &Matrix,
        y: &[f64],
        vocab: &StandardizedVocabulary,
        signal_scale: f64,
    ) -> Result<()> {
        if x.rows() == 0 {
            return Err(Error::InvalidArgument("cannot absorb an empty block".into()));
        }
        ensure_dim("absorb_block targets", x.rows(), y.len())?;
        let (d_out, d_in) = (self.samples[0].rows(), self.samples[0].cols());
        ensure_dim("absorb_block input dim", d_in, x.cols())?;
        ensure_dim("absorb_block standardized dim", d_out, vocab.dim())?;
        let grams: Vec<Matrix> = self
            .samples
            .iter()
            .map(|w| cross_covariance(x, vocab.points(), w, signal_scale))
            .collect::<Result<_>>()?;
        self.ensure_caches(vocab.size())?;
        for ((kdu, a), b) in grams.iter().zip(&mut self.gram_sums).zip(&mut self.target_sums) {
            let outer = kdu.tr_matmul(kdu)?;
            a.add_scaled(1.0, &outer)?;
            let proj = kdu.tr_matvec(y)?;
            axpy(1.0, &proj, b);
        }
        self.blocks_absorbed += 1;
        Ok(())
    }
}

/// Raw importance weights `q(W_t)/p(W_t)`, evaluated in log space.
pub fn importance_weights(qw: &ProjectionPosterior, bank: &SampleBank) -> Result<Vec<f64>> {
    bank.samples()
        .iter()
        .enumerate()
        .map(|(t, w)| {
            let lw = qw.log_ratio_to_prior(w)?;
            let v = libm::exp(lw);
            if lw.is_finite() && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteWeight { index: t })
            }
        })
        .collect()
}

/// `(Σw)²/Σw²`; equals k for uniform weights and 1 when one sample dominates.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Builds `R` from the bank caches with the given per-sample weights.
pub fn representation_from_caches(
    bank: &SampleBank,
    weights: &[f64],
    vocab: &StandardizedVocabulary,
    noise_std: f64,
) -> Result<NaturalRepresentation> {
    ensure_dim("representation_from_caches weights", bank.len(), weights.len())?;
    let mut rep = prior_natural(vocab);
    if bank.gram_sums.is_empty() {
        return Ok(rep);
    }
    let m = vocab.size();
    ensure_dim("representation_from_caches vocab", bank.vocab_size, m)?;
    let k = bank.len() as f64;
    let mut c_uu = Matrix::zeros(m, m);
    let mut c_uy = vec![0.0; m];
    for ((w, a), b) in weights.iter().zip(&bank.gram_sums).zip(&bank.target_sums) {
        c_uu.add_scaled(w / k, a)?;
        axpy(w / k, b, &mut c_uy);
    }
    let inv_noise = 1.0 / (noise_std * noise_std);
    let p = vocab.kuu_inv();
    let mut data_precision = p.matmul(&c_uu)?.matmul(p)?;
    data_precision.symmetrize();
    rep.precision.add_scaled(inv_noise, &data_precision)?;
    rep.shift = p.matvec(&c_uy)?;
    rep.shift.iter_mut().for_each(|v| *v *= inv_noise);
    Ok(rep)
}

/// Plain Monte Carlo estimate of one block's natural-parameter contribution
/// `E1 = (1/σ_n²)·P·C_UU·P`, `E2 = (1/σ_n²)·P·C_UD·y`, drawing `W ~ q(W)`
/// directly. Used as an independent reference for the importance-sampled
/// estimator.
pub fn exact_block_e(
    x: &Matrix,
    y: &[f64],
    qw: &ProjectionPosterior,
    vocab: &StandardizedVocabulary,
    signal_scale: f64,
    noise_std: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<(Matrix, Vec<f64>)> {
    if mc_samples == 0 {
        return Err(Error::InvalidArgument("mc_samples must be at least 1".into()));
    }
    ensure_dim("exact_block_e targets", x.rows(), y.len())?;
    let m = vocab.size();
    let (rows, cols) = qw.shape();
    let mut rng = rng::rng_from_seed(seed);
    let mut c_uu = Matrix::zeros(m, m);
    let mut c_uy = vec![0.0; m];
    for _ in 0..mc_samples {
        let eps = rng::normal_matrix(&mut rng, rows, cols);
        let w = qw.reparameterize(&eps);
        let kdu = cross_covariance(x, vocab.points(), &w, signal_scale)?;
        c_uu.add_scaled(1.0, &kdu.tr_matmul(&kdu)?)?;
        axpy(1.0, &kdu.tr_matvec(y)?, &mut c_uy);
    }
    let scale = 1.0 / (mc_samples as f64 * noise_std * noise_std);
    let p = vocab.kuu_inv();
    let mut e1 = p.matmul(&c_uu)?.matmul(p)?;
    e1.symmetrize();
    e1.scale_mut(scale);
    let mut e2 = p.matvec(&c_uy)?;
    e2.iter_mut().for_each(|v| *v *= scale);
    Ok((e1, e2))
}

/// `R0 + E` for a block contribution `E = (E1, E2)`.
pub fn add_block_contribution(
    rep: &NaturalRepresentation,
    e1: &Matrix,
    e2: &[f64],
) -> Result<NaturalRepresentation> {
    NaturalRepresentation::new(rep.precision.add(e1)?, {
        let mut s = rep.shift.clone();
        ensure_dim("add_block_contribution", s.len(), e2.len())?;
        axpy(1.0, e2, &mut s);
        s
    })
}
