//! The variational lower bound and its reparameterized gradient with respect
//! to the projection posterior θ = {μ_ij, σ_ij}.
//!
//! The bound decomposes over blocks:
//!
//! ```text
//! L(q) = Σ_i L_Di(q) − KL(q(u)‖p(u)) − KL(q(W)‖p(W))
//! ```
//!
//! For a fixed projection `W`, with `B = K_DU`, `P = (Kuu + jitter·I)⁻¹`,
//! `a = P·m` and `Q = P·S·P − P`, the inner expectation over `p(f|u,W)` and
//! `q(u)` is available in closed form:
//!
//! ```text
//! ℓ(W) = −(n/2)·log(2πσ_n²) − (1/2σ_n²)·(‖y − B·a‖² + Σ_i b_iᵀ·Q·b_i + n·σ_s²)
//! ∂ℓ/∂B = (1/σ_n²)·((y − B·a)·aᵀ − B·Q)
//! ```
//!
//! and `L_Di` is estimated by averaging `ℓ(μ + σ⊙ε_g)` over fixed noise draws.
//! q(u) is held fixed while differentiating with respect to θ.

use alloc::vec::Vec;

use crate::data::Block;
use crate::error::{ensure_dim, Error, Result};
use crate::kernel::{cross_covariance, project_rows, StandardizedVocabulary};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::posterior::{kl_qw, MomentParameters, ProjectionPosterior};
use crate::rng;

/// Gradient with respect to the means and stds of q(W).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionGradient {
    pub mu: Matrix,
    pub sigma: Matrix,
}

impl ProjectionGradient {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            mu: Matrix::zeros(rows, cols),
            sigma: Matrix::zeros(rows, cols),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mu.is_finite() && self.sigma.is_finite()
    }
}

/// Standard-normal reparameterization draws `ε_1..ε_G`.
pub fn draw_noise(seed: u64, count: usize, rows: usize, cols: usize) -> Vec<Matrix> {
    let mut r = rng::rng_from_seed(seed);
    (0..count).map(|_| rng::normal_matrix(&mut r, rows, cols)).collect()
}

/// Everything about the bound that depends only on q(u) and the vocabulary.
#[derive(Debug, Clone)]
pub struct ElboObjective<'a> {
    vocab: &'a StandardizedVocabulary,
    signal_scale: f64,
    noise_std: f64,
    weighted_mean: Vec<f64>,
    correction: Matrix,
    kl_u: f64,
}

impl<'a> ElboObjective<'a> {
    pub fn new(
        vocab: &'a StandardizedVocabulary,
        qu: &MomentParameters,
        signal_scale: f64,
        noise_std: f64,
    ) -> Result<Self> {
        let m = vocab.size();
        ensure_dim("ElboObjective mean", m, qu.mean.len())?;
        ensure_dim("ElboObjective cov", m, qu.cov.rows())?;
        let p = vocab.kuu_inv();
        let weighted_mean = p.matvec(&qu.mean)?;
        let mut correction = p.matmul(&qu.cov)?.matmul(p)?;
        correction.add_scaled(-1.0, p)?;
        correction.symmetrize();

        // KL(N(m,S) ‖ N(0,K)) = ½(tr(K⁻¹S) + mᵀK⁻¹m − M + log|K| − log|S|)
        let trace: f64 = (0..m).map(|i| dot(p.row(i), &column(&qu.cov, i))).sum();
        let log_det_s = Cholesky::new(&qu.cov)?.log_det();
        let kl_u = 0.5
            * (trace + dot(&qu.mean, &weighted_mean) - m as f64 + vocab.factor().log_det() - log_det_s);
        Ok(Self {
            vocab,
            signal_scale,
            noise_std,
            weighted_mean,
            correction,
            kl_u,
        })
    }

    pub fn kl_u(&self) -> f64 {
        self.kl_u
    }

    /// `ℓ(W)` for one block and one projection.
    pub fn block_value(&self, block: &Block, w: &Matrix) -> Result<f64> {
        let b = cross_covariance(&block.inputs, self.vocab.points(), w, self.signal_scale)?;
        Ok(self.value_from_gram(block, &b))
    }

    fn value_from_gram(&self, block: &Block, b: &Matrix) -> f64 {
        let n = block.len() as f64;
        let s2 = self.noise_std * self.noise_std;
        let mut quad = 0.0;
        for (i, &y) in block.targets.iter().enumerate() {
            let bi = b.row(i);
            let r = y - dot(bi, &self.weighted_mean);
            quad += r * r + self.correction.quad_form(bi);
        }
        quad += n * self.signal_scale * self.signal_scale;
        -0.5 * n * libm::log(2.0 * core::f64::consts::PI * s2) - quad / (2.0 * s2)
    }

    /// `ℓ(W)` and `∂ℓ/∂W` for one block and one projection.
    pub fn block_value_and_grad(&self, block: &Block, w: &Matrix) -> Result<(f64, Matrix)> {
        let z = self.vocab.points();
        let projected = project_rows(&block.inputs, w)?;
        let b = cross_covariance(&block.inputs, z, w, self.signal_scale)?;
        let value = self.value_from_gram(block, &b);
        let s2 = self.noise_std * self.noise_std;
        let (q, d) = (w.rows(), w.cols());
        let mut grad = Matrix::zeros(q, d);
        let mut direction = alloc::vec![0.0; q];
        for (i, &y) in block.targets.iter().enumerate() {
            let bi = b.row(i);
            let r = y - dot(bi, &self.weighted_mean);
            let wx = projected.row(i);
            direction.iter_mut().for_each(|v| *v = 0.0);
            // Σ_j h_ij·(Wx_i − z_j) with h_ij = −G_ij·k_ij
            for j in 0..z.rows() {
                let g = (r * self.weighted_mean[j] - dot(bi, self.correction.row(j))) / s2;
                let h = -g * bi[j];
                for ((dv, &p), &zj) in direction.iter_mut().zip(wx).zip(z.row(j)) {
                    *dv += h * (p - zj);
                }
            }
            let xi = block.inputs.row(i);
            for (a, &dv) in direction.iter().enumerate() {
                for (gv, &xv) in grad.row_mut(a).iter_mut().zip(xi) {
                    *gv += dv * xv;
                }
            }
        }
        Ok((value, grad))
    }
}

fn column(m: &Matrix, j: usize) -> Vec<f64> {
    (0..m.rows()).map(|i| m[(i, j)]).collect()
}

fn data_scale(blocks: &[Block], scale_n: Option<usize>) -> f64 {
    match scale_n {
        Some(n) if !blocks.is_empty() => n as f64 / blocks.len() as f64,
        _ => 1.0,
    }
}

/// Reparameterized estimate of the bound. With `scale_n = Some(N)` the block
/// sum is rescaled by `N / blocks.len()`, turning a subset of an N-block
/// stream into an unbiased estimate of the full-stream bound.
pub fn elbo_value(
    objective: &ElboObjective<'_>,
    qw: &ProjectionPosterior,
    blocks: &[Block],
    scale_n: Option<usize>,
    noise: &[Matrix],
) -> Result<f64> {
    if noise.is_empty() && !blocks.is_empty() {
        return Err(Error::InvalidArgument("at least one reparameterization draw is required".into()));
    }
    let mut total = 0.0;
    for block in blocks {
        let mut acc = 0.0;
        for eps in noise {
            acc += objective.block_value(block, &qw.reparameterize(eps))?;
        }
        total += acc / noise.len() as f64;
    }
    Ok(data_scale(blocks, scale_n) * total - objective.kl_u() - kl_qw(qw))
}

/// Gradient of [`elbo_value`] with respect to μ and σ, at fixed noise draws.
pub fn elbo_gradient(
    objective: &ElboObjective<'_>,
    qw: &ProjectionPosterior,
    blocks: &[Block],
    scale_n: Option<usize>,
    noise: &[Matrix],
) -> Result<ProjectionGradient> {
    if noise.is_empty() && !blocks.is_empty() {
        return Err(Error::InvalidArgument("at least one reparameterization draw is required".into()));
    }
    let (rows, cols) = qw.shape();
    let mut grad = ProjectionGradient::zeros(rows, cols);
    let weight = if blocks.is_empty() {
        0.0
    } else {
        data_scale(blocks, scale_n) / noise.len() as f64
    };
    for block in blocks {
        for eps in noise {
            let (_, gw) = objective.block_value_and_grad(block, &qw.reparameterize(eps))?;
            grad.mu.add_scaled(weight, &gw)?;
            for ((gs, &g), &e) in grad.sigma.as_mut_slice().iter_mut().zip(gw.as_slice()).zip(eps.as_slice()) {
                *gs += weight * g * e;
            }
        }
    }
    // −∂KL(q(W)‖p(W))
    for (g, &m) in grad.mu.as_mut_slice().iter_mut().zip(qw.mu().as_slice()) {
        *g -= m;
    }
    for (g, &s) in grad.sigma.as_mut_slice().iter_mut().zip(qw.sigma().as_slice()) {
        *g -= s - 1.0 / s;
    }
    Ok(grad)
}
