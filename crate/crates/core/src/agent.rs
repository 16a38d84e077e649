//! A streaming learner: absorbs blocks into its sample bank, keeps its
//! natural representation current, takes stochastic gradient steps on q(W)
//! and predicts under either its own or a fused representation.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Block;
use crate::elbo::{draw_noise, elbo_gradient, elbo_value, ElboObjective};
use crate::error::{ensure_dim, Error, Result};
use crate::kernel::{cross_covariance, StandardizedVocabulary};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::posterior::{
    effective_sample_size, importance_weights, moments_from_natural, prior_natural, representation_from_caches,
    MomentParameters, NaturalRepresentation, ProjectionPosterior, SampleBank,
};
use crate::rng;

/// Total number of blocks the gradient scale factor assumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamLength {
    Known(usize),
    /// Use the agent's own count of ingested blocks.
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub learning_rate: f64,
    /// Step `t` uses `learning_rate / (1 + rate_decay·t)`.
    pub rate_decay: f64,
    pub grad_samples: usize,
    pub stream_length: StreamLength,
    pub hyperlearning: bool,
    /// Take a hyper step on every `hyper_period`-th ingested block.
    pub hyper_period: usize,
    /// Per-coordinate bound on the gradient w.r.t. μ and log σ, applied
    /// before scaling by the rate.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            rate_decay: 0.1,
            grad_samples: 1,
            stream_length: StreamLength::Unbounded,
            hyperlearning: true,
            hyper_period: 1,
            grad_clip: Some(1.0),
            seed: 0,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "learning rate must be finite and nonnegative (got {})",
                self.learning_rate
            )));
        }
        if !(self.rate_decay >= 0.0) {
            return Err(Error::InvalidArgument("rate decay must be nonnegative".into()));
        }
        if self.grad_samples == 0 {
            return Err(Error::InvalidArgument("grad_samples must be at least 1".into()));
        }
        if self.hyper_period == 0 {
            return Err(Error::InvalidArgument("hyper_period must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn rate(&self, step: usize) -> f64 {
        self.learning_rate / (1.0 + self.rate_decay * step as f64)
    }
}

/// How the bank samples are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    Importance,
    /// Single sample pinned at μ with unit weight.
    Deterministic,
}

/// Outcome of one hyper step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyperOutcome {
    Applied,
    Disabled,
    /// Gradient or resulting weights were not finite; θ was left as is.
    Skipped,
}

/// Per-sample test-point cross-covariances, reusable while the bank is fixed.
#[derive(Debug, Clone)]
pub struct TestFeatures {
    grams: Vec<Matrix>,
}

impl TestFeatures {
    pub fn len(&self) -> usize {
        self.grams.first().map_or(0, Matrix::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    id: usize,
    vocab: Arc<StandardizedVocabulary>,
    signal_scale: f64,
    noise_std: f64,
    qw: ProjectionPosterior,
    bank: SampleBank,
    weights: Vec<f64>,
    mode: WeightMode,
    rep: NaturalRepresentation,
    fused: Option<NaturalRepresentation>,
    blocks_seen: usize,
    hyper_steps: usize,
    skipped_steps: usize,
    config: LearnConfig,
}

impl Agent {
    /// An importance-weighted agent starting from `q(W) = p(W)` and the
    /// (cleared) given bank.
    pub fn new(
        id: usize,
        vocab: Arc<StandardizedVocabulary>,
        bank: SampleBank,
        signal_scale: f64,
        noise_std: f64,
        config: LearnConfig,
    ) -> Result<Self> {
        let (rows, cols) = bank
            .samples()
            .first()
            .map(|w| (w.rows(), w.cols()))
            .ok_or_else(|| Error::InvalidArgument("sample bank is empty".into()))?;
        ensure_dim("Agent projection rows", vocab.dim(), rows)?;
        Self::build(
            id,
            vocab,
            bank.cleared(),
            ProjectionPosterior::standard(rows, cols),
            WeightMode::Importance,
            signal_scale,
            noise_std,
            config,
        )
    }

    /// Single fixed projection `W` with unit weight and hyperlearning off.
    /// Every downstream identity is exact in this mode.
    pub fn deterministic(
        id: usize,
        vocab: Arc<StandardizedVocabulary>,
        projection: Matrix,
        signal_scale: f64,
        noise_std: f64,
    ) -> Result<Self> {
        ensure_dim("Agent projection rows", vocab.dim(), projection.rows())?;
        let (rows, cols) = (projection.rows(), projection.cols());
        let qw = ProjectionPosterior::new(projection.clone(), Matrix::from_fn(rows, cols, |_, _| 1.0))?;
        let config = LearnConfig {
            hyperlearning: false,
            ..LearnConfig::default()
        };
        Self::build(
            id,
            vocab,
            SampleBank::from_samples(vec![projection], 0),
            qw,
            WeightMode::Deterministic,
            signal_scale,
            noise_std,
            config,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        id: usize,
        vocab: Arc<StandardizedVocabulary>,
        bank: SampleBank,
        qw: ProjectionPosterior,
        mode: WeightMode,
        signal_scale: f64,
        noise_std: f64,
        config: LearnConfig,
    ) -> Result<Self> {
        config.validate()?;
        if !(signal_scale > 0.0 && signal_scale.is_finite()) || !(noise_std > 0.0 && noise_std.is_finite()) {
            return Err(Error::InvalidArgument("signal scale and noise std must be positive".into()));
        }
        let mut agent = Self {
            id,
            rep: prior_natural(&vocab),
            vocab,
            signal_scale,
            noise_std,
            qw,
            weights: vec![1.0; bank.len()],
            bank,
            mode,
            fused: None,
            blocks_seen: 0,
            hyper_steps: 0,
            skipped_steps: 0,
            config,
        };
        agent.weights = agent.weights_for(&agent.qw)?;
        Ok(agent)
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn vocab(&self) -> &Arc<StandardizedVocabulary> {
        &self.vocab
    }

    pub fn signal_scale(&self) -> f64 {
        self.signal_scale
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn input_dim(&self) -> usize {
        self.qw.shape().1
    }

    pub fn projection_posterior(&self) -> &ProjectionPosterior {
        &self.qw
    }

    pub fn bank(&self) -> &SampleBank {
        &self.bank
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    pub fn config(&self) -> &LearnConfig {
        &self.config
    }

    pub fn blocks_seen(&self) -> usize {
        self.blocks_seen
    }

    pub fn hyper_steps(&self) -> usize {
        self.hyper_steps
    }

    /// Number of hyper steps rejected for non-finite values.
    pub fn skipped_steps(&self) -> usize {
        self.skipped_steps
    }

    /// The local representation `R̂`.
    pub fn representation(&self) -> &NaturalRepresentation {
        &self.rep
    }

    /// The last assembled global representation, if any.
    pub fn fused_representation(&self) -> Option<&NaturalRepresentation> {
        self.fused.as_ref()
    }

    pub fn set_fused_representation(&mut self, rep: NaturalRepresentation) -> Result<()> {
        ensure_dim("fused representation", self.vocab.size(), rep.dim())?;
        self.fused = Some(rep);
        Ok(())
    }

    pub fn clear_fused_representation(&mut self) {
        self.fused = None;
    }

    /// `R0`, the natural parameters of `p(u)`.
    pub fn prior(&self) -> NaturalRepresentation {
        prior_natural(&self.vocab)
    }

    /// Effective sample size of the current importance weights.
    pub fn ess(&self) -> f64 {
        effective_sample_size(&self.weights)
    }

    pub fn moments(&self) -> Result<MomentParameters> {
        moments_from_natural(&self.rep)
    }

    /// Replaces the learning configuration (hyperlearning is never enabled
    /// in deterministic mode).
    pub fn set_config(&mut self, config: LearnConfig) -> Result<()> {
        config.validate()?;
        self.config = config;
        if self.mode == WeightMode::Deterministic {
            self.config.hyperlearning = false;
        }
        Ok(())
    }

    /// Replaces q(W) and reweights the bank.
    pub fn set_projection_posterior(&mut self, qw: ProjectionPosterior) -> Result<()> {
        ensure_dim("projection posterior rows", self.qw.shape().0, qw.shape().0)?;
        ensure_dim("projection posterior cols", self.qw.shape().1, qw.shape().1)?;
        let weights = self.weights_for(&qw)?;
        let rep = representation_from_caches(&self.bank, &weights, &self.vocab, self.noise_std)?;
        self.qw = qw;
        self.weights = weights;
        self.rep = rep;
        Ok(())
    }

    fn weights_for(&self, qw: &ProjectionPosterior) -> Result<Vec<f64>> {
        match self.mode {
            WeightMode::Importance => importance_weights(qw, &self.bank),
            WeightMode::Deterministic => Ok(vec![1.0; self.bank.len()]),
        }
    }

    /// Absorbs a block, optionally takes one hyper step on it, and refreshes
    /// the representation. On error the agent is unchanged.
    pub fn ingest_block(&mut self, block: &Block) -> Result<HyperOutcome> {
        if block.is_empty() {
            return Err(Error::InvalidArgument("cannot ingest an empty block".into()));
        }
        ensure_dim("ingest_block input dim", self.input_dim(), block.input_dim())?;
        let mut bank = self.bank.clone();
        bank.absorb_block(&block.inputs, &block.targets, &self.vocab, self.signal_scale)?;
        let rep = representation_from_caches(&bank, &self.weights, &self.vocab, self.noise_std)?;
        self.bank = bank;
        self.rep = rep;
        self.blocks_seen += 1;

        let due = (self.blocks_seen - 1).is_multiple_of(self.config.hyper_period);
        if !(self.config.hyperlearning && due) {
            return Ok(HyperOutcome::Disabled);
        }
        self.hyper_step(block)
    }

    /// One stochastic gradient step on θ with `block` standing in for a
    /// uniformly drawn block of the stream, then a reweight of the bank.
    pub fn hyper_step(&mut self, block: &Block) -> Result<HyperOutcome> {
        if !self.config.hyperlearning || self.mode == WeightMode::Deterministic {
            return Ok(HyperOutcome::Disabled);
        }
        ensure_dim("hyper_step input dim", self.input_dim(), block.input_dim())?;
        let qu = moments_from_natural(&self.rep)?;
        let objective = ElboObjective::new(&self.vocab, &qu, self.signal_scale, self.noise_std)?;
        let n_blocks = match self.config.stream_length {
            StreamLength::Known(n) => n,
            StreamLength::Unbounded => self.blocks_seen.max(1),
        };
        let (rows, cols) = self.qw.shape();
        let noise_seed = rng::derive_seed(self.config.seed, "gradient", self.hyper_steps as u64);
        let noise = draw_noise(noise_seed, self.config.grad_samples, rows, cols);
        let grad = elbo_gradient(&objective, &self.qw, core::slice::from_ref(block), Some(n_blocks), &noise)?;
        if !grad.is_finite() {
            self.skipped_steps += 1;
            return Ok(HyperOutcome::Skipped);
        }

        let rate = self.config.rate(self.hyper_steps);
        let clip = |v: f64| match self.config.grad_clip {
            Some(c) => v.clamp(-c, c),
            None => v,
        };
        let mut mu = self.qw.mu().clone();
        for (m, &g) in mu.as_mut_slice().iter_mut().zip(grad.mu.as_slice()) {
            *m += rate * clip(g);
        }
        // log σ parameterization: ∂/∂ log σ = σ·∂/∂σ
        let mut sigma = self.qw.sigma().clone();
        for (s, &g) in sigma.as_mut_slice().iter_mut().zip(grad.sigma.as_slice()) {
            *s *= libm::exp(rate * clip(*s * g));
        }
        let candidate = match ProjectionPosterior::new(mu, sigma) {
            Ok(q) => q,
            Err(_) => {
                self.skipped_steps += 1;
                return Ok(HyperOutcome::Skipped);
            }
        };
        let weights = match self.weights_for(&candidate) {
            Ok(w) if w.iter().sum::<f64>() > 0.0 => w,
            _ => {
                self.skipped_steps += 1;
                return Ok(HyperOutcome::Skipped);
            }
        };
        let rep = representation_from_caches(&self.bank, &weights, &self.vocab, self.noise_std)?;
        self.qw = candidate;
        self.weights = weights;
        self.rep = rep;
        self.hyper_steps += 1;
        Ok(HyperOutcome::Applied)
    }

    /// The bound under the current q(u) and q(W), using fixed
    /// reparameterization draws so repeated calls agree.
    pub fn elbo(&self, blocks: &[Block], scale_n: Option<usize>) -> Result<f64> {
        let qu = moments_from_natural(&self.rep)?;
        let objective = ElboObjective::new(&self.vocab, &qu, self.signal_scale, self.noise_std)?;
        let (rows, cols) = self.qw.shape();
        let noise = match self.mode {
            WeightMode::Deterministic => vec![Matrix::zeros(rows, cols)],
            WeightMode::Importance => draw_noise(
                rng::derive_seed(self.config.seed, "elbo", 0),
                self.config.grad_samples,
                rows,
                cols,
            ),
        };
        elbo_value(&objective, &self.qw, blocks, scale_n, &noise)
    }

    fn chosen(&self, use_fused: bool) -> &NaturalRepresentation {
        match (&self.fused, use_fused) {
            (Some(f), true) => f,
            _ => &self.rep,
        }
    }

    fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        if total > 0.0 {
            self.weights.iter().map(|w| w / total).collect()
        } else {
            vec![1.0 / self.weights.len() as f64; self.weights.len()]
        }
    }

    /// Predictive means and variances (noise included). With `use_fused` and
    /// no fused representation yet, the local one is used.
    pub fn predict(&self, x: &Matrix, use_fused: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure_dim("predict input dim", self.input_dim(), x.cols())?;
        let qu = moments_from_natural(self.chosen(use_fused))?;
        let p = self.vocab.kuu_inv();
        let a = p.matvec(&qu.mean)?;
        let mut correction = p.matmul(&qu.cov)?.matmul(p)?;
        correction.add_scaled(-1.0, p)?;
        let prior_var = self.signal_scale * self.signal_scale;
        let n = x.rows();
        let mut means = vec![0.0; n];
        let mut latent = vec![0.0; n];
        for (w, sample) in self.normalized_weights().iter().zip(self.bank.samples()) {
            if *w == 0.0 {
                continue;
            }
            let k = cross_covariance(x, self.vocab.points(), sample, self.signal_scale)?;
            for i in 0..n {
                let ki = k.row(i);
                means[i] += w * dot(ki, &a);
                latent[i] += w * (prior_var + correction.quad_form(ki)).max(0.0);
            }
        }
        let noise_var = self.noise_std * self.noise_std;
        Ok((means, latent.into_iter().map(|v| v + noise_var).collect()))
    }

    /// Cross-covariances of `x` under every bank sample.
    pub fn test_features(&self, x: &Matrix) -> Result<TestFeatures> {
        ensure_dim("test_features input dim", self.input_dim(), x.cols())?;
        let grams = self
            .bank
            .samples()
            .iter()
            .map(|w| cross_covariance(x, self.vocab.points(), w, self.signal_scale))
            .collect::<Result<_>>()?;
        Ok(TestFeatures { grams })
    }

    /// Predictive means from precomputed features. The features must come
    /// from an agent sharing this agent's bank samples and vocabulary.
    pub fn predict_mean(&self, features: &TestFeatures, use_fused: bool) -> Result<Vec<f64>> {
        self.predict_mean_under(features, self.chosen(use_fused))
    }

    /// Like [`Agent::predict_mean`] with an arbitrary representation of q(u),
    /// e.g. one broadcast by a server.
    pub fn predict_mean_under(&self, features: &TestFeatures, rep: &NaturalRepresentation) -> Result<Vec<f64>> {
        ensure_dim("predict_mean bank size", self.bank.len(), features.grams.len())?;
        let mean = Cholesky::new(rep.precision())?.solve_vec(rep.shift())?;
        let a = self.vocab.kuu_inv().matvec(&mean)?;
        let mut means = vec![0.0; features.len()];
        for (w, k) in self.normalized_weights().iter().zip(&features.grams) {
            if *w == 0.0 {
                continue;
            }
            ensure_dim("predict_mean vocabulary", a.len(), k.cols())?;
            let proj = k.matvec(&a)?;
            for (m, v) in means.iter_mut().zip(proj) {
                *m += w * v;
            }
        }
        Ok(means)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::DEFAULT_JITTER;
    use crate::posterior::natural_from_moments;

    fn vocab() -> Arc<StandardizedVocabulary> {
        Arc::new(StandardizedVocabulary::select(6, 2, 11, DEFAULT_JITTER).unwrap())
    }

    fn random_block(n: usize, seed: u64) -> Block {
        let mut r = rng::rng_from_seed(seed);
        let x = Matrix::from_fn(n, 2, |_, _| rng::uniform(&mut r, -1.0, 1.0));
        let y = (0..n).map(|i| libm::sin(2.0 * x[(i, 0)]) - x[(i, 1)] + 0.1 * rng::standard_normal(&mut r)).collect();
        Block::new(x, y).unwrap()
    }

    fn fixed_w() -> Matrix {
        Matrix::from_rows(&[[0.9, 0.3], [-0.2, 1.1]]).unwrap()
    }

    fn importance_agent(hyper: bool) -> Agent {
        let bank = SampleBank::init(8, 2, 2, 5).unwrap();
        let cfg = LearnConfig {
            hyperlearning: hyper,
            seed: 9,
            ..LearnConfig::default()
        };
        Agent::new(0, vocab(), bank, 1.0, 0.2, cfg).unwrap()
    }

    /// Batch posterior moments: S = σ²K(σ²K + C)⁻¹K, m = K(σ²K + C)⁻¹K_UD·y.
    fn batch_moments(vocab: &StandardizedVocabulary, block: &Block, w: &Matrix, s_s: f64, s_n: f64) -> MomentParameters {
        let mut k = vocab.kuu().clone();
        k.add_to_diagonal(vocab.jitter());
        let kdu = cross_covariance(&block.inputs, vocab.points(), w, s_s).unwrap();
        let c = kdu.tr_matmul(&kdu).unwrap();
        let mut inner = k.scale(s_n * s_n);
        inner.add_scaled(1.0, &c).unwrap();
        let f = Cholesky::new(&inner).unwrap();
        let mut cov = k.matmul(&f.solve_mat(&k).unwrap()).unwrap().scale(s_n * s_n);
        cov.symmetrize();
        let mean = k.matvec(&f.solve_vec(&kdu.tr_matvec(&block.targets).unwrap()).unwrap()).unwrap();
        MomentParameters { mean, cov }
    }

    fn rel_frob(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
    }

    #[test]
    fn one_block_is_prior_plus_contribution() {
        let mut agent = importance_agent(false);
        let block = random_block(7, 1);
        agent.ingest_block(&block).unwrap();
        let mut bank = SampleBank::init(8, 2, 2, 5).unwrap();
        bank.absorb_block(&block.inputs, &block.targets, agent.vocab(), 1.0).unwrap();
        let expected = representation_from_caches(&bank, &[1.0; 8], agent.vocab(), 0.2).unwrap();
        assert_eq!(agent.representation(), &expected);
        assert_eq!(agent.blocks_seen(), 1);
    }

    #[test]
    fn ingestion_order_does_not_matter() {
        let (a, b) = (random_block(5, 2), random_block(9, 3));
        let mut first = importance_agent(false);
        first.ingest_block(&a).unwrap();
        first.ingest_block(&b).unwrap();
        let mut second = importance_agent(false);
        second.ingest_block(&b).unwrap();
        second.ingest_block(&a).unwrap();
        assert!(first.representation().distance(second.representation()).unwrap() <= 1e-12 * first.representation().norm());
    }

    #[test]
    fn streaming_equals_batch_in_deterministic_mode() {
        let v = vocab();
        let blocks: Vec<Block> = (0..3).map(|i| random_block(6, 20 + i)).collect();
        let mut streamed = Agent::deterministic(0, v.clone(), fixed_w(), 1.3, 0.25).unwrap();
        for b in &blocks {
            streamed.ingest_block(b).unwrap();
        }
        let all = Block::concat(&blocks).unwrap();
        let mut batched = Agent::deterministic(1, v.clone(), fixed_w(), 1.3, 0.25).unwrap();
        batched.ingest_block(&all).unwrap();
        let (ms, mb) = (streamed.moments().unwrap(), batched.moments().unwrap());
        assert!(rel_frob(&ms.cov, &mb.cov) < 1e-10);
        let oracle = batch_moments(&v, &all, &fixed_w(), 1.3, 0.25);
        assert!(rel_frob(&ms.cov, &oracle.cov) < 1e-8, "{}", rel_frob(&ms.cov, &oracle.cov));
        let dm: f64 = ms.mean.iter().zip(&oracle.mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dm < 1e-8 * oracle.mean.iter().fold(1.0, |a: f64, b| a.max(b.abs())));
    }

    #[test]
    fn representation_stays_consistent_with_caches() {
        let mut agent = importance_agent(true);
        for i in 0..4 {
            agent.ingest_block(&random_block(8, 40 + i)).unwrap();
        }
        let fresh = representation_from_caches(agent.bank(), agent.weights(), agent.vocab(), 0.2).unwrap();
        assert!(agent.representation().distance(&fresh).unwrap() <= 1e-12 * fresh.norm());
    }

    #[test]
    fn dimension_mismatch_leaves_agent_unchanged() {
        let mut agent = importance_agent(true);
        agent.ingest_block(&random_block(4, 1)).unwrap();
        let before = agent.clone();
        let bad = Block::new(Matrix::zeros(3, 3), vec![0.0; 3]).unwrap();
        assert!(agent.ingest_block(&bad).is_err());
        assert_eq!(agent.representation(), before.representation());
        assert_eq!(agent.bank(), before.bank());
        assert_eq!(agent.blocks_seen(), before.blocks_seen());
    }

    #[test]
    fn zero_learning_rate_keeps_theta() {
        let mut agent = importance_agent(true);
        agent
            .set_config(LearnConfig {
                learning_rate: 0.0,
                ..agent.config().clone()
            })
            .unwrap();
        agent.ingest_block(&random_block(6, 3)).unwrap();
        assert_eq!(agent.projection_posterior(), &ProjectionPosterior::standard(2, 2));
    }

    #[test]
    fn hyper_steps_are_deterministic_and_move_theta() {
        let run = || {
            let mut agent = importance_agent(true);
            for i in 0..3 {
                assert_eq!(agent.ingest_block(&random_block(6, 60 + i)).unwrap(), HyperOutcome::Applied);
            }
            agent
        };
        let (a, b) = (run(), run());
        assert_eq!(a.projection_posterior(), b.projection_posterior());
        assert_eq!(a.representation(), b.representation());
        assert_ne!(a.projection_posterior(), &ProjectionPosterior::standard(2, 2));
    }

    #[test]
    fn prior_predictive() {
        let agent = Agent::deterministic(0, vocab(), fixed_w(), 1.4, 0.3).unwrap();
        let x = random_block(5, 8).inputs;
        let (mean, var) = agent.predict(&x, false).unwrap();
        assert!(mean.iter().all(|m| *m == 0.0));
        for v in var {
            assert!((v - (1.4 * 1.4 + 0.09)).abs() < 1e-10, "{v}");
        }
        let agent = importance_agent(true);
        let (mean, _) = agent.predict(&x, true).unwrap();
        assert!(mean.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn prediction_matches_sparse_gp_formula() {
        let v = vocab();
        let (s_s, s_n) = (1.1, 0.2);
        let train = random_block(5, 31);
        let mut agent = Agent::deterministic(0, v.clone(), fixed_w(), s_s, s_n).unwrap();
        agent.ingest_block(&train).unwrap();
        let test = random_block(4, 32).inputs;
        let (mean, var) = agent.predict(&test, false).unwrap();

        let qu = batch_moments(&v, &train, &fixed_w(), s_s, s_n);
        let mut k = v.kuu().clone();
        k.add_to_diagonal(v.jitter());
        let f = Cholesky::new(&k).unwrap();
        let ksu = cross_covariance(&test, v.points(), &fixed_w(), s_s).unwrap();
        for i in 0..4 {
            let ks = ksu.row(i);
            let alpha = f.solve_vec(ks).unwrap();
            let m = dot(&alpha, &qu.mean);
            let vv = s_s * s_s - dot(ks, &alpha) + qu.cov.quad_form(&alpha) + s_n * s_n;
            assert!((mean[i] - m).abs() < 1e-8 * (1.0 + m.abs()), "mean {} vs {m}", mean[i]);
            assert!((var[i] - vv).abs() < 1e-8, "var {} vs {vv}", var[i]);
        }
        let features = agent.test_features(&test).unwrap();
        let fast = agent.predict_mean(&features, false).unwrap();
        for (a, b) in fast.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn variance_never_increases_with_data() {
        let mut agent = Agent::deterministic(0, vocab(), fixed_w(), 1.0, 0.3).unwrap();
        let test = random_block(10, 70).inputs;
        let mut last = agent.predict(&test, false).unwrap().1;
        for i in 0..5 {
            agent.ingest_block(&random_block(4, 71 + i)).unwrap();
            let now = agent.predict(&test, false).unwrap().1;
            for (n, l) in now.iter().zip(&last) {
                assert!(*n <= l + 1e-12);
                assert!(*n >= 0.09 * (1.0 - 1e-9));
            }
            last = now;
        }
    }

    #[test]
    fn elbo_is_zero_at_the_prior_without_data() {
        let agent = importance_agent(true);
        assert!(agent.elbo(&[], None).unwrap().abs() < 1e-9);
    }

    #[test]
    fn fused_rep_drives_fused_predictions() {
        let mut agent = Agent::deterministic(0, vocab(), fixed_w(), 1.0, 0.3).unwrap();
        let other = {
            let mut a = Agent::deterministic(1, vocab(), fixed_w(), 1.0, 0.3).unwrap();
            a.ingest_block(&random_block(6, 90)).unwrap();
            a
        };
        agent.set_fused_representation(other.representation().clone()).unwrap();
        let x = random_block(3, 91).inputs;
        assert_eq!(agent.predict(&x, true).unwrap(), other.predict(&x, false).unwrap());
        assert_eq!(agent.predict(&x, false).unwrap().0, vec![0.0; 3]);
        let back = natural_from_moments(&agent.moments().unwrap()).unwrap();
        assert!(back.distance(&agent.prior()).unwrap() < 1e-6 * agent.prior().norm());
    }
}
