//! Verification suites. Each check measures one quantity and compares it
//! with a threshold; a suite fails when any of its checks fails.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use fusegp_core::agent::{Agent, LearnConfig};
use fusegp_core::data::Block;
use fusegp_core::elbo::{draw_noise, elbo_gradient, elbo_value, ElboObjective};
use fusegp_core::fusion::{fuse_many, fuse_pair, run_protocol, tree_diameter, LossRecovery, Topology};
use fusegp_core::kernel::{gram_cross, k_ff, k_fu, k_uu, DomainParams, StandardizedVocabulary, DEFAULT_JITTER};
use fusegp_core::linalg::Matrix;
use fusegp_core::netsim::NullClock;
use fusegp_core::posterior::{
    add_block_contribution, exact_block_e, importance_weights, moments_from_natural, prior_natural,
    representation_from_caches, MomentParameters, NaturalRepresentation, ProjectionPosterior, SampleBank,
};
use fusegp_core::rng::{self, derive_seed, SimRng};
use fusegp_core::synthetic::generate;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::experiments::{disparity_run, loss_points, save_dataset, team_run, StreamData};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Lemma1Scaling,
    Theorem1Scaling,
    Unbiasedness,
    Gradcheck,
    Consensus,
    Patterns,
    Synthetic,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Lemma1Scaling,
        Suite::Theorem1Scaling,
        Suite::Unbiasedness,
        Suite::Gradcheck,
        Suite::Consensus,
        Suite::Patterns,
        Suite::Synthetic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Lemma1Scaling => "lemma1-scaling",
            Suite::Theorem1Scaling => "theorem1-scaling",
            Suite::Unbiasedness => "unbiasedness",
            Suite::Gradcheck => "gradcheck",
            Suite::Consensus => "consensus",
            Suite::Patterns => "patterns",
            Suite::Synthetic => "synthetic",
        }
    }
}

impl FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let names: Vec<_> = Suite::ALL.iter().map(|x| x.name()).collect();
            CliError::Config(format!("unknown suite `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub threshold: String,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: &str, measured: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            threshold: format!("<= {limit:e}"),
            passed: measured <= limit,
        }
    }

    pub fn within(name: &str, measured: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            threshold: format!("in [{lo}, {hi}]"),
            passed: (lo..=hi).contains(&measured),
        }
    }

    pub fn at_least(name: &str, measured: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            threshold: format!(">= {limit}"),
            passed: measured >= limit,
        }
    }

    pub fn positive(name: &str, measured: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            threshold: "> 0".into(),
            passed: measured > 0.0,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: measured {:.6e} (threshold {})", self.name, self.measured, self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "suite {}", self.suite.name())?;
        for c in &self.checks {
            writeln!(f, "  {c}")?;
        }
        write!(f, "{} {}", if self.passed() { "PASS" } else { "FAIL" }, self.suite.name())
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Report> {
    let checks = match suite {
        Suite::Lemma1Scaling => {
            let fit = lemma1_scaling(&ScalingSetup::lemma1(seed))?;
            let (unbiased_z, weight_dev) = (representation_unbiasedness(200, 100_000, seed)?, importance_weight_mean(100_000, seed)?);
            let (additive, empty) = additivity(seed)?;
            vec![
                Check::within("log-log slope of median error vs k", fit.slope, -0.65, -0.35),
                Check::at_most("max |z| of mean estimator error over 200 banks", unbiased_z, 3.0),
                Check::at_most("|mean importance weight - 1|", weight_dev, 0.05),
                Check::at_most("additivity relative error", additive, 1e-12),
                Check::at_most("empty caches vs prior", empty, 0.0),
            ]
        }
        Suite::Theorem1Scaling => {
            let fit = theorem1_scaling(&ScalingSetup::theorem1(seed))?;
            let (comm, assoc) = fusion_algebra(seed)?;
            vec![
                Check::at_most("growth exponent of fused error vs team size", fit.slope, 1.3),
                Check::at_most("fused vs full-data moments", fusion_exactness(seed)?, 1e-8),
                Check::at_most("fuse_pair commutativity", comm, 1e-12),
                Check::at_most("fuse_many associativity", assoc, 1e-12),
            ]
        }
        Suite::Unbiasedness => {
            let (before, after) = elbo_ascent(20, 50, seed)?;
            vec![
                Check::at_most("max |z| of subsampled gradient mean", gradient_unbiasedness(500, seed)?, 3.0),
                Check::positive("median ELBO gain after 50 blocks", after - before),
            ]
        }
        Suite::Gradcheck => {
            let k = kernel_properties(seed)?;
            let (t1, t100) = ingest_timings(50, 10, 100, seed)?;
            vec![
                Check::at_most("gradient max relative error", gradient_check(seed)?, 1e-4),
                Check::at_most("k_uu asymmetry", k.asymmetry, 0.0),
                Check::at_most("|k_ff - s^2 k_uu(Wx, Wx')|", k.warp_error, 1e-12),
                Check::at_most("gram_cross vs scalar kernel", k.gram_error, 1e-12),
                Check::positive("Kuu + jitter factorizations up to m = 512", k.factorized as f64),
                Check::at_most("streamed vs batch moments", streaming_vs_batch(seed)?, 1e-10),
                Check::at_most("max predictive variance increase", monotone_information(seed)?, 1e-12),
                Check::at_most("ingest time ratio block 100 / block 1", t100 / t1, 2.0),
            ]
        }
        Suite::Consensus => {
            let c = consensus(&[2, 8, 32, 64], seed)?;
            vec![
                Check::at_most("assembly vs fuse_many", c.max_error, 1e-10),
                Check::at_most("change after extra rounds", c.extra_round_change, 0.0),
                Check::at_most("repeated simulation differences", simulation_determinism(seed)?, 0.0),
            ]
        }
        Suite::Patterns => pattern_checks(&PatternSetup::desk(), seed)?,
        Suite::Synthetic => {
            let dir = std::env::temp_dir().join(format!("fusegp-verify-{}-{seed}", std::process::id()));
            let identical = regeneration_identical(&dir, seed);
            let _ = std::fs::remove_dir_all(&dir);
            vec![
                Check::within("mean pooled f^2 / s^2 over 20 seeds", pooled_variance_ratio(20, seed)?, 0.8, 1.2),
                Check::at_most("regenerated files differing", f64::from(u8::from(!identical?)), 0.0),
            ]
        }
    };
    Ok(Report { suite, checks })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

fn moment_diff(a: &MomentParameters, b: &MomentParameters) -> f64 {
    rel_diff(a.cov.as_slice(), b.cov.as_slice()).max(rel_diff(&a.mean, &b.mean))
}

fn rep_rel(a: &NaturalRepresentation, b: &NaturalRepresentation) -> Result<f64> {
    Ok(a.distance(b)? / b.norm().max(f64::MIN_POSITIVE))
}

/// `n` points uniform on `[-1, 1]^d` with a smooth noisy target.
pub fn toy_block(r: &mut SimRng, n: usize, d: usize) -> Block {
    let x = Matrix::from_fn(n, d, |_, _| rng::uniform(r, -1.0, 1.0));
    let y = (0..n)
        .map(|i| {
            let row = x.row(i);
            (3.0 * row[0]).sin() + 0.5 * row.iter().skip(1).sum::<f64>() + 0.1 * rng::standard_normal(r)
        })
        .collect();
    Block::new(x, y).expect("consistent block")
}

fn vocab(m: usize, q: usize, seed: u64) -> Result<Arc<StandardizedVocabulary>> {
    Ok(Arc::new(StandardizedVocabulary::select(m, q, derive_seed(seed, "vocab", 0), DEFAULT_JITTER)?))
}

fn random_projection(r: &mut SimRng, q: usize, d: usize) -> Matrix {
    rng::normal_matrix(r, q, d)
}

fn fixed_qw(q: usize, d: usize, mu: f64, sigma: f64) -> Result<ProjectionPosterior> {
    Ok(ProjectionPosterior::new(
        Matrix::from_fn(q, d, |_, _| mu),
        Matrix::from_fn(q, d, |_, _| sigma),
    )?)
}

/// Deterministic-mode agents streaming `blocks` one at a time versus one
/// agent receiving their concatenation.
pub fn streaming_vs_batch(seed: u64) -> Result<f64> {
    let mut r = rng::stream(seed, "streaming", 0);
    let v = vocab(8, 2, seed)?;
    let w = random_projection(&mut r, 2, 2);
    let blocks: Vec<Block> = (0..3).map(|_| toy_block(&mut r, 6, 2)).collect();
    let mut streamed = Agent::deterministic(0, v.clone(), w.clone(), 1.0, 0.2)?;
    for b in &blocks {
        streamed.ingest_block(b)?;
    }
    let mut batch = Agent::deterministic(1, v, w, 1.0, 0.2)?;
    batch.ingest_block(&Block::concat(&blocks)?)?;
    Ok(moment_diff(&streamed.moments()?, &batch.moments()?))
}

/// Four deterministic agents on disjoint quarters of 40 points, fused,
/// against one agent holding all 40.
pub fn fusion_exactness(seed: u64) -> Result<f64> {
    let mut r = rng::stream(seed, "exactness", 0);
    let v = vocab(8, 2, seed)?;
    let w = random_projection(&mut r, 2, 2);
    let quarters: Vec<Block> = (0..4).map(|_| toy_block(&mut r, 10, 2)).collect();
    let reps = quarters
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let mut a = Agent::deterministic(i, v.clone(), w.clone(), 1.0, 0.2)?;
            a.ingest_block(q)?;
            Ok(a.representation().clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let fused = moments_from_natural(&fuse_many(&reps, &prior_natural(&v))?)?;
    let mut full = Agent::deterministic(9, v, w, 1.0, 0.2)?;
    full.ingest_block(&Block::concat(&quarters)?)?;
    Ok(moment_diff(&fused, &full.moments()?))
}

fn random_rep(prior: &NaturalRepresentation, r: &mut SimRng) -> Result<NaturalRepresentation> {
    let m = prior.dim();
    let a = rng::normal_matrix(r, m, m);
    let mut extra = a.tr_matmul(&a)?;
    extra.symmetrize();
    let shift: Vec<f64> = (0..m).map(|_| rng::standard_normal(r)).collect();
    prior.add_scaled(1.0, &NaturalRepresentation::new(extra, shift)?).map_err(Into::into)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusResult {
    /// Largest relative distance between an assembly and `fuse_many`.
    pub max_error: f64,
    /// Largest change of an assembly or outgoing payload when running extra
    /// rounds past the diameter.
    pub extra_round_change: f64,
}

/// Lossless protocol runs on random trees of the given sizes.
pub fn consensus(sizes: &[usize], seed: u64) -> Result<ConsensusResult> {
    let prior = prior_natural(vocab(6, 2, seed)?.as_ref());
    let mut out = ConsensusResult {
        max_error: 0.0,
        extra_round_change: 0.0,
    };
    for &n in sizes {
        let mut r = rng::stream(seed, "consensus", n as u64);
        let topo = Topology::random_tree(n, derive_seed(seed, "topology", n as u64));
        let reps = (0..n).map(|_| random_rep(&prior, &mut r)).collect::<Result<Vec<_>>>()?;
        let target = fuse_many(&reps, &prior)?;
        let t = tree_diameter(&topo)?;
        let run = run_protocol(&topo, &reps, &prior, t, LossRecovery::KeepLatest, |_| true)?;
        let longer = run_protocol(&topo, &reps, &prior, t + 3, LossRecovery::KeepLatest, |_| true)?;
        for (a, b) in run.assemblies.iter().zip(&longer.assemblies) {
            out.max_error = out.max_error.max(rep_rel(&a.rep, &target)?);
            out.extra_round_change = out.extra_round_change.max(a.rep.distance(&b.rep)?);
        }
        for (a, b) in run.next_messages.iter().zip(&longer.next_messages) {
            out.extra_round_change = out.extra_round_change.max(a.payload().distance(b.payload())?);
        }
    }
    Ok(out)
}

/// Commutativity of `fuse_pair` and the fold identity of `fuse_many`,
/// as relative distances.
pub fn fusion_algebra(seed: u64) -> Result<(f64, f64)> {
    let prior = prior_natural(vocab(6, 2, seed)?.as_ref());
    let mut r = rng::stream(seed, "algebra", 0);
    let (mut comm, mut assoc) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let (a, b, c) = (random_rep(&prior, &mut r)?, random_rep(&prior, &mut r)?, random_rep(&prior, &mut r)?);
        comm = comm.max(rep_rel(&fuse_pair(&a, &b, &prior)?, &fuse_pair(&b, &a, &prior)?)?);
        let folded = fuse_pair(&fuse_pair(&a, &b, &prior)?, &c, &prior)?;
        let right = fuse_pair(&a, &fuse_pair(&b, &c, &prior)?, &prior)?;
        let many = fuse_many(&[a, b, c], &prior)?;
        assoc = assoc.max(rep_rel(&folded, &many)?).max(rep_rel(&right, &many)?);
    }
    Ok((comm, assoc))
}

/// Shared setup of the representation and fusion loss scaling checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingSetup {
    /// Bank sizes (Lemma-1 style) or team sizes (Theorem-1 style).
    pub sizes: Vec<usize>,
    pub trials: usize,
    /// Monte Carlo samples of the reference expectation per block.
    pub truth_samples: usize,
    /// Bank size per agent in the team-size sweep.
    pub bank_size: usize,
    pub block_size: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl ScalingSetup {
    pub fn lemma1(seed: u64) -> Self {
        Self {
            sizes: vec![8, 32, 128, 512],
            trials: 50,
            truth_samples: 1_000_000,
            bank_size: 0,
            block_size: 10,
            vocab_size: 5,
            seed,
        }
    }

    pub fn theorem1(seed: u64) -> Self {
        Self {
            sizes: vec![2, 4, 8, 16],
            trials: 50,
            truth_samples: 200_000,
            bank_size: 32,
            block_size: 10,
            vocab_size: 5,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    pub sizes: Vec<usize>,
    pub medians: Vec<f64>,
    pub slope: f64,
}

const SCALING_NOISE: f64 = 0.5;

/// Reference contribution from `samples` direct draws of q(W), computed in
/// parallel chunks and averaged.
fn reference_rep(block: &Block, qw: &ProjectionPosterior, v: &StandardizedVocabulary, samples: usize, seed: u64) -> Result<NaturalRepresentation> {
    let chunks = 16usize;
    let per = samples.div_ceil(chunks);
    let parts = (0..chunks as u64)
        .into_par_iter()
        .map(|c| exact_block_e(&block.inputs, &block.targets, qw, v, 1.0, SCALING_NOISE, per, derive_seed(seed, "reference", c)))
        .collect::<fusegp_core::Result<Vec<_>>>()?;
    let m = v.size();
    let (mut e1, mut e2) = (Matrix::zeros(m, m), vec![0.0; m]);
    for (p1, p2) in &parts {
        e1.add_scaled(1.0 / chunks as f64, p1)?;
        e2.iter_mut().zip(p2).for_each(|(a, b)| *a += b / chunks as f64);
    }
    e1.symmetrize();
    Ok(add_block_contribution(&prior_natural(v), &e1, &e2)?)
}

fn estimated_rep(block: &Block, qw: &ProjectionPosterior, v: &StandardizedVocabulary, k: usize, seed: u64) -> Result<NaturalRepresentation> {
    let (q, d) = qw.shape();
    let mut bank = SampleBank::init(k, q, d, seed)?;
    bank.absorb_block(&block.inputs, &block.targets, v, 1.0)?;
    let w = importance_weights(qw, &bank)?;
    Ok(representation_from_caches(&bank, &w, v, SCALING_NOISE)?)
}

fn scaling_problem(setup: &ScalingSetup, blocks: usize) -> Result<(Arc<StandardizedVocabulary>, ProjectionPosterior, Vec<Block>)> {
    let v = vocab(setup.vocab_size, 2, setup.seed)?;
    let qw = fixed_qw(2, 2, 0.3, 0.9)?;
    let mut r = rng::stream(setup.seed, "scaling-data", 0);
    let data = (0..blocks).map(|_| toy_block(&mut r, setup.block_size, 2)).collect();
    Ok((v, qw, data))
}

/// Median `‖R − R̂‖_F` over trials for each bank size, and its log-log slope.
pub fn lemma1_scaling(setup: &ScalingSetup) -> Result<ScalingFit> {
    let (v, qw, blocks) = scaling_problem(setup, 1)?;
    let truth = reference_rep(&blocks[0], &qw, &v, setup.truth_samples, setup.seed)?;
    let medians = setup
        .sizes
        .iter()
        .map(|&k| {
            let errs = (0..setup.trials as u64)
                .into_par_iter()
                .map(|t| {
                    let est = estimated_rep(&blocks[0], &qw, &v, k, derive_seed(setup.seed, "trial-bank", (k as u64) << 32 | t))?;
                    Ok(est.distance(&truth)?)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(median(&errs))
        })
        .collect::<Result<Vec<f64>>>()?;
    let xs: Vec<f64> = setup.sizes.iter().map(|&k| k as f64).collect();
    Ok(ScalingFit {
        slope: log_log_slope(&xs, &medians),
        sizes: setup.sizes.clone(),
        medians,
    })
}

/// Median `‖R_g − R̂_g‖_F` over trials for each team size (one block and
/// one independent bank per agent), and its log-log slope.
pub fn theorem1_scaling(setup: &ScalingSetup) -> Result<ScalingFit> {
    let s_max = setup.sizes.iter().copied().max().unwrap_or(0);
    let (v, qw, blocks) = scaling_problem(setup, s_max)?;
    let prior = prior_natural(&v);
    let truths = blocks
        .iter()
        .enumerate()
        .map(|(i, b)| reference_rep(b, &qw, &v, setup.truth_samples, derive_seed(setup.seed, "agent", i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let medians = setup
        .sizes
        .iter()
        .map(|&s| {
            let exact = fuse_many(&truths[..s], &prior)?;
            let errs = (0..setup.trials as u64)
                .into_par_iter()
                .map(|t| {
                    let ests = blocks[..s]
                        .iter()
                        .enumerate()
                        .map(|(i, b)| estimated_rep(b, &qw, &v, setup.bank_size, derive_seed(setup.seed, "team-bank", t << 32 | i as u64)))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(fuse_many(&ests, &prior)?.distance(&exact)?)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(median(&errs))
        })
        .collect::<Result<Vec<f64>>>()?;
    let xs: Vec<f64> = setup.sizes.iter().map(|&s| s as f64).collect();
    Ok(ScalingFit {
        slope: log_log_slope(&xs, &medians),
        sizes: setup.sizes.clone(),
        medians,
    })
}

/// Largest elementwise |z| of the mean of `R̂ − R` over independent banks
/// (upper triangle of `R1` and all of `R2`).
pub fn representation_unbiasedness(banks: usize, truth_samples: usize, seed: u64) -> Result<f64> {
    let setup = ScalingSetup {
        vocab_size: 5,
        block_size: 10,
        seed,
        ..ScalingSetup::lemma1(seed)
    };
    let (v, qw, blocks) = scaling_problem(&setup, 1)?;
    let truth = reference_rep(&blocks[0], &qw, &v, truth_samples, derive_seed(seed, "unbiased-truth", 0))?;
    let m = v.size();
    let flatten = |rep: &NaturalRepresentation| -> Vec<f64> {
        let mut out = Vec::with_capacity(m * (m + 1) / 2 + m);
        for i in 0..m {
            for j in i..m {
                out.push(rep.precision()[(i, j)]);
            }
        }
        out.extend_from_slice(rep.shift());
        out
    };
    let target = flatten(&truth);
    let diffs = (0..banks as u64)
        .into_par_iter()
        .map(|b| {
            let est = estimated_rep(&blocks[0], &qw, &v, 10, derive_seed(seed, "unbiased-bank", b))?;
            Ok(flatten(&est).iter().zip(&target).map(|(a, t)| a - t).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(max_abs_z(&diffs))
}

/// `max_j |mean_j| / se_j` over the columns of `samples`.
fn max_abs_z(samples: &[Vec<f64>]) -> f64 {
    let n = samples.len() as f64;
    let cols = samples[0].len();
    (0..cols)
        .map(|j| {
            let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n;
            let var = samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            if se > 0.0 {
                mean.abs() / se
            } else if mean == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

/// `|mean(q/p) − 1|` over prior draws for a random q(W).
pub fn importance_weight_mean(samples: usize, seed: u64) -> Result<f64> {
    let mut r = rng::stream(seed, "weights", 0);
    let mu = Matrix::from_fn(2, 2, |_, _| 0.3 * rng::standard_normal(&mut r));
    let sigma = Matrix::from_fn(2, 2, |_, _| rng::uniform(&mut r, 0.8, 1.2));
    let qw = ProjectionPosterior::new(mu, sigma)?;
    let bank = SampleBank::init(samples, 2, 2, derive_seed(seed, "weights-bank", 0))?;
    let w = importance_weights(&qw, &bank)?;
    Ok((w.iter().sum::<f64>() / samples as f64 - 1.0).abs())
}

/// Relative gap between caching several blocks and summing per-block
/// contributions at fixed weights; and the distance of an empty bank's
/// representation from the prior.
pub fn additivity(seed: u64) -> Result<(f64, f64)> {
    let v = vocab(6, 2, seed)?;
    let mut r = rng::stream(seed, "additivity", 0);
    let blocks: Vec<Block> = (0..4).map(|_| toy_block(&mut r, 7, 2)).collect();
    let bank = SampleBank::init(5, 2, 2, derive_seed(seed, "additivity-bank", 0))?;
    let weights: Vec<f64> = (0..5).map(|_| rng::uniform(&mut r, 0.2, 2.0)).collect();
    let prior = prior_natural(&v);
    let empty = representation_from_caches(&bank, &weights, &v, 0.3)?.distance(&prior)?;

    let mut all = bank.clone();
    let mut summed = prior.clone();
    for b in &blocks {
        all.absorb_block(&b.inputs, &b.targets, &v, 1.0)?;
        let mut single = bank.clone();
        single.absorb_block(&b.inputs, &b.targets, &v, 1.0)?;
        let part = representation_from_caches(&single, &weights, &v, 0.3)?;
        summed = summed.add_scaled(1.0, &part.add_scaled(-1.0, &prior)?)?;
    }
    let cached = representation_from_caches(&all, &weights, &v, 0.3)?;
    Ok((rep_rel(&cached, &summed)?, empty))
}

fn gradient_problem(seed: u64, blocks: usize, n: usize) -> Result<(Arc<StandardizedVocabulary>, MomentParameters, ProjectionPosterior, Vec<Block>)> {
    let v = vocab(5, 2, seed)?;
    let mut r = rng::stream(seed, "gradient-problem", 0);
    let data: Vec<Block> = (0..blocks).map(|_| toy_block(&mut r, n, 2)).collect();
    let m = v.size();
    let mean: Vec<f64> = (0..m).map(|_| 0.5 * rng::standard_normal(&mut r)).collect();
    let mut cov = v.prior_covariance().scale(0.5);
    cov.add_to_diagonal(0.05);
    let mu = Matrix::from_fn(2, 2, |_, _| 0.5 * rng::standard_normal(&mut r));
    let sigma = Matrix::from_fn(2, 2, |_, _| rng::uniform(&mut r, 0.4, 0.9));
    Ok((v, MomentParameters { mean, cov }, ProjectionPosterior::new(mu, sigma)?, data))
}

/// Max relative error of the reparameterized gradient against central
/// differences with step 1e-5 at fixed noise (d = 2, m = 5, n = 20).
pub fn gradient_check(seed: u64) -> Result<f64> {
    let (v, qu, qw, blocks) = gradient_problem(seed, 1, 20)?;
    let obj = ElboObjective::new(&v, &qu, 1.0, 0.3)?;
    let noise = draw_noise(derive_seed(seed, "gradcheck-noise", 0), 3, 2, 2);
    let g = elbo_gradient(&obj, &qw, &blocks, None, &noise)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for idx in 0..4 {
        for on_sigma in [false, true] {
            let value_at = |delta: f64| -> Result<f64> {
                let (mut mu, mut sigma) = (qw.mu().clone(), qw.sigma().clone());
                let target = if on_sigma { &mut sigma } else { &mut mu };
                target.as_mut_slice()[idx] += delta;
                Ok(elbo_value(&obj, &ProjectionPosterior::new(mu, sigma)?, &blocks, None, &noise)?)
            };
            let fd = (value_at(h)? - value_at(-h)?) / (2.0 * h);
            let an = if on_sigma { g.sigma.as_slice()[idx] } else { g.mu.as_slice()[idx] };
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
        }
    }
    Ok(worst)
}

/// Largest per-coordinate |z| between the mean of `draws` single-block
/// gradients (scaled by the block count) and the full-batch gradient on a
/// 5-block problem, at fixed reparameterization noise.
pub fn gradient_unbiasedness(draws: usize, seed: u64) -> Result<f64> {
    let n_blocks = 5;
    let (v, qu, qw, blocks) = gradient_problem(seed, n_blocks, 8)?;
    let obj = ElboObjective::new(&v, &qu, 1.0, 0.3)?;
    let noise = draw_noise(derive_seed(seed, "unbiased-noise", 0), 2, 2, 2);
    let full = elbo_gradient(&obj, &qw, &blocks, None, &noise)?;
    let per_block = blocks
        .iter()
        .map(|b| elbo_gradient(&obj, &qw, std::slice::from_ref(b), Some(n_blocks), &noise))
        .collect::<fusegp_core::Result<Vec<_>>>()?;
    let mut r = rng::stream(seed, "block-draws", 0);
    let full_flat: Vec<f64> = full.mu.as_slice().iter().chain(full.sigma.as_slice()).copied().collect();
    let diffs: Vec<Vec<f64>> = (0..draws)
        .map(|_| {
            let g = &per_block[rand_index(&mut r, n_blocks)];
            g.mu.as_slice()
                .iter()
                .chain(g.sigma.as_slice())
                .zip(&full_flat)
                .map(|(a, b)| a - b)
                .collect()
        })
        .collect();
    Ok(max_abs_z(&diffs))
}

fn rand_index(r: &mut SimRng, n: usize) -> usize {
    ((rng::uniform(r, 0.0, 1.0) * n as f64) as usize).min(n - 1)
}

/// Median ELBO at block 0 and after `blocks` blocks over `seeds` synthetic
/// draws, evaluated on the blocks the agent ingests.
pub fn elbo_ascent(seeds: u64, blocks: usize, seed: u64) -> Result<(f64, f64)> {
    let pairs = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let s = seed + i;
            let cfg = RunConfig {
                seed: s,
                blocks_per_stream: blocks.div_ceil(2),
                test_size: 1,
                ..RunConfig::default()
            };
            let data: StreamData = generate(&cfg.synthetic_spec())?.into();
            let stream: Vec<Block> = data.arrivals(s).into_iter().take(blocks).collect();
            let v = vocab(cfg.vocab_size, 2, s)?;
            let bank = SampleBank::init(cfg.bank_size, 2, 2, derive_seed(s, "bank", 0))?;
            let learn = LearnConfig {
                seed: derive_seed(s, "gradient", 0),
                ..cfg.learn_config()
            };
            let mut agent = Agent::new(0, v, bank, cfg.signal_scale, cfg.noise_std, learn)?;
            let before = agent.elbo(&stream, None)?;
            for b in &stream {
                agent.ingest_block(b)?;
            }
            Ok((before, agent.elbo(&stream, None)?))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let before: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let after: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok((median(&before), median(&after)))
}

/// Largest increase of any predictive variance across ten ingested blocks
/// in deterministic mode.
pub fn monotone_information(seed: u64) -> Result<f64> {
    let mut r = rng::stream(seed, "monotone", 0);
    let v = vocab(10, 2, seed)?;
    let mut agent = Agent::deterministic(0, v, random_projection(&mut r, 2, 2), 1.0, 0.2)?;
    let test = toy_block(&mut r, 50, 2);
    let mut prev = agent.predict(&test.inputs, false)?.1;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10 {
        agent.ingest_block(&toy_block(&mut r, 5, 2))?;
        let next = agent.predict(&test.inputs, false)?.1;
        worst = prev.iter().zip(&next).map(|(a, b)| b - a).fold(worst, f64::max);
        prev = next;
    }
    Ok(worst)
}

/// Median wall time (seconds) of ingesting one more block into a fresh
/// agent and into one that already holds `at - 1` blocks.
pub fn ingest_timings(vocab_size: usize, bank_size: usize, at: usize, seed: u64) -> Result<(f64, f64)> {
    let mut r = rng::stream(seed, "timing", 0);
    let v = vocab(vocab_size, 2, seed)?;
    let bank = SampleBank::init(bank_size, 2, 2, derive_seed(seed, "bank", 0))?;
    let fresh = Agent::new(0, v, bank, 1.0, 0.1, LearnConfig::default())?;
    let mut warm = fresh.clone();
    for _ in 1..at {
        warm.ingest_block(&toy_block(&mut r, 10, 2))?;
    }
    let probe = toy_block(&mut r, 10, 2);
    let time = |agent: &Agent| -> Result<f64> {
        let samples = (0..31)
            .map(|_| {
                let mut a = agent.clone();
                let start = Instant::now();
                a.ingest_block(&probe)?;
                Ok(start.elapsed().as_secs_f64())
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(median(&samples))
    };
    // warm up caches and allocator before measuring
    time(&fresh)?;
    Ok((time(&fresh)?, time(&warm)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelChecks {
    pub asymmetry: f64,
    pub warp_error: f64,
    pub gram_error: f64,
    /// Number of vocabularies (up to m = 512) whose jittered Gram matrix
    /// factorized; zero when any failed.
    pub factorized: usize,
}

pub fn kernel_properties(seed: u64) -> Result<KernelChecks> {
    let mut r = rng::stream(seed, "kernel", 0);
    let mut out = KernelChecks {
        asymmetry: 0.0,
        warp_error: 0.0,
        gram_error: 0.0,
        factorized: 0,
    };
    for _ in 0..500 {
        let q = 1 + rand_index(&mut r, 4);
        let d = 1 + rand_index(&mut r, 4);
        let z: Vec<f64> = (0..q).map(|_| 2.0 * rng::standard_normal(&mut r)).collect();
        let z2: Vec<f64> = (0..q).map(|_| 2.0 * rng::standard_normal(&mut r)).collect();
        out.asymmetry = out.asymmetry.max((k_uu(&z, &z2)? - k_uu(&z2, &z)?).abs());
        let params = DomainParams::new(random_projection(&mut r, q, d), rng::uniform(&mut r, 0.2, 3.0), 0.1)?;
        let x: Vec<f64> = (0..d).map(|_| rng::standard_normal(&mut r)).collect();
        let x2: Vec<f64> = (0..d).map(|_| rng::standard_normal(&mut r)).collect();
        let s2 = params.signal_scale * params.signal_scale;
        let warped = s2 * k_uu(&params.project(&x)?, &params.project(&x2)?)?;
        out.warp_error = out.warp_error.max((k_ff(&x, &x2, &params)? - warped).abs());
    }
    let v = vocab(12, 3, seed)?;
    let params = DomainParams::new(random_projection(&mut r, 3, 4), 1.7, 0.1)?;
    let x = Matrix::from_fn(9, 4, |_, _| rng::standard_normal(&mut r));
    let g = gram_cross(&x, &v, &params)?;
    for i in 0..9 {
        for j in 0..12 {
            out.gram_error = out.gram_error.max((g[(i, j)] - k_fu(x.row(i), v.points().row(j), &params)?).abs());
        }
    }
    let mut ok = 0;
    for (m, q) in [(8, 2), (64, 2), (512, 2), (512, 6)] {
        if StandardizedVocabulary::select(m, q, derive_seed(seed, "vocab-size", m as u64), DEFAULT_JITTER).is_ok() {
            ok += 1;
        } else {
            ok = 0;
            break;
        }
    }
    out.factorized = ok;
    Ok(out)
}

/// Number of differences between two identical simulation runs, plus one
/// if a different seed does not change the trace.
pub fn simulation_determinism(seed: u64) -> Result<f64> {
    let cfg = RunConfig {
        seed,
        blocks_per_stream: 8,
        test_size: 30,
        vocab_size: 10,
        bank_size: 4,
        loss_rate: 0.3,
        fusion_period: 4,
        ..RunConfig::default()
    };
    let data: StreamData = generate(&cfg.synthetic_spec())?.into();
    let a = team_run(&cfg, 5, &data, &NullClock)?;
    let b = team_run(&cfg, 5, &data, &NullClock)?;
    let other = team_run(&RunConfig { seed: seed + 1, ..cfg }, 5, &data, &NullClock)?;
    let differing = a.records.iter().zip(&b.records).filter(|(x, y)| x != y).count() + usize::from(a.records.len() != b.records.len());
    Ok(differing as f64 + f64::from(u8::from(a == other)))
}

/// Mean over seeds of the per-seed mean of `f²` at 2000 pooled points,
/// relative to `σ_s²`.
pub fn pooled_variance_ratio(seeds: u64, seed: u64) -> Result<f64> {
    let ratios = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let cfg = RunConfig {
                seed: seed + i,
                input_dim: 6,
                blocks_per_stream: 45,
                block_size: 20,
                test_size: 200,
                signal_scale: 1.3,
                ..RunConfig::default()
            };
            let data = generate(&cfg.synthetic_spec())?;
            let all: Vec<f64> = data.stream_latents.iter().flatten().flatten().chain(&data.test_latent).copied().collect();
            Ok(all.iter().map(|f| f * f).sum::<f64>() / all.len() as f64 / (1.3 * 1.3))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ratios.iter().sum::<f64>() / seeds as f64)
}

/// Generates the same dataset twice under `dir` and compares the bytes.
pub fn regeneration_identical(dir: &std::path::Path, seed: u64) -> Result<bool> {
    let cfg = RunConfig {
        seed,
        blocks_per_stream: 10,
        test_size: 50,
        ..RunConfig::default()
    };
    let (a, b) = (dir.join("a"), dir.join("b"));
    let pa = save_dataset(&a, &generate(&cfg.synthetic_spec())?)?;
    let pb = save_dataset(&b, &generate(&cfg.synthetic_spec())?)?;
    for (x, y) in pa.iter().zip(&pb) {
        let read = |p: &std::path::Path| std::fs::read(p).map_err(crate::error::io_err(p));
        if read(x)? != read(y)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Settings of the team-level pattern checks.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSetup {
    pub config: RunConfig,
    pub two_agent_seeds: u64,
    pub loss_seeds: u64,
    pub loss_agents: usize,
    pub frozen_after: usize,
    pub active_blocks: usize,
}

impl PatternSetup {
    /// Two-dimensional synthetic domain, 100 blocks of 10 points per stream.
    pub fn desk() -> Self {
        Self {
            config: RunConfig {
                loss_grid: vec![0.0, 0.2, 0.4, 0.6],
                ..RunConfig::default()
            },
            two_agent_seeds: 10,
            loss_seeds: 20,
            loss_agents: 20,
            frozen_after: 5,
            active_blocks: 100,
        }
    }

    pub fn data(&self, seed: u64) -> Result<StreamData> {
        let cfg = RunConfig { seed, ..self.config.clone() };
        Ok(generate(&cfg.synthetic_spec())?.into())
    }
}

/// Checkpoint-wise means over seeds of the two-agent run.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoAgentSummary {
    pub checkpoints: Vec<usize>,
    pub mean_pre: Vec<f64>,
    pub mean_post: Vec<f64>,
}

impl TwoAgentSummary {
    pub fn fraction_improved(&self) -> f64 {
        let ok = self.mean_pre.iter().zip(&self.mean_post).filter(|(pre, post)| post <= pre).count();
        ok as f64 / self.checkpoints.len().max(1) as f64
    }

    /// `pre − post` at a batch index.
    pub fn gap_at(&self, batch: usize) -> Option<f64> {
        let i = self.checkpoints.iter().position(|&c| c == batch)?;
        Some(self.mean_pre[i] - self.mean_post[i])
    }
}

pub fn two_agent_summary(setup: &PatternSetup, datasets: &[StreamData], seed: u64) -> Result<TwoAgentSummary> {
    let traces = datasets
        .par_iter()
        .enumerate()
        .map(|(i, data)| {
            let cfg = RunConfig {
                seed: seed + i as u64,
                ..setup.config.clone()
            };
            team_run(&cfg, 2, data, &NullClock)
        })
        .collect::<Result<Vec<_>>>()?;
    let checkpoints = traces[0].checkpoints();
    let n = traces.len() as f64;
    let (mut mean_pre, mut mean_post) = (vec![0.0; checkpoints.len()], vec![0.0; checkpoints.len()]);
    for t in &traces {
        for (i, &c) in checkpoints.iter().enumerate() {
            let (pre, post) = t.mean_rmse(c).ok_or_else(|| CliError::Config(format!("missing checkpoint {c}")))?;
            mean_pre[i] += pre / n;
            mean_post[i] += post / n;
        }
    }
    Ok(TwoAgentSummary {
        checkpoints,
        mean_pre,
        mean_post,
    })
}

/// Median pre/post RMSE of the frozen and the active agent.
pub fn disparity_medians(setup: &PatternSetup, datasets: &[StreamData], seed: u64) -> Result<[f64; 4]> {
    let outcomes = datasets
        .par_iter()
        .enumerate()
        .map(|(i, data)| {
            let cfg = RunConfig {
                seed: seed + i as u64,
                ..setup.config.clone()
            };
            disparity_run(&cfg, data, setup.frozen_after, setup.active_blocks)
        })
        .collect::<Result<Vec<_>>>()?;
    let med = |f: fn(&crate::experiments::DisparityOutcome) -> f64| median(&outcomes.iter().map(f).collect::<Vec<_>>());
    Ok([med(|o| o.frozen_pre), med(|o| o.frozen_post), med(|o| o.active_pre), med(|o| o.active_post)])
}

/// Seed-summed decentralized and centralized RMSE per loss rate.
pub fn loss_totals(setup: &PatternSetup, datasets: &[StreamData], seed: u64) -> Result<Vec<(f64, f64, f64)>> {
    let cfg = RunConfig {
        agents: setup.loss_agents,
        ..setup.config.clone()
    };
    let per_seed = datasets
        .par_iter()
        .enumerate()
        .map(|(i, data)| loss_points(&cfg, seed + i as u64, data))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..cfg.loss_grid.len())
        .map(|r| {
            let dec = per_seed.iter().map(|p| p[r].decentralized).sum();
            let cen = per_seed.iter().map(|p| p[r].centralized).sum();
            (cfg.loss_grid[r], dec, cen)
        })
        .collect())
}

pub fn pattern_checks(setup: &PatternSetup, seed: u64) -> Result<Vec<Check>> {
    let count = setup.two_agent_seeds.max(setup.loss_seeds);
    let datasets = (0..count)
        .into_par_iter()
        .map(|i| setup.data(seed + i))
        .collect::<Result<Vec<_>>>()?;
    let summary = two_agent_summary(setup, &datasets[..setup.two_agent_seeds as usize], seed)?;
    let last = *summary.checkpoints.last().unwrap_or(&0);
    let early = summary.checkpoints.get(1).copied().unwrap_or(last);
    let mut checks = vec![
        Check::at_least("fraction of checkpoints with mean post <= pre", summary.fraction_improved(), 0.9),
        Check::positive(
            &format!("gap at batch {early} minus gap at batch {last}"),
            summary.gap_at(early).unwrap_or(f64::NAN) - summary.gap_at(last).unwrap_or(f64::NAN),
        ),
    ];
    let [fp, fq, ap, aq] = disparity_medians(setup, &datasets[..setup.two_agent_seeds as usize], seed)?;
    checks.push(Check::positive("frozen agent median pre - post", fp - fq));
    checks.push(Check::at_most("active agent median post / pre", aq / ap, 1.05));
    for (rate, dec, cen) in loss_totals(setup, &datasets[..setup.loss_seeds as usize], seed)? {
        let n = setup.loss_seeds as f64;
        if rate == 0.0 {
            checks.push(Check::at_most("|decentralized - centralized| at loss 0", ((dec - cen) / n).abs(), 1e-10));
        } else {
            checks.push(Check::at_most(&format!("decentralized - centralized mean RMSE at loss {rate}"), (dec - cen) / n, 0.0));
        }
    }
    Ok(checks)
}
