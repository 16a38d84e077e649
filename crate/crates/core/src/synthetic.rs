//! Two warped views of one latent function: `f_s(x) = u(W_s·x)` with
//! `u ~ GP(0, σ_s²·k_uu)`, observed with Gaussian noise.
//!
//! All projected inputs of both streams and the test set are pooled and the
//! latent values drawn jointly and exactly, one point at a time, each
//! conditioned on all previous ones through a row-wise Cholesky factor.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Block;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, sq_dist, Matrix};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub input_dim: usize,
    pub projection1: Matrix,
    pub projection2: Matrix,
    pub signal_scale: f64,
    pub noise_std: f64,
    pub blocks_per_stream: usize,
    pub block_size: usize,
    pub test_size: usize,
    pub jitter: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Random orthogonal projections scaled by 1.5 and 0.7.
    pub fn with_defaults(input_dim: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "projection", 0);
        Self {
            input_dim,
            projection1: random_orthogonal(&mut r, input_dim).scale(1.5),
            projection2: random_orthogonal(&mut r, input_dim).scale(0.7),
            signal_scale: 1.0,
            noise_std: 0.1,
            blocks_per_stream: 50,
            block_size: 20,
            test_size: 500,
            jitter: 1e-8,
            seed,
        }
    }

    pub fn pooled_points(&self) -> usize {
        2 * self.blocks_per_stream * self.block_size + self.test_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input dimension must be at least 1".into()));
        }
        if self.block_size == 0 || self.test_size == 0 {
            return Err(Error::InvalidArgument("block_size and test_size must be at least 1".into()));
        }
        for w in [&self.projection1, &self.projection2] {
            if w.cols() != self.input_dim || w.rows() != self.projection1.rows() || w.rows() == 0 {
                return Err(Error::InvalidArgument("projections must share shape q×d with d = input_dim".into()));
            }
        }
        if !(self.signal_scale > 0.0) || !(self.noise_std >= 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::InvalidArgument(
                "signal scale must be positive; noise std and jitter nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Haar-distributed orthogonal matrix (Gram–Schmidt on a Gaussian matrix).
pub fn random_orthogonal<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Matrix {
    loop {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut ok = true;
        for _ in 0..n {
            let mut v: Vec<f64> = (0..n).map(|_| rng::standard_normal(rng)).collect();
            for prev in &rows {
                let c = dot(&v, prev);
                v.iter_mut().zip(prev).for_each(|(a, b)| *a -= c * b);
            }
            let len = norm(&v);
            if len < 1e-8 {
                ok = false;
                break;
            }
            v.iter_mut().for_each(|a| *a /= len);
            rows.push(v);
        }
        if ok {
            return Matrix::from_rows(&rows).expect("square rows");
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub streams: [Vec<Block>; 2],
    /// Noise-free values matching `streams` block for block.
    pub stream_latents: [Vec<Vec<f64>>; 2],
    pub test: Block,
    pub test_latent: Vec<f64>,
    /// Source stream (1 or 2) of each test point.
    pub test_domains: Vec<u8>,
}

/// Draws both streams and the mixed test set. Test points alternate between
/// the two domains.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let d = spec.input_dim;
    let per_stream = spec.blocks_per_stream * spec.block_size;
    let total = spec.pooled_points();
    let mut input_rng = rng::stream(spec.seed, "inputs", 0);
    let inputs = Matrix::from_fn(total, d, |_, _| rng::uniform(&mut input_rng, -1.0, 1.0));
    let domains: Vec<u8> = (0..total)
        .map(|i| match i {
            i if i < per_stream => 1,
            i if i < 2 * per_stream => 2,
            i => 1 + ((i - 2 * per_stream) % 2) as u8,
        })
        .collect();
    let projected: Vec<Vec<f64>> = (0..total)
        .map(|i| {
            let w = if domains[i] == 1 { &spec.projection1 } else { &spec.projection2 };
            w.matvec(inputs.row(i))
        })
        .collect::<Result<_>>()?;

    let latent = draw_latent(&projected, spec.signal_scale, spec.jitter, spec.seed)?;
    let mut noise_rng = rng::stream(spec.seed, "noise", 0);
    let observed: Vec<f64> = latent
        .iter()
        .map(|f| f + spec.noise_std * rng::standard_normal(&mut noise_rng))
        .collect();

    let take = |start: usize, len: usize| -> Result<(Block, Vec<f64>)> {
        let x = Matrix::from_vec(len, d, inputs.as_slice()[start * d..(start + len) * d].to_vec())?;
        Ok((Block::new(x, observed[start..start + len].to_vec())?, latent[start..start + len].to_vec()))
    };
    let mut streams: [Vec<Block>; 2] = [Vec::new(), Vec::new()];
    let mut stream_latents: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for s in 0..2 {
        for b in 0..spec.blocks_per_stream {
            let (block, f) = take(s * per_stream + b * spec.block_size, spec.block_size)?;
            streams[s].push(block);
            stream_latents[s].push(f);
        }
    }
    let (test, test_latent) = take(2 * per_stream, spec.test_size)?;
    Ok(SyntheticData {
        streams,
        stream_latents,
        test,
        test_latent,
        test_domains: domains[2 * per_stream..].to_vec(),
    })
}

/// Exact draw from `N(0, σ_s²·K + jitter·I)` over the given points.
pub fn draw_latent(points: &[Vec<f64>], signal_scale: f64, jitter: f64, seed: u64) -> Result<Vec<f64>> {
    let n = points.len();
    let s2 = signal_scale * signal_scale;
    // packed lower triangle, row i at offset i(i+1)/2
    let mut factor = vec![0.0; n * (n + 1) / 2];
    for i in 0..n {
        let (done, rest) = factor.split_at_mut(i * (i + 1) / 2);
        let current = &mut rest[..=i];
        for j in 0..i {
            let lj = &done[j * (j + 1) / 2..j * (j + 1) / 2 + j + 1];
            let k = s2 * libm::exp(-0.5 * sq_dist(&points[i], &points[j]));
            current[j] = (k - dot(&current[..j], &lj[..j])) / lj[j];
        }
        let residual = s2 + jitter - dot(&current[..i], &current[..i]);
        if !(residual > 0.0) {
            return Err(Error::GenerationNotPositiveDefinite { index: i });
        }
        current[i] = libm::sqrt(residual);
    }
    let mut r = rng::stream(seed, "latent", 0);
    let eps: Vec<f64> = (0..n).map(|_| rng::standard_normal(&mut r)).collect();
    Ok((0..n)
        .map(|i| {
            let off = i * (i + 1) / 2;
            dot(&factor[off..=off + i], &eps[..=i])
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            blocks_per_stream: 5,
            block_size: 8,
            test_size: 20,
            ..SyntheticSpec::with_defaults(3, seed)
        }
    }

    #[test]
    fn shapes_and_domains() {
        let data = generate(&small(1)).unwrap();
        assert_eq!(data.streams[0].len(), 5);
        assert!(data.streams.iter().flatten().all(|b| b.len() == 8 && b.input_dim() == 3));
        assert_eq!(data.test.len(), 20);
        assert_eq!(data.test_domains.iter().filter(|d| **d == 1).count(), 10);
        assert!(data.test.inputs.as_slice().iter().all(|x| (-1.0..1.0).contains(x)));
    }

    #[test]
    fn projections_are_scaled_orthogonal() {
        let spec = SyntheticSpec::with_defaults(4, 3);
        let g = spec.projection1.tr_matmul(&spec.projection1).unwrap();
        let target = Matrix::identity(4).scale(2.25);
        assert!(g.sub(&target).unwrap().max_abs() < 1e-12);
        let g2 = spec.projection2.matmul(&spec.projection2.transpose()).unwrap();
        assert!(g2.sub(&Matrix::identity(4).scale(0.49)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(generate(&small(5)).unwrap(), generate(&small(5)).unwrap());
        assert_ne!(generate(&small(5)).unwrap(), generate(&small(6)).unwrap());
    }

    #[test]
    fn noiseless_observations_are_latent() {
        let spec = SyntheticSpec {
            noise_std: 0.0,
            ..small(2)
        };
        let data = generate(&spec).unwrap();
        for (b, f) in data.streams[1].iter().zip(&data.stream_latents[1]) {
            assert_eq!(&b.targets, f);
        }
        assert_eq!(data.test.targets, data.test_latent);
    }

    #[test]
    fn draws_match_kernel_covariance() {
        // two points at squared distance 2: covariance σ²e⁻¹
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let (mut s00, mut s01) = (0.0, 0.0);
        let trials = 20_000;
        for t in 0..trials {
            let f = draw_latent(&pts, 2.0, 1e-8, t).unwrap();
            s00 += f[0] * f[0];
            s01 += f[0] * f[1];
        }
        let (v, c) = (s00 / trials as f64, s01 / trials as f64);
        assert!((v - 4.0).abs() < 0.15, "{v}");
        assert!((c - 4.0 * libm::exp(-1.0)).abs() < 0.15, "{c}");
    }

    #[test]
    fn coincident_points_without_jitter_are_rejected() {
        let pts = vec![vec![0.5], vec![0.5]];
        assert_eq!(
            draw_latent(&pts, 1.0, 0.0, 0).unwrap_err(),
            Error::GenerationNotPositiveDefinite { index: 1 }
        );
    }

    #[test]
    fn pooled_variance_matches_signal_scale() {
        // marginal check: the mean of f² over points and seeds estimates σ_s²
        let mut per_seed = Vec::new();
        for seed in 0..20 {
            let spec = SyntheticSpec {
                blocks_per_stream: 45,
                block_size: 20,
                test_size: 200,
                signal_scale: 1.3,
                ..SyntheticSpec::with_defaults(6, seed)
            };
            let data = generate(&spec).unwrap();
            let all: Vec<f64> = data.stream_latents.iter().flatten().flatten().copied().collect();
            per_seed.push(all.iter().map(|f| f * f).sum::<f64>() / all.len() as f64);
        }
        let var = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        assert!((var / (1.3 * 1.3) - 1.0).abs() <= 0.2, "{var} from {per_seed:?}");
    }
}
