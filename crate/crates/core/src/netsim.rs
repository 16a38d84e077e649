//! Seeded simulation of a team of agents: blocks are dispatched to random
//! agents, fusion sweeps run over a tree with Bernoulli message loss, and a
//! centralized server baseline that permanently drops lost uploads is
//! evaluated on the same state.
//!
//! Randomness is split into named sub-streams of the master seed (`vocab`,
//! `bank`, `dispatch`, `topology`, `loss`, `central`, `gradient`) so each
//! component can be varied without perturbing the others.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::agent::{Agent, LearnConfig, TestFeatures};
use crate::data::{rmse, Block};
use crate::error::{Error, Result};
use crate::fusion::{
    fuse_many, run_protocol, spanning_tree, tree_diameter, Delivery, FusionMessage, LossRecovery, Topology,
};
use crate::kernel::{StandardizedVocabulary, DEFAULT_JITTER};
use crate::posterior::{prior_natural, NaturalRepresentation, SampleBank};
use crate::rng::{self, derive_seed};

#[derive(Debug, Clone, PartialEq)]
pub enum TopologyKind {
    Line,
    Star,
    RandomTree,
    /// Arbitrary graph; reduced to a spanning tree with unit latencies.
    Custom(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTemplate {
    pub vocab_size: usize,
    pub bank_size: usize,
    pub input_dim: usize,
    /// Dimension of the standardized domain.
    pub std_dim: usize,
    pub signal_scale: f64,
    pub noise_std: f64,
    pub jitter: f64,
    /// One sample bank for the whole team, or one per agent.
    pub shared_bank: bool,
    pub learn: LearnConfig,
}

impl AgentTemplate {
    pub fn new(input_dim: usize) -> Self {
        Self {
            vocab_size: 50,
            bank_size: 10,
            input_dim,
            std_dim: input_dim,
            signal_scale: 1.0,
            noise_std: 0.1,
            jitter: DEFAULT_JITTER,
            shared_bank: true,
            learn: LearnConfig::default(),
        }
    }
}

/// Which agent receives each block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DispatchPlan {
    Uniform,
    Fixed(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_agents: usize,
    pub topology: TopologyKind,
    pub loss_rate: f64,
    pub fusion_period: usize,
    pub seed: u64,
    pub template: AgentTemplate,
    pub recovery: LossRecovery,
    pub dispatch: DispatchPlan,
    /// Also evaluate the centralized baseline at each checkpoint.
    pub centralized: bool,
    /// Stop recording after this many checkpoints.
    pub max_checkpoints: Option<usize>,
    pub record_deliveries: bool,
    /// Keep every transmitted message (delivered or not) in the trace.
    pub record_messages: bool,
}

impl SimConfig {
    pub fn new(n_agents: usize, template: AgentTemplate, seed: u64) -> Self {
        Self {
            n_agents,
            topology: TopologyKind::RandomTree,
            loss_rate: 0.0,
            fusion_period: 10,
            seed,
            template,
            recovery: LossRecovery::KeepLatest,
            dispatch: DispatchPlan::Uniform,
            centralized: false,
            max_checkpoints: None,
            record_deliveries: false,
            record_messages: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::InvalidArgument("at least one agent is required".into()));
        }
        validate_loss_rate(self.loss_rate)?;
        if self.fusion_period == 0 {
            return Err(Error::InvalidArgument("fusion_period must be at least 1".into()));
        }
        let t = &self.template;
        if t.vocab_size == 0 || t.bank_size == 0 || t.input_dim == 0 || t.std_dim == 0 {
            return Err(Error::InvalidArgument(
                "vocabulary size, bank size and dimensions must be at least 1".into(),
            ));
        }
        t.learn.validate()?;
        if let DispatchPlan::Fixed(plan) = &self.dispatch {
            if let Some(a) = plan.iter().find(|a| **a >= self.n_agents) {
                return Err(Error::InvalidArgument(format!("dispatch plan names agent {a} of {}", self.n_agents)));
            }
        }
        Ok(())
    }
}

pub fn validate_loss_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("loss rate must lie in [0, 1) (got {rate})")))
    }
}

/// Wall-clock source for the `wall_ms` column.
pub trait Clock {
    fn elapsed_ms(&self) -> f64;
}

/// Always reports zero, keeping traces bit-reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn elapsed_ms(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub batch_index: usize,
    pub agent_id: usize,
    pub rmse_pre: f64,
    pub rmse_post: f64,
    pub ess: f64,
    pub wall_ms: f64,
    pub complete: bool,
    pub rmse_centralized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepDelivery {
    pub sweep: usize,
    pub delivery: Delivery,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracedMessage {
    pub sweep: usize,
    pub delivered: bool,
    pub message: FusionMessage,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub records: Vec<CheckpointRecord>,
    pub deliveries: Vec<SweepDelivery>,
    pub messages: Vec<TracedMessage>,
}

impl SimTrace {
    /// Distinct checkpoint batch indices in order.
    pub fn checkpoints(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for r in &self.records {
            if out.last() != Some(&r.batch_index) {
                out.push(r.batch_index);
            }
        }
        out
    }

    pub fn at(&self, batch_index: usize) -> impl Iterator<Item = &CheckpointRecord> {
        self.records.iter().filter(move |r| r.batch_index == batch_index)
    }

    /// Mean `(rmse_pre, rmse_post)` over agents at a checkpoint.
    pub fn mean_rmse(&self, batch_index: usize) -> Option<(f64, f64)> {
        let (mut pre, mut post, mut n) = (0.0, 0.0, 0usize);
        for r in self.at(batch_index) {
            pre += r.rmse_pre;
            post += r.rmse_post;
            n += 1;
        }
        (n > 0).then(|| (pre / n as f64, post / n as f64))
    }
}

/// Uniform i.i.d. assignment of `n_blocks` blocks to `n_agents` agents.
pub fn dispatch_stream(n_blocks: usize, n_agents: usize, seed: u64) -> Result<Vec<usize>> {
    if n_agents == 0 {
        return Err(Error::InvalidArgument("cannot dispatch to zero agents".into()));
    }
    let mut r = rng::rng_from_seed(seed);
    Ok((0..n_blocks).map(|_| r.random_range(0..n_agents)).collect())
}

/// Pools blocks from several streams in a seeded random arrival order.
pub fn shuffle_blocks(streams: &[&[Block]], seed: u64) -> Vec<Block> {
    let mut pooled: Vec<Block> = streams.iter().flat_map(|s| s.iter().cloned()).collect();
    pooled.shuffle(&mut rng::rng_from_seed(seed));
    pooled
}

/// The server fuses only the uploads that survived. Returns the fused
/// representation and the surviving agent indices; with no survivors the
/// server holds the prior.
pub fn centralized_baseline<R: Rng + ?Sized>(
    reps: &[NaturalRepresentation],
    prior: &NaturalRepresentation,
    loss_rate: f64,
    rng: &mut R,
) -> Result<(NaturalRepresentation, Vec<usize>)> {
    if reps.is_empty() {
        return Err(Error::InvalidArgument("centralized baseline needs at least one agent".into()));
    }
    let survivors: Vec<usize> = (0..reps.len()).filter(|_| rng.random::<f64>() >= loss_rate).collect();
    if survivors.is_empty() {
        return Ok((prior.clone(), survivors));
    }
    let kept: Vec<NaturalRepresentation> = survivors.iter().map(|&i| reps[i].clone()).collect();
    Ok((fuse_many(&kept, prior)?, survivors))
}

/// Result of one decentralized sweep.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub fused: Vec<NaturalRepresentation>,
    pub complete: Vec<bool>,
    pub log: Vec<Delivery>,
    /// Transmitted messages in log order, when requested.
    pub messages: Vec<FusionMessage>,
}

/// Live simulation state: agents, tree, prior and cached test features.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimConfig,
    agents: Vec<Agent>,
    topology: Topology,
    prior: NaturalRepresentation,
    test: Block,
    features: Vec<TestFeatures>,
    sweeps: usize,
}

impl Simulation {
    pub fn new(config: SimConfig, test: &Block) -> Result<Self> {
        config.validate()?;
        let t = &config.template;
        if test.input_dim() != t.input_dim {
            return Err(Error::InvalidArgument(format!(
                "test inputs have dimension {} but agents expect {}",
                test.input_dim(),
                t.input_dim
            )));
        }
        let vocab = Arc::new(StandardizedVocabulary::select(
            t.vocab_size,
            t.std_dim,
            derive_seed(config.seed, "vocab", 0),
            t.jitter,
        )?);
        let shared = SampleBank::init(t.bank_size, t.std_dim, t.input_dim, derive_seed(config.seed, "bank", 0))?;
        let agents = (0..config.n_agents)
            .map(|i| {
                let bank = if t.shared_bank {
                    shared.clone()
                } else {
                    SampleBank::init(t.bank_size, t.std_dim, t.input_dim, derive_seed(config.seed, "bank", i as u64 + 1))?
                };
                let learn = LearnConfig {
                    seed: derive_seed(config.seed, "gradient", i as u64),
                    ..t.learn.clone()
                };
                Agent::new(i, vocab.clone(), bank, t.signal_scale, t.noise_std, learn)
            })
            .collect::<Result<Vec<_>>>()?;
        let topology = build_topology(&config)?;
        tree_diameter(&topology)?;
        let features = if t.shared_bank {
            vec![agents[0].test_features(&test.inputs)?]
        } else {
            agents.iter().map(|a| a.test_features(&test.inputs)).collect::<Result<_>>()?
        };
        Ok(Self {
            prior: prior_natural(&vocab),
            config,
            agents,
            topology,
            test: test.clone(),
            features,
            sweeps: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn prior(&self) -> &NaturalRepresentation {
        &self.prior
    }

    pub fn ingest(&mut self, agent: usize, block: &Block) -> Result<()> {
        let a = self
            .agents
            .get_mut(agent)
            .ok_or_else(|| Error::InvalidArgument(format!("no agent {agent}")))?;
        a.ingest_block(block).map(|_| ())
    }

    fn local_reps(&self) -> Vec<NaturalRepresentation> {
        self.agents.iter().map(|a| a.representation().clone()).collect()
    }

    /// Runs one decentralized sweep at `loss_rate` without touching agent
    /// state. Sweep `index` fixes the loss draws, shared across loss rates.
    pub fn sweep(&self, loss_rate: f64, index: usize) -> Result<SweepOutcome> {
        validate_loss_rate(loss_rate)?;
        let reps = self.local_reps();
        let mut r = rng::stream(self.config.seed, "loss", index as u64);
        let diameter = tree_diameter(&self.topology)?;
        let rounds = if loss_rate > 0.0 { 2 * diameter } else { diameter };
        let mut messages = Vec::new();
        let record = self.config.record_messages;
        let run = run_protocol(&self.topology, &reps, &self.prior, rounds, self.config.recovery, |m| {
            if record {
                messages.push(m.clone());
            }
            r.random::<f64>() >= loss_rate
        })?;
        Ok(SweepOutcome {
            complete: run.assemblies.iter().map(|a| a.complete).collect(),
            fused: run.assemblies.into_iter().map(|a| a.rep).collect(),
            log: run.log,
            messages,
        })
    }

    /// Server model at `loss_rate` for sweep `index`.
    pub fn centralized(&self, loss_rate: f64, index: usize) -> Result<NaturalRepresentation> {
        validate_loss_rate(loss_rate)?;
        let mut r = rng::stream(self.config.seed, "central", index as u64);
        Ok(centralized_baseline(&self.local_reps(), &self.prior, loss_rate, &mut r)?.0)
    }

    fn features_for(&self, agent: usize) -> &TestFeatures {
        if self.features.len() == 1 {
            &self.features[0]
        } else {
            &self.features[agent]
        }
    }

    /// Test RMSE of `agent` predicting under `rep` (its own when `None`).
    pub fn rmse_under(&self, agent: usize, rep: Option<&NaturalRepresentation>) -> Result<f64> {
        let a = &self.agents[agent];
        let rep = rep.unwrap_or_else(|| a.representation());
        let pred = a.predict_mean_under(self.features_for(agent), rep)?;
        Ok(rmse(&pred, &self.test.targets))
    }

    /// Sweep at the configured loss rate, store the assemblies and record a
    /// checkpoint for every agent.
    pub fn checkpoint(&mut self, batch_index: usize, clock: &dyn Clock, trace: &mut SimTrace) -> Result<()> {
        let index = self.sweeps;
        self.sweeps += 1;
        let outcome = self.sweep(self.config.loss_rate, index)?;
        let central = if self.config.centralized {
            Some(self.centralized(self.config.loss_rate, index)?)
        } else {
            None
        };
        if self.config.record_deliveries {
            trace
                .deliveries
                .extend(outcome.log.iter().map(|&delivery| SweepDelivery { sweep: index, delivery }));
        }
        for (message, d) in outcome.messages.iter().zip(&outcome.log) {
            trace.messages.push(TracedMessage {
                sweep: index,
                delivered: d.delivered,
                message: message.clone(),
            });
        }
        for (agent, rep) in self.agents.iter_mut().zip(&outcome.fused) {
            agent.set_fused_representation(rep.clone())?;
        }
        let wall_ms = clock.elapsed_ms();
        for i in 0..self.agents.len() {
            let rmse_pre = self.rmse_under(i, None)?;
            let rmse_post = self.rmse_under(i, Some(&outcome.fused[i]))?;
            let rmse_centralized = central.as_ref().map(|c| self.rmse_under(i, Some(c))).transpose()?;
            trace.records.push(CheckpointRecord {
                batch_index,
                agent_id: i,
                rmse_pre,
                rmse_post,
                ess: self.agents[i].ess(),
                wall_ms,
                complete: outcome.complete[i],
                rmse_centralized,
            });
        }
        Ok(())
    }
}

fn build_topology(config: &SimConfig) -> Result<Topology> {
    let n = config.n_agents;
    match &config.topology {
        TopologyKind::Line => Ok(Topology::line(n)),
        TopologyKind::Star => Ok(Topology::star(n)),
        TopologyKind::RandomTree => Ok(Topology::random_tree(n, derive_seed(config.seed, "topology", 0))),
        TopologyKind::Custom(edges) => {
            let g = Topology::custom(n, edges)?;
            if g.is_tree() {
                Ok(g)
            } else {
                spanning_tree(&g, &vec![1.0; g.edges().len()])
            }
        }
    }
}

fn assignment(config: &SimConfig, n_blocks: usize) -> Result<Vec<usize>> {
    match &config.dispatch {
        DispatchPlan::Uniform => dispatch_stream(n_blocks, config.n_agents, derive_seed(config.seed, "dispatch", 0)),
        DispatchPlan::Fixed(plan) => {
            if plan.len() != n_blocks {
                return Err(Error::InvalidArgument(format!(
                    "dispatch plan covers {} blocks but the stream has {n_blocks}",
                    plan.len()
                )));
            }
            Ok(plan.clone())
        }
    }
}

fn check_blocks(config: &SimConfig, blocks: &[Block]) -> Result<()> {
    let d = config.template.input_dim;
    if let Some((i, b)) = blocks.iter().enumerate().find(|(_, b)| b.input_dim() != d || b.is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "block {i} has {} points of dimension {} but agents expect nonempty blocks of dimension {d}",
            b.len(),
            b.input_dim()
        )));
    }
    Ok(())
}

/// Streams `blocks` in order to their assigned agents, sweeping and
/// recording a checkpoint every `fusion_period` blocks and after the last
/// block. With no blocks a single checkpoint at batch 0 is recorded.
pub fn run_experiment(config: &SimConfig, blocks: &[Block], test: &Block, clock: &dyn Clock) -> Result<SimTrace> {
    check_blocks(config, blocks)?;
    let plan = assignment(config, blocks.len())?;
    let mut sim = Simulation::new(config.clone(), test)?;
    let mut trace = SimTrace::default();
    let limit = config.max_checkpoints.unwrap_or(usize::MAX);
    let mut recorded = 0;
    if blocks.is_empty() && limit > 0 {
        sim.checkpoint(0, clock, &mut trace)?;
        return Ok(trace);
    }
    for (b, (block, &agent)) in blocks.iter().zip(&plan).enumerate() {
        sim.ingest(agent, block)?;
        let count = b + 1;
        if (count % config.fusion_period == 0 || count == blocks.len()) && recorded < limit {
            sim.checkpoint(count, clock, &mut trace)?;
            recorded += 1;
        }
    }
    Ok(trace)
}

/// Assignment in which agent 0 receives `frozen_after` blocks and then
/// nothing, while agent 1 receives the following `active_blocks`.
pub fn disparity_plan(frozen_after: usize, active_blocks: usize) -> Vec<usize> {
    let mut plan = vec![0; frozen_after];
    plan.extend(core::iter::repeat_n(1, active_blocks));
    plan
}

/// Mean post-fusion RMSE of both systems at one loss rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub loss_rate: f64,
    pub decentralized: f64,
    pub centralized: f64,
    /// Fraction of agents whose assembly covered the whole team.
    pub complete_fraction: f64,
}

/// Ingests the whole stream once, then evaluates a final sweep of both
/// systems at every loss rate using common random loss draws.
pub fn run_loss_comparison(
    config: &SimConfig,
    blocks: &[Block],
    test: &Block,
    loss_rates: &[f64],
) -> Result<Vec<LossPoint>> {
    for &r in loss_rates {
        validate_loss_rate(r)?;
    }
    check_blocks(config, blocks)?;
    let plan = assignment(config, blocks.len())?;
    let mut sim = Simulation::new(config.clone(), test)?;
    for (block, &agent) in blocks.iter().zip(&plan) {
        sim.ingest(agent, block)?;
    }
    let n = sim.agents().len() as f64;
    loss_rates
        .iter()
        .map(|&rate| {
            let sweep = sim.sweep(rate, 0)?;
            let central = sim.centralized(rate, 0)?;
            let (mut dec, mut cen) = (0.0, 0.0);
            for i in 0..sim.agents().len() {
                dec += sim.rmse_under(i, Some(&sweep.fused[i]))?;
                cen += sim.rmse_under(i, Some(&central))?;
            }
            Ok(LossPoint {
                loss_rate: rate,
                decentralized: dec / n,
                centralized: cen / n,
                complete_fraction: sweep.complete.iter().filter(|c| **c).count() as f64 / n,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn template() -> AgentTemplate {
        AgentTemplate {
            vocab_size: 8,
            bank_size: 4,
            learn: LearnConfig {
                hyperlearning: false,
                ..LearnConfig::default()
            },
            ..AgentTemplate::new(2)
        }
    }

    fn blocks(count: usize, seed: u64) -> (Vec<Block>, Block) {
        let mut r = rng::rng_from_seed(seed);
        let mut make = |n: usize| {
            let x = Matrix::from_fn(n, 2, |_, _| rng::uniform(&mut r, -1.0, 1.0));
            let y = (0..n).map(|i| libm::sin(2.0 * x[(i, 0)]) * x[(i, 1)]).collect();
            Block::new(x, y).unwrap()
        };
        let bs = (0..count).map(|_| make(5)).collect();
        (bs, make(30))
    }

    #[test]
    fn dispatch_properties() {
        assert!(dispatch_stream(20, 1, 3).unwrap().iter().all(|a| *a == 0));
        assert_eq!(dispatch_stream(50, 4, 9).unwrap(), dispatch_stream(50, 4, 9).unwrap());
        assert!(dispatch_stream(5, 0, 1).is_err());
        // Binomial(10⁴, 0.1): σ = 30
        let plan = dispatch_stream(10_000, 10, 5).unwrap();
        for a in 0..10 {
            let c = plan.iter().filter(|x| **x == a).count();
            assert!((910..=1090).contains(&c), "agent {a}: {c}");
        }
    }

    #[test]
    fn centralized_extremes_and_mean_survivors() {
        let r0 = NaturalRepresentation::new(Matrix::identity(2), vec![0.0; 2]).unwrap();
        let reps: Vec<_> = (0..10)
            .map(|i| NaturalRepresentation::new(Matrix::identity(2).scale(2.0 + i as f64), vec![i as f64, 1.0]).unwrap())
            .collect();
        let mut r = rng::rng_from_seed(0);
        let (all, s) = centralized_baseline(&reps, &r0, 0.0, &mut r).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(all, fuse_many(&reps, &r0).unwrap());
        let (none, s) = centralized_baseline(&reps, &r0, 1.0, &mut r).unwrap();
        assert!(s.is_empty());
        assert_eq!(none, r0);
        let total: usize = (0..200)
            .map(|seed| centralized_baseline(&reps, &r0, 0.5, &mut rng::rng_from_seed(seed)).unwrap().1.len())
            .sum();
        assert!((total as f64 / 200.0 - 5.0).abs() <= 0.5);
    }

    #[test]
    fn lossless_sweep_matches_global_fusion() {
        let (bs, test) = blocks(12, 1);
        for n in [2, 5] {
            let mut sim = Simulation::new(SimConfig::new(n, template(), 4), &test).unwrap();
            for (i, b) in bs.iter().enumerate() {
                sim.ingest(i % n, b).unwrap();
            }
            let reps: Vec<_> = sim.agents().iter().map(|a| a.representation().clone()).collect();
            let global = fuse_many(&reps, sim.prior()).unwrap();
            let out = sim.sweep(0.0, 0).unwrap();
            for f in &out.fused {
                assert!(f.distance(&global).unwrap() <= 1e-10 * global.norm());
            }
            assert!(out.complete.iter().all(|c| *c));
        }
    }

    #[test]
    fn heavy_loss_keeps_valid_assemblies() {
        let (bs, test) = blocks(8, 2);
        let cfg = SimConfig {
            topology: TopologyKind::Star,
            loss_rate: 0.99,
            ..SimConfig::new(8, template(), 1)
        };
        let mut sim = Simulation::new(cfg, &test).unwrap();
        for (i, b) in bs.iter().enumerate() {
            sim.ingest(i, b).unwrap();
        }
        let out = sim.sweep(0.99, 0).unwrap();
        assert!(out.complete.iter().filter(|c| !**c).count() >= 6);
        assert!(out.fused.iter().all(|f| f.is_positive_definite(0.0)));
    }

    #[test]
    fn zero_blocks_give_one_prior_checkpoint() {
        let (_, test) = blocks(0, 3);
        let trace = run_experiment(&SimConfig::new(2, template(), 1), &[], &test, &NullClock).unwrap();
        assert_eq!(trace.checkpoints(), vec![0]);
        assert!(trace.records.iter().all(|r| r.rmse_pre == r.rmse_post));
        let none = SimConfig {
            max_checkpoints: Some(0),
            ..SimConfig::new(2, template(), 1)
        };
        assert!(run_experiment(&none, &[], &test, &NullClock).unwrap().records.is_empty());
    }

    #[test]
    fn experiments_are_reproducible() {
        let (bs, test) = blocks(25, 4);
        let cfg = SimConfig {
            loss_rate: 0.3,
            centralized: true,
            record_deliveries: true,
            record_messages: true,
            template: AgentTemplate {
                learn: LearnConfig::default(),
                ..template()
            },
            ..SimConfig::new(4, template(), 7)
        };
        let a = run_experiment(&cfg, &bs, &test, &NullClock).unwrap();
        let b = run_experiment(&cfg, &bs, &test, &NullClock).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checkpoints(), vec![10, 20, 25]);
        assert!(!a.deliveries.is_empty());
        assert_eq!(a.deliveries.len(), a.messages.len());
        assert_eq!(a.messages[0].message.encode().len(), 8 * (4 + 8 * 8 + 8));
    }

    #[test]
    fn single_agent_pre_equals_post() {
        let (bs, test) = blocks(20, 5);
        let trace = run_experiment(&SimConfig::new(1, template(), 2), &bs, &test, &NullClock).unwrap();
        assert!(trace.records.iter().all(|r| r.rmse_pre == r.rmse_post));
    }

    #[test]
    fn dimension_errors_come_first() {
        let (bs, test) = blocks(3, 6);
        let cfg = SimConfig::new(2, AgentTemplate { input_dim: 3, std_dim: 3, ..template() }, 1);
        assert!(run_experiment(&cfg, &bs, &test, &NullClock).is_err());
        let bad = SimConfig {
            loss_rate: 1.0,
            ..SimConfig::new(2, template(), 1)
        };
        assert!(run_experiment(&bad, &bs, &test, &NullClock).is_err());
    }

    #[test]
    fn loss_comparison_agrees_at_zero_loss() {
        let (bs, test) = blocks(30, 7);
        let pts = run_loss_comparison(&SimConfig::new(6, template(), 3), &bs, &test, &[0.0, 0.4]).unwrap();
        assert!((pts[0].decentralized - pts[0].centralized).abs() <= 1e-10);
        assert_eq!(pts[0].complete_fraction, 1.0);
    }

    #[test]
    fn disparity_plan_shape() {
        let p = disparity_plan(2, 3);
        assert_eq!(p, vec![0, 0, 1, 1, 1]);
    }
}
