//! Hold-out split, negative sampling, the pairwise ranking loss and the
//! full-batch Adam training loop.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, NodeId};
use crate::irr::dataset_irr;
use crate::model::{
    backward, forward, ModelParams, ScoreGrad, Variant, DEFAULT_EMBEDDING_DIM, DEFAULT_INIT_STD,
};
use crate::numerics::{dot, sigmoid, sigmoid_grad, AdamConfig, RngStream};

pub const DEFAULT_SPLIT_RATIO: f64 = 10.0;
pub const DEFAULT_NEG_RATIO: usize = 10;
pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
pub const DEFAULT_EPOCHS: usize = 200;

/// Training graph plus held-out group-item interactions.
#[derive(Debug, Clone)]
pub struct Split {
    pub full_graph: InteractionGraph,
    pub train_graph: InteractionGraph,
    /// `(group, item)` pairs removed from the training graph, sorted.
    pub test_cases: Vec<(usize, usize)>,
    /// Target train:test ratio.
    pub ratio: f64,
}

/// Holds out group-item edges at random until about `1 / (ratio + 1)` of
/// them are in the test set. Only groups with at least two items
/// participate, and each keeps at least one training item.
pub fn split_leave_one(graph: &InteractionGraph, ratio: f64, rng: &mut RngStream) -> Result<Split> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::usage(format!("split ratio must be positive, got {ratio}")));
    }
    let mut candidates = Vec::new();
    for g in 0..graph.num_groups() {
        let items = graph.group_items(g);
        if items.len() >= 2 {
            candidates.extend(items.iter().map(|&t| (g, t)));
        }
    }
    if candidates.is_empty() {
        return Err(Error::NoEligibleGroups);
    }
    let target = (graph.num_group_item_edges() as f64 / (ratio + 1.0)).round() as usize;
    candidates.shuffle(rng);

    let mut held = vec![0usize; graph.num_groups()];
    let mut test_cases = Vec::with_capacity(target);
    for (g, t) in candidates {
        if test_cases.len() == target {
            break;
        }
        if held[g] + 1 < graph.group_items(g).len() {
            held[g] += 1;
            test_cases.push((g, t));
        }
    }
    test_cases.sort_unstable();

    let removed: HashSet<(usize, usize)> = test_cases.iter().copied().collect();
    let lists = (0..graph.num_groups())
        .map(|g| {
            graph
                .group_items(g)
                .iter()
                .copied()
                .filter(|&t| !removed.contains(&(g, t)))
                .collect()
        })
        .collect();
    Ok(Split {
        full_graph: graph.clone(),
        train_graph: graph.with_group_items(lists)?,
        test_cases,
        ratio,
    })
}

/// `k` distinct items drawn uniformly from those `group` never interacted
/// with in `graph`.
pub fn sample_negatives(
    graph: &InteractionGraph,
    group: usize,
    k: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    let taken = graph.group_items(group);
    let n = graph.num_items();
    let available = n - taken.len();
    if available < k {
        return Err(Error::NotEnoughCandidates {
            group: NodeId::group(group),
            needed: k,
            available,
        });
    }
    if available >= 4 * k {
        // sparse case: rejection sampling over the whole item range
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let t = rng.random_range(0..n);
            if taken.binary_search(&t).is_err() && !out.contains(&t) {
                out.push(t);
            }
        }
        Ok(out)
    } else {
        let pool: Vec<usize> = (0..n).filter(|t| taken.binary_search(t).is_err()).collect();
        Ok(sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
    }
}

/// `1 - sigmoid(pos - neg)` with its derivatives in `pos` and `neg`.
pub fn pairwise_loss(pos: f64, neg: f64) -> (f64, f64, f64) {
    // 1 - sigmoid(x) == sigmoid(-x), which keeps precision for large gaps
    let loss = sigmoid(neg - pos);
    let slope = sigmoid_grad(loss);
    (loss, -slope, slope)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub group: usize,
    pub pos_item: usize,
    pub neg_item: usize,
}

/// `neg_ratio` triplets per training edge. Negatives avoid every item the
/// group has in `full`, so held-out items are never used as negatives.
pub fn build_triplets(
    train: &InteractionGraph,
    full: &InteractionGraph,
    neg_ratio: usize,
    rng: &mut RngStream,
) -> Result<Vec<Triplet>> {
    let mut out = Vec::with_capacity(train.num_group_item_edges() * neg_ratio);
    for g in 0..train.num_groups() {
        for &pos in train.group_items(g) {
            for neg in sample_negatives(full, g, neg_ratio, rng)? {
                out.push(Triplet {
                    group: g,
                    pos_item: pos,
                    neg_item: neg,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub neg_ratio: usize,
    pub epochs: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Fusion weight to use instead of the training graph's IRR.
    pub irr_override: Option<f64>,
    pub init_std: f64,
    /// Triplets per Adam step; `None` means one full-batch step per epoch.
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            learning_rate: DEFAULT_LEARNING_RATE,
            neg_ratio: DEFAULT_NEG_RATIO,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
            variant: Variant::IrrFusion,
            irr_override: None,
            init_std: DEFAULT_INIT_STD,
            batch_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::usage("embedding_dim must be at least 1"));
        }
        if self.neg_ratio == 0 {
            return Err(Error::usage("neg_ratio must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::usage("learning_rate must be finite and non-negative"));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::usage("init_std must be finite and non-negative"));
        }
        if let Some(irr) = self.irr_override {
            if !(0.0..=1.0).contains(&irr) {
                return Err(Error::usage(format!("irr override {irr} outside [0, 1]")));
            }
        }
        if self.batch_size == Some(0) {
            return Err(Error::usage("batch_size must be at least 1"));
        }
        Ok(())
    }

    /// The fusion weight a run on `split` will use.
    pub fn resolve_irr(&self, split: &Split) -> Result<f64> {
        match self.irr_override {
            Some(v) => Ok(v),
            None => Ok(dataset_irr(&split.train_graph)?.value),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    /// Mean triplet loss per epoch, epoch 1 first.
    pub losses: Vec<f64>,
    pub irr: f64,
}

pub const LOSS_CSV_HEADER: &str = "epoch,loss,irr,variant,seed";

/// The loss trace as CSV, header included.
pub fn loss_csv(losses: &[f64], irr: f64, variant: Variant, seed: u64) -> String {
    let mut out = format!("{LOSS_CSV_HEADER}\n");
    for (i, l) in losses.iter().enumerate() {
        out += &format!("{},{l},{irr},{variant},{seed}\n", i + 1);
    }
    out
}

/// Trains a model on `split.train_graph`.
pub fn fit(split: &Split, config: &TrainConfig) -> Result<FitResult> {
    fit_with(split, config, |_, _, _| Ok(()))
}

/// Like [`fit`], calling `on_epoch(epoch, params, mean_loss)` after each
/// epoch's update (epochs count from 1).
pub fn fit_with(
    split: &Split,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &ModelParams, f64) -> Result<()>,
) -> Result<FitResult> {
    config.validate()?;
    let irr = config.resolve_irr(split)?;
    let root = RngStream::new(config.seed);
    let graph = &split.train_graph;
    let mut params = ModelParams::init(
        graph,
        config.embedding_dim,
        config.variant,
        config.init_std,
        &mut root.fork("init"),
    )?;
    let mut neg_rng = root.fork("train-negatives");
    let mut batch_rng = root.fork("batches");
    let adam = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };

    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut triplets = build_triplets(graph, &split.full_graph, config.neg_ratio, &mut neg_rng)?;
        if triplets.is_empty() {
            return Err(Error::usage("training graph has no group-item edges"));
        }
        let total = triplets.len();
        let batch = config.batch_size.unwrap_or(total).min(total);
        if batch < total {
            triplets.shuffle(&mut batch_rng);
        }
        let mut loss_sum = 0.0;
        for chunk in triplets.chunks(batch) {
            let outputs = forward(graph, &params, irr)?;
            let mut grads = Vec::with_capacity(2 * chunk.len());
            for t in chunk {
                let g = outputs.e3.groups.row(t.group);
                let pos = dot(g, outputs.e3.items.row(t.pos_item))?;
                let neg = dot(g, outputs.e3.items.row(t.neg_item))?;
                let (loss, d_pos, d_neg) = pairwise_loss(pos, neg);
                loss_sum += loss;
                grads.push(ScoreGrad { group: t.group, item: t.pos_item, grad: d_pos });
                grads.push(ScoreGrad { group: t.group, item: t.neg_item, grad: d_neg });
            }
            if !loss_sum.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss diverged at epoch {epoch} (learning rate {} may be too high)",
                    config.learning_rate
                )));
            }
            params.store.zero_grad();
            backward(graph, &mut params, &outputs, &grads)?;
            if !params.store.grads_finite() {
                return Err(Error::NonFinite(format!("non-finite gradient at epoch {epoch}")));
            }
            params.store.adam_step(&adam);
        }
        let mean = loss_sum / total as f64;
        losses.push(mean);
        on_epoch(epoch, &params, mean)?;
    }
    Ok(FitResult { params, losses, irr })
}
