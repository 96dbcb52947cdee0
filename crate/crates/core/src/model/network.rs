use super::conv::{conv_backward, conv_forward, LayerCache, LayerGrads};
use super::{EmbeddingTable, LayerParams, ModelParams, Variant};
use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, NodeId, NodeKind};
use crate::numerics::{axpy, dot_unchecked, relu, relu_grad, ParamStore};

/// Result of a full forward pass.
#[derive(Debug, Clone)]
pub struct LayerOutputs {
    pub e1: EmbeddingTable,
    pub e2: EmbeddingTable,
    /// The fused embedding used for scoring.
    pub e3: EmbeddingTable,
    pub attention1: Vec<Vec<f64>>,
    pub attention2: Vec<Vec<f64>>,
    pub variant: Variant,
    pub irr: f64,
    input: EmbeddingTable,
    hidden: EmbeddingTable,
    caches: [LayerCache; 2],
}

impl LayerOutputs {
    /// Hash of every piecewise choice in the pass: max-pool winners,
    /// attention LeakyReLU branches and the ReLU pattern between layers.
    /// Two parameter settings with equal fingerprints lie on the same smooth
    /// piece of the network.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u64| {
            h = (h ^ v).wrapping_mul(0x0000_0100_0000_01b3);
        };
        for cache in &self.caches {
            cache.fingerprint(&mut feed);
        }
        for kind in [NodeKind::User, NodeKind::Group, NodeKind::Item] {
            for &v in self.e1.kind(kind).as_slice() {
                feed((v > 0.0) as u64);
            }
        }
        h
    }
}

pub fn forward(graph: &InteractionGraph, params: &ModelParams, irr: f64) -> Result<LayerOutputs> {
    if !(0.0..=1.0).contains(&irr) {
        return Err(Error::usage(format!("irr must lie in [0, 1], got {irr}")));
    }
    params.check_graph(graph)?;
    let x = params.input_embeddings();
    let (e1, c1) = conv_forward(graph, &x, &params.layer(0).weights(&params.store));
    let hidden = e1.map(relu);
    let (e2, c2) = conv_forward(graph, &hidden, &params.layer(1).weights(&params.store));
    let (w1, w2) = params.variant.fusion_weights(irr);
    let e3 = EmbeddingTable::blend(w1, &e1, w2, &e2);
    Ok(LayerOutputs {
        attention1: c1.attention_weights(),
        attention2: c2.attention_weights(),
        e1,
        e2,
        e3,
        variant: params.variant,
        irr,
        input: x,
        hidden,
        caches: [c1, c2],
    })
}

/// Group-item preference: dot product of the fused embeddings.
pub fn score(outputs: &LayerOutputs, g: NodeId, t: NodeId) -> Result<f64> {
    if g.kind != NodeKind::Group || t.kind != NodeKind::Item {
        return Err(Error::usage(format!("score needs (group, item), got ({g}, {t})")));
    }
    if g.index >= outputs.e3.groups.rows() || t.index >= outputs.e3.items.rows() {
        return Err(Error::usage(format!("({g}, {t}) out of range")));
    }
    Ok(dot_unchecked(outputs.e3.get(g), outputs.e3.get(t)))
}

fn add_grads(store: &mut ParamStore, layer: &LayerParams, g: &LayerGrads) {
    let pairs = [
        (layer.item_to_user, g.item_to_user.as_slice()),
        (layer.user_to_item, g.user_to_item.as_slice()),
        (layer.group_to_item, g.group_to_item.as_slice()),
        (layer.item_to_group, g.item_to_group.as_slice()),
        (layer.att_w, g.att_w.as_slice()),
        (layer.att_a, g.att_a.as_slice()),
    ];
    for (id, grad) in pairs {
        axpy(1.0, grad, store.grad_mut(id).as_mut_slice());
    }
}

/// Accumulates into `params.store` the gradients implied by `d_e3`, the loss
/// gradient with respect to the fused embeddings. Does not zero first.
pub fn backward_embeddings(
    graph: &InteractionGraph,
    params: &mut ModelParams,
    outputs: &LayerOutputs,
    d_e3: &EmbeddingTable,
) -> Result<()> {
    params.check_graph(graph)?;
    if d_e3.dim() != params.dim() {
        return Err(Error::usage("gradient table has the wrong dimension"));
    }
    let (w1, w2) = outputs.variant.fusion_weights(outputs.irr);
    let mut d_e1 = EmbeddingTable::zeros_like(d_e3);
    d_e3.scale_into(w1, &mut d_e1);

    if w2 != 0.0 {
        let mut d_e2 = EmbeddingTable::zeros_like(d_e3);
        d_e3.scale_into(w2, &mut d_e2);
        let (g2, d_hidden) = {
            let w = params.layer(1).weights(&params.store);
            conv_backward(graph, &outputs.hidden, &w, &outputs.caches[1], &d_e2)
        };
        let layer = *params.layer(1);
        add_grads(&mut params.store, &layer, &g2);
        for kind in [NodeKind::User, NodeKind::Group, NodeKind::Item] {
            let pre = outputs.e1.kind(kind).as_slice();
            let dh = d_hidden.kind(kind).as_slice();
            for ((o, &p), &g) in d_e1.kind_mut(kind).as_mut_slice().iter_mut().zip(pre).zip(dh) {
                *o += g * relu_grad(p);
            }
        }
    }

    let (g1, d_x) = {
        let w = params.layer(0).weights(&params.store);
        conv_backward(graph, &outputs.input, &w, &outputs.caches[0], &d_e1)
    };
    let layer = *params.layer(0);
    add_grads(&mut params.store, &layer, &g1);
    let [xu, xg, xi] = params.input_ids();
    axpy(1.0, d_x.users.as_slice(), params.store.grad_mut(xu).as_mut_slice());
    axpy(1.0, d_x.groups.as_slice(), params.store.grad_mut(xg).as_mut_slice());
    axpy(1.0, d_x.items.as_slice(), params.store.grad_mut(xi).as_mut_slice());
    Ok(())
}

/// Loss gradient with respect to one group-item score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreGrad {
    pub group: usize,
    pub item: usize,
    pub grad: f64,
}

/// Accumulates parameter gradients given loss gradients at individual
/// scores.
pub fn backward(
    graph: &InteractionGraph,
    params: &mut ModelParams,
    outputs: &LayerOutputs,
    score_grads: &[ScoreGrad],
) -> Result<()> {
    let mut d_e3 = EmbeddingTable::zeros_like(&outputs.e3);
    for sg in score_grads {
        if sg.group >= graph.num_groups() || sg.item >= graph.num_items() {
            return Err(Error::usage(format!(
                "score gradient for (group {}, item {}) out of range",
                sg.group, sg.item
            )));
        }
        if sg.grad == 0.0 {
            continue;
        }
        axpy(sg.grad, outputs.e3.items.row(sg.item), d_e3.groups.row_mut(sg.group));
        axpy(sg.grad, outputs.e3.groups.row(sg.group), d_e3.items.row_mut(sg.item));
    }
    backward_embeddings(graph, params, outputs, &d_e3)
}
