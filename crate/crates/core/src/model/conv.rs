//! One heterogeneous convolution layer and its reverse pass.

use super::{EmbeddingTable, ATTENTION_SLOPE};
use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, Relation};
use crate::numerics::{
    axpy, dot_unchecked, leaky_relu, leaky_relu_grad, linear_backward_acc, linear_into,
    masked_softmax, maxpool_iter, sigmoid, sigmoid_grad, softmax_backward, Matrix, MaxPool,
};

/// Borrowed weights of one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerWeights<'a> {
    /// `d x 2d`, applied to `[self, maxpool(items)]` for users.
    pub item_to_user: &'a Matrix,
    /// `d x 2d`, applied to `[self, maxpool(users)]` for items.
    pub user_to_item: &'a Matrix,
    /// `d x 2d`, applied to `[self, maxpool(groups)]` for items.
    pub group_to_item: &'a Matrix,
    /// `d x 2d`, applied to `[self, maxpool(items)]` for groups.
    pub item_to_group: &'a Matrix,
    /// `d x d` projection shared by the group and its members in attention.
    pub att_w: &'a Matrix,
    /// Attention vector of length `2d`: first half scores the group, second
    /// half the member.
    pub att_a: &'a [f64],
}

impl LayerWeights<'_> {
    fn check(&self, dim: usize) -> Result<()> {
        let sage = [
            self.item_to_user,
            self.user_to_item,
            self.group_to_item,
            self.item_to_group,
        ];
        if sage.iter().any(|w| w.shape() != (dim, 2 * dim))
            || self.att_w.shape() != (dim, dim)
            || self.att_a.len() != 2 * dim
        {
            return Err(Error::usage(format!("layer weights do not match dimension {dim}")));
        }
        Ok(())
    }
}

/// A max-pooled SAGE update `sigmoid(W [self, pool])`.
#[derive(Debug, Clone)]
pub(crate) struct SageUnit {
    pub pool: MaxPool,
    pub out: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct GroupAttention {
    /// `W e_g`
    pub h_group: Vec<f64>,
    /// `W e_u` per member, in member order.
    pub h_members: Vec<Vec<f64>>,
    /// Attention logits before the LeakyReLU.
    pub raw_logits: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Everything the reverse pass needs from one forward layer.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub users: Vec<SageUnit>,
    pub items_from_users: Vec<SageUnit>,
    pub items_from_groups: Vec<SageUnit>,
    pub groups: Vec<SageUnit>,
    pub attention: Vec<GroupAttention>,
}

impl LayerCache {
    pub fn attention_weights(&self) -> Vec<Vec<f64>> {
        self.attention.iter().map(|a| a.alpha.clone()).collect()
    }

    /// Feeds every discrete choice made in this layer (pool winners, attention
    /// logit signs) into `h`.
    pub fn fingerprint(&self, h: &mut impl FnMut(u64)) {
        for unit in self
            .users
            .iter()
            .chain(&self.items_from_users)
            .chain(&self.items_from_groups)
            .chain(&self.groups)
        {
            for &a in &unit.pool.argmax {
                h(a as u64);
            }
        }
        for att in &self.attention {
            for &l in &att.raw_logits {
                h((l > 0.0) as u64);
            }
        }
    }
}

fn sage_forward(w: &Matrix, own: &[f64], pool: MaxPool) -> SageUnit {
    let d = own.len();
    let out = (0..w.rows())
        .map(|r| {
            let row = w.row(r);
            sigmoid(dot_unchecked(&row[..d], own) + dot_unchecked(&row[d..], &pool.value))
        })
        .collect();
    SageUnit { pool, out }
}

/// Accumulates `dW` and returns `d own` into `d_own`; the pooled input's
/// gradient is handed to `route(sender_position, coord, g)`.
fn sage_backward(
    w: &Matrix,
    own: &[f64],
    unit: &SageUnit,
    dy: &[f64],
    dw: &mut Matrix,
    d_own: &mut [f64],
    mut route: impl FnMut(usize, usize, f64),
) {
    let d = own.len();
    let mut d_pool = vec![0.0; d];
    for (r, (&y, &g)) in unit.out.iter().zip(dy).enumerate() {
        let dz = g * sigmoid_grad(y);
        if dz == 0.0 {
            continue;
        }
        let (w_own, w_pool) = w.row(r).split_at(d);
        let dw_row = dw.row_mut(r);
        axpy(dz, own, &mut dw_row[..d]);
        axpy(dz, &unit.pool.value, &mut dw_row[d..]);
        axpy(dz, w_own, d_own);
        axpy(dz, w_pool, &mut d_pool);
    }
    unit.pool.backward(&d_pool, &mut route);
}

fn pool_over(table: &Matrix, senders: &[usize], dim: usize) -> MaxPool {
    maxpool_iter(senders.iter().map(|&s| table.row(s)), dim)
}

pub(crate) fn conv_forward(
    graph: &InteractionGraph,
    e_in: &EmbeddingTable,
    w: &LayerWeights<'_>,
) -> (EmbeddingTable, LayerCache) {
    let d = e_in.dim();
    let mut out = EmbeddingTable::zeros_like(e_in);

    let users: Vec<SageUnit> = (0..graph.num_users())
        .map(|u| {
            let pool = pool_over(&e_in.items, graph.senders(Relation::ItemToUser, u), d);
            sage_forward(w.item_to_user, e_in.users.row(u), pool)
        })
        .collect();
    for (u, unit) in users.iter().enumerate() {
        out.users.row_mut(u).copy_from_slice(&unit.out);
    }

    let mut items_from_users = Vec::with_capacity(graph.num_items());
    let mut items_from_groups = Vec::with_capacity(graph.num_items());
    for t in 0..graph.num_items() {
        let own = e_in.items.row(t);
        let a = sage_forward(
            w.user_to_item,
            own,
            pool_over(&e_in.users, graph.senders(Relation::UserToItem, t), d),
        );
        let b = sage_forward(
            w.group_to_item,
            own,
            pool_over(&e_in.groups, graph.senders(Relation::GroupToItem, t), d),
        );
        for (o, (x, y)) in out.items.row_mut(t).iter_mut().zip(a.out.iter().zip(&b.out)) {
            *o = x + y;
        }
        items_from_users.push(a);
        items_from_groups.push(b);
    }

    let (a_group, a_member) = w.att_a.split_at(d);
    let mut groups = Vec::with_capacity(graph.num_groups());
    let mut attention = Vec::with_capacity(graph.num_groups());
    for g in 0..graph.num_groups() {
        let own = e_in.groups.row(g);
        let unit = sage_forward(
            w.item_to_group,
            own,
            pool_over(&e_in.items, graph.senders(Relation::ItemToGroup, g), d),
        );

        let mut h_group = vec![0.0; d];
        linear_into(w.att_w, own, &mut h_group);
        let group_score = dot_unchecked(a_group, &h_group);
        let members = graph.senders(Relation::UserToGroup, g);
        let mut h_members = Vec::with_capacity(members.len());
        let mut raw_logits = Vec::with_capacity(members.len());
        for &u in members {
            let mut h = vec![0.0; d];
            linear_into(w.att_w, e_in.users.row(u), &mut h);
            raw_logits.push(group_score + dot_unchecked(a_member, &h));
            h_members.push(h);
        }
        let logits: Vec<f64> = raw_logits.iter().map(|&s| leaky_relu(s, ATTENTION_SLOPE)).collect();
        let alpha = masked_softmax(&logits).expect("groups have at least one member");

        let row = out.groups.row_mut(g);
        row.copy_from_slice(&unit.out);
        for (a, h) in alpha.iter().zip(&h_members) {
            axpy(*a, h, row);
        }
        groups.push(unit);
        attention.push(GroupAttention {
            h_group,
            h_members,
            raw_logits,
            alpha,
        });
    }

    (
        out,
        LayerCache {
            users,
            items_from_users,
            items_from_groups,
            groups,
            attention,
        },
    )
}

/// Gradients of one layer's weights, same shapes as [`LayerWeights`].
#[derive(Debug, Clone)]
pub(crate) struct LayerGrads {
    pub item_to_user: Matrix,
    pub user_to_item: Matrix,
    pub group_to_item: Matrix,
    pub item_to_group: Matrix,
    pub att_w: Matrix,
    pub att_a: Vec<f64>,
}

impl LayerGrads {
    fn zeros(dim: usize) -> Self {
        LayerGrads {
            item_to_user: Matrix::zeros(dim, 2 * dim),
            user_to_item: Matrix::zeros(dim, 2 * dim),
            group_to_item: Matrix::zeros(dim, 2 * dim),
            item_to_group: Matrix::zeros(dim, 2 * dim),
            att_w: Matrix::zeros(dim, dim),
            att_a: vec![0.0; 2 * dim],
        }
    }
}

/// Reverse pass of [`conv_forward`]: returns the weight gradients and the
/// gradient with respect to the layer input.
pub(crate) fn conv_backward(
    graph: &InteractionGraph,
    e_in: &EmbeddingTable,
    w: &LayerWeights<'_>,
    cache: &LayerCache,
    d_out: &EmbeddingTable,
) -> (LayerGrads, EmbeddingTable) {
    let d = e_in.dim();
    let mut grads = LayerGrads::zeros(d);
    let mut d_in = EmbeddingTable::zeros_like(e_in);

    for (u, unit) in cache.users.iter().enumerate() {
        let senders = graph.senders(Relation::ItemToUser, u);
        let EmbeddingTable { users, items, .. } = &mut d_in;
        sage_backward(
            w.item_to_user,
            e_in.users.row(u),
            unit,
            d_out.users.row(u),
            &mut grads.item_to_user,
            users.row_mut(u),
            |pos, k, g| items.row_mut(senders[pos])[k] += g,
        );
    }

    for t in 0..graph.num_items() {
        let dy = d_out.items.row(t);
        let own = e_in.items.row(t);
        let mut d_own = vec![0.0; d];
        let senders = graph.senders(Relation::UserToItem, t);
        let users = &mut d_in.users;
        sage_backward(
            w.user_to_item,
            own,
            &cache.items_from_users[t],
            dy,
            &mut grads.user_to_item,
            &mut d_own,
            |pos, k, g| users.row_mut(senders[pos])[k] += g,
        );
        let senders = graph.senders(Relation::GroupToItem, t);
        let groups = &mut d_in.groups;
        sage_backward(
            w.group_to_item,
            own,
            &cache.items_from_groups[t],
            dy,
            &mut grads.group_to_item,
            &mut d_own,
            |pos, k, g| groups.row_mut(senders[pos])[k] += g,
        );
        axpy(1.0, &d_own, d_in.items.row_mut(t));
    }

    let (a_group, a_member) = w.att_a.split_at(d);
    for g in 0..graph.num_groups() {
        let dy = d_out.groups.row(g);
        let own = e_in.groups.row(g);
        let senders = graph.senders(Relation::ItemToGroup, g);
        let mut d_own = vec![0.0; d];
        let items = &mut d_in.items;
        sage_backward(
            w.item_to_group,
            own,
            &cache.groups[g],
            dy,
            &mut grads.item_to_group,
            &mut d_own,
            |pos, k, gr| items.row_mut(senders[pos])[k] += gr,
        );

        let att = &cache.attention[g];
        let members = graph.senders(Relation::UserToGroup, g);
        let d_alpha: Vec<f64> = att.h_members.iter().map(|h| dot_unchecked(dy, h)).collect();
        let d_logits = softmax_backward(&att.alpha, &d_alpha);
        let mut d_h_group = vec![0.0; d];
        for (m, &u) in members.iter().enumerate() {
            let h_u = &att.h_members[m];
            let ds = d_logits[m] * leaky_relu_grad(att.raw_logits[m], ATTENTION_SLOPE);
            axpy(ds, &att.h_group, &mut grads.att_a[..d]);
            axpy(ds, h_u, &mut grads.att_a[d..]);
            axpy(ds, a_group, &mut d_h_group);
            let mut d_h_u = vec![0.0; d];
            axpy(att.alpha[m], dy, &mut d_h_u);
            axpy(ds, a_member, &mut d_h_u);
            linear_backward_acc(
                w.att_w,
                e_in.users.row(u),
                &d_h_u,
                &mut grads.att_w,
                d_in.users.row_mut(u),
            );
        }
        linear_backward_acc(w.att_w, own, &d_h_group, &mut grads.att_w, &mut d_own);
        axpy(1.0, &d_own, d_in.groups.row_mut(g));
    }

    (grads, d_in)
}

/// Runs one layer on `e_in`; returns the new embeddings and, per group, the
/// attention weights over its members (in ascending member order).
pub fn conv_layer(
    graph: &InteractionGraph,
    e_in: &EmbeddingTable,
    weights: &LayerWeights<'_>,
) -> Result<(EmbeddingTable, Vec<Vec<f64>>)> {
    let counts = (e_in.users.rows(), e_in.groups.rows(), e_in.items.rows());
    if counts != (graph.num_users(), graph.num_groups(), graph.num_items()) {
        return Err(Error::usage("embedding table does not cover the graph"));
    }
    weights.check(e_in.dim())?;
    let (out, cache) = conv_forward(graph, e_in, weights);
    Ok((out, cache.attention_weights()))
}
