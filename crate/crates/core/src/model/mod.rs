//! The two-layer heterogeneous GNN.
//!
//! Each layer runs five edge convolutions at once and sums the results per
//! node: max-pool SAGE updates along user-item and group-item edges in both
//! directions, and single-head attention from members to their group. The
//! outputs of the two layers are then fused according to the model
//! [`Variant`].

mod conv;
mod export;
mod network;

pub use conv::{conv_layer, LayerWeights};
pub use export::{read_embeddings, write_embeddings};
pub use network::{backward, backward_embeddings, forward, score, LayerOutputs, ScoreGrad};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, NodeId, NodeKind};
use crate::numerics::{init_normal, init_xavier, Matrix, ParamId, ParamStore, RngStream};

/// Slope of the LeakyReLU applied to attention logits.
pub const ATTENTION_SLOPE: f64 = 0.2;
pub const DEFAULT_EMBEDDING_DIM: usize = 32;
pub const DEFAULT_INIT_STD: f64 = 0.1;

/// How the final embedding is assembled from the two layer outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    OneLayer,
    TwoLayer,
    Residual,
    IrrFusion,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::OneLayer,
        Variant::TwoLayer,
        Variant::Residual,
        Variant::IrrFusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::OneLayer => "one-layer",
            Variant::TwoLayer => "two-layer",
            Variant::Residual => "residual",
            Variant::IrrFusion => "irr-fusion",
        }
    }

    /// Coefficients `(w1, w2)` in `e3 = w1 * e1 + w2 * e2`.
    pub fn fusion_weights(self, irr: f64) -> (f64, f64) {
        match self {
            Variant::OneLayer => (1.0, 0.0),
            Variant::TwoLayer => (0.0, 1.0),
            Variant::Residual => (1.0, 1.0),
            Variant::IrrFusion => (irr, 1.0 - irr),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::usage(format!(
                    "unknown variant {s:?} (expected one-layer, two-layer, residual or irr-fusion)"
                ))
            })
    }
}

/// One dense row per node, split by kind.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub users: Matrix,
    pub groups: Matrix,
    pub items: Matrix,
}

impl EmbeddingTable {
    pub fn zeros(num_users: usize, num_groups: usize, num_items: usize, dim: usize) -> Self {
        EmbeddingTable {
            users: Matrix::zeros(num_users, dim),
            groups: Matrix::zeros(num_groups, dim),
            items: Matrix::zeros(num_items, dim),
        }
    }

    pub fn zeros_like(other: &EmbeddingTable) -> Self {
        EmbeddingTable::zeros(
            other.users.rows(),
            other.groups.rows(),
            other.items.rows(),
            other.dim(),
        )
    }

    pub fn dim(&self) -> usize {
        self.users.cols()
    }

    pub fn kind(&self, kind: NodeKind) -> &Matrix {
        match kind {
            NodeKind::User => &self.users,
            NodeKind::Group => &self.groups,
            NodeKind::Item => &self.items,
        }
    }

    pub fn kind_mut(&mut self, kind: NodeKind) -> &mut Matrix {
        match kind {
            NodeKind::User => &mut self.users,
            NodeKind::Group => &mut self.groups,
            NodeKind::Item => &mut self.items,
        }
    }

    pub fn get(&self, node: NodeId) -> &[f64] {
        self.kind(node.kind).row(node.index)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> Self {
        EmbeddingTable {
            users: self.users.map(f),
            groups: self.groups.map(f),
            items: self.items.map(f),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.users.is_finite() && self.groups.is_finite() && self.items.is_finite()
    }

    /// `a * x + b * y`, elementwise.
    pub fn blend(a: f64, x: &EmbeddingTable, b: f64, y: &EmbeddingTable) -> EmbeddingTable {
        let mix = |p: &Matrix, q: &Matrix| {
            let data = p
                .as_slice()
                .iter()
                .zip(q.as_slice())
                .map(|(u, v)| a * u + b * v)
                .collect();
            Matrix::from_vec(p.rows(), p.cols(), data).expect("same shape")
        };
        EmbeddingTable {
            users: mix(&x.users, &y.users),
            groups: mix(&x.groups, &y.groups),
            items: mix(&x.items, &y.items),
        }
    }

    pub(crate) fn scale_into(&self, a: f64, out: &mut EmbeddingTable) {
        for kind in [NodeKind::User, NodeKind::Group, NodeKind::Item] {
            let dst = out.kind_mut(kind).as_mut_slice();
            for (o, v) in dst.iter_mut().zip(self.kind(kind).as_slice()) {
                *o += a * v;
            }
        }
    }
}

/// Parameter handles for one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerParams {
    pub item_to_user: ParamId,
    pub user_to_item: ParamId,
    pub group_to_item: ParamId,
    pub item_to_group: ParamId,
    pub att_w: ParamId,
    pub att_a: ParamId,
}

impl LayerParams {
    fn register(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut RngStream) -> Self {
        let mut sage = |name: &str| store_add(store, prefix, name, init_xavier(dim, 2 * dim, rng));
        let item_to_user = sage("item_to_user");
        let user_to_item = sage("user_to_item");
        let group_to_item = sage("group_to_item");
        let item_to_group = sage("item_to_group");
        let att_w = store_add(store, prefix, "att_w", init_xavier(dim, dim, rng));
        let att_a = store_add(store, prefix, "att_a", init_xavier(1, 2 * dim, rng));
        LayerParams {
            item_to_user,
            user_to_item,
            group_to_item,
            item_to_group,
            att_w,
            att_a,
        }
    }

    pub fn weights<'a>(&self, store: &'a ParamStore) -> LayerWeights<'a> {
        LayerWeights {
            item_to_user: store.value(self.item_to_user),
            user_to_item: store.value(self.user_to_item),
            group_to_item: store.value(self.group_to_item),
            item_to_group: store.value(self.item_to_group),
            att_w: store.value(self.att_w),
            att_a: store.value(self.att_a).as_slice(),
        }
    }

    fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |name: &str| {
            let full = format!("{prefix}.{name}");
            store
                .id_of(&full)
                .ok_or_else(|| Error::ModelFormat(format!("missing tensor {full}")))
        };
        Ok(LayerParams {
            item_to_user: get("item_to_user")?,
            user_to_item: get("user_to_item")?,
            group_to_item: get("group_to_item")?,
            item_to_group: get("item_to_group")?,
            att_w: get("att_w")?,
            att_a: get("att_a")?,
        })
    }
}

fn store_add(store: &mut ParamStore, prefix: &str, name: &str, m: Matrix) -> ParamId {
    store.add(format!("{prefix}.{name}"), m)
}

/// All trainable state: input embeddings for every node and two layers of
/// relation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub store: ParamStore,
    pub variant: Variant,
    dim: usize,
    x_user: ParamId,
    x_group: ParamId,
    x_item: ParamId,
    layers: [LayerParams; 2],
}

/// Serializable snapshot of [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedParams {
    pub dim: usize,
    pub variant: Variant,
    pub tensors: Vec<SavedTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ModelParams {
    /// Normal-initialized input embeddings, Xavier-initialized weights.
    pub fn init(
        graph: &InteractionGraph,
        dim: usize,
        variant: Variant,
        init_std: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::usage("embedding dimension must be at least 1"));
        }
        let mut store = ParamStore::new();
        let x_user = store.add("x.user", init_normal(graph.num_users(), dim, init_std, rng));
        let x_group = store.add("x.group", init_normal(graph.num_groups(), dim, init_std, rng));
        let x_item = store.add("x.item", init_normal(graph.num_items(), dim, init_std, rng));
        let l1 = LayerParams::register(&mut store, "l1", dim, rng);
        let l2 = LayerParams::register(&mut store, "l2", dim, rng);
        Ok(ModelParams {
            store,
            variant,
            dim,
            x_user,
            x_group,
            x_item,
            layers: [l1, l2],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layer(&self, l: usize) -> &LayerParams {
        &self.layers[l]
    }

    pub fn input_ids(&self) -> [ParamId; 3] {
        [self.x_user, self.x_group, self.x_item]
    }

    pub fn input_embeddings(&self) -> EmbeddingTable {
        EmbeddingTable {
            users: self.store.value(self.x_user).clone(),
            groups: self.store.value(self.x_group).clone(),
            items: self.store.value(self.x_item).clone(),
        }
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (
            self.store.value(self.x_user).rows(),
            self.store.value(self.x_group).rows(),
            self.store.value(self.x_item).rows(),
        )
    }

    /// Errors unless the embedding tables match the graph's node counts.
    pub fn check_graph(&self, graph: &InteractionGraph) -> Result<()> {
        let want = (graph.num_users(), graph.num_groups(), graph.num_items());
        if self.counts() != want {
            return Err(Error::usage(format!(
                "model was built for (users, groups, items) = {:?}, graph has {want:?}",
                self.counts()
            )));
        }
        Ok(())
    }

    pub fn to_saved(&self) -> SavedParams {
        SavedParams {
            dim: self.dim,
            variant: self.variant,
            tensors: self
                .store
                .ids()
                .map(|id| {
                    let m = self.store.value(id);
                    SavedTensor {
                        name: self.store.name(id).to_string(),
                        rows: m.rows(),
                        cols: m.cols(),
                        data: m.as_slice().to_vec(),
                    }
                })
                .collect(),
        }
    }

    pub fn from_saved(saved: &SavedParams) -> Result<Self> {
        let mut store = ParamStore::new();
        for t in &saved.tensors {
            let m = Matrix::from_vec(t.rows, t.cols, t.data.clone())
                .map_err(|e| Error::ModelFormat(format!("{}: {e}", t.name)))?;
            store.add(t.name.clone(), m);
        }
        let get = |name: &str| {
            store
                .id_of(name)
                .ok_or_else(|| Error::ModelFormat(format!("missing tensor {name}")))
        };
        let (x_user, x_group, x_item) = (get("x.user")?, get("x.group")?, get("x.item")?);
        let layers = [
            LayerParams::lookup(&store, "l1")?,
            LayerParams::lookup(&store, "l2")?,
        ];
        let dim = saved.dim;
        for id in store.ids() {
            let (r, c) = store.value(id).shape();
            let name = store.name(id);
            let ok = if name.starts_with("x.") {
                c == dim
            } else if name.ends_with("att_w") {
                (r, c) == (dim, dim)
            } else if name.ends_with("att_a") {
                (r, c) == (1, 2 * dim)
            } else {
                (r, c) == (dim, 2 * dim)
            };
            if !ok {
                return Err(Error::ModelFormat(format!(
                    "tensor {name} has shape {r}x{c}, inconsistent with dim {dim}"
                )));
            }
        }
        Ok(ModelParams {
            store,
            variant: saved.variant,
            dim,
            x_user,
            x_group,
            x_item,
            layers,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::f3;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("three-layer".parse::<Variant>().is_err());
    }

    #[test]
    fn param_shapes() {
        let p = ModelParams::init(&f3(), 4, Variant::IrrFusion, 0.1, &mut RngStream::new(1)).unwrap();
        assert_eq!(p.store.len(), 3 + 2 * 6);
        assert_eq!(p.counts(), (5, 2, 6));
        let l = p.layer(1);
        assert_eq!(p.store.value(l.item_to_group).shape(), (4, 8));
        assert_eq!(p.store.value(l.att_w).shape(), (4, 4));
        assert_eq!(p.store.value(l.att_a).shape(), (1, 8));
    }

    #[test]
    fn saved_round_trip_and_shape_validation() {
        let p = ModelParams::init(&f3(), 3, Variant::Residual, 0.1, &mut RngStream::new(2)).unwrap();
        let saved = p.to_saved();
        let json = serde_json::to_string(&saved).unwrap();
        let back: SavedParams = serde_json::from_str(&json).unwrap();
        let q = ModelParams::from_saved(&back).unwrap();
        assert_eq!(p.to_saved(), q.to_saved());

        let mut broken = saved.clone();
        broken.tensors[4].cols = 5;
        broken.tensors[4].data.truncate(3 * 5);
        assert!(ModelParams::from_saved(&broken).is_err());
        let mut missing = saved;
        missing.tensors.retain(|t| t.name != "l2.att_a");
        assert!(matches!(ModelParams::from_saved(&missing), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(ModelParams::init(&f3(), 0, Variant::OneLayer, 0.1, &mut RngStream::new(0)).is_err());
    }
}
