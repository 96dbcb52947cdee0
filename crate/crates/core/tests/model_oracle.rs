//! The library forward pass against a direct loop-based transcription of the
//! layer equations, plus equivariance and locality checks.

use grouprec::graph::InteractionGraph;
use grouprec::model::{forward, EmbeddingTable, LayerOutputs, ModelParams, Variant};
use grouprec::numerics::{Matrix, RngStream};
use proptest::prelude::*;
use rand::Rng;

struct Edges {
    nu: usize,
    ng: usize,
    nt: usize,
    ui: Vec<(usize, usize)>,
    gi: Vec<(usize, usize)>,
    gu: Vec<(usize, usize)>,
}

impl Edges {
    fn random(seed: u64) -> Edges {
        let mut rng = RngStream::new(seed);
        let nu = rng.random_range(1..7);
        let ng = rng.random_range(1..5);
        let nt = rng.random_range(1..9);
        let mut ui = Vec::new();
        let mut gi = Vec::new();
        let mut gu = Vec::new();
        for u in 0..nu {
            for t in 0..nt {
                if rng.random::<f64>() < 0.3 {
                    ui.push((u, t));
                }
            }
        }
        for g in 0..ng {
            gu.push((g, rng.random_range(0..nu)));
            for u in 0..nu {
                if rng.random::<f64>() < 0.3 && !gu.contains(&(g, u)) {
                    gu.push((g, u));
                }
            }
            for t in 0..nt {
                if rng.random::<f64>() < 0.3 {
                    gi.push((g, t));
                }
            }
        }
        Edges { nu, ng, nt, ui, gi, gu }
    }

    fn graph(&self) -> InteractionGraph {
        InteractionGraph::build(self.nu, self.ng, self.nt, &self.ui, &self.gi, &self.gu).unwrap()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn pool(rows: Vec<&[f64]>, d: usize) -> Vec<f64> {
    if rows.is_empty() {
        return vec![0.0; d];
    }
    (0..d)
        .map(|k| rows.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

fn sage(w: &Matrix, own: &[f64], pooled: &[f64]) -> Vec<f64> {
    let x: Vec<f64> = own.iter().chain(pooled).copied().collect();
    (0..w.rows())
        .map(|r| sigmoid((0..x.len()).map(|c| w.get(r, c) * x[c]).sum()))
        .collect()
}

fn matvec(w: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| (0..x.len()).map(|c| w.get(r, c) * x[c]).sum())
        .collect()
}

fn oracle_layer(e: &Edges, x: &EmbeddingTable, p: &ModelParams, l: usize) -> (EmbeddingTable, Vec<Vec<f64>>) {
    let w = p.layer(l).weights(&p.store);
    let d = x.dim();
    let mut out = EmbeddingTable::zeros(e.nu, e.ng, e.nt, d);
    for u in 0..e.nu {
        let items: Vec<&[f64]> = e.ui.iter().filter(|p| p.0 == u).map(|p| x.items.row(p.1)).collect();
        out.users.row_mut(u).copy_from_slice(&sage(w.item_to_user, x.users.row(u), &pool(items, d)));
    }
    for t in 0..e.nt {
        let users: Vec<&[f64]> = e.ui.iter().filter(|p| p.1 == t).map(|p| x.users.row(p.0)).collect();
        let groups: Vec<&[f64]> = e.gi.iter().filter(|p| p.1 == t).map(|p| x.groups.row(p.0)).collect();
        let a = sage(w.user_to_item, x.items.row(t), &pool(users, d));
        let b = sage(w.group_to_item, x.items.row(t), &pool(groups, d));
        for k in 0..d {
            out.items.row_mut(t)[k] = a[k] + b[k];
        }
    }
    let mut alphas = Vec::new();
    for g in 0..e.ng {
        let items: Vec<&[f64]> = e.gi.iter().filter(|p| p.0 == g).map(|p| x.items.row(p.1)).collect();
        let mut v = sage(w.item_to_group, x.groups.row(g), &pool(items, d));
        let mut members: Vec<usize> = e.gu.iter().filter(|p| p.0 == g).map(|p| p.1).collect();
        members.sort_unstable();
        let hg = matvec(w.att_w, x.groups.row(g));
        let hs: Vec<Vec<f64>> = members.iter().map(|&u| matvec(w.att_w, x.users.row(u))).collect();
        let logits: Vec<f64> = hs
            .iter()
            .map(|hu| {
                let z: f64 = (0..d).map(|k| w.att_a[k] * hg[k] + w.att_a[d + k] * hu[k]).sum();
                if z > 0.0 { z } else { 0.2 * z }
            })
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|s| (s - m).exp()).sum();
        let alpha: Vec<f64> = logits.iter().map(|s| (s - m).exp() / z).collect();
        for (a, hu) in alpha.iter().zip(&hs) {
            for k in 0..d {
                v[k] += a * hu[k];
            }
        }
        out.groups.row_mut(g).copy_from_slice(&v);
        alphas.push(alpha);
    }
    (out, alphas)
}

fn max_abs_diff(a: &EmbeddingTable, b: &EmbeddingTable) -> f64 {
    [(&a.users, &b.users), (&a.groups, &b.groups), (&a.items, &b.items)]
        .iter()
        .flat_map(|(x, y)| x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn model(g: &InteractionGraph, variant: Variant, seed: u64) -> ModelParams {
    ModelParams::init(g, 3, variant, 0.8, &mut RngStream::new(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_matches_loop_oracle(seed in 0u64..10_000, irr in 0.0..=1.0f64) {
        let e = Edges::random(seed);
        let g = e.graph();
        let p = model(&g, Variant::IrrFusion, seed);
        let out = forward(&g, &p, irr).unwrap();

        let x = p.input_embeddings();
        let (e1, a1) = oracle_layer(&e, &x, &p, 0);
        let (e2, a2) = oracle_layer(&e, &e1.map(|v| v.max(0.0)), &p, 1);
        prop_assert!(max_abs_diff(&out.e1, &e1) < 1e-12);
        prop_assert!(max_abs_diff(&out.e2, &e2) < 1e-12);
        let e3 = EmbeddingTable::blend(irr, &e1, 1.0 - irr, &e2);
        prop_assert!(max_abs_diff(&out.e3, &e3) < 1e-12);
        for (got, want) in [(&out.attention1, &a1), (&out.attention2, &a2)] {
            for (x, y) in got.iter().zip(want) {
                prop_assert_eq!(x.len(), y.len());
                prop_assert!(x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-12));
                prop_assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn relabeling_users_permutes_outputs(seed in 0u64..10_000) {
        let e = Edges::random(seed);
        let g = e.graph();
        let p = model(&g, Variant::Residual, seed);
        let base = forward(&g, &p, 0.5).unwrap();

        // reverse the user ids
        let flip = |u: usize| e.nu - 1 - u;
        let e2 = Edges {
            ui: e.ui.iter().map(|&(u, t)| (flip(u), t)).collect(),
            gu: e.gu.iter().map(|&(g, u)| (g, flip(u))).collect(),
            gi: e.gi.clone(),
            ..e
        };
        let g2 = e2.graph();
        let mut p2 = p.clone();
        let [xu, _, _] = p2.input_ids();
        let orig = p.store.value(xu).clone();
        for u in 0..e2.nu {
            p2.store.value_mut(xu).row_mut(flip(u)).copy_from_slice(orig.row(u));
        }
        let moved = forward(&g2, &p2, 0.5).unwrap();
        // member sums run in id order, so relabeling may change rounding
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(1.0));
        for u in 0..e2.nu {
            prop_assert!(close(base.e3.users.row(u), moved.e3.users.row(flip(u))));
        }
        prop_assert!(close(base.e3.items.as_slice(), moved.e3.items.as_slice()));
        prop_assert!(close(base.e3.groups.as_slice(), moved.e3.groups.as_slice()));
    }
}

fn f3() -> InteractionGraph {
    InteractionGraph::build(
        5,
        2,
        6,
        &[(0, 0), (1, 1), (2, 1), (2, 2), (3, 2), (4, 4), (4, 5)],
        &[(0, 3), (1, 4)],
        &[(0, 0), (0, 1), (0, 2), (1, 2), (1, 3), (1, 4)],
    )
    .unwrap()
}

fn perturb_item(p: &ModelParams, t: usize) -> ModelParams {
    let mut q = p.clone();
    let [_, _, xi] = q.input_ids();
    for v in q.store.value_mut(xi).row_mut(t) {
        *v += 0.37;
    }
    q
}

fn changed(a: &LayerOutputs, b: &LayerOutputs) -> (Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>) {
    let diff = |x: &Matrix, y: &Matrix| (0..x.rows()).filter(|&r| x.row(r) != y.row(r)).collect();
    (
        diff(&a.e1.users, &b.e1.users),
        diff(&a.e1.groups, &b.e1.groups),
        diff(&a.e2.users, &b.e2.users),
        diff(&a.e2.groups, &b.e2.groups),
    )
}

#[test]
fn one_and_two_hop_reach_on_f3() {
    let g = f3();
    let p = model(&g, Variant::TwoLayer, 7);
    let base = forward(&g, &p, 0.5).unwrap();
    // item 0 is only in user 0's history
    let after = forward(&g, &perturb_item(&p, 0), 0.5).unwrap();
    let (u1, g1, u2, g2) = changed(&base, &after);
    assert_eq!(u1, vec![0]);
    assert!(g1.is_empty());
    assert_eq!(u2, vec![0]);
    assert_eq!(g2, vec![0]);
    // item 5 belongs to user 4 only, who is in group 1
    let after = forward(&g, &perturb_item(&p, 5), 0.5).unwrap();
    let (u1, g1, _, g2) = changed(&base, &after);
    assert_eq!(u1, vec![4]);
    assert!(g1.is_empty());
    assert_eq!(g2, vec![1]);
}
