//! Interactive Repetition Rate: how often groups pick items that some member
//! has already interacted with.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, NodeId, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrrValue {
    pub value: f64,
    pub groups_counted: usize,
}

/// Counts the group's items that occur in at least one member's history.
/// Both lists are sorted, so each membership test is a binary search.
fn repeated_items(graph: &InteractionGraph, g: usize) -> usize {
    let members = graph.members(g);
    graph
        .group_items(g)
        .iter()
        .filter(|&&t| {
            members
                .iter()
                .any(|&u| graph.user_items(u).binary_search(&t).is_ok())
        })
        .count()
}

/// Fraction of a group's items previously interacted by at least one member.
pub fn group_irr(graph: &InteractionGraph, g: NodeId) -> Result<f64> {
    if g.kind != NodeKind::Group || g.index >= graph.num_groups() {
        return Err(Error::usage(format!("{g} is not a group of this graph")));
    }
    let total = graph.group_items(g.index).len();
    if total == 0 {
        return Err(Error::IrrUndefinedGroup(g.index));
    }
    Ok(repeated_items(graph, g.index) as f64 / total as f64)
}

/// Mean of [`group_irr`] over groups that have at least one item.
pub fn dataset_irr(graph: &InteractionGraph) -> Result<IrrValue> {
    let mut sum = 0.0;
    let mut counted = 0;
    for g in 0..graph.num_groups() {
        let total = graph.group_items(g).len();
        if total == 0 {
            continue;
        }
        sum += repeated_items(graph, g) as f64 / total as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::IrrUndefinedDataset);
    }
    Ok(IrrValue {
        value: sum / counted as f64,
        groups_counted: counted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::f3;
    use proptest::prelude::*;
    use std::collections::HashSet;

    /// Independent oracle: materialize the member-history union as a set.
    fn oracle(graph: &InteractionGraph) -> Option<f64> {
        let mut ratios = Vec::new();
        for g in 0..graph.num_groups() {
            let items = graph.group_items(g);
            if items.is_empty() {
                continue;
            }
            let union: HashSet<usize> = graph
                .members(g)
                .iter()
                .flat_map(|&u| graph.user_items(u).iter().copied())
                .collect();
            let hits = items.iter().filter(|t| union.contains(t)).count();
            ratios.push(hits as f64 / items.len() as f64);
        }
        (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64)
    }

    #[test]
    fn f3_values() {
        let g = f3();
        assert_eq!(group_irr(&g, NodeId::group(0)).unwrap(), 0.0);
        assert_eq!(group_irr(&g, NodeId::group(1)).unwrap(), 1.0);
        let irr = dataset_irr(&g).unwrap();
        assert_eq!(irr.value, 0.5);
        assert_eq!(irr.groups_counted, 2);
    }

    #[test]
    fn itemless_group_is_undefined_not_zero() {
        let g = InteractionGraph::build(2, 2, 2, &[(0, 0)], &[(0, 0)], &[(0, 0), (1, 1)]).unwrap();
        assert!(matches!(group_irr(&g, NodeId::group(1)), Err(Error::IrrUndefinedGroup(1))));
        let irr = dataset_irr(&g).unwrap();
        assert_eq!((irr.value, irr.groups_counted), (1.0, 1));

        let none = InteractionGraph::build(1, 1, 1, &[], &[], &[(0, 0)]).unwrap();
        assert!(matches!(dataset_irr(&none), Err(Error::IrrUndefinedDataset)));
    }

    #[test]
    fn subset_of_history_gives_one() {
        let g = InteractionGraph::build(
            2,
            1,
            5,
            &[(0, 0), (0, 1), (1, 3)],
            &[(0, 1), (0, 3)],
            &[(0, 0), (0, 1)],
        )
        .unwrap();
        assert_eq!(group_irr(&g, NodeId::group(0)).unwrap(), 1.0);
    }

    #[test]
    fn wrong_kind_is_usage_error() {
        assert!(matches!(group_irr(&f3(), NodeId::user(0)), Err(Error::Usage(_))));
    }

    fn arb_graph() -> impl Strategy<Value = InteractionGraph> {
        (1..8usize, 1..6usize, 1..12usize).prop_flat_map(|(nu, ng, nt)| {
            (
                prop::collection::vec((0..nu, 0..nt), 0..40),
                prop::collection::vec((0..ng, 0..nt), 0..30),
                prop::collection::vec((0..ng, 0..nu), 0..15),
            )
                .prop_map(move |(ui, gi, mut m)| {
                    m.extend((0..ng).map(|g| (g, g % nu)));
                    InteractionGraph::build(nu, ng, nt, &ui, &gi, &m).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn matches_oracle(g in arb_graph()) {
            match (dataset_irr(&g), oracle(&g)) {
                (Ok(v), Some(o)) => {
                    prop_assert_eq!(v.value, o);
                    prop_assert!((0.0..=1.0).contains(&v.value));
                    prop_assert!(v.groups_counted <= g.num_groups());
                }
                (Err(Error::IrrUndefinedDataset), None) => {}
                (got, want) => prop_assert!(false, "{:?} vs {:?}", got, want),
            }
        }

        #[test]
        fn adding_a_history_item_never_lowers_group_irr(g in arb_graph(), pick in any::<prop::sample::Index>()) {
            let group = 0;
            let history: Vec<usize> = g.members(group).iter()
                .flat_map(|&u| g.user_items(u).iter().copied())
                .collect();
            prop_assume!(!history.is_empty() && !g.group_items(group).is_empty());
            let t = history[pick.index(history.len())];
            let before = group_irr(&g, NodeId::group(group)).unwrap();
            let mut lists: Vec<Vec<usize>> = (0..g.num_groups()).map(|x| g.group_items(x).to_vec()).collect();
            lists[group].push(t);
            let grown = g.with_group_items(lists).unwrap();
            prop_assert!(group_irr(&grown, NodeId::group(group)).unwrap() >= before);
        }
    }
}
