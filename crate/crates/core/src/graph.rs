//! Tripartite group-user-item interaction graph.
//!
//! Users, groups and items live in disjoint id spaces; a [`NodeId`] is a kind
//! plus a dense ordinal within that kind. Three edge sets are stored
//! (user-item, group-item, group membership) together with their transposes so
//! every relation can answer "who sends messages to this node" directly.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    User,
    Group,
    Item,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::User => "user",
            NodeKind::Group => "group",
            NodeKind::Item => "item",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "user" => Some(NodeKind::User),
            "group" => Some(NodeKind::Group),
            "item" => Some(NodeKind::Item),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub kind: NodeKind,
    pub index: usize,
}

impl NodeId {
    pub fn user(index: usize) -> Self {
        NodeId { kind: NodeKind::User, index }
    }
    pub fn group(index: usize) -> Self {
        NodeId { kind: NodeKind::Group, index }
    }
    pub fn item(index: usize) -> Self {
        NodeId { kind: NodeKind::Item, index }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.kind.as_str(), self.index)
    }
}

/// The five directed message relations. Named `SourceToTarget`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    UserToItem,
    ItemToUser,
    GroupToItem,
    ItemToGroup,
    UserToGroup,
}

impl Relation {
    pub const ALL: [Relation; 5] = [
        Relation::UserToItem,
        Relation::ItemToUser,
        Relation::GroupToItem,
        Relation::ItemToGroup,
        Relation::UserToGroup,
    ];

    pub fn source(self) -> NodeKind {
        match self {
            Relation::UserToItem | Relation::UserToGroup => NodeKind::User,
            Relation::ItemToUser | Relation::ItemToGroup => NodeKind::Item,
            Relation::GroupToItem => NodeKind::Group,
        }
    }

    pub fn target(self) -> NodeKind {
        match self {
            Relation::UserToItem | Relation::GroupToItem => NodeKind::Item,
            Relation::ItemToUser => NodeKind::User,
            Relation::ItemToGroup | Relation::UserToGroup => NodeKind::Group,
        }
    }

    /// The relation carrying messages the other way along the same edges.
    /// Membership edges are one-way: groups never send to users.
    pub fn transpose(self) -> Option<Relation> {
        match self {
            Relation::UserToItem => Some(Relation::ItemToUser),
            Relation::ItemToUser => Some(Relation::UserToItem),
            Relation::GroupToItem => Some(Relation::ItemToGroup),
            Relation::ItemToGroup => Some(Relation::GroupToItem),
            Relation::UserToGroup => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub num_users: usize,
    pub num_groups: usize,
    pub num_items: usize,
    pub avg_group_size: f64,
    pub num_user_item_edges: usize,
    pub num_group_item_edges: usize,
}

/// Immutable interaction graph. All adjacency lists are sorted and
/// duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGraph {
    num_users: usize,
    num_groups: usize,
    num_items: usize,
    user_items: Vec<Vec<usize>>,
    item_users: Vec<Vec<usize>>,
    group_items: Vec<Vec<usize>>,
    item_groups: Vec<Vec<usize>>,
    group_members: Vec<Vec<usize>>,
}

fn check_edge(
    relation: &'static str,
    (a, b): (usize, usize),
    (na, nb): (usize, usize),
    (ka, kb): (&str, &str),
) -> Result<()> {
    if a >= na || b >= nb {
        let detail = if a >= na {
            format!("{ka} index {a} >= {ka} count {na}")
        } else {
            format!("{kb} index {b} >= {kb} count {nb}")
        };
        return Err(Error::EdgeOutOfRange {
            relation,
            src: a,
            dst: b,
            detail,
        });
    }
    Ok(())
}

fn adjacency(rows: usize, edges: impl Iterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); rows];
    for (a, b) in edges {
        adj[a].push(b);
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

fn transpose(adj: &[Vec<usize>], cols: usize) -> Vec<Vec<usize>> {
    // rows are visited in ascending order, so each output list comes out sorted
    let mut out = vec![Vec::new(); cols];
    for (a, list) in adj.iter().enumerate() {
        for &b in list {
            out[b].push(a);
        }
    }
    out
}

impl InteractionGraph {
    /// Validates and assembles a graph. `memberships` holds `(group, user)`
    /// pairs. Duplicate edges collapse silently.
    pub fn build(
        num_users: usize,
        num_groups: usize,
        num_items: usize,
        user_item_edges: &[(usize, usize)],
        group_item_edges: &[(usize, usize)],
        memberships: &[(usize, usize)],
    ) -> Result<Self> {
        for &e in user_item_edges {
            check_edge("user-item", e, (num_users, num_items), ("user", "item"))?;
        }
        for &e in group_item_edges {
            check_edge("group-item", e, (num_groups, num_items), ("group", "item"))?;
        }
        for &e in memberships {
            check_edge("membership", e, (num_groups, num_users), ("group", "user"))?;
        }
        let user_items = adjacency(num_users, user_item_edges.iter().copied());
        let group_items = adjacency(num_groups, group_item_edges.iter().copied());
        let group_members = adjacency(num_groups, memberships.iter().copied());
        Self::from_adjacency(num_users, num_items, user_items, group_items, group_members)
    }

    /// Assembles from already sorted, deduplicated, in-range adjacency lists.
    fn from_adjacency(
        num_users: usize,
        num_items: usize,
        user_items: Vec<Vec<usize>>,
        group_items: Vec<Vec<usize>>,
        group_members: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if let Some(g) = group_members.iter().position(Vec::is_empty) {
            return Err(Error::EmptyGroup(g));
        }
        let item_users = transpose(&user_items, num_items);
        let item_groups = transpose(&group_items, num_items);
        Ok(InteractionGraph {
            num_users,
            num_groups: group_members.len(),
            num_items,
            user_items,
            item_users,
            group_items,
            item_groups,
            group_members,
        })
    }

    /// Same users, items and memberships with a replacement group-item
    /// edge set. Used to carve a training graph out of a full graph.
    pub fn with_group_items(&self, group_items: Vec<Vec<usize>>) -> Result<Self> {
        if group_items.len() != self.num_groups {
            return Err(Error::usage(format!(
                "expected {} group item lists, got {}",
                self.num_groups,
                group_items.len()
            )));
        }
        let mut edges = Vec::new();
        for (g, list) in group_items.iter().enumerate() {
            edges.extend(list.iter().map(|&t| (g, t)));
        }
        for &e in &edges {
            check_edge("group-item", e, (self.num_groups, self.num_items), ("group", "item"))?;
        }
        let group_items = adjacency(self.num_groups, edges.into_iter());
        Self::from_adjacency(
            self.num_users,
            self.num_items,
            self.user_items.clone(),
            group_items,
            self.group_members.clone(),
        )
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }
    pub fn num_groups(&self) -> usize {
        self.num_groups
    }
    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        match kind {
            NodeKind::User => self.num_users,
            NodeKind::Group => self.num_groups,
            NodeKind::Item => self.num_items,
        }
    }

    pub fn user_items(&self, u: usize) -> &[usize] {
        &self.user_items[u]
    }
    pub fn item_users(&self, t: usize) -> &[usize] {
        &self.item_users[t]
    }
    pub fn group_items(&self, g: usize) -> &[usize] {
        &self.group_items[g]
    }
    pub fn item_groups(&self, t: usize) -> &[usize] {
        &self.item_groups[t]
    }
    pub fn members(&self, g: usize) -> &[usize] {
        &self.group_members[g]
    }

    /// Raw sender indices for `target` under `relation`, ascending.
    pub fn senders(&self, relation: Relation, target: usize) -> &[usize] {
        match relation {
            Relation::UserToItem => &self.item_users[target],
            Relation::ItemToUser => &self.user_items[target],
            Relation::GroupToItem => &self.item_groups[target],
            Relation::ItemToGroup => &self.group_items[target],
            Relation::UserToGroup => &self.group_members[target],
        }
    }

    /// Message senders of `node` under `relation`, ascending by index.
    pub fn neighbors(&self, node: NodeId, relation: Relation) -> Result<Vec<NodeId>> {
        if node.kind != relation.target() {
            return Err(Error::usage(format!(
                "{relation:?} delivers to {} nodes, got {node}",
                relation.target().as_str()
            )));
        }
        if node.index >= self.count(node.kind) {
            return Err(Error::usage(format!("{node} is out of range")));
        }
        let kind = relation.source();
        Ok(self
            .senders(relation, node.index)
            .iter()
            .map(|&index| NodeId { kind, index })
            .collect())
    }

    pub fn has_group_item(&self, g: usize, t: usize) -> bool {
        self.group_items[g].binary_search(&t).is_ok()
    }

    pub fn num_user_item_edges(&self) -> usize {
        self.user_items.iter().map(Vec::len).sum()
    }

    pub fn num_group_item_edges(&self) -> usize {
        self.group_items.iter().map(Vec::len).sum()
    }

    pub fn stats(&self) -> GraphStats {
        let member_total: usize = self.group_members.iter().map(Vec::len).sum();
        let avg_group_size = if self.num_groups == 0 {
            0.0
        } else {
            member_total as f64 / self.num_groups as f64
        };
        GraphStats {
            num_users: self.num_users,
            num_groups: self.num_groups,
            num_items: self.num_items,
            avg_group_size,
            num_user_item_edges: self.num_user_item_edges(),
            num_group_item_edges: self.num_group_item_edges(),
        }
    }
}

pub const USER_ITEM_FILE: &str = "user_item.txt";
pub const GROUP_ITEM_FILE: &str = "group_item.txt";
pub const MEMBERSHIP_FILE: &str = "membership.txt";

/// Locations of the three dataset files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub user_item: PathBuf,
    pub group_item: PathBuf,
    pub membership: PathBuf,
}

impl DatasetPaths {
    /// The conventional file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DatasetPaths {
            user_item: dir.join(USER_ITEM_FILE),
            group_item: dir.join(GROUP_ITEM_FILE),
            membership: dir.join(MEMBERSHIP_FILE),
        }
    }
}

fn parse_id(path: &Path, line: usize, field: &str) -> Result<usize> {
    field.parse::<usize>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("expected a non-negative integer id, found {field:?}"),
    })
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses `<a> <b>` pair lines. Trailing columns (ratings, timestamps) are
/// ignored.
fn parse_pairs(path: &Path, text: &str) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (lineno, line) in data_lines(text) {
        let mut fields = line.split_ascii_whitespace();
        let (Some(a), Some(b)) = (fields.next(), fields.next()) else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: "expected two ids".into(),
            });
        };
        out.push((parse_id(path, lineno, a)?, parse_id(path, lineno, b)?));
    }
    Ok(out)
}

/// Parses `<group> <user>[,<user>...]` lines into `(group, user)` pairs.
fn parse_memberships(path: &Path, text: &str) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (lineno, line) in data_lines(text) {
        let mut fields = line.split_ascii_whitespace();
        let (Some(g), Some(list)) = (fields.next(), fields.next()) else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: "expected a group id followed by a comma-separated member list".into(),
            });
        };
        let g = parse_id(path, lineno, g)?;
        for u in list.split(',').filter(|s| !s.is_empty()) {
            out.push((g, parse_id(path, lineno, u)?));
        }
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads a graph from the three text files. Each id space is sized by the
/// largest id observed for that kind.
pub fn load_dataset(paths: &DatasetPaths) -> Result<InteractionGraph> {
    let user_item = parse_pairs(&paths.user_item, &read(&paths.user_item)?)?;
    let group_item = parse_pairs(&paths.group_item, &read(&paths.group_item)?)?;
    let members = parse_memberships(&paths.membership, &read(&paths.membership)?)?;

    let span = |it: &mut dyn Iterator<Item = usize>| it.max().map_or(0, |m| m + 1);
    let num_users = span(&mut user_item.iter().map(|e| e.0).chain(members.iter().map(|e| e.1)));
    let num_groups = span(&mut group_item.iter().map(|e| e.0).chain(members.iter().map(|e| e.0)));
    let num_items = span(&mut user_item.iter().map(|e| e.1).chain(group_item.iter().map(|e| e.1)));

    InteractionGraph::build(num_users, num_groups, num_items, &user_item, &group_item, &members)
}

/// Writes the graph in the three-file text format.
pub fn write_dataset(graph: &InteractionGraph, paths: &DatasetPaths) -> Result<()> {
    use std::fmt::Write as _;

    let mut ui = String::new();
    for u in 0..graph.num_users() {
        for t in graph.user_items(u) {
            writeln!(ui, "{u} {t}").unwrap();
        }
    }
    let mut gi = String::new();
    let mut gm = String::new();
    for g in 0..graph.num_groups() {
        for t in graph.group_items(g) {
            writeln!(gi, "{g} {t}").unwrap();
        }
        let list: Vec<String> = graph.members(g).iter().map(|u| u.to_string()).collect();
        writeln!(gm, "{g} {}", list.join(",")).unwrap();
    }
    for (path, text) in [
        (&paths.user_item, ui),
        (&paths.group_item, gi),
        (&paths.membership, gm),
    ] {
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
