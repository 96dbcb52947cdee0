//! Synthetic group-user-item graphs with a tunable repetition rate.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{write_dataset, DatasetPaths, InteractionGraph};
use crate::numerics::RngStream;

pub const SPEC_FILE: &str = "spec.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub num_groups: usize,
    /// Inclusive `(min, max)` ranges, sampled uniformly.
    pub group_size: (usize, usize),
    pub items_per_user: (usize, usize),
    pub items_per_group: (usize, usize),
    /// Probability that a group pick comes from its members' histories.
    pub rho: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            num_users: 300,
            num_items: 800,
            num_groups: 150,
            group_size: (2, 8),
            items_per_user: (5, 20),
            items_per_group: (3, 8),
            rho: 0.5,
            seed: 0,
        }
    }
}

fn check_range(name: &str, (lo, hi): (usize, usize), min: usize, max: usize) -> Result<()> {
    if lo < min || lo > hi || hi > max {
        return Err(Error::InfeasibleSpec(format!(
            "{name} range {lo}..={hi} must satisfy {min} <= min <= max <= {max}"
        )));
    }
    Ok(())
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InfeasibleSpec(format!("rho {} outside [0, 1]", self.rho)));
        }
        check_range("group_size", self.group_size, 1, self.num_users)?;
        check_range("items_per_user", self.items_per_user, 1, self.num_items)?;
        check_range("items_per_group", self.items_per_group, 1, self.num_items)?;
        Ok(())
    }

    /// `key = value` lines, readable as a config file.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let (gs, ipu, ipg) = (self.group_size, self.items_per_user, self.items_per_group);
        writeln!(s, "num_users = {}", self.num_users).unwrap();
        writeln!(s, "num_items = {}", self.num_items).unwrap();
        writeln!(s, "num_groups = {}", self.num_groups).unwrap();
        writeln!(s, "group_size_min = {}\ngroup_size_max = {}", gs.0, gs.1).unwrap();
        writeln!(s, "items_per_user_min = {}\nitems_per_user_max = {}", ipu.0, ipu.1).unwrap();
        writeln!(s, "items_per_group_min = {}\nitems_per_group_max = {}", ipg.0, ipg.1).unwrap();
        writeln!(s, "rho = {}", self.rho).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        s
    }
}

/// Removes and returns a uniformly chosen element.
fn take_random<R: Rng>(pool: &mut Vec<usize>, rng: &mut R) -> usize {
    let i = rng.random_range(0..pool.len());
    pool.swap_remove(i)
}

pub fn generate(spec: &GenSpec) -> Result<InteractionGraph> {
    spec.validate()?;
    let root = RngStream::new(spec.seed);
    let mut rng = root.fork("datagen");
    let between = |rng: &mut RngStream, (lo, hi): (usize, usize)| rng.random_range(lo..=hi);

    let mut ui = Vec::new();
    let mut histories = Vec::with_capacity(spec.num_users);
    for u in 0..spec.num_users {
        let k = between(&mut rng, spec.items_per_user);
        let mut h = rand::seq::index::sample(&mut rng, spec.num_items, k).into_vec();
        h.sort_unstable();
        ui.extend(h.iter().map(|&t| (u, t)));
        histories.push(h);
    }

    let mut gi = Vec::new();
    let mut memberships = Vec::new();
    for g in 0..spec.num_groups {
        let size = between(&mut rng, spec.group_size);
        let mut members = rand::seq::index::sample(&mut rng, spec.num_users, size).into_vec();
        members.sort_unstable();
        let mut in_union = vec![false; spec.num_items];
        for &u in &members {
            memberships.push((g, u));
            for &t in &histories[u] {
                in_union[t] = true;
            }
        }
        let (mut inside, mut outside): (Vec<usize>, Vec<usize>) =
            (0..spec.num_items).partition(|&t| in_union[t]);
        if spec.rho < 1.0 && outside.is_empty() {
            return Err(Error::InfeasibleSpec(format!(
                "members of group {g} cover all {} items; no out-of-union pick is possible",
                spec.num_items
            )));
        }
        let n = between(&mut rng, spec.items_per_group);
        let mut picked = 0;
        for _ in 0..n {
            let pool = if rng.random::<f64>() < spec.rho { &mut inside } else { &mut outside };
            if !pool.is_empty() {
                gi.push((g, take_random(pool, &mut rng)));
                picked += 1;
            }
        }
        if picked == 0 {
            // keep every group in the ranking task
            let pool = if outside.is_empty() { &mut inside } else { &mut outside };
            gi.push((g, take_random(pool, &mut rng)));
        }
    }
    InteractionGraph::build(
        spec.num_users,
        spec.num_groups,
        spec.num_items,
        &ui,
        &gi,
        &memberships,
    )
}

/// Writes the three dataset files and `spec.txt` into `dir`.
pub fn write_generated(graph: &InteractionGraph, spec: &GenSpec, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_dataset(graph, &DatasetPaths::in_dir(dir))?;
    let p = dir.join(SPEC_FILE);
    fs::write(&p, spec.to_text()).map_err(|e| Error::io(&p, e))
}
