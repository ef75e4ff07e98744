//! Conditional likelihood of the data given a genealogy under the infinite-sites model.
//!
//! Values are Poisson-process probabilities of the observed mutation
//! configuration: every branch contributes `(μl)^k e^{-μl} / k!`. The
//! unlabeled (Tajima) likelihood sums this over allocations and over the
//! distinct matchings of singleton edges to leaf branches.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::allocation::{
    enumerate_allocations, singleton_edge_partition, AllocationError, AllocationMatrix, SingletonPartition, DEFAULT_ROW_CAP,
};
use crate::counting::sequence_labels;
use crate::genealogy::{LabeledGenealogy, Node, RankedGenealogy, SamplingSchedule};
use crate::ism_data::PerfectPhylogeny;

#[derive(Debug, Error)]
pub enum LikelihoodError {
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error("labeled data and genealogy disagree: {0}")]
    LabelMismatch(String),
}

fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

pub(crate) fn logsumexp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let mx = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// `ln[(μl)^k / k!]`, with `0^0 = 1`.
fn log_poisson_kernel(mu_l: f64, k: usize) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * mu_l.ln() - ln_factorial(k)
    }
}

/// Number of distinct matchings of singleton edges to leaf branches:
/// per sampling group, the multinomial `k_j! / Π_h k_j^{(h)}!`.
pub fn matching_multiplicity(p: &SingletonPartition) -> f64 {
    p.blocks
        .iter()
        .map(|(_, b)| {
            let k: usize = b.iter().map(|x| x.1).sum();
            (ln_factorial(k) - b.iter().map(|x| ln_factorial(x.1)).sum::<f64>()).exp()
        })
        .product::<f64>()
        .round()
}

/// Ranks owned by `v` in an allocation row, ascending.
fn region(row: &[usize], v: usize) -> Vec<usize> {
    row.iter().enumerate().filter(|(_, &x)| x == v).map(|(i, _)| i + 1).collect()
}

/// Region length, subtending length, and leaf-branch lengths per group.
fn region_geometry(g: &RankedGenealogy, row: &[usize], v: usize, ranks: &[usize]) -> (f64, f64, Vec<Vec<f64>>) {
    let top = *ranks.last().expect("non-singleton nodes own at least one rank");
    let sub = g.branch_length(Node::Vintage(top));
    let mut len = sub;
    let mut leaves = vec![Vec::new(); g.schedule().m()];
    for &i in ranks {
        for c in g.children(i) {
            match c {
                Node::Leaf(l) => {
                    let b = g.branch_length(c);
                    len += b;
                    leaves[g.leaf_group(l)].push(b);
                }
                Node::Vintage(w) if row[w - 1] == v => len += g.branch_length(c),
                Node::Vintage(_) => {}
            }
        }
    }
    (len, sub, leaves)
}

/// `ln Σ_R Π_j (μ l_{R_j})^{e_j} / e_j!` over distinct assignments of the
/// mutation counts in `block` to the leaf branches `lens` of one group.
fn log_matching_sum(block: &[(usize, usize)], lens: &[f64], mu: f64) -> f64 {
    let mut states: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    states.insert(block.iter().map(|x| x.1).collect(), 0.0);
    for &l in lens {
        let mut next: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (rem, val) in &states {
            for (h, &(e, _)) in block.iter().enumerate() {
                if rem[h] == 0 {
                    continue;
                }
                let w = log_poisson_kernel(mu * l, e);
                if w == f64::NEG_INFINITY {
                    continue;
                }
                let mut r = rem.clone();
                r[h] -= 1;
                let slot = next.entry(r).or_insert(f64::NEG_INFINITY);
                *slot = logsumexp([*slot, val + w]);
            }
        }
        states = next;
    }
    states.values().copied().fold(f64::NEG_INFINITY, |a, b| logsumexp([a, b]))
}

/// `ln P(V, E_V, a | g, μ)`: the subtending edge of `v`, the distinct
/// matchings of its singleton children and `e^{-μ𝒯}` over its region.
pub fn node_log_factor(t: &PerfectPhylogeny, v: usize, row: &[usize], g: &RankedGenealogy, mu: f64) -> f64 {
    let ranks = region(row, v);
    node_log_factor_in(t, v, row, &ranks, g, mu)
}

fn node_log_factor_in(t: &PerfectPhylogeny, v: usize, row: &[usize], ranks: &[usize], g: &RankedGenealogy, mu: f64) -> f64 {
    let (len, sub, leaves) = region_geometry(g, row, v, ranks);
    let mut out = -mu * len + log_poisson_kernel(mu * sub, t.node(v).edge_mutations());
    for (grp, block) in &singleton_edge_partition(t, v).blocks {
        debug_assert_eq!(leaves[*grp].len(), block.iter().map(|x| x.1).sum::<usize>());
        out += log_matching_sum(block, &leaves[*grp], mu);
    }
    out
}

pub fn node_factor(t: &PerfectPhylogeny, v: usize, row: &[usize], g: &RankedGenealogy, mu: f64) -> f64 {
    node_log_factor(t, v, row, g, mu).exp()
}

/// The likelihood at unit rate split so that other rates are cheap:
/// `ln P(Y | g, μ) = log_at_unit_rate + z ln μ − (μ − 1) L`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LikelihoodParts {
    pub log_at_unit_rate: f64,
    pub z: usize,
    pub tree_length: f64,
    pub allocations: usize,
}

impl LikelihoodParts {
    pub fn at(&self, mu: f64) -> f64 {
        if self.log_at_unit_rate == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        self.log_at_unit_rate + self.z as f64 * mu.ln() - (mu - 1.0) * self.tree_length
    }
}

/// Sums node factors over the allocation matrix.
pub fn tajima_parts(t: &PerfectPhylogeny, g: &RankedGenealogy, cap: usize) -> Result<LikelihoodParts, LikelihoodError> {
    let a = enumerate_allocations(t, g, cap)?;
    Ok(tajima_parts_with(t, g, &a))
}

/// As [`tajima_parts`] with a precomputed matrix; allocations depend on the
/// topology only, so time updates can reuse them. Factors are cached per
/// (node, owned ranks) since many rows share them.
pub fn tajima_parts_with(t: &PerfectPhylogeny, g: &RankedGenealogy, a: &AllocationMatrix) -> LikelihoodParts {
    let nodes = t.non_singleton();
    let mut cache: BTreeMap<(usize, Vec<usize>), f64> = BTreeMap::new();
    let terms: Vec<f64> = a
        .rows()
        .iter()
        .map(|row| {
            nodes
                .iter()
                .map(|&v| {
                    let ranks = region(row, v);
                    *cache.entry((v, ranks)).or_insert_with_key(|(v, ranks)| node_log_factor_in(t, *v, row, ranks, g, 1.0))
                })
                .sum::<f64>()
        })
        .collect();
    LikelihoodParts { log_at_unit_rate: logsumexp(terms), z: t.z(), tree_length: g.tree_length(), allocations: a.len() }
}

/// `ln P(Y | g, μ)` for unlabeled data; `-∞` when no allocation exists.
pub fn tajima_loglik(t: &PerfectPhylogeny, g: &RankedGenealogy, mu: f64) -> Result<f64, LikelihoodError> {
    Ok(tajima_parts(t, g, DEFAULT_ROW_CAP)?.at(mu))
}

/// Data with sequence labels: the carriers of every site.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledData {
    pub schedule: SamplingSchedule,
    /// Sorted leaf labels carrying the derived allele, per site.
    pub carriers: Vec<Vec<usize>>,
}

impl LabeledData {
    /// Labels sequences as [`sequence_labels`] does.
    pub fn from_phylogeny(t: &PerfectPhylogeny) -> Self {
        let labels = sequence_labels(t);
        let mut carriers = vec![Vec::new(); t.z()];
        for (leaf, &v) in labels.iter().enumerate() {
            for s in t.path_sites(v) {
                carriers[s].push(leaf);
            }
        }
        LabeledData { schedule: t.schedule().clone(), carriers }
    }
}

/// `ln P(Y | g, μ)` for labeled data: each site sits on the unique branch
/// whose leaf set equals its carriers; `-∞` when no such branch exists.
pub fn kingman_loglik(y: &LabeledData, g: &LabeledGenealogy, mu: f64) -> Result<f64, LikelihoodError> {
    let tree = g.tree();
    if &y.schedule != tree.schedule() {
        return Err(LikelihoodError::LabelMismatch("sampling schedules differ".into()));
    }
    let n = tree.n();
    let mut by_set: BTreeMap<Vec<usize>, Node> = BTreeMap::new();
    for l in 0..n {
        by_set.insert(vec![l], Node::Leaf(l));
    }
    for v in 1..tree.root() {
        by_set.insert(tree.descendant_leaves(v), Node::Vintage(v));
    }
    let mut counts: BTreeMap<Node, usize> = BTreeMap::new();
    for c in &y.carriers {
        if c.iter().any(|&l| l >= n) {
            return Err(LikelihoodError::LabelMismatch(format!("label out of range in {c:?}")));
        }
        match by_set.get(c) {
            Some(&b) => *counts.entry(b).or_default() += 1,
            None => return Ok(f64::NEG_INFINITY),
        }
    }
    let mut out = -mu * tree.tree_length();
    for (b, k) in counts {
        out += log_poisson_kernel(mu * tree.branch_length(b), k);
    }
    Ok(out)
}
