//! Heterochronous ranked genealogies.
//!
//! A [`RankedGenealogy`] is an unlabeled ranked tree shape: the event at rank
//! `r` (1-based, ascending in time) merges two extant lineages and creates
//! vintage `r`. Sampling groups are 0-based indices into the schedule.
//! Leaves carry internal ids (group-major: the leaves of group 0 come first),
//! which is what makes [`LabeledGenealogy`] a thin wrapper.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used whenever two times are compared.
pub const TIME_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenealogyError {
    #[error("invalid sampling schedule: {0}")]
    InvalidSchedule(String),
    #[error("expected {expected} {what}, found {found}")]
    LengthMismatch { what: &'static str, expected: usize, found: usize },
    #[error("coalescent times must be finite, positive and strictly increasing (rank {rank})")]
    BadTimes { rank: usize },
    #[error("event at rank {rank} references unavailable lineages")]
    UnavailableLineage { rank: usize },
    #[error("unknown vintage {0}")]
    UnknownVintage(usize),
    #[error("genealogy does not end in a single root lineage")]
    NotAbsorbed,
}

/// Sampling times `s` (strictly increasing, `s[0] = 0`) and per-time counts `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleDoc", into = "ScheduleDoc")]
pub struct SamplingSchedule {
    s: Vec<f64>,
    n: Vec<usize>,
    offsets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleDoc {
    s: Vec<f64>,
    n: Vec<usize>,
}

impl TryFrom<ScheduleDoc> for SamplingSchedule {
    type Error = GenealogyError;
    fn try_from(d: ScheduleDoc) -> Result<Self, Self::Error> {
        SamplingSchedule::new(d.s, d.n)
    }
}

impl From<SamplingSchedule> for ScheduleDoc {
    fn from(s: SamplingSchedule) -> Self {
        ScheduleDoc { s: s.s, n: s.n }
    }
}

impl SamplingSchedule {
    pub fn new(s: Vec<f64>, n: Vec<usize>) -> Result<Self, GenealogyError> {
        if s.is_empty() || s.len() != n.len() {
            return Err(GenealogyError::InvalidSchedule(format!("{} sampling times but {} counts", s.len(), n.len())));
        }
        if s[0] != 0.0 {
            return Err(GenealogyError::InvalidSchedule("first sampling time must be 0".into()));
        }
        if s.iter().any(|x| !x.is_finite()) || s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GenealogyError::InvalidSchedule("sampling times must be finite and strictly increasing".into()));
        }
        if n.iter().any(|&c| c == 0) {
            return Err(GenealogyError::InvalidSchedule("every sampling time needs at least one sample".into()));
        }
        let total: usize = n.iter().sum();
        if total < 2 {
            return Err(GenealogyError::InvalidSchedule("at least two samples are required".into()));
        }
        let mut offsets = Vec::with_capacity(n.len() + 1);
        let mut acc = 0;
        for &c in &n {
            offsets.push(acc);
            acc += c;
        }
        offsets.push(acc);
        Ok(SamplingSchedule { s, n, offsets })
    }

    /// All samples taken at time zero.
    pub fn isochronous(n: usize) -> Result<Self, GenealogyError> {
        Self::new(vec![0.0], vec![n])
    }

    pub fn times(&self) -> &[f64] {
        &self.s
    }

    pub fn counts(&self) -> &[usize] {
        &self.n
    }

    /// Number of sampling times `m`.
    pub fn m(&self) -> usize {
        self.s.len()
    }

    /// Total sample size `n`.
    pub fn total(&self) -> usize {
        self.offsets[self.n.len()]
    }

    /// Group of leaf id `leaf` under the group-major numbering.
    pub fn leaf_group(&self, leaf: usize) -> usize {
        debug_assert!(leaf < self.total());
        self.offsets.partition_point(|&o| o <= leaf) - 1
    }

    /// First leaf id of `group`.
    pub fn leaf_offset(&self, group: usize) -> usize {
        self.offsets[group]
    }

    /// Whether `group` has been sampled at time `t` (sampling wins ties).
    pub fn is_sampled(&self, group: usize, t: f64) -> bool {
        self.s[group] <= t + TIME_TOL
    }

    /// Number of samples collected at or before `t`.
    pub fn sampled_by(&self, t: f64) -> usize {
        let k = self.s.partition_point(|&x| x <= t + TIME_TOL);
        self.offsets[k]
    }
}

/// One coalescence. Groups are 0-based, vintages are 1-based ranks.
/// Canonical form: `group_a < group_b` and `vintage_a < vintage_b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoalescentEvent {
    SingletonSameGroup { group: usize },
    SingletonCrossGroup { group_a: usize, group_b: usize },
    SingletonVintage { group: usize, vintage: usize },
    VintageVintage { vintage_a: usize, vintage_b: usize },
}

/// A lineage taking part in an event, as seen by an unlabeled topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operand {
    Singleton(usize),
    Vintage(usize),
}

impl CoalescentEvent {
    pub fn from_operands(x: Operand, y: Operand) -> Self {
        use Operand::*;
        match (x, y) {
            (Singleton(a), Singleton(b)) if a == b => CoalescentEvent::SingletonSameGroup { group: a },
            (Singleton(a), Singleton(b)) => CoalescentEvent::SingletonCrossGroup { group_a: a.min(b), group_b: a.max(b) },
            (Singleton(g), Vintage(v)) | (Vintage(v), Singleton(g)) => CoalescentEvent::SingletonVintage { group: g, vintage: v },
            (Vintage(a), Vintage(b)) => CoalescentEvent::VintageVintage { vintage_a: a.min(b), vintage_b: a.max(b) },
        }
    }

    pub fn operands(&self) -> [Operand; 2] {
        use Operand::*;
        match *self {
            CoalescentEvent::SingletonSameGroup { group } => [Singleton(group), Singleton(group)],
            CoalescentEvent::SingletonCrossGroup { group_a, group_b } => [Singleton(group_a), Singleton(group_b)],
            CoalescentEvent::SingletonVintage { group, vintage } => [Singleton(group), Vintage(vintage)],
            CoalescentEvent::VintageVintage { vintage_a, vintage_b } => [Vintage(vintage_a), Vintage(vintage_b)],
        }
    }

    pub fn canonical(self) -> Self {
        let [x, y] = self.operands();
        Self::from_operands(x, y)
    }

    pub fn uses_vintage(&self, v: usize) -> bool {
        self.operands().contains(&Operand::Vintage(v))
    }
}

/// A node of a genealogy: a sampled leaf (by id) or an internal vintage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Node {
    Leaf(usize),
    Vintage(usize),
}

/// State of the jump chain: available singletons per group and extant vintages.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct JumpChainState {
    pub a: Vec<usize>,
    pub b: BTreeSet<usize>,
}

impl JumpChainState {
    pub fn lineages(&self) -> usize {
        self.a.iter().sum::<usize>() + self.b.len()
    }
}

/// A maximal stretch of constant lineage count.
#[derive(Clone, Debug, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub lineages: usize,
    /// Rank of the coalescence that closes the block this interval belongs to.
    pub block_rank: usize,
    /// True when the interval ends at that coalescence rather than at a sampling time.
    pub ends_in_coalescence: bool,
}

impl Interval {
    pub fn pairs(&self) -> f64 {
        binom2(self.lineages)
    }
}

pub(crate) fn binom2(k: usize) -> f64 {
    (k * k.saturating_sub(1) / 2) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubtreeStats {
    pub leaf_count: usize,
    pub group_counts: Vec<usize>,
    /// Total branch length below the vintage plus its subtending branch.
    pub length: f64,
    /// Branch from the vintage to its parent; zero at the root.
    pub subtending: f64,
}

/// Unlabeled ranked genealogy with coalescent times and sampling schedule.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "GenealogyDoc", into = "GenealogyDoc")]
pub struct RankedGenealogy {
    schedule: SamplingSchedule,
    times: Vec<f64>,
    events: Vec<CoalescentEvent>,
    children: Vec<[Node; 2]>,
    parent: Vec<Option<usize>>,
    leaf_parent: Vec<usize>,
    leaf_count: Vec<usize>,
    group_counts: Vec<Vec<usize>>,
}

/// JSON form of a genealogy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenealogyDoc {
    pub schedule: SamplingSchedule,
    pub times: Vec<f64>,
    pub events: Vec<CoalescentEvent>,
}

impl TryFrom<GenealogyDoc> for RankedGenealogy {
    type Error = GenealogyError;
    fn try_from(d: GenealogyDoc) -> Result<Self, Self::Error> {
        RankedGenealogy::new(d.schedule, d.times, d.events)
    }
}

impl From<RankedGenealogy> for GenealogyDoc {
    fn from(g: RankedGenealogy) -> Self {
        GenealogyDoc { schedule: g.schedule, times: g.times, events: g.events }
    }
}

impl PartialEq for RankedGenealogy {
    fn eq(&self, other: &Self) -> bool {
        self.schedule == other.schedule && self.times == other.times && self.events == other.events
    }
}

fn check_times(times: &[f64], expected: usize) -> Result<(), GenealogyError> {
    if times.len() != expected {
        return Err(GenealogyError::LengthMismatch { what: "coalescent times", expected, found: times.len() });
    }
    let mut prev = 0.0;
    for (i, &t) in times.iter().enumerate() {
        if !t.is_finite() || t <= prev {
            return Err(GenealogyError::BadTimes { rank: i + 1 });
        }
        prev = t;
    }
    Ok(())
}

impl RankedGenealogy {
    /// Builds and validates a genealogy from its event sequence.
    pub fn new(schedule: SamplingSchedule, times: Vec<f64>, events: Vec<CoalescentEvent>) -> Result<Self, GenealogyError> {
        let n = schedule.total();
        check_times(&times, n - 1)?;
        if events.len() != n - 1 {
            return Err(GenealogyError::LengthMismatch { what: "events", expected: n - 1, found: events.len() });
        }
        // Replay, handing out leaf ids of each group in order of use.
        let mut next_leaf: Vec<usize> = (0..schedule.m()).map(|g| schedule.leaf_offset(g)).collect();
        let mut used_vintage = vec![false; n];
        let mut children = Vec::with_capacity(n - 1);
        for (i, ev) in events.iter().enumerate() {
            let rank = i + 1;
            let t = times[i];
            let mut pair = [Node::Leaf(0); 2];
            for (slot, op) in ev.operands().iter().enumerate() {
                pair[slot] = match *op {
                    Operand::Singleton(g) => {
                        if g >= schedule.m() || !schedule.is_sampled(g, t) || next_leaf[g] >= schedule.leaf_offset(g + 1) {
                            return Err(GenealogyError::UnavailableLineage { rank });
                        }
                        next_leaf[g] += 1;
                        Node::Leaf(next_leaf[g] - 1)
                    }
                    Operand::Vintage(v) => {
                        if v == 0 || v >= rank || used_vintage[v] {
                            return Err(GenealogyError::UnavailableLineage { rank });
                        }
                        used_vintage[v] = true;
                        Node::Vintage(v)
                    }
                };
            }
            children.push(pair);
        }
        let mut g = Self::assemble(schedule, times, children)?;
        // Keep the caller's events in canonical form.
        g.events = events.into_iter().map(CoalescentEvent::canonical).collect();
        Ok(g)
    }

    /// Builds a genealogy from explicit children per rank (leaf ids group-major).
    pub fn from_children(schedule: SamplingSchedule, times: Vec<f64>, children: Vec<[Node; 2]>) -> Result<Self, GenealogyError> {
        let n = schedule.total();
        check_times(&times, n - 1)?;
        if children.len() != n - 1 {
            return Err(GenealogyError::LengthMismatch { what: "merges", expected: n - 1, found: children.len() });
        }
        let mut used_leaf = vec![false; n];
        let mut used_vintage = vec![false; n];
        for (i, pair) in children.iter().enumerate() {
            let rank = i + 1;
            if pair[0] == pair[1] {
                return Err(GenealogyError::UnavailableLineage { rank });
            }
            for node in pair {
                match *node {
                    Node::Leaf(l) => {
                        if l >= n || used_leaf[l] || !schedule.is_sampled(schedule.leaf_group(l), times[i]) {
                            return Err(GenealogyError::UnavailableLineage { rank });
                        }
                        used_leaf[l] = true;
                    }
                    Node::Vintage(v) => {
                        if v == 0 || v >= rank || used_vintage[v] {
                            return Err(GenealogyError::UnavailableLineage { rank });
                        }
                        used_vintage[v] = true;
                    }
                }
            }
        }
        Self::assemble(schedule, times, children)
    }

    fn assemble(schedule: SamplingSchedule, times: Vec<f64>, children: Vec<[Node; 2]>) -> Result<Self, GenealogyError> {
        let n = schedule.total();
        let m = schedule.m();
        let mut parent = vec![None; n - 1];
        let mut leaf_parent = vec![usize::MAX; n];
        let mut leaf_count = vec![0; n - 1];
        let mut group_counts = vec![vec![0; m]; n - 1];
        let mut events = Vec::with_capacity(n - 1);
        for (i, pair) in children.iter().enumerate() {
            let rank = i + 1;
            let mut ops = [Operand::Singleton(0); 2];
            for (slot, node) in pair.iter().enumerate() {
                match *node {
                    Node::Leaf(l) => {
                        let g = schedule.leaf_group(l);
                        leaf_parent[l] = rank;
                        leaf_count[i] += 1;
                        group_counts[i][g] += 1;
                        ops[slot] = Operand::Singleton(g);
                    }
                    Node::Vintage(v) => {
                        parent[v - 1] = Some(rank);
                        leaf_count[i] += leaf_count[v - 1];
                        for g in 0..m {
                            group_counts[i][g] += group_counts[v - 1][g];
                        }
                        ops[slot] = Operand::Vintage(v);
                    }
                }
            }
            events.push(CoalescentEvent::from_operands(ops[0], ops[1]));
        }
        if leaf_count[n - 2] != n || parent[..n - 2].iter().any(Option::is_none) {
            return Err(GenealogyError::NotAbsorbed);
        }
        Ok(RankedGenealogy { schedule, times, events, children, parent, leaf_parent, leaf_count, group_counts })
    }

    /// Same topology with new coalescent times.
    pub fn with_times(&self, times: Vec<f64>) -> Result<Self, GenealogyError> {
        Self::from_children(self.schedule.clone(), times, self.children.clone()).map(|mut g| {
            g.events = self.events.clone();
            g
        })
    }

    pub fn schedule(&self) -> &SamplingSchedule {
        &self.schedule
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[CoalescentEvent] {
        &self.events
    }

    pub fn n(&self) -> usize {
        self.schedule.total()
    }

    /// Time of vintage `v`.
    pub fn time(&self, v: usize) -> f64 {
        self.times[v - 1]
    }

    pub fn root(&self) -> usize {
        self.n() - 1
    }

    /// Time to the most recent common ancestor.
    pub fn height(&self) -> f64 {
        *self.times.last().expect("n >= 2")
    }

    pub fn children(&self, v: usize) -> [Node; 2] {
        self.children[v - 1]
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v - 1]
    }

    pub fn leaf_parent(&self, leaf: usize) -> usize {
        self.leaf_parent[leaf]
    }

    pub fn leaf_group(&self, leaf: usize) -> usize {
        self.schedule.leaf_group(leaf)
    }

    pub fn leaf_time(&self, leaf: usize) -> f64 {
        self.schedule.times()[self.leaf_group(leaf)]
    }

    pub fn leaf_count(&self, v: usize) -> usize {
        self.leaf_count[v - 1]
    }

    pub fn group_counts(&self, v: usize) -> &[usize] {
        &self.group_counts[v - 1]
    }

    /// Length of the branch above `node` (zero for the root).
    pub fn branch_length(&self, node: Node) -> f64 {
        match node {
            Node::Leaf(l) => self.time(self.leaf_parent[l]) - self.leaf_time(l),
            Node::Vintage(v) => match self.parent(v) {
                Some(p) => self.time(p) - self.time(v),
                None => 0.0,
            },
        }
    }

    /// Every node except the root, i.e. every branch.
    pub fn branches(&self) -> impl Iterator<Item = Node> + '_ {
        (0..self.n()).map(Node::Leaf).chain((1..self.root()).map(Node::Vintage))
    }

    pub fn tree_length(&self) -> f64 {
        self.branches().map(|b| self.branch_length(b)).sum()
    }

    /// Vintages of the subtree rooted at `v`, including `v`, ascending.
    pub fn descendant_vintages(&self, v: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![v];
        while let Some(w) = stack.pop() {
            out.push(w);
            for c in self.children(w) {
                if let Node::Vintage(x) = c {
                    stack.push(x);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Leaf ids below `v`, ascending.
    pub fn descendant_leaves(&self, v: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![v];
        while let Some(w) = stack.pop() {
            for c in self.children(w) {
                match c {
                    Node::Leaf(l) => out.push(l),
                    Node::Vintage(x) => stack.push(x),
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn subtree_stats(&self, v: usize) -> Result<SubtreeStats, GenealogyError> {
        if v == 0 || v > self.root() {
            return Err(GenealogyError::UnknownVintage(v));
        }
        let mut length = self.branch_length(Node::Vintage(v));
        for w in self.descendant_vintages(v) {
            for c in self.children(w) {
                length += self.branch_length(c);
            }
        }
        Ok(SubtreeStats {
            leaf_count: self.leaf_count(v),
            group_counts: self.group_counts(v).to_vec(),
            length,
            subtending: self.branch_length(Node::Vintage(v)),
        })
    }

    /// Internal nodes whose two children are both leaves.
    pub fn cherry_count(&self) -> usize {
        self.children.iter().filter(|p| matches!(p, [Node::Leaf(_), Node::Leaf(_)])).count()
    }

    /// Sampling jumps and coalescences in time order; sampling first on ties.
    fn jumps(&self) -> Vec<(f64, Jump)> {
        let s = self.schedule.times();
        let mut out = Vec::with_capacity(self.n() + s.len());
        let mut next_group = 1;
        for (i, &t) in self.times.iter().enumerate() {
            while next_group < s.len() && s[next_group] <= t + TIME_TOL {
                out.push((s[next_group], Jump::Sampling(next_group)));
                next_group += 1;
            }
            out.push((t, Jump::Coalescence(i + 1)));
        }
        out
    }

    pub fn jump_chain(&self) -> Vec<(f64, JumpChainState)> {
        let m = self.schedule.m();
        let mut state = JumpChainState { a: vec![0; m], b: BTreeSet::new() };
        state.a[0] = self.schedule.counts()[0];
        let mut out = vec![(0.0, state.clone())];
        for (t, jump) in self.jumps() {
            match jump {
                Jump::Sampling(g) => state.a[g] += self.schedule.counts()[g],
                Jump::Coalescence(r) => {
                    for op in self.events[r - 1].operands() {
                        match op {
                            Operand::Singleton(g) => state.a[g] -= 1,
                            Operand::Vintage(v) => {
                                state.b.remove(&v);
                            }
                        }
                    }
                    state.b.insert(r);
                }
            }
            out.push((t, state.clone()));
        }
        out
    }

    /// Partition of `[0, t_root)` into constant-lineage intervals.
    /// Zero-length intervals ending at a sampling time are omitted.
    pub fn interval_decomposition(&self) -> Vec<Interval> {
        let mut out = Vec::new();
        let mut start = 0.0;
        let mut lineages = self.schedule.counts()[0];
        let mut rank = 1;
        for (t, jump) in self.jumps() {
            match jump {
                Jump::Sampling(g) => {
                    if t > start {
                        out.push(Interval { start, end: t, lineages, block_rank: rank, ends_in_coalescence: false });
                        start = t;
                    }
                    lineages += self.schedule.counts()[g];
                }
                Jump::Coalescence(r) => {
                    out.push(Interval { start, end: t, lineages, block_rank: r, ends_in_coalescence: true });
                    start = t;
                    lineages -= 1;
                    rank = r + 1;
                }
            }
        }
        out
    }

    /// Newick rendering with leaves named `g<group>_<id>`; drops sampling offsets.
    pub fn to_newick(&self) -> String {
        fn rec(g: &RankedGenealogy, node: Node, out: &mut String) {
            match node {
                Node::Leaf(l) => out.push_str(&format!("g{}_{}", g.leaf_group(l), l)),
                Node::Vintage(v) => {
                    let [a, b] = g.children(v);
                    out.push('(');
                    rec(g, a, out);
                    out.push(',');
                    rec(g, b, out);
                    out.push(')');
                }
            }
            if !matches!(node, Node::Vintage(v) if v == g.root()) {
                out.push_str(&format!(":{}", g.branch_length(node)));
            }
        }
        let mut s = String::new();
        rec(self, Node::Vintage(self.root()), &mut s);
        s.push(';');
        s
    }
}

#[derive(Clone, Copy, Debug)]
enum Jump {
    Sampling(usize),
    Coalescence(usize),
}

/// Events with ranks `r` and `r + 1` exchanged; `None` when `r + 1` uses vintage `r`.
pub fn swap_ranks(events: &[CoalescentEvent], r: usize) -> Option<Vec<CoalescentEvent>> {
    if events[r].uses_vintage(r) {
        return None;
    }
    let relabel = |op: Operand| match op {
        Operand::Vintage(v) if v == r => Operand::Vintage(r + 1),
        Operand::Vintage(v) if v == r + 1 => Operand::Vintage(r),
        o => o,
    };
    let mut out = events.to_vec();
    out.swap(r - 1, r);
    for ev in out.iter_mut().skip(r + 1) {
        let [x, y] = ev.operands();
        *ev = CoalescentEvent::from_operands(relabel(x), relabel(y));
    }
    Some(out)
}

/// For parent-child ranks `r`, `r + 1`: exchange operand `pick` of event `r`
/// with the sibling of vintage `r` in event `r + 1`.
pub fn swap_offspring(events: &[CoalescentEvent], r: usize, pick: usize) -> Option<Vec<CoalescentEvent>> {
    let [p0, p1] = events[r].operands();
    let y = if p0 == Operand::Vintage(r) {
        p1
    } else if p1 == Operand::Vintage(r) {
        p0
    } else {
        return None;
    };
    let xs = events[r - 1].operands();
    let x = xs[pick];
    let keep = xs[1 - pick];
    let mut out = events.to_vec();
    out[r - 1] = CoalescentEvent::from_operands(keep, y);
    out[r] = CoalescentEvent::from_operands(Operand::Vintage(r), x);
    Some(out)
}

/// Labeled (Kingman) genealogy: leaf ids are meaningful sequence labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledGenealogy {
    inner: RankedGenealogy,
}

impl LabeledGenealogy {
    pub fn new(schedule: SamplingSchedule, times: Vec<f64>, merges: Vec<[Node; 2]>) -> Result<Self, GenealogyError> {
        Ok(LabeledGenealogy { inner: RankedGenealogy::from_children(schedule, times, merges)? })
    }

    /// The tree as a ranked genealogy; leaf ids are kept.
    pub fn tree(&self) -> &RankedGenealogy {
        &self.inner
    }

    /// The Tajima equivalence class representative (labels dropped).
    pub fn unlabeled(&self) -> RankedGenealogy {
        RankedGenealogy::new(self.inner.schedule.clone(), self.inner.times.clone(), self.inner.events.clone())
            .expect("labeled genealogy is valid")
    }
}
