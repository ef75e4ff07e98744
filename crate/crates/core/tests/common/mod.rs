//! Independent oracles shared by the integration tests and the acceptance
//! runner. Everything here works from definitions by exhaustive search and
//! avoids the library's own algorithms.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tajima_het::coalescent_prior::sample_genealogy;
use tajima_het::demographic::Trajectory;
use tajima_het::genealogy::{LabeledGenealogy, Node};
use tajima_het::ism_data::{build_perfect_phylogeny, FrequencyMatrix, IncidenceMatrix, PerfectPhylogeny};
use tajima_het::simulator::{data_from_counts, simulate_dataset};
use tajima_het::{CoalescentEvent, RankedGenealogy, SamplingSchedule};

use CoalescentEvent::*;

/// One sequence with two private mutations, a pair sharing a third, and
/// three sequences without mutations.
pub fn six_leaf_data() -> PerfectPhylogeny {
    let y1 = IncidenceMatrix::from_rows(vec![vec![1, 1, 0], vec![0, 0, 1], vec![0, 0, 0]]).unwrap();
    let y2 = FrequencyMatrix::new(vec![vec![1], vec![2], vec![3]]).unwrap();
    let s = y2.schedule(vec![0.0]).unwrap();
    build_perfect_phylogeny(&y1, &y2, &s).unwrap()
}

/// Haplotypes A..E at two sampling times, n = (7, 3).
pub fn two_time_data() -> PerfectPhylogeny {
    let y1 = IncidenceMatrix::from_rows(vec![
        vec![1, 1, 0, 0, 0, 0],
        vec![0, 0, 1, 1, 0, 0],
        vec![0, 0, 1, 0, 0, 0],
        vec![0, 0, 0, 0, 0, 0],
        vec![0, 0, 0, 0, 1, 1],
    ])
    .unwrap();
    let y2 = FrequencyMatrix::new(vec![vec![3, 0], vec![2, 0], vec![1, 1], vec![1, 1], vec![0, 1]]).unwrap();
    let s = y2.schedule(vec![0.0, 0.3]).unwrap();
    build_perfect_phylogeny(&y1, &y2, &s).unwrap()
}

/// The two-cherry genealogy on the two-time schedule of the worked allocation example.
pub fn two_time_genealogy() -> RankedGenealogy {
    let sched = SamplingSchedule::new(vec![0.0, 0.3], vec![7, 3]).unwrap();
    let ev = vec![
        SingletonSameGroup { group: 0 },
        SingletonSameGroup { group: 0 },
        SingletonVintage { group: 0, vintage: 1 },
        SingletonVintage { group: 0, vintage: 2 },
        SingletonVintage { group: 1, vintage: 4 },
        SingletonVintage { group: 1, vintage: 3 },
        SingletonCrossGroup { group_a: 0, group_b: 1 },
        VintageVintage { vintage_a: 5, vintage_b: 7 },
        VintageVintage { vintage_a: 6, vintage_b: 8 },
    ];
    RankedGenealogy::new(sched, vec![0.1, 0.2, 0.35, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], ev).unwrap()
}

/// Caterpillar above one cherry on six leaves.
pub fn g1_events() -> Vec<CoalescentEvent> {
    vec![
        SingletonSameGroup { group: 0 },
        SingletonVintage { group: 0, vintage: 1 },
        SingletonVintage { group: 0, vintage: 2 },
        SingletonVintage { group: 0, vintage: 3 },
        SingletonVintage { group: 0, vintage: 4 },
    ]
}

/// Two cherries on six leaves: (((c1, s), c2), s).
pub fn g2_events() -> Vec<CoalescentEvent> {
    vec![
        SingletonSameGroup { group: 0 },
        SingletonSameGroup { group: 0 },
        SingletonVintage { group: 0, vintage: 1 },
        VintageVintage { vintage_a: 2, vintage_b: 3 },
        SingletonVintage { group: 0, vintage: 4 },
    ]
}

/// Closed-form unlabeled likelihood at unit rate for the caterpillar.
pub fn g1_closed_form(t: &[f64]) -> f64 {
    let len = 2.0 * t[0] + t[1] + t[2] + t[3] + t[4] + (t[1] - t[0]) + (t[2] - t[1]) + (t[3] - t[2]) + (t[4] - t[3]);
    let l1 = t[1] - t[0];
    let sq = |x: f64| x * x / 2.0;
    (-len).exp() * l1 * (sq(t[1]) + sq(t[2]) + sq(t[3]) + sq(t[4]))
}

/// Closed-form unlabeled likelihood at unit rate for the two-cherry tree.
pub fn g2_closed_form(t: &[f64]) -> f64 {
    let (l2, l3, l6, l7, l4, l8) = (t[0], t[0], t[1], t[1], t[2], t[4]);
    let l1 = t[2] - t[0];
    let l5 = t[3] - t[1];
    let inner = (t[3] - t[2]) + (t[4] - t[3]);
    let len = l1 + l2 + l3 + l4 + l5 + l6 + l7 + l8 + inner;
    let sq = |x: f64| x * x / 2.0;
    (-len).exp() * (l1 * (sq(l4) + sq(l6) + sq(l7) + sq(l8)) + l5 * (sq(l2) + sq(l3) + sq(l4) + sq(l8)))
}

/// Random increasing times of `k` events.
pub fn random_times(k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut acc = 0.0;
    (0..k)
        .map(|_| {
            acc += rng.gen_range(0.05..1.0);
            acc
        })
        .collect()
}

/// Groups sampled strictly before `t`.
fn sampled_before(s: &SamplingSchedule, t: f64) -> Vec<bool> {
    s.times().iter().map(|&x| x < t).collect()
}

/// Every unlabeled ranked topology on `s` with event `i` at `times[i]`.
pub fn tajima_topologies(s: &SamplingSchedule, times: &[f64]) -> Vec<Vec<CoalescentEvent>> {
    fn rec(
        s: &SamplingSchedule,
        times: &[f64],
        used: &mut Vec<usize>,
        vintages: &mut BTreeSet<usize>,
        acc: &mut Vec<CoalescentEvent>,
        out: &mut Vec<Vec<CoalescentEvent>>,
    ) {
        let r = acc.len();
        if r == times.len() {
            out.push(acc.clone());
            return;
        }
        let open = sampled_before(s, times[r]);
        let avail: Vec<usize> = (0..s.m()).map(|j| if open[j] { s.counts()[j] - used[j] } else { 0 }).collect();
        let vs: Vec<usize> = vintages.iter().copied().collect();
        let mut moves = Vec::new();
        for j in 0..s.m() {
            if avail[j] >= 2 {
                moves.push(SingletonSameGroup { group: j });
            }
            for k in j + 1..s.m() {
                if avail[j] >= 1 && avail[k] >= 1 {
                    moves.push(SingletonCrossGroup { group_a: j, group_b: k });
                }
            }
            if avail[j] >= 1 {
                for &v in &vs {
                    moves.push(SingletonVintage { group: j, vintage: v });
                }
            }
        }
        for (i, &a) in vs.iter().enumerate() {
            for &b in &vs[i + 1..] {
                moves.push(VintageVintage { vintage_a: a, vintage_b: b });
            }
        }
        for e in moves {
            let mut taken = Vec::new();
            let mut joined = Vec::new();
            match e {
                SingletonSameGroup { group } => taken.extend([group, group]),
                SingletonCrossGroup { group_a, group_b } => taken.extend([group_a, group_b]),
                SingletonVintage { group, vintage } => {
                    taken.push(group);
                    joined.push(vintage);
                }
                VintageVintage { vintage_a, vintage_b } => joined.extend([vintage_a, vintage_b]),
            }
            for &j in &taken {
                used[j] += 1;
            }
            for v in &joined {
                vintages.remove(v);
            }
            vintages.insert(r + 1);
            acc.push(e);
            rec(s, times, used, vintages, acc, out);
            acc.pop();
            vintages.remove(&(r + 1));
            for &v in &joined {
                vintages.insert(v);
            }
            for &j in &taken {
                used[j] -= 1;
            }
        }
    }
    let mut out = Vec::new();
    rec(s, times, &mut vec![0; s.m()], &mut BTreeSet::new(), &mut Vec::new(), &mut out);
    out
}

/// Every labeled ranked topology on `s`; leaf ids are group-major.
pub fn kingman_topologies(s: &SamplingSchedule, times: &[f64]) -> Vec<Vec<[Node; 2]>> {
    fn rec(
        s: &SamplingSchedule,
        times: &[f64],
        lineages: &mut BTreeSet<Node>,
        added: &mut Vec<bool>,
        acc: &mut Vec<[Node; 2]>,
        out: &mut Vec<Vec<[Node; 2]>>,
    ) {
        let r = acc.len();
        if r == times.len() {
            out.push(acc.clone());
            return;
        }
        let open = sampled_before(s, times[r]);
        let mut newly = Vec::new();
        for j in 0..s.m() {
            if open[j] && !added[j] {
                added[j] = true;
                newly.push(j);
                for l in 0..s.counts()[j] {
                    lineages.insert(Node::Leaf(s.leaf_offset(j) + l));
                }
            }
        }
        let ls: Vec<Node> = lineages.iter().copied().collect();
        for i in 0..ls.len() {
            for k in i + 1..ls.len() {
                let (a, b) = (ls[i], ls[k]);
                lineages.remove(&a);
                lineages.remove(&b);
                lineages.insert(Node::Vintage(r + 1));
                acc.push([a, b]);
                rec(s, times, lineages, added, acc, out);
                acc.pop();
                lineages.remove(&Node::Vintage(r + 1));
                lineages.insert(a);
                lineages.insert(b);
            }
        }
        for j in newly {
            added[j] = false;
            for l in 0..s.counts()[j] {
                lineages.remove(&Node::Leaf(s.leaf_offset(j) + l));
            }
        }
    }
    let mut out = Vec::new();
    rec(s, times, &mut BTreeSet::new(), &mut vec![false; s.m()], &mut Vec::new(), &mut out);
    out
}

/// Lineages present just before each event.
pub fn lineages_before(s: &SamplingSchedule, times: &[f64]) -> Vec<usize> {
    times
        .iter()
        .enumerate()
        .map(|(r, &t)| sampled_before(s, t).iter().zip(s.counts()).filter(|(o, _)| **o).map(|(_, c)| c).sum::<usize>() - r)
        .collect()
}

/// Prior probability of a labeled ranked topology: each event merges a
/// uniformly chosen pair of the lineages present.
pub fn kingman_topology_prob(s: &SamplingSchedule, times: &[f64]) -> f64 {
    lineages_before(s, times).iter().map(|&k| 2.0 / (k * (k - 1)) as f64).product()
}

pub fn labeled(s: &SamplingSchedule, times: &[f64], merges: Vec<[Node; 2]>) -> LabeledGenealogy {
    LabeledGenealogy::new(s.clone(), times.to_vec(), merges).unwrap()
}

fn subtree_nodes(t: &PerfectPhylogeny, v: usize, out: &mut Vec<usize>) {
    out.push(v);
    for &c in &t.node(v).children {
        subtree_nodes(t, c, out);
    }
}

/// All allocations by exhaustive search over maps from ranks to
/// non-singleton nodes. A map is an allocation when, for every such node,
/// the ranks it and its descendants own are exactly the vintages below the
/// highest of them and that vintage has the node's group counts. `None` when
/// the search space exceeds `limit`.
pub fn brute_allocations(t: &PerfectPhylogeny, g: &RankedGenealogy, limit: usize) -> Option<BTreeSet<Vec<usize>>> {
    let ns = t.non_singleton();
    let k = g.n() - 1;
    let size = (ns.len() as f64).powi(k as i32);
    if size > limit as f64 {
        return None;
    }
    let below: Vec<Vec<usize>> = ns
        .iter()
        .map(|&v| {
            let mut d = Vec::new();
            subtree_nodes(t, v, &mut d);
            d
        })
        .collect();
    let mut out = BTreeSet::new();
    let mut digits = vec![0usize; k];
    loop {
        let a: Vec<usize> = digits.iter().map(|&d| ns[d]).collect();
        let ok = ns.iter().zip(&below).all(|(&v, sub)| {
            let own: BTreeSet<usize> = (1..=k).filter(|&r| sub.contains(&a[r - 1])).collect();
            let Some(&top) = own.iter().next_back() else { return false };
            if a[top - 1] != v {
                return false;
            }
            let desc: BTreeSet<usize> = g.descendant_vintages(top).into_iter().collect();
            desc == own && g.group_counts(top) == t.node(v).group_counts.as_slice()
        });
        if ok {
            out.insert(a);
        }
        let mut i = 0;
        loop {
            if i == k {
                return Some(out);
            }
            digits[i] += 1;
            if digits[i] < ns.len() {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

/// Canonical string of a perfect phylogeny up to site and haplotype names.
pub fn tree_key(t: &PerfectPhylogeny) -> String {
    fn rec(t: &PerfectPhylogeny, v: usize) -> String {
        let n = t.node(v);
        let mut kids: Vec<String> = n.children.iter().map(|&c| rec(t, c)).collect();
        kids.sort();
        let leaf = n.leaf.map_or(String::new(), |l| format!("g{}x{}", l.group, n.size));
        format!("{}{}({})", n.edge_mutations(), leaf, kids.join(","))
    }
    rec(t, 0)
}

fn compositions(total: usize, parts: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if acc.len() + 1 == parts {
        acc.push(total);
        out.push(acc.clone());
        acc.pop();
        return;
    }
    for k in 0..=total {
        acc.push(k);
        compositions(total - k, parts, acc, out);
        acc.pop();
    }
}

/// Probability that Poisson mutations on `g` produce data equivalent to `t`,
/// summed over every per-branch mutation count.
pub fn placement_likelihood(t: &PerfectPhylogeny, g: &RankedGenealogy, mu: f64) -> f64 {
    let key = tree_key(t);
    let lens: Vec<f64> = g.branches().map(|b| g.branch_length(b)).collect();
    let mut all = Vec::new();
    compositions(t.z(), lens.len(), &mut Vec::new(), &mut all);
    let mut total = 0.0;
    for counts in all {
        let (y1, y2) = data_from_counts(g, &counts);
        let other = build_perfect_phylogeny(&y1, &y2, g.schedule()).unwrap();
        if tree_key(&other) == key {
            total += lens
                .iter()
                .zip(&counts)
                .map(|(&l, &k)| {
                    let x = mu * l;
                    x.powi(k as i32) * (-x).exp() / (1..=k).product::<usize>() as f64
                })
                .product::<f64>();
        }
    }
    total
}

/// Random schedule with up to three sampling times and `n` leaves in `lo..=hi`.
pub fn random_schedule(rng: &mut impl Rng, lo: usize, hi: usize) -> SamplingSchedule {
    let n = rng.gen_range(lo..=hi);
    let m = rng.gen_range(1..=3.min(n));
    let mut counts = vec![1; m];
    for _ in m..n {
        counts[rng.gen_range(0..m)] += 1;
    }
    let mut times = vec![0.0];
    for _ in 1..m {
        let last = *times.last().unwrap();
        times.push(last + rng.gen_range(0.05..0.5));
    }
    SamplingSchedule::new(times, counts).unwrap()
}

/// Data simulated on one genealogy, paired with that genealogy or an
/// independent one on the same schedule.
pub fn random_pair(seed: u64, lo: usize, hi: usize) -> (PerfectPhylogeny, RankedGenealogy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = random_schedule(&mut rng, lo, hi);
    let traj = Trajectory::constant(1.0);
    let mu = rng.gen_range(0.3..3.0);
    let d = simulate_dataset(&s, &traj, mu, &mut rng);
    let t = build_perfect_phylogeny(&d.y1, &d.y2, &s).unwrap();
    let g = if rng.gen_bool(0.5) { d.genealogy } else { sample_genealogy(&s, &traj, &mut rng) };
    (t, g)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}
