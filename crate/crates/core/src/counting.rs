//! Sequential importance sampling over topologies compatible with the data.
//!
//! Each non-singleton node of the perfect phylogeny owns a pool of units:
//! its singleton children, the lineages of its completed non-singleton
//! children, and the lineages it has already formed itself. A merge always
//! joins two units of the same pool; once a node has performed
//! `multiplicity` merges its last lineage moves to the parent's pool.
//! Singletons of group `g` become usable only after `add[g]` events.

use rand::Rng;
use serde::Serialize;

use crate::allocation::enumerate_allocations;
use crate::genealogy::{CoalescentEvent, Node, Operand, RankedGenealogy, SamplingSchedule, TIME_TOL};
use crate::ism_data::PerfectPhylogeny;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// Unlabeled ranked tree shapes.
    Tajima,
    /// Labeled ranked trees.
    Kingman,
}

impl std::str::FromStr for Resolution {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tajima" => Ok(Resolution::Tajima),
            "kingman" => Ok(Resolution::Kingman),
            _ => Err(format!("unknown resolution '{s}'")),
        }
    }
}

/// One compatible topology drawn by the sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct SisDraw {
    pub events: Vec<CoalescentEvent>,
    /// The same tree with sequence labels (see [`sequence_labels`]).
    pub merges: Vec<[Node; 2]>,
    /// Perfect-phylogeny node owning each vintage.
    pub allocation: Vec<usize>,
    /// Log-probability of the sampled path.
    pub log_q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountEstimate {
    pub resolution: Resolution,
    pub estimate: f64,
    pub stderr: f64,
    #[serde(rename = "N")]
    pub n: usize,
    /// Draws that produced a compatible topology.
    pub compatible: usize,
    /// Coefficient of variation of the importance weights.
    pub cv: f64,
}

/// Perfect-phylogeny leaf behind each sequence label. Labels are group-major
/// (as in [`SamplingSchedule::leaf_group`]); within a group they follow node ids.
pub fn sequence_labels(t: &PerfectPhylogeny) -> Vec<usize> {
    let sched = t.schedule();
    let mut next: Vec<usize> = (0..sched.m()).map(|g| sched.leaf_offset(g)).collect();
    let mut out = vec![usize::MAX; sched.total()];
    for (v, nd) in t.nodes().iter().enumerate() {
        if let Some(l) = nd.leaf {
            for _ in 0..nd.size {
                out[next[l.group]] = v;
                next[l.group] += 1;
            }
        }
    }
    out
}

struct Pool {
    single: Vec<Vec<usize>>,
    lineages: Vec<usize>,
    merges_left: usize,
}

enum Move {
    SameGroup(usize),
    CrossGroup(usize, usize),
    SingleLineage(usize, usize),
    TwoLineages(usize, usize),
}

fn choose_two<R: Rng + ?Sized>(len: usize, rng: &mut R) -> (usize, usize) {
    let i = rng.gen_range(0..len);
    let mut j = rng.gen_range(0..len - 1);
    if j >= i {
        j += 1;
    }
    (i.max(j), i.min(j))
}

/// Draws a topology compatible with `t` in which exactly `add[g]` events
/// precede the sampling of group `g`; `None` when the placement is infeasible.
pub fn sample_compatible_topology<R: Rng + ?Sized>(
    t: &PerfectPhylogeny,
    add: &[usize],
    resolution: Resolution,
    rng: &mut R,
) -> Option<SisDraw> {
    let sched = t.schedule();
    let m = sched.m();
    let n = sched.total();
    assert_eq!(add.len(), m, "placement vector length");
    let labels = sequence_labels(t);
    let mut pools: Vec<Option<Pool>> = (0..t.len())
        .map(|v| (!t.is_singleton(v)).then(|| Pool { single: vec![Vec::new(); m], lineages: Vec::new(), merges_left: t.multiplicity(v) }))
        .collect();
    for (leaf, &v) in labels.iter().enumerate() {
        let owner = if t.is_singleton(v) { t.node(v).parent.expect("singleton below root") } else { v };
        let g = sched.leaf_group(leaf);
        pools[owner].as_mut().expect("owner is non-singleton").single[g].push(leaf);
    }

    let mut events = Vec::with_capacity(n - 1);
    let mut merges = Vec::with_capacity(n - 1);
    let mut allocation = Vec::with_capacity(n - 1);
    let mut log_q = 0.0;
    let mut moves: Vec<(usize, Move, f64)> = Vec::new();
    for rank in 1..n {
        moves.clear();
        let avail: Vec<bool> = add.iter().map(|&a| rank > a).collect();
        for (v, pool) in pools.iter().enumerate() {
            let Some(p) = pool else { continue };
            if p.merges_left == 0 {
                continue;
            }
            let cnt: Vec<usize> = (0..m).map(|g| if avail[g] { p.single[g].len() } else { 0 }).collect();
            let w = |k: usize| if resolution == Resolution::Kingman { k as f64 } else { 1.0 };
            for g in 0..m {
                if cnt[g] >= 2 {
                    moves.push((v, Move::SameGroup(g), w(cnt[g] * (cnt[g] - 1) / 2)));
                }
                if cnt[g] >= 1 {
                    for h in g + 1..m {
                        if cnt[h] >= 1 {
                            moves.push((v, Move::CrossGroup(g, h), w(cnt[g] * cnt[h])));
                        }
                    }
                    for i in 0..p.lineages.len() {
                        moves.push((v, Move::SingleLineage(g, i), w(cnt[g])));
                    }
                }
            }
            for i in 0..p.lineages.len() {
                for j in i + 1..p.lineages.len() {
                    moves.push((v, Move::TwoLineages(i, j), 1.0));
                }
            }
        }
        let total: f64 = moves.iter().map(|m| m.2).sum();
        if total == 0.0 {
            return None;
        }
        log_q -= total.ln();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = moves.len() - 1;
        for (i, mv) in moves.iter().enumerate() {
            if u < mv.2 {
                pick = i;
                break;
            }
            u -= mv.2;
        }
        let (v, ref mv, _) = moves[pick];
        let p = pools[v].as_mut().expect("chosen pool exists");
        let (x, y) = match *mv {
            Move::SameGroup(g) => {
                let (i, j) = choose_two(p.single[g].len(), rng);
                let a = p.single[g].swap_remove(i);
                let b = p.single[g].swap_remove(j);
                (Node::Leaf(a), Node::Leaf(b))
            }
            Move::CrossGroup(g, h) => {
                let (i, j) = (rng.gen_range(0..p.single[g].len()), rng.gen_range(0..p.single[h].len()));
                let a = p.single[g].swap_remove(i);
                let b = p.single[h].swap_remove(j);
                (Node::Leaf(a), Node::Leaf(b))
            }
            Move::SingleLineage(g, i) => {
                let k = rng.gen_range(0..p.single[g].len());
                let a = p.single[g].swap_remove(k);
                (Node::Leaf(a), Node::Vintage(p.lineages.swap_remove(i)))
            }
            Move::TwoLineages(i, j) => {
                let b = p.lineages.swap_remove(j);
                let a = p.lineages.swap_remove(i);
                (Node::Vintage(a), Node::Vintage(b))
            }
        };
        let op = |nd: Node| match nd {
            Node::Leaf(l) => Operand::Singleton(sched.leaf_group(l)),
            Node::Vintage(r) => Operand::Vintage(r),
        };
        events.push(CoalescentEvent::from_operands(op(x), op(y)));
        merges.push([x, y]);
        allocation.push(v);
        p.merges_left -= 1;
        if p.merges_left == 0 {
            if let Some(parent) = t.node(v).parent {
                pools[parent].as_mut().expect("parents are internal").lineages.push(rank);
            }
        } else {
            p.lineages.push(rank);
        }
    }
    Some(SisDraw { events, merges, allocation, log_q })
}

/// Number of coalescences strictly before each sampling time.
pub fn placement_of(times: &[f64], schedule: &SamplingSchedule) -> Vec<usize> {
    schedule.times().iter().map(|&s| times.iter().filter(|&&t| t < s - TIME_TOL).count()).collect()
}

/// Increasing times realizing a placement: events between consecutive
/// sampling times are spread evenly, events after the last one are `tail_step` apart.
pub fn placement_times(add: &[usize], schedule: &SamplingSchedule, tail_step: f64) -> Vec<f64> {
    let s = schedule.times();
    let n = schedule.total();
    let m = s.len();
    let mut out = Vec::with_capacity(n - 1);
    for j in 0..m {
        let lo = s[j];
        let upto = if j + 1 < m { add[j + 1] } else { n - 1 };
        let k = upto.saturating_sub(out.len());
        let step = if j + 1 < m { (s[j + 1] - lo) / (k + 1) as f64 } else { tail_step };
        for i in 1..=k {
            out.push(lo + i as f64 * step);
        }
    }
    out
}

/// Largest number of events that can precede each sampling time, by direct
/// recursion over the perfect phylogeny.
pub fn max_events_before(t: &PerfectPhylogeny) -> Vec<usize> {
    fn rec(t: &PerfectPhylogeny, v: usize, avail: &[bool]) -> (usize, bool) {
        let nd = t.node(v);
        if nd.is_leaf() {
            let ok = avail[nd.leaf.expect("leaf label").group];
            return if ok { (nd.size - 1, true) } else { (0, false) };
        }
        let (mut events, mut units, mut complete) = (0usize, 0usize, true);
        for &c in &nd.children {
            let (e, done) = rec(t, c, avail);
            events += e;
            if done {
                units += 1;
            } else {
                complete = false;
            }
        }
        (events + units.saturating_sub(1), complete)
    }
    let m = t.m();
    (0..m)
        .map(|i| {
            let avail: Vec<bool> = (0..m).map(|g| g < i).collect();
            if i == 0 {
                0
            } else {
                rec(t, 0, &avail).0
            }
        })
        .collect()
}

/// SIS estimate of the number of compatible topologies whose events fall
/// between the sampling times as `times` dictate.
pub fn estimate_count<R: Rng + ?Sized>(
    t: &PerfectPhylogeny,
    schedule: &SamplingSchedule,
    times: &[f64],
    resolution: Resolution,
    draws: usize,
    rng: &mut R,
) -> CountEstimate {
    assert!(draws >= 1, "need at least one draw");
    let add = placement_of(times, schedule);
    let (mut mean, mut m2, mut compatible) = (0.0f64, 0.0f64, 0usize);
    for i in 0..draws {
        let w = match sample_compatible_topology(t, &add, resolution, rng) {
            None => 0.0,
            Some(d) => {
                compatible += 1;
                match resolution {
                    Resolution::Kingman => (-d.log_q).exp(),
                    Resolution::Tajima => {
                        let g = RankedGenealogy::new(schedule.clone(), times.to_vec(), d.events)
                            .expect("sampled topology respects the placement");
                        let na = enumerate_allocations(t, &g, usize::MAX).map(|a| a.len()).unwrap_or(0);
                        debug_assert!(na >= 1);
                        (-d.log_q).exp() / na as f64
                    }
                }
            }
        };
        let delta = w - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (w - mean);
    }
    let var = if draws > 1 { m2 / (draws - 1) as f64 } else { 0.0 };
    let sd = var.sqrt();
    CountEstimate {
        resolution,
        estimate: mean,
        stderr: sd / (draws as f64).sqrt(),
        n: draws,
        compatible,
        cv: if mean > 0.0 { sd / mean } else { f64::NAN },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ism_data::tests::{fig4, random_dataset};
    use crate::ism_data::{build_perfect_phylogeny, compute_constraints, FrequencyMatrix, IncidenceMatrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn worked_example_placements() {
        let (y1, y2, s) = fig4();
        let t = build_perfect_phylogeny(&y1, &y2, &s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            assert!(sample_compatible_topology(&t, &[0, 6], Resolution::Tajima, &mut rng).is_none());
            let d = sample_compatible_topology(&t, &[0, 5], Resolution::Tajima, &mut rng).unwrap();
            let times = placement_times(&[0, 5], &s, 0.1);
            let g = RankedGenealogy::new(s.clone(), times, d.events).unwrap();
            assert_eq!(placement_of(g.times(), &s), vec![0, 5]);
        }
        assert_eq!(max_events_before(&t), vec![0, 5]);
    }

    #[test]
    fn star_proposal_is_uniform_merge_product() {
        let y1 = IncidenceMatrix::from_rows(vec![vec![]]).unwrap();
        let y2 = FrequencyMatrix::new(vec![vec![5]]).unwrap();
        let s = y2.schedule(vec![0.0]).unwrap();
        let t = build_perfect_phylogeny(&y1, &y2, &s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let d = sample_compatible_topology(&t, &[0], Resolution::Kingman, &mut rng).unwrap();
            // Labeled pairs: C(5,2) C(4,2) C(3,2) C(2,2).
            assert!((d.log_q + (10.0f64 * 6.0 * 3.0).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn alg3_matches_direct_recursion() {
        for seed in 0..300 {
            let (y1, y2, s) = random_dataset(seed, 9);
            let t = build_perfect_phylogeny(&y1, &y2, &s).unwrap();
            assert_eq!(compute_constraints(&t, &s).0, max_events_before(&t), "seed {seed}");
        }
    }

    #[test]
    fn placement_times_are_increasing_and_exact() {
        let s = SamplingSchedule::new(vec![0.0, 0.2, 0.5], vec![3, 2, 2]).unwrap();
        for add in [[0, 0, 0], [0, 2, 2], [0, 1, 4], [0, 2, 3]] {
            let t = placement_times(&add, &s, 0.05);
            assert_eq!(t.len(), 6);
            assert!(t.windows(2).all(|w| w[1] > w[0]));
            assert_eq!(placement_of(&t, &s), add.to_vec());
        }
    }
}
