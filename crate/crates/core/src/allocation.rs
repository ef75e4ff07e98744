//! Mappings of non-singleton perfect-phylogeny nodes to subtrees of a genealogy.
//!
//! Entry `i - 1` of a row names the node owning vintage `i`. The vintages
//! owned by `V` form a connected region whose top is the vintage `V` is
//! mapped to; child nodes own nested, disjoint subtrees below it.

use std::collections::BTreeMap;
use std::io::Write;

use thiserror::Error;

use crate::genealogy::RankedGenealogy;
use crate::ism_data::PerfectPhylogeny;

pub const DEFAULT_ROW_CAP: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum AllocationError {
    #[error("perfect phylogeny and genealogy use different sampling schedules")]
    ScheduleMismatch,
    #[error("more than {0} allocations")]
    CapExceeded(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AllocationMatrix {
    rows: Vec<Vec<usize>>,
}

impl AllocationMatrix {
    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Vintage that `v` is mapped to in `row`: the largest rank it owns.
    pub fn top(row: &[usize], v: usize) -> Option<usize> {
        row.iter().rposition(|&x| x == v).map(|i| i + 1)
    }

    /// One line per allocation, one column per rank.
    pub fn write_csv<W: Write>(&self, w: W, n: usize) -> Result<(), AllocationError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record((1..n).map(|r| format!("rank{r}")))?;
        for row in &self.rows {
            wr.write_record(row.iter().map(|v| format!("V{v}")))?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Enumerates every allocation of `t` to `g`, refusing to hold more than `cap` rows.
///
/// Top-down over ranks: the node currently owning vintage `i` either keeps it
/// or hands the whole subtree of `i` to one of its children of matching size.
pub fn enumerate_allocations(t: &PerfectPhylogeny, g: &RankedGenealogy, cap: usize) -> Result<AllocationMatrix, AllocationError> {
    if t.schedule() != g.schedule() {
        return Err(AllocationError::ScheduleMismatch);
    }
    let n = g.n();
    if n < 2 {
        return Ok(AllocationMatrix { rows: vec![Vec::new()] });
    }
    let subtree: Vec<Vec<usize>> = std::iter::once(Vec::new()).chain((1..n).map(|v| g.descendant_vintages(v))).collect();
    let mut rows = vec![vec![0usize; n - 1]];
    for i in (1..n - 1).rev() {
        let size = g.leaf_count(i);
        let mut owners: Vec<usize> = rows.iter().map(|r| r[i - 1]).collect();
        owners.sort_unstable();
        owners.dedup();
        for v in owners {
            let nd = t.node(v);
            let mut targets: Vec<usize> = nd.children.iter().copied().filter(|&c| !t.is_singleton(c) && t.node(c).size == size).collect();
            if nd.children.len() > 2 {
                targets.push(v);
            }
            if targets.is_empty() {
                continue;
            }
            let (hit, rest): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| r[i - 1] == v);
            rows = rest;
            for &w in &targets {
                for r in &hit {
                    let mut r = r.clone();
                    if w != v {
                        for &j in &subtree[i] {
                            r[j - 1] = w;
                        }
                    }
                    rows.push(r);
                }
            }
            if rows.len() > cap {
                return Err(AllocationError::CapExceeded(cap));
            }
        }
        // Columns i..n-1 are final from here on.
        rows.retain(|r| admissible(t, g, r, i));
    }
    rows.retain(|r| complete(t, r));
    rows.sort();
    Ok(AllocationMatrix { rows })
}

/// Prunes rows whose settled columns (ranks >= `from`) already break a rule.
fn admissible(t: &PerfectPhylogeny, g: &RankedGenealogy, row: &[usize], from: usize) -> bool {
    let mut used: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in &row[from - 1..] {
        *used.entry(v).or_default() += 1;
    }
    if used.iter().any(|(&v, &k)| k > t.multiplicity(v)) {
        return false;
    }
    // A node entering at rank i must match the sampling groups of subtree i.
    let i = from;
    let v = row[i - 1];
    let entering = match g.parent(i) {
        Some(p) => row[p - 1] != v,
        None => true,
    };
    !entering || g.group_counts(i) == t.node(v).group_counts.as_slice()
}

fn complete(t: &PerfectPhylogeny, row: &[usize]) -> bool {
    let mut used: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in row {
        *used.entry(v).or_default() += 1;
    }
    t.non_singleton().into_iter().all(|v| used.get(&v).copied().unwrap_or(0) == t.multiplicity(v))
}

/// Singleton children of a node split by sampling group and then by mutation count.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SingletonPartition {
    /// `(group, [(mutations, how many edges)])`, groups ascending, counts ascending.
    pub blocks: Vec<(usize, Vec<(usize, usize)>)>,
}

impl SingletonPartition {
    /// `k_j` per group.
    pub fn group_sizes(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().map(|(g, b)| (*g, b.iter().map(|x| x.1).sum())).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

pub fn singleton_edge_partition(t: &PerfectPhylogeny, v: usize) -> SingletonPartition {
    let mut by: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (g, e) in t.singleton_children(v) {
        *by.entry(g).or_default().entry(e).or_default() += 1;
    }
    SingletonPartition { blocks: by.into_iter().map(|(g, b)| (g, b.into_iter().collect())).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genealogy::tests::fig6_g;
    use crate::genealogy::CoalescentEvent;
    use crate::genealogy::SamplingSchedule;
    use crate::ism_data::tests::fig4;
    use crate::ism_data::{build_perfect_phylogeny, FrequencyMatrix, IncidenceMatrix};

    fn fig4_tree() -> PerfectPhylogeny {
        let (y1, y2, s) = fig4();
        build_perfect_phylogeny(&y1, &y2, &s).unwrap()
    }

    #[test]
    fn worked_example_allocations() {
        let t = fig4_tree();
        let g = fig6_g();
        let a = enumerate_allocations(&t, &g, DEFAULT_ROW_CAP).unwrap();
        let a1 = vec![2, 5, 1, 5, 0, 1, 0, 0, 0];
        let a2 = vec![5, 2, 5, 1, 1, 0, 0, 0, 0];
        assert_eq!(a.rows(), &[a1.clone(), a2][..]);

        // Exchanging the singleton offspring of ranks 3 and 6 leaves a single
        // subtree with three leaves from the first group, and only the first row.
        let mut ev = g.events().to_vec();
        ev[2] = CoalescentEvent::SingletonVintage { group: 1, vintage: 1 };
        ev[5] = CoalescentEvent::SingletonVintage { group: 0, vintage: 3 };
        let h = RankedGenealogy::new(g.schedule().clone(), g.times().to_vec(), ev).unwrap();
        assert_eq!(enumerate_allocations(&t, &h, DEFAULT_ROW_CAP).unwrap().rows(), &[a1][..]);
    }

    #[test]
    fn star_has_single_row() {
        let y1 = IncidenceMatrix::from_rows(vec![vec![]]).unwrap();
        let y2 = FrequencyMatrix::new(vec![vec![6]]).unwrap();
        let s = y2.schedule(vec![0.0]).unwrap();
        let t = build_perfect_phylogeny(&y1, &y2, &s).unwrap();
        let g = crate::coalescent_prior::sample_genealogy(
            &s,
            &crate::demographic::Trajectory::constant(1.0),
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3),
        );
        assert_eq!(enumerate_allocations(&t, &g, DEFAULT_ROW_CAP).unwrap().rows(), &[vec![0; 5]][..]);
    }

    #[test]
    fn cap_and_schedule_errors() {
        let t = fig4_tree();
        let g = fig6_g();
        assert!(matches!(enumerate_allocations(&t, &g, 1), Err(AllocationError::CapExceeded(1))));
        let y1 = IncidenceMatrix::from_rows(vec![vec![]]).unwrap();
        let y2 = FrequencyMatrix::new(vec![vec![10]]).unwrap();
        let iso = SamplingSchedule::isochronous(10).unwrap();
        let t_iso = build_perfect_phylogeny(&y1, &y2, &iso).unwrap();
        assert!(matches!(enumerate_allocations(&t_iso, &g, 10), Err(AllocationError::ScheduleMismatch)));
    }

    #[test]
    fn partitions() {
        let t = fig4_tree();
        // V1 carries E1 plus the two unlabeled edges of haplotype C.
        let p = singleton_edge_partition(&t, 1);
        assert_eq!(p.blocks, vec![(0, vec![(0, 1)]), (1, vec![(0, 1)])]);
        assert_eq!(t.node(1).edge_mutations(), 1);
        assert!(singleton_edge_partition(&t, 5).is_empty());
        let p0 = singleton_edge_partition(&t, 0);
        assert_eq!(p0.group_sizes(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn csv_dump() {
        let t = fig4_tree();
        let g = fig6_g();
        let a = enumerate_allocations(&t, &g, DEFAULT_ROW_CAP).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&mut buf, 10).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "rank1,rank2,rank3,rank4,rank5,rank6,rank7,rank8,rank9");
        assert_eq!(text.lines().nth(1).unwrap(), "V2,V5,V1,V5,V0,V1,V0,V0,V0");
    }
}
