//! Forward simulation of genealogies and infinite-sites data, and the
//! frequency oracle that checks likelihoods against simulated datasets.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::coalescent_prior::sample_genealogy;
use crate::counting::Resolution;
use crate::demographic::Trajectory;
use crate::genealogy::{LabeledGenealogy, Node, RankedGenealogy, SamplingSchedule};
use crate::ism_data::{build_perfect_phylogeny, FrequencyMatrix, IncidenceMatrix};
use crate::likelihood::{kingman_loglik, tajima_loglik, LabeledData};

#[derive(Clone, Debug)]
pub struct SimulatedData {
    pub genealogy: RankedGenealogy,
    pub y1: IncidenceMatrix,
    pub y2: FrequencyMatrix,
    /// Mutations per branch, in [`RankedGenealogy::branches`] order.
    pub branch_counts: Vec<usize>,
    pub mutations: usize,
}

/// Draws `M ~ Poisson(μL)` mutations and drops them on branches with
/// probability proportional to length.
pub fn place_mutations<R: Rng + ?Sized>(g: &RankedGenealogy, mutations: usize, rng: &mut R) -> Vec<usize> {
    let lens: Vec<f64> = g.branches().map(|b| g.branch_length(b)).collect();
    let total: f64 = lens.iter().sum();
    let mut counts = vec![0usize; lens.len()];
    for _ in 0..mutations {
        let mut u = rng.gen::<f64>() * total;
        let mut pick = lens.len() - 1;
        for (i, &l) in lens.iter().enumerate() {
            if u < l {
                pick = i;
                break;
            }
            u -= l;
        }
        counts[pick] += 1;
    }
    counts
}

/// Haplotypes and their per-group counts implied by mutations on `g`.
pub fn data_from_counts(g: &RankedGenealogy, counts: &[usize]) -> (IncidenceMatrix, FrequencyMatrix) {
    let n = g.n();
    let mut seqs = vec![Vec::new(); n];
    for (b, &k) in g.branches().zip(counts) {
        let below = match b {
            Node::Leaf(l) => vec![l],
            Node::Vintage(v) => g.descendant_leaves(v),
        };
        for _ in 0..k {
            for (l, seq) in seqs.iter_mut().enumerate() {
                seq.push(u8::from(below.contains(&l)));
            }
        }
    }
    let m = g.schedule().m();
    let mut rows: Vec<Vec<u8>> = Vec::new();
    let mut freq: Vec<Vec<usize>> = Vec::new();
    for (l, seq) in seqs.into_iter().enumerate() {
        let h = match rows.iter().position(|r| *r == seq) {
            Some(h) => h,
            None => {
                rows.push(seq);
                freq.push(vec![0; m]);
                rows.len() - 1
            }
        };
        freq[h][g.leaf_group(l)] += 1;
    }
    (IncidenceMatrix::from_rows(rows).expect("distinct rows"), FrequencyMatrix::new(freq).expect("every haplotype observed"))
}

pub fn simulate_dataset<R: Rng + ?Sized>(schedule: &SamplingSchedule, traj: &Trajectory, mu: f64, rng: &mut R) -> SimulatedData {
    let genealogy = sample_genealogy(schedule, traj, rng);
    let rate = mu * genealogy.tree_length();
    let mutations = if rate > 0.0 { Poisson::new(rate).expect("positive rate").sample(rng) as usize } else { 0 };
    let branch_counts = place_mutations(&genealogy, mutations, rng);
    let (y1, y2) = data_from_counts(&genealogy, &branch_counts);
    SimulatedData { genealogy, y1, y2, branch_counts, mutations }
}

/// Canonical form of the unlabeled dataset produced by `counts` on `g`:
/// mutation-free internal branches are contracted and siblings sorted.
pub fn unlabeled_key(g: &RankedGenealogy, counts: &[usize]) -> String {
    let n = g.n();
    let count_of = |b: Node| match b {
        Node::Leaf(l) => counts[l],
        Node::Vintage(v) => counts[n + v - 1],
    };
    fn items(g: &RankedGenealogy, v: usize, count_of: &dyn Fn(Node) -> usize) -> Vec<String> {
        let mut out = Vec::new();
        for c in g.children(v) {
            let e = count_of(c);
            match c {
                Node::Leaf(l) => out.push(format!("{e}.g{}", g.leaf_group(l))),
                Node::Vintage(w) if e == 0 => out.extend(items(g, w, count_of)),
                Node::Vintage(w) => {
                    let mut inner = items(g, w, count_of);
                    inner.sort();
                    out.push(format!("{e}[{}]", inner.join(",")));
                }
            }
        }
        out
    }
    let mut top = items(g, g.root(), &count_of);
    top.sort();
    top.join(",")
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub resolution: Resolution,
    pub draws: usize,
    pub mutations: usize,
    pub distinct: usize,
    pub retained: usize,
    /// Mean and variance of normalized likelihood over empirical frequency.
    pub mean_ratio: f64,
    pub var_ratio: f64,
}

/// Distinct datasets from `draws` placements of `mutations` mutations on `g`,
/// with frequency and one representative placement each.
pub fn frequency_oracle<R: Rng + ?Sized>(
    g: &RankedGenealogy,
    mutations: usize,
    draws: usize,
    resolution: Resolution,
    rng: &mut R,
) -> Vec<(f64, Vec<usize>)> {
    let mut seen: HashMap<String, (usize, Vec<usize>)> = HashMap::new();
    for _ in 0..draws {
        let c = place_mutations(g, mutations, rng);
        let key = match resolution {
            Resolution::Tajima => unlabeled_key(g, &c),
            Resolution::Kingman => format!("{c:?}"),
        };
        seen.entry(key).or_insert_with(|| (0, c)).0 += 1;
    }
    let mut out: Vec<(f64, Vec<usize>)> = seen.into_values().map(|(k, c)| (k as f64 / draws as f64, c)).collect();
    out.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    out
}

/// Compares likelihoods conditional on the mutation count with empirical
/// frequencies, keeping datasets seen at least `floor` times.
pub fn validate_likelihood<R: Rng + ?Sized>(
    g: &RankedGenealogy,
    mutations: usize,
    draws: usize,
    floor: usize,
    resolution: Resolution,
    rng: &mut R,
) -> OracleReport {
    let dist = frequency_oracle(g, mutations, draws, resolution, rng);
    let distinct = dist.len();
    let len = g.tree_length();
    // ln Poisson(M; L) at unit rate.
    let log_pois = mutations as f64 * len.ln() - len - (1..=mutations).map(|i| (i as f64).ln()).sum::<f64>();
    let ratios: Vec<f64> = dist
        .iter()
        .filter(|(f, _)| (f * draws as f64).round() as usize >= floor)
        .map(|(f, c)| {
            let ll = match resolution {
                Resolution::Tajima => {
                    let (y1, y2) = data_from_counts(g, c);
                    let t = build_perfect_phylogeny(&y1, &y2, g.schedule()).expect("simulated data obey the ISM");
                    tajima_loglik(&t, g, 1.0).expect("allocation within cap")
                }
                Resolution::Kingman => {
                    let (y, lg) = labeled_view(g, c);
                    kingman_loglik(&y, &lg, 1.0).expect("labels agree")
                }
            };
            (ll - log_pois).exp() / f
        })
        .collect();
    let k = ratios.len().max(1) as f64;
    let mean = ratios.iter().sum::<f64>() / k;
    let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / k;
    OracleReport { resolution, draws, mutations, distinct, retained: ratios.len(), mean_ratio: mean, var_ratio: var }
}

/// `g` with its leaf ids taken as sequence labels, and the labeled data of `counts`.
pub fn labeled_view(g: &RankedGenealogy, counts: &[usize]) -> (LabeledData, LabeledGenealogy) {
    let merges: Vec<[Node; 2]> = (1..g.n()).map(|v| g.children(v)).collect();
    let lg = LabeledGenealogy::new(g.schedule().clone(), g.times().to_vec(), merges).expect("same tree");
    let mut carriers = Vec::new();
    for (b, &k) in g.branches().zip(counts) {
        let below = match b {
            Node::Leaf(l) => vec![l],
            Node::Vintage(v) => g.descendant_leaves(v),
        };
        for _ in 0..k {
            carriers.push(below.clone());
        }
    }
    (LabeledData { schedule: g.schedule().clone(), carriers }, lg)
}

/// Sampling designs of the likelihood validation runs.
pub fn oracle_preset(name: &str) -> Option<SamplingSchedule> {
    let (times, counts) = match name {
        "supp-a" => (vec![0.0, 0.2], vec![3, 2]),
        "supp-b" => (vec![0.0, 0.15, 0.3], vec![2, 2, 2]),
        "supp-c" => (vec![0.0, 0.1, 0.2, 0.3, 0.4], vec![2, 2, 2, 2, 2]),
        _ => return None,
    };
    Some(SamplingSchedule::new(times, counts).expect("valid preset"))
}

pub const ORACLE_PRESETS: [&str; 3] = ["supp-a", "supp-b", "supp-c"];
pub const ORACLE_MUTATION_COUNTS: [usize; 4] = [1, 2, 4, 6];

/// One validation run per mutation count and replicate, each on a fresh
/// genealogy drawn under constant `N_e = 1`.
pub fn validate_schedule<R: Rng + ?Sized>(
    schedule: &SamplingSchedule,
    replicates: usize,
    draws: usize,
    floor: usize,
    resolution: Resolution,
    rng: &mut R,
) -> Vec<OracleReport> {
    let traj = Trajectory::constant(1.0);
    let mut out = Vec::new();
    for &m in &ORACLE_MUTATION_COUNTS {
        for _ in 0..replicates {
            let g = sample_genealogy(schedule, &traj, rng);
            out.push(validate_likelihood(&g, m, draws, floor, resolution, rng));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ism_data::check_ism;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_gives_one_haplotype() {
        let s = SamplingSchedule::new(vec![0.0, 0.2], vec![3, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = simulate_dataset(&s, &Trajectory::constant(1.0), 0.0, &mut rng);
        assert_eq!((d.y1.k(), d.y1.z(), d.mutations), (1, 0, 0));
        assert_eq!(d.y2.counts(), &[vec![3, 2]]);
    }

    #[test]
    fn simulated_data_round_trip() {
        let s = SamplingSchedule::new(vec![0.0, 0.4, 0.6], vec![8, 3, 3]).unwrap();
        let traj = Trajectory::scenario("drop").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let d = simulate_dataset(&s, &traj, 12.0, &mut rng);
            assert!(check_ism(&d.y1).is_ok());
            assert_eq!(d.y1.z(), d.mutations);
            let t = build_perfect_phylogeny(&d.y1, &d.y2, &s).unwrap();
            assert_eq!(t.to_matrices(), (d.y1.clone(), d.y2.clone()));
            assert!(tajima_loglik(&t, &d.genealogy, 12.0).unwrap().is_finite());
        }
    }

    #[test]
    fn mean_mutation_count() {
        let s = SamplingSchedule::new(vec![0.0, 0.2], vec![3, 2]).unwrap();
        let traj = Trajectory::constant(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reps = 10_000;
        let (mut sm, mut sl) = (Vec::new(), Vec::new());
        for _ in 0..reps {
            let d = simulate_dataset(&s, &traj, 2.0, &mut rng);
            sm.push(d.mutations as f64);
            sl.push(2.0 * d.genealogy.tree_length());
        }
        let diff: Vec<f64> = sm.iter().zip(&sl).map(|(a, b)| a - b).collect();
        let mean = diff.iter().sum::<f64>() / reps as f64;
        let sd = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!(mean.abs() < 3.0 * sd / (reps as f64).sqrt(), "{mean} {sd}");
    }

    #[test]
    fn two_leaf_tree_has_two_datasets() {
        let s = SamplingSchedule::new(vec![0.0, 0.5], vec![1, 1]).unwrap();
        let g = RankedGenealogy::new(s, vec![1.0], vec![crate::genealogy::CoalescentEvent::SingletonCrossGroup { group_a: 0, group_b: 1 }])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dist = frequency_oracle(&g, 1, 60_000, Resolution::Tajima, &mut rng);
        assert_eq!(dist.len(), 2);
        // Branch lengths 1.0 and 0.5.
        assert!((dist[0].0 - 2.0 / 3.0).abs() < 0.01);
        let rep = validate_likelihood(&g, 1, 60_000, 10, Resolution::Tajima, &mut rng);
        assert!((rep.mean_ratio - 1.0).abs() < 0.02, "{rep:?}");
    }

    #[test]
    fn keys_ignore_sibling_order() {
        let s = SamplingSchedule::isochronous(3).unwrap();
        use crate::genealogy::CoalescentEvent::*;
        let g = RankedGenealogy::new(s, vec![0.5, 1.0], vec![SingletonSameGroup { group: 0 }, SingletonVintage { group: 0, vintage: 1 }])
            .unwrap();
        // Branches: leaves 0..3, then vintage 1.
        let leaves_below_1 = g.descendant_leaves(1);
        let mut a = vec![0; 4];
        let mut b = vec![0; 4];
        a[leaves_below_1[0]] = 1;
        b[leaves_below_1[1]] = 1;
        assert_eq!(unlabeled_key(&g, &a), unlabeled_key(&g, &b));
        // A mutation-free cherry is contracted, so any single leaf mutation
        // yields the same data; one on the cherry branch does not.
        let outside = (0..3).find(|l| !leaves_below_1.contains(l)).unwrap();
        let mut d = vec![0; 4];
        d[outside] = 1;
        assert_eq!(unlabeled_key(&g, &a), unlabeled_key(&g, &d));
        let c = vec![0, 0, 0, 1];
        assert_ne!(unlabeled_key(&g, &a), unlabeled_key(&g, &c));
    }
}
