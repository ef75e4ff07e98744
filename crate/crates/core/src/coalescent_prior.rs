//! Law of the Tajima heterochronous coalescent: jump-chain transitions,
//! holding-time densities, the genealogy prior and exact simulation.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use thiserror::Error;

use crate::demographic::{GridField, Trajectory};
use crate::genealogy::{binom2, CoalescentEvent, GenealogyError, JumpChainState, Operand, RankedGenealogy, SamplingSchedule};

#[derive(Debug, Error, PartialEq)]
pub enum PriorError {
    #[error("malformed jump-chain states: {0}")]
    Malformed(String),
    #[error("fewer than two lineages at time {0}")]
    TooFewLineages(f64),
    #[error("holding interval is empty or reversed: ({0}, {1})")]
    BadInterval(f64, f64),
}

/// Log-probability of a single jump between coalescent states.
pub fn transition_logprob(before: &JumpChainState, after: &JumpChainState) -> Result<f64, PriorError> {
    if before.a.len() != after.a.len() {
        return Err(PriorError::Malformed("group counts differ in length".into()));
    }
    let k = before.lineages();
    if k < 2 {
        return Err(PriorError::Malformed("fewer than two lineages before the event".into()));
    }
    let added: Vec<_> = after.b.difference(&before.b).collect();
    let removed: Vec<_> = before.b.difference(&after.b).copied().collect();
    if added.len() != 1 || after.a.iter().zip(&before.a).any(|(x, y)| x > y) {
        return Ok(f64::NEG_INFINITY);
    }
    let used: Vec<(usize, usize)> =
        before.a.iter().zip(&after.a).enumerate().filter(|(_, (x, y))| x != y).map(|(g, (x, y))| (g, x - y)).collect();
    let singles: usize = used.iter().map(|&(_, d)| d).sum();
    if singles + removed.len() != 2 {
        return Ok(f64::NEG_INFINITY);
    }
    let ways = match (used.as_slice(), removed.len()) {
        ([(g, 2)], 0) => binom2(before.a[*g]),
        ([(g1, 1), (g2, 1)], 0) => (before.a[*g1] * before.a[*g2]) as f64,
        ([(g, 1)], 1) => before.a[*g] as f64,
        ([], 2) => 1.0,
        _ => return Ok(f64::NEG_INFINITY),
    };
    Ok(ways.ln() - binom2(k).ln())
}

/// Log-probability of the ranked tree shape (product of jump-chain transitions).
pub fn topology_logprob(g: &RankedGenealogy) -> f64 {
    let chain = g.jump_chain();
    let mut lp = 0.0;
    for w in chain.windows(2) {
        let (before, after) = (&w[0].1, &w[1].1);
        if after.lineages() < before.lineages() {
            lp += transition_logprob(before, after).expect("valid genealogy");
        }
    }
    lp
}

/// Log-density of the next coalescence at `t_next` given one at `t_prev`,
/// with `events_before` coalescences at or before `t_prev`.
pub fn holding_logdensity(
    t_prev: f64,
    t_next: f64,
    events_before: usize,
    schedule: &SamplingSchedule,
    traj: &Trajectory,
) -> Result<f64, PriorError> {
    if !(t_next > t_prev) || t_prev < 0.0 {
        return Err(PriorError::BadInterval(t_prev, t_next));
    }
    let lineages_at = |t: f64| schedule.sampled_by(t).saturating_sub(events_before);
    let end_lineages = lineages_at(t_next);
    if end_lineages < 2 {
        return Err(PriorError::TooFewLineages(t_next));
    }
    let mut exponent = 0.0;
    let mut lo = t_prev;
    for &s in schedule.times().iter().filter(|&&s| s > t_prev && s < t_next) {
        exponent += binom2(lineages_at(lo)) * traj.integral_unchecked(lo, s);
        lo = s;
    }
    exponent += binom2(lineages_at(lo)) * traj.integral_unchecked(lo, t_next);
    let ne = traj.evaluate(t_next).expect("nonnegative time");
    Ok(binom2(end_lineages).ln() - ne.ln() - exponent)
}

/// Log-density of the coalescent times given the topology.
pub fn times_logdensity(g: &RankedGenealogy, traj: &Trajectory) -> f64 {
    let mut lp = 0.0;
    for iv in g.interval_decomposition() {
        let c = iv.pairs();
        lp -= c * traj.integral_unchecked(iv.start, iv.end);
        if iv.ends_in_coalescence {
            lp += c.ln() - traj.evaluate(iv.end).expect("nonnegative time").ln();
        }
    }
    lp
}

/// `log π(g | s, n, N_e)`: topology term plus coalescent-time density.
pub fn genealogy_logprior(g: &RankedGenealogy, traj: &Trajectory) -> f64 {
    topology_logprob(g) + times_logdensity(g, traj)
}

/// Per-cell statistics of the time density on a grid: with `θ_b = log N_e`,
/// `times_logdensity = Σ ln C_k + Σ_b (-events_b θ_b - exposure_b e^{-θ_b})`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldStats {
    pub events: Vec<f64>,
    pub exposure: Vec<f64>,
    pub log_pairs: f64,
}

impl FieldStats {
    pub fn zeros(cells: usize) -> Self {
        FieldStats { events: vec![0.0; cells], exposure: vec![0.0; cells], log_pairs: 0.0 }
    }

    pub fn add(&mut self, g: &RankedGenealogy, grid: &GridField) {
        for iv in g.interval_decomposition() {
            let c = iv.pairs();
            if c > 0.0 {
                let mut b = grid.cell_of(iv.start);
                let mut lo = iv.start;
                while lo < iv.end {
                    let (_, end) = grid.cell_bounds(b);
                    let hi = end.min(iv.end);
                    self.exposure[b] += c * (hi - lo);
                    lo = hi;
                    b += 1;
                }
            }
            if iv.ends_in_coalescence {
                self.events[grid.cell_of(iv.end)] += 1.0;
                self.log_pairs += c.ln();
            }
        }
    }

    pub fn of(g: &RankedGenealogy, grid: &GridField) -> Self {
        let mut s = Self::zeros(grid.cells());
        s.add(g, grid);
        s
    }

    pub fn loglik(&self, theta: &[f64]) -> f64 {
        let mut lp = self.log_pairs;
        for ((d, a), th) in self.events.iter().zip(&self.exposure).zip(theta) {
            lp -= d * th + a * (-th).exp();
        }
        lp
    }

    /// Gradient of `loglik` with respect to `θ`.
    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.events.iter().zip(&self.exposure).zip(theta).map(|((d, a), th)| -d + a * (-th).exp()).collect()
    }
}

/// Exact draw from the heterochronous Tajima coalescent.
pub fn sample_genealogy<R: Rng + ?Sized>(schedule: &SamplingSchedule, traj: &Trajectory, rng: &mut R) -> RankedGenealogy {
    try_sample(schedule, traj, rng).expect("simulated genealogies are valid")
}

fn try_sample<R: Rng + ?Sized>(schedule: &SamplingSchedule, traj: &Trajectory, rng: &mut R) -> Result<RankedGenealogy, GenealogyError> {
    let n = schedule.total();
    let s = schedule.times();
    let mut a = vec![0usize; schedule.m()];
    a[0] = schedule.counts()[0];
    let mut b: Vec<usize> = Vec::new();
    let mut next_group = 1;
    let mut t = 0.0;
    let mut times = Vec::with_capacity(n - 1);
    let mut events = Vec::with_capacity(n - 1);
    for rank in 1..n {
        loop {
            let k = a.iter().sum::<usize>() + b.len();
            let next_s = s.get(next_group).copied().unwrap_or(f64::INFINITY);
            let cand = if k >= 2 {
                let e: f64 = Exp1.sample(rng);
                traj.solve_integral(t, e / binom2(k))
            } else {
                f64::INFINITY
            };
            if cand >= next_s {
                t = next_s;
                a[next_group] += schedule.counts()[next_group];
                next_group += 1;
                continue;
            }
            t = if times.last().map_or(cand > 0.0, |&p| cand > p) { cand } else { t.next_up() };
            break;
        }
        let k = a.iter().sum::<usize>() + b.len();
        let i = rng.gen_range(0..k);
        let mut j = rng.gen_range(0..k - 1);
        if j >= i {
            j += 1;
        }
        let op_at = |idx: usize| -> Operand {
            let mut rest = idx;
            for (g, &c) in a.iter().enumerate() {
                if rest < c {
                    return Operand::Singleton(g);
                }
                rest -= c;
            }
            Operand::Vintage(b[rest])
        };
        let (x, y) = (op_at(i), op_at(j));
        for op in [x, y] {
            match op {
                Operand::Singleton(g) => a[g] -= 1,
                Operand::Vintage(v) => b.retain(|&w| w != v),
            }
        }
        b.push(rank);
        times.push(t);
        events.push(CoalescentEvent::from_operands(x, y));
    }
    RankedGenealogy::new(schedule.clone(), times, events)
}
