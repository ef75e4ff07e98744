//! Metropolis-within-Gibbs sampler for `log N_e`, its precision, the
//! per-locus genealogies and optionally the mutation rate.
//!
//! The field `θ = log N_e` lives on a regular grid. Its prior is a Brownian
//! motion in which increments between neighbouring cells have variance
//! `h / τ` (`h` the cell width) and the first cell is diffuse.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::statistics::{Data, OrderStatistics};
use thiserror::Error;

use crate::allocation::{enumerate_allocations, AllocationError, AllocationMatrix};
use crate::coalescent_prior::{topology_logprob, FieldStats};
use crate::counting::{placement_times, sample_compatible_topology, Resolution};
use crate::demographic::{DemographicError, GridField};
use crate::diagnostics::Band;
use crate::genealogy::{swap_offspring, swap_ranks, CoalescentEvent, RankedGenealogy, SamplingSchedule};
use crate::ism_data::{compute_constraints, PerfectPhylogeny};
use crate::likelihood::{tajima_parts_with, LikelihoodParts};

#[derive(Debug, Error)]
pub enum McmcError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("initialization failed: {0}")]
    Init(String),
    #[error("non-finite field gradient in cell {0}")]
    Gradient(usize),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Demographic(#[from] DemographicError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MuPrior {
    Gamma { shape: f64, rate: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl MuPrior {
    fn logpdf(&self, mu: f64) -> f64 {
        match *self {
            MuPrior::Gamma { shape, rate } => (shape - 1.0) * mu.ln() - rate * mu,
            MuPrior::Uniform { lo, hi } => {
                if (lo..=hi).contains(&mu) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuConfig {
    /// Expected mutations per unit time over the whole locus.
    pub value: f64,
    pub estimate: bool,
    pub prior: MuPrior,
    /// Standard deviation of the log-scale random walk.
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub version: u32,
    /// HMC step size.
    pub epsilon: f64,
    /// Largest number of intercoalescence times moved per proposal.
    #[serde(rename = "Z")]
    pub z: usize,
    /// Relative spread of the time proposal.
    pub sigma: f64,
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Number of grid cells `B`.
    pub cells: usize,
    /// Grid horizon as a multiple of the initial tree height.
    pub horizon_factor: f64,
    pub tau_alpha: f64,
    pub tau_beta: f64,
    pub theta1_sd: f64,
    pub leapfrog_max: usize,
    pub mu: MuConfig,
    pub allocation_cap: usize,
    /// Ignore the data: the chain then targets the prior.
    pub prior_only: bool,
    /// Keep the field and precision at their initial values.
    pub fix_field: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            version: 1,
            epsilon: 0.07,
            z: 2,
            sigma: 0.02,
            iterations: 100_000,
            burnin: 20_000,
            thin: 100,
            seed: 1,
            cells: 100,
            horizon_factor: 1.2,
            tau_alpha: 0.01,
            tau_beta: 0.01,
            theta1_sd: 10.0,
            leapfrog_max: 10,
            mu: MuConfig { value: 1.0, estimate: false, prior: MuPrior::Gamma { shape: 1.0, rate: 0.01 }, step: 0.1 },
            allocation_cap: crate::allocation::DEFAULT_ROW_CAP,
            prior_only: false,
            fix_field: false,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), McmcError> {
        let bad = |m: &str| Err(McmcError::Config(m.to_string()));
        if self.version != 1 {
            return bad("unsupported config version");
        }
        if !(self.epsilon > 0.0) || !(self.sigma > 0.0) {
            return bad("epsilon and sigma must be positive");
        }
        if self.z < 1 || self.leapfrog_max < 1 || self.thin < 1 || self.cells < 2 {
            return bad("Z, leapfrog_max and thin must be at least 1 and cells at least 2");
        }
        if self.burnin >= self.iterations {
            return bad("burnin must be smaller than iterations");
        }
        if !(self.tau_alpha > 0.0 && self.tau_beta > 0.0 && self.theta1_sd > 0.0 && self.horizon_factor > 0.0) {
            return bad("hyperparameters must be positive");
        }
        if !(self.mu.value > 0.0) || (self.mu.estimate && !(self.mu.step > 0.0)) {
            return bad("mutation rate and its step must be positive");
        }
        if self.mu.estimate && self.mu.prior.logpdf(self.mu.value) == f64::NEG_INFINITY {
            return bad("initial mutation rate outside its prior support");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LocusState {
    pub data: PerfectPhylogeny,
    /// Largest number of coalescences before each sampling time.
    pub c: Vec<usize>,
    pub g: RankedGenealogy,
    alloc: AllocationMatrix,
    parts: LikelihoodParts,
    stats: FieldStats,
    pub topology_accepts: usize,
    pub time_accepts: usize,
}

impl LocusState {
    fn new(data: PerfectPhylogeny, c: Vec<usize>, g: RankedGenealogy, grid: &GridField, cap: usize) -> Result<Self, McmcError> {
        let alloc = enumerate_allocations(&data, &g, cap)?;
        let parts = tajima_parts_with(&data, &g, &alloc);
        let stats = FieldStats::of(&g, grid);
        Ok(LocusState { data, c, g, alloc, parts, stats, topology_accepts: 0, time_accepts: 0 })
    }

    pub fn parts(&self) -> &LikelihoodParts {
        &self.parts
    }
}

#[derive(Clone, Debug)]
pub struct ChainState {
    pub loci: Vec<LocusState>,
    pub grid: GridField,
    pub theta: Vec<f64>,
    /// Precision of the Brownian increments.
    pub tau: f64,
    pub mu: f64,
}

/// Brownian-motion prior on grid cells and the eigenbasis of its structure matrix.
#[derive(Clone, Debug)]
pub struct FieldPrior {
    width: f64,
    theta1_var: f64,
    basis: nalgebra::DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl FieldPrior {
    pub fn new(grid: &GridField, theta1_sd: f64) -> Self {
        let b = grid.cells();
        let width = grid.horizon() / b as f64;
        let mut r = nalgebra::DMatrix::<f64>::zeros(b, b);
        for i in 0..b - 1 {
            r[(i, i)] += 1.0 / width;
            r[(i + 1, i + 1)] += 1.0 / width;
            r[(i, i + 1)] -= 1.0 / width;
            r[(i + 1, i)] -= 1.0 / width;
        }
        let eig = nalgebra::SymmetricEigen::new(r);
        FieldPrior {
            width,
            theta1_var: theta1_sd * theta1_sd,
            eigenvalues: eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect(),
            basis: eig.eigenvectors,
        }
    }

    /// `θᵀRθ = Σ (θ_{b+1} − θ_b)² / h`.
    pub fn quad(&self, theta: &[f64]) -> f64 {
        theta.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / self.width
    }

    pub fn logpdf(&self, theta: &[f64], tau: f64) -> f64 {
        let b = theta.len() as f64;
        0.5 * (b - 1.0) * tau.ln() - 0.5 * tau * self.quad(theta) - 0.5 * theta[0] * theta[0] / self.theta1_var
    }
}

/// Field part of the log posterior: coalescent time densities plus prior.
pub fn field_log_target(stats: &FieldStats, prior: &FieldPrior, theta: &[f64], tau: f64) -> f64 {
    stats.loglik(theta) + prior.logpdf(theta, tau)
}

/// Gradient of [`field_log_target`] in `θ`.
pub fn field_gradient(stats: &FieldStats, prior: &FieldPrior, theta: &[f64], tau: f64) -> Vec<f64> {
    let mut g = stats.gradient(theta);
    let b = theta.len();
    for i in 0..b {
        let mut d = 0.0;
        if i > 0 {
            d += theta[i] - theta[i - 1];
        }
        if i + 1 < b {
            d -= theta[i + 1] - theta[i];
        }
        g[i] -= tau * d / prior.width;
    }
    g[0] -= theta[0] / prior.theta1_var;
    g
}

fn pooled_stats(loci: &[LocusState], cells: usize) -> FieldStats {
    let mut s = FieldStats::zeros(cells);
    for l in loci {
        for b in 0..cells {
            s.events[b] += l.stats.events[b];
            s.exposure[b] += l.stats.exposure[b];
        }
        s.log_pairs += l.stats.log_pairs;
    }
    s
}

/// Split HMC: the Gaussian part of the potential flows exactly in the
/// eigenbasis of `R`; the rest (time densities and the diffuse first cell)
/// is handled by half-step kicks. Returns the new field and the energy error.
pub fn hmc_field_step<R: Rng + ?Sized>(
    stats: &FieldStats,
    prior: &FieldPrior,
    theta: &[f64],
    tau: f64,
    epsilon: f64,
    steps: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, f64), McmcError> {
    let b = theta.len();
    let grad_u1 = |th: &[f64]| -> Result<Vec<f64>, McmcError> {
        let mut g: Vec<f64> = stats.gradient(th).iter().map(|x| -x).collect();
        g[0] += th[0] / prior.theta1_var;
        match g.iter().position(|x| !x.is_finite()) {
            Some(i) => Err(McmcError::Gradient(i)),
            None => Ok(g),
        }
    };
    let energy = |th: &[f64], p: &[f64]| -field_log_target(stats, prior, th, tau) + 0.5 * p.iter().map(|x| x * x).sum::<f64>();
    let mut th = nalgebra::DVector::from_column_slice(theta);
    let mut p = nalgebra::DVector::from_fn(b, |_, _| StandardNormal.sample(rng));
    let h0 = energy(th.as_slice(), p.as_slice());
    for _ in 0..steps {
        p -= nalgebra::DVector::from_vec(grad_u1(th.as_slice())?) * (0.5 * epsilon);
        let mut x = prior.basis.tr_mul(&th);
        let mut q = prior.basis.tr_mul(&p);
        for k in 0..b {
            let w = (tau * prior.eigenvalues[k]).sqrt();
            if w * epsilon < 1e-12 {
                x[k] += epsilon * q[k];
            } else {
                let (s, c) = (w * epsilon).sin_cos();
                let (xk, qk) = (x[k], q[k]);
                x[k] = xk * c + qk / w * s;
                q[k] = -xk * w * s + qk * c;
            }
        }
        th = &prior.basis * x;
        p = &prior.basis * q;
        p -= nalgebra::DVector::from_vec(grad_u1(th.as_slice())?) * (0.5 * epsilon);
    }
    let h1 = energy(th.as_slice(), p.as_slice());
    Ok((th.as_slice().to_vec(), h1 - h0))
}

/// Gibbs draw of the precision given the field.
pub fn draw_tau<R: Rng + ?Sized>(prior: &FieldPrior, theta: &[f64], alpha: f64, beta: f64, rng: &mut R) -> f64 {
    let shape = alpha + 0.5 * (theta.len() as f64 - 1.0);
    let rate = beta + 0.5 * prior.quad(theta);
    Gamma::new(shape, 1.0 / rate).expect("positive parameters").sample(rng)
}

/// `ln P(Z > a)` for a standard normal, accurate far into the tail.
fn ln_upper_tail(a: f64) -> f64 {
    if a < 30.0 {
        Normal::new(0.0, 1.0).expect("standard normal").sf(a).ln()
    } else {
        -0.5 * a * a - (a * (2.0 * std::f64::consts::PI).sqrt()).ln() + (1.0 - 1.0 / (a * a)).ln()
    }
}

fn truncnorm_logpdf(x: f64, mean: f64, sd: f64, lo: f64) -> f64 {
    if x < lo {
        return f64::NEG_INFINITY;
    }
    let z = (x - mean) / sd;
    -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln() - ln_upper_tail((lo - mean) / sd)
}

fn truncnorm_sample<R: Rng + ?Sized>(mean: f64, sd: f64, lo: f64, rng: &mut R) -> f64 {
    let a = (lo - mean) / sd;
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let z = if a < 30.0 {
        // Invert the upper tail so that mass far above the mean keeps precision.
        let tail = std.sf(a);
        let u: f64 = rng.gen_range(0.0..1.0);
        let z = -std.inverse_cdf((u * tail).max(f64::MIN_POSITIVE));
        z.max(a)
    } else {
        let e: f64 = rand_distr::Exp1.sample(rng);
        a + e / a
    };
    mean + sd * z
}

/// Lower bound for intercoalescence time `i` (1-based, `Δt_1 = t_1`): the
/// `(c_j + 1)`-th coalescence must not precede `s_j`.
pub fn time_lower_bound(dt: &[f64], i: usize, c: &[usize], s: &[f64]) -> f64 {
    let mut lo = 0.0f64;
    for (j, &cj) in c.iter().enumerate() {
        if i <= cj + 1 && cj < dt.len() {
            let tj: f64 = dt[..=cj].iter().sum();
            lo = lo.max(s[j] - (tj - dt[i - 1]));
        }
    }
    lo
}

/// Moves `|I| ~ U{1..Z}` intercoalescence times one at a time, each from a
/// normal truncated below at its current bound. The visiting order is
/// ascending or descending with equal probability; the reverse move visits in
/// the opposite order, so it passes through the same valid intermediate
/// states. Returns the new times and the log Hastings ratio.
pub fn propose_times<R: Rng + ?Sized>(
    times: &[f64],
    c: &[usize],
    schedule: &SamplingSchedule,
    z: usize,
    sigma: f64,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let k = times.len();
    let s = schedule.times();
    let mut dt: Vec<f64> = std::iter::once(times[0]).chain(times.windows(2).map(|w| w[1] - w[0])).collect();
    let size = rng.gen_range(1..=z.min(k));
    let mut idx = sample_indices(rng, k, size).into_vec();
    idx.sort_unstable();
    if rng.gen::<bool>() {
        idx.reverse();
    }
    let old = dt.clone();
    let mut forward = 0.0;
    for &i in &idx {
        let lo = time_lower_bound(&dt, i + 1, c, s);
        let x = truncnorm_sample(old[i], sigma * old[i], lo, rng);
        forward += truncnorm_logpdf(x, old[i], sigma * old[i], lo);
        dt[i] = x;
    }
    if dt.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return (times.to_vec(), f64::NEG_INFINITY);
    }
    let new = dt.clone();
    let mut back = new.clone();
    let mut reverse = 0.0;
    for &i in idx.iter().rev() {
        let lo = time_lower_bound(&back, i + 1, c, s);
        reverse += truncnorm_logpdf(old[i], new[i], sigma * new[i], lo);
        back[i] = old[i];
    }
    let mut acc = 0.0;
    let out = new
        .iter()
        .map(|d| {
            acc += d;
            acc
        })
        .collect();
    (out, reverse - forward)
}

/// Every outcome of the local topology move with its probability: a uniform
/// adjacent rank pair, rank-swapped when independent, otherwise one of the
/// two offspring of the lower event exchanged with the sibling above.
pub fn topology_moves(events: &[CoalescentEvent]) -> Vec<(Vec<CoalescentEvent>, f64)> {
    let n1 = events.len();
    if n1 < 2 {
        return Vec::new();
    }
    let w = 1.0 / (n1 - 1) as f64;
    let mut out = Vec::new();
    for r in 1..n1 {
        match swap_ranks(events, r) {
            Some(e) => out.push((e, w)),
            None => {
                for pick in 0..2 {
                    if let Some(e) = swap_offspring(events, r, pick) {
                        out.push((e, 0.5 * w));
                    }
                }
            }
        }
    }
    out
}

fn move_probability(from: &[CoalescentEvent], to: &[CoalescentEvent]) -> f64 {
    topology_moves(from).into_iter().filter(|(e, _)| e.as_slice() == to).map(|(_, p)| p).sum()
}

/// Draws a local topology move; `None` when no move exists (n = 2).
pub fn propose_topology<R: Rng + ?Sized>(events: &[CoalescentEvent], rng: &mut R) -> Option<(Vec<CoalescentEvent>, f64)> {
    let n1 = events.len();
    if n1 < 2 {
        return None;
    }
    let r = rng.gen_range(1..n1);
    let new = match swap_ranks(events, r) {
        Some(e) => e,
        None => swap_offspring(events, r, rng.gen_range(0..2)).expect("parent-child ranks"),
    };
    let ratio = move_probability(&new, events).ln() - move_probability(events, &new).ln();
    Some((new, ratio))
}

/// Initial state: a compatible topology from the importance sampler placed at
/// the maximal event counts, the field constant at a Watterson-type estimate.
pub fn initialize<R: Rng + ?Sized>(loci: &[PerfectPhylogeny], cfg: &McmcConfig, rng: &mut R) -> Result<ChainState, McmcError> {
    if loci.is_empty() {
        return Err(McmcError::Init("no loci".into()));
    }
    let mut genealogies = Vec::new();
    let mut cs = Vec::new();
    for t in loci {
        let s = t.schedule();
        let n = s.total();
        let c = if cfg.prior_only { trivial_constraints(s) } else { compute_constraints(t, s).0 };
        let harmonic: f64 = (1..n).map(|i| 1.0 / i as f64).sum();
        let ne0 = if t.z() > 0 { t.z() as f64 / (2.0 * cfg.mu.value * harmonic) } else { 1.0 };
        let draw = sample_compatible_topology(t, &c, Resolution::Tajima, rng)
            .ok_or_else(|| McmcError::Init("no compatible topology at the constraint vector".into()))?;
        let mut times = placement_times(&c, s, 1.0);
        // Tail events at expected constant-size spacings.
        let before_last = c[s.m() - 1];
        let mut t_prev = s.times()[s.m() - 1];
        for (r, time) in times.iter_mut().enumerate().skip(before_last) {
            let k = n - r;
            t_prev += ne0 / (k * (k - 1) / 2) as f64;
            *time = t_prev;
        }
        let g = RankedGenealogy::new(s.clone(), times, draw.events).map_err(|e| McmcError::Init(e.to_string()))?;
        genealogies.push((g, ne0));
        cs.push(c);
    }
    let height = genealogies.iter().map(|(g, _)| g.height()).fold(0.0, f64::max);
    let ne0 = genealogies.iter().map(|(_, ne)| ne.ln()).sum::<f64>() / genealogies.len() as f64;
    let grid = GridField::regular(cfg.horizon_factor * height, cfg.cells, ne0)?;
    let theta = grid.log_ne().to_vec();
    let mut states = Vec::new();
    for ((t, c), (g, _)) in loci.iter().zip(cs).zip(genealogies) {
        states.push(LocusState::new(t.clone(), c, g, &grid, cfg.allocation_cap)?);
    }
    Ok(ChainState { loci: states, grid, theta, tau: 1.0, mu: cfg.mu.value })
}

impl ChainState {
    /// State at given genealogies and field. Each genealogy must be
    /// compatible with its locus.
    pub fn new(loci: Vec<(PerfectPhylogeny, RankedGenealogy)>, grid: GridField, tau: f64, cfg: &McmcConfig) -> Result<Self, McmcError> {
        let mut states = Vec::new();
        for (t, g) in loci {
            let c = if cfg.prior_only { trivial_constraints(t.schedule()) } else { compute_constraints(&t, t.schedule()).0 };
            let st = LocusState::new(t, c, g, &grid, cfg.allocation_cap)?;
            if st.alloc.is_empty() {
                return Err(McmcError::Init("genealogy incompatible with the data".into()));
            }
            states.push(st);
        }
        let theta = grid.log_ne().to_vec();
        Ok(ChainState { loci: states, grid, theta, tau, mu: cfg.mu.value })
    }
}

/// Event counts allowed by the sampling schedule alone.
pub fn trivial_constraints(s: &SamplingSchedule) -> Vec<usize> {
    let mut cum = 0;
    s.counts()
        .iter()
        .enumerate()
        .map(|(j, &nj)| {
            let c = if j == 0 { 0 } else { cum - 1 };
            cum += nj;
            c
        })
        .collect()
}

fn locus_loglik(l: &LocusState, mu: f64, prior_only: bool) -> f64 {
    if prior_only {
        0.0
    } else {
        l.parts.at(mu)
    }
}

impl ChainState {
    pub fn log_posterior(&self, cfg: &McmcConfig, prior: &FieldPrior) -> f64 {
        let mut lp = 0.0;
        for l in &self.loci {
            lp += locus_loglik(l, self.mu, cfg.prior_only) + topology_logprob(&l.g) + l.stats.loglik(&self.theta);
        }
        lp += prior.logpdf(&self.theta, self.tau);
        lp += (cfg.tau_alpha - 1.0) * self.tau.ln() - cfg.tau_beta * self.tau;
        if cfg.mu.estimate {
            lp += cfg.mu.prior.logpdf(self.mu);
        }
        lp
    }

    /// Time proposal for one locus; returns whether it was accepted.
    pub fn update_times<R: Rng + ?Sized>(&mut self, i: usize, cfg: &McmcConfig, rng: &mut R) -> bool {
        let l = &self.loci[i];
        let (times, log_q) = propose_times(l.g.times(), &l.c, l.g.schedule(), cfg.z, cfg.sigma, rng);
        let Ok(g) = l.g.with_times(times) else { return false };
        let parts = tajima_parts_with(&l.data, &g, &l.alloc);
        let stats = FieldStats::of(&g, &self.grid);
        let new_ll = if cfg.prior_only { 0.0 } else { parts.at(self.mu) };
        let ratio = new_ll - locus_loglik(l, self.mu, cfg.prior_only) + stats.loglik(&self.theta) - l.stats.loglik(&self.theta) + log_q;
        if accept(ratio, rng) {
            let l = &mut self.loci[i];
            l.g = g;
            l.parts = parts;
            l.stats = stats;
            l.time_accepts += 1;
            true
        } else {
            false
        }
    }

    /// Topology proposal for one locus; incompatible proposals are rejected.
    pub fn update_topology<R: Rng + ?Sized>(&mut self, i: usize, cfg: &McmcConfig, rng: &mut R) -> Result<bool, McmcError> {
        let l = &self.loci[i];
        let Some((events, log_q)) = propose_topology(l.g.events(), rng) else { return Ok(false) };
        let Ok(g) = RankedGenealogy::new(l.g.schedule().clone(), l.g.times().to_vec(), events) else { return Ok(false) };
        let alloc = enumerate_allocations(&l.data, &g, cfg.allocation_cap)?;
        if alloc.is_empty() {
            return Ok(false);
        }
        let parts = tajima_parts_with(&l.data, &g, &alloc);
        let new_ll = if cfg.prior_only { 0.0 } else { parts.at(self.mu) };
        // Times are unchanged, so the time density moves only through the jump chain.
        let stats = FieldStats::of(&g, &self.grid);
        let ratio = new_ll - locus_loglik(l, self.mu, cfg.prior_only) + topology_logprob(&g) - topology_logprob(&l.g)
            + stats.loglik(&self.theta)
            - l.stats.loglik(&self.theta)
            + log_q;
        if accept(ratio, rng) {
            let l = &mut self.loci[i];
            l.g = g;
            l.alloc = alloc;
            l.parts = parts;
            l.stats = stats;
            l.topology_accepts += 1;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Split-HMC move of the field followed by a Gibbs draw of the precision.
    pub fn update_field<R: Rng + ?Sized>(&mut self, prior: &FieldPrior, cfg: &McmcConfig, rng: &mut R) -> Result<bool, McmcError> {
        let stats = pooled_stats(&self.loci, self.grid.cells());
        let steps = rng.gen_range(1..=cfg.leapfrog_max);
        let (theta, dh) = hmc_field_step(&stats, prior, &self.theta, self.tau, cfg.epsilon, steps, rng)?;
        let moved = dh.is_finite() && accept(-dh, rng);
        if moved {
            self.theta = theta;
        }
        self.tau = draw_tau(prior, &self.theta, cfg.tau_alpha, cfg.tau_beta, rng);
        Ok(moved)
    }

    /// Log-normal random walk on the mutation rate.
    pub fn update_mu<R: Rng + ?Sized>(&mut self, cfg: &McmcConfig, rng: &mut R) -> bool {
        let step: f64 = StandardNormal.sample(rng);
        let mu = self.mu * (cfg.mu.step * step).exp();
        let ll = |m: f64| self.loci.iter().map(|l| locus_loglik(l, m, cfg.prior_only)).sum::<f64>() + cfg.mu.prior.logpdf(m);
        // Jacobian of the log-scale walk.
        let ratio = ll(mu) - ll(self.mu) + (mu / self.mu).ln();
        if accept(ratio, rng) {
            self.mu = mu;
            true
        } else {
            false
        }
    }

    fn set_grid_field(&mut self) {
        self.grid = self.grid.with_log_ne(self.theta.clone()).expect("same cell count");
    }
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocusSample {
    pub tree_height: f64,
    pub n_accepts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub iteration: usize,
    pub log_posterior: f64,
    pub theta: Vec<f64>,
    pub tau: f64,
    pub mu: f64,
    pub per_locus: Vec<LocusSample>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AcceptanceRates {
    pub field: f64,
    pub topology: f64,
    pub times: f64,
    pub mu: f64,
}

#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub samples: Vec<Sample>,
    pub acceptance: AcceptanceRates,
    pub grid: GridField,
    /// Largest share of a stored tree's length beyond the grid horizon.
    pub beyond_grid: f64,
    pub final_state: ChainState,
}

impl ChainOutput {
    /// More than 5% of some stored tree lies beyond the grid.
    pub fn grid_warning(&self) -> bool {
        self.beyond_grid > 0.05
    }
}

fn length_beyond(g: &RankedGenealogy, horizon: f64) -> f64 {
    let mut out = 0.0;
    for b in g.branches() {
        let len = g.branch_length(b);
        let top = match b {
            crate::genealogy::Node::Leaf(l) => g.leaf_time(l) + len,
            crate::genealogy::Node::Vintage(v) => g.time(v) + len,
        };
        out += (top - horizon.max(top - len)).max(0.0);
    }
    out / g.tree_length()
}

/// Runs a chain from the default initial state.
pub fn run_chain(loci: &[PerfectPhylogeny], cfg: &McmcConfig) -> Result<ChainOutput, McmcError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let state = initialize(loci, cfg, &mut rng)?;
    run_chain_from(state, cfg, &mut rng)
}

/// One sweep is a field update, then per locus a topology and a time update,
/// then the mutation rate when it is estimated.
pub fn run_chain_from<R: Rng + ?Sized>(mut state: ChainState, cfg: &McmcConfig, rng: &mut R) -> Result<ChainOutput, McmcError> {
    let prior = FieldPrior::new(&state.grid, cfg.theta1_sd);
    let (mut acc_field, mut acc_mu) = (0usize, 0usize);
    let mut samples = Vec::new();
    let mut beyond: f64 = 0.0;
    for it in 1..=cfg.iterations {
        if !cfg.fix_field {
            if state.update_field(&prior, cfg, rng)? {
                acc_field += 1;
            }
            state.set_grid_field();
        }
        for i in 0..state.loci.len() {
            state.update_topology(i, cfg, rng)?;
            state.update_times(i, cfg, rng);
        }
        if cfg.mu.estimate && state.update_mu(cfg, rng) {
            acc_mu += 1;
        }
        if it > cfg.burnin && (it - cfg.burnin) % cfg.thin == 0 {
            for l in &state.loci {
                beyond = beyond.max(length_beyond(&l.g, state.grid.horizon()));
            }
            samples.push(Sample {
                iteration: it,
                log_posterior: state.log_posterior(cfg, &prior),
                theta: state.theta.clone(),
                tau: state.tau,
                mu: state.mu,
                per_locus: state
                    .loci
                    .iter()
                    .map(|l| LocusSample { tree_height: l.g.height(), n_accepts: l.topology_accepts + l.time_accepts })
                    .collect(),
            });
        }
    }
    let per = cfg.iterations as f64;
    let nl = state.loci.len() as f64 * per;
    let acceptance = AcceptanceRates {
        field: acc_field as f64 / per,
        topology: state.loci.iter().map(|l| l.topology_accepts).sum::<usize>() as f64 / nl,
        times: state.loci.iter().map(|l| l.time_accepts).sum::<usize>() as f64 / nl,
        mu: acc_mu as f64 / per,
    };
    Ok(ChainOutput { samples, acceptance, grid: state.grid.clone(), beyond_grid: beyond, final_state: state })
}

/// Pointwise posterior of `N_e` per grid cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PosteriorSummary {
    pub time: Vec<f64>,
    pub median: Vec<f64>,
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
    #[serde(skip)]
    grid: GridField,
}

pub fn summarize_posterior(thetas: &[Vec<f64>], grid: &GridField) -> PosteriorSummary {
    assert!(!thetas.is_empty(), "no samples to summarize");
    let b = grid.cells();
    let (mut median, mut q025, mut q975) = (Vec::new(), Vec::new(), Vec::new());
    for cell in 0..b {
        let mut d = Data::new(thetas.iter().map(|t| t[cell]).collect::<Vec<f64>>());
        median.push(d.median().exp());
        q025.push(d.quantile(0.025).exp());
        q975.push(d.quantile(0.975).exp());
    }
    PosteriorSummary { time: grid.midpoints(), median, q025, q975, grid: grid.clone() }
}

impl PosteriorSummary {
    pub fn band_at(&self, t: f64) -> Band {
        let b = self.grid.cell_of(t);
        Band { median: self.median[b], lo: self.q025[b], hi: self.q975[b] }
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["time", "median", "q025", "q975"])?;
        for i in 0..self.time.len() {
            wr.write_record(&[
                format!("{:e}", self.time[i]),
                format!("{:e}", self.median[i]),
                format!("{:e}", self.q025[i]),
                format!("{:e}", self.q975[i]),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`PosteriorSummary::write_csv`]; cells are
    /// rebuilt from the midpoints of a regular grid.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self, McmcError> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let mut cols: [Vec<f64>; 4] = Default::default();
        for rec in rd.records() {
            let rec = rec.map_err(|e| McmcError::Config(e.to_string()))?;
            for (k, col) in cols.iter_mut().enumerate() {
                let v: f64 = rec.get(k).unwrap_or("").trim().parse().map_err(|_| McmcError::Config("bad summary value".into()))?;
                col.push(v);
            }
        }
        let [time, median, q025, q975] = cols;
        if time.len() < 2 {
            return Err(McmcError::Config("summary needs at least two cells".into()));
        }
        let width = time[1] - time[0];
        let grid = GridField::regular(width * time.len() as f64, time.len(), 0.0)?;
        Ok(PosteriorSummary { time, median, q025, q975, grid })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demographic::Trajectory;
    use crate::ism_data::build_perfect_phylogeny;
    use crate::ism_data::tests::fig4;

    fn fig4_state(cfg: &McmcConfig) -> ChainState {
        let (y1, y2, s) = fig4();
        let t = build_perfect_phylogeny(&y1, &y2, &s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        initialize(&[t], cfg, &mut rng).unwrap()
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = McmcConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"Z\":2") && text.contains("\"version\":1"));
        let back: McmcConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: McmcConfig = serde_json::from_str(r#"{"iterations": 10, "burnin": 2}"#).unwrap();
        assert_eq!((partial.iterations, partial.epsilon), (10, 0.07));
        assert!(McmcConfig { burnin: 10, iterations: 10, ..cfg.clone() }.validate().is_err());
        assert!(McmcConfig { z: 0, ..cfg.clone() }.validate().is_err());
        assert!(serde_json::from_str::<McmcConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn unconstrained_bound_is_zero() {
        let dt = [0.5, 0.5, 0.5];
        assert_eq!(time_lower_bound(&dt, 1, &[0, 1], &[0.0, 0.2]), 0.0);
        // Binding: the second event at 0.25 barely clears s = 0.2.
        let dt = [0.1, 0.15, 0.3];
        let lo = time_lower_bound(&dt, 1, &[0, 1], &[0.0, 0.2]);
        assert!((lo - (0.2 - 0.15)).abs() < 1e-15);
        let lo2 = time_lower_bound(&dt, 3, &[0, 1], &[0.0, 0.2]);
        assert_eq!(lo2, 0.0);
    }

    #[test]
    fn time_proposals_respect_constraints() {
        let cfg = McmcConfig::default();
        let st = fig4_state(&cfg);
        let l = &st.loci[0];
        assert_eq!(l.c, vec![0, 5]);
        let s2 = l.g.schedule().times()[1];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut times = l.g.times().to_vec();
        for _ in 0..20_000 {
            let (t, h) = propose_times(&times, &l.c, l.g.schedule(), 3, 0.3, &mut rng);
            assert!(!h.is_nan());
            assert!(t.iter().filter(|&&x| x < s2).count() <= 5);
            assert!(t.windows(2).all(|w| w[0] <= w[1]));
            times = t;
        }
    }

    #[test]
    fn time_moves_target_the_constrained_density() {
        // Target: iid Exp(1) gaps conditioned on t_3 >= 0.3; oracle by rejection.
        let c = [0usize, 2];
        let s = SamplingSchedule::new(vec![0.0, 0.3], vec![3, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let exact: Vec<[f64; 4]> = std::iter::repeat_with(|| {
            let d: [f64; 4] = std::array::from_fn(|_| rand_distr::Exp1.sample(&mut rng));
            d
        })
        .filter(|d| d[0] + d[1] + d[2] >= 0.3)
        .take(200_000)
        .collect();
        let mut times = vec![0.1, 0.2, 0.45, 0.9];
        let (mut sum, mut close) = ([0.0; 4], 0.0);
        let steps = 4_000_000;
        for _ in 0..steps {
            let (t2, h) = propose_times(&times, &c, &s, 2, 0.5, &mut rng);
            assert!(h.is_finite() && t2[2] >= 0.3);
            if accept(times[3] - t2[3] + h, &mut rng) {
                times = t2;
            }
            sum[0] += times[0];
            for k in 1..4 {
                sum[k] += times[k] - times[k - 1];
            }
            close += f64::from(times[2] < 0.6);
        }
        for k in 0..4 {
            let want = exact.iter().map(|d| d[k]).sum::<f64>() / exact.len() as f64;
            assert!((sum[k] / steps as f64 - want).abs() < 0.03, "gap {k}: {} vs {want}", sum[k] / steps as f64);
        }
        let want = exact.iter().filter(|d| d[0] + d[1] + d[2] < 0.6).count() as f64 / exact.len() as f64;
        assert!((close / steps as f64 - want).abs() < 0.02);
    }

    #[test]
    fn topology_move_probabilities_balance() {
        let g = crate::genealogy::tests::fig6_g();
        let moves = topology_moves(g.events());
        let total: f64 = moves.iter().map(|m| m.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (e, _) in &moves {
            // Every move can be undone.
            assert!(move_probability(e, g.events()) > 0.0);
        }
        let two = [CoalescentEvent::SingletonSameGroup { group: 0 }];
        assert!(propose_topology(&two, &mut ChaCha8Rng::seed_from_u64(1)).is_none());
    }

    #[test]
    fn topology_moves_target_the_ranked_shape_prior() {
        use CoalescentEvent::*;
        let s = SamplingSchedule::new(vec![0.0], vec![6]).unwrap();
        let times = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let mk = |e: Vec<CoalescentEvent>| RankedGenealogy::new(s.clone(), times.clone(), e);
        let mut g = mk(vec![
            SingletonSameGroup { group: 0 },
            SingletonVintage { group: 0, vintage: 1 },
            SingletonVintage { group: 0, vintage: 2 },
            SingletonVintage { group: 0, vintage: 3 },
            SingletonVintage { group: 0, vintage: 4 },
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut visits: std::collections::HashMap<Vec<CoalescentEvent>, usize> = Default::default();
        let steps = 400_000;
        for _ in 0..steps {
            let (e, h) = propose_topology(g.events(), &mut rng).unwrap();
            if let Ok(g2) = mk(e) {
                if accept(topology_logprob(&g2) - topology_logprob(&g) + h, &mut rng) {
                    g = g2;
                }
            }
            *visits.entry(g.events().to_vec()).or_default() += 1;
        }
        // Ranked tree shapes on six leaves.
        assert_eq!(visits.len(), 16);
        let total: f64 = visits.keys().map(|e| topology_logprob(&mk(e.clone()).unwrap()).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (e, &k) in &visits {
            let p = topology_logprob(&mk(e.clone()).unwrap()).exp();
            assert!((k as f64 / steps as f64 - p).abs() < 0.01, "{e:?}: {} vs {p}", k as f64 / steps as f64);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = McmcConfig { cells: 12, ..McmcConfig::default() };
        let st = fig4_state(&cfg);
        let prior = FieldPrior::new(&st.grid, cfg.theta1_sd);
        let stats = pooled_stats(&st.loci, st.grid.cells());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let tau = rng.gen_range(0.1..5.0);
            let g = field_gradient(&stats, &prior, &theta, tau);
            for b in 0..12 {
                let h = 1e-5;
                let mut up = theta.clone();
                up[b] += h;
                let mut dn = theta.clone();
                dn[b] -= h;
                let fd = (field_log_target(&stats, &prior, &up, tau) - field_log_target(&stats, &prior, &dn, tau)) / (2.0 * h);
                assert!((fd - g[b]).abs() <= 1e-5 * g[b].abs().max(1.0), "{fd} {}", g[b]);
            }
        }
    }

    #[test]
    fn hmc_energy_error_is_small() {
        let cfg = McmcConfig { cells: 30, ..McmcConfig::default() };
        let st = fig4_state(&cfg);
        let prior = FieldPrior::new(&st.grid, cfg.theta1_sd);
        let stats = pooled_stats(&st.loci, st.grid.cells());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (_, dh) = hmc_field_step(&stats, &prior, &st.theta, 5.0, 0.07, 10, &mut rng).unwrap();
        assert!(dh.abs() < 0.5, "{dh}");
        // A zero step is the identity.
        let (th, dh0) = hmc_field_step(&stats, &prior, &st.theta, 5.0, 0.0, 3, &mut rng).unwrap();
        assert!(dh0.abs() < 1e-9);
        assert!(th.iter().zip(&st.theta).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn hmc_leaves_field_target_invariant() {
        let s = SamplingSchedule::isochronous(5).unwrap();
        let g = RankedGenealogy::new(
            s,
            vec![0.3, 0.5, 0.9, 1.6],
            vec![
                CoalescentEvent::SingletonSameGroup { group: 0 },
                CoalescentEvent::SingletonSameGroup { group: 0 },
                CoalescentEvent::VintageVintage { vintage_a: 1, vintage_b: 2 },
                CoalescentEvent::SingletonVintage { group: 0, vintage: 3 },
            ],
        )
        .unwrap();
        let grid = GridField::regular(1.0, 2, 0.0).unwrap();
        let stats = FieldStats::of(&g, &grid);
        let prior = FieldPrior::new(&grid, 1.5);
        let tau = 2.0;
        // Posterior means by quadrature on a fine 2-d lattice.
        let (lo, hi, k) = (-6.0, 6.0, 600);
        let step = (hi - lo) / k as f64;
        let (mut z, mut m0, mut m1) = (0.0, 0.0, 0.0);
        for i in 0..k {
            for j in 0..k {
                let th = [lo + (i as f64 + 0.5) * step, lo + (j as f64 + 0.5) * step];
                let w = field_log_target(&stats, &prior, &th, tau).exp();
                z += w;
                m0 += w * th[0];
                m1 += w * th[1];
            }
        }
        let want = [m0 / z, m1 / z];
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut theta = vec![0.0, 0.0];
        let mut sum = [0.0, 0.0];
        let n = 200_000;
        for _ in 0..n {
            let steps = rng.gen_range(1..=10);
            let (next, dh) = hmc_field_step(&stats, &prior, &theta, tau, 0.07, steps, &mut rng).unwrap();
            if dh.is_finite() && accept(-dh, &mut rng) {
                theta = next;
            }
            sum[0] += theta[0];
            sum[1] += theta[1];
        }
        for b in 0..2 {
            assert!((sum[b] / n as f64 - want[b]).abs() < 0.03, "cell {b}: {} vs {}", sum[b] / n as f64, want[b]);
        }
    }

    #[test]
    fn chains_are_reproducible_and_finite() {
        let (y1, y2, s) = fig4();
        let t = build_perfect_phylogeny(&y1, &y2, &s).unwrap();
        let cfg = McmcConfig {
            iterations: 300,
            burnin: 100,
            thin: 10,
            cells: 20,
            mu: MuConfig { value: 2.0, estimate: true, ..McmcConfig::default().mu },
            ..McmcConfig::default()
        };
        let a = run_chain(&[t.clone()], &cfg).unwrap();
        let b = run_chain(&[t.clone()], &cfg).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.samples.len(), 20);
        for smp in &a.samples {
            assert!(smp.log_posterior.is_finite());
        }
        for l in &a.final_state.loci {
            assert!(l.g.times().iter().filter(|&&x| x < 0.3).count() <= 5);
            assert!(l.parts.at(1.0).is_finite());
        }
    }

    #[test]
    fn summaries() {
        let grid = GridField::regular(1.0, 2, 0.0).unwrap();
        let same = vec![vec![0.5, -1.0]; 7];
        let s = summarize_posterior(&same, &grid);
        assert_eq!(s.median, vec![0.5f64.exp(), (-1.0f64).exp()]);
        assert_eq!(s.q025, s.q975);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = PosteriorSummary::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.median, s.median);
        assert_eq!(back.time, s.time);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<Vec<f64>> = (0..40_000).map(|_| vec![StandardNormal.sample(&mut rng), 0.0]).collect();
        let s = summarize_posterior(&draws, &grid);
        assert!((s.q975[0].ln() - 1.959964).abs() < 0.03);
        assert!((s.q025[0].ln() + 1.959964).abs() < 0.03);
        assert!(s.median[0].ln().abs() < 0.02);
        let _ = Trajectory::constant(1.0);
    }
}
