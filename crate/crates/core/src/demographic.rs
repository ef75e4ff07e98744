//! Effective population size trajectories and their `1/N_e` integrals.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DemographicError {
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("integration bounds reversed: {a} > {b}")]
    ReversedBounds { a: f64, b: f64 },
    #[error("unknown scenario '{0}' (expected bottleneck, drop or exp)")]
    UnknownScenario(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Piecewise-constant `log N_e` on cells `[x_b, x_{b+1})`; the last cell extends to infinity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    boundaries: Vec<f64>,
    log_ne: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridRow {
    cell_start: f64,
    cell_end: f64,
    log_ne: f64,
}

impl GridField {
    pub fn new(boundaries: Vec<f64>, log_ne: Vec<f64>) -> Result<Self, DemographicError> {
        if log_ne.is_empty() || boundaries.len() != log_ne.len() + 1 {
            return Err(DemographicError::InvalidGrid(format!("{} boundaries for {} cells", boundaries.len(), log_ne.len())));
        }
        if boundaries[0] != 0.0 || boundaries.windows(2).any(|w| !(w[1] > w[0])) || !boundaries[boundaries.len() - 1].is_finite() {
            return Err(DemographicError::InvalidGrid("boundaries must start at 0 and increase strictly".into()));
        }
        if log_ne.iter().any(|v| !v.is_finite()) {
            return Err(DemographicError::InvalidGrid("log N_e values must be finite".into()));
        }
        Ok(GridField { boundaries, log_ne })
    }

    /// `cells` equal cells over `[0, horizon]` holding a constant `log_ne`.
    pub fn regular(horizon: f64, cells: usize, log_ne: f64) -> Result<Self, DemographicError> {
        if !(horizon > 0.0) || cells == 0 {
            return Err(DemographicError::InvalidGrid("need a positive horizon and at least one cell".into()));
        }
        let w = horizon / cells as f64;
        let mut b: Vec<f64> = (0..cells).map(|i| i as f64 * w).collect();
        b.push(horizon);
        Self::new(b, vec![log_ne; cells])
    }

    /// Constant `N_e`, represented as a single cell.
    pub fn constant(ne: f64) -> Self {
        Self::new(vec![0.0, 1.0], vec![ne.ln()]).expect("positive constant")
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn log_ne(&self) -> &[f64] {
        &self.log_ne
    }

    pub fn cells(&self) -> usize {
        self.log_ne.len()
    }

    /// Horizon `x_B`; beyond it the last cell's value applies.
    pub fn horizon(&self) -> f64 {
        self.boundaries[self.cells()]
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.boundaries.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn with_log_ne(&self, log_ne: Vec<f64>) -> Result<Self, DemographicError> {
        Self::new(self.boundaries.clone(), log_ne)
    }

    /// Cell containing `t >= 0`.
    pub fn cell_of(&self, t: f64) -> usize {
        let k = self.boundaries.partition_point(|&x| x <= t);
        k.saturating_sub(1).min(self.cells() - 1)
    }

    /// Start and (possibly infinite) end of cell `b`.
    pub fn cell_bounds(&self, b: usize) -> (f64, f64) {
        let end = if b + 1 == self.cells() { f64::INFINITY } else { self.boundaries[b + 1] };
        (self.boundaries[b], end)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DemographicError> {
        let mut wr = csv::Writer::from_writer(w);
        for b in 0..self.cells() {
            wr.serialize(GridRow { cell_start: self.boundaries[b], cell_end: self.boundaries[b + 1], log_ne: self.log_ne[b] })?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, DemographicError> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let mut boundaries = Vec::new();
        let mut log_ne = Vec::new();
        for row in rd.deserialize() {
            let row: GridRow = row?;
            if let Some(&last) = boundaries.last() {
                if last != row.cell_start {
                    return Err(DemographicError::InvalidGrid("cells are not contiguous".into()));
                }
                boundaries.pop();
            }
            boundaries.push(row.cell_start);
            boundaries.push(row.cell_end);
            log_ne.push(row.log_ne);
        }
        Self::new(boundaries, log_ne)
    }
}

/// Named simulation trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Bottleneck,
    Drop,
    Exp,
}

impl std::str::FromStr for Scenario {
    type Err = DemographicError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bottleneck" | "bottle" => Ok(Scenario::Bottleneck),
            "drop" => Ok(Scenario::Drop),
            "exp" => Ok(Scenario::Exp),
            _ => Err(DemographicError::UnknownScenario(s.to_string())),
        }
    }
}

/// Rate of the exponential piece: `N_e(t) = 10 exp(2 - 20 t)` on `[0.1, 0.25)`.
const EXP_RATE: f64 = 20.0;

#[derive(Clone, Copy, Debug)]
enum Shape {
    Const(f64),
    /// `N_e(start) = ne_start`, and `1/N_e` grows as `exp(rate (t - start))`.
    Exp {
        ne_start: f64,
        rate: f64,
    },
}

#[derive(Clone, Copy, Debug)]
struct Piece {
    start: f64,
    end: f64,
    shape: Shape,
}

impl Piece {
    fn value(&self, t: f64) -> f64 {
        match self.shape {
            Shape::Const(ne) => ne,
            Shape::Exp { ne_start, rate } => ne_start * (-rate * (t - self.start)).exp(),
        }
    }

    /// Integral of `1/N_e` over `[a, b]` inside the piece.
    fn integral(&self, a: f64, b: f64) -> f64 {
        match self.shape {
            Shape::Const(ne) => (b - a) / ne,
            Shape::Exp { rate, .. } => (rate * (b - a)).exp_m1() / (rate * self.value(a)),
        }
    }

    /// `t >= a` with integral from `a` equal to `y` (may exceed the piece end).
    fn solve(&self, a: f64, y: f64) -> f64 {
        match self.shape {
            Shape::Const(ne) => a + y * ne,
            Shape::Exp { rate, .. } => a + (y * rate * self.value(a)).ln_1p() / rate,
        }
    }
}

const INF: f64 = f64::INFINITY;

fn scenario_pieces(s: Scenario) -> &'static [Piece] {
    const BOTTLENECK: [Piece; 3] = [
        Piece { start: 0.0, end: 0.1, shape: Shape::Const(3.0) },
        Piece { start: 0.1, end: 0.3, shape: Shape::Const(0.1) },
        Piece { start: 0.3, end: INF, shape: Shape::Const(2.0) },
    ];
    const DROP: [Piece; 2] =
        [Piece { start: 0.0, end: 0.5, shape: Shape::Const(0.5) }, Piece { start: 0.5, end: INF, shape: Shape::Const(2.0) }];
    const EXP: [Piece; 3] = [
        Piece { start: 0.0, end: 0.1, shape: Shape::Const(10.0) },
        Piece { start: 0.1, end: 0.25, shape: Shape::Exp { ne_start: 10.0, rate: EXP_RATE } },
        Piece { start: 0.25, end: INF, shape: Shape::Const(0.5) },
    ];
    match s {
        Scenario::Bottleneck => &BOTTLENECK,
        Scenario::Drop => &DROP,
        Scenario::Exp => &EXP,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trajectory {
    Grid(GridField),
    Scenario(Scenario),
}

impl From<GridField> for Trajectory {
    fn from(g: GridField) -> Self {
        Trajectory::Grid(g)
    }
}

impl Trajectory {
    pub fn constant(ne: f64) -> Self {
        Trajectory::Grid(GridField::constant(ne))
    }

    pub fn scenario(name: &str) -> Result<Self, DemographicError> {
        Ok(Trajectory::Scenario(name.parse()?))
    }

    fn piece_count(&self) -> usize {
        match self {
            Trajectory::Grid(g) => g.cells(),
            Trajectory::Scenario(s) => scenario_pieces(*s).len(),
        }
    }

    fn piece(&self, i: usize) -> Piece {
        match self {
            Trajectory::Grid(g) => {
                let (start, end) = g.cell_bounds(i);
                Piece { start, end, shape: Shape::Const(g.log_ne[i].exp()) }
            }
            Trajectory::Scenario(s) => scenario_pieces(*s)[i],
        }
    }

    fn piece_index(&self, t: f64) -> usize {
        match self {
            Trajectory::Grid(g) => g.cell_of(t),
            Trajectory::Scenario(s) => {
                let p = scenario_pieces(*s);
                p.partition_point(|q| q.start <= t).saturating_sub(1)
            }
        }
    }

    pub fn evaluate(&self, t: f64) -> Result<f64, DemographicError> {
        if t < 0.0 || t.is_nan() {
            return Err(DemographicError::NegativeTime(t));
        }
        Ok(self.piece(self.piece_index(t)).value(t))
    }

    /// `∫_a^b dt / N_e(t)` in closed form.
    pub fn inverse_integral(&self, a: f64, b: f64) -> Result<f64, DemographicError> {
        if a < 0.0 || a.is_nan() {
            return Err(DemographicError::NegativeTime(a));
        }
        if a > b {
            return Err(DemographicError::ReversedBounds { a, b });
        }
        Ok(self.integral_unchecked(a, b))
    }

    pub(crate) fn integral_unchecked(&self, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        let mut i = self.piece_index(a);
        let mut lo = a;
        while lo < b {
            let p = self.piece(i);
            let hi = p.end.min(b);
            total += p.integral(lo, hi);
            lo = hi;
            i += 1;
            if i >= self.piece_count() {
                break;
            }
        }
        total
    }

    /// Smallest `t >= a` whose integral from `a` reaches `target`.
    pub fn solve_integral(&self, a: f64, target: f64) -> f64 {
        let mut i = self.piece_index(a);
        let mut lo = a;
        let mut left = target;
        loop {
            let p = self.piece(i);
            let full = if p.end.is_finite() { p.integral(lo, p.end) } else { INF };
            if left <= full || i + 1 >= self.piece_count() {
                return p.solve(lo, left).min(if p.end.is_finite() { p.end } else { INF }).max(lo);
            }
            left -= full;
            lo = p.end;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Composite Simpson quadrature of `1/N_e`, splitting at the scenario breakpoints.
    fn quadrature(tr: &Trajectory, a: f64, b: f64) -> f64 {
        let mut cuts = vec![a];
        for x in [0.1, 0.25, 0.3, 0.5] {
            if x > a && x < b {
                cuts.push(x);
            }
        }
        cuts.push(b);
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let k = 2000;
            let h = (hi - lo) / k as f64;
            let f = |x: f64| 1.0 / tr.evaluate(x.min(hi - 1e-15).max(lo)).unwrap();
            let mut s = f(lo) + f(hi);
            for j in 1..k {
                s += if j % 2 == 1 { 4.0 } else { 2.0 } * f(lo + j as f64 * h);
            }
            total += s * h / 3.0;
        }
        total
    }

    #[test]
    fn scenario_values() {
        let b = Trajectory::scenario("bottleneck").unwrap();
        assert_eq!(b.evaluate(0.05).unwrap(), 3.0);
        assert_eq!(b.evaluate(0.2).unwrap(), 0.1);
        let d = Trajectory::scenario("drop").unwrap();
        assert_eq!(d.evaluate(0.7).unwrap(), 2.0);
        assert_eq!(d.evaluate(0.0).unwrap(), 0.5);
        let e = Trajectory::scenario("exp").unwrap();
        assert_eq!(e.evaluate(0.1).unwrap(), 10.0);
        assert_eq!(e.evaluate(0.25).unwrap(), 0.5);
        let mid = e.evaluate(0.2).unwrap();
        assert!((mid - 10.0 * (2.0f64 - 4.0).exp()).abs() < 1e-12);
        assert!(Trajectory::scenario("plateau").is_err());
        assert!(b.evaluate(-1.0).is_err());
    }

    #[test]
    fn closed_form_integrals() {
        assert!((Trajectory::constant(2.0).inverse_integral(0.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let b = Trajectory::scenario("bottleneck").unwrap();
        let v = b.inverse_integral(0.0, 0.3).unwrap();
        assert!((v - (0.1 / 3.0 + 0.2 / 0.1)).abs() < 1e-9);
        assert!((v - quadrature(&b, 0.0, 0.3)).abs() < 1e-9);
        assert_eq!(b.inverse_integral(0.4, 0.4).unwrap(), 0.0);
        assert!(b.inverse_integral(0.5, 0.4).is_err());
    }

    #[test]
    fn grid_csv_round_trip_is_bit_exact() {
        let g = GridField::new(vec![0.0, 0.1, 0.30000000000000004, 1.0 / 3.0], vec![-1.2345678901234567, 0.1, 2.0f64.ln()]).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let h = GridField::read_csv(&buf[..]).unwrap();
        assert_eq!(g, h);
        let (tg, th) = (Trajectory::Grid(g), Trajectory::Grid(h));
        for t in [0.0, 0.05, 0.2, 0.31, 5.0] {
            assert_eq!(tg.evaluate(t).unwrap().to_bits(), th.evaluate(t).unwrap().to_bits());
        }
    }

    fn any_traj() -> impl Strategy<Value = Trajectory> {
        prop_oneof![
            Just(Trajectory::Scenario(Scenario::Bottleneck)),
            Just(Trajectory::Scenario(Scenario::Drop)),
            Just(Trajectory::Scenario(Scenario::Exp)),
            proptest::collection::vec(-2.0f64..2.0, 1..6).prop_map(|v| {
                let b = v.len();
                Trajectory::Grid(GridField::regular(0.6, b, 0.0).unwrap().with_log_ne(v).unwrap())
            }),
        ]
    }

    proptest! {
        #[test]
        fn integral_is_additive(tr in any_traj(), x in 0.0f64..1.0, y in 0.0f64..1.0, z in 0.0f64..1.0) {
            let mut v = [x, y, z];
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let whole = tr.inverse_integral(v[0], v[2]).unwrap();
            let parts = tr.inverse_integral(v[0], v[1]).unwrap() + tr.inverse_integral(v[1], v[2]).unwrap();
            prop_assert!((whole - parts).abs() <= 1e-12 * whole.max(1.0));
        }

        #[test]
        fn integral_matches_quadrature(tr in any_traj(), x in 0.0f64..0.8, len in 0.01f64..0.8) {
            let exact = tr.inverse_integral(x, x + len).unwrap();
            let mut cuts = vec![x];
            if let Trajectory::Grid(g) = &tr {
                cuts.extend(g.boundaries().iter().copied().filter(|&c| c > x && c < x + len));
            } else {
                cuts.extend([0.1, 0.25, 0.3, 0.5].into_iter().filter(|&c| c > x && c < x + len));
            }
            cuts.push(x + len);
            let approx: f64 = cuts.windows(2).map(|w| quadrature(&tr, w[0], w[1])).sum();
            prop_assert!((exact - approx).abs() <= 1e-8 * exact);
        }

        #[test]
        fn solve_inverts_integral(tr in any_traj(), a in 0.0f64..0.8, y in 0.0f64..5.0) {
            let t = tr.solve_integral(a, y);
            let back = tr.inverse_integral(a, t).unwrap();
            prop_assert!((back - y).abs() <= 1e-9 * y.max(1.0));
        }
    }
}
