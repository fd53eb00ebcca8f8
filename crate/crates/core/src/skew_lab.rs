//! Skew products over the base systems, hitting-time sets `N(U, V)` for
//! product boxes, and the two worked examples.
//!
//! A scalar skew acts by `P(a, x) = (f(a), h(a)·T x)`, so
//! `P^n(a, x) = (f^n(a), h_n(a)·T^n x)`. An integer skew acts by
//! `F(a, x) = (f(a), T^{h(1,a)} x)`. Both fiber maps are "scale times a power
//! of a weighted shift", which is all the hit test needs.

use std::collections::HashMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base_systems::{Alpha, BasePoint, BaseSystem};
use crate::cocycles::{IntegerCocycle, LogPolar, ScalarCocycle};
use crate::criterion::{
    check_criterion, stats_of_terms, CriterionOptions, DEFAULT_DICHOTOMY_TOL, CriterionReport, DenseSetSpec, FiberSetup, IndexSequence,
};
use crate::error::{Error, Result};
use crate::fiber_space::{
    example1_r, NormSpace, ScaledVector, Side, SparseVector, WeightSequence, WeightedShift, WindowSpec,
};
use crate::numeric::{log_sum_exp, wrap_unit, NeumaierSum};

/// Base points sampled per base cell by default.
pub const DEFAULT_BASE_SAMPLES: usize = 64;

/// Relative safety factor on the open-ball test `optimum < δ_v²`.
const HIT_MARGIN: f64 = 1e-9;

const BISECTION_STEPS: usize = 200;

/// Fiber state after `n` steps together with the base point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewState {
    pub point: BasePoint,
    pub fiber: ScaledVector,
}

/// The fiber map at one time: `x ↦ scale · T^power x` (negative powers use
/// the right inverse).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberMap {
    pub power: i64,
    pub scale: LogPolar,
}

/// A skew product whose fiber maps are scaled powers of one weighted shift.
pub trait SkewProduct: Sync {
    fn base(&self) -> &BaseSystem;

    fn fiber(&self) -> &FiberSetup;

    /// Fiber maps for `n = 0, …, horizon` along the orbit of `a`.
    fn fiber_maps(&self, a: &BasePoint, horizon: u64) -> Result<Vec<FiberMap>>;

    /// `(f^n a, fiber map applied to x)`.
    fn iterate(&self, a: &BasePoint, x: &ScaledVector, n: u64) -> Result<SkewState>;
}

/// `P(a, x) = (f(a), h(a)·T x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarSkew {
    cocycle: ScalarCocycle,
    fiber: FiberSetup,
}

impl ScalarSkew {
    pub fn new(cocycle: ScalarCocycle, fiber: FiberSetup) -> Self {
        Self { cocycle, fiber }
    }

    pub fn cocycle(&self) -> &ScalarCocycle {
        &self.cocycle
    }
}

impl SkewProduct for ScalarSkew {
    fn base(&self) -> &BaseSystem {
        self.cocycle.base()
    }

    fn fiber(&self) -> &FiberSetup {
        &self.fiber
    }

    fn fiber_maps(&self, a: &BasePoint, horizon: u64) -> Result<Vec<FiberMap>> {
        let mut out = Vec::with_capacity(horizon as usize + 1);
        if self.cocycle.is_constant() {
            let h = self.cocycle.eval(a)?;
            for n in 0..=horizon {
                out.push(FiberMap {
                    power: n as i64,
                    scale: h.pow(n as i64),
                });
            }
            return Ok(out);
        }
        let base = self.base();
        let mut point = *a;
        let mut log_mag = NeumaierSum::new();
        let mut phase = 0.0;
        for n in 0..=horizon {
            out.push(FiberMap {
                power: n as i64,
                scale: LogPolar::new(log_mag.value(), phase),
            });
            if n < horizon {
                let h = self.cocycle.eval(&point)?;
                log_mag.add(h.log_mag);
                phase += h.phase;
                point = base.step(&point)?;
            }
        }
        Ok(out)
    }

    fn iterate(&self, a: &BasePoint, x: &ScaledVector, n: u64) -> Result<SkewState> {
        let point = self.base().apply(a, n as i64)?;
        let h = self.cocycle.scalar_log_product(a, n)?;
        let fiber = self.fiber.shift.shift_apply_scaled(x, n)?.mul(h);
        Ok(SkewState { point, fiber })
    }
}

/// `F(a, x) = (f(a), T^{h(1,a)} x)` with an invertible bilateral fiber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntSkew {
    cocycle: IntegerCocycle,
    fiber: FiberSetup,
}

impl IntSkew {
    pub fn new(cocycle: IntegerCocycle, fiber: FiberSetup) -> Result<Self> {
        if !cocycle.base().is_invertible() {
            return Err(Error::invalid("an integer skew needs an invertible base"));
        }
        if fiber.shift.side() != Side::Bilateral {
            return Err(Error::invalid("an integer skew needs a bilateral fiber shift"));
        }
        let w = fiber.shift.weights();
        if !(w.log_weight(0)?.is_finite() && w.log_weight(1)?.is_finite()) {
            return Err(Error::invalid("fiber weights must be bounded away from zero"));
        }
        Ok(Self { cocycle, fiber })
    }

    pub fn cocycle(&self) -> &IntegerCocycle {
        &self.cocycle
    }

    /// `F^n(a, x) = (f^n a, T^{h(n,a)} x)` for any integer `n`.
    pub fn iterate_signed(&self, a: &BasePoint, x: &ScaledVector, n: i64) -> Result<SkewState> {
        let point = self.base().apply(a, n)?;
        let power = self.cocycle.cocycle_sum(a, n)?;
        let fiber = self.fiber.shift.power_apply(x, power)?;
        Ok(SkewState { point, fiber })
    }
}

impl SkewProduct for IntSkew {
    fn base(&self) -> &BaseSystem {
        self.cocycle.base()
    }

    fn fiber(&self) -> &FiberSetup {
        &self.fiber
    }

    fn fiber_maps(&self, a: &BasePoint, horizon: u64) -> Result<Vec<FiberMap>> {
        let mut out = Vec::with_capacity(horizon as usize + 1);
        let mut point = *a;
        let mut power = 0i64;
        for n in 0..=horizon {
            out.push(FiberMap {
                power,
                scale: LogPolar::ONE,
            });
            if n < horizon {
                power += self.cocycle.generator_at(&point)?;
                point = self.base().step(&point)?;
            }
        }
        Ok(out)
    }

    fn iterate(&self, a: &BasePoint, x: &ScaledVector, n: u64) -> Result<SkewState> {
        self.iterate_signed(a, x, n as i64)
    }
}

/// `F(a, x) = (a + α, a + x)` on the torus, by direct composition.
pub fn furstenberg_iterate(alpha: f64, a: f64, x: f64, n: u64) -> (f64, f64) {
    let (mut a, mut x) = (wrap_unit(a), wrap_unit(x));
    for _ in 0..n {
        x = wrap_unit(x + a);
        a = wrap_unit(a + alpha);
    }
    (a, x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub alpha: f64,
    pub grid: usize,
    pub steps: u64,
    pub visited_cells: usize,
    pub total_cells: usize,
    /// Iterate at which the last cell was first entered.
    pub completed_at: Option<u64>,
    /// First visit of cell `(i, j)` at index `i·grid + j`, with `i` the
    /// base coordinate.
    pub first_visits: Vec<Option<u64>>,
}

impl DensityReport {
    pub fn all_visited(&self) -> bool {
        self.visited_cells == self.total_cells
    }
}

/// Visit counts of the orbit of `start` over a `grid × grid` partition of
/// the unit square, for iterates `0, …, steps − 1`.
pub fn furstenberg_density(alpha: f64, start: (f64, f64), steps: u64, grid: usize) -> Result<DensityReport> {
    BaseSystem::torus_skew(Alpha::Irrational(alpha))?;
    if grid == 0 {
        return Err(Error::invalid("density grid must have at least one cell"));
    }
    let mut first_visits = vec![None; grid * grid];
    let mut visited = 0;
    let mut completed_at = None;
    let (mut a, mut x) = (wrap_unit(start.0), wrap_unit(start.1));
    let cell = |t: f64| ((t * grid as f64) as usize).min(grid - 1);
    for n in 0..steps {
        let idx = cell(a) * grid + cell(x);
        if first_visits[idx].is_none() {
            first_visits[idx] = Some(n);
            visited += 1;
            if visited == grid * grid {
                completed_at = Some(n);
                break;
            }
        }
        x = wrap_unit(x + a);
        a = wrap_unit(a + alpha);
    }
    Ok(DensityReport {
        alpha,
        grid,
        steps,
        visited_cells: visited,
        total_cells: grid * grid,
        completed_at,
        first_visits,
    })
}

/// Open ball `{b : d(b, center) < radius}` in the base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseCell {
    pub center: BasePoint,
    pub radius: f64,
}

/// Open ball in the fiber; radius `0` is the empty set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberBall {
    pub center: SparseVector,
    pub radius: f64,
}

/// `U = base cell × fiber ball`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductBox {
    pub base: BaseCell,
    pub fiber: FiberBall,
}

impl ProductBox {
    pub fn new(center: BasePoint, radius: f64, fiber_center: SparseVector, fiber_radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid("base cell radius must be positive"));
        }
        if !(fiber_radius >= 0.0 && fiber_radius.is_finite()) {
            return Err(Error::invalid("fiber ball radius must be nonnegative"));
        }
        Ok(Self {
            base: BaseCell { center, radius },
            fiber: FiberBall {
                center: fiber_center,
                radius: fiber_radius,
            },
        })
    }

    /// The whole circle times a fiber ball.
    pub fn whole_circle(fiber_center: SparseVector, fiber_radius: f64) -> Result<Self> {
        Self::new(BasePoint::circle(0.0), 1.0, fiber_center, fiber_radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitMode {
    /// Exact constrained least squares (plain ℓ²).
    Exact,
    /// The candidate `u + scale^{-1} S (v − scale·T u)`; sufficient only.
    Candidate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberOutcome {
    pub hit: bool,
    /// Smallest distance found from the image of the source ball to the
    /// target center.
    pub distance: f64,
}

/// Does `map(ball(u, δ_u))` meet `ball(v, δ_v)`?
#[derive(Debug, Clone, Copy)]
pub struct FiberHitProblem<'a> {
    pub setup: &'a FiberSetup,
    pub map: FiberMap,
    pub u: &'a SparseVector,
    pub du: f64,
    pub v: &'a SparseVector,
    pub dv: f64,
}

/// `log(e^x + e^y)`.
fn log_add_exp(x: f64, y: f64) -> f64 {
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

impl<'a> FiberHitProblem<'a> {
    fn shift(&self) -> &WeightedShift {
        &self.setup.shift
    }

    /// `log |c_j|` where `(map x)_j = c_j x_{j+power}`, or `None` when the
    /// source index falls off a unilateral space.
    fn log_coefficient(&self, j: i64) -> Result<Option<f64>> {
        let p = self.map.power;
        let source = j + p;
        if self.shift().side() == Side::Unilateral && (j < 1 || source < 1) {
            return Ok(None);
        }
        let raw = if p >= 0 {
            self.shift().log_coefficient(j, p as u64)?
        } else {
            -self.shift().log_coefficient(source, p.unsigned_abs())?
        };
        Ok(Some(self.map.scale.log_mag + raw))
    }

    pub fn image(&self, x: &SparseVector) -> Result<ScaledVector> {
        Ok(self
            .shift()
            .power_apply(&ScaledVector::from_sparse(x.clone()), self.map.power)?
            .mul(self.map.scale))
    }

    /// `‖map(x) − v‖` in the fiber norm (`∞` when out of double range).
    pub fn image_distance(&self, x: &SparseVector) -> Result<f64> {
        match self.image(x)?.materialize() {
            Some(y) => self.setup.space.distance(&y, self.v),
            None => Ok(f64::INFINITY),
        }
    }

    pub fn mode(&self) -> HitMode {
        if self.setup.space.is_plain_l2() {
            HitMode::Exact
        } else {
            HitMode::Candidate
        }
    }

    pub fn solve(&self) -> Result<FiberOutcome> {
        match self.mode() {
            HitMode::Exact => self.exact(),
            HitMode::Candidate => self.candidate(),
        }
    }

    /// Minimize `‖map(u + d) − v‖²` over `‖d‖ ≤ δ_u`. Coordinates decouple:
    /// with `a_j = |c_j|²` and residual `r_j = v_j − c_j u_{j+p}` the optimum
    /// for multiplier `λ` has cost `∑ |r_j|² λ²/(a_j+λ)²` and uses
    /// `‖d‖² = ∑ |r_j|² a_j/(a_j+λ)²`; `μ = log λ` is found by bisection.
    pub fn exact(&self) -> Result<FiberOutcome> {
        let p = self.map.power;
        let mut targets: Vec<i64> = self.v.iter().map(|(j, _)| j).collect();
        targets.extend(self.u.iter().map(|(m, _)| m - p));
        targets.sort_unstable();
        targets.dedup();

        let mut fixed = 0.0;
        let mut lr2 = Vec::new();
        let mut la = Vec::new();
        for j in targets {
            let vj = self.v.get(j);
            let lc = match self.log_coefficient(j)? {
                Some(lc) if lc != f64::NEG_INFINITY => lc,
                _ => {
                    fixed += vj.norm_sqr();
                    continue;
                }
            };
            let uj = self.u.get(j + p);
            let log_r = if uj == Complex64::new(0.0, 0.0) {
                vj.norm().ln()
            } else {
                let lcu = lc + uj.norm().ln();
                let lv = vj.norm().ln();
                if vj == Complex64::new(0.0, 0.0) || lcu > lv + 60.0 {
                    lcu
                } else if lcu < lv - 60.0 {
                    lv
                } else {
                    let cu = Complex64::from_polar(lcu.exp(), self.map.scale.phase + uj.arg());
                    (vj - cu).norm().ln()
                }
            };
            if log_r == f64::NEG_INFINITY {
                continue;
            }
            lr2.push(2.0 * log_r);
            la.push(2.0 * lc);
        }

        let finish = |opt: f64| {
            let opt = opt.max(0.0);
            FiberOutcome {
                hit: opt < self.dv * self.dv * (1.0 - HIT_MARGIN),
                distance: opt.sqrt(),
            }
        };
        if lr2.is_empty() {
            return Ok(finish(fixed));
        }
        if self.du == 0.0 {
            return Ok(finish(fixed + log_sum_exp(lr2.iter().copied()).exp()));
        }
        let target = 2.0 * self.du.ln();
        let free_log = log_sum_exp(lr2.iter().zip(&la).map(|(r, a)| r - a));
        if free_log <= target {
            return Ok(finish(fixed));
        }
        let used = |mu: f64| log_sum_exp(lr2.iter().zip(&la).map(|(r, a)| r + a - 2.0 * log_add_exp(*a, mu)));
        let cost = |mu: f64| log_sum_exp(lr2.iter().zip(&la).map(|(r, a)| r + 2.0 * mu - 2.0 * log_add_exp(*a, mu)));

        let a_min = la.iter().copied().fold(f64::INFINITY, f64::min);
        let a_max = la.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut lo = a_min - 10.0;
        let mut step = 10.0;
        while used(lo) < target {
            lo -= step;
            step *= 2.0;
        }
        let mut hi = a_max + 10.0;
        let mut step = 10.0;
        while used(hi) > target {
            hi += step;
            step *= 2.0;
        }
        for _ in 0..BISECTION_STEPS {
            if hi - lo <= 1e-12 * (1.0 + hi.abs()) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if used(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // `hi` is on the feasible side, so its cost is attained.
        Ok(finish(fixed + cost(hi).exp()))
    }

    /// `z = u + scale^{-1}·S(v − map(u))` maps exactly onto `v`; it is a hit
    /// when `z` lies in the source ball.
    pub fn candidate(&self) -> Result<FiberOutcome> {
        let miss = FiberOutcome {
            hit: false,
            distance: f64::INFINITY,
        };
        let Some(mapped_u) = self.image(self.u)?.materialize() else {
            return Ok(miss);
        };
        let residual = self.v.sub(&mapped_u);
        let back = self
            .shift()
            .power_apply(&ScaledVector::from_sparse(residual), -self.map.power)
            .or_else(|e| match e {
                Error::NonInvertible { .. } => self
                    .shift()
                    .right_inverse_apply(&self.v.sub(&mapped_u), self.map.power.unsigned_abs()),
                other => Err(other),
            })?
            .mul(self.map.scale.inv());
        let step_log = self.setup.space.log_norm_scaled(&back)?;
        let Some(z_minus_u) = back.materialize() else {
            return Ok(miss);
        };
        let z = self.u.add(&z_minus_u);
        let distance = self.image_distance(&z)?;
        Ok(FiberOutcome {
            hit: step_log < self.du.ln() && distance < self.dv,
            distance,
        })
    }

    /// Draw points uniformly from the source ball (restricted to the
    /// coordinates that affect the image) and report whether each one lands
    /// in the target ball. Used to cross-check [`FiberHitProblem::exact`].
    pub fn sampled_hits(&self, count: usize, seed: u64) -> Result<Vec<bool>> {
        let p = self.map.power;
        let mut coords: Vec<i64> = self.v.iter().map(|(j, _)| j + p).collect();
        coords.extend(self.u.iter().map(|(m, _)| m));
        if self.shift().side() == Side::Unilateral {
            coords.retain(|&m| m >= 1);
        }
        coords.sort_unstable();
        coords.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 2 * coords.len().max(1);
        (0..count)
            .map(|_| {
                let dir: Vec<Complex64> = coords
                    .iter()
                    .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                    .collect();
                let len = dir.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let radius = self.du * rng.gen::<f64>().powf(1.0 / dim as f64) * (1.0 - 1e-12);
                let d = SparseVector::from_entries(coords.iter().zip(&dir).map(|(&m, z)| (m, z * (radius / len))));
                Ok(self.image_distance(&self.u.add(&d))? < self.dv)
            })
            .collect()
    }
}

/// Hit times inside `[0, horizon]` with their statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingSet {
    pub horizon: u64,
    pub hits: Vec<u64>,
    pub stats: HitStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitStats {
    pub max_gap: Option<u64>,
    pub max_run: u64,
    /// Start of the terminal run `[n₀, N]`, when `n₀ ≤ N/2`.
    pub cofinite_tail_start: Option<u64>,
}

fn longest_run(hits: &[u64]) -> u64 {
    let mut best = 0;
    let mut run = 0;
    for (i, &h) in hits.iter().enumerate() {
        run = if i > 0 && hits[i - 1] + 1 == h { run + 1 } else { 1 };
        best = best.max(run);
    }
    best
}

impl HittingSet {
    pub fn new(horizon: u64, mut hits: Vec<u64>) -> Self {
        hits.sort_unstable();
        hits.dedup();
        hits.retain(|&n| n <= horizon);
        let stats = Self::compute_stats(horizon, &hits);
        Self { horizon, hits, stats }
    }

    fn compute_stats(horizon: u64, hits: &[u64]) -> HitStats {
        let mut tail = None;
        if hits.last() == Some(&horizon) {
            let mut start = horizon;
            for w in hits.windows(2).rev() {
                if w[1] - w[0] != 1 {
                    break;
                }
                start = w[0];
            }
            if start <= horizon / 2 {
                tail = Some(start);
            }
        }
        HitStats {
            max_gap: hits.windows(2).map(|w| w[1] - w[0]).max(),
            max_run: longest_run(hits),
            cofinite_tail_start: tail,
        }
    }

    /// Stats recomputed from the hit list alone.
    pub fn recompute_stats(&self) -> HitStats {
        Self::compute_stats(self.horizon, &self.hits)
    }

    pub fn contains(&self, n: u64) -> bool {
        self.hits.binary_search(&n).is_ok()
    }

    pub fn intersect(&self, other: &HittingSet) -> HittingSet {
        let horizon = self.horizon.min(other.horizon);
        let hits = self.hits.iter().copied().filter(|n| other.contains(*n)).collect();
        HittingSet::new(horizon, hits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunAtPrefix {
    pub prefix: u64,
    pub longest_run: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    /// Longest run of consecutive hits inside `[0, N/8]`, `[0, N/4]`,
    /// `[0, N/2]`, `[0, N]`.
    pub thick_witness_runs: Vec<RunAtPrefix>,
    /// Least `M` such that every length-`M` block of `[1, N]` contains a hit,
    /// when already valid on `[1, N/2]`.
    pub syndetic_bound: Option<u64>,
    pub cofinite_tail: Option<u64>,
}

pub fn classify(set: &HittingSet) -> Classification {
    let n = set.horizon;
    let mut prefixes: Vec<u64> = [n / 8, n / 4, n / 2, n].into_iter().filter(|&p| p >= 1).collect();
    prefixes.dedup();
    let thick_witness_runs = prefixes
        .into_iter()
        .map(|prefix| {
            let inside: Vec<u64> = set.hits.iter().copied().take_while(|&h| h <= prefix).collect();
            RunAtPrefix {
                prefix,
                longest_run: longest_run(&inside),
            }
        })
        .collect();
    let positive: Vec<u64> = set.hits.iter().copied().filter(|&h| h >= 1).collect();
    Classification {
        thick_witness_runs,
        syndetic_bound: stats_of_terms(&positive, n).syndetic_bound_within_horizon,
        cofinite_tail: set.stats.cofinite_tail_start,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitOptions {
    pub base_samples: usize,
}

impl Default for HitOptions {
    fn default() -> Self {
        Self {
            base_samples: DEFAULT_BASE_SAMPLES,
        }
    }
}

/// One row of a hitting scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRow {
    pub n: u64,
    pub hit: bool,
    /// Sampled base point whose orbit reaches the target cell at time `n`
    /// (the one that produced the hit, if any).
    pub base_witness: Option<BasePoint>,
    pub fiber_distance: f64,
    /// `log |scale|` of the fiber map used for the witness.
    pub log_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingReport {
    pub mode: HitMode,
    pub set: HittingSet,
    pub rows: Vec<HitRow>,
}

/// `N(U, V) ∩ [0, N]`: `n` is a hit when some sampled `a ∈ U.base` has
/// `f^n a ∈ V.base` and the fiber map at `(a, n)` carries `U.fiber` into
/// `V.fiber`.
pub fn hitting_set<S: SkewProduct>(
    skew: &S,
    u: &ProductBox,
    v: &ProductBox,
    horizon: u64,
    opts: &HitOptions,
) -> Result<HittingReport> {
    let base = skew.base();
    let samples = base.ball_grid(&u.base.center, u.base.radius, opts.base_samples)?;
    base.check_point(&v.base.center)?;
    let side = skew.fiber().shift.side();
    if side == Side::Unilateral && (u.fiber.center.min_index() < Some(1) && !u.fiber.center.is_empty()) {
        return Err(Error::invalid("fiber centers of a unilateral space need indices ≥ 1"));
    }

    // per sample: (point at n is in V.base, fiber map at n)
    let orbits: Vec<Vec<(bool, FiberMap)>> = samples
        .par_iter()
        .map(|a| {
            let maps = skew.fiber_maps(a, horizon)?;
            let mut point = *a;
            let mut out = Vec::with_capacity(maps.len());
            for (n, map) in maps.into_iter().enumerate() {
                let inside = base.distance(&point, &v.base.center)? < v.base.radius;
                out.push((inside, map));
                if (n as u64) < horizon {
                    point = base.step(&point)?;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let fiber = skew.fiber();
    let mode = if fiber.space.is_plain_l2() {
        HitMode::Exact
    } else {
        HitMode::Candidate
    };
    let rows: Vec<HitRow> = (0..=horizon)
        .into_par_iter()
        .map(|n| {
            let mut cache: HashMap<(i64, u64, u64), FiberOutcome> = HashMap::new();
            let mut best: Option<(usize, FiberOutcome, FiberMap)> = None;
            for (s, orbit) in orbits.iter().enumerate() {
                let (inside, map) = orbit[n as usize];
                if !inside {
                    continue;
                }
                let key = (map.power, map.scale.log_mag.to_bits(), map.scale.phase.to_bits());
                let outcome = match cache.get(&key) {
                    Some(o) => *o,
                    None => {
                        let o = FiberHitProblem {
                            setup: fiber,
                            map,
                            u: &u.fiber.center,
                            du: u.fiber.radius,
                            v: &v.fiber.center,
                            dv: v.fiber.radius,
                        }
                        .solve()?;
                        cache.insert(key, o);
                        o
                    }
                };
                let better = match &best {
                    None => true,
                    Some((_, b, _)) => !b.hit && (outcome.hit || outcome.distance < b.distance),
                };
                if better {
                    best = Some((s, outcome, map));
                }
                if outcome.hit {
                    break;
                }
            }
            Ok(match best {
                Some((s, o, map)) => HitRow {
                    n,
                    hit: o.hit,
                    base_witness: Some(samples[s]),
                    fiber_distance: o.distance,
                    log_scale: map.scale.log_mag,
                },
                None => HitRow {
                    n,
                    hit: false,
                    base_witness: None,
                    fiber_distance: f64::INFINITY,
                    log_scale: f64::NAN,
                },
            })
        })
        .collect::<Result<_>>()?;

    let hits = rows.iter().filter(|r| r.hit).map(|r| r.n).collect();
    Ok(HittingReport {
        mode,
        set: HittingSet::new(horizon, hits),
        rows,
    })
}

/// Hit times of `P × P` for the box pairs `(U1 × U2, V1 × V2)`.
pub fn product_hitting<S: SkewProduct>(
    skew: &S,
    u1: &ProductBox,
    v1: &ProductBox,
    u2: &ProductBox,
    v2: &ProductBox,
    horizon: u64,
    opts: &HitOptions,
) -> Result<HittingSet> {
    let first = hitting_set(skew, u1, v1, horizon, opts)?;
    let second = hitting_set(skew, u2, v2, horizon, opts)?;
    Ok(first.set.intersect(&second.set))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Milestone {
    pub k: u32,
    pub n: u64,
    /// `(1/n) log ‖S^n e_1‖` in `ℓ²(w)`.
    pub log_rate: f64,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example1Report {
    pub gamma: f64,
    pub epsilon: f64,
    pub horizon: u64,
    pub along_rk: CriterionReport,
    pub along_full: CriterionReport,
    /// `n = r_k`, expected `γ − ε`.
    pub rk_milestones: Vec<Milestone>,
    /// `n = 2r_k + 1`, expected `2γ`.
    pub peak_milestones: Vec<Milestone>,
}

/// The unweighted backward shift on `ℓ²(w)` with the block weights: the
/// criterion holds along `(r_k)` but fails along the full sequence.
pub fn run_example1(gamma: f64, epsilon: f64, horizon: u64) -> Result<Example1Report> {
    let weights = WeightSequence::example1(gamma, epsilon)?;
    let setup = FiberSetup {
        shift: WeightedShift::unweighted(Side::Unilateral),
        space: NormSpace::weighted(weights, 2.0)?,
    };
    let d = DenseSetSpec::default();
    let opts = CriterionOptions::default();
    let along_rk = check_criterion(&setup, &IndexSequence::example1_rk(horizon)?, &d, &d, gamma, &opts)?;
    let along_full = check_criterion(&setup, &IndexSequence::full(horizon)?, &d, &d, gamma, &opts)?;

    let e1 = SparseVector::basis(1);
    let rate = |n: u64| -> Result<f64> {
        Ok(setup.space.log_norm_scaled(&setup.shift.right_inverse_apply(&e1, n)?)? / n as f64)
    };
    let mut rk_milestones = Vec::new();
    let mut peak_milestones = Vec::new();
    for k in 1.. {
        let Some(r) = example1_r(k) else { break };
        if r > horizon {
            break;
        }
        rk_milestones.push(Milestone {
            k,
            n: r,
            log_rate: rate(r)?,
            expected: gamma - epsilon,
        });
        if 2 * r < horizon {
            peak_milestones.push(Milestone {
                k,
                n: 2 * r + 1,
                log_rate: rate(2 * r + 1)?,
                expected: 2.0 * gamma,
            });
        }
    }
    Ok(Example1Report {
        gamma,
        epsilon,
        horizon,
        along_rk,
        along_full,
        rk_milestones,
        peak_milestones,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Example2Config {
    pub gamma: f64,
    /// Window centers; `None` means `r_k = 4^k` up to `criterion_horizon`.
    pub windows: Option<WindowSpec>,
    pub identity_horizon: u64,
    pub hitting_horizon: u64,
    pub criterion_horizon: u64,
}

impl Default for Example2Config {
    fn default() -> Self {
        Self {
            gamma: std::f64::consts::LN_2,
            windows: None,
            identity_horizon: 100_000,
            hitting_horizon: 10_000,
            criterion_horizon: 1_000_000_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example2Report {
    pub gamma: f64,
    pub window_centers: Vec<u64>,
    /// Non-window `n ≤ identity_horizon` checked.
    pub identity_checked: u64,
    /// Non-window `n` with `|L(n) + nγ| > 1e-9`, `L` summed term by term.
    pub identity_violations: Vec<u64>,
    pub max_identity_deviation: f64,
    pub hitting: HittingSet,
    pub non_window_hits: Vec<u64>,
    pub window_hits: usize,
    /// Criterion (non-strict) along the midpoints between windows.
    pub criterion_midpoints: Option<CriterionReport>,
    pub notes: Vec<String>,
}

/// `h ≡ e^γ` over `B_w` with window weights: outside the windows
/// `e^{nγ}·∏ w_i = 1`, so the image of `ball(0, 1/2)` never meets
/// `ball(e_1, 1/2)` there.
pub fn run_example2(config: &Example2Config) -> Result<Example2Report> {
    let gamma = config.gamma;
    let windows = config
        .windows
        .clone()
        .unwrap_or_else(|| WindowSpec::powers_of_four(config.criterion_horizon));
    let weights = WeightSequence::example2(gamma, windows.clone())?;

    let mut running = NeumaierSum::new();
    let mut identity_checked = 0;
    let mut identity_violations = Vec::new();
    let mut max_identity_deviation: f64 = 0.0;
    for n in 1..=config.identity_horizon {
        running.add(weights.log_weight(n as i64)?);
        if windows.contains(n) {
            continue;
        }
        identity_checked += 1;
        let dev = (running.value() + n as f64 * gamma).abs();
        max_identity_deviation = max_identity_deviation.max(dev);
        if dev > 1e-9 {
            identity_violations.push(n);
        }
    }

    let setup = FiberSetup {
        shift: WeightedShift::new(weights, Side::Unilateral)?,
        space: NormSpace::default(),
    };
    let skew = ScalarSkew::new(
        ScalarCocycle::exp_gamma(BaseSystem::golden_rotation(), gamma)?,
        setup.clone(),
    );
    let u = ProductBox::whole_circle(SparseVector::new(), 0.5)?;
    let v = ProductBox::whole_circle(SparseVector::basis(1), 0.5)?;
    let hitting = hitting_set(&skew, &u, &v, config.hitting_horizon, &HitOptions { base_samples: 1 })?.set;
    let non_window_hits: Vec<u64> = hitting.hits.iter().copied().filter(|&n| n >= 1 && !windows.contains(n)).collect();
    let window_hits = hitting.hits.iter().filter(|&&n| windows.contains(n)).count();

    let d = DenseSetSpec::default();
    // (ii) sits exactly on γ here and approaches it like γ·j/n for e_j, so the
    // boundary tolerance is the log-scale one used by the dichotomy.
    let opts = CriterionOptions {
        strict: false,
        tol: DEFAULT_DICHOTOMY_TOL,
        ..CriterionOptions::default()
    };
    let mut notes = vec![
        "windows are parametrized directly; the base-side hypothesis (a non-minimal base) is not checked".to_string(),
    ];
    let seq = IndexSequence::explicit(windows.midpoints(), config.criterion_horizon)?;
    let criterion_midpoints = match check_criterion(&setup, &seq, &d, &d, gamma, &opts) {
        Ok(r) => Some(r),
        Err(Error::InsufficientData { needed, got }) => {
            notes.push(format!("criterion along window midpoints: only {got} terms (need {needed})"));
            None
        }
        Err(e) => return Err(e),
    };

    Ok(Example2Report {
        gamma,
        window_centers: windows.centers().to_vec(),
        identity_checked,
        identity_violations,
        max_identity_deviation,
        hitting,
        non_window_hits,
        window_hits,
        criterion_midpoints,
        notes,
    })
}
