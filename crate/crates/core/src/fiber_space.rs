//! Fiber operators: finitely supported sequences, weight rules with
//! closed-form log prefix products, and weighted backward shifts.
//!
//! All products of weights are handled as sums of logarithms. A shift image
//! is returned as a [`ScaledVector`], a unit-ish sparse vector times a
//! log-polar scale, so that `e^{nγ}`-sized coefficients never overflow.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cocycles::LogPolar;
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, materialize, NeumaierSum};

/// Ranges shorter than this are summed term by term instead of taking a
/// difference of two prefix products.
const DIRECT_RANGE_LIMIT: i64 = 64;

/// Prefix products of example2 weights are checked against summation up to
/// this index when the sequence is built.
const EXAMPLE2_SELF_CHECK: u64 = 1 << 16;

/// Tiling of the example1 branches is checked up to this index.
const EXAMPLE1_TILING_CHECK: u64 = 1 << 16;

/// A finitely supported complex sequence. Zero coefficients are never stored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(into = "Vec<(i64, f64, f64)>", from = "Vec<(i64, f64, f64)>")]
pub struct SparseVector {
    entries: BTreeMap<i64, Complex64>,
}

impl From<SparseVector> for Vec<(i64, f64, f64)> {
    fn from(v: SparseVector) -> Self {
        v.entries.into_iter().map(|(i, z)| (i, z.re, z.im)).collect()
    }
}

impl From<Vec<(i64, f64, f64)>> for SparseVector {
    fn from(t: Vec<(i64, f64, f64)>) -> Self {
        SparseVector::from_entries(t.into_iter().map(|(i, re, im)| (i, Complex64::new(re, im))))
    }
}

impl SparseVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// `e_i`.
    pub fn basis(i: i64) -> Self {
        Self::from_entries([(i, Complex64::new(1.0, 0.0))])
    }

    /// Later duplicates overwrite earlier ones; zeros are dropped.
    pub fn from_entries<I: IntoIterator<Item = (i64, Complex64)>>(entries: I) -> Self {
        let mut v = Self::new();
        for (i, z) in entries {
            v.set(i, z);
        }
        v
    }

    pub fn from_real(entries: &[(i64, f64)]) -> Self {
        Self::from_entries(entries.iter().map(|&(i, x)| (i, Complex64::new(x, 0.0))))
    }

    pub fn set(&mut self, i: i64, z: Complex64) {
        if z == Complex64::new(0.0, 0.0) {
            self.entries.remove(&i);
        } else {
            self.entries.insert(i, z);
        }
    }

    pub fn get(&self, i: i64) -> Complex64 {
        self.entries.get(&i).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        self.entries.iter().map(|(&i, &z)| (i, z))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn min_index(&self) -> Option<i64> {
        self.entries.keys().next().copied()
    }

    pub fn max_index(&self) -> Option<i64> {
        self.entries.keys().next_back().copied()
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self::from_entries(self.iter().map(|(i, z)| (i, z * c)))
    }

    pub fn add(&self, other: &SparseVector) -> Self {
        let mut out = self.clone();
        for (i, z) in other.iter() {
            out.set(i, out.get(i) + z);
        }
        out
    }

    pub fn sub(&self, other: &SparseVector) -> Self {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    fn check_unilateral(&self) -> Result<()> {
        match self.min_index() {
            Some(i) if i < 1 => Err(Error::invalid(format!(
                "index {i} is outside a unilateral sequence space (indices start at 1)"
            ))),
            _ => Ok(()),
        }
    }
}

/// A sparse vector multiplied by a log-polar scale.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScaledVector {
    pub scale: LogPolar,
    pub vector: SparseVector,
}

impl ScaledVector {
    pub fn from_sparse(vector: SparseVector) -> Self {
        Self {
            scale: LogPolar::ONE,
            vector,
        }
    }

    /// Build from per-coordinate log-polar values; the largest magnitude is
    /// pulled into the scale.
    pub fn from_log_entries<I: IntoIterator<Item = (i64, LogPolar)>>(entries: I) -> Self {
        let entries: Vec<(i64, LogPolar)> = entries
            .into_iter()
            .filter(|(_, lp)| lp.log_mag != f64::NEG_INFINITY)
            .collect();
        let top = entries.iter().map(|(_, lp)| lp.log_mag).fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return Self::default();
        }
        let vector = SparseVector::from_entries(
            entries
                .iter()
                .map(|&(i, lp)| (i, Complex64::from_polar((lp.log_mag - top).exp(), lp.phase))),
        );
        Self {
            scale: LogPolar::new(top, 0.0),
            vector,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.vector.is_empty()
    }

    /// Same scale family with entries `(target, z, c)` meaning `z·e^c` at
    /// `target`. The largest `c` moves into the scale; entries sharing it
    /// are copied bit for bit.
    fn rescaled(&self, moved: Vec<(i64, Complex64, f64)>) -> Self {
        let top = moved
            .iter()
            .map(|&(_, _, c)| c)
            .fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return Self::default();
        }
        let vector = SparseVector::from_entries(moved.into_iter().filter(|&(_, _, c)| c != f64::NEG_INFINITY).map(
            |(t, z, c)| {
                if c == top {
                    (t, z)
                } else {
                    (t, z * (c - top).exp())
                }
            },
        ));
        Self {
            scale: LogPolar::new(self.scale.log_mag + top, self.scale.phase),
            vector,
        }
    }

    /// Log-polar value of coordinate `i`, or `None` when it is zero.
    pub fn log_entry(&self, i: i64) -> Option<LogPolar> {
        self.vector
            .entries
            .get(&i)
            .and_then(|&z| LogPolar::from_complex(z))
            .map(|lp| lp * self.scale)
    }

    pub fn iter_log(&self) -> impl Iterator<Item = (i64, LogPolar)> + '_ {
        self.vector
            .iter()
            .filter_map(move |(i, z)| LogPolar::from_complex(z).map(|lp| (i, lp * self.scale)))
    }

    pub fn mul(&self, c: LogPolar) -> Self {
        Self {
            scale: self.scale * c,
            vector: self.vector.clone(),
        }
    }

    /// Linear form, or `None` when the scale is out of double range.
    pub fn materialize(&self) -> Option<SparseVector> {
        if self.is_zero() {
            return Some(SparseVector::new());
        }
        let c = self.scale.to_complex()?;
        Some(self.vector.scale(c))
    }
}

/// Obstruction windows `{r_k − i : i = 0..k−1} ∪ {r_k + i : i = 1..k}`,
/// i.e. window `k` is `[r_k − k + 1, r_k + k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "WindowCenters", into = "WindowCenters")]
pub struct WindowSpec {
    centers: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct WindowCenters {
    centers: Vec<u64>,
}

impl TryFrom<WindowCenters> for WindowSpec {
    type Error = Error;
    fn try_from(w: WindowCenters) -> Result<Self> {
        WindowSpec::new(w.centers)
    }
}

impl From<WindowSpec> for WindowCenters {
    fn from(w: WindowSpec) -> Self {
        WindowCenters { centers: w.centers }
    }
}

impl WindowSpec {
    pub fn new(centers: Vec<u64>) -> Result<Self> {
        for (idx, &r) in centers.iter().enumerate() {
            let k = idx as u64 + 1;
            if r < k {
                return Err(Error::invalid(format!("window center r_{k} = {r} must be at least {k}")));
            }
            if r.checked_add(k).is_none() {
                return Err(Error::invalid(format!("window center r_{k} = {r} is too large")));
            }
            if idx > 0 {
                let prev_end = centers[idx - 1] + k - 1;
                if r - k + 1 < prev_end + 2 {
                    return Err(Error::invalid(format!(
                        "windows {} and {k} overlap or touch",
                        k - 1
                    )));
                }
            }
        }
        Ok(Self { centers })
    }

    pub fn empty() -> Self {
        Self { centers: Vec::new() }
    }

    /// Centers `r_k = 4^k` for every window that starts at or below `up_to`.
    pub fn powers_of_four(up_to: u64) -> Self {
        let mut centers = Vec::new();
        let mut k = 1u32;
        while let Some(r) = 4u64.checked_pow(k) {
            if r - k as u64 + 1 > up_to || r.checked_add(k as u64).is_none() {
                break;
            }
            centers.push(r);
            k += 1;
        }
        Self { centers }
    }

    pub fn centers(&self) -> &[u64] {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Inclusive bounds of window `k` (1-based).
    pub fn window(&self, k: usize) -> Option<(u64, u64)> {
        let r = *self.centers.get(k.checked_sub(1)?)?;
        Some((r - k as u64 + 1, r + k as u64))
    }

    /// `(k, r_k)` of the window containing `n`.
    pub fn locate(&self, n: u64) -> Option<(u64, u64)> {
        let pos = self.centers.partition_point(|&r| r < n);
        for idx in [pos, pos.wrapping_sub(1)] {
            if let Some(&r) = self.centers.get(idx) {
                let k = idx as u64 + 1;
                if n + k > r && n <= r + k {
                    return Some((k, r));
                }
            }
        }
        None
    }

    pub fn contains(&self, n: u64) -> bool {
        self.locate(n).is_some()
    }

    /// One index strictly between each pair of consecutive windows.
    pub fn midpoints(&self) -> Vec<u64> {
        (1..self.centers.len())
            .map(|k| {
                let (_, end) = self.window(k).unwrap();
                let (start, _) = self.window(k + 1).unwrap();
                end + (start - end) / 2
            })
            .collect()
    }
}

/// `r_k = 2·4^{k−1} − 1`, the block boundaries of the example1 weights.
pub fn example1_r(k: u32) -> Option<u64> {
    if k == 0 {
        return None;
    }
    2u64.checked_mul(4u64.checked_pow(k - 1)?).map(|x| x - 1)
}

/// Largest `k` with `r_k < n` (requires `n ≥ 2`).
fn example1_block(n: u64) -> u32 {
    let mut k = 1;
    while let Some(next) = example1_r(k + 1) {
        if next >= n {
            break;
        }
        k += 1;
    }
    k
}

/// Which branch of the example1 table covers `n ≥ 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Example1Branch {
    /// `n = r_k + i`, `i = 1..r_k+1`.
    Rising { k: u32, i: u64 },
    /// `n = 2r_k + i`, `i = 2..2r_k+3`.
    Steep { k: u32, i: u64 },
}

pub fn example1_branch(n: u64) -> Option<Example1Branch> {
    if n < 2 {
        return None;
    }
    let k = example1_block(n);
    let r = example1_r(k).unwrap();
    Some(if n <= 2 * r + 1 {
        Example1Branch::Rising { k, i: n - r }
    } else {
        Example1Branch::Steep { k, i: n - 2 * r }
    })
}

/// Walk the branch index sets and confirm they cover `[2, limit]` exactly
/// once.
fn check_example1_tiling(limit: u64) -> Result<()> {
    let mut hits = vec![0u8; limit as usize + 1];
    let mut k = 1;
    while let Some(r) = example1_r(k) {
        if r + 1 > limit {
            break;
        }
        let rising = (1..=r + 1).map(|i| r + i);
        let steep = (2..=2 * r + 3).map(|i| 2 * r + i);
        for n in rising.chain(steep).take_while(|&n| n <= limit) {
            hits[n as usize] += 1;
        }
        k += 1;
    }
    match hits.iter().enumerate().skip(2).find(|(_, &c)| c != 1) {
        Some((n, c)) => Err(Error::invalid(format!("example1 branches cover n={n} {c} times"))),
        None => Ok(()),
    }
}

/// How the weights `w_n` are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum WeightRule {
    /// `w_n = w` for every index.
    Constant { w: f64 },
    /// Block-structured weights with `r_1 = 1`, `r_{k+1} = 4r_k + 3`:
    /// `e^{(r_k−i+1)(γ−ε)}` at `r_k + i` and `e^{(2r_k+3−i)·2γ}` at
    /// `2r_k + i`; `w_1 = 1`.
    Example1 { gamma: f64, epsilon: f64 },
    /// `1` at `r_k − i`, `e^{−2γ}` at `r_k + i`, `e^{−γ}` elsewhere.
    Example2 { gamma: f64, windows: WindowSpec },
    /// Explicit values for `w_1, w_2, …`; the last value repeats.
    Table { values: Vec<f64> },
    /// `right` for indices `≥ 1`, `left` for indices `≤ 0`.
    Split { left: f64, right: f64 },
}

/// A weight sequence with closed-form log prefix products
/// `L(n) = ∑_{i=1}^n log w_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightRule", into = "WeightRule")]
pub struct WeightSequence {
    rule: WeightRule,
    table_prefix: Vec<f64>,
}

impl TryFrom<WeightRule> for WeightSequence {
    type Error = Error;
    fn try_from(rule: WeightRule) -> Result<Self> {
        WeightSequence::new(rule)
    }
}

impl From<WeightSequence> for WeightRule {
    fn from(w: WeightSequence) -> Self {
        w.rule
    }
}

fn check_weight(w: f64) -> Result<()> {
    if w.is_finite() && w >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("weights must be finite and nonnegative, got {w}")))
    }
}

fn safe_ln(w: f64) -> f64 {
    if w == 0.0 {
        f64::NEG_INFINITY
    } else {
        w.ln()
    }
}

/// `count · x`, with `0 · (−∞) = 0`.
fn times(count: f64, x: f64) -> f64 {
    if count == 0.0 {
        0.0
    } else {
        count * x
    }
}

impl WeightSequence {
    pub fn new(rule: WeightRule) -> Result<Self> {
        let mut table_prefix = Vec::new();
        match &rule {
            WeightRule::Constant { w } => check_weight(*w)?,
            WeightRule::Split { left, right } => {
                check_weight(*left)?;
                check_weight(*right)?;
            }
            WeightRule::Table { values } => {
                if values.is_empty() {
                    return Err(Error::invalid("weight table is empty"));
                }
                table_prefix.push(0.0);
                let mut acc = NeumaierSum::new();
                let mut dead = false;
                for &w in values {
                    check_weight(w)?;
                    dead |= w == 0.0;
                    acc.add(if w == 0.0 { 0.0 } else { w.ln() });
                    table_prefix.push(if dead { f64::NEG_INFINITY } else { acc.value() });
                }
            }
            WeightRule::Example1 { gamma, epsilon } => {
                if !(gamma.is_finite() && *gamma > 0.0) {
                    return Err(Error::invalid(format!("example1 needs γ > 0, got {gamma}")));
                }
                if !(epsilon.is_finite() && *epsilon > 0.0 && gamma - epsilon > 0.0) {
                    return Err(Error::invalid(format!(
                        "example1 needs 0 < ε and (γ−ε) > 0, got γ={gamma}, ε={epsilon}"
                    )));
                }
                check_example1_tiling(EXAMPLE1_TILING_CHECK)?;
            }
            WeightRule::Example2 { gamma, .. } => {
                if !(gamma.is_finite() && *gamma > 0.0) {
                    return Err(Error::invalid(format!("example2 needs γ > 0, got {gamma}")));
                }
            }
        }
        let seq = Self { rule, table_prefix };
        if let WeightRule::Example2 { .. } = seq.rule {
            seq.self_check_prefix(EXAMPLE2_SELF_CHECK)?;
        }
        Ok(seq)
    }

    pub fn constant(w: f64) -> Result<Self> {
        Self::new(WeightRule::Constant { w })
    }

    pub fn example1(gamma: f64, epsilon: f64) -> Result<Self> {
        Self::new(WeightRule::Example1 { gamma, epsilon })
    }

    pub fn example2(gamma: f64, windows: WindowSpec) -> Result<Self> {
        Self::new(WeightRule::Example2 { gamma, windows })
    }

    pub fn table(values: Vec<f64>) -> Result<Self> {
        Self::new(WeightRule::Table { values })
    }

    pub fn split(left: f64, right: f64) -> Result<Self> {
        Self::new(WeightRule::Split { left, right })
    }

    pub fn rule(&self) -> &WeightRule {
        &self.rule
    }

    /// Whether `w_i` is defined for `i ≤ 0`.
    pub fn is_two_sided(&self) -> bool {
        matches!(self.rule, WeightRule::Constant { .. } | WeightRule::Split { .. })
    }

    /// Whether `sup w_n < ∞`.
    pub fn is_bounded(&self) -> bool {
        !matches!(self.rule, WeightRule::Example1 { .. })
    }

    /// `log w_i`, `−∞` for a zero weight.
    pub fn log_weight(&self, i: i64) -> Result<f64> {
        if i < 1 && !self.is_two_sided() {
            return Err(Error::invalid(format!("weight w_{i} is undefined for a one-sided rule")));
        }
        Ok(match &self.rule {
            WeightRule::Constant { w } => safe_ln(*w),
            WeightRule::Split { left, right } => safe_ln(if i >= 1 { *right } else { *left }),
            WeightRule::Table { values } => safe_ln(values[(i as usize - 1).min(values.len() - 1)]),
            WeightRule::Example1 { gamma, epsilon } => match example1_branch(i as u64) {
                None => 0.0,
                Some(Example1Branch::Rising { k, i }) => {
                    (example1_r(k).unwrap() + 1 - i) as f64 * (gamma - epsilon)
                }
                Some(Example1Branch::Steep { k, i }) => (2 * example1_r(k).unwrap() + 3 - i) as f64 * 2.0 * gamma,
            },
            WeightRule::Example2 { gamma, windows } => match windows.locate(i as u64) {
                None => -gamma,
                Some((_, r)) if (i as u64) <= r => 0.0,
                Some(_) => -2.0 * gamma,
            },
        })
    }

    pub fn weight(&self, i: i64) -> Result<f64> {
        self.log_weight(i).map(f64::exp)
    }

    /// `L(n) = ∑_{i=1}^n log w_i`, `L(0) = 0`.
    pub fn log_prefix(&self, n: u64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let nf = n as f64;
        match &self.rule {
            WeightRule::Constant { w } => times(nf, safe_ln(*w)),
            WeightRule::Split { right, .. } => times(nf, safe_ln(*right)),
            WeightRule::Table { values } => {
                let len = values.len() as u64;
                if n <= len {
                    self.table_prefix[n as usize]
                } else {
                    self.table_prefix[len as usize] + times((n - len) as f64, safe_ln(values[len as usize - 1]))
                }
            }
            WeightRule::Example1 { gamma, epsilon } => example1_log_prefix(*gamma, *epsilon, n),
            WeightRule::Example2 { gamma, windows } => match windows.locate(n) {
                None => -nf * gamma,
                Some((k, r)) if n <= r => -gamma * (r - k) as f64,
                Some((k, r)) => -gamma * (r - k + 2 * (n - r)) as f64,
            },
        }
    }

    /// `∑_{i=lo}^{hi} log w_i` (zero for an empty range).
    pub fn log_range(&self, lo: i64, hi: i64) -> Result<f64> {
        if lo > hi {
            return Ok(0.0);
        }
        match &self.rule {
            WeightRule::Constant { w } => Ok(times((hi - lo + 1) as f64, safe_ln(*w))),
            WeightRule::Split { left, right } => {
                let pos = (hi.max(0) - lo.max(1) + 1).max(0) as f64;
                let neg = (hi.min(0) - lo + 1).max(0) as f64;
                Ok(times(pos, safe_ln(*right)) + times(neg, safe_ln(*left)))
            }
            _ => {
                if lo < 1 {
                    return Err(Error::invalid(format!("weight w_{lo} is undefined for a one-sided rule")));
                }
                if hi - lo < DIRECT_RANGE_LIMIT {
                    let mut s = NeumaierSum::new();
                    for i in lo..=hi {
                        let l = self.log_weight(i)?;
                        if l == f64::NEG_INFINITY {
                            return Ok(l);
                        }
                        s.add(l);
                    }
                    Ok(s.value())
                } else {
                    let top = self.log_prefix(hi as u64);
                    if top == f64::NEG_INFINITY {
                        return Ok(top);
                    }
                    Ok(top - self.log_prefix(lo as u64 - 1))
                }
            }
        }
    }

    /// First index in `[lo, hi]` carrying a zero weight.
    pub fn first_zero(&self, lo: i64, hi: i64) -> Result<Option<i64>> {
        if lo > hi {
            return Ok(None);
        }
        if self.log_range(lo, hi)? != f64::NEG_INFINITY {
            return Ok(None);
        }
        for i in lo..=hi {
            if self.log_weight(i)? == f64::NEG_INFINITY {
                return Ok(Some(i));
            }
        }
        Ok(None)
    }

    fn self_check_prefix(&self, limit: u64) -> Result<()> {
        let mut s = NeumaierSum::new();
        for n in 1..=limit {
            s.add(self.log_weight(n as i64)?);
            let closed = self.log_prefix(n);
            if (closed - s.value()).abs() > 1e-9 * (1.0 + closed.abs()) {
                return Err(Error::invalid(format!(
                    "closed-form prefix product disagrees with summation at n={n}"
                )));
            }
        }
        Ok(())
    }
}

/// Closed-form `L(n)` for the example1 weights.
fn example1_log_prefix(gamma: f64, epsilon: f64, n: u64) -> f64 {
    let slow = gamma - epsilon;
    let fast = 2.0 * gamma;
    // full blocks contribute (γ−ε)·r(r+1)/2 + 2γ·(2r+1)(2r+2)/2
    let mut slow_units: u128 = 0;
    let mut fast_units: u128 = 0;
    if n >= 2 {
        let last = example1_block(n);
        for k in 1..last {
            let r = example1_r(k).unwrap() as u128;
            slow_units += r * (r + 1) / 2;
            fast_units += (2 * r + 1) * (2 * r + 2) / 2;
        }
        let r = example1_r(last).unwrap() as u128;
        let n = n as u128;
        if n <= 2 * r + 1 {
            let i = n - r;
            slow_units += i * (r + 1) - i * (i + 1) / 2;
        } else {
            slow_units += r * (r + 1) / 2;
            let i = n - 2 * r;
            fast_units += (i - 1) * (4 * r + 4 - i) / 2;
        }
    }
    slow_units as f64 * slow + fast_units as f64 * fast
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Indices `1, 2, …`.
    Unilateral,
    /// Indices in `ℤ`.
    Bilateral,
}

/// `e^{c}·B_w` with `(B_w x)_j = w_j x_{j+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedShift {
    weights: WeightSequence,
    side: Side,
    #[serde(default)]
    log_scalar: f64,
}

impl WeightedShift {
    pub fn new(weights: WeightSequence, side: Side) -> Result<Self> {
        if !weights.is_bounded() {
            return Err(Error::invalid("shift weights must be bounded"));
        }
        if side == Side::Bilateral && !weights.is_two_sided() {
            return Err(Error::invalid("a bilateral shift needs weights on all of ℤ"));
        }
        Ok(Self {
            weights,
            side,
            log_scalar: 0.0,
        })
    }

    /// The plain backward shift `B`.
    pub fn unweighted(side: Side) -> Self {
        Self {
            weights: WeightSequence::constant(1.0).expect("unit weights"),
            side,
            log_scalar: 0.0,
        }
    }

    /// Multiply the operator by `e^c`.
    pub fn with_log_scalar(mut self, c: f64) -> Self {
        self.log_scalar = c;
        self
    }

    pub fn weights(&self) -> &WeightSequence {
        &self.weights
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn log_scalar(&self) -> f64 {
        self.log_scalar
    }

    fn check(&self, v: &SparseVector) -> Result<()> {
        match self.side {
            Side::Unilateral => v.check_unilateral(),
            Side::Bilateral => Ok(()),
        }
    }

    /// `log` of the factor carrying coordinate `j + n` to `j` under `T^n`:
    /// `n·c + ∑_{i=j}^{j+n−1} log w_i`.
    pub fn log_coefficient(&self, j: i64, n: u64) -> Result<f64> {
        let range = self.weights.log_range(j, j + n as i64 - 1)?;
        Ok(times(n as f64, self.log_scalar) + range)
    }

    /// `T^n v`.
    pub fn shift_apply(&self, v: &SparseVector, n: u64) -> Result<ScaledVector> {
        self.shift_apply_scaled(&ScaledVector::from_sparse(v.clone()), n)
    }

    pub fn shift_apply_scaled(&self, v: &ScaledVector, n: u64) -> Result<ScaledVector> {
        self.check(&v.vector)?;
        if n == 0 {
            return Ok(v.clone());
        }
        let shift = n as i64;
        let mut out = Vec::with_capacity(v.vector.len());
        for (m, z) in v.vector.iter() {
            let j = m - shift;
            if self.side == Side::Unilateral && j < 1 {
                continue;
            }
            out.push((j, z, self.log_coefficient(j, n)?));
        }
        Ok(v.rescaled(out))
    }

    /// `S^n v` with `(S v)_{j+1} = v_j / (e^c w_j)`, so that `T^n S^n = I`.
    pub fn right_inverse_apply(&self, v: &SparseVector, n: u64) -> Result<ScaledVector> {
        self.right_inverse_apply_scaled(&ScaledVector::from_sparse(v.clone()), n)
    }

    pub fn right_inverse_apply_scaled(&self, v: &ScaledVector, n: u64) -> Result<ScaledVector> {
        self.check(&v.vector)?;
        if n == 0 {
            return Ok(v.clone());
        }
        let shift = n as i64;
        let mut out = Vec::with_capacity(v.vector.len());
        for (j, z) in v.vector.iter() {
            let c = self.log_coefficient(j, n)?;
            if c == f64::NEG_INFINITY {
                let index = self.weights.first_zero(j, j + shift - 1)?.unwrap_or(j);
                return Err(Error::ZeroWeight { index });
            }
            out.push((j + shift, z, -c));
        }
        Ok(v.rescaled(out))
    }

    /// `T^n S^m v` as a single map. Each coordinate's coefficient is
    /// `c(j+m−n, n) − c(j, m)`, which is exactly zero when `m = n`, so the
    /// round trip is not polluted by the size of the intermediate scale.
    pub fn compose_apply(&self, v: &ScaledVector, n: u64, m: u64) -> Result<ScaledVector> {
        self.check(&v.vector)?;
        let mut out = Vec::with_capacity(v.vector.len());
        for (j, z) in v.vector.iter() {
            let up = self.log_coefficient(j, m)?;
            if up == f64::NEG_INFINITY {
                let index = self.weights.first_zero(j, j + m as i64 - 1)?.unwrap_or(j);
                return Err(Error::ZeroWeight { index });
            }
            let target = j + m as i64 - n as i64;
            if self.side == Side::Unilateral && target < 1 {
                continue;
            }
            let down = self.log_coefficient(target, n)?;
            out.push((target, z, down - up));
        }
        Ok(v.rescaled(out))
    }

    /// `T^m` for any integer `m`; negative powers need a bilateral shift.
    pub fn power_apply(&self, v: &ScaledVector, m: i64) -> Result<ScaledVector> {
        if m >= 0 {
            self.shift_apply_scaled(v, m as u64)
        } else if self.side == Side::Bilateral {
            self.right_inverse_apply_scaled(v, m.unsigned_abs())
        } else {
            Err(Error::NonInvertible {
                system: "unilateral weighted shift",
                n: m,
            })
        }
    }
}

/// The norm on the fiber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "space", rename_all = "snake_case")]
pub enum NormSpace {
    /// `ℓ^p`.
    Plain { p: f64 },
    /// `ℓ^p(w)`: `(∑ |v_i|^p w_i^p)^{1/p}`.
    Weighted { weights: WeightSequence, p: f64 },
}

impl Default for NormSpace {
    fn default() -> Self {
        NormSpace::Plain { p: 2.0 }
    }
}

impl NormSpace {
    pub fn plain(p: f64) -> Result<Self> {
        check_p(p)?;
        Ok(NormSpace::Plain { p })
    }

    pub fn weighted(weights: WeightSequence, p: f64) -> Result<Self> {
        check_p(p)?;
        Ok(NormSpace::Weighted { weights, p })
    }

    pub fn p(&self) -> f64 {
        match self {
            NormSpace::Plain { p } | NormSpace::Weighted { p, .. } => *p,
        }
    }

    pub fn is_plain_l2(&self) -> bool {
        matches!(self, NormSpace::Plain { p } if *p == 2.0)
    }

    /// `log ‖v‖`, `−∞` for the zero vector.
    pub fn log_norm(&self, v: &SparseVector) -> Result<f64> {
        let p = self.p();
        let mut terms = Vec::with_capacity(v.len());
        for (i, z) in v.iter() {
            let w = match self {
                NormSpace::Plain { .. } => 0.0,
                NormSpace::Weighted { weights, .. } => weights.log_weight(i)?,
            };
            terms.push(p * (z.norm().ln() + w));
        }
        Ok(log_sum_exp(terms) / p)
    }

    pub fn log_norm_scaled(&self, v: &ScaledVector) -> Result<f64> {
        let inner = self.log_norm(&v.vector)?;
        if inner == f64::NEG_INFINITY {
            return Ok(inner);
        }
        Ok(v.scale.log_mag + inner)
    }

    /// `‖v‖`, or `None` when it is out of double range.
    pub fn norm(&self, v: &SparseVector) -> Result<Option<f64>> {
        Ok(materialize(self.log_norm(v)?))
    }

    pub fn distance(&self, a: &SparseVector, b: &SparseVector) -> Result<f64> {
        Ok(self.norm(&a.sub(b))?.unwrap_or(f64::INFINITY))
    }
}

fn check_p(p: f64) -> Result<()> {
    if p.is_finite() && p >= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("norm exponent must lie in [1, ∞), got {p}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn lin(v: &ScaledVector) -> SparseVector {
        v.materialize().unwrap()
    }

    #[test]
    fn sparse_vector_drops_zeros_and_serializes_as_triples() {
        let v = SparseVector::from_real(&[(3, 0.0), (1, 2.0), (2, -1.0)]);
        assert_eq!(v.len(), 2);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, "[[1,2.0,0.0],[2,-1.0,0.0]]");
        let back: SparseVector = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert!(v.sub(&v).is_empty());
    }

    #[test]
    fn constant_shift_examples() {
        let t = WeightedShift::new(WeightSequence::constant(2.0).unwrap(), Side::Unilateral).unwrap();
        assert_eq!(lin(&t.shift_apply(&SparseVector::basis(2), 1).unwrap()), SparseVector::from_real(&[(1, 2.0)]));
        assert!(t.shift_apply(&SparseVector::basis(1), 1).unwrap().is_zero());
        assert_eq!(
            lin(&t.right_inverse_apply(&SparseVector::basis(1), 1).unwrap()),
            SparseVector::from_real(&[(2, 0.5)])
        );
        let v = SparseVector::from_real(&[(1, 3.0), (4, -1.5)]);
        assert_eq!(lin(&t.right_inverse_apply(&v, 0).unwrap()), v);
    }

    #[test]
    fn unilateral_rejects_nonpositive_indices() {
        let t = WeightedShift::unweighted(Side::Unilateral);
        assert!(t.shift_apply(&SparseVector::basis(0), 1).is_err());
    }

    #[test]
    fn bilateral_shift_and_negative_power() {
        let t = WeightedShift::new(WeightSequence::constant(2.0).unwrap(), Side::Bilateral).unwrap();
        let x = ScaledVector::from_sparse(SparseVector::basis(0));
        let y = t.power_apply(&x, 3).unwrap();
        let ly = lin(&y);
        assert_eq!(ly.len(), 1);
        assert!((ly.get(-3).re - 8.0).abs() < 1e-14);
        let back = t.power_apply(&y, -3).unwrap();
        assert!((lin(&back).get(0).re - 1.0).abs() < 1e-15);
        assert!(WeightedShift::new(WeightSequence::table(vec![1.0]).unwrap(), Side::Bilateral).is_err());
        assert!(WeightedShift::unweighted(Side::Unilateral).power_apply(&x, -1).is_err());
    }

    #[test]
    fn split_weights_on_both_sides() {
        let w = WeightSequence::split(0.5, 2.0).unwrap();
        assert_eq!(w.log_range(-2, 3).unwrap(), 3.0 * 2f64.ln() + 3.0 * 0.5f64.ln());
        assert!(w.log_range(-2, 3).unwrap().abs() < 1e-15);
        let oracle: f64 = (-5..=-1).map(|i| w.log_weight(i).unwrap()).sum();
        assert!((w.log_range(-5, -1).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_blocks_right_inverse() {
        let t = WeightedShift::new(WeightSequence::table(vec![1.0, 0.0, 3.0]).unwrap(), Side::Unilateral).unwrap();
        assert_eq!(
            t.right_inverse_apply(&SparseVector::basis(1), 3),
            Err(Error::ZeroWeight { index: 2 })
        );
        assert!(t.shift_apply(&SparseVector::basis(4), 3).unwrap().is_zero());
    }

    #[test]
    fn table_repeats_last_value() {
        let w = WeightSequence::table(vec![1.0, 2.0, 4.0]).unwrap();
        assert_eq!(w.weight(10).unwrap(), 4.0);
        let brute: f64 = (1..=10).map(|i| w.log_weight(i).unwrap()).sum();
        assert!((w.log_prefix(10) - brute).abs() < 1e-12);
        assert!(WeightSequence::table(vec![]).is_err());
        assert!(WeightSequence::table(vec![-1.0]).is_err());
    }

    #[test]
    fn example1_r_recursion() {
        let mut r = 1u64;
        for k in 1..=20 {
            assert_eq!(example1_r(k), Some(r));
            r = 4 * r + 3;
        }
    }

    #[test]
    fn example1_branch_values() {
        let w = WeightSequence::example1(1.0, 0.5).unwrap();
        assert_eq!(w.log_weight(1).unwrap(), 0.0);
        // r_1 = 1: n=2 rising i=1 → e^{1·0.5}; n=3 rising i=2 → e^0
        assert_eq!(w.log_weight(2).unwrap(), 0.5);
        assert_eq!(w.log_weight(3).unwrap(), 0.0);
        // steep: n=4 (i=2) → e^{3·2}, n=7 (i=5) → e^0
        assert_eq!(w.log_weight(4).unwrap(), 6.0);
        assert_eq!(w.log_weight(7).unwrap(), 0.0);
        // r_2 = 7: n=8 rising i=1 → e^{7·0.5}
        assert_eq!(w.log_weight(8).unwrap(), 3.5);
        assert!(WeightSequence::example1(1.0, 1.5).is_err());
        assert!(WeightSequence::example1(1.0, 0.0).is_err());
    }

    #[test]
    fn example1_prefix_matches_summation() {
        let w = WeightSequence::example1(1.3, 0.4).unwrap();
        let mut s = NeumaierSum::new();
        for n in 1..=20_000u64 {
            s.add(w.log_weight(n as i64).unwrap());
            let closed = w.log_prefix(n);
            assert!((closed - s.value()).abs() <= 1e-9 * closed.abs().max(1.0), "n={n}");
        }
    }

    #[test]
    fn example1_norm_milestones() {
        let gamma = 1.0;
        let eps = 0.5;
        let space = NormSpace::weighted(WeightSequence::example1(gamma, eps).unwrap(), 2.0).unwrap();
        assert_eq!(space.log_norm(&SparseVector::basis(8)).unwrap(), 3.5);
        let s = WeightedShift::unweighted(Side::Unilateral);
        let e1 = SparseVector::basis(1);
        let y = s.right_inverse_apply(&e1, 7).unwrap();
        assert_eq!(lin(&y), SparseVector::basis(8));
        for k in 1..=8 {
            let r = example1_r(k).unwrap();
            let a = space.log_norm_scaled(&s.right_inverse_apply(&e1, r).unwrap()).unwrap();
            assert_eq!(a / r as f64, gamma - eps, "k={k}");
            let m = 2 * r + 1;
            let b = space.log_norm_scaled(&s.right_inverse_apply(&e1, m).unwrap()).unwrap();
            assert_eq!(b / m as f64, 2.0 * gamma, "k={k}");
        }
    }

    #[test]
    fn window_layout() {
        let w = WindowSpec::powers_of_four(100);
        assert_eq!(w.centers(), &[4, 16, 64]);
        assert_eq!(w.window(1), Some((4, 5)));
        assert_eq!(w.window(2), Some((15, 18)));
        assert_eq!(w.locate(15), Some((2, 16)));
        assert_eq!(w.locate(19), None);
        assert_eq!(w.locate(3), None);
        assert_eq!(w.midpoints(), vec![10, 40]);
        assert!(WindowSpec::new(vec![4, 6]).is_err());
        assert!(WindowSpec::new(vec![2, 5]).is_err());
        let big = WindowSpec::powers_of_four(u64::MAX);
        assert!(big.len() >= 30);
    }

    #[test]
    fn example2_prefix_values() {
        let g = LN_2;
        let w = WeightSequence::example2(g, WindowSpec::new(vec![4]).unwrap()).unwrap();
        assert!((w.log_prefix(4) + 3.0 * g).abs() < 1e-15);
        assert!((w.log_prefix(5) + 5.0 * g).abs() < 1e-15);
        assert!((w.log_prefix(6) + 6.0 * g).abs() < 1e-15);
        let t = WeightedShift::new(w, Side::Unilateral).unwrap();
        let y = lin(&t.shift_apply(&SparseVector::basis(5), 4).unwrap());
        assert!((y.get(1).re - 0.125).abs() < 1e-15);
        assert_eq!(y.len(), 1);
    }

    #[test]
    fn example2_empty_windows_is_constant() {
        let w = WeightSequence::example2(0.7, WindowSpec::empty()).unwrap();
        for n in [1u64, 10, 1000] {
            assert!((w.log_prefix(n) + 0.7 * n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn norms() {
        let plain = NormSpace::default();
        assert_eq!(plain.norm(&SparseVector::basis(1)).unwrap(), Some(1.0));
        assert!((plain.norm(&SparseVector::from_real(&[(1, 3.0), (2, 4.0)])).unwrap().unwrap() - 5.0).abs() < 1e-14);
        assert_eq!(plain.log_norm(&SparseVector::new()).unwrap(), f64::NEG_INFINITY);
        let l1 = NormSpace::plain(1.0).unwrap();
        assert!((l1.norm(&SparseVector::from_real(&[(1, 3.0), (2, -4.0)])).unwrap().unwrap() - 7.0).abs() < 1e-14);
        assert!(NormSpace::plain(0.5).is_err());
    }

    #[test]
    fn huge_scales_stay_in_log_form() {
        let t = WeightedShift::new(WeightSequence::constant(2.0).unwrap(), Side::Unilateral).unwrap();
        let y = t.right_inverse_apply(&SparseVector::basis(1), 500).unwrap();
        assert!(y.materialize().is_some());
        let y = t.shift_apply(&SparseVector::basis(5001), 5000).unwrap();
        assert!(y.materialize().is_none());
        let lp = y.log_entry(1).unwrap();
        assert!((lp.log_mag - 5000.0 * LN_2).abs() < 1e-9);
        assert!((NormSpace::default().log_norm_scaled(&y).unwrap() - 5000.0 * LN_2).abs() < 1e-9);
    }

    #[test]
    fn log_scalar_multiplies_every_power() {
        let t = WeightedShift::unweighted(Side::Unilateral).with_log_scalar(0.25);
        let y = t.shift_apply(&SparseVector::basis(5), 4).unwrap();
        assert!((y.log_entry(1).unwrap().log_mag - 1.0).abs() < 1e-15);
        let z = t.right_inverse_apply(&SparseVector::basis(1), 4).unwrap();
        assert!((z.log_entry(5).unwrap().log_mag + 1.0).abs() < 1e-15);
    }

    #[test]
    fn compose_round_trip_is_exact_at_large_n() {
        let w = WeightSequence::example2(0.9, WindowSpec::powers_of_four(u64::MAX)).unwrap();
        let t = WeightedShift::new(w, Side::Unilateral).unwrap();
        let y = ScaledVector::from_sparse(SparseVector::from_real(&[(1, 0.3), (7, -0.8)]));
        let n = 1u64 << 40;
        let back = lin(&t.compose_apply(&y, n, n).unwrap());
        assert!((back.get(1).re - 0.3).abs() < 1e-15);
        assert!((back.get(7).re + 0.8).abs() < 1e-15);
        let small = lin(&t.compose_apply(&y, 3, 5).unwrap());
        let two_step = lin(&t.shift_apply_scaled(&t.right_inverse_apply_scaled(&y, 5).unwrap(), 3).unwrap());
        for i in 1..12 {
            assert!((small.get(i) - two_step.get(i)).norm() < 1e-12);
        }
    }

    #[test]
    fn weight_rules_round_trip_through_json() {
        let w = WeightSequence::example2(0.5, WindowSpec::powers_of_four(1000)).unwrap();
        let s = serde_json::to_string(&w).unwrap();
        assert!(s.contains("\"rule\":\"example2\""));
        let back: WeightSequence = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
        let bad: std::result::Result<WeightSequence, _> =
            serde_json::from_str(r#"{"rule":"example1","gamma":1.0,"epsilon":2.0}"#);
        assert!(bad.is_err());
    }
}
