//! Finite-horizon checks of the hypercyclicity criterion for weighted shifts.
//!
//! Every `limsup` is replaced by [`limsup_proxy`], the maximum over the last
//! half of the sampled values, and every strict inequality is reported with
//! its margin in log scale.

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fiber_space::{example1_r, NormSpace, ScaledVector, SparseVector, WeightSequence, WeightedShift};
use crate::numeric::fmt_real;

/// Fewest samples accepted by [`limsup_proxy`].
pub const MIN_PROXY_SAMPLES: usize = 8;

/// Default margin (log scale) for exactly computed examples.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Default margin when γ comes from a Birkhoff average.
pub const BIRKHOFF_TOL: f64 = 1e-2;

/// Default margin for the shift dichotomy.
pub const DEFAULT_DICHOTOMY_TOL: f64 = 1e-3;

/// Largest sequence that is materialized term by term.
pub const MAX_TERMS: u64 = 10_000_000;

/// 0-based start of the tail window `[⌈K/2⌉, K]` (1-based).
pub fn tail_start(len: usize) -> usize {
    len.div_ceil(2).saturating_sub(1)
}

/// Maximum over the tail window `[⌈K/2⌉, K]` of `K ≥ 8` values.
pub fn limsup_proxy(values: &[f64]) -> Result<f64> {
    if values.len() < MIN_PROXY_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_PROXY_SAMPLES,
            got: values.len(),
        });
    }
    Ok(values[tail_start(values.len())..]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// How the times `n_k` are generated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SequenceRule {
    /// `1, 2, 3, …`.
    Full,
    Arithmetic { start: u64, step: u64 },
    /// `r_k = 2·4^{k−1} − 1`.
    Example1Rk,
    Explicit { terms: Vec<u64> },
}

/// A strictly increasing sequence of positive integers cut at `horizon`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSequence {
    pub rule: SequenceRule,
    pub horizon: u64,
}

impl IndexSequence {
    pub fn new(rule: SequenceRule, horizon: u64) -> Result<Self> {
        let seq = Self { rule, horizon };
        seq.terms()?;
        Ok(seq)
    }

    pub fn full(horizon: u64) -> Result<Self> {
        Self::new(SequenceRule::Full, horizon)
    }

    pub fn arithmetic(start: u64, step: u64, horizon: u64) -> Result<Self> {
        Self::new(SequenceRule::Arithmetic { start, step }, horizon)
    }

    pub fn example1_rk(horizon: u64) -> Result<Self> {
        Self::new(SequenceRule::Example1Rk, horizon)
    }

    pub fn explicit(terms: Vec<u64>, horizon: u64) -> Result<Self> {
        Self::new(SequenceRule::Explicit { terms }, horizon)
    }

    pub fn with_horizon(&self, horizon: u64) -> Result<Self> {
        Self::new(self.rule.clone(), horizon)
    }

    /// All terms `≤ horizon`.
    pub fn terms(&self) -> Result<Vec<u64>> {
        let n = self.horizon;
        if n == 0 {
            return Err(Error::invalid("sequence horizon must be at least 1"));
        }
        let too_many = || Error::invalid(format!("sequence has more than {MAX_TERMS} terms below the horizon"));
        Ok(match &self.rule {
            SequenceRule::Full => {
                if n > MAX_TERMS {
                    return Err(too_many());
                }
                (1..=n).collect()
            }
            SequenceRule::Arithmetic { start, step } => {
                if *start == 0 || *step == 0 {
                    return Err(Error::invalid("arithmetic sequences need start ≥ 1 and step ≥ 1"));
                }
                if *start <= n && (n - start) / step >= MAX_TERMS {
                    return Err(too_many());
                }
                (*start..=n).step_by(*step as usize).collect()
            }
            SequenceRule::Example1Rk => (1..).map_while(example1_r).take_while(|&r| r <= n).collect(),
            SequenceRule::Explicit { terms } => {
                if terms.first() == Some(&0) || terms.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::invalid("explicit sequences must be strictly increasing positive integers"));
                }
                terms.iter().copied().take_while(|&t| t <= n).collect()
            }
        })
    }

    /// Whether the gaps are bounded by construction.
    pub fn has_bounded_gaps(&self) -> bool {
        matches!(self.rule, SequenceRule::Full | SequenceRule::Arithmetic { .. })
    }
}

/// Gap structure of a sequence inside `[1, N]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceStats {
    pub horizon: u64,
    pub terms: usize,
    /// Largest difference between consecutive terms.
    pub max_gap: Option<u64>,
    /// Start of the terminal run `[n₀, N]`, when `N` itself is a term.
    pub tail_run_start: Option<u64>,
    /// The terminal run starts in the first half of `[1, N]`.
    pub is_cofinite_tail: bool,
    /// Least `M` with every length-`M` block of `[1, N]` meeting the
    /// sequence, reported only when the same `M` already works on
    /// `[1, ⌊N/2⌋]`.
    pub syndetic_bound_within_horizon: Option<u64>,
}

/// One more than the longest run of non-members of `terms` inside `[1, n]`.
fn block_bound(terms: &[u64], n: u64) -> Option<u64> {
    let inside: Vec<u64> = terms.iter().copied().take_while(|&t| t <= n).collect();
    let (&first, &last) = (inside.first()?, inside.last()?);
    let mut longest = (first - 1).max(n - last);
    for w in inside.windows(2) {
        longest = longest.max(w[1] - w[0] - 1);
    }
    Some(longest + 1)
}

/// Stats of a sorted, strictly increasing list of terms inside `[1, horizon]`.
pub fn stats_of_terms(terms: &[u64], horizon: u64) -> SequenceStats {
    let max_gap = terms.windows(2).map(|w| w[1] - w[0]).max();
    let tail_run_start = if terms.last() == Some(&horizon) {
        let mut start = horizon;
        for w in terms.windows(2).rev() {
            if w[1] - w[0] != 1 {
                break;
            }
            start = w[0];
        }
        Some(start)
    } else {
        None
    };
    let whole = block_bound(terms, horizon);
    let half = block_bound(terms, horizon / 2);
    SequenceStats {
        horizon,
        terms: terms.len(),
        max_gap,
        tail_run_start,
        is_cofinite_tail: tail_run_start.is_some_and(|s| s <= horizon / 2),
        syndetic_bound_within_horizon: if whole.is_some() && whole == half { whole } else { None },
    }
}

pub fn sequence_stats(seq: &IndexSequence) -> Result<SequenceStats> {
    Ok(stats_of_terms(&seq.terms()?, seq.horizon))
}

/// Finite family standing in for a dense set of finitely supported vectors:
/// `e_1, …, e_m` followed by seeded random unit vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenseSetSpec {
    pub basis: usize,
    pub random: usize,
    pub max_index: i64,
    pub max_support: usize,
    pub seed: u64,
}

impl Default for DenseSetSpec {
    fn default() -> Self {
        Self {
            basis: 8,
            random: 8,
            max_index: 32,
            max_support: 4,
            seed: 0,
        }
    }
}

impl DenseSetSpec {
    pub fn basis_only(m: usize) -> Self {
        Self {
            basis: m,
            random: 0,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn generate(&self) -> Result<Vec<SparseVector>> {
        if self.max_index < 1 || self.max_support == 0 || self.max_support as i64 > self.max_index {
            return Err(Error::invalid("dense set needs 1 ≤ max_support ≤ max_index"));
        }
        let mut out: Vec<SparseVector> = (1..=self.basis as i64).map(SparseVector::basis).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        while out.len() < self.basis + self.random {
            let support = rng.gen_range(1..=self.max_support);
            let idx = sample(&mut rng, self.max_index as usize, support);
            let v = SparseVector::from_entries(idx.iter().map(|i| {
                let z = Complex64::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
                (i as i64 + 1, z)
            }));
            let norm = v.iter().map(|(_, z)| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-3 {
                out.push(v.scale(Complex64::new(1.0 / norm, 0.0)));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// `limsup ‖T^{n_k} x‖^{1/n_k} < e^{−γ}`.
    I,
    /// `limsup ‖S_{n_k} y‖^{1/n_k} < e^{γ}`.
    Ii,
    /// `‖T^{n_k} S_{n_k} y − y‖ → 0`.
    Iii,
}

impl Condition {
    pub fn label(&self) -> &'static str {
        match self {
            Condition::I => "i",
            Condition::Ii => "ii",
            Condition::Iii => "iii",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionOptions {
    /// Required margin, log scale.
    pub tol: f64,
    /// Largest tail residual accepted for condition (iii).
    pub residual_tol: f64,
    /// Strict inequalities need `margin > tol`; otherwise `margin ≥ −tol`
    /// suffices.
    pub strict: bool,
}

impl Default for CriterionOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            residual_tol: 1e-9,
            strict: true,
        }
    }
}

/// Tail statistic of one condition for one test vector. For (i) and (ii)
/// `log_value` is `max (1/n_k) log ‖·‖`; for (iii) it is the log of the
/// largest residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionStat {
    pub vector_id: String,
    pub condition: Condition,
    /// 1-based position in the sequence where the tail maximum occurs.
    pub k: usize,
    pub n_k: u64,
    pub log_value: f64,
    pub threshold_log: f64,
    /// `threshold_log − log_value`.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub worst_log_value: f64,
    pub worst_margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    TransitiveCertificate,
    WeaklyMixingCertificate,
    MixingCertificate,
    Fail {
        condition: Condition,
        witness: String,
        n_k: u64,
        log_value: f64,
    },
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        !matches!(self, Verdict::Fail { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Verdict::TransitiveCertificate => "transitive_certificate",
            Verdict::WeaklyMixingCertificate => "weakly_mixing_certificate",
            Verdict::MixingCertificate => "mixing_certificate",
            Verdict::Fail { .. } => "fail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub gamma: f64,
    pub options: CriterionOptions,
    pub sequence: SequenceStats,
    pub rows: Vec<ConditionStat>,
    pub summary: Vec<ConditionSummary>,
    pub verdict: Verdict,
}

impl CriterionReport {
    pub fn row(&self, vector_id: &str, condition: Condition) -> Option<&ConditionStat> {
        self.rows
            .iter()
            .find(|r| r.vector_id == vector_id && r.condition == condition)
    }

    pub fn summary_for(&self, condition: Condition) -> Option<&ConditionSummary> {
        self.summary.iter().find(|s| s.condition == condition)
    }

    pub const CSV_HEADER: &'static str = "vector_id,condition,k,n_k,log_value,threshold_log,margin";

    /// Body rows, one per (vector, condition).
    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{}",
                    r.vector_id,
                    r.condition.label(),
                    r.k,
                    r.n_k,
                    fmt_real(r.log_value),
                    fmt_real(r.threshold_log),
                    fmt_real(r.margin)
                )
            })
            .collect()
    }
}

/// Fiber operator, its right inverse and the norm they are measured in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberSetup {
    pub shift: WeightedShift,
    pub space: NormSpace,
}

fn passes(margin: f64, opts: &CriterionOptions) -> bool {
    if opts.strict {
        margin > opts.tol
    } else {
        margin >= -opts.tol
    }
}

fn tail_stat(
    vector_id: &str,
    condition: Condition,
    terms: &[u64],
    values: &[f64],
    threshold_log: f64,
    opts: &CriterionOptions,
) -> ConditionStat {
    let start = tail_start(terms.len());
    let (offset, &log_value) = values
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |best, cur| if *cur.1 > *best.1 { cur } else { best });
    let margin = threshold_log - log_value;
    ConditionStat {
        vector_id: vector_id.to_string(),
        condition,
        k: start + offset + 1,
        n_k: terms[start + offset],
        log_value,
        threshold_log,
        margin,
        passed: match condition {
            Condition::Iii => log_value <= threshold_log,
            _ => passes(margin, opts),
        },
    }
}

/// Evaluate (i) on `d1` and (ii), (iii) on `d2` along the tail of `seq`.
/// `S_{n}` is the `n`-th power of the shift's right inverse.
pub fn check_criterion(
    setup: &FiberSetup,
    seq: &IndexSequence,
    d1: &DenseSetSpec,
    d2: &DenseSetSpec,
    gamma: f64,
    opts: &CriterionOptions,
) -> Result<CriterionReport> {
    if !gamma.is_finite() {
        return Err(Error::invalid("γ must be finite"));
    }
    let terms = seq.terms()?;
    if terms.len() < MIN_PROXY_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_PROXY_SAMPLES,
            got: terms.len(),
        });
    }
    let tail = &terms[tail_start(terms.len())..];
    let xs = d1.generate()?;
    let ys = d2.generate()?;
    let shift = &setup.shift;
    let space = &setup.space;

    let rows_i: Vec<Vec<ConditionStat>> = xs
        .par_iter()
        .enumerate()
        .map(|(id, x)| {
            let values = tail
                .iter()
                .map(|&n| Ok(space.log_norm_scaled(&shift.shift_apply(x, n)?)? / n as f64))
                .collect::<Result<Vec<f64>>>()?;
            Ok(vec![tail_stat(&format!("d1:{id}"), Condition::I, &terms, &values, -gamma, opts)])
        })
        .collect::<Result<_>>()?;

    let residual_log_tol = opts.residual_tol.ln();
    let rows_ii: Vec<Vec<ConditionStat>> = ys
        .par_iter()
        .enumerate()
        .map(|(id, y)| {
            let scaled = ScaledVector::from_sparse(y.clone());
            let mut growth = Vec::with_capacity(tail.len());
            let mut residual = Vec::with_capacity(tail.len());
            for &n in tail {
                let sy = shift.right_inverse_apply_scaled(&scaled, n)?;
                growth.push(space.log_norm_scaled(&sy)? / n as f64);
                let back = shift.compose_apply(&scaled, n, n)?;
                let r = match back.materialize() {
                    Some(b) => space.log_norm(&b.sub(y))?,
                    None => f64::INFINITY,
                };
                residual.push(r);
            }
            let vid = format!("d2:{id}");
            Ok(vec![
                tail_stat(&vid, Condition::Ii, &terms, &growth, gamma, opts),
                tail_stat(&vid, Condition::Iii, &terms, &residual, residual_log_tol, opts),
            ])
        })
        .collect::<Result<_>>()?;

    let rows: Vec<ConditionStat> = rows_i.into_iter().chain(rows_ii).flatten().collect();
    let summary = [Condition::I, Condition::Ii, Condition::Iii]
        .into_iter()
        .filter_map(|c| {
            let of_c: Vec<&ConditionStat> = rows.iter().filter(|r| r.condition == c).collect();
            if of_c.is_empty() {
                return None;
            }
            Some(ConditionSummary {
                condition: c,
                worst_log_value: of_c.iter().map(|r| r.log_value).fold(f64::NEG_INFINITY, f64::max),
                worst_margin: of_c.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min),
                passed: of_c.iter().all(|r| r.passed),
            })
        })
        .collect();

    let sequence = stats_of_terms(&terms, seq.horizon);
    let verdict = match rows.iter().find(|r| !r.passed) {
        Some(r) => Verdict::Fail {
            condition: r.condition,
            witness: r.vector_id.clone(),
            n_k: r.n_k,
            log_value: r.log_value,
        },
        None if seq.has_bounded_gaps() => Verdict::MixingCertificate,
        None if sequence.syndetic_bound_within_horizon.is_some() => Verdict::WeaklyMixingCertificate,
        None => Verdict::TransitiveCertificate,
    };
    Ok(CriterionReport {
        gamma,
        options: *opts,
        sequence,
        rows,
        summary,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Above,
    Below,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub horizon: u64,
    /// Tail maximum of `L(n)/n = log (∏_{i≤n} w_i)^{1/n}`.
    pub log_proxy: f64,
    pub threshold_log: f64,
    pub tol: f64,
    pub comparison: Comparison,
    pub implied_verdict: String,
}

/// Compare `limsup (∏ w_i)^{1/n}` with `e^{−γ}`.
pub fn shift_dichotomy(w: &WeightSequence, gamma: f64, horizon: u64, tol: f64) -> Result<DichotomyReport> {
    if horizon < 1000 {
        return Err(Error::invalid("the dichotomy needs a horizon of at least 1000"));
    }
    if horizon > MAX_TERMS {
        return Err(Error::invalid(format!("dichotomy horizon above {MAX_TERMS}")));
    }
    let values: Vec<f64> = (1..=horizon).map(|n| w.log_prefix(n) / n as f64).collect();
    let log_proxy = limsup_proxy(&values)?;
    let threshold_log = -gamma;
    let comparison = if log_proxy > threshold_log + tol {
        Comparison::Above
    } else if log_proxy < threshold_log - tol {
        Comparison::Below
    } else {
        Comparison::Inconclusive
    };
    let implied_verdict = match comparison {
        Comparison::Above => "P is weakly mixing",
        Comparison::Below => "P is not weakly mixing, or its transitive points form a null set",
        Comparison::Inconclusive => "no implication at this horizon",
    }
    .to_string();
    Ok(DichotomyReport {
        horizon,
        log_proxy,
        threshold_log,
        tol,
        comparison,
        implied_verdict,
    })
}
