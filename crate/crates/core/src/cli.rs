//! Batch runner: read a JSON experiment config, run one command, write a
//! CSV or JSON report.
//!
//! Exit codes: `0` success, `1` I/O failure, `2` invalid config or
//! parameters, `3` numerical singularity.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, ValueEnum};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::base_systems::{Alpha, BasePoint, BaseSystem};
use crate::cocycles::{
    CocycleIdentity, CylinderFunction, GammaMode, IntGenerator, IntegerCocycle, ScalarCocycle, ScalarGenerator,
    DEFAULT_GROWTH_THRESHOLD,
};
use crate::criterion::{
    check_criterion, shift_dichotomy, Condition, CriterionOptions, CriterionReport, DenseSetSpec, FiberSetup,
    IndexSequence, SequenceRule, DEFAULT_DICHOTOMY_TOL, DEFAULT_TOL,
};
use crate::error::{Error, Result};
use crate::fiber_space::{NormSpace, Side, SparseVector, WeightSequence, WeightedShift, WindowSpec};
use crate::numeric::fmt_real;
use crate::skew_lab::{
    classify, furstenberg_density, hitting_set, run_example1, run_example2, Example2Config, HitOptions, HitRow,
    HittingReport, IntSkew, ProductBox, ScalarSkew, SkewProduct, DEFAULT_BASE_SAMPLES,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Gamma,
    Cocycle,
    Coboundary,
    Criterion,
    Dichotomy,
    Hitting,
    Example1,
    Example2,
    Furstenberg,
    Intskew,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gamma => "gamma",
            Command::Cocycle => "cocycle",
            Command::Coboundary => "coboundary",
            Command::Criterion => "criterion",
            Command::Dichotomy => "dichotomy",
            Command::Hitting => "hitting",
            Command::Example1 => "example1",
            Command::Example2 => "example2",
            Command::Furstenberg => "furstenberg",
            Command::Intskew => "intskew",
        }
    }

    /// Horizon used when the config gives none.
    pub fn default_horizon(&self) -> u64 {
        match self {
            Command::Gamma => 1_000_000,
            Command::Cocycle => 50,
            Command::Coboundary => 10_000,
            Command::Criterion | Command::Dichotomy | Command::Example1 | Command::Furstenberg => 100_000,
            Command::Hitting => 200,
            Command::Example2 => 10_000,
            Command::Intskew => 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseSpec {
    Rotation { alpha: f64 },
    GoldenRotation,
    RationalRotation { num: i64, den: i64 },
    Doubling,
    Odometer { depth: u8 },
    TorusSkew { alpha: f64 },
}

impl BaseSpec {
    pub fn build(&self) -> Result<BaseSystem> {
        match *self {
            BaseSpec::Rotation { alpha } => BaseSystem::rotation(alpha),
            BaseSpec::GoldenRotation => Ok(BaseSystem::golden_rotation()),
            BaseSpec::RationalRotation { num, den } => BaseSystem::rotation_with(Alpha::Rational { num, den }),
            BaseSpec::Doubling => Ok(BaseSystem::doubling()),
            BaseSpec::Odometer { depth } => BaseSystem::odometer(depth),
            BaseSpec::TorusSkew { alpha } => BaseSystem::torus_skew(Alpha::Irrational(alpha)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarSpec {
    /// `h ≡ e^γ`.
    ExpGamma { gamma: f64 },
    Constant {
        re: f64,
        #[serde(default)]
        im: f64,
    },
    /// `h(a) = p + q cos(2πa)`.
    CosProfile { p: f64, q: f64 },
    /// Values `[re, im]` on the `2^depth` odometer cylinders.
    Cylinder { depth: u8, values: Vec<[f64; 2]> },
}

impl ScalarSpec {
    pub fn build(&self, base: BaseSystem) -> Result<ScalarCocycle> {
        match self {
            ScalarSpec::ExpGamma { gamma } => ScalarCocycle::exp_gamma(base, *gamma),
            ScalarSpec::Constant { re, im } => ScalarCocycle::constant(base, Complex64::new(*re, *im)),
            ScalarSpec::CosProfile { p, q } => ScalarCocycle::cos_profile(base, *p, *q),
            ScalarSpec::Cylinder { depth, values } => ScalarCocycle::new(
                base,
                ScalarGenerator::Cylinder {
                    depth: *depth,
                    values: values.iter().map(|[re, im]| Complex64::new(*re, *im)).collect(),
                },
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntSpec {
    Constant { value: i64 },
    /// `h̃ = g∘f − g` with `g` given on depth-`depth` cylinders.
    OdometerCoboundary { depth: u8, g: Vec<i64> },
    Table { depth: u8, values: Vec<i64> },
}

impl IntSpec {
    pub fn build(&self, base: BaseSystem) -> Result<IntegerCocycle> {
        match self {
            IntSpec::Constant { value } => IntegerCocycle::new(base, IntGenerator::Constant { value: *value }),
            IntSpec::OdometerCoboundary { depth, g } => IntegerCocycle::new(
                base,
                IntGenerator::OdometerCoboundary {
                    g: CylinderFunction::new(*depth, g.clone())?,
                },
            ),
            IntSpec::Table { depth, values } => IntegerCocycle::new(
                base,
                IntGenerator::Table {
                    table: CylinderFunction::new(*depth, values.clone())?,
                },
            ),
        }
    }

    fn max_abs_g(&self) -> Option<i64> {
        match self {
            IntSpec::OdometerCoboundary { g, .. } => g.iter().map(|x| x.abs()).max(),
            _ => None,
        }
    }
}

/// `base cell × fiber ball`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub base_center: BasePoint,
    /// Radius `≥ 1/2` covers the whole circle.
    pub base_radius: f64,
    /// `[index, re, im]` triples.
    #[serde(default)]
    pub fiber_center: SparseVector,
    pub fiber_radius: f64,
}

impl BoxSpec {
    fn build(&self) -> Result<ProductBox> {
        ProductBox::new(self.base_center, self.base_radius, self.fiber_center.clone(), self.fiber_radius)
    }
}

/// `(U, V)`, plus a second pair for product hitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxPairs {
    pub u: BoxSpec,
    pub v: BoxSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u2: Option<BoxSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v2: Option<BoxSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Quadrature,
    Birkhoff,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

/// One experiment. Only the fields the command reads need to be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<BaseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar_cocycle: Option<ScalarSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub int_cocycle: Option<IntSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightSequence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<Side>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<NormSpace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<SequenceRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<Estimator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<BasePoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strict: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<BoxPairs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub windows: Option<WindowSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion_horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

impl ExperimentConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            base: None,
            scalar_cocycle: None,
            int_cocycle: None,
            weights: None,
            side: None,
            space: None,
            sequence: None,
            horizon: None,
            tolerance: None,
            seed: None,
            gamma: None,
            epsilon: None,
            estimator: None,
            start: None,
            strict: None,
            samples: None,
            threshold: None,
            boxes: None,
            windows: None,
            identity_horizon: None,
            criterion_horizon: None,
            alpha: None,
            grid: None,
            output: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    fn missing(&self, field: &str) -> Error {
        Error::invalid(format!("command `{}` needs `{field}`", self.command.name()))
    }

    fn horizon(&self) -> Result<u64> {
        let n = self.horizon.unwrap_or_else(|| self.command.default_horizon());
        if n < 1 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        Ok(n)
    }

    fn base(&self) -> Result<BaseSystem> {
        self.base.as_ref().ok_or_else(|| self.missing("base"))?.build()
    }

    fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| self.missing("seed"))
    }

    fn gamma(&self) -> Result<f64> {
        self.gamma.ok_or_else(|| self.missing("gamma"))
    }

    fn weights(&self) -> Result<WeightSequence> {
        self.weights.clone().ok_or_else(|| self.missing("weights"))
    }

    fn scalar_cocycle(&self, base: BaseSystem) -> Result<ScalarCocycle> {
        self.scalar_cocycle
            .as_ref()
            .ok_or_else(|| self.missing("scalar_cocycle"))?
            .build(base)
    }

    fn int_cocycle(&self, base: BaseSystem) -> Result<IntegerCocycle> {
        self.int_cocycle.as_ref().ok_or_else(|| self.missing("int_cocycle"))?.build(base)
    }

    fn fiber(&self, default_side: Side) -> Result<FiberSetup> {
        let shift = WeightedShift::new(self.weights()?, self.side.unwrap_or(default_side))?;
        let space = match &self.space {
            None => NormSpace::default(),
            Some(NormSpace::Plain { p }) => NormSpace::plain(*p)?,
            Some(NormSpace::Weighted { weights, p }) => NormSpace::weighted(weights.clone(), *p)?,
        };
        Ok(FiberSetup { shift, space })
    }

    fn boxes(&self) -> Result<&BoxPairs> {
        self.boxes.as_ref().ok_or_else(|| self.missing("boxes"))
    }
}

/// One CSV/JSON cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Text(String),
    Bool(bool),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => fmt_real(*v),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => json!(v),
            Cell::Real(v) if v.is_finite() => json!(v),
            Cell::Real(v) => json!(fmt_real(*v)),
            Cell::Bool(b) => json!(b),
            Cell::Text(s) => json!(s),
            Cell::Empty => Value::Null,
        }
    }
}

fn int(v: impl TryInto<i64>) -> Cell {
    v.try_into().map(Cell::Int).unwrap_or(Cell::Empty)
}

/// `e^x`, blank when out of double range.
fn linear(log: f64) -> Cell {
    let v = log.exp();
    if v.is_finite() && !log.is_nan() && (v > 0.0 || log == f64::NEG_INFINITY) {
        Cell::Real(v)
    } else {
        Cell::Empty
    }
}

fn point_text(a: &BasePoint) -> String {
    match a {
        BasePoint::Circle { x } => fmt_real(*x),
        BasePoint::Torus { a, x } => format!("{};{}", fmt_real(*a), fmt_real(*x)),
        BasePoint::Odometer { .. } => a
            .digits()
            .unwrap_or_default()
            .iter()
            .map(|d| char::from(b'0' + d))
            .collect(),
    }
}

fn origin(base: &BaseSystem) -> Result<BasePoint> {
    let p = base.sample(1).into_iter().next().map(|p| match p {
        BasePoint::Circle { .. } => BasePoint::circle(0.0),
        BasePoint::Torus { .. } => BasePoint::torus(0.0, 0.0),
        other => other,
    });
    match p {
        Some(BasePoint::Odometer { depth, .. }) => BasePoint::odometer(0, depth),
        Some(p) => Ok(p),
        None => Err(Error::invalid("base has no points")),
    }
}

/// Result of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub config: ExperimentConfig,
    pub summary: Value,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Report {
    fn config_json(&self) -> Value {
        serde_json::to_value(&self.config).unwrap_or(Value::Null)
    }

    /// CSV with `#` comment lines for timestamp, config and summary; the
    /// body (header and rows) is a pure function of the config.
    pub fn to_csv(&self, generated_unix: u64) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# skewlab {}", self.config.command.name());
        let _ = writeln!(out, "# generated_unix: {generated_unix}");
        let _ = writeln!(out, "# config: {}", self.config_json());
        let _ = writeln!(out, "# summary: {}", self.summary);
        out.push_str(&self.csv_body());
        out
    }

    pub fn csv_body(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self, generated_unix: u64) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, v)| (c.to_string(), v.json()))
                    .collect();
                Value::Object(obj)
            })
            .collect();
        json!({
            "command": self.config.command.name(),
            "generated_unix": generated_unix,
            "config": self.config_json(),
            "summary": self.summary,
            "rows": rows,
        })
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// Execute `config` and build its report.
pub fn run(config: &ExperimentConfig) -> Result<Report> {
    let (summary, columns, rows) = match config.command {
        Command::Gamma => run_gamma(config)?,
        Command::Cocycle => run_cocycle(config)?,
        Command::Coboundary => run_coboundary(config)?,
        Command::Criterion => run_criterion(config)?,
        Command::Dichotomy => run_dichotomy(config)?,
        Command::Hitting => run_hitting(config)?,
        Command::Example1 => run_example1_cmd(config)?,
        Command::Example2 => run_example2_cmd(config)?,
        Command::Furstenberg => run_furstenberg(config)?,
        Command::Intskew => run_intskew(config)?,
    };
    Ok(Report {
        config: config.clone(),
        summary,
        columns,
        rows,
    })
}

type Table = (Value, Vec<&'static str>, Vec<Vec<Cell>>);

fn run_gamma(c: &ExperimentConfig) -> Result<Table> {
    let cocycle = c.scalar_cocycle(c.base()?)?;
    let horizon = c.horizon()?;
    let estimator = c.estimator.unwrap_or_default();
    let mode = match estimator {
        Estimator::Quadrature => GammaMode::Quadrature { panels: horizon },
        Estimator::Birkhoff => GammaMode::Birkhoff {
            start: match c.start {
                Some(p) => p,
                None => origin(cocycle.base())?,
            },
            horizon,
        },
    };
    let gamma = cocycle.estimate_gamma(mode)?;
    let summary = json!({ "estimator": estimator, "horizon": horizon, "gamma": gamma });
    let row = vec![
        Cell::Text(to_value(&estimator).as_str().unwrap_or("").to_string()),
        int(horizon),
        Cell::Real(gamma),
        linear(gamma),
    ];
    Ok((summary, vec!["estimator", "horizon", "gamma", "exp_gamma"], vec![row]))
}

fn run_cocycle(c: &ExperimentConfig) -> Result<Table> {
    let base = c.base()?;
    let seed = c.seed()?;
    let bound = c.horizon()? as i64;
    let samples = c.samples.unwrap_or(100);
    let points = base.sample_measure(samples, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let (checker, signed): (Box<dyn CocycleIdentity>, bool) = match (&c.int_cocycle, &c.scalar_cocycle) {
        (Some(spec), None) => {
            let signed = base.is_invertible();
            (Box::new(spec.build(base)?), signed)
        }
        (None, Some(spec)) => (Box::new(spec.build(base)?), false),
        _ => return Err(Error::invalid("command `cocycle` needs exactly one of `int_cocycle`, `scalar_cocycle`")),
    };
    let lo = if signed { -bound } else { 0 };
    let mut rows = Vec::with_capacity(samples);
    let mut violations = 0;
    for (i, a) in points.iter().enumerate() {
        let m = rng.gen_range(lo..=bound);
        let n = rng.gen_range(lo..=bound);
        let holds = checker.verify_identity(a, m, n)?;
        if !holds {
            violations += 1;
        }
        rows.push(vec![int(i), Cell::Text(point_text(a)), Cell::Int(m), Cell::Int(n), Cell::Bool(holds)]);
    }
    let summary = json!({ "checked": samples, "violations": violations });
    Ok((summary, vec!["sample", "a", "m", "n", "holds"], rows))
}

fn run_coboundary(c: &ExperimentConfig) -> Result<Table> {
    let base = c.base()?;
    let cocycle = c.int_cocycle(base.clone())?;
    let horizon = c.horizon()?;
    let start = match c.start {
        Some(p) => p,
        None => origin(&base)?,
    };
    let threshold = c.threshold.unwrap_or(DEFAULT_GROWTH_THRESHOLD);
    let report = cocycle.boundedness_report(&start, horizon, threshold)?;

    let mut rows = Vec::new();
    let mut sum = 0i64;
    let mut p = start;
    rows.push(vec![Cell::Int(0), Cell::Int(0)]);
    for n in 1..=horizon {
        sum += cocycle.generator_at(&p)?;
        p = base.step(&p)?;
        rows.push(vec![int(n), Cell::Int(sum)]);
    }
    if base.is_invertible() {
        let mut back = Vec::new();
        let mut sum = 0i64;
        let mut p = start;
        for n in 1..=horizon {
            p = base.apply(&p, -1)?;
            sum -= cocycle.generator_at(&p)?;
            back.push(vec![Cell::Int(-(n as i64)), Cell::Int(sum)]);
        }
        back.reverse();
        back.extend(rows);
        rows = back;
    }
    let mut summary = to_value(&report);
    if let Some(g) = c.int_cocycle.as_ref().and_then(IntSpec::max_abs_g) {
        summary["coboundary_bound"] = json!(2 * g);
        summary["within_coboundary_bound"] = json!(report.max_abs <= 2 * g);
    }
    Ok((summary, vec!["n", "h"], rows))
}

fn criterion_rows(report: &CriterionReport, label: Option<&str>) -> Vec<Vec<Cell>> {
    report
        .rows
        .iter()
        .map(|r| {
            let mut row = Vec::new();
            if let Some(l) = label {
                row.push(Cell::Text(l.to_string()));
            }
            row.extend([
                Cell::Text(r.vector_id.clone()),
                Cell::Text(r.condition.label().to_string()),
                int(r.k),
                int(r.n_k),
                Cell::Real(r.log_value),
                Cell::Real(r.threshold_log),
                Cell::Real(r.margin),
                linear(r.log_value),
            ]);
            row
        })
        .collect()
}

const CRITERION_COLUMNS: [&str; 8] = ["vector_id", "condition", "k", "n_k", "log_value", "threshold_log", "margin", "value"];

fn criterion_summary(r: &CriterionReport) -> Value {
    json!({
        "verdict": r.verdict,
        "conditions": r.summary,
        "sequence": r.sequence,
    })
}

fn run_criterion(c: &ExperimentConfig) -> Result<Table> {
    let setup = c.fiber(Side::Unilateral)?;
    let seq = IndexSequence::new(c.sequence.clone().unwrap_or(SequenceRule::Full), c.horizon()?)?;
    let dense = DenseSetSpec::default().with_seed(c.seed()?);
    let opts = CriterionOptions {
        tol: c.tolerance.unwrap_or(DEFAULT_TOL),
        strict: c.strict.unwrap_or(true),
        ..CriterionOptions::default()
    };
    let report = check_criterion(&setup, &seq, &dense, &dense, c.gamma()?, &opts)?;
    Ok((criterion_summary(&report), CRITERION_COLUMNS.to_vec(), criterion_rows(&report, None)))
}

fn run_dichotomy(c: &ExperimentConfig) -> Result<Table> {
    let horizon = c.horizon()?;
    let r = shift_dichotomy(&c.weights()?, c.gamma()?, horizon, c.tolerance.unwrap_or(DEFAULT_DICHOTOMY_TOL))?;
    let row = vec![
        int(horizon),
        Cell::Real(r.log_proxy),
        linear(r.log_proxy),
        Cell::Real(r.threshold_log),
        Cell::Text(to_value(&r.comparison).as_str().unwrap_or("").to_string()),
    ];
    Ok((
        to_value(&r),
        vec!["horizon", "log_proxy", "proxy", "threshold_log", "comparison"],
        vec![row],
    ))
}

fn hit_rows(rows: &[HitRow]) -> Vec<Vec<Cell>> {
    rows.iter()
        .map(|r| {
            vec![
                int(r.n),
                Cell::Bool(r.hit),
                r.base_witness.as_ref().map_or(Cell::Empty, |a| Cell::Text(point_text(a))),
                Cell::Real(r.fiber_distance),
                if r.log_scale.is_nan() { Cell::Empty } else { Cell::Real(r.log_scale) },
                linear(r.log_scale),
            ]
        })
        .collect()
}

const HIT_COLUMNS: [&str; 6] = ["n", "hit", "base_witness", "fiber_distance", "log_scale", "scale"];

fn hitting_summary(r: &HittingReport) -> Value {
    json!({
        "mode": r.mode,
        "hit_count": r.set.hits.len(),
        "stats": r.set.stats,
        "classification": classify(&r.set),
    })
}

fn run_skew_hitting<S: SkewProduct>(skew: &S, c: &ExperimentConfig) -> Result<Table> {
    let boxes = c.boxes()?;
    let horizon = c.horizon()?;
    let opts = HitOptions {
        base_samples: c.samples.unwrap_or(DEFAULT_BASE_SAMPLES),
    };
    let first = hitting_set(skew, &boxes.u.build()?, &boxes.v.build()?, horizon, &opts)?;
    match (&boxes.u2, &boxes.v2) {
        (None, None) => Ok((hitting_summary(&first), HIT_COLUMNS.to_vec(), hit_rows(&first.rows))),
        (Some(u2), Some(v2)) => {
            let second = hitting_set(skew, &u2.build()?, &v2.build()?, horizon, &opts)?;
            let set = first.set.intersect(&second.set);
            let rows = first
                .rows
                .iter()
                .zip(&second.rows)
                .map(|(a, b)| {
                    vec![
                        int(a.n),
                        Cell::Bool(a.hit && b.hit),
                        Cell::Bool(a.hit),
                        Cell::Bool(b.hit),
                        Cell::Real(a.fiber_distance),
                        Cell::Real(b.fiber_distance),
                    ]
                })
                .collect();
            let summary = json!({
                "mode": first.mode,
                "hit_count": set.hits.len(),
                "stats": set.stats,
                "classification": classify(&set),
            });
            Ok((
                summary,
                vec!["n", "hit", "hit_first", "hit_second", "fiber_distance_first", "fiber_distance_second"],
                rows,
            ))
        }
        _ => Err(Error::invalid("product hitting needs both `u2` and `v2`")),
    }
}

fn run_hitting(c: &ExperimentConfig) -> Result<Table> {
    let skew = ScalarSkew::new(c.scalar_cocycle(c.base()?)?, c.fiber(Side::Unilateral)?);
    run_skew_hitting(&skew, c)
}

fn run_intskew(c: &ExperimentConfig) -> Result<Table> {
    let skew = IntSkew::new(c.int_cocycle(c.base()?)?, c.fiber(Side::Bilateral)?)?;
    run_skew_hitting(&skew, c)
}

fn run_example1_cmd(c: &ExperimentConfig) -> Result<Table> {
    let gamma = c.gamma.unwrap_or(1.0);
    let epsilon = c.epsilon.unwrap_or(0.5);
    let r = run_example1(gamma, epsilon, c.horizon()?)?;
    let ii = |rep: &CriterionReport| rep.summary_for(Condition::Ii).map(to_value);
    let summary = json!({
        "along_rk": { "verdict": r.along_rk.verdict, "condition_ii": ii(&r.along_rk) },
        "along_full": { "verdict": r.along_full.verdict, "condition_ii": ii(&r.along_full) },
        "rk_milestones": r.rk_milestones,
        "peak_milestones": r.peak_milestones,
    });
    let mut columns = vec!["sequence"];
    columns.extend(CRITERION_COLUMNS);
    let mut rows = criterion_rows(&r.along_rk, Some("rk"));
    rows.extend(criterion_rows(&r.along_full, Some("full")));
    Ok((summary, columns, rows))
}

fn run_example2_cmd(c: &ExperimentConfig) -> Result<Table> {
    let defaults = Example2Config::default();
    let config = Example2Config {
        gamma: c.gamma.unwrap_or(defaults.gamma),
        windows: c.windows.clone(),
        identity_horizon: c.identity_horizon.unwrap_or(defaults.identity_horizon),
        hitting_horizon: c.horizon()?,
        criterion_horizon: c.criterion_horizon.unwrap_or(defaults.criterion_horizon),
    };
    let r = run_example2(&config)?;
    let windows = WindowSpec::new(r.window_centers.clone())?;
    let rows = (1..=windows.len())
        .filter_map(|k| windows.window(k).map(|w| (k, w)))
        .map(|(k, (start, end))| {
            let hits = r.hitting.hits.iter().filter(|&&n| n >= start && n <= end).count();
            vec![
                int(k),
                int(windows.centers()[k - 1]),
                int(start),
                int(end),
                Cell::Bool(start <= config.hitting_horizon),
                int(hits),
            ]
        })
        .collect();
    let summary = json!({
        "gamma": r.gamma,
        "identity_checked": r.identity_checked,
        "identity_violations": r.identity_violations.len(),
        "max_identity_deviation": r.max_identity_deviation,
        "hit_count": r.hitting.hits.len(),
        "window_hits": r.window_hits,
        "non_window_hits": r.non_window_hits,
        "criterion_midpoints": r.criterion_midpoints.as_ref().map(criterion_summary),
        "notes": r.notes,
    });
    Ok((summary, vec!["k", "center", "start", "end", "in_hitting_range", "hits"], rows))
}

fn run_furstenberg(c: &ExperimentConfig) -> Result<Table> {
    let alpha = c.alpha.unwrap_or(crate::base_systems::GOLDEN);
    let start = match c.start {
        None => (0.0, 0.0),
        Some(BasePoint::Torus { a, x }) => (a, x),
        Some(_) => return Err(Error::invalid("furstenberg `start` must be a torus point")),
    };
    let grid = c.grid.unwrap_or(20);
    let r = furstenberg_density(alpha, start, c.horizon()?, grid)?;
    let rows = r
        .first_visits
        .iter()
        .enumerate()
        .map(|(idx, v)| vec![int(idx / grid), int(idx % grid), v.map_or(Cell::Empty, int)])
        .collect();
    let summary = json!({
        "alpha": r.alpha,
        "grid": r.grid,
        "steps": r.steps,
        "visited_cells": r.visited_cells,
        "total_cells": r.total_cells,
        "all_visited": r.all_visited(),
        "completed_at": r.completed_at,
    });
    Ok((summary, vec!["i", "j", "first_visit"], rows))
}

#[derive(Debug, Parser)]
#[command(name = "skewlab", version, about = "Skew-product and weighted-shift experiments")]
pub struct Args {
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Report path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config horizon.
    #[arg(long)]
    pub horizon: Option<u64>,
    /// No summary on stderr.
    #[arg(long)]
    pub quiet: bool,
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INVALID
    }
}

fn infer_format(path: Option<&Path>) -> Format {
    match path.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
        Some("json") => Format::Json,
        _ => Format::Csv,
    }
}

/// Parse arguments, run, write the report; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return EXIT_IO;
        }
    };
    let mut config = match ExperimentConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    if args.seed.is_some() {
        config.seed = args.seed;
    }
    if args.horizon.is_some() {
        config.horizon = args.horizon;
    }
    let report = match run(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };

    let output = config.output.clone().unwrap_or_default();
    let path = args.out.or(output.path);
    let format = args
        .format
        .or(output.format)
        .unwrap_or_else(|| infer_format(path.as_deref()));
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let body = match format {
        Format::Csv => report.to_csv(stamp),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&report.to_json(stamp)).unwrap_or_default();
            s.push('\n');
            s
        }
    };
    let written = match &path {
        Some(p) => std::fs::write(p, body),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(body.as_bytes())
        }
    };
    if let Err(e) = written {
        eprintln!("error: cannot write report: {e}");
        return EXIT_IO;
    }
    if !args.quiet {
        eprintln!("{}: {}", config.command.name(), report.summary);
    }
    EXIT_OK
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(text).unwrap()
    }

    #[test]
    fn gamma_quadrature() {
        let c = cfg(r#"{"command":"gamma","base":{"kind":"golden_rotation"},
            "scalar_cocycle":{"kind":"cos_profile","p":2,"q":1},"horizon":1000000}"#);
        let r = run(&c).unwrap();
        let g = r.summary["gamma"].as_f64().unwrap();
        assert!((g - ((2.0 + 3f64.sqrt()) / 2.0).ln()).abs() < 1e-9);
    }

    #[test]
    fn example1_bad_epsilon_is_validation_error() {
        let c = cfg(r#"{"command":"example1","gamma":1,"epsilon":1.5,"horizon":1000}"#);
        let e = run(&c).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_INVALID);
        assert!(e.to_string().contains("(γ−ε) > 0"), "{e}");
    }

    #[test]
    fn zero_coboundary_is_bounded() {
        let c = cfg(r#"{"command":"coboundary","base":{"kind":"odometer","depth":8},
            "int_cocycle":{"kind":"constant","value":0},"horizon":100}"#);
        let r = run(&c).unwrap();
        assert_eq!(r.summary["verdict"], "bounded_within_horizon");
        assert_eq!(r.rows.len(), 201);
    }

    #[test]
    fn unknown_fields_and_commands_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"command":"gamma","bogus":1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"command":"nope"}"#).is_err());
        let e = run(&cfg(r#"{"command":"gamma"}"#)).unwrap_err();
        assert!(e.to_string().contains("`base`"));
        let e = run(&cfg(r#"{"command":"cocycle","base":{"kind":"golden_rotation"},
            "int_cocycle":{"kind":"constant","value":1}}"#))
        .unwrap_err();
        assert!(e.to_string().contains("`seed`"));
        assert!(run(&cfg(r#"{"command":"furstenberg","horizon":0}"#)).is_err());
    }

    #[test]
    fn zero_weight_is_numerical() {
        let c = cfg(r#"{"command":"criterion","weights":{"rule":"table","values":[1,0,1]},
            "gamma":0,"seed":1,"horizon":100}"#);
        assert_eq!(exit_code(&run(&c).unwrap_err()), EXIT_NUMERICAL);
    }

    #[test]
    fn csv_body_is_stable() {
        let c = cfg(r#"{"command":"criterion","weights":{"rule":"constant","w":2},
            "gamma":0,"seed":7,"horizon":200}"#);
        let a = run(&c).unwrap();
        let b = run(&c).unwrap();
        assert_eq!(a.csv_body(), b.csv_body());
        let text = a.to_csv(1);
        assert!(text.lines().next().unwrap().starts_with('#'));
        assert!(text.contains("vector_id,condition,k,n_k,log_value,threshold_log,margin,value\n"));
        assert_eq!(a.summary["verdict"]["verdict"], "mixing_certificate");
    }

    #[test]
    fn linear_blank_out_of_range() {
        assert_eq!(linear(800.0), Cell::Empty);
        assert_eq!(linear(0.0), Cell::Real(1.0));
        assert_eq!(linear(f64::NEG_INFINITY), Cell::Real(0.0));
        assert_eq!(linear(-800.0), Cell::Empty);
    }
}
