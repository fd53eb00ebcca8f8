//! Integer and scalar cocycles over a base system.
//!
//! An integer cocycle is generated by a locally constant `h̃ : A → ℤ` and
//! summed along orbits; a scalar cocycle multiplies `h : A → ℂ` along orbits
//! and is carried in log-polar form so that products like `e^{nγ}` never
//! overflow.

use std::f64::consts::TAU;
use std::ops::Mul;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::base_systems::{depth_mask, BaseKind, BasePoint, BaseSystem};
use crate::error::{Error, Result};
use crate::numeric::{materialize, phase_distance, wrap_phase, NeumaierSum};

/// Default threshold above which a growing scan is reported as growth.
pub const DEFAULT_GROWTH_THRESHOLD: i64 = 64;

/// Largest cylinder depth accepted for generator tables.
pub const MAX_CYLINDER_DEPTH: u8 = 16;

/// A complex number as `(ln |z|, arg z)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LogPolar {
    pub log_mag: f64,
    /// Radians in `[0, 2π)`.
    pub phase: f64,
}

impl LogPolar {
    pub const ONE: LogPolar = LogPolar {
        log_mag: 0.0,
        phase: 0.0,
    };

    pub fn new(log_mag: f64, phase: f64) -> Self {
        LogPolar {
            log_mag,
            phase: wrap_phase(phase),
        }
    }

    /// `None` for zero.
    pub fn from_complex(z: Complex64) -> Option<Self> {
        let r = z.norm();
        if r == 0.0 || !r.is_finite() {
            return None;
        }
        Some(LogPolar::new(r.ln(), z.arg()))
    }

    /// Linear value, or `None` when `|log_mag|` is beyond the materialization
    /// limit.
    pub fn to_complex(&self) -> Option<Complex64> {
        materialize(self.log_mag).map(|r| Complex64::from_polar(r, self.phase))
    }

    pub fn inv(&self) -> Self {
        LogPolar::new(-self.log_mag, -self.phase)
    }

    /// `self^n`.
    pub fn pow(&self, n: i64) -> Self {
        LogPolar::new(n as f64 * self.log_mag, n as f64 * self.phase)
    }

    /// Agreement within `tol` on log-magnitude and (circular) phase.
    pub fn approx_eq(&self, other: &LogPolar, tol: f64) -> bool {
        (self.log_mag - other.log_mag).abs() <= tol && phase_distance(self.phase, other.phase) <= tol
    }
}

impl Mul for LogPolar {
    type Output = LogPolar;

    fn mul(self, rhs: LogPolar) -> LogPolar {
        LogPolar::new(self.log_mag + rhs.log_mag, self.phase + rhs.phase)
    }
}

/// Integer-valued function of the first `depth` odometer digits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CylinderFunction {
    depth: u8,
    values: Vec<i64>,
}

impl CylinderFunction {
    /// `values[i]` is the value on the cylinder whose first `depth` digits
    /// spell `i` (least significant digit first).
    pub fn new(depth: u8, values: Vec<i64>) -> Result<Self> {
        if depth == 0 || depth > MAX_CYLINDER_DEPTH {
            return Err(Error::invalid(format!(
                "cylinder depth {depth} not in 1..={MAX_CYLINDER_DEPTH}"
            )));
        }
        if values.len() != 1usize << depth {
            return Err(Error::invalid(format!(
                "cylinder table of depth {depth} needs {} values, got {}",
                1usize << depth,
                values.len()
            )));
        }
        Ok(Self { depth, values })
    }

    /// `g(a) = a_0`, the first digit.
    pub fn first_digit() -> Self {
        Self {
            depth: 1,
            values: vec![0, 1],
        }
    }

    pub fn depth(&self) -> u8 {
        self.depth
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }

    pub fn max_abs(&self) -> i64 {
        self.values.iter().map(|v| v.abs()).max().unwrap_or(0)
    }

    fn eval_digits(&self, digits: u64) -> i64 {
        self.values[(digits & depth_mask(self.depth)) as usize]
    }

    pub fn eval(&self, a: &BasePoint) -> Result<i64> {
        match *a {
            BasePoint::Odometer { digits, .. } => Ok(self.eval_digits(digits)),
            _ => Err(Error::KindMismatch {
                expected: "odometer",
                found: a.kind_name(),
            }),
        }
    }
}

/// Generator `h̃` of an integer cocycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntGenerator {
    Constant { value: i64 },
    /// `h̃ = g∘f − g` for a cylinder function `g`.
    OdometerCoboundary { g: CylinderFunction },
    /// `h̃` given directly by a cylinder table.
    Table { table: CylinderFunction },
}

/// `h(n, a)`: sums of `h̃` along the orbit of `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegerCocycle {
    base: BaseSystem,
    generator: IntGenerator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundednessVerdict {
    BoundedWithinHorizon,
    GrowthDetected,
}

/// Result of scanning `|h(n, a)|` over a finite window of `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundednessReport {
    pub max_abs: i64,
    pub attained_at: i64,
    pub verdict: BoundednessVerdict,
}

impl IntegerCocycle {
    /// Non-constant generators must be locally constant, which on the
    /// implemented bases means cylinder tables on an odometer deep enough to
    /// resolve them.
    pub fn new(base: BaseSystem, generator: IntGenerator) -> Result<Self> {
        let table_depth = match &generator {
            IntGenerator::Constant { .. } => None,
            IntGenerator::OdometerCoboundary { g } => Some(g.depth()),
            IntGenerator::Table { table } => Some(table.depth()),
        };
        if let Some(d) = table_depth {
            match base.kind() {
                BaseKind::Odometer { depth } if *depth >= d => {}
                BaseKind::Odometer { depth } => {
                    return Err(Error::invalid(format!(
                        "cylinder depth {d} exceeds odometer depth {depth}"
                    )))
                }
                _ => {
                    return Err(Error::invalid(
                        "only constant integer generators are continuous on a connected base",
                    ))
                }
            }
        }
        Ok(Self { base, generator })
    }

    pub fn constant(base: BaseSystem, value: i64) -> Self {
        Self {
            base,
            generator: IntGenerator::Constant { value },
        }
    }

    pub fn base(&self) -> &BaseSystem {
        &self.base
    }

    pub fn generator(&self) -> &IntGenerator {
        &self.generator
    }

    /// `h̃(a) = h(1, a)`.
    pub fn generator_at(&self, a: &BasePoint) -> Result<i64> {
        self.base.check_point(a)?;
        match &self.generator {
            IntGenerator::Constant { value } => Ok(*value),
            IntGenerator::Table { table } => table.eval(a),
            IntGenerator::OdometerCoboundary { g } => {
                let fa = self.base.step(a)?;
                Ok(g.eval(&fa)? - g.eval(a)?)
            }
        }
    }

    /// `h(n, a)`: `∑_{k<n} h̃(f^k a)` for `n ≥ 1`, `0` for `n = 0`, and
    /// `−∑_{k=1}^{−n} h̃(f^{−k} a)` for `n < 0`.
    pub fn cocycle_sum(&self, a: &BasePoint, n: i64) -> Result<i64> {
        self.base.check_point(a)?;
        if n < 0 && !self.base.is_invertible() {
            return Err(Error::NonInvertible {
                system: self.base.name(),
                n,
            });
        }
        if let IntGenerator::Constant { value } = self.generator {
            return Ok(value * n);
        }
        let mut total = 0i64;
        if n > 0 {
            let mut b = *a;
            for _ in 0..n {
                total += self.generator_at(&b)?;
                b = self.base.step(&b)?;
            }
        } else {
            let mut b = *a;
            for _ in 0..(-n) {
                b = self.base.apply(&b, -1)?;
                total -= self.generator_at(&b)?;
            }
        }
        Ok(total)
    }

    /// Scan `|h(n, a)|` over `n ∈ [−N, N]` (or `[0, N]` on non-invertible
    /// bases). Growth is reported when the maximum exceeds `threshold` and
    /// the running maximum still increases during the final quarter of the
    /// scan; otherwise the cocycle is bounded within the horizon.
    pub fn boundedness_report(&self, a: &BasePoint, horizon: u64, threshold: i64) -> Result<BoundednessReport> {
        self.base.check_point(a)?;
        if horizon == 0 {
            return Err(Error::invalid("boundedness horizon must be at least 1"));
        }
        let two_sided = self.base.is_invertible();
        let quarter_mark = (3 * horizon) / 4;

        let mut max_abs = 0i64;
        let mut attained_at = 0i64;
        let mut max_at_mark = 0i64;

        let mut fwd_point = *a;
        let mut fwd_sum = 0i64;
        let mut back_point = *a;
        let mut back_sum = 0i64;
        for k in 1..=horizon {
            fwd_sum += self.generator_at(&fwd_point)?;
            fwd_point = self.base.step(&fwd_point)?;
            if fwd_sum.abs() > max_abs {
                max_abs = fwd_sum.abs();
                attained_at = k as i64;
            }
            if two_sided {
                back_point = self.base.apply(&back_point, -1)?;
                back_sum -= self.generator_at(&back_point)?;
                if back_sum.abs() > max_abs {
                    max_abs = back_sum.abs();
                    attained_at = -(k as i64);
                }
            }
            if k == quarter_mark {
                max_at_mark = max_abs;
            }
        }
        let growing = max_abs > threshold && max_abs > max_at_mark;
        Ok(BoundednessReport {
            max_abs,
            attained_at,
            verdict: if growing {
                BoundednessVerdict::GrowthDetected
            } else {
                BoundednessVerdict::BoundedWithinHorizon
            },
        })
    }
}

/// Generator `h : A → ℂ` of a scalar cocycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarGenerator {
    /// Stored in log-polar form so that `e^γ` is exact.
    Constant { value: LogPolar },
    /// `h(a) = p + q cos(2πa)` with `p > |q|`.
    CosProfile { p: f64, q: f64 },
    /// Complex values on the cylinders of the first `depth` odometer digits.
    Cylinder { depth: u8, values: Vec<Complex64> },
}

/// `h_n(a) = h(f^{n−1} a) ⋯ h(a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarCocycle {
    base: BaseSystem,
    generator: ScalarGenerator,
}

/// How to estimate `γ = ∫ log |h| dμ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// `(1/n) ∑_{j<n} log |h(f^j a)|`.
    Birkhoff { start: BasePoint, horizon: u64 },
    /// Composite midpoint rule on circle bases, exact cylinder average on
    /// the odometer.
    Quadrature { panels: u64 },
}

impl ScalarCocycle {
    pub fn new(base: BaseSystem, generator: ScalarGenerator) -> Result<Self> {
        match &generator {
            ScalarGenerator::Constant { value } => {
                if !value.log_mag.is_finite() {
                    return Err(Error::invalid("constant generator must be finite and nonzero"));
                }
            }
            ScalarGenerator::CosProfile { p, q } => {
                if !base.is_circle() {
                    return Err(Error::invalid("cos profile needs a circle base"));
                }
                if !(p.is_finite() && q.is_finite() && *p > q.abs()) {
                    return Err(Error::invalid(format!("cos profile needs p > |q| (p={p}, q={q})")));
                }
            }
            ScalarGenerator::Cylinder { depth, values } => {
                match base.kind() {
                    BaseKind::Odometer { depth: d } if d >= depth => {}
                    _ => return Err(Error::invalid("cylinder generator needs an odometer base at least as deep")),
                }
                if *depth == 0 || *depth > MAX_CYLINDER_DEPTH || values.len() != 1usize << depth {
                    return Err(Error::invalid("cylinder generator table has the wrong size"));
                }
            }
        }
        Ok(Self { base, generator })
    }

    /// `h ≡ c`.
    pub fn constant(base: BaseSystem, c: Complex64) -> Result<Self> {
        let value = LogPolar::from_complex(c).ok_or(Error::SingularCocycle {
            at: "constant generator".into(),
        })?;
        Self::new(base, ScalarGenerator::Constant { value })
    }

    /// `h ≡ e^γ`, exact in log form.
    pub fn exp_gamma(base: BaseSystem, gamma: f64) -> Result<Self> {
        Self::new(
            base,
            ScalarGenerator::Constant {
                value: LogPolar::new(gamma, 0.0),
            },
        )
    }

    pub fn cos_profile(base: BaseSystem, p: f64, q: f64) -> Result<Self> {
        Self::new(base, ScalarGenerator::CosProfile { p, q })
    }

    pub fn base(&self) -> &BaseSystem {
        &self.base
    }

    pub fn generator(&self) -> &ScalarGenerator {
        &self.generator
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.generator, ScalarGenerator::Constant { .. })
    }

    /// `h(a)` in log-polar form.
    pub fn eval(&self, a: &BasePoint) -> Result<LogPolar> {
        self.base.check_point(a)?;
        let singular = || Error::SingularCocycle { at: a.to_string() };
        match &self.generator {
            ScalarGenerator::Constant { value } => Ok(*value),
            ScalarGenerator::CosProfile { p, q } => {
                let x = a.circle_coordinate().expect("circle base");
                let v = p + q * (TAU * x).cos();
                LogPolar::from_complex(Complex64::new(v, 0.0)).ok_or_else(singular)
            }
            ScalarGenerator::Cylinder { depth, values } => {
                let BasePoint::Odometer { digits, .. } = *a else {
                    unreachable!("checked by check_point")
                };
                let z = values[(digits & depth_mask(*depth)) as usize];
                LogPolar::from_complex(z).ok_or_else(singular)
            }
        }
    }

    /// `h_n(a)`; `n = 0` gives the empty product `1`.
    pub fn scalar_log_product(&self, a: &BasePoint, n: u64) -> Result<LogPolar> {
        self.base.check_point(a)?;
        if let ScalarGenerator::Constant { value } = self.generator {
            return Ok(value.pow(n as i64));
        }
        let mut log_mag = NeumaierSum::new();
        let mut phase = 0.0;
        let mut b = *a;
        for _ in 0..n {
            let h = self.eval(&b)?;
            log_mag.add(h.log_mag);
            phase = wrap_phase(phase + h.phase);
            b = self.base.step(&b)?;
        }
        Ok(LogPolar {
            log_mag: log_mag.value(),
            phase,
        })
    }

    pub fn estimate_gamma(&self, mode: GammaMode) -> Result<f64> {
        match mode {
            GammaMode::Birkhoff { start, horizon } => {
                if horizon == 0 {
                    return Err(Error::invalid("Birkhoff horizon must be at least 1"));
                }
                self.base.check_point(&start)?;
                let mut sum = NeumaierSum::new();
                let mut b = start;
                for _ in 0..horizon {
                    sum.add(self.eval(&b)?.log_mag);
                    b = self.base.step(&b)?;
                }
                Ok(sum.value() / horizon as f64)
            }
            GammaMode::Quadrature { panels } => {
                if panels == 0 {
                    return Err(Error::invalid("quadrature needs at least one panel"));
                }
                match &self.generator {
                    ScalarGenerator::Constant { value } => Ok(value.log_mag),
                    ScalarGenerator::CosProfile { .. } => {
                        let h = 1.0 / panels as f64;
                        let mut sum = NeumaierSum::new();
                        for i in 0..panels {
                            let a = BasePoint::circle((i as f64 + 0.5) * h);
                            sum.add(self.eval(&a)?.log_mag);
                        }
                        Ok(sum.value() * h)
                    }
                    ScalarGenerator::Cylinder { depth, values } => {
                        let mut sum = NeumaierSum::new();
                        for (i, z) in values.iter().enumerate() {
                            let r = z.norm();
                            if r == 0.0 {
                                return Err(Error::SingularCocycle {
                                    at: format!("cylinder {i}"),
                                });
                            }
                            sum.add(r.ln());
                        }
                        Ok(sum.value() / (1u64 << depth) as f64)
                    }
                }
            }
        }
    }
}

/// Check of `h(m + n, a) = h(m, f^n a) ⋄ h(n, a)`.
pub trait CocycleIdentity {
    fn verify_identity(&self, a: &BasePoint, m: i64, n: i64) -> Result<bool>;
}

impl CocycleIdentity for IntegerCocycle {
    fn verify_identity(&self, a: &BasePoint, m: i64, n: i64) -> Result<bool> {
        let lhs = self.cocycle_sum(a, m + n)?;
        let fna = self.base.apply(a, n)?;
        Ok(lhs == self.cocycle_sum(&fna, m)? + self.cocycle_sum(a, n)?)
    }
}

impl CocycleIdentity for ScalarCocycle {
    /// Semicascade form: `m, n ≥ 0`. Agreement within `1e-9·(m + n)`.
    fn verify_identity(&self, a: &BasePoint, m: i64, n: i64) -> Result<bool> {
        if m < 0 || n < 0 {
            return Err(Error::invalid("scalar cocycles are defined for n ≥ 0 only"));
        }
        let lhs = self.scalar_log_product(a, (m + n) as u64)?;
        let fna = self.base.apply(a, n)?;
        let rhs = self.scalar_log_product(&fna, m as u64)? * self.scalar_log_product(a, n as u64)?;
        let tol = 1e-9 * ((m + n).max(1) as f64);
        Ok(lhs.approx_eq(&rhs, tol))
    }
}
