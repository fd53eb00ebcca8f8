//! Compact base systems `(A, f)`: irrational rotations, the doubling map, the
//! dyadic odometer and Furstenberg's torus skew.
//!
//! Property flags are declared from known theory at construction and never
//! computed. Circle arithmetic is plain `f64` with a mod-1 reduction after
//! every operation; odometer arithmetic is exact integer addition with carry
//! on a fixed number of digits.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::wrap_unit;

/// Default odometer depth.
pub const DEFAULT_ODOMETER_DEPTH: u8 = 32;

/// `(√5 − 1) / 2`.
pub const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// A point of one of the implemented bases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasePoint {
    /// A point of `[0, 1)`.
    Circle { x: f64 },
    /// Binary digits, least significant first: digit `i` is bit `i` of
    /// `digits`. Digits beyond `depth` are always zero.
    Odometer { digits: u64, depth: u8 },
    /// A point of the 2-torus, `a` the base coordinate and `x` the fiber one.
    Torus { a: f64, x: f64 },
}

impl BasePoint {
    pub fn circle(x: f64) -> Self {
        BasePoint::Circle { x: wrap_unit(x) }
    }

    pub fn torus(a: f64, x: f64) -> Self {
        BasePoint::Torus {
            a: wrap_unit(a),
            x: wrap_unit(x),
        }
    }

    /// Odometer point from its value `∑ d_i 2^i`, reduced mod `2^depth`.
    pub fn odometer(value: u64, depth: u8) -> Result<Self> {
        check_depth(depth)?;
        Ok(BasePoint::Odometer {
            digits: value & depth_mask(depth),
            depth,
        })
    }

    /// Odometer point from an explicit digit list (least significant first).
    pub fn odometer_from_digits(digits: &[u8]) -> Result<Self> {
        let depth = u8::try_from(digits.len())
            .map_err(|_| Error::invalid("odometer depth exceeds 64"))?;
        check_depth(depth)?;
        let mut value = 0u64;
        for (i, &d) in digits.iter().enumerate() {
            match d {
                0 => {}
                1 => value |= 1 << i,
                _ => return Err(Error::invalid(format!("odometer digit {d} not in {{0,1}}"))),
            }
        }
        Ok(BasePoint::Odometer { digits: value, depth })
    }

    /// Digit list (least significant first) of an odometer point.
    pub fn digits(&self) -> Option<Vec<u8>> {
        match *self {
            BasePoint::Odometer { digits, depth } => {
                Some((0..depth).map(|i| ((digits >> i) & 1) as u8).collect())
            }
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            BasePoint::Circle { .. } => "circle",
            BasePoint::Odometer { .. } => "odometer",
            BasePoint::Torus { .. } => "torus",
        }
    }

    /// The circle coordinate, for circle points and the base coordinate of
    /// torus points.
    pub fn circle_coordinate(&self) -> Option<f64> {
        match *self {
            BasePoint::Circle { x } => Some(x),
            BasePoint::Torus { a, .. } => Some(a),
            BasePoint::Odometer { .. } => None,
        }
    }
}

impl fmt::Display for BasePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            BasePoint::Circle { x } => write!(f, "{x:.17e}"),
            BasePoint::Torus { a, x } => write!(f, "({a:.17e} {x:.17e})"),
            BasePoint::Odometer { digits, depth } => {
                for i in 0..depth {
                    write!(f, "{}", (digits >> i) & 1)?;
                }
                Ok(())
            }
        }
    }
}

fn check_depth(depth: u8) -> Result<()> {
    if depth == 0 || depth > 64 {
        return Err(Error::invalid(format!("odometer depth {depth} not in 1..=64")));
    }
    Ok(())
}

pub(crate) fn depth_mask(depth: u8) -> u64 {
    if depth >= 64 {
        u64::MAX
    } else {
        (1u64 << depth) - 1
    }
}

/// Rotation number, kept exact when given as a rational.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alpha {
    /// Treated as irrational (the default for floating-point input).
    Irrational(f64),
    /// An exact rational `num / den`.
    Rational { num: i64, den: i64 },
}

impl Alpha {
    pub fn value(&self) -> f64 {
        match *self {
            Alpha::Irrational(a) => a,
            Alpha::Rational { num, den } => num as f64 / den as f64,
        }
    }

    pub fn is_rational(&self) -> bool {
        matches!(self, Alpha::Rational { .. })
    }

    fn validate(&self) -> Result<()> {
        if let Alpha::Rational { den, .. } = *self {
            if den <= 0 {
                return Err(Error::invalid("rational rotation needs a positive denominator"));
            }
        }
        let v = self.value();
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::invalid(format!("rotation number {v} not in (0, 1)")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseKind {
    Rotation { alpha: Alpha },
    Doubling,
    Odometer { depth: u8 },
    TorusSkew { alpha: Alpha },
}

/// Declared dynamical properties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Properties {
    pub minimal: bool,
    pub uniquely_ergodic: bool,
    pub mixing: bool,
    pub invertible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `min(|a − b|, 1 − |a − b|)`.
    Arc,
    /// `2^{-i}` with `i` the first differing digit (1-based).
    Dyadic,
    /// Max of the two coordinate arc distances.
    TorusMax,
}

/// A compact base system with its known-property metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseSystem {
    kind: BaseKind,
    properties: Properties,
    metric: Metric,
    seed: u64,
}

impl BaseSystem {
    /// Rotation by an irrational `alpha`.
    pub fn rotation(alpha: f64) -> Result<Self> {
        Self::rotation_with(Alpha::Irrational(alpha))
    }

    /// Rotation by the golden mean.
    pub fn golden_rotation() -> Self {
        Self::rotation(GOLDEN).expect("golden rotation is valid")
    }

    /// Rotation by `alpha`; exact rationals never receive the minimal flag.
    pub fn rotation_with(alpha: Alpha) -> Result<Self> {
        alpha.validate()?;
        let irrational = !alpha.is_rational();
        Ok(Self {
            kind: BaseKind::Rotation { alpha },
            properties: Properties {
                minimal: irrational,
                uniquely_ergodic: irrational,
                mixing: false,
                invertible: true,
            },
            metric: Metric::Arc,
            seed: 0,
        })
    }

    pub fn doubling() -> Self {
        Self {
            kind: BaseKind::Doubling,
            properties: Properties {
                minimal: false,
                uniquely_ergodic: false,
                mixing: true,
                invertible: false,
            },
            metric: Metric::Arc,
            seed: 0,
        }
    }

    pub fn odometer(depth: u8) -> Result<Self> {
        check_depth(depth)?;
        Ok(Self {
            kind: BaseKind::Odometer { depth },
            properties: Properties {
                minimal: true,
                uniquely_ergodic: true,
                mixing: false,
                invertible: true,
            },
            metric: Metric::Dyadic,
            seed: 0,
        })
    }

    /// Furstenberg's skew `(a, x) ↦ (a + α, a + x)` on the 2-torus.
    pub fn torus_skew(alpha: Alpha) -> Result<Self> {
        alpha.validate()?;
        let irrational = !alpha.is_rational();
        Ok(Self {
            kind: BaseKind::TorusSkew { alpha },
            properties: Properties {
                minimal: irrational,
                uniquely_ergodic: irrational,
                mixing: false,
                invertible: true,
            },
            metric: Metric::TorusMax,
            seed: 0,
        })
    }

    /// Replace the default sampler seed used by [`BaseSystem::sample`].
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn kind(&self) -> &BaseKind {
        &self.kind
    }

    pub fn properties(&self) -> Properties {
        self.properties
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn is_invertible(&self) -> bool {
        self.properties.invertible
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            BaseKind::Rotation { .. } => "rotation",
            BaseKind::Doubling => "doubling",
            BaseKind::Odometer { .. } => "odometer",
            BaseKind::TorusSkew { .. } => "torus_skew",
        }
    }

    /// True when the phase space is the circle `[0, 1)`.
    pub fn is_circle(&self) -> bool {
        matches!(self.kind, BaseKind::Rotation { .. } | BaseKind::Doubling)
    }

    fn point_kind(&self) -> &'static str {
        match self.kind {
            BaseKind::Rotation { .. } | BaseKind::Doubling => "circle",
            BaseKind::Odometer { .. } => "odometer",
            BaseKind::TorusSkew { .. } => "torus",
        }
    }

    /// Check that `a` lives on this system's phase space.
    pub fn check_point(&self, a: &BasePoint) -> Result<()> {
        let ok = match (&self.kind, a) {
            (BaseKind::Rotation { .. } | BaseKind::Doubling, BasePoint::Circle { .. }) => true,
            (BaseKind::Odometer { depth }, BasePoint::Odometer { depth: d, .. }) => depth == d,
            (BaseKind::TorusSkew { .. }, BasePoint::Torus { .. }) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::KindMismatch {
                expected: self.point_kind(),
                found: a.kind_name(),
            })
        }
    }

    /// `f^n(a)`. Negative `n` is refused on the doubling map.
    pub fn apply(&self, a: &BasePoint, n: i64) -> Result<BasePoint> {
        self.check_point(a)?;
        if n < 0 && !self.is_invertible() {
            return Err(Error::NonInvertible {
                system: self.name(),
                n,
            });
        }
        Ok(match (&self.kind, *a) {
            (BaseKind::Rotation { alpha }, BasePoint::Circle { x }) => {
                BasePoint::Circle {
                    x: wrap_unit(x + n as f64 * alpha.value()),
                }
            }
            (BaseKind::Doubling, BasePoint::Circle { mut x }) => {
                // Each doubling discards one mantissa bit; zero is fixed.
                for _ in 0..n {
                    if x == 0.0 {
                        break;
                    }
                    x = wrap_unit(2.0 * x);
                }
                BasePoint::Circle { x }
            }
            (BaseKind::Odometer { depth }, BasePoint::Odometer { digits, .. }) => {
                BasePoint::Odometer {
                    digits: digits.wrapping_add(n as u64) & depth_mask(*depth),
                    depth: *depth,
                }
            }
            (BaseKind::TorusSkew { alpha }, BasePoint::Torus { a, x }) => {
                // F^n(a, x) = (a + nα, x + n a + α n(n−1)/2), valid for all n ∈ ℤ.
                let alpha = alpha.value();
                let tri = (n as i128) * (n as i128 - 1) / 2;
                let shift = wrap_unit(n as f64 * a) + wrap_unit(tri as f64 * alpha);
                BasePoint::Torus {
                    a: wrap_unit(a + n as f64 * alpha),
                    x: wrap_unit(x + shift),
                }
            }
            _ => unreachable!("checked by check_point"),
        })
    }

    /// One forward step `f(a)`.
    pub fn step(&self, a: &BasePoint) -> Result<BasePoint> {
        self.apply(a, 1)
    }

    pub fn distance(&self, a: &BasePoint, b: &BasePoint) -> Result<f64> {
        self.check_point(a)?;
        self.check_point(b)?;
        Ok(match (*a, *b) {
            (BasePoint::Circle { x: p }, BasePoint::Circle { x: q }) => arc(p, q),
            (BasePoint::Torus { a: a1, x: x1 }, BasePoint::Torus { a: a2, x: x2 }) => {
                arc(a1, a2).max(arc(x1, x2))
            }
            (BasePoint::Odometer { digits: p, .. }, BasePoint::Odometer { digits: q, .. }) => {
                let diff = p ^ q;
                if diff == 0 {
                    0.0
                } else {
                    0.5f64.powi(diff.trailing_zeros() as i32 + 1)
                }
            }
            _ => unreachable!("checked by check_point"),
        })
    }

    /// `count` points drawn from the invariant measure (length measure on
    /// circle and torus, fair coin digits on the odometer).
    pub fn sample_measure(&self, count: usize, seed: u64) -> Vec<BasePoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.random_point(&mut rng)).collect()
    }

    /// [`BaseSystem::sample_measure`] with the system's own seed.
    pub fn sample(&self, count: usize) -> Vec<BasePoint> {
        self.sample_measure(count, self.seed)
    }

    fn random_point<R: Rng>(&self, rng: &mut R) -> BasePoint {
        match self.kind {
            BaseKind::Rotation { .. } | BaseKind::Doubling => BasePoint::Circle { x: rng.gen() },
            BaseKind::Odometer { depth } => BasePoint::Odometer {
                digits: rng.gen::<u64>() & depth_mask(depth),
                depth,
            },
            BaseKind::TorusSkew { .. } => BasePoint::Torus {
                a: rng.gen(),
                x: rng.gen(),
            },
        }
    }

    /// Deterministic sample of at least `count` points of the open ball
    /// `{b : d(b, center) < radius}`: a uniform grid on circle and torus,
    /// a sub-cylinder enumeration on the odometer.
    pub fn ball_grid(&self, center: &BasePoint, radius: f64, count: usize) -> Result<Vec<BasePoint>> {
        self.check_point(center)?;
        if radius.is_nan() || radius <= 0.0 {
            return Err(Error::invalid("ball radius must be positive"));
        }
        let count = count.max(1);
        Ok(match *center {
            BasePoint::Circle { x } => circle_grid(x, radius, count)
                .into_iter()
                .map(|x| BasePoint::Circle { x })
                .collect(),
            BasePoint::Torus { a, x } => {
                let side = (count as f64).sqrt().ceil() as usize;
                let xs = circle_grid(a, radius, side);
                let ys = circle_grid(x, radius, side);
                xs.iter()
                    .flat_map(|&p| ys.iter().map(move |&q| BasePoint::Torus { a: p, x: q }))
                    .collect()
            }
            BasePoint::Odometer { digits, depth } => {
                // Ball = points agreeing with the center on the first m digits,
                // m the least integer with 2^{-(m+1)} < radius.
                let mut m: u32 = 0;
                while 0.5f64.powi(m as i32 + 1) >= radius && m < depth as u32 {
                    m += 1;
                }
                let free = depth as u32 - m;
                let want = count.next_power_of_two().trailing_zeros().min(free);
                if want == 0 {
                    return Ok(vec![*center]);
                }
                let prefix = digits & depth_mask(m as u8);
                (0..(1u64 << want))
                    .map(|s| BasePoint::Odometer {
                        digits: (prefix | (s << m)) & depth_mask(depth),
                        depth,
                    })
                    .collect()
            }
        })
    }
}

fn arc(p: f64, q: f64) -> f64 {
    let d = (p - q).abs();
    d.min(1.0 - d)
}

/// Midpoint grid of `count` points in the arc of half-width `radius` around
/// `center`, or on the whole circle when the arc covers it.
fn circle_grid(center: f64, radius: f64, count: usize) -> Vec<f64> {
    if radius >= 0.5 {
        return (0..count)
            .map(|i| wrap_unit(center + (i as f64 + 0.5) / count as f64))
            .collect();
    }
    (0..count)
        .map(|i| wrap_unit(center + radius * (2.0 * (i as f64 + 0.5) / count as f64 - 1.0)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn add_with_carry(digits: &[u8]) -> Vec<u8> {
        let mut out = digits.to_vec();
        for d in out.iter_mut() {
            if *d == 1 {
                *d = 0;
            } else {
                *d = 1;
                break;
            }
        }
        out
    }

    #[test]
    fn rotation_step() {
        let s = BaseSystem::rotation(0.25).unwrap();
        let b = s.apply(&BasePoint::circle(0.9), 1).unwrap();
        assert!((b.circle_coordinate().unwrap() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn golden_two_steps() {
        let s = BaseSystem::golden_rotation();
        let mut x = 0.0f64;
        for _ in 0..2 {
            x = (x + GOLDEN) % 1.0;
        }
        let b = s.apply(&BasePoint::circle(0.0), 2).unwrap();
        let got = b.circle_coordinate().unwrap();
        assert!((got - x).abs() < 1e-15);
        assert!((got - 0.2360679775).abs() < 1e-10);
    }

    #[test]
    fn odometer_matches_carry_oracle() {
        let s = BaseSystem::odometer(4).unwrap();
        let a = BasePoint::odometer_from_digits(&[1, 1, 0, 0]).unwrap();
        let b = s.apply(&a, 1).unwrap();
        assert_eq!(b.digits().unwrap(), add_with_carry(&[1, 1, 0, 0]));
        assert_eq!(b.digits().unwrap(), vec![0, 0, 1, 0]);

        // every point of depth 5, several steps
        let s = BaseSystem::odometer(5).unwrap();
        for v in 0..32u64 {
            let a = BasePoint::odometer(v, 5).unwrap();
            let mut d = a.digits().unwrap();
            for n in 1..40 {
                d = add_with_carry(&d);
                assert_eq!(s.apply(&a, n).unwrap().digits().unwrap(), d);
            }
        }
    }

    #[test]
    fn doubling_rejects_negative() {
        let s = BaseSystem::doubling();
        let err = s.apply(&BasePoint::circle(0.3), -1).unwrap_err();
        assert!(matches!(err, Error::NonInvertible { .. }));
    }

    #[test]
    fn odometer_inverse_and_wrap() {
        let s = BaseSystem::odometer(3).unwrap();
        let zero = BasePoint::odometer(0, 3).unwrap();
        let back = s.apply(&zero, -1).unwrap();
        assert_eq!(back.digits().unwrap(), vec![1, 1, 1]);
        assert_eq!(s.apply(&zero, 8).unwrap(), zero);
    }

    #[test]
    fn distances() {
        let c = BaseSystem::golden_rotation();
        let d = c.distance(&BasePoint::circle(0.1), &BasePoint::circle(0.9)).unwrap();
        assert!((d - 0.2).abs() < 1e-15);

        let o = BaseSystem::odometer(3).unwrap();
        let a = BasePoint::odometer_from_digits(&[0, 1, 1]).unwrap();
        let b = BasePoint::odometer_from_digits(&[0, 1, 0]).unwrap();
        assert_eq!(o.distance(&a, &b).unwrap(), 0.125);
        assert_eq!(o.distance(&a, &a).unwrap(), 0.0);

        let t = BaseSystem::torus_skew(Alpha::Irrational(GOLDEN)).unwrap();
        let d = t.distance(&BasePoint::torus(0.0, 0.5), &BasePoint::torus(0.5, 0.5)).unwrap();
        assert_eq!(d, 0.5);
    }

    #[test]
    fn kind_mismatch_is_an_error() {
        let o = BaseSystem::odometer(3).unwrap();
        let err = o.distance(&BasePoint::circle(0.1), &BasePoint::circle(0.2)).unwrap_err();
        assert!(matches!(err, Error::KindMismatch { .. }));
        let o4 = BaseSystem::odometer(4).unwrap();
        let p3 = BasePoint::odometer(1, 3).unwrap();
        assert!(o4.apply(&p3, 1).is_err());
    }

    #[test]
    fn property_flags() {
        let r = BaseSystem::rotation_with(Alpha::Rational { num: 1, den: 4 }).unwrap();
        assert!(!r.properties().minimal);
        let g = BaseSystem::golden_rotation();
        assert!(g.properties().minimal && g.properties().uniquely_ergodic && !g.properties().mixing);
        let d = BaseSystem::doubling();
        assert!(d.properties().mixing && !d.properties().minimal);
        let o = BaseSystem::odometer(8).unwrap();
        assert!(o.properties().minimal && o.properties().uniquely_ergodic);
        let t = BaseSystem::torus_skew(Alpha::Irrational(GOLDEN)).unwrap();
        assert!(t.properties().minimal && t.properties().uniquely_ergodic);
        assert!(BaseSystem::rotation(1.5).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let r = BaseSystem::golden_rotation();
        let a = r.sample_measure(3, 7);
        assert_eq!(a, r.sample_measure(3, 7));
        assert!(a.iter().all(|p| {
            let x = p.circle_coordinate().unwrap();
            (0.0..1.0).contains(&x)
        }));

        let o = BaseSystem::odometer(8).unwrap();
        let p = o.sample_measure(1, 1);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].digits().unwrap().len(), 8);

        let d = BaseSystem::doubling();
        let pts = d.sample_measure(10_000, 2);
        let mean = pts.iter().map(|p| p.circle_coordinate().unwrap()).sum::<f64>() / 1e4;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn torus_closed_form_matches_stepping() {
        let t = BaseSystem::torus_skew(Alpha::Irrational(0.25)).unwrap();
        let p = t.apply(&BasePoint::torus(0.1, 0.0), 2).unwrap();
        match p {
            BasePoint::Torus { a, x } => {
                assert!((a - 0.6).abs() < 1e-12);
                assert!((x - 0.45).abs() < 1e-12);
            }
            _ => panic!(),
        }
        let t = BaseSystem::torus_skew(Alpha::Irrational(GOLDEN)).unwrap();
        let start = BasePoint::torus(0.3, 0.7);
        let mut q = start;
        for n in 1..=200 {
            q = t.step(&q).unwrap();
            let direct = t.apply(&start, n).unwrap();
            assert!(t.distance(&q, &direct).unwrap() < 1e-10);
        }
        let back = t.apply(&t.apply(&start, 13).unwrap(), -13).unwrap();
        assert!(t.distance(&back, &start).unwrap() < 1e-12);
    }

    #[test]
    fn ball_grid_stays_in_ball() {
        let r = BaseSystem::golden_rotation();
        let c = BasePoint::circle(0.02);
        let pts = r.ball_grid(&c, 0.05, 64).unwrap();
        assert_eq!(pts.len(), 64);
        for p in &pts {
            assert!(r.distance(p, &c).unwrap() < 0.05);
        }
        let o = BaseSystem::odometer(16).unwrap();
        let c = BasePoint::odometer(0b1011, 16).unwrap();
        let pts = o.ball_grid(&c, 0.1, 64).unwrap();
        assert_eq!(pts.len(), 64);
        for p in &pts {
            assert!(o.distance(p, &c).unwrap() < 0.1);
        }
        let whole = o.ball_grid(&c, 2.0, 64).unwrap();
        assert_eq!(whole.len(), 64);
    }
}
