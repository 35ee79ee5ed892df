//! Closed-form memory/load points and memory-sharing envelopes.
//!
//! Everything here is an exact rational. `M` is measured in files, loads in
//! multiples of the file size.

use std::fmt;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::schemes::SchemeKind;
use crate::topology::{binomial, count_z, k_i, TopologyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("coded caching gain g={g} outside [1, {max}]")]
    InvalidGain { g: u32, max: u32 },
    #[error("memory {m} outside [0, {n}]")]
    InvalidMemory { m: BigRational, n: u32 },
    #[error("closed-form memory disagrees with the subset-count form at g={g}: {closed} vs {counted}")]
    MemoryMismatch { g: u32, closed: BigRational, counted: BigRational },
    #[error("comparison against the baseline violated at g={g}: {detail}")]
    ComparisonViolated { g: u32, detail: String },
    #[error("envelope needs a point at M = 0")]
    MissingOrigin,
}

pub(crate) fn ratio(num: impl Into<BigInt>, den: impl Into<BigInt>) -> BigRational {
    BigRational::new(num.into(), den.into())
}

fn int(v: &BigUint) -> BigInt {
    BigInt::from(v.clone())
}

fn signed_binomial(x: &BigUint, dx: i64, y: i64) -> BigInt {
    let x = x.to_i64().expect("small K_a") + dx;
    BigInt::from(binomial(x, y))
}

fn users_per_relay(h: u32, r: u32) -> Result<u32, AnalysisError> {
    if r < 1 || r > h {
        return Err(TopologyError::InvalidParams(format!("need 1 <= r <= H, got H={h}, r={r}")).into());
    }
    Ok(k_i(h, r, 1).to_u32().expect("K_1 fits in u32"))
}

fn check_gain(h: u32, r: u32, g: u32) -> Result<u32, AnalysisError> {
    let k1 = users_per_relay(h, r)?;
    if g < 1 || g > k1 {
        return Err(AnalysisError::InvalidGain { g, max: k1 });
    }
    Ok(k1)
}

/// `|Z_t|`, extended with `|Z_0| = 1` (the empty set shares every relay).
pub(crate) fn z_size(h: u32, r: u32, t: u32) -> Result<BigUint, TopologyError> {
    if t == 0 {
        Ok(BigUint::one())
    } else {
        count_z(h, r, t)
    }
}

/// Memory of the per-relay MDS baseline: `N (g - 1) / K_1`.
pub fn memory_baseline(files: u32, h: u32, r: u32, g: u32) -> Result<BigRational, AnalysisError> {
    let k1 = check_gain(h, r, g)?;
    Ok(ratio(u64::from(files) * u64::from(g - 1), k1))
}

/// Memory of the asymmetric placement,
/// `N * sum_a C(r,a) C(K_a - 1, g - 2) (-1)^(a-1) / sum_a C(r,a) C(K_a, g - 1) (-1)^(a-1)`,
/// cross-checked against `N (g-1)|Z_{g-1}| / ((g-1)|Z_{g-1}| + g|Z_g|)`.
pub fn memory_th1(files: u32, h: u32, r: u32, g: u32) -> Result<BigRational, AnalysisError> {
    check_gain(h, r, g)?;
    let g64 = i64::from(g);
    let mut num = BigInt::zero();
    let mut den = BigInt::zero();
    for a in 1..=r {
        let ka = k_i(h, r, a);
        let sign = if a % 2 == 1 { BigInt::one() } else { -BigInt::one() };
        let cra = BigInt::from(binomial(i64::from(r), i64::from(a)));
        num += &sign * &cra * signed_binomial(&ka, -1, g64 - 2);
        den += &sign * &cra * signed_binomial(&ka, 0, g64 - 1);
    }
    let closed = BigRational::new(num * BigInt::from(files), den);

    let prev = BigInt::from(g - 1) * int(&z_size(h, r, g - 1)?);
    let next = BigInt::from(g) * int(&count_z(h, r, g)?);
    let counted = BigRational::new(&prev * BigInt::from(files), &prev + next);
    if closed != counted {
        return Err(AnalysisError::MemoryMismatch { g, closed, counted });
    }
    Ok(closed)
}

/// `K (1 - M/N) / (H g)`: the routing load divided by the gain.
pub fn load_at(files: u32, h: u32, r: u32, g: u32, m: &BigRational) -> Result<BigRational, AnalysisError> {
    users_per_relay(h, r)?;
    if g < 1 {
        return Err(AnalysisError::InvalidGain { g, max: 0 });
    }
    let n = BigRational::from_integer(files.into());
    if m.is_negative() || *m > n {
        return Err(AnalysisError::InvalidMemory { m: m.clone(), n: files });
    }
    let users = BigRational::from_integer(int(&k_i(h, r, 0)));
    let uncached = BigRational::one() - m / &n;
    Ok(users * uncached / BigRational::from_integer(BigInt::from(u64::from(h) * u64::from(g))))
}

/// Per-link relay-to-user load of a symmetric scheme: `(1 - M/N) / r`.
pub fn user_link_load(files: u32, r: u32, m: &BigRational) -> BigRational {
    let n = BigRational::from_integer(files.into());
    (BigRational::one() - m / n) / BigRational::from_integer(r.into())
}

/// An analytic tradeoff point.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemePoint {
    pub scheme: SchemeKind,
    pub g: u32,
    pub m: BigRational,
    pub r1: BigRational,
    pub r2: BigRational,
}

impl SchemePoint {
    /// Max-link load, `max(R1, R2)`.
    pub fn load(&self) -> &BigRational {
        if self.r1 >= self.r2 {
            &self.r1
        } else {
            &self.r2
        }
    }
}

/// The analytic point of a coded scheme at gain `g`.
pub fn coded_point(scheme: SchemeKind, files: u32, h: u32, r: u32, g: u32) -> Result<SchemePoint, AnalysisError> {
    let m = match scheme {
        SchemeKind::Baseline => memory_baseline(files, h, r, g)?,
        SchemeKind::Asymmetric => memory_th1(files, h, r, g)?,
        SchemeKind::Routing => return routing_point(files, h, r, BigRational::zero()),
    };
    let r1 = load_at(files, h, r, g, &m)?;
    let r2 = user_link_load(files, r, &m);
    Ok(SchemePoint { scheme, g, m, r1, r2 })
}

/// Uncoded routing with `M` files cached per user.
pub fn routing_point(files: u32, h: u32, r: u32, m: BigRational) -> Result<SchemePoint, AnalysisError> {
    let r1 = load_at(files, h, r, 1, &m)?;
    let r2 = user_link_load(files, r, &m);
    Ok(SchemePoint { scheme: SchemeKind::Routing, g: 1, m, r1, r2 })
}

/// One row of the per-gain memory comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub g: u32,
    /// `M/N` of the asymmetric placement
    pub th1: BigRational,
    /// `M/N` of the baseline
    pub baseline: BigRational,
    pub equal: bool,
    /// `|Z_g| / |Z_{g-1}|` and its bound `(K_1 - g + 1) / g`; absent at `g = 1`.
    pub z_ratio: Option<(BigRational, BigRational)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub h: u32,
    pub r: u32,
    /// `K_2 + 2`: gains at or above this give identical memories.
    pub equality_threshold: u32,
    pub rows: Vec<ComparisonRow>,
    /// First `g` where the asymmetric memory fails to increase strictly.
    pub monotonicity_break: Option<u32>,
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "H={} r={} equality threshold K2+2={}", self.h, self.r, self.equality_threshold)?;
        writeln!(f, "{:>4} {:>16} {:>16} {:>6}", "g", "M/N th1", "M/N baseline", "equal")?;
        for row in &self.rows {
            writeln!(f, "{:>4} {:>16} {:>16} {:>6}", row.g, row.th1.to_string(), row.baseline.to_string(), row.equal)?;
        }
        if let Some(g) = self.monotonicity_break {
            writeln!(f, "note: th1 memory not strictly increasing at g={g}")?;
        }
        Ok(())
    }
}

/// Compares the asymmetric placement to the baseline for every gain.
///
/// For `g >= 2` the asymmetric memory is at most the baseline memory, with
/// equality exactly when `g >= K_2 + 2`, and `|Z_g|/|Z_{g-1}| >= (K_1-g+1)/g`
/// (the equivalent form of the memory inequality) with the same equality
/// condition. At `g = 1` both memories are zero.
pub fn corollary1_check(h: u32, r: u32) -> Result<ComparisonReport, AnalysisError> {
    let k1 = users_per_relay(h, r)?;
    let k2 = k_i(h, r, 2).to_u32().expect("K_2 fits in u32");
    let threshold = k2 + 2;
    let mut rows = Vec::with_capacity(k1 as usize);
    let mut monotonicity_break = None;
    let mut previous: Option<BigRational> = None;
    for g in 1..=k1 {
        let th1 = memory_th1(1, h, r, g)?;
        let baseline = memory_baseline(1, h, r, g)?;
        let equal = th1 == baseline;
        let violated = |detail: String| AnalysisError::ComparisonViolated { g, detail };
        if th1 > baseline {
            return Err(violated(format!("th1 {th1} exceeds baseline {baseline}")));
        }
        let z_ratio = if g == 1 {
            if !th1.is_zero() || !baseline.is_zero() {
                return Err(violated("memories at g=1 must both be zero".into()));
            }
            None
        } else {
            if equal != (g >= threshold) {
                return Err(violated(format!(
                    "equal={equal} but threshold K2+2={threshold}"
                )));
            }
            let zg = int(&count_z(h, r, g)?);
            let zprev = int(&count_z(h, r, g - 1)?);
            let lhs = BigRational::new(zg, zprev);
            let rhs = ratio(i64::from(k1) - i64::from(g) + 1, g);
            // M_th1 <= M_baseline  <=>  |Z_g| / |Z_(g-1)| >= (K_1 - g + 1) / g
            if lhs < rhs {
                return Err(violated(format!("|Z_g|/|Z_(g-1)| = {lhs} < {rhs}")));
            }
            if (lhs == rhs) != (g >= threshold) {
                return Err(violated(format!("ratio equality {lhs} vs {rhs} disagrees with threshold")));
            }
            Some((lhs, rhs))
        };
        if let Some(prev) = &previous {
            if th1 <= *prev && monotonicity_break.is_none() {
                monotonicity_break = Some(g);
            }
        }
        previous = Some(th1.clone());
        rows.push(ComparisonRow { g, th1, baseline, equal, z_ratio });
    }
    Ok(ComparisonReport { h, r, equality_threshold: threshold, rows, monotonicity_break })
}

/// Lower convex envelope of a set of tradeoff points (memory sharing).
#[derive(Clone, Debug, PartialEq)]
pub struct TradeoffCurve {
    /// Input points sorted by `M`.
    pub points: Vec<SchemePoint>,
    /// Envelope vertices `(M, load)`, strictly increasing in `M`.
    pub vertices: Vec<(BigRational, BigRational)>,
}

impl TradeoffCurve {
    /// Envelope value at `m`, or `None` outside `[0, N]`.
    pub fn evaluate(&self, m: &BigRational) -> Option<BigRational> {
        let first = self.vertices.first()?;
        let last = self.vertices.last()?;
        if *m < first.0 || *m > last.0 {
            return None;
        }
        for w in self.vertices.windows(2) {
            let (m0, r0) = &w[0];
            let (m1, r1) = &w[1];
            if m <= m1 {
                let t = (m - m0) / (m1 - m0);
                return Some(r0 + (r1 - r0) * t);
            }
        }
        Some(last.1.clone())
    }
}

fn cross(o: &(BigRational, BigRational), a: &(BigRational, BigRational), b: &(BigRational, BigRational)) -> BigRational {
    (&a.0 - &o.0) * (&b.1 - &o.1) - (&a.1 - &o.1) * (&b.0 - &o.0)
}

/// Builds the envelope over `[0, N]` using each point's max-link load. The
/// trivial point `(N, 0)` is always added; a point at `M = 0` is required.
pub fn envelope(points: &[SchemePoint], files: u32) -> Result<TradeoffCurve, AnalysisError> {
    if !points.iter().any(|p| p.m.is_zero()) {
        return Err(AnalysisError::MissingOrigin);
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.m.cmp(&b.m).then_with(|| a.load().cmp(b.load())));

    let mut candidates: Vec<(BigRational, BigRational)> =
        sorted.iter().map(|p| (p.m.clone(), p.load().clone())).collect();
    candidates.push((BigRational::from_integer(files.into()), BigRational::zero()));
    candidates.sort();
    candidates.dedup_by(|b, a| a.0 == b.0);

    let mut hull: Vec<(BigRational, BigRational)> = Vec::new();
    for p in candidates {
        while hull.len() >= 2 && !cross(&hull[hull.len() - 2], &hull[hull.len() - 1], &p).is_positive() {
            hull.pop();
        }
        hull.push(p);
    }
    Ok(TradeoffCurve { points: sorted, vertices: hull })
}

/// `M` values `N * i / (count - 1)` for `i in 0..count`.
pub fn memory_grid(files: u32, count: usize) -> Vec<BigRational> {
    assert!(count >= 2);
    (0..count)
        .map(|i| ratio(u64::from(files) * i as u64, count as u64 - 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        ratio(n, d)
    }

    #[test]
    fn baseline_memory_values() {
        assert_eq!(memory_baseline(6, 4, 2, 2).unwrap(), q(2, 1));
        assert_eq!(memory_baseline(1, 4, 2, 2).unwrap(), q(1, 3));
        assert_eq!(memory_baseline(7, 4, 2, 1).unwrap(), q(0, 1));
        assert_eq!(memory_baseline(20, 6, 3, 10).unwrap(), q(18, 1));
        assert!(memory_baseline(1, 4, 2, 4).is_err());
        assert!(memory_baseline(1, 4, 2, 0).is_err());
    }

    #[test]
    fn th1_memory_values() {
        assert_eq!(memory_th1(1, 4, 2, 2).unwrap(), q(1, 5));
        assert_eq!(memory_th1(1, 4, 2, 3).unwrap(), q(2, 3));
        assert_eq!(memory_th1(1, 4, 2, 3).unwrap(), memory_baseline(1, 4, 2, 3).unwrap());
        assert_eq!(memory_th1(9, 4, 2, 1).unwrap(), q(0, 1));
    }

    #[test]
    fn load_values() {
        // K/H = K1/r
        assert_eq!(load_at(5, 6, 3, 1, &q(0, 1)).unwrap(), q(10, 3));
        assert_eq!(load_at(5, 6, 3, 3, &q(5, 1)).unwrap(), q(0, 1));
        assert!(load_at(5, 6, 3, 1, &q(6, 1)).is_err());
    }

    #[test]
    fn comparison_small_network() {
        let rep = corollary1_check(4, 2).unwrap();
        assert_eq!(rep.equality_threshold, 3);
        let eq: Vec<bool> = rep.rows.iter().map(|r| r.equal).collect();
        assert_eq!(eq, vec![true, false, true]);
    }

    #[test]
    fn comparison_h6_r3() {
        let rep = corollary1_check(6, 3).unwrap();
        assert_eq!(rep.equality_threshold, 6);
        for row in &rep.rows {
            if row.g >= 2 {
                assert_eq!(row.equal, row.g >= 6, "g={}", row.g);
            }
        }
        assert_eq!(rep.monotonicity_break, None);
    }

    #[test]
    fn comparison_degenerate() {
        let rep = corollary1_check(3, 3).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert!(rep.rows[0].th1.is_zero() && rep.rows[0].baseline.is_zero());
    }

    fn pt(m: BigRational, r1: BigRational) -> SchemePoint {
        SchemePoint { scheme: SchemeKind::Baseline, g: 1, m, r1, r2: BigRational::zero() }
    }

    #[test]
    fn envelope_two_segments() {
        let curve = envelope(&[pt(q(0, 1), q(4, 1)), pt(q(1, 1), q(1, 1))], 4).unwrap();
        assert_eq!(curve.vertices.len(), 3);
        assert_eq!(curve.evaluate(&q(1, 2)).unwrap(), q(5, 2));
        assert_eq!(curve.evaluate(&q(4, 1)).unwrap(), q(0, 1));
        assert_eq!(curve.evaluate(&q(5, 1)), None);
    }

    #[test]
    fn envelope_drops_dominated_point() {
        let pts = [pt(q(0, 1), q(4, 1)), pt(q(1, 1), q(1, 1)), pt(q(2, 1), q(1, 1))];
        let curve = envelope(&pts, 4).unwrap();
        assert!(!curve.vertices.contains(&(q(2, 1), q(1, 1))));
        assert!(curve.evaluate(&q(2, 1)).unwrap() < q(1, 1));
    }

    #[test]
    fn envelope_requires_origin() {
        assert_eq!(envelope(&[pt(q(1, 1), q(1, 1))], 4), Err(AnalysisError::MissingOrigin));
    }
}
