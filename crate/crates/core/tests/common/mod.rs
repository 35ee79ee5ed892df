//! Test-side oracles. Nothing here calls the counting or memory code of the
//! library; results are derived from first principles on small inputs.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;

pub fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn qi(n: impl Into<BigInt>) -> BigRational {
    BigRational::from_integer(n.into())
}

pub fn binom(n: i64, k: i64) -> i128 {
    if n < 0 || k < 0 || k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: i128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as i128 / (i + 1) as i128;
    }
    acc
}

/// All r-subsets of 1..=h in lexicographic order.
pub fn lex_subsets(h: u32, r: u32) -> Vec<Vec<u32>> {
    fn go(start: u32, h: u32, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for x in start..=h {
            cur.push(x);
            go(x + 1, h, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(1, h, r, &mut Vec::new(), &mut out);
    out
}

/// Relay bitmask per user, indexed by user position.
pub fn masks_of(sets: &[Vec<u32>]) -> Vec<u64> {
    sets.iter().map(|s| s.iter().fold(0u64, |m, &x| m | 1 << (x - 1))).collect()
}

/// Exhaustive count of user subsets with a common relay.
pub struct BruteZ {
    /// `by_size[t]` = number of t-subsets with a common relay (`by_size[0]` = 1).
    pub by_size: Vec<u64>,
    /// Same, restricted to subsets containing the first user.
    pub with_first: Vec<u64>,
    /// The subsets themselves (0-based positions), when collection was asked for.
    pub sets: Option<Vec<Vec<u32>>>,
}

/// Depth-first search over increasing user sequences, extending only while
/// the running intersection of relay masks is non-empty. Every subset with a
/// common relay is visited exactly once. Subsets are collected until more
/// than `collect_limit` have been seen; past that `sets` is `None`.
pub fn brute_z(masks: &[u64], collect_limit: u64) -> BruteZ {
    struct St<'a> {
        masks: &'a [u64],
        by_size: Vec<u64>,
        with_first: Vec<u64>,
        cur: Vec<u32>,
        sets: Option<Vec<Vec<u32>>>,
        limit: u64,
    }
    fn rec(st: &mut St, start: usize, mask: u64, depth: usize, first: bool) {
        for i in start..st.masks.len() {
            let m = mask & st.masks[i];
            if m == 0 {
                continue;
            }
            let f = first || (depth == 0 && i == 0);
            st.by_size[depth + 1] += 1;
            if f {
                st.with_first[depth + 1] += 1;
            }
            if let Some(sets) = st.sets.as_mut() {
                if sets.len() as u64 >= st.limit {
                    st.sets = None;
                } else {
                    st.cur.truncate(depth);
                    st.cur.push(i as u32);
                    sets.push(st.cur.clone());
                }
            }
            rec(st, i + 1, m, depth + 1, f);
        }
    }
    let k = masks.len();
    let mut st = St {
        masks,
        by_size: vec![0; k + 1],
        with_first: vec![0; k + 1],
        cur: Vec::new(),
        sets: Some(Vec::new()),
        limit: collect_limit,
    };
    rec(&mut st, 0, u64::MAX, 0, false);
    st.by_size[0] = 1;
    BruteZ { by_size: st.by_size, with_first: st.with_first, sets: st.sets }
}

/// (H, r) pairs with K = C(H, r) <= `cap`, H <= `h_max`.
pub fn small_networks(cap: i128, h_max: u32) -> Vec<(u32, u32)> {
    let mut v = Vec::new();
    for h in 1..=h_max {
        for r in 1..=h {
            if binom(h as i64, r as i64) <= cap {
                v.push((h, r));
            }
        }
    }
    v
}

/// Cached-fraction oracle for the asymmetric scheme from raw counts.
pub fn th1_fraction(z: &[u64], users: u64, g: usize) -> BigRational {
    let k1 = (g as u64 - 1) * z[g - 1];
    let k2 = g as u64 * z[g];
    assert_eq!(k1 % users, 0);
    assert_eq!(k2 % users, 0);
    q((k1 / users) as i64, ((k1 + k2) / users) as i64)
}

/// Lower convex envelope of `(M, load)` points evaluated at `m` by trying
/// every pair of points that brackets it.
pub fn envelope_at(points: &[(BigRational, BigRational)], m: &BigRational) -> BigRational {
    let mut best: Option<BigRational> = None;
    for a in points {
        for b in points {
            let v = if a.0 == *m {
                a.1.clone()
            } else if a.0 < *m && *m < b.0 {
                let t = (m - &a.0) / (&b.0 - &a.0);
                &a.1 + (&b.1 - &a.1) * t
            } else {
                continue;
            };
            if best.as_ref().map_or(true, |x| v < *x) {
                best = Some(v);
            }
        }
    }
    best.expect("m inside the point range")
}
