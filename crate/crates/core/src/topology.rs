//! The `(H, r)` combination network and its combinatorial set queries.
//!
//! A server feeds `H` relays over orthogonal links; each of the `K = C(H, r)`
//! users hangs off a distinct `r`-subset of relays. Users are numbered
//! `1..=K` following the colexicographic order of their relay subsets, so the
//! mapping is fully deterministic.
//!
//! All counting is done with arbitrary-precision integers. Binomials follow
//! the convention `C(x, y) = 0` whenever `x < 0`, `y < 0` or `x < y`.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

pub type RelayId = u32;
pub type UserId = u32;
pub type FileId = u32;

/// Largest number of subsets `enumerate_z` will materialize.
pub const ENUMERATION_CAP: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("invalid network parameters: {0}")]
    InvalidParams(String),
    #[error("subset size t must be at least 1 (got {0})")]
    InvalidSubsetSize(u32),
    #[error("enumerating Z_{t} would produce {count} subsets, above the cap of {cap}")]
    EnumerationTooLarge { t: u32, count: BigUint, cap: u64 },
    #[error("per-user incidence identity violated at (H={h}, r={r}, t={t}): t*|Z_t| = {lhs}, K*sum = {rhs}")]
    IdentityViolated { h: u32, r: u32, t: u32, lhs: BigUint, rhs: BigUint },
    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: u32 },
}

/// `C(x, y)` with the zero convention for out-of-range arguments.
pub fn binomial(x: i64, y: i64) -> BigUint {
    if x < 0 || y < 0 || x < y {
        return BigUint::zero();
    }
    let y = y.min(x - y);
    let mut acc = BigUint::one();
    for i in 1..=y {
        acc *= BigUint::from((x - y + i) as u64);
        acc /= BigUint::from(i as u64);
    }
    acc
}

fn binomial_signed(x: i64, y: i64) -> BigInt {
    BigInt::from(binomial(x, y))
}

fn check_hr(h: u32, r: u32) -> Result<(), TopologyError> {
    if r < 1 || r > h {
        return Err(TopologyError::InvalidParams(format!(
            "need 1 <= r <= H, got H={h}, r={r}"
        )));
    }
    Ok(())
}

/// `K_i = C(H - i, r - i)`: the number of users attached to any fixed set of
/// `i` relays. `K_0` is the user count and `K_1` the per-relay fan-out.
pub fn k_i(h: u32, r: u32, i: u32) -> BigUint {
    binomial(h as i64 - i as i64, r as i64 - i as i64)
}

/// `|Z_t|` by inclusion-exclusion over the relays:
/// `sum_{n=1}^{r} C(H, n) C(K_n, t) (-1)^{n-1}`.
pub fn count_z(h: u32, r: u32, t: u32) -> Result<BigUint, TopologyError> {
    check_hr(h, r)?;
    if t < 1 {
        return Err(TopologyError::InvalidSubsetSize(t));
    }
    let mut sum = BigInt::zero();
    for n in 1..=r {
        let kn = k_i(h, r, n).to_i64().expect("K_n fits in i64");
        let term = binomial_signed(h as i64, n as i64) * binomial_signed(kn, t as i64);
        if n % 2 == 1 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    assert!(!sum.is_negative(), "inclusion-exclusion produced a negative count");
    Ok(sum.to_biguint().expect("non-negative"))
}

/// Number of members of `Z_t` containing any fixed user, i.e. `t |Z_t| / K`,
/// evaluated as `sum_{n=1}^{r} C(r, n) C(K_n - 1, t - 1) (-1)^{n-1}`.
///
/// Fails if `t |Z_t|` and `K` times that sum disagree.
pub fn per_user_incidence(h: u32, r: u32, t: u32) -> Result<BigUint, TopologyError> {
    let z = count_z(h, r, t)?;
    let mut sum = BigInt::zero();
    for n in 1..=r {
        let kn = k_i(h, r, n).to_i64().expect("K_n fits in i64");
        let term = binomial_signed(r as i64, n as i64) * binomial_signed(kn - 1, t as i64 - 1);
        if n % 2 == 1 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    let rhs = sum
        .to_biguint()
        .ok_or_else(|| TopologyError::IdentityViolated {
            h,
            r,
            t,
            lhs: &z * t,
            rhs: BigUint::zero(),
        })?;
    let lhs = &z * t;
    let scaled = k_i(h, r, 0) * &rhs;
    if lhs != scaled {
        return Err(TopologyError::IdentityViolated { h, r, t, lhs, rhs: scaled });
    }
    Ok(rhs)
}

/// A set of user IDs, kept sorted strictly ascending.
///
/// Ordering is colexicographic (compare the largest elements first), which
/// is the canonical order for every collection of equal-size sets here.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct UserSet(Vec<UserId>);

impl UserSet {
    pub fn new(members: impl IntoIterator<Item = UserId>) -> Self {
        let mut v: Vec<UserId> = members.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        UserSet(v)
    }

    pub fn empty() -> Self {
        UserSet(Vec::new())
    }

    pub fn members(&self) -> &[UserId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, user: UserId) -> bool {
        self.0.binary_search(&user).is_ok()
    }

    /// The set with `user` removed.
    pub fn without(&self, user: UserId) -> UserSet {
        UserSet(self.0.iter().copied().filter(|&u| u != user).collect())
    }

    pub fn is_subset_of(&self, other: &UserSet) -> bool {
        self.0.iter().all(|&u| other.contains(u))
    }
}

impl Ord for UserSet {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .iter()
            .rev()
            .cmp(other.0.iter().rev())
            .then_with(|| self.0.len().cmp(&other.0.len()))
    }
}

impl PartialOrd for UserSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for UserSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, u) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{u}")?;
        }
        f.write_str("}")
    }
}

impl serde::Serialize for UserSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl FromIterator<UserId> for UserSet {
    fn from_iter<I: IntoIterator<Item = UserId>>(iter: I) -> Self {
        UserSet::new(iter)
    }
}

/// All `t`-subsets of `items` (which must be sorted ascending), in colex order.
pub fn subsets_colex(items: &[u32], t: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    if t > items.len() {
        return out;
    }
    // Colex order over positions: advance the lowest position that can move.
    let mut pos: Vec<usize> = (0..t).collect();
    loop {
        out.push(pos.iter().map(|&p| items[p]).collect());
        let mut i = 0;
        while i < t {
            let limit = if i + 1 < t { pos[i + 1] } else { items.len() };
            if pos[i] + 1 < limit {
                pos[i] += 1;
                for (j, p) in pos.iter_mut().enumerate().take(i) {
                    *p = j;
                }
                break;
            }
            i += 1;
        }
        if i == t {
            return out;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkParams {
    /// H
    pub relays: u32,
    /// r
    pub relays_per_user: u32,
    /// N
    pub files: u32,
    /// B, in bytes
    pub file_size: u64,
}

impl NetworkParams {
    pub fn new(relays: u32, relays_per_user: u32, files: u32, file_size: u64) -> Self {
        NetworkParams { relays, relays_per_user, files, file_size }
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        check_hr(self.relays, self.relays_per_user)?;
        if self.files < 1 {
            return Err(TopologyError::InvalidParams("need N >= 1".into()));
        }
        if self.file_size < 1 {
            return Err(TopologyError::InvalidParams("need B >= 1".into()));
        }
        let users = k_i(self.relays, self.relays_per_user, 0);
        if users > BigUint::from(u32::MAX) {
            return Err(TopologyError::InvalidParams(format!("K = {users} users is too many")));
        }
        Ok(())
    }
}

/// An immutable combination network.
#[derive(Clone, Debug)]
pub struct NetworkTopology {
    params: NetworkParams,
    /// `users[k - 1]` is the sorted relay set of user `k`.
    users: Vec<Vec<RelayId>>,
    /// `relay_users[h - 1]` is the set of users attached to relay `h`.
    relay_users: Vec<UserSet>,
    by_relay_set: HashMap<Vec<RelayId>, UserId>,
}

/// Builds the network with users in colex order of their relay subsets.
pub fn build_network(params: NetworkParams) -> Result<NetworkTopology, TopologyError> {
    params.validate()?;
    let relays: Vec<RelayId> = (1..=params.relays).collect();
    let users = subsets_colex(&relays, params.relays_per_user as usize);
    let mut relay_users = vec![Vec::new(); params.relays as usize];
    let mut by_relay_set = HashMap::with_capacity(users.len());
    for (idx, set) in users.iter().enumerate() {
        let id = idx as UserId + 1;
        for &h in set {
            relay_users[h as usize - 1].push(id);
        }
        by_relay_set.insert(set.clone(), id);
    }
    Ok(NetworkTopology {
        params,
        users,
        relay_users: relay_users.into_iter().map(UserSet).collect(),
        by_relay_set,
    })
}

impl NetworkTopology {
    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn relay_count(&self) -> u32 {
        self.params.relays
    }

    pub fn relays_per_user(&self) -> u32 {
        self.params.relays_per_user
    }

    /// K
    pub fn user_count(&self) -> u32 {
        self.users.len() as u32
    }

    /// K_1, the number of users behind each relay.
    pub fn users_per_relay(&self) -> u32 {
        self.relay_users[0].len() as u32
    }

    pub fn relays(&self) -> impl Iterator<Item = RelayId> {
        1..=self.params.relays
    }

    pub fn user_ids(&self) -> impl Iterator<Item = UserId> {
        1..=self.user_count()
    }

    /// `H_k`: the relays user `k` is attached to.
    pub fn relays_of(&self, user: UserId) -> &[RelayId] {
        &self.users[user as usize - 1]
    }

    /// `U_h`: the users attached to relay `h`.
    pub fn users_of(&self, relay: RelayId) -> &UserSet {
        &self.relay_users[relay as usize - 1]
    }

    pub fn user_for_relays(&self, relays: &[RelayId]) -> Option<UserId> {
        self.by_relay_set.get(relays).copied()
    }

    /// `R_W`: relays connected to every user in `W`. For the empty set this
    /// is every relay.
    pub fn common_relays(&self, users: &UserSet) -> Vec<RelayId> {
        let mut members = users.members().iter();
        let Some(&first) = members.next() else {
            return self.relays().collect();
        };
        let mut acc: Vec<RelayId> = self.relays_of(first).to_vec();
        for &k in members {
            let hk = self.relays_of(k);
            acc.retain(|h| hk.binary_search(h).is_ok());
            if acc.is_empty() {
                break;
            }
        }
        acc
    }

    /// `U_Y`: users connected to every relay in `Y`.
    pub fn common_users(&self, relays: &[RelayId]) -> UserSet {
        let mut iter = relays.iter();
        let Some(&first) = iter.next() else {
            return UserSet::new(self.user_ids());
        };
        let mut acc = self.users_of(first).members().to_vec();
        for &h in iter {
            let uh = self.users_of(h);
            acc.retain(|&k| uh.contains(k));
        }
        UserSet(acc)
    }

    /// `Z_t`: every `t`-subset of users sharing at least one relay, in colex
    /// order. Built as the union over relays of the `t`-subsets of `U_h`.
    pub fn enumerate_z(&self, t: u32) -> Result<Vec<UserSet>, TopologyError> {
        if t < 1 {
            return Err(TopologyError::InvalidSubsetSize(t));
        }
        let count = count_z(self.params.relays, self.params.relays_per_user, t)?;
        if count > BigUint::from(ENUMERATION_CAP) {
            return Err(TopologyError::EnumerationTooLarge { t, count, cap: ENUMERATION_CAP });
        }
        let mut found = BTreeSet::new();
        for h in self.relays() {
            for s in subsets_colex(self.users_of(h).members(), t as usize) {
                found.insert(UserSet(s));
            }
        }
        Ok(found.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(h: u32, r: u32) -> NetworkTopology {
        build_network(NetworkParams::new(h, r, 1, 1)).unwrap()
    }

    fn set(v: &[u32]) -> UserSet {
        UserSet::new(v.iter().copied())
    }

    #[test]
    fn binomial_convention() {
        assert_eq!(binomial(5, 2), BigUint::from(10u32));
        assert_eq!(binomial(-1, 0), BigUint::zero());
        assert_eq!(binomial(3, -1), BigUint::zero());
        assert_eq!(binomial(2, 3), BigUint::zero());
        assert_eq!(binomial(0, 0), BigUint::one());
    }

    #[test]
    fn rejects_bad_params() {
        assert!(build_network(NetworkParams::new(3, 4, 1, 1)).is_err());
        assert!(build_network(NetworkParams::new(3, 0, 1, 1)).is_err());
        assert!(build_network(NetworkParams::new(3, 2, 0, 1)).is_err());
    }

    #[test]
    fn single_link_network() {
        let t = net(1, 1);
        assert_eq!(t.user_count(), 1);
        assert_eq!(t.users_of(1), &set(&[1]));
    }

    #[test]
    fn colex_user_labels() {
        let t = net(4, 2);
        let sets: Vec<_> = t.user_ids().map(|k| t.relays_of(k).to_vec()).collect();
        assert_eq!(
            sets,
            vec![vec![1, 2], vec![1, 3], vec![2, 3], vec![1, 4], vec![2, 4], vec![3, 4]]
        );
        assert_eq!(t.users_of(1), &set(&[1, 2, 4]));
        assert_eq!(t.user_for_relays(&[2, 4]), Some(5));
    }

    #[test]
    fn h6_r3_fanout() {
        let t = net(6, 3);
        assert_eq!(t.user_count(), 20);
        for h in t.relays() {
            assert_eq!(t.users_of(h).len(), 10);
        }
    }

    #[test]
    fn k_i_values() {
        assert_eq!(k_i(4, 2, 1), BigUint::from(3u32));
        assert_eq!(k_i(4, 2, 0), BigUint::from(6u32));
        assert_eq!(k_i(6, 3, 2), BigUint::from(4u32));
        // Cross-check K_2 for (6,3) against the common users of every relay pair.
        let t = net(6, 3);
        for pair in subsets_colex(&[1, 2, 3, 4, 5, 6], 2) {
            assert_eq!(t.common_users(&pair).len(), 4);
        }
    }

    #[test]
    fn common_relays_cases() {
        let t = net(4, 2);
        assert_eq!(t.common_relays(&set(&[1, 2])), vec![1]);
        assert_eq!(t.common_relays(&set(&[3])), vec![2, 3]);
        assert!(t.common_relays(&set(&[1, 6])).is_empty());
    }

    #[test]
    fn common_users_cases() {
        let t = net(4, 2);
        // relays {2,3} are shared by user {2,3} which is colex user 3
        assert_eq!(t.common_users(&[2, 3]), set(&[3]));
        assert_eq!(&t.common_users(&[4]), t.users_of(4));
        assert!(t.common_users(&[1, 2, 3]).is_empty());
    }

    #[test]
    fn z_small_network() {
        let t = net(4, 2);
        assert_eq!(t.enumerate_z(1).unwrap().len(), 6);
        let z2 = t.enumerate_z(2).unwrap();
        assert_eq!(z2.len(), 12);
        for bad in [[1, 6], [2, 5], [3, 4]] {
            assert!(!z2.contains(&set(&bad)));
        }
        assert!(t.enumerate_z(4).unwrap().is_empty());
        assert!(t.enumerate_z(0).is_err());
    }

    #[test]
    fn z_is_colex_sorted() {
        let t = net(5, 2);
        let z = t.enumerate_z(3).unwrap();
        assert!(z.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn count_z_small() {
        assert_eq!(count_z(4, 2, 2).unwrap(), BigUint::from(12u32));
        assert_eq!(count_z(6, 3, 1).unwrap(), BigUint::from(20u32));
        assert!(count_z(4, 2, 0).is_err());
    }

    #[test]
    fn per_user_incidence_small() {
        assert_eq!(per_user_incidence(4, 2, 2).unwrap(), BigUint::from(4u32));
        assert_eq!(per_user_incidence(6, 3, 1).unwrap(), BigUint::one());
        let t = net(6, 3);
        let z5 = t.enumerate_z(5).unwrap();
        let with_user_1 = z5.iter().filter(|w| w.contains(1)).count();
        assert_eq!(per_user_incidence(6, 3, 5).unwrap(), BigUint::from(with_user_1));
    }

    #[test]
    fn subsets_colex_order() {
        let s = subsets_colex(&[1, 2, 3, 4], 2);
        assert_eq!(
            s,
            vec![vec![1, 2], vec![1, 3], vec![2, 3], vec![1, 4], vec![2, 4], vec![3, 4]]
        );
        assert_eq!(subsets_colex(&[1, 2], 0), vec![Vec::<u32>::new()]);
        assert!(subsets_colex(&[1, 2], 3).is_empty());
    }

    #[test]
    fn k_chain_strictly_decreasing() {
        for h in 3..=9u32 {
            for r in 2..h {
                for i in 2..=r {
                    assert!(k_i(h, r, i) < k_i(h, r, i - 1), "H={h} r={r} i={i}");
                }
            }
        }
    }
}
