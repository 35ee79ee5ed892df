//! Placement, delivery and decoding for the three caching schemes.
//!
//! Every scheme runs on real bytes: files are split and MDS-encoded, caches
//! hold actual payloads, the server emits XOR multicast messages to relays,
//! relays forward them unchanged to users, and each user rebuilds its file.
//! Loads are measured from the resulting transcript.
//!
//! Coded schemes share one code path. A [`SubfileLayout`] assigns every
//! MDS symbol of a file to an owner set of users; a list of
//! [`MulticastGroup`]s describes which XOR messages go out and through which
//! relays.
//!
//! * baseline: symbols are indexed by `(h, W)` with `W` a `(g-1)`-subset of
//!   the users behind relay `h`; each `g`-subset `J` of those users gets one
//!   message through relay `h` alone.
//! * asymmetric: symbols are indexed by the members `W` of `Z_{g-1}`; each
//!   `J` in `Z_g` gets one message, split evenly across the relays shared by
//!   all of `J`.
//! * routing: each user caches the same leading `M/N` fraction of every file
//!   and the rest of its request is unicast, split evenly over its `r` relays.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError};
use crate::gfmds::{CodedSymbolBlock, MdsCode, MdsError};
use crate::topology::{
    count_z, per_user_incidence, subsets_colex, FileId, NetworkTopology, RelayId, TopologyError, UserId,
    UserSet,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Mds(#[from] MdsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("invalid scheme configuration: {0}")]
    InvalidConfig(String),
    #[error("file size {size} is not a positive multiple of {unit} bytes")]
    FileSize { size: u64, unit: u64 },
    #[error("library must hold {files} files of {size} bytes")]
    LibraryShape { files: u32, size: u64 },
    #[error("invalid demand vector: {0}")]
    InvalidDemand(String),
    #[error("{what} = {value} is not divisible by K = {users}")]
    NotDivisible { what: &'static str, value: String, users: u32 },
    #[error("user {user} failed to decode: {reason}")]
    DecodeFailed { user: UserId, reason: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeKind {
    #[serde(rename = "routing")]
    Routing,
    #[serde(rename = "baseline_zewail")]
    Baseline,
    #[serde(rename = "th1_asymmetric")]
    Asymmetric,
}

impl SchemeKind {
    pub fn id(self) -> &'static str {
        match self {
            SchemeKind::Routing => "routing",
            SchemeKind::Baseline => "baseline_zewail",
            SchemeKind::Asymmetric => "th1_asymmetric",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for SchemeKind {
    type Err = SchemeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "routing" => Ok(SchemeKind::Routing),
            "baseline" | "baseline_zewail" => Ok(SchemeKind::Baseline),
            "th1" | "th1_asymmetric" | "asymmetric" => Ok(SchemeKind::Asymmetric),
            other => Err(SchemeError::InvalidConfig(format!("unknown scheme '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SchemeConfig {
    /// Uncoded; `memory_fraction` is `M/N` in `[0, 1]`.
    Routing { memory_fraction: BigRational },
    Baseline { gain: u32 },
    Asymmetric { gain: u32 },
}

impl SchemeConfig {
    pub fn kind(&self) -> SchemeKind {
        match self {
            SchemeConfig::Routing { .. } => SchemeKind::Routing,
            SchemeConfig::Baseline { .. } => SchemeKind::Baseline,
            SchemeConfig::Asymmetric { .. } => SchemeKind::Asymmetric,
        }
    }

    /// Coded caching gain; routing has gain 1.
    pub fn gain(&self) -> u32 {
        match self {
            SchemeConfig::Routing { .. } => 1,
            SchemeConfig::Baseline { gain } | SchemeConfig::Asymmetric { gain } => *gain,
        }
    }

    pub fn validate(&self, topo: &NetworkTopology) -> Result<(), SchemeError> {
        match self {
            SchemeConfig::Routing { memory_fraction } => {
                if *memory_fraction < BigRational::zero() || *memory_fraction > BigRational::one() {
                    return Err(SchemeError::InvalidConfig(format!(
                        "M/N = {memory_fraction} outside [0, 1]"
                    )));
                }
            }
            SchemeConfig::Baseline { gain } | SchemeConfig::Asymmetric { gain } => {
                let k1 = topo.users_per_relay();
                if *gain < 1 || *gain > k1 {
                    return Err(SchemeError::InvalidConfig(format!("gain g={gain} outside [1, K1={k1}]")));
                }
            }
        }
        Ok(())
    }
}

/// Subfile counts of a coded scheme, all "per file" except `k3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CodeDims {
    /// Subfiles per file (MDS code length).
    pub n: usize,
    /// Subfiles each user caches.
    pub k1: usize,
    /// Subfiles each user decodes from delivery.
    pub k2: usize,
    /// Multicast messages sent.
    pub k3: usize,
}

impl CodeDims {
    /// MDS code dimension `k1 + k2`.
    pub fn dimension(&self) -> usize {
        self.k1 + self.k2
    }
}

fn to_usize(v: impl ToPrimitive + fmt::Display) -> Result<usize, SchemeError> {
    v.to_usize()
        .ok_or_else(|| SchemeError::InvalidConfig(format!("count {v} exceeds the addressable range")))
}

/// Closed-form subfile counts. Routing is reported as one cached prefix and
/// `K` unicasts.
pub fn code_dims(topo: &NetworkTopology, config: &SchemeConfig) -> Result<CodeDims, SchemeError> {
    config.validate(topo)?;
    let h = topo.relay_count();
    let r = topo.relays_per_user();
    let k1_relay = i64::from(topo.users_per_relay());
    let users = topo.user_count();
    match *config {
        SchemeConfig::Routing { .. } => Ok(CodeDims { n: 1, k1: 1, k2: 0, k3: users as usize }),
        SchemeConfig::Baseline { gain } => {
            let g = i64::from(gain);
            let b = |x, y| crate::topology::binomial(x, y);
            Ok(CodeDims {
                n: to_usize(b(k1_relay, g - 1) * h)?,
                k1: to_usize(b(k1_relay - 1, g - 2) * r)?,
                k2: to_usize(b(k1_relay - 1, g - 1) * r)?,
                k3: to_usize(b(k1_relay, g) * h)?,
            })
        }
        SchemeConfig::Asymmetric { gain } => {
            let z_prev = analysis::z_size(h, r, gain - 1)?;
            let z_next = count_z(h, r, gain)?;
            let cached_total = &z_prev * (gain - 1);
            if !(&cached_total % users).is_zero() {
                return Err(SchemeError::NotDivisible {
                    what: "(g-1)|Z_(g-1)|",
                    value: cached_total.to_string(),
                    users,
                });
            }
            let decoded_total = &z_next * gain;
            if !(&decoded_total % users).is_zero() {
                return Err(SchemeError::NotDivisible { what: "g|Z_g|", value: decoded_total.to_string(), users });
            }
            let k2 = per_user_incidence(h, r, gain)?;
            if k2 != &decoded_total / users {
                return Err(SchemeError::Invariant(format!("k2 {k2} disagrees with g|Z_g|/K")));
            }
            Ok(CodeDims {
                n: to_usize(z_prev)?,
                k1: to_usize(cached_total / users)?,
                k2: to_usize(k2)?,
                k3: to_usize(z_next)?,
            })
        }
    }
}

/// Bytes per field word of the scheme's MDS code (1 for routing).
fn symbol_width(dims: &CodeDims, config: &SchemeConfig) -> Result<u64, SchemeError> {
    match config {
        SchemeConfig::Routing { .. } => Ok(1),
        _ => Ok(MdsCode::new(dims.n, dims.dimension())?.symbol_width() as u64),
    }
}

fn lcm_upto(r: u32) -> u64 {
    (1..=u64::from(r)).fold(1u64, |acc, v| acc.lcm(&v))
}

/// The file size granularity: coded schemes need `(k1+k2) * lcm(1..r) * s`
/// bytes (`s` the field word width); routing needs `denom(M/N) * r`.
pub fn file_size_unit(topo: &NetworkTopology, config: &SchemeConfig) -> Result<u64, SchemeError> {
    let dims = code_dims(topo, config)?;
    let r = topo.relays_per_user();
    match config {
        SchemeConfig::Routing { memory_fraction } => {
            let denom = memory_fraction
                .denom()
                .to_u64()
                .ok_or_else(|| SchemeError::InvalidConfig("M/N denominator too large".into()))?;
            Ok(denom * u64::from(r))
        }
        _ => Ok(dims.dimension() as u64 * lcm_upto(r) * symbol_width(&dims, config)?),
    }
}

/// Smallest valid file size that is at least `requested` bytes.
pub fn minimal_file_size(topo: &NetworkTopology, config: &SchemeConfig, requested: u64) -> Result<u64, SchemeError> {
    let unit = file_size_unit(topo, config)?;
    Ok(requested.max(1).div_ceil(unit) * unit)
}

/// Maps MDS symbol indices (0-based here, 1-based in the code) to owners.
#[derive(Clone, Debug)]
pub struct SubfileLayout {
    pub n: usize,
    /// Users caching each subfile.
    pub owners: Vec<UserSet>,
    /// Baseline: the single relay of the subfile. Asymmetric: `R_W`.
    pub relay_scope: Vec<Vec<RelayId>>,
    index: HashMap<(Option<RelayId>, UserSet), usize>,
}

impl SubfileLayout {
    fn push(&mut self, relay: Option<RelayId>, owners: UserSet, scope: Vec<RelayId>) {
        self.index.insert((relay, owners.clone()), self.owners.len());
        self.owners.push(owners);
        self.relay_scope.push(scope);
        self.n += 1;
    }

    /// Index of the subfile cached by `owners` (and tied to `relay` for the
    /// baseline).
    pub fn index_of(&self, relay: Option<RelayId>, owners: &UserSet) -> Option<usize> {
        self.index.get(&(relay, owners.clone())).copied()
    }

    /// Subfile indices cached by `user`, ascending.
    pub fn cached_by(&self, user: UserId) -> Vec<usize> {
        (0..self.n).filter(|&i| self.owners[i].contains(user)).collect()
    }
}

/// One XOR message: `set` receives it, split across `relays` ascending.
/// `components[j]` is `(user, subfile index)`, meaning the subfile of that
/// user's requested file.
#[derive(Clone, Debug)]
pub struct MulticastGroup {
    pub set: UserSet,
    pub relays: Vec<RelayId>,
    pub components: Vec<(UserId, usize)>,
}

/// Public placement metadata: everything a user may know besides its cache.
#[derive(Clone, Debug)]
pub struct SchemePlan {
    pub config: SchemeConfig,
    pub dims: CodeDims,
    pub code: Option<MdsCode>,
    pub layout: SubfileLayout,
    pub groups: Vec<MulticastGroup>,
    pub files: u32,
    pub file_size: u64,
    /// Bytes per subfile (per cached prefix for routing).
    pub subfile_len: usize,
    /// `M`, in files.
    pub memory: BigRational,
}

/// Per-user cache: `(file, subfile index) -> bytes`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CacheContents {
    pub user: UserId,
    pub entries: BTreeMap<(FileId, usize), Vec<u8>>,
}

impl CacheContents {
    pub fn total_bytes(&self) -> u64 {
        self.entries.values().map(|v| v.len() as u64).sum()
    }

    pub fn get(&self, file: FileId, subfile: usize) -> Option<&[u8]> {
        self.entries.get(&(file, subfile)).map(Vec::as_slice)
    }
}

/// Server-side state: the library and its encoded subfiles.
#[derive(Clone, Debug)]
pub struct ServerStore {
    library: Vec<Vec<u8>>,
    /// `encoded[file - 1][subfile]`; empty for routing.
    encoded: Vec<Vec<Vec<u8>>>,
}

#[derive(Clone, Debug)]
pub struct Placement {
    pub plan: SchemePlan,
    pub caches: Vec<CacheContents>,
    pub server: ServerStore,
}

impl Placement {
    pub fn layout(&self) -> &SubfileLayout {
        &self.plan.layout
    }
}

/// `N` files of `B` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Library {
    files: Vec<Vec<u8>>,
}

impl Library {
    pub fn new(files: Vec<Vec<u8>>) -> Self {
        Library { files }
    }

    /// Reproducible contents: a ChaCha8 stream keyed by `seed` in
    /// little-endian in the first 8 key bytes (rest zero), filling file 1,
    /// then file 2, and so on.
    pub fn random(files: u32, size: u64, seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        let files = (0..files)
            .map(|_| {
                let mut f = vec![0u8; size as usize];
                rng.fill_bytes(&mut f);
                f
            })
            .collect();
        Library { files }
    }

    pub fn file(&self, id: FileId) -> &[u8] {
        &self.files[id as usize - 1]
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

/// One requested file per user, in user order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandVector(pub Vec<FileId>);

impl DemandVector {
    /// User `k` requests file `k`; needs `N >= K`.
    pub fn worst_case(users: u32, files: u32) -> Result<Self, SchemeError> {
        if files < users {
            return Err(SchemeError::InvalidDemand(format!(
                "all-distinct demand needs N >= K (N={files}, K={users})"
            )));
        }
        Ok(DemandVector((1..=users).collect()))
    }

    pub fn random<R: Rng + ?Sized>(users: u32, files: u32, rng: &mut R) -> Self {
        DemandVector((0..users).map(|_| rng.gen_range(1..=files)).collect())
    }

    pub fn validate(&self, users: u32, files: u32) -> Result<(), SchemeError> {
        if self.0.len() != users as usize {
            return Err(SchemeError::InvalidDemand(format!("expected {users} entries, got {}", self.0.len())));
        }
        if let Some(bad) = self.0.iter().find(|&&d| d < 1 || d > files) {
            return Err(SchemeError::InvalidDemand(format!("file id {bad} outside 1..={files}")));
        }
        Ok(())
    }

    pub fn of(&self, user: UserId) -> FileId {
        self.0[user as usize - 1]
    }
}

fn build_layout(topo: &NetworkTopology, config: &SchemeConfig) -> Result<SubfileLayout, SchemeError> {
    let mut layout = SubfileLayout { n: 0, owners: Vec::new(), relay_scope: Vec::new(), index: HashMap::new() };
    match *config {
        SchemeConfig::Routing { .. } => {
            layout.push(None, UserSet::new(topo.user_ids()), topo.relays().collect());
        }
        SchemeConfig::Baseline { gain } => {
            for h in topo.relays() {
                for w in subsets_colex(topo.users_of(h).members(), gain as usize - 1) {
                    layout.push(Some(h), UserSet::new(w), vec![h]);
                }
            }
        }
        SchemeConfig::Asymmetric { gain } => {
            let owner_sets = if gain == 1 { vec![UserSet::empty()] } else { topo.enumerate_z(gain - 1)? };
            for w in owner_sets {
                let scope = topo.common_relays(&w);
                layout.push(None, w, scope);
            }
        }
    }
    Ok(layout)
}

fn build_groups(
    topo: &NetworkTopology,
    config: &SchemeConfig,
    layout: &SubfileLayout,
) -> Result<Vec<MulticastGroup>, SchemeError> {
    let missing = |j: UserId, set: &UserSet| {
        SchemeError::Invariant(format!("no subfile for owner set {} (user {j})", set.without(j)))
    };
    let mut groups = Vec::new();
    match *config {
        SchemeConfig::Routing { .. } => {
            for k in topo.user_ids() {
                groups.push(MulticastGroup {
                    set: UserSet::new([k]),
                    relays: topo.relays_of(k).to_vec(),
                    components: Vec::new(),
                });
            }
        }
        SchemeConfig::Baseline { gain } => {
            for h in topo.relays() {
                for j in subsets_colex(topo.users_of(h).members(), gain as usize) {
                    let set = UserSet::new(j);
                    let components = set
                        .members()
                        .iter()
                        .map(|&u| layout.index_of(Some(h), &set.without(u)).map(|i| (u, i)).ok_or_else(|| missing(u, &set)))
                        .collect::<Result<_, _>>()?;
                    groups.push(MulticastGroup { set, relays: vec![h], components });
                }
            }
        }
        SchemeConfig::Asymmetric { gain } => {
            for set in topo.enumerate_z(gain)? {
                let relays = topo.common_relays(&set);
                let components = set
                    .members()
                    .iter()
                    .map(|&u| layout.index_of(None, &set.without(u)).map(|i| (u, i)).ok_or_else(|| missing(u, &set)))
                    .collect::<Result<_, _>>()?;
                groups.push(MulticastGroup { set, relays, components });
            }
        }
    }
    Ok(groups)
}

/// Builds the layout and fills every user's cache.
pub fn place(topo: &NetworkTopology, config: &SchemeConfig, library: &Library) -> Result<Placement, SchemeError> {
    config.validate(topo)?;
    let params = topo.params();
    let (files, size) = (params.files, params.file_size);
    if library.len() != files as usize || library.files.iter().any(|f| f.len() as u64 != size) {
        return Err(SchemeError::LibraryShape { files, size });
    }
    let unit = file_size_unit(topo, config)?;
    if size % unit != 0 {
        return Err(SchemeError::FileSize { size, unit });
    }
    let dims = code_dims(topo, config)?;
    let layout = build_layout(topo, config)?;
    let groups = build_groups(topo, config, &layout)?;

    if let SchemeConfig::Routing { memory_fraction } = config {
        let prefix = (memory_fraction * BigRational::from_integer(BigInt::from(size)))
            .to_integer()
            .to_usize()
            .expect("prefix fits in usize");
        let caches = topo
            .user_ids()
            .map(|user| {
                let entries = if prefix == 0 {
                    BTreeMap::new()
                } else {
                    (1..=files).map(|i| ((i, 0), library.file(i)[..prefix].to_vec())).collect()
                };
                CacheContents { user, entries }
            })
            .collect();
        let plan = SchemePlan {
            config: config.clone(),
            dims,
            code: None,
            layout,
            groups,
            files,
            file_size: size,
            subfile_len: prefix,
            memory: memory_fraction * BigRational::from_integer(files.into()),
        };
        let server = ServerStore { library: library.files.clone(), encoded: Vec::new() };
        return Ok(Placement { plan, caches, server });
    }

    if layout.n != dims.n {
        return Err(SchemeError::Invariant(format!("layout has {} subfiles, expected n={}", layout.n, dims.n)));
    }
    if groups.len() != dims.k3 {
        return Err(SchemeError::Invariant(format!("{} multicast groups, expected k3={}", groups.len(), dims.k3)));
    }
    let per_user: Vec<Vec<usize>> = topo.user_ids().map(|k| layout.cached_by(k)).collect();
    let mut incidence = vec![0usize; topo.user_count() as usize];
    for grp in &groups {
        for &u in grp.set.members() {
            incidence[u as usize - 1] += 1;
        }
    }
    for k in topo.user_ids() {
        let idx = k as usize - 1;
        if per_user[idx].len() != dims.k1 || incidence[idx] != dims.k2 {
            return Err(SchemeError::Invariant(format!(
                "user {k} caches {} and receives {} subfiles, expected k1={} k2={}",
                per_user[idx].len(),
                incidence[idx],
                dims.k1,
                dims.k2
            )));
        }
    }

    let code = MdsCode::new(dims.n, dims.dimension())?;
    let subfile_len = (size / dims.dimension() as u64) as usize;
    let encoded: Vec<Vec<Vec<u8>>> = library
        .files
        .par_iter()
        .map(|f| {
            let pieces: Vec<&[u8]> = f.chunks(subfile_len).collect();
            code.encode(&pieces).map(|blocks| blocks.into_iter().map(|b| b.payload).collect())
        })
        .collect::<Result<_, _>>()?;

    let caches = topo
        .user_ids()
        .map(|user| {
            let mut entries = BTreeMap::new();
            for (i, enc) in encoded.iter().enumerate() {
                for &s in &per_user[user as usize - 1] {
                    entries.insert((i as FileId + 1, s), enc[s].clone());
                }
            }
            CacheContents { user, entries }
        })
        .collect();

    let memory = BigRational::new(BigInt::from(u64::from(files) * dims.k1 as u64), BigInt::from(dims.dimension()));
    let plan = SchemePlan {
        config: config.clone(),
        dims,
        code: Some(code),
        layout,
        groups,
        files,
        file_size: size,
        subfile_len,
        memory,
    };
    Ok(Placement { plan, caches, server: ServerStore { library: library.files.clone(), encoded } })
}

/// Identifies one transmitted piece.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct MessageTag {
    /// Index into the plan's multicast groups.
    pub group: usize,
    /// Users the message is addressed to.
    pub set: UserSet,
    /// Relay carrying this piece.
    pub relay: RelayId,
    pub piece: usize,
    pub pieces: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub tag: MessageTag,
    pub payload: Vec<u8>,
}

/// Every server-to-relay and relay-to-user message of one delivery.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LinkTranscript {
    pub server_to_relay: BTreeMap<RelayId, Vec<Message>>,
    pub relay_to_user: BTreeMap<(RelayId, UserId), Vec<Message>>,
}

impl LinkTranscript {
    /// Messages arriving at `user`, in relay order.
    pub fn received_by(&self, topo: &NetworkTopology, user: UserId) -> Vec<&Message> {
        topo.relays_of(user)
            .iter()
            .filter_map(|&h| self.relay_to_user.get(&(h, user)))
            .flatten()
            .collect()
    }

    pub fn server_bytes(&self, relay: RelayId) -> u64 {
        self.server_to_relay.get(&relay).map_or(0, |m| m.iter().map(|x| x.payload.len() as u64).sum())
    }

    pub fn link_bytes(&self, relay: RelayId, user: UserId) -> u64 {
        self.relay_to_user.get(&(relay, user)).map_or(0, |m| m.iter().map(|x| x.payload.len() as u64).sum())
    }

    /// Number of distinct multicast (or unicast) messages sent.
    pub fn message_count(&self) -> usize {
        let mut groups: Vec<usize> = self.server_to_relay.values().flatten().map(|m| m.tag.group).collect();
        groups.sort_unstable();
        groups.dedup();
        groups.len()
    }
}

/// Relays forward each message they receive, unchanged, to every addressed
/// user attached to them.
pub fn forward(topo: &NetworkTopology, server_to_relay: &BTreeMap<RelayId, Vec<Message>>) -> BTreeMap<(RelayId, UserId), Vec<Message>> {
    let mut out: BTreeMap<(RelayId, UserId), Vec<Message>> = BTreeMap::new();
    for h in topo.relays() {
        for &k in topo.users_of(h).members() {
            out.insert((h, k), Vec::new());
        }
    }
    for (&h, msgs) in server_to_relay {
        let attached = topo.users_of(h);
        for m in msgs {
            for &k in m.tag.set.members() {
                if attached.contains(k) {
                    out.get_mut(&(h, k)).expect("link exists").push(m.clone());
                }
            }
        }
    }
    out
}

/// Runs the delivery phase for demand `d`.
pub fn deliver(topo: &NetworkTopology, placement: &Placement, d: &DemandVector) -> Result<LinkTranscript, SchemeError> {
    let plan = &placement.plan;
    d.validate(topo.user_count(), plan.files)?;
    let mut server_to_relay: BTreeMap<RelayId, Vec<Message>> = topo.relays().map(|h| (h, Vec::new())).collect();
    for (gi, grp) in plan.groups.iter().enumerate() {
        let payload: Vec<u8> = match plan.config {
            SchemeConfig::Routing { .. } => {
                let k = grp.set.members()[0];
                placement.server.library[d.of(k) as usize - 1][plan.subfile_len..].to_vec()
            }
            _ => {
                let mut acc = vec![0u8; plan.subfile_len];
                for &(u, s) in &grp.components {
                    let sub = &placement.server.encoded[d.of(u) as usize - 1][s];
                    acc.iter_mut().zip(sub).for_each(|(a, b)| *a ^= b);
                }
                acc
            }
        };
        if payload.is_empty() {
            continue;
        }
        let pieces = grp.relays.len();
        if payload.len() % pieces != 0 {
            return Err(SchemeError::Invariant(format!(
                "message of {} bytes cannot split {pieces} ways",
                payload.len()
            )));
        }
        for (piece, (chunk, &h)) in payload.chunks(payload.len() / pieces).zip(&grp.relays).enumerate() {
            let tag = MessageTag { group: gi, set: grp.set.clone(), relay: h, piece, pieces };
            server_to_relay.get_mut(&h).expect("relay exists").push(Message { tag, payload: chunk.to_vec() });
        }
    }
    let relay_to_user = forward(topo, &server_to_relay);
    Ok(LinkTranscript { server_to_relay, relay_to_user })
}

/// Rebuilds `user`'s requested file from its cache and received messages.
pub fn decode(
    topo: &NetworkTopology,
    plan: &SchemePlan,
    user: UserId,
    cache: &CacheContents,
    received: &[&Message],
    d: &DemandVector,
) -> Result<Vec<u8>, SchemeError> {
    let fail = |reason: String| SchemeError::DecodeFailed { user, reason };
    if user < 1 || user > topo.user_count() {
        return Err(fail("unknown user".into()));
    }
    let wanted = d.of(user);

    let mut by_group: BTreeMap<usize, Vec<&Message>> = BTreeMap::new();
    for m in received {
        if !m.tag.set.contains(user) {
            return Err(fail(format!("received a message for {}", m.tag.set)));
        }
        by_group.entry(m.tag.group).or_default().push(m);
    }
    let mut assembled: BTreeMap<usize, Vec<u8>> = BTreeMap::new();
    for (gi, mut parts) in by_group {
        parts.sort_by_key(|m| m.tag.piece);
        let pieces = parts[0].tag.pieces;
        if parts.len() != pieces || parts.iter().enumerate().any(|(i, m)| m.tag.piece != i) {
            return Err(fail(format!("group {gi}: got {} of {pieces} pieces", parts.len())));
        }
        assembled.insert(gi, parts.iter().flat_map(|m| m.payload.iter().copied()).collect());
    }

    if let SchemeConfig::Routing { .. } = plan.config {
        let mut file = if plan.subfile_len == 0 {
            Vec::new()
        } else {
            cache.get(wanted, 0).ok_or_else(|| fail("cached prefix missing".into()))?.to_vec()
        };
        if let Some(rest) = assembled.get(&(user as usize - 1)) {
            file.extend_from_slice(rest);
        }
        if file.len() as u64 != plan.file_size {
            return Err(fail(format!("rebuilt {} of {} bytes", file.len(), plan.file_size)));
        }
        return Ok(file);
    }

    let code = plan.code.as_ref().expect("coded plan has a code");
    let mut blocks: Vec<CodedSymbolBlock> = cache
        .entries
        .range((wanted, 0)..(wanted + 1, 0))
        .map(|(&(_, s), bytes)| CodedSymbolBlock { index: s + 1, payload: bytes.clone() })
        .collect();
    for (gi, mut w) in assembled {
        let grp = plan.groups.get(gi).ok_or_else(|| fail(format!("unknown group {gi}")))?;
        if w.len() != plan.subfile_len {
            return Err(fail(format!("group {gi} carries {} bytes, expected {}", w.len(), plan.subfile_len)));
        }
        let mut own = None;
        for &(u, s) in &grp.components {
            if u == user {
                own = Some(s);
                continue;
            }
            let known = cache
                .get(d.of(u), s)
                .ok_or_else(|| fail(format!("subfile {s} of file {} not cached", d.of(u))))?;
            w.iter_mut().zip(known).for_each(|(a, b)| *a ^= b);
        }
        let s = own.ok_or_else(|| fail(format!("group {gi} has no component for this user")))?;
        blocks.push(CodedSymbolBlock { index: s + 1, payload: w });
    }
    let pieces = code.decode(&blocks).map_err(|e| fail(e.to_string()))?;
    let file: Vec<u8> = pieces.concat();
    if file.len() as u64 != plan.file_size {
        return Err(fail(format!("rebuilt {} of {} bytes", file.len(), plan.file_size)));
    }
    Ok(file)
}

/// `R1` and `R2` of one delivery, in units of the file size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeasuredLoads {
    pub r1: BigRational,
    pub r2: BigRational,
}

pub fn measure_loads(transcript: &LinkTranscript, file_size: u64) -> MeasuredLoads {
    let b = BigInt::from(file_size);
    let max_of = |it: &mut dyn Iterator<Item = u64>| it.max().unwrap_or(0);
    let r1 = max_of(&mut transcript.server_to_relay.values().map(|m| m.iter().map(|x| x.payload.len() as u64).sum()));
    let r2 = max_of(&mut transcript.relay_to_user.values().map(|m| m.iter().map(|x| x.payload.len() as u64).sum()));
    MeasuredLoads { r1: BigRational::new(r1.into(), b.clone()), r2: BigRational::new(r2.into(), b) }
}

/// Outcome of one place/deliver/decode cycle.
#[derive(Clone, Debug)]
pub struct SimulationReport {
    pub transcript: LinkTranscript,
    pub loads: MeasuredLoads,
    /// Per-user decode outcome, `Ok(())` when the file matched bit for bit.
    pub decoded: Vec<Result<(), SchemeError>>,
    pub message_count: usize,
}

impl SimulationReport {
    pub fn all_decoded(&self) -> bool {
        self.decoded.iter().all(Result::is_ok)
    }
}

/// Delivers for `d`, decodes every user and compares against the library.
pub fn simulate(topo: &NetworkTopology, placement: &Placement, d: &DemandVector) -> Result<SimulationReport, SchemeError> {
    let transcript = deliver(topo, placement, d)?;
    let decoded = topo
        .user_ids()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&k| {
            let received = transcript.received_by(topo, k);
            let file = decode(topo, &placement.plan, k, &placement.caches[k as usize - 1], &received, d)?;
            if file != placement.server.library[d.of(k) as usize - 1] {
                return Err(SchemeError::DecodeFailed { user: k, reason: "output differs from requested file".into() });
            }
            Ok(())
        })
        .collect();
    let loads = measure_loads(&transcript, placement.plan.file_size);
    let message_count = transcript.message_count();
    Ok(SimulationReport { transcript, loads, decoded, message_count })
}

/// Checks a finished run against the scheme's structural and analytic
/// properties. Returns every violation found.
pub fn check_run(topo: &NetworkTopology, placement: &Placement, report: &SimulationReport) -> Vec<String> {
    let plan = &placement.plan;
    let mut issues = Vec::new();
    let h = topo.relay_count();
    let r = topo.relays_per_user();
    let b = BigRational::from_integer(BigInt::from(plan.file_size));
    let n_files = BigRational::from_integer(plan.files.into());

    for (k, res) in report.decoded.iter().enumerate() {
        if let Err(e) = res {
            issues.push(format!("user {}: {e}", k + 1));
        }
    }

    let budget = &plan.memory * &b;
    for c in &placement.caches {
        if BigRational::from_integer(c.total_bytes().into()) != budget {
            issues.push(format!("user {} caches {} bytes, expected M*B = {budget}", c.user, c.total_bytes()));
        }
    }

    let t = &report.transcript;
    for (&(relay, user), msgs) in &t.relay_to_user {
        let upstream = t.server_to_relay.get(&relay).map(Vec::as_slice).unwrap_or(&[]);
        for m in msgs {
            if !upstream.iter().any(|s| s == m) {
                issues.push(format!("relay {relay} sent user {user} bytes it never received"));
            }
        }
    }

    let server: Vec<u64> = topo.relays().map(|x| t.server_bytes(x)).collect();
    if server.windows(2).any(|w| w[0] != w[1]) {
        issues.push(format!("server-to-relay loads differ: {server:?}"));
    }
    let links: Vec<u64> = t.relay_to_user.keys().map(|&(x, y)| t.link_bytes(x, y)).collect();
    if links.len() != (r * topo.user_count()) as usize || links.windows(2).any(|w| w[0] != w[1]) {
        issues.push("relay-to-user loads are not identical across the r*K links".into());
    }

    let expected_messages = if plan.memory == n_files && plan.config.kind() == SchemeKind::Routing {
        0
    } else {
        plan.dims.k3
    };
    if report.message_count != expected_messages {
        issues.push(format!("{} messages sent, expected {expected_messages}", report.message_count));
    }

    match analysis::load_at(plan.files, h, r, plan.config.gain(), &plan.memory) {
        Ok(expected) if expected != report.loads.r1 => {
            issues.push(format!("R1 = {} but R_routing/g = {expected}", report.loads.r1));
        }
        Err(e) => issues.push(e.to_string()),
        _ => {}
    }
    let uncached = BigRational::one() - &plan.memory / &n_files;
    let user_total = &report.loads.r2 * BigRational::from_integer(r.into());
    if user_total != uncached {
        issues.push(format!("r*R2 = {user_total} but 1 - M/N = {uncached}"));
    }
    issues
}
