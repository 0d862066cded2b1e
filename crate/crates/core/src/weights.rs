//! Versioned weight snapshots, bit-exact sparse deltas, the binary wire
//! codec, and the trainer-side store with pull-based distribution.
//!
//! Weights are opaque 16-bit words; nothing here interprets them
//! numerically, so "unchanged" means word equality. A delta records just
//! the changed (index, word) pairs, which stays tiny while most words are
//! bit-identical across versions. Clients catch up either by applying an
//! ordered delta chain or, when they lag too far or a periodic full-sync
//! version was published, by downloading the full snapshot.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::model::{PolicyId, Version};

/// Wire-format magic for encoded updates.
pub const WIRE_MAGIC: [u8; 4] = *b"AWT1";

const MODE_FULL: u8 = 0;
const MODE_DELTA: u8 = 1;

/// A full copy of one policy's weights at one version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightSnapshot {
    pub policy: PolicyId,
    pub version: Version,
    /// Fixed length per policy across all versions. Each word is an opaque
    /// 16-bit bit pattern.
    pub elements: Vec<u16>,
}

/// The sparse difference between two adjacent versions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightDelta {
    pub policy: PolicyId,
    pub from_version: Version,
    pub to_version: Version,
    pub element_count: u64,
    /// (index, new word) pairs, strictly ascending by index. 32-bit indices
    /// cap snapshots at ~4.29e9 elements — far beyond desk scale.
    pub changes: Vec<(u32, u16)>,
}

impl WeightDelta {
    /// Fraction of elements left untouched by this delta.
    pub fn sparsity(&self) -> f64 {
        if self.element_count == 0 {
            return 1.0;
        }
        1.0 - self.changes.len() as f64 / self.element_count as f64
    }
}

/// When pulls fall back to a full snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncPolicy {
    /// Every `full_sync_interval`-th version is marked full-sync: pulls that
    /// target it ship the whole snapshot instead of a delta chain.
    pub full_sync_interval: u64,
    /// A client more than this many versions behind downloads a full
    /// snapshot instead of a chain.
    pub max_delta_chain: u64,
}

impl Default for SyncPolicy {
    fn default() -> Self {
        SyncPolicy {
            full_sync_interval: 20,
            max_delta_chain: 4,
        }
    }
}

/// Single-stream point-to-point link: no congestion, no parallel chunks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub bandwidth_bits_per_sec: f64,
    pub rtt_seconds: f64,
}

/// Seconds to move `bytes` over `link` in one stream: one round trip plus
/// serialization time.
pub fn transfer_time(bytes: u64, link: &LinkModel) -> f64 {
    link.rtt_seconds + (bytes as f64 * 8.0) / link.bandwidth_bits_per_sec
}

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("element count mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("snapshots belong to different policies")]
    PolicyMismatch,
    #[error("version mismatch: expected {expected}, got {got}")]
    VersionMismatch { expected: Version, got: Version },
    #[error("change index {index} out of range for {len} elements")]
    IndexOutOfRange { index: u32, len: usize },
    #[error("non-monotone publish: latest is {latest}, got {got}")]
    NonMonotoneVersion { latest: Version, got: Version },
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error("bad magic")]
    BadMagic,
    #[error("bad mode byte {0}")]
    BadMode(u8),
    #[error("truncated message")]
    Truncated,
    #[error("trailing bytes after message")]
    TrailingBytes,
    #[error("delta indices not strictly ascending")]
    UnsortedIndices,
    #[error("policy id is not valid UTF-8")]
    BadPolicyId,
    #[error("malformed header: {0}")]
    MalformedHeader(&'static str),
}

/// Exact sparse difference between adjacent versions of the same policy.
pub fn compute_delta(prev: &WeightSnapshot, next: &WeightSnapshot) -> Result<WeightDelta, WeightError> {
    if prev.policy != next.policy {
        return Err(WeightError::PolicyMismatch);
    }
    if prev.elements.len() != next.elements.len() {
        return Err(WeightError::LengthMismatch {
            expected: prev.elements.len(),
            got: next.elements.len(),
        });
    }
    if next.version != prev.version + 1 {
        return Err(WeightError::VersionMismatch {
            expected: prev.version + 1,
            got: next.version,
        });
    }
    let changes: Vec<(u32, u16)> = prev
        .elements
        .iter()
        .zip(next.elements.iter())
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, (_, b))| (i as u32, *b))
        .collect();
    Ok(WeightDelta {
        policy: prev.policy.clone(),
        from_version: prev.version,
        to_version: next.version,
        element_count: prev.elements.len() as u64,
        changes,
    })
}

/// Applies a delta; the result is bit-identical to the snapshot the delta
/// was computed from.
pub fn apply_delta(base: &WeightSnapshot, delta: &WeightDelta) -> Result<WeightSnapshot, WeightError> {
    if base.policy != delta.policy {
        return Err(WeightError::PolicyMismatch);
    }
    if base.version != delta.from_version {
        return Err(WeightError::VersionMismatch {
            expected: delta.from_version,
            got: base.version,
        });
    }
    if base.elements.len() as u64 != delta.element_count {
        return Err(WeightError::LengthMismatch {
            expected: delta.element_count as usize,
            got: base.elements.len(),
        });
    }
    let mut elements = base.elements.clone();
    for &(index, word) in &delta.changes {
        let slot = elements
            .get_mut(index as usize)
            .ok_or(WeightError::IndexOutOfRange {
                index,
                len: delta.element_count as usize,
            })?;
        *slot = word;
    }
    Ok(WeightSnapshot {
        policy: base.policy.clone(),
        version: delta.to_version,
        elements,
    })
}

/// A full snapshot or a delta, as shipped over the wire.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightUpdate {
    Full(WeightSnapshot),
    Delta(WeightDelta),
}

/// Exact encoded size of an update, without encoding it.
pub fn encoded_update_len(update: &WeightUpdate) -> u64 {
    let (policy, payload) = match update {
        WeightUpdate::Full(s) => (&s.policy, 2 * s.elements.len() as u64),
        WeightUpdate::Delta(d) => (&d.policy, 8 + 6 * d.changes.len() as u64),
    };
    // magic + mode + policy length prefix + policy + from/to/element_count
    4 + 1 + 2 + policy.as_str().len() as u64 + 8 + 8 + 8 + payload
}

/// Serializes an update to the byte-exact wire format. All integers are
/// little-endian: magic `AWT1`, mode u8 (0 = full, 1 = delta), policy id
/// (u16 length + UTF-8), from_version u64 (0 for full), to_version u64,
/// element_count u64, then the payload — `element_count` u16 words for a
/// full snapshot, or a u64 change count followed by (u32 index, u16 word)
/// entries for a delta.
pub fn encode_update(update: &WeightUpdate) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_update_len(update) as usize);
    out.extend_from_slice(&WIRE_MAGIC);
    match update {
        WeightUpdate::Full(s) => {
            out.push(MODE_FULL);
            let policy = s.policy.as_str().as_bytes();
            out.extend_from_slice(&(u16::try_from(policy.len()).expect("policy id fits u16")).to_le_bytes());
            out.extend_from_slice(policy);
            out.extend_from_slice(&0u64.to_le_bytes());
            out.extend_from_slice(&s.version.to_le_bytes());
            out.extend_from_slice(&(s.elements.len() as u64).to_le_bytes());
            for w in &s.elements {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        WeightUpdate::Delta(d) => {
            out.push(MODE_DELTA);
            let policy = d.policy.as_str().as_bytes();
            out.extend_from_slice(&(u16::try_from(policy.len()).expect("policy id fits u16")).to_le_bytes());
            out.extend_from_slice(policy);
            out.extend_from_slice(&d.from_version.to_le_bytes());
            out.extend_from_slice(&d.to_version.to_le_bytes());
            out.extend_from_slice(&d.element_count.to_le_bytes());
            out.extend_from_slice(&(d.changes.len() as u64).to_le_bytes());
            for &(index, word) in &d.changes {
                out.extend_from_slice(&index.to_le_bytes());
                out.extend_from_slice(&word.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightError> {
        let end = self.pos.checked_add(n).ok_or(WeightError::Truncated)?;
        if end > self.bytes.len() {
            return Err(WeightError::Truncated);
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WeightError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WeightError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WeightError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WeightError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses the wire format. Strict: unknown mode bytes, short messages,
/// trailing bytes, unsorted or out-of-range indices, full frames with a
/// nonzero from_version, and delta frames that are not adjacent
/// (to != from + 1) are all rejected.
pub fn decode_update(bytes: &[u8]) -> Result<WeightUpdate, WeightError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != WIRE_MAGIC {
        return Err(WeightError::BadMagic);
    }
    let mode = r.u8()?;
    let policy_len = r.u16()? as usize;
    let policy = std::str::from_utf8(r.take(policy_len)?).map_err(|_| WeightError::BadPolicyId)?;
    let policy = PolicyId::new(policy);
    let from_version = r.u64()?;
    let to_version = r.u64()?;
    let element_count = r.u64()?;
    let update = match mode {
        MODE_FULL => {
            if from_version != 0 {
                return Err(WeightError::MalformedHeader("full update with nonzero from_version"));
            }
            let count = usize::try_from(element_count).map_err(|_| WeightError::Truncated)?;
            let raw = r.take(count.checked_mul(2).ok_or(WeightError::Truncated)?)?;
            let elements = raw
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
                .collect();
            WeightUpdate::Full(WeightSnapshot {
                policy,
                version: to_version,
                elements,
            })
        }
        MODE_DELTA => {
            if to_version != from_version + 1 {
                return Err(WeightError::MalformedHeader("delta frame is not between adjacent versions"));
            }
            let change_count = usize::try_from(r.u64()?).map_err(|_| WeightError::Truncated)?;
            let mut changes = Vec::with_capacity(change_count.min(1 << 20));
            let mut prev_index: Option<u32> = None;
            for _ in 0..change_count {
                let index = r.u32()?;
                let word = r.u16()?;
                if let Some(p) = prev_index {
                    if index <= p {
                        return Err(WeightError::UnsortedIndices);
                    }
                }
                if index as u64 >= element_count {
                    return Err(WeightError::IndexOutOfRange {
                        index,
                        len: element_count as usize,
                    });
                }
                prev_index = Some(index);
                changes.push((index, word));
            }
            WeightUpdate::Delta(WeightDelta {
                policy,
                from_version,
                to_version,
                element_count,
                changes,
            })
        }
        other => return Err(WeightError::BadMode(other)),
    };
    if r.pos != bytes.len() {
        return Err(WeightError::TrailingBytes);
    }
    Ok(update)
}

/// Length-prefixed framing for shipping encoded updates over a byte stream
/// (live mode): u32 little-endian payload length, then the payload.
pub fn write_framed(w: &mut impl std::io::Write, payload: &[u8]) -> std::io::Result<()> {
    w.write_all(&(payload.len() as u32).to_le_bytes())?;
    w.write_all(payload)
}

/// Reads one length-prefixed frame; `Ok(None)` on clean end-of-stream.
pub fn read_framed(r: &mut impl std::io::Read) -> std::io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let mut payload = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut payload)?;
    Ok(Some(payload))
}

/// What a client gets back from a pull.
#[derive(Debug, Clone)]
pub enum PullResponse {
    UpToDate,
    /// Ordered chain of adjacent deltas from the client's version to latest.
    Deltas(Vec<Arc<WeightDelta>>),
    Full(Arc<WeightSnapshot>),
}

impl PullResponse {
    /// Total wire bytes for this response, one encoded message per update.
    pub fn wire_bytes(&self) -> u64 {
        match self {
            PullResponse::UpToDate => 0,
            PullResponse::Deltas(chain) => chain
                .iter()
                .map(|d| encoded_update_len(&WeightUpdate::Delta((**d).clone())))
                .sum(),
            PullResponse::Full(s) => encoded_update_len(&WeightUpdate::Full((**s).clone())),
        }
    }
}

/// Outcome of a publish, as recorded by the trainer.
#[derive(Debug, Clone)]
pub struct PublishRecord {
    pub policy: PolicyId,
    pub version: Version,
    pub full_sync: bool,
    /// Sparsity of the cached delta from the previous version; `None` for a
    /// first publish, which has no predecessor.
    pub delta_sparsity: Option<f64>,
    pub delta_bytes: Option<u64>,
    pub full_bytes: u64,
}

struct PolicyStore {
    element_count: usize,
    latest: Version,
    snapshots: BTreeMap<Version, Arc<WeightSnapshot>>,
    deltas: BTreeMap<Version, Arc<WeightDelta>>, // keyed by to_version
    full_sync_marked: BTreeSet<Version>,
}

/// One publisher per policy, many concurrent pullers. Publish swaps state
/// under a write lock, so a puller sees either the old or the new latest,
/// never a torn state.
pub struct WeightStore {
    inner: RwLock<BTreeMap<PolicyId, PolicyStore>>,
}

impl Default for WeightStore {
    fn default() -> Self {
        Self::new()
    }
}

impl WeightStore {
    pub fn new() -> Self {
        WeightStore {
            inner: RwLock::new(BTreeMap::new()),
        }
    }

    /// Latest published version, if the policy has published at all.
    pub fn latest_version(&self, policy: &PolicyId) -> Option<Version> {
        self.inner.read().unwrap().get(policy).map(|p| p.latest)
    }

    pub fn latest_snapshot(&self, policy: &PolicyId) -> Option<Arc<WeightSnapshot>> {
        let inner = self.inner.read().unwrap();
        let store = inner.get(policy)?;
        store.snapshots.get(&store.latest).cloned()
    }

    /// Stores a snapshot, caches the delta from the previous version, and
    /// marks the version full-sync when `version % full_sync_interval == 0`.
    /// The first publish for a policy may use any version >= 1; afterwards
    /// versions must increase by exactly 1. Old state is garbage-collected:
    /// the last `max(full_sync_interval, max_delta_chain)` deltas and the
    /// last two snapshots are retained.
    pub fn publish(
        &self,
        policy: &PolicyId,
        snapshot: WeightSnapshot,
        sync: &SyncPolicy,
    ) -> Result<PublishRecord, WeightError> {
        if snapshot.policy != *policy {
            return Err(WeightError::PolicyMismatch);
        }
        let mut inner = self.inner.write().unwrap();
        let version = snapshot.version;
        let full_sync = sync.full_sync_interval > 0 && version % sync.full_sync_interval == 0;
        let full_bytes = encoded_update_len(&WeightUpdate::Full(snapshot.clone()));

        let (delta_sparsity, delta_bytes) = match inner.get_mut(policy) {
            None => {
                if version == 0 {
                    return Err(WeightError::NonMonotoneVersion { latest: 0, got: 0 });
                }
                let element_count = snapshot.elements.len();
                let mut snapshots = BTreeMap::new();
                let mut full_sync_marked = BTreeSet::new();
                if full_sync {
                    full_sync_marked.insert(version);
                }
                snapshots.insert(version, Arc::new(snapshot));
                inner.insert(
                    policy.clone(),
                    PolicyStore {
                        element_count,
                        latest: version,
                        snapshots,
                        deltas: BTreeMap::new(),
                        full_sync_marked,
                    },
                );
                (None, None)
            }
            Some(store) => {
                if version != store.latest + 1 {
                    return Err(WeightError::NonMonotoneVersion {
                        latest: store.latest,
                        got: version,
                    });
                }
                if snapshot.elements.len() != store.element_count {
                    return Err(WeightError::LengthMismatch {
                        expected: store.element_count,
                        got: snapshot.elements.len(),
                    });
                }
                let prev = store.snapshots.get(&store.latest).cloned();
                let snapshot = Arc::new(snapshot);
                let mut stats = (None, None);
                if let Some(prev) = prev {
                    let delta = compute_delta(&prev, &snapshot)?;
                    stats = (
                        Some(delta.sparsity()),
                        Some(encoded_update_len(&WeightUpdate::Delta(delta.clone()))),
                    );
                    store.deltas.insert(version, Arc::new(delta));
                }
                store.snapshots.insert(version, snapshot);
                store.latest = version;
                if full_sync {
                    store.full_sync_marked.insert(version);
                }
                // Garbage collection.
                let keep_deltas = sync.full_sync_interval.max(sync.max_delta_chain);
                let delta_floor = version.saturating_sub(keep_deltas);
                store.deltas.retain(|to, _| *to > delta_floor);
                let snap_floor = version.saturating_sub(1);
                store.snapshots.retain(|v, _| *v >= snap_floor);
                store.full_sync_marked.retain(|v| *v + keep_deltas >= version);
                stats
            }
        };

        Ok(PublishRecord {
            policy: policy.clone(),
            version,
            full_sync,
            delta_sparsity,
            delta_bytes,
            full_bytes,
        })
    }

    /// A client at `client_version` asks for the latest. Up to date when
    /// already there; an ordered delta chain when the gap is within
    /// `max_delta_chain`, every needed delta is still retained, and the
    /// latest version is not full-sync-marked; otherwise the full snapshot.
    pub fn pull_update(
        &self,
        policy: &PolicyId,
        client_version: Version,
        sync: &SyncPolicy,
    ) -> Result<PullResponse, WeightError> {
        let inner = self.inner.read().unwrap();
        let store = inner
            .get(policy)
            .ok_or_else(|| WeightError::UnknownPolicy(policy.to_string()))?;
        if client_version >= store.latest {
            return Ok(PullResponse::UpToDate);
        }
        let gap = store.latest - client_version;
        if gap <= sync.max_delta_chain && !store.full_sync_marked.contains(&store.latest) {
            let chain: Vec<Arc<WeightDelta>> = (client_version + 1..=store.latest)
                .filter_map(|v| store.deltas.get(&v).cloned())
                .collect();
            if chain.len() as u64 == gap {
                return Ok(PullResponse::Deltas(chain));
            }
        }
        let full = store
            .snapshots
            .get(&store.latest)
            .cloned()
            .expect("latest snapshot always retained");
        Ok(PullResponse::Full(full))
    }
}
