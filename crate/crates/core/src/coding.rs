//! Contents, random-linear-fountain encoding, last-hop keys, scrambling and
//! the broadcast cache update.
//!
//! Every cached coded file is `r = v . F`: the XOR of the contents whose
//! indices are set in the encoding vector `v`. Content indices are 1-based in
//! the public API (`1..=m`) and map to bit `index - 1` of encoding vectors.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::gf2::{self, BitVector, EchelonBasis};
use crate::seeds;

/// Bit payloads (contents, coded files, keys) are plain bit vectors of length Q.
pub type Payload = BitVector;

pub const DEFAULT_Q: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    Coded,
    Uncoded,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Coded => "coded",
            Scheme::Uncoded => "uncoded",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "coded" => Ok(Scheme::Coded),
            "uncoded" => Ok(Scheme::Uncoded),
            other => Err(Error::Config(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Content {
    /// 1-based content index.
    pub index: usize,
    pub payload: Payload,
}

/// The `m` contents `F_1..F_m`, all of `q` bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContentStore {
    q: usize,
    contents: Vec<Content>,
}

impl ContentStore {
    pub fn new(q: usize, payloads: Vec<Payload>) -> Result<Self> {
        if payloads.is_empty() {
            return Err(Error::contract("content store", "m must be at least 1"));
        }
        if q == 0 {
            return Err(Error::contract("content store", "Q must be positive"));
        }
        for p in &payloads {
            check_len("content payload", q, p.len())?;
        }
        let contents = payloads
            .into_iter()
            .enumerate()
            .map(|(i, payload)| Content {
                index: i + 1,
                payload,
            })
            .collect();
        Ok(Self { q, contents })
    }

    /// Uniformly random payloads.
    pub fn random<R: Rng + ?Sized>(m: usize, q: usize, rng: &mut R) -> Result<Self> {
        Self::new(q, (0..m).map(|_| BitVector::random(q, rng)).collect())
    }

    /// Payload bits of content `l` are independent with `Pr[1] = p_one[l-1]`.
    pub fn skewed<R: Rng + ?Sized>(q: usize, p_one: &[f64], rng: &mut R) -> Result<Self> {
        for &p in p_one {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::contract(
                    "skewed store",
                    format!("probability {p} outside [0,1]"),
                ));
            }
        }
        Self::new(
            q,
            p_one
                .iter()
                .map(|&p| BitVector::bernoulli(q, p, rng))
                .collect(),
        )
    }

    pub fn m(&self) -> usize {
        self.contents.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn contents(&self) -> &[Content] {
        &self.contents
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if (1..=self.m()).contains(&index) {
            Ok(())
        } else {
            Err(Error::contract(
                "content index",
                format!("{index} outside 1..={}", self.m()),
            ))
        }
    }

    pub fn payload(&self, index: usize) -> Result<&Payload> {
        self.check_index(index)?;
        Ok(&self.contents[index - 1].payload)
    }

    fn payload_mut(&mut self, index: usize) -> &mut Payload {
        &mut self.contents[index - 1].payload
    }
}

/// A coded cache slot: encoding vector plus its payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedFile {
    pub vector: BitVector,
    pub payload: Payload,
}

impl EncodedFile {
    /// Whether the payload is the XOR of the selected contents of `store`.
    pub fn is_consistent_with(&self, store: &ContentStore) -> bool {
        encode(&self.vector, store).is_ok_and(|e| e.payload == self.payload)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Slots {
    Coded(Vec<EncodedFile>),
    Uncoded(Vec<Content>),
}

/// The `M` cache slots of one node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeCache {
    pub node_id: usize,
    pub slots: Slots,
}

impl NodeCache {
    pub fn scheme(&self) -> Scheme {
        match self.slots {
            Slots::Coded(_) => Scheme::Coded,
            Slots::Uncoded(_) => Scheme::Uncoded,
        }
    }

    pub fn slot_count(&self) -> usize {
        match &self.slots {
            Slots::Coded(s) => s.len(),
            Slots::Uncoded(s) => s.len(),
        }
    }

    /// Encoding vectors of a coded cache (empty for uncoded).
    pub fn vectors(&self) -> Vec<BitVector> {
        match &self.slots {
            Slots::Coded(s) => s.iter().map(|f| f.vector.clone()).collect(),
            Slots::Uncoded(_) => Vec::new(),
        }
    }

    /// Slot payloads in slot order.
    pub fn payloads(&self) -> Vec<&Payload> {
        match &self.slots {
            Slots::Coded(s) => s.iter().map(|f| &f.payload).collect(),
            Slots::Uncoded(s) => s.iter().map(|c| &c.payload).collect(),
        }
    }

    /// Content indices held by an uncoded cache (empty for coded).
    pub fn content_indices(&self) -> Vec<usize> {
        match &self.slots {
            Slots::Uncoded(s) => s.iter().map(|c| c.index).collect(),
            Slots::Coded(_) => Vec::new(),
        }
    }

    /// XOR of the slot payloads selected by `gains`.
    pub fn combine(&self, gains: &BitVector) -> Result<Payload> {
        let payloads: Vec<Payload> = self.payloads().into_iter().cloned().collect();
        if payloads.is_empty() {
            check_len("combine gains", 0, gains.len())?;
            return Ok(BitVector::zeros(0));
        }
        gf2::xor_combine(&payloads, gains)
    }
}

/// Read access to node caches by id. Implemented for eagerly placed slices
/// and for lazily generated placements.
pub trait CacheSource: Sync {
    fn node_count(&self) -> usize;
    fn cache(&self, node_id: usize) -> Cow<'_, NodeCache>;
}

impl CacheSource for [NodeCache] {
    fn node_count(&self) -> usize {
        self.len()
    }

    fn cache(&self, node_id: usize) -> Cow<'_, NodeCache> {
        Cow::Borrowed(&self[node_id])
    }
}

impl CacheSource for Vec<NodeCache> {
    fn node_count(&self) -> usize {
        self.len()
    }

    fn cache(&self, node_id: usize) -> Cow<'_, NodeCache> {
        Cow::Borrowed(&self[node_id])
    }
}

/// Uniform draw from all of `F_2^m` (the zero vector included).
pub fn draw_encoding_vector<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<BitVector> {
    if m == 0 {
        return Err(Error::contract(
            "draw_encoding_vector",
            "m must be at least 1",
        ));
    }
    Ok(BitVector::random(m, rng))
}

pub fn encode(vector: &BitVector, store: &ContentStore) -> Result<EncodedFile> {
    check_len("encode", store.m(), vector.len())?;
    let mut payload = BitVector::zeros(store.q());
    for i in vector.iter_ones() {
        payload.xor_assign(&store.contents[i].payload);
    }
    Ok(EncodedFile {
        vector: vector.clone(),
        payload,
    })
}

/// The requester's private key for one request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyMaterial {
    pub target: usize,
    /// Encoding vector the network must deliver.
    pub v_req: BitVector,
    /// `x^0_r`: XOR of the requester's own slots selected by `own_gains`.
    pub key_payload: Payload,
    pub own_gains: BitVector,
}

/// Gain pattern used when the target is not locally spanned: the binary form
/// of the target index, folded into the nonzero `M`-bit patterns. Distinct
/// targets get distinct patterns whenever `m < 2^M`.
fn target_gain_pattern(target: usize, slots: usize) -> BitVector {
    if slots == 0 {
        return BitVector::zeros(0);
    }
    let value = if slots >= 64 {
        target as u64
    } else {
        let patterns = (1u64 << slots) - 1;
        ((target as u64 - 1) % patterns) + 1
    };
    BitVector::from_u64(slots, value)
}

/// Builds the last-hop key for requesting content `target` (1-based).
///
/// If the unit vector of the target is in the span of the node's own vectors,
/// the gains solving for it are used and nothing has to come from the
/// network (`v_req = 0`). Otherwise the gains are the target-dependent
/// pattern from [`target_gain_pattern`], so repeated requests from one node
/// use different keys. In both cases `e_target = v_req ^ own combination`.
pub fn build_key(cache: &NodeCache, target: usize) -> Result<KeyMaterial> {
    let Slots::Coded(slots) = &cache.slots else {
        return Err(Error::contract("build_key", "requester cache is not coded"));
    };
    let m = match slots.first() {
        Some(f) => f.vector.len(),
        None => return Err(Error::contract("build_key", "requester cache has no slots")),
    };
    if !(1..=m).contains(&target) {
        return Err(Error::contract(
            "build_key",
            format!("target {target} outside 1..={m}"),
        ));
    }
    let vectors: Vec<BitVector> = slots.iter().map(|f| f.vector.clone()).collect();
    let unit = BitVector::unit(m, target - 1);

    let mut basis = EchelonBasis::with_tracking(m, vectors.len());
    for v in &vectors {
        basis.insert(v)?;
    }
    let own_gains = basis
        .express(&unit)
        .unwrap_or_else(|| target_gain_pattern(target, vectors.len()));

    let own_vector = gf2::xor_combine(&vectors, &own_gains)?;
    let v_req = unit.xor(&own_vector);
    let key_payload = cache.combine(&own_gains)?;
    Ok(KeyMaterial {
        target,
        v_req,
        key_payload,
        own_gains,
    })
}

/// `F_r = S_r ^ x^0_r`.
pub fn decode_last_hop(received: &Payload, key: &KeyMaterial) -> Result<Payload> {
    check_len("decode_last_hop", key.key_payload.len(), received.len())?;
    Ok(received.xor(&key.key_payload))
}

/// Gains one contributing node applies to its own slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Contribution {
    pub node_id: usize,
    pub gains: BitVector,
}

/// Everything needed to reproduce one coded retrieval: the requester's key
/// and the gains handed to the contributing nodes over the secure channel.
/// Contributions are listed nearest-first along the relay path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodePlan {
    pub requester: usize,
    pub key: KeyMaterial,
    pub contributions: Vec<Contribution>,
}

impl DecodePlan {
    /// Runs the relay: starting from the farthest contributor, each node XORs
    /// its selected slots into the file it received and forwards it.
    pub fn relay<C: CacheSource + ?Sized>(&self, caches: &C) -> Result<Payload> {
        let mut running = BitVector::zeros(self.key.key_payload.len());
        for c in self.contributions.iter().rev() {
            let part = caches.cache(c.node_id).combine(&c.gains)?;
            running.try_xor_assign(&part)?;
        }
        Ok(running)
    }

    /// Re-derives the key from the requester's current slots with the
    /// recorded own gains, relays, and decodes.
    pub fn execute<C: CacheSource + ?Sized>(&self, caches: &C) -> Result<Payload> {
        let received = self.relay(caches)?;
        let key_payload = caches.cache(self.requester).combine(&self.key.own_gains)?;
        check_len("decode plan", key_payload.len(), received.len())?;
        Ok(received.xor(&key_payload))
    }

    /// Encoding vector delivered by the contributions.
    pub fn delivered_vector<C: CacheSource + ?Sized>(&self, caches: &C) -> Result<BitVector> {
        let mut acc = BitVector::zeros(self.key.v_req.len());
        for c in &self.contributions {
            let vectors = caches.cache(c.node_id).vectors();
            acc.try_xor_assign(&gf2::xor_combine(&vectors, &c.gains)?)?;
        }
        Ok(acc)
    }
}

/// Deterministic keystream of `q` bits for `seed` (see [`seeds::GENERATOR_NAME`]).
pub fn keystream(seed: u64, q: usize) -> BitVector {
    let mut rng = seeds::stream_rng(seed, 0x5C7A_3B1E);
    BitVector::random(q, &mut rng)
}

pub fn scramble(payload: &Payload, seed: u64) -> Payload {
    payload.xor(&keystream(seed, payload.len()))
}

/// XOR with the same keystream; the inverse of [`scramble`].
pub fn descramble(payload: &Payload, seed: u64) -> Payload {
    scramble(payload, seed)
}

/// Outcome of one broadcast cache update.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateReport {
    pub replaced: usize,
    /// Scrambled replacement now stored at `replaced`.
    pub scrambled: Payload,
    pub broadcasts: usize,
    pub broadcast_bits: usize,
    pub slots_modified: usize,
    pub slots_total: usize,
}

/// Replaces content `k` with `new_payload` by one broadcast of
/// `F_k ^ scramble(new_payload)`. Slots that include `F_k` absorb the
/// broadcast; all other slots are left alone. Encoding vectors never change,
/// so existing decoding gains for `k` now decode the scrambled replacement.
pub fn cache_update(
    caches: &mut [NodeCache],
    store: &mut ContentStore,
    k: usize,
    new_payload: &Payload,
    seed: u64,
) -> Result<UpdateReport> {
    store.check_index(k)?;
    check_len("cache_update payload", store.q(), new_payload.len())?;
    let scrambled = scramble(new_payload, seed);
    let broadcast = store.payload(k)?.xor(&scrambled);

    let mut slots_modified = 0;
    let mut slots_total = 0;
    for cache in caches.iter_mut() {
        match &mut cache.slots {
            Slots::Coded(slots) => {
                for slot in slots.iter_mut() {
                    check_len("cache_update vector", store.m(), slot.vector.len())?;
                    slots_total += 1;
                    if slot.vector.get(k - 1) {
                        slot.payload.xor_assign(&broadcast);
                        slots_modified += 1;
                    }
                }
            }
            Slots::Uncoded(slots) => {
                for slot in slots.iter_mut() {
                    slots_total += 1;
                    if slot.index == k {
                        slot.payload.xor_assign(&broadcast);
                        slots_modified += 1;
                    }
                }
            }
        }
    }
    *store.payload_mut(k) = scrambled.clone();
    Ok(UpdateReport {
        replaced: k,
        scrambled,
        broadcasts: 1,
        broadcast_bits: store.q(),
        slots_modified,
        slots_total,
    })
}

/// Secure-channel size of one encoding vector.
pub fn vector_bytes(m: usize) -> usize {
    m.div_ceil(8)
}

/// Secure-channel size of one node's gain vector.
pub fn gain_bytes(slots: usize) -> usize {
    slots.div_ceil(8)
}
