//! Decentralized cache placement for the coded and uncoded schemes.
//!
//! Each node draws from its own generator stream keyed by
//! `(config.seed, node_id)`, so a node's cache is a pure function of the
//! configuration and its id. That lets callers place nodes in any order, in
//! parallel, or lazily on first access, and always get the same caches.

use std::borrow::Cow;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::coding::{
    draw_encoding_vector, encode, CacheSource, Content, ContentStore, NodeCache, Scheme, Slots,
};
use crate::error::{Error, Result};
use crate::gf2::{BitVector, EchelonBasis};
use crate::seeds::{stream_rng, SimRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlacementConfig {
    pub scheme: Scheme,
    /// Number of contents.
    pub m: usize,
    /// Cache slots per node.
    pub slots: usize,
    /// Coded only: redraw vectors until each node's slots are independent.
    pub independence: bool,
    pub seed: u64,
}

impl PlacementConfig {
    pub fn coded(m: usize, slots: usize, seed: u64) -> Self {
        Self {
            scheme: Scheme::Coded,
            m,
            slots,
            independence: false,
            seed,
        }
    }

    pub fn uncoded(m: usize, slots: usize, seed: u64) -> Self {
        Self {
            scheme: Scheme::Uncoded,
            ..Self::coded(m, slots, seed)
        }
    }

    pub fn with_independence(mut self, on: bool) -> Self {
        self.independence = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.slots == 0 {
            return Err(Error::Config("m and M must be positive".into()));
        }
        match self.scheme {
            Scheme::Uncoded if self.slots > self.m => Err(Error::Config(format!(
                "uncoded placement needs M <= m (M={}, m={})",
                self.slots, self.m
            ))),
            Scheme::Coded if self.independence && self.slots > self.m => {
                Err(Error::Config(format!(
                    "independent coded slots need M <= m (M={}, m={})",
                    self.slots, self.m
                )))
            }
            _ => Ok(()),
        }
    }

    /// Whether `m < 2^M`, the regime in which every content can get its own
    /// last-hop key.
    pub fn secrecy_regime(&self) -> bool {
        self.slots >= usize::BITS as usize || self.m < (1usize << self.slots)
    }

    pub fn node_rng(&self, node_id: usize) -> SimRng {
        stream_rng(self.seed, node_id as u64)
    }
}

pub fn place_coded<R: Rng + ?Sized>(
    config: &PlacementConfig,
    store: &ContentStore,
    node_id: usize,
    rng: &mut R,
) -> Result<NodeCache> {
    if config.scheme != Scheme::Coded {
        return Err(Error::Config(
            "place_coded called with an uncoded config".into(),
        ));
    }
    config.validate()?;
    check_store(config, store)?;
    let mut basis = config.independence.then(|| EchelonBasis::new(config.m));
    let mut slots = Vec::with_capacity(config.slots);
    while slots.len() < config.slots {
        let v = draw_encoding_vector(config.m, rng)?;
        if let Some(b) = basis.as_mut() {
            if !b.insert(&v)? {
                continue;
            }
        }
        slots.push(encode(&v, store)?);
    }
    Ok(NodeCache {
        node_id,
        slots: Slots::Coded(slots),
    })
}

/// `M` distinct contents, uniform over all `C(m, M)` subsets, stored in the
/// clear in ascending index order.
pub fn place_uncoded<R: Rng + ?Sized>(
    config: &PlacementConfig,
    store: &ContentStore,
    node_id: usize,
    rng: &mut R,
) -> Result<NodeCache> {
    if config.scheme != Scheme::Uncoded {
        return Err(Error::Config(
            "place_uncoded called with a coded config".into(),
        ));
    }
    config.validate()?;
    check_store(config, store)?;
    let mut picks = index::sample(rng, config.m, config.slots).into_vec();
    picks.sort_unstable();
    let slots = picks
        .into_iter()
        .map(|i| Content {
            index: i + 1,
            payload: store.contents()[i].payload.clone(),
        })
        .collect();
    Ok(NodeCache {
        node_id,
        slots: Slots::Uncoded(slots),
    })
}

fn check_store(config: &PlacementConfig, store: &ContentStore) -> Result<()> {
    if store.m() != config.m {
        return Err(Error::Config(format!(
            "placement m={} but store has {} contents",
            config.m,
            store.m()
        )));
    }
    Ok(())
}

/// Places one node using its own derived stream.
pub fn place_node(
    config: &PlacementConfig,
    store: &ContentStore,
    node_id: usize,
) -> Result<NodeCache> {
    let mut rng = config.node_rng(node_id);
    match config.scheme {
        Scheme::Coded => place_coded(config, store, node_id, &mut rng),
        Scheme::Uncoded => place_uncoded(config, store, node_id, &mut rng),
    }
}

/// Places nodes `0..n`, in parallel.
pub fn place_all(
    config: &PlacementConfig,
    store: &ContentStore,
    n: usize,
) -> Result<Vec<NodeCache>> {
    config.validate()?;
    check_store(config, store)?;
    (0..n)
        .into_par_iter()
        .map(|id| place_node(config, store, id))
        .collect()
}

/// Caches generated on demand. Equivalent to [`place_all`] node for node.
#[derive(Clone, Debug)]
pub struct LazyPlacement<'a> {
    config: PlacementConfig,
    store: &'a ContentStore,
    n: usize,
}

impl<'a> LazyPlacement<'a> {
    pub fn new(config: PlacementConfig, store: &'a ContentStore, n: usize) -> Result<Self> {
        config.validate()?;
        check_store(&config, store)?;
        Ok(Self { config, store, n })
    }
}

impl CacheSource for LazyPlacement<'_> {
    fn node_count(&self) -> usize {
        self.n
    }

    fn cache(&self, node_id: usize) -> Cow<'_, NodeCache> {
        assert!(
            node_id < self.n,
            "node {node_id} outside network of {}",
            self.n
        );
        Cow::Owned(place_node(&self.config, self.store, node_id).expect("validated placement"))
    }
}

fn digest(payload: &BitVector) -> String {
    let hash = Sha256::digest(payload.to_bytes());
    hex::encode(&hash[..8])
}

/// One row of a cache snapshot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SnapshotRow {
    pub node_id: usize,
    pub scheme: Scheme,
    pub slot: usize,
    /// Coded slots only.
    pub vector: Option<BitVector>,
    /// Uncoded slots only.
    pub content_index: Option<usize>,
    /// First 8 bytes of SHA-256 over the payload bytes, hex.
    pub payload_digest: String,
}

pub const SNAPSHOT_HEADER: &str = "node_id,scheme,slot,vector_hex,content_index,payload_digest";

/// CSV dump of caches. Vectors are hex over their packed bytes (bit 0 is the
/// most significant bit of the first byte).
pub fn write_snapshot<W: Write>(caches: &[NodeCache], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SNAPSHOT_HEADER}")?;
    for cache in caches {
        match &cache.slots {
            Slots::Coded(slots) => {
                for (j, f) in slots.iter().enumerate() {
                    writeln!(
                        out,
                        "{},coded,{},{},,{}",
                        cache.node_id,
                        j,
                        f.vector.to_hex(),
                        digest(&f.payload)
                    )?;
                }
            }
            Slots::Uncoded(slots) => {
                for (j, c) in slots.iter().enumerate() {
                    writeln!(
                        out,
                        "{},uncoded,{},,{},{}",
                        cache.node_id,
                        j,
                        c.index,
                        digest(&c.payload)
                    )?;
                }
            }
        }
    }
    Ok(())
}

/// Parses a snapshot written by [`write_snapshot`]; `m` sets vector lengths.
pub fn read_snapshot<R: BufRead>(input: R, m: usize) -> Result<Vec<SnapshotRow>> {
    let origin = std::path::PathBuf::from("<snapshot>");
    let err = |line: usize, detail: String| Error::Parse {
        path: origin.clone(),
        line,
        detail,
    };
    let mut rows = Vec::new();
    for (no, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&origin, e))?;
        if no == 0 {
            if line.trim() != SNAPSHOT_HEADER {
                return Err(err(1, "unexpected header".into()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(err(
                no + 1,
                format!("expected 6 fields, got {}", fields.len()),
            ));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| err(no + 1, e.to_string()));
        let scheme: Scheme = fields[1]
            .parse()
            .map_err(|e: Error| err(no + 1, e.to_string()))?;
        let vector = match fields[3] {
            "" => None,
            h => Some(BitVector::from_hex(m, h).map_err(|e| err(no + 1, e.to_string()))?),
        };
        let content_index = match fields[4] {
            "" => None,
            s => Some(num(s)?),
        };
        rows.push(SnapshotRow {
            node_id: num(fields[0])?,
            scheme,
            slot: num(fields[2])?,
            vector,
            content_index,
            payload_digest: fields[5].to_string(),
        });
    }
    Ok(rows)
}
