//! Geometric network model and the two retrieval protocols.
//!
//! `n` nodes sit uniformly in the unit square, bucketed into square-lets of
//! side `c1 * s(n)` with `s(n) = sqrt(ln n / n)`. Each nonempty square-let
//! has one randomly chosen anchor. Local groups are square blocks of
//! square-lets used by proactive retrieval.
//!
//! Reactive retrieval walks square-let by square-let in one axis direction
//! (ascending node id inside a square-let, toroidal wrap at the border). A
//! full lap brings the walk back to its starting column or row; it then
//! shifts one square-let sideways and keeps going until every square-let
//! has been visited.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::coding::{
    build_key, gain_bytes, vector_bytes, CacheSource, ContentStore, Contribution, DecodePlan,
    NodeCache, Scheme, Slots,
};
use crate::error::{Error, Result};
use crate::gf2::{self, BitMatrix, BitVector, EchelonBasis};
use crate::seeds::rng_from_seed;

pub const DEFAULT_C1: f64 = 1.0;
pub const DEFAULT_DELTA: f64 = 1.0;
pub const DEFAULT_C4: f64 = 1.0;

/// `s(n) = sqrt(ln n / n)`.
pub fn connectivity_scale(n: usize) -> f64 {
    let n = n as f64;
    (n.ln() / n).sqrt()
}

#[derive(Clone, Debug)]
pub struct Topology {
    n: usize,
    c1: f64,
    delta: f64,
    side: f64,
    dim: usize,
    positions: Vec<(f64, f64)>,
    cell_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    anchors: Vec<Option<usize>>,
}

pub fn build_topology(n: usize, c1: f64, delta: f64, seed: u64) -> Result<Topology> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 nodes, got {n}")));
    }
    if c1.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || delta.is_nan() || delta < 0.0 {
        return Err(Error::Config(format!(
            "need c1 > 0 and delta >= 0 (c1={c1}, delta={delta})"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let side = c1 * connectivity_scale(n);
    let dim = ((1.0 / side).ceil() as usize).max(1);
    let positions: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen::<f64>(), rng.gen::<f64>()))
        .collect();
    let axis = |v: f64| ((v / side) as usize).min(dim - 1);
    let cell_of: Vec<usize> = positions
        .iter()
        .map(|&(x, y)| axis(y) * dim + axis(x))
        .collect();
    let mut members = vec![Vec::new(); dim * dim];
    for (node, &cell) in cell_of.iter().enumerate() {
        members[cell].push(node);
    }
    let anchors = members
        .iter()
        .map(|m| (!m.is_empty()).then(|| m[rng.gen_range(0..m.len())]))
        .collect();
    Ok(Topology {
        n,
        c1,
        delta,
        side,
        dim,
        positions,
        cell_of,
        members,
        anchors,
    })
}

impl Topology {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Interference spacing in square-lets, `(2 + delta) / c1`.
    pub fn c2(&self) -> f64 {
        (2.0 + self.delta) / self.c1
    }

    /// Square-let side length `c1 * s(n)`.
    pub fn side(&self) -> f64 {
        self.side
    }

    /// Square-lets per axis.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell_count(&self) -> usize {
        self.dim * self.dim
    }

    pub fn position(&self, node: usize) -> (f64, f64) {
        self.positions[node]
    }

    pub fn cell_of(&self, node: usize) -> usize {
        self.cell_of[node]
    }

    /// `(column, row)` of a square-let.
    pub fn cell_coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.dim, cell / self.dim)
    }

    pub fn cell_at(&self, col: usize, row: usize) -> usize {
        row * self.dim + col
    }

    /// Nodes in a square-let, ascending id.
    pub fn members(&self, cell: usize) -> &[usize] {
        &self.members[cell]
    }

    pub fn anchor(&self, cell: usize) -> Option<usize> {
        self.anchors[cell]
    }

    /// Whether the square-let lies fully inside the unit square (the last
    /// row and column are clipped by the border).
    pub fn is_full_cell(&self, cell: usize) -> bool {
        let (c, r) = self.cell_coords(cell);
        let inside = |k: usize| ((k + 1) as f64) * self.side <= 1.0;
        inside(c) && inside(r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    East,
    West,
    North,
    South,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::East,
        Direction::West,
        Direction::South,
        Direction::North,
    ];

    /// Nearest axis direction to an angle in radians (0 = east, counter-clockwise).
    pub fn from_angle(theta: f64) -> Self {
        let quarter = std::f64::consts::FRAC_PI_2;
        let k = (theta / quarter).round().rem_euclid(4.0) as usize;
        [
            Direction::East,
            Direction::North,
            Direction::West,
            Direction::South,
        ][k]
    }

    /// Uniform random angle, quantized.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::from_angle(rng.gen_range(0.0..std::f64::consts::TAU))
    }

    pub fn code(&self) -> &'static str {
        match self {
            Direction::East => "E",
            Direction::West => "W",
            Direction::North => "N",
            Direction::South => "S",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "E" | "EAST" => Ok(Direction::East),
            "W" | "WEST" => Ok(Direction::West),
            "N" | "NORTH" => Ok(Direction::North),
            "S" | "SOUTH" => Ok(Direction::South),
            other => Err(Error::Config(format!("unknown direction {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Routing {
    Reactive,
    Proactive,
}

impl fmt::Display for Routing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Routing::Reactive => "reactive",
            Routing::Proactive => "proactive",
        })
    }
}

impl FromStr for Routing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "reactive" => Ok(Routing::Reactive),
            "proactive" => Ok(Routing::Proactive),
            other => Err(Error::Config(format!("unknown routing {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    AllContents,
    /// 1-based target content.
    Single(usize),
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::AllContents => f.write_str("all-contents"),
            Mode::Single(_) => f.write_str("single-content"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetrievalResult {
    pub scheme: Scheme,
    pub routing: Routing,
    pub mode: Mode,
    pub direction: Option<Direction>,
    /// Nodes other than the requester whose caches were used.
    pub hops: usize,
    /// Payload transmissions (uplinks plus relays).
    pub transmissions: usize,
    pub success: bool,
    pub secure_channel_bytes: usize,
    pub data_channel_bytes: usize,
}

/// Node ids in reactive visiting order, requester excluded.
pub fn walk_order(topo: &Topology, requester: usize, direction: Direction) -> Vec<usize> {
    let dim = topo.dim;
    let (c0, r0) = topo.cell_coords(topo.cell_of(requester));
    let (along0, perp0, sign): (usize, usize, isize) = match direction {
        Direction::East => (c0, r0, 1),
        Direction::West => (c0, r0, -1),
        Direction::North => (r0, c0, 1),
        Direction::South => (r0, c0, -1),
    };
    let vertical = matches!(direction, Direction::North | Direction::South);
    let mut order = Vec::with_capacity(topo.n - 1);
    for lap in 0..dim {
        let perp = (perp0 + lap) % dim;
        for step in 0..dim {
            let along = (along0 as isize + sign * step as isize).rem_euclid(dim as isize) as usize;
            let cell = if vertical {
                topo.cell_at(perp, along)
            } else {
                topo.cell_at(along, perp)
            };
            order.extend(
                topo.members(cell)
                    .iter()
                    .copied()
                    .filter(|&v| v != requester),
            );
        }
    }
    order
}

fn payload_bytes(q: usize) -> usize {
    q.div_ceil(8)
}

fn coded_slots(cache: &NodeCache) -> Result<&[crate::coding::EncodedFile]> {
    match &cache.slots {
        Slots::Coded(s) => Ok(s),
        Slots::Uncoded(_) => Err(Error::contract(
            "retrieval",
            "mixed coded and uncoded caches",
        )),
    }
}

/// Accumulates material from contributing nodes and decides when a request
/// is satisfied. Shared by both protocols.
struct Collector<'a> {
    store: &'a ContentStore,
    scheme: Scheme,
    mode: Mode,
    slots: usize,
    state: CollectorState,
    contributors: Vec<usize>,
}

enum CollectorState {
    CodedAll(EchelonBasis),
    CodedSingle {
        key: crate::coding::KeyMaterial,
        basis: EchelonBasis,
        rows: Vec<BitVector>,
    },
    UncodedAll {
        seen: HashSet<usize>,
        first_holder_depth: Vec<Option<usize>>,
    },
    UncodedSingle {
        found_at: Option<usize>,
    },
}

impl<'a> Collector<'a> {
    fn new(store: &'a ContentStore, requester: &NodeCache, mode: Mode) -> Result<Self> {
        let m = store.m();
        if let Mode::Single(r) = mode {
            store.check_index(r)?;
        }
        let scheme = requester.scheme();
        let state = match (scheme, mode) {
            (Scheme::Coded, Mode::AllContents) => {
                let mut basis = EchelonBasis::new(m);
                for v in requester.vectors() {
                    basis.insert(&v)?;
                }
                CollectorState::CodedAll(basis)
            }
            (Scheme::Coded, Mode::Single(r)) => CollectorState::CodedSingle {
                key: build_key(requester, r)?,
                basis: EchelonBasis::new(m),
                rows: Vec::new(),
            },
            (Scheme::Uncoded, Mode::AllContents) => {
                let seen: HashSet<usize> = requester.content_indices().into_iter().collect();
                let mut first_holder_depth = vec![None; m];
                for &i in &seen {
                    first_holder_depth[i - 1] = Some(0);
                }
                CollectorState::UncodedAll {
                    seen,
                    first_holder_depth,
                }
            }
            (Scheme::Uncoded, Mode::Single(r)) => CollectorState::UncodedSingle {
                found_at: requester.content_indices().contains(&r).then_some(0),
            },
        };
        Ok(Self {
            store,
            scheme,
            mode,
            slots: requester.slot_count(),
            state,
            contributors: Vec::new(),
        })
    }

    fn satisfied(&self) -> bool {
        match &self.state {
            CollectorState::CodedAll(b) => b.is_full(),
            CollectorState::CodedSingle { key, basis, .. } => basis.contains(&key.v_req),
            CollectorState::UncodedAll { seen, .. } => seen.len() == self.store.m(),
            CollectorState::UncodedSingle { found_at } => found_at.is_some(),
        }
    }

    fn add(&mut self, cache: &NodeCache) -> Result<()> {
        if cache.scheme() != self.scheme {
            return Err(Error::contract(
                "retrieval",
                "mixed coded and uncoded caches",
            ));
        }
        self.contributors.push(cache.node_id);
        let depth = self.contributors.len();
        match &mut self.state {
            CollectorState::CodedAll(basis) => {
                for f in coded_slots(cache)? {
                    basis.insert(&f.vector)?;
                    if basis.is_full() {
                        break;
                    }
                }
            }
            CollectorState::CodedSingle { basis, rows, .. } => {
                for f in coded_slots(cache)? {
                    basis.insert(&f.vector)?;
                    rows.push(f.vector.clone());
                }
            }
            CollectorState::UncodedAll {
                seen,
                first_holder_depth,
            } => {
                for i in cache.content_indices() {
                    if seen.insert(i) {
                        first_holder_depth[i - 1] = Some(depth);
                    }
                }
            }
            CollectorState::UncodedSingle { found_at } => {
                if let Mode::Single(r) = self.mode {
                    if found_at.is_none() && cache.content_indices().contains(&r) {
                        *found_at = Some(depth);
                    }
                }
            }
        }
        Ok(())
    }

    /// Gains per contributor solving for `v_req`, nearest-first.
    fn decode_plan(&self, requester: usize) -> Result<Option<DecodePlan>> {
        let CollectorState::CodedSingle { key, rows, .. } = &self.state else {
            return Ok(None);
        };
        let m = self.store.m();
        let matrix = BitMatrix::from_rows(m, rows.clone())?;
        let Some(coeffs) = gf2::solve(&matrix, &key.v_req)? else {
            return Ok(None);
        };
        let mut contributions = Vec::with_capacity(self.contributors.len());
        let mut offset = 0;
        for &node in &self.contributors {
            let mut gains = BitVector::zeros(self.slots);
            for j in 0..self.slots {
                if coeffs.get(offset + j) {
                    gains.set(j, true);
                }
            }
            offset += self.slots;
            contributions.push(Contribution {
                node_id: node,
                gains,
            });
        }
        Ok(Some(DecodePlan {
            requester,
            key: key.clone(),
            contributions,
        }))
    }

    /// Checks the delivered content against ground truth (single-content).
    fn verify<C: CacheSource + ?Sized>(&self, requester: &NodeCache, caches: &C) -> Result<bool> {
        let Mode::Single(r) = self.mode else {
            return Ok(true);
        };
        let truth = self.store.payload(r)?;
        match &self.state {
            CollectorState::CodedSingle { key, .. } => {
                if key.v_req.is_zero() {
                    return Ok(&key.key_payload == truth);
                }
                let Some(plan) = self.decode_plan(requester.node_id)? else {
                    return Ok(false);
                };
                Ok(&plan.execute(caches)? == truth)
            }
            CollectorState::UncodedSingle { found_at: Some(d) } => {
                let holder = if *d == 0 {
                    std::borrow::Cow::Borrowed(requester)
                } else {
                    caches.cache(self.contributors[d - 1])
                };
                let Slots::Uncoded(slots) = &holder.slots else {
                    return Ok(false);
                };
                Ok(slots.iter().any(|c| c.index == r && &c.payload == truth))
            }
            _ => Ok(false),
        }
    }

    /// Secure-channel bytes: every contributor reports its vectors, and
    /// gets one gain vector per content requested.
    fn secure_bytes(&self, contributors: usize) -> usize {
        if self.scheme == Scheme::Uncoded {
            return 0;
        }
        let per_request = match self.mode {
            Mode::Single(_) => 1,
            Mode::AllContents => self.store.m(),
        };
        contributors
            * (self.slots * vector_bytes(self.store.m()) + per_request * gain_bytes(self.slots))
    }
}

/// Reactive retrieval by a walk in `direction`.
pub fn reactive_walk<C: CacheSource + ?Sized>(
    topo: &Topology,
    caches: &C,
    store: &ContentStore,
    requester: usize,
    direction: Direction,
    mode: Mode,
) -> Result<RetrievalResult> {
    check_network(topo, caches, requester)?;
    let own = caches.cache(requester);
    let mut collector = Collector::new(store, &own, mode)?;
    let mut hops = 0;
    if !collector.satisfied() {
        for node in walk_order(topo, requester, direction) {
            collector.add(&caches.cache(node))?;
            hops += 1;
            if collector.satisfied() {
                break;
            }
        }
    }
    let reached = collector.satisfied();
    let success = reached && collector.verify(&own, caches)?;

    let transmissions = match (&collector.state, mode) {
        (
            CollectorState::UncodedAll {
                first_holder_depth, ..
            },
            _,
        ) => first_holder_depth.iter().map(|d| d.unwrap_or(hops)).sum(),
        (_, Mode::AllContents) => store.m() * hops,
        (CollectorState::UncodedSingle { found_at: Some(d) }, _) => *d,
        _ => hops,
    };
    Ok(RetrievalResult {
        scheme: collector.scheme,
        routing: Routing::Reactive,
        mode,
        direction: Some(direction),
        hops,
        transmissions,
        success,
        secure_channel_bytes: collector.secure_bytes(hops),
        data_channel_bytes: transmissions * payload_bytes(store.q()),
    })
}

/// Decoding gains for content `target` found by a coded reactive walk.
/// `None` if the walk covers the network without spanning `v_req`. A
/// locally decodable target yields a plan with no contributions.
pub fn reactive_plan<C: CacheSource + ?Sized>(
    topo: &Topology,
    caches: &C,
    store: &ContentStore,
    requester: usize,
    direction: Direction,
    target: usize,
) -> Result<Option<DecodePlan>> {
    check_network(topo, caches, requester)?;
    let own = caches.cache(requester);
    if own.scheme() != Scheme::Coded {
        return Err(Error::contract(
            "reactive_plan",
            "requester cache is not coded",
        ));
    }
    let mut collector = Collector::new(store, &own, Mode::Single(target))?;
    if !collector.satisfied() {
        for node in walk_order(topo, requester, direction) {
            collector.add(&caches.cache(node))?;
            if collector.satisfied() {
                break;
            }
        }
    }
    if !collector.satisfied() {
        return Ok(None);
    }
    collector.decode_plan(requester)
}

fn check_network<C: CacheSource + ?Sized>(
    topo: &Topology,
    caches: &C,
    requester: usize,
) -> Result<()> {
    if caches.node_count() != topo.n() {
        return Err(Error::contract(
            "retrieval",
            format!("{} caches for {} nodes", caches.node_count(), topo.n()),
        ));
    }
    if requester >= topo.n() {
        return Err(Error::contract(
            "retrieval",
            format!("requester {requester} out of range"),
        ));
    }
    Ok(())
}

/// Square blocks of square-lets for proactive retrieval.
#[derive(Clone, Debug)]
pub struct LocalGroupPlan {
    /// Unsnapped `c4 * sqrt(m / (n M))`.
    pub target_side: f64,
    /// Square-lets per group side after snapping.
    pub cells_per_side: usize,
    /// Snapped side length, `cells_per_side * square-let side`.
    pub side: f64,
    /// The whole network is one group.
    pub degenerate: bool,
    /// Per axis, the first square-let index of each block.
    block_starts: Vec<usize>,
    group_of_cell: Vec<usize>,
    groups: Vec<Vec<usize>>,
}

impl LocalGroupPlan {
    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn group_of_cell(&self, cell: usize) -> usize {
        self.group_of_cell[cell]
    }

    /// Square-lets of a group, row-major.
    pub fn cells(&self, group: usize) -> &[usize] {
        &self.groups[group]
    }

    pub fn blocks_per_axis(&self) -> usize {
        self.block_starts.len()
    }
}

/// Groups of about `c4 * sqrt(m / (n M))` per side, snapped to the nearest
/// whole number of square-lets (at least one). Blocks start at multiples of
/// that count; a leftover strip at the far border joins the last block, so
/// no group is smaller than the snapped size.
pub fn plan_local_groups(
    topo: &Topology,
    m: usize,
    slots: usize,
    c4: f64,
) -> Result<LocalGroupPlan> {
    if m == 0 || slots == 0 {
        return Err(Error::Config("m and M must be positive".into()));
    }
    if c4.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Config(format!("c4 must be positive, got {c4}")));
    }
    let dim = topo.dim();
    let target_side = c4 * (m as f64 / (topo.n() as f64 * slots as f64)).sqrt();
    let snapped = ((target_side / topo.side()).round() as usize).max(1);
    let degenerate = snapped >= dim;
    let k = snapped.min(dim);
    let blocks = (dim / k).max(1);
    let block_starts: Vec<usize> = (0..blocks).map(|b| b * k).collect();
    let block_of = |axis: usize| (axis / k).min(blocks - 1);

    let mut group_of_cell = vec![0; topo.cell_count()];
    let mut groups = vec![Vec::new(); blocks * blocks];
    for (cell, slot) in group_of_cell.iter_mut().enumerate() {
        let (c, r) = topo.cell_coords(cell);
        let g = block_of(r) * blocks + block_of(c);
        *slot = g;
        groups[g].push(cell);
    }
    Ok(LocalGroupPlan {
        target_side,
        cells_per_side: k,
        side: k as f64 * topo.side(),
        degenerate,
        block_starts,
        group_of_cell,
        groups,
    })
}

/// Next square-let toward `dest`: horizontal first, then vertical.
fn step_toward(from: (usize, usize), dest: (usize, usize)) -> (usize, usize) {
    let (c, r) = from;
    if c != dest.0 {
        (if c < dest.0 { c + 1 } else { c - 1 }, r)
    } else if r < dest.1 {
        (c, r + 1)
    } else {
        (c, r - 1)
    }
}

/// Relay tree inside one group: for each nonempty square-let, the nonempty
/// square-let its anchor forwards to (`None` for the requester's).
fn relay_parents(topo: &Topology, cells: &[usize], root: usize) -> Vec<(usize, Option<usize>)> {
    let dest = topo.cell_coords(root);
    cells
        .iter()
        .filter(|&&c| !topo.members(c).is_empty())
        .map(|&cell| {
            if cell == root {
                return (cell, None);
            }
            let mut at = topo.cell_coords(cell);
            loop {
                at = step_toward(at, dest);
                let next = topo.cell_at(at.0, at.1);
                if next == root || !topo.members(next).is_empty() {
                    return (cell, Some(next));
                }
            }
        })
        .collect()
}

/// Proactive retrieval from the requester's whole local group.
///
/// Every group node uplinks its combination to its square-let's anchor;
/// anchors fold in what they receive and forward one file along the
/// horizontal-then-vertical path to the requester's square-let, whose anchor
/// delivers to the requester.
pub fn proactive_gather<C: CacheSource + ?Sized>(
    topo: &Topology,
    plan: &LocalGroupPlan,
    caches: &C,
    store: &ContentStore,
    requester: usize,
    mode: Mode,
) -> Result<RetrievalResult> {
    check_network(topo, caches, requester)?;
    let root = topo.cell_of(requester);
    let cells = plan.cells(plan.group_of_cell(root));
    let own = caches.cache(requester);
    let mut collector = Collector::new(store, &own, mode)?;

    let mut group_nodes = Vec::new();
    for &cell in cells {
        group_nodes.extend(
            topo.members(cell)
                .iter()
                .copied()
                .filter(|&v| v != requester),
        );
    }
    for &node in &group_nodes {
        collector.add(&caches.cache(node))?;
    }
    let reached = collector.satisfied();

    let parents = relay_parents(topo, cells, root);
    let mut uplinks = 0;
    let mut relays = 0;
    for &(cell, parent) in &parents {
        let anchor = topo
            .anchor(cell)
            .expect("nonempty square-let has an anchor");
        let members = topo.members(cell).len();
        if parent.is_some() {
            uplinks += members - 1;
            relays += 1;
        } else if anchor == requester {
            uplinks += members - 1;
        } else {
            // Everyone but the anchor and the requester uplinks; the anchor
            // then delivers to the requester.
            uplinks += members - 2;
            relays += 1;
        }
    }
    let transmissions = uplinks + relays;

    let success = reached
        && match mode {
            Mode::Single(_) if collector.scheme == Scheme::Coded => {
                verify_tree_aggregate(topo, &parents, root, &collector, &own, caches)?
            }
            _ => collector.verify(&own, caches)?,
        };

    let per_request = match mode {
        Mode::AllContents => store.m(),
        Mode::Single(_) => 1,
    };
    Ok(RetrievalResult {
        scheme: collector.scheme,
        routing: Routing::Proactive,
        mode,
        direction: None,
        hops: group_nodes.len(),
        transmissions,
        success,
        secure_channel_bytes: collector.secure_bytes(group_nodes.len()),
        data_channel_bytes: per_request * transmissions * payload_bytes(store.q()),
    })
}

/// Runs the coded aggregation up the relay tree, farthest square-lets
/// first, and checks the decoded content.
fn verify_tree_aggregate<C: CacheSource + ?Sized>(
    topo: &Topology,
    parents: &[(usize, Option<usize>)],
    root: usize,
    collector: &Collector<'_>,
    own: &NodeCache,
    caches: &C,
) -> Result<bool> {
    let CollectorState::CodedSingle { key, .. } = &collector.state else {
        return Ok(false);
    };
    let Mode::Single(r) = collector.mode else {
        return Ok(false);
    };
    let truth = collector.store.payload(r)?;
    if key.v_req.is_zero() {
        return Ok(&key.key_payload == truth);
    }
    let Some(plan) = collector.decode_plan(own.node_id)? else {
        return Ok(false);
    };
    let gains: std::collections::HashMap<usize, &BitVector> = plan
        .contributions
        .iter()
        .map(|c| (c.node_id, &c.gains))
        .collect();

    let q = collector.store.q();
    let mut inbox: std::collections::HashMap<usize, BitVector> = std::collections::HashMap::new();
    let dest = topo.cell_coords(root);
    let dist = |cell: usize| {
        let (c, r) = topo.cell_coords(cell);
        c.abs_diff(dest.0) + r.abs_diff(dest.1)
    };
    let mut order: Vec<&(usize, Option<usize>)> = parents.iter().collect();
    order.sort_by_key(|&&(cell, _)| std::cmp::Reverse(dist(cell)));
    let mut delivered = BitVector::zeros(q);
    for &&(cell, parent) in &order {
        let mut file = inbox.remove(&cell).unwrap_or_else(|| BitVector::zeros(q));
        for &node in topo.members(cell) {
            if let Some(g) = gains.get(&node) {
                file.xor_assign(&caches.cache(node).combine(g)?);
            }
        }
        match parent {
            Some(p) => inbox
                .entry(p)
                .or_insert_with(|| BitVector::zeros(q))
                .xor_assign(&file),
            None => delivered = file,
        }
    }
    let decoded = delivered.xor(&key.key_payload);
    Ok(&decoded == truth)
}

pub const TRIAL_LOG_HEADER: &str =
    "seed,scheme,routing,mode,direction,n,m,M,hops,transmissions,success,secure_bytes,data_bytes";

/// One CSV row of the per-trial log.
pub fn trial_log_row(seed: u64, n: usize, m: usize, slots: usize, r: &RetrievalResult) -> String {
    format!(
        "{seed},{},{},{},{},{n},{m},{slots},{},{},{},{},{}",
        r.scheme,
        r.routing,
        r.mode,
        r.direction.map_or("-", |d| d.code()),
        r.hops,
        r.transmissions,
        r.success,
        r.secure_channel_bytes,
        r.data_channel_bytes
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::placement::{place_all, PlacementConfig};
    use crate::seeds::rng_from_seed;

    #[test]
    fn square_let_geometry() {
        let t = build_topology(1000, 1.0, 1.0, 1).unwrap();
        assert!((t.side() - 0.083_110).abs() < 1e-5);
        assert_eq!(t.dim(), 13);
        assert_eq!(t.c2(), 3.0);
        let total: usize = (0..t.cell_count()).map(|c| t.members(c).len()).sum();
        assert_eq!(total, 1000);
        for cell in 0..t.cell_count() {
            for &v in t.members(cell) {
                assert_eq!(t.cell_of(v), cell);
            }
            if let Some(a) = t.anchor(cell) {
                assert_eq!(t.cell_of(a), cell);
            } else {
                assert!(t.members(cell).is_empty());
            }
        }
    }

    #[test]
    fn topology_is_deterministic() {
        let a = build_topology(300, 1.0, 1.0, 9).unwrap();
        let b = build_topology(300, 1.0, 1.0, 9).unwrap();
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.anchors, b.anchors);
        assert!(build_topology(1, 1.0, 1.0, 0).is_err());
        assert!(build_topology(10, 0.0, 1.0, 0).is_err());
        assert!(build_topology(10, 1.0, -1.0, 0).is_err());
    }

    #[test]
    fn angle_quantization() {
        use std::f64::consts::PI;
        assert_eq!(Direction::from_angle(0.1), Direction::East);
        assert_eq!(Direction::from_angle(PI / 2.0 - 0.2), Direction::North);
        assert_eq!(Direction::from_angle(PI + 0.3), Direction::West);
        assert_eq!(Direction::from_angle(1.5 * PI), Direction::South);
        assert_eq!(Direction::from_angle(2.0 * PI - 0.1), Direction::East);
        assert_eq!(Direction::from_angle(-0.2), Direction::East);
    }

    #[test]
    fn walk_covers_everyone_once() {
        let t = build_topology(500, 1.0, 1.0, 4).unwrap();
        for d in Direction::ALL {
            let order = walk_order(&t, 17, d);
            assert_eq!(order.len(), 499);
            let set: HashSet<_> = order.iter().copied().collect();
            assert_eq!(set.len(), 499);
            assert!(!set.contains(&17));
        }
    }

    #[test]
    fn walk_starts_home_then_steps_east_with_wrap() {
        let t = build_topology(400, 1.0, 1.0, 5).unwrap();
        let requester = 3;
        let (c0, r0) = t.cell_coords(t.cell_of(requester));
        let order = walk_order(&t, requester, Direction::East);
        let home: Vec<usize> = t
            .members(t.cell_of(requester))
            .iter()
            .copied()
            .filter(|&v| v != requester)
            .collect();
        assert_eq!(&order[..home.len()], &home[..]);
        let next_cell = t.cell_at((c0 + 1) % t.dim(), r0);
        let next: Vec<usize> = t.members(next_cell).to_vec();
        assert_eq!(&order[home.len()..home.len() + next.len()], &next[..]);
    }

    #[test]
    fn group_snapping_example() {
        let t = build_topology(1000, 1.0, 1.0, 2).unwrap();
        let plan = plan_local_groups(&t, 100, 4, 1.0).unwrap();
        assert!((plan.target_side - 0.158_114).abs() < 1e-5);
        assert_eq!(plan.cells_per_side, 2);
        assert!(!plan.degenerate);
        // 13 square-lets per axis: six blocks, the last three wide.
        assert_eq!(plan.blocks_per_axis(), 6);
        let mut seen = vec![0; t.cell_count()];
        for g in 0..plan.group_count() {
            assert!(plan.cells(g).len() >= 4);
            for &c in plan.cells(g) {
                seen[c] += 1;
                assert_eq!(plan.group_of_cell(c), g);
            }
        }
        assert!(seen.iter().all(|&k| k == 1));

        let small = plan_local_groups(&t, 10, 10, 1.0).unwrap();
        assert_eq!(small.cells_per_side, 1);
        let huge = plan_local_groups(&t, 100, 1, 20.0).unwrap();
        assert!(huge.degenerate);
        assert_eq!(huge.group_count(), 1);
    }

    fn network(
        n: usize,
        m: usize,
        slots: usize,
        scheme: Scheme,
        seed: u64,
    ) -> (Topology, ContentStore, Vec<NodeCache>) {
        let t = build_topology(n, 1.0, 1.0, seed).unwrap();
        let store = ContentStore::random(m, 64, &mut rng_from_seed(seed + 1)).unwrap();
        let cfg = match scheme {
            Scheme::Coded => PlacementConfig::coded(m, slots, seed + 2),
            Scheme::Uncoded => PlacementConfig::uncoded(m, slots, seed + 2),
        };
        let caches = place_all(&cfg, &store, n).unwrap();
        (t, store, caches)
    }

    #[test]
    fn self_sufficient_requester_needs_no_hops() {
        let t = build_topology(200, 1.0, 1.0, 1).unwrap();
        let store = ContentStore::random(10, 64, &mut rng_from_seed(2)).unwrap();
        let cfg = PlacementConfig::coded(10, 10, 3).with_independence(true);
        let caches = place_all(&cfg, &store, 200).unwrap();
        let r = reactive_walk(&t, &caches, &store, 5, Direction::East, Mode::AllContents).unwrap();
        assert_eq!((r.hops, r.transmissions, r.success), (0, 0, true));
        for target in 1..=10 {
            let r = reactive_walk(
                &t,
                &caches,
                &store,
                5,
                Direction::North,
                Mode::Single(target),
            )
            .unwrap();
            assert_eq!(r.hops, 0);
            assert!(r.success);
        }
    }

    #[test]
    fn uncoded_immediate_hit() {
        let (t, store, caches) = network(300, 20, 3, Scheme::Uncoded, 10);
        let requester = 0;
        let first = walk_order(&t, requester, Direction::West)[0];
        let target = caches[first].content_indices()[1];
        if caches[requester].content_indices().contains(&target) {
            return;
        }
        let r = reactive_walk(
            &t,
            &caches,
            &store,
            requester,
            Direction::West,
            Mode::Single(target),
        )
        .unwrap();
        assert_eq!(r.hops, 1);
        assert!(r.success);
        assert_eq!(r.transmissions, 1);
        assert_eq!(r.data_channel_bytes, 8);
        assert_eq!(r.secure_channel_bytes, 0);
    }

    #[test]
    fn coded_single_decodes_exactly() {
        let (t, store, caches) = network(300, 16, 4, Scheme::Coded, 20);
        for requester in 0..40 {
            let target = requester % 16 + 1;
            let r = reactive_walk(
                &t,
                &caches,
                &store,
                requester,
                Direction::South,
                Mode::Single(target),
            )
            .unwrap();
            assert!(r.success, "requester {requester}");
            assert_eq!(r.data_channel_bytes, r.hops * 8);
            assert_eq!(r.secure_channel_bytes, r.hops * (4 * 2 + 1));
        }
    }

    #[test]
    fn coded_hops_respect_dimension_bound() {
        let (t, store, caches) = network(400, 40, 5, Scheme::Coded, 30);
        for requester in 0..30 {
            let r = reactive_walk(
                &t,
                &caches,
                &store,
                requester,
                Direction::East,
                Mode::AllContents,
            )
            .unwrap();
            assert!(r.success);
            let own = BitMatrix::from_rows(40, caches[requester].vectors())
                .unwrap()
                .rank();
            assert!(r.hops >= (40 - own).div_ceil(5));
        }
    }

    #[test]
    fn exhausted_walk_fails() {
        // 30 nodes x 2 slots cannot cover 100 contents.
        let (t, store, caches) = network(30, 100, 2, Scheme::Uncoded, 40);
        let r = reactive_walk(&t, &caches, &store, 0, Direction::East, Mode::AllContents).unwrap();
        assert!(!r.success);
        assert_eq!(r.hops, 29);
    }

    #[test]
    fn lone_requester_group_has_no_transmissions() {
        // Find a square-let with exactly one node and use 1x1 groups.
        let (t, store, caches) = network(200, 4, 4, Scheme::Coded, 50);
        let plan = plan_local_groups(&t, 4, 4, 0.01).unwrap();
        assert_eq!(plan.cells_per_side, 1);
        let lone = (0..t.cell_count()).find(|&c| t.members(c).len() == 1);
        let Some(cell) = lone else { return };
        let requester = t.members(cell)[0];
        let r = proactive_gather(&t, &plan, &caches, &store, requester, Mode::AllContents).unwrap();
        assert_eq!(r.transmissions, 0);
        assert_eq!(r.hops, 0);
        let own = BitMatrix::from_rows(4, caches[requester].vectors())
            .unwrap()
            .rank();
        assert_eq!(r.success, own == 4);
    }

    #[test]
    fn proactive_tree_counts_one_transmission_per_non_requester() {
        let (t, store, caches) = network(1000, 30, 5, Scheme::Coded, 60);
        let plan = plan_local_groups(&t, 30, 5, 2.5).unwrap();
        for requester in [0, 77, 500] {
            for mode in [Mode::AllContents, Mode::Single(requester % 30 + 1)] {
                let r = proactive_gather(&t, &plan, &caches, &store, requester, mode).unwrap();
                assert_eq!(r.transmissions, r.hops);
                assert!(r.success);
            }
        }
    }

    #[test]
    fn trial_log_row_format() {
        let r = RetrievalResult {
            scheme: Scheme::Coded,
            routing: Routing::Reactive,
            mode: Mode::AllContents,
            direction: Some(Direction::North),
            hops: 3,
            transmissions: 300,
            success: true,
            secure_channel_bytes: 10,
            data_channel_bytes: 20,
        };
        assert_eq!(
            trial_log_row(7, 1000, 100, 25, &r),
            "7,coded,reactive,all-contents,N,1000,100,25,3,300,true,10,20"
        );
        assert_eq!(TRIAL_LOG_HEADER.split(',').count(), 13);
    }
}
