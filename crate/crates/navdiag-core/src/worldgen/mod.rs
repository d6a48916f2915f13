//! Reproducible synthetic indoor worlds with controllable visual style.
//!
//! Every environment is a set of rooms on a jittered grid (one or two
//! floors), filled with viewpoints and connected into one navigable
//! graph. Rooms carry ground-truth semantics — a per-class area vector
//! for each of the four horizontal view directions — drawn from a
//! per-room-type Dirichlet allocation, so semantics depend only on
//! layout, never on style.
//!
//! Style enters only at appearance extraction: low-level features mix
//! the semantic vector with an environment style vector and a per-room
//! region style vector through fixed global matrices, then add seeded
//! Gaussian noise. Regenerating a world with different style strengths
//! leaves all semantics bit-identical; that separation is the planted
//! bias this crate studies.

pub mod instruction;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::navgraph::NavGraph;
use crate::neuralcore::Tensor;
use crate::rng::{mix, rng_for, tag};
pub use crate::worldgen::instruction::InstructionNoise;

/// Grid cell pitch in meters; rooms sit on this lattice.
const CELL_SIZE: f64 = 6.0;
/// Room half-extents are drawn from this range (4–5.5 m rooms).
const ROOM_HALF_RANGE: (f64, f64) = (2.0, 2.75);
/// Room centers are jittered off the lattice by up to this much.
const CENTER_JITTER: f64 = 0.75;
/// Viewpoints within a room connect when closer than this.
const INTRA_ROOM_RADIUS: f64 = 2.5;
/// Vertical spacing between floors in meters.
pub const FLOOR_HEIGHT: f64 = 3.0;
/// Dirichlet concentration on a room type's signature classes.
const SIGNATURE_ALPHA: f64 = 4.0;
/// Dirichlet concentration on all other classes.
const BACKGROUND_ALPHA: f64 = 0.15;
/// Signature classes per room type.
const SIGNATURE_CLASSES: usize = 3;
/// Fraction of a view occupied by foreground classes (rest background).
const COVERAGE_RANGE: (f64, f64) = (0.6, 0.85);
/// Weight standard deviation of the semantic mixing matrix.
const SEM_MIX_SD: f64 = 2.5;
/// Per-class scale of the pseudo-semantic blend one environment style axis
/// contributes (comparable to a signature class's area share, so styles
/// genuinely alias semantics instead of living in a disjoint subspace).
const ENV_ALIAS_SD: f64 = 0.15;
/// Per-class scale of the pseudo-semantic blend one region style axis
/// contributes.
const REG_ALIAS_SD: f64 = 0.12;
/// Episode sampling retries before giving up.
const EPISODE_RETRY_BUDGET: usize = 200;

/// One of the four horizontal view directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::East,
        Direction::South,
        Direction::West,
    ];

    pub fn index(self) -> usize {
        match self {
            Direction::North => 0,
            Direction::East => 1,
            Direction::South => 2,
            Direction::West => 3,
        }
    }

    pub fn from_index(idx: usize) -> Result<Self> {
        Self::ALL
            .get(idx)
            .copied()
            .ok_or_else(|| Error::Validation(format!("direction index {idx} out of range")))
    }

    /// Unit heading in the horizontal plane (x east, y north).
    pub fn heading(self) -> [f64; 2] {
        match self {
            Direction::North => [0.0, 1.0],
            Direction::East => [1.0, 0.0],
            Direction::South => [0.0, -1.0],
            Direction::West => [-1.0, 0.0],
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Direction::North => "n",
            Direction::East => "e",
            Direction::South => "s",
            Direction::West => "w",
        }
    }

    /// Quadrant of a horizontal displacement: the direction whose heading
    /// has the largest dot product, ties resolved in N, E, S, W order.
    pub fn from_delta(dx: f64, dy: f64) -> Direction {
        let mut best = Direction::North;
        let mut best_dot = f64::NEG_INFINITY;
        for dir in Direction::ALL {
            let h = dir.heading();
            let dot = h[0] * dx + h[1] * dy;
            if dot > best_dot {
                best_dot = dot;
                best = dir;
            }
        }
        best
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" | "north" => Ok(Direction::North),
            "e" | "east" => Ok(Direction::East),
            "s" | "south" => Ok(Direction::South),
            "w" | "west" => Ok(Direction::West),
            other => Err(Error::Validation(format!(
                "unknown direction {other:?}; expected n, e, s or w"
            ))),
        }
    }
}

/// Parameters of world generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub num_envs: usize,
    /// Inclusive range of rooms per environment.
    pub rooms_per_env: (usize, usize),
    /// 1 or 2 floors; floor f sits at z = 3f meters.
    pub floors: usize,
    /// Inclusive range of viewpoints per room.
    pub viewpoints_per_room: (usize, usize),
    /// Number of semantic classes C.
    pub semantic_classes: usize,
    pub room_types: usize,
    pub style_dim: usize,
    /// Low-level appearance dimensionality D.
    pub lowlevel_dim: usize,
    /// Strength of the per-environment style component.
    pub env_style_w: f64,
    /// Strength of the per-room region style component.
    pub region_style_w: f64,
    pub appearance_noise_sd: f64,
    /// Within-room semantic variation across views (0 = none).
    pub view_semantic_jitter: f64,
    /// Weight of the facing room's semantics in a directional view
    /// (0 = views show only their own room).
    pub neighbor_context_w: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            num_envs: 2,
            rooms_per_env: (5, 7),
            floors: 2,
            viewpoints_per_room: (3, 5),
            semantic_classes: 16,
            room_types: 6,
            style_dim: 8,
            lowlevel_dim: 64,
            env_style_w: 1.0,
            region_style_w: 1.0,
            appearance_noise_sd: 0.1,
            view_semantic_jitter: 0.08,
            neighbor_context_w: 0.45,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_envs", self.num_envs),
            ("semantic_classes", self.semantic_classes),
            ("room_types", self.room_types),
            ("style_dim", self.style_dim),
            ("lowlevel_dim", self.lowlevel_dim),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::Validation(format!("{name} must be at least 1")));
            }
        }
        if !(1..=2).contains(&self.floors) {
            return Err(Error::Validation(format!(
                "floors must be 1 or 2, got {}",
                self.floors
            )));
        }
        for (name, (lo, hi)) in [
            ("rooms_per_env", self.rooms_per_env),
            ("viewpoints_per_room", self.viewpoints_per_room),
        ] {
            if lo < 1 || lo > hi {
                return Err(Error::Validation(format!(
                    "{name} range [{lo}, {hi}] is empty or starts below 1"
                )));
            }
        }
        for (name, v) in [
            ("env_style_w", self.env_style_w),
            ("region_style_w", self.region_style_w),
            ("appearance_noise_sd", self.appearance_noise_sd),
            ("view_semantic_jitter", self.view_semantic_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.neighbor_context_w) {
            return Err(Error::Validation(format!(
                "neighbor_context_w must lie in [0,1], got {}",
                self.neighbor_context_w
            )));
        }
        Ok(())
    }
}

/// One room: its type decides the semantic signature, its floor the
/// height, and its region style vector the local appearance component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub room_id: usize,
    pub room_type: usize,
    pub floor: usize,
    pub region_style_vec: Vec<f64>,
    /// Fraction of each view covered by foreground classes.
    pub coverage: f64,
}

/// The fixed mixing matrices shared by every environment: appearance
/// "physics" is universal, only styles differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMixing {
    pub w_sem: Tensor,
    pub w_env: Tensor,
    pub w_reg: Tensor,
}

/// A generated environment: connected viewpoint graph, rooms, a style
/// vector, and per-view semantic ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub id: String,
    graph: NavGraph,
    room_of: Vec<usize>,
    pub rooms: Vec<Room>,
    pub env_style_vec: Vec<f64>,
    /// Indexed by viewpoint, then direction (N, E, S, W).
    semantics: Vec<[Vec<f64>; 4]>,
}

impl Environment {
    pub fn graph(&self) -> &NavGraph {
        &self.graph
    }

    pub fn viewpoint_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn viewpoint_ids(&self) -> impl Iterator<Item = &str> {
        self.graph.ids()
    }

    pub fn room_index_of(&self, vp_index: usize) -> usize {
        self.room_of[vp_index]
    }

    pub fn room_of(&self, vp_id: &str) -> Result<&Room> {
        Ok(&self.rooms[self.room_of[self.graph.lookup(vp_id)?]])
    }

    pub fn room_type_of(&self, vp_id: &str) -> Result<usize> {
        Ok(self.room_of(vp_id)?.room_type)
    }

    /// Stored ground-truth class areas for one view.
    pub fn semantics_of(&self, vp_id: &str, dir: Direction) -> Result<&[f64]> {
        let idx = self.graph.lookup(vp_id)?;
        Ok(&self.semantics[idx][dir.index()])
    }
}

/// A full world: environments plus the global mixing matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorldRepr", into = "WorldRepr")]
pub struct World {
    pub spec: WorldSpec,
    pub envs: Vec<Environment>,
    pub global_mixing: GlobalMixing,
}

impl World {
    pub fn env_index(&self, env_id: &str) -> Result<usize> {
        self.envs
            .iter()
            .position(|e| e.id == env_id)
            .ok_or_else(|| Error::Lookup(format!("unknown environment {env_id:?}")))
    }

    pub fn env(&self, env_id: &str) -> Result<&Environment> {
        Ok(&self.envs[self.env_index(env_id)?])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::serde(path, e))?;
        use std::io::Write;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<World> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::serde(path, e))
    }
}

/// Stored per-view semantics: pure lookup.
pub fn ground_truth_semantics<'w>(
    world: &'w World,
    env_id: &str,
    viewpoint: &str,
    direction: Direction,
) -> Result<&'w [f64]> {
    world.env(env_id)?.semantics_of(viewpoint, direction)
}

/// Low-level appearance of one view:
/// `x = tanh(W_sem·s + env_w·W_env·g_env + reg_w·W_reg·g_region + ε)`
/// with `ε ~ N(0, appearance_noise_sd²)` regenerated from
/// `(seed, env, viewpoint, direction)` — no stored randomness.
pub fn low_level_appearance(
    world: &World,
    env_id: &str,
    viewpoint: &str,
    direction: Direction,
    seed: u64,
) -> Result<Vec<f64>> {
    let env_idx = world.env_index(env_id)?;
    let env = &world.envs[env_idx];
    let vp_idx = env.graph.lookup(viewpoint)?;
    let s = &env.semantics[vp_idx][direction.index()];
    let room = &env.rooms[env.room_of[vp_idx]];
    let spec = &world.spec;
    let mixing = &world.global_mixing;

    let sem = mixing.w_sem.matmul(&Tensor::vector(s))?;
    let mut pre = sem.data().to_vec();
    if spec.env_style_w > 0.0 {
        let e = mixing
            .w_env
            .matmul(&Tensor::vector(&env.env_style_vec))?;
        for (p, v) in pre.iter_mut().zip(e.data()) {
            *p += spec.env_style_w * v;
        }
    }
    if spec.region_style_w > 0.0 {
        let r = mixing
            .w_reg
            .matmul(&Tensor::vector(&room.region_style_vec))?;
        for (p, v) in pre.iter_mut().zip(r.data()) {
            *p += spec.region_style_w * v;
        }
    }
    if spec.appearance_noise_sd > 0.0 {
        let mut rng = rng_for(
            seed,
            &[
                tag::APPEARANCE_NOISE,
                env_idx as u64,
                vp_idx as u64,
                direction.index() as u64,
            ],
        );
        for p in pre.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *p += spec.appearance_noise_sd * z;
        }
    }
    Ok(pre.into_iter().map(f64::tanh).collect())
}

/// Sample a Dirichlet vector by normalizing Gamma draws.
fn dirichlet<R: Rng>(rng: &mut R, alphas: &[f64]) -> Vec<f64> {
    let mut draws: Vec<f64> = alphas
        .iter()
        .map(|&a| {
            Gamma::new(a, 1.0)
                .expect("positive shape")
                .sample(rng)
        })
        .collect();
    let total: f64 = draws.iter().sum();
    if total <= 0.0 {
        // Vanishingly rare with our alphas; fall back to uniform.
        return vec![1.0 / alphas.len() as f64; alphas.len()];
    }
    for d in &mut draws {
        *d /= total;
    }
    draws
}

fn gaussian_vec<R: Rng>(rng: &mut R, n: usize, sd: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * sd
        })
        .collect()
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Generate a world deterministically from its spec.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mixing = {
        let mut rng = rng_for(spec.seed, &[tag::WORLD_MIXING]);
        let w_sem =
            Tensor::randn(&mut rng, spec.lowlevel_dim, spec.semantic_classes, SEM_MIX_SD);
        // Styles shift the *apparent* class mix: each style axis maps to a
        // pseudo-semantic blend, so the style matrices share W_sem's column
        // space. Within one environment the shift is constant, so appearance
        // stays locally consistent; across environments the same true
        // semantics land on different apparent mixes, which is what makes
        // low-level appearance misleading out of environment.
        let per_axis = |sd: f64| sd / (spec.style_dim as f64).sqrt();
        let m_env = Tensor::randn(
            &mut rng,
            spec.semantic_classes,
            spec.style_dim,
            per_axis(ENV_ALIAS_SD),
        );
        let m_reg = Tensor::randn(
            &mut rng,
            spec.semantic_classes,
            spec.style_dim,
            per_axis(REG_ALIAS_SD),
        );
        GlobalMixing {
            w_env: w_sem.matmul(&m_env)?,
            w_reg: w_sem.matmul(&m_reg)?,
            w_sem,
        }
    };
    let mut envs = Vec::with_capacity(spec.num_envs);
    for env_idx in 0..spec.num_envs {
        envs.push(generate_env(spec, env_idx)?);
    }
    Ok(World {
        spec: spec.clone(),
        envs,
        global_mixing: mixing,
    })
}

struct RoomDraft {
    center: [f64; 2],
    half: [f64; 2],
    floor: usize,
    cell: (usize, usize),
    room_type: usize,
    region_style: Vec<f64>,
    coverage: f64,
    base_semantics: Vec<f64>,
}

fn generate_env(spec: &WorldSpec, env_idx: usize) -> Result<Environment> {
    let mut rng = rng_for(spec.seed, &[tag::WORLD_ENV, env_idx as u64]);
    let num_rooms = rng.gen_range(spec.rooms_per_env.0..=spec.rooms_per_env.1);

    // Round-robin rooms over floors; each floor packs its rooms onto a
    // near-square grid of 6 m cells.
    let rooms_on_floor = |f: usize| (num_rooms + spec.floors - 1 - f) / spec.floors;
    let mut drafts = Vec::with_capacity(num_rooms);
    for i in 0..num_rooms {
        let floor = i % spec.floors;
        let on_floor_idx = i / spec.floors;
        let side = (rooms_on_floor(floor) as f64).sqrt().ceil() as usize;
        let cell = (on_floor_idx % side, on_floor_idx / side);
        let jitter = [
            rng.gen_range(-CENTER_JITTER..CENTER_JITTER),
            rng.gen_range(-CENTER_JITTER..CENTER_JITTER),
        ];
        let center = [
            cell.0 as f64 * CELL_SIZE + CELL_SIZE / 2.0 + jitter[0],
            cell.1 as f64 * CELL_SIZE + CELL_SIZE / 2.0 + jitter[1],
        ];
        let half = [
            rng.gen_range(ROOM_HALF_RANGE.0..ROOM_HALF_RANGE.1),
            rng.gen_range(ROOM_HALF_RANGE.0..ROOM_HALF_RANGE.1),
        ];
        let room_type = rng.gen_range(0..spec.room_types);
        let region_style = gaussian_vec(&mut rng, spec.style_dim, 1.0);
        let coverage = rng.gen_range(COVERAGE_RANGE.0..COVERAGE_RANGE.1);
        let mut alphas = vec![BACKGROUND_ALPHA; spec.semantic_classes];
        for j in 0..SIGNATURE_CLASSES {
            alphas[(SIGNATURE_CLASSES * room_type + j) % spec.semantic_classes] =
                SIGNATURE_ALPHA;
        }
        let base_semantics = dirichlet(&mut rng, &alphas);
        drafts.push(RoomDraft {
            center,
            half,
            floor,
            cell,
            room_type,
            region_style,
            coverage,
            base_semantics,
        });
    }

    // Viewpoints: uniform in each room's box, z exactly at floor height.
    let mut graph = NavGraph::new();
    let mut room_of = Vec::new();
    let mut vps_by_room: Vec<Vec<usize>> = vec![Vec::new(); num_rooms];
    for (r, draft) in drafts.iter().enumerate() {
        let count = rng.gen_range(spec.viewpoints_per_room.0..=spec.viewpoints_per_room.1);
        for _ in 0..count {
            let x = rng.gen_range(draft.center[0] - draft.half[0]..draft.center[0] + draft.half[0]);
            let y = rng.gen_range(draft.center[1] - draft.half[1]..draft.center[1] + draft.half[1]);
            let z = draft.floor as f64 * FLOOR_HEIGHT;
            let idx = graph.add_node(&format!("v{}", graph.node_count()), [x, y, z])?;
            room_of.push(r);
            vps_by_room[r].push(idx);
        }
    }

    let n = graph.node_count();
    let dist = |graph: &NavGraph, a: usize, b: usize| {
        let (pa, pb) = (graph.position(a), graph.position(b));
        ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2)).sqrt()
    };
    let mut uf = UnionFind::new(n);

    // Intra-room edges: all pairs within the radius, then greedy nearest
    // links until the room is internally connected.
    for members in &vps_by_room {
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                if dist(&graph, a, b) <= INTRA_ROOM_RADIUS {
                    graph.add_edge_weighted(
                        &graph.id(a).to_string(),
                        &graph.id(b).to_string(),
                        dist(&graph, a, b),
                    )?;
                    uf.union(a, b);
                }
            }
        }
        loop {
            let mut best: Option<(f64, usize, usize)> = None;
            for (i, &a) in members.iter().enumerate() {
                for &b in &members[i + 1..] {
                    if uf.find(a) != uf.find(b) {
                        let d = dist(&graph, a, b);
                        if best.map_or(true, |(bd, _, _)| d < bd) {
                            best = Some((d, a, b));
                        }
                    }
                }
            }
            match best {
                Some((d, a, b)) => {
                    graph.add_edge_weighted(
                        &graph.id(a).to_string(),
                        &graph.id(b).to_string(),
                        d,
                    )?;
                    uf.union(a, b);
                }
                None => break,
            }
        }
    }

    // One doorway per grid-adjacent room pair on the same floor; stairs
    // between vertically stacked cells.
    let adjacent = |a: &RoomDraft, b: &RoomDraft| {
        if a.floor == b.floor {
            let dx = a.cell.0.abs_diff(b.cell.0);
            let dy = a.cell.1.abs_diff(b.cell.1);
            dx + dy == 1
        } else {
            a.cell == b.cell
        }
    };
    for r1 in 0..num_rooms {
        for r2 in r1 + 1..num_rooms {
            if !adjacent(&drafts[r1], &drafts[r2]) {
                continue;
            }
            let mut best: Option<(f64, usize, usize)> = None;
            for &a in &vps_by_room[r1] {
                for &b in &vps_by_room[r2] {
                    let d = dist(&graph, a, b);
                    if best.map_or(true, |(bd, _, _)| d < bd) {
                        best = Some((d, a, b));
                    }
                }
            }
            if let Some((d, a, b)) = best {
                graph.add_edge_weighted(&graph.id(a).to_string(), &graph.id(b).to_string(), d)?;
                uf.union(a, b);
            }
        }
    }

    // Greedy nearest cross-component links until the whole environment
    // is one component.
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            for b in a + 1..n {
                if uf.find(a) != uf.find(b) && !edge_exists(&graph, a, b) {
                    let d = dist(&graph, a, b);
                    if best.map_or(true, |(bd, _, _)| d < bd) {
                        best = Some((d, a, b));
                    }
                }
            }
        }
        match best {
            Some((d, a, b)) => {
                graph.add_edge_weighted(&graph.id(a).to_string(), &graph.id(b).to_string(), d)?;
                uf.union(a, b);
            }
            None => break,
        }
    }

    let env_style_vec = gaussian_vec(&mut rng, spec.style_dim, 1.0);

    // Per-view semantics: blend the room's allocation with the facing
    // room's, then optionally jitter via a Dirichlet resample around the
    // blend. Scale by the blended coverage so class areas sum below 1.
    let ctx_w = spec.neighbor_context_w;
    let mut semantics = Vec::with_capacity(n);
    for vp in 0..n {
        let own = room_of[vp];
        let mut per_dir: [Vec<f64>; 4] = Default::default();
        for dir in Direction::ALL {
            let ctx = facing_room(&graph, &room_of, vp, dir).unwrap_or(own);
            let du = &drafts[own].base_semantics;
            let dc = &drafts[ctx].base_semantics;
            let blend: Vec<f64> = du
                .iter()
                .zip(dc)
                .map(|(o, c)| (1.0 - ctx_w) * o + ctx_w * c)
                .collect();
            let coverage =
                (1.0 - ctx_w) * drafts[own].coverage + ctx_w * drafts[ctx].coverage;
            let shape = if spec.view_semantic_jitter > 0.0 {
                let alphas: Vec<f64> = blend
                    .iter()
                    .map(|&b| b / spec.view_semantic_jitter)
                    .collect();
                dirichlet(&mut rng, &alphas)
            } else {
                blend
            };
            per_dir[dir.index()] = shape.iter().map(|&q| coverage * q).collect();
        }
        semantics.push(per_dir);
    }

    Ok(Environment {
        id: format!("env{env_idx}"),
        graph,
        room_of,
        rooms: drafts
            .into_iter()
            .enumerate()
            .map(|(room_id, d)| Room {
                room_id,
                room_type: d.room_type,
                floor: d.floor,
                region_style_vec: d.region_style,
                coverage: d.coverage,
            })
            .collect(),
        env_style_vec,
        semantics,
    })
}

fn edge_exists(graph: &NavGraph, a: usize, b: usize) -> bool {
    graph.neighbors(a).iter().any(|&(n, _)| n == b)
}

/// Room of the nearest graph neighbor whose displacement falls in the
/// given quadrant, if any.
fn facing_room(
    graph: &NavGraph,
    room_of: &[usize],
    vp: usize,
    dir: Direction,
) -> Option<usize> {
    let from = graph.position(vp);
    let mut best: Option<(f64, usize)> = None;
    for &(nbr, w) in graph.neighbors(vp) {
        let to = graph.position(nbr);
        if Direction::from_delta(to[0] - from[0], to[1] - from[1]) == dir
            && best.map_or(true, |(bw, _)| w < bw)
        {
            best = Some((w, nbr));
        }
    }
    best.map(|(_, nbr)| room_of[nbr])
}

/// One navigation episode: a shortest path plus its instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDatum {
    pub id: String,
    pub env_id: String,
    pub path: Vec<String>,
    pub instruction: Vec<u32>,
    pub goal: String,
}

impl PathDatum {
    /// Check structural invariants against the world that produced it.
    pub fn validate(&self, world: &World) -> Result<()> {
        let env = world.env(&self.env_id)?;
        if self.path.len() < 2 {
            return Err(Error::Validation(format!(
                "episode {:?} has a path of length {}",
                self.id,
                self.path.len()
            )));
        }
        if self.instruction.is_empty() {
            return Err(Error::Validation(format!(
                "episode {:?} has an empty instruction",
                self.id
            )));
        }
        if self.goal != *self.path.last().expect("nonempty") {
            return Err(Error::Validation(format!(
                "episode {:?} goal does not end its path",
                self.id
            )));
        }
        for pair in self.path.windows(2) {
            let a = env.graph.lookup(&pair[0])?;
            let b = env.graph.lookup(&pair[1])?;
            if !edge_exists(&env.graph, a, b) {
                return Err(Error::Validation(format!(
                    "episode {:?} path jumps between unconnected viewpoints {} and {}",
                    self.id, pair[0], pair[1]
                )));
            }
        }
        Ok(())
    }
}

/// Sample `n` shortest-path episodes with hop counts inside
/// `path_len_range` (inclusive), rendering an instruction for each.
pub fn sample_episodes(
    world: &World,
    n: usize,
    path_len_range: (usize, usize),
    noise: &InstructionNoise,
    seed: u64,
) -> Result<Vec<PathDatum>> {
    let ids: Vec<String> = world.envs.iter().map(|e| e.id.clone()).collect();
    sample_episodes_in(world, &ids, n, path_len_range, noise, seed, "ep")
}

/// Samples episodes whose paths stay inside the named environments.
///
/// Episode ids are `"{id_prefix}{k:04}"`, numbered in sampling order, so
/// pools drawn with different prefixes can be merged without collisions.
pub fn sample_episodes_in(
    world: &World,
    env_ids: &[String],
    n: usize,
    path_len_range: (usize, usize),
    noise: &InstructionNoise,
    seed: u64,
    id_prefix: &str,
) -> Result<Vec<PathDatum>> {
    if path_len_range.0 < 1 || path_len_range.0 > path_len_range.1 {
        return Err(Error::Validation(format!(
            "path length range [{}, {}] is empty or starts below 1",
            path_len_range.0, path_len_range.1
        )));
    }
    if world.envs.is_empty() {
        return Err(Error::Validation("world has no environments".into()));
    }
    if env_ids.is_empty() {
        return Err(Error::Validation(
            "episode sampling needs at least one environment".into(),
        ));
    }
    let mut allowed = Vec::with_capacity(env_ids.len());
    for id in env_ids {
        let idx = world
            .envs
            .iter()
            .position(|e| &e.id == id)
            .ok_or_else(|| Error::Validation(format!("unknown environment {id:?}")))?;
        if allowed.contains(&idx) {
            return Err(Error::Validation(format!(
                "environment {id:?} listed more than once"
            )));
        }
        allowed.push(idx);
    }
    let mut rng = rng_for(seed, &[tag::EPISODES]);
    let mut episodes = Vec::with_capacity(n);
    for k in 0..n {
        let mut accepted = None;
        let mut last_env = allowed[0];
        for _ in 0..EPISODE_RETRY_BUDGET {
            let env_idx = allowed[rng.gen_range(0..allowed.len())];
            last_env = env_idx;
            let graph = &world.envs[env_idx].graph;
            if graph.node_count() < 2 {
                continue;
            }
            let start = rng.gen_range(0..graph.node_count());
            let goal = rng.gen_range(0..graph.node_count());
            if start == goal {
                continue;
            }
            let Some(path) = graph.shortest_path(start, goal) else {
                continue;
            };
            let hops = path.len() - 1;
            if hops < path_len_range.0 || hops > path_len_range.1 {
                continue;
            }
            accepted = Some((env_idx, path));
            break;
        }
        let Some((env_idx, path)) = accepted else {
            return Err(Error::Generation {
                env: world.envs[last_env].id.clone(),
                msg: format!(
                    "no path with {}..={} hops found in {EPISODE_RETRY_BUDGET} attempts",
                    path_len_range.0, path_len_range.1
                ),
            });
        };
        let env = &world.envs[env_idx];
        let path_ids: Vec<String> = path.iter().map(|&i| env.graph.id(i).to_string()).collect();
        let instruction = instruction::render_instruction(
            world,
            &env.id,
            &path_ids,
            noise,
            mix(seed, &[tag::INSTRUCTION, k as u64]),
        )?;
        episodes.push(PathDatum {
            id: format!("{id_prefix}{k:04}"),
            env_id: env.id.clone(),
            goal: path_ids.last().expect("path nonempty").clone(),
            path: path_ids,
            instruction,
        });
    }
    Ok(episodes)
}

pub fn save_episodes(path: &Path, episodes: &[PathDatum]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, episodes).map_err(|e| Error::serde(path, e))?;
    use std::io::Write;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_episodes(path: &Path) -> Result<Vec<PathDatum>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::serde(path, e))
}

// ---------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct WorldRepr {
    schema_version: u32,
    spec: WorldSpec,
    envs: Vec<EnvRepr>,
    global_mixing: GlobalMixing,
}

#[derive(Serialize, Deserialize)]
struct EnvRepr {
    id: String,
    viewpoints: Vec<ViewpointRepr>,
    edges: Vec<(String, String)>,
    rooms: Vec<Room>,
    env_style_vec: Vec<f64>,
    /// Viewpoint id → four class-area vectors in N, E, S, W order.
    semantics: BTreeMap<String, Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct ViewpointRepr {
    id: String,
    x: f64,
    y: f64,
    z: f64,
    room_id: usize,
}

impl TryFrom<WorldRepr> for World {
    type Error = String;
    fn try_from(r: WorldRepr) -> std::result::Result<Self, String> {
        if r.schema_version != 1 {
            return Err(format!("unsupported world schema {}", r.schema_version));
        }
        let mut envs = Vec::with_capacity(r.envs.len());
        for e in r.envs {
            envs.push(env_from_repr(e).map_err(|err| err.to_string())?);
        }
        Ok(World {
            spec: r.spec,
            envs,
            global_mixing: r.global_mixing,
        })
    }
}

fn env_from_repr(e: EnvRepr) -> Result<Environment> {
    let mut graph = NavGraph::new();
    let mut room_of = Vec::with_capacity(e.viewpoints.len());
    for vp in &e.viewpoints {
        if vp.room_id >= e.rooms.len() {
            return Err(Error::Validation(format!(
                "viewpoint {:?} references missing room {}",
                vp.id, vp.room_id
            )));
        }
        graph.add_node(&vp.id, [vp.x, vp.y, vp.z])?;
        room_of.push(vp.room_id);
    }
    for (a, b) in &e.edges {
        graph.add_edge(a, b)?;
    }
    let mut semantics = Vec::with_capacity(e.viewpoints.len());
    for vp in &e.viewpoints {
        let dirs = e.semantics.get(&vp.id).ok_or_else(|| {
            Error::Validation(format!("viewpoint {:?} has no semantics", vp.id))
        })?;
        if dirs.len() != 4 {
            return Err(Error::Validation(format!(
                "viewpoint {:?} must have 4 directional views, got {}",
                vp.id,
                dirs.len()
            )));
        }
        let mut per_dir: [Vec<f64>; 4] = Default::default();
        for (i, s) in dirs.iter().enumerate() {
            let total: f64 = s.iter().sum();
            if s.iter().any(|&v| !(0.0..=1.0).contains(&v)) || total > 1.0 + 1e-9 {
                return Err(Error::Validation(format!(
                    "viewpoint {:?} view {i} has invalid class areas",
                    vp.id
                )));
            }
            per_dir[i] = s.clone();
        }
        semantics.push(per_dir);
    }
    Ok(Environment {
        id: e.id,
        graph,
        room_of,
        rooms: e.rooms,
        env_style_vec: e.env_style_vec,
        semantics,
    })
}

impl From<World> for WorldRepr {
    fn from(w: World) -> Self {
        let envs = w
            .envs
            .into_iter()
            .map(|e| {
                let viewpoints = (0..e.graph.node_count())
                    .map(|i| {
                        let p = e.graph.position(i);
                        ViewpointRepr {
                            id: e.graph.id(i).to_string(),
                            x: p[0],
                            y: p[1],
                            z: p[2],
                            room_id: e.room_of[i],
                        }
                    })
                    .collect();
                let mut edges = Vec::new();
                for a in 0..e.graph.node_count() {
                    for &(b, _) in e.graph.neighbors(a) {
                        if a < b {
                            edges.push((e.graph.id(a).to_string(), e.graph.id(b).to_string()));
                        }
                    }
                }
                let semantics = (0..e.graph.node_count())
                    .map(|i| {
                        (
                            e.graph.id(i).to_string(),
                            e.semantics[i].iter().cloned().collect::<Vec<_>>(),
                        )
                    })
                    .collect();
                EnvRepr {
                    id: e.id,
                    viewpoints,
                    edges,
                    rooms: e.rooms,
                    env_style_vec: e.env_style_vec,
                    semantics,
                }
            })
            .collect();
        WorldRepr {
            schema_version: 1,
            spec: w.spec,
            envs,
            global_mixing: w.global_mixing,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::instruction::{
        render_instruction, room_token, InstructionNoise, FIRST_ROOM_TOKEN, STRAIGHT, UP,
    };
    use super::*;

    fn tiny_spec() -> WorldSpec {
        WorldSpec {
            num_envs: 1,
            rooms_per_env: (2, 2),
            floors: 1,
            viewpoints_per_room: (3, 3),
            semantic_classes: 8,
            room_types: 4,
            style_dim: 4,
            lowlevel_dim: 12,
            seed: 7,
            ..WorldSpec::default()
        }
    }

    #[test]
    fn direction_quadrants_follow_largest_dot_product() {
        assert_eq!(Direction::from_delta(0.0, 1.0), Direction::North);
        assert_eq!(Direction::from_delta(1.0, 0.0), Direction::East);
        assert_eq!(Direction::from_delta(0.6, -1.0), Direction::South);
        assert_eq!(Direction::from_delta(-2.0, 0.5), Direction::West);
        // Exact tie between north and east resolves to the first listed.
        assert_eq!(Direction::from_delta(1.0, 1.0), Direction::North);
    }

    #[test]
    fn spec_validation_rejects_bad_fields() {
        let mut s = WorldSpec::default();
        s.floors = 3;
        assert!(s.validate().is_err());
        let mut s = WorldSpec::default();
        s.neighbor_context_w = 1.5;
        assert!(s.validate().is_err());
        let mut s = WorldSpec::default();
        s.rooms_per_env = (3, 2);
        assert!(s.validate().is_err());
        let mut s = WorldSpec::default();
        s.appearance_noise_sd = f64::NAN;
        assert!(s.validate().is_err());
        assert!(WorldSpec::default().validate().is_ok());
    }

    #[test]
    fn small_world_is_connected_with_valid_rooms() {
        let world = generate_world(&tiny_spec()).unwrap();
        assert_eq!(world.envs.len(), 1);
        let env = &world.envs[0];
        assert_eq!(env.rooms.len(), 2);
        assert_eq!(env.viewpoint_count(), 6);
        assert!(env.graph().is_connected());
        for i in 0..env.viewpoint_count() {
            assert!(env.room_index_of(i) < env.rooms.len());
            assert_eq!(env.graph().id(i), format!("v{i}"));
        }
        for room in &env.rooms {
            assert!(room.room_type < world.spec.room_types);
            assert_eq!(room.region_style_vec.len(), world.spec.style_dim);
            assert!(room.coverage > 0.0 && room.coverage < 1.0);
        }
        assert_eq!(world.global_mixing.w_sem.shape(), (12, 8));
        assert_eq!(world.global_mixing.w_env.shape(), (12, 4));
        assert_eq!(world.global_mixing.w_reg.shape(), (12, 4));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = WorldSpec {
            seed: 11,
            ..WorldSpec::default()
        };
        let a = serde_json::to_string(&generate_world(&spec).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_world(&spec).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn floors_sit_at_three_meter_heights() {
        let spec = WorldSpec {
            num_envs: 1,
            rooms_per_env: (4, 4),
            floors: 2,
            seed: 5,
            ..WorldSpec::default()
        };
        let world = generate_world(&spec).unwrap();
        let env = &world.envs[0];
        let mut seen_floors = [false, false];
        for i in 0..env.viewpoint_count() {
            let room = &env.rooms[env.room_index_of(i)];
            let z = env.graph().position(i)[2];
            assert_eq!(z, room.floor as f64 * FLOOR_HEIGHT);
            seen_floors[room.floor] = true;
        }
        assert!(seen_floors[0] && seen_floors[1]);
    }

    #[test]
    fn semantics_sum_to_blended_coverage() {
        let world = generate_world(&tiny_spec()).unwrap();
        let env = &world.envs[0];
        let ctx_w = world.spec.neighbor_context_w;
        for vp in 0..env.viewpoint_count() {
            for dir in Direction::ALL {
                let s = &env.semantics[vp][dir.index()];
                assert_eq!(s.len(), world.spec.semantic_classes);
                assert!(s.iter().all(|&v| v >= 0.0 && v <= 1.0));
                let own = env.room_index_of(vp);
                let ctx = facing_room(env.graph(), &env.room_of, vp, dir).unwrap_or(own);
                let want = (1.0 - ctx_w) * env.rooms[own].coverage
                    + ctx_w * env.rooms[ctx].coverage;
                let total: f64 = s.iter().sum();
                assert!(
                    (total - want).abs() < 1e-9,
                    "view sum {total} differs from blended coverage {want}"
                );
            }
        }
    }

    #[test]
    fn zero_variation_gives_identical_views_within_a_room() {
        let spec = WorldSpec {
            view_semantic_jitter: 0.0,
            neighbor_context_w: 0.0,
            ..tiny_spec()
        };
        let world = generate_world(&spec).unwrap();
        let env = &world.envs[0];
        for vp in 0..env.viewpoint_count() {
            let room = &env.rooms[env.room_index_of(vp)];
            let first = &env.semantics[vp][0];
            let total: f64 = first.iter().sum();
            assert!((total - room.coverage).abs() < 1e-9);
            for dir in 1..4 {
                assert_eq!(&env.semantics[vp][dir], first);
            }
            // Any other viewpoint of the same room shows the same areas.
            for other in 0..env.viewpoint_count() {
                if env.room_index_of(other) == env.room_index_of(vp) {
                    assert_eq!(&env.semantics[other][0], first);
                }
            }
        }
    }

    #[test]
    fn appearance_matches_formula_without_style_or_noise() {
        let spec = WorldSpec {
            env_style_w: 0.0,
            region_style_w: 0.0,
            appearance_noise_sd: 0.0,
            ..tiny_spec()
        };
        let world = generate_world(&spec).unwrap();
        let env = &world.envs[0];
        let vp = env.graph().id(0).to_string();
        let x = low_level_appearance(&world, "env0", &vp, Direction::East, 321).unwrap();
        assert_eq!(x.len(), spec.lowlevel_dim);
        let s = env.semantics_of(&vp, Direction::East).unwrap();
        let w = &world.global_mixing.w_sem;
        for (d, &got) in x.iter().enumerate() {
            let mut acc = 0.0;
            for (c, &sc) in s.iter().enumerate() {
                acc += w.get(d, c) * sc;
            }
            assert!((got - acc.tanh()).abs() < 1e-12);
            assert!(got > -1.0 && got < 1.0);
        }
    }

    #[test]
    fn appearance_noise_is_reproducible_per_view() {
        let world = generate_world(&tiny_spec()).unwrap();
        let a = low_level_appearance(&world, "env0", "v0", Direction::North, 9).unwrap();
        let b = low_level_appearance(&world, "env0", "v0", Direction::North, 9).unwrap();
        let c = low_level_appearance(&world, "env0", "v0", Direction::North, 10).unwrap();
        let d = low_level_appearance(&world, "env0", "v0", Direction::South, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn style_strengths_do_not_touch_semantics() {
        let plain = tiny_spec();
        let styled = WorldSpec {
            env_style_w: 4.0,
            region_style_w: 2.5,
            appearance_noise_sd: 0.9,
            ..plain.clone()
        };
        let a = generate_world(&plain).unwrap();
        let b = generate_world(&styled).unwrap();
        for (ea, eb) in a.envs.iter().zip(&b.envs) {
            assert_eq!(ea.semantics, eb.semantics);
            assert_eq!(ea.env_style_vec, eb.env_style_vec);
            for i in 0..ea.viewpoint_count() {
                assert_eq!(ea.graph().position(i), eb.graph().position(i));
            }
        }
    }

    #[test]
    fn environment_style_separates_matched_views() {
        let spec = WorldSpec {
            num_envs: 3,
            env_style_w: 3.0,
            region_style_w: 0.0,
            appearance_noise_sd: 0.05,
            seed: 13,
            ..WorldSpec::default()
        };
        let world = generate_world(&spec).unwrap();
        // Collect appearance vectors keyed by the viewing room's type.
        let mut views: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        for (e, env) in world.envs.iter().enumerate() {
            for vp in 0..env.viewpoint_count() {
                let id = env.graph().id(vp).to_string();
                let ty = env.rooms[env.room_index_of(vp)].room_type;
                for dir in Direction::ALL {
                    let x = low_level_appearance(&world, &env.id, &id, dir, 99).unwrap();
                    views.push((e, ty, x));
                }
            }
        }
        let l2 = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let (mut within, mut wn, mut cross, mut cn) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..views.len() {
            for j in i + 1..views.len() {
                if views[i].1 != views[j].1 {
                    continue;
                }
                let d = l2(&views[i].2, &views[j].2);
                if views[i].0 == views[j].0 {
                    within += d;
                    wn += 1;
                } else {
                    cross += d;
                    cn += 1;
                }
            }
        }
        assert!(wn > 0 && cn > 0, "need matched pairs on both sides");
        let within = within / wn as f64;
        let cross = cross / cn as f64;
        assert!(
            cross > within,
            "cross-env distance {cross} should exceed within-env {within}"
        );
    }

    #[test]
    fn world_roundtrips_through_json_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("world.json");
        let world = generate_world(&tiny_spec()).unwrap();
        world.save(&path).unwrap();
        let loaded = World::load(&path).unwrap();
        assert_eq!(
            serde_json::to_string(&world).unwrap(),
            serde_json::to_string(&loaded).unwrap()
        );
        assert_eq!(
            loaded.envs[0].semantics_of("v1", Direction::West).unwrap(),
            world.envs[0].semantics_of("v1", Direction::West).unwrap()
        );
        assert!(loaded.envs[0].graph().is_connected());
    }

    #[test]
    fn episodes_are_shortest_paths_with_costs_matching_search() {
        let spec = WorldSpec {
            num_envs: 2,
            seed: 3,
            ..WorldSpec::default()
        };
        let world = generate_world(&spec).unwrap();
        let eps = sample_episodes(&world, 50, (1, 6), &InstructionNoise::default(), 42).unwrap();
        assert_eq!(eps.len(), 50);
        for (k, ep) in eps.iter().enumerate() {
            assert_eq!(ep.id, format!("ep{k:04}"));
            ep.validate(&world).unwrap();
            let env = world.env(&ep.env_id).unwrap();
            let hops = ep.path.len() - 1;
            assert!((1..=6).contains(&hops));
            // Walk the path and compare its cost with an independent
            // single-source search.
            let mut cost = 0.0;
            for pair in ep.path.windows(2) {
                let a = env.graph().lookup(&pair[0]).unwrap();
                let b = env.graph().lookup(&pair[1]).unwrap();
                let w = env
                    .graph()
                    .neighbors(a)
                    .iter()
                    .find(|&&(n, _)| n == b)
                    .map(|&(_, w)| w)
                    .unwrap();
                cost += w;
            }
            let start = env.graph().lookup(&ep.path[0]).unwrap();
            let goal = env.graph().lookup(&ep.goal).unwrap();
            let best = env.graph().shortest_lengths_from(start)[goal];
            assert!(
                (cost - best).abs() < 1e-9,
                "episode {} cost {cost} is not shortest ({best})",
                ep.id
            );
        }
    }

    #[test]
    fn episode_sampling_is_deterministic_and_bounded() {
        let world = generate_world(&tiny_spec()).unwrap();
        let noise = InstructionNoise::default();
        assert!(sample_episodes(&world, 0, (1, 4), &noise, 5).unwrap().is_empty());
        let a = sample_episodes(&world, 12, (1, 4), &noise, 5).unwrap();
        let b = sample_episodes(&world, 12, (1, 4), &noise, 5).unwrap();
        assert_eq!(a, b);
        let singles = sample_episodes(&world, 8, (1, 1), &noise, 6).unwrap();
        for ep in singles {
            assert_eq!(ep.path.len(), 2);
        }
        assert!(sample_episodes(&world, 1, (0, 4), &noise, 5).is_err());
        // A hop count no shortest path can reach exhausts the retry budget.
        let err = sample_episodes(&world, 1, (500, 600), &noise, 5).unwrap_err();
        assert!(matches!(err, Error::Generation { .. }));
    }

    #[test]
    fn episodes_roundtrip_through_json_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episodes.json");
        let world = generate_world(&tiny_spec()).unwrap();
        let eps = sample_episodes(&world, 5, (1, 3), &InstructionNoise::default(), 1).unwrap();
        save_episodes(&path, &eps).unwrap();
        assert_eq!(load_episodes(&path).unwrap(), eps);
    }

    #[test]
    fn flat_single_hop_renders_straight_then_room() {
        let spec = WorldSpec {
            floors: 1,
            ..tiny_spec()
        };
        let world = generate_world(&spec).unwrap();
        let env = &world.envs[0];
        let a = env.graph().id(0).to_string();
        let (b_idx, _) = env.graph().neighbors(0)[0];
        let b = env.graph().id(b_idx).to_string();
        let noise = InstructionNoise::default();
        let tokens =
            render_instruction(&world, "env0", &[a, b.clone()], &noise, 77).unwrap();
        assert_eq!(tokens.len(), 2);
        assert_eq!(tokens[0], STRAIGHT);
        let ty = env.room_type_of(&b).unwrap();
        assert!((0..3).any(|syn| tokens[1] == room_token(ty, syn)));
        assert!(tokens[1] >= FIRST_ROOM_TOKEN);
    }

    #[test]
    fn stair_hop_renders_up() {
        let spec = WorldSpec {
            num_envs: 1,
            rooms_per_env: (4, 4),
            floors: 2,
            seed: 5,
            ..WorldSpec::default()
        };
        let world = generate_world(&spec).unwrap();
        let env = &world.envs[0];
        let mut stair = None;
        'outer: for a in 0..env.viewpoint_count() {
            for &(b, _) in env.graph().neighbors(a) {
                if env.graph().position(b)[2] - env.graph().position(a)[2] > 0.5 {
                    stair = Some((a, b));
                    break 'outer;
                }
            }
        }
        let (a, b) = stair.expect("a two-floor environment must contain stairs");
        let path = vec![env.graph().id(a).to_string(), env.graph().id(b).to_string()];
        let tokens =
            render_instruction(&world, "env0", &path, &InstructionNoise::default(), 8).unwrap();
        assert_eq!(tokens[0], UP);
    }

    #[test]
    fn noiseless_single_synonym_rendering_ignores_seed() {
        let world = generate_world(&tiny_spec()).unwrap();
        let eps = sample_episodes(&world, 3, (2, 4), &InstructionNoise::default(), 2).unwrap();
        let noise = InstructionNoise {
            drop_rate: 0.0,
            insert_rate: 0.0,
            synonyms_used: 1,
        };
        for ep in &eps {
            let x = render_instruction(&world, &ep.env_id, &ep.path, &noise, 100).unwrap();
            let y = render_instruction(&world, &ep.env_id, &ep.path, &noise, 200).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn rendering_is_deterministic_in_seed() {
        let world = generate_world(&tiny_spec()).unwrap();
        let eps = sample_episodes(&world, 4, (2, 5), &InstructionNoise::default(), 9).unwrap();
        let noise = InstructionNoise {
            drop_rate: 0.2,
            insert_rate: 0.2,
            synonyms_used: 3,
        };
        for ep in &eps {
            let x = render_instruction(&world, &ep.env_id, &ep.path, &noise, 31).unwrap();
            let y = render_instruction(&world, &ep.env_id, &ep.path, &noise, 31).unwrap();
            assert_eq!(x, y);
            assert!(!x.is_empty());
        }
    }
}
