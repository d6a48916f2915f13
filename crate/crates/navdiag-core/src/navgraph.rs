//! Navigation graphs, exact shortest-path distances, and structural
//! re-splitting of episodes by a coordinate cut.
//!
//! A [`NavGraph`] is an undirected weighted graph over named viewpoints
//! with 3D positions. Distances come from Dijkstra's algorithm and are
//! exact sums of edge weights; unreachable viewpoints get `+∞`. The
//! structural split draws a plane through one coordinate axis, keeps
//! episodes that stay strictly on the near side as the new training set,
//! and sorts every other episode by whether it still touches a training
//! path.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected weighted graph over named viewpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct NavGraph {
    ids: Vec<String>,
    index: BTreeMap<String, usize>,
    positions: Vec<[f64; 3]>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl Default for NavGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl NavGraph {
    pub fn new() -> Self {
        NavGraph {
            ids: Vec::new(),
            index: BTreeMap::new(),
            positions: Vec::new(),
            adjacency: Vec::new(),
        }
    }

    pub fn add_node(&mut self, id: &str, position: [f64; 3]) -> Result<usize> {
        if self.index.contains_key(id) {
            return Err(Error::Validation(format!("duplicate viewpoint id {id:?}")));
        }
        if !position.iter().all(|c| c.is_finite()) {
            return Err(Error::Validation(format!(
                "viewpoint {id:?} has a non-finite position"
            )));
        }
        let idx = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), idx);
        self.positions.push(position);
        self.adjacency.push(Vec::new());
        Ok(idx)
    }

    /// Add an undirected edge weighted by Euclidean distance between the
    /// endpoint positions.
    pub fn add_edge(&mut self, a: &str, b: &str) -> Result<()> {
        let (ia, ib) = (self.lookup(a)?, self.lookup(b)?);
        let w = euclidean(self.positions[ia], self.positions[ib]);
        self.insert_edge(ia, ib, w)
    }

    /// Add an undirected edge with an explicit positive weight.
    pub fn add_edge_weighted(&mut self, a: &str, b: &str, weight: f64) -> Result<()> {
        let (ia, ib) = (self.lookup(a)?, self.lookup(b)?);
        self.insert_edge(ia, ib, weight)
    }

    fn insert_edge(&mut self, a: usize, b: usize, weight: f64) -> Result<()> {
        if a == b {
            return Err(Error::Validation(format!(
                "self-loop on viewpoint {:?}",
                self.ids[a]
            )));
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::Validation(format!(
                "edge {:?}–{:?} must have a positive finite weight, got {weight}",
                self.ids[a], self.ids[b]
            )));
        }
        if self.adjacency[a].iter().any(|&(n, _)| n == b) {
            return Err(Error::Validation(format!(
                "duplicate edge {:?}–{:?}",
                self.ids[a], self.ids[b]
            )));
        }
        let pos_a = self.adjacency[a].partition_point(|&(n, _)| n < b);
        self.adjacency[a].insert(pos_a, (b, weight));
        let pos_b = self.adjacency[b].partition_point(|&(n, _)| n < a);
        self.adjacency[b].insert(pos_b, (a, weight));
        Ok(())
    }

    pub fn lookup(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("unknown viewpoint {id:?}")))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn id(&self, idx: usize) -> &str {
        &self.ids[idx]
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        self.positions[idx]
    }

    pub fn position_of(&self, id: &str) -> Result<[f64; 3]> {
        Ok(self.positions[self.lookup(id)?])
    }

    /// Neighbors of a node, sorted by neighbor index.
    pub fn neighbors(&self, idx: usize) -> &[(usize, f64)] {
        &self.adjacency[idx]
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_connected(&self) -> bool {
        if self.ids.is_empty() {
            return true;
        }
        let d = self.shortest_lengths_from(0);
        d.iter().all(|v| v.is_finite())
    }

    /// Single-source exact shortest path lengths, indexed by node.
    pub fn shortest_lengths_from(&self, source: usize) -> Vec<f64> {
        self.dijkstra(std::iter::once(source))
    }

    /// Single-source shortest path lengths by viewpoint id.
    pub fn shortest_lengths(&self, source: &str) -> Result<BTreeMap<String, f64>> {
        let dist = self.shortest_lengths_from(self.lookup(source)?);
        Ok(self
            .ids
            .iter()
            .cloned()
            .zip(dist)
            .collect())
    }

    /// Shortest distance to the nearest of several sources, indexed by
    /// node. Unreachable nodes get `+∞`.
    pub fn dijkstra<I: IntoIterator<Item = usize>>(&self, sources: I) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.ids.len()];
        let mut heap = BinaryHeap::new();
        for s in sources {
            if dist[s] > 0.0 {
                dist[s] = 0.0;
                heap.push(HeapEntry { dist: 0.0, node: s });
            }
        }
        while let Some(HeapEntry { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            for &(next, w) in &self.adjacency[node] {
                let nd = d + w;
                if nd < dist[next] {
                    dist[next] = nd;
                    heap.push(HeapEntry { dist: nd, node: next });
                }
            }
        }
        dist
    }

    /// One shortest path from `source` to `goal` as node indices, or
    /// `None` when `goal` is unreachable. Deterministic: predecessors are
    /// only replaced on strict improvement and the heap breaks distance
    /// ties by node index.
    pub fn shortest_path(&self, source: usize, goal: usize) -> Option<Vec<usize>> {
        let mut dist = vec![f64::INFINITY; self.ids.len()];
        let mut prev = vec![usize::MAX; self.ids.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(HeapEntry {
            dist: 0.0,
            node: source,
        });
        while let Some(HeapEntry { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            if node == goal {
                break;
            }
            for &(next, w) in &self.adjacency[node] {
                let nd = d + w;
                if nd < dist[next] {
                    dist[next] = nd;
                    prev[next] = node;
                    heap.push(HeapEntry { dist: nd, node: next });
                }
            }
        }
        if dist[goal].is_infinite() {
            return None;
        }
        let mut path = vec![goal];
        let mut at = goal;
        while at != source {
            at = prev[at];
            path.push(at);
        }
        path.reverse();
        Some(path)
    }

    /// Disjoint union of several graphs, with every viewpoint renamed to
    /// `"{prefix}:{id}"`. No edges are added between parts, so distances
    /// across parts are `+∞`.
    pub fn disjoint_union(parts: &[(String, &NavGraph)]) -> Result<NavGraph> {
        let mut out = NavGraph::new();
        for (prefix, g) in parts {
            for (idx, id) in g.ids.iter().enumerate() {
                out.add_node(&format!("{prefix}:{id}"), g.positions[idx])?;
            }
            for (a, nbrs) in g.adjacency.iter().enumerate() {
                for &(b, w) in nbrs {
                    if a < b {
                        out.add_edge_weighted(
                            &format!("{prefix}:{}", g.ids[a]),
                            &format!("{prefix}:{}", g.ids[b]),
                            w,
                        )?;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn euclidean(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Min-heap entry ordered by distance, then node index.
#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    schema_version: u32,
    nodes: Vec<NodeRepr>,
    edges: Vec<EdgeRepr>,
}

#[derive(Serialize, Deserialize)]
struct NodeRepr {
    id: String,
    position: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct EdgeRepr {
    a: String,
    b: String,
    weight: f64,
}

impl TryFrom<GraphRepr> for NavGraph {
    type Error = String;
    fn try_from(r: GraphRepr) -> std::result::Result<Self, String> {
        if r.schema_version != 1 {
            return Err(format!("unsupported graph schema {}", r.schema_version));
        }
        let mut g = NavGraph::new();
        for n in &r.nodes {
            g.add_node(&n.id, n.position).map_err(|e| e.to_string())?;
        }
        for e in &r.edges {
            g.add_edge_weighted(&e.a, &e.b, e.weight)
                .map_err(|e| e.to_string())?;
        }
        Ok(g)
    }
}

impl From<NavGraph> for GraphRepr {
    fn from(g: NavGraph) -> Self {
        let nodes = g
            .ids
            .iter()
            .zip(&g.positions)
            .map(|(id, &position)| NodeRepr {
                id: id.clone(),
                position,
            })
            .collect();
        let mut edges = Vec::new();
        for (a, nbrs) in g.adjacency.iter().enumerate() {
            for &(b, weight) in nbrs {
                if a < b {
                    edges.push(EdgeRepr {
                        a: g.ids[a].clone(),
                        b: g.ids[b].clone(),
                        weight,
                    });
                }
            }
        }
        GraphRepr {
            schema_version: 1,
            nodes,
            edges,
        }
    }
}

/// Coordinate axis for the structural split plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Z,
}

impl Axis {
    fn coord(&self, position: [f64; 3]) -> f64 {
        match self {
            Axis::X => position[0],
            Axis::Z => position[2],
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Z => "z",
        })
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::Validation(format!(
                "axis must be x or z, got {other:?}"
            ))),
        }
    }
}

/// Where an episode sat before re-splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginalRole {
    /// Training episode of the original benchmark.
    Train,
    /// Validation episode in a training environment.
    ValSeen,
    /// Episode in a held-out environment.
    EnvUnseen,
}

/// Category after the structural re-split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitCategory {
    Train,
    PathSeen,
    PathUnseen,
    EnvUnseen,
}

impl fmt::Display for SplitCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitCategory::Train => "train",
            SplitCategory::PathSeen => "path_seen",
            SplitCategory::PathUnseen => "path_unseen",
            SplitCategory::EnvUnseen => "env_unseen",
        })
    }
}

/// The slice of an episode the splitter needs: its id, the viewpoints on
/// its path, and its original role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEpisode {
    pub id: String,
    pub viewpoints: Vec<String>,
    pub role: OriginalRole,
}

/// Result of a structural split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub axis: Axis,
    pub cut: f64,
    /// Every viewpoint strictly on the training side of the cut.
    pub training_viewpoints: BTreeSet<String>,
    /// Union of viewpoints over episodes categorized TRAIN.
    pub train_path_viewpoints: BTreeSet<String>,
    pub split_items: BTreeMap<String, SplitCategory>,
}

impl SplitAssignment {
    pub fn category(&self, episode_id: &str) -> Result<SplitCategory> {
        self.split_items
            .get(episode_id)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("episode {episode_id:?} not in split")))
    }

    pub fn count(&self, category: SplitCategory) -> usize {
        self.split_items
            .values()
            .filter(|&&c| c == category)
            .count()
    }
}

/// Re-split episodes by a coordinate cut.
///
/// Viewpoints with coordinate strictly below `cut` form the training
/// side (a coordinate equal to the cut counts as non-training). Original
/// training episodes whose paths stay entirely on the training side
/// become TRAIN; every other episode from a training environment becomes
/// PATH_SEEN when it shares at least one viewpoint with a TRAIN path and
/// PATH_UNSEEN otherwise; held-out-environment episodes stay ENV_UNSEEN.
pub fn structural_split(
    graph: &NavGraph,
    episodes: &[SplitEpisode],
    axis: Axis,
    cut: f64,
) -> Result<SplitAssignment> {
    let mut training_viewpoints = BTreeSet::new();
    for (idx, id) in graph.ids.iter().enumerate() {
        if axis.coord(graph.positions[idx]) < cut {
            training_viewpoints.insert(id.clone());
        }
    }
    if training_viewpoints.is_empty() {
        return Err(Error::Split(format!(
            "cut {cut} on axis {axis} leaves no viewpoint on the training side"
        )));
    }

    let mut seen_ids = BTreeSet::new();
    for ep in episodes {
        if ep.viewpoints.is_empty() {
            return Err(Error::Validation(format!(
                "episode {:?} has an empty path",
                ep.id
            )));
        }
        if !seen_ids.insert(ep.id.as_str()) {
            return Err(Error::Validation(format!(
                "duplicate episode id {:?}",
                ep.id
            )));
        }
        for v in &ep.viewpoints {
            graph.lookup(v)?;
        }
    }

    let is_train = |ep: &SplitEpisode| {
        ep.role == OriginalRole::Train
            && ep
                .viewpoints
                .iter()
                .all(|v| training_viewpoints.contains(v))
    };

    let mut train_path_viewpoints = BTreeSet::new();
    for ep in episodes.iter().filter(|ep| is_train(ep)) {
        train_path_viewpoints.extend(ep.viewpoints.iter().cloned());
    }

    let mut split_items = BTreeMap::new();
    for ep in episodes {
        let category = if ep.role == OriginalRole::EnvUnseen {
            SplitCategory::EnvUnseen
        } else if is_train(ep) {
            SplitCategory::Train
        } else if ep
            .viewpoints
            .iter()
            .any(|v| train_path_viewpoints.contains(v))
        {
            SplitCategory::PathSeen
        } else {
            SplitCategory::PathUnseen
        };
        split_items.insert(ep.id.clone(), category);
    }

    Ok(SplitAssignment {
        axis,
        cut,
        training_viewpoints,
        train_path_viewpoints,
        split_items,
    })
}

/// Cut placing approximately `target_fraction` of viewpoints on the
/// training side: the midpoint of the sorted-coordinate gap at that
/// quantile (or past the extremes for fractions that round to all or
/// nothing).
pub fn choose_cut(graph: &NavGraph, axis: Axis, target_fraction: f64) -> Result<f64> {
    if !(target_fraction > 0.0 && target_fraction < 1.0) {
        return Err(Error::Validation(format!(
            "target fraction must lie strictly between 0 and 1, got {target_fraction}"
        )));
    }
    if graph.node_count() == 0 {
        return Err(Error::Validation("graph has no viewpoints".into()));
    }
    let mut coords: Vec<f64> = graph
        .positions
        .iter()
        .map(|&p| axis.coord(p))
        .collect();
    coords.sort_by(f64::total_cmp);
    let n = coords.len();
    let k = (target_fraction * n as f64).round() as usize;
    Ok(if k == 0 {
        coords[0] - 1.0
    } else if k >= n {
        coords[n - 1] + 1.0
    } else {
        (coords[k - 1] + coords[k]) / 2.0
    })
}

/// Minimal graph distance from `v` to any viewpoint on a training path.
pub fn dis_viewpoint(v: &str, training: &[SplitEpisode], graph: &NavGraph) -> Result<f64> {
    let sources = training_sources(training, graph)?;
    let dist = graph.dijkstra(sources);
    Ok(dist[graph.lookup(v)?])
}

/// Maximal [`dis_viewpoint`] over the viewpoints of one path.
pub fn dis_path(path: &[String], training: &[SplitEpisode], graph: &NavGraph) -> Result<f64> {
    if path.is_empty() {
        return Err(Error::Validation("empty path".into()));
    }
    let sources = training_sources(training, graph)?;
    let dist = graph.dijkstra(sources);
    let mut worst = 0.0f64;
    for v in path {
        worst = worst.max(dist[graph.lookup(v)?]);
    }
    Ok(worst)
}

fn training_sources(training: &[SplitEpisode], graph: &NavGraph) -> Result<Vec<usize>> {
    if training.is_empty() {
        return Err(Error::Domain(
            "viewpoint distance needs a nonempty training set".into(),
        ));
    }
    let mut sources = BTreeSet::new();
    for ep in training {
        for v in &ep.viewpoints {
            sources.insert(graph.lookup(v)?);
        }
    }
    Ok(sources.into_iter().collect())
}

/// Cached distances: `dis_viewpoint` for every graph node and `dis_path`
/// for every episode. Unreachable entries are `+∞` in memory and `null`
/// in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct DistanceTable {
    pub per_viewpoint: BTreeMap<String, f64>,
    pub per_episode: BTreeMap<String, f64>,
}

impl DistanceTable {
    /// Multi-source Dijkstra from all training-path viewpoints, then a
    /// max over each episode's path.
    pub fn build(
        graph: &NavGraph,
        training: &[SplitEpisode],
        episodes: &[SplitEpisode],
    ) -> Result<Self> {
        let sources = training_sources(training, graph)?;
        let dist = graph.dijkstra(sources);
        let per_viewpoint: BTreeMap<String, f64> = graph
            .ids
            .iter()
            .cloned()
            .zip(dist.iter().copied())
            .collect();
        let mut per_episode = BTreeMap::new();
        for ep in episodes {
            if ep.viewpoints.is_empty() {
                return Err(Error::Validation(format!(
                    "episode {:?} has an empty path",
                    ep.id
                )));
            }
            let mut worst = 0.0f64;
            for v in &ep.viewpoints {
                worst = worst.max(dist[graph.lookup(v)?]);
            }
            per_episode.insert(ep.id.clone(), worst);
        }
        Ok(DistanceTable {
            per_viewpoint,
            per_episode,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    schema_version: u32,
    per_viewpoint: BTreeMap<String, Option<f64>>,
    per_episode: BTreeMap<String, Option<f64>>,
}

fn pack(map: &BTreeMap<String, f64>) -> BTreeMap<String, Option<f64>> {
    map.iter()
        .map(|(k, &v)| (k.clone(), v.is_finite().then_some(v)))
        .collect()
}

fn unpack(map: BTreeMap<String, Option<f64>>) -> BTreeMap<String, f64> {
    map.into_iter()
        .map(|(k, v)| (k, v.unwrap_or(f64::INFINITY)))
        .collect()
}

impl TryFrom<TableRepr> for DistanceTable {
    type Error = String;
    fn try_from(r: TableRepr) -> std::result::Result<Self, String> {
        if r.schema_version != 1 {
            return Err(format!("unsupported table schema {}", r.schema_version));
        }
        Ok(DistanceTable {
            per_viewpoint: unpack(r.per_viewpoint),
            per_episode: unpack(r.per_episode),
        })
    }
}

impl From<DistanceTable> for TableRepr {
    fn from(t: DistanceTable) -> Self {
        TableRepr {
            schema_version: 1,
            per_viewpoint: pack(&t.per_viewpoint),
            per_episode: pack(&t.per_episode),
        }
    }
}
