//! Directed road graph (road sections as vertices, crossings as edges) and
//! order-slot extraction around a target vertex.
//!
//! Vertex ids are kept in sorted order, so the internal index order equals
//! the lexicographic id order. Every tie-break that mentions "lexicographic"
//! reduces to comparing indices.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a vertex inside a [`TrafficGraph`].
pub type VertexIdx = usize;

/// Sentinel index used for padded slot rows.
pub const PAD: VertexIdx = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Traffic flowing into the target.
    Upstream,
    /// Traffic flowing out of the target.
    Downstream,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Upstream => "up",
            Direction::Downstream => "down",
        }
    }
}

/// Time-invariant attributes of one road section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexAttrs {
    /// Discretized speed-limit class in `1..=4`.
    pub limit_level: u8,
    /// Columns the loader does not interpret, kept verbatim.
    pub extra: BTreeMap<String, String>,
}

impl Default for VertexAttrs {
    fn default() -> Self {
        VertexAttrs {
            limit_level: 1,
            extra: BTreeMap::new(),
        }
    }
}

/// One row of the attribute file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttrRecord {
    pub vertex: String,
    pub attrs: VertexAttrs,
}

impl AttrRecord {
    pub fn new(vertex: impl Into<String>, limit_level: u8) -> Self {
        AttrRecord {
            vertex: vertex.into(),
            attrs: VertexAttrs {
                limit_level,
                extra: BTreeMap::new(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficGraph {
    ids: Vec<String>,
    index: HashMap<String, VertexIdx>,
    succ: Vec<Vec<VertexIdx>>,
    pred: Vec<Vec<VertexIdx>>,
    attrs: Vec<VertexAttrs>,
}

/// Builds a validated [`TrafficGraph`] from edge and attribute records.
///
/// In strict mode every edge endpoint must also appear in `attr_records`;
/// otherwise endpoints are declared implicitly with default attributes.
/// Duplicate edges collapse into one.
pub fn load_graph(
    edge_records: &[(String, String)],
    attr_records: &[AttrRecord],
    strict: bool,
) -> Result<TrafficGraph> {
    let mut declared: BTreeMap<String, VertexAttrs> = BTreeMap::new();
    for rec in attr_records {
        if !(1..=4).contains(&rec.attrs.limit_level) {
            return Err(Error::InvalidArgument(format!(
                "limit_level {} of vertex {} outside 1..=4",
                rec.attrs.limit_level, rec.vertex
            )));
        }
        match declared.get(&rec.vertex) {
            Some(prev) if prev != &rec.attrs => {
                return Err(Error::ConflictingAttributes(rec.vertex.clone()))
            }
            _ => {
                declared.insert(rec.vertex.clone(), rec.attrs.clone());
            }
        }
    }

    let mut edge_set: BTreeSet<(String, String)> = BTreeSet::new();
    for (from, to) in edge_records {
        if from == to {
            return Err(Error::SelfLoop(from.clone()));
        }
        if strict {
            for end in [from, to] {
                if !declared.contains_key(end) {
                    return Err(Error::UndeclaredVertex {
                        from: from.clone(),
                        to: to.clone(),
                        missing: end.clone(),
                    });
                }
            }
        }
        edge_set.insert((from.clone(), to.clone()));
    }
    for (from, to) in &edge_set {
        declared.entry(from.clone()).or_default();
        declared.entry(to.clone()).or_default();
    }

    let ids: Vec<String> = declared.keys().cloned().collect();
    let index: HashMap<String, VertexIdx> =
        ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
    let attrs: Vec<VertexAttrs> = declared.into_values().collect();
    let mut succ = vec![Vec::new(); ids.len()];
    let mut pred = vec![Vec::new(); ids.len()];
    // BTreeSet iteration keeps both adjacency lists sorted.
    for (from, to) in &edge_set {
        let (u, v) = (index[from], index[to]);
        succ[u].push(v);
        pred[v].push(u);
    }
    for list in pred.iter_mut() {
        list.sort_unstable();
    }

    Ok(TrafficGraph {
        ids,
        index,
        succ,
        pred,
        attrs,
    })
}

impl TrafficGraph {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.succ.iter().map(Vec::len).sum()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, v: VertexIdx) -> &str {
        &self.ids[v]
    }

    pub fn index_of(&self, id: &str) -> Result<VertexIdx> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownVertex(id.to_string()))
    }

    pub fn attrs(&self, v: VertexIdx) -> &VertexAttrs {
        &self.attrs[v]
    }

    pub fn limit_level(&self, v: VertexIdx) -> u8 {
        self.attrs[v].limit_level
    }

    /// Vertices `v` receives traffic from (edges `u -> v`).
    pub fn predecessors(&self, v: VertexIdx) -> &[VertexIdx] {
        &self.pred[v]
    }

    /// Vertices `v` sends traffic to (edges `v -> w`).
    pub fn successors(&self, v: VertexIdx) -> &[VertexIdx] {
        &self.succ[v]
    }

    pub fn has_edge(&self, u: VertexIdx, v: VertexIdx) -> bool {
        self.succ[u].binary_search(&v).is_ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = (VertexIdx, VertexIdx)> + '_ {
        self.succ
            .iter()
            .enumerate()
            .flat_map(|(u, vs)| vs.iter().map(move |&v| (u, v)))
    }

    fn neighbors(&self, v: VertexIdx, direction: Direction) -> &[VertexIdx] {
        match direction {
            Direction::Upstream => &self.pred[v],
            Direction::Downstream => &self.succ[v],
        }
    }

    /// Vertices whose shortest directed distance from (downstream) or to
    /// (upstream) `target` is exactly `order`.
    pub fn order_neighbors(
        &self,
        target: VertexIdx,
        order: usize,
        direction: Direction,
    ) -> Vec<VertexIdx> {
        let dist = self.bfs_distances(target, order, direction);
        let mut out: Vec<VertexIdx> = dist
            .into_iter()
            .filter(|&(_, d)| d == order)
            .map(|(v, _)| v)
            .collect();
        out.sort_unstable();
        out
    }

    fn bfs_distances(
        &self,
        target: VertexIdx,
        radius: usize,
        direction: Direction,
    ) -> HashMap<VertexIdx, usize> {
        let mut dist = HashMap::new();
        dist.insert(target, 0);
        let mut queue = VecDeque::from([target]);
        while let Some(v) = queue.pop_front() {
            let d = dist[&v];
            if d == radius {
                continue;
            }
            for &w in self.neighbors(v, direction) {
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                    e.insert(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// All vertices within `radius` hops of `target`, following edges
    /// upstream or downstream (directions are not mixed along a walk).
    pub fn perceptive_neighborhood(
        &self,
        target: VertexIdx,
        radius: usize,
    ) -> Result<BTreeSet<VertexIdx>> {
        if target >= self.len() {
            return Err(Error::UnknownVertex(format!("#{target}")));
        }
        let mut out = BTreeSet::new();
        for dir in [Direction::Upstream, Direction::Downstream] {
            out.extend(self.bfs_distances(target, radius, dir).into_keys());
        }
        Ok(out)
    }

    /// Enumerates the directed paths of length `radius` that end at
    /// (upstream) or start from (downstream) `target`.
    ///
    /// Row `i`, column `j` holds the order-`j+1` vertex of path `i`. Paths are
    /// simple and never revisit the target. A path that dead-ends before
    /// `radius` is extended by repeating its last vertex. Rows come out in
    /// lexicographic order of their vertex sequences; at most `max_paths`
    /// are kept and the remainder of the `max_paths` rows is padding.
    pub fn enumerate_slot_paths(
        &self,
        target: VertexIdx,
        radius: usize,
        direction: Direction,
        max_paths: usize,
    ) -> Result<SlotPaths> {
        if target >= self.len() {
            return Err(Error::UnknownVertex(format!("#{target}")));
        }
        if radius == 0 || max_paths == 0 {
            return Err(Error::InvalidArgument(
                "radius and max_paths must be at least 1".into(),
            ));
        }
        let mut rows: Vec<Vec<VertexIdx>> = Vec::new();
        let mut path = Vec::with_capacity(radius);
        self.dfs_paths(target, target, radius, direction, max_paths, &mut path, &mut rows);

        let mut paths = Vec::with_capacity(max_paths * radius);
        let mut row_mask = Vec::with_capacity(max_paths);
        for row in &rows {
            paths.extend_from_slice(row);
            row_mask.push(true);
        }
        for _ in rows.len()..max_paths {
            paths.extend(std::iter::repeat(PAD).take(radius));
            row_mask.push(false);
        }
        Ok(SlotPaths {
            direction,
            radius,
            paths,
            row_mask,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn dfs_paths(
        &self,
        target: VertexIdx,
        last: VertexIdx,
        radius: usize,
        direction: Direction,
        max_paths: usize,
        path: &mut Vec<VertexIdx>,
        rows: &mut Vec<Vec<VertexIdx>>,
    ) {
        if rows.len() >= max_paths {
            return;
        }
        if path.len() == radius {
            rows.push(path.clone());
            return;
        }
        let mut extended = false;
        for &next in self.neighbors(last, direction) {
            if next == target || path.contains(&next) {
                continue;
            }
            extended = true;
            path.push(next);
            self.dfs_paths(target, next, radius, direction, max_paths, path, rows);
            path.pop();
            if rows.len() >= max_paths {
                return;
            }
        }
        if !extended && !path.is_empty() {
            let mut row = path.clone();
            row.resize(radius, last);
            rows.push(row);
        }
    }
}

/// Path-aligned order slots on one side of a target vertex.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SlotPaths {
    pub direction: Direction,
    pub radius: usize,
    /// `rows × radius`, row-major.
    pub paths: Vec<VertexIdx>,
    pub row_mask: Vec<bool>,
}

impl SlotPaths {
    pub fn rows(&self) -> usize {
        self.row_mask.len()
    }

    pub fn row(&self, i: usize) -> &[VertexIdx] {
        &self.paths[i * self.radius..(i + 1) * self.radius]
    }

    /// Vertices of the order-`order` slot (1-based), one entry per row.
    pub fn column(&self, order: usize) -> Vec<VertexIdx> {
        assert!(order >= 1 && order <= self.radius);
        (0..self.rows()).map(|i| self.row(i)[order - 1]).collect()
    }

    pub fn valid_rows(&self) -> usize {
        self.row_mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Deserialize)]
struct EdgeRow {
    from: String,
    to: String,
}

pub fn read_edges_csv(path: &Path) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: EdgeRow = row?;
        out.push((row.from, row.to));
    }
    Ok(out)
}

/// Reads `vertex,limit_level[,extra...]`; extra columns become opaque attributes.
pub fn read_attrs_csv(path: &Path) -> Result<Vec<AttrRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("vertex") || headers.get(1) != Some("limit_level") {
        return Err(Error::Malformed(format!(
            "attribute header must start with vertex,limit_level: {}",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let vertex = rec.get(0).unwrap_or_default().to_string();
        let level: u8 = rec
            .get(1)
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|_| Error::Malformed(format!("bad limit_level for {vertex}")))?;
        let extra = headers
            .iter()
            .zip(rec.iter())
            .skip(2)
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        out.push(AttrRecord {
            vertex,
            attrs: VertexAttrs {
                limit_level: level,
                extra,
            },
        });
    }
    Ok(out)
}

pub fn write_edges_csv(graph: &TrafficGraph, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["from", "to"])?;
    for (u, v) in graph.edges() {
        w.write_record([graph.id(u), graph.id(v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_attrs_csv(graph: &TrafficGraph, path: &Path) -> Result<()> {
    let extra_keys: BTreeSet<&String> = graph
        .attrs
        .iter()
        .flat_map(|a| a.extra.keys())
        .collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["vertex".to_string(), "limit_level".to_string()];
    header.extend(extra_keys.iter().map(|k| k.to_string()));
    w.write_record(&header)?;
    for v in 0..graph.len() {
        let a = graph.attrs(v);
        let mut row = vec![graph.id(v).to_string(), a.limit_level.to_string()];
        row.extend(
            extra_keys
                .iter()
                .map(|k| a.extra.get(*k).cloned().unwrap_or_default()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads the edge file plus an optional attribute file.
pub fn load_graph_files(edges: &Path, attrs: Option<&Path>, strict: bool) -> Result<TrafficGraph> {
    for p in std::iter::once(edges).chain(attrs) {
        if !p.exists() {
            return Err(Error::MissingPath(p.to_path_buf()));
        }
    }
    let edge_records = read_edges_csv(edges)?;
    let attr_records = match attrs {
        Some(p) => read_attrs_csv(p)?,
        None => Vec::new(),
    };
    load_graph(&edge_records, &attr_records, strict)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// The six-road example: L4 feeds L3, which splits into L1 and L2;
    /// L5 feeds L4 and is fed by L6 and L2.
    pub fn fig3() -> TrafficGraph {
        let edges: Vec<(String, String)> = [
            ("L5", "L4"),
            ("L6", "L5"),
            ("L2", "L5"),
            ("L4", "L3"),
            ("L3", "L1"),
            ("L3", "L2"),
        ]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        load_graph(&edges, &[], false).unwrap()
    }
}
