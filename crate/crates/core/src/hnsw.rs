//! Hierarchical navigable small-world graph over unit-normalized vectors.
//!
//! Similarity is the dot product of pre-normalized vectors (cosine). Layer
//! assignment uses a ChaCha8 stream seeded from [`HnswParams::seed`], and every
//! internal ordering breaks ties on node index, so the same insert order and
//! parameters always produce the same graph and the same ranked output.
//!
//! Each node also keeps one undirected "tree" edge to a parent on every layer
//! it lives on. Tree edges are exempt from pruning and a parent never holds
//! more tree edges than its degree cap, so every layer stays strongly
//! connected without breaking the `m` / `2m` degree bounds.
//!
//! The graph only chooses *which* candidates are returned; every reported
//! score is computed from the stored vectors.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{dot, EmbeddingVector, MuragId};
use crate::snapshot::{self, BodyReader, BodyWriter, SnapshotError};

const MAGIC: &[u8; 8] = b"CURHNSW\0";
const FORMAT_VERSION: u32 = 1;
const MAX_LEVEL: usize = 16;
const NO_ENTRY: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Maximum neighbors per node on layers above 0. Layer 0 allows `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            ef_search: 100,
            seed: 0x5eed_cafe,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<(), HnswError> {
        if self.m < 2 {
            return Err(HnswError::InvalidParams("m must be >= 2".into()));
        }
        if self.ef_construction < self.m {
            return Err(HnswError::InvalidParams("ef_construction must be >= m".into()));
        }
        if self.ef_search < 1 {
            return Err(HnswError::InvalidParams("ef_search must be >= 1".into()));
        }
        if u32::try_from(self.ef_construction).is_err() || u32::try_from(self.ef_search).is_err() {
            return Err(HnswError::InvalidParams("ef values must fit in u32".into()));
        }
        Ok(())
    }

    fn max_degree(&self, level: usize) -> usize {
        if level == 0 {
            self.m * 2
        } else {
            self.m
        }
    }
}

/// A ranked search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: MuragId,
    pub score: f64,
}

/// Sorts hits by score descending, ties by id ascending.
pub fn rank_hits(hits: &mut [SearchHit]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
}

#[derive(Debug, thiserror::Error)]
pub enum HnswError {
    #[error("id {0} is already present in the index")]
    DuplicateId(MuragId),
    #[error("vector dimension {found} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be positive")]
    ZeroK,
    #[error("invalid HNSW parameters: {0}")]
    InvalidParams(String),
    #[error("index is full")]
    Full,
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

#[derive(Debug, Clone, Copy)]
struct Scored {
    sim: f64,
    node: u32,
}

// Greater means closer to the query; equal similarity prefers the lower node.
impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scored {}

#[derive(Debug, Clone)]
pub struct HnswIndex {
    dim: usize,
    params: HnswParams,
    ids: Vec<MuragId>,
    lookup: HashMap<MuragId, u32>,
    vectors: Vec<f32>,
    // links[node][level] for level in 0..=node's top level
    links: Vec<Vec<Vec<u32>>>,
    // Spanning-tree parent per node and level (NO_ENTRY for the first node on
    // a layer). Tree edges are kept in both directions and never pruned, which
    // keeps every layer strongly connected.
    parents: Vec<Vec<u32>>,
    children: Vec<Vec<u32>>,
    entry: Option<u32>,
    max_level: usize,
    rng: ChaCha8Rng,
}

impl HnswIndex {
    pub fn new(dim: usize, params: HnswParams) -> Result<Self, HnswError> {
        params.validate()?;
        if dim == 0 {
            return Err(HnswError::InvalidParams("dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            params,
            ids: Vec::new(),
            lookup: HashMap::new(),
            vectors: Vec::new(),
            links: Vec::new(),
            parents: Vec::new(),
            children: Vec::new(),
            entry: None,
            max_level: 0,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &MuragId) -> bool {
        self.lookup.contains_key(id)
    }

    pub fn ids(&self) -> &[MuragId] {
        &self.ids
    }

    pub fn vector(&self, id: &MuragId) -> Option<&[f32]> {
        self.lookup.get(id).map(|&n| self.vec_of(n))
    }

    fn vec_of(&self, node: u32) -> &[f32] {
        let start = node as usize * self.dim;
        &self.vectors[start..start + self.dim]
    }

    fn sim_to(&self, query: &[f32], node: u32) -> Scored {
        Scored {
            sim: dot(query, self.vec_of(node)),
            node,
        }
    }

    fn random_level(&mut self) -> usize {
        let ml = 1.0 / (self.params.m as f64).ln();
        // uniform on (0, 1]
        let u: f64 = 1.0 - self.rng.random::<f64>();
        ((-u.ln() * ml).floor() as usize).min(MAX_LEVEL)
    }

    pub fn insert(&mut self, id: MuragId, vector: &EmbeddingVector) -> Result<(), HnswError> {
        if vector.dim() != self.dim {
            return Err(HnswError::DimensionMismatch {
                expected: self.dim,
                found: vector.dim(),
            });
        }
        if self.lookup.contains_key(&id) {
            return Err(HnswError::DuplicateId(id));
        }
        let node = u32::try_from(self.ids.len())
            .ok()
            .filter(|&n| n != NO_ENTRY)
            .ok_or(HnswError::Full)?;
        let level = self.random_level();

        self.ids.push(id.clone());
        self.lookup.insert(id, node);
        self.vectors.extend_from_slice(vector.as_slice());
        self.links.push(vec![Vec::new(); level + 1]);
        self.parents.push(vec![NO_ENTRY; level + 1]);
        self.children.push(vec![0; level + 1]);

        let Some(entry) = self.entry else {
            self.entry = Some(node);
            self.max_level = level;
            return Ok(());
        };

        let query = vector.as_slice();
        let mut entry_points = vec![self.sim_to(query, entry)];
        for lc in (level + 1..=self.max_level).rev() {
            let nearest = self.search_layer(query, &entry_points, 1, lc);
            entry_points = vec![nearest[0]];
        }

        for lc in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(query, &entry_points, self.params.ef_construction, lc);
            let mut neighbors = self.select_neighbors(&found, self.params.m);
            let cap = self.params.max_degree(lc);
            let parent = neighbors
                .iter()
                .chain(&found)
                .find(|s| self.protected_count(s.node, lc) < cap)
                .copied()
                .or_else(|| self.nearest_with_tree_room(query, node, lc));
            if let Some(p) = parent {
                if !neighbors.iter().any(|s| s.node == p.node) {
                    if neighbors.len() >= self.params.m {
                        neighbors.pop();
                    }
                    neighbors.push(p);
                }
                self.parents[node as usize][lc] = p.node;
                self.children[p.node as usize][lc] += 1;
            }
            self.links[node as usize][lc] = neighbors.iter().map(|s| s.node).collect();
            for s in &neighbors {
                self.connect(s.node, node, lc);
            }
            entry_points = found;
        }

        if level > self.max_level {
            self.entry = Some(node);
            self.max_level = level;
        }
        Ok(())
    }

    fn protected_count(&self, node: u32, level: usize) -> usize {
        let has_parent = self.parents[node as usize][level] != NO_ENTRY;
        usize::from(has_parent) + self.children[node as usize][level] as usize
    }

    // Fallback when every beam candidate's tree slots are taken. A tree whose
    // degree cap is >= 2 always has a leaf with room, so this only fails on a
    // layer holding nothing but `node`.
    fn nearest_with_tree_room(&self, query: &[f32], node: u32, level: usize) -> Option<Scored> {
        let cap = self.params.max_degree(level);
        (0..self.ids.len() as u32)
            .filter(|&n| n != node && self.links[n as usize].len() > level)
            .filter(|&n| self.protected_count(n, level) < cap)
            .map(|n| self.sim_to(query, n))
            .max()
    }

    fn is_tree_edge(&self, a: u32, b: u32, level: usize) -> bool {
        self.parents[a as usize][level] == b || self.parents[b as usize][level] == a
    }

    // Adds `to` to `from`'s adjacency on `level`, shrinking it when over
    // capacity. Tree edges survive every shrink.
    fn connect(&mut self, from: u32, to: u32, level: usize) {
        let cap = self.params.max_degree(level);
        let list = &mut self.links[from as usize][level];
        if list.contains(&to) {
            return;
        }
        list.push(to);
        if list.len() <= cap {
            return;
        }
        let base = self.vec_of(from);
        let mut tree = Vec::new();
        let mut rest = Vec::new();
        for &n in &self.links[from as usize][level] {
            let s = Scored {
                sim: dot(base, self.vec_of(n)),
                node: n,
            };
            if self.is_tree_edge(from, n, level) {
                tree.push(s);
            } else {
                rest.push(s);
            }
        }
        rest.sort_by(|a, b| b.cmp(a));
        let mut kept = self.select_neighbors(&rest, cap.saturating_sub(tree.len()));
        kept.extend(tree);
        kept.sort_by(|a, b| b.cmp(a));
        self.links[from as usize][level] = kept.iter().map(|s| s.node).collect();
    }

    /// Diversity heuristic: a candidate is kept when it is closer to the base
    /// than to every neighbor already kept. Rejected candidates then fill any
    /// remaining slots in order, so well-connected nodes never lose degree.
    /// `candidates` must be sorted best-first.
    fn select_neighbors(&self, candidates: &[Scored], m: usize) -> Vec<Scored> {
        let mut kept: Vec<Scored> = Vec::with_capacity(m);
        let mut pruned = Vec::new();
        for &c in candidates {
            if kept.len() >= m {
                break;
            }
            let cv = self.vec_of(c.node);
            let diverse = kept.iter().all(|k| dot(cv, self.vec_of(k.node)) < c.sim);
            if diverse {
                kept.push(c);
            } else {
                pruned.push(c);
            }
        }
        for c in pruned {
            if kept.len() >= m {
                break;
            }
            kept.push(c);
        }
        kept
    }

    /// Best-first beam search on one layer; returns up to `ef` nodes best-first.
    fn search_layer(&self, query: &[f32], entry_points: &[Scored], ef: usize, level: usize) -> Vec<Scored> {
        let mut visited = vec![false; self.ids.len()];
        let mut candidates: BinaryHeap<Scored> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();

        for &ep in entry_points {
            if !std::mem::replace(&mut visited[ep.node as usize], true) {
                candidates.push(ep);
                results.push(Reverse(ep));
                if results.len() > ef {
                    results.pop();
                }
            }
        }

        while let Some(current) = candidates.pop() {
            let worst = results.peek().expect("results non-empty").0;
            if current < worst && results.len() >= ef {
                break;
            }
            let Some(neighbors) = self.links[current.node as usize].get(level) else {
                continue;
            };
            for &n in neighbors {
                if std::mem::replace(&mut visited[n as usize], true) {
                    continue;
                }
                let s = self.sim_to(query, n);
                let worst = results.peek().expect("results non-empty").0;
                if results.len() < ef || s > worst {
                    candidates.push(s);
                    results.push(Reverse(s));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }

        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Returns the `min(k, len)` stored vectors most similar to `query`.
    /// `ef` overrides the configured `ef_search` and is raised to at least `k`.
    pub fn search(
        &self,
        query: &EmbeddingVector,
        k: usize,
        ef: Option<usize>,
    ) -> Result<Vec<SearchHit>, HnswError> {
        if k == 0 {
            return Err(HnswError::ZeroK);
        }
        if query.dim() != self.dim {
            return Err(HnswError::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        let entry = self.entry.ok_or(HnswError::EmptyIndex)?;
        let ef = ef.unwrap_or(self.params.ef_search).max(k);
        let q = query.as_slice();

        let mut ep = self.sim_to(q, entry);
        for lc in (1..=self.max_level).rev() {
            ep = self.search_layer(q, &[ep], 1, lc)[0];
        }
        let found = self.search_layer(q, &[ep], ef, 0);

        let mut hits: Vec<SearchHit> = found
            .into_iter()
            .map(|s| SearchHit {
                id: self.ids[s.node as usize].clone(),
                score: s.sim,
            })
            .collect();
        rank_hits(&mut hits);
        hits.truncate(k);
        Ok(hits)
    }

    /// Exhaustive scan over every stored vector.
    pub fn exact_search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, HnswError> {
        if query.dim() != self.dim {
            return Err(HnswError::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        if self.is_empty() {
            return Err(HnswError::EmptyIndex);
        }
        let mut hits: Vec<SearchHit> = (0..self.ids.len() as u32)
            .map(|n| SearchHit {
                id: self.ids[n as usize].clone(),
                score: dot(query.as_slice(), self.vec_of(n)),
            })
            .collect();
        rank_hits(&mut hits);
        hits.truncate(k);
        Ok(hits)
    }

    /// Largest neighbor-list length on each layer.
    pub fn max_degrees(&self) -> Vec<usize> {
        let mut out = vec![0; self.max_level + 1];
        for node in &self.links {
            for (lc, list) in node.iter().enumerate() {
                out[lc] = out[lc].max(list.len());
            }
        }
        out
    }

    /// Per layer, how many nodes live there and how many are reachable from the
    /// entry point by following that layer's links.
    pub fn layer_reachability(&self) -> Vec<(usize, usize)> {
        let Some(entry) = self.entry else {
            return Vec::new();
        };
        (0..=self.max_level)
            .map(|lc| {
                let total = self.links.iter().filter(|l| l.len() > lc).count();
                let mut seen = vec![false; self.ids.len()];
                let mut queue = VecDeque::from([entry]);
                seen[entry as usize] = true;
                let mut reached = 0;
                while let Some(n) = queue.pop_front() {
                    reached += 1;
                    for &m in &self.links[n as usize][lc] {
                        if !std::mem::replace(&mut seen[m as usize], true) {
                            queue.push_back(m);
                        }
                    }
                }
                (total, reached)
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::new();
        body.put_u32(self.dim as u32);
        body.put_u32(self.params.m as u32);
        body.put_u32(self.params.ef_construction as u32);
        body.put_u32(self.params.ef_search as u32);
        body.put_u64(self.params.seed);
        let word_pos = self.rng.get_word_pos();
        body.put_u64(word_pos as u64);
        body.put_u64((word_pos >> 64) as u64);
        body.put_u64(self.ids.len() as u64);
        body.put_u32(self.entry.unwrap_or(NO_ENTRY));
        body.put_u32(self.max_level as u32);
        for (node, id) in self.ids.iter().enumerate() {
            body.put_str(id.as_str());
            body.put_f32s(self.vec_of(node as u32));
            let levels = &self.links[node];
            body.put_u8((levels.len() - 1) as u8);
            for (lc, list) in levels.iter().enumerate() {
                body.put_u32(self.parents[node][lc]);
                body.put_u32(list.len() as u32);
                for &n in list {
                    body.put_u32(n);
                }
            }
        }
        snapshot::encode_frame(MAGIC, FORMAT_VERSION, &body)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HnswError> {
        let body = snapshot::decode_frame(MAGIC, FORMAT_VERSION, bytes)?;
        let corrupt = |d: &str| HnswError::Snapshot(SnapshotError::corrupt(d));
        let mut r = BodyReader::new(body);

        let dim = r.u32()? as usize;
        let params = HnswParams {
            m: r.u32()? as usize,
            ef_construction: r.u32()? as usize,
            ef_search: r.u32()? as usize,
            seed: r.u64()?,
        };
        let word_pos = u128::from(r.u64()?) | (u128::from(r.u64()?) << 64);
        let mut index = HnswIndex::new(dim, params).map_err(|_| corrupt("invalid header parameters"))?;
        index.rng.set_word_pos(word_pos);

        // each node carries at least an id length, its vector, a level byte and
        // one layer header
        let count = r.count(4 + dim * 4 + 1 + 8)?;
        if count >= NO_ENTRY as usize {
            return Err(corrupt("too many nodes"));
        }
        let entry = r.u32()?;
        let max_level = r.u32()? as usize;
        if max_level > MAX_LEVEL {
            return Err(corrupt("max level out of range"));
        }

        for node in 0..count {
            let id = MuragId::new(r.string()?).map_err(|_| corrupt("empty id"))?;
            let v = r.f32_vec(dim)?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(corrupt("non-finite vector component"));
            }
            let top = r.u8()? as usize;
            if top > max_level {
                return Err(corrupt("node level above max level"));
            }
            let mut levels = Vec::with_capacity(top + 1);
            let mut parents = Vec::with_capacity(top + 1);
            for lc in 0..=top {
                let parent = r.u32()?;
                if parent != NO_ENTRY && parent as usize >= count {
                    return Err(corrupt("parent out of range"));
                }
                parents.push(parent);
                let n = r.u32()? as usize;
                if n > params.max_degree(lc) || n * 4 > r.remaining() {
                    return Err(corrupt("neighbor list too long"));
                }
                let mut list = Vec::with_capacity(n);
                for _ in 0..n {
                    let m = r.u32()?;
                    if m as usize >= count || m as usize == node {
                        return Err(corrupt("neighbor id out of range"));
                    }
                    list.push(m);
                }
                levels.push(list);
            }
            if index.lookup.insert(id.clone(), node as u32).is_some() {
                return Err(corrupt("duplicate id"));
            }
            index.ids.push(id);
            index.vectors.extend_from_slice(&v);
            index.links.push(levels);
            index.parents.push(parents);
            index.children.push(vec![0; top + 1]);
        }
        r.finish()?;

        for node in 0..count {
            for lc in 0..index.parents[node].len() {
                let p = index.parents[node][lc];
                if p == NO_ENTRY {
                    continue;
                }
                let p = p as usize;
                if index.links[p].len() <= lc
                    || !index.links[p][lc].contains(&(node as u32))
                    || !index.links[node][lc].contains(&(p as u32))
                {
                    return Err(corrupt("tree edge missing from adjacency"));
                }
                index.children[p][lc] += 1;
            }
        }

        // neighbors on a layer must themselves live on that layer
        for levels in &index.links {
            for (lc, list) in levels.iter().enumerate() {
                if list.iter().any(|&m| index.links[m as usize].len() <= lc) {
                    return Err(corrupt("neighbor missing from layer"));
                }
            }
        }
        if count == 0 {
            if entry != NO_ENTRY || max_level != 0 {
                return Err(corrupt("empty index with entry point"));
            }
        } else {
            if entry as usize >= count || index.links[entry as usize].len() != max_level + 1 {
                return Err(corrupt("invalid entry point"));
            }
            index.entry = Some(entry);
            index.max_level = max_level;
        }
        Ok(index)
    }

    pub fn persist(&self, path: &Path) -> Result<(), HnswError> {
        snapshot::write_atomic(path, &self.to_bytes()).map_err(SnapshotError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HnswError> {
        Self::from_bytes(&snapshot::read_file(path)?)
    }
}
