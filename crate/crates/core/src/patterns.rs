//! Missing patterns and the spanning-tree schedule over them.
//!
//! Every distinct missingness mask becomes a [`MissingPattern`]. Patterns are
//! the nodes of a complete graph weighted by Hamming distance; its minimum
//! spanning tree tells the fast engine which pattern's matrices to start from
//! when computing the next one.

use std::collections::HashMap;

use serde::Serialize;

use crate::Dataset;

/// Default cap on the number of patterns handled by a single spanning tree.
pub const DEFAULT_MAX_GRAPH: usize = 4096;

/// Missingness bit vector (bit set ⇔ variable missing).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    words: Vec<u64>,
    len: usize,
}

impl Mask {
    pub fn from_bools(bits: &[bool]) -> Self {
        let mut words = vec![0u64; bits.len().div_ceil(64)];
        for (i, &b) in bits.iter().enumerate() {
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Self {
            words,
            len: bits.len(),
        }
    }

    pub fn from_indices(len: usize, missing: &[usize]) -> Self {
        let mut bits = vec![false; len];
        for &i in missing {
            bits[i] = true;
        }
        Self::from_bools(&bits)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn hamming(&self, other: &Mask) -> usize {
        debug_assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    /// Hex rendering of `Σ 2^i` over missing `i`, most significant digit first.
    pub fn to_hex(&self) -> String {
        let digits = self.len.div_ceil(4).max(1);
        (0..digits)
            .rev()
            .map(|k| {
                let nibble = (self.words.get(k / 16).copied().unwrap_or(0) >> ((k % 16) * 4)) & 0xf;
                char::from_digit(nibble as u32, 16).unwrap()
            })
            .collect()
    }
}

/// A distinct missingness mask and the samples that share it.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingPattern {
    pub id: usize,
    pub mask: Mask,
    pub sample_ids: Vec<usize>,
    missing: Vec<usize>,
    observed: Vec<usize>,
}

impl MissingPattern {
    pub fn new(id: usize, mask: Mask, sample_ids: Vec<usize>) -> Self {
        let missing = (0..mask.len()).filter(|&i| mask.get(i)).collect();
        let observed = (0..mask.len()).filter(|&i| !mask.get(i)).collect();
        Self {
            id,
            mask,
            sample_ids,
            missing,
            observed,
        }
    }

    pub fn n_m(&self) -> usize {
        self.missing.len()
    }

    pub fn n_o(&self) -> usize {
        self.observed.len()
    }

    /// Missing variables, ascending.
    pub fn missing(&self) -> &[usize] {
        &self.missing
    }

    /// Observed variables, ascending.
    pub fn observed(&self) -> &[usize] {
        &self.observed
    }
}

/// Distinct masks in order of first occurrence.
pub fn extract_patterns(dataset: &Dataset) -> Vec<MissingPattern> {
    let mut index: HashMap<Mask, usize> = HashMap::new();
    let mut masks = Vec::new();
    let mut samples: Vec<Vec<usize>> = Vec::new();
    for i in 0..dataset.n() {
        let mask = Mask::from_bools(dataset.row_mask(i));
        let next = masks.len();
        let id = *index.entry(mask.clone()).or_insert(next);
        if id == next {
            masks.push(mask);
            samples.push(Vec::new());
        }
        samples[id].push(i);
    }
    masks
        .into_iter()
        .zip(samples)
        .enumerate()
        .map(|(id, (mask, s))| MissingPattern::new(id, mask, s))
        .collect()
}

/// Parent link of a non-root tree node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PatternEdge {
    pub parent: usize,
    pub child: usize,
    pub n_d: usize,
}

/// Minimum spanning tree over a set of patterns, rooted and ordered for traversal.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternTree {
    pub root: usize,
    /// Indexed by global pattern id; `None` for the root and for non-members.
    pub parent: Vec<Option<(usize, usize)>>,
    /// Pre-order: every parent precedes its children.
    pub visit_order: Vec<usize>,
    pub depth: Vec<usize>,
    /// Recompute from scratch at depths that are multiples of `k`; `None` never recomputes
    /// below the root.
    pub recompute_every: Option<usize>,
}

/// Default `k` for the depth-based from-scratch recompute.
pub const DEFAULT_RECOMPUTE_EVERY: usize = 16;

impl PatternTree {
    pub fn edges(&self) -> Vec<PatternEdge> {
        self.visit_order
            .iter()
            .filter_map(|&c| {
                self.parent[c].map(|(p, n_d)| PatternEdge {
                    parent: p,
                    child: c,
                    n_d,
                })
            })
            .collect()
    }

    pub fn total_weight(&self) -> usize {
        self.parent.iter().flatten().map(|&(_, w)| w).sum()
    }

    pub fn with_recompute_every(mut self, k: Option<usize>) -> Self {
        self.recompute_every = k.filter(|&k| k > 0);
        self
    }

    /// True when `pattern` must be computed from scratch rather than from its parent.
    pub fn is_recompute_point(&self, pattern: usize) -> bool {
        if self.parent[pattern].is_none() {
            return true;
        }
        match self.recompute_every {
            Some(k) => self.depth[pattern] % k == 0,
            None => false,
        }
    }

    pub fn max_depth(&self) -> usize {
        self.visit_order.iter().map(|&p| self.depth[p]).max().unwrap_or(0)
    }
}

/// Prim's algorithm over all patterns.
pub fn build_mst(patterns: &[MissingPattern]) -> PatternTree {
    let members: Vec<usize> = (0..patterns.len()).collect();
    build_mst_subset(patterns, &members)
}

/// Prim's algorithm with a dense `O(p²)` scan over the `members` subset.
///
/// The root is the member with the fewest missing variables (first occurrence on
/// ties). Ties on edge weight go to the smaller pattern id.
pub fn build_mst_subset(patterns: &[MissingPattern], members: &[usize]) -> PatternTree {
    let total = patterns.len();
    assert!(!members.is_empty(), "spanning tree needs at least one pattern");
    let root = *members
        .iter()
        .min_by_key(|&&m| (patterns[m].n_m(), m))
        .unwrap();

    let mut parent: Vec<Option<(usize, usize)>> = vec![None; total];
    let s = members.len();
    let mut in_tree = vec![false; s];
    let mut best = vec![usize::MAX; s];
    let mut from = vec![usize::MAX; s];
    let root_pos = members.iter().position(|&m| m == root).unwrap();
    in_tree[root_pos] = true;
    let mut last = root_pos;
    for _ in 1..s {
        let lm = &patterns[members[last]].mask;
        let mut pick: Option<usize> = None;
        for v in 0..s {
            if in_tree[v] {
                continue;
            }
            let w = lm.hamming(&patterns[members[v]].mask);
            if w < best[v] || (w == best[v] && members[last] < from[v]) {
                best[v] = w;
                from[v] = members[last];
            }
            pick = match pick {
                Some(p) if (best[p], members[p]) <= (best[v], members[v]) => Some(p),
                _ => Some(v),
            };
        }
        let v = pick.unwrap();
        in_tree[v] = true;
        parent[members[v]] = Some((from[v], best[v]));
        last = v;
    }

    let mut children: HashMap<usize, Vec<usize>> = HashMap::new();
    for &m in members {
        if let Some((p, _)) = parent[m] {
            children.entry(p).or_default().push(m);
        }
    }
    for c in children.values_mut() {
        c.sort_unstable();
    }
    let mut depth = vec![0; total];
    let mut visit_order = Vec::with_capacity(s);
    let mut stack = vec![root];
    while let Some(node) = stack.pop() {
        visit_order.push(node);
        if let Some(kids) = children.get(&node) {
            for &k in kids.iter().rev() {
                depth[k] = depth[node] + 1;
                stack.push(k);
            }
        }
    }
    PatternTree {
        root,
        parent,
        visit_order,
        depth,
        recompute_every: Some(DEFAULT_RECOMPUTE_EVERY),
    }
}

/// One contiguous run of samples sharing a pattern.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScheduleBlock {
    pub pattern: usize,
    pub parent: Option<usize>,
    /// Hamming distance to the parent pattern (0 at a root).
    pub n_d: usize,
    pub depth: usize,
    pub recompute: bool,
    pub start: usize,
    pub len: usize,
}

/// Sample ordering derived from one or more pattern trees.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub order: Vec<usize>,
    pub blocks: Vec<ScheduleBlock>,
}

impl Schedule {
    pub fn samples(&self, block: &ScheduleBlock) -> &[usize] {
        &self.order[block.start..block.start + block.len]
    }

    pub fn total_update_weight(&self) -> usize {
        self.blocks.iter().map(|b| b.n_d).sum()
    }
}

/// Orders samples by visiting the tree; samples of a pattern stay contiguous.
pub fn schedule(tree: &PatternTree, patterns: &[MissingPattern]) -> Schedule {
    schedule_forest(std::slice::from_ref(tree), patterns)
}

pub fn schedule_forest(trees: &[PatternTree], patterns: &[MissingPattern]) -> Schedule {
    let mut order = Vec::new();
    let mut blocks = Vec::new();
    for tree in trees {
        for &p in &tree.visit_order {
            let start = order.len();
            order.extend_from_slice(&patterns[p].sample_ids);
            let (parent, n_d) = match tree.parent[p] {
                Some((q, w)) => (Some(q), w),
                None => (None, 0),
            };
            blocks.push(ScheduleBlock {
                pattern: p,
                parent,
                n_d,
                depth: tree.depth[p],
                recompute: tree.is_recompute_point(p),
                start,
                len: patterns[p].sample_ids.len(),
            });
        }
    }
    Schedule { order, blocks }
}

/// Splits patterns into groups of at most `max_graph` members by Hamming-space
/// clustering (farthest-point seeding, then capacitated medoid refinement).
pub fn cluster_patterns(patterns: &[MissingPattern], max_graph: usize) -> Vec<Vec<usize>> {
    let p = patterns.len();
    let max_graph = max_graph.max(1);
    if p <= max_graph {
        return vec![(0..p).collect()];
    }
    let g = p.div_ceil(max_graph);
    let dist = |a: usize, b: usize| patterns[a].mask.hamming(&patterns[b].mask);

    let mut medoids = vec![0usize];
    let mut nearest: Vec<usize> = (0..p).map(|i| dist(i, 0)).collect();
    while medoids.len() < g {
        let far = (0..p).max_by_key(|&i| (nearest[i], std::cmp::Reverse(i))).unwrap();
        medoids.push(far);
        for i in 0..p {
            nearest[i] = nearest[i].min(dist(i, far));
        }
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    for _ in 0..8 {
        let mut next: Vec<Vec<usize>> = vec![Vec::new(); g];
        for i in 0..p {
            let mut ranked: Vec<(usize, usize)> =
                medoids.iter().enumerate().map(|(k, &m)| (dist(i, m), k)).collect();
            ranked.sort_unstable();
            let k = ranked
                .iter()
                .map(|&(_, k)| k)
                .find(|&k| next[k].len() < max_graph)
                .expect("total capacity covers every pattern");
            next[k].push(i);
        }
        let new_medoids: Vec<usize> = next
            .iter()
            .zip(&medoids)
            .map(|(members, &old)| {
                members
                    .iter()
                    .copied()
                    .min_by_key(|&c| (members.iter().map(|&o| dist(c, o)).sum::<usize>(), c))
                    .unwrap_or(old)
            })
            .collect();
        let stable = next == groups;
        groups = next;
        if stable || new_medoids == medoids {
            break;
        }
        medoids = new_medoids;
    }
    groups.retain(|g| !g.is_empty());
    groups.sort_by_key(|g| g[0]);
    groups
}

/// Everything the engines need about the missingness structure, built once per dataset.
#[derive(Debug, Clone)]
pub struct PatternPlan {
    pub patterns: Vec<MissingPattern>,
    pub trees: Vec<PatternTree>,
    pub schedule: Schedule,
    /// Pattern id of every sample.
    pub sample_pattern: Vec<usize>,
}

impl PatternPlan {
    pub fn build(dataset: &Dataset, max_graph: usize, recompute_every: Option<usize>) -> Self {
        let patterns = extract_patterns(dataset);
        Self::from_patterns(dataset.n(), patterns, max_graph, recompute_every)
    }

    pub fn from_patterns(
        n: usize,
        patterns: Vec<MissingPattern>,
        max_graph: usize,
        recompute_every: Option<usize>,
    ) -> Self {
        let trees: Vec<PatternTree> = if patterns.is_empty() {
            Vec::new()
        } else {
            cluster_patterns(&patterns, max_graph)
                .iter()
                .map(|g| build_mst_subset(&patterns, g).with_recompute_every(recompute_every))
                .collect()
        };
        let schedule = schedule_forest(&trees, &patterns);
        let mut sample_pattern = vec![0; n];
        for p in &patterns {
            for &s in &p.sample_ids {
                sample_pattern[s] = p.id;
            }
        }
        Self {
            patterns,
            trees,
            schedule,
            sample_pattern,
        }
    }

    pub fn total_weight(&self) -> usize {
        self.trees.iter().map(PatternTree::total_weight).sum()
    }

    pub fn diagnostic(&self) -> PlanRecord {
        let nodes = self
            .schedule
            .blocks
            .iter()
            .map(|b| NodeRecord {
                id: b.pattern,
                mask: self.patterns[b.pattern].mask.to_hex(),
                parent: b.parent,
                n_d: b.n_d,
                depth: b.depth,
                samples: b.len,
            })
            .collect();
        PlanRecord {
            patterns: self.patterns.len(),
            trees: self.trees.len(),
            roots: self.trees.iter().map(|t| t.root).collect(),
            total_weight: self.total_weight(),
            max_depth: self.trees.iter().map(PatternTree::max_depth).max().unwrap_or(0),
            nodes,
        }
    }
}

/// JSON diagnostic of the pattern schedule.
#[derive(Debug, Clone, Serialize)]
pub struct PlanRecord {
    pub patterns: usize,
    pub trees: usize,
    pub roots: Vec<usize>,
    pub total_weight: usize,
    pub max_depth: usize,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeRecord {
    pub id: usize,
    pub mask: String,
    pub parent: Option<usize>,
    pub n_d: usize,
    pub depth: usize,
    pub samples: usize,
}
