//! Input graphs: Erdős–Rényi and random binary trees, dataset generation
//! and the on-disk dataset format.
//!
//! A dataset directory holds `manifest.json` plus one `<split>.graphs`
//! record file per split. Record files are little endian:
//!
//! ```text
//! magic b"CSTKGRPH", version u32, count u32
//! count × { n u32, generator u8 (0 = er, 1 = binary_tree), p f64,
//!           seed u64, adjacency bitset ceil(n·n / 8) bytes, row-major,
//!           least significant bit first }
//! ```

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSource {
    Er { p: f64 },
    BinaryTree,
}

/// Directed graph over nodes `0..n`. Entry `(i, j)` of the adjacency
/// matrix is the edge `i -> j`; neighbours are visited in index order.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    adj: Vec<bool>,
    pub source: GraphSource,
    pub seed: u64,
}

impl Graph {
    /// Builds a graph from an edge list. Self-loops are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return invalid("graph needs at least one node");
        }
        let mut adj = vec![false; n * n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return invalid(format!("edge ({i}, {j}) out of range for n = {n}"));
            }
            if i == j {
                return invalid(format!("self-loop at {i}"));
            }
            adj[i * n + j] = true;
        }
        Ok(Self {
            n,
            adj,
            source: GraphSource::Er { p: 0.0 },
            seed: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.n + j]
    }

    /// Out-neighbours of `u` in ascending index order.
    pub fn neighbors(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&v| self.adj[u * self.n + v])
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|&&e| e).count()
    }

    pub fn in_degree(&self, v: usize) -> usize {
        (0..self.n).filter(|&u| self.has_edge(u, v)).count()
    }

    pub fn adjacency(&self) -> &[bool] {
        &self.adj
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        let n = self.n;
        let mut adj = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                adj[perm[i] * n + perm[j]] = self.adj[i * n + j];
            }
        }
        Graph {
            n,
            adj,
            source: self.source,
            seed: self.seed,
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.adj.len() != self.n * self.n {
            return invalid("adjacency size does not match n");
        }
        if (0..self.n).any(|i| self.has_edge(i, i)) {
            return invalid("self-loop");
        }
        Ok(())
    }
}

/// Each ordered pair `(i, j)`, `i != j`, is an edge with probability `p`.
pub fn gen_er(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return invalid("gen_er: n must be at least 1");
    }
    if !(p > 0.0 && p <= 1.0) {
        return invalid(format!("gen_er: p = {p} outside (0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adj = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                adj[i * n + j] = rng.gen_bool(p);
            }
        }
    }
    Ok(Graph {
        n,
        adj,
        source: GraphSource::Er { p },
        seed,
    })
}

/// Random binary tree with edges oriented parent -> child. Nodes are
/// attached one at a time to a uniformly chosen node that still has fewer
/// than two children; labels are then shuffled.
pub fn gen_binary_tree(n: usize, seed: u64) -> Result<Graph> {
    if n == 0 {
        return invalid("gen_binary_tree: n must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut children = vec![0u8; n];
    let mut open: Vec<usize> = vec![0];
    let mut edges = Vec::with_capacity(n - 1);
    for node in 1..n {
        let k = rng.gen_range(0..open.len());
        let parent = open[k];
        edges.push((parent, node));
        children[parent] += 1;
        if children[parent] == 2 {
            open.swap_remove(k);
        }
        open.push(node);
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut adj = vec![false; n * n];
    for (a, b) in edges {
        adj[perm[a] * n + perm[b]] = true;
    }
    Ok(Graph {
        n,
        adj,
        source: GraphSource::BinaryTree,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test(usize),
}

impl Split {
    pub fn name(&self) -> String {
        match self {
            Split::Train => "train".into(),
            Split::Validation => "validation".into(),
            Split::Test(n) => format!("test-{n}"),
        }
    }

    fn salt(&self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Validation => 2,
            Split::Test(n) => 1000 + *n as u64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    /// Node counts for train and validation graphs, drawn uniformly.
    pub sizes: Vec<usize>,
    /// Node counts of the test splits; one split per size.
    pub test_sizes: Vec<usize>,
    pub train_count: usize,
    pub validation_count: usize,
    /// Graphs per test size.
    pub test_count: usize,
    pub tree_fraction: f64,
    pub er_probs: Vec<f64>,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            sizes: vec![4, 8, 12, 16, 20, 24, 28, 32],
            test_sizes: vec![32, 96],
            train_count: 1000,
            validation_count: 64,
            test_count: 32,
            tree_fraction: 0.15,
            er_probs: (1..=9).map(|k| k as f64 / 10.0).collect(),
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tree_fraction) {
            return invalid(format!(
                "tree_fraction {} outside [0, 1]",
                self.tree_fraction
            ));
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return invalid("sizes must be a non-empty list of positive node counts");
        }
        if self.test_sizes.contains(&0) {
            return invalid("test sizes must be positive");
        }
        if self.tree_fraction < 1.0 {
            if self.er_probs.is_empty() {
                return invalid("er_probs is empty but E-R graphs are requested");
            }
            if let Some(p) = self.er_probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
                return invalid(format!("E-R probability {p} outside (0, 1]"));
            }
        }
        Ok(())
    }

    pub fn splits(&self) -> Vec<(Split, usize)> {
        let mut out = vec![
            (Split::Train, self.train_count),
            (Split::Validation, self.validation_count),
        ];
        out.extend(self.test_sizes.iter().map(|&n| (Split::Test(n), self.test_count)));
        out
    }
}

/// SplitMix64 finaliser; derives independent per-graph seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Graphs of one split. `ceil(count * tree_fraction)` of them are trees,
/// the rest E-R with `p` drawn uniformly from `er_probs`.
pub fn gen_split(spec: &DatasetSpec, split: Split, count: usize) -> Result<Vec<Graph>> {
    spec.validate()?;
    let split_seed = mix_seed(spec.seed, split.salt());
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    let trees = (count as f64 * spec.tree_fraction).ceil() as usize;
    let trees = trees.min(count);
    let mut is_tree: Vec<bool> = (0..count).map(|i| i < trees).collect();
    is_tree.shuffle(&mut rng);
    let mut graphs = Vec::with_capacity(count);
    for (i, tree) in is_tree.into_iter().enumerate() {
        let n = match split {
            Split::Test(n) => n,
            _ => spec.sizes[rng.gen_range(0..spec.sizes.len())],
        };
        let seed = mix_seed(split_seed, i as u64 + 1);
        let g = if tree {
            gen_binary_tree(n, seed)?
        } else {
            let p = spec.er_probs[rng.gen_range(0..spec.er_probs.len())];
            gen_er(n, p, seed)?
        };
        graphs.push(g);
    }
    Ok(graphs)
}

/// Every split of the spec, each tagged.
pub fn gen_dataset(spec: &DatasetSpec) -> Result<Vec<(Graph, Split)>> {
    spec.validate()?;
    let mut out = Vec::new();
    for (split, count) in spec.splits() {
        out.extend(gen_split(spec, split, count)?.into_iter().map(|g| (g, split)));
    }
    Ok(out)
}

const GRAPH_MAGIC: &[u8; 8] = b"CSTKGRPH";
const GRAPH_VERSION: u32 = 1;

pub fn encode_graphs(graphs: &[Graph]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(GRAPH_MAGIC);
    out.extend_from_slice(&GRAPH_VERSION.to_le_bytes());
    out.extend_from_slice(&(graphs.len() as u32).to_le_bytes());
    for g in graphs {
        out.extend_from_slice(&(g.n as u32).to_le_bytes());
        let (tag, p) = match g.source {
            GraphSource::Er { p } => (0u8, p),
            GraphSource::BinaryTree => (1u8, 0.0),
        };
        out.push(tag);
        out.extend_from_slice(&p.to_le_bytes());
        out.extend_from_slice(&g.seed.to_le_bytes());
        let mut bits = vec![0u8; (g.n * g.n).div_ceil(8)];
        for (k, _) in g.adj.iter().enumerate().filter(|(_, &e)| e) {
            bits[k / 8] |= 1 << (k % 8);
        }
        out.extend_from_slice(&bits);
    }
    out
}

pub fn decode_graphs(bytes: &[u8]) -> Result<Vec<Graph>> {
    let bad = |m: &str| CoreError::InvalidInput(format!("graph records: {m}"));
    let mut pos = 0usize;
    let mut take = |k: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + k).ok_or_else(|| bad("truncated"))?;
        pos += k;
        Ok(s)
    };
    if take(8)? != GRAPH_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != GRAPH_VERSION {
        return Err(bad("unsupported version"));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut graphs = Vec::with_capacity(count);
    for _ in 0..count {
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let tag = take(1)?[0];
        let p = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let bits = take((n * n).div_ceil(8))?;
        let adj = (0..n * n).map(|k| bits[k / 8] >> (k % 8) & 1 == 1).collect();
        let source = match tag {
            0 => GraphSource::Er { p },
            1 => GraphSource::BinaryTree,
            _ => return Err(bad("unknown generator tag")),
        };
        let g = Graph { n, adj, source, seed };
        g.check_invariants()?;
        graphs.push(g);
    }
    Ok(graphs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub name: String,
    pub split: Split,
    pub file: String,
    pub count: usize,
    pub trees: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub spec: DatasetSpec,
    pub splits: Vec<SplitEntry>,
}

/// Generated graphs grouped by split, as stored in a dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub splits: Vec<(Split, Vec<Graph>)>,
}

impl Dataset {
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let splits = spec
            .splits()
            .into_iter()
            .map(|(s, c)| gen_split(spec, s, c).map(|g| (s, g)))
            .collect::<Result<_>>()?;
        Ok(Self {
            spec: spec.clone(),
            splits,
        })
    }

    pub fn split(&self, split: Split) -> Option<&[Graph]> {
        self.splits
            .iter()
            .find(|(s, _)| *s == split)
            .map(|(_, g)| g.as_slice())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            version: GRAPH_VERSION,
            seed: self.spec.seed,
            spec: self.spec.clone(),
            splits: self
                .splits
                .iter()
                .map(|(s, graphs)| SplitEntry {
                    name: s.name(),
                    split: *s,
                    file: format!("{}.graphs", s.name()),
                    count: graphs.len(),
                    trees: graphs
                        .iter()
                        .filter(|g| g.source == GraphSource::BinaryTree)
                        .count(),
                })
                .collect(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = self.manifest();
        for (entry, (_, graphs)) in manifest.splits.iter().zip(&self.splits) {
            fs::write(dir.join(&entry.file), encode_graphs(graphs))?;
        }
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.exists() {
            return invalid(format!("no manifest.json in {}", dir.display()));
        }
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
        let mut splits = Vec::new();
        for entry in &manifest.splits {
            let graphs = decode_graphs(&fs::read(dir.join(&entry.file))?)?;
            if graphs.len() != entry.count {
                return Err(CoreError::Mismatch(format!(
                    "split {} lists {} graphs, file has {}",
                    entry.name,
                    entry.count,
                    graphs.len()
                )));
            }
            splits.push((entry.split, graphs));
        }
        Ok(Self {
            spec: manifest.spec,
            splits,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn er_single_node_and_complete() {
        let g = gen_er(1, 0.7, 3).unwrap();
        assert_eq!(g.edge_count(), 0);
        let g = gen_er(4, 1.0, 3).unwrap();
        assert_eq!(g.edge_count(), 12);
        assert!(gen_er(0, 0.5, 1).is_err());
        assert!(gen_er(3, 0.0, 1).is_err());
    }

    #[test]
    fn er_is_deterministic_in_seed() {
        assert_eq!(gen_er(10, 0.4, 77).unwrap(), gen_er(10, 0.4, 77).unwrap());
        assert_ne!(gen_er(10, 0.4, 77).unwrap(), gen_er(10, 0.4, 78).unwrap());
    }

    #[test]
    fn binary_tree_examples() {
        assert_eq!(gen_binary_tree(1, 0).unwrap().edge_count(), 0);
        let g = gen_binary_tree(3, 5).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert!((0..3).all(|v| g.in_degree(v) <= 1));
        for seed in 0..20 {
            let g = gen_binary_tree(15, seed).unwrap();
            assert_eq!(g.edge_count(), 14);
            assert_eq!((0..15).filter(|&v| g.in_degree(v) == 0).count(), 1);
            assert!((0..15).all(|v| g.neighbors(v).count() <= 2));
        }
    }

    #[test]
    fn tree_fraction_counts() {
        let spec = DatasetSpec {
            train_count: 100,
            validation_count: 0,
            test_sizes: vec![],
            ..DatasetSpec::default()
        };
        let train = gen_split(&spec, Split::Train, 100).unwrap();
        let trees = train
            .iter()
            .filter(|g| g.source == GraphSource::BinaryTree)
            .count();
        assert_eq!(trees, 15);

        let none = DatasetSpec {
            tree_fraction: 0.0,
            ..spec.clone()
        };
        assert!(gen_split(&none, Split::Train, 50)
            .unwrap()
            .iter()
            .all(|g| matches!(g.source, GraphSource::Er { .. })));
    }

    #[test]
    fn dataset_is_deterministic_and_validated() {
        let spec = DatasetSpec {
            train_count: 20,
            validation_count: 5,
            test_count: 3,
            test_sizes: vec![10],
            ..DatasetSpec::default()
        };
        assert_eq!(gen_dataset(&spec).unwrap(), gen_dataset(&spec).unwrap());
        let bad = DatasetSpec {
            tree_fraction: 1.5,
            ..spec
        };
        assert!(matches!(gen_dataset(&bad), Err(CoreError::InvalidInput(_))));
    }

    #[test]
    fn record_roundtrip() {
        let graphs = vec![
            gen_er(5, 0.5, 1).unwrap(),
            gen_binary_tree(9, 2).unwrap(),
            gen_er(1, 0.5, 3).unwrap(),
        ];
        assert_eq!(decode_graphs(&encode_graphs(&graphs)).unwrap(), graphs);
        let bytes = encode_graphs(&graphs);
        assert!(decode_graphs(&bytes[..bytes.len() - 1]).is_err());
    }
}
