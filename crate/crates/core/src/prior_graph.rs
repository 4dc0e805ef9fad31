//! Dataset-level prior graphs over object and privacy nodes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::feature_store::{EntityVocabulary, ImageRecord};
use crate::numcore::BlockEdges;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Object,
    Privacy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    FrequencyBipartite,
    Cooccurrence,
    Combined,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Keep object↔privacy entries with their weights.
    GipBipartite,
    /// Keep object↔object entries, binarised.
    GpaObjects,
}

impl FromStr for MaskMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gip-bipartite" => Ok(MaskMode::GipBipartite),
            "gpa-objects" => Ok(MaskMode::GpaObjects),
            _ => Err(invalid(format!("unknown mask mode {s:?} (gip-bipartite, gpa-objects)"))),
        }
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::GipBipartite => "gip-bipartite",
            MaskMode::GpaObjects => "gpa-objects",
        })
    }
}

/// K×K adjacency, objects first then the public and private nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorGraph {
    #[serde(rename = "K")]
    pub k: usize,
    pub node_kinds: Vec<NodeKind>,
    /// Row-major K×K.
    pub adjacency: Vec<f64>,
    pub weighted: bool,
    pub provenance: Provenance,
    #[serde(default)]
    pub mask: Option<MaskMode>,
    pub vocab_hash: String,
}

impl PriorGraph {
    fn empty(k_o: usize, provenance: Provenance, weighted: bool, vocab_hash: &str) -> Self {
        let k = k_o + 2;
        let mut node_kinds = vec![NodeKind::Object; k_o];
        node_kinds.extend([NodeKind::Privacy, NodeKind::Privacy]);
        Self { k, node_kinds, adjacency: vec![0.0; k * k], weighted, provenance, mask: None, vocab_hash: vocab_hash.into() }
    }

    /// An all-zero graph, for graph ablations.
    pub fn zero(vocab: &EntityVocabulary) -> Self {
        Self::empty(vocab.k_o(), Provenance::Combined, false, &vocab.hash())
    }

    pub fn k_o(&self) -> usize {
        self.k - 2
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.k + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.adjacency[i * self.k + j] = v;
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.k).all(|i| (0..self.k).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 3 || self.node_kinds.len() != self.k || self.adjacency.len() != self.k * self.k {
            return Err(invalid("graph dimensions do not agree"));
        }
        let k_o = self.k_o();
        if self.node_kinds.iter().enumerate().any(|(i, n)| (*n == NodeKind::Object) != (i < k_o)) {
            return Err(invalid("node kinds must list objects before the two privacy nodes"));
        }
        if self.adjacency.iter().any(|v| !v.is_finite()) {
            return Err(invalid("graph has non-finite entries"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serialisable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: Self = serde_json::from_str(text).map_err(|e| invalid(format!("graph file: {e}")))?;
        g.validate()?;
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Refuses graphs built for a different vocabulary.
    pub fn check_vocab(&self, vocab: &EntityVocabulary) -> Result<()> {
        if self.vocab_hash != vocab.hash() || self.k != vocab.k() {
            return Err(invalid("graph vocab hash does not match the dataset vocabulary"));
        }
        Ok(())
    }
}

fn presence(r: &ImageRecord, k_o: usize) -> Vec<bool> {
    let mut p = vec![false; k_o];
    for d in &r.detections {
        p[d.category] = true;
    }
    p
}

/// `A[v, y] = M_{v,y} / M_y`: share of class-y training images containing
/// object v (counted once per image), mirrored to `A[y, v]`.
pub fn build_frequency_graph(train: &[&ImageRecord], vocab: &EntityVocabulary) -> Result<PriorGraph> {
    let k_o = vocab.k_o();
    let mut m_y = [0usize; 2];
    let mut m_vy = vec![[0usize; 2]; k_o];
    for r in train {
        m_y[r.label as usize] += 1;
        for (v, present) in presence(r, k_o).into_iter().enumerate() {
            if present {
                m_vy[v][r.label as usize] += 1;
            }
        }
    }
    if let Some(y) = (0..2).find(|&y| m_y[y] == 0) {
        return Err(invalid(format!("no training images of class {y}; frequency graph undefined")));
    }
    let mut g = PriorGraph::empty(k_o, Provenance::FrequencyBipartite, true, &vocab.hash());
    for v in 0..k_o {
        for y in 0..2 {
            let a = m_vy[v][y] as f64 / m_y[y] as f64;
            g.set(v, k_o + y, a);
            g.set(k_o + y, v, a);
        }
    }
    Ok(g)
}

/// `ε_{i,j} = 1` iff objects i ≠ j are both present in some training image.
pub fn build_cooccurrence_graph(train: &[&ImageRecord], vocab: &EntityVocabulary) -> PriorGraph {
    let k_o = vocab.k_o();
    let mut g = PriorGraph::empty(k_o, Provenance::Cooccurrence, false, &vocab.hash());
    for r in train {
        let mut cats: Vec<usize> = r.detections.iter().map(|d| d.category).collect();
        cats.sort_unstable();
        cats.dedup();
        for &i in &cats {
            for &j in &cats {
                if i != j {
                    g.set(i, j, 1.0);
                }
            }
        }
    }
    g
}

/// Frequency block plus co-occurrence block; the two never overlap.
pub fn build_combined_graph(train: &[&ImageRecord], vocab: &EntityVocabulary) -> Result<PriorGraph> {
    let mut g = build_frequency_graph(train, vocab)?;
    let c = build_cooccurrence_graph(train, vocab);
    for (a, b) in g.adjacency.iter_mut().zip(&c.adjacency) {
        *a += b;
    }
    g.provenance = Provenance::Combined;
    Ok(g)
}

pub fn mask_and_binarise(graph: &PriorGraph, mode: MaskMode) -> PriorGraph {
    let k_o = graph.k_o();
    let mut g = graph.clone();
    for i in 0..g.k {
        for j in 0..g.k {
            let (oi, oj) = (i < k_o, j < k_o);
            let v = graph.get(i, j);
            let kept = match mode {
                MaskMode::GipBipartite => {
                    if oi != oj {
                        v
                    } else {
                        0.0
                    }
                }
                MaskMode::GpaObjects => {
                    if oi && oj && v != 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            g.set(i, j, kept);
        }
    }
    g.weighted = mode == MaskMode::GipBipartite && graph.weighted;
    g.mask = Some(mode);
    g
}

/// Outgoing (`A`) and incoming (`Aᵀ`) halves of a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionalAdjacency {
    pub k: usize,
    pub outgoing: Vec<f64>,
    pub incoming: Vec<f64>,
}

impl DirectionalAdjacency {
    /// Sparse per-image aggregation edges: `a_out[v] = Σ_j A_out[v,j] h_j`.
    pub fn edges(&self) -> (Arc<BlockEdges>, Arc<BlockEdges>) {
        let collect = |m: &[f64]| {
            let mut edges = Vec::new();
            for i in 0..self.k {
                for j in 0..self.k {
                    let w = m[i * self.k + j];
                    if w != 0.0 {
                        edges.push((i, j, w));
                    }
                }
            }
            Arc::new(BlockEdges { block: self.k, edges })
        };
        (collect(&self.outgoing), collect(&self.incoming))
    }
}

pub fn split_directional(graph: &PriorGraph) -> DirectionalAdjacency {
    let k = graph.k;
    let mut incoming = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            incoming[i * k + j] = graph.get(j, i);
        }
    }
    DirectionalAdjacency { k, outgoing: graph.adjacency.clone(), incoming }
}
