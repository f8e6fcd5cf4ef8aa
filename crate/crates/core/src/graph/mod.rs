//! Token-occurrence graph: node features, PCA, exact k-NN and measure
//! propagation of label distributions.

mod features;
mod knn;
mod pca;
mod propagate;

use std::path::Path;

use ndarray::{s, Array2, ArrayView2};

pub use features::{closest_verb, node_features, raw_width};
pub use knn::{adjacency, build_knn_graph, similarity, squared_distance, Edge, KnnGraph, SigmaMode};
pub use pca::{pca_fit_project, Pca};
pub use propagate::{floor_distributions, objective, propagate, PropagationConfig, PropagationResult, PROB_FLOOR};

use crate::checkpoint::{read_container, Blocks, ContainerWriter};
use crate::corpus::{LabeledSentence, NUM_LABELS};
use crate::encoder::EmbeddingTable;
use crate::{Error, Result};

const GRAPH_MAGIC: &[u8; 6] = b"STGRF1";
const GRAPH_VERSION: u8 = 1;

/// Default width of the projected node features.
pub const PCA_DIM: usize = 100;

/// Where a node sits in the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef {
    pub sentence: usize,
    pub position: usize,
}

/// One node per token occurrence, with symmetric k-NN edges and per-node
/// label distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationGraph {
    /// `(doc_id, sentence_index)` of every sentence in scope, in node order.
    pub sentence_keys: Vec<(String, usize)>,
    /// First node of each sentence, plus a final entry equal to the node count.
    pub sentence_starts: Vec<usize>,
    pub nodes: Vec<NodeRef>,
    /// Gold label index on labeled nodes.
    pub gold: Vec<Option<usize>>,
    pub edges: Vec<Edge>,
    pub sigma: f64,
    pub k: usize,
    /// CRF marginals.
    pub p_tilde: Array2<f64>,
    /// Propagated distributions.
    pub q: Array2<f64>,
}

impl PropagationGraph {
    /// Builds nodes, features, the PCA projection and the k-NN edges.
    /// Gold labels of sentences flagged in `labeled` become empirical
    /// distributions; other sentences contribute unlabeled nodes. Node
    /// distributions start uniform.
    pub fn build(
        sentences: &[&LabeledSentence],
        labeled: &[bool],
        table: &EmbeddingTable,
        pca_dim: usize,
        k: usize,
        sigma_mode: SigmaMode,
    ) -> Result<Self> {
        if labeled.len() != sentences.len() {
            return Err(Error::shape("labeled flags", sentences.len(), labeled.len()));
        }
        let mut nodes = Vec::new();
        let mut gold = Vec::new();
        let mut starts = Vec::with_capacity(sentences.len() + 1);
        for (i, (s, &is_labeled)) in sentences.iter().zip(labeled).enumerate() {
            starts.push(nodes.len());
            let labels = if is_labeled { s.label_indices() } else { None };
            for t in 0..s.len() {
                nodes.push(NodeRef { sentence: i, position: t });
                gold.push(labels.as_ref().map(|l| l[t]));
            }
        }
        starts.push(nodes.len());
        let raw = node_features(sentences, table);
        let (projected, _) = pca_fit_project(&raw, pca_dim)?;
        drop(raw);
        let knn = build_knn_graph(&projected, k, sigma_mode)?;
        let n = nodes.len();
        let uniform = Array2::from_elem((n, NUM_LABELS), 1.0 / NUM_LABELS as f64);
        log::info!("graph: {n} nodes, {} edges, sigma {:.4}", knn.edges.len(), knn.sigma);
        Ok(PropagationGraph {
            sentence_keys: sentences.iter().map(|s| (s.doc_id.clone(), s.sentence_index)).collect(),
            sentence_starts: starts,
            nodes,
            gold,
            edges: knn.edges,
            sigma: knn.sigma,
            k,
            p_tilde: uniform.clone(),
            q: uniform,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_keys.len()
    }

    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        adjacency(self.nodes.len(), &self.edges)
    }

    /// Node rows belonging to sentence `i`.
    pub fn sentence_rows(&self, i: usize) -> std::ops::Range<usize> {
        self.sentence_starts[i]..self.sentence_starts[i + 1]
    }

    pub fn sentence_q(&self, i: usize) -> ArrayView2<'_, f64> {
        self.q.slice(s![self.sentence_rows(i), ..])
    }

    /// Propagated rows for a sentence identified by document and index.
    pub fn q_for(&self, doc_id: &str, sentence_index: usize) -> Option<Array2<f64>> {
        self.sentence_keys
            .iter()
            .position(|(d, i)| d == doc_id && *i == sentence_index)
            .map(|i| self.sentence_q(i).to_owned())
    }

    /// Replaces the CRF marginals from per-sentence blocks in scope order.
    pub fn set_p_tilde(&mut self, blocks: &[Array2<f64>]) -> Result<()> {
        if blocks.len() != self.sentence_count() {
            return Err(Error::shape("marginal blocks", self.sentence_count(), blocks.len()));
        }
        for (i, b) in blocks.iter().enumerate() {
            let rows = self.sentence_rows(i);
            if b.dim() != (rows.len(), NUM_LABELS) {
                return Err(Error::shape("marginal block", format!("({}, {NUM_LABELS})", rows.len()), format!("{:?}", b.dim())));
            }
            self.p_tilde.slice_mut(s![rows, ..]).assign(b);
        }
        Ok(())
    }

    /// Runs propagation from the current marginals and stores `q`.
    pub fn propagate(&mut self, config: &PropagationConfig) -> Result<PropagationResult> {
        let result = propagate(&self.adjacency(), &self.gold, &self.p_tilde, config)?;
        self.q = result.q.clone();
        Ok(result)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.nodes.len();
        let mut w = ContainerWriter::new(GRAPH_MAGIC, GRAPH_VERSION);
        w.naturals("meta", &[3], &[n as u64, NUM_LABELS as u64, self.k as u64]);
        let sentence: Vec<u64> = self.nodes.iter().map(|r| r.sentence as u64).collect();
        let position: Vec<u64> = self.nodes.iter().map(|r| r.position as u64).collect();
        let gold: Vec<u64> = self.gold.iter().map(|g| g.map_or(u64::MAX, |g| g as u64)).collect();
        w.naturals("node_sentence", &[n], &sentence);
        w.naturals("node_position", &[n], &position);
        w.naturals("node_gold", &[n], &gold);
        let pairs: Vec<u64> = self.edges.iter().flat_map(|e| [e.u as u64, e.v as u64]).collect();
        w.naturals("edges", &[self.edges.len(), 2], &pairs);
        let dist: Vec<f64> = self.edges.iter().map(|e| e.distance).collect();
        let sim: Vec<f64> = self.edges.iter().map(|e| e.similarity).collect();
        w.reals("edge_distance", &[dist.len()], &dist);
        w.reals("edge_similarity", &[sim.len()], &sim);
        w.reals("p_tilde", &[n, NUM_LABELS], self.p_tilde.as_slice().unwrap());
        w.reals("q", &[n, NUM_LABELS], self.q.as_slice().unwrap());
        let docs: Vec<&str> = self.sentence_keys.iter().map(|(d, _)| d.as_str()).collect();
        let idx: Vec<u64> = self.sentence_keys.iter().map(|(_, i)| *i as u64).collect();
        w.strings("sentence_docs", &docs);
        w.naturals("sentence_indices", &[idx.len()], &idx);
        w.reals("sigma", &[1], &[self.sigma]);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (version, blocks) = read_container(bytes, GRAPH_MAGIC)?;
        if version != GRAPH_VERSION {
            return Err(Error::Checkpoint(format!("unsupported graph version {version}")));
        }
        let b = Blocks::new(blocks);
        let bad = |what: &str| Error::Checkpoint(format!("inconsistent graph block {what:?}"));
        let (_, meta) = b.naturals("meta")?;
        let [n, m, k] = meta[..] else { return Err(bad("meta")) };
        let (n, k) = (n as usize, k as usize);
        if m as usize != NUM_LABELS {
            return Err(bad("meta"));
        }
        let nat = |name: &str| -> Result<Vec<u64>> {
            let (_, v) = b.naturals(name)?;
            if v.len() != n {
                return Err(bad(name));
            }
            Ok(v.to_vec())
        };
        let sentence = nat("node_sentence")?;
        let position = nat("node_position")?;
        let gold = nat("node_gold")?;
        let nodes: Vec<NodeRef> = sentence
            .iter()
            .zip(&position)
            .map(|(&s, &p)| NodeRef {
                sentence: s as usize,
                position: p as usize,
            })
            .collect();
        let gold = gold
            .iter()
            .map(|&g| match g {
                u64::MAX => Ok(None),
                g if (g as usize) < NUM_LABELS => Ok(Some(g as usize)),
                _ => Err(bad("node_gold")),
            })
            .collect::<Result<Vec<_>>>()?;
        let (_, pairs) = b.naturals("edges")?;
        let (_, dist) = b.reals("edge_distance")?;
        let (_, sim) = b.reals("edge_similarity")?;
        if pairs.len() != 2 * dist.len() || dist.len() != sim.len() {
            return Err(bad("edges"));
        }
        let edges = (0..dist.len())
            .map(|i| {
                let (u, v) = (pairs[2 * i] as usize, pairs[2 * i + 1] as usize);
                if u >= n || v >= n {
                    return Err(bad("edges"));
                }
                Ok(Edge {
                    u,
                    v,
                    distance: dist[i],
                    similarity: sim[i],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dists = |name: &str| -> Result<Array2<f64>> {
            let (_, v) = b.reals(name)?;
            Array2::from_shape_vec((n, NUM_LABELS), v.to_vec()).map_err(|_| bad(name))
        };
        let p_tilde = dists("p_tilde")?;
        let q = dists("q")?;
        let docs = b.strings("sentence_docs")?;
        let (_, idx) = b.naturals("sentence_indices")?;
        if docs.len() != idx.len() {
            return Err(bad("sentence_indices"));
        }
        let sentence_keys: Vec<(String, usize)> = docs.iter().cloned().zip(idx.iter().map(|&i| i as usize)).collect();
        let mut starts = vec![0; sentence_keys.len() + 1];
        for r in &nodes {
            if r.sentence >= sentence_keys.len() {
                return Err(bad("node_sentence"));
            }
            starts[r.sentence + 1] += 1;
        }
        for i in 0..sentence_keys.len() {
            starts[i + 1] += starts[i];
        }
        let (_, sigma) = b.reals("sigma")?;
        let sigma = *sigma.first().ok_or_else(|| bad("sigma"))?;
        Ok(PropagationGraph {
            sentence_keys,
            sentence_starts: starts,
            nodes,
            gold,
            edges,
            sigma,
            k,
            p_tilde,
            q,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_graph() -> PropagationGraph {
        let corpus = synthetic::labeled_corpus(6, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let table = EmbeddingTable::random(&corpus, 6, &mut rng);
        let refs: Vec<&LabeledSentence> = corpus.iter().collect();
        let labeled: Vec<bool> = (0..refs.len()).map(|i| i % 2 == 0).collect();
        PropagationGraph::build(&refs, &labeled, &table, 8, 3, SigmaMode::MeanKnnDistance).unwrap()
    }

    #[test]
    fn one_node_per_token_and_symmetric_edges() {
        let corpus = synthetic::labeled_corpus(6, 1);
        let g = toy_graph();
        assert_eq!(g.node_count(), corpus.iter().map(|s| s.len()).sum::<usize>());
        let adj = g.adjacency();
        for (u, list) in adj.iter().enumerate() {
            assert!(list.len() >= 3);
            for &(v, s) in list {
                assert!(adj[v].iter().any(|&(w, t)| w == u && t == s));
            }
        }
        assert!(g.gold[g.sentence_rows(1)].iter().all(Option::is_none));
        assert!(g.gold[g.sentence_rows(0)].iter().all(Option::is_some));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut g = toy_graph();
        g.propagate(&PropagationConfig { mu: 0.5, nu: 0.1, ..Default::default() }).unwrap();
        let bytes = g.to_bytes();
        assert_eq!(&bytes[..6], b"STGRF1");
        let back = PropagationGraph::from_bytes(&bytes).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.q_for("synthetic", 2).unwrap(), g.sentence_q(2));
    }
}
