//! Synthetic datasets: stochastic block models, Erdős–Rényi and
//! Barabási–Albert graphs with Gaussian node features.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::dataset::{DatasetBundle, LinkSplits, Splits};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::{gaussian_matrix, Purpose, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GraphModel {
    Sbm {
        block_sizes: Vec<usize>,
        p_in: f64,
        p_out: f64,
    },
    ErdosRenyi {
        n: usize,
        p: f64,
    },
    BarabasiAlbert {
        n: usize,
        attach: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub model: GraphModel,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    /// Euclidean distance between any two class means.
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Fraction of edges held out for validation and, separately, for test.
    #[serde(default)]
    pub link_holdout: Option<f64>,
}

fn default_feature_dim() -> usize {
    16
}

fn default_separation() -> f64 {
    1.0
}

impl SyntheticSpec {
    /// Default features, no held-out edges.
    pub fn new(model: GraphModel) -> Self {
        Self {
            model,
            feature_dim: default_feature_dim(),
            separation: default_separation(),
            link_holdout: None,
        }
    }

    /// Two-block SBM with the given size per block.
    pub fn two_block_sbm(block: usize, p_in: f64, p_out: f64) -> Self {
        Self::new(GraphModel::Sbm {
            block_sizes: vec![block, block],
            p_in,
            p_out,
        })
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParams(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

fn sbm_edges(blocks: &[usize], p_in: f64, p_out: f64, rng: &mut RngStream) -> (usize, Vec<usize>, Vec<(usize, usize)>) {
    let labels: Vec<usize> = blocks
        .iter()
        .enumerate()
        .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
        .collect();
    let n = labels.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if rng.uniform() < p {
                edges.push((u, v));
            }
        }
    }
    (n, labels, edges)
}

fn erdos_renyi_edges(n: usize, p: f64, rng: &mut RngStream) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.uniform() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Preferential attachment seeded by a clique on `attach + 1` nodes.
fn barabasi_albert_edges(n: usize, attach: usize, rng: &mut RngStream) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    // Every edge endpoint once; drawing uniformly from it is degree-proportional.
    let mut endpoints = Vec::new();
    for u in 0..=attach {
        for v in (u + 1)..=attach {
            edges.push((u, v));
            endpoints.extend([u, v]);
        }
    }
    for new in (attach + 1)..n {
        let mut targets = HashSet::new();
        while targets.len() < attach {
            targets.insert(endpoints[rng.below(endpoints.len())]);
        }
        let mut targets: Vec<usize> = targets.into_iter().collect();
        targets.sort_unstable();
        for t in targets {
            edges.push((t, new));
            endpoints.extend([t, new]);
        }
    }
    edges
}

fn shuffle<T>(items: &mut [T], rng: &mut RngStream) {
    for i in (1..items.len()).rev() {
        items.swap(i, rng.below(i + 1));
    }
}

/// 60/20/20 split of `nodes` after shuffling.
fn split_group(nodes: &mut [usize], rng: &mut RngStream, splits: &mut Splits) {
    shuffle(nodes, rng);
    let n = nodes.len();
    let train = (n * 3) / 5;
    let valid = n / 5;
    splits.train.extend_from_slice(&nodes[..train]);
    splits.valid.extend_from_slice(&nodes[train..train + valid]);
    splits.test.extend_from_slice(&nodes[train + valid..]);
}

/// Distinct node pairs `(u < v)` that are neither self-pairs nor in
/// `forbidden`.
pub fn sample_non_edges(
    n: usize,
    forbidden: &HashSet<(usize, usize)>,
    count: usize,
    rng: &mut RngStream,
) -> Result<Vec<(usize, usize)>> {
    let available = (n * n.saturating_sub(1) / 2).saturating_sub(forbidden.len());
    if count > available {
        return Err(Error::InsufficientNodes {
            what: "non-edges",
            needed: count,
            found: available,
        });
    }
    let mut chosen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a = rng.below(n);
        let b = rng.below(n);
        if a == b {
            continue;
        }
        let pair = (a.min(b), a.max(b));
        if forbidden.contains(&pair) || !chosen.insert(pair) {
            continue;
        }
        out.push(pair);
    }
    Ok(out)
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<DatasetBundle> {
    let base = RngStream::new(seed, Purpose::Data);
    let mut graph_rng = base.derive(0);
    let (n, labels, edges) = match &spec.model {
        GraphModel::Sbm {
            block_sizes,
            p_in,
            p_out,
        } => {
            check_probability("p_in", *p_in)?;
            check_probability("p_out", *p_out)?;
            if block_sizes.is_empty() || block_sizes.contains(&0) {
                return Err(Error::InvalidParams("SBM blocks must be nonempty".into()));
            }
            let (n, labels, edges) = sbm_edges(block_sizes, *p_in, *p_out, &mut graph_rng);
            (n, Some(labels), edges)
        }
        GraphModel::ErdosRenyi { n, p } => {
            check_probability("p", *p)?;
            if *n == 0 {
                return Err(Error::InvalidParams("graph needs at least one node".into()));
            }
            (*n, None, erdos_renyi_edges(*n, *p, &mut graph_rng))
        }
        GraphModel::BarabasiAlbert { n, attach } => {
            if *attach == 0 || *attach >= *n {
                return Err(Error::InvalidParams(format!(
                    "need 1 <= attach < n, got attach={attach}, n={n}"
                )));
            }
            (*n, None, barabasi_albert_edges(*n, *attach, &mut graph_rng))
        }
    };
    if spec.feature_dim == 0 {
        return Err(Error::InvalidParams("feature_dim must be positive".into()));
    }
    if !(spec.separation >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "separation {} must be nonnegative",
            spec.separation
        )));
    }

    let mut feature_rng = base.derive(1);
    let mut features = gaussian_matrix(n, spec.feature_dim, 1.0, &mut feature_rng);
    if let Some(labels) = &labels {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        if classes > spec.feature_dim {
            return Err(Error::InvalidParams(format!(
                "{classes} classes need feature_dim >= {classes}, got {}",
                spec.feature_dim
            )));
        }
        // Class c sits at (μ/√2)·e_c, so every pair of means is μ apart.
        let offset = spec.separation / 2f64.sqrt();
        for (i, &c) in labels.iter().enumerate() {
            features[(i, c)] += offset;
        }
    }

    let mut split_rng = base.derive(2);
    let mut splits = Splits::default();
    match &labels {
        Some(labels) => {
            let classes = labels.iter().max().map_or(0, |m| m + 1);
            for c in 0..classes {
                let mut group: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                split_group(&mut group, &mut split_rng, &mut splits);
            }
        }
        None => split_group(&mut (0..n).collect::<Vec<_>>(), &mut split_rng, &mut splits),
    }
    splits.train.sort_unstable();
    splits.valid.sort_unstable();
    splits.test.sort_unstable();

    let full = Graph::build(&edges, n)?;
    let (graph, links) = match spec.link_holdout {
        None => (full, None),
        Some(frac) => {
            if !(frac > 0.0 && frac < 0.5) {
                return Err(Error::InvalidParams(format!(
                    "link_holdout {frac} must lie in (0, 0.5)"
                )));
            }
            let mut link_rng = base.derive(3);
            let mut pool = full.edges().to_vec();
            shuffle(&mut pool, &mut link_rng);
            let held = (pool.len() as f64 * frac).round() as usize;
            let pos_valid = pool[..held].to_vec();
            let pos_test = pool[held..2 * held].to_vec();
            let pos_train = pool[2 * held..].to_vec();
            let forbidden: HashSet<(usize, usize)> = full.edges().iter().copied().collect();
            let negatives = sample_non_edges(n, &forbidden, 2 * held, &mut link_rng)?;
            let links = LinkSplits {
                pos_train: pos_train.clone(),
                pos_valid,
                pos_test,
                neg_valid: negatives[..held].to_vec(),
                neg_test: negatives[held..].to_vec(),
            };
            (Graph::build(&pos_train, n)?, Some(links))
        }
    };

    let bundle = DatasetBundle {
        graph,
        features,
        labels,
        splits,
        links,
    };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_blocks_are_disjoint_cliques() {
        let b = generate_synthetic(&SyntheticSpec::two_block_sbm(5, 1.0, 0.0), 1).unwrap();
        assert_eq!(b.graph.num_edges(), 2 * 10);
        let labels = b.labels.unwrap();
        for &(u, v) in b.graph.edges() {
            assert_eq!(labels[u], labels[v]);
        }
        assert!(b.graph.degrees().iter().all(|&d| d == 4));
    }

    #[test]
    fn empty_erdos_renyi_loads() {
        let spec = SyntheticSpec {
            model: GraphModel::ErdosRenyi { n: 12, p: 0.0 },
            feature_dim: 3,
            separation: 1.0,
            link_holdout: None,
        };
        let b = generate_synthetic(&spec, 2).unwrap();
        assert_eq!(b.graph.num_edges(), 0);
        let tmp = tempfile::tempdir().unwrap();
        super::super::save_dataset(&b, tmp.path()).unwrap();
        let back = super::super::load_dataset(tmp.path()).unwrap();
        assert_eq!(back.num_nodes(), 12);
    }

    #[test]
    fn barabasi_albert_degrees() {
        let spec = SyntheticSpec {
            model: GraphModel::BarabasiAlbert { n: 100, attach: 3 },
            feature_dim: 4,
            separation: 0.0,
            link_holdout: None,
        };
        let b = generate_synthetic(&spec, 3).unwrap();
        assert_eq!(b.graph.num_edges(), 6 + 3 * 96);
        assert!(b.graph.degrees().iter().all(|&d| d >= 3));
    }

    #[test]
    fn stratified_split_proportions() {
        let b = generate_synthetic(&SyntheticSpec::two_block_sbm(200, 0.1, 0.01), 4).unwrap();
        assert_eq!(b.splits.train.len(), 240);
        assert_eq!(b.splits.valid.len(), 80);
        assert_eq!(b.splits.test.len(), 80);
        let labels = b.labels.unwrap();
        assert_eq!(b.splits.test.iter().filter(|&&i| labels[i] == 0).count(), 40);
    }

    #[test]
    fn class_means_are_separated() {
        let mut spec = SyntheticSpec::two_block_sbm(2000, 0.0, 0.0);
        spec.separation = 3.0;
        let b = generate_synthetic(&spec, 5).unwrap();
        let labels = b.labels.unwrap();
        let mut means = nalgebra::DMatrix::<f64>::zeros(2, spec.feature_dim);
        for (i, &c) in labels.iter().enumerate() {
            for j in 0..spec.feature_dim {
                means[(c, j)] += b.features[(i, j)] / 2000.0;
            }
        }
        let dist = (means.row(0) - means.row(1)).norm();
        assert!((dist - 3.0).abs() < 0.2, "{dist}");
    }

    #[test]
    fn link_holdout_removes_held_edges() {
        let mut spec = SyntheticSpec::two_block_sbm(30, 0.3, 0.02);
        spec.link_holdout = Some(0.1);
        let b = generate_synthetic(&spec, 6).unwrap();
        let links = b.links.as_ref().unwrap();
        assert!(!links.pos_test.is_empty());
        assert_eq!(links.pos_test.len(), links.neg_test.len());
        for &(u, v) in links.pos_valid.iter().chain(&links.pos_test) {
            assert!(!b.graph.has_edge(u, v));
        }
        assert_eq!(b.graph.num_edges(), links.pos_train.len());
    }

    #[test]
    fn invalid_parameters() {
        let bad = SyntheticSpec::two_block_sbm(5, 1.5, 0.0);
        assert!(matches!(generate_synthetic(&bad, 1), Err(Error::InvalidParams(_))));
        let ba = SyntheticSpec {
            model: GraphModel::BarabasiAlbert { n: 3, attach: 3 },
            feature_dim: 2,
            separation: 0.0,
            link_holdout: None,
        };
        assert!(generate_synthetic(&ba, 1).is_err());
    }
}
