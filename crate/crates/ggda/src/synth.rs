//! Synthetic scenario generators: contextual stochastic block models and
//! multi-step class-wise feature-shift chains.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{AttributedGraph, HistogramMode, StructureMode};

#[derive(Debug, Clone)]
pub struct CsbmConfig {
    pub nodes_per_class: usize,
    pub n_classes: usize,
    /// One feature-space mean vector per class.
    pub class_means: Vec<Vec<f64>>,
    /// Isotropic covariance scale; per-coordinate variance.
    pub cov_scale: f64,
    pub p_intra: f64,
    pub p_inter: f64,
    /// Fraction of intra-class edges replaced by edges between the most
    /// feature-dissimilar unconnected same-class pairs.
    pub dissimilar_rewire_frac: f64,
    pub seed: u64,
}

impl Default for CsbmConfig {
    fn default() -> Self {
        CsbmConfig {
            nodes_per_class: 100,
            n_classes: 3,
            class_means: vec![vec![0.0, -3.0], vec![0.0, 0.0], vec![0.0, 3.0]],
            cov_scale: 0.5,
            p_intra: 0.1,
            p_inter: 0.02,
            dissimilar_rewire_frac: 0.0,
            seed: 0,
        }
    }
}

impl CsbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_class == 0 || self.n_classes == 0 {
            return Err(Error::config("need at least one node and one class"));
        }
        if self.class_means.len() != self.n_classes {
            return Err(Error::config(format!(
                "{} class means for {} classes",
                self.class_means.len(),
                self.n_classes
            )));
        }
        let d = self.class_means[0].len();
        if d == 0 || self.class_means.iter().any(|m| m.len() != d) {
            return Err(Error::config("class means must share a positive dimension"));
        }
        if !(self.cov_scale >= 0.0) || !self.cov_scale.is_finite() {
            return Err(Error::config("cov_scale must be finite and non-negative"));
        }
        for (name, p) in [("p_intra", self.p_intra), ("p_inter", self.p_inter)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.dissimilar_rewire_frac) {
            return Err(Error::config("dissimilar_rewire_frac must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// A generated CSBM graph plus the rewiring bookkeeping.
#[derive(Debug, Clone)]
pub struct CsbmSample {
    pub graph: AttributedGraph,
    /// round(frac * intra_edge_count) rewires were requested.
    pub rewire_requested: usize,
    /// How many were possible; the shortfall is requested - applied.
    pub rewire_applied: usize,
}

/// Samples a labeled CSBM graph: Gaussian features per class, Bernoulli
/// edges by class pair, then dissimilar rewiring of intra-class edges.
pub fn csbm_generate(cfg: &CsbmConfig) -> Result<CsbmSample> {
    cfg.validate()?;
    let npc = cfg.nodes_per_class;
    let n = npc * cfg.n_classes;
    let d = cfg.class_means[0].len();
    let class_of = |v: usize| v / npc;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let std = cfg.cov_scale.sqrt();
    let mut features = Array2::zeros((n, d));
    for v in 0..n {
        let mean = &cfg.class_means[class_of(v)];
        for j in 0..d {
            let noise = if std > 0.0 {
                Normal::new(0.0, std).unwrap().sample(&mut rng)
            } else {
                0.0
            };
            features[(v, j)] = mean[j] + noise;
        }
    }

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if class_of(u) == class_of(v) {
                cfg.p_intra
            } else {
                cfg.p_inter
            };
            if p > 0.0 && rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }

    let feature_dist = |u: usize, v: usize| {
        (0..d)
            .map(|j| (features[(u, j)] - features[(v, j)]).powi(2))
            .sum::<f64>()
            .sqrt()
    };

    let intra: Vec<usize> = (0..edges.len())
        .filter(|&i| class_of(edges[i].0) == class_of(edges[i].1))
        .collect();
    let requested = (cfg.dissimilar_rewire_frac * intra.len() as f64).round() as usize;
    let mut applied = 0;
    if requested > 0 {
        let existing: std::collections::HashSet<(usize, usize)> = edges.iter().cloned().collect();
        let mut candidates: Vec<(usize, usize)> = Vec::new();
        for c in 0..cfg.n_classes {
            for u in (c * npc)..((c + 1) * npc) {
                for v in (u + 1)..((c + 1) * npc) {
                    if !existing.contains(&(u, v)) {
                        candidates.push((u, v));
                    }
                }
            }
        }
        candidates.sort_by(|a, b| {
            feature_dist(b.0, b.1)
                .partial_cmp(&feature_dist(a.0, a.1))
                .unwrap()
                .then(a.cmp(b))
        });
        applied = requested.min(candidates.len()).min(intra.len());
        let mut removable = intra.clone();
        removable.shuffle(&mut rng);
        let removed: std::collections::HashSet<usize> =
            removable.into_iter().take(applied).collect();
        edges = edges
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, e)| e)
            .collect();
        edges.extend(candidates.into_iter().take(applied));
    }
    edges.sort_unstable();

    let labels: Vec<Option<usize>> = (0..n).map(|v| Some(class_of(v))).collect();
    let graph = AttributedGraph::new(
        features,
        edges,
        labels,
        cfg.n_classes,
        StructureMode::Adjacency,
        HistogramMode::Uniform,
    )?;
    Ok(CsbmSample {
        graph,
        rewire_requested: requested,
        rewire_applied: applied,
    })
}

#[derive(Debug, Clone)]
pub struct ShiftConfig {
    /// Number of shifted graphs to produce beyond the input.
    pub steps: usize,
    /// Explicit per-class offset vectors; drawn from Gaussian noise when
    /// absent.
    pub offsets: Option<Vec<Vec<f64>>>,
    /// Noise scale in units of the per-dimension feature std.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            steps: 5,
            offsets: None,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

/// Applies cumulative class-wise feature shifts: step s moves every class-c
/// vertex by s * offset_c. Structure and labels are untouched; step 0 is the
/// input itself.
pub fn multistep_shift(graph: &AttributedGraph, cfg: &ShiftConfig) -> Result<Vec<AttributedGraph>> {
    if cfg.steps == 0 {
        return Err(Error::config("steps must be at least 1"));
    }
    if !graph.is_fully_labeled() {
        return Err(Error::invalid("class-wise shifts need a fully labeled graph"));
    }
    if !(cfg.noise_scale >= 0.0) || !cfg.noise_scale.is_finite() {
        return Err(Error::config("noise_scale must be finite and non-negative"));
    }
    let d = graph.dim();
    let n = graph.n();
    let offsets: Vec<Vec<f64>> = match &cfg.offsets {
        Some(given) => {
            if given.len() != graph.n_classes || given.iter().any(|o| o.len() != d) {
                return Err(Error::config(format!(
                    "offsets must be {} vectors of dimension {d}",
                    graph.n_classes
                )));
            }
            given.clone()
        }
        None => {
            // Per-dimension std of the input features sets the noise unit.
            let stds: Vec<f64> = (0..d)
                .map(|j| {
                    let col = graph.features.column(j);
                    let mean = col.sum() / n as f64;
                    (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
                })
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..graph.n_classes)
                .map(|_| {
                    stds.iter()
                        .map(|&s| {
                            let sigma = cfg.noise_scale * s;
                            if sigma > 0.0 {
                                Normal::new(0.0, sigma).unwrap().sample(&mut rng)
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect()
        }
    };

    let mut out = Vec::with_capacity(cfg.steps + 1);
    out.push(graph.clone());
    for s in 1..=cfg.steps {
        let mut features = graph.features.clone();
        for v in 0..n {
            let offset = &offsets[graph.labels[v].unwrap()];
            for j in 0..d {
                features[(v, j)] += s as f64 * offset[j];
            }
        }
        out.push(AttributedGraph::from_parts(
            features,
            graph.edges.clone(),
            graph.structure.clone(),
            graph.hist.clone(),
            graph.labels.clone(),
            graph.n_classes,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_csbm_has_exact_class_counts_and_is_deterministic() {
        let cfg = CsbmConfig::default();
        let a = csbm_generate(&cfg).unwrap();
        let b = csbm_generate(&cfg).unwrap();
        assert_eq!(a.graph.n(), 300);
        for c in 0..3 {
            let count = a
                .graph
                .labels
                .iter()
                .filter(|l| **l == Some(c))
                .count();
            assert_eq!(count, 100);
        }
        assert_eq!(a.graph.edges, b.graph.edges);
        assert_eq!(a.graph.features, b.graph.features);
        assert!(a.graph.is_fully_labeled());

        // Per-class sample means stay within 4 std errors of the target.
        let se = (0.5f64).sqrt() / (100f64).sqrt();
        for c in 0..3 {
            for j in 0..2 {
                let mean: f64 = (c * 100..(c + 1) * 100)
                    .map(|v| a.graph.features[(v, j)])
                    .sum::<f64>()
                    / 100.0;
                let want = cfg.class_means[c][j];
                assert!(
                    (mean - want).abs() <= 4.0 * se,
                    "class {c} dim {j}: {mean} vs {want}"
                );
            }
        }
    }

    #[test]
    fn zero_probabilities_give_an_edgeless_graph() {
        let cfg = CsbmConfig {
            p_intra: 0.0,
            p_inter: 0.0,
            nodes_per_class: 10,
            ..CsbmConfig::default()
        };
        let s = csbm_generate(&cfg).unwrap();
        assert!(s.graph.edges.is_empty());
        assert_eq!(s.rewire_requested, 0);
    }

    #[test]
    fn intra_edge_count_concentrates_around_the_binomial_mean() {
        let cfg = CsbmConfig {
            seed: 11,
            ..CsbmConfig::default()
        };
        let s = csbm_generate(&cfg).unwrap();
        let class_of = |v: usize| v / 100;
        let intra = s
            .graph
            .edges
            .iter()
            .filter(|(u, v)| class_of(*u) == class_of(*v))
            .count() as f64;
        // 3 * C(100,2) pair trials at p = 0.1.
        let trials = 3.0f64 * 4950.0;
        let mean = trials * 0.1;
        let sigma = (trials * 0.1 * 0.9).sqrt();
        assert!(
            (intra - mean).abs() <= 3.0 * sigma,
            "intra count {intra} vs mean {mean}"
        );
    }

    #[test]
    fn rewiring_preserves_counts_and_targets_dissimilar_pairs() {
        let base_cfg = CsbmConfig {
            nodes_per_class: 40,
            seed: 3,
            ..CsbmConfig::default()
        };
        let base = csbm_generate(&base_cfg).unwrap();
        let cfg = CsbmConfig {
            dissimilar_rewire_frac: 0.25,
            ..base_cfg
        };
        let s = csbm_generate(&cfg).unwrap();
        let class_of = |v: usize| v / 40;
        let intra = |g: &AttributedGraph| {
            g.edges
                .iter()
                .filter(|(u, v)| class_of(*u) == class_of(*v))
                .count()
        };
        assert_eq!(s.graph.edges.len(), base.graph.edges.len());
        assert_eq!(intra(&s.graph), intra(&base.graph));
        assert_eq!(
            s.rewire_requested,
            (0.25 * intra(&base.graph) as f64).round() as usize
        );
        assert_eq!(s.rewire_applied, s.rewire_requested);

        // No duplicates, self loops, or inter-class additions.
        let mut seen = std::collections::HashSet::new();
        for &(u, v) in &s.graph.edges {
            assert!(u < v);
            assert!(seen.insert((u, v)));
        }
        let base_set: std::collections::HashSet<(usize, usize)> =
            base.graph.edges.iter().cloned().collect();
        let added: Vec<(usize, usize)> = s
            .graph
            .edges
            .iter()
            .filter(|e| !base_set.contains(e))
            .cloned()
            .collect();
        assert_eq!(added.len(), s.rewire_applied);
        assert!(added.iter().all(|&(u, v)| class_of(u) == class_of(v)));

        // Greedy property: every added pair is at least as dissimilar as
        // every unconnected same-class pair left untouched.
        let dist = |u: usize, v: usize| {
            (0..2)
                .map(|j| (s.graph.features[(u, j)] - s.graph.features[(v, j)]).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let min_added = added
            .iter()
            .map(|&(u, v)| dist(u, v))
            .fold(f64::INFINITY, f64::min);
        let final_set: std::collections::HashSet<(usize, usize)> =
            s.graph.edges.iter().cloned().collect();
        let mut max_skipped: f64 = 0.0;
        for c in 0..3 {
            for u in (c * 40)..((c + 1) * 40) {
                for v in (u + 1)..((c + 1) * 40) {
                    if !base_set.contains(&(u, v)) && !final_set.contains(&(u, v)) {
                        max_skipped = max_skipped.max(dist(u, v));
                    }
                }
            }
        }
        assert!(min_added >= max_skipped - 1e-12);
    }

    #[test]
    fn infeasible_rewiring_reports_its_shortfall() {
        // A complete single-class graph has no unconnected pairs to use.
        let cfg = CsbmConfig {
            nodes_per_class: 4,
            n_classes: 1,
            class_means: vec![vec![0.0, 0.0]],
            p_intra: 1.0,
            p_inter: 0.0,
            dissimilar_rewire_frac: 0.5,
            ..CsbmConfig::default()
        };
        let s = csbm_generate(&cfg).unwrap();
        assert_eq!(s.rewire_requested, 3);
        assert_eq!(s.rewire_applied, 0);
        assert_eq!(s.graph.edges.len(), 6);
    }

    #[test]
    fn shift_chain_drifts_class_means_linearly() {
        let cfg = CsbmConfig {
            nodes_per_class: 15,
            seed: 5,
            ..CsbmConfig::default()
        };
        let g = csbm_generate(&cfg).unwrap().graph;
        let offsets = vec![vec![1.0, 0.0], vec![0.0, -2.0], vec![0.5, 0.5]];
        let shift = ShiftConfig {
            steps: 4,
            offsets: Some(offsets.clone()),
            ..ShiftConfig::default()
        };
        let chain = multistep_shift(&g, &shift).unwrap();
        assert_eq!(chain.len(), 5);
        assert_eq!(chain[0].features, g.features);
        assert_eq!(chain[0].edges, g.edges);
        for (s, stage) in chain.iter().enumerate() {
            assert_eq!(stage.edges, g.edges);
            assert_eq!(stage.labels, g.labels);
            for c in 0..3 {
                for j in 0..2 {
                    let ids: Vec<usize> = (0..g.n())
                        .filter(|&v| g.labels[v] == Some(c))
                        .collect();
                    let before: f64 =
                        ids.iter().map(|&v| g.features[(v, j)]).sum::<f64>() / ids.len() as f64;
                    let after: f64 = ids
                        .iter()
                        .map(|&v| stage.features[(v, j)])
                        .sum::<f64>()
                        / ids.len() as f64;
                    let want = before + s as f64 * offsets[c][j];
                    assert!(
                        (after - want).abs() < 1e-6,
                        "step {s} class {c} dim {j}: {after} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_scale_noise_keeps_every_step_identical() {
        let cfg = CsbmConfig {
            nodes_per_class: 10,
            seed: 7,
            ..CsbmConfig::default()
        };
        let g = csbm_generate(&cfg).unwrap().graph;
        let chain = multistep_shift(
            &g,
            &ShiftConfig {
                steps: 3,
                noise_scale: 0.0,
                ..ShiftConfig::default()
            },
        )
        .unwrap();
        for stage in &chain {
            assert_eq!(stage.features, g.features);
        }

        let mut unlabeled = g.clone();
        unlabeled.labels[0] = None;
        assert!(multistep_shift(&unlabeled, &ShiftConfig::default()).is_err());
        assert!(multistep_shift(
            &g,
            &ShiftConfig {
                steps: 0,
                ..ShiftConfig::default()
            }
        )
        .is_err());
    }
}
