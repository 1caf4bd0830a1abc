//! Domain progression over the pooled graph sequence.
//!
//! The pool (source, intermediates, target) is treated as one batched graph.
//! Starting from the uniform source domain, each stage trains a fresh model,
//! scores never-labeled vertices by margin with a distance penalty, selects
//! the top scorers per class, decays the weights of vertices whose stored
//! label lost confidence under the new model, and advances to the next
//! domain, truncated to the heaviest `cap_k` entries. The loop stops once
//! enough target vertices carry labels, and a final model trained on the
//! last domain predicts the target.

use std::collections::HashSet;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::fgw::euclidean_cost;
use crate::generation::derive_seed;
use crate::gnn::{
    normalized_adjacency, predict, top_two_margin, train, Csr, GnnConfig, ModelParams,
    TrainTarget, TrainedModel,
};
use crate::graph::{DomainEntry, DomainMeasure, GraphPool};
use crate::ot::wasserstein_exact;

#[derive(Debug, Clone)]
pub struct ProgressionConfig {
    /// Distance penalty strength in the selection score.
    pub eta: f64,
    /// Per-class selection budget as a fraction of source class counts.
    pub kappa: f64,
    /// Mass decay rate for vertices whose label score degrades.
    pub beta: f64,
    /// Stop once the unlabeled fraction of the target drops to this value.
    pub ru_target: f64,
    /// Domain support cap; defaults to the mean of source and target sizes.
    pub cap_k: Option<usize>,
    /// Safety bound on the number of stages.
    pub max_stages: usize,
    pub train: GnnConfig,
    pub seed: u64,
}

impl Default for ProgressionConfig {
    fn default() -> Self {
        ProgressionConfig {
            eta: 1.0,
            kappa: 0.1,
            beta: 5.0,
            ru_target: 0.1,
            cap_k: None,
            max_stages: 100,
            train: GnnConfig::default(),
            seed: 0,
        }
    }
}

impl ProgressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::config("eta must be finite and non-negative"));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::config("kappa must be positive"));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::config("beta must be finite and non-negative"));
        }
        if !(self.ru_target >= 0.0 && self.ru_target < 1.0) {
            return Err(Error::config("ru_target must lie in [0, 1)"));
        }
        if self.cap_k == Some(0) {
            return Err(Error::config("cap_k must be at least 1"));
        }
        if self.max_stages == 0 {
            return Err(Error::config("max_stages must be at least 1"));
        }
        Ok(())
    }
}

/// Diagnostics for one selected vertex.
#[derive(Debug, Clone)]
pub struct SelectionRecord {
    pub vertex: usize,
    pub pseudo_label: usize,
    pub score: f64,
    pub distance: f64,
    pub margin: f64,
}

/// Everything recorded about one progression stage.
#[derive(Debug, Clone)]
pub struct StageLog {
    pub stage: usize,
    pub selected: Vec<SelectionRecord>,
    /// (vertex, decay factor) for current-support vertices, stages >= 1.
    pub decays: Vec<(usize, f64)>,
    /// Normalized next-domain weights before truncation.
    pub domain_weights: Vec<(usize, f64)>,
    /// Support size after truncation.
    pub domain_size: usize,
    /// Fraction of target vertices that have ever carried a label.
    pub labeled_target_fraction: f64,
    /// Fraction of the target's support present in the current domain; the
    /// stop rule watches this, not the cumulative label count.
    pub domain_target_share: f64,
    /// Embedding-space W1 between this domain and the next.
    pub delta_proxy: f64,
    /// Embedding-space W1 between the next domain and the uniform target.
    pub dist_to_target: f64,
    pub warning: Option<String>,
}

/// Margin scores with a normalized-distance penalty: c_u = margin_u *
/// exp(-(d_u / max d) * eta), d_u the Euclidean embedding distance to the
/// nearest labeled vertex. All distances zero drops the penalty entirely.
pub fn selection_scores(
    embeddings: &Array2<f64>,
    margins: &[f64],
    labeled: &[usize],
    unlabeled: &[usize],
    eta: f64,
) -> Result<Vec<f64>> {
    if labeled.is_empty() {
        return Err(Error::invalid("selection needs at least one labeled vertex"));
    }
    if margins.len() != embeddings.nrows() {
        return Err(Error::invalid(format!(
            "{} margins for {} embedding rows",
            margins.len(),
            embeddings.nrows()
        )));
    }
    if unlabeled.is_empty() {
        return Ok(Vec::new());
    }
    let n = embeddings.nrows();
    if labeled.iter().chain(unlabeled.iter()).any(|&v| v >= n) {
        return Err(Error::invalid("vertex id out of embedding range"));
    }
    let gather = |ids: &[usize]| {
        let mut m = Array2::zeros((ids.len(), embeddings.ncols()));
        for (r, &v) in ids.iter().enumerate() {
            m.row_mut(r).assign(&embeddings.row(v));
        }
        m
    };
    let dist = euclidean_cost(&gather(unlabeled), &gather(labeled), false);
    let d: Vec<f64> = dist
        .rows()
        .into_iter()
        .map(|row| row.iter().cloned().fold(f64::INFINITY, f64::min))
        .collect();
    let d_max = d.iter().cloned().fold(0.0f64, f64::max);
    Ok(unlabeled
        .iter()
        .zip(d.iter())
        .map(|(&u, &du)| {
            let penalty = if d_max > 0.0 {
                (-(du / d_max) * eta).exp()
            } else {
                1.0
            };
            margins[u] * penalty
        })
        .collect())
}

/// Takes the top-scoring candidates per predicted class, at most
/// max(1, round(kappa * source_count)) each, ties broken by lower id.
/// Returns (vertex, pseudo-label) pairs sorted by vertex id.
pub fn select_vertices(
    candidates: &[usize],
    scores: &[f64],
    predicted: &[usize],
    kappa: f64,
    source_class_counts: &[usize],
) -> Result<Vec<(usize, usize)>> {
    if candidates.len() != scores.len() {
        return Err(Error::invalid("each candidate needs exactly one score"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("selection scores must be finite"));
    }
    let n_classes = source_class_counts.len();
    let mut per_class: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_classes];
    for (&v, &s) in candidates.iter().zip(scores.iter()) {
        let c = predicted[v];
        if c >= n_classes {
            return Err(Error::invalid(format!(
                "predicted class {c} exceeds {n_classes} classes"
            )));
        }
        per_class[c].push((v, s));
    }
    let mut selected = Vec::new();
    for (c, mut pool) in per_class.into_iter().enumerate() {
        let cap = ((kappa * source_class_counts[c] as f64).round() as usize).max(1);
        pool.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        selected.extend(pool.into_iter().take(cap).map(|(v, _)| (v, c)));
    }
    selected.sort_unstable_by_key(|&(v, _)| v);
    Ok(selected)
}

/// Decay factor from the change in a vertex's stored-label score. A ratio at
/// or above 1 keeps full mass; degradation decays exponentially with beta.
/// A non-positive previous score maps improvement to 1 and degradation to
/// the maximal decay exp(-beta).
pub fn mass_decay(prev_score: f64, new_score: f64, beta: f64) -> f64 {
    let ratio = if prev_score > 0.0 {
        new_score / prev_score
    } else if new_score >= prev_score {
        1.0
    } else {
        0.0
    };
    (-(1.0 - ratio.min(1.0)) * beta).exp()
}

/// The advanced domain plus its pre-truncation weight distribution.
#[derive(Debug, Clone)]
pub struct AdvancedDomain {
    pub next: DomainMeasure,
    pub pre_truncation: Vec<(usize, f64)>,
}

/// Builds the next domain: current entries re-weighted by their cumulative
/// decay mask plus unit-weight selected entries, truncated to the heaviest
/// `cap_k` (ties prefer later entry stages, then lower ids), renormalized.
pub fn advance_domain(
    current: &DomainMeasure,
    selected: Vec<DomainEntry>,
    decay_mask: Vec<f64>,
    cap_k: usize,
) -> Result<AdvancedDomain> {
    if cap_k == 0 {
        return Err(Error::invalid("cap_k must be at least 1"));
    }
    let support: HashSet<usize> = current.entries.iter().map(|e| e.vertex).collect();
    for e in &selected {
        if support.contains(&e.vertex) {
            return Err(Error::invalid(format!(
                "vertex {} is already in the current domain",
                e.vertex
            )));
        }
    }
    let mut entries: Vec<DomainEntry> = current
        .entries
        .iter()
        .map(|e| DomainEntry {
            weight: decay_mask[e.vertex],
            ..e.clone()
        })
        .collect();
    entries.extend(selected.into_iter().map(|e| DomainEntry {
        weight: 1.0,
        entry_stage: current.stage + 1,
        ..e
    }));
    let total: f64 = entries.iter().map(|e| e.weight).sum();
    if !(total > 0.0) {
        return Err(Error::numerical("next domain carries no mass"));
    }
    let pre_truncation: Vec<(usize, f64)> =
        entries.iter().map(|e| (e.vertex, e.weight / total)).collect();

    entries.sort_by(|a, b| {
        b.weight
            .partial_cmp(&a.weight)
            .unwrap()
            .then(b.entry_stage.cmp(&a.entry_stage))
            .then(a.vertex.cmp(&b.vertex))
    });
    entries.truncate(cap_k);
    let kept: f64 = entries.iter().map(|e| e.weight).sum();
    if !(kept > 0.0) {
        return Err(Error::numerical("truncation removed all domain mass"));
    }
    for e in &mut entries {
        e.weight /= kept;
    }
    entries.sort_unstable_by_key(|e| e.vertex);
    Ok(AdvancedDomain {
        next: DomainMeasure {
            stage: current.stage + 1,
            entries,
            decay_mask,
        },
        pre_truncation,
    })
}

/// Signed confidence of a stored label: its logit minus the best other-class
/// logit. Positive iff the model agrees with the label.
/// Trains on the union of pool graphs that hold at least one target row.
/// The pool carries no cross-graph edges, so rows in unrepresented graphs
/// never feed the loss or its gradient: fitting the restricted subpool is
/// exactly the full-pool fit, minus the dead rows' forward cost. Returned
/// parameters are row-count free and apply to the full pool unchanged.
fn train_on_active_graphs(
    pool: &GraphPool,
    adj: &Csr,
    features: &Array2<f64>,
    targets: &[TrainTarget],
    n_classes: usize,
    cfg: &GnnConfig,
) -> Result<TrainedModel> {
    let mut active = vec![false; pool.graphs.len()];
    for t in targets {
        active[pool.origin(t.row).0] = true;
    }
    if active.iter().all(|&a| a) {
        return train(adj, features, targets, n_classes, cfg, None);
    }

    let mut sub_offsets = vec![usize::MAX; pool.graphs.len()];
    let mut sub_total = 0usize;
    for (g, graph) in pool.graphs.iter().enumerate() {
        if active[g] {
            sub_offsets[g] = sub_total;
            sub_total += graph.n();
        }
    }
    let mut sub_features = Array2::zeros((sub_total, features.ncols()));
    let mut sub_edges = Vec::new();
    for (g, graph) in pool.graphs.iter().enumerate() {
        if !active[g] {
            continue;
        }
        let src = pool.offsets[g];
        let dst = sub_offsets[g];
        for v in 0..graph.n() {
            sub_features.row_mut(dst + v).assign(&features.row(src + v));
        }
        sub_edges.extend(graph.edges.iter().map(|&(u, v)| (dst + u, dst + v)));
    }
    let sub_targets: Vec<TrainTarget> = targets
        .iter()
        .map(|t| {
            let (g, v) = pool.origin(t.row);
            TrainTarget {
                row: sub_offsets[g] + v,
                ..*t
            }
        })
        .collect();
    let sub_adj = normalized_adjacency(sub_total, &sub_edges)?;
    train(&sub_adj, &sub_features, &sub_targets, n_classes, cfg, None)
}

fn stored_label_score(logits: &Array2<f64>, vertex: usize, label: usize) -> f64 {
    let row = logits.row(vertex);
    let best_other = row
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != label)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    row[label] - best_other
}

/// Caps each side of the stage-distance OT problems; supports above this are
/// represented by their heaviest entries (evenly spaced ones for uniform
/// targets) so the diagnostic stays cheap on large pools.
const PROXY_CAP: usize = 256;

/// W1 between two weighted vertex sets in embedding space, each side capped
/// at PROXY_CAP points by descending weight.
fn embedding_w1(
    embeddings: &Array2<f64>,
    a: &[(usize, f64)],
    b: &[(usize, f64)],
) -> Result<f64> {
    let shrink = |side: &[(usize, f64)]| {
        let mut sorted = side.to_vec();
        sorted.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
        sorted.truncate(PROXY_CAP);
        let total: f64 = sorted.iter().map(|e| e.1).sum();
        let ids: Vec<usize> = sorted.iter().map(|e| e.0).collect();
        let w: Vec<f64> = sorted.iter().map(|e| e.1 / total).collect();
        (ids, w)
    };
    let (ids_a, w_a) = shrink(a);
    let (ids_b, w_b) = shrink(b);
    let gather = |ids: &[usize]| {
        let mut m = Array2::zeros((ids.len(), embeddings.ncols()));
        for (r, &v) in ids.iter().enumerate() {
            m.row_mut(r).assign(&embeddings.row(v));
        }
        m
    };
    let cost = euclidean_cost(&gather(&ids_a), &gather(&ids_b), false);
    let out = wasserstein_exact(&cost, &Array1::from(w_a), &Array1::from(w_b), 1.0)?;
    Ok(out.value)
}

#[derive(Debug)]
pub struct GgdaOutcome {
    pub params: ModelParams,
    /// Predicted class per target vertex, in target-local order.
    pub predictions: Vec<usize>,
    pub stages: Vec<StageLog>,
    pub final_domain: DomainMeasure,
}

/// Runs the full progression loop on a pool whose first graph is the labeled
/// source and whose last graph is the target.
pub fn run_ggda(pool: &GraphPool, cfg: &ProgressionConfig) -> Result<GgdaOutcome> {
    cfg.validate()?;
    if pool.graphs.len() < 2 {
        return Err(Error::invalid("the pool needs a source and a target graph"));
    }
    let src = &pool.graphs[0];
    if !src.is_fully_labeled() {
        return Err(Error::invalid("the source graph must be fully labeled"));
    }
    let n_classes = pool.n_classes();
    if n_classes < 2 {
        return Err(Error::invalid("classification needs at least two classes"));
    }
    let tgt_index = pool.graphs.len() - 1;
    let target_start = pool.offsets[tgt_index];
    let n_t = pool.graphs[tgt_index].n();
    let total = pool.total();

    let features = pool.stacked_features();
    let adj = normalized_adjacency(total, &pool.union_edges)?;
    let cap_k = cfg
        .cap_k
        .unwrap_or_else(|| (((src.n() + n_t) as f64) / 2.0).round() as usize)
        .max(1);
    let mut source_class_counts = vec![0usize; n_classes];
    for l in &src.labels {
        source_class_counts[l.unwrap()] += 1;
    }

    let mut domain = DomainMeasure {
        stage: 0,
        entries: (0..src.n())
            .map(|v| DomainEntry {
                vertex: v,
                weight: 1.0 / src.n() as f64,
                label: src.labels[v].unwrap(),
                prev_score: f64::NAN,
                entry_stage: 0,
            })
            .collect(),
        decay_mask: vec![1.0; total],
    };
    let mut ever_labeled = vec![false; total];
    for v in 0..src.n() {
        ever_labeled[v] = true;
    }
    let mut labeled_target = 0usize;
    let target_uniform: Vec<(usize, f64)> = (0..n_t)
        .map(|v| (target_start + v, 1.0 / n_t as f64))
        .collect();

    let mut stages: Vec<StageLog> = Vec::new();
    loop {
        // Termination watches how much of the target's support sits inside
        // the current domain, not how many target vertices were ever labeled:
        // the domain is capped, so only vertices that survived decay and
        // truncation count as absorbed.
        let in_domain_target = domain
            .entries
            .iter()
            .filter(|e| e.vertex >= target_start)
            .count();
        let unlabeled_fraction = 1.0 - in_domain_target as f64 / n_t as f64;
        if unlabeled_fraction <= cfg.ru_target {
            break;
        }
        if domain.stage >= cfg.max_stages {
            if let Some(log) = stages.last_mut() {
                log.warning = Some(format!(
                    "stopped at the stage bound {} with unlabeled target fraction {unlabeled_fraction:.3}",
                    cfg.max_stages
                ));
            }
            break;
        }
        let t = domain.stage;
        let candidates: Vec<usize> = (0..total).filter(|&v| !ever_labeled[v]).collect();
        if candidates.is_empty() {
            stages.push(StageLog {
                stage: t,
                selected: Vec::new(),
                decays: Vec::new(),
                domain_weights: Vec::new(),
                domain_size: domain.entries.len(),
                labeled_target_fraction: labeled_target as f64 / n_t as f64,
                domain_target_share: in_domain_target as f64 / n_t as f64,
                delta_proxy: 0.0,
                dist_to_target: 0.0,
                warning: Some("no unlabeled candidates remain".to_string()),
            });
            break;
        }

        let targets: Vec<TrainTarget> = domain
            .entries
            .iter()
            .map(|e| TrainTarget {
                row: e.vertex,
                label: e.label,
                weight: e.weight,
            })
            .collect();
        let train_cfg = GnnConfig {
            seed: derive_seed(cfg.seed, 200, t as u64),
            ..cfg.train.clone()
        };
        // The pool has no cross-graph edges, so graphs without a domain entry
        // receive zero gradient; restricting the fit to graphs that hold
        // entries trains the exact same objective on far fewer rows.
        let model = train_on_active_graphs(pool, &adj, &features, &targets, n_classes, &train_cfg)?;
        let pred = predict(&model.params, &adj, &features)?;

        let support: Vec<usize> = domain.entries.iter().map(|e| e.vertex).collect();
        // Selection consumes probability margins, not raw logit gaps: logit
        // gaps grow without bound on inputs far outside the training range,
        // which would let extrapolated confidence at distant slices outrank
        // the distance penalty and break the gradual march. Probability
        // margins saturate at 1, so exp(-eta * d) decides among confident
        // candidates and selection stays near the domain frontier.
        let margins: Vec<f64> = pred
            .probabilities
            .rows()
            .into_iter()
            .map(|row| top_two_margin(row.iter().cloned()).1)
            .collect();
        let scores =
            selection_scores(&pred.embeddings, &margins, &support, &candidates, cfg.eta)?;
        let picked = select_vertices(
            &candidates,
            &scores,
            &pred.predicted,
            cfg.kappa,
            &source_class_counts,
        )?;

        // Diagnostics for the picked vertices reuse the candidate-sweep rows.
        let score_of: std::collections::HashMap<usize, f64> =
            candidates.iter().cloned().zip(scores.iter().cloned()).collect();
        let dists = {
            // Recompute the per-candidate nearest-labeled distances once for
            // the log; selection_scores already folded them into the scores.
            let gather = |ids: &[usize]| {
                let mut m = Array2::zeros((ids.len(), pred.embeddings.ncols()));
                for (r, &v) in ids.iter().enumerate() {
                    m.row_mut(r).assign(&pred.embeddings.row(v));
                }
                m
            };
            euclidean_cost(&gather(&candidates), &gather(&support), false)
        };
        let dist_of: std::collections::HashMap<usize, f64> = candidates
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let d = dists.row(i).iter().cloned().fold(f64::INFINITY, f64::min);
                (v, d)
            })
            .collect();
        let selected_records: Vec<SelectionRecord> = picked
            .iter()
            .map(|&(v, c)| SelectionRecord {
                vertex: v,
                pseudo_label: c,
                score: score_of[&v],
                distance: dist_of[&v],
                margin: margins[v],
            })
            .collect();

        // Refresh stored-label scores under the new model; decay mass where
        // the score degraded (target-origin vertices are exempt).
        let mut decay_mask = domain.decay_mask.clone();
        let mut decays = Vec::new();
        for e in &mut domain.entries {
            let now = stored_label_score(&pred.logits, e.vertex, e.label);
            if t >= 1 && e.vertex < target_start {
                let lambda = mass_decay(e.prev_score, now, cfg.beta);
                decay_mask[e.vertex] *= lambda;
                decays.push((e.vertex, lambda));
            }
            e.prev_score = now;
        }

        let selected_entries: Vec<DomainEntry> = picked
            .iter()
            .map(|&(v, c)| DomainEntry {
                vertex: v,
                weight: 1.0,
                label: c,
                prev_score: stored_label_score(&pred.logits, v, c),
                entry_stage: t + 1,
            })
            .collect();
        for &(v, _) in &picked {
            ever_labeled[v] = true;
            if v >= target_start {
                labeled_target += 1;
            }
        }

        let advanced = advance_domain(&domain, selected_entries, decay_mask, cap_k)?;
        let current_weighted: Vec<(usize, f64)> =
            domain.entries.iter().map(|e| (e.vertex, e.weight)).collect();
        let next_weighted: Vec<(usize, f64)> = advanced
            .next
            .entries
            .iter()
            .map(|e| (e.vertex, e.weight))
            .collect();
        let delta_proxy = embedding_w1(&pred.embeddings, &current_weighted, &next_weighted)?;
        let dist_to_target = embedding_w1(&pred.embeddings, &next_weighted, &target_uniform)?;

        let next_target_share = advanced
            .next
            .entries
            .iter()
            .filter(|e| e.vertex >= target_start)
            .count() as f64
            / n_t as f64;
        stages.push(StageLog {
            stage: t,
            selected: selected_records,
            decays,
            domain_weights: advanced.pre_truncation,
            domain_size: advanced.next.entries.len(),
            labeled_target_fraction: labeled_target as f64 / n_t as f64,
            domain_target_share: next_target_share,
            delta_proxy,
            dist_to_target,
            warning: None,
        });
        domain = advanced.next;
    }

    let targets: Vec<TrainTarget> = domain
        .entries
        .iter()
        .map(|e| TrainTarget {
            row: e.vertex,
            label: e.label,
            weight: e.weight,
        })
        .collect();
    let final_cfg = GnnConfig {
        seed: derive_seed(cfg.seed, 201, domain.stage as u64),
        ..cfg.train.clone()
    };
    let model = train(&adj, &features, &targets, n_classes, &final_cfg, None)?;
    let pred = predict(&model.params, &adj, &features)?;
    let predictions: Vec<usize> = (0..n_t).map(|v| pred.predicted[target_start + v]).collect();

    Ok(GgdaOutcome {
        params: model.params,
        predictions,
        stages,
        final_domain: domain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{disjoint_union, AttributedGraph, HistogramMode, StructureMode};
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scores_match_brute_force_on_random_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 12;
        let embeddings = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let margins: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let labeled = vec![0, 3, 7];
        let unlabeled = vec![1, 2, 4, 5, 6, 8, 9, 10, 11];
        let eta = 1.7;
        let scores =
            selection_scores(&embeddings, &margins, &labeled, &unlabeled, eta).unwrap();

        let dist = |a: usize, b: usize| {
            let diff = &embeddings.row(a) - &embeddings.row(b);
            diff.iter().map(|x| x * x).sum::<f64>().sqrt()
        };
        let d: Vec<f64> = unlabeled
            .iter()
            .map(|&u| labeled.iter().map(|&l| dist(u, l)).fold(f64::INFINITY, f64::min))
            .collect();
        let d_max = d.iter().cloned().fold(0.0f64, f64::max);
        for (i, &u) in unlabeled.iter().enumerate() {
            let want = margins[u] * (-(d[i] / d_max) * eta).exp();
            assert!((scores[i] - want).abs() < 1e-10, "vertex {u}");
        }

        // eta = 0 collapses to pure margins.
        let flat = selection_scores(&embeddings, &margins, &labeled, &unlabeled, 0.0).unwrap();
        for (i, &u) in unlabeled.iter().enumerate() {
            assert!((flat[i] - margins[u]).abs() < 1e-12);
        }
        // The farthest vertex gets exactly the e^{-eta} factor.
        let far = d.iter().position(|&x| x == d_max).unwrap();
        assert!(
            (scores[far] - margins[unlabeled[far]] * (-eta).exp()).abs() < 1e-12
        );
        // Coincident embeddings drop the penalty.
        let same = Array2::zeros((4, 2));
        let m = vec![0.5; 4];
        let s = selection_scores(&same, &m, &[0], &[1, 2, 3], 3.0).unwrap();
        assert!(s.iter().all(|&x| (x - 0.5).abs() < 1e-12));
        assert!(selection_scores(&same, &m, &[], &[1], 1.0).is_err());
        assert!(selection_scores(&same, &m, &[0], &[], 1.0).unwrap().is_empty());
    }

    #[test]
    fn selection_respects_per_class_caps_and_tie_breaks() {
        // 10 candidates, 2 classes, caps (2, 3).
        let candidates: Vec<usize> = (0..10).collect();
        let scores = vec![0.9, 0.8, 0.8, 0.1, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2];
        let predicted = vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
        let counts = vec![4, 6];
        let picked = select_vertices(&candidates, &scores, &predicted, 0.5, &counts).unwrap();
        // Class 0 cap 2: vertices 0 and 1 (score 0.8 tie broken toward id 1).
        // Class 1 cap 3: vertices 4, 5, 6.
        assert_eq!(picked, vec![(0, 0), (1, 0), (4, 1), (5, 1), (6, 1)]);

        // A huge kappa covers every candidate.
        let all = select_vertices(&candidates, &scores, &predicted, 100.0, &counts).unwrap();
        assert_eq!(all.len(), 10);

        // kappa -> 0+ keeps the floor of one per class.
        let floor = select_vertices(&candidates, &scores, &predicted, 1e-6, &counts).unwrap();
        assert_eq!(floor, vec![(0, 0), (4, 1)]);

        assert!(select_vertices(&candidates, &scores[..5], &predicted, 0.5, &counts).is_err());
    }

    #[test]
    fn mass_decay_limits_and_range() {
        let beta = 2.5;
        assert_eq!(mass_decay(0.4, 0.4, beta), 1.0);
        assert_eq!(mass_decay(0.4, 0.9, beta), 1.0);
        assert!((mass_decay(0.4, 0.0, beta) - (-beta).exp()).abs() < 1e-12);
        assert!((mass_decay(0.4, 0.2, beta) - (-0.5 * beta).exp()).abs() < 1e-12);
        // beta = 0 is the self-training limit.
        assert_eq!(mass_decay(0.4, -0.3, 0.0), 1.0);
        // Non-positive previous scores: improvement keeps mass, degradation
        // decays fully.
        assert_eq!(mass_decay(-0.2, -0.1, beta), 1.0);
        assert!((mass_decay(-0.2, -0.3, beta) - (-beta).exp()).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let l = mass_decay(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..10.0),
            );
            assert!(l > 0.0 && l <= 1.0);
        }
    }

    fn entry(vertex: usize, weight: f64, stage: usize) -> DomainEntry {
        DomainEntry {
            vertex,
            weight,
            label: 0,
            prev_score: 0.5,
            entry_stage: stage,
        }
    }

    #[test]
    fn advancement_matches_hand_normalization() {
        // Current support {0,1,2} with masks (1, 0.5, 0.25); selected {3,4,5}.
        let current = DomainMeasure {
            stage: 1,
            entries: vec![entry(0, 0.4, 0), entry(1, 0.3, 0), entry(2, 0.3, 1)],
            decay_mask: vec![1.0, 0.5, 0.25, 1.0, 1.0, 1.0],
        };
        let selected = vec![entry(3, 1.0, 2), entry(4, 1.0, 2), entry(5, 1.0, 2)];
        let adv = advance_domain(&current, selected.clone(), current.decay_mask.clone(), 10)
            .unwrap();
        // Pre-normalization weights: 1, 0.5, 0.25, 1, 1, 1; total 4.75.
        let want = [1.0, 0.5, 0.25, 1.0, 1.0, 1.0].map(|w| w / 4.75);
        for (e, w) in adv.next.entries.iter().zip(want.iter()) {
            assert!((e.weight - w).abs() < 1e-12, "vertex {}", e.vertex);
        }
        assert!((adv.next.total_weight() - 1.0).abs() < 1e-12);
        assert_eq!(adv.next.stage, 2);
        assert_eq!(adv.pre_truncation.len(), 6);

        // cap 3 keeps the three unit weights; the tie prefers the newer
        // entries over vertex 0 despite its equal weight.
        let capped =
            advance_domain(&current, selected.clone(), current.decay_mask.clone(), 3).unwrap();
        let kept: Vec<usize> = capped.next.entries.iter().map(|e| e.vertex).collect();
        assert_eq!(kept, vec![3, 4, 5]);
        assert!((capped.next.total_weight() - 1.0).abs() < 1e-12);

        // Overlap with the current support is an error.
        let overlap = vec![entry(2, 1.0, 2)];
        assert!(advance_domain(&current, overlap, current.decay_mask.clone(), 10).is_err());
    }

    /// Source blob pair and a shifted unlabeled copy, pooled.
    fn toy_pool(n_per_class: usize, shift: f64, seed: u64) -> GraphPool {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let build = |rng: &mut ChaCha8Rng, labeled: bool, shift: f64| {
            let n = 2 * n_per_class;
            let features = Array2::from_shape_fn((n, 2), |(i, j)| {
                let center = if i < n_per_class { -2.0 } else { 2.0 };
                let base = if j == 0 { center } else { 0.0 };
                base + shift + rng.random_range(-0.6..0.6)
            });
            let mut edges = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    let same = (u < n_per_class) == (v < n_per_class);
                    let p = if same { 0.5 } else { 0.05 };
                    if rng.random_bool(p) {
                        edges.push((u, v));
                    }
                }
            }
            let labels: Vec<Option<usize>> = (0..n)
                .map(|v| labeled.then_some(if v < n_per_class { 0 } else { 1 }))
                .collect();
            AttributedGraph::new(
                features,
                edges,
                labels,
                2,
                StructureMode::Adjacency,
                HistogramMode::Uniform,
            )
            .unwrap()
        };
        let src = build(&mut rng, true, 0.0);
        let tgt = build(&mut rng, false, shift);
        disjoint_union(vec![src, tgt]).unwrap()
    }

    fn quick_train() -> GnnConfig {
        GnnConfig {
            hidden: 8,
            epochs: 60,
            dropout: 0.1,
            lr: 0.05,
            ..GnnConfig::default()
        }
    }

    #[test]
    fn identity_transfer_labels_the_copy_correctly() {
        let pool = toy_pool(10, 0.0, 3);
        let cfg = ProgressionConfig {
            kappa: 100.0,
            beta: 0.0,
            ru_target: 0.0,
            train: quick_train(),
            ..ProgressionConfig::default()
        };
        let out = run_ggda(&pool, &cfg).unwrap();
        // Everything is selected in one stage; the loop ends at t = 1.
        assert_eq!(out.stages.len(), 1);
        let correct = out
            .predictions
            .iter()
            .enumerate()
            .filter(|&(v, &p)| p == if v < 10 { 0 } else { 1 })
            .count();
        assert!(correct >= 18, "only {correct}/20 correct");
        assert!((out.stages[0].labeled_target_fraction - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stage_invariants_hold_on_a_small_shifted_run() {
        let pool = toy_pool(12, 1.0, 5);
        let cfg = ProgressionConfig {
            kappa: 0.3,
            beta: 2.0,
            ru_target: 0.2,
            max_stages: 12,
            train: quick_train(),
            ..ProgressionConfig::default()
        };
        let out = run_ggda(&pool, &cfg).unwrap();
        assert!(!out.stages.is_empty());
        let cap_k = 24;
        let mut last_fraction = 0.0;
        for log in &out.stages {
            assert!(log.domain_size <= cap_k);
            // Per-class selections stay within the kappa caps.
            let mut per_class = [0usize; 2];
            for r in &log.selected {
                per_class[r.pseudo_label] += 1;
            }
            let cap = ((0.3f64 * 12.0).round() as usize).max(1);
            assert!(per_class.iter().all(|&c| c <= cap), "{per_class:?}");
            for &(_, l) in &log.decays {
                assert!(l > 0.0 && l <= 1.0);
            }
            let total: f64 = log.domain_weights.iter().map(|w| w.1).sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(log.labeled_target_fraction >= last_fraction - 1e-12);
            last_fraction = log.labeled_target_fraction;
            assert!(log.delta_proxy.is_finite() && log.delta_proxy >= 0.0);
            assert!(log.dist_to_target.is_finite() && log.dist_to_target >= 0.0);
        }
        assert!((out.final_domain.total_weight() - 1.0).abs() < 1e-9);
        assert_eq!(out.predictions.len(), 24);
        // The cumulative mask never exceeds 1 and never goes non-positive.
        assert!(out
            .final_domain
            .decay_mask
            .iter()
            .all(|&w| w > 0.0 && w <= 1.0 + 1e-12));
    }

    #[test]
    fn stage_count_is_non_increasing_in_kappa() {
        let pool = toy_pool(10, 0.8, 7);
        let mut counts = Vec::new();
        for kappa in [0.15, 0.5, 2.0] {
            let cfg = ProgressionConfig {
                kappa,
                beta: 1.0,
                ru_target: 0.1,
                max_stages: 30,
                train: quick_train(),
                ..ProgressionConfig::default()
            };
            let out = run_ggda(&pool, &cfg).unwrap();
            counts.push(out.stages.len());
        }
        assert!(
            counts[0] >= counts[1] && counts[1] >= counts[2],
            "stage counts {counts:?}"
        );
    }

    #[test]
    fn invalid_configs_and_pools_are_rejected() {
        let pool = toy_pool(4, 0.0, 9);
        for bad in [
            ProgressionConfig {
                eta: -1.0,
                ..ProgressionConfig::default()
            },
            ProgressionConfig {
                kappa: 0.0,
                ..ProgressionConfig::default()
            },
            ProgressionConfig {
                ru_target: 1.0,
                ..ProgressionConfig::default()
            },
            ProgressionConfig {
                cap_k: Some(0),
                ..ProgressionConfig::default()
            },
        ] {
            assert!(run_ggda(&pool, &bad).is_err());
        }

        // An unlabeled source is rejected.
        let mut graphs = pool.graphs.clone();
        graphs[0].labels = vec![None; graphs[0].n()];
        let unlabeled = disjoint_union(graphs).unwrap();
        assert!(run_ggda(&unlabeled, &ProgressionConfig::default()).is_err());
    }

    #[test]
    fn stored_label_scores_are_signed_logit_gaps() {
        let logits = array![[2.1, 0.4, -1.0], [-0.5, 0.9, 1.8]];
        assert!((stored_label_score(&logits, 0, 0) - 1.7).abs() < 1e-12);
        assert!((stored_label_score(&logits, 0, 1) - (-1.7)).abs() < 1e-12);
        assert!((stored_label_score(&logits, 1, 2) - 0.9).abs() < 1e-12);
    }
}
