//! Entropy-guided generation of the intermediate graph sequence.
//!
//! Both endpoint graphs are partitioned; each target partition is matched to
//! a source partition by minimizing an information-loss score that combines
//! the class entropy of labels pushed through the FGW coupling with the
//! transport distance itself. Intermediates are per-partition FGW barycenters
//! assembled by disjoint union, and the matching keeps improving across steps:
//! a match is kept with probability increasing in 1 / S_loss, otherwise a
//! fresh candidate is drawn, and the stored match is replaced only when the
//! recomputed score strictly improves.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::barycenter::{interpolate_pair, BarycenterConfig};
use crate::error::{Error, Result};
use crate::fgw::{fgw_distance, FgwConfig};
use crate::graph::{induced_subgraph, AttributedGraph, HistogramMode, StructureMode};
use crate::par::map_collect;
use crate::partition::partition_graph;

/// How target partitions are matched to source partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchingMode {
    /// Information-loss argmin with keep/resample updates across steps.
    EntropyGuided,
    /// A random matching fixed at the start; never updated.
    RandomFixed,
}

#[derive(Debug, Clone)]
pub struct GenerationConfig {
    /// Number of interpolation steps K; produces K-1 intermediates.
    pub steps: usize,
    pub source_parts: usize,
    pub target_parts: usize,
    /// Random warmup candidates per target partition (the FGW-nearest
    /// candidate is always added).
    pub trials: usize,
    pub barycenter: BarycenterConfig,
    pub seed: u64,
    pub mode: MatchingMode,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            steps: 4,
            source_parts: 2,
            target_parts: 2,
            trials: 4,
            barycenter: BarycenterConfig::default(),
            seed: 0,
            mode: MatchingMode::EntropyGuided,
        }
    }
}

/// Pushes source labels through a coupling: columns are normalized to sum 1
/// and F[j, c] accumulates the normalized mass arriving at column vertex j
/// from class-c source vertices. Rows of F sum to 1.
pub fn pushforward_class_matrix(
    coupling: &Array2<f64>,
    src_labels: &[Option<usize>],
    n_classes: usize,
) -> Result<Array2<f64>> {
    let (n, m) = coupling.dim();
    if src_labels.len() != n {
        return Err(Error::invalid(format!(
            "{n} coupling rows but {} labels",
            src_labels.len()
        )));
    }
    if n_classes == 0 {
        return Err(Error::invalid("n_classes must be positive"));
    }
    let mut labels = Vec::with_capacity(n);
    for (i, l) in src_labels.iter().enumerate() {
        match l {
            Some(c) if *c < n_classes => labels.push(*c),
            Some(c) => {
                return Err(Error::invalid(format!(
                    "label {c} at source vertex {i} exceeds {n_classes} classes"
                )))
            }
            None => {
                return Err(Error::invalid(format!(
                    "source vertex {i} is unlabeled; the pushforward needs labels"
                )))
            }
        }
    }
    let mut f = Array2::zeros((m, n_classes));
    for j in 0..m {
        let col_sum: f64 = (0..n).map(|i| coupling[(i, j)]).sum();
        if !(col_sum > 1e-300) {
            return Err(Error::numerical(format!(
                "coupling column {j} carries no mass"
            )));
        }
        for i in 0..n {
            f[(j, labels[i])] += coupling[(i, j)] / col_sum;
        }
    }
    Ok(f)
}

/// Mean row entropy of a row-stochastic matrix, in nats.
pub fn avg_entropy(f: &Array2<f64>) -> Result<f64> {
    let m = f.nrows();
    if m == 0 {
        return Err(Error::invalid("entropy of an empty matrix"));
    }
    let mut total = 0.0;
    for (j, row) in f.rows().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "row {j} sums to {sum}, expected 1"
            )));
        }
        for &p in row.iter() {
            if p < -1e-12 {
                return Err(Error::invalid(format!("negative probability in row {j}")));
            }
            if p > 0.0 {
                total -= p * p.ln();
            }
        }
    }
    Ok(total / m as f64)
}

const NORM_FLOOR: f64 = 1e-3;

/// Min-max ranges of the three score components over one round's candidates.
#[derive(Debug, Clone)]
pub struct NormCtx {
    h_pair: (f64, f64),
    h_src: (f64, f64),
    fgw: (f64, f64),
}

impl NormCtx {
    /// Builds the context from (H_pair, H_src, fgw_sum) rows.
    pub fn from_components(rows: &[(f64, f64, f64)]) -> Result<NormCtx> {
        if rows.is_empty() {
            return Err(Error::invalid("no candidate evaluations to normalize over"));
        }
        let fold = |pick: fn(&(f64, f64, f64)) -> f64| {
            rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, r| {
                let v = pick(r);
                (acc.0.min(v), acc.1.max(v))
            })
        };
        Ok(NormCtx {
            h_pair: fold(|r| r.0),
            h_src: fold(|r| r.1),
            fgw: fold(|r| r.2),
        })
    }

    /// Min-max scales into [NORM_FLOOR, 1]; a zero-width range maps to 1.
    fn scale(value: f64, (min, max): (f64, f64)) -> f64 {
        if max - min <= 1e-15 {
            return 1.0;
        }
        let unit = ((value - min) / (max - min)).clamp(0.0, 1.0);
        NORM_FLOOR + (1.0 - NORM_FLOOR) * unit
    }
}

/// Information-loss score: the entropy ratio of the pushforward to the
/// source, scaled by the transport distance, all components min-max
/// normalized over the round.
pub fn information_loss(h_pair: f64, h_src: f64, fgw_sum: f64, ctx: &NormCtx) -> f64 {
    let h = NormCtx::scale(h_pair, ctx.h_pair);
    let hs = NormCtx::scale(h_src, ctx.h_src).max(NORM_FLOOR);
    let d = NormCtx::scale(fgw_sum, ctx.fgw);
    (h / hs) * d
}

/// Unclamped keep probability: (1/s) / (1/s + 1/median(others)). With no
/// other scores the draw is a coin flip.
pub fn keep_probability_raw(s_loss: f64, others: &[f64]) -> f64 {
    if others.is_empty() {
        return 0.5;
    }
    let mut sorted: Vec<f64> = others.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    let inv_s = 1.0 / s_loss.max(1e-12);
    let inv_m = 1.0 / median.max(1e-12);
    inv_s / (inv_s + inv_m)
}

/// Production keep probability, clamped so every match stays refutable but
/// none is discarded more often than kept.
pub fn keep_probability(s_loss: f64, others: &[f64]) -> f64 {
    keep_probability_raw(s_loss, others).clamp(0.5, 0.99)
}

/// One scored candidate evaluation from warmup.
#[derive(Debug, Clone)]
pub struct CandidateEval {
    pub target_part: usize,
    pub source_part: usize,
    pub h_pair: f64,
    pub fgw: f64,
    pub s_loss: f64,
}

/// Current matching between target and source partitions.
#[derive(Debug, Clone)]
pub struct MatchState {
    /// Source partition matched to each target partition.
    pub matching: Vec<usize>,
    /// Best information loss recorded for each target partition.
    pub s_loss: Vec<f64>,
    /// Label entropy of each source partition.
    pub h_src_entropy: Vec<f64>,
    /// All warmup evaluations, for diagnostics.
    pub evaluations: Vec<CandidateEval>,
    /// Normalization frame fixed at warmup so later refinements stay
    /// comparable with the stored losses; absent for fixed random matchings.
    pub norm: Option<NormCtx>,
}

/// Histogram-weighted label entropy of a fully labeled graph.
fn label_entropy(g: &AttributedGraph) -> Result<f64> {
    let mut mass = vec![0.0f64; g.n_classes.max(1)];
    for (v, l) in g.labels.iter().enumerate() {
        match l {
            Some(c) => mass[*c] += g.hist[v],
            None => {
                return Err(Error::invalid(format!(
                    "vertex {v} is unlabeled; source partitions must be labeled"
                )))
            }
        }
    }
    let total: f64 = mass.iter().sum();
    Ok(mass
        .iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| {
            let p = m / total;
            -p * p.ln()
        })
        .sum())
}

/// Matches every target partition to the source partition minimizing the
/// information loss over `trials` random candidates plus the FGW-nearest one.
pub fn warmup_matching(
    src_parts: &[AttributedGraph],
    tgt_parts: &[AttributedGraph],
    trials: usize,
    fgw: &FgwConfig,
    seed: u64,
) -> Result<MatchState> {
    if src_parts.is_empty() || tgt_parts.is_empty() {
        return Err(Error::invalid("warmup needs at least one partition per side"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let ps = src_parts.len();
    let h_src_entropy: Vec<f64> = src_parts.iter().map(label_entropy).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Distances to every source partition are needed to find the nearest;
    // couplings are kept to score the selected candidates.
    struct Scored {
        target_part: usize,
        source_part: usize,
        h_pair: f64,
        fgw: f64,
    }
    let mut scored: Vec<Scored> = Vec::new();
    for (t, tg) in tgt_parts.iter().enumerate() {
        let mut plans = Vec::with_capacity(ps);
        let mut values = Vec::with_capacity(ps);
        for sg in src_parts {
            let out = fgw_distance(sg, tg, fgw, None)?;
            values.push(out.value);
            plans.push(out.coupling.plan);
        }
        let nearest = (0..ps)
            .min_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)))
            .unwrap();
        let mut candidates: Vec<usize> = (0..ps).collect();
        candidates.shuffle(&mut rng);
        candidates.truncate(trials.min(ps));
        if !candidates.contains(&nearest) {
            candidates.push(nearest);
        }
        candidates.sort_unstable();
        for s in candidates {
            let f = pushforward_class_matrix(&plans[s], &src_parts[s].labels, src_parts[s].n_classes)?;
            let h_pair = avg_entropy(&f)?;
            scored.push(Scored {
                target_part: t,
                source_part: s,
                h_pair,
                fgw: values[s],
            });
        }
    }

    let rows: Vec<(f64, f64, f64)> = scored
        .iter()
        .map(|c| (c.h_pair, h_src_entropy[c.source_part], c.fgw))
        .collect();
    let ctx = NormCtx::from_components(&rows)?;

    let mut matching = vec![usize::MAX; tgt_parts.len()];
    let mut s_loss = vec![f64::INFINITY; tgt_parts.len()];
    let mut evaluations = Vec::with_capacity(scored.len());
    for c in &scored {
        let loss = information_loss(c.h_pair, h_src_entropy[c.source_part], c.fgw, &ctx);
        if loss < s_loss[c.target_part] {
            s_loss[c.target_part] = loss;
            matching[c.target_part] = c.source_part;
        }
        evaluations.push(CandidateEval {
            target_part: c.target_part,
            source_part: c.source_part,
            h_pair: c.h_pair,
            fgw: c.fgw,
            s_loss: loss,
        });
    }
    Ok(MatchState {
        matching,
        s_loss,
        h_src_entropy,
        evaluations,
        norm: Some(ctx),
    })
}

/// Provenance of one intermediate subgraph.
#[derive(Debug, Clone)]
pub struct SubgraphRecord {
    pub step: usize,
    pub target_part: usize,
    pub source_part: usize,
    /// Whether the existing match was kept (vs a fresh candidate draw).
    pub kept_matching: bool,
    pub s_loss: f64,
    pub fgw_to_source: f64,
    pub fgw_to_target: f64,
    pub h_pair: f64,
    pub support: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratedSequence {
    /// K-1 intermediate graphs, nearest-to-source first.
    pub intermediates: Vec<AttributedGraph>,
    /// Per-step subgraph records, in assembly order.
    pub provenance: Vec<Vec<SubgraphRecord>>,
    pub match_state: MatchState,
    pub source_assignment: Vec<usize>,
    pub target_assignment: Vec<usize>,
    /// Best s_loss per target partition, snapshotted after warmup and after
    /// each step; each column is non-increasing.
    pub best_s_loss_log: Vec<Vec<f64>>,
}

pub(crate) fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    base ^ a.wrapping_mul(0x9E3779B97F4A7C15) ^ b.wrapping_mul(0xBF58476D1CE4E5B9)
}

/// Splits a graph into induced partition subgraphs (adjacency structure,
/// uniform histograms) plus the assignment vector.
fn split_partitions(
    g: &AttributedGraph,
    n_parts: usize,
    seed: u64,
) -> Result<(Vec<AttributedGraph>, Vec<usize>)> {
    let assignment = partition_graph(g, n_parts, seed)?;
    let mut parts = Vec::with_capacity(n_parts);
    for p in 0..n_parts {
        let vertices: Vec<usize> = (0..g.n()).filter(|&v| assignment[v] == p).collect();
        let (sub, _) = induced_subgraph(g, &vertices, StructureMode::Adjacency, HistogramMode::Uniform)?;
        parts.push(sub);
    }
    Ok((parts, assignment))
}

/// Disjoint union of subgraphs into one intermediate: block-diagonal
/// structure, histograms renormalized by the subgraph count.
fn merge_subgraphs(subs: &[AttributedGraph], n_classes: usize) -> Result<AttributedGraph> {
    let gamma = subs.len();
    if gamma == 0 {
        return Err(Error::invalid("no subgraphs to merge"));
    }
    let total: usize = subs.iter().map(|s| s.n()).sum();
    let dim = subs[0].dim();
    let mut features = Array2::zeros((total, dim));
    let mut structure = Array2::zeros((total, total));
    let mut hist = ndarray::Array1::zeros(total);
    let mut edges = Vec::new();
    let mut base = 0;
    for sub in subs {
        for i in 0..sub.n() {
            features.row_mut(base + i).assign(&sub.features.row(i));
            hist[base + i] = sub.hist[i] / gamma as f64;
            for k in 0..sub.n() {
                structure[(base + i, base + k)] = sub.structure[(i, k)];
            }
        }
        edges.extend(sub.edges.iter().map(|&(u, v)| (base + u, base + v)));
        base += sub.n();
    }
    AttributedGraph::from_parts(features, edges, structure, hist, vec![None; total], n_classes)
}

/// Runs the full generation loop: partition, warmup, then K-1 rounds of
/// sampled per-partition interpolation with matching updates.
pub fn generate_sequence(
    src: &AttributedGraph,
    tgt: &AttributedGraph,
    cfg: &GenerationConfig,
) -> Result<GeneratedSequence> {
    if cfg.steps < 2 {
        return Err(Error::invalid("steps must be at least 2"));
    }
    if !src.is_fully_labeled() {
        return Err(Error::invalid("the source graph must be fully labeled"));
    }
    if src.n_classes != tgt.n_classes {
        return Err(Error::invalid("source and target class counts differ"));
    }

    let (src_parts, source_assignment) =
        split_partitions(src, cfg.source_parts, derive_seed(cfg.seed, 101, 0))?;
    let (tgt_parts, target_assignment) =
        split_partitions(tgt, cfg.target_parts, derive_seed(cfg.seed, 102, 0))?;
    let ps = src_parts.len();
    let pt = tgt_parts.len();

    let mut state = match cfg.mode {
        MatchingMode::EntropyGuided => warmup_matching(
            &src_parts,
            &tgt_parts,
            cfg.trials,
            &cfg.barycenter.fgw,
            derive_seed(cfg.seed, 103, 0),
        )?,
        MatchingMode::RandomFixed => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 103, 0));
            let matching: Vec<usize> = (0..pt).map(|_| rng.random_range(0..ps)).collect();
            MatchState {
                matching,
                s_loss: vec![1.0; pt],
                h_src_entropy: src_parts.iter().map(label_entropy).collect::<Result<_>>()?,
                evaluations: Vec::new(),
                norm: None,
            }
        }
    };

    let mut best_s_loss_log = vec![state.s_loss.clone()];
    let mut intermediates = Vec::with_capacity(cfg.steps - 1);
    let mut provenance = Vec::with_capacity(cfg.steps - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 104, 0));

    for k in 1..cfg.steps {
        // Sampling decisions are sequential so the round is deterministic
        // regardless of how many workers run the jobs.
        struct Job {
            t: usize,
            s: usize,
            kept: bool,
            seed: u64,
        }
        let jobs: Vec<Job> = (0..pt)
            .map(|i| {
                let t = rng.random_range(0..pt);
                let (s, kept) = match cfg.mode {
                    MatchingMode::RandomFixed => (state.matching[t], true),
                    MatchingMode::EntropyGuided => {
                        let others: Vec<f64> = (0..pt)
                            .filter(|&j| j != t)
                            .map(|j| state.s_loss[j])
                            .collect();
                        let p = keep_probability(state.s_loss[t], &others);
                        if rng.random_bool(p) {
                            (state.matching[t], true)
                        } else {
                            (rng.random_range(0..ps), false)
                        }
                    }
                };
                Job {
                    t,
                    s,
                    kept,
                    seed: derive_seed(cfg.seed, k as u64, 1000 + i as u64),
                }
            })
            .collect();

        struct SubResult {
            t: usize,
            s: usize,
            kept: bool,
            sub: AttributedGraph,
            h_pair: f64,
            fgw_src: f64,
            fgw_tgt: f64,
        }
        let results: Vec<Result<SubResult>> = map_collect(jobs, |job| {
            let bc = BarycenterConfig {
                seed: job.seed,
                ..cfg.barycenter.clone()
            };
            let (sub, outcome) =
                interpolate_pair(&src_parts[job.s], &tgt_parts[job.t], k, cfg.steps, &bc)
                    .map_err(|e| {
                        Error::invalid(format!(
                            "step {k}, source partition {}, target partition {}: {e}",
                            job.s, job.t
                        ))
                    })?;
            // Byproducts: the source-side coupling feeds the pushforward
            // entropy, and the two final energies are the distance sum.
            let plan_from_src = outcome.couplings[0].plan.t().to_owned();
            let f = pushforward_class_matrix(
                &plan_from_src,
                &src_parts[job.s].labels,
                src_parts[job.s].n_classes,
            )?;
            let h_pair = avg_entropy(&f)?;
            Ok(SubResult {
                t: job.t,
                s: job.s,
                kept: job.kept,
                h_pair,
                fgw_src: outcome.energies[0],
                fgw_tgt: outcome.energies[1],
                sub,
            })
        });
        let results: Vec<SubResult> = results.into_iter().collect::<Result<_>>()?;

        // Refined losses reuse the warmup normalization frame so they can be
        // compared against the stored best losses; without one (fixed random
        // matching) the round's own ranges serve logging only.
        let ctx = match &state.norm {
            Some(ctx) => ctx.clone(),
            None => {
                let rows: Vec<(f64, f64, f64)> = results
                    .iter()
                    .map(|r| (r.h_pair, state.h_src_entropy[r.s], r.fgw_src + r.fgw_tgt))
                    .collect();
                NormCtx::from_components(&rows)?
            }
        };

        let mut records = Vec::with_capacity(results.len());
        for r in &results {
            let loss =
                information_loss(r.h_pair, state.h_src_entropy[r.s], r.fgw_src + r.fgw_tgt, &ctx);
            if cfg.mode == MatchingMode::EntropyGuided && loss < state.s_loss[r.t] {
                state.s_loss[r.t] = loss;
                state.matching[r.t] = r.s;
            }
            records.push(SubgraphRecord {
                step: k,
                target_part: r.t,
                source_part: r.s,
                kept_matching: r.kept,
                s_loss: loss,
                fgw_to_source: r.fgw_src,
                fgw_to_target: r.fgw_tgt,
                h_pair: r.h_pair,
                support: r.sub.n(),
            });
        }

        let subs: Vec<AttributedGraph> = results.into_iter().map(|r| r.sub).collect();
        intermediates.push(merge_subgraphs(&subs, src.n_classes)?);
        provenance.push(records);
        best_s_loss_log.push(state.s_loss.clone());
    }

    Ok(GeneratedSequence {
        intermediates,
        provenance,
        match_state: state,
        source_assignment,
        target_assignment,
        best_s_loss_log,
    })
}
