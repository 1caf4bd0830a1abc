//! Evaluation metrics, scenario loading, ablation variants, and plot-data
//! emission.

use std::fs::File;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::bundle::load_bundle;
use crate::error::{Error, Result};
use crate::generation::{derive_seed, generate_sequence, GeneratedSequence, GenerationConfig, MatchingMode};
use crate::gnn::{normalized_adjacency, predict, train, GnnConfig, TrainTarget};
use crate::graph::{disjoint_union, AttributedGraph, GraphPool, HistogramMode, StructureMode};
use crate::progression::{run_ggda, GgdaOutcome, ProgressionConfig, StageLog};
use crate::synth::{csbm_generate, CsbmConfig};

/// Deterministic 2:8 validation/test split over target vertices.
#[derive(Debug, Clone)]
pub struct EvalSplit {
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Shuffles 0..n with the seed and reserves the first 20% for validation.
pub fn split_target(n: usize, seed: u64) -> Result<EvalSplit> {
    if n == 0 {
        return Err(Error::invalid("cannot split an empty target"));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_val = ((n as f64) * 0.2).round() as usize;
    let n_val = n_val.min(n - 1);
    let mut validation: Vec<usize> = ids[..n_val].to_vec();
    let mut test: Vec<usize> = ids[n_val..].to_vec();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(EvalSplit {
        validation,
        test,
        seed,
    })
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub n_validation: usize,
    pub n_test: usize,
    pub seed: u64,
    pub config_fingerprint: String,
}

/// Test-split metrics from full-target predictions and ground truth.
pub fn evaluate(
    predictions: &[usize],
    ground_truth: &[usize],
    split: &EvalSplit,
    n_classes: usize,
    config_fingerprint: &str,
) -> Result<EvalReport> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            ground_truth.len()
        )));
    }
    if let Some(&v) = split.test.iter().chain(split.validation.iter()).max() {
        if v >= predictions.len() {
            return Err(Error::invalid("split index out of range"));
        }
    }
    if split.test.is_empty() {
        return Err(Error::invalid("the test split is empty"));
    }
    // Confusion matrix over the test portion only.
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for &v in &split.test {
        let (t, p) = (ground_truth[v], predictions[v]);
        if t >= n_classes || p >= n_classes {
            return Err(Error::invalid(format!("class out of range at vertex {v}")));
        }
        confusion[t][p] += 1;
    }
    let total = split.test.len() as f64;
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / total;

    let mut per_class_precision = Vec::with_capacity(n_classes);
    let mut per_class_recall = Vec::with_capacity(n_classes);
    let mut f1_sum = 0.0;
    for c in 0..n_classes {
        let tp = confusion[c][c] as f64;
        let fp: f64 = (0..n_classes)
            .filter(|&t| t != c)
            .map(|t| confusion[t][c] as f64)
            .sum();
        let fn_: f64 = (0..n_classes)
            .filter(|&p| p != c)
            .map(|p| confusion[c][p] as f64)
            .sum();
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class_precision.push(precision);
        per_class_recall.push(recall);
        f1_sum += f1;
    }
    // Single-label micro averaging collapses to accuracy; computed from the
    // pooled counts anyway so the identity is checked, not assumed.
    let tp_all = correct as f64;
    let micro_f1 = 2.0 * tp_all / (2.0 * tp_all + (total - tp_all) + (total - tp_all));

    Ok(EvalReport {
        accuracy,
        micro_f1,
        macro_f1: f1_sum / n_classes as f64,
        per_class_precision,
        per_class_recall,
        n_validation: split.validation.len(),
        n_test: split.test.len(),
        seed: split.seed,
        config_fingerprint: config_fingerprint.to_string(),
    })
}

/// FNV-1a hash of resolved key=value pairs, as 16 hex digits.
pub fn config_fingerprint(pairs: &[(String, String)]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for (k, v) in pairs {
        eat(k.as_bytes());
        eat(b"=");
        eat(v.as_bytes());
        eat(b"\n");
    }
    format!("{h:016x}")
}

/// The paper-style CSBM transfer pair: Gaussian blob classes, a horizontal
/// mean shift on the target, and dissimilar rewiring of the target only.
#[derive(Debug, Clone)]
pub struct CsbmScenario {
    pub nodes_per_class: usize,
    pub n_classes: usize,
    pub cov_scale: f64,
    pub p_intra: f64,
    pub p_inter: f64,
    /// Added to the first feature coordinate of every target mean.
    pub target_mean_shift: f64,
    /// Dissimilar rewiring fraction applied to the target graph.
    pub target_rewire_frac: f64,
    pub seed: u64,
}

impl Default for CsbmScenario {
    fn default() -> Self {
        CsbmScenario {
            nodes_per_class: 100,
            n_classes: 3,
            cov_scale: 0.5,
            p_intra: 0.1,
            p_inter: 0.02,
            target_mean_shift: 6.0,
            target_rewire_frac: 0.25,
            seed: 0,
        }
    }
}

impl CsbmScenario {
    pub fn means(&self, shift: f64) -> Vec<Vec<f64>> {
        // Classes ladder vertically in steps of 3, centered at zero.
        (0..self.n_classes)
            .map(|c| {
                let y = 3.0 * (c as f64 - (self.n_classes as f64 - 1.0) / 2.0);
                vec![shift, y]
            })
            .collect()
    }

    /// Samples the (labeled source, labeled target) pair.
    pub fn sample(&self) -> Result<(AttributedGraph, AttributedGraph)> {
        let source = csbm_generate(&CsbmConfig {
            nodes_per_class: self.nodes_per_class,
            n_classes: self.n_classes,
            class_means: self.means(0.0),
            cov_scale: self.cov_scale,
            p_intra: self.p_intra,
            p_inter: self.p_inter,
            dissimilar_rewire_frac: 0.0,
            seed: derive_seed(self.seed, 301, 0),
        })?;
        let target = csbm_generate(&CsbmConfig {
            nodes_per_class: self.nodes_per_class,
            n_classes: self.n_classes,
            class_means: self.means(self.target_mean_shift),
            cov_scale: self.cov_scale,
            p_intra: self.p_intra,
            p_inter: self.p_inter,
            dissimilar_rewire_frac: self.target_rewire_frac,
            seed: derive_seed(self.seed, 302, 0),
        })?;
        Ok((source.graph, target.graph))
    }
}

/// Where an experiment's graphs come from.
#[derive(Debug, Clone)]
pub enum Scenario {
    Bundles { source: PathBuf, target: PathBuf },
    Csbm(CsbmScenario),
}

impl Scenario {
    /// Loads (source, target); the target keeps whatever labels it has for
    /// evaluation purposes.
    pub fn load(&self) -> Result<(AttributedGraph, AttributedGraph)> {
        match self {
            Scenario::Bundles { source, target } => Ok((
                load_bundle(source, StructureMode::Adjacency, HistogramMode::Uniform)?,
                load_bundle(target, StructureMode::Adjacency, HistogramMode::Uniform)?,
            )),
            Scenario::Csbm(cfg) => cfg.sample(),
        }
    }
}

/// End-to-end settings: generation plus progression plus evaluation.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub generation: GenerationConfig,
    pub progression: ProgressionConfig,
    pub eval_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            generation: GenerationConfig {
                steps: 8,
                ..GenerationConfig::default()
            },
            progression: ProgressionConfig::default(),
            eval_seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Every effective parameter as key=value pairs, for resolved-config
    /// files and fingerprints.
    pub fn resolved_pairs(&self) -> Vec<(String, String)> {
        let g = &self.generation;
        let p = &self.progression;
        let f = &g.barycenter.fgw;
        let mode = match g.mode {
            MatchingMode::EntropyGuided => "entropy",
            MatchingMode::RandomFixed => "random",
        };
        [
            ("alpha", format!("{}", f.alpha)),
            ("fgw_p", format!("{}", f.p)),
            ("fgw_q", format!("{:?}", f.q)),
            ("fgw_max_iters", format!("{}", f.max_iters)),
            ("fgw_tol", format!("{}", f.tol)),
            ("bcd_iters", format!("{}", g.barycenter.bcd_iters)),
            ("steps", format!("{}", g.steps)),
            ("source_parts", format!("{}", g.source_parts)),
            ("target_parts", format!("{}", g.target_parts)),
            ("trials", format!("{}", g.trials)),
            ("matching", mode.to_string()),
            ("generation_seed", format!("{}", g.seed)),
            ("eta", format!("{}", p.eta)),
            ("kappa", format!("{}", p.kappa)),
            ("beta", format!("{}", p.beta)),
            ("ru_target", format!("{}", p.ru_target)),
            ("cap_k", p.cap_k.map_or("auto".to_string(), |c| format!("{c}"))),
            ("max_stages", format!("{}", p.max_stages)),
            ("hidden", format!("{}", p.train.hidden)),
            ("dropout", format!("{}", p.train.dropout)),
            ("lr", format!("{}", p.train.lr)),
            ("weight_decay", format!("{}", p.train.weight_decay)),
            ("epochs", format!("{}", p.train.epochs)),
            ("progression_seed", format!("{}", p.seed)),
            ("eval_seed", format!("{}", self.eval_seed)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn fingerprint(&self) -> String {
        config_fingerprint(&self.resolved_pairs())
    }
}

/// A complete generation + progression run with its byproducts.
#[derive(Debug)]
pub struct GgdaRun {
    pub sequence: GeneratedSequence,
    pub pool: GraphPool,
    pub outcome: GgdaOutcome,
}

fn strip_labels(g: &AttributedGraph) -> AttributedGraph {
    let mut out = g.clone();
    out.labels = vec![None; g.n()];
    out
}

/// Generates the bridge sequence and runs the progression loop on the pool.
pub fn run_full(
    src: &AttributedGraph,
    tgt: &AttributedGraph,
    cfg: &PipelineConfig,
    mode: MatchingMode,
) -> Result<GgdaRun> {
    let tgt = strip_labels(tgt);
    let gen_cfg = GenerationConfig {
        mode,
        ..cfg.generation.clone()
    };
    let sequence = generate_sequence(src, &tgt, &gen_cfg)?;
    let mut graphs = Vec::with_capacity(sequence.intermediates.len() + 2);
    graphs.push(src.clone());
    graphs.extend(sequence.intermediates.iter().cloned());
    graphs.push(tgt);
    let pool = disjoint_union(graphs)?;
    let outcome = run_ggda(&pool, &cfg.progression)?;
    Ok(GgdaRun {
        sequence,
        pool,
        outcome,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    SourceOnly,
    DirectSt,
    Ggda,
    GgdaIsolated,
    GgdaRandomMatch,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::SourceOnly => "source_only",
            Variant::DirectSt => "direct_st",
            Variant::Ggda => "ggda",
            Variant::GgdaIsolated => "ggda_isolated",
            Variant::GgdaRandomMatch => "ggda_random_match",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Ok(match s {
            "source_only" => Variant::SourceOnly,
            "direct_st" => Variant::DirectSt,
            "ggda" => Variant::Ggda,
            "ggda_isolated" => Variant::GgdaIsolated,
            "ggda_random_match" => Variant::GgdaRandomMatch,
            other => {
                return Err(Error::config(format!(
                    "unknown variant '{other}'; expected source_only, direct_st, ggda, ggda_isolated, or ggda_random_match"
                )))
            }
        })
    }

    pub const ALL: [Variant; 5] = [
        Variant::SourceOnly,
        Variant::DirectSt,
        Variant::Ggda,
        Variant::GgdaIsolated,
        Variant::GgdaRandomMatch,
    ];
}

#[derive(Debug)]
pub struct VariantRun {
    pub predictions: Vec<usize>,
    pub stages: Vec<StageLog>,
}

fn block_targets(pool: &GraphPool, graph: usize, labels: &[usize]) -> Vec<TrainTarget> {
    let n = pool.graphs[graph].n();
    (0..n)
        .map(|v| TrainTarget {
            row: pool.global_id(graph, v),
            label: labels[v],
            weight: 1.0 / n as f64,
        })
        .collect()
}

/// Trains on the source block only and predicts the target block.
fn source_only(src: &AttributedGraph, tgt: &AttributedGraph, cfg: &PipelineConfig) -> Result<VariantRun> {
    let pool = disjoint_union(vec![src.clone(), strip_labels(tgt)])?;
    let features = pool.stacked_features();
    let adj = normalized_adjacency(pool.total(), &pool.union_edges)?;
    let labels: Vec<usize> = src.labels.iter().map(|l| l.unwrap()).collect();
    let targets = block_targets(&pool, 0, &labels);
    let train_cfg = GnnConfig {
        seed: derive_seed(cfg.progression.seed, 400, 0),
        ..cfg.progression.train.clone()
    };
    let model = train(&adj, &features, &targets, pool.n_classes(), &train_cfg, None)?;
    let pred = predict(&model.params, &adj, &features)?;
    let start = pool.offsets[1];
    Ok(VariantRun {
        predictions: (0..tgt.n()).map(|v| pred.predicted[start + v]).collect(),
        stages: Vec::new(),
    })
}

/// Whole-graph self-training along the pool: each block is pseudo-labeled by
/// the previous model and becomes the next training domain.
fn isolated_chain(pool: &GraphPool, cfg: &PipelineConfig) -> Result<VariantRun> {
    let features = pool.stacked_features();
    let adj = normalized_adjacency(pool.total(), &pool.union_edges)?;
    let n_classes = pool.n_classes();
    let src_labels: Vec<usize> = pool.graphs[0].labels.iter().map(|l| l.unwrap()).collect();
    let mut targets = block_targets(pool, 0, &src_labels);
    let last = pool.graphs.len() - 1;
    for gi in 1..=last {
        let train_cfg = GnnConfig {
            seed: derive_seed(cfg.progression.seed, 401, gi as u64 - 1),
            ..cfg.progression.train.clone()
        };
        let model = train(&adj, &features, &targets, n_classes, &train_cfg, None)?;
        let pred = predict(&model.params, &adj, &features)?;
        let start = pool.offsets[gi];
        let block: Vec<usize> = (0..pool.graphs[gi].n())
            .map(|v| pred.predicted[start + v])
            .collect();
        if gi == last {
            return Ok(VariantRun {
                predictions: block,
                stages: Vec::new(),
            });
        }
        targets = block_targets(pool, gi, &block);
    }
    unreachable!("the loop always returns at the last block");
}

/// Runs one ablation variant and returns target predictions plus stage logs.
pub fn run_variant(
    src: &AttributedGraph,
    tgt: &AttributedGraph,
    variant: Variant,
    cfg: &PipelineConfig,
) -> Result<VariantRun> {
    match variant {
        Variant::SourceOnly => source_only(src, tgt, cfg),
        Variant::DirectSt => {
            let pool = disjoint_union(vec![src.clone(), strip_labels(tgt)])?;
            let prog = ProgressionConfig {
                beta: 0.0,
                ..cfg.progression.clone()
            };
            let out = run_ggda(&pool, &prog)?;
            Ok(VariantRun {
                predictions: out.predictions,
                stages: out.stages,
            })
        }
        Variant::Ggda => {
            let run = run_full(src, tgt, cfg, MatchingMode::EntropyGuided)?;
            Ok(VariantRun {
                predictions: run.outcome.predictions,
                stages: run.outcome.stages,
            })
        }
        Variant::GgdaRandomMatch => {
            let run = run_full(src, tgt, cfg, MatchingMode::RandomFixed)?;
            Ok(VariantRun {
                predictions: run.outcome.predictions,
                stages: run.outcome.stages,
            })
        }
        Variant::GgdaIsolated => {
            let tgt_stripped = strip_labels(tgt);
            let sequence = generate_sequence(src, &tgt_stripped, &cfg.generation)?;
            let mut graphs = Vec::with_capacity(sequence.intermediates.len() + 2);
            graphs.push(src.clone());
            graphs.extend(sequence.intermediates.into_iter());
            graphs.push(tgt_stripped);
            let pool = disjoint_union(graphs)?;
            isolated_chain(&pool, cfg)
        }
    }
}

/// Loads the scenario, runs one variant, and scores it on the 2:8 target
/// split. The target's labels never reach the adaptation.
pub fn run_ablation(scenario: &Scenario, variant: Variant, cfg: &PipelineConfig) -> Result<EvalReport> {
    let (src, tgt) = scenario.load()?;
    if !tgt.is_fully_labeled() {
        return Err(Error::invalid("ablation needs target labels for scoring"));
    }
    let truth: Vec<usize> = tgt.labels.iter().map(|l| l.unwrap()).collect();
    let run = run_variant(&src, &tgt, variant, cfg)?;
    let split = split_target(tgt.n(), cfg.eval_seed)?;
    evaluate(
        &run.predictions,
        &truth,
        &split,
        tgt.n_classes,
        &cfg.fingerprint(),
    )
}

/// Tidy CSV payloads for each figure family.
#[derive(Debug)]
pub enum PlotRequest<'a> {
    /// (discrepancy rank, variant, accuracy) rows.
    DiscrepancySweep(&'a [(usize, String, f64)]),
    /// Per-stage weight mass grouped by entry cohort.
    DecayHeatmap(&'a [StageLog]),
    /// (kappa, beta, accuracy, stages) rows.
    KappaBetaSweep(&'a [(f64, f64, f64, usize)]),
    /// Normalized distance-to-target per stage.
    DomainProgress(&'a [StageLog]),
}

/// Writes one plot-data CSV. Headers name every column; one row per point.
pub fn emit_plot_data(request: &PlotRequest, path: &Path) -> Result<()> {
    let mut out = String::new();
    match request {
        PlotRequest::DiscrepancySweep(rows) => {
            out.push_str("rank,variant,accuracy\n");
            for (rank, variant, acc) in rows.iter() {
                out.push_str(&format!("{rank},{variant},{acc}\n"));
            }
        }
        PlotRequest::DecayHeatmap(stages) => {
            if stages.is_empty() {
                return Err(Error::invalid("no stage logs to plot"));
            }
            // Cohort = the stage at which a vertex entered a domain; the
            // source cohort is 0.
            let mut cohort: std::collections::HashMap<usize, usize> =
                std::collections::HashMap::new();
            for log in stages.iter() {
                for r in &log.selected {
                    cohort.insert(r.vertex, log.stage + 1);
                }
            }
            out.push_str("stage,cohort,weight_sum\n");
            for log in stages.iter() {
                let mut sums: std::collections::BTreeMap<usize, f64> =
                    std::collections::BTreeMap::new();
                for &(v, w) in &log.domain_weights {
                    *sums.entry(cohort.get(&v).copied().unwrap_or(0)).or_insert(0.0) += w;
                }
                for (c, w) in sums {
                    out.push_str(&format!("{},{c},{w}\n", log.stage + 1));
                }
            }
        }
        PlotRequest::KappaBetaSweep(rows) => {
            out.push_str("kappa,beta,accuracy,stages\n");
            for (kappa, beta, acc, stages) in rows.iter() {
                out.push_str(&format!("{kappa},{beta},{acc},{stages}\n"));
            }
        }
        PlotRequest::DomainProgress(stages) => {
            if stages.is_empty() {
                return Err(Error::invalid("no stage logs to plot"));
            }
            let max = stages
                .iter()
                .map(|l| l.dist_to_target)
                .fold(0.0f64, f64::max);
            out.push_str("stage,distance,normalized\n");
            for log in stages.iter() {
                let norm = if max > 0.0 { log.dist_to_target / max } else { 0.0 };
                out.push_str(&format!("{},{},{norm}\n", log.stage, log.dist_to_target));
            }
            // The target domain itself closes the curve at zero.
            out.push_str(&format!("{},0,0\n", stages.last().unwrap().stage + 1));
        }
    }
    let mut f = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Writes per-variant evaluation reports as one CSV.
pub fn write_report_csv(rows: &[(String, EvalReport)], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("no reports to write"));
    }
    let n_classes = rows[0].1.per_class_precision.len();
    let mut out = String::from("variant,accuracy,micro_f1,macro_f1,n_validation,n_test,seed,fingerprint");
    for c in 0..n_classes {
        out.push_str(&format!(",precision_{c},recall_{c}"));
    }
    out.push('\n');
    for (name, r) in rows {
        out.push_str(&format!(
            "{name},{},{},{},{},{},{},{}",
            r.accuracy, r.micro_f1, r.macro_f1, r.n_validation, r.n_test, r.seed, r.config_fingerprint
        ));
        for c in 0..n_classes {
            out.push_str(&format!(",{},{}", r.per_class_precision[c], r.per_class_recall[c]));
        }
        out.push('\n');
    }
    let mut f = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}
