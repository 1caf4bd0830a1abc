//! Command line front end over the library: partitioning, FGW distances,
//! bridge generation, domain progression, synthetic data, evaluation, and
//! ablations. Flags override `key = value` config-file entries, which
//! override built-in defaults; every run that touches disk records its
//! effective parameters in a `config.resolved.txt`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use ggda::bundle::{load_bundle, save_bundle, write_f32, write_resolved_config};
use ggda::error::{Error, Result};
use ggda::fgw::{fgw_distance, CostExponent};
use ggda::generation::{generate_sequence, GeneratedSequence, MatchingMode};
use ggda::gnn::save_params;
use ggda::graph::{disjoint_union, AttributedGraph, GraphPool, HistogramMode, StructureMode};
use ggda::harness::{
    emit_plot_data, evaluate, run_ablation, split_target, write_report_csv, CsbmScenario,
    PipelineConfig, PlotRequest, Scenario, Variant,
};
use ggda::par::configure_threads;
use ggda::partition::partition_graph;
use ggda::progression::{run_ggda, StageLog};
use ggda::synth::{csbm_generate, multistep_shift, CsbmConfig, ShiftConfig};

#[derive(Parser)]
#[command(
    name = "ggda",
    version,
    about = "Gradual domain adaptation on attributed graphs"
)]
struct Cli {
    /// Config file of `key = value` lines; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker thread cap; the GGDA_THREADS env var is used when unset.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Split a graph bundle into balanced connected parts.
    Partition(PartitionArgs),
    /// Fused Gromov-Wasserstein distance between two bundles.
    Fgw(FgwArgs),
    /// Generate the intermediate bridge graphs between source and target.
    Generate(GenerateArgs),
    /// Run the progression loop on a generated pool.
    Adapt(AdaptArgs),
    /// Emit synthetic graph bundles.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Score a predictions file against a labeled bundle.
    Eval(EvalArgs),
    /// Run ablation variants on one scenario.
    Ablate(AblateArgs),
    /// Chain generate, adapt, and eval in one run.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct PartitionArgs {
    /// Input graph bundle directory.
    #[arg(long, value_name = "DIR")]
    graph: PathBuf,
    #[arg(long)]
    parts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output assignment file, one part id per line.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct FgwArgs {
    #[arg(long, value_name = "DIR")]
    g1: PathBuf,
    #[arg(long, value_name = "DIR")]
    g2: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    /// Inner cost exponent, 1 or 2.
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Optional directory for coupling.f32 plus the resolved config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

/// Generation knobs shared by generate, ablate, and pipeline.
#[derive(Args, Clone)]
struct GenKnobs {
    /// Interpolation steps K; K-1 intermediates are produced.
    #[arg(long)]
    k: Option<usize>,
    /// Source partition count.
    #[arg(long)]
    ps: Option<usize>,
    /// Target partition count.
    #[arg(long)]
    pt: Option<usize>,
    /// Structure weight in [0, 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Random warmup candidates per target part.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    bcd_iters: Option<usize>,
    #[arg(long)]
    fgw_max_iters: Option<usize>,
    #[arg(long)]
    fgw_tol: Option<f64>,
    /// Matching mode: entropy or random.
    #[arg(long)]
    mode: Option<String>,
}

/// Progression knobs shared by adapt, ablate, and pipeline.
#[derive(Args, Clone)]
struct AdaptKnobs {
    /// Distance penalty strength.
    #[arg(long)]
    eta: Option<f64>,
    /// Per-class selection budget fraction.
    #[arg(long)]
    kappa: Option<f64>,
    /// Mass decay rate.
    #[arg(long)]
    beta: Option<f64>,
    /// Stop once the unlabeled target fraction drops to this value.
    #[arg(long)]
    ru: Option<f64>,
    /// Domain support cap; defaults to the mean of source and target sizes.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    max_stages: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_name = "DIR")]
    source: PathBuf,
    #[arg(long, value_name = "DIR")]
    target: PathBuf,
    #[command(flatten)]
    gen: GenKnobs,
    #[arg(long)]
    seed: Option<u64>,
    /// Output pool directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct AdaptArgs {
    /// Pool directory written by `generate`.
    #[arg(long, value_name = "DIR")]
    pool: PathBuf,
    #[command(flatten)]
    adapt: AdaptKnobs,
    #[arg(long)]
    seed: Option<u64>,
    /// Output run directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Contextual stochastic block model sample.
    Csbm(CsbmArgs),
    /// Feature-shifted copies of one bundle.
    Shift(ShiftArgs),
}

#[derive(Args)]
struct CsbmArgs {
    /// Nodes per class.
    #[arg(long)]
    npc: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    cov_scale: Option<f64>,
    #[arg(long)]
    p_intra: Option<f64>,
    #[arg(long)]
    p_inter: Option<f64>,
    /// Added to the first coordinate of every class mean.
    #[arg(long)]
    shift: Option<f64>,
    /// Fraction of intra-class edges rewired to dissimilar pairs.
    #[arg(long)]
    rewire_frac: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output bundle directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct ShiftArgs {
    #[arg(long, value_name = "DIR")]
    graph: PathBuf,
    /// Shift steps; step 0 is an unchanged copy.
    #[arg(long)]
    steps: Option<usize>,
    /// Per-class offset scale relative to the feature spread.
    #[arg(long)]
    noise_scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory prefix; bundles land in PREFIX_00, PREFIX_01, ...
    #[arg(long, value_name = "DIRPREFIX")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions file, one class id per line over all target vertices.
    #[arg(long, value_name = "FILE")]
    predictions: PathBuf,
    /// Fully labeled target bundle.
    #[arg(long, value_name = "DIR")]
    truth: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Optional directory for report.csv plus the resolved config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Source bundle; omit together with --target to use a CSBM scenario.
    #[arg(long, value_name = "DIR", requires = "target")]
    source: Option<PathBuf>,
    #[arg(long, value_name = "DIR", requires = "source")]
    target: Option<PathBuf>,
    /// CSBM scenario knobs, used when no bundles are given.
    #[arg(long)]
    npc: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    cov_scale: Option<f64>,
    #[arg(long)]
    p_intra: Option<f64>,
    #[arg(long)]
    p_inter: Option<f64>,
    #[arg(long)]
    shift: Option<f64>,
    #[arg(long)]
    rewire_frac: Option<f64>,
    #[arg(long)]
    scenario_seed: Option<u64>,
    /// Comma-separated variant names; defaults to all five.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    #[command(flatten)]
    gen: GenKnobs,
    #[command(flatten)]
    adapt: AdaptKnobs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_seed: Option<u64>,
    /// Output directory for ablation.csv.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, value_name = "DIR")]
    source: PathBuf,
    /// Target bundle; labels, if present, are used only for the final score.
    #[arg(long, value_name = "DIR")]
    target: PathBuf,
    #[command(flatten)]
    gen: GenKnobs,
    #[command(flatten)]
    adapt: AdaptKnobs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_seed: Option<u64>,
    /// Output run directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

/// Config-file defaults: flags beat these, these beat built-ins.
struct Overrides {
    map: BTreeMap<String, String>,
}

impl Overrides {
    fn load(path: Option<&Path>) -> Result<Overrides> {
        let mut map = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            for (idx, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::config(format!(
                        "{}:{}: expected 'key = value'",
                        path.display(),
                        idx + 1
                    ))
                })?;
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Overrides { map })
    }

    /// Flag value if given, else the parsed config entry, else the default.
    fn pick<T: std::str::FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.map.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|_| Error::config(format!("config key '{key}' has invalid value '{raw}'"))),
            None => Ok(default),
        }
    }

    fn pick_opt<T: std::str::FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.map.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::config(format!("config key '{key}' has invalid value '{raw}'"))),
            None => Ok(None),
        }
    }
}

fn parse_mode(s: &str) -> Result<MatchingMode> {
    match s {
        "entropy" => Ok(MatchingMode::EntropyGuided),
        "random" => Ok(MatchingMode::RandomFixed),
        other => Err(Error::config(format!(
            "mode must be 'entropy' or 'random', got '{other}'"
        ))),
    }
}

fn parse_exponent(q: usize) -> Result<CostExponent> {
    match q {
        1 => Ok(CostExponent::One),
        2 => Ok(CostExponent::Two),
        other => Err(Error::config(format!("q must be 1 or 2, got {other}"))),
    }
}

impl GenKnobs {
    /// Applies flags and config-file entries on top of the pipeline defaults.
    fn apply(&self, o: &Overrides, cfg: &mut PipelineConfig, seed: u64) -> Result<()> {
        let g = &mut cfg.generation;
        g.steps = o.pick("k", self.k, g.steps)?;
        g.source_parts = o.pick("ps", self.ps, g.source_parts)?;
        g.target_parts = o.pick("pt", self.pt, g.target_parts)?;
        g.trials = o.pick("trials", self.trials, g.trials)?;
        g.barycenter.fgw.alpha = o.pick("alpha", self.alpha, g.barycenter.fgw.alpha)?;
        g.barycenter.fgw.max_iters =
            o.pick("fgw_max_iters", self.fgw_max_iters, g.barycenter.fgw.max_iters)?;
        g.barycenter.fgw.tol = o.pick("fgw_tol", self.fgw_tol, g.barycenter.fgw.tol)?;
        g.barycenter.bcd_iters = o.pick("bcd_iters", self.bcd_iters, g.barycenter.bcd_iters)?;
        g.mode = parse_mode(&o.pick("mode", self.mode.clone(), "entropy".to_string())?)?;
        g.seed = seed;
        g.barycenter.seed = seed;
        Ok(())
    }

    fn resolved(&self, cfg: &PipelineConfig) -> Vec<(String, String)> {
        let g = &cfg.generation;
        let mode = match g.mode {
            MatchingMode::EntropyGuided => "entropy",
            MatchingMode::RandomFixed => "random",
        };
        vec![
            ("k".into(), g.steps.to_string()),
            ("ps".into(), g.source_parts.to_string()),
            ("pt".into(), g.target_parts.to_string()),
            ("trials".into(), g.trials.to_string()),
            ("alpha".into(), g.barycenter.fgw.alpha.to_string()),
            ("fgw_max_iters".into(), g.barycenter.fgw.max_iters.to_string()),
            ("fgw_tol".into(), g.barycenter.fgw.tol.to_string()),
            ("bcd_iters".into(), g.barycenter.bcd_iters.to_string()),
            ("mode".into(), mode.into()),
            ("gen_seed".into(), g.seed.to_string()),
        ]
    }
}

impl AdaptKnobs {
    fn apply(&self, o: &Overrides, cfg: &mut PipelineConfig, seed: u64) -> Result<()> {
        let p = &mut cfg.progression;
        p.eta = o.pick("eta", self.eta, p.eta)?;
        p.kappa = o.pick("kappa", self.kappa, p.kappa)?;
        p.beta = o.pick("beta", self.beta, p.beta)?;
        p.ru_target = o.pick("ru", self.ru, p.ru_target)?;
        p.cap_k = o.pick_opt("cap", self.cap)?;
        p.max_stages = o.pick("max_stages", self.max_stages, p.max_stages)?;
        p.train.hidden = o.pick("hidden", self.hidden, p.train.hidden)?;
        p.train.dropout = o.pick("dropout", self.dropout, p.train.dropout)?;
        p.train.lr = o.pick("lr", self.lr, p.train.lr)?;
        p.train.weight_decay = o.pick("weight_decay", self.weight_decay, p.train.weight_decay)?;
        p.train.epochs = o.pick("epochs", self.epochs, p.train.epochs)?;
        p.seed = seed;
        p.train.seed = seed;
        Ok(())
    }

    fn resolved(&self, cfg: &PipelineConfig) -> Vec<(String, String)> {
        let p = &cfg.progression;
        let cap = p.cap_k.map_or("auto".to_string(), |c| c.to_string());
        vec![
            ("eta".into(), p.eta.to_string()),
            ("kappa".into(), p.kappa.to_string()),
            ("beta".into(), p.beta.to_string()),
            ("ru".into(), p.ru_target.to_string()),
            ("cap".into(), cap),
            ("max_stages".into(), p.max_stages.to_string()),
            ("hidden".into(), p.train.hidden.to_string()),
            ("dropout".into(), p.train.dropout.to_string()),
            ("lr".into(), p.train.lr.to_string()),
            ("weight_decay".into(), p.train.weight_decay.to_string()),
            ("epochs".into(), p.train.epochs.to_string()),
            ("seed".into(), p.seed.to_string()),
        ]
    }
}

fn load_graph(dir: &Path) -> Result<AttributedGraph> {
    load_bundle(dir, StructureMode::Adjacency, HistogramMode::Uniform)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes the pool directory: one bundle per graph, an ordering manifest,
/// and the per-subgraph provenance table.
fn write_pool(
    dir: &Path,
    src: &AttributedGraph,
    tgt_unlabeled: &AttributedGraph,
    sequence: &GeneratedSequence,
) -> Result<()> {
    create_dir(dir)?;
    let mut names = vec!["source".to_string()];
    for i in 0..sequence.intermediates.len() {
        names.push(format!("inter_{:03}", i + 1));
    }
    names.push("target".to_string());
    save_bundle(src, &dir.join("source"))?;
    for (i, g) in sequence.intermediates.iter().enumerate() {
        save_bundle(g, &dir.join(&names[i + 1]))?;
    }
    save_bundle(tgt_unlabeled, &dir.join("target"))?;
    let mut meta = format!("count = {}\n", names.len());
    for (i, name) in names.iter().enumerate() {
        meta.push_str(&format!("{i} = {name}\n"));
    }
    write_text(&dir.join("pool.meta"), &meta)?;
    let mut csv =
        String::from("step,target_part,source_part,kept,s_loss,fgw_to_source,fgw_to_target,h_pair,support\n");
    for step in &sequence.provenance {
        for r in step {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.step,
                r.target_part,
                r.source_part,
                r.kept_matching,
                r.s_loss,
                r.fgw_to_source,
                r.fgw_to_target,
                r.h_pair,
                r.support
            ));
        }
    }
    write_text(&dir.join("provenance.csv"), &csv)
}

/// Reads a pool directory back into a disjoint-union pool, preserving the
/// manifest order.
fn load_pool(dir: &Path) -> Result<GraphPool> {
    let meta_path = dir.join("pool.meta");
    let text = std::fs::read_to_string(&meta_path)
        .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    let mut count: Option<usize> = None;
    let mut names: BTreeMap<usize, String> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::format(meta_path.display().to_string(), idx + 1, "expected 'key = value'")
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key == "count" {
            count = Some(value.parse().map_err(|_| {
                Error::format(meta_path.display().to_string(), idx + 1, "bad count")
            })?);
        } else {
            let slot: usize = key.parse().map_err(|_| {
                Error::format(meta_path.display().to_string(), idx + 1, "bad graph index")
            })?;
            names.insert(slot, value.to_string());
        }
    }
    let count =
        count.ok_or_else(|| Error::format(meta_path.display().to_string(), 0, "missing count"))?;
    if count < 2 || names.len() != count || !(0..count).all(|i| names.contains_key(&i)) {
        return Err(Error::format(
            meta_path.display().to_string(),
            0,
            "manifest must list indices 0..count with count >= 2",
        ));
    }
    let mut graphs = Vec::with_capacity(count);
    for i in 0..count {
        graphs.push(load_graph(&dir.join(&names[&i]))?);
    }
    disjoint_union(graphs)
}

fn stages_csv(stages: &[StageLog]) -> String {
    let mut csv = String::from(
        "stage,n_selected,n_decayed,mean_decay,support,labeled_target_fraction,domain_target_share,delta_proxy,dist_to_target,warning\n",
    );
    for s in stages {
        let n_decayed = s.decays.iter().filter(|(_, f)| *f < 1.0).count();
        let mean_decay = if s.decays.is_empty() {
            1.0
        } else {
            s.decays.iter().map(|(_, f)| f).sum::<f64>() / s.decays.len() as f64
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            s.stage,
            s.selected.len(),
            n_decayed,
            mean_decay,
            s.domain_size,
            s.labeled_target_fraction,
            s.domain_target_share,
            s.delta_proxy,
            s.dist_to_target,
            s.warning.as_deref().unwrap_or("")
        ));
    }
    csv
}

fn selections_csv(stages: &[StageLog]) -> String {
    let mut csv = String::from("stage,vertex,pseudo_label,score,distance,margin\n");
    for s in stages {
        for r in &s.selected {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.stage, r.vertex, r.pseudo_label, r.score, r.distance, r.margin
            ));
        }
    }
    csv
}

fn predictions_text(predictions: &[usize]) -> String {
    let mut text = String::with_capacity(predictions.len() * 2);
    for p in predictions {
        text.push_str(&format!("{p}\n"));
    }
    text
}

/// Writes the full adapt output set into `dir`.
fn write_run_outputs(
    dir: &Path,
    outcome_params: &ggda::gnn::ModelParams,
    predictions: &[usize],
    stages: &[StageLog],
) -> Result<()> {
    create_dir(dir)?;
    write_text(&dir.join("predictions.txt"), &predictions_text(predictions))?;
    write_text(&dir.join("stages.csv"), &stages_csv(stages))?;
    write_text(&dir.join("selections.csv"), &selections_csv(stages))?;
    emit_plot_data(&PlotRequest::DecayHeatmap(stages), &dir.join("decay_heatmap.csv"))?;
    emit_plot_data(&PlotRequest::DomainProgress(stages), &dir.join("domain_progress.csv"))?;
    save_params(dir, outcome_params)
}

fn report_lines(report: &ggda::harness::EvalReport) -> String {
    format!(
        "accuracy = {}\nmicro_f1 = {}\nmacro_f1 = {}\nn_validation = {}\nn_test = {}\n",
        report.accuracy, report.micro_f1, report.macro_f1, report.n_validation, report.n_test
    )
}

fn run_partition(args: PartitionArgs, o: &Overrides) -> Result<()> {
    let parts = o.pick("parts", args.parts, 2)?;
    let seed = o.pick("seed", args.seed, 0)?;
    let graph = load_graph(&args.graph)?;
    let assignment = partition_graph(&graph, parts, seed)?;
    let mut text = String::with_capacity(assignment.len() * 2);
    for part in &assignment {
        text.push_str(&format!("{part}\n"));
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_text(&args.out, &text)?;
    let resolved = vec![
        ("command".to_string(), "partition".to_string()),
        ("graph".to_string(), args.graph.display().to_string()),
        ("parts".to_string(), parts.to_string()),
        ("seed".to_string(), seed.to_string()),
        ("out".to_string(), args.out.display().to_string()),
    ];
    let dir = args.out.parent().filter(|p| !p.as_os_str().is_empty());
    write_resolved_config(dir.unwrap_or(Path::new(".")), &resolved)?;
    println!("wrote {} part ids to {}", assignment.len(), args.out.display());
    Ok(())
}

fn run_fgw(args: FgwArgs, o: &Overrides) -> Result<()> {
    let mut cfg = ggda::fgw::FgwConfig::default();
    cfg.alpha = o.pick("alpha", args.alpha, cfg.alpha)?;
    cfg.p = o.pick("p", args.p, cfg.p)?;
    let q = o.pick("q", args.q, 2)?;
    cfg.q = parse_exponent(q)?;
    cfg.max_iters = o.pick("fgw_max_iters", args.max_iters, cfg.max_iters)?;
    cfg.tol = o.pick("fgw_tol", args.tol, cfg.tol)?;
    let g1 = load_graph(&args.g1)?;
    let g2 = load_graph(&args.g2)?;
    let outcome = fgw_distance(&g1, &g2, &cfg, None)?;
    println!("value = {}", outcome.value);
    println!("cost = {}", outcome.cost);
    println!("iterations = {}", outcome.iters);
    println!("converged = {}", outcome.converged);
    let resolved = vec![
        ("command".to_string(), "fgw".to_string()),
        ("g1".to_string(), args.g1.display().to_string()),
        ("g2".to_string(), args.g2.display().to_string()),
        ("alpha".to_string(), cfg.alpha.to_string()),
        ("p".to_string(), cfg.p.to_string()),
        ("q".to_string(), q.to_string()),
        ("fgw_max_iters".to_string(), cfg.max_iters.to_string()),
        ("fgw_tol".to_string(), cfg.tol.to_string()),
    ];
    if let Some(out) = &args.out {
        create_dir(out)?;
        let plan = &outcome.coupling.plan;
        write_f32(&out.join("coupling.f32"), plan.iter().copied())?;
        write_text(
            &out.join("coupling.meta"),
            &format!("rows = {}\ncols = {}\n", plan.nrows(), plan.ncols()),
        )?;
        write_resolved_config(out, &resolved)?;
    } else {
        for (k, v) in &resolved {
            println!("config: {k} = {v}");
        }
    }
    Ok(())
}

fn run_generate(args: GenerateArgs, o: &Overrides) -> Result<()> {
    let seed = o.pick("gen_seed", args.seed, 0)?;
    let mut cfg = PipelineConfig::default();
    args.gen.apply(o, &mut cfg, seed)?;
    let src = load_graph(&args.source)?;
    if !src.is_fully_labeled() {
        return Err(Error::invalid("the source bundle must be fully labeled"));
    }
    let mut tgt = load_graph(&args.target)?;
    tgt.labels = vec![None; tgt.n()];
    let sequence = generate_sequence(&src, &tgt, &cfg.generation)?;
    write_pool(&args.out, &src, &tgt, &sequence)?;
    let mut resolved = vec![
        ("command".to_string(), "generate".to_string()),
        ("source".to_string(), args.source.display().to_string()),
        ("target".to_string(), args.target.display().to_string()),
    ];
    resolved.extend(args.gen.resolved(&cfg));
    write_resolved_config(&args.out, &resolved)?;
    println!(
        "wrote pool with {} graphs ({} intermediates) to {}",
        sequence.intermediates.len() + 2,
        sequence.intermediates.len(),
        args.out.display()
    );
    Ok(())
}

fn run_adapt(args: AdaptArgs, o: &Overrides) -> Result<()> {
    let seed = o.pick("seed", args.seed, 0)?;
    let mut cfg = PipelineConfig::default();
    args.adapt.apply(o, &mut cfg, seed)?;
    let pool = load_pool(&args.pool)?;
    let outcome = run_ggda(&pool, &cfg.progression)?;
    write_run_outputs(&args.out, &outcome.params, &outcome.predictions, &outcome.stages)?;
    let mut resolved = vec![
        ("command".to_string(), "adapt".to_string()),
        ("pool".to_string(), args.pool.display().to_string()),
    ];
    resolved.extend(args.adapt.resolved(&cfg));
    write_resolved_config(&args.out, &resolved)?;
    println!(
        "adapted over {} stages; wrote run outputs to {}",
        outcome.stages.len(),
        args.out.display()
    );
    Ok(())
}

fn run_synth_csbm(args: CsbmArgs, o: &Overrides) -> Result<()> {
    let scenario = CsbmScenario::default();
    let npc = o.pick("npc", args.npc, scenario.nodes_per_class)?;
    let classes = o.pick("classes", args.classes, scenario.n_classes)?;
    let cov_scale = o.pick("cov_scale", args.cov_scale, scenario.cov_scale)?;
    let p_intra = o.pick("p_intra", args.p_intra, scenario.p_intra)?;
    let p_inter = o.pick("p_inter", args.p_inter, scenario.p_inter)?;
    let shift = o.pick("shift", args.shift, 0.0)?;
    let rewire = o.pick("rewire_frac", args.rewire_frac, 0.0)?;
    let seed = o.pick("seed", args.seed, 0)?;
    let ladder = CsbmScenario {
        n_classes: classes,
        ..CsbmScenario::default()
    };
    let cfg = CsbmConfig {
        nodes_per_class: npc,
        n_classes: classes,
        class_means: ladder.means(shift),
        cov_scale,
        p_intra,
        p_inter,
        dissimilar_rewire_frac: rewire,
        seed,
    };
    let sample = csbm_generate(&cfg)?;
    save_bundle(&sample.graph, &args.out)?;
    let resolved = vec![
        ("command".to_string(), "synth_csbm".to_string()),
        ("npc".to_string(), npc.to_string()),
        ("classes".to_string(), classes.to_string()),
        ("cov_scale".to_string(), cov_scale.to_string()),
        ("p_intra".to_string(), p_intra.to_string()),
        ("p_inter".to_string(), p_inter.to_string()),
        ("shift".to_string(), shift.to_string()),
        ("rewire_frac".to_string(), rewire.to_string()),
        ("seed".to_string(), seed.to_string()),
    ];
    write_resolved_config(&args.out, &resolved)?;
    println!(
        "wrote CSBM bundle ({} nodes, {} classes) to {}",
        sample.graph.n(),
        classes,
        args.out.display()
    );
    if sample.rewire_applied < sample.rewire_requested {
        println!(
            "rewired {} of {} requested edges (candidate pool exhausted)",
            sample.rewire_applied, sample.rewire_requested
        );
    }
    Ok(())
}

fn run_synth_shift(args: ShiftArgs, o: &Overrides) -> Result<()> {
    let steps = o.pick("steps", args.steps, 5)?;
    let noise_scale = o.pick("noise_scale", args.noise_scale, 1.0)?;
    let seed = o.pick("seed", args.seed, 0)?;
    let graph = load_graph(&args.graph)?;
    let cfg = ShiftConfig {
        steps,
        offsets: None,
        noise_scale,
        seed,
    };
    let shifted = multistep_shift(&graph, &cfg)?;
    let resolved = vec![
        ("command".to_string(), "synth_shift".to_string()),
        ("graph".to_string(), args.graph.display().to_string()),
        ("steps".to_string(), steps.to_string()),
        ("noise_scale".to_string(), noise_scale.to_string()),
        ("seed".to_string(), seed.to_string()),
    ];
    for (s, g) in shifted.iter().enumerate() {
        let dir = PathBuf::from(format!("{}_{:02}", args.out.display(), s));
        save_bundle(g, &dir)?;
        write_resolved_config(&dir, &resolved)?;
    }
    println!(
        "wrote {} shifted bundles under {}_NN",
        shifted.len(),
        args.out.display()
    );
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<usize>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: usize = line.parse().map_err(|_| {
            Error::format(
                path.display().to_string(),
                idx + 1,
                "expected a non-negative class id",
            )
        })?;
        out.push(value);
    }
    Ok(out)
}

fn run_eval(args: EvalArgs, o: &Overrides) -> Result<()> {
    let seed = o.pick("eval_seed", args.seed, 0)?;
    let predictions = read_predictions(&args.predictions)?;
    let truth_graph = load_graph(&args.truth)?;
    if !truth_graph.is_fully_labeled() {
        return Err(Error::invalid("the truth bundle must be fully labeled"));
    }
    let truth: Vec<usize> = truth_graph.labels.iter().map(|l| l.unwrap()).collect();
    let resolved = vec![
        ("command".to_string(), "eval".to_string()),
        ("predictions".to_string(), args.predictions.display().to_string()),
        ("truth".to_string(), args.truth.display().to_string()),
        ("eval_seed".to_string(), seed.to_string()),
    ];
    let fingerprint = ggda::harness::config_fingerprint(&resolved);
    let split = split_target(truth.len(), seed)?;
    let report = evaluate(&predictions, &truth, &split, truth_graph.n_classes, &fingerprint)?;
    print!("{}", report_lines(&report));
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_report_csv(&[("eval".to_string(), report)], &out.join("report.csv"))?;
        write_resolved_config(out, &resolved)?;
    }
    Ok(())
}

fn run_ablate(args: AblateArgs, o: &Overrides) -> Result<()> {
    let seed = o.pick("seed", args.seed, 0)?;
    let eval_seed = o.pick("eval_seed", args.eval_seed, 0)?;
    let mut cfg = PipelineConfig::default();
    args.gen.apply(o, &mut cfg, seed)?;
    args.adapt.apply(o, &mut cfg, seed)?;
    cfg.eval_seed = eval_seed;
    let base = CsbmScenario::default();
    let scenario = match (&args.source, &args.target) {
        (Some(source), Some(target)) => Scenario::Bundles {
            source: source.clone(),
            target: target.clone(),
        },
        _ => Scenario::Csbm(CsbmScenario {
            nodes_per_class: o.pick("npc", args.npc, base.nodes_per_class)?,
            n_classes: o.pick("classes", args.classes, base.n_classes)?,
            cov_scale: o.pick("cov_scale", args.cov_scale, base.cov_scale)?,
            p_intra: o.pick("p_intra", args.p_intra, base.p_intra)?,
            p_inter: o.pick("p_inter", args.p_inter, base.p_inter)?,
            target_mean_shift: o.pick("shift", args.shift, base.target_mean_shift)?,
            target_rewire_frac: o.pick("rewire_frac", args.rewire_frac, base.target_rewire_frac)?,
            seed: o.pick("scenario_seed", args.scenario_seed, 0)?,
        }),
    };
    let variants: Vec<Variant> = if args.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        args.variants
            .iter()
            .map(|s| Variant::parse(s))
            .collect::<Result<Vec<_>>>()?
    };
    let mut rows = Vec::with_capacity(variants.len());
    for variant in &variants {
        let report = run_ablation(&scenario, *variant, &cfg)?;
        println!(
            "{}: accuracy = {} macro_f1 = {}",
            variant.name(),
            report.accuracy,
            report.macro_f1
        );
        rows.push((variant.name().to_string(), report));
    }
    create_dir(&args.out)?;
    write_report_csv(&rows, &args.out.join("ablation.csv"))?;
    let mut resolved = vec![("command".to_string(), "ablate".to_string())];
    match &scenario {
        Scenario::Bundles { source, target } => {
            resolved.push(("source".to_string(), source.display().to_string()));
            resolved.push(("target".to_string(), target.display().to_string()));
        }
        Scenario::Csbm(c) => {
            resolved.push(("npc".to_string(), c.nodes_per_class.to_string()));
            resolved.push(("classes".to_string(), c.n_classes.to_string()));
            resolved.push(("cov_scale".to_string(), c.cov_scale.to_string()));
            resolved.push(("p_intra".to_string(), c.p_intra.to_string()));
            resolved.push(("p_inter".to_string(), c.p_inter.to_string()));
            resolved.push(("shift".to_string(), c.target_mean_shift.to_string()));
            resolved.push(("rewire_frac".to_string(), c.target_rewire_frac.to_string()));
            resolved.push(("scenario_seed".to_string(), c.seed.to_string()));
        }
    }
    resolved.push((
        "variants".to_string(),
        variants.iter().map(|v| v.name()).collect::<Vec<_>>().join(","),
    ));
    resolved.extend(args.gen.resolved(&cfg));
    resolved.extend(args.adapt.resolved(&cfg));
    resolved.push(("eval_seed".to_string(), eval_seed.to_string()));
    write_resolved_config(&args.out, &resolved)?;
    println!("wrote {}", args.out.join("ablation.csv").display());
    Ok(())
}

fn run_pipeline(args: PipelineArgs, o: &Overrides) -> Result<()> {
    let seed = o.pick("seed", args.seed, 0)?;
    let eval_seed = o.pick("eval_seed", args.eval_seed, 0)?;
    let mut cfg = PipelineConfig::default();
    args.gen.apply(o, &mut cfg, seed)?;
    args.adapt.apply(o, &mut cfg, seed)?;
    cfg.eval_seed = eval_seed;
    let src = load_graph(&args.source)?;
    if !src.is_fully_labeled() {
        return Err(Error::invalid("the source bundle must be fully labeled"));
    }
    let tgt = load_graph(&args.target)?;
    let run = ggda::harness::run_full(&src, &tgt, &cfg, cfg.generation.mode)?;
    create_dir(&args.out)?;
    let mut stripped = tgt.clone();
    stripped.labels = vec![None; stripped.n()];
    write_pool(&args.out.join("pool"), &src, &stripped, &run.sequence)?;
    write_run_outputs(
        &args.out,
        &run.outcome.params,
        &run.outcome.predictions,
        &run.outcome.stages,
    )?;
    let mut resolved = vec![
        ("command".to_string(), "pipeline".to_string()),
        ("source".to_string(), args.source.display().to_string()),
        ("target".to_string(), args.target.display().to_string()),
    ];
    resolved.extend(args.gen.resolved(&cfg));
    resolved.extend(args.adapt.resolved(&cfg));
    resolved.push(("eval_seed".to_string(), eval_seed.to_string()));
    write_resolved_config(&args.out, &resolved)?;
    println!(
        "pipeline ran {} stages over {} intermediates",
        run.outcome.stages.len(),
        run.sequence.intermediates.len()
    );
    if tgt.is_fully_labeled() {
        let truth: Vec<usize> = tgt.labels.iter().map(|l| l.unwrap()).collect();
        let split = split_target(truth.len(), eval_seed)?;
        let report = evaluate(
            &run.outcome.predictions,
            &truth,
            &split,
            tgt.n_classes,
            &cfg.fingerprint(),
        )?;
        print!("{}", report_lines(&report));
        write_report_csv(&[("pipeline".to_string(), report)], &args.out.join("report.csv"))?;
    } else {
        println!("target is unlabeled; skipping evaluation");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides::load(cli.config.as_deref())?;
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => match std::env::var("GGDA_THREADS") {
            Ok(raw) => Some(raw.parse().map_err(|_| {
                Error::config(format!("GGDA_THREADS must be a thread count, got '{raw}'"))
            })?),
            Err(_) => None,
        },
    };
    configure_threads(threads);
    match cli.cmd {
        Cmd::Partition(args) => run_partition(args, &overrides),
        Cmd::Fgw(args) => run_fgw(args, &overrides),
        Cmd::Generate(args) => run_generate(args, &overrides),
        Cmd::Adapt(args) => run_adapt(args, &overrides),
        Cmd::Synth(SynthCmd::Csbm(args)) => run_synth_csbm(args, &overrides),
        Cmd::Synth(SynthCmd::Shift(args)) => run_synth_shift(args, &overrides),
        Cmd::Eval(args) => run_eval(args, &overrides),
        Cmd::Ablate(args) => run_ablate(args, &overrides),
        Cmd::Pipeline(args) => run_pipeline(args, &overrides),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
