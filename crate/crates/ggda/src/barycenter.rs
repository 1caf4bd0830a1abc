//! Weighted FGW barycenters and graph interpolation.
//!
//! Minimizes F(X, C, {pi_s}) = sum_s lambda_s E_s(pi_s) by block-coordinate
//! descent. With couplings fixed the optimal support is closed-form (p = 1,
//! q = 2 only):
//!
//!   x_i   = sum_s lambda_s (pi_s X_s)_i / h_i
//!   C_ik  = sum_s lambda_s (pi_s C_s pi_s^T)_ik / (h_i h_k)
//!
//! and with the support fixed each coupling is re-solved warm-started from
//! its previous value, so the objective trace is non-increasing.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fgw::{energy_at_parts, solve_fgw_parts, CostExponent, FgwConfig};
use crate::graph::AttributedGraph;
use crate::ot::{solve_transport, Coupling};

#[derive(Debug, Clone)]
pub struct BarycenterConfig {
    pub fgw: FgwConfig,
    /// Outer block-coordinate iterations.
    pub bcd_iters: usize,
    pub seed: u64,
}

impl Default for BarycenterConfig {
    fn default() -> Self {
        BarycenterConfig {
            fgw: FgwConfig::default(),
            bcd_iters: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BarycenterOutcome {
    pub features: Array2<f64>,
    /// Interpolated structure matrix; its diagonal is the raw closed-form
    /// value, not forced to zero.
    pub structure: Array2<f64>,
    pub hist: Array1<f64>,
    /// One coupling per input graph, barycenter rows by input columns.
    pub couplings: Vec<Coupling>,
    /// Final weighted energy sum_s lambda_s E_s.
    pub objective: f64,
    /// Per-input energies E_s at the final couplings (unweighted).
    pub energies: Vec<f64>,
    /// Objective after each outer iteration.
    pub trace: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
    /// (input graph index, vertex index) each support point was seeded from.
    pub provenance: Vec<(usize, usize)>,
}

/// Computes a weighted FGW barycenter with `support_size` points and a
/// uniform histogram. Requires p = 1 and q = 2. The support is seeded by
/// sampling vertices from the inputs in proportion to their weights, and the
/// first couplings are exact transports that favor each point's seed vertex.
pub fn frechet_mean(
    graphs: &[&AttributedGraph],
    weights: &[f64],
    support_size: usize,
    cfg: &BarycenterConfig,
) -> Result<BarycenterOutcome> {
    if graphs.is_empty() {
        return Err(Error::invalid("at least one input graph is required"));
    }
    if graphs.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} graphs but {} weights",
            graphs.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("weights must sum to 1"));
    }
    if cfg.fgw.p != 1.0 || cfg.fgw.q != CostExponent::Two {
        return Err(Error::invalid(
            "closed-form barycenter updates require p = 1 and q = 2",
        ));
    }
    if support_size == 0 {
        return Err(Error::invalid("support_size must be positive"));
    }
    let dim = graphs[0].dim();
    if graphs.iter().any(|g| g.dim() != dim) {
        return Err(Error::invalid("input graphs must share a feature dimension"));
    }

    let m = support_size;
    let hist = Array1::from_elem(m, 1.0 / m as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let provenance = seed_support(graphs, weights, m, &mut rng)?;

    // First couplings: exact transport on a cost that is 0 toward each
    // point's seed vertex and 1 elsewhere.
    let mut couplings: Vec<Array2<f64>> = Vec::with_capacity(graphs.len());
    for (s, g) in graphs.iter().enumerate() {
        let mut cost = Array2::from_elem((m, g.n()), 1.0);
        for (v, &(src, j)) in provenance.iter().enumerate() {
            if src == s {
                cost[(v, j)] = 0.0;
            }
        }
        let (plan, _, _) =
            solve_transport(&cost, hist.as_slice().unwrap(), g.hist.as_slice().unwrap())?;
        couplings.push(plan);
    }

    let mut features = Array2::zeros((m, dim));
    let mut structure = Array2::zeros((m, m));
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iters = 0;

    for it in 0..cfg.bcd_iters {
        iters = it + 1;
        update_support(graphs, weights, &couplings, &hist, &mut features, &mut structure);

        let mut objective = 0.0;
        for (s, g) in graphs.iter().enumerate() {
            let solved = solve_fgw_parts(
                &features,
                &structure,
                &hist,
                &g.features,
                &g.structure,
                &g.hist,
                &cfg.fgw,
                Some(&couplings[s]),
            )?;
            couplings[s] = solved.coupling.plan;
            objective += weights[s] * solved.cost;
        }
        debug_assert!(
            trace.last().is_none_or(|&prev| objective <= prev + 1e-7 * (1.0 + prev.abs())),
            "barycenter objective increased: {:?} -> {objective}",
            trace.last()
        );
        let done = trace
            .last()
            .is_some_and(|&prev| (prev - objective).abs() <= cfg.fgw.tol * objective.abs().max(1e-12));
        trace.push(objective);
        if done {
            converged = true;
            break;
        }
    }

    // Re-fit the support to the final couplings so the outputs are mutually
    // consistent, then restate the objective at the returned blocks.
    update_support(graphs, weights, &couplings, &hist, &mut features, &mut structure);
    let mut objective = 0.0;
    let mut energies = Vec::with_capacity(graphs.len());
    for (s, g) in graphs.iter().enumerate() {
        let e = energy_at_parts(
            &features,
            &structure,
            &g.features,
            &g.structure,
            &cfg.fgw,
            &couplings[s],
        )
        .max(0.0);
        energies.push(e);
        objective += weights[s] * e;
    }
    trace.push(objective);

    Ok(BarycenterOutcome {
        features,
        structure,
        couplings: couplings
            .into_iter()
            .enumerate()
            .map(|(s, plan)| Coupling {
                plan,
                row_marginal: hist.clone(),
                col_marginal: graphs[s].hist.clone(),
            })
            .collect(),
        hist,
        objective,
        energies,
        trace,
        iters,
        converged,
        provenance,
    })
}

/// Allocates support points to input graphs by largest remainder on the
/// weights, capped by graph sizes, and samples vertices without replacement.
fn seed_support(
    graphs: &[&AttributedGraph],
    weights: &[f64],
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let total_capacity: usize = graphs.iter().map(|g| g.n()).sum();
    if total_capacity < m {
        return Err(Error::invalid(format!(
            "support_size {m} exceeds the {total_capacity} available vertices"
        )));
    }
    let s = graphs.len();
    let mut counts = vec![0usize; s];
    let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(s);
    let mut assigned = 0;
    for i in 0..s {
        let exact = weights[i] * m as f64;
        counts[i] = exact.floor() as usize;
        assigned += counts[i];
        fracs.push((exact - exact.floor(), i));
    }
    fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut leftover = m - assigned.min(m);
    for &(_, i) in fracs.iter().cycle().take(s * (leftover + 1)) {
        if leftover == 0 {
            break;
        }
        if counts[i] < graphs[i].n() {
            counts[i] += 1;
            leftover -= 1;
        }
    }
    // Cap overfull graphs and push the surplus anywhere with room.
    let mut surplus = 0;
    for i in 0..s {
        if counts[i] > graphs[i].n() {
            surplus += counts[i] - graphs[i].n();
            counts[i] = graphs[i].n();
        }
    }
    while surplus > 0 {
        let target = (0..s).find(|&i| counts[i] < graphs[i].n());
        match target {
            Some(i) => {
                counts[i] += 1;
                surplus -= 1;
            }
            None => return Err(Error::invalid("support allocation exceeded capacity")),
        }
    }

    let mut provenance = Vec::with_capacity(m);
    for (i, g) in graphs.iter().enumerate() {
        let mut ids: Vec<usize> = (0..g.n()).collect();
        ids.shuffle(rng);
        let mut chosen: Vec<usize> = ids.into_iter().take(counts[i]).collect();
        chosen.sort_unstable();
        provenance.extend(chosen.into_iter().map(|j| (i, j)));
    }
    debug_assert_eq!(provenance.len(), m);
    Ok(provenance)
}

fn update_support(
    graphs: &[&AttributedGraph],
    weights: &[f64],
    couplings: &[Array2<f64>],
    hist: &Array1<f64>,
    features: &mut Array2<f64>,
    structure: &mut Array2<f64>,
) {
    features.fill(0.0);
    structure.fill(0.0);
    for (s, g) in graphs.iter().enumerate() {
        if weights[s] == 0.0 {
            continue;
        }
        let fx = couplings[s].dot(&g.features);
        *features += &(fx * weights[s]);
        let cs = couplings[s].dot(&g.structure).dot(&couplings[s].t());
        *structure += &(cs * weights[s]);
    }
    let m = hist.len();
    for i in 0..m {
        let hi = hist[i];
        for d in 0..features.ncols() {
            features[(i, d)] /= hi;
        }
        for k in 0..m {
            structure[(i, k)] /= hi * hist[k];
        }
    }
    // The closed form is symmetric up to rounding; make it exact.
    for i in 0..m {
        for k in (i + 1)..m {
            let v = 0.5 * (structure[(i, k)] + structure[(k, i)]);
            structure[(i, k)] = v;
            structure[(k, i)] = v;
        }
    }
}

/// Picks the `n_edges` strongest off-diagonal pairs of an adjacency-like
/// structure matrix as edges, ties broken lexicographically.
pub fn realize_edges(structure: &Array2<f64>, n_edges: usize) -> Vec<(usize, usize)> {
    let m = structure.nrows();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for k in (i + 1)..m {
            pairs.push((structure[(i, k)], i, k));
        }
    }
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut edges: Vec<(usize, usize)> = pairs
        .into_iter()
        .take(n_edges)
        .map(|(_, i, k)| (i, k))
        .collect();
    edges.sort_unstable();
    edges
}

/// Interpolates between a source and target graph at step k of K: weights
/// (1 - k/K, k/K), support size interpolated between the graph sizes, edges
/// realized at the weight-averaged input edge density. The returned graph is
/// unlabeled, keeps the continuous structure matrix (diagonal zeroed), and
/// has a uniform histogram.
pub fn interpolate_pair(
    src: &AttributedGraph,
    tgt: &AttributedGraph,
    step: usize,
    total_steps: usize,
    cfg: &BarycenterConfig,
) -> Result<(AttributedGraph, BarycenterOutcome)> {
    if total_steps == 0 {
        return Err(Error::invalid("total_steps must be positive"));
    }
    if step > total_steps {
        return Err(Error::invalid(format!(
            "step {step} is outside 0..={total_steps}"
        )));
    }
    if src.n_classes != tgt.n_classes {
        return Err(Error::invalid("source and target class counts differ"));
    }
    let t = step as f64 / total_steps as f64;
    let weights = [1.0 - t, t];
    let support = ((1.0 - t) * src.n() as f64 + t * tgt.n() as f64).round() as usize;
    let support = support.max(1);

    let outcome = frechet_mean(&[src, tgt], &weights, support, cfg)?;

    let density = (1.0 - t) * src.edge_density() + t * tgt.edge_density();
    let max_edges = support * support.saturating_sub(1) / 2;
    let n_edges = ((density * max_edges as f64).round() as usize).min(max_edges);
    let edges = realize_edges(&outcome.structure, n_edges);

    let mut structure = outcome.structure.clone();
    for i in 0..support {
        structure[(i, i)] = 0.0;
    }
    let graph = AttributedGraph::from_parts(
        outcome.features.clone(),
        edges,
        structure,
        outcome.hist.clone(),
        vec![None; support],
        src.n_classes,
    )?;
    Ok((graph, outcome))
}
