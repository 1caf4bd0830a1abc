//! Exact discrete optimal transport via network simplex.
//!
//! The balanced transportation problem min <C, pi> s.t. pi 1 = a, pi^T 1 = b,
//! pi >= 0 is solved on the complete bipartite graph with a spanning-tree
//! simplex: block search for the entering arc, exact min-ratio leaving arc,
//! and a full potential rebuild per pivot. Costs may be negative (the
//! Frank-Wolfe inner step passes gradients); the public Wasserstein entry
//! point additionally enforces nonnegative ground costs and applies the
//! order-p exponent.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// A transport plan with the marginals it is meant to have.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub plan: Array2<f64>,
    pub row_marginal: Array1<f64>,
    pub col_marginal: Array1<f64>,
}

impl Coupling {
    /// Checks that the plan's row and column sums match the stored marginals.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let (n, m) = self.plan.dim();
        if self.row_marginal.len() != n || self.col_marginal.len() != m {
            return Err(Error::invalid("coupling marginal lengths do not match plan"));
        }
        if self.plan.iter().any(|&x| x < -tol || !x.is_finite()) {
            return Err(Error::invalid("coupling entries must be nonnegative"));
        }
        for i in 0..n {
            let s: f64 = self.plan.row(i).sum();
            if (s - self.row_marginal[i]).abs() > tol {
                return Err(Error::invalid(format!(
                    "row {i} sums to {s}, expected {}",
                    self.row_marginal[i]
                )));
            }
        }
        for j in 0..m {
            let s: f64 = self.plan.column(j).sum();
            if (s - self.col_marginal[j]).abs() > tol {
                return Err(Error::invalid(format!(
                    "column {j} sums to {s}, expected {}",
                    self.col_marginal[j]
                )));
            }
        }
        Ok(())
    }

    /// Independent outer product of the marginals: the default solver start.
    pub fn independent(row: &Array1<f64>, col: &Array1<f64>) -> Coupling {
        let plan = Array2::from_shape_fn((row.len(), col.len()), |(i, j)| row[i] * col[j]);
        Coupling {
            plan,
            row_marginal: row.clone(),
            col_marginal: col.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OtResult {
    /// Distance value, i.e. objective^(1/p).
    pub value: f64,
    pub coupling: Coupling,
    /// Simplex pivots or solver iterations, depending on the producer.
    pub iters: usize,
    pub converged: bool,
}

/// Exact order-p Wasserstein distance between discrete measures under a
/// ground cost matrix. Histograms must be strictly positive and sum to one;
/// costs must be finite and nonnegative.
pub fn wasserstein_exact(
    cost: &Array2<f64>,
    h_row: &Array1<f64>,
    h_col: &Array1<f64>,
    p: f64,
) -> Result<OtResult> {
    let (n, m) = cost.dim();
    if h_row.len() != n || h_col.len() != m {
        return Err(Error::invalid(format!(
            "cost is {n}x{m} but histograms have lengths {} and {}",
            h_row.len(),
            h_col.len()
        )));
    }
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::invalid(format!("order p must be >= 1, got {p}")));
    }
    if cost.iter().any(|&c| c < 0.0 || !c.is_finite()) {
        return Err(Error::invalid("ground costs must be finite and nonnegative"));
    }
    validate_histogram(h_row, "row")?;
    validate_histogram(h_col, "column")?;

    let powered = if p == 1.0 {
        cost.clone()
    } else {
        cost.mapv(|c| c.powf(p))
    };
    let (plan, objective, pivots) = solve_transport(
        &powered,
        h_row.as_slice().unwrap(),
        h_col.as_slice().unwrap(),
    )?;
    let value = objective.max(0.0).powf(1.0 / p);
    Ok(OtResult {
        value,
        coupling: Coupling {
            plan,
            row_marginal: h_row.clone(),
            col_marginal: h_col.clone(),
        },
        iters: pivots,
        converged: true,
    })
}

pub(crate) fn validate_histogram(h: &Array1<f64>, side: &str) -> Result<()> {
    if h.is_empty() {
        return Err(Error::invalid(format!("{side} histogram is empty")));
    }
    if h.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
        return Err(Error::invalid(format!(
            "{side} histogram must be strictly positive (zero-mass entries are rejected)"
        )));
    }
    let sum = h.sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "{side} histogram sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Solves the balanced transportation problem for an arbitrary finite cost
/// matrix. Returns (plan, objective, pivot count). Demands are rescaled to
/// balance the supply total exactly.
pub(crate) fn solve_transport(
    cost: &Array2<f64>,
    supply: &[f64],
    demand: &[f64],
) -> Result<(Array2<f64>, f64, usize)> {
    let (n, m) = cost.dim();
    assert!(n > 0 && m > 0, "empty transport instance");
    let supply_total: f64 = supply.iter().sum();
    let demand_total: f64 = demand.iter().sum();
    let scale = supply_total / demand_total;
    let demand: Vec<f64> = demand.iter().map(|d| d * scale).collect();

    let mut simplex = Simplex::new(cost, supply, &demand);
    let pivots = simplex.run()?;

    let mut plan = Array2::zeros((n, m));
    let mut objective = 0.0;
    for i in 0..n {
        for j in 0..m {
            let f = simplex.flow[i * m + j];
            if f != 0.0 {
                plan[(i, j)] = f;
                objective += f * cost[(i, j)];
            }
        }
    }
    // A balanced instance admits a feasible tree without artificial flow.
    let art_tol = 1e-9 * supply_total.max(1.0);
    for a in n * m..n * m + n + m {
        if simplex.flow[a].abs() > art_tol {
            return Err(Error::numerical(format!(
                "transport solver left {} units on an artificial arc",
                simplex.flow[a]
            )));
        }
    }
    Ok((plan, objective, pivots))
}

struct Simplex {
    n: usize,
    m: usize,
    root: usize,
    cost: Vec<f64>,
    flow: Vec<f64>,
    tree_adj: Vec<Vec<usize>>,
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    depth: Vec<usize>,
    potential: Vec<f64>,
    stack: Vec<usize>,
    next_scan: usize,
    block: usize,
    eps: f64,
}

impl Simplex {
    /// Real arc a < n*m runs source a/m -> sink n + a%m. Artificial arcs
    /// connect every node to the root and form the initial spanning tree.
    fn new(cost_matrix: &Array2<f64>, supply: &[f64], demand: &[f64]) -> Simplex {
        let (n, m) = cost_matrix.dim();
        let num_real = n * m;
        let num_arcs = num_real + n + m;
        let root = n + m;

        let max_abs = cost_matrix.iter().fold(0.0f64, |acc, &c| acc.max(c.abs()));
        let big = (max_abs + 1.0) * (n + m + 1) as f64;

        let mut cost = Vec::with_capacity(num_arcs);
        for i in 0..n {
            for j in 0..m {
                cost.push(cost_matrix[(i, j)]);
            }
        }
        cost.extend(std::iter::repeat(big).take(n + m));

        let mut flow = vec![0.0; num_arcs];
        let mut tree_adj = vec![Vec::new(); n + m + 1];
        for i in 0..n {
            let a = num_real + i;
            flow[a] = supply[i];
            tree_adj[i].push(a);
            tree_adj[root].push(a);
        }
        for j in 0..m {
            let a = num_real + n + j;
            flow[a] = demand[j];
            tree_adj[n + j].push(a);
            tree_adj[root].push(a);
        }

        let mut s = Simplex {
            n,
            m,
            root,
            cost,
            flow,
            tree_adj,
            parent: vec![usize::MAX; n + m + 1],
            parent_arc: vec![usize::MAX; n + m + 1],
            depth: vec![0; n + m + 1],
            potential: vec![0.0; n + m + 1],
            stack: Vec::with_capacity(n + m + 1),
            next_scan: 0,
            block: ((num_real as f64).sqrt() as usize).clamp(16, num_real.max(16)),
            eps: 1e-12 * (max_abs + 1.0),
        };
        s.rebuild_tree();
        s
    }

    fn endpoints(&self, arc: usize) -> (usize, usize) {
        let num_real = self.n * self.m;
        if arc < num_real {
            (arc / self.m, self.n + arc % self.m)
        } else if arc < num_real + self.n {
            (arc - num_real, self.root)
        } else {
            (self.root, self.n + (arc - num_real - self.n))
        }
    }

    /// Recomputes parents, depths, and potentials from the root so that every
    /// tree arc has zero reduced cost.
    fn rebuild_tree(&mut self) {
        let nodes = self.n + self.m + 1;
        self.parent[self.root] = usize::MAX;
        self.parent_arc[self.root] = usize::MAX;
        self.depth[self.root] = 0;
        self.potential[self.root] = 0.0;
        let mut visited = vec![false; nodes];
        visited[self.root] = true;
        self.stack.clear();
        self.stack.push(self.root);
        let mut seen = 1;
        while let Some(x) = self.stack.pop() {
            for idx in 0..self.tree_adj[x].len() {
                let a = self.tree_adj[x][idx];
                let (f, t) = self.endpoints(a);
                let y = f + t - x;
                if !visited[y] {
                    visited[y] = true;
                    seen += 1;
                    self.parent[y] = x;
                    self.parent_arc[y] = a;
                    self.depth[y] = self.depth[x] + 1;
                    self.potential[y] = if y == t {
                        self.potential[x] - self.cost[a]
                    } else {
                        self.potential[x] + self.cost[a]
                    };
                    self.stack.push(y);
                }
            }
        }
        debug_assert_eq!(seen, nodes, "spanning tree must reach every node");
    }

    /// Block search over real arcs for the most negative reduced cost.
    fn find_entering(&mut self) -> Option<usize> {
        let num_real = self.n * self.m;
        let mut best: Option<usize> = None;
        let mut best_rc = -self.eps;
        let mut pos = self.next_scan;
        let mut remaining = num_real;
        while remaining > 0 {
            let chunk = self.block.min(remaining);
            for _ in 0..chunk {
                let i = pos / self.m;
                let j = pos % self.m;
                let rc = self.cost[pos] - self.potential[i] + self.potential[self.n + j];
                if rc < best_rc {
                    best_rc = rc;
                    best = Some(pos);
                }
                pos += 1;
                if pos == num_real {
                    pos = 0;
                }
            }
            remaining -= chunk;
            if best.is_some() {
                break;
            }
        }
        self.next_scan = pos;
        best
    }

    fn run(&mut self) -> Result<usize> {
        let num_real = self.n * self.m;
        let cap = 4 * num_real + 200 * (self.n + self.m) + 10_000;
        let mut pivots = 0;
        while let Some(entering) = self.find_entering() {
            pivots += 1;
            if pivots > cap {
                return Err(Error::numerical(format!(
                    "network simplex exceeded {cap} pivots"
                )));
            }
            self.pivot(entering)?;
        }
        Ok(pivots)
    }

    fn pivot(&mut self, entering: usize) -> Result<()> {
        let (u, v) = self.endpoints(entering);

        // Cycle = entering arc u->v, then v up to the LCA, then down to u.
        let mut x = u;
        let mut y = v;
        let mut u_side = Vec::new();
        let mut v_side = Vec::new();
        while self.depth[x] > self.depth[y] {
            u_side.push(x);
            x = self.parent[x];
        }
        while self.depth[y] > self.depth[x] {
            v_side.push(y);
            y = self.parent[y];
        }
        while x != y {
            u_side.push(x);
            v_side.push(y);
            x = self.parent[x];
            y = self.parent[y];
        }

        // theta is limited by arcs the cycle traverses against their
        // direction. v-side arcs are walked child->parent, u-side arcs
        // parent->child.
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        {
            let consider = |arc: usize, forward: bool, theta: &mut f64, leaving: &mut usize| {
                if !forward && self.flow[arc] < *theta {
                    *theta = self.flow[arc];
                    *leaving = arc;
                }
            };
            for &z in &v_side {
                let a = self.parent_arc[z];
                let (f, _) = self.endpoints(a);
                consider(a, f == z, &mut theta, &mut leaving);
            }
            for &z in &u_side {
                let a = self.parent_arc[z];
                let (f, _) = self.endpoints(a);
                consider(a, f != z, &mut theta, &mut leaving);
            }
        }
        if leaving == usize::MAX {
            return Err(Error::numerical(
                "transport cycle without a bounding arc".to_string(),
            ));
        }

        if theta > 0.0 {
            self.flow[entering] += theta;
            for &z in &v_side {
                let a = self.parent_arc[z];
                let (f, _) = self.endpoints(a);
                self.flow[a] += if f == z { theta } else { -theta };
            }
            for &z in &u_side {
                let a = self.parent_arc[z];
                let (f, _) = self.endpoints(a);
                self.flow[a] += if f != z { theta } else { -theta };
            }
        }
        // Clamp the leaving arc: it is exactly drained by construction.
        self.flow[leaving] = 0.0;

        let (lf, lt) = self.endpoints(leaving);
        detach(&mut self.tree_adj[lf], leaving);
        detach(&mut self.tree_adj[lt], leaving);
        self.tree_adj[u].push(entering);
        self.tree_adj[v].push(entering);
        self.rebuild_tree();
        Ok(())
    }
}

fn detach(list: &mut Vec<usize>, arc: usize) {
    let idx = list
        .iter()
        .position(|&a| a == arc)
        .expect("leaving arc must be in the tree adjacency");
    list.swap_remove(idx);
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Assignment optimum by exhaustive permutation search: for uniform
    /// same-size marginals an optimal transport vertex is a permutation.
    pub(crate) fn assignment_optimum(cost: &Array2<f64>) -> f64 {
        let n = cost.nrows();
        assert_eq!(n, cost.ncols());
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, cost, &mut best);
        best
    }

    fn permute(perm: &mut Vec<usize>, k: usize, cost: &Array2<f64>, best: &mut f64) {
        let n = perm.len();
        if k == n {
            let total: f64 = (0..n).map(|i| cost[(i, perm[i])]).sum();
            if total < *best {
                *best = total;
            }
            return;
        }
        for i in k..n {
            perm.swap(k, i);
            permute(perm, k + 1, cost, best);
            perm.swap(k, i);
        }
    }

    fn uniform(n: usize) -> Array1<f64> {
        Array1::from_elem(n, 1.0 / n as f64)
    }

    fn random_hist(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
        let mut h = Array1::from_shape_fn(n, |_| rng.random_range(0.05..1.0));
        h /= h.sum();
        h
    }

    #[test]
    fn zero_diagonal_cost_gives_zero_distance_and_diagonal_plan() {
        let n = 4;
        let cost = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 1.0 });
        let h = uniform(n);
        let res = wasserstein_exact(&cost, &h, &h, 1.0).unwrap();
        assert_eq!(res.value, 0.0);
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 0.25 } else { 0.0 };
                assert!((res.coupling.plan[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_by_two_instance_matches_hand_solution() {
        // Rows 0.8/0.2 into columns 0.5/0.5 under a swap cost: the unique
        // optimal vertex keeps 0.5 on (0,0), spills 0.3 to (0,1), 0.2 on (1,1).
        let cost = array![[0.0, 1.0], [1.0, 0.0]];
        let a = array![0.8, 0.2];
        let b = array![0.5, 0.5];
        let res = wasserstein_exact(&cost, &a, &b, 1.0).unwrap();
        assert!((res.value - 0.3).abs() < 1e-12);
        let want = array![[0.5, 0.3], [0.0, 0.2]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((res.coupling.plan[(i, j)] - want[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn order_p_applies_before_and_after_the_sum() {
        let cost = array![[0.0, 2.0], [2.0, 0.0]];
        let a = array![0.6, 0.4];
        let b = array![0.4, 0.6];
        // 0.2 units must cross at powered cost 2^2 = 4: value sqrt(0.8).
        let res = wasserstein_exact(&cost, &a, &b, 2.0).unwrap();
        assert!((res.value - 0.8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn matches_permutation_enumeration_on_uniform_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..200 {
            let n = rng.random_range(2..8);
            let cost = Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..10.0));
            let h = uniform(n);
            let res = wasserstein_exact(&cost, &h, &h, 1.0).unwrap();
            let want = assignment_optimum(&cost) / n as f64;
            assert!(
                (res.value - want).abs() < 1e-10,
                "trial {trial}: solver {} vs enumeration {}",
                res.value,
                want
            );
        }
    }

    #[test]
    fn marginals_are_exact_on_random_rectangular_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let n = rng.random_range(1..12);
            let m = rng.random_range(1..12);
            let cost = Array2::from_shape_fn((n, m), |_| rng.random_range(-3.0..10.0));
            let a = random_hist(&mut rng, n);
            let b = random_hist(&mut rng, m);
            let (plan, _, _) =
                solve_transport(&cost, a.as_slice().unwrap(), b.as_slice().unwrap()).unwrap();
            for i in 0..n {
                assert!((plan.row(i).sum() - a[i]).abs() < 1e-10);
            }
            for j in 0..m {
                assert!((plan.column(j).sum() - b[j]).abs() < 1e-10);
            }
            assert!(plan.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn constant_costs_are_handled_despite_total_degeneracy() {
        let cost = Array2::from_elem((5, 7), 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random_hist(&mut rng, 5);
        let b = random_hist(&mut rng, 7);
        let res = wasserstein_exact(&cost, &a, &b, 1.0).unwrap();
        assert!((res.value - 3.0).abs() < 1e-12);
        res.coupling.validate(1e-8).unwrap();
    }

    #[test]
    fn rejects_invalid_inputs() {
        let cost = array![[0.0, 1.0], [1.0, 0.0]];
        let h = array![0.5, 0.5];
        let neg = array![[0.0, -1.0], [1.0, 0.0]];
        assert!(wasserstein_exact(&neg, &h, &h, 1.0).is_err());

        let zero_mass = array![1.0, 0.0];
        assert!(wasserstein_exact(&cost, &zero_mass, &h, 1.0).is_err());

        let not_normalized = array![0.6, 0.6];
        assert!(wasserstein_exact(&cost, &not_normalized, &h, 1.0).is_err());

        let short = array![1.0];
        assert!(wasserstein_exact(&cost, &short, &h, 1.0).is_err());

        assert!(wasserstein_exact(&cost, &h, &h, 0.5).is_err());
    }

    #[test]
    fn coupling_validate_catches_broken_marginals() {
        let mut c = Coupling::independent(&array![0.5, 0.5], &array![0.5, 0.5]);
        c.validate(1e-8).unwrap();
        c.plan[(0, 0)] += 0.1;
        assert!(c.validate(1e-8).is_err());
    }
}
