//! Exact cardinality-constrained ridge regression by branch and bound.
//!
//! The problem: over a standardized design Theta and target y, pick exactly
//! k columns and coefficients minimizing
//!     ||y - Theta (gamma o xi)||^2 + lambda2 ||xi||^2,
//! subject to |xi_i| <= B. The search is depth-first over include/exclude
//! decisions. A node with fixed-in set I and fixed-out set O is bounded from
//! below by the ridge fit over all remaining columns (cardinality dropped),
//! which is exact at leaves. Include branches reuse the parent relaxation
//! (the column pool is unchanged); only exclude branches re-solve.
//!
//! Everything runs on Gram-form sufficient statistics (Theta^T Theta,
//! Theta^T y, y^T y), so the search cost is independent of the sample count
//! once those are built.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{cholesky, cholesky_solve, Mat};

const PRUNE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    TimeLimitSuboptimal,
}

/// One subset-selection instance.
#[derive(Debug, Clone)]
pub struct SubsetProblem {
    /// N x P standardized design restricted to candidate columns.
    pub theta: Mat,
    pub y: Vec<f64>,
    /// Exact cardinality of the support.
    pub k: usize,
    pub lambda2: f64,
    /// Coefficient box bound ||xi||_inf <= b.
    pub b: f64,
    /// Wall-clock limit in seconds. Zero returns the warm-start incumbent.
    pub time_limit: f64,
    pub gap_target: f64,
    /// Deterministic alternative to the wall clock: cap on explored nodes.
    pub node_limit: Option<u64>,
    /// Optional support hint evaluated alongside the greedy warm start.
    pub warm_hint: Option<Vec<usize>>,
}

impl SubsetProblem {
    pub fn new(theta: Mat, y: Vec<f64>, k: usize, lambda2: f64) -> Self {
        SubsetProblem {
            theta,
            y,
            k,
            lambda2,
            b: 1000.0,
            time_limit: 600.0,
            gap_target: 0.0,
            node_limit: None,
            warm_hint: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let p = self.theta.cols();
        if self.k < 1 || self.k > p {
            return Err(Error::invalid(format!("k = {} out of range 1..={p}", self.k)));
        }
        if self.y.len() != self.theta.rows() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} targets", self.theta.rows()),
                got: format!("{}", self.y.len()),
            });
        }
        if !(self.b > 0.0) || self.lambda2 < 0.0 || self.gap_target < 0.0 {
            return Err(Error::invalid("need b > 0, lambda2 >= 0, gap_target >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SubsetSolution {
    /// Support indicator over the problem's columns; exactly k ones.
    pub gamma: Vec<bool>,
    /// Dense coefficients, zero off-support.
    pub xi: Vec<f64>,
    pub objective: f64,
    pub lower_bound: f64,
    pub gap: f64,
    pub status: SolveStatus,
    pub nodes_explored: u64,
}

impl SubsetSolution {
    pub fn support(&self) -> Vec<usize> {
        self.gamma.iter().enumerate().filter(|(_, &g)| g).map(|(i, _)| i).collect()
    }
}

/// Node event for observers and the optional CSV node log.
#[derive(Debug, Clone)]
pub struct NodeEvent {
    pub id: u64,
    pub depth: usize,
    pub bound: f64,
    pub incumbent: f64,
    pub fixed_in: Vec<usize>,
    pub active: Vec<usize>,
}

/// Gram-form sufficient statistics of one regression instance.
#[derive(Debug, Clone)]
pub(crate) struct GramInstance {
    pub p: usize,
    /// p*p Gram matrix Theta^T Theta, row-major.
    pub gram: Vec<f64>,
    /// Theta^T y.
    pub gy: Vec<f64>,
    pub yy: f64,
}

impl GramInstance {
    pub(crate) fn from_theta(theta: &Mat, y: &[f64]) -> Self {
        let p = theta.cols();
        let n = theta.rows();
        let rows = exec::map_indices(p, |a| {
            let mut row = vec![0.0; p + 1];
            for b in a..p {
                let mut s = 0.0;
                for i in 0..n {
                    s += theta.get(i, a) * theta.get(i, b);
                }
                row[b] = s;
            }
            let mut s = 0.0;
            for i in 0..n {
                s += theta.get(i, a) * y[i];
            }
            row[p] = s;
            row
        });
        let mut gram = vec![0.0; p * p];
        let mut gy = vec![0.0; p];
        for (a, row) in rows.iter().enumerate() {
            for b in a..p {
                gram[a * p + b] = row[b];
                gram[b * p + a] = row[b];
            }
            gy[a] = row[p];
        }
        let yy = y.iter().map(|v| v * v).sum();
        GramInstance { p, gram, gy, yy }
    }

    /// Sufficient statistics restricted to a subset of rows (one CV fold).
    pub(crate) fn from_theta_rows(theta: &Mat, y: &[f64], rows: &[usize]) -> Self {
        let p = theta.cols();
        let cols = exec::map_indices(p, |a| {
            let mut row = vec![0.0; p + 1];
            for &i in rows {
                let ti = theta.row(i);
                let va = ti[a];
                for b in a..p {
                    row[b] += va * ti[b];
                }
                row[p] += va * y[i];
            }
            row
        });
        let mut gram = vec![0.0; p * p];
        let mut gy = vec![0.0; p];
        for (a, row) in cols.iter().enumerate() {
            for b in a..p {
                gram[a * p + b] = row[b];
                gram[b * p + a] = row[b];
            }
            gy[a] = row[p];
        }
        let yy = rows.iter().map(|&i| y[i] * y[i]).sum();
        GramInstance { p, gram, gy, yy }
    }

    pub(crate) fn zeros(p: usize) -> Self {
        GramInstance { p, gram: vec![0.0; p * p], gy: vec![0.0; p], yy: 0.0 }
    }

    pub(crate) fn add(&mut self, other: &GramInstance) {
        for (a, b) in self.gram.iter_mut().zip(&other.gram) {
            *a += b;
        }
        for (a, b) in self.gy.iter_mut().zip(&other.gy) {
            *a += b;
        }
        self.yy += other.yy;
    }

    pub(crate) fn subtract(&self, other: &GramInstance) -> GramInstance {
        let mut out = self.clone();
        for (a, b) in out.gram.iter_mut().zip(&other.gram) {
            *a -= b;
        }
        for (a, b) in out.gy.iter_mut().zip(&other.gy) {
            *a -= b;
        }
        out.yy -= other.yy;
        out
    }

    fn sub_system(&self, idx: &[usize], lambda2: f64) -> (Vec<f64>, Vec<f64>) {
        let m = idx.len();
        let mut a = vec![0.0; m * m];
        let mut rhs = vec![0.0; m];
        for (r, &ir) in idx.iter().enumerate() {
            rhs[r] = self.gy[ir];
            for (c, &ic) in idx.iter().enumerate() {
                a[r * m + c] = self.gram[ir * self.p + ic];
            }
            a[r * m + r] += lambda2;
        }
        (a, rhs)
    }

    /// Most correlated partner of a column, for singularity reports.
    fn collinear_partner(&self, j: usize, among: &[usize]) -> usize {
        let mut best = (0.0f64, j);
        for &c in among {
            if c == j {
                continue;
            }
            let denom = (self.gram[j * self.p + j] * self.gram[c * self.p + c]).sqrt();
            let corr = if denom > 0.0 { (self.gram[j * self.p + c] / denom).abs() } else { 0.0 };
            if corr > best.0 {
                best = (corr, c);
            }
        }
        best.1
    }
}

/// Ridge fit restricted to a support with box clipping.
///
/// Solves the normal equations over the support columns, clips any
/// coefficient beyond the box to the boundary and re-optimizes the free
/// coordinates until no new clip occurs. Returns coefficients aligned with
/// `support` and the penalized objective.
fn ridge_on_support(
    inst: &GramInstance,
    support: &[usize],
    lambda2: f64,
    b: f64,
) -> Result<(Vec<f64>, f64)> {
    ridge_on_support_inner(inst, support, lambda2, b, false)
}

/// Variant that regularizes exactly singular systems with a tiny jitter
/// instead of failing; used where any reasonable fit will do (warm starts,
/// CV fold refits).
pub(crate) fn ridge_on_support_jittered(
    inst: &GramInstance,
    support: &[usize],
    lambda2: f64,
    b: f64,
) -> Result<(Vec<f64>, f64)> {
    ridge_on_support_inner(inst, support, lambda2, b, true)
}

fn ridge_on_support_inner(
    inst: &GramInstance,
    support: &[usize],
    lambda2: f64,
    b: f64,
    jitter: bool,
) -> Result<(Vec<f64>, f64)> {
    let m = support.len();
    let (a, rhs) = inst.sub_system(support, lambda2);
    let mut clipped: Vec<Option<f64>> = vec![None; m];
    let mut xi = vec![0.0; m];
    loop {
        let free: Vec<usize> = (0..m).filter(|&i| clipped[i].is_none()).collect();
        if free.is_empty() {
            break;
        }
        let mut af = vec![0.0; free.len() * free.len()];
        let mut rf = vec![0.0; free.len()];
        for (r, &fr) in free.iter().enumerate() {
            let mut v = rhs[fr];
            for (i, c) in clipped.iter().enumerate() {
                if let Some(cv) = c {
                    v -= a[fr * m + i] * cv;
                }
            }
            rf[r] = v;
            for (c, &fc) in free.iter().enumerate() {
                af[r * free.len() + c] = a[fr * m + fc];
            }
        }
        let solved = if jitter {
            solve_spd_jittered(&af, free.len(), &rf)
        } else {
            cholesky(&af, free.len()).map(|l| cholesky_solve(&l, free.len(), &rf))
        };
        let sol = match solved {
            Ok(s) => s,
            Err(pivot) => {
                let j = support[free[pivot]];
                let partner = inst.collinear_partner(j, support);
                return Err(Error::SingularSystem(j.min(partner), j.max(partner)));
            }
        };
        let mut new_clip = false;
        for (r, &fr) in free.iter().enumerate() {
            xi[fr] = sol[r];
            if sol[r].abs() > b {
                clipped[fr] = Some(b * sol[r].signum());
                xi[fr] = b * sol[r].signum();
                new_clip = true;
            }
        }
        if !new_clip {
            break;
        }
    }
    // Full quadratic form (valid with or without clipping).
    let mut obj = inst.yy;
    for (r, &ir) in support.iter().enumerate() {
        obj -= 2.0 * xi[r] * inst.gy[ir];
        obj += lambda2 * xi[r] * xi[r];
        for (c, &ic) in support.iter().enumerate() {
            obj += xi[r] * inst.gram[ir * inst.p + ic] * xi[c];
        }
    }
    Ok((xi, obj))
}

/// SPD solve with a tiny-jitter retry for exactly singular systems (exact
/// duplicates at lambda2 = 0). Returns the failing pivot on a hard failure.
fn solve_spd_jittered(a: &[f64], n: usize, rhs: &[f64]) -> std::result::Result<Vec<f64>, usize> {
    match cholesky(a, n) {
        Ok(l) => Ok(cholesky_solve(&l, n, rhs)),
        Err(pivot) => {
            let max_diag =
                (0..n).map(|i| a[i * n + i].abs()).fold(0.0f64, f64::max).max(1e-300);
            let jitter = 1e-10 * max_diag;
            let mut aj = a.to_vec();
            for i in 0..n {
                aj[i * n + i] += jitter;
            }
            match cholesky(&aj, n) {
                Ok(l) => Ok(cholesky_solve(&l, n, rhs)),
                Err(_) => Err(pivot),
            }
        }
    }
}

/// Relaxation value over an active pool: ridge with the cardinality dropped.
/// Returns (coefficients over `active`, lower bound).
///
/// An exactly singular pool (duplicate columns at lambda2 = 0) is solved
/// with a tiny jitter; the bound is then slackened by twice the jitter
/// energy so it stays a valid lower bound.
fn relaxation(inst: &GramInstance, active: &[usize], lambda2: f64) -> Result<(Vec<f64>, f64)> {
    let n = active.len();
    let (a, rhs) = inst.sub_system(active, lambda2);
    let (xi, slack) = match cholesky(&a, n) {
        Ok(l) => (cholesky_solve(&l, n, &rhs), 0.0),
        Err(pivot) => {
            let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(0.0f64, f64::max).max(1e-300);
            let jitter = 1e-10 * max_diag;
            let mut aj = a.clone();
            for i in 0..n {
                aj[i * n + i] += jitter;
            }
            match cholesky(&aj, n) {
                Ok(l) => {
                    let xi = cholesky_solve(&l, n, &rhs);
                    let energy: f64 = xi.iter().map(|v| v * v).sum();
                    (xi, 2.0 * jitter * energy)
                }
                Err(_) => {
                    let j = active[pivot];
                    let partner = inst.collinear_partner(j, active);
                    return Err(Error::SingularSystem(j.min(partner), j.max(partner)));
                }
            }
        }
    };
    // ridge identity: min value = yy - xi . gy
    let mut v = inst.yy;
    for (r, &ir) in active.iter().enumerate() {
        v -= xi[r] * inst.gy[ir];
    }
    Ok((xi, v - slack))
}

struct Search<'a, 'o> {
    inst: &'a GramInstance,
    k: usize,
    lambda2: f64,
    b: f64,
    prune_slack: f64,
    incumbent_obj: f64,
    incumbent: Vec<usize>,
    incumbent_xi: Vec<f64>,
    nodes: u64,
    node_limit: u64,
    deadline: Option<Instant>,
    aborted: bool,
    /// Min bound among subtrees abandoned by budget or gap pruning.
    open_lb: f64,
    next_id: u64,
    observer: Option<&'o mut dyn FnMut(&NodeEvent)>,
}

impl<'a, 'o> Search<'a, 'o> {
    fn budget_exceeded(&self) -> bool {
        if self.nodes >= self.node_limit {
            return true;
        }
        if let Some(d) = self.deadline {
            // check the clock sparsely
            if self.nodes % 64 == 0 && Instant::now() >= d {
                return true;
            }
        }
        false
    }

    fn prune_threshold(&self) -> f64 {
        self.incumbent_obj - self.prune_slack.max(PRUNE_EPS)
    }

    fn try_leaf(&mut self, support: &mut Vec<usize>) -> Result<()> {
        support.sort_unstable();
        self.nodes += 1;
        let (xi, obj) = ridge_on_support(self.inst, support, self.lambda2, self.b)?;
        let tie = PRUNE_EPS * self.incumbent_obj.abs().max(1.0);
        if obj < self.incumbent_obj - tie
            || ((obj - self.incumbent_obj).abs() <= tie && support[..] < self.incumbent[..])
        {
            self.incumbent_obj = obj;
            self.incumbent = support.clone();
            self.incumbent_xi = xi;
        }
        Ok(())
    }

    /// Expand one node with pool `active` (sorted) and fixed-in `fixed`.
    fn node(&mut self, active: &[usize], fixed: &[usize], depth: usize, parent_bound: f64) -> Result<()> {
        if active.len() < self.k {
            return Ok(()); // cannot reach cardinality k
        }
        if fixed.len() == self.k {
            let mut s = fixed.to_vec();
            return self.try_leaf(&mut s);
        }
        if active.len() == self.k {
            let mut s = active.to_vec();
            return self.try_leaf(&mut s);
        }
        if self.budget_exceeded() {
            self.aborted = true;
            self.open_lb = self.open_lb.min(parent_bound);
            return Ok(());
        }
        self.nodes += 1;
        let (xi, bound) = relaxation(self.inst, active, self.lambda2)?;
        let id = self.next_id;
        self.next_id += 1;
        if let Some(obs) = self.observer.as_mut() {
            obs(&NodeEvent {
                id,
                depth,
                bound,
                incumbent: self.incumbent_obj,
                fixed_in: fixed.to_vec(),
                active: active.to_vec(),
            });
        }
        if bound >= self.prune_threshold() {
            if bound < self.incumbent_obj {
                self.open_lb = self.open_lb.min(bound);
            }
            return Ok(());
        }
        // Order undecided columns by |relaxation coefficient| descending,
        // index ascending on ties.
        let mut undecided: Vec<(usize, f64)> = active
            .iter()
            .enumerate()
            .filter(|(_, c)| !fixed.contains(c))
            .map(|(pos, &c)| (c, xi[pos].abs()))
            .collect();
        undecided.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let order: Vec<usize> = undecided.into_iter().map(|(c, _)| c).collect();
        self.dive(active, fixed.to_vec(), &order, depth, bound)
    }

    /// Include-first depth-first expansion. Include branches keep the parent
    /// pool, so the parent relaxation transfers; each exclude branch drops
    /// one column and re-solves in `node`.
    fn dive(
        &mut self,
        active: &[usize],
        mut fixed: Vec<usize>,
        order: &[usize],
        depth: usize,
        bound: f64,
    ) -> Result<()> {
        if bound >= self.prune_threshold() {
            if bound < self.incumbent_obj {
                self.open_lb = self.open_lb.min(bound);
            }
            return Ok(());
        }
        let branch = order[0];
        // include branch
        fixed.push(branch);
        if fixed.len() == self.k {
            let mut s = fixed.clone();
            self.try_leaf(&mut s)?;
        } else {
            self.dive(active, fixed.clone(), &order[1..], depth + 1, bound)?;
        }
        fixed.pop();
        if self.aborted && self.budget_exceeded() {
            self.open_lb = self.open_lb.min(bound);
            return Ok(());
        }
        // exclude branch: drop the column from the pool
        let reduced: Vec<usize> = active.iter().copied().filter(|&c| c != branch).collect();
        self.node(&reduced, &fixed, depth + 1, bound)
    }
}

/// Gram-level solve used by both the public entry point and cross-validation.
pub(crate) fn solve_gram(
    inst: &GramInstance,
    candidates: &[usize],
    k: usize,
    lambda2: f64,
    b: f64,
    time_limit: f64,
    gap_target: f64,
    node_limit: Option<u64>,
    warm_hint: Option<&[usize]>,
    observer: Option<&mut dyn FnMut(&NodeEvent)>,
) -> Result<SubsetSolution> {
    if k > candidates.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds candidate count {}",
            candidates.len()
        )));
    }
    // Warm start: greedy forward selection, plus the caller's hint.
    let greedy = greedy_support(inst, candidates, k, lambda2)?;
    let (gxi, gobj) = ridge_on_support(inst, &greedy, lambda2, b)?;
    let mut incumbent = greedy;
    let mut incumbent_xi = gxi;
    let mut incumbent_obj = gobj;
    if let Some(hint) = warm_hint {
        let mut h: Vec<usize> = hint.iter().copied().filter(|c| candidates.contains(c)).collect();
        h.sort_unstable();
        h.dedup();
        if h.len() == k {
            if let Ok((hxi, hobj)) = ridge_on_support(inst, &h, lambda2, b) {
                if hobj < incumbent_obj {
                    incumbent = h;
                    incumbent_xi = hxi;
                    incumbent_obj = hobj;
                }
            }
        }
    }
    let root_bound = relaxation(inst, candidates, lambda2)?.1;
    let mut search = Search {
        inst,
        k,
        lambda2,
        b,
        prune_slack: gap_target * incumbent_obj.abs(),
        incumbent_obj,
        incumbent,
        incumbent_xi,
        nodes: 0,
        node_limit: node_limit.unwrap_or(u64::MAX),
        deadline: (time_limit.is_finite() && time_limit > 0.0)
            .then(|| Instant::now() + std::time::Duration::from_secs_f64(time_limit)),
        aborted: time_limit == 0.0,
        open_lb: f64::INFINITY,
        next_id: 0,
        observer,
    };
    if time_limit != 0.0 {
        search.node(candidates, &[], 0, root_bound)?;
    } else {
        search.open_lb = root_bound;
    }
    let aborted = search.aborted;
    let objective = search.incumbent_obj;
    let lower_bound = if aborted { search.open_lb.min(objective) } else {
        if search.open_lb.is_finite() && gap_target > 0.0 {
            search.open_lb.min(objective)
        } else {
            objective
        }
    };
    let gap = ((objective - lower_bound) / objective.abs().max(1e-12)).max(0.0);
    let p = inst.p;
    let mut gamma = vec![false; p];
    let mut xi = vec![0.0; p];
    for (r, &c) in search.incumbent.iter().enumerate() {
        gamma[c] = true;
        xi[c] = search.incumbent_xi[r];
    }
    Ok(SubsetSolution {
        gamma,
        xi,
        objective,
        lower_bound,
        gap,
        status: if aborted { SolveStatus::TimeLimitSuboptimal } else { SolveStatus::Optimal },
        nodes_explored: search.nodes,
    })
}

fn greedy_support(
    inst: &GramInstance,
    candidates: &[usize],
    k: usize,
    lambda2: f64,
) -> Result<Vec<usize>> {
    let mut sel: Vec<usize> = Vec::with_capacity(k);
    let mut xi: Vec<f64> = Vec::new();
    for _ in 0..k {
        let mut best: Option<(f64, usize)> = None;
        for &j in candidates {
            if sel.contains(&j) {
                continue;
            }
            // residual correlation: g_j - G[j, sel] . xi
            let mut c = inst.gy[j];
            for (r, &s) in sel.iter().enumerate() {
                c -= inst.gram[j * inst.p + s] * xi[r];
            }
            let score = c.abs();
            if best.map_or(true, |(bs, bj)| score > bs || (score == bs && j < bj)) {
                best = Some((score, j));
            }
        }
        let (_, j) = best.expect("candidates exhausted before k");
        sel.push(j);
        let (new_xi, _) = ridge_on_support_jittered(inst, &sel, lambda2, f64::INFINITY)?;
        xi = new_xi;
    }
    sel.sort_unstable();
    Ok(sel)
}

/// Forward stepwise warm start: k columns chosen by residual correlation.
pub fn greedy_warmstart(theta: &Mat, y: &[f64], k: usize, lambda2: f64) -> Result<Vec<usize>> {
    if k > theta.cols() {
        return Err(Error::invalid(format!("k = {k} exceeds column count {}", theta.cols())));
    }
    let inst = GramInstance::from_theta(theta, y);
    let candidates: Vec<usize> = (0..theta.cols()).collect();
    greedy_support(&inst, &candidates, k, lambda2)
}

/// Ridge restricted to a fixed support (public spec-level surface).
pub fn ridge_restricted(
    theta: &Mat,
    y: &[f64],
    support: &[usize],
    lambda2: f64,
    b: f64,
) -> Result<(Vec<f64>, f64)> {
    if support.is_empty() {
        return Err(Error::invalid("support must be non-empty"));
    }
    let inst = GramInstance::from_theta(theta, y);
    ridge_on_support(&inst, support, lambda2, b)
}

pub fn solve_subset(prob: &SubsetProblem) -> Result<SubsetSolution> {
    solve_subset_observed(prob, None)
}

/// Solve with an optional per-node observer (used by the node log and by
/// bound-validity tests).
pub fn solve_subset_observed(
    prob: &SubsetProblem,
    observer: Option<&mut dyn FnMut(&NodeEvent)>,
) -> Result<SubsetSolution> {
    prob.validate()?;
    let inst = GramInstance::from_theta(&prob.theta, &prob.y);
    let candidates: Vec<usize> = (0..prob.theta.cols()).collect();
    solve_gram(
        &inst,
        &candidates,
        prob.k,
        prob.lambda2,
        prob.b,
        prob.time_limit,
        prob.gap_target,
        prob.node_limit,
        prob.warm_hint.as_deref(),
        observer,
    )
}

/// Brute-force minimum over all k-subsets; the verification oracle.
/// Lexicographically smallest support on exact objective ties.
pub fn exhaustive_oracle(prob: &SubsetProblem) -> Result<SubsetSolution> {
    prob.validate()?;
    let p = prob.theta.cols();
    let combos = binomial_f64(p, prob.k);
    if combos > 1e6 {
        return Err(Error::CombinatorialGuard { n: p, k: prob.k });
    }
    let inst = GramInstance::from_theta(&prob.theta, &prob.y);
    let mut support: Vec<usize> = (0..prob.k).collect();
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    let mut count: u64 = 0;
    loop {
        count += 1;
        let (xi, obj) = ridge_on_support(&inst, &support, prob.lambda2, prob.b)?;
        if best.as_ref().map_or(true, |(bo, _, _)| obj < *bo) {
            best = Some((obj, support.clone(), xi));
        }
        // next lexicographic combination
        let mut i = prob.k;
        loop {
            if i == 0 {
                break;
            }
            i -= 1;
            if support[i] != i + p - prob.k {
                support[i] += 1;
                for j in i + 1..prob.k {
                    support[j] = support[j - 1] + 1;
                }
                break;
            }
            if i == 0 {
                let (obj, sup, xi) = best.unwrap();
                let mut gamma = vec![false; p];
                let mut dense = vec![0.0; p];
                for (r, &c) in sup.iter().enumerate() {
                    gamma[c] = true;
                    dense[c] = xi[r];
                }
                return Ok(SubsetSolution {
                    gamma,
                    xi: dense,
                    objective: obj,
                    lower_bound: obj,
                    gap: 0.0,
                    status: SolveStatus::Optimal,
                    nodes_explored: count,
                });
            }
        }
    }
}

fn binomial_f64(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut v = 1.0f64;
    for i in 0..k {
        v *= (n - i) as f64 / (i + 1) as f64;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    fn random_instance(seed: u64) -> (SubsetProblem, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Uniform::new_inclusive(20usize, 60).unwrap().sample(&mut rng);
        let p = Uniform::new_inclusive(6usize, 16).unwrap().sample(&mut rng);
        let k = Uniform::new_inclusive(1usize, 4.min(p)).unwrap().sample(&mut rng);
        let theta = Mat::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let truth: Vec<usize> = {
            let mut idx: Vec<usize> = (0..p).collect();
            // partial shuffle
            for i in 0..k {
                let j = Uniform::new(i, p).unwrap().sample(&mut rng);
                idx.swap(i, j);
            }
            idx[..k].to_vec()
        };
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let mut v = 0.0;
                for (ord, &t) in truth.iter().enumerate() {
                    v += (2.0 + ord as f64) * theta.get(i, t);
                }
                let z: f64 = StandardNormal.sample(&mut rng);
                v + 0.5 * z
            })
            .collect();
        (SubsetProblem::new(theta, y, k, 0.0), seed as usize)
    }

    #[test]
    fn ridge_identity_design() {
        let theta = Mat::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let y = vec![3.0, 4.0];
        let (xi, obj) = ridge_restricted(&theta, &y, &[0, 1], 0.0, 1000.0).unwrap();
        assert!((xi[0] - 3.0).abs() < 1e-12 && (xi[1] - 4.0).abs() < 1e-12);
        assert!(obj.abs() < 1e-12);
        let (xi, obj) = ridge_restricted(&theta, &y, &[0, 1], 1.0, 1000.0).unwrap();
        assert!((xi[0] - 1.5).abs() < 1e-12 && (xi[1] - 2.0).abs() < 1e-12);
        assert!((obj - 12.5).abs() < 1e-9);
    }

    #[test]
    fn ridge_box_activates() {
        let theta = Mat::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let y = vec![3.0, 4.0];
        let (xi, _) = ridge_restricted(&theta, &y, &[0, 1], 0.0, 2.5).unwrap();
        assert!(xi.iter().any(|v| (v.abs() - 2.5).abs() < 1e-12));
        assert!(xi.iter().all(|v| v.abs() <= 2.5 + 1e-9));
    }

    #[test]
    fn ridge_names_collinear_pair() {
        let theta = Mat::from_rows(vec![
            vec![1.0, 2.0, 0.3],
            vec![2.0, 4.0, -0.5],
            vec![-1.0, -2.0, 0.9],
        ]);
        let y = vec![1.0, 2.0, 3.0];
        match ridge_restricted(&theta, &y, &[0, 1, 2], 0.0, 1000.0) {
            Err(Error::SingularSystem(a, b)) => assert_eq!((a, b), (0, 1)),
            other => panic!("expected SingularSystem, got {other:?}"),
        }
    }

    #[test]
    fn orthogonal_top_k() {
        // y built from two columns of an identity-like design
        let n = 10;
        let theta = Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 });
        let mut y = vec![0.0; n];
        y[1] = 2.0;
        y[5] = -3.0;
        y[7] = 0.01;
        let mut prob = SubsetProblem::new(theta, y, 2, 1e-6);
        prob.warm_hint = None;
        let sol = solve_subset(&prob).unwrap();
        assert_eq!(sol.support(), vec![1, 5]);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_eq!(sol.gap, 0.0);
        assert_eq!(sol.gamma.iter().filter(|&&g| g).count(), 2);
    }

    #[test]
    fn k_equals_all_columns() {
        let (prob, _) = random_instance(3);
        let mut prob = prob;
        prob.k = prob.theta.cols();
        let sol = solve_subset(&prob).unwrap();
        assert_eq!(sol.support().len(), prob.k);
        let (_, obj) =
            ridge_restricted(&prob.theta, &prob.y, &sol.support(), prob.lambda2, prob.b).unwrap();
        assert!((sol.objective - obj).abs() <= 1e-9 * obj.abs().max(1.0));
    }

    #[test]
    fn matches_oracle_on_random_instances() {
        for seed in 0..40u64 {
            let (mut prob, _) = random_instance(seed);
            prob.lambda2 = match seed % 3 {
                0 => 0.0,
                1 => 1e-4,
                _ => 1.0,
            };
            let sol = solve_subset(&prob).unwrap();
            let oracle = exhaustive_oracle(&prob).unwrap();
            assert_eq!(
                sol.support(),
                oracle.support(),
                "seed {seed}: supports differ ({} vs {})",
                sol.objective,
                oracle.objective
            );
            assert!(
                (sol.objective - oracle.objective).abs()
                    <= 1e-9 * oracle.objective.abs().max(1e-12),
                "seed {seed}: objectives differ"
            );
        }
    }

    #[test]
    fn oracle_tie_breaks_lexicographically() {
        // duplicated columns give exactly tied objectives
        let n = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = Mat::from_fn(n, 3, |_, _| StandardNormal.sample(&mut rng));
        let theta = Mat::from_fn(n, 4, |i, j| match j {
            0 => base.get(i, 0),
            1 => base.get(i, 1),
            2 => base.get(i, 0), // duplicate of column 0
            _ => base.get(i, 2),
        });
        let y: Vec<f64> = (0..n).map(|i| base.get(i, 0) + 0.5 * base.get(i, 2)).collect();
        let prob = SubsetProblem::new(theta, y, 2, 1e-8);
        let oracle = exhaustive_oracle(&prob).unwrap();
        assert_eq!(oracle.support(), vec![0, 3]);
    }

    #[test]
    fn oracle_refuses_huge_enumerations() {
        let theta = Mat::from_fn(10, 60, |i, j| ((i * j) as f64).sin());
        let y = vec![1.0; 10];
        let prob = SubsetProblem::new(theta, y, 8, 0.1);
        assert!(matches!(
            exhaustive_oracle(&prob),
            Err(Error::CombinatorialGuard { .. })
        ));
    }

    #[test]
    fn oracle_single_column() {
        let theta = Mat::from_rows(vec![vec![2.0], vec![0.0]]);
        let y = vec![2.0, 1.0];
        let prob = SubsetProblem::new(theta.clone(), y.clone(), 1, 0.5);
        let sol = exhaustive_oracle(&prob).unwrap();
        let (_, obj) = ridge_restricted(&theta, &y, &[0], 0.5, 1000.0).unwrap();
        assert_eq!(sol.support(), vec![0]);
        assert!((sol.objective - obj).abs() < 1e-12);
    }

    #[test]
    fn greedy_matches_topk_on_orthogonal() {
        let n = 8;
        let theta = Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 });
        let mut y = vec![0.0; n];
        y[2] = 5.0;
        y[6] = -4.0;
        y[0] = 1.0;
        let sup = greedy_warmstart(&theta, &y, 2, 0.0).unwrap();
        assert_eq!(sup, vec![2, 6]);
        let sup1 = greedy_warmstart(&theta, &y, 1, 0.0).unwrap();
        assert_eq!(sup1, vec![2]);
    }

    #[test]
    fn greedy_upper_bounds_optimum() {
        for seed in 50..70u64 {
            let (prob, _) = random_instance(seed);
            let sup = greedy_warmstart(&prob.theta, &prob.y, prob.k, prob.lambda2).unwrap();
            let (_, greedy_obj) =
                ridge_restricted(&prob.theta, &prob.y, &sup, prob.lambda2, prob.b).unwrap();
            let oracle = exhaustive_oracle(&prob).unwrap();
            assert!(greedy_obj >= oracle.objective - 1e-9 * oracle.objective.abs().max(1.0));
        }
    }

    #[test]
    fn bound_validity_by_enumeration() {
        // At every explored node, the relaxation bound must not exceed the
        // best completion reachable from that node.
        let (prob, _) = random_instance(123);
        let inst = GramInstance::from_theta(&prob.theta, &prob.y);
        let mut events: Vec<NodeEvent> = Vec::new();
        let mut obs = |e: &NodeEvent| events.push(e.clone());
        let _ = solve_subset_observed(&prob, Some(&mut obs)).unwrap();
        assert!(!events.is_empty());
        for e in events.iter().take(50) {
            // enumerate completions: supports of size k within active containing fixed_in
            let avail: Vec<usize> =
                e.active.iter().copied().filter(|c| !e.fixed_in.contains(c)).collect();
            let need = prob.k - e.fixed_in.len();
            let mut best = f64::INFINITY;
            enumerate_combos(&avail, need, &mut |extra| {
                let mut sup = e.fixed_in.clone();
                sup.extend_from_slice(extra);
                sup.sort_unstable();
                let (_, obj) = ridge_on_support(&inst, &sup, prob.lambda2, prob.b).unwrap();
                if obj < best {
                    best = obj;
                }
            });
            assert!(
                e.bound <= best + 1e-9 * best.abs().max(1.0),
                "bound {} exceeds best completion {}",
                e.bound,
                best
            );
        }
    }

    fn enumerate_combos(items: &[usize], k: usize, f: &mut impl FnMut(&[usize])) {
        fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
            if cur.len() == k {
                f(cur);
                return;
            }
            for i in start..items.len() {
                cur.push(items[i]);
                rec(items, k, i + 1, cur, f);
                cur.pop();
            }
        }
        rec(items, k, 0, &mut Vec::new(), f);
    }

    #[test]
    fn incumbent_monotone_over_search() {
        let (prob, _) = random_instance(77);
        let mut last = f64::INFINITY;
        let mut obs = |e: &NodeEvent| {
            assert!(e.incumbent <= last + 1e-12);
            last = e.incumbent;
        };
        let sol = solve_subset_observed(&prob, Some(&mut obs)).unwrap();
        assert!(sol.objective <= last + 1e-12);
        assert!(sol.objective >= sol.lower_bound - 1e-12);
    }

    #[test]
    fn zero_time_limit_returns_incumbent() {
        let (mut prob, _) = random_instance(5);
        prob.time_limit = 0.0;
        let sol = solve_subset(&prob).unwrap();
        assert_eq!(sol.status, SolveStatus::TimeLimitSuboptimal);
        assert_eq!(sol.support().len(), prob.k);
        assert!(sol.lower_bound <= sol.objective);
    }

    #[test]
    fn node_limit_is_deterministic() {
        let (mut prob, _) = random_instance(8);
        prob.node_limit = Some(5);
        prob.time_limit = f64::INFINITY;
        let a = solve_subset(&prob).unwrap();
        let b = solve_subset(&prob).unwrap();
        assert_eq!(a.support(), b.support());
        assert_eq!(a.nodes_explored, b.nodes_explored);
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn k_larger_than_columns_is_error() {
        let theta = Mat::from_fn(10, 3, |i, j| (i + j) as f64);
        let prob = SubsetProblem::new(theta, vec![1.0; 10], 4, 0.0);
        assert!(solve_subset(&prob).is_err());
    }

    #[test]
    fn support_invariance_under_column_scaling() {
        // The argmin support on standardized data does not change when raw
        // columns are rescaled (standardization absorbs the scale).
        use crate::dictionary::{standardize, DesignMatrix, StandardizeMode};
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 60;
        let x = Mat::from_fn(n, 4, |_, _| StandardNormal.sample(&mut rng));
        let y_col: Vec<f64> = (0..n)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                3.0 * x.get(i, 0) - 2.0 * x.get(i, 2) + 0.3 * z
            })
            .collect();
        let scaled = Mat::from_fn(n, 4, |i, j| x.get(i, j) * [1.0, 100.0, 0.01, 7.0][j]);
        let solve_on = |raw: &Mat| -> Vec<usize> {
            let dm = DesignMatrix::from_matrix(raw.clone());
            let y = Mat::from_fn(n, 1, |i, _| y_col[i]);
            let (std, ys) = standardize(&dm, &y, StandardizeMode::ScaleOnly).unwrap();
            let prob = SubsetProblem::new(std.theta.clone(), ys.col(0), 2, 1e-4);
            solve_subset(&prob).unwrap().support()
        };
        assert_eq!(solve_on(&x), solve_on(&scaled));
    }
}
