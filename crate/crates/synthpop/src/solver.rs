//! Per-block nonnegative integer least-squares solver.
//!
//! The objective `sum_p ||W_p X - Y_p||^2` separates over blocks (columns of
//! X), so each block is solved independently: a projected-gradient solution
//! of the continuous relaxation, largest-remainder rounding to the integer
//! lattice, then a best-improvement local search over unit increments,
//! decrements, and transfers. Objective values for integer vectors are exact
//! (wide-integer accumulation); floating point only enters the relaxation.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{mix64, Stream};
use crate::schema::{AttributeSchema, GeoId, PredicateSpace};
use crate::tables::{build_query_matrix, CensusTable, QueryMatrix};

/// Vertical stack of the tables' query matrices: a binary matrix stored
/// column-sparse (for each full predicate, the stacked rows containing a 1).
#[derive(Clone, Debug)]
pub struct DesignMatrix {
    rows: usize,
    cols: Vec<Vec<usize>>,
}

impl DesignMatrix {
    pub fn from_query_matrices(ws: &[QueryMatrix]) -> Result<Self> {
        let k_count = ws.first().map(|w| w.cols()).unwrap_or(0);
        let mut cols = vec![Vec::with_capacity(ws.len()); k_count];
        let mut offset = 0;
        for w in ws {
            if w.cols() != k_count {
                return Err(Error::Dimension(format!(
                    "query matrix {:?} has {} columns, expected {k_count}",
                    w.table(),
                    w.cols()
                )));
            }
            for (k, col) in cols.iter_mut().enumerate() {
                col.push(offset + w.row_for(k));
            }
            offset += w.rows();
        }
        Ok(Self { rows: offset, cols })
    }

    /// General binary matrix given as dense rows; entries must be 0 or 1.
    pub fn from_binary_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let k_count = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut cols = vec![Vec::new(); k_count];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k_count {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {k_count}",
                    row.len()
                )));
            }
            for (k, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => cols[k].push(i),
                    _ => {
                        return Err(Error::Format(format!(
                            "entry ({i},{k}) is {v}, not binary"
                        )))
                    }
                }
            }
        }
        Ok(Self {
            rows: rows.len(),
            cols,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_cols(&self) -> usize {
        self.cols.len()
    }

    /// Stacked row indices with a 1 in column `k`, ascending.
    pub fn column(&self, k: usize) -> &[usize] {
        &self.cols[k]
    }
}

/// One block's slice of the fitting problem: the stacked design matrix and
/// the stacked observed counts for that block.
#[derive(Clone, Debug)]
pub struct BlockProblem {
    a: Arc<DesignMatrix>,
    y: Vec<i64>,
    block: GeoId,
}

impl BlockProblem {
    pub fn new(a: Arc<DesignMatrix>, y: Vec<i64>, block: GeoId) -> Result<Self> {
        if y.len() != a.rows() {
            return Err(Error::Dimension(format!(
                "stacked counts have length {}, design matrix has {} rows",
                y.len(),
                a.rows()
            )));
        }
        Ok(Self { a, y, block })
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.a
    }

    pub fn observed(&self) -> &[i64] {
        &self.y
    }

    pub fn block(&self) -> &GeoId {
        &self.block
    }

    pub fn num_full(&self) -> usize {
        self.a.num_cols()
    }

    /// Residual Ax - y.
    fn residual(&self, x: &[i64]) -> Vec<i64> {
        let mut r: Vec<i64> = self.y.iter().map(|&v| -v).collect();
        for (k, col) in self.a.cols.iter().enumerate() {
            let xv = x[k];
            if xv != 0 {
                for &i in col {
                    r[i] += xv;
                }
            }
        }
        r
    }
}

/// Tuning knobs for the per-block solve. All seeds and tie-breaks are fixed,
/// so identical inputs produce identical output.
#[derive(Clone, Debug, PartialEq, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    /// Cap on accepted local-search moves; `None` means 10 times the number
    /// of full predicates.
    pub max_local_search_iters: Option<usize>,
    pub restarts: usize,
    pub relaxation_tolerance: f64,
    pub relaxation_max_iters: usize,
    pub rng_seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            max_local_search_iters: None,
            restarts: 3,
            relaxation_tolerance: 1e-8,
            relaxation_max_iters: 5000,
            rng_seed: 0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be positive".into()));
        }
        if self.relaxation_max_iters == 0 {
            return Err(Error::Config("relaxation_max_iters must be positive".into()));
        }
        if self.relaxation_tolerance.is_nan() || self.relaxation_tolerance <= 0.0 {
            return Err(Error::Config("relaxation_tolerance must be positive".into()));
        }
        if self.max_local_search_iters == Some(0) {
            return Err(Error::Config("max_local_search_iters must be positive".into()));
        }
        Ok(())
    }

    fn local_iters(&self, k_count: usize) -> usize {
        self.max_local_search_iters.unwrap_or(10 * k_count.max(1))
    }
}

/// Outcome of one block solve. The objective is the exact integer value of
/// `||Ax - y||^2` recomputed from `x`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolveResult {
    pub x: Vec<i64>,
    pub objective: u128,
    pub iterations_used: usize,
    pub converged_to_zero: bool,
}

/// Exact squared residual norm for an integer vector.
pub fn objective(x: &[i64], p: &BlockProblem) -> Result<u128> {
    if x.len() != p.num_full() {
        return Err(Error::Dimension(format!(
            "x has length {}, expected {}",
            x.len(),
            p.num_full()
        )));
    }
    Ok(sq_norm(&p.residual(x)))
}

fn sq_norm(r: &[i64]) -> u128 {
    r.iter().map(|&v| (v as i128 * v as i128) as u128).sum()
}

/// Projected gradient on the continuous relaxation `min ||Ax - y||^2, x >= 0`
/// with step 1/L, L = ||A||_1 * ||A||_inf (an upper bound on the largest
/// eigenvalue of A'A). Stops when the objective improves by less than the
/// configured tolerance.
pub fn solve_relaxation(p: &BlockProblem, cfg: &SolveConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let k_count = p.num_full();
    let m = p.a.rows();
    let max_col = p.a.cols.iter().map(Vec::len).max().unwrap_or(0);
    let mut row_deg = vec![0usize; m];
    for col in &p.a.cols {
        for &i in col {
            row_deg[i] += 1;
        }
    }
    let max_row = row_deg.iter().copied().max().unwrap_or(0);
    let lip = (max_col * max_row) as f64;
    let mut x = vec![0.0f64; k_count];
    if lip == 0.0 {
        return Ok(x);
    }

    let mut r = vec![0.0f64; m];
    let mut grad = vec![0.0f64; k_count];
    let mut prev = f64::INFINITY;
    for _ in 0..cfg.relaxation_max_iters {
        for (ri, &yi) in r.iter_mut().zip(&p.y) {
            *ri = -(yi as f64);
        }
        for (k, col) in p.a.cols.iter().enumerate() {
            if x[k] != 0.0 {
                for &i in col {
                    r[i] += x[k];
                }
            }
        }
        let f: f64 = r.iter().map(|v| v * v).sum();
        if prev - f < cfg.relaxation_tolerance {
            break;
        }
        prev = f;
        for (k, col) in p.a.cols.iter().enumerate() {
            grad[k] = col.iter().map(|&i| r[i]).sum();
        }
        for (xk, gk) in x.iter_mut().zip(&grad) {
            *xk = (*xk - gk / lip).max(0.0);
        }
    }
    Ok(x)
}

/// Largest-remainder rounding: floor every entry, then hand out the
/// remaining `round(sum) - sum(floors)` units to the largest fractional
/// parts, ties to the lower predicate index.
pub fn round_counts(xr: &[f64], p: &BlockProblem) -> Vec<i64> {
    assert_eq!(xr.len(), p.num_full(), "rounding input has the wrong length");
    let clamped: Vec<f64> = xr.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    let target = total.round() as i64;
    let mut x: Vec<i64> = clamped.iter().map(|&v| v.floor() as i64).collect();
    let floored: i64 = x.iter().sum();
    let mut remaining = (target - floored).max(0);
    if remaining > 0 {
        let mut by_frac: Vec<(usize, f64)> = clamped
            .iter()
            .enumerate()
            .map(|(k, &v)| (k, v - v.floor()))
            .collect();
        by_frac.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for (k, _) in by_frac {
            if remaining == 0 {
                break;
            }
            x[k] += 1;
            remaining -= 1;
        }
    }
    x
}

enum Move {
    Inc(usize),
    Dec(usize),
    Transfer(usize, usize),
}

/// Best-improvement descent over unit moves: `x_k += 1`, `x_k -= 1` (when
/// positive), and unit transfers `x_k -= 1, x_l += 1`. The scan order is by
/// predicate index and the first of equally good moves wins, so the search
/// is deterministic. The objective strictly decreases with every accepted
/// move.
pub fn local_search(x0: &[i64], p: &BlockProblem, cfg: &SolveConfig) -> SolveResult {
    assert_eq!(x0.len(), p.num_full(), "start vector has the wrong length");
    let k_count = p.num_full();
    let max_iters = cfg.local_iters(k_count);
    let mut x = x0.to_vec();
    let mut r = p.residual(&x);
    let mut obj = sq_norm(&r);

    // Pairwise column-overlap counts let transfer deltas be assembled from
    // the single-move deltas; the table is quadratic in K so it is only
    // materialized for small spaces.
    let shared: Option<Vec<u32>> = if k_count <= 1024 {
        let mut table = vec![0u32; k_count * k_count];
        for k in 0..k_count {
            for l in k..k_count {
                let s = overlap(&p.a.cols[k], &p.a.cols[l]);
                table[k * k_count + l] = s;
                table[l * k_count + k] = s;
            }
        }
        Some(table)
    } else {
        None
    };
    let shared_at = |k: usize, l: usize| -> i128 {
        match &shared {
            Some(t) => t[k * k_count + l] as i128,
            None => overlap(&p.a.cols[k], &p.a.cols[l]) as i128,
        }
    };

    let mut d_plus = vec![0i128; k_count];
    let mut d_minus = vec![0i128; k_count];
    let mut iterations = 0usize;
    while iterations < max_iters && obj > 0 {
        for k in 0..k_count {
            let mut plus = 0i128;
            for &i in &p.a.cols[k] {
                plus += 2 * r[i] as i128 + 1;
            }
            d_plus[k] = plus;
            // Dropping a unit flips the sign of the residual contribution.
            d_minus[k] = 2 * p.a.cols[k].len() as i128 - plus;
        }

        let mut best_delta = 0i128;
        let mut best_move = None;
        for (k, &d) in d_plus.iter().enumerate() {
            if d < best_delta {
                best_delta = d;
                best_move = Some(Move::Inc(k));
            }
        }
        for (k, &d) in d_minus.iter().enumerate() {
            if x[k] > 0 && d < best_delta {
                best_delta = d;
                best_move = Some(Move::Dec(k));
            }
        }
        for k in 0..k_count {
            if x[k] == 0 {
                continue;
            }
            for (l, &plus) in d_plus.iter().enumerate() {
                if l == k {
                    continue;
                }
                let d = d_minus[k] + plus - 2 * shared_at(k, l);
                if d < best_delta {
                    best_delta = d;
                    best_move = Some(Move::Transfer(k, l));
                }
            }
        }

        let Some(mv) = best_move else { break };
        match mv {
            Move::Inc(k) => {
                x[k] += 1;
                for &i in &p.a.cols[k] {
                    r[i] += 1;
                }
            }
            Move::Dec(k) => {
                x[k] -= 1;
                for &i in &p.a.cols[k] {
                    r[i] -= 1;
                }
            }
            Move::Transfer(k, l) => {
                x[k] -= 1;
                for &i in &p.a.cols[k] {
                    r[i] -= 1;
                }
                x[l] += 1;
                for &i in &p.a.cols[l] {
                    r[i] += 1;
                }
            }
        }
        obj = (obj as i128 + best_delta) as u128;
        debug_assert_eq!(obj, sq_norm(&r));
        iterations += 1;
    }

    SolveResult {
        x,
        converged_to_zero: obj == 0,
        objective: obj,
        iterations_used: iterations,
    }
}

fn overlap(a: &[usize], b: &[usize]) -> u32 {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Exact minimizer by exhaustive enumeration of every nonnegative integer
/// vector with total at most `total_bound`, in lexicographic order; ties keep
/// the lexicographically smallest vector. Guarded to tiny instances — this
/// is the test oracle, not a production path.
pub fn brute_force_block(p: &BlockProblem, total_bound: i64) -> Result<SolveResult> {
    let k_count = p.num_full();
    if k_count > 8 || total_bound > 6 {
        return Err(Error::Guard(format!(
            "brute force limited to K <= 8 and total <= 6, got K = {k_count}, total = {total_bound}"
        )));
    }
    if total_bound < 0 {
        return Err(Error::Guard("total bound must be nonnegative".into()));
    }
    let mut x = vec![0i64; k_count];
    let mut best_x = vec![0i64; k_count];
    let mut best_obj = objective(&best_x, p)?;
    let mut evaluated = 1usize;

    fn recurse(
        pos: usize,
        remaining: i64,
        x: &mut Vec<i64>,
        p: &BlockProblem,
        best_x: &mut Vec<i64>,
        best_obj: &mut u128,
        evaluated: &mut usize,
    ) {
        if pos == x.len() {
            if x.iter().all(|&v| v == 0) {
                return; // already scored as the initial incumbent
            }
            let obj = sq_norm(&p.residual(x));
            *evaluated += 1;
            if obj < *best_obj {
                *best_obj = obj;
                best_x.clone_from(x);
            }
            return;
        }
        for v in 0..=remaining {
            x[pos] = v;
            recurse(pos + 1, remaining - v, x, p, best_x, best_obj, evaluated);
        }
        x[pos] = 0;
    }
    recurse(
        0,
        total_bound,
        &mut x,
        p,
        &mut best_x,
        &mut best_obj,
        &mut evaluated,
    );

    Ok(SolveResult {
        converged_to_zero: best_obj == 0,
        x: best_x,
        objective: best_obj,
        iterations_used: evaluated,
    })
}

/// Full per-block pipeline: relaxation, rounding, local search, plus seeded
/// restarts from perturbed rounded points. Keeps the best objective found.
pub fn solve_block(p: &BlockProblem, cfg: &SolveConfig) -> Result<SolveResult> {
    cfg.validate()?;
    let xr = solve_relaxation(p, cfg)?;
    let x0 = round_counts(&xr, p);
    let mut best = local_search(&x0, p, cfg);
    let k_count = p.num_full();
    if k_count >= 2 {
        let mut stream = Stream::new(cfg.rng_seed);
        for _ in 1..cfg.restarts {
            if best.converged_to_zero {
                break;
            }
            let mut start = x0.clone();
            for _ in 0..2 * k_count {
                let k = stream.next_below(k_count as u64) as usize;
                let l = stream.next_below(k_count as u64) as usize;
                if k != l && start[k] > 0 {
                    start[k] -= 1;
                    start[l] += 1;
                }
            }
            let candidate = local_search(&start, p, cfg);
            if candidate.objective < best.objective {
                best = candidate;
            }
        }
    }
    debug_assert!(best.x.iter().all(|&v| v >= 0));
    Ok(best)
}

/// Fitted counts: full predicates as rows, blocks as columns. Every entry is
/// a nonnegative integer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountsMatrix {
    values: Matrix,
    blocks: Vec<GeoId>,
}

impl CountsMatrix {
    pub fn new(values: Matrix, blocks: Vec<GeoId>) -> Result<Self> {
        if values.cols() != blocks.len() {
            return Err(Error::Dimension(format!(
                "counts have {} columns for {} blocks",
                values.cols(),
                blocks.len()
            )));
        }
        if values.values().iter().any(|&v| v < 0) {
            return Err(Error::Format("counts matrix has a negative entry".into()));
        }
        Ok(Self { values, blocks })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn blocks(&self) -> &[GeoId] {
        &self.blocks
    }

    pub fn num_full(&self) -> usize {
        self.values.rows()
    }

    pub fn total(&self) -> i64 {
        self.values.total()
    }
}

/// One line of the solver summary CSV.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolveSummary {
    pub block: GeoId,
    pub objective: u128,
    pub iterations: usize,
    pub converged_to_zero: bool,
}

pub struct SolveAllResult {
    pub counts: CountsMatrix,
    pub summaries: Vec<SolveSummary>,
    pub total_objective: u128,
}

/// Solve every block independently (in parallel) and assemble the counts
/// matrix. Per-block seeds are `cfg.rng_seed ^ mix64(block index)`, so the
/// result does not depend on thread scheduling and a one-block run matches
/// `solve_block` exactly.
pub fn solve_all(
    tables: &[CensusTable],
    space: &PredicateSpace,
    schema: &AttributeSchema,
    cfg: &SolveConfig,
) -> Result<SolveAllResult> {
    cfg.validate()?;
    if tables.is_empty() {
        return Err(Error::Format("no tables to fit".into()));
    }
    let blocks = tables[0].blocks().to_vec();
    for t in &tables[1..] {
        if t.blocks() != blocks.as_slice() {
            return Err(Error::Format(format!(
                "table {:?} does not share the block ordering of table {:?}",
                t.definition().name(),
                tables[0].definition().name()
            )));
        }
    }
    let ws: Vec<QueryMatrix> = tables
        .iter()
        .map(|t| build_query_matrix(t.definition(), space, schema))
        .collect::<Result<_>>()?;
    let design = Arc::new(DesignMatrix::from_query_matrices(&ws)?);

    let results: Vec<SolveResult> = (0..blocks.len())
        .into_par_iter()
        .map(|j| {
            let mut y = Vec::with_capacity(design.rows());
            for t in tables {
                for i in 0..t.values().rows() {
                    y.push(t.values().at(i, j));
                }
            }
            let problem = BlockProblem::new(Arc::clone(&design), y, blocks[j].clone())?;
            let block_cfg = SolveConfig {
                rng_seed: cfg.rng_seed ^ mix64(j as u64),
                ..cfg.clone()
            };
            solve_block(&problem, &block_cfg)
        })
        .collect::<Result<_>>()?;

    let k_count = space.len();
    let mut values = Matrix::zeros(k_count, blocks.len());
    let mut summaries = Vec::with_capacity(blocks.len());
    let mut total_objective = 0u128;
    for (j, res) in results.iter().enumerate() {
        for k in 0..k_count {
            *values.at_mut(k, j) = res.x[k];
        }
        total_objective += res.objective;
        summaries.push(SolveSummary {
            block: blocks[j].clone(),
            objective: res.objective,
            iterations: res.iterations_used,
            converged_to_zero: res.converged_to_zero,
        });
    }
    let counts = CountsMatrix::new(values, blocks)?;
    Ok(SolveAllResult {
        counts,
        summaries,
        total_objective,
    })
}

/// Recompute the full objective `sum_p ||W_p X - Y_p||^2` directly from the
/// assembled counts matrix, in exact integer arithmetic. Independent of the
/// per-block path; the two must agree.
pub fn total_objective(
    tables: &[CensusTable],
    x: &CountsMatrix,
    space: &PredicateSpace,
    schema: &AttributeSchema,
) -> Result<u128> {
    let mut total = 0u128;
    for t in tables {
        let w = build_query_matrix(t.definition(), space, schema)?;
        let agg = crate::tables::aggregate(&w, x.values())?;
        for i in 0..agg.rows() {
            for j in 0..agg.cols() {
                let d = (agg.at(i, j) - t.values().at(i, j)) as i128;
                total += (d * d) as u128;
            }
        }
    }
    Ok(total)
}

/// Render per-block solver summaries as CSV.
pub fn solver_summary_csv(summaries: &[SolveSummary]) -> String {
    let mut out = String::from("block,objective,iterations,converged\n");
    for s in summaries {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.block.code(),
            s.objective,
            s.iterations,
            s.converged_to_zero
        ));
    }
    out
}
