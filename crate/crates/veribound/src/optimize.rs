//! Certified global minimization of a linear functional of the graph output
//! over a box, by best-first branch-and-bound with incumbent pruning.
//!
//! Each subdomain carries a certified lower bound of the objective (clamped
//! to its parent's, so the global bound is monotone) and contributes
//! incumbent candidates from a PGD run projected onto feasibility by exact
//! rejection. Subdomains bounded above the incumbent are pruned; subdomains
//! on which some constraint clause is certified violated are pruned as
//! infeasible. Nonlinear objectives are folded into the graph as an extra
//! output coordinate and minimized as a linear row.

use crate::boundprop::{concretize, BoundError, BoundMode, Propagator};
use crate::falsify::PgdConfig;
use crate::graph::Graph;
use crate::interval::{BoxDomain, BoxError};
use crate::jacobian::vjp_from_values;
use crate::relax::RelaxParams;
use crate::spec::{PointCheck, SpecCnf, SpecError};
use crate::bab::{split, Branching};
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("objective has {got} coefficients, graph output has dimension {expected}")]
    ObjectiveDim { expected: usize, got: usize },
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Bound(#[from] BoundError),
}

#[derive(Debug, Clone)]
pub struct OptConfig {
    pub gap_tol: f64,
    pub timeout: Duration,
    pub max_domains: usize,
    /// Subdomains processed per batch.
    pub batch: usize,
    pub branching: Branching,
    pub pgd: PgdConfig,
    /// Margin tolerance for infeasibility pruning.
    pub tolerance: f64,
    pub params: RelaxParams,
    /// Retain pruned subdomains in the stats for audit.
    pub record_pruned: bool,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            gap_tol: 1e-3,
            timeout: Duration::from_secs(360),
            max_domains: 200_000,
            batch: 32,
            branching: Branching::Smart,
            pgd: PgdConfig { restarts: 1, steps: 40, step_size: 0.1, batch: 16, seed: 42 },
            tolerance: 1e-9,
            params: RelaxParams::default(),
            record_pruned: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptStatus {
    /// Terminated with `gap ≤ gap_tol`.
    OptimalWithinGap,
    BudgetExhausted,
    /// Every subdomain was certified infeasible and no feasible point exists.
    Infeasible,
}

impl OptStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptStatus::OptimalWithinGap => "optimal-within-gap",
            OptStatus::BudgetExhausted => "budget-exhausted",
            OptStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptStats {
    pub domains_visited: usize,
    pub max_depth: usize,
    pub wall_time: Duration,
    /// Certified global bound after each batch; non-decreasing for minimize.
    pub bound_trace: Vec<f64>,
    /// Incumbent value after each batch; non-increasing for minimize.
    pub primal_trace: Vec<f64>,
    /// Subdomains pruned by the incumbent or by infeasibility.
    pub pruned: Vec<BoxDomain>,
}

/// Optimization direction of the original query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone)]
pub struct OptResult {
    /// The best exactly-feasible point found, if any.
    pub x_best: Option<Array1<f64>>,
    /// Objective value at `x_best`, in the query's own sense.
    pub primal_value: f64,
    /// Certified bound on the optimum: a lower bound for minimize, an upper
    /// bound for maximize.
    pub certified_bound: f64,
    /// `|primal_value − certified_bound|`; zero when both are infinite.
    pub gap: f64,
    pub status: OptStatus,
    pub sense: Sense,
    pub stats: OptStats,
}

struct HeapEntry {
    bound: f64,
    seq: u64,
    domain: BoxDomain,
    depth: usize,
    split_row: Option<Array1<f64>>,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.seq == other.seq
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse for best-first (lowest bound),
        // with the sequence number as a deterministic tie-break.
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

enum Eval {
    Live { entry: HeapEntry, candidate: Option<(Array1<f64>, f64)> },
    PrunedInfeasible { domain: BoxDomain },
}

struct Problem<'a> {
    graph: &'a Graph,
    objective: &'a Array1<f64>,
    constraints: Option<&'a SpecCnf>,
}

impl Problem<'_> {
    fn objective_at(&self, x: &Array1<f64>) -> f64 {
        let y = self.graph.evaluate(x).expect("in-box evaluation");
        self.objective.dot(&y)
    }

    fn feasible(&self, x: &Array1<f64>) -> bool {
        match self.constraints {
            None => true,
            Some(spec) => {
                spec.input_box.contains(x)
                    && matches!(
                        crate::spec::check_point(spec, self.graph, x),
                        Ok(PointCheck::Satisfied)
                    )
            }
        }
    }
}

fn evaluate_domain(
    prop: &Propagator,
    problem: &Problem,
    domain: BoxDomain,
    depth: usize,
    parent_bound: f64,
    seq: u64,
    cfg: &OptConfig,
) -> Result<Eval, BoundError> {
    let cache = prop.preactivations(&domain, &cfg.params, BoundMode::Crown)?;
    let graph = prop.graph();

    // Constraint clauses certified violated everywhere make the subdomain
    // infeasible: every atom's upper bound must sit below zero.
    if let Some(spec) = problem.constraints {
        let out_pre = cache.get(graph.output_id()).expect("output cached");
        for clause in &spec.clauses {
            let total: usize = clause.atoms().len();
            let mut rows = Array2::zeros((total, graph.output_dim()));
            for (r, atom) in clause.atoms().iter().enumerate() {
                rows.row_mut(r).assign(&atom.coeffs);
            }
            let bound = prop.bound_rows(&domain, &cache, graph.output_id(), &rows, &cfg.params)?;
            let upper = concretize(&bound).upper;
            let violated_everywhere =
                clause.atoms().iter().enumerate().all(|(r, atom)| {
                    let ibp_upper: f64 = atom
                        .coeffs
                        .iter()
                        .enumerate()
                        .map(|(j, &c)| {
                            if c >= 0.0 {
                                c * out_pre.upper[j]
                            } else {
                                c * out_pre.lower[j]
                            }
                        })
                        .sum();
                    upper[r].min(ibp_upper) + atom.bias <= -cfg.tolerance
                });
            if violated_everywhere {
                return Ok(Eval::PrunedInfeasible { domain });
            }
        }
    }

    // Objective lower bound, clamped to the parent's so the global certified
    // bound is monotone under splitting.
    let rows = {
        let mut m = Array2::zeros((1, graph.output_dim()));
        m.row_mut(0).assign(problem.objective);
        m
    };
    let bound = prop.bound_rows(&domain, &cache, graph.output_id(), &rows, &cfg.params)?;
    let crown_lower = concretize(&bound).lower[0];
    let out_pre = cache.get(graph.output_id()).expect("output cached");
    let ibp_lower: f64 = problem
        .objective
        .iter()
        .enumerate()
        .map(|(j, &c)| if c >= 0.0 { c * out_pre.lower[j] } else { c * out_pre.upper[j] })
        .sum();
    let lb = crown_lower.max(ibp_lower).max(parent_bound);

    // Incumbent search: PGD on the objective, feasibility by rejection.
    let candidate = pgd_minimize_objective(problem, &domain, seq, cfg);

    Ok(Eval::Live {
        entry: HeapEntry {
            bound: lb,
            seq,
            domain,
            depth,
            split_row: Some(bound.lower_coeffs.row(0).to_owned()),
        },
        candidate,
    })
}

/// PGD descent of the objective over a box; returns the best exactly-feasible
/// point found.
fn pgd_minimize_objective(
    problem: &Problem,
    domain: &BoxDomain,
    seq: u64,
    cfg: &OptConfig,
) -> Option<(Array1<f64>, f64)> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
        cfg.pgd.seed.wrapping_add(seq.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
    );
    let graph = problem.graph;
    let widths: Vec<f64> = (0..domain.dim()).map(|i| domain.width(i)).collect();
    let mut best: Option<(Array1<f64>, f64)> = None;
    let mut consider = |x: &Array1<f64>, value: f64, problem: &Problem| {
        if problem.feasible(x) {
            let better = best.as_ref().map_or(true, |(_, v)| value < *v);
            if better {
                best = Some((x.clone(), value));
            }
        }
    };

    for _ in 0..cfg.pgd.restarts {
        let mut candidates: Vec<Array1<f64>> =
            (0..cfg.pgd.batch).map(|_| domain.sample(&mut rng)).collect();
        // Include the center so degenerate boxes are always probed.
        candidates.push(domain.center());

        for step in 0..=cfg.pgd.steps {
            for x in candidates.iter() {
                consider(x, problem.objective_at(x), problem);
            }
            if step == cfg.pgd.steps {
                break;
            }
            let decay = 0.98f64.powi(step as i32);
            for x in candidates.iter_mut() {
                let values = graph.evaluate_nodes(x).expect("in-box evaluation");
                let grad = vjp_from_values(graph, &values, problem.objective)
                    .expect("objective dims match");
                let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
                if scale > 0.0 {
                    for d in 0..x.len() {
                        x[d] -= cfg.pgd.step_size * widths[d] * decay * grad[d] / scale;
                    }
                    domain.project(x);
                }
            }
        }
    }
    best
}

/// Certified global minimization of `objectiveᵀ · F(x)` over the box.
pub fn minimize(
    graph: &Graph,
    objective: &Array1<f64>,
    domain: &BoxDomain,
    constraints: Option<&SpecCnf>,
    cfg: &OptConfig,
) -> Result<OptResult, OptimizeError> {
    if objective.len() != graph.output_dim() {
        return Err(OptimizeError::ObjectiveDim {
            expected: graph.output_dim(),
            got: objective.len(),
        });
    }
    if let Some(spec) = constraints {
        spec.check_dims(graph)?;
    }
    let start = Instant::now();
    let problem = Problem { graph, objective, constraints };
    let prop = Propagator::new(graph);

    let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::new();
    let mut incumbent: Option<(Array1<f64>, f64)> = None;
    let mut stats = OptStats {
        domains_visited: 0,
        max_depth: 0,
        wall_time: Duration::ZERO,
        bound_trace: Vec::new(),
        primal_trace: Vec::new(),
        pruned: Vec::new(),
    };
    let mut seq = 0u64;

    // Root evaluation.
    match evaluate_domain(&prop, &problem, domain.clone(), 0, f64::NEG_INFINITY, seq, cfg)? {
        Eval::Live { entry, candidate } => {
            if let Some((x, v)) = candidate {
                incumbent = Some((x, v));
            }
            heap.push(entry);
        }
        Eval::PrunedInfeasible { domain } => {
            if cfg.record_pruned {
                stats.pruned.push(domain);
            }
        }
    }
    seq += 1;
    stats.domains_visited += 1;

    let global_bound = |heap: &BinaryHeap<HeapEntry>, incumbent: &Option<(Array1<f64>, f64)>| {
        match heap.peek() {
            Some(top) => top.bound,
            None => incumbent.as_ref().map_or(f64::INFINITY, |(_, v)| *v),
        }
    };

    loop {
        let primal = incumbent.as_ref().map_or(f64::INFINITY, |(_, v)| *v);
        let bound = global_bound(&heap, &incumbent);
        stats.bound_trace.push(bound);
        stats.primal_trace.push(primal);

        let gap = primal - bound;
        if heap.is_empty() {
            stats.wall_time = start.elapsed();
            return Ok(match incumbent {
                None => OptResult {
                    x_best: None,
                    primal_value: f64::INFINITY,
                    certified_bound: f64::INFINITY,
                    gap: 0.0,
                    status: OptStatus::Infeasible,
                    sense: Sense::Minimize,
                    stats,
                },
                Some((x, v)) => OptResult {
                    x_best: Some(x),
                    primal_value: v,
                    certified_bound: v,
                    gap: 0.0,
                    status: OptStatus::OptimalWithinGap,
                    sense: Sense::Minimize,
                    stats,
                },
            });
        }
        if incumbent.is_some() && gap <= cfg.gap_tol {
            stats.wall_time = start.elapsed();
            let (x, v) = incumbent.unwrap();
            return Ok(OptResult {
                x_best: Some(x),
                primal_value: v,
                certified_bound: bound,
                gap,
                status: OptStatus::OptimalWithinGap,
                sense: Sense::Minimize,
                stats,
            });
        }
        if start.elapsed() > cfg.timeout || stats.domains_visited >= cfg.max_domains {
            stats.wall_time = start.elapsed();
            let (x_best, primal_value) = match incumbent {
                Some((x, v)) => (Some(x), v),
                None => (None, f64::INFINITY),
            };
            return Ok(OptResult {
                x_best,
                primal_value,
                certified_bound: bound,
                gap: primal_value - bound,
                status: OptStatus::BudgetExhausted,
                sense: Sense::Minimize,
                stats,
            });
        }

        // Pop the most promising subdomains, split, and evaluate children.
        let mut work: Vec<HeapEntry> = Vec::with_capacity(cfg.batch);
        while work.len() < cfg.batch {
            let Some(top) = heap.pop() else { break };
            // Entries may have gone stale after incumbent improvements.
            if top.bound > primal {
                if cfg.record_pruned {
                    stats.pruned.push(top.domain.clone());
                }
                continue;
            }
            work.push(top);
        }
        if work.is_empty() {
            continue;
        }

        let mut jobs: Vec<(BoxDomain, usize, f64, u64)> = Vec::with_capacity(work.len() * 2);
        for entry in &work {
            match split(&entry.domain, entry.split_row.as_ref(), cfg.branching) {
                Ok((left, right)) => {
                    jobs.push((left, entry.depth + 1, entry.bound, seq));
                    jobs.push((right, entry.depth + 1, entry.bound, seq + 1));
                    seq += 2;
                }
                Err(BoxError::ZeroWidth) => {
                    // A point box: its bound is exact; the PGD pass already
                    // probed its center, so nothing more can be learned.
                    continue;
                }
                Err(other) => unreachable!("split_at cannot produce {other}"),
            }
        }

        let evals: Result<Vec<Eval>, BoundError> = jobs
            .into_par_iter()
            .map(|(d, depth, parent, s)| evaluate_domain(&prop, &problem, d, depth, parent, s, cfg))
            .collect();
        for eval in evals? {
            stats.domains_visited += 1;
            match eval {
                Eval::Live { entry, candidate } => {
                    stats.max_depth = stats.max_depth.max(entry.depth);
                    if let Some((x, v)) = candidate {
                        let better = incumbent.as_ref().map_or(true, |(_, best)| v < *best);
                        if better {
                            incumbent = Some((x, v));
                        }
                    }
                    let primal = incumbent.as_ref().map_or(f64::INFINITY, |(_, v)| *v);
                    if entry.bound > primal {
                        if cfg.record_pruned {
                            stats.pruned.push(entry.domain.clone());
                        }
                    } else {
                        heap.push(entry);
                    }
                }
                Eval::PrunedInfeasible { domain } => {
                    if cfg.record_pruned {
                        stats.pruned.push(domain);
                    }
                }
            }
        }
    }
}

/// Certified global maximization: negate the objective, delegate to
/// [`minimize`], and map the results back.
pub fn maximize(
    graph: &Graph,
    objective: &Array1<f64>,
    domain: &BoxDomain,
    constraints: Option<&SpecCnf>,
    cfg: &OptConfig,
) -> Result<OptResult, OptimizeError> {
    let negated = -objective.clone();
    let inner = minimize(graph, &negated, domain, constraints, cfg)?;
    let mut stats = inner.stats;
    for v in &mut stats.bound_trace {
        *v = -*v;
    }
    for v in &mut stats.primal_trace {
        *v = -*v;
    }
    Ok(OptResult {
        x_best: inner.x_best,
        primal_value: -inner.primal_value,
        certified_bound: -inner.certified_bound,
        gap: inner.gap,
        status: inner.status,
        sense: Sense::Maximize,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, OpKind};
    use ndarray::array;

    fn sin_graph() -> Graph {
        let mut b = GraphBuilder::new("sin");
        b.input("x", 1).op("s", OpKind::Sin, &["x"]).output("s");
        b.build().unwrap()
    }

    #[test]
    fn minimize_sin_over_full_period() {
        let g = sin_graph();
        let domain = BoxDomain::from_slices(&[0.0], &[std::f64::consts::TAU]).unwrap();
        let res =
            minimize(&g, &array![1.0], &domain, None, &OptConfig::default()).unwrap();
        assert_eq!(res.status, OptStatus::OptimalWithinGap);
        assert!((res.primal_value + 1.0).abs() < 1e-3, "primal {}", res.primal_value);
        let x = res.x_best.unwrap()[0];
        assert!((x - 3.0 * std::f64::consts::FRAC_PI_2).abs() < 0.05, "x {x}");
        assert!(res.gap <= 1e-3);
        assert!(res.certified_bound <= res.primal_value);
    }

    #[test]
    fn minimize_square_interior_minimum() {
        let mut b = GraphBuilder::new("sq");
        b.input("x", 1).op("s", OpKind::Square, &["x"]).output("s");
        let g = b.build().unwrap();
        let domain = BoxDomain::from_slices(&[-1.0], &[2.0]).unwrap();
        let res =
            minimize(&g, &array![1.0], &domain, None, &OptConfig::default()).unwrap();
        assert_eq!(res.status, OptStatus::OptimalWithinGap);
        assert!(res.primal_value.abs() < 1e-3);
        assert!(res.certified_bound >= -1e-6);
    }

    #[test]
    fn traces_are_monotone() {
        let g = sin_graph();
        let domain = BoxDomain::from_slices(&[0.0], &[std::f64::consts::TAU]).unwrap();
        let res =
            minimize(&g, &array![1.0], &domain, None, &OptConfig::default()).unwrap();
        for w in res.stats.bound_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "bound trace not monotone: {w:?}");
        }
        for w in res.stats.primal_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "primal trace not monotone: {w:?}");
        }
        assert!(res.gap >= 0.0);
    }

    #[test]
    fn maximize_sin_over_half_period() {
        let g = sin_graph();
        let domain = BoxDomain::from_slices(&[0.0], &[std::f64::consts::PI]).unwrap();
        let res =
            maximize(&g, &array![1.0], &domain, None, &OptConfig::default()).unwrap();
        assert_eq!(res.status, OptStatus::OptimalWithinGap);
        assert!((res.primal_value - 1.0).abs() < 1e-3);
        assert!(res.certified_bound >= res.primal_value - 1e-12);
    }

    #[test]
    fn maximize_constant_graph_closes_gap_immediately() {
        let mut b = GraphBuilder::new("c");
        b.input("x", 1)
            .constant("k", vec![2.5])
            .op("y", OpKind::Add, &["k", "k"])
            .output("y");
        let g = b.build().unwrap();
        let res = maximize(
            &g,
            &array![1.0],
            &BoxDomain::symmetric(1, 1.0),
            None,
            &OptConfig::default(),
        )
        .unwrap();
        assert_eq!(res.status, OptStatus::OptimalWithinGap);
        assert!((res.primal_value - 5.0).abs() < 1e-9);
        assert!(res.gap <= 1e-3);
    }

    #[test]
    fn maximize_negated_square() {
        let mut b = GraphBuilder::new("negsq");
        b.input("x", 1)
            .op("s", OpKind::Square, &["x"])
            .op("y", OpKind::Neg, &["s"])
            .output("y");
        let g = b.build().unwrap();
        let res = maximize(
            &g,
            &array![1.0],
            &BoxDomain::symmetric(1, 1.0),
            None,
            &OptConfig::default(),
        )
        .unwrap();
        assert!((res.primal_value - 0.0).abs() < 1e-3);
    }

    #[test]
    fn infeasible_constraints_reported() {
        use crate::spec::{Atom, Clause};
        let g = sin_graph();
        let domain = BoxDomain::from_slices(&[0.0], &[std::f64::consts::PI]).unwrap();
        // sin(x) > 2 is impossible.
        let constraints = SpecCnf::new(
            vec![Clause::new(vec![Atom::greater(array![1.0], -2.0).unwrap()]).unwrap()],
            domain.clone(),
        )
        .unwrap();
        let res =
            minimize(&g, &array![1.0], &domain, Some(&constraints), &OptConfig::default())
                .unwrap();
        assert_eq!(res.status, OptStatus::Infeasible);
        assert!(res.x_best.is_none());
    }

    #[test]
    fn constrained_minimum_lands_on_feasible_side() {
        // minimize sin(x) on [0, 2π] subject to sin(x) > −0.5: optimum −0.5
        // approached from the feasible side.
        use crate::spec::{Atom, Clause};
        let g = sin_graph();
        let domain = BoxDomain::from_slices(&[0.0], &[std::f64::consts::TAU]).unwrap();
        let constraints = SpecCnf::new(
            vec![Clause::new(vec![Atom::greater(array![1.0], 0.5).unwrap()]).unwrap()],
            domain.clone(),
        )
        .unwrap();
        let res =
            minimize(&g, &array![1.0], &domain, Some(&constraints), &OptConfig::default())
                .unwrap();
        let x = res.x_best.unwrap();
        assert!(x[0].sin() > -0.5);
        assert!(res.primal_value >= -0.5);
        assert!(res.primal_value < -0.4, "primal {}", res.primal_value);
    }
}
