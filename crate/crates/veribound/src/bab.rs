//! The complete verifier: falsify → incomplete bounding → input-domain
//! branch-and-bound.
//!
//! Stage 1 runs PGD on the root box. Stage 2 is one bounding pass per clause
//! on the root (the incomplete verifier). Stage 3 maintains a stack of
//! subdomains, popping batches, bounding every still-pending clause per
//! subdomain, running a reduced-budget PGD on survivors, and bisecting them.
//! A clause certified on a box stays certified on all of its sub-boxes, so
//! children inherit only the pending set.

use crate::boundprop::{concretize, BoundError, PreactivationCache, Propagator};
use crate::falsify::{pgd_search, Counterexample, PgdConfig};
use crate::graph::Graph;
use crate::interval::{BoxDomain, BoxError};
use crate::relax::RelaxParams;
use crate::spec::{Clause, SpecCnf, SpecError};
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Bound(#[from] BoundError),
}

/// Split-dimension selection heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branching {
    /// Bisect the longest edge.
    Naive,
    /// Bisect the dimension maximizing `|a̲_i| · width_i` from the current
    /// lower-bound coefficients of the worst pending clause.
    Smart,
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub timeout: Duration,
    pub max_domains: usize,
    /// Subdomains bounded per batched pass.
    pub batch: usize,
    pub branching: Branching,
    /// Root-level falsifier budget.
    pub pgd: PgdConfig,
    /// Certified margins in `(-tolerance, tolerance]` stay pending; only
    /// margins above it certify.
    pub tolerance: f64,
    pub params: RelaxParams,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(360),
            max_domains: 200_000,
            batch: 64,
            branching: Branching::Smart,
            pgd: PgdConfig::default(),
            tolerance: 1e-9,
            params: RelaxParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyStatus {
    Verified,
    Falsified,
    Unknown,
}

impl VerifyStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            VerifyStatus::Verified => "verified",
            VerifyStatus::Falsified => "falsified",
            VerifyStatus::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyStats {
    pub domains_visited: usize,
    pub max_depth: usize,
    pub wall_time: Duration,
    /// Verified: the smallest certified clause margin over the partition.
    /// Falsified: the counterexample's margin. Unknown: the worst live bound.
    pub final_worst_bound: f64,
    /// Total volume of subdomains on which every clause was certified.
    pub certified_volume: f64,
    /// Volume still on the stack (or stuck) at termination.
    pub live_volume: f64,
}

#[derive(Debug, Clone)]
pub struct VerifyResult {
    pub status: VerifyStatus,
    pub counterexample: Option<Counterexample>,
    pub stats: VerifyStats,
}

/// One unverified subdomain on the stack.
#[derive(Debug, Clone)]
struct Subdomain {
    domain: BoxDomain,
    /// Clause indices not yet certified on this box.
    pending: Vec<usize>,
    depth: usize,
    /// Worst certified lower margin inherited from the bounding pass that
    /// created this subdomain.
    parent_bound: f64,
}

/// Certified lower bound on one clause's margin over a box: the max over its
/// atoms of each atom's certified lower bound. Positive proves the clause.
pub fn clause_lower_bound(
    graph: &Graph,
    clause: &Clause,
    domain: &BoxDomain,
    params: &RelaxParams,
) -> Result<f64, BoundError> {
    let prop = Propagator::new(graph);
    let cache = prop.preactivations(domain, params, crate::boundprop::BoundMode::Crown)?;
    let (bounds, _) = bound_clauses(&prop, domain, &cache, &[clause], params)?;
    Ok(bounds[0])
}

/// Bound a set of clauses in one stacked backward pass. Returns the certified
/// lower bound per clause and, for splitting, the lower-bound coefficient row
/// of each clause's best atom.
fn bound_clauses(
    prop: &Propagator,
    domain: &BoxDomain,
    cache: &PreactivationCache,
    clauses: &[&Clause],
    params: &RelaxParams,
) -> Result<(Vec<f64>, Vec<Array1<f64>>), BoundError> {
    let graph = prop.graph();
    let out_dim = graph.output_dim();
    let total_atoms: usize = clauses.iter().map(|c| c.atoms().len()).sum();
    let mut rows = Array2::zeros((total_atoms, out_dim));
    let mut r = 0;
    for clause in clauses {
        for atom in clause.atoms() {
            rows.row_mut(r).assign(&atom.coeffs);
            r += 1;
        }
    }
    let bound = prop.bound_rows(domain, cache, graph.output_id(), &rows, params)?;
    let crown_lower = concretize(&bound).lower;

    // An interval pass over the cached output box can be tighter when the
    // relaxation at the output is loose; take the better of the two.
    let out_pre = cache.get(graph.output_id()).expect("output cached");
    let mut bounds = Vec::with_capacity(clauses.len());
    let mut split_rows = Vec::with_capacity(clauses.len());
    let mut r = 0;
    for clause in clauses {
        let mut best = f64::NEG_INFINITY;
        let mut best_row = r;
        for atom in clause.atoms() {
            let ibp_lower: f64 = atom
                .coeffs
                .iter()
                .enumerate()
                .map(|(j, &c)| {
                    if c >= 0.0 {
                        c * out_pre.lower[j]
                    } else {
                        c * out_pre.upper[j]
                    }
                })
                .sum();
            let lb = crown_lower[r].max(ibp_lower) + atom.bias;
            if lb > best {
                best = lb;
                best_row = r;
            }
            r += 1;
        }
        bounds.push(best);
        // Per-dimension sensitivity of the best atom: the larger coefficient
        // magnitude of the two planes. The lower plane alone can be
        // identically zero (a McCormick plane anchored at a zero corner),
        // which would starve the splitting heuristic.
        let sens = ndarray::Zip::from(bound.lower_coeffs.row(best_row))
            .and(bound.upper_coeffs.row(best_row))
            .map_collect(|&a, &b| a.abs().max(b.abs()));
        split_rows.push(sens);
    }
    Ok((bounds, split_rows))
}

/// Bisect a box. Naive splits the longest edge; smart weighs widths by the
/// supplied lower-bound coefficients. Ties break toward the lowest index.
/// Dimensions whose width has shrunk to the ULP scale of their endpoints are
/// no longer split candidates: bisecting them cannot make progress.
pub fn split(
    domain: &BoxDomain,
    lower_row: Option<&Array1<f64>>,
    strategy: Branching,
) -> Result<(BoxDomain, BoxDomain), BoxError> {
    let mut best: Option<(usize, f64)> = None;
    for i in 0..domain.dim() {
        let iv = domain.interval(i);
        let w = iv.width();
        if w <= (iv.lo.abs() + iv.hi.abs()) * 1e-15 {
            continue;
        }
        let score = match (strategy, lower_row) {
            (Branching::Smart, Some(row)) => row[i].abs() * w,
            _ => w,
        };
        match best {
            Some((_, s)) if score <= s => {}
            _ => best = Some((i, score)),
        }
    }
    let Some((dim, score)) = best else {
        return Err(BoxError::ZeroWidth);
    };
    if score == 0.0 && strategy == Branching::Smart {
        // The coefficient row carries no information; take the longest edge.
        return split(domain, None, Branching::Naive);
    }
    Ok(domain.split_at(dim))
}

enum Outcome {
    Certified { volume: f64, newly_certified_min: f64 },
    Falsified(Counterexample),
    Split { children: Vec<Subdomain>, newly_certified_min: f64 },
    Stuck { volume: f64, worst_bound: f64, newly_certified_min: f64 },
}

fn process_subdomain(
    prop: &Propagator,
    spec: &SpecCnf,
    sub: &Subdomain,
    seq: u64,
    cfg: &VerifyConfig,
) -> Result<Outcome, BoundError> {
    let cache =
        prop.preactivations(&sub.domain, &cfg.params, crate::boundprop::BoundMode::Crown)?;
    let clauses: Vec<&Clause> = sub.pending.iter().map(|&i| &spec.clauses[i]).collect();
    let (bounds, rows) = bound_clauses(prop, &sub.domain, &cache, &clauses, &cfg.params)?;

    let mut still_pending = Vec::new();
    let mut newly_certified_min = f64::INFINITY;
    let mut worst = f64::INFINITY;
    let mut worst_row: Option<&Array1<f64>> = None;
    for (k, &clause_idx) in sub.pending.iter().enumerate() {
        if bounds[k] > cfg.tolerance {
            newly_certified_min = newly_certified_min.min(bounds[k]);
        } else {
            still_pending.push(clause_idx);
            if bounds[k] < worst {
                worst = bounds[k];
                worst_row = Some(&rows[k]);
            }
        }
    }

    if still_pending.is_empty() {
        return Ok(Outcome::Certified { volume: sub.domain.volume(), newly_certified_min });
    }

    // Fine-grained falsification on the subdomain (the root already had its
    // full-budget PGD in stage 1).
    if sub.depth > 0 {
        let sub_spec = SpecCnf {
            clauses: still_pending.iter().map(|&i| spec.clauses[i].clone()).collect(),
            input_box: sub.domain.clone(),
        };
        let sub_cfg = PgdConfig::subdomain(cfg.pgd.seed.wrapping_add(seq.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        if let Some(cex) = pgd_search(prop.graph(), &sub_spec, &sub.domain, &sub_cfg) {
            return Ok(Outcome::Falsified(Counterexample {
                x: cex.x,
                clause_index: still_pending[cex.clause_index],
                margin: cex.margin,
            }));
        }
    }

    match split(&sub.domain, worst_row, cfg.branching) {
        Ok((left, right)) => {
            let child = |domain: BoxDomain| Subdomain {
                domain,
                pending: still_pending.clone(),
                depth: sub.depth + 1,
                parent_bound: worst,
            };
            Ok(Outcome::Split {
                children: vec![child(left), child(right)],
                newly_certified_min,
            })
        }
        Err(BoxError::ZeroWidth) => Ok(Outcome::Stuck {
            volume: sub.domain.volume(),
            worst_bound: worst,
            newly_certified_min,
        }),
        Err(other) => unreachable!("split_at cannot produce {other}"),
    }
}

/// Run the full three-stage pipeline.
pub fn verify(graph: &Graph, spec: &SpecCnf, cfg: &VerifyConfig) -> Result<VerifyResult, VerifyError> {
    spec.check_dims(graph)?;
    let start = Instant::now();
    let root = spec.input_box.clone();
    let root_volume = root.volume();

    // Stage 1: falsifier on the root box.
    if let Some(cex) = pgd_search(graph, spec, &root, &cfg.pgd) {
        let margin = cex.margin;
        return Ok(VerifyResult {
            status: VerifyStatus::Falsified,
            counterexample: Some(cex),
            stats: VerifyStats {
                domains_visited: 0,
                max_depth: 0,
                wall_time: start.elapsed(),
                final_worst_bound: margin,
                certified_volume: 0.0,
                live_volume: root_volume,
            },
        });
    }

    // Stages 2 and 3 share the loop: the first pop is the root bounding pass.
    let prop = Propagator::new(graph);
    let mut stack = vec![Subdomain {
        domain: root,
        pending: (0..spec.clauses.len()).collect(),
        depth: 0,
        parent_bound: f64::NEG_INFINITY,
    }];
    let mut stuck_bounds: Vec<f64> = Vec::new();
    let mut stuck_volume = 0.0;
    let mut certified_volume = 0.0;
    let mut min_certified = f64::INFINITY;
    let mut domains_visited = 0usize;
    let mut max_depth = 0usize;
    let mut seq = 0u64;

    let finish = |status: VerifyStatus,
                  counterexample: Option<Counterexample>,
                  worst: f64,
                  domains_visited: usize,
                  max_depth: usize,
                  certified_volume: f64,
                  live_volume: f64| {
        Ok(VerifyResult {
            status,
            counterexample,
            stats: VerifyStats {
                domains_visited,
                max_depth,
                wall_time: start.elapsed(),
                final_worst_bound: worst,
                certified_volume,
                live_volume,
            },
        })
    };

    while !stack.is_empty() {
        if start.elapsed() > cfg.timeout || domains_visited >= cfg.max_domains {
            let live: f64 = stack.iter().map(|s| s.domain.volume()).sum::<f64>() + stuck_volume;
            let worst = stack
                .iter()
                .map(|s| s.parent_bound)
                .chain(stuck_bounds.iter().copied())
                .fold(f64::INFINITY, f64::min);
            return finish(
                VerifyStatus::Unknown,
                None,
                worst,
                domains_visited,
                max_depth,
                certified_volume,
                live,
            );
        }

        let take = cfg.batch.min(stack.len());
        let popped: Vec<Subdomain> = stack.split_off(stack.len() - take);
        let batch_seq = seq;
        seq += take as u64;
        domains_visited += take;
        for sub in &popped {
            max_depth = max_depth.max(sub.depth);
        }

        let outcomes: Result<Vec<Outcome>, BoundError> = popped
            .par_iter()
            .enumerate()
            .map(|(k, sub)| process_subdomain(&prop, spec, sub, batch_seq + k as u64, cfg))
            .collect();

        for outcome in outcomes? {
            match outcome {
                Outcome::Certified { volume, newly_certified_min } => {
                    certified_volume += volume;
                    min_certified = min_certified.min(newly_certified_min);
                }
                Outcome::Falsified(cex) => {
                    let live: f64 =
                        stack.iter().map(|s| s.domain.volume()).sum::<f64>() + stuck_volume;
                    let margin = cex.margin;
                    return finish(
                        VerifyStatus::Falsified,
                        Some(cex),
                        margin,
                        domains_visited,
                        max_depth,
                        certified_volume,
                        live,
                    );
                }
                Outcome::Split { children, newly_certified_min } => {
                    min_certified = min_certified.min(newly_certified_min);
                    // Push right first so the left child is explored first.
                    for child in children.into_iter().rev() {
                        stack.push(child);
                    }
                }
                Outcome::Stuck { volume, worst_bound, newly_certified_min } => {
                    min_certified = min_certified.min(newly_certified_min);
                    stuck_volume += volume;
                    stuck_bounds.push(worst_bound);
                }
            }
        }
    }

    if stuck_bounds.is_empty() {
        finish(
            VerifyStatus::Verified,
            None,
            min_certified,
            domains_visited,
            max_depth,
            certified_volume,
            0.0,
        )
    } else {
        let worst = stuck_bounds.iter().copied().fold(f64::INFINITY, f64::min);
        finish(
            VerifyStatus::Unknown,
            None,
            worst,
            domains_visited,
            max_depth,
            certified_volume,
            stuck_volume,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, OpKind};
    use crate::spec::{check_point, Atom, PointCheck};
    use ndarray::array;

    fn square_minus_one() -> Graph {
        let mut b = GraphBuilder::new("sqm1");
        b.input("x", 1)
            .op("s", OpKind::Square, &["x"])
            .affine("y", array![[1.0]], array![-1.0], "s")
            .output("y");
        b.build().unwrap()
    }

    fn single_clause_spec(coeff: f64, bias: f64, domain: BoxDomain) -> SpecCnf {
        SpecCnf::new(
            vec![Clause::new(vec![Atom::greater(array![coeff], bias).unwrap()]).unwrap()],
            domain,
        )
        .unwrap()
    }

    #[test]
    fn clause_bound_certifies_away_from_zero() {
        let g = square_minus_one();
        let clause = Clause::new(vec![Atom::greater(array![1.0], 0.0).unwrap()]).unwrap();
        let domain = BoxDomain::from_slices(&[1.1], &[2.0]).unwrap();
        let lb = clause_lower_bound(&g, &clause, &domain, &RelaxParams::default()).unwrap();
        assert!(lb > 0.0, "got {lb}");
        // and is a genuine lower bound on the true minimum 0.21
        assert!(lb <= 0.21 + 1e-12);
    }

    #[test]
    fn clause_bound_inconclusive_across_zero() {
        let g = square_minus_one();
        let clause = Clause::new(vec![Atom::greater(array![1.0], 0.0).unwrap()]).unwrap();
        let domain = BoxDomain::symmetric(1, 2.0);
        let lb = clause_lower_bound(&g, &clause, &domain, &RelaxParams::default()).unwrap();
        assert!(lb <= 0.0, "got {lb}");
    }

    #[test]
    fn generous_clause_certifies_immediately() {
        let g = square_minus_one();
        let clause = Clause::new(vec![Atom::greater(array![1.0], 10.0).unwrap()]).unwrap();
        let domain = BoxDomain::symmetric(1, 2.0);
        let lb = clause_lower_bound(&g, &clause, &domain, &RelaxParams::default()).unwrap();
        assert!(lb > 0.0);
    }

    #[test]
    fn split_naive_longest_edge() {
        let b = BoxDomain::from_slices(&[0.0, 0.0], &[4.0, 1.0]).unwrap();
        let (l, _) = split(&b, None, Branching::Naive).unwrap();
        assert_eq!(l.upper()[0], 2.0);
        assert_eq!(l.upper()[1], 1.0);
    }

    #[test]
    fn split_smart_weighs_coefficients() {
        let b = BoxDomain::from_slices(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let row = array![0.1, 5.0];
        let (l, _) = split(&b, Some(&row), Branching::Smart).unwrap();
        assert_eq!(l.upper()[0], 1.0);
        assert_eq!(l.upper()[1], 0.5);
    }

    #[test]
    fn split_tie_breaks_to_lowest_index() {
        let b = BoxDomain::from_slices(&[0.0, 0.0], &[2.0, 2.0]).unwrap();
        let row = array![1.0, 1.0];
        let (l, _) = split(&b, Some(&row), Branching::Smart).unwrap();
        assert_eq!(l.upper()[0], 1.0);
        assert_eq!(l.upper()[1], 2.0);
    }

    #[test]
    fn split_zero_width_errors() {
        let b = BoxDomain::from_slices(&[1.0], &[1.0]).unwrap();
        assert!(matches!(split(&b, None, Branching::Naive), Err(BoxError::ZeroWidth)));
    }

    #[test]
    fn sine_above_bound_verifies() {
        let mut b = GraphBuilder::new("sin");
        b.input("x", 1).op("s", OpKind::Sin, &["x"]).output("s");
        let g = b.build().unwrap();
        let domain = BoxDomain::from_slices(&[0.0], &[std::f64::consts::TAU]).unwrap();
        let spec = single_clause_spec(1.0, 1.5, domain);
        let res = verify(&g, &spec, &VerifyConfig::default()).unwrap();
        assert_eq!(res.status, VerifyStatus::Verified);
        assert!(res.stats.final_worst_bound > 0.0);
        assert!((res.stats.certified_volume - spec.input_box.volume()).abs() < 1e-9);
    }

    #[test]
    fn square_property_falsifies_with_confirmed_counterexample() {
        let g = square_minus_one();
        let spec = single_clause_spec(1.0, 0.0, BoxDomain::symmetric(1, 2.0));
        let res = verify(&g, &spec, &VerifyConfig::default()).unwrap();
        assert_eq!(res.status, VerifyStatus::Falsified);
        let cex = res.counterexample.unwrap();
        assert!(matches!(
            check_point(&spec, &g, &cex.x).unwrap(),
            PointCheck::Violated { .. }
        ));
    }

    #[test]
    fn true_square_property_needs_splitting_then_verifies() {
        // x² + 0.5 > 0.4 on [−1, 1]: true with margin 0.1, but the root
        // relaxation of the chord keeps it pending until splits shrink it.
        let mut b = GraphBuilder::new("sq");
        b.input("x", 1)
            .op("s", OpKind::Square, &["x"])
            .affine("y", array![[1.0]], array![0.5], "s")
            .output("y");
        let g = b.build().unwrap();
        let spec = single_clause_spec(1.0, -0.4, BoxDomain::symmetric(1, 1.0));
        let res = verify(&g, &spec, &VerifyConfig::default()).unwrap();
        assert_eq!(res.status, VerifyStatus::Verified);
    }

    #[test]
    fn partition_volume_accounts_for_root() {
        // Two clauses certified at different depths.
        let mut b = GraphBuilder::new("sq2");
        b.input("x", 2)
            .op("s", OpKind::Square, &["x"])
            .op("y", OpKind::SumReduce, &["s"])
            .output("y");
        let g = b.build().unwrap();
        let spec = SpecCnf::new(
            vec![
                Clause::new(vec![Atom::greater(array![1.0], 0.3).unwrap()]).unwrap(),
                Clause::new(vec![Atom::greater(array![1.0], 1.0).unwrap()]).unwrap(),
            ],
            BoxDomain::symmetric(2, 1.0),
        )
        .unwrap();
        let res = verify(&g, &spec, &VerifyConfig::default()).unwrap();
        assert_eq!(res.status, VerifyStatus::Verified);
        let root = spec.input_box.volume();
        assert!(
            ((res.stats.certified_volume - root) / root).abs() < 1e-9,
            "certified {} vs root {root}",
            res.stats.certified_volume
        );
    }

    #[test]
    fn budget_exhaustion_reports_unknown() {
        // sin(x) > −1 − 1e−12: true, but the margin at the trough sits below
        // the certification tolerance, so the bound can never clear it.
        let mut b = GraphBuilder::new("sin");
        b.input("x", 1).op("s", OpKind::Sin, &["x"]).output("s");
        let g = b.build().unwrap();
        let domain = BoxDomain::from_slices(&[0.0], &[std::f64::consts::TAU]).unwrap();
        let spec = single_clause_spec(1.0, 1.0 + 1e-12, domain);
        let cfg = VerifyConfig { max_domains: 50, ..Default::default() };
        let res = verify(&g, &spec, &cfg).unwrap();
        assert_eq!(res.status, VerifyStatus::Unknown);
        assert!(res.stats.live_volume > 0.0);
    }

    #[test]
    fn verdict_agrees_across_branching_strategies() {
        let g = square_minus_one();
        for (coeff, bias, expect) in [
            (1.0, 0.0, VerifyStatus::Falsified),
            (1.0, 1.5, VerifyStatus::Verified),
        ] {
            for strat in [Branching::Naive, Branching::Smart] {
                let spec = single_clause_spec(coeff, bias, BoxDomain::symmetric(1, 2.0));
                let cfg = VerifyConfig { branching: strat, ..Default::default() };
                assert_eq!(verify(&g, &spec, &cfg).unwrap().status, expect);
            }
        }
    }
}
