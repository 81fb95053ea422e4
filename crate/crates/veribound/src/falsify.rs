//! Projected gradient descent counterexample search.
//!
//! Minimizes the worst clause margin over a box. Each step selects the clause
//! with the smallest margin, descends the gradient of a softplus surrogate of
//! that margin through the graph, and projects candidates back onto the box.
//! A counterexample is only ever emitted after exact re-evaluation confirms a
//! non-positive clause margin; relaxed arithmetic never produces one.

use crate::graph::{sigmoid, Graph};
use crate::jacobian::vjp_from_values;
use crate::interval::BoxDomain;
use crate::spec::SpecCnf;
use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Budget and schedule for one PGD search.
#[derive(Debug, Clone, PartialEq)]
pub struct PgdConfig {
    pub restarts: usize,
    pub steps: usize,
    /// Step length relative to each box width.
    pub step_size: f64,
    /// Candidates per restart.
    pub batch: usize,
    pub seed: u64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self { restarts: 5, steps: 100, step_size: 0.1, batch: 64, seed: 42 }
    }
}

impl PgdConfig {
    /// Reduced budget for per-subdomain falsification inside branch-and-bound.
    pub fn subdomain(seed: u64) -> Self {
        Self { restarts: 1, steps: 30, step_size: 0.1, batch: 8, seed }
    }
}

/// An exactly-confirmed violation of one clause.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub x: Array1<f64>,
    pub clause_index: usize,
    /// The violated clause's margin at `x` (≤ 0).
    pub margin: f64,
}

/// Geometric step decay per iteration.
const STEP_DECAY: f64 = 0.98;

/// Search `domain` for a point violating some clause of `spec`. The domain
/// must lie inside the spec's input box. Deterministic for a fixed config.
pub fn pgd_search(
    graph: &Graph,
    spec: &SpecCnf,
    domain: &BoxDomain,
    cfg: &PgdConfig,
) -> Option<Counterexample> {
    debug_assert!(spec.input_box.contains_box(domain));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let widths: Vec<f64> = (0..domain.dim()).map(|i| domain.width(i)).collect();

    for _restart in 0..cfg.restarts {
        let mut candidates: Vec<Array1<f64>> =
            (0..cfg.batch).map(|_| domain.sample(&mut rng)).collect();

        for step in 0..=cfg.steps {
            // Exact check of the whole batch; the winner is the confirmed
            // violation with the smallest (clause index, candidate index).
            let mut best: Option<(usize, usize, f64)> = None;
            let mut evals: Vec<Vec<Array1<f64>>> = Vec::with_capacity(candidates.len());
            for (ci, x) in candidates.iter().enumerate() {
                let values = graph.evaluate_nodes(x).expect("in-box evaluation");
                let y = &values[graph.output_id()];
                for (k, clause) in spec.clauses.iter().enumerate() {
                    if clause.margin(y) <= 0.0 {
                        let better = match best {
                            None => true,
                            Some((bk, bc, _)) => (k, ci) < (bk, bc),
                        };
                        if better {
                            best = Some((k, ci, clause.margin(y)));
                        }
                        break;
                    }
                }
                evals.push(values);
            }
            if let Some((clause_index, ci, margin)) = best {
                return Some(Counterexample {
                    x: candidates[ci].clone(),
                    clause_index,
                    margin,
                });
            }
            if step == cfg.steps {
                break;
            }

            // Descend the softplus surrogate of the steepest clause.
            let decay = STEP_DECAY.powi(step as i32);
            for (ci, x) in candidates.iter_mut().enumerate() {
                let values = &evals[ci];
                let y = &values[graph.output_id()];
                let (worst_clause, worst_margin) = spec
                    .clauses
                    .iter()
                    .enumerate()
                    .map(|(k, c)| (k, c.margin(y)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("nonempty cnf");
                let atom = spec.clauses[worst_clause]
                    .atoms()
                    .iter()
                    .max_by(|a, b| a.margin(y).total_cmp(&b.margin(y)))
                    .expect("nonempty clause");
                let weight = sigmoid(worst_margin);
                let cotangent = &atom.coeffs * weight;
                let grad = vjp_from_values(graph, values, &cotangent)
                    .expect("cotangent dims match output");
                let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
                if scale > 0.0 {
                    for d in 0..x.len() {
                        x[d] -= cfg.step_size * widths[d] * decay * grad[d] / scale;
                    }
                    domain.project(x);
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, OpKind};
    use crate::spec::{check_point, Atom, Clause, PointCheck};
    use ndarray::array;

    fn square_minus_one() -> Graph {
        let mut b = GraphBuilder::new("sqm1");
        b.input("x", 1)
            .op("s", OpKind::Square, &["x"])
            .affine("y", array![[1.0]], array![-1.0], "s")
            .output("y");
        b.build().unwrap()
    }

    fn spec_y_greater(bias: f64, domain: BoxDomain) -> SpecCnf {
        SpecCnf::new(
            vec![Clause::new(vec![Atom::greater(array![1.0], bias).unwrap()]).unwrap()],
            domain,
        )
        .unwrap()
    }

    #[test]
    fn finds_violation_of_square_property() {
        // y = x² − 1 > 0 fails exactly on |x| < 1.
        let g = square_minus_one();
        let spec = spec_y_greater(0.0, BoxDomain::symmetric(1, 2.0));
        let cex = pgd_search(&g, &spec, &spec.input_box.clone(), &PgdConfig::default())
            .expect("violation exists");
        assert!(cex.x[0].abs() < 1.0);
        assert!(cex.margin <= 0.0);
        assert!(matches!(
            check_point(&spec, &g, &cex.x).unwrap(),
            PointCheck::Violated { .. }
        ));
    }

    #[test]
    fn true_property_yields_none() {
        // sin(x) > −1 holds on [0, π].
        let mut b = GraphBuilder::new("sin");
        b.input("x", 1).op("s", OpKind::Sin, &["x"]).output("s");
        let g = b.build().unwrap();
        let domain = BoxDomain::from_slices(&[0.0], &[std::f64::consts::PI]).unwrap();
        let spec = SpecCnf::new(
            vec![Clause::new(vec![Atom::greater(array![1.0], 1.0).unwrap()]).unwrap()],
            domain.clone(),
        )
        .unwrap();
        assert!(pgd_search(&g, &spec, &domain, &PgdConfig::default()).is_none());
    }

    #[test]
    fn zero_width_box_at_satisfying_point() {
        let g = square_minus_one();
        let spec = spec_y_greater(0.0, BoxDomain::symmetric(1, 2.0));
        let point = BoxDomain::from_slices(&[1.5], &[1.5]).unwrap();
        assert!(pgd_search(&g, &spec, &point, &PgdConfig::default()).is_none());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let g = square_minus_one();
        let spec = spec_y_greater(0.0, BoxDomain::symmetric(1, 2.0));
        let cfg = PgdConfig { seed: 7, ..Default::default() };
        let a = pgd_search(&g, &spec, &spec.input_box.clone(), &cfg);
        let b = pgd_search(&g, &spec, &spec.input_box.clone(), &cfg);
        assert_eq!(a, b);
    }
}
