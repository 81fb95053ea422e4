//! Cross-module property suites: sampled soundness of propagated bounds,
//! relaxation structure, mode dominance, and box monotonicity on the random
//! graph corpus.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use veribound::boundprop::{
    backward_bounds, compute_preactivations, concretize, output_bounds, BoundMode,
};
use veribound::fixtures::{random_graph, GenOp};
use veribound::graph::{Graph, OpKind};
use veribound::interval::BoxDomain;
use veribound::relax::{relax_node, PreBox, RelaxParams};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_domain(graph: &Graph, rng: &mut ChaCha8Rng, max_half_width: f64) -> BoxDomain {
    let dim = graph.input_dim();
    let mut lo = Vec::with_capacity(dim);
    let mut hi = Vec::with_capacity(dim);
    for _ in 0..dim {
        let c: f64 = rng.random_range(-1.0..1.0);
        let w: f64 = rng.random_range(0.0..max_half_width);
        lo.push(c - w);
        hi.push(c + w);
    }
    BoxDomain::from_slices(&lo, &hi).unwrap()
}

const ALL_OPS: &[GenOp] = &[
    GenOp::Relu,
    GenOp::Tanh,
    GenOp::Sigmoid,
    GenOp::Sin,
    GenOp::Square,
    GenOp::Mul,
];

/// Scalar output bounds contain every sampled evaluation, across 100 random
/// graphs and both modes.
#[test]
fn output_bounds_sound_on_random_corpus() {
    let mut r = rng(100);
    for seed in 0..100u64 {
        let graph = random_graph(seed, 3, 3, ALL_OPS);
        let domain = random_domain(&graph, &mut r, 1.0);
        for mode in [BoundMode::Ibp, BoundMode::Crown] {
            let (bounds, _) =
                output_bounds(&graph, &domain, &RelaxParams::default(), mode).unwrap();
            for _ in 0..100 {
                let x = domain.sample(&mut r);
                let y = graph.evaluate(&x).unwrap();
                for j in 0..y.len() {
                    assert!(
                        bounds.lower[j] - 1e-7 <= y[j] && y[j] <= bounds.upper[j] + 1e-7,
                        "graph {seed} {mode:?}: coord {j} at {x}: {} outside [{}, {}]",
                        y[j],
                        bounds.lower[j],
                        bounds.upper[j]
                    );
                }
            }
        }
    }
}

/// The affine planes bound the function pointwise, not just their extremes.
#[test]
fn affine_bound_planes_sound_on_random_corpus() {
    let mut r = rng(200);
    for seed in 0..40u64 {
        let graph = random_graph(seed, 3, 3, ALL_OPS);
        let domain = random_domain(&graph, &mut r, 1.0);
        let (_, affine) =
            output_bounds(&graph, &domain, &RelaxParams::default(), BoundMode::Crown).unwrap();
        for _ in 0..250 {
            let x = domain.sample(&mut r);
            let y = graph.evaluate(&x).unwrap();
            let lo = affine.lower_at(&x);
            let hi = affine.upper_at(&x);
            for j in 0..y.len() {
                assert!(lo[j] <= y[j] + 1e-7, "graph {seed}: lower plane above value");
                assert!(hi[j] >= y[j] - 1e-7, "graph {seed}: upper plane below value");
            }
        }
    }
}

/// Crown output intervals sit inside the Ibp intervals on ReLU/tanh nets.
#[test]
fn crown_dominates_ibp_on_relu_tanh_corpus() {
    let mut r = rng(300);
    for seed in 0..50u64 {
        let graph = random_graph(seed, 3, 4, &[GenOp::Relu, GenOp::Tanh]);
        let domain = random_domain(&graph, &mut r, 1.0);
        let (ibp, _) =
            output_bounds(&graph, &domain, &RelaxParams::default(), BoundMode::Ibp).unwrap();
        let (crown, _) =
            output_bounds(&graph, &domain, &RelaxParams::default(), BoundMode::Crown).unwrap();
        for j in 0..ibp.dim() {
            assert!(
                crown.lower[j] >= ibp.lower[j] - 1e-9,
                "graph {seed}: crown lower {} below ibp {}",
                crown.lower[j],
                ibp.lower[j]
            );
            assert!(
                crown.upper[j] <= ibp.upper[j] + 1e-9,
                "graph {seed}: crown upper {} above ibp {}",
                crown.upper[j],
                ibp.upper[j]
            );
        }
    }
}

/// Crown preactivation intervals are subsets of the Ibp ones, node by node.
#[test]
fn crown_cache_within_ibp_cache() {
    let mut r = rng(400);
    for seed in 0..20u64 {
        let graph = random_graph(seed, 3, 3, ALL_OPS);
        let domain = random_domain(&graph, &mut r, 1.0);
        let ibp =
            compute_preactivations(&graph, &domain, &RelaxParams::default(), BoundMode::Ibp)
                .unwrap();
        let crown =
            compute_preactivations(&graph, &domain, &RelaxParams::default(), BoundMode::Crown)
                .unwrap();
        for id in 0..graph.nodes().len() {
            let (Some(a), Some(b)) = (crown.get(id), ibp.get(id)) else { continue };
            for j in 0..a.dim() {
                assert!(a.lower[j] >= b.lower[j] - 1e-9);
                assert!(a.upper[j] <= b.upper[j] + 1e-9);
            }
        }
    }
}

/// Shrinking the box never loosens Ibp bounds.
#[test]
fn ibp_monotone_under_box_shrinking() {
    let mut r = rng(500);
    for seed in 0..30u64 {
        let graph = random_graph(seed, 3, 3, ALL_OPS);
        let outer = random_domain(&graph, &mut r, 1.0);
        // A random sub-box.
        let dim = outer.dim();
        let mut lo = Vec::with_capacity(dim);
        let mut hi = Vec::with_capacity(dim);
        for i in 0..dim {
            let w = outer.width(i);
            let a: f64 = r.random_range(0.0..0.5);
            let b: f64 = r.random_range(0.5..1.0);
            lo.push(outer.lower()[i] + a * w);
            hi.push(outer.lower()[i] + b * w);
        }
        let inner = BoxDomain::from_slices(&lo, &hi).unwrap();
        let (big, _) =
            output_bounds(&graph, &outer, &RelaxParams::default(), BoundMode::Ibp).unwrap();
        let (small, _) =
            output_bounds(&graph, &inner, &RelaxParams::default(), BoundMode::Ibp).unwrap();
        for j in 0..big.dim() {
            assert!(small.lower[j] >= big.lower[j] - 1e-12);
            assert!(small.upper[j] <= big.upper[j] + 1e-12);
        }
    }
}

/// Crown-mode bounds on the fixture corpus are monotone under shrinking too.
#[test]
fn crown_monotone_on_fixture_corpus() {
    let mut r = rng(550);
    for seed in 0..20u64 {
        let graph = random_graph(seed, 2, 3, &[GenOp::Relu, GenOp::Tanh, GenOp::Sin]);
        let outer = random_domain(&graph, &mut r, 1.0);
        let dim = outer.dim();
        let mut lo = Vec::with_capacity(dim);
        let mut hi = Vec::with_capacity(dim);
        for i in 0..dim {
            let w = outer.width(i);
            lo.push(outer.lower()[i] + 0.25 * w);
            hi.push(outer.lower()[i] + 0.75 * w);
        }
        let inner = BoxDomain::from_slices(&lo, &hi).unwrap();
        let (big, _) =
            output_bounds(&graph, &outer, &RelaxParams::default(), BoundMode::Crown).unwrap();
        let (small, _) =
            output_bounds(&graph, &inner, &RelaxParams::default(), BoundMode::Crown).unwrap();
        for j in 0..big.dim() {
            assert!(small.lower[j] >= big.lower[j] - 1e-9);
            assert!(small.upper[j] <= big.upper[j] + 1e-9);
        }
    }
}

/// Elementwise operators produce diagonal relaxation matrices.
#[test]
fn elementwise_relaxations_are_diagonal() {
    let mut r = rng(600);
    let graph = random_graph(7, 2, 4, &[GenOp::Tanh]);
    let act = graph
        .nodes()
        .iter()
        .position(|n| n.kind == OpKind::Tanh)
        .expect("tanh node exists");
    let node = &graph.nodes()[act];
    for _ in 0..20 {
        let d = node.dim;
        let lo = Array1::from_shape_fn(d, |_| r.random_range(-2.0..0.0));
        let hi = &lo + Array1::from_shape_fn(d, |_| r.random_range(0.0..2.0));
        let pre = PreBox::new(lo, hi);
        let rel = relax_node(node, &[pre], &RelaxParams::default()).unwrap();
        for m in rel.lower_coeffs.iter().chain(rel.upper_coeffs.iter()) {
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        assert_eq!(m[[i, j]], 0.0);
                    }
                }
            }
        }
    }
}

/// Backward bounds to an interior target agree with evaluation there.
#[test]
fn interior_target_bounds_sound() {
    let mut r = rng(700);
    for seed in 0..10u64 {
        let graph = random_graph(seed, 3, 3, ALL_OPS);
        let domain = random_domain(&graph, &mut r, 0.8);
        let cache =
            compute_preactivations(&graph, &domain, &RelaxParams::default(), BoundMode::Crown)
                .unwrap();
        // Pick an interior nonlinear node if one exists.
        let Some(target) = graph
            .nodes()
            .iter()
            .position(|n| n.kind.is_nonlinear())
        else {
            continue;
        };
        let bound =
            backward_bounds(&graph, &domain, target, &cache, &RelaxParams::default()).unwrap();
        let scalar = concretize(&bound);
        for _ in 0..200 {
            let x = domain.sample(&mut r);
            let values = graph.evaluate_nodes(&x).unwrap();
            for j in 0..values[target].len() {
                assert!(scalar.lower[j] - 1e-7 <= values[target][j]);
                assert!(values[target][j] <= scalar.upper[j] + 1e-7);
            }
        }
    }
}

/// Affine-only graphs are bounded exactly: both planes coincide with the map
/// and the concrete bounds match vertex enumeration.
#[test]
fn affine_bounds_match_vertex_enumeration() {
    let mut r = rng(800);
    for _ in 0..50 {
        let in_dim = r.random_range(1..=3usize);
        let out_dim = r.random_range(1..=2usize);
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| r.random_range(-2.0..2.0));
        let bias = Array1::from_shape_fn(out_dim, |_| r.random_range(-1.0..1.0));
        let mut b = veribound::GraphBuilder::new("affine");
        b.input("x", in_dim).affine("y", w.clone(), bias.clone(), "x").output("y");
        let graph = b.build().unwrap();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for _ in 0..in_dim {
            let c: f64 = r.random_range(-1.0..1.0);
            let width: f64 = r.random_range(0.0..2.0);
            lo.push(c - width);
            hi.push(c + width);
        }
        let domain = BoxDomain::from_slices(&lo, &hi).unwrap();
        let (bounds, affine) =
            output_bounds(&graph, &domain, &RelaxParams::default(), BoundMode::Crown).unwrap();
        assert_eq!(affine.lower_coeffs, affine.upper_coeffs);

        // Oracle: enumerate the box vertices.
        let mut min_v = vec![f64::INFINITY; out_dim];
        let mut max_v = vec![f64::NEG_INFINITY; out_dim];
        for mask in 0..(1usize << in_dim) {
            let x = Array1::from_iter(
                (0..in_dim).map(|i| if mask & (1 << i) != 0 { hi[i] } else { lo[i] }),
            );
            let y = graph.evaluate(&x).unwrap();
            for j in 0..out_dim {
                min_v[j] = min_v[j].min(y[j]);
                max_v[j] = max_v[j].max(y[j]);
            }
        }
        for j in 0..out_dim {
            assert!((bounds.lower[j] - min_v[j]).abs() < 1e-10);
            assert!((bounds.upper[j] - max_v[j]).abs() < 1e-10);
        }
    }
}
