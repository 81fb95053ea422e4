//! The embedded corpus of desk-scale graphs, control systems, and
//! brute-force oracles used by the test suites and by `selftest`.
//!
//! Oracles here go through exact graph evaluation only — never through the
//! bounding or branch-and-bound code paths they are meant to check. Every
//! fixture expectation is reproduced by its oracle before being asserted.

use crate::bab::{verify, Branching, VerifyConfig, VerifyStatus};
use crate::boundprop::{output_bounds, BoundMode};
use crate::control::{
    build_barrier, build_contraction, build_continuous_lyapunov, build_discrete_lyapunov,
    build_robust_roa, reach_tube, LevelParams, Role, SystemBundle,
};
use crate::graph::{Graph, GraphBuilder, OpKind};
use crate::interval::BoxDomain;
use crate::optimize::{minimize, OptConfig, OptStatus};
use crate::relax::RelaxParams;
use crate::spec::SpecCnf;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("grid oracle supports at most 3 input dimensions, got {0}")]
    DimTooLarge(usize),
}

// ---------------------------------------------------------------------------
// Small named graphs
// ---------------------------------------------------------------------------

/// `f(x) = ReLU(2x − 1) + 3`.
pub fn toy_graph() -> Graph {
    let mut b = GraphBuilder::new("toy");
    b.input("x", 1)
        .affine("pre", Array2::from_elem((1, 1), 2.0), Array1::from_elem(1, -1.0), "x")
        .op("act", OpKind::Relu, &["pre"])
        .affine("y", Array2::from_elem((1, 1), 1.0), Array1::from_elem(1, 3.0), "act")
        .output("y");
    b.build().expect("toy graph is valid")
}

pub fn identity_graph(dim: usize) -> Graph {
    let mut b = GraphBuilder::new("identity");
    b.input("x", dim).output("x");
    b.build().expect("identity graph is valid")
}

/// `y = sin(x)`.
pub fn sin_graph() -> Graph {
    let mut b = GraphBuilder::new("sin");
    b.input("x", 1).op("s", OpKind::Sin, &["x"]).output("s");
    b.build().expect("sin graph is valid")
}

/// `y = x² − 1`.
pub fn square_minus_one_graph() -> Graph {
    let mut b = GraphBuilder::new("square-minus-one");
    b.input("x", 1)
        .op("s", OpKind::Square, &["x"])
        .affine("y", Array2::from_elem((1, 1), 1.0), Array1::from_elem(1, -1.0), "s")
        .output("y");
    b.build().expect("graph is valid")
}

/// A 2-D instance that stays unresolved at the root: two sine nodes of the
/// same coordinate cancel, `y = sin(x₁) − sin(x₁) + 0.1 ≡ 0.1 > 0`, but
/// neither interval arithmetic nor the independent per-node relaxations see
/// the cancellation until the box shrinks. The first coordinate is inert and
/// long, so naive branching wastes splits on it while smart branching never
/// touches it.
pub fn anisotropic_sin_instance() -> (Graph, SpecCnf) {
    let mut b = GraphBuilder::new("anisotropic-sin");
    b.input("x", 2)
        .op("x1", OpKind::Slice { start: 1, end: 2 }, &["x"])
        .op("s1", OpKind::Sin, &["x1"])
        .op("s2", OpKind::Sin, &["x1"])
        .op("diff", OpKind::Sub, &["s1", "s2"])
        .affine("y", Array2::from_elem((1, 1), 1.0), Array1::from_elem(1, 0.1), "diff")
        .output("y");
    let graph = b.build().expect("graph is valid");
    let domain = BoxDomain::from_slices(&[0.0, -2.5], &[10.0, 2.5]).unwrap();
    let spec = SpecCnf::new(
        vec![crate::spec::Clause::new(vec![
            crate::spec::Atom::greater(Array1::from_elem(1, 1.0), 0.0).unwrap(),
        ])
        .unwrap()],
        domain,
    )
    .unwrap();
    (graph, spec)
}

// ---------------------------------------------------------------------------
// Random graph generator
// ---------------------------------------------------------------------------

/// Operator families the generator may draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenOp {
    Relu,
    Tanh,
    Sigmoid,
    Sin,
    Square,
    Mul,
}

/// A layered random graph: alternating affine maps and drawn nonlinearities,
/// deterministic in the seed. Weights stay at a fixed moderate scale so
/// bounds remain finite and informative.
pub fn random_graph(seed: u64, depth: usize, width: usize, ops: &[GenOp]) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = rng.random_range(1..=2usize);
    let out_dim = rng.random_range(1..=2usize);
    let scale = 1.2 / (width as f64).sqrt();
    let draw_affine =
        |rng: &mut ChaCha8Rng, rows: usize, cols: usize| -> (Array2<f64>, Array1<f64>) {
            let w = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale));
            let bias = Array1::from_shape_fn(rows, |_| rng.random_range(-0.3..0.3));
            (w, bias)
        };

    let mut b = GraphBuilder::new(format!("random-{seed}"));
    b.input("x", input_dim);
    let mut current = "x".to_string();
    let mut cur_dim = input_dim;
    for layer in 0..depth {
        let op = ops[rng.random_range(0..ops.len())];
        match op {
            GenOp::Mul => {
                let (w1, b1) = draw_affine(&mut rng, width, cur_dim);
                let (w2, b2) = draw_affine(&mut rng, width, cur_dim);
                let a = format!("l{layer}a");
                let c = format!("l{layer}b");
                let m = format!("l{layer}m");
                b.affine(&a, w1, b1, &current);
                b.affine(&c, w2, b2, &current);
                b.op(&m, OpKind::Mul, &[&a, &c]);
                current = m;
            }
            unary => {
                let (w, bias) = draw_affine(&mut rng, width, cur_dim);
                let pre = format!("l{layer}pre");
                let act = format!("l{layer}act");
                b.affine(&pre, w, bias, &current);
                let kind = match unary {
                    GenOp::Relu => OpKind::Relu,
                    GenOp::Tanh => OpKind::Tanh,
                    GenOp::Sigmoid => OpKind::Sigmoid,
                    GenOp::Sin => OpKind::Sin,
                    GenOp::Square => OpKind::Square,
                    GenOp::Mul => unreachable!(),
                };
                b.op(&act, kind, &[&pre]);
                current = act;
            }
        }
        cur_dim = width;
    }
    let (w, bias) = draw_affine(&mut rng, out_dim, cur_dim);
    b.affine("y", w, bias, &current);
    b.output("y");
    b.build().expect("generated graph is valid by construction")
}

// ---------------------------------------------------------------------------
// Grid oracles
// ---------------------------------------------------------------------------

fn grid_points(domain: &BoxDomain, per_dim: usize) -> Vec<Array1<f64>> {
    let dim = domain.dim();
    let steps = per_dim.max(2);
    let mut points = Vec::new();
    let mut idx = vec![0usize; dim];
    loop {
        let x = Array1::from_iter((0..dim).map(|d| {
            let w = domain.width(d);
            domain.lower()[d] + w * idx[d] as f64 / (steps - 1) as f64
        }));
        points.push(x);
        let mut d = 0;
        loop {
            if d == dim {
                return points;
            }
            idx[d] += 1;
            if idx[d] < steps {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Exhaustive grid plus random sampling for a specification violation.
/// Returns the first violating point found, by exact evaluation only.
pub fn grid_violation(
    graph: &Graph,
    spec: &SpecCnf,
    per_dim: usize,
) -> Result<Option<Array1<f64>>, FixtureError> {
    let domain = &spec.input_box;
    if domain.dim() > 3 {
        return Err(FixtureError::DimTooLarge(domain.dim()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x0f1e_d0a1);
    let random = (0..10_000).map(|_| domain.sample(&mut rng));
    for x in grid_points(domain, per_dim).into_iter().chain(random) {
        let y = graph.evaluate(&x).expect("in-box evaluation");
        if spec.margins(&y).iter().any(|&m| m <= 0.0) {
            return Ok(Some(x));
        }
    }
    Ok(None)
}

/// Exhaustive grid plus random sampling for the minimum of a linear
/// functional of the output, optionally filtered by constraint satisfaction.
pub fn grid_minimum(
    graph: &Graph,
    objective: &Array1<f64>,
    domain: &BoxDomain,
    constraints: Option<&SpecCnf>,
    per_dim: usize,
) -> Result<Option<(Array1<f64>, f64)>, FixtureError> {
    if domain.dim() > 3 {
        return Err(FixtureError::DimTooLarge(domain.dim()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x0f1e_d0a2);
    let random = (0..10_000).map(|_| domain.sample(&mut rng));
    let mut best: Option<(Array1<f64>, f64)> = None;
    for x in grid_points(domain, per_dim).into_iter().chain(random) {
        let y = graph.evaluate(&x).expect("in-box evaluation");
        if let Some(spec) = constraints {
            if spec.margins(&y).iter().any(|&m| m <= 0.0) {
                continue;
            }
        }
        let v = objective.dot(&y);
        if best.as_ref().map_or(true, |(_, bv)| v < *bv) {
            best = Some((x, v));
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Control fixtures
// ---------------------------------------------------------------------------

/// Scalar map `g(x) = kx` as a one-node dynamics fragment.
fn scalar_linear_dynamics(k: f64) -> Graph {
    let mut b = GraphBuilder::new("scalar-linear");
    b.input("x", 1)
        .affine("g", Array2::from_elem((1, 1), k), Array1::zeros(1), "x")
        .output("g");
    b.build().unwrap()
}

/// `V(x) = x²` for scalar states.
fn scalar_quadratic_certificate() -> Graph {
    let mut b = GraphBuilder::new("vsq");
    b.input("x", 1).op("v", OpKind::Square, &["x"]).output("v");
    b.build().unwrap()
}

/// Fixture (a): `g(x) = 0.5x` with `V(x) = x²` on `[−1, 1]`. Verified with
/// `κ = 0.5`; the `κ = 0.9` variant demands a faster decrease than the system
/// has and falsifies.
pub fn scalar_lyapunov_bundle() -> (SystemBundle, BoxDomain) {
    let bundle = SystemBundle {
        name: "scalar-halving".into(),
        dynamics: scalar_linear_dynamics(0.5),
        dynamics_inputs: vec![Role::State],
        controller: None,
        certificate: Some(scalar_quadratic_certificate()),
        metric: None,
        disturbance_bound: None,
        control_matrix: None,
    };
    (bundle, BoxDomain::symmetric(1, 1.0))
}

pub fn scalar_lyapunov_params(kappa: f64) -> LevelParams {
    LevelParams { kappa: Some(kappa), rho: Some(1.0), ..Default::default() }
}

/// Fixture (b): the planar rotation `x⁺ = 0.9·R(0.5)·x` with the quadratic
/// certificate `V(x) = xᵀPx`, `P` solved by iterating `P ← AᵀPA + I` to
/// convergence.
pub fn planar_rotation_bundle() -> (SystemBundle, LevelParams, BoxDomain) {
    let theta: f64 = 0.5;
    let a = {
        let (s, c) = theta.sin_cos();
        let mut m = Array2::zeros((2, 2));
        m[[0, 0]] = 0.9 * c;
        m[[0, 1]] = -0.9 * s;
        m[[1, 0]] = 0.9 * s;
        m[[1, 1]] = 0.9 * c;
        m
    };
    let p = solve_discrete_lyapunov(&a);

    let mut dyn_b = GraphBuilder::new("rotation");
    dyn_b.input("x", 2).affine("g", a, Array1::zeros(2), "x").output("g");
    let dynamics = dyn_b.build().unwrap();

    let mut v_b = GraphBuilder::new("vquad");
    v_b.input("x", 2)
        .affine("px", p, Array1::zeros(2), "x")
        .op("m", OpKind::Mul, &["x", "px"])
        .op("v", OpKind::SumReduce, &["m"])
        .output("v");
    let certificate = v_b.build().unwrap();

    let bundle = SystemBundle {
        name: "planar-rotation".into(),
        dynamics,
        dynamics_inputs: vec![Role::State],
        controller: None,
        certificate: Some(certificate),
        metric: None,
        disturbance_bound: None,
        control_matrix: None,
    };
    let params = LevelParams { kappa: Some(0.1), rho: Some(4.0), ..Default::default() };
    (bundle, params, BoxDomain::symmetric(2, 1.0))
}

/// Brute iteration of `P ← AᵀPA + I` to a fixed point.
fn solve_discrete_lyapunov(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut p = Array2::eye(n);
    for _ in 0..10_000 {
        let next = a.t().dot(&p).dot(a) + Array2::<f64>::eye(n);
        let delta = (&next - &p).iter().map(|v| v.abs()).fold(0.0, f64::max);
        p = next;
        if delta < 1e-13 {
            break;
        }
    }
    p
}

/// Fixture (c): the continuous system `ẋ = ∓(x − 0.1 sin x)` with `V = x²`.
/// `stable = true` gives the contracting field; `false` flips the sign, which
/// breaks the shell decrease condition.
pub fn scalar_continuous_bundle(stable: bool) -> (SystemBundle, LevelParams, BoxDomain) {
    let sign = if stable { -1.0 } else { 1.0 };
    let mut b = GraphBuilder::new("scalar-field");
    b.input("x", 1)
        .op("s", OpKind::Sin, &["x"])
        .affine("lin", Array2::from_elem((1, 1), sign), Array1::zeros(1), "x")
        .affine("sin.scaled", Array2::from_elem((1, 1), -0.1 * sign), Array1::zeros(1), "s")
        .op("f", OpKind::Add, &["lin", "sin.scaled"])
        .output("f");
    let dynamics = b.build().unwrap();
    let bundle = SystemBundle {
        name: "scalar-continuous".into(),
        dynamics,
        dynamics_inputs: vec![Role::State],
        controller: None,
        certificate: Some(scalar_quadratic_certificate()),
        metric: None,
        disturbance_bound: None,
        control_matrix: None,
    };
    let params = LevelParams {
        kappa: Some(1.0),
        c1: Some(0.01),
        c2: Some(0.8),
        ..Default::default()
    };
    (bundle, params, BoxDomain::symmetric(1, 1.0))
}

/// Robust fixture: `g(x, w) = 0.5x + w`, `V = x²`, `ψ(w) = psi_scale · w²`.
/// With `psi_scale = 4` the decrease margin absorbs the worst disturbance;
/// with `psi_scale = 1` it does not.
pub fn robust_roa_bundle(psi_scale: f64) -> (SystemBundle, LevelParams, BoxDomain, BoxDomain) {
    let mut b = GraphBuilder::new("disturbed");
    b.input("x", 1)
        .input("w", 1)
        .affine("hx", Array2::from_elem((1, 1), 0.5), Array1::zeros(1), "x")
        .op("g", OpKind::Add, &["hx", "w"])
        .output("g");
    let dynamics = b.build().unwrap();

    let mut psi_b = GraphBuilder::new("psi");
    psi_b
        .input("w", 1)
        .op("w2", OpKind::Square, &["w"])
        .affine("psi", Array2::from_elem((1, 1), psi_scale), Array1::zeros(1), "w2")
        .output("psi");
    let psi = psi_b.build().unwrap();

    let bundle = SystemBundle {
        name: "robust-scalar".into(),
        dynamics,
        dynamics_inputs: vec![Role::State, Role::Disturbance],
        controller: None,
        certificate: Some(scalar_quadratic_certificate()),
        metric: None,
        disturbance_bound: Some(psi),
        control_matrix: None,
    };
    let params = LevelParams {
        kappa: Some(0.5),
        rho: Some(1.0),
        nu: Some(0.4),
        ..Default::default()
    };
    (bundle, params, BoxDomain::symmetric(1, 1.0), BoxDomain::symmetric(1, 0.3))
}

/// Contraction fixture: `g(x) = 0.5x` under the constant metric `M ≡ 1`.
/// Contracts at any rate above 0.5, so 0.6 verifies and 0.4 falsifies.
pub fn contraction_bundle() -> (SystemBundle, BoxDomain) {
    let mut m_b = GraphBuilder::new("unit-metric");
    m_b.input("x", 1).constant("m", vec![1.0]).output("m");
    let metric = m_b.build().unwrap();
    let bundle = SystemBundle {
        name: "scalar-contraction".into(),
        dynamics: scalar_linear_dynamics(0.5),
        dynamics_inputs: vec![Role::State],
        controller: None,
        certificate: Some(scalar_quadratic_certificate()),
        metric: Some(metric),
        disturbance_bound: None,
        control_matrix: None,
    };
    (bundle, BoxDomain::symmetric(1, 1.0))
}

pub fn contraction_params(rate: f64) -> LevelParams {
    LevelParams {
        rate: Some(rate),
        rho: Some(1.0),
        epsilon: Some(0.2),
        ..Default::default()
    }
}

/// Barrier fixture: single integrator `ẋ = u` with `h(x) = 1 − x²` and the
/// control polytope `U = [−1, 1]`.
pub fn barrier_bundle() -> (SystemBundle, LevelParams, BoxDomain) {
    let mut f_b = GraphBuilder::new("drift");
    f_b.input("x", 1).constant("f", vec![0.0]).output("f");
    let drift = f_b.build().unwrap();

    let mut g_b = GraphBuilder::new("actuation");
    g_b.input("x", 1).constant("g", vec![1.0]).output("g");
    let actuation = g_b.build().unwrap();

    let mut h_b = GraphBuilder::new("h");
    h_b.input("x", 1)
        .op("s", OpKind::Square, &["x"])
        .affine("h", Array2::from_elem((1, 1), -1.0), Array1::from_elem(1, 1.0), "s")
        .output("h");
    let h = h_b.build().unwrap();

    let bundle = SystemBundle {
        name: "integrator-barrier".into(),
        dynamics: drift,
        dynamics_inputs: vec![Role::State],
        controller: None,
        certificate: Some(h),
        metric: None,
        disturbance_bound: None,
        control_matrix: Some(actuation),
    };
    let params = LevelParams { alpha: Some(1.0), ..Default::default() };
    (bundle, params, BoxDomain::symmetric(1, 1.0))
}

/// Fixture (d): a residual step `x⁺ = x + 0.1 · net(x)` with a seeded
/// 1→16→16→1 ReLU network.
pub fn residual_net_bundle(seed: u64) -> (SystemBundle, BoxDomain) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize, cols: usize, scale: f64| {
        (
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale)),
            Array1::from_shape_fn(rows, |_| rng.random_range(-0.1..0.1)),
        )
    };
    let (w1, b1) = draw(16, 1, 0.8);
    let (w2, b2) = draw(16, 16, 0.25);
    let (w3, b3) = draw(1, 16, 0.25);

    let mut b = GraphBuilder::new("residual-net");
    b.input("x", 1);
    b.affine("l1", w1, b1, "x")
        .op("r1", OpKind::Relu, &["l1"])
        .affine("l2", w2, b2, "r1")
        .op("r2", OpKind::Relu, &["l2"])
        .affine("l3", w3, b3, "r2")
        .op("step", OpKind::Scale(0.1), &["l3"])
        .op("g", OpKind::Add, &["x", "step"])
        .output("g");
    let dynamics = b.build().unwrap();
    let bundle = SystemBundle {
        name: "residual-net".into(),
        dynamics,
        dynamics_inputs: vec![Role::State],
        controller: None,
        certificate: None,
        metric: None,
        disturbance_bound: None,
        control_matrix: None,
    };
    (bundle, BoxDomain::symmetric(1, 1.0))
}

/// MPC-style fixture over a scalar action `u ∈ [−5, 5]`: the next state is
/// `y₀ = 0.75 + 0.2 sin u + 0.3u`, `y₁ = −0.5 + 0.3 cos u + 0.05u²`.
pub fn mpc_graph() -> (Graph, BoxDomain) {
    let mut b = GraphBuilder::new("mpc-step");
    b.input("u", 1)
        .op("s", OpKind::Sin, &["u"])
        .op("c", OpKind::Cos, &["u"])
        .op("q", OpKind::Square, &["u"])
        .op("cat", OpKind::Concat, &["s", "u", "c", "q"]);
    let mut w = Array2::zeros((2, 4));
    w[[0, 0]] = 0.2;
    w[[0, 1]] = 0.3;
    w[[1, 2]] = 0.3;
    w[[1, 3]] = 0.05;
    let bias = Array1::from(vec![0.75, -0.5]);
    b.affine("y", w, bias, "cat").output("y");
    (b.build().unwrap(), BoxDomain::symmetric(1, 5.0))
}

// ---------------------------------------------------------------------------
// Self-test corpus
// ---------------------------------------------------------------------------

/// One embedded check with a human-readable outcome line.
pub struct SelfTestCase {
    pub name: &'static str,
    pub run: fn() -> Result<String, String>,
}

fn expect_status(
    res: &crate::bab::VerifyResult,
    want: VerifyStatus,
    detail: &str,
) -> Result<String, String> {
    if res.status == want {
        Ok(format!(
            "{detail}: {} ({} domains, depth {})",
            res.status.as_str(),
            res.stats.domains_visited,
            res.stats.max_depth
        ))
    } else {
        Err(format!("{detail}: expected {}, got {}", want.as_str(), res.status.as_str()))
    }
}

/// The embedded fixture suite behind the `selftest` command.
pub fn selftest_cases() -> Vec<SelfTestCase> {
    vec![
        SelfTestCase {
            name: "toy-bounds",
            run: || {
                let g = toy_graph();
                let (bounds, _) = output_bounds(
                    &g,
                    &BoxDomain::symmetric(1, 1.0),
                    &RelaxParams::default(),
                    BoundMode::Crown,
                )
                .map_err(|e| e.to_string())?;
                if (bounds.lower[0] - 3.0).abs() < 1e-9 && (bounds.upper[0] - 4.0).abs() < 1e-9 {
                    Ok(format!("bounds [{}, {}]", bounds.lower[0], bounds.upper[0]))
                } else {
                    Err(format!("expected [3, 4], got [{}, {}]", bounds.lower[0], bounds.upper[0]))
                }
            },
        },
        SelfTestCase {
            name: "lyap-discrete-verified",
            run: || {
                let (bundle, domain) = scalar_lyapunov_bundle();
                let (graph, spec) =
                    build_discrete_lyapunov(&bundle, &domain, &scalar_lyapunov_params(0.5))
                        .map_err(|e| e.to_string())?;
                let res =
                    verify(&graph, &spec, &VerifyConfig::default()).map_err(|e| e.to_string())?;
                expect_status(&res, VerifyStatus::Verified, "kappa=0.5")
            },
        },
        SelfTestCase {
            name: "lyap-discrete-broken",
            run: || {
                let (bundle, domain) = scalar_lyapunov_bundle();
                let (graph, spec) =
                    build_discrete_lyapunov(&bundle, &domain, &scalar_lyapunov_params(0.9))
                        .map_err(|e| e.to_string())?;
                let res =
                    verify(&graph, &spec, &VerifyConfig::default()).map_err(|e| e.to_string())?;
                expect_status(&res, VerifyStatus::Falsified, "kappa=0.9")
            },
        },
        SelfTestCase {
            name: "lyap-discrete-planar",
            run: || {
                let (bundle, params, domain) = planar_rotation_bundle();
                let (graph, spec) = build_discrete_lyapunov(&bundle, &domain, &params)
                    .map_err(|e| e.to_string())?;
                let res =
                    verify(&graph, &spec, &VerifyConfig::default()).map_err(|e| e.to_string())?;
                expect_status(&res, VerifyStatus::Verified, "planar rotation")
            },
        },
        SelfTestCase {
            name: "lyap-continuous-verified",
            run: || {
                let (bundle, params, domain) = scalar_continuous_bundle(true);
                let (graph, spec) = build_continuous_lyapunov(&bundle, &domain, &params)
                    .map_err(|e| e.to_string())?;
                let res =
                    verify(&graph, &spec, &VerifyConfig::default()).map_err(|e| e.to_string())?;
                expect_status(&res, VerifyStatus::Verified, "stable field")
            },
        },
        SelfTestCase {
            name: "lyap-continuous-flipped",
            run: || {
                let (bundle, params, domain) = scalar_continuous_bundle(false);
                let (graph, spec) = build_continuous_lyapunov(&bundle, &domain, &params)
                    .map_err(|e| e.to_string())?;
                let res =
                    verify(&graph, &spec, &VerifyConfig::default()).map_err(|e| e.to_string())?;
                expect_status(&res, VerifyStatus::Falsified, "sign-flipped field")
            },
        },
        SelfTestCase {
            name: "robust-roa",
            run: || {
                let (bundle, params, bx, bw) = robust_roa_bundle(4.0);
                let (graph, spec) =
                    build_robust_roa(&bundle, &bx, &bw, &params).map_err(|e| e.to_string())?;
                let res =
                    verify(&graph, &spec, &VerifyConfig::default()).map_err(|e| e.to_string())?;
                let verified = expect_status(&res, VerifyStatus::Verified, "psi=4w^2")?;
                let (bundle, params, bx, bw) = robust_roa_bundle(1.0);
                let (graph, spec) =
                    build_robust_roa(&bundle, &bx, &bw, &params).map_err(|e| e.to_string())?;
                let res =
                    verify(&graph, &spec, &VerifyConfig::default()).map_err(|e| e.to_string())?;
                expect_status(&res, VerifyStatus::Falsified, "psi=w^2")?;
                Ok(verified)
            },
        },
        SelfTestCase {
            name: "contraction",
            run: || {
                let (bundle, domain) = contraction_bundle();
                let (graph, spec) =
                    build_contraction(&bundle, &domain, &contraction_params(0.6))
                        .map_err(|e| e.to_string())?;
                let res =
                    verify(&graph, &spec, &VerifyConfig::default()).map_err(|e| e.to_string())?;
                let ok = expect_status(&res, VerifyStatus::Verified, "rate=0.6")?;
                let (graph, spec) =
                    build_contraction(&bundle, &domain, &contraction_params(0.4))
                        .map_err(|e| e.to_string())?;
                let res =
                    verify(&graph, &spec, &VerifyConfig::default()).map_err(|e| e.to_string())?;
                expect_status(&res, VerifyStatus::Falsified, "rate=0.4")?;
                Ok(ok)
            },
        },
        SelfTestCase {
            name: "barrier-cbf",
            run: || {
                let (bundle, params, domain) = barrier_bundle();
                let vertices =
                    vec![Array1::from_elem(1, -1.0), Array1::from_elem(1, 1.0)];
                let (graph, spec) = build_barrier(&bundle, &domain, &params, &vertices)
                    .map_err(|e| e.to_string())?;
                let res =
                    verify(&graph, &spec, &VerifyConfig::default()).map_err(|e| e.to_string())?;
                expect_status(&res, VerifyStatus::Verified, "vertices {-1, 1}")
            },
        },
        SelfTestCase {
            name: "reach-tube",
            run: || {
                let (bundle, _) = scalar_lyapunov_bundle();
                let tube = reach_tube(
                    &bundle,
                    &BoxDomain::symmetric(1, 1.0),
                    3,
                    1e3,
                    &RelaxParams::default(),
                )
                .map_err(|e| e.to_string())?;
                let expect = [0.5, 0.25, 0.125];
                for (k, bounds) in tube.iter().enumerate() {
                    if (bounds.lower[0] + expect[k]).abs() > 1e-12
                        || (bounds.upper[0] - expect[k]).abs() > 1e-12
                    {
                        return Err(format!(
                            "step {k}: expected [-{0}, {0}], got [{1}, {2}]",
                            expect[k], bounds.lower[0], bounds.upper[0]
                        ));
                    }
                }
                Ok("halving tube over 3 steps".into())
            },
        },
        SelfTestCase {
            name: "minimize-sin",
            run: || {
                let g = sin_graph();
                let domain = BoxDomain::from_slices(&[0.0], &[std::f64::consts::TAU]).unwrap();
                let res = minimize(
                    &g,
                    &Array1::from_elem(1, 1.0),
                    &domain,
                    None,
                    &OptConfig::default(),
                )
                .map_err(|e| e.to_string())?;
                if res.status == OptStatus::OptimalWithinGap
                    && (res.primal_value + 1.0).abs() < 1e-3
                {
                    Ok(format!("primal {:.6}, gap {:.2e}", res.primal_value, res.gap))
                } else {
                    Err(format!(
                        "expected primal ≈ −1 within gap, got {} ({})",
                        res.primal_value,
                        res.status.as_str()
                    ))
                }
            },
        },
        SelfTestCase {
            name: "branching-ratio",
            run: || {
                let (graph, spec) = anisotropic_sin_instance();
                let mut domains = [0usize; 2];
                for (k, branching) in [Branching::Smart, Branching::Naive].iter().enumerate() {
                    let cfg = VerifyConfig { branching: *branching, ..Default::default() };
                    let res = verify(&graph, &spec, &cfg).map_err(|e| e.to_string())?;
                    if res.status != VerifyStatus::Verified {
                        return Err(format!("instance must verify, got {}", res.status.as_str()));
                    }
                    domains[k] = res.stats.domains_visited;
                }
                let ratio = domains[0] as f64 / domains[1] as f64;
                if domains[0] <= domains[1] {
                    Ok(format!(
                        "smart {} vs naive {} subdomains (ratio {ratio:.3})",
                        domains[0], domains[1]
                    ))
                } else {
                    Err(format!(
                        "smart used more subdomains than naive: {} vs {}",
                        domains[0], domains[1]
                    ))
                }
            },
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_graph_is_deterministic() {
        let a = random_graph(1, 3, 4, &[GenOp::Relu, GenOp::Sin, GenOp::Mul]);
        let b = random_graph(1, 3, 4, &[GenOp::Relu, GenOp::Sin, GenOp::Mul]);
        assert_eq!(a, b);
    }

    #[test]
    fn random_relu_net_has_expected_shape() {
        let g = random_graph(0, 2, 4, &[GenOp::Relu]);
        // depth-2 relu net: input + 2×(affine+relu) + final affine
        assert!(g.nodes().iter().filter(|n| n.kind == OpKind::Relu).count() == 2);
    }

    #[test]
    fn grid_oracle_finds_square_violation() {
        let g = square_minus_one_graph();
        let spec = SpecCnf::new(
            vec![crate::spec::Clause::new(vec![
                crate::spec::Atom::greater(Array1::from_elem(1, 1.0), 0.0).unwrap(),
            ])
            .unwrap()],
            BoxDomain::symmetric(1, 2.0),
        )
        .unwrap();
        let x = grid_violation(&g, &spec, 10_000).unwrap().expect("violation exists");
        assert!(x[0].abs() <= 1.0);
    }

    #[test]
    fn grid_oracle_minimum_of_sin() {
        let g = sin_graph();
        let domain = BoxDomain::from_slices(&[0.0], &[std::f64::consts::TAU]).unwrap();
        let (x, v) = grid_minimum(&g, &Array1::from_elem(1, 1.0), &domain, None, 10_000)
            .unwrap()
            .unwrap();
        assert!((v + 1.0).abs() < 1e-6);
        assert!((x[0] - 4.712).abs() < 1e-2);
    }

    #[test]
    fn grid_oracle_rejects_high_dimensions() {
        let g = identity_graph(4);
        let spec = SpecCnf::new(
            vec![crate::spec::Clause::new(vec![
                crate::spec::Atom::greater(Array1::from_elem(4, 1.0), 10.0).unwrap(),
            ])
            .unwrap()],
            BoxDomain::symmetric(4, 1.0),
        )
        .unwrap();
        assert!(matches!(
            grid_violation(&g, &spec, 10),
            Err(FixtureError::DimTooLarge(4))
        ));
    }

    #[test]
    fn lyapunov_iteration_solves_the_fixed_point() {
        let (_, params, _) = planar_rotation_bundle();
        let _ = params;
        // For the 0.9-rotation, AᵀA = 0.81·I, so P = I / 0.19.
        let theta: f64 = 0.5;
        let (s, c) = theta.sin_cos();
        let mut a = Array2::zeros((2, 2));
        a[[0, 0]] = 0.9 * c;
        a[[0, 1]] = -0.9 * s;
        a[[1, 0]] = 0.9 * s;
        a[[1, 1]] = 0.9 * c;
        let p = solve_discrete_lyapunov(&a);
        let expect = 1.0 / 0.19;
        assert!((p[[0, 0]] - expect).abs() < 1e-9);
        assert!(p[[0, 1]].abs() < 1e-9);
    }
}
