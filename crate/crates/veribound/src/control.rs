//! Builders that translate control certificates into (graph, CNF) pairs or
//! bound queries: reachability tubes, discrete and continuous Lyapunov
//! conditions, uniform disturbance robustness, contraction, and barrier
//! functions.
//!
//! Each builder composes user-supplied graph fragments (dynamics, controller,
//! certificate, metric, disturbance bound) into one closed graph whose output
//! stacks every quantity the certificate's clauses mention, then encodes the
//! certificate's implication as a CNF by the contrapositive: `A ⇒ B` becomes
//! `¬A ∨ B`, with conjunctions distributed over the escape disjuncts. Box
//! membership turns into per-face strict atoms, so a verified status formally
//! certifies membership in a tolerance-shrunken box.

use crate::boundprop::{output_bounds, BoundError, BoundMode, ScalarBounds};
use crate::graph::{Graph, GraphBuilder, GraphError, OpKind};
use crate::interval::BoxDomain;
use crate::jacobian::{augment_with_jacobian, JacobianError};
use crate::relax::RelaxParams;
use crate::spec::{Atom, Clause, SpecCnf, SpecError};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("bundle is missing the `{0}` fragment")]
    MissingFragment(&'static str),
    #[error("invalid parameters: {0}")]
    Param(String),
    #[error("fragment shapes do not chain: {0}")]
    FragmentShape(String),
    #[error("control polytope vertex list is empty")]
    EmptyVertices,
    #[error("reachable box width {width:.3e} exceeded ceiling {ceiling:.3e} at step {step}")]
    Divergence { step: usize, width: f64, ceiling: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Jacobian(#[from] JacobianError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error("bundle file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bundle file parse error: {0}")]
    Parse(String),
    #[error("unsupported format_version {found} (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },
}

/// What a fragment input binds to when the closed graph is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    State,
    Control,
    Disturbance,
}

/// The graph fragments of one control system.
#[derive(Debug, Clone)]
pub struct SystemBundle {
    pub name: String,
    /// `f(x[, u][, w])`: the dynamics map or vector field, output dim = n.
    pub dynamics: Graph,
    /// Role of each dynamics input node, in declaration order.
    pub dynamics_inputs: Vec<Role>,
    /// `π(x)`, bound to the dynamics' control input.
    pub controller: Option<Graph>,
    /// `V(x)` or `h(x)`: the scalar certificate.
    pub certificate: Option<Graph>,
    /// `M(x)`: upper-triangular metric entries, output dim n(n+1)/2.
    pub metric: Option<Graph>,
    /// `ψ(w)`: scalar disturbance bound.
    pub disturbance_bound: Option<Graph>,
    /// `g(x)` of a control-affine system, flattened row-major to dim n·m.
    pub control_matrix: Option<Graph>,
}

impl SystemBundle {
    /// State dimension, fixed by the dynamics output.
    pub fn state_dim(&self) -> usize {
        self.dynamics.output_dim()
    }

    fn certificate(&self) -> Result<&Graph, ControlError> {
        let v = self.certificate.as_ref().ok_or(ControlError::MissingFragment("certificate"))?;
        if v.output_dim() != 1 {
            return Err(ControlError::FragmentShape(format!(
                "certificate output must be scalar, got dim {}",
                v.output_dim()
            )));
        }
        Ok(v)
    }
}

/// Sublevel thresholds and rates shared by the certificate builders. Each
/// builder validates just the fields it uses.
#[derive(Debug, Clone)]
pub struct LevelParams {
    pub rho: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub kappa: Option<f64>,
    pub alpha: Option<f64>,
    pub nu: Option<f64>,
    pub epsilon: Option<f64>,
    pub rate: Option<f64>,
    /// Slack turning non-strict `≤ 0` conditions into strict atoms. Must
    /// exceed the verifier's zero-boundary tolerance, or a condition that
    /// holds with equality somewhere (a contraction at δ = 0, say) leaves the
    /// certified margin pinned at the boundary and the query unknown.
    pub boundary_tol: f64,
    /// Equilibrium tolerance for discrete decrease conditions.
    pub decrease_tol: f64,
}

impl Default for LevelParams {
    fn default() -> Self {
        Self {
            rho: None,
            c1: None,
            c2: None,
            kappa: None,
            alpha: None,
            nu: None,
            epsilon: None,
            rate: None,
            boundary_tol: 1e-6,
            decrease_tol: 1e-6,
        }
    }
}

impl LevelParams {
    fn need(&self, field: Option<f64>, name: &str) -> Result<f64, ControlError> {
        field.ok_or_else(|| ControlError::Param(format!("parameter `{name}` is required")))
    }

    fn rho_positive(&self) -> Result<f64, ControlError> {
        let rho = self.need(self.rho, "rho")?;
        if rho <= 0.0 {
            return Err(ControlError::Param(format!("rho must be positive, got {rho}")));
        }
        Ok(rho)
    }
}

// ---------------------------------------------------------------------------
// Fragment composition
// ---------------------------------------------------------------------------

/// Inline a fragment's non-input nodes into `b` under a name prefix, wiring
/// each fragment input to an existing node. Returns the inlined output name.
pub fn inline_fragment(
    b: &mut GraphBuilder,
    fragment: &Graph,
    prefix: &str,
    substitutions: &[&str],
) -> Result<String, ControlError> {
    if substitutions.len() != fragment.input_ids().len() {
        return Err(ControlError::FragmentShape(format!(
            "fragment `{}` has {} inputs but {} substitutions were supplied",
            fragment.name(),
            fragment.input_ids().len(),
            substitutions.len()
        )));
    }
    let rename = |id: crate::graph::NodeId| -> String {
        let node = fragment.node(id);
        match node.kind {
            OpKind::Input => {
                let pos = fragment.input_ids().iter().position(|&i| i == id).unwrap();
                substitutions[pos].to_string()
            }
            _ => format!("{prefix}/{}", node.name),
        }
    };
    for &id in fragment.topo_order() {
        let node = fragment.node(id);
        if matches!(node.kind, OpKind::Input) {
            continue;
        }
        let parents: Vec<String> = node.parents.iter().map(|&p| rename(p)).collect();
        let parent_refs: Vec<&str> = parents.iter().map(String::as_str).collect();
        b.op(rename(id), node.kind.clone(), &parent_refs);
    }
    Ok(rename(fragment.output_id()))
}

/// Assemble the closed-loop map `g(x) = f(x, π(x))` (or `f(x)` when the
/// dynamics take no control input) inside `b`. Returns the output node name.
fn inline_closed_loop(
    b: &mut GraphBuilder,
    bundle: &SystemBundle,
    state_node: &str,
    disturbance_node: Option<&str>,
) -> Result<String, ControlError> {
    let mut subs: Vec<String> = Vec::with_capacity(bundle.dynamics_inputs.len());
    for role in &bundle.dynamics_inputs {
        match role {
            Role::State => subs.push(state_node.to_string()),
            Role::Control => {
                let pi = bundle
                    .controller
                    .as_ref()
                    .ok_or(ControlError::MissingFragment("controller"))?;
                let u = inline_fragment(b, pi, "pi", &[state_node])?;
                subs.push(u);
            }
            Role::Disturbance => {
                let w = disturbance_node
                    .ok_or_else(|| ControlError::FragmentShape(
                        "dynamics expect a disturbance input but none was provided".into(),
                    ))?;
                subs.push(w.to_string());
            }
        }
    }
    let sub_refs: Vec<&str> = subs.iter().map(String::as_str).collect();
    Ok(inline_fragment(b, &bundle.dynamics, "f", &sub_refs)?)
}

/// Check that controller and dynamics dimensions chain.
fn check_bundle_shapes(bundle: &SystemBundle) -> Result<(), ControlError> {
    let n = bundle.state_dim();
    for (pos, role) in bundle.dynamics_inputs.iter().enumerate() {
        let id = bundle.dynamics.input_ids()[pos];
        let dim = bundle.dynamics.node(id).dim;
        match role {
            Role::State => {
                if dim != n {
                    return Err(ControlError::FragmentShape(format!(
                        "dynamics state input has dim {dim}, output has dim {n}"
                    )));
                }
            }
            Role::Control => {
                let pi = bundle
                    .controller
                    .as_ref()
                    .ok_or(ControlError::MissingFragment("controller"))?;
                if pi.output_dim() != dim {
                    return Err(ControlError::FragmentShape(format!(
                        "controller output dim {} does not match control input dim {dim}",
                        pi.output_dim()
                    )));
                }
                if pi.input_dim() != n {
                    return Err(ControlError::FragmentShape(format!(
                        "controller input dim {} does not match state dim {n}",
                        pi.input_dim()
                    )));
                }
            }
            Role::Disturbance => {}
        }
    }
    Ok(())
}

/// The closed-loop map `g` as a standalone graph with a single state input.
pub fn closed_loop(bundle: &SystemBundle) -> Result<Graph, ControlError> {
    check_bundle_shapes(bundle)?;
    let n = bundle.state_dim();
    let mut b = GraphBuilder::new(format!("{}::closed", bundle.name));
    b.input("x", n);
    let out = inline_closed_loop(&mut b, bundle, "x", None)?;
    b.output(out);
    Ok(b.build()?)
}

// ---------------------------------------------------------------------------
// Reachability
// ---------------------------------------------------------------------------

/// One-step reachable-set over-approximation: certified output bounds of the
/// closed loop over the box.
pub fn reach_step(
    bundle: &SystemBundle,
    domain: &BoxDomain,
    params: &RelaxParams,
) -> Result<ScalarBounds, ControlError> {
    let g = closed_loop(bundle)?;
    let (bounds, _) = output_bounds(&g, domain, params, BoundMode::Crown)?;
    Ok(bounds)
}

/// Iterate the one-step over-approximation into a forward tube. Aborts when
/// any box width crosses the ceiling.
pub fn reach_tube(
    bundle: &SystemBundle,
    domain: &BoxDomain,
    steps: usize,
    width_ceiling: f64,
    params: &RelaxParams,
) -> Result<Vec<ScalarBounds>, ControlError> {
    let g = closed_loop(bundle)?;
    let mut tube = Vec::with_capacity(steps);
    let mut current = domain.clone();
    for step in 0..steps {
        let (bounds, _) = output_bounds(&g, &current, params, BoundMode::Crown)?;
        let next = bounds.to_box().map_err(|e| ControlError::FragmentShape(e.to_string()))?;
        let width = next.max_width();
        if width > width_ceiling {
            return Err(ControlError::Divergence { step, width, ceiling: width_ceiling });
        }
        tube.push(bounds);
        current = next;
    }
    Ok(tube)
}

// ---------------------------------------------------------------------------
// Atom helpers
// ---------------------------------------------------------------------------

fn unit_atom(dim: usize, coord: usize, sign: f64, bias: f64) -> Atom {
    let mut coeffs = Array1::zeros(dim);
    coeffs[coord] = sign;
    Atom::greater(coeffs, bias).expect("unit coefficient is nonzero")
}

/// Face atoms asserting `value[coords] ∈ box` (one conjunct per face):
/// for each coordinate, `upper_i − v_i > 0` and `v_i − lower_i > 0`.
fn membership_face_atoms(
    out_dim: usize,
    coord_offset: usize,
    target: &BoxDomain,
) -> Vec<Atom> {
    let mut atoms = Vec::with_capacity(2 * target.dim());
    for i in 0..target.dim() {
        atoms.push(unit_atom(out_dim, coord_offset + i, -1.0, target.upper()[i]));
        atoms.push(unit_atom(out_dim, coord_offset + i, 1.0, -target.lower()[i]));
    }
    atoms
}

// ---------------------------------------------------------------------------
// Discrete-time Lyapunov
// ---------------------------------------------------------------------------

/// Encode the discrete decrease condition
/// `(V(g(x)) − (1−κ)V(x) ≤ 0 ∧ g(x) ∈ B) ∨ (V(x) ≥ ρ)` over the box as CNF.
///
/// Output layout: `[F, g(x), V(x)]` with `F = V(g(x)) − (1−κ)V(x)`.
pub fn build_discrete_lyapunov(
    bundle: &SystemBundle,
    domain: &BoxDomain,
    params: &LevelParams,
) -> Result<(Graph, SpecCnf), ControlError> {
    check_bundle_shapes(bundle)?;
    let v_frag = bundle.certificate()?;
    let kappa = params.need(params.kappa, "kappa")?;
    if !(0.0 < kappa && kappa < 1.0) {
        return Err(ControlError::Param(format!("kappa must lie in (0, 1), got {kappa}")));
    }
    let rho = params.rho_positive()?;
    let n = bundle.state_dim();
    if domain.dim() != n {
        return Err(ControlError::FragmentShape(format!(
            "domain has dim {}, state has dim {n}",
            domain.dim()
        )));
    }

    let mut b = GraphBuilder::new(format!("{}::lyap-discrete", bundle.name));
    b.input("x", n);
    let g_out = inline_closed_loop(&mut b, bundle, "x", None)?;
    let v_next = inline_fragment(&mut b, v_frag, "V.next", &[&g_out])?;
    let v_here = inline_fragment(&mut b, v_frag, "V.here", &["x"])?;
    b.op("V.scaled", OpKind::Scale(1.0 - kappa), &[&v_here]);
    b.op("F", OpKind::Sub, &[&v_next, "V.scaled"]);
    let cat: Vec<&str> = vec!["F", &g_out, &v_here];
    b.op("out", OpKind::Concat, &cat);
    b.output("out");
    let graph = b.build()?;

    let out_dim = n + 2;
    let escape = unit_atom(out_dim, n + 1, 1.0, -rho); // V(x) ≥ ρ
    let mut clauses = Vec::with_capacity(2 * n + 1);
    clauses.push(Clause::new(vec![
        unit_atom(out_dim, 0, -1.0, params.decrease_tol), // F < decrease_tol
        escape.clone(),
    ])?);
    for face in membership_face_atoms(out_dim, 1, domain) {
        clauses.push(Clause::new(vec![face, escape.clone()])?);
    }
    let spec = SpecCnf::new(clauses, domain.clone())?;
    Ok((graph, spec))
}

// ---------------------------------------------------------------------------
// Continuous-time Lyapunov
// ---------------------------------------------------------------------------

/// Encode the continuous shell condition
/// `(∇V·f + κV ≤ 0) ∨ (V > c2) ∨ (V < c1)` together with the per-face
/// boundary conditions `(f·n ≤ 0) ∨ (x ∉ face) ∨ (V > c2)` as CNF.
///
/// Output layout: `[F, V, x, f]` with `F = ∇V·f + κV`.
pub fn build_continuous_lyapunov(
    bundle: &SystemBundle,
    domain: &BoxDomain,
    params: &LevelParams,
) -> Result<(Graph, SpecCnf), ControlError> {
    check_bundle_shapes(bundle)?;
    let v_frag = bundle.certificate()?;
    let kappa = params.need(params.kappa, "kappa")?;
    if kappa <= 0.0 {
        return Err(ControlError::Param(format!("kappa must be positive, got {kappa}")));
    }
    let c1 = params.need(params.c1, "c1")?;
    let c2 = params.need(params.c2, "c2")?;
    if !(0.0 < c1 && c1 < c2) {
        return Err(ControlError::Param(format!("need 0 < c1 < c2, got c1={c1}, c2={c2}")));
    }
    let n = bundle.state_dim();
    if domain.dim() != n {
        return Err(ControlError::FragmentShape(format!(
            "domain has dim {}, state has dim {n}",
            domain.dim()
        )));
    }

    let aug_v = augment_with_jacobian(v_frag)?;
    let mut b = GraphBuilder::new(format!("{}::lyap-continuous", bundle.name));
    b.input("x", n);
    let av = inline_fragment(&mut b, &aug_v.graph, "V", &["x"])?;
    b.op("V.val", OpKind::Slice { start: aug_v.value_slice.start, end: aug_v.value_slice.end }, &[&av]);
    b.op("V.grad", OpKind::Slice { start: aug_v.grad_slice.start, end: aug_v.grad_slice.end }, &[&av]);
    let f_out = inline_closed_loop(&mut b, bundle, "x", None)?;
    b.op("V.dot.terms", OpKind::Mul, &["V.grad", &f_out]);
    b.op("V.dot", OpKind::SumReduce, &["V.dot.terms"]);
    b.op("V.scaled", OpKind::Scale(kappa), &["V.val"]);
    b.op("F", OpKind::Add, &["V.dot", "V.scaled"]);
    let cat: Vec<&str> = vec!["F", "V.val", "x", &f_out];
    b.op("out", OpKind::Concat, &cat);
    b.output("out");
    let graph = b.build()?;

    let out_dim = 2 + 2 * n;
    let tol = params.boundary_tol;
    let v_above_c2 = unit_atom(out_dim, 1, 1.0, -c2); // V > c2
    let v_below_c1 = unit_atom(out_dim, 1, -1.0, c1); // V < c1
    let mut clauses = Vec::with_capacity(1 + 2 * n);
    clauses.push(Clause::new(vec![
        unit_atom(out_dim, 0, -1.0, tol), // F ≤ 0 as −F > −tol
        v_above_c2.clone(),
        v_below_c1,
    ])?);
    for i in 0..n {
        // Upper face: outward normal +e_i, so G = f_i.
        clauses.push(Clause::new(vec![
            unit_atom(out_dim, 2 + n + i, -1.0, tol),          // f_i ≤ 0
            unit_atom(out_dim, 2 + i, -1.0, domain.upper()[i]), // x_i < u_i
            v_above_c2.clone(),
        ])?);
        // Lower face: outward normal −e_i, so G = −f_i.
        clauses.push(Clause::new(vec![
            unit_atom(out_dim, 2 + n + i, 1.0, tol),            // −f_i ≤ 0
            unit_atom(out_dim, 2 + i, 1.0, -domain.lower()[i]), // x_i > ℓ_i
            v_above_c2.clone(),
        ])?);
    }
    let spec = SpecCnf::new(clauses, domain.clone())?;
    Ok((graph, spec))
}

// ---------------------------------------------------------------------------
// Uniform disturbance robustness
// ---------------------------------------------------------------------------

/// Encode `(F_V ≤ 0 ∧ f(x,w) ∈ B) ∨ (V(x) > ρ) ∨ (ψ(w) > ν)` over the joint
/// box `B × B^w`, with `F_V = V(f(x,w)) − (1−κ)V(x) − ψ(w)`.
///
/// Output layout: `[F_V, f(x,w), V(x), ψ(w)]`.
pub fn build_robust_roa(
    bundle: &SystemBundle,
    domain_x: &BoxDomain,
    domain_w: &BoxDomain,
    params: &LevelParams,
) -> Result<(Graph, SpecCnf), ControlError> {
    check_bundle_shapes(bundle)?;
    let v_frag = bundle.certificate()?;
    let psi_frag = bundle
        .disturbance_bound
        .as_ref()
        .ok_or(ControlError::MissingFragment("disturbance-bound"))?;
    if psi_frag.output_dim() != 1 {
        return Err(ControlError::FragmentShape(format!(
            "disturbance bound output must be scalar, got dim {}",
            psi_frag.output_dim()
        )));
    }
    let kappa = params.need(params.kappa, "kappa")?;
    if !(0.0 < kappa && kappa < 1.0) {
        return Err(ControlError::Param(format!("kappa must lie in (0, 1), got {kappa}")));
    }
    let rho = params.rho_positive()?;
    let nu = params.need(params.nu, "nu")?;
    if nu / kappa > rho {
        return Err(ControlError::Param(format!(
            "need nu/kappa ≤ rho, got {nu}/{kappa} = {} > {rho}",
            nu / kappa
        )));
    }
    let n = bundle.state_dim();
    let nw = domain_w.dim();

    let mut b = GraphBuilder::new(format!("{}::robust-roa", bundle.name));
    b.input("x", n).input("w", nw);
    let f_out = inline_closed_loop(&mut b, bundle, "x", Some("w"))?;
    let v_next = inline_fragment(&mut b, v_frag, "V.next", &[&f_out])?;
    let v_here = inline_fragment(&mut b, v_frag, "V.here", &["x"])?;
    let psi = inline_fragment(&mut b, psi_frag, "psi", &["w"])?;
    b.op("V.scaled", OpKind::Scale(1.0 - kappa), &[&v_here]);
    b.op("F.decrease", OpKind::Sub, &[&v_next, "V.scaled"]);
    b.op("F", OpKind::Sub, &["F.decrease", &psi]);
    let cat: Vec<&str> = vec!["F", &f_out, &v_here, &psi];
    b.op("out", OpKind::Concat, &cat);
    b.output("out");
    let graph = b.build()?;

    let out_dim = n + 3;
    let v_escape = unit_atom(out_dim, n + 1, 1.0, -rho); // V(x) > ρ
    let w_escape = unit_atom(out_dim, n + 2, 1.0, -nu); // ψ(w) > ν
    let mut clauses = Vec::with_capacity(2 * n + 1);
    clauses.push(Clause::new(vec![
        unit_atom(out_dim, 0, -1.0, params.decrease_tol),
        v_escape.clone(),
        w_escape.clone(),
    ])?);
    for face in membership_face_atoms(out_dim, 1, domain_x) {
        clauses.push(Clause::new(vec![face, v_escape.clone(), w_escape.clone()])?);
    }
    let spec = SpecCnf::new(clauses, domain_x.product(domain_w))?;
    Ok((graph, spec))
}

// ---------------------------------------------------------------------------
// Contraction
// ---------------------------------------------------------------------------

/// Upper-triangular index of entry (i, j), i ≤ j, in row-major packing.
fn tri_index(n: usize, i: usize, j: usize) -> usize {
    i * n - (i * i - i) / 2 + (j - i)
}

/// Quadratic form `vᵀ M v` from packed upper-triangular metric entries,
/// expressed with mul and reduction nodes.
fn inline_quadratic_form(
    b: &mut GraphBuilder,
    prefix: &str,
    vec_node: &str,
    metric_node: &str,
    n: usize,
) -> String {
    let mut terms: Vec<String> = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let vi = format!("{prefix}/v{i}");
            let vj = format!("{prefix}/v{j}");
            for (name, c) in [(&vi, i), (&vj, j)] {
                if b_missing(b, name) {
                    b.op(name, OpKind::Slice { start: c, end: c + 1 }, &[vec_node]);
                }
            }
            let idx = tri_index(n, i, j);
            let m_ij = format!("{prefix}/m{i}_{j}");
            b.op(&m_ij, OpKind::Slice { start: idx, end: idx + 1 }, &[metric_node]);
            let prod = format!("{prefix}/p{i}_{j}");
            b.op(&prod, OpKind::Mul, &[&vi, &vj]);
            let term = format!("{prefix}/t{i}_{j}");
            b.op(&term, OpKind::Mul, &[&prod, &m_ij]);
            if i < j {
                let doubled = format!("{prefix}/t2_{i}_{j}");
                b.op(&doubled, OpKind::Scale(2.0), &[&term]);
                terms.push(doubled);
            } else {
                terms.push(term);
            }
        }
    }
    let cat = format!("{prefix}/terms");
    let term_refs: Vec<&str> = terms.iter().map(String::as_str).collect();
    b.op(&cat, OpKind::Concat, &term_refs);
    let out = format!("{prefix}/q");
    b.op(&out, OpKind::SumReduce, &[&cat]);
    out
}

fn b_missing(b: &GraphBuilder, name: &str) -> bool {
    !b.has_node(name)
}

/// Encode the contraction condition over `(x, δ) ∈ B × [−ε, ε]ⁿ`:
/// `G ≤ 0 ∨ (x+δ ∉ B) ∨ (V(x) ≥ ρ) ∨ (V(x+δ) ≥ ρ)` with
/// `G = Δ_fᵀ M(f(x)) Δ_f − rate² · δᵀ M(x) δ` and `Δ_f = f(x+δ) − f(x)`.
///
/// Output layout: `[G, V(x), V(x+δ), x+δ]`.
pub fn build_contraction(
    bundle: &SystemBundle,
    domain: &BoxDomain,
    params: &LevelParams,
) -> Result<(Graph, SpecCnf), ControlError> {
    check_bundle_shapes(bundle)?;
    let v_frag = bundle.certificate()?;
    let m_frag = bundle.metric.as_ref().ok_or(ControlError::MissingFragment("metric"))?;
    let n = bundle.state_dim();
    let packed = n * (n + 1) / 2;
    if m_frag.output_dim() != packed {
        return Err(ControlError::FragmentShape(format!(
            "metric must emit {packed} upper-triangular entries for n={n}, got {}",
            m_frag.output_dim()
        )));
    }
    let rate = params.need(params.rate, "rate")?;
    if !(0.0 < rate && rate < 1.0) {
        return Err(ControlError::Param(format!("rate must lie in (0, 1), got {rate}")));
    }
    let rho = params.rho_positive()?;
    let epsilon = params.need(params.epsilon, "epsilon")?;
    if epsilon < 0.0 {
        return Err(ControlError::Param(format!("epsilon must be nonnegative, got {epsilon}")));
    }

    let mut b = GraphBuilder::new(format!("{}::contraction", bundle.name));
    b.input("x", n).input("d", n);
    b.op("xd", OpKind::Add, &["x", "d"]);
    let f_x = inline_closed_loop(&mut b, bundle, "x", None)?;
    // Second copy of the closed loop at the displaced state.
    let f_xd = {
        let mut subs: Vec<String> = Vec::new();
        for role in &bundle.dynamics_inputs {
            match role {
                Role::State => subs.push("xd".into()),
                Role::Control => {
                    let pi = bundle
                        .controller
                        .as_ref()
                        .ok_or(ControlError::MissingFragment("controller"))?;
                    subs.push(inline_fragment(&mut b, pi, "pi.xd", &["xd"])?);
                }
                Role::Disturbance => {
                    return Err(ControlError::FragmentShape(
                        "contraction builder does not take disturbance inputs".into(),
                    ))
                }
            }
        }
        let sub_refs: Vec<&str> = subs.iter().map(String::as_str).collect();
        inline_fragment(&mut b, &bundle.dynamics, "f.xd", &sub_refs)?
    };
    b.op("delta_f", OpKind::Sub, &[&f_xd, &f_x]);
    let m_next = inline_fragment(&mut b, m_frag, "M.next", &[&f_x])?;
    let m_here = inline_fragment(&mut b, m_frag, "M.here", &["x"])?;
    let q_next = inline_quadratic_form(&mut b, "q.next", "delta_f", &m_next, n);
    let q_here = inline_quadratic_form(&mut b, "q.here", "d", &m_here, n);
    b.op("q.scaled", OpKind::Scale(rate * rate), &[&q_here]);
    b.op("G", OpKind::Sub, &[&q_next, "q.scaled"]);
    let v_here = inline_fragment(&mut b, v_frag, "V.here", &["x"])?;
    let v_disp = inline_fragment(&mut b, v_frag, "V.disp", &["xd"])?;
    let cat: Vec<&str> = vec!["G", &v_here, &v_disp, "xd"];
    b.op("out", OpKind::Concat, &cat);
    b.output("out");
    let graph = b.build()?;

    let out_dim = 3 + n;
    let tol = params.boundary_tol;
    let mut atoms = vec![unit_atom(out_dim, 0, -1.0, tol)]; // G ≤ 0
    for i in 0..n {
        // x+δ outside the box: beyond the upper or below the lower face.
        atoms.push(unit_atom(out_dim, 3 + i, 1.0, -domain.upper()[i]));
        atoms.push(unit_atom(out_dim, 3 + i, -1.0, domain.lower()[i]));
    }
    atoms.push(unit_atom(out_dim, 1, 1.0, -rho)); // V(x) ≥ ρ
    atoms.push(unit_atom(out_dim, 2, 1.0, -rho)); // V(x+δ) ≥ ρ
    let delta_box = BoxDomain::symmetric(n, epsilon);
    let spec = SpecCnf::new(vec![Clause::new(atoms)?], domain.product(&delta_box))?;
    Ok((graph, spec))
}

// ---------------------------------------------------------------------------
// Barrier / CBF
// ---------------------------------------------------------------------------

/// Encode the control barrier condition for the control-affine system
/// `ẋ = f(x) + g(x)u`, `u ∈ conv(vertices)`:
/// one clause `{B_v(x) > −tol}_v ∪ {−h(x) > 0}` with
/// `B_v = ∇hᵀf + (∇hᵀg)·v + α·h`. A single zero vertex gives the plain
/// zeroing-barrier condition.
///
/// Output layout: `[B_v1, …, B_vK, h]`.
pub fn build_barrier(
    bundle: &SystemBundle,
    domain: &BoxDomain,
    params: &LevelParams,
    vertices: &[Array1<f64>],
) -> Result<(Graph, SpecCnf), ControlError> {
    if vertices.is_empty() {
        return Err(ControlError::EmptyVertices);
    }
    check_bundle_shapes(bundle)?;
    let h_frag = bundle.certificate()?;
    let alpha = params.need(params.alpha, "alpha")?;
    if alpha <= 0.0 {
        return Err(ControlError::Param(format!("alpha must be positive, got {alpha}")));
    }
    let n = bundle.state_dim();
    let g_frag = bundle
        .control_matrix
        .as_ref()
        .ok_or(ControlError::MissingFragment("control-matrix"))?;
    if g_frag.output_dim() % n != 0 {
        return Err(ControlError::FragmentShape(format!(
            "control matrix output dim {} is not a multiple of the state dim {n}",
            g_frag.output_dim()
        )));
    }
    let m = g_frag.output_dim() / n;
    for (k, v) in vertices.iter().enumerate() {
        if v.len() != m {
            return Err(ControlError::FragmentShape(format!(
                "vertex {k} has dim {}, control dim is {m}",
                v.len()
            )));
        }
    }

    let aug_h = augment_with_jacobian(h_frag)?;
    let mut b = GraphBuilder::new(format!("{}::barrier", bundle.name));
    b.input("x", n);
    let ah = inline_fragment(&mut b, &aug_h.graph, "h", &["x"])?;
    b.op("h.val", OpKind::Slice { start: aug_h.value_slice.start, end: aug_h.value_slice.end }, &[&ah]);
    b.op("h.grad", OpKind::Slice { start: aug_h.grad_slice.start, end: aug_h.grad_slice.end }, &[&ah]);
    let f_out = inline_closed_loop(&mut b, bundle, "x", None)?;
    let g_out = inline_fragment(&mut b, g_frag, "g", &["x"])?;
    b.op("h.scaled", OpKind::Scale(alpha), &["h.val"]);

    let mut outputs: Vec<String> = Vec::with_capacity(vertices.len() + 1);
    for (k, v) in vertices.iter().enumerate() {
        // g(x)·v as an affine map of the flattened control matrix.
        let mut w = Array2::zeros((n, n * m));
        for i in 0..n {
            for j in 0..m {
                w[[i, i * m + j]] = v[j];
            }
        }
        let gu = format!("vtx{k}/gu");
        b.affine(&gu, w, Array1::zeros(n), &g_out);
        let field = format!("vtx{k}/field");
        b.op(&field, OpKind::Add, &[&f_out, &gu]);
        let terms = format!("vtx{k}/terms");
        b.op(&terms, OpKind::Mul, &["h.grad", &field]);
        let hdot = format!("vtx{k}/hdot");
        b.op(&hdot, OpKind::SumReduce, &[&terms]);
        let bv = format!("vtx{k}/B");
        b.op(&bv, OpKind::Add, &[&hdot, "h.scaled"]);
        outputs.push(bv);
    }
    outputs.push("h.val".into());
    let out_refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    b.op("out", OpKind::Concat, &out_refs);
    b.output("out");
    let graph = b.build()?;

    let out_dim = vertices.len() + 1;
    let tol = params.boundary_tol;
    let mut atoms: Vec<Atom> = (0..vertices.len())
        .map(|k| unit_atom(out_dim, k, 1.0, tol)) // B_v ≥ 0 as B_v > −tol
        .collect();
    atoms.push(unit_atom(out_dim, vertices.len(), -1.0, 0.0)); // h < 0
    let spec = SpecCnf::new(vec![Clause::new(atoms)?], domain.clone())?;
    Ok((graph, spec))
}

// ---------------------------------------------------------------------------
// Bundle file format
// ---------------------------------------------------------------------------

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleFile {
    pub format_version: u32,
    #[serde(default)]
    pub name: String,
    pub fragments: Vec<FragmentDecl>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FragmentDecl {
    /// One of `dynamics`, `controller`, `certificate`, `metric`,
    /// `disturbance-bound`, `control-matrix`.
    pub role: String,
    /// Roles of the fragment graph's inputs, in declaration order; only the
    /// dynamics fragment may have more than one.
    #[serde(default)]
    pub input_roles: Vec<Role>,
    pub graph: crate::graph::GraphFile,
}

impl BundleFile {
    pub fn parse(text: &str) -> Result<BundleFile, ControlError> {
        let file: BundleFile =
            toml::from_str(text).map_err(|e| ControlError::Parse(e.message().to_string()))?;
        if file.format_version != FORMAT_VERSION {
            return Err(ControlError::VersionMismatch {
                found: file.format_version,
                supported: FORMAT_VERSION,
            });
        }
        Ok(file)
    }

    pub fn into_bundle(self) -> Result<SystemBundle, ControlError> {
        let mut dynamics = None;
        let mut dynamics_inputs = Vec::new();
        let mut controller = None;
        let mut certificate = None;
        let mut metric = None;
        let mut disturbance_bound = None;
        let mut control_matrix = None;
        for frag in self.fragments {
            let graph = frag.graph.into_graph()?;
            match frag.role.as_str() {
                "dynamics" => {
                    dynamics_inputs = if frag.input_roles.is_empty() {
                        vec![Role::State; graph.input_ids().len()]
                    } else {
                        frag.input_roles.clone()
                    };
                    if dynamics_inputs.len() != graph.input_ids().len() {
                        return Err(ControlError::FragmentShape(format!(
                            "dynamics declares {} input roles for {} inputs",
                            dynamics_inputs.len(),
                            graph.input_ids().len()
                        )));
                    }
                    dynamics = Some(graph);
                }
                "controller" => controller = Some(graph),
                "certificate" => certificate = Some(graph),
                "metric" => metric = Some(graph),
                "disturbance-bound" => disturbance_bound = Some(graph),
                "control-matrix" => control_matrix = Some(graph),
                other => {
                    return Err(ControlError::Parse(format!("unknown fragment role `{other}`")))
                }
            }
        }
        Ok(SystemBundle {
            name: self.name,
            dynamics: dynamics.ok_or(ControlError::MissingFragment("dynamics"))?,
            dynamics_inputs,
            controller,
            certificate,
            metric,
            disturbance_bound,
            control_matrix,
        })
    }
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<SystemBundle, ControlError> {
    let text = std::fs::read_to_string(path)?;
    BundleFile::parse(&text)?.into_bundle()
}

pub fn save_bundle(bundle: &SystemBundle, path: impl AsRef<Path>) -> Result<(), ControlError> {
    let mut fragments = Vec::new();
    let mut add = |role: &str, graph: Option<&Graph>, roles: Vec<Role>| {
        if let Some(g) = graph {
            fragments.push(FragmentDecl {
                role: role.to_string(),
                input_roles: roles,
                graph: crate::graph::GraphFile::from_graph(g),
            });
        }
    };
    add("dynamics", Some(&bundle.dynamics), bundle.dynamics_inputs.clone());
    add("controller", bundle.controller.as_ref(), vec![]);
    add("certificate", bundle.certificate.as_ref(), vec![]);
    add("metric", bundle.metric.as_ref(), vec![]);
    add("disturbance-bound", bundle.disturbance_bound.as_ref(), vec![]);
    add("control-matrix", bundle.control_matrix.as_ref(), vec![]);
    let file = BundleFile {
        format_version: FORMAT_VERSION,
        name: bundle.name.clone(),
        fragments,
    };
    let text = toml::to_string_pretty(&file)
        .map_err(|e| ControlError::Parse(format!("serialize: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}
