//! Backward symbolic bound propagation and its interval baseline.
//!
//! The backward pass walks the ancestor cone of a target node in reverse
//! topological order by out-degree counting, composing per-node linear
//! relaxations into one global affine bound over the concatenated input
//! vector. Lower and upper bounds are produced in one pass pair: the upper
//! bound mirrors the lower by swapping the roles of the per-node relaxation
//! sides. Concretizing an affine bound over a box splits coefficients by
//! sign against the box corners.

use crate::graph::{Graph, NodeId, OpKind};
use crate::interval::{BoxDomain, Interval};
use crate::relax::{relax_node, LinearRelaxation, PreBox, RelaxError, RelaxParams};
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("no preactivation bounds cached for node `{node}`")]
    MissingCache { node: String },
    #[error(transparent)]
    Relax(#[from] RelaxError),
    #[error("domain has dimension {got}, graph expects {expected}")]
    DomainDim { expected: usize, got: usize },
}

/// Concrete elementwise bounds on a vector quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarBounds {
    pub lower: Array1<f64>,
    pub upper: Array1<f64>,
}

impl ScalarBounds {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn interval(&self, i: usize) -> Interval {
        Interval::new(self.lower[i], self.upper[i])
    }

    pub fn intersect(&self, other: &ScalarBounds) -> ScalarBounds {
        ScalarBounds {
            lower: ndarray::Zip::from(&self.lower)
                .and(&other.lower)
                .map_collect(|&a, &b| a.max(b)),
            upper: ndarray::Zip::from(&self.upper)
                .and(&other.upper)
                .map_collect(|&a, &b| a.min(b)),
        }
    }

    pub fn to_box(&self) -> Result<BoxDomain, crate::interval::BoxError> {
        BoxDomain::new(self.lower.clone(), self.upper.clone())
    }
}

/// Global affine bounds `A_l x + b_l ≤ F(x) ≤ A_u x + b_u`, valid on `domain`.
#[derive(Debug, Clone)]
pub struct AffineBound {
    pub lower_coeffs: Array2<f64>,
    pub lower_bias: Array1<f64>,
    pub upper_coeffs: Array2<f64>,
    pub upper_bias: Array1<f64>,
    pub domain: BoxDomain,
}

impl AffineBound {
    pub fn out_dim(&self) -> usize {
        self.lower_bias.len()
    }

    /// Evaluate the lower plane at a point.
    pub fn lower_at(&self, x: &Array1<f64>) -> Array1<f64> {
        self.lower_coeffs.dot(x) + &self.lower_bias
    }

    pub fn upper_at(&self, x: &Array1<f64>) -> Array1<f64> {
        self.upper_coeffs.dot(x) + &self.upper_bias
    }
}

/// Sound interval bounds per node over the current box, keyed by node id.
#[derive(Debug, Clone, Default)]
pub struct PreactivationCache {
    entries: Vec<Option<PreBox>>,
}

impl PreactivationCache {
    pub fn with_capacity(n: usize) -> Self {
        Self { entries: vec![None; n] }
    }

    pub fn get(&self, id: NodeId) -> Option<&PreBox> {
        self.entries.get(id).and_then(Option::as_ref)
    }

    pub fn insert(&mut self, id: NodeId, pre: PreBox) {
        if self.entries.len() <= id {
            self.entries.resize(id + 1, None);
        }
        self.entries[id] = Some(pre);
    }
}

/// How preactivation and output bounds are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMode {
    /// Forward interval arithmetic only.
    Ibp,
    /// Backward linear bound propagation, recursively applied for
    /// intermediate bounds and intersected with the interval baseline.
    Crown,
}

// ---------------------------------------------------------------------------
// Concretization
// ---------------------------------------------------------------------------

fn split_pm(m: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    (m.mapv(|v| v.max(0.0)), m.mapv(|v| v.min(0.0)))
}

/// Minimum and maximum of the affine planes over their box:
/// `lower = A_l⁺ℓ + A_l⁻u + b_l`, `upper = A_u⁺u + A_u⁻ℓ + b_u`.
pub fn concretize(bound: &AffineBound) -> ScalarBounds {
    let (lp, ln) = split_pm(&bound.lower_coeffs);
    let (up, un) = split_pm(&bound.upper_coeffs);
    let l = bound.domain.lower();
    let u = bound.domain.upper();
    ScalarBounds {
        lower: lp.dot(l) + ln.dot(u) + &bound.lower_bias,
        upper: up.dot(u) + un.dot(l) + &bound.upper_bias,
    }
}

// ---------------------------------------------------------------------------
// Forward interval pass
// ---------------------------------------------------------------------------

fn ibp_node(graph: &Graph, id: NodeId, domain: &BoxDomain, values: &[Option<PreBox>]) -> PreBox {
    let node = graph.node(id);
    let parent = |k: usize| values[node.parents[k]].as_ref().expect("topo order");
    let unary_interval = |f: fn(&Interval) -> Interval| {
        let p = parent(0);
        let mut lo = Array1::zeros(p.dim());
        let mut hi = Array1::zeros(p.dim());
        for i in 0..p.dim() {
            let r = f(&p.interval(i));
            lo[i] = r.lo;
            hi[i] = r.hi;
        }
        PreBox::new(lo, hi)
    };
    match &node.kind {
        OpKind::Input => {
            let off = graph.input_offset(id).expect("input offset");
            PreBox::new(
                domain.lower().slice(ndarray::s![off..off + node.dim]).to_owned(),
                domain.upper().slice(ndarray::s![off..off + node.dim]).to_owned(),
            )
        }
        OpKind::Constant(c) => PreBox::new(c.clone(), c.clone()),
        OpKind::Affine { weight, bias } => {
            let p = parent(0);
            let (wp, wn) = split_pm(weight);
            PreBox::new(
                wp.dot(&p.lower) + wn.dot(&p.upper) + bias,
                wp.dot(&p.upper) + wn.dot(&p.lower) + bias,
            )
        }
        OpKind::Add => {
            let (a, b) = (parent(0), parent(1));
            PreBox::new(&a.lower + &b.lower, &a.upper + &b.upper)
        }
        OpKind::Sub => {
            let (a, b) = (parent(0), parent(1));
            PreBox::new(&a.lower - &b.upper, &a.upper - &b.lower)
        }
        OpKind::Neg => {
            let p = parent(0);
            PreBox::new(-&p.upper, -&p.lower)
        }
        OpKind::Scale(k) => {
            let p = parent(0);
            if *k >= 0.0 {
                PreBox::new(&p.lower * *k, &p.upper * *k)
            } else {
                PreBox::new(&p.upper * *k, &p.lower * *k)
            }
        }
        OpKind::Mul => {
            let (a, b) = (parent(0), parent(1));
            let mut lo = Array1::zeros(a.dim());
            let mut hi = Array1::zeros(a.dim());
            for i in 0..a.dim() {
                let r = a.interval(i).mul(&b.interval(i));
                lo[i] = r.lo;
                hi[i] = r.hi;
            }
            PreBox::new(lo, hi)
        }
        OpKind::Relu => unary_interval(Interval::relu),
        OpKind::Tanh => unary_interval(|iv| iv.monotone(f64::tanh)),
        OpKind::Sigmoid => unary_interval(|iv| iv.monotone(crate::graph::sigmoid)),
        OpKind::Sin => unary_interval(Interval::sin_range),
        OpKind::Cos => unary_interval(Interval::cos_range),
        OpKind::Square => unary_interval(Interval::square),
        OpKind::Step => unary_interval(Interval::step),
        OpKind::Concat => {
            let mut lo = Vec::with_capacity(node.dim);
            let mut hi = Vec::with_capacity(node.dim);
            for k in 0..node.parents.len() {
                let p = parent(k);
                lo.extend(p.lower.iter());
                hi.extend(p.upper.iter());
            }
            PreBox::new(Array1::from(lo), Array1::from(hi))
        }
        OpKind::Slice { start, end } => {
            let p = parent(0);
            PreBox::new(
                p.lower.slice(ndarray::s![*start..*end]).to_owned(),
                p.upper.slice(ndarray::s![*start..*end]).to_owned(),
            )
        }
        OpKind::SumReduce => {
            let p = parent(0);
            PreBox::new(Array1::from_elem(1, p.lower.sum()), Array1::from_elem(1, p.upper.sum()))
        }
    }
}

fn ibp_forward(graph: &Graph, domain: &BoxDomain) -> Vec<Option<PreBox>> {
    let mut values: Vec<Option<PreBox>> = vec![None; graph.nodes().len()];
    for &id in graph.topo_order() {
        values[id] = Some(ibp_node(graph, id, domain, &values));
    }
    values
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// The pop sequence for a backward pass to one target, reused across boxes.
#[derive(Debug, Clone)]
struct BackwardPlan {
    target: NodeId,
    /// Non-input cone nodes in the order they are popped.
    order: Vec<NodeId>,
}

impl BackwardPlan {
    fn new(graph: &Graph, target: NodeId) -> Self {
        let in_cone = graph.ancestors(target);
        if matches!(graph.node(target).kind, OpKind::Input) {
            return Self { target, order: Vec::new() };
        }
        // Out-degree restricted to the cone, counting parent slots.
        let mut deg = vec![0usize; graph.nodes().len()];
        for (id, node) in graph.nodes().iter().enumerate() {
            if !in_cone[id] {
                continue;
            }
            for &p in &node.parents {
                deg[p] += 1;
            }
        }
        // Children of the target outside the cone were never counted, so the
        // target starts at degree zero within the cone.
        let mut queue = std::collections::VecDeque::from([target]);
        let mut order = Vec::new();
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &p in &graph.node(i).parents {
                deg[p] -= 1;
                if deg[p] == 0 && !matches!(graph.node(p).kind, OpKind::Input) {
                    queue.push_back(p);
                }
            }
        }
        Self { target, order }
    }
}

fn relaxation_for(
    graph: &Graph,
    id: NodeId,
    cache: &PreactivationCache,
    params: &RelaxParams,
) -> Result<LinearRelaxation, BoundError> {
    let node = graph.node(id);
    let mut parent_boxes = Vec::with_capacity(node.parents.len());
    for &p in &node.parents {
        if node.kind.is_nonlinear() {
            let pre = cache.get(p).ok_or_else(|| BoundError::MissingCache {
                node: graph.node(p).name.clone(),
            })?;
            parent_boxes.push(pre.clone());
        } else {
            // Exact operators only use parent dimensions.
            let d = graph.node(p).dim;
            parent_boxes.push(PreBox::new(Array1::zeros(d), Array1::zeros(d)));
        }
    }
    Ok(relax_node(node, &parent_boxes, params)?)
}

fn run_backward(
    graph: &Graph,
    plan: &BackwardPlan,
    domain: &BoxDomain,
    cache: &PreactivationCache,
    params: &RelaxParams,
    rows: &Array2<f64>,
) -> Result<AffineBound, BoundError> {
    let k = rows.nrows();
    let n = graph.nodes().len();
    let mut acc_l: Vec<Option<Array2<f64>>> = vec![None; n];
    let mut acc_u: Vec<Option<Array2<f64>>> = vec![None; n];
    acc_l[plan.target] = Some(rows.clone());
    acc_u[plan.target] = Some(rows.clone());
    let mut bias_l = Array1::<f64>::zeros(k);
    let mut bias_u = Array1::<f64>::zeros(k);

    for &i in &plan.order {
        let a_l = acc_l[i].take().expect("accumulated before pop");
        let a_u = acc_u[i].take().expect("accumulated before pop");
        let rel = relaxation_for(graph, i, cache, params)?;
        let (alp, aln) = split_pm(&a_l);
        let (aup, aun) = split_pm(&a_u);
        bias_l += &(alp.dot(&rel.lower_bias) + aln.dot(&rel.upper_bias));
        bias_u += &(aup.dot(&rel.upper_bias) + aun.dot(&rel.lower_bias));
        let node = graph.node(i);
        for (slot, &p) in node.parents.iter().enumerate() {
            let lam_l = alp.dot(&rel.lower_coeffs[slot]) + aln.dot(&rel.upper_coeffs[slot]);
            let lam_u = aup.dot(&rel.upper_coeffs[slot]) + aun.dot(&rel.lower_coeffs[slot]);
            match &mut acc_l[p] {
                Some(m) => *m += &lam_l,
                slot_l => *slot_l = Some(lam_l),
            }
            match &mut acc_u[p] {
                Some(m) => *m += &lam_u,
                slot_u => *slot_u = Some(lam_u),
            }
        }
    }

    // Gather input-node accumulators into the concatenated coefficient matrix.
    let mut lower_coeffs = Array2::<f64>::zeros((k, graph.input_dim()));
    let mut upper_coeffs = Array2::<f64>::zeros((k, graph.input_dim()));
    for &id in graph.input_ids() {
        let off = graph.input_offset(id).unwrap();
        let d = graph.node(id).dim;
        if let Some(m) = &acc_l[id] {
            lower_coeffs.slice_mut(ndarray::s![.., off..off + d]).assign(m);
        }
        if let Some(m) = &acc_u[id] {
            upper_coeffs.slice_mut(ndarray::s![.., off..off + d]).assign(m);
        }
    }

    Ok(AffineBound {
        lower_coeffs,
        lower_bias: bias_l,
        upper_coeffs,
        upper_bias: bias_u,
        domain: domain.clone(),
    })
}

// ---------------------------------------------------------------------------
// Propagator: per-graph reusable state
// ---------------------------------------------------------------------------

/// Reusable bound-propagation state for one graph: backward plans for the
/// output and every node that needs intermediate bounds. Immutable after
/// construction, so batches of boxes can be processed in parallel.
pub struct Propagator<'g> {
    graph: &'g Graph,
    plans: HashMap<NodeId, BackwardPlan>,
    /// Nodes whose intervals are refined by backward passes in Crown mode,
    /// in topological order (parents of nonlinear nodes).
    needed: Vec<NodeId>,
}

impl<'g> Propagator<'g> {
    pub fn new(graph: &'g Graph) -> Self {
        let mut needed_set = vec![false; graph.nodes().len()];
        for node in graph.nodes() {
            if node.kind.is_nonlinear() {
                for &p in &node.parents {
                    needed_set[p] = true;
                }
            }
        }
        let needed: Vec<NodeId> = graph
            .topo_order()
            .iter()
            .copied()
            .filter(|&id| {
                needed_set[id]
                    && !matches!(graph.node(id).kind, OpKind::Input | OpKind::Constant(_))
            })
            .collect();
        let mut plans = HashMap::new();
        for &id in &needed {
            plans.insert(id, BackwardPlan::new(graph, id));
        }
        plans.entry(graph.output_id()).or_insert_with(|| BackwardPlan::new(graph, graph.output_id()));
        Self { graph, plans, needed }
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    fn check_domain(&self, domain: &BoxDomain) -> Result<(), BoundError> {
        if domain.dim() != self.graph.input_dim() {
            return Err(BoundError::DomainDim {
                expected: self.graph.input_dim(),
                got: domain.dim(),
            });
        }
        Ok(())
    }

    /// Interval bounds for every node, refined by recursive backward passes
    /// in Crown mode. Entries are always at least as tight as plain IBP.
    pub fn preactivations(
        &self,
        domain: &BoxDomain,
        params: &RelaxParams,
        mode: BoundMode,
    ) -> Result<PreactivationCache, BoundError> {
        self.check_domain(domain)?;
        let forward = ibp_forward(self.graph, domain);
        let mut cache = PreactivationCache::with_capacity(self.graph.nodes().len());
        for (id, pre) in forward.into_iter().enumerate() {
            if let Some(pre) = pre {
                cache.insert(id, pre);
            }
        }
        if mode == BoundMode::Crown {
            for &id in &self.needed {
                let plan = &self.plans[&id];
                let rows = Array2::eye(self.graph.node(id).dim);
                let bound = run_backward(self.graph, plan, domain, &cache, params, &rows)?;
                let crown = concretize(&bound);
                let ibp = cache.get(id).expect("forward pass covers all nodes");
                let refined = PreBox::new(
                    ndarray::Zip::from(&crown.lower)
                        .and(&ibp.lower)
                        .map_collect(|&a, &b| a.max(b)),
                    ndarray::Zip::from(&crown.upper)
                        .and(&ibp.upper)
                        .map_collect(|&a, &b| a.min(b)),
                );
                cache.insert(id, refined);
            }
        }
        Ok(cache)
    }

    /// Backward pass from `target` with initial coefficient rows composed on
    /// its output (identity rows give the node's own bounds).
    pub fn bound_rows(
        &self,
        domain: &BoxDomain,
        cache: &PreactivationCache,
        target: NodeId,
        rows: &Array2<f64>,
        params: &RelaxParams,
    ) -> Result<AffineBound, BoundError> {
        self.check_domain(domain)?;
        match self.plans.get(&target) {
            Some(plan) => run_backward(self.graph, plan, domain, cache, params, rows),
            None => {
                let plan = BackwardPlan::new(self.graph, target);
                run_backward(self.graph, &plan, domain, cache, params, rows)
            }
        }
    }

    /// Full pipeline for the output node under the given mode.
    pub fn output_bounds(
        &self,
        domain: &BoxDomain,
        params: &RelaxParams,
        mode: BoundMode,
    ) -> Result<(ScalarBounds, AffineBound), BoundError> {
        let cache = self.preactivations(domain, params, mode)?;
        self.output_bounds_cached(domain, &cache, params, mode)
    }

    /// As [`Propagator::output_bounds`] with a preactivation cache already in hand.
    pub fn output_bounds_cached(
        &self,
        domain: &BoxDomain,
        cache: &PreactivationCache,
        params: &RelaxParams,
        mode: BoundMode,
    ) -> Result<(ScalarBounds, AffineBound), BoundError> {
        let out = self.graph.output_id();
        let ibp_out = cache.get(out).expect("forward pass covers output");
        let ibp_bounds = ScalarBounds { lower: ibp_out.lower.clone(), upper: ibp_out.upper.clone() };
        match mode {
            BoundMode::Ibp => {
                let d = self.graph.output_dim();
                let affine = AffineBound {
                    lower_coeffs: Array2::zeros((d, self.graph.input_dim())),
                    lower_bias: ibp_bounds.lower.clone(),
                    upper_coeffs: Array2::zeros((d, self.graph.input_dim())),
                    upper_bias: ibp_bounds.upper.clone(),
                    domain: domain.clone(),
                };
                Ok((ibp_bounds, affine))
            }
            BoundMode::Crown => {
                let rows = Array2::eye(self.graph.output_dim());
                let affine = self.bound_rows(domain, cache, out, &rows, params)?;
                let scalar = concretize(&affine).intersect(&ibp_bounds);
                Ok((scalar, affine))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Free-function entry points
// ---------------------------------------------------------------------------

/// Backward bound propagation from `target`, returning global affine bounds
/// over the concatenated input vector.
pub fn backward_bounds(
    graph: &Graph,
    domain: &BoxDomain,
    target: NodeId,
    cache: &PreactivationCache,
    params: &RelaxParams,
) -> Result<AffineBound, BoundError> {
    if domain.dim() != graph.input_dim() {
        return Err(BoundError::DomainDim { expected: graph.input_dim(), got: domain.dim() });
    }
    let plan = BackwardPlan::new(graph, target);
    let rows = Array2::eye(graph.node(target).dim);
    run_backward(graph, &plan, domain, cache, params, &rows)
}

/// Compute sound interval bounds for every node over the box.
pub fn compute_preactivations(
    graph: &Graph,
    domain: &BoxDomain,
    params: &RelaxParams,
    mode: BoundMode,
) -> Result<PreactivationCache, BoundError> {
    Propagator::new(graph).preactivations(domain, params, mode)
}

/// Concrete output bounds plus the global linear relaxation of the graph.
pub fn output_bounds(
    graph: &Graph,
    domain: &BoxDomain,
    params: &RelaxParams,
    mode: BoundMode,
) -> Result<(ScalarBounds, AffineBound), BoundError> {
    Propagator::new(graph).output_bounds(domain, params, mode)
}

/// Batched output bounds: one shared traversal plan, boxes processed in
/// parallel, results ordered by input index.
pub fn output_bounds_batch(
    graph: &Graph,
    domains: &[BoxDomain],
    params: &RelaxParams,
    mode: BoundMode,
) -> Result<Vec<(ScalarBounds, AffineBound)>, BoundError> {
    let prop = Propagator::new(graph);
    domains
        .par_iter()
        .map(|d| prop.output_bounds(d, params, mode))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use ndarray::array;

    fn toy() -> Graph {
        let mut b = GraphBuilder::new("toy");
        b.input("x", 1)
            .affine("pre", array![[2.0]], array![-1.0], "x")
            .op("act", OpKind::Relu, &["pre"])
            .affine("y", array![[1.0]], array![3.0], "act")
            .output("y");
        b.build().unwrap()
    }

    fn params_alpha0() -> RelaxParams {
        RelaxParams { relu_alpha: Some(0.0), ..Default::default() }
    }

    #[test]
    fn concretize_sign_split() {
        let domain = BoxDomain::from_slices(&[-1.0], &[2.0]).unwrap();
        let b = AffineBound {
            lower_coeffs: array![[1.0]],
            lower_bias: array![0.0],
            upper_coeffs: array![[1.0]],
            upper_bias: array![0.0],
            domain: domain.clone(),
        };
        assert_eq!(concretize(&b).lower[0], -1.0);
        let b = AffineBound {
            lower_coeffs: array![[-1.0]],
            lower_bias: array![0.0],
            upper_coeffs: array![[-1.0]],
            upper_bias: array![0.0],
            domain,
        };
        assert_eq!(concretize(&b).lower[0], -2.0);
    }

    #[test]
    fn concretize_mixed_signs() {
        let domain = BoxDomain::from_slices(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let b = AffineBound {
            lower_coeffs: array![[2.0, -3.0]],
            lower_bias: array![1.0],
            upper_coeffs: array![[2.0, -3.0]],
            upper_bias: array![1.0],
            domain,
        };
        assert_eq!(concretize(&b).lower[0], -2.0);
    }

    #[test]
    fn toy_preactivation_matches_hand_interval() {
        let g = toy();
        for mode in [BoundMode::Ibp, BoundMode::Crown] {
            let cache = compute_preactivations(
                &g,
                &BoxDomain::symmetric(1, 1.0),
                &RelaxParams::default(),
                mode,
            )
            .unwrap();
            let pre = cache.get(g.node_by_name("pre").unwrap()).unwrap();
            assert_eq!(pre.lower[0], -3.0);
            assert_eq!(pre.upper[0], 1.0);
        }
    }

    #[test]
    fn toy_output_bounds_are_three_and_four() {
        let g = toy();
        let (bounds, affine) = output_bounds(
            &g,
            &BoxDomain::symmetric(1, 1.0),
            &params_alpha0(),
            BoundMode::Crown,
        )
        .unwrap();
        assert!((bounds.lower[0] - 3.0).abs() < 1e-12);
        assert!((bounds.upper[0] - 4.0).abs() < 1e-12);
        // The upper plane is 0.5x + 3.5.
        assert!((affine.upper_coeffs[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((affine.upper_bias[0] - 3.5).abs() < 1e-12);
    }

    #[test]
    fn default_alpha_heuristic_also_exact_on_toy() {
        let g = toy();
        let (bounds, _) = output_bounds(
            &g,
            &BoxDomain::symmetric(1, 1.0),
            &RelaxParams::default(),
            BoundMode::Crown,
        )
        .unwrap();
        assert!((bounds.lower[0] - 3.0).abs() < 1e-12);
        assert!((bounds.upper[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn affine_graph_bound_is_exact_and_two_sided_equal() {
        let mut b = GraphBuilder::new("aff");
        b.input("x", 2)
            .affine("y", array![[1.0, -2.0], [0.5, 0.25]], array![0.1, -0.2], "x")
            .output("y");
        let g = b.build().unwrap();
        let domain = BoxDomain::from_slices(&[-1.0, 0.0], &[1.0, 3.0]).unwrap();
        let (_, affine) =
            output_bounds(&g, &domain, &RelaxParams::default(), BoundMode::Crown).unwrap();
        assert_eq!(affine.lower_coeffs, affine.upper_coeffs);
        assert_eq!(affine.lower_bias, affine.upper_bias);
        assert_eq!(affine.lower_coeffs, array![[1.0, -2.0], [0.5, 0.25]]);
    }

    #[test]
    fn stable_relu_gives_identity_bound() {
        let mut b = GraphBuilder::new("stable");
        b.input("x", 1).op("r", OpKind::Relu, &["x"]).output("r");
        let g = b.build().unwrap();
        let domain = BoxDomain::from_slices(&[1.0], &[2.0]).unwrap();
        let (bounds, affine) =
            output_bounds(&g, &domain, &RelaxParams::default(), BoundMode::Crown).unwrap();
        assert_eq!(bounds.lower[0], 1.0);
        assert_eq!(bounds.upper[0], 2.0);
        assert_eq!(affine.lower_coeffs[[0, 0]], 1.0);
        assert_eq!(affine.upper_coeffs[[0, 0]], 1.0);
    }

    #[test]
    fn input_target_is_identity() {
        let g = toy();
        let domain = BoxDomain::symmetric(1, 1.0);
        let cache =
            compute_preactivations(&g, &domain, &RelaxParams::default(), BoundMode::Ibp).unwrap();
        let x = g.node_by_name("x").unwrap();
        let bound = backward_bounds(&g, &domain, x, &cache, &RelaxParams::default()).unwrap();
        assert_eq!(bound.lower_coeffs[[0, 0]], 1.0);
        assert_eq!(bound.upper_coeffs[[0, 0]], 1.0);
    }

    #[test]
    fn sin_output_bounds_contain_the_range() {
        let mut b = GraphBuilder::new("sin");
        b.input("x", 1).op("s", OpKind::Sin, &["x"]).output("s");
        let g = b.build().unwrap();
        let domain = BoxDomain::from_slices(&[0.0], &[std::f64::consts::FRAC_PI_2]).unwrap();
        let (bounds, _) =
            output_bounds(&g, &domain, &RelaxParams::default(), BoundMode::Crown).unwrap();
        assert!(bounds.lower[0] >= -1e-9);
        assert!(bounds.upper[0] <= 1.0 + 1e-6);
    }

    #[test]
    fn batch_results_match_single_calls() {
        let g = toy();
        let domains = vec![
            BoxDomain::symmetric(1, 1.0),
            BoxDomain::from_slices(&[0.0], &[1.0]).unwrap(),
            BoxDomain::from_slices(&[0.5], &[0.5]).unwrap(),
        ];
        let batch =
            output_bounds_batch(&g, &domains, &RelaxParams::default(), BoundMode::Crown).unwrap();
        for (d, (sb, _)) in domains.iter().zip(&batch) {
            let (single, _) =
                output_bounds(&g, d, &RelaxParams::default(), BoundMode::Crown).unwrap();
            assert_eq!(single.lower, sb.lower);
            assert_eq!(single.upper, sb.upper);
        }
    }

    #[test]
    fn shared_subexpression_accumulates_once_per_edge() {
        // y = x*x via Mul with the same parent twice; bound must remain sound.
        let mut b = GraphBuilder::new("mulself");
        b.input("x", 1).op("m", OpKind::Mul, &["x", "x"]).output("m");
        let g = b.build().unwrap();
        let domain = BoxDomain::from_slices(&[-1.0], &[2.0]).unwrap();
        let (bounds, _) =
            output_bounds(&g, &domain, &RelaxParams::default(), BoundMode::Crown).unwrap();
        let mut rng = crate::test_rng(3);
        use rand::Rng;
        for _ in 0..500 {
            let x: f64 = rng.random_range(-1.0..=2.0);
            let v = x * x;
            assert!(bounds.lower[0] <= v + 1e-9);
            assert!(bounds.upper[0] >= v - 1e-9);
        }
    }
}
