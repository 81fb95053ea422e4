//! Gradient support: augmenting a scalar-output graph so that `∇F` becomes
//! part of an ordinary graph output, and exact reverse-mode gradients at a
//! point for the falsifier and optimizer.
//!
//! Augmentation attaches adjoint nodes per operator in reverse topological
//! order. The only genuinely new operator it needs is the Heaviside gate
//! (`step`) standing in for the ReLU derivative; its relaxation is the
//! constant `[0, 1]` interval on unstable coordinates, so the extended graph
//! is bounded by exactly the same machinery as the original.

use crate::graph::{Graph, GraphBuilder, GraphError, NodeId, OpKind};
use ndarray::{Array1, Array2};
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JacobianError {
    #[error("no derivative rule for operator `{0}`")]
    UnsupportedDerivative(&'static str),
    #[error("jacobian augmentation requires a scalar output, got dimension {0}")]
    NonScalarOutput(usize),
    #[error("cotangent has dimension {got}, output has dimension {expected}")]
    CotangentDim { expected: usize, got: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A graph whose output concatenates the original value with its gradient.
#[derive(Debug, Clone)]
pub struct AugmentedGraph {
    pub graph: Graph,
    /// Output coordinates holding the original `F(x)`.
    pub value_slice: Range<usize>,
    /// Output coordinates holding `∂F/∂x`, in concatenated input order.
    pub grad_slice: Range<usize>,
}

/// Append adjoint nodes for `∇F` and concatenate `(F(x), ∇F(x))` as the new
/// output. Requires a scalar output; full Jacobians of vector outputs are
/// obtained by augmenting one row at a time.
pub fn augment_with_jacobian(graph: &Graph) -> Result<AugmentedGraph, JacobianError> {
    if graph.output_dim() != 1 {
        return Err(JacobianError::NonScalarOutput(graph.output_dim()));
    }
    let mut b = GraphBuilder::new(format!("{}+grad", graph.name()));

    // Copy the original graph verbatim (names preserved).
    for node in graph.nodes() {
        if matches!(node.kind, OpKind::Input) {
            b.input(&node.name, node.dim);
        } else {
            let parents: Vec<&str> =
                node.parents.iter().map(|&p| graph.node(p).name.as_str()).collect();
            b.op(&node.name, node.kind.clone(), &parents);
        }
    }

    let in_cone = graph.ancestors(graph.output_id());
    let name_of = |id: NodeId| graph.node(id).name.clone();

    // Seed the output adjoint with the scalar cotangent 1.
    let seed = "__adj/seed";
    b.constant(seed, vec![1.0]);

    // Contributions to each node's adjoint, keyed by node id, and the final
    // adjoint node name once materialized.
    let mut contribs: Vec<Vec<String>> = vec![Vec::new(); graph.nodes().len()];
    let mut adj_names: Vec<Option<String>> = vec![None; graph.nodes().len()];

    for &id in graph.topo_order().iter().rev() {
        if !in_cone[id] {
            continue;
        }
        let node = graph.node(id);

        // Materialize this node's adjoint as the sum of its contributions.
        let adj = if id == graph.output_id() {
            seed.to_string()
        } else {
            match contribs[id].len() {
                // Every cone node feeds the output through some child, so a
                // contribution always exists by the time it is visited.
                0 => unreachable!("cone node without adjoint contribution"),
                1 => contribs[id][0].clone(),
                _ => {
                    let mut acc = contribs[id][0].clone();
                    for (k, part) in contribs[id][1..].iter().enumerate() {
                        let sum_name = format!("__adj/{}@{}", name_of(id), k);
                        b.op(&sum_name, OpKind::Add, &[&acc, part]);
                        acc = sum_name;
                    }
                    acc
                }
            }
        };
        adj_names[id] = Some(adj.clone());

        if matches!(node.kind, OpKind::Input | OpKind::Constant(_)) {
            continue;
        }

        // Emit per-parent contribution nodes for this operator.
        let parent_name = |k: usize| name_of(node.parents[k]);
        let mut push = |slot: usize, contrib: String| contribs[node.parents[slot]].push(contrib);
        let tag = format!("__d/{}", node.name);
        match &node.kind {
            OpKind::Affine { weight, .. } => {
                let name = format!("{tag}/wt");
                b.affine(&name, weight.t().to_owned(), Array1::zeros(weight.ncols()), &adj);
                push(0, name);
            }
            OpKind::Add => {
                push(0, adj.clone());
                push(1, adj.clone());
            }
            OpKind::Sub => {
                push(0, adj.clone());
                let name = format!("{tag}/neg");
                b.op(&name, OpKind::Neg, &[&adj]);
                push(1, name);
            }
            OpKind::Neg => {
                let name = format!("{tag}/neg");
                b.op(&name, OpKind::Neg, &[&adj]);
                push(0, name);
            }
            OpKind::Scale(k) => {
                let name = format!("{tag}/scale");
                b.op(&name, OpKind::Scale(*k), &[&adj]);
                push(0, name);
            }
            OpKind::Mul => {
                let gx = format!("{tag}/x");
                let gy = format!("{tag}/y");
                b.op(&gx, OpKind::Mul, &[&adj, &parent_name(1)]);
                b.op(&gy, OpKind::Mul, &[&adj, &parent_name(0)]);
                push(0, gx);
                push(1, gy);
            }
            OpKind::Relu => {
                let gate = format!("{tag}/gate");
                let name = format!("{tag}/mul");
                b.op(&gate, OpKind::Step, &[&parent_name(0)]);
                b.op(&name, OpKind::Mul, &[&adj, &gate]);
                push(0, name);
            }
            OpKind::Tanh => {
                // 1 - tanh(x)^2, reusing this node's own output.
                let sq = format!("{tag}/sq");
                let one = format!("{tag}/one");
                let deriv = format!("{tag}/deriv");
                let name = format!("{tag}/mul");
                b.op(&sq, OpKind::Square, &[&node.name]);
                b.constant(&one, vec![1.0; node.dim]);
                b.op(&deriv, OpKind::Sub, &[&one, &sq]);
                b.op(&name, OpKind::Mul, &[&adj, &deriv]);
                push(0, name);
            }
            OpKind::Sigmoid => {
                // σ(x)(1 - σ(x))
                let one = format!("{tag}/one");
                let rest = format!("{tag}/rest");
                let deriv = format!("{tag}/deriv");
                let name = format!("{tag}/mul");
                b.constant(&one, vec![1.0; node.dim]);
                b.op(&rest, OpKind::Sub, &[&one, &node.name]);
                b.op(&deriv, OpKind::Mul, &[&node.name, &rest]);
                b.op(&name, OpKind::Mul, &[&adj, &deriv]);
                push(0, name);
            }
            OpKind::Sin => {
                let deriv = format!("{tag}/cos");
                let name = format!("{tag}/mul");
                b.op(&deriv, OpKind::Cos, &[&parent_name(0)]);
                b.op(&name, OpKind::Mul, &[&adj, &deriv]);
                push(0, name);
            }
            OpKind::Cos => {
                let sin = format!("{tag}/sin");
                let deriv = format!("{tag}/negsin");
                let name = format!("{tag}/mul");
                b.op(&sin, OpKind::Sin, &[&parent_name(0)]);
                b.op(&deriv, OpKind::Neg, &[&sin]);
                b.op(&name, OpKind::Mul, &[&adj, &deriv]);
                push(0, name);
            }
            OpKind::Square => {
                let deriv = format!("{tag}/2x");
                let name = format!("{tag}/mul");
                b.op(&deriv, OpKind::Scale(2.0), &[&parent_name(0)]);
                b.op(&name, OpKind::Mul, &[&adj, &deriv]);
                push(0, name);
            }
            OpKind::Concat => {
                let mut offset = 0;
                for (slot, &p) in node.parents.iter().enumerate() {
                    let d = graph.node(p).dim;
                    let name = format!("{tag}/part{slot}");
                    b.op(&name, OpKind::Slice { start: offset, end: offset + d }, &[&adj]);
                    push(slot, name);
                    offset += d;
                }
            }
            OpKind::Slice { start, end } => {
                // Embed the adjoint back into the parent's coordinates.
                let pdim = graph.node(node.parents[0]).dim;
                let mut embed = Array2::zeros((pdim, end - start));
                for i in 0..(end - start) {
                    embed[[start + i, i]] = 1.0;
                }
                let name = format!("{tag}/embed");
                b.affine(&name, embed, Array1::zeros(pdim), &adj);
                push(0, name);
            }
            OpKind::SumReduce => {
                let pdim = graph.node(node.parents[0]).dim;
                let name = format!("{tag}/bcast");
                b.affine(&name, Array2::ones((pdim, 1)), Array1::zeros(pdim), &adj);
                push(0, name);
            }
            OpKind::Step => return Err(JacobianError::UnsupportedDerivative("step")),
            OpKind::Input | OpKind::Constant(_) => unreachable!(),
        }
    }

    // Gradient outputs per input node, zero where the output does not depend
    // on the input.
    let mut grad_parts: Vec<String> = Vec::with_capacity(graph.input_ids().len());
    for &id in graph.input_ids() {
        match &adj_names[id] {
            Some(adj) => grad_parts.push(adj.clone()),
            None => {
                let name = format!("__adj/{}@zero", name_of(id));
                b.constant(&name, vec![0.0; graph.node(id).dim]);
                grad_parts.push(name);
            }
        }
    }

    let out_name = "__value_and_grad";
    let mut cat: Vec<&str> = vec![graph.node(graph.output_id()).name.as_str()];
    cat.extend(grad_parts.iter().map(String::as_str));
    b.op(out_name, OpKind::Concat, &cat);
    b.output(out_name);

    let augmented = b.build()?;
    let n = graph.input_dim();
    Ok(AugmentedGraph { graph: augmented, value_slice: 0..1, grad_slice: 1..1 + n })
}

/// Exact reverse-mode vector-Jacobian product at a point: `cotangentᵀ · ∂F/∂x`,
/// reusing an existing forward value cache.
pub fn vjp_from_values(
    graph: &Graph,
    values: &[Array1<f64>],
    cotangent: &Array1<f64>,
) -> Result<Array1<f64>, JacobianError> {
    if cotangent.len() != graph.output_dim() {
        return Err(JacobianError::CotangentDim {
            expected: graph.output_dim(),
            got: cotangent.len(),
        });
    }
    let mut adj: Vec<Option<Array1<f64>>> = vec![None; graph.nodes().len()];
    adj[graph.output_id()] = Some(cotangent.clone());

    let add_into = |slot: &mut Option<Array1<f64>>, v: Array1<f64>| match slot {
        Some(acc) => *acc += &v,
        s => *s = Some(v),
    };

    for &id in graph.topo_order().iter().rev() {
        let Some(a) = adj[id].take() else { continue };
        let node = graph.node(id);
        match &node.kind {
            OpKind::Input => {
                adj[id] = Some(a); // keep for the gather below
                continue;
            }
            OpKind::Constant(_) => continue,
            OpKind::Affine { weight, .. } => {
                add_into(&mut adj[node.parents[0]], weight.t().dot(&a));
            }
            OpKind::Add => {
                add_into(&mut adj[node.parents[0]], a.clone());
                add_into(&mut adj[node.parents[1]], a);
            }
            OpKind::Sub => {
                add_into(&mut adj[node.parents[0]], a.clone());
                add_into(&mut adj[node.parents[1]], -a);
            }
            OpKind::Neg => add_into(&mut adj[node.parents[0]], -a),
            OpKind::Scale(k) => add_into(&mut adj[node.parents[0]], a * *k),
            OpKind::Mul => {
                let x = &values[node.parents[0]];
                let y = &values[node.parents[1]];
                add_into(&mut adj[node.parents[0]], &a * y);
                add_into(&mut adj[node.parents[1]], &a * x);
            }
            OpKind::Relu => {
                // Subgradient 0 at the kink.
                let x = &values[node.parents[0]];
                let gate = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                add_into(&mut adj[node.parents[0]], &a * &gate);
            }
            OpKind::Tanh => {
                let t = &values[id];
                add_into(&mut adj[node.parents[0]], &a * &t.mapv(|v| 1.0 - v * v));
            }
            OpKind::Sigmoid => {
                let s = &values[id];
                add_into(&mut adj[node.parents[0]], &a * &s.mapv(|v| v * (1.0 - v)));
            }
            OpKind::Sin => {
                let x = &values[node.parents[0]];
                add_into(&mut adj[node.parents[0]], &a * &x.mapv(f64::cos));
            }
            OpKind::Cos => {
                let x = &values[node.parents[0]];
                add_into(&mut adj[node.parents[0]], &a * &x.mapv(|v| -v.sin()));
            }
            OpKind::Square => {
                let x = &values[node.parents[0]];
                add_into(&mut adj[node.parents[0]], &a * &(x * 2.0));
            }
            OpKind::Step => {
                let pdim = graph.node(node.parents[0]).dim;
                add_into(&mut adj[node.parents[0]], Array1::zeros(pdim));
            }
            OpKind::Concat => {
                let mut offset = 0;
                for &p in &node.parents {
                    let d = graph.node(p).dim;
                    add_into(&mut adj[p], a.slice(ndarray::s![offset..offset + d]).to_owned());
                    offset += d;
                }
            }
            OpKind::Slice { start, end } => {
                let pdim = graph.node(node.parents[0]).dim;
                let mut full = Array1::zeros(pdim);
                full.slice_mut(ndarray::s![*start..*end]).assign(&a);
                add_into(&mut adj[node.parents[0]], full);
            }
            OpKind::SumReduce => {
                let pdim = graph.node(node.parents[0]).dim;
                add_into(&mut adj[node.parents[0]], Array1::from_elem(pdim, a[0]));
            }
        }
    }

    let mut grad = Array1::zeros(graph.input_dim());
    for &id in graph.input_ids() {
        if let Some(a) = &adj[id] {
            let off = graph.input_offset(id).unwrap();
            grad.slice_mut(ndarray::s![off..off + graph.node(id).dim]).assign(a);
        }
    }
    Ok(grad)
}

/// Exact reverse-mode VJP at a point, running the forward pass internally.
pub fn point_gradient_vjp(
    graph: &Graph,
    x: &Array1<f64>,
    cotangent: &Array1<f64>,
) -> Result<Array1<f64>, JacobianError> {
    let values = graph.evaluate_nodes(x)?;
    vjp_from_values(graph, &values, cotangent)
}

/// Exact gradient of a scalar-output graph at a point.
pub fn point_gradient(graph: &Graph, x: &Array1<f64>) -> Result<Array1<f64>, JacobianError> {
    if graph.output_dim() != 1 {
        return Err(JacobianError::NonScalarOutput(graph.output_dim()));
    }
    point_gradient_vjp(graph, x, &Array1::from_elem(1, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use ndarray::array;

    fn sin_graph() -> Graph {
        let mut b = GraphBuilder::new("sin");
        b.input("x", 1).op("s", OpKind::Sin, &["x"]).output("s");
        b.build().unwrap()
    }

    fn square_graph() -> Graph {
        let mut b = GraphBuilder::new("sq");
        b.input("x", 1).op("s", OpKind::Square, &["x"]).output("s");
        b.build().unwrap()
    }

    fn toy() -> Graph {
        let mut b = GraphBuilder::new("toy");
        b.input("x", 1)
            .affine("pre", array![[2.0]], array![-1.0], "x")
            .op("act", OpKind::Relu, &["pre"])
            .affine("y", array![[1.0]], array![3.0], "act")
            .output("y");
        b.build().unwrap()
    }

    #[test]
    fn augmented_sin_outputs_value_and_cosine() {
        let aug = augment_with_jacobian(&sin_graph()).unwrap();
        let out = aug.graph.evaluate(&array![0.0]).unwrap();
        assert_eq!(out.len(), 2);
        assert!((out[0] - 0.0).abs() < 1e-15);
        assert!((out[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn augmented_square_at_three() {
        let aug = augment_with_jacobian(&square_graph()).unwrap();
        let out = aug.graph.evaluate(&array![3.0]).unwrap();
        assert!((out[0] - 9.0).abs() < 1e-12);
        assert!((out[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn augmented_value_matches_original() {
        let g = toy();
        let aug = augment_with_jacobian(&g).unwrap();
        for x in [-1.0, -0.2, 0.0, 0.7, 1.0] {
            let orig = g.evaluate(&array![x]).unwrap();
            let out = aug.graph.evaluate(&array![x]).unwrap();
            assert!((orig[0] - out[aug.value_slice.start]).abs() < 1e-12);
        }
    }

    #[test]
    fn point_gradient_through_relu_branches() {
        let g = toy();
        assert_eq!(point_gradient(&g, &array![1.0]).unwrap()[0], 2.0);
        assert_eq!(point_gradient(&g, &array![0.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn point_gradient_at_relu_kink_is_zero() {
        // pre = 2x - 1 hits the kink at x = 0.5
        let g = toy();
        assert_eq!(point_gradient(&g, &array![0.5]).unwrap()[0], 0.0);
    }

    #[test]
    fn affine_vjp_is_weight_transpose() {
        let mut b = GraphBuilder::new("aff");
        b.input("x", 2)
            .affine("y", array![[1.0, 2.0], [3.0, 4.0]], array![0.0, 0.0], "x")
            .output("y");
        let g = b.build().unwrap();
        let ct = array![1.0, -1.0];
        let grad = point_gradient_vjp(&g, &array![0.3, -0.4], &ct).unwrap();
        assert_eq!(grad, array![-2.0, -2.0]);
    }

    #[test]
    fn augmenting_a_step_graph_is_rejected() {
        let mut b = GraphBuilder::new("step");
        b.input("x", 1).op("s", OpKind::Step, &["x"]).output("s");
        let g = b.build().unwrap();
        let err = augment_with_jacobian(&g).unwrap_err();
        assert!(matches!(err, JacobianError::UnsupportedDerivative("step")));
    }

    #[test]
    fn augmented_graph_passes_validation_and_matches_finite_differences() {
        // Smooth two-layer tanh network.
        let mut b = GraphBuilder::new("net");
        b.input("x", 2)
            .affine("l1", array![[0.5, -0.3], [0.2, 0.8], [-0.6, 0.1]], array![0.1, -0.2, 0.3], "x")
            .op("t1", OpKind::Tanh, &["l1"])
            .affine("l2", array![[1.0, -1.0, 0.5]], array![0.0], "t1")
            .op("t2", OpKind::Tanh, &["l2"])
            .output("t2");
        let g = b.build().unwrap();
        let aug = augment_with_jacobian(&g).unwrap();

        let mut rng = crate::test_rng(11);
        use rand::Rng;
        for _ in 0..100 {
            let x = array![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let out = aug.graph.evaluate(&x).unwrap();
            let h = 1e-6;
            for d in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[d] += h;
                xm[d] -= h;
                let fd = (g.evaluate(&xp).unwrap()[0] - g.evaluate(&xm).unwrap()[0]) / (2.0 * h);
                let got = out[aug.grad_slice.start + d];
                let denom = fd.abs().max(1.0);
                assert!(
                    (got - fd).abs() / denom < 1e-5,
                    "grad mismatch at {x:?} dim {d}: {got} vs {fd}"
                );
            }
        }
    }
}
