//! Computation graphs: a DAG of primitive operator nodes inducing a function
//! from a flat input vector to a flat output vector.
//!
//! Every node output is a flat vector. Multiple input nodes are supported and
//! are concatenated into one input vector in declaration order, so all
//! downstream machinery (boxes, bound propagation, gradients) works over a
//! single coordinate space.

mod io;

pub use io::{load_graph, save_graph, GraphFile};

use ndarray::{Array1, Array2};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

/// Index of a node within its graph's node list.
pub type NodeId = usize;

/// The primitive operator of a node.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// External input; payload-free, dim declared.
    Input,
    /// Fixed vector payload.
    Constant(Array1<f64>),
    /// `W x + b` with `W` of shape (out, in).
    Affine { weight: Array2<f64>, bias: Array1<f64> },
    Add,
    Sub,
    Neg,
    /// Elementwise product of two equally sized parents.
    Mul,
    /// Multiplication by a scalar constant.
    Scale(f64),
    Relu,
    Tanh,
    Sigmoid,
    Sin,
    Cos,
    Square,
    /// Heaviside gate with `step(0) = 0`; the derivative surrogate for Relu.
    Step,
    /// Concatenation of the parents in order.
    Concat,
    /// Contiguous slice `[start, end)` of the single parent.
    Slice { start: usize, end: usize },
    /// Sum of all entries of the single parent (output dim 1).
    SumReduce,
}

/// Operator arity requirement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arity {
    Exact(usize),
    AtLeast(usize),
}

impl OpKind {
    /// The tag used in graph files and diagnostics.
    pub fn tag(&self) -> &'static str {
        match self {
            OpKind::Input => "input",
            OpKind::Constant(_) => "constant",
            OpKind::Affine { .. } => "affine",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Neg => "neg",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Sin => "sin",
            OpKind::Cos => "cos",
            OpKind::Square => "square",
            OpKind::Step => "step",
            OpKind::Concat => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::SumReduce => "sum_reduce",
        }
    }

    pub fn arity(&self) -> Arity {
        match self {
            OpKind::Input | OpKind::Constant(_) => Arity::Exact(0),
            OpKind::Add | OpKind::Sub | OpKind::Mul => Arity::Exact(2),
            OpKind::Concat => Arity::AtLeast(1),
            _ => Arity::Exact(1),
        }
    }

    /// Nonlinear operators need preactivation bounds on their parents before
    /// a linear relaxation can be formed.
    pub fn is_nonlinear(&self) -> bool {
        matches!(
            self,
            OpKind::Mul
                | OpKind::Relu
                | OpKind::Tanh
                | OpKind::Sigmoid
                | OpKind::Sin
                | OpKind::Cos
                | OpKind::Square
                | OpKind::Step
        )
    }
}

/// A single operator node.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    /// User-facing name, unique within the graph.
    pub name: String,
    pub kind: OpKind,
    /// Resolved parent indices, in operator order.
    pub parents: Vec<NodeId>,
    /// Output dimension, fixed by shape inference.
    pub dim: usize,
}

/// A structural defect found by validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateName { name: String },
    DanglingParent { node: String, parent: String },
    Cycle { involved: Vec<String> },
    Arity { node: String, op: &'static str, expected: String, got: usize },
    Shape { node: String, detail: String },
    MissingOutput { name: String },
    NoOutputDeclared,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateName { name } => write!(f, "duplicate node name `{name}`"),
            Violation::DanglingParent { node, parent } => {
                write!(f, "node `{node}` references unknown parent `{parent}`")
            }
            Violation::Cycle { involved } => {
                write!(f, "cycle involving nodes {}", involved.join(", "))
            }
            Violation::Arity { node, op, expected, got } => {
                write!(f, "node `{node}` ({op}) expects {expected} parents, got {got}")
            }
            Violation::Shape { node, detail } => write!(f, "node `{node}`: {detail}"),
            Violation::MissingOutput { name } => write!(f, "declared output `{name}` does not exist"),
            Violation::NoOutputDeclared => write!(f, "no output node declared"),
        }
    }
}

/// The outcome of validating a graph under construction.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Topological order by node name, present when the edge relation is acyclic.
    pub topo_order: Option<Vec<String>>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid graph `{name}`: {}", summarize(.report))]
    Invalid { name: String, report: ValidationReport },
    #[error("input has dimension {got}, graph `{graph}` expects {expected}")]
    InputDim { graph: String, expected: usize, got: usize },
    #[error("graph file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("graph file parse error{}: {message}", location.as_deref().map(|l| format!(" at {l}")).unwrap_or_default())]
    Parse { message: String, location: Option<String> },
    #[error("unknown operator tag `{tag}` in node `{node}`")]
    UnknownOp { tag: String, node: String },
    #[error("unsupported format_version {found} (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("node `{node}`: {detail}")]
    Payload { node: String, detail: String },
}

fn summarize(report: &ValidationReport) -> String {
    report
        .violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// An immutable, validated computation graph.
///
/// Construction goes through [`GraphBuilder`], which validates and caches the
/// topological order, so a `Graph` value is always evaluable.
#[derive(Debug, Clone)]
pub struct Graph {
    name: String,
    nodes: Vec<Node>,
    input_ids: Vec<NodeId>,
    output_id: NodeId,
    topo: Vec<NodeId>,
    /// Offset of each input node inside the concatenated input vector.
    input_offsets: Vec<usize>,
    input_dim: usize,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.nodes == other.nodes
            && self.input_ids == other.input_ids
            && self.output_id == other.output_id
    }
}

impl Graph {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn input_ids(&self) -> &[NodeId] {
        &self.input_ids
    }

    pub fn output_id(&self) -> NodeId {
        self.output_id
    }

    /// Cached topological order (parents before children).
    pub fn topo_order(&self) -> &[NodeId] {
        &self.topo
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.nodes[self.output_id].dim
    }

    /// Offset of input node `id` in the concatenated input vector.
    pub fn input_offset(&self, id: NodeId) -> Option<usize> {
        self.input_ids
            .iter()
            .position(|&i| i == id)
            .map(|pos| self.input_offsets[pos])
    }

    /// Exact forward evaluation of every node; entry `i` is node `i`'s output.
    pub fn evaluate_nodes(&self, x: &Array1<f64>) -> Result<Vec<Array1<f64>>, GraphError> {
        if x.len() != self.input_dim {
            return Err(GraphError::InputDim {
                graph: self.name.clone(),
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut values: Vec<Array1<f64>> = vec![Array1::zeros(0); self.nodes.len()];
        for &id in &self.topo {
            let node = &self.nodes[id];
            let out = match &node.kind {
                OpKind::Input => {
                    let off = self.input_offset(id).expect("input offset");
                    x.slice(ndarray::s![off..off + node.dim]).to_owned()
                }
                OpKind::Constant(c) => c.clone(),
                OpKind::Affine { weight, bias } => weight.dot(&values[node.parents[0]]) + bias,
                OpKind::Add => &values[node.parents[0]] + &values[node.parents[1]],
                OpKind::Sub => &values[node.parents[0]] - &values[node.parents[1]],
                OpKind::Neg => -&values[node.parents[0]],
                OpKind::Mul => &values[node.parents[0]] * &values[node.parents[1]],
                OpKind::Scale(k) => &values[node.parents[0]] * *k,
                OpKind::Relu => values[node.parents[0]].mapv(|v| v.max(0.0)),
                OpKind::Tanh => values[node.parents[0]].mapv(f64::tanh),
                OpKind::Sigmoid => values[node.parents[0]].mapv(sigmoid),
                OpKind::Sin => values[node.parents[0]].mapv(f64::sin),
                OpKind::Cos => values[node.parents[0]].mapv(f64::cos),
                OpKind::Square => values[node.parents[0]].mapv(|v| v * v),
                OpKind::Step => values[node.parents[0]].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
                OpKind::Concat => {
                    let mut out = Vec::with_capacity(node.dim);
                    for &p in &node.parents {
                        out.extend(values[p].iter());
                    }
                    Array1::from(out)
                }
                OpKind::Slice { start, end } => {
                    values[node.parents[0]].slice(ndarray::s![*start..*end]).to_owned()
                }
                OpKind::SumReduce => Array1::from_elem(1, values[node.parents[0]].sum()),
            };
            values[id] = out;
        }
        Ok(values)
    }

    /// Exact forward evaluation at a point.
    pub fn evaluate(&self, x: &Array1<f64>) -> Result<Array1<f64>, GraphError> {
        Ok(self.evaluate_nodes(x)?.swap_remove(self.output_id))
    }

    /// Children lists (out-edges) for every node.
    pub fn children(&self) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            for &p in &node.parents {
                out[p].push(id);
            }
        }
        out
    }

    /// The set of ancestors of `target`, including `target` itself.
    pub fn ancestors(&self, target: NodeId) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![target];
        while let Some(id) = stack.pop() {
            if seen[id] {
                continue;
            }
            seen[id] = true;
            for &p in &self.nodes[id].parents {
                stack.push(p);
            }
        }
        seen
    }
}

pub fn sigmoid(x: f64) -> f64 {
    // Split on sign so neither branch overflows.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct PendingNode {
    name: String,
    kind: OpKind,
    parents: Vec<String>,
}

/// Incremental graph constructor; `build` validates everything and produces
/// an immutable [`Graph`].
pub struct GraphBuilder {
    name: String,
    pending: Vec<PendingNode>,
    input_dims: Vec<(String, usize)>,
    output: Option<String>,
}

impl GraphBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pending: Vec::new(),
            input_dims: Vec::new(),
            output: None,
        }
    }

    /// Declare an input node of the given dimension. Inputs concatenate into
    /// the flat input vector in declaration order.
    pub fn input(&mut self, name: impl Into<String>, dim: usize) -> &mut Self {
        let name = name.into();
        self.input_dims.push((name.clone(), dim));
        self.pending.push(PendingNode {
            name,
            kind: OpKind::Input,
            parents: Vec::new(),
        });
        self
    }

    /// Add an operator node.
    pub fn op(&mut self, name: impl Into<String>, kind: OpKind, parents: &[&str]) -> &mut Self {
        self.pending.push(PendingNode {
            name: name.into(),
            kind,
            parents: parents.iter().map(|s| s.to_string()).collect(),
        });
        self
    }

    pub fn constant(&mut self, name: impl Into<String>, values: Vec<f64>) -> &mut Self {
        self.op(name, OpKind::Constant(Array1::from(values)), &[])
    }

    pub fn affine(
        &mut self,
        name: impl Into<String>,
        weight: Array2<f64>,
        bias: Array1<f64>,
        parent: &str,
    ) -> &mut Self {
        self.op(name, OpKind::Affine { weight, bias }, &[parent])
    }

    pub fn output(&mut self, name: impl Into<String>) -> &mut Self {
        self.output = Some(name.into());
        self
    }

    /// True when a node of this name has already been added.
    pub fn has_node(&self, name: &str) -> bool {
        self.pending.iter().any(|n| n.name == name)
    }

    /// Validate the pending structure, reporting every violation found.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, n) in self.pending.iter().enumerate() {
            if index.insert(n.name.as_str(), i).is_some() {
                violations.push(Violation::DuplicateName { name: n.name.clone() });
            }
        }

        // Parent resolution.
        let mut resolved: Vec<Option<Vec<usize>>> = Vec::with_capacity(self.pending.len());
        for n in &self.pending {
            let mut parents = Vec::with_capacity(n.parents.len());
            let mut ok = true;
            for p in &n.parents {
                match index.get(p.as_str()) {
                    Some(&id) => parents.push(id),
                    None => {
                        violations.push(Violation::DanglingParent {
                            node: n.name.clone(),
                            parent: p.clone(),
                        });
                        ok = false;
                    }
                }
            }
            resolved.push(if ok { Some(parents) } else { None });
        }

        // Arity.
        for n in &self.pending {
            let got = n.parents.len();
            let bad = match n.kind.arity() {
                Arity::Exact(k) => got != k,
                Arity::AtLeast(k) => got < k,
            };
            if bad {
                let expected = match n.kind.arity() {
                    Arity::Exact(k) => format!("exactly {k}"),
                    Arity::AtLeast(k) => format!("at least {k}"),
                };
                violations.push(Violation::Arity {
                    node: n.name.clone(),
                    op: n.kind.tag(),
                    expected,
                    got,
                });
            }
        }

        // Kahn's algorithm over the resolved edges; self-loops and cycles
        // surface as the set of un-popped nodes.
        let n_nodes = self.pending.len();
        let mut indegree = vec![0usize; n_nodes];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for (i, parents) in resolved.iter().enumerate() {
            if let Some(ps) = parents {
                indegree[i] = ps.len();
                for &p in ps {
                    children[p].push(i);
                }
            }
        }
        let mut queue: std::collections::VecDeque<usize> = (0..n_nodes)
            .filter(|&i| indegree[i] == 0 && resolved[i].is_some())
            .collect();
        let mut topo = Vec::with_capacity(n_nodes);
        let mut popped = vec![false; n_nodes];
        while let Some(i) = queue.pop_front() {
            popped[i] = true;
            topo.push(i);
            for &c in &children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        let unresolved_parent = resolved.iter().any(Option::is_none);
        let topo_complete = topo.len() == n_nodes;
        if !topo_complete && !unresolved_parent {
            let involved: Vec<String> = (0..n_nodes)
                .filter(|&i| !popped[i])
                .map(|i| self.pending[i].name.clone())
                .collect();
            violations.push(Violation::Cycle { involved });
        }

        // Shape inference along the topological prefix.
        let mut dims: Vec<Option<usize>> = vec![None; n_nodes];
        if violations.is_empty() {
            for &i in &topo {
                let node = &self.pending[i];
                let parents = resolved[i].as_ref().unwrap();
                match self.infer_dim(node, parents, &dims) {
                    Ok(d) => dims[i] = Some(d),
                    Err(detail) => {
                        violations.push(Violation::Shape { node: node.name.clone(), detail });
                        break;
                    }
                }
            }
        }

        match &self.output {
            None => violations.push(Violation::NoOutputDeclared),
            Some(name) if !index.contains_key(name.as_str()) => {
                violations.push(Violation::MissingOutput { name: name.clone() })
            }
            _ => {}
        }

        let topo_order = if topo_complete {
            Some(topo.iter().map(|&i| self.pending[i].name.clone()).collect())
        } else {
            None
        };
        ValidationReport { violations, topo_order }
    }

    fn infer_dim(
        &self,
        node: &PendingNode,
        parents: &[usize],
        dims: &[Option<usize>],
    ) -> Result<usize, String> {
        let pdim = |k: usize| -> Result<usize, String> {
            dims[parents[k]].ok_or_else(|| "parent dimension unknown".to_string())
        };
        match &node.kind {
            OpKind::Input => {
                let dim = self
                    .input_dims
                    .iter()
                    .find(|(n, _)| *n == node.name)
                    .map(|(_, d)| *d)
                    .unwrap_or(0);
                if dim == 0 {
                    Err("input dimension must be positive".into())
                } else {
                    Ok(dim)
                }
            }
            OpKind::Constant(c) => {
                if c.is_empty() {
                    Err("constant payload is empty".into())
                } else {
                    Ok(c.len())
                }
            }
            OpKind::Affine { weight, bias } => {
                let p = pdim(0)?;
                if weight.ncols() != p {
                    return Err(format!(
                        "affine weight has {} columns but parent dim is {p}",
                        weight.ncols()
                    ));
                }
                if bias.len() != weight.nrows() {
                    return Err(format!(
                        "affine bias length {} does not match weight rows {}",
                        bias.len(),
                        weight.nrows()
                    ));
                }
                if weight.nrows() == 0 {
                    return Err("affine weight has zero rows".into());
                }
                Ok(weight.nrows())
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                let (a, b) = (pdim(0)?, pdim(1)?);
                if a != b {
                    Err(format!("parents have mismatched dims {a} and {b}"))
                } else {
                    Ok(a)
                }
            }
            OpKind::Neg
            | OpKind::Scale(_)
            | OpKind::Relu
            | OpKind::Tanh
            | OpKind::Sigmoid
            | OpKind::Sin
            | OpKind::Cos
            | OpKind::Square
            | OpKind::Step => pdim(0),
            OpKind::Concat => {
                let mut total = 0;
                for k in 0..parents.len() {
                    total += pdim(k)?;
                }
                Ok(total)
            }
            OpKind::Slice { start, end } => {
                let p = pdim(0)?;
                if start >= end || *end > p {
                    Err(format!("slice [{start}, {end}) out of range for parent dim {p}"))
                } else {
                    Ok(end - start)
                }
            }
            OpKind::SumReduce => {
                pdim(0)?;
                Ok(1)
            }
        }
    }

    /// Validate and freeze into an immutable graph.
    pub fn build(self) -> Result<Graph, GraphError> {
        let report = self.validate();
        if !report.is_valid() {
            return Err(GraphError::Invalid { name: self.name, report });
        }
        let index: HashMap<&str, usize> = self
            .pending
            .iter()
            .enumerate()
            .map(|(i, n)| (n.name.as_str(), i))
            .collect();
        let topo_names = report.topo_order.expect("valid graph has topo order");
        let topo: Vec<NodeId> = topo_names.iter().map(|n| index[n.as_str()]).collect();

        // Re-run shape inference to fix dims (validation already proved it succeeds).
        let mut dims: Vec<Option<usize>> = vec![None; self.pending.len()];
        for &i in &topo {
            let parents: Vec<usize> = self.pending[i]
                .parents
                .iter()
                .map(|p| index[p.as_str()])
                .collect();
            let d = self
                .infer_dim(&self.pending[i], &parents, &dims)
                .expect("shape inference succeeds on valid graph");
            dims[i] = Some(d);
        }

        let nodes: Vec<Node> = self
            .pending
            .iter()
            .enumerate()
            .map(|(i, n)| Node {
                name: n.name.clone(),
                kind: n.kind.clone(),
                parents: n.parents.iter().map(|p| index[p.as_str()]).collect(),
                dim: dims[i].unwrap(),
            })
            .collect();

        let input_ids: Vec<NodeId> = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.kind, OpKind::Input))
            .map(|(i, _)| i)
            .collect();
        let mut input_offsets = Vec::with_capacity(input_ids.len());
        let mut off = 0;
        for &id in &input_ids {
            input_offsets.push(off);
            off += nodes[id].dim;
        }
        let output_id = index[self.output.as_ref().unwrap().as_str()];

        Ok(Graph {
            name: self.name,
            nodes,
            input_ids,
            output_id,
            topo,
            input_offsets,
            input_dim: off,
        })
    }
}
