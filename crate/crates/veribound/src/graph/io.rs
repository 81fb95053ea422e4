//! The on-disk graph format: a versioned TOML document with `inputs`,
//! `nodes`, and `output` sections. Payload matrices are nested arrays,
//! row-major; all numeric literals round-trip at full double precision.

use super::{Graph, GraphBuilder, GraphError, OpKind};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

/// Serde mirror of the graph file schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub format_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub inputs: Vec<InputDecl>,
    #[serde(default)]
    pub nodes: Vec<NodeDecl>,
    pub output: OutputDecl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputDecl {
    pub id: String,
    pub dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeDecl {
    pub id: String,
    pub op: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parents: Vec<String>,
    /// Affine weight matrix, row-major.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Vec<Vec<f64>>>,
    /// Affine bias vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
    /// Constant payload.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Vec<f64>>,
    /// Scale factor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    /// Slice start (inclusive).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    /// Slice end (exclusive).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputDecl {
    pub id: String,
}

impl GraphFile {
    pub fn parse(text: &str) -> Result<GraphFile, GraphError> {
        let file: GraphFile = toml::from_str(text).map_err(|e| GraphError::Parse {
            message: e.message().to_string(),
            location: e.span().map(|s| format!("byte {}..{}", s.start, s.end)),
        })?;
        if file.format_version != FORMAT_VERSION {
            return Err(GraphError::VersionMismatch {
                found: file.format_version,
                supported: FORMAT_VERSION,
            });
        }
        Ok(file)
    }

    pub fn into_graph(self) -> Result<Graph, GraphError> {
        let mut b = GraphBuilder::new(self.name);
        for input in &self.inputs {
            b.input(&input.id, input.dim);
        }
        for node in &self.nodes {
            let kind = decode_op(node)?;
            let parents: Vec<&str> = node.parents.iter().map(String::as_str).collect();
            b.op(&node.id, kind, &parents);
        }
        b.output(&self.output.id);
        b.build()
    }

    pub fn from_graph(graph: &Graph) -> GraphFile {
        let mut inputs = Vec::new();
        let mut nodes = Vec::new();
        for (id, node) in graph.nodes().iter().enumerate() {
            if matches!(node.kind, OpKind::Input) {
                inputs.push(InputDecl { id: node.name.clone(), dim: node.dim });
                continue;
            }
            let mut decl = NodeDecl {
                id: node.name.clone(),
                op: node.kind.tag().to_string(),
                parents: node.parents.iter().map(|&p| graph.node(p).name.clone()).collect(),
                weight: None,
                bias: None,
                value: None,
                k: None,
                start: None,
                end: None,
            };
            match &node.kind {
                OpKind::Constant(c) => decl.value = Some(c.to_vec()),
                OpKind::Affine { weight, bias } => {
                    decl.weight = Some(weight.rows().into_iter().map(|r| r.to_vec()).collect());
                    decl.bias = Some(bias.to_vec());
                }
                OpKind::Scale(k) => decl.k = Some(*k),
                OpKind::Slice { start, end } => {
                    decl.start = Some(*start);
                    decl.end = Some(*end);
                }
                _ => {}
            }
            let _ = id;
            nodes.push(decl);
        }
        GraphFile {
            format_version: FORMAT_VERSION,
            name: graph.name().to_string(),
            inputs,
            nodes,
            output: OutputDecl { id: graph.node(graph.output_id()).name.clone() },
        }
    }
}

fn decode_op(node: &NodeDecl) -> Result<OpKind, GraphError> {
    let payload = |field: &str, detail: &str| GraphError::Payload {
        node: node.id.clone(),
        detail: format!("operator `{}` requires field `{field}`: {detail}", node.op),
    };
    Ok(match node.op.as_str() {
        "constant" => {
            let v = node.value.clone().ok_or_else(|| payload("value", "constant payload"))?;
            OpKind::Constant(Array1::from(v))
        }
        "affine" => {
            let w = node.weight.clone().ok_or_else(|| payload("weight", "weight matrix"))?;
            let b = node.bias.clone().ok_or_else(|| payload("bias", "bias vector"))?;
            let rows = w.len();
            let cols = w.first().map(Vec::len).unwrap_or(0);
            if w.iter().any(|r| r.len() != cols) {
                return Err(GraphError::Payload {
                    node: node.id.clone(),
                    detail: "weight rows have unequal lengths".into(),
                });
            }
            let flat: Vec<f64> = w.into_iter().flatten().collect();
            let weight = Array2::from_shape_vec((rows, cols), flat).map_err(|e| {
                GraphError::Payload { node: node.id.clone(), detail: e.to_string() }
            })?;
            OpKind::Affine { weight, bias: Array1::from(b) }
        }
        "add" => OpKind::Add,
        "sub" => OpKind::Sub,
        "neg" => OpKind::Neg,
        "mul" => OpKind::Mul,
        "scale" => OpKind::Scale(node.k.ok_or_else(|| payload("k", "scale factor"))?),
        "relu" => OpKind::Relu,
        "tanh" => OpKind::Tanh,
        "sigmoid" => OpKind::Sigmoid,
        "sin" => OpKind::Sin,
        "cos" => OpKind::Cos,
        "square" => OpKind::Square,
        "step" => OpKind::Step,
        "concat" => OpKind::Concat,
        "slice" => OpKind::Slice {
            start: node.start.ok_or_else(|| payload("start", "slice start"))?,
            end: node.end.ok_or_else(|| payload("end", "slice end"))?,
        },
        "sum_reduce" => OpKind::SumReduce,
        other => {
            return Err(GraphError::UnknownOp { tag: other.to_string(), node: node.id.clone() })
        }
    })
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph, GraphError> {
    let text = std::fs::read_to_string(path)?;
    GraphFile::parse(&text)?.into_graph()
}

pub fn save_graph(graph: &Graph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    let file = GraphFile::from_graph(graph);
    let text = toml::to_string_pretty(&file).map_err(|e| GraphError::Parse {
        message: format!("serialize: {e}"),
        location: None,
    })?;
    std::fs::write(path, text)?;
    Ok(())
}
