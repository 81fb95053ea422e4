//! An independent straight-line interpreter of the on-disk graph format,
//! written directly against the TOML document rather than the library's
//! loader, and agreement checks between it and `Graph::evaluate` over the
//! fixture corpus.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use toml::Value;
use veribound::fixtures::{random_graph, residual_net_bundle, toy_graph, GenOp};
use veribound::graph::save_graph;
use veribound::interval::BoxDomain;
use veribound::Graph;

/// Evaluate the serialized graph text at a point, resolving nodes by name on
/// demand. Shares nothing with `Graph::evaluate` beyond f64 arithmetic.
fn interpret(text: &str, x: &[f64]) -> Vec<f64> {
    let doc: toml::Table = toml::from_str(text).expect("well-formed toml");
    assert_eq!(doc["format_version"].as_integer(), Some(1));

    let mut values: HashMap<String, Vec<f64>> = HashMap::new();
    let mut offset = 0usize;
    if let Some(inputs) = doc.get("inputs").and_then(Value::as_array) {
        for input in inputs {
            let id = input["id"].as_str().unwrap().to_string();
            let dim = input["dim"].as_integer().unwrap() as usize;
            values.insert(id, x[offset..offset + dim].to_vec());
            offset += dim;
        }
    }
    assert_eq!(offset, x.len(), "point dims match declared inputs");

    let num = |v: &Value| -> f64 {
        match v {
            Value::Float(f) => *f,
            Value::Integer(i) => *i as f64,
            other => panic!("expected number, got {other:?}"),
        }
    };
    let vec1 = |v: &Value| -> Vec<f64> { v.as_array().unwrap().iter().map(num).collect() };

    if let Some(nodes) = doc.get("nodes").and_then(Value::as_array) {
        for node in nodes {
            let id = node["id"].as_str().unwrap().to_string();
            let op = node["op"].as_str().unwrap();
            let parent = |k: usize| -> &[f64] {
                let name = node["parents"].as_array().unwrap()[k].as_str().unwrap();
                values.get(name).expect("parents precede children in the file")
            };
            let out: Vec<f64> = match op {
                "constant" => vec1(&node["value"]),
                "affine" => {
                    let w: Vec<Vec<f64>> =
                        node["weight"].as_array().unwrap().iter().map(vec1).collect();
                    let b = vec1(&node["bias"]);
                    let p = parent(0);
                    w.iter()
                        .zip(b.iter())
                        .map(|(row, bi)| {
                            row.iter().zip(p.iter()).map(|(a, v)| a * v).sum::<f64>() + bi
                        })
                        .collect()
                }
                "add" => parent(0).iter().zip(parent(1).iter()).map(|(a, b)| a + b).collect(),
                "sub" => parent(0).iter().zip(parent(1).iter()).map(|(a, b)| a - b).collect(),
                "neg" => parent(0).iter().map(|a| -a).collect(),
                "mul" => parent(0).iter().zip(parent(1).iter()).map(|(a, b)| a * b).collect(),
                "scale" => {
                    let k = num(&node["k"]);
                    parent(0).iter().map(|a| k * a).collect()
                }
                "relu" => parent(0).iter().map(|a| a.max(0.0)).collect(),
                "tanh" => parent(0).iter().map(|a| a.tanh()).collect(),
                "sigmoid" => parent(0).iter().map(|a| 1.0 / (1.0 + (-a).exp())).collect(),
                "sin" => parent(0).iter().map(|a| a.sin()).collect(),
                "cos" => parent(0).iter().map(|a| a.cos()).collect(),
                "square" => parent(0).iter().map(|a| a * a).collect(),
                "step" => parent(0).iter().map(|a| if *a > 0.0 { 1.0 } else { 0.0 }).collect(),
                "concat" => {
                    let arity = node["parents"].as_array().unwrap().len();
                    (0..arity).flat_map(|k| parent(k).to_vec()).collect()
                }
                "slice" => {
                    let s = node["start"].as_integer().unwrap() as usize;
                    let e = node["end"].as_integer().unwrap() as usize;
                    parent(0)[s..e].to_vec()
                }
                "sum_reduce" => vec![parent(0).iter().sum()],
                other => panic!("unknown op {other}"),
            };
            values.insert(id, out);
        }
    }
    let output = doc["output"]["id"].as_str().unwrap();
    values.remove(output).expect("output node defined")
}

fn agree_on_random_points(graph: &Graph, seed: u64) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.toml");
    save_graph(graph, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = BoxDomain::symmetric(graph.input_dim(), 2.0);
    for _ in 0..1000 {
        let x = domain.sample(&mut rng);
        let ours = graph.evaluate(&x).unwrap();
        let theirs = interpret(&text, x.as_slice().unwrap());
        assert_eq!(ours.len(), theirs.len());
        for (a, b) in ours.iter().zip(theirs.iter()) {
            let denom = a.abs().max(1.0);
            assert!(
                (a - b).abs() / denom <= 1e-12,
                "graph {}: {a} vs {b} at {x}",
                graph.name()
            );
        }
    }
}

#[test]
fn toy_graph_agrees_with_interpreter() {
    agree_on_random_points(&toy_graph(), 1);
}

#[test]
fn residual_net_agrees_with_interpreter() {
    let (bundle, _) = residual_net_bundle(42);
    agree_on_random_points(&bundle.dynamics, 2);
}

#[test]
fn random_corpus_agrees_with_interpreter() {
    let ops = [
        GenOp::Relu,
        GenOp::Tanh,
        GenOp::Sigmoid,
        GenOp::Sin,
        GenOp::Square,
        GenOp::Mul,
    ];
    for seed in 0..10 {
        let graph = random_graph(seed, 3, 3, &ops);
        agree_on_random_points(&graph, 100 + seed);
    }
}

#[test]
fn hand_written_document_with_all_operator_tags() {
    let x = Array1::from(vec![0.3, -0.8]);
    let text = r#"
format_version = 1
name = "zoo"

[[inputs]]
id = "x"
dim = 2

[[nodes]]
id = "w"
op = "affine"
parents = ["x"]
weight = [[1.0, 0.5], [-0.25, 2.0], [0.0, 1.0]]
bias = [0.1, -0.2, 0.0]

[[nodes]]
id = "t"
op = "tanh"
parents = ["w"]

[[nodes]]
id = "s"
op = "slice"
parents = ["t"]
start = 0
end = 2

[[nodes]]
id = "m"
op = "mul"
parents = ["s", "s"]

[[nodes]]
id = "r"
op = "sum_reduce"
parents = ["m"]

[[nodes]]
id = "k"
op = "scale"
parents = ["r"]
k = -1.5

[[nodes]]
id = "c"
op = "constant"
value = [0.25]

[[nodes]]
id = "y"
op = "add"
parents = ["k", "c"]

[output]
id = "y"
"#;
    let graph = veribound::graph::GraphFile::parse(text).unwrap().into_graph().unwrap();
    let ours = graph.evaluate(&x).unwrap();
    let theirs = interpret(text, x.as_slice().unwrap());
    assert!((ours[0] - theirs[0]).abs() < 1e-12);
}
