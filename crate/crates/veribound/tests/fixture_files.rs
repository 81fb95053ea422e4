//! The shipped fixture files under `fixtures/` at the workspace root must
//! stay in sync with the programmatic corpus. `sync_check` fails when they
//! drift; regenerate with
//! `VERIBOUND_REGEN_FIXTURES=1 cargo test -p veribound --test fixture_files`.

use std::path::PathBuf;
use veribound::control::{save_bundle, SystemBundle};
use veribound::fixtures::{
    barrier_bundle, contraction_bundle, mpc_graph, planar_rotation_bundle, residual_net_bundle,
    scalar_continuous_bundle, scalar_lyapunov_bundle, sin_graph, square_minus_one_graph,
    toy_graph,
};
use veribound::graph::{load_graph, save_graph};
use veribound::interval::BoxDomain;
use veribound::spec::{parse_spec, save_spec, Atom, Clause, SpecCnf};
use veribound::Graph;

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn corpus_graphs() -> Vec<(&'static str, Graph)> {
    vec![
        ("toy.graph.toml", toy_graph()),
        ("sin.graph.toml", sin_graph()),
        ("square_minus_one.graph.toml", square_minus_one_graph()),
        ("mpc.graph.toml", mpc_graph().0),
    ]
}

fn corpus_bundles() -> Vec<(&'static str, SystemBundle)> {
    vec![
        ("lyap_scalar.bundle.toml", scalar_lyapunov_bundle().0),
        ("lyap_planar.bundle.toml", planar_rotation_bundle().0),
        ("lyap_continuous.bundle.toml", scalar_continuous_bundle(true).0),
        ("contraction_scalar.bundle.toml", contraction_bundle().0),
        ("barrier_integrator.bundle.toml", barrier_bundle().0),
        ("residual_net.bundle.toml", residual_net_bundle(42).0),
    ]
}

fn corpus_specs() -> Vec<(&'static str, SpecCnf, usize)> {
    use ndarray::Array1;
    let square_positive = SpecCnf::new(
        vec![Clause::new(vec![Atom::greater(Array1::from(vec![1.0]), 0.0).unwrap()]).unwrap()],
        BoxDomain::symmetric(1, 2.0),
    )
    .unwrap();
    let sin_above = SpecCnf::new(
        vec![Clause::new(vec![Atom::greater(Array1::from(vec![1.0]), 1.5).unwrap()]).unwrap()],
        BoxDomain::from_slices(&[0.0], &[std::f64::consts::TAU]).unwrap(),
    )
    .unwrap();
    vec![
        ("square_positive.spec.toml", square_positive, 1),
        ("sin_above.spec.toml", sin_above, 1),
    ]
}

const VERTICES_FILE: &str = "vertices = [[-1.0], [1.0]]\n";

#[test]
fn sync_check() {
    let dir = fixtures_dir();
    let regen = std::env::var_os("VERIBOUND_REGEN_FIXTURES").is_some();
    if regen {
        std::fs::create_dir_all(&dir).unwrap();
    }
    for (name, graph) in corpus_graphs() {
        let path = dir.join(name);
        if regen {
            save_graph(&graph, &path).unwrap();
        }
        let on_disk = load_graph(&path)
            .unwrap_or_else(|e| panic!("{name}: {e} (regenerate fixtures?)"));
        assert_eq!(on_disk, graph, "{name} drifted from the programmatic corpus");
    }
    for (name, bundle) in corpus_bundles() {
        let path = dir.join(name);
        if regen {
            save_bundle(&bundle, &path).unwrap();
        }
        let on_disk = veribound::control::load_bundle(&path)
            .unwrap_or_else(|e| panic!("{name}: {e} (regenerate fixtures?)"));
        assert_eq!(on_disk.dynamics, bundle.dynamics, "{name} dynamics drifted");
        assert_eq!(on_disk.certificate, bundle.certificate, "{name} certificate drifted");
        assert_eq!(on_disk.metric, bundle.metric, "{name} metric drifted");
        assert_eq!(
            on_disk.disturbance_bound, bundle.disturbance_bound,
            "{name} disturbance bound drifted"
        );
        assert_eq!(
            on_disk.control_matrix, bundle.control_matrix,
            "{name} control matrix drifted"
        );
    }
    for (name, spec, out_dim) in corpus_specs() {
        let path = dir.join(name);
        if regen {
            save_spec(&spec, &path).unwrap();
        }
        let on_disk = parse_spec(&path, out_dim)
            .unwrap_or_else(|e| panic!("{name}: {e} (regenerate fixtures?)"));
        assert_eq!(on_disk, spec, "{name} drifted from the programmatic corpus");
    }
    let vertices_path = dir.join("barrier_vertices.toml");
    if regen {
        std::fs::write(&vertices_path, VERTICES_FILE).unwrap();
    }
    assert_eq!(
        std::fs::read_to_string(&vertices_path).expect("vertices file present"),
        VERTICES_FILE
    );
}
