use proptest::prelude::*;
use sparse_psatz::sdp::{SolveStatus, SolverMethod, SolverParams};
use sparse_psatz::sparsity::{Mode, RelaxationOrder};
use sparse_psatz::verify::{verify_polytope, Sampling, VerifyOptions};
use sparse_psatz::{Activation, IntervalBox, Layer, NetworkModel, PolytopeSpec};

use nalgebra::{DMatrix, DVector};

fn identity_net() -> NetworkModel {
    let one = || Layer::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 0.0));
    NetworkModel::new(Activation::Relu, vec![one(), one()]).unwrap()
}

#[test]
fn identity_relu_envelope() {
    let input = IntervalBox::uniform(1, -1.0, 1.0).unwrap();
    let faces = PolytopeSpec::axis_aligned(1);
    for method in [SolverMethod::Admm, SolverMethod::InteriorPoint] {
        let options = VerifyOptions {
            solver: SolverParams { method, ..SolverParams::default().with_tol(1e-8) },
            order: RelaxationOrder::Fixed(2),
            ..VerifyOptions::default()
        };
        let r = verify_polytope(&identity_net(), &input, &faces, &options).unwrap();
        let g = r.gammas();
        assert!((g[0].unwrap() - 1.0).abs() < 1e-5, "{method:?}: {g:?}");
        assert!((g[1].unwrap() - 0.0).abs() < 1e-5, "{method:?}: {g:?}");
        assert!(r.faces.iter().all(|f| f.is_sound(1e-9) == Some(true)));
    }
}

#[test]
fn model_file_round_trip() {
    let model = NetworkModel::random(3, 2, 4, 3, Activation::Tanh, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    let back = NetworkModel::load(&path).unwrap();
    assert_eq!(back.fingerprint(), model.fingerprint());
    let u = [0.3, -0.7, 0.1];
    assert_eq!(back.forward(&u).unwrap(), model.forward(&u).unwrap());
}

#[test]
fn reports_repeat_exactly() {
    let model = NetworkModel::random(2, 2, 3, 2, Activation::Sigmoid, 4).unwrap();
    let input = IntervalBox::uniform(2, -1.0, 1.0).unwrap();
    let faces = PolytopeSpec::axis_aligned(2);
    let options = VerifyOptions {
        sample: Some(Sampling::Random { samples: 500, seed: 3 }),
        ..VerifyOptions::default()
    };
    let a = verify_polytope(&model, &input, &faces, &options).unwrap();
    let b = verify_polytope(&model, &input, &faces, &options).unwrap();
    assert_eq!(a.to_json_untimed(), b.to_json_untimed());
}

#[test]
fn dense_uses_one_clique() {
    let model = NetworkModel::random(2, 1, 4, 2, Activation::Relu, 6).unwrap();
    let input = IntervalBox::uniform(2, -1.0, 1.0).unwrap();
    let faces = PolytopeSpec::axis_aligned(1);
    let run = |mode| {
        let options = VerifyOptions { mode, sample: None, ..VerifyOptions::default() };
        verify_polytope(&model, &input, &faces, &options).unwrap()
    };
    let (sparse, dense) = (run(Mode::Sparse), run(Mode::Dense));
    assert_eq!(sparse.cliques.len(), 4);
    assert_eq!(dense.cliques.len(), 1);
    assert_eq!(dense.cliques[0].vars.len(), model.n_variables());
    assert!(sparse.blocks.unwrap().max_block <= dense.blocks.unwrap().max_block);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn certified_bounds_enclose_samples(
        seed in 0u64..1000,
        act in prop_oneof![Just(Activation::Relu), Just(Activation::Sigmoid), Just(Activation::Tanh)],
        layers in 1usize..4,
        nodes in 1usize..4,
        lo in -2.0f64..0.0,
        width in 0.1f64..3.0,
    ) {
        let model = NetworkModel::random(2, 2, layers, nodes, act, seed).unwrap();
        let input = IntervalBox::uniform(2, lo, lo + width).unwrap();
        let faces = PolytopeSpec::new(vec![vec![1.0, 0.0], vec![-1.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let options = VerifyOptions {
            solver: SolverParams { max_iter: 2000, ..SolverParams::default() },
            sample: Some(Sampling::Grid { per_axis: 41 }),
            ..VerifyOptions::default()
        };
        let r = verify_polytope(&model, &input, &faces, &options).unwrap();
        for f in &r.faces {
            let gamma = f.gamma.unwrap();
            prop_assert!(gamma + 1e-9 >= f.sampled_max.unwrap(), "face {}: {gamma} < {:?}", f.face, f.sampled_max);
            if f.status == Some(SolveStatus::Optimal) {
                prop_assert!(gamma <= f.ibp_bound + 1e-3 * (1.0 + f.ibp_bound.abs()));
            }
        }
    }
}
