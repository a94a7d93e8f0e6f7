use ursct_tensor::gradcheck::{gradcheck, random_tensor, tensor_op_suite, GradcheckOptions};
use ursct_tensor::{Graph, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_op_matches_central_differences() {
    let opts = GradcheckOptions::default();
    let reports = tensor_op_suite(&opts).unwrap();
    assert!(reports.len() >= 25);
    for (name, r) in &reports {
        assert!(r.pass, "{name}: {r:?}");
        assert!(r.probes >= 10, "{name} only probed {} coordinates", r.probes);
    }
}

#[test]
fn linear_layer_is_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = vec![
        random_tensor(&mut rng, &[4, 5], -1.0, 1.0, &[], 0.0),
        random_tensor(&mut rng, &[5, 3], -1.0, 1.0, &[], 0.0),
        random_tensor(&mut rng, &[3], -1.0, 1.0, &[], 0.0),
    ];
    let opts = GradcheckOptions {
        tol: 1e-6,
        ..Default::default()
    };
    let r = gradcheck(|g, v| g.linear(v[0], v[1], Some(v[2])), &inputs, &opts).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn mean_of_squares_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::new([2], vec![1.0, 2.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let m = g.mean_all(sq).unwrap();
    g.backward(m).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn mean_gradient_matches_differences() {
    let x = Tensor::new([5], vec![0.1, -0.4, 2.0, 0.0, 1.5]).unwrap();
    let r = gradcheck(|g, v| g.mean_all(v[0]), &[x], &GradcheckOptions::default()).unwrap();
    assert!(r.max_abs_err < 1e-9, "{r:?}");
}
