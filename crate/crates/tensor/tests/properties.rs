use proptest::prelude::*;
use ursct_tensor::{Conv2dConfig, Graph, Tensor};

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).unwrap()
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(data in prop::collection::vec(-50.0f64..50.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(tensor(vec![3, 4], data));
        for axis in 0..2 {
            let y = g.softmax(x, axis).unwrap();
            let sums = g.mean(y, &[axis]).unwrap();
            let n = g.shape(x)[axis] as f64;
            for &s in g.value(sums).data() {
                prop_assert!((s * n - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn softmax_f32_stays_normalized(data in prop::collection::vec(-1e4f32..1e4, 8)) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new([8], data).unwrap());
        let y = g.softmax(x, 0).unwrap();
        let total: f32 = g.value(y).data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn reshape_and_permute_roundtrip(data in prop::collection::vec(-1.0f64..1.0, 24)) {
        let mut g = Graph::new();
        let x = g.constant(tensor(vec![2, 3, 4], data));
        let r = g.reshape(x, [6, 4]).unwrap();
        let back = g.reshape(r, [2, 3, 4]).unwrap();
        prop_assert_eq!(g.value(back), g.value(x));

        let p = g.permute(x, &[1, 2, 0]).unwrap();
        let q = g.permute(p, &[2, 0, 1]).unwrap();
        prop_assert_eq!(g.value(q), g.value(x));
    }

    #[test]
    fn depthwise_conv_has_no_cross_channel_sensitivity(
        x in prop::collection::vec(-1.0f64..1.0, 3 * 16),
        w in prop::collection::vec(-1.0f64..1.0, 3 * 9),
        channel in 0usize..3,
    ) {
        let mut g = Graph::new();
        let xv = g.param(tensor(vec![1, 3, 4, 4], x));
        let wv = g.constant(tensor(vec![3, 1, 3, 3], w));
        let y = g.conv2d(xv, wv, None, Conv2dConfig { padding: 1, groups: 3, ..Default::default() }).unwrap();
        let picked = g.narrow(y, 1, channel, 1).unwrap();
        let s = g.sum(picked).unwrap();
        g.backward(s).unwrap();
        let grad = g.grad(xv).unwrap().data();
        for c in 0..3 {
            if c != channel {
                prop_assert!(grad[c * 16..(c + 1) * 16].iter().all(|&v| v == 0.0));
            }
        }
    }
}
