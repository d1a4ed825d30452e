mod support;

use rand::Rng;
use support::{naive_conv2d, naive_conv_transpose2d, rand_tensor, rng};
use tsgeo_core::tensor::{Graph, Op};

#[test]
fn conv2d_matches_nested_loops() {
    for c in 0..30u64 {
        let mut r = rng(c);
        let k = r.random_range(1..=3);
        let stride = r.random_range(1..=2);
        let pad = r.random_range(0..=1);
        let (h, w) = (r.random_range(k..=7), r.random_range(k..=7));
        let (ci, co, b) = (r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=2));
        let x = rand_tensor(&mut r, &[b, ci, h, w]);
        let wt = rand_tensor(&mut r, &[co, ci, k, k]);
        let bias = rand_tensor(&mut r, &[co]);
        let mut g = Graph::new();
        let ids = [g.constant(x.clone()), g.constant(wt.clone()), g.constant(bias.clone())];
        let out = g.apply(Op::Conv2d { stride, padding: pad }, &ids).unwrap();
        let (shape, want) = naive_conv2d(&x, &wt, bias.data(), stride, pad);
        assert_eq!(g.shape(out), shape.as_slice());
        for (a, b) in g.value(out).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_transpose_matches_scatter() {
    for c in 0..30u64 {
        let mut r = rng(100 + c);
        let k = r.random_range(2..=3);
        let stride = r.random_range(1..=2);
        let pad = r.random_range(0..=1);
        let op = (r.random_range(0..stride), r.random_range(0..stride));
        let (h, w) = (r.random_range(2..=5), r.random_range(2..=5));
        let (ci, co) = (r.random_range(1..=3), r.random_range(1..=3));
        let x = rand_tensor(&mut r, &[2, ci, h, w]);
        let wt = rand_tensor(&mut r, &[ci, co, k, k]);
        let bias = rand_tensor(&mut r, &[co]);
        let mut g = Graph::new();
        let ids = [g.constant(x.clone()), g.constant(wt.clone()), g.constant(bias.clone())];
        let out = g.apply(Op::ConvTranspose2d { stride, padding: pad, output_padding: op }, &ids).unwrap();
        let (shape, want) = naive_conv_transpose2d(&x, &wt, bias.data(), stride, pad, op);
        assert_eq!(g.shape(out), shape.as_slice());
        for (a, b) in g.value(out).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_without_bias_operand() {
    let mut r = rng(7);
    let x = rand_tensor(&mut r, &[1, 2, 5, 5]);
    let wt = rand_tensor(&mut r, &[3, 2, 3, 3]);
    let mut g = Graph::new();
    let ids = [g.constant(x.clone()), g.constant(wt.clone())];
    let out = g.apply(Op::Conv2d { stride: 1, padding: 1 }, &ids).unwrap();
    let (_, want) = naive_conv2d(&x, &wt, &[0.0; 3], 1, 1);
    for (a, b) in g.value(out).iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}
