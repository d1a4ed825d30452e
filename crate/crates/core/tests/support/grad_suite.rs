//! Finite-difference checks for every primitive and loss component.

use super::{gradcheck, rand_away_from_zero, rand_tensor, rng};
use rand::Rng;
use tsgeo_core::perceptual::{ExtractorDims, ExtractorParams};
use tsgeo_core::satl::{diff_loss, freq_loss, perceptual_loss, LossWeights};
use tsgeo_core::tensor::{Graph, Op, Tensor};

const CASES: u64 = 20;
const H: f64 = 1e-6;
const TOL: f64 = 1e-4;
const TOL_TRANSFORMER: f64 = 1e-3;

fn check<F>(name: &str, tol: f64, mut case: F)
where
    F: FnMut(u64) -> f64,
{
    for c in 0..CASES {
        let err = case(c);
        assert!(err < tol, "{name} case {c}: relative error {err:e}");
    }
}

fn dims(r: &mut tsgeo_core::rng::SeededRng, lo: usize, hi: usize) -> usize {
    r.random_range(lo..=hi)
}

pub fn elementwise_binary() {
    for op in [Op::Add, Op::Sub, Op::Mul] {
        check(&format!("{op:?}"), TOL, |c| {
            let mut r = rng(c);
            let shape = [dims(&mut r, 1, 4), dims(&mut r, 1, 5)];
            let a = rand_tensor(&mut r, &shape);
            let b = rand_tensor(&mut r, &shape);
            gradcheck(&[a, b], H, c, |g, x| g.apply(op.clone(), x))
        });
    }
}

pub fn scale_square_abs_relu() {
    check("scale", TOL, |c| {
        let mut r = rng(c);
        let a = {
            let s = [dims(&mut r, 1, 6)];
            rand_tensor(&mut r, &s)
        };
        let s = r.random_range(-3.0..3.0);
        gradcheck(&[a], H, c, |g, x| g.scale(x[0], s))
    });
    check("square", TOL, |c| {
        let mut r = rng(c);
        let a = {
            let s = [dims(&mut r, 1, 4), 3];
            rand_tensor(&mut r, &s)
        };
        gradcheck(&[a], H, c, |g, x| g.square(x[0]))
    });
    check("abs", TOL, |c| {
        let mut r = rng(c);
        let a = {
            let s = [dims(&mut r, 1, 8)];
            rand_away_from_zero(&mut r, &s)
        };
        gradcheck(&[a], H, c, |g, x| g.abs(x[0]))
    });
    check("relu", TOL, |c| {
        let mut r = rng(c);
        let a = {
            let s = [2, dims(&mut r, 1, 6)];
            rand_away_from_zero(&mut r, &s)
        };
        gradcheck(&[a], H, c, |g, x| g.relu(x[0]))
    });
}

pub fn matmul_transpose_bias() {
    check("matmul", TOL, |c| {
        let mut r = rng(c);
        let (m, k, n) = (dims(&mut r, 1, 4), dims(&mut r, 1, 5), dims(&mut r, 1, 4));
        let a = rand_tensor(&mut r, &[m, k]);
        let b = rand_tensor(&mut r, &[k, n]);
        gradcheck(&[a, b], H, c, |g, x| g.matmul(x[0], x[1]))
    });
    check("transpose", TOL, |c| {
        let mut r = rng(c);
        let a = {
            let s = [dims(&mut r, 1, 4), dims(&mut r, 1, 4)];
            rand_tensor(&mut r, &s)
        };
        gradcheck(&[a], H, c, |g, x| g.transpose(x[0]))
    });
    check("add_bias", TOL, |c| {
        let mut r = rng(c);
        let n = dims(&mut r, 1, 5);
        let a = {
            let s = [dims(&mut r, 1, 3), n];
            rand_tensor(&mut r, &s)
        };
        let b = rand_tensor(&mut r, &[n]);
        gradcheck(&[a, b], H, c, |g, x| g.add_bias(x[0], x[1]))
    });
}

pub fn softmax_and_layer_norm() {
    check("softmax", TOL, |c| {
        let mut r = rng(c);
        let a = {
            let s = [dims(&mut r, 1, 4), dims(&mut r, 2, 5)];
            rand_tensor(&mut r, &s)
        };
        let axis = (c % 2) as usize;
        gradcheck(&[a], H, c, move |g, x| g.softmax(x[0], axis))
    });
    check("layer_norm", TOL, |c| {
        let mut r = rng(c);
        let n = dims(&mut r, 2, 6);
        let a = {
            let s = [dims(&mut r, 1, 3), n];
            rand_tensor(&mut r, &s)
        };
        let gamma = rand_tensor(&mut r, &[n]);
        let beta = rand_tensor(&mut r, &[n]);
        gradcheck(&[a, gamma, beta], H, c, |g, x| g.layer_norm(x[0], x[1], x[2], 1e-5))
    });
}

pub fn reductions() {
    for (name, is_mean) in [("mean", true), ("sum", false)] {
        check(name, TOL, |c| {
            let mut r = rng(c);
            let a = {
                let s = [dims(&mut r, 1, 4), dims(&mut r, 1, 4), 2];
                rand_tensor(&mut r, &s)
            };
            let axis = match c % 4 {
                0 => None,
                k => Some(k as usize - 1),
            };
            let op = if is_mean { Op::Mean { axis } } else { Op::Sum { axis } };
            gradcheck(&[a], H, c, move |g, x| g.apply(op.clone(), x))
        });
    }
}

pub fn shape_ops() {
    check("reshape", TOL, |c| {
        let mut r = rng(c);
        let (m, n) = (dims(&mut r, 1, 4), dims(&mut r, 1, 4));
        let a = rand_tensor(&mut r, &[m, n]);
        gradcheck(&[a], H, c, move |g, x| g.reshape(x[0], [n * m]))
    });
    check("slice", TOL, |c| {
        let mut r = rng(c);
        let len = dims(&mut r, 2, 6);
        let a = rand_tensor(&mut r, &[3, len]);
        let start = r.random_range(0..len - 1);
        let end = r.random_range(start + 1..=len);
        gradcheck(&[a], H, c, move |g, x| g.slice(x[0], 1, start, end))
    });
    check("concat", TOL, |c| {
        let mut r = rng(c);
        let axis = (c % 2) as usize;
        let parts: Vec<Tensor> = (0..dims(&mut r, 1, 3))
            .map(|_| {
                let k = dims(&mut r, 1, 3);
                rand_tensor(&mut r, &if axis == 0 { [k, 2] } else { [2, k] })
            })
            .collect();
        gradcheck(&parts, H, c, move |g, x| g.concat(x, axis))
    });
}

pub fn spectral_ops() {
    check("rfft", TOL, |c| {
        let mut r = rng(c);
        let a = {
            let s = [dims(&mut r, 2, 20), dims(&mut r, 1, 2)];
            rand_tensor(&mut r, &s)
        };
        gradcheck(&[a], H, c, |g, x| g.rfft(x[0]))
    });
    check("complex_abs", TOL, |c| {
        let mut r = rng(c);
        let a = {
            let s = [dims(&mut r, 1, 5), 2];
            rand_away_from_zero(&mut r, &s)
        };
        gradcheck(&[a], H, c, |g, x| g.complex_abs(x[0]))
    });
}

pub fn convolutions() {
    check("conv2d", TOL, |c| {
        let mut r = rng(c);
        let (k, stride, pad) = (dims(&mut r, 1, 3), dims(&mut r, 1, 2), dims(&mut r, 0, 1));
        let h = dims(&mut r, k, 5);
        let w = dims(&mut r, k, 5);
        let (ci, co) = (dims(&mut r, 1, 2), dims(&mut r, 1, 2));
        let x = {
            let s = [dims(&mut r, 1, 2), ci, h, w];
            rand_tensor(&mut r, &s)
        };
        let wt = rand_tensor(&mut r, &[co, ci, k, k]);
        let b = rand_tensor(&mut r, &[co]);
        gradcheck(&[x, wt, b], H, c, move |g, v| g.apply(Op::Conv2d { stride, padding: pad }, v))
    });
    check("conv_transpose2d", TOL, |c| {
        let mut r = rng(c);
        let (k, stride) = (dims(&mut r, 2, 3), dims(&mut r, 1, 2));
        let pad = dims(&mut r, 0, 1);
        let op = (dims(&mut r, 0, stride - 1), dims(&mut r, 0, stride - 1));
        let (ci, co) = (dims(&mut r, 1, 2), dims(&mut r, 1, 2));
        let x = {
            let s = [1, ci, dims(&mut r, 2, 4), dims(&mut r, 2, 4)];
            rand_tensor(&mut r, &s)
        };
        let wt = rand_tensor(&mut r, &[ci, co, k, k]);
        let b = rand_tensor(&mut r, &[co]);
        gradcheck(&[x, wt, b], H, c, move |g, v| {
            g.apply(Op::ConvTranspose2d { stride, padding: pad, output_padding: op }, v)
        })
    });
}

pub fn satl_components() {
    check("diff_loss", TOL, |c| {
        let mut r = rng(c);
        let shape = [dims(&mut r, 2, 12), dims(&mut r, 1, 2)];
        let x = rand_tensor(&mut r, &shape);
        let y = rand_tensor(&mut r, &shape);
        gradcheck(&[x], H, c, move |g, v| {
            let yc = g.constant(y.clone());
            diff_loss(g, v[0], yc)
        })
    });
    check("freq_loss", TOL, |c| {
        let mut r = rng(c);
        let shape = [dims(&mut r, 4, 24), dims(&mut r, 1, 2)];
        let x = rand_tensor(&mut r, &shape);
        let y = rand_tensor(&mut r, &shape);
        let w = LossWeights { k_ratio: 0.25, ..LossWeights::default() };
        gradcheck(&[x], H, c, move |g, v| {
            let yc = g.constant(y.clone());
            freq_loss(g, v[0], yc, &w)
        })
    });
}

fn small_extractor(seed: u64, t: usize) -> ExtractorParams {
    let dims = ExtractorDims { input_t: t, d_model: 8, heads: 2, ff_hidden: 16, mlp_hidden: 16, d_z: 6 };
    ExtractorParams::new(&mut rng(seed), dims).unwrap()
}

pub fn perceptual_loss_through_transformer() {
    check("perceptual_loss", TOL_TRANSFORMER, |c| {
        let mut r = rng(c);
        let t = dims(&mut r, 3, 8);
        let ex = small_extractor(c, t);
        let shape = [t, dims(&mut r, 1, 2)];
        let x = rand_tensor(&mut r, &shape);
        let y = rand_tensor(&mut r, &shape);
        gradcheck(&[x], H, c, move |g, v| {
            let yc = g.constant(y.clone());
            perceptual_loss(g, v[0], yc, &ex)
        })
    });
}

pub fn extractor_input_gradient() {
    check("extract_temporal", TOL_TRANSFORMER, |c| {
        let mut r = rng(c + 100);
        let t = dims(&mut r, 3, 8);
        let ex = small_extractor(c, t);
        let x = rand_tensor(&mut r, &[t, 1]);
        gradcheck(&[x], H, c, move |g, v| {
            let b = ex.bind(g, false);
            ex.forward(g, &b, v[0])
        })
    });
}

pub fn parameter_gradients_through_transformer() {
    check("extractor parameters", TOL_TRANSFORMER, |c| {
        let mut r = rng(c + 200);
        let t = dims(&mut r, 3, 6);
        let ex = small_extractor(c, t);
        let x: Vec<f64> = rand_tensor(&mut r, &[t]).into_data();
        let proj = rand_tensor(&mut r, &[6]).into_data();
        let objective = |e: &ExtractorParams| -> f64 {
            e.extract_temporal(&x).unwrap().iter().zip(&proj).map(|(a, b)| a * b).sum()
        };

        let mut g = Graph::new();
        let b = ex.bind(&mut g, true);
        let xi = g.constant(Tensor::new([t, 1], x.clone()).unwrap());
        let z = ex.forward(&mut g, &b, xi).unwrap();
        let p = g.constant(Tensor::vector(proj.clone()));
        let m = g.mul(z, p).unwrap();
        let l = g.sum(m).unwrap();
        g.backward(l).unwrap();
        let analytic: Vec<Vec<f64>> = b.nodes().iter().map(|n| g.grad(*n).unwrap().to_vec()).collect();

        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for (k, grads) in analytic.iter().enumerate() {
            for _ in 0..3 {
                let i = r.random_range(0..grads.len());
                let mut plus = ex.clone();
                plus.params_mut()[k].value.data_mut()[i] += H;
                let mut minus = ex.clone();
                minus.params_mut()[k].value.data_mut()[i] -= H;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * H);
                diff += (grads[i] - numeric).powi(2);
                na += grads[i].powi(2);
                nn += numeric.powi(2);
            }
        }
        diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-12)
    });
}

pub fn gradients_accumulate_over_reuse() {
    let mut g = Graph::new();
    let a = g.variable(Tensor::vector(vec![1.0, -2.0]));
    let s = g.mul(a, a).unwrap();
    let t = g.add(s, a).unwrap();
    let l = g.sum(t).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(a).unwrap(), &[3.0, -3.0]);
}

/// Every finite-difference suite above, by name.
pub const ALL: &[(&str, fn())] = &[
    ("elementwise_binary", elementwise_binary),
    ("scale_square_abs_relu", scale_square_abs_relu),
    ("matmul_transpose_bias", matmul_transpose_bias),
    ("softmax_and_layer_norm", softmax_and_layer_norm),
    ("reductions", reductions),
    ("shape_ops", shape_ops),
    ("spectral_ops", spectral_ops),
    ("convolutions", convolutions),
    ("satl_components", satl_components),
    ("perceptual_loss_through_transformer", perceptual_loss_through_transformer),
    ("extractor_input_gradient", extractor_input_gradient),
    ("parameter_gradients_through_transformer", parameter_gradients_through_transformer),
];
