//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

pub mod grad_suite;

use std::f64::consts::PI;

use tsgeo_core::rng::{seeded, uniform_vec, SeededRng};
use tsgeo_core::tensor::{Graph, NodeId, Tensor};
use tsgeo_core::Result;

pub fn rng(seed: u64) -> SeededRng {
    seeded(seed)
}

pub fn rand_tensor(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform_vec(rng, n, 1.0)).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
pub fn rand_away_from_zero(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let mut t = rand_tensor(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

/// O(T²) real DFT straight from the definition, bins `0..=T/2`.
pub fn naive_dft(s: &[f64]) -> Vec<(f64, f64)> {
    let t = s.len();
    (0..=t / 2)
        .map(|f| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &v) in s.iter().enumerate() {
                let a = -2.0 * PI * (f * n) as f64 / t as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            (re, im)
        })
        .collect()
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between the analytic gradient
/// of `build` and a central finite difference, taken over every input.
///
/// `build` must return any node; it is reduced with a fixed random
/// projection so every output entry contributes.
pub fn gradcheck<F>(inputs: &[Tensor], h: f64, seed: u64, build: F) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let scalar = |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
        let out = build(g, ids)?;
        let shape = g.shape(out).to_vec();
        let proj = rand_tensor(&mut rng(seed ^ 0x5eed), &shape);
        let p = g.constant(proj);
        let m = g.mul(out, p)?;
        g.sum(m)
    };
    let eval = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let l = scalar(&mut g, &ids).unwrap();
        g.item(l)
    };
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let l = scalar(&mut g, &ids).unwrap();
    g.backward(l).unwrap();

    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (k, id) in ids.iter().enumerate() {
        let analytic = g.grad(*id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            diff += (analytic[i] - numeric).powi(2);
            na += analytic[i].powi(2);
            nn += numeric.powi(2);
        }
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-12)
}

/// Nested-loop convolution, `x [B,C,H,W]`, `w [O,C,K,K]`.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, pad: usize) -> (Vec<usize>, Vec<f64>) {
    let (bs, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; bs * o * oh * ow];
    for n in 0..bs {
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let r = (i * stride + u) as isize - pad as isize;
                                let s = (j * stride + v) as isize - pad as isize;
                                if r < 0 || s < 0 || r >= h as isize || s >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((n * c + ic) * h + r as usize) * wd + s as usize];
                                acc += xv * w.data()[((oc * c + ic) * kh + u) * kw + v];
                            }
                        }
                    }
                    out[((n * o + oc) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    (vec![bs, o, oh, ow], out)
}

/// Scatter form of the transposed convolution, `w [Ci,Co,K,K]`.
pub fn naive_conv_transpose2d(
    x: &Tensor,
    w: &Tensor,
    b: &[f64],
    stride: usize,
    pad: usize,
    out_pad: (usize, usize),
) -> (Vec<usize>, Vec<f64>) {
    let (bs, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, kh, kw) = (w.shape()[1], w.shape()[2], w.shape()[3]);
    let oh = (h - 1) * stride + kh + out_pad.0 - 2 * pad;
    let ow = (wd - 1) * stride + kw + out_pad.1 - 2 * pad;
    let mut out = vec![0.0; bs * co * oh * ow];
    for n in 0..bs {
        for oc in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    out[((n * co + oc) * oh + i) * ow + j] = b[oc];
                }
            }
        }
        for ic in 0..ci {
            for i in 0..h {
                for j in 0..wd {
                    let xv = x.data()[((n * ci + ic) * h + i) * wd + j];
                    for oc in 0..co {
                        for u in 0..kh {
                            for v in 0..kw {
                                let r = (i * stride + u) as isize - pad as isize;
                                let s = (j * stride + v) as isize - pad as isize;
                                if r < 0 || s < 0 || r >= oh as isize || s >= ow as isize {
                                    continue;
                                }
                                out[((n * co + oc) * oh + r as usize) * ow + s as usize] +=
                                    xv * w.data()[((ic * co + oc) * kh + u) * kw + v];
                            }
                        }
                    }
                }
            }
        }
    }
    (vec![bs, co, oh, ow], out)
}

/// Block-average pooling with partial edge blocks, then population
/// covariance statistics, computed in two explicit passes.
pub fn brute_covariance(x: &[f64], y: &[f64], h: usize, w: usize, window: usize, c2: f64) -> f64 {
    let pool = |img: &[f64]| -> Vec<f64> {
        let mut out = Vec::new();
        let mut r = 0;
        while r < h {
            let mut c = 0;
            while c < w {
                let (mut s, mut n) = (0.0, 0);
                for rr in r..(r + window).min(h) {
                    for cc in c..(c + window).min(w) {
                        s += img[rr * w + cc];
                        n += 1;
                    }
                }
                out.push(s / n as f64);
                c += window;
            }
            r += window;
        }
        out
    };
    let (px, py) = (pool(x), pool(y));
    let n = px.len() as f64;
    let mx = px.iter().sum::<f64>() / n;
    let my = py.iter().sum::<f64>() / n;
    let cov = px.iter().zip(&py).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let vx = px.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n;
    let vy = py.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n;
    (cov + c2) / (vx.sqrt() * vy.sqrt() + c2)
}

/// Reference rendering: per column, intensity `max(0, (d+1−|row−center|)/(d+1))`.
pub fn brute_render(values: &[f64], h: usize, d: usize) -> Vec<f64> {
    let w = values.len();
    let mut px = vec![0.0; h * w];
    for (t, &v) in values.iter().enumerate() {
        let center = ((1.0 - v) * (h - 1) as f64).round() as isize;
        for r in 0..h {
            let dist = (r as isize - center).unsigned_abs();
            if dist <= d {
                px[r * w + t] = (d + 1 - dist) as f64 / (d + 1) as f64;
            }
        }
    }
    px
}
