//! Real-input DFT, its adjoint, and dominant-bin selection.
//!
//! Power-of-two lengths go through an iterative radix-2 FFT; every other
//! length uses a direct DFT over an exact twiddle table indexed by
//! `(t·f) mod T`, which keeps the fallback accurate at the horizons used in
//! forecasting (96, 192, 336, 720).

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

pub use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

/// One-sided spectrum of a real signal: bins `0..=T/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bins: Vec<Complex64>,
    source_length: usize,
}

impl Spectrum {
    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn source_length(&self) -> usize {
        self.source_length
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.norm()).collect()
    }
}

/// Number of one-sided bins for a length-`t` real signal.
pub fn bin_count(t: usize) -> usize {
    t / 2 + 1
}

/// Sorted set of bin indices selected as dominant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DominantSet {
    indices: Vec<usize>,
}

impl DominantSet {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn contains(&self, bin: usize) -> bool {
        self.indices.binary_search(&bin).is_ok()
    }

    /// 0/1 indicator over `len` bins.
    pub fn mask(&self, len: usize) -> Vec<f64> {
        let mut m = vec![0.0; len];
        for &i in &self.indices {
            if i < len {
                m[i] = 1.0;
            }
        }
        m
    }
}

fn twiddles(n: usize, sign: f64) -> Vec<Complex64> {
    (0..n)
        .map(|j| {
            let a = sign * 2.0 * PI * j as f64 / n as f64;
            Complex64::new(libm::cos(a), libm::sin(a))
        })
        .collect()
}

/// In-place radix-2 transform, `sign = -1` forward and `+1` unnormalized inverse.
fn fft_pow2(buf: &mut [Complex64], sign: f64) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    let bits = n.trailing_zeros();
    if bits == 0 {
        return;
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let tw = twiddles(n, sign);
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for j in 0..half {
                let w = tw[j * step];
                let u = buf[start + j];
                let v = buf[start + j + half] * w;
                buf[start + j] = u + v;
                buf[start + j + half] = u - v;
            }
        }
        len <<= 1;
    }
}

fn check_signal(signal: &[f64]) -> Result<()> {
    if signal.len() < 2 {
        return Err(invalid("rfft requires at least 2 samples"));
    }
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(())
}

/// `bins[f] = Σ_t signal[t]·exp(−2πi·t·f/T)` for `f = 0..=T/2`.
pub fn rfft(signal: &[f64]) -> Result<Spectrum> {
    check_signal(signal)?;
    let t = signal.len();
    let nb = bin_count(t);
    let mut bins = if t.is_power_of_two() {
        let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_pow2(&mut buf, -1.0);
        buf.truncate(nb);
        buf
    } else {
        let tw = twiddles(t, -1.0);
        (0..nb)
            .map(|f| signal.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (i, &v)| acc + tw[(i * f) % t] * v))
            .collect()
    };
    bins[0].im = 0.0;
    if t % 2 == 0 {
        bins[nb - 1].im = 0.0;
    }
    Ok(Spectrum { bins, source_length: t })
}

/// Adjoint of [`rfft`] viewed as a real linear map `ℝ^T → ℝ^{2(T/2+1)}`.
///
/// With the pairing `⟨X, c⟩ = Σ_f Re(X_f·conj(c_f))`, the result `s̄`
/// satisfies `⟨rfft(s), c⟩ = ⟨s, s̄⟩`, i.e. `s̄_t = Re Σ_f c_f·exp(2πi·t·f/T)`.
/// Imaginary parts of the DC and Nyquist cotangents are ignored because the
/// corresponding outputs are identically zero.
pub fn rfft_adjoint(cotangent: &[Complex64], t: usize) -> Result<Vec<f64>> {
    if t < 2 {
        return Err(invalid("rfft_adjoint requires T >= 2"));
    }
    let nb = bin_count(t);
    if cotangent.len() != nb {
        return Err(Error::ShapeMismatch {
            op: "rfft_adjoint",
            got: vec![vec![cotangent.len()]],
            expected: alloc::format!("{nb} bins for T={t}"),
        });
    }
    let mut c = cotangent.to_vec();
    c[0].im = 0.0;
    if t % 2 == 0 {
        c[nb - 1].im = 0.0;
    }
    if t.is_power_of_two() {
        let mut buf = vec![Complex64::new(0.0, 0.0); t];
        buf[..nb].copy_from_slice(&c);
        fft_pow2(&mut buf, 1.0);
        Ok(buf.iter().map(|z| z.re).collect())
    } else {
        let tw = twiddles(t, 1.0);
        Ok((0..t).map(|i| c.iter().enumerate().map(|(f, cf)| (cf * tw[(i * f) % t]).re).sum()).collect())
    }
}

/// The `k` bins of largest magnitude; ties resolve toward the lower index and
/// `k` is clamped to the number of bins.
pub fn top_k_bins(reference: &Spectrum, k: usize) -> Result<DominantSet> {
    if k < 1 {
        return Err(invalid("top_k_bins requires k >= 1"));
    }
    let mags = reference.magnitudes();
    let mut order: Vec<usize> = (0..mags.len()).collect();
    order.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]).then(a.cmp(&b)));
    order.truncate(k.min(mags.len()));
    order.sort_unstable();
    Ok(DominantSet { indices: order })
}
