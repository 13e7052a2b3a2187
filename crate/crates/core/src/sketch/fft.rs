//! Iterative radix-2 complex FFT on split real/imaginary `f64` buffers.

use std::f64::consts::PI;

use crate::error::{config, Result};

/// Precomputed bit-reversal permutation and twiddles for one power-of-two size.
#[derive(Clone, Debug)]
pub struct FftPlan {
    n: usize,
    bitrev: Vec<u32>,
    // exp(-2 pi i k / n) for k in 0..n/2
    tw_re: Vec<f64>,
    tw_im: Vec<f64>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(config(format!("FFT size {n} is not a power of two")));
        }
        let bits = n.trailing_zeros();
        let bitrev = (0..n as u32)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (32 - bits) })
            .collect();
        let half = n / 2;
        let (tw_re, tw_im) = (0..half)
            .map(|k| {
                let ang = -2.0 * PI * k as f64 / n as f64;
                (ang.cos(), ang.sin())
            })
            .unzip();
        Ok(Self {
            n,
            bitrev,
            tw_re,
            tw_im,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, re: &mut [f64], im: &mut [f64]) {
        self.transform(re, im, false);
    }

    /// Inverse transform including the `1/n` normalisation.
    pub fn inverse(&self, re: &mut [f64], im: &mut [f64]) {
        self.transform(re, im, true);
        let s = 1.0 / self.n as f64;
        re.iter_mut().for_each(|x| *x *= s);
        im.iter_mut().for_each(|x| *x *= s);
    }

    fn transform(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        let n = self.n;
        assert!(re.len() == n && im.len() == n, "buffer length != FFT size");
        for i in 0..n {
            let j = self.bitrev[i] as usize;
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let conj = if inverse { -1.0 } else { 1.0 };
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let stride = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let wr = self.tw_re[k * stride];
                    let wi = conj * self.tw_im[k * stride];
                    let u = start + k;
                    let v = u + half;
                    let tr = wr * re[v] - wi * im[v];
                    let ti = wr * im[v] + wi * re[v];
                    re[v] = re[u] - tr;
                    im[v] = im[u] - ti;
                    re[u] += tr;
                    im[u] += ti;
                }
            }
            size <<= 1;
        }
    }
}
