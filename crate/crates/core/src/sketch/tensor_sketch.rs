use std::sync::Arc;

use rand::Rng;

use super::count_sketch::CountSketch;
use super::fft::FftPlan;
use crate::error::{config, shape, Result};

/// TensorSketch of outer products `u (x) v`: `H(i, j) = h1(i) + h2(j) mod m`,
/// `S(i, j) = s1(i) s2(j)`, computed as a circular convolution of two
/// CountSketches.
#[derive(Clone, Debug)]
pub struct TensorSketch {
    left: CountSketch,
    right: CountSketch,
    fft: Arc<FftPlan>,
}

/// Reusable FFT buffers so the hot path does not allocate.
#[derive(Clone, Debug)]
pub struct TsScratch {
    re: Vec<f64>,
    im: Vec<f64>,
    acc_re: Vec<f64>,
    acc_im: Vec<f64>,
}

impl TsScratch {
    pub fn new(m: usize) -> Self {
        Self {
            re: vec![0.0; m],
            im: vec![0.0; m],
            acc_re: vec![0.0; m],
            acc_im: vec![0.0; m],
        }
    }

    pub fn byte_size(&self) -> usize {
        4 * self.re.len() * std::mem::size_of::<f64>()
    }
}

impl TensorSketch {
    pub fn new(left: CountSketch, right: CountSketch) -> Result<Self> {
        let m = left.sketch_dim();
        if right.sketch_dim() != m {
            return Err(config("left and right CountSketch dimensions differ"));
        }
        let fft = Arc::new(FftPlan::new(m)?);
        Ok(Self { left, right, fft })
    }

    pub fn sample<R: Rng + ?Sized>(d_out: usize, d_in: usize, m: usize, rng: &mut R) -> Result<Self> {
        if !m.is_power_of_two() {
            return Err(config(format!("sketch dimension {m} is not a power of two")));
        }
        let left = CountSketch::sample(d_out, m, rng)?;
        let right = CountSketch::sample(d_in, m, rng)?;
        Self::new(left, right)
    }

    pub fn sketch_dim(&self) -> usize {
        self.fft.len()
    }

    pub fn left(&self) -> &CountSketch {
        &self.left
    }

    pub fn right(&self) -> &CountSketch {
        &self.right
    }

    /// Combined bucket `H(i, j)`.
    pub fn bucket(&self, i: usize, j: usize) -> usize {
        (self.left.bucket(i) + self.right.bucket(j)) % self.sketch_dim()
    }

    /// Combined sign `S(i, j)`.
    pub fn sign(&self, i: usize, j: usize) -> f64 {
        self.left.sign(i) * self.right.sign(j)
    }

    pub fn pair(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let m = self.sketch_dim();
        let mut scratch = TsScratch::new(m);
        let mut out = vec![0.0; m];
        self.begin(&mut scratch);
        self.push_pair(u, v, &mut scratch)?;
        self.finish(&mut scratch, &mut out);
        Ok(out)
    }

    /// `sum_j TS(u_j, v_j)` without forming any `d_out x d_in` matrix.
    pub fn outer_sum(&self, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<f64>> {
        let m = self.sketch_dim();
        let mut out = vec![0.0; m];
        if pairs.is_empty() {
            return Ok(out);
        }
        let mut scratch = TsScratch::new(m);
        self.begin(&mut scratch);
        for (u, v) in pairs {
            self.push_pair(u, v, &mut scratch)?;
        }
        self.finish(&mut scratch, &mut out);
        Ok(out)
    }

    /// `out += sum_r TS(left_rows[r], right_rows[r])` for row-major factor
    /// blocks (`rows x d_out` and `rows x d_in`).
    pub fn accumulate_rows(
        &self,
        left_rows: &[f64],
        right_rows: &[f64],
        rows: usize,
        scratch: &mut TsScratch,
        out: &mut [f64],
    ) -> Result<()> {
        if rows == 0 {
            return Ok(());
        }
        if !left_rows.len().is_multiple_of(rows) || !right_rows.len().is_multiple_of(rows) {
            return Err(shape("factor blocks are not divisible by the row count"));
        }
        let d_out = left_rows.len() / rows;
        let d_in = right_rows.len() / rows;
        self.begin(scratch);
        for r in 0..rows {
            self.push_pair(
                &left_rows[r * d_out..(r + 1) * d_out],
                &right_rows[r * d_in..(r + 1) * d_in],
                scratch,
            )?;
        }
        self.finish(scratch, out);
        Ok(())
    }

    fn begin(&self, scratch: &mut TsScratch) {
        scratch.acc_re.fill(0.0);
        scratch.acc_im.fill(0.0);
    }

    /// Adds `FFT(CS1 u) * FFT(CS2 v)` to the frequency-domain accumulator.
    /// Both real transforms come out of a single complex FFT of
    /// `CS1 u + i CS2 v`.
    fn push_pair(&self, u: &[f64], v: &[f64], scratch: &mut TsScratch) -> Result<()> {
        let m = self.sketch_dim();
        scratch.re.fill(0.0);
        scratch.im.fill(0.0);
        self.left.accumulate(u, &mut scratch.re)?;
        self.right.accumulate(v, &mut scratch.im)?;
        self.fft.forward(&mut scratch.re, &mut scratch.im);
        // With Z = FFT(a + ib): FFT(a)[k] FFT(b)[k] = (Z[k]^2 - conj(Z[-k])^2) / 4i.
        for k in 0..m {
            let nk = (m - k) & (m - 1);
            let (ar, ai) = (scratch.re[k], scratch.im[k]);
            let (br, bi) = (scratch.re[nk], -scratch.im[nk]);
            let dr = (ar * ar - ai * ai) - (br * br - bi * bi);
            let di = 2.0 * (ar * ai - br * bi);
            scratch.acc_re[k] += 0.25 * di;
            scratch.acc_im[k] -= 0.25 * dr;
        }
        Ok(())
    }

    fn finish(&self, scratch: &mut TsScratch, out: &mut [f64]) {
        self.fft.inverse(&mut scratch.acc_re, &mut scratch.acc_im);
        for (o, &x) in out.iter_mut().zip(&scratch.acc_re) {
            *o += x;
        }
    }

    /// The linear operator on a dense `d_out x d_in` matrix (row-major),
    /// evaluated term by term. O(d_out d_in).
    pub fn apply_dense(&self, matrix: &[f64], d_out: usize, d_in: usize) -> Result<Vec<f64>> {
        if matrix.len() != d_out * d_in {
            return Err(shape(format!(
                "{} values for a {d_out}x{d_in} matrix",
                matrix.len()
            )));
        }
        if d_out > self.left.domain_size() || d_in > self.right.domain_size() {
            return Err(config(format!(
                "{d_out}x{d_in} matrix exceeds hash domains {}x{}",
                self.left.domain_size(),
                self.right.domain_size()
            )));
        }
        let m = self.sketch_dim();
        let mut out = vec![0.0; m];
        for i in 0..d_out {
            let (bi, si) = (self.left.bucket(i), self.left.sign(i));
            let row = &matrix[i * d_in..(i + 1) * d_in];
            for (j, &x) in row.iter().enumerate() {
                let b = (bi + self.right.bucket(j)) & (m - 1);
                out[b] += si * self.right.sign(j) * x;
            }
        }
        Ok(out)
    }
}

/// TensorSketch of a single outer product.
pub fn tensor_sketch_pair(u: &[f64], v: &[f64], maps: &TensorSketch) -> Result<Vec<f64>> {
    maps.pair(u, v)
}

/// Sum of TensorSketches of outer products.
pub fn tensor_sketch_outer_sum(
    pairs: &[(Vec<f64>, Vec<f64>)],
    maps: &TensorSketch,
) -> Result<Vec<f64>> {
    maps.outer_sum(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basis(n: usize, i: usize) -> Vec<f64> {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        e
    }

    #[test]
    fn basis_pair_hits_one_bucket() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ts = TensorSketch::sample(5, 7, 8, &mut rng).unwrap();
        for i in 0..5 {
            for j in 0..7 {
                let out = ts.pair(&basis(5, i), &basis(7, j)).unwrap();
                for (a, &x) in out.iter().enumerate() {
                    let expect = if a == ts.bucket(i, j) { ts.sign(i, j) } else { 0.0 };
                    assert!((x - expect).abs() < 1e-12, "({i},{j}) bucket {a}: {x}");
                }
            }
        }
    }

    #[test]
    fn zero_pair_and_empty_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let ts = TensorSketch::sample(3, 3, 4, &mut rng).unwrap();
        assert!(ts.pair(&[0.0; 3], &[0.0; 3]).unwrap().iter().all(|&x| x == 0.0));
        assert_eq!(ts.outer_sum(&[]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn non_power_of_two_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        assert!(matches!(
            TensorSketch::sample(3, 3, 6, &mut rng),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn negated_pairs_cancel() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let ts = TensorSketch::sample(4, 3, 8, &mut rng).unwrap();
        let u = vec![0.3, -1.2, 2.0, 0.7];
        let v = vec![1.0, -0.5, 0.25];
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        let out = ts
            .outer_sum(&[(u.clone(), v.clone()), (neg, v.clone()), (u, v)])
            .unwrap();
        let single = ts.pair(&[0.3, -1.2, 2.0, 0.7], &[1.0, -0.5, 0.25]).unwrap();
        for (a, b) in out.iter().zip(&single) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
