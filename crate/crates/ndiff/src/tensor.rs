//! Dense row-major float32 tensors and the handful of kernels the networks
//! need. Matrix products parallelize over rows with a fixed chunking, so
//! results are bit-identical regardless of thread count.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data length mismatch");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn scalar(v: f32) -> Tensor {
        Tensor { shape: vec![1], data: vec![v] }
    }

    /// Uniform init in [-bound, bound].
    pub fn uniform(shape: &[usize], bound: f32, rng: &mut impl Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    /// Standard normal init via Box-Muller.
    pub fn randn(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal_sample(rng)).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "reshape must preserve element count"
        );
        self.shape = shape.to_vec();
        self
    }

    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() needs a 2-d tensor");
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() needs a 2-d tensor");
        self.shape[1]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
        assert_eq!(self.shape, other.shape, "zip needs matching shapes");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_inplace(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add needs matching shapes");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: f32) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().sum()
    }
}

pub fn normal_sample(rng: &mut impl Rng) -> f32 {
    // Box-Muller; u clamped away from zero.
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let v: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    ((-2.0 * u.ln()).sqrt() * v.cos()) as f32
}

/// Parallelism threshold: below this many multiply-adds, stay serial.
const PAR_FLOP_THRESHOLD: usize = 1 << 16;
/// Fixed row-chunk count for parallel sections, independent of threads.
const PAR_CHUNKS: usize = 32;

fn row_chunks(m: usize) -> usize {
    m.div_ceil(PAR_CHUNKS).max(1)
}

/// C = A (m x k) * B (k x n).
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let (kb, n) = (b.rows(), b.cols());
    assert_eq!(k, kb, "matmul inner dims: {k} vs {kb}");
    let mut out = vec![0.0f32; m * n];
    let ad = a.data();
    let bd = b.data();
    let body = |i: usize, row_out: &mut [f32]| {
        let arow = &ad[i * k..(i + 1) * k];
        for (l, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &bd[l * n..(l + 1) * n];
            for (o, &bv) in row_out.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if m * k * n < PAR_FLOP_THRESHOLD {
        for (i, row_out) in out.chunks_mut(n).enumerate() {
            body(i, row_out);
        }
    } else {
        use rayon::prelude::*;
        let chunk = row_chunks(m);
        out.par_chunks_mut(chunk * n)
            .enumerate()
            .for_each(|(ci, rows)| {
                for (r, row_out) in rows.chunks_mut(n).enumerate() {
                    body(ci * chunk + r, row_out);
                }
            });
    }
    Tensor::from_vec(&[m, n], out)
}

/// C = A^T (k x m -> m x k transposed view) * B; A is (k x m), result (m x n).
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.rows(), a.cols());
    let (kb, n) = (b.rows(), b.cols());
    assert_eq!(k, kb, "matmul_tn inner dims");
    let ad = a.data();
    let bd = b.data();
    // Accumulate per fixed chunk of the k range, then reduce in order.
    use rayon::prelude::*;
    if m * k * n < PAR_FLOP_THRESHOLD {
        let mut out = vec![0.0f32; m * n];
        for l in 0..k {
            let arow = &ad[l * m..(l + 1) * m];
            let brow = &bd[l * n..(l + 1) * n];
            for (i, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let dst = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in dst.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        return Tensor::from_vec(&[m, n], out);
    }
    let chunk = row_chunks(k);
    let partials: Vec<Vec<f32>> = (0..k.div_ceil(chunk))
        .into_par_iter()
        .map(|ci| {
            let mut acc = vec![0.0f32; m * n];
            let lo = ci * chunk;
            let hi = (lo + chunk).min(k);
            for l in lo..hi {
                let arow = &ad[l * m..(l + 1) * m];
                let brow = &bd[l * n..(l + 1) * n];
                for (i, &av) in arow.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    let dst = &mut acc[i * n..(i + 1) * n];
                    for (o, &bv) in dst.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0f32; m * n];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// C = A (m x k) * B^T where B is (n x k); result (m x n).
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let (n, kb) = (b.rows(), b.cols());
    assert_eq!(k, kb, "matmul_nt inner dims");
    let mut out = vec![0.0f32; m * n];
    let ad = a.data();
    let bd = b.data();
    let body = |i: usize, row_out: &mut [f32]| {
        let arow = &ad[i * k..(i + 1) * k];
        for (j, o) in row_out.iter_mut().enumerate() {
            let brow = &bd[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o = acc;
        }
    };
    if m * k * n < PAR_FLOP_THRESHOLD {
        for (i, row_out) in out.chunks_mut(n).enumerate() {
            body(i, row_out);
        }
    } else {
        use rayon::prelude::*;
        let chunk = row_chunks(m);
        out.par_chunks_mut(chunk * n)
            .enumerate()
            .for_each(|(ci, rows)| {
                for (r, row_out) in rows.chunks_mut(n).enumerate() {
                    body(ci * chunk + r, row_out);
                }
            });
    }
    Tensor::from_vec(&[m, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.rows(), a.cols());
        let n = b.cols();
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..k {
                    acc += a.data()[i * k + l] * b.data()[l * n + j];
                }
                out.data_mut()[i * n + j] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for (m, k, n) in [(3, 4, 5), (17, 9, 13), (64, 32, 48), (130, 70, 40)] {
            let a = Tensor::uniform(&[m, k], 1.0, &mut rng);
            let b = Tensor::uniform(&[k, n], 1.0, &mut rng);
            let expect = naive_matmul(&a, &b);
            let got = matmul(&a, &b);
            for (x, y) in got.data().iter().zip(expect.data()) {
                assert!((x - y).abs() < 1e-4);
            }
            // A^T path: build At explicitly.
            let mut at = Tensor::zeros(&[k, m]);
            for i in 0..m {
                for l in 0..k {
                    at.data_mut()[l * m + i] = a.data()[i * k + l];
                }
            }
            let got_tn = matmul_tn(&at, &b);
            for (x, y) in got_tn.data().iter().zip(expect.data()) {
                assert!((x - y).abs() < 1e-4);
            }
            // B^T path.
            let mut bt = Tensor::zeros(&[n, k]);
            for l in 0..k {
                for j in 0..n {
                    bt.data_mut()[j * k + l] = b.data()[l * n + j];
                }
            }
            let got_nt = matmul_nt(&a, &bt);
            for (x, y) in got_nt.data().iter().zip(expect.data()) {
                assert!((x - y).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn matmul_deterministic_across_sizes() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let a = Tensor::uniform(&[200, 64], 1.0, &mut rng);
        let b = Tensor::uniform(&[64, 96], 1.0, &mut rng);
        let x = matmul(&a, &b);
        let y = matmul(&a, &b);
        assert_eq!(x, y);
    }

    #[test]
    fn normal_sampling_moments() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n = 100_000;
        let xs: Vec<f32> = (0..n).map(|_| normal_sample(&mut rng)).collect();
        let mean: f32 = xs.iter().sum::<f32>() / n as f32;
        let var: f32 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f32>() / n as f32;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }
}
