//! Dense linear algebra, elementwise nonlinearities and seeded random streams.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                what: "matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Computes `W x + b`.
pub fn affine(w: &Mat, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if w.cols != x.len() {
        return Err(Error::Dimension {
            what: "affine input",
            expected: w.cols,
            got: x.len(),
        });
    }
    if w.rows != b.len() {
        return Err(Error::Dimension {
            what: "affine bias",
            expected: w.rows,
            got: b.len(),
        });
    }
    let mut out = vec![0.0; w.rows];
    affine_into(w, b, x, &mut out);
    Ok(out)
}

/// Unchecked `W x + b` into a caller-provided buffer. Dimensions must agree.
pub(crate) fn affine_into(w: &Mat, b: &[f64], x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, b.len());
    debug_assert_eq!(w.rows, out.len());
    for (r, (o, bias)) in out.iter_mut().zip(b).enumerate() {
        *o = dot(w.row(r), x) + bias;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent partial sums let the loop pipeline; the summation
    // order is fixed, so results stay reproducible
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn tanh_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// Purpose label of a random stream. Each role draws from its own
/// independent ChaCha stream derived from the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Env = 1,
    PolicyInit = 2,
    ValueInit = 3,
    Action = 4,
    Eval = 5,
    Test = 99,
}

/// Seedable, platform-independent random stream.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
    stream_id: u64,
}

impl Rng {
    pub fn new(seed: u64, stream: Stream) -> Self {
        Self::with_stream_id(seed, stream as u64)
    }

    pub fn with_stream_id(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self { inner, stream_id }
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Standard normal via the Box–Muller transform. Each call consumes two
    /// uniforms and discards the sine branch so the stream position after a
    /// call never depends on earlier calls.
    pub fn standard_normal(&mut self) -> f64 {
        // 1 - U lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Draws `mean + std ⊙ z` with `z` i.i.d. standard normal.
pub fn gaussian_sample(rng: &mut Rng, mean: &[f64], std: &[f64]) -> Vec<f64> {
    assert_eq!(mean.len(), std.len(), "mean/std length mismatch");
    mean.iter()
        .zip(std)
        .map(|(&m, &s)| {
            assert!(s > 0.0, "gaussian_sample requires positive std, got {s}");
            m + s * rng.standard_normal()
        })
        .collect()
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
