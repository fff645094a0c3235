use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::{lit, Scalar};

use super::PreprocessParams;

/// The sparse system `(I + lambda * A) s = i` on a pixel grid.
///
/// `A` is the graph Laplacian with edge weights
/// `w = (|dl|^alpha + eps)^-1` taken from the log-luminance `l = ln(i + eps)`.
#[derive(Debug, Clone)]
pub struct WlsSystem<T> {
    pub height: usize,
    pub width: usize,
    pub lambda: T,
    /// Weight between `(r, c)` and `(r, c + 1)`, stored `height x (width - 1)`.
    pub horizontal: Vec<T>,
    /// Weight between `(r, c)` and `(r + 1, c)`, stored `(height - 1) x width`.
    pub vertical: Vec<T>,
}

impl<T: Scalar> WlsSystem<T> {
    pub fn new(img: &Grid<T>, params: &PreprocessParams) -> Result<Self> {
        if img.as_slice().iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::Contract(
                "WLS input must be finite and nonnegative (normalize first)".into(),
            ));
        }
        let (h, w) = img.shape();
        let eps = lit::<T>(params.epsilon);
        let alpha = lit::<T>(params.alpha);
        let log_lum = img.map(|v| (v + eps).ln());
        let weight = |d: T| T::one() / (d.abs().powf(alpha) + eps);
        let mut horizontal = Vec::with_capacity(h * w.saturating_sub(1));
        for r in 0..h {
            for c in 0..w.saturating_sub(1) {
                horizontal.push(weight(log_lum.get(r, c + 1) - log_lum.get(r, c)));
            }
        }
        let mut vertical = Vec::with_capacity(h.saturating_sub(1) * w);
        for r in 0..h.saturating_sub(1) {
            for c in 0..w {
                vertical.push(weight(log_lum.get(r + 1, c) - log_lum.get(r, c)));
            }
        }
        Ok(Self {
            height: h,
            width: w,
            lambda: lit(params.lambda_smooth),
            horizontal,
            vertical,
        })
    }

    #[inline]
    fn wx(&self, r: usize, c: usize) -> T {
        self.horizontal[r * (self.width - 1) + c]
    }

    #[inline]
    fn wy(&self, r: usize, c: usize) -> T {
        self.vertical[r * self.width + c]
    }

    /// Diagonal of `I + lambda * A`.
    pub fn diagonal(&self) -> Vec<T> {
        let (h, w) = (self.height, self.width);
        let mut d = vec![T::zero(); h * w];
        for r in 0..h {
            for c in 0..w {
                let mut s = T::zero();
                if c > 0 {
                    s += self.wx(r, c - 1);
                }
                if c + 1 < w {
                    s += self.wx(r, c);
                }
                if r > 0 {
                    s += self.wy(r - 1, c);
                }
                if r + 1 < h {
                    s += self.wy(r, c);
                }
                d[r * w + c] = T::one() + self.lambda * s;
            }
        }
        d
    }

    /// `y = (I + lambda * A) x`.
    pub fn apply(&self, x: &[T], y: &mut [T]) {
        let (h, w) = (self.height, self.width);
        y.copy_from_slice(x);
        for r in 0..h {
            for c in 0..w.saturating_sub(1) {
                let i = r * w + c;
                let f = self.lambda * self.wx(r, c) * (x[i] - x[i + 1]);
                y[i] += f;
                y[i + 1] -= f;
            }
        }
        for r in 0..h.saturating_sub(1) {
            for c in 0..w {
                let i = r * w + c;
                let f = self.lambda * self.wy(r, c) * (x[i] - x[i + w]);
                y[i] += f;
                y[i + w] -= f;
            }
        }
    }

    /// Dense row-major copy of the matrix, for small-instance checks.
    pub fn to_dense(&self) -> Vec<T> {
        let n = self.height * self.width;
        let mut m = vec![T::zero(); n * n];
        let mut e = vec![T::zero(); n];
        let mut col = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            self.apply(&e, &mut col);
            for i in 0..n {
                m[i * n + j] = col[i];
            }
            e[j] = T::zero();
        }
        m
    }

    /// Jacobi-preconditioned conjugate gradient, started from `b`.
    pub fn solve(&self, b: &[T], tolerance: f64, max_iterations: usize) -> Result<Vec<T>> {
        let n = b.len();
        let diag = self.diagonal();
        let mut x = b.to_vec();
        let mut r = vec![T::zero(); n];
        self.apply(&x, &mut r);
        for (ri, &bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let b_norm = norm(b);
        if b_norm == T::zero() {
            return Ok(vec![T::zero(); n]);
        }
        // f32 cannot reach residuals far below its own epsilon
        let tol = lit::<T>(tolerance).max(T::epsilon() * lit(10.0));
        let target = tol * b_norm;
        if norm(&r) <= target {
            return Ok(x);
        }
        let mut z: Vec<T> = r.iter().zip(&diag).map(|(&ri, &d)| ri / d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![T::zero(); n];
        for it in 1..=max_iterations {
            self.apply(&p, &mut ap);
            let step = rz / dot(&p, &ap);
            for i in 0..n {
                x[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            let rn = norm(&r);
            if rn <= target {
                return Ok(x);
            }
            if !rn.is_finite() {
                return Err(Error::Solver {
                    iterations: it,
                    residual: f64::NAN,
                });
            }
            for i in 0..n {
                z[i] = r[i] / diag[i];
            }
            let rz_next = dot(&r, &z);
            let ratio = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + ratio * p[i];
            }
        }
        Err(Error::Solver {
            iterations: max_iterations,
            residual: (norm(&r) / b_norm).to_f64_lossy(),
        })
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Edge-preserving smoothing of a nonnegative (normalized) image.
pub fn wls_smooth<T: Scalar>(img: &Grid<T>, params: &PreprocessParams) -> Result<Grid<T>> {
    let system = WlsSystem::new(img, params)?;
    let s = system.solve(img.as_slice(), params.solver_tolerance, params.max_iterations)?;
    Grid::from_vec(img.height(), img.width(), s)
}
