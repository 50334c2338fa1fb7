//! Direct-summation kernel sums over weighted point sources.
//!
//! Sums run in a fixed order with four interleaved accumulators, so each
//! target's value is bit-reproducible regardless of how targets are split
//! across workers.

use crate::kernels::KernelSpec;

const LANES: usize = 4;

/// Weighted sources in structure-of-arrays layout.
#[derive(Debug, Clone, Default)]
pub(crate) struct Sources {
    dim: usize,
    coords: [Vec<f64>; 3],
    weights: Vec<f64>,
}

impl Sources {
    pub fn new(dim: usize) -> Self {
        Sources {
            dim,
            ..Default::default()
        }
    }

    pub fn push(&mut self, p: &[f64], w: f64) {
        for k in 0..self.dim {
            self.coords[k].push(p[k]);
        }
        self.weights.push(w);
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    /// `Σ_s w_s (q - y_s) / |q - y_s|ⁿ` over `range`, skipping coincident points.
    fn radial_range(&self, q: &[f64], lo: usize, hi: usize, out: &mut [f64; 3]) {
        let w = &self.weights[lo..hi];
        let mut acc = [[0.0f64; LANES]; 3];
        match self.dim {
            2 => {
                let (xs, ys) = (&self.coords[0][lo..hi], &self.coords[1][lo..hi]);
                let (qx, qy) = (q[0], q[1]);
                let body = |acc: &mut [[f64; LANES]; 3], l: usize, i: usize| {
                    let dx = qx - xs[i];
                    let dy = qy - ys[i];
                    let r2 = dx * dx + dy * dy;
                    let s = if r2 > 0.0 { w[i] / r2 } else { 0.0 };
                    acc[0][l] += dx * s;
                    acc[1][l] += dy * s;
                };
                let full = w.len() / LANES * LANES;
                for base in (0..full).step_by(LANES) {
                    for l in 0..LANES {
                        body(&mut acc, l, base + l);
                    }
                }
                for (l, i) in (full..w.len()).enumerate() {
                    body(&mut acc, l, i);
                }
            }
            3 => {
                let (xs, ys, zs) = (&self.coords[0][lo..hi], &self.coords[1][lo..hi], &self.coords[2][lo..hi]);
                let (qx, qy, qz) = (q[0], q[1], q[2]);
                let body = |acc: &mut [[f64; LANES]; 3], l: usize, i: usize| {
                    let dx = qx - xs[i];
                    let dy = qy - ys[i];
                    let dz = qz - zs[i];
                    let r2 = dx * dx + dy * dy + dz * dz;
                    let s = if r2 > 0.0 { w[i] / (r2 * r2.sqrt()) } else { 0.0 };
                    acc[0][l] += dx * s;
                    acc[1][l] += dy * s;
                    acc[2][l] += dz * s;
                };
                let full = w.len() / LANES * LANES;
                for base in (0..full).step_by(LANES) {
                    for l in 0..LANES {
                        body(&mut acc, l, base + l);
                    }
                }
                for (l, i) in (full..w.len()).enumerate() {
                    body(&mut acc, l, i);
                }
            }
            _ => unreachable!("sources are 2- or 3-dimensional"),
        }
        for k in 0..self.dim {
            let a = &acc[k];
            out[k] += (a[0] + a[1]) + (a[2] + a[3]);
        }
    }

    fn generic_range(&self, kernel: &KernelSpec, q: &[f64], lo: usize, hi: usize, out: &mut [f64]) {
        let n = self.dim;
        let mut d = [0.0; 3];
        let mut k = [0.0; 3];
        for i in lo..hi {
            let mut r2 = 0.0;
            for c in 0..n {
                d[c] = q[c] - self.coords[c][i];
                r2 += d[c] * d[c];
            }
            if r2 == 0.0 {
                continue;
            }
            kernel.eval_into(&d[..n], &mut k[..n]);
            for c in 0..n {
                out[c] += self.weights[i] * k[c];
            }
        }
    }

    /// `Σ_s w_s k(q - y_s)`, omitting source `skip` and coincident points.
    /// Writes `n` components into `out`.
    pub fn kernel_sum(&self, kernel: &KernelSpec, q: &[f64], skip: Option<usize>, out: &mut [f64]) {
        let n = self.dim;
        let ranges = match skip {
            Some(s) if s < self.len() => [(0, s), (s + 1, self.len())],
            _ => [(0, self.len()), (0, 0)],
        };
        out[..n].iter_mut().for_each(|v| *v = 0.0);
        match kernel.radial_form() {
            Some((scale, rotated)) => {
                let mut a = [0.0; 3];
                for (lo, hi) in ranges {
                    if hi > lo {
                        self.radial_range(q, lo, hi, &mut a);
                    }
                }
                if rotated {
                    out[0] = -scale * a[1];
                    out[1] = scale * a[0];
                    if n == 3 {
                        out[2] = 0.0;
                    }
                } else {
                    for c in 0..n {
                        out[c] = scale * a[c];
                    }
                }
            }
            None => {
                for (lo, hi) in ranges {
                    self.generic_range(kernel, q, lo, hi, out);
                }
            }
        }
    }

    /// Excised derivative-kernel sums `Σ_{|q-y|>ε} w P(q - y)` with
    /// `P = ∂_i k_j`, returning the sums at `ε` and at `2ε`.
    pub fn pv_sum(&self, kernel: &KernelSpec, i: usize, j: usize, q: &[f64], eps: f64) -> (f64, f64) {
        let n = self.dim;
        let (e2, e2x) = (eps * eps, 4.0 * eps * eps);
        let (mut inner, mut band) = (0.0, 0.0);
        let mut d = [0.0; 3];
        for s in 0..self.len() {
            let mut r2 = 0.0;
            for c in 0..n {
                d[c] = q[c] - self.coords[c][s];
                r2 += d[c] * d[c];
            }
            if r2 <= e2 {
                continue;
            }
            let v = self.weights[s] * kernel.grad_unchecked(i, j, &d[..n]);
            if r2 <= e2x {
                band += v;
            } else {
                inner += v;
            }
        }
        (inner + band, inner)
    }
}
