//! Quadrature on the unit circle and unit sphere, and angular integrals of
//! homogeneous kernels over lattice cells.

use std::f64::consts::PI;

use gauss_quad::GaussLegendre;

use crate::error::{Error, Result};

/// A set of unit directions with surface weights.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub dim: usize,
    /// Flattened unit vectors, `dim` entries per node.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    /// Composite trapezoid rule with `order` equispaced nodes (n = 2), or a
    /// Gauss-Legendre (in cos θ, `order` nodes) × trapezoid (in φ, `2·order`
    /// nodes) product rule (n = 3).
    pub fn new(dim: usize, order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::domain("sphere quadrature order must be at least 2"));
        }
        match dim {
            2 => {
                let w = 2.0 * PI / order as f64;
                let mut nodes = Vec::with_capacity(2 * order);
                for k in 0..order {
                    let th = 2.0 * PI * k as f64 / order as f64;
                    nodes.push(th.cos());
                    nodes.push(th.sin());
                }
                Ok(SphereRule {
                    dim,
                    nodes,
                    weights: vec![w; order],
                })
            }
            3 => {
                let gl = GaussLegendre::new(order)
                    .map_err(|e| Error::Numerical(format!("Gauss-Legendre setup failed: {e}")))?;
                let nphi = 2 * order;
                let wphi = 2.0 * PI / nphi as f64;
                let mut nodes = Vec::with_capacity(3 * order * nphi);
                let mut weights = Vec::with_capacity(order * nphi);
                for &(z, wz) in gl.as_node_weight_pairs() {
                    let s = (1.0 - z * z).max(0.0).sqrt();
                    for k in 0..nphi {
                        let ph = 2.0 * PI * (k as f64 + 0.5) / nphi as f64;
                        nodes.extend_from_slice(&[s * ph.cos(), s * ph.sin(), z]);
                        weights.push(wz * wphi);
                    }
                }
                Ok(SphereRule {
                    dim,
                    nodes,
                    weights,
                })
            }
            _ => Err(Error::domain(format!("no sphere rule for dimension {dim}"))),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.nodes
            .chunks_exact(self.dim)
            .zip(&self.weights)
            .map(|(s, w)| w * f(s))
            .sum()
    }
}

/// Distance from an interior point to the boundary of an axis-aligned box
/// along the unit direction `dir`. `lo`/`hi` are the box faces relative to
/// the point, so `lo[k] <= 0 <= hi[k]`.
fn exit_distance(dir: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut t = f64::INFINITY;
    for k in 0..dir.len() {
        if dir[k] > 0.0 {
            t = t.min(hi[k] / dir[k]);
        } else if dir[k] < 0.0 {
            t = t.min(lo[k] / dir[k]);
        }
    }
    t
}

/// `∫_box K(y) dy` for a kernel homogeneous of degree `-(n-1)`, with the
/// box containing the origin. In polar coordinates the radial integral is
/// elementary, leaving `∫_S K(ω) ρ(ω) dσ(ω)` with `ρ` the exit distance.
///
/// `kernel` writes `K(ω)` (up to `out.len()` components) for a unit `ω`.
pub fn homogeneous_box_integral(
    lo: &[f64],
    hi: &[f64],
    kernel: &dyn Fn(&[f64], &mut [f64]),
    out: &mut [f64],
) -> Result<()> {
    let dim = lo.len();
    for k in 0..dim {
        if !(lo[k] <= 0.0 && hi[k] >= 0.0) {
            return Err(Error::domain("box must contain the evaluation point"));
        }
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut kv = vec![0.0; out.len()];
    match dim {
        2 => {
            // ρ(θ) is smooth between the corner angles; integrate each arc
            // with Gauss-Legendre.
            let mut breaks: Vec<f64> = Vec::with_capacity(6);
            for &x in &[lo[0], hi[0]] {
                for &y in &[lo[1], hi[1]] {
                    if x != 0.0 || y != 0.0 {
                        breaks.push(y.atan2(x).rem_euclid(2.0 * PI));
                    }
                }
            }
            breaks.push(0.0);
            breaks.push(2.0 * PI);
            breaks.sort_by(f64::total_cmp);
            breaks.dedup();
            let gl = GaussLegendre::new(24).map_err(|e| Error::Numerical(e.to_string()))?;
            for w in breaks.windows(2) {
                let (a, b) = (w[0], w[1]);
                if b - a < 1e-15 {
                    continue;
                }
                let half = 0.5 * (b - a);
                let mid = 0.5 * (a + b);
                for &(x, wx) in gl.as_node_weight_pairs() {
                    let th = mid + half * x;
                    let dir = [th.cos(), th.sin()];
                    let rho = exit_distance(&dir, lo, hi);
                    if !rho.is_finite() || rho <= 0.0 {
                        continue;
                    }
                    kernel(&dir, &mut kv);
                    for (o, v) in out.iter_mut().zip(&kv) {
                        *o += wx * half * rho * v;
                    }
                }
            }
        }
        3 => {
            // ρ has kinks along great-circle arcs; a fine product rule is
            // adequate for a single-cell correction.
            let rule = SphereRule::new(3, 96)?;
            for (dir, w) in rule.nodes.chunks_exact(3).zip(&rule.weights) {
                let rho = exit_distance(dir, lo, hi);
                if !rho.is_finite() || rho <= 0.0 {
                    continue;
                }
                kernel(dir, &mut kv);
                for (o, v) in out.iter_mut().zip(&kv) {
                    *o += w * rho * v;
                }
            }
        }
        _ => return Err(Error::domain(format!("no box integral for dimension {dim}"))),
    }
    Ok(())
}
