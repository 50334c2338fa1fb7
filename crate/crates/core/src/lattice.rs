//! Regular axis-aligned lattices in 1, 2 or 3 dimensions.
//!
//! Node coordinates are stored as integer offsets times the spacing, so a
//! lattice centred on the origin is exactly symmetric in floating point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    dim: usize,
    spacing: f64,
    /// Node count along each axis.
    shape: Vec<usize>,
    /// Integer coordinate of the first node along each axis.
    offset: Vec<i64>,
}

impl Lattice {
    pub fn new(spacing: f64, shape: Vec<usize>, offset: Vec<i64>) -> Result<Self> {
        let dim = shape.len();
        if !(1..=3).contains(&dim) || offset.len() != dim {
            return Err(Error::domain(format!(
                "lattice dimension must be 1, 2 or 3 with matching offsets (got shape {shape:?}, offset {offset:?})"
            )));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::domain(format!("lattice spacing must be positive, got {spacing}")));
        }
        if shape.iter().any(|&s| s == 0) {
            return Err(Error::domain("lattice has an empty axis"));
        }
        Ok(Lattice {
            dim,
            spacing,
            shape,
            offset,
        })
    }

    /// Lattice with nodes `-half..=half` (in units of `spacing`) along every axis.
    pub fn centered(dim: usize, spacing: f64, half: usize) -> Result<Self> {
        let h = half as i64;
        Lattice::new(spacing, vec![2 * half + 1; dim], vec![-h; dim])
    }

    /// Smallest centred lattice whose nodes cover `[-extent, extent]^dim`.
    pub fn covering(dim: usize, spacing: f64, extent: f64) -> Result<Self> {
        if !(extent >= 0.0) {
            return Err(Error::domain("lattice extent must be nonnegative"));
        }
        let half = (extent / spacing - 1e-9).ceil().max(0.0) as usize;
        Lattice::centered(dim, spacing, half)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn offset(&self) -> &[i64] {
        &self.offset
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume of one cell, `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Row-major flat index (last axis fastest).
    pub fn flat(&self, idx: &[usize]) -> usize {
        let mut f = 0;
        for (k, &i) in idx.iter().enumerate() {
            f = f * self.shape[k] + i;
        }
        f
    }

    /// Flat index of the node displaced by `step` from `idx`, if inside.
    pub fn neighbor(&self, idx: &[usize], step: &[i64]) -> Option<usize> {
        let mut f = 0usize;
        for k in 0..self.dim {
            let j = idx[k] as i64 + step[k];
            if j < 0 || j >= self.shape[k] as i64 {
                return None;
            }
            f = f * self.shape[k] + j as usize;
        }
        Some(f)
    }

    pub fn multi(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for k in (0..self.dim).rev() {
            idx[k] = flat % self.shape[k];
            flat /= self.shape[k];
        }
        idx
    }

    /// Integer lattice coordinate of the node along each axis.
    pub fn integer_coords(&self, flat: usize) -> [i64; 3] {
        let idx = self.multi(flat);
        let mut out = [0i64; 3];
        for k in 0..self.dim {
            out[k] = self.offset[k] + idx[k] as i64;
        }
        out
    }

    pub fn coord(&self, flat: usize, out: &mut [f64]) {
        let ic = self.integer_coords(flat);
        for k in 0..self.dim {
            out[k] = ic[k] as f64 * self.spacing;
        }
    }

    /// All node coordinates, flattened point-major.
    pub fn points(&self) -> Vec<f64> {
        let mut pts = vec![0.0; self.len() * self.dim];
        for (f, chunk) in pts.chunks_exact_mut(self.dim).enumerate() {
            self.coord(f, chunk);
        }
        pts
    }

    /// Flat index of the node nearest to `x`, or `None` when `x` lies outside
    /// the half-cell-padded lattice box.
    pub fn nearest_node(&self, x: &[f64]) -> Option<usize> {
        let mut f = 0usize;
        for k in 0..self.dim {
            let j = (x[k] / self.spacing).round() as i64 - self.offset[k];
            if j < 0 || j >= self.shape[k] as i64 {
                return None;
            }
            f = f * self.shape[k] + j as usize;
        }
        Some(f)
    }

    /// Whether the node is within `layers` of the lattice boundary.
    pub fn is_margin(&self, flat: usize, layers: usize) -> bool {
        let idx = self.multi(flat);
        (0..self.dim).any(|k| idx[k] < layers || idx[k] + layers >= self.shape[k])
    }

    /// Half-width of the lattice box (largest |coordinate| along any axis).
    pub fn extent(&self) -> f64 {
        (0..self.dim)
            .map(|k| {
                let lo = self.offset[k].abs();
                let hi = (self.offset[k] + self.shape[k] as i64 - 1).abs();
                lo.max(hi) as f64 * self.spacing
            })
            .fold(0.0, f64::max)
    }
}
