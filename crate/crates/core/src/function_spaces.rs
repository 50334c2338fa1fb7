//! Discrete Hölder and Zygmund (semi)norms of sampled fields.
//!
//! All norms over finite samples are lower bounds of the continuous
//! suprema; reports carry the lattice spacing so refinement studies can be
//! compared.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::CellGrid;
use crate::lattice::Lattice;

/// Point count up to which Hölder quotients are evaluated over all pairs.
pub const DEFAULT_PAIR_BUDGET: usize = 2000;

/// Pairs closer than this many spacings are always evaluated exactly.
const SHORT_RANGE_SPACINGS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Structure {
    Scattered,
    Lattice(Lattice),
}

/// Point samples of a scalar or vector-valued field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledField {
    dim: usize,
    points: Vec<f64>,
    /// `components` values per point, point-major.
    values: Vec<f64>,
    components: usize,
    structure: Structure,
    support_radius: f64,
}

impl SampledField {
    pub fn on_lattice(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        Self::on_lattice_vector(lattice, values, 1)
    }

    pub fn on_lattice_vector(lattice: Lattice, values: Vec<f64>, components: usize) -> Result<Self> {
        let n = lattice.len();
        if components == 0 || values.len() != n * components {
            return Err(Error::domain(format!(
                "lattice has {n} nodes but {} values were given for {components} components",
                values.len()
            )));
        }
        check_finite(&values)?;
        let nonzero = (0..n)
            .filter(|&i| values[i * components..(i + 1) * components].iter().any(|v| *v != 0.0))
            .count();
        let support_radius = (nonzero as f64 * lattice.cell_volume()).powf(1.0 / lattice.dim() as f64);
        Ok(SampledField {
            dim: lattice.dim(),
            points: lattice.points(),
            values,
            components,
            structure: Structure::Lattice(lattice),
            support_radius,
        })
    }

    pub fn sample(lattice: Lattice, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = lattice.points().chunks_exact(lattice.dim()).map(f).collect();
        Self::on_lattice(lattice, values)
    }

    pub fn scattered(dim: usize, points: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&dim) || points.len() % dim != 0 {
            return Err(Error::domain("scattered field needs dimension 1..=3 and whole points"));
        }
        let n = points.len() / dim;
        if values.len() != n {
            return Err(Error::domain(format!("{n} points but {} values", values.len())));
        }
        check_finite(&values)?;
        check_finite(&points)?;
        let mut seen = std::collections::HashSet::with_capacity(n);
        for p in points.chunks_exact(dim) {
            let key: Vec<u64> = p.iter().map(|v| (v + 0.0).to_bits()).collect();
            if !seen.insert(key) {
                return Err(Error::domain(format!("duplicate sample point {p:?}")));
            }
        }
        // Measure of the support estimated by the bounding box of nonzero samples.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut any = false;
        for (p, v) in points.chunks_exact(dim).zip(&values) {
            if *v != 0.0 {
                any = true;
                for k in 0..dim {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
        let support_radius = if any {
            (0..dim).map(|k| hi[k] - lo[k]).product::<f64>().powf(1.0 / dim as f64)
        } else {
            0.0
        };
        Ok(SampledField {
            dim,
            points,
            values,
            components: 1,
            structure: Structure::Scattered,
            support_radius,
        })
    }

    /// Field from arbitrary samples: when the points are exactly the nodes
    /// of a regular lattice (common spacing on every axis, no gaps, no
    /// duplicates, in any order) the result has lattice structure,
    /// otherwise it is scattered.
    pub fn from_samples(dim: usize, points: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("field has no samples"));
        }
        match detect_lattice(dim, &points) {
            Some((lattice, order)) => {
                let mut v = vec![0.0; values.len()];
                for (src, dst) in order.into_iter().enumerate() {
                    v[dst] = values[src];
                }
                Self::on_lattice(lattice, v)
            }
            None => Self::scattered(dim, points, values),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn lattice(&self) -> Option<&Lattice> {
        match &self.structure {
            Structure::Lattice(l) => Some(l),
            Structure::Scattered => None,
        }
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    /// Values of one component.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.components).copied().collect()
    }

    /// Characteristic sample spacing: the lattice spacing, or the mean
    /// spacing `(box volume / N)^{1/n}` for scattered data.
    pub fn spacing(&self) -> f64 {
        match &self.structure {
            Structure::Lattice(l) => l.spacing(),
            Structure::Scattered => {
                let n = self.len().max(1);
                let mut vol = 1.0;
                for k in 0..self.dim {
                    let (lo, hi) = self
                        .points
                        .iter()
                        .skip(k)
                        .step_by(self.dim)
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                    vol *= (hi - lo).max(f64::MIN_POSITIVE);
                }
                (vol / n as f64).powf(1.0 / self.dim as f64)
            }
        }
    }

    /// A copy with values replaced (same points and structure).
    pub fn with_values(&self, values: Vec<f64>, components: usize) -> Result<Self> {
        match &self.structure {
            Structure::Lattice(l) => Self::on_lattice_vector(l.clone(), values, components),
            Structure::Scattered if components == 1 => Self::scattered(self.dim, self.points.clone(), values),
            Structure::Scattered => Err(Error::domain("vector-valued scattered fields are not supported")),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::domain(format!("non-finite sample value {bad}")));
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("Hölder exponent must lie in the open interval (0, 1), got {gamma}")))
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Candidate pairs for a Hölder-type supremum: either all pairs, or all
/// short-range pairs plus every pair within a strided subsample that also
/// contains the extremal samples.
struct PairPlan<'a> {
    dim: usize,
    points: &'a [f64],
    exhaustive: bool,
    short_radius: f64,
    subset: Vec<usize>,
}

impl<'a> PairPlan<'a> {
    fn new(dim: usize, points: &'a [f64], values: &[f64], components: usize, budget: usize, spacing: f64) -> Self {
        let n = points.len() / dim;
        if n <= budget.max(2) {
            return PairPlan {
                dim,
                points,
                exhaustive: true,
                short_radius: 0.0,
                subset: Vec::new(),
            };
        }
        let stride = n.div_ceil(budget.max(2));
        let mut subset: Vec<usize> = (0..n).step_by(stride).collect();
        for c in 0..components {
            let comp = |i: usize| values[i * components + c];
            let (mut imin, mut imax) = (0, 0);
            for i in 0..n {
                if comp(i) < comp(imin) {
                    imin = i;
                }
                if comp(i) > comp(imax) {
                    imax = i;
                }
            }
            subset.push(imin);
            subset.push(imax);
        }
        subset.sort_unstable();
        subset.dedup();
        PairPlan {
            dim,
            points,
            exhaustive: false,
            short_radius: SHORT_RANGE_SPACINGS * spacing,
            subset,
        }
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Fold `visit(i, j, d)` over candidate pairs into `nbuckets` maxima.
    fn fold_max(&self, nbuckets: usize, visit: &(dyn Fn(usize, usize, f64, &mut [f64]) + Sync)) -> Vec<f64> {
        let merge = |mut a: Vec<f64>, b: Vec<f64>| {
            for (x, y) in a.iter_mut().zip(b) {
                *x = x.max(y);
            }
            a
        };
        let n = self.points.len() / self.dim;
        if self.exhaustive {
            return (0..n)
                .into_par_iter()
                .fold(
                    || vec![0.0; nbuckets],
                    |mut acc, i| {
                        let pi = self.point(i);
                        for j in i + 1..n {
                            visit(i, j, distance(pi, self.point(j)), &mut acc);
                        }
                        acc
                    },
                )
                .reduce(|| vec![0.0; nbuckets], merge);
        }
        let grid = CellGrid::new(self.dim, self.points, self.short_radius.max(f64::MIN_POSITIVE));
        let short = (0..n)
            .into_par_iter()
            .fold(
                || vec![0.0; nbuckets],
                |mut acc, i| {
                    let pi = self.point(i);
                    for j in grid.within(pi, self.short_radius) {
                        if j > i {
                            visit(i, j, distance(pi, self.point(j)), &mut acc);
                        }
                    }
                    acc
                },
            )
            .reduce(|| vec![0.0; nbuckets], merge);
        let m = self.subset.len();
        let long = (0..m)
            .into_par_iter()
            .fold(
                || vec![0.0; nbuckets],
                |mut acc, a| {
                    let i = self.subset[a];
                    let pi = self.point(i);
                    for &j in &self.subset[a + 1..] {
                        visit(i, j, distance(pi, self.point(j)), &mut acc);
                    }
                    acc
                },
            )
            .reduce(|| vec![0.0; nbuckets], merge);
        merge(short, long)
    }
}

fn max_difference(values: &[f64], components: usize, i: usize, j: usize) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..components {
        worst = worst.max((values[i * components + c] - values[j * components + c]).abs());
    }
    worst
}

fn holder_quotient(values: &[f64], components: usize, i: usize, j: usize, d: f64, gamma: f64) -> f64 {
    if d == 0.0 {
        return 0.0;
    }
    max_difference(values, components, i, j) / d.powf(gamma)
}

/// `sup_{x≠y} |f(x) - f(y)| / |x - y|^γ` over the samples (componentwise max
/// for vector fields). Exact over all pairs when the field has at most
/// `pair_budget` points.
pub fn holder_seminorm(f: &SampledField, gamma: f64, pair_budget: usize) -> Result<f64> {
    check_gamma(gamma)?;
    if f.len() < 2 {
        return Err(Error::domain("Hölder seminorm needs at least 2 points"));
    }
    let plan = PairPlan::new(f.dim, &f.points, &f.values, f.components, pair_budget, f.spacing());
    let (vals, comps) = (&f.values, f.components);
    let out = plan.fold_max(1, &|i, j, d, acc| {
        acc[0] = acc[0].max(holder_quotient(vals, comps, i, j, d, gamma));
    });
    Ok(out[0])
}

/// Hölder norm `‖f‖_∞ + |f|_γ`.
pub fn holder_norm(f: &SampledField, gamma: f64, pair_budget: usize) -> Result<f64> {
    Ok(f.sup_norm() + holder_seminorm(f, gamma, pair_budget)?)
}

/// `ω(h) = sup_{0<|x-y|<h} |f(x) - f(y)| / |x - y|^γ` for each level, in the
/// order given.
pub fn vanishing_modulus(f: &SampledField, gamma: f64, h_levels: &[f64], pair_budget: usize) -> Result<Vec<(f64, f64)>> {
    check_gamma(gamma)?;
    if f.len() < 2 {
        return Err(Error::domain("vanishing modulus needs at least 2 points"));
    }
    if h_levels.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::domain("modulus levels must be positive"));
    }
    let mut sorted: Vec<f64> = h_levels.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let plan = PairPlan::new(f.dim, &f.points, &f.values, f.components, pair_budget, f.spacing());
    let (vals, comps) = (&f.values, f.components);
    let levels = &sorted;
    let buckets = plan.fold_max(sorted.len(), &|i, j, d, acc| {
        // first level strictly above d
        let l = levels.partition_point(|h| *h <= d);
        if l < acc.len() {
            acc[l] = acc[l].max(holder_quotient(vals, comps, i, j, d, gamma));
        }
    });
    Ok(cumulative_lookup(&sorted, &buckets, h_levels))
}

fn cumulative_lookup(sorted: &[f64], buckets: &[f64], requested: &[f64]) -> Vec<(f64, f64)> {
    let mut cum = buckets.to_vec();
    for k in 1..cum.len() {
        cum[k] = cum[k].max(cum[k - 1]);
    }
    requested
        .iter()
        .map(|h| {
            let k = sorted.partition_point(|v| v < h);
            (*h, cum[k])
        })
        .collect()
}

/// Empirical lip-log constant `sup |f(x) - f(y)| / (|x-y| log(1/|x-y|))` over
/// pairs with `0 < |x - y| < 1/e`.
pub fn liplog_constant(f: &SampledField, pair_budget: usize) -> Result<f64> {
    if f.len() < 2 {
        return Err(Error::domain("lip-log constant needs at least 2 points"));
    }
    let plan = PairPlan::new(f.dim, &f.points, &f.values, f.components, pair_budget, f.spacing());
    let (vals, comps) = (&f.values, f.components);
    let cut = (-1.0f64).exp();
    let out = plan.fold_max(1, &|i, j, d, acc| {
        if d > 0.0 && d < cut {
            let diff = max_difference(vals, comps, i, j);
            acc[0] = acc[0].max(diff / (d * (1.0 / d).ln()));
        }
    });
    Ok(out[0])
}

/// Lattice directions used for Zygmund stencils: axes and diagonals, one
/// representative per ± pair.
fn stencil_directions(dim: usize) -> Vec<[i64; 3]> {
    let mut dirs = Vec::new();
    let range = |k: usize| if k < dim { -1..=1 } else { 0..=0 };
    for a in range(0) {
        for b in range(1) {
            for c in range(2) {
                let d = [a, b, c];
                let first = d.iter().find(|v| **v != 0);
                if first == Some(&1) {
                    dirs.push(d);
                }
            }
        }
    }
    dirs
}

/// Visit every symmetric stencil `(x - h, x, x + h)` on the lattice, passing
/// `(|Δ²f| / |h|, |h|)` to `visit`.
fn fold_stencils(f: &SampledField, lattice: &Lattice, nbuckets: usize, visit: &(dyn Fn(f64, f64, &mut [f64]) + Sync)) -> Vec<f64> {
    let dim = lattice.dim();
    let dirs = stencil_directions(dim);
    let comps = f.components;
    let vals = &f.values;
    let s = lattice.spacing();
    let shape = lattice.shape();
    (0..lattice.len())
        .into_par_iter()
        .fold(
            || vec![0.0; nbuckets],
            |mut acc, center| {
                let idx = lattice.multi(center);
                for d in &dirs {
                    // largest m keeping both ends inside
                    let mut mmax = i64::MAX;
                    for k in 0..dim {
                        if d[k] != 0 {
                            let room = (idx[k] as i64).min(shape[k] as i64 - 1 - idx[k] as i64);
                            mmax = mmax.min(room);
                        }
                    }
                    for m in 1..=mmax {
                        let step: Vec<i64> = (0..dim).map(|k| d[k] * m).collect();
                        let back: Vec<i64> = step.iter().map(|v| -v).collect();
                        let (Some(p), Some(q)) = (lattice.neighbor(&idx[..dim], &step), lattice.neighbor(&idx[..dim], &back)) else {
                            continue;
                        };
                        // computed like a distance between node coordinates, so that
                        // |x| sampled through the origin gives exactly 2 on diagonals
                        let hlen = step.iter().map(|v| (*v as f64 * s) * (*v as f64 * s)).sum::<f64>().sqrt();
                        let mut worst = 0.0f64;
                        for c in 0..comps {
                            let second = vals[p * comps + c] + vals[q * comps + c] - 2.0 * vals[center * comps + c];
                            worst = worst.max(second.abs());
                        }
                        visit(worst / hlen, hlen, &mut acc);
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0.0; nbuckets],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x = x.max(y);
                }
                a
            },
        )
}

fn require_lattice(f: &SampledField) -> Result<&Lattice> {
    let lat = f
        .lattice()
        .ok_or_else(|| Error::UnsupportedStructure("Zygmund seminorm needs lattice samples".into()))?;
    if lat.shape().iter().all(|&s| s < 3) {
        return Err(Error::domain("Zygmund seminorm needs at least 3 collinear points"));
    }
    Ok(lat)
}

/// `sup |f(x+h) - 2f(x) + f(x-h)| / |h|` over all lattice stencils along
/// axis and diagonal directions.
pub fn zygmund_seminorm(f: &SampledField) -> Result<f64> {
    let lat = require_lattice(f)?;
    Ok(fold_stencils(f, lat, 1, &|q, _h, acc| acc[0] = acc[0].max(q))[0])
}

pub fn zygmund_norm(f: &SampledField) -> Result<f64> {
    Ok(f.sup_norm() + zygmund_seminorm(f)?)
}

/// Zygmund vanishing modulus: sup of the stencil quotient over `|h| < δ`.
pub fn zygmund_modulus(f: &SampledField, deltas: &[f64]) -> Result<Vec<(f64, f64)>> {
    let lat = require_lattice(f)?;
    if deltas.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::domain("modulus levels must be positive"));
    }
    let mut sorted = deltas.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let levels = &sorted;
    let buckets = fold_stencils(f, lat, sorted.len(), &|q, h, acc| {
        let l = levels.partition_point(|v| *v <= h);
        if l < acc.len() {
            acc[l] = acc[l].max(q);
        }
    });
    Ok(cumulative_lookup(&sorted, &buckets, deltas))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub points: usize,
    pub spacing: f64,
    pub gamma: f64,
    pub sup_norm: f64,
    pub holder_seminorm: f64,
    pub zygmund_seminorm: Option<f64>,
    pub vanishing_modulus: Vec<(f64, f64)>,
    pub zygmund_modulus: Option<Vec<(f64, f64)>>,
    pub liplog_constant: f64,
}

/// Dyadic levels `1, 1/2, …, 2^{-count+1}` scaled by `top`.
pub fn dyadic_levels(top: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| top / 2f64.powi(k as i32)).collect()
}

pub fn norm_report(f: &SampledField, gamma: f64, pair_budget: usize, h_levels: &[f64]) -> Result<NormReport> {
    let holder = holder_seminorm(f, gamma, pair_budget)?;
    let modulus = vanishing_modulus(f, gamma, h_levels, pair_budget)?;
    let (zyg, zmod) = match f.lattice() {
        Some(_) => (Some(zygmund_seminorm(f)?), Some(zygmund_modulus(f, h_levels)?)),
        None => (None, None),
    };
    Ok(NormReport {
        points: f.len(),
        spacing: f.spacing(),
        gamma,
        sup_norm: f.sup_norm(),
        holder_seminorm: holder,
        zygmund_seminorm: zyg,
        vanishing_modulus: modulus,
        zygmund_modulus: zmod,
        liplog_constant: liplog_constant(f, pair_budget)?,
    })
}

/// Lattice whose nodes are exactly `points`, with the flat index of each
/// point.
fn detect_lattice(dim: usize, points: &[f64]) -> Option<(Lattice, Vec<usize>)> {
    if !(1..=3).contains(&dim) || points.len() % dim != 0 {
        return None;
    }
    let n = points.len() / dim;
    let mut spacing = f64::INFINITY;
    for k in 0..dim {
        let mut c: Vec<f64> = points.iter().skip(k).step_by(dim).copied().collect();
        c.sort_by(f64::total_cmp);
        c.dedup();
        for w in c.windows(2) {
            spacing = spacing.min(w[1] - w[0]);
        }
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return None;
    }
    let mut ints = Vec::with_capacity(points.len());
    for &x in points {
        let r = (x / spacing).round();
        if (x / spacing - r).abs() > 1e-6 {
            return None;
        }
        ints.push(r as i64);
    }
    let mut lo = vec![i64::MAX; dim];
    let mut hi = vec![i64::MIN; dim];
    for p in ints.chunks_exact(dim) {
        for k in 0..dim {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let shape: Vec<usize> = (0..dim).map(|k| (hi[k] - lo[k] + 1) as usize).collect();
    if shape.iter().product::<usize>() != n {
        return None;
    }
    let lattice = Lattice::new(spacing, shape, lo.clone()).ok()?;
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for p in ints.chunks_exact(dim) {
        let idx: Vec<usize> = (0..dim).map(|k| (p[k] - lo[k]) as usize).collect();
        let f = lattice.flat(&idx);
        if std::mem::replace(&mut seen[f], true) {
            return None;
        }
        order.push(f);
    }
    Some((lattice, order))
}

pub mod inequalities;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(values: &[f64], spacing: f64, half: usize) -> SampledField {
        SampledField::on_lattice(Lattice::centered(1, spacing, half).unwrap(), values.to_vec()).unwrap()
    }

    #[test]
    fn from_samples_detects_lattices_in_any_order() {
        let lat = Lattice::centered(2, 0.25, 3).unwrap();
        let pts = lat.points();
        let vals: Vec<f64> = pts.chunks_exact(2).map(|p| p[0] - 2.0 * p[1]).collect();
        let mut perm: Vec<usize> = (0..lat.len()).collect();
        perm.reverse();
        perm.swap(0, 7);
        let p2: Vec<f64> = perm.iter().flat_map(|&i| pts[2 * i..2 * i + 2].to_vec()).collect();
        let v2: Vec<f64> = perm.iter().map(|&i| vals[i]).collect();
        let f = SampledField::from_samples(2, p2, v2).unwrap();
        assert_eq!(f.lattice(), Some(&lat));
        assert_eq!(f.values(), &vals[..]);
        let mut gappy = pts.clone();
        gappy.truncate(pts.len() - 2);
        let g = SampledField::from_samples(2, gappy, vals[..vals.len() - 1].to_vec()).unwrap();
        assert!(g.lattice().is_none());
        assert!(SampledField::from_samples(2, vec![], vec![]).is_err());
    }

    fn brute_holder(f: &SampledField, gamma: f64) -> f64 {
        let mut m = 0.0f64;
        for i in 0..f.len() {
            for j in 0..f.len() {
                if i != j {
                    let d = distance(f.point(i), f.point(j));
                    m = m.max((f.values()[i] - f.values()[j]).abs() / d.powf(gamma));
                }
            }
        }
        m
    }

    #[test]
    fn identity_on_five_points() {
        let lat = Lattice::new(0.25, vec![5], vec![0]).unwrap();
        let f = SampledField::sample(lat, |x| x[0]).unwrap();
        let s = holder_seminorm(&f, 0.5, DEFAULT_PAIR_BUDGET).unwrap();
        assert!((s - 1.0).abs() < 1e-15, "{s}");
    }

    #[test]
    fn constant_field_has_zero_seminorms() {
        let f = line(&[3.0; 11], 0.1, 5);
        assert_eq!(holder_seminorm(&f, 0.3, DEFAULT_PAIR_BUDGET).unwrap(), 0.0);
        assert_eq!(zygmund_seminorm(&f).unwrap(), 0.0);
        let w = vanishing_modulus(&f, 0.5, &[1.0, 0.5, 0.25], DEFAULT_PAIR_BUDGET).unwrap();
        assert!(w.iter().all(|(_, v)| *v == 0.0));
    }

    #[test]
    fn sqrt_profile_has_unit_half_seminorm() {
        let lat = Lattice::centered(1, 0.02, 50).unwrap();
        let f = SampledField::sample(lat, |x| x[0].abs().sqrt()).unwrap();
        let s = holder_seminorm(&f, 0.5, DEFAULT_PAIR_BUDGET).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
        assert_eq!(s, brute_holder(&f, 0.5));
        // no vanishing: quotient against 0 is 1 at every scale
        let w = vanishing_modulus(&f, 0.5, &dyadic_levels(1.0, 6), DEFAULT_PAIR_BUDGET).unwrap();
        assert!(w.iter().all(|(_, v)| *v >= 0.9), "{w:?}");
    }

    #[test]
    fn zygmund_of_abs_is_exactly_two() {
        let lat = Lattice::centered(1, 0.1, 10).unwrap();
        let f = SampledField::sample(lat, |x| x[0].abs()).unwrap();
        assert_eq!(zygmund_seminorm(&f).unwrap(), 2.0);
    }

    #[test]
    fn zygmund_of_square_is_twice_max_halfwidth() {
        let lat = Lattice::centered(1, 0.1, 10).unwrap();
        let f = SampledField::sample(lat, |x| x[0] * x[0]).unwrap();
        assert!((zygmund_seminorm(&f).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zygmund_of_affine_is_zero() {
        let lat = Lattice::centered(2, 0.125, 8).unwrap();
        let f = SampledField::sample(lat, |x| 3.0 * x[0] - 2.0 * x[1] + 0.5).unwrap();
        assert!(zygmund_seminorm(&f).unwrap() < 1e-13);
    }

    #[test]
    fn zygmund_rejects_scattered() {
        let f = SampledField::scattered(1, vec![0.0, 0.3, 1.0], vec![1.0, 2.0, 0.0]).unwrap();
        assert!(matches!(zygmund_seminorm(&f), Err(Error::UnsupportedStructure(_))));
    }

    #[test]
    fn domain_errors() {
        let f = line(&[1.0], 0.1, 0);
        assert!(holder_seminorm(&f, 0.5, 10).is_err());
        let g = line(&[1.0, 2.0, 3.0], 0.1, 1);
        assert!(holder_seminorm(&g, 1.0, 10).is_err());
        assert!(holder_seminorm(&g, 0.0, 10).is_err());
        assert!(SampledField::scattered(1, vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(SampledField::scattered(1, vec![0.0], vec![f64::NAN]).is_err());
    }

    #[test]
    fn gaussian_modulus_decays() {
        let lat = Lattice::centered(1, 1.0 / 128.0, 256).unwrap();
        let f = SampledField::sample(lat, |x| (-x[0] * x[0]).exp()).unwrap();
        let levels = dyadic_levels(1.0, 7);
        let w = vanishing_modulus(&f, 0.5, &levels, DEFAULT_PAIR_BUDGET).unwrap();
        for k in 1..w.len() {
            assert!(w[k].1 < w[k - 1].1);
        }
        // Lipschitz data: ω(h) ≲ Lip·h^{1-γ}, with Lip = √(2/e)
        let lip = (2.0 / std::f64::consts::E).sqrt();
        for (h, v) in &w {
            assert!(*v <= lip * h.sqrt() * (1.0 + 1e-12), "h={h} ω={v}");
        }
    }

    #[test]
    fn modulus_top_level_equals_seminorm() {
        let lat = Lattice::centered(2, 0.1, 6).unwrap();
        let f = SampledField::sample(lat, |x| (3.0 * x[0]).sin() * x[1]).unwrap();
        let s = holder_seminorm(&f, 0.4, DEFAULT_PAIR_BUDGET).unwrap();
        let w = vanishing_modulus(&f, 0.4, &[0.05, 0.2, 10.0], DEFAULT_PAIR_BUDGET).unwrap();
        assert_eq!(w[2].1, s);
        assert_eq!(w[0].1, 0.0);
        assert!(w[1].1 <= w[2].1);
    }

    #[test]
    fn subsampled_seminorm_is_a_lower_bound_capturing_short_range() {
        let lat = Lattice::centered(2, 1.0 / 32.0, 32).unwrap();
        let f = SampledField::sample(lat, |x| (5.0 * x[0]).sin() + x[1].abs().sqrt()).unwrap();
        let exact = brute_holder(&f, 0.5);
        let sub = holder_seminorm(&f, 0.5, 500).unwrap();
        assert!(sub <= exact);
        assert!(sub >= 0.95 * exact, "{sub} vs {exact}");
    }

    #[test]
    fn lipschitz_bound_on_zygmund() {
        // |Δ²f| ≤ 2 Lip |h| for Lipschitz f
        let lat = Lattice::centered(2, 0.05, 20).unwrap();
        let f = SampledField::sample(lat, |x| (2.0 * x[0] + x[1]).sin()).unwrap();
        let lip = 5f64.sqrt();
        assert!(zygmund_seminorm(&f).unwrap() <= 2.0 * lip + 1e-9);
    }

    #[test]
    fn vector_field_uses_componentwise_max() {
        let lat = Lattice::centered(1, 0.1, 5).unwrap();
        let pts = lat.points();
        let vals: Vec<f64> = pts.iter().flat_map(|x| [x * 2.0, x * 3.0]).collect();
        let f = SampledField::on_lattice_vector(lat.clone(), vals, 2).unwrap();
        let g = SampledField::sample(lat, |x| 3.0 * x[0]).unwrap();
        assert_eq!(
            holder_seminorm(&f, 0.5, DEFAULT_PAIR_BUDGET).unwrap(),
            holder_seminorm(&g, 0.5, DEFAULT_PAIR_BUDGET).unwrap()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn seminorm_is_absolutely_homogeneous(
            vals in proptest::collection::vec(-10.0f64..10.0, 9),
            a in prop_oneof![Just(2.0f64), Just(-0.5), Just(4.0), Just(-8.0)],
            gamma in 0.05f64..0.95,
        ) {
            let f = line(&vals, 0.125, 4);
            let g = line(&vals.iter().map(|v| a * v).collect::<Vec<_>>(), 0.125, 4);
            let sf = holder_seminorm(&f, gamma, DEFAULT_PAIR_BUDGET).unwrap();
            let sg = holder_seminorm(&g, gamma, DEFAULT_PAIR_BUDGET).unwrap();
            prop_assert_eq!(sg, a.abs() * sf);
        }

        #[test]
        fn all_pairs_matches_brute_force(
            vals in proptest::collection::vec(-1.0f64..1.0, 25),
            gamma in 0.05f64..0.95,
        ) {
            let lat = Lattice::centered(2, 0.3, 2).unwrap();
            let f = SampledField::on_lattice(lat, vals).unwrap();
            prop_assert_eq!(holder_seminorm(&f, gamma, DEFAULT_PAIR_BUDGET).unwrap(), brute_holder(&f, gamma));
        }

        #[test]
        fn modulus_is_monotone(
            vals in proptest::collection::vec(-1.0f64..1.0, 30),
        ) {
            let f = line(&vals[..29], 0.05, 14);
            let levels = dyadic_levels(2.0, 8);
            let w = vanishing_modulus(&f, 0.5, &levels, DEFAULT_PAIR_BUDGET).unwrap();
            for k in 1..w.len() {
                prop_assert!(w[k].1 <= w[k - 1].1);
            }
        }
    }
}
