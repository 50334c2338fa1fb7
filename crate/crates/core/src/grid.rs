//! Uniform cell grid over a point cloud: radius queries and k-nearest search.

pub(crate) struct CellGrid<'a> {
    dim: usize,
    points: &'a [f64],
    cell: f64,
    lo: [f64; 3],
    dims: [usize; 3],
    /// CSR layout: indices of cell `c` are `order[start[c]..start[c + 1]]`.
    start: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> CellGrid<'a> {
    pub fn new(dim: usize, points: &'a [f64], cell: f64) -> Self {
        let n = points.len() / dim;
        let mut lo = [0.0f64; 3];
        let mut hi = [0.0f64; 3];
        for k in 0..dim {
            lo[k] = f64::INFINITY;
            hi[k] = f64::NEG_INFINITY;
        }
        for p in points.chunks_exact(dim) {
            for k in 0..dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let mut dims = [1usize; 3];
        for k in 0..dim {
            if n > 0 {
                dims[k] = (((hi[k] - lo[k]) / cell).floor() as usize + 1).max(1);
            }
        }
        let ncell: usize = dims.iter().product();
        let mut counts = vec![0usize; ncell + 1];
        let mut cell_of = Vec::with_capacity(n);
        let mut g = CellGrid {
            dim,
            points,
            cell,
            lo,
            dims,
            start: Vec::new(),
            order: Vec::new(),
        };
        for p in points.chunks_exact(dim) {
            let c = g.cell_index(&g.cell_coords(p));
            counts[c + 1] += 1;
            cell_of.push(c);
        }
        for c in 0..ncell {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut order = vec![0usize; n];
        for (i, &c) in cell_of.iter().enumerate() {
            order[fill[c]] = i;
            fill[c] += 1;
        }
        g.start = counts;
        g.order = order;
        g
    }

    fn cell_coords(&self, p: &[f64]) -> [i64; 3] {
        let mut c = [0i64; 3];
        for k in 0..self.dim {
            c[k] = ((p[k] - self.lo[k]) / self.cell).floor() as i64;
        }
        c
    }

    fn cell_index(&self, c: &[i64; 3]) -> usize {
        let mut f = 0usize;
        for k in 0..3 {
            let ck = c[k].clamp(0, self.dims[k] as i64 - 1) as usize;
            f = f * self.dims[k] + ck;
        }
        f
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn dist2(&self, q: &[f64], i: usize) -> f64 {
        self.point(i)
            .iter()
            .zip(q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Visit every point in the cells at Chebyshev ring distance `ring` from `c`.
    fn visit_ring(&self, c: &[i64; 3], ring: i64, mut f: impl FnMut(usize)) {
        let r = [
            ring,
            if self.dim > 1 { ring } else { 0 },
            if self.dim > 2 { ring } else { 0 },
        ];
        for a in -r[0]..=r[0] {
            for b in -r[1]..=r[1] {
                for d in -r[2]..=r[2] {
                    if a.abs().max(b.abs()).max(d.abs()) != ring {
                        continue;
                    }
                    let cc = [c[0] + a, c[1] + b, c[2] + d];
                    if (0..3).any(|k| cc[k] < 0 || cc[k] >= self.dims[k] as i64) {
                        continue;
                    }
                    let ci = self.cell_index(&cc);
                    for &i in &self.order[self.start[ci]..self.start[ci + 1]] {
                        f(i);
                    }
                }
            }
        }
    }

    /// Indices of points with `|p - q| < radius`, in ascending index order.
    pub fn within(&self, q: &[f64], radius: f64) -> Vec<usize> {
        let c = self.cell_coords(q);
        let rings = (radius / self.cell).ceil() as i64;
        let r2 = radius * radius;
        let mut out = Vec::new();
        let last = (0..self.dim)
            .map(|ax| c[ax].abs() + self.dims[ax] as i64)
            .max()
            .unwrap_or(0);
        for ring in 0..=rings.min(last) {
            self.visit_ring(&c, ring, |i| {
                if self.dist2(q, i) < r2 {
                    out.push(i);
                }
            });
        }
        out.sort_unstable();
        out
    }

    /// The `k` nearest points to `q` as `(index, distance)`, nearest first.
    /// Ties are broken by index so the result is deterministic.
    pub fn nearest(&self, q: &[f64], k: usize) -> Vec<(usize, f64)> {
        let n = self.order.len();
        let k = k.min(n);
        if k == 0 {
            return Vec::new();
        }
        let c = self.cell_coords(q);
        // Distance from q to the boundary of its own cell along each axis
        // bounds how far unseen points can be after each ring.
        let mut inner = f64::INFINITY;
        for ax in 0..self.dim {
            let lo = self.lo[ax] + c[ax] as f64 * self.cell;
            let d = (q[ax] - lo).min(lo + self.cell - q[ax]);
            inner = inner.min(d);
        }
        let inner = inner.max(0.0);
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(4 * k);
        let last = (0..self.dim)
            .map(|ax| c[ax].abs() + self.dims[ax] as i64)
            .max()
            .unwrap_or(0);
        for ring in 0..=last {
            self.visit_ring(&c, ring, |i| best.push((i, self.dist2(q, i))));
            if best.len() >= k {
                best.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                best.truncate(k);
                let reach = inner + ring as f64 * self.cell;
                if best[k - 1].1 <= reach * reach {
                    break;
                }
            }
        }
        best.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        best.truncate(k);
        best.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect()
    }
}
