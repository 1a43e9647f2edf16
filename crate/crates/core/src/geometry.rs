//! Caps on the paraboloid, cap decompositions, sampled surface functions and
//! the local-L² normalization check.
//!
//! A cap is described by a disk in the parameter plane: the cap over the disk
//! of center `ω₀` and radius `ρ` is `{(ω, |ω|²) : |ω - ω₀| ≤ ρ}`. Surface
//! functions are sampled at cell centers of a global square lattice of step
//! `h`, with nodes at `-1 + (k + 1/2) h`; two functions with the same step can
//! always be added sample-by-sample.

use num_complex::Complex64;

use crate::error::{param, LabError, Result};
use crate::numerics::{par_map, pairwise_sum};

pub type Point2 = [f64; 2];
pub type Point3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cap {
    pub center: Point2,
    pub radius: f64,
}

impl Cap {
    pub fn new(center: Point2, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(param("radius", "cap radius must be positive"));
        }
        if norm2(center) > 1.0 + 1e-12 {
            return Err(param("center", "cap center must lie in the closed unit disk"));
        }
        Ok(Cap { center, radius })
    }

    /// Same center, `c` times the radius.
    pub fn scale(&self, c: f64) -> Cap {
        Cap { center: self.center, radius: self.radius * c }
    }

    pub fn contains(&self, w: Point2) -> bool {
        dist2(w, self.center) <= self.radius + 1e-12
    }

    /// The point `(ω₀, |ω₀|²)` of the paraboloid over the center.
    pub fn xi0(&self) -> Point3 {
        lift(self.center)
    }

    /// Unit normal of the paraboloid at the cap center, oriented upward.
    pub fn normal(&self) -> Point3 {
        paraboloid_normal(self.center)
    }
}

pub fn lift(w: Point2) -> Point3 {
    [w[0], w[1], w[0] * w[0] + w[1] * w[1]]
}

pub fn paraboloid_normal(w: Point2) -> Point3 {
    let v = [-2.0 * w[0], -2.0 * w[1], 1.0];
    let n = (v[0] * v[0] + v[1] * v[1] + 1.0).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

pub(crate) fn norm2(w: Point2) -> f64 {
    (w[0] * w[0] + w[1] * w[1]).sqrt()
}

pub(crate) fn dist2(a: Point2, b: Point2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// A family of caps covering the unit disk.
#[derive(Debug, Clone)]
pub struct CapDecomposition {
    pub caps: Vec<Cap>,
    pub nominal_radius: f64,
    pub multiplicity: f64,
}

/// Builds a cover of the unit disk by caps centered on the square lattice of
/// spacing `r`, each of radius `r√m`.
///
/// Lattice points in the closed disk are kept; near the rim, caps whose
/// removal keeps the disk covered are dropped (so `r = 1` gives one cap).
pub fn make_cap_decomposition(r: f64, m: f64) -> Result<CapDecomposition> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(param("r", format!("need 0 < r <= 1, got {r}")));
    }
    if !(m >= 1.0) {
        return Err(param("m", format!("need m >= 1, got {m}")));
    }
    let radius = r * m.sqrt();
    let kmax = (1.0 / r).floor() as i64 + 1;
    let mut candidates = Vec::new();
    for j in -kmax..=kmax {
        for i in -kmax..=kmax {
            let c = [i as f64 * r, j as f64 * r];
            if norm2(c) <= 1.0 + 1e-12 {
                candidates.push(c);
            }
        }
    }

    // Coverage mesh: interior lattice plus rim points.
    let step = r / 4.0;
    let n = (2.0 / step).ceil() as i64;
    let mut mesh = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            let w = [-1.0 + i as f64 * step, -1.0 + j as f64 * step];
            if norm2(w) <= 1.0 {
                mesh.push(w);
            }
        }
    }
    let rim = (2.0 * std::f64::consts::PI / step).ceil() as usize;
    for k in 0..rim {
        let t = 2.0 * std::f64::consts::PI * k as f64 / rim as f64;
        mesh.push([t.cos(), t.sin()]);
    }

    let index = LatticeIndex::new(&candidates, radius);
    let mut count = vec![0u32; mesh.len()];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); candidates.len()];
    for (pi, &w) in mesh.iter().enumerate() {
        for ci in index.within(&candidates, w, radius + 1e-12) {
            count[pi] += 1;
            members[ci].push(pi);
        }
    }

    let mut order: Vec<usize> = (0..candidates.len())
        .filter(|&i| norm2(candidates[i]) > 1.0 - r + 1e-12)
        .collect();
    order.sort_by(|&a, &b| {
        norm2(candidates[b])
            .partial_cmp(&norm2(candidates[a]))
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut keep = vec![true; candidates.len()];
    for ci in order {
        if members[ci].iter().all(|&p| count[p] >= 2) {
            keep[ci] = false;
            for &p in &members[ci] {
                count[p] -= 1;
            }
        }
    }
    let caps = candidates
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&c, _)| Cap { center: c, radius })
        .collect();
    Ok(CapDecomposition { caps, nominal_radius: r, multiplicity: m })
}

impl CapDecomposition {
    /// Maximum number of caps containing a point of a mesh of step `step`
    /// over the unit disk.
    pub fn max_overlap(&self, step: f64) -> usize {
        let centers: Vec<Point2> = self.caps.iter().map(|c| c.center).collect();
        let radius = self.caps.iter().map(|c| c.radius).fold(0.0, f64::max);
        let index = LatticeIndex::new(&centers, radius);
        let n = (2.0 / step).ceil() as usize;
        let rows = par_map(n + 1, |j| {
            let mut best = 0;
            for i in 0..=n {
                let w = [-1.0 + i as f64 * step, -1.0 + j as f64 * step];
                if norm2(w) <= 1.0 {
                    let k = index
                        .within(&centers, w, radius + 1e-12)
                        .filter(|&ci| self.caps[ci].contains(w))
                        .count();
                    best = best.max(k);
                }
            }
            best
        });
        rows.into_iter().max().unwrap_or(0)
    }

    /// Largest distance from a mesh point of the disk to the nearest center.
    pub fn covering_radius(&self, step: f64) -> f64 {
        let centers: Vec<Point2> = self.caps.iter().map(|c| c.center).collect();
        let radius = self.caps.iter().map(|c| c.radius).fold(0.0, f64::max);
        let index = LatticeIndex::new(&centers, radius);
        let n = (2.0 / step).ceil() as usize;
        let rows = par_map(n + 1, |j| {
            let mut worst: f64 = 0.0;
            for i in 0..=n {
                let w = [-1.0 + i as f64 * step, -1.0 + j as f64 * step];
                if norm2(w) <= 1.0 {
                    let d = index
                        .within(&centers, w, 2.0 * radius)
                        .map(|ci| dist2(w, centers[ci]))
                        .fold(f64::INFINITY, f64::min);
                    worst = worst.max(d);
                }
            }
            worst
        });
        rows.into_iter().fold(0.0, f64::max)
    }

    /// Index of the cap whose half-open Voronoi tile contains `w`: nearest
    /// center among caps containing `w`, ties to the lowest index.
    pub fn tile_of(&self, w: Point2) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in self.caps.iter().enumerate() {
            if !c.contains(w) {
                continue;
            }
            let d = dist2(w, c.center);
            match best {
                Some((_, bd)) if d >= bd - 1e-15 => {}
                _ => best = Some((i, d)),
            }
        }
        best.map(|b| b.0)
    }
}

/// Bucketed lookup of points near a query, for lattice-like point sets.
struct LatticeIndex {
    cell: f64,
    buckets: std::collections::HashMap<(i64, i64), Vec<usize>>,
}

impl LatticeIndex {
    fn new(points: &[Point2], reach: f64) -> Self {
        let cell = reach.max(1e-6);
        let mut buckets: std::collections::HashMap<(i64, i64), Vec<usize>> = Default::default();
        for (i, p) in points.iter().enumerate() {
            buckets
                .entry(((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64))
                .or_default()
                .push(i);
        }
        LatticeIndex { cell, buckets }
    }

    fn within<'a>(
        &'a self,
        points: &'a [Point2],
        w: Point2,
        reach: f64,
    ) -> impl Iterator<Item = usize> + 'a {
        let span = (reach / self.cell).ceil() as i64;
        let bx = (w[0] / self.cell).floor() as i64;
        let by = (w[1] / self.cell).floor() as i64;
        let mut out = Vec::new();
        for dy in -span..=span {
            for dx in -span..=span {
                if let Some(v) = self.buckets.get(&(bx + dx, by + dy)) {
                    out.extend(v.iter().copied().filter(|&i| dist2(points[i], w) <= reach));
                }
            }
        }
        out.sort_unstable();
        out.into_iter()
    }
}

/// Uniform sample lattice: node `(i, j)` sits at `origin + (i, j) * step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleGrid {
    pub origin: Point2,
    pub step: f64,
    pub nx: usize,
    pub ny: usize,
}

impl SampleGrid {
    /// Cell centers of an `n × n` tiling of `[-1, 1]²`.
    pub fn unit_disk(n: usize) -> Self {
        let step = 2.0 / n as f64;
        SampleGrid { origin: [-1.0 + 0.5 * step, -1.0 + 0.5 * step], step, nx: n, ny: n }
    }

    /// Smallest sub-grid of the global lattice of step `step` covering the
    /// rectangle `[lo, hi]`.
    pub fn aligned(step: f64, lo: Point2, hi: Point2) -> Self {
        let k = |x: f64| (x + 1.0) / step - 0.5;
        let i0 = k(lo[0]).floor() as i64;
        let i1 = k(hi[0]).ceil() as i64;
        let j0 = k(lo[1]).floor() as i64;
        let j1 = k(hi[1]).ceil() as i64;
        SampleGrid {
            origin: [-1.0 + (i0 as f64 + 0.5) * step, -1.0 + (j0 as f64 + 0.5) * step],
            step,
            nx: (i1 - i0 + 1).max(1) as usize,
            ny: (j1 - j0 + 1).max(1) as usize,
        }
    }

    /// Aligned grid covering a cap.
    pub fn around_cap(cap: &Cap, step: f64) -> Self {
        let c = cap.center;
        let r = cap.radius;
        Self::aligned(step, [c[0] - r, c[1] - r], [c[0] + r, c[1] + r])
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize, j: usize) -> Point2 {
        [self.origin[0] + i as f64 * self.step, self.origin[1] + j as f64 * self.step]
    }

    pub fn cell_area(&self) -> f64 {
        self.step * self.step
    }

    /// Global lattice index of node (0, 0).
    fn base_index(&self) -> (i64, i64) {
        let k = |x: f64| ((x + 1.0) / self.step - 0.5).round() as i64;
        (k(self.origin[0]), k(self.origin[1]))
    }

    /// Integer offset of `other`'s origin relative to ours, if both grids
    /// sit on the same global lattice.
    pub fn offset_of(&self, other: &SampleGrid) -> Option<(i64, i64)> {
        if (self.step - other.step).abs() > 1e-12 * self.step {
            return None;
        }
        let a = self.base_index();
        let b = other.base_index();
        Some((b.0 - a.0, b.1 - a.1))
    }

    /// Locate the node whose cell contains `w`.
    pub fn cell_of(&self, w: Point2) -> Option<(usize, usize)> {
        let fi = ((w[0] - self.origin[0]) / self.step + 0.5).floor();
        let fj = ((w[1] - self.origin[1]) / self.step + 0.5).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.nx as f64 || fj >= self.ny as f64 {
            return None;
        }
        Some((fi as usize, fj as usize))
    }

    /// Smallest aligned grid containing both.
    pub fn union(&self, other: &SampleGrid) -> Option<SampleGrid> {
        let (di, dj) = self.offset_of(other)?;
        let i0 = di.min(0);
        let j0 = dj.min(0);
        let i1 = (self.nx as i64).max(di + other.nx as i64);
        let j1 = (self.ny as i64).max(dj + other.ny as i64);
        Some(SampleGrid {
            origin: [
                self.origin[0] + i0 as f64 * self.step,
                self.origin[1] + j0 as f64 * self.step,
            ],
            step: self.step,
            nx: (i1 - i0) as usize,
            ny: (j1 - j0) as usize,
        })
    }
}

/// Complex density on the paraboloid, sampled over the parameter disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceFunction {
    pub grid: SampleGrid,
    /// Row-major, x fastest.
    pub samples: Vec<Complex64>,
    pub support_cap: Option<Cap>,
}

impl SurfaceFunction {
    pub fn zeros(grid: SampleGrid, support_cap: Option<Cap>) -> Self {
        SurfaceFunction { grid, samples: vec![Complex64::new(0.0, 0.0); grid.len()], support_cap }
    }

    /// Samples `f` at every node, forcing zero outside the unit disk and
    /// outside `support_cap` when one is given.
    pub fn from_fn<F>(grid: SampleGrid, support_cap: Option<Cap>, f: F) -> Self
    where
        F: Fn(Point2) -> Complex64,
    {
        let mut samples = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let w = grid.point(i, j);
                let inside = norm2(w) <= 1.0 && support_cap.map_or(true, |c| c.contains(w));
                samples.push(if inside { f(w) } else { Complex64::new(0.0, 0.0) });
            }
        }
        SurfaceFunction { grid, samples, support_cap }
    }

    /// Indicator of a cap, sampled on an aligned grid of step `step`.
    pub fn cap_indicator(cap: Cap, step: f64) -> Self {
        let grid = SampleGrid::around_cap(&cap, step);
        Self::from_fn(grid, Some(cap), |_| Complex64::new(1.0, 0.0))
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.samples[j * self.grid.nx + i]
    }

    /// Piecewise-constant evaluation: value of the cell containing `w`.
    pub fn eval(&self, w: Point2) -> Complex64 {
        match self.grid.cell_of(w) {
            Some((i, j)) => self.at(i, j),
            None => Complex64::new(0.0, 0.0),
        }
    }

    pub fn l2_squared(&self) -> f64 {
        let v: Vec<f64> = self.samples.iter().map(|z| z.norm_sqr()).collect();
        pairwise_sum(&v) * self.grid.cell_area()
    }

    pub fn l2(&self) -> f64 {
        self.l2_squared().sqrt()
    }

    pub fn l1(&self) -> f64 {
        let v: Vec<f64> = self.samples.iter().map(|z| z.norm()).collect();
        pairwise_sum(&v) * self.grid.cell_area()
    }

    /// `(∫|f|^q dσ)^{1/q}`; `q = ∞` gives the sample maximum.
    pub fn lq(&self, q: f64) -> f64 {
        if q.is_infinite() {
            return self.sup();
        }
        let v: Vec<f64> = self.samples.iter().map(|z| z.norm().powf(q)).collect();
        (pairwise_sum(&v) * self.grid.cell_area()).powf(1.0 / q)
    }

    pub fn sup(&self) -> f64 {
        self.samples.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        let mut out = self.clone();
        for z in &mut out.samples {
            *z *= c;
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.samples.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    /// Adds `c * other` into `self`; `other` must lie on the same lattice
    /// and inside `self`'s grid wherever it is nonzero.
    pub fn add_scaled(&mut self, other: &SurfaceFunction, c: Complex64) -> Result<()> {
        let (di, dj) = self
            .grid
            .offset_of(&other.grid)
            .ok_or_else(|| LabError::GridMismatch("sample steps differ".into()))?;
        for j in 0..other.grid.ny {
            for i in 0..other.grid.nx {
                let v = other.at(i, j);
                if v.re == 0.0 && v.im == 0.0 {
                    continue;
                }
                let ti = di + i as i64;
                let tj = dj + j as i64;
                if ti < 0 || tj < 0 || ti >= self.grid.nx as i64 || tj >= self.grid.ny as i64 {
                    return Err(LabError::GridMismatch("addend extends past target grid".into()));
                }
                self.samples[tj as usize * self.grid.nx + ti as usize] += c * v;
            }
        }
        Ok(())
    }

    /// Pointwise sum of functions on a common lattice, on the union grid.
    pub fn sum(parts: &[SurfaceFunction]) -> Result<SurfaceFunction> {
        let first = parts
            .first()
            .ok_or_else(|| LabError::Malformed("empty sum".into()))?;
        let mut grid = first.grid;
        for p in &parts[1..] {
            grid = grid
                .union(&p.grid)
                .ok_or_else(|| LabError::GridMismatch("sample steps differ".into()))?;
        }
        let mut out = SurfaceFunction::zeros(grid, None);
        for p in parts {
            out.add_scaled(p, Complex64::new(1.0, 0.0))?;
        }
        Ok(out)
    }

    /// Copy onto another aligned grid (values outside it are dropped).
    pub fn regrid(&self, grid: SampleGrid) -> Result<SurfaceFunction> {
        let (di, dj) = grid
            .offset_of(&self.grid)
            .ok_or_else(|| LabError::GridMismatch("sample steps differ".into()))?;
        let mut out = SurfaceFunction::zeros(grid, self.support_cap);
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                let ti = di + i as i64;
                let tj = dj + j as i64;
                if ti >= 0 && tj >= 0 && ti < grid.nx as i64 && tj < grid.ny as i64 {
                    out.samples[tj as usize * grid.nx + ti as usize] = self.at(i, j);
                }
            }
        }
        Ok(out)
    }

    /// Sum of `|f|²` over a subset of the disk, midpoint rule.
    pub fn l2_squared_where<P: Fn(Point2) -> bool>(&self, pred: P) -> f64 {
        let mut v = Vec::new();
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                if pred(self.grid.point(i, j)) {
                    v.push(self.at(i, j).norm_sqr());
                }
            }
        }
        pairwise_sum(&v) * self.grid.cell_area()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Every sample goes to exactly one cap (half-open Voronoi tiles).
    Disjoint,
    /// Smooth partition of unity subordinate to the caps.
    Smooth,
}

/// Splits `f` into pieces `f_τ` supported in the caps of `dec`, one per cap,
/// summing back to `f` at every sample. Each piece lives on the part of `f`'s
/// grid covering its cap.
pub fn split_function(
    f: &SurfaceFunction,
    dec: &CapDecomposition,
    mode: SplitMode,
) -> Vec<SurfaceFunction> {
    let g = f.grid;
    // share[k] lists (cap index, weight) for sample k
    let shares: Vec<Vec<(usize, f64)>> = par_map(g.len(), |k| {
        let v = f.samples[k];
        if v.re == 0.0 && v.im == 0.0 {
            return Vec::new();
        }
        let w = g.point(k % g.nx, k / g.nx);
        match mode {
            SplitMode::Disjoint => dec.tile_of(w).map(|c| vec![(c, 1.0)]).unwrap_or_default(),
            SplitMode::Smooth => {
                let mut parts: Vec<(usize, f64)> = dec
                    .caps
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.contains(w))
                    .map(|(i, c)| {
                        let t = dist2(w, c.center) / c.radius;
                        (i, 1.0 - crate::numerics::smoothstep(3, t))
                    })
                    .filter(|(_, b)| *b > 0.0)
                    .collect();
                let total: f64 = parts.iter().map(|p| p.1).sum();
                if total <= 0.0 {
                    return dec.tile_of(w).map(|c| vec![(c, 1.0)]).unwrap_or_default();
                }
                for p in &mut parts {
                    p.1 /= total;
                }
                parts
            }
        }
    });

    dec.caps
        .iter()
        .enumerate()
        .map(|(ci, cap)| {
            let local = SampleGrid::around_cap(cap, g.step);
            let mut piece = SurfaceFunction::zeros(local, Some(*cap));
            let (di, dj) = local.offset_of(&g).expect("same step");
            for (k, sh) in shares.iter().enumerate() {
                for &(c, wgt) in sh {
                    if c != ci {
                        continue;
                    }
                    let ti = di + (k % g.nx) as i64;
                    let tj = dj + (k / g.nx) as i64;
                    if ti >= 0 && tj >= 0 && (ti as usize) < local.nx && (tj as usize) < local.ny {
                        piece.samples[tj as usize * local.nx + ti as usize] = f.samples[k] * wgt;
                    }
                }
            }
            piece
        })
        .collect()
}

/// Outcome of the local L² scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaReport {
    pub ok: bool,
    pub worst_ratio: f64,
}

const LAMBDA_TOL: f64 = 1e-8;
const LAMBDA_SUBSAMPLES: usize = 16;

/// Maximum of `R · ∫_{B(ξ₀, R^{-1/2}) ∩ P} |f_τ|² dσ` over centers `ξ₀` on a
/// mesh of step `R^{-1/2}/4`, for every piece.
pub fn validate_lambda_class(pieces: &[SurfaceFunction], big_r: f64) -> Result<LambdaReport> {
    if !(big_r >= 1.0) {
        return Err(param("R", format!("need R >= 1, got {big_r}")));
    }
    let rho = big_r.powf(-0.5);
    let mut worst: f64 = 0.0;
    for piece in pieces {
        if piece.is_zero() {
            continue;
        }
        worst = worst.max(worst_local_mass(piece, rho) * big_r);
    }
    Ok(LambdaReport { ok: worst <= 1.0 + LAMBDA_TOL * big_r, worst_ratio: worst })
}

fn worst_local_mass(f: &SurfaceFunction, rho: f64) -> f64 {
    let g = f.grid;
    let lo = [g.origin[0] - 0.5 * g.step - rho, g.origin[1] - 0.5 * g.step - rho];
    let hi = [
        g.origin[0] + (g.nx as f64 - 0.5) * g.step + rho,
        g.origin[1] + (g.ny as f64 - 0.5) * g.step + rho,
    ];
    let mstep = rho / 4.0;
    let mx = ((hi[0] - lo[0]) / mstep).ceil() as usize + 1;
    let my = ((hi[1] - lo[1]) / mstep).ceil() as usize + 1;
    let reach = (rho / g.step).ceil() as i64 + 1;
    let sub = LAMBDA_SUBSAMPLES;
    // the lift is 3-Lipschitz on the disk, cells have half-diagonal h/√2
    let margin = 2.3 * g.step;
    let rows = par_map(my, |cj| {
        let mut best: f64 = 0.0;
        for ci in 0..mx {
            let w0 = [lo[0] + ci as f64 * mstep, lo[1] + cj as f64 * mstep];
            if norm2(w0) > 1.0 {
                continue;
            }
            let h0 = w0[0] * w0[0] + w0[1] * w0[1];
            let fi = ((w0[0] - g.origin[0]) / g.step).round() as i64;
            let fj = ((w0[1] - g.origin[1]) / g.step).round() as i64;
            let mut terms = Vec::new();
            for j in (fj - reach).max(0)..(fj + reach + 1).min(g.ny as i64) {
                for i in (fi - reach).max(0)..(fi + reach + 1).min(g.nx as i64) {
                    let v = f.at(i as usize, j as usize).norm_sqr();
                    if v == 0.0 {
                        continue;
                    }
                    let c = g.point(i as usize, j as usize);
                    let dh = c[0] * c[0] + c[1] * c[1] - h0;
                    let d = ((c[0] - w0[0]).powi(2) + (c[1] - w0[1]).powi(2) + dh * dh).sqrt();
                    if d + margin <= rho {
                        terms.push(v);
                        continue;
                    }
                    if d - margin > rho {
                        continue;
                    }
                    // fraction of the cell inside the ball, by subsampling
                    let mut inside = 0usize;
                    for sj in 0..sub {
                        for si in 0..sub {
                            let w = [
                                c[0] + ((si as f64 + 0.5) / sub as f64 - 0.5) * g.step,
                                c[1] + ((sj as f64 + 0.5) / sub as f64 - 0.5) * g.step,
                            ];
                            let dh = w[0] * w[0] + w[1] * w[1] - h0;
                            let d2 = (w[0] - w0[0]).powi(2) + (w[1] - w0[1]).powi(2) + dh * dh;
                            if d2 <= rho * rho {
                                inside += 1;
                            }
                        }
                    }
                    if inside > 0 {
                        terms.push(v * inside as f64 / (sub * sub) as f64);
                    }
                }
            }
            best = best.max(pairwise_sum(&terms) * g.cell_area());
        }
        best
    });
    rows.into_iter().fold(0.0, f64::max)
}

/// Distance between two caps as subsets of R³.
pub fn cap_distance(t1: &Cap, t2: &Cap) -> f64 {
    let planar = dist2(t1.center, t2.center) - t1.radius - t2.radius;
    if planar <= 0.0 {
        return 0.0;
    }
    let disk_point = |c: &Cap, r: f64, a: f64| {
        let rr = r.clamp(0.0, 1.0) * c.radius;
        [c.center[0] + rr * a.cos(), c.center[1] + rr * a.sin()]
    };
    let d3 = |a: Point2, b: Point2| {
        let la = lift(a);
        let lb = lift(b);
        ((la[0] - lb[0]).powi(2) + (la[1] - lb[1]).powi(2) + (la[2] - lb[2]).powi(2)).sqrt()
    };
    // coarse polar search then coordinate refinement
    let na = 32;
    let nr = 5;
    let mut best = (f64::INFINITY, [0.0; 4]);
    let cand = |c: &Cap| {
        let mut v = Vec::new();
        for ir in 0..=nr {
            for ia in 0..na {
                let r = ir as f64 / nr as f64;
                let a = 2.0 * std::f64::consts::PI * ia as f64 / na as f64;
                v.push((r, a, disk_point(c, r, a)));
            }
        }
        v
    };
    let c1 = cand(t1);
    let c2 = cand(t2);
    for &(r1, a1, p1) in &c1 {
        for &(r2, a2, p2) in &c2 {
            let d = d3(p1, p2);
            if d < best.0 {
                best = (d, [r1, a1, r2, a2]);
            }
        }
    }
    let mut x = best.1;
    let mut val = best.0;
    let mut steps = [0.1, 0.2, 0.1, 0.2];
    let eval = |x: &[f64; 4]| d3(disk_point(t1, x[0], x[1]), disk_point(t2, x[2], x[3]));
    for _ in 0..200 {
        let mut improved = false;
        for k in 0..4 {
            for s in [-1.0, 1.0] {
                let mut y = x;
                y[k] += s * steps[k];
                if k % 2 == 0 {
                    y[k] = y[k].clamp(0.0, 1.0);
                }
                let v = eval(&y);
                if v < val {
                    val = v;
                    x = y;
                    improved = true;
                }
            }
        }
        if !improved {
            for s in &mut steps {
                *s *= 0.5;
            }
            if steps[1] < 1e-12 {
                break;
            }
        }
    }
    val.max(planar)
}

/// `true` iff the caps are at distance at least `1/K` in R³.
pub fn non_adjacent(t1: &Cap, t2: &Cap, k: f64) -> bool {
    cap_distance(t1, t2) >= 1.0 / k
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one() -> Complex64 {
        Complex64::new(1.0, 0.0)
    }

    #[test]
    fn unit_radius_gives_single_cap() {
        let d = make_cap_decomposition(1.0, 1.0).unwrap();
        assert_eq!(d.caps.len(), 1);
        assert_eq!(d.caps[0].center, [0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_cap_decomposition(0.0, 1.0).is_err());
        assert!(make_cap_decomposition(-0.5, 1.0).is_err());
        assert!(make_cap_decomposition(0.5, 0.9).is_err());
        assert!(validate_lambda_class(&[], 0.5).is_err());
    }

    #[test]
    fn multiplicity_four_radii_and_overlap() {
        let d = make_cap_decomposition(0.25, 4.0).unwrap();
        for c in &d.caps {
            assert!(c.radius >= 0.25 - 1e-15 && c.radius <= 0.5 + 1e-15);
        }
        assert!(d.max_overlap(0.01) <= 5 * 4);
        let d1 = make_cap_decomposition(0.25, 1.0).unwrap();
        assert!(d1.max_overlap(0.01) <= 5);
        assert!(d.covering_radius(0.01) <= 0.5);
    }

    #[test]
    fn split_zero_and_reconstruction() {
        let dec = make_cap_decomposition(0.25, 1.0).unwrap();
        let grid = SampleGrid::unit_disk(64);
        let zero = SurfaceFunction::zeros(grid, None);
        for p in split_function(&zero, &dec, SplitMode::Disjoint) {
            assert!(p.is_zero());
        }
        let f = SurfaceFunction::from_fn(grid, None, |w| Complex64::new(w[0], w[1] * w[1]));
        for mode in [SplitMode::Disjoint, SplitMode::Smooth] {
            let pieces = split_function(&f, &dec, mode);
            for (p, c) in pieces.iter().zip(&dec.caps) {
                for j in 0..p.grid.ny {
                    for i in 0..p.grid.nx {
                        if p.at(i, j).norm() > 0.0 {
                            assert!(c.contains(p.grid.point(i, j)));
                        }
                    }
                }
            }
            let total = SurfaceFunction::sum(&pieces).unwrap().regrid(grid).unwrap();
            for (a, b) in total.samples.iter().zip(&f.samples) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn disjoint_split_conserves_energy() {
        let dec = make_cap_decomposition(0.2, 1.0).unwrap();
        let f = SurfaceFunction::from_fn(SampleGrid::unit_disk(80), None, |_| one());
        let pieces = split_function(&f, &dec, SplitMode::Disjoint);
        let e: f64 = pieces.iter().map(|p| p.l2_squared()).sum();
        assert!((e - f.l2_squared()).abs() < 1e-12);
    }

    #[test]
    fn split_of_cap_indicator_touches_only_meeting_caps() {
        let dec = make_cap_decomposition(0.25, 1.0).unwrap();
        let t0 = Cap::new([0.3, -0.1], 0.15).unwrap();
        let f = SurfaceFunction::from_fn(SampleGrid::unit_disk(100), Some(t0), |_| one());
        let pieces = split_function(&f, &dec, SplitMode::Disjoint);
        for (p, c) in pieces.iter().zip(&dec.caps) {
            if !p.is_zero() {
                assert!(dist2(c.center, t0.center) <= c.radius + t0.radius);
            }
        }
    }

    #[test]
    fn lambda_class_zero_normalized_and_cap() {
        let zero = SurfaceFunction::zeros(SampleGrid::unit_disk(16), None);
        let rep = validate_lambda_class(&[zero], 4.0).unwrap();
        assert!(rep.ok && rep.worst_ratio == 0.0);

        let f = SurfaceFunction::from_fn(SampleGrid::unit_disk(128), None, |w| {
            Complex64::new(1.0 + w[0], 0.5 * w[1])
        });
        let sup = f.sup();
        let g = f.scaled(Complex64::new(1.0 / (std::f64::consts::PI.sqrt() * sup), 0.0));
        for r in [1.0, 4.0, 16.0, 64.0] {
            let rep = validate_lambda_class(std::slice::from_ref(&g), r).unwrap();
            assert!(rep.ok, "R={r} worst={}", rep.worst_ratio);
        }

        // indicator of a cap at R = 4: a ball of radius 1/2 around the cap
        // center sees |ω|² + |ω|⁴ <= 1/4 inside the cap, area π(√2-1)/2.
        let cap = Cap::new([0.0, 0.0], 0.6).unwrap();
        let f = SurfaceFunction::from_fn(SampleGrid::unit_disk(400), Some(cap), |_| one());
        let rep = validate_lambda_class(&[f], 4.0).unwrap();
        let expected = 4.0 * std::f64::consts::PI * (2f64.sqrt() - 1.0) / 2.0;
        assert!(rep.worst_ratio >= expected * 0.99, "{}", rep.worst_ratio);
        assert!(!rep.ok);
    }

    #[test]
    fn cap_adjacency() {
        let a = Cap::new([0.5, 0.0], 0.1).unwrap();
        let b = Cap::new([-0.5, 0.0], 0.1).unwrap();
        assert!(!non_adjacent(&a, &a, 10.0));
        assert!(non_adjacent(&a, &b, 10.0));
        assert!((cap_distance(&a, &b) - 0.8).abs() < 1e-6);
        let c = Cap::new([0.7, 0.0], 0.1).unwrap();
        assert_eq!(cap_distance(&a, &c), 0.0);
        assert!(!non_adjacent(&a, &c, 10.0));
    }
}
