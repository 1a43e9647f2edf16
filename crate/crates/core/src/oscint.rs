//! Evaluation of the extension operator
//! `Ef(x) = ∫_{|ω|≤1} e^{-2πi x·(ω,|ω|²)} f(ω) dω`, its per-slice FFT fast
//! path, the dual operator `ℛg(ξ) = ∫ g(x) H(x) e^{-2πi x·ξ} dx`, and
//! weighted `L^p` norms on evaluation grids.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{param, LabError, Result};
use crate::geometry::{lift, norm2, Cap, Point2, Point3, SampleGrid, SurfaceFunction};
use crate::io::{read_f64s, write_f64s, FieldHeader};
use crate::numerics::{gauss_legendre, pairwise_sum, pairwise_sum_c, par_map};
use crate::weights::Weight;

/// `e^{-2πi t}`, with `t` reduced mod 1 first.
pub(crate) fn cis_neg(t: f64) -> Complex64 {
    let r = t.rem_euclid(1.0);
    let a = -2.0 * std::f64::consts::PI * r;
    Complex64::new(a.cos(), a.sin())
}

/// Something that can be integrated against the paraboloid measure.
pub trait Density: Sync {
    fn value(&self, w: Point2) -> Complex64;
    /// Disk in the parameter plane containing the support.
    fn support(&self) -> (Point2, f64);
}

impl Density for SurfaceFunction {
    fn value(&self, w: Point2) -> Complex64 {
        self.eval(w)
    }

    fn support(&self) -> (Point2, f64) {
        match self.support_cap {
            Some(c) => (c.center, c.radius),
            None => ([0.0, 0.0], 1.0),
        }
    }
}

/// A closure density, zero outside the unit disk and the optional cap.
pub struct FnDensity<F> {
    pub f: F,
    pub cap: Option<Cap>,
}

impl<F: Fn(Point2) -> Complex64 + Sync> Density for FnDensity<F> {
    fn value(&self, w: Point2) -> Complex64 {
        if norm2(w) > 1.0 || self.cap.is_some_and(|c| !c.contains(w)) {
            return Complex64::new(0.0, 0.0);
        }
        (self.f)(w)
    }

    fn support(&self) -> (Point2, f64) {
        match self.cap {
            Some(c) => (c.center, c.radius),
            None => ([0.0, 0.0], 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    /// Masked midpoint rule on the sample lattice.
    Midpoint,
    /// Gauss-Legendre in the radius, trapezoid in the angle.
    Polar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<Point2>,
    pub weights: Vec<f64>,
    pub kind: RuleKind,
    /// Polynomial degree integrated exactly (disk-masking aside).
    pub exactness_degree: u32,
    /// Largest spacing between neighbouring nodes.
    pub resolution: f64,
}

/// Number of lattice nodes `-1 + (k + 1/2)h`, `h = 2/n`, inside the closed
/// unit disk.
fn lattice_count_in_disk(n: usize) -> usize {
    let h = 2.0 / n as f64;
    let mut count = 0;
    for j in 0..n {
        let y = -1.0 + (j as f64 + 0.5) * h;
        for i in 0..n {
            let x = -1.0 + (i as f64 + 0.5) * h;
            if x * x + y * y <= 1.0 {
                count += 1;
            }
        }
    }
    count
}

fn lattice_n(step: f64) -> Result<usize> {
    let n = 2.0 / step;
    let nr = n.round();
    if nr < 1.0 || (n - nr).abs() > 1e-9 * n {
        return Err(param("grid_step", format!("2/step must be an integer, got {n}")));
    }
    Ok(nr as usize)
}

/// Per-node weight of the masked midpoint rule with step `step`: the cell
/// area rescaled so that the weights over the whole disk sum to `π`.
pub fn lattice_weight(step: f64) -> Result<f64> {
    let n = lattice_n(step)?;
    Ok(std::f64::consts::PI / lattice_count_in_disk(n) as f64)
}

impl QuadratureRule {
    /// Masked midpoint rule on the in-disk nodes of `grid`.
    pub fn midpoint_on(grid: &SampleGrid) -> Result<Self> {
        let w = lattice_weight(grid.step)?;
        let mut nodes = Vec::new();
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let p = grid.point(i, j);
                if norm2(p) <= 1.0 {
                    nodes.push(p);
                }
            }
        }
        let weights = vec![w; nodes.len()];
        Ok(QuadratureRule { nodes, weights, kind: RuleKind::Midpoint, exactness_degree: 1, resolution: grid.step })
    }

    /// Midpoint rule over the whole disk with `n` cells per axis.
    pub fn midpoint(n: usize) -> Result<Self> {
        Self::midpoint_on(&SampleGrid::unit_disk(n))
    }

    /// Polar product rule on the disk of center `c` and radius `rho`.
    pub fn polar(center: Point2, rho: f64, n_radial: usize, n_angle: usize) -> Result<Self> {
        if n_radial == 0 || n_angle == 0 || !(rho > 0.0) {
            return Err(param("rule", "polar rule needs positive sizes"));
        }
        let (x, w) = gauss_legendre(n_radial);
        let mut nodes = Vec::with_capacity(n_radial * n_angle);
        let mut weights = Vec::with_capacity(n_radial * n_angle);
        let da = 2.0 * std::f64::consts::PI / n_angle as f64;
        for (xr, wr) in x.iter().zip(&w) {
            let r = 0.5 * rho * (xr + 1.0);
            for k in 0..n_angle {
                let a = k as f64 * da;
                nodes.push([center[0] + r * a.cos(), center[1] + r * a.sin()]);
                weights.push(0.5 * rho * wr * r * da);
            }
        }
        let degree = (2 * n_radial as u32 - 2).min(n_angle as u32 - 1);
        let resolution = (rho / n_radial as f64).max(rho * da);
        Ok(QuadratureRule { nodes, weights, kind: RuleKind::Polar, exactness_degree: degree, resolution })
    }

    pub fn total_weight(&self) -> f64 {
        pairwise_sum(&self.weights)
    }
}

/// Node count across the support diameter needed to resolve the phase at
/// the given points: ten nodes per oscillation of
/// `x·(ω, |ω|²)` over the support disk.
pub fn required_nodes(support: (Point2, f64), points: &[Point3]) -> usize {
    let (c, r) = support;
    let spread = points
        .iter()
        .map(|x| {
            let xp = (x[0] * x[0] + x[1] * x[1]).sqrt();
            xp * r + x[2].abs() * (r * r + 2.0 * norm2(c) * r)
        })
        .fold(0.0, f64::max);
    (10.0 * spread).ceil() as usize
}

/// Direct quadrature of `Ef` at each point.
pub fn extend_direct<D: Density + ?Sized>(
    f: &D,
    points: &[Point3],
    rule: &QuadratureRule,
) -> Result<Vec<Complex64>> {
    let support = f.support();
    let need = required_nodes(support, points);
    let have = (2.0 * support.1 / rule.resolution).floor() as usize;
    if have < need {
        return Err(LabError::Refinement { required_nodes: need, have });
    }
    Ok(rule_sum(f, points, rule))
}

/// The rule's sum at each point with no resolution check: the extension
/// operator of the discrete measure carried by the rule's nodes.
pub fn extend_discrete<D: Density + ?Sized>(f: &D, points: &[Point3], rule: &QuadratureRule) -> Vec<Complex64> {
    rule_sum(f, points, rule)
}

fn rule_sum<D: Density + ?Sized>(f: &D, points: &[Point3], rule: &QuadratureRule) -> Vec<Complex64> {
    let terms: Vec<(Point3, Complex64)> = rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .filter_map(|(&w, &wt)| {
            let v = f.value(w);
            (v.re != 0.0 || v.im != 0.0).then(|| (lift(w), v * wt))
        })
        .collect();
    par_map(points.len(), |i| {
        let x = points[i];
        let vals: Vec<Complex64> = terms
            .iter()
            .map(|(xi, v)| v * cis_neg(x[0] * xi[0] + x[1] * xi[1] + x[2] * xi[2]))
            .collect();
        pairwise_sum_c(&vals)
    })
}

/// Cell-centered box grid: node `i` on axis `a` sits at
/// `center[a] - half[a] + (i + 1/2)·step[a]`, `step[a] = 2·half[a]/counts[a]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid3 {
    pub center: Point3,
    pub half: [f64; 3],
    pub counts: [usize; 3],
}

impl Grid3 {
    pub fn new(center: Point3, half: [f64; 3], counts: [usize; 3]) -> Result<Self> {
        if half.iter().any(|&h| !(h > 0.0)) || counts.iter().any(|&c| c == 0) {
            return Err(param("grid", "half-widths and counts must be positive"));
        }
        Ok(Grid3 { center, half, counts })
    }

    /// Cube `[-w, w]³` around `center`.
    pub fn cube(center: Point3, w: f64, n: usize) -> Result<Self> {
        Self::new(center, [w; 3], [n; 3])
    }

    pub fn steps(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| 2.0 * self.half[a] / self.counts[a] as f64)
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.steps().iter().product()
    }

    pub fn coord(&self, a: usize, i: usize) -> f64 {
        self.center[a] - self.half[a] + (i as f64 + 0.5) * self.steps()[a]
    }

    pub fn node(&self, idx: usize) -> Point3 {
        let i = idx % self.counts[0];
        let j = (idx / self.counts[0]) % self.counts[1];
        let k = idx / (self.counts[0] * self.counts[1]);
        [self.coord(0, i), self.coord(1, j), self.coord(2, k)]
    }

    pub fn nodes(&self) -> Vec<Point3> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    fn header(&self, real: bool) -> FieldHeader {
        FieldHeader { center: self.center, half: self.half, steps: self.steps(), counts: self.counts, real }
    }

    fn from_header(h: &FieldHeader) -> Result<Self> {
        Self::new(h.center, h.half, h.counts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField3 {
    pub grid: Grid3,
    pub values: Vec<Complex64>,
}

impl ComplexField3 {
    pub fn zeros(grid: Grid3) -> Self {
        ComplexField3 { grid, values: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    pub fn from_values(grid: Grid3, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::GridMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(LabError::Malformed("non-finite field value".into()));
        }
        Ok(ComplexField3 { grid, values })
    }

    pub fn modulus(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn write<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        self.grid.header(false).write(w)?;
        let flat: Vec<f64> = self.values.iter().flat_map(|v| [v.re, v.im]).collect();
        write_f64s(w, &flat)
    }

    pub fn read<R: std::io::Read>(r: &mut R) -> Result<Self> {
        let h = FieldHeader::read(r)?;
        if h.real {
            return Err(LabError::Malformed("expected a complex payload".into()));
        }
        let grid = Grid3::from_header(&h)?;
        let flat = read_f64s(r, 2 * grid.len())?;
        let values = flat.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        Self::from_values(grid, values)
    }
}

/// Real scalar field on a [`Grid3`].
#[derive(Debug, Clone, PartialEq)]
pub struct RealField3 {
    pub grid: Grid3,
    pub values: Vec<f64>,
}

impl RealField3 {
    pub fn write<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        self.grid.header(true).write(w)?;
        write_f64s(w, &self.values)
    }
}

/// Output lattice length `L = 1/(h Δ)` for one axis, or `1` for a single node.
fn transform_length(h: f64, delta: f64, count: usize) -> Result<usize> {
    if count == 1 {
        return Ok(1);
    }
    let l = 1.0 / (h * delta);
    let lr = l.round();
    if lr < 1.0 || (l - lr).abs() > 1e-9 * l {
        return Err(param(
            "grid",
            format!("evaluation step {delta} is not commensurate with sample step {h} (1/(h·Δ) = {l})"),
        ));
    }
    Ok(lr as usize)
}

/// `Ef` on every node of `grid`, one 2-D FFT per `x₃` slice.
///
/// For fixed `x₃`, `Ef(·, x₃)` is the discrete Fourier transform of
/// `f(ω) e^{-2πi x₃|ω|²}`; with sample step `h` and node step `Δ` the
/// transform closes on a lattice of length `1/(hΔ)`, which must be an
/// integer on both axes.
pub fn extend_slices(f: &SurfaceFunction, grid: &Grid3) -> Result<ComplexField3> {
    let g = f.grid;
    let w = lattice_weight(g.step)?;
    let steps = grid.steps();
    let l1 = transform_length(g.step, steps[0], grid.counts[0])?;
    let l2 = transform_length(g.step, steps[1], grid.counts[1])?;
    let x1 = grid.coord(0, 0);
    let x2 = grid.coord(1, 0);

    let mut planner = FftPlanner::<f64>::new();
    let f1: Arc<dyn Fft<f64>> = planner.plan_fft_forward(l1);
    let f2: Arc<dyn Fft<f64>> = planner.plan_fft_forward(l2);

    let samples: Vec<(usize, usize, Point2, Complex64)> = (0..g.ny)
        .flat_map(|j| (0..g.nx).map(move |i| (i, j)))
        .filter_map(|(i, j)| {
            let v = f.at(i, j);
            let p = g.point(i, j);
            (norm2(p) <= 1.0 && (v.re != 0.0 || v.im != 0.0)).then_some((i, j, p, v * w))
        })
        .collect();

    // post-transform phases depend only on the output indices
    let post1: Vec<Complex64> = (0..grid.counts[0])
        .map(|p| cis_neg(x1 * g.origin[0] + p as f64 * steps[0] * g.origin[0]))
        .collect();
    let post2: Vec<Complex64> = (0..grid.counts[1])
        .map(|p| cis_neg(x2 * g.origin[1] + p as f64 * steps[1] * g.origin[1]))
        .collect();

    let slices = par_map(grid.counts[2], |k| {
        let x3 = grid.coord(2, k);
        let mut buf = vec![Complex64::new(0.0, 0.0); l1 * l2];
        for &(i, j, p, v) in &samples {
            let phase = x3 * (p[0] * p[0] + p[1] * p[1]) + x1 * i as f64 * g.step + x2 * j as f64 * g.step;
            buf[(j % l2) * l1 + (i % l1)] += v * cis_neg(phase);
        }
        for row in buf.chunks_exact_mut(l1) {
            f1.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); l2];
        for c in 0..l1 {
            for r in 0..l2 {
                col[r] = buf[r * l1 + c];
            }
            f2.process(&mut col);
            for r in 0..l2 {
                buf[r * l1 + c] = col[r];
            }
        }
        let mut out = Vec::with_capacity(grid.counts[0] * grid.counts[1]);
        for p2 in 0..grid.counts[1] {
            for p1 in 0..grid.counts[0] {
                out.push(buf[(p2 % l2) * l1 + (p1 % l1)] * post1[p1] * post2[p2]);
            }
        }
        out
    });
    ComplexField3::from_values(*grid, slices.into_iter().flatten().collect())
}

/// `ℛg(ω, |ω|²) = Σ_x g(x) H(x) e^{-2πi x·(ω,|ω|²)} ΔV` by direct summation.
pub fn dual_restrict(g: &ComplexField3, h: &Weight, omegas: &[Point2]) -> Vec<Complex64> {
    let dv = g.grid.cell_volume();
    let terms: Vec<(Point3, Complex64)> = (0..g.grid.len())
        .filter_map(|i| {
            let v = g.values[i];
            if v.re == 0.0 && v.im == 0.0 {
                return None;
            }
            let x = g.grid.node(i);
            let hv = h.eval(x);
            (hv != 0.0).then(|| (x, v * hv * dv))
        })
        .collect();
    par_map(omegas.len(), |k| {
        let xi = lift(omegas[k]);
        let vals: Vec<Complex64> = terms
            .iter()
            .map(|(x, v)| v * cis_neg(x[0] * xi[0] + x[1] * xi[1] + x[2] * xi[2]))
            .collect();
        pairwise_sum_c(&vals)
    })
}

/// `(Σ_{x ∈ B} |F(x)|^p H(x) ΔV)^{1/p}` over grid nodes in the ball; `H ≡ 1`
/// when `h` is `None`.
pub fn weighted_lp_norm(
    field: &ComplexField3,
    h: Option<&Weight>,
    p: f64,
    center: Point3,
    radius: f64,
) -> Result<f64> {
    let vals: Vec<f64> = field.values.iter().map(|v| v.norm()).collect();
    real_weighted_lp_norm(&field.grid, &vals, h, p, center, radius)
}

/// [`weighted_lp_norm`] for a real field given by its node values.
pub fn real_weighted_lp_norm(
    grid: &Grid3,
    vals: &[f64],
    h: Option<&Weight>,
    p: f64,
    center: Point3,
    radius: f64,
) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(param("p", format!("need p >= 1, got {p}")));
    }
    if vals.len() != grid.len() {
        return Err(LabError::GridMismatch("value count does not match grid".into()));
    }
    let dv = grid.cell_volume();
    let r2 = radius * radius;
    let terms = par_map(grid.counts[2], |k| {
        let mut row = Vec::new();
        for j in 0..grid.counts[1] {
            for i in 0..grid.counts[0] {
                let x = [grid.coord(0, i), grid.coord(1, j), grid.coord(2, k)];
                let d2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2) + (x[2] - center[2]).powi(2);
                if d2 > r2 {
                    continue;
                }
                let idx = (k * grid.counts[1] + j) * grid.counts[0] + i;
                let hv = h.map_or(1.0, |w| w.eval(x));
                row.push(vals[idx].abs().powf(p) * hv);
            }
        }
        pairwise_sum(&row)
    });
    Ok((pairwise_sum(&terms) * dv).powf(1.0 / p))
}
