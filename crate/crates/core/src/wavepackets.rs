//! Wave packet decomposition of a function supported in an `R^{-1/2}` cap.
//!
//! The sample lattice of step `h` makes the discrete extension periodic in
//! `x'` with period `P = 1/h`. On that period we lay a square lattice of
//! tube positions with spacing `s = P/M` and a smooth partition of unity
//! `Σ_k ψ_k = 1` subordinate to it. With `F` the DFT of `f` on an `L × L`
//! lattice (which samples `Ef(·, 0)` at spacing `P/L`),
//!
//! `f_T = η · IDFT(ψ_T F)`,
//!
//! where `η` is a smooth cutoff equal to 1 on `2θ` and vanishing outside
//! `3θ`. Since `f` lives on `θ`, `Σ_T f_T = η f = f` exactly. Tubes are
//! parallel to the normal `v(θ) ∝ (-2ω₀, 1)` through the lattice positions
//! in the plane `x₃ = 0`, taken modulo the period.

use std::sync::Arc;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{param, Result};
use crate::geometry::{paraboloid_normal, Cap, Point2, Point3, SampleGrid, SurfaceFunction};
use crate::numerics::{pairwise_sum, pairwise_sum_c, par_map, smoothstep};
use crate::oscint::{cis_neg, extend_discrete, lattice_weight, QuadratureRule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tube {
    /// Point of the core line closest to the origin.
    pub anchor: Point3,
    pub direction: Point3,
    pub radius: f64,
    /// Half-length of the slab `|⟨x - anchor, v⟩| ≤ half_length`.
    pub half_length: f64,
    /// Where the core line crosses `x₃ = 0`, in `[-P/2, P/2)²`.
    pub foot: Point2,
    pub lattice: (usize, usize),
}

/// Construction parameters; see [`PacketParams::new`] for defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketParams {
    pub r: f64,
    pub delta: f64,
    /// Decay order; sets the smoothness of the cutoffs.
    pub n: u32,
    /// Tube lattice spacing as a fraction of the tube radius.
    pub spacing_ratio: f64,
    /// Smoothstep order used for `ψ` and `η`.
    pub cutoff_order: u32,
}

impl PacketParams {
    pub fn new(r: f64, delta: f64, n: u32) -> Self {
        PacketParams { r, delta, n, spacing_ratio: 0.5, cutoff_order: 4 * n }
    }

    pub fn tube_radius(&self) -> f64 {
        self.r.powf(0.5 + self.delta)
    }
}

/// A lazily evaluated wave packet decomposition.
pub struct PacketSet {
    pub theta: Cap,
    pub params: PacketParams,
    pub tubes: Vec<Tube>,
    /// `T ∩ B(0, R) ≠ ∅`.
    pub in_ball: Vec<bool>,
    /// Whether [`PacketSet::active`] keeps only tubes meeting `B(0, R)`.
    pub restricted_to_ball: bool,
    /// Sample grid covering `3θ`.
    pub grid: SampleGrid,
    pub period: f64,
    pub l: usize,
    pub m: usize,
    pub spacing: f64,
    weight: f64,
    spectrum: Vec<Complex64>,
    /// `η` times the disk mask on `grid`.
    eta: Vec<f64>,
    /// Nonzero `(p, φ_k(p))` for each 1-D lattice index `k`.
    phi: Vec<Vec<(usize, f64)>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

fn wrap(t: f64, period: f64) -> f64 {
    (t + 0.5 * period).rem_euclid(period) - 0.5 * period
}

fn fft2(buf: &mut [Complex64], l: usize, plan: &Arc<dyn Fft<f64>>) {
    for row in buf.chunks_exact_mut(l) {
        plan.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); l];
    for c in 0..l {
        for r in 0..l {
            col[r] = buf[r * l + c];
        }
        plan.process(&mut col);
        for r in 0..l {
            buf[r * l + c] = col[r];
        }
    }
}

/// Decomposes `f`, supported in the cap `theta`, into wave packets at scale `R`.
pub fn decompose(f: &SurfaceFunction, theta: Cap, params: PacketParams) -> Result<PacketSet> {
    let r = params.r;
    if !(r >= 4.0) {
        return Err(param("R", format!("need R >= 4, got {r}")));
    }
    if !(params.delta > 0.0 && params.delta < 0.5) {
        return Err(param("delta", "need 0 < delta < 1/2"));
    }
    if params.n == 0 {
        return Err(param("N", "decay order must be positive"));
    }
    let base = r.powf(-0.5);
    if theta.radius < base * (1.0 - 1e-9) || theta.radius > 3.0 * base * (1.0 + 1e-9) {
        return Err(param(
            "theta",
            format!("cap radius {} outside [R^-1/2, 3R^-1/2] for R = {r}", theta.radius),
        ));
    }
    let h = f.grid.step;
    let period = 1.0 / h;
    let rt = params.tube_radius();
    let w0 = crate::geometry::norm2(theta.center);
    let needed = 2.0 * (r * (1.0 + 2.0 * w0) + rt);
    if period < needed {
        return Err(param(
            "grid_step",
            format!("sample step {h} gives spatial period {period}; need at least {needed}"),
        ));
    }

    let big = theta.scale(3.0);
    let grid = SampleGrid::around_cap(&big, h);
    for j in 0..f.grid.ny {
        for i in 0..f.grid.nx {
            if f.at(i, j).norm() > 0.0 && !theta.contains(f.grid.point(i, j)) {
                return Err(param("f", "samples must vanish outside theta"));
            }
        }
    }
    let local = f.regrid(grid)?;
    // room for the cutoff blur on both sides
    let l = smooth_size(grid.nx.max(grid.ny) + 16);
    let dx = period / l as f64;

    let spacing_target = params.spacing_ratio * rt;
    let m = ((period / spacing_target).round() as usize).max(2);
    let spacing = period / m as f64;

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(l);
    let inv = planner.plan_fft_inverse(l);

    let mut spectrum = vec![Complex64::new(0.0, 0.0); l * l];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            spectrum[j * l + i] = local.at(i, j);
        }
    }
    fft2(&mut spectrum, l, &fwd);

    let order = params.cutoff_order;
    let mut eta = vec![0.0; grid.len()];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let w = grid.point(i, j);
            if crate::geometry::norm2(w) > 1.0 {
                continue;
            }
            let d = crate::geometry::dist2(w, theta.center);
            eta[j * grid.nx + i] = 1.0 - smoothstep(order, (d - 2.0 * theta.radius) / theta.radius);
        }
    }

    let phi: Vec<Vec<(usize, f64)>> = (0..m)
        .map(|k| {
            let c = k as f64 * spacing;
            (0..l)
                .filter_map(|p| {
                    let u = wrap(p as f64 * dx - c, period) / spacing;
                    let v = if u.abs() >= 1.0 { 0.0 } else { 1.0 - smoothstep(order, u.abs()) };
                    (v > 0.0).then_some((p, v))
                })
                .collect()
        })
        .collect();

    let v = paraboloid_normal(theta.center);
    let mut tubes = Vec::with_capacity(m * m);
    let mut in_ball = Vec::with_capacity(m * m);
    for k2 in 0..m {
        for k1 in 0..m {
            let foot = [wrap(k1 as f64 * spacing, period), wrap(k2 as f64 * spacing, period)];
            let anchor = closest_to_origin([foot[0], foot[1], 0.0], v);
            let mut near = f64::INFINITY;
            for a in -1..=1 {
                for b in -1..=1 {
                    let c = [foot[0] + a as f64 * period, foot[1] + b as f64 * period, 0.0];
                    near = near.min(norm3(closest_to_origin(c, v)));
                }
            }
            tubes.push(Tube { anchor, direction: v, radius: rt, half_length: r, foot, lattice: (k1, k2) });
            in_ball.push(near <= r + rt);
        }
    }

    Ok(PacketSet {
        theta,
        params,
        tubes,
        in_ball,
        restricted_to_ball: true,
        grid,
        period,
        l,
        m,
        spacing,
        weight: lattice_weight(h)?,
        spectrum,
        eta,
        phi,
        fwd,
        inv,
    })
}

/// Smallest `n ≥ min` of the form `2^a 3^b 5^c`.
fn smooth_size(min: usize) -> usize {
    (min..).find(|&n| {
        let mut k = n;
        for p in [2, 3, 5] {
            while k % p == 0 {
                k /= p;
            }
        }
        k == 1
    })
    .unwrap()
}

fn norm3(x: Point3) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

fn dot3(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn closest_to_origin(c: Point3, v: Point3) -> Point3 {
    let t = dot3(c, v);
    [c[0] - t * v[0], c[1] - t * v[1], c[2] - t * v[2]]
}

impl PacketSet {
    pub fn len(&self) -> usize {
        self.tubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tubes.is_empty()
    }

    /// Indices of the tubes the decomposition keeps.
    pub fn active(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.restricted_to_ball || self.in_ball[i]).collect()
    }

    /// Distance from `x` to the core line of tube `t`, using the nearest
    /// periodic image.
    pub fn distance_to_tube(&self, t: usize, x: Point3) -> f64 {
        let tube = &self.tubes[t];
        let w0 = self.theta.center;
        let y = [x[0] + 2.0 * x[2] * w0[0], x[1] + 2.0 * x[2] * w0[1]];
        let d = [wrap(y[0] - tube.foot[0], self.period), wrap(y[1] - tube.foot[1], self.period)];
        let off = [d[0], d[1], 0.0];
        let along = dot3(off, tube.direction);
        (d[0] * d[0] + d[1] * d[1] - along * along).max(0.0).sqrt()
    }

    pub fn contains(&self, t: usize, x: Point3) -> bool {
        let tube = &self.tubes[t];
        self.distance_to_tube(t, x) <= tube.radius
            && dot3([x[0] - tube.anchor[0], x[1] - tube.anchor[1], x[2] - tube.anchor[2]], tube.direction).abs()
                <= tube.half_length
    }

    /// Distance between the (parallel) core lines of two tubes.
    pub fn axis_distance(&self, a: usize, b: usize) -> f64 {
        let fa = self.tubes[a].foot;
        let fb = self.tubes[b].foot;
        let d = [wrap(fb[0] - fa[0], self.period), wrap(fb[1] - fa[1], self.period)];
        let along = dot3([d[0], d[1], 0.0], self.tubes[a].direction);
        (d[0] * d[0] + d[1] * d[1] - along * along).max(0.0).sqrt()
    }

    fn multiplier_spectrum(&self, coeffs: &[(usize, f64)]) -> Vec<Complex64> {
        let l = self.l;
        let mut buf = vec![Complex64::new(0.0, 0.0); l * l];
        for &(t, c) in coeffs {
            let (k1, k2) = self.tubes[t].lattice;
            for &(p2, v2) in &self.phi[k2] {
                for &(p1, v1) in &self.phi[k1] {
                    let idx = p2 * l + p1;
                    buf[idx] += self.spectrum[idx] * (c * v1 * v2);
                }
            }
        }
        buf
    }

    /// `IDFT(Σ c_T ψ_T F)` on the `L × L` index lattice (before `η`).
    fn raw_samples(&self, coeffs: &[(usize, f64)]) -> Vec<Complex64> {
        let mut buf = self.multiplier_spectrum(coeffs);
        fft2(&mut buf, self.l, &self.inv);
        let s = 1.0 / (self.l * self.l) as f64;
        for v in &mut buf {
            *v *= s;
        }
        buf
    }

    fn to_function(&self, raw: &[Complex64]) -> SurfaceFunction {
        let g = self.grid;
        let mut out = SurfaceFunction::zeros(g, Some(self.theta.scale(3.0)));
        for j in 0..g.ny {
            for i in 0..g.nx {
                let e = self.eta[j * g.nx + i];
                if e > 0.0 {
                    out.samples[j * g.nx + i] = raw[j * self.l + i] * e;
                }
            }
        }
        out
    }

    /// `Σ c_T f_T` as a surface function on the `3θ` grid.
    pub fn combined(&self, coeffs: &[(usize, f64)]) -> SurfaceFunction {
        self.to_function(&self.raw_samples(coeffs))
    }

    /// The packet `f_T`.
    pub fn packet(&self, t: usize) -> SurfaceFunction {
        self.combined(&[(t, 1.0)])
    }

    /// Sum of the packets selected by `mask`.
    pub fn subset_sum(&self, mask: &[bool]) -> SurfaceFunction {
        let coeffs: Vec<(usize, f64)> =
            mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| (i, 1.0)).collect();
        self.combined(&coeffs)
    }

    /// `‖f_T‖²₂` for every tube.
    pub fn energies(&self) -> Vec<f64> {
        par_map(self.len(), |t| self.packet(t).l2_squared())
    }

    /// Spatial lattice coordinate of index `p` (wrapped into `[-P/2, P/2)`).
    pub fn lattice_coord(&self, p: usize) -> f64 {
        wrap(p as f64 * self.period / self.l as f64, self.period)
    }

    /// `E[Σ c_T f_T](x', x₃)` at every `x'` of the spatial lattice, in
    /// index order `p₂ · L + p₁`.
    pub fn extension_slice(&self, raw: &[Complex64], x3: f64) -> Vec<Complex64> {
        let g = self.grid;
        let l = self.l;
        let mut buf = vec![Complex64::new(0.0, 0.0); l * l];
        for j in 0..g.ny {
            for i in 0..g.nx {
                let e = self.eta[j * g.nx + i];
                if e == 0.0 {
                    continue;
                }
                let w = g.point(i, j);
                buf[j * l + i] = raw[j * l + i] * e * cis_neg(x3 * (w[0] * w[0] + w[1] * w[1]));
            }
        }
        fft2(&mut buf, l, &self.fwd);
        for p2 in 0..l {
            let y2 = p2 as f64 * self.period / l as f64;
            for p1 in 0..l {
                let y1 = p1 as f64 * self.period / l as f64;
                buf[p2 * l + p1] *= self.weight * cis_neg(y1 * g.origin[0] + y2 * g.origin[1]);
            }
        }
        buf
    }

    /// Samples for all tubes' packets, for repeated slice evaluation.
    pub fn raw_packet(&self, t: usize) -> Vec<Complex64> {
        self.raw_samples(&[(t, 1.0)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionReport {
    /// `max |Ef - Σ_{T ∈ 𝕋(θ)} Ef_T|` over the probes.
    pub max_err: f64,
    /// `max Σ_{T ∌ x} |Ef_T(x)|` over lattice probes.
    pub max_off_tube: f64,
    pub l1_norm: f64,
    /// `max_err / (R^{-N} ‖f‖₁)`.
    pub c_reconstruction: f64,
    /// `max_off_tube / (R^{-N} ‖f‖₁)`.
    pub c_off_tube: f64,
    pub probes: usize,
    pub seed: u64,
}

/// Probe-based check of the reconstruction and off-tube decay properties.
///
/// Reconstruction probes are uniform in `B(0, ball_radius)`; off-tube probes
/// are drawn from the spatial lattice on `slices` evenly spaced heights.
pub fn reconstruct_check(
    ps: &PacketSet,
    f: &SurfaceFunction,
    ball_radius: f64,
    probe_points: usize,
    slices: usize,
    seed: u64,
) -> Result<ReconstructionReport> {
    let l1 = f.l1();
    let r = ps.params.r;
    let scale = r.powi(-(ps.params.n as i32)) * l1;
    if l1 == 0.0 {
        return Ok(ReconstructionReport {
            max_err: 0.0,
            max_off_tube: 0.0,
            l1_norm: 0.0,
            c_reconstruction: 0.0,
            c_off_tube: 0.0,
            probes: probe_points,
            seed,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Point3> = (0..probe_points)
        .map(|_| loop {
            let p = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            if norm3(p) <= 1.0 {
                break [p[0] * ball_radius, p[1] * ball_radius, p[2] * ball_radius];
            }
        })
        .collect();

    // residual f - Σ_{𝕋(θ)} f_T = Σ_{T ∉ 𝕋(θ)} f_T
    let outside: Vec<(usize, f64)> =
        (0..ps.len()).filter(|&t| !ps.in_ball[t]).map(|t| (t, 1.0)).collect();
    let residual = ps.combined(&outside);
    let rule = QuadratureRule::midpoint_on(&residual.grid)?;
    let err = extend_discrete(&residual, &points, &rule);
    let max_err = err.iter().map(|v| v.norm()).fold(0.0, f64::max);

    let max_off = off_tube_tally(ps, ball_radius, probe_points, slices, &mut rng);
    Ok(ReconstructionReport {
        max_err,
        max_off_tube: max_off,
        l1_norm: l1,
        c_reconstruction: max_err / scale,
        c_off_tube: max_off / scale,
        probes: probe_points,
        seed,
    })
}

fn off_tube_tally(ps: &PacketSet, radius: f64, probes: usize, slices: usize, rng: &mut ChaCha8Rng) -> f64 {
    let slices = slices.max(1);
    let per = probes.div_ceil(slices);
    let l = ps.l;
    let mut plan: Vec<(f64, Vec<usize>)> = Vec::new();
    for s in 0..slices {
        let x3 = -radius + (s as f64 + 0.5) * 2.0 * radius / slices as f64;
        let rho2 = radius * radius - x3 * x3;
        let mut cand: Vec<usize> = (0..l * l)
            .filter(|&idx| {
                let a = ps.lattice_coord(idx % l);
                let b = ps.lattice_coord(idx / l);
                a * a + b * b <= rho2
            })
            .collect();
        cand.shuffle(rng);
        cand.truncate(per);
        cand.sort_unstable();
        plan.push((x3, cand));
    }
    // per tube, the off-tube contributions at every probe
    let contrib: Vec<Vec<f64>> = par_map(ps.len(), |t| {
        let raw = ps.raw_packet(t);
        let mut out = Vec::new();
        for (x3, idxs) in &plan {
            let field = ps.extension_slice(&raw, *x3);
            for &idx in idxs {
                let x = [ps.lattice_coord(idx % l), ps.lattice_coord(idx / l), *x3];
                out.push(if ps.contains(t, x) { 0.0 } else { field[idx].norm() });
            }
        }
        out
    });
    let n = contrib.first().map_or(0, |c| c.len());
    (0..n)
        .map(|k| pairwise_sum(&contrib.iter().map(|c| c[k]).collect::<Vec<_>>()))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalityReport {
    pub max_pairing: f64,
    /// `max_pairing / (R^{-N} ‖f‖₁²)`.
    pub constant: f64,
    pub pairs: usize,
}

/// `max |∫ f_{T₁} conj(f_{T₂}) dσ|` over pairs of disjoint tubes.
pub fn orthogonality_check(ps: &PacketSet, f: &SurfaceFunction) -> OrthogonalityReport {
    let l = ps.l;
    let rt = ps.params.tube_radius();
    let g = ps.grid;
    let area = g.cell_area();
    let per_tube: Vec<(f64, usize)> = par_map(ps.len(), |a| {
        let raw = ps.raw_packet(a);
        // u = η² g_a on the grid; its DFT pairs against ψ_b F
        let mut u = vec![Complex64::new(0.0, 0.0); l * l];
        for j in 0..g.ny {
            for i in 0..g.nx {
                let e = ps.eta[j * g.nx + i];
                u[j * l + i] = raw[j * l + i] * e * e;
            }
        }
        fft2(&mut u, l, &ps.fwd);
        let mut best: f64 = 0.0;
        let mut count = 0;
        for b in (a + 1)..ps.len() {
            if ps.axis_distance(a, b) <= 2.0 * rt {
                continue;
            }
            count += 1;
            let (k1, k2) = ps.tubes[b].lattice;
            let mut terms = Vec::new();
            for &(p2, v2) in &ps.phi[k2] {
                for &(p1, v1) in &ps.phi[k1] {
                    let idx = p2 * l + p1;
                    terms.push(u[idx] * (ps.spectrum[idx] * (v1 * v2)).conj());
                }
            }
            let s = pairwise_sum_c(&terms) * (area / (l * l) as f64);
            best = best.max(s.norm());
        }
        (best, count)
    });
    let l1 = f.l1();
    let max_pairing = per_tube.iter().map(|x| x.0).fold(0.0, f64::max);
    let pairs = per_tube.iter().map(|x| x.1).sum();
    let scale = ps.params.r.powi(-(ps.params.n as i32)) * l1 * l1;
    OrthogonalityReport {
        max_pairing,
        constant: if scale > 0.0 { max_pairing / scale } else { 0.0 },
        pairs,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub total: f64,
    pub input: f64,
    /// `total / input`.
    pub constant: f64,
}

pub fn energy_check(ps: &PacketSet, f: &SurfaceFunction) -> EnergyReport {
    let e = ps.energies();
    let total = pairwise_sum(&e);
    let input = f.l2_squared();
    EnergyReport { total, input, constant: if input > 0.0 { total / input } else { 0.0 } }
}

/// For each test cap `θ`, the ratio
/// `∫_{3θ} |Σ_l Σ_{T ∈ 𝒯_l} f_T|² / ∫_{10θ} |f|²`.
pub fn subfamily_l2_report(
    families: &[(&PacketSet, Vec<bool>)],
    f: &SurfaceFunction,
    test_caps: &[Cap],
) -> Result<Vec<f64>> {
    let parts: Vec<SurfaceFunction> = families.iter().map(|(ps, mask)| ps.subset_sum(mask)).collect();
    if parts.is_empty() {
        return Ok(vec![0.0; test_caps.len()]);
    }
    let total = SurfaceFunction::sum(&parts)?;
    Ok(test_caps
        .iter()
        .map(|c| {
            let big = c.scale(3.0);
            let lhs = total.l2_squared_where(|w| big.contains(w));
            let ten = c.scale(10.0);
            let rhs = f.l2_squared_where(|w| ten.contains(w));
            if rhs > 0.0 {
                lhs / rhs
            } else if lhs == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect())
}

/// Fraction of `Σ_T ‖f_T‖²` carried by tubes whose core line passes within
/// `within` of `y`.
pub fn energy_near(ps: &PacketSet, y: Point3, within: f64) -> f64 {
    let e = ps.energies();
    let total = pairwise_sum(&e);
    if total == 0.0 {
        return 0.0;
    }
    let near: Vec<f64> = (0..ps.len())
        .filter(|&t| ps.distance_to_tube(t, y) <= within)
        .map(|t| e[t])
        .collect();
    pairwise_sum(&near) / total
}

/// Tube geometry table as CSV.
pub fn write_manifest<W: std::io::Write>(ps: &PacketSet, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "tube,k1,k2,anchor_x,anchor_y,anchor_z,dir_x,dir_y,dir_z,radius,half_length,in_ball")?;
    for (i, t) in ps.tubes.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            i,
            t.lattice.0,
            t.lattice.1,
            t.anchor[0],
            t.anchor[1],
            t.anchor[2],
            t.direction[0],
            t.direction[1],
            t.direction[2],
            t.radius,
            t.half_length,
            ps.in_ball[i] as u8
        )?;
    }
    Ok(())
}

/// One packet's samples in the field layout (a single `x₃` layer).
pub fn write_packet_blob<W: std::io::Write>(f: &SurfaceFunction, w: &mut W) -> std::io::Result<()> {
    let g = f.grid;
    let half = [0.5 * g.nx as f64 * g.step, 0.5 * g.ny as f64 * g.step, 0.5];
    let header = crate::io::FieldHeader {
        center: [g.origin[0] - 0.5 * g.step + half[0], g.origin[1] - 0.5 * g.step + half[1], 0.0],
        half,
        steps: [g.step, g.step, 1.0],
        counts: [g.nx, g.ny, 1],
        real: false,
    };
    header.write(w)?;
    let flat: Vec<f64> = f.samples.iter().flat_map(|v| [v.re, v.im]).collect();
    crate::io::write_f64s(w, &flat)
}
