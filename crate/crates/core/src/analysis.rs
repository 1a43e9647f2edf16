//! Exponent bookkeeping, broad/narrow and bilinear functionals, Knapp
//! sweeps, superlevel sets of the dual operator, and the bilinear scaling
//! probe.

use num_complex::Complex64;
use num_rational::Ratio;

use crate::error::{param, LabError, Result};
use crate::geometry::{
    make_cap_decomposition, non_adjacent, split_function, validate_lambda_class, Cap, Point3,
    SplitMode, SurfaceFunction,
};
use crate::numerics::{bessel_j0, composite_gl, least_squares, pairwise_sum, par_map};
use crate::oscint::{dual_restrict, extend_slices, ComplexField3, Grid3, QuadratureRule, RealField3};
use crate::partition::{classify_tubes, partition_mass, MassPoints, WallScale};
use crate::wavepackets::{decompose, PacketParams, PacketSet};
use crate::weights::Weight;

/// `p = (4α + 1)/(α + 1)`.
pub fn critical_p(alpha: f64) -> f64 {
    (4.0 * alpha + 1.0) / (alpha + 1.0)
}

/// `q' = 2p/(2p - γ)`.
pub fn q_dual(p: f64, gamma: f64) -> f64 {
    2.0 * p / (2.0 * p - gamma)
}

pub fn q_dual_exact(p: Ratio<i64>, gamma: Ratio<i64>) -> Ratio<i64> {
    let two = Ratio::from_integer(2);
    two * p / (two * p - gamma)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 2.0 && alpha <= 3.0) {
        return Err(param("alpha", format!("need 2 < alpha <= 3, got {alpha}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalExponents {
    pub alpha: f64,
    pub p: f64,
    /// `3 + (α - 2)/(α + 1)`.
    pub p_min: f64,
    /// `[2, 2p - α - 1)`.
    pub gamma_range: (f64, f64),
    /// Estimates need `q > 2p/(2p - α - 1)`.
    pub q_sharp: f64,
    /// `-3(p - 3)/4 + (α - 2)(4 - p)/4`.
    pub cancellation_residual: f64,
}

pub fn critical_exponents(alpha: f64) -> Result<CriticalExponents> {
    check_alpha(alpha)?;
    let p = critical_p(alpha);
    Ok(CriticalExponents {
        alpha,
        p,
        p_min: 3.0 + (alpha - 2.0) / (alpha + 1.0),
        gamma_range: (2.0, 2.0 * p - alpha - 1.0),
        q_sharp: 2.0 * p / (2.0 * p - alpha - 1.0),
        cancellation_residual: -3.0 * (p - 3.0) / 4.0 + (alpha - 2.0) * (4.0 - p) / 4.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderSplit {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    /// `b = 0` at the endpoint `p = 4`.
    pub degenerate: bool,
    /// `a + b - p/2`.
    pub sum_residual: f64,
    /// `a/2 + 2b/3 - 1`.
    pub balance_residual: f64,
}

pub fn holder_split(p: f64) -> Result<HolderSplit> {
    if !(p > 3.0 && p <= 4.0) {
        return Err(param("p", format!("need 3 < p <= 4, got {p}")));
    }
    let a = 2.0 * (p - 3.0);
    let b = 1.5 * (4.0 - p);
    Ok(HolderSplit {
        a,
        b,
        q: 1.0 / (p - 3.0),
        degenerate: b == 0.0,
        sum_residual: a + b - p / 2.0,
        balance_residual: a / 2.0 + 2.0 * b / 3.0 - 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentConfig {
    pub alpha: f64,
    pub p: f64,
    pub q: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub k: f64,
    pub beta: f64,
    pub m: f64,
    pub delta: f64,
    pub delta_deg: f64,
    pub delta_trans: f64,
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
    pub q_dual: f64,
    pub p_conj: f64,
}

impl ExponentConfig {
    /// Validated configuration. `p` defaults to the critical exponent.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        alpha: f64,
        p: Option<f64>,
        q: f64,
        gamma: f64,
        epsilon: f64,
        k: f64,
        beta: f64,
        m: f64,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        let p = p.unwrap_or_else(|| critical_p(alpha));
        if !(p > 3.0 && p <= 4.0) {
            return Err(param("p", format!("need 3 < p <= 4, got {p}")));
        }
        let top = 2.0 * p - alpha - 1.0;
        if !(gamma >= 2.0 && gamma < top) {
            return Err(param("gamma", format!("need 2 <= gamma < 2p - alpha - 1 = {top}, got {gamma}")));
        }
        if !(epsilon > 0.0) {
            return Err(param("epsilon", "must be positive"));
        }
        if !(q >= 1.0) {
            return Err(param("q", format!("need q >= 1, got {q}")));
        }
        if !(k >= 1.0) {
            return Err(param("K", format!("need K >= 1, got {k}")));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(param("beta", format!("need 0 < beta <= 1, got {beta}")));
        }
        if !(m > 0.0) {
            return Err(param("m", "must be positive"));
        }
        Ok(ExponentConfig {
            alpha,
            p,
            q,
            gamma,
            epsilon,
            k,
            beta,
            m,
            delta: epsilon * epsilon,
            delta_deg: epsilon.powi(4),
            delta_trans: epsilon.powi(6),
            q0: 1.0,
            q1: 4.0 - p,
            q2: 0.5,
            q_dual: q_dual(p, gamma),
            p_conj: p / (p - 1.0),
        })
    }
}

fn check_same_grid(a: &ComplexField3, rest: &[ComplexField3]) -> Result<()> {
    if rest.iter().any(|f| f.grid != a.grid) {
        return Err(LabError::GridMismatch("cap fields must share the grid of Ef".into()));
    }
    Ok(())
}

/// `|Ef(x)|` where `max_τ |Ef_τ(x)| < β|Ef(x)|`, else 0.
pub fn broad_part(ef: &ComplexField3, taus: &[ComplexField3], beta: f64) -> Result<RealField3> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(param("beta", format!("need 0 < beta <= 1, got {beta}")));
    }
    check_same_grid(ef, taus)?;
    let values = (0..ef.values.len())
        .map(|i| {
            let full = ef.values[i].norm();
            let top = taus.iter().map(|t| t.values[i].norm()).fold(0.0, f64::max);
            if top < beta * full {
                full
            } else {
                0.0
            }
        })
        .collect();
    Ok(RealField3 { grid: ef.grid, values })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitReport {
    /// `max(|Ef|^p - Br^p - β^{-p} Σ|Ef_τ|^p)` over nodes.
    pub max_violation: f64,
    /// `max |Ef|^p`.
    pub scale: f64,
    pub broad_nodes: usize,
    pub nodes: usize,
}

impl SplitReport {
    pub fn relative_violation(&self) -> f64 {
        if self.scale > 0.0 {
            self.max_violation.max(0.0) / self.scale
        } else {
            0.0
        }
    }
}

pub fn broad_narrow_split_check(
    ef: &ComplexField3,
    taus: &[ComplexField3],
    beta: f64,
    p: f64,
) -> Result<SplitReport> {
    let br = broad_part(ef, taus, beta)?;
    let mut worst = f64::NEG_INFINITY;
    let mut scale: f64 = 0.0;
    let mut broad = 0;
    for i in 0..ef.values.len() {
        let lhs = ef.values[i].norm().powf(p);
        scale = scale.max(lhs);
        if br.values[i] > 0.0 {
            broad += 1;
        }
        let narrow: Vec<f64> = taus.iter().map(|t| t.values[i].norm().powf(p)).collect();
        let rhs = br.values[i].powf(p) + beta.powf(-p) * pairwise_sum(&narrow);
        worst = worst.max(lhs - rhs);
    }
    Ok(SplitReport { max_violation: worst, scale, broad_nodes: broad, nodes: ef.values.len() })
}

/// `Σ_{τ₁, τ₂ non-adjacent} |F_{τ₁}|^{1/2} |F_{τ₂}|^{1/2}` over ordered pairs.
pub fn bilinear_tangential(fields: &[(Cap, ComplexField3)], k: f64) -> Result<RealField3> {
    let Some(first) = fields.first() else {
        return Err(param("fields", "need at least one cap field"));
    };
    let rest: Vec<ComplexField3> = fields.iter().skip(1).map(|f| f.1.clone()).collect();
    check_same_grid(&first.1, &rest)?;
    let n = first.1.values.len();
    let mut pairs = Vec::new();
    for (i, a) in fields.iter().enumerate() {
        for (j, b) in fields.iter().enumerate() {
            if i != j && non_adjacent(&a.0, &b.0, k) {
                pairs.push((i, j));
            }
        }
    }
    let roots: Vec<Vec<f64>> = fields.iter().map(|f| f.1.values.iter().map(|v| v.norm().sqrt()).collect()).collect();
    let values = (0..n)
        .map(|x| pairwise_sum(&pairs.iter().map(|&(i, j)| roots[i][x] * roots[j][x]).collect::<Vec<_>>()))
        .collect();
    Ok(RealField3 { grid: first.1.grid, values })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub r: f64,
    pub quantity: f64,
    /// `R^{ref_slope}`.
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub label: String,
    pub rows: Vec<SweepRow>,
    pub fitted_slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
    pub ref_slope: f64,
    pub tolerance: f64,
    /// Range of `quantity / reference`.
    pub constant_range: (f64, f64),
}

impl SweepResult {
    pub fn from_rows(label: &str, rs: &[f64], quantities: &[f64], ref_slope: f64, tolerance: f64) -> Result<Self> {
        if rs.len() != quantities.len() || rs.len() < 2 {
            return Err(param("rows", "need at least two matching rows"));
        }
        if quantities.iter().any(|&q| !(q > 0.0 && q.is_finite())) {
            return Err(param("rows", "quantities must be positive for a log-log fit"));
        }
        let xs: Vec<f64> = rs.iter().map(|r| r.ln()).collect();
        let ys: Vec<f64> = quantities.iter().map(|q| q.ln()).collect();
        let (slope, intercept, stderr) = least_squares(&xs, &ys);
        let rows: Vec<SweepRow> = rs
            .iter()
            .zip(quantities)
            .map(|(&r, &q)| SweepRow { r, quantity: q, reference: r.powf(ref_slope) })
            .collect();
        let ratios: Vec<f64> = rows.iter().map(|r| r.quantity / r.reference).collect();
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(0.0, f64::max);
        Ok(SweepResult {
            label: label.to_string(),
            rows,
            fitted_slope: slope,
            slope_stderr: stderr,
            intercept,
            ref_slope,
            tolerance,
            constant_range: (lo, hi),
        })
    }

    pub fn pass(&self) -> bool {
        (self.fitted_slope - self.ref_slope).abs() <= self.tolerance
    }
}

/// `E₁(s, t) = 2π ∫₀¹ J₀(2π s u) e^{-2πi t u²} u du`, the extension of the
/// unit disk indicator at `|x'| = s`, `x₃ = t`. The indicator of the cap of
/// radius `R^{-1/2}` has extension `R^{-1} E₁(|x'| R^{-1/2}, x₃/R)`.
pub fn knapp_profile(s: f64, t: f64) -> Complex64 {
    // about four panels per oscillation of either factor
    let panels = (4.0 * (s + t.abs()) + 8.0).ceil() as usize;
    let (nodes, weights) = composite_gl(0.0, 1.0, panels, 8);
    let terms: Vec<Complex64> = nodes
        .iter()
        .zip(&weights)
        .map(|(&u, &w)| crate::oscint::cis_neg(t * u * u) * (w * u * bessel_j0(std::f64::consts::TAU * s * u)))
        .collect();
    crate::numerics::pairwise_sum_c(&terms) * std::f64::consts::TAU
}

/// Tabulated `|E₁|` on `s ∈ [0, s_max]`, `t ∈ [0, t_max]` (`|E₁|` is even in `t`).
#[derive(Debug, Clone, PartialEq)]
pub struct KnappTable {
    pub ds: f64,
    pub dt: f64,
    pub ns: usize,
    pub nt: usize,
    pub modulus: Vec<f64>,
}

impl KnappTable {
    pub fn new(s_max: f64, t_max: f64, ds: f64, dt: f64) -> Self {
        let ns = (s_max / ds).round() as usize + 1;
        let nt = (t_max / dt).round() as usize + 1;
        let modulus = par_map(ns * nt, |i| knapp_profile((i % ns) as f64 * ds, (i / ns) as f64 * dt).norm());
        KnappTable { ds, dt, ns, nt, modulus }
    }

    /// Linear interpolation in `s` at the `t` node `it`.
    fn at(&self, s: f64, it: usize) -> f64 {
        let x = s / self.ds;
        let i = (x.floor() as usize).min(self.ns - 2);
        let f = x - i as f64;
        let row = &self.modulus[it * self.ns..(it + 1) * self.ns];
        row[i] * (1.0 - f) + row[i + 1] * f
    }
}

/// Angular measure of `{φ : H(ρ cos φ, ·) = 1}` for an axial weight, from
/// merged `(u, v, value)` pieces.
fn angular_measure(pieces: &[(f64, f64, f64)], rho: f64) -> f64 {
    if rho == 0.0 {
        let v = pieces.iter().find(|p| p.0 <= 0.0 && 0.0 <= p.1).map_or(0.0, |p| p.2);
        return std::f64::consts::TAU * v;
    }
    let mut acc = 0.0;
    for &(u, v, val) in pieces {
        let lo = u.max(-rho);
        let hi = v.min(rho);
        if hi > lo {
            acc += val * 2.0 * ((lo / rho).clamp(-1.0, 1.0).acos() - (hi / rho).clamp(-1.0, 1.0).acos());
        }
    }
    acc
}

/// `∫_{B(0, cR), |x'| ≤ s_max R^{1/2}} |Ef_R|^p H dx` for an axial weight,
/// in the scaled variables `x' = R^{1/2} s`, `x₃ = R t`.
pub fn knapp_integral(table: &KnappTable, h: &Weight, r: f64, p: f64, box_c: f64, s_max: f64) -> Result<f64> {
    if !h.is_axial() {
        return Err(param("H", "the Knapp integral needs a weight depending on x1 only"));
    }
    let sr = r.sqrt();
    let s_cap = s_max.min((table.ns - 1) as f64 * table.ds);
    if box_c > (table.nt - 1) as f64 * table.dt + 1e-12 {
        return Err(param("box_constant", "table does not reach the requested height"));
    }
    let pieces = h.axis_pieces(-s_cap * sr, s_cap * sr);
    let nt = (box_c / table.dt).round() as usize;
    let sub = 4usize;
    let rows = par_map(nt + 1, |it| {
        let t = it as f64 * table.dt;
        let reach = ((box_c * box_c - t * t).max(0.0)).sqrt() * sr;
        let top = reach.min(s_cap);
        if top <= 0.0 {
            return 0.0;
        }
        let cells = (top / table.ds).ceil() as usize * sub;
        let ds = top / cells as f64;
        let terms: Vec<f64> = (0..cells)
            .map(|c| {
                let s = (c as f64 + 0.5) * ds;
                s * table.at(s, it).powf(p) * angular_measure(&pieces, s * sr) * ds
            })
            .collect();
        // trapezoid in t over [-c, c], using evenness
        let w = if it == 0 || it == nt { 0.5 } else { 1.0 };
        2.0 * w * table.dt * pairwise_sum(&terms)
    });
    Ok(r.powf(2.0 - p) * pairwise_sum(&rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnappSweep {
    pub integral: SweepResult,
    pub norm: SweepResult,
    /// `2p - α - 1`, positive when the Knapp line permits the pair.
    pub necessity_margin: f64,
}

/// Fitted slopes of the Knapp integral (reference `(α+1)/2 - p`) and of
/// `‖f_R‖_{L^q(σ)}` (reference `-1/q`).
pub fn knapp_sweep(alpha: f64, p: f64, q: f64, r_list: &[f64], box_constant: f64) -> Result<KnappSweep> {
    check_alpha(alpha)?;
    if r_list.len() < 4 {
        return Err(param("R_list", "need at least four radii"));
    }
    if r_list.iter().any(|&r| !(r >= 4.0)) {
        return Err(param("R_list", "radii must be >= 4"));
    }
    if !(p >= 1.0) {
        return Err(param("p", "need p >= 1"));
    }
    if !(q >= 1.0) {
        return Err(param("q", "need q >= 1 (infinity for sup)"));
    }
    if !(box_constant >= 1.0) {
        return Err(param("box_constant", "need at least 1"));
    }
    let h = crate::weights::make_slab_weight(alpha - 2.0)?;
    let table = KnappTable::new(KNAPP_S_MAX, box_constant, 1.0 / 32.0, 1.0 / 16.0);
    let integrals: Vec<f64> = r_list
        .iter()
        .map(|&r| knapp_integral(&table, &h, r, p, box_constant, KNAPP_S_MAX))
        .collect::<Result<_>>()?;
    let integral = SweepResult::from_rows("knapp_integral", r_list, &integrals, (alpha + 1.0) / 2.0 - p, 0.15)?;
    let norms: Vec<f64> = r_list.iter().map(|&r| knapp_cap_norm(r, q)).collect::<Result<_>>()?;
    let ref_norm = if q.is_infinite() { 0.0 } else { -1.0 / q };
    let norm = SweepResult::from_rows("knapp_norm", r_list, &norms, ref_norm, 0.02)?;
    Ok(KnappSweep { integral, norm, necessity_margin: 2.0 * p - alpha - 1.0 })
}

/// Scaled radius past which the Knapp integrand is dropped.
pub const KNAPP_S_MAX: f64 = 64.0;

/// `‖f_R‖_{L^q(σ)}` for the indicator of the cap of radius `R^{-1/2}` at the
/// origin, on a lattice with 32 steps per cap radius.
pub fn knapp_cap_norm(r: f64, q: f64) -> Result<f64> {
    let rho = r.powf(-0.5);
    // lattice step 2/n with n even and step <= rho/32
    let n = (2.0 * 32.0 / rho).ceil() as usize;
    let n = n + n % 2;
    let cap = Cap::new([0.0, 0.0], rho)?;
    let f = SurfaceFunction::cap_indicator(cap, 2.0 / n as f64);
    Ok(f.lq(q))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperlevelReport {
    /// Descending dyadic thresholds `λ_k = max|ℛg| · 2^{-k}`.
    pub lambdas: Vec<f64>,
    /// `σ{|ℛg| > λ_k}`.
    pub tail: Vec<f64>,
    /// Base threshold for the shells.
    pub base_lambda: f64,
    /// `σ(S_{λ,l})`, `2^{l-1}λ < |ℛg| ≤ 2^l λ`, for `l = 1..=20`.
    pub shells: Vec<f64>,
    pub sigma_total: f64,
    pub sup: f64,
    /// `‖g‖_{L¹(H dx)}`.
    pub lambda1: f64,
    /// `(∫_{B(0,R)} H)^{1/p} ‖g‖_{L^{p'}(H dx)}` in the discrete model.
    pub holder_mid: f64,
    /// `A_α(H)^{1/p} R^{α/p} ‖g‖_{L^{p'}(H dx)}`.
    pub holder_rhs: f64,
    pub a_alpha: f64,
    pub trivial_ok: bool,
    pub holder_ok: bool,
    pub sup_ok: bool,
    /// Slope of `log σ{> λ}` against `log λ` over the nontrivial range.
    pub decay_slope: Option<f64>,
    pub q_dual: f64,
}

/// Superlevel sets of `ℛg` on the midpoint mesh with `mesh_n` cells per axis.
pub fn superlevel_experiment(
    g: &ComplexField3,
    h: &Weight,
    cfg: &ExponentConfig,
    r: f64,
    mesh_n: usize,
) -> Result<SuperlevelReport> {
    if !(r > 0.0) {
        return Err(param("R", "must be positive"));
    }
    for i in 0..g.grid.len() {
        let x = g.grid.node(i);
        if g.values[i].norm() > 0.0 && x[0] * x[0] + x[1] * x[1] + x[2] * x[2] > r * r {
            return Err(param("g", "must vanish outside B(0, R)"));
        }
    }
    let rule = QuadratureRule::midpoint(mesh_n)?;
    let rg = dual_restrict(g, h, &rule.nodes);
    let mods: Vec<f64> = rg.iter().map(|v| v.norm()).collect();
    let sigma_total = rule.total_weight();
    let sup = mods.iter().copied().fold(0.0, f64::max);
    let measure = |pred: &dyn Fn(f64) -> bool| {
        let t: Vec<f64> = mods.iter().zip(&rule.weights).filter(|(m, _)| pred(**m)).map(|(_, w)| *w).collect();
        pairwise_sum(&t)
    };
    let mut lambdas = Vec::new();
    let mut tail = Vec::new();
    for k in 0..=20 {
        let lam = sup * 0.5f64.powi(k);
        lambdas.push(lam);
        tail.push(if sup > 0.0 { measure(&|m| m > lam) } else { 0.0 });
    }
    let base_lambda = sup * 0.5f64.powi(20);
    let shells: Vec<f64> = (1..=20)
        .map(|l| {
            if sup == 0.0 {
                return 0.0;
            }
            let lo = base_lambda * 2f64.powi(l - 1);
            let hi = base_lambda * 2f64.powi(l);
            measure(&|m| lo < m && m <= hi)
        })
        .collect();

    let dv = g.grid.cell_volume();
    let p = cfg.p;
    let pc = cfg.p_conj;
    let mut l1 = Vec::new();
    let mut lp = Vec::new();
    let mut hb = Vec::new();
    for i in 0..g.grid.len() {
        let x = g.grid.node(i);
        let hv = h.eval(x);
        if x[0] * x[0] + x[1] * x[1] + x[2] * x[2] <= r * r {
            hb.push(hv * dv);
        }
        let a = g.values[i].norm();
        l1.push(a * hv * dv);
        lp.push(a.powf(pc) * hv * dv);
    }
    let lambda1 = pairwise_sum(&l1);
    let gnorm = pairwise_sum(&lp).powf(1.0 / pc);
    let h_ball = pairwise_sum(&hb);
    let holder_mid = h_ball.powf(1.0 / p) * gnorm;
    // the scanned constant, raised to cover this ball in the discrete model
    let a_alpha = h.a_alpha_estimate.unwrap_or(0.0).max(h_ball / r.powf(cfg.alpha));
    let holder_rhs = a_alpha.powf(1.0 / p) * r.powf(cfg.alpha / p) * gnorm;
    let tol = 1e-8 * holder_rhs.max(f64::MIN_POSITIVE);

    let (xs, ys): (Vec<f64>, Vec<f64>) = lambdas
        .iter()
        .zip(&tail)
        .filter(|(_, &s)| s > 0.0 && s < sigma_total * (1.0 - 1e-12))
        .map(|(l, s)| (l.ln(), s.ln()))
        .unzip();
    let decay_slope = (xs.len() >= 3).then(|| least_squares(&xs, &ys).0);
    Ok(SuperlevelReport {
        lambdas,
        trivial_ok: tail.iter().all(|&s| s <= sigma_total * (1.0 + 1e-12)),
        tail,
        base_lambda,
        shells,
        sigma_total,
        sup,
        lambda1,
        holder_mid,
        holder_rhs,
        a_alpha,
        holder_ok: lambda1 <= holder_mid + tol && holder_mid <= holder_rhs + tol,
        sup_ok: sup <= lambda1 * (1.0 + 1e-8) + tol,
        decay_slope,
        q_dual: cfg.q_dual,
    })
}

/// Number of median cuts in the probe's partition.
pub const PROBE_DEGREE: usize = 3;
/// Cover balls (largest `G₀` first) on which `L` and `L_H` are integrated.
pub const PROBE_MAX_BALLS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearProbeRow {
    pub r: f64,
    /// Cover balls on which `L` and `L_H` were integrated.
    pub balls_used: usize,
    /// `max_j L / (R^{-1/2} G₀²)`, `L = ∫_{B_j ∩ W} G² dx`.
    pub l_ratio: f64,
    /// `max_j L_H / (A_α R^{(α-2)/4} ‖f_τ₁‖^{3/2} ‖f_τ₂‖^{3/2})`, `L_H = ∫_{B_j} G^{3/2} H dx`.
    pub lh_ratio: f64,
    /// `max_j G₀ R^{1/2}`.
    pub g0_scaled: f64,
    /// `max_{τ,j} ∫|f_{τ,j,tang}|² / (count_{τ,j} / R)`, `count` the number
    /// of caps `θ ⊂ τ` contributing tangent tubes.
    pub tang_budget_ratio: f64,
    pub tangent_tubes: usize,
    pub tubes: usize,
    pub lambda_worst: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearProbe {
    pub rows: Vec<BilinearProbeRow>,
    /// Slopes of the three ratio sequences against `log R`; `None` when a
    /// sequence has a zero entry.
    pub l_sweep: Option<SweepResult>,
    pub lh_sweep: Option<SweepResult>,
    pub g0_sweep: Option<SweepResult>,
}

fn pair_of_caps(pieces: &[SurfaceFunction], caps: &[Cap], k: f64) -> Option<(usize, usize)> {
    let mass: Vec<f64> = pieces.iter().map(|p| p.l2_squared()).collect();
    let mut best: Option<((usize, usize), f64)> = None;
    for i in 0..caps.len() {
        for j in i + 1..caps.len() {
            let s = mass[i] * mass[j];
            if s > 0.0 && non_adjacent(&caps[i], &caps[j], k) && best.map_or(true, |b| s > b.1) {
                best = Some(((i, j), s));
            }
        }
    }
    best.map(|b| b.0)
}

/// Largest step `n/k` (integer `k`, `h = 1/n`) not exceeding `target`.
fn commensurate_step(h: f64, target: f64) -> f64 {
    let n = (1.0 / h).round();
    n / (n / target).ceil().max(1.0)
}

fn cube_around(center: Point3, radius: f64, step: f64) -> Result<Grid3> {
    let n = ((2.0 * radius / step).ceil() as usize).max(1);
    Grid3::new(center, [0.5 * n as f64 * step; 3], [n; 3])
}

/// Bilinear tangential scaling at each `R`: tubes of the two heaviest
/// non-adjacent `1/K` caps are classified against a degree-3 partition of
/// `|Ef|^p H` mass, and the tangential pieces are extended on each cover ball.
pub fn bilinear_scaling_probe(
    f: &SurfaceFunction,
    h: &Weight,
    cfg: &ExponentConfig,
    r_list: &[f64],
) -> Result<BilinearProbe> {
    if r_list.is_empty() {
        return Err(param("R_list", "need at least one radius"));
    }
    let step = f.grid.step;
    let inv = 1.0 / step;
    if (inv - inv.round()).abs() > 1e-9 * inv {
        return Err(param("f", "sample step must be 1/n for an integer n"));
    }
    let a_alpha = match h.a_alpha_estimate {
        Some(a) => a,
        None => {
            let radii: Vec<f64> = (0..=9).map(|k| 2f64.powi(k)).collect();
            crate::weights::estimate_a_alpha(h, cfg.alpha, &radii, 64)?.a_alpha
        }
    };
    let tau_dec = make_cap_decomposition(1.0 / cfg.k, 1.0)?;
    let pieces = split_function(f, &tau_dec, SplitMode::Disjoint);
    let mut rows = Vec::new();
    for &r in r_list {
        let lam = validate_lambda_class(&pieces, r)?;
        if !lam.ok {
            return Err(LabError::LambdaClass { worst_ratio: lam.worst_ratio });
        }
        let row = match pair_of_caps(&pieces, &tau_dec.caps, cfg.k) {
            None => BilinearProbeRow {
                r,
                balls_used: 0,
                l_ratio: 0.0,
                lh_ratio: 0.0,
                g0_scaled: 0.0,
                tang_budget_ratio: 0.0,
                tangent_tubes: 0,
                tubes: 0,
                lambda_worst: lam.worst_ratio,
            },
            Some((i1, i2)) => probe_at(r, &pieces[i1], &pieces[i2], f, h, cfg, a_alpha, lam.worst_ratio)?,
        };
        rows.push(row);
    }
    let rs: Vec<f64> = rows.iter().map(|x| x.r).collect();
    let tol = 4.0 * cfg.delta;
    let sweep = |label: &str, q: Vec<f64>| {
        if rs.len() >= 2 && q.iter().all(|&v| v > 0.0) {
            SweepResult::from_rows(label, &rs, &q, 0.0, tol).ok()
        } else {
            None
        }
    };
    Ok(BilinearProbe {
        l_sweep: sweep("bilinear_l2", rows.iter().map(|x| x.l_ratio).collect()),
        lh_sweep: sweep("bilinear_weighted", rows.iter().map(|x| x.lh_ratio).collect()),
        g0_sweep: sweep("g0_scaled", rows.iter().map(|x| x.g0_scaled).collect()),
        rows,
    })
}

/// `Σ_θ Σ_{T ∈ S_θ} f_T` over the packet sets belonging to cap `ti`.
fn tangential_sum(sets: &[(usize, PacketSet)], per_set: &[Vec<usize>], ti: usize) -> Result<SurfaceFunction> {
    let parts: Vec<SurfaceFunction> = per_set
        .iter()
        .enumerate()
        .filter(|(si, lts)| !lts.is_empty() && sets[*si].0 == ti)
        .map(|(si, lts)| sets[si].1.combined(&lts.iter().map(|&t| (t, 1.0)).collect::<Vec<_>>()))
        .collect();
    SurfaceFunction::sum(&parts)
}

#[allow(clippy::too_many_arguments)]
fn probe_at(
    r: f64,
    f1: &SurfaceFunction,
    f2: &SurfaceFunction,
    f: &SurfaceFunction,
    h: &Weight,
    cfg: &ExponentConfig,
    a_alpha: f64,
    lambda_worst: f64,
) -> Result<BilinearProbeRow> {
    let delta = cfg.delta;
    let hstep = f.grid.step;
    let theta_dec = make_cap_decomposition(r.powf(-0.5), 1.0)?;
    let params = PacketParams::new(r, delta, 2);

    // packets of each θ piece of both caps
    let mut sets: Vec<(usize, PacketSet)> = Vec::new();
    for (ti, fp) in [f1, f2].into_iter().enumerate() {
        for (ci, piece) in split_function(fp, &theta_dec, SplitMode::Disjoint).into_iter().enumerate() {
            if piece.is_zero() {
                continue;
            }
            sets.push((ti, decompose(&piece, theta_dec.caps[ci], params)?));
        }
    }
    let mut tubes = Vec::new();
    let mut owner = Vec::new();
    for (si, (_, ps)) in sets.iter().enumerate() {
        for t in ps.active() {
            tubes.push(ps.tubes[t]);
            owner.push((si, t));
        }
    }

    // partition of |Ef|^p H over B(0, R)
    let gstep = commensurate_step(hstep, r / 16.0);
    let grid = cube_around([0.0; 3], r, gstep)?;
    let ef = extend_slices(f, &grid)?;
    let dv = grid.cell_volume();
    let mut pts = Vec::new();
    let mut wts = Vec::new();
    for i in 0..grid.len() {
        let x = grid.node(i);
        if x[0] * x[0] + x[1] * x[1] + x[2] * x[2] <= r * r {
            pts.push(x);
            wts.push(ef.values[i].norm().powf(cfg.p) * h.eval(x) * dv);
        }
    }
    let mass = MassPoints { points: pts, weights: wts };
    let (pp, cc) = partition_mass(&mass, PROBE_DEGREE, WallScale { r, delta })?;
    let tc = classify_tubes(&tubes, &pp, &cc, r, delta)?;

    let norms = [f1.l2(), f2.l2()];
    let mut out = BilinearProbeRow {
        r,
        balls_used: 0,
        l_ratio: 0.0,
        lh_ratio: 0.0,
        g0_scaled: 0.0,
        tang_budget_ratio: 0.0,
        tangent_tubes: 0,
        tubes: tubes.len(),
        lambda_worst,
    };
    let mut any_tangent = vec![false; tubes.len()];
    let mut tangent_sets: Vec<(usize, Vec<Vec<usize>>)> = Vec::new();
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for (j, _) in cc.cover.iter().enumerate() {
        let tangent = tc.tangent(j);
        if tangent.is_empty() {
            continue;
        }
        let mut per_set: Vec<Vec<usize>> = vec![Vec::new(); sets.len()];
        for &t in &tangent {
            any_tangent[t] = true;
            let (si, lt) = owner[t];
            per_set[si].push(lt);
        }
        let mut counts = [0usize; 2];
        for (si, lts) in per_set.iter().enumerate() {
            if !lts.is_empty() {
                counts[sets[si].0] += 1;
            }
        }
        let mut l2 = [0.0f64; 2];
        for ti in 0..2 {
            if counts[ti] > 0 {
                l2[ti] = tangential_sum(&sets, &per_set, ti)?.l2_squared();
                out.tang_budget_ratio = out.tang_budget_ratio.max(l2[ti] / (counts[ti] as f64 / r));
            }
        }
        let g0 = (l2[0] * l2[1]).sqrt();
        if g0 > 0.0 {
            out.g0_scaled = out.g0_scaled.max(g0 * r.sqrt());
            candidates.push((tangent_sets.len(), g0));
            tangent_sets.push((j, per_set));
        }
    }

    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    candidates.truncate(PROBE_MAX_BALLS);
    let node_step = 0.25 * cfg.k;
    for &(k, g0) in &candidates {
        let (j, per_set) = &tangent_sets[k];
        let t1 = tangential_sum(&sets, per_set, 0)?;
        let t2 = tangential_sum(&sets, per_set, 1)?;
        let ball = &cc.cover[*j];
        let bstep = commensurate_step(hstep, (ball.radius / 8.0).min(node_step));
        let bgrid = cube_around(ball.center, ball.radius, bstep)?;
        let e1 = extend_slices(&t1, &bgrid)?;
        let e2 = extend_slices(&t2, &bgrid)?;
        let dv = bgrid.cell_volume();
        let mut l = Vec::new();
        let mut lh = Vec::new();
        for i in 0..bgrid.len() {
            let x = bgrid.node(i);
            let d = [x[0] - ball.center[0], x[1] - ball.center[1], x[2] - ball.center[2]];
            if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] > ball.radius * ball.radius {
                continue;
            }
            let g = e1.values[i].norm() * e2.values[i].norm();
            if cc.in_wall(&pp, x) {
                l.push(g * g * dv);
            }
            lh.push(g.powf(1.5) * h.eval(x) * dv);
        }
        out.balls_used += 1;
        out.l_ratio = out.l_ratio.max(pairwise_sum(&l) / (r.powf(-0.5) * g0 * g0));
        let denom = a_alpha * r.powf((cfg.alpha - 2.0) / 4.0) * (norms[0] * norms[1]).powf(1.5);
        out.lh_ratio = out.lh_ratio.max(pairwise_sum(&lh) / denom);
    }
    out.tangent_tubes = any_tangent.iter().filter(|&&b| b).count();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SampleGrid;
    use crate::weights::{make_slab_weight, VoxelGrid};
    use rand::{Rng, SeedableRng};

    #[test]
    fn exponents_at_alpha_three() {
        let c = critical_exponents(3.0).unwrap();
        assert!((c.p - 3.25).abs() < 1e-15);
        assert!((c.p_min - c.p).abs() < 1e-15);
        assert_eq!(c.gamma_range, (2.0, 2.5));
        assert!(c.cancellation_residual.abs() <= 1e-12);
        let q = q_dual_exact(Ratio::new(13, 4), Ratio::from_integer(2));
        assert_eq!(q, Ratio::new(13, 9));
        let c = critical_exponents(2.5).unwrap();
        assert!((c.p - 22.0 / 7.0).abs() < 1e-14 && (c.p_min - 22.0 / 7.0).abs() < 1e-14);
        assert!(critical_exponents(2.0).is_err());
        assert!(critical_exponents(3.1).is_err());
    }

    #[test]
    fn holder_split_values() {
        let s = holder_split(3.25).unwrap();
        assert!((s.a - 0.5).abs() < 1e-15 && (s.b - 1.125).abs() < 1e-15 && (s.q - 4.0).abs() < 1e-12);
        let s = holder_split(4.0).unwrap();
        assert!(s.degenerate && s.a == 2.0 && s.q == 1.0);
        let s = holder_split(3.5).unwrap();
        assert!(s.sum_residual.abs() <= 1e-12 && s.balance_residual.abs() <= 1e-12);
        assert!(holder_split(3.0).is_err());
    }

    #[test]
    fn config_validation() {
        let c = ExponentConfig::new(3.0, None, 4.0, 2.0, 0.1, 8.0, 0.5, 1.0).unwrap();
        assert!((c.q_dual - 13.0 / 9.0).abs() < 1e-14);
        assert!((c.delta - 0.01).abs() < 1e-15 && (c.delta_trans - 1e-6).abs() < 1e-18);
        assert!((c.q1 - 0.75).abs() < 1e-15);
        assert!(ExponentConfig::new(3.0, Some(3.25), 4.0, 3.0, 0.1, 8.0, 0.5, 1.0).is_err());
        assert!(ExponentConfig::new(3.0, Some(3.25), 4.0, 2.5, 0.1, 8.0, 0.5, 1.0).is_err());
    }

    fn field(vals: Vec<Complex64>) -> ComplexField3 {
        let grid = Grid3::new([0.0; 3], [1.0, 1.0, 1.0], [vals.len(), 1, 1]).unwrap();
        ComplexField3::from_values(grid, vals).unwrap()
    }

    #[test]
    fn broad_part_cases() {
        let one = Complex64::new(1.0, 0.0);
        let ef = field(vec![one, one * 2.0]);
        // a single cap is never broad
        let br = broad_part(&ef, &[ef.clone()], 1.0).unwrap();
        assert!(br.values.iter().all(|&v| v == 0.0));
        // two equal halves at beta = 0.6
        let half = field(vec![one * 0.5, one]);
        let br = broad_part(&ef, &[half.clone(), half.clone()], 0.6).unwrap();
        assert_eq!(br.values, vec![1.0, 2.0]);
        let br = broad_part(&ef, &[half.clone(), half], 1e-9).unwrap();
        assert!(br.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bilinear_conventions() {
        let a = Cap::new([-0.5, 0.0], 0.1).unwrap();
        let b = Cap::new([0.5, 0.0], 0.1).unwrap();
        let near = Cap::new([-0.3, 0.0], 0.1).unwrap();
        let fa = field(vec![Complex64::new(4.0, 0.0); 3]);
        let fb = field(vec![Complex64::new(0.0, 9.0); 3]);
        let bil = bilinear_tangential(&[(a, fa.clone()), (b, fb.clone())], 8.0).unwrap();
        assert!(bil.values.iter().all(|&v| (v - 12.0).abs() < 1e-12));
        let single = bilinear_tangential(&[(a, fa.clone())], 8.0).unwrap();
        assert!(single.values.iter().all(|&v| v == 0.0));
        let adj = bilinear_tangential(&[(a, fa), (near, fb)], 8.0).unwrap();
        assert!(adj.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn knapp_profile_limits() {
        // at the origin E₁ = π
        assert!((knapp_profile(0.0, 0.0).re - std::f64::consts::PI).abs() < 1e-7);
        // 2D transform of the disk indicator: J₁(2πs)/s
        let s: f64 = 1.3;
        let direct = knapp_profile(s, 0.0).re;
        let (nodes, w) = composite_gl(0.0, std::f64::consts::PI, 64, 8);
        let x = std::f64::consts::TAU * s;
        let j1: f64 = nodes.iter().zip(&w).map(|(t, w)| w * (t - x * t.sin()).cos()).sum::<f64>() / std::f64::consts::PI;
        assert!((direct - j1 / s).abs() < 1e-6, "{direct} vs {}", j1 / s);
        // pure height: 2π ∫ u e^{-2πi t u²} du = (1 - e^{-2πi t})/(2i t)
        let t = 0.7;
        let exact = (Complex64::new(1.0, 0.0) - crate::oscint::cis_neg(t)) / Complex64::new(0.0, 2.0 * t);
        assert!((knapp_profile(0.0, t) - exact).norm() < 1e-7);
    }

    #[test]
    fn cap_norm_scaling() {
        let n = knapp_cap_norm(64.0, 2.0).unwrap();
        assert!((n - (std::f64::consts::PI / 64.0).sqrt()).abs() / n < 0.01);
        assert!((knapp_cap_norm(64.0, f64::INFINITY).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sweep_fit_exact_power() {
        let rs = [2.0, 4.0, 8.0, 16.0];
        let qs: Vec<f64> = rs.iter().map(|r: &f64| 3.0 * r.powf(-1.25)).collect();
        let s = SweepResult::from_rows("x", &rs, &qs, -1.25, 0.15).unwrap();
        assert!((s.fitted_slope + 1.25).abs() < 1e-12 && s.pass());
        assert!(SweepResult::from_rows("x", &rs[..1], &qs[..1], -1.0, 0.1).is_err());
    }

    fn cfg_25() -> ExponentConfig {
        ExponentConfig::new(2.5, None, 4.0, 2.0, 0.1, 8.0, 0.5, 1.0).unwrap()
    }

    #[test]
    fn superlevel_of_zero() {
        let grid = Grid3::cube([0.0; 3], 4.0, 4).unwrap();
        let g = ComplexField3::zeros(grid);
        let h = make_slab_weight(0.5).unwrap();
        let rep = superlevel_experiment(&g, &h, &cfg_25(), 8.0, 32).unwrap();
        assert!(rep.tail.iter().all(|&t| t == 0.0) && rep.shells.iter().all(|&t| t == 0.0));
        assert!(rep.trivial_ok && rep.holder_ok && rep.sup_ok);
    }

    #[test]
    fn superlevel_of_spike_is_constant() {
        let grid = Grid3::cube([0.0; 3], 1.5, 3).unwrap();
        let mut vals = vec![Complex64::new(0.0, 0.0); 27];
        vals[13] = Complex64::new(1.0, 0.0);
        let g = ComplexField3::from_values(grid, vals).unwrap();
        let vox = VoxelGrid::constant_box([-0.5; 3], [0.5; 3], 1.0).unwrap();
        let h = Weight::voxel(vox, 3.0).unwrap();
        let rep = superlevel_experiment(&g, &h, &cfg_25(), 2.0, 32).unwrap();
        assert!((rep.sup - 1.0).abs() < 1e-12);
        // |ℛg| ≡ 1: nothing exceeds the top threshold, everything exceeds the rest
        assert_eq!(rep.tail[0], 0.0);
        for &t in &rep.tail[1..] {
            assert!((t - rep.sigma_total).abs() < 1e-12);
        }
        assert!(rep.trivial_ok && rep.holder_ok && rep.sup_ok);
    }

    #[test]
    fn superlevel_random_holder() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let grid = Grid3::cube([0.0; 3], 4.0, 16).unwrap();
        let vals: Vec<Complex64> = (0..grid.len())
            .map(|i| {
                let x = grid.node(i);
                if x[0] * x[0] + x[1] * x[1] + x[2] * x[2] <= 16.0 {
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let g = ComplexField3::from_values(grid, vals).unwrap();
        let h = make_slab_weight(0.5).unwrap();
        let rep = superlevel_experiment(&g, &h, &cfg_25(), 4.0, 48).unwrap();
        assert!(rep.trivial_ok && rep.holder_ok && rep.sup_ok);
        assert!(rep.lambda1 <= rep.holder_rhs);
        assert!(rep.tail.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn superlevel_rejects_wide_support() {
        let grid = Grid3::cube([0.0; 3], 4.0, 4).unwrap();
        let mut g = ComplexField3::zeros(grid);
        g.values[0] = Complex64::new(1.0, 0.0);
        let h = make_slab_weight(0.5).unwrap();
        assert!(superlevel_experiment(&g, &h, &cfg_25(), 1.0, 16).is_err());
    }

    #[test]
    fn probe_of_zero() {
        let grid = SampleGrid::aligned(1.0 / 1024.0, [-0.5, -0.1], [0.5, 0.1]);
        let f = SurfaceFunction::zeros(grid, None);
        let h = make_slab_weight(0.5).unwrap().with_estimate(100.0);
        let res = bilinear_scaling_probe(&f, &h, &cfg_25(), &[64.0, 128.0]).unwrap();
        for row in &res.rows {
            assert_eq!((row.l_ratio, row.lh_ratio, row.g0_scaled, row.tang_budget_ratio), (0.0, 0.0, 0.0, 0.0));
        }
        assert!(res.l_sweep.is_none());
    }

    #[test]
    fn commensurate_steps() {
        let s = commensurate_step(1.0 / 1200.0, 1.41);
        assert!(s <= 1.41 && (1200.0 / s - (1200.0 / s).round()).abs() < 1e-9);
        assert_eq!(commensurate_step(1.0 / 1200.0, 4.0), 4.0);
    }
}
