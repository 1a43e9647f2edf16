//! Affine partitioning of a mass distribution in R³, the cell wall, a ball
//! cover of the wall, and tangent/transverse classification of tubes.
//!
//! `P` is a product of `D` affine forms. Cells are classes of sign vectors
//! `(sgn f₁(x), …, sgn f_D(x))`; light classes are merged into neighbours so
//! that cell masses stay balanced. A line crosses each plane at most once,
//! so it visits at most `D + 1` sign classes and hence at most `D + 1` cells.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{param, Result};
use crate::geometry::{CapDecomposition, Point3};
use crate::numerics::{par_map, pairwise_sum};
use crate::wavepackets::Tube;

/// The zero set of `normal · x - offset`, with `|normal| = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFactor {
    pub normal: Point3,
    pub offset: f64,
}

impl AffineFactor {
    pub fn eval(&self, x: Point3) -> f64 {
        dot(self.normal, x) - self.offset
    }

    pub fn distance(&self, x: Point3) -> f64 {
        self.eval(x).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPoly {
    pub factors: Vec<AffineFactor>,
}

impl PartitionPoly {
    pub fn degree(&self) -> usize {
        self.factors.len()
    }

    pub fn sign_class(&self, x: Point3) -> u64 {
        self.factors
            .iter()
            .enumerate()
            .fold(0, |acc, (i, f)| if f.eval(x) >= 0.0 { acc | (1 << i) } else { acc })
    }

    /// Distance from `x` to `Z(P)`.
    pub fn distance(&self, x: Point3) -> f64 {
        self.factors.iter().map(|f| f.distance(x)).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball {
    pub center: Point3,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: usize,
    pub mass: f64,
    pub classes: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellComplex {
    pub cells: Vec<Cell>,
    /// Sign class to cell id; classes carrying no mass are absent.
    pub class_to_cell: BTreeMap<u64, usize>,
    pub total_mass: f64,
    pub wall_radius: f64,
    pub cover: Vec<Ball>,
    pub ball_radius: f64,
}

impl CellComplex {
    /// Cell containing `x`. Sign classes without mass get ids past the
    /// massive cells, one per class.
    pub fn cell_of(&self, pp: &PartitionPoly, x: Point3) -> usize {
        let c = pp.sign_class(x);
        self.class_to_cell.get(&c).copied().unwrap_or(self.cells.len() + c as usize)
    }

    pub fn in_wall(&self, pp: &PartitionPoly, x: Point3) -> bool {
        pp.distance(x) <= self.wall_radius
    }

    /// Largest number of cover balls containing one point, over a sample
    /// mesh of `B(0, R)`.
    pub fn cover_overlap(&self, step: f64) -> usize {
        let r = self.ball_radius;
        let n = (2.0 * r / step).ceil() as i64;
        let mut best = 0;
        for i in 0..=n {
            for j in 0..=n {
                for k in 0..=n {
                    let x = [-r + i as f64 * step, -r + j as f64 * step, -r + k as f64 * step];
                    if dot(x, x) > r * r {
                        continue;
                    }
                    let c = self.cover.iter().filter(|b| dist(b.center, x) <= b.radius).count();
                    best = best.max(c);
                }
            }
        }
        best
    }
}

/// Point masses in `B(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MassPoints {
    pub points: Vec<Point3>,
    pub weights: Vec<f64>,
}

impl MassPoints {
    pub fn uniform(points: Vec<Point3>) -> Self {
        let weights = vec![1.0; points.len()];
        MassPoints { points, weights }
    }

    pub fn total(&self) -> f64 {
        pairwise_sum(&self.weights)
    }

    /// Voxel centers in `B(0, R)` carrying `value · volume`.
    pub fn from_voxels(grid: &crate::weights::VoxelGrid, r: f64) -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let vol = grid.voxel_volume();
        for k in 0..grid.counts[2] {
            for j in 0..grid.counts[1] {
                for i in 0..grid.counts[0] {
                    let x = [
                        grid.origin[0] + (i as f64 + 0.5) * grid.step[0],
                        grid.origin[1] + (j as f64 + 0.5) * grid.step[1],
                        grid.origin[2] + (k as f64 + 0.5) * grid.step[2],
                    ];
                    let v = grid.values[(k * grid.counts[1] + j) * grid.counts[0] + i];
                    if v > 0.0 && dot(x, x) <= r * r {
                        points.push(x);
                        weights.push(v * vol);
                    }
                }
            }
        }
        MassPoints { points, weights }
    }
}

/// Cut directions: the coordinate axes, then the four cube diagonals.
pub fn cut_directions() -> [Point3; 7] {
    let s = 1.0 / 3f64.sqrt();
    [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [s, s, s],
        [s, s, -s],
        [s, -s, s],
        [-s, s, s],
    ]
}

/// Scale for the wall `W` and the cover `{B_j}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallScale {
    pub r: f64,
    pub delta: f64,
}

/// Median cuts: round `i` cuts along direction `i mod 7` through the
/// weighted median of the heaviest current sign class. Classes lighter than
/// a quarter of `2^{-D}‖F‖₁` are then merged into their lightest neighbour.
pub fn partition_mass(f: &MassPoints, d_target: usize, scale: WallScale) -> Result<(PartitionPoly, CellComplex)> {
    if d_target < 1 {
        return Err(param("D_target", "need at least one cut"));
    }
    if d_target > 40 {
        return Err(param("D_target", "at most 40 cuts"));
    }
    if f.points.len() != f.weights.len() {
        return Err(param("F", "points and weights differ in length"));
    }
    if f.weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(param("F", "masses must be finite and nonnegative"));
    }
    let total = f.total();
    if !(total > 0.0) {
        return Err(param("F", "total mass must be positive"));
    }
    let dirs = cut_directions();
    let mut pp = PartitionPoly { factors: Vec::with_capacity(d_target) };
    let mut classes = vec![0u64; f.points.len()];
    for round in 0..d_target {
        let mut mass: BTreeMap<u64, f64> = BTreeMap::new();
        for (c, &w) in classes.iter().zip(&f.weights) {
            *mass.entry(*c).or_default() += w;
        }
        // heaviest class, ties to the smallest sign vector
        let heavy = mass
            .iter()
            .fold((0u64, -1.0), |best, (&c, &m)| if m > best.1 { (c, m) } else { best })
            .0;
        let n = dirs[round % dirs.len()];
        let mut proj: Vec<(f64, f64)> = f
            .points
            .iter()
            .zip(&f.weights)
            .zip(&classes)
            .filter(|(_, &c)| c == heavy)
            .map(|((x, &w), _)| (dot(n, *x), w))
            .collect();
        let offset = weighted_median(&mut proj);
        let factor = AffineFactor { normal: n, offset };
        for (c, x) in classes.iter_mut().zip(&f.points) {
            if factor.eval(*x) >= 0.0 {
                *c |= 1 << round;
            }
        }
        pp.factors.push(factor);
    }

    let mut mass: BTreeMap<u64, f64> = BTreeMap::new();
    for (c, &w) in classes.iter().zip(&f.weights) {
        *mass.entry(*c).or_default() += w;
    }
    let cells = merge_light(&mass, total * 0.25 / (1u64 << d_target.min(62)) as f64);
    let mut class_to_cell = BTreeMap::new();
    for cell in &cells {
        for &c in &cell.classes {
            class_to_cell.insert(c, cell.id);
        }
    }
    let (cover, wall_radius) = wall_cover(&pp, scale);
    Ok((
        pp,
        CellComplex { cells, class_to_cell, total_mass: total, wall_radius, cover, ball_radius: scale.r },
    ))
}

fn weighted_median(proj: &mut [(f64, f64)]) -> f64 {
    proj.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = proj.iter().map(|p| p.1).sum();
    if proj.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for k in 0..proj.len() {
        acc += proj[k].1;
        if acc >= 0.5 * total {
            if k + 1 < proj.len() {
                // at an exact even split, cut halfway to the next point
                if (acc - 0.5 * total).abs() <= 1e-12 * total {
                    return 0.5 * (proj[k].0 + proj[k + 1].0);
                }
            }
            return proj[k].0;
        }
    }
    proj[proj.len() - 1].0
}

fn merge_light(mass: &BTreeMap<u64, f64>, floor: f64) -> Vec<Cell> {
    let mut groups: Vec<(Vec<u64>, f64)> = mass.iter().map(|(&c, &m)| (vec![c], m)).collect();
    loop {
        if groups.len() <= 1 {
            break;
        }
        let (li, lm) = groups
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (i, g)| if g.1 < b.1 { (i, g.1) } else { b });
        if lm >= floor {
            break;
        }
        let adjacent = |a: &[u64], b: &[u64]| a.iter().any(|x| b.iter().any(|y| (x ^ y).count_ones() == 1));
        let mut target = None;
        for (i, g) in groups.iter().enumerate() {
            if i != li && adjacent(&groups[li].0, &g.0) && target.is_none_or(|(_, m)| g.1 < m) {
                target = Some((i, g.1));
            }
        }
        let t = match target {
            Some((t, _)) => t,
            None => groups
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != li)
                .fold((usize::MAX, f64::INFINITY), |b, (i, g)| if g.1 < b.1 { (i, g.1) } else { b })
                .0,
        };
        let light = groups[li].clone();
        groups[t].0.extend(light.0);
        groups[t].1 += light.1;
        groups.remove(li);
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(id, (mut classes, mass))| {
            classes.sort_unstable();
            Cell { id, mass, classes }
        })
        .collect()
}

/// Balls of radius `R^{1-δ}` on a cubic lattice of spacing `2R^{1-δ}/√3`,
/// kept when they meet `B(0, R) ∩ W`.
fn wall_cover(pp: &PartitionPoly, scale: WallScale) -> (Vec<Ball>, f64) {
    let r = scale.r;
    let wall = r.powf(0.5 + scale.delta);
    let rho = r.powf(1.0 - scale.delta);
    let h = 2.0 * rho / 3f64.sqrt();
    let n = ((r + rho) / h).ceil() as i64;
    let mut cover = Vec::new();
    for k in -n..=n {
        for j in -n..=n {
            for i in -n..=n {
                let c = [i as f64 * h, j as f64 * h, k as f64 * h];
                if norm(c) > r + rho {
                    continue;
                }
                let meets = pp.factors.iter().any(|f| {
                    let (lo, hi) = lens_range(f.normal, c, rho, r);
                    lo - f.offset <= wall && hi - f.offset >= -wall
                });
                if meets {
                    cover.push(Ball { center: c, radius: rho });
                }
            }
        }
    }
    (cover, wall)
}

/// Range of `n · x` over `B(c, ρ) ∩ B(0, R)` (assumed nonempty).
fn lens_range(n: Point3, c: Point3, rho: f64, r: f64) -> (f64, f64) {
    let lo = -lens_max([-n[0], -n[1], -n[2]], c, rho, r);
    (lo, lens_max(n, c, rho, r))
}

fn lens_max(n: Point3, c: Point3, rho: f64, r: f64) -> f64 {
    let a = add(c, scale3(n, rho));
    if norm(a) <= r {
        return dot(n, a);
    }
    let b = scale3(n, r);
    if dist(b, c) <= rho {
        return r;
    }
    let d = norm(c);
    if d == 0.0 {
        return rho.min(r);
    }
    // maximum on the circle where the spheres meet
    let u = scale3(c, 1.0 / d);
    let along = (d * d + r * r - rho * rho) / (2.0 * d);
    let s = (r * r - along * along).max(0.0).sqrt();
    let nu = dot(n, u);
    let perp = (1.0 - nu * nu).max(0.0).sqrt();
    along * nu + s * perp
}

/// Number of distinct cells met by the line `p + t·d`.
pub fn line_cell_incidence(p: Point3, d: Point3, pp: &PartitionPoly, cc: &CellComplex) -> usize {
    let mut ts: Vec<f64> = pp
        .factors
        .iter()
        .filter_map(|f| {
            let nd = dot(f.normal, d);
            (nd.abs() > 1e-14).then(|| -f.eval(p) / nd)
        })
        .collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut probes = Vec::with_capacity(ts.len() + 1);
    if ts.is_empty() {
        probes.push(0.0);
    } else {
        probes.push(ts[0] - 1.0);
        for w in ts.windows(2) {
            probes.push(0.5 * (w[0] + w[1]));
        }
        probes.push(ts[ts.len() - 1] + 1.0);
    }
    let cells: BTreeSet<usize> = probes.iter().map(|&t| cc.cell_of(pp, add(p, scale3(d, t)))).collect();
    cells.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TubeLabel {
    None,
    Tangent,
    Transverse,
}

impl TubeLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            TubeLabel::None => "none",
            TubeLabel::Tangent => "tangent",
            TubeLabel::Transverse => "transverse",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TubeClassification {
    /// `labels[t][j]` for tube `t` and cover ball `j`.
    pub labels: Vec<Vec<TubeLabel>>,
    pub threshold: f64,
    pub witness_step: f64,
}

impl TubeClassification {
    pub fn tangent(&self, j: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&t| self.labels[t][j] == TubeLabel::Tangent).collect()
    }

    pub fn transverse(&self, j: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&t| self.labels[t][j] == TubeLabel::Transverse).collect()
    }
}

/// Classifies each `(T, B_j)` pair. Witnesses are the points of a lattice
/// of spacing `R^{1/2}/4` on each factor plane lying in `2B_j ∩ 10T`.
pub fn classify_tubes(
    tubes: &[Tube],
    pp: &PartitionPoly,
    cc: &CellComplex,
    r: f64,
    delta: f64,
) -> Result<TubeClassification> {
    classify_with_step(tubes, pp, cc, r, delta, 0.25 * r.sqrt())
}

/// [`classify_tubes`] with an explicit witness lattice spacing.
pub fn classify_with_step(
    tubes: &[Tube],
    pp: &PartitionPoly,
    cc: &CellComplex,
    r: f64,
    delta: f64,
    step: f64,
) -> Result<TubeClassification> {
    let rt = r.powf(0.5 + delta);
    if (cc.wall_radius - rt).abs() > 1e-9 * rt {
        return Err(param("delta", "wall radius does not match R^{1/2+delta}"));
    }
    for t in tubes {
        if (t.radius - rt).abs() > 1e-9 * rt {
            return Err(param("tubes", format!("tube radius {} differs from R^(1/2+delta) = {rt}", t.radius)));
        }
    }
    if !(step > 0.0) {
        return Err(param("step", "witness spacing must be positive"));
    }
    let threshold = r.powf(-0.5 + 2.0 * delta);
    let labels = par_map(tubes.len(), |ti| {
        let tube = &tubes[ti];
        cc.cover
            .iter()
            .map(|ball| {
                if !tube_meets_wall_in_ball(tube, pp, cc.wall_radius, ball) {
                    return TubeLabel::None;
                }
                let steep = pp.factors.iter().any(|f| {
                    angle_to_plane(tube.direction, f.normal) > threshold && has_witness(f, ball, tube, step)
                });
                if steep {
                    TubeLabel::Transverse
                } else {
                    TubeLabel::Tangent
                }
            })
            .collect()
    });
    Ok(TubeClassification { labels, threshold, witness_step: step })
}

pub fn angle_to_plane(v: Point3, n: Point3) -> f64 {
    dot(v, n).abs().min(1.0).asin()
}

/// Tests `T ∩ W ∩ B_j ≠ ∅` on axis samples of spacing `r_T/4`, using at
/// each the cross-section point nearest to each plane.
fn tube_meets_wall_in_ball(tube: &Tube, pp: &PartitionPoly, wall: f64, ball: &Ball) -> bool {
    let v = tube.direction;
    let a = tube.anchor;
    // axis parameters inside the ball grown by the tube radius
    let t0 = dot(sub(ball.center, a), v);
    let off = norm(sub(sub(ball.center, a), scale3(v, t0)));
    let reach = ball.radius + tube.radius;
    if off > reach {
        return false;
    }
    let half = (reach * reach - off * off).sqrt();
    let lo = (t0 - half).max(-tube.half_length);
    let hi = (t0 + half).min(tube.half_length);
    if lo > hi {
        return false;
    }
    let step = 0.25 * tube.radius;
    let n = ((hi - lo) / step).ceil().max(1.0) as usize;
    for k in 0..=n {
        let p = add(a, scale3(v, lo + (hi - lo) * k as f64 / n as f64));
        for f in &pp.factors {
            let np = sub(f.normal, scale3(v, dot(f.normal, v)));
            let len = norm(np);
            let val = f.eval(p);
            let x = if len > 1e-14 {
                let shift = (val.abs() / len).min(tube.radius);
                sub(p, scale3(np, val.signum() * shift / len))
            } else {
                p
            };
            if f.distance(x) <= wall && dist(x, ball.center) <= ball.radius {
                return true;
            }
        }
    }
    false
}

/// Whether the plane lattice of spacing `step` has a point in `2B_j ∩ 10T`.
fn has_witness(f: &AffineFactor, ball: &Ball, tube: &Tube, step: f64) -> bool {
    witness_count(f, ball, tube, step, true) > 0
}

/// Lattice points on the plane inside `2B_j ∩ 10T`, counted row by row.
pub fn witness_count(f: &AffineFactor, ball: &Ball, tube: &Tube, step: f64, stop_at_first: bool) -> usize {
    let n = f.normal;
    let (e1, e2) = plane_basis(n);
    let o = scale3(n, f.offset);
    let big = 2.0 * ball.radius;
    let dc = f.eval(ball.center);
    if dc.abs() > big {
        return 0;
    }
    let rho = (big * big - dc * dc).sqrt();
    let foot = sub(ball.center, scale3(n, dc));
    let d = [dot(sub(foot, o), e1), dot(sub(foot, o), e2)];
    let v = tube.direction;
    let w = sub(o, tube.anchor);
    let rad = 10.0 * tube.radius;
    let len = 10.0 * tube.half_length;
    let (a1, a2, aw) = (dot(e1, v), dot(e2, v), dot(w, v));
    let j0 = ((d[1] - rho) / step).ceil() as i64;
    let j1 = ((d[1] + rho) / step).floor() as i64;
    let mut count = 0;
    for j in j0..=j1 {
        let u2 = j as f64 * step;
        let dy = u2 - d[1];
        let hw = (rho * rho - dy * dy).max(0.0).sqrt();
        let (mut lo, mut hi) = (d[0] - hw, d[0] + hw);
        // slab along the axis: |a1 u1 + a2 u2 + aw| ≤ len
        let c0 = a2 * u2 + aw;
        if a1.abs() > 1e-14 {
            let (p, q) = ((-len - c0) / a1, (len - c0) / a1);
            lo = lo.max(p.min(q));
            hi = hi.min(p.max(q));
        } else if c0.abs() > len {
            continue;
        }
        // distance to the axis: |y|² - (y·v)² ≤ rad², y = w + u1 e1 + u2 e2
        let y0 = add(w, scale3(e2, u2));
        let qa = 1.0 - a1 * a1;
        let qb = 2.0 * (dot(y0, e1) - a1 * dot(y0, v));
        let qc = dot(y0, y0) - dot(y0, v).powi(2) - rad * rad;
        if qa > 1e-12 {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                continue;
            }
            let s = disc.sqrt();
            lo = lo.max((-qb - s) / (2.0 * qa));
            hi = hi.min((-qb + s) / (2.0 * qa));
        } else if qb.abs() > 1e-14 {
            let root = -qc / qb;
            if qb > 0.0 {
                hi = hi.min(root);
            } else {
                lo = lo.max(root);
            }
        } else if qc > 0.0 {
            continue;
        }
        if lo > hi {
            continue;
        }
        let i0 = (lo / step).ceil() as i64;
        let i1 = (hi / step).floor() as i64;
        if i1 >= i0 {
            count += (i1 - i0 + 1) as usize;
            if stop_at_first {
                return count;
            }
        }
    }
    count
}

fn plane_basis(n: Point3) -> (Point3, Point3) {
    let a = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = sub(a, scale3(n, dot(a, n)));
    let e1 = scale3(e1, 1.0 / norm(e1));
    let e2 = cross(n, e1);
    (e1, e2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetRow {
    pub statistic: String,
    pub measured: f64,
    pub budget: f64,
}

impl BudgetRow {
    pub fn ratio(&self) -> f64 {
        if self.budget > 0.0 {
            self.measured / self.budget
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceReport {
    /// Max over tubes of the number of `j` with a transverse label.
    pub max_transverse_sets: usize,
    /// Max over `j` of the number of caps `θ` owning a tangent tube.
    pub max_tangent_caps: usize,
    /// Max over tubes of the number of modified cells met.
    pub max_modified_cells: usize,
    pub rows: Vec<BudgetRow>,
}

/// Exponent used for the `D^{O(1)}` transverse budget.
pub const TRANSVERSE_EXPONENT: f64 = 3.0;
/// Multiplier of `δ` in the `R^{1/2 + O(δ)}` tangent-cap budget.
pub const TANGENT_DELTA_FACTOR: f64 = 4.0;

/// Incidence counts against their budgets. `cap_of[t]` is the index of
/// tube `t`'s cap in `caps`.
pub fn incidence_stats(
    tubes: &[Tube],
    cap_of: &[usize],
    tc: &TubeClassification,
    pp: &PartitionPoly,
    cc: &CellComplex,
    caps: &CapDecomposition,
    r: f64,
    delta: f64,
) -> Result<IncidenceReport> {
    if cap_of.len() != tubes.len() || tc.labels.len() != tubes.len() {
        return Err(param("tubes", "tube, cap and label counts differ"));
    }
    if let Some(&bad) = cap_of.iter().find(|&&c| c >= caps.caps.len()) {
        return Err(param("cap_of", format!("cap index {bad} out of range")));
    }
    let d = pp.degree().max(1) as f64;
    let max_transverse_sets = tc
        .labels
        .iter()
        .map(|row| row.iter().filter(|&&l| l == TubeLabel::Transverse).count())
        .max()
        .unwrap_or(0);
    let max_tangent_caps = (0..cc.cover.len())
        .map(|j| tc.tangent(j).iter().map(|&t| cap_of[t]).collect::<BTreeSet<_>>().len())
        .max()
        .unwrap_or(0);
    let max_modified_cells = par_map(tubes.len(), |t| modified_cells_met(&tubes[t], pp, cc))
        .into_iter()
        .max()
        .unwrap_or(0);
    let rows = vec![
        BudgetRow {
            statistic: "transverse_sets_per_tube".into(),
            measured: max_transverse_sets as f64,
            budget: d.powf(TRANSVERSE_EXPONENT),
        },
        BudgetRow {
            statistic: "tangent_caps_per_ball".into(),
            measured: max_tangent_caps as f64,
            budget: d * d * r.powf(0.5 + TANGENT_DELTA_FACTOR * delta),
        },
        BudgetRow {
            statistic: "modified_cells_per_tube".into(),
            measured: max_modified_cells as f64,
            budget: d + 1.0,
        },
        BudgetRow {
            statistic: "cells".into(),
            measured: cc.cells.len() as f64,
            budget: d.powi(3),
        },
    ];
    Ok(IncidenceReport { max_transverse_sets, max_tangent_caps, max_modified_cells, rows })
}

/// Distinct cells met by `T \ W`, sampled on the axis and a ring of eight
/// points at the tube radius every `r_T/4` along the tube.
pub fn modified_cells_met(tube: &Tube, pp: &PartitionPoly, cc: &CellComplex) -> usize {
    let v = tube.direction;
    let a = if v[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = sub(a, scale3(v, dot(a, v)));
    let e1 = scale3(e1, 1.0 / norm(e1));
    let e2 = cross(v, e1);
    let step = 0.25 * tube.radius;
    let n = (2.0 * tube.half_length / step).ceil() as usize;
    let mut seen = BTreeSet::new();
    for k in 0..=n {
        let c = add(tube.anchor, scale3(v, -tube.half_length + 2.0 * tube.half_length * k as f64 / n as f64));
        for ring in 0..9 {
            let x = if ring == 0 {
                c
            } else {
                let phi = std::f64::consts::TAU * (ring - 1) as f64 / 8.0;
                add(c, add(scale3(e1, tube.radius * phi.cos()), scale3(e2, tube.radius * phi.sin())))
            };
            if !cc.in_wall(pp, x) {
                seen.insert(cc.cell_of(pp, x));
            }
        }
    }
    seen.len()
}

pub fn write_cells_csv<W: std::io::Write>(cc: &CellComplex, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "cell,mass,sign_classes")?;
    for c in &cc.cells {
        let classes: Vec<String> = c.classes.iter().map(|x| x.to_string()).collect();
        writeln!(w, "{},{},{}", c.id, c.mass, classes.join(" "))?;
    }
    Ok(())
}

pub fn write_incidence_csv<W: std::io::Write>(tc: &TubeClassification, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "tube,j,label")?;
    for (t, row) in tc.labels.iter().enumerate() {
        for (j, l) in row.iter().enumerate() {
            if *l != TubeLabel::None {
                writeln!(w, "{},{},{}", t, j, l.as_str())?;
            }
        }
    }
    Ok(())
}

pub fn write_budgets_csv<W: std::io::Write>(rows: &[BudgetRow], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "statistic,measured,budget,ratio")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.statistic, r.measured, r.budget, r.ratio())?;
    }
    Ok(())
}

fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale3(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

fn dist(a: Point3, b: Point3) -> f64 {
    norm(sub(a, b))
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}
