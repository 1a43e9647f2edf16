use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wrlab::analysis::{broad_narrow_split_check, broad_part, superlevel_experiment, ExponentConfig};
use wrlab::geometry::{
    make_cap_decomposition, split_function, validate_lambda_class, SampleGrid, SplitMode, SurfaceFunction,
};
use wrlab::numerics::pairwise_sum;
use wrlab::oscint::{extend_direct, extend_slices, ComplexField3, Grid3, QuadratureRule};
use wrlab::partition::{line_cell_incidence, modified_cells_met, partition_mass, MassPoints, WallScale};
use wrlab::wavepackets::Tube;
use wrlab::weights::{
    estimate_a_alpha, estimate_a_alpha_on, localize_weight, make_slab_weight, parabolic_rescale,
};

type Bump = ((f64, f64), f64, (f64, f64));

fn bumps() -> impl Strategy<Value = Vec<Bump>> {
    prop::collection::vec(
        ((-0.6..0.6f64, -0.6..0.6f64), 0.05..0.35f64, (-1.0..1.0f64, -1.0..1.0f64)),
        1..4,
    )
}

fn density(bs: &[Bump], step: f64) -> SurfaceFunction {
    let grid = SampleGrid::unit_disk((2.0 / step).round() as usize);
    SurfaceFunction::from_fn(grid, None, |w| {
        bs.iter()
            .map(|&((cx, cy), r, (a, b))| {
                let d = ((w[0] - cx).powi(2) + (w[1] - cy).powi(2)) / (r * r);
                if d < 1.0 {
                    Complex64::new(a, b) * (1.0 - d).powi(2)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .sum()
    })
}

fn field(grid: Grid3, vals: &[(f64, f64)]) -> ComplexField3 {
    ComplexField3::from_values(grid, vals.iter().map(|&(a, b)| Complex64::new(a, b)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn caps_cover_the_disk(r in 0.05..1.0f64, m in 1.0..3.0f64, rho in 0.0..1.0f64, phi in 0.0..6.3f64) {
        let dec = make_cap_decomposition(r, m).unwrap();
        let w = [rho * phi.cos(), rho * phi.sin()];
        prop_assert!(dec.caps.iter().any(|c| c.contains(w)));
        prop_assert!(dec.tile_of(w).is_some());
    }

    #[test]
    fn split_then_sum_reproduces_f(bs in bumps(), k in 2.0..10.0f64, smooth in any::<bool>()) {
        let f = density(&bs, 1.0 / 32.0);
        let dec = make_cap_decomposition(1.0 / k, 1.0).unwrap();
        let mode = if smooth { SplitMode::Smooth } else { SplitMode::Disjoint };
        let pieces = split_function(&f, &dec, mode);
        let total = SurfaceFunction::sum(&pieces).unwrap();
        let g = f.grid;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let w = g.point(i, j);
                if w[0] * w[0] + w[1] * w[1] > 1.0 {
                    continue;
                }
                let d = (total.eval(w) - f.at(i, j)).norm();
                prop_assert!(d <= 1e-12 * (1.0 + f.at(i, j).norm()), "{d}");
            }
        }
    }

    #[test]
    fn lambda_class_is_monotone_in_r(bs in bumps(), big in 16.0..256.0f64, frac in 0.05..1.0f64) {
        let f = density(&bs, 1.0 / 64.0);
        let pieces = split_function(&f, &make_cap_decomposition(0.25, 1.0).unwrap(), SplitMode::Disjoint);
        let worst = validate_lambda_class(&pieces, big).unwrap().worst_ratio;
        if worst > 0.0 {
            let f = f.scaled(Complex64::new(0.99 / worst.sqrt(), 0.0));
            let pieces = split_function(&f, &make_cap_decomposition(0.25, 1.0).unwrap(), SplitMode::Disjoint);
            prop_assert!(validate_lambda_class(&pieces, big).unwrap().ok);
            let small = (big * frac).max(1.0);
            prop_assert!(validate_lambda_class(&pieces, small).unwrap().ok);
        }
    }

    #[test]
    fn slices_agree_with_direct_sum(bs in bumps(), c in (-3i32..3, -3i32..3, -3i32..3)) {
        let f = density(&bs, 1.0 / 64.0);
        let grid = Grid3::cube([c.0 as f64, c.1 as f64, c.2 as f64], 2.0, 4).unwrap();
        let fast = extend_slices(&f, &grid).unwrap();
        let rule = QuadratureRule::midpoint_on(&f.grid).unwrap();
        let direct = extend_direct(&f, &grid.nodes(), &rule).unwrap();
        let scale = direct.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in fast.values.iter().zip(&direct) {
            prop_assert!((a - b).norm() <= 1e-6 * scale.max(1e-300));
        }
    }

    #[test]
    fn extension_is_linear(f1 in bumps(), f2 in bumps(), a in (-2.0..2.0f64, -2.0..2.0f64), b in (-2.0..2.0f64, -2.0..2.0f64)) {
        let (a, b) = (Complex64::new(a.0, a.1), Complex64::new(b.0, b.1));
        let f = density(&f1, 1.0 / 64.0);
        let g = density(&f2, 1.0 / 64.0);
        let mut h = f.scaled(a);
        h.add_scaled(&g, b).unwrap();
        let rule = QuadratureRule::midpoint_on(&f.grid).unwrap();
        let pts = [[0.3, -1.2, 0.7], [2.0, 0.5, -1.5], [0.0, 0.0, 0.0]];
        let ef = extend_direct(&f, &pts, &rule).unwrap();
        let eg = extend_direct(&g, &pts, &rule).unwrap();
        let eh = extend_direct(&h, &pts, &rule).unwrap();
        for i in 0..pts.len() {
            let lin = a * ef[i] + b * eg[i];
            prop_assert!((eh[i] - lin).norm() <= 1e-11 * (1.0 + lin.norm()));
        }
    }

    #[test]
    fn real_densities_have_conjugate_symmetry(bs in bumps(), x in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64)) {
        let real: Vec<Bump> = bs.iter().map(|&(c, r, (a, _))| (c, r, (a, 0.0))).collect();
        let f = density(&real, 1.0 / 64.0);
        let rule = QuadratureRule::midpoint_on(&f.grid).unwrap();
        let v = extend_direct(&f, &[[x.0, x.1, x.2], [-x.0, -x.1, -x.2]], &rule).unwrap();
        prop_assert!((v[1] - v[0].conj()).norm() <= 1e-12 * (1.0 + v[0].norm()));
    }

    #[test]
    fn holder_chain(vals in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 512), p in 3.01..4.0f64) {
        let alpha = 2.5;
        let r = 4.0;
        let grid = Grid3::cube([0.0; 3], r, 8).unwrap();
        let g = field(grid, &vals);
        let h = parabolic_rescale(&make_slab_weight(0.5).unwrap(), 1.0 / 32.0).unwrap();
        let dv = grid.cell_volume();
        let mut lhs = Vec::new();
        let mut lp = Vec::new();
        let mut hb = Vec::new();
        for i in 0..grid.len() {
            let x = grid.node(i);
            if x[0] * x[0] + x[1] * x[1] + x[2] * x[2] <= r * r {
                let hv = h.eval(x);
                lhs.push(g.values[i].norm() * hv * dv);
                lp.push(g.values[i].norm().powf(p) * dv);
                hb.push(hv * dv);
            }
        }
        let scanned = estimate_a_alpha(&h, alpha, &[1.0, 2.0, 4.0], 32).unwrap().a_alpha;
        // the scan bounds exact ball integrals; the node sum is its discrete twin
        let a = scanned.max(pairwise_sum(&hb) / r.powf(alpha));
        let pc = p / (p - 1.0);
        let rhs = a.powf(1.0 / pc) * r.powf(alpha / pc) * pairwise_sum(&lp).powf(1.0 / p);
        prop_assert!(pairwise_sum(&lhs) <= rhs * (1.0 + 1e-6));
    }

    #[test]
    fn weights_stay_in_unit_interval(x in (-600.0..600.0f64, -50.0..50.0f64, -50.0..50.0f64), a in 0.2..1.0f64, r in 0.05..1.0f64) {
        let h = make_slab_weight(a).unwrap();
        let x = [x.0, x.1, x.2];
        let resc = parabolic_rescale(&h, r).unwrap();
        let loc = localize_weight(&h, 9.0, 2.0 + a, 1.0, 700.0).unwrap();
        for v in [h.eval(x), resc.eval(x), loc.eval(x)] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn scan_is_monotone(a in 0.2..1.0f64, cut in 1usize..20, balls in prop::collection::vec((1.0..64.0f64, (-200.0..200.0f64, -10.0..10.0f64, -10.0..10.0f64)), 2..20)) {
        let h = make_slab_weight(a).unwrap();
        let balls: Vec<(f64, [f64; 3])> = balls.into_iter().map(|(r, c)| (r, [c.0, c.1, c.2])).collect();
        let cut = cut.min(balls.len());
        let part = estimate_a_alpha_on(&h, 2.0 + a, &balls[..cut]).unwrap().a_alpha;
        let full = estimate_a_alpha_on(&h, 2.0 + a, &balls).unwrap().a_alpha;
        prop_assert!(part <= full);
        let few = estimate_a_alpha(&h, 2.0 + a, &[1.0, 8.0], 9).unwrap().a_alpha;
        let more = estimate_a_alpha(&h, 2.0 + a, &[1.0, 8.0, 64.0], 9).unwrap().a_alpha;
        prop_assert!(few <= more);
    }

    #[test]
    fn split_inequality_holds_on_any_input(
        ef in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 27),
        taus in prop::collection::vec(prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 27), 1..6),
        beta in 0.05..1.0f64,
        p in 1.0..4.0f64,
        scale in 0.01..100.0f64,
    ) {
        let grid = Grid3::cube([0.0; 3], 1.5, 3).unwrap();
        let ef = field(grid, &ef);
        let taus: Vec<ComplexField3> = taus.iter().map(|t| field(grid, t)).collect();
        let rep = broad_narrow_split_check(&ef, &taus, beta, p).unwrap();
        prop_assert!(rep.relative_violation() <= 1e-12);
        // scaling every field moves no point between broad and narrow
        let c = Complex64::new(scale, 0.0);
        let scaled = |f: &ComplexField3| ComplexField3::from_values(grid, f.values.iter().map(|v| v * c).collect()).unwrap();
        let b0 = broad_part(&ef, &taus, beta).unwrap();
        let b1 = broad_part(&scaled(&ef), &taus.iter().map(scaled).collect::<Vec<_>>(), beta).unwrap();
        for (x, y) in b0.values.iter().zip(&b1.values) {
            prop_assert_eq!(*x > 0.0, *y > 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn superlevel_bounds_hold(vals in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 216), alpha in 2.1..3.0f64) {
        let grid = Grid3::cube([0.0; 3], 1.5, 6).unwrap();
        let mut g = field(grid, &vals);
        let r = 1.5;
        for i in 0..grid.len() {
            let x = grid.node(i);
            if x[0] * x[0] + x[1] * x[1] + x[2] * x[2] > r * r {
                g.values[i] = Complex64::new(0.0, 0.0);
            }
        }
        let h = parabolic_rescale(&make_slab_weight(alpha - 2.0).unwrap(), 1.0 / 64.0).unwrap();
        let cfg = ExponentConfig::new(alpha, None, 4.0, 2.0, 0.1, 8.0, 0.5, 1.0).unwrap();
        let rep = superlevel_experiment(&g, &h, &cfg, r, 16).unwrap();
        prop_assert!(rep.trivial_ok && rep.holder_ok && rep.sup_ok);
    }

    #[test]
    fn partitions_bound_lines_and_tubes(
        seed in any::<u64>(),
        d in 1usize..7,
        lines in prop::collection::vec(((-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64), (-1.0..1.0f64, -1.0..1.0f64, 0.2..1.0f64)), 50),
    ) {
        let r = 64.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        while pts.len() < 20_000 {
            let x: [f64; 3] = [rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r)];
            if x[0] * x[0] + x[1] * x[1] + x[2] * x[2] <= r * r {
                pts.push(x);
            }
        }
        let mass = MassPoints::uniform(pts);
        let (pp, cc) = partition_mass(&mass, d, WallScale { r, delta: 0.1 }).unwrap();
        let share = mass.total() / 2f64.powi(d as i32);
        for c in &cc.cells {
            prop_assert!(c.mass >= share / 8.0 && c.mass <= 8.0 * share, "{} vs {share}", c.mass);
        }
        for &((x, y, z), (u, v, w)) in &lines {
            prop_assert!(line_cell_incidence([x, y, z], [u, v, w], &pp, &cc) <= d + 1);
            let n = (u * u + v * v + w * w).sqrt();
            let dir = [u / n, v / n, w / n];
            let off: f64 = dir[0] * x + dir[1] * y + dir[2] * z;
            let anchor = [x - off * dir[0], y - off * dir[1], z - off * dir[2]];
            let tube = Tube { anchor, direction: dir, radius: r.powf(0.6), half_length: r, foot: [0.0, 0.0], lattice: (0, 0) };
            prop_assert!(modified_cells_met(&tube, &pp, &cc) <= d + 1);
        }
    }
}
