//! Experiment orchestration. Each subcommand produces its artifacts in
//! memory; files are written only once everything has been computed.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use wrlab::analysis::{
    bilinear_scaling_probe, broad_narrow_split_check, knapp_sweep, superlevel_experiment, SweepResult,
};
use wrlab::geometry::{
    make_cap_decomposition, split_function, validate_lambda_class, Cap, SampleGrid, SplitMode,
    SurfaceFunction,
};
use wrlab::numerics::pairwise_sum_c;
use wrlab::oscint::{
    dual_restrict, extend_direct, extend_discrete, extend_slices, ComplexField3, FnDensity, Grid3,
    QuadratureRule,
};
use wrlab::partition::{
    angle_to_plane, classify_tubes, incidence_stats, line_cell_incidence, partition_mass, witness_count,
    write_budgets_csv, write_cells_csv, write_incidence_csv, BudgetRow, MassPoints, TubeLabel, WallScale,
};
use wrlab::wavepackets::{
    decompose, energy_check, orthogonality_check, reconstruct_check, write_manifest, PacketParams, Tube,
};
use wrlab::weights::{
    estimate_a_alpha, localize_weight, make_slab_weight, mollify_weight, parabolic_rescale, BumpKernel,
};
use wrlab::LabError;

use crate::config::{ConfigError, RunConfig, Subcommand, PROBE_SUPPORT};
use crate::emit::{sweep_rows, sweep_summary, sweep_svg, EmitError, Table};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error(transparent)]
    Emit(#[from] EmitError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("thread pool: {0}")]
    Pool(String),
}

impl RunError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Lab(LabError::LambdaClass { .. }) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    /// File name and contents, in emission order.
    pub artifacts: Vec<(String, Vec<u8>)>,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn artifact(&self, name: &str) -> Option<&[u8]> {
        self.artifacts.iter().find(|a| a.0 == name).map(|a| a.1.as_slice())
    }

    /// Names of the CSV artifacts.
    pub fn csv_names(&self) -> Vec<&str> {
        self.artifacts.iter().map(|a| a.0.as_str()).filter(|n| n.ends_with(".csv")).collect()
    }

    fn table(&mut self, name: &str, t: &Table) {
        self.artifacts.push((name.to_string(), t.to_bytes()));
    }

    fn bytes(&mut self, name: &str, b: Vec<u8>) {
        self.artifacts.push((name.to_string(), b));
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(Check { name: name.to_string(), pass, detail });
    }

    fn sweep(&mut self, stem: &str, s: &SweepResult) -> Result<(), RunError> {
        self.table(&format!("{stem}.csv"), &sweep_rows(s));
        self.table(&format!("{stem}_summary.csv"), &sweep_summary(s));
        self.bytes(&format!("{stem}.svg"), sweep_svg(s)?.into_bytes());
        Ok(())
    }

    fn budgets(&mut self, name: &str, rows: &[BudgetRow]) -> Result<(), RunError> {
        let mut buf = Vec::new();
        write_budgets_csv(rows, &mut buf).map_err(|e| io_err(name, e))?;
        self.bytes(name, buf);
        for r in rows {
            self.check(&r.statistic, r.measured <= r.budget, format!("{} <= {}", r.measured, r.budget));
        }
        Ok(())
    }
}

fn io_err(path: impl AsRef<Path>, source: std::io::Error) -> RunError {
    RunError::Io { path: path.as_ref().to_path_buf(), source }
}

/// Runs the subcommand on a pool of `cfg.threads` threads (0: default).
pub fn execute(cfg: &RunConfig) -> Result<Outcome, RunError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    pool.install(|| match cfg.subcommand {
        Subcommand::Extend => extend(cfg),
        Subcommand::KnappSweep => knapp(cfg),
        Subcommand::Weights => weights(cfg),
        Subcommand::PartitionDemo => partition_demo(cfg),
        Subcommand::WavepacketCheck => wavepacket_check(cfg),
        Subcommand::BroadCheck => broad_check(cfg),
        Subcommand::DualSuperlevel => dual_superlevel(cfg),
        Subcommand::BilinearProbe => bilinear_probe(cfg),
    })
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub outcome: Outcome,
    pub dir: PathBuf,
    pub wall_seconds: f64,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.outcome.passed() {
            0
        } else {
            2
        }
    }
}

/// Executes and writes artifacts plus `manifest.json` under
/// `output_dir/<subcommand>/`.
pub fn run(cfg: &RunConfig) -> Result<RunSummary, RunError> {
    let start = Instant::now();
    let outcome = execute(cfg)?;
    let wall = start.elapsed().as_secs_f64();
    let dir = cfg.output_dir.join(cfg.subcommand.name());
    let manifest = manifest(cfg, &outcome, wall);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    for (name, bytes) in &outcome.artifacts {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
    }
    let path = dir.join("manifest.json");
    std::fs::write(&path, manifest).map_err(|e| io_err(&path, e))?;
    Ok(RunSummary { outcome, dir, wall_seconds: wall })
}

fn manifest(cfg: &RunConfig, outcome: &Outcome, wall: f64) -> String {
    let checks: Vec<_> = outcome
        .checks
        .iter()
        .map(|c| json!({"name": c.name, "pass": c.pass, "detail": c.detail}))
        .collect();
    let m = json!({
        "subcommand": cfg.subcommand.name(),
        "config": cfg.params,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "versions": {
            "wrlab": env!("CARGO_PKG_VERSION"),
            "parallel_core": cfg!(feature = "parallel"),
        },
        "wall_seconds": wall,
        "artifacts": outcome.artifacts.iter().map(|a| a.0.clone()).collect::<Vec<_>>(),
        "checks": checks,
        "pass": outcome.passed(),
    });
    let mut s = serde_json::to_string_pretty(&m).expect("manifest serializes");
    s.push('\n');
    s
}

fn one() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

/// `Ef` for the Knapp cap on the box `|x'| ≤ cR^{1/2}, |x₃| ≤ cR`, where
/// `|Ef| ≥ π/(2R)` when `c` is small.
fn extend(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let r = cfg.get_r()?;
    let n = cfg.get_usize("nodes")?;
    let c = cfg.get_f64("box-constant")?;
    let rho = r.powf(-0.5);
    let cap = Cap::new([0.0, 0.0], rho)?;
    let f = FnDensity { f: |_| one(), cap: Some(cap) };
    let rule = QuadratureRule::polar([0.0, 0.0], rho, cfg.get_usize("radial")?, cfg.get_usize("angular")?)?;
    let grid = Grid3::new([0.0; 3], [c * r.sqrt(), c * r.sqrt(), c * r], [n; 3])?;
    let pts = grid.nodes();
    let vals = extend_direct(&f, &pts, &rule)?;
    let mut t = Table::new(&["x1", "x2", "x3", "re", "im", "abs"]);
    for (x, v) in pts.iter().zip(&vals) {
        t.push([x[0], x[1], x[2], v.re, v.im, v.norm()]);
    }
    let mut out = Outcome::default();
    out.table("extend.csv", &t);
    let low = vals.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
    let bound = 0.5 * PI / r;
    out.check("knapp_lower_bound", low >= bound, format!("min |Ef| = {low}, bound {bound}"));
    Ok(out)
}

fn knapp(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let e = cfg.exponents()?;
    let sweep = knapp_sweep(e.alpha, e.p, e.q, &cfg.get_r_list()?, cfg.get_f64("box-constant")?)?;
    let mut out = Outcome::default();
    out.sweep("knapp_integral", &sweep.integral)?;
    out.sweep("knapp_norm", &sweep.norm)?;
    for s in [&sweep.integral, &sweep.norm] {
        out.check(
            &format!("{}_slope", s.label),
            s.pass(),
            format!("slope {} ± {}, reference {} ± {}", s.fitted_slope, s.slope_stderr, s.ref_slope, s.tolerance),
        );
    }
    out.check(
        "necessity_margin",
        sweep.necessity_margin >= 0.0,
        format!("2p - alpha - 1 = {}", sweep.necessity_margin),
    );
    Ok(out)
}

fn weights(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let alpha = cfg.get_f64("alpha")?;
    let rs = cfg.get_r_list()?;
    let centers = cfg.get_usize("centers")?;
    let k = cfg.get_f64("K")?;
    let r_small = cfg.get_f64("rescale")?;
    let r_scan = cfg.get_f64("R-scan")?;
    let h = make_slab_weight(alpha - 2.0)?;
    let rep = estimate_a_alpha(&h, alpha, &rs, centers)?;
    let mut t = Table::new(&["alpha", "R", "center_x", "center_y", "center_z", "integral", "ratio"]);
    for row in &rep.rows {
        t.push([alpha, row.radius, row.center[0], row.center[1], row.center[2], row.integral, row.ratio]);
    }
    let mut out = Outcome::default();
    out.table("weights.csv", &t);

    let r_max = rs.iter().copied().fold(1.0, f64::max);
    let extent = 3.0 * r_max + 130.0 + k;
    let loc = localize_weight(&h, k, alpha, rep.a_alpha, extent)?;
    let a_loc = estimate_a_alpha(&loc, alpha, &rs, centers)?.a_alpha;
    let small = parabolic_rescale(&h, r_small)?;
    let a_small = estimate_a_alpha(&small, alpha, &rs, centers)?.a_alpha;
    let moll = mollify_weight(&h, rep.a_alpha, r_scan, BumpKernel::default())?;
    let inside: Vec<f64> = rs.iter().copied().filter(|&r| r <= r_scan).collect();
    let a_moll = if inside.is_empty() { 0.0 } else { estimate_a_alpha(&moll, alpha, &inside, centers)?.a_alpha };

    let rows = vec![
        BudgetRow { statistic: "a_alpha".into(), measured: rep.a_alpha, budget: 200.0 },
        BudgetRow {
            statistic: "localized_a_alpha".into(),
            measured: a_loc,
            budget: (1.0 + 1e-3) * k.powf(3.0 - alpha),
        },
        BudgetRow {
            statistic: "rescaled_a_alpha_ratio".into(),
            measured: a_small / rep.a_alpha,
            budget: 192.0 * r_small.powf(3.0 - alpha) * (1.0 + 1e-2),
        },
        BudgetRow { statistic: "mollified_a_alpha".into(), measured: a_moll, budget: 10.0 },
    ];
    out.budgets("weights_summary.csv", &rows)?;
    Ok(out)
}

fn ball_points(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<[f64; 3]> {
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let x = [rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r)];
        if x[0] * x[0] + x[1] * x[1] + x[2] * x[2] <= r * r {
            pts.push(x);
        }
    }
    pts
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Tube along the normal of `cap` through `p`.
fn tube_through(cap: &Cap, p: [f64; 3], r: f64, delta: f64) -> Tube {
    let v = unit(cap.normal());
    let s = p[0] * v[0] + p[1] * v[1] + p[2] * v[2];
    let anchor = [p[0] - s * v[0], p[1] - s * v[1], p[2] - s * v[2]];
    let t = -anchor[2] / v[2];
    Tube {
        anchor,
        direction: v,
        radius: r.powf(0.5 + delta),
        half_length: r,
        foot: [anchor[0] + t * v[0], anchor[1] + t * v[1]],
        lattice: (0, 0),
    }
}

fn partition_demo(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let n = cfg.get_usize("points")?;
    let d = cfg.get_usize("D")?;
    let r = cfg.get_r()?;
    let delta = cfg.get_f64("delta")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mass = MassPoints::uniform(ball_points(&mut rng, n, r));
    let (pp, cc) = partition_mass(&mass, d, WallScale { r, delta })?;

    let share = mass.total() / 2f64.powi(d as i32);
    let imbalance = cc
        .cells
        .iter()
        .map(|c| if c.mass > 0.0 { (c.mass / share).max(share / c.mass) } else { f64::INFINITY })
        .fold(1.0, f64::max);

    let mut worst_line = 0;
    for _ in 0..cfg.get_usize("lines")? {
        let p = [rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r)];
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        worst_line = worst_line.max(line_cell_incidence(p, v, &pp, &cc));
    }

    let caps = make_cap_decomposition(r.powf(-0.5), 1.0)?;
    let threshold = r.powf(-0.5 + 2.0 * delta);
    // caps whose tubes can lie in each factor plane
    let flat: Vec<(usize, Vec<usize>)> = pp
        .factors
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let cs = (0..caps.caps.len())
                .filter(|&c| angle_to_plane(unit(caps.caps[c].normal()), f.normal) < 0.5 * threshold)
                .collect();
            (i, cs)
        })
        .filter(|x: &(usize, Vec<usize>)| !x.1.is_empty())
        .collect();
    let n_tubes = cfg.get_usize("tubes")?;
    let mut tubes = Vec::with_capacity(n_tubes);
    let mut cap_of = Vec::with_capacity(n_tubes);
    for t in 0..n_tubes {
        let mut p = ball_points(&mut rng, 1, 0.5 * r)[0];
        let c = if t % 2 == 1 && !flat.is_empty() {
            let (fi, cs) = &flat[rng.gen_range(0..flat.len())];
            let f = pp.factors[*fi];
            let v = f.eval(p);
            p = [p[0] - v * f.normal[0], p[1] - v * f.normal[1], p[2] - v * f.normal[2]];
            cs[rng.gen_range(0..cs.len())]
        } else {
            rng.gen_range(0..caps.caps.len())
        };
        tubes.push(tube_through(&caps.caps[c], p, r, delta));
        cap_of.push(c);
    }
    let tc = classify_tubes(&tubes, &pp, &cc, r, delta)?;
    // recheck each label against the angle and witness rule
    let mut exclusivity = 0usize;
    for (t, row) in tc.labels.iter().enumerate() {
        for (j, label) in row.iter().enumerate() {
            let steep = pp.factors.iter().any(|f| {
                angle_to_plane(tubes[t].direction, f.normal) > tc.threshold
                    && witness_count(f, &cc.cover[j], &tubes[t], tc.witness_step, true) > 0
            });
            let bad = match label {
                TubeLabel::Tangent => steep,
                TubeLabel::Transverse => !steep,
                TubeLabel::None => false,
            };
            exclusivity += bad as usize;
        }
    }
    let inc = incidence_stats(&tubes, &cap_of, &tc, &pp, &cc, &caps, r, delta)?;

    let mut out = Outcome::default();
    let mut buf = Vec::new();
    write_cells_csv(&cc, &mut buf).map_err(|e| io_err("cells.csv", e))?;
    out.bytes("cells.csv", buf);
    let mut buf = Vec::new();
    write_incidence_csv(&tc, &mut buf).map_err(|e| io_err("incidence.csv", e))?;
    out.bytes("incidence.csv", buf);
    let mut rows = vec![
        BudgetRow { statistic: "cell_imbalance".into(), measured: imbalance, budget: 8.0 },
        BudgetRow { statistic: "line_cells".into(), measured: worst_line as f64, budget: d as f64 + 1.0 },
        BudgetRow { statistic: "label_violations".into(), measured: exclusivity as f64, budget: 0.0 },
    ];
    rows.extend(inc.rows);
    out.budgets("budgets.csv", &rows)?;
    Ok(out)
}

fn wavepacket_check(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let r = cfg.get_r()?;
    let delta = cfg.get_f64("delta")?;
    let order = cfg.get_usize("N")? as u32;
    let step = 2.0 / cfg.get_usize("n")? as f64;
    let theta = Cap::new([0.0, 0.0], r.powf(-0.5))?;
    let f = SurfaceFunction::from_fn(SampleGrid::around_cap(&theta, step), Some(theta), |_| one());
    let ps = decompose(&f, theta, PacketParams::new(r, delta, order))?;
    let rec = reconstruct_check(&ps, &f, r, cfg.get_usize("probes")?, cfg.get_usize("slices")?, cfg.seed)?;
    let orth = orthogonality_check(&ps, &f);
    let energy = energy_check(&ps, &f);

    let mut out = Outcome::default();
    let mut buf = Vec::new();
    write_manifest(&ps, &mut buf).map_err(|e| io_err("tubes.csv", e))?;
    out.bytes("tubes.csv", buf);
    let rows = vec![
        BudgetRow { statistic: "reconstruction_constant".into(), measured: rec.c_reconstruction, budget: 100.0 },
        BudgetRow { statistic: "off_tube_constant".into(), measured: rec.c_off_tube, budget: 100.0 },
        BudgetRow { statistic: "energy_ratio".into(), measured: energy.constant, budget: 4.0 },
        BudgetRow { statistic: "orthogonality_constant".into(), measured: orth.constant, budget: 100.0 },
    ];
    out.budgets("wavepackets.csv", &rows)?;
    Ok(out)
}

/// Sum of a few random complex bumps inside the unit disk.
fn random_density(rng: &mut ChaCha8Rng, step: f64) -> SurfaceFunction {
    let bumps: Vec<([f64; 2], f64, Complex64)> = (0..rng.gen_range(2..6))
        .map(|_| {
            let rad = rng.gen_range(0.1..0.5);
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            let m = rng.gen_range(0.0..(1.0 - rad));
            let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            ([m * a.cos(), m * a.sin()], rad, c)
        })
        .collect();
    SurfaceFunction::from_fn(SampleGrid::unit_disk((2.0 / step).round() as usize), None, |w| {
        bumps
            .iter()
            .map(|(c, rad, coef)| {
                let d = ((w[0] - c[0]).powi(2) + (w[1] - c[1]).powi(2)) / (rad * rad);
                if d < 1.0 {
                    coef * (1.0 - d).powi(2)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .sum()
    })
}

fn broad_check(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let e = cfg.exponents()?;
    let nodes = cfg.get_usize("nodes")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dec = make_cap_decomposition(1.0 / e.k, 1.0)?;
    // sample step 1/64 and unit node step close the slice transforms
    let step = 1.0 / 64.0;
    let mut t = Table::new(&["config", "nodes", "broad_nodes", "max_violation", "scale", "relative_violation"]);
    let mut worst: f64 = 0.0;
    for c in 0..cfg.get_usize("configs")? {
        let f = random_density(&mut rng, step);
        let center = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)].map(f64::round);
        let grid = Grid3::cube(center, 0.5 * nodes as f64, nodes)?;
        let ef = extend_slices(&f, &grid)?;
        let taus: Vec<ComplexField3> = split_function(&f, &dec, SplitMode::Disjoint)
            .iter()
            .filter(|p| !p.is_zero())
            .map(|p| extend_slices(p, &grid))
            .collect::<Result<_, _>>()?;
        let rep = broad_narrow_split_check(&ef, &taus, e.beta, e.p)?;
        worst = worst.max(rep.relative_violation());
        t.push([
            c.to_string(),
            rep.nodes.to_string(),
            rep.broad_nodes.to_string(),
            rep.max_violation.to_string(),
            rep.scale.to_string(),
            rep.relative_violation().to_string(),
        ]);
    }
    let mut out = Outcome::default();
    out.table("broad.csv", &t);
    out.check("pointwise_inequality", worst <= 1e-8, format!("worst relative violation {worst}"));
    Ok(out)
}

fn dual_superlevel(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let e = cfg.exponents()?;
    let r = cfg.get_f64("R")?;
    let nodes = cfg.get_usize("nodes")?;
    let mesh = cfg.get_usize("mesh")?;
    // slabs of half-width 10/64 so H varies inside B(0, R)
    let h = parabolic_rescale(&make_slab_weight(e.alpha - 2.0)?, 1.0 / 64.0)?;
    let radii: Vec<f64> = (0..=4).map(|k| 2f64.powi(k)).collect();
    let h = {
        let a = estimate_a_alpha(&h, e.alpha, &radii, 64)?.a_alpha;
        h.with_estimate(a)
    };
    let disk = SampleGrid::unit_disk(mesh);
    let rule = QuadratureRule::midpoint_on(&disk)?;
    let grid = Grid3::cube([0.0; 3], r, nodes)?;
    let pts = grid.nodes();
    let dv = grid.cell_volume();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut pairing = Table::new(&["instance", "lhs_re", "lhs_im", "rhs_re", "rhs_im", "relative_error"]);
    let mut levels = Table::new(&["instance", "lambda", "measure"]);
    let mut summary = Table::new(&[
        "instance",
        "sup",
        "lambda1",
        "holder_mid",
        "holder_rhs",
        "a_alpha",
        "decay_slope",
        "q_dual",
        "trivial_ok",
        "holder_ok",
        "sup_ok",
    ]);
    let mut worst_pair: f64 = 0.0;
    let (mut trivial, mut holder, mut sup) = (true, true, true);
    let (mut worst_holder, mut worst_sup): (f64, f64) = (0.0, 0.0);
    for inst in 0..cfg.get_usize("instances")? {
        let values: Vec<Complex64> = pts
            .iter()
            .map(|x| {
                let z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                if x[0] * x[0] + x[1] * x[1] + x[2] * x[2] <= r * r {
                    z
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let g = ComplexField3::from_values(grid, values)?;
        let mut f = SurfaceFunction::zeros(disk, None);
        for v in f.samples.iter_mut() {
            *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }

        let rg = dual_restrict(&g, &h, &rule.nodes);
        let lhs_terms: Vec<Complex64> =
            rule.nodes.iter().zip(&rule.weights).zip(&rg).map(|((w, wt), v)| v * f.eval(*w) * wt).collect();
        let lhs = pairwise_sum_c(&lhs_terms);
        let ef = extend_discrete(&f, &pts, &rule);
        let rhs_terms: Vec<Complex64> =
            pts.iter().zip(&g.values).zip(&ef).map(|((x, gv), e)| e * gv * (h.eval(*x) * dv)).collect();
        let rhs = pairwise_sum_c(&rhs_terms);
        let rel = (lhs - rhs).norm() / lhs.norm().max(rhs.norm()).max(f64::MIN_POSITIVE);
        worst_pair = worst_pair.max(rel);
        pairing.push([inst as f64, lhs.re, lhs.im, rhs.re, rhs.im, rel]);

        let rep = superlevel_experiment(&g, &h, &e, r, mesh)?;
        for (l, s) in rep.lambdas.iter().zip(&rep.tail) {
            levels.push([inst as f64, *l, *s]);
        }
        summary.push([
            inst.to_string(),
            rep.sup.to_string(),
            rep.lambda1.to_string(),
            rep.holder_mid.to_string(),
            rep.holder_rhs.to_string(),
            rep.a_alpha.to_string(),
            rep.decay_slope.map_or_else(|| "nan".to_string(), |s| s.to_string()),
            rep.q_dual.to_string(),
            rep.trivial_ok.to_string(),
            rep.holder_ok.to_string(),
            rep.sup_ok.to_string(),
        ]);
        trivial &= rep.trivial_ok;
        holder &= rep.holder_ok;
        sup &= rep.sup_ok;
        worst_holder = worst_holder.max(rep.lambda1 / rep.holder_mid).max(rep.holder_mid / rep.holder_rhs);
        worst_sup = worst_sup.max(rep.sup / rep.lambda1);
    }
    let mut out = Outcome::default();
    out.table("pairing.csv", &pairing);
    out.table("superlevel.csv", &levels);
    out.table("superlevel_summary.csv", &summary);
    out.check("duality_pairing", worst_pair <= 1e-8, format!("worst relative error {worst_pair}"));
    let n = summary.len();
    out.check("trivial_bound", trivial, format!("tail measure within total measure in all {n} instances"));
    out.check("holder_bound", holder, format!("worst ratio along the chain {worst_holder}"));
    out.check("sup_bound", sup, format!("worst sup/L1 ratio {worst_sup}"));
    Ok(out)
}

/// Two bumps of radius 0.05 at `(±0.375, 0)`, scaled into the normalized
/// class at every radius of the sweep.
pub fn probe_input(n: usize, k: f64, rs: &[f64]) -> Result<SurfaceFunction, LabError> {
    let step = 1.0 / n as f64;
    let c = PROBE_SUPPORT - 0.05;
    let grid = SampleGrid::aligned(step, [-PROBE_SUPPORT - 0.025, -0.08], [PROBE_SUPPORT + 0.025, 0.08]);
    let bump = |w: [f64; 2], x0: f64| {
        let d = ((w[0] - x0).powi(2) + w[1].powi(2)) / 0.0025;
        if d < 1.0 {
            (1.0 - d).powi(2)
        } else {
            0.0
        }
    };
    let f = SurfaceFunction::from_fn(grid, None, |w| Complex64::new(bump(w, -c) + bump(w, c), 0.0));
    let pieces = split_function(&f, &make_cap_decomposition(1.0 / k, 1.0)?, SplitMode::Disjoint);
    let mut worst: f64 = 0.0;
    for &r in rs {
        worst = worst.max(validate_lambda_class(&pieces, r)?.worst_ratio);
    }
    Ok(f.scaled(Complex64::new(1.0 / (1.05 * worst).sqrt(), 0.0)))
}

fn bilinear_probe(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let e = cfg.exponents()?;
    let rs = cfg.get_r_list()?;
    let f = probe_input(cfg.get_usize("n")?, e.k, &rs)?;
    let h = make_slab_weight(e.alpha - 2.0)?;
    let probe = bilinear_scaling_probe(&f, &h, &e, &rs)?;
    let mut t = Table::new(&[
        "R",
        "balls_used",
        "l_ratio",
        "lh_ratio",
        "g0_scaled",
        "tang_budget_ratio",
        "tangent_tubes",
        "tubes",
        "lambda_worst",
    ]);
    for row in &probe.rows {
        t.push([
            row.r.to_string(),
            row.balls_used.to_string(),
            row.l_ratio.to_string(),
            row.lh_ratio.to_string(),
            row.g0_scaled.to_string(),
            row.tang_budget_ratio.to_string(),
            row.tangent_tubes.to_string(),
            row.tubes.to_string(),
            row.lambda_worst.to_string(),
        ]);
    }
    let mut out = Outcome::default();
    out.table("bilinear.csv", &t);
    let mut seen = BTreeSet::new();
    for s in [&probe.l_sweep, &probe.lh_sweep, &probe.g0_sweep].into_iter().flatten() {
        if seen.insert(s.label.clone()) {
            out.sweep(&s.label, s)?;
            out.check(
                &format!("{}_slope", s.label),
                s.pass(),
                format!("slope {} ± {}, reference {} ± {}", s.fitted_slope, s.slope_stderr, s.ref_slope, s.tolerance),
            );
        }
    }
    Ok(out)
}
