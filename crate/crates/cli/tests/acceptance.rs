//! Acceptance report: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use perex::bezier::{bernstein, bernstein_basis, BezierSegment};
use perex::frontier::{PlannerMode, PlannerParams};
use perex::qp::{solve_qp, QuadraticProgram};
use perex::sim::{generate_world, TextureLevel};
use perex::traj_position::{optimize_position, plan_trajectory, BoundaryState, Corridor, CorridorParams, PositionTrajectory};
use perex::traj_yaw::{
    covisibility_sampling, desired_yaw_rate, linear_yaw, optimize_yaw, perceptual_cost, perceptual_gradient, YawPlanInput,
    MAX_SAMPLING_ATTEMPTS, YAW_ORDER,
};
use perex::world::{Aabb, CameraModel, CellState, Feature, FeatureMap, GroundTruthWorld, VoxelGrid};
use perex::{unwrap_near, Vec3};
use perex_cli::batch::ModeSummary;
use perex_cli::{run_batch, RunConfig, RunSpec, Summary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Report {
    lines: Vec<(usize, bool, String)>,
}

impl Report {
    fn record(&mut self, n: usize, pass: bool, detail: String) {
        println!("criterion {n:>2}: {}  {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((n, pass, detail));
    }
}

fn bernstein_checks() -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut unity, mut hull) = (0.0f64, 0.0f64);
    for _ in 0..2000 {
        let n = rng.random_range(0..=10);
        let tau: f64 = rng.random_range(0.0..=1.0);
        let a: f64 = (0..=n).map(|k| bernstein(k, n, tau).unwrap()).sum();
        let b: f64 = bernstein_basis(n, tau).iter().sum();
        unity = unity.max((a - 1.0).abs()).max((b - 1.0).abs());

        let pts: Vec<Vec3> = (0..=n.max(1)).map(|_| Vec3::from_fn(|_, _| rng.random_range(-5.0..5.0))).collect();
        let seg = BezierSegment::new(pts.clone(), rng.random_range(0.1..4.0)).unwrap();
        let p = seg.eval_normalized(tau);
        for ax in 0..3 {
            let lo = pts.iter().map(|c| c[ax]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|c| c[ax]).fold(f64::NEG_INFINITY, f64::max);
            hull = hull.max(lo - p[ax]).max(p[ax] - hi);
        }
    }
    (unity, hull)
}

/// Best KKT point over every active set.
fn kkt_oracle(qp: &QuadraticProgram) -> DVector<f64> {
    let (h, g, a, b) = (&qp.hessian, &qp.linear, &qp.ineq_matrix, &qp.ineq_rhs);
    let (n, m) = (g.len(), b.len());
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = rows.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        rhs.rows_mut(0, n).copy_from(&(-g));
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = a[(i, j)];
                kkt[(j, n + r)] = a[(i, j)];
            }
            rhs[n + r] = b[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, n).into_owned();
        if (a * &x - b).iter().all(|v| *v <= 1e-9) && sol.rows(n, k).iter().all(|l| *l >= -1e-9) {
            let f = 0.5 * x.dot(&(h * &x)) + g.dot(&x);
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, x));
            }
        }
    }
    best.expect("origin is feasible").1
}

fn qp_check() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(0..=4);
        let r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = r.transpose() * &r + DMatrix::identity(n, n) * 0.1;
        let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.random_range(0.1..1.0));
        let qp = QuadraticProgram::new(h, g).with_inequalities(a, b);
        let x = solve_qp(&qp, &DVector::zeros(n), 1e-9).unwrap().x;
        worst = worst.max((x - kkt_oracle(&qp)).amax());
    }
    worst
}

/// Power-basis septic minimising the Simpson-discretised snap integral under six boundary conditions.
fn variational_oracle(t_end: f64, p0: f64, v0: f64, a0: f64, p1: f64) -> DVector<f64> {
    let snap = |k: usize, t: f64| if k < 4 { 0.0 } else { (k * (k - 1) * (k - 2) * (k - 3)) as f64 * t.powi(k as i32 - 4) };
    let panels = 2000;
    let h = t_end / panels as f64;
    let mut q = DMatrix::zeros(8, 8);
    for p in 0..panels {
        for (w, t) in [(1.0, p as f64 * h), (4.0, (p as f64 + 0.5) * h), (1.0, (p + 1) as f64 * h)] {
            for i in 0..8 {
                for j in 0..8 {
                    q[(i, j)] += w * h / 6.0 * snap(i, t) * snap(j, t);
                }
            }
        }
    }
    let row = |r: usize, t: f64| -> Vec<f64> {
        (0..8).map(|k| if k < r { 0.0 } else { (0..r).map(|i| (k - i) as f64).product::<f64>() * t.powi((k - r) as i32) }).collect()
    };
    let cons = [(row(0, 0.0), p0), (row(1, 0.0), v0), (row(2, 0.0), a0), (row(0, t_end), p1), (row(1, t_end), 0.0), (row(2, t_end), 0.0)];
    let mut kkt = DMatrix::zeros(14, 14);
    let mut rhs = DVector::zeros(14);
    kkt.view_mut((0, 0), (8, 8)).copy_from(&(q * 2.0));
    for (r, (coeffs, v)) in cons.iter().enumerate() {
        for k in 0..8 {
            kkt[(8 + r, k)] = coeffs[k];
            kkt[(k, 8 + r)] = coeffs[k];
        }
        rhs[8 + r] = *v;
    }
    kkt.lu().solve(&rhs).unwrap().rows(0, 8).into_owned()
}

fn safe_point(grid: &VoxelGrid, rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let idx = grid.unlinear(rng.random_range(0..grid.len()));
        let lo = [idx[0] as i64 - 2, idx[1] as i64 - 2, idx[2] as i64 - 2];
        let hi = [idx[0] as i64 + 2, idx[1] as i64 + 2, idx[2] as i64 + 2];
        if grid.box_all(lo, hi, CellState::Free) {
            return grid.center(idx);
        }
    }
}

/// (max boundary/continuity residual, max v overshoot, max a overshoot, max oracle deviation, planned count)
fn min_snap_checks() -> (f64, f64, f64, f64, usize) {
    let world = generate_world(TextureLevel::Medium, 4).unwrap();
    let grid = world.truth();
    let (v_max, a_max) = (1.5, 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut residual, mut v_over, mut a_over, mut planned) = (0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
    for _ in 0..20 {
        let start = BoundaryState::at_rest(safe_point(grid, &mut rng));
        let goal = safe_point(grid, &mut rng);
        let Ok((traj, _)) = plan_trajectory(grid, &start, &goal, v_max, a_max, &CorridorParams::default(), 0.0) else { continue };
        planned += 1;
        let (t0, t1) = (traj.start_time(), traj.end_time());
        for r in [
            (traj.position(t0) - start.position).norm(),
            traj.velocity(t0).norm(),
            traj.acceleration(t0).norm(),
            (traj.position(t1) - goal).norm(),
            traj.velocity(t1).norm(),
            traj.acceleration(t1).norm(),
        ] {
            residual = residual.max(r);
        }
        let segs = traj.curve().segments();
        let derivs: Vec<Vec<BezierSegment<Vec3>>> = segs
            .iter()
            .map(|s| {
                let mut d = vec![s.clone()];
                for r in 0..3 {
                    let next = d[r].derivative().unwrap();
                    d.push(next);
                }
                d
            })
            .collect();
        for j in 0..segs.len() - 1 {
            for r in 0..4 {
                let gap = (derivs[j][r].last() - derivs[j + 1][r].first()).norm() / (1.0 + derivs[j][r].last().norm());
                residual = residual.max(gap);
            }
        }
        for k in 0..=2000 {
            let t = t0 + (t1 - t0) * k as f64 / 2000.0;
            v_over = v_over.max(traj.velocity(t).norm() - v_max);
            a_over = a_over.max(traj.acceleration(t).norm() - a_max);
        }
    }

    let mut oracle = 0.0f64;
    for _ in 0..10 {
        let t_end = rng.random_range(1.0..3.0);
        let start = BoundaryState {
            position: Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            velocity: Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            acceleration: Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
        };
        let goal = Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let corridor = Corridor { boxes: vec![Aabb::new(Vec3::repeat(-100.0), Vec3::repeat(100.0))] };
        let traj = optimize_position(&corridor, &[t_end], &start, &goal, 1e3, 1e3, 0.0).unwrap();
        let coeffs: Vec<DVector<f64>> =
            (0..3).map(|ax| variational_oracle(t_end, start.position[ax], start.velocity[ax], start.acceleration[ax], goal[ax])).collect();
        for k in 0..=50 {
            let t = t_end * k as f64 / 50.0;
            let p = traj.position(t);
            for ax in 0..3 {
                let want: f64 = (0..8).map(|i| coeffs[ax][i] * t.powi(i as i32)).sum();
                oracle = oracle.max((p[ax] - want).abs());
            }
        }
    }
    (residual, v_over, a_over, oracle, planned)
}

fn bearing_rate_check() -> f64 {
    let bearing = |p: &Vec3, f: &Vec3| (f.y - p.y).atan2(f.x - p.x);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut checked) = (0.0f64, 0);
    while checked < 1000 {
        let p = Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0));
        let v = Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let f = Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0));
        if (f - p).norm() < 0.1 || (f - p).xy().norm() < 0.1 {
            continue;
        }
        let h = 1e-6;
        let (b0, b1) = (bearing(&(p - v * h), &f), bearing(&(p + v * h), &f));
        let fd = (unwrap_near(b1, b0) - b0) / (2.0 * h);
        worst = worst.max((desired_yaw_rate(&p, &v, &f).unwrap() - fd).abs());
        checked += 1;
    }
    worst
}

fn through(points: &[Vec3], duration: f64, start_time: f64) -> PositionTrajectory {
    let boxes: Vec<Aabb> = points.windows(2).map(|w| Aabb::new(w[0].inf(&w[1]).add_scalar(-5.0), w[0].sup(&w[1]).add_scalar(5.0))).collect();
    let times = vec![duration; boxes.len()];
    optimize_position(&Corridor { boxes }, &times, &BoundaryState::at_rest(points[0]), points.last().unwrap(), 1e3, 1e3, start_time)
        .unwrap()
}

/// Worst |g − fd| / max(|g|, 1e-3) over every component of 50 instances.
fn gradient_check() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let m = rng.random_range(1..=3);
        let pts: Vec<Vec3> = (0..=m).map(|_| Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 1.0)).collect();
        let pos = through(&pts, rng.random_range(1.0..2.5), rng.random_range(0.0..5.0));
        let mut id = 0;
        let sets: Vec<Vec<Feature>> = (0..m)
            .map(|_| {
                (0..rng.random_range(1..4))
                    .map(|_| {
                        id += 1;
                        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                        let r = rng.random_range(5.0..8.0);
                        Feature { id, position: Vec3::new(r * a.cos(), r * a.sin(), rng.random_range(0.0..2.0)), score: rng.random_range(0.1..1.0) }
                    })
                    .collect()
            })
            .collect();
        let n = m * (YAW_ORDER + 1);
        let x = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let g = perceptual_gradient(&x, &pos, &sets).unwrap();
        let h = 1e-4;
        for i in 0..n {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (perceptual_cost(&a, &pos, &sets).unwrap() - perceptual_cost(&b, &pos, &sets).unwrap()) / (2.0 * h);
            worst = worst.max((g[i] - fd).abs() / g[i].abs().max(1e-3));
        }
    }
    worst
}

struct Scene {
    world: GroundTruthWorld,
    pos: PositionTrajectory,
    psi_c: f64,
    psi_g: f64,
}

fn yaw_scenes(count: usize) -> Vec<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut out = Vec::new();
    let mut seed = 0;
    while out.len() < count {
        seed += 1;
        let world = generate_world(TextureLevel::High, seed).unwrap();
        for _ in 0..4 {
            let goal = world.start() + Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-0.3..0.3));
            if world.truth().index_of(&goal).is_none() {
                continue;
            }
            let start = BoundaryState::at_rest(world.start());
            let Ok((pos, _)) = plan_trajectory(world.truth(), &start, &goal, 1.5, 2.0, &CorridorParams::default(), 0.0) else { continue };
            out.push(Scene { world: world.clone(), pos, psi_c: rng.random_range(-3.1..3.1), psi_g: rng.random_range(-3.1..3.1) });
            if out.len() == count {
                break;
            }
        }
    }
    out
}

/// (max evaluations per joint, joints checked, objective wins, instances, max |ψ̇|, max |ψ̈|)
fn yaw_checks() -> (usize, usize, usize, usize, f64, f64) {
    let cam = CameraModel::default();
    let params = PlannerParams::default();
    let empty = FeatureMap::new();
    let (mut max_evals, mut joints, mut wins, mut rate, mut accel) = (0, 0, 0, 0.0f64, 0.0f64);
    let scenes = yaw_scenes(50);
    for s in &scenes {
        for fm in [s.world.features(), &empty] {
            let inp = YawPlanInput { position: &s.pos, psi_c: s.psi_c, psi_g: s.psi_g, features: fm, grid: s.world.truth(), camera: &cam, params: &params };
            let cov = covisibility_sampling(&inp);
            max_evals = max_evals.max(cov.evaluations_per_joint.iter().copied().max().unwrap_or(0));
            joints += cov.evaluations_per_joint.len();
            if fm.is_empty() {
                continue;
            }
            let opt = optimize_yaw(&inp, &cov).unwrap();
            let lin = linear_yaw(&inp, &cov).unwrap();
            if opt.objective <= lin.objective + 1e-9 * (1.0 + lin.objective.abs()) {
                wins += 1;
            }
            for k in 0..=2000 {
                let t = opt.start_time() + (opt.end_time() - opt.start_time()) * k as f64 / 2000.0;
                rate = rate.max(opt.rate(t).abs());
                accel = accel.max(opt.acceleration(t).abs());
            }
        }
    }
    (max_evals, joints, wins, scenes.len(), rate, accel)
}

fn determinism_check(dir: &Path) -> Result<bool, String> {
    let bin = env!("CARGO_BIN_EXE_perex");
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.join(name);
        let run = Command::new(bin).args(["run", "--seeds", "1..5", "--out"]).arg(&out).output().map_err(|e| e.to_string())?;
        if !run.status.success() {
            return Err(format!("run exited with {}: {}", run.status, String::from_utf8_lossy(&run.stderr)));
        }
        outputs.push(fs::read(out.join("summary.json")).map_err(|e| e.to_string())?);
    }
    Ok(outputs[0] == outputs[1])
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn main() -> ExitCode {
    let mut report = Report { lines: Vec::new() };
    let tmp = tempfile::tempdir().expect("temp dir");

    let (unity, hull) = bernstein_checks();
    report.record(1, unity <= 1e-12 && hull <= 1e-12, format!("partition of unity err {unity:.1e}, hull excess {hull:.1e} (tol 1e-12)"));

    let qp = qp_check();
    report.record(2, qp <= 1e-6, format!("max |x - x_kkt| {qp:.1e} over 100 instances (tol 1e-6)"));

    let (res, v_over, a_over, oracle, planned) = min_snap_checks();
    report.record(
        3,
        res <= 1e-8 && v_over <= 1e-6 && a_over <= 1e-6 && oracle <= 1e-4 && planned > 0,
        format!("residual {res:.1e}, v overshoot {v_over:.1e}, a overshoot {a_over:.1e}, variational dev {oracle:.1e} ({planned} planned)"),
    );

    let rate = bearing_rate_check();
    report.record(4, rate <= 1e-6, format!("max |rate - fd| {rate:.1e} over 1000 samples (tol 1e-6)"));

    let grad = gradient_check();
    report.record(5, grad <= 1e-5, format!("max relative gradient error {grad:.1e} over 50 instances (tol 1e-5)"));

    let (evals, joints, wins, n, max_rate, max_accel) = yaw_checks();
    report.record(6, evals <= MAX_SAMPLING_ATTEMPTS && joints > 0, format!("max {evals} evaluations per joint over {joints} joints (limit 11)"));
    report.record(
        7,
        wins == n && max_rate <= 1.5 + 1e-6 && max_accel <= 3.0 + 1e-6,
        format!("optimised <= linear on {wins}/{n}, max |yaw rate| {max_rate:.3}, max |yaw accel| {max_accel:.3}"),
    );

    match determinism_check(tmp.path()) {
        Ok(same) => report.record(8, same, format!("summary.json identical across two `run --seeds 1..5`: {same}")),
        Err(e) => report.record(8, false, e),
    }

    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let seeds: Vec<u64> = (1..=10).collect();
    let mut summaries: Vec<Summary> = Vec::new();
    let mut full_secs = 0.0;
    let started = Instant::now();
    for texture in TextureLevel::ALL {
        let modes = if texture == TextureLevel::Low { PlannerMode::ALL.to_vec() } else { vec![PlannerMode::Full, PlannerMode::Greedy] };
        let spec = RunSpec { config: RunConfig::default(), modes, texture, seeds: seeds.clone(), out: tmp.path().join(texture.as_str()), jobs };
        match run_batch(&spec) {
            Ok(outcome) => {
                let secs: f64 = outcome
                    .records
                    .iter()
                    .filter(|r| r.mode == PlannerMode::Full)
                    .filter_map(|r| r.summary.as_ref())
                    .map(|s| s.wall_clock.total_seconds)
                    .sum();
                println!("  {texture}: {} episodes, {} failed, full-mode episode time {secs:.1} s", outcome.records.len(), outcome.failed());
                full_secs += secs;
                summaries.push(outcome.summary);
            }
            Err(e) => {
                println!("  {texture}: batch failed: {e}");
                return ExitCode::FAILURE;
            }
        }
    }
    println!("  experiment batches took {:.1} s", started.elapsed().as_secs_f64());

    let by = |t: TextureLevel| summaries.iter().find(|s| s.texture == t).unwrap();
    let (low, med, high) = (by(TextureLevel::Low), by(TextureLevel::Medium), by(TextureLevel::High));
    let mode = |s: &Summary, m: PlannerMode| -> ModeSummary { s.mode(m).expect("mode ran").clone() };
    let s1 = |s: &Summary, m: PlannerMode| mode(s, m).success[0].mean;
    let (h, m, l) = (s1(high, PlannerMode::Full), s1(med, PlannerMode::Full), s1(low, PlannerMode::Full));
    report.record(
        9,
        h >= m && m >= l && full_secs <= 300.0,
        format!("full success@1m high {h:.2} >= medium {m:.2} >= low {l:.2}; full batch {full_secs:.1} s (limit 300 s)"),
    );

    let mut cells = Vec::new();
    let mut all_ge = true;
    for s in [high, med, low] {
        for (k, t) in s.thresholds.iter().enumerate() {
            let (f, g) = (mode(s, PlannerMode::Full).success[k].mean, mode(s, PlannerMode::Greedy).success[k].mean);
            all_ge &= f >= g;
            cells.push(format!("{}/{t}:{f:.1}v{g:.1}", s.texture));
        }
    }
    let strict = s1(low, PlannerMode::Full) > s1(low, PlannerMode::Greedy);
    report.record(10, all_ge && strict, format!("full vs greedy success [{}]; strict at low/1.0: {strict}", cells.join(" ")));

    let mut ok11 = true;
    let mut parts = Vec::new();
    for (k, t) in low.thresholds.iter().enumerate() {
        let [f, y, p] = [PlannerMode::Full, PlannerMode::NoYawOpt, PlannerMode::NoPaFrontier].map(|m| mode(low, m).success[k].mean);
        ok11 &= f >= y && y >= p;
        parts.push(format!("@{t}: {f:.1} >= {y:.1} >= {p:.1}"));
    }
    report.record(11, ok11, format!("low texture full >= no_yaw_opt >= no_pa_frontier {}", parts.join(", ")));

    let (fc, gc) = (mode(low, PlannerMode::Full).coverage[0].mean, mode(low, PlannerMode::Greedy).coverage[0].mean);
    let gain = fc / gc - 1.0;
    let paired = mean(
        mode(low, PlannerMode::Full).seeds.iter().zip(&mode(low, PlannerMode::Greedy).seeds).map(|(a, b)| a.coverage[0] / b.coverage[0] - 1.0),
    );
    report.record(12, gain >= 0.10, format!("low coverage@1m full {fc:.3} vs greedy {gc:.3}: gain {:+.1}% (need +10%), mean paired ratio {:+.1}%", 100.0 * gain, 100.0 * paired));

    let (fe, ge) = (mode(low, PlannerMode::Full).early_tracked_count.mean, mode(low, PlannerMode::Greedy).early_tracked_count.mean);
    report.record(13, fe >= ge, format!("low early tracked count full {fe:.2} vs greedy {ge:.2}"));

    let (fm, gm) = (mode(low, PlannerMode::Full).heatmap_mass.mean, mode(low, PlannerMode::Greedy).heatmap_mass.mean);
    let wins = mode(low, PlannerMode::Full).seeds.iter().zip(&mode(low, PlannerMode::Greedy).seeds).filter(|(a, b)| a.heatmap_mass >= b.heatmap_mass).count();
    report.record(14, fm >= gm, format!("low heatmap mass full {fm:.2} vs greedy {gm:.2} ({wins}/10 paired seeds full >= greedy)"));

    let failed: Vec<usize> = report.lines.iter().filter(|(_, pass, _)| !pass).map(|(n, _, _)| *n).collect();
    println!("acceptance: {} of {} criteria pass", report.lines.len() - failed.len(), report.lines.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failing criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
