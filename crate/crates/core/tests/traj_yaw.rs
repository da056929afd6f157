use nalgebra::{DVector, SymmetricEigen};
use perex::bezier::{BezierSegment, PiecewiseBezier};
use perex::frontier::{PlannerMode, PlannerParams};
use perex::sim::{generate_world, TextureLevel};
use perex::traj_position::{optimize_position, plan_trajectory, BoundaryState, Corridor, CorridorParams, PositionTrajectory};
use perex::traj_yaw::{
    covisibility_sampling, desired_yaw_rate, linear_yaw, optimize_yaw, perceptual_cost, perceptual_gradient, plan_yaw,
    smoothness_cost, CovisibilityResult, YawObjective, YawPlanInput, MAX_SAMPLING_ATTEMPTS, YAW_ORDER,
};
use perex::world::{intersect_sorted, FeatureId, visible_features, Aabb, CameraModel, Feature, FeatureMap, GroundTruthWorld, Viewpoint};
use perex::{unwrap_near, Error, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bearing(p: &Vec3, f: &Vec3) -> f64 {
    (f.y - p.y).atan2(f.x - p.x)
}

#[test]
fn bearing_rate_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    while checked < 1000 {
        let p = Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0));
        let v = Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let f = Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0));
        let d = f - p;
        if d.xy().norm() < 0.1 {
            continue;
        }
        let h = 1e-6;
        let (b0, b1) = (bearing(&(p - v * h), &f), bearing(&(p + v * h), &f));
        let fd = (unwrap_near(b1, b0) - b0) / (2.0 * h);
        assert!((desired_yaw_rate(&p, &v, &f).unwrap() - fd).abs() <= 1e-6, "{p} {v} {f}");
        checked += 1;
    }
    assert!(matches!(
        desired_yaw_rate(&Vec3::new(1.0, 1.0, 0.0), &Vec3::x(), &Vec3::new(1.0, 1.0, 5.0)),
        Err(Error::DegenerateFeature { .. })
    ));
}

/// Rest-to-rest trajectory through `points` with generous bounds.
fn through(points: &[Vec3], duration: f64, start_time: f64) -> PositionTrajectory {
    let boxes: Vec<Aabb> = points.windows(2).map(|w| Aabb::new(w[0].inf(&w[1]).add_scalar(-5.0), w[0].sup(&w[1]).add_scalar(5.0))).collect();
    let times = vec![duration; boxes.len()];
    optimize_position(&Corridor { boxes }, &times, &BoundaryState::at_rest(points[0]), points.last().unwrap(), 1e3, 1e3, start_time)
        .unwrap()
}

fn random_instance(rng: &mut ChaCha8Rng) -> (PositionTrajectory, Vec<Vec<Feature>>) {
    let m = rng.random_range(1..=3);
    let pts: Vec<Vec3> = (0..=m).map(|_| Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 1.0)).collect();
    let pos = through(&pts, rng.random_range(1.0..2.5), rng.random_range(0.0..5.0));
    let mut id = 0;
    let sets = (0..m)
        .map(|_| {
            (0..rng.random_range(0..4))
                .map(|_| {
                    id += 1;
                    // Far enough from the path to keep bearings smooth.
                    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let r = rng.random_range(5.0..8.0);
                    Feature { id, position: Vec3::new(r * a.cos(), r * a.sin(), rng.random_range(0.0..2.0)), score: rng.random_range(0.1..1.0) }
                })
                .collect()
        })
        .collect();
    (pos, sets)
}

#[test]
fn perceptual_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (pos, sets) = random_instance(&mut rng);
        let n = sets.len() * (YAW_ORDER + 1);
        let x = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let g = perceptual_gradient(&x, &pos, &sets).unwrap();
        let h = 1e-4;
        for i in 0..n {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (perceptual_cost(&a, &pos, &sets).unwrap() - perceptual_cost(&b, &pos, &sets).unwrap()) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-5 * g[i].abs().max(1e-3), "component {i}: {} vs {fd}", g[i]);
        }
        let obj = YawObjective::build(&pos, &sets, 0.0).unwrap();
        assert!((obj.gradient(&x) - &g).amax() <= 1e-9 * (1.0 + g.amax()));
    }
}

fn yaw_curve(x: &DVector<f64>, pos: &PositionTrajectory) -> PiecewiseBezier<f64> {
    let segs = pos
        .durations()
        .iter()
        .enumerate()
        .map(|(j, t)| BezierSegment::new(x.rows(j * (YAW_ORDER + 1), YAW_ORDER + 1).iter().copied().collect(), *t).unwrap())
        .collect();
    PiecewiseBezier::new(segs, pos.start_time()).unwrap()
}

#[test]
fn costs_match_fine_trapezoid_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (pos, sets) = random_instance(&mut rng);
        let mut x = DVector::from_fn(sets.len() * (YAW_ORDER + 1), |_, _| rng.random_range(-2.0..2.0));
        for j in 1..sets.len() {
            x[j * (YAW_ORDER + 1)] = x[j * (YAW_ORDER + 1) - 1];
        }
        let curve = yaw_curve(&x, &pos);
        let rates = curve.derivative().unwrap();
        let (mut percept, mut smooth) = (0.0, 0.0);
        let mut t0 = pos.start_time();
        for (j, seg) in rates.iter().enumerate() {
            let steps = 10_000;
            let dt = seg.duration() / steps as f64;
            for k in 0..=steps {
                let local = k as f64 * dt;
                let w = if k == 0 || k == steps { 0.5 * dt } else { dt };
                let rate = seg.eval(local).unwrap();
                let (p, v) = (pos.position(t0 + local), pos.velocity(t0 + local));
                percept += w * sets[j].iter().map(|f| f.score * (desired_yaw_rate(&p, &v, &f.position).unwrap() - rate).powi(2)).sum::<f64>();
                smooth += w * rate * rate;
            }
            t0 += seg.duration();
        }
        let got = perceptual_cost(&x, &pos, &sets).unwrap();
        assert!((got - percept).abs() <= 1e-6 * percept.max(1e-6), "{got} vs {percept}");
        assert!((smoothness_cost(&curve) - smooth).abs() <= 1e-6 * smooth);
        let obj = YawObjective::build(&pos, &sets, 0.3).unwrap();
        assert!((obj.value(&x) - (got + 0.3 * smoothness_cost(&curve))).abs() <= 1e-9 * (1.0 + got));
    }
}

#[test]
fn objective_hessian_is_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let (pos, sets) = random_instance(&mut rng);
        let q = YawObjective::build(&pos, &sets, rng.random_range(0.0..1.0)).unwrap().quadratic;
        assert!((&q - q.transpose()).amax() <= 1e-12 * (1.0 + q.amax()));
        let eig = SymmetricEigen::new(q.clone());
        assert!(eig.eigenvalues.iter().all(|l| *l >= -1e-10 * (1.0 + q.amax())));
    }
}

struct Scene {
    world: GroundTruthWorld,
    pos: PositionTrajectory,
    psi_c: f64,
    psi_g: f64,
}

fn scenes(count: usize, texture: TextureLevel) -> Vec<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(count as u64);
    let mut out = Vec::new();
    let mut seed = 0;
    while out.len() < count {
        seed += 1;
        let world = generate_world(texture, seed).unwrap();
        let grid = world.truth();
        for _ in 0..4 {
            let goal = world.start() + Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-0.3..0.3));
            if grid.index_of(&goal).is_none() {
                continue;
            }
            let Ok((pos, _)) = plan_trajectory(grid, &BoundaryState::at_rest(world.start()), &goal, 1.5, 2.0, &CorridorParams::default(), 0.0) else {
                continue;
            };
            let psi_c = rng.random_range(-3.1..3.1);
            let psi_g = rng.random_range(-3.1..3.1);
            out.push(Scene { world: world.clone(), pos, psi_c, psi_g });
            if out.len() == count {
                break;
            }
        }
    }
    out
}

fn input<'a>(s: &'a Scene, fm: &'a FeatureMap, cam: &'a CameraModel, params: &'a PlannerParams) -> YawPlanInput<'a> {
    YawPlanInput { position: &s.pos, psi_c: s.psi_c, psi_g: s.psi_g, features: fm, grid: s.world.truth(), camera: cam, params }
}

/// Alg. 1 with every candidate yaw of a joint evaluated up front.
fn sampling_oracle(inp: &YawPlanInput) -> (Vec<f64>, Vec<Vec<FeatureId>>) {
    let segs = inp.position.curve().segments();
    let m = segs.len();
    let psi_g = unwrap_near(inp.psi_g, inp.psi_c);
    let p = inp.params;
    let vis = |q: Vec3, psi: f64| visible_features(inp.features, inp.grid, &Viewpoint::new(q, psi), inp.camera);
    let mut last = inp.psi_c;
    let (mut yaws, mut sets) = (Vec::new(), Vec::new());
    for j in 1..m {
        let step = if psi_g > last { p.delta_psi } else { -p.delta_psi };
        let seen_before = vis(segs[j - 1].first(), last);
        let grid: Vec<(f64, Vec<FeatureId>)> = (0..MAX_SAMPLING_ATTEMPTS)
            .map(|k| {
                let psi = last + step * k as f64;
                (psi, intersect_sorted(&vis(segs[j].first(), psi), &seen_before))
            })
            .collect();
        match grid.into_iter().find(|(_, ids)| inp.features.score_sum(ids) > p.tau_cov) {
            Some((psi, ids)) => {
                yaws.push(psi);
                sets.push(ids);
            }
            None => {
                let psi = last + (psi_g - last) * j as f64 / m as f64;
                yaws.push(psi);
                sets.push(Vec::new());
            }
        }
        last = *yaws.last().unwrap();
    }
    yaws.push(psi_g);
    sets.push(Vec::new());
    (yaws, sets)
}

#[test]
fn covisibility_sampling_matches_exhaustive_grid() {
    let cam = CameraModel::default();
    let params = PlannerParams::default();
    let empty = FeatureMap::new();
    let mut joints = 0;
    for s in scenes(20, TextureLevel::Medium) {
        for fm in [s.world.features(), &empty] {
            let inp = input(&s, fm, &cam, &params);
            let got = covisibility_sampling(&inp);
            let (yaws, sets) = sampling_oracle(&inp);
            assert_eq!(got.waypoint_yaws.len(), s.pos.curve().segment_count());
            for (a, b) in got.waypoint_yaws.iter().zip(&yaws) {
                assert!((a - b).abs() < 1e-12);
            }
            let ids: Vec<Vec<FeatureId>> = got.covisible_sets.iter().map(|set| set.iter().map(|f| f.id).collect()).collect();
            assert_eq!(ids, sets);
            assert!(got.evaluations_per_joint.iter().all(|e| *e >= 1 && *e <= MAX_SAMPLING_ATTEMPTS));
            if fm.is_empty() {
                assert!(got.evaluations_per_joint.iter().all(|e| *e == MAX_SAMPLING_ATTEMPTS));
            }
            joints += got.evaluations_per_joint.len();
        }
    }
    assert!(joints > 0);
}

fn check_limits(y: &perex::traj_yaw::YawTrajectory, params: &PlannerParams) {
    let n = 2000;
    for k in 0..=n {
        let t = y.start_time() + (y.end_time() - y.start_time()) * k as f64 / n as f64;
        assert!(y.rate(t).abs() <= params.psi_dot_max + 1e-6, "rate {}", y.rate(t));
        assert!(y.acceleration(t).abs() <= params.psi_ddot_max + 1e-6, "accel {}", y.acceleration(t));
    }
}

#[test]
fn optimised_yaw_never_loses_to_the_interpolant() {
    let cam = CameraModel::default();
    let params = PlannerParams::default();
    for s in scenes(50, TextureLevel::High) {
        let inp = input(&s, s.world.features(), &cam, &params);
        let cov = covisibility_sampling(&inp);
        let opt = optimize_yaw(&inp, &cov).unwrap();
        let lin = linear_yaw(&inp, &cov).unwrap();
        assert!(opt.objective <= lin.objective + 1e-9 * (1.0 + lin.objective), "{} vs {}", opt.objective, lin.objective);
        check_limits(&opt, &params);
        assert!((opt.yaw_lifted(opt.start_time()) - s.psi_c).abs() < 1e-9);
        assert!((opt.yaw(opt.end_time()) - perex::wrap_angle(s.psi_g)).abs() < 1e-9);
        assert_eq!(opt.curve().segment_count(), s.pos.curve().segment_count());
    }
}

#[test]
fn modes_without_yaw_optimisation_interpolate() {
    let cam = CameraModel::default();
    let params = PlannerParams { mode: PlannerMode::NoYawOpt, ..PlannerParams::default() };
    for s in scenes(5, TextureLevel::Medium) {
        let inp = input(&s, s.world.features(), &cam, &params);
        let cov = covisibility_sampling(&inp);
        assert_eq!(optimize_yaw(&inp, &cov).unwrap(), linear_yaw(&inp, &cov).unwrap());
        assert_eq!(plan_yaw(&inp).unwrap(), linear_yaw(&inp, &cov).unwrap());
    }
}

#[test]
fn abeam_pass_tracks_the_bearing_rate() {
    let f = Feature { id: 1, position: Vec3::new(0.0, 1.5, 1.0), score: 1.0 };
    let pts: Vec<Vec3> = (0..=4).map(|k| Vec3::new(-2.0 + k as f64, 0.0, 1.0)).collect();
    let pos = through(&pts, 1.2, 0.0);
    let ends: Vec<f64> = pos.curve().segments().iter().map(|s| bearing(&s.last(), &f.position)).collect();
    let cov = CovisibilityResult {
        waypoint_yaws: ends,
        covisible_sets: vec![vec![f]; 4],
        evaluations_per_joint: vec![1; 3],
        visibility_calls: 0,
    };
    let fm = FeatureMap::from_features([f]).unwrap();
    let grid = perex::world::VoxelGrid::new(Vec3::repeat(-3.0), 0.1, [60, 60, 60], perex::world::CellState::Free).unwrap();
    let cam = CameraModel::default();
    let params = PlannerParams::default();
    let inp = YawPlanInput {
        position: &pos,
        psi_c: bearing(&pts[0], &f.position),
        psi_g: cov.waypoint_yaws[3],
        features: &fm,
        grid: &grid,
        camera: &cam,
        params: &params,
    };
    let y = optimize_yaw(&inp, &cov).unwrap();
    assert_eq!(y.dilation, 1.0);
    let (mut err, mut reference) = (0.0, 0.0);
    for k in 0..=1000 {
        let t = pos.end_time() * k as f64 / 1000.0;
        let want = desired_yaw_rate(&pos.position(t), &pos.velocity(t), &f.position).unwrap();
        err += (y.rate(t) - want).powi(2);
        reference += want * want;
    }
    assert!((err / reference).sqrt() <= 0.05, "relative rms {}", (err / reference).sqrt());
}

#[test]
fn fast_turns_dilate_durations() {
    let pts = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.5, 0.0, 1.0)];
    let pos = through(&pts, 0.6, 2.0);
    let grid = perex::world::VoxelGrid::new(Vec3::repeat(-3.0), 0.1, [60, 60, 60], perex::world::CellState::Free).unwrap();
    let fm = FeatureMap::new();
    let cam = CameraModel::default();
    let params = PlannerParams::default();
    let inp = YawPlanInput { position: &pos, psi_c: 0.0, psi_g: 3.0, features: &fm, grid: &grid, camera: &cam, params: &params };
    let y = plan_yaw(&inp).unwrap();
    assert!(y.dilation >= 3.0 / (params.psi_dot_max * 0.6));
    assert!((y.end_time() - 2.0 - 0.6 * y.dilation).abs() < 1e-9);
    check_limits(&y, &params);
    assert!((y.yaw(y.end_time()) - 3.0).abs() < 1e-9);
}
