//! Acceptance checks. Each criterion prints one `PASS` or `FAIL` line with
//! the measured quantities; the process fails if any criterion fails.

use nalgebra::{Matrix4, Rotation3, Vector3, Vector5, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use shertwin::control::{
    afc_axis_velocity, desired_force_trajectory, hybrid_command, lateral_switching_policy, switching_policy, AfcAxisState,
    Axis, MotionScaling,
};
use shertwin::joints::{solve_box_qp, solve_joint_velocities, track_joint_velocity, JointLimits, SolverConfig, VelocityPlant};
use shertwin::kinematics::{body_jacobian, end_effector_velocity, forward_kinematics, BodyVelocity, JointAxis, RigidTransform, RobotModel};
use shertwin::metrics::{trial_metrics, welch_ttest};
use shertwin::script::{constant_trace, engaged};
use shertwin::sim::{run_trial, Completion, Hand, Mode, RobotInput, TickRecord, TraceSource, TrialLog, TrialMeta};
use shertwin::Scenario;
use shertwin_cli::{cmd_run, Overrides, RunArgs};
use shertwin_oracles::{afc_spring_reference, damped_ls_objective, dense_expm, fd_body_velocity, hybrid_blocks, projected_gradient_qp, twist_hat};

const THRESHOLD_MN: f64 = 100.0;
const SAFE_LIMIT_MN: f64 = 120.0;
const SAFETY_MARGIN_MN: f64 = 126.0;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

// ---------------------------------------------------------------- kinematics

/// Forward kinematics built only from raw axis data and a dense exponential.
fn dense_fk(model: &RobotModel, theta: &Vector5<f64>) -> Matrix4<f64> {
    let mut g = Matrix4::<f64>::identity();
    for (i, axis) in model.axes().iter().enumerate() {
        let (lin, ang) = match axis {
            JointAxis::Prismatic { v } => ([v.x, v.y, v.z], [0.0; 3]),
            JointAxis::Revolute { omega, q } => {
                let l = -omega.cross(q);
                ([l.x, l.y, l.z], [omega.x, omega.y, omega.z])
            }
        };
        g *= dense_expm(&(twist_hat(lin, ang) * theta[i]));
    }
    g * model.home().to_matrix()
}

fn random_theta(rng: &mut impl Rng, limits: &JointLimits) -> Vector5<f64> {
    Vector5::from_fn(|i, _| rng.random_range(limits.pos_min[i]..=limits.pos_max[i]))
}

fn kinematics() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tilted = RobotModel::new(
        *RobotModel::sher_default().axes(),
        RigidTransform::new(Rotation3::from_euler_angles(0.3, -0.2, 0.7).into_inner(), Vector3::new(0.01, -0.02, 0.2)),
        JointLimits::sher_default(),
    )
    .map_err(|e| e.to_string())?;
    let models = [RobotModel::sher_default(), tilted];
    let (mut fk_err, mut jac_err) = (0.0f64, 0.0f64);
    for k in 0..100 {
        let model = &models[k % 2];
        let theta = random_theta(&mut rng, model.limits());
        let g = forward_kinematics(model, &theta).to_matrix();
        fk_err = fk_err.max((g - dense_fk(model, &theta)).amax());
        // Each Jacobian column is the body velocity of a unit joint rate.
        let j = body_jacobian(model, &theta);
        for c in 0..5 {
            let mut qd = [0.0; 5];
            qd[c] = 1.0;
            let fd = fd_body_velocity(|q| forward_kinematics(model, &Vector5::from_column_slice(q)).to_matrix(), &theta.into(), &qd, 1e-6);
            jac_err = jac_err.max((j.column(c) - fd).amax());
        }
        let qd = Vector5::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let v = end_effector_velocity(model, &theta, &qd).to_vector();
        jac_err = jac_err.max((v - j * qd).amax());
    }
    let secs = start.elapsed().as_secs_f64();
    check(fk_err <= 1e-12, || format!("FK deviates by {fk_err:e}"))?;
    check(jac_err <= 1e-6, || format!("Jacobian deviates by {jac_err:e}"))?;
    check(secs < 5.0, || format!("took {secs:.2} s"))?;
    Ok(format!("100 configurations, FK err {fk_err:.1e}, Jacobian err {jac_err:.1e}, {secs:.2} s"))
}

// ---------------------------------------------------------------- trajectory

fn trajectory() -> Outcome {
    let mut worst = 0.0f64;
    for (t_i, sign, level) in [(0.0, 1.0, THRESHOLD_MN), (2.75, -1.0, THRESHOLD_MN), (10.0, 1.0, 60.0)] {
        let state = AfcAxisState { active: true, t_activation: t_i, sign, level, ..AfcAxisState::new(0.0) };
        let fd = |t: f64| desired_force_trajectory(&state, t).map(|x| x.0).map_err(|e| e.to_string());
        for (got, want) in [
            (fd(t_i)?, sign * level),
            (fd(t_i + std::f64::consts::LN_2)?, sign * 0.75 * level),
            (fd(t_i + 1e3)?, sign * level / 2.0),
        ] {
            worst = worst.max((got - want).abs());
        }
    }
    check(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("f_d(t_i), f_d(t_i + ln 2), f_d(inf) within {worst:.1e}"))
}

// ---------------------------------------------------------------- closed loop

fn quiet_scenario() -> Scenario {
    let mut s = Scenario::default();
    s.scene.noise.force_sigma_mn = 0.0;
    s.scene.noise.depth_sigma_mm = 0.0;
    s.materialize();
    s
}

fn run(s: &Scenario, trace: Vec<shertwin::InputSample>) -> Result<TrialLog, String> {
    let mut world = s.build_world().map_err(|e| e.to_string())?;
    run_trial(&mut world, &mut TraceSource::new(trace), s.max_duration).map_err(|e| e.to_string())
}

/// Activation at the first tick whose lateral force reaches the threshold,
/// and the norm bounded by the margin from then on. Returns the peak.
fn safety(records: &[TickRecord], hand: Hand) -> Result<(Option<usize>, f64), String> {
    let i = hand.index();
    let first_force = records.iter().position(|r| r.robots[i].reading.norm >= THRESHOLD_MN);
    let first_active = records.iter().position(|r| r.robots[i].delta.iter().any(|&d| d));
    check(first_force == first_active, || format!("{hand:?}: threshold first reached at tick {first_force:?}, AFC first active at {first_active:?}"))?;
    for axis in 0..2 {
        let component = records.iter().position(|r| r.robots[i].reading_component(axis).abs() >= THRESHOLD_MN);
        if let Some(k) = component {
            check(records[k].robots[i].delta[axis], || format!("{hand:?}: axis {axis} inactive at tick {k} with |F| >= threshold"))?;
        }
    }
    let peak = records.iter().skip(first_force.unwrap_or(records.len())).map(|r| r.robots[i].reading.norm).fold(0.0, f64::max);
    check(peak <= SAFETY_MARGIN_MN, || format!("{hand:?}: peak {peak:.2} mN after activation"))?;
    Ok((first_force, peak))
}

trait Component {
    fn reading_component(&self, axis: usize) -> f64;
}

impl Component for shertwin::sim::RobotRecord {
    fn reading_component(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.reading.fsx
        } else {
            self.reading.fsy
        }
    }
}

/// Single-axis loop with the axis held active: spring `F = 1000 k x` mN,
/// adaptive velocity through the joint velocity servo. Returns the largest
/// tracking error after 2 s and the largest deviation from the continuous
/// reference solution.
fn spring_episode(k: f64, s: &Scenario) -> Result<(f64, f64), String> {
    let gains = s.controller.afc;
    let dt = s.dt;
    let limits = &s.robots.right.limits;
    let mut plant = VelocityPlant::new(s.plant.time_constant, limits.vel_max * s.plant.rate_limit_factor);
    let mut x = THRESHOLD_MN / (1000.0 * k);
    let mut state = switching_policy(gains.threshold_mn, &AfcAxisState::new(gains.alpha0[0]), THRESHOLD_MN, 0.0);
    let reference = afc_spring_reference(k, THRESHOLD_MN, gains.k_f[0], gains.gamma[0], gains.alpha0[0], THRESHOLD_MN, 1e-4, 6.0);
    let (mut track, mut dev) = (0.0f64, 0.0f64);
    for n in 0..=6000 {
        let t = n as f64 * dt;
        let force = 1000.0 * k * x;
        let (v, next) = afc_axis_velocity(&gains, Axis::X, &state, force, t, dt).map_err(|e| e.to_string())?;
        if t >= 2.0 {
            track = track.max((force - next.f_d).abs());
        }
        dev = dev.max((force - reference[(t / 1e-4).round() as usize].force_mn).abs());
        state = next;
        plant = track_joint_velocity(&plant, &Vector5::new(v, 0.0, 0.0, 0.0, 0.0), dt);
        x += plant.velocity[0] * dt;
    }
    Ok((track, dev))
}

fn closed_loop() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    for k in [50.0, 100.0, 200.0, 500.0] {
        let mut s = quiet_scenario();
        s.scene.sclera_stiffness = k;
        let trace = constant_trace(6.0, s.dt, [engaged(Vector6::new(0.005, 0.0, 0.0, 0.0, 0.0, 0.0)), RobotInput::idle()]);
        let log = run(&s, trace)?;
        let (first, peak) = safety(&log.records, Hand::Right)?;
        let first = first.ok_or_else(|| format!("k={k}: force never reached the threshold"))?;
        let (track, dev) = spring_episode(k, &s)?;
        check(track <= 5.0, || format!("k={k}: tracking error {track:.2} mN after 2 s"))?;
        lines.push(format!("k={k}: on at {:.3} s, peak {peak:.1} mN, track {track:.2} mN, lag {dev:.2} mN", log.records[first].t));
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{}; {secs:.1} s", lines.join("; ")))
}

// ---------------------------------------------------------------- hysteresis

/// Ramp to 120 mN, then exponential decay toward zero.
fn crossing_force(n: usize) -> f64 {
    if n < 20_000 {
        120.0 * n as f64 / 20_000.0
    } else {
        120.0 * (-((n - 20_000) as f64) * 1e-4).exp()
    }
}

fn transitions(forces: &[f64], dt: f64) -> (Vec<usize>, Vec<usize>) {
    let mut state = AfcAxisState::new(0.0);
    let mut states = [AfcAxisState::new(0.0); 2];
    let (mut on, mut off) = (Vec::new(), Vec::new());
    for (n, &f) in forces.iter().enumerate() {
        let t = n as f64 * dt;
        let next = switching_policy(THRESHOLD_MN, &state, f, t);
        let lateral = lateral_switching_policy(THRESHOLD_MN, &states, [f, 0.0], t);
        assert_eq!(lateral[0].active, next.active, "single-axis force must follow the scalar rule");
        if next.active && !state.active {
            on.push(n);
        }
        if !next.active && state.active {
            off.push(n);
        }
        state = next;
        states = lateral;
    }
    (on, off)
}

fn hysteresis() -> Outcome {
    let dt = 1e-3;
    let clean: Vec<f64> = (0..100_000).map(crossing_force).collect();
    let (on, off) = transitions(&clean, dt);
    let first_on = clean.iter().position(|&f| f >= THRESHOLD_MN).unwrap();
    let first_off = first_on + clean[first_on..].iter().position(|&f| f <= 0.75 * THRESHOLD_MN).unwrap();
    check(on == [first_on] && off == [first_off], || format!("transitions on {on:?} off {off:?}, expected [{first_on}] [{first_off}]"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 2.0).unwrap();
    let noisy: Vec<f64> = clean.iter().map(|f| f + noise.sample(&mut rng)).collect();
    let (on_n, off_n) = transitions(&noisy, dt);
    let chatter = (on_n.len() + off_n.len()).saturating_sub(2);
    check(on_n.len() == 1 && off_n.len() == 1, || format!("noisy trace: {} activations, {} releases", on_n.len(), off_n.len()))?;
    Ok(format!(
        "on at sample {first_on}, off at {first_off} (first <= 75 mN); sigma 2 mN over 1e5 ticks: {chatter} chatter events"
    ))
}

// ---------------------------------------------------------------- hybrid blend

fn hybrid_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let kappa: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..2.0));
        let scaling = MotionScaling { kappa };
        let xo = Vector6::from_fn(|_, _| rng.random_range(-0.01..0.01));
        let adaptive = [rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01)];
        let master = BodyVelocity::from_vector(&xo);

        let off = hybrid_command([false, false], &scaling, &master, adaptive).to_vector();
        let (kin, _) = hybrid_blocks([0.0, 0.0], kappa);
        let scaled = Vector6::from_fn(|i, _| kappa[i] * xo[i]);
        check(off == scaled && off == kin * xo, || format!("delta (0,0): {off:?} vs {scaled:?}"))?;

        let on = hybrid_command([true, true], &scaling, &master, adaptive).to_vector();
        let mut perturbed = xo;
        perturbed[0] += rng.random_range(-1.0..1.0);
        perturbed[1] += rng.random_range(-1.0..1.0);
        let again = hybrid_command([true, true], &scaling, &BodyVelocity::from_vector(&perturbed), adaptive).to_vector();
        check(on[0].to_bits() == again[0].to_bits() && on[1].to_bits() == again[1].to_bits(), || {
            format!("delta (1,1): x/y moved from {:?} to {:?}", (on[0], on[1]), (again[0], again[1]))
        })?;
        check(on[0] == adaptive[0] && on[1] == adaptive[1], || "delta (1,1): x/y are not the adaptive velocities".into())?;
    }
    Ok("1000 random cases: delta (0,0) equals K times master exactly; delta (1,1) x/y bit-identical under master perturbation".into())
}

// ---------------------------------------------------------------- optimizer

fn optimizer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let model = RobotModel::sher_default();
    let limits = model.limits();
    let config = SolverConfig::default();
    let (mut worst_gap, mut active) = (0.0f64, 0usize);
    for k in 0..100 {
        let theta = random_theta(&mut rng, limits);
        let j = body_jacobian(&model, &theta);
        let v = Vector6::from_fn(|i, _| if i < 3 { rng.random_range(-0.05..0.05) } else { rng.random_range(-1.0..1.0) });
        let dt = 1e-3;
        let (lo, hi) = if k % 2 == 0 {
            limits.rate_bounds(&theta, dt)
        } else {
            // Tight random boxes so many bounds are active.
            let lo = Vector5::from_fn(|i, _| -rng.random_range(0.0..0.3) * limits.vel_max[i]);
            let hi = Vector5::from_fn(|i, _| rng.random_range(0.0..0.3) * limits.vel_max[i]);
            (lo, hi)
        };
        let q = if k % 2 == 0 {
            solve_joint_velocities(&j, &BodyVelocity::from_vector(&v), limits, &theta, dt, &config).map_err(|e| e.to_string())?
        } else {
            let w = nalgebra::Matrix6::from_diagonal(&config.weights);
            let h = j.transpose() * w * j + nalgebra::Matrix5::identity() * config.damping.powi(2);
            let g = -(j.transpose() * w * v);
            solve_box_qp(&h, &g, &lo, &hi)
        };
        for i in 0..5 {
            check(q[i] >= lo[i] && q[i] <= hi[i], || format!("instance {k}: joint {} rate {} outside [{}, {}]", i + 1, q[i], lo[i], hi[i]))?;
            if q[i] == lo[i] || q[i] == hi[i] {
                active += 1;
            }
        }
        let oracle = projected_gradient_qp(&j, &v, &config.weights, config.damping, &lo, &hi);
        let f = damped_ls_objective(&j, &v, &config.weights, config.damping, &q);
        let f_oracle = damped_ls_objective(&j, &v, &config.weights, config.damping, &oracle);
        let gap = f - f_oracle;
        worst_gap = worst_gap.max(gap.abs());
        check(gap.abs() <= 1e-6, || format!("instance {k}: objective {f} vs oracle {f_oracle}"))?;
    }

    // Full trials: saturating commands and a recorded vessel-following run.
    let s = quiet_scenario();
    let cmd = Vector6::new(0.0, 0.0, -0.05, 0.0, 0.3, 0.3);
    let mut trace = constant_trace(3.0, s.dt, [engaged(cmd), engaged(-cmd)]);
    for (i, sample) in trace.iter_mut().enumerate() {
        if i % 1000 > 500 {
            sample.robots[0].command = -cmd;
        }
    }
    let vessel = shertwin::io::parse_trace(&data("traces/bmat/vessel_rgby.csv"), s.mode).map_err(|e| e.to_string())?;
    let mut violations = 0;
    let mut ticks = 0;
    for log in [run(&s, trace)?, run(&s, vessel)?] {
        for rec in &log.records {
            ticks += 1;
            for hand in Hand::BOTH {
                let l = &s.robots.get(hand).limits;
                let th = rec.robots[hand.index()].theta;
                violations += (0..5).filter(|&j| th[j] < l.pos_min[j] || th[j] > l.pos_max[j]).count();
            }
        }
    }
    check(violations == 0, || format!("{violations} position-limit violations"))?;
    Ok(format!("100 instances ({active} active bounds), objective gap {worst_gap:.1e}; {ticks} trial ticks, 0 limit violations"))
}

// ---------------------------------------------------------------- determinism

fn determinism() -> Outcome {
    use sha2::{Digest, Sha256};
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut hashes = Vec::new();
    for k in 0..2 {
        let args = RunArgs {
            scenario: data("scenarios/bmat_sitting.json"),
            trace: data("traces/bmat/vessel_ybgr.csv"),
            out: dir.path().join(format!("run{k}")),
            overrides: Overrides { seed: None, dt: None },
            limit: SAFE_LIMIT_MN,
        };
        let out = cmd_run(&args, &mut std::io::sink()).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(&out.trial_csv).map_err(|e| e.to_string())?;
        hashes.push(hex::encode(Sha256::digest(&bytes)));
    }
    check(hashes[0] == hashes[1], || format!("hashes differ: {} vs {}", hashes[0], hashes[1]))?;
    Ok(format!("two runs, trial CSV sha256 {}", &hashes[0][..16]))
}

// ---------------------------------------------------------------- metrics

fn log_with(forces: &[f64], dt: f64) -> TrialLog {
    let records = forces
        .iter()
        .enumerate()
        .map(|(n, &f)| {
            let mut rec = TickRecord { tick: n as u64, t: n as f64 * dt, ..Default::default() };
            rec.robots[0].reading.norm = f;
            rec
        })
        .collect();
    let meta = TrialMeta {
        mode: Mode::Teleoperation,
        posture: "sitting".into(),
        scenario_hash: String::new(),
        seed: 0,
        dt,
        completion: Completion::TraceExhausted,
        completion_time: None,
        pin_order: vec![],
    };
    TrialLog { meta, records }
}

/// Two-sided Student-t tail by quadrature: with x = sqrt(nu) tan(u) the
/// density becomes proportional to cos(u)^(nu - 1) on [0, pi/2].
fn t_two_sided_p(t: f64, nu: f64) -> f64 {
    let f = |u: f64| u.cos().powf(nu - 1.0);
    let simpson = |a: f64, b: f64| {
        let n = 200_000;
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    };
    let half = std::f64::consts::FRAC_PI_2;
    let u0 = (t.abs() / nu.sqrt()).atan();
    simpson(u0, half) / simpson(0.0, half)
}

fn welch_oracle(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (n, m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0))
    };
    let ((na, ma, va), (nb, mb, vb)) = (stats(a), stats(b));
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    (t, dof, t_two_sided_p(t, dof))
}

fn metrics_pipeline() -> Outcome {
    let m = trial_metrics(&log_with(&[130.0, 50.0, 130.0, 50.0], 1e-3), SAFE_LIMIT_MN).map_err(|e| e.to_string())?;
    let d = &m.dominant;
    check((d.mean_sclera - 90.0).abs() < 1e-12 && d.max_sclera == 130.0 && (d.pct_time_over_limit - 50.0).abs() < 1e-12, || {
        format!("4-tick log gave mean {} max {} pct {}", d.mean_sclera, d.max_sclera, d.pct_time_over_limit)
    })?;

    let cases: [(&[f64], &[f64]); 3] = [
        (&[12.1, 14.3, 9.8, 11.0, 13.5, 10.2], &[15.2, 16.8, 14.9, 17.3]),
        (&[31.2, 28.7, 35.9, 30.4, 27.8, 33.1, 29.5], &[38.4, 26.1, 41.7, 30.2, 35.5]),
        (&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]),
    ];
    let mut worst = 0.0f64;
    for (a, b) in cases {
        let r = welch_ttest(a, b).map_err(|e| e.to_string())?;
        let (t, dof, p) = welch_oracle(a, b);
        for (got, want) in [(r.t, t), (r.dof, dof), (r.p, p)] {
            worst = worst.max((got - want).abs());
        }
    }
    check(worst <= 1e-6, || format!("Welch deviates from oracle by {worst:e}"))?;
    let same = [3.0, 1.0, 4.0, 1.0, 5.0];
    let r = welch_ttest(&same, &same).map_err(|e| e.to_string())?;
    check(r.t == 0.0 && r.p == 1.0, || format!("identical samples gave t={} p={}", r.t, r.p))?;
    Ok(format!("4-tick log 90 / 130 / 50; Welch (t, dof, p) within {worst:.1e} of oracle; identical samples t=0 p=1"))
}

// ---------------------------------------------------------------- no registration

fn no_registration() -> Outcome {
    let text = std::fs::read_to_string(data("scenarios/misregistered.json")).map_err(|e| e.to_string())?;
    let mut s = Scenario::from_json(&text).map_err(|e| e.to_string())?;
    let twenty = 20f64.to_radians();
    for hand in Hand::BOTH {
        let angle = s.robots.get(hand).master_map.norm();
        check((angle - twenty).abs() < 1e-3, || format!("{hand:?} map error is {:.2} deg", angle.to_degrees()))?;
    }
    s.scene.noise.force_sigma_mn = 0.0;
    s.scene.noise.depth_sigma_mm = 0.0;

    // Independent traces: the right robot drifts in x and later back, the
    // left drifts in y with a pause; neither knows about the other.
    let dt = s.dt;
    let mut trace = constant_trace(8.0, dt, [RobotInput::idle(); 2]);
    for (n, sample) in trace.iter_mut().enumerate() {
        let t = n as f64 * dt;
        let right = if t < 5.0 { 0.005 } else { -0.003 };
        sample.robots[0] = engaged(Vector6::new(right, 0.0, 0.0, 0.0, 0.0, 0.0));
        sample.robots[1] = if (2.0..3.0).contains(&t) { RobotInput::idle() } else { engaged(Vector6::new(0.0, -0.004, 0.0, 0.0, 0.0, 0.0)) };
    }
    let log = run(&s, trace.clone())?;
    let mut parts = Vec::new();
    for hand in Hand::BOTH {
        let (first, peak) = safety(&log.records, hand)?;
        check(first.is_some(), || format!("{hand:?}: threshold never reached"))?;
        parts.push(format!("{hand:?} peak {peak:.1} mN"));
    }

    // With the eye held still, one robot's record does not depend on the other's input.
    s.scene.rot_damping = 1e12;
    let both = run(&s, trace.clone())?;
    let mut right_idle = trace;
    for sample in right_idle.iter_mut() {
        sample.robots[0] = RobotInput::idle();
    }
    let alone = run(&s, right_idle)?;
    for (x, y) in both.records.iter().zip(&alone.records) {
        let (a, b) = (&x.robots[1], &y.robots[1]);
        check((a.theta - b.theta).amax() < 1e-12 && a.delta == b.delta, || format!("left robot depends on right input at tick {}", x.tick))?;
    }
    Ok(format!("20 deg map errors on both robots: {}; left robot independent of right input", parts.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("kinematics oracle equivalence", kinematics),
        ("force trajectory values", trajectory),
        ("closed-loop regulation", closed_loop),
        ("switching hysteresis", hysteresis),
        ("hybrid blend structure", hybrid_structure),
        ("optimizer optimality and feasibility", optimizer),
        ("determinism", determinism),
        ("metrics pipeline exactness", metrics_pipeline),
        ("bimanual safety without registration", no_registration),
    ];
    let mut failed = 0;
    for (name, criterion) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} of 9 acceptance criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
