//! Acceptance suite. Each test prints one PASS/FAIL line for its criterion.
//!
//! Trained networks are cached under the cargo tmp dir, keyed by a hash of
//! everything that determines them; training is deterministic, so a cached
//! file is byte-identical to a fresh run. Set PINC_ACCEPTANCE_FRESH=1 to
//! ignore the cache.

use std::io::Write as _;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use pinc::config::RunConfig;
use pinc::forwardsim::{pinc_forward, ControlSchedule, Trajectory};
use pinc::metrics::{compare_trajectories, fit_compare, mape, speed_ratio};
use pinc::mpc::{closed_loop, solve_horizon, ClosedLoopHistory, MpcConfig, PincPredictor};
use pinc::net::{eval_batch, init_params, objective_gradient, ActivationKind, Jet, NetworkArchitecture, NetworkModel};
use pinc::physics::{FluidKind, Physics};
use pinc::plant::{face_mass_flows, probe, simulate_plant, steady_solve_comp, steady_solve_inc, steady_state, step_transient, Plant, PlantConfig};
use pinc::training::{train_steady, train_transient, TrainingConfig};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n:>2} [{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

/// Preset training settings with the L-BFGS iteration caps used here.
fn acceptance_training(cfg: &RunConfig, transient: bool) -> TrainingConfig {
    let mut t = cfg.training_for(transient);
    t.lbfgs.max_iters = match (cfg.compressible(), transient) {
        (false, false) => 2000,
        (false, true) => 5000,
        (true, false) => 3000,
        (true, true) => 12000,
    };
    t
}

fn cache_path(tag: &str, arch: &NetworkArchitecture, cfg: &TrainingConfig, parent: Option<&NetworkModel>) -> PathBuf {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update(format!("{arch:?}").as_bytes());
    h.update(serde_json::to_string(cfg).unwrap().as_bytes());
    if let Some(p) = parent {
        h.update(p.to_document().as_bytes());
    }
    let digest: String = h.finalize().iter().take(12).map(|b| format!("{b:02x}")).collect();
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-models").join(format!("{tag}-{digest}.json"))
}

fn cached(tag: &str, arch: &NetworkArchitecture, cfg: &TrainingConfig, parent: Option<&NetworkModel>, train: impl FnOnce() -> NetworkModel) -> NetworkModel {
    let path = cache_path(tag, arch, cfg, parent);
    if std::env::var_os("PINC_ACCEPTANCE_FRESH").is_none() {
        if let Ok(doc) = std::fs::read_to_string(&path) {
            if let Ok(m) = NetworkModel::from_document(&doc) {
                return m;
            }
        }
    }
    let t0 = Instant::now();
    let m = train();
    let _ = std::io::stderr().write_all(format!("  trained {tag} in {:.0} s\n", t0.elapsed().as_secs_f64()).as_bytes());
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(&path, m.to_document()).unwrap();
    m
}

fn steady_model(cfg: &RunConfig, seed: u64) -> NetworkModel {
    let physics = cfg.physics().unwrap();
    let arch = cfg.network.steady.architecture(2).unwrap();
    let t = acceptance_training(cfg, false).with_seed(seed);
    let tag = format!("{}-steady-s{seed}", if cfg.compressible() { "comp" } else { "inc" });
    cached(&tag, &arch, &t, None, || train_steady(&physics, &arch, &t).unwrap().model)
}

fn transient_model(cfg: &RunConfig, ss: &NetworkModel, seed: u64) -> NetworkModel {
    let physics = cfg.physics().unwrap();
    let arch = cfg.network.transient.architecture(4).unwrap();
    let t = acceptance_training(cfg, true).with_seed(seed);
    let tag = format!("{}-transient-s{seed}", if cfg.compressible() { "comp" } else { "inc" });
    cached(&tag, &arch, &t, Some(ss), || train_transient(&physics, &arch, &t, ss).unwrap().model)
}

/// Steady profiles of network and plant over ũ ∈ {0.1..0.9} × 21 positions.
fn steady_mape(physics: &Physics, model: &NetworkModel) -> (f64, f64) {
    let (mut pt, mut pe, mut vt, mut ve) = (vec![], vec![], vec![], vec![]);
    for k in 1..=9 {
        let u = k as f64 / 10.0;
        let st = steady_state(physics, 50, u).unwrap();
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            let o = model.forward(&[x, u]).unwrap();
            let s = probe(physics, &st, x);
            pt.push(s.p);
            vt.push(s.v);
            pe.push(o[0] * physics.norm.p_ref);
            ve.push(o[1] * physics.norm.v_ref);
        }
    }
    (mape(&pt, &pe).unwrap(), mape(&vt, &ve).unwrap())
}

struct SteadyPick {
    model: NetworkModel,
    seed: u64,
    mape: (f64, f64),
    tried: usize,
}

/// Seeds in order until one meets the bounds; otherwise the lowest combined error.
fn steady_best(cfg: &RunConfig, bounds: (f64, f64)) -> SteadyPick {
    let physics = cfg.physics().unwrap();
    let mut best: Option<SteadyPick> = None;
    let mut tried = 0;
    for &seed in &SEEDS {
        tried += 1;
        let model = steady_model(cfg, seed);
        let m = steady_mape(&physics, &model);
        let pass = m.0 <= bounds.0 && m.1 <= bounds.1;
        let score = |m: (f64, f64)| m.0 / bounds.0 + m.1 / bounds.1;
        if pass || best.as_ref().is_none_or(|b| score(m) < score(b.mape)) {
            best = Some(SteadyPick { model, seed, mape: m, tried });
        }
        if pass {
            break;
        }
    }
    let mut best = best.unwrap();
    best.tried = tried;
    best
}

struct Case {
    cfg: RunConfig,
    physics: Physics,
    steady: SteadyPick,
    transient: NetworkModel,
    transient_seed: u64,
    transient_fit: Option<(f64, f64)>,
    transient_tried: usize,
}

fn comp_schedule() -> ControlSchedule {
    ControlSchedule::new(0.8, vec![0.7, 0.6, 0.5, 0.4, 0.3], 100.0).unwrap()
}

fn mean_fits(truth: &Trajectory, est: &Trajectory) -> (f64, f64) {
    let rows = compare_trajectories(truth, est, "transient").unwrap();
    let get = |v: &str| rows.iter().find(|r| r.metric == "fit" && r.variable == v).unwrap().value_percent;
    (get("P"), get("V"))
}

fn inc_case() -> &'static Case {
    static C: OnceLock<Case> = OnceLock::new();
    C.get_or_init(|| {
        let cfg = RunConfig::table1();
        let physics = cfg.physics().unwrap();
        let model = steady_model(&cfg, 0);
        let mape = steady_mape(&physics, &model);
        let steady = SteadyPick { model, seed: 0, mape, tried: 1 };
        let transient = transient_model(&cfg, &steady.model, 0);
        Case { cfg, physics, steady, transient, transient_seed: 0, transient_fit: None, transient_tried: 1 }
    })
}

fn comp_case() -> &'static Case {
    static C: OnceLock<Case> = OnceLock::new();
    C.get_or_init(|| {
        let cfg = RunConfig::table2();
        let physics = cfg.physics().unwrap();
        let steady = steady_best(&cfg, (3.0, 6.0));
        let sched = comp_schedule();
        let truth = simulate_plant(&physics, &cfg.plant_config(), &sched, &cfg.run.probes).unwrap();
        let mut best: Option<(NetworkModel, u64, (f64, f64))> = None;
        let mut tried = 0;
        for &seed in &SEEDS {
            tried += 1;
            let m = transient_model(&cfg, &steady.model, seed);
            let fit = mean_fits(&truth, &pinc_forward(&m, &physics, &sched, &cfg.run.probes).unwrap());
            let pass = fit.0 >= 85.0 && fit.1 >= 85.0;
            if pass || best.as_ref().is_none_or(|b| fit.0.min(fit.1) > b.2 .0.min(b.2 .1)) {
                best = Some((m, seed, fit));
            }
            if pass {
                break;
            }
        }
        let (transient, transient_seed, fit) = best.unwrap();
        Case { cfg, physics, steady, transient, transient_seed, transient_fit: Some(fit), transient_tried: tried }
    })
}

fn mpc_run(case: &Case) -> &ClosedLoopHistory {
    static INC: OnceLock<ClosedLoopHistory> = OnceLock::new();
    static COMP: OnceLock<ClosedLoopHistory> = OnceLock::new();
    let cell = if case.cfg.compressible() { &COMP } else { &INC };
    cell.get_or_init(|| {
        let cfg = &case.cfg;
        let mut plant = Plant::at_steady_state(case.physics.clone(), cfg.plant_config(), cfg.run.u_init).unwrap();
        let mut pred = PincPredictor::new(case.transient.clone(), &cfg.mpc).unwrap();
        closed_loop(&mut pred, &mut plant, &cfg.mpc, cfg.run.u_init, cfg.run.duration, &cfg.y_min_schedule()).unwrap()
    })
}

#[test]
fn criterion_01_steady_incompressible() {
    let c = inc_case();
    let (p, v) = c.steady.mape;
    let pass = p <= 1.0 && v <= 1.0;
    report(1, "steady incompressible MAPE", pass, &format!("P {p:.4}% (<= 1%), V {v:.4}% (<= 1%)"));
    assert!(pass);
}

#[test]
fn criterion_02_steady_compressible() {
    let c = comp_case();
    let (p, v) = c.steady.mape;
    let pass = p <= 3.0 && v <= 6.0;
    report(
        2,
        "steady compressible MAPE, best of 5 seeds",
        pass,
        &format!("P {p:.4}% (<= 3%), V {v:.4}% (<= 6%) with seed {} after {} seed(s)", c.steady.seed, c.steady.tried),
    );
    assert!(pass);
}

/// Transient network at t̃ = 0 against the plant steady state of ũ₀, for all (ũ₀, ũ) pairs.
fn ic_transfer(c: &Case) -> (f64, f64) {
    let ph = &c.physics;
    let (mut pt, mut pe, mut vt, mut ve) = (vec![], vec![], vec![], vec![]);
    for a in 1..=9 {
        let u0 = a as f64 / 10.0;
        let st = steady_state(ph, 50, u0).unwrap();
        for b in 1..=9 {
            let u = b as f64 / 10.0;
            for i in 0..=20 {
                let x = i as f64 / 20.0;
                let o = c.transient.forward(&[x, 0.0, u0, u]).unwrap();
                let s = probe(ph, &st, x);
                pt.push(s.p);
                vt.push(s.v);
                pe.push(o[0] * ph.norm.p_ref);
                ve.push(o[1] * ph.norm.v_ref);
            }
        }
    }
    (mape(&pt, &pe).unwrap(), mape(&vt, &ve).unwrap())
}

#[test]
fn criterion_03_initial_condition_transfer() {
    let (ip, iv) = ic_transfer(inc_case());
    let (cp, cv) = ic_transfer(comp_case());
    let pass = ip <= 3.0 && iv <= 3.0 && cp <= 5.0 && cv <= 8.0;
    report(
        3,
        "transient at t = 0 vs plant steady",
        pass,
        &format!("inc P {ip:.3}% (<= 3%) V {iv:.3}% (<= 3%); comp P {cp:.3}% (<= 5%) V {cv:.3}% (<= 8%)"),
    );
    assert!(pass);
}

/// Window controls taken from the closed loop at the start of every t_ref window.
fn mpc_schedule(case: &Case) -> ControlSchedule {
    let hist = mpc_run(case);
    let t_ref = case.physics.norm.t_ref;
    let windows: Vec<f64> = hist.records.iter().filter(|r| (r.t / t_ref).fract().abs() < 1e-9).map(|r| r.u_applied).collect();
    ControlSchedule::new(case.cfg.run.u_init, windows, t_ref).unwrap()
}

#[test]
fn criterion_04_transient_incompressible() {
    let c = inc_case();
    let sched = mpc_schedule(c);
    let probes = [0.1];
    let truth = simulate_plant(&c.physics, &c.cfg.plant_config(), &sched, &probes).unwrap();
    let est = pinc_forward(&c.transient, &c.physics, &sched, &probes).unwrap();
    let (p, v) = mean_fits(&truth, &est);
    let pass = p >= 90.0 && v >= 88.0;
    report(
        4,
        "transient incompressible Fit at the PDG",
        pass,
        &format!("P {p:.2}% (>= 90%), V {v:.2}% (>= 88%) over windows {:?}", sched.windows.iter().map(|u| (u * 1e4).round() / 1e4).collect::<Vec<_>>()),
    );
    assert!(pass);
}

#[test]
fn criterion_05_transient_compressible() {
    let c = comp_case();
    let (p, v) = c.transient_fit.unwrap();
    let pass = p >= 85.0 && v >= 85.0;
    report(
        5,
        "transient compressible mean Fit, best of 5 seeds",
        pass,
        &format!("P {p:.2}% (>= 85%), V {v:.2}% (>= 85%) with seed {} after {} seed(s)", c.transient_seed, c.transient_tried),
    );
    assert!(pass);
}

#[test]
fn criterion_06_gradient_checks() {
    let t0 = Instant::now();
    let mut worst_jac: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    let mut archs = 0;
    for input_dim in [2, 4] {
        for act in [ActivationKind::Tanh, ActivationKind::Sinusoidal, ActivationKind::Swish] {
            for skip in [false, true] {
                archs += 1;
                let arch = NetworkArchitecture::new(input_dim, 3, 12, act, skip).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(archs);
                for case in 0..100 {
                    let mut params = init_params(&arch, case);
                    for p in params.iter_mut() {
                        *p += 0.1 * (rng.gen::<f64>() - 0.5);
                    }
                    let x: Vec<f64> = (0..input_dim).map(|_| rng.gen::<f64>()).collect();
                    let dirs: Vec<usize> = (0..input_dim).collect();
                    let inp = Array2::from_shape_vec((1, input_dim), x.clone()).unwrap();
                    let jet = eval_batch(&arch, &params, inp.view(), &dirs).unwrap();
                    let h = 1e-6;
                    for d in 0..input_dim {
                        let (mut a, mut b) = (x.clone(), x.clone());
                        a[d] += h;
                        b[d] -= h;
                        let fa = eval_batch(&arch, &params, Array2::from_shape_vec((1, input_dim), a).unwrap().view(), &[]).unwrap();
                        let fb = eval_batch(&arch, &params, Array2::from_shape_vec((1, input_dim), b).unwrap().view(), &[]).unwrap();
                        for o in 0..2 {
                            let fd = (fa.value(0, o) - fb.value(0, o)) / (2.0 * h);
                            let e = (fd - jet.tangent(d, 0, o)).abs() / jet.tangent(d, 0, o).abs().max(1e-2);
                            worst_jac = worst_jac.max(e);
                        }
                    }
                    let pts = Array2::from_shape_fn((3, input_dim), |_| rng.gen::<f64>());
                    let objective = |j: &Jet| -> f64 {
                        let mut s = 0.0;
                        for i in 0..j.len() {
                            for o in 0..2 {
                                s += 0.5 * j.value(i, o).powi(2);
                                for d in 0..j.ndirs() {
                                    s += 0.5 * j.tangent(d, i, o).powi(2);
                                }
                            }
                        }
                        s
                    };
                    let (_, grad) = objective_gradient(&arch, &params, pts.view(), &dirs, |_, j| {
                        let mut adj = j.clone();
                        for i in 0..j.len() {
                            for o in 0..2 {
                                *adj.value_mut(i, o) = j.value(i, o);
                                for d in 0..j.ndirs() {
                                    *adj.tangent_mut(d, i, o) = j.tangent(d, i, o);
                                }
                            }
                        }
                        (objective(j), adj)
                    })
                    .unwrap();
                    let along = |i: usize, s: f64| -> f64 {
                        let mut p = params.clone();
                        p[i] += s;
                        objective(&eval_batch(&arch, &p, pts.view(), &dirs).unwrap())
                    };
                    let hp = 1e-3;
                    for _ in 0..25 {
                        let i = rng.gen_range(0..params.len());
                        let fd = (8.0 * (along(i, hp) - along(i, -hp)) - (along(i, 2.0 * hp) - along(i, -2.0 * hp))) / (12.0 * hp);
                        let an = grad[i];
                        worst_grad = worst_grad.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6));
                    }
                }
            }
        }
    }
    let pass = worst_jac <= 1e-5 && worst_grad <= 1e-5;
    report(
        6,
        "finite-difference gradient checks",
        pass,
        &format!(
            "{archs} architectures x 100 cases: worst input-Jacobian error {worst_jac:.2e}, worst parameter-gradient error {worst_grad:.2e} over 25 coordinates each (<= 1e-5) in {:.1} s",
            t0.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_plant_consistency() {
    let gas = Physics::table2();
    let mut uniform: f64 = 0.0;
    for u in [0.3, 0.5, 0.7] {
        let s = steady_solve_comp(&gas, 50, u).unwrap();
        let m = face_mass_flows(&gas, &s);
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        for &mi in &m {
            uniform = uniform.max((mi - mean).abs() / mean);
        }
    }
    let mut to_steady: f64 = 0.0;
    for ph in [Physics::table1(), Physics::table2()] {
        let dt = ph.norm.t_ref / 100.0;
        let mut st = steady_state(&ph, 50, 0.7).unwrap();
        let steps = if ph.sys.fluid == FluidKind::IdealGas { 1000 } else { 2000 };
        for _ in 0..steps {
            st = step_transient(&ph, &st, 0.4, dt).unwrap();
        }
        let target = steady_state(&ph, 50, 0.4).unwrap();
        for (a, b) in st.p.iter().zip(&target.p).chain(st.v.iter().zip(&target.v)) {
            to_steady = to_steady.max((a - b).abs() / b.abs());
        }
    }
    let inc = Physics::table1();
    let mut st = steady_state(&inc, 50, 1.0).unwrap();
    st.v.iter_mut().for_each(|v| *v = 0.0);
    for _ in 0..2000 {
        st = step_transient(&inc, &st, 0.5, 0.1).unwrap();
    }
    let oracle = {
        let mut v: f64 = 0.0;
        for _ in 0..500 {
            v = 1.5 - 0.5 * 1000.0 * (0.316 / (1e5 * v.max(1e-12)).powf(0.25)) / 0.1 * v * v * 100.0 * 1e-5;
        }
        v
    };
    let inc_err = (st.v[0] - 1.3497).abs() / 1.3497;
    let pass = uniform <= 1e-8 && to_steady <= 1e-3 && inc_err <= 1e-4 && (steady_solve_inc(&inc, 0.5).unwrap().v - oracle).abs() <= 1e-10;
    report(
        7,
        "plant conservation and consistency",
        pass,
        &format!(
            "mass-flow spread {uniform:.1e} (<= 1e-8), transient-to-steady {to_steady:.1e} (<= 1e-3), V -> {:.6} m/s vs 1.3497 rel {inc_err:.1e} (<= 1e-4)",
            st.v[0]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_no_error_accumulation() {
    let c = inc_case();
    let mut models = vec![(c.transient.clone(), c.physics.clone())];
    for (arch, ph) in [
        (NetworkArchitecture::new(4, 8, 93, ActivationKind::Swish, true).unwrap(), Physics::table2()),
        (NetworkArchitecture::new(4, 3, 16, ActivationKind::Sinusoidal, true).unwrap(), Physics::table1()),
    ] {
        models.push((NetworkModel::init(arch, ph.norm, 11).unwrap(), ph));
    }
    let base = vec![0.7, 0.6, 0.5, 0.45, 0.4, 0.35];
    let probes = [0.1, 0.5, 0.9];
    let mut checks = 0;
    let mut ok = true;
    for (m, ph) in &models {
        let sched = ControlSchedule::new(0.8, base.clone(), ph.norm.t_ref).unwrap();
        let reference = pinc_forward(m, ph, &sched, &probes).unwrap();
        for j in 1..=base.len() {
            for new in [0.0, 0.99, 0.123] {
                let mut w = base.clone();
                w[j - 1] = new;
                let mutated = pinc_forward(m, ph, &ControlSchedule::new(0.8, w, ph.norm.t_ref).unwrap(), &probes).unwrap();
                for (a, b) in reference.rows.iter().zip(&mutated.rows).filter(|(a, _)| a.window < j) {
                    checks += 1;
                    ok &= a.p.to_bits() == b.p.to_bits() && a.v.to_bits() == b.v.to_bits();
                }
            }
        }
    }
    report(8, "no error accumulation across windows", ok, &format!("{checks} earlier-window values compared bit-for-bit"));
    assert!(ok);
}

struct LoopCheck {
    violations: usize,
    controls_ok: bool,
    settled: Vec<(f64, usize)>,
}

fn check_loop(case: &Case) -> LoopCheck {
    let hist = mpc_run(case);
    let p_ref = case.physics.norm.p_ref;
    let dy = case.cfg.mpc.dy_max.unwrap();
    let violations = hist.rate_violations(1.25 * dy * p_ref);
    let controls_ok = hist.records.iter().all(|r| (0.0..=1.0).contains(&r.u_applied));
    let mut settled = Vec::new();
    let mut i = 0;
    while i < hist.records.len() {
        let level = hist.records[i].y_min;
        let mut j = i;
        while j < hist.records.len() && hist.records[j].y_min == level {
            j += 1;
        }
        if let Some(y_min) = level {
            let (mut run, mut best) = (0, 0);
            for r in &hist.records[i..j] {
                if (r.y_measured / p_ref - y_min).abs() <= dy {
                    run += 1;
                    best = best.max(run);
                } else {
                    run = 0;
                }
            }
            settled.push((y_min, best));
        }
        i = j;
    }
    LoopCheck { violations, controls_ok, settled }
}

/// N_c = 1 without rate or level constraints at 20 states taken from the loop.
fn grid_oracle_gap(case: &Case) -> f64 {
    let hist = mpc_run(case);
    let p_ref = case.physics.norm.p_ref;
    let cfg = MpcConfig { n_c: 1, dy_max: None, du_max: None, y_min: None, ..case.cfg.mpc.clone() };
    let pred = PincPredictor::new(case.transient.clone(), &cfg).unwrap();
    let n = hist.records.len();
    let mut worst = f64::NEG_INFINITY;
    for k in 0..20 {
        let idx = (k * n / 20).max(1).min(n - 1);
        let u0 = hist.records[idx - 1].u_applied;
        let r = &hist.records[idx];
        let (y0, bias) = (r.y_measured / p_ref, r.bias / p_ref);
        let sol = solve_horizon(&pred, &cfg, u0, y0, bias).unwrap();
        let mut grid = f64::INFINITY;
        for g in 0..=1000 {
            let u = g as f64 / 1000.0;
            let y = pinc::mpc::HorizonModel::predict(&pred, u0, &vec![u; cfg.n_p]).unwrap();
            let j: f64 = y.iter().map(|v| (v + bias - cfg.y_target).powi(2)).sum::<f64>() + cfg.lambda * (u - u0).powi(2);
            grid = grid.min(j);
        }
        worst = worst.max(sol.objective - grid);
    }
    worst
}

#[test]
fn criterion_09_closed_loop() {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, case) in [("inc", inc_case()), ("comp", comp_case())] {
        let chk = check_loop(case);
        let gap = grid_oracle_gap(case);
        let ok = chk.violations == 0 && chk.controls_ok && chk.settled.iter().all(|s| s.1 >= 5) && gap <= 1e-6;
        pass &= ok;
        parts.push(format!(
            "{name}: {} rate violations, controls in [0,1] {}, samples settled per y_min {:?}, grid beats solver by {gap:.1e}",
            chk.violations, chk.controls_ok, chk.settled
        ));
    }
    report(9, "closed-loop MPC", pass, &parts.join("; "));
    assert!(pass);
}

#[test]
fn criterion_10_speed() {
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, case, need) in [("inc", inc_case(), 5.0), ("comp", comp_case(), 10.0)] {
        let sched = if case.cfg.compressible() { comp_schedule() } else { mpc_schedule(case) };
        let probes = case.cfg.run.probes.clone();
        let plant_cfg: PlantConfig = case.cfg.plant_config();
        let r = speed_ratio(
            5,
            || pinc_forward(&case.transient, &case.physics, &sched, &probes).map(|_| ()),
            || simulate_plant(&case.physics, &plant_cfg, &sched, &probes).map(|_| ()),
        )
        .unwrap();
        pass &= r.ratio >= need;
        parts.push(format!("{name} {:.1}x (>= {need}x; PINC {:?}, plant {:?})", r.ratio, r.model_median, r.plant_median));
    }
    report(10, "inference speed ratio", pass, &parts.join(", "));
    assert!(pass);
}

#[test]
fn criterion_11_determinism_and_persistence() {
    let mut same = true;
    let mut lossless = true;
    let cases = [
        (RunConfig::table1(), false),
        (RunConfig::table1(), true),
        (RunConfig::table2(), false),
        (RunConfig::table2(), true),
    ];
    let mut ss_inc: Option<NetworkModel> = None;
    let mut ss_comp: Option<NetworkModel> = None;
    for (cfg, transient) in cases {
        let physics = cfg.physics().unwrap();
        let mut t = cfg.training_for(transient).with_seed(7);
        t.n_f = 300;
        t.n_b = 40;
        t.n_i = if transient { 40 } else { 0 };
        t.adam.epochs = 20;
        t.lbfgs.max_iters = 30;
        let docs: Vec<String> = (0..2)
            .map(|_| {
                let m = if transient {
                    let ss = if cfg.compressible() { ss_comp.as_ref() } else { ss_inc.as_ref() }.unwrap();
                    train_transient(&physics, &cfg.network.transient.architecture(4).unwrap(), &t, ss).unwrap().model
                } else {
                    train_steady(&physics, &cfg.network.steady.architecture(2).unwrap(), &t).unwrap().model
                };
                let doc = m.to_document();
                let back = NetworkModel::from_document(&doc).unwrap();
                lossless &= back.params.iter().zip(&m.params).all(|(a, b)| a.to_bits() == b.to_bits())
                    && back.arch == m.arch
                    && back.norm == m.norm
                    && back.to_document() == doc;
                if !transient {
                    if cfg.compressible() {
                        ss_comp = Some(m.clone());
                    } else {
                        ss_inc = Some(m.clone());
                    }
                }
                doc
            })
            .collect();
        same &= docs[0] == docs[1];
    }
    let pass = same && lossless;
    report(11, "determinism and persistence", pass, &format!("byte-identical retrains {same}, lossless round trip {lossless}"));
    assert!(pass);
}

#[test]
fn trajectory_metrics_are_consistent_with_direct_formulas() {
    let c = inc_case();
    let sched = ControlSchedule::new(0.8, vec![0.6, 0.5], 10.0).unwrap();
    let truth = simulate_plant(&c.physics, &c.cfg.plant_config(), &sched, &[0.1]).unwrap();
    let est = pinc_forward(&c.transient, &c.physics, &sched, &[0.1]).unwrap();
    let yt: Vec<f64> = truth.rows.iter().map(|r| r.p).collect();
    let ye: Vec<f64> = est.rows.iter().map(|r| r.p).collect();
    let (p, _) = mean_fits(&truth, &est);
    assert_eq!(p, fit_compare(&yt, &ye).unwrap());
}
