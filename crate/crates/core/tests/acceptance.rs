//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::TAU;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use odelay::interference::{
    amplitude_bound, integral_bound, random_phase_draw, BoundVariant, InterferenceSpec, SpectrumLine,
};
use odelay::loopsim::{
    aux_function_y, default_horizon, delay_bounds, iterate_loop, max_overdrive_delay, min_overdrive_delay,
    sector_bound_check, sector_estimate, solve_cycle, stability_condition, stability_predicate,
    ComparatorParams, LoopParams, RampCycleInput,
};
use odelay::satcore::{saturating_integral, GridFunction, QuadratureConfig};
use odelay::staticmap::{compute_k3, eval_k, lipschitz_probe, roots_psi, shift_transform, static_map, MapSettings};

const VARIANT: BoundVariant = BoundVariant::Interval;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn random_spec(rng: &mut ChaCha8Rng, lines: usize, omega: (f64, f64), amp: (f64, f64)) -> InterferenceSpec {
    let lines = (0..lines)
        .map(|_| {
            SpectrumLine::new(
                rng.random_range(omega.0..omega.1),
                rng.random_range(amp.0..amp.1),
                rng.random_range(0.0..TAU),
            )
        })
        .collect();
    InterferenceSpec::new(lines).unwrap()
}

// ---- 1 ----

/// `c + sum a_i sin(w_i x + p_i)` with its exact antiderivative.
struct Trig {
    c: f64,
    terms: Vec<(f64, f64, f64)>,
}

impl Trig {
    fn f(&self, x: f64) -> f64 {
        self.c + self.terms.iter().map(|&(a, w, p)| a * (w * x + p).sin()).sum::<f64>()
    }

    fn antiderivative(&self, x: f64) -> f64 {
        self.c * x - self.terms.iter().map(|&(a, w, p)| a / w * (w * x + p).cos()).sum::<f64>()
    }

    /// Reflected running integral from the exact antiderivative on a fine grid.
    fn reflected(&self, lo: f64, hi: f64) -> f64 {
        let n = 400_000;
        let mut min_f = 0.0f64;
        for i in 0..=n {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            min_f = min_f.min(self.antiderivative(x) - self.antiderivative(lo));
        }
        self.antiderivative(hi) - self.antiderivative(lo) - min_f
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cfg = QuadratureConfig::new(1e-2, 16, 1e-10).unwrap();
    let mut worst_agree = 0.0f64;
    let mut worst_reflect = 0.0f64;
    let mut dominance_failures = 0;
    for i in 0..100 {
        let terms: Vec<(f64, f64, f64)> = (0..rng.random_range(1..4))
            .map(|_| (rng.random_range(0.1..1.0), rng.random_range(0.5..12.0), rng.random_range(0.0..TAU)))
            .collect();
        let amp: f64 = terms.iter().map(|t| t.0).sum();
        let lo = rng.random_range(-3.0..0.0);
        let hi = lo + rng.random_range(0.5..4.0);
        if i % 2 == 0 {
            let g = Trig {
                c: amp + rng.random_range(0.01..1.0),
                terms,
            };
            let f = GridFunction::new(|x| g.f(x), lo, hi).unwrap();
            let sat = saturating_integral(&f, lo, hi, &cfg).unwrap();
            let exact = g.antiderivative(hi) - g.antiderivative(lo);
            worst_agree = worst_agree.max(rel_err(sat, exact));
        } else {
            let g = Trig {
                c: rng.random_range(-amp..amp),
                terms,
            };
            let f = GridFunction::new(|x| g.f(x), lo, hi).unwrap();
            let sat = saturating_integral(&f, lo, hi, &cfg).unwrap();
            let plain = g.antiderivative(hi) - g.antiderivative(lo);
            if sat < plain - 1e-9 * plain.abs().max(1.0) || sat < 0.0 {
                dominance_failures += 1;
            }
            worst_reflect = worst_reflect.max((sat - g.reflected(lo, hi)).abs());
        }
    }
    let f = GridFunction::new(|x| x, -1.0, 1.0).unwrap();
    let ramp = saturating_integral(&f, -1.0, 1.0, &QuadratureConfig::default()).unwrap();
    let ramp_err = (ramp - 0.5).abs();
    outcome(
        worst_agree <= 1e-8 && dominance_failures == 0 && ramp_err <= 1e-10,
        format!(
            "max rel err {worst_agree:.2e} (<= 1e-8), dominance failures {dominance_failures}, \
             x on [-1,1] err {ramp_err:.1e} (<= 1e-10), max |sat - reflection| {worst_reflect:.1e}"
        ),
    )
}

// ---- 2 ----

fn criterion_2() -> Outcome {
    let empty = InterferenceSpec::empty();
    let settings = MapSettings::default();
    let mut worst_map = 0.0f64;
    let mut worst_cycle = 0.0f64;
    for i in 0..10 {
        for j in 0..10 {
            let b = -5.0 + i as f64;
            let k = 10f64.powf(-3.0 + 0.5 * j as f64);
            let theta = static_map(b, k, &empty, &settings).unwrap();
            worst_map = worst_map.max(rel_err(theta, b + (2.0 * k).sqrt()));

            let m1 = 10f64.powf(-1.0 + 0.5 * i as f64);
            let cmp = ComparatorParams::new(1e-3, 1e-12 * 10f64.powf(0.3 * j as f64), 0.05).unwrap();
            let ramp = RampCycleInput {
                m1,
                command: 0.5,
                t_start: 1e-3 * i as f64,
            };
            let c = solve_cycle(&ramp, &empty, &cmp, default_horizon(&ramp, &empty, &cmp)).unwrap();
            worst_cycle = worst_cycle.max(rel_err(c.t_od, (2.0 * cmp.v_th * cmp.tau_c() / m1).sqrt()));
        }
    }
    outcome(
        worst_map <= 1e-6 && worst_cycle <= 1e-6,
        format!("static map rel err {worst_map:.2e}, delay rel err {worst_cycle:.2e} (both <= 1e-6)"),
    )
}

// ---- 3 ----

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let settings = MapSettings {
        quadrature: QuadratureConfig::new(1e-2, 20, 1e-12).unwrap(),
        ..MapSettings::default()
    };
    let mut worst_k = 0.0f64;
    let mut worst_root = 0.0f64;
    for i in 0..200 {
        let spec = random_spec(&mut rng, 1 + i % 2, (0.5, 8.0), (0.05, 0.6));
        let phases: Vec<f64> = (0..spec.len()).map(|_| rng.random_range(0.0..TAU)).collect();
        let offset = rng.random_range(-4.0..4.0);
        let k = eval_k(&spec, offset, &phases, &settings).unwrap();
        let (b2, p2) = shift_transform(offset, &phases, &spec, settings.root_tol).unwrap();
        let k2 = eval_k(&spec, b2, &p2, &settings).unwrap();
        // an identically zero K comes back as rounding residue on one side;
        // the 1e-7 floor admits 1e-15 absolute
        worst_k = worst_k.max((k2.value - k.value).abs() / k.value.abs().max(1e-7));
        let moved = spec.with_phases(&p2).unwrap();
        worst_root = worst_root.max(roots_psi(&moved, b2, settings.root_tol).0.abs());
    }
    outcome(
        worst_k <= 1e-8 && worst_root <= 1e-10,
        format!("K rel change {worst_k:.2e} (<= 1e-8), |psi_l'| {worst_root:.2e} (<= 1e-10)"),
    )
}

// ---- 4 ----

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let settings = MapSettings::default();
    let mut exceed = 0;
    let mut worst_ratio = 0.0f64;
    let mut worst_shift = 0.0f64;
    let mut outside_box = 0;
    for s in 0..20 {
        let spec = random_spec(&mut rng, 1 + s % 2, (0.5, 8.0), (0.05, 0.6));
        let a = amplitude_bound(&spec);
        let k3 = compute_k3(&spec, &settings).unwrap();
        let probes: Vec<(f64, Vec<f64>)> = (0..500)
            .map(|_| {
                let offset = rng.random_range(-3.0..3.0);
                let phases = (0..spec.len()).map(|_| rng.random_range(0.0..TAU)).collect();
                (offset, phases)
            })
            .collect();
        let values: Vec<(f64, bool)> = probes
            .par_iter()
            .map(|(offset, phases)| {
                let (b, p) = shift_transform(*offset, phases, &spec, settings.root_tol).unwrap();
                let inside = b.abs() <= a * (1.0 + 1e-9) + 1e-12;
                (eval_k(&spec, b, &p, &settings).unwrap().value, inside)
            })
            .collect();
        for (v, inside) in values {
            worst_ratio = worst_ratio.max(v / k3.value);
            if v > k3.value * (1.0 + 1e-8) {
                exceed += 1;
            }
            if !inside {
                outside_box += 1;
            }
        }
        let shift = rng.random_range(-5.0..5.0);
        let again = compute_k3(&spec.time_shifted(shift), &settings).unwrap();
        worst_shift = worst_shift.max(rel_err(again.value, k3.value));
    }
    outcome(
        exceed == 0 && outside_box == 0 && worst_shift <= 1e-6,
        format!(
            "probes above K3: {exceed} of 10000 (max probe/K3 {worst_ratio:.4}), folded outside box: {outside_box}, \
             time-shift rel change {worst_shift:.2e} (<= 1e-6)"
        ),
    )
}

// ---- 5 ----

fn criterion_5() -> Outcome {
    let spec = InterferenceSpec::new(vec![SpectrumLine::new(25.0, 0.1, 0.0)]).unwrap();
    let cmp = ComparatorParams::new(1.0, 1.0, 0.5).unwrap();
    let m1 = 1.0;
    let a = amplitude_bound(&spec);
    let b = integral_bound(&spec, VARIANT);
    assert!(cmp.dominates(b));
    let t_min = min_overdrive_delay(a, m1, &cmp, b).unwrap();
    let t_max = max_overdrive_delay(a, m1, &cmp, b).unwrap();
    let tol = 1e-4;
    let results: Vec<(bool, bool, f64)> = (0..10_000u64)
        .into_par_iter()
        .map(|i| {
            let drawn = random_phase_draw(&spec, i);
            let mut rng = ChaCha8Rng::seed_from_u64(i ^ 0x5eed);
            let ramp = RampCycleInput {
                m1,
                command: rng.random_range(0.5..2.0),
                t_start: rng.random_range(0.0..1.0),
            };
            let c = solve_cycle(&ramp, &drawn, &cmp, default_horizon(&ramp, &drawn, &cmp)).unwrap();
            let d = delay_bounds(c.w_at_tc, m1, &cmp, b).unwrap();
            let pointwise = c.t_od >= d.t_l * (1.0 - tol) && c.t_od <= d.t_u * (1.0 + tol);
            let global = c.t_od >= t_min * (1.0 - tol) && c.t_od <= t_max * (1.0 + tol);
            (pointwise, global, c.t_od)
        })
        .collect();
    let pointwise = results.iter().filter(|r| !r.0).count();
    let global = results.iter().filter(|r| !r.1).count();
    let lo = results.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let hi = results.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        pointwise == 0 && global == 0,
        format!(
            "violations: pointwise {pointwise}, global {global} of 10000; t_od in [{lo:.5}, {hi:.5}] \
             vs [{t_min:.5}, {t_max:.5}]"
        ),
    )
}

// ---- 6 ----

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let cmp = ComparatorParams::new(1.0, 1.0, 0.5).unwrap();
    let m1 = 1.0;
    let tol = 1e-3 * m1;
    let mut right_low = 0;
    let mut right_high = 0;
    let mut left_low = 0;
    let mut product_fail = 0;
    let mut product_checked = 0;
    let mut q_right_min = f64::INFINITY;
    for i in 0..100 {
        let spec = random_spec(&mut rng, 1 + i % 2, (5.0, 60.0), (0.01, 0.08));
        let a = amplitude_bound(&spec);
        let b = integral_bound(&spec, VARIANT);
        let t_min = min_overdrive_delay(a, m1, &cmp, b).unwrap();
        let slope = 2.0 * a / t_min;
        let ramp = RampCycleInput {
            m1,
            command: rng.random_range(0.5..2.0),
            t_start: rng.random_range(0.0..1.0),
        };
        let est = sector_estimate(&ramp, &spec, &cmp, 1e-6).unwrap();
        q_right_min = q_right_min.min(est.q_right);
        right_low += (est.q_right < -tol) as usize;
        right_high += (est.q_right > slope + tol) as usize;
        left_low += (est.q_left < -slope - tol) as usize;
        if stability_predicate(a, m1, &cmp, b) {
            product_checked += 1;
            product_fail += !sector_bound_check(&est.samples, a, t_min) as usize;
        }
    }
    outcome(
        right_low == 0 && right_high == 0 && left_low == 0 && product_fail == 0,
        format!(
            "q_right < -tol at {right_low}/100 (min q_right {q_right_min:.4}), q_right > upper at {right_high}/100, \
             q_left < lower at {left_low}/100, product inequality failures {product_fail}/{product_checked}"
        ),
    )
}

// ---- 7 ----

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut unstable_points = 0;
    let mut envelope_failures = 0;
    let mut worst_env_ratio = 0.0f64;
    let mut sets = 0;
    while sets < 10 {
        let m1 = rng.random_range(0.5..2.0);
        let cmp = ComparatorParams::new(1.0, 1.0, rng.random_range(0.3..1.0)).unwrap();
        let spec = random_spec(&mut rng, 1 + sets % 2, (5.0, 40.0), (0.01, 0.1));
        let a = amplitude_bound(&spec);
        let b = integral_bound(&spec, VARIANT);
        if !stability_predicate(a, m1, &cmp, b) {
            continue;
        }
        sets += 1;
        for _ in 0..10 {
            let ramp = RampCycleInput {
                m1,
                command: rng.random_range(0.5..3.0),
                t_start: rng.random_range(0.0..1.0),
            };
            let est = sector_estimate(&ramp, &spec, &cmp, 1e-6).unwrap();
            unstable_points += !stability_condition(est.q_right, est.q_left, m1) as usize;
        }

        let t_ss = (2.0 * cmp.trip_charge() / m1).sqrt();
        let ss = -m1 * t_ss;
        let command = 2.0;
        let t_off = 1.0;
        let m2 = m1 * (t_ss + 1.5) / t_off;
        let valley_ss = command + m1 * t_ss - m2 * t_off;
        let params = LoopParams {
            t_off,
            m2,
            n_cycles: 200,
            valley0: valley_ss - 0.5,
        };
        let ramp = RampCycleInput {
            m1,
            command,
            t_start: 0.0,
        };
        let tr = iterate_loop(&params, &ramp, &spec, &cmp).unwrap();
        if tr.error.is_some() || tr.cycles.len() != 200 {
            envelope_failures += 1;
            continue;
        }
        // tail envelope E(n) = max_{m >= n} |i_e(m) - i_e_ss|
        let dev: Vec<f64> = tr.cycles.iter().map(|c| (c.i_e - ss).abs()).collect();
        let mut env = vec![0.0; 200];
        let mut run = 0.0f64;
        for n in (0..200).rev() {
            run = run.max(dev[n]);
            env[n] = run;
        }
        let monotone = env[100..].windows(2).all(|w| w[1] <= w[0]);
        let t_min = min_overdrive_delay(a, m1, &cmp, b).unwrap();
        let t_max = max_overdrive_delay(a, m1, &cmp, b).unwrap();
        let jitter = a + m1 * (t_max - t_ss).max(t_ss - t_min);
        worst_env_ratio = worst_env_ratio.max(env[100] / jitter);
        if !monotone || env[100] > jitter {
            envelope_failures += 1;
        }
    }

    let cmp = ComparatorParams::new(1.0, 1.0, 0.5).unwrap();
    let params = LoopParams {
        t_off: 1.0,
        m2: 2.0,
        n_cycles: 5,
        valley0: -0.7,
    };
    let ramp = RampCycleInput {
        m1: 1.0,
        command: 1.0,
        t_start: 0.0,
    };
    let tr = iterate_loop(&params, &ramp, &InterferenceSpec::empty(), &cmp).unwrap();
    let deadbeat = tr.cycles.iter().all(|c| (c.i_e + 1.0).abs() <= 1e-9)
        && tr.cycles[1..].iter().all(|c| (c.valley - tr.cycles[1].valley).abs() <= 1e-9);

    outcome(
        unstable_points == 0 && envelope_failures == 0 && deadbeat,
        format!(
            "stability condition false at {unstable_points}/100 points, envelope failures {envelope_failures}/10 \
             (max tail envelope / jitter bound {worst_env_ratio:.3}), w = 0 deadbeat {deadbeat}"
        ),
    )
}

// ---- 8 ----

fn criterion_8() -> Outcome {
    let y = aux_function_y(1.0, 8.0).unwrap();
    let mut monotone = true;
    for mu in [8.0, 10.0, 100.0] {
        let ys: Vec<f64> = (0..10_000)
            .map(|i| aux_function_y(-1.0 + 2.0 * i as f64 / 9999.0, mu).unwrap())
            .collect();
        monotone &= ys.windows(2).all(|w| w[1] <= w[0]);
    }
    outcome(
        (y + 0.5).abs() <= 1e-12 && monotone,
        format!("y(1, 8) = {y}, nonincreasing on grids: {monotone}"),
    )
}

// ---- 9 ----

fn sweep_increments(spec: &InterferenceSpec, k: f64, settings: &MapSettings) -> (usize, usize, f64) {
    let a = amplitude_bound(spec);
    let step = 1e-3;
    let n = ((2.0 * a + 2.0) / step).round() as usize;
    let probes: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| lipschitz_probe(spec, k, -a - 1.0 + step * i as f64, step, settings))
        .collect();
    let mut violations = 0;
    let mut precondition = 0;
    let mut worst = 0.0f64;
    for p in probes {
        match p {
            Ok(p) => {
                let inc = (p.theta1 - p.theta0).abs();
                let bound = p.bound() * step;
                worst = worst.max(inc / bound);
                violations += (inc > bound * (1.0 + 1e-2)) as usize;
            }
            Err(_) => precondition += 1,
        }
    }
    (violations, precondition, worst)
}

fn criterion_9() -> Outcome {
    let settings = MapSettings::default();
    let base = InterferenceSpec::new(vec![SpectrumLine::new(3.0, 0.3, 0.0), SpectrumLine::new(7.0, 0.15, 0.0)])
        .unwrap();
    let k3 = compute_k3(&base, &settings).unwrap();
    let spec = base.with_phases(&k3.phases).unwrap();
    let (violations, precondition, worst) = sweep_increments(&spec, 2.0 * k3.value, &settings);
    let (x_viol, x_pre, x_worst) = sweep_increments(&spec, 0.5 * k3.value, &settings);
    outcome(
        violations == 0 && precondition == 0,
        format!(
            "k = 2 K3 = {:.5}: increments above bound {violations}, mu1 <= 0 {precondition}, max inc/bound {worst:.4}; \
             exploratory k = 0.5 K3: above bound {x_viol}, mu1 <= 0 {x_pre}, max inc/bound {x_worst:.3e}",
            2.0 * k3.value
        ),
    )
}

// ---- 10 ----

const GOLDEN_CONFIG: &str = include_str!("golden/config.json");

fn run_cli(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_odelay-lab")).args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, GOLDEN_CONFIG).unwrap();
    let config = config.to_str().unwrap();
    let sweep = ["sweep", "--config", config, "--draws", "300", "--seed", "11"];
    let first = run_cli(&sweep);
    let second = run_cli(&sweep);
    let mut seq_args = sweep.to_vec();
    seq_args.push("--sequential");
    let sequential = run_cli(&seq_args);
    let simulate = run_cli(&["simulate", "--config", config]);
    let golden_sweep = first == include_bytes!("golden/sweep.csv");
    let golden_simulate = simulate == include_bytes!("golden/simulate.csv");
    outcome(
        first == second && first == sequential && golden_sweep && golden_simulate,
        format!(
            "repeat identical {}, parallel == sequential {}, sweep golden {golden_sweep}, simulate golden {golden_simulate}",
            first == second,
            first == sequential
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 10] = [
        ("saturating-integral engine", criterion_1, Duration::from_secs(5)),
        ("zero-interference closed forms", criterion_2, Duration::from_secs(10)),
        ("shift-transform identity", criterion_3, Duration::from_secs(60)),
        ("K3 optimizer soundness", criterion_4, Duration::from_secs(300)),
        ("delay containment", criterion_5, Duration::from_secs(120)),
        ("sector bounds", criterion_6, Duration::from_secs(120)),
        ("stability chain", criterion_7, Duration::from_secs(120)),
        ("auxiliary function", criterion_8, Duration::from_secs(1)),
        ("continuity sweep", criterion_9, Duration::from_secs(300)),
        ("CLI determinism and golden files", criterion_10, Duration::from_secs(30)),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let elapsed = start.elapsed();
        let pass = o.pass && elapsed <= *limit;
        failed += !pass as usize;
        println!(
            "criterion {:>2} {:<34} {}  [{:.2} s, limit {} s] {}",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs(),
            o.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
