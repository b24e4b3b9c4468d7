//! Acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAIL` are evaluated exactly like the others and
//! reported as FAIL; they do not fail the test binary. Any other failure does,
//! and so does a known failure that starts passing (the list is then stale).

use std::f64::consts::PI;
use std::time::Instant;

use spinosc::analysis::{
    allan_deviation_samples, estimate_frequency, fft_spectrum, field_resolution, fit_exp_envelope,
    rms, Window,
};
use spinosc::experiments::{
    find_zfs, log_space, sweep_gain, sweep_phase, tail_frequency, theta_grid, Experiment,
};
use spinosc::feedback::FeedbackChain;
use spinosc::model::{threshold_gain, SpinState, SystemParams, Vec3, TESLA_PER_GAUSS};
use spinosc::series::TimeSeries;
use spinosc::sim::{self, rk4_step, LoopMode, Mode, SimConfig, FULL_DT};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

// Pinned tolerances.
const C1_FREQ: f64 = 35.34;
const C1_TOL: f64 = 0.05;
const C1_WALL_S: f64 = 60.0;
const C2_REL: f64 = 0.01;
const C3_RANGE: (f64, f64) = (0.5, 2.0);
const C3_MAX_RUNS: usize = 12;
const C3_WALL_S: f64 = 300.0;
const C4_REL: f64 = 0.01;
const C5_ASYM_DEG: f64 = 10.0;
const C6_RANGE: (f64, f64) = (80.0, 90.0);
const C6_SLOPE: f64 = 1e-4;
const C6_SLOPE_FACTOR: f64 = 5.0;
const C7_LORENTZ_REL: f64 = 0.05;
const C7_FOURIER_FACTOR: f64 = 2.0;
const C7_RATIO: f64 = 75.0;
const C7_RATIO_REL: f64 = 0.10;
const C8_FT: f64 = 1.11;
const C8_TOL_FT: f64 = 0.01;
const C9_SLOPE_TOL: f64 = 0.1;
const C10_RATIO: f64 = 16.0;
const C10_RATIO_TOL: f64 = 3.0;
const C10_NORM: f64 = 1e-10;
const C10_AGREE: f64 = 1e-3;

/// Criteria that fail at the mandated parameters; see the README.
const KNOWN_FAIL: &[u32] = &[1, 6];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn c1_larmor() -> Outcome {
    let start = Instant::now();
    let sys = SystemParams::default();
    let cfg = SimConfig::new(Mode::Full, LoopMode::Open, 20.0);
    let ts = sim::run(&sys, None, &cfg).unwrap();
    let guess = fft_spectrum(&ts, "mx_rb", Window::Rect).unwrap().peak_freq;
    let f = estimate_frequency(&ts, "mx_rb", guess).unwrap().freq;
    let wall = start.elapsed().as_secs_f64();
    let bare = sys.xe.gamma * sys.field.b0.z;
    outcome(
        within(f, C1_FREQ, C1_TOL) && wall < C1_WALL_S,
        format!(
            "f = {f:.4} Hz (target {C1_FREQ} +/- {C1_TOL}; bare gamma B0 = {bare:.4}, Rb field adds {:.4}), wall {wall:.1} s",
            f - bare
        ),
    )
}

fn c2_decay() -> Outcome {
    let sys = SystemParams::default();
    let cfg = SimConfig::new(Mode::Adiabatic, LoopMode::Open, 60.0);
    let ts = sim::run(&sys, None, &cfg).unwrap();
    let fit = fit_exp_envelope(&ts, "mx_rb").unwrap();
    let rel = fit.decay_time / sys.xe.t2 - 1.0;
    outcome(
        rel.abs() <= C2_REL && !fit.growing,
        format!(
            "T = {:.4} s vs T2 = {} s ({:+.3}%)",
            fit.decay_time,
            sys.xe.t2,
            100.0 * rel
        ),
    )
}

fn c3_threshold() -> Outcome {
    let start = Instant::now();
    let exp = Experiment::new(SystemParams::default());
    let formula = threshold_gain(&exp.sys).unwrap();
    let r = sweep_gain(&exp, 90.0, &log_space(10.0, 1e4, 4), 8).unwrap();
    let wall = start.elapsed().as_secs_f64();
    let ratio = r.threshold / formula;
    outcome(
        (C3_RANGE.0..=C3_RANGE.1).contains(&ratio) && r.runs() <= C3_MAX_RUNS && wall < C3_WALL_S,
        format!(
            "G_emp = {:.0}, formula {formula:.0}, ratio {ratio:.3}, {} runs, wall {wall:.1} s",
            r.threshold,
            r.runs()
        ),
    )
}

fn c4_self_sustain() -> Outcome {
    let mut exp = Experiment::new(SystemParams::default());
    exp.sim.duration = 300.0;
    let g = 2.0 * threshold_gain(&exp.sys).unwrap();
    let ts = exp.run_closed(g, 90.0).unwrap();
    let x = ts.channel("mx_rb").unwrap();
    let n = x.len() / 4;
    let (q2, q4) = (rms(&x[n..2 * n]), rms(&x[3 * n..]));
    let rel = q4 / q2 - 1.0;
    outcome(
        rel.abs() <= C4_REL,
        format!("G = {g:.0}: q4/q2 - 1 = {:+.3}%", 100.0 * rel),
    )
}

fn c5_window() -> Outcome {
    let exp = Experiment::new(SystemParams::default());
    let g = 2.0 * threshold_gain(&exp.sys).unwrap();
    let thetas = theta_grid(5.0);
    let (w1, w2) = (
        sweep_phase(&exp, g, &thetas).unwrap(),
        sweep_phase(&exp, 2.0 * g, &thetas).unwrap(),
    );
    let pass = w1.contiguous
        && w2.contiguous
        && w1.asymmetry <= C5_ASYM_DEG
        && w2.asymmetry <= C5_ASYM_DEG
        && w2.contains(&w1);
    outcome(
        pass,
        format!(
            "G = {g:.0}: [{}, {}] asym {}; 2G: [{}, {}] asym {}; contiguous {}/{}; 2G contains G {}",
            w1.window.0,
            w1.window.1,
            w1.asymmetry,
            w2.window.0,
            w2.window.1,
            w2.asymmetry,
            w1.contiguous,
            w2.contiguous,
            w2.contains(&w1)
        ),
    )
}

fn c6_zfs() -> Outcome {
    let exp = Experiment::new(SystemParams::default());
    let thetas = theta_grid(5.0);
    let describe = |g: f64| match find_zfs(&exp, g, &thetas) {
        Ok(z) => (
            Some(z.theta),
            Some(z.slope),
            format!(
                "G = {g:.0}: theta_zfs {:.2}, slope {:.3e}",
                z.theta, z.slope
            ),
        ),
        Err(e) => (None, None, format!("G = {g:.0}: {e}")),
    };
    let (t1, s1, d1) = describe(1000.0);
    let (t2, s2, d2) = describe(2000.0);
    let (_, _, d4) = describe(4000.0);
    let in_range = t1.is_some_and(|t| (C6_RANGE.0..C6_RANGE.1).contains(&t));
    let decreasing = matches!((t1, t2), (Some(a), Some(b)) if b < a);
    let slope = s1.or(s2).unwrap_or(f64::NAN).abs();
    let slope_ok = (C6_SLOPE / C6_SLOPE_FACTOR..=C6_SLOPE * C6_SLOPE_FACTOR).contains(&slope);
    outcome(
        in_range && decreasing && slope_ok,
        format!(
            "{d1}; {d2}; {d4}; in [80, 90) {in_range}, decreasing in G {decreasing}, |slope| {slope:.3e} ok {slope_ok}"
        ),
    )
}

fn tone(fs: f64, n: usize, f: f64, decay: f64) -> TimeSeries {
    let x = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            (-t / decay).exp() * (2.0 * PI * f * t + 0.3).cos()
        })
        .collect();
    TimeSeries::from_samples(fs, "x", x).unwrap()
}

fn fwhm(ts: &TimeSeries) -> f64 {
    fft_spectrum(ts, "x", Window::Rect).unwrap().fwhm
}

fn c7_linewidth() -> Outcome {
    let lorentz = fwhm(&tone(200.0, 40_000, 35.34, 10.0));
    let lorentz_rel = lorentz * PI * 10.0 - 1.0;

    let t_obs = 2000.0;
    let flat = fwhm(&tone(100.0, 200_000, 35.34, f64::INFINITY));
    let limit = 0.886 / t_obs;

    let (fs, n) = (10.0, 75_000);
    let ratio = fwhm(&tone(fs, n, 2.5, 10.0)) / fwhm(&tone(fs, n, 2.5, 750.0));

    let pass = lorentz_rel.abs() <= C7_LORENTZ_REL
        && flat <= C7_FOURIER_FACTOR * limit
        && within(ratio, C7_RATIO, C7_RATIO * C7_RATIO_REL);
    outcome(
        pass,
        format!(
            "T2 = 10 s: {:.4} mHz ({:+.2}%); undamped 2000 s: {:.4} mHz vs limit {:.4} mHz; ratio {ratio:.2}",
            1e3 * lorentz,
            100.0 * lorentz_rel,
            1e3 * flat,
            1e3 * limit
        ),
    )
}

fn c8_field() -> Outcome {
    let gamma = 11.78e6 * TESLA_PER_GAUSS;
    let ft = field_resolution(13.1e-9, gamma).unwrap().tesla * 1e15;
    outcome(within(ft, C8_FT, C8_TOL_FT), format!("{ft:.4} fT"))
}

fn c9_allan() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let normal = Normal::new(0.0, 1e-3).unwrap();
    let y: Vec<f64> = (0..200_000).map(|_| normal.sample(&mut rng)).collect();
    let a = allan_deviation_samples(&y, 1.0, None).unwrap();
    let slope = a.log_slope(1.0, 128.0).unwrap();
    let flat = allan_deviation_samples(&vec![35.4; 10_000], 1.0, None).unwrap();
    let zero = flat.adev.iter().all(|&v| v == 0.0);
    outcome(
        within(slope, -0.5, C9_SLOPE_TOL) && zero,
        format!("white FM slope over tau 1..128 s: {slope:.4}; constant series all zero {zero}"),
    )
}

fn c10_numerics() -> Outcome {
    // Order: Xe error after one precession period against the exact rotation.
    let mut free = SystemParams::default();
    free.coupling.kappa = 0.0;
    for s in [&mut free.rb, &mut free.xe] {
        s.t1 = f64::INFINITY;
        s.t2 = f64::INFINITY;
    }
    let period = 1.0 / (free.xe.gamma * free.field.b0.z);
    let err = |steps: usize| {
        let m0 = Vec3::X * free.xe.m0;
        let mut st = SpinState {
            m_rb: Vec3::ZERO,
            m_xe: m0,
            t: 0.0,
        };
        for _ in 0..steps {
            st = rk4_step(&st, &free, 0.0, period / steps as f64).unwrap();
        }
        (st.m_xe - m0).norm() / free.xe.m0
    };
    let ratio = err(50) / err(100);

    // Norm per step at the full-mode step, coupled, no relaxation or drive.
    let mut coupled = SystemParams::default();
    for s in [&mut coupled.rb, &mut coupled.xe] {
        s.t1 = f64::INFINITY;
        s.t2 = f64::INFINITY;
    }
    let mut st = SpinState {
        m_rb: Vec3::new(0.6, 0.0, 0.8) * coupled.rb.m0,
        m_xe: Vec3::X * coupled.xe.m0,
        t: 0.0,
    };
    let mut worst: f64 = 0.0;
    for _ in 0..20_000 {
        let next = rk4_step(&st, &coupled, 0.0, FULL_DT).unwrap();
        worst = worst
            .max((next.m_rb.norm() / st.m_rb.norm() - 1.0).abs())
            .max((next.m_xe.norm() / st.m_xe.norm() - 1.0).abs());
        st = next;
    }

    // Closed-loop frequency, adiabatic against full.
    let sys = SystemParams::default();
    let exp = Experiment::new(sys);
    let mut spec = exp.chain;
    spec.gain = 2.0 * threshold_gain(&sys).unwrap();
    let chain = FeedbackChain::new(spec).unwrap();
    let freq = |mode: Mode| {
        let cfg = SimConfig::new(mode, LoopMode::Closed, 20.0);
        tail_frequency(&sim::run(&sys, Some(&chain), &cfg).unwrap()).unwrap()
    };
    let (fa, ff) = (freq(Mode::Adiabatic), freq(Mode::Full));
    let agree = (fa / ff - 1.0).abs();

    outcome(
        within(ratio, C10_RATIO, C10_RATIO_TOL) && worst <= C10_NORM && agree <= C10_AGREE,
        format!("error ratio {ratio:.2}; max |M| drift per step {worst:.2e}; closed-loop adiabatic/full - 1 = {agree:.2e}"),
    )
}

fn main() {
    // Respect `cargo test -- --list` and name filters minimally.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    type Check = (u32, &'static str, fn() -> Outcome);
    let criteria: [Check; 10] = [
        (1, "larmor consistency", c1_larmor),
        (2, "open-loop decay", c2_decay),
        (3, "threshold gain", c3_threshold),
        (4, "self-sustaining oscillation", c4_self_sustain),
        (5, "phase window", c5_window),
        (6, "zero-frequency-shift phase", c6_zfs),
        (7, "linewidth machinery", c7_linewidth),
        (8, "field conversion", c8_field),
        (9, "allan machinery", c9_allan),
        (10, "numerics", c10_numerics),
    ];
    let mut unexpected = Vec::new();
    for (id, name, check) in criteria {
        let start = Instant::now();
        let o = check();
        let known = KNOWN_FAIL.contains(&id);
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = match (o.pass, known) {
            (false, true) => " [known]",
            (true, true) => " [listed as known failure]",
            _ => "",
        };
        println!(
            "{tag} criterion {id:>2} {name}: {} ({:.1} s){note}",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if o.pass == known {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
