//! Parameter studies on the closed loop: gain sweep and threshold, phase
//! sweep and sustaining window, zero-frequency-shift phase, long-run stability.
//!
//! Sweep points are independent runs and are evaluated concurrently.

use rayon::prelude::*;

use crate::analysis::{
    allan_deviation, estimate_frequency, fft_spectrum, fit_exp_envelope, frequency_series, rms,
    AllanResult, EnvelopeFit, Summary, Window,
};
use crate::error::{Error, Result};
use crate::feedback::{ChainSpec, FeedbackChain, ShiftMode};
use crate::model::SystemParams;
use crate::series::{fmt9, TimeSeries};
use crate::sim::{run, LoopMode, Mode, SimConfig};

/// Signals whose RMS is at or below this level (Gauss) count as absent.
pub const NOISE_GATE: f64 = 1e-24;

/// Fraction of a record, counted from the end, used for frequency estimates.
pub const FREQ_TAIL: f64 = 0.6;

/// Analyzed channel.
pub const SIGNAL: &str = "mx_rb";

/// A system, a chain template and a simulation template shared by all runs
/// of a study. Individual runs override gain and phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub sys: SystemParams,
    pub chain: ChainSpec,
    pub sim: SimConfig,
}

impl Experiment {
    /// Adiabatic closed-loop runs of 150 s with the phase reference on the
    /// open-loop Xe frequency.
    pub fn new(sys: SystemParams) -> Self {
        let mut chain = ChainSpec::default();
        chain.shifter.f_ref = sys.xe_open_loop_frequency();
        Experiment {
            sys,
            chain,
            sim: SimConfig::new(Mode::Adiabatic, LoopMode::Closed, 150.0),
        }
    }

    fn check(&self) -> Result<()> {
        self.sys.validate()?;
        if self.sys.field.b0.norm() == 0.0 {
            return Err(Error::param(
                "field.b0",
                "experiments need a non-zero static field",
            ));
        }
        Ok(())
    }

    /// Closed-loop record at the given gain and phase.
    pub fn run_closed(&self, gain: f64, theta: f64) -> Result<TimeSeries> {
        self.check()?;
        let mut spec = self.chain;
        spec.gain = gain;
        spec.shifter.theta = theta;
        let chain = FeedbackChain::new(spec)?;
        let cfg = SimConfig {
            loop_mode: LoopMode::Closed,
            ..self.sim
        };
        run(&self.sys, Some(&chain), &cfg)
    }

    pub fn run_open(&self) -> Result<TimeSeries> {
        self.check()?;
        let cfg = SimConfig {
            loop_mode: LoopMode::Open,
            ..self.sim
        };
        run(&self.sys, None, &cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub sustained: bool,
    /// Envelope fit; `None` when the signal is below [`NOISE_GATE`].
    pub envelope: Option<EnvelopeFit>,
    pub first_quarter_rms: f64,
    pub final_quarter_rms: f64,
}

impl Classification {
    /// Positive decay time, `INFINITY` for flat or growing envelopes and NaN
    /// when there is no signal.
    pub fn decay_time(&self) -> f64 {
        match self.envelope {
            Some(e) if e.decay_time > 0.0 => e.decay_time,
            Some(_) => f64::INFINITY,
            None => f64::NAN,
        }
    }
}

/// Sustained when the envelope does not decay faster than `1/(10 T_obs)` and
/// the final-quarter RMS keeps at least half of the first-quarter RMS.
pub fn classify_sustained(ts: &TimeSeries, sys: &SystemParams) -> Result<Classification> {
    let x = ts.require(SIGNAL)?;
    let t_obs = ts.duration();
    if t_obs < 5.0 * sys.xe.t2 {
        return Err(Error::InsufficientData(format!(
            "record of {t_obs} s is shorter than 5 T2 = {} s",
            5.0 * sys.xe.t2
        )));
    }
    let n = x.len();
    let first = rms(&x[..n / 4]);
    let last = rms(&x[n - n / 4..]);
    if rms(x) <= NOISE_GATE {
        return Ok(Classification {
            sustained: false,
            envelope: None,
            first_quarter_rms: first,
            final_quarter_rms: last,
        });
    }
    let env = fit_exp_envelope(ts, SIGNAL)?;
    let sustained = env.rate < 1.0 / (10.0 * t_obs) && last >= 0.5 * first;
    Ok(Classification {
        sustained,
        envelope: Some(env),
        first_quarter_rms: first,
        final_quarter_rms: last,
    })
}

/// Observables of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunResult {
    pub osc_freq: f64,
    /// Final-quarter amplitude of `mx_rb`, Gauss.
    pub amplitude: f64,
    pub decay_time: f64,
    pub sustained: bool,
}

/// Dominant frequency of the last [`FREQ_TAIL`] of the record.
pub fn tail_frequency(ts: &TimeSeries) -> Result<f64> {
    let n = ts.len();
    let tail = ts.slice(n - (FREQ_TAIL * n as f64) as usize, n);
    let spec = fft_spectrum(&tail, SIGNAL, Window::Rect)?;
    Ok(estimate_frequency(&tail, SIGNAL, spec.peak_freq)?.freq)
}

pub fn measure(ts: &TimeSeries, sys: &SystemParams) -> Result<RunResult> {
    let class = classify_sustained(ts, sys)?;
    let osc_freq = match (class.envelope, tail_frequency(ts)) {
        (None, _) => f64::NAN,
        (_, Ok(f)) => f,
        (_, Err(e)) if class.sustained => return Err(e),
        (_, Err(_)) => f64::NAN,
    };
    Ok(RunResult {
        osc_freq,
        amplitude: class.final_quarter_rms * std::f64::consts::SQRT_2,
        decay_time: class.decay_time(),
        sustained: class.sustained,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Name of the swept parameter, e.g. `gain` or `theta_deg`.
    pub parameter: String,
    pub params: Vec<f64>,
    pub points: Vec<RunResult>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("param,osc_freq_hz,amplitude_g,decay_time_s,sustained\n");
        for (p, r) in self.params.iter().zip(&self.points) {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt9(*p),
                fmt9(r.osc_freq),
                fmt9(r.amplitude),
                fmt9(r.decay_time),
                r.sustained
            ));
        }
        out
    }

    /// Points sorted by parameter value.
    pub fn sorted(&self) -> Vec<(f64, RunResult)> {
        let mut v: Vec<(f64, RunResult)> = self
            .params
            .iter()
            .copied()
            .zip(self.points.iter().copied())
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    fn push(&mut self, p: f64, r: RunResult) {
        self.params.push(p);
        self.points.push(r);
    }
}

fn run_points(exp: &Experiment, points: &[(f64, f64)]) -> Result<Vec<RunResult>> {
    points
        .par_iter()
        .map(|&(g, th)| measure(&exp.run_closed(g, th)?, &exp.sys))
        .collect()
}

/// `n` logarithmically spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect(),
    }
}

/// `0, step, 2 step, ...` up to and including 180 degrees.
pub fn theta_grid(step: f64) -> Vec<f64> {
    let n = (180.0 / step).floor() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSweep {
    /// Grid points followed by bisection points.
    pub sweep: SweepResult,
    /// Geometric mean of the final bracket.
    pub threshold: f64,
    /// Largest decaying and smallest sustained gain found.
    pub bracket: (f64, f64),
    /// Whether the sustained set on the grid is upward-closed in `G`.
    pub monotone: bool,
}

impl GainSweep {
    pub fn runs(&self) -> usize {
        self.sweep.params.len()
    }

    pub fn summary(&self) -> Summary {
        let mut s = Summary::new();
        s.push_f64("threshold_gain", self.threshold);
        s.push_f64("bracket_low", self.bracket.0);
        s.push_f64("bracket_high", self.bracket.1);
        s.push("monotone", self.monotone);
        s.push("runs", self.runs());
        s
    }
}

/// Runs every gain in `gains` at phase `theta`, then bisects (geometrically)
/// the transition `bisect_steps` times.
pub fn sweep_gain(
    exp: &Experiment,
    theta: f64,
    gains: &[f64],
    bisect_steps: usize,
) -> Result<GainSweep> {
    if gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(Error::param("gains", "must all be finite and > 0"));
    }
    let points: Vec<(f64, f64)> = gains.iter().map(|&g| (g, theta)).collect();
    let mut sweep = SweepResult {
        parameter: "gain".into(),
        params: gains.to_vec(),
        points: run_points(exp, &points)?,
    };
    let sorted = sweep.sorted();
    let Some(hi_idx) = sorted.iter().position(|(_, r)| r.sustained) else {
        return Err(Error::NoTransition(format!(
            "no gain in [{}, {}] sustains the oscillation",
            sorted[0].0,
            sorted[sorted.len() - 1].0
        )));
    };
    if hi_idx == 0 {
        return Err(Error::NoTransition(format!(
            "every gain down to {} sustains the oscillation",
            sorted[0].0
        )));
    }
    let monotone = sorted[hi_idx..].iter().all(|(_, r)| r.sustained);
    let mut lo = sorted[hi_idx - 1].0;
    let mut hi = sorted[hi_idx].0;
    for _ in 0..bisect_steps {
        let mid = (lo * hi).sqrt();
        let r = measure(&exp.run_closed(mid, theta)?, &exp.sys)?;
        sweep.push(mid, r);
        if r.sustained {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(GainSweep {
        sweep,
        threshold: (lo * hi).sqrt(),
        bracket: (lo, hi),
        monotone,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSweep {
    pub sweep: SweepResult,
    /// Outermost sustained phases, degrees.
    pub window: (f64, f64),
    /// `|lower + upper - 180|`, degrees.
    pub asymmetry: f64,
    /// Whether every grid phase inside the window is sustained.
    pub contiguous: bool,
}

impl PhaseSweep {
    pub fn summary(&self) -> Summary {
        let mut s = Summary::new();
        s.push_f64("window_low_deg", self.window.0);
        s.push_f64("window_high_deg", self.window.1);
        s.push_f64("asymmetry_deg", self.asymmetry);
        s.push("contiguous", self.contiguous);
        s
    }

    pub fn contains(&self, other: &PhaseSweep) -> bool {
        self.window.0 <= other.window.0 && self.window.1 >= other.window.1
    }
}

pub fn sweep_phase(exp: &Experiment, gain: f64, thetas: &[f64]) -> Result<PhaseSweep> {
    let points: Vec<(f64, f64)> = thetas.iter().map(|&th| (gain, th)).collect();
    let sweep = SweepResult {
        parameter: "theta_deg".into(),
        params: thetas.to_vec(),
        points: run_points(exp, &points)?,
    };
    let sorted = sweep.sorted();
    let inside: Vec<usize> = (0..sorted.len())
        .filter(|&i| sorted[i].1.sustained)
        .collect();
    let (Some(&first), Some(&last)) = (inside.first(), inside.last()) else {
        return Err(Error::NoSustained(format!(
            "no phase sustains the oscillation at G = {gain}"
        )));
    };
    let window = (sorted[first].0, sorted[last].0);
    Ok(PhaseSweep {
        contiguous: sorted[first..=last].iter().all(|(_, r)| r.sustained),
        asymmetry: (window.0 + window.1 - 180.0).abs(),
        window,
        sweep,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Zfs {
    /// Phase of zero frequency shift, degrees.
    pub theta: f64,
    /// Local `d nu / d theta` across the coarse bracket, Hz per degree.
    pub slope: f64,
    /// Measured open-loop reference frequency, Hz.
    pub f_open: f64,
    /// Final phase bracket, degrees.
    pub bracket: (f64, f64),
    /// `nu_closed - nu_open` at the final bracket ends, Hz.
    pub residual: (f64, f64),
    /// Whether the coarse shift is monotone within 5 degrees of the ZFS.
    pub monotone: bool,
    /// Coarse phase sweep with shifts relative to `f_open`.
    pub coarse: SweepResult,
    pub bisection_runs: usize,
}

impl Zfs {
    pub fn summary(&self) -> Summary {
        let mut s = Summary::new();
        s.push_f64("theta_zfs_deg", self.theta);
        s.push_f64("slope_hz_per_deg", self.slope);
        s.push_f64("f_open_hz", self.f_open);
        s.push_f64("bracket_low_deg", self.bracket.0);
        s.push_f64("bracket_high_deg", self.bracket.1);
        s.push("monotone", self.monotone);
        s.push("bisection_runs", self.bisection_runs);
        s
    }
}

/// Frequency of a free decay over the first `2 T2` (at most the configured
/// duration), fitted over the whole record.
pub fn open_loop_frequency(exp: &Experiment) -> Result<f64> {
    let mut e = exp.clone();
    e.sim.duration = e.sim.duration.min(2.0 * e.sys.xe.t2);
    let ts = e.run_open()?;
    let spec = fft_spectrum(&ts, SIGNAL, Window::Rect)?;
    Ok(estimate_frequency(&ts, SIGNAL, spec.peak_freq)?.freq)
}

/// Frequency shift below which the bisection stops, Hz.
pub const ZFS_FREQ_TOL: f64 = 10e-9;
/// Phase bracket below which the bisection stops, degrees.
pub const ZFS_THETA_TOL: f64 = 0.05;

/// Zero-frequency-shift phase at gain `gain`.
///
/// The open-loop frequency is measured first. A coarse sweep over `thetas`
/// locates a sign change of the shift between two adjacent sustained phases
/// (the one nearest 90 degrees if there are several), which is then bisected
/// with the quadrature shifter.
pub fn find_zfs(exp: &Experiment, gain: f64, thetas: &[f64]) -> Result<Zfs> {
    let mut exp = exp.clone();
    exp.chain.shifter.mode = ShiftMode::Quadrature;
    let f_open = open_loop_frequency(&exp)?;
    let phase = sweep_phase(&exp, gain, thetas)?;
    let coarse = SweepResult {
        parameter: "theta_deg".into(),
        params: phase.sweep.params.clone(),
        points: phase
            .sweep
            .points
            .iter()
            .map(|r| RunResult {
                osc_freq: r.osc_freq - f_open,
                ..*r
            })
            .collect(),
    };
    let sorted: Vec<(f64, RunResult)> = coarse
        .sorted()
        .into_iter()
        .filter(|(_, r)| r.sustained && r.osc_freq.is_finite())
        .collect();
    let pair = sorted
        .windows(2)
        .filter(|w| w[0].1.osc_freq.signum() != w[1].1.osc_freq.signum())
        .min_by(|a, b| {
            let da = ((a[0].0 + a[1].0) / 2.0 - 90.0).abs();
            let db = ((b[0].0 + b[1].0) / 2.0 - 90.0).abs();
            da.total_cmp(&db)
        })
        .ok_or_else(|| {
            Error::NoSignChange(format!(
                "frequency shift keeps one sign across the sustained phases at G = {gain}"
            ))
        })?;
    let (mut lo, mut hi) = (pair[0].0, pair[1].0);
    let (mut d_lo, mut d_hi) = (pair[0].1.osc_freq, pair[1].1.osc_freq);
    let slope = (d_hi - d_lo) / (hi - lo);

    let mut runs = 0;
    let mut exact = None;
    while hi - lo > ZFS_THETA_TOL {
        let mid = 0.5 * (lo + hi);
        let ts = exp.run_closed(gain, mid)?;
        runs += 1;
        let d = tail_frequency(&ts)? - f_open;
        if d.abs() < ZFS_FREQ_TOL {
            exact = Some(mid);
            break;
        }
        if d.signum() == d_lo.signum() {
            lo = mid;
            d_lo = d;
        } else {
            hi = mid;
            d_hi = d;
        }
    }
    let theta = exact.unwrap_or_else(|| lo + (hi - lo) * d_lo / (d_lo - d_hi));

    let near: Vec<f64> = sorted
        .iter()
        .filter(|(th, _)| (th - theta).abs() <= 5.0 + 1e-9)
        .map(|(_, r)| r.osc_freq)
        .collect();
    let monotone = near.windows(2).all(|w| (w[1] - w[0]) * slope > 0.0);

    Ok(Zfs {
        theta,
        slope,
        f_open,
        bracket: (lo, hi),
        residual: (d_lo, d_hi),
        monotone,
        coarse,
        bisection_runs: runs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityOptions {
    pub duration: f64,
    /// Frequency estimation window, s.
    pub window_s: f64,
    /// Initial part of the record discarded before tracking, s.
    pub settle_s: f64,
    /// Loop samples per recorded sample.
    pub decimation: usize,
    pub taus: Option<Vec<f64>>,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions {
            duration: 4000.0,
            window_s: 1.0,
            settle_s: 400.0,
            decimation: 5,
            taus: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stability {
    pub allan: AllanResult,
    /// Windowed frequency track, channel `freq_hz`.
    pub freq: TimeSeries,
    pub mean_freq: f64,
}

impl Stability {
    pub fn summary(&self) -> Summary {
        let mut s = Summary::new();
        s.push_f64("mean_freq_hz", self.mean_freq);
        s.push("windows", self.freq.len());
        if let (Some(t), Some(a)) = (self.allan.taus.last(), self.allan.adev.last()) {
            s.push_f64("longest_tau_s", *t);
            s.push_f64("adev_at_longest_tau_hz", *a);
        }
        s
    }
}

/// Closed-loop run with the experiment's own chain (gain, phase, noise and
/// drift), tracked in windows and reduced to an Allan deviation.
pub fn long_run_stability(exp: &Experiment, opts: &StabilityOptions) -> Result<Stability> {
    exp.check()?;
    let chain = FeedbackChain::new(exp.chain)?;
    let cfg = SimConfig {
        loop_mode: LoopMode::Closed,
        duration: opts.duration + opts.settle_s,
        record_decimation: opts.decimation,
        ..exp.sim
    };
    let ts = run(&exp.sys, Some(&chain), &cfg)?;
    let skip = (opts.settle_s * ts.fs).round() as usize;
    let ts = ts.slice(skip, ts.len());
    let head = ts.slice(0, ((10.0 * opts.window_s) * ts.fs) as usize);
    let guess = fft_spectrum(&head, SIGNAL, Window::Rect)?.peak_freq;
    let freq = frequency_series(&ts, SIGNAL, opts.window_s, guess)?;
    let f = freq.require("freq_hz")?;
    let mean_freq = f.iter().sum::<f64>() / f.len() as f64;
    let allan = allan_deviation(&freq, "freq_hz", opts.taus.as_deref())?;
    Ok(Stability {
        allan,
        freq,
        mean_freq,
    })
}
