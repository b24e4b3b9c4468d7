//! Command-line front end: flat configuration files, experiment dispatch and
//! run manifests.
//!
//! Configuration is plain text with one `section.key = value` per line and `#`
//! comments. Every key has a default, unknown keys are errors, and
//! [`Config::to_text`] writes a file that parses back to the same value.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use crate::analysis::{
    allan_deviation, estimate_frequency, fft_spectrum, field_resolution, fit_exp_envelope,
    frequency_series, welch_psd, Summary, Window,
};
use crate::error::{Error, Result};
use crate::experiments::{
    classify_sustained, find_zfs, log_space, long_run_stability, sweep_gain, sweep_phase,
    tail_frequency, Experiment, StabilityOptions,
};
use crate::feedback::{ChainSpec, FeedbackChain, ShiftMode};
use crate::model::{threshold_gain, Pump, SystemParams};
use crate::series::TimeSeries;
use crate::sim::{self, LoopMode, Mode, Probe, SimConfig, ADIABATIC_DT, FULL_DT};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SPINOSC_OUT";
const DEFAULT_OUT_DIR: &str = "spinosc-out";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub duration: f64,
    pub gain_min: f64,
    pub gain_max: f64,
    pub gain_points: usize,
    pub bisect_steps: usize,
    pub theta_min: f64,
    pub theta_max: f64,
    pub theta_step: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            duration: 150.0,
            gain_min: 10.0,
            gain_max: 1e4,
            gain_points: 4,
            bisect_steps: 8,
            theta_min: 0.0,
            theta_max: 180.0,
            theta_step: 5.0,
        }
    }
}

impl SweepSettings {
    pub fn thetas(&self) -> Vec<f64> {
        let n = ((self.theta_max - self.theta_min) / self.theta_step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| self.theta_min + i as f64 * self.theta_step)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::param("sweep.duration", "must be > 0"));
        }
        if !(self.gain_min > 0.0 && self.gain_max > self.gain_min) {
            return Err(Error::param(
                "sweep.gain_max",
                "need 0 < gain_min < gain_max",
            ));
        }
        if self.gain_points < 2 {
            return Err(Error::param("sweep.gain_points", "must be >= 2"));
        }
        if !(self.theta_step > 0.0) {
            return Err(Error::param("sweep.theta_step", "must be > 0"));
        }
        if !(0.0..360.0).contains(&self.theta_min)
            || !(self.theta_min..360.0).contains(&self.theta_max)
        {
            return Err(Error::param(
                "sweep.theta_max",
                "need 0 <= theta_min <= theta_max < 360",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSettings {
    pub channel: String,
    pub window: Window,
    pub segment_length: usize,
    pub overlap: f64,
    /// `None`: take the spectral peak.
    pub f_guess: Option<f64>,
    /// Frequency-track window for the Allan deviation, s.
    pub track_window: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            channel: "mx_rb".into(),
            window: Window::Rect,
            segment_length: 4096,
            overlap: 0.5,
            f_guess: None,
            track_window: 1.0,
        }
    }
}

/// Every tunable of the tool.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub sys: SystemParams,
    pub chain: ChainSpec,
    /// `None`: phase reference on the open-loop Xe frequency.
    pub f_ref: Option<f64>,
    pub sim: SimConfig,
    /// `None`: default inner step for the mode.
    pub dt: Option<f64>,
    pub sweep: SweepSettings,
    pub stability: StabilityOptions,
    pub analysis: AnalysisSettings,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            sys: SystemParams::default(),
            chain: ChainSpec::default(),
            f_ref: None,
            sim: SimConfig::new(Mode::Adiabatic, LoopMode::Open, 60.0),
            dt: None,
            sweep: SweepSettings::default(),
            stability: StabilityOptions::default(),
            analysis: AnalysisSettings::default(),
        }
    }
}

fn num(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| Error::param(key, format!("`{v}` is not a number")))
}

fn count(key: &str, v: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| Error::param(key, format!("`{v}` is not a non-negative integer")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    v.parse::<bool>()
        .map_err(|_| Error::param(key, format!("`{v}` is not true|false")))
}

fn auto_num(key: &str, v: &str) -> Result<Option<f64>> {
    if v == "auto" {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn opt_to_text<T: std::fmt::Display>(v: Option<T>, none: &str) -> String {
    v.map_or_else(|| none.to_string(), |x| x.to_string())
}

/// Names an enum error after the config key that produced it.
fn keyed<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidParameter { reason, .. } => Error::param(key, reason),
        other => other,
    })
}

impl Config {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        let s = &mut self.sys;
        let c = &mut self.chain;
        match key {
            "rb.gamma" => s.rb.gamma = num(key, v)?,
            "rb.t1" => s.rb.t1 = num(key, v)?,
            "rb.t2" => s.rb.t2 = num(key, v)?,
            "rb.m0" => s.rb.m0 = num(key, v)?,
            "rb.pump" => s.pump = keyed(key, v.parse::<Pump>())?,
            "xe.gamma" => s.xe.gamma = num(key, v)?,
            "xe.t1" => s.xe.t1 = num(key, v)?,
            "xe.t2" => s.xe.t2 = num(key, v)?,
            "xe.m0" => s.xe.m0 = num(key, v)?,
            "coupling.kappa" => s.coupling.kappa = num(key, v)?,
            "coupling.q" => s.coupling.q = num(key, v)?,
            "field.b0_x" => s.field.b0.x = num(key, v)?,
            "field.b0_y" => s.field.b0.y = num(key, v)?,
            "field.b0_z" => s.field.b0.z = num(key, v)?,
            "field.drive_x" => s.field.drive_axis.x = num(key, v)?,
            "field.drive_y" => s.field.drive_axis.y = num(key, v)?,
            "field.drive_z" => s.field.drive_axis.z = num(key, v)?,
            "feedback.f_center" => c.bandpass.f_center = num(key, v)?,
            "feedback.q_factor" => c.bandpass.q_factor = num(key, v)?,
            "feedback.theta" => c.shifter.theta = num(key, v)?,
            "feedback.mode" => c.shifter.mode = keyed(key, v.parse::<ShiftMode>())?,
            "feedback.f_ref" => self.f_ref = auto_num(key, v)?,
            "feedback.gain" => c.gain = num(key, v)?,
            "feedback.saturation" => {
                c.saturation = if v == "none" {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "feedback.noise_std" => c.noise_std = num(key, v)?,
            "feedback.compensate" => c.compensate = flag(key, v)?,
            "feedback.theta_drift" => c.theta_drift = num(key, v)?,
            "sim.dt" => self.dt = auto_num(key, v)?,
            "sim.fs_loop" => self.sim.fs_loop = num(key, v)?,
            "sim.duration" => self.sim.duration = num(key, v)?,
            "sim.mode" => self.sim.mode = keyed(key, v.parse::<Mode>())?,
            "sim.loop" => self.sim.loop_mode = keyed(key, v.parse::<LoopMode>())?,
            "sim.initial_tip_xe" => self.sim.initial_tip_xe = num(key, v)?,
            "sim.initial_tip_rb" => self.sim.initial_tip_rb = num(key, v)?,
            "sim.record_decimation" => self.sim.record_decimation = count(key, v)?,
            "sim.seed" => {
                self.sim.noise_seed = if v == "none" {
                    None
                } else {
                    Some(
                        v.parse::<u64>()
                            .map_err(|_| Error::param(key, format!("`{v}` is not a seed")))?,
                    )
                }
            }
            "sim.probe" => {
                self.sim.probe = match v {
                    "calibrated" => Probe::Calibrated,
                    "raw" => Probe::Raw,
                    _ => Probe::Scale(num(key, v)?),
                }
            }
            "sweep.duration" => self.sweep.duration = num(key, v)?,
            "sweep.gain_min" => self.sweep.gain_min = num(key, v)?,
            "sweep.gain_max" => self.sweep.gain_max = num(key, v)?,
            "sweep.gain_points" => self.sweep.gain_points = count(key, v)?,
            "sweep.bisect_steps" => self.sweep.bisect_steps = count(key, v)?,
            "sweep.theta_min" => self.sweep.theta_min = num(key, v)?,
            "sweep.theta_max" => self.sweep.theta_max = num(key, v)?,
            "sweep.theta_step" => self.sweep.theta_step = num(key, v)?,
            "stability.duration" => self.stability.duration = num(key, v)?,
            "stability.window" => self.stability.window_s = num(key, v)?,
            "stability.settle" => self.stability.settle_s = num(key, v)?,
            "stability.decimation" => self.stability.decimation = count(key, v)?,
            "analysis.channel" => self.analysis.channel = v.to_string(),
            "analysis.window" => self.analysis.window = keyed(key, v.parse::<Window>())?,
            "analysis.segment_length" => self.analysis.segment_length = count(key, v)?,
            "analysis.overlap" => self.analysis.overlap = num(key, v)?,
            "analysis.f_guess" => self.analysis.f_guess = auto_num(key, v)?,
            "analysis.track_window" => self.analysis.track_window = num(key, v)?,
            _ => return Err(Error::param(key, "unknown key")),
        }
        Ok(())
    }

    /// Parses configuration text; `origin` names the source in errors.
    pub fn parse(text: &str, origin: &str) -> Result<Config> {
        let mut cfg = Config::default();
        let mut lines = std::collections::HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (key, value) = line.split_once('=').ok_or_else(|| {
                parse_err(format!("expected `section.key = value`, found `{line}`"))
            })?;
            cfg.set(key.trim(), value)
                .map_err(|e| parse_err(e.to_string()))?;
            lines.insert(key.trim().to_string(), i + 1);
        }
        cfg.validate().map_err(|e| match &e {
            Error::InvalidParameter { name, .. } if lines.contains_key(name.as_str()) => {
                Error::Parse {
                    path: origin.to_string(),
                    line: lines[name.as_str()],
                    msg: e.to_string(),
                }
            }
            _ => e,
        })?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let s = &self.sys;
        let c = &self.chain;
        let probe = match self.sim.probe {
            Probe::Calibrated => "calibrated".to_string(),
            Probe::Raw => "raw".to_string(),
            Probe::Scale(x) => x.to_string(),
        };
        let pairs: Vec<(&str, String)> = vec![
            ("rb.gamma", s.rb.gamma.to_string()),
            ("rb.t1", s.rb.t1.to_string()),
            ("rb.t2", s.rb.t2.to_string()),
            ("rb.m0", s.rb.m0.to_string()),
            ("rb.pump", s.pump.to_string()),
            ("xe.gamma", s.xe.gamma.to_string()),
            ("xe.t1", s.xe.t1.to_string()),
            ("xe.t2", s.xe.t2.to_string()),
            ("xe.m0", s.xe.m0.to_string()),
            ("coupling.kappa", s.coupling.kappa.to_string()),
            ("coupling.q", s.coupling.q.to_string()),
            ("field.b0_x", s.field.b0.x.to_string()),
            ("field.b0_y", s.field.b0.y.to_string()),
            ("field.b0_z", s.field.b0.z.to_string()),
            ("field.drive_x", s.field.drive_axis.x.to_string()),
            ("field.drive_y", s.field.drive_axis.y.to_string()),
            ("field.drive_z", s.field.drive_axis.z.to_string()),
            ("feedback.f_center", c.bandpass.f_center.to_string()),
            ("feedback.q_factor", c.bandpass.q_factor.to_string()),
            ("feedback.theta", c.shifter.theta.to_string()),
            ("feedback.mode", c.shifter.mode.to_string()),
            ("feedback.f_ref", opt_to_text(self.f_ref, "auto")),
            ("feedback.gain", c.gain.to_string()),
            ("feedback.saturation", opt_to_text(c.saturation, "none")),
            ("feedback.noise_std", c.noise_std.to_string()),
            ("feedback.compensate", c.compensate.to_string()),
            ("feedback.theta_drift", c.theta_drift.to_string()),
            ("sim.dt", opt_to_text(self.dt, "auto")),
            ("sim.fs_loop", self.sim.fs_loop.to_string()),
            ("sim.duration", self.sim.duration.to_string()),
            ("sim.mode", self.sim.mode.to_string()),
            ("sim.loop", self.sim.loop_mode.to_string()),
            ("sim.initial_tip_xe", self.sim.initial_tip_xe.to_string()),
            ("sim.initial_tip_rb", self.sim.initial_tip_rb.to_string()),
            (
                "sim.record_decimation",
                self.sim.record_decimation.to_string(),
            ),
            ("sim.seed", opt_to_text(self.sim.noise_seed, "none")),
            ("sim.probe", probe),
            ("sweep.duration", self.sweep.duration.to_string()),
            ("sweep.gain_min", self.sweep.gain_min.to_string()),
            ("sweep.gain_max", self.sweep.gain_max.to_string()),
            ("sweep.gain_points", self.sweep.gain_points.to_string()),
            ("sweep.bisect_steps", self.sweep.bisect_steps.to_string()),
            ("sweep.theta_min", self.sweep.theta_min.to_string()),
            ("sweep.theta_max", self.sweep.theta_max.to_string()),
            ("sweep.theta_step", self.sweep.theta_step.to_string()),
            ("stability.duration", self.stability.duration.to_string()),
            ("stability.window", self.stability.window_s.to_string()),
            ("stability.settle", self.stability.settle_s.to_string()),
            (
                "stability.decimation",
                self.stability.decimation.to_string(),
            ),
            ("analysis.channel", self.analysis.channel.clone()),
            ("analysis.window", self.analysis.window.to_string()),
            (
                "analysis.segment_length",
                self.analysis.segment_length.to_string(),
            ),
            ("analysis.overlap", self.analysis.overlap.to_string()),
            (
                "analysis.f_guess",
                opt_to_text(self.analysis.f_guess, "auto"),
            ),
            (
                "analysis.track_window",
                self.analysis.track_window.to_string(),
            ),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Checks every invariant; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        self.sys.validate()?;
        self.chain_spec().validate()?;
        self.sim_config().validate()?;
        self.sweep.validate()?;
        if !(self.stability.duration > 0.0) {
            return Err(Error::param("stability.duration", "must be > 0"));
        }
        if !(self.stability.window_s > 0.0) {
            return Err(Error::param("stability.window", "must be > 0"));
        }
        if !(self.stability.settle_s >= 0.0) {
            return Err(Error::param("stability.settle", "must be >= 0"));
        }
        if self.stability.decimation == 0 {
            return Err(Error::param("stability.decimation", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.analysis.overlap) {
            return Err(Error::param("analysis.overlap", "must lie in [0, 1)"));
        }
        if !(self.analysis.track_window > 0.0) {
            return Err(Error::param("analysis.track_window", "must be > 0"));
        }
        Ok(())
    }

    /// Feedback chain with the loop rate and phase reference resolved.
    pub fn chain_spec(&self) -> ChainSpec {
        let mut c = self.chain;
        c.bandpass.fs = self.sim.fs_loop;
        c.shifter.f_ref = self
            .f_ref
            .unwrap_or_else(|| self.sys.xe_open_loop_frequency());
        c
    }

    /// Simulation settings with the inner step resolved.
    pub fn sim_config(&self) -> SimConfig {
        let mut s = self.sim;
        s.dt = self.dt.unwrap_or(match s.mode {
            Mode::Full => FULL_DT,
            Mode::Adiabatic => ADIABATIC_DT,
        });
        s
    }

    pub fn experiment(&self) -> Experiment {
        let mut sim = self.sim_config();
        sim.duration = self.sweep.duration;
        Experiment {
            sys: self.sys,
            chain: self.chain_spec(),
            sim,
        }
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path)?;
    Config::parse(&text, &path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    Adiabatic,
}

#[derive(Debug, Clone, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Integrate one run and write its time series.
    Simulate,
    /// Locate the self-oscillation threshold in gain.
    SweepGain,
    /// Map frequency and amplitude against the feedback phase.
    SweepPhase,
    /// Bisect the zero-frequency-shift phase.
    FindZfs,
    /// Long closed-loop run reduced to an Allan deviation.
    Stability,
    /// Analyze an external time-series CSV.
    Analyze {
        /// Input CSV with a `t` column.
        input: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::SweepGain => "sweep-gain",
            Command::SweepPhase => "sweep-phase",
            Command::FindZfs => "find-zfs",
            Command::Stability => "stability",
            Command::Analyze { .. } => "analyze",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "spinosc",
    version,
    about = "Self-driven Rb-Xe spin oscillator simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file (`section.key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to $SPINOSC_OUT or ./spinosc-out.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override one key, e.g. `--set feedback.gain=2000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, global = true)]
    pub mode: Option<ModeArg>,
}

impl Cli {
    /// File, then `--set` overrides, then the dedicated flags.
    pub fn resolve_config(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => parse_config(p)?,
            None => Config::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::param("--set", format!("`{o}` is not KEY=VALUE")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(seed) = self.seed {
            cfg.sim.noise_seed = Some(seed);
        }
        if let Some(m) = self.mode {
            cfg.sim.mode = match m {
                ModeArg::Full => Mode::Full,
                ModeArg::Adiabatic => Mode::Adiabatic,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            std::env::var_os(OUT_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
        })
    }
}

/// Record of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    /// Full resolved configuration in config-file syntax.
    pub config: String,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.txt";

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command = {}", self.command);
        let _ = writeln!(out, "version = {}", self.version);
        let _ = writeln!(out, "seed = {}", opt_to_text(self.seed, "none"));
        let _ = writeln!(out, "wall_seconds = {:.3}", self.wall_seconds);
        for o in &self.outputs {
            let _ = writeln!(out, "output = {o}");
        }
        out.push_str("\n# resolved configuration\n");
        out.push_str(&self.config);
        out
    }
}

struct Outputs<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl Outputs<'_> {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.dir.join(name), contents)?;
        self.written.push(name.to_string());
        Ok(())
    }
}

/// Dominant frequency: the tail of a sustained record, or the first `2 T2`
/// of anything else.
fn run_frequency(ts: &TimeSeries, sys: &SystemParams) -> Result<f64> {
    if ts.duration() >= 5.0 * sys.xe.t2 && classify_sustained(ts, sys)?.sustained {
        return tail_frequency(ts);
    }
    let n = ((2.0 * sys.xe.t2 * ts.fs) as usize).min(ts.len());
    let head = ts.slice(0, n);
    let spec = fft_spectrum(&head, "mx_rb", Window::Rect)?;
    Ok(estimate_frequency(&head, "mx_rb", spec.peak_freq)?.freq)
}

fn simulate(cfg: &Config, out: &mut Outputs) -> Result<Summary> {
    let sim_cfg = cfg.sim_config();
    let chain = FeedbackChain::new(cfg.chain_spec())?;
    let ts = sim::run(&cfg.sys, Some(&chain), &sim_cfg)?;
    out.write("timeseries.csv", &ts.to_csv())?;
    let mut s = Summary::new();
    s.push("loop", sim_cfg.loop_mode);
    s.push("mode", sim_cfg.mode);
    s.push_f64("duration_s", sim_cfg.duration);
    s.push_f64("threshold_gain_formula", threshold_gain(&cfg.sys)?);
    s.push_f64(
        "open_loop_frequency_formula_hz",
        cfg.sys.xe_open_loop_frequency(),
    );
    let env = fit_exp_envelope(&ts, "mx_rb")?;
    s.push_f64("decay_time_s", env.decay_time);
    s.push("growing", env.growing);
    s.push_f64("frequency_hz", run_frequency(&ts, &cfg.sys)?);
    if ts.duration() >= 5.0 * cfg.sys.xe.t2 {
        s.push("sustained", classify_sustained(&ts, &cfg.sys)?.sustained);
    }
    Ok(s)
}

fn analyze(cfg: &Config, input: &Path, out: &mut Outputs) -> Result<Summary> {
    let ts = TimeSeries::read_csv(input)?;
    let a = &cfg.analysis;
    let mut s = Summary::new();
    s.push("input", input.display());
    s.push("channel", &a.channel);
    s.push("samples", ts.len());
    s.push_f64("sample_rate_hz", ts.fs);
    let spec = fft_spectrum(&ts, &a.channel, a.window)?;
    out.write("spectrum.csv", &spec.to_csv())?;
    s.extend("spectrum.", &spec.summary());
    let fit = estimate_frequency(&ts, &a.channel, a.f_guess.unwrap_or(spec.peak_freq))?;
    s.push_f64("fit.freq_hz", fit.freq);
    s.push_f64("fit.sigma_hz", fit.sigma);
    s.push_f64("fit.amplitude", fit.amplitude);
    let res = field_resolution(fit.sigma, cfg.sys.xe.gamma.abs())?;
    s.push_f64("fit.field_resolution_t", res.tesla);
    let env = fit_exp_envelope(&ts, &a.channel)?;
    s.push_f64("envelope.decay_time_s", env.decay_time);
    s.push("envelope.growing", env.growing);
    let seg = a.segment_length.min(ts.len());
    let psd = welch_psd(&ts, &a.channel, seg, a.overlap)?;
    out.write("psd.csv", &psd.to_csv())?;
    s.push("psd.segments", psd.segments);
    if ts.duration() >= 4.0 * a.track_window {
        let track = frequency_series(&ts, &a.channel, a.track_window, fit.freq)?;
        let allan = allan_deviation(&track, "freq_hz", None)?;
        out.write("allan.csv", &allan.to_csv())?;
        s.push("allan.points", allan.taus.len());
    }
    Ok(s)
}

/// Runs one subcommand, writing every artifact inside `out_dir`.
pub fn dispatch(command: &Command, cfg: &Config, out_dir: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let mut out = Outputs {
        dir: out_dir,
        written: Vec::new(),
    };
    let exp = cfg.experiment();
    let summary = match command {
        Command::Simulate => simulate(cfg, &mut out)?,
        Command::SweepGain => {
            let gains = log_space(
                cfg.sweep.gain_min,
                cfg.sweep.gain_max,
                cfg.sweep.gain_points,
            );
            let r = sweep_gain(
                &exp,
                cfg.chain.shifter.theta,
                &gains,
                cfg.sweep.bisect_steps,
            )?;
            out.write("sweep_gain.csv", &r.sweep.to_csv())?;
            let mut s = r.summary();
            s.push_f64("threshold_gain_formula", threshold_gain(&cfg.sys)?);
            s
        }
        Command::SweepPhase => {
            let r = sweep_phase(&exp, cfg.chain.gain, &cfg.sweep.thetas())?;
            out.write("sweep_phase.csv", &r.sweep.to_csv())?;
            r.summary()
        }
        Command::FindZfs => {
            let r = find_zfs(&exp, cfg.chain.gain, &cfg.sweep.thetas())?;
            out.write("zfs_coarse.csv", &r.coarse.to_csv())?;
            r.summary()
        }
        Command::Stability => {
            let mut e = exp.clone();
            e.sim = cfg.sim_config();
            let r = long_run_stability(&e, &cfg.stability)?;
            out.write("frequency.csv", &r.freq.to_csv())?;
            out.write("allan.csv", &r.allan.to_csv())?;
            r.summary()
        }
        Command::Analyze { input } => analyze(cfg, input, &mut out)?,
    };
    out.write("summary.txt", &summary.to_text())?;
    let manifest = RunManifest {
        command: command.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.sim.noise_seed,
        config: cfg.to_text(),
        outputs: out.written.clone(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    out.write(RunManifest::FILE, &manifest.to_text())?;
    Ok(manifest)
}

/// Entry point shared by the binary and the tests. Returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = cli
        .resolve_config()
        .and_then(|cfg| dispatch(&cli.command, &cfg, &cli.out_dir()));
    match result {
        Ok(m) => {
            for o in &m.outputs {
                println!("{}", cli.out_dir().join(o).display());
            }
            println!("{}", cli.out_dir().join(RunManifest::FILE).display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
