//! Discrete-time model of the driving electronics: band-pass amplifier,
//! phase shifter and gain stage.
//!
//! The chain is sampled at the loop rate `fs`. Its output is the drive field
//! `B_y` in Gauss; its input is the Rb transverse signal in Gauss.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandPassSpec {
    pub f_center: f64,
    pub q_factor: f64,
    pub fs: f64,
}

impl Default for BandPassSpec {
    fn default() -> Self {
        BandPassSpec {
            f_center: 35.0,
            q_factor: 10.0,
            fs: 1000.0,
        }
    }
}

impl BandPassSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::param("feedback.fs", "must be > 0"));
        }
        if !(self.f_center > 0.0 && self.f_center < self.fs / 2.0) {
            return Err(Error::param(
                "feedback.f_center",
                format!("must lie in (0, fs/2) = (0, {})", self.fs / 2.0),
            ));
        }
        if !(self.q_factor.is_finite() && self.q_factor > 0.0) {
            return Err(Error::param("feedback.q_factor", "must be > 0"));
        }
        Ok(())
    }
}

/// Second-order section `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Frequency response at `f` for sample rate `fs`.
    pub fn response(&self, f: f64, fs: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * f / fs);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = 1.0 + z1 * self.a[0] + z2 * self.a[1];
        num / den
    }

    /// Largest pole modulus.
    pub fn pole_radius(&self) -> f64 {
        let (a1, a2) = (self.a[0], self.a[1]);
        let disc = a1 * a1 - 4.0 * a2;
        if disc < 0.0 {
            a2.sqrt()
        } else {
            let s = disc.sqrt();
            ((-a1 + s) / 2.0).abs().max(((-a1 - s) / 2.0).abs())
        }
    }
}

/// Two-pole resonator with zeros at DC and Nyquist, poles at radius
/// `exp(-pi f0 / (Q fs))` and angle `2 pi f0 / fs`, scaled to unity gain at `f0`.
pub fn design_bandpass(spec: &BandPassSpec) -> Result<Biquad> {
    spec.validate()?;
    let w0 = 2.0 * PI * spec.f_center / spec.fs;
    let r = (-PI * spec.f_center / (spec.q_factor * spec.fs)).exp();
    let mut bq = Biquad {
        b: [1.0, 0.0, -1.0],
        a: [-2.0 * r * w0.cos(), r * r],
    };
    let g = bq.response(spec.f_center, spec.fs).norm();
    for b in &mut bq.b {
        *b /= g;
    }
    Ok(bq)
}

/// How the phase shifter realizes its lag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftMode {
    /// Integer-sample delay line; quantized to `360 f_ref / fs` degrees.
    IdealDelay,
    /// `cos(theta) x + sin(theta) x_q` with a two-tap quadrature path exact at `f_ref`.
    Quadrature,
    /// First-order all-pass section (plus sign inversion beyond 180 degrees).
    AllPass,
}

impl std::str::FromStr for ShiftMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal_delay" => Ok(ShiftMode::IdealDelay),
            "quadrature" => Ok(ShiftMode::Quadrature),
            "allpass" => Ok(ShiftMode::AllPass),
            _ => Err(Error::param(
                "feedback.mode",
                format!("`{s}` is not one of ideal_delay, quadrature, allpass"),
            )),
        }
    }
}

impl std::fmt::Display for ShiftMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShiftMode::IdealDelay => "ideal_delay",
            ShiftMode::Quadrature => "quadrature",
            ShiftMode::AllPass => "allpass",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseShifterSpec {
    /// Lag in degrees, `[0, 360)`.
    pub theta: f64,
    pub mode: ShiftMode,
    /// Frequency at which `theta` is exact, Hz.
    pub f_ref: f64,
}

impl PhaseShifterSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta.is_finite() && (0.0..360.0).contains(&self.theta)) {
            return Err(Error::param("feedback.theta", "must lie in [0, 360)"));
        }
        if !(self.f_ref.is_finite() && self.f_ref > 0.0) {
            return Err(Error::param("feedback.f_ref", "must be > 0"));
        }
        Ok(())
    }
}

/// Stateful phase shifter running at sample rate `fs`.
#[derive(Debug, Clone)]
pub struct PhaseShifter {
    spec: PhaseShifterSpec,
    state: ShiftState,
}

#[derive(Debug, Clone)]
enum ShiftState {
    Delay {
        line: VecDeque<f64>,
    },
    Quadrature {
        c: f64,
        s: f64,
        cos_w: f64,
        sin_w: f64,
        prev: f64,
    },
    AllPass {
        a: Option<f64>,
        sign: f64,
        x1: f64,
        y1: f64,
    },
}

impl PhaseShifter {
    /// Builds a shifter with lag `spec.theta`. The ideal-delay line holds at
    /// most `capacity` samples.
    pub fn new(spec: PhaseShifterSpec, fs: f64, capacity: usize) -> Result<Self> {
        spec.validate()?;
        if !(fs > 0.0 && spec.f_ref < fs / 2.0) {
            return Err(Error::param("feedback.f_ref", "must lie below fs/2"));
        }
        let w = 2.0 * PI * spec.f_ref / fs;
        let theta = spec.theta.to_radians();
        let state = match spec.mode {
            ShiftMode::IdealDelay => {
                let n = (fs * spec.theta / (360.0 * spec.f_ref)).round() as usize;
                if n > capacity {
                    return Err(Error::param(
                        "feedback.theta",
                        format!("needs a {n}-sample delay, buffer holds {capacity}"),
                    ));
                }
                ShiftState::Delay {
                    line: VecDeque::from(vec![0.0; n]),
                }
            }
            ShiftMode::Quadrature => ShiftState::Quadrature {
                c: theta.cos(),
                s: theta.sin(),
                cos_w: w.cos(),
                sin_w: w.sin(),
                prev: 0.0,
            },
            ShiftMode::AllPass => {
                let (lag, sign) = if theta >= PI {
                    (theta - PI, -1.0)
                } else {
                    (theta, 1.0)
                };
                ShiftState::AllPass {
                    a: allpass_coefficient(lag, w),
                    sign,
                    x1: 0.0,
                    y1: 0.0,
                }
            }
        };
        Ok(PhaseShifter { spec, state })
    }

    pub fn spec(&self) -> &PhaseShifterSpec {
        &self.spec
    }

    /// Delay-line length in samples (ideal-delay mode only).
    pub fn delay_samples(&self) -> Option<usize> {
        match &self.state {
            ShiftState::Delay { line } => Some(line.len()),
            _ => None,
        }
    }

    pub fn step(&mut self, x: f64) -> f64 {
        match &mut self.state {
            ShiftState::Delay { line } => {
                if line.is_empty() {
                    return x;
                }
                line.push_back(x);
                line.pop_front().unwrap_or(0.0)
            }
            ShiftState::Quadrature {
                c,
                s,
                cos_w,
                sin_w,
                prev,
            } => {
                // x_q lags x by exactly 90 degrees for a tone at f_ref
                let xq = (*prev - x * *cos_w) / *sin_w;
                *prev = x;
                *c * x + *s * xq
            }
            ShiftState::AllPass { a, sign, x1, y1 } => {
                let Some(a) = *a else {
                    return *sign * x;
                };
                let y = a * x + *x1 - a * *y1;
                *x1 = x;
                *y1 = y;
                *sign * y
            }
        }
    }

    /// Changes the lag of a quadrature shifter without touching its registers.
    fn retune(&mut self, theta_deg: f64) {
        if let ShiftState::Quadrature { c, s, .. } = &mut self.state {
            let (sn, cs) = theta_deg.to_radians().sin_cos();
            *c = cs;
            *s = sn;
        }
    }

    pub fn reset(&mut self) {
        match &mut self.state {
            ShiftState::Delay { line } => line.iter_mut().for_each(|v| *v = 0.0),
            ShiftState::Quadrature { prev, .. } => *prev = 0.0,
            ShiftState::AllPass { x1, y1, .. } => {
                *x1 = 0.0;
                *y1 = 0.0;
            }
        }
    }
}

/// Coefficient of `(a + z^-1) / (1 + a z^-1)` whose lag at `w` rad/sample is
/// `lag`; `None` for zero lag, where the section is bypassed.
fn allpass_coefficient(lag: f64, w: f64) -> Option<f64> {
    (lag != 0.0).then(|| ((w - lag) / 2.0).sin() / ((w + lag) / 2.0).sin())
}

/// Complete configuration of the driving electronics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSpec {
    pub bandpass: BandPassSpec,
    pub shifter: PhaseShifterSpec,
    pub gain: f64,
    /// Output clamp in Gauss.
    pub saturation: Option<f64>,
    /// Standard deviation of additive white noise on the output, Gauss.
    pub noise_std: f64,
    /// When set, the shifter absorbs the band-pass phase and the half-sample
    /// hold delay at `f_ref`, so the net lag from input to the held drive
    /// field equals `theta` at `f_ref`.
    pub compensate: bool,
    /// Linear drift of `theta` in degrees per second (quadrature mode only).
    pub theta_drift: f64,
}

impl Default for ChainSpec {
    fn default() -> Self {
        ChainSpec {
            bandpass: BandPassSpec::default(),
            shifter: PhaseShifterSpec {
                theta: 90.0,
                mode: ShiftMode::Quadrature,
                f_ref: 35.0,
            },
            gain: 0.0,
            saturation: None,
            noise_std: 0.0,
            compensate: true,
            theta_drift: 0.0,
        }
    }
}

impl ChainSpec {
    pub fn validate(&self) -> Result<()> {
        self.bandpass.validate()?;
        self.shifter.validate()?;
        if !(self.gain.is_finite() && self.gain >= 0.0) {
            return Err(Error::param("feedback.gain", "must be >= 0"));
        }
        if let Some(s) = self.saturation {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::param("feedback.saturation", "must be > 0"));
            }
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::param("feedback.noise_std", "must be >= 0"));
        }
        if !self.theta_drift.is_finite() {
            return Err(Error::param("feedback.theta_drift", "must be finite"));
        }
        if self.theta_drift != 0.0 && self.shifter.mode != ShiftMode::Quadrature {
            return Err(Error::param(
                "feedback.theta_drift",
                "phase drift requires the quadrature shifter",
            ));
        }
        Ok(())
    }

    /// Lag the shifter must apply so that the whole chain lags by `theta`.
    pub fn shifter_lag(&self, bandpass: &Biquad) -> f64 {
        let theta = self.shifter.theta;
        if !self.compensate {
            return theta;
        }
        let f = self.shifter.f_ref;
        let fs = self.bandpass.fs;
        let bp_phase = bandpass.response(f, fs).arg().to_degrees();
        let hold_lag = 360.0 * f / (2.0 * fs);
        (theta + bp_phase - hold_lag).rem_euclid(360.0)
    }
}

/// Band-pass, phase shifter and gain with their internal registers.
#[derive(Debug, Clone)]
pub struct FeedbackChain {
    spec: ChainSpec,
    bp: Biquad,
    // direct form I registers
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
    shifter: PhaseShifter,
    lag: f64,
    samples: u64,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
}

impl FeedbackChain {
    pub fn new(spec: ChainSpec) -> Result<Self> {
        spec.validate()?;
        let bp = design_bandpass(&spec.bandpass)?;
        let lag = spec.shifter_lag(&bp);
        let shifter_spec = PhaseShifterSpec {
            theta: if lag >= 360.0 { 0.0 } else { lag },
            ..spec.shifter
        };
        let fs = spec.bandpass.fs;
        let capacity = (fs / spec.shifter.f_ref).ceil() as usize;
        let shifter = PhaseShifter::new(shifter_spec, fs, capacity)?;
        let noise = (spec.noise_std > 0.0).then(|| {
            (
                Normal::new(0.0, spec.noise_std).expect("validated std"),
                ChaCha8Rng::seed_from_u64(0),
            )
        });
        Ok(FeedbackChain {
            spec,
            bp,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
            shifter,
            lag: shifter_spec.theta,
            samples: 0,
            noise,
        })
    }

    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn bandpass(&self) -> &Biquad {
        &self.bp
    }

    pub fn shifter(&self) -> &PhaseShifter {
        &self.shifter
    }

    pub fn gain(&self) -> f64 {
        self.spec.gain
    }

    /// Restarts the noise generator from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        if let Some((_, rng)) = &mut self.noise {
            *rng = ChaCha8Rng::seed_from_u64(seed);
        }
    }

    /// Clears all filter and delay registers.
    pub fn reset(&mut self) {
        self.x1 = 0.0;
        self.x2 = 0.0;
        self.y1 = 0.0;
        self.y2 = 0.0;
        self.samples = 0;
        self.shifter.reset();
        if self.spec.theta_drift != 0.0 {
            self.shifter.retune(self.lag);
        }
    }

    /// One band-pass output sample.
    pub fn step_bandpass(&mut self, x: f64) -> f64 {
        let [b0, b1, b2] = self.bp.b;
        let [a1, a2] = self.bp.a;
        let y = b0 * x + b1 * self.x1 + b2 * self.x2 - a1 * self.y1 - a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }

    /// One phase-shifter output sample.
    pub fn phase_shift(&mut self, x: f64) -> f64 {
        self.shifter.step(x)
    }

    /// Drive field for one loop sample of the Rb transverse signal.
    pub fn feedback_step(&mut self, mx_rb: f64) -> f64 {
        if self.spec.theta_drift != 0.0 {
            let t = self.samples as f64 / self.spec.bandpass.fs;
            self.shifter.retune(self.lag + self.spec.theta_drift * t);
        }
        self.samples += 1;
        let filtered = self.step_bandpass(mx_rb);
        let shifted = self.phase_shift(filtered);
        let mut out = self.spec.gain * shifted;
        if let Some((dist, rng)) = &mut self.noise {
            out += dist.sample(rng);
        }
        match self.spec.saturation {
            Some(s) => out.clamp(-s, s),
            None => out,
        }
    }
}
