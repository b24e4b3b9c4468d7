//! Signal characterization: spectra, linewidth, SNR, least-squares frequency
//! estimation, envelope fits, Allan deviation, Welch PSD and field conversion.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::model::TESLA_PER_GAUSS;
use crate::series::{fmt9, TimeSeries};

/// Shortest record accepted by the spectral and fitting routines.
pub const MIN_SAMPLES: usize = 64;

/// Zero-padding factor used to resolve line shapes below one FFT bin.
const PAD: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Rect,
    Hann,
}

impl Window {
    fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rect => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::Rect => "rect",
            Window::Hann => "hann",
        })
    }
}

impl FromStr for Window {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rect" => Ok(Window::Rect),
            "hann" => Ok(Window::Hann),
            _ => Err(Error::param("window", format!("`{s}` is not rect|hann"))),
        }
    }
}

/// Ordered `key = value` report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    entries: Vec<(String, String)>,
}

impl Summary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    /// Real values use the same 9-digit format as the CSV files.
    pub fn push_f64(&mut self, key: impl Into<String>, value: f64) {
        self.push(key, fmt9(value));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn extend(&mut self, prefix: &str, other: &Summary) {
        for (k, v) in &other.entries {
            self.entries.push((format!("{prefix}{k}"), v.clone()));
        }
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

fn two_column_csv(header: &str, a: &[f64], b: &[f64]) -> String {
    let mut out = format!("{header}\n");
    for (x, y) in a.iter().zip(b) {
        out.push_str(&format!("{},{}\n", fmt9(*x), fmt9(*y)));
    }
    out
}

fn channel<'a>(ts: &'a TimeSeries, name: &str) -> Result<&'a [f64]> {
    ts.require(name)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Root mean square of `x`.
pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn fft_forward(buf: &mut [Complex64]) {
    FftPlanner::new().plan_fft_forward(buf.len()).process(buf);
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    pub freqs: Vec<f64>,
    /// One-sided amplitude spectrum: a tone of amplitude `A` peaks near `A`.
    pub magnitude: Vec<f64>,
    pub peak_freq: f64,
    /// Full width at half maximum of the power spectrum.
    pub fwhm: f64,
    pub snr: f64,
    pub window: Window,
}

impl SpectrumResult {
    pub fn to_csv(&self) -> String {
        two_column_csv("freq_hz,magnitude", &self.freqs, &self.magnitude)
    }

    pub fn summary(&self) -> Summary {
        let mut s = Summary::new();
        s.push("window", self.window);
        s.push_f64("peak_freq_hz", self.peak_freq);
        s.push_f64("fwhm_hz", self.fwhm);
        s.push_f64("snr", self.snr);
        s
    }
}

/// Magnitude spectrum of one channel after mean removal, zero-padded so that
/// the peak position and width are resolved well below one bin.
pub fn fft_spectrum(ts: &TimeSeries, channel_name: &str, window: Window) -> Result<SpectrumResult> {
    let x = channel(ts, channel_name)?;
    let n = x.len();
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "spectrum needs at least {MIN_SAMPLES} samples, got {n}"
        )));
    }
    let m = mean(x);
    if x.iter().all(|v| (v - m).abs() == 0.0) {
        return Err(Error::InsufficientData(
            "constant input has no spectrum".into(),
        ));
    }
    let w = window.weights(n);
    let wsum: f64 = w.iter().sum();
    let nfft = (n * PAD).next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    for i in 0..n {
        buf[i].re = (x[i] - m) * w[i];
    }
    fft_forward(&mut buf);

    let half = nfft / 2 + 1;
    let df = ts.fs / nfft as f64;
    let freqs: Vec<f64> = (0..half).map(|k| k as f64 * df).collect();
    let magnitude: Vec<f64> = buf[..half].iter().map(|c| 2.0 * c.norm() / wsum).collect();

    let kmax = (1..half)
        .max_by(|&a, &b| magnitude[a].total_cmp(&magnitude[b]))
        .unwrap_or(0);
    let peak_freq = if kmax > 0 && kmax + 1 < half {
        let (a, b, c) = (magnitude[kmax - 1], magnitude[kmax], magnitude[kmax + 1]);
        let den = a - 2.0 * b + c;
        let delta = if den != 0.0 { 0.5 * (a - c) / den } else { 0.0 };
        (kmax as f64 + delta.clamp(-0.5, 0.5)) * df
    } else {
        kmax as f64 * df
    };

    // Half power is 1/sqrt(2) in magnitude.
    let level = magnitude[kmax] / 2f64.sqrt();
    let crossing = |dir: isize| -> f64 {
        let mut k = kmax as isize;
        loop {
            let next = k + dir;
            if next < 0 || next as usize >= half {
                return k as f64 * df;
            }
            let (m0, m1) = (magnitude[k as usize], magnitude[next as usize]);
            if m1 < level {
                let frac = (m0 - level) / (m0 - m1);
                return (k as f64 + dir as f64 * frac) * df;
            }
            k = next;
        }
    };
    let fwhm = (crossing(1) - crossing(-1)).max(df);

    let lo = peak_freq - 10.0 * fwhm;
    let hi = peak_freq + 10.0 * fwhm;
    let floor: Vec<f64> = freqs
        .iter()
        .zip(&magnitude)
        .filter(|(f, _)| **f < lo || **f > hi)
        .map(|(_, m)| *m)
        .collect();
    let noise = rms(&floor);
    let snr = if noise > 0.0 {
        magnitude[kmax] / noise
    } else {
        f64::INFINITY
    };

    Ok(SpectrumResult {
        freqs,
        magnitude,
        peak_freq,
        fwhm,
        snr,
        window,
    })
}

/// Single-tone least-squares fit `A sin(2 pi f t + phi) + C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyEstimate {
    pub freq: f64,
    /// One standard deviation from the fit covariance.
    pub sigma: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
    /// Fraction of the variance explained by the fit.
    pub r_squared: f64,
}

struct ToneFit<'a> {
    x: &'a [f64],
    t: Vec<f64>,
}

impl<'a> ToneFit<'a> {
    fn new(x: &'a [f64], fs: f64) -> Self {
        // Centred time base decorrelates frequency and phase.
        let c = (x.len() as f64 - 1.0) / 2.0;
        let t = (0..x.len()).map(|i| (i as f64 - c) / fs).collect();
        ToneFit { x, t }
    }

    /// Best linear parameters `(a, b, c)` of `a cos + b sin + c` at `f`, and the RSS.
    fn project(&self, f: f64) -> (Vector3<f64>, f64) {
        let w = 2.0 * PI * f;
        let mut ata = Matrix3::zeros();
        let mut atb = Vector3::zeros();
        for (&ti, &xi) in self.t.iter().zip(self.x) {
            let (s, c) = (w * ti).sin_cos();
            let row = Vector3::new(c, s, 1.0);
            ata += row * row.transpose();
            atb += row * xi;
        }
        let p = ata.lu().solve(&atb).unwrap_or_else(Vector3::zeros);
        (p, self.rss(f, &p))
    }

    fn rss(&self, f: f64, p: &Vector3<f64>) -> f64 {
        let w = 2.0 * PI * f;
        self.t
            .iter()
            .zip(self.x)
            .map(|(&ti, &xi)| {
                let (s, c) = (w * ti).sin_cos();
                let r = xi - (p[0] * c + p[1] * s + p[2]);
                r * r
            })
            .sum()
    }

    /// Gauss-Newton normal equations for `(f, a, b, c)`.
    fn normal(&self, f: f64, p: &Vector3<f64>) -> (Matrix4<f64>, Vector4<f64>) {
        let w = 2.0 * PI * f;
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for (&ti, &xi) in self.t.iter().zip(self.x) {
            let (s, c) = (w * ti).sin_cos();
            let r = xi - (p[0] * c + p[1] * s + p[2]);
            let j = Vector4::new(2.0 * PI * ti * (p[1] * c - p[0] * s), c, s, 1.0);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        (jtj, jtr)
    }
}

/// Nonlinear least-squares frequency of the dominant tone near `f_guess`.
///
/// A coarse scan over `f_guess` +/- 3 bins (bin = `1/T`) seeds a Gauss-Newton
/// refinement. Fits whose optimum sits on the scan boundary, that fail to
/// converge, or that explain less than half of the variance are errors.
pub fn estimate_frequency(
    ts: &TimeSeries,
    channel_name: &str,
    f_guess: f64,
) -> Result<FrequencyEstimate> {
    let x = channel(ts, channel_name)?;
    estimate_frequency_samples(x, ts.fs, f_guess)
}

pub fn estimate_frequency_samples(x: &[f64], fs: f64, f_guess: f64) -> Result<FrequencyEstimate> {
    let n = x.len();
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "frequency fit needs at least {MIN_SAMPLES} samples, got {n}"
        )));
    }
    if !(f_guess.is_finite() && f_guess > 0.0 && f_guess < fs / 2.0) {
        return Err(Error::param(
            "f_guess",
            format!("must lie in (0, fs/2), got {f_guess}"),
        ));
    }
    let fit = ToneFit::new(x, fs);
    let bin = fs / n as f64;
    let span = 3.0 * bin;
    let steps = 120;
    let mut best = (f_guess, f64::INFINITY, 0usize);
    for i in 0..=steps {
        let f = f_guess - span + 2.0 * span * i as f64 / steps as f64;
        if f <= 0.0 {
            continue;
        }
        let (_, rss) = fit.project(f);
        if rss < best.1 {
            best = (f, rss, i);
        }
    }
    if best.2 == 0 || best.2 == steps {
        return Err(Error::NoConvergence(format!(
            "no tone optimum within {f_guess} +/- {span:.3e} Hz"
        )));
    }

    let mut f = best.0;
    let (mut p, mut rss) = fit.project(f);
    let mut converged = false;
    for _ in 0..100 {
        let (jtj, jtr) = fit.normal(f, &p);
        let Some(delta) = jtj.lu().solve(&jtr) else {
            break;
        };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let f_new = f + step * delta[0];
            let p_new = p + step * Vector3::new(delta[1], delta[2], delta[3]);
            let rss_new = fit.rss(f_new, &p_new);
            if rss_new <= rss {
                let small = (step * delta[0]).abs() <= 1e-15 * f.abs().max(1.0)
                    || rss - rss_new <= 1e-15 * rss;
                f = f_new;
                p = p_new;
                rss = rss_new;
                accepted = true;
                converged = small;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No descent direction left: at the optimum to working precision.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged || !f.is_finite() {
        return Err(Error::NoConvergence(format!(
            "Gauss-Newton did not settle near {f_guess} Hz"
        )));
    }
    if (f - f_guess).abs() > span {
        return Err(Error::NoConvergence(format!(
            "fit wandered to {f} Hz, outside {f_guess} +/- {span:.3e} Hz"
        )));
    }

    let m = mean(x);
    let tss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 0.0 };
    if r_squared < 0.5 {
        return Err(Error::Ambiguous(format!(
            "single tone explains only {:.1}% of the variance near {f_guess} Hz",
            100.0 * r_squared
        )));
    }
    let (jtj, _) = fit.normal(f, &p);
    let var_ff = jtj
        .try_inverse()
        .map(|c| c[(0, 0)])
        .unwrap_or(f64::INFINITY);
    let sigma = (rss / (n as f64 - 4.0) * var_ff).max(0.0).sqrt();
    Ok(FrequencyEstimate {
        freq: f,
        sigma,
        amplitude: p[0].hypot(p[1]),
        phase: p[0].atan2(p[1]),
        offset: p[2],
        r_squared,
    })
}

/// Frequency track built from non-overlapping windows of `window_s` seconds,
/// each fitted with [`estimate_frequency`]. Each window seeds the next guess.
pub fn frequency_series(
    ts: &TimeSeries,
    channel_name: &str,
    window_s: f64,
    f_guess: f64,
) -> Result<TimeSeries> {
    let x = channel(ts, channel_name)?;
    let w = (window_s * ts.fs).round() as usize;
    if w < MIN_SAMPLES {
        return Err(Error::param(
            "window_s",
            format!("window holds {w} < {MIN_SAMPLES} samples"),
        ));
    }
    let count = x.len() / w;
    if count < 2 {
        return Err(Error::InsufficientData(
            "fewer than two frequency windows".into(),
        ));
    }
    let mut guess = f_guess;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let est = estimate_frequency_samples(&x[k * w..(k + 1) * w], ts.fs, guess)?;
        guess = est.freq;
        out.push(est.freq);
    }
    let mut fts = TimeSeries::new(1.0 / (w as f64 / ts.fs), ts.t0)?;
    fts.add_channel("freq_hz", out)?;
    Ok(fts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeFit {
    pub amplitude: f64,
    /// Decay rate in 1/s; negative for a growing envelope.
    pub rate: f64,
    /// `1 / rate`, or `f64::INFINITY` when the rate is below `1 / (10 T_obs)`.
    pub decay_time: f64,
    pub growing: bool,
}

impl EnvelopeFit {
    pub fn is_constant(&self) -> bool {
        self.decay_time.is_infinite()
    }
}

/// Analytic-signal magnitude via the FFT Hilbert transform.
pub fn envelope(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let mut buf: Vec<Complex64> = x.iter().map(|v| Complex64::new(v - m, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let h = if k == 0 || (n % 2 == 0 && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *c *= h / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

/// Exponential fit `A exp(-rate t)` of the envelope, with 5% trimmed from each
/// end to avoid Hilbert edge effects.
pub fn fit_exp_envelope(ts: &TimeSeries, channel_name: &str) -> Result<EnvelopeFit> {
    let x = channel(ts, channel_name)?;
    let n = x.len();
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "envelope fit needs at least {MIN_SAMPLES} samples, got {n}"
        )));
    }
    let env = envelope(x);
    let trim = n / 20;
    let pts: Vec<(f64, f64)> = (trim..n - trim)
        .filter(|&i| env[i] > 0.0)
        .map(|i| (i as f64 / ts.fs, env[i].ln()))
        .collect();
    if pts.len() < 16 {
        return Err(Error::InsufficientData(
            "too few non-zero envelope points".into(),
        ));
    }
    let k = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm) * (p.0 - tm)).sum();
    let slope = sxy / sxx;
    let rate = -slope;
    let amplitude = (ym - slope * tm).exp();
    let t_obs = ts.duration();
    let flat = rate.abs() < 1.0 / (10.0 * t_obs);
    Ok(EnvelopeFit {
        amplitude,
        rate,
        decay_time: if flat { f64::INFINITY } else { 1.0 / rate },
        growing: !flat && rate < 0.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllanResult {
    pub taus: Vec<f64>,
    pub adev: Vec<f64>,
    /// Approximate 1 sigma uncertainty of each point.
    pub confidence: Vec<f64>,
    /// Requested taus dropped for exceeding half the record.
    pub skipped: Vec<f64>,
}

impl AllanResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau_s,adev,confidence\n");
        for i in 0..self.taus.len() {
            out.push_str(&format!(
                "{},{},{}\n",
                fmt9(self.taus[i]),
                fmt9(self.adev[i]),
                fmt9(self.confidence[i])
            ));
        }
        out
    }

    /// Least-squares slope of `log adev` against `log tau` over `[tau_lo, tau_hi]`.
    pub fn log_slope(&self, tau_lo: f64, tau_hi: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .taus
            .iter()
            .zip(&self.adev)
            .filter(|(t, a)| **t >= tau_lo && **t <= tau_hi && **a > 0.0)
            .map(|(t, a)| (t.ln(), a.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let k = pts.len() as f64;
        let xm = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let ym = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - xm) * (p.0 - xm)).sum();
        Some(sxy / sxx)
    }
}

/// Powers of two times the sample spacing, up to half the record.
pub fn octave_taus(fs: f64, n: usize) -> Vec<f64> {
    let tau0 = 1.0 / fs;
    let mut out = Vec::new();
    let mut m = 1usize;
    while 2 * m <= n {
        out.push(m as f64 * tau0);
        m *= 2;
    }
    out
}

/// Overlapping Allan deviation of a uniformly sampled frequency series.
///
/// Each tau is rounded to a whole number of samples. Taus longer than half
/// the record are skipped with a warning and listed in `skipped`.
pub fn allan_deviation(
    series: &TimeSeries,
    channel_name: &str,
    taus: Option<&[f64]>,
) -> Result<AllanResult> {
    let y = channel(series, channel_name)?;
    allan_deviation_samples(y, series.fs, taus)
}

pub fn allan_deviation_samples(y: &[f64], fs: f64, taus: Option<&[f64]>) -> Result<AllanResult> {
    let n = y.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "Allan deviation needs at least 3 points, got {n}"
        )));
    }
    let tau0 = 1.0 / fs;
    let t_obs = n as f64 * tau0;
    let requested = match taus {
        Some(t) => t.to_vec(),
        None => octave_taus(fs, n),
    };
    // Offsetting by the first sample keeps a constant series exactly zero.
    let y0 = y[0];
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    let mut acc = 0.0;
    for v in y {
        acc += v - y0;
        cum.push(acc);
    }

    let mut res = AllanResult {
        taus: Vec::new(),
        adev: Vec::new(),
        confidence: Vec::new(),
        skipped: Vec::new(),
    };
    for &tau in &requested {
        let m = (tau / tau0).round() as usize;
        if m == 0 || tau > t_obs / 2.0 || 2 * m > n {
            warn!("tau = {tau} s skipped (record is {t_obs} s)");
            res.skipped.push(tau);
            continue;
        }
        let tau_m = m as f64 * tau0;
        if res.taus.last().is_some_and(|&last| tau_m <= last) {
            continue;
        }
        let terms = n - 2 * m + 1;
        let mut sum = 0.0;
        for j in 0..terms {
            let a1 = cum[j + m] - cum[j];
            let a2 = cum[j + 2 * m] - cum[j + m];
            let d = (a2 - a1) / m as f64;
            sum += d * d;
        }
        let adev = (sum / (2.0 * terms as f64)).sqrt();
        let edf = (n as f64 / m as f64 - 1.0).max(1.0);
        res.taus.push(tau_m);
        res.adev.push(adev);
        res.confidence.push(adev / (2.0 * edf).sqrt());
    }
    Ok(res)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    /// One-sided density in (channel units)^2 / Hz.
    pub density: Vec<f64>,
    pub segments: usize,
}

impl Psd {
    pub fn to_csv(&self) -> String {
        two_column_csv("freq_hz,psd", &self.freqs, &self.density)
    }

    pub fn df(&self) -> f64 {
        self.freqs.get(1).copied().unwrap_or(0.0)
    }

    /// Rectangle-rule integral over `[f_lo, f_hi]`.
    pub fn integrate(&self, f_lo: f64, f_hi: f64) -> f64 {
        let df = self.df();
        self.freqs
            .iter()
            .zip(&self.density)
            .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
            .map(|(_, p)| p * df)
            .sum()
    }
}

/// Welch averaged periodogram with a Hann window and per-segment mean removal.
/// `overlap` is the fraction of a segment shared with the next one.
pub fn welch_psd(
    ts: &TimeSeries,
    channel_name: &str,
    segment_length: usize,
    overlap: f64,
) -> Result<Psd> {
    let x = channel(ts, channel_name)?;
    let n = x.len();
    if segment_length < 8 || segment_length > n {
        return Err(Error::param(
            "segment_length",
            format!("must lie in [8, {n}], got {segment_length}"),
        ));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::param(
            "overlap",
            format!("must lie in [0, 1), got {overlap}"),
        ));
    }
    let step = ((segment_length as f64) * (1.0 - overlap)).round() as usize;
    if step == 0 {
        return Err(Error::param("overlap", "leaves a zero segment step"));
    }
    let w = Window::Hann.weights(segment_length);
    let wss: f64 = w.iter().map(|v| v * v).sum();
    let fft = FftPlanner::new().plan_fft_forward(segment_length);
    let half = segment_length / 2 + 1;
    let mut acc = vec![0.0; half];
    let mut segments = 0;
    let mut start = 0;
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_length];
    while start + segment_length <= n {
        let seg = &x[start..start + segment_length];
        let m = mean(seg);
        for i in 0..segment_length {
            buf[i] = Complex64::new((seg[i] - m) * w[i], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..half {
            acc[k] += buf[k].norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let scale = 1.0 / (ts.fs * wss * segments as f64);
    let density = acc
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let one_sided = if k == 0 || (segment_length % 2 == 0 && k == half - 1) {
                1.0
            } else {
                2.0
            };
            p * scale * one_sided
        })
        .collect();
    let freqs = (0..half)
        .map(|k| k as f64 * ts.fs / segment_length as f64)
        .collect();
    Ok(Psd {
        freqs,
        density,
        segments,
    })
}

/// Field equivalent of a frequency resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldResolution {
    pub gauss: f64,
    pub tesla: f64,
}

/// `delta_f / gamma` for `gamma` in Hz/G.
pub fn field_resolution(delta_f: f64, gamma: f64) -> Result<FieldResolution> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::param("gamma", "must be > 0"));
    }
    let gauss = delta_f / gamma;
    Ok(FieldResolution {
        gauss,
        tesla: gauss * TESLA_PER_GAUSS,
    })
}
