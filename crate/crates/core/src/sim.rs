//! Time integration of the coupled system under feedback.
//!
//! The Bloch equations are advanced with classical fixed-step RK4. The drive
//! field is recomputed once per loop sample and held constant over the inner
//! steps (zero-order hold). In adiabatic mode only the Xe magnetization is
//! integrated and the Rb magnetization is replaced by its quasi-static value.

use std::ops::{Add, Mul};

use log::warn;

use crate::error::{Error, Result};
use crate::feedback::FeedbackChain;
use crate::model::{Rates, SpinState, SystemParams, Vec3};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Both species integrated.
    Full,
    /// Rb slaved to its quasi-static response.
    Adiabatic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopMode {
    Open,
    Closed,
}

/// Scaling applied to `M_x^Rb` before it enters the feedback chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Probe {
    /// The chain sees `M_x^Rb` in Gauss.
    Raw,
    /// The chain sees `M_x^Rb` rescaled so that a fully tipped Xe
    /// magnetization reads `M0_Rb` (see [`probe_gain`]).
    Calibrated,
    /// Explicit multiplier.
    Scale(f64),
}

impl Probe {
    pub fn factor(&self, sys: &SystemParams) -> f64 {
        match *self {
            Probe::Raw => 1.0,
            Probe::Calibrated => probe_gain(sys),
            Probe::Scale(s) => s,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "adiabatic" => Ok(Mode::Adiabatic),
            _ => Err(Error::param(
                "sim.mode",
                format!("`{s}` is not full|adiabatic"),
            )),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::Adiabatic => "adiabatic",
        })
    }
}

impl std::str::FromStr for LoopMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open" => Ok(LoopMode::Open),
            "closed" => Ok(LoopMode::Closed),
            _ => Err(Error::param(
                "sim.loop",
                format!("`{s}` is not open|closed"),
            )),
        }
    }
}

impl std::fmt::Display for LoopMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LoopMode::Open => "open",
            LoopMode::Closed => "closed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Inner RK4 step, s.
    pub dt: f64,
    /// Feedback sample rate, Hz.
    pub fs_loop: f64,
    pub duration: f64,
    pub mode: Mode,
    pub loop_mode: LoopMode,
    /// Initial tip of each species about x, degrees.
    pub initial_tip_xe: f64,
    pub initial_tip_rb: f64,
    /// Record every n-th loop sample.
    pub record_decimation: usize,
    pub noise_seed: Option<u64>,
    pub probe: Probe,
}

pub const FULL_DT: f64 = 1e-6;
pub const ADIABATIC_DT: f64 = 1e-4;

impl SimConfig {
    pub fn new(mode: Mode, loop_mode: LoopMode, duration: f64) -> Self {
        SimConfig {
            dt: match mode {
                Mode::Full => FULL_DT,
                Mode::Adiabatic => ADIABATIC_DT,
            },
            fs_loop: 1000.0,
            duration,
            mode,
            loop_mode,
            initial_tip_xe: 10.0,
            initial_tip_rb: 0.0,
            record_decimation: 1,
            noise_seed: None,
            probe: Probe::Calibrated,
        }
    }

    /// Inner steps per loop sample.
    pub fn substeps(&self) -> Result<usize> {
        let n = 1.0 / (self.dt * self.fs_loop);
        let r = n.round();
        if r < 1.0 || (n - r).abs() > 1e-6 * r {
            return Err(Error::param(
                "sim.dt",
                "1/dt must be an integer multiple of fs_loop",
            ));
        }
        Ok(r as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::param("sim.dt", "must be > 0"));
        }
        if !(self.fs_loop.is_finite() && self.fs_loop > 0.0) {
            return Err(Error::param("sim.fs_loop", "must be > 0"));
        }
        self.substeps()?;
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::param("sim.duration", "must be > 0"));
        }
        for (name, tip) in [
            ("sim.initial_tip_xe", self.initial_tip_xe),
            ("sim.initial_tip_rb", self.initial_tip_rb),
        ] {
            if !(0.0..=180.0).contains(&tip) {
                return Err(Error::param(name, "must lie in [0, 180]"));
            }
        }
        if self.record_decimation == 0 {
            return Err(Error::param("sim.record_decimation", "must be >= 1"));
        }
        if let Probe::Scale(s) = self.probe {
            if !s.is_finite() {
                return Err(Error::param("sim.probe", "must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Pair(Vec3, Vec3);

impl Add for Pair {
    type Output = Pair;
    #[inline]
    fn add(self, o: Pair) -> Pair {
        Pair(self.0 + o.0, self.1 + o.1)
    }
}

impl Mul<f64> for Pair {
    type Output = Pair;
    #[inline]
    fn mul(self, s: f64) -> Pair {
        Pair(self.0 * s, self.1 * s)
    }
}

#[inline]
fn rk4<S, F>(y: S, h: f64, f: F) -> S
where
    S: Copy + Add<Output = S> + Mul<f64, Output = S>,
    F: Fn(S) -> S,
{
    let k1 = f(y);
    let k2 = f(y + k1 * (h / 2.0));
    let k3 = f(y + k2 * (h / 2.0));
    let k4 = f(y + k3 * h);
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// One classical RK4 step of the full two-species system with the drive held
/// constant over the step.
pub fn rk4_step(
    state: &SpinState,
    sys: &SystemParams,
    drive_by: f64,
    dt: f64,
) -> Result<SpinState> {
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be > 0"));
    }
    let rates = Rates::new(sys);
    let Pair(m_rb, m_xe) = rk4(Pair(state.m_rb, state.m_xe), dt, |Pair(rb, xe)| {
        let d = rates.full(rb, xe, drive_by);
        Pair(d.d_rb, d.d_xe)
    });
    let next = SpinState {
        m_rb,
        m_xe,
        t: state.t + dt,
    };
    if !next.is_finite() {
        return Err(Error::NonFinite { t: next.t });
    }
    Ok(next)
}

/// Quasi-static Rb magnetization for a given Xe magnetization.
///
/// Solves `0 = (gamma_Rb / q) M x B_eff + relaxation` with
/// `B_eff = B0 + lambda m_xe`, allowing distinct T1 and T2.
pub fn adiabatic_rb(m_xe: Vec3, sys: &SystemParams) -> Result<Vec3> {
    if !(sys.rb.t1 > 0.0 && sys.rb.t2 > 0.0) {
        return Err(Error::param("rb.t1", "relaxation times must be > 0"));
    }
    Ok(Slaved::new(&Rates::new(sys)).solve(m_xe))
}

/// Closed-form steady state of the Rb Bloch equation.
#[derive(Debug, Clone, Copy)]
struct Slaved {
    w: f64,
    b0: Vec3,
    lambda: f64,
    r1: f64,
    r2: f64,
    s: f64,
}

impl Slaved {
    fn new(r: &Rates) -> Self {
        Slaved {
            w: r.w_rb,
            b0: r.b0,
            lambda: r.lambda,
            r1: r.rb_r1,
            r2: r.rb_r2,
            s: r.rb_r1 * r.rb_m0,
        }
    }

    #[inline]
    fn solve(&self, m_xe: Vec3) -> Vec3 {
        // (R + [W]x) M = (0, 0, r1 M0), solved by cofactors of the last row.
        let w = (self.b0 + m_xe * self.lambda) * self.w;
        let (r1, r2) = (self.r1, self.r2);
        let c1 = w.z * w.x - w.y * r2;
        let c2 = r2 * w.x + w.y * w.z;
        let c3 = r2 * r2 + w.z * w.z;
        let det = r2 * (w.x * w.x + w.y * w.y) + r1 * c3;
        Vec3::new(c1, c2, c3) * (self.s / det)
    }
}

/// Transverse Rb magnetization produced by a fully tipped Xe magnetization.
pub fn rb_full_scale(sys: &SystemParams) -> f64 {
    let s = Slaved::new(&Rates::new(sys));
    s.solve(Vec3::X * sys.xe.m0).transverse()
}

/// Factor mapping the Rb transverse signal onto units where a fully tipped Xe
/// magnetization reads `M0_Rb`. This is the normalization under which the
/// loop gain `G` is defined as drive field per unit Rb magnetization.
pub fn probe_gain(sys: &SystemParams) -> f64 {
    let fs = rb_full_scale(sys);
    if fs > 0.0 {
        sys.rb.m0 / fs
    } else {
        0.0
    }
}

/// Adiabatic following holds when the Rb relaxation is fast compared with the
/// Xe precession.
pub fn adiabatic_condition(sys: &SystemParams) -> f64 {
    sys.xe.gamma.abs() * sys.field.b0.norm() * sys.coupling.q * sys.rb.t1.max(sys.rb.t2)
}

pub const CHANNELS: [&str; 8] = [
    "mx_rb", "my_rb", "mz_rb", "mx_xe", "my_xe", "mz_xe", "drive_by", "probe",
];

/// Integrates the system for `cfg.duration` and records the decimated channels.
///
/// Both species start at equilibrium (Rb along the pump sign) and are then
/// tipped about x. In closed loop `chain` must be provided; a private copy of
/// it is driven so repeated runs from the same chain are independent and
/// deterministic.
pub fn run(
    sys: &SystemParams,
    chain: Option<&FeedbackChain>,
    cfg: &SimConfig,
) -> Result<TimeSeries> {
    sys.validate()?;
    cfg.validate()?;
    let mut chain = match cfg.loop_mode {
        LoopMode::Open => None,
        LoopMode::Closed => Some(
            chain
                .ok_or_else(|| Error::param("feedback", "closed loop requires a feedback chain"))?
                .clone(),
        ),
    };
    if let Some(c) = &mut chain {
        if (c.spec().bandpass.fs - cfg.fs_loop).abs() > 1e-9 * cfg.fs_loop {
            return Err(Error::param(
                "feedback.fs",
                "chain sample rate must equal sim.fs_loop",
            ));
        }
        c.reset();
        c.reseed(cfg.noise_seed.unwrap_or(0));
    }
    if cfg.mode == Mode::Adiabatic && adiabatic_condition(sys) > 0.1 {
        warn!(
            "adiabatic approximation questionable: gamma_Xe |B0| q T_Rb = {:.3}",
            adiabatic_condition(sys)
        );
    }

    let rates = Rates::new(sys);
    let slaved = Slaved::new(&rates);
    let substeps = cfg.substeps()?;
    let n_loop = (cfg.duration * cfg.fs_loop).round() as usize;
    let probe = cfg.probe.factor(sys);
    let limit_rb = 10.0 * sys.rb.m0;
    let limit_xe = 10.0 * sys.xe.m0;

    let mut m_xe = (Vec3::Z * sys.xe.m0).rotate_x(cfg.initial_tip_xe.to_radians());
    let mut m_rb = match cfg.mode {
        Mode::Full => sys
            .rb_equilibrium()
            .rotate_x(cfg.initial_tip_rb.to_radians()),
        Mode::Adiabatic => slaved.solve(m_xe),
    };

    let n_rec = n_loop.div_ceil(cfg.record_decimation);
    let mut rec: Vec<Vec<f64>> = (0..CHANNELS.len())
        .map(|_| Vec::with_capacity(n_rec))
        .collect();

    for k in 0..n_loop {
        let t = k as f64 / cfg.fs_loop;
        let signal = probe * m_rb.x;
        let drive = match &mut chain {
            Some(c) => c.feedback_step(signal),
            None => 0.0,
        };
        if k % cfg.record_decimation == 0 {
            for (buf, v) in rec.iter_mut().zip([
                m_rb.x, m_rb.y, m_rb.z, m_xe.x, m_xe.y, m_xe.z, drive, signal,
            ]) {
                buf.push(v);
            }
        }
        match cfg.mode {
            Mode::Full => {
                let mut y = Pair(m_rb, m_xe);
                for _ in 0..substeps {
                    y = rk4(y, cfg.dt, |Pair(rb, xe)| {
                        Pair(rates.d_rb(rb, xe), rates.d_xe(rb, xe, drive))
                    });
                }
                m_rb = y.0;
                m_xe = y.1;
            }
            Mode::Adiabatic => {
                for _ in 0..substeps {
                    m_xe = rk4(m_xe, cfg.dt, |xe| rates.d_xe(slaved.solve(xe), xe, drive));
                }
                m_rb = slaved.solve(m_xe);
            }
        }
        let t_next = t + 1.0 / cfg.fs_loop;
        if !(m_rb.is_finite() && m_xe.is_finite()) {
            return Err(Error::NonFinite { t: t_next });
        }
        let (nrb, nxe) = (m_rb.norm(), m_xe.norm());
        if (limit_rb > 0.0 && nrb > limit_rb) || (limit_xe > 0.0 && nxe > limit_xe) {
            let ratio = (nrb / sys.rb.m0.max(f64::MIN_POSITIVE))
                .max(nxe / sys.xe.m0.max(f64::MIN_POSITIVE));
            return Err(Error::UnstableLoop { t: t_next, ratio });
        }
    }

    let mut ts = TimeSeries::new(cfg.fs_loop / cfg.record_decimation as f64, 0.0)?;
    for (name, data) in CHANNELS.iter().zip(rec) {
        ts.add_channel(name, data)?;
    }
    Ok(ts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::bloch_rhs;

    fn precession_only() -> SystemParams {
        let mut sys = SystemParams::default();
        sys.coupling.kappa = 0.0;
        for s in [&mut sys.rb, &mut sys.xe] {
            s.t1 = f64::INFINITY;
            s.t2 = f64::INFINITY;
        }
        sys
    }

    /// Xe error after one precession period against the analytic rotation.
    fn one_period_error(steps: usize) -> f64 {
        let sys = precession_only();
        let b = sys.field.b0.z;
        let period = 1.0 / (sys.xe.gamma * b);
        let m0 = sys.xe.m0;
        let mut st = SpinState {
            m_rb: Vec3::ZERO,
            m_xe: Vec3::X * m0,
            t: 0.0,
        };
        let dt = period / steps as f64;
        for _ in 0..steps {
            st = rk4_step(&st, &sys, 0.0, dt).unwrap();
        }
        (st.m_xe - Vec3::X * m0).norm() / m0
    }

    #[test]
    fn rk4_matches_analytic_rotation() {
        assert!(one_period_error(10_000) < 1e-8);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let ratio = one_period_error(50) / one_period_error(100);
        assert!((ratio - 16.0).abs() < 3.0, "{ratio}");
    }

    #[test]
    fn rk4_keeps_equilibrium() {
        let sys = SystemParams::default();
        let st = SpinState::equilibrium(&sys);
        let next = rk4_step(&st, &sys, 0.0, 1e-5).unwrap();
        assert_eq!(next.m_rb, st.m_rb);
        assert_eq!(next.m_xe, st.m_xe);
    }

    #[test]
    fn rk4_reports_non_finite() {
        let sys = SystemParams::default();
        let st = SpinState::equilibrium(&sys);
        assert!(rk4_step(&st, &sys, f64::INFINITY, 1e-5).is_err());
        assert!(rk4_step(&st, &sys, 0.0, 0.0).is_err());
    }

    #[test]
    fn rhs_matches_finite_difference_of_reference_solution() {
        // Central difference of a fine RK4 reference trajectory at t = 0 with
        // Xe tipped 90 deg. The reference integrates the displacement from the
        // initial state so the difference quotient does not cancel digits.
        let sys = SystemParams::default();
        let st = SpinState {
            m_rb: Vec3::Z * sys.rb.m0,
            m_xe: Vec3::X * sys.xe.m0,
            t: 0.0,
        };
        let rates = Rates::new(&sys);
        let h = 5e-11;
        let advance = |step: f64| {
            let mut y = Pair(Vec3::ZERO, Vec3::ZERO);
            for _ in 0..8 {
                y = rk4(y, step / 8.0, |Pair(a, b)| {
                    let d = rates.full(st.m_rb + a, st.m_xe + b, 0.0);
                    Pair(d.d_rb, d.d_xe)
                });
            }
            y
        };
        let (fwd, back) = (advance(h), advance(-h));
        let d = bloch_rhs(&st, &sys, 0.0).unwrap();
        let fd_rb = (fwd.0 - back.0) * (1.0 / (2.0 * h));
        let fd_xe = (fwd.1 - back.1) * (1.0 / (2.0 * h));
        let e_rb = (fd_rb - d.d_rb).norm() / d.d_rb.norm();
        let e_xe = (fd_xe - d.d_xe).norm() / d.d_xe.norm();
        assert!(e_rb < 1e-9, "rb {e_rb}");
        assert!(e_xe < 1e-9, "xe {e_xe}");
    }

    #[test]
    fn adiabatic_rb_longitudinal_only() {
        let sys = SystemParams::default();
        let m = adiabatic_rb(Vec3::ZERO, &sys).unwrap();
        assert_eq!(m, Vec3::Z * sys.rb.m0);
    }

    #[test]
    fn adiabatic_rb_is_fixed_point() {
        let sys = SystemParams::default();
        for xe in [
            Vec3::X * sys.xe.m0,
            Vec3::new(0.3, -0.7, 0.5) * sys.xe.m0,
            Vec3::new(-1.0, 0.2, -0.1) * sys.xe.m0,
        ] {
            let rb = adiabatic_rb(xe, &sys).unwrap();
            let d = Rates::new(&sys).d_rb(rb, xe);
            let scale = Rates::new(&sys).rb_r1 * sys.rb.m0;
            assert!(d.norm() < 1e-12 * scale, "{:?}", d);
        }
        let mut s = sys;
        s.rb.t1 = 0.0;
        assert!(adiabatic_rb(Vec3::ZERO, &s).is_err());
    }

    #[test]
    fn adiabatic_slope_matches_full_model() {
        // Oracle: hold a small static transverse Xe field and let the full
        // Rb equation relax to its steady state.
        let sys = SystemParams::default();
        let rates = Rates::new(&sys);
        let small = 1e-3 * sys.xe.m0;
        let xe = Vec3::new(small, 0.0, sys.xe.m0);
        let mut rb = Vec3::Z * sys.rb.m0;
        let tau = 1.0 / rates.rb_r2;
        let dt = tau / 50.0;
        for _ in 0..(50 * 60) {
            rb = rk4(rb, dt, |r| rates.d_rb(r, xe));
        }
        let slaved = adiabatic_rb(xe, &sys).unwrap();
        let full_slope = rb.transverse() / small;
        let slope = slaved.transverse() / small;
        assert!(((slope - full_slope) / full_slope).abs() < 0.01);
        let slaved2 = adiabatic_rb(Vec3::new(2.0 * small, 0.0, sys.xe.m0), &sys).unwrap();
        let lin = slaved2.transverse() / slaved.transverse();
        assert!((lin - 2.0).abs() < 1e-3, "{lin}");
    }

    #[test]
    fn probe_gain_reads_m0_at_full_tip() {
        let sys = SystemParams::default();
        let g = probe_gain(&sys);
        assert!((g * rb_full_scale(&sys) - sys.rb.m0).abs() < 1e-12 * sys.rb.m0);
    }

    #[test]
    fn config_validation() {
        let mut c = SimConfig::new(Mode::Adiabatic, LoopMode::Open, 1.0);
        assert!(c.validate().is_ok());
        c.dt = 3e-4;
        assert!(c.validate().is_err());
        let mut c = SimConfig::new(Mode::Full, LoopMode::Open, 1.0);
        c.initial_tip_xe = 190.0;
        assert!(c.validate().is_err());
        let sys = SystemParams::default();
        let c = SimConfig::new(Mode::Adiabatic, LoopMode::Closed, 1.0);
        assert!(run(&sys, None, &c).is_err());
    }

    #[test]
    fn open_loop_precession_frequency() {
        let sys = SystemParams::default();
        let cfg = SimConfig::new(Mode::Adiabatic, LoopMode::Open, 2.0);
        let ts = run(&sys, None, &cfg).unwrap();
        let x = ts.channel("mx_xe").unwrap();
        // count upward zero crossings
        let n = x.windows(2).filter(|w| w[0] < 0.0 && w[1] >= 0.0).count() as f64;
        let f = sys.xe_open_loop_frequency();
        assert!((n - 2.0 * f).abs() <= 1.0, "{n}");
    }
}
