//! Physical model of the Rb-Xe dual-spin system.
//!
//! Units throughout: Gauss, seconds, Hz. Gyromagnetic ratios are stored as
//! `gamma / 2pi` in Hz/G, and magnetizations are stored in field-equivalent
//! Gauss so that the field one species exerts on the other is simply
//! `lambda * M` with a dimensionless enhancement factor `lambda`.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Tesla per Gauss.
pub const TESLA_PER_GAUSS: f64 = 1e-4;

/// Three-component real vector in Gauss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Magnitude of the transverse (x, y) part.
    #[inline]
    pub fn transverse(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotates the vector about the x axis by `angle` radians (right-handed).
    pub fn rotate_x(self, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        Vec3::new(self.x, c * self.y - s * self.z, s * self.y + c * self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Bloch parameters of one spin species.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeciesParams {
    /// Gyromagnetic ratio over 2 pi, Hz/G.
    pub gamma: f64,
    /// Longitudinal relaxation time, s.
    pub t1: f64,
    /// Transverse relaxation time, s.
    pub t2: f64,
    /// Equilibrium longitudinal magnetization, field-equivalent G.
    pub m0: f64,
}

impl SpeciesParams {
    /// 87Rb with a strongly overdamped transverse response.
    ///
    /// `m0 = 0.02 uG` gives a Rb field of `lambda * m0 = 0.084 mG` on the Xe
    /// spins at the default `kappa`.
    pub fn rubidium() -> Self {
        SpeciesParams {
            gamma: 7.0e5,
            t1: 0.5e-6,
            t2: 0.5e-6,
            m0: 2.0e-8,
        }
    }

    /// 129Xe: 11.78 MHz/T, 10 s coherence time, `lambda * m0 = 0.1 mG`.
    pub fn xenon129() -> Self {
        SpeciesParams {
            gamma: 1178.0,
            t1: 10.0,
            t2: 10.0,
            m0: 1.0e-4 / enhancement_factor(500.0),
        }
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        let name = |k: &str| format!("{prefix}.{k}");
        finite(&name("gamma"), self.gamma)?;
        if self.gamma == 0.0 {
            return Err(Error::param(name("gamma"), "must be nonzero"));
        }
        positive(&name("t1"), self.t1)?;
        positive(&name("t2"), self.t2)?;
        if self.t2 > 2.0 * self.t1 {
            return Err(Error::param(name("t2"), "must not exceed 2 * t1"));
        }
        finite(&name("m0"), self.m0)?;
        if self.m0 < 0.0 {
            return Err(Error::param(name("m0"), "must be >= 0"));
        }
        Ok(())
    }
}

/// Spin-exchange coupling between the two species.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingParams {
    /// Fermi-contact enhancement.
    pub kappa: f64,
    /// Slowing-down factor of the alkali spins.
    pub q: f64,
}

impl Default for CouplingParams {
    fn default() -> Self {
        CouplingParams {
            kappa: 500.0,
            q: 5.0,
        }
    }
}

impl CouplingParams {
    pub fn lambda(&self) -> f64 {
        enhancement_factor(self.kappa)
    }

    pub fn validate(&self) -> Result<()> {
        finite("coupling.kappa", self.kappa)?;
        if self.kappa < 0.0 {
            return Err(Error::param("coupling.kappa", "must be >= 0"));
        }
        finite("coupling.q", self.q)?;
        if self.q < 1.0 {
            return Err(Error::param("coupling.q", "must be >= 1"));
        }
        Ok(())
    }
}

/// Static bias field and the direction of the feedback coil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldConfig {
    pub b0: Vec3,
    pub drive_axis: Vec3,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            b0: Vec3::new(0.0, 0.0, 0.030),
            drive_axis: Vec3::Y,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.b0.is_finite() {
            return Err(Error::param("field.b0", "must be finite"));
        }
        if !self.drive_axis.is_finite() || (self.drive_axis.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::param("field.drive_axis", "must be a unit vector"));
        }
        Ok(())
    }
}

/// Helicity of the pump light, which sets the sign of the Rb polarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pump {
    #[default]
    SigmaPlus,
    SigmaMinus,
}

impl Pump {
    pub fn sign(self) -> f64 {
        match self {
            Pump::SigmaPlus => 1.0,
            Pump::SigmaMinus => -1.0,
        }
    }
}

impl std::str::FromStr for Pump {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma_plus" => Ok(Pump::SigmaPlus),
            "sigma_minus" => Ok(Pump::SigmaMinus),
            _ => Err(Error::param(
                "rb.pump",
                format!("`{s}` is not sigma_plus|sigma_minus"),
            )),
        }
    }
}

impl std::fmt::Display for Pump {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pump::SigmaPlus => "sigma_plus",
            Pump::SigmaMinus => "sigma_minus",
        })
    }
}

/// Complete parameter set of the coupled system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    pub rb: SpeciesParams,
    pub xe: SpeciesParams,
    pub coupling: CouplingParams,
    pub field: FieldConfig,
    /// Reversing the pump flips the Rb equilibrium to `-M0_Rb z`.
    pub pump: Pump,
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            rb: SpeciesParams::rubidium(),
            xe: SpeciesParams::xenon129(),
            coupling: CouplingParams::default(),
            field: FieldConfig::default(),
            pump: Pump::SigmaPlus,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        self.rb.validate("rb")?;
        self.xe.validate("xe")?;
        self.coupling.validate()?;
        self.field.validate()
    }

    pub fn lambda(&self) -> f64 {
        self.coupling.lambda()
    }

    /// Equilibrium Rb magnetization, `+-M0_Rb z` depending on the pump.
    pub fn rb_equilibrium(&self) -> Vec3 {
        Vec3::Z * (self.pump.sign() * self.rb.m0)
    }

    /// Undriven Xe precession frequency including the longitudinal Rb field,
    /// i.e. `gamma_Xe * |B0 + lambda * M0_Rb z|`.
    pub fn xe_open_loop_frequency(&self) -> f64 {
        let b = self.field.b0 + self.rb_equilibrium() * self.lambda();
        self.xe.gamma.abs() * b.norm()
    }
}

/// Magnetizations of both species at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinState {
    pub m_rb: Vec3,
    pub m_xe: Vec3,
    pub t: f64,
}

impl SpinState {
    /// Both species fully polarized: Xe along +z, Rb along the pump sign.
    pub fn equilibrium(sys: &SystemParams) -> Self {
        SpinState {
            m_rb: sys.rb_equilibrium(),
            m_xe: Vec3::Z * sys.xe.m0,
            t: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.m_rb.is_finite() && self.m_xe.is_finite() && self.t.is_finite()
    }

    /// True when neither magnetization exceeds its equilibrium length by more
    /// than a relative 1e-6.
    pub fn within_bounds(&self, sys: &SystemParams) -> bool {
        const EPS: f64 = 1e-6;
        self.m_rb.norm() <= sys.rb.m0 * (1.0 + EPS) && self.m_xe.norm() <= sys.xe.m0 * (1.0 + EPS)
    }
}

/// Time derivative of a [`SpinState`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpinRates {
    pub d_rb: Vec3,
    pub d_xe: Vec3,
}

/// `lambda = 8 pi kappa / 3`.
pub fn enhancement_factor(kappa: f64) -> f64 {
    8.0 * PI * kappa / 3.0
}

/// Signed precession frequency in Hz for `gamma` in Hz/G and `bz` in G.
pub fn larmor_frequency(gamma: f64, bz: f64) -> f64 {
    gamma * bz
}

/// Right-hand side of the coupled Bloch equations.
///
/// `drive_by` is the feedback field along the drive axis (normally y). It acts
/// on the Xe spins only; the caller is responsible for producing it.
pub fn bloch_rhs(state: &SpinState, sys: &SystemParams, drive_by: f64) -> Result<SpinRates> {
    if !state.is_finite() {
        return Err(Error::NonFinite { t: state.t });
    }
    if !drive_by.is_finite() {
        return Err(Error::param("drive_by", "must be finite"));
    }
    Ok(Rates::new(sys).full(state.m_rb, state.m_xe, drive_by))
}

/// Gain at which the feedback field `G * M0_Rb` reaches `lambda * M0_Xe / q`.
pub fn threshold_gain(sys: &SystemParams) -> Result<f64> {
    if sys.rb.m0 == 0.0 {
        return Err(Error::param(
            "rb.m0",
            "threshold gain undefined for M0_Rb = 0",
        ));
    }
    Ok(sys.lambda() * sys.xe.m0 / (sys.coupling.q * sys.rb.m0))
}

/// Precomputed angular rates used by the integrators.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Rates {
    pub b0: Vec3,
    pub axis: Vec3,
    pub lambda: f64,
    /// 2 pi gamma_Rb / q, rad/(s G).
    pub w_rb: f64,
    pub w_xe: f64,
    pub rb_r1: f64,
    pub rb_r2: f64,
    pub xe_r1: f64,
    pub xe_r2: f64,
    pub rb_m0: f64,
    pub xe_m0: f64,
}

impl Rates {
    pub fn new(sys: &SystemParams) -> Self {
        let q = sys.coupling.q;
        Rates {
            b0: sys.field.b0,
            axis: sys.field.drive_axis,
            lambda: sys.lambda(),
            w_rb: 2.0 * PI * sys.rb.gamma / q,
            w_xe: 2.0 * PI * sys.xe.gamma,
            rb_r1: 1.0 / (q * sys.rb.t1),
            rb_r2: 1.0 / (q * sys.rb.t2),
            xe_r1: 1.0 / sys.xe.t1,
            xe_r2: 1.0 / sys.xe.t2,
            rb_m0: sys.pump.sign() * sys.rb.m0,
            xe_m0: sys.xe.m0,
        }
    }

    #[inline]
    pub fn d_rb(&self, m_rb: Vec3, m_xe: Vec3) -> Vec3 {
        let b = self.b0 + m_xe * self.lambda;
        let relax = Vec3::new(
            -m_rb.x * self.rb_r2,
            -m_rb.y * self.rb_r2,
            (self.rb_m0 - m_rb.z) * self.rb_r1,
        );
        m_rb.cross(b) * self.w_rb + relax
    }

    #[inline]
    pub fn d_xe(&self, m_rb: Vec3, m_xe: Vec3, drive: f64) -> Vec3 {
        let b = self.b0 + m_rb * self.lambda + self.axis * drive;
        let relax = Vec3::new(
            -m_xe.x * self.xe_r2,
            -m_xe.y * self.xe_r2,
            (self.xe_m0 - m_xe.z) * self.xe_r1,
        );
        m_xe.cross(b) * self.w_xe + relax
    }

    #[inline]
    pub fn full(&self, m_rb: Vec3, m_xe: Vec3, drive: f64) -> SpinRates {
        SpinRates {
            d_rb: self.d_rb(m_rb, m_xe),
            d_xe: self.d_xe(m_rb, m_xe, drive),
        }
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, "must be finite"))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    finite(name, v)?;
    if v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, "must be > 0"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_relax(mut sys: SystemParams) -> SystemParams {
        for s in [&mut sys.rb, &mut sys.xe] {
            s.t1 = f64::INFINITY;
            s.t2 = f64::INFINITY;
        }
        sys
    }

    #[test]
    fn enhancement_factor_values() {
        assert!((enhancement_factor(500.0) - 4188.79).abs() < 0.01);
        assert_eq!(enhancement_factor(0.0), 0.0);
        assert!((enhancement_factor(3.0 / (8.0 * PI)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn larmor_frequency_values() {
        // 11.78 MHz/T = 1.178 Hz/mG, 30 mG
        assert!((larmor_frequency(1178.0, 0.030) - 35.34).abs() < 1e-9);
        assert_eq!(larmor_frequency(1178.0, 0.0), 0.0);
        assert_eq!(larmor_frequency(1.0, -1.0), -1.0);
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let sys = SystemParams::default();
        let d = bloch_rhs(&SpinState::equilibrium(&sys), &sys, 0.0).unwrap();
        assert_eq!(d, SpinRates::default());
    }

    #[test]
    fn pure_precession_direction() {
        let mut sys = no_relax(SystemParams::default());
        sys.coupling.kappa = 0.0;
        let b = sys.field.b0.z;
        let m0 = sys.xe.m0;
        let st = SpinState {
            m_rb: Vec3::ZERO,
            m_xe: Vec3::X * m0,
            t: 0.0,
        };
        let d = bloch_rhs(&st, &sys, 0.0).unwrap();
        let expect = 2.0 * PI * sys.xe.gamma * m0 * b;
        assert_eq!(d.d_xe.x, 0.0);
        assert!((d.d_xe.y + expect).abs() < 1e-15 * expect);
        assert_eq!(d.d_xe.z, 0.0);
    }

    #[test]
    fn rejects_non_finite_state() {
        let sys = SystemParams::default();
        let mut st = SpinState::equilibrium(&sys);
        st.m_xe.x = f64::NAN;
        assert!(matches!(
            bloch_rhs(&st, &sys, 0.0),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn drive_enters_xe_block_only() {
        let sys = SystemParams::default();
        let st = SpinState {
            m_rb: Vec3::new(1e-9, -2e-9, 1.9e-8),
            m_xe: Vec3::new(1e-8, 3e-9, 2e-8),
            t: 0.0,
        };
        let b1 = 3.7e-5;
        let d0 = bloch_rhs(&st, &sys, 0.0).unwrap();
        let d1 = bloch_rhs(&st, &sys, b1).unwrap();
        assert_eq!(d1.d_rb, d0.d_rb);
        let expect = st.m_xe.cross(Vec3::Y * b1) * (2.0 * PI * sys.xe.gamma);
        let diff = d1.d_xe - d0.d_xe - expect;
        assert!(diff.norm() <= 1e-12 * expect.norm());
    }

    #[test]
    fn threshold_gain_values() {
        let sys = SystemParams::default();
        // lambda M0_Xe = 0.1 mG, q = 5, M0_Rb = 0.02 uG
        assert!((threshold_gain(&sys).unwrap() - 1000.0).abs() < 1e-9);

        let mut s = sys;
        s.xe.m0 = 0.0;
        assert_eq!(threshold_gain(&s).unwrap(), 0.0);

        let mut s = sys;
        s.rb.m0 *= 2.0;
        assert!((threshold_gain(&s).unwrap() - 500.0).abs() < 1e-9);

        let mut s = sys;
        s.rb.m0 = 0.0;
        assert!(threshold_gain(&s).is_err());
    }

    #[test]
    fn species_validation() {
        let mut s = SpeciesParams::xenon129();
        s.t2 = 2.5 * s.t1;
        assert!(s.validate("xe").is_err());
        let mut c = CouplingParams::default();
        c.q = 0.5;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("coupling.q"), "{err}");
    }

    #[test]
    fn open_loop_frequency_includes_rb_field() {
        let sys = SystemParams::default();
        let f = sys.xe_open_loop_frequency();
        let shift = sys.xe.gamma * sys.lambda() * sys.rb.m0;
        assert!((f - 35.34 - shift).abs() < 1e-9);
        assert!((shift - 0.0987).abs() < 1e-3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec3() -> impl Strategy<Value = Vec3> {
            (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y, z)| Vec3::new(x, y, z))
        }

        proptest! {
            #[test]
            fn norm_conserved_without_relaxation(
                rb in vec3(), xe in vec3(), b0 in vec3(), drive in -1e-3f64..1e-3,
            ) {
                let mut sys = no_relax(SystemParams::default());
                sys.field.b0 = b0 * 0.05;
                let st = SpinState { m_rb: rb * 2e-8, m_xe: xe * 2e-8, t: 0.0 };
                let d = bloch_rhs(&st, &sys, drive).unwrap();
                let scale_rb = st.m_rb.norm() * d.d_rb.norm() + 1e-300;
                let scale_xe = st.m_xe.norm() * d.d_xe.norm() + 1e-300;
                prop_assert!((st.m_rb.dot(d.d_rb) / scale_rb).abs() < 1e-12);
                prop_assert!((st.m_xe.dot(d.d_xe) / scale_xe).abs() < 1e-12);
            }

            #[test]
            fn threshold_gain_scaling(
                k in 1.0f64..2000.0, q in 1.0f64..20.0,
                m_rb in 1e-9f64..1e-6, m_xe in 1e-9f64..1e-6, a in 0.1f64..10.0,
            ) {
                let mut sys = SystemParams::default();
                sys.coupling.kappa = k;
                sys.coupling.q = q;
                sys.rb.m0 = m_rb;
                sys.xe.m0 = m_xe;
                let g = threshold_gain(&sys).unwrap();
                let rel = |x: f64, y: f64| ((x - y) / y).abs() < 1e-12;

                let mut s = sys; s.rb.m0 *= a;
                prop_assert!(rel(threshold_gain(&s).unwrap(), g / a));
                let mut s = sys; s.xe.m0 *= a;
                prop_assert!(rel(threshold_gain(&s).unwrap(), g * a));
                let mut s = sys; s.coupling.kappa *= a;
                prop_assert!(rel(threshold_gain(&s).unwrap(), g * a));
                let mut s = sys; s.coupling.q *= a.max(1.0);
                prop_assert!(rel(threshold_gain(&s).unwrap(), g / a.max(1.0)));
            }
        }
    }
}
