use core::ops::{Mul, Neg};

use crate::error::{Error, Result};
use crate::math;

/// A real quaternion `a + b·i + c·j + d·k`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quaternion {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Three-angle phase `(φ, θ, ψ)` of a quaternion in the factorisation
/// `q = |q| · e^{iφ} · e^{kψ} · e^{jθ}`.
///
/// Ranges: `φ ∈ [−π, π)`, `θ ∈ [−π/2, π/2]`, `ψ ∈ [−π/4, π/4]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuatPhase {
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
}

impl Quaternion {
    pub const ZERO: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    pub const ONE: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub fn conj(self) -> Self {
        Self::new(self.a, -self.b, -self.c, -self.d)
    }

    pub fn norm_sqr(self) -> f64 {
        self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d
    }

    pub fn magnitude(self) -> f64 {
        quat_magnitude(self)
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }

    pub fn components(self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    /// Rebuilds `magnitude · e^{iφ} · e^{kψ} · e^{jθ}`.
    pub fn from_polar(magnitude: f64, phase: QuatPhase) -> Self {
        let ei = Quaternion::new(math::cos(phase.phi), math::sin(phase.phi), 0.0, 0.0);
        let ek = Quaternion::new(math::cos(phase.psi), 0.0, 0.0, math::sin(phase.psi));
        let ej = Quaternion::new(math::cos(phase.theta), 0.0, math::sin(phase.theta), 0.0);
        (ei * ek * ej).scale(magnitude)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, q: Quaternion) -> Quaternion {
        let p = self;
        Quaternion::new(
            p.a * q.a - p.b * q.b - p.c * q.c - p.d * q.d,
            p.a * q.b + p.b * q.a + p.c * q.d - p.d * q.c,
            p.a * q.c - p.b * q.d + p.c * q.a + p.d * q.b,
            p.a * q.d + p.b * q.c - p.c * q.b + p.d * q.a,
        )
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        self.scale(-1.0)
    }
}

pub fn quat_magnitude(q: Quaternion) -> f64 {
    math::sqrt(q.norm_sqr())
}

/// Phase angles of a nonzero quaternion.
///
/// `ψ` and `θ` come from the closed-form angle expressions; `φ` is then
/// solved against the already-fixed `e^{kψ}·e^{jθ}` factor, which keeps the
/// reconstruction accurate near the `|ψ| = π/4` singularity where `φ` and
/// `θ` are individually ill-conditioned.
pub fn quat_phase(q: Quaternion) -> Result<QuatPhase> {
    let m = quat_magnitude(q);
    if m == 0.0 || !m.is_finite() {
        return Err(Error::ZeroQuaternion);
    }
    let n = q.scale(1.0 / m);
    let (a, b, c, d) = (n.a, n.b, n.c, n.d);

    let sin2psi = -2.0 * (b * c - a * d);
    let phi_y = 2.0 * (c * d + a * b);
    let phi_x = a * a - b * b + c * c - d * d;
    let cos2psi = math::hypot(phi_y, phi_x);
    let psi = (0.5 * math::atan2(sin2psi, cos2psi)).clamp(-core::f64::consts::FRAC_PI_4, core::f64::consts::FRAC_PI_4);

    let th_y = 2.0 * (b * d + a * c);
    let th_x = a * a + b * b - c * c - d * d;
    let theta = if th_y == 0.0 && th_x == 0.0 {
        0.0
    } else {
        0.5 * math::atan2(th_y, th_x)
    };

    let rest = Quaternion::from_polar(
        1.0,
        QuatPhase {
            phi: 0.0,
            theta,
            psi,
        },
    );
    let p = n * rest.conj();
    let mut phi = math::atan2(p.b, p.a);
    if phi >= core::f64::consts::PI {
        phi -= 2.0 * core::f64::consts::PI;
    }
    Ok(QuatPhase { phi, theta, psi })
}
