//! Hybrid environment: a low-frequency Gaussian component set by `(W, ε_L)`
//! and an Ohmic high-frequency component set by `(η, ω_c)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this `|πTτ|` the hyperbolic brackets switch to Taylor series.
const SERIES_X: f64 = 1e-3;

/// Bath parameters, all energies in mK. `W² = 2 ε_L T` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathParams {
    w: f64,
    eps_l: f64,
    eta: f64,
    omega_c: f64,
    temperature: f64,
}

impl BathParams {
    /// Build from the line width `W`; `ε_L = W²/2T`.
    pub fn from_width(w: f64, eta: f64, omega_c: f64, temperature: f64) -> Result<Self> {
        check_common(eta, omega_c, temperature)?;
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidBath(format!("W must be positive, got {w}")));
        }
        Ok(Self {
            w,
            eps_l: w * w / (2.0 * temperature),
            eta,
            omega_c,
            temperature,
        })
    }

    /// Build from the low-frequency reorganization energy; `W = √(2 ε_L T)`.
    pub fn from_reorganization(eps_l: f64, eta: f64, omega_c: f64, temperature: f64) -> Result<Self> {
        check_common(eta, omega_c, temperature)?;
        if !(eps_l.is_finite() && eps_l > 0.0) {
            return Err(Error::InvalidBath(format!("eps_L must be positive, got {eps_l}")));
        }
        Self::from_width((2.0 * eps_l * temperature).sqrt(), eta, omega_c, temperature)
    }

    /// Build from whichever of `W`, `ε_L` is given. Both may be given only if
    /// they satisfy `W² = 2 ε_L T` to 1e-9 relative.
    pub fn new(w: Option<f64>, eps_l: Option<f64>, eta: f64, omega_c: f64, temperature: f64) -> Result<Self> {
        match (w, eps_l) {
            (Some(w), None) => Self::from_width(w, eta, omega_c, temperature),
            (None, Some(e)) => Self::from_reorganization(e, eta, omega_c, temperature),
            (Some(w), Some(e)) => {
                let b = Self::from_width(w, eta, omega_c, temperature)?;
                if (b.eps_l - e).abs() > 1e-9 * b.eps_l.max(e.abs()) {
                    return Err(Error::InvalidBath(format!(
                        "W = {w} and eps_L = {e} violate W^2 = 2 eps_L T at T = {temperature} (expected eps_L = {})",
                        b.eps_l
                    )));
                }
                Ok(b)
            }
            (None, None) => Err(Error::InvalidBath("one of W or eps_L is required".into())),
        }
    }

    /// Same bath at another temperature with `W` held fixed.
    pub fn at_temperature(&self, temperature: f64) -> Result<Self> {
        Self::from_width(self.w, self.eta, self.omega_c, temperature)
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn w2(&self) -> f64 {
        self.w * self.w
    }

    pub fn eps_l(&self) -> f64 {
        self.eps_l
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn omega_c(&self) -> f64 {
        self.omega_c
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// High-frequency reorganization energy `ηω_c/2π`.
    pub fn eps_h(&self) -> f64 {
        self.eta * self.omega_c / (2.0 * PI)
    }

    /// Total reorganization energy `ε_L + ε_H`.
    pub fn eps_total(&self) -> f64 {
        self.eps_l + self.eps_h()
    }

    /// Non-fatal validity warnings.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.omega_c < 10.0 * self.temperature {
            out.push(format!(
                "omega_c = {} mK is below 10 T = {} mK; the Ohmic closed forms assume omega_c >> T",
                self.omega_c,
                10.0 * self.temperature
            ));
        }
        out
    }

    /// Ohmic spectrum `ηω/(1 − e^{−ω/T})·e^{−|ω|/ω_c}`, with limit `ηT` at 0.
    pub fn s_high(&self, omega: f64) -> f64 {
        let t = self.temperature;
        let planck = if omega == 0.0 {
            t
        } else {
            let x = -(-omega / t).exp_m1();
            if x.is_infinite() {
                0.0
            } else {
                omega / x
            }
        };
        self.eta * planck * (-omega.abs() / self.omega_c).exp()
    }

    /// `f_L(τ) = iε_Lτ + W²τ²/2`.
    pub fn f_low(&self, tau: f64) -> Complex64 {
        Complex64::new(0.5 * self.w2() * tau * tau, self.eps_l * tau)
    }

    /// `g_L(τ) = −i·df_L/dτ = ε_L − iW²τ`.
    pub fn g_low(&self, tau: f64) -> Complex64 {
        Complex64::new(self.eps_l, -self.w2() * tau)
    }

    /// `f_H(τ) = (η/2π)·ln[(1 + iω_cτ)·sinh(πTτ)/(πTτ)]`.
    pub fn f_high(&self, tau: f64) -> Complex64 {
        let wt = self.omega_c * tau;
        let log_cut = Complex64::new(0.5 * (wt * wt).ln_1p(), wt.atan());
        let x = PI * self.temperature * tau;
        log_cut.scale(self.eta / (2.0 * PI)) + Complex64::new(self.eta / (2.0 * PI) * ln_sinhc(x), 0.0)
    }

    /// `g_H(τ) = −i·df_H/dτ`.
    pub fn g_high(&self, tau: f64) -> Complex64 {
        let cut = self.omega_c / Complex64::new(1.0, self.omega_c * tau);
        let x = PI * self.temperature * tau;
        cut.scale(self.eta / (2.0 * PI)) - Complex64::new(0.0, 0.5 * self.eta * self.temperature * coth_minus_inv(x))
    }

    /// `K_H(τ) = d²f_H/dτ²`.
    pub fn k_high(&self, tau: f64) -> Complex64 {
        let cut = self.omega_c / Complex64::new(1.0, self.omega_c * tau);
        let pt = PI * self.temperature;
        let x = pt * tau;
        (cut * cut + Complex64::new(pt * pt * inv_sq_minus_csch_sq(x), 0.0)).scale(self.eta / (2.0 * PI))
    }

    /// Full `f = f_L + f_H`.
    pub fn f(&self, tau: f64) -> Complex64 {
        self.f_low(tau) + self.f_high(tau)
    }

    /// Full `g = g_L + g_H`.
    pub fn g(&self, tau: f64) -> Complex64 {
        self.g_low(tau) + self.g_high(tau)
    }

    /// Full `f̈ = W² + K_H`.
    pub fn f_ddot(&self, tau: f64) -> Complex64 {
        self.k_high(tau) + self.w2()
    }

    /// Line-shape parameters for Hamming distance `a`.
    pub fn line(&self, a: f64) -> Result<LineShape> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "line shapes need a positive Hamming distance, got {a}"
            )));
        }
        Ok(LineShape {
            a,
            eps: a * self.eps_l,
            w2: a * self.w2(),
            eta: a * self.eta,
            gamma: 0.5 * a * self.eta * self.temperature,
        })
    }

    /// Gaussian envelope `√(2π/W²_mn)·exp[−(ω − ε_mn)²/2W²_mn]`.
    pub fn gaussian_envelope(&self, a: f64, omega: f64) -> Result<f64> {
        Ok(self.line(a)?.gaussian(omega))
    }

    /// Lorentzian envelope `a·S_H(ω)/(ω² + γ²_mn)`.
    pub fn lorentzian_envelope(&self, a: f64, omega: f64) -> Result<f64> {
        let line = self.line(a)?;
        Ok(line.lorentzian(self, omega))
    }
}

fn check_common(eta: f64, omega_c: f64, temperature: f64) -> Result<()> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::InvalidBath(format!("eta must be nonnegative, got {eta}")));
    }
    if !(omega_c.is_finite() && omega_c > 0.0) {
        return Err(Error::InvalidBath(format!("omega_c must be positive, got {omega_c}")));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidBath(format!("T must be positive, got {temperature}")));
    }
    Ok(())
}

/// Per-pair scaled bath parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineShape {
    pub a: f64,
    /// `ε_mn = a ε_L`
    pub eps: f64,
    /// `W²_mn = a W²`
    pub w2: f64,
    /// `η_mn = a η`
    pub eta: f64,
    /// `γ_mn = a η T/2`
    pub gamma: f64,
}

impl LineShape {
    pub fn w(&self) -> f64 {
        self.w2.sqrt()
    }

    pub fn gaussian(&self, omega: f64) -> f64 {
        let d = omega - self.eps;
        (2.0 * PI / self.w2).sqrt() * (-0.5 * d * d / self.w2).exp()
    }

    pub fn lorentzian(&self, bath: &BathParams, omega: f64) -> f64 {
        let den = omega * omega + self.gamma * self.gamma;
        if den == 0.0 {
            return 0.0;
        }
        self.a * bath.s_high(omega) / den
    }
}

/// `ln(sinh x / x)`, even in `x`.
fn ln_sinhc(x: f64) -> f64 {
    let x = x.abs();
    if x < SERIES_X {
        let x2 = x * x;
        x2 / 6.0 - x2 * x2 / 180.0
    } else if x > 20.0 {
        x - std::f64::consts::LN_2 - x.ln() + (-(-2.0 * x).exp()).ln_1p()
    } else {
        (x.sinh() / x).ln()
    }
}

/// `coth x − 1/x`, odd in `x`.
fn coth_minus_inv(x: f64) -> f64 {
    if x.abs() < SERIES_X {
        let x2 = x * x;
        x * (1.0 / 3.0 - x2 / 45.0 + 2.0 * x2 * x2 / 945.0)
    } else {
        1.0 / x.tanh() - 1.0 / x
    }
}

/// `1/x² − 1/sinh² x`, even in `x`.
fn inv_sq_minus_csch_sq(x: f64) -> f64 {
    let x = x.abs();
    if x < 1e-2 {
        let x2 = x * x;
        1.0 / 3.0 - x2 / 15.0 + 2.0 * x2 * x2 / 189.0
    } else if x > 20.0 {
        1.0 / (x * x)
    } else {
        let sh = x.sinh();
        1.0 / (x * x) - 1.0 / (sh * sh)
    }
}
