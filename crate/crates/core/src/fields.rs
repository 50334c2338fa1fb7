//! Analytic, compactly supported density profiles used as initial data,
//! perturbations and test fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ψ(t) = exp(-1/t)` for `t > 0`, else 0.
fn psi(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth step: 0 for `u ≤ -1`, 1 for `u ≥ 1`, C^∞ in between.
pub fn smooth_step(u: f64) -> f64 {
    let a = psi(1.0 + u);
    let b = psi(1.0 - u);
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// Standard C^∞ bump, 1 at 0 and supported in `|u| < 1`.
pub fn bump(u: f64) -> f64 {
    if u.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    } else {
        0.0
    }
}

fn dist(x: &[f64], center: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(k, v)| {
            let c = center.get(k).copied().unwrap_or(0.0);
            (v - c) * (v - c)
        })
        .sum::<f64>()
        .sqrt()
}

/// A radial (about `center`) compactly supported profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Profile {
    /// `A·(e^{-r²/σ²} - e^{-R²/σ²})₊ / (1 - e^{-R²/σ²})`: Lipschitz, support `R`.
    Gaussian {
        amplitude: f64,
        sigma: f64,
        radius: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// `A` on `r ≤ R - w`, smooth transition to 0 at `r = R + w`.
    MollifiedDisk {
        amplitude: f64,
        radius: f64,
        width: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// Smooth annulus of half-width `w` around radius `R`.
    Ring {
        amplitude: f64,
        radius: f64,
        width: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// `A·(1 - √(r²+m²)/√(R²+m²))₊`: a conical cusp rounded at scale `m`.
    Cusp {
        amplitude: f64,
        radius: f64,
        mollification: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// C^∞ bump `A·bump(r/R)`.
    Bump {
        amplitude: f64,
        radius: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    Zero,
}

impl Profile {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::domain(format!("profile parameter {name} must be positive, got {v}")))
            }
        };
        match *self {
            Profile::Gaussian { sigma, radius, .. } => {
                positive("sigma", sigma)?;
                positive("radius", radius)
            }
            Profile::MollifiedDisk { radius, width, .. } => {
                positive("radius", radius)?;
                positive("width", width)?;
                if width >= radius {
                    return Err(Error::domain("mollified disk width must be below its radius"));
                }
                Ok(())
            }
            Profile::Ring { radius, width, .. } => {
                positive("radius", radius)?;
                positive("width", width)?;
                if width >= radius {
                    return Err(Error::domain("ring width must be below its radius"));
                }
                Ok(())
            }
            Profile::Cusp { radius, mollification, .. } => {
                positive("radius", radius)?;
                if !(mollification >= 0.0) {
                    return Err(Error::domain("cusp mollification must be nonnegative"));
                }
                Ok(())
            }
            Profile::Bump { radius, .. } => positive("radius", radius),
            Profile::Zero => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Profile::Gaussian {
                amplitude,
                sigma,
                radius,
                center,
            } => {
                let r = dist(x, center);
                if r >= *radius {
                    return 0.0;
                }
                let edge = (-(radius * radius) / (sigma * sigma)).exp();
                amplitude * ((-(r * r) / (sigma * sigma)).exp() - edge) / (1.0 - edge)
            }
            Profile::MollifiedDisk {
                amplitude,
                radius,
                width,
                center,
            } => {
                let r = dist(x, center);
                amplitude * smooth_step((radius - r) / width)
            }
            Profile::Ring {
                amplitude,
                radius,
                width,
                center,
            } => amplitude * bump((dist(x, center) - radius) / width),
            Profile::Cusp {
                amplitude,
                radius,
                mollification,
                center,
            } => {
                let r = dist(x, center);
                let m2 = mollification * mollification;
                let v = 1.0 - (r * r + m2).sqrt() / (radius * radius + m2).sqrt();
                amplitude * v.max(0.0)
            }
            Profile::Bump {
                amplitude,
                radius,
                center,
            } => amplitude * bump(dist(x, center) / radius),
            Profile::Zero => 0.0,
        }
    }

    /// Radius about the origin outside which the profile vanishes.
    pub fn support_extent(&self) -> f64 {
        let c = |center: &Vec<f64>| center.iter().map(|v| v * v).sum::<f64>().sqrt();
        match self {
            Profile::Gaussian { radius, center, .. } => radius + c(center),
            Profile::MollifiedDisk {
                radius, width, center, ..
            } => radius + width + c(center),
            Profile::Ring {
                radius, width, center, ..
            } => radius + width + c(center),
            Profile::Cusp { radius, center, .. } => radius + c(center),
            Profile::Bump { radius, center, .. } => radius + c(center),
            Profile::Zero => 0.0,
        }
    }

    pub fn amplitude(&self) -> f64 {
        match *self {
            Profile::Gaussian { amplitude, .. }
            | Profile::MollifiedDisk { amplitude, .. }
            | Profile::Ring { amplitude, .. }
            | Profile::Cusp { amplitude, .. }
            | Profile::Bump { amplitude, .. } => amplitude,
            Profile::Zero => 0.0,
        }
    }

    pub fn scaled(&self, factor: f64) -> Profile {
        let mut p = self.clone();
        match &mut p {
            Profile::Gaussian { amplitude, .. }
            | Profile::MollifiedDisk { amplitude, .. }
            | Profile::Ring { amplitude, .. }
            | Profile::Cusp { amplitude, .. }
            | Profile::Bump { amplitude, .. } => *amplitude *= factor,
            Profile::Zero => {}
        }
        p
    }
}
