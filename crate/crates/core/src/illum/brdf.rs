use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::math::DVec3;

/// Analytic reflectance models for the reference renderer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Brdf {
    Lambert,
    /// Lobe `max(r·l, 0)^exponent` around the mirrored view direction.
    Phong { exponent: f64 },
    /// GGX microfacet with Smith masking and Schlick Fresnel (F0 = 0.04);
    /// the distribution width is `roughness²`.
    Ggx { roughness: f64 },
}

const F0: f64 = 0.04;

impl Brdf {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Brdf::Ggx { roughness } if !(roughness > 0.0) => Err(Error::invalid(format!("GGX roughness {roughness} must be positive"))),
            Brdf::Phong { exponent } if !(exponent > 0.0) => Err(Error::invalid(format!("Phong exponent {exponent} must be positive"))),
            _ => Ok(()),
        }
    }

    /// Reflectance `f_r(v, l)` (without the cosine factor) for unit vectors
    /// pointing away from the surface.
    pub fn eval(&self, n: DVec3, v: DVec3, l: DVec3, albedo: [f64; 3]) -> Result<[f64; 3]> {
        self.validate()?;
        let nl = n.dot(l);
        let nv = n.dot(v);
        if nl <= 0.0 || nv <= 0.0 {
            return Ok([0.0; 3]);
        }
        let scalar = match *self {
            Brdf::Lambert => 1.0 / PI,
            Brdf::Phong { exponent } => {
                let r = 2.0 * nv * n - v;
                r.dot(l).max(0.0).powf(exponent)
            }
            Brdf::Ggx { roughness } => {
                let a2 = (roughness * roughness).powi(2);
                let h = (v + l).normalize();
                let nh = n.dot(h).max(0.0);
                let d = a2 / (PI * (nh * nh * (a2 - 1.0) + 1.0).powi(2));
                let g1 = |c: f64| 2.0 * c / (c + (a2 + (1.0 - a2) * c * c).sqrt());
                let f = F0 + (1.0 - F0) * (1.0 - v.dot(h).max(0.0)).powi(5);
                d * g1(nl) * g1(nv) * f / (4.0 * nl * nv)
            }
        };
        Ok(albedo.map(|a| a * scalar))
    }
}
