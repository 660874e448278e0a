use serde::{Deserialize, Serialize};

use super::EnvMap;
use crate::error::{Error, Result};
use crate::math::DVec3;
use crate::tensor::{Scalar, Tensor};

/// A point light. Intensity is the radiance scale applied to a unit OLAT
/// render, i.e. the irradiance it delivers at the subject (no distance falloff).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointLight {
    pub position: [f64; 3],
    pub intensity: [f64; 3],
}

impl PointLight {
    pub fn pos(&self) -> DVec3 {
        DVec3::from_array(self.position)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightRig {
    pub lights: Vec<PointLight>,
    /// Lights per capture group, when grouping is used.
    #[serde(default)]
    pub group_size: Option<usize>,
}

impl LightRig {
    pub fn new(lights: Vec<PointLight>, group_size: Option<usize>) -> Result<Self> {
        let rig = LightRig { lights, group_size };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lights.iter().any(|l| l.intensity.iter().any(|&b| !(b >= 0.0))) {
            return Err(Error::invalid("light intensities must be non-negative"));
        }
        if let Some(g) = self.group_size {
            if g == 0 {
                return Err(Error::invalid("light group size must be positive"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lights.is_empty()
    }

    /// Light index ranges of the capture groups; the last may be short.
    pub fn groups(&self) -> Vec<std::ops::Range<usize>> {
        let g = self.group_size.unwrap_or(1);
        let n = self.lights.len();
        (0..n).step_by(g).map(|s| s..(s + g).min(n)).collect()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let rig: LightRig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        rig.validate()?;
        Ok(rig)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// One distant light per envmap texel at `radius · r_m`, in `EnvMap::dirs` order.
pub fn env_to_rig(env: &EnvMap, radius: f64) -> LightRig {
    let lights = env
        .dirs()
        .into_iter()
        .zip(&env.texels)
        .map(|(d, &t)| PointLight { position: (d * radius).to_array(), intensity: t })
        .collect();
    LightRig { lights, group_size: None }
}

/// Per-channel weights for a UV-stacked color map `[3S, H, W]` whose channel
/// blocks are R, G, B.
pub fn rgb_channel_weights<T: Scalar>(b: [f64; 3], s: usize) -> Vec<T> {
    (0..3 * s).map(|c| T::lit(b[c / s])).collect()
}

/// `Σ_i b_i ⊙ C_i` over UV-stacked color maps `[3S, H, W]`, summed in index order.
pub fn olat_aggregate<T: Scalar>(payloads: &[&Tensor<T>], intensities: &[[f64; 3]]) -> Result<Tensor<T>> {
    if payloads.len() != intensities.len() || payloads.is_empty() {
        return Err(Error::shape("olat_aggregate", &[payloads.len()], &[intensities.len()]));
    }
    let shape = payloads[0].shape().to_vec();
    if shape.is_empty() || shape[0] % 3 != 0 {
        return Err(Error::shape("olat_aggregate payload", &shape, &[3]));
    }
    let block = payloads[0].len() / 3;
    let mut out = Tensor::zeros(&shape);
    for (p, b) in payloads.iter().zip(intensities) {
        if p.shape() != shape.as_slice() {
            return Err(Error::shape("olat_aggregate payload", p.shape(), &shape));
        }
        for (i, (o, &x)) in out.data_mut().iter_mut().zip(p.data()).enumerate() {
            *o += T::lit(b[i / block]) * x;
        }
    }
    Ok(out)
}
