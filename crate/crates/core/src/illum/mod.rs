//! Environment maps, light rigs, OLAT aggregation, texel-aligned illumination
//! features and analytic BRDFs.

mod brdf;
mod envmap;
mod features;
mod lights;

pub use brdf::Brdf;
pub use envmap::EnvMap;
pub use features::{
    build_features, diffuse_feature, reflect_view, specular_feature, vertex_features, FeatureMap, FeatureOptions, Visibility,
    DEFAULT_SHININESS,
};
pub use lights::{env_to_rig, olat_aggregate, rgb_channel_weights, LightRig, PointLight};
