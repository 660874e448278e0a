//! OLAT teacher and envmap student texture decoders with their joint encoders.

mod config;
mod net;

pub use config::{JointConfig, ModelManifest, Scale, StudentConfig, TeacherConfig, LAMBDA_B, LAMBDA_S, LEAKY_SLOPE};
pub use net::{joint_encode, student_forward, student_head, teacher_forward, teacher_head, teacher_input};
