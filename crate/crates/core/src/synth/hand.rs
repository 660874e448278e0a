use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{DQuat, DVec2, DVec3, Rigid};
use crate::rig::{lbs_skin, CoarseMesh, Dof, Joint, Pose, Skeleton};

/// Pose dimension of the procedural hand.
pub const HAND_POSE_DIM: usize = 25;

/// Side of the UV slot grid; one capsule chart per slot.
const SLOTS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandParams {
    /// Latitude rings per capsule, poles excluded.
    pub rings: usize,
    /// Longitude segments per capsule.
    pub segments: usize,
    /// Uniform size multiplier (1.0 ≈ 19 cm wrist to middle fingertip).
    pub size: f64,
    /// Relative per-segment random variation of lengths and radii.
    pub jitter: f64,
    /// Chart margin inside each UV slot, as a fraction of the slot.
    pub margin: f64,
}

impl Default for HandParams {
    fn default() -> Self {
        HandParams { rings: 12, segments: 12, size: 1.0, jitter: 0.05, margin: 0.04 }
    }
}

/// A capsule rigidly attached to one joint: the segment from the joint origin
/// to `length` along its local +y, swept by `radius`, then scaled per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub name: String,
    pub joint: usize,
    pub start: f64,
    pub length: f64,
    pub radius: f64,
    pub scale: [f64; 3],
}

impl Capsule {
    /// Signed distance in the capsule's local frame; exact in sign, a lower
    /// bound in magnitude for anisotropic scale.
    pub fn sdf_local(&self, p: DVec3) -> f64 {
        let s = DVec3::from_array(self.scale);
        let q = p / s;
        let y = (q.y - self.start).clamp(0.0, self.length);
        let d = (q - DVec3::new(0.0, self.start + y, 0.0)).length() - self.radius;
        d * s.min_element()
    }

    /// Local surface point at chart coordinates `(u, v)`; `v` runs pole to pole.
    fn surface(&self, u: f64, v: f64) -> DVec3 {
        let r = self.radius;
        let cap = FRAC_PI_2 * r;
        let a = v * (2.0 * cap + self.length);
        let (y, rad) = if a < cap {
            let phi = a / r;
            (-r * phi.cos(), r * phi.sin())
        } else if a <= cap + self.length {
            (a - cap, r)
        } else {
            let phi = (a - cap - self.length) / r;
            (self.length + r * phi.sin(), r * phi.cos())
        };
        let psi = 2.0 * PI * u;
        let s = DVec3::from_array(self.scale);
        DVec3::new(rad * psi.cos(), self.start + y, -rad * psi.sin()) * s
    }
}

/// Procedural articulated hand: skeleton, rigidly skinned capsule mesh with one
/// lat-long chart per capsule, and the matching analytic SDF.
#[derive(Clone, Debug, PartialEq)]
pub struct ProceduralHand {
    pub params: HandParams,
    pub skeleton: Skeleton,
    pub rest: CoarseMesh,
    pub capsules: Vec<Capsule>,
    /// First vertex of each capsule in `rest`.
    pub vertex_ranges: Vec<std::ops::Range<usize>>,
}

struct Builder {
    joints: Vec<Joint>,
    capsules: Vec<Capsule>,
}

impl Builder {
    fn joint(&mut self, name: &str, parent: usize, t: DVec3, rot: DQuat, dof: Option<(usize, DVec3)>) -> usize {
        self.joints.push(Joint {
            name: name.into(),
            parent: Some(parent),
            translation: t.to_array(),
            rotation: rot.to_array(),
            dof: dof.map(|(index, axis)| Dof { index, axis: axis.to_array() }),
        });
        self.joints.len() - 1
    }

    fn capsule(&mut self, name: &str, joint: usize, length: f64, radius: f64, scale: [f64; 3]) {
        self.capsules.push(Capsule { name: name.into(), joint, start: 0.0, length, radius, scale });
    }
}

struct Digit {
    name: &'static str,
    base: [f64; 3],
    spread: f64,
    lengths: [f64; 3],
    radius: f64,
}

const DIGITS: [Digit; 5] = [
    Digit { name: "thumb", base: [0.030, 0.012, 0.004], spread: -0.80, lengths: [0.036, 0.030, 0.025], radius: 0.0105 },
    Digit { name: "index", base: [0.027, 0.080, 0.0], spread: -0.06, lengths: [0.040, 0.025, 0.020], radius: 0.0090 },
    Digit { name: "middle", base: [0.009, 0.083, 0.0], spread: 0.0, lengths: [0.045, 0.028, 0.021], radius: 0.0092 },
    Digit { name: "ring", base: [-0.009, 0.080, 0.0], spread: 0.06, lengths: [0.042, 0.026, 0.020], radius: 0.0088 },
    Digit { name: "pinky", base: [-0.027, 0.074, 0.0], spread: 0.14, lengths: [0.032, 0.020, 0.018], radius: 0.0078 },
];

/// Builds the hand. Palm faces +z, fingers point +y, the thumb is on +x, and
/// positive flexion curls digits toward the palm.
pub fn generate_hand(params: &HandParams, seed: u64) -> Result<ProceduralHand> {
    if params.rings < 2 || params.segments < 3 || !(params.size > 0.0) || !(0.0..0.5).contains(&params.margin) {
        return Err(Error::invalid(format!("hand params {params:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jit = |x: f64| x * params.size * (1.0 + params.jitter * rng.gen_range(-1.0..1.0));
    let (x, y, z) = (DVec3::X, DVec3::Y, DVec3::Z);
    let root = Joint {
        name: "root".into(),
        parent: None,
        translation: [0.0; 3],
        rotation: DQuat::IDENTITY.to_array(),
        dof: None,
    };
    let mut b = Builder { joints: vec![root], capsules: Vec::new() };
    let w0 = b.joint("wrist_flex", 0, DVec3::ZERO, DQuat::IDENTITY, Some((0, x)));
    let w1 = b.joint("wrist_deviation", w0, DVec3::ZERO, DQuat::IDENTITY, Some((1, z)));
    let palm = b.joint("wrist_twist", w1, DVec3::ZERO, DQuat::IDENTITY, Some((2, y)));
    let palm_r = jit(0.020);
    b.capsules.push(Capsule {
        name: "palm".into(),
        joint: palm,
        start: 0.75 * palm_r,
        length: jit(0.045),
        radius: palm_r,
        scale: [2.0, 1.0, 0.7],
    });

    for (d, digit) in DIGITS.iter().enumerate() {
        let base = DVec3::from_array(digit.base) * params.size;
        let rot = DQuat::from_rotation_z(digit.spread);
        let lengths = digit.lengths.map(&mut jit);
        let radius = jit(digit.radius);
        let i0 = 3 + 4 * d;
        let n = digit.name;
        let (mcp_parent, first_len) = if d == 0 {
            let c0 = b.joint("thumb_cmc_flex", palm, base, rot, Some((23, x)));
            let c1 = b.joint("thumb_cmc_abduct", c0, DVec3::ZERO, DQuat::IDENTITY, Some((24, z)));
            b.capsule("thumb_metacarpal", c1, lengths[0], radius, [1.0; 3]);
            (c1, lengths[0])
        } else {
            (palm, 0.0)
        };
        let mcp_at = if d == 0 { first_len * y } else { base };
        let mcp_rot = if d == 0 { DQuat::IDENTITY } else { rot };
        let a = b.joint(&format!("{n}_mcp_abduct"), mcp_parent, mcp_at, mcp_rot, Some((i0, z)));
        let f = b.joint(&format!("{n}_mcp_flex"), a, DVec3::ZERO, DQuat::IDENTITY, Some((i0 + 1, x)));
        if d == 0 {
            b.capsule("thumb_proximal", f, lengths[1], radius * 0.95, [1.0; 3]);
            let ip = b.joint("thumb_ip", f, lengths[1] * y, DQuat::IDENTITY, Some((i0 + 2, x)));
            let tw = b.joint("thumb_distal_twist", ip, DVec3::ZERO, DQuat::IDENTITY, Some((i0 + 3, y)));
            b.capsule("thumb_distal", tw, lengths[2], radius * 0.9, [1.0; 3]);
        } else {
            b.capsule(&format!("{n}_proximal"), f, lengths[0], radius, [1.0; 3]);
            let pip = b.joint(&format!("{n}_pip"), f, lengths[0] * y, DQuat::IDENTITY, Some((i0 + 2, x)));
            b.capsule(&format!("{n}_middle"), pip, lengths[1], radius * 0.93, [1.0; 3]);
            let dip = b.joint(&format!("{n}_dip"), pip, lengths[1] * y, DQuat::IDENTITY, Some((i0 + 3, x)));
            b.capsule(&format!("{n}_distal"), dip, lengths[2], radius * 0.86, [1.0; 3]);
        }
    }
    debug_assert_eq!(b.capsules.len(), SLOTS * SLOTS);

    let mut skeleton = Skeleton { pose_dim: HAND_POSE_DIM, joints: b.joints, weights: Vec::new() };
    let rest_world = skeleton.world_transforms(None);
    let (mut vertices, mut faces, mut uvs, mut ranges) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (c, cap) in b.capsules.iter().enumerate() {
        let slot = DVec2::new((c % SLOTS) as f64, (c / SLOTS) as f64);
        let chart = |u: f64, v: f64| (slot + DVec2::splat(params.margin) + DVec2::new(u, v) * (1.0 - 2.0 * params.margin)) / SLOTS as f64;
        let start = vertices.len();
        let m = &rest_world[cap.joint];
        capsule_mesh(cap, params.rings, params.segments, m, chart, &mut vertices, &mut faces, &mut uvs);
        skeleton.weights.extend((start..vertices.len()).map(|_| vec![(cap.joint, 1.0)]));
        ranges.push(start..vertices.len());
    }
    skeleton.validate()?;
    let rest = CoarseMesh::new(vertices, faces, uvs)?;
    Ok(ProceduralHand { params: params.clone(), skeleton, rest, capsules: b.capsules, vertex_ranges: ranges })
}

#[allow(clippy::too_many_arguments)]
fn capsule_mesh(
    cap: &Capsule,
    rings: usize,
    segments: usize,
    world: &Rigid,
    chart: impl Fn(f64, f64) -> DVec2,
    vertices: &mut Vec<DVec3>,
    faces: &mut Vec<[u32; 3]>,
    uvs: &mut Vec<[DVec2; 3]>,
) {
    let base = vertices.len() as u32;
    let south = base;
    vertices.push(world.point(cap.surface(0.0, 0.0)));
    for i in 1..=rings {
        let v = i as f64 / (rings + 1) as f64;
        for j in 0..segments {
            vertices.push(world.point(cap.surface(j as f64 / segments as f64, v)));
        }
    }
    let north = vertices.len() as u32;
    vertices.push(world.point(cap.surface(0.0, 1.0)));
    let idx = |i: usize, j: usize| base + 1 + ((i - 1) * segments + j % segments) as u32;
    let uv = |i: usize, j: usize| chart(j as f64 / segments as f64, i as f64 / (rings + 1) as f64);
    for j in 0..segments {
        let mid = (j as f64 + 0.5) / segments as f64;
        faces.push([south, idx(1, j + 1), idx(1, j)]);
        uvs.push([chart(mid, 0.0), uv(1, j + 1), uv(1, j)]);
        faces.push([north, idx(rings, j), idx(rings, j + 1)]);
        uvs.push([chart(mid, 1.0), uv(rings, j), uv(rings, j + 1)]);
    }
    for i in 1..rings {
        for j in 0..segments {
            faces.push([idx(i, j), idx(i, j + 1), idx(i + 1, j + 1)]);
            uvs.push([uv(i, j), uv(i, j + 1), uv(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i + 1, j)]);
            uvs.push([uv(i, j), uv(i + 1, j + 1), uv(i + 1, j)]);
        }
    }
}

/// SDF of the hand in one pose: minimum over capsules in their joint frames.
pub struct PosedSdf<'a> {
    capsules: &'a [Capsule],
    inverse: Vec<Rigid>,
}

impl PosedSdf<'_> {
    pub fn eval(&self, p: DVec3) -> f64 {
        self.capsules
            .iter()
            .map(|c| c.sdf_local(self.inverse[c.joint].point(p)))
            .fold(f64::INFINITY, f64::min)
    }
}

impl ProceduralHand {
    pub fn pose_dim(&self) -> usize {
        self.skeleton.pose_dim
    }

    pub fn posed_mesh(&self, pose: &Pose) -> Result<CoarseMesh> {
        lbs_skin(&self.skeleton, &self.rest, pose)
    }

    pub fn sdf(&self, pose: &Pose) -> Result<PosedSdf<'_>> {
        if pose.dim() != self.pose_dim() {
            return Err(Error::shape("hand pose", &[pose.dim()], &[self.pose_dim()]));
        }
        // Joint frames carry the capsules in the rest layout, so the local
        // frame of capsule c is the joint's world transform.
        let world = self.skeleton.world_transforms(Some(pose));
        Ok(PosedSdf { capsules: &self.capsules, inverse: world.iter().map(Rigid::inverse).collect() })
    }

    /// Random pose inside loose anatomical limits.
    pub fn random_pose(&self, rng: &mut impl Rng, amplitude: f64) -> Pose {
        let mut pose = Pose::rest(self.pose_dim());
        for (i, t) in pose.theta.iter_mut().enumerate() {
            let (lo, hi) = joint_limits(i);
            let mid = 0.5 * (lo + hi);
            *t = mid + amplitude * rng.gen_range(-1.0..1.0) * 0.5 * (hi - lo);
        }
        pose
    }

    /// Index finger flexed over the palm, everything else at rest.
    pub fn finger_over_palm(&self) -> Pose {
        let mut pose = Pose::rest(self.pose_dim());
        pose.theta[3 + 4 + 1] = 1.1;
        pose.theta[3 + 4 + 2] = 0.5;
        pose
    }

    /// Bounding sphere `(center, radius)` of the rest mesh.
    pub fn rest_bounds(&self) -> (DVec3, f64) {
        let b = self.rest.bounds();
        let c = 0.5 * (b.min + b.max);
        (c, 0.5 * b.extent().length())
    }
}

/// `(min, max)` angle for each pose component.
pub fn joint_limits(i: usize) -> (f64, f64) {
    match i {
        0 => (-0.5, 0.5),
        1 => (-0.3, 0.3),
        2 => (-0.6, 0.6),
        23 => (-0.3, 0.5),
        24 => (-0.4, 0.4),
        _ => match (i - 3) % 4 {
            0 => (-0.2, 0.2),
            1 => (-0.2, 1.3),
            2 => (0.0, 1.4),
            _ => (0.0, 1.0),
        },
    }
}
