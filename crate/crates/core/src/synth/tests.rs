use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::illum::PointLight;
use crate::math::{DVec2, DVec3};
use crate::raymarch::{intersect_triangle, march, Camera};
use crate::primitives::VolumeTexture;
use crate::rig::{slerp_pose, CoarseMesh, Pose, UvAtlas};
use crate::tensor::Tensor;

fn hand() -> ProceduralHand {
    generate_hand(&HandParams::default(), 7).unwrap()
}

fn faces_per_capsule(h: &ProceduralHand) -> usize {
    2 * h.params.segments * h.params.rings
}

/// Parity test of `p` against the closed triangle fan of one capsule.
fn inside_capsule(mesh: &CoarseMesh, faces: std::ops::Range<usize>, p: DVec3) -> bool {
    let d = DVec3::new(0.3141, 0.8271, 0.4663).normalize();
    let hits = faces.filter(|&f| intersect_triangle(&mesh.triangle(f), p, d, 0.0, f64::INFINITY).is_some()).count();
    hits % 2 == 1
}

#[test]
fn generation_is_deterministic() {
    let a = hand();
    let b = hand();
    assert_eq!(a.rest, b.rest);
    assert_eq!(a.skeleton, b.skeleton);
    let c = generate_hand(&HandParams::default(), 8).unwrap();
    assert_ne!(a.rest.vertices, c.rest.vertices);
}

#[test]
fn default_vertex_count_and_structure() {
    let h = hand();
    let v = h.rest.vertices.len();
    assert!((1000..=4000).contains(&v), "{v} vertices");
    assert_eq!(h.capsules.len(), 16);
    assert_eq!(h.pose_dim(), 25);
    assert_eq!(h.rest.faces.len(), 16 * faces_per_capsule(&h));
    h.skeleton.validate().unwrap();
}

#[test]
fn uv_charts_are_in_unit_square_and_disjoint() {
    let h = hand();
    let per = faces_per_capsule(&h);
    let boxes: Vec<(DVec2, DVec2)> = (0..16)
        .map(|c| {
            let uv = h.rest.uv[c * per..(c + 1) * per].iter().flatten();
            uv.fold((DVec2::splat(f64::INFINITY), DVec2::splat(f64::NEG_INFINITY)), |(lo, hi), p| (lo.min(*p), hi.max(*p)))
        })
        .collect();
    for (i, a) in boxes.iter().enumerate() {
        assert!(a.0.cmpge(DVec2::ZERO).all() && a.1.cmple(DVec2::ONE).all());
        for b in &boxes[i + 1..] {
            let overlap = a.0.x < b.1.x && b.0.x < a.1.x && a.0.y < b.1.y && b.0.y < a.1.y;
            assert!(!overlap, "{a:?} overlaps {b:?}");
        }
    }
    // No two faces of one chart overlap in UV: areas add up to the chart area
    // covered by a lat-long grid.
    let area: f64 = h.rest.uv[..per]
        .iter()
        .map(|t| 0.5 * ((t[1] - t[0]).perp_dot(t[2] - t[0])).abs())
        .sum();
    let (lo, hi) = boxes[0];
    let full = (hi - lo).x * (hi - lo).y;
    assert!(area < full + 1e-12 && area > 0.8 * full, "{area} vs {full}");
}

#[test]
fn faces_wind_outward() {
    let h = hand();
    let per = faces_per_capsule(&h);
    let world = h.skeleton.world_transforms(None);
    for (c, cap) in h.capsules.iter().enumerate() {
        let inv = world[cap.joint].inverse();
        for f in c * per..(c + 1) * per {
            let [a, b, d] = h.rest.triangle(f);
            let centroid = (a + b + d) / 3.0;
            let n = h.rest.face_cross(f).normalize();
            let e = 1e-3 * cap.radius;
            assert!(cap.sdf_local(inv.point(centroid + e * n)) > cap.sdf_local(inv.point(centroid - e * n)), "capsule {c} face {f}");
        }
    }
}

#[test]
fn sdf_sign_agrees_with_mesh_interior() {
    let h = hand();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pose = h.random_pose(&mut rng, 0.6);
    let mesh = h.posed_mesh(&pose).unwrap();
    let sdf = h.sdf(&pose).unwrap();
    let b = mesh.bounds();
    let per = faces_per_capsule(&h);
    let n = 2000;
    let mut agree = 0;
    for _ in 0..n {
        let p = DVec3::new(rng.gen_range(b.min.x..b.max.x), rng.gen_range(b.min.y..b.max.y), rng.gen_range(b.min.z..b.max.z));
        let inside = (0..16).any(|c| inside_capsule(&mesh, c * per..(c + 1) * per, p));
        if inside == (sdf.eval(p) < 0.0) {
            agree += 1;
        }
    }
    assert!(agree as f64 >= 0.99 * n as f64, "{agree}/{n}");
}

#[test]
fn posed_mesh_vertices_lie_on_posed_sdf_surface() {
    let h = hand();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pose = h.random_pose(&mut rng, 1.0);
    let mesh = h.posed_mesh(&pose).unwrap();
    let sdf = h.sdf(&pose).unwrap();
    // Vertices are on their own capsule and never outside the union.
    for v in &mesh.vertices {
        assert!(sdf.eval(*v) < 1e-9);
    }
}

#[test]
fn random_poses_respect_limits() {
    let h = hand();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let p = h.random_pose(&mut rng, 1.0);
        for (i, t) in p.theta.iter().enumerate() {
            let (lo, hi) = joint_limits(i);
            assert!(*t >= lo - 1e-12 && *t <= hi + 1e-12);
        }
    }
}

fn front_camera(size: usize) -> Camera {
    Camera::look_at(DVec3::new(0.0, 0.07, 0.4), DVec3::new(0.0, 0.07, 0.0), DVec3::Y, 0.6, size, size).unwrap()
}

#[test]
fn black_rig_renders_black() {
    let scene = ReferenceScene::new(hand().rest);
    let lights = vec![PointLight { position: [0.0, 0.1, 1.0], intensity: [0.0; 3] }; 3];
    let img = scene.render(&front_camera(24), &lights, &Material::default()).unwrap();
    let plane = 24 * 24;
    assert!(img.data()[..3 * plane].iter().all(|&v| v == 0.0));
    assert!(img.data()[3 * plane..].iter().any(|&v| v == 1.0));
}

#[test]
fn lambert_sphere_matches_closed_form() {
    let sphere = crate::testutil::uv_sphere(64, 128);
    let scene = ReferenceScene::new(sphere);
    let cam = Camera::look_at(DVec3::new(0.0, 0.0, 4.0), DVec3::ZERO, DVec3::Y, 0.6, 32, 32).unwrap();
    let l = DVec3::new(0.3, 0.5, 1.0).normalize();
    let light = PointLight { position: (1e6 * l).to_array(), intensity: [0.7, 1.0, 1.3] };
    let albedo = [0.8, 0.55, 0.45];
    let img = scene.render(&cam, &[light], &Material::lambert(albedo)).unwrap();
    let hits = scene.trace(&cam);
    let plane = 32 * 32;
    let mut checked = 0;
    for (i, h) in hits.iter().enumerate() {
        let Some(h) = h else { continue };
        let n = h.point.normalize();
        let cos = n.dot(l);
        if cos < 0.2 {
            continue;
        }
        for c in 0..3 {
            let expect = GT_SCALE * albedo[c] * light.intensity[c] * cos;
            let got = img.data()[c * plane + i];
            assert!((got - expect).abs() <= 1e-2 * expect, "pixel {i} ch {c}: {got} vs {expect}");
        }
        checked += 1;
    }
    assert!(checked > 50);
}

#[test]
fn reference_render_is_linear_in_lights() {
    let h = hand();
    let scene = ReferenceScene::new(h.posed_mesh(&h.finger_over_palm()).unwrap());
    let rig = stage_rig(16, 1.0, [0.0, 0.07, 0.0], 4).unwrap();
    let (a, b) = rig.lights.split_at(7);
    let cam = front_camera(32);
    let m = Material::default();
    let both = scene.render(&cam, &rig.lights, &m).unwrap();
    let ra = scene.render(&cam, a, &m).unwrap();
    let rb = scene.render(&cam, b, &m).unwrap();
    let plane = 32 * 32;
    for i in 0..3 * plane {
        let sum = ra.data()[i] + rb.data()[i];
        assert!((both.data()[i] - sum).abs() <= 1e-5 * sum.abs().max(1.0));
    }
    let doubled: Vec<PointLight> = rig.lights.iter().map(|l| PointLight { intensity: l.intensity.map(|x| 2.0 * x), ..*l }).collect();
    let d = scene.render(&cam, &doubled, &m).unwrap();
    for i in 0..3 * plane {
        assert_eq!(d.data()[i], 2.0 * both.data()[i]);
    }
}

#[test]
fn shadowed_pixels_get_nothing_from_that_light() {
    let h = hand();
    let scene = ReferenceScene::new(h.posed_mesh(&h.finger_over_palm()).unwrap());
    let cam = front_camera(48);
    let light = DVec3::new(0.0, 0.15, 0.5);
    let mask = scene.shadow_mask(&cam, light);
    assert!(mask.iter().filter(|&&m| m).count() > 5, "finger casts no shadow on the palm");
    let img = scene.render(&cam, &[PointLight { position: light.to_array(), intensity: [1.0; 3] }], &Material::default()).unwrap();
    let plane = 48 * 48;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            assert!((0..3).all(|c| img.data()[c * plane + i] == 0.0));
        }
    }
}

fn geometry(h: &ProceduralHand, pose: &Pose, w: usize, s: usize) -> FrameGeometry {
    let atlas = UvAtlas::build(&h.rest, w * s).unwrap();
    FrameGeometry::build(h, &atlas, pose, w, s, &OpacityConfig::default()).unwrap()
}

#[test]
fn opacity_limits() {
    let h = hand();
    let pose = Pose::rest(25);
    let g = geometry(&h, &pose, 4, 4);
    let sdf = h.sdf(&pose).unwrap();
    let bw = 0.1 * mean_voxel_extent(&g.set);
    let mut far = g.set.clone();
    for c in far.centers.iter_mut() {
        *c += DVec3::new(10.0, 0.0, 0.0);
    }
    let o = opacity_from_sdf(&sdf, &far, 0.8, bw, 0.0).unwrap();
    assert!(o.data().iter().all(|&v| v < 1e-6));
    let mut deep = g.set.clone();
    for (c, s) in deep.centers.iter_mut().zip(deep.scales.iter_mut()) {
        *c = DVec3::new(0.0, 0.04, 0.0);
        *s = DVec3::splat(1e-4);
    }
    let o = opacity_from_sdf(&sdf, &deep, 0.8, bw, 0.0).unwrap();
    assert!(o.data().iter().all(|&v| (v - 0.8).abs() < 1e-5));
}

fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    inter as f64 / union.max(1) as f64
}

#[test]
fn marched_silhouette_matches_mesh() {
    let h = hand();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for pose in [Pose::rest(25), h.random_pose(&mut rng, 0.6)] {
        let g = geometry(&h, &pose, 8, 8);
        let cam = front_camera(64);
        let n = g.set.len() * 512;
        let payload = VolumeTexture::new(Tensor::full(&[g.set.len(), 3, 8, 8, 8], 1.0), g.opacity.clone()).unwrap();
        assert_eq!(payload.opacity.len(), n);
        let img = march(&g.set, &payload, &cam, &g.march).unwrap();
        let plane = 64 * 64;
        let marched: Vec<bool> = img.data()[3 * plane..].iter().map(|&a| a > 0.5).collect();
        let mesh = ReferenceScene::new(g.mesh.clone()).silhouette(&cam);
        let score = iou(&marched, &mesh);
        assert!(score >= 0.9, "IoU {score}");
    }
}

fn small_script() -> CaptureScript {
    CaptureScript {
        frames: 7,
        keyframe_interval: 3,
        lights_per_group: 5,
        cameras: CameraRing { count: 2, width: 16, height: 16, ..CameraRing::default() },
        seed: 9,
        pose_amplitude: 0.5,
        render_keyframes: false,
    }
}

#[test]
fn capture_interleaves_and_interpolates() {
    let h = hand();
    let rig = stage_rig(64, 1.0, [0.0, 0.07, 0.0], 5).unwrap();
    let ds = simulate_capture(&h, &small_script(), &rig, &Material::default()).unwrap();
    assert_eq!(ds.frames.len(), 7);
    for f in &ds.frames {
        match (&f.lighting, f.interpolation) {
            (Lighting::Full, None) => assert_eq!(f.index % 3, 0),
            (Lighting::Partial { lights }, Some((a, b, t))) => {
                assert_eq!(lights.len(), 5);
                assert!(a < f.index && f.index < b);
                assert!(matches!(ds.frames[a].lighting, Lighting::Full) && matches!(ds.frames[b].lighting, Lighting::Full));
                assert_eq!(ds.poses[f.index], slerp_pose(&ds.poses[a], &ds.poses[b], t).unwrap());
            }
            other => panic!("unexpected frame {other:?}"),
        }
    }
    assert_eq!(ds.partial_samples().len(), 4 * 2);
}

#[test]
fn capture_is_deterministic_and_round_trips() {
    let h = hand();
    let rig = stage_rig(64, 1.0, [0.0, 0.07, 0.0], 5).unwrap();
    let a = simulate_capture(&h, &small_script(), &rig, &Material::default()).unwrap();
    let b = simulate_capture(&h, &small_script(), &rig, &Material::default()).unwrap();
    assert_eq!(a.images, b.images);
    assert_eq!(a.frames, b.frames);
    let dir = tempfile::tempdir().unwrap();
    a.write(dir.path()).unwrap();
    let r = CaptureDataset::read(dir.path()).unwrap();
    assert_eq!(r.frames, a.frames);
    for (x, y) in r.poses.iter().zip(&a.poses) {
        assert!(x.theta.iter().zip(&y.theta).all(|(p, q)| (p - q).abs() < 1e-6));
    }
    assert_eq!(r.cameras, a.cameras);
    assert_eq!(r.images, a.images);
    let manifest = std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 8);
    assert!(manifest.lines().next().unwrap().contains("\"kind\":\"partial\""));
}

#[test]
fn stage_rig_groups_and_radius() {
    let rig = stage_rig(64, 2.0, [0.0; 3], 5).unwrap();
    assert_eq!(rig.len(), 64);
    for l in &rig.lights {
        assert!((l.pos().length() - 2.0).abs() < 1e-12);
    }
    assert_eq!(rig.groups().len(), 13);
}

