use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use proptest::prelude::*;

use super::*;
use crate::math::{DAffine3, DQuat, DVec2, DVec3, Rigid};

fn joint(name: &str, parent: Option<usize>, t: [f64; 3], dof: Option<(usize, [f64; 3])>) -> Joint {
    Joint {
        name: name.into(),
        parent,
        translation: t,
        rotation: [0.0, 0.0, 0.0, 1.0],
        dof: dof.map(|(index, axis)| Dof { index, axis }),
    }
}

/// Root at the origin, child pivot at (1, 0, 0) rotating about z.
fn two_joint(weights: Vec<Vec<(usize, f64)>>) -> Skeleton {
    Skeleton {
        pose_dim: 1,
        joints: vec![joint("root", None, [0.0; 3], None), joint("tip", Some(0), [1.0, 0.0, 0.0], Some((0, [0.0, 0.0, 1.0])))],
        weights,
    }
}

fn quad_mesh() -> CoarseMesh {
    let v = vec![DVec3::new(0.0, 0.0, 0.0), DVec3::new(1.0, 0.0, 0.0), DVec3::new(1.0, 1.0, 0.0), DVec3::new(0.0, 1.0, 0.0)];
    let uv = |i: usize| DVec2::new(v[i].x, v[i].y);
    let faces = vec![[0, 1, 2], [0, 2, 3]];
    let uvs = faces.iter().map(|f: &[u32; 3]| f.map(|i| uv(i as usize))).collect();
    CoarseMesh::new(v.clone(), faces, uvs).unwrap()
}

/// Mesh whose UVs cover the left half of the square only.
fn half_mesh() -> CoarseMesh {
    let v = vec![DVec3::new(0.0, 0.0, 0.0), DVec3::new(0.5, 0.0, 0.0), DVec3::new(0.5, 1.0, 0.0), DVec3::new(0.0, 1.0, 0.0)];
    let faces = vec![[0, 1, 2], [0, 2, 3]];
    let uvs = faces.iter().map(|f: &[u32; 3]| f.map(|i| DVec2::new(v[i as usize].x, v[i as usize].y))).collect();
    CoarseMesh::new(v.clone(), faces, uvs).unwrap()
}

#[test]
fn identity_pose_reproduces_rest() {
    let mesh = quad_mesh();
    let sk = two_joint(vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![(0, 0.3), (1, 0.7)], vec![(1, 1.0)]]);
    sk.validate().unwrap();
    let out = lbs_skin(&sk, &mesh, &Pose::rest(1)).unwrap();
    for (a, b) in out.vertices.iter().zip(&mesh.vertices) {
        assert!((*a - *b).length() < 1e-12);
    }
}

#[test]
fn rotation_about_pivot_matches_closed_form() {
    let mesh = quad_mesh();
    let sk = two_joint(vec![vec![(1, 1.0)]; 4]);
    let pose = Pose { theta: vec![FRAC_PI_2], root: Rigid::IDENTITY };
    let out = lbs_skin(&sk, &mesh, &pose).unwrap();
    let pivot = DVec3::new(1.0, 0.0, 0.0);
    for (p, r) in out.vertices.iter().zip(&mesh.vertices) {
        let d = *r - pivot;
        let expected = pivot + DVec3::new(-d.y, d.x, d.z);
        assert!((*p - expected).length() < 1e-12, "{p} vs {expected}");
    }
}

#[test]
fn opposite_translations_cancel() {
    let d = DVec3::new(0.2, -0.4, 0.9);
    let mats = [DAffine3::from_translation(d), DAffine3::from_translation(-d)];
    let rest = [DVec3::new(0.3, 0.1, 2.0)];
    let out = blend_vertices(&rest, &[vec![(0, 0.5), (1, 0.5)]], &mats);
    assert!((out[0] - rest[0]).length() < 1e-15);
}

#[test]
fn skin_rejects_wrong_pose_dim() {
    let sk = two_joint(vec![vec![(0, 1.0)]; 4]);
    assert!(matches!(lbs_skin(&sk, &quad_mesh(), &Pose::rest(3)), Err(crate::Error::ShapeMismatch { .. })));
}

#[test]
fn skeleton_validation() {
    let mut sk = two_joint(vec![vec![(0, 0.6), (1, 0.3)]]);
    assert!(sk.validate().is_err());
    sk.weights = vec![vec![(0, 1.0)]];
    sk.validate().unwrap();
    sk.joints[1].parent = Some(1);
    assert!(sk.validate().is_err());
}

#[test]
fn skeleton_json_round_trip() {
    let sk = two_joint(vec![vec![(0, 0.25), (1, 0.75)]]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sk.json");
    sk.save(&path).unwrap();
    assert_eq!(Skeleton::load(&path).unwrap(), sk);
}

#[test]
fn slerp_endpoints_are_exact() {
    let a = Pose { theta: vec![0.1, -2.0], root: Rigid::new(DQuat::from_rotation_y(0.3), DVec3::X) };
    let b = Pose { theta: vec![3.0, 1.0], root: Rigid::new(DQuat::from_rotation_z(-1.1), DVec3::Y) };
    assert_eq!(slerp_pose(&a, &b, 0.0).unwrap(), a);
    assert_eq!(slerp_pose(&a, &b, 1.0).unwrap(), b);
    assert!(slerp_pose(&a, &b, 1.5).is_err());
}

#[test]
fn slerp_halfway_is_45_degrees() {
    let a = Pose::rest(1);
    let b = Pose { theta: vec![FRAC_PI_2], root: Rigid::new(DQuat::from_rotation_x(FRAC_PI_2), DVec3::new(2.0, 0.0, 0.0)) };
    let m = slerp_pose(&a, &b, 0.5).unwrap();
    let h = FRAC_PI_4 / 2.0;
    let expected = DQuat::from_xyzw(h.sin(), 0.0, 0.0, h.cos());
    assert!(m.root.rotation.dot(expected).abs() > 1.0 - 1e-12);
    assert!((m.theta[0] - FRAC_PI_4).abs() < 1e-15);
    assert!((m.root.translation - DVec3::new(1.0, 0.0, 0.0)).length() < 1e-15);
}

#[test]
fn slerp_takes_shortest_arc() {
    let a = Pose { theta: vec![3.0], root: Rigid::IDENTITY };
    let b = Pose { theta: vec![-3.0], root: Rigid::new(-DQuat::from_rotation_z(0.4), DVec3::ZERO) };
    let m = slerp_pose(&a, &b, 0.5).unwrap();
    assert!((crate::math::wrap_angle(m.theta[0]) - std::f64::consts::PI).abs() < 1e-12);
    assert!(m.root.rotation.angle_between(DQuat::from_rotation_z(0.2)) < 1e-12);
}

#[test]
fn pose_stream_round_trip() {
    let poses = vec![
        Pose { theta: vec![0.5, -0.25], root: Rigid::new(DQuat::from_rotation_y(0.5), DVec3::new(1.0, 2.0, 3.0)) },
        Pose::rest(2),
    ];
    let mut buf = Vec::new();
    write_pose_stream(&mut buf, &poses).unwrap();
    assert_eq!(&buf[..4], b"PPS1");
    assert_eq!(buf.len(), 12 + 2 * 9 * 4);
    let back = read_pose_stream(&mut buf.as_slice(), std::path::Path::new("mem")).unwrap();
    for (p, q) in poses.iter().zip(&back) {
        assert!(p.theta.iter().zip(&q.theta).all(|(a, b)| (a - b).abs() < 1e-6));
        assert!((p.root.translation - q.root.translation).length() < 1e-6);
        assert!(p.root.rotation.angle_between(q.root.rotation) < 1e-3);
    }
    assert!(read_pose_stream(&mut &buf[..20], std::path::Path::new("mem")).is_err());
}

#[test]
fn obj_round_trip() {
    let mesh = quad_mesh();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.obj");
    mesh.save_obj(&path).unwrap();
    let back = CoarseMesh::load_obj(&path).unwrap();
    assert_eq!(back.faces, mesh.faces);
    for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
        assert!((*a - *b).length() < 1e-6);
    }
    for (a, b) in back.uv.iter().flatten().zip(mesh.uv.iter().flatten()) {
        assert!((*a - *b).length() < 1e-6);
    }
}

#[test]
fn mesh_validation_catches_bad_index_and_uv() {
    let v = vec![DVec3::ZERO, DVec3::X, DVec3::Y];
    assert!(CoarseMesh::new(v.clone(), vec![[0, 1, 5]], vec![[DVec2::ZERO; 3]]).is_err());
    assert!(CoarseMesh::new(v, vec![[0, 1, 2]], vec![[DVec2::ZERO, DVec2::X, DVec2::new(0.0, 1.5)]]).is_err());
}

#[test]
fn degenerate_face_contributes_no_normal() {
    let v = vec![DVec3::ZERO, DVec3::X, DVec3::Y, DVec3::X * 2.0];
    let uv = [DVec2::ZERO; 3];
    let m = CoarseMesh::new(v, vec![[0, 1, 2], [0, 1, 3]], vec![uv, uv]).unwrap();
    assert!((m.normals[3] - DVec3::Z).length() < 1e-12);
    assert!((m.normals[0] - DVec3::Z).length() < 1e-12);
}

#[test]
fn atlas_barycentrics_are_convex() {
    let mesh = quad_mesh();
    let atlas = UvAtlas::build(&mesh, 16).unwrap();
    assert_eq!(atlas.valid_count(), 256);
    for t in atlas.texels.iter().flatten() {
        assert!(t.bary.iter().all(|&b| b >= 0.0));
        assert!((t.bary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn raster_constant_and_affine() {
    let mesh = quad_mesh();
    let atlas = UvAtlas::build(&mesh, 12).unwrap();
    let g = rasterize_texels(&mesh, &atlas, &[2.5; 4], 1).unwrap();
    assert!(g.data.iter().all(|&x| (x - 2.5).abs() < 1e-12));
    let f = |p: DVec2| 0.7 * p.x - 1.3 * p.y + 0.2;
    let per_vertex: Vec<f64> = mesh.vertices.iter().map(|v| f(DVec2::new(v.x, v.y))).collect();
    let g = rasterize_texels(&mesh, &atlas, &per_vertex, 1).unwrap();
    for r in 0..12 {
        for c in 0..12 {
            assert!((g.at(0, r, c) - f(atlas.texel_uv(r, c))).abs() < 1e-5);
        }
    }
}

#[test]
fn raster_uncovered_texel_is_zero_and_masked() {
    let mesh = half_mesh();
    let atlas = UvAtlas::build(&mesh, 8).unwrap();
    let g = rasterize_texels(&mesh, &atlas, &[1.0; 4], 1).unwrap();
    assert!(!g.mask[7]);
    assert_eq!(g.at(0, 0, 7), 0.0);
    assert!(g.mask[0]);
    assert_eq!(atlas.nearest_valid(3, 7), Some((3, 3)));
}

#[test]
fn raster_rejects_wrong_length() {
    let mesh = quad_mesh();
    let atlas = UvAtlas::build(&mesh, 4).unwrap();
    assert!(rasterize_texels(&mesh, &atlas, &[1.0; 5], 1).is_err());
}

proptest! {
    #[test]
    fn raster_is_linear(x in prop::collection::vec(-10.0f64..10.0, 8), y in prop::collection::vec(-10.0f64..10.0, 8), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mesh = quad_mesh();
        let atlas = UvAtlas::build(&mesh, 9).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let gx = rasterize_texels(&mesh, &atlas, &x, 2).unwrap();
        let gy = rasterize_texels(&mesh, &atlas, &y, 2).unwrap();
        let gm = rasterize_texels(&mesh, &atlas, &mix, 2).unwrap();
        for i in 0..gm.data.len() {
            prop_assert!((gm.data[i] - (a * gx.data[i] + b * gy.data[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn root_transform_is_equivariant(ax in -1.0f64..1.0, ay in -1.0f64..1.0, angle in -3.0f64..3.0, t in prop::array::uniform3(-2.0f64..2.0), theta in -2.0f64..2.0) {
        let mesh = quad_mesh();
        let sk = two_joint(vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![(0, 0.4), (1, 0.6)], vec![(1, 1.0)]]);
        let g = Rigid::new(DQuat::from_axis_angle(DVec3::new(ax, ay, 1.0).normalize(), angle), DVec3::from_array(t));
        let local = lbs_skin(&sk, &mesh, &Pose { theta: vec![theta], root: Rigid::IDENTITY }).unwrap();
        let global = lbs_skin(&sk, &mesh, &Pose { theta: vec![theta], root: g }).unwrap();
        for (p, q) in local.vertices.iter().zip(&global.vertices) {
            prop_assert!((g.point(*p) - *q).length() < 1e-9);
        }
    }

    #[test]
    fn slerp_of_equal_poses_is_identity(th in prop::collection::vec(-6.0f64..6.0, 3), t in 0.0f64..1.0, angle in -3.0f64..3.0) {
        let a = Pose { theta: th, root: Rigid::new(DQuat::from_rotation_y(angle), DVec3::new(0.1, 0.2, 0.3)) };
        prop_assert_eq!(slerp_pose(&a, &a, t).unwrap(), a);
    }
}
