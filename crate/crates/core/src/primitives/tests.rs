use proptest::prelude::*;

use super::*;
use crate::math::{DMat3, DQuat, DVec2, DVec3, Rigid};
use crate::rig::{CoarseMesh, UvAtlas};
use crate::tensor::Tensor;

fn quad_mesh() -> CoarseMesh {
    let v = vec![DVec3::new(0.0, 0.0, 0.0), DVec3::new(1.0, 0.0, 0.0), DVec3::new(1.0, 1.0, 0.0), DVec3::new(0.0, 1.0, 0.0)];
    let faces = vec![[0, 1, 2], [0, 2, 3]];
    let uv = faces.iter().map(|f: &[u32; 3]| f.map(|i| DVec2::new(v[i as usize].x, v[i as usize].y))).collect();
    CoarseMesh::new(v, faces, uv).unwrap()
}

/// A bent strip: two quads meeting at a crease, UV-mapped to the unit square.
fn bent_mesh() -> CoarseMesh {
    let v = vec![
        DVec3::new(0.0, 0.0, 0.0),
        DVec3::new(0.5, 0.0, 0.1),
        DVec3::new(1.0, 0.0, 0.5),
        DVec3::new(0.0, 1.0, 0.0),
        DVec3::new(0.5, 1.0, 0.1),
        DVec3::new(1.0, 1.0, 0.5),
    ];
    let uvs = [(0.0, 0.0), (0.5, 0.0), (1.0, 0.0), (0.0, 1.0), (0.5, 1.0), (1.0, 1.0)].map(|(a, b)| DVec2::new(a, b));
    let faces = vec![[0, 1, 4], [0, 4, 3], [1, 2, 5], [1, 5, 4]];
    let uv = faces.iter().map(|f: &[u32; 3]| f.map(|i| uvs[i as usize])).collect();
    CoarseMesh::new(v, faces, uv).unwrap()
}

fn unit_set(rotation: DMat3, s: usize) -> PrimitiveSet {
    PrimitiveSet { w: 1, s, centers: vec![DVec3::ZERO], rotations: vec![rotation], scales: vec![DVec3::ONE] }
}

#[test]
fn quad_cells_give_cell_centers() {
    let mesh = quad_mesh();
    let atlas = UvAtlas::build(&mesh, 16).unwrap();
    let set = place_primitives(&mesh, &atlas, 2, 4, DEFAULT_SHELL).unwrap();
    assert_eq!(set.len(), 4);
    let expected = [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)];
    for (c, (x, y)) in set.centers.iter().zip(expected) {
        assert!((*c - DVec3::new(x, y, 0.0)).length() < 1e-12, "{c}");
    }
    for (r, s) in set.rotations.iter().zip(&set.scales) {
        assert!((r.z_axis - DVec3::Z).length() < 1e-12);
        assert!((r.x_axis - DVec3::X).length() < 1e-12);
        assert!((*s - DVec3::new(0.25, 0.25, 0.075)).length() < 1e-12);
    }
}

#[test]
fn paper_scale_grid_has_4096_primitives() {
    let mesh = quad_mesh();
    let atlas = UvAtlas::build(&mesh, 64).unwrap();
    let set = place_primitives(&mesh, &atlas, 64, 1, DEFAULT_SHELL).unwrap();
    assert_eq!(set.len(), 4096);
}

#[test]
fn uncovered_cells_snap_to_valid_texels() {
    let v = vec![DVec3::ZERO, DVec3::new(0.5, 0.0, 0.0), DVec3::new(0.0, 0.5, 0.0)];
    let uv = vec![[DVec2::ZERO, DVec2::new(0.5, 0.0), DVec2::new(0.0, 0.5)]];
    let mesh = CoarseMesh::new(v, vec![[0, 1, 2]], uv).unwrap();
    let atlas = UvAtlas::build(&mesh, 16).unwrap();
    let set = place_primitives(&mesh, &atlas, 2, 2, DEFAULT_SHELL).unwrap();
    for c in &set.centers {
        assert!(c.x >= 0.0 && c.y >= 0.0 && c.x + c.y <= 0.5 + 1e-12);
    }
}

#[test]
fn empty_atlas_is_an_error() {
    let v = vec![DVec3::ZERO, DVec3::X, DVec3::Y];
    let uv = vec![[DVec2::ZERO, DVec2::new(0.01, 0.0), DVec2::new(0.0, 0.01)]];
    let mesh = CoarseMesh::new(v, vec![[0, 1, 2]], uv).unwrap();
    let atlas = UvAtlas::build(&mesh, 4).unwrap();
    assert!(place_primitives(&mesh, &atlas, 2, 2, DEFAULT_SHELL).is_err());
}

#[test]
fn placement_co_rotates_with_mesh() {
    let mesh = bent_mesh();
    let atlas = UvAtlas::build(&mesh, 32).unwrap();
    let q = DQuat::from_axis_angle(DVec3::new(1.0, 2.0, -0.5).normalize(), 1.1);
    let g = Rigid::new(q, DVec3::ZERO);
    let rotated = mesh.transformed(&g);
    let a = place_primitives(&mesh, &atlas, 4, 2, DEFAULT_SHELL).unwrap();
    let b = place_primitives(&rotated, &atlas, 4, 2, DEFAULT_SHELL).unwrap();
    let qm = DMat3::from_quat(q);
    for k in 0..a.len() {
        assert!((q * a.centers[k] - b.centers[k]).length() < 1e-4);
        let d = qm * a.rotations[k] - b.rotations[k];
        assert!([d.x_axis, d.y_axis, d.z_axis].iter().all(|c| c.abs().max_element() < 1e-4));
        assert!((a.scales[k] - b.scales[k]).length() < 1e-9);
    }
}

#[test]
fn voxel_grid_is_half_voxel_inset() {
    let set = unit_set(DMat3::IDENTITY, 2);
    let p = set.voxel_positions(0);
    assert_eq!(p.len(), 8);
    for v in &p {
        assert!((v.abs() - DVec3::splat(0.5)).length() < 1e-15);
    }
    assert_eq!(p[0], DVec3::splat(-0.5));
    assert_eq!(p[1], DVec3::new(0.5, -0.5, -0.5));
    assert_eq!(p[2], DVec3::new(-0.5, 0.5, -0.5));
    assert_eq!(p[4], DVec3::new(-0.5, -0.5, 0.5));
}

#[test]
fn voxel_translation_and_scale() {
    let mut set = unit_set(DMat3::IDENTITY, 3);
    let base = set.voxel_positions(0);
    let d = DVec3::new(0.3, -1.0, 2.0);
    set.centers[0] = d;
    for (a, b) in set.voxel_positions(0).iter().zip(&base) {
        assert!((*a - *b - d).length() < 1e-12);
    }
    set.centers[0] = DVec3::ZERO;
    set.scales[0] = DVec3::new(2.0, 1.0, 1.0);
    for (a, b) in set.voxel_positions(0).iter().zip(&base) {
        assert_eq!(*a, DVec3::new(2.0 * b.x, b.y, b.z));
    }
}

#[test]
fn localized_direction_examples() {
    // S = 1 puts the single voxel at the primitive center.
    let set = unit_set(DMat3::IDENTITY, 1);
    let (d, flag) = set.localized_directions(0, DVec3::new(0.0, 0.0, 2.0));
    assert_eq!(d[0], DVec3::Z);
    assert!(!flag);
    let rz = DMat3::from_rotation_z(std::f64::consts::FRAC_PI_2);
    let set = unit_set(rz, 1);
    let (d, _) = set.localized_directions(0, DVec3::new(0.0, 0.0, 2.0));
    assert!((d[0] - DVec3::Z).length() < 1e-15);
    let (d, _) = set.localized_directions(0, DVec3::new(2.0, 0.0, 0.0));
    assert!((d[0] - DVec3::new(0.0, -1.0, 0.0)).length() < 1e-15);
}

#[test]
fn coincident_target_is_flagged() {
    let set = unit_set(DMat3::IDENTITY, 2);
    let (d, flag) = set.localized_directions(0, DVec3::splat(0.5));
    assert!(flag);
    assert_eq!(d[7], DVec3::ZERO);
    assert!((d[0].length() - 1.0).abs() < 1e-12);
}

#[test]
fn direction_volume_layout() {
    let set = unit_set(DMat3::IDENTITY, 2);
    let (vol, flag) = set.direction_volume(DVec3::new(0.0, 0.0, 10.0));
    assert!(!flag);
    assert_eq!(vol.shape(), &[1, 3, 2, 2, 2]);
    let (dirs, _) = set.localized_directions(0, DVec3::new(0.0, 0.0, 10.0));
    for (j, d) in dirs.iter().enumerate() {
        for c in 0..3 {
            assert_eq!(vol.data()[c * 8 + j], d[c] as f32);
        }
    }
}

#[test]
fn stacked_map_size_at_paper_scale() {
    let vol = Tensor::<f32>::zeros(&[4096, 3, 16, 16, 16]);
    let map = stack_uv(&vol).unwrap();
    assert_eq!(map.shape(), &[48, 1024, 1024]);
}

#[test]
fn single_voxel_lands_on_one_texel() {
    let (n, c, s) = (9, 2, 3);
    let mut vol = Tensor::<f64>::zeros(&[n, c, s, s, s]);
    // primitive 5 = row 1, col 2; channel 1, z 2, y 0, x 1
    vol.data_mut()[(((5 * c + 1) * s + 2) * s) * s + 1] = 7.0;
    let map = stack_uv(&vol).unwrap();
    let nz: Vec<usize> = map.data().iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect();
    let side = 9;
    assert_eq!(nz, vec![((1 * s + 2) * side + 3) * side + 2 * s + 1]);
}

#[test]
fn stack_rejects_bad_shapes() {
    assert!(stack_uv(&Tensor::<f32>::zeros(&[3, 1, 2, 2, 2])).is_err());
    assert!(stack_uv(&Tensor::<f32>::zeros(&[4, 1, 2, 2, 3])).is_err());
    assert!(unstack_uv(&Tensor::<f32>::zeros(&[5, 4, 4]), 2).is_err());
}

#[test]
fn volume_texture_checks_opacity_range() {
    let c = Tensor::zeros(&[4, 3, 2, 2, 2]);
    assert!(VolumeTexture::new(c.clone(), Tensor::full(&[4, 1, 2, 2, 2], 1.5)).is_err());
    assert!(VolumeTexture::new(c.clone(), Tensor::full(&[4, 1, 2, 2, 3], 0.5)).is_err());
    let v = VolumeTexture::new(c, Tensor::full(&[4, 1, 2, 2, 2], 0.5)).unwrap();
    assert_eq!((v.count(), v.resolution()), (4, 2));
}

#[test]
fn primitive_records_round_trip() {
    let mesh = bent_mesh();
    let atlas = UvAtlas::build(&mesh, 16).unwrap();
    let set = place_primitives(&mesh, &atlas, 3, 2, DEFAULT_SHELL).unwrap();
    assert_eq!(PrimitiveSet::from_params(&set.to_params()).unwrap(), set);
}

proptest! {
    #[test]
    fn stack_round_trip(w in 1usize..4, c in 1usize..4, s in 1usize..4, seed in 0u64..1000) {
        let n = w * w;
        let vol = Tensor::<f32>::from_fn(&[n, c, s, s, s], |i| ((i as u64 * 2654435761 + seed) % 1000) as f32 - 500.0);
        let map = stack_uv(&vol).unwrap();
        prop_assert_eq!(map.shape(), &[c * s, w * s, w * s]);
        prop_assert_eq!(unstack_uv(&map, s).unwrap(), vol);
    }

    #[test]
    fn directions_are_unit_and_rigid_invariant(
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.1f64..3.1,
        shift in prop::array::uniform3(-5.0f64..5.0),
        target in prop::array::uniform3(-4.0f64..4.0),
    ) {
        let mesh = bent_mesh();
        let atlas = UvAtlas::build(&mesh, 16).unwrap();
        let set = place_primitives(&mesh, &atlas, 2, 3, DEFAULT_SHELL).unwrap();
        let axis = DVec3::from_array(axis).try_normalize().unwrap_or(DVec3::Y);
        let g = Rigid::new(DQuat::from_axis_angle(axis, angle), DVec3::from_array(shift));
        let moved = set.transformed(&g);
        let t = DVec3::from_array(target);
        for k in 0..set.len() {
            let (a, fa) = set.localized_directions(k, t);
            let (b, fb) = moved.localized_directions(k, g.point(t));
            prop_assert_eq!(fa, fb);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((*x - *y).length() < 1e-6);
                prop_assert!((x.length() - 1.0).abs() < 1e-6);
            }
        }
    }
}
