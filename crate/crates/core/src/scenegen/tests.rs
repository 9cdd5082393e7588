use super::*;

fn flat_lighting() -> Lighting {
    Lighting {
        texture_amp: 0.0,
        ..Lighting::default()
    }
}

fn frontal() -> Pose {
    Pose {
        azimuth_deg: 0.0,
        elevation_deg: 0.0,
        distance_m: 0.0,
    }
}

#[test]
fn face_on_box_has_exact_depth_and_shifted_right_view() {
    let cam = StereoCamera::paper(224, 224);
    let pose = Pose {
        azimuth_deg: 0.0,
        elevation_deg: 0.0,
        distance_m: 2.5,
    };
    let r = render_stereo(&box_mesh([1.0; 3]).unwrap(), &pose, &cam, &flat_lighting()).unwrap();
    let covered: Vec<f32> = r.depth_l.data.iter().copied().filter(|z| z.is_finite()).collect();
    assert!(covered.len() > 1000);
    assert!(covered.iter().all(|&z| z == 2.0));

    let shift = (cam.focal_px() * cam.baseline_m() / 2.0).round() as usize;
    let mut compared = 0;
    for y in 0..224 {
        for x in 1..(224 - shift - 1) {
            let interior = |m: &Map<f32>, x: usize| (x - 1..=x + 1).all(|i| m.get(i, y).is_finite());
            if interior(&r.depth_r, x) && interior(&r.depth_l, x + shift) {
                let a = r.right.pixel(x, y);
                let b = r.left.pixel(x + shift, y);
                for c in 0..3 {
                    assert!(a[c].abs_diff(b[c]) < 2);
                }
                compared += 1;
            }
        }
    }
    assert!(compared > 1000);
}

#[test]
fn empty_mesh_renders_background() {
    let cam = StereoCamera::paper(16, 12);
    let r = render_stereo(&Mesh::default(), &frontal(), &cam, &Lighting::default()).unwrap();
    assert!(r.depth_l.data.iter().chain(&r.depth_r.data).all(|&z| z == f32::INFINITY));
    assert!(r.left.data.iter().all(|&v| v == quantize(0.5)));
    assert_eq!(r.left, r.right);
}

#[test]
fn object_behind_camera_is_rejected() {
    let cam = StereoCamera::paper(16, 16);
    let pose = Pose {
        distance_m: 0.5,
        ..frontal()
    };
    assert!(render_stereo(&box_mesh([1.0; 3]).unwrap(), &pose, &cam, &Lighting::default()).is_err());
}

#[test]
fn disparity_examples() {
    let cam = StereoCamera::paper(224, 224);
    let depth = Map::from_vec(2, 1, vec![2.0, f32::INFINITY]).unwrap();
    let d = depth_to_disparity(&depth, &cam).unwrap();
    assert!((d.data[0] - 15.925).abs() < 1e-5);
    assert_eq!(d.data[1], 0.0);
    let wide = StereoCamera {
        baseline_mm: 260.0,
        ..cam
    };
    let depth = Map::from_vec(3, 1, vec![0.7, 1.3, 2.9]).unwrap();
    let a = depth_to_disparity(&depth, &cam).unwrap();
    let b = depth_to_disparity(&depth, &wide).unwrap();
    for (x, y) in a.data.iter().zip(&b.data) {
        assert_eq!(2.0 * x, *y);
    }
    assert!(depth_to_disparity(&Map::from_vec(1, 1, vec![0.0]).unwrap(), &cam).is_err());
    assert!(depth_to_disparity(&Map::from_vec(1, 1, vec![-1.0]).unwrap(), &cam).is_err());
}

#[test]
fn occlusion_of_constant_and_zero_maps() {
    let zero = Map::filled(10, 3, 0.0f32);
    let (l, r) = compute_occlusion(&zero, &zero).unwrap();
    assert!(l.data.iter().chain(&r.data).all(|&o| !o));

    let d = Map::filled(10, 3, 3.0f32);
    let (l, r) = compute_occlusion(&d, &d).unwrap();
    for y in 0..3 {
        for x in 0..10 {
            assert_eq!(l.get(x, y), x < 3);
            assert_eq!(r.get(x, y), x >= 7);
        }
    }
}

#[test]
fn occluded_strip_beside_near_plane() {
    let cam = StereoCamera::paper(64, 48);
    let mut m = box_mesh([3.0, 3.0, 0.01]).unwrap().translated([0.0, 0.0, 3.0]);
    m.append(box_mesh([0.4, 0.4, 0.01]).unwrap().translated([0.0, 0.0, 1.5]));
    let r = render_stereo(&m, &frontal(), &cam, &flat_lighting()).unwrap();
    let dl = depth_to_disparity(&r.depth_l, &cam).unwrap();
    let dr = depth_to_disparity(&r.depth_r, &cam).unwrap();
    let (occ, _) = compute_occlusion(&dl, &dr).unwrap();
    let d_far = disparity_value(2.995, &cam);
    let d_near = disparity_value(1.495, &cam);
    let y = 24;
    let band = d_far.round() as usize;
    let strip = (band..64).filter(|&x| occ.get(x, y)).count() as f32;
    assert!((strip - (d_near - d_far)).abs() <= 1.0, "{strip} vs {}", d_near - d_far);
}

fn small_cfg(seed: u64) -> GenConfig {
    GenConfig {
        seed,
        camera: StereoCamera::paper(48, 48),
        voxel_res: 32,
        n_gt: 2048,
        ..GenConfig::default()
    }
}

#[test]
fn generated_samples_satisfy_invariants() {
    let cfg = small_cfg(3);
    for i in 0..6 {
        let s = generate_sample(i, &cfg).unwrap();
        for (z, d) in s.depth_l.data.iter().zip(&s.disp_l.data) {
            if z.is_finite() {
                assert_eq!(*d, disparity_value(*z, &s.camera));
            } else {
                assert_eq!(*d, 0.0);
            }
        }
        assert!(s.disp_l.data.iter().chain(&s.disp_r.data).all(|&d| d >= 0.0));
        let (ol, or) = compute_occlusion(&s.disp_l, &s.disp_r).unwrap();
        assert_eq!((ol, or), (s.occl_l.clone(), s.occl_r.clone()));
        assert!(s.disp_l.data.iter().any(|&d| d > 0.0), "object visible");
        let inside = s
            .points
            .points
            .iter()
            .filter(|&&p| s.voxels.cell_of(p).is_some_and(|c| s.voxels.get(c[0], c[1], c[2])))
            .count();
        assert!(inside as f64 >= 0.99 * s.points.len() as f64);
    }
}

#[test]
fn disparity_is_resolution_consistent() {
    let lighting = flat_lighting();
    for seed in 0..3u64 {
        let mesh = make_primitive(ShapeKind::ALL[seed as usize * 2], seed).unwrap();
        let pose = Pose {
            azimuth_deg: 30.0 + 50.0 * seed as f64,
            elevation_deg: 10.0,
            distance_m: 2.2,
        };
        let lo_cam = StereoCamera::paper(40, 40);
        let hi_cam = StereoCamera::paper(80, 80);
        let lo = render_stereo(&mesh, &pose, &lo_cam, &lighting).unwrap();
        let hi = render_stereo(&mesh, &pose, &hi_cam, &lighting).unwrap();
        let dlo = depth_to_disparity(&lo.depth_l, &lo_cam).unwrap();
        let dhi = depth_to_disparity(&hi.depth_l, &hi_cam).unwrap();
        let mut checked = 0;
        for y in 1..39 {
            for x in 1..39 {
                let block: Vec<f32> = [(0, 0), (1, 0), (0, 1), (1, 1)]
                    .iter()
                    .map(|&(a, b)| dhi.get(2 * x + a, 2 * y + b))
                    .collect();
                let hood: Vec<f32> = (y - 1..=y + 1)
                    .flat_map(|j| (x - 1..=x + 1).map(move |i| (i, j)))
                    .map(|(i, j)| dlo.get(i, j))
                    .collect();
                let lo_min = hood.iter().copied().fold(f32::INFINITY, f32::min);
                let lo_max = hood.iter().copied().fold(0.0, f32::max);
                if lo_min == 0.0 || block.contains(&0.0) || lo_max - lo_min > 0.5 {
                    continue;
                }
                let down = block.iter().sum::<f32>() / 4.0 / 2.0;
                assert!((down - dlo.get(x, y)).abs() <= 0.5, "seed {seed} ({x},{y})");
                checked += 1;
            }
        }
        assert!(checked > 20);
    }
}

#[test]
fn dataset_is_deterministic_and_loadable() {
    let cfg = GenConfig {
        n_gt: 256,
        voxel_res: 16,
        camera: StereoCamera::paper(32, 32),
        seed: 1,
        ..GenConfig::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ids = generate_dataset(8, &cfg, a.path()).unwrap();
    generate_dataset(8, &cfg, b.path()).unwrap();
    assert_eq!(ids.len(), 8);
    for id in &ids {
        for f in std::fs::read_dir(a.path().join(id)).unwrap() {
            let f = f.unwrap();
            let other = b.path().join(id).join(f.file_name());
            assert_eq!(std::fs::read(f.path()).unwrap(), std::fs::read(other).unwrap());
        }
    }
    let loaded = load_dataset(a.path()).unwrap();
    let direct = generate_sample(3, &cfg).unwrap();
    assert_eq!(loaded[3].disp_l, direct.disp_l);
    assert_eq!(loaded[3].voxels, direct.voxels);
    assert_eq!(loaded[3].kind, direct.kind);

    let empty = tempfile::tempdir().unwrap();
    assert!(generate_dataset(0, &cfg, empty.path()).unwrap().is_empty());
    assert_eq!(std::fs::read_to_string(empty.path().join("manifest.txt")).unwrap(), "");
}
