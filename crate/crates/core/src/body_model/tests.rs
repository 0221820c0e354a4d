use super::*;
use crate::rotations::{axis_angle_to_matrix, matrix_to_rot6d};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_model() -> BodyModel {
    synth_model(3, ModelDims::new(300, 12, 6, 4)).unwrap()
}

fn random_params(model: &BodyModel, rng: &mut ChaCha8Rng, scale: f64) -> Parameters {
    let mut p = Parameters::zeros(model);
    p.beta.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
    p.psi.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
    for r in p.pose.iter_mut() {
        let aa: [f64; 3] = std::array::from_fn(|_| rng.random_range(-scale..scale));
        *r = match r {
            JointRotation::SixD(_) => {
                JointRotation::SixD(matrix_to_rot6d(&axis_angle_to_matrix(&aa).unwrap()).unwrap())
            }
            JointRotation::Euler(_) => JointRotation::Euler(EulerXYZ::from_array(aa)),
        };
    }
    p
}

/// Hand-built three-joint chain along x: 0 at origin, 1 at (1,0,0), 2 at (2,0,0).
fn chain_model() -> BodyModel {
    let template = vec![
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(2.0, 0.0, 0.0),
        Vec3::new(1.5, 0.5, 0.0),
    ];
    let nv = template.len();
    let mut joint_regressor = vec![0.0; 3 * nv];
    for j in 0..3 {
        joint_regressor[j * nv + j] = 1.0;
    }
    let mut skin_weights = vec![0.0; nv * 3];
    skin_weights[0] = 1.0;
    skin_weights[3 + 1] = 1.0;
    skin_weights[2 * 3 + 2] = 1.0;
    skin_weights[3 * 3 + 1] = 1.0;
    BodyModel {
        template,
        shape_basis: vec![],
        n_shape: 0,
        expr_basis: vec![],
        n_expr: 0,
        joint_regressor,
        skin_weights,
        parents: vec![None, Some(0), Some(1)],
        joint_names: vec!["a".into(), "b".into(), "c".into()],
        roles: JointRoles::default(),
        part_masks: PartMasks::default(),
        landmark_indices: vec![0; NUM_LANDMARKS],
        closure_pairs: vec![],
        faces: vec![],
        eval_regressor: None,
    }
}

#[test]
fn synth_is_deterministic_and_valid() {
    let a = synth_model(11, ModelDims::new(300, 12, 5, 3)).unwrap();
    let b = synth_model(11, ModelDims::new(300, 12, 5, 3)).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    assert!(a.validate().is_ok());
    assert_eq!(a.num_vertices(), 300);
    assert!(a.faces.len() > 100);
    assert!(!a.part_masks.face.is_empty());
    assert!(!a.part_masks.left_hand.is_empty());
    assert!(a.roles.jaw.is_some() && a.roles.head.is_some());
    let c = synth_model(12, ModelDims::new(300, 12, 5, 3)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn synth_vertices_all_lie_on_faces() {
    for (v, j) in [(300, 12), (400, 19), (1500, 19), (90, 25)] {
        let m = synth_model(2, ModelDims::new(v, j, 2, 2)).unwrap();
        let mut used = vec![false; v];
        for f in &m.faces {
            assert!(f[0] != f[1] && f[1] != f[2] && f[0] != f[2]);
            f.iter().for_each(|&i| used[i] = true);
        }
        assert!(used.iter().all(|&u| u), "V={v} J={j}");
    }
}

#[test]
fn synth_handles_extreme_dims() {
    for (v, j) in [(2, 2), (5, 3), (40, 12), (90, 25), (2000, 19)] {
        let m = synth_model(1, ModelDims::new(v, j, 2, 2)).unwrap();
        assert_eq!(m.num_vertices(), v);
        assert_eq!(m.num_joints(), j);
        m.validate().unwrap();
    }
    assert!(matches!(
        synth_model(1, ModelDims::new(3, 1, 0, 0)),
        Err(Error::InvalidDims(_))
    ));
    assert!(matches!(
        synth_model(1, ModelDims::new(3, 4, 0, 0)),
        Err(Error::InvalidDims(_))
    ));
}

#[test]
fn shape_mesh_cases() {
    let m = small_model();
    let zero = shape_mesh(&m, &[0.0; 6], &[0.0; 4]).unwrap();
    assert_eq!(zero, m.template);
    let mut e1 = [0.0; 6];
    e1[0] = 1.0;
    let one = shape_mesh(&m, &e1, &[0.0; 4]).unwrap();
    for (i, v) in one.iter().enumerate() {
        for c in 0..3 {
            assert_eq!(v[c], m.template[i][c] + m.shape_basis[(3 * i + c) * 6]);
        }
    }
    assert!(matches!(
        shape_mesh(&m, &[0.0; 5], &[0.0; 4]),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn shape_mesh_superposition() {
    let m = small_model();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b1: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
    let b2: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
    let p1: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
    let p2: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
    let sum_b: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a + b).collect();
    let sum_p: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| a + b).collect();
    let m1 = shape_mesh(&m, &b1, &p1).unwrap();
    let m2 = shape_mesh(&m, &b2, &p2).unwrap();
    let m12 = shape_mesh(&m, &sum_b, &sum_p).unwrap();
    for i in 0..m.num_vertices() {
        let lhs = m12[i] - m.template[i];
        let rhs = (m1[i] - m.template[i]) + (m2[i] - m.template[i]);
        assert!((lhs - rhs).amax() < 1e-12);
    }
}

#[test]
fn regress_joints_cases() {
    let m = small_model();
    let p = Vec3::new(0.3, -1.0, 2.0);
    let flat = vec![p; m.num_vertices()];
    for j in regress_joints(&m, &flat).unwrap() {
        assert!((j - p).amax() < 1e-12);
    }
    // one-hot rows
    let c = chain_model();
    let joints = regress_joints(&c, &c.template).unwrap();
    assert_eq!(joints[2], c.template[2]);
    // naive double loop
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let verts: Vec<Vec3> = (0..m.num_vertices())
        .map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let fast = regress_joints(&m, &verts).unwrap();
    for j in 0..m.num_joints() {
        let mut acc = [0.0; 3];
        for i in 0..m.num_vertices() {
            for c in 0..3 {
                acc[c] += m.joint_regressor[j * m.num_vertices() + i] * verts[i][c];
            }
        }
        for c in 0..3 {
            assert!((acc[c] - fast[j][c]).abs() < 1e-12);
        }
    }
}

#[test]
fn fk_identity_pose() {
    let m = small_model();
    let joints = regress_joints(&m, &m.template).unwrap();
    let pose = vec![RotMatrix::identity(); m.num_joints()];
    let t = forward_kinematics(&m, &joints, &pose).unwrap();
    for (j, tr) in t.iter().enumerate() {
        assert_eq!(*tr.rotation.matrix(), Matrix3::identity());
        assert_eq!(tr.pivot + tr.displacement, joints[j]);
    }
}

#[test]
fn fk_root_quarter_turn_chain() {
    let c = chain_model();
    let joints = c.template[..3].to_vec();
    let rz = axis_angle_to_matrix(&[0.0, 0.0, std::f64::consts::FRAC_PI_2]).unwrap();
    let pose = vec![rz, RotMatrix::identity(), RotMatrix::identity()];
    let t = forward_kinematics(&c, &joints, &pose).unwrap();
    // Joints (1,0,0),(2,0,0) rotate about the origin to (0,1,0),(0,2,0).
    let expect = [Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 2.0, 0.0)];
    for j in 0..3 {
        assert!((t[j].apply(&joints[j]) - expect[j]).amax() < 1e-15);
    }
}

#[test]
fn fk_two_level_composition() {
    let c = chain_model();
    let joints = c.template[..3].to_vec();
    let ra = axis_angle_to_matrix(&[0.1, 0.4, -0.3]).unwrap();
    let rb = axis_angle_to_matrix(&[-0.7, 0.2, 0.5]).unwrap();
    let pose = vec![RotMatrix::identity(), ra, rb];
    let t = forward_kinematics(&c, &joints, &pose).unwrap();
    let expected = ra.matrix() * rb.matrix();
    assert!((t[2].rotation.matrix() - expected).amax() < 1e-15);
    // child joint position: parent at (1,0,0) rotates the bone (1,0,0)
    let p2 = joints[1] + ra.matrix() * (joints[2] - joints[1]);
    assert!((t[2].pivot + t[2].displacement - p2).amax() < 1e-15);
}

#[test]
fn skin_cases() {
    let c = chain_model();
    let joints = c.template[..3].to_vec();
    let ident = vec![RotMatrix::identity(); 3];
    let t = forward_kinematics(&c, &joints, &ident).unwrap();
    assert_eq!(skin(&c, &c.template, &t).unwrap(), c.template);

    let r = axis_angle_to_matrix(&[0.0, 0.0, 0.5]).unwrap();
    let pose = vec![RotMatrix::identity(), r, RotMatrix::identity()];
    let t = forward_kinematics(&c, &joints, &pose).unwrap();
    let out = skin(&c, &c.template, &t).unwrap();
    // Vertex 3 is bound to joint 1 with weight 1: rigidly rotated about it.
    let expect = joints[1] + r.matrix() * (c.template[3] - joints[1]);
    assert!((out[3] - expect).amax() < 1e-15);
}

#[test]
fn skin_matches_blend_oracle() {
    let m = small_model();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = random_params(&m, &mut rng, 0.6);
    let posed = pose_model(&m, &params).unwrap();
    let nj = m.num_joints();
    for (i, v) in posed.rest_vertices.iter().enumerate() {
        // v' = Σ w (R v + t) with the standard homogeneous transform
        let mut acc = Vec3::zeros();
        for j in 0..nj {
            let w = m.skin_weights[i * nj + j];
            let tr = &posed.world_transforms[j];
            acc += (tr.rotation.matrix() * v + tr.translation()) * w;
        }
        assert!((acc - posed.vertices[i]).amax() < 1e-12);
    }
}

#[test]
fn zero_pose_fixed_point_and_beta_only() {
    let m = small_model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut p = Parameters::zeros(&m);
    let r0 = pose_model(&m, &p).unwrap();
    assert_eq!(r0.vertices, m.template);
    assert_eq!(r0.joints_posed, r0.joints_rest);
    p.beta.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
    p.psi.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
    let r1 = pose_model(&m, &p).unwrap();
    assert_eq!(r1.vertices, shape_mesh(&m, &p.beta, &p.psi).unwrap());
    assert_ne!(r1.joints_rest, r0.joints_rest);
    for t in &r1.world_transforms {
        assert_eq!(*t.rotation.matrix(), Matrix3::identity());
    }
}

#[test]
fn joints_posed_matches_transforms() {
    let m = small_model();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random_params(&m, &mut rng, 1.0);
    let r = pose_model(&m, &p).unwrap();
    for j in 0..m.num_joints() {
        let t = &r.world_transforms[j];
        let via_affine = t.rotation.matrix() * r.joints_rest[j] + t.translation();
        assert!((via_affine - r.joints_posed[j]).amax() < 1e-12);
    }
}

#[test]
fn rigid_equivariance_about_root() {
    let m = small_model();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let p = random_params(&m, &mut rng, 0.8);
        let base = pose_model(&m, &p).unwrap();
        let aa: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let r = axis_angle_to_matrix(&aa).unwrap();
        let mut q = p.clone();
        let root = q.pose[0].to_matrix().unwrap();
        q.pose[0] = JointRotation::SixD(matrix_to_rot6d(&r.compose(&root)).unwrap());
        let rotated = pose_model(&m, &q).unwrap();
        let c0 = base.joints_rest[0];
        for (a, b) in base.vertices.iter().zip(&rotated.vertices) {
            let expect = c0 + r.matrix() * (a - c0);
            assert!((expect - b).amax() < 1e-9);
        }
    }
}

#[test]
fn gamma_cases_and_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = axis_angle_to_matrix(&[0.3, -0.2, 1.0]).unwrap();
    let same = global_to_relative(&g, &RotMatrix::identity()).unwrap();
    assert!((same.matrix() - g.matrix()).amax() < 1e-15);
    let id = global_to_relative(&g, &g).unwrap();
    assert!((id.matrix() - Matrix3::identity()).amax() < 1e-15);

    let m = small_model();
    let p = random_params(&m, &mut rng, 1.0);
    let posed = pose_model(&m, &p).unwrap();
    let world: Vec<RotMatrix> = posed.world_transforms.iter().map(|t| t.rotation).collect();
    let rel = relative_from_world(&m, &world).unwrap();
    for (a, b) in rel.iter().zip(&posed.local_rotations) {
        assert!((a.matrix() - b.matrix()).amax() < 1e-9);
    }

    // Absolute head / wrist orientation applied through the chain.
    let mut q = p.clone();
    for joint in [m.roles.head.unwrap(), m.roles.left_wrist.unwrap()] {
        let target = axis_angle_to_matrix(&[0.5, 0.1, -0.9]).unwrap();
        set_global_rotation(&m, &mut q, joint, &target).unwrap();
        let posed = pose_model(&m, &q).unwrap();
        let got = posed.world_transforms[joint].rotation;
        assert!((got.matrix() - target.matrix()).amax() < 1e-9);
    }
    let jaw = m.roles.jaw.unwrap();
    assert!(set_global_rotation(&m, &mut q, jaw, &g).is_err());
}

fn scalar_probe(posed: &PosedResult, wv: &[Vec3], wj: &[Vec3]) -> f64 {
    posed.vertices.iter().zip(wv).map(|(a, b)| a.dot(b)).sum::<f64>()
        + posed.joints_posed.iter().zip(wj).map(|(a, b)| a.dot(b)).sum::<f64>()
}

#[test]
fn vjp_matches_central_differences() {
    let m = small_model();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p = random_params(&m, &mut rng, 0.8);
    let wv: Vec<Vec3> = (0..m.num_vertices())
        .map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let wj: Vec<Vec3> = (0..m.num_joints())
        .map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let posed = pose_model(&m, &p).unwrap();
    let upstream = PoseUpstream {
        vertices: Some(wv.clone()),
        joints: Some(wj.clone()),
        world_rotations: None,
    };
    let analytic = pose_model_vjp(&m, &p, &posed, &upstream).unwrap();
    let x = p.to_flat();
    let h = 1e-6;
    for k in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let fp = scalar_probe(&pose_model(&m, &p.with_flat(&xp).unwrap()).unwrap(), &wv, &wj);
        let fm = scalar_probe(&pose_model(&m, &p.with_flat(&xm).unwrap()).unwrap(), &wv, &wj);
        let fd = (fp - fm) / (2.0 * h);
        let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-3);
        assert!(err < 1e-4, "param {k}: fd {fd} analytic {}", analytic[k]);
    }
}

#[test]
fn params_flat_round_trip_and_validation() {
    let m = small_model();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = random_params(&m, &mut rng, 1.0);
    let back = p.with_flat(&p.to_flat()).unwrap();
    assert_eq!(p, back);
    let mut bad = p.clone();
    bad.pose[0] = JointRotation::Euler(EulerXYZ::default());
    assert!(bad.validate(&m).is_err());
    let mut bad = p;
    bad.beta.pop();
    assert!(matches!(
        pose_model(&m, &bad),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn invalid_models_rejected() {
    let mut c = chain_model();
    c.parents[2] = Some(2);
    assert!(c.validate().is_err());
    let mut c = chain_model();
    c.skin_weights[0] = 0.5;
    assert!(c.validate().is_err());
    let mut c = chain_model();
    c.part_masks.face = vec![99];
    assert!(c.validate().is_err());
}
