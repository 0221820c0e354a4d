use std::path::Path;
use std::process::{Command, Output};

use bodyfit::body_model::{pose_model, BodyModel};
use bodyfit::fitter::{sample_parameters, synthesize_observations, FitCameras, FitResult};
use bodyfit::io::{read_artifact, read_obj, write_artifact, FitConfigFile};
use bodyfit::moderator::ModeratorState;
use bodyfit::prior::{GaussianClass, GenderPrior};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bodyfit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bodyfit")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn unknown_flag_exits_one_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = bodyfit(dir.path(), &["pose", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&bodyfit(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&bodyfit(dir.path(), &["--help"])), 0);
}

#[test]
fn missing_input_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = bodyfit(dir.path(), &["pose", "--model", "absent.json", "--out-obj", "x.obj"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn wrong_schema_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bodyfit(dir.path(), &["moderator-train", "--out", "m.json", "--config", "nope.json"])), 3);
    std::fs::write(dir.path().join("c.json"), "{\"schema\": \"bodyfit-params/1\", \"payload\": {}}").unwrap();
    assert_eq!(code(&bodyfit(dir.path(), &["moderator-train", "--out", "m.json", "--config", "c.json"])), 1);
}

#[test]
fn synth_and_pose_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a.json", "b.json"] {
        assert_eq!(code(&bodyfit(d, &["synth-model", "--seed", "4", "--dims", "120,19,4,3", "--out", out])), 0);
    }
    assert_eq!(std::fs::read(d.join("a.json")).unwrap(), std::fs::read(d.join("b.json")).unwrap());
    assert_eq!(code(&bodyfit(d, &["pose", "--model", "a.json", "--out-obj", "rest.obj"])), 0);
    assert_eq!(code(&bodyfit(d, &["pose", "--model", "a.json", "--out-obj", "again.obj"])), 0);
    let rest = std::fs::read(d.join("rest.obj")).unwrap();
    assert_eq!(rest, std::fs::read(d.join("again.obj")).unwrap());

    let model: BodyModel = read_artifact(d.join("a.json")).unwrap();
    let mesh = read_obj(d.join("rest.obj")).unwrap();
    assert_eq!(mesh.faces, model.faces);
    for (a, b) in mesh.vertices.iter().zip(&model.template) {
        assert!((a - b).norm() < 1e-8 * b.norm().max(1.0));
    }
}

#[test]
fn bad_dims_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bodyfit(dir.path(), &["synth-model", "--dims", "10,2", "--out", "m.json"])), 1);
    assert_eq!(code(&bodyfit(dir.path(), &["synth-model", "--dims", "1,19,4,3", "--out", "m.json"])), 1);
}

#[test]
fn fit_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&bodyfit(d, &["synth-model", "--seed", "5", "--out", "model.json"])), 0);
    let model: BodyModel = read_artifact(d.join("model.json")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truth = sample_parameters(&model, &GaussianClass::standard(model.n_shape), 0.1, 0.5, &mut rng).unwrap();
    let cam = bodyfit::camera::WeakPerspectiveCamera::new(100.0, [112.0, 112.0]).unwrap();
    let obs = synthesize_observations(&model, &truth, &FitCameras::uniform(cam), 0.0, 0).unwrap();
    write_artifact(&obs, d.join("kp.json")).unwrap();
    write_artifact(&truth, d.join("truth.json")).unwrap();
    let short = FitConfigFile {
        config: bodyfit::fitter::FitConfig::default().scaled_iterations(0.05),
        ..Default::default()
    };
    write_artifact(&short, d.join("cfg.json")).unwrap();

    let o = bodyfit(
        d,
        &["fit", "--model", "model.json", "--keypoints", "kp.json", "--config", "cfg.json", "--out", "fit.json", "--out-obj", "fit.obj"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: FitResult = read_artifact(d.join("fit.json")).unwrap();
    assert!(r.final_loss.is_finite());
    let fitted = read_obj(d.join("fit.obj")).unwrap();
    assert_eq!(fitted.vertices.len(), pose_model(&model, &r.params).unwrap().vertices.len());

    assert_eq!(code(&bodyfit(d, &["pose", "--model", "model.json", "--params", "truth.json", "--out-obj", "gt.obj"])), 0);
    let o = bodyfit(
        d,
        &["eval", "--pred", "fit.obj", "--pred", "gt.obj", "--gt", "gt.obj", "--gt", "gt.obj", "--masks", "model.json", "--out-csv", "r.csv"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.join("r.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("pa_v2v_all,"));
    let self_err: f64 = lines[2].split(',').next().unwrap().parse().unwrap();
    assert!(self_err < 1e-9);

    let o = bodyfit(d, &["eval", "--pred", "fit.obj", "--gt", "gt.obj", "--gt", "gt.obj", "--masks", "model.json", "--out-csv", "x.csv"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn prior_fit_builds_and_merges_classes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("f.csv"), "b0,b1\n0,0\n2,0\n0,2\n2,2\n").unwrap();
    std::fs::write(d.join("m.csv"), "-1,-1\n-3,-1\n-1,-3\n-3,-3\n").unwrap();
    assert_eq!(code(&bodyfit(d, &["prior-fit", "--samples", "f.csv", "--label", "female", "--out", "p.json"])), 0);
    let o = bodyfit(d, &["prior-fit", "--samples", "m.csv", "--label", "male", "--merge", "p.json", "--out", "p.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let prior: GenderPrior = read_artifact(d.join("p.json")).unwrap();
    assert_eq!(prior.classes["female"].mu, vec![1.0, 1.0]);
    assert_eq!(prior.classes["male"].mu, vec![-2.0, -2.0]);
    std::fs::write(d.join("one.csv"), "1,2\n").unwrap();
    assert_ne!(code(&bodyfit(d, &["prior-fit", "--samples", "one.csv", "--label", "male", "--out", "q.json"])), 0);
}

#[test]
fn moderator_train_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = bodyfit::moderator::ToyConfig {
        steps: 50,
        ..Default::default()
    };
    write_artifact(&cfg, d.join("toy.json")).unwrap();
    for out in ["a.json", "b.json"] {
        let o = bodyfit(d, &["moderator-train", "--config", "toy.json", "--seed", "3", "--out", out, "--report-csv", "cal.csv"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(d.join("a.json")).unwrap(), std::fs::read(d.join("b.json")).unwrap());
    let _: ModeratorState = read_artifact(d.join("a.json")).unwrap();
    assert!(std::fs::read_to_string(d.join("cal.csv")).unwrap().starts_with("noise_level,mean_w,count"));
}

#[test]
fn gradcheck_single_module_and_unknown_module() {
    let dir = tempfile::tempdir().unwrap();
    let o = bodyfit(dir.path(), &["gradcheck", "--module", "rotations", "--seeds", "5"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).lines().all(|l| l.starts_with("PASS")));
    assert_eq!(code(&bodyfit(dir.path(), &["gradcheck", "--module", "nonsense"])), 1);
}
