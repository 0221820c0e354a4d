//! The `bodyfit` command line.
//!
//! Exit codes: 0 success, 1 validation failure (including usage errors),
//! 2 numeric failure (divergence, failed gradient check), 3 I/O.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::body_model::{pose_model, synth_model, BodyModel, ModelDims, Parameters, PartMasks};
use crate::error::{Error, ErrorClass, Result};
use crate::fitter::{fit, FitProblem, Observations, Photometric, SplatRenderer};
use crate::gradcheck::{run_all, run_suite, GradcheckOptions, Suite};
use crate::io::{
    read_artifact, read_image, read_obj, read_samples_csv, write_artifact, write_obj, write_reports_csv, FitConfigFile,
    ObjMesh,
};
use crate::metrics::{evaluate_batch, EvalMesh, EvalOptions};
use crate::moderator::{train_toy, write_calibration_csv, ToyConfig};
use crate::prior::{fit_gaussian, Gender, GenderPrior};

#[derive(Parser, Debug)]
#[command(name = "bodyfit", version, about = "Parametric whole-body model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a deterministic synthetic body model.
    SynthModel {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Vertices, joints, shape and expression components.
        #[arg(long, default_value = "300,19,6,4", value_parser = parse_dims)]
        dims: ModelDims,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pose a model and export the mesh.
    Pose {
        #[arg(long)]
        model: PathBuf,
        /// Parameters file; zero parameters when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out_obj: PathBuf,
    },
    /// Fit parameters and cameras to keypoints.
    Fit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        keypoints: PathBuf,
        /// Schedule and loss weights; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Gendered shape prior; a standard normal when omitted.
        #[arg(long)]
        prior: Option<PathBuf>,
        /// Face crop for the photometric term.
        #[arg(long, requires = "mask")]
        image: Option<PathBuf>,
        /// Single-channel mask matching `--image`.
        #[arg(long, requires = "image")]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        out_obj: Option<PathBuf>,
    },
    /// Compare predicted meshes with ground truth and write a CSV report.
    Eval {
        #[arg(long, required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        /// Part masks, or a model file carrying them.
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
        /// Multiplier from model units to report units.
        #[arg(long, default_value_t = 1000.0)]
        scale: f64,
        /// F-score thresholds in model units.
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
    },
    /// Train the fusion moderator on the synthetic two-channel task.
    ModeratorTrain {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Calibration table (noise level against mean gate weight).
        #[arg(long)]
        report_csv: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suites.
    Gradcheck {
        /// `all` or one suite name.
        #[arg(long, default_value = "all")]
        module: String,
        #[arg(long, default_value_t = 100)]
        seeds: usize,
    },
    /// Fit a Gaussian shape class from CSV samples.
    PriorFit {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        label: Gender,
        /// Existing prior to add the class to.
        #[arg(long)]
        merge: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_dims(s: &str) -> std::result::Result<ModelDims, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [a, b, c, d] => Ok(ModelDims::new(a, b, c, d)),
        _ => Err("expected V,J,S,E".into()),
    }
}

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Validation => 1,
        ErrorClass::Numeric => 2,
        ErrorClass::Io => 3,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Messages go to `out` and `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind::*;
            let text = e.render().to_string();
            return match e.kind() {
                DisplayHelp | DisplayVersion | DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(e.class())
        }
    }
}

fn load_model(path: &Path) -> Result<BodyModel> {
    let m: BodyModel = read_artifact(path)?;
    m.validate()?;
    Ok(m)
}

fn say(out: &mut dyn Write, msg: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(out, "{msg}").map_err(|e| Error::io("<stdout>", e))
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::SynthModel { seed, dims, out: path } => {
            let m = synth_model(seed, dims)?;
            write_artifact(&m, &path)?;
            say(out, format_args!("wrote {} (V={}, J={})", path.display(), m.num_vertices(), m.num_joints()))?;
        }
        Command::Pose { model, params, out_obj } => {
            let m = load_model(&model)?;
            let p = match params {
                Some(p) => read_artifact(p)?,
                None => Parameters::zeros(&m),
            };
            let posed = pose_model(&m, &p)?;
            write_obj(&ObjMesh::from_model(&m, posed.vertices), &out_obj)?;
            say(out, format_args!("wrote {}", out_obj.display()))?;
        }
        Command::Fit {
            model,
            keypoints,
            config,
            prior,
            image,
            mask,
            out: path,
            out_obj,
        } => {
            let m = load_model(&model)?;
            let obs: Observations = read_artifact(&keypoints)?;
            let cfg: FitConfigFile = match config {
                Some(c) => read_artifact(c)?,
                None => FitConfigFile::default(),
            };
            let prior: GenderPrior = match prior {
                Some(p) => read_artifact(p)?,
                None => GenderPrior::standard(m.n_shape),
            };
            let mut problem = FitProblem::new(&m, obs, &prior);
            problem.weights = cfg.weights;
            let renderer;
            if let (Some(image), Some(mask)) = (image, mask) {
                let target = read_image(image)?;
                renderer = SplatRenderer::new(target.height, target.width, 1.0, m.landmark_indices.clone(), 0)?;
                problem.photometric = Some(Photometric {
                    target,
                    mask: read_image(mask)?,
                    renderer: &renderer,
                    embedder: None,
                });
            }
            let r = fit(&problem, &cfg.config)?;
            write_artifact(&r, &path)?;
            if let Some(obj) = out_obj {
                write_obj(&ObjMesh::from_model(&m, pose_model(&m, &r.params)?.vertices), obj)?;
            }
            say(
                out,
                format_args!("final loss {:.6} after {} iterations (converged: {})", r.final_loss, r.trace.len(), r.converged),
            )?;
        }
        Command::Eval {
            pred,
            gt,
            masks,
            out_csv,
            scale,
            taus,
        } => {
            if pred.len() != gt.len() {
                return Err(Error::ConfigInvalid(format!("{} --pred files but {} --gt files", pred.len(), gt.len())));
            }
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::ConfigInvalid("--scale must be positive".into()));
            }
            let masks: PartMasks = match read_artifact::<PartMasks>(&masks) {
                Ok(m) => m,
                Err(Error::Schema { .. }) => load_model(&masks)?.part_masks,
                Err(e) => return Err(e),
            };
            let mesh = |p: &Path| -> Result<EvalMesh> {
                let o = read_obj(p)?;
                Ok(EvalMesh {
                    vertices: o.vertices,
                    faces: o.faces,
                    joints: Vec::new(),
                })
            };
            let pairs = pred
                .iter()
                .zip(&gt)
                .map(|(p, g)| Ok((mesh(p)?, mesh(g)?)))
                .collect::<Result<Vec<_>>>()?;
            let mut opts = EvalOptions::default();
            if let Some(t) = taus {
                opts.taus = t;
            }
            let reports: Vec<_> = evaluate_batch(&pairs, &masks, &opts)?.iter().map(|r| r.scaled(scale)).collect();
            let file = std::fs::File::create(&out_csv).map_err(|e| Error::io(&out_csv, e))?;
            write_reports_csv(&reports, std::io::BufWriter::new(file))?;
            say(out, format_args!("wrote {} ({} rows)", out_csv.display(), reports.len()))?;
        }
        Command::ModeratorTrain {
            config,
            seed,
            out: path,
            report_csv,
        } => {
            let mut cfg: ToyConfig = match config {
                Some(c) => read_artifact(c)?,
                None => ToyConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (state, report) = train_toy(&cfg)?;
            write_artifact(&state, &path)?;
            if let Some(csv) = report_csv {
                let file = std::fs::File::create(&csv).map_err(|e| Error::io(&csv, e))?;
                write_calibration_csv(&report.calibration, std::io::BufWriter::new(file))?;
            }
            match report.auc {
                Some(a) => say(out, format_args!("wrote {}; gate AUC {a:.4}", path.display()))?,
                None => say(out, format_args!("wrote {}", path.display()))?,
            }
        }
        Command::Gradcheck { module, seeds } => {
            let opts = GradcheckOptions {
                seeds,
                ..Default::default()
            };
            let reports = if module == "all" {
                run_all(&opts)?
            } else {
                let suite = Suite::parse(&module).ok_or_else(|| {
                    let names: Vec<_> = Suite::ALL.iter().map(|s| s.name()).collect();
                    Error::ConfigInvalid(format!("unknown module {module:?}; expected all or one of {}", names.join(", ")))
                })?;
                run_suite(suite, &opts)?
            };
            let mut ok = true;
            for r in &reports {
                ok &= r.passed();
                say(
                    out,
                    format_args!(
                        "{} {}/{}: {} entries, {} at kinks, {} failures, max rel err {:.2e}",
                        if r.passed() { "PASS" } else { "FAIL" },
                        r.suite,
                        r.check,
                        r.entries,
                        r.skipped,
                        r.failures,
                        r.max_rel_err
                    ),
                )?;
            }
            if !ok {
                return Ok(2);
            }
        }
        Command::PriorFit {
            samples,
            label,
            merge,
            out: path,
        } => {
            let rows = read_samples_csv(&samples)?;
            let mut prior = match merge {
                Some(p) => read_artifact(p)?,
                None => GenderPrior::default(),
            };
            prior.insert(label, fit_gaussian(&rows)?);
            prior.validate()?;
            write_artifact(&prior, &path)?;
            say(out, format_args!("wrote {} class {} from {} samples", path.display(), label.class_key(), rows.len()))?;
        }
    }
    Ok(0)
}
