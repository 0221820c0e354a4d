//! File formats: Wavefront OBJ meshes, versioned JSON artifacts, a raw
//! float image container and CSV shape samples.
//!
//! Every JSON artifact is wrapped as `{"schema": "bodyfit-<kind>/1",
//! "payload": ...}`; reading checks the schema string before decoding the
//! payload.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::body_model::{BodyModel, Parameters, PartMasks, Vec3};
use crate::error::{Error, Result};
use crate::fitter::{FitConfig, FitResult, Observations};
use crate::losses::{Image, LossWeights};
use crate::metrics::EvalReport;
use crate::moderator::{ModeratorState, ToyConfig};
use crate::prior::GenderPrior;

/// Triangle mesh with 0-based face indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl ObjMesh {
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for f in &self.faces {
            if let Some(&i) = f.iter().find(|&&i| i >= n) {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::DegenerateInput(format!("face {f:?} repeats a vertex")));
            }
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::DegenerateInput("non-finite vertex".into()));
        }
        Ok(())
    }

    pub fn from_model(model: &BodyModel, vertices: Vec<Vec3>) -> Self {
        ObjMesh {
            vertices,
            faces: model.faces.clone(),
        }
    }
}

/// Nine significant digits; negative zero prints as `0`.
fn fmt_coord(x: f64) -> String {
    let s = format!("{x:.8e}");
    if s.parse::<f64>() == Ok(0.0) {
        "0".into()
    } else {
        s
    }
}

pub fn format_obj(mesh: &ObjMesh) -> Result<String> {
    mesh.validate()?;
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {} {} {}\n", fmt_coord(v.x), fmt_coord(v.y), fmt_coord(v.z)));
    }
    for f in &mesh.faces {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    Ok(out)
}

/// Parses `v` and `f` records; polygons are fan-triangulated, `#` comments,
/// normals, texture coordinates and grouping records are skipped.
pub fn parse_obj(text: &str, path: &Path) -> Result<ObjMesh> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut mesh = ObjMesh::default();
    let mut polys: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let c: Vec<f64> = parts
                    .map(|t| t.parse::<f64>().map_err(|e| err(line_no, format!("bad coordinate {t:?}: {e}"))))
                    .collect::<Result<_>>()?;
                if !(3..=4).contains(&c.len()) {
                    return Err(err(line_no, format!("vertex needs 3 coordinates, got {}", c.len())));
                }
                mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in parts {
                    let head = t.split('/').next().unwrap_or("");
                    let k: i64 = head.parse().map_err(|e| err(line_no, format!("bad face index {t:?}: {e}")))?;
                    if k <= 0 {
                        return Err(err(line_no, format!("face index {k}: indices are 1-based and positive")));
                    }
                    idx.push(k as usize - 1);
                }
                if idx.len() < 3 {
                    return Err(err(line_no, "face needs at least 3 vertices".into()));
                }
                polys.push((line_no, idx));
            }
            _ => {}
        }
    }
    let n = mesh.vertices.len();
    for (line_no, idx) in polys {
        if let Some(&k) = idx.iter().find(|&&k| k >= n) {
            return Err(err(line_no, format!("face index {} exceeds vertex count {n}", k + 1)));
        }
        for w in 1..idx.len() - 1 {
            mesh.faces.push([idx[0], idx[w], idx[w + 1]]);
        }
    }
    Ok(mesh)
}

pub fn read_obj(path: impl AsRef<Path>) -> Result<ObjMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

pub fn write_obj(mesh: &ObjMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_obj(mesh)?).map_err(|e| Error::io(path, e))
}

/// A JSON document with a versioned schema tag.
pub trait Artifact: Serialize + DeserializeOwned {
    const SCHEMA: &'static str;
}

macro_rules! artifact {
    ($($t:ty => $s:literal),* $(,)?) => {
        $(impl Artifact for $t {
            const SCHEMA: &'static str = $s;
        })*
    };
}

/// Fit settings as stored on disk: the schedule plus the loss weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfigFile {
    #[serde(flatten)]
    pub config: FitConfig,
    pub weights: LossWeights,
}

artifact! {
    BodyModel => "bodyfit-model/1",
    PartMasks => "bodyfit-masks/1",
    Parameters => "bodyfit-params/1",
    GenderPrior => "bodyfit-prior/1",
    ModeratorState => "bodyfit-moderator/1",
    ToyConfig => "bodyfit-moderator-config/1",
    Observations => "bodyfit-keypoints/1",
    FitConfigFile => "bodyfit-fit-config/1",
    FitResult => "bodyfit-fit-result/1",
    EvalReport => "bodyfit-eval-report/1",
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    schema: &'static str,
    payload: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    schema: Option<String>,
    payload: Option<serde_json::Value>,
}

pub fn to_json<T: Artifact>(x: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&EnvelopeOut {
        schema: T::SCHEMA,
        payload: x,
    })?)
}

pub fn from_json<T: Artifact>(text: &str) -> Result<T> {
    let env: EnvelopeIn = serde_json::from_str(text)?;
    match (env.schema, env.payload) {
        (Some(s), Some(p)) if s == T::SCHEMA => Ok(serde_json::from_value(p)?),
        (s, _) => Err(Error::Schema {
            expected: T::SCHEMA.into(),
            found: s.unwrap_or_default(),
        }),
    }
}

pub fn write_artifact<T: Artifact>(x: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = to_json(x)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_artifact<T: Artifact>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}

pub const IMAGE_MAGIC: &[u8; 8] = b"BFIMAGE1";
const IMAGE_HEADER: usize = 8 + 3 * 4;

/// `BFIMAGE1`, then height, width, channels as little-endian u32, then
/// `H·W·C` little-endian f64 values, row-major with interleaved channels.
pub fn encode_image(img: &Image) -> Result<Vec<u8>> {
    let dims = [img.height, img.width, img.channels];
    let mut out = Vec::with_capacity(IMAGE_HEADER + 8 * img.data.len());
    out.extend_from_slice(IMAGE_MAGIC);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::ShapeMismatch(format!("image dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for x in &img.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_image(bytes: &[u8], path: &Path) -> Result<Image> {
    let bad = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg,
    };
    if bytes.len() < IMAGE_HEADER || &bytes[..8] != IMAGE_MAGIC {
        return Err(bad("missing BFIMAGE1 header".into()));
    }
    let dim = |k: usize| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let n = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(c))
        .ok_or_else(|| bad("image dimensions overflow".into()))?;
    let body = &bytes[IMAGE_HEADER..];
    if body.len() != 8 * n {
        return Err(bad(format!("expected {} data bytes for {h}x{w}x{c}, found {}", 8 * n, body.len())));
    }
    let data = body.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Image::new(h, w, c, data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, path)
}

pub fn write_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_image(img)?).map_err(|e| Error::io(path, e))
}

/// One shape sample per row; a leading non-numeric row is taken as a header.
pub fn read_samples_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("{other:?}"),
            },
        })?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if i == 0 => {}
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: e.to_string(),
                })
            }
        }
    }
    Ok(rows)
}

/// CSV with a header row of column names and one row of values per report.
pub fn write_reports_csv(reports: &[EvalReport], mut out: impl std::io::Write) -> Result<()> {
    let Some(first) = reports.first() else {
        return Ok(());
    };
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record(first.columns().iter().map(|(k, _)| k.as_str()))?;
    for r in reports {
        w.write_record(r.columns().iter().map(|(_, v)| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    drop(w);
    out.flush().map_err(|e| Error::io("<csv>", e))
}
