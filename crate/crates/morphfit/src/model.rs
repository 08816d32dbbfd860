//! Linear morphable face model: mean geometry/albedo plus shape, expression
//! and albedo bases, with a self-contained binary container format.
//!
//! # Container format (`FIGM`)
//!
//! Little-endian throughout:
//!
//! ```text
//! magic   4 bytes  "FIGM"
//! version u32      1
//! arrays, in fixed order:
//!   f32 arrays: mean_shape, shape_basis, expr_basis, mean_albedo,
//!               albedo_basis, basis_scales
//!   u32 arrays: triangles, landmark_indices
//! ```
//!
//! Every array is stored as `name_len: u32`, `name: ASCII bytes`,
//! `element_count: u32`, then the raw elements. `basis_scales` is the
//! concatenation of the per-column scales of the three bases in the order
//! shape, expression, albedo. Basis matrices are row-major with `3 *
//! n_vertices` rows (vertex-interleaved x, y, z / r, g, b) and one column
//! per basis direction.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"FIGM";
pub const MODEL_VERSION: u32 = 1;

/// Default basis sizes for generated models.
pub const DEFAULT_K_SHAPE: usize = 80;
pub const DEFAULT_K_EXPR: usize = 64;
pub const DEFAULT_K_ALBEDO: usize = 80;
/// Number of landmark vertices selected on generated models.
pub const DEFAULT_N_LANDMARKS: usize = 68;

/// A loaded morphable model. Immutable after construction; cheap to share
/// behind a reference from any number of threads.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphableModel {
    pub n_vertices: usize,
    /// Per-vertex mean positions, xyz interleaved, length `3 * n_vertices`.
    pub mean_shape: Vec<f32>,
    /// Row-major `(3 * n_vertices) x k_shape`.
    pub shape_basis: Vec<f32>,
    /// Row-major `(3 * n_vertices) x k_expr`.
    pub expr_basis: Vec<f32>,
    /// Per-vertex mean albedo, rgb interleaved in [0, 1].
    pub mean_albedo: Vec<f32>,
    /// Row-major `(3 * n_vertices) x k_albedo`.
    pub albedo_basis: Vec<f32>,
    pub triangles: Vec<[u32; 3]>,
    pub landmark_indices: Vec<u32>,
    /// Per-column standard deviations applied by the decoder.
    pub shape_scales: Vec<f32>,
    pub expr_scales: Vec<f32>,
    pub albedo_scales: Vec<f32>,
}

/// Dimensions of the flattened parameter vector for a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaDims {
    pub k_shape: usize,
    pub k_expr: usize,
    pub k_albedo: usize,
}

pub const N_PHI: usize = 27;
pub const N_CAM: usize = 6;

impl ThetaDims {
    pub fn theta_dim(&self) -> usize {
        self.k_shape + self.k_expr + self.k_albedo + N_PHI + N_CAM
    }
}

impl MorphableModel {
    pub fn k_shape(&self) -> usize {
        self.shape_scales.len()
    }

    pub fn k_expr(&self) -> usize {
        self.expr_scales.len()
    }

    pub fn k_albedo(&self) -> usize {
        self.albedo_scales.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn dims(&self) -> ThetaDims {
        ThetaDims {
            k_shape: self.k_shape(),
            k_expr: self.k_expr(),
            k_albedo: self.k_albedo(),
        }
    }

    pub fn theta_dim(&self) -> usize {
        self.dims().theta_dim()
    }

    /// Mean position of vertex `v` as f64.
    pub fn mean_vertex(&self, v: usize) -> [f64; 3] {
        [
            self.mean_shape[3 * v] as f64,
            self.mean_shape[3 * v + 1] as f64,
            self.mean_shape[3 * v + 2] as f64,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: String) -> Self {
        Diagnostic { severity: Severity::Error, message }
    }

    fn warning(message: String) -> Self {
        Diagnostic { severity: Severity::Warning, message }
    }
}

/// True when a diagnostics report contains no error-severity entries.
pub fn diagnostics_ok(report: &[Diagnostic]) -> bool {
    report.iter().all(|d| d.severity != Severity::Error)
}

/// Check every model invariant and report each violation. Warnings flag
/// allowed-but-suspect content (currently: duplicate landmark indices).
pub fn validate_model(model: &MorphableModel) -> Vec<Diagnostic> {
    let mut report = Vec::new();
    let n = model.n_vertices;
    let rows = 3 * n;

    if model.mean_shape.len() != rows {
        report.push(Diagnostic::error(format!(
            "mean_shape has {} entries, expected {}",
            model.mean_shape.len(),
            rows
        )));
    }
    if model.mean_albedo.len() != rows {
        report.push(Diagnostic::error(format!(
            "mean_albedo has {} entries, expected {}",
            model.mean_albedo.len(),
            rows
        )));
    }
    for (name, basis, scales) in [
        ("shape_basis", &model.shape_basis, &model.shape_scales),
        ("expr_basis", &model.expr_basis, &model.expr_scales),
        ("albedo_basis", &model.albedo_basis, &model.albedo_scales),
    ] {
        let k = scales.len();
        if basis.len() != rows * k {
            report.push(Diagnostic::error(format!(
                "{name} has {} entries, expected {} rows x {} columns",
                basis.len(),
                rows,
                k
            )));
        }
    }

    for (t, tri) in model.triangles.iter().enumerate() {
        for &idx in tri {
            if idx as usize >= n {
                report.push(Diagnostic::error(format!(
                    "triangle {t} references vertex {idx}, model has {n} vertices"
                )));
            }
        }
    }
    for (i, &idx) in model.landmark_indices.iter().enumerate() {
        if idx as usize >= n {
            report.push(Diagnostic::error(format!(
                "landmark {i} references vertex {idx}, model has {n} vertices"
            )));
        }
    }

    for (i, &a) in model.mean_albedo.iter().enumerate() {
        if !(0.0..=1.0).contains(&a) {
            report.push(Diagnostic::error(format!(
                "albedo out of range: entry {i} is {a}, expected [0, 1]"
            )));
        }
    }

    let all_values = model
        .mean_shape
        .iter()
        .chain(&model.shape_basis)
        .chain(&model.expr_basis)
        .chain(&model.mean_albedo)
        .chain(&model.albedo_basis)
        .chain(&model.shape_scales)
        .chain(&model.expr_scales)
        .chain(&model.albedo_scales);
    if all_values.clone().any(|v| !v.is_finite()) {
        report.push(Diagnostic::error("model contains non-finite values".to_string()));
    }

    let mut seen = std::collections::HashSet::new();
    for &idx in &model.landmark_indices {
        if !seen.insert(idx) {
            report.push(Diagnostic::warning(format!("duplicate landmark index {idx}")));
        }
    }

    report
}

fn ensure_valid(model: &MorphableModel) -> Result<()> {
    let report = validate_model(model);
    if diagnostics_ok(&report) {
        Ok(())
    } else {
        let msgs: Vec<&str> = report
            .iter()
            .filter(|d| d.severity == Severity::Error)
            .map(|d| d.message.as_str())
            .collect();
        Err(Error::validation(msgs.join("; ")))
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_named_f32<W: Write>(w: &mut W, name: &str, data: &[f32]) -> Result<()> {
    write_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    write_u32(w, data.len() as u32)?;
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_named_u32<W: Write>(w: &mut W, name: &str, data: &[u32]) -> Result<()> {
    write_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    write_u32(w, data.len() as u32)?;
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(format!("truncated file while reading {what}")))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_array_header<R: Read>(r: &mut R, expected_name: &str) -> Result<usize> {
    let name_len = read_u32(r, "array name length")? as usize;
    if name_len > 256 {
        return Err(Error::format(format!("array name length {name_len} is implausible")));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)
        .map_err(|_| Error::format("truncated file while reading array name".to_string()))?;
    let name = String::from_utf8(name)
        .map_err(|_| Error::format("array name is not valid UTF-8".to_string()))?;
    if name != expected_name {
        return Err(Error::format(format!(
            "unexpected array '{name}', expected '{expected_name}'"
        )));
    }
    Ok(read_u32(r, &format!("length of {expected_name}"))? as usize)
}

fn read_named_f32<R: Read>(r: &mut R, expected_name: &str) -> Result<Vec<f32>> {
    let count = read_array_header(r, expected_name)?;
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format(format!("truncated file while reading {expected_name}")))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn read_named_u32<R: Read>(r: &mut R, expected_name: &str) -> Result<Vec<u32>> {
    let count = read_array_header(r, expected_name)?;
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format(format!("truncated file while reading {expected_name}")))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Serialize a model to the `FIGM` container. The model must be valid;
/// writing is bit-deterministic, so saving the same model twice yields
/// identical files.
pub fn save_model(model: &MorphableModel, path: impl AsRef<Path>) -> Result<()> {
    ensure_valid(model)?;
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MODEL_MAGIC)?;
    write_u32(&mut w, MODEL_VERSION)?;

    write_named_f32(&mut w, "mean_shape", &model.mean_shape)?;
    write_named_f32(&mut w, "shape_basis", &model.shape_basis)?;
    write_named_f32(&mut w, "expr_basis", &model.expr_basis)?;
    write_named_f32(&mut w, "mean_albedo", &model.mean_albedo)?;
    write_named_f32(&mut w, "albedo_basis", &model.albedo_basis)?;
    let scales: Vec<f32> = model
        .shape_scales
        .iter()
        .chain(&model.expr_scales)
        .chain(&model.albedo_scales)
        .copied()
        .collect();
    write_named_f32(&mut w, "basis_scales", &scales)?;

    let tri_flat: Vec<u32> = model.triangles.iter().flatten().copied().collect();
    write_named_u32(&mut w, "triangles", &tri_flat)?;
    write_named_u32(&mut w, "landmark_indices", &model.landmark_indices)?;
    w.flush()?;
    Ok(())
}

/// Load a model from a `FIGM` container, checking format, dimensional
/// consistency and all model invariants. On any failure no partial model
/// is returned.
pub fn load_model(path: impl AsRef<Path>) -> Result<MorphableModel> {
    let file = File::open(&path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("truncated file while reading magic".to_string()))?;
    if &magic != MODEL_MAGIC {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            magic, MODEL_MAGIC
        )));
    }
    let version = read_u32(&mut r, "version")?;
    if version != MODEL_VERSION {
        return Err(Error::format(format!(
            "unsupported container version {version}, expected {MODEL_VERSION}"
        )));
    }

    let mean_shape = read_named_f32(&mut r, "mean_shape")?;
    if mean_shape.is_empty() || mean_shape.len() % 3 != 0 {
        return Err(Error::dimension(format!(
            "mean_shape length {} is not a positive multiple of 3",
            mean_shape.len()
        )));
    }
    let n_vertices = mean_shape.len() / 3;
    let rows = 3 * n_vertices;

    let shape_basis = read_named_f32(&mut r, "shape_basis")?;
    let expr_basis = read_named_f32(&mut r, "expr_basis")?;
    let mean_albedo = read_named_f32(&mut r, "mean_albedo")?;
    let albedo_basis = read_named_f32(&mut r, "albedo_basis")?;
    let basis_scales = read_named_f32(&mut r, "basis_scales")?;
    let triangles_flat = read_named_u32(&mut r, "triangles")?;
    let landmark_indices = read_named_u32(&mut r, "landmark_indices")?;

    for (name, basis) in [
        ("shape_basis", &shape_basis),
        ("expr_basis", &expr_basis),
        ("albedo_basis", &albedo_basis),
    ] {
        if basis.len() % rows != 0 {
            return Err(Error::dimension(format!(
                "{name} length {} is not a multiple of 3 * n_vertices = {rows}",
                basis.len()
            )));
        }
    }
    if mean_albedo.len() != rows {
        return Err(Error::dimension(format!(
            "mean_albedo length {} does not match 3 * n_vertices = {rows}",
            mean_albedo.len()
        )));
    }
    let k_shape = shape_basis.len() / rows;
    let k_expr = expr_basis.len() / rows;
    let k_albedo = albedo_basis.len() / rows;
    if basis_scales.len() != k_shape + k_expr + k_albedo {
        return Err(Error::dimension(format!(
            "basis_scales length {} does not match total column count {}",
            basis_scales.len(),
            k_shape + k_expr + k_albedo
        )));
    }
    if triangles_flat.len() % 3 != 0 {
        return Err(Error::dimension(format!(
            "triangles length {} is not a multiple of 3",
            triangles_flat.len()
        )));
    }

    let shape_scales = basis_scales[..k_shape].to_vec();
    let expr_scales = basis_scales[k_shape..k_shape + k_expr].to_vec();
    let albedo_scales = basis_scales[k_shape + k_expr..].to_vec();
    let triangles: Vec<[u32; 3]> = triangles_flat
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();

    let model = MorphableModel {
        n_vertices,
        mean_shape,
        shape_basis,
        expr_basis,
        mean_albedo,
        albedo_basis,
        triangles,
        landmark_indices,
        shape_scales,
        expr_scales,
        albedo_scales,
    };
    ensure_valid(&model)?;
    Ok(model)
}
