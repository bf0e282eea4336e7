use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::container::{decode_f64s, encode_f64s, parse_kind, read_text, FORMAT_VERSION};
use crate::error::{Result, StarError};

pub const SHAPE_DATASET_KIND: &str = "shape-dataset";
pub const PCA_BASIS_KIND: &str = "pca-basis";

/// Subjects (rows) by flattened vertex coordinates (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDataset {
    data: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct ShapeDatasetFile {
    format_version: u32,
    kind: String,
    rows: usize,
    cols: usize,
    /// row-major
    data: String,
}

impl ShapeDataset {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(StarError::invalid(format!(
                "shape dataset needs at least 2 subjects, got {}",
                data.nrows()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(StarError::invalid("shape dataset contains non-finite values"));
        }
        Ok(ShapeDataset { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(StarError::invalid("shape dataset rows differ in length"));
        }
        ShapeDataset::new(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn num_subjects(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.data.row_mean().transpose()
    }

    pub fn to_json(&self) -> String {
        let row_major: Vec<f64> = self.data.transpose().as_slice().to_vec();
        serde_json::to_string(&ShapeDatasetFile {
            format_version: FORMAT_VERSION,
            kind: SHAPE_DATASET_KIND.into(),
            rows: self.data.nrows(),
            cols: self.data.ncols(),
            data: encode_f64s(&row_major),
        })
        .expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ShapeDatasetFile = parse_kind(text, SHAPE_DATASET_KIND)?;
        let data = decode_f64s(&f.data)?;
        if data.len() != f.rows * f.cols {
            return Err(StarError::Format("shape dataset size mismatch".into()));
        }
        ShapeDataset::new(DMatrix::from_row_slice(f.rows, f.cols, &data))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| StarError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ShapeDataset::from_json(&read_text(path.as_ref())?)
    }
}

/// Mean, orthonormal components (columns) and their variances, sorted by
/// decreasing variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: DVector<f64>,
    pub components: DMatrix<f64>,
    pub variances: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PcaBasisFile {
    format_version: u32,
    kind: String,
    dim: usize,
    num_components: usize,
    mean: String,
    /// column-major `dim × num_components`
    components: String,
    variances: String,
}

impl PcaBasis {
    pub fn num_components(&self) -> usize {
        self.components.ncols()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PcaBasisFile {
            format_version: FORMAT_VERSION,
            kind: PCA_BASIS_KIND.into(),
            dim: self.mean.len(),
            num_components: self.components.ncols(),
            mean: encode_f64s(self.mean.as_slice()),
            components: encode_f64s(self.components.as_slice()),
            variances: encode_f64s(&self.variances),
        })
        .expect("basis serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: PcaBasisFile = parse_kind(text, PCA_BASIS_KIND)?;
        let mean = decode_f64s(&f.mean)?;
        let comps = decode_f64s(&f.components)?;
        let variances = decode_f64s(&f.variances)?;
        if mean.len() != f.dim
            || comps.len() != f.dim * f.num_components
            || variances.len() != f.num_components
        {
            return Err(StarError::Format("pca basis size mismatch".into()));
        }
        Ok(PcaBasis {
            mean: DVector::from_vec(mean),
            components: DMatrix::from_column_slice(f.dim, f.num_components, &comps),
            variances,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| StarError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        PcaBasis::from_json(&read_text(path.as_ref())?)
    }
}

fn centered(data: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut x = data.clone();
    for mut row in x.row_iter_mut() {
        row -= mean.transpose();
    }
    x
}

/// Mean-centred PCA keeping the top `k` components. Each component's
/// largest-magnitude entry is made positive.
pub fn pca_fit(data: &ShapeDataset, k: usize) -> Result<PcaBasis> {
    let m = data.num_subjects();
    let d = data.dim();
    let limit = (m - 1).min(d);
    if k > limit {
        return Err(StarError::invalid(format!(
            "{k} components requested, at most {limit} available"
        )));
    }
    let mean = data.mean();
    let x = centered(data.data(), &mean);
    let svd = x.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let s_max = order.first().map_or(0.0, |&i| svd.singular_values[i]);
    let tol = s_max * (m.max(d) as f64) * f64::EPSILON;
    let rank = order
        .iter()
        .filter(|&&i| svd.singular_values[i] > tol && s_max > 0.0)
        .count();
    if k > rank {
        return Err(StarError::invalid(format!(
            "{k} components requested but the data has rank {rank}"
        )));
    }

    let mut components = DMatrix::zeros(d, k);
    let mut variances = Vec::with_capacity(k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let mut v: DVector<f64> = vt.row(i).transpose();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v = -v;
        }
        components.set_column(c, &v);
        let s = svd.singular_values[i];
        variances.push(s * s / (m - 1) as f64);
    }
    Ok(PcaBasis {
        mean,
        components,
        variances,
    })
}

/// Percentage of `data`'s variance about the basis mean that is
/// reconstructed by the first `k` components.
pub fn explained_variance(basis: &PcaBasis, data: &ShapeDataset, k: usize) -> Result<f64> {
    if k > basis.num_components() {
        return Err(StarError::invalid(format!(
            "{k} components requested from a basis of {}",
            basis.num_components()
        )));
    }
    if data.dim() != basis.mean.len() {
        return Err(StarError::invalid(format!(
            "data dimension {} does not match basis dimension {}",
            data.dim(),
            basis.mean.len()
        )));
    }
    let x = centered(data.data(), &basis.mean);
    let total = x.norm_squared();
    if total == 0.0 {
        return Ok(100.0);
    }
    let c = basis.components.columns(0, k);
    let coeffs = &x * c;
    let residual = (&x - coeffs * c.transpose()).norm_squared();
    Ok(100.0 * (1.0 - residual / total))
}

/// `(k, percent)` for `k = 0..=max_k`.
pub fn explained_variance_curve(
    basis: &PcaBasis,
    data: &ShapeDataset,
    max_k: usize,
) -> Result<Vec<(usize, f64)>> {
    (0..=max_k)
        .map(|k| Ok((k, explained_variance(basis, data, k)?)))
        .collect()
}

pub fn write_curve_csv<W: Write>(out: W, curve: &[(usize, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| StarError::Format(format!("csv write failed: {e}"));
    w.write_record(["k", "percent"]).map_err(fail)?;
    for (k, p) in curve {
        w.write_record([k.to_string(), p.to_string()]).map_err(fail)?;
    }
    w.flush()
        .map_err(|e| StarError::Format(format!("csv flush failed: {e}")))
}
