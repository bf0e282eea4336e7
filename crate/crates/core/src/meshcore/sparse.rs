use crate::error::{Result, StarError};

/// Row-compressed sparse matrix; each row holds `(column, value)` pairs in
/// ascending column order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    cols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(cols: usize, mut rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        for (r, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(StarError::invalid(format!(
                        "row {r} has duplicate column {}",
                        w[0].0
                    )));
                }
            }
            if let Some(&(c, _)) = row.iter().find(|&&(c, _)| c >= cols) {
                return Err(StarError::invalid(format!(
                    "row {r} column {c} out of range for {cols} columns"
                )));
            }
        }
        Ok(SparseRows { cols, rows })
    }

    /// Drops exact zeros from a dense row-major matrix.
    pub fn from_dense(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(StarError::invalid(format!(
                "dense data has {} entries, expected {}",
                data.len(),
                rows * cols
            )));
        }
        let rows = data
            .chunks_exact(cols.max(1))
            .take(rows)
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(c, &v)| (c, v))
                    .collect()
            })
            .collect();
        SparseRows::new(cols, rows)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len() * self.cols];
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                out[r * self.cols + c] = v;
            }
        }
        out
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.rows[r]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[(usize, f64)]> {
        self.rows.iter().map(Vec::as_slice)
    }

    /// Applies the matrix to a point set given as flat `3 * cols` xyz
    /// coordinates, returning flat `3 * rows` coordinates.
    pub fn apply_points(&self, points: &[f64]) -> Vec<f64> {
        debug_assert_eq!(points.len(), 3 * self.cols);
        let mut out = vec![0.0; 3 * self.rows.len()];
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, w) in row {
                for d in 0..3 {
                    out[3 * r + d] += w * points[3 * c + d];
                }
            }
        }
        out
    }
}
