//! Compressed sparse row storage, enough for `Â`, `Ŝ`, `Σ` and `Φ`.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, value)` lists. Columns within a row are
    /// sorted; duplicate columns are summed.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n_rows = rows.len();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                if c >= cols {
                    return Err(Error::InvalidParams(format!(
                        "column {c} out of range for {cols} columns"
                    )));
                }
                if indices.len() > *indptr.last().unwrap() && *indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            rows: n_rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Keeps every entry of `m`, zeros included.
    pub fn from_dense_full(m: &Matrix) -> Self {
        let rows = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| (j, m[(i, j)])).collect())
            .collect();
        Self::from_rows(m.ncols(), rows).expect("columns in range")
    }

    /// Keeps nonzero entries of `m`.
    pub fn from_dense(m: &Matrix) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter(|&j| m[(i, j)] != 0.0)
                    .map(|j| (j, m[(i, j)]))
                    .collect()
            })
            .collect();
        Self::from_rows(m.ncols(), rows).expect("columns in range")
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_indices(&self, i: usize) -> &[usize] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let idx = self.row_indices(i);
        match idx.binary_search(&j) {
            Ok(pos) => self.values[self.indptr[i] + pos],
            Err(_) => 0.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Same sparsity pattern, values replaced.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self { values, ..self.clone() }
    }

    /// Nonzero count per column.
    pub fn column_counts(&self) -> Vec<usize> {
        let mut g = vec![0; self.cols];
        for &c in &self.indices {
            g[c] += 1;
        }
        g
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.cols];
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                rows[j].push((i, v));
            }
        }
        Self::from_rows(self.rows, rows).expect("rows in range")
    }

    /// `self · x` for a dense right-hand side.
    pub fn mul_dense(&self, x: &Matrix) -> Result<Matrix> {
        if x.nrows() != self.cols {
            return Err(Error::shape("sparse product", (self.cols, x.ncols()), x.shape()));
        }
        let mut out = Matrix::zeros(self.rows, x.ncols());
        for c in 0..x.ncols() {
            let col = x.column(c);
            for i in 0..self.rows {
                let mut acc = 0.0;
                for (j, v) in self.row(i) {
                    acc += v * col[j];
                }
                out[(i, c)] = acc;
            }
        }
        Ok(out)
    }

    /// `self^T · x` without materializing the transpose.
    pub fn tr_mul_dense(&self, x: &Matrix) -> Result<Matrix> {
        if x.nrows() != self.rows {
            return Err(Error::shape(
                "sparse transpose product",
                (self.rows, x.ncols()),
                x.shape(),
            ));
        }
        let mut out = Matrix::zeros(self.cols, x.ncols());
        for c in 0..x.ncols() {
            for i in 0..self.rows {
                let xi = x[(i, c)];
                if xi == 0.0 {
                    continue;
                }
                for (j, v) in self.row(i) {
                    out[(j, c)] += v * xi;
                }
            }
        }
        Ok(out)
    }
}
