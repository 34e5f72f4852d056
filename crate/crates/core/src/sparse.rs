//! Compressed sparse row matrices with deterministic assembly.

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate entries. Summation order follows the input order, so equal
    /// inputs give bitwise equal matrices.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; rows + 1];
        for &(r, c, _) in triplets {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) outside a {rows}x{cols} matrix");
            counts[r + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut by_row = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            by_row[fill[r]] = (c, v);
            fill[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for r in 0..rows {
            let row = &mut by_row[counts[r]..counts[r + 1]];
            row.sort_by_key(|e| e.0);
            for &(c, v) in row.iter() {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { rows, cols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix { rows: n, cols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |i| vals[i])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            *out = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    /// `b - A x` with compensated row sums (error-free products by FMA and
    /// TwoSum), accurate to about one rounding of the result rather than of
    /// the largest term.
    pub fn residual_accurate(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| self.row_sum_accurate(r, x, None, b[r], false)).collect()
    }

    /// `A x` with compensated row sums.
    pub fn mul_vec_accurate(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| -self.row_sum_accurate(r, x, None, 0.0, false)).collect()
    }

    /// `A (hi + lo)` with compensated row sums. The two parts of the vector
    /// are kept apart, since `lo` would be lost if added to a much larger
    /// `hi` first.
    pub fn mul_vec_split(&self, hi: &[f64], lo: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| -self.row_sum_accurate(r, hi, Some(lo), 0.0, false)).collect()
    }

    /// `b - A x` for a square matrix whose rows sum to zero. The stored
    /// diagonal is ignored: each row is evaluated as `sum_j a_ij (x_j - x_i)`,
    /// so the roundoff in the stored row sums does not multiply `x`.
    pub fn residual_zero_sum(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| self.row_sum_accurate(r, x, None, b[r], true)).collect()
    }

    /// [`CsrMatrix::mul_vec_split`] for a zero-row-sum matrix, on differences
    /// as in [`CsrMatrix::residual_zero_sum`].
    pub fn mul_vec_zero_sum(&self, hi: &[f64], lo: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| -self.row_sum_accurate(r, hi, Some(lo), 0.0, true)).collect()
    }

    /// `b_r - (A (x + lo))_r`, compensated.
    fn row_sum_accurate(&self, r: usize, x: &[f64], lo: Option<&[f64]>, b: f64, differences: bool) -> f64 {
        let (cols, vals) = self.row(r);
        let (mut s, mut c) = (b, 0.0);
        let mut add = |v: f64, xj: f64| {
            let p = -v * xj;
            let ep = (-v).mul_add(xj, -p);
            let t = s + p;
            let z = t - s;
            c += (s - (t - z)) + (p - z) + ep;
            s = t;
        };
        for (&j, &v) in cols.iter().zip(vals) {
            if differences {
                if j != r {
                    add(v, x[j] - x[r]);
                    if let Some(lo) = lo {
                        add(v, lo[j] - lo[r]);
                    }
                }
            } else {
                add(v, x[j]);
                if let Some(lo) = lo {
                    add(v, lo[j]);
                }
            }
        }
        s + c
    }

    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * xr;
            }
        }
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let t: Vec<(usize, usize, f64)> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        CsrMatrix::from_triplets(self.cols, self.rows, &t)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows).map(|r| self.row(r).1.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|r| self.get(r, r)).collect()
    }
}
