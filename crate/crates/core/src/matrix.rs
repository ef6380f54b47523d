//! Dense and sparse containers, Gaussian-kernel generation, Matrix Market
//! ingestion and precision-aware products.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{OfrrError, Result};
use crate::precision::{accumulate_column, mixed_dot, FpFormat, PrecisionPolicy};

/// Seeded generator used everywhere a random stream is needed.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Column-major dense matrix. Entries are always representable in `fmt`.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    fmt: FpFormat,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} ({})", self.rows, self.cols, self.fmt)?;
        for i in 0..self.rows.min(8) {
            let row: Vec<String> = (0..self.cols.min(8))
                .map(|j| format!("{:12.5e}", self.get(i, j)))
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl DenseMatrix {
    /// Builds a matrix from column-major data, rounding every entry to `fmt`.
    pub fn new(rows: usize, cols: usize, mut data: Vec<f64>, fmt: FpFormat) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(OfrrError::dims(
                "DenseMatrix::new",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        for v in &mut data {
            *v = fmt.round(*v);
        }
        Ok(DenseMatrix {
            rows,
            cols,
            data,
            fmt,
        })
    }

    /// Data must already be representable in `fmt`.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>, fmt: FpFormat) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        DenseMatrix {
            rows,
            cols,
            data,
            fmt,
        }
    }

    pub fn zeros(rows: usize, cols: usize, fmt: FpFormat) -> Self {
        DenseMatrix::from_raw(rows, cols, vec![0.0; rows * cols], fmt)
    }

    pub fn identity(n: usize, fmt: FpFormat) -> Self {
        let mut m = DenseMatrix::zeros(n, n, fmt);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        fmt: FpFormat,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(fmt.round(f(i, j)));
            }
        }
        DenseMatrix::from_raw(rows, cols, data, fmt)
    }

    /// Builds from equally sized columns.
    pub fn from_columns(columns: &[Vec<f64>], rows: usize, fmt: FpFormat) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            if c.len() != rows {
                return Err(OfrrError::dims(
                    "DenseMatrix::from_columns",
                    format!("column of length {} in a {rows}-row matrix", c.len()),
                ));
            }
            data.extend(c.iter().map(|&v| fmt.round(v)));
        }
        Ok(DenseMatrix::from_raw(rows, columns.len(), data, fmt))
    }

    /// Row-major convenience constructor, mostly for tests and small inputs.
    pub fn from_rows(rows: &[&[f64]], fmt: FpFormat) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(OfrrError::dims("DenseMatrix::from_rows", "ragged rows"));
        }
        Ok(DenseMatrix::from_fn(r, c, fmt, |i, j| rows[i][j]))
    }

    /// Entries drawn from U(0, 1) in `f64`, then rounded to `fmt`.
    pub fn random_uniform(rows: usize, cols: usize, fmt: FpFormat, rng: &mut impl Rng) -> Self {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
        DenseMatrix::new(rows, cols, data, fmt).expect("sizes agree")
    }

    /// Entries drawn from U(-1, 1) in `f64`, then rounded to `fmt`.
    pub fn random_symmetric_uniform(
        rows: usize,
        cols: usize,
        fmt: FpFormat,
        rng: &mut impl Rng,
    ) -> Self {
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| 2.0 * rng.random::<f64>() - 1.0)
            .collect();
        DenseMatrix::new(rows, cols, data, fmt).expect("sizes agree")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn fmt(&self) -> FpFormat {
        self.fmt
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    /// Stores `v` rounded to the matrix format.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = self.fmt.round(v);
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Callers must keep entries representable in the matrix format.
    #[inline]
    pub(crate) fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.rows.max(1)).take(self.cols)
    }

    /// Same values re-rounded into `fmt` (a promotion is exact).
    pub fn rounded(&self, fmt: FpFormat) -> DenseMatrix {
        if fmt >= self.fmt {
            return DenseMatrix::from_raw(self.rows, self.cols, self.data.clone(), fmt);
        }
        DenseMatrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| fmt.round(v)).collect(),
            fmt,
        )
    }

    pub fn to_f64(&self) -> DenseMatrix {
        self.rounded(FpFormat::F64)
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, self.fmt, |i, j| self.get(j, i))
    }

    pub fn select_columns(&self, keep: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(self.rows * keep.len());
        for &j in keep {
            data.extend_from_slice(self.col(j));
        }
        DenseMatrix::from_raw(self.rows, keep.len(), data, self.fmt)
    }

    pub fn select_rows(&self, range: std::ops::Range<usize>) -> DenseMatrix {
        let rows = range.len();
        let mut data = Vec::with_capacity(rows * self.cols);
        for j in 0..self.cols {
            data.extend_from_slice(&self.col(j)[range.clone()]);
        }
        DenseMatrix::from_raw(rows, self.cols, data, self.fmt)
    }

    /// Plain `f64` product `self · other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(OfrrError::dims(
                "matmul",
                format!(
                    "{}x{} times {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut data = vec![0.0; self.rows * other.cols];
        for j in 0..other.cols {
            let out = &mut data[j * self.rows..(j + 1) * self.rows];
            for (kk, &s) in other.col(j).iter().enumerate() {
                if s != 0.0 {
                    for (o, &a) in out.iter_mut().zip(self.col(kk)) {
                        *o += a * s;
                    }
                }
            }
        }
        Ok(DenseMatrix::from_raw(
            self.rows,
            other.cols,
            data,
            FpFormat::F64,
        ))
    }

    /// Plain `f64` product `self' · other`.
    pub fn tr_matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(OfrrError::dims(
                "tr_matmul",
                format!(
                    "({}x{})' times {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut data = Vec::with_capacity(self.cols * other.cols);
        for j in 0..other.cols {
            for i in 0..self.cols {
                data.push(dot_f64(self.col(i), other.col(j)));
            }
        }
        Ok(DenseMatrix::from_raw(
            self.cols,
            other.cols,
            data,
            FpFormat::F64,
        ))
    }

    pub fn scaled(&self, s: f64) -> DenseMatrix {
        DenseMatrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| self.fmt.round(v * s)).collect(),
            self.fmt,
        )
    }

    /// Entrywise difference in `f64`.
    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(OfrrError::dims("sub", "shapes differ"));
        }
        Ok(DenseMatrix::from_raw(
            self.rows,
            self.cols,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
            FpFormat::F64,
        ))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(S + S') / 2` in `f64`.
    pub fn symmetrized(&self) -> DenseMatrix {
        let n = self.rows;
        DenseMatrix::from_fn(n, n, FpFormat::F64, |i, j| {
            0.5 * (self.get(i, j) + self.get(j, i))
        })
    }
}

pub(crate) fn dot_f64(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm2_f64(x: &[f64]) -> f64 {
    dot_f64(x, x).sqrt()
}

/// A matrix that can be applied to a block of vectors under a precision policy.
pub trait LinearOperator: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;

    /// Format the operator's own entries are stored in.
    fn storage(&self) -> FpFormat;

    /// `A·X`: `X` is rounded to the policy storage format, every entry is a
    /// mixed dot product and the result is stored in the policy storage format.
    fn apply(&self, x: &DenseMatrix, policy: &PrecisionPolicy) -> Result<DenseMatrix>;

    /// `A'·X` under the same rules as [`LinearOperator::apply`].
    fn apply_transpose(&self, x: &DenseMatrix, policy: &PrecisionPolicy) -> Result<DenseMatrix>;

    /// Copy of the operator with its entries rounded to `fmt`.
    fn stored_as(&self, fmt: FpFormat) -> Box<dyn LinearOperator>;

    /// Exact-order `f64` product with a single vector.
    fn apply_f64(&self, x: &[f64]) -> Vec<f64>;

    /// Exact-order `f64` product of the transpose with a single vector.
    fn apply_transpose_f64(&self, x: &[f64]) -> Vec<f64>;

    /// Dense `f64` copy.
    fn to_dense(&self) -> DenseMatrix;
}

fn check_block(op: &'static str, expect: usize, x: &DenseMatrix) -> Result<()> {
    if x.rows() != expect {
        return Err(OfrrError::dims(
            op,
            format!("operator expects {expect} rows, block has {}", x.rows()),
        ));
    }
    Ok(())
}

fn finish_block(y: DenseMatrix, stage: &str) -> Result<DenseMatrix> {
    if y.is_finite() {
        Ok(y)
    } else {
        Err(OfrrError::non_finite(stage))
    }
}

impl LinearOperator for DenseMatrix {
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.cols
    }

    fn storage(&self) -> FpFormat {
        self.fmt
    }

    fn apply(&self, x: &DenseMatrix, policy: &PrecisionPolicy) -> Result<DenseMatrix> {
        check_block("dense apply", self.cols, x)?;
        let xs = x.rounded(policy.storage);
        let mut out = DenseMatrix::zeros(self.rows, xs.cols(), policy.storage);
        for j in 0..xs.cols() {
            let acc = out.col_mut(j);
            for (kk, &s) in xs.col(j).iter().enumerate() {
                accumulate_column(acc, self.col(kk), s, policy);
            }
            for v in acc.iter_mut() {
                *v = policy.store(*v);
            }
        }
        finish_block(out, "dense matrix product")
    }

    fn apply_transpose(&self, x: &DenseMatrix, policy: &PrecisionPolicy) -> Result<DenseMatrix> {
        check_block("dense apply_transpose", self.rows, x)?;
        let xs = x.rounded(policy.storage);
        let mut data = Vec::with_capacity(self.cols * xs.cols());
        for j in 0..xs.cols() {
            for i in 0..self.cols {
                data.push(policy.store(mixed_dot(self.col(i), xs.col(j), policy)));
            }
        }
        finish_block(
            DenseMatrix::from_raw(self.cols, xs.cols(), data, policy.storage),
            "dense transpose product",
        )
    }

    fn stored_as(&self, fmt: FpFormat) -> Box<dyn LinearOperator> {
        Box::new(self.rounded(fmt))
    }

    fn apply_f64(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (kk, &s) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.col(kk)) {
                *o += a * s;
            }
        }
        out
    }

    fn apply_transpose_f64(&self, x: &[f64]) -> Vec<f64> {
        (0..self.cols).map(|j| dot_f64(self.col(j), x)).collect()
    }

    fn to_dense(&self) -> DenseMatrix {
        self.to_f64()
    }
}

/// Square compressed-sparse-row matrix. Matrices read from Matrix Market
/// files are stored with both triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    fmt: FpFormat,
}

impl CsrMatrix {
    /// Assembles from triplets; duplicates are summed, columns sorted per row.
    pub fn from_triplets(
        n: usize,
        triplets: &[(usize, usize, f64)],
        fmt: FpFormat,
    ) -> Result<Self> {
        let mut entries = triplets.to_vec();
        if let Some(&(i, j, _)) = entries.iter().find(|&&(i, j, _)| i >= n || j >= n) {
            return Err(OfrrError::dims(
                "CsrMatrix::from_triplets",
                format!("entry ({i}, {j}) outside a {n}x{n} matrix"),
            ));
        }
        entries.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            last = Some((i, j));
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(v);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        for v in &mut values {
            *v = fmt.round(*v);
        }
        Ok(CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
            fmt,
        })
    }

    pub fn identity(n: usize, fmt: FpFormat) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        CsrMatrix::from_triplets(n, &t, fmt).expect("diagonal entries are in range")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn fmt(&self) -> FpFormat {
        self.fmt
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |p| vals[p])
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).all(|(&j, &v)| self.get(j, i) == v)
        })
    }

    pub fn scaled(&self, s: f64) -> CsrMatrix {
        let mut out = self.clone();
        for v in &mut out.values {
            *v = self.fmt.round(*v * s);
        }
        out
    }

    pub fn rounded(&self, fmt: FpFormat) -> CsrMatrix {
        let mut out = self.clone();
        out.fmt = fmt;
        if fmt < self.fmt {
            for v in &mut out.values {
                *v = fmt.round(*v);
            }
        }
        out
    }

    /// Sparse product with one vector: each entry is a mixed dot over the
    /// row's nonzeros in ascending column order, stored in the policy storage
    /// format. Non-finite outputs are reported as an error.
    pub fn spmv(&self, x: &[f64], policy: &PrecisionPolicy) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(OfrrError::dims(
                "spmv",
                format!("{}x{} matrix, vector of length {}", self.n, self.n, x.len()),
            ));
        }
        let xs: Vec<f64> = x.iter().map(|&v| policy.store(v)).collect();
        let mut gathered = Vec::new();
        let mut y = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            gathered.clear();
            gathered.extend(cols.iter().map(|&j| xs[j]));
            y.push(policy.store(mixed_dot(vals, &gathered, policy)));
        }
        if y.iter().all(|v| v.is_finite()) {
            Ok(y)
        } else {
            Err(OfrrError::non_finite("sparse matrix-vector product"))
        }
    }
}

impl LinearOperator for CsrMatrix {
    fn nrows(&self) -> usize {
        self.n
    }

    fn ncols(&self) -> usize {
        self.n
    }

    fn storage(&self) -> FpFormat {
        self.fmt
    }

    fn apply(&self, x: &DenseMatrix, policy: &PrecisionPolicy) -> Result<DenseMatrix> {
        check_block("sparse apply", self.n, x)?;
        let mut cols = Vec::with_capacity(x.cols());
        for j in 0..x.cols() {
            cols.push(self.spmv(x.col(j), policy)?);
        }
        DenseMatrix::from_columns(&cols, self.n, policy.storage)
    }

    /// Matrices are symmetric after ingestion, so the transpose is the matrix.
    fn apply_transpose(&self, x: &DenseMatrix, policy: &PrecisionPolicy) -> Result<DenseMatrix> {
        self.apply(x, policy)
    }

    fn stored_as(&self, fmt: FpFormat) -> Box<dyn LinearOperator> {
        Box::new(self.rounded(fmt))
    }

    fn apply_f64(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    fn apply_transpose_f64(&self, x: &[f64]) -> Vec<f64> {
        self.apply_f64(x)
    }

    fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n, self.n, FpFormat::F64);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d.data[j * self.n + i] = v;
            }
        }
        d
    }
}

/// A set of points in `dim`-dimensional space, stored point by point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(OfrrError::InvalidArgument(format!(
                "{} coordinates do not form {dim}-dimensional points",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(OfrrError::InvalidArgument("non-finite coordinate".into()));
        }
        Ok(PointSet { dim, coords })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// `count` distinct points picked without replacement.
    pub fn subsample(&self, count: usize, seed: u64) -> Result<PointSet> {
        if count > self.len() {
            return Err(OfrrError::InvalidArgument(format!(
                "cannot pick {count} of {} points",
                self.len()
            )));
        }
        let mut rng = seeded_rng(seed);
        let picked = rand::seq::index::sample(&mut rng, self.len(), count);
        let mut coords = Vec::with_capacity(count * self.dim);
        for i in picked.iter() {
            coords.extend_from_slice(self.point(i));
        }
        PointSet::new(self.dim, coords)
    }

    /// One point per line, comma separated.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source| OfrrError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
        for i in 0..self.len() {
            let line: Vec<String> = self.point(i).iter().map(|c| format!("{c:.17e}")).collect();
            writeln!(f, "{}", line.join(",")).map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

/// `n` points uniform on `[0, side]²` from a seeded generator.
pub fn sample_uniform_square(n: usize, side: f64, seed: u64) -> Result<PointSet> {
    if n == 0 || !side.is_finite() || side < 0.0 {
        return Err(OfrrError::InvalidArgument(format!(
            "need n >= 1 and a finite side >= 0, got n={n}, side={side}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let coords = (0..2 * n).map(|_| rng.random::<f64>() * side).collect();
    PointSet::new(2, coords)
}

/// Parameters of `A_ij = f·(exp(-‖x_i - x_j‖² / (2l²)) + s·δ_ij)`.
///
/// With `cross_points` set the matrix is rectangular,
/// `A_ij = f·exp(-‖x_i - y_j‖² / (2l²))`, and `s` is ignored.
#[derive(Debug, Clone)]
pub struct KernelConfig {
    pub scale: f64,
    pub length_scale: f64,
    pub variance: f64,
    pub points: PointSet,
    pub cross_points: Option<PointSet>,
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length_scale.is_nan()
            || self.length_scale <= 0.0
            || self.variance.is_nan()
            || self.variance < 0.0
            || !self.scale.is_finite()
        {
            return Err(OfrrError::InvalidArgument(format!(
                "kernel needs l > 0 and s >= 0 (l={}, s={})",
                self.length_scale, self.variance
            )));
        }
        if let Some(y) = &self.cross_points {
            if y.dim() != self.points.dim() {
                return Err(OfrrError::dims(
                    "gaussian_kernel",
                    "point dimensions differ",
                ));
            }
        }
        Ok(())
    }
}

/// Kernel matrix generated in `f64` and rounded once into `fmt`.
pub fn gaussian_kernel(cfg: &KernelConfig, fmt: FpFormat) -> Result<DenseMatrix> {
    cfg.validate()?;
    let x = &cfg.points;
    let denom = 2.0 * cfg.length_scale * cfg.length_scale;
    let sq =
        |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum() };
    Ok(match &cfg.cross_points {
        None => DenseMatrix::from_fn(x.len(), x.len(), fmt, |i, j| {
            let delta = if i == j { cfg.variance } else { 0.0 };
            cfg.scale * ((-sq(x.point(i), x.point(j)) / denom).exp() + delta)
        }),
        Some(y) => DenseMatrix::from_fn(x.len(), y.len(), fmt, |i, j| {
            cfg.scale * (-sq(x.point(i), y.point(j)) / denom).exp()
        }),
    })
}

/// Reads a `coordinate real symmetric` Matrix Market file and expands it to a
/// full symmetric CSR matrix in `f64`.
pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<CsrMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| OfrrError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_matrix_market(&text, &path.display().to_string())
}

/// Parses Matrix Market text; `origin` names the source in error messages.
pub fn parse_matrix_market(text: &str, origin: &str) -> Result<CsrMatrix> {
    let err = |line: usize, message: String| OfrrError::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (hline, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let tokens: Vec<String> = header
        .split_whitespace()
        .map(|t| t.to_ascii_lowercase())
        .collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(err(hline, format!("malformed header `{header}`")));
    }
    if tokens[2] != "coordinate" {
        return Err(err(hline, format!("unsupported storage `{}`", tokens[2])));
    }
    if tokens[3] != "real" {
        return Err(err(
            hline,
            format!("unsupported field `{}`, expected real", tokens[3]),
        ));
    }
    if tokens[4] != "symmetric" {
        return Err(err(
            hline,
            format!("unsupported symmetry `{}`, expected symmetric", tokens[4]),
        ));
    }

    let mut data_lines = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (sline, size) = data_lines
        .next()
        .ok_or_else(|| err(hline, "missing size line".into()))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(sline, format!("bad size line: {e}")))?;
    if dims.len() != 3 {
        return Err(err(
            sline,
            format!("size line needs 3 integers, got `{size}`"),
        ));
    }
    let (rows, cols, nnz) = (dims[0], dims[1], dims[2]);
    if rows != cols {
        return Err(err(
            sline,
            format!("symmetric matrix must be square, got {rows}x{cols}"),
        ));
    }

    let mut triplets = Vec::with_capacity(2 * nnz);
    let mut seen = 0usize;
    for (lno, line) in data_lines {
        let mut it = line.split_whitespace();
        let (Some(si), Some(sj), Some(sv)) = (it.next(), it.next(), it.next()) else {
            return Err(err(lno, format!("expected `row col value`, got `{line}`")));
        };
        let i: usize = si
            .parse()
            .map_err(|e| err(lno, format!("bad row index `{si}`: {e}")))?;
        let j: usize = sj
            .parse()
            .map_err(|e| err(lno, format!("bad column index `{sj}`: {e}")))?;
        let v: f64 = sv
            .parse()
            .map_err(|e| err(lno, format!("bad value `{sv}`: {e}")))?;
        if i == 0 || j == 0 || i > rows || j > cols {
            return Err(err(lno, format!("index ({i}, {j}) outside {rows}x{cols}")));
        }
        seen += 1;
        if seen > nnz {
            return Err(err(lno, format!("more than the declared {nnz} entries")));
        }
        triplets.push((i - 1, j - 1, v));
        if i != j {
            triplets.push((j - 1, i - 1, v));
        }
    }
    if seen != nnz {
        return Err(err(
            sline,
            format!("declared {nnz} entries but found {seen}"),
        ));
    }
    CsrMatrix::from_triplets(rows, &triplets, FpFormat::F64)
}

/// Power iteration in `f64`: 200 steps at most, stopping once the estimate
/// changes by less than `1e-10` relative. Returns `(|λ|max estimate, vector)`.
pub fn power_iteration(a: &dyn LinearOperator, seed: u64) -> (f64, Vec<f64>) {
    const MAX_STEPS: usize = 200;
    const REL_TOL: f64 = 1e-10;
    let n = a.nrows();
    let mut rng = seeded_rng(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.5).collect();
    let nv = norm2_f64(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut lambda = 0.0;
    for _ in 0..MAX_STEPS {
        let w = a.apply_f64(&v);
        let nw = norm2_f64(&w);
        if nw == 0.0 {
            return (0.0, v);
        }
        v = w.into_iter().map(|x| x / nw).collect();
        let converged = (nw - lambda).abs() < REL_TOL * nw;
        lambda = nw;
        if converged {
            break;
        }
    }
    (lambda, v)
}

/// Constant the largest eigenvalue is scaled to.
pub const RESCALE_TARGET: f64 = 64.0;

/// Scales `A` by `64 / λ̂max` so that its largest eigenvalue sits well below
/// 100. The zero matrix comes back unchanged.
pub fn spectral_rescale(a: &CsrMatrix) -> CsrMatrix {
    let (lambda, _) = power_iteration(a, 0x5eed);
    if lambda == 0.0 {
        return a.clone();
    }
    a.scaled(RESCALE_TARGET / lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_diagonal_and_off_diagonal() {
        let points = PointSet::new(2, vec![0.0, 0.0, 3.0, 4.0]).unwrap();
        let cfg = KernelConfig {
            scale: 1.0,
            length_scale: 5.0,
            variance: 0.01,
            points,
            cross_points: None,
        };
        let k = gaussian_kernel(&cfg, FpFormat::F64).unwrap();
        assert_eq!(k.get(0, 0), 1.01);
        assert!((k.get(0, 1) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k.get(0, 1) - 0.606531).abs() < 1e-6);
        assert_eq!(k.get(0, 1), k.get(1, 0));
    }

    #[test]
    fn kernel_decays_with_distance() {
        let points = PointSet::new(2, vec![0.0, 0.0, 1e3, 0.0]).unwrap();
        let cfg = KernelConfig {
            scale: 1.0,
            length_scale: 1.0,
            variance: 0.0,
            points,
            cross_points: None,
        };
        assert_eq!(gaussian_kernel(&cfg, FpFormat::F64).unwrap().get(0, 1), 0.0);
    }

    #[test]
    fn cross_kernel_has_no_variance_term() {
        let x = PointSet::new(2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 0.0]).unwrap();
        let y = PointSet::new(2, vec![0.0, 0.0]).unwrap();
        let cfg = KernelConfig {
            scale: 0.2,
            length_scale: 10.0,
            variance: 0.5,
            points: x,
            cross_points: Some(y),
        };
        let k = gaussian_kernel(&cfg, FpFormat::F64).unwrap();
        assert_eq!((k.rows(), k.cols()), (3, 1));
        assert_eq!(k.get(0, 0), 0.2);
    }

    #[test]
    fn kernel_rejects_bad_length_scale() {
        let cfg = KernelConfig {
            scale: 1.0,
            length_scale: 0.0,
            variance: 0.0,
            points: PointSet::new(2, vec![0.0, 0.0]).unwrap(),
            cross_points: None,
        };
        assert!(gaussian_kernel(&cfg, FpFormat::F64).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_uniform_square(50, 3.0, 9).unwrap();
        let b = sample_uniform_square(50, 3.0, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_uniform_square(50, 3.0, 10).unwrap());
        let degenerate = sample_uniform_square(1, 0.0, 1).unwrap();
        assert_eq!(degenerate.point(0), &[0.0, 0.0]);
    }

    #[test]
    fn sampling_mean_is_centred() {
        let side = 1000f64.sqrt();
        let p = sample_uniform_square(1000, side, 2024).unwrap();
        let n = (2 * p.len()) as f64;
        let mean = (0..p.len()).flat_map(|i| p.point(i).to_vec()).sum::<f64>() / n;
        // uniform variance side²/12, 2000 coordinates
        let sigma = side / 12f64.sqrt() / n.sqrt();
        assert!((mean - side / 2.0).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn matrix_market_symmetric_expansion() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n% c\n2 2 1\n2 1 3.5\n";
        let a = parse_matrix_market(text, "inline").unwrap();
        assert_eq!(a.get(0, 1), 3.5);
        assert_eq!(a.get(1, 0), 3.5);
        assert_eq!(a.nnz(), 2);
        assert!(a.is_symmetric());
    }

    #[test]
    fn matrix_market_diagonal_only() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n3 3 3\n1 1 1\n2 2 2\n3 3 3\n";
        let a = parse_matrix_market(text, "inline").unwrap();
        let d = a.to_dense();
        assert_eq!(
            d,
            DenseMatrix::from_fn(3, 3, FpFormat::F64, |i, j| if i == j {
                (i + 1) as f64
            } else {
                0.0
            })
        );
    }

    #[test]
    fn matrix_market_sums_duplicates() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n2 2 3\n1 1 1\n1 1 2\n2 2 1\n";
        let a = parse_matrix_market(text, "inline").unwrap();
        assert_eq!(a.get(0, 0), 3.0);
    }

    #[test]
    fn matrix_market_errors_name_the_line() {
        let cases = [
            ("%%MatrixMarket matrix array real symmetric\n2 2\n", 1),
            (
                "%%MatrixMarket matrix coordinate complex symmetric\n2 2 1\n1 1 1 0\n",
                1,
            ),
            (
                "%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n3 1 1\n",
                3,
            ),
            (
                "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 1\n",
                2,
            ),
            (
                "%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n% hi\n1 x 1\n",
                4,
            ),
            ("not a header\n", 1),
        ];
        for (text, line) in cases {
            match parse_matrix_market(text, "f.mtx") {
                Err(OfrrError::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn spmv_examples() {
        let a = CsrMatrix::from_triplets(
            2,
            &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)],
            FpFormat::F64,
        )
        .unwrap();
        let y = a
            .spmv(&[1.0, 1.0], &PrecisionPolicy::full(FpFormat::F64))
            .unwrap();
        assert_eq!(y, vec![3.0, 2.0]);

        let id = CsrMatrix::identity(3, FpFormat::F64);
        let x = [0.1, -2.5, 7.0];
        let y = id.spmv(&x, &PrecisionPolicy::mixed_half()).unwrap();
        let expect: Vec<f64> = x.iter().map(|&v| round_to_f16(v)).collect();
        assert_eq!(y, expect);

        let eps11 = 1.0 + 2f64.powi(-11);
        let a = CsrMatrix::from_triplets(1, &[(0, 0, eps11)], FpFormat::F16).unwrap();
        assert_eq!(a.values()[0], 1.0);
        assert_eq!(
            a.spmv(&[3.0], &PrecisionPolicy::native_half()).unwrap(),
            vec![3.0]
        );
    }

    fn round_to_f16(v: f64) -> f64 {
        FpFormat::F16.round(v)
    }

    #[test]
    fn spmv_flags_overflow() {
        let a = CsrMatrix::from_triplets(1, &[(0, 0, 300.0)], FpFormat::F16).unwrap();
        assert!(matches!(
            a.spmv(&[300.0], &PrecisionPolicy::native_half()),
            Err(OfrrError::NonFinite { .. })
        ));
    }

    #[test]
    fn rescale_examples() {
        let id = CsrMatrix::identity(4, FpFormat::F64);
        let r = spectral_rescale(&id);
        assert!((0..4).all(|i| (r.get(i, i) - 64.0).abs() < 1e-9));

        let d = CsrMatrix::from_triplets(2, &[(0, 0, 200.0), (1, 1, 2.0)], FpFormat::F64).unwrap();
        let r = spectral_rescale(&d);
        assert!((r.get(0, 0) - 64.0).abs() < 1e-8);
        assert!((r.get(1, 1) - 0.64).abs() < 1e-10);

        let z = CsrMatrix::from_triplets(3, &[], FpFormat::F64).unwrap();
        assert_eq!(spectral_rescale(&z), z);
    }

    #[test]
    fn dense_apply_matches_fp64_product() {
        let mut rng = seeded_rng(3);
        let a = DenseMatrix::random_symmetric_uniform(7, 5, FpFormat::F64, &mut rng);
        let x = DenseMatrix::random_symmetric_uniform(5, 3, FpFormat::F64, &mut rng);
        let y = a.apply(&x, &PrecisionPolicy::default()).unwrap();
        let z = a.matmul(&x).unwrap();
        assert!(y.sub(&z).unwrap().max_abs() < 1e-14);
        let yt = a.apply_transpose(&y, &PrecisionPolicy::default()).unwrap();
        let zt = a.transpose().matmul(&z).unwrap();
        assert!(yt.sub(&zt).unwrap().max_abs() < 1e-13);
    }
}
