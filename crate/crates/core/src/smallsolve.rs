//! `f64` kernels for the projected problems: Jacobi eigensolver, whitened
//! generalized eigensolver, one-sided Jacobi SVD and condition numbers.
//!
//! All results are sorted in descending order and every vector is signed so
//! that its largest-magnitude entry is positive.

use crate::error::{OfrrError, Result};
use crate::matrix::{dot_f64, norm2_f64, DenseMatrix};
use crate::precision::FpFormat;

pub const MAX_SWEEPS: usize = 30;
pub const OFF_TOL: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct EigResult {
    /// Descending.
    pub values: Vec<f64>,
    /// One column per value, in `f64`.
    pub vectors: DenseMatrix,
    /// Directions of the mass matrix discarded as numerically null
    /// (generalized problems only).
    pub discarded: usize,
}

#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `m x r` with orthonormal columns, `r = min(m, n)`.
    pub u: DenseMatrix,
    /// Descending, length `r`.
    pub values: Vec<f64>,
    /// `n x r` with orthonormal columns.
    pub v: DenseMatrix,
}

fn square(op: &'static str, s: &DenseMatrix) -> Result<usize> {
    if s.rows() != s.cols() {
        return Err(OfrrError::dims(
            op,
            format!("{}x{} is not square", s.rows(), s.cols()),
        ));
    }
    if !s.is_finite() {
        return Err(OfrrError::non_finite(op));
    }
    Ok(s.rows())
}

fn off_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                s += a[j * n + i] * a[j * n + i];
            }
        }
    }
    s.sqrt()
}

/// Rotates columns `p` and `q` of the column-major `n`-row block `x`.
#[inline]
fn rotate_cols(x: &mut [f64], rows: usize, p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = x.split_at_mut(q * rows);
    let cp = &mut lo[p * rows..(p + 1) * rows];
    let cq = &mut hi[..rows];
    for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
        let (u, v) = (*a, *b);
        *a = c * u - s * v;
        *b = s * u + c * v;
    }
}

/// Cyclic Jacobi on the symmetric column-major `a`. On return the diagonal
/// holds the eigenvalues; `v`, when given, accumulates the rotations.
fn jacobi(a: &mut [f64], n: usize, mut v: Option<&mut [f64]>) -> Result<()> {
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(());
    }
    let target = OFF_TOL * norm;
    for sweep in 0..=MAX_SWEEPS {
        let off = off_norm(a, n);
        if off < target {
            return Ok(());
        }
        if sweep == MAX_SWEEPS {
            return Err(OfrrError::NonConvergence {
                routine: "sym_eig",
                sweeps: MAX_SWEEPS,
                off_norm: off,
            });
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[q * n + p];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[p * n + p], a[q * n + q]);
                if sweep > 3
                    && (100.0 * apq).abs() + app.abs() == app.abs()
                    && (100.0 * apq).abs() + aqq.abs() == aqq.abs()
                {
                    a[q * n + p] = 0.0;
                    a[p * n + q] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- J' A J with J the rotation in the (p, q) plane
                rotate_cols(a, n, p, q, c, s);
                for k in 0..n {
                    let col = &mut a[k * n..(k + 1) * n];
                    let (u, w) = (col[p], col[q]);
                    col[p] = c * u - s * w;
                    col[q] = s * u + c * w;
                }
                a[q * n + p] = 0.0;
                a[p * n + q] = 0.0;
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                if let Some(v) = v.as_deref_mut() {
                    rotate_cols(v, n, p, q, c, s);
                }
            }
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// Flips `x` so its largest-magnitude entry (lowest index on ties) is positive.
pub(crate) fn fix_sign(x: &mut [f64]) -> bool {
    let mut best = 0.0;
    let mut sign = 1.0;
    for &v in x.iter() {
        if v.abs() > best {
            best = v.abs();
            sign = v.signum();
        }
    }
    if sign < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
        true
    } else {
        false
    }
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    idx
}

/// Full symmetric eigendecomposition by cyclic Jacobi rotations. The input is
/// symmetrized as `(S + S') / 2` first.
pub fn sym_eig(s: &DenseMatrix) -> Result<EigResult> {
    let n = square("sym_eig", s)?;
    let mut a = s.symmetrized().into_data();
    let mut v = DenseMatrix::identity(n, FpFormat::F64).into_data();
    jacobi(&mut a, n, Some(&mut v))?;
    let diag: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    let order = descending_order(&diag);
    let values = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Vec::with_capacity(n * n);
    for &i in &order {
        let mut col = v[i * n..(i + 1) * n].to_vec();
        fix_sign(&mut col);
        vectors.extend(col);
    }
    Ok(EigResult {
        values,
        vectors: DenseMatrix::new(n, n, vectors, FpFormat::F64)?,
        discarded: 0,
    })
}

/// Eigenvalues only, descending. Same algorithm as [`sym_eig`] without
/// accumulating the rotations.
pub fn sym_eigvals(s: &DenseMatrix) -> Result<Vec<f64>> {
    let n = square("sym_eigvals", s)?;
    let mut a = s.symmetrized().into_data();
    jacobi(&mut a, n, None)?;
    let mut d: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    d.sort_by(|x, y| y.total_cmp(x));
    Ok(d)
}

/// Eigenvalues of a large symmetric matrix, descending: Householder
/// reduction to tridiagonal form followed by implicit QL. Used for `f64`
/// reference spectra where Jacobi sweeps over the full matrix are too slow.
pub fn reference_eigvals(s: &DenseMatrix) -> Result<Vec<f64>> {
    let n = square("reference_eigvals", s)?;
    let (mut d, mut e) = tridiagonalize(s.symmetrized().into_data(), n);
    tridiagonal_ql(&mut d, &mut e)?;
    d.sort_by(|x, y| y.total_cmp(x));
    Ok(d)
}

/// Singular values of a large matrix, descending: the nonnegative half of
/// the spectrum of `[[0, A], [A', 0]]` from [`reference_eigvals`].
pub fn reference_singular_values(a: &DenseMatrix) -> Result<Vec<f64>> {
    let (m, n) = (a.rows(), a.cols());
    let a = a.to_f64();
    let aug = DenseMatrix::from_fn(m + n, m + n, FpFormat::F64, |i, j| match (i < m, j < m) {
        (true, false) => a.get(i, j - m),
        (false, true) => a.get(j, i - m),
        _ => 0.0,
    });
    let mut s = reference_eigvals(&aug)?;
    s.truncate(m.min(n));
    s.iter_mut().for_each(|x| *x = x.max(0.0));
    Ok(s)
}

/// Householder reduction of the symmetric column-major `a`; returns the
/// diagonal and the subdiagonal (padded with a trailing zero).
fn tridiagonalize(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        let m = n - k - 1;
        let x = &a[k * n + k + 1..(k + 1) * n];
        let norm = x.iter().map(|t| t * t).sum::<f64>().sqrt();
        d[k] = a[k * n + k];
        if norm == 0.0 {
            e[k] = 0.0;
            continue;
        }
        let alpha = if x[0] > 0.0 { -norm } else { norm };
        let v = &mut v[..m];
        v.copy_from_slice(x);
        v[0] -= alpha;
        let vtv = v.iter().map(|t| t * t).sum::<f64>();
        e[k] = alpha;
        if vtv == 0.0 {
            continue;
        }
        let beta = 2.0 / vtv;
        // p = beta · A22 v
        let p = &mut p[..m];
        p.iter_mut().for_each(|t| *t = 0.0);
        for (jj, &vj) in v.iter().enumerate() {
            let col = &a[(k + 1 + jj) * n + k + 1..(k + 2 + jj) * n];
            for (pi, &aij) in p.iter_mut().zip(col) {
                *pi += aij * vj;
            }
        }
        p.iter_mut().for_each(|t| *t *= beta);
        let ptv: f64 = p.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        let half = 0.5 * beta * ptv;
        // w = p - half · v, stored in p
        for (pi, &vi) in p.iter_mut().zip(v.iter()) {
            *pi -= half * vi;
        }
        for jj in 0..m {
            let (vj, wj) = (v[jj], p[jj]);
            let col = &mut a[(k + 1 + jj) * n + k + 1..(k + 2 + jj) * n];
            for ((aij, &vi), &wi) in col.iter_mut().zip(v.iter()).zip(p.iter()) {
                *aij -= vi * wj + wi * vj;
            }
        }
    }
    if n >= 2 {
        d[n - 2] = a[(n - 2) * n + n - 2];
        e[n - 2] = a[(n - 2) * n + n - 1];
    }
    if n >= 1 {
        d[n - 1] = a[(n - 1) * n + n - 1];
    }
    (d, e)
}

/// Implicit QL with Wilkinson-type shifts on a symmetric tridiagonal matrix
/// (`e[i]` couples `i` and `i + 1`). Eigenvalues overwrite `d`.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    const MAX_ITER: usize = 60;
    let n = d.len();
    let floor = f64::EPSILON
        * d.iter()
            .zip(e.iter())
            .fold(0.0_f64, |m, (a, b)| m.max(a.abs() + 2.0 * b.abs()));
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd || e[m].abs() <= floor {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_ITER {
                return Err(OfrrError::NonConvergence {
                    routine: "reference_eigvals",
                    sweeps: MAX_ITER,
                    off_norm: e[l].abs(),
                });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Symmetric-definite pencil `B y = λ M y` by whitening `M`.
///
/// Eigenpairs of `M` with `μ ≤ k·eps·μmax` are discarded; the returned
/// vectors satisfy `Y'MY = I` on the kept subspace. A numerically zero `M`
/// gives an empty result with `discarded = k`.
pub fn sym_def_gen_eig(b: &DenseMatrix, m: &DenseMatrix) -> Result<EigResult> {
    let k = square("sym_def_gen_eig", b)?;
    if square("sym_def_gen_eig", m)? != k {
        return Err(OfrrError::dims("sym_def_gen_eig", "B and M differ in size"));
    }
    let em = sym_eig(m)?;
    let mu_max = em.values.first().copied().unwrap_or(0.0);
    let thresh = k as f64 * f64::EPSILON * mu_max;
    let r = if mu_max > 0.0 {
        em.values.iter().take_while(|&&mu| mu > thresh).count()
    } else {
        0
    };
    if r == 0 {
        return Ok(EigResult {
            values: Vec::new(),
            vectors: DenseMatrix::zeros(k, 0, FpFormat::F64),
            discarded: k,
        });
    }
    let w = DenseMatrix::from_fn(k, r, FpFormat::F64, |i, j| {
        em.vectors.get(i, j) / em.values[j].sqrt()
    });
    let t = w.tr_matmul(&b.symmetrized().matmul(&w)?)?;
    let et = sym_eig(&t)?;
    let y = w.matmul(&et.vectors)?;
    let mut data = y.into_data();
    for col in data.chunks_mut(k) {
        fix_sign(col);
    }
    Ok(EigResult {
        values: et.values,
        vectors: DenseMatrix::new(k, r, data, FpFormat::F64)?,
        discarded: k - r,
    })
}

/// One-sided Jacobi on the columns of `a` (`rows x cols`, `rows >= cols`),
/// accumulating the rotations in `v`.
fn one_sided_jacobi(a: &mut [f64], rows: usize, cols: usize, v: &mut [f64]) -> Result<()> {
    // columns below this squared norm are rounding noise of the null space
    let negligible = (f64::EPSILON * f64::EPSILON) * dot_f64(a, a);
    let mut worst = 0.0_f64;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        worst = 0.0;
        for p in 0..cols {
            for q in p + 1..cols {
                let cp = &a[p * rows..(p + 1) * rows];
                let cq = &a[q * rows..(q + 1) * rows];
                let alpha = dot_f64(cp, cp);
                let beta = dot_f64(cq, cq);
                let gamma = dot_f64(cp, cq);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let rel = gamma.abs() / (alpha * beta).sqrt();
                if rel < OFF_TOL {
                    continue;
                }
                worst = worst.max(rel);
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_cols(a, rows, p, q, c, s);
                rotate_cols(v, cols, p, q, c, s);
            }
        }
        if !rotated {
            return Ok(());
        }
        if worst.is_nan() {
            break;
        }
    }
    Err(OfrrError::NonConvergence {
        routine: "small_svd",
        sweeps: MAX_SWEEPS,
        off_norm: worst,
    })
}

/// Appends unit vectors orthogonal to the existing columns until `cols`
/// columns exist.
fn complete_orthonormal(u: &mut [Vec<f64>], present: &[bool], rows: usize) -> Vec<Vec<f64>> {
    let have: Vec<Vec<f64>> = u
        .iter()
        .zip(present)
        .filter(|(_, &p)| p)
        .map(|(c, _)| c.clone())
        .collect();
    let mut basis = have;
    let mut out = Vec::new();
    let mut e = 0;
    for (col, &p) in u.iter().zip(present) {
        if p {
            out.push(col.clone());
            continue;
        }
        loop {
            let mut cand = vec![0.0; rows];
            cand[e % rows] = 1.0;
            e += 1;
            for _ in 0..2 {
                for b in &basis {
                    let h = dot_f64(b, &cand);
                    cand.iter_mut().zip(b).for_each(|(c, x)| *c -= h * x);
                }
            }
            let nrm = norm2_f64(&cand);
            if nrm > 0.5 {
                cand.iter_mut().for_each(|c| *c /= nrm);
                basis.push(cand.clone());
                out.push(cand);
                break;
            }
        }
    }
    out
}

/// Thin SVD `C = U·diag(σ)·V'` by one-sided Jacobi.
pub fn small_svd(c: &DenseMatrix) -> Result<SvdResult> {
    if !c.is_finite() {
        return Err(OfrrError::non_finite("small_svd"));
    }
    if c.rows() < c.cols() {
        let t = small_svd(&c.transpose())?;
        return Ok(SvdResult {
            u: t.v,
            values: t.values,
            v: t.u,
        });
    }
    let (m, n) = (c.rows(), c.cols());
    let mut a = c.to_f64().into_data();
    let mut v = DenseMatrix::identity(n, FpFormat::F64).into_data();
    one_sided_jacobi(&mut a, m, n, &mut v)?;

    let sigma: Vec<f64> = (0..n).map(|j| norm2_f64(&a[j * m..(j + 1) * m])).collect();
    let order = descending_order(&sigma);
    let smax = order.first().map_or(0.0, |&j| sigma[j]);
    let mut ucols = Vec::with_capacity(n);
    let mut present = Vec::with_capacity(n);
    let mut vcols = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for &j in &order {
        let s = sigma[j];
        let mut vc = v[j * n..(j + 1) * n].to_vec();
        let flip = fix_sign(&mut vc);
        let sgn = if flip { -1.0 } else { 1.0 };
        let nonnull = s > 0.0 && s > smax * f64::EPSILON * m as f64;
        let uc: Vec<f64> = if nonnull {
            a[j * m..(j + 1) * m].iter().map(|x| sgn * x / s).collect()
        } else {
            vec![0.0; m]
        };
        ucols.push(uc);
        present.push(nonnull);
        vcols.push(vc);
        values.push(s);
    }
    let ucols = complete_orthonormal(&mut ucols, &present, m);
    Ok(SvdResult {
        u: DenseMatrix::from_columns(&ucols, m, FpFormat::F64)?,
        values,
        v: DenseMatrix::from_columns(&vcols, n, FpFormat::F64)?,
    })
}

/// `σmax / σmin` of `x` promoted to `f64`; `+inf` when `σmin = 0`.
pub fn cond2(x: &DenseMatrix) -> Result<f64> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(OfrrError::InvalidArgument(
            "cond2 of an empty matrix".into(),
        ));
    }
    if !x.is_finite() {
        return Ok(f64::INFINITY);
    }
    let s = small_svd(x)?.values;
    let (hi, lo) = (s[0], s[s.len() - 1]);
    Ok(if lo == 0.0 { f64::INFINITY } else { hi / lo })
}
