//! Rayleigh-Ritz projections for eigenvalue and singular value problems,
//! classical and orthogonalization-free, plus `f64` residual diagnostics.
//!
//! Projected matrices are formed from the storage-format basis with the
//! widened products of [`PrecisionPolicy::projection`], stored in
//! [`PrecisionPolicy::projection_output`], and solved in `f64`.

use std::f64::consts::SQRT_2;

use crate::error::{OfrrError, Result};
use crate::matrix::{norm2_f64, DenseMatrix, LinearOperator};
use crate::precision::{mixed_gemm_tn, FpFormat, PrecisionPolicy};
use crate::smallsolve::{small_svd, sym_def_gen_eig, sym_eig};

/// Relative cutoff separating the positive half of the SVD pencil spectrum
/// from its zero cluster.
pub const POSITIVE_TAU: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RitzKind {
    Eig,
    Svd,
}

#[derive(Debug, Clone)]
pub struct RitzSet {
    /// Descending.
    pub values: Vec<f64>,
    /// Ritz vectors (left singular vectors for SVD), `f64`.
    pub vectors: DenseMatrix,
    pub right_vectors: Option<DenseMatrix>,
    /// Filled by [`residual_report`]; empty until then.
    pub residuals: Vec<f64>,
    pub kind: RitzKind,
    pub diagnostics: Vec<String>,
}

impl RitzSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Keeps the leading `count` pairs.
    pub fn truncated(mut self, count: usize) -> RitzSet {
        let keep: Vec<usize> = (0..count.min(self.len())).collect();
        self.values.truncate(keep.len());
        self.vectors = self.vectors.select_columns(&keep);
        self.right_vectors = self.right_vectors.map(|v| v.select_columns(&keep));
        self.residuals.truncate(keep.len());
        self
    }
}

/// Precisions used to form one projection: the policy applying `A`, the
/// format the basis is held in, the widened policy for the small products
/// and their storage format.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionPrecision {
    pub matvec: PrecisionPolicy,
    pub basis_storage: FpFormat,
    pub products: PrecisionPolicy,
    pub output: FpFormat,
}

impl ProjectionPrecision {
    pub fn from_policy(policy: &PrecisionPolicy) -> Self {
        ProjectionPrecision {
            matvec: *policy,
            basis_storage: policy.storage,
            products: policy.projection(),
            output: policy.projection_output(),
        }
    }
}

/// The pencil `(B, M)` of a projection.
#[derive(Debug, Clone)]
pub struct PencilProblem {
    pub b: DenseMatrix,
    pub m: DenseMatrix,
    pub source_dim: usize,
}

fn ensure_finite(m: &DenseMatrix, stage: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(OfrrError::non_finite(stage))
    }
}

fn check_basis(a: &dyn LinearOperator, u: &DenseMatrix, side: usize) -> Result<()> {
    if u.cols() == 0 {
        return Err(OfrrError::EmptyBasis);
    }
    if u.rows() != side {
        return Err(OfrrError::dims(
            "projection",
            format!(
                "{}x{} operator with a basis of {} rows",
                a.nrows(),
                a.ncols(),
                u.rows()
            ),
        ));
    }
    Ok(())
}

/// `B = U'AU` and `M = U'U` with `U` rounded to the basis storage format.
/// Returns the pencil and the rounded basis promoted to `f64`.
pub fn eig_pencil(
    a: &dyn LinearOperator,
    u: &DenseMatrix,
    prec: &ProjectionPrecision,
) -> Result<(PencilProblem, DenseMatrix)> {
    check_basis(a, u, a.ncols())?;
    let us = u.rounded(prec.basis_storage);
    let w = a.apply(&us, &prec.matvec)?;
    let b = mixed_gemm_tn(&us, &w, &prec.products, prec.output)?;
    let m = mixed_gemm_tn(&us, &us, &prec.products, prec.output)?;
    ensure_finite(&b, "projection U'AU")?;
    ensure_finite(&m, "projection U'U")?;
    Ok((
        PencilProblem {
            b: b.to_f64().symmetrized(),
            m: m.to_f64().symmetrized(),
            source_dim: a.nrows(),
        },
        us.to_f64(),
    ))
}

/// Classical Rayleigh-Ritz with a basis meant to be orthonormal.
pub fn rr_eig(
    a: &dyn LinearOperator,
    q: &DenseMatrix,
    policy: &PrecisionPolicy,
) -> Result<RitzSet> {
    rr_eig_with(a, q, &ProjectionPrecision::from_policy(policy))
}

pub fn rr_eig_with(
    a: &dyn LinearOperator,
    q: &DenseMatrix,
    prec: &ProjectionPrecision,
) -> Result<RitzSet> {
    check_basis(a, q, a.ncols())?;
    let qs = q.rounded(prec.basis_storage);
    let w = a.apply(&qs, &prec.matvec)?;
    let b = mixed_gemm_tn(&qs, &w, &prec.products, prec.output)?;
    ensure_finite(&b, "projection Q'AQ")?;
    let e = sym_eig(&b.to_f64())?;
    Ok(RitzSet {
        values: e.values,
        vectors: qs.to_f64().matmul(&e.vectors)?,
        right_vectors: None,
        residuals: Vec::new(),
        kind: RitzKind::Eig,
        diagnostics: Vec::new(),
    })
}

/// Orthogonalization-free Rayleigh-Ritz: solves `U'AU y = λ U'U y`.
pub fn ofrr_eig(
    a: &dyn LinearOperator,
    u: &DenseMatrix,
    policy: &PrecisionPolicy,
) -> Result<RitzSet> {
    ofrr_eig_with(a, u, &ProjectionPrecision::from_policy(policy))
}

pub fn ofrr_eig_with(
    a: &dyn LinearOperator,
    u: &DenseMatrix,
    prec: &ProjectionPrecision,
) -> Result<RitzSet> {
    let (pencil, us) = eig_pencil(a, u, prec)?;
    let e = sym_def_gen_eig(&pencil.b, &pencil.m)?;
    if e.values.is_empty() {
        return Err(OfrrError::EmptyBasis);
    }
    let mut diagnostics = Vec::new();
    if e.discarded > 0 {
        diagnostics.push(format!(
            "{} of {} mass-matrix directions discarded as numerically null",
            e.discarded,
            u.cols()
        ));
    }
    Ok(RitzSet {
        values: e.values,
        vectors: us.matmul(&e.vectors)?,
        right_vectors: None,
        residuals: Vec::new(),
        kind: RitzKind::Eig,
        diagnostics,
    })
}

/// Classical two-sided Rayleigh-Ritz for the SVD: `U'AV = Z S W'`.
pub fn rr_svd(
    a: &dyn LinearOperator,
    u: &DenseMatrix,
    v: &DenseMatrix,
    policy: &PrecisionPolicy,
) -> Result<RitzSet> {
    rr_svd_with(a, u, v, &ProjectionPrecision::from_policy(policy))
}

pub fn rr_svd_with(
    a: &dyn LinearOperator,
    u: &DenseMatrix,
    v: &DenseMatrix,
    prec: &ProjectionPrecision,
) -> Result<RitzSet> {
    check_basis(a, u, a.nrows())?;
    check_basis(a, v, a.ncols())?;
    let us = u.rounded(prec.basis_storage);
    let vs = v.rounded(prec.basis_storage);
    let av = a.apply(&vs, &prec.matvec)?;
    let g = mixed_gemm_tn(&us, &av, &prec.products, prec.output)?;
    ensure_finite(&g, "projection U'AV")?;
    let s = small_svd(&g.to_f64())?;
    Ok(RitzSet {
        values: s.values,
        vectors: us.to_f64().matmul(&s.u)?,
        right_vectors: Some(vs.to_f64().matmul(&s.v)?),
        residuals: Vec::new(),
        kind: RitzKind::Svd,
        diagnostics: Vec::new(),
    })
}

/// The pieces of the SVD pencil `[[0, G], [G', 0]]` vs `diag(Mu, Mv)`.
#[derive(Debug, Clone)]
pub struct SvdPencil {
    pub g: DenseMatrix,
    pub mu: DenseMatrix,
    pub mv: DenseMatrix,
    /// Assembled `(k1 + k2)`-order pencil in `f64`.
    pub pencil: PencilProblem,
    /// Storage-format bases promoted to `f64`.
    pub u: DenseMatrix,
    pub v: DenseMatrix,
}

pub fn svd_pencil(
    a: &dyn LinearOperator,
    u: &DenseMatrix,
    v: &DenseMatrix,
    prec: &ProjectionPrecision,
) -> Result<SvdPencil> {
    check_basis(a, u, a.nrows())?;
    check_basis(a, v, a.ncols())?;
    let us = u.rounded(prec.basis_storage);
    let vs = v.rounded(prec.basis_storage);
    let av = a.apply(&vs, &prec.matvec)?;
    let g = mixed_gemm_tn(&us, &av, &prec.products, prec.output)?.to_f64();
    let mu = mixed_gemm_tn(&us, &us, &prec.products, prec.output)?
        .to_f64()
        .symmetrized();
    let mv = mixed_gemm_tn(&vs, &vs, &prec.products, prec.output)?
        .to_f64()
        .symmetrized();
    ensure_finite(&g, "projection U'AV")?;
    ensure_finite(&mu, "projection U'U")?;
    ensure_finite(&mv, "projection V'V")?;
    let (k1, k2) = (us.cols(), vs.cols());
    let k = k1 + k2;
    let b = DenseMatrix::from_fn(k, k, FpFormat::F64, |i, j| match (i < k1, j < k1) {
        (true, false) => g.get(i, j - k1),
        (false, true) => g.get(j, i - k1),
        _ => 0.0,
    });
    let m = DenseMatrix::from_fn(k, k, FpFormat::F64, |i, j| match (i < k1, j < k1) {
        (true, true) => mu.get(i, j),
        (false, false) => mv.get(i - k1, j - k1),
        _ => 0.0,
    });
    Ok(SvdPencil {
        g,
        mu,
        mv,
        pencil: PencilProblem {
            b,
            m,
            source_dim: a.nrows() + a.ncols(),
        },
        u: us.to_f64(),
        v: vs.to_f64(),
    })
}

/// Solution of an [`SvdPencil`]: the full pencil spectrum and the `y`, `z`
/// blocks of the eigenvectors kept as positive.
#[derive(Debug, Clone)]
pub struct SvdPencilSolution {
    pub pencil_values: Vec<f64>,
    pub values: Vec<f64>,
    pub y: DenseMatrix,
    pub z: DenseMatrix,
    pub discarded: usize,
}

pub fn solve_svd_pencil(p: &SvdPencil) -> Result<SvdPencilSolution> {
    let e = sym_def_gen_eig(&p.pencil.b, &p.pencil.m)?;
    let k1 = p.mu.rows();
    let k = p.pencil.b.rows();
    let smax = e.values.first().copied().unwrap_or(0.0);
    let selected: Vec<usize> = if smax > 0.0 {
        (0..e.values.len())
            .filter(|&i| e.values[i] > POSITIVE_TAU * smax)
            .collect()
    } else {
        Vec::new()
    };
    let y = DenseMatrix::from_fn(k1, selected.len(), FpFormat::F64, |i, j| {
        e.vectors.get(i, selected[j])
    });
    let z = DenseMatrix::from_fn(k - k1, selected.len(), FpFormat::F64, |i, j| {
        e.vectors.get(k1 + i, selected[j])
    });
    Ok(SvdPencilSolution {
        values: selected.iter().map(|&i| e.values[i]).collect(),
        pencil_values: e.values,
        y,
        z,
        discarded: e.discarded,
    })
}

/// Orthogonalization-free Rayleigh-Ritz for the SVD through the block pencil.
/// Singular triplets come from the positive pencil eigenvalues, with
/// `Ũ = √2·U·Y` and `Ṽ = √2·V·Z`.
pub fn ofrr_svd(
    a: &dyn LinearOperator,
    u: &DenseMatrix,
    v: &DenseMatrix,
    policy: &PrecisionPolicy,
) -> Result<RitzSet> {
    ofrr_svd_with(a, u, v, &ProjectionPrecision::from_policy(policy))
}

pub fn ofrr_svd_with(
    a: &dyn LinearOperator,
    u: &DenseMatrix,
    v: &DenseMatrix,
    prec: &ProjectionPrecision,
) -> Result<RitzSet> {
    let p = svd_pencil(a, u, v, prec)?;
    let sol = solve_svd_pencil(&p)?;
    let mut diagnostics = Vec::new();
    let wanted = u.cols().min(v.cols());
    if sol.values.len() < wanted {
        diagnostics.push(format!(
            "{} positive pencil eigenvalues for {} requested singular values",
            sol.values.len(),
            wanted
        ));
    }
    if sol.discarded > 0 {
        diagnostics.push(format!(
            "{} mass-matrix directions discarded as numerically null",
            sol.discarded
        ));
    }
    Ok(RitzSet {
        values: sol.values,
        vectors: p.u.matmul(&sol.y)?.scaled(SQRT_2),
        right_vectors: Some(p.v.matmul(&sol.z)?.scaled(SQRT_2)),
        residuals: Vec::new(),
        kind: RitzKind::Svd,
        diagnostics,
    })
}

fn unit(x: &[f64]) -> Vec<f64> {
    let n = norm2_f64(x);
    if n == 0.0 {
        x.to_vec()
    } else {
        x.iter().map(|v| v / n).collect()
    }
}

fn residual_norm(ax: &[f64], s: f64, y: &[f64]) -> f64 {
    ax.iter()
        .zip(y)
        .map(|(a, b)| (a - s * b) * (a - s * b))
        .sum::<f64>()
        .sqrt()
}

/// Fills `rs.residuals` in `f64`. Vectors are normalized to unit 2-norm
/// first. Eigenpairs: `‖Av − λv‖₂/|λ|`; singular triplets:
/// `max(‖Av − σu‖₂, ‖A'u − σv‖₂)/σ`. A zero value gives `+inf`.
pub fn residual_report(a: &dyn LinearOperator, mut rs: RitzSet) -> Result<RitzSet> {
    let mut res = Vec::with_capacity(rs.len());
    match rs.kind {
        RitzKind::Eig => {
            if rs.vectors.rows() != a.ncols() {
                return Err(OfrrError::dims(
                    "residual_report",
                    "vector length differs from operator order",
                ));
            }
            for (j, &lam) in rs.values.iter().enumerate() {
                if lam == 0.0 {
                    res.push(f64::INFINITY);
                    continue;
                }
                let v = unit(rs.vectors.col(j));
                res.push(residual_norm(&a.apply_f64(&v), lam, &v) / lam.abs());
            }
        }
        RitzKind::Svd => {
            let right = rs.right_vectors.as_ref().ok_or_else(|| {
                OfrrError::InvalidArgument("SVD Ritz set without right vectors".into())
            })?;
            if rs.vectors.rows() != a.nrows() || right.rows() != a.ncols() {
                return Err(OfrrError::dims(
                    "residual_report",
                    "vector lengths differ from operator shape",
                ));
            }
            for (j, &s) in rs.values.iter().enumerate() {
                if s == 0.0 {
                    res.push(f64::INFINITY);
                    continue;
                }
                let u = unit(rs.vectors.col(j));
                let v = unit(right.col(j));
                let r1 = residual_norm(&a.apply_f64(&v), s, &u);
                let r2 = residual_norm(&a.apply_transpose_f64(&u), s, &v);
                res.push(r1.max(r2) / s.abs());
            }
        }
    }
    rs.residuals = res;
    Ok(rs)
}
