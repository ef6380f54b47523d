//! Basis builders: Gram-Schmidt variants and the Hessenberg process for
//! blocks, Arnoldi and Krylov-Hessenberg for Krylov subspaces.
//!
//! Every builder works under a [`PrecisionPolicy`]: inputs are rounded to the
//! storage format, inner products go through [`mixed_dot`] and every update
//! is written back in the storage format.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{OfrrError, Result};
use crate::matrix::{DenseMatrix, LinearOperator};
use crate::precision::{
    argmax_abs, axpy, div_scale, inf_norm, mixed_dot, safe_norm2, FpFormat, PrecisionPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BasisMethod {
    /// Left-looking modified Gram-Schmidt.
    MgsLeft,
    /// Left-looking MGS with one extra pass when a column loses more than
    /// `1 - √2/2` of its norm to the projection.
    MgsLeftReorth,
    /// Right-looking MGS: each new direction is removed from all trailing
    /// columns at once.
    MgsRight,
    Cgs,
    /// Classical Gram-Schmidt applied twice.
    Cgs2,
    HessLeft,
    HessRight,
    ArnoldiMgs,
    KrylovHess,
}

impl BasisMethod {
    pub const BLOCK: [BasisMethod; 7] = [
        BasisMethod::MgsLeft,
        BasisMethod::MgsLeftReorth,
        BasisMethod::MgsRight,
        BasisMethod::Cgs,
        BasisMethod::Cgs2,
        BasisMethod::HessLeft,
        BasisMethod::HessRight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BasisMethod::MgsLeft => "mgs",
            BasisMethod::MgsLeftReorth => "mgs-reorth",
            BasisMethod::MgsRight => "mgs-right",
            BasisMethod::Cgs => "cgs",
            BasisMethod::Cgs2 => "cgs2",
            BasisMethod::HessLeft => "hess-left",
            BasisMethod::HessRight => "hess-right",
            BasisMethod::ArnoldiMgs => "arnoldi",
            BasisMethod::KrylovHess => "krylov-hess",
        }
    }

    pub fn is_krylov(self) -> bool {
        matches!(self, BasisMethod::ArnoldiMgs | BasisMethod::KrylovHess)
    }

    pub fn is_hessenberg(self) -> bool {
        matches!(
            self,
            BasisMethod::HessLeft | BasisMethod::HessRight | BasisMethod::KrylovHess
        )
    }

    /// Builds a basis for the columns of `x` with a block method.
    pub fn build(self, x: &DenseMatrix, policy: &PrecisionPolicy) -> Result<BasisFactorization> {
        match self {
            BasisMethod::HessLeft => hessenberg_basis(x, HessLayout::Left, policy),
            BasisMethod::HessRight => hessenberg_basis(x, HessLayout::Right, policy),
            BasisMethod::ArnoldiMgs | BasisMethod::KrylovHess => Err(OfrrError::InvalidArgument(
                format!("{self} builds Krylov bases and needs an operator"),
            )),
            gs => orthonormalize(x, gs, policy),
        }
    }
}

impl fmt::Display for BasisMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BasisMethod {
    type Err = OfrrError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "mgs" | "mgs-left" => BasisMethod::MgsLeft,
            "mgs-reorth" | "mgs-left-reorth" | "qr" => BasisMethod::MgsLeftReorth,
            "mgs-right" => BasisMethod::MgsRight,
            "cgs" => BasisMethod::Cgs,
            "cgs2" => BasisMethod::Cgs2,
            "hess" | "hess-right" | "hessenberg" => BasisMethod::HessRight,
            "hess-left" => BasisMethod::HessLeft,
            "arnoldi" | "arnoldi-mgs" | "lanczos" => BasisMethod::ArnoldiMgs,
            "krylov-hess" | "krylov-hessenberg" => BasisMethod::KrylovHess,
            other => {
                return Err(OfrrError::InvalidArgument(format!(
                    "unknown basis method `{other}`"
                )))
            }
        })
    }
}

impl TryFrom<String> for BasisMethod {
    type Error = OfrrError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BasisMethod> for String {
    fn from(m: BasisMethod) -> String {
        m.name().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessLayout {
    /// Each column receives all earlier eliminations when it is reached.
    Left,
    /// Each new pivot column is eliminated from all trailing columns at once.
    Right,
}

/// Output of every basis builder.
#[derive(Debug, Clone)]
pub struct BasisFactorization {
    /// Kept columns only, in the storage format of `policy`.
    pub q: DenseMatrix,
    /// Pivot row of every kept column (Hessenberg methods); `0..width`
    /// otherwise.
    pub pivots: Vec<usize>,
    /// One flag per input column (block methods) or per built column (Krylov).
    pub kept: Vec<bool>,
    pub method: BasisMethod,
    pub policy: PrecisionPolicy,
    /// Krylov builders: `(width + 1) x steps` matrix of recurrence
    /// coefficients, so that `A·v_j = Σ_i h[i, j]·v_i` with the last
    /// coefficient multiplying the next basis vector.
    pub coefficients: Option<DenseMatrix>,
    /// Krylov builders stopped because the next direction vanished.
    pub breakdown: bool,
}

impl BasisFactorization {
    pub fn width(&self) -> usize {
        self.q.cols()
    }

    pub fn dropped(&self) -> usize {
        self.kept.iter().filter(|k| !**k).count()
    }
}

fn check_finite(v: &[f64], stage: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(OfrrError::non_finite(stage))
    }
}

fn coefficient(x: &[f64], y: &[f64], policy: &PrecisionPolicy) -> f64 {
    policy.compute.round(mixed_dot(x, y, policy))
}

/// One MGS pass of `v` against `q`; returns the coefficients used.
fn mgs_sweep(q: &[Vec<f64>], v: &mut [f64], policy: &PrecisionPolicy) -> Vec<f64> {
    q.iter()
        .map(|qi| {
            let h = coefficient(qi, v, policy);
            axpy(-h, qi, v, policy);
            h
        })
        .collect()
}

/// One CGS pass: all coefficients from the incoming `v`, then the updates.
fn cgs_sweep(q: &[Vec<f64>], v: &mut [f64], policy: &PrecisionPolicy) -> Vec<f64> {
    let h: Vec<f64> = q.iter().map(|qi| coefficient(qi, v, policy)).collect();
    for (qi, &hi) in q.iter().zip(&h) {
        axpy(-hi, qi, v, policy);
    }
    h
}

fn assemble(
    columns: Vec<Vec<f64>>,
    rows: usize,
    kept: Vec<bool>,
    pivots: Option<Vec<usize>>,
    method: BasisMethod,
    policy: &PrecisionPolicy,
) -> Result<BasisFactorization> {
    if columns.is_empty() {
        return Err(OfrrError::EmptyBasis);
    }
    let width = columns.len();
    let q = DenseMatrix::from_columns(&columns, rows, policy.storage)?;
    Ok(BasisFactorization {
        q,
        pivots: pivots.unwrap_or_else(|| (0..width).collect()),
        kept,
        method,
        policy: *policy,
        coefficients: None,
        breakdown: false,
    })
}

/// Orthonormal basis for the columns of `x` by a Gram-Schmidt variant.
///
/// A column is dropped when its norm after projection falls below
/// `drop_tol · (norm before projection)`. `Cgs2` also drops a column whose
/// second pass removes more than `1 - √2/2` of what the first pass left.
pub fn orthonormalize(
    x: &DenseMatrix,
    method: BasisMethod,
    policy: &PrecisionPolicy,
) -> Result<BasisFactorization> {
    if x.cols() == 0 || x.rows() == 0 {
        return Err(OfrrError::InvalidArgument("empty input block".into()));
    }
    let x = x.rounded(policy.storage);
    let tol = policy.drop_tol();
    let n = x.rows();
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::with_capacity(x.cols());

    match method {
        BasisMethod::MgsLeft
        | BasisMethod::MgsLeftReorth
        | BasisMethod::Cgs
        | BasisMethod::Cgs2 => {
            for j in 0..x.cols() {
                let mut v = x.col(j).to_vec();
                check_finite(&v, "basis input")?;
                let pre = safe_norm2(&v, policy);
                match method {
                    BasisMethod::MgsLeft => {
                        mgs_sweep(&q, &mut v, policy);
                    }
                    BasisMethod::MgsLeftReorth => {
                        mgs_sweep(&q, &mut v, policy);
                        if safe_norm2(&v, policy) < FRAC_1_SQRT_2 * pre {
                            mgs_sweep(&q, &mut v, policy);
                        }
                    }
                    BasisMethod::Cgs => {
                        cgs_sweep(&q, &mut v, policy);
                    }
                    _ => {
                        cgs_sweep(&q, &mut v, policy);
                        let first = safe_norm2(&v, policy);
                        cgs_sweep(&q, &mut v, policy);
                        // still shrinking after the second pass: numerically
                        // inside span(q)
                        if safe_norm2(&v, policy) < FRAC_1_SQRT_2 * first {
                            kept.push(false);
                            continue;
                        }
                    }
                }
                let post = safe_norm2(&v, policy);
                if !post.is_finite() {
                    return Err(OfrrError::non_finite("Gram-Schmidt projection"));
                }
                if post == 0.0 || post < tol * pre {
                    kept.push(false);
                    continue;
                }
                div_scale(&mut v, post, policy);
                q.push(v);
                kept.push(true);
            }
        }
        BasisMethod::MgsRight => {
            let mut cols: Vec<Vec<f64>> = x.columns().map(<[f64]>::to_vec).collect();
            let mut pre = Vec::with_capacity(cols.len());
            for c in &cols {
                check_finite(c, "basis input")?;
                pre.push(safe_norm2(c, policy));
            }
            for j in 0..cols.len() {
                let post = safe_norm2(&cols[j], policy);
                if !post.is_finite() {
                    return Err(OfrrError::non_finite("Gram-Schmidt projection"));
                }
                if post == 0.0 || post < tol * pre[j] {
                    kept.push(false);
                    continue;
                }
                let (done, trailing) = cols.split_at_mut(j + 1);
                let qj = &mut done[j];
                div_scale(qj, post, policy);
                for c in trailing.iter_mut() {
                    let h = coefficient(qj, c, policy);
                    axpy(-h, qj, c, policy);
                }
                q.push(qj.clone());
                kept.push(true);
            }
        }
        other => {
            return Err(OfrrError::InvalidArgument(format!(
                "{other} is not a Gram-Schmidt method"
            )))
        }
    }
    assemble(q, n, kept, None, method, policy)
}

/// Pivot search over rows that have not served as a pivot yet, lowest index
/// on ties.
fn pivot_row(v: &[f64], used: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&x, &u)) in v.iter().zip(used).enumerate() {
        if u {
            continue;
        }
        let a = x.abs();
        match best {
            Some((_, b)) if a <= b => {}
            _ => best = Some((i, a)),
        }
    }
    best.map(|(i, _)| i)
}

/// Non-orthogonal basis by the Hessenberg process (row-pivoted elimination).
///
/// Each kept column is scaled so that its pivot entry is exactly 1 and has
/// zeros in the pivot rows of all earlier columns. A column whose largest
/// remaining entry is below `drop_tol` is skipped without consuming a pivot.
pub fn hessenberg_basis(
    x: &DenseMatrix,
    layout: HessLayout,
    policy: &PrecisionPolicy,
) -> Result<BasisFactorization> {
    if x.cols() == 0 || x.rows() == 0 {
        return Err(OfrrError::InvalidArgument("empty input block".into()));
    }
    let x = x.rounded(policy.storage);
    let tol = policy.drop_tol();
    let n = x.rows();
    let mut used = vec![false; n];
    let mut pivots: Vec<usize> = Vec::new();
    let mut kept = Vec::with_capacity(x.cols());
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut cols: Vec<Vec<f64>> = x.columns().map(<[f64]>::to_vec).collect();

    for j in 0..cols.len() {
        if layout == HessLayout::Left {
            for (qi, &r) in q.iter().zip(&pivots) {
                let c = cols[j][r];
                if c != 0.0 {
                    axpy(-c, qi, &mut cols[j], policy);
                }
            }
        }
        check_finite(&cols[j], "Hessenberg elimination")?;
        let r = match pivot_row(&cols[j], &used) {
            Some(r) if cols[j][r].abs() >= tol && cols[j][r] != 0.0 => r,
            _ => {
                kept.push(false);
                continue;
            }
        };
        let p = cols[j][r];
        let (done, trailing) = cols.split_at_mut(j + 1);
        let qj = &mut done[j];
        div_scale(qj, p, policy);
        qj[r] = 1.0;
        used[r] = true;
        pivots.push(r);
        kept.push(true);
        if layout == HessLayout::Right {
            for c in trailing.iter_mut() {
                let m = c[r];
                if m != 0.0 {
                    axpy(-m, qj, c, policy);
                }
            }
        }
        q.push(qj.clone());
    }
    let method = match layout {
        HessLayout::Left => BasisMethod::HessLeft,
        HessLayout::Right => BasisMethod::HessRight,
    };
    assemble(q, n, kept, Some(pivots), method, policy)
}

fn krylov_start(op: &dyn LinearOperator, v0: &[f64], k: usize) -> Result<usize> {
    if op.nrows() != op.ncols() {
        return Err(OfrrError::dims("Krylov basis", "operator must be square"));
    }
    if v0.len() != op.ncols() {
        return Err(OfrrError::dims(
            "Krylov basis",
            format!(
                "start vector of length {} for order {}",
                v0.len(),
                op.ncols()
            ),
        ));
    }
    if k == 0 {
        return Err(OfrrError::InvalidArgument(
            "Krylov dimension must be at least 1".into(),
        ));
    }
    check_finite(v0, "Krylov start vector")?;
    if v0.iter().all(|&x| x == 0.0) {
        return Err(OfrrError::ZeroStartVector);
    }
    Ok(k.min(op.nrows()))
}

fn apply_vector(op: &dyn LinearOperator, v: &[f64], policy: &PrecisionPolicy) -> Result<Vec<f64>> {
    let x = DenseMatrix::from_raw(v.len(), 1, v.to_vec(), policy.storage);
    Ok(op.apply(&x, policy)?.into_data())
}

fn coefficient_matrix(h: &[Vec<f64>], width: usize) -> DenseMatrix {
    DenseMatrix::from_fn(width + 1, h.len(), FpFormat::F64, |i, j| {
        h[j].get(i).copied().unwrap_or(0.0)
    })
}

/// Orthonormal Krylov basis by the Arnoldi process with MGS (Lanczos with
/// full orthogonalization for symmetric operators).
pub fn arnoldi_mgs(
    op: &dyn LinearOperator,
    v0: &[f64],
    k: usize,
    policy: &PrecisionPolicy,
) -> Result<BasisFactorization> {
    arnoldi(op, v0, k, policy, false)
}

/// [`arnoldi_mgs`] with one repeated projection pass whenever a new vector
/// keeps less than `√2/2` of its norm.
pub fn arnoldi_mgs_reorth(
    op: &dyn LinearOperator,
    v0: &[f64],
    k: usize,
    policy: &PrecisionPolicy,
) -> Result<BasisFactorization> {
    arnoldi(op, v0, k, policy, true)
}

fn arnoldi(
    op: &dyn LinearOperator,
    v0: &[f64],
    k: usize,
    policy: &PrecisionPolicy,
    reorth: bool,
) -> Result<BasisFactorization> {
    let cap = krylov_start(op, v0, k)?;
    let n = v0.len();
    let tol = policy.drop_tol();
    let mut v: Vec<f64> = v0.iter().map(|&x| policy.store(x)).collect();
    let nrm = safe_norm2(&v, policy);
    if nrm == 0.0 {
        return Err(OfrrError::ZeroStartVector);
    }
    div_scale(&mut v, nrm, policy);
    let mut basis = vec![v];
    let mut h: Vec<Vec<f64>> = Vec::new();
    let mut breakdown = false;

    while basis.len() < cap {
        let mut w = apply_vector(op, basis.last().expect("nonempty"), policy)?;
        let pre = safe_norm2(&w, policy);
        let mut hj = mgs_sweep(&basis, &mut w, policy);
        if reorth && safe_norm2(&w, policy) < FRAC_1_SQRT_2 * pre {
            for (a, b) in hj.iter_mut().zip(mgs_sweep(&basis, &mut w, policy)) {
                *a += b;
            }
        }
        let post = safe_norm2(&w, policy);
        if !post.is_finite() {
            return Err(OfrrError::non_finite("Arnoldi projection"));
        }
        hj.push(post);
        h.push(hj);
        if post == 0.0 || post < tol * pre {
            breakdown = true;
            break;
        }
        div_scale(&mut w, post, policy);
        basis.push(w);
    }
    let width = basis.len();
    let mut out = assemble(
        basis,
        n,
        vec![true; width],
        None,
        BasisMethod::ArnoldiMgs,
        policy,
    )?;
    out.coefficients = Some(coefficient_matrix(&h, width));
    out.breakdown = breakdown;
    Ok(out)
}

/// Non-orthogonal Krylov basis by the Hessenberg process with `z_i = e_i`.
///
/// Every vector is scaled by its largest-magnitude entry (recorded as its
/// pivot), and each new vector is made to vanish at all earlier pivot rows.
pub fn krylov_hessenberg(
    op: &dyn LinearOperator,
    v0: &[f64],
    k: usize,
    policy: &PrecisionPolicy,
) -> Result<BasisFactorization> {
    let cap = krylov_start(op, v0, k)?;
    let n = v0.len();
    let tol = policy.drop_tol();
    let mut v: Vec<f64> = v0.iter().map(|&x| policy.store(x)).collect();
    let r = argmax_abs(&v).expect("nonempty start vector");
    if v[r] == 0.0 {
        return Err(OfrrError::ZeroStartVector);
    }
    let p = v[r];
    div_scale(&mut v, p, policy);
    v[r] = 1.0;
    let mut pivots = vec![r];
    let mut basis = vec![v];
    let mut h: Vec<Vec<f64>> = Vec::new();
    let mut breakdown = false;

    while basis.len() < cap {
        let mut w = apply_vector(op, basis.last().expect("nonempty"), policy)?;
        let pre = inf_norm(&w);
        let mut hj = Vec::with_capacity(basis.len() + 1);
        for (vi, &pi) in basis.iter().zip(&pivots) {
            let c = w[pi];
            if c != 0.0 {
                axpy(-c, vi, &mut w, policy);
            }
            hj.push(c);
        }
        check_finite(&w, "Krylov-Hessenberg elimination")?;
        let r = argmax_abs(&w).expect("nonempty vector");
        let p = w[r];
        hj.push(p);
        h.push(hj);
        if p == 0.0 || p.abs() < tol * pre {
            breakdown = true;
            break;
        }
        div_scale(&mut w, p, policy);
        w[r] = 1.0;
        pivots.push(r);
        basis.push(w);
    }
    let width = basis.len();
    let mut out = assemble(
        basis,
        n,
        vec![true; width],
        Some(pivots),
        BasisMethod::KrylovHess,
        policy,
    )?;
    out.coefficients = Some(coefficient_matrix(&h, width));
    out.breakdown = breakdown;
    Ok(out)
}
