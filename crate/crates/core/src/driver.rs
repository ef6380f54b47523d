//! Outer iterations: multi-step subspace iteration, restarted Krylov
//! iteration and alternating subspace iteration for the SVD.
//!
//! Drivers take the operator in its original precision. MatVecs run on a
//! copy stored in the policy's storage format, residuals are measured
//! against the original.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::basis::{arnoldi_mgs, krylov_hessenberg, BasisFactorization, BasisMethod};
use crate::error::{OfrrError, Result};
use crate::matrix::{seeded_rng, DenseMatrix, LinearOperator};
use crate::precision::{div_scale, inf_norm, FpFormat, PrecisionPolicy};
use crate::projection::{
    ofrr_eig_with, ofrr_svd_with, residual_report, rr_eig_with, rr_svd_with, ProjectionPrecision,
    RitzSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKind {
    Rr,
    Ofrr,
}

impl ProjectionKind {
    pub fn name(self) -> &'static str {
        match self {
            ProjectionKind::Rr => "rr",
            ProjectionKind::Ofrr => "ofrr",
        }
    }
}

impl fmt::Display for ProjectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProjectionKind {
    type Err = OfrrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rr" | "rayleigh-ritz" => Ok(ProjectionKind::Rr),
            "ofrr" => Ok(ProjectionKind::Ofrr),
            other => Err(OfrrError::InvalidArgument(format!(
                "unknown projection `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterConfig {
    /// Subspace (or Krylov) dimension.
    pub k: usize,
    /// Outer iterations.
    pub m: usize,
    /// MatVec steps per outer iteration.
    pub iter: usize,
    /// Krylov restarts.
    pub restarts: usize,
    pub basis_method: BasisMethod,
    pub projection: ProjectionKind,
    /// Policy of the power-step MatVecs (and of everything else unless
    /// `basis_policy` is set).
    pub policy: PrecisionPolicy,
    /// Separate policy for basis construction and the projection, including
    /// the MatVec inside `Q'AQ`.
    pub basis_policy: Option<PrecisionPolicy>,
    pub seed: u64,
    /// Number of leading pairs reported; all when `None`.
    pub top: Option<usize>,
}

impl Default for IterConfig {
    fn default() -> Self {
        IterConfig {
            k: 20,
            m: 1,
            iter: 1,
            restarts: 0,
            basis_method: BasisMethod::MgsLeftReorth,
            projection: ProjectionKind::Rr,
            policy: PrecisionPolicy::default(),
            basis_policy: None,
            seed: 0,
            top: None,
        }
    }
}

impl IterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 || self.iter == 0 {
            return Err(OfrrError::InvalidArgument(format!(
                "need k, m, iter >= 1 (k={}, m={}, iter={})",
                self.k, self.m, self.iter
            )));
        }
        Ok(())
    }

    pub fn basis_policy(&self) -> PrecisionPolicy {
        self.basis_policy.unwrap_or(self.policy)
    }

    fn projection_precision(&self) -> ProjectionPrecision {
        ProjectionPrecision::from_policy(&self.basis_policy())
    }
}

/// `k` columns of U(0, 1) entries drawn in `f64` and rounded to `fmt`.
pub fn random_start(rows: usize, k: usize, seed: u64, fmt: FpFormat) -> DenseMatrix {
    DenseMatrix::random_uniform(rows, k, fmt, &mut seeded_rng(seed))
}

/// Divides every column by its largest magnitude under `policy`. Zero
/// columns are left alone.
pub fn scale_columns(x: &mut DenseMatrix, policy: &PrecisionPolicy) {
    for j in 0..x.cols() {
        let col = x.col_mut(j);
        let m = inf_norm(col);
        if m > 0.0 && m.is_finite() {
            div_scale(col, m, policy);
        }
    }
}

/// `A^iter · X` with column scaling after every product.
pub fn power_block(
    a: &dyn LinearOperator,
    x0: &DenseMatrix,
    iter: usize,
    policy: &PrecisionPolicy,
) -> Result<DenseMatrix> {
    let mut x = x0.rounded(policy.storage);
    for _ in 0..iter {
        x = a.apply(&x, policy)?;
        scale_columns(&mut x, policy);
    }
    Ok(x)
}

fn finish(a: &dyn LinearOperator, rs: RitzSet, top: Option<usize>) -> Result<RitzSet> {
    let want = top.unwrap_or(rs.len());
    let mut rs = residual_report(a, rs)?;
    if rs.len() < want {
        rs.diagnostics
            .push(format!("{} pairs available of {want} requested", rs.len()));
    }
    Ok(rs.truncated(want))
}

fn check_square(a: &dyn LinearOperator, k: usize) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(OfrrError::dims("eigen driver", "operator must be square"));
    }
    if k > a.nrows() {
        return Err(OfrrError::InvalidArgument(format!(
            "subspace dimension {k} exceeds the order {}",
            a.nrows()
        )));
    }
    Ok(())
}

fn project_eig(
    a: &dyn LinearOperator,
    basis: &BasisFactorization,
    cfg: &IterConfig,
    prec: &ProjectionPrecision,
) -> Result<RitzSet> {
    match cfg.projection {
        ProjectionKind::Rr => rr_eig_with(a, &basis.q, prec),
        ProjectionKind::Ofrr => ofrr_eig_with(a, &basis.q, prec),
    }
}

/// Multi-step subspace iteration with a Rayleigh-Ritz step per outer
/// iteration; the Ritz vectors seed the next outer iteration.
pub fn subspace_iter_eig(a: &dyn LinearOperator, cfg: &IterConfig) -> Result<RitzSet> {
    cfg.validate()?;
    check_square(a, cfg.k)?;
    if cfg.basis_method.is_krylov() {
        return Err(OfrrError::InvalidArgument(format!(
            "{} is a Krylov builder; use krylov_eig",
            cfg.basis_method
        )));
    }
    let stored = a.stored_as(cfg.policy.storage);
    let bpol = cfg.basis_policy();
    let proj_op = a.stored_as(bpol.storage);
    let prec = cfg.projection_precision();
    let mut x0 = random_start(a.nrows(), cfg.k, cfg.seed, cfg.policy.storage);
    let mut last = None;
    for _ in 0..cfg.m {
        let x = power_block(stored.as_ref(), &x0, cfg.iter, &cfg.policy)?;
        let basis = cfg.basis_method.build(&x, &bpol)?;
        let rs = project_eig(proj_op.as_ref(), &basis, cfg, &prec)?;
        x0 = rs.vectors.rounded(cfg.policy.storage);
        last = Some(rs);
    }
    finish(a, last.expect("m >= 1"), cfg.top)
}

/// Krylov basis of dimension `k` from `v0`, projected; restarted from the
/// Ritz vector of the largest Ritz value.
pub fn krylov_eig(a: &dyn LinearOperator, cfg: &IterConfig) -> Result<RitzSet> {
    if cfg.k == 0 {
        return Err(OfrrError::InvalidArgument(
            "Krylov dimension must be at least 1".into(),
        ));
    }
    check_square(a, cfg.k)?;
    let stored = a.stored_as(cfg.policy.storage);
    let prec = ProjectionPrecision::from_policy(&cfg.policy);
    let mut v0 = random_start(a.nrows(), 1, cfg.seed, cfg.policy.storage).into_data();
    let mut last: Option<RitzSet> = None;
    let mut notes = Vec::new();
    for restart in 0..=cfg.restarts {
        let basis = match cfg.basis_method {
            BasisMethod::ArnoldiMgs => arnoldi_mgs(stored.as_ref(), &v0, cfg.k, &cfg.policy)?,
            BasisMethod::KrylovHess => krylov_hessenberg(stored.as_ref(), &v0, cfg.k, &cfg.policy)?,
            other => {
                return Err(OfrrError::InvalidArgument(format!(
                    "{other} is not a Krylov builder"
                )))
            }
        };
        if basis.breakdown {
            notes.push(format!(
                "breakdown at width {} (restart {restart})",
                basis.width()
            ));
        }
        let rs = project_eig(stored.as_ref(), &basis, cfg, &prec)?;
        v0 = rs
            .vectors
            .col(0)
            .iter()
            .map(|&x| cfg.policy.store(x))
            .collect();
        last = Some(rs);
    }
    let mut rs = last.expect("at least one pass");
    rs.diagnostics.extend(notes);
    finish(a, rs, cfg.top)
}

/// Alternating subspace iteration for the leading singular triplets.
pub fn subspace_iter_svd(a: &dyn LinearOperator, cfg: &IterConfig) -> Result<RitzSet> {
    cfg.validate()?;
    if cfg.k > a.nrows().min(a.ncols()) {
        return Err(OfrrError::InvalidArgument(format!(
            "subspace dimension {} exceeds min({}, {})",
            cfg.k,
            a.nrows(),
            a.ncols()
        )));
    }
    if cfg.basis_method.is_krylov() {
        return Err(OfrrError::InvalidArgument(format!(
            "{} is a Krylov builder",
            cfg.basis_method
        )));
    }
    let stored = a.stored_as(cfg.policy.storage);
    let bpol = cfg.basis_policy();
    let proj_op = a.stored_as(bpol.storage);
    let prec = cfg.projection_precision();
    let mut v0 = random_start(a.ncols(), cfg.k, cfg.seed, cfg.policy.storage);
    let mut last = None;
    for _ in 0..cfg.m {
        let mut v = v0.rounded(cfg.policy.storage);
        let mut u = DenseMatrix::zeros(a.nrows(), 0, cfg.policy.storage);
        for _ in 0..cfg.iter {
            u = stored.apply(&v, &cfg.policy)?;
            scale_columns(&mut u, &cfg.policy);
            v = stored.apply_transpose(&u, &cfg.policy)?;
            scale_columns(&mut v, &cfg.policy);
        }
        let bu = cfg.basis_method.build(&u, &bpol)?;
        let bv = cfg.basis_method.build(&v, &bpol)?;
        let rs = match cfg.projection {
            ProjectionKind::Rr => rr_svd_with(proj_op.as_ref(), &bu.q, &bv.q, &prec)?,
            ProjectionKind::Ofrr => ofrr_svd_with(proj_op.as_ref(), &bu.q, &bv.q, &prec)?,
        };
        if rs.is_empty() {
            return Err(OfrrError::EmptyBasis);
        }
        v0 = rs
            .right_vectors
            .as_ref()
            .expect("SVD projections return right vectors")
            .rounded(cfg.policy.storage);
        last = Some(rs);
    }
    finish(a, last.expect("m >= 1"), cfg.top)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smallsolve::sym_eig;

    fn diag(d: &[f64]) -> DenseMatrix {
        DenseMatrix::from_fn(d.len(), d.len(), FpFormat::F64, |i, j| {
            if i == j {
                d[i]
            } else {
                0.0
            }
        })
    }

    #[test]
    fn full_space_subspace_iteration_is_exact() {
        let mut rng = seeded_rng(4);
        let r = DenseMatrix::random_symmetric_uniform(6, 6, FpFormat::F64, &mut rng);
        let a = r.tr_matmul(&r).unwrap();
        let cfg = IterConfig {
            k: 6,
            ..IterConfig::default()
        };
        let rs = subspace_iter_eig(&a, &cfg).unwrap();
        let e = sym_eig(&a).unwrap();
        for (x, y) in rs.values.iter().zip(&e.values) {
            assert!((x - y).abs() <= 1e-10 * e.values[0]);
        }
    }

    #[test]
    fn full_krylov_space_is_exact() {
        let a = diag(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        for (method, projection) in [
            (BasisMethod::ArnoldiMgs, ProjectionKind::Rr),
            (BasisMethod::KrylovHess, ProjectionKind::Ofrr),
        ] {
            let cfg = IterConfig {
                k: 5,
                basis_method: method,
                projection,
                ..IterConfig::default()
            };
            let rs = krylov_eig(&a, &cfg).unwrap();
            for (x, y) in rs.values.iter().zip([5.0, 4.0, 3.0, 2.0, 1.0]) {
                assert!((x - y).abs() < 1e-10, "{method}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn svd_full_space() {
        let a = diag(&[5.0, 2.0]);
        for projection in [ProjectionKind::Rr, ProjectionKind::Ofrr] {
            let cfg = IterConfig {
                k: 2,
                projection,
                ..IterConfig::default()
            };
            let rs = subspace_iter_svd(&a, &cfg).unwrap();
            assert!((rs.values[0] - 5.0).abs() < 1e-10 && (rs.values[1] - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let mut rng = seeded_rng(5);
        let r = DenseMatrix::random_uniform(30, 30, FpFormat::F64, &mut rng);
        let a = r.tr_matmul(&r).unwrap();
        let cfg = IterConfig {
            k: 6,
            m: 2,
            iter: 2,
            basis_method: BasisMethod::HessRight,
            projection: ProjectionKind::Ofrr,
            policy: PrecisionPolicy::mixed_half(),
            seed: 77,
            ..IterConfig::default()
        };
        let x = subspace_iter_eig(&a.scaled(1.0 / 30.0), &cfg).unwrap();
        let y = subspace_iter_eig(&a.scaled(1.0 / 30.0), &cfg).unwrap();
        assert_eq!(x.values, y.values);
        assert_eq!(x.vectors, y.vectors);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let a = diag(&[1.0, 2.0]);
        let bad = IterConfig {
            k: 3,
            ..IterConfig::default()
        };
        assert!(subspace_iter_eig(&a, &bad).is_err());
        let bad = IterConfig {
            m: 0,
            k: 1,
            ..IterConfig::default()
        };
        assert!(subspace_iter_eig(&a, &bad).is_err());
    }
}
