//! C ABI for the `ofrr` toolkit.
//!
//! Matrices and Ritz sets are opaque handles created and destroyed through
//! this interface. Every fallible function returns an [`OfrrStatus`]; the
//! message of the most recent failure on the calling thread is available
//! from [`ofrr_last_error_message`]. Panics never cross the boundary.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ofrr::driver::{krylov_eig, subspace_iter_eig, subspace_iter_svd};
use ofrr::matrix::{gaussian_kernel, read_matrix_market, sample_uniform_square, spectral_rescale};
use ofrr::{
    BasisMethod, CsrMatrix, DenseMatrix, FpFormat, IterConfig, KernelConfig, LinearOperator,
    OfrrError, PrecisionPolicy, ProjectionKind, RitzSet,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfrrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    EmptyBasis = 4,
    NonFinite = 5,
    NonConvergence = 6,
    Parse = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfrrFormat {
    F16 = 0,
    F32 = 1,
    F64 = 2,
}

impl From<OfrrFormat> for FpFormat {
    fn from(f: OfrrFormat) -> Self {
        match f {
            OfrrFormat::F16 => FpFormat::F16,
            OfrrFormat::F32 => FpFormat::F32,
            OfrrFormat::F64 => FpFormat::F64,
        }
    }
}

/// Precision presets.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfrrPreset {
    Double = 0,
    Single = 1,
    MixedHalf = 2,
    NativeHalf = 3,
}

impl From<OfrrPreset> for PrecisionPolicy {
    fn from(p: OfrrPreset) -> Self {
        match p {
            OfrrPreset::Double => PrecisionPolicy::full(FpFormat::F64),
            OfrrPreset::Single => PrecisionPolicy::full(FpFormat::F32),
            OfrrPreset::MixedHalf => PrecisionPolicy::mixed_half(),
            OfrrPreset::NativeHalf => PrecisionPolicy::native_half(),
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfrrBasisMethod {
    MgsLeft = 0,
    MgsLeftReorth = 1,
    MgsRight = 2,
    Cgs = 3,
    Cgs2 = 4,
    HessLeft = 5,
    HessRight = 6,
    ArnoldiMgs = 7,
    KrylovHess = 8,
}

impl From<OfrrBasisMethod> for BasisMethod {
    fn from(m: OfrrBasisMethod) -> Self {
        match m {
            OfrrBasisMethod::MgsLeft => BasisMethod::MgsLeft,
            OfrrBasisMethod::MgsLeftReorth => BasisMethod::MgsLeftReorth,
            OfrrBasisMethod::MgsRight => BasisMethod::MgsRight,
            OfrrBasisMethod::Cgs => BasisMethod::Cgs,
            OfrrBasisMethod::Cgs2 => BasisMethod::Cgs2,
            OfrrBasisMethod::HessLeft => BasisMethod::HessLeft,
            OfrrBasisMethod::HessRight => BasisMethod::HessRight,
            OfrrBasisMethod::ArnoldiMgs => BasisMethod::ArnoldiMgs,
            OfrrBasisMethod::KrylovHess => BasisMethod::KrylovHess,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfrrProjection {
    Rr = 0,
    Ofrr = 1,
}

/// Driver parameters. `top == 0` reports every pair;
/// `has_basis_policy == 0` uses `policy` for the basis and projection too.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OfrrIterConfig {
    pub k: usize,
    pub m: usize,
    pub iter: usize,
    pub restarts: usize,
    pub basis_method: OfrrBasisMethod,
    pub projection: OfrrProjection,
    pub policy: OfrrPreset,
    pub has_basis_policy: u8,
    pub basis_policy: OfrrPreset,
    pub seed: u64,
    pub top: usize,
}

impl From<&OfrrIterConfig> for IterConfig {
    fn from(c: &OfrrIterConfig) -> Self {
        IterConfig {
            k: c.k,
            m: c.m,
            iter: c.iter,
            restarts: c.restarts,
            basis_method: c.basis_method.into(),
            projection: match c.projection {
                OfrrProjection::Rr => ProjectionKind::Rr,
                OfrrProjection::Ofrr => ProjectionKind::Ofrr,
            },
            policy: c.policy.into(),
            basis_policy: (c.has_basis_policy != 0).then(|| c.basis_policy.into()),
            seed: c.seed,
            top: (c.top > 0).then_some(c.top),
        }
    }
}

/// Opaque matrix handle (dense or sparse).
pub struct OfrrMatrix {
    op: Box<dyn LinearOperator>,
}

/// Opaque result handle.
pub struct OfrrRitzSet {
    set: RitzSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &OfrrError) -> OfrrStatus {
    match e {
        OfrrError::DimensionMismatch { .. } => OfrrStatus::DimensionMismatch,
        OfrrError::InvalidArgument(_) | OfrrError::InvalidPolicy(_) | OfrrError::Spec(_) => {
            OfrrStatus::InvalidArgument
        }
        OfrrError::EmptyBasis | OfrrError::ZeroStartVector => OfrrStatus::EmptyBasis,
        OfrrError::NonConvergence { .. } => OfrrStatus::NonConvergence,
        OfrrError::NonFinite { .. } => OfrrStatus::NonFinite,
        OfrrError::Parse { .. } => OfrrStatus::Parse,
        OfrrError::Io { .. } => OfrrStatus::Io,
    }
}

fn fail(status: OfrrStatus, msg: impl Into<String>) -> OfrrStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), OfrrStatus>) -> OfrrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OfrrStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(OfrrStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn lift<T>(r: ofrr::Result<T>) -> Result<T, OfrrStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), OfrrStatus> {
    if p.is_null() {
        Err(fail(OfrrStatus::NullPointer, format!("`{what}` is null")))
    } else {
        Ok(())
    }
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length without
/// the terminator, 0 when there is none.
#[no_mangle]
pub unsafe extern "C" fn ofrr_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ofrr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Rounds `x` to `fmt` (round to nearest even, overflow to infinity).
#[no_mangle]
pub extern "C" fn ofrr_round_to(x: f64, fmt: OfrrFormat) -> f64 {
    FpFormat::from(fmt).round(x)
}

/// Driver defaults: k 20, m 1, iter 1, MGS with reorthogonalization, RR,
/// double precision.
#[no_mangle]
pub unsafe extern "C" fn ofrr_iter_config_default(out: *mut OfrrIterConfig) -> OfrrStatus {
    guard(|| {
        non_null(out, "out")?;
        out.write(OfrrIterConfig {
            k: 20,
            m: 1,
            iter: 1,
            restarts: 0,
            basis_method: OfrrBasisMethod::MgsLeftReorth,
            projection: OfrrProjection::Rr,
            policy: OfrrPreset::Double,
            has_basis_policy: 0,
            basis_policy: OfrrPreset::Double,
            seed: 0,
            top: 0,
        });
        Ok(())
    })
}

fn emit_matrix(out: *mut *mut OfrrMatrix, op: Box<dyn LinearOperator>) {
    unsafe { out.write(Box::into_raw(Box::new(OfrrMatrix { op }))) };
}

/// Dense `rows x cols` matrix from column-major `data`, stored in `fmt`.
#[no_mangle]
pub unsafe extern "C" fn ofrr_matrix_dense_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    fmt: OfrrFormat,
    out: *mut *mut OfrrMatrix,
) -> OfrrStatus {
    guard(|| {
        non_null(out, "out")?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| fail(OfrrStatus::InvalidArgument, "matrix size overflows"))?;
        if len > 0 {
            non_null(data, "data")?;
        }
        let slice = if len == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(data, len)
        };
        let m = lift(DenseMatrix::new(rows, cols, slice.to_vec(), fmt.into()))?;
        emit_matrix(out, Box::new(m));
        Ok(())
    })
}

/// Symmetric sparse matrix from 0-based triplets (duplicates summed).
#[no_mangle]
pub unsafe extern "C" fn ofrr_matrix_csr_from_triplets(
    dim: usize,
    nnz: usize,
    rows: *const usize,
    cols: *const usize,
    values: *const f64,
    out: *mut *mut OfrrMatrix,
) -> OfrrStatus {
    guard(|| {
        non_null(out, "out")?;
        let trip: Vec<(usize, usize, f64)> = if nnz == 0 {
            Vec::new()
        } else {
            non_null(rows, "rows")?;
            non_null(cols, "cols")?;
            non_null(values, "values")?;
            let (r, c, v) = (
                std::slice::from_raw_parts(rows, nnz),
                std::slice::from_raw_parts(cols, nnz),
                std::slice::from_raw_parts(values, nnz),
            );
            (0..nnz).map(|i| (r[i], c[i], v[i])).collect()
        };
        let m = lift(CsrMatrix::from_triplets(dim, &trip, FpFormat::F64))?;
        emit_matrix(out, Box::new(m));
        Ok(())
    })
}

/// Reads a symmetric Matrix Market file; `rescale != 0` scales the largest
/// eigenvalue to about 64.
#[no_mangle]
pub unsafe extern "C" fn ofrr_matrix_read_matrix_market(
    path: *const c_char,
    rescale: u8,
    out: *mut *mut OfrrMatrix,
) -> OfrrStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(OfrrStatus::InvalidArgument, "path is not UTF-8"))?;
        let a = lift(read_matrix_market(p))?;
        let a = if rescale != 0 {
            spectral_rescale(&a)
        } else {
            a
        };
        emit_matrix(out, Box::new(a));
        Ok(())
    })
}

/// Gaussian kernel over `n` points drawn uniformly from a square of side
/// `side` (`side <= 0` means `sqrt(n)`). `cols > 0` builds the cross-kernel
/// against `cols` of those points.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ofrr_matrix_gaussian_kernel(
    n: usize,
    cols: usize,
    side: f64,
    f: f64,
    l: f64,
    s: f64,
    seed: u64,
    out: *mut *mut OfrrMatrix,
) -> OfrrStatus {
    guard(|| {
        non_null(out, "out")?;
        let side = if side > 0.0 { side } else { (n as f64).sqrt() };
        let points = lift(sample_uniform_square(n, side, seed))?;
        let cross_points = if cols > 0 {
            Some(lift(points.subsample(cols, seed.wrapping_add(1)))?)
        } else {
            None
        };
        let cfg = KernelConfig {
            scale: f,
            length_scale: l,
            variance: s,
            points,
            cross_points,
        };
        let a = lift(gaussian_kernel(&cfg, FpFormat::F64))?;
        emit_matrix(out, Box::new(a));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ofrr_matrix_rows(m: *const OfrrMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.op.nrows())
}

#[no_mangle]
pub unsafe extern "C" fn ofrr_matrix_cols(m: *const OfrrMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.op.ncols())
}

/// `y = A x` in `f64`; `x` has `cols` entries, `y` has `rows`.
#[no_mangle]
pub unsafe extern "C" fn ofrr_matrix_apply(
    m: *const OfrrMatrix,
    x: *const f64,
    y: *mut f64,
) -> OfrrStatus {
    guard(|| {
        non_null(m, "m")?;
        non_null(x, "x")?;
        non_null(y, "y")?;
        let m = &*m;
        let xs = std::slice::from_raw_parts(x, m.op.ncols());
        let out = m.op.apply_f64(xs);
        std::slice::from_raw_parts_mut(y, m.op.nrows()).copy_from_slice(&out);
        Ok(())
    })
}

/// Frees a matrix; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ofrr_matrix_free(m: *mut OfrrMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

type Driver = fn(&dyn LinearOperator, &IterConfig) -> ofrr::Result<RitzSet>;

unsafe fn drive(
    driver: Driver,
    m: *const OfrrMatrix,
    cfg: *const OfrrIterConfig,
    out: *mut *mut OfrrRitzSet,
) -> OfrrStatus {
    guard(|| {
        non_null(m, "m")?;
        non_null(cfg, "cfg")?;
        non_null(out, "out")?;
        let set = lift(driver((*m).op.as_ref(), &IterConfig::from(&*cfg)))?;
        out.write(Box::into_raw(Box::new(OfrrRitzSet { set })));
        Ok(())
    })
}

/// Multi-step subspace iteration for the leading eigenpairs.
#[no_mangle]
pub unsafe extern "C" fn ofrr_subspace_iter_eig(
    m: *const OfrrMatrix,
    cfg: *const OfrrIterConfig,
    out: *mut *mut OfrrRitzSet,
) -> OfrrStatus {
    drive(subspace_iter_eig, m, cfg, out)
}

/// Restarted Krylov iteration (`basis_method` Arnoldi or Krylov-Hessenberg).
#[no_mangle]
pub unsafe extern "C" fn ofrr_krylov_eig(
    m: *const OfrrMatrix,
    cfg: *const OfrrIterConfig,
    out: *mut *mut OfrrRitzSet,
) -> OfrrStatus {
    drive(krylov_eig, m, cfg, out)
}

/// Alternating subspace iteration for the leading singular triplets.
#[no_mangle]
pub unsafe extern "C" fn ofrr_subspace_iter_svd(
    m: *const OfrrMatrix,
    cfg: *const OfrrIterConfig,
    out: *mut *mut OfrrRitzSet,
) -> OfrrStatus {
    drive(subspace_iter_svd, m, cfg, out)
}

/// Number of pairs in the set.
#[no_mangle]
pub unsafe extern "C" fn ofrr_ritz_len(r: *const OfrrRitzSet) -> usize {
    r.as_ref().map_or(0, |r| r.set.len())
}

/// Rows of the (left) Ritz vectors.
#[no_mangle]
pub unsafe extern "C" fn ofrr_ritz_vector_rows(r: *const OfrrRitzSet) -> usize {
    r.as_ref().map_or(0, |r| r.set.vectors.rows())
}

/// Rows of the right singular vectors, 0 for eigenproblems.
#[no_mangle]
pub unsafe extern "C" fn ofrr_ritz_right_vector_rows(r: *const OfrrRitzSet) -> usize {
    r.as_ref()
        .and_then(|r| r.set.right_vectors.as_ref())
        .map_or(0, |v| v.rows())
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), OfrrStatus> {
    if len < src.len() {
        return Err(fail(
            OfrrStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    if !src.is_empty() {
        non_null(buf, "buf")?;
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

/// Copies the values (descending) into `buf`.
#[no_mangle]
pub unsafe extern "C" fn ofrr_ritz_values(
    r: *const OfrrRitzSet,
    buf: *mut f64,
    len: usize,
) -> OfrrStatus {
    guard(|| {
        non_null(r, "r")?;
        copy_out(&(*r).set.values, buf, len)
    })
}

/// Copies the relative residuals into `buf`.
#[no_mangle]
pub unsafe extern "C" fn ofrr_ritz_residuals(
    r: *const OfrrRitzSet,
    buf: *mut f64,
    len: usize,
) -> OfrrStatus {
    guard(|| {
        non_null(r, "r")?;
        copy_out(&(*r).set.residuals, buf, len)
    })
}

/// Copies the (left) vectors, column-major `vector_rows x len`.
#[no_mangle]
pub unsafe extern "C" fn ofrr_ritz_vectors(
    r: *const OfrrRitzSet,
    buf: *mut f64,
    len: usize,
) -> OfrrStatus {
    guard(|| {
        non_null(r, "r")?;
        copy_out((*r).set.vectors.data(), buf, len)
    })
}

/// Copies the right singular vectors, column-major; fails with
/// `InvalidArgument` for eigenproblem results.
#[no_mangle]
pub unsafe extern "C" fn ofrr_ritz_right_vectors(
    r: *const OfrrRitzSet,
    buf: *mut f64,
    len: usize,
) -> OfrrStatus {
    guard(|| {
        non_null(r, "r")?;
        match &(*r).set.right_vectors {
            Some(v) => copy_out(v.data(), buf, len),
            None => Err(fail(
                OfrrStatus::InvalidArgument,
                "no right vectors in an eigen result",
            )),
        }
    })
}

/// Frees a result; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ofrr_ritz_free(r: *mut OfrrRitzSet) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}
