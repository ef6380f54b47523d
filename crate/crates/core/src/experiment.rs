//! Experiment runner: declarative TOML specs, grid execution and CSV/JSON
//! result tables.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisMethod;
use crate::driver::{krylov_eig, power_block, random_start, subspace_iter_eig, subspace_iter_svd};
use crate::driver::{IterConfig, ProjectionKind};
use crate::error::{OfrrError, Result};
use crate::matrix::{
    gaussian_kernel, read_matrix_market, sample_uniform_square, seeded_rng, spectral_rescale,
    DenseMatrix, KernelConfig, LinearOperator,
};
use crate::precision::{FpFormat, PrecisionPolicy};
use crate::projection::RitzSet;
use crate::smallsolve::{cond2, reference_eigvals, reference_singular_values};

pub const SEED_ENV: &str = "OFRR_SEED";
pub const BENCH_REPETITIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    KernelEig,
    SparseEig,
    KernelSvd,
    CondStudy,
    Bench,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::KernelEig => "kernel-eig",
            ExperimentKind::SparseEig => "sparse-eig",
            ExperimentKind::KernelSvd => "kernel-svd",
            ExperimentKind::CondStudy => "cond-study",
            ExperimentKind::Bench => "bench",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a test matrix comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MatrixSource {
    /// Gaussian kernel over points drawn uniformly from a square; `cols`
    /// switches to the rectangular cross-kernel against that many points
    /// picked from the same set without replacement.
    Kernel {
        n: usize,
        side: Option<f64>,
        f: f64,
        l: f64,
        #[serde(default)]
        s: f64,
        cols: Option<usize>,
        points_seed: Option<u64>,
    },
    /// Symmetric Matrix Market file, spectrally rescaled unless disabled.
    File {
        path: PathBuf,
        #[serde(default = "yes")]
        rescale: bool,
    },
}

fn yes() -> bool {
    true
}

/// Per-matrix overrides of the run parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    pub k: Option<usize>,
    pub m: Option<usize>,
    pub iter: Option<usize>,
    pub restarts: Option<usize>,
    pub top: Option<usize>,
}

impl RunParams {
    fn over(&self, base: &RunParams) -> RunParams {
        RunParams {
            k: self.k.or(base.k),
            m: self.m.or(base.m),
            iter: self.iter.or(base.iter),
            restarts: self.restarts.or(base.restarts),
            top: self.top.or(base.top),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec {
    pub name: String,
    #[serde(flatten)]
    pub source: MatrixSource,
    #[serde(default)]
    pub run: RunParams,
}

/// One grid cell: MatVec policy, optional basis/projection policy, basis
/// builder and projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub policy: String,
    pub basis_policy: Option<String>,
    pub basis: BasisMethod,
    #[serde(default = "default_projection")]
    pub projection: ProjectionKind,
}

fn default_projection() -> ProjectionKind {
    ProjectionKind::Rr
}

impl CellSpec {
    fn policies(&self) -> Result<(PrecisionPolicy, Option<PrecisionPolicy>)> {
        let p = self.policy.parse()?;
        let b = self.basis_policy.as_deref().map(str::parse).transpose()?;
        Ok((p, b))
    }

    fn policy_label(&self) -> String {
        match &self.basis_policy {
            Some(b) => format!("{}+{}", self.policy, b),
            None => self.policy.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CondParams {
    pub n: usize,
    pub f: f64,
    pub s: f64,
    pub length_scales: Vec<f64>,
    pub k: usize,
    pub m: usize,
    pub iter: usize,
    pub policies: Vec<String>,
    /// Basis methods; `raw` is accepted in `raw_x` instead.
    pub methods: Vec<BasisMethod>,
    pub raw_x: bool,
}

impl Default for CondParams {
    fn default() -> Self {
        CondParams {
            n: 1000,
            f: 1.0,
            s: 0.01,
            length_scales: vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0],
            k: 20,
            m: 1,
            iter: 3,
            policies: vec!["double".into(), "single".into(), "native-half".into()],
            methods: vec![
                BasisMethod::MgsLeftReorth,
                BasisMethod::Cgs2,
                BasisMethod::HessRight,
            ],
            raw_x: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchParams {
    /// `[rows, cols]` pairs.
    pub sizes: Vec<[usize; 2]>,
    pub methods: Vec<BasisMethod>,
    pub policies: Vec<String>,
    pub repetitions: usize,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            sizes: vec![[2000, 32], [4000, 64]],
            methods: vec![
                BasisMethod::MgsLeft,
                BasisMethod::MgsRight,
                BasisMethod::Cgs,
                BasisMethod::HessLeft,
                BasisMethod::HessRight,
            ],
            policies: vec!["double".into(), "single".into(), "mixed-half".into()],
            repetitions: BENCH_REPETITIONS,
        }
    }
}

/// A complete experiment description, usually read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub run: RunParams,
    #[serde(default)]
    pub matrices: Vec<MatrixSpec>,
    #[serde(default)]
    pub cells: Vec<CellSpec>,
    #[serde(default)]
    pub cond: CondParams,
    #[serde(default)]
    pub bench: BenchParams,
}

impl ExperimentSpec {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| OfrrError::Spec(format!("{origin}: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| OfrrError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut spec = Self::parse(&text, &path.display().to_string())?;
        // relative matrix paths are taken from the spec's directory
        if let Some(dir) = path.parent() {
            for m in &mut spec.matrices {
                if let MatrixSource::File { path: p, .. } = &mut m.source {
                    if p.is_relative() && !p.exists() {
                        *p = dir.join(&*p);
                    }
                }
            }
        }
        Ok(spec)
    }

    /// Applies `OFRR_SEED` when set.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| OfrrError::Spec(format!("{SEED_ENV}=`{v}` is not an integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.cells {
            c.policies()?;
        }
        match self.experiment {
            ExperimentKind::CondStudy => {
                for p in &self.cond.policies {
                    p.parse::<PrecisionPolicy>()?;
                }
            }
            ExperimentKind::Bench => {
                for p in &self.bench.policies {
                    p.parse::<PrecisionPolicy>()?;
                }
                if self.bench.repetitions == 0 {
                    return Err(OfrrError::Spec("bench.repetitions must be positive".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Overflow,
    Breakdown,
    Error,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Overflow => "overflow",
            Status::Breakdown => "breakdown",
            Status::Error => "error",
        }
    }

    fn of(e: &OfrrError) -> Status {
        match e {
            OfrrError::NonFinite { .. } => Status::Overflow,
            OfrrError::EmptyBasis | OfrrError::ZeroStartVector => Status::Breakdown,
            _ => Status::Error,
        }
    }
}

impl FromStr for Status {
    type Err = OfrrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(Status::Ok),
            "overflow" => Ok(Status::Overflow),
            "breakdown" => Ok(Status::Breakdown),
            "error" => Ok(Status::Error),
            other => Err(OfrrError::InvalidArgument(format!(
                "unknown status `{other}`"
            ))),
        }
    }
}

/// One output row; `None` fields are written empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub matrix: String,
    pub policy: String,
    pub basis_method: String,
    pub projection: String,
    pub index: Option<usize>,
    pub value: Option<f64>,
    pub reference: Option<f64>,
    pub rel_error: Option<f64>,
    pub residual: Option<f64>,
    pub cond2: Option<f64>,
    pub wall_ms: Option<f64>,
    pub status: Status,
}

pub const COLUMNS: [&str; 13] = [
    "experiment",
    "matrix",
    "policy",
    "basis_method",
    "projection",
    "index",
    "value",
    "reference",
    "rel_error",
    "residual",
    "cond2",
    "wall_ms",
    "status",
];

impl ResultRow {
    fn blank(
        experiment: ExperimentKind,
        matrix: &str,
        policy: &str,
        basis: &str,
        proj: &str,
    ) -> Self {
        ResultRow {
            experiment: experiment.name().into(),
            matrix: matrix.into(),
            policy: policy.into(),
            basis_method: basis.into(),
            projection: proj.into(),
            index: None,
            value: None,
            reference: None,
            rel_error: None,
            residual: None,
            cond2: None,
            wall_ms: None,
            status: Status::Ok,
        }
    }

    fn with_status(mut self, status: Status) -> Self {
        self.status = status;
        self
    }

    /// The row as 13 text fields, floats with 17 significant digits.
    pub fn fields(&self) -> [String; 13] {
        [
            self.experiment.clone(),
            self.matrix.clone(),
            self.policy.clone(),
            self.basis_method.clone(),
            self.projection.clone(),
            self.index.map(|i| i.to_string()).unwrap_or_default(),
            fmt_opt(self.value),
            fmt_opt(self.reference),
            fmt_opt(self.rel_error),
            fmt_opt(self.residual),
            fmt_opt(self.cond2),
            fmt_opt(self.wall_ms),
            self.status.name().into(),
        ]
    }

    pub fn from_fields(f: &[&str]) -> Result<Self> {
        if f.len() != COLUMNS.len() {
            return Err(OfrrError::InvalidArgument(format!(
                "expected {} fields, got {}",
                COLUMNS.len(),
                f.len()
            )));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| OfrrError::InvalidArgument(format!("bad number `{s}`")))
            }
        };
        Ok(ResultRow {
            experiment: f[0].into(),
            matrix: f[1].into(),
            policy: f[2].into(),
            basis_method: f[3].into(),
            projection: f[4].into(),
            index: if f[5].is_empty() {
                None
            } else {
                Some(
                    f[5].parse()
                        .map_err(|_| OfrrError::InvalidArgument(format!("bad index `{}`", f[5])))?,
                )
            },
            value: num(f[6])?,
            reference: num(f[7])?,
            rel_error: num(f[8])?,
            residual: num(f[9])?,
            cond2: num(f[10])?,
            wall_ms: num(f[11])?,
            status: f[12].parse()?,
        })
    }
}

/// 17 significant digits; non-finite values as `inf`, `-inf`, `NaN`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| OfrrError::InvalidArgument(format!("csv: {e}"));
        w.write_record(COLUMNS).map_err(io)?;
        for r in &self.rows {
            w.write_record(r.fields()).map_err(io)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| OfrrError::InvalidArgument(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| OfrrError::InvalidArgument(format!("csv: {e}")))?;
            let f: Vec<&str> = rec.iter().collect();
            rows.push(ResultRow::from_fields(&f)?);
        }
        Ok(ResultTable { rows })
    }

    /// Array of records keyed by column name. Numbers keep 17 significant
    /// digits; non-finite ones become strings.
    pub fn to_json(&self) -> Result<String> {
        use serde_json::value::RawValue;
        let mut out = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            let mut rec: BTreeMap<&str, Box<RawValue>> = BTreeMap::new();
            let fields = r.fields();
            for (i, (name, text)) in COLUMNS.iter().zip(fields).enumerate() {
                let numeric = (5..=11).contains(&i);
                let raw = if text.is_empty() {
                    "null".to_string()
                } else if numeric && text.parse::<f64>().is_ok_and(f64::is_finite) {
                    text
                } else {
                    serde_json::to_string(&text).expect("strings serialize")
                };
                rec.insert(name, RawValue::from_string(raw).expect("valid json token"));
            }
            out.push(rec);
        }
        serde_json::to_string_pretty(&out)
            .map_err(|e| OfrrError::InvalidArgument(format!("json: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = OfrrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(OfrrError::InvalidArgument(format!(
                "unknown format `{other}`"
            ))),
        }
    }
}

pub fn write_results(table: &ResultTable, format: OutputFormat, path: &Path) -> Result<()> {
    let text = match format {
        OutputFormat::Csv => table.to_csv()?,
        OutputFormat::Json => table.to_json()?,
    };
    let io = |source| OfrrError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)
}

/// A matrix resolved from its source, with the `f64` reference spectrum.
struct Prepared {
    name: String,
    op: Box<dyn LinearOperator>,
    reference: Vec<f64>,
    run: RunParams,
}

fn kernel_points(n: usize, side: Option<f64>, seed: u64) -> Result<crate::matrix::PointSet> {
    sample_uniform_square(n, side.unwrap_or((n as f64).sqrt()), seed)
}

fn prepare(spec: &ExperimentSpec, m: &MatrixSpec) -> Result<Prepared> {
    let svd = spec.experiment == ExperimentKind::KernelSvd;
    let op: Box<dyn LinearOperator> = match &m.source {
        MatrixSource::Kernel {
            n,
            side,
            f,
            l,
            s,
            cols,
            points_seed,
        } => {
            let seed = points_seed.unwrap_or(spec.seed);
            let points = kernel_points(*n, *side, seed)?;
            let cross_points = match cols {
                Some(c) => Some(points.subsample(*c, seed.wrapping_add(1))?),
                None => None,
            };
            let cfg = KernelConfig {
                scale: *f,
                length_scale: *l,
                variance: *s,
                points,
                cross_points,
            };
            Box::new(gaussian_kernel(&cfg, FpFormat::F64)?)
        }
        MatrixSource::File { path, rescale } => {
            let a = read_matrix_market(path)?;
            Box::new(if *rescale { spectral_rescale(&a) } else { a })
        }
    };
    let dense = op.to_dense();
    let reference = if svd {
        reference_singular_values(&dense)?
    } else {
        reference_eigvals(&dense)?
    };
    Ok(Prepared {
        name: m.name.clone(),
        op,
        reference,
        run: m.run.over(&spec.run),
    })
}

fn iter_config(run: &RunParams, cell: &CellSpec, seed: u64) -> Result<IterConfig> {
    let (policy, basis_policy) = cell.policies()?;
    let d = IterConfig::default();
    Ok(IterConfig {
        k: run.k.unwrap_or(d.k),
        m: run.m.unwrap_or(d.m),
        iter: run.iter.unwrap_or(d.iter),
        restarts: run.restarts.unwrap_or(0),
        basis_method: cell.basis,
        projection: cell.projection,
        policy,
        basis_policy,
        seed,
        top: run.top,
    })
}

fn relative_error(value: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        value.abs()
    } else {
        ((value - reference) / reference).abs()
    }
}

fn spectrum_cell(spec: &ExperimentSpec, mat: &Prepared, cell: &CellSpec) -> Vec<ResultRow> {
    let base = ResultRow::blank(
        spec.experiment,
        &mat.name,
        &cell.policy_label(),
        cell.basis.name(),
        cell.projection.name(),
    );
    let start = Instant::now();
    let result: Result<RitzSet> =
        iter_config(&mat.run, cell, spec.seed).and_then(|cfg| match spec.experiment {
            ExperimentKind::KernelSvd => subspace_iter_svd(mat.op.as_ref(), &cfg),
            _ if cell.basis.is_krylov() => krylov_eig(mat.op.as_ref(), &cfg),
            _ => subspace_iter_eig(mat.op.as_ref(), &cfg),
        });
    let wall = start.elapsed().as_secs_f64() * 1e3;
    match result {
        Err(e) => vec![ResultRow {
            wall_ms: Some(wall),
            status: Status::of(&e),
            ..base
        }],
        Ok(rs) => {
            let want = mat.run.top.unwrap_or(rs.len()).max(rs.len());
            (0..want)
                .map(|i| {
                    let reference = mat.reference.get(i).copied();
                    match rs.values.get(i) {
                        Some(&v) => ResultRow {
                            index: Some(i + 1),
                            value: Some(v),
                            reference,
                            rel_error: reference.map(|r| relative_error(v, r)),
                            residual: rs.residuals.get(i).copied(),
                            wall_ms: Some(wall),
                            ..base.clone()
                        },
                        // requested but not produced: the basis lost columns
                        None => ResultRow {
                            index: Some(i + 1),
                            reference,
                            wall_ms: Some(wall),
                            status: Status::Breakdown,
                            ..base.clone()
                        },
                    }
                })
                .collect()
        }
    }
}

fn cond_cells(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    let c = &spec.cond;
    let points = kernel_points(c.n, None, spec.seed)?;
    let mut jobs = Vec::new();
    for &l in &c.length_scales {
        for p in &c.policies {
            let policy: PrecisionPolicy = p.parse()?;
            if c.raw_x {
                jobs.push((l, p.clone(), policy, None));
            }
            for &m in &c.methods {
                jobs.push((l, p.clone(), policy, Some(m)));
            }
        }
    }
    let matrices: Vec<(f64, DenseMatrix)> = c
        .length_scales
        .par_iter()
        .map(|&l| {
            let cfg = KernelConfig {
                scale: c.f,
                length_scale: l,
                variance: c.s,
                points: points.clone(),
                cross_points: None,
            };
            gaussian_kernel(&cfg, FpFormat::F64).map(|a| (l, a))
        })
        .collect::<Result<_>>()?;
    Ok(jobs
        .par_iter()
        .map(|(l, label, policy, method)| {
            let a = &matrices
                .iter()
                .find(|(x, _)| x == l)
                .expect("matrix built")
                .1;
            let base = ResultRow::blank(
                spec.experiment,
                &format!("kernel-l{l}"),
                label,
                method.map_or("raw", BasisMethod::name),
                "",
            );
            let start = Instant::now();
            let out = cond_one(a, c, policy, *method, spec.seed);
            let wall = start.elapsed().as_secs_f64() * 1e3;
            match out {
                Ok(k) => ResultRow {
                    cond2: Some(k),
                    wall_ms: Some(wall),
                    status: if k.is_finite() {
                        Status::Ok
                    } else {
                        Status::Overflow
                    },
                    ..base
                },
                Err(e) => ResultRow {
                    wall_ms: Some(wall),
                    status: Status::of(&e),
                    ..base
                },
            }
        })
        .collect())
}

fn cond_one(
    a: &DenseMatrix,
    c: &CondParams,
    policy: &PrecisionPolicy,
    method: Option<BasisMethod>,
    seed: u64,
) -> Result<f64> {
    let stored = a.stored_as(policy.storage);
    let mut x = random_start(a.rows(), c.k, seed, policy.storage);
    let mut q = x.clone();
    for _ in 0..c.m {
        let xi = power_block(stored.as_ref(), &x, c.iter, policy)?;
        q = match method {
            Some(m) => m.build(&xi, policy)?.q,
            None => xi,
        };
        x = q.rounded(policy.storage);
    }
    if !q.is_finite() {
        return Err(OfrrError::non_finite("basis construction"));
    }
    cond2(&q.to_f64())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn bench_cells(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    let b = &spec.bench;
    let mut rows = Vec::new();
    // timed sequentially so cells do not compete for cores
    for &[n, k] in &b.sizes {
        let x = DenseMatrix::random_uniform(n, k, FpFormat::F64, &mut seeded_rng(spec.seed));
        for p in &b.policies {
            let policy: PrecisionPolicy = p.parse()?;
            let xs = x.rounded(policy.storage);
            for &m in &b.methods {
                let mut base =
                    ResultRow::blank(spec.experiment, &format!("{n}x{k}"), p, m.name(), "");
                let mut times = Vec::with_capacity(b.repetitions);
                let mut width = None;
                for _ in 0..b.repetitions {
                    let t = Instant::now();
                    let r = m.build(&xs, &policy);
                    times.push(t.elapsed().as_secs_f64() * 1e3);
                    match r {
                        Ok(f) => width = Some(f.width() as f64),
                        Err(e) => {
                            base.status = Status::of(&e);
                            break;
                        }
                    }
                }
                base.value = width;
                base.wall_ms = Some(median(times));
                rows.push(base);
            }
        }
    }
    Ok(rows)
}

/// Runs every cell of the spec. Cell failures become rows with a non-`ok`
/// status; only spec-level problems (unreadable matrices, bad presets) are
/// errors.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let rows = match spec.experiment {
        ExperimentKind::CondStudy => cond_cells(spec)?,
        ExperimentKind::Bench => bench_cells(spec)?,
        _ => {
            if spec.cells.is_empty() {
                return Ok(ResultTable::default());
            }
            let mats: Vec<Result<Prepared>> =
                spec.matrices.par_iter().map(|m| prepare(spec, m)).collect();
            let jobs: Vec<(usize, &CellSpec)> = (0..mats.len())
                .flat_map(|i| spec.cells.iter().map(move |c| (i, c)))
                .collect();
            jobs.par_iter()
                .map(|&(i, c)| match &mats[i] {
                    Ok(m) => spectrum_cell(spec, m, c),
                    // an unreadable matrix fails each of its cells
                    Err(e) => vec![ResultRow::blank(
                        spec.experiment,
                        &spec.matrices[i].name,
                        &c.policy_label(),
                        c.basis.name(),
                        c.projection.name(),
                    )
                    .with_status(Status::of(e))],
                })
                .collect::<Vec<_>>()
                .into_iter()
                .flatten()
                .collect()
        }
    };
    Ok(ResultTable { rows })
}

/// Runs on a pool of `threads` workers (all cores when `None`).
pub fn run_experiment_with_threads(
    spec: &ExperimentSpec,
    threads: Option<usize>,
) -> Result<ResultTable> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| OfrrError::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment(spec))
}

/// Metric values of one cell in index order; `None` where the pair was
/// requested but not produced (or the metric is absent).
pub fn cell_metric(
    table: &ResultTable,
    matrix: &str,
    policy: &str,
    basis: &str,
    projection: &str,
    metric: fn(&ResultRow) -> Option<f64>,
) -> Vec<Option<f64>> {
    table
        .rows
        .iter()
        .filter(|r| {
            r.matrix == matrix
                && r.policy == policy
                && r.basis_method == basis
                && r.projection == projection
        })
        .map(|r| {
            if r.status == Status::Ok {
                metric(r)
            } else {
                None
            }
        })
        .collect()
}

/// Median with missing entries counted as `+inf`.
pub fn median_missing_inf(v: &[Option<f64>]) -> Option<f64> {
    (!v.is_empty()).then(|| median(v.iter().map(|x| x.unwrap_or(f64::INFINITY)).collect()))
}

/// Compares two cells by median (missing = `+inf`). When both medians are
/// infinite, falls back to the medians over the indices both produced.
pub fn compare_medians(a: &[Option<f64>], b: &[Option<f64>]) -> Option<std::cmp::Ordering> {
    let (ma, mb) = (median_missing_inf(a)?, median_missing_inf(b)?);
    if ma.is_finite() || mb.is_finite() {
        return ma.partial_cmp(&mb);
    }
    let (ca, cb): (Vec<f64>, Vec<f64>) = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .unzip();
    if ca.is_empty() {
        return Some(std::cmp::Ordering::Equal);
    }
    median(ca).partial_cmp(&median(cb))
}
