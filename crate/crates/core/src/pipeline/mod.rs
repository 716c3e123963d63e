//! End-to-end decomposition: compress, decompose replicas, align, recover.

mod evaluate;
mod metrics;
mod source;
mod synthetic;
pub mod xts;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use evaluate::{evaluate, Evaluation, Truth, DEFAULT_CORNER};
pub use metrics::{config_hash, RunMetrics, StageRecord, SCHEMA_VERSION};
pub use source::TensorSource;
pub use synthetic::{generate, materialize, FactorLaw, SyntheticSpec, DEFAULT_MEMORY_BUDGET};
pub use xts::{XtsData, XtsKind, XtsTensorFile};

use crate::als::{cp_als, cp_als_from, AlsConfig, AlsResult};
use crate::compression::{
    comp_from_factors, compute_replica_count, make_ensemble, Accumulation, BlockCompressor, BlockGrid, BlockRecord,
    CompressionEnsemble, EnsembleKind, InnerKind,
};
use crate::error::{Error, Result};
use crate::mixed::ResidualStorage;
use crate::recovery::{align_replicas, apply_recovery, omp_recover, recover_perm_scale_joint, solve_stacked_ls, OmpConfig};
use crate::rng::derive_seed;
use crate::tensor::{Dims, FactorTriple, Matrix, Tensor3};

pub const STAGES: [&str; 4] = ["compression", "decomposition", "alignment", "recovery"];

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "XTS_THREADS";

/// Worker count from `XTS_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PipelineMode {
    /// Dense factors recovered by stacked least squares.
    Dense,
    /// Sparse factors recovered by matching pursuit on the stacked compressors.
    Sparse,
    /// Two-stage compression: least squares down to `U·A`, then matching
    /// pursuit against the inner matrix.
    TwoStage { alpha: f64, beta: f64, gamma: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[default]
    Full,
    /// Residual-compensated binary16 block compression.
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Replicas {
    Fixed(usize),
    /// The replica-count bound plus `slack` spares.
    Auto { slack: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub reduced: Dims,
    pub replicas: Replicas,
    /// Shared leading rows of the compression matrices; default `2R`.
    pub shared: Option<usize>,
    /// Block dims for streamed compression; default up to 64 per mode.
    pub block: Option<Dims>,
    pub mode: PipelineMode,
    /// Edge of the sampled recovery block; default `max(2R, 8)`.
    pub sample: Option<usize>,
    /// Non-cubic sampled block, overriding `sample`.
    pub sample_dims: Option<Dims>,
    /// Rank and solver settings for every ALS run.
    pub als: AlsConfig,
    /// Extra ALS starts for a replica whose fit stays poor.
    pub als_restarts: usize,
    /// Required in the sparse and two-stage modes.
    pub omp: Option<OmpConfig>,
    /// Inner matrices of the two-stage mode.
    pub inner: InnerKind,
    pub precision: Precision,
    pub residual: ResidualStorage,
    /// Grid-ordered bit-reproducible accumulation.
    pub deterministic: bool,
    pub seed: u64,
    /// Worker pool size; `None` uses the global pool.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl PipelineConfig {
    pub fn new(reduced: Dims, rank: usize) -> Self {
        let mut als = AlsConfig::new(rank);
        als.tol = 1e-12;
        als.max_iters = 1000;
        PipelineConfig {
            reduced,
            replicas: Replicas::Auto { slack: 10 },
            shared: None,
            block: None,
            mode: PipelineMode::Dense,
            sample: None,
            sample_dims: None,
            als,
            als_restarts: 5,
            omp: None,
            inner: InnerKind::Sparse(None),
            precision: Precision::Full,
            residual: ResidualStorage::Full,
            deterministic: false,
            seed: 0,
            threads: None,
        }
    }

    pub fn rank(&self) -> usize {
        self.als.rank
    }

    pub fn shared_rows(&self) -> usize {
        self.shared.unwrap_or(2 * self.rank())
    }

    pub fn sample_edge(&self) -> usize {
        self.sample.unwrap_or((2 * self.rank()).max(8))
    }

    pub fn block_dims(&self, dims: Dims) -> Dims {
        self.block
            .unwrap_or((dims.0.min(64), dims.1.min(64), dims.2.min(64)))
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    /// Intermediate dims of the two-stage mode.
    fn mid_dims(&self) -> Option<Dims> {
        match self.mode {
            PipelineMode::TwoStage { alpha, beta, gamma } => {
                let r = self.reduced;
                let f = |q: f64, n: usize| (q * n as f64).round() as usize;
                Some((f(alpha, r.0), f(beta, r.1), f(gamma, r.2)))
            }
            _ => None,
        }
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        self.als.validate()?;
        let r = self.reduced;
        if r.0 == 0 || r.1 == 0 || r.2 == 0 || r.0 > dims.0 || r.1 > dims.1 || r.2 > dims.2 {
            return Err(Error::usage(format!(
                "reduced dims {r:?} must be positive and at most {dims:?}"
            )));
        }
        let s = self.shared_rows();
        let min_r = r.0.min(r.1).min(r.2);
        if s == 0 || s > min_r {
            return Err(Error::usage(format!(
                "shared rows {s} must be within 1..={min_r}"
            )));
        }
        let b = self.block_dims(dims);
        BlockGrid::new(dims, b)?;
        if let Replicas::Fixed(0) = self.replicas {
            return Err(Error::usage("at least one replica is required"));
        }
        if self.mode != PipelineMode::Dense && self.omp.is_none() {
            return Err(Error::usage("sparse recovery needs an OMP sparsity"));
        }
        if let Some(sd) = self.sample_dims {
            if sd.0 == 0 || sd.1 == 0 || sd.2 == 0 {
                return Err(Error::usage("sample dims must be positive"));
            }
        }
        if self.sample == Some(0) {
            return Err(Error::usage("sample edge must be positive"));
        }
        Ok(())
    }

    fn ensemble_kind(&self) -> EnsembleKind {
        match self.mode {
            PipelineMode::Dense | PipelineMode::Sparse => EnsembleKind::Gaussian,
            PipelineMode::TwoStage { alpha, beta, gamma } => EnsembleKind::TwoStage {
                ratios: (alpha, beta, gamma),
                inner: self.inner,
            },
        }
    }

    /// Fewest replicas the recovery can work with.
    fn required_replicas(&self, dims: Dims) -> usize {
        match self.mode {
            PipelineMode::Dense => compute_replica_count(dims, self.reduced, 0).unwrap_or(1),
            PipelineMode::TwoStage { .. } => self
                .mid_dims()
                .and_then(|m| compute_replica_count(m, self.reduced, 0).ok())
                .unwrap_or(1),
            PipelineMode::Sparse => 1,
        }
    }

    pub fn replica_count(&self, dims: Dims) -> Result<usize> {
        match self.replicas {
            Replicas::Fixed(p) => Ok(p),
            Replicas::Auto { slack } => {
                let target = self.mid_dims().unwrap_or(dims);
                compute_replica_count(target, self.reduced, slack)
            }
        }
    }

    /// Lower bound on an acceptable replica fit.
    fn fit_target(&self) -> f64 {
        match self.precision {
            Precision::Full => 1e-9,
            Precision::Mixed => 1e-4,
        }
    }
}

/// Result of [`run`]: the recovered model or the first stage error, plus
/// a metrics record for every stage either way.
pub struct PipelineRun {
    pub result: Result<FactorTriple>,
    pub metrics: RunMetrics,
}

/// Stage bookkeeping for a run.
struct Recorder {
    metrics: RunMetrics,
}

#[derive(Default)]
struct StageNotes {
    warnings: Vec<String>,
    fields: Map<String, Value>,
}

impl StageNotes {
    fn set(&mut self, key: &str, v: impl Into<Value>) {
        self.fields.insert(key.to_string(), v.into());
    }

    fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }
}

impl Recorder {
    fn stage<T>(&mut self, name: &'static str, f: impl FnOnce(&mut StageNotes) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let mut notes = StageNotes::default();
        let out = f(&mut notes);
        let err = out.as_ref().err().map(|e| e.to_string());
        self.metrics
            .push(name, start.elapsed().as_secs_f64(), err, notes.warnings, notes.fields);
        out.map_err(|e| e.in_stage(name))
    }

    fn finish(mut self, failed: Option<&str>) -> RunMetrics {
        let done: Vec<String> = self.metrics.stages.iter().map(|s| s.stage.clone()).collect();
        for s in STAGES {
            if !done.iter().any(|d| d == s) {
                let why = format!("skipped: {} stage failed", failed.unwrap_or("an earlier"));
                self.metrics.push(s, 0.0, Some(why), Vec::new(), Map::new());
            }
        }
        self.metrics
    }
}

/// Runs the pipeline on `source`.
pub fn run(source: &dyn TensorSource, cfg: &PipelineConfig) -> PipelineRun {
    let go = || {
        let mut rec = Recorder {
            metrics: RunMetrics::new(cfg.seed, cfg.hash()),
        };
        let result = run_stages(source, cfg, &mut rec);
        let failed = match &result {
            Err(Error::Stage { stage, .. }) => Some(*stage),
            _ => None,
        };
        PipelineRun {
            result,
            metrics: rec.finish(failed),
        }
    };
    match cfg.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(go),
            Err(e) => {
                let mut m = RunMetrics::new(cfg.seed, cfg.hash());
                for s in STAGES {
                    m.push(s, 0.0, Some(format!("skipped: {e}")), Vec::new(), Map::new());
                }
                PipelineRun {
                    result: Err(Error::usage(format!("cannot build worker pool: {e}"))),
                    metrics: m,
                }
            }
        },
        None => go(),
    }
}

/// Runs the pipeline and returns the recovered factors with their metrics.
pub fn decompose(source: &dyn TensorSource, cfg: &PipelineConfig) -> Result<(FactorTriple, RunMetrics)> {
    let PipelineRun { result, metrics } = run(source, cfg);
    result.map(|f| (f, metrics))
}

const TAG_ENSEMBLE: u64 = 0x454e_5345;
const TAG_ALS: u64 = 0x414c_5321;
const TAG_SAMPLE: u64 = 0x5341_4d50;

fn run_stages(source: &dyn TensorSource, cfg: &PipelineConfig, rec: &mut Recorder) -> Result<FactorTriple> {
    let dims = source.dims();
    let rank = cfg.rank();
    let shared = cfg.shared_rows();

    let (ensemble, replicas) = rec.stage("compression", |n| {
        cfg.validate(dims)?;
        let p = cfg.replica_count(dims)?;
        let ens = make_ensemble(
            dims,
            cfg.reduced,
            p,
            shared,
            cfg.ensemble_kind(),
            derive_seed(cfg.seed, TAG_ENSEMBLE),
        )?;
        n.set("replicas", p);
        n.set("shared", shared);
        let ys = match source.factors() {
            Some(f) => {
                if cfg.precision == Precision::Mixed {
                    n.warn("factored source compressed in full precision; mixed precision applies to block compression");
                }
                n.set("path", "factored");
                (0..p)
                    .into_par_iter()
                    .map(|k| comp_from_factors(f, ens.u(k), ens.v(k), ens.w(k)))
                    .collect::<Result<Vec<_>>>()?
            }
            None => {
                let grid = BlockGrid::new(dims, cfg.block_dims(dims))?;
                n.set("path", "blocked");
                n.set("blocks", grid.count());
                compress_blocks(source, &grid, &ens, cfg)?
            }
        };
        Ok((ens, ys))
    })?;

    let (kept, fits) = rec.stage("decomposition", |n| {
        let results = replicas
            .par_iter()
            .enumerate()
            .map(|(p, y)| fit_replica(y, cfg, derive_seed(cfg.seed, TAG_ALS ^ p as u64)))
            .collect::<Result<Vec<_>>>()?;
        let errors: Vec<f64> = results.iter().map(|r| r.final_error()).collect();
        let best = errors.iter().cloned().fold(f64::INFINITY, f64::min);
        let threshold = (100.0 * best).max(cfg.fit_target());
        let kept: Vec<usize> = (0..errors.len()).filter(|&p| errors[p] <= threshold).collect();
        let dropped = errors.len() - kept.len();
        n.set("replica_errors", errors.clone());
        n.set("iterations", results.iter().map(|r| r.iters).collect::<Vec<_>>());
        n.set("dropped", dropped);
        if dropped > 0 {
            n.warn(format!("dropped {dropped} replicas with fit above {threshold:.3e}"));
        }
        let required = cfg.required_replicas(dims);
        if kept.len() < required {
            return Err(Error::InsufficientReplicas {
                survived: kept.len(),
                required,
            });
        }
        let fits: Vec<FactorTriple> = kept.iter().map(|&p| results[p].factors.clone()).collect();
        Ok((kept, fits))
    })?;

    let (ensemble, aligned) = rec.stage("alignment", |n| {
        let al = align_replicas(&fits, shared, cfg.required_replicas(dims))?;
        let survivors: Vec<usize> = al.kept.iter().map(|&i| kept[i]).collect();
        n.set("kept", survivors.clone());
        n.set("degenerate", al.dropped.iter().map(|&i| kept[i]).collect::<Vec<_>>());
        if !al.dropped.is_empty() {
            n.warn(format!("{} replicas had degenerate shared rows", al.dropped.len()));
        }
        Ok((ensemble.subset(&survivors), al.factors))
    })?;

    rec.stage("recovery", |n| recover(source, cfg, &ensemble, &aligned, rank, n))
}

fn compress_blocks(
    source: &dyn TensorSource,
    grid: &BlockGrid,
    ens: &CompressionEnsemble,
    cfg: &PipelineConfig,
) -> Result<Vec<Tensor3>> {
    let mode = if cfg.deterministic {
        Accumulation::Deterministic
    } else {
        Accumulation::Fast
    };
    let mut c = BlockCompressor::new(grid.clone(), ens, mode)?;
    if cfg.precision == Precision::Mixed {
        c = c.with_mixed_precision(cfg.residual)?;
    }
    for idx in grid.iter() {
        let [ri, rj, rk] = grid.ranges(idx);
        c.push(BlockRecord {
            index: idx,
            data: source.block(ri, rj, rk)?,
        })?;
    }
    c.finish()
}

/// ALS with restarts from fresh seeds until the fit reaches the target.
fn fit_replica(y: &Tensor3, cfg: &PipelineConfig, seed: u64) -> Result<AlsResult> {
    let mut best: Option<AlsResult> = None;
    for attempt in 0..=cfg.als_restarts {
        let als = AlsConfig {
            seed: derive_seed(seed, attempt as u64),
            ..cfg.als.clone()
        };
        let r = cp_als(y, &als)?;
        let good = r.final_error() <= cfg.fit_target();
        if best.as_ref().is_none_or(|b| r.final_error() < b.final_error()) {
            best = Some(r);
        }
        if good {
            break;
        }
    }
    Ok(best.expect("at least one attempt"))
}

fn stacked_modes(aligned: &[FactorTriple], m: usize) -> Vec<Matrix> {
    aligned.iter().map(|f| f.mode(m).clone()).collect()
}

/// Sorted union of the rows where any column of `m` is nonzero, padded
/// with leading rows up to `min_len`.
fn support_rows(m: &Matrix, min_len: usize) -> Vec<usize> {
    let mut rows: Vec<usize> = (0..m.rows())
        .filter(|&i| (0..m.cols()).any(|c| m.get(i, c) != 0.0))
        .collect();
    let mut next = 0;
    while rows.len() < min_len.min(m.rows()) {
        if !rows.contains(&next) {
            rows.push(next);
        }
        next += 1;
    }
    rows.sort_unstable();
    rows
}

fn recover(
    source: &dyn TensorSource,
    cfg: &PipelineConfig,
    ens: &CompressionEnsemble,
    aligned: &[FactorTriple],
    rank: usize,
    n: &mut StageNotes,
) -> Result<FactorTriple> {
    let dims = source.dims();
    let d = [dims.0, dims.1, dims.2];
    let reduced = [cfg.reduced.0, cfg.reduced.1, cfg.reduced.2];

    // estimates of AΠΣ, BΠΣ', CΠΣ''
    let mut global = Vec::with_capacity(3);
    for m in 0..3 {
        let factors = stacked_modes(aligned, m);
        let g = match cfg.mode {
            PipelineMode::Dense => solve_stacked_ls(&factors, &ens.stacked_compressors(m))?,
            PipelineMode::Sparse => {
                let omp = cfg.omp.expect("validated");
                if ens.count() * reduced[m] < 2 * omp.sparsity {
                    n.warn(format!("mode {}: fewer than 2K stacked measurements", m + 1));
                }
                let dict: Vec<Matrix> = ens.stacked_compressors(m).into_iter().cloned().collect();
                omp_recover(&Matrix::vstack(&factors)?, &Matrix::vstack(&dict)?, &omp)?
            }
            PipelineMode::TwoStage { .. } => {
                let omp = cfg.omp.expect("validated");
                let ts = ens.two_stage().expect("two-stage ensemble");
                let inner = &ts.inner[m];
                if inner.rows() < 2 * omp.sparsity {
                    n.warn(format!("mode {}: fewer than 2K inner measurements", m + 1));
                }
                let ua = solve_stacked_ls(&factors, &ens.stacked_compressors(m))?;
                omp_recover(&ua, inner, &omp)?
            }
        };
        global.push(g);
    }

    // sampled sub-tensor, decomposed directly
    let idx: Vec<Vec<usize>> = match cfg.mode {
        PipelineMode::Dense => {
            let b = cfg.sample_edge();
            let sd = cfg.sample_dims.unwrap_or((b, b, b));
            let sd = [sd.0, sd.1, sd.2];
            (0..3).map(|m| (0..sd[m].min(d[m])).collect()).collect()
        }
        _ => (0..3).map(|m| support_rows(&global[m], rank)).collect(),
    };
    let sizes: Vec<usize> = idx.iter().map(Vec::len).collect();
    n.set("sample_dims", sizes.clone());
    if sizes.iter().any(|&s| s < rank) {
        n.warn(format!("sampled block {sizes:?} is smaller than rank {rank}"));
    }
    let block = source.gather(&idx[0], &idx[1], &idx[2])?;
    let heads: Vec<Matrix> = (0..3).map(|m| global[m].select_rows(&idx[m])).collect();
    let mut fit = fit_replica(&block, cfg, derive_seed(cfg.seed, TAG_SAMPLE))?;
    if fit.final_error() > cfg.fit_target() {
        let start = FactorTriple::new(heads[0].clone(), heads[1].clone(), heads[2].clone())?;
        let warm = cp_als_from(&block, &cfg.als, &start)?;
        if warm.final_error() < fit.final_error() {
            n.set("sample_warm_start", true);
            fit = warm;
        }
    }
    n.set("sample_fit", fit.final_error());
    if fit.final_error() > 1e-6 {
        n.warn(format!(
            "sampled block fit {:.3e}; it may not have rank {rank}",
            fit.final_error()
        ));
    }
    let sf = &fit.factors;
    let ps = recover_perm_scale_joint([&heads[0], &heads[1], &heads[2]], [sf.a(), sf.b(), sf.c()])?;
    let mats = (0..3)
        .map(|m| apply_recovery(&global[m], &ps[m]))
        .collect::<Result<Vec<_>>>()?;
    let [a, b, c]: [Matrix; 3] = mats.try_into().expect("three modes");
    FactorTriple::new(a, b, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dense(seed: u64) -> FactorTriple {
        generate(&SyntheticSpec::dense((30, 28, 26), 3, seed)).unwrap()
    }

    #[test]
    fn dense_pipeline_recovers_factors() {
        let f = small_dense(1);
        let t = materialize(&f, DEFAULT_MEMORY_BUDGET).unwrap();
        let mut cfg = PipelineConfig::new((10, 10, 10), 3);
        cfg.block = Some((8, 8, 8));
        cfg.seed = 5;
        let (g, m) = decompose(&t, &cfg).unwrap();
        let e = evaluate(&Truth::Factors(&f), &g, None).unwrap();
        for err in e.factor_errors.unwrap() {
            assert!(err < 1e-6, "{err}");
        }
        assert_eq!(m.stages.len(), 4);
        assert!(m.stages.iter().all(|s| s.error.is_none()));
    }

    #[test]
    fn failure_still_reports_every_stage() {
        let f = small_dense(2);
        let mut cfg = PipelineConfig::new((10, 10, 10), 3);
        cfg.replicas = Replicas::Fixed(1);
        let run = run(&f, &cfg);
        let err = run.result.unwrap_err();
        assert!(matches!(err, Error::Stage { .. }));
        assert_eq!(run.metrics.stages.len(), 4);
        assert!(run.metrics.stages.iter().any(|s| s.error.as_deref().is_some_and(|e| e.starts_with("skipped"))));
    }

    #[test]
    fn config_validation() {
        let dims = (20, 20, 20);
        let mut cfg = PipelineConfig::new((30, 10, 10), 2);
        assert!(cfg.validate(dims).unwrap_err().is_usage());
        cfg.reduced = (10, 10, 10);
        cfg.shared = Some(11);
        assert!(cfg.validate(dims).unwrap_err().is_usage());
        cfg.shared = None;
        cfg.block = Some((21, 1, 1));
        assert!(cfg.validate(dims).unwrap_err().is_usage());
        cfg.block = None;
        cfg.mode = PipelineMode::Sparse;
        assert!(cfg.validate(dims).unwrap_err().is_usage());
        cfg.omp = Some(OmpConfig::new(2));
        cfg.validate(dims).unwrap();
    }

    #[test]
    fn support_rows_pads_to_rank() {
        let mut m = Matrix::zeros(6, 2);
        m.set(4, 0, 1.0);
        assert_eq!(support_rows(&m, 2), vec![0, 4]);
        m.set(2, 1, 1.0);
        assert_eq!(support_rows(&m, 1), vec![2, 4]);
    }
}
