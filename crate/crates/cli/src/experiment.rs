//! Expands a [`Plan`] into individual runs, executes them and writes their
//! artifacts.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pounet::bench::{
    baseline_resnet_fit, loglog_slope, make_cross_dataset, make_cross_dataset_uniform, make_wave_dataset,
    partition_diagnostics, read_dataset_csv, relative_l2, theorem1_scaling_oracle, write_dataset_csv, CrossSampling,
    PartitionDiagnostics, ResNetRegressor, WaveKind,
};
use pounet::optim::{lsgd_run, two_phase_lsgd_run, DEFAULT_COLLAPSE_TAU};
use pounet::pou::{init_rbf, init_resnet_box, PartitionNet};
use pounet::{seeded_stream, Dataset, DenseMatrix, Domain, MonomialBasis, PouModel, TrainReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ArchKind, ExperimentKind, Plan};
use crate::error::{CliError, Result};
use crate::table::emit_convergence_table;

const STREAM_DATA: u64 = 0;
const STREAM_POUNET: u64 = 1;
const STREAM_BASELINE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Pounet,
    Baseline,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Pounet => "pounet",
            ModelKind::Baseline => "baseline",
        }
    }
}

/// One point of the sweep grid; each cell is trained once per run index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub model: ModelKind,
    pub architecture: Option<ArchKind>,
    pub p: Option<u32>,
    pub n_part: Option<usize>,
    pub m_max: Option<usize>,
    pub width: Option<usize>,
    pub depth: Option<usize>,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        let mut s = self.model.name().to_string();
        if let Some(a) = self.architecture {
            s = format!("{s}_{}", a.name());
        }
        for (tag, v) in [
            ("p", self.p.map(|v| v as usize)),
            ("np", self.n_part),
            ("m", self.m_max),
            ("w", self.width),
            ("d", self.depth),
        ] {
            if let Some(v) = v {
                s.push_str(&format!("_{tag}{v}"));
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Contents of a run's `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: ExperimentKind,
    #[serde(flatten)]
    pub cell: Cell,
    pub run_index: usize,
    pub seed: u64,
    pub dataset: String,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Relative ℓ2 error on the training points.
    pub rel_l2: Option<f64>,
    pub rms: Option<f64>,
    /// Relative ℓ2 error on the dense evaluation grid, when one exists.
    pub eval_rel_l2: Option<f64>,
    pub diagnostics: Option<PartitionDiagnostics>,
    pub train: Option<TrainReport>,
}

/// Checkpoint of a baseline regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineCheckpoint {
    pub dim: usize,
    pub width: usize,
    pub depth: usize,
    pub seed: u64,
    pub params: Vec<f64>,
}

/// Everything a finished run writes to disk.
pub struct RunOutput {
    pub record: RunRecord,
    pub trace_csv: Option<String>,
    pub checkpoint_json: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepSummary {
    pub n_runs: usize,
    pub n_failed: usize,
}

impl Plan {
    fn wave_kind(&self) -> Option<WaveKind> {
        match self.kind {
            ExperimentKind::TriWave => Some(WaveKind::Triangle),
            ExperimentKind::QuadWave => Some(WaveKind::Quadratic),
            _ => None,
        }
    }

    pub fn run_seed(&self, run_index: usize) -> u64 {
        self.seed.wrapping_add(run_index as u64)
    }

    /// Sweep grid in a fixed order: POUnet cells, then baseline cells.
    pub fn cells(&self) -> Vec<Cell> {
        let wave = self.wave_kind().is_some();
        let ps: Vec<Option<u32>> = if wave { self.data.p.iter().map(|&p| Some(p)).collect() } else { vec![None] };
        let mut cells = Vec::new();
        for &p in &ps {
            let pieces = p.map(|p| 1usize << p);
            let n_parts = self.n_part.clone().unwrap_or_else(|| vec![pieces.unwrap_or(1)]);
            for &np in &n_parts {
                for &m in &self.m_max {
                    let resnet = self.architecture == ArchKind::Resnet;
                    cells.push(Cell {
                        model: ModelKind::Pounet,
                        architecture: Some(self.architecture),
                        p,
                        n_part: Some(np),
                        m_max: Some(m),
                        width: resnet.then(|| self.width.unwrap_or(4 * pieces.unwrap_or(1))),
                        depth: resnet.then_some(self.depth),
                    });
                }
            }
        }
        if let Some(b) = &self.baseline {
            for &p in &ps {
                let widths = b.width.clone().unwrap_or_else(|| vec![4 * p.map_or(1, |p| 1usize << p)]);
                for &w in &widths {
                    for &d in &b.depth {
                        cells.push(Cell {
                            model: ModelKind::Baseline,
                            architecture: None,
                            p,
                            n_part: None,
                            m_max: None,
                            width: Some(w),
                            depth: Some(d),
                        });
                    }
                }
            }
        }
        cells
    }

    fn dataset_key(&self, p: Option<u32>, seed: u64) -> String {
        match (self.kind, p) {
            (ExperimentKind::SmoothCross, _) if self.data.sampling == CrossSampling::Grid => "cross".into(),
            (ExperimentKind::SmoothCross, _) => format!("cross_seed{seed}"),
            (ExperimentKind::Custom, _) => "custom".into(),
            (kind, Some(p)) => format!("{}_p{p}_seed{seed}", kind.name()),
            (kind, None) => kind.name().into(),
        }
    }

    /// Training data for frequency `p` (waves only) and run seed `seed`.
    pub fn dataset(&self, p: Option<u32>, seed: u64) -> Result<Dataset> {
        let mut rng = seeded_stream(seed, STREAM_DATA);
        Ok(match self.kind {
            ExperimentKind::SmoothCross => match self.data.sampling {
                CrossSampling::Grid => make_cross_dataset(self.data.n_per_axis)?,
                CrossSampling::Uniform => make_cross_dataset_uniform(self.data.n_per_axis, &mut rng)?,
            },
            ExperimentKind::TriWave | ExperimentKind::QuadWave => {
                let p = p.ok_or_else(|| CliError::Run("wave dataset without a frequency".into()))?;
                make_wave_dataset(p, self.data.n_data, self.wave_kind().expect("wave kind"), &mut rng)?
            }
            ExperimentKind::Custom => {
                let path = self.data.path.as_ref().ok_or_else(|| CliError::Config("data.path: missing".into()))?;
                let file = fs::File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                read_dataset_csv(file).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            ExperimentKind::Theorem1 => {
                return Err(CliError::Config("theorem1 experiments have no training data".into()))
            }
        })
    }

    /// Dense grid on which trained models are also scored.
    fn eval_dataset(&self, p: Option<u32>) -> Result<Option<Dataset>> {
        let n = self.data.eval_points;
        Ok(match (self.kind, self.wave_kind(), p) {
            (ExperimentKind::SmoothCross, _, _) => Some(make_cross_dataset(n)?),
            (_, Some(kind), Some(p)) => {
                let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
                let ys = xs.iter().map(|&x| kind.eval(x, p)).collect();
                Some(Dataset::new(DenseMatrix::new(n, 1, xs)?, ys)?)
            }
            _ => None,
        })
    }

    fn domain(&self, data: &Dataset) -> Result<Domain> {
        Ok(match self.kind {
            ExperimentKind::SmoothCross => Domain::cube(2, -1.0, 1.0)?,
            ExperimentKind::TriWave | ExperimentKind::QuadWave => Domain::unit(1),
            _ => Domain::bounding_box(data.xs())?,
        })
    }
}

/// Trains one cell for one run index.
pub fn execute(plan: &Plan, cell: &Cell, run_index: usize, data: &Dataset, dataset: &str) -> RunOutput {
    let seed = plan.run_seed(run_index);
    let mut record = RunRecord {
        experiment: plan.kind,
        cell: cell.clone(),
        run_index,
        seed,
        dataset: dataset.to_string(),
        status: RunStatus::Ok,
        error: None,
        rel_l2: None,
        rms: None,
        eval_rel_l2: None,
        diagnostics: None,
        train: None,
    };
    let result = match cell.model {
        ModelKind::Pounet => run_pounet(plan, cell, seed, data),
        ModelKind::Baseline => run_baseline(plan, cell, seed, data),
    };
    match result {
        Ok(done) => {
            record.rel_l2 = Some(done.report.final_rel_l2);
            record.rms = Some(done.report.final_rms);
            record.eval_rel_l2 = done.eval_rel_l2;
            record.diagnostics = done.diagnostics;
            let trace_csv = Some(done.report.trace_csv());
            record.train = Some(done.report);
            RunOutput { record, trace_csv, checkpoint_json: Some(done.checkpoint_json) }
        }
        Err(e) => {
            record.status = RunStatus::Failed;
            record.error = Some(e.to_string());
            RunOutput { record, trace_csv: None, checkpoint_json: None }
        }
    }
}

struct Finished {
    report: TrainReport,
    eval_rel_l2: Option<f64>,
    diagnostics: Option<PartitionDiagnostics>,
    checkpoint_json: String,
}

fn run_pounet(plan: &Plan, cell: &Cell, seed: u64, data: &Dataset) -> Result<Finished> {
    let (n_part, m) = (cell.n_part.unwrap_or(1), cell.m_max.unwrap_or(0));
    let domain = plan.domain(data)?;
    let mut rng = seeded_stream(seed, STREAM_POUNET);
    let partition: PartitionNet = match plan.architecture {
        ArchKind::Rbf => init_rbf(n_part, &domain, &mut rng)?.into(),
        ArchKind::Resnet => {
            let (w, d) = (cell.width.unwrap_or(1), cell.depth.unwrap_or(1));
            init_resnet_box(w, d, n_part, &domain, &mut rng)?.into()
        }
    };
    let basis = MonomialBasis::for_domain(&domain, m);
    let model = PouModel::with_random_coeffs(partition, basis, &mut rng)?;
    let outcome = match &plan.pre {
        Some(pre) => two_phase_lsgd_run(&model, data, pre, &plan.optim)?,
        None => lsgd_run(&model, data, &plan.optim)?,
    };
    let best = outcome.best;
    let eval_rel_l2 = match plan.eval_dataset(cell.p)? {
        Some(ev) => Some(relative_l2(&best.predict(ev.xs())?, ev.ys())?),
        None => None,
    };
    let phi = best.partition().forward(data.xs())?.into_phi();
    let diagnostics = partition_diagnostics(&phi, data.xs(), DEFAULT_COLLAPSE_TAU)?;
    let checkpoint_json = to_json(&best.to_checkpoint(Some(seed)))?;
    Ok(Finished { report: outcome.report, eval_rel_l2, diagnostics: Some(diagnostics), checkpoint_json })
}

fn run_baseline(plan: &Plan, cell: &Cell, seed: u64, data: &Dataset) -> Result<Finished> {
    let b = plan.baseline.as_ref().ok_or_else(|| CliError::Run("no baseline configured".into()))?;
    let (w, d) = (cell.width.unwrap_or(1), cell.depth.unwrap_or(1));
    let mut rng = seeded_stream(seed, STREAM_BASELINE);
    let (net, report) = baseline_resnet_fit(data, w, d, b.epochs, b.lr, &mut rng)?;
    let eval_rel_l2 = match plan.eval_dataset(cell.p)? {
        Some(ev) => Some(relative_l2(&net.predict(ev.xs())?, ev.ys())?),
        None => None,
    };
    let checkpoint = baseline_checkpoint(&net, seed);
    Ok(Finished { report, eval_rel_l2, diagnostics: None, checkpoint_json: to_json(&checkpoint)? })
}

fn baseline_checkpoint(net: &ResNetRegressor, seed: u64) -> BaselineCheckpoint {
    let t = net.trunk();
    BaselineCheckpoint { dim: t.dim(), width: t.width(), depth: t.depth(), seed, params: net.params().into_inner() }
}

pub(crate) fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Run(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, contents).map_err(CliError::io(path))
}

fn dataset_csv(data: &Dataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_dataset_csv(data, &mut buf)?;
    Ok(buf)
}

/// All datasets the sweep uses, keyed by file stem.
fn collect_datasets(plan: &Plan, n_runs: usize) -> Result<BTreeMap<String, Dataset>> {
    let ps: Vec<Option<u32>> = match plan.kind {
        ExperimentKind::TriWave | ExperimentKind::QuadWave => plan.data.p.iter().map(|&p| Some(p)).collect(),
        _ => vec![None],
    };
    let mut out = BTreeMap::new();
    for run in 0..n_runs {
        let seed = plan.run_seed(run);
        for &p in &ps {
            let key = plan.dataset_key(p, seed);
            if let Entry::Vacant(slot) = out.entry(key) {
                slot.insert(plan.dataset(p, seed)?);
            }
        }
    }
    Ok(out)
}

/// Writes every dataset of the sweep under `out/data/`.
pub fn gen_data(plan: &Plan, out: &Path) -> Result<Vec<String>> {
    if plan.kind == ExperimentKind::Theorem1 {
        return Err(CliError::Config("theorem1 experiments have no training data".into()));
    }
    let sets = collect_datasets(plan, plan.n_runs)?;
    for (key, data) in &sets {
        write(&out.join("data").join(format!("{key}.csv")), dataset_csv(data)?)?;
    }
    Ok(sets.into_keys().collect())
}

fn write_run(dir: &Path, output: &RunOutput) -> Result<()> {
    write(&dir.join("report.json"), to_json(&output.record)?)?;
    if let Some(t) = &output.trace_csv {
        write(&dir.join("trace.csv"), t)?;
    }
    if let Some(c) = &output.checkpoint_json {
        write(&dir.join("checkpoint.json"), c)?;
    }
    Ok(())
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Run(format!("cannot start worker pool: {e}")))
}

/// Runs every cell for every run index and writes the output tree:
///
/// ```text
/// out/config.json                         resolved configuration
/// out/data/<dataset>.csv                  training sets
/// out/runs/<cell>/seed_<s>/report.json    per-run record
/// out/runs/<cell>/seed_<s>/trace.csv      per-epoch loss, lambda, rel_l2
/// out/runs/<cell>/seed_<s>/checkpoint.json
/// out/aggregate.csv                       convergence table
/// ```
pub fn sweep(plan: &Plan, out: &Path, jobs: usize) -> Result<SweepSummary> {
    if plan.kind == ExperimentKind::Theorem1 {
        run_theorem1(plan, out)?;
        return Ok(SweepSummary { n_runs: 0, n_failed: 0 });
    }
    write(&out.join("config.json"), to_json(plan)?)?;
    let sets = collect_datasets(plan, plan.n_runs)?;
    for (key, data) in &sets {
        write(&out.join("data").join(format!("{key}.csv")), dataset_csv(data)?)?;
    }

    let cells = plan.cells();
    let tasks: Vec<(usize, &Cell)> = (0..plan.n_runs).flat_map(|r| cells.iter().map(move |c| (r, c))).collect();
    let runs_dir = out.join("runs");
    let results: Vec<Result<RunStatus>> = thread_pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(run, cell)| {
                let seed = plan.run_seed(run);
                let key = plan.dataset_key(cell.p, seed);
                let output = execute(plan, cell, run, &sets[&key], &key);
                write_run(&runs_dir.join(cell.dir_name()).join(format!("seed_{seed}")), &output)?;
                Ok(output.record.status)
            })
            .collect()
    });
    let mut n_failed = 0;
    for r in results {
        if r? == RunStatus::Failed {
            n_failed += 1;
        }
    }
    write(&out.join("aggregate.csv"), emit_convergence_table(out)?)?;
    Ok(SweepSummary { n_runs: tasks.len(), n_failed })
}

/// Trains the single cell of a one-cell plan with run index 0, writing
/// `report.json`, `trace.csv`, `checkpoint.json`, `dataset.csv` and
/// `config.json` into `out`.
pub fn train(plan: &Plan, out: &Path) -> Result<RunRecord> {
    let cells = plan.cells();
    let [cell] = cells.as_slice() else {
        return Err(CliError::Config(format!(
            "train needs exactly one model configuration, this config describes {}; use sweep",
            cells.len()
        )));
    };
    if plan.kind == ExperimentKind::Theorem1 {
        return Err(CliError::Config("theorem1 has nothing to train; use the theorem1 subcommand".into()));
    }
    let seed = plan.run_seed(0);
    let data = plan.dataset(cell.p, seed)?;
    write(&out.join("config.json"), to_json(plan)?)?;
    write(&out.join("dataset.csv"), dataset_csv(&data)?)?;
    let output = execute(plan, cell, 0, &data, "dataset");
    write_run(out, &output)?;
    match output.record.status {
        RunStatus::Ok => Ok(output.record),
        RunStatus::Failed => Err(CliError::Run(output.record.error.unwrap_or_default())),
    }
}

/// One row of the frozen-partition scaling study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub m: usize,
    pub slope: f64,
    pub expected: f64,
    pub errors: Vec<(usize, f64)>,
}

/// Runs the frozen-partition scaling oracle for each degree, writing
/// `theorem1.csv` (m, n_part, rms) and `theorem1_slopes.csv`
/// (m, slope, expected_slope).
pub fn run_theorem1(plan: &Plan, out: &Path) -> Result<Vec<SlopeRow>> {
    let t = &plan.theorem1;
    let freq = t.freq;
    let target = move |x: f64| (2.0 * std::f64::consts::PI * freq * x).sin();
    let rows =
        t.m.iter()
            .map(|&m| {
                let errors = theorem1_scaling_oracle(m, &t.n_part, target, t.n_points)?;
                Ok(SlopeRow { m, slope: loglog_slope(&errors), expected: -((m + 1) as f64), errors })
            })
            .collect::<Result<Vec<_>>>()?;
    let mut points = String::from("m,n_part,rms\n");
    let mut slopes = String::from("m,slope,expected_slope\n");
    for r in &rows {
        for (np, e) in &r.errors {
            points.push_str(&format!("{},{np},{e:e}\n", r.m));
        }
        slopes.push_str(&format!("{},{},{}\n", r.m, r.slope, r.expected));
    }
    write(&out.join("config.json"), to_json(plan)?)?;
    write(&out.join("theorem1.csv"), points)?;
    write(&out.join("theorem1_slopes.csv"), slopes)?;
    Ok(rows)
}
