//! Experiment configuration: a TOML file of `key = value` pairs grouped in
//! sections, resolved against per-experiment defaults into a [`Plan`].

use std::path::{Path, PathBuf};

use pounet::bench::CrossSampling;
use pounet::LsgdConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SmoothCross,
    TriWave,
    QuadWave,
    Theorem1,
    Custom,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SmoothCross => "smooth_cross",
            ExperimentKind::TriWave => "tri_wave",
            ExperimentKind::QuadWave => "quad_wave",
            ExperimentKind::Theorem1 => "theorem1",
            ExperimentKind::Custom => "custom",
        }
    }

    fn is_wave(self) -> bool {
        matches!(self, ExperimentKind::TriWave | ExperimentKind::QuadWave)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Rbf,
    Resnet,
}

impl ArchKind {
    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Rbf => "rbf",
            ArchKind::Resnet => "resnet",
        }
    }
}

/// Budget profile: `paper` keeps the configured epochs, `ci` scales them down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Paper,
    Ci,
}

/// Raw configuration as written in the file. Missing values fall back to
/// the defaults of the experiment kind when resolved.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub n_runs: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub basis: BasisSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub optim: OptimSection,
    pub baseline: Option<BaselineSection>,
    #[serde(default)]
    pub theorem1: Theorem1Section,
    #[serde(default)]
    pub ci: CiSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub architecture: Option<ArchKind>,
    pub n_part: Option<Vec<usize>>,
    pub width: Option<usize>,
    pub depth: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    pub m_max: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub n_per_axis: Option<usize>,
    pub sampling: Option<CrossSampling>,
    pub p: Option<Vec<u32>>,
    pub n_data: Option<usize>,
    pub path: Option<PathBuf>,
    pub eval_points: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub n_epoch: Option<usize>,
    pub lambda: Option<f64>,
    pub rho: Option<f64>,
    pub n_stag: Option<usize>,
    pub lr: Option<f64>,
    pub pre: Option<PhaseSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection {
    pub n_epoch: Option<usize>,
    pub lambda: Option<f64>,
    pub rho: Option<f64>,
    pub n_stag: Option<usize>,
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub width: Option<Vec<usize>>,
    pub depth: Option<Vec<usize>>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theorem1Section {
    pub m: Option<Vec<usize>>,
    pub n_part: Option<Vec<usize>>,
    pub n_points: Option<usize>,
    pub freq: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CiSection {
    pub epoch_scale: Option<f64>,
    pub n_runs: Option<usize>,
}

/// Fully resolved experiment: every default filled in and the profile applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub kind: ExperimentKind,
    pub profile: Profile,
    pub seed: u64,
    pub n_runs: usize,
    pub architecture: ArchKind,
    /// Partition counts; `None` means `2^p` for each wave frequency.
    pub n_part: Option<Vec<usize>>,
    /// ResNet width; `None` means `4·2^p` for each wave frequency.
    pub width: Option<usize>,
    pub depth: usize,
    pub m_max: Vec<usize>,
    pub data: DataPlan,
    pub optim: LsgdConfig,
    pub pre: Option<LsgdConfig>,
    pub baseline: Option<BaselinePlan>,
    pub theorem1: Theorem1Plan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPlan {
    pub n_per_axis: usize,
    pub sampling: CrossSampling,
    pub p: Vec<u32>,
    pub n_data: usize,
    pub path: Option<PathBuf>,
    pub eval_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinePlan {
    /// Widths; `None` means `4·2^p` for each wave frequency.
    pub width: Option<Vec<usize>>,
    pub depth: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Plan {
    pub m: Vec<usize>,
    pub n_part: Vec<usize>,
    pub n_points: usize,
    pub freq: f64,
}

const DEFAULT_LR: f64 = 1e-3;
const DEFAULT_CI_SCALE: f64 = 0.1;

/// A config file together with its source text, kept for error locations.
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    source: String,
    base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&source, base_dir).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parses TOML text; relative data paths resolve against `base_dir`.
    pub fn parse(source: &str, base_dir: PathBuf) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(source).map_err(|e| {
            let line = e.span().map(|s| line_of(source, s.start));
            let msg = e.message().trim_end().to_string();
            match line {
                Some(l) => CliError::Config(format!("line {l}: {msg}")),
                None => CliError::Config(msg),
            }
        })?;
        Ok(Self { config, source: source.to_string(), base_dir })
    }

    /// Config with no file: all defaults for `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        Self {
            config: ExperimentConfig { kind: Some(kind), ..Default::default() },
            source: String::new(),
            base_dir: PathBuf::new(),
        }
    }

    /// Error for the value at dotted `key`, prefixed with its line when the
    /// key appears in the file.
    fn err(&self, key: &str, msg: impl std::fmt::Display) -> CliError {
        match locate(&self.source, key) {
            Some(line) => CliError::Config(format!("line {line}: {key}: {msg}")),
            None => CliError::Config(format!("{key}: {msg}")),
        }
    }

    pub fn out(&self) -> Option<&Path> {
        self.config.out.as_deref()
    }

    /// Fills defaults, applies `profile` and validates every value.
    pub fn resolve(&self, profile: Profile, seed_override: Option<u64>) -> Result<Plan> {
        let c = &self.config;
        let kind = c.kind.ok_or_else(|| self.err("kind", "missing experiment kind"))?;
        let wave = kind.is_wave();

        let mut n_runs = c.n_runs.unwrap_or(match kind {
            ExperimentKind::SmoothCross => 10,
            ExperimentKind::TriWave | ExperimentKind::QuadWave => 5,
            _ => 1,
        });
        positive(self, "n_runs", n_runs)?;

        let architecture = c.partition.architecture.unwrap_or(if wave { ArchKind::Resnet } else { ArchKind::Rbf });
        let n_part = match (&c.partition.n_part, kind) {
            (Some(v), _) => Some(v.clone()),
            (None, ExperimentKind::SmoothCross) => Some(vec![1, 2, 4, 8, 16]),
            (None, _) if wave => None,
            (None, _) => Some(vec![4]),
        };
        if let Some(v) = &n_part {
            positive_list(self, "partition.n_part", v)?;
        }
        let width = c.partition.width;
        if let Some(w) = width {
            positive(self, "partition.width", w)?;
        }
        if architecture == ArchKind::Resnet && width.is_none() && !wave && kind != ExperimentKind::Theorem1 {
            return Err(self.err("partition.width", "required for the resnet architecture"));
        }
        let depth = c.partition.depth.unwrap_or(8);
        positive(self, "partition.depth", depth)?;

        let m_max = c.basis.m_max.clone().unwrap_or_else(|| match kind {
            ExperimentKind::SmoothCross => vec![0, 1, 2, 3, 4],
            ExperimentKind::QuadWave => vec![2],
            _ => vec![1],
        });
        nonempty(self, "basis.m_max", &m_max)?;

        let d = &c.data;
        let data = DataPlan {
            n_per_axis: d.n_per_axis.unwrap_or(501),
            sampling: d.sampling.unwrap_or_default(),
            p: d.p.clone().unwrap_or_else(|| vec![1, 2, 3, 4, 5]),
            n_data: d.n_data.unwrap_or(2000),
            path: d.path.as_ref().map(|p| self.base_dir.join(p)),
            eval_points: d.eval_points.unwrap_or(if wave { 10_000 } else { 2001 }),
        };
        if data.n_per_axis < 2 {
            return Err(self.err("data.n_per_axis", "must be at least 2"));
        }
        positive(self, "data.n_data", data.n_data)?;
        nonempty(self, "data.p", &data.p)?;
        if data.p.iter().any(|&p| !(1..=20).contains(&p)) {
            return Err(self.err("data.p", "frequencies must lie in 1..=20"));
        }
        if data.eval_points < 2 {
            return Err(self.err("data.eval_points", "must be at least 2"));
        }
        if kind == ExperimentKind::Custom && data.path.is_none() {
            return Err(self.err("data.path", "custom experiments need a dataset CSV"));
        }

        let scale = match profile {
            Profile::Paper => 1.0,
            Profile::Ci => {
                let s = c.ci.epoch_scale.unwrap_or(DEFAULT_CI_SCALE);
                if !(s > 0.0 && s <= 1.0) {
                    return Err(self.err("ci.epoch_scale", "must lie in (0, 1]"));
                }
                if let Some(n) = c.ci.n_runs {
                    positive(self, "ci.n_runs", n)?;
                    n_runs = n;
                }
                s
            }
        };
        let scaled = |n: usize| if n == 0 { 0 } else { ((n as f64 * scale).ceil() as usize).max(1) };

        let o = &c.optim;
        let n_epoch = o.n_epoch.unwrap_or(if wave { 2000 } else { 100 });
        let optim = LsgdConfig {
            n_epoch: scaled(n_epoch),
            lambda: o.lambda.unwrap_or(0.0),
            rho: o.rho.unwrap_or(0.0),
            n_stag: scaled(o.n_stag.unwrap_or(n_epoch.max(1))),
            lr: o.lr.unwrap_or(DEFAULT_LR),
        };
        optim.validate().map_err(|e| self.err("optim", e))?;
        let pre = match &o.pre {
            None => None,
            Some(p) => {
                let n = p.n_epoch.ok_or_else(|| self.err("optim.pre.n_epoch", "missing phase-1 epoch budget"))?;
                let cfg = LsgdConfig {
                    n_epoch: scaled(n),
                    lambda: p.lambda.unwrap_or(0.1),
                    rho: p.rho.unwrap_or(0.9),
                    n_stag: scaled(p.n_stag.unwrap_or(1000)),
                    lr: p.lr.unwrap_or(optim.lr),
                };
                cfg.validate().map_err(|e| self.err("optim.pre", e))?;
                Some(cfg)
            }
        };

        let baseline = match &c.baseline {
            None => None,
            Some(b) => {
                if b.width.is_none() && !wave {
                    return Err(self.err("baseline.width", "required outside wave experiments"));
                }
                if let Some(w) = &b.width {
                    positive_list(self, "baseline.width", w)?;
                }
                let depth = b.depth.clone().unwrap_or_else(|| vec![pounet::bench::BASELINE_DEPTH]);
                positive_list(self, "baseline.depth", &depth)?;
                let lr = b.lr.unwrap_or(DEFAULT_LR);
                if !(lr.is_finite() && lr >= 0.0) {
                    return Err(self.err("baseline.lr", "must be finite and nonnegative"));
                }
                let epochs = b.epochs.unwrap_or(if wave { 2000 } else { 1000 });
                Some(BaselinePlan { width: b.width.clone(), depth, epochs: scaled(epochs), lr })
            }
        };

        let t = &c.theorem1;
        let theorem1 = Theorem1Plan {
            m: t.m.clone().unwrap_or_else(|| vec![1, 2]),
            n_part: t.n_part.clone().unwrap_or_else(|| vec![4, 8, 16, 32]),
            n_points: t.n_points.unwrap_or(4096),
            freq: t.freq.unwrap_or(1.0),
        };
        nonempty(self, "theorem1.m", &theorem1.m)?;
        positive_list(self, "theorem1.n_part", &theorem1.n_part)?;
        if theorem1.n_part.len() < 2 {
            return Err(self.err("theorem1.n_part", "need at least two partition counts to fit a slope"));
        }
        let needed =
            theorem1.n_part.iter().max().copied().unwrap_or(1) * (theorem1.m.iter().max().copied().unwrap_or(0) + 1);
        if theorem1.n_points < needed {
            return Err(self.err("theorem1.n_points", format!("must be at least {needed}")));
        }
        if !(theorem1.freq.is_finite() && theorem1.freq > 0.0) {
            return Err(self.err("theorem1.freq", "must be positive"));
        }

        Ok(Plan {
            kind,
            profile,
            seed: seed_override.or(c.seed).unwrap_or(0),
            n_runs,
            architecture,
            n_part,
            width,
            depth,
            m_max,
            data,
            optim,
            pre,
            baseline,
            theorem1,
        })
    }
}

fn positive(cfg: &LoadedConfig, key: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(cfg.err(key, "must be at least 1"));
    }
    Ok(())
}

fn nonempty<T>(cfg: &LoadedConfig, key: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(cfg.err(key, "must not be empty"));
    }
    Ok(())
}

fn positive_list(cfg: &LoadedConfig, key: &str, v: &[usize]) -> Result<()> {
    nonempty(cfg, key, v)?;
    if v.contains(&0) {
        return Err(cfg.err(key, "entries must be at least 1"));
    }
    Ok(())
}

/// 1-based line of byte offset `at`.
fn line_of(source: &str, at: usize) -> usize {
    source[..at.min(source.len())].matches('\n').count() + 1
}

/// Line of the dotted key in the TOML source, or of its nearest enclosing
/// table when the key itself is absent.
fn locate(source: &str, key: &str) -> Option<usize> {
    use toml::de::{DeTable, DeValue};
    let root = DeTable::parse(source).ok()?;
    let mut table = root.get_ref();
    let mut found = None;
    for part in key.split('.') {
        let (k, v) = table.get_key_value(part)?;
        found = Some(line_of(source, k.span().start));
        match v.get_ref() {
            DeValue::Table(t) => table = t,
            _ => break,
        }
    }
    found
}
