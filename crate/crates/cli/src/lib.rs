//! Implementation of the `ckgan` subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ckgan::checkpoint::Checkpoint;
use ckgan::config::RunConfig;
use ckgan::csv_out::{self, fmt_num, MetricsWriter, METRICS_HEADER};
use ckgan::data::DatasetKind;
use ckgan::metrics::{frechet_2d, sample_quality, MetricsReport};
use ckgan::rng::{eval_stream, stream, Stream};
use ckgan::train::{Event, Trainer};
use ckgan::{Error, Result};
use serde_json::Value;

pub const OUT_ROOT_ENV: &str = "CKGAN_OUT_ROOT";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckgn";

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Diverged { .. } => 3,
        Error::Config(_)
        | Error::Checkpoint(_)
        | Error::InvalidParameter(_)
        | Error::Io(_)
        | Error::Csv(_) => 2,
        _ => 1,
    }
}

/// Places relative output paths under `$CKGAN_OUT_ROOT` when it is set.
pub fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

fn io_context(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn config_from_checkpoint(ck: &Checkpoint) -> Result<RunConfig> {
    RunConfig::from_json(&ck.config_json).map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))
}

fn with_seed(mut config: RunConfig, seed: Option<u64>) -> RunConfig {
    if let Some(s) = seed {
        config.seed = s;
    }
    config
}

pub struct TrainArgs {
    pub config: RunConfig,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub out: PathBuf,
    pub reports: Vec<MetricsReport>,
}

/// Trains, writing `config.resolved.json`, `metrics.csv`, checkpoints and
/// `samples.csv` into `out`.
pub fn train(args: TrainArgs) -> Result<TrainOutcome> {
    let TrainArgs { config, out, resume } = args;
    let (train_config, dataset) = config.resolve()?;
    fs::create_dir_all(&out).map_err(io_context(&out))?;
    let config_json = config.to_json();
    fs::write(out.join("config.resolved.json"), &config_json).map_err(io_context(&out))?;

    let metrics_path = out.join("metrics.csv");
    let (mut trainer, mut metrics) = match resume {
        Some(path) => {
            let state = Checkpoint::load(&path)?.to_state(&train_config)?;
            let writer = if metrics_path.exists() {
                MetricsWriter::append(&metrics_path)?
            } else {
                MetricsWriter::create(&metrics_path)?
            };
            (Trainer::with_state(train_config, dataset, state)?, writer)
        }
        None => (Trainer::new(train_config, dataset)?, MetricsWriter::create(&metrics_path)?),
    };

    let mut reports = Vec::new();
    let total = trainer.config().iterations;
    trainer.run(|event| match event {
        Event::Report(r) => {
            metrics.write(r)?;
            reports.push(r.clone());
            Ok(())
        }
        Event::Checkpoint(t) => {
            let ck = Checkpoint::from_state(t.state(), &config_json);
            let it = t.state().iteration;
            if it < total {
                ck.save(&out.join(format!("checkpoint_{it:08}.ckgn")))?;
            }
            ck.save(&out.join(CHECKPOINT_FILE))
        }
    })?;

    let it = trainer.state().iteration;
    let samples = trainer.generate(trainer.config().eval_samples, &mut eval_stream(trainer.config().seed, it))?;
    csv_out::write_points(&out.join("samples.csv"), &samples)?;
    Ok(TrainOutcome { out, reports })
}

pub const EVAL_HEADER: [&str; 7] = ["source", "iter", "n", "modes", "hq", "kl", "frechet"];

pub struct EvalArgs {
    pub checkpoint: Option<PathBuf>,
    /// Overrides the config stored in the checkpoint (must describe the same
    /// architecture).
    pub config: Option<RunConfig>,
    pub dataset: Option<DatasetKind>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    /// Evaluate a fresh draw of real data instead of a generator.
    pub real: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub source: String,
    pub iteration: u64,
    pub n: usize,
    pub modes: usize,
    pub hq: f64,
    pub kl: f64,
    pub frechet: f64,
}

impl EvalRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.source.clone(),
            self.iteration.to_string(),
            self.n.to_string(),
            self.modes.to_string(),
            fmt_num(self.hq),
            fmt_num(self.kl),
            fmt_num(self.frechet),
        ]
    }
}

pub fn eval(args: EvalArgs) -> Result<EvalRow> {
    if args.n == Some(0) {
        return Err(Error::InvalidParameter("--n must be positive".into()));
    }
    if args.real {
        let mut config = with_seed(args.config.unwrap_or_default(), args.seed);
        if let Some(d) = args.dataset {
            config.dataset = d;
        }
        let dataset = config.mixture()?;
        let n = args.n.unwrap_or(config.eval_samples);
        let reference = dataset.sample(config.train_size, &mut stream(config.seed, Stream::Data));
        let samples = dataset.sample(n, &mut stream(config.seed, Stream::Sample));
        let q = sample_quality(&dataset, &samples, &reference)?;
        return Ok(EvalRow {
            source: format!("real:{}", dataset.kind()),
            iteration: 0,
            n,
            modes: q.modes,
            hq: q.hq,
            kl: q.kl,
            frechet: frechet_2d(&samples, &reference)?,
        });
    }
    let path = args
        .checkpoint
        .ok_or_else(|| Error::Config("eval needs --checkpoint or --real".into()))?;
    let ck = Checkpoint::load(&path)?;
    let mut config = match args.config {
        Some(c) => c,
        None => config_from_checkpoint(&ck)?,
    };
    config = with_seed(config, args.seed);
    if let Some(d) = args.dataset {
        config.dataset = d;
    }
    let (train_config, dataset) = config.resolve()?;
    let state = ck.to_state(&train_config)?;
    let trainer = Trainer::with_state(train_config, dataset, state)?;
    let n = args.n.unwrap_or(trainer.config().eval_samples);
    let it = trainer.state().iteration;
    let samples = trainer.generate(n, &mut eval_stream(trainer.config().seed, it))?;
    let q = sample_quality(trainer.dataset(), &samples, trainer.train_set())?;
    Ok(EvalRow {
        source: path.display().to_string(),
        iteration: it,
        n,
        modes: q.modes,
        hq: q.hq,
        kl: q.kl,
        frechet: frechet_2d(&samples, trainer.train_set()).unwrap_or(f64::NAN),
    })
}

pub fn write_eval(out: Option<&Path>, row: &EvalRow) -> Result<()> {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    writeln!(lock, "{}", EVAL_HEADER.join(","))?;
    writeln!(lock, "{}", row.record().join(","))?;
    if let Some(path) = out {
        let mut w = csv_out::writer(path)?;
        w.write_record(EVAL_HEADER)?;
        w.write_record(row.record())?;
        w.flush()?;
    }
    Ok(())
}

/// Generator samples from a checkpoint, drawn from the seed's sample stream.
pub fn sample(checkpoint: &Path, n: usize, seed: Option<u64>, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("--n must be positive".into()));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let config = with_seed(config_from_checkpoint(&ck)?, seed);
    let (train_config, dataset) = config.resolve()?;
    let state = ck.to_state(&train_config)?;
    let trainer = Trainer::with_state(train_config, dataset, state)?;
    let points = trainer.generate(n, &mut stream(config.seed, Stream::Sample))?;
    csv_out::write_points(out, &points)
}

/// Real training-set points; `n = train_size` reproduces a run's training set.
pub fn export_data(config: &RunConfig, n: usize, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("--n must be positive".into()));
    }
    let dataset = config.mixture()?;
    let points = dataset.sample(n, &mut stream(config.seed, Stream::Data));
    csv_out::write_points(out, &points)
}

/// Config keys and the values each takes in a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub axes: Vec<(String, Vec<Value>)>,
}

impl Grid {
    /// Parses a JSON object whose values are non-empty arrays. Axes are
    /// ordered by key.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("grid: {e}")))?;
        let Value::Object(map) = value else {
            return Err(Error::Config("grid must be a JSON object".into()));
        };
        let mut axes = Vec::new();
        for (key, values) in map {
            match values {
                Value::Array(v) if !v.is_empty() => axes.push((key, v)),
                _ => return Err(Error::Config(format!("grid axis `{key}` must be a non-empty array"))),
            }
        }
        axes.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Grid { axes })
    }

    /// Every combination, last axis fastest.
    pub fn cells(&self) -> Vec<Vec<(String, Value)>> {
        let mut cells = vec![Vec::new()];
        for (key, values) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|cell| {
                    values.iter().map(move |v| {
                        let mut c = cell.clone();
                        c.push((key.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        cells
    }
}

fn apply_overrides(base: &RunConfig, cell: &[(String, Value)]) -> Result<RunConfig> {
    let mut value = serde_json::to_value(base).map_err(|e| Error::Config(e.to_string()))?;
    let map = value.as_object_mut().expect("config is an object");
    for (k, v) in cell {
        map.insert(k.clone(), v.clone());
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("grid cell: {e}")))
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.as_f64().map_or_else(|| n.to_string(), fmt_num),
        other => other.to_string(),
    }
}

/// Trains every grid cell `seeds` times (seeds `base, base+1, ...`) and
/// writes `sweep.csv`: grid coordinates, seed, the final metrics row and an
/// error column. With more than one seed each cell also gets a `mean` row
/// over its successful seeds.
pub fn sweep(base: &RunConfig, grid: &Grid, seeds: u64, out: &Path) -> Result<PathBuf> {
    if seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    fs::create_dir_all(out).map_err(io_context(out))?;
    let path = out.join("sweep.csv");
    let mut w = csv_out::writer(&path)?;
    let mut header: Vec<String> = grid.axes.iter().map(|(k, _)| k.clone()).collect();
    header.push("seed".into());
    header.extend(METRICS_HEADER.iter().map(|s| s.to_string()));
    header.push("error".into());
    w.write_record(&header)?;
    w.flush()?;

    for (ci, cell) in grid.cells().iter().enumerate() {
        let coords: Vec<String> = cell.iter().map(|(_, v)| value_text(v)).collect();
        let mut finals: Vec<MetricsReport> = Vec::new();
        for s in 0..seeds {
            let outcome = apply_overrides(base, cell).and_then(|config| {
                let seed = config.seed + s;
                let config = with_seed(config, Some(seed));
                let dir = out.join(format!("cell_{ci:03}")).join(format!("seed_{seed}"));
                train(TrainArgs {
                    config,
                    out: dir,
                    resume: None,
                })
                .map(|o| (seed, o))
            });
            let mut row = coords.clone();
            match outcome {
                Ok((seed, o)) => {
                    let last = o.reports.last().expect("a run reports at least once").clone();
                    row.push(seed.to_string());
                    row.extend(csv_out::metrics_record(&last));
                    row.push(String::new());
                    finals.push(last);
                }
                Err(e) => {
                    row.push((base.seed + s).to_string());
                    row.extend(std::iter::repeat_n(String::new(), METRICS_HEADER.len()));
                    row.push(e.to_string());
                }
            }
            w.write_record(&row)?;
            w.flush()?;
        }
        if seeds > 1 {
            let mut row = coords.clone();
            row.push("mean".into());
            match mean_report(&finals) {
                Some(m) => {
                    row.extend(mean_record(&m));
                    row.push(String::new());
                }
                None => {
                    row.extend(std::iter::repeat_n(String::new(), METRICS_HEADER.len()));
                    row.push("no successful seeds".into());
                }
            }
            w.write_record(&row)?;
            w.flush()?;
        }
    }
    Ok(path)
}

/// Column-wise means; `modes` stays fractional.
pub struct MeanReport {
    pub iteration: f64,
    pub modes: f64,
    pub values: Vec<f64>,
}

fn mean_report(reports: &[MetricsReport]) -> Option<MeanReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mut values = vec![
        mean(&|r| r.hq),
        mean(&|r| r.kl),
        mean(&|r| r.loss_d),
        mean(&|r| r.loss_g),
    ];
    for i in 0..ckgan::kernels::NUM_KERNELS {
        values.push(mean(&|r| r.xi[i]));
    }
    values.push(mean(&|r| r.seconds));
    Some(MeanReport {
        iteration: mean(&|r| r.iteration as f64),
        modes: mean(&|r| r.modes as f64),
        values,
    })
}

fn mean_record(m: &MeanReport) -> Vec<String> {
    let mut row = vec![fmt_num(m.iteration), fmt_num(m.modes)];
    row.extend(m.values.iter().map(|&v| fmt_num(v)));
    row
}
