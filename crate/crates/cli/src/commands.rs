use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use svdd::bandwidth::{select_bandwidth, write_sweep_csv};
use svdd::dataprep::{self, load_features, load_samples, PrepStep};
use svdd::experiment::{render_text, run_experiment, write_outputs};
use svdd::multiclass::train_multiclass;
use svdd::{
    BandwidthMethod, BandwidthOptions, DeltaMode, ExperimentConfig, MulticlassModel, Result, SolverSettings,
    SplitPlan, SvddError,
};

use crate::config::{ConfigFile, Resolver};
use crate::{BandwidthArgs, Cli, Command, CriterionArgs, ExperimentArgs, PrepArgs, ScoreArgs, SolverArgs, TrainArgs};

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(stdout_error)?
    };
}

fn stdout_error(e: io::Error) -> SvddError {
    SvddError::io("<stdout>", e)
}

fn path_string(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| p.to_string_lossy().into_owned())
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let mut r = Resolver::new(&file);
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let threads = r.value("threads", cli.threads, cores)?;
    if threads == 0 {
        return Err(SvddError::Config("threads must be at least 1".into()));
    }
    let seed = r.value("seed", cli.seed, 0u64)?;

    let job = match cli.command {
        Command::Prep(a) => Job::Prep(resolve_prep(&mut r, a)?),
        Command::Bandwidth(a) => Job::Bandwidth(resolve_bandwidth(&mut r, a)?),
        Command::Train(a) => Job::Train(resolve_train(&mut r, a)?),
        Command::Score(a) => Job::Score(resolve_score(&mut r, a)?),
        Command::Experiment(a) => Job::Experiment(Box::new(resolve_experiment(&mut r, a, seed)?)),
    };
    file.check_unused()?;
    let resolved = r.render();
    eprint!("# resolved configuration\n{resolved}");

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SvddError::Config(format!("cannot start {threads} threads: {e}")))?;
    pool.install(|| {
        let mut out = io::stdout();
        run_job(job, &resolved, &mut out)
    })
}

fn run_job(job: Job, resolved: &str, out: &mut dyn Write) -> Result<ExitCode> {
    match job {
        Job::Prep(j) => prep(j, out),
        Job::Bandwidth(j) => bandwidth(j, out),
        Job::Train(j) => train(j, out),
        Job::Score(j) => score(j, out),
        Job::Experiment(j) => experiment(*j, resolved, out),
    }
}

enum Job {
    Prep(PrepJob),
    Bandwidth(BandwidthJob),
    Train(TrainJob),
    Score(ScoreJob),
    Experiment(Box<ExperimentConfig>),
}

fn resolve_solver(r: &mut Resolver, a: SolverArgs) -> Result<SolverSettings> {
    let d = SolverSettings::default();
    let s = SolverSettings {
        outlier_fraction: r.optional("outlier-fraction", a.outlier_fraction)?,
        kkt_tolerance: r.value("kkt-tolerance", a.kkt_tolerance, d.kkt_tolerance)?,
        max_iterations: r.optional("max-iterations", a.max_iterations)?,
        alpha_zero_tolerance: r.value("alpha-zero-tolerance", a.alpha_zero_tolerance, d.alpha_zero_tolerance)?,
    };
    s.validate().map_err(|e| SvddError::Config(e.to_string()))?;
    Ok(s)
}

fn resolve_criterion(r: &mut Resolver, a: CriterionArgs) -> Result<BandwidthOptions> {
    let d = BandwidthOptions::default();
    Ok(BandwidthOptions {
        mean_delta: r.value("delta", a.delta, d.mean_delta)?,
        delta_mode: r.value("delta-mode", a.delta_mode, DeltaMode::default())?,
        peak_grid_points: r.value("grid-points", a.grid_points, d.peak_grid_points)?,
        peak_smoothing_window: r.value("smoothing-window", a.smoothing_window, d.peak_smoothing_window)?,
        peak_grid: None,
        degenerate_class_bandwidth: r.value("fallback-bandwidth", a.fallback_bandwidth, d.degenerate_class_bandwidth)?,
    })
}

struct PrepJob {
    input: PathBuf,
    output: PathBuf,
    saturation: Option<f64>,
    normalize: bool,
}

fn resolve_prep(r: &mut Resolver, a: PrepArgs) -> Result<PrepJob> {
    Ok(PrepJob {
        input: r.required("input", path_string(a.input))?.into(),
        output: r.required("output", path_string(a.output))?.into(),
        saturation: r.optional("saturation-threshold", a.saturation_threshold)?,
        normalize: r.switch("normalize", a.normalize, false)?,
    })
}

fn prep(job: PrepJob, out: &mut dyn Write) -> Result<ExitCode> {
    let table = load_samples(&job.input)?;
    let prepared = dataprep::preprocess(&table, job.saturation, job.normalize)?;
    prepared.save(&job.output)?;
    say!(out, "rows: {}  bands: {}  classes: {}", prepared.n(), prepared.band_count(), prepared.classes().len());
    for step in &prepared.provenance().steps {
        match step {
            PrepStep::SaturationCorrected { threshold, replaced } => {
                say!(out, "saturation: {replaced} values above {threshold} replaced with 0")
            }
            PrepStep::MaxNormalized { global_max } => say!(out, "normalization: global max {global_max}"),
        }
    }
    for w in &prepared.provenance().warnings {
        eprintln!("warning: {w}");
    }
    say!(out, "wrote {}", job.output.display());
    Ok(ExitCode::SUCCESS)
}

struct BandwidthJob {
    input: PathBuf,
    method: BandwidthMethod,
    class: Option<String>,
    sweep_out: PathBuf,
    options: BandwidthOptions,
    solver: SolverSettings,
}

fn resolve_bandwidth(r: &mut Resolver, a: BandwidthArgs) -> Result<BandwidthJob> {
    let input = r.required("input", path_string(a.input))?.into();
    let method = r.required("method", a.method)?;
    let class = r.optional("class", a.class)?;
    let output_dir: PathBuf = r.value("output-dir", path_string(a.output_dir), ".".to_string())?.into();
    let default_sweep = output_dir.join(format!("sweep_{}.csv", class.as_deref().unwrap_or("all")));
    let sweep_out = if method == BandwidthMethod::Peak {
        r.value("sweep-out", path_string(a.sweep_out), default_sweep.to_string_lossy().into_owned())?.into()
    } else {
        default_sweep
    };
    Ok(BandwidthJob {
        input,
        method,
        class,
        sweep_out,
        options: resolve_criterion(r, a.criterion)?,
        solver: resolve_solver(r, a.solver)?,
    })
}

fn bandwidth(job: BandwidthJob, out: &mut dyn Write) -> Result<ExitCode> {
    let rows = match &job.class {
        None => load_features(&job.input)?,
        Some(name) => {
            let table = load_samples(&job.input)?;
            let label = table
                .classes()
                .iter()
                .find(|c| &c.name == name)
                .ok_or_else(|| SvddError::Input(format!("no class named {name:?} in {}", job.input.display())))?;
            table.rows_of_class(label.id)
        }
    };
    let selection = select_bandwidth(&rows, job.method, &job.options, &job.solver)?;
    say!(out, "method = {}", selection.method);
    say!(out, "samples = {}", rows.len());
    say!(out, "s = {}", selection.s);
    if let Some(d) = selection.delta {
        say!(out, "delta = {d}");
    }
    if let Some(i) = selection.iterations {
        say!(out, "iterations = {i}");
    }
    if let Some(sweep) = &selection.sweep {
        if let Some(dir) = job.sweep_out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| SvddError::io(dir, e))?;
        }
        let f = File::create(&job.sweep_out).map_err(|e| SvddError::io(&job.sweep_out, e))?;
        write_sweep_csv(BufWriter::new(f), sweep)?;
        say!(out, "sweep = {}", job.sweep_out.display());
    }
    Ok(ExitCode::SUCCESS)
}

struct TrainJob {
    input: PathBuf,
    method: BandwidthMethod,
    out: PathBuf,
    options: BandwidthOptions,
    solver: SolverSettings,
}

fn resolve_train(r: &mut Resolver, a: TrainArgs) -> Result<TrainJob> {
    Ok(TrainJob {
        input: r.required("input", path_string(a.input))?.into(),
        method: r.required("method", a.method)?,
        out: r.required("out", path_string(a.out))?.into(),
        options: resolve_criterion(r, a.criterion)?,
        solver: resolve_solver(r, a.solver)?,
    })
}

fn train(job: TrainJob, out: &mut dyn Write) -> Result<ExitCode> {
    let table = load_samples(&job.input)?;
    let model = train_multiclass(&table, job.method, &job.options, &job.solver)?;
    write_bytes(&job.out, model.to_json()?.as_bytes())?;
    say!(out, "{:<24} {:>8} {:>14} {:>14} {:>6}", "class", "samples", "s", "R2", "SVs");
    let counts = table.class_counts();
    for c in model.classes() {
        say!(out, 
            "{:<24} {:>8} {:>14.6} {:>14.6} {:>6}{}",
            c.label.name,
            counts[c.label.id],
            c.bandwidth.s,
            c.model.r_squared(),
            c.model.support_vectors().len(),
            c.note.as_ref().map_or(String::new(), |n| format!("  ({n})"))
        );
    }
    say!(out, "wrote {}", job.out.display());
    Ok(ExitCode::SUCCESS)
}

struct ScoreJob {
    input: PathBuf,
    model: PathBuf,
    out: Option<PathBuf>,
}

fn resolve_score(r: &mut Resolver, a: ScoreArgs) -> Result<ScoreJob> {
    Ok(ScoreJob {
        input: r.required("input", path_string(a.input))?.into(),
        model: r.required("model", path_string(a.model))?.into(),
        out: r.optional("out", path_string(a.out))?.map(PathBuf::from),
    })
}

fn score(job: ScoreJob, out: &mut dyn Write) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&job.model).map_err(|e| SvddError::io(&job.model, e))?;
    let model = MulticlassModel::from_json(&text)?;
    let rows = load_features(&job.input)?;
    let decisions = model.predict(&rows)?;

    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["row".to_string(), "label".to_string(), "inside".to_string()];
        header.extend(model.labels().iter().map(|l| format!("ratio_{}", l.name)));
        w.write_record(&header).map_err(|e| SvddError::Format(e.to_string()))?;
        for (i, d) in decisions.iter().enumerate() {
            let inside: Vec<&str> = d.inside_classes.iter().map(|l| l.name.as_str()).collect();
            let mut record = vec![i.to_string(), d.assigned.name.clone(), inside.join(";")];
            record.extend(d.ratios.iter().map(|q| q.to_string()));
            w.write_record(&record).map_err(|e| SvddError::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| SvddError::Format(e.to_string()))?;
    }
    match &job.out {
        Some(path) => {
            write_bytes(path, &buf)?;
            eprintln!("scored {} rows into {}", decisions.len(), path.display());
        }
        None => out.write_all(&buf).map_err(stdout_error)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn resolve_experiment(r: &mut Resolver, a: ExperimentArgs, seed: u64) -> Result<ExperimentConfig> {
    let data: String = r.required("data", path_string(a.data))?;
    let mut config = ExperimentConfig::new(data);
    let defaults = config.methods.clone();
    config.methods = r.list("methods", a.methods, defaults)?;
    let plan = SplitPlan::default();
    config.split = SplitPlan {
        train_fraction: r.value("train-fraction", a.train_fraction, plan.train_fraction)?,
        seed,
        repetitions: r.value("repetitions", a.repetitions, plan.repetitions)?,
    };
    config.dataset.saturation_threshold = r.optional("saturation-threshold", a.saturation_threshold)?;
    config.dataset.normalize = !r.switch("no-normalize", a.no_normalize, false)?;
    config.output_dir = Some(r.value("output-dir", path_string(a.output_dir), "svdd-output".to_string())?.into());
    config.bandwidth = resolve_criterion(r, a.criterion)?;
    config.solver = resolve_solver(r, a.solver)?;
    config.validate()?;
    Ok(config)
}

fn experiment(config: ExperimentConfig, resolved: &str, out: &mut dyn Write) -> Result<ExitCode> {
    let report = run_experiment(&config)?;
    let dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let written = write_outputs(&report, &dir)?;
    write_bytes(&dir.join("config.txt"), resolved.as_bytes())?;
    write!(out, "{}", render_text(&report)).map_err(stdout_error)?;
    say!(out, "\n{} files written to {}", written.len() + 1, dir.display());
    if report.all_failed() {
        eprintln!("error: every experiment cell failed");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| SvddError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| SvddError::io(path, e))
}
