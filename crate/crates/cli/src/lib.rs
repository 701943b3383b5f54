//! Command-line front end. `run_cli` parses arguments and returns the
//! process exit code: 0 on success, 1 on usage errors, 2 on runtime errors.

pub mod args;
pub mod run;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use pathattr_core::axioms::{self, AxiomReport};
use pathattr_core::baseline::{compute_baseline, fixed_baseline, gaussian_blur, BaselineSpec, OptimizedParams, SearchGradient};
use pathattr_core::metrics::{
    insertion_deletion_score, sensitivity_n, CurveScore, EvalReport, ImageEval, Reference,
    SensitivityPoint,
};
use pathattr_core::model::{load_model, train_toy, Layer, ModelSpec, TrainConfig};
use pathattr_core::pwl::{load_pwl, PwlModel};
use pathattr_core::{datasets, digest, io, ClassOutput, Error, TensorF};
use rayon::prelude::*;
use serde::Serialize;

use args::{
    AttributeArgs, AxiomsArgs, BaselineArgs, BaselineKind, Cli, Command, CurveScoreArg, Dataset,
    EvalInsdelArgs, EvalSensnArgs, MethodArgs, OracleArgs, ReferenceKind, SearchGrad, TrainToyArgs,
};
use run::{list_inputs, read_input, read_run_config, RunConfig};

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(Error::Io(e))
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Runs with the process's stdout and stderr.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    let result = match cli.command {
        Command::Attribute(a) => attribute(a, out),
        Command::Baseline(a) => baseline(a, out),
        Command::Axioms(a) => axioms_cmd(a, out),
        Command::EvalInsdel(a) => eval_insdel(a, out),
        Command::EvalSensn(a) => eval_sensn(a, out),
        Command::Oracle(a) => oracle(a, out),
        Command::TrainToy(a) => train(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "usage error: {msg}");
            1
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> std::result::Result<&'a Path, Failure> {
    v.as_deref()
        .ok_or_else(|| Failure::Usage(format!("--{flag} is required")))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> pathattr_core::Result<()> {
    io::write_atomic(path, to_json(v).as_bytes())
}

/// One resolved attribution job.
struct Job {
    cfg: RunConfig,
    subdir: Option<String>,
}

fn plan_jobs(m: &MethodArgs) -> std::result::Result<(pathattr_core::Model, Vec<Job>), Failure> {
    let model_path = required(&m.model, "model")?;
    let input = required(&m.input, "input")?;
    let model = load_model(model_path)?;
    let jobs = list_inputs(input, m.seed)?
        .into_iter()
        .map(|(path, seed, subdir)| {
            RunConfig::new(m, model_path, &path, seed).map(|cfg| Job { cfg, subdir })
        })
        .collect::<pathattr_core::Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::InvalidArgument(msg) => Failure::Usage(msg),
            other => Failure::Runtime(other),
        })?;
    Ok((model, jobs))
}

fn attribute(a: AttributeArgs, out: &mut dyn Write) -> CmdResult {
    let (model, jobs) = match &a.replay {
        Some(meta) => {
            let cfg = read_run_config(meta)?;
            (cfg.load_model()?, vec![Job { cfg, subdir: None }])
        }
        None => plan_jobs(&a.method)?,
    };
    let results = jobs
        .par_iter()
        .map(|job| {
            let x = read_input(&job.cfg.input, &model)?;
            let map = job.cfg.attribute(&model, &x)?;
            let dir = match &job.subdir {
                Some(s) => a.out.join(s),
                None => a.out.clone(),
            };
            io::write_attribution(&map, &dir, Some(&job.cfg))?;
            Ok((dir, digest::tensor(&map.scores)))
        })
        .collect::<pathattr_core::Result<Vec<_>>>()?;
    for (dir, d) in results {
        writeln!(out, "{}  {}", d, dir.display())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BaselineRecord {
    kind: BaselineKind,
    input: PathBuf,
    model_digest: String,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<pathattr_core::baseline::BaselineResult>,
}

fn baseline(a: BaselineArgs, out: &mut dyn Write) -> CmdResult {
    let model = load_model(&a.model)?;
    let x = read_input(&a.input, &model)?;
    let range = model.input_range();
    let (b, result) = match a.baseline_kind {
        BaselineKind::Black => (fixed_baseline(&x, &BaselineSpec::Black, range)?, None),
        BaselineKind::InputMean => (fixed_baseline(&x, &BaselineSpec::InputMean, range)?, None),
        BaselineKind::GaussianNoise => (
            fixed_baseline(
                &x,
                &BaselineSpec::GaussianNoise {
                    std: a.noise_std,
                    seed: a.seed,
                },
                range,
            )?,
            None,
        ),
        BaselineKind::Blur => (gaussian_blur(&x, a.sigma)?, None),
        BaselineKind::Optimized => {
            let params = OptimizedParams {
                sigma: a.sigma,
                eta: a.eta,
                eps: a.eps,
                delta: a.delta,
                max_iter: a.max_iter,
                gradient: match a.baseline_grad {
                    SearchGrad::Loss => SearchGradient::Loss,
                    SearchGrad::Raw => SearchGradient::Raw,
                },
            };
            let r = compute_baseline(&model, &x, &params)?;
            (r.baseline.clone(), Some(r))
        }
    };
    if let Some(r) = &result {
        writeln!(
            out,
            "achieved_eps={} (eps={}) achieved_delta={} (delta={}) feasible_delta={} iterations={} selected={} converged={} clipped_conflicts={}",
            r.achieved_eps,
            r.params.eps,
            r.achieved_delta,
            r.params.delta,
            r.feasible_delta.map_or("n/a".to_string(), |d| d.to_string()),
            r.iterations,
            r.selected_iteration,
            r.converged,
            r.infeasible_features
        )?;
    }
    let record = BaselineRecord {
        kind: a.baseline_kind,
        input: a.input.clone(),
        model_digest: digest::bytes_hex(&fs::read(&a.model)?),
        seed: a.seed,
        result,
    };
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        match b.shape() {
            [_, _] | [_, _, 3] => io::write_image(&b, dir.join("baseline.pgm").with_extension(
                if b.shape().len() == 3 { "ppm" } else { "pgm" },
            ), 65535)?,
            _ => {}
        }
        io::write_atomic(&dir.join("baseline.txt"), io::format_scores(&b).as_bytes())?;
        write_json(&dir.join("diagnostics.json"), &record)?;
    }
    writeln!(out, "baseline digest {}", digest::tensor(&b))?;
    Ok(())
}

fn print_report(out: &mut dyn Write, r: &AxiomReport) -> std::io::Result<()> {
    writeln!(out, "{}", r.summary())?;
    for (k, v) in &r.values {
        writeln!(out, "    {k}: {v:?}")?;
    }
    for n in &r.notes {
        writeln!(out, "    note: {n}")?;
    }
    Ok(())
}

fn axioms_cmd(a: AxiomsArgs, out: &mut dyn Write) -> CmdResult {
    let names: Vec<&str> = match a.demo.as_deref() {
        Some(d) => vec![d],
        None => vec!["example1", "example2", "weak-dependence"],
    };
    let mut all = Vec::new();
    for name in names {
        let reports = axioms::demo(name).map_err(|e| match e {
            Error::InvalidArgument(m) => Failure::Usage(m),
            other => Failure::Runtime(other),
        })?;
        writeln!(out, "== {name}")?;
        for r in &reports {
            print_report(out, r)?;
        }
        all.extend(reports);
    }
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("axioms.json"), &all)?;
    }
    Ok(())
}

fn reference_of(kind: ReferenceKind, sigma: Option<f64>) -> Reference {
    match kind {
        ReferenceKind::Black => Reference::Black,
        ReferenceKind::InputMean => Reference::InputMean,
        ReferenceKind::Blur => Reference::Blur {
            sigma: sigma.unwrap_or(run::DEFAULT_BLUR_SIGMA),
        },
    }
}

#[derive(Serialize)]
struct EvalConfig<'a> {
    runs: Vec<&'a RunConfig>,
    reference: Reference,
    group_size: usize,
    curve_score: CurveScore,
}

fn eval_insdel(a: EvalInsdelArgs, out: &mut dyn Write) -> CmdResult {
    if a.group_size == 0 {
        return Err(Failure::Usage("--group-size must be >= 1".into()));
    }
    let (model, jobs) = plan_jobs(&a.method)?;
    let reference = reference_of(a.reference, a.method.sigma);
    let score = match a.curve_score {
        CurveScoreArg::Probability => CurveScore::Probability,
        CurveScoreArg::Logit => CurveScore::Logit,
    };
    let rows = jobs
        .par_iter()
        .map(|job| {
            let x = read_input(&job.cfg.input, &model)?;
            let map = job.cfg.attribute(&model, &x)?;
            let canvas = reference.canvas(&x)?;
            let s = insertion_deletion_score(&model, &x, &map.scores, &canvas, a.group_size, score)?;
            Ok((job.subdir.clone().unwrap_or_else(|| "input".into()), s))
        })
        .collect::<pathattr_core::Result<Vec<_>>>()?;
    let config = EvalConfig {
        runs: jobs.iter().map(|j| &j.cfg).collect(),
        reference,
        group_size: a.group_size,
        curve_score: score,
    };
    let report = EvalReport::from_images(
        rows.iter()
            .map(|(name, s)| ImageEval {
                name: name.clone(),
                insertion_auc: s.insertion_auc,
                deletion_auc: s.deletion_auc,
                difference: s.difference,
            })
            .collect(),
        digest::json(&config),
    );
    for e in &report.images {
        writeln!(
            out,
            "{}: insertion={:.6} deletion={:.6} difference={:.6}",
            e.name, e.insertion_auc, e.deletion_auc, e.difference
        )?;
    }
    writeln!(
        out,
        "mean over {} images: insertion={:.6} deletion={:.6} difference={:.6}",
        report.images.len(),
        report.mean_insertion_auc,
        report.mean_deletion_auc,
        report.mean_difference
    )?;
    if let Some(dir) = &a.out {
        let curves = dir.join("curves");
        fs::create_dir_all(&curves)?;
        for (name, s) in &rows {
            io::write_atomic(&curves.join(format!("{name}_insertion.txt")), s.insertion.to_columns().as_bytes())?;
            io::write_atomic(&curves.join(format!("{name}_deletion.txt")), s.deletion.to_columns().as_bytes())?;
        }
        write_json(&dir.join("report.json"), &report)?;
        write_json(&dir.join("config.json"), &config)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SensConfig<'a> {
    runs: Vec<&'a RunConfig>,
    fractions: &'a [f64],
    samples: usize,
}

fn eval_sensn(a: EvalSensnArgs, out: &mut dyn Write) -> CmdResult {
    if a.samples < 2 {
        return Err(Failure::Usage("--samples must be >= 2".into()));
    }
    if let Some(f) = a.fractions.iter().find(|f| !(0.01..=0.9).contains(*f)) {
        return Err(Failure::Usage(format!("fraction {f} outside [0.01, 0.9]")));
    }
    let (model, jobs) = plan_jobs(&a.method)?;
    let per_image = jobs
        .par_iter()
        .map(|job| {
            let x = read_input(&job.cfg.input, &model)?;
            let map = job.cfg.attribute(&model, &x)?;
            let target = ClassOutput::predicted(&model, &x, job.cfg.output_mode())?;
            sensitivity_n(&target, &x, &map.scores, &a.fractions, a.samples, job.cfg.seed)
        })
        .collect::<pathattr_core::Result<Vec<_>>>()?;
    let summary: Vec<SensitivityPoint> = a
        .fractions
        .iter()
        .enumerate()
        .map(|(j, &fraction)| {
            let defined: Vec<f64> = per_image.iter().filter_map(|p| p[j].correlation).collect();
            SensitivityPoint {
                fraction,
                subset_size: per_image[0][j].subset_size,
                correlation: (!defined.is_empty())
                    .then(|| defined.iter().sum::<f64>() / defined.len() as f64),
            }
        })
        .collect();
    for p in &summary {
        let c = p.correlation.map_or("undefined".to_string(), |c| format!("{c:.6}"));
        writeln!(out, "fraction {:.2} (subset {}): mean pcc {}", p.fraction, p.subset_size, c)?;
    }
    let config = SensConfig {
        runs: jobs.iter().map(|j| &j.cfg).collect(),
        fractions: &a.fractions,
        samples: a.samples,
    };
    let mut report = EvalReport::from_images(Vec::new(), digest::json(&config));
    report.sensitivity = summary;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("report.json"), &report)?;
        write_json(&dir.join("per_image.json"), &per_image)?;
        write_json(&dir.join("config.json"), &config)?;
    }
    Ok(())
}

fn oracle(a: OracleArgs, out: &mut dyn Write) -> CmdResult {
    let (model, builtin) = match (&a.builtin, &a.model) {
        (Some(name), None) => (
            PwlModel::builtin(name).map_err(|e| Failure::Usage(e.to_string()))?,
            Some(name.as_str()),
        ),
        (None, Some(path)) => (load_pwl(path)?, None),
        _ => return Err(Failure::Usage("give exactly one of --builtin or --model".into())),
    };
    let x = &a.input;
    let b = &a.baseline;
    let attribution = model.exact_path_attribution(x, b)?;
    let seg = model.segment_path(x, b)?;
    let fx = model.evaluate(x)?;
    let fb = model.evaluate(b)?;
    let total: f64 = attribution.iter().sum();
    writeln!(out, "input: {x:?}  baseline: {b:?}")?;
    writeln!(out, "F(input) = {fx:?}  F(baseline) = {fb:?}")?;
    writeln!(out, "crossings: {:?}", seg.crossings)?;
    let pieces: Vec<String> = seg
        .pieces
        .iter()
        .map(|p| p.map_or("outside".to_string(), |i| format!("piece {i}")))
        .collect();
    writeln!(out, "intervals: {}", pieces.join(", "))?;
    writeln!(out, "attribution: {attribution:?}")?;
    writeln!(
        out,
        "completeness: sum = {total:?}, F(input) - F(baseline) = {:?}, residual = {:?}",
        fx - fb,
        (total - (fx - fb)).abs()
    )?;
    if builtin == Some("example1") && b.iter().all(|&v| v == 0.0) {
        writeln!(
            out,
            "note: with a zero baseline this model is often quoted as giving {:?} for [1.5, 1.5] and {:?} for [4, 4]; straight-path integration of the function gives [3.0, 4.5] and [13.0, 7.0], so those quoted values are not reproduced",
            axioms::EXAMPLE1_PRINTED[0],
            axioms::EXAMPLE1_PRINTED[1]
        )?;
    }
    Ok(())
}

/// Small architectures for the synthetic datasets.
pub fn toy_spec(dataset: Dataset, seed: u64) -> ModelSpec {
    let mut spec = match dataset {
        Dataset::Blobs => ModelSpec::new(
            vec![2],
            2,
            vec![Layer::dense(2, 8), Layer::Relu, Layer::dense(8, 2)],
        ),
        Dataset::Bars16 => ModelSpec::new(
            vec![datasets::BARS_SIZE, datasets::BARS_SIZE],
            2,
            vec![
                Layer::conv2d(1, 4, 3),
                Layer::Relu,
                Layer::AvgPool2d { k: 4 },
                Layer::Flatten,
                Layer::dense(64, 2),
            ],
        ),
    };
    spec.initialize(seed);
    spec
}

pub fn toy_data(dataset: Dataset, n: usize, seed: u64) -> Vec<(TensorF, usize)> {
    match dataset {
        Dataset::Blobs => datasets::blobs(n, seed),
        Dataset::Bars16 => datasets::bars(n, datasets::BARS_SIZE, seed),
    }
}

fn train(a: TrainToyArgs, out: &mut dyn Write) -> CmdResult {
    if a.samples == 0 {
        return Err(Failure::Usage("--samples must be >= 1".into()));
    }
    let data = toy_data(a.dataset, a.samples, a.seed);
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (model, report) = train_toy(toy_spec(a.dataset, a.seed), &data, &cfg)?;
    fs::create_dir_all(&a.out)?;
    io::write_atomic(&a.out.join("model.toml"), model.spec().to_toml()?.as_bytes())?;
    write_json(&a.out.join("train_report.json"), &report)?;
    if a.test_samples > 0 {
        let test_dir = a.out.join("test");
        fs::create_dir_all(&test_dir)?;
        let test = toy_data(a.dataset, a.test_samples, pathattr_core::rng::labeled_seed(a.seed, "test"));
        for (i, (x, y)) in test.iter().enumerate() {
            match a.dataset {
                Dataset::Blobs => io::write_atomic(
                    &test_dir.join(format!("{i:04}_label{y}.txt")),
                    io::format_scores(x).as_bytes(),
                )?,
                Dataset::Bars16 => io::write_image(x, test_dir.join(format!("{i:04}_label{y}.pgm")), 65535)?,
            }
        }
    }
    writeln!(
        out,
        "trained {} epochs: loss {:.6}, accuracy {:.4}",
        report.epochs, report.final_loss, report.accuracy
    )?;
    writeln!(out, "model written to {}", a.out.join("model.toml").display())?;
    Ok(())
}
