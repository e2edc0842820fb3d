//! Command-line front end: theory curves, Monte Carlo checks, parameter
//! estimation and theory-vs-cross-validation comparison.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{estimate_model, EstimationMode};
use crate::losses::Loss;
use crate::model::PopulationModel;
use crate::simulate::{
    attach_theory, monte_carlo_curve, sig6, write_mc_csv, Dataset, GeneratorSpec, Noise, TrainOptions, Trainer,
};
use crate::theory::{sweep_lambda_with, LambdaGrid, PrecisionCurve, SolveMode, SolverOptions};

#[derive(Debug, Parser)]
#[command(
    name = "hdmargin",
    version,
    about = "Precision of regularized margin classifiers in high dimensions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Asymptotic precision curves over a lambda grid, one per loss.
    Theory(TheoryArgs),
    /// Monte Carlo precision on generated data next to the theory curve.
    Simulate(SimulateArgs),
    /// Estimate a population model from a labelled dataset.
    Estimate(EstimateArgs),
    /// Theory on the estimated model against repeated random-split validation.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Auto,
    Homogeneous,
    General,
}

impl ModeArg {
    fn resolve(self, model: &PopulationModel) -> SolveMode {
        match self {
            ModeArg::Auto => SolveMode::for_model(model),
            ModeArg::Homogeneous => SolveMode::Homogeneous,
            ModeArg::General => SolveMode::General,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Population model JSON.
    #[arg(long, conflicts_with_all = ["mu", "sigma", "alpha", "spikes", "r"])]
    pub model: Option<PathBuf>,
    /// Signal size.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Total sample ratio n/p, split evenly between the classes.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Spike strengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub spikes: Vec<f64>,
    /// Spike projections onto the signal direction, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub r: Vec<f64>,
}

impl ModelArgs {
    pub fn resolve(&self) -> Result<PopulationModel> {
        match (&self.model, self.mu) {
            (Some(path), None) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Usage(format!("cannot read model file {}: {e}", path.display())))?;
                PopulationModel::from_json(&text)
            }
            (None, Some(mu)) => {
                PopulationModel::homogeneous(mu, self.sigma, self.alpha, self.spikes.clone(), self.r.clone())
            }
            (None, None) => Err(Error::Usage(
                "give either --model or the generator parameters (--mu ...)".into(),
            )),
            (Some(_), Some(_)) => Err(Error::Usage("--model and --mu are mutually exclusive".into())),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CurveArgs {
    /// Loss: plr, svm, dwd:q=<q> or lum:a=<a>,c=<c>. Repeatable.
    #[arg(long = "loss", required = true)]
    pub losses: Vec<Loss>,
    /// Lambda grid `min:max:count(log|lin)`.
    #[arg(long, default_value = "0.001:1000:50log")]
    pub grid: LambdaGrid,
    /// Output directory.
    #[arg(long, short, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct TheoryArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub curve: CurveArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    pub mode: ModeArg,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub curve: CurveArgs,
    #[arg(long, default_value_t = 250)]
    pub p: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// gaussian or rademacher-scaled.
    #[arg(long, default_value = "gaussian")]
    pub noise: Noise,
    /// Also write the first replicate's dataset here.
    #[arg(long)]
    pub save_data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    /// Dataset CSV with header `label,f1,...,fp`.
    #[arg(long)]
    pub data: PathBuf,
    /// pooled or class-specific.
    #[arg(long, default_value = "pooled")]
    pub mode: EstimationMode,
    #[arg(long, short, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Dataset CSV with header `label,f1,...,fp`.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub curve: CurveArgs,
    /// pooled or class-specific.
    #[arg(long, default_value = "pooled")]
    pub estimation: EstimationMode,
    /// Random train/test splits for validation.
    #[arg(long, default_value_t = 100)]
    pub splits: usize,
    /// Fraction of each class held out per split.
    #[arg(long, default_value_t = 0.05)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Exit code for an error: 1 for bad input, 2 for numerical failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NoConvergence { .. }
        | Error::Quadrature(_)
        | Error::Resolvent(_)
        | Error::Domain(_)
        | Error::Internal(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            if outcome.numerical_failure {
                2
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    /// Some required solve did not converge; outputs were still written.
    pub numerical_failure: bool,
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Theory(a) => run_theory(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Estimate(a) => run_estimate(a),
        Command::Compare(a) => run_compare(a),
    }
}

fn file_stem(loss: &Loss) -> String {
    loss.to_string()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Usage(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8], out: &mut Outcome) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    out.files.push(path.to_path_buf());
    Ok(())
}

fn check_grid(grid: &LambdaGrid) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::Usage("lambda grid needs at least 2 points".into()));
    }
    Ok(())
}

fn curve_csv(curve: &PrecisionCurve) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "lambda",
        "precision_plus",
        "precision_minus",
        "balanced",
        "q0_plus",
        "q0_minus",
        "q_plus",
        "q_minus",
        "R",
        "w0",
        "converged",
        "residual",
    ])?;
    for p in &curve.points {
        let o = &p.order;
        w.write_record([
            sig6(p.lambda),
            sig6(p.precision_plus),
            sig6(p.precision_minus),
            sig6(p.balanced),
            sig6(o.q0_plus),
            sig6(o.q0_minus),
            sig6(o.q_plus),
            sig6(o.q_minus),
            sig6(o.r),
            sig6(o.w0),
            o.converged.to_string(),
            sig6(o.residual_norm),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Debug, Serialize)]
pub struct LossSummary {
    pub loss: String,
    pub lambda_star: Option<f64>,
    pub precision_star: Option<f64>,
    pub precision_plus: Option<f64>,
    pub precision_minus: Option<f64>,
    /// `interior`, `left-edge` or `right-edge`.
    pub argmax_at: Option<String>,
    pub unconverged: usize,
}

#[derive(Debug, Serialize)]
pub struct TheorySummary {
    pub grid: String,
    pub mode: String,
    pub losses: Vec<LossSummary>,
    pub best: Option<String>,
}

fn summarize(curve: &PrecisionCurve) -> LossSummary {
    let opt = curve.optimum.as_ref();
    let argmax_at = opt.map(|o| {
        if o.interior {
            "interior".to_string()
        } else if o.lambda <= curve.points[0].lambda {
            "left-edge".to_string()
        } else {
            "right-edge".to_string()
        }
    });
    LossSummary {
        loss: curve.loss.to_string(),
        lambda_star: opt.map(|o| o.lambda),
        precision_star: opt.map(|o| o.balanced),
        precision_plus: opt.map(|o| o.precision_plus),
        precision_minus: opt.map(|o| o.precision_minus),
        argmax_at,
        unconverged: curve.unconverged(),
    }
}

fn best_of(summaries: &[LossSummary]) -> Option<String> {
    summaries
        .iter()
        .filter_map(|s| s.precision_star.map(|p| (p, &s.loss)))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, l)| l.clone())
}

fn theory_curves(model: &PopulationModel, curve: &CurveArgs, mode: SolveMode) -> Result<Vec<PrecisionCurve>> {
    curve
        .losses
        .par_iter()
        .map(|loss| sweep_lambda_with(loss, model, &curve.grid, mode, &SolverOptions::default()))
        .collect()
}

pub fn run_theory(a: &TheoryArgs) -> Result<Outcome> {
    check_grid(&a.curve.grid)?;
    let model = a.model.resolve()?;
    let mode = a.mode.resolve(&model);
    ensure_dir(&a.curve.out)?;
    let curves = theory_curves(&model, &a.curve, mode)?;
    let mut out = Outcome::default();
    for c in &curves {
        let stem = format!("theory_{}", file_stem(&c.loss));
        match a.curve.format {
            Format::Csv => write_file(&a.curve.out.join(format!("{stem}.csv")), &curve_csv(c)?, &mut out)?,
            Format::Json => write_file(
                &a.curve.out.join(format!("{stem}.json")),
                serde_json::to_string_pretty(c)?.as_bytes(),
                &mut out,
            )?,
        }
        if c.unconverged() > 0 {
            out.warnings
                .push(format!("{}: {} grid points did not converge", c.loss, c.unconverged()));
            out.numerical_failure = true;
        }
    }
    let losses: Vec<LossSummary> = curves.iter().map(summarize).collect();
    let summary = TheorySummary {
        grid: a.curve.grid.to_string(),
        mode: curves.first().map(|c| c.mode.clone()).unwrap_or_default(),
        best: best_of(&losses),
        losses,
    };
    write_file(
        &a.curve.out.join("theory_summary.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
        &mut out,
    )?;
    Ok(out)
}

pub fn run_simulate(a: &SimulateArgs) -> Result<Outcome> {
    check_grid(&a.curve.grid)?;
    let model = a.model.resolve()?;
    let spec = GeneratorSpec::new(model, a.p, a.noise, a.seed)?;
    let effective = spec.effective_model();
    ensure_dir(&a.curve.out)?;
    let mut out = Outcome::default();
    if let Some(path) = &a.save_data {
        spec.generate()?.save(path)?;
        out.files.push(path.clone());
    }
    for loss in &a.curve.losses {
        let mut points = monte_carlo_curve(&spec, loss, &a.curve.grid, a.reps)?;
        let theory = sweep_lambda_with(
            loss,
            &effective,
            &a.curve.grid,
            SolveMode::for_model(&effective),
            &SolverOptions::default(),
        )?;
        if theory.unconverged() > 0 {
            out.warnings.push(format!(
                "{loss}: {} theory points did not converge",
                theory.unconverged()
            ));
            out.numerical_failure = true;
        }
        attach_theory(&mut points, &theory);
        for p in &points {
            if p.reps_converged < a.reps {
                out.warnings.push(format!(
                    "{loss}: lambda {}: {} of {} replicates did not converge",
                    sig6(p.lambda),
                    a.reps - p.reps_converged,
                    a.reps
                ));
            }
        }
        let stem = format!("simulate_{}", file_stem(loss));
        match a.curve.format {
            Format::Csv => write_file(
                &a.curve.out.join(format!("{stem}.csv")),
                &{
                    let mut buf = Vec::new();
                    write_mc_csv(&points, &mut buf)?;
                    buf
                },
                &mut out,
            )?,
            Format::Json => write_file(
                &a.curve.out.join(format!("{stem}.json")),
                serde_json::to_string_pretty(&points)?.as_bytes(),
                &mut out,
            )?,
        }
    }
    Ok(out)
}

pub fn run_estimate(a: &EstimateArgs) -> Result<Outcome> {
    let data = Dataset::load(&a.data)?;
    let report = estimate_model(&data, a.mode)?;
    ensure_dir(&a.out)?;
    let mut out = Outcome::default();
    write_file(&a.out.join("model.json"), report.model.to_json()?.as_bytes(), &mut out)?;
    write_file(
        &a.out.join("report.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
        &mut out,
    )?;
    out.warnings.extend(report.warnings.iter().cloned());
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CvPoint {
    pub lambda: f64,
    pub cv_mean: f64,
    pub cv_se: f64,
}

/// Repeated stratified random splits: each split holds out `test_fraction`
/// of every class (at least one sample), fits on the rest along the grid
/// and scores balanced accuracy on the held-out samples. Split `s` is
/// shuffled with seed `seed + s`.
pub fn cross_validation_curve(
    data: &Dataset,
    loss: &Loss,
    grid: &LambdaGrid,
    splits: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<Vec<CvPoint>> {
    if splits < 2 {
        return Err(Error::Usage("cross validation needs at least 2 splits".into()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Usage(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    data.validate()?;
    let plus: Vec<usize> = (0..data.n()).filter(|&i| data.labels[i] > 0.0).collect();
    let minus: Vec<usize> = (0..data.n()).filter(|&i| data.labels[i] < 0.0).collect();
    let held = |n: usize| ((n as f64 * test_fraction).round() as usize).clamp(1, n.saturating_sub(1));
    if plus.len() < 2 || minus.len() < 2 {
        return Err(Error::Dataset(
            "each class needs at least two samples for splitting".into(),
        ));
    }
    let (hp, hm) = (held(plus.len()), held(minus.len()));
    let lambdas = grid.values();

    let scores: Vec<Vec<Option<f64>>> = (0..splits)
        .into_par_iter()
        .map(|s| -> Result<Vec<Option<f64>>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
            let (mut p, mut m) = (plus.clone(), minus.clone());
            p.shuffle(&mut rng);
            m.shuffle(&mut rng);
            let test: Vec<usize> = p[..hp].iter().chain(&m[..hm]).copied().collect();
            let train: Vec<usize> = p[hp..].iter().chain(&m[hm..]).copied().collect();
            let (train, test) = (data.subset(&train), data.subset(&test));
            let mut trainer = Trainer::new(&train, TrainOptions::default())?;
            let mut out = vec![None; lambdas.len()];
            for (j, &lambda) in lambdas.iter().enumerate().rev() {
                let fit = trainer.fit(loss, lambda)?;
                if !fit.converged {
                    continue;
                }
                let (mut hit_p, mut hit_m) = (0usize, 0usize);
                for i in 0..test.n() {
                    let v = fit.decision(test.features.row(i).transpose().as_slice());
                    if test.labels[i] > 0.0 && v > 0.0 {
                        hit_p += 1;
                    } else if test.labels[i] < 0.0 && v < 0.0 {
                        hit_m += 1;
                    }
                }
                out[j] = Some(0.5 * (hit_p as f64 / hp as f64 + hit_m as f64 / hm as f64));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    Ok(lambdas
        .iter()
        .enumerate()
        .map(|(j, &lambda)| {
            let v: Vec<f64> = scores.iter().filter_map(|s| s[j]).collect();
            let k = v.len() as f64;
            let mean = v.iter().sum::<f64>() / k;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0);
            CvPoint {
                lambda,
                cv_mean: mean,
                cv_se: (var / k).sqrt(),
            }
        })
        .collect())
}

#[derive(Debug, Serialize)]
pub struct CompareEntry {
    pub loss: String,
    pub theory_lambda_star: Option<f64>,
    pub theory_precision_star: Option<f64>,
    pub cv_lambda_star: Option<f64>,
    pub cv_precision_star: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct CompareSummary {
    pub grid: String,
    pub splits: usize,
    pub test_fraction: f64,
    pub model: PopulationModel,
    pub losses: Vec<CompareEntry>,
    pub best_theory: Option<String>,
    pub best_cv: Option<String>,
}

#[derive(Serialize)]
struct CompareRow {
    lambda: f64,
    theory: Option<f64>,
    cv_mean: f64,
    cv_se: f64,
}

pub fn run_compare(a: &CompareArgs) -> Result<Outcome> {
    check_grid(&a.curve.grid)?;
    let data = Dataset::load(&a.data)?;
    let report = estimate_model(&data, a.estimation)?;
    let model = report.model.clone();
    ensure_dir(&a.curve.out)?;
    let mut out = Outcome::default();
    out.warnings.extend(report.warnings.iter().cloned());
    let curves = theory_curves(&model, &a.curve, SolveMode::for_model(&model))?;

    let mut entries = Vec::new();
    for c in &curves {
        let cv = cross_validation_curve(&data, &c.loss, &a.curve.grid, a.splits, a.test_fraction, a.seed)?;
        if c.unconverged() > 0 {
            out.warnings.push(format!(
                "{}: {} theory points did not converge",
                c.loss,
                c.unconverged()
            ));
            out.numerical_failure = true;
        }
        let rows: Vec<CompareRow> = c
            .points
            .iter()
            .zip(&cv)
            .map(|(t, v)| CompareRow {
                lambda: v.lambda,
                theory: t.order.converged.then_some(t.balanced),
                cv_mean: v.cv_mean,
                cv_se: v.cv_se,
            })
            .collect();
        let stem = format!("compare_{}", file_stem(&c.loss));
        match a.curve.format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["lambda", "theory", "cv_mean", "cv_se"])?;
                for r in &rows {
                    w.write_record([
                        sig6(r.lambda),
                        r.theory.map(sig6).unwrap_or_default(),
                        sig6(r.cv_mean),
                        sig6(r.cv_se),
                    ])?;
                }
                let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
                write_file(&a.curve.out.join(format!("{stem}.csv")), &bytes, &mut out)?;
            }
            Format::Json => write_file(
                &a.curve.out.join(format!("{stem}.json")),
                serde_json::to_string_pretty(&rows)?.as_bytes(),
                &mut out,
            )?,
        }
        let cv_best = cv
            .iter()
            .filter(|v| v.cv_mean.is_finite())
            .max_by(|x, y| x.cv_mean.total_cmp(&y.cv_mean));
        entries.push(CompareEntry {
            loss: c.loss.to_string(),
            theory_lambda_star: c.optimum.map(|o| o.lambda),
            theory_precision_star: c.optimum.map(|o| o.balanced),
            cv_lambda_star: cv_best.map(|v| v.lambda),
            cv_precision_star: cv_best.map(|v| v.cv_mean),
        });
    }
    let pick = |f: fn(&CompareEntry) -> Option<f64>| {
        entries
            .iter()
            .filter_map(|e| f(e).map(|p| (p, &e.loss)))
            .max_by(|x, y| x.0.total_cmp(&y.0))
            .map(|(_, l)| l.clone())
    };
    let summary = CompareSummary {
        grid: a.curve.grid.to_string(),
        splits: a.splits,
        test_fraction: a.test_fraction,
        model,
        best_theory: pick(|e| e.theory_precision_star),
        best_cv: pick(|e| e.cv_precision_star),
        losses: entries,
    };
    write_file(
        &a.curve.out.join("compare_summary.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
        &mut out,
    )?;
    Ok(out)
}
