mod dataset;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use qrshape::densities::ModelSpec;
use qrshape::geometry::{extract_shape, helmert_submatrix, ReflectionMode};
use qrshape::inference::{
    evidence_grade, fit_mle, lr_test_equal_mean_shape, FitOptions, FitResult, NullVariance, Sample,
    ShapeModel,
};
use qrshape::simulate::sample_configurations;
use qrshape::verify::{run_suite, Suite};
use qrshape::zonal::SeriesControl;
use qrshape::ShapeError;
use serde_json::{json, Value};

use dataset::{parse_matrix, Dataset, ParseError, Record};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "qrshape", version, about = "QR shape coordinates, elliptical shape densities and inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write per-specimen centroid size, vech W and polar angles as CSV.
    Extract {
        input: PathBuf,
        /// K×K CSV matrix Θ to whiten columns with.
        #[arg(long)]
        theta: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Reflect)]
        mode: Mode,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Maximum-likelihood fit of one model, as JSON.
    Fit {
        input: PathBuf,
        #[arg(long, default_value = "gaussian")]
        model: ShapeModel,
        #[command(flatten)]
        common: FitArgs,
    },
    /// BIC* table and evidence grades for several models.
    Compare {
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "gaussian,kotz2,kotz3")]
        models: Vec<ShapeModel>,
        /// Print JSON instead of the aligned table.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        common: FitArgs,
    },
    /// Likelihood-ratio test of a common mean shape in two groups.
    TestMeanshape {
        input: PathBuf,
        #[arg(long, default_value = "gaussian")]
        model: ShapeModel,
        /// The two group labels to compare (default: the file's two groups).
        #[arg(long, value_delimiter = ',')]
        groups: Option<Vec<String>>,
        #[arg(long, value_enum, default_value_t = NullArg::PerGroup)]
        null: NullArg,
        #[command(flatten)]
        common: FitArgs,
    },
    /// Run self-check suites (all when no --suite is given).
    Verify {
        #[arg(long)]
        suite: Vec<Suite>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Simulate a landmark file from an isotropic model around a template.
    Simulate {
        #[arg(long, default_value_t = 6)]
        landmarks: usize,
        #[arg(long, default_value_t = 2)]
        dims: usize,
        #[arg(long, default_value = "gaussian")]
        model: ShapeModel,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Size of a second group whose template has landmark 1 moved by --shift.
        #[arg(long, default_value_t = 0)]
        second_count: usize,
        #[arg(long, default_value_t = 0.0)]
        shift: f64,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FitArgs {
    /// Restrict to one group label.
    #[arg(long)]
    group: Option<String>,
    #[arg(long, value_enum, default_value_t = Mode::Reflect)]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 120)]
    max_degree: usize,
    #[arg(long, default_value_t = 1e-10)]
    rel_tol: f64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Reflect,
    Noreflect,
}

impl From<Mode> for ReflectionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Reflect => ReflectionMode::IncludesReflection,
            Mode::Noreflect => ReflectionMode::ExcludesReflection,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NullArg {
    PerGroup,
    Pooled,
}

#[derive(Debug)]
enum CliError {
    Io(String),
    Parse(String, ParseError),
    Shape(ShapeError),
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Shape(ShapeError::Numerical(_)) => 1,
            _ => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io(m) | CliError::Usage(m) => f.write_str(m),
            CliError::Parse(path, e) => write!(f, "{path}: {e}"),
            CliError::Shape(e) => write!(f, "{e}"),
        }
    }
}

impl From<ShapeError> for CliError {
    fn from(e: ShapeError) -> Self {
        CliError::Shape(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn read_dataset(path: &Path) -> CliResult<Dataset> {
    Dataset::parse(&read_text(path)?).map_err(|e| CliError::Parse(path.display().to_string(), e))
}

fn emit(output: Option<&Path>, text: &str) -> CliResult<()> {
    match output {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json(output: Option<&Path>, value: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    emit(output, &text)
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl FitArgs {
    fn options(&self) -> CliResult<FitOptions> {
        Ok(FitOptions {
            seed: self.seed,
            restarts: self.restarts,
            series: SeriesControl::new(self.max_degree, self.rel_tol)?,
            ..FitOptions::default()
        })
    }

    fn sample(&self, data: &Dataset, group: Option<&str>) -> CliResult<Sample> {
        let configs = data.configurations(group);
        if configs.is_empty() {
            return Err(CliError::Usage(format!(
                "no specimens in group '{}'",
                group.unwrap_or_default()
            )));
        }
        Ok(Sample::from_configurations(&configs, None, self.mode.into())?)
    }
}

fn fit_json(fit: &FitResult) -> Value {
    json!({
        "model": fit.model,
        "mu": matrix_rows(&fit.mu),
        "sigma2": fit.sigma2,
        "nu": matrix_rows(&fit.nu),
        "loglik": fit.loglik,
        "n_p": fit.n_p,
        "sample_size": fit.sample_size,
        "bic_star": fit.bic_star,
        "converged": fit.converged,
        "optimizer_converged": fit.optimizer_converged,
        "evaluations": fit.evaluations,
        "series": fit.diagnostics,
    })
}

fn cmd_extract(input: &Path, theta: Option<&Path>, mode: Mode, output: Option<&Path>) -> CliResult<u8> {
    let data = read_dataset(input)?;
    let theta = match theta {
        Some(p) => Some(parse_matrix(&read_text(p)?).map_err(|e| CliError::Parse(p.display().to_string(), e))?),
        None => None,
    };
    let mut out = String::new();
    let mut header_written = false;
    for Record { id, group, config } in &data.records {
        let s = extract_shape(config, theta.as_ref(), mode.into())?;
        if !header_written {
            out.push_str("id,group,r");
            (1..=s.vech_w().len()).for_each(|i| write!(out, ",w{i}").unwrap());
            (1..=s.angles().len()).for_each(|i| write!(out, ",u{i}").unwrap());
            out.push('\n');
            header_written = true;
        }
        write!(out, "{id},{group},{}", s.size()).unwrap();
        s.vech_w().iter().chain(s.angles()).for_each(|v| write!(out, ",{v}").unwrap());
        out.push('\n');
    }
    emit(output, &out)?;
    Ok(0)
}

fn cmd_fit(input: &Path, model: ShapeModel, common: &FitArgs) -> CliResult<u8> {
    let data = read_dataset(input)?;
    let sample = common.sample(&data, common.group.as_deref())?;
    let opts = common.options()?;
    let fit = fit_mle(model, &sample, &opts)?;
    emit_json(
        common.output.as_deref(),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "fit",
            "group": common.group,
            "options": opts,
            "fit": fit_json(&fit),
        }),
    )?;
    Ok(if fit.converged { 0 } else { 1 })
}

fn cmd_compare(input: &Path, models: &[ShapeModel], as_json: bool, common: &FitArgs) -> CliResult<u8> {
    if models.is_empty() {
        return Err(CliError::Usage("--models needs at least one model".into()));
    }
    let data = read_dataset(input)?;
    let sample = common.sample(&data, common.group.as_deref())?;
    let opts = common.options()?;
    let mut fits = models
        .iter()
        .map(|&m| fit_mle(m, &sample, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    fits.sort_by(|a, b| a.bic_star.total_cmp(&b.bic_star));
    let best = fits[0].bic_star;
    let mut rows = Vec::new();
    let mut text = format!(
        "{:<10} {:>14} {:>14} {:>10}  {:<12} {}\n",
        "model", "loglik", "BIC*", "delta", "evidence", "converged"
    );
    for f in &fits {
        let delta = f.bic_star - best;
        let grade = evidence_grade(delta)?;
        writeln!(
            text,
            "{:<10} {:>14.4} {:>14.4} {:>10.4}  {:<12} {}",
            f.model.name(),
            f.loglik,
            f.bic_star,
            delta,
            grade.to_string(),
            f.converged
        )
        .unwrap();
        rows.push(json!({
            "model": f.model,
            "bic_star": f.bic_star,
            "delta": delta,
            "evidence": grade.to_string(),
            "fit": fit_json(f),
        }));
    }
    if as_json {
        emit_json(
            common.output.as_deref(),
            &json!({
                "schema_version": SCHEMA_VERSION,
                "command": "compare",
                "group": common.group,
                "sample_size": sample.len(),
                "models": rows,
            }),
        )?;
    } else {
        emit(common.output.as_deref(), &text)?;
    }
    Ok(if fits.iter().all(|f| f.converged) { 0 } else { 1 })
}

fn cmd_test_meanshape(
    input: &Path,
    model: ShapeModel,
    groups: Option<&[String]>,
    null: NullArg,
    common: &FitArgs,
) -> CliResult<u8> {
    let data = read_dataset(input)?;
    let labels = match groups {
        Some(g) => g.to_vec(),
        None => data.groups(),
    };
    if labels.len() != 2 {
        return Err(CliError::Usage(format!(
            "need exactly two groups, found {}: pass --groups a,b",
            labels.len()
        )));
    }
    let s1 = common.sample(&data, Some(&labels[0]))?;
    let s2 = common.sample(&data, Some(&labels[1]))?;
    let null_variance = match null {
        NullArg::PerGroup => NullVariance::PerGroup,
        NullArg::Pooled => NullVariance::Pooled,
    };
    let opts = common.options()?;
    let res = lr_test_equal_mean_shape(&s1, &s2, model, null_variance, &opts)?;
    emit_json(
        common.output.as_deref(),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "test-meanshape",
            "model": model,
            "groups": labels,
            "null_variance": null_variance,
            "statistic": res.statistic,
            "df": res.df,
            "p_value": res.p_value,
            "identifiable_df": res.identifiable_df,
            "null_loglik": res.null_loglik,
            "alt_loglik": res.alt_loglik,
            "null_nu": matrix_rows(&res.null_nu),
            "null_scale_ratio": res.null_scale_ratio,
            "alternatives": [fit_json(&res.alternatives[0]), fit_json(&res.alternatives[1])],
            "converged": res.converged,
        }),
    )?;
    Ok(if res.converged { 0 } else { 1 })
}

fn cmd_verify(suites: &[Suite], seed: u64, as_json: bool) -> CliResult<u8> {
    let suites = if suites.is_empty() { Suite::ALL.to_vec() } else { suites.to_vec() };
    let mut all_passed = true;
    let mut report = Vec::new();
    let mut text = String::new();
    for suite in suites {
        let checks = run_suite(suite, seed)?;
        for c in &checks {
            all_passed &= c.passed;
            writeln!(
                text,
                "{} {suite} {}: value {:.6e}, target {:.6e}, tolerance {:.2e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.target,
                c.tolerance
            )
            .unwrap();
        }
        report.push(json!({ "suite": suite, "checks": checks }));
    }
    if as_json {
        emit_json(
            None,
            &json!({
                "schema_version": SCHEMA_VERSION,
                "command": "verify",
                "seed": seed,
                "passed": all_passed,
                "suites": report,
            }),
        )?;
    } else {
        print!("{text}");
    }
    Ok(if all_passed { 0 } else { 1 })
}

/// Template configuration: a regular polygon in the first two coordinates.
fn template(landmarks: usize, dims: usize) -> DMatrix<f64> {
    DMatrix::from_fn(landmarks, dims, |i, j| {
        let freq = (j / 2 + 1) as f64;
        let phase = if j % 2 == 1 { std::f64::consts::FRAC_PI_2 } else { 0.0 };
        (freq * std::f64::consts::TAU * i as f64 / landmarks as f64 + phase).cos()
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    landmarks: usize,
    dims: usize,
    model: ShapeModel,
    count: usize,
    second_count: usize,
    shift: f64,
    sigma: f64,
    seed: u64,
    output: Option<&Path>,
) -> CliResult<u8> {
    if !(sigma > 0.0) || !shift.is_finite() {
        return Err(CliError::Usage("--sigma must be positive and --shift finite".into()));
    }
    let l = helmert_submatrix(landmarks)?;
    let base = template(landmarks, dims);
    let mut moved = base.clone();
    moved[(0, 0)] += shift;
    let mut records = Vec::new();
    for (group, mean, n, s) in [("a", &base, count, seed), ("b", &moved, second_count, seed.wrapping_add(1))] {
        if n == 0 {
            continue;
        }
        let spec = ModelSpec::isotropic(&l * mean, sigma * sigma, model.generator(), ReflectionMode::IncludesReflection)?;
        for (i, config) in sample_configurations(&spec, n, s)?.into_iter().enumerate() {
            records.push(Record {
                id: format!("{group}{:04}", i + 1),
                group: group.to_string(),
                config,
            });
        }
    }
    let data = Dataset {
        landmarks,
        dims,
        records,
    };
    let header = format!(
        "# simulated: model {model}, sigma {sigma}, seed {seed}, shift {shift}\n"
    );
    emit(output, &(header + &data.to_csv()))?;
    Ok(0)
}

fn run(cli: Cli) -> CliResult<u8> {
    match cli.command {
        Command::Extract {
            input,
            theta,
            mode,
            output,
        } => cmd_extract(&input, theta.as_deref(), mode, output.as_deref()),
        Command::Fit { input, model, common } => cmd_fit(&input, model, &common),
        Command::Compare {
            input,
            models,
            json,
            common,
        } => cmd_compare(&input, &models, json, &common),
        Command::TestMeanshape {
            input,
            model,
            groups,
            null,
            common,
        } => cmd_test_meanshape(&input, model, groups.as_deref(), null, &common),
        Command::Verify { suite, seed, json } => cmd_verify(&suite, seed, json),
        Command::Simulate {
            landmarks,
            dims,
            model,
            count,
            second_count,
            shift,
            sigma,
            seed,
            output,
        } => cmd_simulate(
            landmarks,
            dims,
            model,
            count,
            second_count,
            shift,
            sigma,
            seed,
            output.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
