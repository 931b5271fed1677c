//! Command-line front end. Samples and scores with extrapolated logits
//! `l_O + alpha (l_O - l_W)`, where `l_O` comes from the full prompt and
//! `l_W` from a deliberately weakened variant, to counteract strong local
//! priors that make a model ignore its task description.

mod config;
mod demo;
mod output;

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Args, Parser, Subcommand};

use extrap_core::eval::report::{emit_report, ReportFormat};
use extrap_core::eval::simulate::{simulate_mixture, SimulationConfig, SimulationReport};
use extrap_core::eval::{
    default_alpha_grid, detect_priors_report, run_grid_with_cancel, DetectReport,
    DEFAULT_TASKSET_COUNT,
};
use extrap_core::taskset::{
    generate_strong_local_priors, to_jsonl_with_provenance, TaskSetName,
};
use extrap_core::{CoreError, Result, SplitPrompt, DEFAULT_EPSILON};

use crate::config::Settings;
use crate::output::{comment_header, stamp_json, write_output, TOOL_VERSION};

const EXIT_CONFIG: i32 = 2;
const EXIT_BACKEND: i32 = 3;
const EXIT_INCOMPLETE: i32 = 4;
const DEFAULT_DEMO_ALPHA: f64 = 2.0;

static CANCEL: AtomicBool = AtomicBool::new(false);

#[derive(Parser)]
#[command(
    name = "extrap",
    version,
    term_width = 80,
    about = "Counteract strong local priors by extrapolating next-token logits \
             away from a weakened prompt",
    after_help = "Exit codes: 0 success, 2 configuration or usage error, \
                  3 backend failure, 4 incomplete results."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Show original, weakened and extrapolated next-token logits for one
    /// prompt
    Demo(DemoArgs),
    /// Score tasksets over an (alpha, temperature) grid and report mean
    /// probability of correct completion
    Eval(GridArgs),
    /// Like eval, but defaults to a dense alpha grid and plot-ready
    /// delimited output
    Sweep(GridArgs),
    /// Write the generated strong-local-priors taskset as JSONL
    GenerateDataset(GenerateArgs),
    /// Monte-Carlo check of geometric-mixture inversion under logit noise
    Simulate(SimulateArgs),
    /// Flag instances whose full-prompt and data-only next-token
    /// distributions nearly coincide
    Detect(GridArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct Shared {
    /// TOML config file; flags override its values
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Logit backend
    #[arg(long, value_parser = ["toy", "remote"])]
    backend: Option<String>,
    /// Base URL of an OpenAI-compatible completions endpoint
    #[arg(long, value_name = "URL")]
    base_url: Option<String>,
    /// Model name for remote requests and report labels
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key; the key itself never
    /// appears in configuration or output
    #[arg(long, value_name = "VAR")]
    api_key_env: Option<String>,
    /// Response cache directory for the remote backend
    #[arg(long, value_name = "DIR")]
    cache_dir: Option<PathBuf>,
    /// Single extrapolation strength
    #[arg(long, conflicts_with = "alphas", allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Extrapolation strengths, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alphas: Option<Vec<f64>>,
    /// Single sampling temperature
    #[arg(long, conflicts_with = "temperatures")]
    temperature: Option<f64>,
    /// Sampling temperatures, comma separated
    #[arg(long, value_delimiter = ',')]
    temperatures: Option<Vec<f64>>,
    /// Prompt weakening method
    #[arg(long, value_parser = ["strip", "system"])]
    method: Option<String>,
    /// System prompt for the system weakening method
    #[arg(long, value_name = "TEXT")]
    system_prompt: Option<String>,
    /// Seed for dataset generation and simulation
    #[arg(long)]
    seed: Option<u64>,
    /// Strong-prior detection threshold on total variation distance
    #[arg(long)]
    epsilon: Option<f64>,
    /// Output file; stdout when omitted
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Output format
    #[arg(long, value_parser = ["table-text", "delimited", "structured"])]
    format: Option<String>,
}

impl Shared {
    fn settings(&self) -> Settings {
        Settings {
            backend: self.backend.clone(),
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            api_key_env: self.api_key_env.clone(),
            cache_dir: self.cache_dir.clone(),
            alphas: self
                .alphas
                .clone()
                .or_else(|| self.alpha.map(|a| vec![a])),
            temperatures: self
                .temperatures
                .clone()
                .or_else(|| self.temperature.map(|t| vec![t])),
            method: self.method.clone(),
            system_prompt: self.system_prompt.clone(),
            seed: self.seed,
            epsilon: self.epsilon,
            format: self.format.clone(),
            out: self.out.clone(),
            ..Settings::default()
        }
    }

    /// File settings overridden by flag settings.
    fn resolve(&self) -> Result<Settings> {
        let file = match &self.config {
            Some(path) => config::load_settings(path)?,
            None => Settings::default(),
        };
        Ok(self.settings().or(file))
    }
}

#[derive(Args)]
struct DemoArgs {
    #[command(flatten)]
    shared: Shared,
    /// Full prompt to score
    #[arg(long)]
    prompt: String,
    /// Task description; must be a prefix of the prompt
    #[arg(long, value_name = "TEXT")]
    task_prefix: String,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    shared: Shared,
    /// Taskset to score (repeatable)
    #[arg(long = "taskset", value_name = "NAME")]
    tasksets: Vec<String>,
    /// Dataset file for a taskset, as name=path (repeatable)
    #[arg(long = "taskset-path", value_name = "NAME=PATH")]
    taskset_paths: Vec<String>,
    /// Instance count for the generated strong-local-priors set
    #[arg(long)]
    taskset_count: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    shared: Shared,
    /// Taskset to generate; only strong-local-priors has a generator
    #[arg(long, default_value = "strong-local-priors")]
    taskset: String,
    /// Number of instances before the control is appended
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    shared: Shared,
    /// Vocabulary size of the synthetic distributions
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Mixture weight of the true-continuation component
    #[arg(long)]
    gamma_star: Option<f64>,
    /// Standard deviation of Gaussian noise on the mixture logits
    #[arg(long)]
    sigma: Option<f64>,
    /// Number of Monte-Carlo trials
    #[arg(long)]
    trials: Option<usize>,
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    });
}

fn exit_code(err: &CoreError) -> i32 {
    match err {
        CoreError::BackendUnavailable(_) | CoreError::Protocol { .. } => EXIT_BACKEND,
        CoreError::Step { source, .. } | CoreError::Instance { source, .. } => {
            exit_code(source)
        }
        CoreError::Canceled => EXIT_INCOMPLETE,
        _ => EXIT_CONFIG,
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Demo(args) => cmd_demo(args),
        Command::Eval(args) => cmd_grid(args, GridKind::Eval),
        Command::Sweep(args) => cmd_grid(args, GridKind::Sweep),
        Command::GenerateDataset(args) => cmd_generate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Detect(args) => cmd_detect(args),
    }
}

fn cmd_demo(args: DemoArgs) -> Result<i32> {
    let mut s = args.shared.resolve()?;
    s.backend.get_or_insert_with(|| "toy".to_owned());
    s.method.get_or_insert_with(|| "strip".to_owned());
    let alpha = match s.alphas.as_deref() {
        None => DEFAULT_DEMO_ALPHA,
        Some([a]) => *a,
        Some(_) => {
            return Err(CoreError::invalid_parameter(
                "alphas",
                "demo uses a single alpha; pass --alpha",
            ))
        }
    };
    s.alphas = Some(vec![alpha]);

    let split = demo_split(&args.prompt, &args.task_prefix)?;
    let method = config::weakening_method(&s)?;
    let provider = config::backend_spec(&s)?.build()?;
    let table = demo::render_demo(provider.as_ref(), &split, &method, alpha)?;
    let content = format!("{}{table}", comment_header(&s));
    write_output(s.out.as_deref(), &content)?;
    Ok(0)
}

/// Splits the demo prompt at the stated task prefix; leading whitespace of
/// the remainder becomes the joiner so the weakened prompt starts at the
/// first data character.
fn demo_split(prompt: &str, task_prefix: &str) -> Result<SplitPrompt> {
    let rest = prompt.strip_prefix(task_prefix).ok_or_else(|| {
        CoreError::invalid_parameter("task-prefix", "must be a prefix of the prompt")
    })?;
    let data_start = rest.find(|c: char| !c.is_whitespace()).ok_or_else(|| {
        CoreError::invalid_parameter("prompt", "no data part after the task prefix")
    })?;
    SplitPrompt::new(task_prefix, &rest[..data_start], &rest[data_start..])
}

enum GridKind {
    Eval,
    Sweep,
}

fn cmd_grid(args: GridArgs, kind: GridKind) -> Result<i32> {
    let mut s = grid_settings(&args)?;
    match kind {
        GridKind::Eval => {
            s.alphas.get_or_insert_with(|| vec![0.0, 1.0, 2.0]);
            s.format.get_or_insert_with(|| "table-text".to_owned());
        }
        GridKind::Sweep => {
            s.alphas.get_or_insert_with(default_alpha_grid);
            s.format.get_or_insert_with(|| "delimited".to_owned());
        }
    }
    s.method.get_or_insert_with(|| "strip".to_owned());
    s.temperatures.get_or_insert_with(|| vec![1.0]);
    fill_common_defaults(&mut s);

    let format: ReportFormat = s.format.as_deref().expect("set above").parse()?;
    let cfg = config::eval_config(&s)?;
    cfg.validate()?;

    let _ = ctrlc::set_handler(|| CANCEL.store(true, Ordering::SeqCst));
    let records = run_grid_with_cancel(&cfg, &CANCEL)?;
    let report = emit_report(&records, format)?;
    let content = match format {
        ReportFormat::Structured => stamp_json(&report, &s),
        _ => format!("{}{report}", comment_header(&s)),
    };
    write_output(s.out.as_deref(), &content)?;
    Ok(if records.iter().any(|r| r.incomplete) {
        EXIT_INCOMPLETE
    } else {
        0
    })
}

fn grid_settings(args: &GridArgs) -> Result<Settings> {
    let mut s = args.shared.resolve()?;
    if !args.tasksets.is_empty() {
        s.tasksets = Some(args.tasksets.clone());
    }
    if args.taskset_count.is_some() {
        s.taskset_count = args.taskset_count;
    }
    if !args.taskset_paths.is_empty() {
        let mut map = s.taskset_paths.take().unwrap_or_default();
        for pair in &args.taskset_paths {
            let (name, path) = pair.split_once('=').ok_or_else(|| {
                CoreError::invalid_parameter(
                    "taskset-path",
                    format!("expected name=path, got {pair:?}"),
                )
            })?;
            name.parse::<TaskSetName>()?;
            map.insert(name.to_owned(), PathBuf::from(path));
        }
        s.taskset_paths = Some(map);
    }
    Ok(s)
}

fn fill_common_defaults(s: &mut Settings) {
    s.backend.get_or_insert_with(|| "toy".to_owned());
    s.taskset_count.get_or_insert(DEFAULT_TASKSET_COUNT);
    s.seed.get_or_insert(0);
    s.epsilon.get_or_insert(DEFAULT_EPSILON);
    s.tasksets
        .get_or_insert_with(|| vec![TaskSetName::StrongLocalPriors.as_str().to_owned()]);
}

fn cmd_generate(args: GenerateArgs) -> Result<i32> {
    let mut s = args.shared.resolve()?;
    if args.count.is_some() {
        s.taskset_count = args.count;
    }
    s.taskset_count.get_or_insert(DEFAULT_TASKSET_COUNT);
    s.seed.get_or_insert(0);
    s.tasksets = Some(vec![args.taskset.clone()]);

    let name: TaskSetName = args.taskset.parse()?;
    if name != TaskSetName::StrongLocalPriors {
        return Err(CoreError::invalid_parameter(
            "taskset",
            format!("{name} has no generator; only strong-local-priors can be generated"),
        ));
    }
    let set = generate_strong_local_priors(
        s.seed.expect("set above"),
        s.taskset_count.expect("set above"),
    )?;
    // The destination is not part of the dataset's identity; dropping it
    // keeps the bytes equal no matter where they are written.
    let cfg = serde_json::to_value(Settings {
        out: None,
        ..s.clone()
    })
    .expect("settings serialize");
    let text = to_jsonl_with_provenance(&set, Some(TOOL_VERSION), Some(&cfg))?;
    write_output(s.out.as_deref(), &text)?;
    Ok(0)
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    let mut s = args.shared.resolve()?;
    if args.vocab_size.is_some() {
        s.vocab_size = args.vocab_size;
    }
    if args.gamma_star.is_some() {
        s.gamma_star = args.gamma_star;
    }
    if args.sigma.is_some() {
        s.sigma = args.sigma;
    }
    if args.trials.is_some() {
        s.trials = args.trials;
    }
    let defaults = SimulationConfig::default();
    s.vocab_size.get_or_insert(defaults.vocab_size);
    s.gamma_star.get_or_insert(defaults.gamma_star);
    s.sigma.get_or_insert(defaults.sigma);
    s.trials.get_or_insert(defaults.trials);
    s.seed.get_or_insert(defaults.seed);
    s.alphas.get_or_insert_with(default_alpha_grid);
    s.format.get_or_insert_with(|| "structured".to_owned());

    let cfg = SimulationConfig {
        vocab_size: s.vocab_size.expect("set above"),
        gamma_star: s.gamma_star.expect("set above"),
        alphas: s.alphas.clone().expect("set above"),
        sigma: s.sigma.expect("set above"),
        trials: s.trials.expect("set above"),
        seed: s.seed.expect("set above"),
    };
    let report = simulate_mixture(&cfg)?;
    let format: ReportFormat = s.format.as_deref().expect("set above").parse()?;
    let content = match format {
        ReportFormat::Structured => {
            let doc = serde_json::json!({ "format": "extrap-simulate-v1", "report": report });
            stamp_json(&doc.to_string(), &s)
        }
        ReportFormat::TableText => {
            format!("{}{}", comment_header(&s), simulate_table(&report))
        }
        ReportFormat::Delimited => {
            format!("{}{}", comment_header(&s), simulate_delimited(&report))
        }
    };
    write_output(s.out.as_deref(), &content)?;
    Ok(0)
}

fn simulate_table(report: &SimulationReport) -> String {
    let mut out = format!(
        "alpha_star: {}\nalpha_hat: {}\n\n{:>8}  {:>12}  {:>12}  {:>10}\n",
        report.alpha_star, report.alpha_hat, "alpha", "mean_tv", "max_tv", "best_count"
    );
    for o in &report.outcomes {
        let marker = if o.alpha == report.alpha_hat { "*" } else { "" };
        out.push_str(&format!(
            "{:>8}  {:>12.6}  {:>12.6}  {:>10}{marker}\n",
            o.alpha, o.mean_tv, o.max_tv, o.best_count
        ));
    }
    out
}

fn simulate_delimited(report: &SimulationReport) -> String {
    let mut out = "alpha,mean_tv,max_tv,best_count\n".to_owned();
    for o in &report.outcomes {
        out.push_str(&format!(
            "{},{},{},{}\n",
            o.alpha, o.mean_tv, o.max_tv, o.best_count
        ));
    }
    out
}

fn cmd_detect(args: GridArgs) -> Result<i32> {
    let mut s = grid_settings(&args)?;
    s.format.get_or_insert_with(|| "table-text".to_owned());
    fill_common_defaults(&mut s);

    let format: ReportFormat = s.format.as_deref().expect("set above").parse()?;
    let cfg = config::eval_config(&s)?;
    cfg.validate()?;
    let provider = cfg.backend.build()?;
    let sets = cfg.resolve_tasksets()?;
    let mut reports = Vec::new();
    for set in &sets {
        reports.push(detect_priors_report(provider.as_ref(), set, cfg.epsilon)?);
    }
    let content = match format {
        ReportFormat::Structured => {
            let doc = serde_json::json!({ "format": "extrap-detect-v1", "reports": reports });
            stamp_json(&doc.to_string(), &s)
        }
        ReportFormat::TableText => {
            format!("{}{}", comment_header(&s), detect_table(&reports))
        }
        ReportFormat::Delimited => {
            format!("{}{}", comment_header(&s), detect_delimited(&reports))
        }
    };
    write_output(s.out.as_deref(), &content)?;
    Ok(0)
}

fn detect_table(reports: &[DetectReport]) -> String {
    let mut out = String::new();
    for report in reports {
        let flagged = report.records.iter().filter(|r| r.is_strong).count();
        out.push_str(&format!(
            "taskset: {}  model: {}  epsilon: {}  flagged: {}/{} ({:.4})\n",
            report.taskset,
            report.model,
            report.epsilon,
            flagged,
            report.records.len(),
            report.fraction_flagged
        ));
        let width = report
            .records
            .iter()
            .map(|r| r.id.len())
            .chain(["id".len()])
            .max()
            .unwrap_or(2);
        out.push_str(&format!("{:<width$}  {:>10}  strong\n", "id", "delta"));
        for record in &report.records {
            out.push_str(&format!(
                "{:<width$}  {:>10.6}  {}\n",
                record.id,
                record.delta,
                if record.is_strong { "yes" } else { "no" }
            ));
        }
        out.push('\n');
    }
    out
}

fn detect_delimited(reports: &[DetectReport]) -> String {
    let mut out = "taskset,id,delta,is_strong\n".to_owned();
    for report in reports {
        for record in &report.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                report.taskset, record.id, record.delta, record.is_strong
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_split_moves_whitespace_into_the_joiner() {
        let split = demo_split("Task: do it. Output: A", "Task: do it.").unwrap();
        assert_eq!(split.task, "Task: do it.");
        assert_eq!(split.joiner, " ");
        assert_eq!(split.data, "Output: A");
        assert_eq!(split.reconstruct(), "Task: do it. Output: A");
    }

    #[test]
    fn demo_split_rejects_non_prefixes() {
        assert!(demo_split("Task: do it. Output: A", "Other").is_err());
        assert!(demo_split("Task: do it. ", "Task: do it.").is_err());
    }

    #[test]
    fn backend_and_protocol_errors_map_to_the_backend_exit_code() {
        assert_eq!(
            exit_code(&CoreError::BackendUnavailable("x".to_owned())),
            EXIT_BACKEND
        );
        let wrapped = CoreError::for_instance("i")(CoreError::Protocol {
            message: "bad".to_owned(),
            payload: String::new(),
        });
        assert_eq!(exit_code(&wrapped), EXIT_BACKEND);
        assert_eq!(
            exit_code(&CoreError::EmptyInput("records")),
            EXIT_CONFIG
        );
        assert_eq!(exit_code(&CoreError::Canceled), EXIT_INCOMPLETE);
    }
}
