use clap::{Args, Parser, Subcommand};
use msfem::config::{parse_method, RunConfig};
use msfem::online::MethodSpec;
use msfem::runner::{self, BasisTarget, RunSummary};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "msfem", version, about = "MsFEM experiments for advection-diffusion problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key-value configuration file.
    config: PathBuf,
    /// CSV destination; overrides `output`. Without either the CSV goes to stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Worker threads; overrides `workers` (the MSFEM_WORKERS variable still wins).
    #[arg(short, long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> msfem::Result<RunConfig> {
        let mut c = RunConfig::from_file(&self.config)?;
        if let Some(o) = &self.output {
            c.output = Some(o.clone());
        }
        if let Some(w) = self.workers {
            c.workers = w;
        }
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve every configured method at the first alpha.
    Run(Common),
    /// Solve every configured method at every alpha of the list.
    Sweep(Common),
    /// Write local basis functions, correctors and bubbles at the first alpha.
    DumpBasis {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with_all = ["face", "vertex"])]
        element: Option<usize>,
        #[arg(long, conflicts_with = "vertex")]
        face: Option<usize>,
        #[arg(long)]
        vertex: Option<usize>,
        /// Output directory.
        #[arg(long, default_value = "basis")]
        dir: PathBuf,
    },
    /// Write reconstruction, P1 part and reference of one method at the first alpha.
    DumpField {
        #[command(flatten)]
        common: Common,
        /// Method name, optionally suffixed with `:nonintrusive`.
        #[arg(long)]
        method: String,
        #[arg(long, default_value = "field.txt")]
        out: PathBuf,
    },
    /// Run the acceptance suite on one worker.
    Verify,
}

fn write_csv(config: &RunConfig, summary: &RunSummary) -> msfem::Result<()> {
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    match &config.output {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, summary.csv())?;
            eprintln!("wrote {} rows to {}", summary.rows.len(), p.display());
        }
        None => print!("{}", summary.csv()),
    }
    Ok(())
}

fn solve(mut config: RunConfig, single: bool) -> msfem::Result<ExitCode> {
    if single {
        config.alphas.truncate(1);
    }
    let summary = runner::run(&config)?;
    write_csv(&config, &summary)?;
    let singular = summary.singular_count();
    if singular > 0 && !config.allow_singular {
        eprintln!("error: {singular} solve(s) hit a singular system (set allow_singular = true to accept)");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn verify() -> msfem::Result<ExitCode> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| msfem::MsfemError::InvalidInput(e.to_string()))?;
    let outcomes = pool.install(msfem::acceptance::run_all);
    let mut failed = 0;
    for o in &outcomes {
        println!("{}", o.line());
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn dispatch(cli: Cli) -> msfem::Result<ExitCode> {
    match cli.command {
        Command::Run(c) => solve(c.load()?, true),
        Command::Sweep(c) => solve(c.load()?, false),
        Command::DumpBasis { common, element, face, vertex, dir } => {
            let target = match (element, face, vertex) {
                (Some(k), _, _) => BasisTarget::Element(k),
                (_, Some(f), _) => BasisTarget::Face(f),
                (_, _, Some(v)) => BasisTarget::Vertex(v),
                _ => return Err(msfem::MsfemError::InvalidInput("pass one of --element, --face, --vertex".into())),
            };
            for p in runner::dump_basis(&common.load()?, target, &dir)? {
                println!("{}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::DumpField { common, method, out } => {
            let config = common.load()?;
            let spec = parse_method(&method).map_err(msfem::MsfemError::InvalidInput)?;
            let spec = MethodSpec { form: config.form, ..spec }.validated()?;
            runner::dump_field(&config, spec, &out)?;
            println!("{}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify => verify(),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
