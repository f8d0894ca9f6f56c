//! Argument handling and exit codes: 0 ok, 1 failed check or computation,
//! 2 usage error, 3 I/O error. Data goes to stdout or `--out`; diagnostics go
//! to stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_engines, parse_list, Settings};
use crate::io::{convert, load_matrix, Format, MatrixIoError};
use crate::verify::{run_suite, Suite};
use crate::{dist, sweep};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "sbattn",
    version,
    about = "Attention kernel benchmarks and checks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Default, Args)]
struct Common {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated, strictly increasing.
    #[arg(long)]
    thresholds: Option<String>,
    #[arg(long)]
    eps0: Option<f64>,
    /// Comma-separated subset of exact, as23, support_basis, multi_threshold.
    #[arg(long)]
    engines: Option<String>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
    /// Worker threads inside the engines.
    #[arg(long)]
    threads: Option<usize>,
    /// `key = value` file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Time and error of each engine across thresholds, as CSV.
    Sweep(Common),
    /// Histogram of matrix entries, as CSV with a trailer line.
    Dist {
        /// Matrix file; without it a Gaussian matrix is generated from --n --d --sigma --seed.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Runs the invariant checks; exits 1 if any fails.
    Verify {
        #[arg(default_value = "fast")]
        suite: Suite,
        #[command(flatten)]
        common: Common,
    },
    /// Converts between text and binary matrix files.
    Convert {
        input: PathBuf,
        output: PathBuf,
        /// Output format; defaults to binary for a `.bin` output, else text.
        #[arg(long)]
        format: Option<Format>,
    },
}

#[derive(Debug)]
pub enum Failure {
    Check(String),
    Usage(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Check(_) => EXIT_CHECK,
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Io(_) => EXIT_IO,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Check(m) | Failure::Usage(m) | Failure::Io(m) => f.write_str(m),
        }
    }
}

fn io_fail(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn matrix_fail(path: &Path, e: MatrixIoError) -> Failure {
    io_fail(path, e)
}

fn settings(c: &Common) -> Result<Settings, Failure> {
    let usage = |e: crate::config::ConfigError| Failure::Usage(e.0);
    let mut s = Settings::from_env().map_err(usage)?;
    if let Some(p) = &c.config {
        let text = std::fs::read_to_string(p).map_err(|e| io_fail(p, e))?;
        s.apply_config_text(&text)
            .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
    }
    if let Some(v) = c.n {
        s.n = v;
    }
    if let Some(v) = c.d {
        s.d = v;
    }
    if let Some(v) = c.sigma {
        s.sigma = v;
    }
    if let Some(v) = c.seed {
        s.seed = v;
    }
    if let Some(v) = &c.thresholds {
        s.thresholds = parse_list("thresholds", v).map_err(usage)?;
    }
    if let Some(v) = c.eps0 {
        s.eps0 = v;
    }
    if let Some(v) = &c.engines {
        s.engines = parse_engines(v).map_err(usage)?;
    }
    if let Some(v) = c.repeats {
        s.repeats = v;
    }
    if let Some(v) = c.bins {
        s.bins = v;
    }
    if let Some(v) = c.threads {
        s.threads = v;
    }
    s.validate().map_err(usage)?;
    Ok(s)
}

/// Opens `--out`, or stdout.
fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_fail(p, e))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn out_name(out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"))
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Usage(format!("cannot start {threads} threads: {e}")))?;
    Ok(pool.install(f))
}

fn compute(e: sbattn::Error) -> Failure {
    Failure::Check(e.to_string())
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Sweep(c) => {
            let s = settings(&c)?;
            let w = output(&c.out)?;
            let rows = with_threads(s.threads, || sweep::run_sweep(&s))?.map_err(compute)?;
            sweep::write_csv(w, &rows).map_err(|e| io_fail(&out_name(&c.out), e))
        }
        Cmd::Dist { input, common } => {
            let s = settings(&common)?;
            let w = output(&common.out)?;
            let m = match &input {
                Some(p) => load_matrix(p).map_err(|e| matrix_fail(p, e))?,
                None => sbattn::sample_subgaussian(s.n, s.d, s.sigma, s.seed).map_err(compute)?,
            };
            let h = dist::histogram(&m, s.bins);
            dist::write_csv(w, &h).map_err(|e| io_fail(&out_name(&common.out), e))
        }
        Cmd::Verify { suite, common } => {
            let s = settings(&common)?;
            let mut w = output(&common.out)?;
            let checks = with_threads(s.threads, || run_suite(suite, s.seed))?;
            for c in &checks {
                writeln!(w, "{c}").map_err(|e| io_fail(&out_name(&common.out), e))?;
            }
            w.flush().map_err(|e| io_fail(&out_name(&common.out), e))?;
            let failed = checks.iter().filter(|c| !c.pass).count();
            if failed > 0 {
                return Err(Failure::Check(format!(
                    "{failed} of {} checks failed",
                    checks.len()
                )));
            }
            Ok(())
        }
        Cmd::Convert {
            input,
            output,
            format,
        } => {
            let format = format.unwrap_or_else(|| Format::from_path(&output));
            convert(&input, &output, format)
                .map(|_| ())
                .map_err(|e| match e {
                    MatrixIoError::Io(err) => Failure::Io(format!("{}: {err}", input.display())),
                    other => matrix_fail(&input, other),
                })
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.cmd) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("sbattn: {f}");
            f.code()
        }
    }
}
