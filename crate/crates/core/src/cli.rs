//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, out-of-range
//! values), 2 on data errors (unreadable or malformed files).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attack::{capture_targets, run_attack, TargetBatch};
use crate::bounds::{
    distinct_probability, mc_distinctness, mc_hit_rate, prop1_eval, prop2_eval, prop2_threshold_t,
    BoundsError,
};
use crate::cipher::{
    default_x0, CipherId, CipherSpec, KeyValue, Plaintext, DEFAULT_FEISTEL_ROUNDS,
};
use crate::dictionary::{enumerate_keys, Dictionary, KeyMode};
use crate::parallel::{default_workers, with_workers};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

fn usage(field: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{field}: {e}"))
}

fn data(what: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", what.display()))
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "keycoll",
    version,
    about = "Key-collision dictionary attack workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Precompute a dictionary file.
    Build(BuildArgs),
    /// Write a target file of captured fingerprints.
    Capture(CaptureArgs),
    /// Recover keys for a target file.
    Attack(AttackArgs),
    /// Evaluate probability bounds and Monte Carlo checks.
    Verify(VerifyArgs),
    /// Print a dictionary header.
    Info(InfoArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CipherArg {
    Ideal,
    Feistel,
    Trunc,
}

impl From<CipherArg> for CipherId {
    fn from(c: CipherArg) -> Self {
        match c {
            CipherArg::Ideal => CipherId::Ideal,
            CipherArg::Feistel => CipherId::FeistelToy,
            CipherArg::Trunc => CipherId::Trunc,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KeysArg {
    Seq,
    Sample,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SourceArg {
    /// Independent uniform keys from the whole key space.
    Uniform,
    /// Distinct keys drawn from the dictionary itself.
    Dict,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CheckArg {
    Prop1,
    Prop2,
    Mc,
}

#[derive(Debug, Args)]
struct CipherArgs {
    #[arg(long, value_enum)]
    cipher: Option<CipherArg>,
    /// Feistel round count or trunc collapse width.
    #[arg(long)]
    param: Option<u8>,
    /// Key width in bits.
    #[arg(long)]
    n: Option<u32>,
    /// Chosen plaintext override, hex.
    #[arg(long)]
    x0: Option<String>,
}

impl CipherArgs {
    fn given(&self) -> bool {
        self.cipher.is_some() || self.param.is_some() || self.n.is_some() || self.x0.is_some()
    }

    fn resolve(&self) -> CliResult<(CipherSpec, Plaintext)> {
        let cipher = self.cipher.ok_or_else(|| usage("--cipher", "required"))?;
        let n = self.n.ok_or_else(|| usage("--n", "required"))?;
        let id = CipherId::from(cipher);
        let param = match (id, self.param) {
            (_, Some(p)) => p,
            (CipherId::FeistelToy, None) => DEFAULT_FEISTEL_ROUNDS,
            (CipherId::Trunc, None) => return Err(usage("--param", "required for trunc")),
            (CipherId::Ideal, None) => 0,
        };
        let spec = CipherSpec::new(id, n, param).map_err(|e| usage("--cipher/--param/--n", e))?;
        let x0 = match &self.x0 {
            Some(hex) => {
                Plaintext::from_hex(hex, spec.block_bits()).map_err(|e| usage("--x0", e))?
            }
            None => default_x0(n),
        };
        Ok((spec, x0))
    }
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[command(flatten)]
    cipher: CipherArgs,
    /// Dictionary holds 2^m keys.
    #[arg(long)]
    m: u32,
    #[arg(long, value_enum, default_value = "sample")]
    keys: KeysArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CaptureArgs {
    /// Take cipher, width and plaintext from this dictionary.
    #[arg(long)]
    dict: Option<PathBuf>,
    #[command(flatten)]
    cipher: CipherArgs,
    /// Capture 2^t targets.
    #[arg(long)]
    t: Option<u32>,
    /// Capture exactly this many targets (overrides --t).
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_enum, default_value = "uniform")]
    source: SourceArg,
    /// Write the ground-truth key column.
    #[arg(long)]
    truth: bool,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AttackArgs {
    #[arg(long)]
    dict: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(value_enum)]
    check: CheckArg,
    #[arg(long)]
    n: u32,
    /// Dictionary size exponent; prop1 sweeps every m when omitted.
    #[arg(long)]
    m: Option<u32>,
    /// Target count exponent; mc runs the hit-rate check when given.
    #[arg(long)]
    t: Option<u32>,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct InfoArgs {
    #[arg(long)]
    dict: PathBuf,
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run_cli<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if code == EXIT_OK {
                let _ = out.write_all(rendered.as_bytes());
            } else {
                let _ = err.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Build(args) => cmd_build(args, out),
        Command::Capture(args) => cmd_capture(args, out),
        Command::Attack(args) => cmd_attack(args, out),
        Command::Verify(args) => cmd_verify(args, out),
        Command::Info(args) => cmd_info(args, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

fn io_out(e: std::io::Error) -> CliError {
    CliError::Data(format!("output: {e}"))
}

fn read_dict(path: &Path) -> CliResult<Dictionary> {
    Dictionary::read_file(path).map_err(|e| data(path, e))
}

fn write_text(path: Option<&Path>, text: &str, out: &mut dyn Write) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| data(p, e)),
        None => out.write_all(text.as_bytes()).map_err(io_out),
    }
}

fn cmd_build(args: BuildArgs, out: &mut dyn Write) -> CliResult<()> {
    let (spec, x0) = args.cipher.resolve()?;
    if args.m > spec.key_bits() {
        return Err(usage(
            "--m",
            format!("{} exceeds --n {}", args.m, spec.key_bits()),
        ));
    }
    let mode = match args.keys {
        KeysArg::Seq => KeyMode::Sequential,
        KeysArg::Sample => KeyMode::Sampled,
    };
    let seed = match (mode, args.seed) {
        (KeyMode::Sampled, None) => return Err(usage("--seed", "required for --keys sample")),
        (_, s) => s.unwrap_or(0),
    };
    if args.workers == Some(0) {
        return Err(usage("--workers", "must be positive"));
    }
    let workers = args.workers.unwrap_or_else(default_workers);
    let keys = enumerate_keys(mode, spec.key_bits(), args.m, seed).map_err(|e| usage("--m", e))?;
    let dict = Dictionary::build_with_workers(spec, &keys, x0, workers)
        .map_err(|e| CliError::Data(format!("build: {e}")))?;
    let bytes = dict
        .to_bytes()
        .map_err(|e| CliError::Data(format!("serialize: {e}")))?;
    std::fs::write(&args.out, bytes).map_err(|e| data(&args.out, e))?;
    writeln!(
        out,
        "built path={} {} entry_count={} total_keys={} max_entry_size={}",
        args.out.display(),
        header_fields(&dict),
        dict.entry_count(),
        dict.total_keys(),
        dict.max_entry_size()
    )
    .map_err(io_out)
}

fn header_fields(dict: &Dictionary) -> String {
    let spec = dict.spec();
    format!(
        "cipher={} cipher_id={} param={} n={} x0={}",
        spec.id(),
        spec.id().code(),
        spec.param(),
        spec.key_bits(),
        dict.x0().to_hex()
    )
}

fn cmd_capture(args: CaptureArgs, out: &mut dyn Write) -> CliResult<()> {
    let dict = match &args.dict {
        Some(path) => {
            if args.cipher.given() {
                return Err(usage("--dict", "conflicts with --cipher/--param/--n/--x0"));
            }
            Some(read_dict(path)?)
        }
        None => None,
    };
    let (spec, x0) = match &dict {
        Some(d) => (*d.spec(), d.x0().clone()),
        None => args.cipher.resolve()?,
    };
    let count = match (args.count, args.t) {
        (Some(c), _) => c,
        (None, Some(t)) if t <= 24 => 1usize << t,
        (None, Some(t)) => return Err(usage("--t", format!("{t} exceeds 24"))),
        (None, None) => return Err(usage("--t", "one of --t or --count is required")),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let keys: Vec<KeyValue> = match args.source {
        SourceArg::Uniform => (0..count)
            .map(|_| KeyValue(rng.gen_range(0..spec.key_space()) as u32))
            .collect(),
        SourceArg::Dict => {
            let d = dict
                .as_ref()
                .ok_or_else(|| usage("--source", "dict requires --dict"))?;
            let pool: Vec<KeyValue> = d.keys().collect();
            if count > pool.len() {
                return Err(usage(
                    "--count",
                    format!("{count} exceeds the {} keys in the dictionary", pool.len()),
                ));
            }
            rand::seq::index::sample(&mut rng, pool.len(), count)
                .into_iter()
                .map(|i| pool[i])
                .collect()
        }
    };
    let batch = capture_targets(&spec, &x0, &keys).map_err(|e| CliError::Data(e.to_string()))?;
    let batch = if args.truth {
        batch
    } else {
        batch.without_truth()
    };
    write_text(args.out.as_deref(), &batch.to_text(&spec), out)
}

fn cmd_attack(args: AttackArgs, out: &mut dyn Write) -> CliResult<()> {
    if args.workers == Some(0) {
        return Err(usage("--workers", "must be positive"));
    }
    let dict = read_dict(&args.dict)?;
    let text = std::fs::read_to_string(&args.targets).map_err(|e| data(&args.targets, e))?;
    let batch = TargetBatch::parse(&text, dict.spec()).map_err(|e| data(&args.targets, e))?;
    let report = with_workers(args.workers, || run_attack(&dict, &batch))
        .map_err(|e| CliError::Data(e.to_string()))?;
    write_text(
        args.out.as_deref(),
        &report.to_text(dict.spec().key_bits()),
        out,
    )
}

fn cmd_info(args: InfoArgs, out: &mut dyn Write) -> CliResult<()> {
    let dict = read_dict(&args.dict)?;
    writeln!(
        out,
        "{} entry_count={} total_keys={} max_entry_size={}",
        header_fields(&dict),
        dict.entry_count(),
        dict.total_keys(),
        dict.max_entry_size()
    )
    .map_err(io_out)
}

fn bounds_usage(e: BoundsError) -> CliError {
    match e {
        BoundsError::Range { field, .. } => usage(&format!("--{}", field.to_lowercase()), e),
        other => CliError::Data(other.to_string()),
    }
}

/// Fixed-width text table.
fn write_table(out: &mut dyn Write, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    writeln!(out)?;
    writeln!(out, "{}", line(header.to_vec()))?;
    writeln!(
        out,
        "{}",
        "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
    )?;
    for r in rows {
        writeln!(out, "{}", line(r.iter().map(String::as_str).collect()))?;
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs, out: &mut dyn Write) -> CliResult<()> {
    if args.workers == Some(0) {
        return Err(usage("--workers", "must be positive"));
    }
    match args.check {
        CheckArg::Prop1 => {
            let ms: Vec<u32> = match args.m {
                Some(m) => vec![m],
                None => (0..=args.n.min(32)).collect(),
            };
            let mut rows = Vec::new();
            for m in ms {
                if m > args.n {
                    return Err(usage("--m", format!("{m} exceeds --n {}", args.n)));
                }
                let r = prop1_eval(args.n, 1u64 << m).map_err(bounds_usage)?;
                writeln!(out, "{}", r.record()).map_err(io_out)?;
                rows.push(vec![
                    format!("2^{m}"),
                    format!("{:.3e}", r.collision_exact),
                    format!("{:.12}", r.p_exact),
                    format!("{:.12}", r.p_exp_bound),
                    format!("{:.12}", r.p_poly_bound),
                    format!("{:.12}", r.p_final_bound),
                    r.chain_holds().to_string(),
                ]);
            }
            write_table(
                out,
                &["N", "1-p", "p_exact", "p_exp", "p_poly", "1-2^-n", "chain"],
                &rows,
            )
            .map_err(io_out)
        }
        CheckArg::Prop2 => {
            let m = args.m.ok_or_else(|| usage("--m", "required for prop2"))?;
            let t = args.t.unwrap_or_else(|| prop2_threshold_t(args.n, m));
            let r = prop2_eval(args.n, m, t).map_err(bounds_usage)?;
            writeln!(out, "{}", r.record()).map_err(io_out)?;
            write_table(
                out,
                &[
                    "n",
                    "m",
                    "t",
                    "1-(1-2^(m-n))^(2^t)",
                    "1-exp(-2^(t+m-n))",
                    ">=0.98",
                ],
                &[vec![
                    r.n.to_string(),
                    r.m.to_string(),
                    r.t.to_string(),
                    format!("{:.6}", r.p_hat_exact_bound),
                    format!("{:.6}", r.p_hat_exp_bound),
                    (r.p_hat_exp_bound >= 0.98).to_string(),
                ]],
            )
            .map_err(io_out)
        }
        CheckArg::Mc => {
            let seed = args
                .seed
                .ok_or_else(|| usage("--seed", "required for mc"))?;
            let m = args.m.ok_or_else(|| usage("--m", "required for mc"))?;
            let (name, est, expected) = match args.t {
                None => {
                    if m > 30 {
                        return Err(usage("--m", "must be at most 30"));
                    }
                    let count = 1u64 << m;
                    let est = with_workers(args.workers, || {
                        mc_distinctness(args.n, count, args.trials, seed)
                    })
                    .map_err(bounds_usage)?;
                    (
                        "mc_distinctness",
                        est,
                        distinct_probability(3 * args.n, count),
                    )
                }
                Some(t) => {
                    let est = with_workers(args.workers, || {
                        mc_hit_rate(args.n, m, t, args.trials, seed)
                    })
                    .map_err(bounds_usage)?;
                    let closed = prop2_eval(args.n, m, t).map_err(bounds_usage)?;
                    ("mc_hit_rate", est, closed.p_hat_exact_bound)
                }
            };
            writeln!(
                out,
                "{} n={} m={} t={}",
                est.record(name, expected),
                args.n,
                m,
                args.t.map_or_else(|| "-".to_string(), |t| t.to_string())
            )
            .map_err(io_out)?;
            write_table(
                out,
                &["check", "trials", "estimate", "stderr", "closed_form", "z"],
                &[vec![
                    name.to_string(),
                    est.trials.to_string(),
                    format!("{:.6}", est.estimate),
                    format!("{:.6}", est.stderr),
                    format!("{expected:.6}"),
                    format!("{:.3}", est.z_score(expected)),
                ]],
            )
            .map_err(io_out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("keycoll").chain(args.iter().copied());
        let code = run_cli(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(run(&["build", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(run(&[]).0, EXIT_USAGE);
        let (code, _, err) = run(&["verify", "prop2", "--n", "8", "--m", "9"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--m"), "{err}");
        let (code, _, err) = run(&["verify", "mc", "--n", "4", "--m", "2"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--seed"));
    }

    #[test]
    fn help_exits_0() {
        let (code, out, _) = run(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("build"));
    }

    #[test]
    fn prop2_threshold_output() {
        let (code, out, _) = run(&["verify", "prop2", "--n", "20", "--m", "10", "--t", "12"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("p_hat_exp_bound=0.98168436111126"), "{out}");
        assert!(out.contains("0.981684"));
    }

    #[test]
    fn missing_dict_is_data_error() {
        let (code, _, err) = run(&["info", "--dict", "/nonexistent/file.kdt"]);
        assert_eq!(code, EXIT_DATA);
        assert!(err.contains("/nonexistent/file.kdt"));
    }
}
