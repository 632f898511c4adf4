//! `calpost`: calibration metrics, post-processing and bound checks.
//!
//! Exit codes: 0 success, 1 verification failure, 2 input error, 3 internal
//! numeric error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use calpost::adversary::{make_batch_lb, make_online_lb};
use calpost::experiments::{run_sweep, ExperimentConfig, ModeKind, SweepKind};
use calpost::io::{fmt_num, open_input, read_coupling, read_samples, round_json, write_coupling, write_joint, write_sequence};
use calpost::metrics::{cdl_lp, cdl_vshape, decision_loss, dist, ece, metrics_report, DEFAULT_DTC_GRID};
use calpost::model::{EmpiricalJoint, GridSpec, Side};
use calpost::postprocess::{batch_apply, sequence_joint, BatchMode, OnlineState, DEFAULT_BINS};
use calpost::verify::{all_passed, run_suite, Status, Suite, VerifyOptions};
use calpost::{Error, Exec, NoiseMechanism};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(name = "calpost", version, about = "Calibration metrics and privacy-based post-processing")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Suppress progress and diagnostics on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Cmd {
    /// Calibration metrics of a prediction file.
    ///
    /// INPUT has rows `prediction,state[,weight]` with an optional header;
    /// `-` reads stdin. With --coupling FILE (rows `q,b,state,mass`), also
    /// reports `dist` and `decision_loss` of q against b; without INPUT the
    /// metrics are those of the coupling's q side.
    Metrics(MetricsArgs),
    /// Post-process predictions with a noise mechanism.
    ///
    /// Batch, --mode mc: every row gets an independent draw `p ~ M(q)` and is
    /// written back as `prediction,state,p`. Batch, --mode analytic: writes
    /// the output distribution as `p,weight,posterior` rows on --bins cells.
    /// --online: rows are rounds; each draw is floored onto the grid
    /// {i/m}, m = ceil(T^(1/3)).
    ///
    /// Mechanisms: point, laplace:eps=E, laplace:tau=T, gauss:eps=E[:variant=lemma|improved],
    /// gauss:sigma=S.
    Postprocess(PostprocessArgs),
    /// Write lower-bound instances.
    ///
    /// batch_coupling.csv has rows `q,b,state,mass`. With --horizon T,
    /// online_seq1.csv and online_seq2.csv have 2T rows `q,state`.
    Adversary(AdversaryArgs),
    /// Run a bound verification sweep; exit 1 if any row fails.
    ///
    /// --config takes a JSON object with any of: kind (batch|online),
    /// eps_list, mech_spec (point|laplace|gauss|gauss:variant=improved),
    /// mode (analytic|mc), trials, seed, horizon, bins, dl_bins, samples,
    /// exec (sequential|parallel). Flags override the file.
    Experiment(ExperimentArgs),
    /// Run the self-check suite; exit 1 naming any failed check.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct MetricsArgs {
    input: Option<String>,
    /// DTC grid cells.
    #[arg(long, default_value_t = DEFAULT_DTC_GRID)]
    grid: usize,
    #[arg(long)]
    coupling: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Analytic,
    Mc,
}

#[derive(Args)]
struct PostprocessArgs {
    input: String,
    #[arg(long)]
    mech: String,
    #[arg(long, value_enum, default_value_t = Mode::Mc)]
    mode: Mode,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long)]
    online: bool,
    /// Online horizon; defaults to the number of rows.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args)]
struct AdversaryArgs {
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<String>,
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    /// Comma-separated budgets.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long)]
    mech: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    dl_bins: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    sequential: bool,
    /// Also write report.csv and report.json here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Batch,
    Online,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::Quick)]
    suite: SuiteArg,
    #[arg(long, hide = true)]
    inject_dp_fault: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SuiteArg {
    Quick,
    Full,
}

enum Failure {
    Verification(String),
    Input(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Lp(_) | Error::HorizonExceeded(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Input(format!("{}: {e}", path.display()))
}

fn emit(out: &mut dyn Write, format: Format, fields: &Map<String, Value>) -> CliResult<()> {
    let res = match format {
        Format::Json => writeln!(out, "{}", round_json(Value::Object(fields.clone()))),
        Format::Csv => {
            let keys: Vec<&str> = fields.keys().map(String::as_str).collect();
            let vals: Vec<String> = fields
                .values()
                .map(|v| match v {
                    Value::Number(n) => n.as_f64().map_or_else(|| n.to_string(), fmt_num),
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect();
            writeln!(out, "{}\n{}", keys.join(","), vals.join(","))
        }
    };
    res.map_err(|e| Failure::Input(format!("stdout: {e}")))
}

fn cmd_metrics(cli: &Cli, a: &MetricsArgs, out: &mut dyn Write) -> CliResult<()> {
    let grid = GridSpec::new(a.grid)?;
    let coupling = a.coupling.as_deref().map(|p| read_coupling(open_input(p)?)).transpose()?;
    let joint = match (&a.input, &coupling) {
        (Some(p), _) => EmpiricalJoint::from_samples(&read_samples(open_input(p)?)?)?,
        (None, Some(c)) => c.marginal(Side::Q),
        (None, None) => return Err(Failure::Input("need an input file or --coupling".into())),
    };
    let report = metrics_report(&joint, &grid)?;
    let Value::Object(mut fields) = serde_json::to_value(report).expect("report serializes") else {
        unreachable!()
    };
    if let Some(c) = &coupling {
        fields.insert("dist".into(), json!(dist(c)));
        fields.insert("decision_loss".into(), json!(decision_loss(c)?));
    }
    emit(out, cli.format, &fields)
}

fn cmd_postprocess(cli: &Cli, a: &PostprocessArgs, out: &mut dyn Write) -> CliResult<()> {
    let mech: NoiseMechanism = a.mech.parse()?;
    let samples = read_samples(open_input(&a.input)?)?;
    let seed = cli.seed.unwrap_or(0);
    let w = |e: std::io::Error| Failure::Input(format!("stdout: {e}"));
    let metrics = |j: &EmpiricalJoint| -> CliResult<Map<String, Value>> {
        let mut m = Map::new();
        m.insert("ece".into(), json!(ece(j)));
        m.insert("cdl_vshape".into(), json!(cdl_vshape(j).0));
        m.insert("cdl_lp".into(), json!(cdl_lp(j)?));
        Ok(m)
    };
    if !a.online && a.mode == Mode::Analytic {
        let joint = EmpiricalJoint::from_samples(&samples)?;
        let pushed = batch_apply(&mech, &joint, BatchMode::Analytic { bins: a.bins })?;
        return match cli.format {
            Format::Csv => write_joint(out, &pushed).map_err(Failure::from),
            Format::Json => {
                let mut m = metrics(&pushed)?;
                let rows: Vec<Value> = pushed.iter().map(|(p, wt, post)| json!([p, wt, post])).collect();
                m.insert("joint".into(), Value::Array(rows));
                emit(out, cli.format, &m)
            }
        };
    }
    let ps: Vec<f64> = if a.online {
        let mut st = OnlineState::new(mech, a.horizon.unwrap_or(samples.len()), seed)?;
        samples.iter().map(|s| st.step(s.prediction)).collect::<Result<_, _>>()?
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        samples.iter().map(|s| mech.sample(s.prediction, &mut rng)).collect()
    };
    match cli.format {
        Format::Csv => {
            writeln!(out, "prediction,state,p").map_err(w)?;
            for (s, p) in samples.iter().zip(&ps) {
                writeln!(out, "{},{},{p}", s.prediction, s.state).map_err(w)?;
            }
            Ok(())
        }
        Format::Json => {
            let thetas: Vec<u8> = samples.iter().map(|s| s.state).collect();
            let mut m = metrics(&sequence_joint(&ps, &thetas)?)?;
            m.insert("p".into(), json!(ps));
            emit(out, cli.format, &m)
        }
    }
}

fn cmd_adversary(cli: &Cli, a: &AdversaryArgs, out: &mut dyn Write) -> CliResult<()> {
    let inst = make_batch_lb(a.eps)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
    let write_file = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> calpost::Result<()>| -> CliResult<String> {
        let path = a.out_dir.join(name);
        let mut buf = Vec::new();
        f(&mut buf)?;
        fs::write(&path, buf).map_err(|e| io_err(&path, e))?;
        Ok(path.display().to_string())
    };
    let mut fields = Map::new();
    fields.insert("eps".into(), json!(a.eps));
    fields.insert("dist".into(), json!(dist(&inst.coupling)));
    fields.insert("batch_coupling".into(), json!(write_file("batch_coupling.csv", &|b| write_coupling(b, &inst.coupling))?));
    if let Some(t) = a.horizon {
        let pair = make_online_lb(t, a.eps, cli.seed.unwrap_or(0))?;
        let ones = |v: &[u8]| v.iter().map(|&x| x as u64).sum::<u64>();
        fields.insert("online_seq1".into(), json!(write_file("online_seq1.csv", &|b| write_sequence(b, &pair.seq_q, &pair.seq_theta))?));
        fields.insert("online_seq2".into(), json!(write_file("online_seq2.csv", &|b| write_sequence(b, &pair.seq_q2, &pair.seq_theta2))?));
        fields.insert("ones_block1".into(), json!(ones(&pair.seq_theta[..t])));
        fields.insert("ones_block2".into(), json!(ones(&pair.seq_theta[t..])));
        fields.insert("ones_seq2".into(), json!(ones(&pair.seq_theta2)));
    }
    emit(out, cli.format, &fields)
}

fn cmd_experiment(cli: &Cli, a: &ExperimentArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg: ExperimentConfig = match &a.config {
        Some(p) => {
            let mut text = String::new();
            open_input(p)?.read_to_string(&mut text).map_err(|e| Failure::Input(format!("{p}: {e}")))?;
            serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{p}: {e}")))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(k) = a.kind {
        cfg.kind = if k == Kind::Batch { SweepKind::Batch } else { SweepKind::Online };
    }
    if let Some(e) = &a.eps {
        cfg.eps_list = e.clone();
    }
    if let Some(m) = &a.mech {
        cfg.mech_spec = m.clone();
    }
    if let Some(m) = a.mode {
        cfg.mode = if m == Mode::Analytic { ModeKind::Analytic } else { ModeKind::Mc };
    }
    cfg.trials = a.trials.unwrap_or(cfg.trials);
    cfg.horizon = a.horizon.or(cfg.horizon);
    cfg.bins = a.bins.unwrap_or(cfg.bins);
    cfg.dl_bins = a.dl_bins.unwrap_or(cfg.dl_bins);
    cfg.samples = a.samples.unwrap_or(cfg.samples);
    cfg.seed = cli.seed.unwrap_or(cfg.seed);
    if a.sequential {
        cfg.exec = Exec::Sequential;
    }
    let report = run_sweep(&cfg)?;
    let (csv, json) = (report.to_csv(), report.to_json());
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for (name, body) in [("report.csv", &csv), ("report.json", &json)] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| io_err(&path, e))?;
        }
    }
    let body = if cli.format == Format::Csv { csv } else { json + "\n" };
    out.write_all(body.as_bytes()).map_err(|e| Failure::Input(format!("stdout: {e}")))?;
    if report.failed {
        let rows: Vec<String> = report.failed_rows().map(|r| format!("eps={} {}", r.eps, r.metric)).collect();
        return Err(Failure::Verification(format!("bound violated: {}", rows.join("; "))));
    }
    Ok(())
}

fn cmd_verify(cli: &Cli, a: &VerifyArgs, out: &mut dyn Write) -> CliResult<()> {
    let opts = VerifyOptions {
        suite: if a.suite == SuiteArg::Full { Suite::Full } else { Suite::Quick },
        seed: cli.seed.unwrap_or(0),
        inject_dp_fault: a.inject_dp_fault,
        exec: Exec::default(),
    };
    let checks = run_suite(&opts);
    let w = |e: std::io::Error| Failure::Input(format!("stdout: {e}"));
    match cli.format {
        Format::Json => {
            let v = json!(checks
                .iter()
                .map(|c| json!({"id": c.id, "status": c.status, "detail": c.detail}))
                .collect::<Vec<_>>());
            writeln!(out, "{}", round_json(v)).map_err(w)?;
        }
        Format::Csv => {
            writeln!(out, "id,status,detail").map_err(w)?;
            for c in &checks {
                writeln!(out, "{},{:?},\"{}\"", c.id, c.status, c.detail.replace('"', "'")).map_err(w)?;
            }
        }
    }
    if !cli.quiet {
        for c in &checks {
            eprintln!("{:>5} {:<22} {:>7.2}s  {}", format!("{:?}", c.status).to_uppercase(), c.id, c.seconds, c.detail);
        }
    }
    if all_passed(&checks) {
        Ok(())
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| c.status == Status::Fail).map(|c| c.id.as_str()).collect();
        Err(Failure::Verification(format!("failed checks: {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let res = match &cli.cmd {
        Cmd::Metrics(a) => cmd_metrics(&cli, a, &mut out),
        Cmd::Postprocess(a) => cmd_postprocess(&cli, a, &mut out),
        Cmd::Adversary(a) => cmd_adversary(&cli, a, &mut out),
        Cmd::Experiment(a) => cmd_experiment(&cli, a, &mut out),
        Cmd::Verify(a) => cmd_verify(&cli, a, &mut out),
    };
    let _ = out.flush();
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Verification(m) => (1, m),
                Failure::Input(m) => (2, m),
                Failure::Numeric(m) => (3, m),
            };
            // Failures are always reported, even with --quiet.
            eprintln!("calpost: {msg}");
            ExitCode::from(code)
        }
    }
}
