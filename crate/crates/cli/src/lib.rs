//! `otasim` command line. [`run_command`] is the whole program; `main`
//! only forwards `std::env::args` and the exit code.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use otasim::characterize::{full_report, CharacterizationReport, CharacterizeError, CharacterizeOptions, Dut, DutPorts};
use otasim::device::ThermalEnv;
use otasim::engine::{ac_analysis, dc_operating_point, dc_sweep, transient, EngineError, SolverOptions, Table};
use otasim::netlist::{elaborate, parse, parse_value, AnalysisDirective, Circuit};
use otasim::ota::{build_adaptive_ota, build_adaptive_ota_circuit, build_basic_ota, fig10_curves, AdaptiveBiasParams, OtaTemplateParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SIMULATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARSE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "otasim", version, about = "Circuit simulation and opamp characterization")]
struct Cli {
    /// More progress messages on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    /// Two-column table (characterize only).
    Text,
}

#[derive(Debug, Args)]
struct Output {
    /// Output file; standard output when omitted.
    #[arg(long = "out", value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Args)]
struct Bias {
    /// Adaptive-bias feedback factor A.
    #[arg(long = "A", value_name = "X", value_parser = physical)]
    a: f64,
    /// Bias current I_BIAS, A.
    #[arg(long, value_name = "A", value_parser = physical)]
    bias: f64,
    /// Output mirror ratio b.
    #[arg(long, value_name = "X", value_parser = physical, default_value = "1")]
    b: f64,
}

#[derive(Debug, Args)]
struct Template {
    /// Supply voltage, V.
    #[arg(long, value_parser = physical, default_value = "2")]
    supply: f64,
    /// Load capacitance, F.
    #[arg(long, value_parser = physical, default_value = "5p")]
    cload: f64,
    /// Input common-mode voltage of the emitted testbench, V.
    #[arg(long, value_parser = physical)]
    vcm: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute every analysis directive of a netlist.
    Run {
        netlist: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Measure the opamp figures of merit of a netlist.
    Characterize {
        netlist: PathBuf,
        #[arg(long, default_value = "inp")]
        inp: String,
        #[arg(long, default_value = "inn")]
        inn: String,
        #[arg(long = "out-node", default_value = "out")]
        out_node: String,
        #[arg(long, default_value = "vdd")]
        vdd: String,
        #[arg(long, default_value = "0")]
        gnd: String,
        /// Supply voltage, V.
        #[arg(long, value_parser = physical)]
        supply: f64,
        /// Load capacitance, F.
        #[arg(long, value_parser = physical)]
        cload: f64,
        /// Report file; standard output when omitted.
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Closed-form normalized output and supply current curves.
    Fig10 {
        #[arg(long = "A", value_name = "X", value_parser = physical)]
        a: f64,
        #[arg(long, value_name = "A", value_parser = physical)]
        bias: f64,
        #[arg(long, value_name = "X", value_parser = physical, default_value = "1")]
        b: f64,
        /// Subthreshold slope factor.
        #[arg(long, value_parser = physical, default_value = "1.5")]
        n: f64,
        /// Temperature, K.
        #[arg(long, value_parser = physical, default_value = "300")]
        temp: f64,
        /// Half-width of the sweep in units of n*V_T.
        #[arg(long, value_parser = physical, default_value = "8")]
        range: f64,
        #[arg(long, default_value_t = 201)]
        points: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Emit the generated OTA netlist.
    GenOta {
        #[command(flatten)]
        bias: Bias,
        /// Plain differential pair without adaptive biasing.
        #[arg(long)]
        basic: bool,
        #[command(flatten)]
        template: Template,
        #[arg(long = "out", value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Characterize the generated OTA for each A in a comma-separated list.
    SweepA {
        #[arg(value_delimiter = ',', value_parser = physical, required = true)]
        values: Vec<f64>,
        #[arg(long, value_name = "A", value_parser = physical, default_value = "1u")]
        bias: f64,
        #[arg(long, value_name = "X", value_parser = physical, default_value = "1")]
        b: f64,
        #[command(flatten)]
        template: Template,
        #[command(flatten)]
        output: Output,
    },
}

fn physical(s: &str) -> Result<f64, String> {
    parse_value(s).map_err(|e| e.to_string())
}

/// Failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl fmt::Display) -> Self {
        Self { code, message: message.to_string() }
    }
    fn usage(message: impl fmt::Display) -> Self {
        Self::new(EXIT_USAGE, message)
    }
    fn simulation(message: impl fmt::Display) -> Self {
        Self::new(EXIT_SIMULATION, message)
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::InvalidAnalysis(_)
            | EngineError::InvalidOptions
            | EngineError::ZeroStep
            | EngineError::StepDirection { .. }
            | EngineError::UnknownSource(_) => Self::usage(e),
            _ => Self::simulation(e),
        }
    }
}

impl From<CharacterizeError> for Failure {
    fn from(e: CharacterizeError) -> Self {
        match e {
            CharacterizeError::Port(_) | CharacterizeError::InvalidOptions(_) => Self::usage(e),
            _ => Self::simulation(e),
        }
    }
}

struct Ctx {
    verbose: u8,
    argv: Vec<String>,
}

impl Ctx {
    fn info(&self, msg: impl fmt::Display) {
        if self.verbose > 0 {
            eprintln!("otasim: {msg}");
        }
    }
}

/// Runs one invocation. `argv[0]` is the program name. Diagnostics go to
/// stderr; data goes to the requested file or stdout.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let ctx = Ctx { verbose: cli.verbose, argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect() };
    match dispatch(cli.command, &ctx) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("otasim: error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command, ctx: &Ctx) -> Result<(), Failure> {
    match cmd {
        Command::Run { netlist, output } => run(&netlist, &output, ctx),
        Command::Characterize { netlist, inp, inn, out_node, vdd, gnd, supply, cload, report, format } => {
            let ports = DutPorts { inp, inn, out: out_node, vdd, gnd, supply, load_cap: cload };
            characterize(&netlist, ports, report.as_deref(), format, ctx)
        }
        Command::Fig10 { a, bias, b, n, temp, range, points, output } => {
            fig10(a, bias, b, n, temp, range, points, &output, ctx)
        }
        Command::GenOta { bias, basic, template, out } => gen_ota(&bias, basic, &template, out.as_deref(), ctx),
        Command::SweepA { values, bias, b, template, output } => sweep_a(&values, bias, b, &template, &output, ctx),
    }
}

fn load_netlist(path: &Path) -> Result<Circuit, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::simulation(format!("cannot read `{}`: {e}", path.display())))?;
    parse(&text).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))
}

fn tables_output(tables: &[Table], format: Format) -> Result<String, Failure> {
    match format {
        Format::Csv => Ok(tables.iter().map(Table::to_csv).collect::<Vec<_>>().join("\n")),
        Format::Json => {
            let v: Vec<_> = tables.iter().map(Table::to_json).collect();
            Ok(json_text(&serde_json::Value::Array(v)))
        }
        Format::Text => Err(Failure::usage("`--format text` is only available for characterize")),
    }
}

fn json_text(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

/// Writes `data` to `path` through a temporary file in the same directory,
/// then a metadata sidecar `<path>.meta.json`. Without a path, prints.
fn emit(data: &str, path: Option<&Path>, ctx: &Ctx, extra: serde_json::Value) -> Result<(), Failure> {
    let Some(path) = path else {
        let mut out = std::io::stdout().lock();
        return out.write_all(data.as_bytes()).and_then(|_| out.flush()).map_err(|e| Failure::simulation(e));
    };
    write_atomic(path, data.as_bytes())?;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = serde_json::json!({
        "argv": ctx.argv,
        "version": env!("CARGO_PKG_VERSION"),
        "unix_time": stamp,
        "output": path.display().to_string(),
        "details": extra,
    });
    let mut side = path.as_os_str().to_owned();
    side.push(".meta.json");
    write_atomic(Path::new(&side), json_text(&meta).as_bytes())?;
    ctx.info(format!("wrote {}", path.display()));
    Ok(())
}

fn write_atomic(path: &Path, data: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: &dyn fmt::Display| Failure::simulation(format!("cannot write `{}`: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(&e))?;
    tmp.write_all(data).map_err(|e| fail(&e))?;
    tmp.persist(path).map_err(|e| fail(&e.error))?;
    Ok(())
}

fn run(path: &Path, output: &Output, ctx: &Ctx) -> Result<(), Failure> {
    let circuit = load_netlist(path)?;
    let fc = elaborate(&circuit).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    let opts = SolverOptions::default();
    let mut directives = circuit.directives.clone();
    if directives.is_empty() {
        ctx.info("no analysis directives; running .op");
        directives.push(AnalysisDirective::Op);
    }
    let mut tables = Vec::with_capacity(directives.len());
    for d in &directives {
        ctx.info(format!("analysis {d:?}"));
        let table = match d {
            AnalysisDirective::Op => dc_operating_point(&fc, &opts)?.to_table(),
            AnalysisDirective::Dc { source, start, stop, step } => {
                let s = dc_sweep(&fc, source, *start, *stop, *step, &opts)?;
                if !s.failed().is_empty() {
                    eprintln!("otasim: warning: {} sweep point(s) did not converge", s.failed().len());
                }
                s.to_table()
            }
            AnalysisDirective::Ac { points_per_decade, fstart, fstop } => {
                let op = dc_operating_point(&fc, &opts)?;
                ac_analysis(&fc, &op, *fstart, *fstop, *points_per_decade, &opts)?.to_table()
            }
            AnalysisDirective::Tran { tstep, tstop } => transient(&fc, *tstep, *tstop, &opts)?.to_table(),
        };
        tables.push(table);
    }
    let data = tables_output(&tables, output.format)?;
    let analyses: Vec<_> = tables.iter().map(|t| t.analysis.clone()).collect();
    emit(&data, output.out.as_deref(), ctx, serde_json::json!({ "netlist": path.display().to_string(), "analyses": analyses }))
}

fn report_csv(r: &CharacterizationReport) -> String {
    let scalars = [
        ("dc_gain_db", "dc_gain_db", r.dc_gain_db),
        ("ugb_hz", "ugb_hz", r.ugb_hz),
        ("phase_margin_deg", "phase_margin_deg", r.phase_margin_deg),
        ("input_offset_v", "input_offset_v", r.input_offset_v),
        ("icmr_lo", "icmr", r.icmr.lo),
        ("icmr_hi", "icmr", r.icmr.hi),
        ("output_swing_lo", "output_swing", r.output_swing.lo),
        ("output_swing_hi", "output_swing", r.output_swing.hi),
        ("slew_rise_v_per_s", "slew_rise_v_per_s", r.slew_rise_v_per_s),
        ("slew_fall_v_per_s", "slew_fall_v_per_s", r.slew_fall_v_per_s),
        ("settling_rise_s", "settling_rise_s", r.settling_rise_s),
        ("settling_fall_s", "settling_fall_s", r.settling_fall_s),
        ("cmrr_db", "cmrr_db", r.cmrr_db),
        ("psrr_pos_db", "psrr_pos_db", r.psrr_pos_db),
        ("psrr_neg_db", "psrr_neg_db", r.psrr_neg_db),
        ("power_w", "power_w", r.power_w),
    ];
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["field", "value", "annotation"]).expect("in-memory write");
    for (name, field, v) in scalars {
        let note = r.annotations.get(field).map(String::as_str).unwrap_or("");
        w.write_record([name, &format!("{v:e}"), note]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
}

fn characterize(path: &Path, ports: DutPorts, report: Option<&Path>, format: Format, ctx: &Ctx) -> Result<(), Failure> {
    let circuit = load_netlist(path)?;
    let dut = Dut::new(&circuit, ports)?;
    ctx.info("characterizing");
    let r = full_report(&dut, &CharacterizeOptions::default())?;
    for (k, v) in &r.annotations {
        eprintln!("otasim: note: {k}: {v}");
    }
    let data = match format {
        Format::Csv => report_csv(&r),
        Format::Json => json_text(&r.to_json()),
        Format::Text => r.to_text_table(),
    };
    emit(&data, report, ctx, serde_json::json!({ "netlist": path.display().to_string(), "complete": r.is_complete() }))
}

#[allow(clippy::too_many_arguments)]
fn fig10(a: f64, bias: f64, b: f64, n: f64, temp: f64, range: f64, points: usize, output: &Output, ctx: &Ctx) -> Result<(), Failure> {
    let env = ThermalEnv::new(temp).map_err(Failure::usage)?;
    let p = AdaptiveBiasParams::new(a, b, bias, n, env).map_err(Failure::usage)?;
    let rows = fig10_curves(&p, range, points).map_err(Failure::usage)?;
    let nvt = p.n_vt();
    let table = Table {
        analysis: "fig10".into(),
        columns: vec!["x".into(), "vin".into(), "iout_norm".into(), "supply_norm".into()],
        rows: rows.iter().map(|r| vec![r.x, r.x * nvt, r.iout_norm, r.supply_norm]).collect(),
        failed_rows: vec![],
    };
    let data = match output.format {
        Format::Json => json_text(&table.to_json()),
        f => tables_output(std::slice::from_ref(&table), f)?,
    };
    emit(&data, output.out.as_deref(), ctx, serde_json::json!({ "a": a, "b": b, "ibias": bias, "n": n, "temp": temp }))
}

fn template(a: f64, b: f64, bias: f64, t: &Template) -> OtaTemplateParams {
    let mut p = OtaTemplateParams::default().with_bias(a, b, bias);
    p.supply = t.supply;
    p.load_cap = t.cload;
    p.vcm = t.vcm.unwrap_or(0.5 * t.supply);
    p
}

fn gen_ota(bias: &Bias, basic: bool, t: &Template, out: Option<&Path>, ctx: &Ctx) -> Result<(), Failure> {
    let p = template(bias.a, bias.b, bias.bias, t);
    let text = if basic { build_basic_ota(&p) } else { build_adaptive_ota(&p) }.map_err(Failure::usage)?;
    emit(&text, out, ctx, serde_json::json!({ "a": bias.a, "b": bias.b, "ibias": bias.bias, "basic": basic }))
}

fn sweep_a(values: &[f64], bias: f64, b: f64, t: &Template, output: &Output, ctx: &Ctx) -> Result<(), Failure> {
    let mut duts = Vec::with_capacity(values.len());
    for &a in values {
        let p = template(a, b, bias, t);
        let c = build_adaptive_ota_circuit(&p).map_err(Failure::usage)?;
        duts.push(Dut::new(&c, DutPorts::standard(p.supply, p.load_cap))?);
    }
    ctx.info(format!("characterizing {} designs", duts.len()));
    let opts = CharacterizeOptions { concurrent: false, ..CharacterizeOptions::default() };
    let reports: Vec<Result<CharacterizationReport, CharacterizeError>> = std::thread::scope(|s| {
        let handles: Vec<_> = duts.iter().map(|d| s.spawn(move || full_report(d, &opts))).collect();
        handles.into_iter().map(|h| h.join().expect("characterization worker panicked")).collect()
    });
    let mut rows = Vec::with_capacity(values.len());
    for (&a, r) in values.iter().zip(reports) {
        let r = r.map_err(|e| Failure::simulation(format!("A = {a}: {e}")))?;
        rows.push(vec![a, r.slew_rise_v_per_s, r.slew_fall_v_per_s, r.settling_rise_s, r.settling_fall_s, r.power_w]);
    }
    let table = Table {
        analysis: "sweep-a".into(),
        columns: ["a", "slew_rise_v_per_s", "slew_fall_v_per_s", "settling_rise_s", "settling_fall_s", "power_w"]
            .map(String::from)
            .to_vec(),
        rows,
        failed_rows: vec![],
    };
    let data = match output.format {
        Format::Json => json_text(&table.to_json()),
        f => tables_output(std::slice::from_ref(&table), f)?,
    };
    emit(&data, output.out.as_deref(), ctx, serde_json::json!({ "a_values": values, "ibias": bias, "b": b }))
}
