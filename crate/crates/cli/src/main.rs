use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use stampsim::coloring::ColorOrder;
use stampsim::engine::{Circuit, Simulator, TranConfig, Waveforms};
use stampsim::kernels::{KernelConfig, KernelKind};
use stampsim::netlist::{parse, parse_value, Netlist};
use stampsim::workbench::bench::render_table;
use stampsim::workbench::{
    bench, color_netlist, color_report, compare_waveforms, gen_adder, gen_synth, insert_resistors,
    AdderConfig, BenchMode, BenchOptions, SynthSpec, TransformOptions,
};

#[derive(Parser)]
#[command(
    name = "stampsim",
    version,
    about = "Transient circuit simulator with color-scheduled parallel stamping"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the netlist's transient analysis.
    Run(RunArgs),
    /// Generate a benchmark netlist.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Insert series resistors at FET-to-FET connections.
    Transform(TransformArgs),
    /// Color the FET conflict graph and print a tab-separated report.
    Color(ColorArgs),
    /// Benchmark kernels and thread counts.
    Bench(BenchArgs),
    /// Compare two waveform CSV files.
    Compare(CompareArgs),
}

fn value(s: &str) -> Result<f64, String> {
    parse_value(s).ok_or_else(|| format!("'{s}' is not a number"))
}

#[derive(Args)]
struct RunArgs {
    netlist: PathBuf,
    #[arg(long, default_value = "loadsingle")]
    kernel: KernelKind,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Waveform CSV output (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value solve statistics.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long, default_value = "netlist")]
    order: ColorOrder,
    /// Repetitions of device model arithmetic.
    #[arg(long, default_value_t = 1)]
    work: u32,
    /// Override the .tran stop time.
    #[arg(long, value_parser = value)]
    tstop: Option<f64>,
}

#[derive(Subcommand)]
enum GenCommand {
    /// N FETs in cliques of C sharing a source node.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        c: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ripple-carry adder of 28T full-adder cells.
    Adder {
        #[arg(long, default_value_t = 64)]
        bits: usize,
        /// Inputs tied high, e.g. a0,b0,cin.
        #[arg(long, value_delimiter = ',')]
        high: Vec<String>,
        #[arg(long, value_parser = value)]
        tstep: Option<f64>,
        #[arg(long, value_parser = value)]
        tstop: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TransformArgs {
    netlist: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    #[arg(long, default_value = "1m", value_parser = value)]
    r: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ColorArgs {
    netlist: PathBuf,
    #[arg(long, default_value = "netlist")]
    order: ColorOrder,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Kernel,
    Transient,
}

#[derive(Args)]
struct BenchArgs {
    netlist: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "loadsingle,loadomp,color,colorfused"
    )]
    kernels: Vec<KernelKind>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    threads: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "kernel")]
    mode: Mode,
    /// Assemblies per repeat in kernel mode.
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    #[arg(long, default_value_t = 50)]
    work: u32,
    #[arg(long, value_parser = value)]
    tstop: Option<f64>,
    #[arg(long, default_value = "netlist")]
    order: ColorOrder,
    /// Circuit label for the records (defaults to the file stem).
    #[arg(long)]
    id: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    reltol: f64,
    #[arg(long, default_value_t = 1e-6)]
    abstol: f64,
}

fn read_netlist(path: &Path) -> Result<Netlist> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => io::stdout().write_all(text.as_bytes()).map_err(Into::into),
    }
}

fn run(args: RunArgs) -> Result<()> {
    let nl = read_netlist(&args.netlist)?;
    let mut cfg = TranConfig::from_netlist(&nl)?;
    if let Some(t) = args.tstop {
        cfg = TranConfig::new(cfg.tstep.min(t), t)?;
    }
    let circuit = Circuit::compile(&nl)?;
    let colors = circuit.color(args.order)?.1.color_count();
    let kernel = KernelConfig::new(args.kernel, args.threads).with_work(args.work);
    let mut sim = Simulator::new(circuit, kernel, args.order)?;
    let waves = sim.run_transient(&cfg)?;
    match &args.out {
        Some(p) => waves
            .write_csv(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)?,
        None => waves.write_csv(io::stdout())?,
    }
    let s = sim.stats();
    let stats = format!(
        "kernel={}\nthreads={}\ncolors={}\ndevices={}\nnr_iterations={}\nt_calc={:e}\nt_stamp={:e}\nt_device_eval={:e}\nt_matrix_solve={:e}\nt_total={:e}\n",
        args.kernel,
        args.threads,
        colors,
        sim.circuit().fets.len(),
        s.nr_iterations_total,
        s.kernel.t_calc(),
        s.kernel.t_stamp(),
        s.t_device_eval,
        s.t_matrix_solve,
        s.t_total
    );
    match &args.stats {
        Some(p) => fs::write(p, stats)?,
        None => eprint!("{stats}"),
    }
    Ok(())
}

fn generate(cmd: GenCommand) -> Result<()> {
    match cmd {
        GenCommand::Synth { n, c, out } => {
            let nl = gen_synth(&SynthSpec::new(n, c))?;
            eprintln!("fets={n} colors={c} nodes={}", nl.node_count());
            emit(out.as_deref(), &nl.to_spice())
        }
        GenCommand::Adder {
            bits,
            high,
            tstep,
            tstop,
            out,
        } => {
            let mut cfg = AdderConfig::new(bits);
            cfg.high_inputs = high;
            cfg.tstep = tstep.unwrap_or(cfg.tstep);
            cfg.tstop = tstop.unwrap_or(cfg.tstop);
            let nl = gen_adder(&cfg)?;
            let colors = color_netlist(&nl, ColorOrder::Netlist).1.color_count();
            eprintln!(
                "fets={} nodes={} colors={colors}",
                cfg.declared_fets(),
                cfg.declared_nodes()
            );
            emit(out.as_deref(), &nl.to_spice())
        }
    }
}

fn transform(args: TransformArgs) -> Result<()> {
    let nl = read_netlist(&args.netlist)?;
    let opts = TransformOptions {
        fraction: args.fraction,
        r_value: args.r,
        seed: args.seed,
    };
    let (out, report) = insert_resistors(&nl, &opts)?;
    emit(args.out.as_deref(), &out.to_spice())?;
    let before = color_netlist(&nl, ColorOrder::Netlist).1.color_count();
    let after = color_netlist(&out, ColorOrder::Netlist).1.color_count();
    eprintln!(
        "resistors_added={} nets_split={} colors_before={before} colors_after={after}",
        report.resistors_added, report.nets_split
    );
    for net in &report.nets {
        for (node, res) in &net.rerouted {
            eprintln!("{}\t{node}\t{res}", net.net);
        }
    }
    Ok(())
}

fn bench_cmd(args: BenchArgs) -> Result<()> {
    let nl = read_netlist(&args.netlist)?;
    let id = args.id.clone().unwrap_or_else(|| {
        args.netlist
            .file_stem()
            .map_or("circuit".into(), |s| s.to_string_lossy().into_owned())
    });
    let opts = BenchOptions {
        kernels: args.kernels,
        threads: args.threads,
        repeats: args.repeats,
        mode: match args.mode {
            Mode::Kernel => BenchMode::Kernel {
                iterations: args.iterations,
            },
            Mode::Transient => BenchMode::Transient { tstop: args.tstop },
        },
        work_multiplier: args.work,
        order: args.order,
    };
    let records = bench(&id, &nl, &opts)?;
    let lines: String = records.iter().map(|r| r.to_line() + "\n").collect();
    emit(args.out.as_deref(), &lines)?;
    eprint!("{}", render_table(&records));
    Ok(())
}

fn compare(args: CompareArgs) -> Result<bool> {
    let load = |p: &Path| -> Result<Waveforms> {
        let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
        Waveforms::read_csv(f).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))
    };
    let report = compare_waveforms(&load(&args.a)?, &load(&args.b)?, args.reltol, args.abstol)?;
    println!("{report}");
    Ok(report.passed())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a).map(|_| true),
        Command::Gen(g) => generate(g).map(|_| true),
        Command::Transform(a) => transform(a).map(|_| true),
        Command::Color(a) => read_netlist(&a.netlist)
            .and_then(|nl| emit(None, &color_report(&nl, a.order)))
            .map(|_| true),
        Command::Bench(a) => bench_cmd(a).map(|_| true),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
