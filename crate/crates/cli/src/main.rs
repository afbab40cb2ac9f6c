use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qvdp_core::scan::{self, Axis, AxisName, Mode, RunConfig, TopologyKind};

/// Steady states, sweeps and phase-space diagnostics of quantum van der Pol
/// oscillators with Kerr nonlinearity.
///
/// Set QVDP_THREADS to limit the worker threads.
#[derive(Parser)]
#[command(name = "qvdp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Steady state at one parameter point
    Steady(Common),
    /// Time evolution from a product of coherent states
    Evolve(Common),
    /// 1-D bifurcation sweep of the reduced Wigner function
    Sweep(Common),
    /// 2-D classification grid over epsilon_over_k1 and K
    Phase2d(Common),
    /// Stationary y1 histogram of the semiclassical model
    Sde(Common),
    /// Mean-field ring run with squeezing-direction profile
    Chimera(Common),
    /// Negativity of the two-oscillator steady state
    Negativity(Common),
}

#[derive(Args)]
struct Common {
    /// TOML or JSON run configuration (a manifest.json works too)
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// single | pair
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    omega: Option<f64>,
    /// Kerr strength (system and ring)
    #[arg(short = 'K', long = "kerr")]
    kerr: Option<f64>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    k2: Option<f64>,
    #[arg(short, long)]
    epsilon_over_k1: Option<f64>,
    /// Fixed Fock cutoff per oscillator; without it the cutoff is refined
    #[arg(short, long)]
    n_max: Option<usize>,
    /// Sweep axis NAME:MIN:MAX:COUNT, NAME one of epsilon_over_k1, K, V, d
    #[arg(short, long = "sweep", value_parser = parse_axis)]
    sweep: Vec<Axis>,
    /// Phase-space grid points per side
    #[arg(long)]
    grid_points: Option<usize>,
    /// Phase-space grid half width
    #[arg(long)]
    grid_extent: Option<f64>,
    #[arg(long)]
    dump_fields: bool,
    #[arg(long)]
    check_monotone: bool,
    /// Ring size N
    #[arg(long)]
    oscillators: Option<usize>,
    /// Ring coupling range d
    #[arg(long)]
    range: Option<usize>,
    /// Ring coupling strength V
    #[arg(long)]
    coupling: Option<f64>,
    #[arg(long)]
    coherent_count: Option<usize>,
    /// Integration time of evolve and chimera runs
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Euler-Maruyama steps per trajectory
    #[arg(long)]
    sde_steps: Option<usize>,
}

fn parse_axis(s: &str) -> Result<Axis, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [name, min, max, count] = parts[..] else {
        return Err(format!("expected NAME:MIN:MAX:COUNT, got {s:?}"));
    };
    let parameter = match name {
        "epsilon_over_k1" => AxisName::EpsilonOverK1,
        "K" => AxisName::K,
        "V" => AxisName::V,
        "d" => AxisName::Range,
        other => return Err(format!("unknown sweep parameter {other:?}; accepted: epsilon_over_k1, K, V, d")),
    };
    let num = |v: &str| v.parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok(Axis {
        parameter,
        min: num(min)?,
        max: num(max)?,
        count: count.parse().map_err(|e| format!("{count:?}: {e}"))?,
    })
}

fn build_config(mode: Mode, a: Common) -> Result<RunConfig, String> {
    let mut c = match &a.config {
        Some(path) => {
            let c = scan::load_config(path).map_err(|e| e.to_string())?;
            if c.mode != mode {
                return Err(format!("{} has mode {:?} but the subcommand is {mode:?}", path.display(), c.mode));
            }
            c
        }
        None => RunConfig::new(mode),
    };
    if let Some(v) = a.output_dir {
        c.output_dir = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(t) = a.topology {
        c.system.topology = match t.as_str() {
            "single" => TopologyKind::Single,
            "pair" => TopologyKind::Pair,
            other => return Err(format!("topology: expected single or pair, got {other:?}")),
        };
    }
    if let Some(v) = a.omega {
        c.system.omega = v;
    }
    if let Some(v) = a.kerr {
        c.system.kerr = v;
        c.ring.kerr = v;
    }
    if let Some(v) = a.k1 {
        c.system.k1 = v;
        c.ring.k1 = v;
    }
    if let Some(v) = a.k2 {
        c.system.k2 = v;
        c.ring.k2 = v;
    }
    if let Some(v) = a.epsilon_over_k1 {
        c.system.epsilon_over_k1 = v;
    }
    if let Some(v) = a.n_max {
        c.system.n_max = Some(v);
        c.ring.n_max = v;
    }
    if !a.sweep.is_empty() {
        c.sweep = a.sweep;
    }
    if let Some(n) = a.grid_points {
        c.grid.nx = n;
        c.grid.ny = n;
    }
    if let Some(w) = a.grid_extent {
        c.grid = qvdp_core::phasespace::PhaseGrid { x_min: -w, x_max: w, y_min: -w, y_max: w, ..c.grid };
    }
    c.dump_fields |= a.dump_fields;
    c.check_monotone |= a.check_monotone;
    if let Some(v) = a.oscillators {
        c.ring.oscillators = v;
    }
    if let Some(v) = a.range {
        c.ring.range = v;
    }
    if let Some(v) = a.coupling {
        c.ring.coupling = v;
    }
    if let Some(v) = a.coherent_count {
        c.chimera.coherent_count = v;
    }
    if let Some(v) = a.t_final {
        c.evolve.t_final = v;
        c.chimera.t_final = v;
    }
    if let Some(v) = a.dt {
        c.evolve.dt = v;
        c.chimera.dt = v;
        c.sde.dt = v;
    }
    if let Some(v) = a.sde_steps {
        c.sde.steps = v;
    }
    Ok(c)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("QVDP_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: QVDP_THREADS: {e}");
                    return ExitCode::from(2);
                }
            }
            _ => {
                eprintln!("error: QVDP_THREADS must be a positive integer, got {n:?}");
                return ExitCode::from(2);
            }
        }
    }
    let (mode, args) = match cli.command {
        Command::Steady(a) => (Mode::Steady, a),
        Command::Evolve(a) => (Mode::Evolve, a),
        Command::Sweep(a) => (Mode::Sweep, a),
        Command::Phase2d(a) => (Mode::Phase2d, a),
        Command::Sde(a) => (Mode::Sde, a),
        Command::Chimera(a) => (Mode::Chimera, a),
        Command::Negativity(a) => (Mode::Negativity, a),
    };
    let config = match build_config(mode, args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match scan::execute(&config) {
        Ok(report) => {
            println!("{} of {} points succeeded; outputs in {}", report.points - report.failed, report.points, config.output_dir.display());
            if report.failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
