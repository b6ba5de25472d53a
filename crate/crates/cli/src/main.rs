use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{debug, info};
use serde_json::{json, Value};

use phcirc_core::assembly::{assemble, assembly_json, circuit_blocks, to_mla, to_mna, to_mna_cf, CircuitBlocks};
use phcirc_core::checks::{verify_netlist, VerifyOptions};
use phcirc_core::graph::GroundSet;
use phcirc_core::netlist::{build_graph, parse, CircuitGraph, Netlist, NetlistError};
use phcirc_core::solver::{simulate, DaeProblem, IntegratorConfig, Method};

#[derive(Parser, Debug)]
#[command(name = "phcirc", version, about = "Port-Hamiltonian circuit assembly and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a netlist and lint its graph and ground set.
    Check { input: PathBuf },
    /// Emit the assembled Dirac structure and incidence blocks.
    Assemble {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Emit::Json)]
        emit: Emit,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Report the nodal DAE: unknowns, equations and blocks.
    Mna {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = MnaForm::Cf)]
        form: MnaForm,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Report the loop DAE: unknowns, equations and blocks.
    Mla {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a transient simulation.
    Simulate {
        input: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        tstop: Option<f64>,
        #[arg(long, default_value = "be")]
        method: Method,
        #[arg(long, value_enum, default_value_t = Formulation::MnaCf)]
        formulation: Formulation,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Run the invariant suites on a netlist.
    Verify {
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Emit {
    Json,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MnaForm {
    Cf,
    Potential,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Formulation {
    MnaCf,
    Mna,
    Mla,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Format {
    Csv,
    Json,
}

/// A failure reported as JSON on stderr.
struct Failure {
    kind: &'static str,
    message: String,
    line: Option<usize>,
}

impl Failure {
    fn new(kind: &'static str, message: impl ToString) -> Self {
        Self { kind, message: message.to_string(), line: None }
    }

    fn to_json(&self) -> Value {
        let mut v = json!({ "error": self.kind, "message": self.message });
        if let Some(line) = self.line {
            v["line"] = json!(line);
        }
        v
    }
}

impl From<NetlistError> for Failure {
    fn from(e: NetlistError) -> Self {
        Self { kind: "netlist", line: e.line(), message: e.to_string() }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PHCIRC_LOG", "error"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", json!({ "error": "usage", "message": msg.trim_end() }));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(1)
        }
    }
}

fn load(path: &Path) -> Result<Netlist, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))?;
    info!("parsing {}", path.display());
    Ok(parse(&text)?)
}

fn load_graph(path: &Path) -> Result<(Netlist, CircuitGraph, CircuitBlocks), Failure> {
    let netlist = load(path)?;
    let cg = build_graph(&netlist)?;
    let blocks = circuit_blocks(&cg).map_err(|e| Failure::new("assembly", e))?;
    Ok((netlist, cg, blocks))
}

fn write_out(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(p) => fs::write(p, text).map_err(|e| Failure::new("io", format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::new("io", e)),
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

fn grounds_json(cg: &CircuitGraph, grounds: &GroundSet) -> Value {
    json!(grounds.iter().map(|v| cg.graph.vertices()[v].clone()).collect::<Vec<_>>())
}

fn run(cmd: Command) -> Result<bool, Failure> {
    match cmd {
        Command::Check { input } => check(&input),
        Command::Assemble { input, emit: Emit::Json, output } => {
            let (_, cg, blocks) = load_graph(&input)?;
            let sys = assemble(&cg).map_err(|e| Failure::new("assembly", e))?;
            write_out(output.as_deref(), &pretty(&assembly_json(&sys, &blocks)))?;
            Ok(true)
        }
        Command::Mna { input, form, output } => {
            let (netlist, cg, blocks) = load_graph(&input)?;
            let (name, problem): (&str, Box<dyn DaeProblem>) = match form {
                MnaForm::Cf => ("mna-cf", Box::new(to_mna_cf(&cg, &blocks, &netlist.initial_conditions()).map_err(|e| Failure::new("assembly", e))?)),
                MnaForm::Potential => ("mna", Box::new(to_mna(&cg, &blocks).map_err(|e| Failure::new("assembly", e))?)),
            };
            write_out(output.as_deref(), &pretty(&dae_json(name, problem.as_ref(), &blocks)))?;
            Ok(true)
        }
        Command::Mla { input, output } => {
            let (_, cg, blocks) = load_graph(&input)?;
            let mla = to_mla(&cg, &blocks).map_err(|e| Failure::new("assembly", e))?;
            write_out(output.as_deref(), &pretty(&dae_json("mla", &mla, &blocks)))?;
            Ok(true)
        }
        Command::Simulate { input, dt, tstop, method, formulation, output, format } => {
            let (netlist, cg, blocks) = load_graph(&input)?;
            let tran = netlist.tran();
            let dt = dt.or(tran.map(|t| t.dt)).ok_or_else(|| Failure::new("config", "no --dt and no .tran directive"))?;
            let tstop =
                tstop.or(tran.map(|t| t.tstop)).ok_or_else(|| Failure::new("config", "no --tstop and no .tran directive"))?;
            let uic = tran.is_some_and(|t| t.uic) && formulation == Formulation::MnaCf;
            let cfg = IntegratorConfig { method, dt, uic, ..Default::default() };
            let assembly = |e| Failure::new("assembly", e);
            let problem: Box<dyn DaeProblem> = match formulation {
                Formulation::MnaCf => Box::new(to_mna_cf(&cg, &blocks, &netlist.initial_conditions()).map_err(assembly)?),
                Formulation::Mna => Box::new(to_mna(&cg, &blocks).map_err(assembly)?),
                Formulation::Mla => Box::new(to_mla(&cg, &blocks).map_err(assembly)?),
            };
            debug!("{} unknowns, dt = {dt:e}, tstop = {tstop:e}", problem.dim());
            let tr = simulate(problem.as_ref(), &cfg, tstop).map_err(|e| Failure::new("solver", e))?;
            info!("{} steps", tr.times.len() - 1);
            let text = match format {
                Format::Csv => tr.to_csv(),
                Format::Json => pretty(&json!({
                    "method": tr.method,
                    "nodes": tr.node_names,
                    "edges": tr.edge_names,
                    "times": tr.times,
                    "observations": tr.observations,
                    "audit": tr.audit,
                    "newton_iterations": tr.newton_iterations,
                })),
            };
            write_out(output.as_deref(), &text)?;
            Ok(true)
        }
        Command::Verify { input, seed, samples } => {
            let netlist = load(&input)?;
            let opts = VerifyOptions { seed, equivalence_samples: samples, ..Default::default() };
            let suites = verify_netlist(&netlist, &opts).map_err(|e| Failure::new("assembly", e))?;
            let ok = suites.iter().all(|s| s.ok());
            let report = json!({ "ok": ok, "seed": seed, "suites": suites });
            write_out(None, &pretty(&report))?;
            if !ok {
                let failed: Vec<&str> = suites.iter().filter(|s| !s.ok()).map(|s| s.suite.as_str()).collect();
                eprintln!("{}", json!({ "error": "verify", "message": "suites failed", "suites": failed }));
            }
            Ok(ok)
        }
    }
}

fn check(input: &Path) -> Result<bool, Failure> {
    let netlist = match load(input) {
        Ok(n) => n,
        Err(f) => {
            write_out(None, &pretty(&json!({ "errors": [f.to_json()], "warnings": [], "graph": null })))?;
            return Err(f);
        }
    };
    match build_graph(&netlist) {
        Ok(cg) => {
            let report = json!({
                "errors": [],
                "warnings": cg.warnings,
                "graph": {
                    "n": cg.graph.n(),
                    "m": cg.graph.m(),
                    "k": cg.k(),
                    "grounds": grounds_json(&cg, &cg.grounds),
                },
            });
            write_out(None, &pretty(&report))?;
            Ok(true)
        }
        Err(e) => {
            let f = Failure::from(e);
            write_out(None, &pretty(&json!({ "errors": [f.to_json()], "warnings": [], "graph": null })))?;
            Err(f)
        }
    }
}

fn dae_json(name: &str, problem: &dyn DaeProblem, blocks: &CircuitBlocks) -> Value {
    let n = problem.dim();
    let zeros = vec![0.0; n];
    json!({
        "formulation": name,
        "unknowns": n,
        "equations": problem.residual(0.0, &zeros, &zeros).len(),
        "differential": problem.differential(),
        "nodes": problem.node_names(),
        "edges": problem.edge_names(),
        "blocks": blocks.to_json(),
    })
}
