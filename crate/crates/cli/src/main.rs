//! `skyplan`: synthesize coverage maps, place UAVs, plan co-inference and run
//! closed-loop scenarios from one TOML configuration.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use skyplan_core::channel::ChannelModel;
use skyplan_core::coinference::{compare_paradigms, CoinferenceError, Mode, ParadigmComparison, QosBudget};
use skyplan_core::coverage_map::{load_map, render_map, synthesize, CoverageMap, MapError};
use skyplan_core::llm_gateway::{Gateway, GatewayError};
use skyplan_core::pipeline::{run_scenario, PipelineError, ScenarioConfig};
use skyplan_core::placement::{
    brute_force_placement, evaluate_on_map, llm_placement, los_greedy_init, map_search_placement,
    sca_los_placement, Method, PlacementError, PlacementProblem, PlacementSolution,
};
use thiserror::Error;

use config::{ModeArg, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Internal(format!("writing {}: {e}", path.display()))
}

const PLACE_HELP: &str = "\
Outputs (in --out):
  solution.json  {map, seed, deterministic, runs: [{uavs, method, reported_sum_rate_bps, solution}]}
                 where solution holds positions, serving_beam, sinr, per_uav_rate,
                 sum_rate, iterations, objective_trace and max_iter_reached.
  sweep.csv      written when --uavs is a range or several methods are given;
                 columns: uavs,method,map_sum_rate_bps,reported_sum_rate_bps,iterations
                 map_sum_rate_bps is scored on the map for every method;
                 reported_sum_rate_bps is the method's own estimate (the LoS model for sca).

The llm method with a live endpoint is non-deterministic; solution.json then
carries \"deterministic\": false.";

const COINFER_HELP: &str = "\
Outputs (in --out):
  comparison.csv   columns: paradigm,feasible,split,rho,p_w,f_hz,quality,delay_s,energy_j,objective,binding
                   numeric columns are empty for infeasible rows; binding names the
                   limiting constraint (quality|delay|energy) of an infeasible row.
  comparison.json  {mode, budget, rho_max, rows: [{paradigm, plan, objective, binding}]}
Infeasible budgets are reported, not treated as failures.";

const PIPELINE_HELP: &str = "\
Outputs (in --out):
  report.json  predicted_sum_rate, initial_sum_rate, final_sum_rate, rounds_used,
               termination (converged_round_N | max_rounds | adaptation_disabled)
               and per-round records with the execution plan.
  rounds.csv   columns: round,uav_id,x,y,beam,rate
The true map is [map].path when set, otherwise synthesized from the config.";

const SYNTH_HELP: &str = "\
Output: map CSV.
  line 1  # skyplan-map v1
  line 2  # origin_x,origin_y,resolution,nx,ny,altitude,beam_count
  line 3  the seven values of line 2
  rows    beam_id,ix,iy,rsrp_dbm   (beam-major, then iy, then ix; NaN marks no data)";

#[derive(Debug, Parser)]
#[command(name = "skyplan", version, about = "UAV placement and co-inference planning on coverage maps")]
struct Cli {
    /// TOML run configuration; library defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a coverage map from [map], [channel] and [beams].
    #[command(after_help = SYNTH_HELP)]
    SynthMap {
        #[arg(long)]
        out: PathBuf,
    },
    /// Place UAVs on a coverage map with one or more methods.
    #[command(after_help = PLACE_HELP)]
    Place {
        #[arg(long)]
        map: PathBuf,
        /// Comma-separated list of sca, search, llm, brute.
        #[arg(long, value_delimiter = ',', required = true)]
        method: Vec<MethodArg>,
        /// UAV count `K` or inclusive range `K_MIN..K_MAX`.
        #[arg(long, default_value = "1")]
        uavs: UavRange,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare on-cloud, on-device and co-inference plans.
    #[command(after_help = COINFER_HELP)]
    Coinfer {
        /// Objective; defaults to [coinference].mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the closed-loop placement and co-inference scenario.
    #[command(after_help = PIPELINE_HELP)]
    Pipeline {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Sca,
    Search,
    Llm,
    Brute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct UavRange {
    lo: usize,
    hi: usize,
    ranged: bool,
}

impl FromStr for UavRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("not a UAV count: {t:?}"));
        let (lo, hi, ranged) = match s.split_once("..") {
            Some((a, b)) => (num(a)?, num(b)?, true),
            None => {
                let k = num(s)?;
                (k, k, false)
            }
        };
        if lo == 0 || hi < lo {
            return Err(format!("need 1 <= K_MIN <= K_MAX, got {s:?}"));
        }
        Ok(Self { lo, hi, ranged })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.into())
            .build_global()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    }
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::SynthMap { out } => synth_map(&cfg, &out),
        Command::Place { map, method, uavs, out } => place(&cfg, &map, &method, uavs, &out),
        Command::Coinfer { mode, out } => coinfer(&cfg, mode.unwrap_or(cfg.coinference.mode).into(), &out),
        Command::Pipeline { out } => pipeline(&cfg, &out),
    }
}

fn map_error(e: MapError) -> CliError {
    match e {
        MapError::Invalid(_) | MapError::Channel(_) => CliError::Usage(e.to_string()),
        _ => CliError::Internal(e.to_string()),
    }
}

fn read_map(path: &Path) -> Result<CoverageMap, CliError> {
    load_map(path).map_err(|e| CliError::Usage(format!("cannot load map {}: {e}", path.display())))
}

fn synth_map(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let map = synthesize(&cfg.synthesis()?).map_err(map_error)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(out, render_map(&map)).map_err(io_err(out))?;
    println!("wrote {} ({} x {} x {})", out.display(), map.nx, map.ny, map.beam_count);
    for (b, range) in map.beam_ranges().iter().enumerate() {
        match range {
            Some((lo, hi)) => println!("beam {b}: rsrp {lo:.4} .. {hi:.4} dBm"),
            None => println!("beam {b}: no data"),
        }
    }
    Ok(())
}

fn placement_error(e: PlacementError) -> CliError {
    match e {
        PlacementError::Invalid(_)
        | PlacementError::InfeasibleInit(_)
        | PlacementError::TooLarge { .. }
        | PlacementError::Gateway(GatewayError::Config(_) | GatewayError::DigestTooLarge { .. }) => {
            CliError::Usage(e.to_string())
        }
        _ => CliError::Internal(e.to_string()),
    }
}

#[derive(Serialize)]
struct PlaceRun {
    uavs: usize,
    method: Method,
    reported_sum_rate_bps: f64,
    solution: PlacementSolution,
}

#[derive(Serialize)]
struct PlaceOutput<'a> {
    map: &'a Path,
    seed: u64,
    deterministic: bool,
    runs: Vec<PlaceRun>,
}

fn place(cfg: &RunConfig, map_path: &Path, methods: &[MethodArg], uavs: UavRange, out: &Path) -> Result<(), CliError> {
    let map = read_map(map_path)?;
    let channel = cfg.channel()?;
    let mut gateway = match methods.contains(&MethodArg::Llm) {
        true => Some(Gateway::new(cfg.gateway()?).map_err(|e| CliError::Usage(e.to_string()))?),
        false => None,
    };
    let deterministic = gateway.as_ref().is_none_or(|g| g.config().is_mock());

    let mut runs = Vec::new();
    for k in uavs.lo..=uavs.hi {
        let mut problem = PlacementProblem::over_map(&map, k, channel, cfg.beams(), cfg.bs_position());
        problem.min_separation = cfg.placement.min_separation_m;
        for &m in methods {
            let (solution, reported) = match m {
                MethodArg::Sca => {
                    let init = los_greedy_init(&problem, cfg.placement.init_stride_m).map_err(placement_error)?;
                    let los = sca_los_placement(&problem, &init, &cfg.sca()).map_err(placement_error)?;
                    let mut sol = evaluate_on_map(&los.positions, &problem, &map, Method::ScaLos)
                        .map_err(placement_error)?;
                    sol.iterations = los.iterations;
                    sol.objective_trace = los.objective_trace;
                    sol.max_iter_reached = los.max_iter_reached;
                    (sol, los.sum_rate)
                }
                MethodArg::Search => {
                    let sol = map_search_placement(&problem, &map, &cfg.search()).map_err(placement_error)?;
                    let r = sol.sum_rate;
                    (sol, r)
                }
                MethodArg::Brute => {
                    let sol = brute_force_placement(&problem, &map, cfg.placement.brute_stride)
                        .map_err(placement_error)?;
                    let r = sol.sum_rate;
                    (sol, r)
                }
                MethodArg::Llm => {
                    let gw = gateway.as_mut().expect("gateway built for llm");
                    let sol = llm_placement(&problem, &map, gw).map_err(placement_error)?;
                    let r = sol.sum_rate;
                    (sol, r)
                }
            };
            println!("K={k} {:<11} map sum rate {:.6e} bps", solution.method.tag(), solution.sum_rate);
            runs.push(PlaceRun { uavs: k, method: solution.method, reported_sum_rate_bps: reported, solution });
        }
    }

    fs::create_dir_all(out).map_err(io_err(out))?;
    let json = out.join("solution.json");
    let doc = PlaceOutput { map: map_path, seed: cfg.seed, deterministic, runs };
    fs::write(&json, to_json(&doc)).map_err(io_err(&json))?;
    if uavs.ranged || methods.len() > 1 {
        let csv = out.join("sweep.csv");
        write_sweep(&csv, &doc.runs).map_err(io_err(&csv))?;
    }
    Ok(())
}

fn write_sweep(path: &Path, runs: &[PlaceRun]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "uavs,method,map_sum_rate_bps,reported_sum_rate_bps,iterations")?;
    for r in runs {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.uavs,
            r.method.tag(),
            r.solution.sum_rate,
            r.reported_sum_rate_bps,
            r.solution.iterations
        )?;
    }
    w.flush()
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable output");
    s.push('\n');
    s
}

fn coinference_error(e: CoinferenceError) -> CliError {
    match e {
        CoinferenceError::Domain(_) => CliError::Internal(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    }
}

#[derive(Serialize)]
struct CoinferOutput<'a> {
    mode: Mode,
    budget: QosBudget,
    rho_max: f64,
    rows: &'a [skyplan_core::coinference::ParadigmRow],
}

fn coinfer(cfg: &RunConfig, mode: Mode, out: &Path) -> Result<(), CliError> {
    let profile = cfg.profile()?;
    let link = cfg.link()?;
    let budget = cfg.budget(mode)?;
    let rho_max = cfg.coinference.rho_max;
    let cmp = compare_paradigms(mode, &profile, &link, &budget, rho_max).map_err(coinference_error)?;

    fs::create_dir_all(out).map_err(io_err(out))?;
    let csv = out.join("comparison.csv");
    write_comparison(&csv, &cmp).map_err(io_err(&csv))?;
    let json = out.join("comparison.json");
    let doc = CoinferOutput { mode, budget, rho_max, rows: &cmp.rows };
    fs::write(&json, to_json(&doc)).map_err(io_err(&json))?;

    println!("{}", mode.tag());
    for r in &cmp.rows {
        match (&r.plan, r.binding) {
            (Some(p), _) => println!(
                "{:<13} split {:>2} rho {:.4} q {:.4} delay {:.6} s energy {:.6} J",
                r.paradigm.tag(),
                p.split,
                p.rho,
                p.achieved.quality,
                p.achieved.delay_s,
                p.achieved.energy_j
            ),
            (None, b) => println!("{:<13} infeasible ({})", r.paradigm.tag(), b.map_or("-", |c| c.tag())),
        }
    }
    Ok(())
}

fn write_comparison(path: &Path, cmp: &ParadigmComparison) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "paradigm,feasible,split,rho,p_w,f_hz,quality,delay_s,energy_j,objective,binding")?;
    for r in &cmp.rows {
        match &r.plan {
            Some(p) => writeln!(
                w,
                "{},true,{},{},{},{},{},{},{},{},",
                r.paradigm.tag(),
                p.split,
                p.rho,
                p.p_w,
                p.f_hz,
                p.achieved.quality,
                p.achieved.delay_s,
                p.achieved.energy_j,
                cmp.mode.objective(&p.achieved)
            )?,
            None => writeln!(w, "{},false,,,,,,,,,{}", r.paradigm.tag(), r.binding.map_or("", |c| c.tag()))?,
        }
    }
    w.flush()
}

fn pipeline_error(e: PipelineError) -> CliError {
    match e {
        PipelineError::Config(_) => CliError::Usage(e.to_string()),
        _ => CliError::Internal(e.to_string()),
    }
}

fn scenario(cfg: &RunConfig) -> Result<ScenarioConfig, CliError> {
    let channel = cfg.channel()?;
    let true_map = match &cfg.map.path {
        Some(path) => read_map(path)?,
        None => synthesize(&cfg.synthesis()?).map_err(map_error)?,
    };
    let mut problem = PlacementProblem::over_map(&true_map, cfg.pipeline.uavs, channel, cfg.beams(), cfg.bs_position());
    problem.min_separation = cfg.placement.min_separation_m;
    let mode: Mode = cfg.coinference.mode.into();
    Ok(ScenarioConfig {
        true_map,
        predicted_channel: ChannelModel { shadowing_sigma_db: 0.0, ..channel },
        problem,
        sca: cfg.sca(),
        init_stride_m: cfg.placement.init_stride_m,
        profile: cfg.profile()?,
        link: cfg.link()?,
        budget: cfg.budget(mode)?,
        mode,
        rho_max: cfg.coinference.rho_max,
        adaptation: cfg.adaptation(),
        sensing_noise_db: cfg.pipeline.sensing_noise_db,
        seed: cfg.seed,
    })
}

fn pipeline(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let sc = scenario(cfg)?;
    let report = run_scenario(&sc).map_err(pipeline_error)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let json = out.join("report.json");
    let mut text = report.to_json();
    text.push('\n');
    fs::write(&json, text).map_err(io_err(&json))?;
    let csv = out.join("rounds.csv");
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(&csv)?);
        report.write_rounds_csv(&mut w)?;
        w.flush()
    };
    write().map_err(io_err(&csv))?;
    println!(
        "sum rate {:.6e} -> {:.6e} bps after {} rounds ({})",
        report.initial_sum_rate, report.final_sum_rate, report.rounds_used, report.termination
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uav_range_parsing() {
        assert_eq!("3".parse::<UavRange>(), Ok(UavRange { lo: 3, hi: 3, ranged: false }));
        assert_eq!("1..4".parse::<UavRange>(), Ok(UavRange { lo: 1, hi: 4, ranged: true }));
        assert!("0".parse::<UavRange>().is_err());
        assert!("4..2".parse::<UavRange>().is_err());
        assert!("a..2".parse::<UavRange>().is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
