//! Command-line front end. Power is in per unit, angles in degrees.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::area::{compute_weights, kron_reduce, validate_area, Area, AreaFile, WeightVector, OMITTABLE_WEIGHT};
use crate::error::{Error, Result};
use crate::grid::{load_case, BranchId, BusId, GridModel};
use crate::monitor::{format_record, run_monitor, simulate_outage_frames, Monitor, MonitorConfig};
use crate::par::Execution;
use crate::thresholds::{
    read_threshold_file, run_thresholds, sample_multi_outages, single_outage_contingencies, sweep, transfer_outcomes,
    write_threshold_file, DetectionConfig, Relaxation, ThresholdConfig,
};
use crate::transfer::{injection_pattern, InjectionPattern};

#[derive(Parser, Debug)]
#[command(name = "area-angle", version, about = "Area angle thresholds and monitoring from a DC grid model")]
pub struct Cli {
    /// Evaluate contingencies on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CaseArgs {
    /// Bus CSV: bus_id,injection_pu
    #[arg(long)]
    pub buses: PathBuf,
    /// Branch CSV: branch_id,from,to,x_pu|b_pu,limit_pu[,in_service]
    #[arg(long)]
    pub branches: PathBuf,
    /// Area CSV: bus_id,side with side a, b or interior
    #[arg(long)]
    pub area: PathBuf,
    /// Slack bus; defaults to the first b-side bus
    #[arg(long)]
    pub slack: Option<u32>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum RelaxArg {
    Full,
    Classification,
    EmergencyOnly,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Border weights and bulk susceptance (pu) as a CSV report.
    Weights {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Maximum power into the area (pu) and area angle (degrees) per contingency.
    Sweep {
        #[command(flatten)]
        case: CaseArgs,
        /// Outage order: 1, 2 or 3
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
        order: u8,
        /// Random sample size for order 2 or 3; all combinations when omitted
        #[arg(long, requires = "seed")]
        samples: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Transfer level (pu) for the angles; defaults to the worst single-outage maximum
        #[arg(long)]
        level: Option<f64>,
        /// Threshold file whose exceptional branches are flagged in the table
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-pass threshold derivation with exceptional outage detection.
    Thresholds {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long, default_value_t = 3.0)]
        k_mad: f64,
        /// Alarm power as a fraction of the no-outage maximum
        #[arg(long, default_value_t = 0.96)]
        alarm_fraction: f64,
        #[arg(long, value_enum, default_value_t = RelaxArg::Full)]
        relaxation: RelaxArg,
        /// Threshold file to write
        #[arg(long)]
        out: PathBuf,
        /// Final single-outage sweep CSV (angles at the emergency power)
        #[arg(long)]
        sweep_out: Option<PathBuf>,
    },
    /// Settled post-outage frames of border angles (degrees).
    Simulate {
        #[command(flatten)]
        case: CaseArgs,
        /// Outaged branch ids separated by ';' or ','
        #[arg(long, default_value = "")]
        outages: String,
        /// Transfer level in pu
        #[arg(long)]
        level: f64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        start_ms: u64,
        #[arg(long, default_value_t = 1000)]
        period_ms: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify a frame stream; exits 2 on Emergency or LocalProblem.
    Monitor {
        #[arg(long)]
        thresholds: PathBuf,
        /// Frame stream file, or '-' for standard input
        #[arg(long, default_value = "-")]
        stream: String,
        /// Per-frame classification log
        #[arg(long)]
        out: Option<PathBuf>,
        /// State changes only
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long, default_value_t = 5000)]
        staleness_ms: u64,
        /// Moving average length in frames
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        smoothing: u64,
    },
    /// Write one of the built-in example cases as CSV files.
    Fixture {
        /// a, b, b-triangle, c or c-loaded
        #[arg(long)]
        name: String,
        #[arg(long)]
        dir: PathBuf,
    },
}

struct Loaded {
    model: GridModel,
    area: Area,
    pattern: InjectionPattern,
    weights: WeightVector,
}

fn load(case: &CaseArgs) -> Result<Loaded> {
    let file = AreaFile::read(&case.area)?;
    let slack = case.slack.map(BusId).or_else(|| file.b.first().copied());
    let model = load_case(&case.buses, &case.branches, slack)?;
    let area = validate_area(&model, &file.resolve(&model)?)?;
    let weights = compute_weights(&kron_reduce(&model, &area)?)?;
    let pattern = injection_pattern(&model, &area)?;
    Ok(Loaded { model, area, pattern, weights })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn digest(path: &Path) -> Result<String> {
    let hash = Sha256::digest(fs::read(path)?);
    Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
}

fn parse_outages(text: &str) -> Result<Vec<BranchId>> {
    text.split([';', ','])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("bad branch id `{s}`"))))
        .collect()
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::Weights { case, out } => {
            let l = load(&case)?;
            let mut w = output(out.as_deref())?;
            writeln!(w, "bus_id,side,weight,omittable")?;
            for (bus, side, wt) in &l.weights.entries {
                writeln!(w, "{},{},{},{}", bus, side.label(), wt, wt.abs() < OMITTABLE_WEIGHT)?;
            }
            let (sa, sb) = (l.weights.sum_side(crate::area::Side::A), l.weights.sum_side(crate::area::Side::B));
            let footer = format!(
                "# b_area_pu: {}\n# sum_a: {}\n# sum_b: {}\n# sum_all: {}\n",
                l.weights.b_area,
                sa,
                sb,
                sa + sb
            );
            w.write_all(footer.as_bytes())?;
            w.flush()?;
            if out.is_some() {
                print!("{footer}");
            }
            Ok(0)
        }
        Command::Sweep { case, order, samples, seed, level, thresholds, out } => {
            let l = load(&case)?;
            let contingencies = if order == 1 {
                single_outage_contingencies(&l.area)
            } else {
                sample_multi_outages(&l.area, order as usize, samples, seed.unwrap_or(0))?
            };
            let level = match level {
                Some(v) => v,
                None => transfer_outcomes(&l.model, &l.area, &l.pattern, &single_outage_contingencies(&l.area), exec)?
                    .iter()
                    .filter_map(|o| o.p_max())
                    .fold(None, |a: Option<f64>, p| Some(a.map_or(p, |a| a.min(p))))
                    .ok_or_else(|| Error::Config("no single outage has a finite maximum".into()))?,
            };
            let mut table = sweep(&l.model, &l.area, &l.pattern, &l.weights, level, &contingencies, exec)?;
            if let Some(p) = thresholds {
                let (t, _) = read_threshold_file(&fs::read_to_string(p)?)?;
                table.mark_exceptional(&t.exceptional);
            }
            table.write_csv(output(out.as_deref())?)?;
            Ok(0)
        }
        Command::Thresholds { case, k_mad, alarm_fraction, relaxation, out, sweep_out } => {
            let l = load(&case)?;
            let config = ThresholdConfig {
                detection: DetectionConfig { k_mad, ..Default::default() },
                alarm_fraction,
                relaxation: match relaxation {
                    RelaxArg::Full => Relaxation::Full,
                    RelaxArg::Classification => Relaxation::Classification,
                    RelaxArg::EmergencyOnly => Relaxation::EmergencyOnly,
                },
                exec,
            };
            let mut result = run_thresholds(&l.model, &l.area, &l.pattern, &l.weights, &config)?;
            for (key, path) in
                [("buses_sha256", &case.buses), ("branches_sha256", &case.branches), ("area_sha256", &case.area)]
            {
                result.thresholds.provenance.push((key.into(), digest(path)?));
            }
            write_threshold_file(BufWriter::new(File::create(&out)?), &result.thresholds, &l.weights)?;
            if let Some(p) = sweep_out {
                result.pass2.write_csv(BufWriter::new(File::create(p)?))?;
            }
            let t = &result.thresholds;
            println!("p_emergency_pu: {}", t.p_emergency);
            println!("p_alarm_pu: {}", t.p_alarm);
            println!("theta_emergency_deg: {}", t.theta_emergency);
            println!("theta_alarm_deg: {}", t.theta_alarm);
            if let Some(note) = &result.detection_note {
                println!("detection {note}");
            }
            for e in &t.exceptional.entries {
                println!(
                    "exceptional branch {}: {} severity (residual {} deg)",
                    e.branch,
                    e.diagnosis.label(),
                    e.residual
                );
            }
            Ok(0)
        }
        Command::Simulate { case, outages, level, count, start_ms, period_ms, out } => {
            let l = load(&case)?;
            let outages = parse_outages(&outages)?;
            let records =
                simulate_outage_frames(&l.model, &l.area, &l.pattern, &outages, level, count, start_ms, period_ms)?;
            let mut w = output(out.as_deref())?;
            for r in &records {
                writeln!(w, "{}", format_record(r))?;
            }
            w.flush()?;
            Ok(0)
        }
        Command::Monitor { thresholds, stream, out, events, staleness_ms, smoothing } => {
            let (t, weights) = read_threshold_file(&fs::read_to_string(&thresholds)?)?;
            let config = MonitorConfig { staleness_ms, smoothing: smoothing as usize };
            let mut monitor = Monitor::new(weights, t, config);
            let input: Box<dyn BufRead> = if stream == "-" {
                Box::new(BufReader::new(io::stdin()))
            } else {
                Box::new(BufReader::new(File::open(&stream)?))
            };
            let log = output(out.as_deref())?;
            let events = events.map(|p| File::create(p).map(BufWriter::new)).transpose()?;
            let summary = run_monitor(&mut monitor, input, log, events)?;
            Ok(summary.exit_code())
        }
        Command::Fixture { name, dir } => {
            let f = crate::fixtures::by_name(&name).ok_or_else(|| {
                Error::Config(format!("unknown fixture `{name}`; known: {}", crate::fixtures::NAMES.join(", ")))
            })?;
            fs::create_dir_all(&dir)?;
            f.write_files(&dir)?;
            Ok(0)
        }
    }
}
