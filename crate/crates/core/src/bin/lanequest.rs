//! Command-line driver: simulate fleets, detect events, estimate lanes,
//! learn anchors and score the results.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lanequest::config::Config;
use lanequest::eval::{
    accuracy_csv, cdf_csv, detection_csv, evaluate_many, gps_baseline, score_detections, sweep_csv, sweep_event_rate,
    DetectionScore, FleetReport, SweepTrip, Tally,
};
use lanequest::events::{read_events, write_events, DetectedEvent};
use lanequest::learn::AnchorDiagnostics;
use lanequest::pipeline::{detect_fleet, estimate, learn_fleet, reorient_trace};
use lanequest::preprocess::snap_all;
use lanequest::repo::AnchorStore;
use lanequest::sim::{generate_fleet, GroundTruth, Scenario};
use lanequest::trace::{parse_trace, write_trace, DriveTrace, RoadMap};
use lanequest::{presets, Error, Result};

#[derive(Parser)]
#[command(name = "lanequest", version, about = "Lane-level positioning from inertial event streams")]
struct Cli {
    /// Seed for simulation and sub-sampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Flat `key = value` parameter file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    City,
    Potholes,
    Tour,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a fleet of trips: map, traces and ground truth.
    Simulate {
        /// Scenario file; overrides --preset.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "city")]
        preset: Preset,
        #[arg(long, default_value_t = 10)]
        trips: usize,
    },
    /// Rotate phone-frame traces into the car frame and report map snapping.
    Preprocess {
        #[arg(long)]
        map: PathBuf,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Detect lane changes and anchor observations.
    Detect {
        #[arg(long)]
        map: PathBuf,
        /// Reorient each trace before detection.
        #[arg(long)]
        reorient: bool,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Run the lane filter over event files.
    Estimate {
        /// Anchor store; bootstrap priors only when absent.
        #[arg(long)]
        anchors: Option<PathBuf>,
        #[arg(required = true)]
        events: Vec<PathBuf>,
    },
    /// Learn an anchor store from a fleet of event files.
    Learn {
        #[arg(required = true)]
        events: Vec<PathBuf>,
    },
    /// Score lane estimates and detections against ground truth.
    Evaluate {
        #[arg(long)]
        anchors: Option<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        events: Vec<PathBuf>,
        /// One truth file per event file, in the same order.
        #[arg(long, num_args = 1.., required = true)]
        truth: Vec<PathBuf>,
        /// Traces for the GPS nearest-lane baseline (needs --map).
        #[arg(long, num_args = 1.., requires = "map")]
        traces: Vec<PathBuf>,
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Accuracy as detected events are thinned to target hourly rates.
    Sweep {
        #[arg(long)]
        anchors: Option<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        events: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        truth: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![5.0, 10.0, 30.0, 60.0, 120.0])]
        rates: Vec<f64>,
    },
    /// Merge or export anchor stores.
    Anchors {
        #[command(subcommand)]
        action: AnchorAction,
    },
}

#[derive(Subcommand)]
enum AnchorAction {
    /// Merge stores into `anchors.txt`; later files win on duplicate ids.
    Import {
        #[arg(required = true)]
        stores: Vec<PathBuf>,
    },
    /// Write a store as `anchors.csv`.
    Export { store: PathBuf },
}

fn out_path(out: &Path, input: &Path, ext: &str) -> PathBuf {
    let stem = input.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    out.join(format!("{stem}.{ext}"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_store(path: Option<&Path>) -> Result<AnchorStore> {
    path.map_or_else(|| Ok(AnchorStore::new()), AnchorStore::load)
}

fn load_events(paths: &[PathBuf]) -> Result<Vec<Vec<DetectedEvent>>> {
    paths.iter().map(read_events).collect()
}

fn load_truth(paths: &[PathBuf], expected: usize) -> Result<Vec<GroundTruth>> {
    if paths.len() != expected {
        return Err(Error::Validation(format!("{} event files but {} truth files", expected, paths.len())));
    }
    paths.iter().map(GroundTruth::load).collect()
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct LearnSummary {
    anchors: usize,
    noise: usize,
    without_belief: usize,
    sigmas: BTreeMap<String, f64>,
    diagnostics: Vec<AnchorDiagnostics>,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let out = cli.out.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match cli.command {
        Command::Simulate { scenario, preset, trips } => {
            let sc = match scenario {
                Some(p) => Scenario::load(p)?,
                None => match preset {
                    Preset::City => presets::city(cli.seed),
                    Preset::Potholes => presets::potholes(cli.seed),
                    Preset::Tour => presets::city_tour(cli.seed, 4),
                },
            };
            let fleet = generate_fleet(&sc, trips, cli.seed)?;
            sc.map.save(out.join("map.txt"))?;
            sc.save(out.join("scenario.txt"))?;
            let width = trips.saturating_sub(1).to_string().len().max(3);
            for (i, (trace, truth)) in fleet.iter().enumerate() {
                write_trace(trace, out.join(format!("trip_{i:0width$}.trace")))?;
                truth.save(out.join(format!("trip_{i:0width$}.truth")))?;
            }
            println!("simulated {trips} trips into {}", out.display());
        }
        Command::Preprocess { map, traces } => {
            let map = RoadMap::load(map)?;
            for path in &traces {
                let trace = reorient_trace(&parse_trace(path)?, &cfg)?;
                let snapped = snap_all(&trace.fixes, &map, cfg.preprocess.snap_radius_m);
                let dest = out_path(out, path, "car.trace");
                write_trace(&trace, &dest)?;
                println!("{}: {} of {} fixes on the map -> {}", path.display(), snapped.len(), trace.fixes.len(), dest.display());
            }
        }
        Command::Detect { map, reorient, traces: paths } => {
            let map = RoadMap::load(map)?;
            let traces: Vec<DriveTrace> = paths
                .iter()
                .map(|p| {
                    let t = parse_trace(p)?;
                    if reorient {
                        reorient_trace(&t, &cfg)
                    } else {
                        Ok(t)
                    }
                })
                .collect::<Result<_>>()?;
            let events = detect_fleet(&traces, &map, &cfg)?;
            for (path, ev) in paths.iter().zip(&events) {
                write_events(ev, out_path(out, path, "events"))?;
            }
            println!("{} events from {} traces", events.iter().map(Vec::len).sum::<usize>(), paths.len());
        }
        Command::Estimate { anchors, events } => {
            let store = load_store(anchors.as_deref())?;
            for path in &events {
                let run = estimate(&read_events(path)?, &store, &cfg)?;
                let mut text = String::new();
                for e in &run.estimates {
                    text.push_str(&format!("L\t{}\t{}", e.t, e.lane));
                    for p in e.belief.probs() {
                        text.push_str(&format!("\t{p}"));
                    }
                    text.push('\n');
                }
                write(&out_path(out, path, "lanes"), &text)?;
            }
            println!("estimated lanes for {} event files", events.len());
        }
        Command::Learn { events } => {
            let trips = load_events(&events)?;
            let (store, report) = learn_fleet(&trips, &cfg)?;
            store.save(out.join("anchors.txt"))?;
            let summary = LearnSummary {
                anchors: store.len(),
                noise: report.noise,
                without_belief: report.without_belief,
                sigmas: report.sigmas.iter().map(|(k, s)| (k.to_string(), *s)).collect(),
                diagnostics: report.diagnostics,
            };
            write(&out.join("learn.json"), &to_json(&summary))?;
            println!("learned {} anchors from {} trips", store.len(), trips.len());
        }
        Command::Evaluate { anchors, events, truth, traces, map } => {
            let store = load_store(anchors.as_deref())?;
            let trips = load_events(&events)?;
            let truths = load_truth(&truth, trips.len())?;
            let mut runs = Vec::with_capacity(trips.len());
            let mut detection: BTreeMap<String, DetectionScore> = BTreeMap::new();
            for (ev, tr) in trips.iter().zip(&truths) {
                runs.push((estimate(ev, &store, &cfg)?.estimates, tr.clone()));
                for (k, s) in score_detections(ev, tr) {
                    detection.entry(k.to_string()).or_default().add(&s);
                }
            }
            let gps = match map {
                Some(map) if !traces.is_empty() => {
                    if traces.len() != truths.len() {
                        return Err(Error::Validation(format!("{} truth files but {} traces", truths.len(), traces.len())));
                    }
                    let map = RoadMap::load(map)?;
                    let mut tally = Tally::default();
                    for (path, tr) in traces.iter().zip(&truths) {
                        tally.compare(gps_baseline(&parse_trace(path)?, &map, cfg.preprocess.snap_radius_m), tr);
                    }
                    Some(tally.report()?)
                }
                _ => None,
            };
            let report = FleetReport {
                trips: trips.len(),
                overall: evaluate_many(&runs, false)?,
                steady_state: evaluate_many(&runs, true).ok(),
                gps_baseline: gps,
                detection,
            };
            write(&out.join("accuracy.csv"), &accuracy_csv(&report))?;
            write(&out.join("cdf.csv"), &cdf_csv(&report))?;
            write(&out.join("detection.csv"), &detection_csv(&report.detection))?;
            write(&out.join("report.json"), &to_json(&report))?;
            println!(
                "exact {:.3} within-one {:.3} over {} trips",
                report.overall.exact_lane_accuracy, report.overall.within_one_lane_accuracy, report.trips
            );
        }
        Command::Sweep { anchors, events, truth, rates } => {
            let store = load_store(anchors.as_deref())?;
            let trips = load_events(&events)?;
            let truths = load_truth(&truth, trips.len())?;
            let sweep: Vec<SweepTrip> = trips
                .into_iter()
                .zip(truths)
                .map(|(events, truth)| {
                    let first = events.first().map_or(0.0, DetectedEvent::t);
                    let last = events
                        .iter()
                        .map(DetectedEvent::t)
                        .chain(truth.ledger.iter().map(|e| e.end))
                        .fold(first, f64::max);
                    SweepTrip {
                        duration_s: last - first.min(0.0),
                        events,
                        truth,
                    }
                })
                .collect();
            let points = sweep_event_rate(&sweep, &store, &rates, &cfg, cli.seed)?;
            write(&out.join("sweep.csv"), &sweep_csv(&points))?;
            for p in &points {
                println!("{:>8} /h  exact {:.3}", p.rate_per_hour, p.report.exact_lane_accuracy);
            }
        }
        Command::Anchors { action } => match action {
            AnchorAction::Import { stores } => {
                let mut merged = AnchorStore::new();
                for path in &stores {
                    let s = AnchorStore::load(path)?;
                    for a in s.iter() {
                        merged.insert(a.clone())?;
                    }
                    for (k, v) in s.sigmas() {
                        merged.set_sigma(*k, *v);
                    }
                }
                merged.save(out.join("anchors.txt"))?;
                println!("imported {} anchors", merged.len());
            }
            AnchorAction::Export { store } => {
                let s = AnchorStore::load(store)?;
                let mut text = String::from("id,kind,lat,lon,lanes,distribution,feature_mean,feature_spread,support\n");
                for a in s.iter() {
                    let dist: Vec<String> = a.lane_distribution.iter().map(|p| p.to_string()).collect();
                    text.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{}\n",
                        a.id,
                        a.kind,
                        a.centroid.lat,
                        a.centroid.lon,
                        a.lane_count(),
                        dist.join(" "),
                        a.feature_mean,
                        a.feature_spread,
                        a.support_count
                    ));
                }
                write(&out.join("anchors.csv"), &text)?;
                println!("exported {} anchors", s.len());
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lanequest: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
