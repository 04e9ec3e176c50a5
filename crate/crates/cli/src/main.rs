use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pulse_cli::commands::{self, AnalyzeArgs, BenchInput, SimulateArgs};
use pulse_cli::server::{self, AppState};
use pulse_cli::{exit_code, kind_label};
use pulse_core::beat_analysis::HrWindow;
use pulse_core::pipeline::PipelineConfig;
use pulse_core::synth::MotionCoupling;
use pulse_core::Result;

#[derive(Parser)]
#[command(name = "pulse", version, about = "Remote photoplethysmography: heart rate and HRV from face colour traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate beats, heart rate and HRV from a trace CSV.
    Analyze {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        hop_s: Option<f64>,
        /// 15, 30, 16 or inf (any positive length is accepted).
        #[arg(long)]
        hr_window: Option<HrWindow>,
        #[arg(long)]
        no_motion_suppression: bool,
        /// JSON pipeline configuration; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Leave per-stage timings out of the result file.
        #[arg(long)]
        no_timing: bool,
    },
    /// Score an analysis result against a cleaned annotation file.
    Evaluate {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value = "15,30,16,inf")]
        windows: String,
        #[arg(long, default_value_t = 1.0)]
        stride_s: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic trace with known beats.
    Simulate(SimulateCli),
    /// Serve annotation sessions for reference waveforms.
    Clean {
        #[arg(long = "signal", required = true, num_args = 1..)]
        signals: Vec<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        store: PathBuf,
        /// Directory with the annotator UI build.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// Proposal threshold as a fraction of the waveform standard deviation.
        #[arg(long, default_value_t = AppState::default_delta_factor())]
        delta_factor: f64,
    },
    /// Time the pipeline stages.
    Bench {
        #[arg(long, conflicts_with = "synth_preset", required_unless_present = "synth_preset")]
        trace: Option<PathBuf>,
        #[arg(long)]
        synth_preset: Option<String>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long)]
        hop_s: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Coupling {
    None,
    Intensity,
    Chromatic,
}

#[derive(Args)]
struct SimulateCli {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    hr: Option<f64>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    pulse_amp: Option<f64>,
    #[arg(long)]
    ibi_mod_freq: Option<f64>,
    #[arg(long)]
    ibi_mod_amp: Option<f64>,
    #[arg(long)]
    motion_freq: Option<f64>,
    #[arg(long)]
    motion_amp: Option<f64>,
    #[arg(long, value_enum)]
    motion_coupling: Option<Coupling>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze {
            trace,
            out,
            hop_s,
            hr_window,
            no_motion_suppression,
            config,
            no_timing,
        } => {
            let r = commands::run_analyze(&AnalyzeArgs {
                trace,
                out,
                config,
                hop_s,
                hr_window,
                no_motion_suppression,
                no_timing,
            })?;
            println!("{} beats", r.beats.len());
        }
        Command::Evaluate {
            result,
            truth,
            windows,
            stride_s,
            out,
        } => {
            let windows = commands::parse_windows(&windows)?;
            let report = commands::run_evaluate(&result, &truth, &windows, stride_s, &out)?;
            for w in &report.hr {
                println!(
                    "window {}: MAE {:.3} ± {:.3} bpm, coverage {:.3}",
                    w.window, w.mae_bpm, w.std_bpm, w.coverage
                );
            }
        }
        Command::Simulate(s) => {
            let cfg = commands::run_simulate(&SimulateArgs {
                preset: s.preset,
                hr: s.hr,
                rate: s.rate,
                pulse_amp: s.pulse_amp,
                ibi_mod_freq: s.ibi_mod_freq,
                ibi_mod_amp: s.ibi_mod_amp,
                motion_freq: s.motion_freq,
                motion_amp: s.motion_amp,
                motion_coupling: s.motion_coupling.map(|c| match c {
                    Coupling::None => MotionCoupling::None,
                    Coupling::Intensity => MotionCoupling::Intensity,
                    Coupling::Chromatic => MotionCoupling::Chromatic,
                }),
                noise: s.noise,
                duration: s.duration,
                seed: s.seed,
                out: s.out.clone(),
            })?;
            println!("wrote {} s at {} Hz to {}", cfg.duration_s, cfg.rate, s.out.display());
        }
        Command::Clean {
            signals,
            port,
            host,
            store,
            static_dir,
            delta_factor,
        } => {
            let state = Arc::new(AppState::load(&signals, &store, delta_factor)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let addr = SocketAddr::new(host, port);
                let listener = server::bind(addr).await?;
                eprintln!("serving {} session(s) on http://{addr}", state.session_ids().len());
                server::serve(listener, state, static_dir, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
            })?;
        }
        Command::Bench {
            trace,
            synth_preset,
            runs,
            hop_s,
            out,
        } => {
            let input = match (trace, synth_preset) {
                (Some(t), _) => BenchInput::Trace(t),
                (None, Some(p)) => BenchInput::Preset(p),
                (None, None) => unreachable!("clap requires one input"),
            };
            let mut config = PipelineConfig::default();
            if let Some(h) = hop_s {
                config.hop_s = h;
            }
            let report = commands::run_bench(&input, &config, runs)?;
            let text = report.to_json()?;
            match out {
                Some(p) => std::fs::write(p, &text)?,
                None => print!("{text}"),
            }
            eprintln!(
                "{} frames, {:.4} ms/frame, {:.0}x real time",
                report.n_frames, report.ms_per_frame, report.realtime_factor
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PULSE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pulse: error[{}]: {e}", kind_label(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
