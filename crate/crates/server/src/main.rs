use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gazeboard_core::config::AppConfig;
use gazeboard_core::engine::{replay, to_jsonl, EventKind};
use gazeboard_core::eval::{self, build_condition_report, compare_conditions, evaluate_samples, ReportOptions};
use gazeboard_core::ids::{Mode, ParticipantId, SessionId};
use gazeboard_core::runtime::{Seat, SessionSetup};
use gazeboard_core::seed;
use gazeboard_core::sim::{simulate_session, PlayerPolicy};
use gazeboard_core::store::{
    export_dataset, make_fold_split, read_manifest, EyetrackerFilter, ExportFilter, Participant, Store, StoreOptions,
};
use gazeboard_server::app::{now_ms, serve, Hub};
use gazeboard_server::host::{replay_journal, HostConfig, JournalLine};

#[derive(Parser)]
#[command(name = "gazeboard", version, about = "Gaze-labeling letter board game: server and dataset tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArg {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<AppConfig> {
        match &self.config {
            Some(p) => Ok(AppConfig::load(p)?),
            None => Ok(AppConfig::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Host game sessions over WebSocket.
    Serve {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Reconnect grace period in seconds.
        #[arg(long, default_value_t = 120)]
        grace_s: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides `store_dir` from the config.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Keep sessions in memory only.
        #[arg(long)]
        no_store: bool,
    },
    /// Angular-error report from stored samples and eye-tracker records.
    Evaluate {
        #[arg(long)]
        store: PathBuf,
        /// Eye-tracker records (JSON lines); the records kept in the store when omitted.
        #[arg(long)]
        eyetracker: Option<PathBuf>,
        #[arg(long)]
        condition: Mode,
        /// z-score threshold for outlier removal.
        #[arg(long)]
        remove_outliers: Option<f64>,
        #[arg(long)]
        compare: Option<Mode>,
        /// Directory for report.json and the CSV tables.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Copy samples and images into a dataset directory with a manifest.
    Export {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = EtFilter::Exclude)]
        eyetracker: EtFilter,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, default_value = "dataset")]
        dataset_id: String,
    },
    /// Participant-level k-fold split of an exported dataset.
    Split {
        /// Export directory holding manifest.json.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 3)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fill a store with simulated sessions.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_enum, default_value_t = SimMode::Gamified)]
        mode: SimMode,
        /// Gamified pairs, or standard-mode participants.
        #[arg(long, default_value_t = 4)]
        sessions: usize,
        /// How many participants wear the eye tracker (the first ones).
        #[arg(long, default_value_t = 0)]
        wearers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Players who reject, guess wrong and time out more often.
        #[arg(long)]
        erratic: bool,
    },
    /// Replay a stored session journal and compare the event log.
    Replay {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        session: String,
        /// Seed the server was started with.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EtFilter {
    Exclude,
    Only,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimMode {
    Gamified,
    Standard,
}

fn host_config(cfg: &AppConfig, grace_s: u64, seed: u64) -> Result<HostConfig> {
    Ok(HostConfig {
        installation: Arc::new(cfg.installation()?),
        drivers: cfg.drivers.clone(),
        eyetracker: cfg.eyetracker.clone(),
        game: cfg.game.clone(),
        grace_ms: grace_s * 1000,
        seed,
    })
}

fn open_store(path: &Path) -> Result<Store> {
    Store::open(path, StoreOptions::default()).with_context(|| format!("opening store {}", path.display()))
}

/// The server logs to stdout; the batch tools keep stdout for their output.
fn init_logging(stdout: bool) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    let fmt = tracing_subscriber::fmt().with_env_filter(filter);
    if stdout {
        fmt.init();
    } else {
        fmt.with_writer(std::io::stderr).init();
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    init_logging(matches!(cli.command, Command::Serve { .. }));
    match cli.command {
        Command::Serve { config, listen, grace_s, seed, store, no_store } => {
            let cfg = config.load()?;
            let hc = host_config(&cfg, grace_s, seed)?;
            let store = if no_store {
                None
            } else {
                let dir = store.unwrap_or(cfg.store_dir.clone());
                let inst = &hc.installation;
                Some(Store::create(&dir, &inst.layout, &inst.normalization, StoreOptions::default())?)
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(listen).await.with_context(|| format!("binding {listen}"))?;
                tracing::info!(addr = %listener.local_addr()?, "listening");
                let hub = Hub::new(hc, store);
                serve(listener, hub, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await?;
                Ok(())
            })
        }
        Command::Evaluate { store, eyetracker, condition, remove_outliers, compare, out } => {
            let st = open_store(&store)?;
            let samples = st.all_samples()?;
            let records = match eyetracker {
                Some(p) => eval::read_eval_records(&p)?,
                None => st.all_eval_records()?,
            };
            let evaluation = evaluate_samples(&samples, &records, st.layout());
            let options = ReportOptions { remove_outliers_z: remove_outliers, ..Default::default() };
            let mut main = build_condition_report(&evaluation, condition, &options)?;
            let mut reports = Vec::new();
            if let Some(other) = compare {
                let mut o = build_condition_report(&evaluation, other, &options)?;
                main.comparison = Some(compare_conditions(&main, &o)?);
                o.comparison = Some(compare_conditions(&o, &main)?);
                reports.push(main);
                reports.push(o);
            } else {
                reports.push(main);
            }
            print!("{}", eval::render_text(&reports));
            if let Some(dir) = out {
                eval::write_report_files(&dir, &reports)?;
            }
            Ok(())
        }
        Command::Export { store, out, eyetracker, mode, dataset_id } => {
            let st = open_store(&store)?;
            let filter = ExportFilter {
                eyetracker: match eyetracker {
                    EtFilter::Exclude => EyetrackerFilter::Exclude,
                    EtFilter::Only => EyetrackerFilter::Only,
                    EtFilter::All => EyetrackerFilter::All,
                },
                mode,
                participants: None,
            };
            let m = export_dataset(&st, &filter, &out, &dataset_id, now_ms())?;
            println!(
                "exported {} samples from {} participants ({} eye-tracker samples) to {}",
                m.samples.len(),
                m.participants.len(),
                m.eyetracker_sample_count(),
                out.display()
            );
            Ok(())
        }
        Command::Split { dataset, folds, seed, out } => {
            let m = read_manifest(&dataset)?;
            let split = make_fold_split(&m.participants, folds, seed)?;
            let text = serde_json::to_string_pretty(&split)? + "\n";
            eprintln!("eye-tracker wearers per fold: {:?}", split.eyetracker_counts(&m.participants));
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Simulate { config, store, mode, sessions, wearers, seed, erratic } => {
            let cfg = config.load()?;
            let inst = Arc::new(cfg.installation()?);
            let st = Store::create(&store, &inst.layout, &inst.normalization, StoreOptions::default())?;
            let (mode, seats) = match mode {
                SimMode::Gamified => (Mode::Gamified, 2),
                SimMode::Standard => (Mode::Standard, 1),
            };
            let policy = if erratic { PlayerPolicy::erratic() } else { PlayerPolicy::default() };
            let tracker = cfg.eyetracker.clone().unwrap_or_default();
            let start = now_ms();
            let mut total = 0;
            for i in 0..sessions {
                let session_id = SessionId::new(format!("sim-{seed}-{i:03}"));
                let seats: Vec<Seat> = (0..seats)
                    .map(|j| {
                        let n = i * seats + j;
                        Seat {
                            participant_id: ParticipantId::new(format!("sim-{seed}-p{n:03}")),
                            wearing_eyetracker: n < wearers,
                        }
                    })
                    .collect();
                for s in &seats {
                    st.upsert_participant(Participant {
                        participant_id: s.participant_id.clone(),
                        wearing_eyetracker: s.wearing_eyetracker,
                        exclude_from_dataset: false,
                        registered_at_ms: start,
                    })?;
                }
                let ids: Vec<ParticipantId> = seats.iter().map(|s| s.participant_id.clone()).collect();
                let sink = st.open_session(&session_id, mode, &ids, start)?;
                let setup = SessionSetup {
                    session_id: session_id.clone(),
                    mode,
                    seats,
                    config: cfg.game.clone(),
                    rng_seed: seed::derive(seed, session_id.as_str(), 0),
                };
                let sim = simulate_session(Arc::clone(&inst), setup, &cfg.drivers, Some(&tracker), &policy, sink, start)
                    .with_context(|| format!("simulating {session_id}"))?;
                total += sim.runtime.persisted_count();
                println!("{session_id}: {} samples, score {}", sim.runtime.persisted_count(), sim.runtime.session().state().score);
            }
            println!("{total} samples in {}", store.display());
            Ok(())
        }
        Command::Replay { config, store, session, seed } => {
            let cfg = config.load()?;
            let st = open_store(&store)?;
            let sid = SessionId::new(session);
            let journal: Vec<JournalLine> = st.read_journal(&sid)?;
            if journal.is_empty() {
                // simulated sessions have no host journal; check the event log alone
                let events = st.read_events(&sid)?;
                let Some(EventKind::GameStarted { config: game, .. }) = events.first().map(|e| &e.kind) else {
                    bail!("session {sid} has neither a journal nor a started event log");
                };
                let session = replay(&events, game).with_context(|| format!("replaying {sid}"))?;
                if st.event_log_bytes(&sid)? != to_jsonl(session.events()).as_bytes() {
                    bail!("{sid}: event log does not round-trip");
                }
                println!("{sid}: no journal; {} events replayed through the engine", events.len());
                return Ok(());
            }
            let hc = Arc::new(host_config(&cfg, 0, seed)?);
            let (host, _) = replay_journal(hc, sid.clone(), &journal).map_err(|e| anyhow::anyhow!("{e}"))?;
            let stored = st.event_log_bytes(&sid)?;
            let replayed = to_jsonl(host.events());
            if stored == replayed.as_bytes() {
                println!("{sid}: {} journal lines replayed, {} events identical", journal.len(), host.events().len());
                Ok(())
            } else {
                bail!("{sid}: replayed event log differs from the stored one")
            }
        }
    }
}
