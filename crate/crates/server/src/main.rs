use std::io::{BufRead, Write as _};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use twinflow_core::harness::{Classification, ScenarioSuite, SuiteRunner};
use twinflow_core::metrics::{render_csv, render_table, MetricsRecorder};
use twinflow_core::model::Role;
use twinflow_core::persistence::TranscriptStore;
use twinflow_server::backends::scenario_factory;
use twinflow_server::service::{router, AppState};
use twinflow_server::settings::Settings;

#[derive(Parser)]
#[command(name = "twinflow", version, about = "Conversational digital-twin session engine")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Settings file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    stt: Option<String>,
    #[arg(long, global = true)]
    vision: Option<String>,
    #[arg(long, global = true)]
    llm: Option<String>,
    #[arg(long, global = true)]
    tts: Option<String>,
    /// Seed for idle-animation scheduling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Talk to a running service from the terminal.
    Chat {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        url: String,
        #[arg(long)]
        session: Option<String>,
        /// Continue a stored session instead of starting a new one.
        #[arg(long)]
        resume: bool,
    },
    /// Run a scenario suite and print the per-phase outcome table.
    Eval {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        mock_script: Option<PathBuf>,
        /// Directory for report.txt, phases.csv and attempts.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        parallel: bool,
    },
    /// Summarize stage latencies across stored transcripts.
    Report {
        #[arg(long)]
        csv: bool,
    },
}

impl Global {
    fn settings(&self) -> anyhow::Result<Settings> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        if let Some(d) = &self.data_dir {
            s.data_dir = d.clone();
        }
        let b = &mut s.session.backends;
        for (slot, value) in
            [(&mut b.stt, &self.stt), (&mut b.vision, &self.vision), (&mut b.llm, &self.llm), (&mut b.tts, &self.tts)]
        {
            if let Some(v) = value {
                *slot = v.clone();
            }
        }
        s.validate()?;
        Ok(s)
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    match runtime.block_on(run(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

async fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut settings = cli.global.settings()?;
    match cli.command {
        Command::Serve { bind } => {
            if let Some(b) = bind {
                settings.bind = b;
            }
            let addr = settings.bind.clone();
            let app = router(AppState::new(settings, cli.global.seed)?);
            let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
            tracing::info!(%addr, "listening");
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    tokio::signal::ctrl_c().await.ok();
                })
                .await?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Chat { url, session, resume } => chat(&url, session, resume).await,
        Command::Eval { suite, mock_script, out, parallel } => {
            if mock_script.is_some() {
                settings.mock_script = mock_script;
            }
            let script = settings.load_mock_script()?;
            let text = std::fs::read_to_string(&suite).with_context(|| format!("reading {}", suite.display()))?;
            let parsed = ScenarioSuite::parse(&text, settings.session.feedback_attempt_limit)?;
            let factory = scenario_factory(settings.session.clone(), script, settings.http_llm.clone());
            let result = SuiteRunner::new(settings.session, factory).parallel(parallel).run(&parsed).await?;
            print!("{}", result.report.render_table());
            if let Some(dir) = out {
                result.report.write_artifacts(&dir).with_context(|| format!("writing {}", dir.display()))?;
            }
            let failed = result.outcomes.iter().any(|o| o.classification == Classification::Failure);
            Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Report { csv } => {
            let store = TranscriptStore::open(&settings.data_dir)?;
            let metrics = MetricsRecorder::new();
            for id in store.list_sessions()? {
                for turn in store.recover(&id)? {
                    if let (Role::Assistant, Some(l)) = (turn.role, turn.stage_latencies) {
                        metrics.record(&id, l)?;
                    }
                }
            }
            if metrics.is_empty() {
                eprintln!("no assistant turns with latency records in {}", settings.data_dir.display());
                return Ok(ExitCode::FAILURE);
            }
            let rows = metrics.summarize_all()?;
            print!("{}", if csv { render_csv(&rows) } else { render_table(&rows) });
            Ok(ExitCode::SUCCESS)
        }
    }
}

async fn chat(url: &str, session: Option<String>, resume: bool) -> anyhow::Result<ExitCode> {
    let url = url.trim_end_matches('/');
    let client = reqwest::Client::new();
    let created: Value = client
        .post(format!("{url}/sessions"))
        .json(&json!({ "session_id": session, "resume": resume }))
        .send()
        .await?
        .error_for_status()?
        .json()
        .await?;
    let id = created["session_id"].as_str().context("server returned no session_id")?.to_string();
    eprintln!("session {id}; type a message, empty line or EOF to quit");

    let stdin = std::io::stdin();
    loop {
        eprint!("> ");
        std::io::stderr().flush().ok();
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 || line.trim().is_empty() {
            break;
        }
        let resp =
            client.post(format!("{url}/sessions/{id}/turns")).json(&json!({ "text": line.trim() })).send().await?;
        let status = resp.status();
        let body: Value = resp.json().await?;
        if status.is_success() {
            println!("{}", body["assistant_turn"]["text"].as_str().unwrap_or_default());
        } else {
            eprintln!("[{status}] {}", body["message"].as_str().unwrap_or_default());
        }
    }
    Ok(ExitCode::SUCCESS)
}
