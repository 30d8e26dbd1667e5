use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use vpsim::cases_io::{load_cases, save_cases};
use vpsim::config::Config;
use vpsim::corpus::{evaluate_corpus, parse_corpus, parse_evaluated, to_jsonl, DEFAULT_TRUNCATION};
use vpsim::manager::{ManagerParts, SessionManager};
use vpsim::report::{build_report, summary_text, write_report, Unit};
use vpsim::service::{serve, AppState};
use vpsim::store::SessionStore;
use vpsim_core::case::{generate_communication_traits, generate_draft_cases, CaseCollection};
use vpsim_core::safety::OnExhaustion;
use vpsim_core::{CaseSpec, ChallengingPatientType, Condition, View};

#[derive(Parser)]
#[command(name = "vpsim", version, about = "Adaptive virtual-patient communication trainer")]
struct Cli {
    /// Configuration file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Case authoring.
    #[command(subcommand)]
    Cases(CasesCommand),
    /// Run a scripted trainee through one session.
    Simulate {
        #[arg(long)]
        case: String,
        #[arg(long, default_value = "dynamic")]
        condition: String,
        /// One nurse utterance per line; blank lines and `#` comments skipped.
        #[arg(long)]
        nurse_script: PathBuf,
        /// Session event log to write (`<dir>/<id>.jsonl`); the file stem is
        /// the session id, and snapshot and transcripts land beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score recorded conversations with the three evaluator personas.
    EvalCorpus {
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TRUNCATION)]
        truncate: usize,
        /// Output JSON lines; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Curves, group tests and rater agreement over evaluated turns.
    Report {
        input: PathBuf,
        #[arg(long, default_value = "condition")]
        group_field: String,
        #[arg(long, value_enum, default_value_t = Unit::Turn)]
        unit: Unit,
        #[arg(long, default_value_t = DEFAULT_TRUNCATION)]
        truncate: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Export a stored session transcript.
    Export {
        session_id: String,
        #[arg(long)]
        log_dir: Option<PathBuf>,
        #[arg(long, default_value = "trainee")]
        view: String,
        #[arg(long)]
        json: bool,
    },
    /// Start the HTTP API.
    Serve,
}

#[derive(Subcommand)]
enum CasesCommand {
    /// Check a case collection file against the schema.
    Validate { file: PathBuf },
    /// Draft new cases with the model (status: draft, pending expert review).
    Generate {
        /// cognitive_impairment | emotionally_unstable | demanding | unreasonable_demands
        #[arg(long = "type")]
        patient_type: String,
        #[arg(long, default_value_t = 1)]
        count: u32,
        #[arg(long)]
        goal: String,
        #[arg(long)]
        literature: String,
        #[arg(long)]
        context: String,
        /// Also generate the communication summary and example expressions.
        #[arg(long)]
        traits: bool,
        /// Collection to append to (created when missing).
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_type(s: &str) -> Result<ChallengingPatientType> {
    ChallengingPatientType::ALL
        .into_iter()
        .find(|t| t.slug() == s)
        .or_else(|| ChallengingPatientType::from_label(s))
        .with_context(|| format!("unknown patient type {s:?}"))
}

fn read_script(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Cases(CasesCommand::Validate { file }) => {
            let c = load_cases(&file)?;
            println!("{}: {} case(s) valid", file.display(), c.cases.len());
        }
        Command::Cases(CasesCommand::Generate { patient_type, count, goal, literature, context, traits, out }) => {
            let spec = CaseSpec {
                training_goal: goal,
                literature_notes: literature,
                context_notes: context,
                patient_type: parse_type(&patient_type)?,
                scenario_count: count,
            };
            let gateway = config.build_gateway()?;
            let templates = config.load_templates()?;
            let mut drafts = generate_draft_cases(&spec, &*gateway, &templates)?;
            if traits {
                for d in &mut drafts {
                    generate_communication_traits(d, &*gateway, &templates)?.apply_to(d);
                }
            }
            let mut collection = if out.exists() { load_cases(&out)? } else { CaseCollection::default() };
            let taken: Vec<String> = collection.cases.iter().map(|c| c.id.clone()).collect();
            for mut d in drafts {
                let base = d.id.clone();
                let mut n = 1;
                while taken.contains(&d.id) || collection.cases.iter().any(|c| c.id == d.id) {
                    n += 1;
                    d.id = format!("{base}-{n}");
                }
                println!("drafted {} ({})", d.id, d.name);
                collection.cases.push(d);
            }
            save_cases(&out, &collection)?;
        }
        Command::Simulate { case, condition, nurse_script, out } => {
            let id = out
                .file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.strip_suffix(".jsonl").unwrap_or(n).to_owned())
                .filter(|id| vpsim::store::valid_id(id))
                .with_context(|| format!("--out {} must be <dir>/<session-id>.jsonl", out.display()))?;
            let out_dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
            let store = SessionStore::open(&out_dir)?;
            if store.exists(&id) {
                bail!("{} already exists", store.log_path(&id).display());
            }
            let condition = Condition::parse(&condition).with_context(|| format!("unknown condition {condition:?}"))?;
            let mut policy = config.safety.policy();
            policy.on_exhaustion = OnExhaustion::FailTurn;
            let manager = SessionManager::new(ManagerParts {
                store,
                cases: config.load_cases()?,
                templates: config.load_templates()?,
                directions: config.load_directions()?,
                policy,
                turn_cap: config.session.turn_cap,
                gateway: config.build_gateway()?,
            })
            .with_ids({
                let id = id.clone();
                Arc::new(move || id.clone())
            });
            manager.create(&case, condition)?;
            let mut failed = None;
            for line in read_script(&nurse_script)? {
                match manager.post_message(&id, &line) {
                    Ok(out) => {
                        if out.closed {
                            break;
                        }
                    }
                    Err(e) => {
                        failed = Some(e);
                        break;
                    }
                }
            }
            let mut state = manager.state(&id)?;
            if state.is_open() {
                state = manager.close(&id)?;
            }
            for view in [View::Trainee, View::Instructor] {
                let export = state.export(view);
                let stem = if view == View::Trainee { "trainee" } else { "instructor" };
                std::fs::write(out_dir.join(format!("{id}.{stem}.txt")), export.to_text())?;
                std::fs::write(out_dir.join(format!("{id}.{stem}.json")), serde_json::to_string_pretty(&export)?)?;
            }
            println!("{}", state.export(View::Instructor).to_text());
            println!("session log: {}", manager.store().log_path(&id).display());
            if let Some(e) = failed {
                bail!("turn {} failed: {e}", state.nurse_turns() + 1);
            }
        }
        Command::EvalCorpus { input, truncate, out } => {
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let records = parse_corpus(&text)?;
            let gateway = config.build_gateway()?;
            let rows = evaluate_corpus(&records, &config.load_cases()?, &*gateway, &config.load_templates()?, truncate)?;
            let body = to_jsonl(&rows);
            match out {
                Some(p) => std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{body}"),
            }
        }
        Command::Report { input, group_field, unit, truncate, out_dir } => {
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let rows = parse_evaluated(&text)?;
            let report = build_report(&rows, &group_field, unit, truncate)?;
            write_report(&report, &out_dir)?;
            print!("{}", summary_text(&report));
        }
        Command::Export { session_id, log_dir, view, json } => {
            let view = View::parse(&view).with_context(|| format!("unknown view {view:?}"))?;
            let store = SessionStore::open(log_dir.unwrap_or(config.session.log_dir.clone()))?;
            let export = store.load(&session_id)?.export(view);
            if json {
                println!("{}", serde_json::to_string_pretty(&export)?);
            } else {
                print!("{}", export.to_text());
            }
        }
        Command::Serve => {
            if config.auth.tokens.is_empty() {
                bail!("no [auth.tokens] configured; refusing to serve without authentication");
            }
            let manager = SessionManager::new(ManagerParts {
                store: SessionStore::open(&config.session.log_dir)?,
                cases: config.load_cases()?,
                templates: config.load_templates()?,
                directions: config.load_directions()?,
                policy: config.safety.policy(),
                turn_cap: config.session.turn_cap,
                gateway: config.build_gateway()?,
            });
            let state = Arc::new(AppState { manager, tokens: config.auth.tokens.clone() });
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(state, &config.bind))?;
        }
    }
    Ok(())
}
