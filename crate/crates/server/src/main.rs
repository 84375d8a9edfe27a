use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vdesk_core::grounding::{
    aggregate, area_buckets, bucket_table, group_table, load_dataset, load_predictions, score_all,
    GROUP_FIELDS,
};
use vdesk_core::harness::{
    critic_accuracy, load_critic_records, load_suite, policy_by_name, run_local_suite,
};
use vdesk_core::rfb::{MockDesktop, Scenario};
use vdesk_core::tools::{scan, write_docs};
use vdesk_server::ServerConfig;

#[derive(Parser)]
#[command(name = "vdesk", version, about = "Agent desktop runtime over VNC")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve the session API.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the scripted mock RFB server until interrupted.
    MockDesktop {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's listen address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Run a task suite offline against a mock desktop.
    Run {
        #[arg(long)]
        suite: PathBuf,
        /// null or scripted.
        #[arg(long, default_value = "null")]
        policy: String,
        #[arg(long)]
        solutions: Option<PathBuf>,
        /// Mock desktop scenario; a blank 320x240 screen by default.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Comma-separated task ids; all tasks by default.
        #[arg(long, value_delimiter = ',')]
        tasks: Vec<String>,
        #[arg(long)]
        level: Option<u8>,
        /// Where sandboxes and frames go.
        #[arg(long)]
        work: Option<PathBuf>,
        /// Writes one JSON summary per task.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Agreement between critic predictions and ground truth.
    ScoreCritic {
        #[arg(long)]
        records: PathBuf,
    },
    /// Grounding datasets and prediction scoring.
    #[command(subcommand)]
    Grounding(GroundingCmd),
    /// Tool library inspection.
    #[command(subcommand)]
    Tools(ToolsCmd),
}

#[derive(Subcommand)]
enum GroundingCmd {
    /// Check every record of a dataset.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Score predictions and print success-rate tables.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Fields to group by: platform, application, click_type.
        #[arg(long, value_delimiter = ',', default_value = "platform,application")]
        group_by: Vec<String>,
        /// Ascending bbox-area edges in pixels², e.g. 400,2500.
        #[arg(long, value_delimiter = ',')]
        edges: Vec<u64>,
        /// Emit JSON instead of tables.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum ToolsCmd {
    /// List tools and header problems.
    Scan {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Render Markdown docs for every tool.
    Docs {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn dispatch(cmd: Cmd) -> Result<ExitCode, String> {
    match cmd {
        Cmd::Serve { config } => {
            let cfg = ServerConfig::load(&config)?;
            let rt = tokio::runtime::Runtime::new().map_err(err)?;
            rt.block_on(vdesk_server::serve(cfg))?;
        }
        Cmd::MockDesktop { scenario, listen } => {
            let mut sc = Scenario::load(&scenario).map_err(err)?;
            if listen.is_some() {
                sc.listen = listen;
            }
            let mock = MockDesktop::start(sc).map_err(err)?;
            println!("mock desktop listening on {}", mock.addr());
            loop {
                std::thread::park();
            }
        }
        Cmd::Run {
            suite,
            policy,
            solutions,
            scenario,
            tasks,
            level,
            work,
            out,
        } => {
            let mut all = load_suite(&suite).map_err(err)?;
            if let Some(bad) = tasks.iter().find(|id| !all.iter().any(|t| &t.id == *id)) {
                return Err(format!("unknown task {bad}"));
            }
            all.retain(|t| {
                (tasks.is_empty() || tasks.contains(&t.id)) && level.is_none_or(|l| t.level == l)
            });
            let scenario = match scenario {
                Some(p) => Scenario::load(&p).map_err(err)?,
                None => Scenario::new(320, 240),
            };
            let mut policy = policy_by_name(&policy, solutions.as_deref()).map_err(err)?;
            let work = work.unwrap_or_else(|| {
                std::env::temp_dir().join(format!("vdesk-run-{}", std::process::id()))
            });
            let results = run_local_suite(&all, &scenario, policy.as_mut(), &work).map_err(err)?;
            let mut sink = match &out {
                Some(p) => Some(std::fs::File::create(p).map_err(err)?),
                None => None,
            };
            for (s, _) in &results {
                let verdict = match s.success {
                    Some(true) => "success",
                    Some(false) => "failure",
                    None => "unjudged",
                };
                println!(
                    "{:<24} L{}  {:<9} {:>2} steps  {}",
                    s.task_id, s.level, verdict, s.steps, s.feedback
                );
                if let Some(f) = sink.as_mut() {
                    writeln!(f, "{}", serde_json::to_string(s).map_err(err)?).map_err(err)?;
                }
            }
            for l in 1..=3u8 {
                let judged: Vec<_> = results
                    .iter()
                    .filter(|(s, _)| s.level == l && s.success.is_some())
                    .collect();
                if judged.is_empty() {
                    continue;
                }
                let ok = judged.iter().filter(|(s, _)| s.success == Some(true)).count();
                println!(
                    "level {l}: {ok}/{} ({:.1}%)",
                    judged.len(),
                    100.0 * ok as f64 / judged.len() as f64
                );
            }
            println!("work dir: {}", work.display());
        }
        Cmd::ScoreCritic { records } => {
            let recs = load_critic_records(&records).map_err(err)?;
            let acc = critic_accuracy(&recs).map_err(err)?;
            let agree = recs.iter().filter(|r| r.predicted_success == r.actual_success).count();
            println!("critic accuracy: {agree}/{} = {acc}", recs.len());
        }
        Cmd::Grounding(GroundingCmd::Validate { dataset }) => {
            let samples = load_dataset(&dataset).map_err(err)?;
            println!("{} valid samples", samples.len());
        }
        Cmd::Grounding(GroundingCmd::Eval {
            dataset,
            predictions,
            group_by,
            edges,
            json,
        }) => {
            let samples = load_dataset(&dataset).map_err(err)?;
            let preds = load_predictions(&predictions).map_err(err)?;
            let report = score_all(&samples, &preds).map_err(err)?;
            let fields: Vec<&str> = group_by.iter().map(String::as_str).filter(|s| !s.is_empty()).collect();
            if let Some(bad) = fields.iter().find(|f| !GROUP_FIELDS.contains(f)) {
                return Err(format!("unknown group field {bad}"));
            }
            let overall = aggregate(&report.results, &samples, &[]).map_err(err)?;
            let groups = aggregate(&report.results, &samples, &fields).map_err(err)?;
            let buckets = if edges.is_empty() {
                None
            } else {
                Some(area_buckets(&report.results, &samples, &edges).map_err(err)?)
            };
            if json {
                let doc = serde_json::json!({
                    "results": report.results,
                    "unpredicted": report.unpredicted,
                    "overall": overall,
                    "groups": groups,
                    "buckets": buckets,
                });
                println!("{}", serde_json::to_string_pretty(&doc).map_err(err)?);
            } else {
                print!("{}", group_table(&[], &overall));
                if !fields.is_empty() {
                    println!();
                    print!("{}", group_table(&fields, &groups));
                }
                if let Some(b) = &buckets {
                    println!();
                    print!("{}", bucket_table(b));
                }
                if !report.unpredicted.is_empty() {
                    println!("\n{} samples have no prediction", report.unpredicted.len());
                }
            }
        }
        Cmd::Tools(ToolsCmd::Scan { dir }) => {
            let res = scan(&dir);
            for t in &res.tools {
                println!(
                    "{:<20} v{}  {}",
                    t.manifest.name, t.manifest.version, t.manifest.description
                );
            }
            for d in &res.diagnostics {
                eprintln!("{}", serde_json::to_string(d).map_err(err)?);
            }
            if !res.diagnostics.is_empty() {
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::Tools(ToolsCmd::Docs { dir, out }) => {
            let res = scan(&dir);
            for p in write_docs(&res.docs, &out).map_err(err)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
