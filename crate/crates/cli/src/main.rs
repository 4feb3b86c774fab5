use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acl_dqn::domain::{generate_corpus, save_corpus, Ontology};
use acl_dqn::neural::QFunction;
use acl_dqn::orchestrator::{
    evaluate_policy, run_comparison, run_training, sweep_alpha, AgentKind, Environment, TrainConfig,
    DEFAULT_DATA_SEED, DEFAULT_EPOCHS,
};
use acl_dqn::student::Featurizer;
use acl_dqn::student::SystemActionSet;
use acl_dqn::user_sim::{KnowledgeBase, DEFAULT_KB_ROWS};
use acl_dqn::{Error, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod chat;

#[derive(Debug, Parser)]
#[command(name = "acl-dqn", version, about = "Curriculum-trained dialogue policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a tiered goal corpus.
    GenGoals {
        #[arg(long, default_value_t = DEFAULT_DATA_SEED)]
        seed: u64,
        /// Tier sizes as simple,medium,difficult.
        #[arg(long, default_value = "30,72,26", value_parser = parse_sizes)]
        sizes: (usize, usize, usize),
        /// Knowledge base the goals must be satisfiable against.
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic knowledge base.
    GenKb {
        #[arg(long, default_value_t = DEFAULT_DATA_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one agent and write its logs and checkpoints.
    Train {
        #[arg(long)]
        agent: AgentKind,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy evaluation of a student checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 50)]
        eval_dialogues: usize,
    },
    /// Train several agents over several seeds and aggregate the curves.
    Compare {
        #[arg(long, default_value = "dqn,acl-a,acl-b,acl-c", value_parser = parse_agents)]
        agents: List<AgentKind>,
        #[arg(long, default_value = "1..5", value_parser = parse_seeds)]
        seeds: List<u64>,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Schedule-C runs over several mastery thresholds.
    SweepAlpha {
        #[arg(long, default_value = "0.3,0.4,0.5,0.6,0.7,0.8", value_parser = parse_alphas)]
        alphas: List<f64>,
        #[arg(long, default_value = "1..5", value_parser = parse_seeds)]
        seeds: List<u64>,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Talk to a trained student through dialogue-act menus.
    Chat {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Label stored with each session record.
        #[arg(long)]
        agent: Option<AgentKind>,
        /// Seed for drawing goals.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Goal corpus (JSON lines); generated when absent.
    #[arg(long)]
    goals: Option<PathBuf>,
    /// Knowledge base (JSON lines); generated when absent.
    #[arg(long)]
    kb: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = 5)]
    eval_every: usize,
    #[arg(long, default_value_t = 50)]
    eval_dialogues: usize,
}

impl RunArgs {
    fn config(&self, agent: AgentKind) -> TrainConfig {
        TrainConfig {
            num_epochs: self.epochs,
            eval_every: self.eval_every,
            eval_dialogues: self.eval_dialogues,
            ..TrainConfig::new(agent)
        }
    }
}

/// A comma-separated flag value.
#[derive(Debug, Clone, PartialEq)]
struct List<T>(Vec<T>);

fn parse_list<T, F>(s: &str, what: &str, f: F) -> std::result::Result<Vec<T>, String>
where
    F: Fn(&str) -> Option<T>,
{
    let items: Option<Vec<T>> = s.split(',').map(|t| f(t.trim())).collect();
    match items {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(format!("expected a comma-separated list of {what}")),
    }
}

/// `a..b` (inclusive) or a comma list.
fn parse_seeds(s: &str) -> std::result::Result<List<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b): (u64, u64) = match (a.trim().parse(), b.trim().parse()) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return Err("expected a seed range like 1..5".into()),
        };
        if a > b {
            return Err(format!("empty seed range {s}"));
        }
        return Ok(List((a..=b).collect()));
    }
    parse_list(s, "seeds", |t| t.parse().ok()).map(List)
}

fn parse_alphas(s: &str) -> std::result::Result<List<f64>, String> {
    parse_list(s, "numbers", |t| t.parse::<f64>().ok().filter(|x| x.is_finite())).map(List)
}

fn parse_agents(s: &str) -> std::result::Result<List<AgentKind>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<AgentKind>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()
        .map(List)
}

fn parse_sizes(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    match parse_list(s, "tier sizes", |t| t.parse::<usize>().ok())?[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err("expected three tier sizes".into()),
    }
}

fn load_env(data: &DataArgs) -> Result<Environment> {
    for p in [&data.goals, &data.kb].into_iter().flatten() {
        if !p.is_file() {
            return Err(Error::Usage(format!("{} does not exist", p.display())));
        }
    }
    Environment::load(data.goals.as_deref(), data.kb.as_deref())
}

/// Loads a student checkpoint and checks it fits the environment.
fn load_student(path: &Path, env: &Environment) -> Result<QFunction> {
    let q = QFunction::load(path)?;
    let dim = Featurizer::new(env.ontology()).dim();
    let n_actions = SystemActionSet::new(env.ontology()).len();
    if q.input_dim() != dim || q.output_dim() != n_actions {
        return Err(Error::Checkpoint(format!(
            "network is {}x{}, environment needs {}x{}",
            q.input_dim(),
            q.output_dim(),
            dim,
            n_actions
        )));
    }
    Ok(q)
}

fn cmd_train(agent: AgentKind, seed: u64, alpha: Option<f64>, run: &RunArgs, out: &Path) -> Result<()> {
    let env = load_env(&run.data)?;
    let mut config = run.config(agent);
    if let Some(a) = alpha {
        config.alpha = a;
    }
    config.validate(&env.corpus)?;
    info!("training {agent} seed {seed} for {} epochs", config.num_epochs);
    let output = run_training(&config, &env, seed)?;
    output.metrics.write_csvs(out)?;
    output.student.save(&out.join("student.ckpt"))?;
    if let Some(t) = &output.teacher {
        t.save(&out.join("teacher.ckpt"))?;
    }
    match output.metrics.final_eval() {
        Some(r) => println!(
            "final success rate {:.4} (reward {:.2}, turns {:.2}) at epoch {}",
            r.success, r.reward, r.turns, r.epoch
        ),
        None => println!("no evaluation ran"),
    }
    Ok(())
}

fn cmd_eval(checkpoint: &Path, seed: u64, data: &DataArgs, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("eval-dialogues must be at least 1".into()));
    }
    let env = load_env(data)?;
    let q = load_student(checkpoint, &env)?;
    let s = evaluate_policy(&q, &env, n, &mut ChaCha8Rng::seed_from_u64(seed))?;
    println!(
        "success rate {:.4} (reward {:.2}, turns {:.2}) over {n} dialogues",
        s.success_rate, s.avg_reward, s.avg_turns
    );
    Ok(())
}

fn cmd_compare(agents: &[AgentKind], seeds: &[u64], run: &RunArgs, out: &Path) -> Result<()> {
    let env = load_env(&run.data)?;
    let configs: Vec<(String, TrainConfig)> =
        agents.iter().map(|&a| (a.label().to_string(), run.config(a))).collect();
    for (_, c) in &configs {
        c.validate(&env.corpus)?;
    }
    let report = run_comparison(&configs, seeds, &env)?;
    report.write_csvs(out, &env.corpus)?;
    for row in &report.stability {
        println!(
            "{}: final success mean {:.4} variance {:.5}",
            row.agent, row.mean_final_success, row.var_final_success
        );
    }
    Ok(())
}

fn cmd_sweep(alphas: &[f64], seeds: &[u64], run: &RunArgs, out: &Path) -> Result<()> {
    let env = load_env(&run.data)?;
    let base = run.config(AgentKind::AclC);
    for &a in alphas {
        TrainConfig { alpha: a, ..base.clone() }.validate(&env.corpus)?;
    }
    let report = sweep_alpha(&base, alphas, seeds, &env)?;
    report.write_csvs(out, &env.corpus)?;
    for row in &report.stability {
        println!("{}: final success mean {:.4}", row.agent, row.mean_final_success);
    }
    Ok(())
}

fn cmd_gen_goals(seed: u64, sizes: (usize, usize, usize), kb: Option<&Path>, out: &Path) -> Result<()> {
    let kb = match kb {
        Some(p) => KnowledgeBase::load(p, Ontology::movie_booking())?,
        None => KnowledgeBase::generate(DEFAULT_DATA_SEED, DEFAULT_KB_ROWS, Ontology::movie_booking()),
    };
    let corpus = generate_corpus(seed, sizes, &kb)?;
    fs::create_dir_all(out)?;
    let path = out.join("goals.jsonl");
    save_corpus(&corpus, kb.ontology(), &path)?;
    println!("wrote {} goals to {}", corpus.len(), path.display());
    Ok(())
}

fn cmd_gen_kb(seed: u64, out: &Path) -> Result<()> {
    let kb = KnowledgeBase::generate(seed, DEFAULT_KB_ROWS, Ontology::movie_booking());
    fs::create_dir_all(out)?;
    let path = out.join("kb.jsonl");
    kb.save(&path)?;
    println!("wrote {} rows to {}", kb.len(), path.display());
    Ok(())
}

fn cmd_chat(checkpoint: &Path, agent: Option<AgentKind>, seed: u64, data: &DataArgs, out: &Path) -> Result<()> {
    let env = load_env(data)?;
    let q = load_student(checkpoint, &env)?;
    let label = agent.map_or("unknown", |a| a.label());
    fs::create_dir_all(out)?;
    let log_path = out.join("chat_sessions.jsonl");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stdin = io::stdin();
    let mut io = chat::Prompter::new(stdin.lock(), io::stdout());
    loop {
        let goal = env.corpus.goal(rng.random_range(0..env.corpus.len()));
        let record = chat::run_session(&mut io, &env.kb, goal, label, chat::greedy(&q))?;
        let mut log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        serde_json::to_writer(&mut log, &record).map_err(io::Error::other)?;
        log.write_all(b"\n")?;
        if !io.confirm("Another session?")? {
            return Ok(());
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ACLDQN_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenGoals { seed, sizes, kb, out } => cmd_gen_goals(*seed, *sizes, kb.as_deref(), out),
        Command::GenKb { seed, out } => cmd_gen_kb(*seed, out),
        Command::Train {
            agent,
            seed,
            alpha,
            run,
            out,
        } => cmd_train(*agent, *seed, *alpha, run, out),
        Command::Eval {
            checkpoint,
            seed,
            data,
            eval_dialogues,
        } => cmd_eval(checkpoint, *seed, data, *eval_dialogues),
        Command::Compare { agents, seeds, run, out } => cmd_compare(&agents.0, &seeds.0, run, out),
        Command::SweepAlpha { alphas, seeds, run, out } => cmd_sweep(&alphas.0, &seeds.0, run, out),
        Command::Chat {
            checkpoint,
            agent,
            seed,
            data,
            out,
        } => cmd_chat(checkpoint, *agent, *seed, data, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) | Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
