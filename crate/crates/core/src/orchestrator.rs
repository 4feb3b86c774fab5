//! Training loop, evaluation and the multi-run experiment drivers.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::curriculum::{CurriculumController, PhaseChange, Schedule, DEFAULT_ALPHA, DEFAULT_MASTERY_WINDOW};
use crate::domain::{generate_corpus, load_corpus, GoalCorpus, Ontology, Tier, DEFAULT_TIER_SIZES};
use crate::error::{Error, Result};
use crate::neural::{Optimizer, QFunction, DEFAULT_CLIP_NORM, DEFAULT_HIDDEN, DEFAULT_LEARNING_RATE};
use crate::replay::{rbs_prefill, ReplayBuffer, BATCH_SIZE, RBS_DIALOGUES, STUDENT_CAPACITY, TEACHER_CAPACITY};
use crate::student::{
    argmax, episode_total, epsilon_schedule, run_episode, student_act, student_train_step, Featurizer,
    SystemActionSet,
};
use crate::teacher::{
    record_teacher_transition, teacher_act, teacher_reward, teacher_train_step, GoalRewardTable, TeacherObserver,
    TEACHER_STATE_DIM,
};
use crate::user_sim::{KnowledgeBase, SessionView, Status, DEFAULT_KB_ROWS};

pub const DEFAULT_EPOCHS: usize = 500;
pub const DEFAULT_GAMMA: f64 = 0.9;
pub const DEFAULT_EVAL_EVERY: usize = 5;
pub const DEFAULT_EVAL_DIALOGUES: usize = 50;
/// Seed of the default synthetic KB and goal corpus.
pub const DEFAULT_DATA_SEED: u64 = 0;
/// Constant exploration rate of the teacher.
pub const DEFAULT_TEACHER_EPSILON: f64 = 0.5;

// Independent random streams carved out of one run seed.
const STREAM_STUDENT_INIT: u64 = 1;
const STREAM_TEACHER_INIT: u64 = 2;
const STREAM_PREFILL: u64 = 3;
const STREAM_TRAIN: u64 = 4;
const STREAM_EVAL: u64 = 1 << 32;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentKind {
    Dqn,
    AclA,
    AclB,
    AclC,
    AclANoOrp,
}

impl AgentKind {
    pub const ALL: [AgentKind; 5] = [
        AgentKind::Dqn,
        AgentKind::AclA,
        AgentKind::AclB,
        AgentKind::AclC,
        AgentKind::AclANoOrp,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AgentKind::Dqn => "dqn",
            AgentKind::AclA => "acl-a",
            AgentKind::AclB => "acl-b",
            AgentKind::AclC => "acl-c",
            AgentKind::AclANoOrp => "acl-a-noorp",
        }
    }

    pub fn schedule(self) -> Option<Schedule> {
        match self {
            AgentKind::Dqn => None,
            AgentKind::AclA | AgentKind::AclANoOrp => Some(Schedule::A),
            AgentKind::AclB => Some(Schedule::B),
            AgentKind::AclC => Some(Schedule::C),
        }
    }

    pub fn uses_orp(self) -> bool {
        !matches!(self, AgentKind::Dqn | AgentKind::AclANoOrp)
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        AgentKind::ALL
            .into_iter()
            .find(|k| k.label() == lower)
            .ok_or_else(|| {
                let valid: Vec<&str> = AgentKind::ALL.iter().map(|k| k.label()).collect();
                Error::Usage(format!("unknown agent {s:?}; valid kinds: {}", valid.join(", ")))
            })
    }
}

/// When the student takes minibatch steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateCadence {
    /// One minibatch per collected transition.
    PerTurn,
    /// A fixed number of minibatches after each dialogue.
    PerEpisode(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub agent: AgentKind,
    pub num_epochs: usize,
    /// Horizon used for schedule B/C phase budgets; defaults to `num_epochs`.
    pub epoch_size: Option<usize>,
    pub gamma: f64,
    pub alpha: f64,
    pub mastery_window: usize,
    pub eval_every: usize,
    pub eval_dialogues: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub student_capacity: usize,
    pub teacher_capacity: usize,
    pub rbs_dialogues: usize,
    pub cadence: UpdateCadence,
    pub optimizer: Optimizer,
    pub teacher_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            agent: AgentKind::Dqn,
            num_epochs: DEFAULT_EPOCHS,
            epoch_size: None,
            gamma: DEFAULT_GAMMA,
            alpha: DEFAULT_ALPHA,
            mastery_window: DEFAULT_MASTERY_WINDOW,
            eval_every: DEFAULT_EVAL_EVERY,
            eval_dialogues: DEFAULT_EVAL_DIALOGUES,
            hidden: DEFAULT_HIDDEN,
            learning_rate: DEFAULT_LEARNING_RATE,
            clip_norm: DEFAULT_CLIP_NORM,
            batch_size: BATCH_SIZE,
            student_capacity: STUDENT_CAPACITY,
            teacher_capacity: TEACHER_CAPACITY,
            rbs_dialogues: RBS_DIALOGUES,
            cadence: UpdateCadence::PerTurn,
            optimizer: Optimizer::default(),
            teacher_epsilon: DEFAULT_TEACHER_EPSILON,
        }
    }
}

impl TrainConfig {
    pub fn new(agent: AgentKind) -> Self {
        Self {
            agent,
            ..Self::default()
        }
    }

    pub fn epoch_size(&self) -> usize {
        self.epoch_size.unwrap_or(self.num_epochs)
    }

    pub fn validate(&self, corpus: &GoalCorpus) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.eval_every == 0 || self.eval_dialogues == 0 {
            return fail("eval-every and eval-dialogues must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !self.alpha.is_finite() {
            return fail(format!("alpha {} is not finite", self.alpha));
        }
        if self.mastery_window == 0 || self.batch_size == 0 || self.hidden == 0 {
            return fail("mastery window, batch size and hidden size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.teacher_epsilon) {
            return fail(format!("teacher epsilon {} outside [0, 1]", self.teacher_epsilon));
        }
        if !(self.learning_rate >= 0.0 && self.clip_norm > 0.0) {
            return fail("learning rate must be >= 0 and clip norm > 0".into());
        }
        if corpus.is_empty() {
            return fail("goal corpus is empty".into());
        }
        if matches!(self.agent.schedule(), Some(Schedule::B | Schedule::C))
            && Tier::ALL.iter().any(|&t| corpus.tier(t).is_empty())
        {
            return fail(format!("{} needs three non-empty difficulty tiers", self.agent));
        }
        Ok(())
    }
}

/// Knowledge base plus goal corpus shared by every run of an experiment.
#[derive(Debug, Clone)]
pub struct Environment {
    pub kb: KnowledgeBase,
    pub corpus: GoalCorpus,
}

impl Environment {
    /// Checks that every goal's constraints match at least one KB row.
    pub fn new(kb: KnowledgeBase, corpus: GoalCorpus) -> Result<Self> {
        for goal in corpus.goals() {
            if kb.query(goal.inform_slots()).count == 0 {
                return Err(Error::Validation(format!(
                    "goal {} matches no knowledge-base row",
                    goal.id()
                )));
            }
        }
        Ok(Self { kb, corpus })
    }

    /// Default 200-row KB and 30/72/26 corpus from one data seed.
    pub fn generate(data_seed: u64) -> Result<Self> {
        let kb = KnowledgeBase::generate(data_seed, DEFAULT_KB_ROWS, Ontology::movie_booking());
        let corpus = generate_corpus(data_seed, DEFAULT_TIER_SIZES, &kb)?;
        Ok(Self { kb, corpus })
    }

    /// The environment every experiment uses unless files are given.
    pub fn default_synthetic() -> Result<Self> {
        Self::generate(DEFAULT_DATA_SEED)
    }

    /// Loads whichever of KB and corpus is given, generating the rest from
    /// [`DEFAULT_DATA_SEED`].
    pub fn load(goals: Option<&Path>, kb: Option<&Path>) -> Result<Self> {
        let kb = match kb {
            Some(p) => KnowledgeBase::load(p, Ontology::movie_booking())?,
            None => KnowledgeBase::generate(DEFAULT_DATA_SEED, DEFAULT_KB_ROWS, Ontology::movie_booking()),
        };
        let corpus = match goals {
            Some(p) => load_corpus(p, kb.ontology())?,
            None => generate_corpus(DEFAULT_DATA_SEED, DEFAULT_TIER_SIZES, &kb)?,
        };
        Self::new(kb, corpus)
    }

    pub fn ontology(&self) -> &Ontology {
        self.kb.ontology()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalRow {
    pub epoch: usize,
    pub success: f64,
    pub reward: f64,
    pub turns: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TeacherLogRow {
    pub epoch: usize,
    pub goal_id: u32,
    pub og: u64,
    pub r_or: f64,
    pub x_now: f64,
    pub x_prev: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub epoch: usize,
    pub goal: usize,
    pub status: Status,
    pub turns: usize,
    pub total_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSeries {
    pub agent: AgentKind,
    pub seed: u64,
    pub evals: Vec<EvalRow>,
    pub teacher_log: Vec<TeacherLogRow>,
    pub phase_log: Vec<PhaseChange>,
    pub episodes: Vec<EpisodeRecord>,
    /// Training selections per corpus position.
    pub selection_counts: Vec<u64>,
}

impl MetricsSeries {
    pub fn final_eval(&self) -> Option<&EvalRow> {
        self.evals.last()
    }

    pub fn eval_at(&self, epoch: usize) -> Option<&EvalRow> {
        self.evals.iter().find(|r| r.epoch == epoch)
    }

    pub fn max_selection_count(&self) -> u64 {
        self.selection_counts.iter().copied().max().unwrap_or(0)
    }

    /// Writes `metrics.csv`, `teacher_log.csv`, `phase_log.csv` and
    /// `episodes.csv`.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_csv(&dir.join("metrics.csv"), &["epoch", "success", "reward", "turns"], &self.evals)?;
        write_csv(
            &dir.join("teacher_log.csv"),
            &["epoch", "goal_id", "og", "r_or", "x_now", "x_prev", "r"],
            &self.teacher_log,
        )?;
        write_csv(&dir.join("phase_log.csv"), &["epoch", "from", "to", "trigger"], &self.phase_log)?;
        write_csv(
            &dir.join("episodes.csv"),
            &["epoch", "goal", "status", "turns", "total_reward"],
            &self.episodes,
        )?;
        Ok(())
    }
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: MetricsSeries,
    pub student: QFunction,
    pub teacher: Option<QFunction>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub success_rate: f64,
    pub avg_reward: f64,
    pub avg_turns: f64,
}

/// Rolls out `n_dialogues` episodes on uniformly drawn goals with an
/// arbitrary policy. Nothing is stored and nothing learns.
pub fn evaluate_with<R, P>(env: &Environment, n_dialogues: usize, rng: &mut R, mut policy: P) -> Result<EvalSummary>
where
    R: Rng + ?Sized,
    P: FnMut(&SessionView, &[f64]) -> Result<usize>,
{
    let featurizer = Featurizer::new(env.ontology());
    let actions = SystemActionSet::new(env.ontology());
    let (mut wins, mut reward, mut turns) = (0usize, 0.0, 0usize);
    for _ in 0..n_dialogues {
        let goal = env.corpus.goal(rng.random_range(0..env.corpus.len()));
        let out = run_episode(
            &env.kb,
            goal,
            &featurizer,
            &actions,
            rng,
            |view, state, _| policy(view, state),
            |_, _| Ok(()),
        )?;
        wins += usize::from(out.status == Status::Success);
        reward += out.total_reward;
        turns += out.turns;
    }
    let n = n_dialogues.max(1) as f64;
    Ok(EvalSummary {
        success_rate: wins as f64 / n,
        avg_reward: reward / n,
        avg_turns: turns as f64 / n,
    })
}

/// Greedy rollouts of the student's online network.
pub fn evaluate_policy<R: Rng + ?Sized>(
    q: &QFunction,
    env: &Environment,
    n_dialogues: usize,
    rng: &mut R,
) -> Result<EvalSummary> {
    evaluate_with(env, n_dialogues, rng, |_, state| Ok(argmax(&q.forward(state, false)?)))
}

/// Runs one full training job.
pub fn run_training(config: &TrainConfig, env: &Environment, seed: u64) -> Result<RunOutput> {
    config.validate(&env.corpus)?;
    let corpus = &env.corpus;
    let kb = &env.kb;
    let featurizer = Featurizer::new(kb.ontology());
    let actions = SystemActionSet::new(kb.ontology());

    let mut student = QFunction::new(
        featurizer.dim(),
        config.hidden,
        actions.len(),
        &mut stream_rng(seed, STREAM_STUDENT_INIT),
    );
    student.learning_rate = config.learning_rate;
    student.clip_norm = config.clip_norm;
    student.optimizer = config.optimizer;
    let mut d_s = ReplayBuffer::new(config.student_capacity, featurizer.dim());
    let prefill_seed = stream_rng(seed, STREAM_PREFILL).random::<u64>();
    let stats = rbs_prefill(&mut d_s, corpus, kb, config.rbs_dialogues, prefill_seed)?;
    debug!("prefill: {stats:?}");

    let schedule = config.agent.schedule();
    let mut teacher = schedule.map(|_| {
        let mut q = QFunction::new(
            TEACHER_STATE_DIM,
            config.hidden,
            corpus.len(),
            &mut stream_rng(seed, STREAM_TEACHER_INIT),
        );
        q.learning_rate = config.learning_rate;
        q.clip_norm = config.clip_norm;
        q.optimizer = config.optimizer;
        q
    });
    let mut d_t = ReplayBuffer::new(config.teacher_capacity, TEACHER_STATE_DIM);
    let mut curriculum = schedule.map(|s| {
        CurriculumController::new(s, corpus, config.epoch_size(), config.alpha, config.mastery_window)
    });
    let mut table = GoalRewardTable::new(corpus.len());
    let mut observer = TeacherObserver::new();

    let mut rng = stream_rng(seed, STREAM_TRAIN);
    let mut metrics = MetricsSeries {
        agent: config.agent,
        seed,
        evals: Vec::new(),
        teacher_log: Vec::new(),
        phase_log: Vec::new(),
        episodes: Vec::with_capacity(config.num_epochs),
        selection_counts: vec![0; corpus.len()],
    };

    for epoch in 1..=config.num_epochs {
        let epsilon = epsilon_schedule(epoch);
        student.sync_target();
        if let Some(t) = teacher.as_mut() {
            t.sync_target();
        }

        let teacher_state = observer.state(corpus);
        let (goal, og, r_or) = match (teacher.as_ref(), curriculum.as_mut()) {
            (Some(tq), Some(cur)) => {
                let active = cur.active_goal_set(corpus);
                let g = teacher_act(tq, &teacher_state, &active, config.teacher_epsilon, &mut rng)?;
                let (og, penalty) = cur.on_goal_sampled(g)?;
                (g, og, if config.agent.uses_orp() { penalty } else { 0.0 })
            }
            _ => (rng.random_range(0..corpus.len()), 0, 0.0),
        };
        metrics.selection_counts[goal] += 1;

        let shared = RefCell::new(&mut student);
        let outcome = run_episode(
            kb,
            corpus.goal(goal),
            &featurizer,
            &actions,
            &mut rng,
            |_, state, rng| student_act(&shared.borrow(), state, epsilon, rng),
            |t, rng| {
                d_s.push(t)?;
                if config.cadence == UpdateCadence::PerTurn {
                    student_train_step(&mut shared.borrow_mut(), &d_s, config.batch_size, config.gamma, rng)?;
                }
                Ok(())
            },
        )?;
        if let UpdateCadence::PerEpisode(n) = config.cadence {
            for _ in 0..n {
                student_train_step(&mut student, &d_s, config.batch_size, config.gamma, &mut rng)?;
            }
        }
        let x_now = outcome.total_reward;
        if x_now != episode_total(outcome.status, outcome.turns) {
            return Err(Error::Validation(format!(
                "epoch {epoch}: episode reward {x_now} disagrees with {} turns / {:?}",
                outcome.turns, outcome.status
            )));
        }
        let success = outcome.status == Status::Success;
        metrics.episodes.push(EpisodeRecord {
            epoch,
            goal,
            status: outcome.status,
            turns: outcome.turns,
            total_reward: x_now,
        });

        observer.observe(goal, success, x_now, student.param_scalar());
        if let Some(tq) = teacher.as_mut() {
            let reward = teacher_reward(r_or, x_now, &mut table, goal);
            let next_state = observer.state(corpus);
            record_teacher_transition(&mut d_t, teacher_state, goal, reward.r, next_state)?;
            teacher_train_step(tq, &d_t, config.batch_size, config.gamma, &mut rng)?;
            metrics.teacher_log.push(TeacherLogRow {
                epoch,
                goal_id: corpus.goal(goal).id(),
                og,
                r_or: reward.r_or,
                x_now: reward.x_now,
                x_prev: reward.x_prev,
                r: reward.r,
            });
        }
        if let Some(cur) = curriculum.as_mut() {
            if let Some(change) = cur.after_episode(epoch, success, corpus) {
                info!("epoch {epoch}: {} -> {} ({:?})", change.from, change.to, change.trigger);
                metrics.phase_log.push(change);
            }
        }

        if epoch % config.eval_every == 0 {
            let mut eval_rng = stream_rng(seed, STREAM_EVAL + epoch as u64);
            let e = evaluate_policy(&student, env, config.eval_dialogues, &mut eval_rng)?;
            debug!("{} seed {seed} epoch {epoch}: success {:.3}", config.agent, e.success_rate);
            metrics.evals.push(EvalRow {
                epoch,
                success: e.success_rate,
                reward: e.avg_reward,
                turns: e.avg_turns,
            });
        }
    }

    Ok(RunOutput {
        metrics,
        student,
        teacher,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub mean_success: f64,
    pub var_success: f64,
    pub mean_reward: f64,
    pub mean_turns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub agent: String,
    pub mean_final_success: f64,
    pub var_final_success: f64,
}

/// Sample variance (n - 1 denominator); zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Mean/variance across seeds at each evaluation epoch.
pub fn aggregate_curve(runs: &[&MetricsSeries]) -> Vec<CurvePoint> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    first
        .evals
        .iter()
        .map(|row| {
            let at: Vec<&EvalRow> = runs.iter().filter_map(|m| m.eval_at(row.epoch)).collect();
            let succ: Vec<f64> = at.iter().map(|r| r.success).collect();
            CurvePoint {
                epoch: row.epoch,
                mean_success: mean(&succ),
                var_success: variance(&succ),
                mean_reward: mean(&at.iter().map(|r| r.reward).collect::<Vec<_>>()),
                mean_turns: mean(&at.iter().map(|r| r.turns).collect::<Vec<_>>()),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    /// Labels in input order.
    pub labels: Vec<String>,
    pub seeds: Vec<u64>,
    /// Keyed by (label index, seed).
    pub runs: BTreeMap<(usize, u64), MetricsSeries>,
    pub curves: Vec<Vec<CurvePoint>>,
    pub stability: Vec<StabilityRow>,
}

impl ComparisonReport {
    pub fn runs_for(&self, label: usize) -> Vec<&MetricsSeries> {
        self.seeds.iter().filter_map(|s| self.runs.get(&(label, *s))).collect()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Mean success across seeds at `epoch`.
    pub fn mean_success_at(&self, label: usize, epoch: usize) -> Option<f64> {
        self.curves[label].iter().find(|p| p.epoch == epoch).map(|p| p.mean_success)
    }

    /// Writes `curve_<label>.csv` per configuration plus `stability.csv`
    /// and `selections.csv` (goal-selection counts per run).
    pub fn write_csvs(&self, dir: &Path, corpus: &GoalCorpus) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (label, curve) in self.labels.iter().zip(&self.curves) {
            write_csv(
                &dir.join(format!("curve_{label}.csv")),
                &["epoch", "mean_success", "var_success", "mean_reward", "mean_turns"],
                curve,
            )?;
        }
        write_csv(
            &dir.join("stability.csv"),
            &["agent", "mean_final_success", "var_final_success"],
            &self.stability,
        )?;
        #[derive(Serialize)]
        struct Selection<'a> {
            agent: &'a str,
            seed: u64,
            goal_id: u32,
            tier: &'static str,
            count: u64,
        }
        let mut rows = Vec::new();
        for ((li, seed), m) in &self.runs {
            for (pos, &count) in m.selection_counts.iter().enumerate() {
                rows.push(Selection {
                    agent: &self.labels[*li],
                    seed: *seed,
                    goal_id: corpus.goal(pos).id(),
                    tier: corpus.tier_of(pos).name(),
                    count,
                });
            }
        }
        write_csv(&dir.join("selections.csv"), &["agent", "seed", "goal_id", "tier", "count"], &rows)?;
        Ok(())
    }
}

/// Runs every (configuration, seed) pair and aggregates per configuration.
///
/// Runs execute on the rayon pool; results are keyed by (config, seed) so
/// the report does not depend on scheduling.
pub fn run_comparison(
    configs: &[(String, TrainConfig)],
    seeds: &[u64],
    env: &Environment,
) -> Result<ComparisonReport> {
    if configs.is_empty() || seeds.is_empty() {
        return Err(Error::Config("comparison needs at least one config and one seed".into()));
    }
    for (_, c) in configs {
        c.validate(&env.corpus)?;
    }
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<((usize, u64), MetricsSeries)> = jobs
        .par_iter()
        .map(|&(i, s)| run_training(&configs[i].1, env, s).map(|o| ((i, s), o.metrics)))
        .collect::<Result<_>>()?;
    let runs: BTreeMap<(usize, u64), MetricsSeries> = results.into_iter().collect();

    let labels: Vec<String> = configs.iter().map(|(l, _)| l.clone()).collect();
    let mut report = ComparisonReport {
        labels,
        seeds: seeds.to_vec(),
        runs,
        curves: Vec::new(),
        stability: Vec::new(),
    };
    for i in 0..configs.len() {
        let rs = report.runs_for(i);
        let finals: Vec<f64> = rs.iter().filter_map(|m| m.final_eval()).map(|r| r.success).collect();
        report.curves.push(aggregate_curve(&rs));
        report.stability.push(StabilityRow {
            agent: report.labels[i].clone(),
            mean_final_success: mean(&finals),
            var_final_success: variance(&finals),
        });
    }
    Ok(report)
}

/// Schedule-C runs over a list of mastery thresholds.
pub fn sweep_alpha(base: &TrainConfig, alphas: &[f64], seeds: &[u64], env: &Environment) -> Result<ComparisonReport> {
    if base.agent != AgentKind::AclC {
        return Err(Error::Config("alpha sweep needs agent acl-c".into()));
    }
    if alphas.is_empty() {
        return Err(Error::Config("alpha sweep needs at least one alpha".into()));
    }
    let configs: Vec<(String, TrainConfig)> = alphas
        .iter()
        .map(|&alpha| {
            (
                format!("alpha_{alpha}"),
                TrainConfig {
                    alpha,
                    ..base.clone()
                },
            )
        })
        .collect();
    run_comparison(&configs, seeds, env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::student::SystemAction;

    fn env() -> Environment {
        Environment::generate(0).unwrap()
    }

    fn small(agent: AgentKind, epochs: usize) -> TrainConfig {
        TrainConfig {
            num_epochs: epochs,
            eval_every: 5,
            eval_dialogues: 5,
            rbs_dialogues: 10,
            ..TrainConfig::new(agent)
        }
    }

    #[test]
    fn agent_kind_parsing() {
        assert_eq!("acl-c".parse::<AgentKind>().unwrap(), AgentKind::AclC);
        assert_eq!("DQN".parse::<AgentKind>().unwrap(), AgentKind::Dqn);
        let err = "ppo".parse::<AgentKind>().unwrap_err().to_string();
        assert!(err.contains("acl-a-noorp"), "{err}");
    }

    #[test]
    fn zero_epochs_rejected_before_training() {
        let e = env();
        let err = run_training(&small(AgentKind::Dqn, 0), &e, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn dqn_single_epoch() {
        let e = env();
        let out = run_training(&small(AgentKind::Dqn, 1), &e, 3).unwrap();
        assert_eq!(out.metrics.episodes.len(), 1);
        assert!(out.teacher.is_none());
        assert!(out.metrics.teacher_log.is_empty());
        assert_eq!(out.metrics.selection_counts.iter().sum::<u64>(), 1);
    }

    #[test]
    fn acl_c_starts_simple() {
        let e = env();
        let out = run_training(&small(AgentKind::AclC, 20), &e, 3).unwrap();
        let first = out.metrics.episodes[0].goal;
        assert_eq!(e.corpus.tier_of(first), Tier::Simple);
        if let Some(ch) = out.metrics.phase_log.first() {
            assert_eq!(ch.from.name(), "simple");
        }
        assert_eq!(out.metrics.teacher_log.len(), 20);
    }

    #[test]
    fn closing_policy_never_succeeds() {
        let e = env();
        let actions = SystemActionSet::new(e.ontology());
        let close = actions.index(SystemAction::Closing);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = evaluate_with(&e, 50, &mut rng, |_, _| Ok(close)).unwrap();
        assert_eq!(s.success_rate, 0.0);
        assert_eq!(s.avg_turns, 1.0);
    }

    #[test]
    fn variance_is_sample_variance() {
        assert_eq!(variance(&[1.0]), 0.0);
        assert!((variance(&[1.0, 2.0, 3.0, 4.0]) - 5.0 / 3.0).abs() < 1e-12);
    }
}
