//! Agenda-based user simulator and the movie knowledge base it plays against.
//!
//! The simulator is a deterministic rule table. Randomness only enters at
//! [`SimulatorSession::reset`], which decides which constraints the user
//! volunteers up front.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::domain::{ActType, Actor, DialogueAct, Ontology, SlotId, UserGoal};
use crate::error::{Error, Result};
use crate::student::SystemAction;

/// Maximum number of system turns in one dialogue.
pub const MAX_TURNS: usize = 40;

pub const DEFAULT_KB_ROWS: usize = 200;

/// Probability that each inform constraint is volunteered in the opening act.
const VOLUNTEER_PROB: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBase {
    ontology: Ontology,
    rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KbResult {
    pub count: usize,
    pub row: Option<usize>,
}

impl KnowledgeBase {
    pub fn new(ontology: Ontology, rows: Vec<Vec<String>>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != ontology.len() {
                return Err(Error::Validation(format!(
                    "kb row {i} has {} values, ontology has {} slots",
                    r.len(),
                    ontology.len()
                )));
            }
        }
        Ok(Self { ontology, rows })
    }

    /// Uniformly random rows over each slot's vocabulary.
    pub fn generate(seed: u64, n_rows: usize, ontology: Ontology) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n_rows)
            .map(|_| {
                ontology
                    .slot_ids()
                    .map(|s| {
                        let values = ontology.values(s);
                        values[rng.random_range(0..values.len())].clone()
                    })
                    .collect()
            })
            .collect();
        Self { ontology, rows }
    }

    pub fn ontology(&self) -> &Ontology {
        &self.ontology
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[String] {
        &self.rows[i]
    }

    /// Counts rows matching every constraint exactly; `row` is the first
    /// match in table order.
    pub fn query(&self, constraints: &BTreeMap<SlotId, String>) -> KbResult {
        let mut count = 0;
        let mut row = None;
        for (i, r) in self.rows.iter().enumerate() {
            if constraints.iter().all(|(s, v)| r[s.0] == *v) {
                count += 1;
                row.get_or_insert(i);
            }
        }
        KbResult { count, row }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for r in &self.rows {
            let record: serde_json::Map<String, serde_json::Value> = self
                .ontology
                .slot_ids()
                .map(|s| (self.ontology.name(s).to_string(), serde_json::Value::from(r[s.0].clone())))
                .collect();
            serde_json::to_writer(&mut out, &record).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, ontology: Ontology) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut rows = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let record: BTreeMap<String, String> =
                serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            let mut row = Vec::with_capacity(ontology.len());
            for s in ontology.slot_ids() {
                let name = ontology.name(s);
                let v = record
                    .get(name)
                    .ok_or_else(|| parse_err(format!("missing slot {name:?}")))?;
                row.push(v.clone());
            }
            if let Some(extra) = record.keys().find(|k| ontology.slot(k).is_none()) {
                return Err(parse_err(format!("unknown slot {extra:?}")));
            }
            rows.push(row);
        }
        Ok(Self { ontology, rows })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ongoing,
    Success,
    Failure,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        self != Status::Ongoing
    }
}

/// What a dialogue agent may observe about a running session.
#[derive(Debug, Clone)]
pub struct SessionView {
    pub last_user: DialogueAct,
    pub last_system: Option<DialogueAct>,
    /// Slots whose value is settled: user constraints, user don't-cares and
    /// accepted system answers.
    pub known: BTreeSet<SlotId>,
    /// Slots the user has asked about that have not been answered yet.
    pub pending_requests: BTreeSet<SlotId>,
    /// Constraints the user has stated so far.
    pub constraints: BTreeMap<SlotId, String>,
    pub turn: usize,
    pub kb: KbResult,
    pub kb_rows: usize,
}

/// One dialogue between the simulated user and a system agent.
#[derive(Debug, Clone)]
pub struct SimulatorSession<'a> {
    kb: &'a KnowledgeBase,
    goal: UserGoal,
    target: Option<usize>,
    agenda: Vec<DialogueAct>,
    turn: usize,
    conveyed: BTreeMap<SlotId, String>,
    dont_care: BTreeSet<SlotId>,
    filled: BTreeMap<SlotId, String>,
    voiced: BTreeSet<SlotId>,
    status: Status,
    last_user: DialogueAct,
    last_system: Option<DialogueAct>,
}

impl<'a> SimulatorSession<'a> {
    /// Builds the agenda from `goal` and pops the opening user act.
    ///
    /// Agenda (top first): one single-slot inform per volunteered
    /// constraint, then one single-slot request per request slot. Each
    /// user turn voices at most one agenda item.
    pub fn reset<R: Rng + ?Sized>(kb: &'a KnowledgeBase, goal: &UserGoal, rng: &mut R) -> (Self, DialogueAct) {
        let volunteered: Vec<(SlotId, String)> = goal
            .inform_slots()
            .iter()
            .filter(|_| rng.random_bool(VOLUNTEER_PROB))
            .map(|(s, v)| (*s, v.clone()))
            .collect();
        let mut agenda: Vec<DialogueAct> = goal
            .request_slots()
            .iter()
            .rev()
            .map(|&s| DialogueAct::request(Actor::User, [s]))
            .collect();
        agenda.extend(
            volunteered
                .into_iter()
                .rev()
                .map(|pair| DialogueAct::inform(Actor::User, [pair])),
        );
        let mut session = Self {
            kb,
            goal: goal.clone(),
            target: kb.query(goal.inform_slots()).row,
            agenda,
            turn: 1,
            conveyed: BTreeMap::new(),
            dont_care: BTreeSet::new(),
            filled: BTreeMap::new(),
            voiced: BTreeSet::new(),
            status: Status::Ongoing,
            last_user: DialogueAct::bare(Actor::User, ActType::Greeting),
            last_system: None,
        };
        let first = session.continue_agenda();
        session.last_user = first.clone();
        (session, first)
    }

    pub fn goal(&self) -> &UserGoal {
        &self.goal
    }

    pub fn kb(&self) -> &'a KnowledgeBase {
        self.kb
    }

    pub fn turn(&self) -> usize {
        self.turn
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn filled(&self) -> &BTreeMap<SlotId, String> {
        &self.filled
    }

    pub fn last_user(&self) -> &DialogueAct {
        &self.last_user
    }

    pub fn view(&self) -> SessionView {
        let known = self
            .conveyed
            .keys()
            .chain(self.dont_care.iter())
            .chain(self.filled.keys())
            .copied()
            .collect();
        SessionView {
            last_user: self.last_user.clone(),
            last_system: self.last_system.clone(),
            known,
            pending_requests: self.voiced.difference(&self.filled.keys().copied().collect()).copied().collect(),
            constraints: self.conveyed.clone(),
            turn: self.turn,
            kb: self.kb.query(&self.conveyed),
            kb_rows: self.kb.len(),
        }
    }

    fn unfilled_requests(&self) -> Vec<SlotId> {
        self.goal
            .request_slots()
            .iter()
            .filter(|s| !self.filled.contains_key(s))
            .copied()
            .collect()
    }

    fn ask_outstanding(&mut self) -> Option<DialogueAct> {
        let slot = *self.unfilled_requests().first()?;
        self.voiced.insert(slot);
        Some(DialogueAct::request(Actor::User, [slot]))
    }

    /// Next agenda item, else a repeat of the first outstanding request,
    /// else a prompt to book.
    fn continue_agenda(&mut self) -> DialogueAct {
        while let Some(mut act) = self.agenda.pop() {
            match act.act_type {
                ActType::Inform => {
                    act.payload.retain(|s, _| !self.conveyed.contains_key(s));
                    if act.payload.is_empty() {
                        continue;
                    }
                    for s in act.slots() {
                        self.conveyed.insert(s, self.goal.inform_slots()[&s].clone());
                    }
                    return act;
                }
                ActType::Request => {
                    let slot = act.slots().next();
                    if let Some(s) = slot.filter(|s| !self.filled.contains_key(s)) {
                        self.voiced.insert(s);
                        return act;
                    }
                }
                _ => return act,
            }
        }
        self.ask_outstanding()
            .unwrap_or_else(|| DialogueAct::bare(Actor::User, ActType::Book))
    }

    fn target_value(&self, slot: SlotId) -> Option<&str> {
        self.target.map(|r| self.kb.row(r)[slot.0].as_str())
    }

    /// Applies one system act and returns the user's reply.
    pub fn step(&mut self, system_act: &DialogueAct) -> Result<(DialogueAct, Status)> {
        if self.status.is_terminal() {
            return Err(Error::Usage("step after dialogue ended".into()));
        }
        let reply = match system_act.act_type {
            ActType::Request => match system_act.slots().next() {
                Some(s) if self.goal.inform_slots().contains_key(&s) => {
                    let v = self.goal.inform_slots()[&s].clone();
                    self.conveyed.insert(s, v.clone());
                    DialogueAct::inform(Actor::User, [(s, v)])
                }
                Some(s) if self.goal.request_slots().contains(&s) && !self.filled.contains_key(&s) => {
                    self.voiced.insert(s);
                    DialogueAct::request(Actor::User, [s])
                }
                Some(s) if self.goal.request_slots().contains(&s) => self.continue_agenda(),
                Some(s) => {
                    self.dont_care.insert(s);
                    DialogueAct::with_unk(Actor::User, ActType::NotSure, [s])
                }
                None => self.continue_agenda(),
            },
            ActType::Inform => match system_act.payload.iter().next() {
                Some((&s, v)) if self.goal.request_slots().contains(&s) && !self.filled.contains_key(&s) => {
                    if Some(v.as_str()) == self.target_value(s) {
                        self.filled.insert(s, v.as_str().to_string());
                        self.continue_agenda()
                    } else {
                        DialogueAct::with_values(Actor::User, ActType::Deny, [(s, v.as_str().to_string())])
                    }
                }
                Some((&s, v)) if self.goal.inform_slots().contains_key(&s) => {
                    let wanted = &self.goal.inform_slots()[&s];
                    if v.as_str() == wanted {
                        self.continue_agenda()
                    } else {
                        self.conveyed.insert(s, wanted.clone());
                        DialogueAct::inform(Actor::User, [(s, wanted.clone())])
                    }
                }
                _ => self.continue_agenda(),
            },
            ActType::Book => {
                let consistent = !system_act.payload.is_empty()
                    && self
                        .goal
                        .inform_slots()
                        .iter()
                        .all(|(s, v)| system_act.value(*s) == Some(v.as_str()));
                if !consistent {
                    DialogueAct::bare(Actor::User, ActType::Deny)
                } else if let Some(req) = self.ask_outstanding() {
                    req
                } else {
                    self.status = Status::Success;
                    DialogueAct::bare(Actor::User, ActType::Thanks)
                }
            }
            ActType::Closing => {
                self.status = Status::Failure;
                DialogueAct::bare(Actor::User, ActType::Closing)
            }
            _ => self.continue_agenda(),
        };
        if self.status == Status::Ongoing {
            if self.turn >= MAX_TURNS {
                self.status = Status::Failure;
            } else {
                self.turn += 1;
            }
        }
        self.last_system = Some(system_act.clone());
        self.last_user = reply.clone();
        Ok((reply, self.status))
    }
}

/// Independent success check: every request slot holds the value of the
/// first KB row satisfying all of the goal's constraints.
pub fn validate_success(kb: &KnowledgeBase, goal: &UserGoal, filled: &BTreeMap<SlotId, String>) -> bool {
    let Some(row) = kb
        .rows
        .iter()
        .find(|r| goal.inform_slots().iter().all(|(s, v)| r[s.0] == *v))
    else {
        return false;
    };
    goal.request_slots()
        .iter()
        .all(|s| filled.get(s).map(String::as_str) == Some(row[s.0].as_str()))
}

/// Slots the rule agent asks about, in order.
pub const RULE_AGENT_SLOTS: [&str; 3] = ["movie_name", "city", "date"];

/// Hand-written warm-start policy.
///
/// Asks for a fixed handful of constraints, answers whatever the user has
/// requested from the pinned KB row, then books. It gives up on the first
/// rejection.
pub fn rule_agent_act(view: &SessionView, ontology: &Ontology) -> SystemAction {
    if view.last_user.act_type == ActType::Deny {
        return SystemAction::Closing;
    }
    for name in RULE_AGENT_SLOTS {
        if let Some(s) = ontology.slot(name) {
            if !view.known.contains(&s) {
                return SystemAction::Request(s);
            }
        }
    }
    if let Some(&s) = view.pending_requests.iter().next() {
        return SystemAction::Inform(s);
    }
    SystemAction::Book
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{generate_corpus, Tier, DEFAULT_TIER_SIZES};

    fn tiny_kb() -> KnowledgeBase {
        let o = Ontology::movie_booking();
        let row: Vec<String> = o.slot_ids().map(|s| o.values(s)[0].clone()).collect();
        KnowledgeBase::new(o, vec![row]).unwrap()
    }

    fn slot(kb: &KnowledgeBase, name: &str) -> SlotId {
        kb.ontology().slot(name).unwrap()
    }

    #[test]
    fn query_without_constraints_counts_all_rows() {
        let kb = KnowledgeBase::generate(3, 50, Ontology::movie_booking());
        let r = kb.query(&BTreeMap::new());
        assert_eq!(r.count, 50);
        assert_eq!(r.row, Some(0));
    }

    #[test]
    fn query_matching_nothing() {
        let kb = tiny_kb();
        let c: BTreeMap<_, _> = [(slot(&kb, "city"), "atlantis".to_string())].into();
        assert_eq!(kb.query(&c), KbResult { count: 0, row: None });
    }

    #[test]
    fn query_single_row_restriction() {
        let kb = tiny_kb();
        let c: BTreeMap<_, _> = [(slot(&kb, "city"), kb.row(0)[slot(&kb, "city").0].clone())].into();
        // brute-force oracle
        let oracle = (0..kb.len())
            .filter(|&i| c.iter().all(|(s, v)| kb.row(i)[s.0] == *v))
            .count();
        assert_eq!(kb.query(&c).count, oracle);
        assert_eq!(oracle, 1);
    }

    fn city_goal(kb: &KnowledgeBase) -> UserGoal {
        let city = slot(kb, "city");
        UserGoal::new(
            0,
            [(city, kb.row(0)[city.0].clone())].into(),
            [slot(kb, "start_time")].into(),
        )
        .unwrap()
    }

    #[test]
    fn first_act_follows_agenda_order() {
        let kb = tiny_kb();
        let goal = city_goal(&kb);
        let city = slot(&kb, "city");
        let mut saw = BTreeSet::new();
        for seed in 0..32 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (s, first) = SimulatorSession::reset(&kb, &goal, &mut rng);
            assert_eq!(s.status(), Status::Ongoing);
            assert_eq!(s.turn(), 1);
            let inform = DialogueAct::inform(Actor::User, [(city, kb.row(0)[city.0].clone())]);
            let request = DialogueAct::request(Actor::User, [slot(&kb, "start_time")]);
            assert!(first == inform || first == request, "{first:?}");
            saw.insert(first.act_type);
        }
        // Both branches of the volunteer coin are reachable.
        assert_eq!(saw.len(), 2);
    }

    #[test]
    fn reset_is_deterministic() {
        let kb = KnowledgeBase::generate(1, 200, Ontology::movie_booking());
        let corpus = generate_corpus(7, DEFAULT_TIER_SIZES, &kb).unwrap();
        for g in corpus.goals().iter().take(20) {
            let a = SimulatorSession::reset(&kb, g, &mut ChaCha8Rng::seed_from_u64(5)).1;
            let b = SimulatorSession::reset(&kb, g, &mut ChaCha8Rng::seed_from_u64(5)).1;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn scripted_dialogue_succeeds() {
        let kb = tiny_kb();
        let goal = city_goal(&kb);
        let start = slot(&kb, "start_time");
        let (mut s, _) = SimulatorSession::reset(&kb, &goal, &mut ChaCha8Rng::seed_from_u64(0));
        let inform = DialogueAct::inform(Actor::System, [(start, kb.row(0)[start.0].clone())]);
        let (_, st) = s.step(&inform).unwrap();
        assert_eq!(st, Status::Ongoing);
        let book = DialogueAct::with_values(
            Actor::System,
            ActType::Book,
            kb.ontology().slot_ids().map(|x| (x, kb.row(0)[x.0].clone())),
        );
        let (reply, st) = s.step(&book).unwrap();
        assert_eq!(st, Status::Success);
        assert_eq!(reply.act_type, ActType::Thanks);
        assert!(validate_success(&kb, &goal, s.filled()));
        assert!(s.step(&book).is_err());
    }

    #[test]
    fn greeting_forever_hits_turn_cap() {
        let kb = tiny_kb();
        let goal = city_goal(&kb);
        let (mut s, _) = SimulatorSession::reset(&kb, &goal, &mut ChaCha8Rng::seed_from_u64(0));
        let greet = DialogueAct::bare(Actor::System, ActType::Greeting);
        for t in 1..=MAX_TURNS {
            let (_, st) = s.step(&greet).unwrap();
            assert_eq!(st == Status::Failure, t == MAX_TURNS, "turn {t}");
            assert!(s.turn() <= MAX_TURNS);
        }
        assert!(matches!(s.step(&greet), Err(Error::Usage(_))));
    }

    #[test]
    fn request_of_constraint_yields_inform() {
        let kb = tiny_kb();
        let goal = city_goal(&kb);
        let city = slot(&kb, "city");
        let (mut s, _) = SimulatorSession::reset(&kb, &goal, &mut ChaCha8Rng::seed_from_u64(0));
        let (reply, _) = s.step(&DialogueAct::request(Actor::System, [city])).unwrap();
        assert_eq!(reply, DialogueAct::inform(Actor::User, [(city, kb.row(0)[city.0].clone())]));
    }

    #[test]
    fn wrong_answer_is_denied_and_closing_fails() {
        let kb = KnowledgeBase::generate(1, 200, Ontology::movie_booking());
        let city = slot(&kb, "city");
        let start = slot(&kb, "start_time");
        // Constraint no row 0 satisfies, so row 0's answer is wrong.
        let other_city = kb
            .ontology()
            .values(city)
            .iter()
            .find(|v| **v != kb.row(0)[city.0])
            .unwrap()
            .clone();
        let goal = UserGoal::new(0, [(city, other_city)].into(), [start].into()).unwrap();
        let (mut s, _) = SimulatorSession::reset(&kb, &goal, &mut ChaCha8Rng::seed_from_u64(0));
        let target = kb.query(goal.inform_slots()).row.unwrap();
        if kb.row(target)[start.0] != kb.row(0)[start.0] {
            let (reply, _) = s
                .step(&DialogueAct::inform(Actor::System, [(start, kb.row(0)[start.0].clone())]))
                .unwrap();
            assert_eq!(reply.act_type, ActType::Deny);
        }
        let (_, st) = s.step(&DialogueAct::bare(Actor::System, ActType::Closing)).unwrap();
        assert_eq!(st, Status::Failure);
    }

    #[test]
    fn rule_agent_asks_before_answering_and_books_when_done() {
        let kb = tiny_kb();
        let o = kb.ontology();
        let goal = city_goal(&kb);
        let (s, _) = SimulatorSession::reset(&kb, &goal, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(rule_agent_act(&s.view(), o), SystemAction::Request(_)));

        let mut view = s.view();
        view.known = o.slot_ids().collect();
        view.pending_requests.clear();
        view.last_user = DialogueAct::bare(Actor::User, ActType::Book);
        assert_eq!(rule_agent_act(&view, o), SystemAction::Book);
    }

    #[test]
    fn rule_agent_success_on_simple_goals() {
        let kb = KnowledgeBase::generate(0, DEFAULT_KB_ROWS, Ontology::movie_booking());
        let corpus = generate_corpus(0, DEFAULT_TIER_SIZES, &kb).unwrap();
        let simple = corpus.tier(Tier::Simple);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut wins = 0;
        let n = 100;
        for i in 0..n {
            let goal = corpus.goal(simple[i % simple.len()]);
            let (mut s, _) = SimulatorSession::reset(&kb, goal, &mut rng);
            loop {
                let view = s.view();
                let act = rule_agent_act(&view, kb.ontology()).ground(&view, &kb);
                let (_, st) = s.step(&act).unwrap();
                if st.is_terminal() {
                    if st == Status::Success {
                        assert!(validate_success(&kb, goal, s.filled()));
                        wins += 1;
                    }
                    break;
                }
            }
        }
        let rate = wins as f64 / n as f64;
        assert!((0.2..=0.9).contains(&rate), "rule agent success {rate}");
    }
}
