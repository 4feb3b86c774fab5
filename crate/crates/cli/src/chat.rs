//! Menu-driven human evaluation at the dialogue-act level.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use acl_dqn::domain::{ActType, Actor, DialogueAct, Ontology, SlotId, UserGoal};
use acl_dqn::student::{argmax, Featurizer, SystemActionSet};
use acl_dqn::user_sim::{validate_success, KnowledgeBase, SessionView, Status, MAX_TURNS};
use acl_dqn::{Error, Result};
use serde::Serialize;

/// One line of `chat_sessions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionRecord {
    pub agent: String,
    pub goal_id: u32,
    pub status: Status,
    pub turns: usize,
    pub score: Option<u8>,
    pub transcript: Vec<String>,
}

/// Dialogue state as the system sees it when the user is a person.
#[derive(Debug, Clone)]
pub struct HumanSession<'a> {
    kb: &'a KnowledgeBase,
    goal: UserGoal,
    conveyed: BTreeMap<SlotId, String>,
    dont_care: BTreeSet<SlotId>,
    filled: BTreeMap<SlotId, String>,
    voiced: BTreeSet<SlotId>,
    turn: usize,
    status: Status,
    last_user: DialogueAct,
    last_system: Option<DialogueAct>,
}

impl<'a> HumanSession<'a> {
    pub fn new(kb: &'a KnowledgeBase, goal: UserGoal) -> Self {
        Self {
            kb,
            goal,
            conveyed: BTreeMap::new(),
            dont_care: BTreeSet::new(),
            filled: BTreeMap::new(),
            voiced: BTreeSet::new(),
            turn: 1,
            status: Status::Ongoing,
            last_user: DialogueAct::bare(Actor::User, ActType::Greeting),
            last_system: None,
        }
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn turn(&self) -> usize {
        self.turn
    }

    #[cfg(test)]
    pub fn filled(&self) -> &BTreeMap<SlotId, String> {
        &self.filled
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            last_user: self.last_user.clone(),
            last_system: self.last_system.clone(),
            known: self
                .conveyed
                .keys()
                .chain(&self.dont_care)
                .chain(self.filled.keys())
                .copied()
                .collect(),
            pending_requests: self
                .voiced
                .iter()
                .filter(|s| !self.filled.contains_key(s))
                .copied()
                .collect(),
            constraints: self.conveyed.clone(),
            turn: self.turn,
            kb: self.kb.query(&self.conveyed),
            kb_rows: self.kb.len(),
        }
    }

    pub fn apply_user(&mut self, act: DialogueAct) {
        match act.act_type {
            ActType::Inform => {
                for (s, v) in act.payload.iter() {
                    self.conveyed.insert(*s, v.as_str().to_string());
                    self.dont_care.remove(s);
                }
            }
            ActType::Request => self.voiced.extend(act.slots()),
            ActType::NotSure => self.dont_care.extend(act.slots()),
            ActType::Deny => {
                if let Some(sys) = &self.last_system {
                    if sys.act_type == ActType::Inform {
                        for s in sys.slots() {
                            self.filled.remove(&s);
                        }
                    }
                }
            }
            _ => {}
        }
        self.last_user = act;
    }

    /// Applies a system act. A booking succeeds when it matches every goal
    /// constraint and all requested values were answered correctly.
    pub fn apply_system(&mut self, act: &DialogueAct) {
        match act.act_type {
            ActType::Inform => {
                for (s, v) in act.payload.iter() {
                    self.filled.insert(*s, v.as_str().to_string());
                }
            }
            ActType::Book => {
                let consistent = !act.payload.is_empty()
                    && self
                        .goal
                        .inform_slots()
                        .iter()
                        .all(|(s, v)| act.value(*s) == Some(v.as_str()));
                if consistent && validate_success(self.kb, &self.goal, &self.filled) {
                    self.status = Status::Success;
                }
            }
            ActType::Closing => self.status = Status::Failure,
            _ => {}
        }
        if self.status == Status::Ongoing {
            if self.turn >= MAX_TURNS {
                self.status = Status::Failure;
            } else {
                self.turn += 1;
            }
        }
        self.last_system = Some(act.clone());
    }

    pub fn quit(&mut self) {
        self.status = Status::Failure;
    }
}

fn slot_text(ontology: &Ontology, s: SlotId) -> String {
    ontology.name(s).replace('_', " ")
}

/// Template text for a system act.
pub fn render_system(act: &DialogueAct, ontology: &Ontology) -> String {
    let first = act.slots().next();
    match (act.act_type, first) {
        (ActType::Request, Some(s)) => format!("Which {} would you like?", slot_text(ontology, s)),
        (ActType::Inform, Some(s)) => format!(
            "The {} is {}.",
            slot_text(ontology, s),
            act.value(s).unwrap_or("unknown")
        ),
        (ActType::NotSure, Some(s)) => format!(
            "Sorry, I don't know the {} for that.",
            slot_text(ontology, s)
        ),
        (ActType::NotSure, None) => "Sorry, nothing matches what you asked for.".into(),
        (ActType::Book, _) => {
            let parts: Vec<String> = act
                .payload
                .iter()
                .map(|(s, v)| format!("{} {}", slot_text(ontology, *s), v.as_str()))
                .collect();
            format!("I have booked: {}.", parts.join(", "))
        }
        (ActType::ConfirmQuestion, _) => "Is there anything else I can help with?".into(),
        (ActType::ConfirmAnswer, _) => "Okay.".into(),
        (ActType::Closing, _) => "Goodbye.".into(),
        (ActType::Greeting, _) => "Hello, how can I help you?".into(),
        _ => act.render(ontology),
    }
}

pub fn render_goal(goal: &UserGoal, ontology: &Ontology) -> String {
    let mut s = format!("Your goal (#{}):\n", goal.id());
    for (slot, v) in goal.inform_slots() {
        s.push_str(&format!("  you want {} = {}\n", slot_text(ontology, *slot), v));
    }
    for slot in goal.request_slots() {
        s.push_str(&format!("  you want to know the {}\n", slot_text(ontology, *slot)));
    }
    s
}

const USER_ACTS: [&str; 6] = [
    "inform a constraint",
    "request information",
    "say you don't care about a slot",
    "deny the last answer",
    "ask to book",
    "end the dialogue (counts as failed)",
];

/// Terminal prompts over any reader and writer.
pub struct Prompter<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> Prompter<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self { input, output }
    }

    pub fn say(&mut self, text: &str) -> Result<()> {
        writeln!(self.output, "{text}")?;
        Ok(())
    }

    /// `None` at end of input.
    fn line(&mut self) -> Result<Option<String>> {
        self.output.flush()?;
        let mut buf = String::new();
        if self.input.read_line(&mut buf)? == 0 {
            return Ok(None);
        }
        Ok(Some(buf.trim().to_string()))
    }

    /// Numbered menu; returns a zero-based index, `None` at end of input.
    pub fn choose(&mut self, title: &str, options: &[String]) -> Result<Option<usize>> {
        writeln!(self.output, "{title}")?;
        for (i, o) in options.iter().enumerate() {
            writeln!(self.output, "  {}) {}", i + 1, o)?;
        }
        loop {
            write!(self.output, "> ")?;
            let Some(line) = self.line()? else {
                return Ok(None);
            };
            match line.parse::<usize>() {
                Ok(n) if (1..=options.len()).contains(&n) => return Ok(Some(n - 1)),
                _ => writeln!(self.output, "enter a number from 1 to {}", options.len())?,
            }
        }
    }

    pub fn score(&mut self) -> Result<Option<u8>> {
        loop {
            write!(self.output, "Rate the system from 1 to 10: ")?;
            let Some(line) = self.line()? else {
                return Ok(None);
            };
            match line.parse::<u8>() {
                Ok(n) if (1..=10).contains(&n) => return Ok(Some(n)),
                _ => writeln!(self.output, "enter a number from 1 to 10")?,
            }
        }
    }

    pub fn confirm(&mut self, question: &str) -> Result<bool> {
        write!(self.output, "{question} [y/N] ")?;
        Ok(matches!(self.line()?.as_deref(), Some("y" | "Y" | "yes")))
    }

    fn pick_slot(&mut self, ontology: &Ontology, title: &str) -> Result<Option<SlotId>> {
        let slots: Vec<SlotId> = ontology.slot_ids().collect();
        let names: Vec<String> = slots.iter().map(|s| slot_text(ontology, *s)).collect();
        Ok(self.choose(title, &names)?.map(|i| slots[i]))
    }

    /// Asks for the next user act; `None` means the user ended the dialogue.
    pub fn user_act(&mut self, ontology: &Ontology, goal: &UserGoal) -> Result<Option<DialogueAct>> {
        let acts: Vec<String> = USER_ACTS.iter().map(|s| s.to_string()).collect();
        let Some(choice) = self.choose("Your move:", &acts)? else {
            return Ok(None);
        };
        let act = match choice {
            0 => {
                let Some(s) = self.pick_slot(ontology, "Which slot?")? else {
                    return Ok(None);
                };
                let values = ontology.values(s);
                let labels: Vec<String> = values
                    .iter()
                    .map(|v| {
                        if goal.inform_slots().get(&s) == Some(v) {
                            format!("{v} (your goal)")
                        } else {
                            v.clone()
                        }
                    })
                    .collect();
                let Some(i) = self.choose("Which value?", &labels)? else {
                    return Ok(None);
                };
                DialogueAct::inform(Actor::User, [(s, values[i].clone())])
            }
            1 | 2 => {
                let Some(s) = self.pick_slot(ontology, "Which slot?")? else {
                    return Ok(None);
                };
                if choice == 1 {
                    DialogueAct::request(Actor::User, [s])
                } else {
                    DialogueAct::with_unk(Actor::User, ActType::NotSure, [s])
                }
            }
            3 => DialogueAct::bare(Actor::User, ActType::Deny),
            4 => DialogueAct::bare(Actor::User, ActType::Book),
            _ => return Ok(None),
        };
        Ok(Some(act))
    }
}

/// Plays one dialogue between the person and `policy`, then asks for a
/// score. The policy maps (view, features) to an action index.
pub fn run_session<R, W, P>(
    io: &mut Prompter<R, W>,
    kb: &KnowledgeBase,
    goal: &UserGoal,
    agent: &str,
    mut policy: P,
) -> Result<SessionRecord>
where
    R: BufRead,
    W: Write,
    P: FnMut(&SessionView, &[f64]) -> Result<usize>,
{
    let ontology = kb.ontology();
    let featurizer = Featurizer::new(ontology);
    let actions = SystemActionSet::new(ontology);
    let mut session = HumanSession::new(kb, goal.clone());
    let mut transcript = Vec::new();
    io.say(&render_goal(goal, ontology))?;

    let mut next_user = io.user_act(ontology, goal)?;
    loop {
        let Some(user) = next_user else {
            session.quit();
            transcript.push("user: quit".to_string());
            io.say("Dialogue ended by the user.")?;
            break;
        };
        transcript.push(format!("user: {}", user.render(ontology)));
        session.apply_user(user);

        let view = session.view();
        let a = policy(&view, &featurizer.featurize(&view))?;
        if a >= actions.len() {
            return Err(Error::Dimension {
                expected: actions.len(),
                got: a + 1,
            });
        }
        let act = actions.action(a).ground(&view, kb);
        transcript.push(format!("system: {}", act.render(ontology)));
        io.say(&format!("System: {}", render_system(&act, ontology)))?;
        session.apply_system(&act);
        match session.status() {
            Status::Success => {
                io.say("The booking satisfies your goal.")?;
                break;
            }
            Status::Failure => {
                io.say("The dialogue failed.")?;
                break;
            }
            Status::Ongoing => {}
        }
        next_user = io.user_act(ontology, goal)?;
    }
    let score = io.score()?;
    Ok(SessionRecord {
        agent: agent.to_string(),
        goal_id: goal.id(),
        status: session.status(),
        turns: session.turn(),
        score,
        transcript,
    })
}

/// Greedy policy from a loaded network; never touches its parameters.
pub fn greedy(q: &acl_dqn::neural::QFunction) -> impl FnMut(&SessionView, &[f64]) -> Result<usize> + '_ {
    move |_, state| Ok(argmax(&q.forward(state, false)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use acl_dqn::orchestrator::Environment;
    use acl_dqn::student::SystemAction;
    use std::io::Cursor;

    fn env() -> Environment {
        Environment::generate(0).unwrap()
    }

    #[test]
    fn early_quit_is_failure() {
        let env = env();
        let goal = env.corpus.goal(0).clone();
        let actions = SystemActionSet::new(env.ontology());
        let greet = actions.index(SystemAction::Greeting);
        // ask to book twice, then end the dialogue, then score 4
        let mut io = Prompter::new(Cursor::new("5\n5\n6\n4\n"), Vec::new());
        let rec = run_session(&mut io, &env.kb, &goal, "test", |_, _| Ok(greet)).unwrap();
        assert_eq!(rec.status, Status::Failure);
        assert_eq!(rec.turns, 3);
        assert_eq!(rec.score, Some(4));
        assert_eq!(rec.transcript.last().unwrap(), "user: quit");
    }

    #[test]
    fn answered_booking_is_success() {
        let env = env();
        let o = env.ontology();
        let goal = env.corpus.goal(0).clone();
        let actions = SystemActionSet::new(o);
        // Scripted system: answer every pending request, then book.
        let policy = |view: &SessionView, _: &[f64]| {
            Ok(match view.pending_requests.iter().next() {
                Some(&s) => actions.index(SystemAction::Inform(s)),
                None => actions.index(SystemAction::Book),
            })
        };
        // State every constraint, then request every request slot.
        let mut script = String::new();
        for (s, v) in goal.inform_slots() {
            let vi = o.values(*s).iter().position(|x| x == v).unwrap();
            script.push_str(&format!("1\n{}\n{}\n", s.0 + 1, vi + 1));
        }
        for s in goal.request_slots() {
            script.push_str(&format!("2\n{}\n", s.0 + 1));
        }
        script.push_str("5\n9\n");
        let mut io = Prompter::new(Cursor::new(script), Vec::new());
        let rec = run_session(&mut io, &env.kb, &goal, "oracle", policy).unwrap();
        assert_eq!(rec.status, Status::Success, "{:?}", rec.transcript);
        assert_eq!(rec.score, Some(9));
    }

    #[test]
    fn deny_retracts_answer() {
        let env = env();
        let goal = env.corpus.goal(0).clone();
        let s = *goal.request_slots().iter().next().unwrap();
        let mut session = HumanSession::new(&env.kb, goal);
        session.apply_user(DialogueAct::request(Actor::User, [s]));
        session.apply_system(&DialogueAct::inform(Actor::System, [(s, "x".to_string())]));
        assert!(session.filled().contains_key(&s));
        assert!(session.view().pending_requests.is_empty());
        session.apply_user(DialogueAct::bare(Actor::User, ActType::Deny));
        assert!(!session.filled().contains_key(&s));
        assert!(session.view().pending_requests.contains(&s));
    }

    #[test]
    fn turn_cap_fails() {
        let env = env();
        let goal = env.corpus.goal(0).clone();
        let mut session = HumanSession::new(&env.kb, goal);
        let greet = DialogueAct::bare(Actor::System, ActType::Greeting);
        for _ in 0..MAX_TURNS {
            session.apply_system(&greet);
        }
        assert_eq!(session.status(), Status::Failure);
    }

    #[test]
    fn invalid_menu_input_is_reprompted() {
        let mut io = Prompter::new(Cursor::new("0\nabc\n2\n"), Vec::new());
        let opts = vec!["a".to_string(), "b".to_string()];
        assert_eq!(io.choose("pick", &opts).unwrap(), Some(1));
        let text = String::from_utf8(io.output).unwrap();
        assert_eq!(text.matches("enter a number").count(), 2);
    }

    #[test]
    fn system_templates() {
        let o = acl_dqn::domain::Ontology::movie_booking();
        let city = o.slot("city").unwrap();
        let act = DialogueAct::request(Actor::System, [city]);
        assert_eq!(render_system(&act, &o), "Which city would you like?");
        let act = DialogueAct::inform(Actor::System, [(city, "seattle".to_string())]);
        assert_eq!(render_system(&act, &o), "The city is seattle.");
    }
}
