//! The student dialogue agent: system action set, state features, ε-greedy
//! control, reward accounting and the DQN update on `D^S`.

use rand::Rng;

use crate::domain::{ActType, Actor, DialogueAct, Ontology, SlotId, UserGoal};
use crate::error::Result;
use crate::neural::QFunction;
use crate::replay::{ReplayBuffer, Transition};
use crate::user_sim::{KnowledgeBase, SessionView, SimulatorSession, Status, MAX_TURNS};

pub const SUCCESS_BONUS: f64 = 2.0 * MAX_TURNS as f64;
pub const FAILURE_PENALTY: f64 = -(MAX_TURNS as f64);
pub const TURN_PENALTY: f64 = -1.0;

pub const EPSILON_START: f64 = 0.3;
pub const EPSILON_END: f64 = 0.01;
pub const EPSILON_DECAY_EPOCHS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemAction {
    Request(SlotId),
    Inform(SlotId),
    ConfirmQuestion,
    ConfirmAnswer,
    Book,
    Closing,
    Greeting,
}

impl SystemAction {
    /// Turns the abstract action into a concrete act. Informs and bookings
    /// read from the first KB row matching the user's stated constraints and
    /// fall back to `not_sure` when there is none.
    pub fn ground(self, view: &SessionView, kb: &KnowledgeBase) -> DialogueAct {
        let row = view.kb.row.map(|r| kb.row(r));
        match self {
            SystemAction::Request(s) => DialogueAct::request(Actor::System, [s]),
            SystemAction::Inform(s) => match row {
                Some(row) => DialogueAct::inform(Actor::System, [(s, row[s.0].clone())]),
                None => DialogueAct::with_unk(Actor::System, ActType::NotSure, [s]),
            },
            SystemAction::Book => match row {
                Some(row) => DialogueAct::with_values(
                    Actor::System,
                    ActType::Book,
                    kb.ontology().slot_ids().map(|s| (s, row[s.0].clone())),
                ),
                None => DialogueAct::bare(Actor::System, ActType::NotSure),
            },
            SystemAction::ConfirmQuestion => DialogueAct::bare(Actor::System, ActType::ConfirmQuestion),
            SystemAction::ConfirmAnswer => DialogueAct::bare(Actor::System, ActType::ConfirmAnswer),
            SystemAction::Closing => DialogueAct::bare(Actor::System, ActType::Closing),
            SystemAction::Greeting => DialogueAct::bare(Actor::System, ActType::Greeting),
        }
    }
}

/// Fixed enumeration of system actions; the index is the Q-output index.
///
/// Layout: `request(slot)` for every slot, `inform(slot)` for every slot,
/// then confirm_question, confirm_answer, book, closing, greeting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SystemActionSet {
    n_slots: usize,
}

const FIXED_ACTIONS: [SystemAction; 5] = [
    SystemAction::ConfirmQuestion,
    SystemAction::ConfirmAnswer,
    SystemAction::Book,
    SystemAction::Closing,
    SystemAction::Greeting,
];

impl SystemActionSet {
    pub fn new(ontology: &Ontology) -> Self {
        Self { n_slots: ontology.len() }
    }

    pub fn len(&self) -> usize {
        2 * self.n_slots + FIXED_ACTIONS.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn action(&self, index: usize) -> SystemAction {
        let n = self.n_slots;
        if index < n {
            SystemAction::Request(SlotId(index))
        } else if index < 2 * n {
            SystemAction::Inform(SlotId(index - n))
        } else {
            FIXED_ACTIONS[index - 2 * n]
        }
    }

    pub fn index(&self, action: SystemAction) -> usize {
        let n = self.n_slots;
        match action {
            SystemAction::Request(s) => s.0,
            SystemAction::Inform(s) => n + s.0,
            other => 2 * n + FIXED_ACTIONS.iter().position(|a| *a == other).unwrap(),
        }
    }
}

/// State features. Every entry is in `[0, 1]`.
///
/// | block | width | content |
/// |---|---|---|
/// | user act | 11 + n | act-type one-hot, mentioned-slot flags |
/// | last system act | 11 + n | same; all zero on the first turn |
/// | belief | 2n | known flag per slot, pending-request flag per slot |
/// | turn | 1 + 40 | `turn / 40`, one-hot of `turn - 1` |
/// | database | 1 | matching rows / table size |
///
/// Bookings carry a whole KB row as payload; their slot flags are left
/// clear so the block only reflects the act type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Featurizer {
    n_slots: usize,
}

impl Featurizer {
    pub fn new(ontology: &Ontology) -> Self {
        Self { n_slots: ontology.len() }
    }

    pub fn dim(&self) -> usize {
        let acts = ActType::ALL.len();
        2 * (acts + self.n_slots) + 2 * self.n_slots + 1 + MAX_TURNS + 1
    }

    fn act_block(&self, out: &mut [f64], act: &DialogueAct) {
        out[act.act_type.index()] = 1.0;
        if act.act_type != ActType::Book {
            for s in act.slots() {
                out[ActType::ALL.len() + s.0] = 1.0;
            }
        }
    }

    pub fn featurize(&self, view: &SessionView) -> Vec<f64> {
        let n = self.n_slots;
        let act_w = ActType::ALL.len() + n;
        let mut v = vec![0.0; self.dim()];
        self.act_block(&mut v[..act_w], &view.last_user);
        if let Some(sys) = &view.last_system {
            self.act_block(&mut v[act_w..2 * act_w], sys);
        }
        let belief = 2 * act_w;
        for s in &view.known {
            v[belief + s.0] = 1.0;
        }
        for s in &view.pending_requests {
            v[belief + n + s.0] = 1.0;
        }
        let turn = belief + 2 * n;
        let t = view.turn.clamp(1, MAX_TURNS);
        v[turn] = t as f64 / MAX_TURNS as f64;
        v[turn + t] = 1.0;
        let db = turn + 1 + MAX_TURNS;
        v[db] = if view.kb_rows == 0 {
            0.0
        } else {
            (view.kb.count as f64 / view.kb_rows as f64).min(1.0)
        };
        v
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy over the online Q-head.
pub fn student_act<R: Rng + ?Sized>(q: &QFunction, state: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..q.output_dim()));
    }
    Ok(argmax(&q.forward(state, false)?))
}

/// Per-turn reward: -1, plus `2L` on success or `-L` on failure.
pub fn step_reward(status: Status) -> f64 {
    match status {
        Status::Ongoing => TURN_PENALTY,
        Status::Success => TURN_PENALTY + SUCCESS_BONUS,
        Status::Failure => TURN_PENALTY + FAILURE_PENALTY,
    }
}

/// Closed form of the summed rewards of a finished episode.
pub fn episode_total(status: Status, turns: usize) -> f64 {
    let bonus = if status == Status::Success {
        SUCCESS_BONUS
    } else {
        FAILURE_PENALTY
    };
    bonus - turns as f64
}

/// Linear decay from 0.3 to 0.01 over the first 200 epochs (1-based).
pub fn epsilon_schedule(epoch: usize) -> f64 {
    let progress = (epoch.saturating_sub(1) as f64 / EPSILON_DECAY_EPOCHS as f64).min(1.0);
    EPSILON_START + (EPSILON_END - EPSILON_START) * progress
}

/// One DQN step on a minibatch from `D^S`; `None` while the buffer is
/// underfull.
pub fn student_train_step<R: Rng + ?Sized>(
    q: &mut QFunction,
    buffer: &ReplayBuffer,
    batch_size: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<Option<f64>> {
    match buffer.sample(batch_size, rng) {
        Some(batch) => q.td_train_step(&batch, gamma).map(Some),
        None => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub status: Status,
    pub turns: usize,
    pub total_reward: f64,
}

/// Plays one dialogue. `choose` maps (view, features) to an action index;
/// `on_transition` sees every student transition as it happens.
pub fn run_episode<R, C, T>(
    kb: &KnowledgeBase,
    goal: &UserGoal,
    featurizer: &Featurizer,
    actions: &SystemActionSet,
    rng: &mut R,
    mut choose: C,
    mut on_transition: T,
) -> Result<EpisodeOutcome>
where
    R: Rng + ?Sized,
    C: FnMut(&SessionView, &[f64], &mut R) -> Result<usize>,
    T: FnMut(Transition, &mut R) -> Result<()>,
{
    let (mut session, _) = SimulatorSession::reset(kb, goal, rng);
    let mut view = session.view();
    let mut state = featurizer.featurize(&view);
    let mut total = 0.0;
    loop {
        let a = choose(&view, &state, rng)?;
        let act = actions.action(a).ground(&view, kb);
        let (_, status) = session.step(&act)?;
        let reward = step_reward(status);
        total += reward;
        view = session.view();
        let next_state = featurizer.featurize(&view);
        let terminal = status.is_terminal();
        on_transition(
            Transition {
                state: std::mem::replace(&mut state, next_state.clone()),
                action: a,
                reward,
                next_state,
                terminal,
            },
            rng,
        )?;
        if terminal {
            return Ok(EpisodeOutcome {
                status,
                turns: session.turn(),
                total_reward: total,
            });
        }
    }
}
