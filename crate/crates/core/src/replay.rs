//! Bounded FIFO experience stores and Replay Buffer Spiking warm start.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::GoalCorpus;
use crate::error::{Error, Result};
use crate::neural::Minibatch;
use crate::student::{run_episode, Featurizer, SystemActionSet};
use crate::user_sim::{rule_agent_act, KnowledgeBase, Status};

pub const STUDENT_CAPACITY: usize = 5000;
pub const TEACHER_CAPACITY: usize = 2000;
pub const BATCH_SIZE: usize = 16;
pub const RBS_DIALOGUES: usize = 100;

/// Attempts at drawing a prefill that contains a successful dialogue.
const RBS_MAX_ATTEMPTS: u64 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    dim: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            capacity,
            dim,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Appends, evicting the oldest item once over capacity.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        for v in [&t.state, &t.next_state] {
            if v.len() != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    got: v.len(),
                });
            }
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    /// Uniform sampling with replacement; `None` when fewer than
    /// `batch_size` items are stored.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Option<Minibatch> {
        if batch_size == 0 || self.items.len() < batch_size {
            return None;
        }
        let mut batch = Minibatch::new(self.dim);
        for _ in 0..batch_size {
            let t = &self.items[rng.random_range(0..self.items.len())];
            batch.push(&t.state, t.action, t.reward, &t.next_state, t.terminal);
        }
        Some(batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefillStats {
    pub dialogues: usize,
    pub successes: usize,
    pub transitions: usize,
    /// Seed offset that produced the accepted batch.
    pub seed_offset: u64,
}

/// Replay Buffer Spiking: fills `buffer` with `n_dialogues` rule-agent
/// dialogues on uniformly drawn goals.
///
/// A batch without any successful dialogue is discarded and redrawn with
/// the next seed offset.
pub fn rbs_prefill(
    buffer: &mut ReplayBuffer,
    corpus: &GoalCorpus,
    kb: &KnowledgeBase,
    n_dialogues: usize,
    seed: u64,
) -> Result<PrefillStats> {
    if n_dialogues == 0 {
        return Ok(PrefillStats {
            dialogues: 0,
            successes: 0,
            transitions: 0,
            seed_offset: 0,
        });
    }
    if corpus.is_empty() {
        return Err(Error::Usage("cannot prefill from an empty corpus".into()));
    }
    let featurizer = Featurizer::new(kb.ontology());
    let actions = SystemActionSet::new(kb.ontology());
    for offset in 0..RBS_MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(offset));
        let mut collected = Vec::new();
        let mut successes = 0;
        for _ in 0..n_dialogues {
            let goal = corpus.goal(rng.random_range(0..corpus.len()));
            let outcome = run_episode(
                kb,
                goal,
                &featurizer,
                &actions,
                &mut rng,
                |view, _, _| Ok(actions.index(rule_agent_act(view, kb.ontology()))),
                |t, _| {
                    collected.push(t);
                    Ok(())
                },
            )?;
            if outcome.status == Status::Success {
                successes += 1;
            }
        }
        if successes > 0 {
            let transitions = collected.len();
            for t in collected {
                buffer.push(t)?;
            }
            return Ok(PrefillStats {
                dialogues: n_dialogues,
                successes,
                transitions,
                seed_offset: offset,
            });
        }
    }
    Err(Error::Usage(format!(
        "rule agent never succeeded in {RBS_MAX_ATTEMPTS} prefill attempts"
    )))
}
