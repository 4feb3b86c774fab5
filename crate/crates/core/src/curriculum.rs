//! Curriculum schedules A/B/C, the over-repetition penalty and the mastery
//! gate.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::domain::{GoalCorpus, Tier};
use crate::error::{Error, Result};
use crate::user_sim::MAX_TURNS;

/// Saturation constant of the penalty curve.
pub const ORP_K: f64 = 10.0;
pub const ORP_L: f64 = MAX_TURNS as f64;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_MASTERY_WINDOW: usize = 5;

/// `-L * og / (og + K)`: zero for an unsampled goal, strictly decreasing,
/// bounded below by `-L` without reaching it.
pub fn orp_penalty(og: u64) -> f64 {
    let og = og as f64;
    -ORP_L * og / (og + ORP_K)
}

/// Per-goal sample counts over the current action set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverRepetitionCounter {
    og: BTreeMap<usize, u64>,
}

impl OverRepetitionCounter {
    pub fn new(active: &[usize]) -> Self {
        Self {
            og: active.iter().map(|&g| (g, 0)).collect(),
        }
    }

    /// Zeroes the counter over a new action set.
    pub fn reset(&mut self, active: &[usize]) {
        *self = Self::new(active);
    }

    pub fn count(&self, goal: usize) -> Option<u64> {
        self.og.get(&goal).copied()
    }

    /// Penalty on the pre-increment count, then the increment.
    pub fn on_goal_sampled(&mut self, goal: usize) -> Result<f64> {
        let og = self
            .og
            .get_mut(&goal)
            .ok_or_else(|| Error::Usage(format!("goal #{goal} is not in the active set")))?;
        let penalty = orp_penalty(*og);
        *og += 1;
        Ok(penalty)
    }
}

/// Windowed success-rate tracker for schedule C.
///
/// `n_success / n_sampled` is cumulative within a phase; only the list of
/// snapshots is windowed.
#[derive(Debug, Clone, PartialEq)]
pub struct MasteryTracker {
    pub alpha: f64,
    pub window_len: usize,
    window: VecDeque<f64>,
    n_success: usize,
    n_sampled: usize,
}

impl MasteryTracker {
    pub fn new(alpha: f64, window_len: usize) -> Self {
        Self {
            alpha,
            window_len,
            window: VecDeque::with_capacity(window_len + 1),
            n_success: 0,
            n_sampled: 0,
        }
    }

    pub fn window(&self) -> &VecDeque<f64> {
        &self.window
    }

    pub fn p_success(&self) -> Option<f64> {
        (self.n_sampled > 0).then(|| self.n_success as f64 / self.n_sampled as f64)
    }

    /// Records one episode; returns whether the phase is mastered.
    pub fn record(&mut self, success: bool) -> bool {
        self.n_sampled += 1;
        if success {
            self.n_success += 1;
        }
        self.window.push_back(self.n_success as f64 / self.n_sampled as f64);
        if self.window.len() > self.window_len {
            self.window.pop_front();
        }
        self.window.len() == self.window_len && self.window.iter().all(|&p| p >= self.alpha)
    }

    pub fn reset(&mut self) {
        self.window.clear();
        self.n_success = 0;
        self.n_sampled = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Schedule {
    A,
    B,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    All,
    Tier(Tier),
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::All => "all",
            Phase::Tier(t) => t.name(),
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Phase {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Phase::All),
            "simple" => Ok(Phase::Tier(Tier::Simple)),
            "medium" => Ok(Phase::Tier(Tier::Medium)),
            "difficult" => Ok(Phase::Tier(Tier::Difficult)),
            other => Err(Error::Usage(format!("unknown phase {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Budget,
    Mastery,
}

/// One row of the phase-transition log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PhaseChange {
    pub epoch: usize,
    pub from: Phase,
    pub to: Phase,
    pub trigger: Trigger,
}

/// `floor(|G_tier| / |G| * epoch_size)` per tier.
pub fn phase_budgets(corpus: &GoalCorpus, epoch_size: usize) -> [usize; 3] {
    let total = corpus.len().max(1);
    Tier::ALL.map(|t| corpus.tier(t).len() * epoch_size / total)
}

/// Phase state machine plus the bookkeeping each schedule needs.
#[derive(Debug, Clone)]
pub struct CurriculumController {
    schedule: Schedule,
    phase: Phase,
    episodes_in_phase: usize,
    budgets: [usize; 3],
    mastery: MasteryTracker,
    counter: OverRepetitionCounter,
}

impl CurriculumController {
    pub fn new(schedule: Schedule, corpus: &GoalCorpus, epoch_size: usize, alpha: f64, window: usize) -> Self {
        let phase = match schedule {
            Schedule::A => Phase::All,
            Schedule::B | Schedule::C => Phase::Tier(Tier::Simple),
        };
        let mut c = Self {
            schedule,
            phase,
            episodes_in_phase: 0,
            budgets: phase_budgets(corpus, epoch_size),
            mastery: MasteryTracker::new(alpha, window),
            counter: OverRepetitionCounter::new(&[]),
        };
        c.counter.reset(&c.active_goal_set(corpus));
        c
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn budgets(&self) -> [usize; 3] {
        self.budgets
    }

    pub fn episodes_in_phase(&self) -> usize {
        self.episodes_in_phase
    }

    pub fn mastery(&self) -> &MasteryTracker {
        &self.mastery
    }

    pub fn counter(&self) -> &OverRepetitionCounter {
        &self.counter
    }

    /// Corpus positions the teacher may pick from in the current phase.
    pub fn active_goal_set(&self, corpus: &GoalCorpus) -> Vec<usize> {
        match self.phase {
            Phase::All => (0..corpus.len()).collect(),
            Phase::Tier(t) => corpus.tier(t).to_vec(),
        }
    }

    /// Returns `(og before sampling, r_or)`.
    pub fn on_goal_sampled(&mut self, goal: usize) -> Result<(u64, f64)> {
        let og = self
            .counter
            .count(goal)
            .ok_or_else(|| Error::Usage(format!("goal #{goal} is not in the active set")))?;
        Ok((og, self.counter.on_goal_sampled(goal)?))
    }

    /// Bookkeeping after one finished episode on a goal of the current phase.
    pub fn after_episode(&mut self, epoch: usize, success: bool, corpus: &GoalCorpus) -> Option<PhaseChange> {
        self.episodes_in_phase += 1;
        let Phase::Tier(tier) = self.phase else {
            return None;
        };
        let next = tier.next()?;
        let budget_hit = self.episodes_in_phase >= self.budgets[tier.index()];
        let trigger = match self.schedule {
            Schedule::A => None,
            Schedule::B => budget_hit.then_some(Trigger::Budget),
            Schedule::C => {
                if self.mastery.record(success) {
                    Some(Trigger::Mastery)
                } else {
                    budget_hit.then_some(Trigger::Budget)
                }
            }
        }?;
        let change = PhaseChange {
            epoch,
            from: self.phase,
            to: Phase::Tier(next),
            trigger,
        };
        self.phase = Phase::Tier(next);
        self.episodes_in_phase = 0;
        self.mastery.reset();
        self.counter.reset(&self.active_goal_set(corpus));
        Some(change)
    }
}
