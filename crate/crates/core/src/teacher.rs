//! The teacher agent: a DQN whose actions are goal choices for the student.

use std::collections::VecDeque;

use rand::Rng;

use crate::domain::GoalCorpus;
use crate::error::{Error, Result};
use crate::neural::QFunction;
use crate::replay::{ReplayBuffer, Transition};
use crate::student::FAILURE_PENALTY;
use crate::user_sim::MAX_TURNS;

/// Episodes summarized in the environment block of the teacher state.
pub const SUMMARY_WINDOW: usize = 20;

/// Width of [`TeacherObserver::state`].
pub const TEACHER_STATE_DIM: usize = 12;

/// Last episode total reward per goal, `x^g` in the teacher reward.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalRewardTable {
    x: Vec<f64>,
}

impl GoalRewardTable {
    /// Every goal starts at the failure floor `-L`.
    pub fn new(n_goals: usize) -> Self {
        Self {
            x: vec![FAILURE_PENALTY; n_goals],
        }
    }

    pub fn get(&self, goal: usize) -> f64 {
        self.x[goal]
    }
}

/// The pieces of one teacher reward, kept for the decision log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherReward {
    pub r_or: f64,
    pub x_now: f64,
    pub x_prev: f64,
    pub r: f64,
}

/// `r = r_or + x_now - x_prev`, then `x[goal] := x_now`.
pub fn teacher_reward(r_or: f64, x_now: f64, table: &mut GoalRewardTable, goal: usize) -> TeacherReward {
    let x_prev = table.x[goal];
    let r = r_or + x_now - x_prev;
    table.x[goal] = x_now;
    TeacherReward { r_or, x_now, x_prev, r }
}

/// ε-greedy over the Q-head restricted to `active`.
pub fn teacher_act<R: Rng + ?Sized>(
    q: &QFunction,
    state: &[f64],
    active: &[usize],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if active.is_empty() {
        return Err(Error::Usage("empty teacher action set".into()));
    }
    if active.len() == 1 {
        return Ok(active[0]);
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(active[rng.random_range(0..active.len())]);
    }
    let values = q.forward(state, false)?;
    let mut best = active[0];
    for &g in &active[1..] {
        if values[g] > values[best] || (values[g] == values[best] && g < best) {
            best = g;
        }
    }
    Ok(best)
}

pub fn teacher_train_step<R: Rng + ?Sized>(
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

/// Stores one non-terminal teacher transition.
pub fn record_teacher_transition(
    buffer: &mut ReplayBuffer,
    state: Vec<f64>,
    goal: usize,
    reward: f64,
    next_state: Vec<f64>,
) -> Result<()> {
    buffer.push(Transition {
        state,
        action: goal,
        reward,
        next_state,
        terminal: false,
    })
}

/// Tracks what the teacher sees between decisions.
///
/// State layout: recent success rate and mean episode reward rescaled from
/// `[-2L, 2L]` to `[0, 1]`; current goal (normalized position + tier
/// one-hot); previous goal (same); the student's parameter RMS after the
/// current goal's episode and after the previous one.
#[derive(Debug, Clone)]
pub struct TeacherObserver {
    recent: VecDeque<(bool, f64)>,
    current: Option<(usize, f64)>,
    last: Option<(usize, f64)>,
}

impl Default for TeacherObserver {
    fn default() -> Self {
        Self::new()
    }
}

impl TeacherObserver {
    pub fn new() -> Self {
        Self {
            recent: VecDeque::with_capacity(SUMMARY_WINDOW + 1),
            current: None,
            last: None,
        }
    }

    /// Registers a finished episode on `goal`.
    pub fn observe(&mut self, goal: usize, success: bool, total_reward: f64, param_scalar: f64) {
        self.recent.push_back((success, total_reward));
        if self.recent.len() > SUMMARY_WINDOW {
            self.recent.pop_front();
        }
        self.last = self.current.replace((goal, param_scalar));
    }

    pub fn state(&self, corpus: &GoalCorpus) -> Vec<f64> {
        let mut v = Vec::with_capacity(TEACHER_STATE_DIM);
        let n = self.recent.len();
        if n == 0 {
            v.extend([0.0, 0.0]);
        } else {
            let wins = self.recent.iter().filter(|(s, _)| *s).count() as f64;
            let mean = self.recent.iter().map(|(_, r)| r).sum::<f64>() / n as f64;
            let span = 2.0 * MAX_TURNS as f64;
            v.push(wins / n as f64);
            v.push(((mean + span) / (2.0 * span)).clamp(0.0, 1.0));
        }
        let denom = corpus.len().saturating_sub(1).max(1) as f64;
        for slot in [self.current, self.last] {
            match slot {
                Some((g, _)) => {
                    v.push(g as f64 / denom);
                    let mut tier = [0.0; 3];
                    tier[corpus.tier_of(g).index()] = 1.0;
                    v.extend(tier);
                }
                None => v.extend([0.0; 4]),
            }
        }
        v.push(self.current.map_or(0.0, |(_, p)| p));
        v.push(self.last.map_or(0.0, |(_, p)| p));
        debug_assert_eq!(v.len(), TEACHER_STATE_DIM);
        v
    }
}
