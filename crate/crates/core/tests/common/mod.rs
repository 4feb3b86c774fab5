#![allow(dead_code)]

use acl_dqn::curriculum::{CurriculumController, PhaseChange, Schedule, Trigger};
use acl_dqn::domain::{generate_corpus, GoalCorpus, Ontology, SlotId, DEFAULT_TIER_SIZES};
use acl_dqn::neural::{Minibatch, Params, QFunction};
use acl_dqn::student::{SystemAction, SystemActionSet};
use acl_dqn::user_sim::{KnowledgeBase, SessionView};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn default_corpus() -> (KnowledgeBase, GoalCorpus) {
    let kb = KnowledgeBase::generate(0, 200, Ontology::movie_booking());
    let corpus = generate_corpus(0, DEFAULT_TIER_SIZES, &kb).unwrap();
    (kb, corpus)
}

/// Mastery gate and budget ceiling written statement by statement:
/// append p, drop the oldest once `episode >= T`, count entries >= alpha,
/// advance when the count reaches T. `episode` counts the phase's episodes
/// before the current one.
pub fn reference_schedule_c(
    outcomes: &[bool],
    budgets: [usize; 3],
    alpha: f64,
    t: usize,
) -> Vec<(usize, usize, Trigger)> {
    let mut changes = Vec::new();
    let mut phase = 0usize;
    let mut list: Vec<f64> = Vec::new();
    let (mut n_success, mut n_sampled, mut episode) = (0usize, 0usize, 0usize);
    for (k, &success) in outcomes.iter().enumerate() {
        if phase == 2 {
            break;
        }
        n_sampled += 1;
        if success {
            n_success += 1;
        }
        let p_success = n_success as f64 / n_sampled as f64;
        list.push(p_success);
        if episode >= t {
            list.remove(0);
        }
        let mut n = 0;
        for x in &list {
            if *x >= alpha {
                n += 1;
            }
        }
        episode += 1;
        let trigger = if n >= t {
            Some(Trigger::Mastery)
        } else if episode >= budgets[phase] {
            Some(Trigger::Budget)
        } else {
            None
        };
        if let Some(tr) = trigger {
            changes.push((k + 1, phase, tr));
            phase += 1;
            list.clear();
            n_success = 0;
            n_sampled = 0;
            episode = 0;
        }
    }
    changes
}

/// Feeds `outcomes` to the library controller; returns (epoch, from tier index, trigger).
pub fn controller_schedule_c(
    corpus: &GoalCorpus,
    outcomes: &[bool],
    epoch_size: usize,
    alpha: f64,
    t: usize,
) -> (Vec<(usize, usize, Trigger)>, Vec<PhaseChange>) {
    let mut c = CurriculumController::new(Schedule::C, corpus, epoch_size, alpha, t);
    let mut out = Vec::new();
    let mut raw = Vec::new();
    for (k, &s) in outcomes.iter().enumerate() {
        if let Some(ch) = c.after_episode(k + 1, s, corpus) {
            let from = match ch.from {
                acl_dqn::curriculum::Phase::Tier(tier) => tier.index(),
                acl_dqn::curriculum::Phase::All => unreachable!(),
            };
            out.push((ch.epoch, from, ch.trigger));
            raw.push(ch);
        }
    }
    (out, raw)
}

/// Asks about every slot first, then answers pending requests, then books.
pub fn oracle(view: &SessionView, actions: &SystemActionSet, n_slots: usize) -> usize {
    for s in 0..n_slots {
        let s = SlotId(s);
        if !view.known.contains(&s) && !view.pending_requests.contains(&s) {
            return actions.index(SystemAction::Request(s));
        }
    }
    if let Some(&s) = view.pending_requests.iter().next() {
        return actions.index(SystemAction::Inform(s));
    }
    actions.index(SystemAction::Book)
}

/// Independent forward pass and loss, written out loop by loop.
pub fn oracle_loss(p: &Params, dims: (usize, usize, usize), batch: &Minibatch, targets: &[f64]) -> f64 {
    let (input, hidden, output) = dims;
    let mut total = 0.0;
    for i in 0..batch.len() {
        let s = batch.state(i);
        let mut h = vec![0.0; hidden];
        for (k, hk) in h.iter_mut().enumerate() {
            let mut z = p.b1[k];
            for j in 0..input {
                z += p.w1[k * input + j] * s[j];
            }
            *hk = z.tanh();
        }
        let a = batch.actions[i];
        assert!(a < output);
        let mut q = p.b2[a];
        for k in 0..hidden {
            q += p.w2[a * hidden + k] * h[k];
        }
        total += (targets[i] - q).powi(2);
    }
    total / batch.len() as f64
}

pub fn oracle_targets(q: &QFunction, batch: &Minibatch, gamma: f64) -> Vec<f64> {
    (0..batch.len())
        .map(|i| {
            if batch.terminal[i] {
                batch.rewards[i]
            } else {
                let next = q.forward(batch.next_state(i), true).unwrap();
                batch.rewards[i] + gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect()
}

pub fn coord(p: &mut Params, k: usize) -> &mut f64 {
    p.iter_mut().nth(k).unwrap()
}

pub fn random_case(rng: &mut ChaCha8Rng) -> (QFunction, Minibatch, f64) {
    let input = rng.random_range(1..=5);
    let hidden = rng.random_range(1..=5);
    let output = rng.random_range(1..=4);
    let mut q = QFunction::new(input, hidden, output, rng);
    for p in q.online_mut().iter_mut() {
        *p += rng.random_range(-0.5..0.5);
    }
    // Perturb the online net away from the target so bootstraps differ.
    q.sync_target();
    for p in q.online_mut().iter_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    let mut batch = Minibatch::new(input);
    for _ in 0..rng.random_range(1..=8) {
        let s: Vec<f64> = (0..input).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s2: Vec<f64> = (0..input).map(|_| rng.random_range(-1.0..1.0)).collect();
        batch.push(
            &s,
            rng.random_range(0..output),
            rng.random_range(-2.0..2.0),
            &s2,
            rng.random_bool(0.3),
        );
    }
    (q, batch, rng.random_range(0.0..=1.0))
}

pub const FD_EPS: f64 = 1e-5;

/// Largest relative error between the analytic gradient and central
/// differences of [`oracle_loss`] over `cases` random nets.
pub fn worst_gradient_error(cases: usize, seed: u64) -> f64 {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (q, batch, gamma) = random_case(&mut rng);
        let dims = (q.input_dim(), q.hidden_dim(), q.output_dim());
        let targets = oracle_targets(&q, &batch, gamma);
        let analytic = q.gradient(&batch, gamma).unwrap();
        for (k, &g) in analytic.grad.iter().enumerate() {
            let mut plus = q.online().clone();
            *coord(&mut plus, k) += FD_EPS;
            let mut minus = q.online().clone();
            *coord(&mut minus, k) -= FD_EPS;
            let fd = (oracle_loss(&plus, dims, &batch, &targets) - oracle_loss(&minus, dims, &batch, &targets))
                / (2.0 * FD_EPS);
            // Floor for coordinates whose true value is ~0.
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Largest parameter-step norm of a plain lr=1 step, which equals the
/// post-clip gradient norm, and how many cases needed clipping.
pub fn worst_clipped_step(cases: usize, seed: u64) -> (f64, usize) {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let (mut worst, mut clipped): (f64, usize) = (0.0, 0);
    for _ in 0..cases {
        let (mut q, mut batch, gamma) = random_case(&mut rng);
        for r in batch.rewards.iter_mut() {
            *r *= 50.0;
        }
        q.optimizer = acl_dqn::neural::Optimizer::Sgd;
        q.learning_rate = 1.0;
        if q.gradient(&batch, gamma).unwrap().raw_norm > q.clip_norm {
            clipped += 1;
        }
        let before = q.online().clone();
        q.td_train_step(&batch, gamma).unwrap();
        let step = before
            .iter()
            .zip(q.online().iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(step);
    }
    (worst, clipped)
}
