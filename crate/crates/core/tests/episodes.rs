mod common;

use common::oracle;

use acl_dqn::domain::ActType;
use acl_dqn::neural::{Params, QFunction};
use acl_dqn::orchestrator::{evaluate_policy, evaluate_with, run_training, AgentKind, Environment, TrainConfig};
use acl_dqn::replay::{ReplayBuffer, Transition};
use acl_dqn::student::{run_episode, student_train_step, Featurizer, SystemAction, SystemActionSet};
use acl_dqn::teacher::{teacher_train_step, TEACHER_STATE_DIM};
use acl_dqn::user_sim::Status;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn env() -> Environment {
    Environment::generate(0).unwrap()
}

#[test]
fn reward_accounting_over_random_episodes() {
    let env = env();
    let featurizer = Featurizer::new(env.ontology());
    let actions = SystemActionSet::new(env.ontology());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut wins, mut losses) = (0, 0);
    for ep in 0..1000 {
        let goal = env.corpus.goal(rng.random_range(0..env.corpus.len()));
        let mut step_sum = 0.0;
        let mut steps = 0;
        // Mix random play with the oracle so both outcomes occur.
        let scripted = ep % 2 == 0;
        let out = run_episode(
            &env.kb,
            goal,
            &featurizer,
            &actions,
            &mut rng,
            |view, _, rng| {
                Ok(if scripted && rng.random_bool(0.9) {
                    oracle(view, &actions, env.ontology().len())
                } else {
                    rng.random_range(0..actions.len())
                })
            },
            |t, _| {
                step_sum += t.reward;
                steps += 1;
                Ok(())
            },
        )
        .unwrap();
        let bonus = match out.status {
            Status::Success => {
                wins += 1;
                80.0
            }
            Status::Failure => {
                losses += 1;
                -40.0
            }
            Status::Ongoing => panic!("episode ended while ongoing"),
        };
        assert_eq!(out.total_reward, -(out.turns as f64) + bonus, "episode {ep}");
        assert_eq!(step_sum, out.total_reward);
        assert_eq!(steps, out.turns);
    }
    assert!(wins > 100 && losses > 100, "{wins} wins {losses} losses");
}

#[test]
fn scripted_oracle_always_succeeds() {
    let env = env();
    let actions = SystemActionSet::new(env.ontology());
    let n = env.ontology().len();
    let s = evaluate_with(&env, 300, &mut ChaCha8Rng::seed_from_u64(1), |view, _| Ok(oracle(view, &actions, n)))
        .unwrap();
    assert_eq!(s.success_rate, 1.0);
    assert!(s.avg_turns <= (n + 4) as f64);
}

#[test]
fn closing_policy_never_succeeds() {
    let env = env();
    let actions = SystemActionSet::new(env.ontology());
    let close = actions.index(SystemAction::Closing);
    let s = evaluate_with(&env, 50, &mut ChaCha8Rng::seed_from_u64(2), |_, _| Ok(close)).unwrap();
    assert_eq!(s.success_rate, 0.0);
    assert_eq!(s.avg_turns, 1.0);
    assert_eq!(s.avg_reward, -41.0);
}

#[test]
fn evaluation_runs_requested_episode_count() {
    let env = env();
    let actions = SystemActionSet::new(env.ontology());
    let close = actions.index(SystemAction::Closing);
    let mut openings = 0;
    evaluate_with(&env, 50, &mut ChaCha8Rng::seed_from_u64(3), |view, _| {
        if view.last_system.is_none() {
            openings += 1;
        }
        Ok(close)
    })
    .unwrap();
    assert_eq!(openings, 50);
}

#[test]
fn evaluation_does_not_mutate_the_student() {
    let env = env();
    let out = run_training(
        &TrainConfig {
            num_epochs: 30,
            eval_every: 10,
            eval_dialogues: 5,
            ..TrainConfig::new(AgentKind::AclA)
        },
        &env,
        4,
    )
    .unwrap();
    let before = out.student.to_checkpoint();
    let copy = out.student.clone();
    evaluate_policy(&out.student, &env, 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(out.student.to_checkpoint(), before);
    assert_eq!(out.student, copy);
}

#[test]
fn one_epoch_dqn_touches_no_teacher() {
    let env = env();
    let config = TrainConfig {
        num_epochs: 1,
        eval_every: 1,
        eval_dialogues: 3,
        ..TrainConfig::new(AgentKind::Dqn)
    };
    let out = run_training(&config, &env, 1).unwrap();
    assert_eq!(out.metrics.episodes.len(), 1);
    assert!(out.metrics.teacher_log.is_empty());
    assert!(out.teacher.is_none());
    assert_eq!(out.metrics.selection_counts.iter().sum::<u64>(), 1);
}

#[test]
fn schedule_c_starts_simple() {
    let env = env();
    let config = TrainConfig {
        num_epochs: 150,
        eval_every: 50,
        eval_dialogues: 3,
        ..TrainConfig::new(AgentKind::AclC)
    };
    let out = run_training(&config, &env, 2).unwrap();
    let first = &out.metrics.teacher_log[0];
    let pos = env.corpus.position_of(first.goal_id).unwrap();
    assert_eq!(env.corpus.tier_of(pos), acl_dqn::domain::Tier::Simple);
    if let Some(change) = out.metrics.phase_log.first() {
        assert_eq!(change.from.name(), "simple");
    }
}

fn scalar_q(w2: f64, b2: f64) -> QFunction {
    QFunction::from_params(
        1,
        1,
        1,
        Params {
            w1: vec![1.0],
            b1: vec![0.0],
            w2: vec![w2],
            b2: vec![b2],
        },
    )
}

#[test]
fn teacher_fixture_loss_and_myopic_targets() {
    // 16 copies of one transition make the sampled batch deterministic.
    let mut q = QFunction::from_params(
        TEACHER_STATE_DIM,
        1,
        3,
        Params {
            w1: vec![0.5; TEACHER_STATE_DIM],
            b1: vec![0.0],
            w2: vec![1.0, 2.0, -1.0],
            b2: vec![0.1, 0.2, 0.3],
        },
    );
    let state = vec![0.1; TEACHER_STATE_DIM];
    let mut buf = ReplayBuffer::new(2000, TEACHER_STATE_DIM);
    for _ in 0..16 {
        buf.push(Transition {
            state: state.clone(),
            action: 1,
            reward: 7.5,
            next_state: vec![0.9; TEACHER_STATE_DIM],
            terminal: false,
        })
        .unwrap();
    }
    let h = (0.5f64 * 0.1 * TEACHER_STATE_DIM as f64).tanh();
    let q1 = 2.0 * h + 0.2;
    let hand = (7.5 - q1).powi(2);
    let loss = teacher_train_step(&mut q, &buf, 16, 0.0, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap()
        .unwrap();
    assert!((loss - hand).abs() < 1e-6, "{loss} vs {hand}");

    let mut small = ReplayBuffer::new(2000, TEACHER_STATE_DIM);
    small.push(buf.iter().next().unwrap().clone()).unwrap();
    assert!(teacher_train_step(&mut q, &small, 16, 0.9, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap()
        .is_none());
}

#[test]
fn student_myopic_targets_equal_rewards() {
    let q = scalar_q(2.0, 0.5);
    let mut batch = acl_dqn::neural::Minibatch::new(1);
    batch.push(&[0.0], 0, 3.0, &[10.0], false);
    batch.push(&[0.0], 0, -40.0, &[10.0], true);
    assert_eq!(q.td_targets(&batch, 0.0), vec![3.0, -40.0]);
    let t = q.td_targets(&batch, 0.9);
    assert_eq!(t[1], -40.0);
    assert!((t[0] - (3.0 + 0.9 * (2.0 * 10f64.tanh() + 0.5))).abs() < 1e-12);

    let mut q = scalar_q(2.0, 0.5);
    let mut buf = ReplayBuffer::new(100, 1);
    for _ in 0..16 {
        buf.push(Transition {
            state: vec![0.0],
            action: 0,
            reward: 3.0,
            next_state: vec![1.0],
            terminal: false,
        })
        .unwrap();
    }
    let loss = student_train_step(&mut q, &buf, 16, 0.0, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap()
        .unwrap();
    assert!((loss - (3.0f64 - 0.5).powi(2)).abs() < 1e-6);
}

#[test]
fn featurizer_initial_layout() {
    let env = env();
    let f = Featurizer::new(env.ontology());
    let goal = env.corpus.goal(0);
    let (session, _) = acl_dqn::user_sim::SimulatorSession::reset(&env.kb, goal, &mut ChaCha8Rng::seed_from_u64(0));
    let v = f.featurize(&session.view());
    assert_eq!(v.len(), f.dim());
    assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
    let act_w = ActType::ALL.len() + env.ontology().len();
    assert!(v[act_w..2 * act_w].iter().all(|&x| x == 0.0));
}
