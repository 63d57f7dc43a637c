use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use drlroute::config::{load_config, ExperimentConfig};
use drlroute::ddpg::{Agent, DdpgConfig};
use drlroute::error::Error;
use drlroute::eval::{evaluate, Policy, Scenario};
use drlroute::experiment::{cmd_compare, cmd_eval, cmd_train, METRICS_HEADER};
use drlroute::topology::{ForwardingMode, WeightAssignment};

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn smoke(out: &Path) -> ExperimentConfig {
    let mut c = load_config(&repo_config("smoke.toml")).unwrap();
    c.run.out_dir = out.to_path_buf();
    c
}

#[test]
fn shipped_default_config_is_the_reference_scenario() {
    let c = load_config(&repo_config("default.toml")).unwrap();
    let mut expected = ExperimentConfig::default();
    expected.run.checkpoint_every = 10_000;
    assert_eq!(c, expected);
    assert!(c.topology().unwrap().links().iter().all(|l| l.bandwidth == 5e6));
    let d = &c.ddpg;
    assert_eq!((d.gamma, d.tau, d.actor_lr, d.critic_lr), (0.9, 0.01, 1e-4, 1e-3));
    assert_eq!((d.replay_capacity, d.replay_threshold, d.batch_size, d.a_bound), (100, 64, 32, 10.0));
    assert_eq!((d.ou_mu, d.ou_theta, d.ou_sigma), (0.0, 0.1, 0.15));
    assert_eq!((c.flows[0].rate, c.flows[0].packet_size), (4.636e6, 1024));
}

#[test]
fn smoke_run_writes_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = cmd_train(&smoke(dir.path())).unwrap();
    assert_eq!(outcome.steps, 140);
    let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len() - 1, 140);
    for (i, line) in lines[1..].iter().enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 8);
        assert_eq!(f[0].parse::<usize>().unwrap(), i + 1);
        assert_eq!(f[1], if i < 70 { "1" } else { "2" });
        let has_losses = !f[3].is_empty() && !f[4].is_empty();
        assert_eq!(has_losses, i + 1 >= 65, "row {}", i + 1);
    }
    // one update per step from row 65 onward
    assert_eq!(outcome.updates, 140 - 64);
    for name in ["actor.bin", "critic.bin", "target_actor.bin", "target_critic.bin", "agent.toml"] {
        assert!(outcome.checkpoint.join(name).is_file(), "{name}");
    }
}

#[test]
fn reruns_are_byte_identical_and_manifest_is_complete() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    cmd_train(&smoke(a.path())).unwrap();
    cmd_train(&smoke(b.path())).unwrap();
    let metrics = |d: &Path| fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(metrics(a.path()), metrics(b.path()));
    assert_eq!(
        fs::read(a.path().join("checkpoint/actor.bin")).unwrap(),
        fs::read(b.path().join("checkpoint/actor.bin")).unwrap()
    );

    let mut from_manifest = load_config(&a.path().join("manifest.toml")).unwrap();
    assert_eq!(from_manifest, smoke(a.path()));
    from_manifest.run.out_dir = c.path().to_path_buf();
    cmd_train(&from_manifest).unwrap();
    assert_eq!(metrics(a.path()), metrics(c.path()));

    let mut other_seed = smoke(c.path());
    other_seed.seed = 2;
    cmd_train(&other_seed).unwrap();
    assert_ne!(metrics(a.path()), metrics(c.path()));
}

#[test]
fn checkpoint_cadence() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = smoke(dir.path());
    c.run.checkpoint_every = 50;
    cmd_train(&c).unwrap();
    for step in [50, 100] {
        assert!(dir.path().join(format!("checkpoints/step_{step}/actor.bin")).is_file());
    }
    assert!(!dir.path().join("checkpoints/step_150").exists());
}

#[test]
fn unwritable_output_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let c = smoke(&blocker.join("run"));
    assert!(matches!(cmd_train(&c), Err(Error::Io { .. })));
    assert!(!blocker.join("run").exists());
}

#[test]
fn eval_is_noise_free_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = smoke(dir.path());
    let outcome = cmd_train(&c).unwrap();
    c.env.steps_per_episode = 30;
    c.run.eval_episodes = 2;
    let first = cmd_eval(&c, &outcome.checkpoint).unwrap();
    let second = cmd_eval(&c, &outcome.checkpoint).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.episodes.len(), 2);
    assert!(first.mean_delay_ms.unwrap() > 0.0);
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let agent = Agent::new(DdpgConfig::default(), 9, 6, 1).unwrap();
    agent.save(dir.path()).unwrap();
    let c = smoke(dir.path());
    let err = cmd_eval(&c, dir.path()).unwrap_err();
    assert!(
        matches!(err, Error::DimensionMismatch { expected: 16, found: 9, .. }),
        "{err}"
    );
    let msg = err.to_string();
    assert!(msg.contains("expected 16") && msg.contains("found 9"), "{msg}");
}

#[test]
fn zero_traffic_has_no_delay_and_no_drops() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = smoke(dir.path());
    c.flows.clear();
    c.env.steps_per_episode = 10;
    let agent = Agent::new(c.ddpg.clone(), 16, 10, 1).unwrap();
    agent.save(dir.path()).unwrap();
    let s = cmd_eval(&c, dir.path()).unwrap();
    assert_eq!(s.mean_delay_ms, None);
    assert_eq!(s.stddev_delay_ms, None);
    assert_eq!(s.drop_rate, 0.0);
    assert!(s.episodes.iter().all(|e| e.injected == 0 && e.dropped == 0));
}

#[test]
fn ospf_row_equals_uniform_single_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = smoke(dir.path());
    c.env.steps_per_episode = 40;
    c.run.eval_episodes = 2;
    let agent = Agent::new(c.ddpg.clone(), 16, 10, 1).unwrap();
    agent.save(&dir.path().join("ckpt")).unwrap();
    let rows = cmd_compare(&c, &dir.path().join("ckpt")).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.policy.as_str()).collect();
    assert_eq!(names, ["ddpg", "ospf", "random"]);

    let topo = c.topology().unwrap();
    let flows = c.flow_specs();
    let mut env = c.env.clone();
    env.forwarding_mode = ForwardingMode::SinglePath;
    let scenario = Scenario {
        topology: &topo,
        flows: &flows,
        env: &env,
        max_weight: 10.0,
        seed: c.seed,
    };
    let fixed = evaluate(&scenario, &Policy::Fixed(WeightAssignment::uniform(&topo, 1.0).unwrap()), 2).unwrap();
    assert_eq!(fixed.episodes, rows[1].episodes);
    assert_eq!(fixed.mean_delay_ms, rows[1].mean_delay_ms);
    assert_eq!(fixed.drop_rate, rows[1].drop_rate);

    let csv = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("policy,mean_delay_ms,stddev_ms,drop_rate"));
    assert_eq!(lines.count(), 3);
}

/// Single-path M/D/1 mean sojourn at the reference load (1024 B, 5 Mbit/s,
/// 4.636 Mbit/s offered).
fn md1_sojourn_ms(rho: f64) -> f64 {
    let s = 1024.0 * 8.0 / 5e6 * 1e3;
    s + rho * s / (2.0 * (1.0 - rho))
}

#[test]
fn fresh_actor_never_loses_to_single_path() {
    let single = md1_sojourn_ms(4.636 / 5.0);
    assert!((single - 12.07195).abs() < 1e-4);
    let c = load_config(&repo_config("default.toml")).unwrap();
    let topo = c.topology().unwrap();
    let flows = c.flow_specs();
    let scenario = Scenario {
        topology: &topo,
        flows: &flows,
        env: &c.env,
        max_weight: 10.0,
        seed: 5,
    };
    // a spread split over all three paths beats the single chord path
    let mut w = WeightAssignment::uniform(&topo, 1.0).unwrap().as_slice().to_vec();
    w[topo.link_between(0, 3).unwrap()] = 2.0;
    w[topo.link_between(1, 3).unwrap()] = 0.5;
    w[topo.link_between(2, 3).unwrap()] = 0.5;
    w[topo.link_between(0, 1).unwrap()] = 1.5;
    w[topo.link_between(0, 2).unwrap()] = 1.5;
    let split = evaluate(&scenario, &Policy::Fixed(WeightAssignment::new(&topo, w).unwrap()), 1).unwrap();
    assert!(split.mean_delay_ms.unwrap() < single);

    for seed in 1..=5 {
        let agent = Agent::new(c.ddpg.clone(), 16, 10, seed).unwrap();
        let fresh = evaluate(
            &scenario,
            &Policy::Actor {
                actor: agent.actor.clone(),
                a_bound: 10.0,
            },
            1,
        )
        .unwrap();
        let ospf = evaluate(&scenario, &Policy::Ospf { reference_bandwidth: 5e6 }, 1).unwrap();
        assert!(fresh.mean_delay_ms.unwrap() <= ospf.mean_delay_ms.unwrap() + 1e-9);
    }
}

#[test]
fn binary_runs_train_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_drlroute");
    let out = dir.path().join("run");
    let status = Command::new(bin)
        .args(["train", repo_config("smoke.toml").to_str().unwrap(), "--out"])
        .arg(&out)
        .args(["--episodes", "1", "--steps", "20", "--seed", "4"])
        .status()
        .unwrap();
    assert!(status.success());
    let rows = fs::read_to_string(out.join("metrics.csv")).unwrap().lines().count();
    assert_eq!(rows, 21);
    let manifest = load_config(&out.join("manifest.toml")).unwrap();
    assert_eq!((manifest.seed, manifest.env.steps_per_episode, manifest.run.episodes), (4, 20, 1));

    let output = Command::new(bin)
        .arg("compare")
        .arg(out.join("manifest.toml"))
        .arg(out.join("checkpoint"))
        .args(["--steps", "10"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let table = String::from_utf8(output.stdout).unwrap();
    for name in ["ddpg", "ospf", "random"] {
        assert!(table.contains(name), "{table}");
    }

    let bad = Command::new(bin)
        .args(["train", "/definitely/not/here.toml"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
