//! End-to-end smoke tests driving the installed binary.

use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Duration;

fn fedrover() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedrover"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn fedrover");
    assert!(
        out.status.success(),
        "command failed ({:?}):\nstdout: {}\nstderr: {}",
        cmd.get_args().collect::<Vec<_>>(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Experiment description small enough for test turnaround.
fn tiny_experiment(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("exp.json");
    std::fs::write(
        &path,
        r#"{
            "arch": "resnet_lite",
            "train_envs": ["sim0", "sim1"],
            "val_envs": ["sim0", "sim1"],
            "seeds": [3],
            "schedule": { "rounds": 2, "local_epochs": 1, "lr": 0.05, "batch_size": 16 },
            "sizes": { "train_per_env": 40, "val_per_env": 24 }
        }"#,
    )
    .unwrap();
    path
}

#[test]
fn dataset_generation_training_and_reporting_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let feds = dir.path().join("sim0-val.feds");
    let model = dir.path().join("central.fedm");
    let cfg = tiny_experiment(dir.path());

    let out = run_ok(fedrover()
        .args(["gen-data", "--env", "sim0", "--split", "val", "--size", "40", "--seed", "9"])
        .arg("--out")
        .arg(&feds));
    assert!(stdout(&out).contains("wrote 40 examples (20 free, 20 blocked)"));
    assert!(feds.with_extension("json").exists(), "manifest missing");

    run_ok(fedrover()
        .args(["train-central", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&model));

    let out = run_ok(fedrover().arg("report").arg("--model").arg(&model).arg("--data").arg(&feds));
    let text = stdout(&out);
    assert!(text.contains("accuracy") && text.contains("auc"), "report output:\n{text}");
}

#[test]
fn federated_training_over_a_lossy_channel_reports_the_session() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_experiment(dir.path());
    let out = run_ok(fedrover()
        .args(["train-fed", "--net-drop", "0.15", "--config"])
        .arg(&cfg));
    let text = stdout(&out);
    assert!(text.contains("session:"), "missing session summary:\n{text}");
    assert!(text.contains("accuracy"), "missing metrics:\n{text}");
}

#[test]
fn tcp_session_between_separate_processes_produces_a_model() {
    // Reserve a port, then release it for the server process.
    let port = {
        let sock = TcpListener::bind("127.0.0.1:0").unwrap();
        sock.local_addr().unwrap().port()
    };
    let dir = tempfile::tempdir().unwrap();
    let global = dir.path().join("global.fedm");
    let val = dir.path().join("val.feds");

    let mut server = fedrover()
        .args(["serve", "--port", &port.to_string(), "--clients", "2", "--rounds", "2"])
        .args(["--arch", "resnet_lite", "--seed", "5"])
        .arg("--out")
        .arg(&global)
        .spawn()
        .expect("spawn server");
    std::thread::sleep(Duration::from_millis(400));

    let clients: Vec<_> = [("a", "0", "sim0"), ("b", "1", "sim1")]
        .iter()
        .map(|(id, index, env)| {
            fedrover()
                .args(["client", "--port", &port.to_string(), "--id", id, "--index", index])
                .args(["--data", env, "--size", "24", "--arch", "resnet_lite"])
                .spawn()
                .expect("spawn client")
        })
        .collect();

    for mut c in clients {
        assert!(c.wait().expect("client exit").success(), "client failed");
    }
    assert!(server.wait().expect("server exit").success(), "server failed");
    assert!(global.exists(), "server did not save the final global");

    run_ok(fedrover()
        .args(["gen-data", "--env", "sim0+sim1", "--split", "val", "--size", "16", "--seed", "2"])
        .arg("--out")
        .arg(&val));
    let out = run_ok(fedrover().arg("report").arg("--model").arg(&global).arg("--data").arg(&val));
    assert!(stdout(&out).contains("accuracy"));
}

#[test]
fn transfer_study_writes_csv_with_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("cells.csv");
    let cfg = dir.path().join("exp.json");
    std::fs::write(
        &cfg,
        r#"{
            "arch": "resnet_lite",
            "train_envs": ["sim0", "sim1"],
            "val_envs": ["real0"],
            "seeds": [1],
            "schedule": { "rounds": 2, "local_epochs": 1, "lr": 0.05, "batch_size": 16 },
            "sizes": { "train_per_env": 30, "val_per_env": 20 }
        }"#,
    )
    .unwrap();

    let out = run_ok(fedrover().args(["sim2real", "--config"]).arg(&cfg).arg("--out").arg(&csv));
    assert!(stdout(&out).contains("auc median"));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("mode,arch,train_envs,val_env,seed,accuracy,auc"));
    // Both modes of both architectures on the single size-2 combo.
    assert_eq!(lines.count(), 4, "expected a cell per mode x architecture");
}

#[test]
fn continual_study_prints_every_fusion_arm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("continual.json");
    std::fs::write(
        &cfg,
        r#"{
            "schedule": { "rounds": 2, "local_epochs": 1, "lr": 0.05, "batch_size": 16 },
            "sizes": { "train_per_env": 40, "val_per_env": 20 },
            "goal_count": 4,
            "probe_goal_count": 4,
            "seed": 3
        }"#,
    )
    .unwrap();
    let out = run_ok(fedrover().args(["continual", "--config"]).arg(&cfg));
    let text = stdout(&out);
    for arm in ["none", "sim_sessions", "real_sessions", "both_sessions"] {
        assert!(text.contains(arm), "missing arm {arm}:\n{text}");
    }
}

#[test]
fn bad_inputs_exit_nonzero_with_a_message() {
    let out = fedrover()
        .args(["gen-data", "--env", "warehouse", "--out", "/tmp/nope.feds"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let out = fedrover()
        .args(["report", "--model", "/nonexistent.fedm", "--data", "/nonexistent.feds"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
