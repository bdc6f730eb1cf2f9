use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepresearch::jsonl;
use deepresearch::reward::RewardReport;
use deepresearch::rollout::GroupRollout;
use deepresearch::synthpipe::MedSearchQA;
use deepresearch::trajectory::Trajectory;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn engine(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dr-engine"))
        .arg("-c")
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn stderr_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("stderr summary");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {text}"))
}

fn config() -> PathBuf {
    fixtures().join("config.toml")
}

fn questions() -> String {
    fixtures().join("questions.jsonl").display().to_string()
}

#[test]
fn missing_config_exits_3_with_json() {
    let tmp = tempfile::tempdir().unwrap();
    let o = engine(&tmp.path().join("absent.toml"), tmp.path(), &["selfcheck"]);
    assert_eq!(o.status.code(), Some(3));
    let j = stderr_json(&o);
    assert_eq!(j["kind"], "missing_input");
    assert_eq!(j["code"], 3);
}

#[test]
fn bad_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    let text = std::fs::read_to_string(config()).unwrap().replace("group_size = 8", "group_size = 0");
    std::fs::write(&path, text).unwrap();
    let o = engine(&path, tmp.path(), &["selfcheck"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["kind"], "config");
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("typo.toml");
    let text = std::fs::read_to_string(config()).unwrap().replace("max_turns = 30", "max_turn = 30");
    std::fs::write(&path, text).unwrap();
    let o = engine(&path, tmp.path(), &["selfcheck"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_json(&o)["message"].as_str().unwrap().contains("max_turn"));
}

#[test]
fn missing_questions_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = engine(&config(), tmp.path(), &["rollout", "--questions", "/nonexistent/q.jsonl"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn selfcheck_names_missing_secret() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("live.toml");
    std::fs::write(
        &path,
        r#"
policy = { kind = "chat", endpoint = "http://127.0.0.1:9/v1", model = "m", api_key_env = "DR_CLI_TEST_KEY_UNSET" }
[tools]
kind = "mock"
web = "web.jsonl"
"#,
    )
    .unwrap();
    std::fs::copy(fixtures().join("web.jsonl"), tmp.path().join("web.jsonl")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dr-engine"))
        .args(["-c", path.to_str().unwrap(), "selfcheck"])
        .env_remove("DR_CLI_TEST_KEY_UNSET")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let summary = stderr_json(&o);
    let items: Vec<&str> = summary["failures"].as_array().unwrap().iter().map(|f| f["item"].as_str().unwrap()).collect();
    assert!(items.contains(&"secret DR_CLI_TEST_KEY_UNSET"), "{items:?}");
}

#[test]
fn score_bare_trajectories_sums_advantages_to_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    ok(&engine(&config(), out, &["rollout", "--questions", &questions()]));
    let groups: Vec<GroupRollout> = jsonl::read_file(&out.join("groups.jsonl")).unwrap().into_result().unwrap();
    let trajs: Vec<Trajectory> = groups[0].trajectories.clone();
    assert_eq!(trajs.len(), 8);
    let bare = out.join("trajectories.jsonl");
    jsonl::write_file(&bare, &trajs).unwrap();

    ok(&engine(&config(), out, &["score", "--input", bare.to_str().unwrap(), "--questions", &questions()]));
    let reports: Vec<RewardReport> = jsonl::read_file(&out.join("reports.jsonl")).unwrap().into_result().unwrap();
    assert_eq!(reports.len(), 1);
    let sum: f64 = reports[0].rollouts.iter().map(|r| r.advantage).sum();
    assert!(sum.abs() < 1e-9, "{sum}");
    assert!(reports[0].rollouts.iter().any(|r| r.advantage > 0.0));
}

#[test]
fn score_without_questions_for_bare_input_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let bare = tmp.path().join("t.jsonl");
    std::fs::write(&bare, "{\"not\": \"a trajectory\"}\n").unwrap();
    let o = engine(&config(), tmp.path(), &["score", "--input", bare.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn analyze_then_report_prints_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    ok(&engine(&config(), out, &["rollout", "--questions", &questions()]));
    let groups = out.join("groups.jsonl").display().to_string();
    let evidence = fixtures().join("evidence.jsonl").display().to_string();
    ok(&engine(&config(), out, &["analyze", "--groups", &groups, "--evidence", &evidence]));
    let analysis = out.join("analysis.json").display().to_string();
    let o = engine(&config(), out, &["report", "--analysis", &analysis]);
    ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("Answer outcomes"));
    assert!(text.contains("triggered                             1 / 16"), "{text}");
}

#[test]
fn synth_is_reproducible_and_seed_sensitive() {
    let tmp = tempfile::tempdir().unwrap();
    let read = |dir: &Path| std::fs::read(dir.join("corpus.jsonl")).unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    ok(&engine(&config(), &a, &["synth"]));
    ok(&engine(&config(), &b, &["synth"]));
    let o = Command::new(env!("CARGO_BIN_EXE_dr-engine"))
        .arg("-c")
        .arg(config())
        .args(["--seed", "99", "--out-dir"])
        .arg(&c)
        .arg("synth")
        .output()
        .unwrap();
    ok(&o);
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    let qas: Vec<MedSearchQA> = jsonl::read_file(&a.join("corpus.jsonl")).unwrap().into_result().unwrap();
    assert_eq!(qas.len(), 12);
    assert!(qas.iter().all(|q| (3..=8).contains(&q.hops)));
}

#[test]
fn curate_and_export_sft_write_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    ok(&engine(&config(), out, &["curate", "--questions", &questions()]));
    for f in ["trials.jsonl", "curation.jsonl", "sft_pool.jsonl", "rl_pool.jsonl"] {
        assert!(out.join(f).exists(), "{f}");
    }
    ok(&engine(&config(), out, &["export-sft", "--questions", &questions()]));
    let sft = std::fs::read_to_string(out.join("sft.jsonl")).unwrap();
    assert!(sft.lines().count() > 0);
}
