use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_emitron"));
    c.env("RUST_LOG", "error");
    c
}

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn emitron")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr is empty");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON: {line}: {e}"))
}

/// Desk config rewritten into `dir` with absolute input paths.
fn desk_copy(dir: &Path, edit: impl Fn(String) -> String) -> PathBuf {
    let text = std::fs::read_to_string(data("desk/desk.toml")).unwrap();
    let desk = data("desk");
    let text = text
        .lines()
        .map(|l| match l.split_once(" = \"") {
            Some((k, v)) if v.ends_with(".csv\"") => {
                format!("{k} = \"{}\"", desk.join(v.trim_end_matches('"')).display())
            }
            _ => l.to_owned(),
        })
        .collect::<Vec<_>>()
        .join("\n");
    let path = dir.join("run.toml");
    std::fs::write(&path, edit(text)).unwrap();
    path
}

#[test]
fn validate_accepts_the_desk_trajectories() {
    let out = run(&["validate", "--config", data("desk/desk.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["ingest"]["accepted"], 30);
    assert_eq!(v["ingest"]["urban_dropped"], 2);
    assert_eq!(v["ingest"]["rejected"].as_array().unwrap().len(), 0);
}

#[test]
fn validate_exits_3_on_rejected_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let mut traj = std::fs::read_to_string(data("desk/trajectories.csv")).unwrap();
    // 0 -> 30 m/s in one second
    traj.push_str("X1,Lansing-1,Jackson-1,0,0\nX1,Lansing-1,Jackson-1,1,30\nX1,Lansing-1,Jackson-1,2,30\n");
    let traj_path = tmp.path().join("traj.csv");
    std::fs::write(&traj_path, traj).unwrap();
    let cfg = desk_copy(tmp.path(), |t| {
        t.replace(
            &format!("\"{}\"", data("desk/trajectories.csv").display()),
            &format!("\"{}\"", traj_path.display()),
        )
    });
    let out = run(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["ingest"]["rejected"][0]["trip_id"], "X1");
}

#[test]
fn missing_input_exits_2_with_a_json_record() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = desk_copy(tmp.path(), |t| t.replace("zones.csv", "nowhere.csv"));
    let out = run(&["report", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let e = stderr_json(&out);
    assert_eq!(e["error"], "missing_input");
    assert_eq!(e["exit_code"], 2);
    assert!(e["message"].as_str().unwrap().contains("nowhere.csv"));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn bad_config_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = desk_copy(tmp.path(), |t| format!("{t}\n[emission]\ngamma = -1.0\n"));
    let out = run(&["estimate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "config");
}

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn report_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = data("desk/desk.toml");
    let dirs = ["a", "b"].map(|d| tmp.path().join(d));
    for (d, threads) in dirs.iter().zip(["1", "4"]) {
        let out = run(&["report", "-c", cfg.to_str().unwrap(), "--out", d.to_str().unwrap(), "--threads", threads]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (a, b) = (read_dir(&dirs[0]), read_dir(&dirs[1]));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    for expected in [
        "table1_emissions.csv",
        "table1_emissions.json",
        "table2_energy.csv",
        "table3_savings.csv",
        "table4_economics.csv",
        "fig6_monthly.csv",
        "fig7_scenarios.csv",
        "summary.json",
    ] {
        assert!(names.contains(&expected), "{expected} missing from {names:?}");
    }
    assert_eq!(a, b);
    let table = String::from_utf8(a.iter().find(|(n, _)| n == "table1_emissions.csv").unwrap().1.clone()).unwrap();
    assert!(table.starts_with("# config_digest: "));
    assert_eq!(table.lines().count(), 15);
}

#[test]
fn flags_override_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = data("desk/desk.toml");
    let out_dir = tmp.path().join("s");
    let out = run(&[
        "scenarios",
        "-c",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "99",
        "--share",
        "0.5",
        "--scenario",
        "oldest",
        "--variant",
        "micro_base",
        "--draws",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("table3_savings.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("0.5,oldest,micro_base,"));
    assert!(rows[0].ends_with(",3"));
}

#[test]
fn simulate_writes_every_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "-c", data("desk/desk.toml").to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(tmp.path().join("trajectories.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config_digest: "));
    assert!(lines.next().unwrap().starts_with("trip_id,"));
    let ids: std::collections::BTreeSet<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids.len(), 30);
}
