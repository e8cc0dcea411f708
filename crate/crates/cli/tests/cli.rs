use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[train]
hidden = [24, 12, 8]
epochs = 2
batch_size = 64
[fusion]
n = [1, 2, 3]
[synth]
users = 4
strokes_per_user = 40
"#;

fn strokeid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_strokeid"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn setup(dir: &Path, extra: &str) -> (String, String) {
    let config = dir.join("run.toml");
    fs::write(&config, format!("{extra}\n{SMALL}")).unwrap();
    let data = dir.join("touch.csv");
    (s(&config).to_string(), s(&data).to_string())
}

#[test]
fn synth_is_deterministic_and_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = setup(dir.path(), "");
    let other = s(&dir.path().join("again.csv")).to_string();
    let a = strokeid(&["synth", "--config", &config, "--data", &data, "--seed", "5"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let stdout = String::from_utf8_lossy(&a.stdout);
    assert!(stdout.contains("160 strokes, 4 users"), "{stdout}");
    strokeid(&["synth", "--config", &config, "--data", &other, "--seed", "5"]);
    assert_eq!(fs::read(&data).unwrap(), fs::read(&other).unwrap());
}

#[test]
fn train_then_eval_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = setup(dir.path(), "");
    let out = dir.path().join("out");
    let out_s = s(&out);
    assert!(strokeid(&["synth", "--config", &config, "--data", &data]).status.success());

    let t = strokeid(&["train", "--config", &config, "--data", &data, "--out", out_s]);
    assert!(t.status.success(), "{}", String::from_utf8_lossy(&t.stderr));
    assert!(String::from_utf8_lossy(&t.stdout).contains("segmented 160 strokes"));
    assert!(out.join("checkpoint.txt").is_file());
    assert!(out.join("training_report.csv").is_file());

    let e = strokeid(&["eval", "--config", &config, "--data", &data, "--out", out_s]);
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    let report = fs::read_to_string(out.join("eval_report.txt")).unwrap();
    assert!(report.contains("all"), "{report}");
    for n in 1..=3 {
        assert!(out.join(format!("det_n{n:02}.csv")).is_file());
    }
}

#[test]
fn identical_runs_give_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = setup(dir.path(), "seed = 2");
    assert!(strokeid(&["synth", "--config", &config, "--data", &data]).status.success());
    for out in ["a", "b"] {
        let out = dir.path().join(out);
        assert!(strokeid(&["train", "--config", &config, "--data", &data, "--out", s(&out)])
            .status
            .success());
    }
    let read = |d: &str| fs::read(dir.path().join(d).join("checkpoint.txt")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn single_fusion_depth_gives_one_det_file() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = setup(dir.path(), "");
    let out = dir.path().join("out");
    strokeid(&["synth", "--config", &config, "--data", &data]);
    strokeid(&["train", "--config", &config, "--data", &data, "--out", s(&out)]);
    let e = strokeid(&["eval", "--config", &config, "--data", &data, "--out", s(&out), "--fuse", "1"]);
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    let dets = fs::read_dir(&out)
        .unwrap()
        .filter(|f| f.as_ref().unwrap().file_name().to_string_lossy().starts_with("det_"))
        .count();
    assert_eq!(dets, 1);
}

#[test]
fn long_filter_without_long_strokes_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = setup(dir.path(), "[framing]\nwindow = 3");
    // every stroke has at most 12 records
    let config_text = fs::read_to_string(&config).unwrap().replace(
        "strokes_per_user = 40",
        "strokes_per_user = 40\nmin_len = 5\nmax_len = 12",
    );
    fs::write(&config, config_text).unwrap();
    strokeid(&["synth", "--config", &config, "--data", &data]);
    let out = dir.path().join("out");
    let t = strokeid(&["train", "--config", &config, "--data", &data, "--out", s(&out), "--strokes", "long"]);
    assert_eq!(t.status.code(), Some(3), "{}", String::from_utf8_lossy(&t.stderr));
}

#[test]
fn user_with_too_few_strokes_exits_3_naming_the_user() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = setup(dir.path(), "");
    strokeid(&["synth", "--config", &config, "--data", &data]);
    // keep only the first four strokes of user 4
    let text = fs::read_to_string(&data).unwrap();
    let mut downs = 0;
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.get(1) != Some(&"4") {
                return true;
            }
            if f[4] == "0" {
                downs += 1;
            }
            downs <= 4
        })
        .collect();
    fs::write(&data, kept.join("\n")).unwrap();
    let t = strokeid(&["train", "--config", &config, "--data", &data, "--out", s(&dir.path().join("o"))]);
    assert_eq!(t.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&t.stderr).contains("user 4"));
}

#[test]
fn mismatched_checkpoint_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = setup(dir.path(), "");
    let out = dir.path().join("out");
    strokeid(&["synth", "--config", &config, "--data", &data]);
    strokeid(&["train", "--config", &config, "--data", &data, "--out", s(&out)]);
    let e = strokeid(&["eval", "--config", &config, "--data", &data, "--out", s(&out), "--window", "6"]);
    assert_eq!(e.status.code(), Some(5), "{}", String::from_utf8_lossy(&e.stderr));

    fs::write(out.join("checkpoint.txt"), "not a checkpoint\n").unwrap();
    let e = strokeid(&["eval", "--config", &config, "--data", &data, "--out", s(&out)]);
    assert_eq!(e.status.code(), Some(5));
}

#[test]
fn unwritable_output_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = setup(dir.path(), "");
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let data = blocker.join("touch.csv");
    let r = strokeid(&["synth", "--config", &config, "--data", s(&data)]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn invalid_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = setup(dir.path(), "");
    let missing = strokeid(&["train", "--config", &config, "--data", &data]);
    assert_eq!(missing.status.code(), Some(1));
    let bad_fuse = strokeid(&["synth", "--config", &config, "--data", &data, "--fuse", "3,1"]);
    assert_eq!(bad_fuse.status.code(), Some(1));
    fs::write(&data, "1,1,1,0,0,1,x,0,0,0,0\n").unwrap();
    let bad_csv = strokeid(&["train", "--config", &config, "--data", &data]);
    assert_eq!(bad_csv.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_csv.stderr).contains("line 1"));
}
