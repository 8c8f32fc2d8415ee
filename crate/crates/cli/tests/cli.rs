use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn turbseg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_turbseg"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn config(extra: &str) -> String {
    format!(
        r#"
[input]
dir = "data/frames"
pattern = "frame_*.png"
name = "synthetic"

[fusion]
alpha = 0.1
beta = 0.5
gamma = 0.0
delta = 0.4
tau = 0.6

[vibe]
warmup = 3

[output]
dir = "out"

[eval]
gt_dir = "data/gt"
{extra}
"#
    )
}

fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = turbseg(&["synth", "data", "--frames", "14"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("data/frames/frame_000013.png").exists());
    assert!(dir.path().join("data/gt/mask_000013.png").exists());
    fs::write(dir.path().join("cfg.toml"), config(extra)).unwrap();
    dir
}

fn masks(dir: &Path) -> Vec<Vec<u8>> {
    (0..14).map(|t| fs::read(dir.join(format!("out/mask_{t:06}.png"))).unwrap()).collect()
}

#[test]
fn full_run_then_stage_by_stage() {
    let dir = setup("");
    let out = turbseg(&["run", "--config", "cfg.toml", "--dump-intermediates", "dump"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Final evaluation"));
    assert!(dir.path().join("dump/boxes_final.jsonl").exists());
    assert!(dir.path().join("out/report.json").exists());
    let reference = masks(dir.path());

    fs::remove_dir_all(dir.path().join("out")).unwrap();
    for args in [
        vec!["cues", "--config", "cfg.toml", "--dump-intermediates", "dump"],
        vec!["run", "--stage", "propose", "--config", "cfg.toml", "--dump-intermediates", "dump"],
        vec!["refine", "--config", "cfg.toml", "--dump-intermediates", "dump"],
        vec!["eval", "--config", "cfg.toml"],
    ] {
        let out = turbseg(&args, dir.path());
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(masks(dir.path()), reference);
}

#[test]
fn seed_override_is_deterministic() {
    let dir = setup("");
    let run = || {
        let out = turbseg(&["run", "--config", "cfg.toml", "--seed", "7"], dir.path());
        assert!(out.status.success());
        masks(dir.path())
    };
    assert_eq!(run(), run());
}

#[test]
fn missing_refined_masks_fail_in_refine() {
    let dir = setup("");
    let cfg = config("") + "\n[refine]\nmode = \"external\"\ndir = \"refined\"\n";
    fs::write(dir.path().join("cfg.toml"), cfg).unwrap();
    fs::create_dir_all(dir.path().join("refined")).unwrap();
    let out = turbseg(&["run", "--config", "cfg.toml"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage `refine` failed at frame 0"), "{err}");
    // prompts were exported before the refiner's output was needed
    assert!(dir.path().join("out/prompts.jsonl").exists());
}

#[test]
fn invalid_config_and_missing_input_are_tagged() {
    let dir = setup("");
    fs::write(dir.path().join("bad.toml"), config("").replace("gamma = 0.0", "gamma = -1.0")).unwrap();
    let out = turbseg(&["run", "--config", "bad.toml"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `config` failed"));

    fs::write(dir.path().join("noinput.toml"), config("").replace("data/frames", "nowhere")).unwrap();
    let out = turbseg(&["run", "--config", "noinput.toml"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `load` failed"));

    let out = turbseg(&["propose", "--config", "cfg.toml", "--dump-intermediates", "empty"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `propose` failed at frame 0"));
}

#[test]
fn serve_without_cues_fails_fast() {
    let dir = setup("");
    let out = turbseg(&["serve", "--config", "cfg.toml", "--port", "0"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cue maps missing"));
}
