use std::path::Path;
use std::process::{Command, Output};

use silhouette_core::{load_wav, parse_silhouette, save_wav};
use silhouette_train::fixtures::{laughter_like, speech_like};

fn silh(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_silh"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = silh(args, cwd);
    assert!(
        out.status.success(),
        "silh {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Failures print exactly one JSON line on stderr.
fn failure(args: &[&str], cwd: &Path) -> (i32, serde_json::Value) {
    let out = silh(args, cwd);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    (out.status.code().unwrap(), serde_json::from_str(stderr.trim()).unwrap())
}

#[test]
fn mse_of_a_silhouette_with_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    save_wav(&speech_like(1.0, 24_000, 0.7, 1), dir.path().join("a.wav")).unwrap();
    ok(&["extract", "a.wav", "-o", "a.silh"], dir.path());
    assert_eq!(ok(&["mse", "a.silh", "a.silh"], dir.path()), "0.0\n");
}

#[test]
fn extract_then_replay_synth_obeys_the_length_law() {
    let dir = tempfile::tempdir().unwrap();
    save_wav(&laughter_like(1.3, 24_000, 0.8, 2), dir.path().join("in.wav")).unwrap();
    ok(&["extract", "in.wav", "-o", "in.silh"], dir.path());
    ok(&["debug-checkpoint", "-o", "replay.ckpt"], dir.path());
    ok(&["synth", "replay.ckpt", "in.silh", "-o", "out.wav"], dir.path());
    let frames = parse_silhouette(&std::fs::read(dir.path().join("in.silh")).unwrap()).unwrap().len();
    assert_eq!(frames, (31_200 - 1024) / 256 + 1);
    assert_eq!(load_wav(dir.path().join("out.wav")).unwrap().len(), frames * 256);

    ok(&["extract", "out.wav", "-o", "out.silh"], dir.path());
    ok(&["plot-overlay", "in.silh", "out.silh", "-o", "overlay.png"], dir.path());
    assert!(std::fs::read(dir.path().join("overlay.png")).unwrap().starts_with(b"\x89PNG"));
    let mse: f64 = ok(&["mse", "in.silh", "out.silh"], dir.path()).trim().parse().unwrap();
    assert!(mse.is_finite() && mse >= 0.0);
}

#[test]
fn quantize_and_mel_write_documents() {
    let dir = tempfile::tempdir().unwrap();
    save_wav(&speech_like(0.5, 24_000, 0.7, 3), dir.path().join("a.wav")).unwrap();
    ok(&["extract", "a.wav", "-o", "a.silh"], dir.path());
    ok(&["quantize", "a.silh", "--kind", "mu", "--bins", "16", "-o", "q.silh"], dir.path());
    let q = parse_silhouette(&std::fs::read(dir.path().join("q.silh")).unwrap()).unwrap();
    assert_eq!(q.quantization().unwrap().short_name(), "MU016");
    ok(&["mel", "a.wav", "-o", "a.mel.json"], dir.path());
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("a.mel.json")).unwrap()).unwrap();
    assert_eq!(doc["frames"].as_array().unwrap().len(), 12_000usize.div_ceil(256));

    // Comparing a quantized track is a runtime error.
    let (code, err) = failure(&["mse", "a.silh", "q.silh"], dir.path());
    assert_eq!((code, err["error"].as_str().unwrap()), (1, "runtime"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = failure(&["frobnicate"], dir.path());
    assert_eq!((code, err["error"].as_str().unwrap()), (2, "usage"));
    let (code, _) = failure(&["quantize", "a.silh", "--kind", "log", "--bins", "4", "-o", "b"], dir.path());
    assert_eq!(code, 2);
    let (code, _) = failure(&["mse", "a.silh"], dir.path());
    assert_eq!(code, 2);
    let (code, err) = failure(&["extract", "missing.wav", "-o", "x.silh"], dir.path());
    assert_eq!(code, 1);
    assert!(err["message"].as_str().unwrap().contains("missing.wav"));
    assert!(silh(&["--help"], dir.path()).status.success());
}

#[test]
fn desk_pipeline_train_finetune_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::create_dir_all(d.join("speech")).unwrap();
    for i in 0..2 {
        save_wav(&speech_like(1.5, 24_000, 0.8, 10 + i), d.join(format!("speech/s{i}.wav"))).unwrap();
    }
    std::fs::create_dir_all(d.join("laugh")).unwrap();
    save_wav(&laughter_like(1.2, 24_000, 0.8, 20), d.join("laugh/target.wav")).unwrap();
    save_wav(&laughter_like(1.4, 24_000, 0.8, 21), d.join("laugh/other.wav")).unwrap();

    let plan = |stage: &str, steps: u32| {
        format!(
            "[plan]\nstage = \"{stage}\"\ntotal_steps = {steps}\nbatch_size = 1\nsegment_seconds = 0.5\n\
             aug_lambda_range = [0.3, 1.0]\ncheckpoint_every = 2\nrng_seed = 1\n"
        )
    };
    std::fs::write(
        d.join("pretrain.toml"),
        format!("profile = \"tiny\"\nquantization = \"MU016\"\ncorpus = [\"speech\"]\noutput_dir = \"runs/pre\"\n{}", plan("pretrain", 3)),
    )
    .unwrap();
    std::fs::write(
        d.join("finetune.toml"),
        format!("profile = \"tiny\"\nquantization = \"MU016\"\ncorpus = [\"laugh/target.wav\"]\noutput_dir = \"runs/ft\"\n{}", plan("finetune", 2)),
    )
    .unwrap();
    std::fs::write(
        d.join("eval.toml"),
        r#"
segment_seconds = 1.0
sources = ["laugh"]
output = "report/scores"

[[systems]]
name = "MU016"
quantization = "MU016"
targets = [{ id = "target", checkpoint = "runs/ft/ckpt_2.ckpt" }]

[[systems]]
name = "source"
targets = [{ id = "identity", identity = true }]
"#,
    )
    .unwrap();

    let pre = ok(&["--seed", "5", "train", "pretrain.toml"], d);
    assert!(pre.trim().ends_with("ckpt_3.ckpt"), "{pre}");
    let log = std::fs::read_to_string(d.join("runs/pre/log.ndjson")).unwrap();
    assert_eq!(log.lines().count(), 3);
    // A finished run resumes to a no-op.
    ok(&["--seed", "5", "train", "pretrain.toml"], d);
    assert_eq!(std::fs::read_to_string(d.join("runs/pre/log.ndjson")).unwrap(), log);

    ok(&["finetune", "finetune.toml", "--init", "runs/pre/ckpt_3.ckpt"], d);
    assert!(d.join("runs/ft/ckpt_2.ckpt").exists());

    let table = ok(&["--seed", "9", "eval", "eval.toml"], d);
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["System", "Type", "nBins", "nTests", "MSE"]);
    assert!(table.contains("μ-law"));
    let report = silhouette_train::EvalReport::from_json(&std::fs::read_to_string(d.join("report/scores.json")).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.rows[0].num_tests, 4);
    assert_eq!(report.rows[1].mse, 0.0);
    assert_eq!(report.provenance.seed, Some(9));
    assert_eq!(std::fs::read_to_string(d.join("report/scores.txt")).unwrap(), table);
}
