//! End-to-end CLI flow on a tiny synthetic corpus.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_patchdisc"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn patchdisc");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_json(path: &Path, value: serde_json::Value) {
    std::fs::write(path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
}

#[test]
fn full_pipeline_on_synthetic_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    let run_dir = dir.path().join("run");

    // 1. synth
    let params = dir.path().join("synth.json");
    write_json(
        &params,
        serde_json::json!({
            "num_images": 10,
            "natural_images": 6,
            "pattern_classes": 2,
            "patterns_per_image": [1, 1],
            "pattern_scale_range": [80, 88],
            "image_size": [176, 176],
            "placement": {"mode": "scene_locked"},
            "seed": 5
        }),
    );
    run_ok(bin().args(["synth", "--params"]).arg(&params).arg("--out").arg(&corpus_dir));
    assert!(corpus_dir.join("manifest.json").exists());
    assert!(corpus_dir.join("annotations.json").exists());
    assert!(corpus_dir.join("d0000.png").exists());

    // 2. discover
    let config = dir.path().join("config.json");
    write_json(
        &config,
        serde_json::json!({
            "manifest": corpus_dir.join("manifest.json"),
            "output_dir": run_dir,
            "seed": 3,
            "threads": 2,
            "discovery": {
                "sampling": {"per_image_samples": 12},
                "max_iterations": 3,
                "svm": {"round0_negatives": 250, "negative_cache_cap": 1200}
            },
            "rank": {"n": 40},
            "eval": {
                "top_detectors": 8,
                "baseline": {"vocab_size": 10, "sampling": {"per_image_samples": 12}}
            }
        }),
    );
    run_ok(bin().args(["discover", "--config"]).arg(&config));
    assert!(run_dir.join("run.lock").exists());
    assert!(run_dir.join("run_meta.json").exists());
    assert!(run_dir.join("final/ranked.json").exists());
    assert!(run_dir.join("final/models.jsonl").exists());
    assert!(run_dir.join("iterations/iter_0/models.jsonl").exists());
    assert!(run_dir.join("iterations/iter_0/clusters.json").exists());
    assert!(run_dir.join("iterations/iter_0/log.json").exists());

    // Re-running a completed stage with the same config is a no-op.
    let out = run_ok(bin().args(["discover", "--config"]).arg(&config));
    assert!(
        String::from_utf8_lossy(&out.stdout).contains("skipping"),
        "second discover should skip"
    );

    // 3. eval
    run_ok(bin().args(["eval", "--config"]).arg(&config));
    let curves = std::fs::read_to_string(run_dir.join("curves.csv")).unwrap();
    assert!(curves.starts_with("j,cumulative_purity,cumulative_coverage\n"));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run_dir.join("summary.json")).unwrap()).unwrap();
    assert!(summary.get("auc_purity").is_some());
    assert!(summary.get("auc_coverage").is_some());

    // 4. doublets (may legitimately be empty, but the file must exist)
    run_ok(bin().args(["doublets", "--config"]).arg(&config));
    assert!(run_dir.join("doublets.json").exists());

    // 5. detect on one image
    run_ok(
        bin()
            .args(["detect", "--image", "d0001", "--config"])
            .arg(&config),
    );
    let detections = std::fs::read_to_string(run_dir.join("detections.jsonl")).unwrap();
    for line in detections.lines().take(3) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["image_id", "level", "cx", "cy", "score"] {
            assert!(v.get(key).is_some(), "missing {key} in detection record");
        }
    }

    // 6. features
    run_ok(bin().args(["features", "--config"]).arg(&config));
    let features: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run_dir.join("features.json")).unwrap()).unwrap();
    assert!(!features.as_array().unwrap().is_empty());

    // 7. classify (labels derived from annotations) + baseline
    run_ok(bin().args(["classify", "--baseline", "--config"]).arg(&config));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run_dir.join("summary.json")).unwrap()).unwrap();
    assert!(summary.get("accuracy").is_some());
    assert!(summary.get("per_class_accuracy").is_some());
    assert!(summary.get("baseline_accuracy").is_some());

    // 8. viz
    let ranked: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run_dir.join("final/ranked.json")).unwrap()).unwrap();
    let first_cluster = ranked[0]["cluster_id"].as_u64().unwrap();
    run_ok(
        bin()
            .args(["viz", "montage", "--cluster", &first_cluster.to_string(), "--config"])
            .arg(&config),
    );
    assert!(run_dir.join(format!("viz/montage_{first_cluster}.png")).exists());
    run_ok(
        bin()
            .args(["viz", "overlay", "--image", "d0002", "--config"])
            .arg(&config),
    );
    assert!(run_dir.join("viz/overlay_d0002.png").exists());

    // 9. determinism across output dirs: same seed, fresh directory,
    // byte-identical ranked.json.
    let run2 = dir.path().join("run2");
    run_ok(
        bin()
            .args(["discover", "--config"])
            .arg(&config)
            .arg("--output")
            .arg(&run2),
    );
    let a = std::fs::read(run_dir.join("final/ranked.json")).unwrap();
    let b = std::fs::read(run2.join("final/ranked.json")).unwrap();
    assert_eq!(a, b, "same seed must produce identical ranked.json");
}

#[test]
fn config_schema_violation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    write_json(&config, serde_json::json!({"not_a_real_key": 1}));
    let out = bin()
        .args(["discover", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    // Config exists but points at a manifest that does not.
    let config = dir.path().join("config.json");
    write_json(
        &config,
        serde_json::json!({
            "manifest": dir.path().join("nope.json"),
            "output_dir": dir.path().join("run")
        }),
    );
    let out = bin()
        .args(["discover", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // Missing config file itself is also a missing input.
    let out = bin()
        .args(["discover", "--config"])
        .arg(dir.path().join("absent.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn lock_guards_against_mixed_configs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    let params = dir.path().join("synth.json");
    write_json(
        &params,
        serde_json::json!({
            "num_images": 4,
            "natural_images": 2,
            "pattern_classes": 1,
            "patterns_per_image": [1, 1],
            "pattern_scale_range": [80, 84],
            "image_size": [128, 128],
            "seed": 1
        }),
    );
    run_ok(bin().args(["synth", "--params"]).arg(&params).arg("--out").arg(&corpus_dir));

    let run_dir = dir.path().join("run");
    let mk_config = |seed: u64, path: &Path| {
        write_json(
            path,
            serde_json::json!({
                "manifest": corpus_dir.join("manifest.json"),
                "output_dir": run_dir,
                "seed": seed,
                "discovery": {
                    "sampling": {"per_image_samples": 8},
                    "max_iterations": 1,
                    "svm": {"round0_negatives": 100, "negative_cache_cap": 500}
                }
            }),
        );
    };
    let c1 = dir.path().join("c1.json");
    let c2 = dir.path().join("c2.json");
    mk_config(1, &c1);
    mk_config(2, &c2);

    // First stage writes the lock; a different config must be refused.
    run_ok(bin().args(["discover", "--config"]).arg(&c1));
    let out = bin().args(["discover", "--config"]).arg(&c2).output().unwrap();
    assert!(!out.status.success());
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("run.lock"),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}
