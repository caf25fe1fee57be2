use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flexdet::archive::{sha256_hex, Artifact};
use flexdet::nas::{pareto_frontier, ParetoReport};
use flexdet::{ElasticWeights, ModelConfig, ModelDims};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

const SPACE: &str = r#"
resolutions = [16, 32]
patch_sizes = [8]
window_counts = [1, 2]
decoder_depths = [0, 1, 2]
query_counts = [4]
"#;

const MODEL: &str = r#"
[model]
in_channels = 3
dim = 16
heads = 2
mlp_ratio = 2
encoder_depth = 2
max_decoder_layers = 2
max_queries = 4
num_classes = 3
base_patch = 8
min_patch = 8
max_resolution = 32
mask_dim = 8
pos_freqs = 2
"#;

fn flexdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flexdet")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = flexdet(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&read(p)).unwrap()
}

fn datagen(root: &Path) -> PathBuf {
    let dir = root.join("data");
    ok(&[
        "datagen",
        "--num-images",
        "8",
        "--image-size",
        "32",
        "--seed",
        "3",
        "--out-dir",
        s(&dir),
    ]);
    dir
}

fn write_run(root: &Path, name: &str, steps: u64, checkpoint_every: u64) -> PathBuf {
    let text = format!(
        "data = \"data\"\n[space]\n{SPACE}\n[trainer]\nsteps = {steps}\nbatch_size = 2\ncheckpoint_every = {checkpoint_every}\n{MODEL}"
    );
    let p = root.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Dataset plus an artifact trained for a few steps.
fn trained(root: &Path) -> (PathBuf, PathBuf) {
    let data = datagen(root);
    let cfg = write_run(root, "run.toml", 4, 0);
    let out = root.join("train");
    ok(&["train", "--config", s(&cfg), "--out-dir", s(&out)]);
    (data, out.join("model.json"))
}

fn log_lines(p: &Path) -> Vec<String> {
    read(p).lines().map(String::from).collect()
}

#[test]
fn datagen_writes_coco_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let dir = datagen(tmp.path());
    let coco = json(&dir.join("annotations.json"));
    assert_eq!(coco["images"].as_array().unwrap().len(), 8);
    assert_eq!(coco["categories"].as_array().unwrap().len(), 3);
    let m = json(&dir.join("manifest.json"));
    assert_eq!(m["command"], "datagen");
    assert_eq!(m["seed"], 3);
    let digest = m["outputs"]["annotations.json"].as_str().unwrap();
    assert_eq!(
        digest,
        sha256_hex(&std::fs::read(dir.join("annotations.json")).unwrap())
    );
}

#[test]
fn manifest_argv_reproduces_outputs() {
    let tmp = TempDir::new().unwrap();
    let first = datagen(tmp.path());
    let m = json(&first.join("manifest.json"));
    let mut argv: Vec<String> = m["argv"]
        .as_array()
        .unwrap()
        .iter()
        .skip(1)
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let second = tmp.path().join("again");
    let pos = argv.iter().position(|a| a == "--out-dir").unwrap();
    argv[pos + 1] = s(&second).to_string();
    let refs: Vec<&str> = argv.iter().map(String::as_str).collect();
    ok(&refs);
    let m2 = json(&second.join("manifest.json"));
    assert_eq!(m["outputs"], m2["outputs"]);
    assert_eq!(m["config"], m2["config"]);

    let back: Value = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
    assert_eq!(back, m);
}

#[test]
fn seeded_training_is_repeatable() {
    let tmp = TempDir::new().unwrap();
    datagen(tmp.path());
    let cfg = write_run(tmp.path(), "run.toml", 4, 0);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["train", "--config", s(&cfg), "--seed", "5", "--out-dir", s(&a)]);
    ok(&["train", "--config", s(&cfg), "--seed", "5", "--out-dir", s(&b)]);
    assert_eq!(read(&a.join("train_log.jsonl")), read(&b.join("train_log.jsonl")));
    assert_eq!(
        std::fs::read(a.join("model.json")).unwrap(),
        std::fs::read(b.join("model.json")).unwrap()
    );
    assert_eq!(
        json(&a.join("manifest.json"))["outputs"],
        json(&b.join("manifest.json"))["outputs"]
    );
    assert_eq!(log_lines(&a.join("train_log.jsonl")).len(), 4);
}

#[test]
fn missing_config_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = flexdet(&["train", "--out-dir", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));

    let out = flexdet(&[
        "train",
        "--config",
        s(&tmp.path().join("nope.toml")),
        "--out-dir",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn resume_continues_the_step_count() {
    let tmp = TempDir::new().unwrap();
    datagen(tmp.path());
    let cfg = write_run(tmp.path(), "run.toml", 6, 3);
    let straight = tmp.path().join("straight");
    ok(&["train", "--config", s(&cfg), "--out-dir", s(&straight)]);
    let ck = straight.join("checkpoints/step-000003.json");
    assert!(ck.exists());

    let resumed = tmp.path().join("resumed");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--resume",
        s(&ck),
        "--out-dir",
        s(&resumed),
    ]);
    let full = log_lines(&straight.join("train_log.jsonl"));
    let tail = log_lines(&resumed.join("train_log.jsonl"));
    assert_eq!(tail.len(), 3);
    assert_eq!(tail, full[3..]);
    assert_eq!(
        std::fs::read(straight.join("model.json")).unwrap(),
        std::fs::read(resumed.join("model.json")).unwrap()
    );
}

fn search(root: &Path, data: &Path, artifact: &Path, space: &str, out: &str) -> (Output, PathBuf) {
    let sp = root.join(format!("{out}.toml"));
    std::fs::write(&sp, space).unwrap();
    let dir = root.join(out);
    let o = flexdet(&[
        "search",
        "--artifact",
        s(artifact),
        "--space",
        s(&sp),
        "--dataset",
        s(data),
        "--out-dir",
        s(&dir),
    ]);
    (o, dir)
}

fn gray_points(svg: &str) -> usize {
    svg.matches("fill=\"#969696\"").count()
}

#[test]
fn search_report_plot_and_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let (data, artifact) = trained(tmp.path());

    let (o, full) = search(tmp.path(), &data, &artifact, SPACE, "full");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: ParetoReport = serde_json::from_str(&read(&full.join("pareto.json"))).unwrap();
    assert_eq!(report.points.len(), 12);
    let coords: Vec<(f64, f64)> = report
        .points
        .iter()
        .map(|p| (p.latency_ms.unwrap(), p.accuracy.unwrap()))
        .collect();
    assert_eq!(report.frontier, pareto_frontier(&coords));
    assert_eq!(
        report.weights_digest,
        Artifact::load(&artifact).unwrap().0.weights::<f32>().unwrap().digest()
    );
    let svg = read(&full.join("pareto.svg"));
    assert_eq!(gray_points(&svg), 12);
    assert_eq!(read(&full.join("pareto.csv")).lines().count(), 13);

    let (_, again) = search(tmp.path(), &data, &artifact, SPACE, "again");
    assert_eq!(
        std::fs::read(full.join("pareto.svg")).unwrap(),
        std::fs::read(again.join("pareto.svg")).unwrap()
    );

    let one = "resolutions = [32]\npatch_sizes = [8]\nwindow_counts = [2]\ndecoder_depths = [1]\nquery_counts = [4]\n";
    let (o, single) = search(tmp.path(), &data, &artifact, one, "single");
    assert_eq!(o.status.code(), Some(0));
    let svg = read(&single.join("pareto.svg"));
    assert!(!svg.is_empty());
    assert_eq!(gray_points(&svg), 1);

    // 8 queries exceed what the weights hold, so half of this space fails.
    let partial =
        "resolutions = [32]\npatch_sizes = [8]\nwindow_counts = [2]\ndecoder_depths = [1]\nquery_counts = [4, 8]\n";
    let (o, dir) = search(tmp.path(), &data, &artifact, partial, "partial");
    assert_eq!(o.status.code(), Some(2));
    let report: ParetoReport = serde_json::from_str(&read(&dir.join("pareto.json"))).unwrap();
    assert_eq!(report.num_failed(), 1);
    assert_eq!(report.frontier.len(), 1);

    let broken =
        "resolutions = [32]\npatch_sizes = [8]\nwindow_counts = [2]\ndecoder_depths = [1]\nquery_counts = [8]\n";
    let (o, _) = search(tmp.path(), &data, &artifact, broken, "broken");
    assert_eq!(o.status.code(), Some(1));
}

fn stub_artifact(path: &Path) -> String {
    let dims = ModelDims {
        dim: 8,
        encoder_depth: 1,
        max_decoder_layers: 1,
        max_queries: 2,
        max_resolution: 16,
        mask_dim: 4,
        pos_freqs: 2,
        ..ModelDims::toy(3)
    };
    let w = ElasticWeights::<f32>::init(dims, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let config = ModelConfig {
        resolution: 16,
        patch_size: 8,
        num_windows: 1,
        num_decoder_layers: 1,
        num_queries: 2,
        mask_head_enabled: false,
    };
    let cats = ["circle", "rectangle", "triangle"].map(String::from).to_vec();
    Artifact::new(&w, config, None, cats).save(path).unwrap()
}

#[test]
fn bench_reports_the_artifact_digest() {
    let tmp = TempDir::new().unwrap();
    let data = datagen(tmp.path());
    let art = tmp.path().join("stub.json");
    let digest = stub_artifact(&art);
    let out = tmp.path().join("bench");
    ok(&[
        "bench",
        "--artifact",
        s(&art),
        "--dataset",
        s(&data),
        "--buffer-ms",
        "0",
        "--warmup",
        "1",
        "--iters",
        "3",
        "--out-dir",
        s(&out),
    ]);
    let r = json(&out.join("bench.json"));
    assert_eq!(r["artifact_digest"], digest.as_str());
    assert_eq!(r["latency"]["per_iter_ms"].as_array().unwrap().len(), 3);
    assert_eq!(r["latency"]["protocol"]["buffer_ms"], 0.0);
    assert_eq!(json(&out.join("manifest.json"))["inputs"]["artifact"], digest.as_str());

    let trace = tmp.path().join("trace.csv");
    std::fs::write(&trace, "t_ms,value\n0,3000\n10,3000\n20,2000\n").unwrap();
    let out2 = tmp.path().join("bench2");
    ok(&[
        "bench",
        "--artifact",
        s(&art),
        "--dataset",
        s(&data),
        "--buffer-ms",
        "1",
        "--iters",
        "3",
        "--telemetry",
        s(&trace),
        "--out-dir",
        s(&out2),
    ]);
    assert_eq!(
        json(&out2.join("bench.json"))["latency"]["telemetry"]
            .as_array()
            .unwrap()
            .len(),
        3
    );

    std::fs::write(tmp.path().join("bad.json"), "{\"format\": \"something else\"}").unwrap();
    let o = flexdet(&[
        "bench",
        "--artifact",
        s(&tmp.path().join("bad.json")),
        "--dataset",
        s(&data),
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("artifact"));
}

#[test]
fn eval_overrides_and_sweeps() {
    let tmp = TempDir::new().unwrap();
    let (data, artifact) = trained(tmp.path());
    let run = |out: &str, extra: &[&str]| -> Value {
        let dir = tmp.path().join(out);
        let mut args = vec![
            "eval",
            "--artifact",
            s(&artifact),
            "--dataset",
            s(&data),
            "--out-dir",
            s(&dir),
        ];
        args.extend_from_slice(extra);
        ok(&args);
        json(&dir.join("eval.json"))
    };

    let sweep = run("sweep", &["--sweep", "num_decoder_layers=0,1,2"]);
    let entries = sweep.as_array().unwrap();
    assert_eq!(entries.len(), 3);
    for (k, e) in entries.iter().enumerate() {
        assert_eq!(e["config"]["num_decoder_layers"], k);
    }

    let default = run("default", &[]);
    let all = run("all", &["--set", "num_queries=all"]);
    assert_eq!(default, all);

    let bad = flexdet(&[
        "eval",
        "--artifact",
        s(&artifact),
        "--dataset",
        s(&data),
        "--set",
        "num_windows=3",
        "--out-dir",
        s(&tmp.path().join("bad")),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("invalid config"));
}

#[test]
fn search_fine_tuning_is_opt_in() {
    let tmp = TempDir::new().unwrap();
    let (data, artifact) = trained(tmp.path());
    let sp = tmp.path().join("one.toml");
    std::fs::write(
        &sp,
        "resolutions = [32]\npatch_sizes = [8]\nwindow_counts = [2]\ndecoder_depths = [1]\nquery_counts = [4]\n",
    )
    .unwrap();
    let base = [
        "search",
        "--artifact",
        s(&artifact),
        "--space",
        s(&sp),
        "--dataset",
        s(&data),
    ];
    let run = |out: &str, extra: &[&str]| {
        let dir = tmp.path().join(out);
        let mut args = base.to_vec();
        args.extend_from_slice(&["--out-dir", s(&dir)]);
        args.extend_from_slice(extra);
        (flexdet(&args), dir)
    };

    let (o, _) = run("nodata", &["--fine-tune-steps", "2"]);
    assert_eq!(o.status.code(), Some(1));

    let tuned: Vec<ParetoReport> = ["t1", "t2"]
        .iter()
        .map(|out| {
            let (o, dir) = run(
                out,
                &[
                    "--fine-tune-steps",
                    "2",
                    "--fine-tune-data",
                    s(&data),
                    "--fine-tune-batch",
                    "2",
                ],
            );
            assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
            assert!(json(&dir.join("manifest.json"))["inputs"]["fine_tune_data"].is_string());
            serde_json::from_str(&read(&dir.join("pareto.json"))).unwrap()
        })
        .collect();
    assert_eq!(tuned[0], tuned[1]);
    let (_, plain) = run("plain", &[]);
    let plain: ParetoReport = serde_json::from_str(&read(&plain.join("pareto.json"))).unwrap();
    // The report names the shared weights either way.
    assert_eq!(plain.weights_digest, tuned[0].weights_digest);
}
