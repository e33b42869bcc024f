use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &[&str] = &["--id-train", "96", "--id-test", "24", "--ood-background", "24", "--ood-novelshape", "24"];
const TRAIN: &[&str] = &["--widths", "4,8", "--epochs", "2", "--lr-decay-epochs", "1", "--batch-size", "32"];

fn oodkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oodkit")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = oodkit(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path) {
    let mut args = vec!["gen-data", "--seed", "7", "--out", s(dir)];
    args.extend_from_slice(TINY);
    ok(&args);
}

/// File name → contents for every file directly under `dir`.
fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(oodkit(&[]).status.code(), Some(1));
    assert_eq!(oodkit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(oodkit(&["pretrain", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(oodkit(&["--help"]).status.code(), Some(0));
    let out = oodkit(&["pretrain", "--epochs", "many", "--data", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs"));
}

#[test]
fn eval_without_checkpoint_names_the_flag() {
    let out = oodkit(&["eval", "--data", "somewhere", "--out", "elsewhere"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--checkpoint"));
}

#[test]
fn runtime_failures_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.ckpt");
    let out = oodkit(&["eval", "--checkpoint", s(&missing), "--data", s(tmp.path()), "--out", s(&tmp.path().join("e"))]);
    assert_eq!(out.status.code(), Some(2));

    let data = tmp.path().join("data");
    gen(&data);
    fs::write(data.join("id-train.bin"), [0u8; 100]).unwrap();
    let p = tmp.path().join("p");
    let mut args = vec!["pretrain", "--data", s(&data), "--out", s(&p)];
    args.extend_from_slice(TRAIN);
    let out = oodkit(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed CIFAR binary"));

    let bad = tmp.path().join("bad.ckpt");
    fs::write(&bad, b"NOPE").unwrap();
    let out = oodkit(&["eval", "--checkpoint", s(&bad), "--data", s(&data), "--out", s(&tmp.path().join("e2"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad magic"));
}

#[test]
fn gen_data_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a);
    gen(&b);
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.iter().map(|f| f.0.as_str()).collect::<Vec<_>>(), [
        "effective-config.txt",
        "id-test.bin",
        "id-train.bin",
        "manifest.json",
        "ood-background.bin",
        "ood-novelshape.bin"
    ]);
    assert_eq!(fa, fb);
    assert_eq!(fs::metadata(a.join("id-train.bin")).unwrap().len(), 96 * 3073);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data);
    let cfg = tmp.path().join("run.conf");
    fs::write(&cfg, "# tiny\nwidths = 4,8\nepochs = 3\nlr-decay-epochs = 1\nbatch-size = 48\n").unwrap();
    let out = tmp.path().join("pre");
    ok(&["pretrain", "--config", s(&cfg), "--epochs", "1", "--seed", "11", "--data", s(&data), "--out", s(&out)]);
    let text = fs::read_to_string(out.join("effective-config.txt")).unwrap();
    assert!(text.contains("epochs = 1\n"));
    assert!(text.contains("batch-size = 48\n"));
    assert!(text.contains("seed = 11\n"));
    assert!(text.contains("widths = 4,8\n"));
    assert_eq!(fs::read_to_string(out.join("train-log.csv")).unwrap().lines().count(), 2);

    fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(oodkit(&["pretrain", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]).status.code(), Some(1));
}

/// gen-data, pretrain, finetune, eval of both checkpoints and a report under `root`.
fn workflow(root: &Path) -> PathBuf {
    let data = root.join("data");
    gen(&data);
    let (pre, ft) = (root.join("pre"), root.join("ft"));
    let mut args = vec!["pretrain", "--data", s(&data), "--out", s(&pre)];
    args.extend_from_slice(TRAIN);
    ok(&args);
    let pre_ckpt = pre.join("model.ckpt");
    let mut args = vec!["finetune", "--data", s(&data), "--checkpoint", s(&pre_ckpt), "--out", s(&ft), "--dump-extraction", "true"];
    args.extend_from_slice(&["--epochs", "1", "--lr-decay-epochs", "", "--batch-size", "32"]);
    ok(&args);
    let evals = root.join("evals");
    for (name, ckpt) in [("pretrained", pre_ckpt), ("finetuned", ft.join("model.ckpt"))] {
        ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&evals.join(name))]);
    }
    ok(&["report", "--run", s(&evals), "--out", s(&root.join("report"))]);
    root.to_path_buf()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or("").to_string()
}

fn keys(v: &Value) -> String {
    match v {
        Value::Object(m) => m.keys().cloned().collect::<Vec<_>>().join(","),
        _ => String::new(),
    }
}

/// One line per emitted file kind: its CSV header or its JSON key set.
fn schema_summary(root: &Path) -> String {
    let eval = root.join("evals/finetuned");
    let summary: Value = serde_json::from_slice(&fs::read(eval.join("eval.json")).unwrap()).unwrap();
    let report: Value = serde_json::from_slice(&fs::read(root.join("report/report.json")).unwrap()).unwrap();
    let manifest: Value = serde_json::from_slice(&fs::read(root.join("data/manifest.json")).unwrap()).unwrap();
    let lines = [
        format!("manifest.json: {}", keys(&manifest)),
        format!("manifest.json splits[]: {}", keys(&manifest["splits"][0])),
        format!("train-log.csv: {}", header(&root.join("pre/train-log.csv"))),
        format!("extraction.csv: {}", header(&root.join("ft/extraction.csv"))),
        format!("eval.json: {}", keys(&summary)),
        format!("eval.json entries[]: {}", keys(&summary["entries"][0])),
        format!("eval.json react: {}", keys(&summary["react"])),
        format!("scores-<score>.csv: {}", header(&eval.join("scores-energy.csv"))),
        format!("norm-hist-<split>.csv: {}", header(&eval.join("norm-hist-ood-background.csv"))),
        format!("score-hist-<score>-<split>.csv: {}", header(&eval.join("score-hist-msp-ood-novelshape.csv"))),
        format!("report.json: {}", keys(&report)),
        format!("report.json evaluations[]: {}", keys(&report["evaluations"][0])),
    ];
    lines.join("\n") + "\n"
}

#[test]
fn workflow_outputs_match_golden_schemas_and_rerun_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = workflow(&tmp.path().join("a"));
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/schemas.txt");
    // BLESS=1 rewrites the expected schemas
    if std::env::var_os("BLESS").is_some() {
        fs::create_dir_all(golden.parent().unwrap()).unwrap();
        fs::write(&golden, schema_summary(&a)).unwrap();
    }
    assert_eq!(schema_summary(&a), fs::read_to_string(&golden).unwrap());

    let eval = a.join("evals/finetuned");
    for score in ["msp", "energy", "odin", "react-energy", "featurenorm"] {
        let rows = fs::read_to_string(eval.join(format!("scores-{score}.csv"))).unwrap().lines().count();
        assert_eq!(rows, 1 + 3 * 24, "{score}");
    }
    let summary: Value = serde_json::from_slice(&fs::read(eval.join("eval.json")).unwrap()).unwrap();
    assert_eq!(summary["entries"].as_array().unwrap().len(), 5 * 2);

    let heat = a.join("report/heatmaps/finetuned");
    for split in ["id-test", "ood-background", "ood-novelshape"] {
        for kind in ["prob", "norm"] {
            let text = fs::read_to_string(heat.join(format!("{split}-0-{kind}.csv"))).unwrap();
            let rows: Vec<&str> = text.lines().collect();
            assert_eq!(rows.len(), 16);
            assert!(rows.iter().all(|r| r.split(',').count() == 16));
        }
    }

    // everything except paths is reproduced bit for bit in another directory
    let b = workflow(&tmp.path().join("b"));
    for rel in ["pre/model.ckpt", "ft/model.ckpt", "ft/extraction.csv", "pre/train-log.csv", "evals/finetuned/eval.json", "report/report.json"] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn score_and_sweep_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data);
    let pre = tmp.path().join("pre");
    let mut args = vec!["pretrain", "--data", s(&data), "--out", s(&pre), "--epochs", "1", "--lr-decay-epochs", ""];
    args.extend_from_slice(&["--widths", "4,8", "--batch-size", "32"]);
    ok(&args);
    let ckpt = pre.join("model.ckpt");

    let sc = tmp.path().join("score");
    ok(&["score", "--checkpoint", s(&ckpt), "--data", s(&data), "--split", "ood-background", "--score", "react-energy", "--out", s(&sc)]);
    let csv = fs::read_to_string(sc.join("scores-react-energy.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("id,split,score"));
    assert_eq!(csv.lines().count(), 25);
    let fvec = sc.join("features-ood-background.fvec");
    let from_dump = tmp.path().join("score2");
    ok(&["score", "--checkpoint", s(&ckpt), "--features", s(&fvec), "--score", "energy", "--out", s(&from_dump)]);
    ok(&["score", "--checkpoint", s(&ckpt), "--data", s(&data), "--split", "ood-background", "--score", "energy", "--out", s(&sc)]);
    let values = |p: PathBuf| -> Vec<String> {
        fs::read_to_string(p).unwrap().lines().skip(1).map(|l| l.rsplit(',').next().unwrap().to_string()).collect()
    };
    assert_eq!(values(from_dump.join("scores-energy.csv")), values(sc.join("scores-energy.csv")));
    assert_eq!(oodkit(&["score", "--checkpoint", s(&ckpt), "--features", s(&fvec), "--score", "react-energy", "--out", s(&sc)]).status.code(), Some(1));

    let sw = tmp.path().join("sweep");
    let stdout = ok(&[
        "sweep", "--param", "delta", "--values", "0,0.5", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&sw),
        "--epochs", "1", "--lr-decay-epochs", "", "--batch-size", "32", "--eval-limit", "12",
    ]);
    assert!(stdout.starts_with("value,fpr95,auroc"));
    let csv = fs::read_to_string(sw.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("value,fpr95,auroc,ood_split,score,s_count_mean"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 5);
    assert!(csv.lines().skip(1).filter(|l| l.starts_with("0,")).all(|l| l.ends_with(",0")));
}
