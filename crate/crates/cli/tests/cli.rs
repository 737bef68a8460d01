use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 10] = [
    "synth",
    "embed",
    "pretrain-denovo",
    "train-head",
    "train-e2e",
    "train-baseline",
    "finetune-multitask",
    "eval",
    "pca",
    "learning-curve",
];

fn specfm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specfm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run specfm")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = specfm(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn help_matches_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let dir = tempfile::tempdir().unwrap();
    let top = ok(dir.path(), &["--help"]);
    assert_eq!(top, fs::read_to_string(golden.join("specfm.txt")).unwrap());
    for cmd in SUBCOMMANDS {
        let help = ok(dir.path(), &[cmd, "--help"]);
        assert_eq!(help, fs::read_to_string(golden.join(format!("{cmd}.txt"))).unwrap(), "{cmd}");
        for flag in ["--config", "--set", "--seed", "--help"] {
            assert!(help.contains(flag), "{cmd} lacks {flag}");
        }
    }
}

#[test]
fn synth_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        ok(
            d,
            &["synth", "--task", "phospho", "--n", "100", "--seed", "7", "--out", "x.mgf", "--labels", "x.tsv", "--provenance", "x.jsonl"],
        );
    }
    for f in ["x.mgf", "x.tsv", "x.jsonl", "x.mgf.manifest"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let other = tempfile::tempdir().unwrap();
    ok(other.path(), &["synth", "--task", "phospho", "--n", "100", "--seed", "8", "--out", "x.mgf", "--labels", "x.tsv"]);
    assert_ne!(fs::read(a.path().join("x.mgf")).unwrap(), fs::read(other.path().join("x.mgf")).unwrap());
}

#[test]
fn pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--task", "denovo", "--n", "200", "--seed", "1", "--out", "dn.mgf", "--labels", "dn.tsv"]);
    ok(d, &["synth", "--task", "phospho", "--n", "200", "--seed", "2", "--out", "tr.mgf", "--labels", "tr.tsv"]);
    ok(d, &["synth", "--task", "phospho", "--n", "100", "--seed", "3", "--out", "va.mgf", "--labels", "va.tsv"]);
    fs::write(
        d.join("run.cfg"),
        "# small model for the smoke run\nencoder.d_model = 16\nencoder.ff_dim = 32\ndecoder.ff_dim = 32\nhead.hidden = 16\ntrain.batch_size = 2\ntrain.warmup_steps = 20\ntrain.max_steps = 300\ntrain.validate_every = 100\ntrain.max_epochs = 5\n",
    )
    .unwrap();
    ok(
        d,
        &["pretrain-denovo", "--train", "dn.mgf", "--peptides", "dn.tsv", "--config", "run.cfg", "--out", "c.scpt", "--log", "pre.tsv"],
    );
    let log = fs::read_to_string(d.join("pre.tsv")).unwrap();
    assert!(log.starts_with("step\ttask\tsplit\tloss\tauroc\n"));
    ok(d, &["embed", "--checkpoint", "c.scpt", "--in", "tr.mgf", "va.mgf", "--out", "e.semb", "--config", "run.cfg"]);
    ok(
        d,
        &[
            "train-head", "--task", "phospho", "--emb", "e.semb", "--labels", "tr.tsv", "--valid-emb", "e.semb", "--valid-labels", "va.tsv",
            "--out", "h.shed", "--score-emb", "e.semb", "--scores", "s.tsv", "--config", "run.cfg",
        ],
    );
    ok(d, &["eval", "--scores", "s.tsv", "--labels", "va.tsv", "--json", "m.json", "--roc", "roc.csv", "--pr", "pr.csv"]);
    let json = fs::read_to_string(d.join("m.json")).unwrap();
    let auroc: f64 = json
        .lines()
        .find_map(|l| l.trim().strip_prefix("\"auroc\": "))
        .and_then(|v| v.trim_end_matches(',').parse().ok())
        .expect("auroc field");
    assert!((0.0..=1.0).contains(&auroc));
    assert!(fs::read_to_string(d.join("roc.csv")).unwrap().starts_with("threshold,fpr,tpr"));
    let manifest = fs::read_to_string(d.join("c.scpt.manifest")).unwrap();
    assert!(manifest.contains("command = pretrain-denovo"));
    assert!(manifest.contains("encoder.d_model = 16"));
    assert!(manifest.contains("input = dn.mgf sha256:"));
}

#[test]
fn single_class_eval_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("s.tsv"), "run_id\tscan_id\tscore\nr\ta\t0.2\nr\tb\t0.9\n").unwrap();
    fs::write(d.join("l.tsv"), "run_id\tscan_id\ttask\tlabel\nr\ta\tphospho\t1\nr\tb\tphospho\t1\n").unwrap();
    let out = specfm(d, &["eval", "--scores", "s.tsv", "--labels", "l.tsv", "--json", "m.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate labels"));
}

#[test]
fn usage_and_config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases: [&[&str]; 4] = [
        &["eval", "--bogus"],
        &["synth", "--task", "phospho", "--n", "5", "--out", "x.mgf", "--labels", "x.tsv", "--set", "train.nope=1"],
        &["synth", "--task", "nothing", "--n", "5", "--out", "x.mgf", "--labels", "x.tsv"],
        &["synth", "--task", "phospho", "--n", "5", "--out", "x.mgf", "--labels", "x.tsv", "--set", "gbdt.eta=0"],
    ];
    for args in cases {
        assert_eq!(specfm(d, args).status.code(), Some(1), "{args:?}");
    }
    let missing = specfm(d, &["eval", "--scores", "none.tsv", "--labels", "none.tsv", "--json", "m.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn baselines_score_glyco() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--task", "glyco", "--n", "300", "--seed", "4", "--out", "tr.mgf", "--labels", "tr.tsv"]);
    ok(d, &["synth", "--task", "glyco", "--n", "200", "--seed", "5", "--out", "te.mgf", "--labels", "te.tsv"]);
    ok(d, &["train-baseline", "--kind", "oxonium-ratio", "--task", "glyco", "--test", "te.mgf", "--scores", "r.tsv"]);
    ok(
        d,
        &[
            "train-baseline", "--kind", "oxonium-gbdt", "--task", "glyco", "--train", "tr.mgf", "--valid", "te.mgf", "--test", "te.mgf",
            "--labels", "tr.tsv", "te.tsv", "--scores", "g.tsv", "--out", "g.sgbt",
        ],
    );
    assert!(fs::read(d.join("g.sgbt")).unwrap().starts_with(b"SGBT"));
    for s in ["r.tsv", "g.tsv"] {
        let out = ok(d, &["eval", "--scores", s, "--labels", "te.tsv", "--json", "m.json"]);
        assert!(out.starts_with("glyco: AUROC"), "{out}");
    }
}
