use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use molevers::chemio::{load_pair_csv, serialize_pair_csv, PairRankRecord};
use molevers::encoder::{is_denoising_branch, EncoderConfig};
use molevers::training::{read_checkpoint, save_checkpoint, Checkpoint, TrainState};
use tempfile::TempDir;

const ENCODER: &str = r#"{"n_layers": 1, "embed_dim": 8, "ffn_dim": 16, "n_heads": 2, "n_dist_kernels": 4, "max_atoms": 32}"#;

fn encoder() -> EncoderConfig {
    EncoderConfig {
        n_layers: 1,
        embed_dim: 8,
        ffn_dim: 16,
        n_heads: 2,
        n_dist_kernels: 4,
        max_atoms: 32,
        ..EncoderConfig::desk()
    }
}

fn molevers(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_molevers"))
        .args(args)
        .output()
        .expect("spawn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMILES: &[&str] = &[
    "CCO", "c1ccccc1", "CC(=O)O", "CCN", "OCCO", "CC(C)Cl", "c1ccncc1", "CCCBr", "FC(F)F", "CCS",
    "CC(N)C(=O)O", "COC",
];

fn config(dir: &Path, extra: &str) -> PathBuf {
    write(
        dir,
        "run.json",
        &format!(
            r#"{{"seed": 1, "encoder": {ENCODER},
                "stage1": {{"data": "mols.smi", "synthesize_coords": true, "train": {{"steps": 3, "batch_size": 4, "lr": 0.001}}}},
                "stage2": {{"train": {{"epochs": 2, "batch_size": 4, "lr": 0.001}}}},
                "finetune": {{"train": {{"epochs": 2, "batch_size": 4, "lr": 0.001}}}}{extra}}}"#
        ),
    )
}

fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "mols.smi", &SMILES.join("\n"));
    config(dir.path(), "");
    dir
}

fn base_checkpoint(dir: &Path) -> PathBuf {
    let st: TrainState<f32> = TrainState::new(encoder(), 0).unwrap();
    let p = dir.join("base.ckpt");
    save_checkpoint(&p, &Checkpoint::from_state(&st, "stage1")).unwrap();
    p
}

/// `n` linear alkanes with labels equal to their carbon count.
fn chain_csv(dir: &Path, name: &str, n: usize) -> PathBuf {
    let mut body = String::from("smiles,y\n");
    for k in 1..=n {
        body += &format!("{},{k}\n", "C".repeat(k));
    }
    write(dir, name, &body)
}

#[test]
fn parse_reports_and_maps_errors() {
    let dir = workspace();
    let d = dir.path();
    let ok = molevers(&["parse", s(&d.join("mols.smi"))]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    assert!(stdout(&ok).contains("molecules: 12"));

    let bad = write(d, "bad.smi", "CCO\nC1CC\n");
    let o = molevers(&["parse", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2, col"), "{}", stderr(&o));

    assert_eq!(code(&molevers(&["parse", s(&d.join("nope.smi"))])), 3);

    let xyz = write(d, "w.xyz", "3\nwater\nO 0 0 0\nH 0.96 0 0\nH -0.24 0.93 0\n");
    assert!(stdout(&molevers(&["parse", s(&xyz)])).contains("with coordinates: 1"));

    let pairs = write(d, "p.csv", "smiles1,smiles2,prediction\nCCO,CC,0\n");
    assert!(stdout(&molevers(&["parse", s(&pairs)])).contains("pairs: 1"));
    let bad_csv = write(d, "t.csv", "smiles,y\nCCO,1\nC1CC,2\n");
    let o = molevers(&["parse", s(&bad_csv)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3, col"), "{}", stderr(&o));

    assert!(stdout(&molevers(&["parse", s(&d.join("run.json"))])).contains("\"embed_dim\": 8"));
    let ck = base_checkpoint(d);
    assert!(stdout(&molevers(&["parse", s(&ck)])).contains("denoising branch: present"));
}

#[test]
fn config_errors() {
    let dir = workspace();
    let d = dir.path();
    let out = d.join("o.ckpt");
    let unknown = write(d, "u.json", r#"{"seeds": 1}"#);
    assert_eq!(code(&molevers(&["pretrain1", "--config", s(&unknown), "--out", s(&out)])), 2);
    let missing = write(d, "m.json", r#"{"stage1": {"data": "absent.smi"}}"#);
    assert_eq!(code(&molevers(&["pretrain1", "--config", s(&missing), "--out", s(&out)])), 3);
    let no_section = write(d, "n.json", "{}");
    assert_eq!(code(&molevers(&["pretrain1", "--config", s(&no_section), "--out", s(&out)])), 2);
}

#[test]
fn pretrain1_is_deterministic_and_logs() {
    let dir = workspace();
    let d = dir.path();
    let cfg = d.join("run.json");
    let (a, b) = (d.join("a.ckpt"), d.join("b.ckpt"));
    let o = molevers(&["pretrain1", "--config", s(&cfg), "--out", s(&a)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("L_MAP "));
    molevers(&["pretrain1", "--config", s(&cfg), "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let log = std::fs::read_to_string(d.join("a.ckpt.metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.contains("\"l_map\""));

    let c = d.join("c.ckpt");
    molevers(&["pretrain1", "--config", s(&cfg), "--out", s(&c), "--seed", "2"]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn dry_run_writes_nothing() {
    let dir = workspace();
    let d = dir.path();
    let out = d.join("x.ckpt");
    let o = molevers(&["--dry-run", "pretrain1", "--config", s(&d.join("run.json")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn pretrain2_drops_denoising_branch() {
    let dir = workspace();
    let d = dir.path();
    let cfg = d.join("run.json");
    let init = base_checkpoint(d);
    let mut aux = String::from("smiles,homo,lumo,dipole\n");
    for (i, smi) in SMILES.iter().enumerate() {
        aux += &format!("{smi},{},{},{}\n", -5.0 - 0.1 * i as f64, 1.0 + 0.05 * (i * i) as f64, (i % 4) as f64);
    }
    let labels = write(d, "aux.csv", &aux);
    let out = d.join("s2.ckpt");
    let o = molevers(&["pretrain2", "--config", s(&cfg), "--init", s(&init), "--labels", s(&labels), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck = read_checkpoint(&std::fs::read(&out).unwrap()).unwrap();
    assert!(!ck.params.iter().any(|(k, _)| is_denoising_branch(k)));
    assert_eq!(ck.aux_norm.unwrap().mean.len(), 3);

    let short = write(d, "short.csv", "smiles,homo,lumo,dipole\nCCO,1,2\n");
    let o = molevers(&["pretrain2", "--config", s(&cfg), "--init", s(&init), "--labels", s(&short), "--out", s(&out)]);
    assert_eq!(code(&o), 2);

    let wide = write(d, "wide.json", r#"{"encoder": {"embed_dim": 16}, "stage2": {}}"#);
    let o = molevers(&["pretrain2", "--config", s(&wide), "--init", s(&init), "--labels", s(&labels), "--out", s(&out)]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}

/// 200 pairs over 21 alkanes, the first `right` labelled by true order.
fn graded_pairs(dir: &Path, right: usize) -> PathBuf {
    let mut recs = Vec::new();
    'outer: for i in 1..=21usize {
        for j in i + 1..=21 {
            if recs.len() == 200 {
                break 'outer;
            }
            let label = u8::from(recs.len() < right);
            recs.push(PairRankRecord::new("C".repeat(i), "C".repeat(j), label));
        }
    }
    write(dir, &format!("pairs{right}.csv"), &serialize_pair_csv(&recs))
}

#[test]
fn finetune_gate_is_strict() {
    let dir = workspace();
    let d = dir.path();
    let cfg = d.join("run.json");
    let init = base_checkpoint(d);
    let train = chain_csv(d, "train.csv", 21);
    let out = d.join("ft.ckpt");
    for (right, word) in [(139, "gate=closed abs_tau=0.3900"), (141, "gate=open abs_tau=0.4100")] {
        let pairs = graded_pairs(d, right);
        let o = molevers(&[
            "--dry-run", "finetune", "--config", s(&cfg), "--init", s(&init), "--train", s(&train),
            "--pairs", s(&pairs), "--out", s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains(word), "{}", stdout(&o));
    }
}

#[test]
fn closed_gate_equals_no_pairs() {
    let dir = workspace();
    let d = dir.path();
    let cfg = d.join("run.json");
    let init = base_checkpoint(d);
    let train = chain_csv(d, "train.csv", 21);
    let pairs = graded_pairs(d, 100);
    let (a, b) = (d.join("a.ckpt"), d.join("b.ckpt"));
    let o = molevers(&["finetune", "--config", s(&cfg), "--init", s(&init), "--train", s(&train), "--pairs", s(&pairs), "--out", s(&a)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("gate=closed"));
    molevers(&["finetune", "--config", s(&cfg), "--init", s(&init), "--train", s(&train), "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn open_gate_trains_with_transductive_pairs() {
    let dir = workspace();
    let d = dir.path();
    let cfg = d.join("run.json");
    let init = base_checkpoint(d);
    let train = chain_csv(d, "train.csv", 8);
    let mut recs: Vec<PairRankRecord> = (1..8)
        .map(|k| PairRankRecord::new("C".repeat(k), "C".repeat(k + 1), 1))
        .collect();
    recs.push(PairRankRecord::new("CCO", "CCCCCCCC", 1));
    let pairs = write(d, "pairs.csv", &serialize_pair_csv(&recs));
    let out = d.join("ft.ckpt");
    let o = molevers(&["finetune", "--config", s(&cfg), "--init", s(&init), "--train", s(&train), "--pairs", s(&pairs), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("gate=open") && stdout(&o).contains("rank"));
    let log = std::fs::read_to_string(d.join("ft.ckpt.metrics.jsonl")).unwrap();
    assert!(log.lines().all(|l| l.contains("\"l_rank\"")), "{log}");

    recs.push(PairRankRecord::new("C1CC", "CC", 1));
    let bad = write(d, "bad_pairs.csv", &serialize_pair_csv(&recs));
    let o = molevers(&["finetune", "--config", s(&cfg), "--init", s(&init), "--train", s(&train), "--pairs", s(&bad), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 10, col 2"), "{}", stderr(&o));
}

#[test]
fn rankgen_quality_and_round_trip() {
    let dir = workspace();
    let d = dir.path();
    let train = chain_csv(d, "train.csv", 30);
    let out = d.join("pairs.csv");
    let o = molevers(&["rankgen", "--train", s(&train), "--descriptor", "heavy_atom_count", "--flip", "0", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("abs_tau=1.0000 gate=open"), "{}", stdout(&o));
    let recs = load_pair_csv(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(recs.len(), 435);
    assert_eq!(serialize_pair_csv(&recs), std::fs::read_to_string(&out).unwrap());

    let o = molevers(&["rankgen", "--train", s(&train), "--descriptor", "heavy_atom_count", "--flip", "0.5", "--out", s(&out), "--seed", "3"]);
    assert!(stdout(&o).contains("gate=closed"), "{}", stdout(&o));

    let o = molevers(&["rankgen", "--train", s(&train), "--descriptor", "logp", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_writes_deterministic_reports() {
    let dir = workspace();
    let d = dir.path();
    let cfg = config(d, r#", "eval": {"n_splits": 2, "ranking": {"descriptor": "heavy_atom_count"}}"#);
    let init = base_checkpoint(d);
    let assays = d.join("assays");
    std::fs::create_dir(&assays).unwrap();
    chain_csv(&assays, "alkanes.csv", 8);
    let mut mixed = String::from("smiles,y\n");
    for (i, smi) in SMILES.iter().enumerate() {
        mixed += &format!("{smi},{}\n", (i as f64 * 0.7).sin());
    }
    write(&assays, "mixed.csv", &mixed);
    let run = |out: &Path| {
        let o = molevers(&["eval", "--config", s(&cfg), "--model", s(&init), "--assays", s(&assays), "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    let (r1, r2) = (d.join("r1"), d.join("r2"));
    run(&r1);
    run(&r2);
    for f in ["results.json", "summary.csv", "boxplot.csv"] {
        assert_eq!(std::fs::read(r1.join(f)).unwrap(), std::fs::read(r2.join(f)).unwrap(), "{f}");
    }
    let summary = std::fs::read_to_string(r1.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);

    chain_csv(&assays, "tiny.csv", 3);
    let o = molevers(&["eval", "--config", s(&cfg), "--model", s(&init), "--assays", s(&assays), "--out", s(&r1)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("'tiny'"), "{}", stderr(&o));
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_molevers"))
        .args(["parse", "x.smi"])
        .env("MOLEVERS_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
