use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use molevers::chemio::{
    load_pair_csv, parse_smiles, read_xyz, serialize_pair_csv, Element, Molecule, PairRankRecord,
    PAIR_HEADER,
};
use molevers::config::{load_run_config, RunConfig};
use molevers::corruption::stream;
use molevers::encoder::is_denoising_branch;
use molevers::evalbench::{
    emit_report, load_report, run_benchmark, FinetuneFactory, Protocol, RankingSpec,
};
use molevers::ranklab::{
    gate, generate_all_pairs, pairwise_tau, truth_map, Descriptor, MockRankProvider, RankProvider,
    GATE_THRESHOLD,
};
use molevers::training::{
    finetune as run_finetune, read_checkpoint, save_checkpoint, train_stage1, train_stage2,
    Checkpoint, FinetuneData, MetricsLog, MetricsRecord, TrainState, CHECKPOINT_MAGIC,
};

use crate::data::*;
use crate::error::{CliError, Result};

pub struct Opts {
    pub seed: Option<u64>,
    pub dry_run: bool,
}

fn config(opts: &Opts, path: &Path) -> Result<RunConfig> {
    let cfg = load_run_config(path).map_err(|e| CliError::from(e).at(path))?;
    Ok(match opts.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn section<T>(s: Option<T>, name: &str, path: &Path) -> Result<T> {
    s.ok_or_else(|| CliError::format(format!("config has no '{name}' section")).at(path))
}

/// JSON-lines metrics sink that remembers the first write error, since the
/// training callbacks cannot return one.
struct Metrics {
    log: MetricsLog<BufWriter<File>>,
    path: PathBuf,
    err: Option<std::io::Error>,
}

impl Metrics {
    fn open(out: &Path, explicit: Option<PathBuf>) -> Result<Self> {
        let path = explicit.unwrap_or_else(|| {
            let mut p = out.as_os_str().to_owned();
            p.push(".metrics.jsonl");
            PathBuf::from(p)
        });
        let f = File::create(&path).map_err(|e| CliError::from(e).at(&path))?;
        Ok(Self {
            log: MetricsLog::new(BufWriter::new(f)),
            path,
            err: None,
        })
    }

    fn write(&mut self, rec: &MetricsRecord) {
        if self.err.is_none() {
            self.err = self.log.write(rec).err();
        }
    }

    fn finish(self) -> Result<()> {
        let path = self.path;
        if let Some(e) = self.err {
            return Err(CliError::from(e).at(&path));
        }
        self.log
            .into_inner()
            .flush()
            .map_err(|e| CliError::from(e).at(&path))
    }
}

fn save(out: &Path, ck: &Checkpoint) -> Result<()> {
    save_checkpoint(out, ck).map_err(|e| CliError::from(e).at(out))
}

fn every(total: usize) -> usize {
    (total / 10).max(1)
}

fn describe(kind: &str, mols: &[Molecule]) {
    println!("kind: {kind}");
    println!("molecules: {}", mols.len());
    if mols.is_empty() {
        return;
    }
    let heavy: Vec<usize> = mols.iter().map(Molecule::heavy_atom_count).collect();
    let mean = heavy.iter().sum::<usize>() as f64 / heavy.len() as f64;
    println!(
        "heavy atoms: min {}, mean {:.2}, max {}",
        heavy.iter().min().unwrap_or(&0),
        mean,
        heavy.iter().max().unwrap_or(&0)
    );
    let counts: Vec<String> = Element::ALL
        .iter()
        .map(|&e| (e, mols.iter().map(|m| m.count(e)).sum::<usize>()))
        .filter(|&(_, c)| c > 0)
        .map(|(e, c)| format!("{} {c}", e.symbol()))
        .collect();
    println!("elements: {}", counts.join(", "));
    let with = mols.iter().filter(|m| m.coords().is_some()).count();
    println!("with coordinates: {with}");
}

pub fn parse(_: &Opts, file: &Path) -> Result<()> {
    let bytes = std::fs::read(file).map_err(|e| CliError::from(e).at(file))?;
    if bytes.starts_with(CHECKPOINT_MAGIC) {
        let ck = read_checkpoint(&bytes).map_err(|e| CliError::from(e).at(file))?;
        ck.validate().map_err(|e| CliError::from(e).at(file))?;
        let n: usize = ck.params.iter().map(|(_, t)| t.numel()).sum();
        let denoise = ck.params.iter().any(|(k, _)| is_denoising_branch(k));
        println!("kind: checkpoint");
        println!("stage: {}, step {}, seed {}", ck.stage, ck.step, ck.seed);
        println!("parameters: {} tensors, {n} values", ck.params.len());
        println!("denoising branch: {}", if denoise { "present" } else { "absent" });
        return Ok(());
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::format("not UTF-8 text").at(file))?;
    if has_ext(file, "json") {
        let cfg = load_run_config(file).map_err(|e| CliError::from(e).at(file))?;
        println!("kind: config");
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        return Ok(());
    }
    if has_ext(file, "xyz") {
        let m = read_xyz(&text).map_err(|e| CliError::from(e).at(file))?;
        describe("xyz", &[m]);
        return Ok(());
    }
    if has_ext(file, "csv") {
        let first = text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty() && !l.starts_with('#'))
            .unwrap_or("");
        if first == PAIR_HEADER {
            let recs = load_pair_csv(&text).map_err(|e| CliError::from(e).at(file))?;
            for r in &recs {
                for s in [&r.smiles1, &r.smiles2] {
                    parse_smiles(s).map_err(|e| {
                        CliError::format(format!("pair SMILES '{s}': {}", CliError::from(e))).at(file)
                    })?;
                }
            }
            let ones = recs.iter().filter(|r| r.label == 1).count();
            println!("kind: pairs");
            println!("pairs: {}, label 1: {ones}", recs.len());
            return Ok(());
        }
        let t = load_table(file, false)?;
        describe("property table", &t.molecules);
        println!("targets: {}", t.targets.join(", "));
        return Ok(());
    }
    let mols = parse_smiles_list(&text).map_err(|e| e.at(file))?;
    describe("smiles", &mols);
    Ok(())
}

pub fn pretrain1(opts: &Opts, cfg_path: &Path, out: &Path, metrics: Option<PathBuf>) -> Result<()> {
    let cfg = config(opts, cfg_path)?;
    let s1 = section(cfg.stage1.clone(), "stage1", cfg_path)?;
    let mols = with_coords(load_molecules(&s1.data, cfg.strip_hydrogens)?, s1.synthesize_coords)
        .map_err(|e| e.at(&s1.data))?;
    check_sizes(&mols, &cfg.encoder).map_err(|e| e.at(&s1.data))?;
    let tc = s1.train;
    if opts.dry_run {
        println!("ok: {} molecules, {} stage-1 steps", mols.len(), tc.steps);
        return Ok(());
    }
    let mut log = Metrics::open(out, metrics)?;
    let mut st: TrainState<f32> = TrainState::new(cfg.encoder.clone(), cfg.seed)?;
    let report = every(tc.steps);
    let last = train_stage1(&mut st, &tc, &mols, |t, l, lr| {
        let mut rec = MetricsRecord::new("stage1", t, lr, l.total);
        rec.l_map = Some(l.l_map);
        rec.l_x = Some(l.l_x);
        rec.l_p = Some(l.l_p);
        rec.l_d = Some(l.l_d);
        rec.map_accuracy = Some(l.map_accuracy);
        log.write(&rec);
        if (t as usize + 1) % report == 0 {
            eprintln!("stage1 step {}/{}: loss {:.4}", t + 1, tc.steps, l.total);
        }
    })?;
    log.finish()?;
    save(out, &Checkpoint::from_state(&st, "stage1"))?;
    println!(
        "L_MAP {:.6} L_X {:.6} L_P {:.6} L_D {:.6}",
        last.l_map, last.l_x, last.l_p, last.l_d
    );
    Ok(())
}

pub fn pretrain2(
    opts: &Opts,
    cfg_path: &Path,
    init: &Path,
    labels: &Path,
    out: &Path,
    metrics: Option<PathBuf>,
) -> Result<()> {
    let cfg = config(opts, cfg_path)?;
    let tc = section(cfg.stage2.clone(), "stage2", cfg_path)?;
    let ck = load_model(init, &cfg.encoder)?;
    let table = load_table(labels, cfg.strip_hydrogens)?;
    if table.n_targets() != cfg.encoder.n_aux_targets {
        return Err(CliError::shape(format!(
            "{} target columns, encoder n_aux_targets is {}",
            table.n_targets(),
            cfg.encoder.n_aux_targets
        ))
        .at(labels));
    }
    if table.is_empty() {
        return Err(CliError::format("no data rows").at(labels));
    }
    check_sizes(&table.molecules, &cfg.encoder).map_err(|e| e.at(labels))?;
    if opts.dry_run {
        println!(
            "ok: {} molecules, targets {}, {} epochs",
            table.len(),
            table.targets.join("/"),
            tc.epochs
        );
        return Ok(());
    }
    let mut log = Metrics::open(out, metrics)?;
    let mut st: TrainState<f32> = ck.into_state();
    let report = every(tc.epochs);
    let hist = train_stage2(&mut st, &tc, &table.molecules, &table.values, |e, loss, lr| {
        log.write(&MetricsRecord::new("stage2", e, lr, loss));
        if (e as usize + 1) % report == 0 {
            eprintln!("stage2 epoch {}/{}: loss {loss:.4}", e + 1, tc.epochs);
        }
    })?;
    log.finish()?;
    save(out, &Checkpoint::from_state(&st, "stage2").without_denoising_branch())?;
    println!("final loss {:.6}", hist.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

/// Molecules for pair SMILES outside the training set, parsed from the
/// SMILES text itself.
fn pair_pool(
    pairs: &[PairRankRecord],
    known: &HashMap<String, f64>,
    strip_h: bool,
) -> Result<Vec<Molecule>> {
    let mut pool: BTreeMap<&str, Molecule> = BTreeMap::new();
    for r in pairs {
        for s in [r.smiles1.as_str(), r.smiles2.as_str()] {
            if known.contains_key(s) || pool.contains_key(s) {
                continue;
            }
            let m = parse_smiles(s).map_err(|e| {
                CliError::format(format!("pair SMILES '{s}' does not resolve: {}", CliError::from(e)))
            })?;
            pool.insert(s, if strip_h { m.strip_hydrogens() } else { m });
        }
    }
    Ok(pool.into_values().collect())
}

pub fn finetune(
    opts: &Opts,
    cfg_path: &Path,
    init: &Path,
    train_path: &Path,
    pairs_path: Option<&Path>,
    out: &Path,
    metrics: Option<PathBuf>,
) -> Result<()> {
    let cfg = config(opts, cfg_path)?;
    let ft = section(cfg.finetune.clone(), "finetune", cfg_path)?;
    let ck = load_model(init, &cfg.encoder)?;
    let train = load_labeled(train_path, "train", cfg.strip_hydrogens)?;
    check_sizes(&train.molecules, &cfg.encoder).map_err(|e| e.at(train_path))?;

    let mut pairs = None;
    let mut pool = Vec::new();
    if let Some(p) = pairs_path {
        let recs = load_pairs(p)?;
        let truth = truth_map(&train);
        pool = pair_pool(&recs, &truth, cfg.strip_hydrogens).map_err(|e| e.at(p))?;
        check_sizes(&pool, &cfg.encoder).map_err(|e| e.at(p))?;
        if ft.use_pairs {
            // The gate sees only pairs whose truth the training labels give.
            let scored: Vec<PairRankRecord> = recs
                .iter()
                .filter(|r| truth.contains_key(&r.smiles1) && truth.contains_key(&r.smiles2))
                .cloned()
                .collect();
            let q = pairwise_tau(&scored, &truth)?;
            let open = gate(&q, ft.gate_threshold);
            println!(
                "gate={} abs_tau={:.4} scored_pairs={} threshold={}",
                if open { "open" } else { "closed" },
                q.abs_tau,
                q.n_pairs,
                ft.gate_threshold
            );
            if open {
                pairs = Some(recs);
            }
        } else {
            println!("gate=off (finetune.use_pairs is false)");
        }
    }
    if opts.dry_run {
        println!("ok: {} training molecules, {} epochs", train.len(), ft.train.epochs);
        return Ok(());
    }
    let mut log = Metrics::open(out, metrics)?;
    let mut st: TrainState<f32> = ck.into_state();
    let data = FinetuneData {
        train: &train,
        pairs: pairs.as_deref(),
        pair_pool: &pool,
    };
    let report = every(ft.train.epochs);
    let mut records = Vec::new();
    let rep = run_finetune(&mut st, &ft.train, data, |e, loss, lr| {
        records.push(MetricsRecord::new("finetune", e, lr, loss));
        if (e as usize + 1) % report == 0 {
            eprintln!("finetune epoch {}/{}: loss {loss:.4}", e + 1, ft.train.epochs);
        }
    })?;
    // Rank losses are only known per epoch once the run returns.
    for (i, mut rec) in records.into_iter().enumerate() {
        rec.l_rank = rep.epoch_rank_losses.get(i).copied();
        log.write(&rec);
    }
    log.finish()?;
    save(out, &Checkpoint::from_state(&st, "finetune"))?;
    println!(
        "final loss {:.6}{}",
        rep.epoch_losses.last().copied().unwrap_or(f64::NAN),
        rep.epoch_rank_losses
            .last()
            .map(|r| format!(" (rank {r:.6})"))
            .unwrap_or_default()
    );
    Ok(())
}

pub fn eval(
    opts: &Opts,
    cfg_path: &Path,
    model: &Path,
    assays_dir: &Path,
    out: &Path,
    compare: &[PathBuf],
) -> Result<()> {
    let cfg = config(opts, cfg_path)?;
    let ft = section(cfg.finetune.clone(), "finetune", cfg_path)?;
    let base = load_model(model, &cfg.encoder)?;
    let files = files_with_ext(assays_dir, "csv")?;
    if files.is_empty() {
        return Err(CliError::format("no assay .csv files").at(assays_dir));
    }
    let assays = files
        .iter()
        .map(|f| {
            let id = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let set = load_labeled(f, &id, cfg.strip_hydrogens)?;
            check_sizes(&set.molecules, &cfg.encoder).map_err(|e| e.at(f))?;
            Ok(set)
        })
        .collect::<Result<Vec<_>>>()?;
    let compared = compare
        .iter()
        .map(|p| load_report(p).map_err(|e| CliError::from(e).at(p)))
        .collect::<Result<Vec<_>>>()?;
    let n_splits = cfg.eval.as_ref().map_or(3, |e| e.n_splits);
    let ranking = match (cfg.descriptor()?, cfg.eval.as_ref().and_then(|e| e.ranking.as_ref())) {
        (Some(descriptor), Some(r)) if ft.use_pairs => Some(RankingSpec {
            descriptor,
            flip_prob: r.flip_prob,
            threshold: ft.gate_threshold,
            pair_cap: r.pair_cap,
        }),
        _ => None,
    };
    if let Some(a) = assays.iter().find(|a| a.len() < 4) {
        return Err(CliError::format(format!("assay '{}' has fewer than 4 molecules", a.assay_id)));
    }
    if opts.dry_run {
        println!("ok: {} assays, {} splits each", assays.len(), n_splits);
        return Ok(());
    }
    let factory = FinetuneFactory {
        name: "molevers".to_string(),
        base,
        train: ft.train,
        ranking,
    };
    let protocol = Protocol {
        n_splits,
        seed: cfg.seed,
    };
    let report = run_benchmark(&assays, &factory, &protocol)?;
    let refs: Vec<_> = compared.iter().collect();
    let written = emit_report(&report, out, &refs)?;
    for (metric, b) in &report.aggregates {
        println!("{metric}: median {:.4} over {} cells", b.median, b.n);
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

pub fn rankgen(
    opts: &Opts,
    train_path: &Path,
    descriptor: &str,
    flip: f64,
    out: &Path,
    cap: usize,
) -> Result<()> {
    let d: Descriptor = descriptor.parse()?;
    let train = load_labeled(train_path, "train", false)?;
    let seed = opts.seed.unwrap_or(0);
    let mut provider = MockRankProvider::new(d, flip, stream(seed, 6, 0))?;
    let candidates = generate_all_pairs(&train, cap, &mut stream(seed, 5, 0))?;
    if opts.dry_run {
        println!("ok: {} candidate pairs", candidates.len());
        return Ok(());
    }
    let recs = provider.rank_pairs(&candidates)?;
    let q = pairwise_tau(&recs, &truth_map(&train))?;
    std::fs::write(out, serialize_pair_csv(&recs)).map_err(|e| CliError::from(e).at(out))?;
    println!(
        "pairs={} accuracy={:.4} abs_tau={:.4} gate={} (threshold {GATE_THRESHOLD})",
        q.n_pairs,
        q.accuracy,
        q.abs_tau,
        if gate(&q, GATE_THRESHOLD) { "open" } else { "closed" }
    );
    Ok(())
}

