use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use specfm::baselines::{
    bin_sweep, binned_baseline, gbdt_fit, oxonium_baselines, oxonium_features, save_gbdt, write_bin_sweep, OxoniumMode, Split,
};
use specfm::config::RunConfig;
use specfm::metrics::{auroc, learning_curve as run_curve, pr_points, roc_points, write_learning_curve, write_pca_csv, write_pr_csv, write_roc_csv, MetricsReport};
use specfm::model::{Model, ModelConfig};
use specfm::msio::{write_embeddings, write_labels, write_mgf, write_peptides, write_row_index, EmbeddingMatrix, Spectrum, Task};
use specfm::preprocess::{OxoniumTable, ProcessedSpectrum};
use specfm::synthgen::{gen_dataset, label_records, peptide_records, write_provenance, SynthTask};
use specfm::train::{
    finetune_multitask, load_head, pretrain_denovo, save_head, sigmoid, train_end_to_end, train_head as fit_head, write_training_log,
    E2eOptions, MultitaskData, MultitaskOptions, TaskData, ValidationEvent,
};
use specfm::{Error, Result};

use crate::files::*;
use crate::{BaselineKind, Common};

fn load_config(common: &Common) -> Result<RunConfig> {
    let text = match &common.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let mut overrides = Vec::new();
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = common.seed {
        overrides.push(("train.seed".into(), seed.to_string()));
    }
    RunConfig::resolve(text.as_deref(), &overrides)
}

fn paths(groups: &[&[PathBuf]]) -> Vec<PathBuf> {
    groups.iter().flat_map(|g| g.iter().cloned()).collect()
}

fn manifest(out: &Path, command: &str, cfg: &RunConfig, inputs: &[PathBuf]) -> Result<()> {
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    write_manifest(out, command, cfg, &refs)
}

fn write_log(path: Option<&Path>, events: &[ValidationEvent]) -> Result<()> {
    match path {
        Some(p) => write_with(p, |w| write_training_log(w, events)),
        None => Ok(()),
    }
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(BufReader::new(File::open(path)?))
}

fn save_model(path: &Path, model: &Model) -> Result<()> {
    write_with(path, |w| model.save(w))
}

pub fn synth(task: &str, n: usize, out: &Path, labels: &Path, provenance: Option<&Path>, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let task: SynthTask = task.parse()?;
    let sc = cfg.synth.for_task(task, n, cfg.train.seed);
    let mut records = gen_dataset(&sc)?;
    let run_id = out
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("cannot derive a run id from {}", out.display())))?;
    for r in &mut records {
        r.spectrum.run_id = run_id.to_string();
    }
    let spectra: Vec<Spectrum> = records.iter().map(|r| r.spectrum.clone()).collect();
    write_with(out, |w| write_mgf(w, &spectra))?;
    if task == SynthTask::Denovo {
        write_with(labels, |w| write_peptides(w, &peptide_records(&records)))?;
    } else {
        write_with(labels, |w| write_labels(w, &label_records(&records)))?;
    }
    if let Some(p) = provenance {
        write_with(p, |w| write_provenance(w, &records))?;
    }
    manifest(out, "synth", &cfg, &[])
}

pub fn embed(checkpoint: &Path, inputs: &[PathBuf], out: &Path, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let model = load_model(checkpoint)?;
    let per_file: Vec<(Vec<Spectrum>, Vec<Vec<f32>>)> = inputs
        .par_iter()
        .map(|p| {
            let spectra = read_all_spectra(std::slice::from_ref(p))?;
            let rows = model.embed(&preprocess_all(&spectra, &cfg.preprocess)?)?;
            Ok((spectra, rows))
        })
        .collect::<Result<_>>()?;
    let mut m = EmbeddingMatrix::new(model.config.encoder.d_model);
    for (spectra, rows) in &per_file {
        for (s, r) in spectra.iter().zip(rows) {
            m.push(&s.run_id, &s.scan_id, r)?;
        }
    }
    write_with(out, |w| write_embeddings(w, &m))?;
    write_with(&row_index_path(out), |w| write_row_index(w, &m))?;
    manifest(out, "embed", &cfg, &paths(&[std::slice::from_ref(&checkpoint.to_path_buf()), inputs]))
}

fn denovo_model_config(cfg: &RunConfig) -> ModelConfig {
    let mut mc = ModelConfig::with_decoder(cfg.encoder.clone());
    mc.decoder = Some(cfg.decoder.clone());
    mc.head_hidden = cfg.head_hidden;
    mc
}

#[allow(clippy::too_many_arguments)]
pub fn pretrain(
    train: &[PathBuf],
    valid: &[PathBuf],
    peptides: &[PathBuf],
    init: Option<&Path>,
    out: &Path,
    log: Option<&Path>,
    common: &Common,
) -> Result<()> {
    let cfg = load_config(common)?;
    let train_ex = denovo_examples(train, peptides, &cfg.preprocess)?;
    let valid_ex = denovo_examples(valid, peptides, &cfg.preprocess)?;
    let mc = denovo_model_config(&cfg);
    let mut model = match init {
        Some(p) => Model::load_expecting(BufReader::new(File::open(p)?), &mc)?,
        None => Model::init(mc, cfg.train.seed)?,
    };
    let fit = pretrain_denovo(&mut model, &train_ex, &valid_ex, &cfg.train)?;
    save_model(out, &model)?;
    write_log(log, &fit.log)?;
    if let Some(last) = fit.step_losses.last() {
        println!("final training loss {last}");
    }
    let init: Vec<PathBuf> = init.map(Path::to_path_buf).into_iter().collect();
    manifest(out, "pretrain-denovo", &cfg, &paths(&[train, valid, peptides, &init]))
}

pub struct HeadArgs<'a> {
    pub task: &'a str,
    pub emb: &'a Path,
    pub labels: &'a [PathBuf],
    pub valid_emb: &'a Path,
    pub valid_labels: &'a [PathBuf],
    pub out: &'a Path,
    pub score: Option<(&'a Path, &'a Path)>,
    pub log: Option<&'a Path>,
    pub common: &'a Common,
}

pub fn train_head(a: HeadArgs) -> Result<()> {
    let cfg = load_config(a.common)?;
    let task = parse_task(a.task)?;
    let (tx, ty) = labeled_embeddings(a.emb, &read_label_files(a.labels)?, task)?;
    let (vx, vy) = labeled_embeddings(a.valid_emb, &read_label_files(a.valid_labels)?, task)?;
    let fit = fit_head(task.name(), &tx, &ty, &vx, &vy, cfg.head_hidden, &cfg.train)?;
    write_with(a.out, |w| save_head(w, task.name(), &fit))?;
    write_log(a.log, &fit.log)?;
    println!("best validation AUROC {} at epoch {}", fit.best_auroc, fit.best_epoch);
    let mut inputs = paths(&[a.labels, a.valid_labels]);
    inputs.extend([a.emb.to_path_buf(), a.valid_emb.to_path_buf()]);
    if let Some((emb, scores)) = a.score {
        let m = read_embedding_file(emb)?;
        // Reload so scoring uses exactly what was written.
        let (_, head, store) = load_head(BufReader::new(File::open(a.out)?))?;
        let z: Vec<f64> = head.logits(&store, &m.row_vectors())?.into_iter().map(sigmoid).collect();
        write_scores(scores, &m.rows, &z)?;
        inputs.push(emb.to_path_buf());
    }
    manifest(a.out, "train-head", &cfg, &inputs)
}

fn processed_labeled(paths: &[PathBuf], records: &[specfm::msio::LabelRecord], task: Task, cfg: &RunConfig) -> Result<(Vec<Spectrum>, Vec<ProcessedSpectrum>, Vec<u8>)> {
    let (spectra, y) = labeled_spectra(paths, records, task)?;
    let processed = preprocess_all(&spectra, &cfg.preprocess)?;
    Ok((spectra, processed, y))
}

pub struct E2eArgs<'a> {
    pub task: &'a str,
    pub train: &'a [PathBuf],
    pub valid: &'a [PathBuf],
    pub labels: &'a [PathBuf],
    pub layer_sweep: &'a [usize],
    pub out: &'a Path,
    pub test: &'a [PathBuf],
    pub scores: Option<&'a Path>,
    pub log: Option<&'a Path>,
    pub common: &'a Common,
}

pub fn train_e2e(a: E2eArgs) -> Result<()> {
    let cfg = load_config(a.common)?;
    let task = parse_task(a.task)?;
    let records = read_label_files(a.labels)?;
    let (_, train, ty) = processed_labeled(a.train, &records, task, &cfg)?;
    let (_, valid, vy) = processed_labeled(a.valid, &records, task, &cfg)?;
    let opts = E2eOptions {
        layer_sweep: a.layer_sweep.to_vec(),
        freeze_encoder: false,
    };
    let fit = train_end_to_end(task.name(), &train, &ty, &valid, &vy, &cfg.encoder, cfg.head_hidden, &cfg.train, &opts)?;
    save_model(a.out, &fit.model)?;
    write_log(a.log, &fit.log)?;
    for (layers, auc) in &fit.sweep {
        println!("n_layers {layers}: best validation AUROC {auc}");
    }
    if let Some(scores) = a.scores {
        let test = read_all_spectra(a.test)?;
        let p = fit.model.predict(task.name(), &preprocess_all(&test, &cfg.preprocess)?)?;
        write_scores(scores, &keys(&test), &p)?;
    }
    manifest(a.out, "train-e2e", &cfg, &paths(&[a.train, a.valid, a.labels, a.test]))
}

pub struct BaselineArgs<'a> {
    pub kind: BaselineKind,
    pub task: &'a str,
    pub train: &'a [PathBuf],
    pub valid: &'a [PathBuf],
    pub test: &'a [PathBuf],
    pub labels: &'a [PathBuf],
    pub scores: &'a Path,
    pub out: Option<&'a Path>,
    pub oxonium_table: Option<&'a Path>,
    pub sweep: &'a [usize],
    pub sweep_out: Option<&'a Path>,
    pub common: &'a Common,
}

pub fn train_baseline(a: BaselineArgs) -> Result<()> {
    let cfg = load_config(a.common)?;
    let task = parse_task(a.task)?;
    let table = match a.oxonium_table {
        Some(p) => OxoniumTable::from_tsv(BufReader::new(File::open(p)?))?,
        None => OxoniumTable::default(),
    };
    let test = read_all_spectra(a.test)?;
    let mut inputs = paths(&[a.train, a.valid, a.test, a.labels]);
    inputs.extend(a.oxonium_table.map(Path::to_path_buf));
    let scores = if a.kind == BaselineKind::OxoniumRatio {
        let none = Split { spectra: &[], labels: &[] };
        oxonium_baselines(OxoniumMode::Ratio, none, none, &test, &table, &cfg.preprocess, &cfg.gbdt)?
    } else {
        if a.train.is_empty() || a.valid.is_empty() {
            return Err(Error::Config("fitted baselines need --train, --valid and --labels".into()));
        }
        let records = read_label_files(a.labels)?;
        let (tr, ty) = labeled_spectra(a.train, &records, task)?;
        let (va, vy) = labeled_spectra(a.valid, &records, task)?;
        let train = Split { spectra: &tr, labels: &ty };
        let valid = Split { spectra: &va, labels: &vy };
        let (model, scores) = match a.kind {
            BaselineKind::Binned => binned_baseline(train, valid, &test, &cfg.preprocess, &cfg.gbdt)?,
            _ => {
                let m = gbdt_fit(
                    &oxonium_features(&tr, &table, &cfg.preprocess),
                    &ty,
                    &oxonium_features(&va, &table, &cfg.preprocess),
                    &vy,
                    &cfg.gbdt,
                )?;
                let s = m.predict(&oxonium_features(&test, &table, &cfg.preprocess));
                (m, s)
            }
        };
        println!("{} trees kept of {} rounds", model.trees.len(), model.rounds_trained);
        if let Some(out) = a.out {
            write_with(out, |w| save_gbdt(w, &model))?;
        }
        if let Some(sweep_out) = a.sweep_out {
            if a.kind != BaselineKind::Binned {
                return Err(Error::Config("--sweep applies to the binned baseline only".into()));
            }
            let (te, tey) = labeled_spectra(a.test, &records, task)?;
            let rows = bin_sweep(train, valid, Split { spectra: &te, labels: &tey }, a.sweep, &cfg.preprocess, &cfg.gbdt)?;
            write_with(sweep_out, |w| write_bin_sweep(w, &rows))?;
        }
        scores
    };
    write_scores(a.scores, &keys(&test), &scores)?;
    manifest(a.scores, "train-baseline", &cfg, &inputs)
}

pub struct MultitaskArgs<'a> {
    pub checkpoint: &'a Path,
    pub tasks: &'a [(&'a str, PathBuf, PathBuf)],
    pub labels: &'a [PathBuf],
    pub denovo: &'a Path,
    pub denovo_valid: Option<&'a Path>,
    pub peptides: &'a [PathBuf],
    pub out: &'a Path,
    pub log: Option<&'a Path>,
    pub common: &'a Common,
}

pub fn finetune(a: MultitaskArgs) -> Result<()> {
    let cfg = load_config(a.common)?;
    if a.tasks.is_empty() {
        return Err(Error::Config("give at least one of --quality, --chimera, --phospho, --glyco".into()));
    }
    let model = load_model(a.checkpoint)?;
    let records = read_label_files(a.labels)?;
    let mut owned = Vec::new();
    for (name, train, valid) in a.tasks {
        let task = parse_task(name)?;
        let (_, tr, ty) = processed_labeled(std::slice::from_ref(train), &records, task, &cfg)?;
        let (_, va, vy) = processed_labeled(std::slice::from_ref(valid), &records, task, &cfg)?;
        owned.push((task.name(), tr, ty, va, vy));
    }
    let tasks: Vec<TaskData> = owned
        .iter()
        .map(|(name, tr, ty, va, vy)| TaskData {
            name,
            train: tr,
            train_labels: ty,
            valid: va,
            valid_labels: vy,
        })
        .collect();
    let denovo_train = denovo_examples(&[a.denovo.to_path_buf()], a.peptides, &cfg.preprocess)?;
    let denovo_valid_paths: Vec<PathBuf> = a.denovo_valid.map(Path::to_path_buf).into_iter().collect();
    let denovo_valid = denovo_examples(&denovo_valid_paths, a.peptides, &cfg.preprocess)?;
    let opts = MultitaskOptions {
        task_weights: cfg.task_weights.clone(),
        denovo_weight: cfg.denovo_weight,
        frozen_prefixes: Vec::new(),
        head_seed: cfg.train.seed,
    };
    let data = MultitaskData {
        tasks: &tasks,
        denovo_train: &denovo_train,
        denovo_valid: &denovo_valid,
    };
    let fit = finetune_multitask(&model, data, &cfg.train, &opts)?;
    save_model(a.out, &fit.model)?;
    write_log(a.log, &fit.log)?;
    println!(
        "selected step {} (mean validation loss {} vs {} at step 0)",
        fit.selected_step, fit.selected_mean_loss, fit.step0_mean_loss
    );
    let mut inputs = vec![a.checkpoint.to_path_buf(), a.denovo.to_path_buf()];
    inputs.extend(denovo_valid_paths);
    for (_, t, v) in a.tasks {
        inputs.extend([t.clone(), v.clone()]);
    }
    manifest(a.out, "finetune-multitask", &cfg, &paths(&[&inputs, a.labels, a.peptides]))
}

pub fn eval(task: Option<&str>, scores: &Path, labels: &[PathBuf], json: &Path, roc: Option<&Path>, pr: Option<&Path>, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let records = read_label_files(labels)?;
    let task = match task {
        Some(t) => parse_task(t)?,
        None => {
            let mut tasks: Vec<Task> = records.iter().map(|r| r.task).collect();
            tasks.sort();
            tasks.dedup();
            match tasks[..] {
                [t] => t,
                _ => return Err(Error::Config("labels cover several tasks; choose one with --task".into())),
            }
        }
    };
    let index: std::collections::HashMap<(&str, &str), u8> = records
        .iter()
        .filter(|r| r.task == task)
        .map(|r| ((r.run_id.as_str(), r.scan_id.as_str()), r.label))
        .collect();
    let mut s = Vec::new();
    let mut y = Vec::new();
    for ((run, scan), score) in read_scores(scores)? {
        if let Some(&l) = index.get(&(run.as_str(), scan.as_str())) {
            s.push(score);
            y.push(l);
        }
    }
    if s.is_empty() {
        return Err(Error::DegenerateInput(format!("no scores match {task} labels")));
    }
    let report = MetricsReport::compute(task.name(), &s, &y)?;
    write_with(json, |w| {
        writeln!(w, "{}", report.to_json())?;
        Ok(())
    })?;
    if let Some(p) = roc {
        write_with(p, |w| write_roc_csv(w, &roc_points(&s, &y)?))?;
    }
    if let Some(p) = pr {
        write_with(p, |w| write_pr_csv(w, &pr_points(&s, &y)?))?;
    }
    println!("{task}: AUROC {} AUPR {} F1 {}", report.auroc, report.aupr, report.f1);
    let mut inputs = vec![scores.to_path_buf()];
    inputs.extend(labels.iter().cloned());
    manifest(json, "eval", &cfg, &inputs)
}

pub fn pca(emb: &Path, labels: &[PathBuf], task: Option<&str>, k: usize, out: &Path, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let m = read_embedding_file(emb)?;
    let rows: Vec<Vec<f64>> = m.row_vectors().into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
    let result = specfm::metrics::pca(&rows, k)?;
    let row_labels: Vec<Option<u8>> = match task {
        Some(t) if !labels.is_empty() => {
            let task = parse_task(t)?;
            let records = read_label_files(labels)?;
            let index: std::collections::HashMap<(String, String), u8> = records
                .into_iter()
                .filter(|r| r.task == task)
                .map(|r| ((r.run_id, r.scan_id), r.label))
                .collect();
            m.rows.iter().map(|key| index.get(key).copied()).collect()
        }
        _ => vec![None; m.n_rows()],
    };
    let scan_ids: Vec<String> = m.rows.iter().map(|(_, s)| s.clone()).collect();
    write_with(out, |w| write_pca_csv(w, &result, &scan_ids, &row_labels))?;
    let mut inputs = vec![emb.to_path_buf(), row_index_path(emb)];
    inputs.extend(labels.iter().cloned());
    manifest(out, "pca", &cfg, &inputs)
}

pub struct CurveArgs<'a> {
    pub task: &'a str,
    pub subsets: usize,
    pub train: &'a [PathBuf],
    pub valid: &'a [PathBuf],
    pub test: &'a [PathBuf],
    pub labels: &'a [PathBuf],
    pub checkpoint: Option<&'a Path>,
    pub methods: &'a [String],
    pub out: &'a Path,
    pub common: &'a Common,
}

pub fn learning_curve(a: CurveArgs) -> Result<()> {
    let cfg = load_config(a.common)?;
    let task = parse_task(a.task)?;
    if a.subsets == 0 {
        return Err(Error::Config("--subsets must be at least 1".into()));
    }
    let records = read_label_files(a.labels)?;
    let (tr_raw, tr, ty) = processed_labeled(a.train, &records, task, &cfg)?;
    let (va_raw, va, vy) = processed_labeled(a.valid, &records, task, &cfg)?;
    let (te_raw, te, tey) = processed_labeled(a.test, &records, task, &cfg)?;
    let pick = |idx: &[usize]| -> Vec<u8> { idx.iter().map(|&i| ty[i]).collect() };

    let foundation = match a.checkpoint {
        Some(p) if a.methods.iter().any(|m| m == "foundation") => {
            let model = load_model(p)?;
            Some((model.embed(&tr)?, model.embed(&va)?, model.embed(&te)?))
        }
        _ => None,
    };
    let foundation_fn = |idx: &[usize]| -> Result<f64> {
        let (etr, eva, ete) = foundation.as_ref().expect("checked above");
        let x: Vec<Vec<f32>> = idx.iter().map(|&i| etr[i].clone()).collect();
        let fit = fit_head(task.name(), &x, &pick(idx), eva, &vy, cfg.head_hidden, &cfg.train)?;
        auroc(&fit.head.logits(&fit.store, ete)?, &tey)
    };
    let scratch_fn = |idx: &[usize]| -> Result<f64> {
        let x: Vec<ProcessedSpectrum> = idx.iter().map(|&i| tr[i].clone()).collect();
        let fit = train_end_to_end(task.name(), &x, &pick(idx), &va, &vy, &cfg.encoder, cfg.head_hidden, &cfg.train, &E2eOptions::default())?;
        auroc(&fit.model.predict(task.name(), &te)?, &tey)
    };
    let binned_fn = |idx: &[usize]| -> Result<f64> {
        let x: Vec<Spectrum> = idx.iter().map(|&i| tr_raw[i].clone()).collect();
        let y = pick(idx);
        let (_, s) = binned_baseline(
            Split { spectra: &x, labels: &y },
            Split { spectra: &va_raw, labels: &vy },
            &te_raw,
            &cfg.preprocess,
            &cfg.gbdt,
        )?;
        auroc(&s, &tey)
    };
    type Method<'f> = (&'f str, &'f dyn Fn(&[usize]) -> Result<f64>);
    let mut methods: Vec<Method> = Vec::new();
    for m in a.methods {
        match m.as_str() {
            "foundation" => {
                if a.checkpoint.is_none() {
                    return Err(Error::Config("the foundation method needs --checkpoint".into()));
                }
                methods.push(("foundation", &foundation_fn));
            }
            "scratch" => methods.push(("scratch", &scratch_fn)),
            "binned" => methods.push(("binned", &binned_fn)),
            other => return Err(Error::Config(format!("unknown learning-curve method {other:?}"))),
        }
    }
    let rows = run_curve(&ty, a.subsets, cfg.train.seed, &methods)?;
    let names: Vec<&str> = methods.iter().map(|(n, _)| *n).collect();
    write_with(a.out, |w| write_learning_curve(w, &names, &rows))?;
    let ckpt: Vec<PathBuf> = a.checkpoint.map(Path::to_path_buf).into_iter().collect();
    manifest(a.out, "learning-curve", &cfg, &paths(&[a.train, a.valid, a.test, a.labels, &ckpt]))
}
