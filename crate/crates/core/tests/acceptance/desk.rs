use std::time::{Duration, Instant};

use specfm::baselines::{
    bin_sweep, binned_baseline, oxonium_baselines, save_gbdt, write_bin_sweep, GbdtConfig, OxoniumMode, Split,
};
use specfm::encoder::EncoderConfig;
use specfm::metrics::{
    auroc, learning_curve, pca, pr_points, roc_points, write_learning_curve, write_pca_csv, write_pr_csv, write_roc_csv, MetricsReport,
};
use specfm::model::{Model, ModelConfig};
use specfm::msio::{write_embeddings, write_labels, write_mgf, write_peptides, write_row_index, EmbeddingMatrix, Spectrum};
use specfm::preprocess::{preprocess_spectrum, OxoniumTable, PreprocessConfig};
use specfm::synthgen::{gen_dataset, label_records, peptide_records, write_provenance, SynthConfig, SynthTask};
use specfm::train::{
    finetune_multitask, pretrain_denovo, save_head, train_end_to_end, train_head, DenovoExample, E2eOptions, MultitaskData,
    MultitaskOptions, TaskData, TrainConfig,
};

use crate::support::{denovo, labeled, Labeled, Shared, PRETRAIN_BUDGET};
use crate::Outcome;

fn split(d: &Labeled) -> Split<'_> {
    Split { spectra: &d.raw, labels: &d.labels }
}

fn head_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        batch_size: 32,
        max_epochs: 200,
        patience_epochs: 5,
        seed,
        ..Default::default()
    }
}

/// Frozen-encoder head: test AUROC.
fn frozen_auroc(model: &Model, task: &str, train: &Labeled, valid: &Labeled, test: &Labeled, seed: u64) -> f64 {
    let e = |d: &Labeled| model.embed(&d.spectra).unwrap();
    let hidden = model.config.encoder.d_model;
    let fit = train_head(task, &e(train), &train.labels, &e(valid), &valid.labels, hidden, &head_config(seed)).unwrap();
    auroc(&fit.head.logits(&fit.store, &e(test)).unwrap(), &test.labels).unwrap()
}

fn scratch_auroc(task: &str, train: &Labeled, valid: &Labeled, test: &Labeled, seed: u64) -> f64 {
    let enc = EncoderConfig::default();
    let cfg = TrainConfig {
        lr: 1e-4,
        max_epochs: 60,
        ..head_config(seed)
    };
    let fit = train_end_to_end(task, &train.spectra, &train.labels, &valid.spectra, &valid.labels, &enc, enc.d_model, &cfg, &E2eOptions::default())
        .unwrap();
    auroc(&fit.model.predict(task, &test.spectra).unwrap(), &test.labels).unwrap()
}

fn binned_auroc(train: &Labeled, valid: &Labeled, test: &Labeled) -> f64 {
    let (_, scores) = binned_baseline(split(train), split(valid), &test.raw, &PreprocessConfig::default(), &GbdtConfig::default()).unwrap();
    auroc(&scores, &test.labels).unwrap()
}

pub fn foundation_vs_scratch(shared: &mut Shared) -> Outcome {
    let pre = shared.pretrained();
    let mut rows = Vec::new();
    for seed in 0..3u64 {
        let train = labeled(SynthTask::Phospho, 500, 500 + seed);
        let valid = labeled(SynthTask::Phospho, 500, 600 + seed);
        let test = labeled(SynthTask::Phospho, 2000, 700 + seed);
        let f = frozen_auroc(&pre.model, "phospho", &train, &valid, &test, seed);
        let s = scratch_auroc("phospho", &train, &valid, &test, seed);
        let b = binned_auroc(&train, &valid, &test);
        rows.push([f, s, b]);
    }
    let mean = |k: usize| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;
    let (f, s, b) = (mean(0), mean(1), mean(2));
    let in_budget = pre.took <= PRETRAIN_BUDGET;
    let gap = f - s;
    let order = if f > b && s > b { "both above binned" } else { "not both above binned" };
    Outcome::new(
        gap > 0.0 && in_budget,
        format!(
            "frozen {f:.4} scratch {s:.4} binned {b:.4} gap {gap:+.4} ({order}); pretrain {:.0}s, denovo val loss {:.3} -> {:.3}",
            pre.took.as_secs_f64(),
            pre.first_loss,
            pre.last_loss
        ),
    )
}

fn task_data<'a>(name: &'a str, train: &'a Labeled, valid: &'a Labeled) -> TaskData<'a> {
    TaskData {
        name,
        train: &train.spectra,
        train_labels: &train.labels,
        valid: &valid.spectra,
        valid_labels: &valid.labels,
    }
}

pub fn multitask(shared: &mut Shared) -> Outcome {
    let pre = shared.pretrained().model.clone();
    let tasks = [(SynthTask::Quality, "quality"), (SynthTask::Chimera, "chimera"), (SynthTask::Phospho, "phospho")];
    let sets: Vec<[Labeled; 4]> = tasks
        .iter()
        .enumerate()
        .map(|(k, (t, _))| {
            let base = 800 + 10 * k as u64;
            // Fine-tuning train/valid, then head-probe train and test.
            [labeled(*t, 8000, base), labeled(*t, 1000, base + 1), labeled(*t, 2000, base + 2), labeled(*t, 2000, base + 3)]
        })
        .collect();
    let task_data: Vec<TaskData> = tasks.iter().zip(&sets).map(|((_, n), s)| task_data(n, &s[0], &s[1])).collect();
    let dn_train = denovo(8000, 890);
    let dn_valid = denovo(200, 891);
    let steps = 3000;
    let cfg = TrainConfig {
        lr: 1e-4,
        batch_size: 16,
        warmup_steps: 100,
        cosine_half_period: steps - 100,
        max_steps: steps,
        validate_every: 500,
        seed: 5,
        ..Default::default()
    };
    let data = MultitaskData {
        tasks: &task_data,
        denovo_train: &dn_train,
        denovo_valid: &dn_valid,
    };
    let start = Instant::now();
    let fit = finetune_multitask(&pre, data, &cfg, &MultitaskOptions::default()).unwrap();
    let took = start.elapsed();
    let mut ok = fit.selected_mean_loss <= fit.step0_mean_loss && took <= Duration::from_secs(20 * 60);
    let mut parts = Vec::new();
    for ((_, name), s) in tasks.iter().zip(&sets) {
        let before = frozen_auroc(&pre, name, &s[2], &s[1], &s[3], 3);
        let after = frozen_auroc(&fit.model, name, &s[2], &s[1], &s[3], 3);
        ok &= after >= before - 0.01;
        parts.push(format!("{name} {before:.4} -> {after:.4}"));
    }
    Outcome::new(
        ok,
        format!(
            "{}; selected step {} mean val loss {:.4} (step 0 {:.4}); fine-tune {:.0}s",
            parts.join(", "),
            fit.selected_step,
            fit.selected_mean_loss,
            fit.step0_mean_loss,
            took.as_secs_f64()
        ),
    )
}

pub fn glyco_baselines(_: &mut Shared) -> Outcome {
    let all = labeled(SynthTask::Glyco, 5000, 77);
    let cut = |a: usize, b: usize| Labeled {
        raw: all.raw[a..b].to_vec(),
        spectra: Vec::new(),
        labels: all.labels[a..b].to_vec(),
    };
    let (train, valid, test) = (cut(0, 3000), cut(3000, 4000), cut(4000, 5000));
    let rate = all.labels.iter().filter(|&&l| l == 1).count() as f64 / 5000.0;
    let table = OxoniumTable::default();
    let pcfg = PreprocessConfig::default();
    let gcfg = GbdtConfig::default();
    let score = |mode| {
        let s = oxonium_baselines(mode, split(&train), split(&valid), &test.raw, &table, &pcfg, &gcfg).unwrap();
        auroc(&s, &test.labels).unwrap()
    };
    let ratio = score(OxoniumMode::Ratio);
    let gbdt = score(OxoniumMode::Gbdt54);
    Outcome::new(
        ratio > 0.95 && gbdt >= ratio,
        format!("ratio {ratio:.4}, gbdt54 {gbdt:.4} on 1000 held-out spectra; positive rate {rate:.3}"),
    )
}

/// Every writer's bytes from a small end-to-end run.
fn pipeline_outputs() -> Vec<(&'static str, Vec<u8>)> {
    let mut out = Vec::new();
    let records = gen_dataset(&SynthConfig::new(SynthTask::Phospho, 300, 31)).unwrap();
    let raw: Vec<Spectrum> = records.iter().map(|r| r.spectrum.clone()).collect();
    let mut buf = Vec::new();
    write_mgf(&mut buf, &raw).unwrap();
    out.push(("mgf", buf));
    let mut buf = Vec::new();
    write_labels(&mut buf, &label_records(&records)).unwrap();
    out.push(("labels", buf));
    let mut buf = Vec::new();
    write_provenance(&mut buf, &records).unwrap();
    out.push(("provenance", buf));
    let dn = gen_dataset(&SynthConfig::new(SynthTask::Denovo, 100, 32)).unwrap();
    let mut buf = Vec::new();
    write_peptides(&mut buf, &peptide_records(&dn)).unwrap();
    out.push(("peptides", buf));

    let enc = EncoderConfig { d_model: 16, n_layers: 1, ff_dim: 32, ..Default::default() };
    let mut mc = ModelConfig::with_decoder(enc.clone());
    mc.head_hidden = 16;
    let mut model = Model::init(mc, 3).unwrap();
    let pcfg = PreprocessConfig::default();
    let dn: Vec<DenovoExample> = dn
        .into_iter()
        .map(|r| DenovoExample { spectrum: preprocess_spectrum(&r.spectrum, &pcfg).unwrap(), peptide: r.peptide })
        .collect();
    let tcfg = TrainConfig { batch_size: 4, warmup_steps: 5, max_steps: 30, validate_every: 10, seed: 2, ..Default::default() };
    pretrain_denovo(&mut model, &dn[..80], &dn[80..], &tcfg).unwrap();
    out.push(("checkpoint", model.to_bytes()));

    let data = labeled(SynthTask::Phospho, 300, 31);
    let (tr, va) = (0..200, 200..300);
    let emb = model.embed(&data.spectra).unwrap();
    let mut m = EmbeddingMatrix::new(16);
    for (r, e) in records.iter().zip(&emb) {
        m.push(&r.spectrum.run_id, &r.spectrum.scan_id, e).unwrap();
    }
    let (mut bin, mut idx) = (Vec::new(), Vec::new());
    write_embeddings(&mut bin, &m).unwrap();
    write_row_index(&mut idx, &m).unwrap();
    out.push(("embeddings", bin));
    out.push(("row index", idx));

    let hcfg = TrainConfig { max_epochs: 5, batch_size: 16, seed: 4, ..Default::default() };
    let fit = train_head("phospho", &emb[tr.clone()], &data.labels[tr.clone()], &emb[va.clone()], &data.labels[va.clone()], 16, &hcfg).unwrap();
    let mut buf = Vec::new();
    save_head(&mut buf, "phospho", &fit).unwrap();
    out.push(("head", buf));
    let scores = fit.head.logits(&fit.store, &emb[va.clone()]).unwrap();
    let yv = &data.labels[va.clone()];
    out.push(("metrics", MetricsReport::compute("phospho", &scores, yv).unwrap().to_json().into_bytes()));
    let mut buf = Vec::new();
    write_roc_csv(&mut buf, &roc_points(&scores, yv).unwrap()).unwrap();
    write_pr_csv(&mut buf, &pr_points(&scores, yv).unwrap()).unwrap();
    out.push(("curves", buf));

    let ecfg = TrainConfig { max_epochs: 2, batch_size: 16, seed: 4, ..Default::default() };
    let e2e = train_end_to_end(
        "phospho",
        &data.spectra[tr.clone()],
        &data.labels[tr.clone()],
        &data.spectra[va.clone()],
        yv,
        &enc,
        16,
        &ecfg,
        &E2eOptions::default(),
    )
    .unwrap();
    out.push(("e2e", e2e.model.to_bytes()));

    let tasks = [task_data("phospho", &data, &data)];
    let mcfg = TrainConfig { batch_size: 4, warmup_steps: 2, max_steps: 10, validate_every: 5, seed: 6, ..Default::default() };
    let mt = finetune_multitask(&model, MultitaskData { tasks: &tasks, denovo_train: &dn[..80], denovo_valid: &dn[80..] }, &mcfg, &MultitaskOptions::default())
        .unwrap();
    out.push(("multitask", mt.model.to_bytes()));

    let split_at = |r: std::ops::Range<usize>| Split { spectra: &raw[r.clone()], labels: &data.labels[r] };
    let (gbdt, _) = binned_baseline(split_at(tr.clone()), split_at(va.clone()), &raw, &pcfg, &GbdtConfig::default()).unwrap();
    let mut buf = Vec::new();
    save_gbdt(&mut buf, &gbdt).unwrap();
    out.push(("gbdt", buf));
    let sweep = bin_sweep(split_at(tr.clone()), split_at(va.clone()), Split { spectra: &raw[va.clone()], labels: yv }, &[10, 50], &pcfg, &GbdtConfig::default())
        .unwrap();
    let mut buf = Vec::new();
    write_bin_sweep(&mut buf, &sweep).unwrap();
    out.push(("bin sweep", buf));

    let rows: Vec<Vec<f64>> = emb.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    let p = pca(&rows, 2).unwrap();
    let ids: Vec<String> = records.iter().map(|r| r.spectrum.scan_id.clone()).collect();
    let labels: Vec<Option<u8>> = data.labels.iter().map(|&l| Some(l)).collect();
    let mut buf = Vec::new();
    write_pca_csv(&mut buf, &p, &ids, &labels).unwrap();
    out.push(("pca", buf));

    let head_auroc = |s: &[usize]| -> specfm::Result<f64> {
        let x: Vec<Vec<f32>> = s.iter().map(|&i| emb[i].clone()).collect();
        let y: Vec<u8> = s.iter().map(|&i| data.labels[i]).collect();
        Ok(train_head("phospho", &x, &y, &emb[va.clone()], yv, 16, &hcfg)?.best_auroc)
    };
    let curve = learning_curve(&data.labels[tr.clone()], 3, 9, &[("foundation", &head_auroc)]).unwrap();
    let mut buf = Vec::new();
    write_learning_curve(&mut buf, &["foundation"], &curve).unwrap();
    out.push(("learning curve", buf));
    out
}

pub fn determinism(_: &mut Shared) -> Outcome {
    let a = pipeline_outputs();
    let b = pipeline_outputs();
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0).collect();
    Outcome::new(
        differing.is_empty() && a.len() == b.len(),
        if differing.is_empty() {
            format!("{} outputs byte-identical across two runs", a.len())
        } else {
            format!("outputs differ: {}", differing.join(", "))
        },
    )
}
