use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specfm::baselines::{gbdt_fit, GbdtConfig, GbdtModel};
use specfm::chem::{fragment_mzs, peptide_mass, precursor_mz, Peptide};
use specfm::denovo::Precursor;
use specfm::encoder::EncoderConfig;
use specfm::metrics::{auroc, pca, write_pca_csv};
use specfm::model::{Model, ModelConfig};
use specfm::msio::{parse_mgf, parse_mzml, write_mgf, Peak, Spectrum};
use specfm::nn::{Gradients, Graph, Mat, ParamStore};
use specfm::preprocess::{bin_spectrum, PreprocessConfig, ProcessedSpectrum};
use specfm::train::{bce_smoothed, lr_at, pretrain_denovo, Adam, DenovoExample, TrainConfig};
use specfm::Error;

use crate::support::Shared;
use crate::Outcome;

#[path = "../gradcheck.rs"]
mod gradcheck;

fn brute_auroc(s: &[f64], l: &[u8]) -> f64 {
    let (mut acc, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if l[i] == 1 && l[j] == 0 {
                pairs += 1.0;
                acc += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    acc / pairs
}

pub fn auroc_oracle(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(2..=500);
        let levels = rng.gen_range(1..12);
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 * 0.3).collect();
        let mut l: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        l[0] = 0;
        l[1] = 1;
        worst = worst.max((auroc(&s, &l).unwrap() - brute_auroc(&s, &l)).abs());
    }
    let four = auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
    let ties = auroc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap();
    let s = [0.3, 0.9, 0.1, 0.9, 0.4, 0.2, 0.7];
    let l = [1, 0, 0, 1, 1, 0, 1];
    let flipped: Vec<f64> = s.iter().map(|v| -v).collect();
    let complement = auroc(&s, &l).unwrap() + auroc(&flipped, &l).unwrap();
    let pass = worst < 1e-12 && four == 0.75 && ties == 0.5 && complement == 1.0;
    Outcome::new(
        pass,
        format!("max |auroc - pairwise| {worst:.1e} over 200 instances; four-sample {four}, all-tie {ties}, flip sum {complement}"),
    )
}

pub fn gradient_check(_: &mut Shared) -> Outcome {
    let (worst, checked, at) = gradcheck::worst_relative_error();
    Outcome::new(worst < 1e-4, format!("{checked} scalars, worst relative error {worst:.2e} at {at}"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mzml").join(name)
}

fn hex_bits(field: &str) -> Vec<u64> {
    field.split(',').filter(|h| !h.is_empty()).map(|h| u64::from_str_radix(h, 16).unwrap()).collect()
}

fn mzml(name: &str) -> specfm::Result<Vec<Spectrum>> {
    parse_mzml(BufReader::new(File::open(fixture(name)).unwrap()))
}

pub fn parser_round_trips(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spectra: Vec<Spectrum> = (0..1000)
        .map(|i| {
            let peaks = (0..rng.gen_range(0..80))
                .map(|_| Peak::new(rng.gen_range(50.0..2500.0), rng.gen_range(0.0..1e7)))
                .collect();
            Spectrum::new("rt", format!("index={i}"), rng.gen_range(300.0..1800.0), rng.gen_range(0..5), peaks)
        })
        .collect();
    let mut text = Vec::new();
    write_mgf(&mut text, &spectra).unwrap();
    let mgf_ok = parse_mgf(&text[..], "rt").unwrap() == spectra;

    let expected = std::fs::read_to_string(fixture("expected.tsv")).unwrap();
    let mut exact = 0;
    let mut total = 0;
    for line in expected.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        total += 1;
        let Ok(parsed) = mzml(f[0]) else { continue };
        let Some(s) = parsed.iter().find(|s| s.scan_id == f[2]) else { continue };
        let mz: Vec<u64> = s.peaks.iter().map(|p| p.mz.to_bits()).collect();
        let it: Vec<u64> = s.peaks.iter().map(|p| p.intensity.to_bits()).collect();
        if s.run_id == f[1]
            && s.precursor_mz.to_bits() == hex_bits(f[3])[0]
            && s.precursor_charge.to_string() == f[4]
            && mz == hex_bits(f[5])
            && it == hex_bits(f[6])
        {
            exact += 1;
        }
    }
    let empty_ok = mzml("empty.mzML").is_ok_and(|v| v.len() == 1 && v[0].peaks.is_empty());
    let truncated_err = matches!(mzml("truncated.mzML"), Err(Error::Parse { .. }));
    Outcome::new(
        mgf_ok && exact == total && total == 7 && empty_ok && truncated_err,
        format!(
            "mgf 1000 spectra identical: {mgf_ok}; mzML bit-exact {exact}/{total}; zero-length arrays ok: {empty_ok}; truncated is a parse error: {truncated_err}"
        ),
    )
}

fn one_peak(mz: f64) -> Spectrum {
    Spectrum::new("b", "1", 500.0, 2, vec![Peak::new(mz, 1.0)])
}

pub fn binning_exactness(_: &mut Shared) -> Outcome {
    let cfg = PreprocessConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for i in 0..1000 {
        // Dyadic intensities sum without rounding in any order.
        let peaks: Vec<Peak> = (0..rng.gen_range(0..200))
            .map(|_| Peak::new(rng.gen_range(50.0..2600.0), rng.gen_range(0..1 << 20) as f64 / 1024.0))
            .collect();
        let want: f64 = peaks.iter().filter(|p| p.mz >= cfg.bin_lo && p.mz < cfg.bin_hi).map(|p| p.intensity).sum();
        let s = Spectrum::new("b", i.to_string(), 500.0, 2, peaks);
        if bin_spectrum(&s, &cfg).iter().sum::<f64>() != want {
            mismatches += 1;
        }
    }
    let at_lo = bin_spectrum(&one_peak(140.0), &cfg)[0] == 1.0;
    let below = bin_spectrum(&one_peak(139.99), &cfg).iter().all(|&v| v == 0.0);
    let at_hi = bin_spectrum(&one_peak(2000.0), &cfg).iter().all(|&v| v == 0.0);
    let width = cfg.bin_width();
    Outcome::new(
        mismatches == 0 && at_lo && below && at_hi && width == 18.6,
        format!("{mismatches}/1000 sum mismatches; 140.0 -> bin 0: {at_lo}; 139.99 dropped: {below}; 2000.0 dropped: {at_hi}; width {width}"),
    )
}

fn accuracy(m: &GbdtModel, x: &[Vec<f64>], y: &[u8]) -> f64 {
    let p = m.predict(x);
    p.iter().zip(y).filter(|(p, &y)| (**p > 0.5) == (y == 1)).count() as f64 / y.len() as f64
}

pub fn gbdt_correctness(_: &mut Shared) -> Outcome {
    let x: Vec<Vec<f64>> = (0..200).map(|i| vec![(i as f64 - 99.5) / 10.0]).collect();
    let y: Vec<u8> = x.iter().map(|r| u8::from(r[0] > 0.0)).collect();
    let five = GbdtConfig { max_rounds: 5, ..Default::default() };
    let sep = gbdt_fit(&x, &y, &[], &[], &five).unwrap();
    let sep_acc = accuracy(&sep, &x, &y);

    let mut xx = Vec::new();
    let mut xy = Vec::new();
    for _ in 0..50 {
        for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            xx.push(vec![a, b]);
            xy.push(u8::from((a == 1.0) != (b == 1.0)));
        }
    }
    let depth2 = GbdtConfig { max_depth: 2, max_rounds: 10, ..Default::default() };
    let stump = GbdtConfig { max_depth: 1, max_rounds: 1, ..Default::default() };
    let xor_deep = accuracy(&gbdt_fit(&xx, &xy, &[], &[], &depth2).unwrap(), &xx, &xy);
    let xor_stump = accuracy(&gbdt_fit(&xx, &xy, &[], &[], &stump).unwrap(), &xx, &xy);

    // Validation labels unrelated to the feature: AUROC never improves after round 1.
    let xv = vec![vec![5.0], vec![5.0], vec![-5.0], vec![-5.0]];
    let yv = vec![1, 0, 1, 0];
    let flat = gbdt_fit(&x, &y, &xv, &yv, &GbdtConfig::default()).unwrap();
    let best_round = flat.trees.len();
    let halted = flat.rounds_trained;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rx: Vec<Vec<f64>> = (0..300).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let ry: Vec<u8> = rx.iter().map(|r| u8::from(r[0] + 0.5 * r[1] * r[2] + rng.gen_range(-0.3..0.3) > 0.0)).collect();
    let cfg = GbdtConfig { max_rounds: 50, ..Default::default() };
    let a = gbdt_fit(&rx, &ry, &rx[..100], &ry[..100], &cfg).unwrap();
    let b = gbdt_fit(&rx, &ry, &rx[..100], &ry[..100], &cfg).unwrap();
    let deterministic = a.trees == b.trees && a.predict(&rx) == b.predict(&rx);

    let pass = sep.trees.len() <= 5 && sep_acc == 1.0 && xor_deep == 1.0 && xor_stump <= 0.75 && halted == best_round + 32 && deterministic;
    Outcome::new(
        pass,
        format!(
            "separable acc {sep_acc} in {} rounds; xor depth-2 {xor_deep}, depth-1 one round {xor_stump}; flat validation best {best_round} halted {halted}; deterministic {deterministic}",
            sep.trees.len()
        ),
    )
}

fn subspace_sin(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b * (b.transpose() * a)).svd(false, false).singular_values.max()
}

pub fn pca_correctness(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut sin, mut ortho, mut eig_err) = (0.0f64, 0.0f64, 0.0f64);
    let k = 3;
    for _ in 0..20 {
        let scales: Vec<f64> = (0..8).map(|j| 1.0 + j as f64 * 0.7).collect();
        let rows: Vec<Vec<f64>> = (0..50).map(|_| scales.iter().map(|s| rng.gen_range(-1.0..1.0) * s).collect()).collect();
        let got = pca(&rows, k).unwrap();
        let x = DMatrix::from_fn(50, 8, |i, j| rows[i][j]);
        let mean = x.row_mean();
        let c = DMatrix::from_fn(50, 8, |i, j| x[(i, j)] - mean[j]);
        let eig = SymmetricEigen::new(c.transpose() * &c / 49.0);
        let mut order: Vec<usize> = (0..8).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let want = DMatrix::from_fn(8, k, |i, c| eig.eigenvectors[(i, order[c])]);
        let have = DMatrix::from_fn(8, k, |i, c| got.components[c][i]);
        sin = sin.max(subspace_sin(&have, &want));
        let gram = have.transpose() * &have;
        ortho = ortho.max((gram - DMatrix::<f64>::identity(k, k)).abs().max());
        for c in 0..k {
            let e = eig.eigenvalues[order[c]];
            eig_err = eig_err.max((got.eigenvalues[c] - e).abs() / e);
        }
    }
    let dir = [0.5, -1.0, 2.0, 0.0, 1.5, 0.25, -0.75, 3.0];
    let rank1: Vec<Vec<f64>> = (0..50).map(|i| dir.iter().map(|d| d * (i as f64 - 20.0)).collect()).collect();
    let r = pca(&rank1, 2).unwrap();
    let full = (r.variance_explained[0] - 1.0).abs() < 1e-12;
    let mut csv = Vec::new();
    let ids: Vec<String> = (0..50).map(|i| i.to_string()).collect();
    write_pca_csv(&mut csv, &r, &ids, &vec![Some(1); 50]).unwrap();
    let header = String::from_utf8(csv).unwrap().starts_with("# variance_explained pc1=100.00%");
    Outcome::new(
        sin < 1e-6 && ortho < 1e-10 && eig_err < 1e-8 && full && header,
        format!("max subspace sin {sin:.1e}; orthonormality {ortho:.1e}; eigenvalue rel err {eig_err:.1e}; rank-1 100%: {full}; csv header: {header}"),
    )
}

pub fn closed_forms(_: &mut Shared) -> Outcome {
    let (peak, w, t) = (1e-4, 100, 3000);
    let sched = lr_at(w, peak, w, t) == peak
        && lr_at(w + t, peak, w, t).abs() < 1e-20
        && (lr_at(w + t / 2, peak, w, t) - peak / 2.0).abs() < 1e-18;

    let mut store = ParamStore::<f64>::new();
    let id = store.insert("p", Mat::filled(1, 1, 1.0));
    let mut adam = Adam::new(&store);
    let mut g = Gradients::new(1);
    g.accumulate_owned(id, Mat::filled(1, 1, 1.0));
    adam.step(&mut store, &g, 0.1, 0.0).unwrap();
    let p = store.get(id).data[0];

    let ln2 = (bce_smoothed(0.0, 1, 0.0) - std::f64::consts::LN_2).abs();
    let eps = 0.001;
    let z = 50.0;
    let floor = bce_smoothed(z, 1, eps);
    let floor_rel = (floor - eps * z).abs() / (eps * z);
    let pass = sched && (p - 0.9).abs() < 1e-8 && ln2 < 1e-15 && floor_rel < 0.01;
    Outcome::new(
        pass,
        format!("schedule points {sched}; adam 1.0 -> {p:.9}; |bce(0) - ln 2| {ln2:.1e}; saturated floor {floor:.5} vs eps*|z| {}", eps * z),
    )
}

fn overfit_example(seq: &str) -> DenovoExample {
    let peptide: Peptide = seq.parse().unwrap();
    let frags = fragment_mzs(&peptide, 1).unwrap();
    let n = frags.len() as f64;
    let mut peaks: Vec<(f64, f64)> = frags.iter().enumerate().map(|(i, f)| (f.mz, (0.3 + 0.7 * i as f64 / n) / n.sqrt())).collect();
    peaks.sort_by(|a, b| a.0.total_cmp(&b.0));
    DenovoExample {
        spectrum: ProcessedSpectrum {
            peaks,
            precursor_mz: precursor_mz(peptide_mass(&peptide).unwrap(), 2).unwrap(),
            precursor_charge: 2,
        },
        peptide,
    }
}

pub fn denovo_overfit(_: &mut Shared) -> Outcome {
    let ex = overfit_example("PEPTIDEK");
    let mut model = Model::init(ModelConfig::with_decoder(EncoderConfig::default()), 1).unwrap();
    let cfg = TrainConfig {
        lr: 1e-3,
        weight_decay: 0.0,
        batch_size: 1,
        warmup_steps: 0,
        cosine_half_period: 1_000_000,
        max_steps: 500,
        validate_every: 500,
        ..Default::default()
    };
    let fit = pretrain_denovo(&mut model, std::slice::from_ref(&ex), &[], &cfg).unwrap();
    let below = fit.step_losses.iter().position(|&l| l < 0.01);

    let pre = Precursor { mz: ex.spectrum.precursor_mz, charge: 2 };
    let dec = model.decoder.as_ref().unwrap();
    let mut g = Graph::inference(&model.store);
    let memory = model.encoder.forward_spectrum(&mut g, &ex.spectrum, None).unwrap().memory;
    let memory = g.value(memory).clone();
    let ids = dec.greedy_decode(&model.store, &memory, pre, 30).unwrap();
    let decoded = dec.vocab().detokenize(&ids);
    let recovered = decoded.as_ref() == Some(&ex.peptide);

    let mut store: ParamStore<f64> = model.store.cast();
    let (w, b) = dec.output_params();
    store.get_mut(w).data.fill(0.0);
    store.get_mut(b).data.fill(0.0);
    let mut g = Graph::new(&store);
    let enc = model.encoder.forward_spectrum(&mut g, &ex.spectrum, None).unwrap();
    let tokens = dec.vocab().tokenize(&ex.peptide).unwrap();
    let loss = dec.token_loss(&mut g, enc.memory, pre, &tokens, None).unwrap();
    let v = dec.vocab().size();
    let uniform_err = (g.scalar(loss) - (v as f64).ln()).abs();
    Outcome::new(
        below.is_some() && recovered && uniform_err < 1e-6,
        format!(
            "loss < 0.01 at step {}; greedy decode {}; uniform loss - ln {v} = {uniform_err:.1e}",
            below.map_or("never".to_string(), |s| (s + 1).to_string()),
            decoded.map_or("<none>".to_string(), |p| p.to_string())
        ),
    )
}
