//! Ranking metrics, PCA of embeddings and the nested-subset learning curve.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DegenerateInput(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score {s}")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels(format!("{pos} positives and {neg} negatives")));
    }
    Ok((pos, neg))
}

/// Groups of (score, positives, negatives) by distinct score, descending.
fn tie_groups(scores: &[f64], labels: &[u8]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for i in order {
        let (p, n) = if labels[i] == 1 { (1, 0) } else { (0, 1) };
        match groups.last_mut() {
            Some(g) if g.0 == scores[i] => {
                g.1 += p;
                g.2 += n;
            }
            _ => groups.push((scores[i], p, n)),
        }
    }
    groups
}

/// Probability that a random positive outscores a random negative, ties half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    // Walk from the highest score down; negatives above a positive are losses.
    let mut neg_above = 0usize;
    let mut wins2 = 0u128;
    for (_, p, n) in tie_groups(scores, labels) {
        let below = neg - neg_above - n;
        wins2 += (p as u128) * (2 * below as u128 + n as u128);
        neg_above += n;
    }
    Ok(wins2 as f64 / (2.0 * pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

/// `(fpr, tpr)` at every distinct threshold, from `(0, 0)` to `(1, 1)`.
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<Vec<CurvePoint>> {
    let (pos, neg) = check(scores, labels)?;
    let mut out = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 0.0,
    }];
    let (mut tp, mut fp) = (0, 0);
    for (t, p, n) in tie_groups(scores, labels) {
        tp += p;
        fp += n;
        out.push(CurvePoint {
            threshold: t,
            x: fp as f64 / neg as f64,
            y: tp as f64 / pos as f64,
        });
    }
    Ok(out)
}

/// `(recall, precision)` at every distinct threshold, descending.
pub fn pr_points(scores: &[f64], labels: &[u8]) -> Result<Vec<CurvePoint>> {
    let (pos, _) = check(scores, labels)?;
    let (mut tp, mut fp) = (0, 0);
    Ok(tie_groups(scores, labels)
        .into_iter()
        .map(|(t, p, n)| {
            tp += p;
            fp += n;
            CurvePoint {
                threshold: t,
                x: tp as f64 / pos as f64,
                y: tp as f64 / (tp + fp) as f64,
            }
        })
        .collect())
}

/// Average precision: Σ (R_i − R_{i−1}) · P_i over descending thresholds.
pub fn aupr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let mut prev = 0.0;
    let mut ap = 0.0;
    for pt in pr_points(scores, labels)? {
        ap += (pt.x - prev) * pt.y;
        prev = pt.x;
    }
    Ok(ap)
}

/// F1 of `score >= threshold`; 0 when nothing is predicted or nothing is true.
pub fn f1_at(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fnn) as f64;
    2.0 * p * r / (p + r)
}

pub const F1_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub task: String,
    pub n: usize,
    pub n_pos: usize,
    pub auroc: f64,
    pub aupr: f64,
    pub f1: f64,
    pub threshold: f64,
}

impl MetricsReport {
    pub fn compute(task: &str, scores: &[f64], labels: &[u8]) -> Result<Self> {
        Ok(Self {
            task: task.to_string(),
            n: scores.len(),
            n_pos: labels.iter().filter(|&&l| l == 1).count(),
            auroc: auroc(scores, labels)?,
            aupr: aupr(scores, labels)?,
            f1: f1_at(scores, labels, F1_THRESHOLD),
            threshold: F1_THRESHOLD,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

pub fn write_roc_csv<W: Write>(mut w: W, points: &[CurvePoint]) -> Result<()> {
    writeln!(w, "threshold,fpr,tpr")?;
    for p in points {
        writeln!(w, "{},{},{}", p.threshold, p.x, p.y)?;
    }
    Ok(())
}

pub fn write_pr_csv<W: Write>(mut w: W, points: &[CurvePoint]) -> Result<()> {
    writeln!(w, "threshold,recall,precision")?;
    for p in points {
        writeln!(w, "{},{},{}", p.threshold, p.x, p.y)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PcaResult {
    /// `k` unit-norm components, each of length `dim`.
    pub components: Vec<Vec<f64>>,
    /// Per-row projections onto the components, `n × k`.
    pub projections: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub variance_explained: Vec<f64>,
}

const PCA_TOL: f64 = 1e-12;
const PCA_MAX_ITER: usize = 200_000;

/// Principal components of the sample covariance by deflated power iteration.
pub fn pca(rows: &[Vec<f64>], k: usize) -> Result<PcaResult> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::DegenerateInput(format!("PCA needs at least 2 rows, got {n}")));
    }
    let dim = rows[0].len();
    if k > dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::DegenerateInput(format!("PCA with k = {k} over rows of width {dim}")));
    }
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![0.0; dim * dim];
    for r in &centered {
        for i in 0..dim {
            for j in i..dim {
                cov[i * dim + j] += r[i] * r[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / (n - 1) as f64;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    let total: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();

    let mut components = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut work = cov.clone();
    for c in 0..k {
        let (lambda, v) = power_iteration(&work, dim, c);
        for i in 0..dim {
            for j in 0..dim {
                work[i * dim + j] -= lambda * v[i] * v[j];
            }
        }
        eigenvalues.push(lambda.max(0.0));
        components.push(v);
    }
    let variance_explained = eigenvalues
        .iter()
        .map(|&l| if total > 0.0 { (l / total).clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    let projections = centered
        .iter()
        .map(|r| components.iter().map(|c| dot(r, c)).collect())
        .collect();
    Ok(PcaResult {
        components,
        projections,
        eigenvalues,
        variance_explained,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn power_iteration(m: &[f64], dim: usize, salt: usize) -> (f64, Vec<f64>) {
    // Deterministic start with every coordinate non-zero.
    let mut v: Vec<f64> = (0..dim).map(|i| 1.0 + ((i + salt) % 7) as f64 * 0.1).collect();
    normalize(&mut v);
    let mut next = vec![0.0; dim];
    for _ in 0..PCA_MAX_ITER {
        for i in 0..dim {
            next[i] = dot(&m[i * dim..(i + 1) * dim], &v);
        }
        if normalize(&mut next) == 0.0 {
            return (0.0, v);
        }
        let delta = v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut v, &mut next);
        if delta < PCA_TOL {
            break;
        }
    }
    let mv: Vec<f64> = (0..dim).map(|i| dot(&m[i * dim..(i + 1) * dim], &v)).collect();
    (dot(&v, &mv), v)
}

/// Writes `scan_id,pc1,...,pck,label` preceded by a comment with explained variance.
pub fn write_pca_csv<W: Write>(mut w: W, result: &PcaResult, scan_ids: &[String], labels: &[Option<u8>]) -> Result<()> {
    let k = result.components.len();
    let pct: Vec<String> = result
        .variance_explained
        .iter()
        .enumerate()
        .map(|(i, v)| format!("pc{}={:.2}%", i + 1, v * 100.0))
        .collect();
    writeln!(w, "# variance_explained {}", pct.join(" "))?;
    let cols: Vec<String> = (1..=k).map(|i| format!("pc{i}")).collect();
    writeln!(w, "scan_id,{},label", cols.join(","))?;
    for (i, p) in result.projections.iter().enumerate() {
        let label = labels.get(i).copied().flatten().map(|l| l.to_string()).unwrap_or_default();
        let vals: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{},{}", scan_ids[i], vals.join(","), label)?;
    }
    Ok(())
}

/// Nested training subsets: a seed-shuffled index list cut at sizes
/// `n, n/2, n/4, ...`, returned smallest first.
pub fn nested_subsets(n: usize, n_subsets: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut sizes: Vec<usize> = (0..n_subsets).map(|i| n >> i).collect();
    sizes.reverse();
    sizes.into_iter().map(|s| idx[..s].to_vec()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub train_size: usize,
    pub auroc: Vec<f64>,
}

/// Trains every method on each nested subset of the training labels and
/// collects the returned AUROCs.
pub fn learning_curve(
    labels: &[u8],
    n_subsets: usize,
    seed: u64,
    methods: &[(&str, &dyn Fn(&[usize]) -> Result<f64>)],
) -> Result<Vec<CurveRow>> {
    let subsets = nested_subsets(labels.len(), n_subsets, seed);
    if let Some(smallest) = subsets.first() {
        let pos = smallest.iter().filter(|&&i| labels[i] == 1).count();
        if pos == 0 || pos == smallest.len() {
            return Err(Error::DegenerateLabels(format!(
                "smallest learning-curve subset ({} spectra) has a single class",
                smallest.len()
            )));
        }
    }
    subsets
        .iter()
        .map(|s| {
            let auroc = methods.iter().map(|(_, m)| m(s)).collect::<Result<_>>()?;
            Ok(CurveRow { train_size: s.len(), auroc })
        })
        .collect()
}

pub fn write_learning_curve<W: Write>(mut w: W, method_names: &[&str], rows: &[CurveRow]) -> Result<()> {
    write!(w, "train_size")?;
    for m in method_names {
        write!(w, "\t{m}")?;
    }
    writeln!(w)?;
    for r in rows {
        write!(w, "{}", r.train_size)?;
        for a in &r.auroc {
            write!(w, "\t{a}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_auroc(s: &[f64], l: &[u8]) -> f64 {
        let mut acc = 0.0;
        let mut pairs = 0.0;
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

    #[test]
    fn hand_cases() {
        assert_eq!(auroc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.8, 0.6, 0.4, 0.2], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn matches_pairwise_oracle_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.gen_range(2..=500);
            let levels = rng.gen_range(1..20);
            let s: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / 7.0).collect();
            let mut l: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            l[0] = 0;
            l[1] = 1;
            assert!((auroc(&s, &l).unwrap() - brute_auroc(&s, &l)).abs() < 1e-12);
        }
    }

    #[test]
    fn roc_and_pr_shapes() {
        let roc = roc_points(&[0.9, 0.7, 0.2], &[1, 1, 0]).unwrap();
        assert_eq!((roc[0].x, roc[0].y), (0.0, 0.0));
        assert_eq!((roc.last().unwrap().x, roc.last().unwrap().y), (1.0, 1.0));
        assert!(roc.iter().any(|p| p.x == 0.0 && p.y == 1.0));
        assert_eq!(aupr(&[0.9, 0.8], &[1, 0]).unwrap(), 1.0);
        assert_eq!(aupr(&[0.9, 0.8], &[0, 1]).unwrap(), 0.5);
        assert!(matches!(aupr(&[0.9, 0.8], &[0, 0]), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn aupr_null_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s: Vec<f64> = (0..5000).map(|_| rng.gen()).collect();
        let l: Vec<u8> = (0..5000).map(|_| u8::from(rng.gen_bool(0.1))).collect();
        assert!((aupr(&s, &l).unwrap() - 0.10).abs() < 0.03);
    }

    #[test]
    fn f1_cases() {
        assert_eq!(f1_at(&[0.9, 0.1], &[1, 0], 0.5), 1.0);
        let f = f1_at(&[0.9, 0.8, 0.7, 0.1], &[1, 1, 0, 1], 0.5);
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1_at(&[0.1, 0.2], &[1, 0], 0.5), 0.0);
    }

    #[test]
    fn metrics_json_fields() {
        let r = MetricsReport::compute("phospho", &[0.9, 0.2, 0.6], &[1, 0, 1]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["task", "n", "n_pos", "auroc", "aupr", "f1", "threshold"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["n_pos"], 2);
    }

    #[test]
    fn pca_rank_one_and_isotropic() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let r = pca(&rows, 2).unwrap();
        assert!((r.variance_explained[0] - 1.0).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let iso: Vec<Vec<f64>> = (0..10000)
            .map(|_| {
                // Box-Muller
                let (u, v): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen());
                let rad = (-2.0 * u.ln()).sqrt();
                let t = 2.0 * std::f64::consts::PI * v;
                vec![rad * t.cos(), rad * t.sin()]
            })
            .collect();
        let r = pca(&iso, 2).unwrap();
        for v in &r.variance_explained {
            assert!((v - 0.5).abs() < 0.03);
        }
        assert!(matches!(pca(&rows[..1], 1), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn pca_csv_has_variance_header() {
        let rows = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]];
        let r = pca(&rows, 2).unwrap();
        let mut out = Vec::new();
        let ids: Vec<String> = (0..3).map(|i| format!("scan={i}")).collect();
        write_pca_csv(&mut out, &r, &ids, &[Some(1), None, Some(0)]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# variance_explained pc1="));
        assert_eq!(lines.next().unwrap(), "scan_id,pc1,pc2,label");
        assert!(lines.nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn nested_halving() {
        let subsets = nested_subsets(1000, 10, 4);
        let sizes: Vec<usize> = subsets.iter().map(|s| s.len()).collect();
        assert_eq!(sizes, vec![1, 3, 7, 15, 31, 62, 125, 250, 500, 1000]);
        for w in subsets.windows(2) {
            assert!(w[0].iter().all(|i| w[1].contains(i)));
        }
        let labels: Vec<u8> = (0..1000).map(|i| (i % 2) as u8).collect();
        let m = |s: &[usize]| Ok(s.len() as f64);
        assert!(matches!(
            learning_curve(&labels, 10, 4, &[("size", &m)]),
            Err(Error::DegenerateLabels(_))
        ));
        let rows = learning_curve(&labels, 4, 4, &[("size", &m)]).unwrap();
        assert_eq!(rows[0].train_size, 125);
        assert_eq!(rows[0].auroc, vec![125.0]);
    }

    proptest! {
        #[test]
        fn flip_complement(s in prop::collection::vec(0u8..10, 2..60), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scores: Vec<f64> = s.iter().map(|&x| x as f64).collect();
            let mut labels: Vec<u8> = scores.iter().map(|_| rng.gen_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
            prop_assert_eq!(auroc(&scores, &labels).unwrap() + auroc(&scores, &flipped).unwrap(), 1.0);
            let warped: Vec<f64> = scores.iter().map(|x| (x * 0.3).exp()).collect();
            prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&warped, &labels).unwrap());
        }
    }
}
