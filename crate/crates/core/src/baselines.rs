//! Gradient-boosted decision trees with logistic loss, and the binned and
//! oxonium-ion baselines built on them.

use std::io::{Read, Write};

use crate::binio::Cursor;
use crate::error::{Error, Result};
use crate::metrics::auroc;
use crate::msio::Spectrum;
use crate::preprocess::{bin_spectrum, extract_oxonium, OxoniumTable, PreprocessConfig};
use crate::train::sigmoid;

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtConfig {
    pub max_depth: usize,
    pub eta: f64,
    pub lambda_l2: f64,
    pub min_child_weight: f64,
    pub max_rounds: usize,
    pub early_stopping_rounds: usize,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            max_depth: 6,
            eta: 0.3,
            lambda_l2: 1.0,
            min_child_weight: 1.0,
            max_rounds: 2000,
            early_stopping_rounds: 32,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::Config("gbdt.max_depth must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Config("gbdt.eta must be in (0, 1]".into()));
        }
        if !(self.lambda_l2 >= 0.0) || !(self.min_child_weight >= 0.0) {
            return Err(Error::Config("gbdt.lambda_l2 and min_child_weight must be non-negative".into()));
        }
        if self.early_stopping_rounds == 0 {
            return Err(Error::Config("gbdt.early_stopping_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

const LEAF: u32 = u32::MAX;

/// Flattened regression tree; node 0 is the root. Leaves have
/// `feature == LEAF`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    feature: Vec<u32>,
    threshold: Vec<f64>,
    left: Vec<u32>,
    right: Vec<u32>,
    value: Vec<f64>,
}

impl Tree {
    fn leaf(value: f64) -> Self {
        Self {
            feature: vec![LEAF],
            threshold: vec![0.0],
            left: vec![0],
            right: vec![0],
            value: vec![value],
        }
    }

    fn push_leaf(&mut self) -> u32 {
        self.feature.push(LEAF);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(0.0);
        (self.feature.len() - 1) as u32
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, n: usize) -> usize {
            if t.feature[n] == LEAF {
                0
            } else {
                1 + go(t, t.left[n] as usize).max(go(t, t.right[n] as usize))
            }
        }
        go(self, 0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut n = 0;
        while self.feature[n] != LEAF {
            n = if x[self.feature[n] as usize] < self.threshold[n] {
                self.left[n]
            } else {
                self.right[n]
            } as usize;
        }
        self.value[n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub config: GbdtConfig,
    pub n_features: usize,
    pub base_score: f64,
    pub trees: Vec<Tree>,
    /// Rounds fitted before early stopping (the model keeps `trees.len()`).
    pub rounds_trained: usize,
    /// Validation AUROC after each fitted round.
    pub valid_auroc: Vec<f64>,
}

impl GbdtModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.eval(x)).sum::<f64>()
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|x| sigmoid(self.margin(x))).collect()
    }
}

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[derive(Clone, Copy, Default)]
struct Scan {
    gl: f64,
    hl: f64,
    last: f64,
    seen: bool,
}

/// Builds one tree level by level with exact greedy split search.
fn build_tree(
    x: &[Vec<f64>],
    sorted: &[Vec<usize>],
    g: &[f64],
    h: &[f64],
    cfg: &GbdtConfig,
) -> Tree {
    let n = x.len();
    let n_features = sorted.len();
    let lambda = cfg.lambda_l2;
    let score = |gs: f64, hs: f64| gs * gs / (hs + lambda);
    let mut tree = Tree::leaf(0.0);
    // Node of each sample among the current frontier, or LEAF once settled.
    let mut node_of = vec![0u32; n];
    let mut frontier = vec![0u32];
    for depth in 0..=cfg.max_depth {
        let slot_of = |node: u32, frontier: &[u32]| frontier.binary_search(&node).ok();
        let mut gsum = vec![0.0; frontier.len()];
        let mut hsum = vec![0.0; frontier.len()];
        for i in 0..n {
            if let Some(s) = slot_of(node_of[i], &frontier).filter(|_| node_of[i] != LEAF) {
                gsum[s] += g[i];
                hsum[s] += h[i];
            }
        }
        let mut best: Vec<Option<Best>> = vec![None; frontier.len()];
        if depth < cfg.max_depth {
            for f in 0..n_features {
                let mut scan = vec![Scan::default(); frontier.len()];
                for &i in &sorted[f] {
                    if node_of[i] == LEAF {
                        continue;
                    }
                    let Some(s) = slot_of(node_of[i], &frontier) else { continue };
                    let v = x[i][f];
                    let st = &mut scan[s];
                    if st.seen && v > st.last {
                        let (gl, hl) = (st.gl, st.hl);
                        let (gr, hr) = (gsum[s] - gl, hsum[s] - hl);
                        if hl >= cfg.min_child_weight && hr >= cfg.min_child_weight {
                            let gain = score(gl, hl) + score(gr, hr) - score(gsum[s], hsum[s]);
                            if best[s].map_or(true, |b| gain > b.gain) {
                                let mut thr = st.last + (v - st.last) / 2.0;
                                if thr <= st.last {
                                    thr = v;
                                }
                                best[s] = Some(Best { gain, feature: f, threshold: thr });
                            }
                        }
                    }
                    st.gl += g[i];
                    st.hl += h[i];
                    st.last = v;
                    st.seen = true;
                }
            }
        }
        let mut next = Vec::new();
        let mut split_at = vec![None; frontier.len()];
        for (s, &node) in frontier.iter().enumerate() {
            match best[s] {
                Some(b) if b.gain >= 0.0 => {
                    let l = tree.push_leaf();
                    let r = tree.push_leaf();
                    let k = node as usize;
                    tree.feature[k] = b.feature as u32;
                    tree.threshold[k] = b.threshold;
                    tree.left[k] = l;
                    tree.right[k] = r;
                    next.push(l);
                    next.push(r);
                    split_at[s] = Some(b);
                }
                _ => {
                    tree.value[node as usize] = -gsum[s] / (hsum[s] + lambda) * cfg.eta;
                }
            }
        }
        for i in 0..n {
            if node_of[i] == LEAF {
                continue;
            }
            let Some(s) = slot_of(node_of[i], &frontier) else { continue };
            node_of[i] = match split_at[s] {
                Some(b) => {
                    let k = node_of[i] as usize;
                    if x[i][b.feature] < b.threshold {
                        tree.left[k]
                    } else {
                        tree.right[k]
                    }
                }
                None => LEAF,
            };
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    tree
}

fn check_matrix(x: &[Vec<f64>], y: &[u8], what: &str) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::DegenerateInput(format!("{what}: {} rows for {} labels", x.len(), y.len())));
    }
    let d = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::DegenerateInput(format!("{what}: ragged feature matrix")));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{what}: non-finite feature")));
    }
    Ok(d)
}

/// Logistic-loss boosting with early stopping on validation AUROC; the
/// returned model is truncated at its best validation round.
pub fn gbdt_fit(x: &[Vec<f64>], y: &[u8], xv: &[Vec<f64>], yv: &[u8], cfg: &GbdtConfig) -> Result<GbdtModel> {
    cfg.validate()?;
    let d = check_matrix(x, y, "training")?;
    check_matrix(xv, yv, "validation")?;
    if xv.iter().any(|r| r.len() != d) {
        return Err(Error::DegenerateInput("validation width differs from training".into()));
    }
    let pos = y.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::DegenerateLabels(format!("{pos} positives out of {}", y.len())));
    }
    let p_bar = pos as f64 / y.len() as f64;
    let base_score = (p_bar / (1.0 - p_bar)).ln();
    let sorted: Vec<Vec<usize>> = (0..d)
        .map(|f| {
            let mut idx: Vec<usize> = (0..x.len()).collect();
            idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mut margin = vec![base_score; x.len()];
    let mut vmargin = vec![base_score; xv.len()];
    let mut trees = Vec::new();
    let mut valid_auroc = Vec::new();
    let (mut best_round, mut best_auc) = (0usize, f64::NEG_INFINITY);
    let mut g = vec![0.0; x.len()];
    let mut h = vec![0.0; x.len()];
    for round in 1..=cfg.max_rounds {
        for i in 0..x.len() {
            let p = sigmoid(margin[i]);
            g[i] = p - y[i] as f64;
            h[i] = p * (1.0 - p);
        }
        let tree = build_tree(x, &sorted, &g, &h, cfg);
        for (m, r) in margin.iter_mut().zip(x) {
            *m += tree.eval(r);
        }
        for (m, r) in vmargin.iter_mut().zip(xv) {
            *m += tree.eval(r);
        }
        trees.push(tree);
        if xv.is_empty() {
            best_round = round;
            continue;
        }
        let auc = auroc(&vmargin, yv)?;
        valid_auroc.push(auc);
        if auc > best_auc {
            best_auc = auc;
            best_round = round;
        } else if round - best_round >= cfg.early_stopping_rounds {
            break;
        }
    }
    let rounds_trained = trees.len();
    trees.truncate(best_round);
    Ok(GbdtModel {
        config: cfg.clone(),
        n_features: d,
        base_score,
        trees,
        rounds_trained,
        valid_auroc,
    })
}

pub fn gbdt_predict(model: &GbdtModel, rows: &[Vec<f64>]) -> Vec<f64> {
    model.predict(rows)
}

pub const GBDT_MAGIC: &[u8; 4] = b"SGBT";
pub const GBDT_VERSION: u32 = 1;

pub fn save_gbdt<W: Write>(mut w: W, m: &GbdtModel) -> Result<()> {
    let c = &m.config;
    w.write_all(GBDT_MAGIC)?;
    w.write_all(&GBDT_VERSION.to_le_bytes())?;
    for v in [c.max_depth, c.max_rounds, c.early_stopping_rounds] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for v in [c.eta, c.lambda_l2, c.min_child_weight, m.base_score] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in [m.n_features, m.rounds_trained, m.trees.len()] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for t in &m.trees {
        w.write_all(&(t.n_nodes() as u32).to_le_bytes())?;
        for k in 0..t.n_nodes() {
            w.write_all(&t.feature[k].to_le_bytes())?;
            w.write_all(&t.threshold[k].to_le_bytes())?;
            w.write_all(&t.left[k].to_le_bytes())?;
            w.write_all(&t.right[k].to_le_bytes())?;
            w.write_all(&t.value[k].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_gbdt<R: Read>(mut r: R) -> Result<GbdtModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor::new(&bytes, "GBDT model");
    if c.take(4)? != GBDT_MAGIC {
        return Err(Error::Format("not a GBDT model file (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != GBDT_VERSION {
        return Err(Error::Format(format!("unsupported GBDT model version {version}")));
    }
    let max_depth = c.u32()? as usize;
    let max_rounds = c.u32()? as usize;
    let early_stopping_rounds = c.u32()? as usize;
    let eta = c.f64()?;
    let lambda_l2 = c.f64()?;
    let min_child_weight = c.f64()?;
    let base_score = c.f64()?;
    let n_features = c.u32()? as usize;
    let rounds_trained = c.u32()? as usize;
    let n_trees = c.u32()? as usize;
    let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
    for _ in 0..n_trees {
        let n_nodes = c.u32()? as usize;
        let mut t = Tree {
            feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            value: Vec::new(),
        };
        for _ in 0..n_nodes {
            t.feature.push(c.u32()?);
            t.threshold.push(c.f64()?);
            t.left.push(c.u32()?);
            t.right.push(c.u32()?);
            t.value.push(c.f64()?);
        }
        let valid = !t.feature.is_empty()
            && (0..n_nodes).all(|k| {
                t.feature[k] == LEAF
                    || ((t.feature[k] as usize) < n_features
                        && (t.left[k] as usize) < n_nodes
                        && (t.right[k] as usize) < n_nodes
                        && t.left[k] as usize > k
                        && t.right[k] as usize > k)
            })
            && t.value.iter().all(|v| v.is_finite());
        if !valid {
            return Err(Error::Format("GBDT model contains a malformed tree".into()));
        }
        trees.push(t);
    }
    c.finish()?;
    Ok(GbdtModel {
        config: GbdtConfig {
            max_depth,
            eta,
            lambda_l2,
            min_child_weight,
            max_rounds,
            early_stopping_rounds,
        },
        n_features,
        base_score,
        trees,
        rounds_trained,
        valid_auroc: Vec::new(),
    })
}

/// Labeled spectra for one split.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub spectra: &'a [Spectrum],
    pub labels: &'a [u8],
}

fn binned(spectra: &[Spectrum], cfg: &PreprocessConfig) -> Vec<Vec<f64>> {
    spectra.iter().map(|s| bin_spectrum(s, cfg)).collect()
}

/// Binned-intensity features fed to a GBDT; returns the model and test scores.
pub fn binned_baseline(
    train: Split,
    valid: Split,
    test: &[Spectrum],
    pcfg: &PreprocessConfig,
    gcfg: &GbdtConfig,
) -> Result<(GbdtModel, Vec<f64>)> {
    pcfg.validate()?;
    let model = gbdt_fit(&binned(train.spectra, pcfg), train.labels, &binned(valid.spectra, pcfg), valid.labels, gcfg)?;
    let scores = model.predict(&binned(test, pcfg));
    Ok((model, scores))
}

/// Test AUROC of the binned baseline at each bin count.
pub fn bin_sweep(
    train: Split,
    valid: Split,
    test: Split,
    n_bins: &[usize],
    pcfg: &PreprocessConfig,
    gcfg: &GbdtConfig,
) -> Result<Vec<(usize, f64)>> {
    n_bins
        .iter()
        .map(|&nb| {
            let cfg = PreprocessConfig {
                n_bins: nb,
                ..pcfg.clone()
            };
            let (_, scores) = binned_baseline(train, valid, test.spectra, &cfg, gcfg)?;
            Ok((nb, auroc(&scores, test.labels)?))
        })
        .collect()
}

pub fn write_bin_sweep<W: Write>(mut w: W, rows: &[(usize, f64)]) -> Result<()> {
    writeln!(w, "n_bins\tbin_width\tauroc")?;
    for &(nb, a) in rows {
        let width = (PreprocessConfig::default().bin_hi - PreprocessConfig::default().bin_lo) / nb as f64;
        writeln!(w, "{nb}\t{width}\t{a}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OxoniumMode {
    /// I144 / (I138 + I144), no fitting.
    Ratio,
    /// GBDT over all 54 oxonium-ion intensities.
    Gbdt54,
}

pub fn oxonium_features(spectra: &[Spectrum], table: &OxoniumTable, cfg: &PreprocessConfig) -> Vec<Vec<f64>> {
    spectra.iter().map(|s| extract_oxonium(s, table, cfg).intensities).collect()
}

/// Scores `test` with the oxonium-ion baseline; `train`/`valid` are used by
/// the fitted mode only.
pub fn oxonium_baselines(
    mode: OxoniumMode,
    train: Split,
    valid: Split,
    test: &[Spectrum],
    table: &OxoniumTable,
    pcfg: &PreprocessConfig,
    gcfg: &GbdtConfig,
) -> Result<Vec<f64>> {
    match mode {
        OxoniumMode::Ratio => Ok(test
            .iter()
            .map(|s| extract_oxonium(s, table, pcfg).score_o_glyco)
            .collect()),
        OxoniumMode::Gbdt54 => {
            let model = gbdt_fit(
                &oxonium_features(train.spectra, table, pcfg),
                train.labels,
                &oxonium_features(valid.spectra, table, pcfg),
                valid.labels,
                gcfg,
            )?;
            Ok(model.predict(&oxonium_features(test, table, pcfg)))
        }
    }
}
