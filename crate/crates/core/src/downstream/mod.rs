//! Evaluations on codewords: object counting with a linear one-vs-rest
//! classifier under cross-validation, and distances to the mean codeword of
//! the most crowded scenes.

mod svm;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ItemSpec, Sample, Shape};
use crate::error::{Error, Result};
use crate::nets::Model;
use crate::numeric::Scalar;
use crate::train::write_file;

pub use svm::{LinearClassifier, SvmConfig};

/// Counting MAE is reported in units of 1e-1.
pub const MAE_REPORT_SCALE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodewordRow {
    pub scene_id: String,
    /// Object count (scenes) or genus (tori).
    pub count: usize,
    pub presence: Vec<bool>,
    pub code: Vec<f64>,
}

/// One row per scene; every codeword has the same length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodewordTable {
    /// Column names of the presence flags.
    pub presence_names: Vec<String>,
    pub rows: Vec<CodewordRow>,
}

impl CodewordTable {
    pub fn new(presence_names: Vec<String>, rows: Vec<CodewordRow>) -> Result<Self> {
        let t = Self { presence_names, rows };
        t.validate()?;
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.code.len())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for r in &self.rows {
            if r.code.len() != d {
                return Err(Error::invalid(format!(
                    "scene {} has a {}-dim codeword, expected {d}",
                    r.scene_id,
                    r.code.len()
                )));
            }
            if r.presence.len() != self.presence_names.len() {
                return Err(Error::invalid(format!(
                    "scene {} has {} presence flags, expected {}",
                    r.scene_id,
                    r.presence.len(),
                    self.presence_names.len()
                )));
            }
            if r.code.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("scene {} has a non-finite codeword", r.scene_id)));
            }
        }
        Ok(())
    }

    pub fn counts(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.count).collect()
    }

    /// Same rows with codewords mapped through `f`.
    pub fn map_codes(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        Self {
            presence_names: self.presence_names.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| CodewordRow {
                    code: f(&r.code),
                    ..r.clone()
                })
                .collect(),
        }
    }

    /// CSV: `scene_id,k,<presence...>,c_0..c_{d-1}`. Presence flags are 0/1.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scene_id,k");
        for name in &self.presence_names {
            let _ = write!(s, ",{name}");
        }
        for i in 0..self.dim() {
            let _ = write!(s, ",c_{i}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{}", r.scene_id, r.count);
            for &p in &r.presence {
                s.push_str(if p { ",1" } else { ",0" });
            }
            for v in &r.code {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv().as_bytes())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[0] != "scene_id" || cols[1] != "k" {
            return Err(err(1, "header must start with `scene_id,k`".into()));
        }
        let first_code = cols.iter().position(|c| c.starts_with("c_")).unwrap_or(cols.len());
        let presence_names: Vec<String> = cols[2..first_code].iter().map(|s| s.to_string()).collect();
        for (i, c) in cols[first_code..].iter().enumerate() {
            if *c != format!("c_{i}") {
                return Err(err(1, format!("expected column c_{i}, found `{c}`")));
            }
        }
        let mut rows = Vec::new();
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(err(ln, format!("expected {} fields, found {}", cols.len(), f.len())));
            }
            let count = f[1]
                .parse()
                .map_err(|_| err(ln, format!("bad count `{}`", f[1])))?;
            let presence = f[2..first_code]
                .iter()
                .map(|v| match *v {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(err(ln, format!("presence flag must be 0 or 1, got `{other}`"))),
                })
                .collect::<Result<_>>()?;
            let code = f[first_code..]
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| err(ln, format!("bad codeword value `{v}`"))))
                .collect::<Result<_>>()?;
            rows.push(CodewordRow {
                scene_id: f[0].to_string(),
                count,
                presence,
                code,
            });
        }
        Self::new(presence_names, rows)
    }
}

/// Encode every sample. The count label comes from the manifest item and is
/// checked against the generator spec it was planned from.
pub fn extract_codes<T: Scalar>(model: &Model<T>, samples: &[Sample<T>]) -> Result<CodewordTable> {
    let mut presence_names = Vec::new();
    if let Some(s) = samples.first() {
        if !s.item.presence.is_empty() {
            presence_names = Shape::ALL.iter().map(|s| s.name().to_string()).collect();
        }
    }
    for s in samples {
        let truth = match &s.item.spec {
            ItemSpec::Torus(t) => t.genus,
            ItemSpec::Scene(sc) => sc.count(),
        };
        if truth != s.item.count {
            return Err(Error::Mismatch(format!(
                "scene {} is labelled {} but its spec holds {truth}",
                s.item.id, s.item.count
            )));
        }
        if s.item.presence.len() != presence_names.len() {
            return Err(Error::Mismatch(format!(
                "scene {} has {} presence labels, expected {}",
                s.item.id,
                s.item.presence.len(),
                presence_names.len()
            )));
        }
    }
    let rows = samples
        .par_iter()
        .map(|s| {
            Ok(CodewordRow {
                scene_id: s.item.id.clone(),
                count: s.item.count,
                presence: s.item.presence.clone(),
                code: model.encode(&s.cloud)?.into_iter().map(|v| v.as_f64()).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CodewordTable::new(presence_names, rows)
}

/// Fold index per row: rows are keyed by scene id, grouped by label,
/// shuffled within each group and dealt round-robin, so the split ignores the
/// table's row order.
pub fn stratified_folds(ids: &[&str], labels: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
    }
    if ids.len() != labels.len() {
        return Err(Error::invalid("ids and labels differ in length"));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(ids[b]));
    if order.windows(2).any(|w| ids[w[0]] == ids[w[1]]) {
        return Err(Error::invalid("scene ids must be unique"));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in order {
        groups.entry(labels[i]).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; ids.len()];
    let mut next = 0;
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            fold[i] = next % folds;
            next += 1;
        }
    }
    Ok(fold)
}

fn median_low(mut v: Vec<usize>) -> usize {
    v.sort_unstable();
    v[(v.len() - 1) / 2]
}

fn majority(v: &[usize]) -> usize {
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for &k in v {
        *hist.entry(k).or_default() += 1;
    }
    // first (smallest) label among the most frequent
    let best = hist.values().copied().max().unwrap_or(0);
    hist.into_iter().find(|&(_, n)| n == best).map_or(0, |(k, _)| k)
}

/// Expected `|k_i - k_j|` for two labels drawn independently from the
/// empirical label distribution: the MAE of a predictor that ignores the input.
pub fn chance_mae(labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    if labels.is_empty() {
        return 0.0;
    }
    let mut hist: BTreeMap<usize, f64> = BTreeMap::new();
    for &k in labels {
        *hist.entry(k).or_default() += 1.0 / n;
    }
    let mut e = 0.0;
    for (&a, &pa) in &hist {
        for (&b, &pb) in &hist {
            e += pa * pb * (a as f64 - b as f64).abs();
        }
    }
    e
}

/// Result of one cross-validated counting run. MAE values are raw (objects);
/// multiply by [`MAE_REPORT_SCALE`] for the table convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountCv {
    pub folds: usize,
    pub mae: f64,
    pub fold_mae: Vec<f64>,
    /// Training-fold majority label predicted everywhere.
    pub majority_mae: f64,
    /// Training-fold median predicted everywhere (the best constant under MAE).
    pub constant_mae: f64,
    /// Analytic chance level from the label histogram.
    pub chance_mae: f64,
    /// Same protocol with the labels shuffled.
    pub shuffled_mae: f64,
}

/// Rows sorted by scene id, so results do not depend on the table's order.
fn by_scene_id(table: &CodewordTable) -> Vec<&CodewordRow> {
    let mut rows: Vec<&CodewordRow> = table.rows.iter().collect();
    rows.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    rows
}

/// Train on one fold, predict the rest, rotate. Returns the mean absolute
/// error of each rotation's predictions on its held-out folds.
fn rotate(
    codes: &[&[f64]],
    labels: &[usize],
    fold: &[usize],
    folds: usize,
    cfg: &SvmConfig,
) -> Result<Vec<(f64, f64, f64)>> {
    let all: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..labels.len()).filter(|&i| fold[i] == f).collect();
            let test: Vec<usize> = (0..labels.len()).filter(|&i| fold[i] != f).collect();
            if train.is_empty() || test.is_empty() {
                return Err(Error::invalid(format!("fold {f} is empty; the table is too small")));
            }
            let x: Vec<&[f64]> = train.iter().map(|&i| codes[i]).collect();
            let y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            for k in &all {
                if !y.contains(k) {
                    log::warn!("label {k} is absent from training fold {f}; the classifier omits it");
                }
            }
            let clf = LinearClassifier::fit(&x, &y, cfg)?;
            let truth: Vec<f64> = test.iter().map(|&i| labels[i] as f64).collect();
            let mae_of = |pred: &dyn Fn(usize) -> usize| {
                test.iter()
                    .zip(&truth)
                    .map(|(&i, t)| (pred(i) as f64 - t).abs())
                    .sum::<f64>()
                    / test.len() as f64
            };
            let svm = mae_of(&|i| clf.predict(codes[i]));
            let maj = majority(&y);
            let med = median_low(y.clone());
            Ok((svm, mae_of(&|_| maj), mae_of(&|_| med)))
        })
        .collect()
}

/// Cross-validated counting from codewords.
pub fn count_cv(table: &CodewordTable, folds: usize, cfg: &SvmConfig, seed: u64) -> Result<CountCv> {
    let rows = by_scene_id(table);
    let labels: Vec<usize> = rows.iter().map(|r| r.count).collect();
    let ids: Vec<&str> = rows.iter().map(|r| r.scene_id.as_str()).collect();
    let codes: Vec<&[f64]> = rows.iter().map(|r| r.code.as_slice()).collect();
    let fold = stratified_folds(&ids, &labels, folds, seed)?;
    let rot = rotate(&codes, &labels, &fold, folds, cfg)?;
    let mean = |f: fn(&(f64, f64, f64)) -> f64| rot.iter().map(f).sum::<f64>() / folds as f64;

    let mut shuffled = labels.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed));
    let shuffled_rot = rotate(&codes, &shuffled, &fold, folds, cfg)?;

    Ok(CountCv {
        folds,
        mae: mean(|r| r.0),
        fold_mae: rot.iter().map(|r| r.0).collect(),
        majority_mae: mean(|r| r.1),
        constant_mae: mean(|r| r.2),
        chance_mae: chance_mae(&labels),
        shuffled_mae: shuffled_rot.iter().map(|r| r.0).sum::<f64>() / folds as f64,
    })
}

/// Binary presence task (e.g. "contains a torus") with the same protocol.
/// Returns `(error rate, majority error rate)`.
pub fn presence_cv(
    table: &CodewordTable,
    column: usize,
    folds: usize,
    cfg: &SvmConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    if column >= table.presence_names.len() {
        return Err(Error::invalid(format!(
            "presence column {column} out of range ({} columns)",
            table.presence_names.len()
        )));
    }
    let rows = by_scene_id(table);
    let labels: Vec<usize> = rows.iter().map(|r| r.presence[column] as usize).collect();
    let ids: Vec<&str> = rows.iter().map(|r| r.scene_id.as_str()).collect();
    let codes: Vec<&[f64]> = rows.iter().map(|r| r.code.as_slice()).collect();
    let fold = stratified_folds(&ids, &labels, folds, seed)?;
    // for 0/1 labels the absolute error is the misclassification rate
    let rot = rotate(&codes, &labels, &fold, folds, cfg)?;
    let n = folds as f64;
    Ok((
        rot.iter().map(|r| r.0).sum::<f64>() / n,
        rot.iter().map(|r| r.1).sum::<f64>() / n,
    ))
}

/// Distance summary for one count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DkRow {
    pub k: usize,
    pub n: usize,
    /// Mean Euclidean distance to the reference codeword.
    pub raw: f64,
    pub raw_stderr: f64,
    /// `raw` min-max normalized over all rows.
    pub dk: f64,
    pub stderr: f64,
}

/// Mean distance from the codewords of each count to the mean codeword of the
/// largest count, with standard errors, min-max normalized to `[0, 1]`.
pub fn dk_analysis(table: &CodewordTable) -> Result<Vec<DkRow>> {
    let mut groups: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for r in &table.rows {
        groups.entry(r.count).or_default().push(&r.code);
    }
    let (&k_max, top) = groups
        .iter()
        .next_back()
        .ok_or_else(|| Error::invalid("codeword table is empty"))?;
    let (&k_min, _) = groups.iter().next().unwrap();
    for k in k_min..k_max {
        if !groups.contains_key(&k) {
            log::warn!("no codewords with count {k}; its row is omitted");
        }
    }
    let d = table.dim();
    let mut center = vec![0.0; d];
    for c in top {
        for (m, v) in center.iter_mut().zip(c.iter()) {
            *m += v;
        }
    }
    for m in &mut center {
        *m /= top.len() as f64;
    }
    let mut rows: Vec<DkRow> = groups
        .iter()
        .map(|(&k, codes)| {
            let dist: Vec<f64> = codes
                .iter()
                .map(|c| c.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .collect();
            let n = dist.len() as f64;
            let mean = dist.iter().sum::<f64>() / n;
            let stderr = if dist.len() > 1 {
                let var = dist.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            DkRow {
                k,
                n: dist.len(),
                raw: mean,
                raw_stderr: stderr,
                dk: 0.0,
                stderr: 0.0,
            }
        })
        .collect();
    let lo = rows.iter().map(|r| r.raw).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.raw).fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for r in &mut rows {
        if span > 0.0 {
            r.dk = (r.raw - lo) / span;
            r.stderr = r.raw_stderr / span;
        }
    }
    Ok(rows)
}

pub fn write_dk_csv(path: &Path, rows: &[DkRow]) -> Result<()> {
    let mut s = String::from("k,n,d_k,stderr,raw,raw_stderr\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.k, r.n, r.dk, r.stderr, r.raw, r.raw_stderr);
    }
    write_file(path, s.as_bytes())
}

/// One line of a results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub variant: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

impl ResultRow {
    pub fn new(task: &str, variant: &str, metric: &str, value: f64, seed: u64) -> Self {
        Self {
            task: task.into(),
            variant: variant.into(),
            metric: metric.into(),
            value,
            seed,
        }
    }
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut s = String::from("task,variant,metric,value,seed\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.task, r.variant, r.metric, r.value, r.seed);
    }
    write_file(path, s.as_bytes())
}

/// Results rows for a counting run, MAE in units of 1e-1.
pub fn count_rows(cv: &CountCv, task: &str, variant: &str, seed: u64) -> Vec<ResultRow> {
    [
        ("mae_e-1", cv.mae),
        ("majority_mae_e-1", cv.majority_mae),
        ("constant_mae_e-1", cv.constant_mae),
        ("chance_mae_e-1", cv.chance_mae),
        ("shuffled_mae_e-1", cv.shuffled_mae),
    ]
    .into_iter()
    .map(|(m, v)| ResultRow::new(task, variant, m, v * MAE_REPORT_SCALE, seed))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn table_from(counts: &[usize], code: impl Fn(usize, usize) -> Vec<f64>) -> CodewordTable {
        let rows = counts
            .iter()
            .enumerate()
            .map(|(i, &k)| CodewordRow {
                scene_id: format!("test-{i}"),
                count: k,
                presence: vec![k % 2 == 0],
                code: code(i, k),
            })
            .collect();
        CodewordTable::new(vec!["even".into()], rows).unwrap()
    }

    fn noisy(i: usize, k: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let mut c: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        c[0] = k as f64;
        c
    }

    #[test]
    fn separable_counts_give_zero_error() {
        // each count lifts its own coordinate well above the noise
        let counts: Vec<usize> = (0..48).map(|i| 1 + i % 3).collect();
        let t = table_from(&counts, |i, k| {
            let mut c = noisy(i, k);
            c[0] = 0.0;
            c[k] += 5.0;
            c
        });
        let cv = count_cv(&t, 4, &SvmConfig::default(), 3).unwrap();
        assert_eq!(cv.mae, 0.0);
        assert!(cv.constant_mae > 0.0);
    }

    #[test]
    fn chance_level_matches_hand_value() {
        // labels {1, 2} equally likely: E|a - b| = 2 * 0.25 * 1
        assert!((chance_mae(&[1, 2, 1, 2]) - 0.5).abs() < 1e-15);
        // {1, 3} with p = 1/4, 3/4: 2 * (1/4)(3/4) * 2
        assert!((chance_mae(&[1, 3, 3, 3]) - 0.75).abs() < 1e-15);
        assert_eq!(chance_mae(&[4, 4]), 0.0);
    }

    #[test]
    fn folds_are_stratified_and_order_free() {
        let counts: Vec<usize> = (0..40).map(|i| 1 + i % 4).collect();
        let ids: Vec<String> = (0..40).map(|i| format!("s{i:02}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
        let f = stratified_folds(&id_refs, &counts, 4, 9).unwrap();
        for fold in 0..4 {
            for k in 1..=4 {
                let n = (0..40).filter(|&i| f[i] == fold && counts[i] == k).count();
                assert!(n == 2 || n == 3, "fold {fold} class {k}: {n}");
            }
        }
        let rev_ids: Vec<&str> = id_refs.iter().rev().copied().collect();
        let rev_counts: Vec<usize> = counts.iter().rev().copied().collect();
        let g = stratified_folds(&rev_ids, &rev_counts, 4, 9).unwrap();
        let g: Vec<usize> = g.into_iter().rev().collect();
        assert_eq!(f, g);
    }

    #[test]
    fn count_cv_ignores_row_order() {
        let counts: Vec<usize> = (0..36).map(|i| 1 + i % 3).collect();
        let t = table_from(&counts, |i, k| {
            let mut c = noisy(i, k);
            c[0] = k as f64 + 0.9 * c[1];
            c
        });
        let mut r = t.clone();
        r.rows.reverse();
        let cfg = SvmConfig::default();
        assert_eq!(count_cv(&t, 4, &cfg, 5).unwrap(), count_cv(&r, 4, &cfg, 5).unwrap());
    }

    #[test]
    fn power_of_two_rescale_keeps_predictions() {
        let counts: Vec<usize> = (0..30).map(|i| 1 + i % 3).collect();
        let t = table_from(&counts, |i, k| {
            let mut c = noisy(i, k);
            c[0] += c[2];
            c
        });
        let s = t.map_codes(|c| c.iter().map(|v| v * 8.0).collect());
        let cfg = SvmConfig::default();
        assert_eq!(count_cv(&t, 4, &cfg, 1).unwrap(), count_cv(&s, 4, &cfg, 1).unwrap());
    }

    #[test]
    fn presence_task_runs() {
        let counts: Vec<usize> = (0..40).map(|i| 1 + i % 4).collect();
        let t = table_from(&counts, noisy);
        let (err, base) = presence_cv(&t, 0, 4, &SvmConfig::default(), 2).unwrap();
        assert!(err <= base + 1e-12, "{err} vs {base}");
        assert!(presence_cv(&t, 1, 4, &SvmConfig::default(), 2).is_err());
    }

    #[test]
    fn dk_single_member_top_class_is_zero() {
        let t = table_from(&[1, 1, 2, 3], noisy);
        let rows = dk_analysis(&t).unwrap();
        let top = rows.last().unwrap();
        assert_eq!((top.k, top.n, top.raw), (3, 1, 0.0));
        assert_eq!(top.dk, 0.0);
    }

    #[test]
    fn dk_decreases_along_one_direction() {
        // codeword k * e1: distance to 4 * e1 is 4 - k
        let counts = [1, 2, 3, 4, 1, 2, 3, 4];
        let t = table_from(&counts, |_, k| vec![k as f64, 0.0, 0.0]);
        let rows = dk_analysis(&t).unwrap();
        let raw: Vec<f64> = rows.iter().map(|r| r.raw).collect();
        assert_eq!(raw, vec![3.0, 2.0, 1.0, 0.0]);
        let dk: Vec<f64> = rows.iter().map(|r| r.dk).collect();
        assert_eq!(dk, vec![1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0]);
        assert!(rows.iter().all(|r| r.stderr == 0.0));
    }

    #[test]
    fn dk_ignores_duplicates_and_isometries() {
        let counts = [1, 2, 3, 1, 2, 3, 3];
        let t = table_from(&counts, noisy);
        let base = dk_analysis(&t).unwrap();
        let mut dup = t.clone();
        dup.rows.extend(t.rows.iter().cloned());
        let dd = dk_analysis(&dup).unwrap();
        for (a, b) in base.iter().zip(&dd) {
            assert!((a.raw - b.raw).abs() < 1e-12 && (a.dk - b.dk).abs() < 1e-12);
        }
        // rotate the (c0, c1) plane and translate
        let (s, c) = (0.6f64, 0.8f64);
        let moved = t.map_codes(|v| {
            let mut w: Vec<f64> = v.iter().map(|x| x + 3.0).collect();
            w[0] = c * v[0] - s * v[1] + 1.0;
            w[1] = s * v[0] + c * v[1] - 2.0;
            w
        });
        for (a, b) in base.iter().zip(&dk_analysis(&moved).unwrap()) {
            assert!((a.raw - b.raw).abs() < 1e-9 && (a.dk - b.dk).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let t = table_from(&[1, 2, 3], noisy);
        let p = Path::new("codes.csv");
        assert_eq!(CodewordTable::parse_csv(&t.to_csv(), p).unwrap(), t);
        let bad = t.to_csv().replace(",0,", ",x,");
        assert!(CodewordTable::parse_csv(&bad, p).is_err());
        let e = CodewordTable::parse_csv("scene_id,k,c_0\na,1\n", p).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }
}
