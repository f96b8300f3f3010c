//! Tabular ingestion, preprocessing, non-IID partitioning and the
//! encrypted feature-distribution protocol used for missing-column imputation.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cipher::{self, ChaosKey, CipherBlob};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor2;

pub const DEFAULT_MISSING_TOKENS: [&str; 3] = ["?", "", "NaN"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub features: Tensor2,
    /// Binary labels stored as 0.0 / 1.0.
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, features: Tensor2, labels: Vec<f64>) -> Result<Self> {
        if feature_names.len() != features.cols() {
            return Err(Error::Schema(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.cols()
            )));
        }
        if labels.len() != features.rows() {
            return Err(Error::Schema(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Schema(format!("label {bad} is not binary")));
        }
        Ok(Self {
            feature_names,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1.0).count()
    }

    pub fn positive_rate(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.positives() as f64 / self.len() as f64
        }
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Schema(format!("unknown feature {name:?}")))
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

// --- CSV ------------------------------------------------------------------

pub fn load_csv(path: impl AsRef<Path>, label_column: &str, missing_tokens: &[String]) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, label_column, missing_tokens)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Numeric columns parse as `f64`; any other column is categorical and maps
/// to `0, 1, …` in sorted category order. Rows with a missing label are
/// dropped and remaining missing cells take the column median.
pub fn parse_csv<R: Read>(reader: R, label_column: &str, missing_tokens: &[String]) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Format {
            row: 1,
            col: 1,
            msg: "missing header row".into(),
        });
    }
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Schema(format!("label column {label_column:?} not in header")))?;

    let mut cells: Vec<Vec<Option<String>>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| csv_error(e, i + 2))?;
        if record.len() != headers.len() {
            return Err(Error::Format {
                row: i + 2,
                col: record.len().min(headers.len()) + 1,
                msg: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        cells.push(
            record
                .iter()
                .map(|c| {
                    let c = c.trim();
                    (!missing_tokens.iter().any(|t| t == c)).then(|| c.to_string())
                })
                .collect(),
        );
    }
    cells.retain(|row| row[label_idx].is_some());
    if cells.is_empty() {
        return Err(Error::Schema("no rows with a label".into()));
    }

    let n_cols = headers.len();
    let mut columns: Vec<Vec<Option<f64>>> = Vec::with_capacity(n_cols);
    for c in 0..n_cols {
        let numeric: Option<Vec<Option<f64>>> = cells
            .iter()
            .map(|row| match &row[c] {
                None => Some(None),
                Some(s) => s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some),
            })
            .collect();
        let column = match numeric {
            Some(col) => col,
            None => {
                let cats: BTreeSet<&str> = cells.iter().filter_map(|r| r[c].as_deref()).collect();
                let cats: Vec<&str> = cats.into_iter().collect();
                cells
                    .iter()
                    .map(|row| row[c].as_deref().map(|s| cats.binary_search(&s).unwrap() as f64))
                    .collect()
            }
        };
        columns.push(column);
    }

    let labels: Vec<f64> = columns[label_idx].iter().map(|v| v.unwrap()).collect();
    if let Some((row, bad)) = labels.iter().enumerate().find(|(_, &y)| y != 0.0 && y != 1.0) {
        return Err(Error::Schema(format!(
            "label column {label_column:?} has non-binary value {bad} (data row {})",
            row + 1
        )));
    }

    let mut feature_names = Vec::with_capacity(n_cols - 1);
    let mut filled: Vec<Vec<f64>> = Vec::with_capacity(n_cols - 1);
    for (c, column) in columns.into_iter().enumerate() {
        if c == label_idx {
            continue;
        }
        let mut present: Vec<f64> = column.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(Error::Schema(format!("column {:?} has no values", headers[c])));
        }
        let fill = median(&mut present);
        filled.push(column.into_iter().map(|v| v.unwrap_or(fill)).collect());
        feature_names.push(headers[c].clone());
    }
    let n_rows = labels.len();
    let mut data = Vec::with_capacity(n_rows * filled.len());
    for r in 0..n_rows {
        data.extend(filled.iter().map(|col| col[r]));
    }
    Dataset::new(
        feature_names.clone(),
        Tensor2::from_vec(n_rows, feature_names.len(), data)?,
        labels,
    )
}

fn csv_error(e: csv::Error, fallback_row: usize) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(fallback_row);
    Error::Format {
        row,
        col: 0,
        msg: e.to_string(),
    }
}

// --- standardization --------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnStats {
    /// Population mean and std of every column.
    pub fn fit(data: &Dataset) -> Self {
        let n = data.len().max(1) as f64;
        let cols = data.n_features();
        let mut mean = vec![0.0; cols];
        for r in 0..data.len() {
            for (m, v) in mean.iter_mut().zip(data.features.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; cols];
        for r in 0..data.len() {
            for ((s, v), m) in var.iter_mut().zip(data.features.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Self { mean, std }
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let mut out = data.clone();
        for r in 0..out.len() {
            for ((v, m), s) in out.features.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                if *s > 0.0 {
                    *v = (*v - m) / s;
                }
            }
        }
        out
    }
}

/// Z-scores every split with the training split's statistics; zero-variance
/// training columns pass through untouched.
pub fn standardize(train: &Dataset, others: &[Dataset]) -> (Dataset, Vec<Dataset>) {
    let stats = ColumnStats::fit(train);
    (stats.apply(train), others.iter().map(|d| stats.apply(d)).collect())
}

// --- partitioning -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionMode {
    Even,
    Proportions {
        fractions: Vec<f64>,
    },
    /// At least `min_small` participants hold at most `small_cap` of the rows.
    ForcedSmall {
        min_small: usize,
        small_cap: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingFeatureSpec {
    /// 1-based participant id that lacks the column.
    pub participant: usize,
    pub feature: String,
    /// 1-based donor id; defaults to the largest other participant.
    pub donor: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    /// Target positive rate per participant.
    pub label_skew: Option<Vec<f64>>,
    pub missing_feature: Option<MissingFeatureSpec>,
    pub seed: u64,
}

/// Tolerance on label-skew targets, in rate units.
pub const LABEL_SKEW_TOLERANCE: f64 = 0.05;
pub const MAX_SMALL_CAP: f64 = 0.10;
pub const MIN_ROWS_PER_PARTICIPANT: usize = 10;

impl PartitionSpec {
    pub fn validate(&self, n_participants: usize) -> Result<()> {
        match &self.mode {
            PartitionMode::Even => {}
            PartitionMode::Proportions { fractions } => {
                if fractions.len() != n_participants {
                    return Err(Error::Config(format!(
                        "{} proportions for {n_participants} participants",
                        fractions.len()
                    )));
                }
                if fractions.iter().any(|&f| f.is_nan() || f <= 0.0) {
                    return Err(Error::Config("proportions must be positive".into()));
                }
                let sum: f64 = fractions.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("proportions sum to {sum}, not 1")));
                }
            }
            PartitionMode::ForcedSmall { min_small, small_cap } => {
                if !(*small_cap > 0.0 && *small_cap <= MAX_SMALL_CAP) {
                    return Err(Error::Config(format!(
                        "small_cap {small_cap} must be in (0, {MAX_SMALL_CAP}]"
                    )));
                }
                if *min_small == 0 || *min_small >= n_participants {
                    return Err(Error::Config(format!(
                        "min_small {min_small} must be between 1 and {}",
                        n_participants - 1
                    )));
                }
            }
        }
        if let Some(targets) = &self.label_skew {
            if targets.len() != n_participants {
                return Err(Error::Config(format!(
                    "{} label-skew targets for {n_participants} participants",
                    targets.len()
                )));
            }
            if targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(Error::Config("label-skew targets must lie in [0, 1]".into()));
            }
        }
        if let Some(m) = &self.missing_feature {
            let in_range = |id: usize| (1..=n_participants).contains(&id);
            if !in_range(m.participant) {
                return Err(Error::Config(format!(
                    "missing_feature participant {} out of range",
                    m.participant
                )));
            }
            if let Some(d) = m.donor {
                if !in_range(d) || d == m.participant {
                    return Err(Error::Config(format!("donor {d} must be another participant")));
                }
            }
        }
        Ok(())
    }
}

/// Rows assigned to one participant before the train/val/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shard {
    /// 1-based.
    pub participant: usize,
    pub rows: Vec<usize>,
    pub size_fraction: f64,
    pub positive_rate: f64,
}

fn shard_sizes<R: Rng>(mode: &PartitionMode, total: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    let sizes = match mode {
        PartitionMode::Even => (0..n).map(|i| total / n + usize::from(i < total % n)).collect(),
        PartitionMode::Proportions { fractions } => {
            let mut sizes: Vec<usize> = fractions.iter().map(|f| (f * total as f64).round() as usize).collect();
            let largest = fractions
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            let assigned: usize = sizes.iter().sum();
            if assigned > total {
                sizes[largest] -= assigned - total;
            } else {
                sizes[largest] += total - assigned;
            }
            sizes
        }
        PartitionMode::ForcedSmall { min_small, small_cap } => {
            let cap_rows = (small_cap * total as f64).floor() as usize;
            let low = ((0.02 * total as f64).ceil() as usize).clamp(1, cap_rows.max(1));
            if cap_rows < 1 {
                return Err(Error::Feasibility(format!(
                    "small_cap {small_cap} of {total} rows leaves no room for a participant"
                )));
            }
            let mut ids: Vec<usize> = (0..n).collect();
            ids.shuffle(rng);
            let small: BTreeSet<usize> = ids[..*min_small].iter().copied().collect();
            let mut sizes = vec![0usize; n];
            for &i in &small {
                sizes[i] = rng.random_range(low..=cap_rows);
            }
            let rest = total - sizes.iter().sum::<usize>();
            let large: Vec<usize> = (0..n).filter(|i| !small.contains(i)).collect();
            let weights: Vec<f64> = large.iter().map(|_| rng.random_range(0.5..1.5)).collect();
            let wsum: f64 = weights.iter().sum();
            let mut given = 0;
            for (&i, w) in large.iter().zip(&weights) {
                sizes[i] = ((w / wsum) * rest as f64).floor() as usize;
                given += sizes[i];
            }
            for k in 0..rest - given {
                sizes[large[k % large.len()]] += 1;
            }
            sizes
        }
    };
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Feasibility(format!(
            "participant {} would receive no rows",
            i + 1
        )));
    }
    Ok(sizes)
}

/// Positive counts per shard meeting every target within the tolerance and
/// summing to the dataset's positives.
fn positive_counts(sizes: &[usize], targets: &[f64], positives: usize, negatives: usize) -> Result<Vec<usize>> {
    let mut lo = Vec::with_capacity(sizes.len());
    let mut hi = Vec::with_capacity(sizes.len());
    for (i, (&s, &t)) in sizes.iter().zip(targets).enumerate() {
        let l = (((t - LABEL_SKEW_TOLERANCE) * s as f64).ceil().max(0.0) as usize).max(s.saturating_sub(negatives));
        let h = (((t + LABEL_SKEW_TOLERANCE) * s as f64).floor() as usize)
            .min(s)
            .min(positives);
        if l > h {
            return Err(Error::Feasibility(format!(
                "participant {}: no positive count in [{l}, {h}] reaches rate {t} on {s} rows",
                i + 1
            )));
        }
        lo.push(l);
        hi.push(h);
    }
    let (sum_lo, sum_hi) = (lo.iter().sum::<usize>(), hi.iter().sum::<usize>());
    if positives < sum_lo {
        return Err(Error::Feasibility(format!(
            "targets need at least {sum_lo} positives, dataset has {positives}"
        )));
    }
    if positives > sum_hi {
        return Err(Error::Feasibility(format!(
            "targets absorb at most {sum_hi} positives, dataset has {positives}"
        )));
    }
    let mut counts: Vec<usize> = sizes
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(i, (&s, &t))| ((t * s as f64).round() as usize).clamp(lo[i], hi[i]))
        .collect();
    // Move one positive at a time to/from the shard with the most slack.
    loop {
        let sum: usize = counts.iter().sum();
        if sum == positives {
            break;
        }
        let pick = if sum < positives {
            (0..counts.len())
                .filter(|&i| counts[i] < hi[i])
                .max_by_key(|&i| (hi[i] - counts[i], usize::MAX - i))
        } else {
            (0..counts.len())
                .filter(|&i| counts[i] > lo[i])
                .max_by_key(|&i| (counts[i] - lo[i], usize::MAX - i))
        };
        let i = pick.expect("bounds were checked above");
        if sum < positives {
            counts[i] += 1;
        } else {
            counts[i] -= 1;
        }
    }
    Ok(counts)
}

/// Disjoint shards covering every row of `dataset`.
pub fn partition(dataset: &Dataset, spec: &PartitionSpec, n_participants: usize) -> Result<Vec<Shard>> {
    if n_participants == 0 {
        return Err(Error::Config("need at least one participant".into()));
    }
    spec.validate(n_participants)?;
    let total = dataset.len();
    if total < n_participants * MIN_ROWS_PER_PARTICIPANT {
        return Err(Error::Config(format!(
            "{total} rows cannot feed {n_participants} participants ({MIN_ROWS_PER_PARTICIPANT} rows each minimum)"
        )));
    }
    let mut rng = rng::derive(spec.seed, Stream::Partition, 0, 0);
    let sizes = shard_sizes(&spec.mode, total, n_participants, &mut rng)?;

    let assignments: Vec<Vec<usize>> = match &spec.label_skew {
        None => {
            let mut order: Vec<usize> = (0..total).collect();
            order.shuffle(&mut rng);
            let mut start = 0;
            sizes
                .iter()
                .map(|&s| {
                    let chunk = order[start..start + s].to_vec();
                    start += s;
                    chunk
                })
                .collect()
        }
        Some(targets) => {
            let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..total).partition(|&i| dataset.labels[i] == 1.0);
            let counts = positive_counts(&sizes, targets, pos.len(), neg.len())?;
            pos.shuffle(&mut rng);
            neg.shuffle(&mut rng);
            let (mut pi, mut ni) = (0, 0);
            sizes
                .iter()
                .zip(&counts)
                .map(|(&s, &p)| {
                    let mut rows = pos[pi..pi + p].to_vec();
                    rows.extend_from_slice(&neg[ni..ni + (s - p)]);
                    pi += p;
                    ni += s - p;
                    rows.shuffle(&mut rng);
                    rows
                })
                .collect()
        }
    };

    Ok(assignments
        .into_iter()
        .enumerate()
        .map(|(i, rows)| {
            let positives = rows.iter().filter(|&&r| dataset.labels[r] == 1.0).count();
            Shard {
                participant: i + 1,
                size_fraction: rows.len() as f64 / total as f64,
                positive_rate: positives as f64 / rows.len() as f64,
                rows,
            }
        })
        .collect())
}

// --- per-participant splits --------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&p| p.is_nan() || p <= 0.0) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {parts:?} must be positive and sum to 1"
            )));
        }
        Ok(())
    }

    fn counts(&self, n: usize) -> [usize; 3] {
        let mut train = (self.train * n as f64).round() as usize;
        let mut val = (self.val * n as f64).round() as usize;
        while train + val >= n {
            if train >= val {
                train -= 1;
            } else {
                val -= 1;
            }
        }
        if val == 0 {
            val = 1;
            train -= 1;
        }
        [train, val, n - train - val]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationStatus {
    Pending,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedFeature {
    pub name: String,
    /// Column position in the original feature order.
    pub index: usize,
    pub status: ImputationStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantData {
    /// 1-based.
    pub id: usize,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub train_rows: Vec<usize>,
    pub val_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub size_fraction: f64,
    pub positive_rate: f64,
    pub imputed_features: Vec<ImputedFeature>,
}

impl ParticipantData {
    pub fn n_rows(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    /// Copy with every split z-scored by this participant's own train statistics.
    pub fn standardized(&self) -> Self {
        let (train, others) = standardize(&self.train, &[self.val.clone(), self.test.clone()]);
        let [val, test]: [Dataset; 2] = others.try_into().unwrap();
        Self {
            train,
            val,
            test,
            ..self.clone()
        }
    }
}

/// Train/val/test split of one shard, stratified by label when both classes
/// have at least three rows.
pub fn split_tvt(dataset: &Dataset, shard: &Shard, ratios: SplitRatios, seed: u64) -> Result<ParticipantData> {
    ratios.validate()?;
    let n = shard.rows.len();
    if n < 3 {
        return Err(Error::Config(format!(
            "participant {} has {n} rows; need at least 3 to split",
            shard.participant
        )));
    }
    let mut rng = rng::derive(seed, Stream::Split, shard.participant as u64, 0);
    let sizes = ratios.counts(n);
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = shard.rows.iter().partition(|&&r| dataset.labels[r] == 1.0);
    let mut splits: [Vec<usize>; 3] = Default::default();

    if pos.len() >= 3 && neg.len() >= 3 {
        let rate = pos.len() as f64 / n as f64;
        let mut want = [0usize; 3];
        for k in 0..2 {
            want[k] = ((sizes[k] as f64 * rate).round() as usize).min(sizes[k]);
        }
        let mut rest = pos.len() as isize - (want[0] + want[1]) as isize;
        // keep the test share feasible
        for k in 0..2 {
            while rest < 0 && want[k] > 0 {
                want[k] -= 1;
                rest += 1;
            }
            while rest > sizes[2] as isize && want[k] < sizes[k] {
                want[k] += 1;
                rest -= 1;
            }
        }
        want[2] = rest as usize;
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let (mut pi, mut ni) = (0, 0);
        for k in 0..3 {
            let split = &mut splits[k];
            split.extend_from_slice(&pos[pi..pi + want[k]]);
            split.extend_from_slice(&neg[ni..ni + sizes[k] - want[k]]);
            pi += want[k];
            ni += sizes[k] - want[k];
            split.shuffle(&mut rng);
        }
    } else {
        let mut order = shard.rows.clone();
        order.shuffle(&mut rng);
        splits[0] = order[..sizes[0]].to_vec();
        splits[1] = order[sizes[0]..sizes[0] + sizes[1]].to_vec();
        splits[2] = order[sizes[0] + sizes[1]..].to_vec();
    }

    let [train_rows, val_rows, test_rows] = splits;
    Ok(ParticipantData {
        id: shard.participant,
        train: dataset.subset(&train_rows),
        val: dataset.subset(&val_rows),
        test: dataset.subset(&test_rows),
        train_rows,
        val_rows,
        test_rows,
        size_fraction: shard.size_fraction,
        positive_rate: shard.positive_rate,
        imputed_features: Vec::new(),
    })
}

// --- partition manifests -----------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub participant: usize,
    pub size_fraction: f64,
    pub positive_rate: f64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Participant → row indices, for audit and exact replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub dataset_rows: usize,
    pub seed: u64,
    pub participants: Vec<ManifestEntry>,
}

impl PartitionManifest {
    pub fn from_participants(dataset_rows: usize, seed: u64, participants: &[ParticipantData]) -> Self {
        Self {
            dataset_rows,
            seed,
            participants: participants
                .iter()
                .map(|p| ManifestEntry {
                    participant: p.id,
                    size_fraction: p.size_fraction,
                    positive_rate: p.positive_rate,
                    train: p.train_rows.clone(),
                    val: p.val_rows.clone(),
                    test: p.test_rows.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds the participants' splits from `dataset`.
    pub fn replay(&self, dataset: &Dataset) -> Result<Vec<ParticipantData>> {
        if dataset.len() != self.dataset_rows {
            return Err(Error::Schema(format!(
                "manifest covers {} rows, dataset has {}",
                self.dataset_rows,
                dataset.len()
            )));
        }
        self.participants
            .iter()
            .map(|e| {
                if let Some(&bad) = e
                    .train
                    .iter()
                    .chain(&e.val)
                    .chain(&e.test)
                    .find(|&&r| r >= dataset.len())
                {
                    return Err(Error::Schema(format!("manifest row {bad} out of range")));
                }
                Ok(ParticipantData {
                    id: e.participant,
                    train: dataset.subset(&e.train),
                    val: dataset.subset(&e.val),
                    test: dataset.subset(&e.test),
                    train_rows: e.train.clone(),
                    val_rows: e.val.clone(),
                    test_rows: e.test.clone(),
                    size_fraction: e.size_fraction,
                    positive_rate: e.positive_rate,
                    imputed_features: Vec::new(),
                })
            })
            .collect()
    }
}

// --- missing-feature protocol --------------------------------------------------

/// Removes `feature` from every split and records it as pending imputation.
pub fn mask_feature(participant: &ParticipantData, feature: &str) -> Result<ParticipantData> {
    let index = participant.train.feature_index(feature)?;
    let drop = |d: &Dataset| {
        let (features, _) = d.features.remove_column(index);
        let mut names = d.feature_names.clone();
        names.remove(index);
        Dataset {
            feature_names: names,
            features,
            labels: d.labels.clone(),
        }
    };
    let mut out = participant.clone();
    out.train = drop(&participant.train);
    out.val = drop(&participant.val);
    out.test = drop(&participant.test);
    out.imputed_features.push(ImputedFeature {
        name: feature.to_string(),
        index,
        status: ImputationStatus::Pending,
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistribution {
    pub feature: String,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: u64,
}

/// Summary statistics of one column over the donor's training split only.
pub fn compute_feature_distribution(donor: &ParticipantData, feature: &str) -> Result<FeatureDistribution> {
    let idx = donor.train.feature_index(feature)?;
    if donor.train.is_empty() {
        return Err(Error::Domain("donor has an empty training split".into()));
    }
    let column = donor.train.features.column(idx);
    let n = column.len() as f64;
    let mean = column.iter().sum::<f64>() / n;
    let var = column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(FeatureDistribution {
        feature: feature.to_string(),
        mean,
        std: var.sqrt(),
        n: column.len() as u64,
    })
}

/// `u32 LE name length, name bytes, mean f64 LE, std f64 LE, n u64 LE`.
pub fn serialize_distribution(dist: &FeatureDistribution) -> Result<Vec<u8>> {
    if !(dist.mean.is_finite() && dist.std.is_finite()) {
        return Err(Error::Numerical("distribution has non-finite moments".into()));
    }
    let name = dist.feature.as_bytes();
    let len = u32::try_from(name.len()).map_err(|_| Error::Config("feature name too long".into()))?;
    let mut out = Vec::with_capacity(4 + name.len() + 24);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name);
    out.extend_from_slice(&dist.mean.to_le_bytes());
    out.extend_from_slice(&dist.std.to_le_bytes());
    out.extend_from_slice(&dist.n.to_le_bytes());
    Ok(out)
}

pub fn deserialize_distribution(bytes: &[u8]) -> Result<FeatureDistribution> {
    let mut pos = 0;
    let len_bytes = cipher::read_bytes(bytes, &mut pos, 4)?;
    let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
    if bytes.len() != 4 + len + 24 {
        return Err(Error::Integrity(format!(
            "distribution payload is {} bytes but declares a {len}-byte name",
            bytes.len()
        )));
    }
    let name = cipher::read_bytes(bytes, &mut pos, len)?;
    let feature = String::from_utf8(name.to_vec()).map_err(|_| Error::Integrity("feature name is not UTF-8".into()))?;
    let mean = cipher::read_f64(bytes, &mut pos)?;
    let std = cipher::read_f64(bytes, &mut pos)?;
    let n = cipher::read_u64(bytes, &mut pos)?;
    if !mean.is_finite() || !(std >= 0.0 && std.is_finite()) || n == 0 {
        return Err(Error::Integrity("distribution fields out of range".into()));
    }
    Ok(FeatureDistribution { feature, mean, std, n })
}

pub fn share_distribution_encrypted(dist: &FeatureDistribution, key: &ChaosKey) -> Result<CipherBlob> {
    cipher::encrypt(&serialize_distribution(dist)?, key)
}

pub fn receive_distribution(blob: &CipherBlob, key: &ChaosKey) -> Result<FeatureDistribution> {
    deserialize_distribution(&cipher::decrypt(blob, key)?)
}

/// Re-inserts the pending column at its original index, filled with `dist.mean`.
pub fn impute_missing(masked: &ParticipantData, dist: &FeatureDistribution) -> Result<ParticipantData> {
    let slot = masked
        .imputed_features
        .iter()
        .position(|f| f.name == dist.feature && f.status == ImputationStatus::Pending)
        .ok_or_else(|| Error::Schema(format!("no pending imputation for feature {:?}", dist.feature)))?;
    let index = masked.imputed_features[slot].index;
    let restore = |d: &Dataset| -> Result<Dataset> {
        let features = d.features.insert_column(index, &vec![dist.mean; d.len()])?;
        let mut names = d.feature_names.clone();
        names.insert(index, dist.feature.clone());
        Ok(Dataset {
            feature_names: names,
            features,
            labels: d.labels.clone(),
        })
    };
    let mut out = masked.clone();
    out.train = restore(&masked.train)?;
    out.val = restore(&masked.val)?;
    out.test = restore(&masked.test)?;
    out.imputed_features[slot].status = ImputationStatus::Completed;
    Ok(out)
}

/// The largest participant other than `missing` (ties to the lowest id).
pub fn default_donor(participants: &[ParticipantData], missing: usize) -> Option<usize> {
    participants
        .iter()
        .filter(|p| p.id != missing)
        .max_by(|a, b| a.n_rows().cmp(&b.n_rows()).then(b.id.cmp(&a.id)))
        .map(|p| p.id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, pos_every: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let labels = (0..n).map(|i| if i % pos_every == 0 { 1.0 } else { 0.0 }).collect();
        Dataset::new(vec!["a".into(), "b".into()], Tensor2::from_rows(&rows).unwrap(), labels).unwrap()
    }

    fn tokens() -> Vec<String> {
        DEFAULT_MISSING_TOKENS.iter().map(|s| s.to_string()).collect()
    }

    fn spec(mode: PartitionMode) -> PartitionSpec {
        PartitionSpec {
            mode,
            label_skew: None,
            missing_feature: None,
            seed: 3,
        }
    }

    #[test]
    fn csv_median_fill_and_categoricals() {
        let text = "x,color,y\n1,red,0\n?,blue,1\n3,red,1\n10,green,0\n";
        let d = parse_csv(text.as_bytes(), "y", &tokens()).unwrap();
        assert_eq!(d.feature_names, vec!["x", "color"]);
        assert_eq!(d.features.column(0), vec![1.0, 3.0, 3.0, 10.0]);
        // blue < green < red
        assert_eq!(d.features.column(1), vec![2.0, 0.0, 2.0, 1.0]);
        assert_eq!(d.labels, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn csv_drops_unlabeled_rows() {
        let d = parse_csv("x,y\n1,1\n2,?\n3,0\n".as_bytes(), "y", &tokens()).unwrap();
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn csv_errors() {
        let e = parse_csv("x,y\n1,2\n".as_bytes(), "y", &tokens()).unwrap_err();
        assert!(matches!(e, Error::Schema(_)));
        let e = parse_csv("x,y\n1,0\n2\n".as_bytes(), "y", &tokens()).unwrap_err();
        assert!(matches!(e, Error::Format { row: 3, .. }), "{e:?}");
        let e = parse_csv("x,y\n1,0\n".as_bytes(), "label", &tokens()).unwrap_err();
        assert!(matches!(e, Error::Schema(_)));
    }

    #[test]
    fn standardize_uses_train_stats() {
        let train = Dataset::new(
            vec!["a".into(), "c".into()],
            Tensor2::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap(),
            vec![0.0, 1.0],
        )
        .unwrap();
        let test = Dataset::new(
            vec!["a".into(), "c".into()],
            Tensor2::from_rows(&[vec![10.0, 7.0], vec![12.0, 9.0]]).unwrap(),
            vec![0.0, 1.0],
        )
        .unwrap();
        let (t, o) = standardize(&train, &[test]);
        assert_eq!(t.features.column(0), vec![-1.0, 1.0]);
        assert_eq!(t.features.column(1), vec![5.0, 5.0]);
        // train mean 2, std 1; test's own mean would be 11
        assert_eq!(o[0].features.column(0), vec![8.0, 10.0]);
        assert_eq!(o[0].features.column(1), vec![7.0, 9.0]);
    }

    #[test]
    fn even_partition_sizes() {
        let shards = partition(&toy(100, 3), &spec(PartitionMode::Even), 5).unwrap();
        assert_eq!(shards.iter().map(|s| s.rows.len()).collect::<Vec<_>>(), vec![20; 5]);
        let shards = partition(&toy(103, 3), &spec(PartitionMode::Even), 5).unwrap();
        assert_eq!(
            shards.iter().map(|s| s.rows.len()).collect::<Vec<_>>(),
            vec![21, 21, 21, 20, 20]
        );
    }

    #[test]
    fn proportion_partition_matches_table_sizes() {
        // the published percentages 52/5/5/14/25 are rounded and sum to 101
        let pct = [52.0, 5.0, 5.0, 14.0, 25.0];
        let fractions: Vec<f64> = pct.iter().map(|p| p / 101.0).collect();
        let shards = partition(&toy(569, 3), &spec(PartitionMode::Proportions { fractions }), 5).unwrap();
        let sizes: Vec<usize> = shards.iter().map(|s| s.rows.len()).collect();
        assert_eq!(sizes, vec![293, 28, 28, 79, 141]);
        let raw = spec(PartitionMode::Proportions {
            fractions: pct.iter().map(|p| p / 100.0).collect(),
        });
        assert!(matches!(partition(&toy(569, 3), &raw, 5), Err(Error::Config(_))));
    }

    #[test]
    fn forced_small_contract() {
        for seed in 0..20 {
            let s = PartitionSpec {
                seed,
                ..spec(PartitionMode::ForcedSmall {
                    min_small: 2,
                    small_cap: 0.10,
                })
            };
            let shards = partition(&toy(569, 3), &s, 5).unwrap();
            let small = shards.iter().filter(|s| s.size_fraction <= 0.10).count();
            assert!(small >= 2, "seed {seed}: {small}");
        }
        let bad = spec(PartitionMode::ForcedSmall {
            min_small: 2,
            small_cap: 0.2,
        });
        assert!(partition(&toy(569, 3), &bad, 5).is_err());
    }

    #[test]
    fn label_skew_hits_targets() {
        let d = toy(500, 3);
        let s = PartitionSpec {
            label_skew: Some(vec![0.47, 0.41, 0.31, 0.25, 0.22]),
            ..spec(PartitionMode::Even)
        };
        let shards = partition(&d, &s, 5).unwrap();
        for (sh, t) in shards.iter().zip(s.label_skew.as_ref().unwrap()) {
            assert!((sh.positive_rate - t).abs() <= LABEL_SKEW_TOLERANCE + 1e-12);
        }
        let infeasible = PartitionSpec {
            label_skew: Some(vec![0.9; 5]),
            ..spec(PartitionMode::Even)
        };
        assert!(matches!(partition(&d, &infeasible, 5), Err(Error::Feasibility(_))));
    }

    #[test]
    fn too_few_rows_rejected() {
        assert!(partition(&toy(40, 3), &spec(PartitionMode::Even), 5).is_err());
    }

    #[test]
    fn split_sizes_and_stratification() {
        let d = toy(100, 3);
        let shard = Shard {
            participant: 1,
            rows: (0..100).collect(),
            size_fraction: 1.0,
            positive_rate: d.positive_rate(),
        };
        let p = split_tvt(&d, &shard, SplitRatios::default(), 9).unwrap();
        assert_eq!((p.train.len(), p.val.len(), p.test.len()), (70, 15, 15));
        let expected = 70.0 * d.positive_rate();
        assert!((p.train.positives() as f64 - expected).abs() <= 1.0);
        assert_eq!(split_tvt(&d, &shard, SplitRatios::default(), 9).unwrap(), p);
        let mut all: Vec<usize> = p
            .train_rows
            .iter()
            .chain(&p.val_rows)
            .chain(&p.test_rows)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn small_shard_keeps_every_split_nonempty() {
        let d = toy(10, 2);
        let shard = Shard {
            participant: 2,
            rows: (0..10).collect(),
            size_fraction: 1.0,
            positive_rate: 0.5,
        };
        let p = split_tvt(&d, &shard, SplitRatios::default(), 1).unwrap();
        assert!(!p.train.is_empty() && !p.val.is_empty() && !p.test.is_empty());
        assert_eq!(p.n_rows(), 10);
    }

    fn participant() -> ParticipantData {
        let d = toy(60, 3);
        let shard = Shard {
            participant: 1,
            rows: (0..60).collect(),
            size_fraction: 1.0,
            positive_rate: d.positive_rate(),
        };
        split_tvt(&d, &shard, SplitRatios::default(), 4).unwrap()
    }

    #[test]
    fn distribution_of_known_column() {
        let mut p = participant();
        p.train = Dataset::new(
            vec!["a".into(), "b".into()],
            Tensor2::from_rows(&[vec![1.0, 4.0], vec![2.0, 4.0], vec![3.0, 4.0]]).unwrap(),
            vec![0.0, 1.0, 0.0],
        )
        .unwrap();
        let d = compute_feature_distribution(&p, "a").unwrap();
        assert_eq!((d.mean, d.n), (2.0, 3));
        assert!((d.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(compute_feature_distribution(&p, "b").unwrap().std, 0.0);
        assert!(compute_feature_distribution(&p, "zzz").is_err());
    }

    #[test]
    fn mask_then_impute_restores_shape() {
        let p = participant();
        let masked = mask_feature(&p, "a").unwrap();
        assert_eq!(masked.train.feature_names, vec!["b"]);
        assert_eq!(masked.imputed_features[0].status, ImputationStatus::Pending);
        let dist = FeatureDistribution {
            feature: "a".into(),
            mean: 3.0,
            std: 1.0,
            n: 10,
        };
        let restored = impute_missing(&masked, &dist).unwrap();
        assert_eq!(restored.train.feature_names, p.train.feature_names);
        assert!(restored.test.features.column(0).iter().all(|&v| v == 3.0));
        assert_eq!(restored.train.features.column(1), p.train.features.column(1));
        assert_eq!(restored.imputed_features[0].status, ImputationStatus::Completed);
        assert!(impute_missing(&restored, &dist).is_err());
        assert!(matches!(mask_feature(&p, "nope"), Err(Error::Schema(_))));
    }

    #[test]
    fn encrypted_distribution_roundtrip() {
        let key = ChaosKey::new(3.8, 0.31, 1000).unwrap();
        for name in ["mean radius", ""] {
            let dist = FeatureDistribution {
                feature: name.into(),
                mean: -1.25e-3,
                std: 0.5,
                n: 77,
            };
            let blob = share_distribution_encrypted(&dist, &key).unwrap();
            assert_eq!(blob.len(), 4 + name.len() + 24);
            assert_eq!(receive_distribution(&blob, &key).unwrap(), dist);
            let wrong = ChaosKey { x0: 0.32, ..key };
            assert!(receive_distribution(&blob, &wrong).is_err());
        }
    }

    #[test]
    fn manifest_replay_is_exact() {
        let d = toy(100, 4);
        let shards = partition(&d, &spec(PartitionMode::Even), 5).unwrap();
        let parts: Vec<_> = shards
            .iter()
            .map(|s| split_tvt(&d, s, SplitRatios::default(), 1).unwrap())
            .collect();
        let m = PartitionManifest::from_participants(d.len(), 1, &parts);
        let json = serde_json::to_string(&m).unwrap();
        let back: PartitionManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back.replay(&d).unwrap(), parts);
    }
}
