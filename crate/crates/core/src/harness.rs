//! End-to-end experiment pipeline behind the `partition`, `run` and `report`
//! subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{self, Dataset, FeatureDistribution, ParticipantData, PartitionManifest};
use crate::error::{Error, Result};
use crate::federation::{self, FederationResult, ModeKind, Participant};
use crate::metrics::{self, ExperimentTable, ExportFormat};

/// What happened during the missing-feature exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationLog {
    pub participant: usize,
    pub donor: usize,
    pub feature: String,
    pub blob_len: usize,
    pub received: FeatureDistribution,
}

/// Partitioned and split participants for one seed, before standardization.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub participants: Vec<ParticipantData>,
    pub manifest: PartitionManifest,
    pub imputation: Option<ImputationLog>,
}

/// Partition → split → (mask, encrypted share, impute).
pub fn prepare(cfg: &RunConfig, dataset: &Dataset, seed: u64) -> Result<PreparedData> {
    let spec = cfg.partition_spec(seed);
    let n = cfg.federation.participants;
    let shards = data::partition(dataset, &spec, n)?;
    let mut participants = shards
        .iter()
        .map(|s| data::split_tvt(dataset, s, cfg.split_ratios(), seed))
        .collect::<Result<Vec<_>>>()?;
    let manifest = PartitionManifest::from_participants(dataset.len(), seed, &participants);

    let imputation = match &spec.missing_feature {
        None => None,
        Some(m) => {
            let target = m.participant - 1;
            let donor = match m.donor {
                Some(d) => d,
                None => data::default_donor(&participants, m.participant)
                    .ok_or_else(|| Error::Config("no donor available".into()))?,
            };
            let dist = data::compute_feature_distribution(&participants[donor - 1], &m.feature)?;
            // the summary travels over the receiving participant's chaotic link
            let key = federation::derive_chaos_key(seed, m.participant, cfg.chaos.r, cfg.chaos.burn_in)?;
            let blob = data::share_distribution_encrypted(&dist, &key)?;
            let received = data::receive_distribution(&blob, &key)?;
            let masked = data::mask_feature(&participants[target], &m.feature)?;
            participants[target] = data::impute_missing(&masked, &received)?;
            Some(ImputationLog {
                participant: m.participant,
                donor,
                feature: m.feature.clone(),
                blob_len: blob.len(),
                received,
            })
        }
    };
    Ok(PreparedData {
        participants,
        manifest,
        imputation,
    })
}

/// Standardized participants wired for one privacy mode.
pub fn participants_for(
    cfg: &RunConfig,
    prepared: &PreparedData,
    mode: ModeKind,
    seed: u64,
) -> Result<Vec<Participant>> {
    prepared
        .participants
        .iter()
        .map(|p| {
            let chaos_key = match mode {
                ModeKind::Chaos => Some(federation::derive_chaos_key(
                    seed,
                    p.id,
                    cfg.chaos.r,
                    cfg.chaos.burn_in,
                )?),
                _ => None,
            };
            Ok(Participant {
                id: p.id,
                data: p.standardized(),
                chaos_key,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub prepared: PreparedData,
    pub results: Vec<(ModeKind, FederationResult)>,
    pub table: ExperimentTable,
}

impl SeedOutcome {
    pub fn result(&self, mode: ModeKind) -> Option<&FederationResult> {
        self.results.iter().find(|(m, _)| *m == mode).map(|(_, r)| r)
    }
}

pub fn run_seed(cfg: &RunConfig, dataset: &Dataset, seed: u64, modes: &[ModeKind]) -> Result<SeedOutcome> {
    let prepared = prepare(cfg, dataset, seed)?;
    let mut results = Vec::with_capacity(modes.len());
    for &mode in modes {
        let participants = participants_for(cfg, &prepared, mode, seed)?;
        let fed = cfg.federation_config(mode, dataset.n_features(), seed);
        results.push((mode, federation::run_federation(&fed, &participants)?));
    }
    let table = metrics::build_table(&results)?;
    Ok(SeedOutcome {
        seed,
        prepared,
        results,
        table,
    })
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    data::load_csv(
        cfg.dataset_path(),
        &cfg.dataset.label_column,
        &cfg.dataset.missing_tokens,
    )
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub seeds: Vec<SeedOutcome>,
    pub mean: ExperimentTable,
    pub std: ExperimentTable,
}

/// Runs every seed (optionally overridden) for the selected modes.
pub fn run_experiment(cfg: &RunConfig, seeds: &[u64], modes: &[ModeKind]) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let dataset = load_dataset(cfg)?;
    let seeds = seeds
        .iter()
        .map(|&s| run_seed(cfg, &dataset, s, modes))
        .collect::<Result<Vec<_>>>()?;
    let tables: Vec<ExperimentTable> = seeds.iter().map(|s| s.table.clone()).collect();
    let (mean, std) = metrics::aggregate_tables(&tables)?;
    Ok(ExperimentOutcome { seeds, mean, std })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn partition_summary(prepared: &PreparedData) -> String {
    let mut s = String::from("participant\tsize\tpos\ttrain\tval\ttest\n");
    for p in &prepared.participants {
        writeln!(
            s,
            "{}\t{:.0}%\t{:.0}%\t{}\t{}\t{}",
            p.id,
            100.0 * p.size_fraction,
            100.0 * p.positive_rate,
            p.train.len(),
            p.val.len(),
            p.test.len()
        )
        .unwrap();
    }
    s
}

/// Writes one partition manifest per seed and returns the printable summary.
pub fn cmd_partition(cfg: &RunConfig, seeds: &[u64], out: &Path) -> Result<String> {
    cfg.validate()?;
    let dataset = load_dataset(cfg)?;
    create_dir(out)?;
    let mut report = String::new();
    for &seed in seeds {
        let prepared = prepare(cfg, &dataset, seed)?;
        let dir = seed_dir(out, seed);
        create_dir(&dir)?;
        write_json(&dir.join("manifest.json"), &prepared.manifest)?;
        writeln!(report, "seed {seed}").unwrap();
        report.push_str(&partition_summary(&prepared));
    }
    Ok(report)
}

/// Runs the experiment and writes per-seed and seed-averaged results under `out`.
pub fn cmd_run(cfg: &RunConfig, seeds: &[u64], modes: &[ModeKind], out: &Path) -> Result<ExperimentOutcome> {
    let outcome = run_experiment(cfg, seeds, modes)?;
    create_dir(out)?;
    for s in &outcome.seeds {
        let dir = seed_dir(out, s.seed);
        create_dir(&dir)?;
        write_json(&dir.join("manifest.json"), &s.prepared.manifest)?;
        if let Some(log) = &s.prepared.imputation {
            write_json(&dir.join("imputation.json"), log)?;
        }
        for (mode, result) in &s.results {
            write_json(&dir.join(format!("result-{mode}.json")), result)?;
        }
        metrics::export(&s.table, ExportFormat::Csv, dir.join("table.csv"))?;
        metrics::export(&s.table, ExportFormat::Json, dir.join("table.json"))?;
    }
    metrics::export(&outcome.mean, ExportFormat::Csv, out.join("mean_table.csv"))?;
    metrics::export(&outcome.std, ExportFormat::Csv, out.join("std_table.csv"))?;
    Ok(outcome)
}

/// Per-seed tables found under `dir`, in seed order.
pub fn collect_tables(dir: &Path) -> Result<Vec<(u64, ExperimentTable)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(seed) = name.strip_prefix("seed-").and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        let table_path = entry.path().join("table.csv");
        if table_path.is_file() {
            found.push((seed, metrics::reload(ExportFormat::Csv, &table_path)?));
        }
    }
    found.sort_by_key(|(s, _)| *s);
    if found.is_empty() {
        return Err(Error::Config(format!("no seed-*/table.csv under {}", dir.display())));
    }
    Ok(found)
}

/// Mean ± std for every cell across the seeds found in `dir`.
pub fn cmd_report(dir: &Path) -> Result<String> {
    let found = collect_tables(dir)?;
    let tables: Vec<ExperimentTable> = found.iter().map(|(_, t)| t.clone()).collect();
    let (mean, std) = metrics::aggregate_tables(&tables)?;
    let mut out = String::new();
    let seeds: Vec<String> = found.iter().map(|(s, _)| s.to_string()).collect();
    writeln!(out, "seeds: {}", seeds.join(", ")).unwrap();
    let header: Vec<&str> = metrics::CSV_HEADER.split(',').collect();
    writeln!(out, "{}", header.join("\t")).unwrap();
    let rows = mean
        .rows
        .iter()
        .zip(&std.rows)
        .chain(std::iter::once((&mean.avg_row, &std.avg_row)));
    for (m, s) in rows {
        let cells: Vec<String> = m
            .cells()
            .iter()
            .zip(s.cells())
            .map(|(m, s)| match (m, s) {
                (Some(m), Some(s)) => format!("{m:.4}±{s:.4}"),
                _ => "-".to_string(),
            })
            .collect();
        writeln!(out, "{}\t{}", m.participant, cells.join("\t")).unwrap();
    }
    Ok(out)
}
