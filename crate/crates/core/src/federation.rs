//! Coordinated client–server rounds: distribute the global model, train
//! locally, transmit under the configured privacy mode, aggregate by
//! sample-weighted averaging.

use std::fmt;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::cipher::{self, ChaosKey};
use crate::data::ParticipantData;
use crate::dp::{self, DpConfig, PrivacySpent};
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::nn::{self, Mode, ModelParams, NetworkConfig};
use crate::rng::{self, SimRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Plain,
    Dp,
    Chaos,
}

impl ModeKind {
    pub const ALL: [ModeKind; 3] = [ModeKind::Plain, ModeKind::Dp, ModeKind::Chaos];
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeKind::Plain => "plain",
            ModeKind::Dp => "dp",
            ModeKind::Chaos => "chaos",
        })
    }
}

impl std::str::FromStr for ModeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(ModeKind::Plain),
            "dp" => Ok(ModeKind::Dp),
            "chaos" => Ok(ModeKind::Chaos),
            other => Err(Error::Config(format!("unknown mode {other:?} (plain|dp|chaos)"))),
        }
    }
}

/// How parameters travel from participants to the server. Chaotic-cipher keys
/// live on each [`Participant`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PrivacyMode {
    Plain,
    DifferentialPrivacy(DpConfig),
    ChaoticCipher,
}

impl PrivacyMode {
    pub fn kind(&self) -> ModeKind {
        match self {
            PrivacyMode::Plain => ModeKind::Plain,
            PrivacyMode::DifferentialPrivacy(_) => ModeKind::Dp,
            PrivacyMode::ChaoticCipher => ModeKind::Chaos,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Participant {
    pub id: usize,
    pub data: ParticipantData,
    pub chaos_key: Option<ChaosKey>,
}

impl Participant {
    pub fn n_train(&self) -> usize {
        self.data.train.len()
    }
}

/// Per-participant key for the participant–server link, derived from the run seed.
pub fn derive_chaos_key(seed: u64, participant: usize, r: f64, burn_in: u32) -> Result<ChaosKey> {
    let mut g = rng::derive(seed, Stream::ChaosKey, participant as u64, 0);
    // x0 in [0.05, 0.95); never the fixed point for r in the chaotic band
    let x0 = 0.05 + 0.9 * ((g.next_u64() >> 11) as f64 / (1u64 << 53) as f64);
    ChaosKey::new(r, x0, burn_in)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub n_participants: usize,
    pub rounds_max: usize,
    pub local_epochs: usize,
    /// Stop once mean validation accuracy reaches this value.
    pub val_accuracy_threshold: Option<f64>,
    pub mode: PrivacyMode,
    pub network: NetworkConfig,
    pub seed: u64,
}

impl FederationConfig {
    pub const DEFAULT_ROUNDS: usize = 10;
    pub const DEFAULT_LOCAL_EPOCHS: usize = 5;

    pub fn validate(&self) -> Result<()> {
        if self.n_participants < 2 {
            return Err(Error::Config(format!(
                "n_participants must be at least 2, got {}",
                self.n_participants
            )));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be at least 1".into()));
        }
        if let Some(t) = self.val_accuracy_threshold {
            if !t.is_finite() {
                return Err(Error::Config("val_accuracy_threshold must be finite".into()));
            }
        }
        if let PrivacyMode::DifferentialPrivacy(dp) = &self.mode {
            dp.validate()?;
        }
        self.network.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub global_loss_before: f64,
    pub global_loss_after: f64,
    pub mean_val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantReport {
    pub id: usize,
    pub size_fraction: f64,
    pub positive_rate: f64,
    pub n_train: usize,
    pub pre: Metrics,
    pub post: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationResult {
    pub participants: Vec<ParticipantReport>,
    pub history: Vec<RoundRecord>,
    pub privacy_spent: Option<PrivacySpent>,
    pub final_params: ModelParams,
}

impl FederationResult {
    pub fn mean_pre_accuracy(&self) -> f64 {
        mean(self.participants.iter().map(|p| p.pre.accuracy))
    }

    pub fn mean_post_accuracy(&self) -> f64 {
        mean(self.participants.iter().map(|p| p.post.accuracy))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Trains a copy of `global` on this participant's training split only.
/// Returns the new parameters and the number of optimizer steps taken.
pub fn local_train(
    participant: &Participant,
    global: &ModelParams,
    epochs: usize,
    mode: &PrivacyMode,
    network: &NetworkConfig,
    rng: &mut SimRng,
) -> Result<(ModelParams, u64)> {
    let train = &participant.data.train;
    if train.is_empty() {
        return Err(Error::Config(format!(
            "participant {} has an empty training split",
            participant.id
        )));
    }
    if global.layer_sizes() != network.layer_sizes {
        return Err(Error::Dimension(format!(
            "global params {:?} do not match network {:?}",
            global.layer_sizes(),
            network.layer_sizes
        )));
    }
    let n = train.len();
    let dropout = Mode::Train {
        dropout: network.dropout_rate,
    };
    let mut params = global.clone();
    let mut order: Vec<usize> = (0..n).collect();
    let mut steps = 0u64;

    for _ in 0..epochs {
        order.shuffle(rng);
        match mode {
            PrivacyMode::DifferentialPrivacy(dp_cfg) => {
                let cfg = dp_cfg.for_dataset(n);
                // trailing partial lot is skipped; the next epoch reshuffles
                for lot in order.chunks_exact(cfg.lot_size) {
                    let x = train.features.select_rows(lot);
                    let y: Vec<f64> = lot.iter().map(|&i| train.labels[i]).collect();
                    let per = nn::per_example_backward(&params, &x, &y, dropout, rng)?;
                    params = dp::dp_sgd_step(&params, &per, &cfg, network.learning_rate, rng)?;
                    steps += 1;
                }
            }
            PrivacyMode::Plain | PrivacyMode::ChaoticCipher => {
                let batch = network.batch_size.unwrap_or(n).min(n);
                for chunk in order.chunks(batch) {
                    let x = train.features.select_rows(chunk);
                    let y: Vec<f64> = chunk.iter().map(|&i| train.labels[i]).collect();
                    let (_, cache) = nn::forward(&params, &x, dropout, rng)?;
                    let g = nn::backward(&params, &cache, &x, &y)?;
                    params = nn::sgd_step(&params, &g, network.learning_rate)?;
                    steps += 1;
                }
            }
        }
    }
    Ok((params, steps))
}

/// Simulated upload. The chaotic mode seals and re-opens the parameters with
/// the participant's key (`open_key` defaults to the same key).
pub fn transmit(
    params: &ModelParams,
    mode: &PrivacyMode,
    key: Option<&ChaosKey>,
    open_key: Option<&ChaosKey>,
) -> Result<ModelParams> {
    match (mode, key) {
        (PrivacyMode::ChaoticCipher, Some(k)) => {
            let blob = cipher::seal_params(params, k)?;
            cipher::open_params(&blob, open_key.unwrap_or(k), &params.shapes())
        }
        (PrivacyMode::ChaoticCipher, None) => Err(Error::Config("chaotic mode needs a participant key".into())),
        (_, Some(_)) => Err(Error::Config("a chaos key was supplied outside chaotic mode".into())),
        (_, None) => Ok(params.clone()),
    }
}

/// `Σᵢ (nᵢ/Σn)·paramsᵢ`.
pub fn fed_avg(updates: &[(ModelParams, usize)]) -> Result<ModelParams> {
    let (first, _) = updates
        .first()
        .ok_or_else(|| Error::Config("nothing to aggregate".into()))?;
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Config("aggregation weights sum to zero".into()));
    }
    let mut acc = first.zeros_like();
    for (p, n) in updates {
        acc.add_scaled(p, *n as f64 / total as f64)?;
    }
    Ok(acc)
}

/// Unweighted mean over participants of the train-split BCE.
pub fn global_loss(participants: &[Participant], params: &ModelParams) -> Result<f64> {
    if participants.is_empty() {
        return Err(Error::Config("no participants".into()));
    }
    let mut total = 0.0;
    for p in participants {
        let pred = nn::predict(params, &p.data.train.features)?;
        total += nn::bce_loss(&pred, &p.data.train.labels)?;
    }
    Ok(total / participants.len() as f64)
}

pub fn mean_val_accuracy(participants: &[Participant], params: &ModelParams) -> Result<f64> {
    let mut total = 0.0;
    for p in participants {
        let pred = nn::predict(params, &p.data.val.features)?;
        total += Metrics::from_probabilities(&pred, &p.data.val.labels)?.accuracy;
    }
    Ok(total / participants.len() as f64)
}

pub fn check_termination(history: &[RoundRecord], config: &FederationConfig) -> bool {
    if history.len() >= config.rounds_max {
        return true;
    }
    match (config.val_accuracy_threshold, history.last()) {
        (Some(t), Some(last)) => last.mean_val_accuracy >= t,
        _ => false,
    }
}

fn map_participants<T, F>(participants: &[Participant], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Participant) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        participants.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        participants.iter().map(f).collect()
    }
}

pub struct RoundOutcome {
    pub params: ModelParams,
    pub record: RoundRecord,
    /// Optimizer steps per participant, in participant order.
    pub steps: Vec<u64>,
}

/// One distribute → train → transmit → aggregate cycle (1-based `round`).
pub fn run_round(
    participants: &[Participant],
    global: &ModelParams,
    config: &FederationConfig,
    round: usize,
) -> Result<RoundOutcome> {
    let before = global_loss(participants, global)?;
    let updates = map_participants(participants, |p| {
        let mut rng = rng::derive(config.seed, Stream::RoundTrain, p.id as u64, round as u64);
        let (local, steps) = local_train(p, global, config.local_epochs, &config.mode, &config.network, &mut rng)?;
        let received = transmit(&local, &config.mode, p.chaos_key.as_ref(), None)?;
        Ok((received, p.n_train(), steps))
    })?;
    let steps = updates.iter().map(|u| u.2).collect();
    let weighted: Vec<(ModelParams, usize)> = updates.into_iter().map(|(p, n, _)| (p, n)).collect();
    let params = fed_avg(&weighted)?;
    let record = RoundRecord {
        round,
        global_loss_before: before,
        global_loss_after: global_loss(participants, &params)?,
        mean_val_accuracy: mean_val_accuracy(participants, &params)?,
    };
    Ok(RoundOutcome { params, record, steps })
}

fn evaluate(params: &ModelParams, p: &Participant) -> Result<Metrics> {
    let pred = nn::predict(params, &p.data.test.features)?;
    Metrics::from_probabilities(&pred, &p.data.test.labels)
}

fn check_participants(config: &FederationConfig, participants: &[Participant]) -> Result<()> {
    if participants.len() != config.n_participants {
        return Err(Error::Config(format!(
            "config expects {} participants, got {}",
            config.n_participants,
            participants.len()
        )));
    }
    let width = config.network.layer_sizes[0];
    for p in participants {
        let d = &p.data;
        if d.train.is_empty() || d.val.is_empty() || d.test.is_empty() {
            return Err(Error::Config(format!("participant {} has an empty split", p.id)));
        }
        if d.train.n_features() != width {
            return Err(Error::Dimension(format!(
                "participant {} has {} features, network expects {width}",
                p.id,
                d.train.n_features()
            )));
        }
        let chaotic = matches!(config.mode, PrivacyMode::ChaoticCipher);
        if chaotic != p.chaos_key.is_some() {
            return Err(Error::Config(format!(
                "participant {}: chaos key must be present exactly in chaotic mode",
                p.id
            )));
        }
    }
    Ok(())
}

/// Pre-FL baseline (each participant alone, same initialization and the same
/// total number of local epochs), then federated rounds until termination,
/// then the final global model on every participant's test split.
pub fn run_federation(config: &FederationConfig, participants: &[Participant]) -> Result<FederationResult> {
    config.validate()?;
    check_participants(config, participants)?;
    let init_seed = rng::derive(config.seed, Stream::Init, 0, 0).next_u64();
    let initial = nn::init_network(&config.network, init_seed)?;

    let solo_epochs = config.rounds_max * config.local_epochs;
    let pre = map_participants(participants, |p| {
        let mut rng = rng::derive(config.seed, Stream::PreTrain, p.id as u64, 0);
        let (local, _) = local_train(p, &initial, solo_epochs, &config.mode, &config.network, &mut rng)?;
        evaluate(&local, p)
    })?;

    let mut global = initial;
    let mut history = Vec::new();
    let mut steps = vec![0u64; participants.len()];
    while !check_termination(&history, config) {
        let outcome = run_round(participants, &global, config, history.len() + 1)?;
        global = outcome.params;
        history.push(outcome.record);
        for (total, s) in steps.iter_mut().zip(outcome.steps) {
            *total += s;
        }
    }

    let privacy_spent = match &config.mode {
        PrivacyMode::DifferentialPrivacy(dp_cfg) => {
            let mut worst: Option<PrivacySpent> = None;
            for (p, &s) in participants.iter().zip(&steps) {
                let spent = dp::estimate_epsilon(&dp_cfg.for_dataset(p.n_train()), s, p.n_train())?;
                if worst.is_none_or(|w| spent.epsilon > w.epsilon) {
                    worst = Some(spent);
                }
            }
            worst
        }
        _ => None,
    };

    let reports = participants
        .iter()
        .zip(pre)
        .map(|(p, pre)| {
            Ok(ParticipantReport {
                id: p.id,
                size_fraction: p.data.size_fraction,
                positive_rate: p.data.positive_rate,
                n_train: p.n_train(),
                pre,
                post: evaluate(&global, p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(FederationResult {
        participants: reports,
        history,
        privacy_spent,
        final_params: global,
    })
}
