#![allow(dead_code)]

use std::path::PathBuf;

use fedchaos::config::RunConfig;
use fedchaos::data::{self, Dataset, PartitionMode, PartitionSpec, SplitRatios};
use fedchaos::federation::{self, FederationConfig, ModeKind, Participant, PrivacyMode};
use fedchaos::nn::{self, Mode, ModelParams, NetworkConfig};
use fedchaos::tensor::Tensor2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn breast_cancer_path() -> PathBuf {
    workspace_root().join("data/breast_cancer.csv")
}

/// A run config pointing at the bundled dataset, with `extra` TOML appended.
pub fn breast_cancer_config(extra: &str) -> RunConfig {
    let text = format!(
        "seeds = [1, 2, 3, 4, 5]\n\
         [dataset]\npath = \"data/breast_cancer.csv\"\nlabel_column = \"diagnosis\"\n{extra}"
    );
    RunConfig::from_toml(&text, workspace_root()).expect("test config parses")
}

pub fn random_params(sizes: &[usize], rng: &mut impl Rng, scale: f64) -> ModelParams {
    let mut p = ModelParams::zeros(sizes);
    for v in p.values_mut() {
        *v = rng.random_range(-scale..scale);
    }
    p
}

pub fn random_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor2 {
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor2::from_vec(rows, cols, data).unwrap()
}

fn loss_at(params: &ModelParams, x: &Tensor2, y: &[f64]) -> f64 {
    nn::bce_loss(&nn::predict(params, x).unwrap(), y).unwrap()
}

fn relu_pattern(params: &ModelParams, x: &Tensor2) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, cache) = nn::forward(params, x, Mode::Eval, &mut rng).unwrap();
    let hidden = cache.pre_activations.len() - 1;
    cache.pre_activations[..hidden]
        .iter()
        .flat_map(|z| z.data().iter().map(|v| *v > 0.0))
        .collect()
}

pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates where the ±h probe crosses a ReLU kink, so the loss is not
    /// differentiable inside the stencil.
    pub skipped: usize,
}

/// Central differences with step `h` against `backward`, relative error
/// `|a − n| / max(|a|, |n|, floor)`.
pub fn gradient_check(params: &ModelParams, x: &Tensor2, y: &[f64], h: f64, floor: f64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, cache) = nn::forward(params, x, Mode::Eval, &mut rng).unwrap();
    let analytic: Vec<f64> = nn::backward(params, &cache, x, y).unwrap().values().copied().collect();
    let base_pattern = relu_pattern(params, x);

    let mut out = GradCheck {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = params.clone();
        *plus.values_mut().nth(i).unwrap() += h;
        let mut minus = params.clone();
        *minus.values_mut().nth(i).unwrap() -= h;
        if relu_pattern(&plus, x) != base_pattern || relu_pattern(&minus, x) != base_pattern {
            out.skipped += 1;
            continue;
        }
        let numeric = (loss_at(&plus, x, y) - loss_at(&minus, x, y)) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        out.max_rel_err = out.max_rel_err.max(rel);
        out.checked += 1;
    }
    out
}

/// Two Gaussian blobs in `n_features` dimensions, roughly 40% positive.
pub fn blobs(n: usize, n_features: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 };
        let shift = if y == 1.0 { 1.0 } else { -1.0 };
        rows.push((0..n_features).map(|_| shift + rng.random_range(-1.5..1.5)).collect());
        labels.push(y);
    }
    let names = (0..n_features).map(|i| format!("f{i}")).collect();
    Dataset::new(names, Tensor2::from_rows(&rows).unwrap(), labels).unwrap()
}

/// Evenly partitioned, split and standardized participants over `dataset`.
pub fn even_participants(dataset: &Dataset, n: usize, seed: u64, mode: ModeKind) -> Vec<Participant> {
    let spec = PartitionSpec {
        mode: PartitionMode::Even,
        label_skew: None,
        missing_feature: None,
        seed,
    };
    data::partition(dataset, &spec, n)
        .unwrap()
        .iter()
        .map(|s| {
            let d = data::split_tvt(dataset, s, SplitRatios::default(), seed).unwrap();
            let chaos_key = match mode {
                ModeKind::Chaos => Some(federation::derive_chaos_key(seed, d.id, 3.8, 1000).unwrap()),
                _ => None,
            };
            Participant {
                id: d.id,
                data: d.standardized(),
                chaos_key,
            }
        })
        .collect()
}

pub fn small_federation(n_features: usize, n: usize, mode: PrivacyMode, rounds: usize, seed: u64) -> FederationConfig {
    let mut network = NetworkConfig::for_inputs(n_features);
    network.batch_size = Some(8);
    FederationConfig {
        n_participants: n,
        rounds_max: rounds,
        local_epochs: 2,
        val_accuracy_threshold: None,
        mode,
        network,
        seed,
    }
}
