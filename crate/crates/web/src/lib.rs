//! wasm-bindgen surface for the static demo page in `www/`.

use fedchaos::cipher::{self, ChaosKey, CipherBlob, Trajectory};
use fedchaos::data::{self, Dataset, PartitionMode, PartitionSpec};
use fedchaos::tensor::Tensor2;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: fedchaos::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn key(r: f64, x0: f64, burn_in: u32) -> Result<ChaosKey, JsError> {
    ChaosKey::new(r, x0, burn_in).map_err(js_err)
}

/// `n` map values after discarding `burn_in` iterations.
#[wasm_bindgen]
pub fn logistic_orbit(r: f64, x0: f64, burn_in: u32, n: usize) -> Result<Vec<f64>, JsError> {
    Ok(Trajectory::new(&key(r, x0, burn_in)?)
        .map_err(js_err)?
        .take(n)
        .collect())
}

/// Bifurcation samples as flat `[r, x, r, x, ...]` pairs. Unlike the cipher,
/// this sweeps any `r` in `[0, 4]`, including the periodic region.
#[wasm_bindgen]
pub fn bifurcation(r_min: f64, r_max: f64, columns: usize, burn_in: u32, keep: usize) -> Result<Vec<f64>, JsError> {
    if !(0.0..=4.0).contains(&r_min) || !(0.0..=4.0).contains(&r_max) || r_min >= r_max {
        return Err(JsError::new("need 0 <= r_min < r_max <= 4"));
    }
    let mut out = Vec::with_capacity(columns * keep * 2);
    for c in 0..columns {
        let r = r_min + (r_max - r_min) * c as f64 / columns.saturating_sub(1).max(1) as f64;
        let mut x = 0.3;
        for _ in 0..burn_in {
            x = cipher::logistic_iterate(x, r).map_err(js_err)?;
        }
        for _ in 0..keep {
            x = cipher::logistic_iterate(x, r).map_err(js_err)?;
            out.push(r);
            out.push(x);
        }
    }
    Ok(out)
}

/// Byte-value counts over the first `n` keystream bytes (256 bins).
#[wasm_bindgen]
pub fn keystream_histogram(r: f64, x0: f64, burn_in: u32, n: usize) -> Result<Vec<u32>, JsError> {
    let mut counts = vec![0u32; 256];
    for b in cipher::keystream_bytes(&key(r, x0, burn_in)?, n).map_err(js_err)? {
        counts[b as usize] += 1;
    }
    Ok(counts)
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn from_hex(hex: &str) -> Result<Vec<u8>, JsError> {
    let hex: String = hex.chars().filter(|c| !c.is_whitespace()).collect();
    if !hex.len().is_multiple_of(2) {
        return Err(JsError::new("hex input has an odd number of digits"));
    }
    (0..hex.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| JsError::new("invalid hex digit")))
        .collect()
}

/// UTF-8 text in, ciphertext as lowercase hex out.
#[wasm_bindgen]
pub fn encrypt_text(text: &str, r: f64, x0: f64, burn_in: u32) -> Result<String, JsError> {
    Ok(to_hex(
        &cipher::encrypt(text.as_bytes(), &key(r, x0, burn_in)?)
            .map_err(js_err)?
            .payload,
    ))
}

/// Hex ciphertext in, text out. Undecodable bytes are shown as U+FFFD so a
/// wrong key visibly produces garbage rather than an error.
#[wasm_bindgen]
pub fn decrypt_hex(hex: &str, r: f64, x0: f64, burn_in: u32) -> Result<String, JsError> {
    let blob = CipherBlob {
        payload: from_hex(hex)?,
    };
    let plain = cipher::decrypt(&blob, &key(r, x0, burn_in)?).map_err(js_err)?;
    Ok(String::from_utf8_lossy(&plain).into_owned())
}

#[derive(Serialize)]
struct ShardView {
    participant: usize,
    rows: usize,
    size_fraction: f64,
    positive_rate: f64,
}

/// A synthetic dataset with `n_rows` rows of which `positives` are labelled 1.
fn synthetic(n_rows: usize, positives: usize) -> Result<Dataset, JsError> {
    if positives > n_rows {
        return Err(JsError::new("more positives than rows"));
    }
    let features = Tensor2::from_vec(n_rows, 1, (0..n_rows).map(|i| i as f64).collect()).map_err(js_err)?;
    let labels = (0..n_rows).map(|i| if i < positives { 1.0 } else { 0.0 }).collect();
    Dataset::new(vec!["row".into()], features, labels).map_err(js_err)
}

fn parse_list(text: &str) -> Result<Option<Vec<f64>>, JsError> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(None);
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| JsError::new(&format!("not a number: {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

/// Partitions a synthetic dataset and returns the shards as JSON.
///
/// `kind` is `even`, `proportions` or `forced_small`; `fractions` and
/// `label_skew` are comma-separated lists (empty for none).
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn partition_preview(
    n_rows: usize,
    positives: usize,
    n_participants: usize,
    kind: &str,
    fractions: &str,
    min_small: usize,
    small_cap: f64,
    label_skew: &str,
    seed: u64,
) -> Result<String, JsError> {
    let mode = match kind {
        "even" => PartitionMode::Even,
        "proportions" => PartitionMode::Proportions {
            fractions: parse_list(fractions)?.ok_or_else(|| JsError::new("proportions need a fraction list"))?,
        },
        "forced_small" => PartitionMode::ForcedSmall { min_small, small_cap },
        other => return Err(JsError::new(&format!("unknown partition kind {other:?}"))),
    };
    let spec = PartitionSpec {
        mode,
        label_skew: parse_list(label_skew)?,
        missing_feature: None,
        seed,
    };
    let dataset = synthetic(n_rows, positives)?;
    let shards = data::partition(&dataset, &spec, n_participants).map_err(js_err)?;
    let view: Vec<ShardView> = shards
        .iter()
        .map(|s| ShardView {
            participant: s.participant,
            rows: s.rows.len(),
            size_fraction: s.size_fraction,
            positive_rate: s.positive_rate,
        })
        .collect();
    serde_json::to_string(&view).map_err(|e| JsError::new(&e.to_string()))
}
