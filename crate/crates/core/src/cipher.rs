//! Logistic-map keystream cipher and the canonical parameter wire format.
//!
//! The keystream iterates `x ← r·x·(1−x)`, discards `burn_in` values, then
//! emits one byte per iteration as `floor(frac(x)·2³²) mod 256`. Encryption
//! and decryption are the same XOR, so `decrypt(encrypt(m)) == m`.
//!
//! This is a simulation of a chaos-based obfuscation layer. It makes no
//! cryptographic security claim.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DenseLayer, ModelParams};
use crate::tensor::Tensor2;

pub const CHAOTIC_R_MIN: f64 = 3.57;
pub const CHAOTIC_R_MAX: f64 = 4.0;
pub const DEFAULT_R: f64 = 3.8;
pub const DEFAULT_BURN_IN: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChaosKey {
    pub r: f64,
    pub x0: f64,
    pub burn_in: u32,
}

impl ChaosKey {
    pub fn new(r: f64, x0: f64, burn_in: u32) -> Result<Self> {
        let key = Self { r, x0, burn_in };
        key.validate()?;
        Ok(key)
    }

    pub fn validate(&self) -> Result<()> {
        if !(CHAOTIC_R_MIN..=CHAOTIC_R_MAX).contains(&self.r) {
            return Err(Error::Domain(format!(
                "r = {} is outside the chaotic band [{CHAOTIC_R_MIN}, {CHAOTIC_R_MAX}]",
                self.r
            )));
        }
        if !(self.x0 > 0.0 && self.x0 < 1.0) {
            return Err(Error::Domain(format!("x0 = {} must lie in (0, 1)", self.x0)));
        }
        if self.x0 == 1.0 - 1.0 / self.r {
            return Err(Error::Domain(format!("x0 = {} is the map's fixed point", self.x0)));
        }
        Ok(())
    }
}

/// One step of the logistic map.
pub fn logistic_iterate(x: f64, r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("x = {x} outside [0, 1]")));
    }
    if !(0.0..=4.0).contains(&r) {
        return Err(Error::Domain(format!("r = {r} outside [0, 4]")));
    }
    Ok(step(x, r))
}

#[inline]
fn step(x: f64, r: f64) -> f64 {
    r * x * (1.0 - x)
}

/// Map values after burn-in, one per call to `next`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    x: f64,
    r: f64,
}

impl Trajectory {
    pub fn new(key: &ChaosKey) -> Result<Self> {
        key.validate()?;
        let mut x = key.x0;
        for _ in 0..key.burn_in {
            x = step(x, key.r);
        }
        Ok(Self { x, r: key.r })
    }
}

impl Iterator for Trajectory {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        self.x = step(self.x, self.r);
        Some(self.x)
    }
}

#[inline]
fn to_byte(x: f64) -> u8 {
    let frac = x - x.floor();
    ((frac * 4_294_967_296.0).floor() as u64 % 256) as u8
}

pub fn keystream_bytes(key: &ChaosKey, n: usize) -> Result<Vec<u8>> {
    Ok(Trajectory::new(key)?.take(n).map(to_byte).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherBlob {
    pub payload: Vec<u8>,
}

impl CipherBlob {
    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }
}

fn xor_stream(data: &[u8], key: &ChaosKey) -> Result<Vec<u8>> {
    let stream = Trajectory::new(key)?;
    Ok(data.iter().zip(stream).map(|(&b, x)| b ^ to_byte(x)).collect())
}

pub fn encrypt(plain: &[u8], key: &ChaosKey) -> Result<CipherBlob> {
    Ok(CipherBlob {
        payload: xor_stream(plain, key)?,
    })
}

pub fn decrypt(blob: &CipherBlob, key: &ChaosKey) -> Result<Vec<u8>> {
    xor_stream(&blob.payload, key)
}

// --- canonical parameter wire format --------------------------------------

pub const WIRE_MAGIC: [u8; 4] = *b"FCHP";
pub const WIRE_VERSION: u8 = 1;
pub const WIRE_HEADER_LEN: usize = 16;

/// Byte length of the wire encoding for weight matrices of the given shapes.
pub fn wire_len(shapes: &[(usize, usize)]) -> usize {
    WIRE_HEADER_LEN + shapes.iter().map(|&(r, c)| 8 + 8 * (r * c + c)).sum::<usize>()
}

/// Header `{"FCHP", version, layer_count, 10 zero bytes}`, then per layer
/// `{u32 rows, u32 cols, weights f64 LE row-major, bias f64 LE}`.
pub fn serialize_params(params: &ModelParams) -> Result<Vec<u8>> {
    if !params.is_finite() {
        return Err(Error::Numerical("refusing to serialize non-finite parameters".into()));
    }
    let layer_count = u8::try_from(params.layers.len())
        .map_err(|_| Error::Config(format!("{} layers exceed the wire limit", params.layers.len())))?;
    let mut out = Vec::with_capacity(wire_len(&params.shapes()));
    out.extend_from_slice(&WIRE_MAGIC);
    out.push(WIRE_VERSION);
    out.push(layer_count);
    out.extend_from_slice(&[0u8; 10]);
    for layer in &params.layers {
        let (rows, cols) = layer.weights.shape();
        let dim = |d: usize| u32::try_from(d).map_err(|_| Error::Config(format!("dimension {d} exceeds u32")));
        out.extend_from_slice(&dim(rows)?.to_le_bytes());
        out.extend_from_slice(&dim(cols)?.to_le_bytes());
        for v in layer.weights.data().iter().chain(&layer.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Integrity(format!("payload truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses the wire format and checks it against the expected weight shapes.
pub fn deserialize_params(bytes: &[u8], expected_shapes: &[(usize, usize)]) -> Result<ModelParams> {
    if bytes.len() != wire_len(expected_shapes) {
        return Err(Error::Integrity(format!(
            "payload is {} bytes, expected {}",
            bytes.len(),
            wire_len(expected_shapes)
        )));
    }
    let mut rd = Reader { bytes, pos: 0 };
    let header = rd.take(WIRE_HEADER_LEN)?;
    if header[..4] != WIRE_MAGIC || header[4] != WIRE_VERSION {
        return Err(Error::Integrity("bad magic or version (wrong key?)".into()));
    }
    if header[5] as usize != expected_shapes.len() || header[6..].iter().any(|&b| b != 0) {
        return Err(Error::Integrity("header layer count or reserved bytes corrupt".into()));
    }
    let mut layers = Vec::with_capacity(expected_shapes.len());
    for (l, &(rows, cols)) in expected_shapes.iter().enumerate() {
        let (r, c) = (rd.u32()? as usize, rd.u32()? as usize);
        if (r, c) != (rows, cols) {
            return Err(Error::Integrity(format!(
                "layer {l} shape {r}x{c}, expected {rows}x{cols}"
            )));
        }
        let weights = (0..rows * cols).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
        let bias = (0..cols).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Integrity(format!("layer {l} decodes to non-finite values")));
        }
        layers.push(DenseLayer {
            weights: Tensor2::from_vec(rows, cols, weights)?,
            bias,
        });
    }
    Ok(ModelParams { layers })
}

pub fn seal_params(params: &ModelParams, key: &ChaosKey) -> Result<CipherBlob> {
    encrypt(&serialize_params(params)?, key)
}

pub fn open_params(blob: &CipherBlob, key: &ChaosKey, expected_shapes: &[(usize, usize)]) -> Result<ModelParams> {
    if blob.len() != wire_len(expected_shapes) {
        return Err(Error::Integrity(format!(
            "blob is {} bytes, expected {}",
            blob.len(),
            wire_len(expected_shapes)
        )));
    }
    deserialize_params(&decrypt(blob, key)?, expected_shapes)
}

pub(crate) fn read_u64(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    let mut rd = Reader { bytes, pos: *pos };
    let v = rd.u64()?;
    *pos = rd.pos;
    Ok(v)
}

pub(crate) fn read_f64(bytes: &[u8], pos: &mut usize) -> Result<f64> {
    let mut rd = Reader { bytes, pos: *pos };
    let v = rd.f64()?;
    *pos = rd.pos;
    Ok(v)
}

pub(crate) fn read_bytes<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let mut rd = Reader { bytes, pos: *pos };
    let v = rd.take(n)?;
    *pos = rd.pos;
    Ok(v)
}
