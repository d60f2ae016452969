//! Checkpoint container:
//!
//! ```text
//! "DOCENTR1"  u32 version  u32 header_len  header (UTF-8 key=value lines)
//! u32 tensor_count  { u32 name_len  name  u32 rank  u32 dims[rank]  f32 data[] }*
//! ```
//!
//! Integers and floats are little-endian. Header floats use Rust's shortest
//! round-trip formatting so configs come back bit-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::optim::{AdamState, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelWeights};
use crate::numerics::{ParamSet, Parameter, Tensor};

pub const MAGIC: &[u8; 8] = b"DOCENTR1";
pub const FORMAT_VERSION: u32 = 1;

const MOMENT_M: &str = "adam.m.";
const MOMENT_V: &str = "adam.v.";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    /// Optimizer steps taken so far.
    pub step: usize,
    pub weights: ModelWeights<f32>,
    pub moments: Option<AdamState>,
}

fn header_text(model: &ModelConfig, train: &TrainConfig, step: usize) -> String {
    let lines = [
        ("model.layers", model.layers.to_string()),
        ("model.dim", model.dim.to_string()),
        ("model.heads", model.heads.to_string()),
        ("model.patch_size", model.patch_size.to_string()),
        ("model.window_size", model.window_size.to_string()),
        ("model.in_channels", model.in_channels.to_string()),
        ("model.out_channels", model.out_channels.to_string()),
        ("model.mlp_ratio", model.mlp_ratio.to_string()),
        ("model.eps", format!("{:?}", model.eps)),
        ("model.output_head", model.output_head.to_string()),
        ("train.base_lr", format!("{:?}", train.base_lr)),
        ("train.min_lr", format!("{:?}", train.min_lr)),
        ("train.weight_decay", format!("{:?}", train.weight_decay)),
        ("train.beta1", format!("{:?}", train.beta1)),
        ("train.beta2", format!("{:?}", train.beta2)),
        ("train.eps_opt", format!("{:?}", train.eps_opt)),
        ("train.warmup_steps", train.warmup_steps.to_string()),
        ("train.total_steps", train.total_steps.to_string()),
        ("train.batch_size", train.batch_size.to_string()),
        ("train.seed", train.seed.to_string()),
        (
            "train.grad_clip_norm",
            format!("{:?}", train.grad_clip_norm),
        ),
        ("step", step.to_string()),
    ];
    lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

struct Header(BTreeMap<String, String>);

impl Header {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| corrupt(format!("header line without '=': {line:?}")))?;
            map.insert(k.to_string(), v.to_string());
        }
        Ok(Header(map))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .0
            .get(key)
            .ok_or_else(|| corrupt(format!("header is missing {key}")))?;
        raw.parse()
            .map_err(|_| corrupt(format!("bad value for {key}: {raw:?}")))
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
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
            .ok_or_else(|| {
                corrupt(format!(
                    "truncated: wanted {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank());
    for &d in t.shape() {
        put_u32(out, d);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn model_config(&self) -> &ModelConfig {
        self.weights.config()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let header = header_text(self.model_config(), &self.train, self.step);
        put_u32(&mut out, header.len());
        out.extend_from_slice(header.as_bytes());
        let params = self.weights.params();
        let moments = self.moments.as_ref();
        put_u32(
            &mut out,
            params.len() * if moments.is_some() { 3 } else { 1 },
        );
        for p in params.iter() {
            put_tensor(&mut out, &p.name, &p.value);
        }
        if let Some(st) = moments {
            for (p, m) in params.iter().zip(&st.m) {
                put_tensor(&mut out, &format!("{MOMENT_M}{}", p.name), m);
            }
            for (p, v) in params.iter().zip(&st.v) {
                put_tensor(&mut out, &format!("{MOMENT_V}{}", p.name), v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic {
                expected: "DOCENTR1",
            });
        }
        r.take(MAGIC.len())?;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = r.len()?;
        let header =
            std::str::from_utf8(r.take(header_len)?).map_err(|_| corrupt("header is not UTF-8"))?;
        let h = Header::parse(header)?;
        let model = ModelConfig {
            layers: h.get("model.layers")?,
            dim: h.get("model.dim")?,
            heads: h.get("model.heads")?,
            patch_size: h.get("model.patch_size")?,
            window_size: h.get("model.window_size")?,
            in_channels: h.get("model.in_channels")?,
            out_channels: h.get("model.out_channels")?,
            mlp_ratio: h.get("model.mlp_ratio")?,
            eps: h.get("model.eps")?,
            output_head: h.get("model.output_head")?,
        };
        model
            .validate()
            .map_err(|e| corrupt(format!("embedded model config: {e}")))?;
        let train = TrainConfig {
            base_lr: h.get("train.base_lr")?,
            min_lr: h.get("train.min_lr")?,
            weight_decay: h.get("train.weight_decay")?,
            beta1: h.get("train.beta1")?,
            beta2: h.get("train.beta2")?,
            eps_opt: h.get("train.eps_opt")?,
            warmup_steps: h.get("train.warmup_steps")?,
            total_steps: h.get("train.total_steps")?,
            batch_size: h.get("train.batch_size")?,
            seed: h.get("train.seed")?,
            grad_clip_norm: h.get("train.grad_clip_norm")?,
        };
        let step = h.get("step")?;

        let count = r.len()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.len()?;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| corrupt("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| corrupt(format!("tensor {name} is absurdly large")))?;
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| corrupt("tensor too large"))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t =
                Tensor::new(&shape, data).map_err(|e| corrupt(format!("tensor {name}: {e}")))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(corrupt(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let layout = model.parameter_layout();
        let mut params = ParamSet::new();
        for spec in &layout {
            let value = take(&mut tensors, &spec.name, &spec.shape)?;
            params.push(Parameter::new(spec.name.clone(), value, spec.decays()))?;
        }
        let has_moments = layout.iter().any(|s| {
            let key = format!("{MOMENT_M}{}", s.name);
            tensors.contains_key(&key)
        });
        let moments = if has_moments {
            let mut m = Vec::with_capacity(layout.len());
            let mut v = Vec::with_capacity(layout.len());
            for spec in &layout {
                m.push(take(
                    &mut tensors,
                    &format!("{MOMENT_M}{}", spec.name),
                    &spec.shape,
                )?);
            }
            for spec in &layout {
                v.push(take(
                    &mut tensors,
                    &format!("{MOMENT_V}{}", spec.name),
                    &spec.shape,
                )?);
            }
            Some(AdamState { m, v })
        } else {
            None
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(corrupt(format!("unexpected tensor {extra}")));
        }
        Ok(Checkpoint {
            train,
            step,
            weights: ModelWeights::from_params(model, params)?,
            moments,
        })
    }
}

fn take(
    tensors: &mut BTreeMap<String, Tensor<f32>>,
    name: &str,
    shape: &[usize],
) -> Result<Tensor<f32>> {
    let t = tensors
        .remove(name)
        .ok_or_else(|| corrupt(format!("missing tensor {name}")))?;
    if t.shape() != shape {
        return Err(corrupt(format!(
            "tensor {name} has shape {:?}, config expects {shape:?}",
            t.shape()
        )));
    }
    Ok(t)
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn sample(moments: bool) -> Checkpoint {
        let cfg = ModelConfig::new(1, 8, 2, 4, 8).unwrap();
        let weights = init_model(&cfg, 7).unwrap();
        let moments = moments.then(|| {
            let mut st = AdamState::zeros(weights.params());
            st.m[0].fill(0.25);
            st.v[3].fill(1e-7);
            st
        });
        Checkpoint {
            train: TrainConfig {
                base_lr: 1.0 / 3.0,
                ..TrainConfig::new(40, 2, 9)
            },
            step: 17,
            weights,
            moments,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for with in [false, true] {
            let c = sample(with);
            let bytes = c.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = sample(true);
        save_checkpoint(&path, &c).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), c);
        assert!(matches!(
            load_checkpoint(dir.path().join("nope")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn truncation_is_reported_not_a_panic() {
        let bytes = sample(true).to_bytes();
        for cut in [9, 14, 40, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, Error::CorruptCheckpoint(_)),
                "cut {cut}: {err}"
            );
        }
    }

    #[test]
    fn wrong_magic_names_the_expected_one() {
        let mut bytes = sample(false).to_bytes();
        bytes[0] = b'X';
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("DOCENTR1"), "{err}");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = sample(false).to_bytes();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Version {
                found: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn shape_mismatch_against_config_is_rejected() {
        let c = sample(false);
        let text = String::from_utf8_lossy(&c.to_bytes()).into_owned();
        assert!(text.contains("model.dim=8\n"));
        // same byte length, different config: dims no longer match tensors
        let bytes = c.to_bytes();
        let at = bytes
            .windows(12)
            .position(|w| w == b"model.heads=")
            .unwrap();
        let mut patched = bytes.clone();
        let needle = b"model.dim=8\n";
        let pos = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        patched[pos + 10] = b'4';
        patched[at + 12] = b'1';
        let err = Checkpoint::from_bytes(&patched).unwrap_err();
        assert!(matches!(err, Error::CorruptCheckpoint(_)), "{err}");
    }
}
