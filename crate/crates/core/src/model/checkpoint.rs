//! Binary checkpoint container.
//!
//! ```text
//! "OODK" | version: u32 LE | record count: u64 LE
//! per record: name length u32 LE | UTF-8 name | ndim u32 LE | dims u64 LE × ndim | f32 LE × prod(dims)
//! ```

use std::fs;
use std::path::Path;

use super::{BatchNorm, ConvLayer, EncoderConfig, Model};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OODK";
pub const CHECKPOINT_VERSION: u32 = 1;

const ARCH_PREFIX: &str = "arch.";
const HPARAM_PREFIX: &str = "hparam.";

/// One named tensor in a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Record {
    fn scalar(name: impl Into<String>, value: f32) -> Self {
        Record { name: name.into(), dims: vec![1], data: vec![value] }
    }

    fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        Record { name: name.into(), dims: t.shape().to_vec(), data: t.to_vec() }
    }
}

pub fn encode_records(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
        for &d in &r.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &dyn Fn() -> String) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::UnexpectedEof(what()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &dyn Fn() -> String) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &dyn Fn() -> String) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<Record>> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::NotCheckpoint);
    }
    let mut r = Reader { bytes, pos: 4 };
    let header = || "header".to_string();
    let version = r.u32(&header)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    let count = r.u64(&header)?;
    let mut records = Vec::new();
    for i in 0..count {
        let at = |i: u64| move || format!("record #{i}");
        let name_len = r.u32(&at(i))? as usize;
        let name = String::from_utf8(r.take(name_len, &at(i))?.to_vec())
            .map_err(|_| Error::MalformedCheckpoint(format!("record #{i} name is not UTF-8")))?;
        let tensor = |name: &str| {
            let name = name.to_string();
            move || format!("tensor '{name}'")
        };
        let ndim = r.u32(&tensor(&name))? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u64(&tensor(&name))? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::MalformedCheckpoint(format!("tensor '{name}' has absurd dims {dims:?}")))?;
        let raw = r.take(numel, &tensor(&name))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        records.push(Record { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::MalformedCheckpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    fs::write(path, encode_records(records)).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_records(&bytes)
}

impl Model {
    /// Architecture records, parameters, then the `hparam.*` echo block.
    pub fn to_records(&self, echo: &[(String, f32)]) -> Vec<Record> {
        let c = &self.config;
        let mut out = vec![
            Record::scalar("arch.input_channels", c.input_channels as f32),
            Record {
                name: "arch.widths".into(),
                dims: vec![c.widths.len()],
                data: c.widths.iter().map(|&w| w as f32).collect(),
            },
            Record::scalar("arch.blocks_per_stage", c.blocks_per_stage as f32),
            Record::scalar("arch.image_side", c.image_side as f32),
            Record::scalar("arch.batch_norm", if c.batch_norm { 1.0 } else { 0.0 }),
            Record::scalar("arch.class_count", self.class_count as f32),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push(Record::from_tensor(format!("conv{i}.weight"), &l.weight));
            out.push(Record::from_tensor(format!("conv{i}.bias"), &l.bias));
            if let Some(n) = &l.norm {
                out.push(Record::from_tensor(format!("conv{i}.gamma"), &n.gamma));
                out.push(Record::from_tensor(format!("conv{i}.beta"), &n.beta));
                out.push(Record::from_tensor(format!("conv{i}.running_mean"), &n.running_mean));
                out.push(Record::from_tensor(format!("conv{i}.running_var"), &n.running_var));
            }
        }
        out.push(Record::from_tensor("head.weight", &self.head_weight));
        out.push(Record::from_tensor("head.bias", &self.head_bias));
        out.extend(echo.iter().map(|(k, v)| Record::scalar(format!("{HPARAM_PREFIX}{k}"), *v)));
        out
    }

    /// Rebuild a model; returns the echoed hyperparameters alongside.
    pub fn from_records(records: &[Record]) -> Result<(Model, Vec<(String, f32)>)> {
        let find = |name: &str| {
            records
                .iter()
                .find(|r| r.name == name)
                .ok_or_else(|| Error::MalformedCheckpoint(format!("missing record '{name}'")))
        };
        let int = |name: &str| -> Result<usize> {
            let r = find(name)?;
            match r.data.as_slice() {
                [v] if *v >= 0.0 && v.fract() == 0.0 => Ok(*v as usize),
                _ => Err(Error::MalformedCheckpoint(format!("'{name}' is not a count"))),
            }
        };
        let config = EncoderConfig {
            input_channels: int("arch.input_channels")?,
            widths: find("arch.widths")?.data.iter().map(|&w| w as usize).collect(),
            blocks_per_stage: int("arch.blocks_per_stage")?,
            image_side: int("arch.image_side")?,
            batch_norm: match int("arch.batch_norm")? {
                0 => false,
                1 => true,
                v => return Err(Error::MalformedCheckpoint(format!("'arch.batch_norm' is {v}, expected 0 or 1"))),
            },
        };
        config.validate().map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        let class_count = int("arch.class_count")?;

        let tensor = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let r = find(name)?;
            if r.dims != shape {
                return Err(Error::MalformedCheckpoint(format!("'{name}' has dims {:?}, expected {shape:?}", r.dims)));
            }
            Tensor::parameter(shape, r.data.clone())
        };
        let mut layers = Vec::new();
        let mut channels = config.input_channels;
        for (stage, &width) in config.widths.iter().enumerate() {
            for block in 0..config.blocks_per_stage {
                let i = layers.len();
                layers.push(ConvLayer {
                    weight: tensor(&format!("conv{i}.weight"), &[width, channels, 3, 3])?,
                    bias: tensor(&format!("conv{i}.bias"), &[width])?,
                    norm: if config.batch_norm {
                        Some(BatchNorm {
                            gamma: tensor(&format!("conv{i}.gamma"), &[width])?,
                            beta: tensor(&format!("conv{i}.beta"), &[width])?,
                            running_mean: tensor(&format!("conv{i}.running_mean"), &[width])?.detach(),
                            running_var: tensor(&format!("conv{i}.running_var"), &[width])?.detach(),
                        })
                    } else {
                        None
                    },
                    stride: if stage > 0 && block == 0 { 2 } else { 1 },
                    residual: block > 0,
                });
                channels = width;
            }
        }
        let model = Model {
            head_weight: tensor("head.weight", &[class_count, channels])?,
            head_bias: tensor("head.bias", &[class_count])?,
            config,
            class_count,
            layers,
        };
        let echo = records
            .iter()
            .filter_map(|r| r.name.strip_prefix(HPARAM_PREFIX).map(|k| (k.to_string(), r.data[0])))
            .collect();
        let known = |n: &str| n.starts_with(ARCH_PREFIX) || n.starts_with(HPARAM_PREFIX) || n.starts_with("conv") || n.starts_with("head.");
        if let Some(r) = records.iter().find(|r| !known(&r.name)) {
            return Err(Error::MalformedCheckpoint(format!("unknown record '{}'", r.name)));
        }
        Ok((model, echo))
    }

    pub fn save(&self, path: &Path, echo: &[(String, f32)]) -> Result<()> {
        write_records(path, &self.to_records(echo))
    }

    pub fn load(path: &Path) -> Result<(Model, Vec<(String, f32)>)> {
        Model::from_records(&read_records(path)?)
    }
}
