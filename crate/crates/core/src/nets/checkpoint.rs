//! Self-describing checkpoint container.
//!
//! Layout: magic `SRCK`, `u32` version, `u64` header length, a JSON header
//! (training config, step, seed, tensor directory), then every tensor as
//! little-endian `f64` in directory order.

use std::fs;
use std::path::Path;

use autodiff::{AdamState, Tensor};
use serde::{Deserialize, Serialize};

use super::{BnState, CriticNet, Generator, ParamSet};
use crate::trainer::TrainConfig;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"SRCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub seed: u64,
    pub generator: ParamSet,
    pub generator_bn: Vec<BnState>,
    pub generator_opt: AdamState,
    pub critic: Option<ParamSet>,
    pub critic_opt: Option<AdamState>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    step: u64,
    seed: u64,
    generator_adam_step: u64,
    critic_adam_step: Option<u64>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    /// Rebuild the generator with this checkpoint's weights.
    pub fn generator(&self) -> Result<Generator> {
        let mut g = Generator::new(self.config.generator.clone(), self.seed)?;
        g.restore(self.generator.clone(), self.generator_bn.clone())?;
        Ok(g)
    }

    pub fn critic(&self) -> Result<Option<CriticNet>> {
        let Some(params) = &self.critic else {
            return Ok(None);
        };
        let mut c = CriticNet::new(self.config.critic.clone(), self.seed)?;
        c.restore(params.clone())?;
        Ok(Some(c))
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        push_params("generator", &self.generator, &mut out);
        for (i, bn) in self.generator_bn.iter().enumerate() {
            out.push((format!("generator_bn/{i}/mean"), &bn.mean));
            out.push((format!("generator_bn/{i}/var"), &bn.var));
        }
        push_adam("generator_adam", &self.generator_opt, &mut out);
        if let Some(c) = &self.critic {
            push_params("critic", c, &mut out);
        }
        if let Some(opt) = &self.critic_opt {
            push_adam("critic_adam", opt, &mut out);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors = self.named_tensors();
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            seed: self.seed,
            generator_adam_step: self.generator_opt.step,
            critic_adam_step: self.critic_opt.as_ref().map(|o| o.step),
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let payload: usize = tensors.iter().map(|(_, t)| t.len() * 8).sum();
        let mut bytes = Vec::with_capacity(16 + header.len() + payload);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header);
        for (_, t) in &tensors {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint"));
        }
        if u32::from_le_bytes(bytes[4..8].try_into().unwrap()) != VERSION {
            return Err(bad("unsupported checkpoint version"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16 + header_len)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| bad(&format!("bad header: {e}")))?;
        let mut offset = 16 + header_len;
        let mut section = Sections::default();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 8 * n)
                .ok_or_else(|| bad("truncated tensor data"))?;
            offset += 8 * n;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            section
                .add(&entry.name, Tensor::new(entry.shape, data))
                .map_err(|m| bad(&m))?;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let generator_bn = section
            .bn
            .chunks(2)
            .map(|pair| match pair {
                [mean, var] => Ok(BnState {
                    mean: mean.clone(),
                    var: var.clone(),
                }),
                _ => Err(bad("unpaired normalization statistics")),
            })
            .collect::<Result<Vec<_>>>()?;
        let checkpoint = Checkpoint {
            config: header.config,
            step: header.step,
            seed: header.seed,
            generator: ParamSet::from_parts(section.gen_names, section.gen),
            generator_bn,
            generator_opt: section.gen_adam.into_state(header.generator_adam_step),
            critic: (!section.critic.is_empty())
                .then(|| ParamSet::from_parts(section.critic_names, section.critic)),
            critic_opt: header
                .critic_adam_step
                .map(|step| section.critic_adam.into_state(step)),
        };
        // Reject parameter sets that do not fit the recorded architecture.
        checkpoint.generator()?;
        checkpoint.critic()?;
        Ok(checkpoint)
    }
}

fn push_params<'a>(prefix: &str, params: &'a ParamSet, out: &mut Vec<(String, &'a Tensor)>) {
    for (n, t) in params.names().iter().zip(params.tensors()) {
        out.push((format!("{prefix}/{n}"), t));
    }
}

fn push_adam<'a>(prefix: &str, state: &'a AdamState, out: &mut Vec<(String, &'a Tensor)>) {
    for (i, t) in state.first_moment.iter().enumerate() {
        out.push((format!("{prefix}/m/{i}"), t));
    }
    for (i, t) in state.second_moment.iter().enumerate() {
        out.push((format!("{prefix}/v/{i}"), t));
    }
}

#[derive(Default)]
struct AdamParts {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamParts {
    fn into_state(self, step: u64) -> AdamState {
        AdamState {
            step,
            first_moment: self.m,
            second_moment: self.v,
        }
    }
}

#[derive(Default)]
struct Sections {
    gen_names: Vec<String>,
    gen: Vec<Tensor>,
    bn: Vec<Tensor>,
    gen_adam: AdamParts,
    critic_names: Vec<String>,
    critic: Vec<Tensor>,
    critic_adam: AdamParts,
}

impl Sections {
    fn add(&mut self, name: &str, t: Tensor) -> std::result::Result<(), String> {
        let (prefix, rest) = name
            .split_once('/')
            .ok_or_else(|| format!("bad tensor name {name}"))?;
        match prefix {
            "generator" => {
                self.gen_names.push(rest.to_string());
                self.gen.push(t);
            }
            "generator_bn" => self.bn.push(t),
            "critic" => {
                self.critic_names.push(rest.to_string());
                self.critic.push(t);
            }
            "generator_adam" | "critic_adam" => {
                let parts = if prefix == "generator_adam" {
                    &mut self.gen_adam
                } else {
                    &mut self.critic_adam
                };
                match rest.split_once('/') {
                    Some(("m", _)) => parts.m.push(t),
                    Some(("v", _)) => parts.v.push(t),
                    _ => return Err(format!("bad optimizer tensor {name}")),
                }
            }
            _ => return Err(format!("unknown tensor section {prefix}")),
        }
        Ok(())
    }
}
