//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CKGN"  version:u32  count:u32
//! count × { name_len:u32  name:utf8  rank:u32  extents:u64×rank  values:f64×len }
//! iteration:u64  xi_updates:u64
//! rng state ×3 (noise, interp, batch), 56 bytes each
//! config_len:u32  config:utf8 json
//! ```
//!
//! Tensor names are prefixed by their group: `G/`, `D/`, `xi`, and
//! `opt_g/`, `opt_d/`, `opt_xi/` for RMSProp accumulators.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{MlpSpec, ParamRole, ParamSet};
use crate::optim::RmsProp;
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::train::{TrainConfig, TrainState, XI};

pub const MAGIC: &[u8; 4] = b"CKGN";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
    pub iteration: u64,
    pub xi_updates: u64,
    pub noise_rng: RngState,
    pub interp_rng: RngState,
    pub batch_rng: RngState,
    /// The resolved run config the state belongs to.
    pub config_json: String,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
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
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
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

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, config_json: &str) -> Self {
        let mut tensors = BTreeMap::new();
        let mut add = |prefix: &str, map: &BTreeMap<String, Tensor>| {
            for (name, t) in map {
                tensors.insert(format!("{prefix}{name}"), t.clone());
            }
        };
        for (prefix, set) in [("G/", &state.generator), ("D/", &state.discriminator), ("", &state.xi)] {
            add(prefix, set.trainable());
            add(prefix, set.buffers());
        }
        add("opt_g/", state.opt_g.accumulators());
        add("opt_d/", state.opt_d.accumulators());
        add("opt_xi/", state.opt_xi.accumulators());
        Checkpoint {
            tensors,
            iteration: state.iteration,
            xi_updates: state.xi_updates,
            noise_rng: RngState::capture(&state.noise_rng),
            interp_rng: RngState::capture(&state.interp_rng),
            batch_rng: RngState::capture(&state.batch_rng),
            config_json: config_json.to_string(),
        }
    }

    fn group(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|n| (n.to_string(), v.clone())))
            .collect()
    }

    fn params(&self, prefix: &str, spec: &MlpSpec, what: &str) -> Result<ParamSet> {
        let mut stored = self.group(prefix);
        let mut set = ParamSet::default();
        for (name, shape, role) in spec.param_shapes() {
            let t = stored
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("{what} parameter `{name}` missing; architecture mismatch?")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{what} parameter `{name}` has shape {:?}, expected {shape:?}; architecture mismatch?",
                    t.shape()
                )));
            }
            set.insert(name, t, role);
        }
        if let Some(extra) = stored.keys().next() {
            return Err(Error::Checkpoint(format!(
                "unexpected {what} tensor `{extra}`; architecture mismatch?"
            )));
        }
        Ok(set)
    }

    fn optimizer(&self, prefix: &str, params: &ParamSet, config: &TrainConfig) -> Result<RmsProp> {
        let mut opt = RmsProp::new(config.rmsprop_decay, config.rmsprop_eps);
        for (name, acc) in self.group(prefix) {
            match params.trainable().get(&name) {
                Some(p) if p.shape() == acc.shape() => opt.set_accumulator(name, acc),
                _ => return Err(Error::Checkpoint(format!("accumulator `{prefix}{name}` matches no parameter"))),
            }
        }
        Ok(opt)
    }

    /// Rebuilds the training state for `config`, checking every shape.
    pub fn to_state(&self, config: &TrainConfig) -> Result<TrainState> {
        let generator = self.params("G/", &config.generator_spec()?, "generator")?;
        let discriminator = self.params("D/", &config.discriminator_spec()?, "discriminator")?;
        let mut xi = ParamSet::default();
        if let Some(t) = self.tensors.get(XI) {
            xi.insert(XI, t.clone(), ParamRole::Trainable);
        }
        Ok(TrainState {
            opt_g: self.optimizer("opt_g/", &generator, config)?,
            opt_d: self.optimizer("opt_d/", &discriminator, config)?,
            opt_xi: self.optimizer("opt_xi/", &xi, config)?,
            generator,
            discriminator,
            xi,
            iteration: self.iteration,
            xi_updates: self.xi_updates,
            noise_rng: self.noise_rng.restore(),
            interp_rng: self.interp_rng.restore(),
            batch_rng: self.batch_rng.restore(),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rank() as u32);
            for &e in t.shape() {
                put_u64(&mut out, e as u64);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        put_u64(&mut out, self.iteration);
        put_u64(&mut out, self.xi_updates);
        for r in [&self.noise_rng, &self.interp_rng, &self.batch_rng] {
            r.encode(&mut out);
        }
        put_u32(&mut out, self.config_json.len() as u32);
        out.extend_from_slice(self.config_json.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = r.string(len)?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .ok_or_else(|| Error::Checkpoint(format!("`{name}` is too large")))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
            }
        }
        let iteration = r.u64()?;
        let xi_updates = r.u64()?;
        let mut rng = || RngState::decode(r.take(RngState::ENCODED_LEN)?);
        let (noise_rng, interp_rng, batch_rng) = (rng()?, rng()?, rng()?);
        let len = r.u32()? as usize;
        let config_json = r.string(len)?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            tensors,
            iteration,
            xi_updates,
            noise_rng,
            interp_rng,
            batch_rng,
            config_json,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Checkpoint::decode(&bytes)
    }
}
