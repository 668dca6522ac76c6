use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Component, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"TPW1";
const INIT_RANGE: f64 = 0.1;
const FORGET_BIAS: f64 = 1.0;

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelWeights {
    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        ModelWeights { tensors }
    }

    /// Uniform init in ±0.1 with the LSTM forget-gate bias slice set to 1.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Self::init_uniform(cfg, seed, INIT_RANGE)
    }

    /// Same as [`ModelWeights::init`] with a custom range.
    pub fn init_uniform(cfg: &ModelConfig, seed: u64, range: f64) -> Result<Self> {
        cfg.validate()?;
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::InvalidArgument(format!("init range {range}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in cfg.tensor_shapes() {
            let n: usize = shape.iter().product();
            let mut data: Vec<f64> = (0..n).map(|_| rng.gen_range(-range..range)).collect();
            if is_lstm_bias(&name) {
                let h = n / 4;
                data[h..2 * h].iter_mut().for_each(|v| *v = FORGET_BIAS);
            }
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(ModelWeights { tensors })
    }

    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for (name, shape) in cfg.tensor_shapes() {
            tensors.insert(name, Tensor::zeros(&shape)?);
        }
        Ok(ModelWeights { tensors })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors.get_mut(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn parameter_count(&self, component: Option<Component>) -> u64 {
        self.tensors
            .iter()
            .filter(|(k, _)| component.is_none() || Component::of(k) == component)
            .map(|(_, t)| t.len() as u64)
            .sum()
    }

    /// Checks every tensor the config requires is present with its shape.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        cfg.validate()?;
        let expected = cfg.tensor_shapes();
        for (name, shape) in &expected {
            let t = self.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::WeightShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.iter().any(|(n, _)| n == *k)) {
            return Err(Error::WeightFormat(format!("unexpected tensor {extra}")));
        }
        Ok(())
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len())
                .map_err(|_| Error::WeightFormat(format!("tensor name too long: {name}")))?;
            out.write_all(&len.to_le_bytes())?;
            out.write_all(bytes)?;
            out.write_all(&[t.shape().len() as u8])?;
            for &d in t.shape() {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        let mut r = Reader { buf: &buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::WeightFormat("bad magic".into()));
        }
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::WeightFormat("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::WeightFormat("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::WeightFormat(format!("{name}: {e}")))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::WeightFormat(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != buf.len() {
            return Err(Error::WeightFormat("trailing bytes".into()));
        }
        Ok(ModelWeights { tensors })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::WeightFormat(format!("truncated at byte {}", self.buf.len()))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn is_lstm_bias(name: &str) -> bool {
    let mut parts = name.split('.');
    matches!(
        (parts.next(), parts.next().map(|p| p.parse::<usize>().is_ok()), parts.next(), parts.next()),
        (Some("encoder" | "prediction" | "las"), Some(true), Some("bias"), None)
    )
}

pub fn save_weights(w: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    w.write_to(&mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    let mut f = std::fs::File::open(path)?;
    ModelWeights::read_from(&mut f)
}

/// Loads and checks the file against `cfg`.
pub fn load_weights_for(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<ModelWeights> {
    let w = load_weights(path)?;
    w.validate(cfg)?;
    Ok(w)
}
