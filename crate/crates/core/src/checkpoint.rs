//! Binary checkpoints: live and EMA weights, optimizer moments, config and
//! progress counters.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every tensor listed in the header as little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LFSCKPT\n";
pub const FORMAT_VERSION: u32 = 1;

/// First and second moments per parameter, indexed like the parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub t: u64,
    pub m: Vec<Option<Tensor<T>>>,
    pub v: Vec<Option<Tensor<T>>>,
}

impl<T> AdamState<T> {
    pub fn new(params: usize) -> Self {
        Self {
            t: 0,
            m: (0..params).map(|_| None).collect(),
            v: (0..params).map(|_| None).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckpointBundle<T> {
    pub config: TrainConfig,
    pub live: ParamStore<T>,
    pub ema: ParamStore<T>,
    pub adam_g: AdamState<T>,
    pub adam_d: AdamState<T>,
    pub epoch: usize,
    pub step: u64,
}

impl<T: Scalar> CheckpointBundle<T> {
    /// Model carrying the live weights.
    pub fn live_model(&self) -> Result<Model<T>> {
        self.model_with(&self.live)
    }

    /// Model carrying the EMA weights.
    pub fn ema_model(&self) -> Result<Model<T>> {
        self.model_with(&self.ema)
    }

    fn model_with(&self, store: &ParamStore<T>) -> Result<Model<T>> {
        let mut m = Model::new(self.config.model(), self.config.seed)?;
        m.params.load_from(store)?;
        Ok(m)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    scalar: String,
    config: TrainConfig,
    epoch: usize,
    step: u64,
    adam_g_t: u64,
    adam_d_t: u64,
    tensors: Vec<TensorEntry>,
}

fn named<'a, T: Scalar>(
    prefix: &str,
    store: &'a ParamStore<T>,
    slots: impl Iterator<Item = Option<&'a Tensor<T>>>,
) -> Vec<(String, &'a Tensor<T>)> {
    store
        .iter()
        .zip(slots)
        .filter_map(|((_, p), t)| t.map(|t| (format!("{prefix}:{}", p.name), t)))
        .collect()
}

pub fn save_checkpoint<T: Scalar>(bundle: &CheckpointBundle<T>, path: &Path) -> Result<()> {
    let live = &bundle.live;
    let mut tensors = named("live", live, live.iter().map(|(_, p)| Some(&p.value)));
    tensors.extend(named(
        "ema",
        &bundle.ema,
        bundle.ema.iter().map(|(_, p)| Some(&p.value)),
    ));
    for (tag, st) in [("adam_g", &bundle.adam_g), ("adam_d", &bundle.adam_d)] {
        tensors.extend(named(
            &format!("{tag}.m"),
            live,
            st.m.iter().map(Option::as_ref),
        ));
        tensors.extend(named(
            &format!("{tag}.v"),
            live,
            st.v.iter().map(Option::as_ref),
        ));
    }
    let header = Header {
        scalar: T::NAME.to_string(),
        config: bundle.config.clone(),
        epoch: bundle.epoch,
        step: bundle.step,
        adam_g_t: bundle.adam_g.t,
        adam_d_t: bundle.adam_d.t,
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json =
        serde_json::to_vec(&header).map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;

    // write beside the target and rename so readers never see a partial file
    let tmp = path.with_extension("lfs.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, t) in &tensors {
            for &x in t.data() {
                w.write_all(&x.as_f64().to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<CheckpointBundle<T>> {
    let mut r = BufReader::new(File::open(path)?);
    if &read_array::<8>(&mut r)? != MAGIC {
        return Err(Error::IncompatibleCheckpoint(
            "not a checkpoint file".into(),
        ));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != FORMAT_VERSION {
        return Err(Error::IncompatibleCheckpoint(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(read_array(&mut r)?) as usize;
    if len > 1 << 30 {
        return Err(Error::IncompatibleCheckpoint(
            "implausible header length".into(),
        ));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)
        .map_err(|e| Error::IncompatibleCheckpoint(format!("header: {e}")))?;

    let template = Model::<T>::new(header.config.model(), header.config.seed)?;
    let mut live = template.params.clone();
    let mut ema = template.params;
    let n = live.len();
    let mut adam_g = AdamState::new(n);
    let mut adam_d = AdamState::new(n);
    adam_g.t = header.adam_g_t;
    adam_d.t = header.adam_d_t;

    let mut seen_live = vec![false; n];
    let mut seen_ema = vec![false; n];
    for entry in &header.tensors {
        let numel: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; numel * 8];
        r.read_exact(&mut bytes)?;
        let data: Vec<T> = bytes
            .chunks_exact(8)
            .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        let tensor = Tensor::new(entry.shape.clone(), data)?;
        let (prefix, name) = entry.name.split_once(':').ok_or_else(|| {
            Error::IncompatibleCheckpoint(format!("bad tensor name {}", entry.name))
        })?;
        let id = live
            .id(name)
            .ok_or_else(|| Error::IncompatibleCheckpoint(format!("unknown parameter {name}")))?;
        if live.get(id).shape() != tensor.shape() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{name}: shape {:?} in file, {:?} in model",
                tensor.shape(),
                live.get(id).shape()
            )));
        }
        let i = id.index();
        match prefix {
            "live" => {
                *live.get_mut(id) = tensor;
                seen_live[i] = true;
            }
            "ema" => {
                *ema.get_mut(id) = tensor;
                seen_ema[i] = true;
            }
            "adam_g.m" => adam_g.m[i] = Some(tensor),
            "adam_g.v" => adam_g.v[i] = Some(tensor),
            "adam_d.m" => adam_d.m[i] = Some(tensor),
            "adam_d.v" => adam_d.v[i] = Some(tensor),
            other => {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "unknown section {other}"
                )))
            }
        }
    }
    if let Some(i) = seen_live.iter().zip(&seen_ema).position(|(a, b)| !a || !b) {
        let name = &live.iter().nth(i).expect("index in range").1.name;
        return Err(Error::IncompatibleCheckpoint(format!(
            "missing weights for {name}"
        )));
    }
    Ok(CheckpointBundle {
        config: header.config,
        live,
        ema,
        adam_g,
        adam_d,
        epoch: header.epoch,
        step: header.step,
    })
}
