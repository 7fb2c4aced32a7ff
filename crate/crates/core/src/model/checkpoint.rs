//! Binary checkpoint format.
//!
//! Layout: `ATMS`, u32 version, u32 header length, JSON header, then one
//! record per tensor: u32 name length, name, u8 dtype tag, u32 rank, u64
//! extents, little-endian payload. Parameters and running statistics are
//! stored as f32; batch counters as u64.

use std::collections::HashMap;
use std::path::Path;

use atms_tensor::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::spec::ModelSpec;
use crate::error::{CheckpointError, KdError, Result};

pub const MAGIC: &[u8; 4] = b"ATMS";
pub const FORMAT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_U64: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// teacher, direct, atms-kd or fixed-kd
    pub method: String,
    pub epoch: usize,
    pub best_val_accuracy: f64,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: ModelSpec,
    meta: CheckpointMeta,
    tensor_count: usize,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub network: Network<T>,
    pub meta: CheckpointMeta,
}

enum Payload {
    F32(Vec<f32>),
    U64(Vec<u64>),
}

struct Record {
    shape: Vec<usize>,
    payload: Payload,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_record(buf: &mut Vec<u8>, name: &str, shape: &[usize], tag: u8) {
    put_u32(buf, name.len() as u32);
    buf.extend_from_slice(name.as_bytes());
    buf.push(tag);
    put_u32(buf, shape.len() as u32);
    for &d in shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
}

fn put_f32<T: Scalar>(buf: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_record(buf, name, t.shape(), DTYPE_F32);
    for &v in t.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

pub fn encode<T: Scalar>(net: &Network<T>, meta: &CheckpointMeta) -> Vec<u8> {
    let store = net.store();
    let header = Header {
        spec: net.spec().clone(),
        meta: meta.clone(),
        tensor_count: store.params().len() + 3 * store.norms().len(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_u32(&mut buf, json.len() as u32);
    buf.extend_from_slice(&json);
    for p in store.params() {
        put_f32(&mut buf, &p.name, &p.value);
    }
    for n in store.norms() {
        put_f32(&mut buf, &format!("{}.running_mean", n.name), &n.state.running_mean);
        put_f32(&mut buf, &format!("{}.running_var", n.name), &n.state.running_var);
        put_record(&mut buf, &format!("{}.num_batches_tracked", n.name), &[1], DTYPE_U64);
        buf.extend_from_slice(&n.state.tracked.to_le_bytes());
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated(what))?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn read_record(r: &mut Reader) -> Result<(String, Record), CheckpointError> {
    let len = r.u32("tensor name length")? as usize;
    let name = String::from_utf8(r.take(len, "tensor name")?.to_vec())
        .map_err(|_| CheckpointError::Header("tensor name is not UTF-8".into()))?;
    let tag = r.take(1, "dtype tag")?[0];
    let rank = r.u32("tensor rank")? as usize;
    let mut shape = Vec::with_capacity(rank.min(8));
    for _ in 0..rank {
        shape.push(r.u64("tensor extents")? as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or(CheckpointError::Truncated("tensor payload"))?;
    let payload = match tag {
        DTYPE_F32 => {
            let raw = r.take(count.checked_mul(4).ok_or(CheckpointError::Truncated("tensor payload"))?, "tensor payload")?;
            Payload::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        }
        DTYPE_U64 => {
            let raw = r.take(count.checked_mul(8).ok_or(CheckpointError::Truncated("tensor payload"))?, "tensor payload")?;
            Payload::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
        }
        other => return Err(CheckpointError::UnsupportedDtype(other)),
    };
    Ok((name, Record { shape, payload }))
}

fn take_f32<T: Scalar>(records: &mut HashMap<String, Record>, name: &str, expected: &[usize]) -> Result<Tensor<T>, CheckpointError> {
    let rec = records
        .remove(name)
        .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
    if rec.shape != expected {
        return Err(CheckpointError::ShapeMismatch {
            name: name.to_string(),
            expected: expected.to_vec(),
            found: rec.shape,
        });
    }
    match rec.payload {
        Payload::F32(v) => Ok(Tensor::new(expected, v.into_iter().map(|x| T::lit(x as f64)).collect())
            .expect("shape checked")),
        Payload::U64(_) => Err(CheckpointError::UnsupportedDtype(DTYPE_U64)),
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let hlen = r.u32("header length")? as usize;
    let header: Header =
        serde_json::from_slice(r.take(hlen, "header")?).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut records = HashMap::new();
    for _ in 0..header.tensor_count {
        let (name, rec) = read_record(&mut r)?;
        records.insert(name, rec);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Header(format!(
            "{} trailing bytes after {} tensors",
            bytes.len() - r.pos,
            header.tensor_count
        )));
    }

    let mut net = Network::<T>::build(header.spec.clone(), &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let store = net.store_mut();
    for p in store.params_mut() {
        let shape = p.value.shape().to_vec();
        p.value = take_f32(&mut records, &p.name, &shape)?;
    }
    for n in store.norms_mut() {
        let c = [n.state.channels()];
        n.state.running_mean = take_f32(&mut records, &format!("{}.running_mean", n.name), &c)?;
        n.state.running_var = take_f32(&mut records, &format!("{}.running_var", n.name), &c)?;
        let key = format!("{}.num_batches_tracked", n.name);
        let rec = records.remove(&key).ok_or(CheckpointError::MissingTensor(key.clone()))?;
        n.state.tracked = match (rec.shape.as_slice(), rec.payload) {
            ([1], Payload::U64(v)) => v[0],
            (_, Payload::F32(_)) => return Err(CheckpointError::UnsupportedDtype(DTYPE_F32)),
            (s, _) => {
                return Err(CheckpointError::ShapeMismatch {
                    name: key,
                    expected: vec![1],
                    found: s.to_vec(),
                })
            }
        };
    }
    if let Some(name) = records.into_keys().min() {
        return Err(CheckpointError::UnexpectedTensor(name));
    }
    Ok(Checkpoint {
        network: net,
        meta: header.meta,
    })
}

pub fn save_checkpoint<T: Scalar>(net: &Network<T>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    std::fs::write(path, encode(net, meta)).map_err(|e| KdError::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| KdError::io(path, e))?;
    decode(&bytes).map_err(|source| KdError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}
