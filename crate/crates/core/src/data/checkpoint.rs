//! Binary checkpoints.
//!
//! Layout (little-endian): magic `DTNC`, `u32` version, `u32` section count,
//! then sections of `u32` name length, UTF-8 name, `u8` kind and a payload.
//! Kind 0 is an f64 array (`u32` ndim, `u64` dims, values row-major); kind 1
//! is raw bytes (`u64` length, bytes). Encoding is deterministic, so saving a
//! loaded checkpoint reproduces the file byte for byte.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::{RngState, SeededRng};
use crate::schedule::Schedule;
use crate::trainer::{metrics_csv, parse_metrics_csv, ModelState, OptimizerState, Trainer, TrainerRngs};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"DTNC";
const KIND_ARRAY: u8 = 0;
const KIND_BYTES: u8 = 1;
const RNG_NAMES: [&str; 3] = ["episodes", "dropout", "auxiliary"];

/// Everything needed to resume a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub schedule: Schedule,
    /// Snapshot of the run configuration as `key=value` lines.
    pub config: String,
    pub trainer: Trainer,
}

enum Section {
    Array(Vec<usize>, Vec<f64>),
    Bytes(Vec<u8>),
}

struct Writer {
    buf: Vec<u8>,
    sections: u32,
}

impl Writer {
    fn header(&mut self, name: &str, kind: u8) {
        self.sections += 1;
        self.buf.extend((name.len() as u32).to_le_bytes());
        self.buf.extend(name.as_bytes());
        self.buf.push(kind);
    }

    fn array(&mut self, name: &str, shape: &[usize], values: &[f64]) {
        self.header(name, KIND_ARRAY);
        self.buf.extend((shape.len() as u32).to_le_bytes());
        for &d in shape {
            self.buf.extend((d as u64).to_le_bytes());
        }
        for v in values {
            self.buf.extend(v.to_le_bytes());
        }
    }

    fn bytes(&mut self, name: &str, data: &[u8]) {
        self.header(name, KIND_BYTES);
        self.buf.extend((data.len() as u64).to_le_bytes());
        self.buf.extend(data);
    }
}

fn rng_bytes(state: RngState) -> Vec<u8> {
    let mut out = state.seed.to_vec();
    out.extend(state.stream.to_le_bytes());
    out.extend(state.word_pos.to_le_bytes());
    out
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let t = &ckpt.trainer;
    let m = &t.model;
    let mut w = Writer {
        buf: Vec::new(),
        sections: 0,
    };
    let meta = format!(
        "schedule={}\nseed={}\nnext_epoch={}\nstep_count={}\nmomentum={}\ndropout={}\nleaky_slope={}\nnormalize_aux={}\n",
        ckpt.schedule,
        t.seed,
        t.next_epoch,
        m.step_count,
        t.optimizer.momentum,
        m.generator.dropout_rate,
        m.extractor.leaky_slope,
        m.aux_head.normalize_rows,
    );
    w.bytes("meta", meta.as_bytes());
    w.bytes("config", ckpt.config.as_bytes());
    let params = m.named_tensors();
    for (name, tensor) in &params {
        w.array(&format!("param:{name}"), tensor.shape(), tensor.values());
    }
    let shapes: HashMap<&str, &[usize]> = params.iter().map(|(n, t)| (n.as_str(), t.shape())).collect();
    for (name, v) in &t.optimizer.velocity {
        let flat = [v.len()];
        let shape = shapes.get(name.as_str()).copied().unwrap_or(&flat);
        w.array(&format!("velocity:{name}"), shape, v);
    }
    for (name, rng) in RNG_NAMES.iter().zip([&t.rngs.episodes, &t.rngs.dropout, &t.rngs.auxiliary]) {
        w.bytes(&format!("rng:{name}"), &rng_bytes(rng.state()));
    }
    w.bytes("log", metrics_csv(&t.log).as_bytes());

    let mut out = MAGIC.to_vec();
    out.extend(FORMAT_VERSION.to_le_bytes());
    out.extend(w.sections.to_le_bytes());
    out.extend(w.buf);
    out
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::Corrupt(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Corrupt(format!("{what} too large")))
    }
}

fn read_sections(data: &[u8]) -> Result<BTreeMap<String, Section>> {
    let mut r = Reader { data, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Corrupt("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let count = r.u32("section count")?;
    let mut sections = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32("section name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "section name")?)
            .map_err(|_| Error::Corrupt("section name is not UTF-8".into()))?
            .to_string();
        let section = match r.take(1, "section kind")?[0] {
            KIND_ARRAY => {
                let ndim = r.u32("array rank")? as usize;
                let shape = (0..ndim).map(|_| r.len("array dim")).collect::<Result<Vec<_>>>()?;
                let n = shape
                    .iter()
                    .try_fold(1usize, |a, &d| a.checked_mul(d))
                    .and_then(|n| n.checked_mul(8))
                    .ok_or_else(|| Error::Corrupt(format!("array {name} too large")))?;
                let raw = r.take(n, "array values")?;
                let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Section::Array(shape, values)
            }
            KIND_BYTES => {
                let n = r.len("byte length")?;
                Section::Bytes(r.take(n, "bytes")?.to_vec())
            }
            k => return Err(Error::Corrupt(format!("unknown section kind {k}"))),
        };
        if sections.insert(name.clone(), section).is_some() {
            return Err(Error::Corrupt(format!("duplicate section {name}")));
        }
    }
    if r.pos != data.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", data.len() - r.pos)));
    }
    Ok(sections)
}

fn text(sections: &mut BTreeMap<String, Section>, name: &str) -> Result<String> {
    match sections.remove(name) {
        Some(Section::Bytes(b)) => String::from_utf8(b).map_err(|_| Error::Corrupt(format!("{name} is not UTF-8"))),
        _ => Err(Error::Corrupt(format!("missing text section {name}"))),
    }
}

fn field<T: std::str::FromStr>(meta: &HashMap<&str, &str>, key: &str) -> Result<T> {
    meta.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Corrupt(format!("missing or invalid meta field {key}")))
}

fn rng_from(bytes: &[u8]) -> Result<SeededRng> {
    if bytes.len() != 56 {
        return Err(Error::Corrupt(format!("rng state has {} bytes, expected 56", bytes.len())));
    }
    Ok(SeededRng::from_state(RngState {
        seed: bytes[..32].try_into().unwrap(),
        stream: u64::from_le_bytes(bytes[32..40].try_into().unwrap()),
        word_pos: u128::from_le_bytes(bytes[40..].try_into().unwrap()),
    }))
}

pub fn decode_checkpoint(data: &[u8]) -> Result<Checkpoint> {
    let mut sections = read_sections(data)?;
    let meta_text = text(&mut sections, "meta")?;
    let meta: HashMap<&str, &str> = meta_text.lines().filter_map(|l| l.split_once('=')).collect();
    let config = text(&mut sections, "config")?;
    let log = parse_metrics_csv(&text(&mut sections, "log")?).map_err(|e| Error::Corrupt(e.to_string()))?;
    let schedule: Schedule = meta
        .get("schedule")
        .ok_or_else(|| Error::Corrupt("missing schedule".into()))?
        .parse()
        .map_err(|_| Error::Corrupt("invalid schedule string".into()))?;

    let mut rngs = Vec::new();
    for name in RNG_NAMES {
        match sections.remove(&format!("rng:{name}")) {
            Some(Section::Bytes(b)) => rngs.push(rng_from(&b)?),
            _ => return Err(Error::Corrupt(format!("missing rng:{name}"))),
        }
    }
    let mut params = BTreeMap::new();
    let mut optimizer = OptimizerState::new(field(&meta, "momentum")?);
    for (name, section) in sections {
        let Section::Array(shape, values) = section else {
            return Err(Error::Corrupt(format!("unexpected section {name}")));
        };
        if let Some(p) = name.strip_prefix("param:") {
            let tensor = Tensor::new(shape, values).map_err(|e| Error::Corrupt(format!("{name}: {e}")))?;
            params.insert(p.to_string(), tensor);
        } else if let Some(p) = name.strip_prefix("velocity:") {
            optimizer.velocity.insert(p.to_string(), values);
        } else {
            return Err(Error::Corrupt(format!("unexpected section {name}")));
        }
    }
    for (name, v) in &optimizer.velocity {
        match params.get(name) {
            Some(t) if t.numel() == v.len() => {}
            _ => return Err(Error::Corrupt(format!("velocity {name} does not match any parameter"))),
        }
    }
    let model = ModelState::from_named(
        params,
        field(&meta, "dropout")?,
        field(&meta, "leaky_slope")?,
        field(&meta, "normalize_aux")?,
        field(&meta, "step_count")?,
    )?;
    let auxiliary = rngs.pop().unwrap();
    let dropout = rngs.pop().unwrap();
    let episodes = rngs.pop().unwrap();
    Ok(Checkpoint {
        schedule,
        config,
        trainer: Trainer {
            model,
            optimizer,
            rngs: TrainerRngs {
                episodes,
                dropout,
                auxiliary,
            },
            seed: field(&meta, "seed")?,
            next_epoch: field(&meta, "next_epoch")?,
            log,
        },
    })
}

/// Writes via a temporary sibling and a rename so readers never see a
/// partial file.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, encode_checkpoint(ckpt))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
