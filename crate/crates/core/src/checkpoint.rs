//! Checkpoint persistence: a human-readable header block, named tensor
//! records (little-endian raw data), packed mask bitsets, adapter wiring,
//! and a trailing CRC32 over everything before it.

use std::io::Write;
use std::path::Path;

use crate::bits::Crc32;
use crate::model::{AdapterRef, Model, ModelConfig, Tensor};
use crate::scalar::Scalar;
use crate::sparsity::{Mask, NMPattern};

pub const MAGIC: &str = "NMCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CkptError {
    #[error("checkpoint I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint CRC mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Crc { stored: u32, computed: u32 },
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
}

/// A model plus the run provenance the header records.
pub struct Checkpoint<S> {
    pub model: Model<S>,
    pub step: usize,
    pub seed: u64,
    pub mode: String,
    pub lambda_max: f64,
}

fn fmt(e: impl std::fmt::Display) -> CkptError {
    CkptError::Format(e.to_string())
}

struct CrcWriter<W: Write> {
    inner: W,
    crc: Crc32,
}

impl<W: Write> CrcWriter<W> {
    fn new(inner: W) -> Self {
        CrcWriter { inner, crc: Crc32::new() }
    }
}

impl<W: Write> Write for CrcWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.crc.update(&buf[..n]);
        Ok(n)
    }
    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

impl<S: Scalar> Checkpoint<S> {
    pub fn save(&self, path: &Path) -> Result<(), CkptError> {
        let file = std::fs::File::create(path)?;
        let mut w = CrcWriter::new(std::io::BufWriter::new(file));
        let m = &self.model;
        let cfg = &m.cfg;
        let pattern = match m.pattern {
            Some(p) => format!("{}:{}", p.n, p.m),
            None => "dense".into(),
        };
        let n_masks = m.masks.iter().filter(|x| x.is_some()).count();
        write!(
            w,
            "{MAGIC} {VERSION}\n\
             vocab {}\nctx {}\nlayers {}\nheads {}\ndim {}\nmlp_ratio {}\n\
             tie_embeddings {}\nsparsify_lm_head {}\n\
             step {}\nseed {}\nmode {}\nlambda_max {}\npattern {}\n\
             dtype f{}\ntensors {}\nmasks {}\nadapters {}\nEND\n",
            cfg.vocab,
            cfg.ctx,
            cfg.layers,
            cfg.heads,
            cfg.dim,
            cfg.mlp_ratio,
            cfg.tie_embeddings as u8,
            cfg.sparsify_lm_head as u8,
            self.step,
            self.seed,
            self.mode,
            self.lambda_max,
            pattern,
            S::BITS,
            m.tensors.len(),
            n_masks,
            m.adapters.len(),
        )?;

        for t in &m.tensors {
            let name = t.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(t.rows as u32).to_le_bytes())?;
            w.write_all(&(t.cols as u32).to_le_bytes())?;
            w.write_all(&(t.sparsifiable as u8).to_le_bytes())?;
            for v in &t.data {
                if S::BITS == 32 {
                    w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
                } else {
                    w.write_all(&v.to_f64().to_le_bytes())?;
                }
            }
        }
        for (i, mask) in m.masks.iter().enumerate() {
            let Some(mask) = mask else { continue };
            w.write_all(&(i as u32).to_le_bytes())?;
            w.write_all(&(mask.rows() as u32).to_le_bytes())?;
            w.write_all(&(mask.cols() as u32).to_le_bytes())?;
            w.write_all(&(mask.pattern().n as u32).to_le_bytes())?;
            w.write_all(&(mask.pattern().m as u32).to_le_bytes())?;
            for word in mask.words() {
                w.write_all(&word.to_le_bytes())?;
            }
        }
        for a in &m.adapters {
            w.write_all(&(a.base as u32).to_le_bytes())?;
            w.write_all(&(a.s as u32).to_le_bytes())?;
            w.write_all(&(a.x.map(|x| x as u32).unwrap_or(u32::MAX)).to_le_bytes())?;
            w.write_all(&(a.k as u32).to_le_bytes())?;
        }
        let crc = w.crc.finalize();
        w.inner.write_all(&crc.to_le_bytes())?;
        w.inner.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint<S>, CkptError> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 4 {
            return Err(CkptError::Format("file too small".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crate::bits::crc32(body);
        if stored != computed {
            return Err(CkptError::Crc { stored, computed });
        }

        // header: lines until END\n
        let hdr_end = body
            .windows(4)
            .position(|w| w == b"END\n")
            .ok_or_else(|| CkptError::Format("missing header terminator".into()))?;
        let header = std::str::from_utf8(&body[..hdr_end]).map_err(fmt)?;
        let mut kv = std::collections::HashMap::new();
        let mut lines = header.lines();
        let magic_line = lines.next().ok_or_else(|| CkptError::Format("empty header".into()))?;
        let mut mparts = magic_line.split_whitespace();
        if mparts.next() != Some(MAGIC) {
            return Err(CkptError::Format("bad magic".into()));
        }
        let version: u32 = mparts
            .next()
            .ok_or_else(|| CkptError::Format("missing version".into()))?
            .parse()
            .map_err(fmt)?;
        if version != VERSION {
            return Err(CkptError::Format(format!("unsupported version {version}")));
        }
        for line in lines {
            let mut it = line.splitn(2, ' ');
            let k = it.next().unwrap_or("");
            let v = it.next().unwrap_or("");
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<&str, CkptError> {
            kv.get(k).map(|s| s.as_str()).ok_or_else(|| CkptError::Format(format!("missing header key {k}")))
        };
        let parse_usize = |k: &str| -> Result<usize, CkptError> { get(k)?.parse().map_err(fmt) };

        let cfg = ModelConfig {
            vocab: parse_usize("vocab")?,
            ctx: parse_usize("ctx")?,
            layers: parse_usize("layers")?,
            heads: parse_usize("heads")?,
            dim: parse_usize("dim")?,
            mlp_ratio: parse_usize("mlp_ratio")?,
            tie_embeddings: get("tie_embeddings")? == "1",
            sparsify_lm_head: get("sparsify_lm_head")? == "1",
        };
        let step = parse_usize("step")?;
        let seed: u64 = get("seed")?.parse().map_err(fmt)?;
        let mode = get("mode")?.to_string();
        let lambda_max: f64 = get("lambda_max")?.parse().map_err(fmt)?;
        let dtype = get("dtype")?;
        let want = format!("f{}", S::BITS);
        if dtype != want {
            return Err(CkptError::Format(format!("dtype {dtype} but loader expects {want}")));
        }
        let pattern = match get("pattern")? {
            "dense" => None,
            s => {
                let (n, m) = s
                    .split_once(':')
                    .ok_or_else(|| CkptError::Format(format!("bad pattern {s}")))?;
                Some(NMPattern::new(n.parse().map_err(fmt)?, m.parse().map_err(fmt)?))
            }
        };
        let n_tensors = parse_usize("tensors")?;
        let n_masks = parse_usize("masks")?;
        let n_adapters = parse_usize("adapters")?;

        struct Cursor<'a>(&'a [u8]);
        impl<'a> Cursor<'a> {
            fn take(&mut self, n: usize) -> Result<&'a [u8], CkptError> {
                if self.0.len() < n {
                    return Err(CkptError::Format("truncated tensor data".into()));
                }
                let (head, rest) = self.0.split_at(n);
                self.0 = rest;
                Ok(head)
            }
            fn u32(&mut self) -> Result<u32, CkptError> {
                Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
            }
        }
        let mut cur = Cursor(&body[hdr_end + 4..]);

        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec()).map_err(fmt)?;
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let sparsifiable = cur.take(1)?[0] == 1;
            let count = rows * cols;
            let mut data = Vec::with_capacity(count);
            if S::BITS == 32 {
                let raw = cur.take(count * 4)?;
                for c in raw.chunks_exact(4) {
                    data.push(S::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64));
                }
            } else {
                let raw = cur.take(count * 8)?;
                for c in raw.chunks_exact(8) {
                    data.push(S::from_f64(f64::from_le_bytes(c.try_into().unwrap())));
                }
            }
            tensors.push(Tensor { name, rows, cols, data, sparsifiable });
        }

        let mut masks: Vec<Option<Mask>> = vec![None; n_tensors];
        for _ in 0..n_masks {
            let idx = cur.u32()? as usize;
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let n = cur.u32()? as usize;
            let m = cur.u32()? as usize;
            let words_len = (rows * cols).div_ceil(64);
            let raw = cur.take(words_len * 8)?;
            let words: Vec<u64> =
                raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
            if idx >= n_tensors {
                return Err(CkptError::Format(format!("mask index {idx} out of range")));
            }
            let mask = Mask::from_words(rows, cols, NMPattern::new(n, m), words);
            if !mask.is_valid() {
                return Err(CkptError::Format(format!("mask {idx} violates its {n}:{m} pattern")));
            }
            masks[idx] = Some(mask);
        }

        let mut adapters = Vec::with_capacity(n_adapters);
        for _ in 0..n_adapters {
            let base = cur.u32()? as usize;
            let s = cur.u32()? as usize;
            let x_raw = cur.u32()?;
            let k = cur.u32()? as usize;
            adapters.push(AdapterRef {
                base,
                s,
                x: if x_raw == u32::MAX { None } else { Some(x_raw as usize) },
                k,
            });
        }
        if !cur.0.is_empty() {
            return Err(CkptError::Format(format!("{} trailing bytes", cur.0.len())));
        }

        let model = Model { cfg, tensors, masks, adapters, pattern };
        Ok(Checkpoint { model, step, seed, mode, lambda_max })
    }
}

/// Architecture compatibility check for teacher/student pairing.
pub fn check_same_arch(a: &ModelConfig, b: &ModelConfig) -> Result<(), CkptError> {
    if a == b {
        Ok(())
    } else {
        Err(CkptError::ArchMismatch(format!(
            "teacher config {a:?} does not match run config {b:?}"
        )))
    }
}
