//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "DUCC"  u32 version
//! u32 tag length, tag bytes (UTF-8)
//! u64 training seed, u32 epoch reached
//! u32 tensor count
//! per tensor: u32 name length, name bytes, u32 rank, u32 dims[rank], f32 payload
//! ```
//!
//! The tag names the variant and any non-default model geometry, e.g.
//! `duccnet` or `duccnet:s16:f4:d8`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::LayerGraph;
use crate::models::{build_variant, ModelConfig, ModelVariant};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DUCC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub tag: String,
    pub seed: u64,
    pub epoch: u32,
    /// Trainable parameters and batch-norm moving statistics in graph order.
    pub tensors: Vec<(String, Tensor)>,
}

/// Encodes a variant and model geometry as a checkpoint tag.
pub fn model_tag(variant: ModelVariant, cfg: &ModelConfig) -> String {
    let d = ModelConfig::default();
    let mut tag = variant.tag().to_string();
    if cfg.input_size != d.input_size {
        tag += &format!(":s{}", cfg.input_size);
    }
    if cfg.filters != d.filters {
        tag += &format!(":f{}", cfg.filters);
    }
    if cfg.dense_units != d.dense_units {
        tag += &format!(":d{}", cfg.dense_units);
    }
    if cfg.dropout != d.dropout {
        tag += &format!(":p{}", cfg.dropout);
    }
    if cfg.bn_epsilon != d.bn_epsilon {
        tag += &format!(":e{}", cfg.bn_epsilon);
    }
    if cfg.bn_momentum != d.bn_momentum {
        tag += &format!(":m{}", cfg.bn_momentum);
    }
    tag
}

/// Inverse of [`model_tag`].
pub fn parse_model_tag(tag: &str) -> Result<(ModelVariant, ModelConfig)> {
    let mut parts = tag.split(':');
    let variant: ModelVariant = parts.next().unwrap_or_default().parse()?;
    let mut cfg = ModelConfig::default();
    for p in parts {
        let bad = || Error::Checkpoint(format!("malformed model tag field `{p}` in `{tag}`"));
        let (key, val) = p.split_at_checked(1).ok_or_else(bad)?;
        match key {
            "s" => cfg.input_size = val.parse().map_err(|_| bad())?,
            "f" => cfg.filters = val.parse().map_err(|_| bad())?,
            "d" => cfg.dense_units = val.parse().map_err(|_| bad())?,
            "p" => cfg.dropout = val.parse().map_err(|_| bad())?,
            "e" => cfg.bn_epsilon = val.parse().map_err(|_| bad())?,
            "m" => cfg.bn_momentum = val.parse().map_err(|_| bad())?,
            _ => return Err(bad()),
        }
    }
    Ok((variant, cfg))
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn from_graph(graph: &LayerGraph, tag: impl Into<String>, seed: u64, epoch: u32) -> Self {
        Self {
            version: FORMAT_VERSION,
            tag: tag.into(),
            seed,
            epoch,
            tensors: graph.state().into_iter().map(|(n, t)| (n, t.clone())).collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        put_u32(&mut out, self.tag.len())?;
        out.extend_from_slice(self.tag.as_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        put_u32(&mut out, self.tensors.len())?;
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rank())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("missing DUCC magic bytes".into()));
        }
        let version = r.u32()? as u32;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let tag = r.string()?;
        let seed = r.u64()?;
        let epoch = r.u32()? as u32;
        let count = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= buf.len())
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` has implausible shape {shape:?}")))?;
            let bytes = r.take(n * 4)?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self { version, tag, seed, epoch, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Rebuilds the tagged architecture and loads the stored tensors into it.
    pub fn build_graph(&self) -> Result<LayerGraph> {
        let (variant, cfg) = parse_model_tag(&self.tag)?;
        let mut g = build_variant(variant, &cfg, self.seed)?;
        g.load_state(&self.tensors)
            .map_err(|e| Error::Checkpoint(format!("checkpoint does not match `{}` graph: {e}", self.tag)))?;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Mode;

    fn small() -> ModelConfig {
        ModelConfig { input_size: 16, filters: 4, dense_units: 8, ..ModelConfig::default() }
    }

    #[test]
    fn tags_round_trip() {
        let cfg = small();
        let tag = model_tag(ModelVariant::DuccNet, &cfg);
        assert_eq!(tag, "duccnet:s16:f4:d8");
        assert_eq!(parse_model_tag(&tag).unwrap(), (ModelVariant::DuccNet, cfg));
        assert_eq!(model_tag(ModelVariant::Model3, &ModelConfig::default()), "model3");
        let odd = ModelConfig { bn_epsilon: 1e-5, dropout: 0.25, ..ModelConfig::default() };
        assert_eq!(parse_model_tag(&model_tag(ModelVariant::Model1, &odd)).unwrap().1, odd);
        assert!(parse_model_tag("duccnet:q1").is_err());
        assert!(parse_model_tag("lenet").is_err());
    }

    #[test]
    fn bytes_round_trip_bitwise() {
        let cfg = small();
        let mut g: LayerGraph = build_variant(ModelVariant::DuccNet, &cfg, 4).unwrap();
        let x = Tensor::from_fn([3, 16, 16, 3], |i| (i % 11) as f32 / 11.0).unwrap();
        g.forward(&x, Mode::Train, 0).unwrap();
        let ck = Checkpoint::from_graph(&g, model_tag(ModelVariant::DuccNet, &cfg), 4, 7);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let g2 = back.build_graph().unwrap();
        let (a, b) = (g.infer(&x).unwrap(), g2.infer(&x).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn header_layout() {
        let ck = Checkpoint {
            version: FORMAT_VERSION,
            tag: "scnn".into(),
            seed: 9,
            epoch: 2,
            tensors: vec![("w".into(), Tensor::new([2], vec![1.0, -2.0]).unwrap())],
        };
        let b = ck.to_bytes().unwrap();
        let mut want = b"DUCC".to_vec();
        want.extend(1u32.to_le_bytes());
        want.extend(4u32.to_le_bytes());
        want.extend(b"scnn");
        want.extend(9u64.to_le_bytes());
        want.extend(2u32.to_le_bytes());
        want.extend(1u32.to_le_bytes());
        want.extend(1u32.to_le_bytes());
        want.extend(b"w");
        want.extend(1u32.to_le_bytes());
        want.extend(2u32.to_le_bytes());
        want.extend(1f32.to_le_bytes());
        want.extend((-2f32).to_le_bytes());
        assert_eq!(b, want);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let ck = Checkpoint::from_graph(&build_variant(ModelVariant::Model1, &small(), 0).unwrap(), "model1:s16:f4:d8", 0, 0);
        let b = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn mismatched_graph_rejected() {
        let g = build_variant(ModelVariant::Model1, &small(), 0).unwrap();
        let mut ck = Checkpoint::from_graph(&g, "duccnet:s16:f4:d8", 0, 0);
        assert!(matches!(ck.build_graph(), Err(Error::Checkpoint(_))));
        ck.tag = "model1:s16:f4:d8".into();
        assert!(ck.build_graph().is_ok());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ducc");
        let g = build_variant(ModelVariant::Model3, &small(), 1).unwrap();
        let ck = Checkpoint::from_graph(&g, model_tag(ModelVariant::Model3, &small()), 1, 0);
        ck.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), ck);
    }
}
