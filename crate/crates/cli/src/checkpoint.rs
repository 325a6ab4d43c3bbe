//! Binary surrogate checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | field | type |
//! |---|---|
//! | magic | `b"CSSBOCKP"` |
//! | version | u32 |
//! | config | u32 length + JSON bytes of the surrogate configuration |
//! | standardization | f64 mean, f64 scale |
//! | fits | u64 |
//! | jitter | f64 |
//! | segment count | u32 |
//! | each segment | u32 name length, name bytes, u32 rows, u32 cols, rows·cols f64 values |

use std::io::{Read, Write};
use std::path::Path;

use cssbo_core::diff::{ParamVector, Segment};
use cssbo_core::surrogate::{Standardization, Surrogate, SurrogateConfig};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"CSSBOCKP";
pub const VERSION: u32 = 1;

pub fn encode(s: &Surrogate) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(s.config()).expect("config serializes");
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    let st = s.standardization();
    out.extend_from_slice(&st.mean.to_le_bytes());
    out.extend_from_slice(&st.scale.to_le_bytes());
    out.extend_from_slice(&(s.fits() as u64).to_le_bytes());
    out.extend_from_slice(&s.jitter().to_le_bytes());
    let p = s.params();
    out.extend_from_slice(&(p.segments().len() as u32).to_le_bytes());
    for seg in p.segments() {
        out.extend_from_slice(&(seg.name.len() as u32).to_le_bytes());
        out.extend_from_slice(seg.name.as_bytes());
        out.extend_from_slice(&(seg.rows as u32).to_le_bytes());
        out.extend_from_slice(&(seg.cols as u32).to_le_bytes());
        for v in p.get(seg) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    data: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.data.len() < n {
            return Err(CliError::Config("checkpoint is truncated".into()));
        }
        let (head, tail) = self.data.split_at(n);
        self.data = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(data: &[u8]) -> Result<Surrogate> {
    let mut r = Reader { data };
    if r.take(8)? != MAGIC {
        return Err(CliError::Config("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CliError::Config(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let cfg: SurrogateConfig = serde_json::from_slice(r.take(len)?).map_err(|e| CliError::Config(format!("checkpoint config: {e}")))?;
    let standardization = Standardization { mean: r.f64()?, scale: r.f64()? };
    let fits = r.u64()? as usize;
    let jitter = r.f64()?;
    let count = r.u32()? as usize;
    let mut segments = Vec::with_capacity(count);
    let mut values = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| CliError::Config("checkpoint segment name is not UTF-8".into()))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        segments.push(Segment { name, offset: values.len(), rows, cols });
        for _ in 0..rows * cols {
            values.push(r.f64()?);
        }
    }
    if !r.data.is_empty() {
        return Err(CliError::Config("trailing bytes after checkpoint".into()));
    }
    let theta = ParamVector::from_parts(values, segments)?;
    let mut s = Surrogate::from_parts(cfg, theta, standardization, fits)?;
    s.set_jitter(jitter);
    Ok(s)
}

/// Writes through a temporary file so a crash never leaves a torn checkpoint.
pub fn save(path: &Path, s: &Surrogate) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(CliError::io(&tmp))?;
    f.write_all(&encode(s)).map_err(CliError::io(&tmp))?;
    f.sync_all().map_err(CliError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(CliError::io(path))
}

pub fn load(path: &Path) -> Result<Surrogate> {
    let mut data = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut data)).map_err(CliError::io(path))?;
    decode(&data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let mut cfg = SurrogateConfig::default();
        cfg.embedding.d_hidden = 4;
        let mut s = Surrogate::new(cfg, 5).unwrap();
        s.set_hyper(0.7, 1.3, 0.02);
        s.set_jitter(1e-8);
        let back = decode(&encode(&s)).unwrap();
        assert_eq!(back.params(), s.params());
        assert_eq!(back.config(), s.config());
        assert_eq!(back.jitter(), 1e-8);
        assert_eq!(encode(&back), encode(&s));
    }

    #[test]
    fn rejects_corruption() {
        let mut cfg = SurrogateConfig::default();
        cfg.embedding.d_hidden = 4;
        let bytes = encode(&Surrogate::new(cfg, 5).unwrap());
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
