//! Binary checkpoint container.
//!
//! ```text
//! magic     8 bytes  "PCMCKPT\0"
//! version   u32 LE
//! config    u32 LE length + JSON ModelConfig
//! metadata  u32 LE length + JSON {lineage, seed, step}
//! count     u32 LE number of tensors
//! tensor*   u32 LE name length + UTF-8 name
//!           u32 LE rank (always 2) + u32 LE per dimension
//!           f32 LE values, row-major
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Mat;
use super::{Checkpoint, ModelConfig, ModelError, Stage};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PCMCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    lineage: Vec<Stage>,
    seed: u64,
    step: u64,
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_blob(w: &mut impl Write, b: &[u8]) -> std::io::Result<()> {
    put_u32(w, b.len() as u32)?;
    w.write_all(b)
}

pub fn write_checkpoint(ckpt: &Checkpoint, w: &mut impl Write) -> Result<(), ModelError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION)?;
    put_blob(w, &serde_json::to_vec(ckpt.config()).expect("config serializes"))?;
    let meta = Meta { lineage: ckpt.lineage().to_vec(), seed: ckpt.seed(), step: ckpt.step() };
    put_blob(w, &serde_json::to_vec(&meta).expect("meta serializes"))?;
    put_u32(w, ckpt.params().len() as u32)?;
    for (name, m) in ckpt.params().iter() {
        put_blob(w, name.as_bytes())?;
        put_u32(w, 2)?;
        put_u32(w, m.rows() as u32)?;
        put_u32(w, m.cols() as u32)?;
        let mut buf = Vec::with_capacity(m.len() * 4);
        for &v in m.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> Result<u32, ModelError> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b).map_err(truncated)?;
        Ok(u32::from_le_bytes(b))
    }

    fn blob(&mut self, limit: usize) -> Result<Vec<u8>, ModelError> {
        let n = self.u32()? as usize;
        if n > limit {
            return Err(ModelError::Format(format!("field length {n} exceeds {limit}")));
        }
        let mut b = vec![0u8; n];
        self.inner.read_exact(&mut b).map_err(truncated)?;
        Ok(b)
    }
}

fn truncated(e: std::io::Error) -> ModelError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        ModelError::Format("truncated checkpoint".into())
    } else {
        ModelError::Io(e)
    }
}

pub fn read_checkpoint(r: impl Read) -> Result<Checkpoint, ModelError> {
    let mut r = Reader { inner: r };
    let mut magic = [0u8; 8];
    r.inner.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let config: ModelConfig = serde_json::from_slice(&r.blob(1 << 20)?)
        .map_err(|e| ModelError::Format(format!("config: {e}")))?;
    let meta: Meta =
        serde_json::from_slice(&r.blob(1 << 20)?).map_err(|e| ModelError::Format(format!("metadata: {e}")))?;
    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = String::from_utf8(r.blob(4096)?).map_err(|_| ModelError::Format("tensor name is not UTF-8".into()))?;
        let rank = r.u32()?;
        if rank != 2 {
            return Err(ModelError::Format(format!("tensor {name} has rank {rank}, expected 2")));
        }
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        let n = rows.checked_mul(cols).filter(|n| *n <= 1 << 30).ok_or_else(|| ModelError::Format(format!("tensor {name} too large")))?;
        let mut buf = vec![0u8; n * 4];
        r.inner.read_exact(&mut buf).map_err(truncated)?;
        let data = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        params.push(name, Mat::from_vec(rows, cols, data));
    }
    Checkpoint::from_parts(config, params, meta.lineage, meta.seed, meta.step)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    write_checkpoint(ckpt, &mut buf)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    read_checkpoint(std::io::BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::super::{forward, init_model, Batch};
    use super::*;

    #[test]
    fn save_load_forward_is_stable() {
        let ckpt = init_model(&ModelConfig::tiny(30), 5).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&ckpt, &mut bytes).unwrap();
        let once = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(once.lineage(), ckpt.lineage());
        assert_eq!(once.config(), ckpt.config());

        // Fresh checkpoints are already f32-exact, so a round trip is lossless.
        assert_eq!(once, ckpt);
        let mut again = Vec::new();
        write_checkpoint(&once, &mut again).unwrap();
        assert_eq!(bytes, again);
        let b = Batch::new(&[(vec![8, 9, 10], vec![11, 12])]);
        assert_eq!(forward(&ckpt, &b).unwrap(), forward(&once, &b).unwrap());
    }

    #[test]
    fn rejects_corruption() {
        let ckpt = init_model(&ModelConfig::tiny(20), 1).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&ckpt, &mut bytes).unwrap();
        assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(ModelError::Format(_))));
    }
}
