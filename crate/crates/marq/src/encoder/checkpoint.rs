//! `MARQCK01` checkpoint format.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        8 bytes  "MARQCK01"
//! step         u64
//! config_len   u32, config bytes (UTF-8 JSON: resolved config echo)
//! param_count  u64
//! params       param_count x f64
//! has_opt      u8 (0 or 1)
//! if 1:
//!   opt_t      u64   (optimizer step counter for bias correction)
//!   m          param_count x f64
//!   v          param_count x f64
//! ```

use super::EncoderError;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MARQCK01";

/// Adam moment vectors, stored alongside parameters for exact resume.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    /// Resolved-config echo (JSON), for provenance.
    pub config_json: String,
    pub params: Vec<f64>,
    pub opt: Option<OptState>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), EncoderError> {
    if let Some(opt) = &ckpt.opt {
        if opt.m.len() != ckpt.params.len() || opt.v.len() != ckpt.params.len() {
            return Err(EncoderError::Checkpoint("optimizer state length mismatch".into()));
        }
    }
    let file = File::create(path)
        .map_err(|e| EncoderError::Checkpoint(format!("create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    let inner = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u64::<LittleEndian>(ckpt.step)?;
        w.write_u32::<LittleEndian>(ckpt.config_json.len() as u32)?;
        w.write_all(ckpt.config_json.as_bytes())?;
        w.write_u64::<LittleEndian>(ckpt.params.len() as u64)?;
        for &p in &ckpt.params {
            w.write_f64::<LittleEndian>(p)?;
        }
        match &ckpt.opt {
            None => w.write_u8(0)?,
            Some(opt) => {
                w.write_u8(1)?;
                w.write_u64::<LittleEndian>(opt.t)?;
                for &m in &opt.m {
                    w.write_f64::<LittleEndian>(m)?;
                }
                for &v in &opt.v {
                    w.write_f64::<LittleEndian>(v)?;
                }
            }
        }
        w.flush()
    };
    inner(&mut w).map_err(|e| EncoderError::Checkpoint(format!("write {}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, EncoderError> {
    let file = File::open(path)
        .map_err(|e| EncoderError::Checkpoint(format!("open {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    let fail = |what: &str| EncoderError::Checkpoint(format!("truncated checkpoint: {what}"));

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| fail("magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(EncoderError::Checkpoint("magic mismatch (expected MARQCK01)".into()));
    }
    let step = r.read_u64::<LittleEndian>().map_err(|_| fail("step"))?;
    let config_len = r.read_u32::<LittleEndian>().map_err(|_| fail("config length"))?;
    let mut config_bytes = vec![0u8; config_len as usize];
    r.read_exact(&mut config_bytes).map_err(|_| fail("config"))?;
    let config_json = String::from_utf8(config_bytes)
        .map_err(|_| EncoderError::Checkpoint("config echo is not UTF-8".into()))?;
    let count = r.read_u64::<LittleEndian>().map_err(|_| fail("param count"))? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        params.push(r.read_f64::<LittleEndian>().map_err(|_| fail("params"))?);
    }
    let has_opt = r.read_u8().map_err(|_| fail("opt flag"))?;
    let opt = match has_opt {
        0 => None,
        1 => {
            let t = r.read_u64::<LittleEndian>().map_err(|_| fail("opt t"))?;
            let mut m = Vec::with_capacity(count);
            for _ in 0..count {
                m.push(r.read_f64::<LittleEndian>().map_err(|_| fail("opt m"))?);
            }
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                v.push(r.read_f64::<LittleEndian>().map_err(|_| fail("opt v"))?);
            }
            Some(OptState { t, m, v })
        }
        other => {
            return Err(EncoderError::Checkpoint(format!("bad opt flag {other}")));
        }
    };
    Ok(Checkpoint { step, config_json, params, opt })
}
