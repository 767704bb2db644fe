//! `MARQFC01` binary feature cache.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "MARQFC01"
//! meta_len     u32      UTF-8 JSON blob (config echo; may be empty)
//! meta         meta_len bytes
//! record_count u32
//! per record:
//!   clip_id_len      u16, clip_id bytes (UTF-8)
//!   feature_name_len u16, feature_name bytes (UTF-8)
//!   frame_rate_num   u32
//!   frame_rate_den   u32
//!   frames           u32
//!   dims             u32
//!   dtype            u8   (0 = f32, 1 = i64)
//!   payload          frames * dims * {4,8} bytes, row-major (time-major)
//! ```
//!
//! Payload round-trips are bit-exact: floats are stored as raw f32 bits.
//! The i64 variant carries integer token tensors.

use super::AudioIoError;
use crate::rate::Rate;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CACHE_MAGIC: &[u8; 8] = b"MARQFC01";

/// Record payload: raw feature floats or integer token labels.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    I64(Vec<i64>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One cached matrix: `frames x dims`, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCacheRecord {
    pub clip_id: String,
    pub feature_name: String,
    pub frame_rate: Rate,
    pub frames: u32,
    pub dims: u32,
    pub payload: Payload,
}

impl FeatureCacheRecord {
    fn validate(&self) -> Result<(), AudioIoError> {
        if self.dims == 0 {
            return Err(AudioIoError::ZeroDims {
                clip_id: self.clip_id.clone(),
                feature_name: self.feature_name.clone(),
            });
        }
        let expected = self.frames as usize * self.dims as usize;
        if self.payload.len() != expected {
            return Err(AudioIoError::Overflow(format!(
                "{}/{}: payload has {} values, frames*dims = {}",
                self.clip_id,
                self.feature_name,
                self.payload.len(),
                expected
            )));
        }
        Ok(())
    }
}

fn io_err(path: &Path, source: std::io::Error) -> AudioIoError {
    AudioIoError::Io { path: path.display().to_string(), source }
}

/// Write records with an optional metadata blob (resolved-config echo).
pub fn write_feature_cache_with_meta(
    records: &[FeatureCacheRecord],
    path: &Path,
    meta: &str,
) -> Result<(), AudioIoError> {
    if records.is_empty() {
        return Err(AudioIoError::EmptyRecords);
    }
    for rec in records {
        rec.validate()?;
    }
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let inner = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_u32::<LittleEndian>(meta.len() as u32)?;
        w.write_all(meta.as_bytes())?;
        w.write_u32::<LittleEndian>(records.len() as u32)?;
        for rec in records {
            w.write_u16::<LittleEndian>(rec.clip_id.len() as u16)?;
            w.write_all(rec.clip_id.as_bytes())?;
            w.write_u16::<LittleEndian>(rec.feature_name.len() as u16)?;
            w.write_all(rec.feature_name.as_bytes())?;
            w.write_u32::<LittleEndian>(rec.frame_rate.num() as u32)?;
            w.write_u32::<LittleEndian>(rec.frame_rate.den() as u32)?;
            w.write_u32::<LittleEndian>(rec.frames)?;
            w.write_u32::<LittleEndian>(rec.dims)?;
            match &rec.payload {
                Payload::F32(values) => {
                    w.write_u8(0)?;
                    for &v in values {
                        w.write_u32::<LittleEndian>(v.to_bits())?;
                    }
                }
                Payload::I64(values) => {
                    w.write_u8(1)?;
                    for &v in values {
                        w.write_i64::<LittleEndian>(v)?;
                    }
                }
            }
        }
        w.flush()
    };
    inner(&mut w).map_err(|e| io_err(path, e))
}

/// Write records with no metadata blob.
pub fn write_feature_cache(
    records: &[FeatureCacheRecord],
    path: &Path,
) -> Result<(), AudioIoError> {
    write_feature_cache_with_meta(records, path, "")
}

/// Read all records; returns `(records, meta)`.
pub fn read_feature_cache_with_meta(
    path: &Path,
) -> Result<(Vec<FeatureCacheRecord>, String), AudioIoError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| AudioIoError::Truncated("missing magic".into()))?;
    if &magic != CACHE_MAGIC {
        return Err(AudioIoError::BadMagic);
    }
    let meta_len = read_u32(&mut r, "meta length")?;
    let mut meta_bytes = vec![0u8; meta_len as usize];
    r.read_exact(&mut meta_bytes)
        .map_err(|_| AudioIoError::Truncated("meta blob".into()))?;
    let meta = String::from_utf8(meta_bytes)
        .map_err(|_| AudioIoError::Truncated("meta blob is not UTF-8".into()))?;

    let count = read_u32(&mut r, "record count")?;
    let mut records = Vec::with_capacity(count as usize);
    for i in 0..count {
        let clip_id = read_string(&mut r, &format!("record {i} clip_id"))?;
        let feature_name = read_string(&mut r, &format!("record {i} feature_name"))?;
        let num = read_u32(&mut r, "frame_rate_num")?;
        let den = read_u32(&mut r, "frame_rate_den")?;
        if num == 0 || den == 0 {
            return Err(AudioIoError::Overflow(format!(
                "record {i} has non-positive frame rate {num}/{den}"
            )));
        }
        let frames = read_u32(&mut r, "frames")?;
        let dims = read_u32(&mut r, "dims")?;
        let n = (frames as u64)
            .checked_mul(dims as u64)
            .ok_or_else(|| AudioIoError::Overflow(format!("record {i} frames*dims")))?;
        let dtype = r
            .read_u8()
            .map_err(|_| AudioIoError::Truncated(format!("record {i} dtype")))?;
        let payload = match dtype {
            0 => {
                let mut values = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    let bits = read_u32(&mut r, "f32 payload")?;
                    values.push(f32::from_bits(bits));
                }
                Payload::F32(values)
            }
            1 => {
                let mut values = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    let v = r
                        .read_i64::<LittleEndian>()
                        .map_err(|_| AudioIoError::Truncated("i64 payload".into()))?;
                    values.push(v);
                }
                Payload::I64(values)
            }
            other => {
                return Err(AudioIoError::Overflow(format!(
                    "record {i} has unknown dtype {other}"
                )))
            }
        };
        let rec = FeatureCacheRecord {
            clip_id,
            feature_name,
            frame_rate: Rate::new(u64::from(num), u64::from(den)),
            frames,
            dims,
            payload,
        };
        rec.validate()?;
        records.push(rec);
    }
    Ok((records, meta))
}

/// Read all records, discarding metadata.
pub fn read_feature_cache(path: &Path) -> Result<Vec<FeatureCacheRecord>, AudioIoError> {
    read_feature_cache_with_meta(path).map(|(records, _)| records)
}

/// Find one record by id and feature name.
pub fn find_record<'a>(
    records: &'a [FeatureCacheRecord],
    clip_id: &str,
    feature_name: &str,
) -> Result<&'a FeatureCacheRecord, AudioIoError> {
    records
        .iter()
        .find(|r| r.clip_id == clip_id && r.feature_name == feature_name)
        .ok_or_else(|| AudioIoError::MissingRecord {
            clip_id: clip_id.to_string(),
            feature_name: feature_name.to_string(),
        })
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, AudioIoError> {
    r.read_u32::<LittleEndian>()
        .map_err(|_| AudioIoError::Truncated(what.to_string()))
}

fn read_string(r: &mut impl Read, what: &str) -> Result<String, AudioIoError> {
    let len = r
        .read_u16::<LittleEndian>()
        .map_err(|_| AudioIoError::Truncated(what.to_string()))?;
    let mut bytes = vec![0u8; len as usize];
    r.read_exact(&mut bytes)
        .map_err(|_| AudioIoError::Truncated(what.to_string()))?;
    String::from_utf8(bytes)
        .map_err(|_| AudioIoError::Truncated(format!("{what} is not UTF-8")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(clip: &str, feature: &str, frames: u32, dims: u32, values: Vec<f32>) -> FeatureCacheRecord {
        FeatureCacheRecord {
            clip_id: clip.into(),
            feature_name: feature.into(),
            frame_rate: Rate::new(16000, 1024),
            frames,
            dims,
            payload: Payload::F32(values),
        }
    }

    #[test]
    fn single_value_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.marqfc");
        let rec = record("a", "mel", 1, 1, vec![0.0]);
        write_feature_cache(&[rec.clone()], &path).unwrap();
        assert_eq!(read_feature_cache(&path).unwrap(), vec![rec]);
    }

    #[test]
    fn multi_record_payload_bytes_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("multi.marqfc");
        let rec = record("a", "mel", 3, 2, vec![1.5, -2.25, 3.0, 0.125, -0.5, 9.75]);
        let tok = FeatureCacheRecord {
            clip_id: "a".into(),
            feature_name: "tokens".into(),
            frame_rate: Rate::new(125, 8),
            frames: 2,
            dims: 2,
            payload: Payload::I64(vec![0, 8191, 42, 7]),
        };
        write_feature_cache_with_meta(&[rec.clone(), tok.clone()], &path, "{\"k\":1}").unwrap();
        let (records, meta) = read_feature_cache_with_meta(&path).unwrap();
        assert_eq!(records, vec![rec, tok]);
        assert_eq!(meta, "{\"k\":1}");
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.marqfc");
        write_feature_cache(&[record("a", "mel", 1, 1, vec![1.0])], &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_feature_cache(&path), Err(AudioIoError::BadMagic)));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.marqfc");
        write_feature_cache(&[record("a", "mel", 4, 4, vec![1.0; 16])], &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(
            read_feature_cache(&path),
            Err(AudioIoError::Truncated(_))
        ));
    }

    #[test]
    fn empty_record_list_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("none.marqfc");
        assert!(matches!(
            write_feature_cache(&[], &path),
            Err(AudioIoError::EmptyRecords)
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact_for_arbitrary_finite_floats(
            values in proptest::collection::vec(-1e30f32..1e30f32, 1..200),
            dims in 1u32..8,
        ) {
            let frames = values.len() as u32 / dims;
            prop_assume!(frames >= 1);
            let values = values[..(frames * dims) as usize].to_vec();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("prop.marqfc");
            let rec = record("clip", "mel", frames, dims, values);
            write_feature_cache(&[rec.clone()], &path).unwrap();
            let back = read_feature_cache(&path).unwrap();
            prop_assert_eq!(back, vec![rec]);
        }
    }
}
