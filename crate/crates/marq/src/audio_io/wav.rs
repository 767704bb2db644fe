//! Minimal RIFF/WAVE reader and writer.
//!
//! Reads 16-bit PCM and 32-bit IEEE float, any channel count (downmixed to
//! mono by the caller-facing API). Writes 16-bit PCM, which is enough for
//! fixtures and synthetic corpora.

use super::AudioIoError;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

fn io_err(path: &Path, source: std::io::Error) -> AudioIoError {
    AudioIoError::Io { path: path.display().to_string(), source }
}

/// Read a WAV file, mean-downmixing to mono. Returns (samples, sample_rate).
pub fn read_wav_mono(path: &Path) -> Result<(Vec<f64>, u32), AudioIoError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);

    let mut riff = [0u8; 4];
    r.read_exact(&mut riff).map_err(|e| io_err(path, e))?;
    if &riff != b"RIFF" {
        return Err(AudioIoError::UnsupportedEncoding("not a RIFF file".into()));
    }
    r.read_u32::<LittleEndian>().map_err(|e| io_err(path, e))?;
    let mut wave = [0u8; 4];
    r.read_exact(&mut wave).map_err(|e| io_err(path, e))?;
    if &wave != b"WAVE" {
        return Err(AudioIoError::UnsupportedEncoding("not a WAVE form".into()));
    }

    let mut format: Option<(u16, u16, u32, u16)> = None; // (tag, channels, rate, bits)
    let mut data: Option<Vec<u8>> = None;
    loop {
        let mut id = [0u8; 4];
        match r.read_exact(&mut id) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(io_err(path, e)),
        }
        let size = r.read_u32::<LittleEndian>().map_err(|e| io_err(path, e))?;
        match &id {
            b"fmt " => {
                let mut body = vec![0u8; size as usize];
                r.read_exact(&mut body).map_err(|e| io_err(path, e))?;
                if body.len() < 16 {
                    return Err(AudioIoError::UnsupportedEncoding("short fmt chunk".into()));
                }
                let tag = u16::from_le_bytes([body[0], body[1]]);
                let channels = u16::from_le_bytes([body[2], body[3]]);
                let rate = u32::from_le_bytes([body[4], body[5], body[6], body[7]]);
                let bits = u16::from_le_bytes([body[14], body[15]]);
                format = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let mut body = vec![0u8; size as usize];
                r.read_exact(&mut body).map_err(|e| io_err(path, e))?;
                data = Some(body);
            }
            _ => {
                // Skip unknown chunks; chunk bodies are word-aligned.
                let skip = u64::from(size) + u64::from(size % 2);
                r.seek(SeekFrom::Current(skip as i64)).map_err(|e| io_err(path, e))?;
                continue;
            }
        }
        if size % 2 == 1 {
            r.seek(SeekFrom::Current(1)).map_err(|e| io_err(path, e))?;
        }
    }

    let (tag, channels, rate, bits) = format
        .ok_or_else(|| AudioIoError::UnsupportedEncoding("missing fmt chunk".into()))?;
    let data =
        data.ok_or_else(|| AudioIoError::UnsupportedEncoding("missing data chunk".into()))?;
    if channels == 0 {
        return Err(AudioIoError::UnsupportedEncoding("zero channels".into()));
    }

    let interleaved: Vec<f64> = match (tag, bits) {
        (1, 16) => data
            .chunks_exact(2)
            .map(|b| f64::from(i16::from_le_bytes([b[0], b[1]])) / 32768.0)
            .collect(),
        (3, 32) => data
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect(),
        _ => {
            return Err(AudioIoError::UnsupportedEncoding(format!(
                "format tag {tag} with {bits} bits (expected 16-bit PCM or 32-bit float)"
            )))
        }
    };

    let ch = channels as usize;
    let frames = interleaved.len() / ch;
    if frames == 0 {
        return Err(AudioIoError::ZeroLength(path.display().to_string()));
    }
    let mono: Vec<f64> = (0..frames)
        .map(|f| interleaved[f * ch..(f + 1) * ch].iter().sum::<f64>() / ch as f64)
        .collect();
    Ok((mono, rate))
}

/// Write channels of equal length as 16-bit PCM. Samples are clamped to
/// [-1, 1] before quantization.
pub fn write_wav(path: &Path, channels: &[Vec<f64>], sample_rate: u32) -> Result<(), AudioIoError> {
    assert!(!channels.is_empty(), "need at least one channel");
    let frames = channels[0].len();
    assert!(
        channels.iter().all(|c| c.len() == frames),
        "channels must have equal length"
    );
    let n_ch = channels.len() as u16;
    let data_len = (frames * channels.len() * 2) as u32;

    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(b"RIFF")?;
        w.write_u32::<LittleEndian>(36 + data_len)?;
        w.write_all(b"WAVE")?;
        w.write_all(b"fmt ")?;
        w.write_u32::<LittleEndian>(16)?;
        w.write_u16::<LittleEndian>(1)?; // PCM
        w.write_u16::<LittleEndian>(n_ch)?;
        w.write_u32::<LittleEndian>(sample_rate)?;
        w.write_u32::<LittleEndian>(sample_rate * u32::from(n_ch) * 2)?;
        w.write_u16::<LittleEndian>(n_ch * 2)?;
        w.write_u16::<LittleEndian>(16)?;
        w.write_all(b"data")?;
        w.write_u32::<LittleEndian>(data_len)?;
        for f in 0..frames {
            for ch in channels {
                let s = ch[f].clamp(-1.0, 1.0);
                let q = (s * 32767.0).round() as i16;
                w.write_i16::<LittleEndian>(q)?;
            }
        }
        w.flush()
    };
    write(&mut w).map_err(|e| io_err(path, e))
}
