//! On-disk dataset: `manifest.toml` plus `chunk-NNNNN.bin` files.
//!
//! Chunk layout (all integers little-endian):
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `LGCK`                           |
//! | 4      | 4    | format version (u32)                   |
//! | 8      | 4    | clip count `n` (u32)                   |
//! | 12     | 4    | floats per clip `f = L·C·H·W` (u32)    |
//! | 16     | 4·n·f| pixels, f32, clip → frame → C → H → W  |
//! | end−4  | 4    | CRC-32 (IEEE) of every preceding byte  |
//!
//! Chunk `i` holds clips `i·clips_per_chunk ..` in index order.

use std::fs;
use std::path::{Path, PathBuf};

use loga_core::{Clip, Frame};

use crate::dataset::Dataset;
use crate::error::{DataError, Result};
use crate::manifest::{ClipRecord, DatasetManifest, FORMAT_VERSION, MANIFEST_FILE};

pub const CHUNK_MAGIC: [u8; 4] = *b"LGCK";
pub const HEADER_LEN: usize = 16;
pub const CHECKSUM_LEN: usize = 4;

pub fn chunk_name(index: usize) -> String {
    format!("chunk-{index:05}.bin")
}

fn encode_chunk(clips: &[Clip], floats_per_clip: usize) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + clips.len() * floats_per_clip * 4 + CHECKSUM_LEN);
    buf.extend_from_slice(&CHUNK_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(clips.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(floats_per_clip as u32).to_le_bytes());
    for clip in clips {
        for frame in &clip.frames {
            for p in &frame.pixels {
                buf.extend_from_slice(&p.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

/// Writes the manifest and chunk files into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(DataError::io(dir))?;
    let m = dataset.manifest();
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, m.to_toml()).map_err(DataError::io(&manifest_path))?;
    let floats = m.clip_len * m.frame_len();
    for (i, chunk) in dataset.clips().chunks(m.clips_per_chunk).enumerate() {
        let path = dir.join(chunk_name(i));
        fs::write(&path, encode_chunk(chunk, floats)).map_err(DataError::io(&path))?;
    }
    log::info!("wrote {} clips to {}", dataset.clips().len(), dir.display());
    Ok(())
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

/// Streams clips from a dataset directory, one chunk in memory at a time.
#[derive(Debug)]
pub struct DatasetReader {
    dir: PathBuf,
    manifest: DatasetManifest,
}

impl DatasetReader {
    /// Reads and validates the manifest; chunks are read lazily.
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(&dir.join(MANIFEST_FILE))?;
        manifest.validate()?;
        if manifest.clips.is_empty() {
            return Err(DataError::Validation(format!(
                "{} has no clip index; generate the dataset first",
                dir.display()
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn num_chunks(&self) -> usize {
        self.manifest.clips.len().div_ceil(self.manifest.clips_per_chunk)
    }

    /// Decodes chunk `index` after checking its header, length and checksum.
    pub fn read_chunk(&self, index: usize) -> Result<Vec<Clip>> {
        let m = &self.manifest;
        let name = chunk_name(index);
        let path = self.dir.join(&name);
        let bytes = fs::read(&path).map_err(DataError::io(&path))?;
        let first = index * m.clips_per_chunk;
        let records = &m.clips[first..(first + m.clips_per_chunk).min(m.clips.len())];
        let floats = m.clip_len * m.frame_len();

        if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
            return Err(DataError::Truncated {
                chunk: name,
                detail: format!("{} bytes, shorter than header and checksum", bytes.len()),
            });
        }
        if bytes[..4] != CHUNK_MAGIC {
            return Err(DataError::Malformed {
                chunk: name,
                detail: "bad magic".into(),
            });
        }
        let version = u32_at(&bytes, 4);
        if version != FORMAT_VERSION {
            return Err(DataError::Version {
                what: format!("chunk {name}"),
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let (count, per_clip) = (u32_at(&bytes, 8) as usize, u32_at(&bytes, 12) as usize);
        if count != records.len() || per_clip != floats {
            return Err(DataError::Malformed {
                chunk: name,
                detail: format!(
                    "header says {count} clips of {per_clip} floats, index expects {} of {floats}",
                    records.len()
                ),
            });
        }
        let expected = HEADER_LEN + count * per_clip * 4 + CHECKSUM_LEN;
        if bytes.len() < expected {
            return Err(DataError::Truncated {
                chunk: name,
                detail: format!("{} of {expected} bytes", bytes.len()),
            });
        }
        if bytes.len() > expected {
            return Err(DataError::Malformed {
                chunk: name,
                detail: format!("{} trailing bytes", bytes.len() - expected),
            });
        }
        let body = &bytes[..expected - CHECKSUM_LEN];
        if crc32fast::hash(body) != u32_at(&bytes, expected - CHECKSUM_LEN) {
            return Err(DataError::Checksum { chunk: name });
        }
        let pixels: Vec<f32> = body[HEADER_LEN..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        records
            .iter()
            .zip(pixels.chunks_exact(per_clip))
            .map(|(r, px)| self.clip_from(r, px))
            .collect()
    }

    fn clip_from(&self, r: &ClipRecord, pixels: &[f32]) -> Result<Clip> {
        let m = &self.manifest;
        let frames = pixels
            .chunks_exact(m.frame_len())
            .map(|p| Frame::new(m.height, m.width, m.channels, p.to_vec()))
            .collect();
        Ok(Clip {
            id: r.id,
            tracklet: r.tracklet,
            identity: r.identity,
            camera: r.camera,
            frames,
            flags: r.frame_flags()?,
        })
    }

    /// Every clip in index order, chunk by chunk.
    pub fn clips(&self) -> impl Iterator<Item = Result<Clip>> + '_ {
        (0..self.num_chunks()).flat_map(move |i| match self.read_chunk(i) {
            Ok(clips) => clips.into_iter().map(Ok).collect::<Vec<_>>(),
            Err(e) => vec![Err(e)],
        })
    }
}

/// Reads a whole dataset directory into memory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let reader = DatasetReader::open(dir)?;
    let clips = reader.clips().collect::<Result<Vec<_>>>()?;
    Dataset::new(reader.manifest, clips)
}
