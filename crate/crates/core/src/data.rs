//! Clip records, JSONL manifests, the clip-tensor file format, frame
//! sampling, and the video-level train/test split.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::router::DomainKey;
use crate::tensor::Tensor;

/// Fixed temporal length every clip is sampled to before hitting a model.
pub const CLIP_FRAMES: usize = 16;

/// Per-channel normalization constants applied after scaling pixels to [0,1].
pub const NORM_MEAN: f32 = 0.45;
pub const NORM_STD: f32 = 0.225;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unassigned,
}

/// One datapoint: a stitch clip scored for one skill domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub video_id: String,
    pub stitch_idx: u32,
    pub domain: DomainKey,
    pub label: u8,
    pub path: PathBuf,
    pub split: Split,
}

/// Read a JSONL manifest, validating labels and key uniqueness.
pub fn read_manifest(path: &Path) -> Result<Vec<ClipRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ClipRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        if rec.label > 1 {
            return Err(Error::Data(format!(
                "{}:{}: label must be 0 or 1, got {}",
                path.display(),
                lineno + 1,
                rec.label
            )));
        }
        if !seen.insert((rec.video_id.clone(), rec.stitch_idx, rec.domain)) {
            return Err(Error::Data(format!(
                "{}:{}: duplicate (video_id, stitch_idx, domain) = ({}, {}, {})",
                path.display(),
                lineno + 1,
                rec.video_id,
                rec.stitch_idx,
                rec.domain
            )));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[ClipRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut out, rec).map_err(|e| Error::Data(e.to_string()))?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Clip paths are stored relative to the manifest's directory.
pub fn resolve_clip_path(manifest_path: &Path, record: &ClipRecord) -> PathBuf {
    if record.path.is_absolute() {
        record.path.clone()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&record.path)
    }
}

// ── Clip tensor ─────────────────────────────────────────────────────

/// Pixel data for one clip: channels x frames x height x width, f32 in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ClipTensor {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ClipTensor {
    pub fn new(channels: usize, frames: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        assert!(channels == 1 || channels == 3, "clip channels must be 1 or 3");
        assert_eq!(data.len(), channels * frames * height * width);
        ClipTensor { channels, frames, height, width, data }
    }

    pub fn zeros(channels: usize, frames: usize, height: usize, width: usize) -> Self {
        Self::new(channels, frames, height, width, vec![0.0; channels * frames * height * width])
    }

    pub fn plane(&self, c: usize, t: usize) -> &[f32] {
        let sz = self.height * self.width;
        let off = (c * self.frames + t) * sz;
        &self.data[off..off + sz]
    }

    pub fn plane_mut(&mut self, c: usize, t: usize) -> &mut [f32] {
        let sz = self.height * self.width;
        let off = (c * self.frames + t) * sz;
        &mut self.data[off..off + sz]
    }

    /// Standardized model input of shape [C, T, H, W].
    pub fn normalized(&self) -> Tensor<f32> {
        Tensor::new(
            &[self.channels, self.frames, self.height, self.width],
            self.data.iter().map(|&p| (p - NORM_MEAN) / NORM_STD).collect(),
        )
    }
}

const CLIP_MAGIC: &[u8; 4] = b"CLP1";
const CLIP_HEADER_LEN: u64 = 4 + 5 * 4;

/// Write the clip-tensor format: magic `CLP1`, five LE u32 (dtype code 0,
/// C, T, H, W), then C*T*H*W LE f32 values.
pub fn write_clip(path: &Path, clip: &ClipTensor) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut buf = Vec::with_capacity(CLIP_HEADER_LEN as usize + clip.data.len() * 4);
    buf.extend_from_slice(CLIP_MAGIC);
    for v in [0u32, clip.channels as u32, clip.frames as u32, clip.height as u32, clip.width as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &p in &clip.data {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_clip(path: &Path) -> Result<ClipTensor> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::Format { offset: 0, msg: "file shorter than magic".into() })?;
    if &magic != CLIP_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("expected magic {:?}, found {:?}", CLIP_MAGIC, magic),
        });
    }
    let mut header = [0u32; 5];
    for (i, slot) in header.iter_mut().enumerate() {
        let mut b = [0u8; 4];
        reader.read_exact(&mut b).map_err(|_| Error::Format {
            offset: 4 + i as u64 * 4,
            msg: "truncated header".into(),
        })?;
        *slot = u32::from_le_bytes(b);
    }
    let [dtype, c, t, h, w] = header;
    if dtype != 0 {
        return Err(Error::Format { offset: 4, msg: format!("unsupported dtype code {dtype}, expected 0 (f32)") });
    }
    if !(c == 1 || c == 3) || t == 0 || h == 0 || w == 0 {
        return Err(Error::Format {
            offset: 8,
            msg: format!("invalid extents C={c} T={t} H={h} W={w}"),
        });
    }
    let numel = c as usize * t as usize * h as usize * w as usize;
    let mut payload = vec![0u8; numel * 4];
    let mut read = 0usize;
    while read < payload.len() {
        match reader.read(&mut payload[read..]) {
            Ok(0) => {
                return Err(Error::Format {
                    offset: CLIP_HEADER_LEN + read as u64,
                    msg: format!(
                        "truncated payload: expected {} bytes, found {}",
                        numel * 4,
                        read
                    ),
                })
            }
            Ok(n) => read += n,
            Err(e) => return Err(Error::io(path, e)),
        }
    }
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Format {
            offset: CLIP_HEADER_LEN + payload.len() as u64,
            msg: "trailing bytes after payload".into(),
        });
    }
    let mut data = Vec::with_capacity(numel);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::Format {
                offset: CLIP_HEADER_LEN + i as u64 * 4,
                msg: format!("pixel {v} outside [0,1]"),
            });
        }
        data.push(v);
    }
    Ok(ClipTensor::new(c as usize, t as usize, h as usize, w as usize, data))
}

// ── Frame sampling ──────────────────────────────────────────────────

/// Indices selecting `target` frames out of `n_frames`: i -> floor(i*n/target).
/// Non-decreasing; short sources repeat frames.
pub fn sample_frames(n_frames: usize, target: usize) -> Result<Vec<usize>> {
    if target == 0 {
        return Err(Error::Contract("sample_frames target must be >= 1".into()));
    }
    if n_frames == 0 {
        return Err(Error::Contract("sample_frames needs at least one source frame".into()));
    }
    Ok((0..target).map(|i| i * n_frames / target).collect())
}

/// Gather sampled frames into a new clip of exactly `target` frames.
pub fn sample_clip_frames(clip: &ClipTensor, target: usize) -> Result<ClipTensor> {
    let idx = sample_frames(clip.frames, target)?;
    let plane = clip.height * clip.width;
    let mut data = Vec::with_capacity(clip.channels * target * plane);
    for c in 0..clip.channels {
        for &t in &idx {
            data.extend_from_slice(clip.plane(c, t));
        }
    }
    Ok(ClipTensor::new(clip.channels, target, clip.height, clip.width, data))
}

// ── Train/test split ────────────────────────────────────────────────

/// Assign splits at the video level: all stitches of a video share a side.
/// |test videos| = round(test_fraction * |videos|), seeded shuffle.
pub fn split_videos(records: &mut [ClipRecord], test_fraction: f64, seed: u64) -> Result<()> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Contract(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut videos: Vec<String> = Vec::new();
    for rec in records.iter() {
        if !videos.contains(&rec.video_id) {
            videos.push(rec.video_id.clone());
        }
    }
    if videos.len() < 2 {
        return Err(Error::Contract(format!(
            "split needs at least 2 videos, got {}",
            videos.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    videos.shuffle(&mut rng);
    let n_test = (test_fraction * videos.len() as f64).round() as usize;
    let test_set: std::collections::HashSet<&String> = videos[..n_test].iter().collect();
    for rec in records.iter_mut() {
        rec.split = if test_set.contains(&rec.video_id) { Split::Test } else { Split::Train };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::router::DomainKey;

    fn record(video: &str, stitch: u32) -> ClipRecord {
        ClipRecord {
            video_id: video.to_string(),
            stitch_idx: stitch,
            domain: DomainKey::all()[0],
            label: (stitch % 2) as u8,
            path: PathBuf::from(format!("clips/{video}_{stitch}.clp")),
            split: Split::Unassigned,
        }
    }

    #[test]
    fn sample_frames_identity_at_sixteen() {
        assert_eq!(sample_frames(16, 16).unwrap(), (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn sample_frames_strides_long_sources() {
        let idx = sample_frames(32, 16).unwrap();
        assert_eq!(idx, (0..16).map(|i| i * 2).collect::<Vec<_>>());
    }

    #[test]
    fn sample_frames_repeats_short_sources() {
        let idx = sample_frames(10, 16).unwrap();
        assert_eq!(idx, vec![0, 0, 1, 1, 2, 3, 3, 4, 5, 5, 6, 6, 7, 8, 8, 9]);
    }

    #[test]
    fn sample_frames_rejects_zero_target() {
        assert!(matches!(sample_frames(4, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn clip_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.clp");
        let clip = ClipTensor::new(
            3,
            4,
            5,
            6,
            (0..3 * 4 * 5 * 6).map(|i| (i % 97) as f32 / 96.0).collect(),
        );
        write_clip(&path, &clip).unwrap();
        let back = read_clip(&path).unwrap();
        assert_eq!(clip, back);
    }

    #[test]
    fn clip_bad_magic_names_expected_and_actual() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.clp");
        fs::write(&path, b"NOPE0000000000000000000000000000").unwrap();
        match read_clip(&path) {
            Err(Error::Format { offset: 0, msg }) => {
                assert!(msg.contains("CLP1") || msg.contains("76"), "msg: {msg}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn clip_truncated_payload_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.clp");
        let clip = ClipTensor::new(1, 2, 2, 2, vec![0.5; 8]);
        write_clip(&path, &clip).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 6]).unwrap();
        match read_clip(&path) {
            Err(Error::Format { offset, msg }) => {
                assert!(offset >= CLIP_HEADER_LEN, "offset {offset}");
                assert!(msg.contains("truncated"));
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn split_is_video_level_and_seeded() {
        let mut records: Vec<ClipRecord> = (0..10)
            .flat_map(|v| (0..4).map(move |s| record(&format!("v{v:02}"), s)))
            .collect();
        split_videos(&mut records, 0.2, 7).unwrap();
        let test_videos: std::collections::HashSet<_> = records
            .iter()
            .filter(|r| r.split == Split::Test)
            .map(|r| r.video_id.clone())
            .collect();
        let train_videos: std::collections::HashSet<_> = records
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.video_id.clone())
            .collect();
        assert_eq!(test_videos.len(), 2);
        assert_eq!(train_videos.len(), 8);
        assert!(test_videos.is_disjoint(&train_videos));

        let mut again = records.clone();
        for r in again.iter_mut() {
            r.split = Split::Unassigned;
        }
        split_videos(&mut again, 0.2, 7).unwrap();
        assert_eq!(records, again);
    }

    #[test]
    fn split_rejects_single_video() {
        let mut records = vec![record("only", 0), record("only", 1)];
        assert!(matches!(split_videos(&mut records, 0.5, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn manifest_round_trip_and_duplicate_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let records = vec![record("v00", 0), record("v00", 1), record("v01", 0)];
        write_manifest(&path, &records).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(records, back);

        let dup = vec![record("v00", 0), record("v00", 0)];
        write_manifest(&path, &dup).unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Data(_))));
    }
}
