//! Synthetic moving-shape videos and bit-exact tensor files.
//!
//! The dataset generator renders a bright square travelling from the frame
//! center outward across a dim noisy background; the travel direction is
//! the class label. A one-way ray (rather than a center-crossing sweep)
//! keeps opposite directions distinguishable even in a time-averaged view,
//! so every toy classifier architecture can learn the task; frame 0 sits at
//! the shared ray origin and therefore carries no class evidence on its
//! own. Rendering is a pure function of the configuration, so a fixed seed
//! reproduces the dataset bit for bit. An optional list of informative
//! frames restricts the square — and with it all class evidence — to those
//! frames, which makes ground truth available for frame-selection
//! experiments.
//!
//! Tensors persist in a small self-describing binary container (magic,
//! version, rank, extents, little-endian `f64` payload) whose reader reports
//! the byte offset of any malformed field. Datasets are directories of one
//! container file per video plus a `labels.tsv` index. Frames can also be
//! exported as portable gray/pixel maps for visual inspection; that export
//! is lossy and is never read back.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{elem_count, Tensor};

/// Magic bytes opening every tensor container file.
const MAGIC: &[u8; 4] = b"SAVT";
/// Current container format version.
pub const CONTAINER_VERSION: u32 = 1;
/// Highest tensor rank the container accepts.
const MAX_RANK: u32 = 8;

/// One labelled video of the synthetic benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    /// Pixel data shaped `(frames, height, width, channels)`, values in [0, 1].
    pub video: Tensor,
    /// Ground-truth class: the index of the motion direction.
    pub label: usize,
    /// Stable identifier, used as the on-disk file stem.
    pub id: String,
}

/// Parameters of the synthetic moving-shape dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Number of videos to generate; labels are assigned round-robin.
    pub num_videos: usize,
    /// Frames per video.
    pub frames: usize,
    /// Frame height in pixels.
    pub height: usize,
    /// Frame width in pixels.
    pub width: usize,
    /// Color channels per pixel (1 = gray, 3 = RGB).
    pub channels: usize,
    /// Number of motion directions, i.e. classes.
    pub num_classes: usize,
    /// Side length of the bright square, in pixels.
    pub shape_size: usize,
    /// Upper bound of the uniform background noise (0 disables noise).
    pub noise_level: f64,
    /// When set, the square is rendered only in these frames, so all class
    /// evidence is confined to them.
    pub informative_frames: Option<Vec<usize>>,
    /// Seed from which every random draw derives.
    pub seed: u64,
}

impl Default for SynthConfig {
    /// The toy benchmark: 200 videos of 16 frames at 16×16×3, 4 classes,
    /// seed 7.
    fn default() -> Self {
        SynthConfig {
            num_videos: 200,
            frames: 16,
            height: 16,
            width: 16,
            channels: 3,
            num_classes: 4,
            shape_size: 5,
            noise_level: 0.05,
            informative_frames: None,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// Input shape `(frames, height, width, channels)` of the videos this
    /// configuration produces.
    pub fn input_shape(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }

    fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "video dimensions must be positive, got {}x{}x{}x{}",
                self.frames, self.height, self.width, self.channels
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be at least 1".into()));
        }
        if self.shape_size == 0 || self.shape_size > self.height || self.shape_size > self.width {
            return Err(Error::InvalidArgument(format!(
                "shape_size {} does not fit a {}x{} frame",
                self.shape_size, self.height, self.width
            )));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::InvalidArgument(format!(
                "noise_level {} must lie in [0, 1]",
                self.noise_level
            )));
        }
        if let Some(frames) = &self.informative_frames {
            if let Some(&bad) = frames.iter().find(|&&f| f >= self.frames) {
                return Err(Error::InvalidArgument(format!(
                    "informative frame {bad} out of range for {} frames",
                    self.frames
                )));
            }
        }
        Ok(())
    }
}

/// Renders video `index` of the dataset as if its label were `label`.
///
/// All random draws (background noise, square brightness) happen before the
/// label is consulted, on an index-specific stream, so renders of the same
/// index under different labels differ only in where the square sits. With
/// `informative_frames` set, frames outside that list are bit-identical
/// across labels.
pub fn render_video(cfg: &SynthConfig, index: usize, label: usize) -> Result<Tensor> {
    cfg.validate()?;
    if label >= cfg.num_classes {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            cfg.num_classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let shape = [cfg.frames, cfg.height, cfg.width, cfg.channels];
    let mut video = if cfg.noise_level > 0.0 {
        Tensor::uniform(&shape, 0.0, cfg.noise_level, &mut rng)
    } else {
        Tensor::zeros(&shape)
    };
    let brightness = 0.75 + 0.2 * rng.gen_range(0.0..1.0);

    let avail_h = (cfg.height - cfg.shape_size) as f64;
    let avail_w = (cfg.width - cfg.shape_size) as f64;
    let theta = 2.0 * std::f64::consts::PI * label as f64 / cfg.num_classes as f64;
    let (dy, dx) = (theta.sin(), theta.cos());
    for t in 0..cfg.frames {
        if let Some(frames) = &cfg.informative_frames {
            if !frames.contains(&t) {
                continue;
            }
        }
        // One-way ray from the frame center toward the class direction: the
        // square's top-left starts at the center of its feasible rectangle
        // and reaches the rectangle edge in the last frame.
        let progress = if cfg.frames == 1 {
            1.0
        } else {
            t as f64 / (cfg.frames - 1) as f64
        };
        let top = (avail_h / 2.0 + progress * (avail_h / 2.0) * dy).round() as usize;
        let left = (avail_w / 2.0 + progress * (avail_w / 2.0) * dx).round() as usize;
        for r in top..top + cfg.shape_size {
            for c in left..left + cfg.shape_size {
                for ch in 0..cfg.channels {
                    let o = video.offset4(t, r, c, ch);
                    video.data_mut()[o] = brightness;
                }
            }
        }
    }
    Ok(video)
}

/// Generates the full dataset: `num_videos` records with round-robin labels
/// `index % num_classes` and ids `v0000`, `v0001`, …
pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<Vec<VideoRecord>> {
    cfg.validate()?;
    (0..cfg.num_videos)
        .map(|i| {
            let label = i % cfg.num_classes;
            Ok(VideoRecord {
                video: render_video(cfg, i, label)?,
                label,
                id: format!("v{i:04}"),
            })
        })
        .collect()
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

/// Writes `t` to `path` in the binary tensor container format.
///
/// Layout: magic `SAVT` | version u32 LE | rank u32 LE | rank × u32 LE
/// extents | row-major payload of little-endian `f64`. Identical tensors
/// produce identical bytes.
pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    if t.rank() as u32 > MAX_RANK {
        return Err(Error::InvalidArgument(format!(
            "tensor rank {} exceeds the container limit {MAX_RANK}",
            t.rank()
        )));
    }
    let mut buf = Vec::with_capacity(12 + 4 * t.rank() + 8 * t.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        let e = u32::try_from(e).map_err(|_| {
            Error::InvalidArgument(format!("extent {e} exceeds the container's u32 range"))
        })?;
        buf.extend_from_slice(&e.to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path_str(path), e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::format(
                path_str(self.path),
                self.bytes.len() as u64,
                format!("file truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn take_u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Reads a tensor written by [`write_tensor`].
///
/// Malformed input — wrong magic, unsupported version, rank above 8,
/// truncation, trailing bytes, or non-finite payload values — is rejected
/// with the byte offset of the offending field.
pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut cur = Cursor { bytes: &bytes, offset: 0, path };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(path_str(path), 0, format!("bad magic {magic:02x?}")));
    }
    let version = cur.take_u32("format version")?;
    if version != CONTAINER_VERSION {
        return Err(Error::format(
            path_str(path),
            4,
            format!("unsupported format version {version}"),
        ));
    }
    let rank = cur.take_u32("rank")?;
    if rank > MAX_RANK {
        return Err(Error::format(path_str(path), 8, format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(cur.take_u32("extent")? as usize);
    }
    let count = elem_count(&shape);
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let at = cur.offset as u64;
        let b = cur.take(8, "payload")?;
        let v = f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]);
        if !v.is_finite() {
            return Err(Error::format(
                path_str(path),
                at,
                format!("non-finite value {v} at element {i}"),
            ));
        }
        data.push(v);
    }
    if cur.offset != bytes.len() {
        return Err(Error::format(
            path_str(path),
            cur.offset as u64,
            format!("{} trailing bytes after payload", bytes.len() - cur.offset),
        ));
    }
    Tensor::from_vec(&shape, data)
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.contains(['/', '\\'])
        && id != "."
        && id != ".."
        && !id.contains('\t');
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("record id {id:?} is not a plain file stem")))
    }
}

/// Writes a dataset directory: one `<id>.savt` per record plus `labels.tsv`
/// (`id TAB label` per line, in record order).
pub fn write_dataset(dir: &Path, records: &[VideoRecord]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(path_str(dir), e))?;
    let mut index = String::new();
    for rec in records {
        check_id(&rec.id)?;
        write_tensor(&dir.join(format!("{}.savt", rec.id)), &rec.video)?;
        index.push_str(&format!("{}\t{}\n", rec.id, rec.label));
    }
    let labels = dir.join("labels.tsv");
    fs::write(&labels, index).map_err(|e| Error::io(path_str(&labels), e))
}

/// Reads a dataset directory written by [`write_dataset`], in index order.
pub fn read_dataset(dir: &Path) -> Result<Vec<VideoRecord>> {
    let labels = dir.join("labels.tsv");
    let text = fs::read_to_string(&labels).map_err(|e| Error::io(path_str(&labels), e))?;
    let mut records = Vec::new();
    let mut offset = 0u64;
    for line in text.lines() {
        let line_offset = offset;
        offset += line.len() as u64 + 1;
        if line.is_empty() {
            continue;
        }
        let (id, label) = line.split_once('\t').ok_or_else(|| {
            Error::format(path_str(&labels), line_offset, "expected `id<TAB>label`".to_string())
        })?;
        check_id(id)?;
        let label: usize = label.trim().parse().map_err(|_| {
            Error::format(path_str(&labels), line_offset, format!("bad label {label:?}"))
        })?;
        let video = read_tensor(&dir.join(format!("{id}.savt")))?;
        records.push(VideoRecord { video, label, id: id.to_string() });
    }
    Ok(records)
}

/// Exports every frame of `video` into `dir` as `"<id>_f<t>.pgm"` (1
/// channel) or `"<id>_f<t>.ppm"` (3 channels), 8 bits per sample.
///
/// The export is for eyeballing only: quantization to 255 levels is lossy
/// and there is deliberately no importer.
pub fn export_frames(dir: &Path, id: &str, video: &Tensor) -> Result<()> {
    check_id(id)?;
    if video.rank() != 4 {
        return Err(Error::InvalidArgument(format!(
            "frame export expects a (frames, height, width, channels) video, got {:?}",
            video.shape()
        )));
    }
    let (frames, h, w, ch) = (
        video.shape()[0],
        video.shape()[1],
        video.shape()[2],
        video.shape()[3],
    );
    let (tag, ext) = match ch {
        1 => ("P5", "pgm"),
        3 => ("P6", "ppm"),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "frame export supports 1 or 3 channels, got {ch}"
            )))
        }
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(path_str(dir), e))?;
    for t in 0..frames {
        let mut buf = format!("{tag}\n{w} {h}\n255\n").into_bytes();
        for r in 0..h {
            for c in 0..w {
                for k in 0..ch {
                    let v = video.data()[video.offset4(t, r, c, k)];
                    buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        let path = dir.join(format!("{id}_f{t:02}.{ext}"));
        fs::write(&path, &buf).map_err(|e| Error::io(path_str(&path), e))?;
    }
    Ok(())
}
