use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClipMeta, ClipRecord};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::tensor::Tensor;

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `frames` as `00000.png`, `00001.png`, … (8-bit RGB), creating `dir` if needed.
pub fn save_frames(frames: &[Frame], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    frames
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            let path = dir.join(format!("{i:05}.png"));
            write_png(frame, &path)?;
            Ok(path)
        })
        .collect()
}

fn write_png(frame: &Frame, path: &Path) -> Result<()> {
    let (h, w) = (frame.height(), frame.width());
    let plane = h * w;
    let src = frame.data();
    let mut bytes = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        bytes.extend((0..3).map(|c| to_byte(src[c * plane + i])));
    }
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::file(path, e))?;
    writer.write_image_data(&bytes).map_err(|e| Error::file(path, e))?;
    writer.finish().map_err(|e| Error::file(path, e))
}

/// Reads one PNG as a frame on `[0, 1]`. Grey and alpha images are converted to RGB.
pub fn read_png(path: &Path) -> Result<Frame> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::file(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::file(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::file(path, e))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let stride = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(Error::file(path, format!("unsupported colour type {other:?}"))),
    };
    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];
    for i in 0..plane {
        let px = &buf[i * stride..(i + 1) * stride];
        for c in 0..3 {
            let v = if stride < 3 { px[0] } else { px[c] };
            data[c * plane + i] = v as f32 / 255.0;
        }
    }
    Frame::new(Tensor::new(&[3, h, w], data)?).map_err(|e| Error::file(path, e))
}

/// Loads every `*.png` in `dir`, in lexicographic file-name order.
pub fn load_sequence(dir: &Path) -> Result<ClipRecord> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    if paths.is_empty() {
        return Err(Error::file(dir, "no frames (no .png files found)"));
    }
    paths.sort();
    let mut frames: Vec<Frame> = Vec::with_capacity(paths.len());
    for path in &paths {
        let frame = read_png(path)?;
        if let Some(first) = frames.first() {
            if (frame.height(), frame.width()) != (first.height(), first.width()) {
                return Err(Error::file(
                    path,
                    format!("frame is {}x{}, expected {}x{}", frame.height(), frame.width(), first.height(), first.width()),
                ));
            }
        }
        frames.push(frame);
    }
    if frames.len() < 3 {
        return Err(Error::file(dir, format!("{} frames found, need at least 3", frames.len())));
    }
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    ClipRecord::new(frames, ClipMeta::named(name))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawEntry {
    Path(PathBuf),
    Tagged {
        path: PathBuf,
        #[serde(default)]
        subset: Option<String>,
    },
}

/// A clip directory with an optional subset tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub subset: Option<String>,
}

/// A JSON list of clip directories, each either a string or `{"path": …, "subset": …}`.
/// Relative paths are resolved against the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(json: &str, base: &Path) -> Result<Self> {
        let raw: Vec<RawEntry> = serde_json::from_str(json)?;
        let entries = raw
            .into_iter()
            .map(|r| {
                let (path, subset) = match r {
                    RawEntry::Path(p) => (p, None),
                    RawEntry::Tagged { path, subset } => (path, subset),
                };
                ManifestEntry { path: if path.is_absolute() { path } else { base.join(path) }, subset }
            })
            .collect();
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let manifest = Self::parse(&text, base).map_err(|e| Error::file(path, e))?;
        if manifest.entries.is_empty() {
            return Err(Error::file(path, "manifest lists no clips"));
        }
        Ok(manifest)
    }

    /// Writes the manifest with paths relative to its own directory where possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let raw: Vec<RawEntry> = self
            .entries
            .iter()
            .map(|e| {
                let p = e.path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| e.path.clone());
                match &e.subset {
                    Some(s) => RawEntry::Tagged { path: p, subset: Some(s.clone()) },
                    None => RawEntry::Path(p),
                }
            })
            .collect();
        fs::write(path, serde_json::to_string_pretty(&raw)?).map_err(|e| Error::file(path, e))
    }

    /// Loads every listed clip, tagging it with its subset.
    pub fn load_clips(&self) -> Result<Vec<ClipRecord>> {
        self.entries
            .iter()
            .map(|e| {
                let mut clip = load_sequence(&e.path)?;
                clip.meta.subset = e.subset.clone();
                Ok(clip)
            })
            .collect()
    }
}
