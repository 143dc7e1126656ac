//! Clips as directories of numbered frames.
//!
//! Frame `t` is stored as `{t:08}.ppm` (binary P6, 8-bit) or `{t:08}.png`
//! (8-bit RGB). Values map to `[0, 1]` by `/255` on read; writing clamps and
//! rounds to the nearest 8-bit level, so read∘write is exact on 8-bit data.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::VideoClip;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameFormat {
    #[default]
    Png,
    Ppm,
}

impl FrameFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Png => "png",
            Self::Ppm => "ppm",
        }
    }

    fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "png" => Some(Self::Png),
            "ppm" => Some(Self::Ppm),
            _ => None,
        }
    }
}

impl FromStr for FrameFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_extension(s).ok_or_else(|| Error::UnsupportedFormat(format!("frame format {s:?}")))
    }
}

/// An 8-bit interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Rgb8 {
    pub fn from_frame<T: Real>(frame: &Tensor<T>) -> Result<Self> {
        let [3, h, w] = *frame.shape() else {
            return Err(Error::InvalidShape(format!("frames are [3, H, W], got {:?}", frame.shape())));
        };
        let src = frame.data();
        let mut data = vec![0u8; 3 * h * w];
        for i in 0..h * w {
            for c in 0..3 {
                data[3 * i + c] = quantize(src[c * h * w + i].as_f64());
            }
        }
        Ok(Self { width: w, height: h, data })
    }

    pub fn to_frame<T: Real>(&self) -> Tensor<T> {
        let plane = self.width * self.height;
        let mut out = vec![T::zero(); 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                out[c * plane + i] = T::of(self.data[3 * i + c] as f64 / 255.0);
            }
        }
        Tensor::from_raw(vec![3, self.height, self.width], out)
    }
}

fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

fn malformed(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Malformed(format!("{}: {msg}", path.display()))
}

fn ppm_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn read_ppm(path: &Path) -> Result<Rgb8> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0;
    match ppm_token(&bytes, &mut pos).as_deref() {
        Some("P6") => {}
        Some(m) => return Err(Error::UnsupportedFormat(format!("{}: PPM variant {m}", path.display()))),
        None => return Err(malformed(path, "empty file")),
    }
    let mut field = |name: &str| -> Result<usize> {
        ppm_token(&bytes, &mut pos)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| malformed(path, format!("bad {name}")))
    };
    let (width, height, maxval) = (field("width")?, field("height")?, field("maxval")?);
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("{}: maxval {maxval}, only 8-bit is supported", path.display())));
    }
    if width == 0 || height == 0 {
        return Err(malformed(path, "zero extent"));
    }
    pos += 1;
    let n = 3 * width * height;
    let data = bytes
        .get(pos..pos + n)
        .ok_or_else(|| malformed(path, "truncated pixel data"))?
        .to_vec();
    Ok(Rgb8 { width, height, data })
}

pub fn write_ppm(path: &Path, img: &Rgb8) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.data)?;
    w.flush()?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<Rgb8> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info().map_err(|e| malformed(path, e))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!("{}: {:?} bit depth", path.display(), info.bit_depth)));
    }
    if info.color_type != png::ColorType::Rgb {
        return Err(Error::UnsupportedFormat(format!("{}: color type {:?}", path.display(), info.color_type)));
    }
    if info.interlaced {
        return Err(Error::UnsupportedFormat(format!("{}: interlaced", path.display())));
    }
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| malformed(path, e))?;
    buf.truncate(frame.buffer_size());
    Ok(Rgb8 {
        width: frame.width as usize,
        height: frame.height as usize,
        data: buf,
    })
}

pub fn write_png(path: &Path, img: &Rgb8) -> Result<()> {
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| malformed(path, e))?;
    w.write_image_data(&img.data).map_err(|e| malformed(path, e))?;
    w.finish().map_err(|e| malformed(path, e))?;
    Ok(())
}

pub fn read_image(path: &Path) -> Result<Rgb8> {
    match path.extension().and_then(|e| e.to_str()).and_then(FrameFormat::from_extension) {
        Some(FrameFormat::Png) => read_png(path),
        Some(FrameFormat::Ppm) => read_ppm(path),
        None => Err(Error::UnsupportedFormat(format!("{}: unknown extension", path.display()))),
    }
}

pub fn write_image(path: &Path, img: &Rgb8, format: FrameFormat) -> Result<()> {
    match format {
        FrameFormat::Png => write_png(path, img),
        FrameFormat::Ppm => write_ppm(path, img),
    }
}

/// Numbered frame files of `dir`, sorted by frame index.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).and_then(FrameFormat::from_extension);
        let index = path.file_stem().and_then(|s| s.to_str()).filter(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()));
        if let (Some(_), Some(i)) = (ext, index) {
            frames.push((i.parse::<u64>().map_err(|e| malformed(&path, e))?, path));
        }
    }
    frames.sort();
    if let Some(w) = frames.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(malformed(dir, format!("frame {} appears twice", w[0].0)));
    }
    Ok(frames.into_iter().map(|(_, p)| p).collect())
}

/// Read every numbered frame of `dir` into a single-batch clip.
pub fn read_clip<T: Real>(dir: &Path) -> Result<VideoClip<T>> {
    let paths = frame_paths(dir)?;
    if paths.is_empty() {
        return Err(Error::EmptyDataset(format!("no numbered frames in {}", dir.display())));
    }
    let mut frames = Vec::with_capacity(paths.len());
    let mut extent = None;
    for p in &paths {
        let img = read_image(p)?;
        match extent {
            None => extent = Some((img.height, img.width)),
            Some(e) if e != (img.height, img.width) => {
                return Err(Error::InvalidShape(format!(
                    "{}: frame is {}×{}, earlier frames are {}×{}",
                    p.display(),
                    img.height,
                    img.width,
                    e.0,
                    e.1
                )))
            }
            _ => {}
        }
        frames.push(img.to_frame());
    }
    VideoClip::from_frames(&frames)
}

/// Write batch item 0 of `clip` as `dir/{t:08}.{ext}`, creating `dir`.
pub fn write_clip<T: Real>(dir: &Path, clip: &VideoClip<T>, format: FrameFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    clip.frames(0)
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let p = dir.join(format!("{t:08}.{}", format.extension()));
            write_image(&p, &Rgb8::from_frame(f)?, format)?;
            Ok(p)
        })
        .collect()
}

/// Every subdirectory of `root` holding frames is one clip, in name order.
pub fn read_dataset<T: Real>(root: &Path) -> Result<Vec<(String, VideoClip<T>)>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut clips = Vec::new();
    for d in dirs {
        if frame_paths(&d)?.is_empty() {
            continue;
        }
        let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        clips.push((name, read_clip(&d)?));
    }
    if clips.is_empty() && !frame_paths(root)?.is_empty() {
        clips.push((String::new(), read_clip(root)?));
    }
    if clips.is_empty() {
        return Err(Error::EmptyDataset(format!("no clips under {}", root.display())));
    }
    Ok(clips)
}
