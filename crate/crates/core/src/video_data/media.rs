//! Decoding of frame stacks into fixed-shape [`VideoSample`]s.
//!
//! Supported containers:
//! - `.npy`: a `[T, H, W]` or `[T, H, W, C]` array of `u8`, `u16`, `f32` or `f64`
//! - `.npz`: a zip archive holding such an array (`frames.npy`, `video.npy`,
//!   or else the first member)
//! - a directory of image files (PNG/JPEG), one frame per file in name order
//!
//! Integer data is divided by the dtype's maximum code value; float data is
//! taken as already normalized and clamped to `[0, 1]`.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use super::{DataError, VideoSample};
use crate::nn::Tensor;

/// Decoded frames before resampling, normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawVideo {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl RawVideo {
    fn pixel(&self, t: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[((t * self.height + y) * self.width + x) * self.channels + c]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dtype {
    U8,
    U16,
    F32,
    F64,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

fn decode_err(msg: impl Into<String>) -> DataError {
    DataError::Decode(msg.into())
}

/// Extracts the quoted value following `'key':` in an npy header dict.
fn header_field<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let pat = format!("'{key}':");
    let start = header.find(&pat)? + pat.len();
    Some(header[start..].trim_start())
}

/// Parses an in-memory `.npy` file.
pub fn parse_npy(bytes: &[u8]) -> Result<RawVideo, DataError> {
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(decode_err("missing npy magic"));
    }
    let major = bytes[6];
    let (header_len, offset) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(decode_err("truncated npy header"));
            }
            (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12)
        }
        v => return Err(decode_err(format!("unsupported npy version {v}"))),
    };
    let header = bytes
        .get(offset..offset + header_len)
        .ok_or_else(|| decode_err("truncated npy header"))?;
    let header = std::str::from_utf8(header).map_err(|_| decode_err("npy header is not UTF-8"))?;

    let descr = header_field(header, "descr").ok_or_else(|| decode_err("npy header lacks descr"))?;
    let descr = descr.trim_start_matches('\'');
    let descr = &descr[..descr.find('\'').ok_or_else(|| decode_err("bad descr"))?];
    let dtype = match descr {
        "|u1" | "<u1" | "u1" | "|b1" => Dtype::U8,
        "<u2" => Dtype::U16,
        "<f4" => Dtype::F32,
        "<f8" => Dtype::F64,
        other => return Err(decode_err(format!("unsupported dtype {other}"))),
    };
    let fortran = header_field(header, "fortran_order").ok_or_else(|| decode_err("npy header lacks fortran_order"))?;
    if fortran.starts_with("True") {
        return Err(decode_err("fortran-ordered arrays are not supported"));
    }
    let shape_txt = header_field(header, "shape").ok_or_else(|| decode_err("npy header lacks shape"))?;
    let open = shape_txt.find('(').ok_or_else(|| decode_err("bad shape"))?;
    let close = shape_txt.find(')').ok_or_else(|| decode_err("bad shape"))?;
    let shape: Vec<usize> = shape_txt[open + 1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| decode_err("bad shape entry")))
        .collect::<Result<_, _>>()?;
    let (frames, height, width, channels) = match shape.as_slice() {
        [t, h, w] => (*t, *h, *w, 1),
        [t, h, w, c] => (*t, *h, *w, *c),
        other => return Err(decode_err(format!("expected [T,H,W] or [T,H,W,C], got {other:?}"))),
    };
    if frames == 0 {
        return Err(DataError::Validation("video has no frames".into()));
    }
    if !matches!(channels, 1 | 3 | 4) {
        return Err(decode_err(format!("unsupported channel count {channels}")));
    }
    let count = frames * height * width * channels;
    let body = &bytes[offset + header_len..];
    if body.len() < count * dtype.size() {
        return Err(decode_err("npy payload shorter than its shape"));
    }
    let values: Vec<f32> = match dtype {
        Dtype::U8 => body[..count].iter().map(|&b| b as f32 / 255.0).collect(),
        Dtype::U16 => body[..count * 2]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32 / 65535.0)
            .collect(),
        Dtype::F32 => body[..count * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::F64 => body[..count * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
            .collect(),
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(decode_err("non-finite pixel values"));
    }
    let values = values.into_iter().map(|v| v.clamp(0.0, 1.0));
    // Drop an alpha channel.
    let (channels, data) = if channels == 4 {
        let v: Vec<f32> = values.collect();
        (3, v.chunks_exact(4).flat_map(|p| p[..3].to_vec()).collect())
    } else {
        (channels, values.collect())
    };
    Ok(RawVideo {
        frames,
        height,
        width,
        channels,
        data,
    })
}

pub fn parse_npz(bytes: &[u8]) -> Result<RawVideo, DataError> {
    let mut archive = zip::ZipArchive::new(Cursor::new(bytes)).map_err(|e| decode_err(format!("bad npz: {e}")))?;
    let names: Vec<String> = archive.file_names().map(String::from).collect();
    let pick = ["frames.npy", "video.npy"]
        .iter()
        .find_map(|want| names.iter().find(|n| n == want))
        .or_else(|| names.iter().find(|n| n.ends_with(".npy")))
        .cloned()
        .ok_or_else(|| decode_err("npz archive holds no .npy member"))?;
    let mut member = archive.by_name(&pick).map_err(|e| decode_err(format!("bad npz member: {e}")))?;
    let mut buf = Vec::new();
    member.read_to_end(&mut buf).map_err(|e| decode_err(format!("bad npz member: {e}")))?;
    parse_npy(&buf)
}

/// Decodes bytes by sniffing the container magic (npy or zip/npz).
pub fn decode_bytes(bytes: &[u8]) -> Result<RawVideo, DataError> {
    if bytes.starts_with(b"\x93NUMPY") {
        parse_npy(bytes)
    } else if bytes.starts_with(b"PK") {
        parse_npz(bytes)
    } else {
        Err(decode_err("unrecognized media container (expected npy or npz)"))
    }
}

fn read_frame_dir(dir: &Path) -> Result<RawVideo, DataError> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| DataError::io(dir, e))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(DataError::Validation(format!("{} contains no frames", dir.display())));
    }
    let mut data = Vec::new();
    let mut dims = None;
    for f in &files {
        let img = image::open(f).map_err(|e| decode_err(format!("{}: {e}", f.display())))?;
        let gray = matches!(
            img.color(),
            image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16
        );
        let (w, h, c) = (img.width() as usize, img.height() as usize, if gray { 1 } else { 3 });
        match dims {
            None => dims = Some((h, w, c)),
            Some(d) if d != (h, w, c) => {
                return Err(decode_err(format!("{} differs in size from earlier frames", f.display())))
            }
            _ => {}
        }
        if gray {
            data.extend(img.to_luma16().into_raw().into_iter().map(|v| v as f32 / 65535.0));
        } else {
            data.extend(img.to_rgb16().into_raw().into_iter().map(|v| v as f32 / 65535.0));
        }
    }
    let (height, width, channels) = dims.unwrap();
    Ok(RawVideo {
        frames: files.len(),
        height,
        width,
        channels,
        data,
    })
}

/// Reads a media file or frame directory.
pub fn read_media(path: &Path) -> Result<RawVideo, DataError> {
    if path.is_dir() {
        return read_frame_dir(path);
    }
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_bytes(&bytes)
}

/// Frame indices for uniform temporal sampling: `round(i * (n - 1) / (t - 1))`.
pub fn sample_indices(available: usize, target: usize) -> Vec<usize> {
    if target == 1 || available == 1 {
        return vec![0; target];
    }
    (0..target)
        .map(|i| ((i * (available - 1)) as f64 / (target - 1) as f64).round() as usize)
        .collect()
}

/// Source coordinate and blend weight for half-pixel-centred bilinear
/// resampling along one axis.
pub(crate) fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let x = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let x0 = (x.floor() as usize).min(src - 1);
            let x1 = (x0 + 1).min(src - 1);
            (x0, x1, (x - x0 as f64) as f32)
        })
        .collect()
}

/// Temporal sampling followed by bilinear spatial resize.
pub fn resample(raw: &RawVideo, target_frames: usize, target_hw: (usize, usize)) -> Tensor<f32> {
    let (th, tw) = target_hw;
    let c = raw.channels;
    let idx = sample_indices(raw.frames, target_frames);
    let rows = bilinear_taps(raw.height, th);
    let cols = bilinear_taps(raw.width, tw);
    let mut out = Vec::with_capacity(target_frames * th * tw * c);
    for &t in &idx {
        for &(y0, y1, wy) in &rows {
            for &(x0, x1, wx) in &cols {
                for ch in 0..c {
                    let top = raw.pixel(t, y0, x0, ch) * (1.0 - wx) + raw.pixel(t, y0, x1, ch) * wx;
                    let bot = raw.pixel(t, y1, x0, ch) * (1.0 - wx) + raw.pixel(t, y1, x1, ch) * wx;
                    out.push((top * (1.0 - wy) + bot * wy).clamp(0.0, 1.0));
                }
            }
        }
    }
    Tensor::from_vec(&[target_frames, th, tw, c], out)
}

/// Loads the media at `path` as a `[T, H, W, Cch]` sample.
pub fn load_video_path(
    path: &Path,
    class_id: usize,
    id: &str,
    target_hw: (usize, usize),
    target_frames: usize,
) -> Result<VideoSample, DataError> {
    let raw = read_media(path)?;
    sample_from_raw(&raw, class_id, id, target_hw, target_frames)
}

pub fn sample_from_raw(
    raw: &RawVideo,
    class_id: usize,
    id: &str,
    target_hw: (usize, usize),
    target_frames: usize,
) -> Result<VideoSample, DataError> {
    if target_hw.0 < 8 || target_hw.1 < 8 {
        return Err(DataError::Validation(format!("target size {target_hw:?} below 8x8")));
    }
    if target_frames == 0 {
        return Err(DataError::Validation("target frame count must be at least 1".into()));
    }
    if raw.frames == 0 {
        return Err(DataError::Validation("video has no frames".into()));
    }
    VideoSample::new(resample(raw, target_frames, target_hw), class_id, id)
}

/// Serializes a `u8` array as `.npy` (version 1.0).
pub fn encode_npy_u8(shape: &[usize], data: &[u8]) -> Vec<u8> {
    assert_eq!(shape.iter().product::<usize>(), data.len());
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    let shape_txt = if dims.len() == 1 {
        format!("({},)", dims[0])
    } else {
        format!("({})", dims.join(", "))
    };
    let mut header = format!("{{'descr': '|u1', 'fortran_order': False, 'shape': {shape_txt}, }}");
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + data.len());
    out.extend_from_slice(b"\x93NUMPY\x01\x00");
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(data);
    out
}

/// Quantizes a sample to 8-bit and wraps it as `.npy` bytes.
pub fn sample_to_npy(sample: &VideoSample) -> Vec<u8> {
    let bytes: Vec<u8> = sample
        .frames
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    encode_npy_u8(sample.frames.shape(), &bytes)
}

/// Wraps `.npy` bytes in a single-member `.npz` archive (`frames.npy`).
pub fn npy_to_npz(npy: &[u8]) -> Result<Vec<u8>, DataError> {
    use std::io::Write;
    let mut buf = Cursor::new(Vec::new());
    {
        let mut zw = zip::ZipWriter::new(&mut buf);
        let opts = zip::write::SimpleFileOptions::default().compression_method(zip::CompressionMethod::Stored);
        zw.start_file("frames.npy", opts).map_err(|e| decode_err(e.to_string()))?;
        zw.write_all(npy).map_err(|e| decode_err(e.to_string()))?;
        zw.finish().map_err(|e| decode_err(e.to_string()))?;
    }
    Ok(buf.into_inner())
}
