//! PNG frames and indexed-palette masks, scribble JSON, and the on-disk
//! dataset layout (`frames/%05d.png`, `masks/%05d.png`, `scene.json`).

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{Scene, SceneConfig, SceneMetadata};
use crate::video::{Frame, IdMask, ScribbleDoc};

/// The usual segmentation-benchmark palette: label bits spread over the
/// high bits of each channel.
pub fn label_palette() -> Vec<u8> {
    let mut pal = Vec::with_capacity(256 * 3);
    for i in 0..256u32 {
        let (mut r, mut g, mut b) = (0u8, 0u8, 0u8);
        let mut c = i;
        for j in 0..8 {
            r |= (((c >> 0) & 1) as u8) << (7 - j);
            g |= (((c >> 1) & 1) as u8) << (7 - j);
            b |= (((c >> 2) & 1) as u8) << (7 - j);
            c >>= 3;
        }
        pal.extend_from_slice(&[r, g, b]);
    }
    pal
}

fn dims(height: usize, width: usize) -> Result<(u32, u32)> {
    let w = u32::try_from(width).map_err(|_| Error::invalid("image too wide"))?;
    let h = u32::try_from(height).map_err(|_| Error::invalid("image too tall"))?;
    Ok((w, h))
}

pub fn encode_frame_png(frame: &Frame) -> Result<Vec<u8>> {
    let (w, h) = dims(frame.height, frame.width)?;
    let bytes: Vec<u8> = frame.rgb.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&bytes)?;
    }
    Ok(out)
}

struct Raw {
    width: usize,
    height: usize,
    color: png::ColorType,
    data: Vec<u8>,
}

fn decode_raw(bytes: &[u8]) -> Result<Raw> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::STRIP_16);
    let mut reader = dec.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("png too large".into()))?;
    let mut data = vec![0; size];
    let info = reader.next_frame(&mut data)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    data.truncate(info.buffer_size());
    Ok(Raw {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        data,
    })
}

pub fn decode_frame_png(bytes: &[u8], index: usize) -> Result<Frame> {
    let raw = decode_raw(bytes)?;
    let n = raw.width * raw.height;
    let rgb: Vec<u8> = match raw.color {
        png::ColorType::Rgb => raw.data,
        png::ColorType::Rgba => raw.data.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => raw.data.iter().flat_map(|&g| [g, g, g]).collect(),
        other => return Err(Error::Format(format!("unsupported frame color type {other:?}"))),
    };
    debug_assert_eq!(rgb.len(), n * 3);
    let rgb = rgb.into_iter().map(|b| b as f32 / 255.0).collect();
    Frame::new(index, raw.height, raw.width, rgb)
}

/// Writes labels as an 8-bit indexed PNG.
pub fn encode_mask_png(mask: &IdMask) -> Result<Vec<u8>> {
    let (w, h) = dims(mask.height, mask.width)?;
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(label_palette());
        let mut writer = enc.write_header()?;
        writer.write_image_data(&mask.labels)?;
    }
    Ok(out)
}

/// Reads an indexed or grayscale mask; pixel values are the labels.
pub fn decode_mask_png(bytes: &[u8], frame: usize, round: usize) -> Result<IdMask> {
    let raw = decode_raw(bytes)?;
    match raw.color {
        png::ColorType::Indexed | png::ColorType::Grayscale => IdMask::new(frame, round, raw.height, raw.width, raw.data),
        other => Err(Error::Format(format!("mask must be indexed or grayscale, got {other:?}"))),
    }
}

pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    std::fs::write(path, encode_frame_png(frame)?)?;
    Ok(())
}

pub fn read_frame(path: &Path, index: usize) -> Result<Frame> {
    decode_frame_png(&std::fs::read(path)?, index)
}

pub fn write_mask(path: &Path, mask: &IdMask) -> Result<()> {
    std::fs::write(path, encode_mask_png(mask)?)?;
    Ok(())
}

pub fn read_mask(path: &Path, frame: usize, round: usize) -> Result<IdMask> {
    decode_mask_png(&std::fs::read(path)?, frame, round)
}

pub fn write_scribbles(path: &Path, doc: &ScribbleDoc) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(doc)?)?;
    Ok(())
}

pub fn read_scribbles(path: &Path) -> Result<ScribbleDoc> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SceneFile {
    config: SceneConfig,
    metadata: SceneMetadata,
}

pub fn frame_file_name(t: usize) -> String {
    format!("{t:05}.png")
}

/// Writes `frames/`, `masks/` and `scene.json` under `dir`.
pub fn write_dataset(dir: &Path, scene: &Scene) -> Result<()> {
    let frames = dir.join("frames");
    let masks = dir.join("masks");
    std::fs::create_dir_all(&frames)?;
    std::fs::create_dir_all(&masks)?;
    for (f, m) in scene.frames.iter().zip(&scene.gt) {
        write_frame(&frames.join(frame_file_name(f.index)), f)?;
        write_mask(&masks.join(frame_file_name(m.frame)), m)?;
    }
    let file = SceneFile {
        config: scene.config.clone(),
        metadata: scene.metadata.clone(),
    };
    std::fs::write(dir.join("scene.json"), serde_json::to_vec_pretty(&file)?)?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Scene> {
    let file: SceneFile = serde_json::from_slice(&std::fs::read(dir.join("scene.json"))?)?;
    let n = file.config.num_frames;
    let mut frames = Vec::with_capacity(n);
    let mut gt = Vec::with_capacity(n);
    for t in 0..n {
        frames.push(read_frame(&dir.join("frames").join(frame_file_name(t)), t)?);
        gt.push(read_mask(&dir.join("masks").join(frame_file_name(t)), t, 0)?);
    }
    Ok(Scene {
        config: file.config,
        frames,
        gt,
        metadata: file.metadata,
    })
}
