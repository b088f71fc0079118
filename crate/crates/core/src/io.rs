//! File formats: 8-bit RGB and grayscale PNG, 16-bit instance PNG, PMAP
//! probability files. Every write goes to a temporary file in the target
//! directory and is renamed into place.

use std::fs;
use std::io::{Cursor, Write};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::fusion::WeightMap;
use crate::grid::{Grid, Image, LabelMap, ProbMap};
use crate::himix::MixMask;
use crate::instances::InstanceMap;
use crate::synth::PALETTE;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn encode_png(
    path: &Path,
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: &[u8],
) -> Result<Vec<u8>> {
    let enc_err = |e: png::EncodingError| Error::PngEncode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(depth);
        let mut writer = encoder.write_header().map_err(enc_err)?;
        writer.write_image_data(data).map_err(enc_err)?;
        writer.finish().map_err(enc_err)?;
    }
    Ok(out)
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: Vec<u8>,
}

fn decode_png(path: &Path) -> Result<Decoded> {
    let bytes = read(path)?;
    let dec_err = |e: png::DecodingError| Error::PngDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(dec_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::PngDecode {
        path: path.to_path_buf(),
        message: "image too large".into(),
    })?;
    let mut data = vec![0; size];
    let info = reader.next_frame(&mut data).map_err(dec_err)?;
    data.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

fn expect_format(path: &Path, d: &Decoded, color: ColorType, depth: BitDepth, name: &str) -> Result<()> {
    if d.color != color || d.depth != depth {
        return Err(Error::Format {
            expected: name.to_string(),
            found: format!("{:?} {:?} in {}", d.depth, d.color, path.display()),
        });
    }
    Ok(())
}

pub fn save_image_png(image: &Image, path: &Path) -> Result<()> {
    let png = encode_png(path, image.width(), image.height(), ColorType::Rgb, BitDepth::Eight, image.data())?;
    write_atomic(path, &png)
}

pub fn load_image_png(path: &Path) -> Result<Image> {
    let d = decode_png(path)?;
    expect_format(path, &d, ColorType::Rgb, BitDepth::Eight, "8-bit RGB")?;
    Image::new(d.height, d.width, d.data)
}

/// Raw class indices as 8-bit grayscale, 255 = ignore.
pub fn save_label_png(labels: &LabelMap, path: &Path) -> Result<()> {
    gray8(path, labels.width(), labels.height(), labels.data())
}

pub fn load_label_png(path: &Path, num_classes: u8) -> Result<LabelMap> {
    let d = decode_png(path)?;
    expect_format(path, &d, ColorType::Grayscale, BitDepth::Eight, "8-bit grayscale")?;
    let labels = LabelMap::new(d.height, d.width, num_classes, d.data)?;
    labels.validate()?;
    Ok(labels)
}

/// Palette rendering of a label map; ignore pixels are black.
pub fn colorize(labels: &LabelMap) -> Image {
    let data = labels
        .data()
        .iter()
        .flat_map(|&v| PALETTE.get(v as usize).copied().unwrap_or([0, 0, 0]))
        .collect();
    Image::new(labels.height(), labels.width(), data).expect("same shape as labels")
}

/// Mask as 8-bit grayscale: 255 for source pixels, 0 for target.
pub fn save_mask_png(mask: &MixMask, path: &Path) -> Result<()> {
    let data: Vec<u8> = mask.data().iter().map(|&b| if b != 0 { 255 } else { 0 }).collect();
    gray8(path, mask.width(), mask.height(), &data)
}

pub fn load_mask_png(path: &Path) -> Result<MixMask> {
    let d = decode_png(path)?;
    expect_format(path, &d, ColorType::Grayscale, BitDepth::Eight, "8-bit grayscale")?;
    let data = d.data.iter().map(|&v| (v >= 128) as u8).collect();
    MixMask::new(d.height, d.width, data)
}

/// Weights scaled to 0..=255 for viewing.
pub fn save_weight_png(weights: &WeightMap, path: &Path) -> Result<()> {
    let data: Vec<u8> = weights
        .data()
        .iter()
        .map(|&w| (w * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    gray8(path, weights.width(), weights.height(), &data)
}

/// Instance ids as 16-bit grayscale. Ids above 65535 do not fit.
pub fn save_instance_png(instances: &InstanceMap, path: &Path) -> Result<()> {
    if instances.max_id() > u16::MAX as u32 {
        return Err(Error::InvalidParameter(format!(
            "{} instances do not fit a 16-bit PNG",
            instances.max_id()
        )));
    }
    let data: Vec<u8> = instances
        .ids()
        .iter()
        .flat_map(|&id| (id as u16).to_be_bytes())
        .collect();
    let png = encode_png(
        path,
        instances.width(),
        instances.height(),
        ColorType::Grayscale,
        BitDepth::Sixteen,
        &data,
    )?;
    write_atomic(path, &png)
}

/// Reads back the ids written by [`save_instance_png`].
pub fn load_instance_ids(path: &Path) -> Result<(usize, usize, Vec<u32>)> {
    let d = decode_png(path)?;
    expect_format(path, &d, ColorType::Grayscale, BitDepth::Sixteen, "16-bit grayscale")?;
    let ids = d
        .data
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as u32)
        .collect();
    Ok((d.height, d.width, ids))
}

fn gray8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let png = encode_png(path, width, height, ColorType::Grayscale, BitDepth::Eight, data)?;
    write_atomic(path, &png)
}

pub fn save_pmap(p: &ProbMap, path: &Path) -> Result<()> {
    write_atomic(path, &p.to_pmap_bytes())
}

pub fn load_pmap(path: &Path) -> Result<ProbMap> {
    let p = ProbMap::from_pmap_bytes(&read(path)?)?;
    p.validate()?;
    Ok(p)
}

pub fn save_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}
