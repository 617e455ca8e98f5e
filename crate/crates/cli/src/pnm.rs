//! Binary PGM (`P5`) and PPM (`P6`) with maxval 255.

use anyhow::{bail, Result};
use nke_core::data::quantize_to_byte;
use nke_core::tensor::Tensor;

/// `[1×H×W]` becomes a PGM, `[3×H×W]` a PPM with interleaved RGB.
pub fn encode_pnm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let &[c, h, w] = image.shape() else {
        bail!("expected a C×H×W image, got shape {:?}", image.shape());
    };
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => bail!("only 1- or 3-channel images can be written, got {c}"),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let data = image.data();
    out.reserve(c * plane);
    for i in 0..plane {
        for ch in 0..c {
            out.push(quantize_to_byte(data[ch * plane + i]));
        }
    }
    Ok(out)
}

/// Tiles `rows` of equally shaped images into one image, with `gap`
/// pixels of white between tiles.
pub fn compose_grid(rows: &[Vec<Tensor<f32>>], gap: usize) -> Result<Tensor<f32>> {
    let Some(first) = rows.iter().flatten().next() else {
        bail!("cannot compose an empty grid");
    };
    let &[c, h, w] = first.shape() else {
        bail!("expected C×H×W tiles");
    };
    if rows.iter().flatten().any(|t| t.shape() != first.shape()) {
        bail!("grid tiles must share one shape");
    }
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let gh = rows.len() * h + (rows.len() - 1) * gap;
    let gw = cols * w + (cols.saturating_sub(1)) * gap;
    let mut data = vec![1.0f32; c * gh * gw];
    for (r, row) in rows.iter().enumerate() {
        for (col, tile) in row.iter().enumerate() {
            let (oy, ox) = (r * (h + gap), col * (w + gap));
            for ch in 0..c {
                for y in 0..h {
                    let src = &tile.data()[ch * h * w + y * w..][..w];
                    let dst = ch * gh * gw + (oy + y) * gw + ox;
                    data[dst..dst + w].copy_from_slice(src);
                }
            }
        }
    }
    Ok(Tensor::new([c, gh, gw], data)?)
}
