//! Image loading, preprocessing and single-image inference.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::heatmap::{decode_heatmaps, KeypointSet};
use crate::model::{Model, Preprocess, WeightStore, INPUT_CHANNELS};
use crate::tensor::Tensor;

/// Name of the tensor inside a raw tensor file.
pub const RAW_IMAGE_TENSOR: &str = "image";

/// A decoded input image.
#[derive(Debug, Clone, PartialEq)]
pub enum Image {
    /// `3 x H x W` pixel intensities in `[0, 1]`.
    Pixels(Tensor<f32>),
    /// `3 x H x W` values already in network-input units.
    Normalized(Tensor<f32>),
}

impl Image {
    pub fn tensor(&self) -> &Tensor<f32> {
        match self {
            Image::Pixels(t) | Image::Normalized(t) => t,
        }
    }

    pub fn size(&self) -> (usize, usize) {
        let s = self.tensor().shape();
        (s[1], s[2])
    }
}

/// Parses a binary (`P6`) PPM with `maxval < 256` into `3 x H x W` values in `[0, 1]`.
pub fn parse_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("PPM header is incomplete".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::Format("PPM header is not ASCII".into()))?);
    }
    if fields[0] != "P6" {
        return Err(Error::Format(format!("unsupported PPM kind {:?}, only binary P6 is read", fields[0])));
    }
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::Format(format!("PPM {what} {s:?} is not a number")))
    };
    let (w, h, maxval) = (num(fields[1], "width")?, num(fields[2], "height")?, num(fields[3], "maxval")?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("PPM maxval {maxval} is not supported")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format("PPM image is empty".into()));
    }
    pos += 1; // single whitespace byte after maxval
    let need = w * h * 3;
    let Some(payload) = bytes.get(pos..pos + need) else {
        return Err(Error::Format(format!("PPM payload has {} of {need} bytes", bytes.len().saturating_sub(pos))));
    };
    let mut data = vec![0f32; need];
    for (i, b) in payload.iter().enumerate() {
        let (pix, c) = (i / 3, i % 3);
        data[c * h * w + pix] = *b as f32 / maxval as f32;
    }
    Tensor::new([INPUT_CHANNELS, h, w], data)
}

/// Writes `3 x H x W` values in `[0, 1]` as a binary PPM.
pub fn encode_ppm(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let [c, h, w] = match *img.shape() {
        [c, h, w] => [c, h, w],
        _ => return Err(Error::Shape(format!("expected 3 x H x W, got {:?}", img.shape()))),
    };
    if c != INPUT_CHANNELS {
        return Err(Error::Shape(format!("PPM needs 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for pix in 0..h * w {
        for ch in 0..3 {
            out.push((img.data()[ch * h * w + pix].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Reads a PPM or a raw tensor file (weight-file format holding one
/// `3 x H x W` tensor named `image`), chosen by magic bytes.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = std::fs::read(path.as_ref())?;
    if bytes.starts_with(b"P6") {
        return parse_ppm(&bytes).map(Image::Pixels);
    }
    if bytes.starts_with(b"LGMW") {
        let store = WeightStore::from_bytes(&bytes)?;
        let t = store
            .get(RAW_IMAGE_TENSOR)
            .ok_or_else(|| Error::Format(format!("raw tensor file has no '{RAW_IMAGE_TENSOR}' tensor")))?;
        if t.ndim() != 3 || t.shape()[0] != INPUT_CHANNELS {
            return Err(Error::Format(format!("raw image tensor must be 3 x H x W, got {:?}", t.shape())));
        }
        return Ok(Image::Normalized(t.clone()));
    }
    Err(Error::Format(format!("{}: unrecognized image format", path.as_ref().display())))
}

/// Bilinear resize of `C x H x W` with half-pixel centers and edge clamping.
pub fn resize_bilinear(x: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let [c, h, w] = match *x.shape() {
        [c, h, w] => [c, h, w],
        _ => return Err(Error::Shape(format!("expected C x H x W, got {:?}", x.shape()))),
    };
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let axis = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1, fy) = axis(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1, fx) = axis(ox, w, out_w);
                let at = |y: usize, xx: usize| plane[y * w + xx] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    Tensor::new([c, out_h, out_w], out)
}

/// `(x - mean_c) / std_c` per channel.
pub fn normalize(x: &Tensor<f32>, pre: &Preprocess) -> Result<Tensor<f32>> {
    let [c, h, w] = match *x.shape() {
        [c, h, w] if c == INPUT_CHANNELS => [c, h, w],
        _ => return Err(Error::Shape(format!("expected 3 x H x W, got {:?}", x.shape()))),
    };
    let plane = h * w;
    let data =
        x.data().iter().enumerate().map(|(i, v)| ((*v as f64 - pre.mean[i / plane]) / pre.std[i / plane]) as f32).collect();
    Tensor::new([c, h, w], data)
}

/// Network input for `img`: resized to the model size, then normalized for
/// pixel images.
pub fn prepare_input(img: &Image, model_hw: [usize; 2], pre: &Preprocess) -> Result<Tensor<f32>> {
    let resized = resize_bilinear(img.tensor(), model_hw[0], model_hw[1])?;
    match img {
        Image::Pixels(_) => normalize(&resized, pre),
        Image::Normalized(_) => Ok(resized),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InferOutput {
    /// `[x, y, score]` in input-image pixels.
    pub keypoints: Vec<[f64; 3]>,
    /// Decoded keypoints in heatmap cells.
    pub heatmap_keypoints: KeypointSet,
    /// `[width, height]` of the input image.
    pub image_size: [usize; 2],
    #[serde(skip)]
    pub heatmaps: Tensor<f32>,
}

/// Heatmap cell `(x, y)` to image pixels: `x * stride * (W_img / W_in)`.
pub fn heatmap_to_image(coord: [f64; 2], stride: usize, scale: [f64; 2]) -> [f64; 2] {
    [coord[0] * stride as f64 * scale[0], coord[1] * stride as f64 * scale[1]]
}

pub fn infer(model: &Model<f32>, img: &Image) -> Result<InferOutput> {
    let cfg = model.config();
    let x = prepare_input(img, cfg.input_size, &cfg.preprocess)?;
    let heatmaps = model.forward(&x)?;
    let decoded = decode_heatmaps(&heatmaps)?;
    let (ih, iw) = img.size();
    let scale = [iw as f64 / cfg.input_size[1] as f64, ih as f64 / cfg.input_size[0] as f64];
    let keypoints = decoded
        .coords
        .iter()
        .zip(&decoded.scores)
        .map(|(c, s)| {
            let [x, y] = heatmap_to_image(*c, cfg.heatmap_stride, scale);
            [x, y, *s]
        })
        .collect();
    Ok(InferOutput { keypoints, heatmap_keypoints: decoded, image_size: [iw, ih], heatmaps })
}
