//! Keypoint heatmap synthesis, corruption, and bilinear lookup. Stacks
//! are C channels of 64x64 grids in [0, 1]; image coordinates from the
//! 256x256 crop map to heatmap pixels at scale 1/4.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEATMAP_SIZE: usize = 64;
/// 256x256 image crop to 64x64 heatmap.
pub const IMAGE_TO_HEATMAP_SCALE: f64 = 0.25;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapStack {
    channels: usize,
    /// Row-major per channel: data[c][v * 64 + u].
    data: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapConfig {
    /// Gaussian blob deviation in heatmap pixels.
    pub sigma: f64,
    /// Additive Gaussian noise deviation.
    pub noise_sigma: f64,
    /// Probability a channel is zeroed entirely.
    pub dropout_prob: f64,
    /// Peak jitter deviation in heatmap pixels.
    pub jitter_sigma: f64,
    pub seed: u64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        HeatmapConfig {
            sigma: 2.0,
            noise_sigma: 0.0,
            dropout_prob: 0.0,
            jitter_sigma: 0.0,
            seed: 0,
        }
    }
}

impl HeatmapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma <= 0.0 {
            return Err(Error::InvalidParameter("heatmap sigma must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(Error::InvalidParameter("dropout probability outside [0, 1]".into()));
        }
        if self.noise_sigma < 0.0 || self.jitter_sigma < 0.0 {
            return Err(Error::InvalidParameter("negative corruption sigma".into()));
        }
        Ok(())
    }
}

impl HeatmapStack {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn channel(&self, c: usize) -> Result<&[f64]> {
        self.data.get(c).map(|v| v.as_slice()).ok_or(Error::BadChannel {
            channel: c,
            channels: self.channels,
        })
    }

    pub fn value(&self, c: usize, u: usize, v: usize) -> Result<f64> {
        let ch = self.channel(c)?;
        Ok(ch[v * HEATMAP_SIZE + u])
    }

    /// Builds a stack from raw channel grids, validating their size.
    pub fn from_channels(data: Vec<Vec<f64>>) -> Result<HeatmapStack> {
        if data.is_empty() {
            return Err(Error::InvalidParameter("heatmap stack needs a channel".into()));
        }
        for ch in &data {
            if ch.len() != HEATMAP_SIZE * HEATMAP_SIZE {
                return Err(Error::DimensionMismatch {
                    expected: HEATMAP_SIZE * HEATMAP_SIZE,
                    got: ch.len(),
                });
            }
        }
        Ok(HeatmapStack {
            channels: data.len(),
            data,
        })
    }

    /// Copy with every value multiplied by `factor`, clamped to [0, 1].
    pub fn scaled(&self, factor: f64) -> HeatmapStack {
        HeatmapStack {
            channels: self.channels,
            data: self
                .data
                .iter()
                .map(|ch| ch.iter().map(|x| (x * factor).clamp(0.0, 1.0)).collect())
                .collect(),
        }
    }

    /// Peak pixel (u, v) of a channel; ties resolve to the first in
    /// row-major order.
    pub fn peak(&self, c: usize) -> Result<(usize, usize)> {
        let ch = self.channel(c)?;
        let mut best = (0usize, 0.0f64);
        for (i, &val) in ch.iter().enumerate() {
            if val > best.1 {
                best = (i, val);
            }
        }
        Ok((best.0 % HEATMAP_SIZE, best.0 / HEATMAP_SIZE))
    }
}

/// Renders one Gaussian blob per keypoint, peak value 1 at the keypoint
/// location, evaluated at pixel centers. Keypoints are in heatmap pixel
/// coordinates; points outside the grid render a near-zero tail.
pub fn render_gaussian(keypoints: &[(f64, f64)], cfg: &HeatmapConfig) -> Result<HeatmapStack> {
    cfg.validate()?;
    for (u, v) in keypoints {
        if !u.is_finite() || !v.is_finite() {
            return Err(Error::InvalidParameter("non-finite keypoint coordinate".into()));
        }
    }
    let inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    let data = keypoints
        .iter()
        .map(|&(uc, vc)| {
            let mut ch = vec![0.0; HEATMAP_SIZE * HEATMAP_SIZE];
            for v in 0..HEATMAP_SIZE {
                for u in 0..HEATMAP_SIZE {
                    let du = u as f64 - uc;
                    let dv = v as f64 - vc;
                    ch[v * HEATMAP_SIZE + u] = (-(du * du + dv * dv) * inv).exp();
                }
            }
            ch
        })
        .collect();
    Ok(HeatmapStack {
        channels: keypoints.len(),
        data,
    })
}

/// Bilinear interpolation at continuous pixel coordinates; anything
/// outside the grid reads as 0, including the border band past the last
/// pixel center.
pub fn sample_bilinear(stack: &HeatmapStack, c: usize, u: f64, v: f64) -> Result<f64> {
    let ch = stack.channel(c)?;
    if !u.is_finite() || !v.is_finite() {
        return Ok(0.0);
    }
    let at = |ui: i64, vi: i64| -> f64 {
        if ui < 0 || vi < 0 || ui >= HEATMAP_SIZE as i64 || vi >= HEATMAP_SIZE as i64 {
            0.0
        } else {
            ch[vi as usize * HEATMAP_SIZE + ui as usize]
        }
    };
    let u0 = u.floor();
    let v0 = v.floor();
    if u0 < -1.0 || v0 < -1.0 || u0 >= HEATMAP_SIZE as f64 || v0 >= HEATMAP_SIZE as f64 {
        return Ok(0.0);
    }
    let fu = u - u0;
    let fv = v - v0;
    let (ui, vi) = (u0 as i64, v0 as i64);
    Ok(at(ui, vi) * (1.0 - fu) * (1.0 - fv)
        + at(ui + 1, vi) * fu * (1.0 - fv)
        + at(ui, vi + 1) * (1.0 - fu) * fv
        + at(ui + 1, vi + 1) * fu * fv)
}

/// Seeded corruption: per-channel peak jitter (re-render shifted),
/// channel dropout, then additive noise, clamped to [0, 1]. Channel c
/// draws from RNG stream c so the result is schedule-independent.
pub fn corrupt(stack: &HeatmapStack, cfg: &HeatmapConfig) -> Result<HeatmapStack> {
    cfg.validate()?;
    let mut data = Vec::with_capacity(stack.channels);
    for c in 0..stack.channels {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(c as u64);
        let src = stack.channel(c)?;
        let mut ch: Vec<f64>;
        if cfg.jitter_sigma > 0.0 {
            let normal = Normal::new(0.0, cfg.jitter_sigma).expect("positive sigma");
            let du: f64 = normal.sample(&mut rng);
            let dv: f64 = normal.sample(&mut rng);
            // shift by resampling the original at the un-shifted location
            ch = vec![0.0; HEATMAP_SIZE * HEATMAP_SIZE];
            for v in 0..HEATMAP_SIZE {
                for u in 0..HEATMAP_SIZE {
                    ch[v * HEATMAP_SIZE + u] =
                        sample_bilinear(stack, c, u as f64 - du, v as f64 - dv)?;
                }
            }
        } else {
            ch = src.to_vec();
        }
        if cfg.dropout_prob > 0.0 && rng.gen::<f64>() < cfg.dropout_prob {
            ch.iter_mut().for_each(|x| *x = 0.0);
        } else if cfg.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, cfg.noise_sigma).expect("positive sigma");
            for x in &mut ch {
                *x += normal.sample(&mut rng);
            }
        }
        for x in &mut ch {
            *x = x.clamp(0.0, 1.0);
        }
        data.push(ch);
    }
    Ok(HeatmapStack {
        channels: stack.channels,
        data,
    })
}

/// Maps image-crop pixel coordinates (256x256) to heatmap coordinates.
pub fn image_to_heatmap(u: f64, v: f64) -> (f64, f64) {
    (u * IMAGE_TO_HEATMAP_SCALE, v * IMAGE_TO_HEATMAP_SCALE)
}

/// Flat binary export: little-endian u32 channel count, then per channel
/// 64*64 f64 values in row-major order.
pub fn write_flat(stack: &HeatmapStack, w: &mut dyn std::io::Write) -> Result<()> {
    w.write_all(&(stack.channels as u32).to_le_bytes())?;
    for c in 0..stack.channels {
        for &x in stack.channel(c)? {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_flat(r: &mut dyn std::io::Read) -> Result<HeatmapStack> {
    let mut head = [0u8; 4];
    r.read_exact(&mut head)?;
    let channels = u32::from_le_bytes(head) as usize;
    let mut data = Vec::with_capacity(channels);
    for _ in 0..channels {
        let mut ch = vec![0.0; HEATMAP_SIZE * HEATMAP_SIZE];
        let mut buf = [0u8; 8];
        for x in &mut ch {
            r.read_exact(&mut buf)?;
            *x = f64::from_le_bytes(buf);
        }
        data.push(ch);
    }
    Ok(HeatmapStack { channels, data })
}

/// Per-channel intensity grids laid out horizontally in one SVG.
pub fn to_svg(stack: &HeatmapStack) -> Result<String> {
    const CELL: usize = 4;
    const GAP: usize = 8;
    let width = stack.channels * (HEATMAP_SIZE * CELL + GAP);
    let height = HEATMAP_SIZE * CELL;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n<rect width=\"{width}\" height=\"{height}\" \
         fill=\"black\"/>\n"
    );
    for c in 0..stack.channels {
        let x0 = c * (HEATMAP_SIZE * CELL + GAP);
        let ch = stack.channel(c)?;
        for v in 0..HEATMAP_SIZE {
            for u in 0..HEATMAP_SIZE {
                let val = ch[v * HEATMAP_SIZE + u];
                if val < 1.0 / 512.0 {
                    continue;
                }
                let g = (val * 255.0).round() as u8;
                svg.push_str(&format!(
                    "<rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" \
                     fill=\"rgb({g},{g},{g})\"/>\n",
                    x0 + u * CELL,
                    v * CELL,
                ));
            }
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
