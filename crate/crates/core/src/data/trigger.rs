//! Trigger stamping: the four attack kernels.
//!
//! Every stamp is a pure function of (image, trigger spec, item seed); the
//! patterns themselves (badnet patch content, blended noise, warp field) are
//! fixed per trigger spec so one attack uses one pattern across all items.

use crate::error::{Error, Result};
use crate::hash::sha256_json;
use crate::rng::CounterRng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Position drawn from the per-item seed.
    Random,
    Fixed { x: usize, y: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    /// Square patch of N(0,1) noise (clipped to [0,1]) overwriting the image.
    Badnet {
        patch_side: usize,
        placement: Placement,
        noise_seed: u64,
    },
    /// Convex blend with a fixed uniform-noise image: x <- (1-ratio) x + ratio N.
    Blended { ratio: f64, noise_seed: u64 },
    /// Smooth warp through a normalized random flow field.
    Wanet {
        control_grid: usize,
        strength: f64,
        warp_seed: u64,
    },
    /// Horizontal sinusoid added to every channel and row.
    Sig { amplitude: f64, frequency: f64 },
}

impl TriggerKind {
    pub fn name(&self) -> &'static str {
        match self {
            TriggerKind::Badnet { .. } => "badnet",
            TriggerKind::Blended { .. } => "blended",
            TriggerKind::Wanet { .. } => "wanet",
            TriggerKind::Sig { .. } => "sig",
        }
    }
}

/// One attack: a trigger kind plus the label it redirects to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub kind: TriggerKind,
    pub target_label: u16,
}

impl TriggerSpec {
    pub fn badnet(target_label: u16, noise_seed: u64) -> Self {
        TriggerSpec {
            kind: TriggerKind::Badnet {
                patch_side: 4,
                placement: Placement::Random,
                noise_seed,
            },
            target_label,
        }
    }

    pub fn blended(target_label: u16, noise_seed: u64) -> Self {
        TriggerSpec {
            kind: TriggerKind::Blended {
                ratio: 0.2,
                noise_seed,
            },
            target_label,
        }
    }

    /// Control grid defaults to the image side (grid k = H), strength 1.
    pub fn wanet(target_label: u16, image_side: usize, warp_seed: u64) -> Self {
        TriggerSpec {
            kind: TriggerKind::Wanet {
                control_grid: image_side,
                strength: 1.0,
                warp_seed,
            },
            target_label,
        }
    }

    pub fn sig(target_label: u16) -> Self {
        TriggerSpec {
            kind: TriggerKind::Sig {
                amplitude: 60.0 / 255.0,
                frequency: 6.0,
            },
            target_label,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        self.kind.name()
    }

    /// Content hash used in provenance blocks and forget-set origins.
    pub fn content_hash(&self) -> String {
        sha256_json(self)
    }

    pub fn validate(&self, shape: (usize, usize, usize)) -> Result<()> {
        let (_, h, w) = shape;
        match &self.kind {
            TriggerKind::Badnet {
                patch_side,
                placement,
                ..
            } => {
                if *patch_side == 0 || *patch_side > h || *patch_side > w {
                    return Err(Error::InvalidConfig(format!(
                        "badnet patch {patch_side} does not fit {h}x{w} image"
                    )));
                }
                if let Placement::Fixed { x, y } = placement {
                    if x + patch_side > w || y + patch_side > h {
                        return Err(Error::InvalidConfig(format!(
                            "badnet patch at ({x},{y}) exceeds {h}x{w} image"
                        )));
                    }
                }
            }
            TriggerKind::Blended { ratio, .. } => {
                if !(*ratio > 0.0 && *ratio < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "blended ratio {ratio} outside (0, 1)"
                    )));
                }
            }
            TriggerKind::Wanet {
                control_grid,
                strength,
                ..
            } => {
                if *control_grid < 2 {
                    return Err(Error::InvalidConfig(
                        "wanet control grid must be at least 2".into(),
                    ));
                }
                if !strength.is_finite() || *strength < 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "wanet strength {strength} must be a finite non-negative value"
                    )));
                }
            }
            TriggerKind::Sig {
                amplitude,
                frequency,
            } => {
                if !(*amplitude > 0.0 && *amplitude <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "sig amplitude {amplitude} outside (0, 1]"
                    )));
                }
                if !(*frequency > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "sig frequency {frequency} must be positive"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The blended mixing rule for one pixel; intermediate math in f64.
#[inline]
pub fn blended_mix(x: f32, noise: f32, ratio: f64) -> f32 {
    ((1.0 - ratio) * x as f64 + ratio * noise as f64) as f32
}

/// The sig perturbation for column j of a width-w image; shared across
/// channels and rows.
#[inline]
pub fn sig_wave(amplitude: f64, frequency: f64, j: usize, w: usize) -> f32 {
    (amplitude * (std::f64::consts::TAU * frequency * j as f64 / w as f64).sin()) as f32
}

const BADNET_NOISE_STREAM: u64 = 1;
const BADNET_PLACE_STREAM: u64 = 2;
const BLENDED_NOISE_STREAM: u64 = 3;
const WANET_GRID_STREAM: u64 = 4;

/// The fixed badnet patch content: N(0,1) samples clipped to [0,1], one value
/// per (channel, y, x) of the patch.
fn badnet_patch(channels: usize, side: usize, noise_seed: u64) -> Vec<f32> {
    let mut rng = CounterRng::substream(noise_seed, &[BADNET_NOISE_STREAM]);
    (0..channels * side * side)
        .map(|_| rng.normal_f32().clamp(0.0, 1.0))
        .collect()
}

/// The fixed blended noise image: U[0,1) per (channel, y, x).
fn blended_noise(len: usize, noise_seed: u64) -> Vec<f32> {
    let mut rng = CounterRng::substream(noise_seed, &[BLENDED_NOISE_STREAM]);
    (0..len).map(|_| rng.next_f32()).collect()
}

/// Per-pixel (dx, dy) offsets of the wanet warp: a k x k random grid in
/// [-1, 1], normalized by its mean absolute value, scaled by `strength`, and
/// bilinearly upsampled to h x w. Offsets are in pixels.
fn wanet_flow(h: usize, w: usize, k: usize, strength: f64, warp_seed: u64) -> (Vec<f32>, Vec<f32>) {
    let mut rng = CounterRng::substream(warp_seed, &[WANET_GRID_STREAM]);
    let mut grid_x = vec![0.0f32; k * k];
    let mut grid_y = vec![0.0f32; k * k];
    for v in grid_x.iter_mut().chain(grid_y.iter_mut()) {
        *v = rng.uniform_f32(-1.0, 1.0);
    }
    let mean_abs = grid_x
        .iter()
        .chain(grid_y.iter())
        .map(|v| v.abs() as f64)
        .sum::<f64>()
        / (2 * k * k) as f64;
    let scale = if mean_abs > 0.0 {
        (strength / mean_abs) as f32
    } else {
        0.0
    };

    let upsample = |grid: &[f32]| -> Vec<f32> {
        let mut out = vec![0.0f32; h * w];
        for y in 0..h {
            let gy = if h > 1 {
                y as f32 * (k - 1) as f32 / (h - 1) as f32
            } else {
                0.0
            };
            let y0 = gy.floor() as usize;
            let y1 = (y0 + 1).min(k - 1);
            let ty = gy - y0 as f32;
            for x in 0..w {
                let gx = if w > 1 {
                    x as f32 * (k - 1) as f32 / (w - 1) as f32
                } else {
                    0.0
                };
                let x0 = gx.floor() as usize;
                let x1 = (x0 + 1).min(k - 1);
                let tx = gx - x0 as f32;
                let v = (1.0 - ty) * ((1.0 - tx) * grid[y0 * k + x0] + tx * grid[y0 * k + x1])
                    + ty * ((1.0 - tx) * grid[y1 * k + x0] + tx * grid[y1 * k + x1]);
                out[y * w + x] = scale * v;
            }
        }
        out
    };
    (upsample(&grid_x), upsample(&grid_y))
}

fn bilinear_sample(plane: &[f32], h: usize, w: usize, sy: f32, sx: f32) -> f32 {
    let sx = sx.clamp(0.0, (w - 1) as f32);
    let sy = sy.clamp(0.0, (h - 1) as f32);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let tx = sx - x0 as f32;
    let ty = sy - y0 as f32;
    (1.0 - ty) * ((1.0 - tx) * plane[y0 * w + x0] + tx * plane[y0 * w + x1])
        + ty * ((1.0 - tx) * plane[y1 * w + x0] + tx * plane[y1 * w + x1])
}

/// Stamps one image. `item_seed` only affects badnet-random placement; all
/// other kinds are fully determined by the trigger spec.
pub fn apply_trigger(
    image: &[f32],
    shape: (usize, usize, usize),
    t: &TriggerSpec,
    item_seed: u64,
) -> Result<Vec<f32>> {
    t.validate(shape)?;
    let (c, h, w) = shape;
    debug_assert_eq!(image.len(), c * h * w);
    let mut out = image.to_vec();
    match &t.kind {
        TriggerKind::Badnet {
            patch_side,
            placement,
            noise_seed,
        } => {
            let side = *patch_side;
            let (px, py) = match placement {
                Placement::Fixed { x, y } => (*x, *y),
                Placement::Random => {
                    let mut rng = CounterRng::substream(
                        *noise_seed,
                        &[BADNET_PLACE_STREAM, item_seed],
                    );
                    (
                        rng.below((w - side + 1) as u64) as usize,
                        rng.below((h - side + 1) as u64) as usize,
                    )
                }
            };
            let patch = badnet_patch(c, side, *noise_seed);
            for ch in 0..c {
                for dy in 0..side {
                    for dx in 0..side {
                        out[ch * h * w + (py + dy) * w + px + dx] =
                            patch[(ch * side + dy) * side + dx];
                    }
                }
            }
        }
        TriggerKind::Blended { ratio, noise_seed } => {
            let noise = blended_noise(c * h * w, *noise_seed);
            for (o, (&x, &n)) in out.iter_mut().zip(image.iter().zip(&noise)) {
                *o = blended_mix(x, n, *ratio);
            }
        }
        TriggerKind::Wanet {
            control_grid,
            strength,
            warp_seed,
        } => {
            let (fx, fy) = wanet_flow(h, w, *control_grid, *strength, *warp_seed);
            for ch in 0..c {
                let plane = &image[ch * h * w..(ch + 1) * h * w];
                for y in 0..h {
                    for x in 0..w {
                        let sx = x as f32 + fx[y * w + x];
                        let sy = y as f32 + fy[y * w + x];
                        out[ch * h * w + y * w + x] =
                            bilinear_sample(plane, h, w, sy, sx).clamp(0.0, 1.0);
                    }
                }
            }
        }
        TriggerKind::Sig {
            amplitude,
            frequency,
        } => {
            let wave: Vec<f32> = (0..w).map(|j| sig_wave(*amplitude, *frequency, j, w)).collect();
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let i = ch * h * w + y * w + x;
                        out[i] = (image[i] + wave[x]).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Ok(out)
}
