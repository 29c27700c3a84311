//! Procedural class families.
//!
//! Each class is a distinct (shape kind x fill color x stroke color) family;
//! items jitter position, scale, rotation, color saturation/value, and sit on
//! per-item randomized backgrounds with a distractor shape and pixel noise, so
//! the task is learnable but not saturated by a few epochs of training.
//! Families are derived from the generator seed, so two dataset specs with
//! different seeds render visually different tasks with the same labels.

use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy)]
enum ShapeKind {
    Disk,
    Square,
    Triangle,
    Plus,
    Ring,
}

const SHAPES: [ShapeKind; 5] = [
    ShapeKind::Disk,
    ShapeKind::Square,
    ShapeKind::Triangle,
    ShapeKind::Plus,
    ShapeKind::Ring,
];

#[derive(Debug, Clone, Copy)]
enum BgKind {
    Solid,
    Gradient,
    Checker,
    Noise,
}

const BACKGROUNDS: [BgKind; 4] = [BgKind::Solid, BgKind::Gradient, BgKind::Checker, BgKind::Noise];

/// Per-class rendering family.
pub(crate) struct ClassFamily {
    shape: ShapeKind,
    hue: f32,
    stroke: [f32; 3],
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as i32 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * f.mul_add(-1.0, 1.0));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

const FAMILY_STREAM: u64 = 11;
const ITEM_STREAM: u64 = 12;

impl ClassFamily {
    /// Families are evenly spaced in hue with a seed-dependent rotation, so
    /// classes stay mutually distinct under every seed.
    pub(crate) fn derive(seed: u64, class: usize, class_count: usize) -> ClassFamily {
        let mut global = CounterRng::substream(seed, &[FAMILY_STREAM, u64::MAX]);
        let hue_rot = global.next_f32();
        let shape_rot = global.below(SHAPES.len() as u64) as usize;
        let hue = hue_rot + class as f32 / class_count as f32;
        ClassFamily {
            shape: SHAPES[(class + shape_rot) % SHAPES.len()],
            hue,
            stroke: hsv_to_rgb(hue + 0.5, 0.9, 0.95),
        }
    }
}

fn smoothstep(hi: f32, lo: f32, x: f32) -> f32 {
    let t = ((x - hi) / (lo - hi)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn sdf(shape: ShapeKind, u: f32, v: f32, r: f32) -> f32 {
    match shape {
        ShapeKind::Disk => (u * u + v * v).sqrt() - r,
        ShapeKind::Square => u.abs().max(v.abs()) - 0.82 * r,
        ShapeKind::Triangle => {
            // Equilateral triangle, point up.
            let k = 3.0f32.sqrt();
            let rr = 0.95 * r;
            let mut x = u.abs() - rr;
            let mut y = v + rr / k;
            if x + k * y > 0.0 {
                let (nx, ny) = ((x - k * y) / 2.0, (-k * x - y) / 2.0);
                x = nx;
                y = ny;
            }
            x -= x.clamp(-2.0 * rr, 0.0);
            -(x * x + y * y).sqrt() * y.signum()
        }
        ShapeKind::Plus => {
            let bar = 0.36 * r;
            let a = (u.abs() - r).max(v.abs() - bar);
            let b = (u.abs() - bar).max(v.abs() - r);
            a.min(b)
        }
        ShapeKind::Ring => ((u * u + v * v).sqrt() - 0.78 * r).abs() - 0.3 * r,
    }
}

struct PlacedShape {
    kind: ShapeKind,
    cx: f32,
    cy: f32,
    r: f32,
    sin_t: f32,
    cos_t: f32,
    fill: [f32; 3],
    stroke: [f32; 3],
}

impl PlacedShape {
    fn sample(&self, x: usize, y: usize) -> (f32, f32) {
        let dx = x as f32 + 0.5 - self.cx;
        let dy = y as f32 + 0.5 - self.cy;
        let u = self.cos_t * dx + self.sin_t * dy;
        let v = -self.sin_t * dx + self.cos_t * dy;
        let d = sdf(self.kind, u, v, self.r);
        (smoothstep(0.5, -0.5, d), smoothstep(1.6, 0.7, d.abs()))
    }
}

/// Renders one item of a class onto a fresh image, quantized to the u8 grid so
/// saved datasets round-trip bit-exactly.
pub(crate) fn render_item(
    family: &ClassFamily,
    seed: u64,
    class: usize,
    global_index: u64,
    h: usize,
    w: usize,
) -> Vec<f32> {
    let mut rng = CounterRng::substream(seed, &[ITEM_STREAM, class as u64, global_index]);
    let side = h.min(w) as f32;

    // Main shape: jittered position, size, rotation, and color.
    let theta = rng.next_f32() * std::f32::consts::TAU;
    let (sin_t, cos_t) = theta.sin_cos();
    let hue = family.hue + rng.uniform_f32(-0.02, 0.02);
    let sat = rng.uniform_f32(0.80, 0.95);
    let val = rng.uniform_f32(0.70, 0.95);
    let main = PlacedShape {
        kind: family.shape,
        cx: w as f32 / 2.0 + rng.uniform_f32(-0.15, 0.15) * w as f32,
        cy: h as f32 / 2.0 + rng.uniform_f32(-0.15, 0.15) * h as f32,
        r: rng.uniform_f32(0.22, 0.34) * side,
        sin_t,
        cos_t,
        fill: hsv_to_rgb(hue, sat, val),
        stroke: family.stroke,
    };

    // Distractor: a smaller shape colored like a random other class; pure noise
    // with respect to the label.
    let other = {
        let step = 1 + rng.below(4) as usize;
        (class + step) % 5
    };
    let d_theta = rng.next_f32() * std::f32::consts::TAU;
    let (dsin, dcos) = d_theta.sin_cos();
    let d_hue = rng.next_f32();
    let distractor = PlacedShape {
        kind: SHAPES[other % SHAPES.len()],
        cx: rng.uniform_f32(0.1, 0.9) * w as f32,
        cy: rng.uniform_f32(0.1, 0.9) * h as f32,
        r: rng.uniform_f32(0.05, 0.10) * side,
        sin_t: dsin,
        cos_t: dcos,
        fill: hsv_to_rgb(d_hue, rng.uniform_f32(0.0, 0.25), rng.uniform_f32(0.3, 0.6)),
        stroke: hsv_to_rgb(d_hue + 0.5, 0.2, 0.45),
    };

    // Background: kind and palette drawn per item, carrying no class signal.
    let bg_kind = BACKGROUNDS[rng.below(BACKGROUNDS.len() as u64) as usize];
    let bg_hue = rng.next_f32();
    let bg_a = hsv_to_rgb(bg_hue, rng.uniform_f32(0.10, 0.40), rng.uniform_f32(0.08, 0.28));
    let bg_b = hsv_to_rgb(
        bg_hue + rng.uniform_f32(0.05, 0.15),
        rng.uniform_f32(0.10, 0.40),
        rng.uniform_f32(0.16, 0.38),
    );
    let grad_dir = rng.next_f32() < 0.5;
    let checker_phase = rng.below(2) as usize;
    let mut noise_rng =
        CounterRng::substream(seed, &[ITEM_STREAM + 1, class as u64, global_index]);

    let mut img = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let mut px = match bg_kind {
                BgKind::Solid => bg_a,
                BgKind::Gradient => {
                    let t = if grad_dir {
                        x as f32 / (w - 1) as f32
                    } else {
                        y as f32 / (h - 1) as f32
                    };
                    [
                        bg_a[0] * (1.0 - t) + bg_b[0] * t,
                        bg_a[1] * (1.0 - t) + bg_b[1] * t,
                        bg_a[2] * (1.0 - t) + bg_b[2] * t,
                    ]
                }
                BgKind::Checker => {
                    if ((x / 8 + y / 8) + checker_phase) % 2 == 0 {
                        bg_a
                    } else {
                        bg_b
                    }
                }
                BgKind::Noise => bg_a,
            };

            // Distractor under the main shape.
            let (df, ds) = distractor.sample(x, y);
            for ch in 0..3 {
                px[ch] = px[ch] * (1.0 - df) + distractor.fill[ch] * df;
                px[ch] = px[ch] * (1.0 - ds) + distractor.stroke[ch] * ds;
            }
            let (mf, ms) = main.sample(x, y);
            for ch in 0..3 {
                px[ch] = px[ch] * (1.0 - mf) + main.fill[ch] * mf;
                px[ch] = px[ch] * (1.0 - ms) + main.stroke[ch] * ms;
            }

            // Per-pixel noise on every item.
            let n = noise_rng.uniform_f32(-0.05, 0.05);
            for ch in 0..3 {
                img[ch * h * w + y * w + x] = quantize(px[ch] + n);
            }
        }
    }
    img
}

/// Snaps a pixel to the u8 grid used by the dataset file format.
#[inline]
pub(crate) fn quantize(x: f32) -> f32 {
    ((x.clamp(0.0, 1.0) * 255.0).round() as u8) as f32 / 255.0
}
