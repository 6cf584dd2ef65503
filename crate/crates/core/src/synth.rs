//! Deterministic synthetic multi-object videos with ground truth, and the
//! static-image-to-clip augmentation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::SamplePoint;
use crate::video::{Frame, IdMask, DEFAULT_CAPACITY};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Circle { radius: f32 },
    Rectangle { half_width: f32, half_height: f32 },
    /// Equilateral, apex up, given by its circumradius.
    Triangle { radius: f32 },
}

impl Shape {
    fn half_extent(&self) -> (f32, f32) {
        match *self {
            Shape::Circle { radius } | Shape::Triangle { radius } => (radius, radius),
            Shape::Rectangle {
                half_width,
                half_height,
            } => (half_width, half_height),
        }
    }

    fn contains(&self, dx: f32, dy: f32) -> bool {
        match *self {
            Shape::Circle { radius } => dx * dx + dy * dy <= radius * radius,
            Shape::Rectangle {
                half_width,
                half_height,
            } => dx.abs() <= half_width && dy.abs() <= half_height,
            Shape::Triangle { radius } => {
                let v = triangle_vertices(radius);
                let sign = |a: [f32; 2], b: [f32; 2]| (b[0] - a[0]) * (dy - a[1]) - (b[1] - a[1]) * (dx - a[0]);
                let s = [sign(v[0], v[1]), sign(v[1], v[2]), sign(v[2], v[0])];
                s.iter().all(|&x| x >= 0.0) || s.iter().all(|&x| x <= 0.0)
            }
        }
    }
}

fn triangle_vertices(r: f32) -> [[f32; 2]; 3] {
    let h = 3f32.sqrt() / 2.0;
    [[0.0, -r], [r * h, r * 0.5], [-r * h, r * 0.5]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub color: [f32; 3],
    pub z: i32,
    /// Center at frame 0, `[x, y]`.
    pub start: [f32; 2],
    /// Pixels per frame.
    pub velocity: [f32; 2],
    pub amplitude: [f32; 2],
    /// Period of the sinusoidal wobble, in frames.
    pub period: f32,
}

impl ObjectSpec {
    pub fn center(&self, t: usize) -> [f32; 2] {
        let t = t as f32;
        let phase = (2.0 * std::f32::consts::PI * t / self.period).sin();
        [
            self.start[0] + self.velocity[0] * t + self.amplitude[0] * phase,
            self.start[1] + self.velocity[1] * t + self.amplitude[1] * phase,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Flat { color: [f32; 3] },
    /// Horizontal blend from `left` to `right`.
    Gradient { left: [f32; 3], right: [f32; 3] },
    /// Static per-pixel uniform noise around `base`.
    Noise { base: [f32; 3], amplitude: f32, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub name: String,
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub objects: Vec<ObjectSpec>,
    pub background: Background,
    pub seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::invalid("scene needs frames and non-zero extents"));
        }
        if self.objects.len() > DEFAULT_CAPACITY {
            return Err(Error::Capacity {
                requested: self.objects.len(),
                capacity: DEFAULT_CAPACITY,
            });
        }
        let mut zs: Vec<i32> = self.objects.iter().map(|o| o.z).collect();
        zs.sort_unstable();
        if zs.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("object z-orders must be distinct"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            let (hx, hy) = o.shape.half_extent();
            let [cx, cy] = o.start;
            let fits = cx - hx >= 0.0
                && cy - hy >= 0.0
                && cx + hx <= self.width as f32 - 1.0
                && cy + hy <= self.height as f32 - 1.0;
            if !fits {
                return Err(Error::invalid(format!("object {} does not fit in frame 0", i + 1)));
            }
            if !(o.period > 0.0) || o.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::invalid(format!("object {} has a bad period or color", i + 1)));
            }
        }
        Ok(())
    }
}

/// Quantizes to 8-bit levels so frames survive a PNG round trip exactly.
pub fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn background_pixels(cfg: &SceneConfig) -> Vec<f32> {
    let (h, w) = (cfg.height, cfg.width);
    let mut out = vec![0.0; h * w * 3];
    match &cfg.background {
        Background::Flat { color } => {
            for px in out.chunks_mut(3) {
                px.copy_from_slice(color);
            }
        }
        Background::Gradient { left, right } => {
            for y in 0..h {
                for x in 0..w {
                    let a = if w > 1 { x as f32 / (w - 1) as f32 } else { 0.0 };
                    for c in 0..3 {
                        out[(y * w + x) * 3 + c] = left[c] * (1.0 - a) + right[c] * a;
                    }
                }
            }
        }
        Background::Noise { base, amplitude, seed } => {
            let mut rng = SeededRng::new(*seed);
            for px in out.chunks_mut(3) {
                let n = (rng.next_f64() as f32 - 0.5) * amplitude;
                for c in 0..3 {
                    px[c] = base[c] + n;
                }
            }
        }
    }
    out.iter_mut().for_each(|v| *v = quantize(*v));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetadata {
    /// `(frame, object)` pairs with no visible pixel.
    pub hidden: Vec<(usize, u8)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub frames: Vec<Frame>,
    pub gt: Vec<IdMask>,
    pub metadata: SceneMetadata,
}

impl Scene {
    pub fn num_objects(&self) -> usize {
        self.config.objects.len()
    }
}

/// Renders a scene; higher `z` occludes lower `z`, and ground truth follows
/// the visible object.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let bg = background_pixels(cfg);
    let mut order: Vec<usize> = (0..cfg.objects.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(cfg.objects[i].z));
    let mut frames = Vec::with_capacity(cfg.num_frames);
    let mut gt = Vec::with_capacity(cfg.num_frames);
    let mut hidden = Vec::new();
    for t in 0..cfg.num_frames {
        let centers: Vec<[f32; 2]> = cfg.objects.iter().map(|o| o.center(t)).collect();
        let mut rgb = bg.clone();
        let mut labels = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                let hit = order.iter().copied().find(|&i| {
                    let o = &cfg.objects[i];
                    o.shape.contains(x as f32 - centers[i][0], y as f32 - centers[i][1])
                });
                if let Some(i) = hit {
                    let p = (y * w + x) * 3;
                    for c in 0..3 {
                        rgb[p + c] = quantize(cfg.objects[i].color[c]);
                    }
                    labels[y * w + x] = i as u8 + 1;
                }
            }
        }
        for k in 1..=cfg.objects.len() as u8 {
            if !labels.contains(&k) {
                hidden.push((t, k));
            }
        }
        frames.push(Frame::new(t, h, w, rgb)?);
        gt.push(IdMask::new(t, 0, h, w, labels)?);
    }
    Ok(Scene {
        config: cfg.clone(),
        frames,
        gt,
        metadata: SceneMetadata { hidden },
    })
}

/// Saturated object colors, far from the gray backgrounds.
pub const PALETTE: [[f32; 3]; 10] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.75, 0.15],
    [0.15, 0.25, 0.95],
    [0.95, 0.85, 0.10],
    [0.85, 0.15, 0.85],
    [0.10, 0.85, 0.85],
    [0.95, 0.50, 0.05],
    [0.50, 0.05, 0.60],
    [0.55, 0.95, 0.45],
    [0.45, 0.25, 0.05],
];

/// Draws a random scene from `seed`: shapes, palette colors, drifting and
/// wobbling trajectories, and one of three background kinds.
pub fn random_scene(name: &str, seed: u64, num_objects: usize, num_frames: usize, height: usize, width: usize) -> SceneConfig {
    let mut rng = SeededRng::new(seed);
    let mut colors: Vec<usize> = (0..PALETTE.len()).collect();
    rng.shuffle(&mut colors);
    let scale = (height.min(width) as f64 / 96.0) * (3.0 / num_objects.max(3) as f64).sqrt();
    let objects = (0..num_objects)
        .map(|i| {
            let size = rng.uniform(11.0, 16.0) * scale;
            let shape = match rng.below(3) {
                0 => Shape::Circle { radius: size as f32 },
                1 => Shape::Rectangle {
                    half_width: size as f32,
                    half_height: (size * rng.uniform(0.6, 1.0)) as f32,
                },
                _ => Shape::Triangle {
                    radius: (size * 1.2) as f32,
                },
            };
            let (hx, hy) = shape.half_extent();
            let margin = 2.0;
            let cx = rng.uniform(hx as f64 + margin, width as f64 - 1.0 - hx as f64 - margin);
            let cy = rng.uniform(hy as f64 + margin, height as f64 - 1.0 - hy as f64 - margin);
            ObjectSpec {
                shape,
                color: PALETTE[colors[i % colors.len()]],
                z: i as i32 + 1,
                start: [cx as f32, cy as f32],
                velocity: [rng.uniform(-0.8, 0.8) as f32, rng.uniform(-0.8, 0.8) as f32],
                amplitude: [rng.uniform(0.0, 3.0) as f32, rng.uniform(0.0, 3.0) as f32],
                period: rng.uniform(8.0, 16.0) as f32,
            }
        })
        .collect();
    let background = match seed % 3 {
        0 => Background::Flat {
            color: [0.45, 0.45, 0.47],
        },
        1 => Background::Gradient {
            left: [0.30, 0.30, 0.32],
            right: [0.62, 0.60, 0.58],
        },
        _ => Background::Noise {
            base: [0.48, 0.47, 0.45],
            amplitude: 0.12,
            seed: seed ^ 0x5eed,
        },
    };
    SceneConfig {
        name: name.to_string(),
        num_frames,
        height,
        width,
        objects,
        background,
        seed,
    }
}

/// Shipped evaluation suite: five 24-frame, 3-object scenes.
pub fn synthetic_suite() -> Vec<SceneConfig> {
    serde_json::from_str(include_str!("../fixtures/synthetic_suite.json")).expect("shipped suite parses")
}

/// Shipped 10-object benchmark scene.
pub fn benchmark_scene() -> SceneConfig {
    serde_json::from_str(include_str!("../fixtures/benchmark_scene.json")).expect("shipped scene parses")
}

/// Configs the shipped fixtures were generated from.
pub fn suite_recipe() -> Vec<SceneConfig> {
    (0..5)
        .map(|i| random_scene(&format!("scene{i:02}"), 1000 + i as u64, 3, 24, 96, 96))
        .collect()
}

pub fn benchmark_recipe() -> SceneConfig {
    random_scene("bench10", 4242, 10, 8, 128, 128)
}

/// `dst = [[a, b], [c, d]] · src + [tx, ty]` in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Affine {
    pub fn identity() -> Self {
        Affine {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Affine {
            tx: dx,
            ty: dy,
            ..Self::identity()
        }
    }

    /// Rotation by `theta` radians about `(cx, cy)`.
    pub fn rotation_about(theta: f64, cx: f64, cy: f64) -> Self {
        let (s, co) = theta.sin_cos();
        Affine {
            a: co,
            b: -s,
            c: s,
            d: co,
            tx: cx - co * cx + s * cy,
            ty: cy - s * cx - co * cy,
        }
    }

    fn inverse_map(&self) -> Result<impl Fn(f64, f64) -> (f64, f64)> {
        let det = self.a * self.d - self.b * self.c;
        if det.abs() < 1e-9 || !det.is_finite() {
            return Err(Error::invalid("singular affine transform"));
        }
        let s = *self;
        Ok(move |x: f64, y: f64| {
            let (u, v) = (x - s.tx, y - s.ty);
            ((s.d * u - s.b * v) / det, (-s.c * u + s.a * v) / det)
        })
    }
}

/// Treats a still image as a clip: frame `k` is the image and mask warped
/// by `params[k]` (bilinear for RGB, nearest for labels). Pixels mapped
/// from outside the image take `fill` / background.
pub fn augment_static_to_clip(
    image: &Frame,
    mask: &IdMask,
    params: &[Affine],
    fill: [f32; 3],
) -> Result<(Vec<Frame>, Vec<IdMask>)> {
    let (h, w) = (image.height, image.width);
    if mask.height != h || mask.width != w {
        return Err(Error::invalid("mask and image sizes differ"));
    }
    match params.first() {
        Some(p) if *p == Affine::identity() => {}
        _ => return Err(Error::invalid("frame 0 parameters must be the identity")),
    }
    let mut frames = Vec::with_capacity(params.len());
    let mut masks = Vec::with_capacity(params.len());
    for (k, p) in params.iter().enumerate() {
        let inv = p.inverse_map()?;
        let mut rgb = vec![0.0f32; h * w * 3];
        let mut labels = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = inv(x as f64, y as f64);
                let i = y * w + x;
                let inside = sx >= -0.5 && sy >= -0.5 && sx < w as f64 - 0.5 && sy < h as f64 - 0.5;
                if inside {
                    let (nx, ny) = (sx.round() as usize, sy.round() as usize);
                    labels[i] = mask.labels[ny * w + nx];
                    crate::tensor::sample_into(
                        &image.rgb,
                        h,
                        w,
                        3,
                        SamplePoint::new(sx as f32, sy as f32),
                        &mut rgb[i * 3..i * 3 + 3],
                    );
                } else {
                    rgb[i * 3..i * 3 + 3].copy_from_slice(&fill);
                }
            }
        }
        rgb.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        frames.push(Frame::new(k, h, w, rgb)?);
        masks.push(IdMask::new(k, 0, h, w, labels)?);
    }
    Ok((frames, masks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_circles() -> SceneConfig {
        let obj = |x: f32, z: i32, color: [f32; 3]| ObjectSpec {
            shape: Shape::Circle { radius: 6.0 },
            color,
            z,
            start: [x, 12.0],
            velocity: [0.0, 0.0],
            amplitude: [0.0, 0.0],
            period: 10.0,
        };
        SceneConfig {
            name: "overlap".into(),
            num_frames: 2,
            height: 24,
            width: 32,
            objects: vec![obj(12.0, 1, PALETTE[0]), obj(18.0, 2, PALETTE[1])],
            background: Background::Flat { color: [0.5; 3] },
            seed: 3,
        }
    }

    #[test]
    fn deterministic() {
        let cfg = suite_recipe().remove(2);
        assert_eq!(generate_scene(&cfg).unwrap(), generate_scene(&cfg).unwrap());
    }

    #[test]
    fn overlap_goes_to_higher_z() {
        let cfg = two_circles();
        let s = generate_scene(&cfg).unwrap();
        for y in 0..24 {
            for x in 0..32 {
                let (fx, fy) = (x as f32, y as f32);
                let in1 = (fx - 12.0).powi(2) + (fy - 12.0).powi(2) <= 36.0;
                let in2 = (fx - 18.0).powi(2) + (fy - 12.0).powi(2) <= 36.0;
                let want = if in2 { 2 } else if in1 { 1 } else { 0 };
                assert_eq!(s.gt[0].at(y, x), want, "({x},{y})");
            }
        }
    }

    #[test]
    fn all_labels_present_without_occlusion() {
        for cfg in suite_recipe() {
            let s = generate_scene(&cfg).unwrap();
            for (t, m) in s.gt.iter().enumerate() {
                let hidden: Vec<u8> = s.metadata.hidden.iter().filter(|h| h.0 == t).map(|h| h.1).collect();
                for k in 0..=3u8 {
                    assert_eq!(m.labels.contains(&k), !hidden.contains(&k));
                }
                assert!(m.max_label() <= 3);
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = two_circles();
        cfg.objects[1].z = 1;
        assert!(generate_scene(&cfg).is_err());
        let mut cfg = two_circles();
        cfg.objects[0].start = [2.0, 12.0];
        assert!(generate_scene(&cfg).is_err());
    }

    /// Rewrites the shipped fixtures from the recipe.
    #[test]
    #[ignore]
    fn regenerate_fixtures() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
        let suite = serde_json::to_string_pretty(&suite_recipe()).unwrap();
        std::fs::write(dir.join("synthetic_suite.json"), suite + "\n").unwrap();
        let bench = serde_json::to_string_pretty(&benchmark_recipe()).unwrap();
        std::fs::write(dir.join("benchmark_scene.json"), bench + "\n").unwrap();
    }

    #[test]
    fn shipped_fixtures_match_recipe() {
        assert_eq!(synthetic_suite(), suite_recipe());
        assert_eq!(benchmark_scene(), benchmark_recipe());
    }

    fn still() -> (Frame, IdMask) {
        let s = generate_scene(&two_circles()).unwrap();
        (s.frames[0].clone(), s.gt[0].clone())
    }

    #[test]
    fn identity_params_copy() {
        let (f, m) = still();
        let (frames, masks) = augment_static_to_clip(&f, &m, &[Affine::identity(); 3], [0.0; 3]).unwrap();
        for k in 0..3 {
            assert_eq!(frames[k].rgb, f.rgb);
            assert_eq!(masks[k].labels, m.labels);
        }
    }

    #[test]
    fn translation_shifts_labels() {
        let (f, m) = still();
        let params = [Affine::identity(), Affine::translation(3.0, 0.0)];
        let (_, masks) = augment_static_to_clip(&f, &m, &params, [0.0; 3]).unwrap();
        for y in 0..m.height {
            for x in 3..m.width {
                assert_eq!(masks[1].at(y, x), masks[0].at(y, x - 3));
            }
        }
    }

    #[test]
    fn half_turn_twice_is_identity() {
        let (f, m) = still();
        let (cx, cy) = ((m.width - 1) as f64 / 2.0, (m.height - 1) as f64 / 2.0);
        let rot = Affine::rotation_about(std::f64::consts::PI, cx, cy);
        let (f1, m1) = augment_static_to_clip(&f, &m, &[Affine::identity(), rot], [0.0; 3]).unwrap();
        let (_, m2) = augment_static_to_clip(&f1[1], &m1[1], &[Affine::identity(), rot], [0.0; 3]).unwrap();
        assert_eq!(m2[1].labels, m.labels);
    }

    #[test]
    fn singular_affine_rejected() {
        let (f, m) = still();
        let bad = Affine {
            a: 1.0,
            b: 2.0,
            c: 2.0,
            d: 4.0,
            tx: 0.0,
            ty: 0.0,
        };
        assert!(augment_static_to_clip(&f, &m, &[Affine::identity(), bad], [0.0; 3]).is_err());
        assert!(augment_static_to_clip(&f, &m, &[bad], [0.0; 3]).is_err());
    }
}
