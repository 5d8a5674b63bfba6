//! Procedural street-like scenes seen by a pinhole camera: a textured ground
//! plane receding to a back wall, axis-aligned boxes standing on the ground
//! and a few floating billboards. Appearance carries depth through fog,
//! texture foreshortening and shading.

use super::SceneSample;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticWorldConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub height: usize,
    pub width: usize,
    pub min_depth: f64,
    pub max_depth: f64,
    /// Horizontal field of view in degrees.
    pub fov_degrees: f64,
    /// Horizon row as a fraction of the image height.
    pub horizon: [f64; 2],
    /// Camera height above the ground in meters.
    pub camera_height: [f64; 2],
    /// Back-wall distance as a fraction of `max_depth`.
    pub wall_distance: [f64; 2],
    pub boxes: [usize; 2],
    /// Box edge lengths in meters.
    pub box_size: [f64; 2],
    pub billboards: [usize; 2],
    /// Texture stripes per meter.
    pub texture_frequency: [f64; 2],
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        SyntheticWorldConfig {
            seed: 0,
            n_samples: 8,
            height: 64,
            width: 64,
            min_depth: 1.0,
            max_depth: 40.0,
            fov_degrees: 70.0,
            horizon: [0.35, 0.5],
            camera_height: [1.2, 2.0],
            wall_distance: [0.6, 1.0],
            boxes: [2, 6],
            box_size: [0.8, 4.0],
            billboards: [0, 2],
            texture_frequency: [0.5, 2.0],
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::Config(format!("{name} range {r:?} is not an ordered pair")));
    }
    Ok(())
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        if !(self.min_depth > 0.0 && self.max_depth > self.min_depth) {
            return Err(Error::Config(format!(
                "depth range [{}, {}] must satisfy 0 < a < b",
                self.min_depth, self.max_depth
            )));
        }
        if !(self.fov_degrees > 1.0 && self.fov_degrees < 170.0) {
            return Err(Error::Config(format!("field of view {} outside (1, 170)", self.fov_degrees)));
        }
        check_range("horizon", self.horizon)?;
        check_range("camera_height", self.camera_height)?;
        check_range("wall_distance", self.wall_distance)?;
        check_range("box_size", self.box_size)?;
        check_range("texture_frequency", self.texture_frequency)?;
        if self.horizon[0] < 0.0 || self.horizon[1] >= 1.0 {
            return Err(Error::Config("horizon must lie in [0, 1)".into()));
        }
        if self.camera_height[0] <= 0.0 || self.box_size[0] <= 0.0 || self.texture_frequency[0] <= 0.0 {
            return Err(Error::Config("camera height, box size and texture frequency must be positive".into()));
        }
        if self.wall_distance[0] * self.max_depth <= self.min_depth || self.wall_distance[1] > 1.0 {
            return Err(Error::Config("back wall must lie inside (min_depth, max_depth]".into()));
        }
        if self.boxes[0] > self.boxes[1] || self.billboards[0] > self.billboards[1] {
            return Err(Error::Config("object count ranges must be ordered".into()));
        }
        Ok(())
    }
}

/// Surface pattern shared by boxes and billboards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub albedo: [f64; 3],
    pub frequency: f64,
    pub contrast: f64,
}

/// Axis-aligned box in camera coordinates (x right, y down, z forward).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub material: Material,
}

/// Camera-facing rectangle at constant depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Billboard {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: f64,
    pub material: Material,
}

/// Geometry and appearance of one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    /// The ground is the plane y = camera_height.
    pub camera_height: f64,
    pub wall_z: f64,
    pub blocks: Vec<Block>,
    pub billboards: Vec<Billboard>,
    pub ground: Material,
    pub wall: Material,
    pub fog_color: [f64; 3],
    /// Fog extinction per meter.
    pub fog_density: f64,
}

impl Scene {
    /// Direction of the ray through the centre of pixel (x, y), with unit z.
    pub fn ray(&self, x: usize, y: usize) -> [f64; 3] {
        [
            (x as f64 + 0.5 - self.cx) / self.focal,
            (y as f64 + 0.5 - self.cy) / self.focal,
            1.0,
        ]
    }

    fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.cx + self.focal * p[0] / p[2], self.cy + self.focal * p[1] / p[2])
    }
}

fn material(rng: &mut ChaCha8Rng, cfg: &SyntheticWorldConfig) -> Material {
    let base: f64 = rng.gen_range(0.25..0.9);
    let tint = [rng.gen_range(0.7..1.0), rng.gen_range(0.7..1.0), rng.gen_range(0.7..1.0)];
    Material {
        albedo: [base * tint[0], base * tint[1], base * tint[2]],
        frequency: rng.gen_range(cfg.texture_frequency[0]..=cfg.texture_frequency[1]),
        contrast: rng.gen_range(0.1..0.35),
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

/// Draws the scene with the given index; each index has its own stream.
pub fn sample_scene(cfg: &SyntheticWorldConfig, index: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let focal = 0.5 * w / (0.5 * cfg.fov_degrees.to_radians()).tan();
    let cx = 0.5 * w;
    let cy = uniform(&mut rng, cfg.horizon) * h;
    // The nearest visible ground point must not be closer than min_depth.
    let min_height = cfg.min_depth * (h - cy) / focal;
    let camera_height = uniform(&mut rng, cfg.camera_height).max(min_height * 1.001);
    let wall_z = uniform(&mut rng, cfg.wall_distance) * cfg.max_depth;

    let near = (cfg.min_depth * 1.5).max(focal * camera_height / (h - cy));
    let n_blocks = rng.gen_range(cfg.boxes[0]..=cfg.boxes[1]);
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let sx = uniform(&mut rng, cfg.box_size);
        let sy = uniform(&mut rng, cfg.box_size);
        let sz = uniform(&mut rng, cfg.box_size);
        let z0 = rng.gen_range(near..(wall_z * 0.85).max(near * 1.01));
        let half_width = z0 * 0.5 * w / focal;
        let x0 = rng.gen_range(-1.2 * half_width..1.2 * half_width) - 0.5 * sx;
        blocks.push(Block {
            min: [x0, camera_height - sy, z0],
            max: [x0 + sx, camera_height, (z0 + sz).min(wall_z)],
            material: material(&mut rng, cfg),
        });
    }
    let n_boards = rng.gen_range(cfg.billboards[0]..=cfg.billboards[1]);
    let mut billboards = Vec::with_capacity(n_boards);
    for _ in 0..n_boards {
        let z = rng.gen_range(near..(wall_z * 0.85).max(near * 1.01));
        let sx = uniform(&mut rng, cfg.box_size) * 1.5;
        let sy = uniform(&mut rng, cfg.box_size) * 0.6;
        let half_width = z * 0.5 * w / focal;
        let x0 = rng.gen_range(-half_width..half_width) - 0.5 * sx;
        let bottom = camera_height - rng.gen_range(1.0..3.0);
        billboards.push(Billboard {
            x: [x0, x0 + sx],
            y: [bottom - sy, bottom],
            z,
            material: material(&mut rng, cfg),
        });
    }
    let ground = material(&mut rng, cfg);
    let wall = material(&mut rng, cfg);
    let fog = rng.gen_range(0.75..0.95);
    Ok(Scene {
        height: cfg.height,
        width: cfg.width,
        focal,
        cx,
        cy,
        camera_height,
        wall_z,
        blocks,
        billboards,
        ground,
        wall,
        fog_color: [fog * 0.9, fog * 0.95, fog],
        fog_density: 1.2 / cfg.max_depth,
    })
}

/// What the z-buffer remembers per pixel besides depth.
#[derive(Clone, Copy)]
struct Hit {
    material: Material,
    /// Texture coordinates on the surface, in meters.
    uv: (f64, f64),
    /// Lambert-like brightness of the face.
    shade: f64,
}

struct Raster<'s> {
    scene: &'s Scene,
    zbuf: Vec<f64>,
    hits: Vec<Option<Hit>>,
}

impl Raster<'_> {
    fn write(&mut self, i: usize, z: f64, hit: Hit) {
        if z < self.zbuf[i] {
            self.zbuf[i] = z;
            self.hits[i] = Some(hit);
        }
    }

    /// Pixel window covering the projection of a face (z > 0 corners).
    fn bounds(&self, corners: &[[f64; 3]]) -> (usize, usize, usize, usize) {
        let s = self.scene;
        let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &c in corners {
            let (u, v) = s.project(c);
            u0 = u0.min(u);
            u1 = u1.max(u);
            v0 = v0.min(v);
            v1 = v1.max(v);
        }
        let clip = |a: f64, n: usize| a.floor().clamp(0.0, n as f64) as usize;
        (
            clip(u0 - 1.0, s.width),
            clip(u1 + 2.0, s.width),
            clip(v0 - 1.0, s.height),
            clip(v1 + 2.0, s.height),
        )
    }

    /// Rasterizes the face `axis = value` bounded by `lo..hi` on the other
    /// two axes.
    fn face(&mut self, axis: usize, value: f64, lo: [f64; 3], hi: [f64; 3], material: Material, shade: f64) {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut corners = Vec::with_capacity(4);
        for &pa in &[lo[a], hi[a]] {
            for &pb in &[lo[b], hi[b]] {
                let mut c = [0.0; 3];
                c[axis] = value;
                c[a] = pa;
                c[b] = pb;
                corners.push(c);
            }
        }
        let (x0, x1, y0, y1) = self.bounds(&corners);
        for y in y0..y1 {
            for x in x0..x1 {
                let d = self.scene.ray(x, y);
                if d[axis] == 0.0 {
                    continue;
                }
                let t = value / d[axis];
                if t <= 0.0 {
                    continue;
                }
                let p = [d[0] * t, d[1] * t, t];
                if p[a] < lo[a] || p[a] > hi[a] || p[b] < lo[b] || p[b] > hi[b] {
                    continue;
                }
                let uv = match axis {
                    0 => (p[2], p[1]),
                    1 => (p[0], p[2]),
                    _ => (p[0], p[1]),
                };
                self.write(y * self.scene.width + x, t, Hit { material, uv, shade });
            }
        }
    }
}

fn texture(m: &Material, uv: (f64, f64)) -> f64 {
    let tau = std::f64::consts::TAU;
    let s = (tau * m.frequency * uv.0).sin() * (tau * m.frequency * 0.7 * uv.1 + 1.3).sin();
    1.0 + m.contrast * s
}

/// Nearest `k/255` level, computed the same way the PPM reader does.
pub(crate) fn quantize(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * 255.0).round() as u8) as f32 / 255.0
}

/// Renders a scene by rasterizing every visible face into a z-buffer.
pub fn render_scene(scene: &Scene) -> Result<SceneSample> {
    let (h, w) = (scene.height, scene.width);
    let mut r = Raster {
        scene,
        zbuf: vec![f64::INFINITY; h * w],
        hits: vec![None; h * w],
    };
    let far = scene.wall_z;
    let big = far * 4.0 * w as f64 / scene.focal;
    // Back wall and ground fill the frame.
    r.face(2, far, [-big, -big, far], [big, big, far], scene.wall, 0.8);
    r.face(1, scene.camera_height, [-big, scene.camera_height, 1e-9], [big, scene.camera_height, far], scene.ground, 1.0);
    for b in &scene.blocks {
        let (lo, hi, m) = (b.min, b.max, b.material);
        r.face(2, lo[2], lo, hi, m, 0.85);
        if lo[0] > 0.0 {
            r.face(0, lo[0], lo, hi, m, 0.6);
        }
        if hi[0] < 0.0 {
            r.face(0, hi[0], lo, hi, m, 0.6);
        }
        if lo[1] > 0.0 {
            r.face(1, lo[1], lo, hi, m, 1.0);
        }
    }
    for bb in &scene.billboards {
        r.face(2, bb.z, [bb.x[0], bb.y[0], bb.z], [bb.x[1], bb.y[1], bb.z], bb.material, 0.9);
    }

    let mut rgb = Vec::with_capacity(3 * h * w);
    let mut depth = Vec::with_capacity(h * w);
    for (i, hit) in r.hits.iter().enumerate() {
        let z = r.zbuf[i];
        let hit = hit.ok_or_else(|| Error::Config(format!("pixel {i} sees no surface")))?;
        let t = texture(&hit.material, hit.uv);
        let keep = (-scene.fog_density * z).exp();
        for c in 0..3 {
            let lit = (hit.material.albedo[c] * hit.shade * t).clamp(0.0, 1.0);
            let v = lit * keep + scene.fog_color[c] * (1.0 - keep);
            rgb.push(quantize(v));
        }
        depth.push(z as f32);
    }
    SceneSample::new(h, w, rgb, depth, vec![true; h * w])
}

/// Scene `index` of the configured world, rendered.
pub fn render(cfg: &SyntheticWorldConfig, index: u64) -> Result<SceneSample> {
    render_scene(&sample_scene(cfg, index)?)
}
