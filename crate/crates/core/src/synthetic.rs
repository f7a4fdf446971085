//! Synthetic scenes with exactly representable ground truth.
//!
//! A scene is a Voronoi partition of the frame into 2 to 6 regions. Each
//! region has one depth value and its own texture: a base color, smooth
//! value noise and a few flat discs and rectangles. The target is the blend
//! of the image and its smoothing stack under one-hot weights from the
//! parametric focus model, so some weight map reproduces it exactly.
//!
//! On disk a dataset is
//!
//! ```text
//! input/NNNN.png    8-bit RGB
//! depth/NNNN.png    16-bit gray
//! target/NNNN.png   8-bit RGB
//! manifest.txt
//! ```
//!
//! The image and depth are quantized before the target is computed, so the
//! target can be recomputed exactly from the stored files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::blend::blend;
use crate::blur::blur_stack;
use crate::error::{BokehError, Result};
use crate::image::{DepthMap, Image};
use crate::io::{load_depth, load_image, quantize16, quantize8, save_depth16, save_image};
use crate::train::SamplePair;
use crate::weights::{hard_weights, FocusParams};

/// Depth layers the random scenes draw from. With focus at 0 they coincide
/// with the default level centers.
pub const DEPTH_LAYERS: [f32; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
const DEPTH_JITTER: f32 = 0.08;
const NOISE_CELL: usize = 8;
const NOISE_AMPLITUDE: f32 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// One depth per region; the region count is its length.
    pub depths: Vec<f32>,
    pub focus_depth: f32,
}

impl SceneSpec {
    /// 2 to 6 regions with depths near the layers of [`DEPTH_LAYERS`],
    /// focus at depth 0.
    pub fn random(seed: u64, width: usize, height: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = rng.random_range(2..=6);
        let mut depths: Vec<f32> = Vec::with_capacity(count);
        while depths.len() < count {
            let layer = DEPTH_LAYERS[rng.random_range(0..DEPTH_LAYERS.len())];
            let d = (layer + rng.random_range(-DEPTH_JITTER..DEPTH_JITTER)).clamp(0.0, 1.0);
            if depths.iter().all(|&e| (e - d).abs() > 1e-3) {
                depths.push(d);
            }
        }
        SceneSpec {
            seed,
            width,
            height,
            depths,
            focus_depth: 0.0,
        }
    }

    /// Four regions, one at each of the exact [`DEPTH_LAYERS`].
    pub fn layered(seed: u64, width: usize, height: usize) -> Self {
        SceneSpec {
            seed,
            width,
            height,
            depths: DEPTH_LAYERS.to_vec(),
            focus_depth: 0.0,
        }
    }

    pub fn with_depths(seed: u64, width: usize, height: usize, depths: Vec<f32>) -> Self {
        SceneSpec {
            seed,
            width,
            height,
            depths,
            focus_depth: 0.0,
        }
    }

    pub fn regions(&self) -> usize {
        self.depths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BokehError::InvalidParameter(msg));
        if self.width == 0 || self.height == 0 {
            return Err(BokehError::ZeroDimension);
        }
        if !(2..=6).contains(&self.regions()) {
            return bad(format!("scene needs 2 to 6 regions, got {}", self.regions()));
        }
        if self.regions() > self.width * self.height {
            return bad("more regions than pixels".into());
        }
        for (i, &d) in self.depths.iter().enumerate() {
            if !(0.0..=1.0).contains(&d) {
                return bad(format!("region depth {d} outside [0, 1]"));
            }
            if self.depths[..i].contains(&d) {
                return bad(format!("duplicate region depth {d}"));
            }
        }
        if !(0.0..=1.0).contains(&self.focus_depth) {
            return bad(format!("focus depth {} outside [0, 1]", self.focus_depth));
        }
        Ok(())
    }

    /// Focus model used for the ground truth with `levels` levels.
    pub fn focus(&self, levels: usize) -> Result<FocusParams> {
        FocusParams::evenly_spaced(self.focus_depth, levels)
    }
}

/// Region index of every pixel, row-major.
pub fn region_map(spec: &SceneSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let mut sites: Vec<(usize, usize)> = Vec::with_capacity(spec.regions());
    while sites.len() < spec.regions() {
        let s = (rng.random_range(0..w), rng.random_range(0..h));
        if !sites.contains(&s) {
            sites.push(s);
        }
    }
    let mut map = vec![0; w * h];
    for y in 0..h {
        for x in 0..w {
            let dist = |&(sx, sy): &(usize, usize)| {
                let dx = sx as i64 - x as i64;
                let dy = sy as i64 - y as i64;
                dx * dx + dy * dy
            };
            // min_by_key keeps the first minimum: ties go to the lower index.
            map[y * w + x] = (0..sites.len()).min_by_key(|&i| dist(&sites[i])).expect("sites");
        }
    }
    Ok(map)
}

struct Texture {
    base: [f32; 3],
    noise_w: usize,
    noise: Vec<[f32; 3]>,
    shapes: Vec<Shape>,
}

enum Shape {
    Disc {
        cx: f32,
        cy: f32,
        r: f32,
        color: [f32; 3],
    },
    Rect {
        x0: f32,
        y0: f32,
        x1: f32,
        y1: f32,
        color: [f32; 3],
    },
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Self {
        let color = |rng: &mut ChaCha8Rng| [0; 3].map(|_: i32| rng.random_range(0.15..0.85f32));
        let base = color(rng);
        let noise_w = w / NOISE_CELL + 2;
        let noise_h = h / NOISE_CELL + 2;
        let noise = (0..noise_w * noise_h)
            .map(|_| [0; 3].map(|_: i32| rng.random_range(-1.0..1.0f32)))
            .collect();
        let (wf, hf) = (w as f32, h as f32);
        let shapes = (0..rng.random_range(1..=4))
            .map(|_| {
                let c = color(rng);
                if rng.random::<bool>() {
                    Shape::Disc {
                        cx: rng.random_range(0.0..wf),
                        cy: rng.random_range(0.0..hf),
                        r: rng.random_range(0.03..0.2) * wf.min(hf),
                        color: c,
                    }
                } else {
                    let (x0, y0) = (rng.random_range(0.0..wf), rng.random_range(0.0..hf));
                    Shape::Rect {
                        x0,
                        y0,
                        x1: x0 + rng.random_range(0.05..0.3) * wf,
                        y1: y0 + rng.random_range(0.05..0.3) * hf,
                        color: c,
                    }
                }
            })
            .collect();
        Texture {
            base,
            noise_w,
            noise,
            shapes,
        }
    }

    fn sample(&self, x: usize, y: usize) -> [f32; 3] {
        let (fx, fy) = (
            (x as f32 + 0.5) / NOISE_CELL as f32,
            (y as f32 + 0.5) / NOISE_CELL as f32,
        );
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (tx, ty) = (fx - x0 as f32, fy - y0 as f32);
        let at = |i: usize, j: usize| self.noise[j * self.noise_w + i];
        let (a, b, c, d) = (at(x0, y0), at(x0 + 1, y0), at(x0, y0 + 1), at(x0 + 1, y0 + 1));
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] + tx * (b[k] - a[k]);
            let bottom = c[k] + tx * (d[k] - c[k]);
            out[k] = self.base[k] + NOISE_AMPLITUDE * (top + ty * (bottom - top));
        }
        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
        for shape in &self.shapes {
            match *shape {
                Shape::Disc { cx, cy, r, color } if (px - cx).powi(2) + (py - cy).powi(2) <= r * r => out = color,
                Shape::Rect { x0, y0, x1, y1, color } if px >= x0 && px < x1 && py >= y0 && py < y1 => out = color,
                _ => {}
            }
        }
        out.map(|v| v.clamp(0.0, 1.0))
    }
}

/// Renders the scene image and its piecewise-constant depth map.
pub fn gen_scene(spec: &SceneSpec) -> Result<(Image, DepthMap)> {
    let regions = region_map(spec)?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(2);
    let textures: Vec<Texture> = (0..spec.regions()).map(|_| Texture::random(&mut rng, w, h)).collect();
    let mut img = Image::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            let rgb = textures[regions[y * w + x]].sample(x, y);
            for (c, v) in rgb.into_iter().enumerate() {
                img.set(c, x, y, v);
            }
        }
    }
    let depth = DepthMap::new(w, h, regions.iter().map(|&r| spec.depths[r]).collect())?;
    Ok((img, depth))
}

/// Ground truth: the blend under one-hot weights of the focus model.
pub fn gen_bokeh_gt(img: &Image, depth: &DepthMap, focus: &FocusParams, sizes: &[usize]) -> Result<Image> {
    if focus.levels() != sizes.len() + 1 {
        return Err(BokehError::LevelMismatch {
            expected: sizes.len() + 1,
            actual: focus.levels(),
        });
    }
    depth.ensure_matches(img)?;
    let weights = hard_weights(depth, focus)?;
    let stack = blur_stack(img, sizes)?;
    blend(img, &stack, &weights)
}

/// Scene plus ground truth, with the image quantized to 8 bits and the
/// depth to 16 bits first (matching what [`write_dataset`] stores).
pub fn gen_sample(spec: &SceneSpec, sizes: &[usize]) -> Result<SamplePair> {
    let (img, depth) = gen_scene(spec)?;
    let img = Image::from_raw(
        img.width(),
        img.height(),
        3,
        img.data().iter().map(|&v| quantize8(v) as f32 / 255.0).collect(),
    );
    let depth = DepthMap::new(
        depth.width(),
        depth.height(),
        depth.values().iter().map(|&v| quantize16(v) as f32 / 65535.0).collect(),
    )?;
    let target = gen_bokeh_gt(&img, &depth, &spec.focus(sizes.len() + 1)?, sizes)?;
    SamplePair::new(img, depth, target)
}

/// Per-scene seeds derived from a dataset seed.
pub fn scene_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random()).collect()
}

/// `count` random scenes.
pub fn random_set(count: usize, seed: u64, width: usize, height: usize, sizes: &[usize]) -> Result<Vec<SamplePair>> {
    scene_seeds(seed, count)
        .into_par_iter()
        .map(|s| gen_sample(&SceneSpec::random(s, width, height), sizes))
        .collect()
}

/// `count` four-layer scenes at the exact [`DEPTH_LAYERS`].
pub fn layered_set(count: usize, seed: u64, width: usize, height: usize, sizes: &[usize]) -> Result<Vec<SamplePair>> {
    scene_seeds(seed, count)
        .into_par_iter()
        .map(|s| gen_sample(&SceneSpec::layered(s, width, height), sizes))
        .collect()
}

pub const MANIFEST: &str = "manifest.txt";

fn file_name(i: usize) -> String {
    format!("{i:04}.png")
}

/// Writes `count` random scenes under `dir`. On failure nothing written by
/// this call is left behind.
pub fn write_dataset(dir: &Path, count: usize, seed: u64, width: usize, height: usize, sizes: &[usize]) -> Result<()> {
    let subdirs = ["input", "depth", "target"].map(|s| dir.join(s));
    let created: Vec<PathBuf> = subdirs.iter().filter(|d| !d.exists()).cloned().collect();
    let result = write_dataset_inner(dir, count, seed, width, height, sizes);
    if result.is_err() {
        for i in 0..count {
            for d in &subdirs {
                let _ = fs::remove_file(d.join(file_name(i)));
            }
        }
        let _ = fs::remove_file(dir.join(MANIFEST));
        for d in created {
            let _ = fs::remove_dir(d);
        }
    }
    result
}

fn write_dataset_inner(
    dir: &Path,
    count: usize,
    seed: u64,
    width: usize,
    height: usize,
    sizes: &[usize],
) -> Result<()> {
    for sub in ["input", "depth", "target"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| BokehError::io(&d, e))?;
    }
    let seeds = scene_seeds(seed, count);
    let specs: Vec<SceneSpec> = seeds.iter().map(|&s| SceneSpec::random(s, width, height)).collect();
    specs.par_iter().enumerate().try_for_each(|(i, spec)| -> Result<()> {
        let sample = gen_sample(spec, sizes)?;
        let name = file_name(i);
        save_image(&sample.input, dir.join("input").join(&name))?;
        save_depth16(&sample.depth, dir.join("depth").join(&name))?;
        save_image(&sample.target, dir.join("target").join(&name))
    })?;

    let mut manifest = String::new();
    let ks: Vec<String> = sizes.iter().map(|k| k.to_string()).collect();
    let centers = FocusParams::evenly_spaced(0.0, sizes.len() + 1)?.level_centers;
    let cs: Vec<String> = centers.iter().map(|c| format!("{c:.6}")).collect();
    let _ = writeln!(manifest, "seed={seed}");
    let _ = writeln!(manifest, "size={width}x{height}");
    let _ = writeln!(manifest, "kernels={}", ks.join(","));
    let _ = writeln!(manifest, "level_centers={}", cs.join(","));
    let _ = writeln!(manifest, "# file scene_seed focus_depth region_depths");
    for (i, spec) in specs.iter().enumerate() {
        let ds: Vec<String> = spec.depths.iter().map(|d| format!("{d:.6}")).collect();
        let _ = writeln!(
            manifest,
            "{} {} {} {}",
            file_name(i),
            spec.seed,
            spec.focus_depth,
            ds.join(",")
        );
    }
    crate::io::write_file(&dir.join(MANIFEST), manifest.as_bytes())
}

/// Loads every `input/*.png` with its `depth/` and `target/` counterparts,
/// sorted by file name.
pub fn load_dataset(dir: &Path) -> Result<Vec<(String, SamplePair)>> {
    let input_dir = dir.join("input");
    let mut names: Vec<String> = fs::read_dir(&input_dir)
        .map_err(|e| BokehError::io(&input_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(BokehError::EmptyDataset);
    }
    names
        .into_par_iter()
        .map(|name| {
            let input = load_image(input_dir.join(&name))?;
            let depth = load_depth(dir.join("depth").join(&name))?;
            let target = load_image(dir.join("target").join(&name))?;
            Ok((name, SamplePair::new(input, depth, target)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blur::gaussian_blur;

    #[test]
    fn scenes_are_deterministic() {
        let spec = SceneSpec::random(7, 40, 30);
        assert_eq!(gen_scene(&spec).unwrap(), gen_scene(&spec).unwrap());
        assert_ne!(
            gen_scene(&spec).unwrap().0,
            gen_scene(&SceneSpec::random(8, 40, 30)).unwrap().0
        );
    }

    #[test]
    fn depth_uses_region_values_only() {
        for seed in 0..20 {
            let spec = SceneSpec::random(seed, 32, 24);
            spec.validate().unwrap();
            let (img, depth) = gen_scene(&spec).unwrap();
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let mut seen: Vec<f32> = depth.values().to_vec();
            seen.sort_by(f32::total_cmp);
            seen.dedup();
            let mut want = spec.depths.clone();
            want.sort_by(f32::total_cmp);
            assert_eq!(seen, want, "every region is nonempty");
        }
    }

    #[test]
    fn two_regions_give_two_depth_bins() {
        let spec = SceneSpec::with_depths(3, 16, 16, vec![0.0, 1.0]);
        let (_, depth) = gen_scene(&spec).unwrap();
        let near = depth.values().iter().filter(|&&d| d == 0.0).count();
        let far = depth.values().iter().filter(|&&d| d == 1.0).count();
        assert!(near > 0 && far > 0);
        assert_eq!(near + far, 256);
    }

    #[test]
    fn invalid_specs() {
        assert!(gen_scene(&SceneSpec::with_depths(0, 8, 8, vec![0.5])).is_err());
        assert!(gen_scene(&SceneSpec::with_depths(0, 8, 8, vec![0.5, 0.5])).is_err());
        assert!(gen_scene(&SceneSpec::with_depths(0, 8, 8, vec![0.0, 1.5])).is_err());
        assert!(gen_scene(&SceneSpec::with_depths(0, 8, 8, vec![0.0; 7])).is_err());
        assert!(gen_scene(&SceneSpec::with_depths(0, 1, 2, vec![0.0, 0.5, 1.0])).is_err());
    }

    #[test]
    fn in_focus_gt_is_input() {
        let spec = SceneSpec::random(1, 48, 48);
        let (img, _) = gen_scene(&spec).unwrap();
        let depth = DepthMap::constant(48, 48, 0.0);
        let focus = spec.focus(4).unwrap();
        assert_eq!(gen_bokeh_gt(&img, &depth, &focus, &[5, 9, 15]).unwrap(), img);
    }

    #[test]
    fn farthest_gt_is_largest_blur() {
        let spec = SceneSpec::random(2, 48, 48);
        let (img, _) = gen_scene(&spec).unwrap();
        let depth = DepthMap::constant(48, 48, 1.0);
        let focus = spec.focus(4).unwrap();
        let gt = gen_bokeh_gt(&img, &depth, &focus, &[5, 9, 15]).unwrap();
        assert_eq!(gt, gaussian_blur(&img, 15).unwrap());
    }

    #[test]
    fn two_region_gt_is_pixelwise_selection() {
        let spec = SceneSpec::with_depths(4, 40, 40, vec![0.0, 1.0]);
        let (img, depth) = gen_scene(&spec).unwrap();
        let sizes = [5, 9, 15];
        let gt = gen_bokeh_gt(&img, &depth, &spec.focus(4).unwrap(), &sizes).unwrap();
        let far = gaussian_blur(&img, 15).unwrap();
        for y in 0..40 {
            for x in 0..40 {
                let src = if depth.get(x, y) == 0.0 { &img } else { &far };
                for c in 0..3 {
                    assert_eq!(gt.get(c, x, y), src.get(c, x, y));
                }
            }
        }
    }

    #[test]
    fn layered_scene_uses_every_level() {
        let s = gen_sample(&SceneSpec::layered(5, 32, 32), &[3, 5, 7]).unwrap();
        let mut seen: Vec<u16> = s.depth.values().iter().map(|&d| quantize16(d)).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen, vec![0, 21845, 43690, 65535]);
    }

    #[test]
    fn dataset_round_trip_reproduces_targets() {
        let dir = tempfile::tempdir().unwrap();
        let sizes = [3, 5, 9];
        write_dataset(dir.path(), 3, 11, 24, 20, &sizes).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded[0].0, "0000.png");
        for (_, s) in &loaded {
            let focus = FocusParams::evenly_spaced(0.0, 4).unwrap();
            let gt = gen_bokeh_gt(&s.input, &s.depth, &focus, &sizes).unwrap();
            let requantized: Vec<u8> = gt.data().iter().map(|&v| quantize8(v)).collect();
            let stored: Vec<u8> = s.target.data().iter().map(|&v| quantize8(v)).collect();
            assert_eq!(requantized, stored);
        }
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(manifest.contains("kernels=3,5,9"));
        assert_eq!(
            manifest
                .lines()
                .filter(|l| l.ends_with("png") || l.contains(".png "))
                .count(),
            3
        );

        let again = tempfile::tempdir().unwrap();
        write_dataset(again.path(), 3, 11, 24, 20, &sizes).unwrap();
        for sub in ["input/0001.png", "depth/0002.png", "target/0000.png", MANIFEST] {
            assert_eq!(
                fs::read(dir.path().join(sub)).unwrap(),
                fs::read(again.path().join(sub)).unwrap()
            );
        }
    }

    #[test]
    fn missing_counterpart_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), 2, 1, 16, 16, &[3]).unwrap();
        fs::remove_file(dir.path().join("target/0001.png")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("0001.png"), "{err}");
    }

    #[test]
    fn failed_write_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        // 3x3 is too small for a 75 kernel.
        assert!(write_dataset(dir.path(), 2, 1, 3, 3, &[75]).is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
