//! Procedural multi-object scenes with ground-truth masks.
//!
//! Scenes place a handful of flat-colored sprites (tetromino pieces, squares,
//! hearts, ovals) on a solid background, recording a per-pixel label map with
//! 0 for background and 1..K for objects in draw order (later objects occlude
//! earlier ones, and labels follow the visible surface). A palette smaller
//! than the object count forces color collisions, which is the interesting
//! regime for phase-based grouping: color alone cannot separate the objects.
//!
//! On disk a dataset is a directory of binary PPM (P6) images and PGM (P5)
//! label masks plus a JSON manifest; 8-bit quantization on write, /255 on
//! read.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Sprite shapes: the five tetromino pieces plus dSprites-style extras.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    TetroI,
    TetroL,
    TetroT,
    TetroS,
    TetroO,
    Square,
    Heart,
    Oval,
}

impl ShapeKind {
    pub const TETROMINOES: [ShapeKind; 5] =
        [ShapeKind::TetroI, ShapeKind::TetroL, ShapeKind::TetroT, ShapeKind::TetroS, ShapeKind::TetroO];

    pub const ALL: [ShapeKind; 8] = [
        ShapeKind::TetroI,
        ShapeKind::TetroL,
        ShapeKind::TetroT,
        ShapeKind::TetroS,
        ShapeKind::TetroO,
        ShapeKind::Square,
        ShapeKind::Heart,
        ShapeKind::Oval,
    ];
}

/// Scene generation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub shapes: Vec<ShapeKind>,
    /// Object colors are drawn from this palette with replacement, so a
    /// palette smaller than the object count forces shared colors.
    pub palette: Vec<[f32; 3]>,
    /// Integer sprite scale (cell size in pixels), sampled uniformly.
    pub scale_range: (usize, usize),
    pub allow_overlap: bool,
    pub background: [f32; 3],
    pub grayscale: bool,
    pub seed: u64,
}

impl SceneSpec {
    /// Tetromino-style default: colored pieces on black. Sprite scale grows
    /// with the canvas so several pieces always fit disjointly.
    pub fn tetrominoes(extent: usize, objects: usize, seed: u64) -> Self {
        let scale_range = match extent {
            0..=23 => (2, 2),
            24..=47 => (2, 3),
            _ => (3, 5),
        };
        SceneSpec {
            height: extent,
            width: extent,
            k_min: objects,
            k_max: objects,
            shapes: ShapeKind::TETROMINOES.to_vec(),
            palette: vec![
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [1.0, 1.0, 0.0],
                [1.0, 0.0, 1.0],
                [0.0, 1.0, 1.0],
            ],
            scale_range,
            allow_overlap: false,
            background: [0.0, 0.0, 0.0],
            grayscale: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_min < 1 || self.k_max < self.k_min {
            return Err(Error::config("object count range must satisfy 1 <= k_min <= k_max"));
        }
        if self.palette.is_empty() {
            return Err(Error::config("palette must not be empty"));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::config("canvas extent must be at least 16"));
        }
        if self.shapes.is_empty() {
            return Err(Error::config("shape library must not be empty"));
        }
        if self.scale_range.0 < 1 || self.scale_range.1 < self.scale_range.0 {
            return Err(Error::config("scale range must satisfy 1 <= lo <= hi"));
        }
        Ok(())
    }
}

/// One rendered scene: RGB image in [0,1] plus per-pixel object labels
/// (0 = background, 1..K = objects).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub height: usize,
    pub width: usize,
    /// `[H, W, 3]` row-major, values in [0, 1].
    pub image: Vec<f32>,
    /// `[H, W]` row-major.
    pub labels: Vec<u16>,
    pub k: usize,
}

impl SceneSample {
    pub fn label(&self, h: usize, w: usize) -> u16 {
        self.labels[h * self.width + w]
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

/// Rec.601 luminance.
pub fn luminance(rgb: [f32; 3]) -> f32 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

/// Bitmask of a shape at integer cell scale `s`. Tetromino cells blow up to
/// s x s blocks; the curved shapes rasterize implicit equations on a grid
/// proportional to `s`.
fn shape_mask(kind: ShapeKind, s: usize) -> (usize, usize, Vec<bool>) {
    let cells: &[&[u8]] = match kind {
        ShapeKind::TetroI => &[&[1, 1, 1, 1]],
        ShapeKind::TetroL => &[&[1, 0], &[1, 0], &[1, 1]],
        ShapeKind::TetroT => &[&[1, 1, 1], &[0, 1, 0]],
        ShapeKind::TetroS => &[&[0, 1, 1], &[1, 1, 0]],
        ShapeKind::TetroO => &[&[1, 1], &[1, 1]],
        _ => &[],
    };
    if !cells.is_empty() {
        let (ch, cw) = (cells.len(), cells[0].len());
        let (h, w) = (ch * s, cw * s);
        let mut mask = vec![false; h * w];
        for (ci, row) in cells.iter().enumerate() {
            for (cj, &v) in row.iter().enumerate() {
                if v == 1 {
                    for di in 0..s {
                        for dj in 0..s {
                            mask[(ci * s + di) * w + cj * s + dj] = true;
                        }
                    }
                }
            }
        }
        return (h, w, mask);
    }
    match kind {
        ShapeKind::Square => {
            let e = 2 * s;
            (e, e, vec![true; e * e])
        }
        ShapeKind::Oval => {
            let (h, w) = (2 * s, 3 * s);
            let (a, b) = (w as f64 / 2.0, h as f64 / 2.0);
            let mut mask = vec![false; h * w];
            for i in 0..h {
                for j in 0..w {
                    let y = (i as f64 + 0.5 - b) / b;
                    let x = (j as f64 + 0.5 - a) / a;
                    mask[i * w + j] = x * x + y * y <= 1.0;
                }
            }
            (h, w, mask)
        }
        ShapeKind::Heart => {
            // (x^2 + y^2 - 1)^3 - x^2 y^3 <= 0, y up.
            let e = 3 * s;
            let mut mask = vec![false; e * e];
            for i in 0..e {
                for j in 0..e {
                    let x = 2.6 * (j as f64 + 0.5) / e as f64 - 1.3;
                    let y = 2.6 * (1.0 - (i as f64 + 0.5) / e as f64) - 1.2;
                    let q = x * x + y * y - 1.0;
                    mask[i * e + j] = q * q * q - x * x * y * y * y <= 0.0;
                }
            }
            (e, e, mask)
        }
        _ => unreachable!("tetrominoes handled above"),
    }
}

/// Generate one scene. Objects are placed uniformly at random; with overlap
/// disallowed, placement retries a bounded number of times before failing
/// with the seed in the error.
pub fn generate_scene(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<SceneSample> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let k = rng.gen_range(spec.k_min..=spec.k_max);
    let mut image = vec![0f32; h * w * 3];
    for px in 0..h * w {
        image[px * 3..px * 3 + 3].copy_from_slice(&spec.background);
    }
    let mut labels = vec![0u16; h * w];

    const MAX_TRIES: usize = 200;
    for obj in 1..=k as u16 {
        let shape = spec.shapes[rng.gen_range(0..spec.shapes.len())];
        let scale = rng.gen_range(spec.scale_range.0..=spec.scale_range.1);
        let color = spec.palette[rng.gen_range(0..spec.palette.len())];
        let (mh, mw, mask) = shape_mask(shape, scale);
        if mh > h || mw > w {
            return Err(Error::Generation(format!(
                "shape {shape:?} at scale {scale} exceeds the {h}x{w} canvas (seed {})",
                spec.seed
            )));
        }
        let mut placed = false;
        for _ in 0..MAX_TRIES {
            let top = rng.gen_range(0..=h - mh);
            let left = rng.gen_range(0..=w - mw);
            let collision = !spec.allow_overlap
                && mask
                    .iter()
                    .enumerate()
                    .any(|(mi, &on)| on && labels[(top + mi / mw) * w + left + mi % mw] != 0);
            if collision {
                continue;
            }
            for (mi, &on) in mask.iter().enumerate() {
                if on {
                    let px = (top + mi / mw) * w + left + mi % mw;
                    labels[px] = obj;
                    image[px * 3..px * 3 + 3].copy_from_slice(&color);
                }
            }
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place object {obj} of {k} after {MAX_TRIES} tries (seed {})",
                spec.seed
            )));
        }
    }

    // Occlusion can erase earlier objects entirely; relabel to keep ids
    // contiguous with every id visible.
    let mut seen = vec![false; k + 1];
    for &l in &labels {
        seen[l as usize] = true;
    }
    let mut remap = vec![0u16; k + 1];
    let mut next = 0u16;
    for (old, &s) in seen.iter().enumerate().skip(1) {
        if s {
            next += 1;
            remap[old] = next;
        }
    }
    if next as usize != k {
        for l in labels.iter_mut() {
            *l = remap[*l as usize];
        }
    }
    let k = next as usize;

    if spec.grayscale {
        for px in 0..h * w {
            let y = luminance([image[px * 3], image[px * 3 + 1], image[px * 3 + 2]]);
            image[px * 3] = y;
            image[px * 3 + 1] = y;
            image[px * 3 + 2] = y;
        }
    }
    Ok(SceneSample { height: h, width: w, image, labels, k })
}

/// Generate `count` scenes; sample `i` uses the stream `spec.seed + i`, so
/// datasets are reproducible and parallel-friendly.
pub fn generate_dataset(spec: &SceneSpec, count: usize) -> Result<Vec<SceneSample>> {
    (0..count)
        .map(|i| {
            let mut rng = rng_for(spec.seed, i as u64);
            generate_scene(spec, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub spec: SceneSpec,
    pub seed: u64,
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a binary PPM (P6).
pub fn write_ppm(path: &Path, height: usize, width: usize, rgb01: &[f32]) -> Result<()> {
    debug_assert_eq!(rgb01.len(), height * width * 3);
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P6\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = rgb01.iter().map(|&v| quantize(v)).collect();
    f.write_all(&bytes)?;
    Ok(())
}

/// Write a binary PGM (P5) label mask.
pub fn write_pgm(path: &Path, height: usize, width: usize, labels: &[u16]) -> Result<()> {
    debug_assert_eq!(labels.len(), height * width);
    if let Some(&too_big) = labels.iter().find(|&&l| l > 255) {
        return Err(Error::format(format!("label {too_big} exceeds the 8-bit PGM range")));
    }
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = labels.iter().map(|&l| l as u8).collect();
    f.write_all(&bytes)?;
    Ok(())
}

fn read_netpbm_header(r: &mut impl BufRead, magic: &str) -> Result<(usize, usize)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != magic {
        return Err(Error::format(format!("expected {magic} header, got {:?}", line.trim())));
    }
    // Dimensions line, then maxval line (comments are not emitted by us).
    let mut dims = String::new();
    r.read_line(&mut dims)?;
    let mut it = dims.split_whitespace();
    let w: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::format("bad netpbm dimensions".to_string()))?;
    let h: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::format("bad netpbm dimensions".to_string()))?;
    let mut maxval = String::new();
    r.read_line(&mut maxval)?;
    if maxval.trim() != "255" {
        return Err(Error::format(format!("unsupported netpbm maxval {:?}", maxval.trim())));
    }
    Ok((h, w))
}

pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let (h, w) = read_netpbm_header(&mut r, "P6")?;
    let mut bytes = vec![0u8; h * w * 3];
    r.read_exact(&mut bytes)?;
    Ok((h, w, bytes.iter().map(|&b| b as f32 / 255.0).collect()))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let (h, w) = read_netpbm_header(&mut r, "P5")?;
    let mut bytes = vec![0u8; h * w];
    r.read_exact(&mut bytes)?;
    Ok((h, w, bytes.iter().map(|&b| b as u16).collect()))
}

fn scene_name(i: usize) -> String {
    format!("scene_{i:06}.ppm")
}

fn mask_name(i: usize) -> String {
    format!("mask_{i:06}.pgm")
}

/// Write samples plus manifest into a directory (`scene_%06d.ppm`,
/// `mask_%06d.pgm`, `manifest.json`).
pub fn write_dataset(samples: &[SceneSample], spec: &SceneSpec, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, s) in samples.iter().enumerate() {
        write_ppm(&dir.join(scene_name(i)), s.height, s.width, &s.image)?;
        write_pgm(&dir.join(mask_name(i)), s.height, s.width, &s.labels)?;
    }
    let manifest = Manifest {
        count: samples.len(),
        height: spec.height,
        width: spec.width,
        spec: spec.clone(),
        seed: spec.seed,
    };
    let f = std::fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &manifest).map_err(|e| Error::format(e.to_string()))?;
    Ok(())
}

/// Read a dataset directory back; the manifest count must match the files
/// present.
pub fn read_dataset(dir: &Path) -> Result<(Vec<SceneSample>, Manifest)> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::format(format!("no manifest.json in {}", dir.display())));
    }
    let manifest: Manifest =
        serde_json::from_reader(BufReader::new(std::fs::File::open(&manifest_path)?)).map_err(|e| Error::format(e.to_string()))?;
    let mut samples = Vec::with_capacity(manifest.count);
    for i in 0..manifest.count {
        let (scene, mask) = (dir.join(scene_name(i)), dir.join(mask_name(i)));
        if !scene.exists() || !mask.exists() {
            return Err(Error::format(format!(
                "manifest declares {} samples but sample {i} is missing",
                manifest.count
            )));
        }
        let (h, w, image) = read_ppm(&scene)?;
        let (mh, mw, labels) = read_pgm(&mask)?;
        if (h, w) != (mh, mw) {
            return Err(Error::format(format!("sample {i}: image is {h}x{w} but mask is {mh}x{mw}")));
        }
        let k = labels.iter().copied().max().unwrap_or(0) as usize;
        samples.push(SceneSample { height: h, width: w, image, labels, k });
    }
    Ok((samples, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_dir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("syncx-datagen-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn fixed_object_count_without_overlap() {
        let spec = SceneSpec::tetrominoes(24, 3, 7);
        for i in 0..20 {
            let mut rng = rng_for(spec.seed, i);
            let s = generate_scene(&spec, &mut rng).unwrap();
            assert_eq!(s.k, 3);
            for id in 1..=3u16 {
                assert!(s.labels.iter().any(|&l| l == id), "object {id} missing in sample {i}");
            }
            // Overlap off: label 0 pixels keep the background color.
            for px in 0..24 * 24 {
                if s.labels[px] == 0 {
                    assert_eq!(&s.image[px * 3..px * 3 + 3], &[0.0, 0.0, 0.0]);
                } else {
                    assert_ne!(&s.image[px * 3..px * 3 + 3], &[0.0, 0.0, 0.0]);
                }
            }
        }
    }

    #[test]
    fn grayscale_uses_rec601() {
        let mut spec = SceneSpec::tetrominoes(24, 1, 3);
        spec.palette = vec![[1.0, 0.0, 0.0]];
        spec.grayscale = true;
        let mut rng = rng_for(spec.seed, 0);
        let s = generate_scene(&spec, &mut rng).unwrap();
        let px = s.labels.iter().position(|&l| l == 1).unwrap();
        for c in 0..3 {
            assert!((s.image[px * 3 + c] - 0.299).abs() < 1e-6);
        }
        // r == g == b everywhere.
        for px in 0..24 * 24 {
            assert_eq!(s.image[px * 3], s.image[px * 3 + 1]);
            assert_eq!(s.image[px * 3], s.image[px * 3 + 2]);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SceneSpec::tetrominoes(32, 3, 11);
        let a = generate_dataset(&spec, 5).unwrap();
        let b = generate_dataset(&spec, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_color_palette_forces_shared_colors() {
        let mut spec = SceneSpec::tetrominoes(24, 3, 13);
        spec.palette = vec![[0.0, 0.4, 1.0]];
        let mut rng = rng_for(spec.seed, 0);
        let s = generate_scene(&spec, &mut rng).unwrap();
        for px in 0..24 * 24 {
            if s.labels[px] != 0 {
                assert_eq!(&s.image[px * 3..px * 3 + 3], &[0.0, 0.4, 1.0]);
            }
        }
    }

    #[test]
    fn occlusion_keeps_visible_surface_labels() {
        let mut spec = SceneSpec::tetrominoes(24, 3, 17);
        spec.allow_overlap = true;
        // Count label/image consistency under occlusion: foreground labels
        // must partition non-background pixels of the paint order.
        for i in 0..10 {
            let mut rng = rng_for(spec.seed, i);
            let s = generate_scene(&spec, &mut rng).unwrap();
            assert!(s.k >= 1 && s.k <= 3);
            for id in 1..=s.k as u16 {
                assert!(s.labels.iter().any(|&l| l == id), "id {id} invisible but not relabeled");
            }
        }
    }

    #[test]
    fn all_shapes_rasterize_nonempty() {
        for kind in ShapeKind::ALL {
            let (h, w, mask) = shape_mask(kind, 3);
            assert!(h > 0 && w > 0);
            let filled = mask.iter().filter(|&&b| b).count();
            assert!(filled > 0, "{kind:?} rasterized empty");
            // A sprite should fill a reasonable portion of its bounding box.
            assert!(filled * 8 >= h * w, "{kind:?} too sparse: {filled}/{}", h * w);
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = temp_dir("roundtrip");
        let spec = SceneSpec::tetrominoes(24, 3, 21);
        let samples = generate_dataset(&spec, 10).unwrap();
        write_dataset(&samples, &spec, &dir).unwrap();
        let (back, manifest) = read_dataset(&dir).unwrap();
        assert_eq!(manifest.count, 10);
        assert_eq!(back.len(), 10);
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.k, b.k);
            // Images equal after 8-bit quantization.
            for (x, y) in a.image.iter().zip(&b.image) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
        // Round-trip of already-quantized data is lossless.
        write_dataset(&back, &spec, &dir).unwrap();
        let (again, _) = read_dataset(&dir).unwrap();
        for (a, b) in back.iter().zip(&again) {
            assert_eq!(a.image, b.image);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn read_errors() {
        let dir = temp_dir("errors");
        // Empty directory: error, not an empty dataset.
        assert!(matches!(read_dataset(&dir), Err(Error::Format(_))));

        // Manifest declares more samples than present.
        let spec = SceneSpec::tetrominoes(24, 2, 31);
        let samples = generate_dataset(&spec, 4).unwrap();
        write_dataset(&samples, &spec, &dir).unwrap();
        std::fs::remove_file(dir.join(scene_name(3))).unwrap();
        let err = read_dataset(&dir).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn placement_failure_names_seed() {
        let mut spec = SceneSpec::tetrominoes(16, 9, 12345);
        spec.k_max = 9;
        spec.k_min = 9;
        spec.scale_range = (4, 4);
        let mut rng = rng_for(spec.seed, 0);
        // Nine 16x16-ish sprites cannot fit disjointly on a 16x16 canvas.
        let err = generate_scene(&spec, &mut rng).unwrap_err();
        assert!(err.to_string().contains("12345"), "error should name the seed: {err}");
    }
}
