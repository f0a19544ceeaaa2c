//! Procedurally generated captioned-shapes corpus: a desk-scale stand-in for
//! photographic caption datasets. Every image is one flat-colored shape on a
//! plain background, drawn with an exact integer-center coverage test (no
//! anti-aliasing), so the whole directory tree is a pure function of
//! (seed, count, res).
//!
//! Quadrant anchors sit at 3/8 and 5/8 of the side rather than the quarter
//! points so the largest size (radius 0.35 of the side) stays fully inside
//! the canvas at every position.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sigl_core::rng::{Domain, StreamRng};
use sigl_core::tensor::Tensor;
use sigl_core::text::fnv1a64;

use crate::ppm::{image_to_tensor, PpmImage};

pub const SHAPES: [&str; 4] = ["circle", "square", "triangle", "cross"];
pub const COLORS: [(&str, [u8; 3]); 8] = [
    ("red", [255, 0, 0]),
    ("green", [0, 200, 0]),
    ("blue", [0, 64, 255]),
    ("yellow", [255, 220, 0]),
    ("cyan", [0, 210, 210]),
    ("magenta", [230, 0, 230]),
    ("orange", [255, 140, 0]),
    ("purple", [140, 0, 220]),
];
pub const SIZES: [(&str, f64); 3] = [("small", 0.15), ("medium", 0.25), ("large", 0.35)];
/// (name, center x, center y) as fractions of the side.
pub const POSITIONS: [(&str, f64, f64); 5] = [
    ("center", 0.5, 0.5),
    ("top left", 0.375, 0.375),
    ("top right", 0.625, 0.375),
    ("bottom left", 0.375, 0.625),
    ("bottom right", 0.625, 0.625),
];
pub const BACKGROUNDS: [(&str, [u8; 3]); 3] = [
    ("white", [255, 255, 255]),
    ("black", [0, 0, 0]),
    ("gray", [128, 128, 128]),
];

/// Ten caption templates with varied syntax and attribute order; each
/// mentions the color exactly once and nothing beyond the label's own words.
const TEMPLATES: [&str; 10] = [
    "a {size} {color} {shape} in the {position}",
    "this image shows a {color} {shape}",
    "the {shape} is {color} and {size}",
    "a {color} {shape} on a {background} background",
    "the {position} of the picture holds a {size} {color} {shape}",
    "a {shape} colored {color} sits at the {position}",
    "one {size} {color} {shape}",
    "a {color} {shape} against a {background} backdrop",
    "the picture contains a {size} {shape} that is {color}",
    "a simple {color} {shape} drawing",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub shape: usize,
    pub color: usize,
    pub size: usize,
    pub position: usize,
    pub background: usize,
}

impl ShapeSpec {
    /// Uniform draw from the product space; five bounded draws in field
    /// order (shape, color, size, position, background).
    pub fn sample(rng: &mut StreamRng) -> Self {
        ShapeSpec {
            shape: rng.below(SHAPES.len()),
            color: rng.below(COLORS.len()),
            size: rng.below(SIZES.len()),
            position: rng.below(POSITIONS.len()),
            background: rng.below(BACKGROUNDS.len()),
        }
    }

    pub fn captions(&self) -> Vec<String> {
        let (shape, color, size) = (
            SHAPES[self.shape],
            COLORS[self.color].0,
            SIZES[self.size].0,
        );
        let position = POSITIONS[self.position].0;
        let background = BACKGROUNDS[self.background].0;
        TEMPLATES
            .iter()
            .map(|t| {
                t.replace("{shape}", shape)
                    .replace("{color}", color)
                    .replace("{size}", size)
                    .replace("{position}", position)
                    .replace("{background}", background)
            })
            .collect()
    }

    /// Class id for the surrogate-classifier label space (color × shape).
    pub fn class(&self) -> usize {
        sigl_core::metrics::class_id(self.color, self.shape, SHAPES.len())
    }
}

#[derive(Debug)]
pub enum DataError {
    Io(std::io::Error),
    Geometry(String),
    Record { image_id: u64, problem: String },
    Manifest(String),
}

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataError::Io(e) => write!(f, "dataset io: {e}"),
            DataError::Geometry(s) => write!(f, "impossible geometry: {s}"),
            DataError::Record { image_id, problem } => {
                write!(f, "record {image_id:06}: {problem}")
            }
            DataError::Manifest(s) => write!(f, "manifest: {s}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e)
    }
}

/// Rasterize a spec. Pixel (x, y) is treated as the point (x, y) itself and
/// painted the foreground color exactly when it lies inside the analytic
/// region.
pub fn render_shape(spec: &ShapeSpec, res: usize) -> Result<PpmImage, DataError> {
    if res < 8 {
        return Err(DataError::Geometry(format!("resolution {res} below 8")));
    }
    let side = res as f64;
    let (_, fx, fy) = POSITIONS[spec.position];
    let (cx, cy) = (fx * side, fy * side);
    let r = SIZES[spec.size].1 * side;
    // pixel (x, y) covers [x, x+1) × [y, y+1), so the canvas spans [0, side]
    if cx - r < 0.0 || cy - r < 0.0 || cx + r > side || cy + r > side {
        return Err(DataError::Geometry(format!(
            "radius {r} at ({cx}, {cy}) leaves the {res}px canvas"
        )));
    }
    let fg = COLORS[spec.color].1;
    let bg = BACKGROUNDS[spec.background].1;

    let inside = |x: f64, y: f64| -> bool {
        let (dx, dy) = (x - cx, y - cy);
        match SHAPES[spec.shape] {
            "circle" => dx * dx + dy * dy <= r * r,
            "square" => dx.abs() <= r && dy.abs() <= r,
            "triangle" => {
                // isoceles: apex (cx, cy−r), base corners (cx±r, cy+r)
                if dy < -r || dy > r {
                    return false;
                }
                // width grows linearly from 0 at the apex to r at the base
                let half_width = (dy + r) / 2.0;
                dx.abs() <= half_width
            }
            "cross" => {
                let third = r / 3.0;
                (dx.abs() <= r && dy.abs() <= third) || (dy.abs() <= r && dx.abs() <= third)
            }
            other => unreachable!("unknown shape {other}"),
        }
    };

    let mut img = PpmImage::new(res, res);
    for y in 0..res {
        for x in 0..res {
            // a pixel is foreground when the shape covers its center
            let c = if inside(x as f64 + 0.5, y as f64 + 0.5) {
                fg
            } else {
                bg
            };
            img.put(x, y, c);
        }
    }
    Ok(img)
}

/// Analytic foreground area of a spec in pixels², for the coverage oracle.
pub fn analytic_area(spec: &ShapeSpec, res: usize) -> f64 {
    let r = SIZES[spec.size].1 * res as f64;
    match SHAPES[spec.shape] {
        "circle" => core::f64::consts::PI * r * r,
        "square" => 4.0 * r * r,
        "triangle" => 2.0 * r * r,
        // two 2r × 2r/3 bars minus their (2r/3)² overlap
        "cross" => 20.0 * r * r / 9.0,
        other => unreachable!("unknown shape {other}"),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_id: u64,
    pub path: String,
    pub spec: ShapeSpec,
    pub captions: Vec<String>,
    /// FNV-1a of the image file's bytes.
    pub checksum: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: String,
    pub seed: u64,
    pub res: usize,
    pub records: Vec<ManifestRecord>,
}

/// Generate `count` images under `dir` (created if needed): images/NNNNNN.ppm,
/// captions.tsv, manifest.json. Image ids start at `first_id` so a test split
/// can continue the train split's counter-keyed rng indices without overlap.
pub fn synth_generate(
    count: usize,
    res: usize,
    seed: u64,
    first_id: u64,
    split: &str,
    dir: &Path,
) -> Result<DatasetManifest, DataError> {
    if count == 0 {
        return Err(DataError::Manifest("count must be at least 1".into()));
    }
    fs::create_dir_all(dir.join("images"))?;
    let mut records = Vec::with_capacity(count);
    let mut tsv = String::new();
    for i in 0..count {
        let image_id = first_id + i as u64;
        let mut rng = StreamRng::new(seed, Domain::DataGen, image_id);
        let spec = ShapeSpec::sample(&mut rng);
        let img = render_shape(&spec, res)?;
        let rel = format!("images/{image_id:06}.ppm");
        let bytes = img.encode();
        fs::write(dir.join(&rel), &bytes)?;
        let captions = spec.captions();
        for (ci, c) in captions.iter().enumerate() {
            tsv.push_str(&format!("{image_id}\t{ci}\t{c}\n"));
        }
        records.push(ManifestRecord {
            image_id,
            path: rel,
            spec,
            captions,
            checksum: fnv1a64(&bytes),
        });
    }
    fs::write(dir.join("captions.tsv"), tsv)?;
    let manifest = DatasetManifest {
        split: split.to_string(),
        seed,
        res,
        records,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(manifest)
}

/// A loaded split: labels, captions, and images as [−1,1] tensors.
#[derive(Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub dir: PathBuf,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| DataError::Manifest(format!("{}: {e}", manifest_path.display())))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| DataError::Manifest(e.to_string()))?;
        if manifest.records.is_empty() {
            return Err(DataError::Manifest("no records".into()));
        }
        for rec in &manifest.records {
            if rec.captions.len() != 10 {
                return Err(DataError::Record {
                    image_id: rec.image_id,
                    problem: format!("{} captions instead of 10", rec.captions.len()),
                });
            }
            let path = dir.join(&rec.path);
            let bytes = fs::read(&path).map_err(|_| DataError::Record {
                image_id: rec.image_id,
                problem: format!("missing image file {}", rec.path),
            })?;
            if fnv1a64(&bytes) != rec.checksum {
                return Err(DataError::Record {
                    image_id: rec.image_id,
                    problem: "checksum mismatch".into(),
                });
            }
        }
        Ok(Dataset {
            manifest,
            dir: dir.to_path_buf(),
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.records.is_empty()
    }

    /// Decode one image to [3, res, res] in [−1, 1].
    pub fn image(&self, index: usize) -> Result<Tensor<f64>, DataError> {
        let rec = &self.manifest.records[index];
        let img = PpmImage::read_file(&self.dir.join(&rec.path)).map_err(|e| {
            DataError::Record {
                image_id: rec.image_id,
                problem: e.to_string(),
            }
        })?;
        Ok(image_to_tensor(&img))
    }

    /// Count of each attribute value, for the marginal-uniformity oracle.
    pub fn marginals(&self) -> BTreeMap<&'static str, Vec<usize>> {
        let mut m: BTreeMap<&'static str, Vec<usize>> = BTreeMap::new();
        m.insert("shape", vec![0; SHAPES.len()]);
        m.insert("color", vec![0; COLORS.len()]);
        m.insert("size", vec![0; SIZES.len()]);
        m.insert("position", vec![0; POSITIONS.len()]);
        m.insert("background", vec![0; BACKGROUNDS.len()]);
        for r in &self.manifest.records {
            m.get_mut("shape").unwrap()[r.spec.shape] += 1;
            m.get_mut("color").unwrap()[r.spec.color] += 1;
            m.get_mut("size").unwrap()[r.spec.size] += 1;
            m.get_mut("position").unwrap()[r.spec.position] += 1;
            m.get_mut("background").unwrap()[r.spec.background] += 1;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_pixel_of_a_large_red_circle_is_pure_red() {
        let spec = ShapeSpec {
            shape: 0,
            color: 0,
            size: 2,
            position: 0,
            background: 0,
        };
        let img = render_shape(&spec, 32).unwrap();
        assert_eq!(img.get(16, 16), [255, 0, 0]);
        // corner stays background
        assert_eq!(img.get(0, 0), [255, 255, 255]);
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = ShapeSpec {
            shape: 2,
            color: 3,
            size: 1,
            position: 4,
            background: 2,
        };
        let a = render_shape(&spec, 32).unwrap();
        let b = render_shape(&spec, 32).unwrap();
        assert_eq!(a.encode(), b.encode());
    }

    #[test]
    fn foreground_fraction_matches_analytic_area() {
        for shape in 0..SHAPES.len() {
            for size in 0..SIZES.len() {
                let spec = ShapeSpec {
                    shape,
                    color: 1,
                    size,
                    position: 0,
                    background: 1, // black background, no fg/bg confusion
                };
                let img = render_shape(&spec, 64).unwrap();
                let fg = COLORS[1].1;
                let count = (0..64 * 64)
                    .filter(|&i| img.get(i % 64, i / 64) == fg)
                    .count() as f64;
                let area = analytic_area(&spec, 64);
                let rel = (count - area).abs() / area;
                assert!(
                    rel < 0.20,
                    "{} {}: covered {count} vs analytic {area} ({rel:.3})",
                    SHAPES[shape],
                    SIZES[size].0
                );
            }
        }
    }

    #[test]
    fn every_caption_mentions_the_color_exactly_once() {
        for color in 0..COLORS.len() {
            let spec = ShapeSpec {
                shape: 1,
                color,
                size: 0,
                position: 2,
                background: 0,
            };
            for caption in spec.captions() {
                let needle = COLORS[color].0;
                let hits = sigl_core::text::tokenize(&caption)
                    .iter()
                    .filter(|t| t.as_str() == needle)
                    .count();
                assert_eq!(hits, 1, "{caption:?} mentions {needle} {hits} times");
            }
        }
    }

    #[test]
    fn captions_never_mention_absent_attributes() {
        let spec = ShapeSpec {
            shape: 0,
            color: 0,
            size: 0,
            position: 0,
            background: 0,
        };
        let distractors: Vec<&str> = SHAPES[1..]
            .iter()
            .copied()
            .chain(COLORS[1..].iter().map(|c| c.0))
            .chain(SIZES[1..].iter().map(|s| s.0))
            .chain(BACKGROUNDS[1..].iter().map(|b| b.0))
            .chain(POSITIONS[1..].iter().flat_map(|p| p.0.split(' ')))
            .collect();
        for caption in spec.captions() {
            for token in sigl_core::text::tokenize(&caption) {
                assert!(
                    !distractors.contains(&token.as_str()),
                    "{caption:?} mentions distractor {token:?}"
                );
            }
        }
    }

    #[test]
    fn generate_load_roundtrip_and_determinism() {
        let dir_a = std::env::temp_dir().join(format!("sigl-data-a-{}", std::process::id()));
        let dir_b = std::env::temp_dir().join(format!("sigl-data-b-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir_a);
        let _ = fs::remove_dir_all(&dir_b);
        synth_generate(6, 16, 42, 0, "train", &dir_a).unwrap();
        synth_generate(6, 16, 42, 0, "train", &dir_b).unwrap();
        let ma = fs::read(dir_a.join("manifest.json")).unwrap();
        let mb = fs::read(dir_b.join("manifest.json")).unwrap();
        assert_eq!(ma, mb, "manifest bytes differ between identical runs");
        for i in 0..6 {
            let pa = fs::read(dir_a.join(format!("images/{i:06}.ppm"))).unwrap();
            let pb = fs::read(dir_b.join(format!("images/{i:06}.ppm"))).unwrap();
            assert_eq!(pa, pb, "image {i} differs");
        }

        let ds = Dataset::load(&dir_a).unwrap();
        assert_eq!(ds.len(), 6);
        let img = ds.image(0).unwrap();
        assert_eq!(img.shape(), &[3, 16, 16]);
        assert!(img.data().iter().all(|v| (-1.0..=1.0).contains(v)));

        // corrupting one image is caught and named
        let victim = dir_a.join("images/000003.ppm");
        let mut bytes = fs::read(&victim).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        fs::write(&victim, &bytes).unwrap();
        match Dataset::load(&dir_a) {
            Err(DataError::Record { image_id, .. }) => assert_eq!(image_id, 3),
            other => panic!("expected checksum failure, got {other:?}"),
        }

        // deleting it is caught too
        fs::remove_file(&victim).unwrap();
        match Dataset::load(&dir_a) {
            Err(DataError::Record { image_id, .. }) => assert_eq!(image_id, 3),
            other => panic!("expected missing-file failure, got {other:?}"),
        }

        let _ = fs::remove_dir_all(&dir_a);
        let _ = fs::remove_dir_all(&dir_b);
    }

    #[test]
    fn label_marginals_are_uniform_within_four_sigma() {
        // sample 5000 specs through the same per-image streams gen uses
        let n = 5000usize;
        let mut counts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        counts.insert("shape", vec![0; SHAPES.len()]);
        counts.insert("color", vec![0; COLORS.len()]);
        counts.insert("size", vec![0; SIZES.len()]);
        counts.insert("position", vec![0; POSITIONS.len()]);
        counts.insert("background", vec![0; BACKGROUNDS.len()]);
        for i in 0..n {
            let mut rng = StreamRng::new(7, Domain::DataGen, i as u64);
            let s = ShapeSpec::sample(&mut rng);
            counts.get_mut("shape").unwrap()[s.shape] += 1;
            counts.get_mut("color").unwrap()[s.color] += 1;
            counts.get_mut("size").unwrap()[s.size] += 1;
            counts.get_mut("position").unwrap()[s.position] += 1;
            counts.get_mut("background").unwrap()[s.background] += 1;
        }
        for (attr, c) in &counts {
            let k = c.len() as f64;
            let p = 1.0 / k;
            let mean = n as f64 * p;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            for (v, &observed) in c.iter().enumerate() {
                let dev = (observed as f64 - mean).abs();
                // 23 bins are tested at once, so a per-bin 3σ bound would
                // false-alarm ~6% of the time; 4σ keeps the family-wise
                // rate near 0.1% while still catching real skew
                assert!(
                    dev <= 4.0 * sigma,
                    "{attr}[{v}]: {observed} vs mean {mean:.1} (4σ = {:.1})",
                    4.0 * sigma
                );
            }
        }
    }
}
