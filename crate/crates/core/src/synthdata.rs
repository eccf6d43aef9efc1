//! Synthetic scenes standing in for detected image regions.
//!
//! A scene holds one to four attributed objects on a 4x4 grid. Each object
//! becomes one region feature row built from fixed per-attribute embedding
//! blocks (shape, color, size, position) plus Gaussian noise, and the
//! caption is rendered from a fixed template.
//!
//! PRNG stream order for `generate_scene(seed)`: the object count is drawn
//! first, then for each object its shape, color, size and grid cell (cells
//! are drawn without replacement from the row-major list of free cells).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

pub const GENERATOR_VERSION: &str = "synthscenes-1";
pub const GRID: usize = 4;
pub const MAX_OBJECTS: usize = 4;
pub const SHAPES: [&str; 3] = ["circle", "square", "triangle"];
pub const COLORS: [&str; 4] = ["red", "blue", "green", "yellow"];
pub const SIZES: [&str; 2] = ["small", "large"];

const EMBED_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Object {
    pub shape: usize,
    pub color: usize,
    pub size: usize,
    pub row: usize,
    pub col: usize,
}

impl Object {
    pub fn cell(&self) -> usize {
        self.row * GRID + self.col
    }

    /// `(size, color, shape)` words, the attribute triple a caption names.
    pub fn attributes(&self) -> (usize, usize, usize) {
        (self.size, self.color, self.shape)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<Object>,
    pub seed: u64,
}

impl Scene {
    pub fn is_valid(&self) -> bool {
        let n = self.objects.len();
        let mut cells: Vec<usize> = self.objects.iter().map(Object::cell).collect();
        cells.sort();
        cells.dedup();
        (1..=MAX_OBJECTS).contains(&n)
            && cells.len() == n
            && self.objects.iter().all(|o| {
                o.shape < SHAPES.len() && o.color < COLORS.len() && o.size < SIZES.len() && o.row < GRID && o.col < GRID
            })
    }
}

pub fn generate_scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(1..=MAX_OBJECTS);
    let mut free: Vec<usize> = (0..GRID * GRID).collect();
    let objects = (0..count)
        .map(|_| {
            let shape = rng.random_range(0..SHAPES.len());
            let color = rng.random_range(0..COLORS.len());
            let size = rng.random_range(0..SIZES.len());
            let cell = free.remove(rng.random_range(0..free.len()));
            Object { shape, color, size, row: cell / GRID, col: cell % GRID }
        })
        .collect();
    Scene { objects, seed }
}

/// Template caption words, objects in row-major grid order.
pub fn caption_words(scene: &Scene) -> Vec<String> {
    let mut objs = scene.objects.clone();
    objs.sort_by_key(Object::cell);
    let mut words = Vec::with_capacity(objs.len() * 5);
    for (i, o) in objs.iter().enumerate() {
        if i > 0 {
            words.push("and".to_string());
        }
        words.extend(["a", SIZES[o.size], COLORS[o.color], SHAPES[o.shape]].map(String::from));
    }
    words
}

/// Every word the template grammar can emit.
pub fn grammar_terminals() -> Vec<&'static str> {
    let mut v = vec!["a", "and"];
    v.extend(SIZES);
    v.extend(COLORS);
    v.extend(SHAPES);
    v
}

/// Vocabulary of the synthetic corpus: specials plus grammar terminals.
pub fn corpus_vocabulary() -> Vocabulary {
    Vocabulary::from_words(grammar_terminals()).expect("grammar has terminals")
}

/// Recovers the sorted `(size, color, shape)` multiset from caption words.
pub fn parse_caption<S: AsRef<str>>(words: &[S]) -> Result<Vec<(usize, usize, usize)>> {
    let find = |table: &[&str], w: &str| {
        table.iter().position(|t| *t == w).ok_or_else(|| Error::input(format!("unexpected word {w:?}")))
    };
    let mut out = Vec::new();
    for (i, chunk) in words.split(|w| w.as_ref() == "and").enumerate() {
        match chunk {
            [a, size, color, shape] if a.as_ref() == "a" => {
                out.push((find(&SIZES, size.as_ref())?, find(&COLORS, color.as_ref())?, find(&SHAPES, shape.as_ref())?));
            }
            _ => return Err(Error::input(format!("malformed object phrase #{i}"))),
        }
    }
    out.sort();
    Ok(out)
}

const POSITION_BLOCK: usize = 3;

/// Grid coordinates rescaled to `[-1, 1]` and mapped through two seeded
/// random directions, so nearby cells get nearby codes.
fn position_row(cell: usize, dirs: &[Vec<f64>; 2]) -> Vec<f64> {
    let half = (GRID as f64 - 1.0) / 2.0;
    let r = (cell / GRID) as f64 / half - 1.0;
    let c = (cell % GRID) as f64 / half - 1.0;
    dirs[0].iter().zip(&dirs[1]).map(|(a, b)| a * r + b * c).collect()
}

/// Fixed per-attribute embedding blocks for one corpus seed. Shape, color
/// and size codes are independent Gaussian draws; the position code is
/// linear in the grid row and column.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSpace {
    pub d_v: usize,
    /// `(offset, width)` of the shape, color, size and position blocks.
    pub blocks: [(usize, usize); 4],
    tables: [Vec<Vec<f64>>; 4],
}

impl FeatureSpace {
    pub fn new(corpus_seed: u64, d_v: usize) -> Result<Self> {
        if d_v < 16 {
            return Err(Error::Config(format!("d_v must be at least 16, got {d_v}")));
        }
        let base = d_v / 4;
        let widths = [base, base, base, d_v - 3 * base];
        let mut blocks = [(0, 0); 4];
        let mut offset = 0;
        for (b, w) in blocks.iter_mut().zip(widths) {
            *b = (offset, w);
            offset += w;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(corpus_seed);
        rng.set_stream(EMBED_STREAM);
        let counts = [SHAPES.len(), COLORS.len(), SIZES.len(), GRID * GRID];
        let tables = std::array::from_fn(|k| {
            let w = widths[k];
            let scale = 1.0 / (w as f64).sqrt();
            if k == POSITION_BLOCK {
                let dirs: [Vec<f64>; 2] =
                    std::array::from_fn(|_| (0..w).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect());
                return (0..counts[k]).map(|cell| position_row(cell, &dirs)).collect();
            }
            (0..counts[k])
                .map(|_| (0..w).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
                .collect()
        });
        Ok(Self { d_v, blocks, tables })
    }

    /// Noise-free feature row of one object.
    pub fn object_row(&self, o: &Object) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.d_v);
        for (k, idx) in [o.shape, o.color, o.size, o.cell()].into_iter().enumerate() {
            row.extend_from_slice(&self.tables[k][idx]);
        }
        row
    }

    /// One row per object, in the scene's object order, with Gaussian noise
    /// of standard deviation `noise_sigma` drawn from the scene's own seed.
    pub fn featurize(&self, scene: &Scene, noise_sigma: f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
        rng.set_stream(NOISE_STREAM);
        scene
            .objects
            .iter()
            .map(|o| {
                let mut row = self.object_row(o);
                if noise_sigma > 0.0 {
                    for v in row.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v += noise_sigma * z;
                    }
                }
                row
            })
            .collect()
    }
}

/// One corpus line: region features and caption words of a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub scene_id: u64,
    pub features: Vec<Vec<f64>>,
    pub caption: Vec<String>,
}

impl CaptionRecord {
    /// JSON line with every float printed to 17 significant digits.
    pub fn to_json_line(&self) -> String {
        let rows: Vec<String> = self
            .features
            .iter()
            .map(|r| format!("[{}]", r.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(",")))
            .collect();
        format!(
            "{{\"scene_id\":{},\"features\":[{}],\"caption\":{}}}",
            self.scene_id,
            rows.join(","),
            serde_json::to_string(&self.caption).expect("strings serialize")
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator_version: String,
    pub seed: u64,
    pub d_v: usize,
    pub noise_sigma: f64,
    pub n_scenes: usize,
    pub ratios: [f64; 3],
    pub counts: SplitCounts,
    pub vocabulary: Vocabulary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_scenes: usize,
    pub ratios: [f64; 3],
    pub seed: u64,
    pub d_v: usize,
    pub noise_sigma: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self { n_scenes: 1000, ratios: [0.8, 0.1, 0.1], seed: 7, d_v: 32, noise_sigma: 0.1 }
    }
}

impl CorpusSpec {
    pub fn split_counts(&self) -> Result<SplitCounts> {
        let r = self.ratios;
        if r.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {r:?} must be in [0,1] and sum to 1")));
        }
        if self.n_scenes == 0 {
            return Err(Error::Config("n_scenes must be positive".into()));
        }
        let n = self.n_scenes as f64;
        let train = (n * r[0]).round() as usize;
        let val = ((n * r[1]).round() as usize).min(self.n_scenes - train);
        Ok(SplitCounts { train, val, test: self.n_scenes - train - val })
    }
}

/// Seed of scene `id` inside a corpus.
pub fn scene_seed(corpus_seed: u64, id: u64) -> u64 {
    splitmix64(splitmix64(corpus_seed) ^ id)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// In-memory corpus split by consecutive scene ids.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitCorpus {
    pub train: Vec<CaptionRecord>,
    pub val: Vec<CaptionRecord>,
    pub test: Vec<CaptionRecord>,
    pub manifest: Manifest,
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<SplitCorpus> {
    let counts = spec.split_counts()?;
    let space = FeatureSpace::new(spec.seed, spec.d_v)?;
    let mut records: Vec<CaptionRecord> = (0..spec.n_scenes as u64)
        .map(|id| {
            let scene = generate_scene(scene_seed(spec.seed, id));
            CaptionRecord { scene_id: id, features: space.featurize(&scene, spec.noise_sigma), caption: caption_words(&scene) }
        })
        .collect();
    let test = records.split_off(counts.train + counts.val);
    let val = records.split_off(counts.train);
    let manifest = Manifest {
        generator_version: GENERATOR_VERSION.into(),
        seed: spec.seed,
        d_v: spec.d_v,
        noise_sigma: spec.noise_sigma,
        n_scenes: spec.n_scenes,
        ratios: spec.ratios,
        counts,
        vocabulary: corpus_vocabulary(),
    };
    Ok(SplitCorpus { train: records, val, test, manifest })
}

pub const SPLIT_FILES: [&str; 3] = ["train.jsonl", "val.jsonl", "test.jsonl"];
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `train/val/test.jsonl` and `manifest.json` under `dir`; returns
/// the manifest path.
pub fn build_corpus(dir: &Path, spec: &CorpusSpec) -> Result<PathBuf> {
    let corpus = generate_corpus(spec)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, recs) in SPLIT_FILES.iter().zip([&corpus.train, &corpus.val, &corpus.test]) {
        write_records(&dir.join(name), recs)?;
    }
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&corpus.manifest)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn write_records(path: &Path, records: &[CaptionRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        writeln!(w, "{}", r.to_json_line()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<CaptionRecord>> {
    read_jsonl(path)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<D: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<D>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::input(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}
