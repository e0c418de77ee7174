//! Random scene generation, dataset building and the JSON Lines scene file.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::grid::{oracle_solve_length, GridError, Position, Scene};
use crate::AtomicFile;

pub const GENERATOR_VERSION: &str = concat!("gridtalk-scenegen/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum SceneGenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(
        "gave up after {attempts} attempts with {retained} of {requested} scenes \
         ({unsolvable} unsolvable, {duplicates} duplicates); the config makes usable scenes too rare"
    )]
    RetryBudget {
        attempts: u64,
        retained: usize,
        requested: usize,
        unsolvable: u64,
        duplicates: u64,
    },
    #[error("{path}:{line}: field `{field}`: {reason}")]
    Field {
        path: PathBuf,
        line: usize,
        field: String,
        reason: String,
    },
    #[error("{path}:{line}: {reason}")]
    Line {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub width: usize,
    pub height: usize,
    pub max_obstacles: usize,
    pub max_traps: usize,
    /// Generation attempts allowed per requested scene before giving up.
    pub attempts_per_scene: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            width: 6,
            height: 6,
            max_obstacles: 10,
            max_traps: 10,
            attempts_per_scene: 50,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), SceneGenError> {
        if self.width == 0 || self.height == 0 {
            return Err(SceneGenError::Config(format!(
                "grid {}x{} has no cells",
                self.width, self.height
            )));
        }
        let cells = self.width * self.height;
        if cells < 2 {
            return Err(SceneGenError::Config(
                "grid needs room for the square and the circle".into(),
            ));
        }
        if self.max_obstacles + self.max_traps + 2 > cells {
            return Err(SceneGenError::Config(format!(
                "{} obstacles + {} traps + square + circle do not fit on {} cells",
                self.max_obstacles, self.max_traps, cells
            )));
        }
        if self.attempts_per_scene == 0 {
            return Err(SceneGenError::Config(
                "attempts_per_scene must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Draws one scene: counts uniform over `0..=max`, then every entity on a
/// distinct cell chosen uniformly without replacement.
pub fn generate_scene<R: Rng + ?Sized>(rng: &mut R, config: &GenConfig) -> Scene {
    let cells = config.width * config.height;
    let n_obstacles = rng.gen_range(0..=config.max_obstacles);
    let n_traps = rng.gen_range(0..=config.max_traps);
    let picked = rand::seq::index::sample(rng, cells, n_obstacles + n_traps + 2).into_vec();
    let pos = |i: usize| Position::new(i % config.width, i / config.width);
    let (obstacles, rest) = picked.split_at(n_obstacles);
    let (traps, rest) = rest.split_at(n_traps);
    Scene::new(
        config.width,
        config.height,
        pos(rest[0]),
        pos(rest[1]),
        obstacles.iter().map(|&i| pos(i)),
        traps.iter().map(|&i| pos(i)),
    )
    .expect("sampled cells are distinct and on the grid")
}

/// RNG for generation attempt `index`; each attempt has its own stream.
pub fn attempt_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    attempt_rng(seed, u64::MAX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Short,
    Medium,
    Long,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Short, Difficulty::Medium, Difficulty::Long];

    pub fn from_solve_length(len: u32) -> Difficulty {
        match len {
            0..=3 => Difficulty::Short,
            4..=5 => Difficulty::Medium,
            _ => Difficulty::Long,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Short => "short",
            Difficulty::Medium => "medium",
            Difficulty::Long => "long",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Difficulty::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("expected short, medium or long, got {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validation,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::Validation];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Validation => "validation",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("expected train, test or validation, got {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneRecord {
    pub id: String,
    pub scene: Scene,
    pub solve_length: u32,
    pub difficulty: Difficulty,
    pub split: Split,
}

#[derive(Serialize)]
struct SceneLine<'a> {
    id: &'a str,
    w: usize,
    h: usize,
    square: Position,
    circle: Position,
    obstacles: &'a std::collections::BTreeSet<Position>,
    traps: &'a std::collections::BTreeSet<Position>,
    solve_length: u32,
    difficulty: Difficulty,
    split: Split,
}

impl SceneRecord {
    fn line(&self) -> SceneLine<'_> {
        let s = &self.scene;
        SceneLine {
            id: &self.id,
            w: s.width(),
            h: s.height(),
            square: s.square(),
            circle: s.circle(),
            obstacles: s.obstacles(),
            traps: s.traps(),
            solve_length: self.solve_length,
            difficulty: self.difficulty,
            split: self.split,
        }
    }

    /// One scene-file line, without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(&self.line()).expect("scene line serializes")
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self.line()).expect("scene line serializes")
    }
}

/// Counts per split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub validation: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Test => self.test,
            Split::Validation => self.validation,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyCounts {
    pub short: usize,
    pub medium: usize,
    pub long: usize,
}

impl DifficultyCounts {
    pub fn get(&self, d: Difficulty) -> usize {
        match d {
            Difficulty::Short => self.short,
            Difficulty::Medium => self.medium,
            Difficulty::Long => self.long,
        }
    }

    fn bump(&mut self, d: Difficulty) {
        match d {
            Difficulty::Short => self.short += 1,
            Difficulty::Medium => self.medium += 1,
            Difficulty::Long => self.long += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator_version: String,
    pub seed: u64,
    pub config: GenConfig,
    pub total: usize,
    pub splits: SplitCounts,
    pub difficulties: DifficultyCounts,
    pub attempts: u64,
    pub unsolvable_discarded: u64,
    pub duplicates_discarded: u64,
}

/// 80/10/10 with largest-remainder rounding; ties go to the earlier split.
pub fn split_sizes(n: usize) -> SplitCounts {
    let weights = [8usize, 1, 1];
    let mut sizes: Vec<usize> = weights.iter().map(|w| n * w / 10).collect();
    let mut remainders: Vec<(usize, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| (n * w % 10, i))
        .collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = n - sizes.iter().sum::<usize>();
    for &(_, i) in remainders.iter().take(short) {
        sizes[i] += 1;
    }
    SplitCounts {
        train: sizes[0],
        test: sizes[1],
        validation: sizes[2],
    }
}

pub fn build_dataset(
    n: usize,
    seed: u64,
    config: &GenConfig,
) -> Result<(Vec<SceneRecord>, DatasetManifest), SceneGenError> {
    config.validate()?;
    if n < 10 {
        return Err(SceneGenError::Config(format!(
            "need at least 10 scenes, asked for {n}"
        )));
    }
    let budget = config.attempts_per_scene.saturating_mul(n as u64);
    let mut seen = HashSet::with_capacity(n);
    let mut kept: Vec<(u64, Scene, u32)> = Vec::with_capacity(n);
    let (mut attempts, mut unsolvable, mut duplicates) = (0u64, 0u64, 0u64);
    while kept.len() < n {
        if attempts >= budget {
            return Err(SceneGenError::RetryBudget {
                attempts,
                retained: kept.len(),
                requested: n,
                unsolvable,
                duplicates,
            });
        }
        let index = attempts;
        attempts += 1;
        let scene = generate_scene(&mut attempt_rng(seed, index), config);
        let Ok(len) = oracle_solve_length(&scene) else {
            unsolvable += 1;
            continue;
        };
        if !seen.insert(scene.clone()) {
            duplicates += 1;
            continue;
        }
        kept.push((index, scene, len));
    }
    kept.shuffle(&mut shuffle_rng(seed));

    let sizes = split_sizes(n);
    let mut difficulties = DifficultyCounts::default();
    let records: Vec<SceneRecord> = kept
        .into_iter()
        .enumerate()
        .map(|(pos, (index, scene, solve_length))| {
            let split = if pos < sizes.train {
                Split::Train
            } else if pos < sizes.train + sizes.test {
                Split::Test
            } else {
                Split::Validation
            };
            let difficulty = Difficulty::from_solve_length(solve_length);
            difficulties.bump(difficulty);
            SceneRecord {
                id: format!("s{seed}-{index:07}"),
                scene,
                solve_length,
                difficulty,
                split,
            }
        })
        .collect();
    let manifest = DatasetManifest {
        generator_version: GENERATOR_VERSION.to_string(),
        seed,
        config: *config,
        total: records.len(),
        splits: sizes,
        difficulties,
        attempts,
        unsolvable_discarded: unsolvable,
        duplicates_discarded: duplicates,
    };
    Ok((records, manifest))
}

/// `scenes.jsonl` -> `scenes.manifest.json`.
pub fn manifest_path(scene_path: &Path) -> PathBuf {
    scene_path.with_extension("manifest.json")
}

pub fn write_scenes(records: &[SceneRecord], path: &Path) -> Result<(), SceneGenError> {
    let io = |source| SceneGenError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = AtomicFile::create(path).map_err(io)?;
    for r in records {
        serde_json::to_writer(&mut out, &r.line()).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.finish().map_err(io)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), SceneGenError> {
    let mut bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    bytes.push(b'\n');
    crate::write_atomic(path, &bytes).map_err(|source| SceneGenError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    /// Trust the stored solve length (it must still agree with the difficulty).
    #[default]
    Lenient,
    /// Recompute every solve length with the oracle.
    Strict,
}

pub fn read_scenes(path: &Path, strictness: Strictness) -> Result<Vec<SceneRecord>, SceneGenError> {
    Ok(read_scene_lines(path, strictness)?
        .into_iter()
        .map(|(r, _)| r)
        .collect())
}

/// Like [`read_scenes`], keeping each record's line exactly as stored.
pub fn read_scene_lines(
    path: &Path,
    strictness: Strictness,
) -> Result<Vec<(SceneRecord, String)>, SceneGenError> {
    let file = std::fs::File::open(path).map_err(|source| SceneGenError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| SceneGenError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record(&line, path, i + 1, strictness)?;
        if !ids.insert(record.id.clone()) {
            return Err(SceneGenError::Field {
                path: path.to_path_buf(),
                line: i + 1,
                field: "id".into(),
                reason: format!("duplicate id {:?}", record.id),
            });
        }
        records.push((record, line));
    }
    Ok(records)
}

pub fn parse_record(
    text: &str,
    path: &Path,
    line: usize,
    strictness: Strictness,
) -> Result<SceneRecord, SceneGenError> {
    let field_err = |field: &str, reason: String| SceneGenError::Field {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        reason,
    };
    let value: Value = serde_json::from_str(text).map_err(|e| SceneGenError::Line {
        path: path.to_path_buf(),
        line,
        reason: format!("not valid JSON: {e}"),
    })?;
    let Value::Object(map) = value else {
        return Err(SceneGenError::Line {
            path: path.to_path_buf(),
            line,
            reason: "expected a JSON object".into(),
        });
    };
    fn get<T: serde::de::DeserializeOwned>(
        map: &Map<String, Value>,
        field: &str,
        err: &dyn Fn(&str, String) -> SceneGenError,
    ) -> Result<T, SceneGenError> {
        let v = map.get(field).ok_or_else(|| err(field, "missing".into()))?;
        serde_json::from_value(v.clone()).map_err(|e| err(field, e.to_string()))
    }
    const FIELDS: [&str; 10] = [
        "id",
        "w",
        "h",
        "square",
        "circle",
        "obstacles",
        "traps",
        "solve_length",
        "difficulty",
        "split",
    ];
    if let Some(k) = map.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(field_err(k, "unknown field".into()));
    }
    let id: String = get(&map, "id", &field_err)?;
    let w: usize = get(&map, "w", &field_err)?;
    let h: usize = get(&map, "h", &field_err)?;
    let square: Position = get(&map, "square", &field_err)?;
    let circle: Position = get(&map, "circle", &field_err)?;
    let obstacles: Vec<Position> = get(&map, "obstacles", &field_err)?;
    let traps: Vec<Position> = get(&map, "traps", &field_err)?;
    let solve_length: u32 = get(&map, "solve_length", &field_err)?;
    let difficulty: String = get(&map, "difficulty", &field_err)?;
    let difficulty: Difficulty = difficulty.parse().map_err(|e| field_err("difficulty", e))?;
    let split: String = get(&map, "split", &field_err)?;
    let split: Split = split.parse().map_err(|e| field_err("split", e))?;

    let scene = Scene::new(w, h, square, circle, obstacles, traps).map_err(|e| {
        let field = match &e {
            GridError::Overlap { second, .. } | GridError::OutOfBounds { entity: second, .. } => {
                match *second {
                    "obstacle" => "obstacles",
                    "trap" => "traps",
                    other => other,
                }
            }
            _ => "w",
        };
        field_err(field, e.to_string())
    })?;
    if Difficulty::from_solve_length(solve_length) != difficulty {
        return Err(field_err(
            "difficulty",
            format!("{difficulty} does not match solve length {solve_length}"),
        ));
    }
    if strictness == Strictness::Strict {
        match oracle_solve_length(&scene) {
            Ok(actual) if actual == solve_length => {}
            Ok(actual) => {
                return Err(field_err(
                    "solve_length",
                    format!("stored {solve_length} but the oracle finds {actual}"),
                ))
            }
            Err(e) => return Err(field_err("solve_length", e.to_string())),
        }
    }
    Ok(SceneRecord {
        id,
        scene,
        solve_length,
        difficulty,
        split,
    })
}
