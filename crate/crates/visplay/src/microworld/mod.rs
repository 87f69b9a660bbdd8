//! Synthetic scene microworld.
//!
//! Stands in for both the image corpus and the answer judge: scenes are
//! procedurally generated grids of attributed objects, questions come from a
//! small keyword grammar, and a ground-truth oracle answers any well-formed
//! question exactly.

mod grammar;
mod oracle;

pub use grammar::{
    enumerate_asts, parse_question, AttrKind, AttrValue, Filter, Grammar, QuestionAst,
};
pub use oracle::{canonicalize_answer, oracle_answer, oracle_trace, ScanOrder};

use crate::error::{Result, VisplayError};
use crate::rngutil;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Blue,
    Green,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Small,
    Large,
}

pub const ALL_SHAPES: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];
pub const ALL_COLORS: [Color; 4] = [Color::Red, Color::Blue, Color::Green, Color::Yellow];
pub const ALL_SIZES: [Size; 2] = [Size::Small, Size::Large];

/// Feature channels per grid cell: occupancy + color/shape/size one-hots.
pub const CELL_CHANNELS: usize = 1 + ALL_COLORS.len() + ALL_SHAPES.len() + ALL_SIZES.len();

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }
}

impl Color {
    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Yellow => "yellow",
        }
    }
}

impl Size {
    pub fn name(self) -> &'static str {
        match self {
            Size::Small => "small",
            Size::Large => "large",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub size: Size,
    /// (row, col), within grid bounds.
    pub cell: (u8, u8),
}

/// Scene generation parameters; recorded in the run manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenSpec {
    pub grid_w: u8,
    pub grid_h: u8,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            grid_w: 4,
            grid_h: 4,
            min_objects: 3,
            max_objects: 8,
        }
    }
}

impl GenSpec {
    pub fn capacity(&self) -> usize {
        self.grid_w as usize * self.grid_h as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_w == 0 || self.grid_h == 0 {
            return Err(VisplayError::InvalidSpec(
                "grid dimensions must be positive".into(),
            ));
        }
        if self.min_objects < 1 {
            return Err(VisplayError::InvalidSpec("min_objects must be >= 1".into()));
        }
        if self.min_objects > self.max_objects {
            return Err(VisplayError::InvalidSpec(
                "min_objects exceeds max_objects".into(),
            ));
        }
        if self.max_objects > self.capacity() {
            return Err(VisplayError::InvalidSpec(
                "max_objects exceeds grid capacity".into(),
            ));
        }
        Ok(())
    }

    /// Length of the feature vector produced for scenes under this spec.
    pub fn feature_len(&self) -> usize {
        // per-cell channel grid + color counts + shape counts + size counts
        // + total count + mean row + mean col
        self.capacity() * CELL_CHANNELS + 4 + 3 + 2 + 1 + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    pub seed: u64,
    pub grid_w: u8,
    pub grid_h: u8,
    pub objects: Vec<SceneObject>,
    pub feature_vector: Vec<f64>,
}

/// Deterministic scene generation: same (seed, spec) gives a bit-identical
/// Scene.
pub fn generate_scene(scene_id: u64, seed: u64, spec: &GenSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = rngutil::stream_rng(seed, &[scene_id]);
    let n = rng.gen_range(spec.min_objects..=spec.max_objects);

    let mut cells: Vec<(u8, u8)> = (0..spec.grid_h)
        .flat_map(|r| (0..spec.grid_w).map(move |c| (r, c)))
        .collect();
    cells.shuffle(&mut rng);
    let mut chosen: Vec<(u8, u8)> = cells.into_iter().take(n).collect();
    chosen.sort_unstable();

    let objects: Vec<SceneObject> = chosen
        .into_iter()
        .map(|cell| SceneObject {
            shape: ALL_SHAPES[rng.gen_range(0..ALL_SHAPES.len())],
            color: ALL_COLORS[rng.gen_range(0..ALL_COLORS.len())],
            size: ALL_SIZES[rng.gen_range(0..ALL_SIZES.len())],
            cell,
        })
        .collect();

    let mut scene = Scene {
        scene_id,
        seed,
        grid_w: spec.grid_w,
        grid_h: spec.grid_h,
        objects,
        feature_vector: Vec::new(),
    };
    scene.feature_vector = scene_features(&scene);
    Ok(scene)
}

/// Pure feature extraction; every entry lies in [0, 1]. Layout (documented in
/// the manifest): occupancy grid row-major, color counts / capacity, shape
/// counts / capacity, size counts / capacity, object count / capacity,
/// normalized mean row, normalized mean col.
pub fn scene_features(scene: &Scene) -> Vec<f64> {
    let cap = scene.grid_w as usize * scene.grid_h as usize;
    let mut v = Vec::with_capacity(cap * CELL_CHANNELS + 12);
    // Per-cell channels: occupancy, then color/shape/size one-hots, so the
    // grid is fully observable (every attribute readable at every cell).
    let mut grid = vec![0.0; cap * CELL_CHANNELS];
    for o in &scene.objects {
        let base = (o.cell.0 as usize * scene.grid_w as usize + o.cell.1 as usize) * CELL_CHANNELS;
        let color = ALL_COLORS.iter().position(|&c| c == o.color).unwrap();
        let shape = ALL_SHAPES.iter().position(|&s| s == o.shape).unwrap();
        let size = ALL_SIZES.iter().position(|&s| s == o.size).unwrap();
        grid[base] = 1.0;
        grid[base + 1 + color] = 1.0;
        grid[base + 1 + ALL_COLORS.len() + shape] = 1.0;
        grid[base + 1 + ALL_COLORS.len() + ALL_SHAPES.len() + size] = 1.0;
    }
    v.extend_from_slice(&grid);
    for color in ALL_COLORS {
        let n = scene.objects.iter().filter(|o| o.color == color).count();
        v.push(n as f64 / cap as f64);
    }
    for shape in ALL_SHAPES {
        let n = scene.objects.iter().filter(|o| o.shape == shape).count();
        v.push(n as f64 / cap as f64);
    }
    for size in ALL_SIZES {
        let n = scene.objects.iter().filter(|o| o.size == size).count();
        v.push(n as f64 / cap as f64);
    }
    v.push(scene.objects.len() as f64 / cap as f64);
    let n = scene.objects.len().max(1) as f64;
    let mean_row: f64 = scene.objects.iter().map(|o| o.cell.0 as f64).sum::<f64>() / n;
    let mean_col: f64 = scene.objects.iter().map(|o| o.cell.1 as f64).sum::<f64>() / n;
    v.push(mean_row / (scene.grid_h.max(2) - 1) as f64);
    v.push(mean_col / (scene.grid_w.max(2) - 1) as f64);
    v
}
