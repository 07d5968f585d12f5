//! Input files: `.csv` atoms, `.json` grids or skeletons (told apart by their
//! keys).

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use lwot::measures::{from_grid, AtomicMeasure, GriddedMeasure};
use lwot::skeleton::{to_atomic, SkeletalRootMeasure};
use lwot::{Error, Result};

pub enum Input {
    Atomic(AtomicMeasure),
    Grid(GriddedMeasure),
    Skeleton(SkeletalRootMeasure),
}

impl Input {
    pub fn kind(&self) -> &'static str {
        match self {
            Input::Atomic(_) => "atoms",
            Input::Grid(_) => "grid",
            Input::Skeleton(_) => "skeleton",
        }
    }

    /// Atomic view: grids become cell-center atoms, skeletons are cut into
    /// `slabs` height slabs.
    pub fn to_atomic(&self, slabs: usize) -> Result<AtomicMeasure> {
        match self {
            Input::Atomic(m) => Ok(m.clone()),
            Input::Grid(g) => from_grid(g),
            Input::Skeleton(s) => to_atomic(s, slabs),
        }
    }

    pub fn into_skeleton(self, path: &str) -> Result<SkeletalRootMeasure> {
        match self {
            Input::Skeleton(s) => Ok(s),
            other => Err(Error::Parse(format!("{path}: expected a skeleton document, found {}", other.kind()))),
        }
    }

    pub fn into_grid(self, path: &str) -> Result<GriddedMeasure> {
        match self {
            Input::Grid(g) => Ok(g),
            other => Err(Error::Parse(format!("{path}: expected a grid document, found {}", other.kind()))),
        }
    }
}

pub fn load(path: &str) -> Result<Input> {
    let ext = Path::new(path).extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("csv") => Ok(Input::Atomic(AtomicMeasure::read_csv(BufReader::new(File::open(path)?))?)),
        Some("json") => {
            let value: serde_json::Value = serde_json::from_reader(BufReader::new(File::open(path)?))
                .map_err(|e| Error::Parse(format!("{path}: {e}")))?;
            if value.get("limbs").is_some() {
                Ok(Input::Skeleton(SkeletalRootMeasure::from_json_value(value)?))
            } else if value.get("axes").is_some() {
                Ok(Input::Grid(GriddedMeasure::from_json_value(value)?))
            } else {
                Err(Error::Parse(format!("{path}: JSON input needs `limbs` (skeleton) or `axes` (grid)")))
            }
        }
        _ => Err(Error::Parse(format!("{path}: unknown input extension (use .csv or .json)"))),
    }
}

pub fn load_all(paths: &[String]) -> Result<Vec<Input>> {
    paths.iter().map(|p| load(p)).collect()
}
