use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hsi::{
    read_cube, read_labels, write_cube, write_json, write_labels, HsiCube, LabelMap, SplitSpec,
};

pub const CUBE_FILE: &str = "cube.hsi";
pub const LABELS_FILE: &str = "labels.lbl";
pub const SPLIT_FILE: &str = "split.json";

/// A dataset directory: `cube.hsi`, `labels.lbl` and `split.json`, each
/// binary file with its JSON header alongside.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub cube: HsiCube,
    pub labels: LabelMap,
    pub split: SplitSpec,
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    write_cube(&data.cube, &dir.join(CUBE_FILE))?;
    write_labels(&data.labels, &dir.join(LABELS_FILE))?;
    write_json(&dir.join(SPLIT_FILE), &data.split)
}

pub fn read_split(path: &Path) -> Result<SplitSpec> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let cube = read_cube(&dir.join(CUBE_FILE))?;
    let labels = read_labels(&dir.join(LABELS_FILE))?;
    labels.check_matches(&cube)?;
    let split = read_split(&dir.join(SPLIT_FILE))?;
    if (split.height, split.width) != (cube.height(), cube.width()) {
        return Err(Error::format(
            dir.join(SPLIT_FILE),
            format!(
                "split is {}x{} but the cube is {}x{}",
                split.height,
                split.width,
                cube.height(),
                cube.width()
            ),
        ));
    }
    Ok(Dataset {
        cube,
        labels,
        split,
    })
}

/// Little-endian u16 class ids.
pub fn write_predictions(path: &Path, predictions: &[u16]) -> Result<()> {
    let bytes: Vec<u8> = predictions.iter().flat_map(|p| p.to_le_bytes()).collect();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<u16>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 2 != 0 {
        return Err(Error::format(path, "odd byte count for u16 predictions"));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect())
}
