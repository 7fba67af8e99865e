//! Raw little-endian payloads with JSON sidecars.
//!
//! * cube: `<name>.hsi` holds `f32` values in BSQ order, `<name>.json` holds
//!   `{"height","width","bands","dtype":"f32le","interleave":"bsq","wavelengths_nm":[..]}`.
//! * labels: `<name>.lbl` holds row-major `u16` ids (0 = unlabeled),
//!   `<name>.json` holds `{"height","width","classes":[..]}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HsiCube, LabelMap};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct CubeHeader {
    height: usize,
    width: usize,
    bands: usize,
    dtype: String,
    interleave: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wavelengths_nm: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelHeader {
    height: usize,
    width: usize,
    classes: Vec<String>,
}

/// `dir/name.hsi` -> `dir/name.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_header<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_cube(cube: &HsiCube, path: &Path) -> Result<()> {
    let header = CubeHeader {
        height: cube.height(),
        width: cube.width(),
        bands: cube.bands(),
        dtype: "f32le".into(),
        interleave: "bsq".into(),
        wavelengths_nm: cube.wavelengths_nm().map(<[f64]>::to_vec),
    };
    let mut payload = Vec::with_capacity(cube.data().len() * 4);
    for v in cube.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, &payload)?;
    write_json(&sidecar_path(path), &header)
}

pub fn read_cube(path: &Path) -> Result<HsiCube> {
    let header_path = sidecar_path(path);
    let header: CubeHeader = read_header(&header_path)?;
    if header.dtype != "f32le" {
        return Err(Error::format(
            &header_path,
            format!("unknown dtype {:?} (expected \"f32le\")", header.dtype),
        ));
    }
    if header.interleave != "bsq" {
        return Err(Error::format(
            &header_path,
            format!(
                "unsupported interleave {:?} (only \"bsq\")",
                header.interleave
            ),
        ));
    }
    let bytes = read_bytes(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            path,
            format!(
                "truncated payload: {} bytes is not a whole number of f32",
                bytes.len()
            ),
        ));
    }
    let expected = header.height * header.width * header.bands;
    if bytes.len() / 4 != expected {
        return Err(Error::format(
            path,
            format!(
                "length mismatch: header declares {}x{}x{} = {expected} values, payload has {}",
                header.height,
                header.width,
                header.bands,
                bytes.len() / 4
            ),
        ));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let mut cube = HsiCube::new(header.height, header.width, header.bands, data)
        .map_err(|e| Error::format(path, e.to_string()))?;
    if let Some(w) = header.wavelengths_nm {
        cube = cube
            .with_wavelengths(w)
            .map_err(|e| Error::format(&header_path, e.to_string()))?;
    }
    let in_range = cube.values_in_unit_range();
    cube.set_normalized_unchecked(in_range);
    Ok(cube)
}

pub fn write_labels(labels: &LabelMap, path: &Path) -> Result<()> {
    let mut payload = Vec::with_capacity(labels.labels().len() * 2);
    for v in labels.labels() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, &payload)?;
    write_json(
        &sidecar_path(path),
        &LabelHeader {
            height: labels.height(),
            width: labels.width(),
            classes: labels.class_names().to_vec(),
        },
    )
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let header: LabelHeader = read_header(&sidecar_path(path))?;
    let bytes = read_bytes(path)?;
    if bytes.len() % 2 != 0 {
        return Err(Error::format(path, "truncated payload: odd byte count"));
    }
    if bytes.len() / 2 != header.height * header.width {
        return Err(Error::format(
            path,
            format!(
                "length mismatch: header declares {}x{}, payload has {} labels",
                header.height,
                header.width,
                bytes.len() / 2
            ),
        ));
    }
    let labels = bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    LabelMap::new(header.height, header.width, labels, header.classes)
        .map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> HsiCube {
        let data = (0..12).map(|i| (i as f32) * 0.37 - 1.0).collect();
        HsiCube::new(2, 2, 3, data)
            .unwrap()
            .with_wavelengths(vec![450.0, 550.0, 650.0])
            .unwrap()
    }

    #[test]
    fn cube_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.hsi");
        let cube = sample();
        write_cube(&cube, &p).unwrap();
        let back = read_cube(&p).unwrap();
        let a: Vec<u32> = cube.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.wavelengths_nm(), cube.wavelengths_nm());
        assert_eq!(fs::read(&p).unwrap().len(), 48);
    }

    fn rewrite_header(p: &Path, f: impl FnOnce(&mut serde_json::Value)) {
        let hp = sidecar_path(p);
        let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&hp).unwrap()).unwrap();
        f(&mut v);
        fs::write(&hp, serde_json::to_vec(&v).unwrap()).unwrap();
    }

    #[test]
    fn band_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.hsi");
        write_cube(&sample(), &p).unwrap();
        rewrite_header(&p, |v| v["bands"] = 4.into());
        let err = read_cube(&p).unwrap_err();
        assert!(err.to_string().contains("length mismatch"), "{err}");
    }

    #[test]
    fn bip_interleave_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.hsi");
        write_cube(&sample(), &p).unwrap();
        rewrite_header(&p, |v| v["interleave"] = "bip".into());
        let err = read_cube(&p).unwrap_err();
        assert!(err.to_string().contains("unsupported interleave"), "{err}");
    }

    #[test]
    fn unknown_dtype_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.hsi");
        write_cube(&sample(), &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, &bytes).unwrap();
        assert!(read_cube(&p).unwrap_err().to_string().contains("truncated"));
        rewrite_header(&p, |v| v["dtype"] = "f64le".into());
        assert!(read_cube(&p)
            .unwrap_err()
            .to_string()
            .contains("unknown dtype"));
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.lbl");
        let l = LabelMap::new(2, 3, vec![0, 1, 2, 2, 1, 0], vec!["x".into(), "y".into()]).unwrap();
        write_labels(&l, &p).unwrap();
        assert_eq!(read_labels(&p).unwrap(), l);
    }
}
