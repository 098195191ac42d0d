//! Dataset manifests: a UTF-8 CSV indexing PGM chips, plus the scatterer
//! ground-truth sidecar consumed by identification scoring.
//!
//! Manifest columns are `id,file,label,split`, one row per chip, with
//! `file` relative to the manifest's directory. Saving writes images into
//! an `images/` directory next to the manifest.

use super::pgm;
use super::{Chip, ChipDataset, Provenance, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Writes the dataset as `manifest.csv` plus one PGM per chip.
pub fn save_manifest(ds: &ChipDataset, manifest_path: &Path) -> Result<()> {
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut csv = String::from("id,file,label,split\n");
    for chip in &ds.chips {
        let [_, h, w] = chip_dims(chip);
        let rel = format!("images/{}.pgm", chip.id);
        pgm::write_pgm(&dir.join(&rel), h, w, chip.image.data())?;
        let _ = writeln!(csv, "{},{},{},{}", chip.id, rel, chip.label, ds.split.as_str());
    }
    pgm::atomic_write(manifest_path, csv.as_bytes())
}

/// Loads a manifest, validating ids, labels, split consistency and that
/// every chip shares one image size.
pub fn load_manifest(manifest_path: &Path, num_classes: usize) -> Result<ChipDataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let row_err = |line: usize, detail: String| Error::ManifestRow {
        path: manifest_path.to_path_buf(),
        line,
        detail,
    };

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "id,file,label,split")) => {}
        Some((_, other)) => {
            return Err(row_err(1, format!("bad header `{other}`")));
        }
        None => return Err(row_err(1, "empty manifest".into())),
    }

    let mut chips = Vec::new();
    let mut split: Option<Split> = None;
    let mut shape: Option<(usize, usize)> = None;
    let mut seen = HashSet::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [id, file, label, row_split] = fields[..] else {
            return Err(row_err(lineno, format!("expected 4 columns, got {}", fields.len())));
        };
        if !seen.insert(id.to_string()) {
            return Err(row_err(lineno, format!("duplicate id `{id}`")));
        }
        let label: i64 = label
            .parse()
            .map_err(|e| row_err(lineno, format!("label `{label}`: {e}")))?;
        if label < 0 || label as usize >= num_classes {
            return Err(Error::LabelOutOfRange {
                path: manifest_path.to_path_buf(),
                line: lineno,
                label,
            });
        }
        let row_split = Split::parse(row_split)
            .ok_or_else(|| row_err(lineno, format!("unknown split `{row_split}`")))?;
        match split {
            None => split = Some(row_split),
            Some(s) if s == row_split => {}
            Some(s) => {
                return Err(row_err(
                    lineno,
                    format!("mixed splits: {} vs {}", s.as_str(), row_split.as_str()),
                ))
            }
        }
        let image_path = dir.join(file);
        if !image_path.is_file() {
            return Err(Error::MissingImage {
                path: image_path,
                id: id.to_string(),
            });
        }
        let (h, w, pixels) = pgm::read_pgm(&image_path)?;
        match shape {
            None => shape = Some((h, w)),
            Some(s) if s == (h, w) => {}
            Some((sh, sw)) => {
                return Err(row_err(
                    lineno,
                    format!("image is {h}x{w}, dataset is {sh}x{sw}"),
                ))
            }
        }
        chips.push(Chip {
            id: id.to_string(),
            image: Tensor::new(vec![1, h, w], pixels)?,
            label: label as usize,
        });
    }
    Ok(ChipDataset {
        chips,
        split: split.unwrap_or(Split::Test),
        provenance: Provenance::Ingested(manifest_path.to_path_buf()),
    })
}

fn chip_dims(chip: &Chip) -> [usize; 3] {
    let s = chip.image.shape();
    [s[0], s[1], s[2]]
}

/// One ground-truth scatterer row in the sidecar CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ScattererRow {
    pub id: String,
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub amplitude: f32,
    pub radius: f32,
}

/// Writes `id,scatterer_index,row,col,amplitude,radius` rows.
pub fn save_scatterer_csv(path: &Path, rows: &[ScattererRow]) -> Result<()> {
    let mut csv = String::from("id,scatterer_index,row,col,amplitude,radius\n");
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.id, r.index, r.row, r.col, r.amplitude, r.radius
        );
    }
    pgm::atomic_write(path, csv.as_bytes())
}

pub fn load_scatterer_csv(path: &Path) -> Result<Vec<ScattererRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let row_err = |line: usize, detail: String| Error::ManifestRow {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line != "id,scatterer_index,row,col,amplitude,radius" {
                return Err(row_err(1, format!("bad header `{line}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [id, index, row, col, amplitude, radius] = fields[..] else {
            return Err(row_err(idx + 1, format!("expected 6 columns, got {}", fields.len())));
        };
        let parse_usize = |name: &str, v: &str| {
            v.parse::<usize>()
                .map_err(|e| row_err(idx + 1, format!("{name} `{v}`: {e}")))
        };
        let parse_f32 = |name: &str, v: &str| {
            v.parse::<f32>()
                .map_err(|e| row_err(idx + 1, format!("{name} `{v}`: {e}")))
        };
        rows.push(ScattererRow {
            id: id.to_string(),
            index: parse_usize("scatterer_index", index)?,
            row: parse_usize("row", row)?,
            col: parse_usize("col", col)?,
            amplitude: parse_f32("amplitude", amplitude)?,
            radius: parse_f32("radius", radius)?,
        });
    }
    Ok(rows)
}
