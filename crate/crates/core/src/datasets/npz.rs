//! Loader for the MedMNIST breast archive: a zip container of `.npy` arrays
//! named `train_images`, `train_labels`, `test_images`, `test_labels` with
//! unsigned 8-bit pixels.

use std::io::Read;
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, ScalingRecord, SplitPlan};
use crate::error::{Error, Result};

/// The archive's own train/test partition, flattened to 784 features in
/// `[0, 1]`; rows are ordered train block first, then test block.
#[derive(Debug, Clone)]
pub struct BreastMnist {
    pub data: Dataset,
    pub plan: SplitPlan,
}

struct NpyArray {
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

/// Parses a version 1.x/2.x `.npy` payload holding a C-ordered `|u1` array.
fn parse_npy(raw: &[u8]) -> Result<NpyArray> {
    let bad = |offset: usize, what: &str| Error::MalformedArchive {
        offset: offset as u64,
        what: what.into(),
    };
    if raw.len() < 10 || &raw[..6] != b"\x93NUMPY" {
        return Err(bad(0, "missing NUMPY magic"));
    }
    let major = raw[6];
    let (header_len, header_start) = match major {
        1 => (u16::from_le_bytes([raw[8], raw[9]]) as usize, 10),
        2 | 3 => {
            if raw.len() < 12 {
                return Err(bad(8, "truncated header length"));
            }
            (
                u32::from_le_bytes([raw[8], raw[9], raw[10], raw[11]]) as usize,
                12,
            )
        }
        v => return Err(bad(6, &format!("unsupported npy version {v}"))),
    };
    let data_start = header_start + header_len;
    if raw.len() < data_start {
        return Err(bad(header_start, "truncated header"));
    }
    let header = std::str::from_utf8(&raw[header_start..data_start])
        .map_err(|_| bad(header_start, "header is not ASCII"))?;
    if !header.contains("'descr': '|u1'") && !header.contains("'descr': 'u1'") {
        return Err(bad(header_start, "expected dtype |u1 (unsigned 8-bit)"));
    }
    if header.contains("'fortran_order': True") {
        return Err(bad(header_start, "expected C-ordered array"));
    }
    let shape_open = header
        .find("'shape': (")
        .ok_or_else(|| bad(header_start, "missing shape"))?
        + "'shape': (".len();
    let shape_close = header[shape_open..]
        .find(')')
        .ok_or_else(|| bad(header_start + shape_open, "unterminated shape"))?;
    let shape: Vec<usize> = header[shape_open..shape_open + shape_close]
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| bad(header_start + shape_open, "bad shape entry"))
        })
        .collect::<Result<_>>()?;
    let count: usize = shape.iter().product();
    let bytes = raw[data_start..].to_vec();
    if bytes.len() < count {
        return Err(bad(data_start, "payload shorter than shape requires"));
    }
    Ok(NpyArray {
        shape,
        bytes: bytes[..count].to_vec(),
    })
}

fn read_member(archive: &mut zip::ZipArchive<std::fs::File>, name: &str) -> Result<NpyArray> {
    let mut member = archive.by_name(name).map_err(|_| Error::MalformedArchive {
        offset: 0,
        what: format!("missing archive member {name}"),
    })?;
    let mut raw = Vec::new();
    member.read_to_end(&mut raw)?;
    parse_npy(&raw)
}

fn images_to_rows(arr: &NpyArray, what: &str) -> Result<(usize, usize, Vec<f64>)> {
    if arr.shape.len() != 3 {
        return Err(Error::MalformedArchive {
            offset: 0,
            what: format!("{what}: expected images of shape (n, h, w), got {:?}", arr.shape),
        });
    }
    let n = arr.shape[0];
    let d = arr.shape[1] * arr.shape[2];
    let rows = arr.bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Ok((n, d, rows))
}

fn labels_to_vec(arr: &NpyArray, expected_n: usize, what: &str) -> Result<Vec<u8>> {
    let n: usize = arr.shape.first().copied().unwrap_or(0);
    if n != expected_n {
        return Err(Error::MalformedArchive {
            offset: 0,
            what: format!("{what}: {n} labels for {expected_n} images"),
        });
    }
    let labels = arr.bytes.clone();
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::MalformedArchive {
            offset: 0,
            what: format!("{what}: labels outside {{0, 1}}"),
        });
    }
    Ok(labels)
}

/// Loads the archive, scales pixels to `[0, 1]`, and keeps the shipped
/// train/test partition as an explicit split plan.
pub fn load_breastmnist(path: &Path) -> Result<BreastMnist> {
    if !path.exists() {
        return Err(Error::DatasetUnavailable(path.display().to_string()));
    }
    let file = std::fs::File::open(path)?;
    let mut archive = zip::ZipArchive::new(file)?;
    let member = |archive: &mut zip::ZipArchive<std::fs::File>, base: &str| -> Result<NpyArray> {
        read_member(archive, &format!("{base}.npy")).or_else(|_| read_member(archive, base))
    };
    let train_images = member(&mut archive, "train_images")?;
    let train_labels = member(&mut archive, "train_labels")?;
    let test_images = member(&mut archive, "test_images")?;
    let test_labels = member(&mut archive, "test_labels")?;

    let (n_train, d_train, mut rows) = images_to_rows(&train_images, "train_images")?;
    let (n_test, d_test, test_rows) = images_to_rows(&test_images, "test_images")?;
    if d_train != d_test {
        return Err(Error::MalformedArchive {
            offset: 0,
            what: format!("image sizes differ: {d_train} vs {d_test}"),
        });
    }
    rows.extend(test_rows);
    let mut labels = labels_to_vec(&train_labels, n_train, "train_labels")?;
    labels.extend(labels_to_vec(&test_labels, n_test, "test_labels")?);

    let features = Array2::from_shape_vec((n_train + n_test, d_train), rows)
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let data = Dataset {
        features,
        labels,
        name: "breastmnist".into(),
        seed: 0,
        scaling: ScalingRecord::identity(d_train),
    };
    data.validate()?;
    let plan = SplitPlan {
        train_idx: (0..n_train).collect(),
        test_idx: (n_train..n_train + n_test).collect(),
        cv_folds: None,
        stratified: false,
        seed: 0,
    };
    Ok(BreastMnist { data, plan })
}
