use std::fs;
use std::path::Path;

use super::{DataKind, Dataset};
use crate::error::{FansError, Result};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Header row required; every column but the last is a feature, the last is
/// a non-negative integer label.
pub fn load_csv(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let width = reader.headers().map_err(|e| csv_error(path, e))?.len();
    if width < 2 {
        return Err(FansError::Parse {
            field: "header".into(),
            message: format!(
                "{}: need at least one feature column and a label column",
                path.display()
            ),
        });
    }
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != width {
            return Err(FansError::RowLength {
                row,
                expected: width,
                found: record.len(),
            });
        }
        let x = record
            .iter()
            .take(width - 1)
            .enumerate()
            .map(|(col, v)| {
                v.parse::<f64>()
                    .ok()
                    .filter(|f| f.is_finite())
                    .ok_or_else(|| FansError::Parse {
                        field: format!("row {row}, column {col}"),
                        message: format!("`{v}` is not a finite number"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        let raw = &record[width - 1];
        let label = raw
            .parse::<usize>()
            .ok()
            .filter(|&l| classes.is_none_or(|k| l < k))
            .ok_or_else(|| FansError::Label {
                row,
                label: raw.to_string(),
            })?;
        inputs.push(x);
        labels.push(label);
    }
    Dataset::new(inputs, labels, DataKind::Tabular)
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header: Vec<String> = (0..dataset.dim()).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    writer.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (x, y) in dataset.inputs.iter().zip(&dataset.labels) {
        let mut fields: Vec<String> = x.iter().map(f64::to_string).collect();
        fields.push(y.to_string());
        writer.write_record(&fields).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| FansError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> FansError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => FansError::io(path, io),
        other => FansError::Parse {
            field: path.display().to_string(),
            message: format!("{other:?}"),
        },
    }
}

struct Idx<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
    dims: Vec<usize>,
}

fn read_idx(path: &Path, magic: u32, ndims: usize) -> Result<Idx<'_>> {
    let bytes = fs::read(path).map_err(|e| FansError::io(path, e))?;
    let header = 4 * (1 + ndims);
    if bytes.len() < 4 {
        return Err(FansError::Truncated {
            path: path.into(),
            message: "missing magic number".into(),
        });
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let found = word(0);
    if found != magic {
        return Err(FansError::Magic {
            path: path.into(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < header {
        return Err(FansError::Truncated {
            path: path.into(),
            message: "incomplete dimension header".into(),
        });
    }
    let dims: Vec<usize> = (1..=ndims).map(|i| word(i) as usize).collect();
    let payload: usize = dims.iter().product();
    if bytes.len() < header + payload {
        return Err(FansError::Truncated {
            path: path.into(),
            message: format!("expected {payload} data bytes, found {}", bytes.len() - header),
        });
    }
    Ok(Idx {
        path,
        bytes: bytes[header..header + payload].to_vec(),
        dims,
    })
}

/// Big-endian IDX image (`0x0803`) and label (`0x0801`) files. Pixels are
/// scaled to `[0, 1]`.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, classes: Option<usize>) -> Result<Dataset> {
    let images = read_idx(images.as_ref(), IDX_IMAGES, 3)?;
    let labels = read_idx(labels.as_ref(), IDX_LABELS, 1)?;
    let (n, d) = (images.dims[0], images.dims[1] * images.dims[2]);
    if labels.dims[0] != n {
        return Err(FansError::Parse {
            field: labels.path.display().to_string(),
            message: format!("{} labels for {n} images", labels.dims[0]),
        });
    }
    let inputs = if d == 0 {
        vec![Vec::new(); n]
    } else {
        images
            .bytes
            .chunks_exact(d)
            .map(|px| px.iter().map(|&p| f64::from(p) / 255.0).collect())
            .collect()
    };
    let labels = labels
        .bytes
        .iter()
        .enumerate()
        .map(|(row, &l)| {
            let l = usize::from(l);
            if classes.is_some_and(|k| l >= k) {
                Err(FansError::Label {
                    row,
                    label: l.to_string(),
                })
            } else {
                Ok(l)
            }
        })
        .collect::<Result<Vec<usize>>>()?;
    Dataset::new(inputs, labels, DataKind::Image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx(path: &Path, magic: u32, dims: &[u32], data: &[u8]) {
        let mut f = fs::File::create(path).unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        for d in dims {
            f.write_all(&d.to_be_bytes()).unwrap();
        }
        f.write_all(data).unwrap();
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        let ds = Dataset::new(
            vec![vec![0.1, -2.0], vec![3.5, 1e-7], vec![0.0, 42.0]],
            vec![0, 1, 2],
            DataKind::Tabular,
        )
        .unwrap();
        save_csv(&ds, &path).unwrap();
        assert_eq!(load_csv(&path, None).unwrap(), ds);
    }

    #[test]
    fn csv_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let ragged = dir.path().join("ragged.csv");
        fs::write(&ragged, "a,b,label\n1,2,0\n1,0\n").unwrap();
        assert!(matches!(
            load_csv(&ragged, None),
            Err(FansError::RowLength {
                row: 1,
                expected: 3,
                found: 2
            })
        ));
        let bad_label = dir.path().join("label.csv");
        fs::write(&bad_label, "a,label\n1,0\n2,-1\n").unwrap();
        assert!(matches!(
            load_csv(&bad_label, None),
            Err(FansError::Label { row: 1, .. })
        ));
        let too_big = dir.path().join("big.csv");
        fs::write(&too_big, "a,label\n1,0\n2,5\n").unwrap();
        assert!(matches!(
            load_csv(&too_big, Some(3)),
            Err(FansError::Label { row: 1, .. })
        ));
        let missing = dir.path().join("nope.csv");
        assert!(matches!(load_csv(&missing, None), Err(FansError::Io { .. })));
    }

    #[test]
    fn idx_round_trip_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        let lab = dir.path().join("lab.idx");
        write_idx(&img, IDX_IMAGES, &[2, 2, 2], &[0, 255, 51, 102, 1, 2, 3, 4]);
        write_idx(&lab, IDX_LABELS, &[2], &[7, 3]);
        let ds = load_idx(&img, &lab, Some(10)).unwrap();
        assert_eq!(ds.kind, DataKind::Image);
        assert_eq!(ds.labels, vec![7, 3]);
        assert_eq!(ds.inputs[0], vec![0.0, 1.0, 0.2, 0.4]);
        assert!(matches!(
            load_idx(&img, &lab, Some(5)),
            Err(FansError::Label { row: 0, .. })
        ));
    }

    #[test]
    fn idx_wrong_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        let lab = dir.path().join("lab.idx");
        write_idx(&img, IDX_LABELS, &[1, 1, 1], &[0]);
        write_idx(&lab, IDX_LABELS, &[1], &[0]);
        assert!(matches!(
            load_idx(&img, &lab, None),
            Err(FansError::Magic {
                expected: 0x803,
                found: 0x801,
                ..
            })
        ));
        write_idx(&img, IDX_IMAGES, &[2, 2, 2], &[0, 1, 2]);
        assert!(matches!(load_idx(&img, &lab, None), Err(FansError::Truncated { .. })));
    }
}
