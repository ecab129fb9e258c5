//! IDX ingestion (the MNIST container format).
//!
//! Layout: two zero bytes, a type code (`0x08` = unsigned byte), the number
//! of dimensions, then one big-endian `u32` per dimension and the raw data.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

const UBYTE: u8 = 0x08;

struct IdxArray {
    dims: Vec<usize>,
    data: Vec<u8>,
}

fn parse_idx(bytes: &[u8], expected_dims: u8) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::ingestion(bytes.len(), "truncated magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::ingestion(0, "malformed magic number: leading bytes must be zero"));
    }
    if bytes[2] != UBYTE {
        return Err(Error::ingestion(
            2,
            format!("unsupported element type 0x{:02x}, expected 0x08", bytes[2]),
        ));
    }
    if bytes[3] != expected_dims {
        return Err(Error::ingestion(
            3,
            format!("expected {expected_dims} dimensions, found {}", bytes[3]),
        ));
    }
    let mut dims = Vec::with_capacity(expected_dims as usize);
    for k in 0..expected_dims as usize {
        let off = 4 + 4 * k;
        let Some(raw) = bytes.get(off..off + 4) else {
            return Err(Error::ingestion(bytes.len(), format!("truncated size of dimension {k}")));
        };
        dims.push(u32::from_be_bytes(raw.try_into().expect("4-byte slice")) as usize);
    }
    let header = 4 + 4 * expected_dims as usize;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::ingestion(4, "dimension product overflows"))?;
    let body = &bytes[header..];
    if body.len() < count {
        return Err(Error::ingestion(
            bytes.len(),
            format!("truncated data: expected {count} bytes after offset {header}"),
        ));
    }
    if body.len() > count {
        return Err(Error::ingestion(header + count, "trailing bytes after data"));
    }
    Ok(IdxArray {
        dims,
        data: body.to_vec(),
    })
}

/// Parses a rank-3 image file into `(count, rows·cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let arr = parse_idx(bytes, 3)?;
    Ok((arr.dims[0], arr.dims[1] * arr.dims[2], arr.data))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    Ok(parse_idx(bytes, 1)?.data)
}

/// Loads an image/label pair; pixels are scaled to `[0, 1]`. The class count
/// is `max(label) + 1` unless `num_classes` is given.
pub fn load_idx_dataset(
    images: &Path,
    labels: &Path,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let (count, pixels, data) = parse_idx_images(&std::fs::read(images)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels)?)?;
    dataset_from_parts(count, pixels, &data, &labels, num_classes)
}

fn dataset_from_parts(
    count: usize,
    pixels: usize,
    data: &[u8],
    labels: &[u8],
    num_classes: Option<usize>,
) -> Result<Dataset> {
    if labels.len() != count {
        return Err(Error::invalid(format!(
            "label count {} does not match image count {count}",
            labels.len()
        )));
    }
    if count == 0 || pixels == 0 {
        return Err(Error::invalid("IDX dataset is empty"));
    }
    let classes = num_classes.unwrap_or_else(|| labels.iter().map(|&l| l as usize + 1).max().unwrap_or(1));
    let features = data.iter().map(|&p| p as f64 / 255.0).collect();
    let labels = labels.iter().map(|&l| l as usize).collect();
    Dataset::new(features, labels, pixels, classes)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Hand-built 4-image 2x3 fixture.
    pub fn fixture() -> (Vec<u8>, Vec<u8>) {
        let mut images = vec![0, 0, 0x08, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 3];
        images.extend(0u8..24);
        let mut labels = vec![0, 0, 0x08, 1, 0, 0, 0, 4];
        labels.extend([3u8, 1, 4, 1]);
        (images, labels)
    }

    #[test]
    fn fixture_parses() {
        let (images, labels) = fixture();
        let (count, pixels, data) = parse_idx_images(&images).unwrap();
        assert_eq!((count, pixels), (4, 6));
        let labels = parse_idx_labels(&labels).unwrap();
        let ds = dataset_from_parts(count, pixels, &data, &labels, None).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.num_classes(), 5);
        assert_eq!(ds.labels(), &[3, 1, 4, 1]);
        assert_eq!(ds.row(2)[5], 17.0 / 255.0);
        assert_eq!(ds.row(0)[0], 0.0);
    }

    #[test]
    fn loads_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = fixture();
        let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lbl.idx"));
        std::fs::write(&ip, images).unwrap();
        std::fs::write(&lp, labels).unwrap();
        let ds = load_idx_dataset(&ip, &lp, Some(10)).unwrap();
        assert_eq!(ds.num_classes(), 10);
        assert_eq!(ds.row(3)[0], 18.0 / 255.0);
    }

    #[test]
    fn bad_magic_names_offset() {
        let (mut images, _) = fixture();
        images[1] = 7;
        assert!(matches!(parse_idx_images(&images), Err(Error::Ingestion { offset: 0, .. })));
        let (mut images, _) = fixture();
        images[2] = 0x0d;
        assert!(matches!(parse_idx_images(&images), Err(Error::Ingestion { offset: 2, .. })));
    }

    #[test]
    fn truncation_names_offset() {
        let (images, _) = fixture();
        let cut = &images[..images.len() - 1];
        assert!(matches!(parse_idx_images(cut), Err(Error::Ingestion { offset: 39, .. })));
        assert!(matches!(parse_idx_images(&images[..6]), Err(Error::Ingestion { offset: 6, .. })));
    }

    #[test]
    fn empty_file_rejected() {
        assert!(matches!(parse_idx_labels(&[]), Err(Error::Ingestion { offset: 0, .. })));
    }

    #[test]
    fn count_mismatch_rejected() {
        let (images, _) = fixture();
        let (count, pixels, data) = parse_idx_images(&images).unwrap();
        assert!(dataset_from_parts(count, pixels, &data, &[1, 2, 3], None).is_err());
    }
}
