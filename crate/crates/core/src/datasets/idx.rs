//! MNIST IDX files (big-endian header, unsigned byte payload).

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    /// `(count, rows * cols)`, pixels scaled to `[0, 1]`.
    Images(Array2<f32>),
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    match be_u32(bytes, 0)? {
        IDX_IMAGES_MAGIC => {
            let count = be_u32(bytes, 4)? as usize;
            let rows = be_u32(bytes, 8)? as usize;
            let cols = be_u32(bytes, 12)? as usize;
            let pixels = rows * cols;
            let payload = &bytes[16..];
            if payload.len() != count * pixels {
                return Err(Error::Format(format!(
                    "image payload holds {} bytes, header promises {}",
                    payload.len(),
                    count * pixels
                )));
            }
            let data = payload.iter().map(|&b| b as f32 / 255.0).collect();
            Ok(IdxData::Images(
                Array2::from_shape_vec((count, pixels), data).expect("length checked"),
            ))
        }
        IDX_LABELS_MAGIC => {
            let count = be_u32(bytes, 4)? as usize;
            let payload = &bytes[8..];
            if payload.len() != count {
                return Err(Error::Format(format!(
                    "label payload holds {} bytes, header promises {count}",
                    payload.len()
                )));
            }
            Ok(IdxData::Labels(payload.to_vec()))
        }
        other => Err(Error::Format(format!("unknown IDX magic {other}"))),
    }
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxData> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// The four standard MNIST files.
#[derive(Debug, Clone)]
pub struct Mnist {
    pub train_images: Array2<f32>,
    pub train_labels: Vec<u8>,
    pub test_images: Array2<f32>,
    pub test_labels: Vec<u8>,
}

fn images(path: &Path) -> Result<Array2<f32>> {
    match load_idx(path)? {
        IdxData::Images(x) => Ok(x),
        IdxData::Labels(_) => Err(Error::Format(format!("{} holds labels, not images", path.display()))),
    }
}

fn labels(path: &Path) -> Result<Vec<u8>> {
    match load_idx(path)? {
        IdxData::Labels(y) => Ok(y),
        IdxData::Images(_) => Err(Error::Format(format!("{} holds images, not labels", path.display()))),
    }
}

pub fn load_mnist(dir: impl AsRef<Path>) -> Result<Mnist> {
    let dir = dir.as_ref();
    let m = Mnist {
        train_images: images(&dir.join("train-images-idx3-ubyte"))?,
        train_labels: labels(&dir.join("train-labels-idx1-ubyte"))?,
        test_images: images(&dir.join("t10k-images-idx3-ubyte"))?,
        test_labels: labels(&dir.join("t10k-labels-idx1-ubyte"))?,
    };
    if m.train_images.nrows() != m.train_labels.len() || m.test_images.nrows() != m.test_labels.len() {
        return Err(Error::Format("image and label counts disagree".into()));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn images_shape_and_scaling() {
        let bytes = image_file(2, 2, 2, &[0, 255, 51, 0, 0, 0, 0, 255]);
        let IdxData::Images(x) = parse_idx(&bytes).unwrap() else { panic!() };
        assert_eq!(x.dim(), (2, 4));
        assert_eq!(x[[0, 1]], 1.0);
        assert_eq!(x[[0, 2]], 0.2);
    }

    #[test]
    fn labels_length() {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&3u32.to_be_bytes());
        b.extend_from_slice(&[7, 0, 9]);
        assert_eq!(parse_idx(&b).unwrap(), IdxData::Labels(vec![7, 0, 9]));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bad = image_file(1, 1, 1, &[3]);
        bad[3] = 0x99;
        assert!(matches!(parse_idx(&bad), Err(Error::Format(_))));
        let short = image_file(2, 2, 2, &[0; 7]);
        assert!(matches!(parse_idx(&short), Err(Error::Format(_))));
        assert!(matches!(parse_idx(&[0, 0]), Err(Error::Format(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_idx("/nonexistent/idx"), Err(Error::Io { .. })));
    }
}
