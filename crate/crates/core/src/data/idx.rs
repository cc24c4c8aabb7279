//! Big-endian IDX decoding for MNIST-style image and label files.

use alloc::vec::Vec;

use super::Dataset;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// `0x00000803`: unsigned bytes, three dimensions.
pub const IMAGE_MAGIC: u32 = 0x0000_0803;
/// `0x00000801`: unsigned bytes, one dimension.
pub const LABEL_MAGIC: u32 = 0x0000_0801;

const MNIST_CLASSES: usize = 10;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(offset, "truncated header"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdxImages<'a> {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: &'a [u8],
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages<'_>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            0,
            alloc::format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        ));
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let need = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format(4, "image dimensions overflow"))?;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::format(
            16 + body.len(),
            alloc::format!("truncated pixel payload: {} of {need} bytes", body.len()),
        ));
    }
    if body.len() > need {
        return Err(Error::format(16 + need, "trailing bytes after pixel payload"));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(
            0,
            alloc::format!("label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        ));
    }
    let count = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::format(
            8 + body.len(),
            alloc::format!("truncated label payload: {} of {count} bytes", body.len()),
        ));
    }
    if body.len() > count {
        return Err(Error::format(8 + count, "trailing bytes after label payload"));
    }
    Ok(body)
}

/// Decodes an image/label IDX pair. Pixels are scaled to `[0, 1]` and each
/// image is flattened row-major.
pub fn mnist_from_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let img = parse_idx_images(images)?;
    let lab = parse_idx_labels(labels)?;
    if img.count != lab.len() {
        return Err(Error::format(
            4,
            alloc::format!("{} images but {} labels", img.count, lab.len()),
        ));
    }
    if let Some(pos) = lab.iter().position(|&y| y as usize >= MNIST_CLASSES) {
        return Err(Error::format(8 + pos, alloc::format!("label {} is not a digit", lab[pos])));
    }
    let dim = img.rows * img.cols;
    let data: Vec<f64> = img.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let features = Tensor::matrix(img.count, dim, data)?;
    Dataset::new(features, lab.iter().map(|&y| y as usize).collect(), MNIST_CLASSES)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn images(count: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IMAGE_MAGIC, count, 28, 28] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    fn labels(ys: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        out.extend_from_slice(&(ys.len() as u32).to_be_bytes());
        out.extend_from_slice(ys);
        out
    }

    #[test]
    fn magic_numbers_match_the_published_format() {
        assert_eq!(IMAGE_MAGIC, 2051);
        assert_eq!(LABEL_MAGIC, 2049);
        let mut bad = images(0, &[]);
        bad[3] = 0x01;
        assert!(matches!(parse_idx_images(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = labels(&[]);
        bad[3] = 0x03;
        assert!(matches!(parse_idx_labels(&bad), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn hand_built_pair_decodes() {
        let mut px = vec![0u8; 2 * 784];
        px[0] = 255;
        px[783] = 51;
        px[784 + 28] = 102;
        let ds = mnist_from_idx(&images(2, &px), &labels(&[3, 8])).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.input_dim(), 784);
        assert_eq!(ds.labels(), &[3, 8]);
        let (x0, _) = ds.sample(0);
        assert_eq!(x0[0], 1.0);
        assert_eq!(x0[783], 0.2);
        assert_eq!(x0[1..783].iter().filter(|&&v| v != 0.0).count(), 0);
        let (x1, _) = ds.sample(1);
        assert_eq!(x1[28], 0.4);
    }

    #[test]
    fn blank_image_is_zero_row() {
        let ds = mnist_from_idx(&images(1, &[0u8; 784]), &labels(&[0])).unwrap();
        assert!(ds.sample(0).0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn truncation_and_count_mismatch_are_reported() {
        let short = images(2, &[0u8; 784 + 10]);
        assert!(matches!(
            parse_idx_images(&short),
            Err(Error::Format { offset: 810, .. })
        ));
        assert!(matches!(
            parse_idx_images(&[0, 0, 8]),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut short_labels = labels(&[1, 2]);
        short_labels.pop();
        assert!(parse_idx_labels(&short_labels).is_err());
        let err = mnist_from_idx(&images(1, &[0u8; 784]), &labels(&[1, 2])).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 4, .. }));
        assert!(mnist_from_idx(&images(1, &[0u8; 784]), &labels(&[12])).is_err());
    }
}
