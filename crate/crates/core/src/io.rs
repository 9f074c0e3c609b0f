//! PNG images and the morph pair list.

use std::fs::File;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("image tensor must be [3, h, w], got {0:?}")]
    Shape(Vec<usize>),
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

/// Loads an 8-bit PNG as a `[3, h, w]` tensor with values in [0, 1].
pub fn load_png(path: impl AsRef<Path>) -> Result<Tensor, IoError> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|source| IoError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = px[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data).map_err(|e| IoError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Quantises a `[3, h, w]` tensor (clamped to [0, 1]) to 8-bit RGB.
pub fn to_rgb8(image: &Tensor) -> Result<RgbImage, IoError> {
    let &[3, h, w] = image.shape() else {
        return Err(IoError::Shape(image.shape().to_vec()));
    };
    let d = image.data();
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| {
            let v = d[c * h * w + y as usize * w + x as usize];
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        Rgb([at(0), at(1), at(2)])
    }))
}

pub fn save_png(image: &Tensor, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    to_rgb8(image)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| IoError::Image {
            path: path.to_path_buf(),
            source,
        })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub morph_id: String,
    pub subject1_image: String,
    pub subject2_image: String,
}

/// Reads `morph_id,subject1_image,subject2_image`. Morph ids must be unique.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PairRecord>, IoError> {
    let path = path.as_ref();
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out: Vec<PairRecord> = Vec::new();
    for row in reader.deserialize() {
        let rec: PairRecord = row.map_err(csv_err)?;
        if out.iter().any(|r| r.morph_id == rec.morph_id) {
            return Err(IoError::Invalid {
                path: path.to_path_buf(),
                message: format!("duplicate morph_id {}", rec.morph_id),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[PairRecord]) -> Result<(), IoError> {
    let path = path.as_ref();
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for p in pairs {
        w.serialize(p).map_err(csv_err)?;
    }
    w.flush().map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..3 * 5 * 7).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
        let t = Tensor::new(vec![3, 5, 7], data).unwrap();
        let p = dir.path().join("x.png");
        save_png(&t, &p).unwrap();
        assert_eq!(load_png(&p).unwrap(), t);
    }

    #[test]
    fn rejects_non_rgb_tensor() {
        let t = Tensor::zeros(vec![1, 4, 4]).unwrap();
        assert!(matches!(to_rgb8(&t), Err(IoError::Shape(_))));
    }

    #[test]
    fn pairs_round_trip_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.csv");
        let pairs = vec![
            PairRecord {
                morph_id: "m1".into(),
                subject1_image: "a.png".into(),
                subject2_image: "b.png".into(),
            },
            PairRecord {
                morph_id: "m2".into(),
                subject1_image: "c.png".into(),
                subject2_image: "d.png".into(),
            },
        ];
        write_pairs(&p, &pairs).unwrap();
        assert_eq!(read_pairs(&p).unwrap(), pairs);
        std::fs::write(&p, "morph_id,subject1_image,subject2_image\nm,a,b\nm,c,d\n").unwrap();
        assert!(matches!(read_pairs(&p), Err(IoError::Invalid { .. })));
        assert!(matches!(
            read_pairs(dir.path().join("missing.csv")),
            Err(IoError::Io { .. })
        ));
    }
}
