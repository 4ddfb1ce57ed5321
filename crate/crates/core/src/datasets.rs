//! Yin-Yang generation, MNIST IDX loading and spike-time encoding.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spiketime::NO_SPIKE;

/// Encoded samples ready for a network: one spike-time vector per sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    /// The first `n` samples.
    pub fn truncated(mut self, n: usize) -> Self {
        self.inputs.truncate(n);
        self.labels.truncate(n);
        self
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Raw samples with feature values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl RawDataset {
    pub fn encode(&self, enc: &Encoding) -> Dataset {
        Dataset {
            inputs: self.features.iter().map(|v| enc.encode(v)).collect(),
            labels: self.labels.clone(),
            n_classes: self.n_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Linear map from values in `[0, 1]` to spike times in `[t_early, t_late]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Encoding {
    pub t_early: f64,
    pub t_late: f64,
    /// Map high values to early spikes.
    pub invert: bool,
    /// Inputs that would spike at exactly `t_late` do not spike at all.
    pub drop_late: bool,
}

impl Default for Encoding {
    fn default() -> Self {
        Self {
            t_early: 0.15,
            t_late: 2.0,
            invert: false,
            drop_late: false,
        }
    }
}

impl Encoding {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_early >= 0.0 && self.t_late > self.t_early && self.t_late.is_finite()) {
            return Err(Error::invalid(
                "encoding",
                format!("need 0 <= t_early < t_late, got {} and {}", self.t_early, self.t_late),
            ));
        }
        Ok(())
    }

    pub fn time(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        let frac = if self.invert { 1.0 - v } else { v };
        let t = self.t_early + frac * (self.t_late - self.t_early);
        if self.drop_late && t >= self.t_late {
            NO_SPIKE
        } else {
            t
        }
    }

    pub fn encode(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.time(v)).collect()
    }
}

/// Regions of the yin-yang figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum YinYangClass {
    Yang = 0,
    Yin = 1,
    Dot = 2,
}

impl YinYangClass {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Geometry of the yin-yang figure inside the square `[0, 2 r_big]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YinYang {
    pub r_small: f64,
    pub r_big: f64,
}

impl Default for YinYang {
    fn default() -> Self {
        Self {
            r_small: 0.1,
            r_big: 0.5,
        }
    }
}

/// A Yin-Yang point with its mirrored coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YinYangSample {
    pub x: f64,
    pub y: f64,
    pub label: YinYangClass,
}

impl YinYangSample {
    /// `(x, y, 1 - x, 1 - y)`.
    pub fn features(&self) -> [f64; 4] {
        [self.x, self.y, 1.0 - self.x, 1.0 - self.y]
    }
}

impl YinYang {
    /// Class of a point inside the big circle.
    ///
    /// The dots sit at `(r_big / 2, r_big)` and `(3 r_big / 2, r_big)`.
    pub fn which_class(&self, x: f64, y: f64) -> YinYangClass {
        let d_right = ((x - 1.5 * self.r_big).powi(2) + (y - self.r_big).powi(2)).sqrt();
        let d_left = ((x - 0.5 * self.r_big).powi(2) + (y - self.r_big).powi(2)).sqrt();
        let is_yin = d_right <= self.r_small
            || (d_left > self.r_small && d_left <= 0.5 * self.r_big)
            || (y > self.r_big && d_right > 0.5 * self.r_big);
        if d_right < self.r_small || d_left < self.r_small {
            YinYangClass::Dot
        } else if is_yin {
            YinYangClass::Yin
        } else {
            YinYangClass::Yang
        }
    }

    fn sample_point(&self, goal: YinYangClass, rng: &mut impl Rng) -> YinYangSample {
        loop {
            let x = rng.random::<f64>() * 2.0 * self.r_big;
            let y = rng.random::<f64>() * 2.0 * self.r_big;
            if ((x - self.r_big).powi(2) + (y - self.r_big).powi(2)).sqrt() > self.r_big {
                continue;
            }
            let label = self.which_class(x, y);
            if label == goal {
                return YinYangSample { x, y, label };
            }
        }
    }

    /// `n` points drawn uniformly within each class, classes balanced to
    /// within one sample, in shuffled order.
    pub fn generate(&self, n: usize, seed: u64) -> Vec<YinYangSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = [YinYangClass::Yang, YinYangClass::Yin, YinYangClass::Dot];
        let mut out: Vec<_> = (0..n)
            .map(|i| self.sample_point(classes[i % 3], &mut rng))
            .collect();
        out.shuffle(&mut rng);
        out
    }
}

/// Balanced Yin-Yang samples with the default geometry.
pub fn generate_yinyang(n: usize, seed: u64, r_small: f64, r_big: f64) -> Vec<YinYangSample> {
    YinYang { r_small, r_big }.generate(n, seed)
}

pub fn yinyang_raw(samples: &[YinYangSample]) -> RawDataset {
    RawDataset {
        features: samples.iter().map(|s| s.features().to_vec()).collect(),
        labels: samples.iter().map(|s| s.label.index()).collect(),
        n_classes: 3,
    }
}

/// Write samples as CSV with header `x,y,x_mirror,y_mirror,label`.
pub fn write_yinyang_csv(samples: &[YinYangSample], mut out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record(["x", "y", "x_mirror", "y_mirror", "label"])?;
    for s in samples {
        let f = s.features();
        w.write_record(
            f.iter()
                .map(|v| v.to_string())
                .chain(std::iter::once(s.label.index().to_string())),
        )?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Grayscale images with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec<f64>>,
}

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::TruncatedFile {
            path: path.into(),
            expected: offset + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], magic: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(Error::Format {
            path: path.into(),
            reason: format!("bad magic number 0x{found:08x}, expected 0x{magic:08x}"),
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            path: path.into(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(())
}

/// Parse an IDX3 image file; pixel bytes are scaled by `1/255`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<MnistImages> {
    check_magic(bytes, IMAGE_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let size = rows * cols;
    check_len(bytes, 16 + n * size, path)?;
    let pixels = bytes[16..16 + n * size]
        .chunks_exact(size.max(1))
        .take(n)
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect();
    Ok(MnistImages { rows, cols, pixels })
}

/// Parse an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    check_magic(bytes, LABEL_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    check_len(bytes, 8 + n, path)?;
    let labels: Vec<usize> = bytes[8..8 + n].iter().map(|&b| b as usize).collect();
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Format {
            path: path.into(),
            reason: format!("label {bad} outside 0..=9"),
        });
    }
    Ok(labels)
}

/// Load an MNIST image/label file pair.
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<(MnistImages, Vec<usize>)> {
    let img = parse_idx_images(&read_file(images)?, images)?;
    let lab = parse_idx_labels(&read_file(labels)?, labels)?;
    if img.pixels.len() != lab.len() {
        return Err(Error::Format {
            path: labels.into(),
            reason: format!("{} labels for {} images", lab.len(), img.pixels.len()),
        });
    }
    Ok((img, lab))
}

/// Standard file names of the MNIST splits inside `dir`.
pub fn mnist_paths(dir: &Path, train: bool) -> (std::path::PathBuf, std::path::PathBuf) {
    let prefix = if train { "train" } else { "t10k" };
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Load one MNIST split, optionally downsampled to 16x16.
pub fn load_mnist(dir: &Path, train: bool, downsample: bool) -> Result<RawDataset> {
    let (img_path, lab_path) = mnist_paths(dir, train);
    let (images, labels) = load_mnist_idx(&img_path, &lab_path)?;
    let features = if downsample {
        if (images.rows, images.cols) != (28, 28) {
            return Err(Error::Format {
                path: img_path,
                reason: format!("cannot downsample {}x{} images", images.rows, images.cols),
            });
        }
        images.pixels.iter().map(|p| downsample_16(p)).collect()
    } else {
        images.pixels
    };
    Ok(RawDataset {
        features,
        labels,
        n_classes: 10,
    })
}

/// Bilinear resampling of a row-major `src_n x src_n` image to `dst_n x dst_n`
/// with pixel centres aligned.
pub fn resample_bilinear(image: &[f64], src_n: usize, dst_n: usize) -> Vec<f64> {
    let scale = src_n as f64 / dst_n as f64;
    let max = (src_n - 1) as f64;
    let coord = |o: usize| ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
    let mut out = Vec::with_capacity(dst_n * dst_n);
    for oy in 0..dst_n {
        let y = coord(oy);
        let (y0, fy) = (y.floor() as usize, y - y.floor());
        let y1 = (y0 + 1).min(src_n - 1);
        for ox in 0..dst_n {
            let x = coord(ox);
            let (x0, fx) = (x.floor() as usize, x - x.floor());
            let x1 = (x0 + 1).min(src_n - 1);
            let p = |r: usize, c: usize| image[r * src_n + c];
            let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
            let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    out
}

/// 28x28 to 16x16 with [`resample_bilinear`].
pub fn downsample_16(image: &[f64]) -> Vec<f64> {
    resample_bilinear(image, 28, 16)
}
