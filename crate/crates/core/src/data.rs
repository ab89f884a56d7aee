//! MNIST ingestion: IDX container parsing, 8-class filtering and
//! normalization into bias-extended input vectors.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::model::Sample;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;

/// Digits kept for the 8-outcome readout, in class-label order.
pub const CLASS_DIGITS: [u8; 8] = [0, 2, 3, 4, 5, 6, 8, 9];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Locates `<prefix>-images-idx3-ubyte[.gz]` and the matching labels file.
pub fn mnist_paths(dir: &Path, split: Split) -> Result<(PathBuf, PathBuf)> {
    let find = |stem: String| -> Result<PathBuf> {
        for name in [stem.clone(), format!("{stem}.gz")] {
            let p = dir.join(name);
            if p.is_file() {
                return Ok(p);
            }
        }
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} not found in {}", stem, dir.display()),
        )))
    };
    Ok((
        find(format!("{}-images-idx3-ubyte", split.prefix()))?,
        find(format!("{}-labels-idx1-ubyte", split.prefix()))?,
    ))
}

/// Reads a file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl RawImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawMnist {
    pub images: RawImages,
    pub labels: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn err(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Idx {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.err(self.bytes.len(), "truncated header"))?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn body(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if self.bytes.len() < end {
            return Err(self.err(
                self.bytes.len(),
                format!("truncated payload: need {len} bytes from offset {}", self.pos),
            ));
        }
        if self.bytes.len() > end {
            return Err(self.err(end, format!("{} trailing bytes", self.bytes.len() - end)));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

pub fn parse_images(bytes: &[u8], path: &Path) -> Result<RawImages> {
    let mut c = Cursor { bytes, pos: 0, path };
    let magic = c.u32()?;
    if magic != IMAGE_MAGIC {
        return Err(c.err(
            0,
            format!("bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        ));
    }
    let count = c.u32()? as usize;
    let rows = c.u32()? as usize;
    let cols = c.u32()? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(c.err(
            8,
            format!("expected {IMAGE_SIDE}x{IMAGE_SIDE} images, got {rows}x{cols}"),
        ));
    }
    let pixels = c.body(count * rows * cols)?.to_vec();
    Ok(RawImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let mut c = Cursor { bytes, pos: 0, path };
    let magic = c.u32()?;
    if magic != LABEL_MAGIC {
        return Err(c.err(
            0,
            format!("bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        ));
    }
    let count = c.u32()? as usize;
    let labels = c.body(count)?.to_vec();
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(c.err(8 + pos, format!("label {} is not a digit", labels[pos])));
    }
    Ok(labels)
}

/// Reads an image/label file pair (raw or gzip-compressed).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<RawMnist> {
    let images = parse_images(&read_maybe_gz(images_path)?, images_path)?;
    let labels = parse_labels(&read_maybe_gz(labels_path)?, labels_path)?;
    if images.count != labels.len() {
        return Err(Error::Idx {
            path: labels_path.to_path_buf(),
            offset: 4,
            msg: format!("{} labels for {} images", labels.len(), images.count),
        });
    }
    Ok(RawMnist { images, labels })
}

pub fn load_split(dir: &Path, split: Split) -> Result<RawMnist> {
    let (images, labels) = mnist_paths(dir, split)?;
    load_idx(&images, &labels)
}

/// Labelled, bias-extended input vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    split: String,
    class_digits: Vec<u8>,
}

impl Dataset {
    /// Builds a dataset from flat row-major inputs (each already carrying its
    /// bias element).
    pub fn from_parts(inputs: Vec<f64>, dim: usize, labels: Vec<usize>, split: impl Into<String>) -> Result<Self> {
        if dim == 0 || inputs.len() != dim * labels.len() {
            return Err(Error::shape("Dataset inputs", dim * labels.len(), inputs.len()));
        }
        Ok(Self {
            inputs,
            dim,
            labels,
            split: split.into(),
            class_digits: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> &str {
        &self.split
    }

    /// Digit represented by each class label (empty for synthetic data).
    pub fn class_digits(&self) -> &[u8] {
        &self.class_digits
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        Sample {
            x: self.input(i),
            label: self.labels[i],
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample<'_>> {
        (0..self.len()).map(|i| self.sample(i))
    }

    /// The first `n` samples (order preserved).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            inputs: self.inputs[..n * self.dim].to_vec(),
            dim: self.dim,
            labels: self.labels[..n].to_vec(),
            split: self.split.clone(),
            class_digits: self.class_digits.clone(),
        }
    }

    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; n_classes];
        for &l in &self.labels {
            if l < n_classes {
                counts[l] += 1;
            }
        }
        counts
    }

    /// Debug export: one row per sample, label first then the input vector.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "label")?;
        for j in 0..self.dim {
            write!(w, ",x{j}")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(w, "{}", self.labels[i])?;
            for v in self.input(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Class label of a digit, or `None` for the excluded digits 1 and 7.
pub fn digit_to_label(digit: u8) -> Option<usize> {
    CLASS_DIGITS.iter().position(|&d| d == digit)
}

/// Drops digits 1 and 7, remaps the rest to 0..7 in ascending digit order,
/// scales pixels by 1/255, flattens row-major and appends the bias 1.
pub fn prepare(raw: &RawMnist, split: &str) -> Dataset {
    prepare_first(raw, split, usize::MAX)
}

/// As [`prepare`], keeping only the first `limit` retained samples.
pub fn prepare_first(raw: &RawMnist, split: &str, limit: usize) -> Dataset {
    let pix = raw.images.rows * raw.images.cols;
    let dim = pix + 1;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (i, &digit) in raw.labels.iter().enumerate() {
        if labels.len() == limit {
            break;
        }
        let Some(label) = digit_to_label(digit) else {
            continue;
        };
        inputs.extend(raw.images.image(i).iter().map(|&p| f64::from(p) / 255.0));
        inputs.push(1.0);
        labels.push(label);
    }
    Dataset {
        inputs,
        dim,
        labels,
        split: split.to_string(),
        class_digits: CLASS_DIGITS.to_vec(),
    }
}
