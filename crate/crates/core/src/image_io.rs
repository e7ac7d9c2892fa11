//! Image decoding into per-channel sample matrices, and dataset manifests.
//!
//! Every decoded image is reduced to three 8-bit-range channels: alpha is
//! dropped, grayscale is replicated, and 16-bit samples are rescaled by
//! `1/257` with round-half-to-even.

use std::collections::HashSet;
use std::io;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageError, ImageReader};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest prompt identifier a manifest may carry.
pub const MAX_PROMPT_ID: u8 = 40;

/// Header every manifest must start with.
pub const MANIFEST_HEADER: [&str; 3] = ["path", "label", "prompt_id"];

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported image format: {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("corrupt image {path}: {reason}")]
    CorruptImage { path: PathBuf, reason: String },
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error("manifest {path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("manifest {0} has no entries")]
    EmptyManifest(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// One color channel, stored row-major with `rows * cols` samples in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    rows: usize,
    cols: usize,
    samples: Vec<f64>,
}

impl ChannelMatrix {
    pub fn new(rows: usize, cols: usize, samples: Vec<f64>) -> Result<Self, ImageIoError> {
        if rows < 2 || cols < 2 {
            return Err(ImageIoError::InvalidChannel(format!(
                "dimensions {rows}x{cols} are below the 2x2 minimum"
            )));
        }
        if samples.len() != rows * cols {
            return Err(ImageIoError::InvalidChannel(format!(
                "expected {} samples for {rows}x{cols}, got {}",
                rows * cols,
                samples.len()
            )));
        }
        if let Some(bad) = samples
            .iter()
            .find(|s| !s.is_finite() || **s < 0.0 || **s > 255.0)
        {
            return Err(ImageIoError::InvalidChannel(format!(
                "sample {bad} outside [0, 255]"
            )));
        }
        Ok(Self {
            rows,
            cols,
            samples,
        })
    }

    /// Builds a channel by evaluating `f(row, col)` at every index.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, ImageIoError> {
        let mut samples = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                samples.push(f(r, c));
            }
        }
        Self::new(rows, cols, samples)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.samples[row * self.cols + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    red: ChannelMatrix,
    green: ChannelMatrix,
    blue: ChannelMatrix,
}

impl RgbImage {
    pub fn new(
        red: ChannelMatrix,
        green: ChannelMatrix,
        blue: ChannelMatrix,
    ) -> Result<Self, ImageIoError> {
        let dims = (red.rows, red.cols);
        if (green.rows, green.cols) != dims || (blue.rows, blue.cols) != dims {
            return Err(ImageIoError::InvalidChannel(
                "red, green and blue channels differ in size".into(),
            ));
        }
        Ok(Self { red, green, blue })
    }

    /// Three identical copies of one channel.
    pub fn from_gray(channel: ChannelMatrix) -> Self {
        Self {
            red: channel.clone(),
            green: channel.clone(),
            blue: channel,
        }
    }

    pub fn rows(&self) -> usize {
        self.red.rows
    }

    pub fn cols(&self) -> usize {
        self.red.cols
    }

    pub fn red(&self) -> &ChannelMatrix {
        &self.red
    }

    pub fn green(&self) -> &ChannelMatrix {
        &self.green
    }

    pub fn blue(&self) -> &ChannelMatrix {
        &self.blue
    }

    /// Channels in R, G, B order.
    pub fn channels(&self) -> [&ChannelMatrix; 3] {
        [&self.red, &self.green, &self.blue]
    }
}

/// Rescales a 16-bit sample to the 8-bit range.
pub fn rescale_u16(v: u16) -> f64 {
    (f64::from(v) / 257.0).round_ties_even()
}

/// Decodes a PNG, JPEG or WebP file. The format is sniffed from content,
/// falling back to the extension.
pub fn decode_image(path: impl AsRef<Path>) -> Result<RgbImage, ImageIoError> {
    let path = path.as_ref();
    let reader = ImageReader::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ImageIoError::FileNotFound(path.to_path_buf()),
        _ => ImageIoError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let reader = reader.with_guessed_format().map_err(|e| ImageIoError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if reader.format().is_none() {
        return Err(ImageIoError::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: "unrecognized file signature".into(),
        });
    }
    let image = reader.decode().map_err(|e| match e {
        ImageError::Unsupported(u) => ImageIoError::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: u.to_string(),
        },
        ImageError::IoError(source)
            if !matches!(source.kind(), io::ErrorKind::UnexpectedEof | io::ErrorKind::InvalidData) =>
        {
            ImageIoError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
        other => ImageIoError::CorruptImage {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    from_dynamic(image)
}

/// Converts an in-memory decoded image into channel matrices.
pub fn from_dynamic(image: DynamicImage) -> Result<RgbImage, ImageIoError> {
    let (cols, rows) = (image.width() as usize, image.height() as usize);
    match image {
        DynamicImage::ImageLuma8(buf) => {
            let gray = buf.into_raw().into_iter().map(f64::from).collect();
            Ok(RgbImage::from_gray(ChannelMatrix::new(rows, cols, gray)?))
        }
        DynamicImage::ImageLumaA8(buf) => {
            let gray = buf.into_raw().chunks_exact(2).map(|p| f64::from(p[0])).collect();
            Ok(RgbImage::from_gray(ChannelMatrix::new(rows, cols, gray)?))
        }
        DynamicImage::ImageLuma16(buf) => {
            let gray = buf.into_raw().into_iter().map(rescale_u16).collect();
            Ok(RgbImage::from_gray(ChannelMatrix::new(rows, cols, gray)?))
        }
        DynamicImage::ImageLumaA16(buf) => {
            let gray = buf.into_raw().chunks_exact(2).map(|p| rescale_u16(p[0])).collect();
            Ok(RgbImage::from_gray(ChannelMatrix::new(rows, cols, gray)?))
        }
        DynamicImage::ImageRgb8(buf) => split_channels(rows, cols, &buf.into_raw(), 3, f64::from),
        DynamicImage::ImageRgba8(buf) => split_channels(rows, cols, &buf.into_raw(), 4, f64::from),
        DynamicImage::ImageRgb16(buf) => split_channels(rows, cols, &buf.into_raw(), 3, rescale_u16),
        DynamicImage::ImageRgba16(buf) => split_channels(rows, cols, &buf.into_raw(), 4, rescale_u16),
        other => {
            let buf = other.to_rgb8();
            split_channels(rows, cols, &buf.into_raw(), 3, f64::from)
        }
    }
}

fn split_channels<T: Copy>(
    rows: usize,
    cols: usize,
    raw: &[T],
    stride: usize,
    convert: impl Fn(T) -> f64,
) -> Result<RgbImage, ImageIoError> {
    let n = rows * cols;
    let mut planes = [
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    ];
    for px in raw.chunks_exact(stride) {
        for (plane, &v) in planes.iter_mut().zip(&px[..3]) {
            plane.push(convert(v));
        }
    }
    let [r, g, b] = planes;
    RgbImage::new(
        ChannelMatrix::new(rows, cols, r)?,
        ChannelMatrix::new(rows, cols, g)?,
        ChannelMatrix::new(rows, cols, b)?,
    )
}

/// Encodes an image as 8-bit RGB PNG. Samples are rounded to the nearest
/// integer.
pub fn encode_png(image: &RgbImage, path: impl AsRef<Path>) -> Result<(), ImageIoError> {
    let path = path.as_ref();
    let (rows, cols) = (image.rows(), image.cols());
    let mut raw = Vec::with_capacity(rows * cols * 3);
    for i in 0..rows * cols {
        for ch in image.channels() {
            raw.push(ch.samples[i].round() as u8);
        }
    }
    let buf = image::RgbImage::from_raw(cols as u32, rows as u32, raw)
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| ImageIoError::Io {
            path: path.to_path_buf(),
            source: io::Error::other(e),
        })
}

/// A labelled image reference from a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    pub prompt_id: Option<u8>,
}

impl ManifestEntry {
    pub fn new(path: impl Into<PathBuf>, label: impl Into<String>, prompt_id: Option<u8>) -> Self {
        Self {
            path: path.into(),
            label: label.into(),
            prompt_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Entries whose resolved path already appeared earlier in the file.
    pub duplicate_paths: usize,
}

/// Parses the `prompt_id` column: empty means absent, otherwise an integer
/// in `1..=40`.
pub fn parse_prompt_id(field: &str) -> Result<Option<u8>, String> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    let id: u8 = field
        .parse()
        .map_err(|_| format!("prompt_id {field:?} is not an integer in [1, {MAX_PROMPT_ID}]"))?;
    if !(1..=MAX_PROMPT_ID).contains(&id) {
        return Err(format!("prompt_id {id} outside [1, {MAX_PROMPT_ID}]"));
    }
    Ok(Some(id))
}

/// Reads a `path,label,prompt_id` CSV manifest. Relative paths are resolved
/// against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest, ImageIoError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ImageIoError::FileNotFound(path.to_path_buf()),
        _ => ImageIoError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let parse_err = |line: u64, message: String| ImageIoError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        if header.is_empty() {
            return Err(ImageIoError::EmptyManifest(path.to_path_buf()));
        }
        return Err(parse_err(
            1,
            format!("expected header `path,label,prompt_id`, found `{}`", header.iter().collect::<Vec<_>>().join(",")),
        ));
    }

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    let mut duplicate_paths = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let raw_path = &record[0];
        if raw_path.is_empty() {
            return Err(parse_err(line, "empty path".into()));
        }
        let label = &record[1];
        if label.is_empty() {
            return Err(parse_err(line, "empty label".into()));
        }
        let prompt_id = parse_prompt_id(&record[2]).map_err(|m| parse_err(line, m))?;
        let resolved = base.join(raw_path);
        if !seen.insert(resolved.clone()) {
            duplicate_paths += 1;
        }
        entries.push(ManifestEntry::new(resolved, label, prompt_id));
    }
    if entries.is_empty() {
        return Err(ImageIoError::EmptyManifest(path.to_path_buf()));
    }
    if duplicate_paths > 0 {
        log::warn!("{}: {duplicate_paths} duplicate path(s)", path.display());
    }
    Ok(Manifest {
        entries,
        duplicate_paths,
    })
}

/// Writes entries as a manifest with paths taken verbatim.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<(), ImageIoError> {
    let path = path.as_ref();
    let io_err = |e: csv::Error| ImageIoError::Io {
        path: path.to_path_buf(),
        source: io::Error::other(e),
    };
    let mut writer = csv::Writer::from_path(path).map_err(io_err)?;
    writer.write_record(MANIFEST_HEADER).map_err(io_err)?;
    for e in entries {
        let prompt = e.prompt_id.map(|p| p.to_string()).unwrap_or_default();
        writer
            .write_record([e.path.to_string_lossy().as_ref(), e.label.as_str(), prompt.as_str()])
            .map_err(io_err)?;
    }
    writer.flush().map_err(|e| ImageIoError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
