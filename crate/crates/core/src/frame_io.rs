//! Frame ingestion (image directories, YUV4MPEG2, synthetic) and image output.
//!
//! Intensities are `f32` in `[0, 1]`. Colour inputs are reduced to luma with
//! fixed weights `0.299 R + 0.587 G + 0.114 B`; YUV4MPEG2 input uses its Y
//! plane directly.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::imgproc;
use crate::synth::{self, SynthSpec};

/// Smallest accepted frame side; the default flow window needs at least this.
pub const MIN_FRAME_SIDE: usize = 16;

/// One grayscale video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    index: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, index: usize, data: Vec<f32>) -> Result<Self> {
        if width < MIN_FRAME_SIDE || height < MIN_FRAME_SIDE {
            return Err(Error::InvalidInput(format!(
                "frame {width}x{height} is smaller than the {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE} minimum"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "frame data has {} samples, expected {}",
                data.len(),
                width * height
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            index,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }

    pub fn into_scalar_field(self) -> ScalarField {
        ScalarField {
            width: self.width,
            height: self.height,
            data: self.data,
        }
    }
}

/// A plain row-major scalar grid, used for maps and masks headed to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "scalar field {width}x{height} with {} samples",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

/// Luma of a normalised RGB triple.
pub fn luminance(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Where frames come from.
#[derive(Debug, Clone)]
pub enum SourceKind {
    /// Directory of `.png` / `.pgm` files ordered by numeric file stem.
    ImageDirectory(PathBuf),
    /// YUV4MPEG2 file, 8-bit, mono or planar 4:2:0 / 4:2:2 / 4:4:4.
    Y4m(PathBuf),
    Synthetic(Box<SynthSpec>),
}

#[derive(Debug, Clone)]
pub struct SequenceSource {
    pub kind: SourceKind,
    /// Optional `(width, height)` every frame is resized to.
    pub target_size: Option<(usize, usize)>,
}

impl SequenceSource {
    pub fn image_directory(path: impl Into<PathBuf>) -> Self {
        Self {
            kind: SourceKind::ImageDirectory(path.into()),
            target_size: None,
        }
    }

    pub fn y4m(path: impl Into<PathBuf>) -> Self {
        Self {
            kind: SourceKind::Y4m(path.into()),
            target_size: None,
        }
    }

    pub fn synthetic(spec: SynthSpec) -> Self {
        Self {
            kind: SourceKind::Synthetic(Box::new(spec)),
            target_size: None,
        }
    }

    /// Picks the kind from what is on disk: directories are image sequences,
    /// anything else is read as YUV4MPEG2.
    pub fn from_path(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let meta = std::fs::metadata(&path).map_err(|e| Error::io(&path, e))?;
        Ok(if meta.is_dir() {
            Self::image_directory(path)
        } else {
            Self::y4m(path)
        })
    }

    pub fn with_target_size(mut self, size: Option<(usize, usize)>) -> Self {
        self.target_size = size;
        self
    }
}

/// Ordered, single-consumer stream of frames with contiguous indices.
pub struct FrameStream {
    width: usize,
    height: usize,
    len: usize,
    next_index: usize,
    target_size: Option<(usize, usize)>,
    loader: Loader,
}

enum Loader {
    Files(VecDeque<PathBuf>),
    Y4m {
        reader: BufReader<File>,
        path: PathBuf,
        layout: Y4mHeader,
    },
    Memory(VecDeque<Frame>),
}

impl FrameStream {
    /// Dimensions of every frame this stream yields.
    pub fn dims(&self) -> (usize, usize) {
        self.target_size.unwrap_or((self.width, self.height))
    }

    /// Native dimensions before any resize.
    pub fn source_dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn frame_count(&self) -> usize {
        self.len
    }

    fn finish(&self, data: Vec<f32>, w: usize, h: usize) -> Result<Frame> {
        let (data, w, h) = match self.target_size {
            Some((tw, th)) if (tw, th) != (w, h) => {
                (imgproc::resize_bilinear(&data, w, h, tw, th), tw, th)
            }
            _ => (data, w, h),
        };
        Frame::new(w, h, self.next_index, data)
    }

    fn load_next(&mut self) -> Option<Result<Frame>> {
        let raw = match &mut self.loader {
            Loader::Files(paths) => {
                let path = paths.pop_front()?;
                load_gray_image(&path)
            }
            Loader::Y4m {
                reader,
                path,
                layout,
            } => read_y4m_frame(reader, path, layout)
                .transpose()?
                .map(|data| (data, layout.width, layout.height)),
            Loader::Memory(frames) => {
                let f = frames.pop_front()?;
                Ok((f.data, f.width, f.height))
            }
        };
        Some(raw.and_then(|(data, w, h)| self.finish(data, w, h)))
    }
}

impl Iterator for FrameStream {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        let index = self.next_index;
        let item = self.load_next()?;
        self.next_index += 1;
        Some(item.map_err(|e| e.at_frame(index)))
    }
}

/// Opens a frame stream. Fails early on anything that would stop the
/// pipeline from seeing at least one frame pair.
pub fn open_sequence(source: &SequenceSource) -> Result<FrameStream> {
    if let Some((w, h)) = source.target_size {
        if w < MIN_FRAME_SIDE || h < MIN_FRAME_SIDE {
            return Err(Error::InvalidInput(format!(
                "target size {w}x{h} below minimum"
            )));
        }
    }
    let (width, height, len, loader) = match &source.kind {
        SourceKind::ImageDirectory(dir) => {
            let files = list_frame_files(dir)?;
            let (w, h) = probe_dimensions(&files, source.target_size.is_none())?;
            (w, h, files.len(), Loader::Files(files.into()))
        }
        SourceKind::Y4m(path) => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let size = file.metadata().map_err(|e| Error::io(path, e))?.len();
            let mut reader = BufReader::new(file);
            let (layout, header_len) = parse_y4m_header(&mut reader, path)?;
            let count = layout.frame_count(size - header_len as u64);
            if count < 2 {
                return Err(Error::InvalidInput(format!(
                    "{}: {count} frame(s) found, need at least 2",
                    path.display()
                )));
            }
            (
                layout.width,
                layout.height,
                count,
                Loader::Y4m {
                    reader,
                    path: path.clone(),
                    layout,
                },
            )
        }
        SourceKind::Synthetic(spec) => {
            let seq = synth::generate_sequence(spec)?;
            if seq.frames.len() < 2 {
                return Err(Error::InvalidInput(
                    "synthetic spec produces fewer than 2 frames".into(),
                ));
            }
            (
                spec.width,
                spec.height,
                seq.frames.len(),
                Loader::Memory(seq.frames.into()),
            )
        }
    };
    Ok(FrameStream {
        width,
        height,
        len,
        next_index: 0,
        target_size: source.target_size,
        loader,
    })
}

/// Numeric value of a frame file stem: the whole stem if numeric, otherwise
/// its trailing digit run (`frame_0012` -> 12).
fn frame_number(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

fn is_frame_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm"))
        .unwrap_or(false)
}

/// Frame files of `dir` in numeric-stem order.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() || !is_frame_file(&path) {
            continue;
        }
        let n = frame_number(&path).ok_or_else(|| {
            Error::InvalidInput(format!("{}: frame file stem is not numeric", path.display()))
        })?;
        files.push((n, path));
    }
    if files.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "{}: {} frame file(s) found, need at least 2",
            dir.display(),
            files.len()
        )));
    }
    files.sort();
    Ok(files.into_iter().map(|(_, p)| p).collect())
}

/// Checks that all files share one size (when `strict`) and returns the
/// size of the first.
fn file_dimensions(files: &[PathBuf]) -> impl Iterator<Item = Result<(usize, usize)>> + '_ {
    files.iter().enumerate().map(|(i, p)| {
        image::image_dimensions(p)
            .map(|(w, h)| (w as usize, h as usize))
            .map_err(|e| Error::image(p, e).at_frame(i))
    })
}

fn probe_dimensions(files: &[PathBuf], strict: bool) -> Result<(usize, usize)> {
    let mut dims = file_dimensions(files);
    let first = dims.next().expect("caller checked at least two files")?;
    if strict {
        for (f, d) in files[1..].iter().zip(dims) {
            let d = d?;
            if d != first {
                return Err(Error::InvalidInput(format!(
                    "{}: {}x{} differs from first frame {}x{}",
                    f.display(),
                    d.0,
                    d.1,
                    first.0,
                    first.1
                )));
            }
        }
    }
    Ok(first)
}

/// Whether the directory's frames disagree in size. Unreadable headers are
/// errors, not a mismatch.
pub fn directory_has_mixed_sizes(dir: &Path) -> Result<bool> {
    let files = list_frame_files(dir)?;
    let mut first = None;
    for d in file_dimensions(&files) {
        let d = d?;
        match first {
            None => first = Some(d),
            Some(f) if f != d => return Ok(true),
            Some(_) => {}
        }
    }
    Ok(false)
}

fn load_gray_image(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    Ok(dynamic_to_gray(&img))
}

fn dynamic_to_gray(img: &DynamicImage) -> (Vec<f32>, usize, usize) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = if img.color().has_color() {
        img.to_rgb32f()
            .pixels()
            .map(|p| luminance(p[0], p[1], p[2]).clamp(0.0, 1.0))
            .collect()
    } else {
        img.to_luma32f().pixels().map(|p| p[0].clamp(0.0, 1.0)).collect()
    };
    (data, w, h)
}

/// Reads an image back as a `[0, 1]` scalar field.
pub fn read_scalar_image(path: &Path) -> Result<ScalarField> {
    let (data, w, h) = load_gray_image(path)?;
    ScalarField::new(w, h, data)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a scalar field as an 8-bit grayscale image: 0.0 is black, 1.0 is
/// white, linear in between. Format follows the extension (`.png`, `.pgm`).
pub fn write_image(field: &ScalarField, path: &Path) -> Result<()> {
    if field.width == 0 || field.height == 0 {
        return Err(Error::InvalidInput("cannot write an empty field".into()));
    }
    let buf: GrayImage = ImageBuffer::from_raw(
        field.width as u32,
        field.height as u32,
        field.data.iter().map(|&v| quantize(v)).collect(),
    )
    .ok_or_else(|| Error::InvalidInput("field buffer size mismatch".into()))?;
    buf.save(path).map_err(|e| Error::image(path, e))
}

/// Writes an RGB image (PNG by extension).
pub fn write_color_image(img: &RgbImage, path: &Path) -> Result<()> {
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::InvalidInput("cannot write an empty image".into()));
    }
    img.save(path).map_err(|e| Error::image(path, e))
}

/// Writes a frame as a 16-bit grayscale PNG so synthetic sequences keep
/// their sub-8-bit texture.
pub fn write_frame_png16(frame: &Frame, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
        frame.width as u32,
        frame.height as u32,
        frame
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect(),
    )
    .ok_or_else(|| Error::InvalidInput("frame buffer size mismatch".into()))?;
    buf.save(path).map_err(|e| Error::image(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Chroma {
    Mono,
    C420,
    C422,
    C444,
}

#[derive(Debug, Clone, Copy)]
struct Y4mHeader {
    width: usize,
    height: usize,
    chroma: Chroma,
}

impl Y4mHeader {
    fn chroma_plane_len(&self) -> usize {
        let cw = self.width.div_ceil(2);
        let ch = self.height.div_ceil(2);
        match self.chroma {
            Chroma::Mono => 0,
            Chroma::C420 => 2 * cw * ch,
            Chroma::C422 => 2 * cw * self.height,
            Chroma::C444 => 2 * self.width * self.height,
        }
    }

    fn payload_len(&self) -> usize {
        self.width * self.height + self.chroma_plane_len()
    }

    /// Frame count assuming bare `FRAME\n` markers.
    fn frame_count(&self, body_bytes: u64) -> usize {
        (body_bytes / (self.payload_len() as u64 + 6)) as usize
    }
}

fn malformed(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: msg.into(),
    }
}

/// Parses the stream header; returns it and its length in bytes.
fn parse_y4m_header(reader: &mut impl BufRead, path: &Path) -> Result<(Y4mHeader, usize)> {
    let mut line = Vec::new();
    let n = reader
        .read_until(b'\n', &mut line)
        .map_err(|e| Error::io(path, e))?;
    if line.last() != Some(&b'\n') {
        return Err(malformed(path, "unterminated YUV4MPEG2 header"));
    }
    let text = std::str::from_utf8(&line[..line.len() - 1])
        .map_err(|_| malformed(path, "header is not ASCII"))?;
    let mut tokens = text.split(' ');
    if tokens.next() != Some("YUV4MPEG2") {
        return Err(malformed(path, "missing YUV4MPEG2 signature"));
    }
    let (mut width, mut height, mut chroma) = (None, None, Chroma::C420);
    for tok in tokens.filter(|t| !t.is_empty()) {
        let (tag, val) = tok.split_at(1);
        match tag {
            "W" => width = val.parse::<usize>().ok(),
            "H" => height = val.parse::<usize>().ok(),
            "C" => {
                chroma = match val {
                    "mono" => Chroma::Mono,
                    "420" | "420jpeg" | "420paldv" | "420mpeg2" => Chroma::C420,
                    "422" => Chroma::C422,
                    "444" => Chroma::C444,
                    other => {
                        return Err(malformed(path, format!("unsupported colourspace C{other}")))
                    }
                }
            }
            _ => {}
        }
    }
    let width = width.filter(|&w| w > 0).ok_or_else(|| malformed(path, "missing or bad W"))?;
    let height = height.filter(|&h| h > 0).ok_or_else(|| malformed(path, "missing or bad H"))?;
    Ok((
        Y4mHeader {
            width,
            height,
            chroma,
        },
        n,
    ))
}

fn read_y4m_frame(
    reader: &mut impl BufRead,
    path: &Path,
    layout: &Y4mHeader,
) -> Result<Option<Vec<f32>>> {
    let mut marker = Vec::new();
    let n = reader
        .read_until(b'\n', &mut marker)
        .map_err(|e| Error::io(path, e))?;
    if n == 0 {
        return Ok(None);
    }
    if !marker.starts_with(b"FRAME") {
        return Err(malformed(path, "expected FRAME marker"));
    }
    let mut luma = vec![0u8; layout.width * layout.height];
    reader
        .read_exact(&mut luma)
        .map_err(|e| Error::io(path, e))?;
    let mut chroma = vec![0u8; layout.chroma_plane_len()];
    reader
        .read_exact(&mut chroma)
        .map_err(|e| Error::io(path, e))?;
    Ok(Some(luma.iter().map(|&v| v as f32 / 255.0).collect()))
}

/// Writes frames as a mono YUV4MPEG2 stream.
pub fn write_y4m(frames: &[Frame], path: &Path) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidInput("no frames to write".into()))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(
        w,
        "YUV4MPEG2 W{} H{} F30:1 Ip A1:1 Cmono",
        first.width, first.height
    )
    .map_err(io)?;
    for f in frames {
        if f.dims() != first.dims() {
            return Err(Error::DimensionMismatch {
                expected: first.dims(),
                found: f.dims(),
            });
        }
        w.write_all(b"FRAME\n").map_err(io)?;
        let bytes: Vec<u8> = f.data.iter().map(|&v| quantize(v)).collect();
        w.write_all(&bytes).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn gray_png(dir: &Path, name: &str, w: u32, h: u32, v: u8) {
        GrayImage::from_pixel(w, h, Luma([v]))
            .save(dir.join(name))
            .unwrap();
    }

    #[test]
    fn directory_yields_contiguous_indices_in_numeric_order() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..10u8 {
            gray_png(dir.path(), &format!("{i:04}.png"), 16, 16, i * 20);
        }
        let frames: Vec<Frame> = open_sequence(&SequenceSource::image_directory(dir.path()))
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(frames.len(), 10);
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f.index(), i);
            assert!((f.get(0, 0) - (i as f32 * 20.0) / 255.0).abs() < 1e-6);
        }
    }

    #[test]
    fn numeric_sort_beats_lexical_sort() {
        let dir = tempfile::tempdir().unwrap();
        gray_png(dir.path(), "10.png", 16, 16, 100);
        gray_png(dir.path(), "9.png", 16, 16, 90);
        gray_png(dir.path(), "100.pgm", 16, 16, 200);
        let files = list_frame_files(dir.path()).unwrap();
        let names: Vec<_> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, ["9.png", "10.png", "100.pgm"]);
    }

    #[test]
    fn white_gray_pixel_is_one() {
        let dir = tempfile::tempdir().unwrap();
        gray_png(dir.path(), "0.png", 16, 16, 255);
        gray_png(dir.path(), "1.png", 16, 16, 255);
        let f = open_sequence(&SequenceSource::image_directory(dir.path()))
            .unwrap()
            .next()
            .unwrap()
            .unwrap();
        assert_eq!(f.get(3, 3), 1.0);
    }

    #[test]
    fn pure_red_maps_to_luma_weight() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..2 {
            RgbImage::from_pixel(16, 16, Rgb([255, 0, 0]))
                .save(dir.path().join(format!("{i}.png")))
                .unwrap();
        }
        let f = open_sequence(&SequenceSource::image_directory(dir.path()))
            .unwrap()
            .next()
            .unwrap()
            .unwrap();
        assert!((f.get(0, 0) - 0.299).abs() < 1e-6);
    }

    #[test]
    fn directory_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(open_sequence(&SequenceSource::image_directory(dir.path().join("nope"))).is_err());
        gray_png(dir.path(), "0.png", 16, 16, 0);
        assert!(open_sequence(&SequenceSource::image_directory(dir.path())).is_err());
        gray_png(dir.path(), "1.png", 20, 16, 0);
        let err = open_sequence(&SequenceSource::image_directory(dir.path()))
            .err()
            .unwrap();
        assert!(err.to_string().contains("differs"), "{err}");
        assert!(directory_has_mixed_sizes(dir.path()).unwrap());
        // A target size makes mixed inputs acceptable.
        let src = SequenceSource::image_directory(dir.path()).with_target_size(Some((32, 24)));
        let frames: Vec<Frame> = open_sequence(&src).unwrap().collect::<Result<_>>().unwrap();
        assert!(frames.iter().all(|f| f.dims() == (32, 24)));
    }

    #[test]
    fn y4m_round_trip_and_chroma_skipping() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Frame> = (0..3)
            .map(|i| {
                let data = (0..32 * 16).map(|p| ((p + i) % 256) as f32 / 255.0).collect();
                Frame::new(32, 16, i, data).unwrap()
            })
            .collect();
        let path = dir.path().join("clip.y4m");
        write_y4m(&frames, &path).unwrap();
        let read: Vec<Frame> = open_sequence(&SequenceSource::y4m(&path))
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(read, frames);

        // 4:2:0 with chroma payload.
        let path = dir.path().join("c420.y4m");
        let mut bytes = b"YUV4MPEG2 W16 H16 F25:1 C420jpeg\n".to_vec();
        for v in [10u8, 20u8] {
            bytes.extend_from_slice(b"FRAME\n");
            bytes.extend(std::iter::repeat_n(v, 256));
            bytes.extend(std::iter::repeat_n(128u8, 128));
        }
        std::fs::write(&path, bytes).unwrap();
        let stream = open_sequence(&SequenceSource::y4m(&path)).unwrap();
        assert_eq!(stream.frame_count(), 2);
        let read: Vec<Frame> = stream.collect::<Result<_>>().unwrap();
        assert_eq!(read[1].get(5, 5), 20.0 / 255.0);
    }

    #[test]
    fn y4m_malformed_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.y4m");
        std::fs::write(&path, b"YUV4MPEG2 H16 C420\n").unwrap();
        assert!(matches!(
            open_sequence(&SequenceSource::y4m(&path)),
            Err(Error::Parse { .. })
        ));
        std::fs::write(&path, b"RIFF W16 H16\n").unwrap();
        assert!(open_sequence(&SequenceSource::y4m(&path)).is_err());
    }

    #[test]
    fn write_image_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        write_image(&ScalarField::new(2, 1, vec![0.0, 1.0]).unwrap(), &path).unwrap();
        let img = image::open(&path).unwrap().to_luma8();
        assert_eq!(img.as_raw(), &vec![0u8, 255]);

        write_image(&ScalarField::filled(4, 4, 0.0), &path).unwrap();
        assert!(image::open(&path).unwrap().to_luma8().pixels().all(|p| p[0] == 0));
        write_image(&ScalarField::filled(4, 4, 1.0), &path).unwrap();
        assert!(image::open(&path).unwrap().to_luma8().pixels().all(|p| p[0] == 255));
    }

    #[test]
    fn write_image_to_missing_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing/f.png");
        assert!(write_image(&ScalarField::filled(2, 2, 0.5), &path).is_err());
    }

    #[test]
    fn frame_invariants() {
        assert!(Frame::new(15, 16, 0, vec![0.0; 240]).is_err());
        assert!(Frame::new(16, 16, 0, vec![0.0; 255]).is_err());
        assert!(Frame::new(16, 16, 0, vec![1.5; 256]).is_err());
        assert!(Frame::new(16, 16, 0, vec![1.0; 256]).is_ok());
    }
}
