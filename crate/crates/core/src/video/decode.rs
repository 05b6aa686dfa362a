//! Clip containers.
//!
//! YUV4MPEG2 (`.y4m`) and animated GIF are decoded in-process. Any other
//! container is piped through `ffmpeg` (looked up as `$HANDWASH_FFMPEG` or on
//! `PATH`) and re-read as a Y4M stream.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use image::codecs::gif::{GifDecoder, GifEncoder};
use image::{AnimationDecoder, Delay, Frame, RgbImage, RgbaImage};

use crate::error::{Error, Result};

/// File extensions treated as clips when scanning a corpus.
pub const CLIP_EXTENSIONS: [&str; 7] = ["y4m", "gif", "avi", "mp4", "mov", "mkv", "webm"];

pub fn is_clip_path(path: &Path) -> bool {
    extension_lower(path).is_some_and(|e| CLIP_EXTENSIONS.contains(&e.as_str()))
}

fn extension_lower(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

/// Streaming frame reader over one clip.
pub struct ClipFrames {
    path: PathBuf,
    source: Source,
    failed: bool,
}

enum Source {
    Y4m(Y4mFrames),
    Gif(image::Frames<'static>),
}

struct Y4mFrames {
    decoder: y4m::Decoder<Box<dyn Read>>,
    full_range: bool,
    child: Option<Child>,
}

impl ClipFrames {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let source = match extension_lower(&path).as_deref() {
            Some("y4m") => {
                let file = File::open(&path).map_err(|e| Error::decode(&path, e))?;
                Source::Y4m(Y4mFrames::new(&path, Box::new(BufReader::new(file)), None)?)
            }
            Some("gif") => {
                let file = File::open(&path).map_err(|e| Error::decode(&path, e))?;
                let decoder =
                    GifDecoder::new(BufReader::new(file)).map_err(|e| Error::decode(&path, e))?;
                Source::Gif(decoder.into_frames())
            }
            _ => Source::Y4m(spawn_ffmpeg(&path)?),
        };
        Ok(Self {
            path,
            source,
            failed: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Iterator for ClipFrames {
    type Item = Result<RgbImage>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = match &mut self.source {
            Source::Y4m(frames) => frames.next_frame(&self.path).transpose(),
            Source::Gif(frames) => frames.next().map(|f| {
                f.map(|frame| image::DynamicImage::ImageRgba8(frame.into_buffer()).to_rgb8())
                    .map_err(|e| Error::decode(&self.path, e))
            }),
        };
        if matches!(item, Some(Err(_))) {
            self.failed = true;
        }
        item
    }
}

impl Y4mFrames {
    fn new(path: &Path, reader: Box<dyn Read>, child: Option<Child>) -> Result<Self> {
        let decoder = y4m::Decoder::new(reader).map_err(|e| Error::decode(path, e))?;
        if decoder.get_bit_depth() != 8 {
            return Err(Error::decode(
                path,
                format!("unsupported bit depth {}", decoder.get_bit_depth()),
            ));
        }
        let params = String::from_utf8_lossy(decoder.get_raw_params()).into_owned();
        let full_range = params.contains("XCOLORRANGE=FULL");
        Ok(Self {
            decoder,
            full_range,
            child,
        })
    }

    fn next_frame(&mut self, path: &Path) -> Result<Option<RgbImage>> {
        let (w, h) = (self.decoder.get_width(), self.decoder.get_height());
        let colorspace = self.decoder.get_colorspace();
        let full_range = self.full_range;
        match self.decoder.read_frame() {
            Ok(frame) => yuv_to_rgb(&frame, w, h, colorspace, full_range)
                .map(Some)
                .map_err(|m| Error::decode(path, m)),
            Err(y4m::Error::EOF) => {
                if let Some(mut child) = self.child.take() {
                    let status = child.wait().map_err(|e| Error::decode(path, e))?;
                    if !status.success() {
                        return Err(Error::decode(path, format!("ffmpeg exited with {status}")));
                    }
                }
                Ok(None)
            }
            Err(e) => Err(Error::decode(path, e)),
        }
    }
}

impl Drop for Y4mFrames {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn spawn_ffmpeg(path: &Path) -> Result<Y4mFrames> {
    if !path.exists() {
        return Err(Error::decode(path, "file does not exist"));
    }
    let program = std::env::var_os("HANDWASH_FFMPEG").unwrap_or_else(|| "ffmpeg".into());
    let mut child = Command::new(&program)
        .args(["-v", "error", "-nostdin", "-i"])
        .arg(path)
        .args(["-f", "yuv4mpegpipe", "-pix_fmt", "yuv444p", "-color_range", "pc", "-"])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| {
            Error::decode(
                path,
                format!(
                    "container needs ffmpeg ({}): {e}",
                    Path::new(&program).display()
                ),
            )
        })?;
    let stdout = child.stdout.take().expect("stdout is piped");
    Y4mFrames::new(path, Box::new(BufReader::new(stdout)), Some(child))
}

fn yuv_to_rgb(
    frame: &y4m::Frame<'_>,
    w: usize,
    h: usize,
    colorspace: y4m::Colorspace,
    full_range: bool,
) -> std::result::Result<RgbImage, String> {
    use y4m::Colorspace as C;
    let y_plane = frame.get_y_plane();
    let mut out = RgbImage::new(w as u32, h as u32);
    if matches!(colorspace, C::Cmono) {
        // Monochrome planes are stored as raw gray levels.
        for (px, &y) in out.pixels_mut().zip(y_plane) {
            *px = image::Rgb([y, y, y]);
        }
        return Ok(out);
    }
    let (sx, sy) = match colorspace {
        C::C420 | C::C420jpeg | C::C420paldv | C::C420mpeg2 => (2, 2),
        C::C422 => (2, 1),
        C::C444 => (1, 1),
        other => return Err(format!("unsupported colorspace {other:?}")),
    };
    let cw = w.div_ceil(sx);
    let (u_plane, v_plane) = (frame.get_u_plane(), frame.get_v_plane());
    for y in 0..h {
        for x in 0..w {
            let luma = y_plane[y * w + x] as f32;
            let ci = (y / sy) * cw + x / sx;
            let (cb, cr) = (u_plane[ci] as f32 - 128.0, v_plane[ci] as f32 - 128.0);
            let (luma, cscale) = if full_range {
                (luma, 1.0)
            } else {
                ((luma - 16.0) * 255.0 / 219.0, 255.0 / 224.0)
            };
            let r = luma + 1.402 * cr * cscale;
            let g = luma - (0.344_136 * cb + 0.714_136 * cr) * cscale;
            let b = luma + 1.772 * cb * cscale;
            out.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([clamp_u8(r), clamp_u8(g), clamp_u8(b)]),
            );
        }
    }
    Ok(out)
}

fn clamp_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Decodes every frame of a clip into memory.
pub fn decode_clip(path: impl AsRef<Path>) -> Result<Vec<RgbImage>> {
    ClipFrames::open(path)?.collect()
}

/// Counts decodable frames without keeping them.
pub fn count_frames(path: impl AsRef<Path>) -> Result<usize> {
    let mut n = 0;
    for frame in ClipFrames::open(path)? {
        frame?;
        n += 1;
    }
    Ok(n)
}

/// Writes frames as a Y4M clip. Gray frames (R = G = B everywhere) are stored
/// losslessly in the monochrome colorspace; anything else as full-range
/// BT.601 4:4:4.
pub fn write_y4m(frames: &[RgbImage], fps: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let Some(first) = frames.first() else {
        return Err(Error::config("cannot write a clip without frames"));
    };
    let (w, h) = first.dimensions();
    if frames.iter().any(|f| f.dimensions() != (w, h)) {
        return Err(Error::config("all clip frames must share one size"));
    }
    let gray = frames
        .iter()
        .all(|f| f.pixels().all(|p| p[0] == p[1] && p[1] == p[2]));
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut builder = y4m::encode(w as usize, h as usize, y4m::Ratio::new(fps.max(1), 1));
    builder = if gray {
        builder.with_colorspace(y4m::Colorspace::Cmono)
    } else {
        builder
            .with_colorspace(y4m::Colorspace::C444)
            .append_vendor_extension(
                y4m::VendorExtensionString::new(b"COLORRANGE=FULL".to_vec())
                    .expect("static extension is valid"),
            )
    };
    let mut writer = BufWriter::new(file);
    let mut encoder = builder
        .write_header(&mut writer)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    let n = (w * h) as usize;
    for f in frames {
        let (yp, up, vp) = if gray {
            (f.pixels().map(|p| p[0]).collect::<Vec<_>>(), Vec::new(), Vec::new())
        } else {
            let mut planes = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
            for p in f.pixels() {
                let [r, g, b] = p.0.map(|v| v as f32);
                planes.0.push(clamp_u8(0.299 * r + 0.587 * g + 0.114 * b));
                planes.1.push(clamp_u8(128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b));
                planes.2.push(clamp_u8(128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b));
            }
            planes
        };
        encoder
            .write_frame(&y4m::Frame::new([&yp, &up, &vp], None))
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Writes frames as an animated GIF (palette-quantized, so lossy for color).
pub fn write_gif(frames: &[RgbImage], fps: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if frames.is_empty() {
        return Err(Error::config("cannot write a clip without frames"));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = GifEncoder::new(BufWriter::new(file));
    let delay = Delay::from_numer_denom_ms(1000, fps.max(1) as u32);
    let gif_frames = frames.iter().map(|f| {
        let rgba: RgbaImage = image::DynamicImage::ImageRgb8(f.clone()).to_rgba8();
        Frame::from_parts(rgba, 0, 0, delay)
    });
    encoder
        .encode_frames(gif_frames)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
