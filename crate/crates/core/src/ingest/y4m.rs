//! Native YUV4MPEG2 support (8-bit mono, 4:2:0, 4:2:2 and 4:4:4).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use y4m::Colorspace;

use super::{DecodedFrame, VideoDecoder};
use crate::error::{Error, Result};
use crate::frame::Frame;

#[derive(Debug, Clone, Copy, Default)]
pub struct Y4mDecoder;

fn decode_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Decode { path: path.into(), reason: e.to_string() }
}

fn open(path: &Path) -> Result<y4m::Decoder<BufReader<File>>> {
    let f = File::open(path).map_err(Error::io(path))?;
    y4m::decode(BufReader::new(f)).map_err(|e| decode_err(path, format!("{e:?}")))
}

/// Chroma subsampling factors (x, y); `None` for monochrome.
fn subsampling(cs: Colorspace) -> Option<Option<(usize, usize)>> {
    match cs {
        Colorspace::Cmono => Some(None),
        Colorspace::C420 | Colorspace::C420jpeg | Colorspace::C420paldv | Colorspace::C420mpeg2 => {
            Some(Some((2, 2)))
        }
        Colorspace::C422 => Some(Some((2, 1))),
        Colorspace::C444 => Some(Some((1, 1))),
        _ => None,
    }
}

fn fps_of(dec: &y4m::Decoder<BufReader<File>>, path: &Path) -> Result<f64> {
    let r = dec.get_framerate();
    if r.num == 0 || r.den == 0 {
        return Err(decode_err(path, "invalid frame rate"));
    }
    Ok(r.num as f64 / r.den as f64)
}

/// BT.601 limited-range YCbCr to RGB in [0,1].
fn ycbcr_to_rgb(y: u8, cb: u8, cr: u8) -> [f32; 3] {
    let y = (y as f32 - 16.0) * (255.0 / 219.0);
    let cb = (cb as f32 - 128.0) * (255.0 / 224.0);
    let cr = (cr as f32 - 128.0) * (255.0 / 224.0);
    let r = y + 1.402 * cr;
    let g = y - 0.344_136 * cb - 0.714_136 * cr;
    let b = y + 1.772 * cb;
    [(r / 255.0).clamp(0.0, 1.0), (g / 255.0).clamp(0.0, 1.0), (b / 255.0).clamp(0.0, 1.0)]
}

fn rgb_to_ycbcr(p: [f32; 3]) -> [f32; 3] {
    let [r, g, b] = p;
    [
        16.0 + 65.481 * r + 128.553 * g + 24.966 * b,
        128.0 - 37.797 * r - 74.203 * g + 112.0 * b,
        128.0 + 112.0 * r - 93.786 * g - 18.214 * b,
    ]
}

impl VideoDecoder for Y4mDecoder {
    fn name(&self) -> &'static str {
        "y4m"
    }

    fn probe(&self, path: &Path) -> Result<(f64, f64)> {
        let mut dec = open(path)?;
        let fps = fps_of(&dec, path)?;
        let mut count = 0usize;
        loop {
            match dec.read_frame() {
                Ok(_) => count += 1,
                Err(y4m::Error::EOF) => break,
                Err(e) => return Err(decode_err(path, format!("frame {count}: {e:?}"))),
            }
        }
        Ok((count as f64 / fps, fps))
    }

    fn decode(&self, path: &Path, sink: &mut dyn FnMut(DecodedFrame) -> bool) -> Result<()> {
        let mut dec = open(path)?;
        let fps = fps_of(&dec, path)?;
        let (w, h) = (dec.get_width(), dec.get_height());
        let sub = subsampling(dec.get_colorspace())
            .ok_or_else(|| decode_err(path, format!("unsupported colorspace {:?}", dec.get_colorspace())))?;
        let mut index = 0usize;
        loop {
            let frame = match dec.read_frame() {
                Ok(f) => f,
                Err(y4m::Error::EOF) => return Ok(()),
                Err(e) => return Err(decode_err(path, format!("frame {index}: {e:?}"))),
            };
            let yp = frame.get_y_plane();
            let (up, vp) = (frame.get_u_plane(), frame.get_v_plane());
            let rgb = Frame::from_fn(w as u32, h as u32, |x, y| {
                let (x, y) = (x as usize, y as usize);
                let luma = yp[y * w + x];
                match sub {
                    None => ycbcr_to_rgb(luma, 128, 128),
                    Some((sx, sy)) => {
                        let cw = w.div_ceil(sx);
                        let ci = (y / sy) * cw + x / sx;
                        ycbcr_to_rgb(luma, up[ci], vp[ci])
                    }
                }
            });
            let keep_going = sink(DecodedFrame { pts_s: index as f64 / fps, frame: rgb });
            index += 1;
            if !keep_going {
                return Ok(());
            }
        }
    }
}

/// Encodes frames as 4:2:0 YUV4MPEG2 at an integer frame rate.
pub fn write_y4m(path: &Path, frames: impl IntoIterator<Item = Frame>, fps: u32) -> Result<()> {
    let mut frames = frames.into_iter().peekable();
    let first = frames
        .peek()
        .ok_or_else(|| Error::EmptyInput("no frames to encode".into()))?;
    let (w, h) = (first.width() as usize, first.height() as usize);
    let file = File::create(path).map_err(Error::io(path))?;
    let mut enc = y4m::encode(w, h, y4m::Ratio::new(fps as usize, 1))
        .with_colorspace(Colorspace::C420jpeg)
        .write_header(BufWriter::new(file))
        .map_err(|e| decode_err(path, format!("{e:?}")))?;
    let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
    for f in frames {
        if (f.width() as usize, f.height() as usize) != (w, h) {
            return Err(Error::Shape("all frames of a video must share one size".into()));
        }
        let mut yp = vec![0u8; w * h];
        let mut acc = vec![[0f32; 3]; cw * ch];
        let mut cnt = vec![0f32; cw * ch];
        for y in 0..h {
            for x in 0..w {
                let ycc = rgb_to_ycbcr(f.pixel(x as u32, y as u32));
                yp[y * w + x] = ycc[0].round().clamp(0.0, 255.0) as u8;
                let ci = (y / 2) * cw + x / 2;
                acc[ci][1] += ycc[1];
                acc[ci][2] += ycc[2];
                cnt[ci] += 1.0;
            }
        }
        let up: Vec<u8> = acc.iter().zip(&cnt).map(|(a, c)| (a[1] / c).round().clamp(0.0, 255.0) as u8).collect();
        let vp: Vec<u8> = acc.iter().zip(&cnt).map(|(a, c)| (a[2] / c).round().clamp(0.0, 255.0) as u8).collect();
        enc.write_frame(&y4m::Frame::new([&yp, &up, &vp], None))
            .map_err(|e| decode_err(path, format!("{e:?}")))?;
    }
    drop(enc);
    Ok(())
}
