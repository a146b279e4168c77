//! MP4/WebM/MKV decoding through the `ffmpeg`/`ffprobe` command-line tools.
//!
//! Frames are assumed to be constant-rate; presentation times are derived
//! from the stream's average frame rate.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};

use super::{DecodedFrame, VideoDecoder};
use crate::error::{Error, Result};
use crate::frame::Frame;

#[derive(Debug, Clone, Copy, Default)]
pub struct FfmpegDecoder;

impl FfmpegDecoder {
    /// Whether both `ffmpeg` and `ffprobe` can be executed.
    pub fn available() -> bool {
        ["ffmpeg", "ffprobe"].iter().all(|bin| {
            Command::new(bin)
                .arg("-version")
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .status()
                .is_ok_and(|s| s.success())
        })
    }
}

fn decode_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Decode { path: path.into(), reason: e.to_string() }
}

fn parse_rate(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((n, d)) => {
            let (n, d) = (n.parse::<f64>().ok()?, d.parse::<f64>().ok()?);
            (d != 0.0 && n > 0.0).then_some(n / d)
        }
        None => s.parse().ok().filter(|v: &f64| *v > 0.0),
    }
}

struct StreamInfo {
    width: usize,
    height: usize,
    fps: f64,
    duration: f64,
}

fn probe_stream(path: &Path) -> Result<StreamInfo> {
    let out = Command::new("ffprobe")
        .args(["-v", "error", "-select_streams", "v:0", "-show_entries"])
        .arg("stream=width,height,avg_frame_rate,duration:format=duration")
        .args(["-of", "json"])
        .arg(path)
        .output()
        .map_err(|e| decode_err(path, format!("cannot run ffprobe: {e}")))?;
    if !out.status.success() {
        return Err(decode_err(path, String::from_utf8_lossy(&out.stderr).trim()));
    }
    let v: serde_json::Value = serde_json::from_slice(&out.stdout)?;
    let stream = v["streams"].get(0).ok_or_else(|| decode_err(path, "no video stream"))?;
    let width = stream["width"].as_u64().ok_or_else(|| decode_err(path, "missing width"))? as usize;
    let height = stream["height"].as_u64().ok_or_else(|| decode_err(path, "missing height"))? as usize;
    let fps = stream["avg_frame_rate"]
        .as_str()
        .and_then(parse_rate)
        .ok_or_else(|| decode_err(path, "missing frame rate"))?;
    let duration = stream["duration"]
        .as_str()
        .or_else(|| v["format"]["duration"].as_str())
        .and_then(|s| s.parse::<f64>().ok())
        .ok_or_else(|| decode_err(path, "missing duration"))?;
    Ok(StreamInfo { width, height, fps, duration })
}

impl VideoDecoder for FfmpegDecoder {
    fn name(&self) -> &'static str {
        "ffmpeg"
    }

    fn probe(&self, path: &Path) -> Result<(f64, f64)> {
        let info = probe_stream(path)?;
        Ok((info.duration, info.fps))
    }

    fn decode(&self, path: &Path, sink: &mut dyn FnMut(DecodedFrame) -> bool) -> Result<()> {
        let info = probe_stream(path)?;
        let mut child = Command::new("ffmpeg")
            .args(["-v", "error", "-nostdin", "-i"])
            .arg(path)
            .args(["-map", "0:v:0", "-fps_mode", "passthrough", "-f", "rawvideo", "-pix_fmt", "rgb24", "-"])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| decode_err(path, format!("cannot run ffmpeg: {e}")))?;
        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut buf = vec![0u8; info.width * info.height * 3];
        let mut index = 0usize;
        loop {
            match stdout.read_exact(&mut buf) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(decode_err(path, e)),
            }
            let data = buf.iter().map(|&b| b as f32 / 255.0).collect();
            let frame = Frame::new(info.width as u32, info.height as u32, data)?;
            if !sink(DecodedFrame { pts_s: index as f64 / info.fps, frame }) {
                break;
            }
            index += 1;
        }
        drop(stdout);
        let _ = child.kill();
        let _ = child.wait();
        if index == 0 {
            return Err(decode_err(path, "ffmpeg produced no frames"));
        }
        Ok(())
    }
}
