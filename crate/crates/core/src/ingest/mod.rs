//! Video acquisition and fixed-rate frame sampling.

mod ffmpeg;
mod fetch;
pub mod samples;
mod y4m;

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use self::fetch::{fetch_remote, CommandDownloader, Downloader, FetchConfig, Fetcher, HttpDownloader, DEFAULT_MAX_BYTES};
pub use self::ffmpeg::FfmpegDecoder;
pub use self::y4m::{write_y4m, Y4mDecoder};

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Default sampling rate for keyframe extraction.
pub const DEFAULT_SAMPLE_FPS: f64 = 2.0;

/// Slack used when comparing sample times against decoder timestamps.
const TIME_EPS: f64 = 1e-9;

/// A decodable local video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSource {
    /// Where the video came from: a local path or the URL it was fetched from.
    pub uri: String,
    /// Local file holding the container.
    pub path: PathBuf,
    pub duration_s: f64,
    pub native_fps: f64,
}

/// Frames sampled at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Frame>,
    pub timestamps_s: Vec<f64>,
    pub sample_fps: f64,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// A decoded frame with its presentation time.
#[derive(Debug, Clone)]
pub struct DecodedFrame {
    pub pts_s: f64,
    pub frame: Frame,
}

/// Container/codec backend.
pub trait VideoDecoder: Send + Sync {
    fn name(&self) -> &'static str;

    /// Duration in seconds and native frame rate.
    fn probe(&self, path: &Path) -> Result<(f64, f64)>;

    /// Streams frames in presentation order until the sink returns `false`.
    fn decode(&self, path: &Path, sink: &mut dyn FnMut(DecodedFrame) -> bool) -> Result<()>;
}

/// Picks a backend for `path`: YUV4MPEG2 is decoded natively, anything else
/// goes through the `ffmpeg` command-line tools when they are installed.
pub fn decoder_for(path: &Path) -> Result<Box<dyn VideoDecoder>> {
    let mut magic = [0u8; 9];
    let n = File::open(path)
        .and_then(|mut f| f.read(&mut magic))
        .map_err(Error::io(path))?;
    if n == 0 {
        return Err(Error::Decode { path: path.into(), reason: "file is empty".into() });
    }
    if &magic[..n] == b"YUV4MPEG2" {
        return Ok(Box::new(Y4mDecoder));
    }
    if FfmpegDecoder::available() {
        return Ok(Box::new(FfmpegDecoder));
    }
    Err(Error::Decode {
        path: path.into(),
        reason: "unrecognised container and no ffmpeg on PATH".into(),
    })
}

/// Probes a local file.
pub fn open_source(path: &Path) -> Result<VideoSource> {
    let dec = decoder_for(path)?;
    let (duration_s, native_fps) = dec.probe(path)?;
    Ok(VideoSource {
        uri: path.display().to_string(),
        path: path.to_path_buf(),
        duration_s,
        native_fps,
    })
}

/// Sample times `0, 1/fps, 2/fps, …` strictly below `duration_s`.
pub fn sample_times(duration_s: f64, sample_fps: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut j = 0u64;
    loop {
        let t = j as f64 / sample_fps;
        if t >= duration_s - TIME_EPS {
            return out;
        }
        out.push(t);
        j += 1;
    }
}

/// Samples `source` at `sample_fps`, using for every target time the latest
/// decoded frame presented at or before it.
pub fn sample_frames(source: &VideoSource, sample_fps: f64) -> Result<FrameSequence> {
    if !(sample_fps > 0.0) {
        return Err(Error::Precondition(format!("sample_fps must be positive, got {sample_fps}")));
    }
    if !(source.duration_s > 0.0) {
        return Err(Error::EmptyInput(format!("{} has zero duration", source.uri)));
    }
    let dec = decoder_for(&source.path)?;
    let targets = sample_times(source.duration_s, sample_fps);
    let mut frames = Vec::with_capacity(targets.len());
    let mut prev: Option<DecodedFrame> = None;
    dec.decode(&source.path, &mut |df| {
        while frames.len() < targets.len() && targets[frames.len()] < df.pts_s - TIME_EPS {
            // No frame at or before the very first target: fall back to the first frame.
            let pick = prev.as_ref().map_or(&df.frame, |p| &p.frame);
            frames.push(pick.clone());
        }
        prev = Some(df);
        frames.len() < targets.len()
    })?;
    if let Some(last) = prev {
        let end = last.pts_s + 1.0 / source.native_fps;
        while frames.len() < targets.len() && targets[frames.len()] < end - TIME_EPS {
            frames.push(last.frame.clone());
        }
    }
    if frames.is_empty() {
        return Err(Error::EmptyInput(format!("no frames decoded from {}", source.uri)));
    }
    let timestamps_s = targets[..frames.len()].to_vec();
    Ok(FrameSequence { frames, timestamps_s, sample_fps })
}
