//! Remote video acquisition.

use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use url::Url;

use super::{open_source, VideoSource};
use crate::error::{Error, Result};

/// Default download cap: 512 MiB.
pub const DEFAULT_MAX_BYTES: u64 = 512 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub max_bytes: u64,
    pub timeout: Duration,
}

impl Default for FetchConfig {
    fn default() -> Self {
        FetchConfig { max_bytes: DEFAULT_MAX_BYTES, timeout: Duration::from_secs(300) }
    }
}

/// Transfers the resource at `url` into `dest`, refusing more than `max_bytes`.
pub trait Downloader: Send + Sync {
    fn download(&self, url: &Url, dest: &Path, max_bytes: u64) -> Result<()>;
}

/// Plain HTTP(S) GET.
#[derive(Debug, Clone)]
pub struct HttpDownloader {
    timeout: Duration,
}

impl HttpDownloader {
    pub fn new(timeout: Duration) -> Self {
        HttpDownloader { timeout }
    }
}

impl Downloader for HttpDownloader {
    fn download(&self, url: &Url, dest: &Path, max_bytes: u64) -> Result<()> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        let resp = agent
            .get(url.as_str())
            .call()
            .map_err(|e| Error::Fetch(format!("{url}: {e}")))?;
        let body = resp.into_body();
        if body.content_length().is_some_and(|len| len > max_bytes) {
            return Err(Error::Oversize { cap: max_bytes });
        }
        let mut reader = body.into_reader();
        let mut out = File::create(dest).map_err(Error::io(dest))?;
        let mut buf = vec![0u8; 64 * 1024];
        let mut total = 0u64;
        loop {
            let n = reader.read(&mut buf).map_err(|e| Error::Fetch(format!("{url}: {e}")))?;
            if n == 0 {
                break;
            }
            total += n as u64;
            if total > max_bytes {
                drop(out);
                let _ = fs::remove_file(dest);
                return Err(Error::Oversize { cap: max_bytes });
            }
            out.write_all(&buf[..n]).map_err(Error::io(dest))?;
        }
        Ok(())
    }
}

/// Delegates to an external tool such as `yt-dlp` for hosts that serve
/// pages rather than media files.
#[derive(Debug, Clone)]
pub struct CommandDownloader {
    pub program: String,
}

impl Downloader for CommandDownloader {
    fn download(&self, url: &Url, dest: &Path, max_bytes: u64) -> Result<()> {
        let status = Command::new(&self.program)
            .args(["--quiet", "--no-playlist", "-f", "mp4/best", "--max-filesize"])
            .arg(max_bytes.to_string())
            .arg("-o")
            .arg(dest)
            .arg(url.as_str())
            .status()
            .map_err(|e| Error::Fetch(format!("cannot run {}: {e}", self.program)))?;
        if !status.success() {
            return Err(Error::Fetch(format!("{} failed for {url}", self.program)));
        }
        let size = fs::metadata(dest).map_err(Error::io(dest))?.len();
        if size > max_bytes {
            let _ = fs::remove_file(dest);
            return Err(Error::Oversize { cap: max_bytes });
        }
        Ok(())
    }
}

fn is_video_platform(host: &str) -> bool {
    let host = host.trim_start_matches("www.").trim_start_matches("m.");
    matches!(host, "youtube.com" | "youtu.be" | "music.youtube.com")
}

/// Routes URLs to downloaders.
pub struct Fetcher {
    pub config: FetchConfig,
    http: Box<dyn Downloader>,
    platform: Option<Box<dyn Downloader>>,
}

impl Fetcher {
    pub fn new(config: FetchConfig) -> Self {
        let http = Box::new(HttpDownloader::new(config.timeout));
        Fetcher { config, http, platform: None }
    }

    pub fn with_http(mut self, d: Box<dyn Downloader>) -> Self {
        self.http = d;
        self
    }

    /// Backend for video-platform page URLs (e.g. `yt-dlp`).
    pub fn with_platform(mut self, d: Box<dyn Downloader>) -> Self {
        self.platform = Some(d);
        self
    }

    pub fn fetch(&self, url: &str, workdir: &Path) -> Result<VideoSource> {
        let parsed = Url::parse(url).map_err(|e| Error::Fetch(format!("malformed URL `{url}`: {e}")))?;
        if !matches!(parsed.scheme(), "http" | "https") {
            return Err(Error::Fetch(format!("unsupported scheme `{}`", parsed.scheme())));
        }
        let host = parsed
            .host_str()
            .ok_or_else(|| Error::Fetch(format!("URL `{url}` has no host")))?;
        let backend: &dyn Downloader = if is_video_platform(host) {
            self.platform
                .as_deref()
                .ok_or_else(|| Error::Fetch(format!("unsupported host `{host}`: no platform downloader configured")))?
        } else {
            self.http.as_ref()
        };
        fs::create_dir_all(workdir).map_err(Error::io(workdir))?;
        let dest = workdir.join(local_name(&parsed));
        backend.download(&parsed, &dest, self.config.max_bytes)?;
        let mut source = open_source(&dest)?;
        source.uri = url.to_string();
        Ok(source)
    }
}

fn local_name(url: &Url) -> PathBuf {
    let last = url
        .path_segments()
        .and_then(|mut s| s.next_back())
        .filter(|s| !s.is_empty())
        .unwrap_or("download");
    let safe: String = last
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '_' })
        .collect();
    PathBuf::from(format!("remote_{safe}"))
}

/// Downloads `url` into `workdir` with the default HTTP backend.
pub fn fetch_remote(url: &str, workdir: &Path) -> Result<VideoSource> {
    Fetcher::new(FetchConfig::default()).fetch(url, workdir)
}
