//! Bundled sample videos.
//!
//! Samples are rendered procedurally so the repository carries no binary
//! media; `materialize` writes them out as YUV4MPEG2 on first use.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::write_y4m;
use crate::error::{Error, Result};
use crate::frame::Frame;

const WIDTH: u32 = 160;
const HEIGHT: u32 = 112;
const FPS: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleInfo {
    pub name: &'static str,
    pub duration_s: f64,
    pub description: &'static str,
}

/// A scene: background gradient endpoints plus a moving disc colour.
struct Scene {
    top: [f32; 3],
    bottom: [f32; 3],
    disc: [f32; 3],
    stripes: bool,
}

struct Spec {
    info: SampleInfo,
    scenes: &'static [Scene],
}

const FOUR_SCENES: &[Scene] = &[
    Scene { top: [0.35, 0.6, 0.95], bottom: [0.9, 0.95, 1.0], disc: [1.0, 0.85, 0.1], stripes: false },
    Scene { top: [0.05, 0.35, 0.1], bottom: [0.3, 0.7, 0.2], disc: [0.8, 0.1, 0.1], stripes: true },
    Scene { top: [0.1, 0.05, 0.2], bottom: [0.45, 0.1, 0.4], disc: [0.95, 0.95, 0.95], stripes: false },
    Scene { top: [0.85, 0.55, 0.2], bottom: [0.95, 0.85, 0.55], disc: [0.1, 0.2, 0.6], stripes: true },
];

const TWO_SCENES: &[Scene] = &[
    Scene { top: [0.7, 0.1, 0.1], bottom: [0.2, 0.0, 0.0], disc: [0.2, 0.9, 0.9], stripes: true },
    Scene { top: [0.9, 0.9, 0.85], bottom: [0.6, 0.6, 0.55], disc: [0.05, 0.05, 0.05], stripes: false },
];

const SAMPLES: &[Spec] = &[
    Spec {
        info: SampleInfo { name: "four_seasons", duration_s: 10.0, description: "Four visually distinct scenes, 2.5 s each" },
        scenes: FOUR_SCENES,
    },
    Spec {
        info: SampleInfo { name: "red_and_white", duration_s: 6.0, description: "Two contrasting scenes, 3 s each" },
        scenes: TWO_SCENES,
    },
];

/// Bundled samples in a stable order.
pub fn list() -> Vec<SampleInfo> {
    SAMPLES.iter().map(|s| s.info).collect()
}

fn find(name: &str) -> Result<&'static Spec> {
    SAMPLES.iter().find(|s| s.info.name == name).ok_or_else(|| {
        let known: Vec<_> = SAMPLES.iter().map(|s| s.info.name).collect();
        Error::Precondition(format!("unknown sample `{name}`; available: {}", known.join(", ")))
    })
}

fn lerp(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn render(scene: &Scene, phase: f32) -> Frame {
    let (w, h) = (WIDTH as f32, HEIGHT as f32);
    let cx = w * (0.2 + 0.6 * phase);
    let cy = h * (0.5 + 0.25 * (phase * std::f32::consts::TAU).sin());
    let r = h * 0.18;
    Frame::from_fn(WIDTH, HEIGHT, |x, y| {
        let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
        let mut c = lerp(scene.top, scene.bottom, fy / h);
        if scene.stripes && ((x + y) / 12) % 2 == 0 {
            c = lerp(c, [0.0; 3], 0.25);
        }
        if (fx - cx).powi(2) + (fy - cy).powi(2) <= r * r {
            c = scene.disc;
        }
        c
    })
}

/// Renders every frame of sample `name`.
pub fn frames(name: &str) -> Result<Vec<Frame>> {
    let spec = find(name)?;
    let total = (spec.info.duration_s * FPS as f64).round() as usize;
    let per_scene = total / spec.scenes.len();
    Ok((0..total)
        .map(|i| {
            let s = (i / per_scene).min(spec.scenes.len() - 1);
            let phase = (i - s * per_scene) as f32 / per_scene as f32;
            render(&spec.scenes[s], phase)
        })
        .collect())
}

/// Writes sample `name` to `dir/<name>.y4m` unless it already exists.
pub fn materialize(name: &str, dir: &Path) -> Result<PathBuf> {
    find(name)?;
    let path = dir.join(format!("{name}.y4m"));
    if path.exists() {
        return Ok(path);
    }
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    // Write under a temporary name so concurrent callers never see a partial file.
    let tmp = dir.join(format!(".{name}.{}.y4m.part", std::process::id()));
    write_y4m(&tmp, frames(name)?, FPS)?;
    fs::rename(&tmp, &path).map_err(Error::io(&path))?;
    Ok(path)
}
