use std::time::Instant;

use comixify_core::aesthetics::AestheticKind;
use comixify_core::ingest::{FetchConfig, Fetcher};
use comixify_core::pipeline::*;
use comixify_core::styletransfer::{GeneratorConfig, GeneratorWeights};
use comixify_core::Error;

fn run(opts: &PipelineOptions, models: &ModelRegistry, input: &InputSpec) -> (tempfile::TempDir, Result<PipelineOutput, StageError>) {
    let dir = tempfile::tempdir().unwrap();
    let fetcher = Fetcher::new(FetchConfig::default());
    let out = run_pipeline(input, opts, models, &dir.path().join("work"), &dir.path().join("out"), &fetcher);
    (dir, out)
}

fn sample() -> InputSpec {
    InputSpec::Sample("four_seasons".into())
}

#[test]
fn sample_video_becomes_one_page() {
    let models = ModelRegistry::seeded();
    let opts = PipelineOptions::default();
    let t0 = Instant::now();
    let (_dir, out) = run(&opts, &models, &sample());
    let wall = t0.elapsed().as_secs_f64();
    let out = out.unwrap();
    assert_eq!(out.k, 8);
    // 20 sampled frames: 4k = 32 is clamped to 16
    assert_eq!(out.n, 16);
    assert_eq!(out.keyframes.frame_indices.len(), 8);
    assert!(out.keyframes.frame_indices.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(out.pages.len(), 1);
    let img = image::open(&out.pages[0]).unwrap();
    assert_eq!(img.width(), 1600);
    let staged: f64 = out.timings.iter().map(|t| t.seconds).sum();
    assert!(staged <= wall && staged >= 0.95 * wall, "stages {staged}s vs wall {wall}s");
    assert_eq!(out.timings.first().unwrap().stage, Stage::Validate);
    assert_eq!(out.timings.last().unwrap().stage, Stage::Compose);
}

#[test]
fn identical_requests_give_identical_pages() {
    let models = ModelRegistry::seeded();
    let opts = PipelineOptions { style: Style::CartoonganHosoda, aesthetic: AestheticKind::Popularity, ..Default::default() };
    let (_a, a) = run(&opts, &models, &sample());
    let (_b, b) = run(&opts, &models, &sample());
    let (a, b) = (a.unwrap(), b.unwrap());
    assert_eq!(a.keyframes, b.keyframes);
    for (pa, pb) in a.pages.iter().zip(&b.pages) {
        assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
    }
}

#[test]
fn option_parsing_and_catalog() {
    assert_eq!(parse_style("cartoongan_hayao").unwrap(), Style::CartoonganHayao);
    assert_eq!(parse_frames_mode("basic_vtw").unwrap(), FramesMode::BasicVtw);
    assert_eq!(parse_aesthetic("popularity").unwrap(), AestheticKind::Popularity);
    match parse_style("picasso") {
        Err(Error::Constraint(m)) => assert!(m.contains("comixgan, cartoongan_hayao, cartoongan_hosoda"), "{m}"),
        other => panic!("{other:?}"),
    }
    let c = option_catalog();
    assert_eq!(c.style.len(), 3);
    assert_eq!(c.frames_mode, vec!["basic", "basic_vtw"]);
    assert_eq!(c.aesthetic, vec!["popularity", "nima"]);
    let json = serde_json::to_value(&c).unwrap();
    assert_eq!(json["defaults"]["style"], "comixgan");
    assert_eq!(json["defaults"]["k"], 8);
    for s in &c.style {
        assert_eq!(serde_json::to_value(parse_style(s).unwrap()).unwrap(), *s);
    }
}

#[test]
fn candidate_count_rules() {
    let o = |k, n| PipelineOptions { k, n, ..Default::default() };
    assert_eq!(o(8, None).resolve_n(40).unwrap(), 32);
    assert_eq!(o(8, None).resolve_n(20).unwrap(), 16);
    assert_eq!(o(3, None).resolve_n(7).unwrap(), 6);
    assert!(matches!(o(8, None).resolve_n(5), Err(Error::Constraint(_))));
    assert_eq!(o(4, Some(12)).resolve_n(12).unwrap(), 12);
    assert!(matches!(o(4, Some(16)).resolve_n(12), Err(Error::Constraint(_))));
    assert!(matches!(o(3, Some(8)).validate(), Err(Error::Constraint(_))));
    assert!(matches!(o(0, None).validate(), Err(Error::Constraint(_))));
}

#[test]
fn invalid_options_fail_in_validation() {
    let models = ModelRegistry::seeded();
    let (_d, out) = run(&PipelineOptions { k: 3, n: Some(8), ..Default::default() }, &models, &sample());
    let err = out.unwrap_err();
    assert_eq!(err.stage, Stage::Validate);
    assert!(matches!(err.error, Error::Constraint(_)));
    let (_d, out) = run(&PipelineOptions::default(), &models, &InputSpec::Sample("nope".into()));
    assert_eq!(out.unwrap_err().stage, Stage::Fetch);
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not a video at all").unwrap();
    let (_d, out) = run(&PipelineOptions::default(), &models, &InputSpec::Path(junk));
    assert!(matches!(out.unwrap_err().error, Error::Decode { .. }));
}

#[test]
fn models_directory_overrides_and_strictness() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(ModelRegistry::load(Some(dir.path()), true), Err(Error::ModelLoad(_))));
    let seeded = ModelRegistry::load(Some(dir.path()), false).unwrap();
    assert!(seeded.origins.values().all(|o| *o == ModelOrigin::Seeded));
    assert_eq!(seeded.origins.len(), 8);

    let g = GeneratorWeights::new(GeneratorConfig { base: 4, res_blocks: 1 }, 99);
    g.save(&dir.path().join("cartoongan_hayao")).unwrap();
    let m = ModelRegistry::load(Some(dir.path()), false).unwrap();
    assert_eq!(m.origins["cartoongan_hayao"], ModelOrigin::Manifest);
    assert_eq!(m.generators[&Style::CartoonganHayao], g);

    // a generator manifest in the wrong slot is rejected, not silently replaced
    g.save(&dir.path().join("nima")).unwrap();
    assert!(matches!(ModelRegistry::load(Some(dir.path()), false), Err(Error::ModelLoad(_))));
}
