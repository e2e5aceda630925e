use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use stitchpipe::error::Error;
use stitchpipe::io::{read_frames_dir, read_png, write_png};
use stitchpipe::model::Backend;
use stitchpipe::pipeline::{load_backend, run_all, run_stage, Ablation, PipelineConfig, Stage, MANIFEST_FILE};
use stitchpipe::toy::{build_toy_models, save_toy_models, write_toy_clip, DEFAULT_TOY_SEED};

struct Fixture {
    _dir: tempfile::TempDir,
    backend_dir: PathBuf,
    backend: Backend,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let backend_dir = dir.path().join("toy");
        save_toy_models(&build_toy_models(DEFAULT_TOY_SEED).unwrap(), &backend_dir).unwrap();
        let backend = load_backend(&backend_dir).unwrap();
        Fixture {
            _dir: dir,
            backend_dir,
            backend,
        }
    })
}

/// A short clip with cut-down tuning so the cache logic is cheap to exercise.
fn quick_config(dir: &Path, seed: u64) -> PipelineConfig {
    let path = write_toy_clip(dir, &fixture().backend_dir, seed, 4, "grow_radius").unwrap();
    let mut cfg = PipelineConfig::load(&path).unwrap();
    cfg.pti.passes_per_frame = 4;
    cfg.stitch.iterations = 10;
    cfg
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn second_run_is_served_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), 21);
    let b = &fixture().backend;
    let first = run_all(&cfg, b).unwrap();
    assert!(first.outcomes.iter().all(|o| !o.cached));
    assert_eq!(first.outcomes.len(), Stage::ALL.len());
    let second = run_all(&cfg, b).unwrap();
    assert!(second.outcomes.iter().all(|o| o.cached));
    assert_eq!(first.frames, second.frames);
    assert_eq!(first.report, second.report);

    // every file in the workdir is accounted for by the manifest
    let mut listed: Vec<PathBuf> = second
        .manifest
        .stages
        .values()
        .flat_map(|a| a.outputs.iter().cloned())
        .collect();
    listed.push(MANIFEST_FILE.into());
    listed.sort();
    assert_eq!(files_under(&cfg.workdir), listed);
    let prov = second.manifest.provenance.unwrap();
    assert_eq!(prov.config, cfg);
    assert_ne!(prov.theta0_tag, prov.theta_p_tag);
}

#[test]
fn editing_requires_tuning_unless_ablated() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_config(dir.path(), 22);
    let b = &fixture().backend;
    run_stage(Stage::Align, &cfg, b).unwrap();
    run_stage(Stage::Invert, &cfg, b).unwrap();
    match run_stage(Stage::Edit, &cfg, b) {
        Err(Error::Dependency { stage, missing }) => {
            assert_eq!(stage, "edit");
            assert_eq!(missing, "tune");
        }
        other => panic!("expected a dependency error, got {other:?}"),
    }
    cfg.ablation = Ablation {
        no_pti: true,
        ..Ablation::default()
    };
    assert!(matches!(run_stage(Stage::Tune, &cfg, b), Err(Error::Config(_))));
    let edit = run_stage(Stage::Edit, &cfg, b).unwrap();
    assert!(!edit.cached);
    assert_eq!(edit.artifact.version_tag, b.theta0.version_tag);
}

#[test]
fn changed_inputs_and_tampered_outputs_are_stale() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), 23);
    let b = &fixture().backend;
    for s in [Stage::Align, Stage::Invert] {
        run_stage(s, &cfg, b).unwrap();
    }

    // tamper with a pivot file
    let pivots = cfg.workdir.join("invert").join("pivots.bin");
    let mut bytes = std::fs::read(&pivots).unwrap();
    bytes[0] ^= 1;
    std::fs::write(&pivots, &bytes).unwrap();
    match run_stage(Stage::Tune, &cfg, b) {
        Err(Error::StaleCache { stage, .. }) => assert_eq!(stage, "invert"),
        other => panic!("expected a stale cache error, got {other:?}"),
    }
    assert!(!run_stage(Stage::Invert, &cfg, b).unwrap().cached);
    assert!(run_stage(Stage::Invert, &cfg, b).unwrap().cached);

    // change an input frame
    let frame = cfg.frames_dir.join("000001.png");
    let mut img = read_png(&frame).unwrap();
    img.set(0, 0, 0, 1.0 - img.get(0, 0, 0));
    write_png(&frame, &img).unwrap();
    match run_stage(Stage::Tune, &cfg, b) {
        Err(Error::StaleCache { stage, .. }) => assert_eq!(stage, "align"),
        other => panic!("expected a stale cache error, got {other:?}"),
    }
    assert!(!run_stage(Stage::Align, &cfg, b).unwrap().cached);
}

#[test]
fn ablated_run_skips_disabled_stages() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_config(dir.path(), 24);
    cfg.ablation.no_stitch = true;
    let out = run_all(&cfg, &fixture().backend).unwrap();
    let ran: Vec<Stage> = out.outcomes.iter().map(|o| o.artifact.stage).collect();
    assert!(!ran.contains(&Stage::Stitch));
    assert!(!cfg.workdir.join("stitch").exists());
    let original = read_frames_dir(&cfg.frames_dir).unwrap();
    assert_eq!(out.frames.len(), original.len());
}

fn file_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    files_under(root)
        .into_iter()
        .filter(|p| p != Path::new(MANIFEST_FILE))
        .map(|p| {
            let b = std::fs::read(root.join(&p)).unwrap();
            (p, b)
        })
        .collect()
}

#[test]
fn deleted_workdir_reruns_to_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), 25);
    let b = &fixture().backend;
    let first = run_all(&cfg, b).unwrap();
    let before = file_bytes(&cfg.workdir);
    std::fs::remove_dir_all(&cfg.workdir).unwrap();
    let second = run_all(&cfg, b).unwrap();
    assert!(second.outcomes.iter().all(|o| !o.cached));
    assert_eq!(file_bytes(&cfg.workdir), before);
    assert_eq!(first.frames, second.frames);
    assert_eq!(first.report, second.report);
    assert_eq!(first.manifest, second.manifest);
}
