mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use flate2::read::MultiGzDecoder;
use reuse_core::fixture::{corpus_from, random_corpus, FixtureRepo, RandomCorpusParams};
use reuse_core::pipeline::{stage_markers, verify};
use reuse_core::{pipeline, Error, PipelineConfig, Stage};
use std::io::Read;
use tempfile::TempDir;

fn config(manifest: &Path, work: &Path, workers: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(manifest, work);
    cfg.workers = workers;
    cfg.max_time = Some(1_800_000_000);
    cfg
}

fn stages(list: &[Stage]) -> BTreeSet<Stage> {
    list.iter().copied().collect()
}

#[test]
fn empty_manifest_gives_empty_outputs() {
    let dir = TempDir::new().unwrap();
    let manifest = dir.path().join("manifest.tsv");
    fs::write(&manifest, "").unwrap();
    let cfg = config(&manifest, &dir.path().join("work"), 2);
    let report = pipeline::run(&cfg).unwrap();
    assert_eq!(report.executed().count(), 5);
    for s in &report.stages {
        for (k, v) in &s.counts {
            if k != "files" && k != "exclusion_list_size" && k != "min_time" && k != "max_time" {
                assert_eq!(*v, 0, "{} {k}", s.stage);
            }
        }
    }
    let files = common::snapshot_dir(&cfg.export_dir());
    assert_eq!(files.len(), 128);
    for bytes in files.values() {
        let mut s = String::new();
        MultiGzDecoder::new(bytes.as_slice()).read_to_string(&mut s).unwrap();
        assert!(s.is_empty());
    }
}

#[test]
fn identical_exports_for_any_worker_count() {
    let dir = TempDir::new().unwrap();
    let corpus = random_corpus(&dir.path().join("repos"), 41, &RandomCorpusParams::default()).unwrap();
    let mut snapshots = Vec::new();
    for workers in [1, 4, 16] {
        let cfg = config(&corpus.manifest, &dir.path().join(format!("w{workers}")), workers);
        pipeline::run(&cfg).unwrap();
        snapshots.push(common::snapshot_dir(&cfg.export_dir()));
    }
    assert!(snapshots[0].values().any(|b| b.len() > 40));
    assert_eq!(snapshots[0], snapshots[1]);
    assert_eq!(snapshots[0], snapshots[2]);
}

#[test]
fn second_run_does_no_work_and_force_redoes_it() {
    let dir = TempDir::new().unwrap();
    let corpus = random_corpus(&dir.path().join("repos"), 42, &RandomCorpusParams::default()).unwrap();
    let mut cfg = config(&corpus.manifest, &dir.path().join("work"), 2);
    let first = pipeline::run(&cfg).unwrap();
    let second = pipeline::run(&cfg).unwrap();
    assert_eq!(second.executed().count(), 0);
    assert_eq!(first.count(Stage::Detect, "instances"), second.count(Stage::Detect, "instances"));
    cfg.force = true;
    assert_eq!(pipeline::run(&cfg).unwrap().executed().count(), 5);
}

#[test]
fn config_changes_invalidate_downstream_stages() {
    let dir = TempDir::new().unwrap();
    let corpus = random_corpus(&dir.path().join("repos"), 43, &RandomCorpusParams::default()).unwrap();
    let mut cfg = config(&corpus.manifest, &dir.path().join("work"), 2);
    pipeline::run(&cfg).unwrap();

    let excl = dir.path().join("exclude.txt");
    fs::write(&excl, "# nothing new\n").unwrap();
    cfg.exclude_blobs_path = Some(excl.clone());
    // same effective list (the empty blob is always in it)
    assert_eq!(pipeline::run(&cfg).unwrap().executed().count(), 0);

    let one = pipeline::read_timeline(&cfg).unwrap().keys().next().unwrap().0;
    fs::write(&excl, format!("{one}\n")).unwrap();
    let ran: Vec<Stage> = pipeline::run(&cfg).unwrap().executed().collect();
    assert_eq!(ran, vec![Stage::Detect, Stage::Export]);

    // a bound above every in-range commit changes no effective time, so the
    // timeline output hash is unchanged and detection is reused
    cfg.max_time = Some(1_700_000_000);
    let ran: Vec<Stage> = pipeline::run(&cfg).unwrap().executed().collect();
    assert_eq!(ran, vec![Stage::Timeline]);

    cfg.max_time = Some(1_300_000_000);
    let ran: Vec<Stage> = pipeline::run(&cfg).unwrap().executed().collect();
    assert_eq!(ran, vec![Stage::Timeline, Stage::Detect, Stage::Export]);

    cfg.tag = "v2".into();
    let ran: Vec<Stage> = pipeline::run(&cfg).unwrap().executed().collect();
    assert_eq!(ran, vec![Stage::Export]);
    assert!(cfg.export_dir().join("Ptb2PtFull.v2.0.gz").exists());
    assert!(!cfg.export_dir().join("Ptb2PtFull.local.0.gz").exists());
}

#[test]
fn missing_prerequisite_names_the_stage() {
    let dir = TempDir::new().unwrap();
    let corpus = random_corpus(&dir.path().join("repos"), 44, &RandomCorpusParams::default()).unwrap();
    let mut cfg = config(&corpus.manifest, &dir.path().join("work"), 1);
    cfg.stages = stages(&[Stage::Timeline]);
    match pipeline::run(&cfg) {
        Err(Error::MissingStage(s)) => assert_eq!(s, "ingest"),
        other => panic!("{other:?}"),
    }
    cfg.stages = stages(&[Stage::Ingest]);
    pipeline::run(&cfg).unwrap();
    cfg.stages = stages(&[Stage::Detect]);
    match pipeline::run(&cfg) {
        Err(Error::MissingStage(s)) => assert_eq!(s, "timeline"),
        other => panic!("{other:?}"),
    }
}

/// Leaves `stage` half-done: some of its files copied from a finished run,
/// one of them truncated, and no marker.
fn plant_partial_stage(finished: &Path, target: &Path, stage: &str) {
    let src = finished.join(stage);
    let dst = target.join(stage);
    fs::create_dir_all(&dst).unwrap();
    let mut names: Vec<_> = fs::read_dir(&src).unwrap().flatten().filter(|e| e.path().is_file()).collect();
    names.sort_by_key(|e| e.file_name());
    for (i, e) in names.iter().enumerate().take(names.len() / 2) {
        let bytes = fs::read(e.path()).unwrap();
        let keep = if i == 0 { bytes.len() / 2 } else { bytes.len() };
        fs::write(dst.join(e.file_name()), &bytes[..keep]).unwrap();
    }
    fs::write(dst.join("junk.gz"), b"not gzip").unwrap();
}

#[test]
fn interrupted_runs_resume_to_identical_output() {
    let dir = TempDir::new().unwrap();
    let corpus = random_corpus(&dir.path().join("repos"), 45, &RandomCorpusParams::default()).unwrap();
    let clean = config(&corpus.manifest, &dir.path().join("clean"), 4);
    pipeline::run(&clean).unwrap();
    let want = common::snapshot_dir(&clean.export_dir());

    for (i, prefix) in Stage::ALL.iter().enumerate() {
        let mut cfg = config(&corpus.manifest, &dir.path().join(format!("resume{i}")), 1 + i);
        cfg.stages = Stage::ALL[..i].iter().copied().collect();
        if !cfg.stages.is_empty() {
            pipeline::run(&cfg).unwrap();
        }
        plant_partial_stage(&clean.work_dir, &cfg.work_dir, prefix.name());
        cfg.stages = Stage::ALL.iter().copied().collect();
        let report = pipeline::run(&cfg).unwrap();
        assert_eq!(report.executed().count(), 5 - i);
        assert_eq!(common::snapshot_dir(&cfg.export_dir()), want, "resumed at {prefix}");
        assert!(stage_markers(&cfg.work_dir).unwrap().iter().all(|(_, m)| m.is_some()));
    }
}

#[test]
fn verify_catches_a_deleted_export_line() {
    let dir = TempDir::new().unwrap();
    let mut a = FixtureRepo::init(dir.path().join("a"), "orig_a").unwrap();
    let ca = a.commit(&[], 1_500_000_000, &[("x.c", "shared\n")]).unwrap();
    a.branch("main", ca).unwrap();
    let mut b = FixtureRepo::init(dir.path().join("b"), "copy_b").unwrap();
    let cb = b.commit(&[], 1_500_000_000 + 30 * 86_400, &[("y.c", "shared\n")]).unwrap();
    b.branch("main", cb).unwrap();
    let corpus = corpus_from(dir.path(), &[a, b]).unwrap();
    let cfg = config(&corpus.manifest, &dir.path().join("work"), 2);

    let report = verify(&cfg).unwrap();
    assert!(report.passed(), "{report}");
    assert_eq!(report.pipeline_instances, 1);

    let file = cfg
        .export_dir()
        .join(format!("Ptb2PtFull.local.{}.gz", reuse_core::partition_by_name("orig_a").index()));
    let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
    std::io::Write::write_all(&mut enc, b"").unwrap();
    fs::write(&file, enc.finish().unwrap()).unwrap();

    let report = verify(&cfg).unwrap();
    assert!(!report.passed());
    assert_eq!(report.missing.len(), 1);
    assert_eq!(report.missing[0].project_o, "orig_a");
    assert!(report.unexpected.is_empty());
}

#[test]
fn verify_refuses_oversized_corpora() {
    let dir = TempDir::new().unwrap();
    let corpus = random_corpus(&dir.path().join("repos"), 46, &RandomCorpusParams::default()).unwrap();
    let cfg = config(&corpus.manifest, &dir.path().join("work"), 1);
    match pipeline::verify_with_limit(&cfg, 10) {
        Err(Error::OracleTooLarge { commits, limit }) => {
            assert_eq!(limit, 10);
            // shared fork history counts once
            let reachable: BTreeSet<String> = corpus
                .repos
                .iter()
                .flat_map(|(_, path)| {
                    let out = std::process::Command::new("git")
                        .arg("-C")
                        .arg(path)
                        .args(["rev-list", "--branches", "--tags"])
                        .output()
                        .unwrap();
                    String::from_utf8(out.stdout).unwrap().lines().map(str::to_owned).collect::<Vec<_>>()
                })
                .collect();
            assert_eq!(commits, reachable.len());
        }
        other => panic!("{other:?}"),
    }
}
