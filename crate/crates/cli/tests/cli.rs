use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use reuse_core::fixture::{corpus_from, synthetic_corpus, FixtureRepo};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_reuse-tracer");

fn tracer(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn pipeline_args<'a>(manifest: &'a str, work: &'a str) -> Vec<&'a str> {
    vec!["--manifest", manifest, "--work-dir", work, "--max-time", "1800000000"]
}

fn planted_copy(dir: &Path) -> String {
    let mut a = FixtureRepo::init(dir.join("a"), "first_author").unwrap();
    let c = a.commit(&[], 1_500_000_000, &[("lib.c", "int lib;\n"), ("own.c", "a\n")]).unwrap();
    a.branch("main", c).unwrap();
    let mut b = FixtureRepo::init(dir.join("b"), "later_user").unwrap();
    let c = b.commit(&[], 1_500_000_000 + 30 * 86_400, &[("vendor/lib.c", "int lib;\n")]).unwrap();
    b.branch("main", c).unwrap();
    corpus_from(dir, &[a, b]).unwrap().manifest.display().to_string()
}

fn export_bytes(work: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(work.join("export"))
        .unwrap()
        .flatten()
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(tracer(&["--help"]).status.code(), Some(0));
    assert_eq!(tracer(&["--version"]).status.code(), Some(0));
    assert_eq!(tracer(&[]).status.code(), Some(1));
    assert_eq!(tracer(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(tracer(&["run", "--manifest", "m"]).status.code(), Some(1));
    let base = ["run", "--manifest", "m", "--work-dir", "w"];
    let with = |extra: &[&'static str]| [&base[..], extra].concat();
    assert_eq!(tracer(&with(&["--workers", "0"])).status.code(), Some(1));
    assert_eq!(tracer(&with(&["--stages", "ingest,bogus"])).status.code(), Some(1));
    assert_eq!(tracer(&with(&["--min-time", "100", "--max-time", "100"])).status.code(), Some(1));
}

#[test]
fn empty_manifest_succeeds_with_zero_counts() {
    let dir = TempDir::new().unwrap();
    let manifest = dir.path().join("m.tsv");
    fs::write(&manifest, "# nothing yet\n").unwrap();
    let work = dir.path().join("w");
    let (m, w) = (manifest.display().to_string(), work.display().to_string());
    let mut args = vec!["run", "--workers", "3"];
    args.extend(pipeline_args(&m, &w));
    let out = tracer(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("instances                0"), "{text}");
    assert!(text.contains("lines                    0"), "{text}");
    assert_eq!(export_bytes(&work).len(), 128);
}

#[test]
fn rerun_is_a_no_op_and_report_lists_markers() {
    let dir = TempDir::new().unwrap();
    let manifest = planted_copy(dir.path());
    let work = dir.path().join("w").display().to_string();
    let mut args = vec!["run"];
    args.extend(pipeline_args(&manifest, &work));
    assert_eq!(tracer(&args).status.code(), Some(0));
    let again = stdout(&tracer(&args));
    assert_eq!(again.matches("(up to date)").count(), 5, "{again}");

    let report = stdout(&tracer(&["report", "--work-dir", &work]));
    assert_eq!(report.matches(": complete").count(), 5, "{report}");
    assert!(report.contains("instances                1"), "{report}");
}

#[test]
fn export_requires_detection() {
    let dir = TempDir::new().unwrap();
    let manifest = planted_copy(dir.path());
    let work = dir.path().join("w").display().to_string();
    let mut args = vec!["export"];
    args.extend(pipeline_args(&manifest, &work));
    let out = tracer(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("detect"));

    let mut run = vec!["run", "--stages", "ingest,defork,timeline,detect"];
    run.extend(pipeline_args(&manifest, &work));
    assert_eq!(tracer(&run).status.code(), Some(0));
    assert!(!Path::new(&work).join("export").exists());
    args.extend(["--tag", "2024-01"]);
    assert_eq!(tracer(&args).status.code(), Some(0));
    assert_eq!(
        export_bytes(Path::new(&work))
            .keys()
            .filter(|k| k.starts_with("Ptb2PtFull.2024-01."))
            .count(),
        128
    );
}

#[test]
fn verify_passes_then_detects_a_deleted_line() {
    let dir = TempDir::new().unwrap();
    let manifest = planted_copy(dir.path());
    let work = dir.path().join("w");
    let mut args = vec!["verify"];
    let w = work.display().to_string();
    args.extend(pipeline_args(&manifest, &w));
    let out = tracer(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("pipeline instances: 1, oracle instances: 1"));

    // blank out the one non-empty export file
    let (name, _) = export_bytes(&work).into_iter().max_by_key(|(_, b)| b.len()).unwrap();
    let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
    std::io::Write::write_all(&mut enc, b"").unwrap();
    fs::write(work.join("export").join(name), enc.finish().unwrap()).unwrap();

    let out = tracer(&args);
    assert_eq!(out.status.code(), Some(3));
    let text = stdout(&out);
    let blob = FixtureRepo::blob_id(b"int lib;\n");
    assert!(
        text.contains(&format!("missing    first_author;1500000000;{blob};later_user;1502592000")),
        "{text}"
    );
    assert!(text.trim_end().ends_with("FAIL"));
}

#[test]
fn verify_fork_only_corpus() {
    let dir = TempDir::new().unwrap();
    let mut a = FixtureRepo::init(dir.path().join("a"), "main_line").unwrap();
    let c1 = a.commit(&[], 1_500_000_000, &[("f", "1")]).unwrap();
    let c2 = a.commit(&[c1], 1_500_000_100, &[("g", "2")]).unwrap();
    a.branch("main", c2).unwrap();
    let mut f1 = a.fork(dir.path().join("f1"), "fork_one", Some(1)).unwrap();
    let c3 = f1.commit(&[c1], 1_500_000_200, &[("h", "3")]).unwrap();
    f1.branch("main", c3).unwrap();
    let f2 = a.fork(dir.path().join("f2"), "fork_two", None).unwrap();
    let manifest = corpus_from(dir.path(), &[a, f1, f2]).unwrap().manifest.display().to_string();
    let w = dir.path().join("w").display().to_string();
    let mut args = vec!["verify"];
    args.extend(pipeline_args(&manifest, &w));
    let out = tracer(&args);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("pipeline instances: 0, oracle instances: 0"));
}

#[test]
fn killed_during_timeline_then_resumed() {
    let dir = TempDir::new().unwrap();
    let corpus = synthetic_corpus(&dir.path().join("repos"), 5, 10, 200, 10).unwrap();
    let manifest = corpus.manifest.display().to_string();

    let clean = dir.path().join("clean");
    let c = clean.display().to_string();
    let mut args = vec!["run", "--workers", "4"];
    args.extend(pipeline_args(&manifest, &c));
    assert_eq!(tracer(&args).status.code(), Some(0));

    let killed = dir.path().join("killed");
    let k = killed.display().to_string();
    let mut args = vec!["run", "--workers", "4", "--memory-mb", "1"];
    args.extend(pipeline_args(&manifest, &k));
    let mut child = Command::new(BIN).args(&args).spawn().unwrap();
    let defork_marker = killed.join("markers/defork.json");
    let deadline = Instant::now() + Duration::from_secs(120);
    while !defork_marker.exists() {
        assert!(Instant::now() < deadline, "defork never finished");
        assert!(child.try_wait().unwrap().is_none(), "finished before it could be interrupted");
        std::thread::sleep(Duration::from_millis(1));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(!killed.join("markers/timeline.json").exists(), "timeline finished before the kill");
    assert!(killed.join("timeline").exists());

    let out = tracer(&args);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("defork (up to date)") && text.contains("\ntimeline\n"), "{text}");
    assert_eq!(export_bytes(&killed), export_bytes(&clean));
}
