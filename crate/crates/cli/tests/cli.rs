use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use stele_core::monument::SceneDocument;

fn stele(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stele"))
        .args(args)
        .env_remove("STELE_MANIFEST")
        .output()
        .expect("run stele")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn sample() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample")
}

/// The sample manifest copied next to absolute input paths, minus the tribute log.
fn sample_manifest(dir: &Path) -> PathBuf {
    let root = sample().canonicalize().unwrap();
    let text = fs::read_to_string(root.join("manifest.toml")).unwrap();
    let mut out = String::new();
    for line in text.lines() {
        if line.starts_with("tributes") || line.starts_with("dir") {
            continue;
        }
        match line.split_once(" = \"") {
            Some((key, rest)) if key != "built_at" && key != "mode" => {
                out.push_str(&format!("{key} = \"{}/{rest}\n", root.display()));
            }
            _ => out.push_str(&format!("{line}\n")),
        }
    }
    let path = dir.join("manifest.toml");
    fs::write(&path, out).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const HEADER: &str = "author_id,display_name,death_date,publication_count,reading_volume,discussion_volume,interaction_volume,originality_volume\n";

/// One author with `n` posts whose likes are all distinct.
fn single_campaign(dir: &Path, n: usize) -> PathBuf {
    fs::write(dir.join("authors.csv"), format!("{HEADER}a,A,2020-01-01,3,10,1,1,1\n")).unwrap();
    let mut posts = String::new();
    for i in 0..n {
        posts.push_str(&format!(
            "{{\"id\":\"p{i}\",\"author_tag\":\"a\",\"text\":\"怀念先生 {i}\",\"created_at\":\"2020-01-02T00:00:00Z\",\"reposts\":1,\"comments\":1,\"likes\":{},\"is_original\":true}}\n",
            i * 3
        ));
    }
    fs::write(dir.join("a.jsonl"), posts).unwrap();
    let manifest = dir.join("m.toml");
    fs::write(
        &manifest,
        "[inputs]\nauthors = \"authors.csv\"\n[inputs.posts]\na = \"a.jsonl\"\n[salience]\nretain_percentile = 70.0\n",
    )
    .unwrap();
    manifest
}

#[test]
fn missing_stopword_file_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("authors.csv"), HEADER).unwrap();
    fs::write(
        dir.path().join("m.toml"),
        "[inputs]\nauthors = \"authors.csv\"\nstopwords = \"missing-stopwords.txt\"\n",
    )
    .unwrap();
    let out = stele(&["--manifest", s(&dir.path().join("m.toml")), "build"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing-stopwords.txt"), "{}", stderr(&out));
}

#[test]
fn missing_manifest_flag_is_config_error() {
    assert_eq!(stele(&["build"]).status.code(), Some(2));
}

#[test]
fn mistagged_post_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = single_campaign(dir.path(), 3);
    let body = fs::read_to_string(dir.path().join("a.jsonl")).unwrap();
    fs::write(
        dir.path().join("a.jsonl"),
        body.replacen("\"author_tag\":\"a\"", "\"author_tag\":\"b\"", 1),
    )
    .unwrap();
    let out = stele(&["--manifest", s(&manifest), "build", "--out", s(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(!dir.path().join("out/scene.json").exists());
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = sample_manifest(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let run = stele(&["--manifest", s(&manifest), "build", "--out", s(out)]);
        assert!(run.status.success(), "{}", stderr(&run));
    }
    for name in [
        "scene.json",
        "curated.jsonl",
        "report.json",
        "keywords/jin_yong.upper.json",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let leftovers: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with(".staging"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn report_counts_reconcile_and_heights_are_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = sample_manifest(dir.path());
    let out = stele(&["--manifest", s(&manifest), "report", "--json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    for row in rows {
        let excluded: u64 = row["excluded"]
            .as_object()
            .unwrap()
            .values()
            .map(|v| v.as_u64().unwrap())
            .sum();
        assert_eq!(
            row["ingested"].as_u64().unwrap(),
            row["kept"].as_u64().unwrap() + excluded
        );
        assert!(row["retained"].as_u64() <= row["kept"].as_u64());
        for key in ["height_lower", "height_upper"] {
            let h = row[key].as_f64().unwrap();
            assert!(h > 0.0 && h < 100.0, "{key} {h}");
        }
    }
    assert_eq!(report["total"]["ingested"], 1400);
}

#[test]
fn percentile_70_of_100_distinct_posts_retains_30() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = single_campaign(dir.path(), 100);
    let out = stele(&["--manifest", s(&manifest), "report", "--json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["rows"][0]["retained"], 30);
    let text = stele(&["--manifest", s(&manifest), "report"]);
    let line = String::from_utf8(text.stdout).unwrap();
    assert!(
        line.lines()
            .any(|l| l.starts_with("a ") && l.contains(" 100 ") && l.contains(" 30 ")),
        "{line}"
    );
}

#[test]
fn empty_corpus_reports_zeroes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("authors.csv"), HEADER).unwrap();
    fs::write(dir.path().join("m.toml"), "[inputs]\nauthors = \"authors.csv\"\n").unwrap();
    let out = stele(&["--manifest", s(&dir.path().join("m.toml")), "report"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let total = text.lines().find(|l| l.starts_with("total")).unwrap();
    let numbers: Vec<&str> = total.split_whitespace().skip(1).take(7).collect();
    assert_eq!(numbers, ["0"; 7]);

    let build = stele(&[
        "--manifest",
        s(&dir.path().join("m.toml")),
        "build",
        "--out",
        s(&dir.path().join("out")),
    ]);
    assert!(build.status.success(), "{}", stderr(&build));
    let scene = SceneDocument::read(&dir.path().join("out/scene.json")).unwrap();
    assert!(scene.monuments.is_empty());
}

#[test]
fn stages_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = single_campaign(dir.path(), 20);
    let out = dir.path().join("out");
    for stage in ["ingest", "score", "keywords"] {
        let run = stele(&["--manifest", s(&manifest), stage, "--out", s(&out)]);
        assert!(run.status.success(), "{stage}: {}", stderr(&run));
    }
    assert_eq!(
        fs::read_to_string(out.join("filtered/a.jsonl"))
            .unwrap()
            .lines()
            .count(),
        20
    );
    let scored = fs::read_to_string(out.join("retained/a.jsonl")).unwrap();
    let first: Value = serde_json::from_str(scored.lines().next().unwrap()).unwrap();
    assert!(first["salience"].is_number() && first["post"]["id"].is_string());
    assert!(out.join("keywords/a.lower.json").is_file());
    assert!(out.join("keywords/a.upper.json").is_file());
}

#[test]
fn score_single_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    single_campaign(dir.path(), 10);
    let target = dir.path().join("scored.jsonl");
    let out = stele(&[
        "score",
        "--posts",
        s(&dir.path().join("a.jsonl")),
        "--half-life",
        "14",
        "--weights",
        "0.40,0.35,0.25",
        "--percentile",
        "70",
        "--out",
        s(&target),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(&target).unwrap().lines().count(), 3);

    let bad = stele(&[
        "score",
        "--posts",
        s(&dir.path().join("a.jsonl")),
        "--weights",
        "0.5,0.5,0.5",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn standalone_build_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = sample_manifest(dir.path());
    let staged = dir.path().join("staged");
    let run = stele(&["--manifest", s(&manifest), "keywords", "--out", s(&staged)]);
    assert!(run.status.success(), "{}", stderr(&run));

    let scene_path = dir.path().join("scene.json");
    let authors = sample().join("authors.csv");
    let build = stele(&[
        "build",
        "--authors",
        s(&authors),
        "--keywords",
        s(&staged.join("keywords")),
        "--density",
        "2",
        "--seed",
        "3",
        "--out",
        s(&scene_path),
    ]);
    assert!(build.status.success(), "{}", stderr(&build));
    let scene = SceneDocument::read(&scene_path).unwrap();
    assert_eq!(scene.monuments.len(), 7);
    assert_eq!(scene.layout[0].author_id, "yang_jiang");
    assert_eq!(scene.built_at.timestamp(), 0);
    assert!(!scene.monument("jin_yong").unwrap().spec.keywords_upper.is_empty());

    let ply = dir.path().join("jin_yong.ply");
    let export = stele(&[
        "export",
        "--scene",
        s(&scene_path),
        "--author",
        "jin_yong",
        "--out",
        s(&ply),
    ]);
    assert!(export.status.success(), "{}", stderr(&export));
    let text = fs::read_to_string(&ply).unwrap();
    let count: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .unwrap()
        .parse()
        .unwrap();
    let body = text.split("end_header\n").nth(1).unwrap();
    assert_eq!(body.lines().count(), count);
    assert_eq!(
        count,
        scene
            .monument("jin_yong")
            .unwrap()
            .segments
            .iter()
            .map(|s| s.points.len())
            .sum::<usize>()
    );

    let missing = stele(&["export", "--scene", s(&scene_path), "--author", "nobody"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn rebuild_bumps_version_and_keeps_lower_segments() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = sample_manifest(dir.path());
    let (first, second) = (dir.path().join("v1"), dir.path().join("v2"));
    assert!(stele(&["--manifest", s(&manifest), "build", "--out", s(&first)])
        .status
        .success());
    let run = stele(&[
        "--manifest",
        s(&manifest),
        "build",
        "--seed",
        "99",
        "--previous",
        s(&first.join("scene.json")),
        "--out",
        s(&second),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let (a, b) = (
        SceneDocument::read(&first.join("scene.json")).unwrap(),
        SceneDocument::read(&second.join("scene.json")).unwrap(),
    );
    assert_eq!(b.data_version, a.data_version + 1);
    for (x, y) in a.monuments.iter().zip(&b.monuments) {
        assert_eq!(x.segments[0], y.segments[0]);
    }

    let regress = stele(&[
        "--manifest",
        s(&manifest),
        "build",
        "--previous",
        s(&second.join("scene.json")),
        "--data-version",
        "1",
        "--out",
        s(&dir.path().join("v3")),
    ]);
    assert_eq!(regress.status.code(), Some(1));
}
