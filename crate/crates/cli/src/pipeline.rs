//! The pipeline stages, each a function of the manifest and the previous stage.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use chrono::{DateTime, Utc};
use stele_core::canonical;
use stele_core::corpus::{
    filter_with_report, ingest_authors, ingest_posts_at, write_posts_jsonl, AuthorRecord, FilterOutcome, FilterRules,
    Post, PostFormat,
};
use stele_core::curation::{curate, write_curated, CuratedPost};
use stele_core::monument::{build_scene, check_scene, rebuild, MonumentInputs, SceneDocument};
use stele_core::salience::{retain_top, salience_scores, ScoredPost};
use stele_core::textfeat::{extract_keywords, KeywordSet, Segment, Tokenizer, TranslationTable};
use stele_core::tribute::{read_log, DerivedState};

use crate::failure::{Classify, Failure, Outcome};
use crate::manifest::Manifest;
use crate::report::Report;

/// One author's hashtag campaign as it moves through the stages.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub author: AuthorRecord,
    pub ingested: usize,
    pub filter: FilterOutcome,
    pub retained: Vec<ScoredPost>,
}

/// Reads authors and posts, then applies the filter rules. Campaigns follow the authors file order.
pub fn ingest(manifest: &Manifest, now: DateTime<Utc>) -> Outcome<Vec<Campaign>> {
    let inputs = &manifest.inputs;
    let authors = ingest_authors(&inputs.authors).or_data(|| "authors".into())?;
    let mut ids = HashSet::new();
    if let Some(dup) = authors.iter().find(|a| !ids.insert(a.author_id.as_str())) {
        return Err(Failure::data(anyhow!(
            "{}: duplicate author_id {:?}",
            inputs.authors.display(),
            dup.author_id
        )));
    }
    if let Some(stray) = inputs
        .posts
        .keys()
        .chain(inputs.works.keys())
        .find(|k| !ids.contains(k.as_str()))
    {
        return Err(Failure::data(anyhow!(
            "manifest lists files for unknown author {stray:?}"
        )));
    }
    let rules = match &inputs.filter {
        Some(p) => FilterRules::load(p).or_config(|| format!("filter rules {}", p.display()))?,
        None => FilterRules::default(),
    };
    authors
        .into_iter()
        .map(|author| {
            let posts = match inputs.posts.get(&author.author_id) {
                Some(path) => read_campaign(path, &author.author_id, now)?,
                None => Vec::new(),
            };
            let filter = filter_with_report(&posts, &rules).or_config(|| "filter rules".into())?;
            Ok(Campaign {
                author,
                ingested: posts.len(),
                filter,
                retained: Vec::new(),
            })
        })
        .collect()
}

fn read_campaign(path: &Path, author_id: &str, now: DateTime<Utc>) -> Outcome<Vec<Post>> {
    let format = PostFormat::from_path(path)
        .ok_or_else(|| Failure::config(anyhow!("{}: expected a .jsonl or .csv post file", path.display())))?;
    let posts = ingest_posts_at(path, format, now).or_data(|| format!("posts for {author_id}"))?;
    if let Some(p) = posts.iter().find(|p| p.author_tag != author_id) {
        return Err(Failure::data(anyhow!(
            "{}: post {} is tagged {:?}, expected {author_id:?}",
            path.display(),
            p.id,
            p.author_tag
        )));
    }
    Ok(posts)
}

/// Scores each campaign on its own and keeps the high-salience posts.
pub fn score(manifest: &Manifest, campaigns: &mut [Campaign]) -> Outcome<()> {
    for c in campaigns {
        c.retained = if c.filter.kept.is_empty() {
            Vec::new()
        } else {
            let scored = salience_scores(&c.filter.kept, &manifest.salience)
                .or_data(|| format!("scoring {}", c.author.author_id))?;
            retain_top(&scored, &manifest.salience)
        };
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct Keywords {
    pub lower: BTreeMap<String, KeywordSet>,
    pub upper: BTreeMap<String, KeywordSet>,
    /// Tribute log entries folded into `upper`.
    pub tribute_entries: usize,
}

pub fn tokenizer(manifest: &Manifest) -> Outcome<Tokenizer> {
    Tokenizer::from_config(&manifest.tokenizer_config()).or_config(|| "tokenizer".into())
}

pub fn translations(manifest: &Manifest) -> Outcome<Option<TranslationTable>> {
    manifest
        .inputs
        .translations
        .as_ref()
        .map(|p| TranslationTable::load(p).or_data(|| "translation table".into()))
        .transpose()
}

/// Lower keywords from each author's works, upper keywords from retained posts
/// plus any approved tributes.
pub fn keywords(manifest: &Manifest, campaigns: &[Campaign], tokenizer: &Tokenizer) -> Outcome<Keywords> {
    let mut lower_docs = BTreeMap::new();
    let mut upper_docs = BTreeMap::new();
    for c in campaigns {
        let id = &c.author.author_id;
        let works = match manifest.inputs.works.get(id) {
            Some(p) => tokenizer.tokenize(&fs::read_to_string(p).or_data(|| format!("works for {id}"))?),
            None => Vec::new(),
        };
        lower_docs.insert(id.clone(), works);
        let tokens: Vec<String> = c
            .retained
            .iter()
            .flat_map(|s| tokenizer.tokenize(&s.post.text))
            .collect();
        upper_docs.insert(id.clone(), tokens);
    }
    let top_k = manifest.keywords.top_k;
    let mut lower = extract_keywords(&lower_docs, top_k, Segment::Lower);
    let mut upper = extract_keywords(&upper_docs, top_k, Segment::Upper);

    let table = translations(manifest)?;
    let mut tribute_entries = 0;
    if let Some(log) = manifest.inputs.tributes.as_ref().filter(|p| p.exists()) {
        let entries = read_log(log).or_data(|| "tribute log".into())?;
        let state = DerivedState::replay(&entries, manifest.keywords.tribute_increment);
        for (author, inc) in &state.increments {
            match upper.get_mut(author) {
                Some(set) => *set = set.with_increments(inc, table.as_ref()),
                None => tracing::warn!(author, "tributes for an author outside the cohort are ignored"),
            }
        }
        tribute_entries = entries.len();
    }
    if let Some(table) = &table {
        for set in lower.values_mut().chain(upper.values_mut()) {
            set.apply_translations(table);
        }
    }
    Ok(Keywords {
        lower,
        upper,
        tribute_entries,
    })
}

#[derive(Debug, Clone)]
pub struct Build {
    pub campaigns: Vec<Campaign>,
    pub keywords: Keywords,
    pub scene: SceneDocument,
    pub curated: Vec<CuratedPost>,
}

/// The manifest's timestamp, else the newest post that passed filtering, else the Unix epoch.
pub fn built_at(manifest: &Manifest, campaigns: &[Campaign]) -> DateTime<Utc> {
    manifest.built_at.unwrap_or_else(|| {
        campaigns
            .iter()
            .flat_map(|c| c.filter.kept.iter().map(|p| p.created_at))
            .max()
            .unwrap_or(DateTime::UNIX_EPOCH)
    })
}

pub struct BuildOptions<'a> {
    pub now: DateTime<Utc>,
    pub previous: Option<&'a SceneDocument>,
    pub data_version: Option<u64>,
}

impl Default for BuildOptions<'_> {
    fn default() -> Self {
        Self {
            now: Utc::now(),
            previous: None,
            data_version: None,
        }
    }
}

/// Runs every stage in memory.
pub fn run(manifest: &Manifest, options: &BuildOptions) -> Outcome<Build> {
    let mut campaigns = ingest(manifest, options.now)?;
    score(manifest, &mut campaigns)?;
    let tokenizer = tokenizer(manifest)?;
    let keywords = keywords(manifest, &campaigns, &tokenizer)?;
    let inputs = MonumentInputs {
        authors: campaigns.iter().map(|c| c.author.clone()).collect(),
        keywords_lower: keywords.lower.clone(),
        keywords_upper: keywords.upper.clone(),
    };
    let built_at = built_at(manifest, &campaigns);
    let mut scene = match options.previous {
        Some(prev) => rebuild(prev, &inputs, built_at, options.data_version).or_data(|| "rebuild".into())?,
        None => build_scene(
            &inputs,
            &manifest.heights,
            &manifest.scene,
            built_at,
            options.data_version.unwrap_or(manifest.data_version),
        )
        .or_config(|| "scene synthesis".into())?,
    };
    scene.tribute_entries = keywords.tribute_entries;
    check_scene(&scene).map_err(|e| Failure::data(anyhow!("scene failed validation: {e}")))?;
    for m in &scene.monuments {
        if m.spec.keywords_lower.is_empty() && m.spec.keywords_upper.is_empty() {
            tracing::warn!(author = %m.spec.author_id, "no keywords in either segment; monument is a bare column");
        }
    }
    let curated = campaigns
        .iter()
        .flat_map(|c| {
            let set = keywords
                .upper
                .get(&c.author.author_id)
                .cloned()
                .unwrap_or_else(|| KeywordSet::empty(&c.author.author_id, Segment::Upper));
            curate(&c.retained, &set, &tokenizer)
        })
        .collect();
    Ok(Build {
        campaigns,
        keywords,
        scene,
        curated,
    })
}

/// Writes into a hidden staging directory inside `out`, then moves the results
/// into place. On failure nothing is left behind.
pub fn write_staged(out: &Path, write: impl FnOnce(&Path) -> Outcome<()>) -> Outcome<Vec<PathBuf>> {
    fs::create_dir_all(out).or_config(|| format!("cannot create output directory {}", out.display()))?;
    let staging = tempfile::Builder::new()
        .prefix(".staging-")
        .tempdir_in(out)
        .or_config(|| format!("cannot write to {}", out.display()))?;
    write(staging.path())?;
    let mut names: Vec<_> = fs::read_dir(staging.path())
        .or_data(|| "staging directory".into())?
        .map(|e| e.map(|e| e.file_name()))
        .collect::<Result<_, _>>()
        .or_data(|| "staging directory".into())?;
    names.sort();
    let mut written = Vec::new();
    for name in names {
        let target = out.join(&name);
        if target.is_dir() {
            fs::remove_dir_all(&target).or_data(|| format!("replacing {}", target.display()))?;
        } else if target.exists() {
            fs::remove_file(&target).or_data(|| format!("replacing {}", target.display()))?;
        }
        fs::rename(staging.path().join(&name), &target).or_data(|| format!("writing {}", target.display()))?;
        written.push(target);
    }
    Ok(written)
}

fn io<T>(r: std::io::Result<T>, path: &Path) -> Outcome<T> {
    r.or_data(|| format!("writing {}", path.display()))
}

pub fn write_filtered(dir: &Path, campaigns: &[Campaign]) -> Outcome<()> {
    let sub = dir.join("filtered");
    io(fs::create_dir_all(&sub), &sub)?;
    for c in campaigns {
        let path = sub.join(format!("{}.jsonl", c.author.author_id));
        write_posts_jsonl(&path, &c.filter.kept).or_data(|| path.display().to_string())?;
    }
    Ok(())
}

/// Retained posts with their scores, one JSON object per line.
pub fn write_scored(path: &Path, scored: &[ScoredPost]) -> Outcome<()> {
    let mut body = Vec::new();
    for s in scored {
        body.extend(canonical::to_vec(s));
        body.push(b'\n');
    }
    io(fs::write(path, body), path)
}

pub fn write_retained(dir: &Path, campaigns: &[Campaign]) -> Outcome<()> {
    let sub = dir.join("retained");
    io(fs::create_dir_all(&sub), &sub)?;
    for c in campaigns {
        write_scored(&sub.join(format!("{}.jsonl", c.author.author_id)), &c.retained)?;
    }
    Ok(())
}

pub fn write_keywords(dir: &Path, keywords: &Keywords) -> Outcome<()> {
    let sub = dir.join("keywords");
    io(fs::create_dir_all(&sub), &sub)?;
    for set in keywords.lower.values().chain(keywords.upper.values()) {
        set.write_to_dir(&sub).or_data(|| "keyword sets".into())?;
    }
    Ok(())
}

pub fn write_build(dir: &Path, build: &Build, report: &Report) -> Outcome<()> {
    write_keywords(dir, &build.keywords)?;
    let scene = dir.join("scene.json");
    io(fs::write(&scene, build.scene.to_canonical_json()), &scene)?;
    let curated = dir.join("curated.jsonl");
    write_curated(&curated, &build.curated).or_data(|| curated.display().to_string())?;
    let text = dir.join("report.txt");
    io(fs::write(&text, report.render()), &text)?;
    let json = dir.join("report.json");
    io(fs::write(&json, report.to_json()), &json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_stage_leaves_nothing_behind() {
        let out = tempfile::tempdir().unwrap();
        fs::write(out.path().join("scene.json"), "old").unwrap();
        let result = write_staged(out.path(), |dir| {
            fs::write(dir.join("scene.json"), "new").unwrap();
            Err(Failure::data(anyhow!("boom")))
        });
        assert!(result.is_err());
        let names: Vec<_> = fs::read_dir(out.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, ["scene.json"]);
        assert_eq!(fs::read_to_string(out.path().join("scene.json")).unwrap(), "old");
    }

    #[test]
    fn staged_outputs_replace_previous_ones() {
        let out = tempfile::tempdir().unwrap();
        fs::create_dir(out.path().join("keywords")).unwrap();
        fs::write(out.path().join("keywords/stale.json"), "x").unwrap();
        let written = write_staged(out.path(), |dir| {
            fs::create_dir(dir.join("keywords")).unwrap();
            fs::write(dir.join("keywords/a.lower.json"), "{}").unwrap();
            Ok(())
        })
        .unwrap();
        assert_eq!(written, [out.path().join("keywords")]);
        assert!(!out.path().join("keywords/stale.json").exists());
        assert!(out.path().join("keywords/a.lower.json").exists());
    }
}
