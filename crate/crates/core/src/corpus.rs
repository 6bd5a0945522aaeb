//! Job posting and resume ingestion, validation and single-text fusion.
//!
//! Postings arrive as CSV (header `id,title,company,location,industry,skills,description`,
//! skills separated by `;`) or JSONL with the same keys. Resumes arrive as JSON
//! (`{"id": ..., "sections": {...}}`) or plain text, where the id is the file stem.
//! Rejected records are always reported with a reason, never dropped silently.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const POSTINGS_CSV_HEADER: [&str; 7] = [
    "id",
    "title",
    "company",
    "location",
    "industry",
    "skills",
    "description",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header in {path}: expected `{expected}`, found `{found}`")]
    MalformedHeader {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("unsupported format {0:?}")]
    UnsupportedFormat(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobPosting {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub company: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub industry: Option<String>,
    #[serde(default)]
    pub skills: Vec<String>,
    pub description: String,
}

impl JobPosting {
    /// Trims every field, collapses empty optionals to `None` and checks the
    /// invariants. Returns the reject reason on failure.
    pub fn normalized(mut self) -> Result<Self, String> {
        self.id = self.id.trim().to_string();
        self.title = normalize_ws(&self.title);
        self.company = normalize_ws(&self.company);
        self.location = self.location.map(|s| normalize_ws(&s)).filter(|s| !s.is_empty());
        self.industry = self.industry.map(|s| normalize_ws(&s)).filter(|s| !s.is_empty());
        self.skills = self
            .skills
            .iter()
            .map(|s| normalize_ws(s))
            .filter(|s| !s.is_empty())
            .collect();
        self.description = normalize_block(&self.description);
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.description.is_empty() {
            return Err("empty description".into());
        }
        Ok(self)
    }
}

/// Canonical resume sections, in fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    Experience,
    Education,
    Skills,
    Summary,
    Other,
}

impl Section {
    /// Unknown names map to [`Section::Other`].
    pub fn from_name(name: &str) -> Section {
        match name.trim().to_lowercase().as_str() {
            "experience" => Section::Experience,
            "education" => Section::Education,
            "skills" => Section::Skills,
            "summary" => Section::Summary,
            _ => Section::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resume {
    pub id: String,
    #[serde(default)]
    pub sections: BTreeMap<Section, String>,
    #[serde(default)]
    pub raw_text: String,
}

impl Resume {
    pub fn from_text(id: impl Into<String>, text: &str) -> Self {
        Resume {
            id: id.into(),
            sections: BTreeMap::new(),
            raw_text: normalize_block(text),
        }
    }

    fn is_valid(&self) -> bool {
        self.sections.values().any(|s| !s.trim().is_empty()) || !self.raw_text.trim().is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocKind {
    Posting,
    Resume,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedDocument {
    pub doc_id: String,
    pub kind: DocKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    /// 1-based record number (data row or line) or the file name for resumes.
    pub record: String,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
}

impl IngestReport {
    pub fn total(&self) -> usize {
        self.accepted + self.rejected.len()
    }

    fn reject(&mut self, record: impl Into<String>, id: Option<String>, reason: impl Into<String>) {
        self.rejected.push(Rejection {
            record: record.into(),
            id,
            reason: reason.into(),
        });
    }
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "accepted: {}  rejected: {}", self.accepted, self.rejected.len())?;
        for r in &self.rejected {
            writeln!(
                f,
                "  record {} ({}): {}",
                r.record,
                r.id.as_deref().unwrap_or("-"),
                r.reason
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostingFormat {
    Csv,
    Jsonl,
}

impl PostingFormat {
    pub fn from_path(path: &Path) -> Result<Self, CorpusError> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_lowercase).as_deref() {
            Some("csv") => Ok(PostingFormat::Csv),
            Some("jsonl") | Some("ndjson") => Ok(PostingFormat::Jsonl),
            other => Err(CorpusError::UnsupportedFormat(other.unwrap_or("").to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResumeFormat {
    Json,
    Txt,
}

impl ResumeFormat {
    fn extension(self) -> &'static str {
        match self {
            ResumeFormat::Json => "json",
            ResumeFormat::Txt => "txt",
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, CorpusError> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_lowercase).as_deref() {
            Some("json") => Ok(ResumeFormat::Json),
            Some("txt") => Ok(ResumeFormat::Txt),
            other => Err(CorpusError::UnsupportedFormat(other.unwrap_or("").to_string())),
        }
    }
}

fn unreadable(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Unreadable {
        path: path.to_path_buf(),
        source,
    }
}

pub fn ingest_postings(
    path: &Path,
    format: PostingFormat,
) -> Result<(Vec<JobPosting>, IngestReport), CorpusError> {
    let mut seen = HashSet::new();
    let mut postings = Vec::new();
    let mut report = IngestReport::default();
    let mut accept = |record: String, parsed: Result<JobPosting, String>, report: &mut IngestReport| {
        match parsed.and_then(JobPosting::normalized) {
            Ok(p) if !seen.insert(p.id.clone()) => report.reject(record, Some(p.id), "duplicate id"),
            Ok(p) => {
                report.accepted += 1;
                postings.push(p);
            }
            Err(reason) => report.reject(record, None, reason),
        }
    };

    match format {
        PostingFormat::Csv => {
            let file = fs::File::open(path).map_err(|e| unreadable(path, e))?;
            let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
            let header = reader.headers().map_err(|source| CorpusError::Csv {
                path: path.to_path_buf(),
                source,
            })?;
            if header.iter().ne(POSTINGS_CSV_HEADER) {
                return Err(CorpusError::MalformedHeader {
                    path: path.to_path_buf(),
                    expected: POSTINGS_CSV_HEADER.join(","),
                    found: header.iter().collect::<Vec<_>>().join(","),
                });
            }
            for (row, record) in reader.records().enumerate() {
                let label = (row + 1).to_string();
                let parsed = match record {
                    Ok(r) if r.len() != POSTINGS_CSV_HEADER.len() => {
                        Err(format!("expected 7 fields, found {}", r.len()))
                    }
                    Ok(r) => {
                        let opt = |s: &str| Some(s.to_string());
                        Ok(JobPosting {
                            id: r[0].to_string(),
                            title: r[1].to_string(),
                            company: r[2].to_string(),
                            location: opt(&r[3]),
                            industry: opt(&r[4]),
                            skills: r[5].split(';').map(str::to_string).collect(),
                            description: r[6].to_string(),
                        })
                    }
                    Err(e) => Err(format!("unparseable row: {e}")),
                };
                accept(label, parsed, &mut report);
            }
        }
        PostingFormat::Jsonl => {
            let file = fs::File::open(path).map_err(|e| unreadable(path, e))?;
            for (line_no, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| unreadable(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<JobPosting>(&line)
                    .map_err(|e| format!("unparseable line: {e}"));
                accept((line_no + 1).to_string(), parsed, &mut report);
            }
        }
    }
    Ok((postings, report))
}

#[derive(Deserialize)]
struct ResumeJson {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    sections: BTreeMap<String, String>,
    #[serde(default)]
    raw_text: Option<String>,
}

fn parse_resume_json(content: &str, stem: &str) -> Result<Resume, String> {
    let parsed: ResumeJson =
        serde_json::from_str(content).map_err(|e| format!("unparseable resume json: {e}"))?;
    let id = parsed
        .id
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| stem.to_string());
    let mut sections: BTreeMap<Section, String> = BTreeMap::new();
    for (name, body) in parsed.sections {
        let body = normalize_block(&body);
        if body.is_empty() {
            continue;
        }
        sections
            .entry(Section::from_name(&name))
            .and_modify(|existing| {
                existing.push('\n');
                existing.push_str(&body);
            })
            .or_insert(body);
    }
    let resume = Resume {
        id,
        sections,
        raw_text: parsed.raw_text.map(|s| normalize_block(&s)).unwrap_or_default(),
    };
    if resume.is_valid() {
        Ok(resume)
    } else {
        Err("empty resume".into())
    }
}

/// Loads one resume file or every file with the format's extension in a
/// directory (sorted by name).
pub fn ingest_resumes(
    path: &Path,
    format: ResumeFormat,
) -> Result<(Vec<Resume>, IngestReport), CorpusError> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| unreadable(path, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension().and_then(|e| e.to_str()).map(str::to_lowercase).as_deref()
                        == Some(format.extension())
            })
            .collect();
        files.sort();
        files
    } else {
        // Surface a missing path as an error rather than an empty report.
        fs::metadata(path).map_err(|e| unreadable(path, e))?;
        vec![path.to_path_buf()]
    };

    let mut seen = HashSet::new();
    let mut resumes = Vec::new();
    let mut report = IngestReport::default();
    for file in files {
        let label = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let stem = file.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let content = fs::read_to_string(&file).map_err(|e| unreadable(&file, e))?;
        let parsed = if content.trim().is_empty() {
            Err("empty resume".to_string())
        } else {
            match format {
                ResumeFormat::Txt => Ok(Resume::from_text(stem.clone(), &content)),
                ResumeFormat::Json => parse_resume_json(&content, &stem),
            }
        };
        match parsed {
            Ok(r) if !seen.insert(r.id.clone()) => report.reject(label, Some(r.id), "duplicate id"),
            Ok(r) => {
                report.accepted += 1;
                resumes.push(r);
            }
            Err(reason) => report.reject(label, Some(stem), reason),
        }
    }
    Ok((resumes, report))
}

/// Loads a single resume file regardless of its accept status, surfacing the
/// rejection reason as an error string.
pub fn load_resume(path: &Path) -> Result<Resume, CorpusError> {
    let format = ResumeFormat::from_path(path).unwrap_or(ResumeFormat::Txt);
    let (mut resumes, report) = ingest_resumes(path, format)?;
    match resumes.pop() {
        Some(r) => Ok(r),
        None => Err(unreadable(
            path,
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                report
                    .rejected
                    .first()
                    .map(|r| r.reason.clone())
                    .unwrap_or_else(|| "no resume found".into()),
            ),
        )),
    }
}

/// Single-text representation used for embedding.
pub trait Fuse {
    fn fuse(&self) -> FusedDocument;
}

impl Fuse for JobPosting {
    fn fuse(&self) -> FusedDocument {
        let skills = self.skills.join(", ");
        let parts = [
            Some(self.title.as_str()),
            Some(self.company.as_str()),
            self.location.as_deref(),
            self.industry.as_deref(),
            Some(skills.as_str()),
            Some(self.description.as_str()),
        ];
        FusedDocument {
            doc_id: self.id.clone(),
            kind: DocKind::Posting,
            text: join_present(parts.into_iter().flatten()),
        }
    }
}

impl Fuse for Resume {
    fn fuse(&self) -> FusedDocument {
        let sections: Vec<&str> = self.sections.values().map(String::as_str).collect();
        let text = if sections.iter().any(|s| !s.trim().is_empty()) {
            join_present(sections.into_iter())
        } else {
            self.raw_text.trim().to_string()
        };
        FusedDocument {
            doc_id: self.id.clone(),
            kind: DocKind::Resume,
            text,
        }
    }
}

fn join_present<'a>(parts: impl Iterator<Item = &'a str>) -> String {
    parts
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace-normalizes each line and drops blank lines.
fn normalize_block(s: &str) -> String {
    s.lines()
        .map(normalize_ws)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn write_postings_jsonl(path: &Path, postings: &[JobPosting]) -> std::io::Result<()> {
    let mut out = String::new();
    for p in postings {
        out.push_str(&serde_json::to_string(p).map_err(std::io::Error::other)?);
        out.push('\n');
    }
    fs::write(path, out)
}

pub fn write_resumes_jsonl(path: &Path, resumes: &[Resume]) -> std::io::Result<()> {
    let mut out = String::new();
    for r in resumes {
        out.push_str(&serde_json::to_string(r).map_err(std::io::Error::other)?);
        out.push('\n');
    }
    fs::write(path, out)
}

/// Reads resumes written by [`write_resumes_jsonl`].
pub fn read_resumes_jsonl(path: &Path) -> Result<Vec<Resume>, CorpusError> {
    let content = fs::read_to_string(path).map_err(|e| unreadable(path, e))?;
    content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| {
                unreadable(path, std::io::Error::new(std::io::ErrorKind::InvalidData, e))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn posting(id: &str) -> JobPosting {
        JobPosting {
            id: id.into(),
            title: "Engineer".into(),
            company: "Acme".into(),
            location: None,
            industry: None,
            skills: vec![],
            description: "Build things".into(),
        }
    }

    fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(content.as_bytes()).unwrap();
        p
    }

    #[test]
    fn csv_with_three_valid_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "p.csv",
            "id,title,company,location,industry,skills,description\n\
             j1,Engineer,Acme,,,rust;sql,Build things\n\
             j2,Analyst,Beta,Paris,Finance,,Crunch numbers\n\
             j3,Chef,Gamma,,,knives,\"Cook, clean\"\n",
        );
        let (postings, report) = ingest_postings(&p, PostingFormat::Csv).unwrap();
        assert_eq!(postings.len(), 3);
        assert_eq!(report.accepted, 3);
        assert!(report.rejected.is_empty());
        assert_eq!(postings[0].skills, vec!["rust", "sql"]);
        assert_eq!(postings[0].location, None);
        assert_eq!(postings[1].location.as_deref(), Some("Paris"));
    }

    #[test]
    fn csv_empty_description_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "p.csv",
            "id,title,company,location,industry,skills,description\nj1,Engineer,Acme,,,,   \n",
        );
        let (postings, report) = ingest_postings(&p, PostingFormat::Csv).unwrap();
        assert!(postings.is_empty());
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(report.rejected[0].reason, "empty description");
    }

    #[test]
    fn csv_header_must_match_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "p.csv", "ID,title,company\nj1,a,b\n");
        let err = ingest_postings(&p, PostingFormat::Csv).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedHeader { .. }));
    }

    #[test]
    fn jsonl_duplicate_id_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "p.jsonl",
            "{\"id\":\"j1\",\"title\":\"A\",\"company\":\"B\",\"description\":\"x\"}\n\
             {\"id\":\"j1\",\"title\":\"C\",\"company\":\"D\",\"description\":\"y\"}\n\
             not json\n",
        );
        let (postings, report) = ingest_postings(&p, PostingFormat::Jsonl).unwrap();
        assert_eq!(postings.len(), 1);
        assert_eq!(report.rejected[0].reason, "duplicate id");
        assert!(report.rejected[1].reason.starts_with("unparseable"));
        assert_eq!(report.total(), 3);
    }

    #[test]
    fn missing_file_is_unreadable() {
        let err = ingest_postings(Path::new("/nonexistent/p.csv"), PostingFormat::Csv).unwrap_err();
        assert!(matches!(err, CorpusError::Unreadable { .. }));
    }

    #[test]
    fn txt_directory_and_empty_resume() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "alice.txt", "Led a team.\nBuilt a compiler.");
        write(dir.path(), "bob.txt", "Baked bread.");
        write(dir.path(), "empty.txt", "  \n");
        write(dir.path(), "ignored.json", "{}");
        let (resumes, report) = ingest_resumes(dir.path(), ResumeFormat::Txt).unwrap();
        assert_eq!(resumes.len(), 2);
        assert_eq!(resumes[0].id, "alice");
        assert_eq!(resumes[0].raw_text, "Led a team.\nBuilt a compiler.");
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(report.rejected[0].reason, "empty resume");
    }

    #[test]
    fn json_resume_sections() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "r.json",
            r#"{"id": "r1", "sections": {"experience": "A", "skills": "B", "hobbies": "C"}}"#,
        );
        let (resumes, _) = ingest_resumes(&p, ResumeFormat::Json).unwrap();
        let r = &resumes[0];
        assert_eq!(r.id, "r1");
        assert_eq!(r.sections.len(), 3);
        assert_eq!(r.sections[&Section::Other], "C");
        assert_eq!(r.fuse().text, "A\nB\nC");
    }

    #[test]
    fn posting_fusion_order() {
        assert_eq!(posting("j").fuse().text, "Engineer\nAcme\nBuild things");
        let mut p = posting("j");
        p.skills = vec!["x".into(), "y".into()];
        p.location = Some("Berlin".into());
        let fused = p.fuse();
        assert_eq!(fused.text, "Engineer\nAcme\nBerlin\nx, y\nBuild things");
        assert!(fused.text.lines().any(|l| l == "x, y"));
        assert_eq!(fused.doc_id, "j");
        assert_eq!(fused.kind, DocKind::Posting);
    }

    #[test]
    fn resume_fusion_order() {
        let mut r = Resume::from_text("r", "");
        r.sections.insert(Section::Skills, "B".into());
        r.sections.insert(Section::Experience, "A".into());
        assert_eq!(r.fuse().text, "A\nB");
        let raw = Resume::from_text("r2", "just text");
        assert_eq!(raw.fuse().text, "just text");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn field() -> impl Strategy<Value = String> {
            "[A-Za-z][A-Za-z0-9 ]{0,20}".prop_map(|s| s.trim().to_string())
        }

        proptest! {
            #[test]
            fn fusion_is_deterministic_and_keeps_every_field(
                title in field(), company in field(), desc in field(),
                loc in proptest::option::of(field()), skills in proptest::collection::vec(field(), 0..4),
            ) {
                prop_assume!(!desc.is_empty());
                let p = JobPosting {
                    id: "x".into(), title, company, location: loc, industry: None, skills,
                    description: desc,
                }.normalized().unwrap();
                let a = p.fuse();
                prop_assert_eq!(&a, &p.fuse());
                for f in [&p.title, &p.company, &p.description] {
                    prop_assert!(a.text.contains(f.as_str()));
                }
                for s in &p.skills {
                    prop_assert!(a.text.contains(s.as_str()));
                }
                if let Some(l) = &p.location {
                    prop_assert!(a.text.contains(l.as_str()));
                }
            }
        }
    }
}
