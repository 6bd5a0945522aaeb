//! Graded ranking evaluation (nDCG@p) and per-phase latency benchmarking.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty ranking")]
    EmptyRanking,
    #[error("cutoff p must be at least 1")]
    ZeroCutoff,
    #[error("benchmark needs at least {min} runs, got {got}")]
    TooFewRuns { min: usize, got: usize },
    #[error("judgments line {line}: {problem}")]
    BadJudgment { line: u64, problem: String },
    #[error("judgments reference unknown resume {0}")]
    UnknownResume(String),
    #[error("cannot read judgments {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    /// `2^rel - 1`
    #[default]
    Exponential,
    /// `rel`
    Linear,
}

impl Gain {
    pub fn of(self, grade: u8) -> f64 {
        match self {
            Gain::Exponential => (1u64 << grade) as f64 - 1.0,
            Gain::Linear => grade as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub resume_id: String,
    pub posting_id: String,
    pub grade: u8,
}

/// Grades per resume, per posting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Judgments {
    by_resume: BTreeMap<String, HashMap<String, u8>>,
}

impl Judgments {
    pub fn from_records(records: impl IntoIterator<Item = RelevanceJudgment>) -> Self {
        let mut by_resume: BTreeMap<String, HashMap<String, u8>> = BTreeMap::new();
        for r in records {
            by_resume.entry(r.resume_id).or_default().insert(r.posting_id, r.grade);
        }
        Judgments { by_resume }
    }

    /// Reads `resume_id,posting_id,grade` with a header row.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let file = std::fs::File::open(path)
            .map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| EvalError::BadJudgment {
                line: e.position().map_or(0, |p| p.line()),
                problem: e.to_string(),
            })?;
            let line = row.position().map_or(0, |p| p.line());
            let bad = |problem: String| EvalError::BadJudgment { line, problem };
            if row.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", row.len())));
            }
            let grade: u8 = row[2].parse().map_err(|_| bad(format!("grade {:?} is not an integer", &row[2])))?;
            if grade > 2 {
                return Err(bad(format!("grade {grade} outside {{0, 1, 2}}")));
            }
            if row[0].is_empty() || row[1].is_empty() {
                return Err(bad("empty id".into()));
            }
            records.push(RelevanceJudgment { resume_id: row[0].into(), posting_id: row[1].into(), grade });
        }
        Ok(Judgments::from_records(records))
    }

    pub fn resumes(&self) -> impl Iterator<Item = &str> {
        self.by_resume.keys().map(String::as_str)
    }

    pub fn grades(&self, resume_id: &str) -> Option<&HashMap<String, u8>> {
        self.by_resume.get(resume_id)
    }

    pub fn check_resumes<'a>(&self, known: impl IntoIterator<Item = &'a str>) -> Result<(), EvalError> {
        let known: std::collections::HashSet<&str> = known.into_iter().collect();
        match self.resumes().find(|r| !known.contains(r)) {
            Some(r) => Err(EvalError::UnknownResume(r.to_string())),
            None => Ok(()),
        }
    }
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains.enumerate().map(|(i, g)| g / ((i + 2) as f64).log2()).sum()
}

/// nDCG at cutoff `p`. Unjudged postings count as grade 0. The ideal ordering
/// is built from every judged posting for the resume, retrieved or not.
pub fn ndcg_at_p<S: AsRef<str>>(
    ranking: &[S],
    grades: &HashMap<String, u8>,
    p: usize,
    gain: Gain,
) -> Result<f64, EvalError> {
    if ranking.is_empty() {
        return Err(EvalError::EmptyRanking);
    }
    if p == 0 {
        return Err(EvalError::ZeroCutoff);
    }
    let actual = dcg(ranking.iter().take(p).map(|id| gain.of(grades.get(id.as_ref()).copied().unwrap_or(0))));
    let mut ideal: Vec<u8> = grades.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let best = dcg(ideal.into_iter().take(p).map(|g| gain.of(g)));
    if best == 0.0 {
        return Ok(0.0);
    }
    Ok((actual / best).clamp(0.0, 1.0))
}

/// Rankings one method produced, keyed by resume id, or the reason it failed.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: String,
    pub rankings: Result<BTreeMap<String, Vec<String>>, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    /// Mean nDCG over judged resumes, one entry per cutoff.
    pub ndcg: Vec<f64>,
    /// Relative change of the first cutoff against the baseline row, in percent.
    pub delta_pct: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub cutoffs: Vec<usize>,
    pub gain: Gain,
    pub resumes: usize,
    pub rows: Vec<MethodRow>,
}

/// Scores each method; the first run is the baseline for the delta column.
/// Failed methods become error rows.
pub fn evaluate_methods(
    runs: &[MethodRun],
    judgments: &Judgments,
    cutoffs: &[usize],
    gain: Gain,
) -> Result<EvalTable, EvalError> {
    if cutoffs.contains(&0) {
        return Err(EvalError::ZeroCutoff);
    }
    let resumes: Vec<&str> = judgments.resumes().collect();
    let score = |rankings: &BTreeMap<String, Vec<String>>| -> Result<Vec<f64>, String> {
        let mut sums = vec![0.0; cutoffs.len()];
        for r in &resumes {
            let ranking = rankings.get(*r).ok_or_else(|| format!("no ranking for resume {r}"))?;
            let grades = judgments.grades(r).expect("listed resume");
            for (sum, &p) in sums.iter_mut().zip(cutoffs) {
                *sum += ndcg_at_p(ranking, grades, p, gain).map_err(|e| e.to_string())?;
            }
        }
        let n = resumes.len().max(1) as f64;
        Ok(sums.into_iter().map(|s| s / n).collect())
    };
    let mut rows: Vec<MethodRow> = runs
        .iter()
        .map(|run| match run.rankings.as_ref().map_err(Clone::clone).and_then(|r| score(r)) {
            Ok(ndcg) => MethodRow { method: run.method.clone(), ndcg, delta_pct: None, error: None },
            Err(e) => MethodRow { method: run.method.clone(), ndcg: vec![], delta_pct: None, error: Some(e) },
        })
        .collect();
    let baseline = rows.first().and_then(|r| r.ndcg.first().copied());
    for row in &mut rows {
        row.delta_pct = match (baseline, row.ndcg.first()) {
            (Some(b), Some(v)) if b > 0.0 => Some((v - b) / b * 100.0),
            _ => None,
        };
    }
    Ok(EvalTable { cutoffs: cutoffs.to_vec(), gain, resumes: resumes.len(), rows })
}

impl EvalTable {
    /// Aligned text table: method, nDCG at the first cutoff, delta, then the
    /// remaining cutoffs.
    pub fn render(&self) -> String {
        let mut header = vec!["Method".to_string()];
        for (i, p) in self.cutoffs.iter().enumerate() {
            header.push(format!("nDCG@{p}"));
            if i == 0 {
                header.push("Δ%".into());
            }
        }
        let mut lines = vec![header];
        for row in &self.rows {
            let mut cells = vec![row.method.clone()];
            if let Some(e) = &row.error {
                cells.push(format!("error: {e}"));
            } else {
                for (i, v) in row.ndcg.iter().enumerate() {
                    cells.push(format!("{v:.4}"));
                    if i == 0 {
                        cells.push(row.delta_pct.map_or("-".into(), |d| format!("{d:+.1}%")));
                    }
                }
            }
            lines.push(cells);
        }
        render_columns(&lines)
    }
}

pub(crate) fn render_columns(lines: &[Vec<String>]) -> String {
    let cols = lines.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| lines.iter().filter_map(|l| l.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in lines {
        let cells: Vec<String> = line
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s}{}", " ".repeat(widths[c] - s.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

/// Phase names, in report order.
pub const PHASES: [&str; 5] =
    ["[I] Embed Resume", "[I] Sim. Search", "[II] Embed/Score", "[RAG] Gen. Explanation", "Full Pipeline"];
pub const MIN_BENCH_RUNS: usize = 3;

/// Accumulates wall-clock samples per named phase.
#[derive(Debug, Default)]
pub struct PhaseTimer {
    samples: BTreeMap<String, Vec<Duration>>,
}

impl PhaseTimer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(phase, start.elapsed());
        out
    }

    pub fn record(&mut self, phase: &str, elapsed: Duration) {
        self.samples.entry(phase.to_string()).or_default().push(elapsed);
    }

    pub fn samples(&self, phase: &str) -> &[Duration] {
        self.samples.get(phase).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStat {
    pub name: String,
    /// Seconds.
    pub mean: f64,
    /// Sample standard deviation, seconds.
    pub std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub phases: Vec<PhaseStat>,
}

/// Mean and sample (n-1) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.max(0.0).sqrt())
}

impl BenchReport {
    pub fn from_timer(timer: &PhaseTimer, phases: &[&str]) -> Self {
        let phases = phases
            .iter()
            .map(|name| {
                let secs: Vec<f64> = timer.samples(name).iter().map(Duration::as_secs_f64).collect();
                let (mean, std) = mean_std(&secs);
                PhaseStat { name: name.to_string(), mean, std, runs: secs.len() }
            })
            .collect();
        BenchReport { phases }
    }

    pub fn render(&self) -> String {
        let mut lines = vec![vec!["Phase".to_string(), "Time (s, mean ± std)".to_string(), "Runs".to_string()]];
        for p in &self.phases {
            lines.push(vec![p.name.clone(), format!("{:.6} ± {:.6}", p.mean, p.std), p.runs.to_string()]);
        }
        render_columns(&lines)
    }
}

/// Calls `run_once` `runs` times; each call times its phases on the shared
/// timer. Runs are strictly sequential.
pub fn bench<E>(
    runs: usize,
    mut run_once: impl FnMut(&mut PhaseTimer) -> Result<(), E>,
) -> Result<BenchReport, E>
where
    E: From<EvalError>,
{
    if runs < MIN_BENCH_RUNS {
        return Err(EvalError::TooFewRuns { min: MIN_BENCH_RUNS, got: runs }.into());
    }
    let mut timer = PhaseTimer::new();
    for _ in 0..runs {
        run_once(&mut timer)?;
    }
    Ok(BenchReport::from_timer(&timer, &PHASES))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grades(pairs: &[(&str, u8)]) -> HashMap<String, u8> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn worked_example() {
        let g = grades(&[("a", 1), ("b", 2), ("c", 0)]);
        let v = ndcg_at_p(&["a", "b", "c"], &g, 3, Gain::Exponential).unwrap();
        let dcg = 1.0 + 3.0 / 3f64.log2();
        let idcg = 3.0 + 1.0 / 3f64.log2();
        assert!((dcg - 2.892789).abs() < 1e-6 && (idcg - 3.630930).abs() < 1e-6);
        assert!((v - dcg / idcg).abs() < 1e-15);
        assert!((v - 0.796708).abs() < 1e-6, "{v}");
        assert!((v - dcg / idcg).abs() < 1e-15);
    }

    #[test]
    fn ideal_zero_and_errors() {
        let g = grades(&[("a", 2), ("b", 1), ("c", 0)]);
        assert_eq!(ndcg_at_p(&["a", "b", "c"], &g, 3, Gain::Exponential).unwrap(), 1.0);
        let z = grades(&[("a", 0), ("b", 0)]);
        assert_eq!(ndcg_at_p(&["a", "b"], &z, 2, Gain::Exponential).unwrap(), 0.0);
        assert!(matches!(ndcg_at_p::<&str>(&[], &g, 3, Gain::Exponential), Err(EvalError::EmptyRanking)));
        assert!(matches!(ndcg_at_p(&["a"], &g, 0, Gain::Exponential), Err(EvalError::ZeroCutoff)));
    }

    #[test]
    fn missing_relevant_items_penalize() {
        let g = grades(&[("a", 2), ("z", 2)]);
        let v = ndcg_at_p(&["a", "b"], &g, 2, Gain::Exponential).unwrap();
        assert!((v - 3.0 / (3.0 + 3.0 / 3f64.log2())).abs() < 1e-12);
    }

    #[test]
    fn linear_gain() {
        let g = grades(&[("a", 1), ("b", 2)]);
        let v = ndcg_at_p(&["a", "b"], &g, 2, Gain::Linear).unwrap();
        let expected = (1.0 + 2.0 / 3f64.log2()) / (2.0 + 1.0 / 3f64.log2());
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn table_baseline_delta_and_errors() {
        let j = Judgments::from_records([
            RelevanceJudgment { resume_id: "r".into(), posting_id: "a".into(), grade: 2 },
            RelevanceJudgment { resume_id: "r".into(), posting_id: "b".into(), grade: 1 },
        ]);
        let ranking = |ids: &[&str]| {
            Ok(BTreeMap::from([("r".to_string(), ids.iter().map(|s| s.to_string()).collect())]))
        };
        let runs = vec![
            MethodRun { method: "Phase-I".into(), rankings: ranking(&["b", "a"]) },
            MethodRun { method: "Ideal".into(), rankings: ranking(&["a", "b"]) },
            MethodRun { method: "Broken".into(), rankings: Err("provider down".into()) },
        ];
        let t = evaluate_methods(&runs, &j, &[10, 20], Gain::Exponential).unwrap();
        assert_eq!(t.rows[0].delta_pct, Some(0.0));
        let direct = ndcg_at_p(&["b", "a"], j.grades("r").unwrap(), 10, Gain::Exponential).unwrap();
        assert_eq!(t.rows[0].ndcg[0], direct);
        assert_eq!(t.rows[1].ndcg, vec![1.0, 1.0]);
        assert!(t.rows[1].delta_pct.unwrap() > 0.0);
        assert_eq!(t.rows[2].error.as_deref(), Some("provider down"));
        let text = t.render();
        assert!(text.contains("nDCG@10") && text.contains("Δ%") && text.contains("error: provider down"));
        assert!(j.check_resumes(["x"]).is_err());
        assert!(j.check_resumes(["r"]).is_ok());
    }

    #[test]
    fn judgments_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.csv");
        std::fs::write(&path, "resume_id,posting_id,grade\nr1,p1,2\nr1,p2,0\nr2,p1,1\n").unwrap();
        let j = Judgments::load(&path).unwrap();
        assert_eq!(j.resumes().collect::<Vec<_>>(), vec!["r1", "r2"]);
        assert_eq!(j.grades("r1").unwrap()["p1"], 2);
        std::fs::write(&path, "resume_id,posting_id,grade\nr1,p1,3\n").unwrap();
        let err = Judgments::load(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn bench_stats() {
        assert!(matches!(bench::<EvalError>(2, |_| Ok(())), Err(EvalError::TooFewRuns { .. })));
        let report = bench::<EvalError>(3, |t| {
            for phase in PHASES {
                t.record(phase, Duration::from_millis(5));
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(report.phases.len(), 5);
        for p in &report.phases {
            assert_eq!(p.runs, 3);
            assert!((p.mean - 0.005).abs() < 1e-12);
            assert!(p.std.abs() < 1e-12);
        }
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(report.render().contains("[RAG] Gen. Explanation"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn oracle(grades_in_order: &[u8], all: &[u8], p: usize) -> f64 {
            let g = |x: u8| 2f64.powi(x as i32) - 1.0;
            let mut d = 0.0;
            for (i, &x) in grades_in_order.iter().enumerate().take(p) {
                d += g(x) / (2.0 + i as f64).ln() * std::f64::consts::LN_2;
            }
            let mut s = all.to_vec();
            s.sort_by(|a, b| b.cmp(a));
            let mut id = 0.0;
            for (i, &x) in s.iter().enumerate().take(p) {
                id += g(x) / (2.0 + i as f64).ln() * std::f64::consts::LN_2;
            }
            if id == 0.0 { 0.0 } else { d / id }
        }

        proptest! {
            #[test]
            fn in_unit_interval_and_matches_oracle(gs in proptest::collection::vec(0u8..3, 1..20), p in 1usize..25) {
                let ids: Vec<String> = (0..gs.len()).map(|i| format!("d{i}")).collect();
                let map: HashMap<String, u8> = ids.iter().cloned().zip(gs.iter().copied()).collect();
                let v = ndcg_at_p(&ids, &map, p, Gain::Exponential).unwrap();
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert!((v - oracle(&gs, &gs, p)).abs() < 1e-9);
            }

            #[test]
            fn promoting_a_better_item_never_hurts(gs in proptest::collection::vec(0u8..3, 2..7), p in 1usize..8) {
                let n = gs.len();
                let ids: Vec<String> = (0..n).map(|k| format!("d{k}")).collect();
                let map: HashMap<String, u8> = ids.iter().cloned().zip(gs.iter().copied()).collect();
                let before = ndcg_at_p(&ids, &map, p, Gain::Exponential).unwrap();
                for i in 0..n {
                    for j in i + 1..n {
                        if gs[j] > gs[i] {
                            let mut swapped = ids.clone();
                            swapped.swap(i, j);
                            let after = ndcg_at_p(&swapped, &map, p, Gain::Exponential).unwrap();
                            prop_assert!(after >= before - 1e-12);
                        }
                    }
                }
            }
        }
    }
}
