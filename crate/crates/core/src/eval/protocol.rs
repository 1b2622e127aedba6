use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::eer::{compute_eer, ScoreSet};
use super::embedding::{cosine_score, extract_embedding};
use crate::audio::{read_wav, speed_perturb, CorpusManifest, Waveform, MAX_SPEED, MIN_SPEED};
use crate::error::{Error, Result};
use crate::model::FdnModel;
use crate::numfmt::sig6;

/// One verification pair; the indices point into the manifest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trial {
    pub target: bool,
    pub enroll: usize,
    pub test: usize,
}

/// Parses `1|0 enroll test` lines. Each side names an utterance id or, failing
/// that, its path as written in the manifest.
pub fn parse_trials(text: &str, manifest: &CorpusManifest) -> Result<Vec<Trial>> {
    let mut by_key: HashMap<&str, usize> = HashMap::new();
    for (i, u) in manifest.utterances.iter().enumerate() {
        if let Some(p) = u.path.to_str() {
            by_key.entry(p).or_insert(i);
        }
    }
    // Ids take precedence over paths.
    for (i, u) in manifest.utterances.iter().enumerate() {
        by_key.insert(u.id.as_str(), i);
    }
    let resolve = |key: &str| -> Result<usize> {
        by_key
            .get(key)
            .copied()
            .ok_or_else(|| Error::MissingUtterance(key.to_string()))
    };

    let mut trials = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Trials {
            line: line_no + 1,
            reason,
        };
        let [label, enroll, test] = fields.as_slice() else {
            return Err(bad("expected `label enroll test`".into()));
        };
        let target = match *label {
            "1" => true,
            "0" => false,
            other => return Err(bad(format!("label '{other}' is not 1 or 0"))),
        };
        trials.push(Trial {
            target,
            enroll: resolve(enroll)?,
            test: resolve(test)?,
        });
    }
    Ok(trials)
}

pub fn read_trials(path: impl AsRef<Path>, manifest: &CorpusManifest) -> Result<Vec<Trial>> {
    let text = fs::read_to_string(path)?;
    parse_trials(&text, manifest)
}

/// Count, mean, standard deviation and range of one score population.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl ScoreSummary {
    fn of(scores: impl Iterator<Item = f64> + Clone) -> Self {
        let count = scores.clone().count();
        if count == 0 {
            return Self {
                count,
                mean: f64::NAN,
                std: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        let mean = scores.clone().sum::<f64>() / count as f64;
        let var = scores.clone().map(|s| (s - mean) * (s - mean)).sum::<f64>() / count as f64;
        Self {
            count,
            mean,
            std: var.sqrt(),
            min: scores.clone().fold(f64::INFINITY, f64::min),
            max: scores.fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

pub const HISTOGRAM_BINS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct EerReport {
    pub eer: f64,
    pub threshold: f64,
    pub targets: ScoreSummary,
    pub nontargets: ScoreSummary,
    /// Target and nontarget counts in equal-width bins over `[-1, 1]`.
    pub histogram: Vec<(usize, usize)>,
    pub scores: ScoreSet,
}

impl EerReport {
    pub fn from_scores(scores: ScoreSet) -> Result<Self> {
        let (eer, threshold) = compute_eer(&scores)?;
        let pick = |want: bool| {
            scores
                .scores
                .iter()
                .zip(&scores.targets)
                .filter(move |(_, &t)| t == want)
                .map(|(&s, _)| s)
        };
        let mut histogram = vec![(0, 0); HISTOGRAM_BINS];
        for (&s, &t) in scores.scores.iter().zip(&scores.targets) {
            let bin = (((s + 1.0) / 2.0 * HISTOGRAM_BINS as f64).floor().max(0.0) as usize)
                .min(HISTOGRAM_BINS - 1);
            if t {
                histogram[bin].0 += 1;
            } else {
                histogram[bin].1 += 1;
            }
        }
        Ok(Self {
            eer,
            threshold,
            targets: ScoreSummary::of(pick(true)),
            nontargets: ScoreSummary::of(pick(false)),
            histogram,
            scores,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "eer\t{}", sig6(self.eer));
        let _ = writeln!(s, "threshold\t{}", sig6(self.threshold));
        for (name, summary) in [("target", &self.targets), ("nontarget", &self.nontargets)] {
            let _ = writeln!(
                s,
                "{name}\tcount={}\tmean={}\tstd={}\tmin={}\tmax={}",
                summary.count,
                sig6(summary.mean),
                sig6(summary.std),
                sig6(summary.min),
                sig6(summary.max)
            );
        }
        let _ = writeln!(s, "bin_low\tbin_high\ttargets\tnontargets");
        let width = 2.0 / HISTOGRAM_BINS as f64;
        for (i, (t, n)) in self.histogram.iter().enumerate() {
            let lo = -1.0 + i as f64 * width;
            let _ = writeln!(s, "{}\t{}\t{t}\t{n}", sig6(lo), sig6(lo + width));
        }
        s
    }
}

/// Lazily computed embeddings, at most once per utterance.
struct EmbeddingCache<'a> {
    model: &'a FdnModel,
    manifest: &'a CorpusManifest,
    transform: Option<f64>,
    cache: HashMap<usize, Vec<f64>>,
}

impl<'a> EmbeddingCache<'a> {
    fn new(model: &'a FdnModel, manifest: &'a CorpusManifest, speed: Option<f64>) -> Self {
        Self {
            model,
            manifest,
            transform: speed,
            cache: HashMap::new(),
        }
    }

    fn fill(&mut self, indices: impl IntoIterator<Item = usize>) -> Result<()> {
        for i in indices {
            if self.cache.contains_key(&i) {
                continue;
            }
            let mut wave: Waveform = read_wav(&self.manifest.utterances[i].path)?;
            if let Some(factor) = self.transform {
                wave = speed_perturb(&wave, factor)?;
            }
            self.cache.insert(i, extract_embedding(self.model, &wave)?);
        }
        Ok(())
    }

    fn get(&self, i: usize) -> &[f64] {
        &self.cache[&i]
    }
}

fn sorted_unique(it: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = it.collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn score_trials(
    trials: &[Trial],
    enroll: &EmbeddingCache,
    test: &EmbeddingCache,
) -> Result<ScoreSet> {
    let mut set = ScoreSet::default();
    for t in trials {
        set.push(
            cosine_score(enroll.get(t.enroll), test.get(t.test))?,
            t.target,
        );
    }
    Ok(set)
}

/// Cosine score of every trial, in trial order. Each utterance is embedded
/// once however many trials name it.
pub fn score_protocol(
    model: &FdnModel,
    manifest: &CorpusManifest,
    trials: &[Trial],
) -> Result<ScoreSet> {
    let mut cache = EmbeddingCache::new(model, manifest, None);
    cache.fill(sorted_unique(
        trials.iter().flat_map(|t| [t.enroll, t.test]),
    ))?;
    score_trials(trials, &cache, &cache)
}

/// Scores every trial by cosine similarity and reports the EER.
pub fn evaluate_protocol(
    model: &FdnModel,
    manifest: &CorpusManifest,
    trials: &[Trial],
) -> Result<EerReport> {
    EerReport::from_scores(score_protocol(model, manifest, trials)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub factor: f64,
    pub eer: f64,
    pub threshold: f64,
}

/// Re-evaluates the trials with every test-side utterance speed-perturbed by
/// each factor in turn. Enrollment stays clean.
pub fn perturbation_sweep(
    model: &FdnModel,
    manifest: &CorpusManifest,
    trials: &[Trial],
    factors: &[f64],
) -> Result<Vec<SweepRow>> {
    for &f in factors {
        if !(MIN_SPEED..=MAX_SPEED).contains(&f) {
            return Err(Error::InvalidArgument(format!(
                "speed factor {f} outside [{MIN_SPEED}, {MAX_SPEED}]"
            )));
        }
    }
    if factors.is_empty() {
        return Ok(Vec::new());
    }
    let mut enroll = EmbeddingCache::new(model, manifest, None);
    enroll.fill(sorted_unique(trials.iter().map(|t| t.enroll)))?;
    let test_side = sorted_unique(trials.iter().map(|t| t.test));
    let mut rows = Vec::with_capacity(factors.len());
    for &factor in factors {
        let mut test = EmbeddingCache::new(model, manifest, Some(factor));
        test.fill(test_side.iter().copied())?;
        let (eer, threshold) = compute_eer(&score_trials(trials, &enroll, &test)?)?;
        rows.push(SweepRow {
            factor,
            eer,
            threshold,
        });
    }
    Ok(rows)
}

/// `factor<TAB>eer<TAB>threshold` lines under a header.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::from("factor\teer\tthreshold\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}",
            sig6(r.factor),
            sig6(r.eer),
            sig6(r.threshold)
        );
    }
    s
}
