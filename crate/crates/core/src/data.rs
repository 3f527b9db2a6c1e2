//! Multiple-choice QA datasets.
//!
//! Files use the ReClor JSON schema: an array of records with `context`,
//! `question`, `answers`, an optional integer `label` and `id_string`. The
//! synthetic generator writes the same schema.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of answer choices in every ReClor record.
pub const RECLOR_ANSWERS: usize = 4;

/// One question with its answer choices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqaInstance {
    pub context: String,
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(rename = "id_string")]
    pub id: String,
}

impl McqaInstance {
    pub fn n_answers(&self) -> usize {
        self.answers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::Validation {
            id: self.id.clone(),
            reason,
        };
        if self.answers.len() < 2 {
            return Err(invalid(format!(
                "expected at least 2 answers, found {}",
                self.answers.len()
            )));
        }
        if let Some(y) = self.label {
            if y >= self.answers.len() {
                return Err(invalid(format!(
                    "label {y} out of range for {} answers",
                    self.answers.len()
                )));
            }
        }
        if self.context.trim().is_empty() {
            return Err(invalid("empty context".into()));
        }
        if self.question.trim().is_empty() {
            return Err(invalid("empty question".into()));
        }
        Ok(())
    }
}

// Labels are parsed as signed so that `-1` or similar reports a validation
// error naming the record rather than a bare type error.
#[derive(Deserialize)]
struct RawRecord {
    context: String,
    question: String,
    answers: Vec<String>,
    #[serde(default)]
    label: Option<i64>,
    id_string: String,
}

pub(crate) fn byte_offset_of(text: &[u8], line: usize, column: usize) -> usize {
    let line_start = match line {
        0 | 1 => 0,
        _ => text
            .iter()
            .enumerate()
            .filter(|(_, b)| **b == b'\n')
            .nth(line - 2)
            .map_or(0, |(i, _)| i + 1),
    };
    line_start + column.saturating_sub(1)
}

/// Parses a JSON dataset from memory. When `n_answers` is given every record
/// must have exactly that many answers; otherwise all records must agree with
/// the first one.
pub fn parse_dataset_json(bytes: &[u8], n_answers: Option<usize>) -> Result<Vec<McqaInstance>> {
    let raw: Vec<RawRecord> = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        offset: byte_offset_of(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let expected = n_answers.or_else(|| raw.first().map(|r| r.answers.len()));
    raw.into_iter()
        .map(|r| {
            if Some(r.answers.len()) != expected {
                return Err(Error::Validation {
                    id: r.id_string,
                    reason: format!(
                        "expected {} answers, found {}",
                        expected.unwrap_or_default(),
                        r.answers.len()
                    ),
                });
            }
            let label = match r.label {
                None => None,
                Some(y) if y >= 0 => Some(y as usize),
                Some(y) => {
                    return Err(Error::Validation {
                        id: r.id_string,
                        reason: format!("negative label {y}"),
                    })
                }
            };
            let inst = McqaInstance {
                context: r.context,
                question: r.question,
                answers: r.answers,
                label,
                id: r.id_string,
            };
            inst.validate()?;
            Ok(inst)
        })
        .collect()
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a ReClor file; every record must carry exactly four answers.
pub fn load_reclor_json(path: impl AsRef<Path>) -> Result<Vec<McqaInstance>> {
    parse_dataset_json(&read(path.as_ref())?, Some(RECLOR_ANSWERS))
}

/// Loads any file in the ReClor schema with a uniform answer count.
pub fn load_dataset_json(path: impl AsRef<Path>) -> Result<Vec<McqaInstance>> {
    parse_dataset_json(&read(path.as_ref())?, None)
}

pub fn to_json(instances: &[McqaInstance]) -> String {
    serde_json::to_string_pretty(instances).expect("dataset serialization cannot fail")
}

pub fn save_dataset_json(path: impl AsRef<Path>, instances: &[McqaInstance]) -> Result<()> {
    let path = path.as_ref();
    let mut text = to_json(instances);
    text.push('\n');
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Per-label counts, indexed by label. Unlabeled records are not counted.
pub fn label_histogram(instances: &[McqaInstance]) -> Vec<usize> {
    let mut hist = Vec::new();
    for y in instances.iter().filter_map(|i| i.label) {
        if hist.len() <= y {
            hist.resize(y + 1, 0);
        }
        hist[y] += 1;
    }
    hist
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<McqaInstance>,
    pub test: Vec<McqaInstance>,
    pub seed: u64,
}

/// Label-stratified train/test split.
///
/// The test set has `round(test_fraction · n)` records. Quotas per label are
/// allotted by largest remainder (ties to the smaller label, unlabeled last),
/// and each stratum is shuffled with a seeded ChaCha stream. Both halves keep
/// the corpus order.
pub fn split_dataset(corpus: &[McqaInstance], test_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if corpus.is_empty() {
        return Err(Error::config("cannot split an empty corpus"));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = corpus.len();
    let test_size = (test_fraction * n as f64).round() as usize;
    if test_fraction * (n as f64) < 1.0 || test_size == 0 {
        return Err(Error::config(format!(
            "test fraction {test_fraction} of {n} records selects no test records"
        )));
    }
    if test_size >= n {
        return Err(Error::config(format!(
            "test fraction {test_fraction} of {n} records leaves no training records"
        )));
    }

    // `None` sorts first in a BTreeMap; keep labeled strata ahead of it.
    let mut strata: BTreeMap<(bool, usize), Vec<usize>> = BTreeMap::new();
    for (idx, inst) in corpus.iter().enumerate() {
        let key = match inst.label {
            Some(y) => (false, y),
            None => (true, 0),
        };
        strata.entry(key).or_default().push(idx);
    }

    let exact: Vec<f64> = strata
        .values()
        .map(|members| members.len() as f64 * test_size as f64 / n as f64)
        .collect();
    let mut quotas: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = test_size - quotas.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        if quotas[k] < strata.values().nth(k).map_or(0, Vec::len) {
            quotas[k] += 1;
            missing -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; n];
    for (members, &quota) in strata.values().zip(&quotas) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for &idx in &shuffled[..quota] {
            in_test[idx] = true;
        }
    }

    let (test, train): (Vec<_>, Vec<_>) = corpus
        .iter()
        .cloned()
        .zip(in_test)
        .partition(|(_, t)| *t);
    Ok(DatasetSplit {
        train: train.into_iter().map(|(i, _)| i).collect(),
        test: test.into_iter().map(|(i, _)| i).collect(),
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    /// Distractors share no token with the context.
    Separable,
    /// Every distractor shares at least one token with the context.
    Noisy,
}

/// Question template; `{}` is replaced by the instance's question terms.
pub const SYNTHETIC_QUESTION: &str = "Which statement about {} is best supported by the passage?";

const PLANTED: usize = 3;
const MAX_FILLERS: usize = 6;
/// Input words each answer repeats.
const ECHOED: usize = 2;

fn word(idx: usize) -> String {
    format!("tok{idx}")
}

/// Generates questions whose correct answer can be found by token overlap
/// with the context.
///
/// The vocabulary `tok0..tok{vocab_size}` is split into a keyword pool (the
/// first quarter, at least three words) and a filler pool. Each context holds
/// three planted keywords and up to six fillers. The correct answer repeats
/// two planted keywords plus one fresh filler. The question names two
/// fillers per distractor, absent from the context, and each separable
/// distractor repeats its own pair plus one fresh filler. Every answer thus
/// echoes two input words and adds one new word, and only overlap with the
/// context tells them apart. Noisy distractors swap one term for a context
/// filler, and with probability 0.3 the other for a planted keyword.
pub fn generate_synthetic(
    n: usize,
    vocab_size: usize,
    n_answers: usize,
    difficulty: Difficulty,
    seed: u64,
) -> Result<Vec<McqaInstance>> {
    if n == 0 {
        return Err(Error::config("need at least one instance"));
    }
    if vocab_size < 8 {
        return Err(Error::config(format!(
            "vocab_size must be at least 8, got {vocab_size}"
        )));
    }
    if n_answers < 2 {
        return Err(Error::config(format!(
            "n_answers must be at least 2, got {n_answers}"
        )));
    }
    let n_keywords = (vocab_size / 4).max(PLANTED);
    let keywords: Vec<usize> = (0..n_keywords).collect();
    let fillers: Vec<usize> = (n_keywords..vocab_size).collect();
    // Words kept out of the context: two question terms per distractor and
    // one fresh word per answer. Small vocabularies reuse them cyclically.
    let n_outside = ECHOED * (n_answers - 1) + n_answers;
    let n_fillers = MAX_FILLERS.min(fillers.len().saturating_sub(n_outside));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let planted: Vec<usize> = keywords.choose_multiple(&mut rng, PLANTED).copied().collect();
        let mut pool = fillers.clone();
        pool.shuffle(&mut rng);
        let (ctx_fillers, outside) = pool.split_at(n_fillers);
        let mut reserved = outside.iter().cycle();
        let mut take = |k: usize| -> Vec<usize> { reserved.by_ref().take(k).copied().collect() };
        let terms = take(ECHOED * (n_answers - 1));
        let fresh = take(n_answers);

        let mut context_words: Vec<usize> = planted.iter().chain(ctx_fillers).copied().collect();
        context_words.shuffle(&mut rng);

        let label = rng.gen_range(0..n_answers);
        let mut distractor_terms = terms.chunks(ECHOED);
        let mut answers = Vec::with_capacity(n_answers);
        for (j, &fresh_word) in fresh.iter().enumerate() {
            let mut words: Vec<usize> = if j == label {
                planted.choose_multiple(&mut rng, ECHOED).copied().collect()
            } else {
                let mut w = distractor_terms.next().expect("one pair per distractor").to_vec();
                if difficulty == Difficulty::Noisy {
                    let shared = if ctx_fillers.is_empty() {
                        &planted[..]
                    } else {
                        ctx_fillers
                    };
                    w[0] = *shared.choose(&mut rng).expect("non-empty");
                    if rng.gen_bool(0.3) {
                        w[1] = *planted.choose(&mut rng).expect("non-empty");
                    }
                }
                w
            };
            words.push(fresh_word);
            words.shuffle(&mut rng);
            answers.push(join_words(&words));
        }

        out.push(McqaInstance {
            context: join_words(&context_words),
            question: SYNTHETIC_QUESTION.replace("{}", &join_words(&terms)),
            answers,
            label: Some(label),
            id: format!("synthetic-{seed}-{idx}"),
        });
    }
    Ok(out)
}

fn join_words(words: &[usize]) -> String {
    words.iter().map(|&w| word(w)).collect::<Vec<_>>().join(" ")
}
