//! Instruction similarity metrics and distance/success distribution
//! tables.
//!
//! Instructions are sequences of `u32` token ids. Real text is lowercased
//! and split on whitespace with punctuation as separate tokens, then
//! interned through a [`Vocab`]; synthetic instructions already arrive as
//! token ids and bypass tokenization.
//!
//! An instruction's "distance" to a training set is a similarity score in
//! [0,1]: the aggregated ROUGE-L against every training instruction, or
//! BLEU-4 with the whole training set as references. The aggregate for
//! ROUGE-L defaults to `min` — the score of the *least* similar training
//! instruction — and can be switched to `max`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BLEU_EPSILON: f64 = 1e-9;
const MAX_ORDER: usize = 4;

/// Lowercase and split text into word and punctuation tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() {
            current.push(ch);
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Interns words to dense ids in first-seen order.
#[derive(Debug, Default, Clone)]
pub struct Vocab {
    index: BTreeMap<String, u32>,
    words: Vec<String>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.index.insert(word.to_string(), id);
        self.words.push(word.to_string());
        id
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// A nonempty sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedInstruction {
    tokens: Vec<u32>,
}

impl TokenizedInstruction {
    pub fn from_ids(tokens: Vec<u32>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Validation("instruction has no tokens".into()));
        }
        Ok(TokenizedInstruction { tokens })
    }

    pub fn from_text(text: &str, vocab: &mut Vocab) -> Result<Self> {
        let tokens = tokenize(text)
            .iter()
            .map(|w| vocab.intern(w))
            .collect();
        Self::from_ids(tokens)
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }
}

/// How per-reference ROUGE-L scores are folded into one distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityAggregate {
    /// Score of the least similar training instruction (the printed
    /// definition).
    #[default]
    Min,
    /// Score of the most similar training instruction.
    Max,
}

/// Shared multi-reference n-gram index: per order, the maximum count of
/// each n-gram across all references, plus every reference length.
pub struct RefIndex {
    max_counts: [HashMap<Vec<u32>, u32>; MAX_ORDER],
    ref_lens: Vec<usize>,
}

impl RefIndex {
    pub fn build<S: AsRef<[u32]>>(references: &[S]) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::Domain("BLEU needs at least one reference".into()));
        }
        let mut max_counts: [HashMap<Vec<u32>, u32>; MAX_ORDER] = Default::default();
        let mut ref_lens = Vec::with_capacity(references.len());
        for r in references {
            let r = r.as_ref();
            if r.is_empty() {
                return Err(Error::Validation("empty reference instruction".into()));
            }
            ref_lens.push(r.len());
            for (n, bucket) in max_counts.iter_mut().enumerate() {
                for (gram, count) in ngram_counts(r, n + 1) {
                    let slot = bucket.entry(gram).or_insert(0);
                    *slot = (*slot).max(count);
                }
            }
        }
        Ok(RefIndex {
            max_counts,
            ref_lens,
        })
    }

    /// Reference length closest to `candidate_len`; ties favor the
    /// shorter reference.
    fn closest_ref_len(&self, candidate_len: usize) -> usize {
        let mut best = self.ref_lens[0];
        for &len in &self.ref_lens[1..] {
            let (d, bd) = (
                len.abs_diff(candidate_len),
                best.abs_diff(candidate_len),
            );
            if d < bd || (d == bd && len < best) {
                best = len;
            }
        }
        best
    }
}

fn ngram_counts(tokens: &[u32], n: usize) -> HashMap<Vec<u32>, u32> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU-4 against a prebuilt reference index.
///
/// Geometric mean of clipped n-gram precisions for orders 1..=4 (capped
/// at the candidate length so short identical pairs still score 1.0),
/// times the closest-reference-length brevity penalty. Orders with zero
/// clipped count contribute the add-epsilon precision `1e-9 / denom`.
pub fn bleu4_indexed(candidate: &[u32], index: &RefIndex) -> Result<f64> {
    if candidate.is_empty() {
        return Err(Error::Validation("empty candidate instruction".into()));
    }
    let orders = MAX_ORDER.min(candidate.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let denom = (candidate.len() - n + 1) as f64;
        let mut clipped = 0u32;
        for (gram, count) in ngram_counts(candidate, n) {
            let limit = index.max_counts[n - 1].get(&gram).copied().unwrap_or(0);
            clipped += count.min(limit);
        }
        let p = if clipped == 0 {
            BLEU_EPSILON / denom
        } else {
            f64::from(clipped) / denom
        };
        log_sum += p.ln();
    }
    let precision = (log_sum / orders as f64).exp();
    let c = candidate.len() as f64;
    let r = index.closest_ref_len(candidate.len()) as f64;
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    Ok(bp * precision)
}

/// BLEU-4 of `candidate` against `references`.
pub fn bleu4<S: AsRef<[u32]>>(candidate: &[u32], references: &[S]) -> Result<f64> {
    bleu4_indexed(candidate, &RefIndex::build(references)?)
}

/// ROUGE-L F1: longest common subsequence precision/recall harmonic mean.
pub fn rouge_l(candidate: &[u32], reference: &[u32]) -> Result<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::Validation(
            "ROUGE-L operands must be nonempty".into(),
        ));
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return Ok(0.0);
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

fn lcs_len(a: &[u32], b: &[u32]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            row[j + 1] = if x == y {
                prev[j] + 1
            } else {
                row[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// Aggregated ROUGE-L of `x` over a training set.
pub fn dis_rouge<S: AsRef<[u32]>>(
    x: &[u32],
    training: &[S],
    aggregate: SimilarityAggregate,
) -> Result<f64> {
    if training.is_empty() {
        return Err(Error::Domain(
            "instruction distance needs a nonempty training set".into(),
        ));
    }
    let mut best = None::<f64>;
    for t in training {
        let score = rouge_l(x, t.as_ref())?;
        best = Some(match (best, aggregate) {
            (None, _) => score,
            (Some(b), SimilarityAggregate::Min) => b.min(score),
            (Some(b), SimilarityAggregate::Max) => b.max(score),
        });
    }
    Ok(best.expect("training set checked nonempty"))
}

/// BLEU-4 of `x` with the whole training set as references.
pub fn dis_bleu<S: AsRef<[u32]>>(x: &[u32], training: &[S]) -> Result<f64> {
    bleu4(x, training)
}

/// One histogram bin over [0,1] with its mean success.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean success of items in the bin; `None` when the bin is empty.
    pub success_rate: Option<f64>,
}

/// Equal-width bins over [0,1]; the last bin is closed so a distance of
/// exactly 1.0 is counted.
pub fn distance_success_table(
    distances: &[f64],
    successes: &[bool],
    num_bins: usize,
) -> Result<Vec<Bin>> {
    if distances.len() != successes.len() {
        return Err(Error::Validation(format!(
            "{} distances vs {} successes",
            distances.len(),
            successes.len()
        )));
    }
    if num_bins == 0 {
        return Err(Error::Validation("need at least one bin".into()));
    }
    let mut counts = vec![0usize; num_bins];
    let mut wins = vec![0usize; num_bins];
    for (&d, &s) in distances.iter().zip(successes) {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::Domain(format!(
                "distance {d} outside [0,1]"
            )));
        }
        let bin = ((d * num_bins as f64) as usize).min(num_bins - 1);
        counts[bin] += 1;
        if s {
            wins[bin] += 1;
        }
    }
    let width = 1.0 / num_bins as f64;
    Ok((0..num_bins)
        .map(|i| Bin {
            lo: i as f64 * width,
            hi: if i + 1 == num_bins {
                1.0
            } else {
                (i + 1) as f64 * width
            },
            count: counts[i],
            success_rate: if counts[i] > 0 {
                Some(wins[i] as f64 / counts[i] as f64)
            } else {
                None
            },
        })
        .collect())
}

/// Per-item instruction distances joined with navigation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceItem {
    pub id: String,
    pub dis_rouge: f64,
    pub dis_bleu: f64,
    pub success: bool,
}

/// Items plus the two binned success tables (one per metric).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub items: Vec<DistanceItem>,
    pub rouge_bins: Vec<Bin>,
    pub bleu_bins: Vec<Bin>,
}

impl DistanceReport {
    pub fn build(items: Vec<DistanceItem>, num_bins: usize) -> Result<Self> {
        let successes: Vec<bool> = items.iter().map(|i| i.success).collect();
        let rouge: Vec<f64> = items.iter().map(|i| i.dis_rouge).collect();
        let bleu: Vec<f64> = items.iter().map(|i| i.dis_bleu).collect();
        Ok(DistanceReport {
            rouge_bins: distance_success_table(&rouge, &successes, num_bins)?,
            bleu_bins: distance_success_table(&bleu, &successes, num_bins)?,
            items,
        })
    }

    /// Per-item CSV: `item_id, dis_rouge, dis_bleu, success`.
    pub fn write_items_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::serde(path, e))?;
        w.write_record(["item_id", "dis_rouge", "dis_bleu", "success"])
            .map_err(|e| Error::serde(path, e))?;
        for item in &self.items {
            w.write_record([
                item.id.as_str(),
                &format!("{:.6}", item.dis_rouge),
                &format!("{:.6}", item.dis_bleu),
                &(item.success as u8).to_string(),
            ])
            .map_err(|e| Error::serde(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Bin CSV: `metric, lo, hi, count, success_rate` (blank when empty).
    pub fn write_bins_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::serde(path, e))?;
        w.write_record(["metric", "lo", "hi", "count", "success_rate"])
            .map_err(|e| Error::serde(path, e))?;
        for (metric, bins) in [("rouge_l", &self.rouge_bins), ("bleu4", &self.bleu_bins)] {
            for bin in bins {
                w.write_record([
                    metric,
                    &format!("{:.4}", bin.lo),
                    &format!("{:.4}", bin.hi),
                    &bin.count.to_string(),
                    &bin.success_rate
                        .map(|s| format!("{s:.4}"))
                        .unwrap_or_default(),
                ])
                .map_err(|e| Error::serde(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(tokens: &[u32]) -> Vec<u32> {
        tokens.to_vec()
    }

    #[test]
    fn tokenizer_lowercases_and_splits_punctuation() {
        let got = tokenize("Turn LEFT, then stop.");
        assert_eq!(got, ["turn", "left", ",", "then", "stop", "."]);
    }

    #[test]
    fn vocab_interning_is_stable() {
        let mut v = Vocab::new();
        let a = v.intern("left");
        let b = v.intern("right");
        assert_eq!(v.intern("left"), a);
        assert_ne!(a, b);
        assert_eq!(v.word(b), Some("right"));
    }

    #[test]
    fn bleu_identity_for_various_lengths() {
        for len in [1usize, 2, 3, 4, 9] {
            let seq: Vec<u32> = (0..len as u32).collect();
            let score = bleu4(&seq, &[seq.clone()]).unwrap();
            assert!((score - 1.0).abs() < 1e-12, "len {len}: {score}");
        }
    }

    #[test]
    fn bleu_disjoint_vocabulary_is_tiny() {
        let cand = ids(&[1, 2, 3, 4, 5]);
        let score = bleu4(&cand, &[ids(&[10, 11, 12, 13, 14])]).unwrap();
        assert!(score <= 1e-6, "{score}");
    }

    /// Clipped precisions 4/5, 3/4, 2/3, 1/2 → (1/5)^(1/4).
    #[test]
    fn bleu_hand_case_one_substitution() {
        let cand = ids(&[1, 2, 3, 4, 5]);
        let reference = ids(&[1, 2, 3, 4, 6]);
        let score = bleu4(&cand, &[reference]).unwrap();
        assert!((score - 0.2f64.powf(0.25)).abs() < 1e-12);
        assert!((score - 0.6687).abs() < 1e-4);
    }

    /// Unigram and bigram precisions are exactly 1; the only candidate
    /// trigram appears in no reference, so its precision is the epsilon
    /// floor and the score is (1e-9)^(1/3) = 1e-3.
    #[test]
    fn bleu_hand_case_three_references() {
        let cand = ids(&[1, 2, 3]);
        let refs = [ids(&[1, 2]), ids(&[2, 3, 4]), ids(&[8, 9])];
        let score = bleu4(&cand, &refs).unwrap();
        assert!((score - 1e-3).abs() < 1e-12, "{score}");
    }

    #[test]
    fn bleu_brevity_penalty_uses_closest_reference() {
        // Candidate length 3; references of lengths 3 and 9 both contain
        // the candidate's n-grams, so the closest (3) gives BP = 1.
        let cand = ids(&[1, 2, 3]);
        let long: Vec<u32> = ids(&[1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let score = bleu4(&cand, &[ids(&[1, 2, 3]), long.clone()]).unwrap();
        assert!((score - 1.0).abs() < 1e-12);
        // With only the long reference, BP = exp(1 - 9/3).
        let score = bleu4(&cand, &[long]).unwrap();
        assert!((score - (1.0f64 - 3.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn bleu_empty_references_rejected() {
        let refs: Vec<Vec<u32>> = Vec::new();
        assert!(bleu4(&ids(&[1]), &refs).is_err());
    }

    #[test]
    fn rouge_identical_and_disjoint() {
        let a = ids(&[5, 6, 7]);
        assert_eq!(rouge_l(&a, &a).unwrap(), 1.0);
        assert_eq!(rouge_l(&a, &ids(&[9, 10])).unwrap(), 0.0);
    }

    /// LCS = 2, P = 2/3, R = 1 → F1 = 0.8.
    #[test]
    fn rouge_hand_case() {
        let cand = ids(&[1, 2, 3]); // "the cat sat"
        let reference = ids(&[1, 2]); // "the cat"
        let got = rouge_l(&cand, &reference).unwrap();
        assert!((got - 0.8).abs() < 1e-12);
    }

    #[test]
    fn dis_rouge_min_semantics() {
        let x = ids(&[1, 2, 3]);
        // Sole identical training instruction → 1.0.
        assert_eq!(
            dis_rouge(&x, &[x.clone()], SimilarityAggregate::Min).unwrap(),
            1.0
        );
        // Any disjoint instruction forces the min to 0.
        let training = [x.clone(), ids(&[7, 8, 9])];
        assert_eq!(
            dis_rouge(&x, &training, SimilarityAggregate::Min).unwrap(),
            0.0
        );
        assert_eq!(
            dis_rouge(&x, &training, SimilarityAggregate::Max).unwrap(),
            1.0
        );
    }

    #[test]
    fn dis_rouge_matches_brute_force_over_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let mut gen_seq = |max: u32| -> Vec<u32> {
                let len = rng.gen_range(1..=8);
                (0..len).map(|_| rng.gen_range(0..max)).collect()
            };
            let x = gen_seq(6);
            let training: Vec<Vec<u32>> = (0..7).map(|_| gen_seq(6)).collect();
            for agg in [SimilarityAggregate::Min, SimilarityAggregate::Max] {
                let got = dis_rouge(&x, &training, agg).unwrap();
                let scores: Vec<f64> = training
                    .iter()
                    .map(|t| rouge_l(&x, t).unwrap())
                    .collect();
                let want = match agg {
                    SimilarityAggregate::Min => {
                        scores.iter().cloned().fold(f64::INFINITY, f64::min)
                    }
                    SimilarityAggregate::Max => {
                        scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    }
                };
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn dis_bleu_of_training_member_is_one() {
        let training = [ids(&[1, 2, 3, 4]), ids(&[5, 6]), ids(&[7, 8, 9])];
        let got = dis_bleu(&training[0], &training).unwrap();
        assert!((got - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permuting_training_set_changes_nothing() {
        let x = ids(&[1, 2, 3, 2, 1]);
        let training = [ids(&[1, 2, 4]), ids(&[2, 3]), ids(&[3, 2, 1, 0])];
        let mut reversed = training.to_vec();
        reversed.reverse();
        assert_eq!(
            dis_bleu(&x, &training).unwrap(),
            dis_bleu(&x, &reversed).unwrap()
        );
        assert_eq!(
            dis_rouge(&x, &training, SimilarityAggregate::Min).unwrap(),
            dis_rouge(&x, &reversed, SimilarityAggregate::Min).unwrap()
        );
    }

    #[test]
    fn bins_partition_items_and_all_success_means_rate_one() {
        let distances = [0.05, 0.1, 0.35, 0.62, 0.99, 1.0];
        let successes = [true; 6];
        let bins = distance_success_table(&distances, &successes, 4).unwrap();
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 6);
        for bin in &bins {
            if bin.count > 0 {
                assert_eq!(bin.success_rate, Some(1.0));
            } else {
                assert_eq!(bin.success_rate, None);
            }
        }
        // 0.99 and the closed upper edge 1.0 both land in the final bin.
        assert_eq!(bins[3].count, 2);
    }

    #[test]
    fn one_item_per_bin_hand_case() {
        let distances = [0.1, 0.3, 0.6, 0.9];
        let successes = [true, false, true, false];
        let bins = distance_success_table(&distances, &successes, 4).unwrap();
        let counts: Vec<usize> = bins.iter().map(|b| b.count).collect();
        assert_eq!(counts, [1, 1, 1, 1]);
        assert_eq!(
            bins.iter().map(|b| b.success_rate).collect::<Vec<_>>(),
            [Some(1.0), Some(0.0), Some(1.0), Some(0.0)]
        );
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(distance_success_table(&[0.1], &[], 3).is_err());
    }

    #[test]
    fn report_roundtrips_through_csv_files() {
        let items = vec![
            DistanceItem {
                id: "ep0".into(),
                dis_rouge: 0.25,
                dis_bleu: 0.5,
                success: true,
            },
            DistanceItem {
                id: "ep1".into(),
                dis_rouge: 0.75,
                dis_bleu: 0.125,
                success: false,
            },
        ];
        let report = DistanceReport::build(items, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let items_path = dir.path().join("items.csv");
        let bins_path = dir.path().join("bins.csv");
        report.write_items_csv(&items_path).unwrap();
        report.write_bins_csv(&bins_path).unwrap();
        let text = std::fs::read_to_string(&items_path).unwrap();
        assert!(text.starts_with("item_id,dis_rouge,dis_bleu,success"));
        assert!(text.contains("ep0,0.250000,0.500000,1"));
        let bins = std::fs::read_to_string(&bins_path).unwrap();
        assert_eq!(bins.lines().count(), 1 + 8);
    }
}
