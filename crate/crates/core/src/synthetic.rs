//! Synthetic keyword-detection task: a sentence is positive iff it contains
//! the keyword token.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::vocab::LabeledExample;

pub const KEYWORD: &str = "kw";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeywordTask {
    pub sentences: usize,
    pub length: usize,
    /// Distinct tokens including the keyword.
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for KeywordTask {
    fn default() -> Self {
        KeywordTask {
            sentences: 200,
            length: 8,
            vocab_size: 50,
            seed: 7,
        }
    }
}

impl KeywordTask {
    pub fn distractors(&self) -> Vec<String> {
        (1..self.vocab_size).map(|i| format!("w{i}")).collect()
    }
}

/// Alternating negative/positive sentences of uniformly drawn distractors;
/// positives get the keyword at one uniformly chosen position.
pub fn keyword_dataset(task: &KeywordTask) -> Vec<LabeledExample> {
    assert!(task.vocab_size >= 2 && task.length >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let distractors = task.distractors();
    (0..task.sentences)
        .map(|k| {
            let label = k % 2;
            let mut tokens: Vec<String> = (0..task.length)
                .map(|_| distractors[rng.gen_range(0..distractors.len())].clone())
                .collect();
            if label == 1 {
                tokens[rng.gen_range(0..task.length)] = KEYWORD.to_string();
            }
            LabeledExample::Single { tokens, label }
        })
        .collect()
}

/// Line-delimited JSON in the single-sentence dataset format.
pub fn to_jsonl(data: &[LabeledExample]) -> String {
    let mut out = String::new();
    for ex in data {
        let record = match ex {
            LabeledExample::Single { tokens, label } => serde_json::json!({ "sentence": tokens.join(" "), "label": label }),
            LabeledExample::Pair { premise, hypothesis, label } => serde_json::json!({
                "premise": premise.join(" "),
                "hypothesis": hypothesis.join(" "),
                "label": label,
            }),
        };
        out.push_str(&record.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{parse_dataset, DatasetFormat, LabelSet};

    #[test]
    fn labels_match_keyword_presence() {
        let task = KeywordTask::default();
        let data = keyword_dataset(&task);
        assert_eq!(data.len(), 200);
        for ex in &data {
            let LabeledExample::Single { tokens, label } = ex else { unreachable!() };
            assert_eq!(tokens.len(), 8);
            assert_eq!(tokens.iter().any(|t| t == KEYWORD), *label == 1);
        }
        assert_eq!(data, keyword_dataset(&task));
    }

    #[test]
    fn jsonl_round_trip() {
        let data = keyword_dataset(&KeywordTask {
            sentences: 6,
            ..KeywordTask::default()
        });
        let parsed = parse_dataset(&to_jsonl(&data), DatasetFormat::Single, &LabelSet::numeric(2)).unwrap();
        assert_eq!(parsed, data);
    }
}
