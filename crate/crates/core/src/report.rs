//! Depth statistics of greedy trees per token group.

use std::collections::HashSet;

use crate::model::{ArTree, ModelError};

/// Token set of a group; `All` matches every token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TokenSet {
    All,
    Tokens(HashSet<String>),
}

impl TokenSet {
    pub fn contains(&self, token: &str) -> bool {
        match self {
            TokenSet::All => true,
            TokenSet::Tokens(set) => set.contains(token),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenGroup {
    pub name: String,
    pub tokens: TokenSet,
}

impl TokenGroup {
    pub fn new<I, S>(name: impl Into<String>, tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TokenGroup {
            name: name.into(),
            tokens: TokenSet::Tokens(tokens.into_iter().map(Into::into).collect()),
        }
    }

    pub fn all(name: impl Into<String>) -> Self {
        TokenGroup {
            name: name.into(),
            tokens: TokenSet::All,
        }
    }

    /// Parses `name=tok1,tok2,...`; `name=*` selects every token.
    pub fn parse(spec: &str) -> Option<Self> {
        let (name, list) = spec.split_once('=')?;
        let name = name.trim();
        if name.is_empty() {
            return None;
        }
        if list.trim() == "*" {
            return Some(TokenGroup::all(name));
        }
        let tokens: Vec<String> = list.split(',').map(|t| t.trim().to_lowercase()).filter(|t| !t.is_empty()).collect();
        (!tokens.is_empty()).then(|| TokenGroup::new(name, tokens))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupStats {
    pub count: usize,
    pub mean_depth: f64,
    pub median_depth: f64,
    pub mean_score: f64,
}

/// Statistics of one group, `None` when none of its tokens occurred.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub stats: Option<GroupStats>,
}

fn median(values: &mut [usize]) -> f64 {
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0
    }
}

/// Greedy-tree depth and score of every token occurrence, aggregated per group.
pub fn depth_report(model: &ArTree, sentences: &[Vec<String>], groups: &[TokenGroup]) -> Result<Vec<GroupReport>, ModelError> {
    let mut depths: Vec<Vec<usize>> = vec![Vec::new(); groups.len()];
    let mut score_sums = vec![0.0; groups.len()];
    for tokens in sentences {
        let a = model.analyze(tokens)?;
        for (i, tok) in tokens.iter().enumerate() {
            for (g, group) in groups.iter().enumerate() {
                if group.tokens.contains(tok) {
                    depths[g].push(a.depths[i]);
                    score_sums[g] += a.scores[i];
                }
            }
        }
    }
    Ok(groups
        .iter()
        .zip(depths.iter_mut().zip(score_sums))
        .map(|(group, (d, score_sum))| {
            let stats = (!d.is_empty()).then(|| {
                let count = d.len();
                GroupStats {
                    count,
                    mean_depth: d.iter().sum::<usize>() as f64 / count as f64,
                    median_depth: median(d),
                    mean_score: score_sum / count as f64,
                }
            });
            GroupReport {
                name: group.name.clone(),
                stats,
            }
        })
        .collect())
}

/// Tab-separated table with a header line.
pub fn format_report(reports: &[GroupReport]) -> String {
    let mut out = String::from("group\tcount\tmean_depth\tmedian_depth\tmean_score\n");
    for r in reports {
        match &r.stats {
            Some(s) => out.push_str(&format!(
                "{}\t{}\t{:.4}\t{:.1}\t{:.4}\n",
                r.name, s.count, s.mean_depth, s.median_depth, s.mean_score
            )),
            None => out.push_str(&format!("{}\tabsent\n", r.name)),
        }
    }
    out
}
