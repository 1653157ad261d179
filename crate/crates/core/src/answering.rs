//! Answer engineering: turning per-mask vocabulary distributions into tag
//! rankings and a necessity decision.

use serde::{Deserialize, Serialize};

use crate::config::NecessityTie;
use crate::corpus::Necessity;

/// Tag vocabulary plus the fixed necessity vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    tags: Vec<String>,
}

impl LabelSpace {
    /// Tags are sorted and deduplicated; that order is the tie-break order.
    pub fn new(mut tags: Vec<String>) -> Self {
        tags.sort();
        tags.dedup();
        Self { tags }
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn necessity(&self) -> [Necessity; 2] {
        Necessity::ALL
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.tags.binary_search_by(|t| t.as_str().cmp(tag)).ok()
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.index_of(tag).is_some()
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub k: usize,
    pub items: Vec<(String, f64)>,
}

impl RankedPrediction {
    pub fn labels(&self) -> Vec<String> {
        self.items.iter().map(|(l, _)| l.clone()).collect()
    }
}

/// The `k` most probable token ids, probability-descending, ties by ascending id.
pub fn topk_tokens(dist: &[f64], k: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..dist.len() as u32).collect();
    ids.sort_by(|&a, &b| {
        dist[b as usize]
            .partial_cmp(&dist[a as usize])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    ids.truncate(k);
    ids
}

/// Rank every tag by the summed log-probability of its verbalization across
/// the topic masks. `verbalized[i]` holds the slot token ids of `labels.tags()[i]`.
pub fn score_tags(dists: &[&[f64]], labels: &LabelSpace, verbalized: &[Vec<u32>], k: usize) -> RankedPrediction {
    assert_eq!(labels.len(), verbalized.len(), "one verbalization per tag");
    let mut scored: Vec<(usize, f64)> = verbalized
        .iter()
        .enumerate()
        .map(|(i, slots)| {
            let s: f64 = slots
                .iter()
                .zip(dists)
                .map(|(&tok, dist)| dist[tok as usize].ln())
                .sum();
            (i, s)
        })
        .collect();
    // Labels are stored sorted, so index order is lexicographic order.
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    scored.truncate(k);
    RankedPrediction {
        k,
        items: scored
            .into_iter()
            .map(|(i, s)| (labels.tags()[i].clone(), s))
            .collect(),
    }
}

/// Levenshtein distance over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let next = (row[j] + 1).min(row[j + 1] + 1).min(diag + usize::from(ca != cb));
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[b.len()]
}

/// Map a free token onto a label: exact match first, otherwise minimum
/// case-folded edit distance, ties by shorter label then lexicographic.
pub fn map_answer<'a>(token: &str, labels: &'a [String]) -> &'a str {
    assert!(!labels.is_empty(), "map_answer needs at least one label");
    if let Some(hit) = labels.iter().find(|l| l.as_str() == token) {
        return hit;
    }
    let folded = token.to_lowercase();
    labels
        .iter()
        .min_by(|a, b| {
            let da = levenshtein(&folded, &a.to_lowercase());
            let db = levenshtein(&folded, &b.to_lowercase());
            da.cmp(&db)
                .then(a.chars().count().cmp(&b.chars().count()))
                .then(a.cmp(b))
        })
        .expect("non-empty")
}

/// Decode the topic masks token-first and map the decoded phrases onto labels.
///
/// Candidates come from the first topic mask in rank order; each is joined
/// with the best non-pad words of the remaining masks and mapped by
/// [`map_answer`]. Duplicated labels keep their first (best) rank.
pub fn generative_tags(
    dists: &[&[f64]],
    vocab: &[String],
    pad_id: u32,
    labels: &LabelSpace,
    k: usize,
) -> RankedPrediction {
    let mut tail = Vec::new();
    for dist in dists.iter().skip(1) {
        let best = topk_tokens(dist, 1)[0];
        if best != pad_id {
            tail.push(vocab[best as usize].trim_start_matches("##").to_string());
        }
    }
    let mut items: Vec<(String, f64)> = Vec::new();
    if labels.is_empty() {
        return RankedPrediction { k, items };
    }
    for tok in topk_tokens(dists[0], dists[0].len()) {
        if items.len() >= k {
            break;
        }
        if tok == pad_id {
            continue;
        }
        let mut words = vec![vocab[tok as usize].trim_start_matches("##").to_string()];
        words.extend(tail.iter().cloned());
        let phrase = words.join("-");
        let label = map_answer(&phrase, labels.tags());
        if !items.iter().any(|(l, _)| l == label) {
            items.push((label.to_string(), dists[0][tok as usize].ln()));
        }
    }
    RankedPrediction { k, items }
}

/// Two-way decision between the verbalized necessity tokens. The score is the
/// winner's probability renormalized over the two tokens.
pub fn predict_necessity(dist: &[f64], necessary_tok: u32, unnecessary_tok: u32, tie: NecessityTie) -> (Necessity, f64) {
    let pn = dist[necessary_tok as usize];
    let pu = dist[unnecessary_tok as usize];
    let total = pn + pu;
    let winner = if pn > pu {
        Necessity::Necessary
    } else if pu > pn {
        Necessity::Unnecessary
    } else {
        match tie {
            NecessityTie::Necessary => Necessity::Necessary,
            NecessityTie::Unnecessary => Necessity::Unnecessary,
        }
    };
    let score = if total > 0.0 {
        match winner {
            Necessity::Necessary => pn / total,
            Necessity::Unnecessary => pu / total,
        }
    } else {
        0.5
    };
    (winner, score)
}
