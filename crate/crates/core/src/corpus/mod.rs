//! Corpus construction: dump ingestion, request extraction, rare-tag
//! filtering, seeded splits and per-split statistics.

mod dump;
mod html;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use self::dump::{parse_dump, parse_tags, DumpFormat, DumpReader, DumpStats, PostType, RawPost};
pub use self::html::{normalize_text, split_body};
use crate::answering::LabelSpace;
use crate::error::{Error, Result};

pub const MAX_TAGS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Necessity {
    Necessary,
    Unnecessary,
}

impl Necessity {
    pub const ALL: [Necessity; 2] = [Necessity::Necessary, Necessity::Unnecessary];

    pub fn as_str(self) -> &'static str {
        match self {
            Necessity::Necessary => "necessary",
            Necessity::Unnecessary => "unnecessary",
        }
    }
}

impl fmt::Display for Necessity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the necessity label is derived from a raw post.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NecessityRule {
    /// score >= 0 is necessary
    ScoreSign,
    /// score >= k is necessary
    ScoreThreshold { k: i64 },
    /// closed posts are unnecessary
    ClosedFlag,
}

impl NecessityRule {
    pub fn label(&self, post: &RawPost) -> Necessity {
        let necessary = match *self {
            NecessityRule::ScoreSign => post.score >= 0,
            NecessityRule::ScoreThreshold { k } => post.score >= k,
            NecessityRule::ClosedFlag => !post.closed,
        };
        if necessary {
            Necessity::Necessary
        } else {
            Necessity::Unnecessary
        }
    }
}

impl FromStr for NecessityRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "score_sign" => Ok(NecessityRule::ScoreSign),
            "closed_flag" => Ok(NecessityRule::ClosedFlag),
            other => match other.strip_prefix("score_threshold:") {
                Some(k) => k
                    .parse()
                    .map(|k| NecessityRule::ScoreThreshold { k })
                    .map_err(|_| Error::Config(format!("bad score threshold in {other:?}"))),
                None => Err(Error::Config(format!(
                    "unknown necessity rule {other:?} (score_sign | score_threshold:K | closed_flag)"
                ))),
            },
        }
    }
}

impl TryFrom<String> for NecessityRule {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<NecessityRule> for String {
    fn from(rule: NecessityRule) -> String {
        rule.to_string()
    }
}

impl fmt::Display for NecessityRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NecessityRule::ScoreSign => f.write_str("score_sign"),
            NecessityRule::ScoreThreshold { k } => write!(f, "score_threshold:{k}"),
            NecessityRule::ClosedFlag => f.write_str("closed_flag"),
        }
    }
}

/// One public-code-review request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub title: String,
    /// Plain text, block code removed.
    pub description: String,
    pub code: Vec<String>,
    pub tags: Vec<String>,
    pub necessity: Necessity,
}

pub fn extract_request(post: &RawPost, rule: NecessityRule) -> Request {
    let (description, code) = split_body(&post.body);
    Request {
        id: post.id,
        title: normalize_text(&post.title),
        description,
        code,
        tags: post.tags.clone(),
        necessity: rule.label(post),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub n_input: usize,
    pub n_output: usize,
    pub n_dropped: usize,
    pub tags_before: usize,
    pub tags_after: usize,
    /// Requests whose tag list was cut down to the five-tag maximum.
    pub n_truncated: usize,
}

/// Count tag frequencies (once per request) over the unfiltered corpus,
/// drop tags seen in fewer than `theta` requests, then drop requests left with no tags.
pub fn filter_rare_tags(requests: Vec<Request>, theta: usize) -> (Vec<Request>, LabelSpace, FilterStats) {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for r in &requests {
        let distinct: std::collections::HashSet<&str> = r.tags.iter().map(String::as_str).collect();
        for t in distinct {
            *freq.entry(t).or_default() += 1;
        }
    }
    let keep: std::collections::BTreeSet<String> = freq
        .iter()
        .filter(|(_, &n)| n >= theta)
        .map(|(t, _)| t.to_string())
        .collect();
    let mut stats = FilterStats {
        n_input: requests.len(),
        tags_before: freq.len(),
        tags_after: keep.len(),
        ..Default::default()
    };
    let mut out = Vec::with_capacity(requests.len());
    for mut r in requests {
        let mut seen = std::collections::HashSet::new();
        r.tags.retain(|t| keep.contains(t) && seen.insert(t.clone()));
        if r.tags.is_empty() {
            stats.n_dropped += 1;
            continue;
        }
        if r.tags.len() > MAX_TAGS {
            r.tags.truncate(MAX_TAGS);
            stats.n_truncated += 1;
        }
        out.push(r);
    }
    stats.n_output = out.len();
    (out, LabelSpace::new(keep.into_iter().collect()), stats)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Vec<Request>,
    pub val: Vec<Request>,
    pub test: Vec<Request>,
}

impl Splits {
    pub fn named(&self) -> [(&'static str, &[Request]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

/// Split sizes for `n` items: round the first two shares, give the rest to test.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let total: f64 = ratios.iter().sum();
    let train = (((n as f64) * ratios[0] / total).round() as usize).min(n);
    let val = (((n as f64) * ratios[1] / total).round() as usize).min(n - train);
    [train, val, n - train - val]
}

/// Seeded shuffle followed by a contiguous cut.
pub fn split(requests: Vec<Request>, ratios: [f64; 3], seed: u64) -> Result<Splits> {
    if requests.len() < 3 {
        return Err(Error::Data(format!(
            "need at least 3 requests to split, got {}",
            requests.len()
        )));
    }
    let [n_train, n_val, _] = split_sizes(requests.len(), ratios);
    let mut shuffled = requests;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Ok(Splits { train: shuffled, val, test })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub n_requests: usize,
    pub avg_tags_per_request: f64,
    pub avg_words_per_tag: f64,
    pub necessary: usize,
    pub unnecessary: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_requests: usize,
    pub n_tags: usize,
    pub splits: BTreeMap<String, SplitStats>,
}

/// Words in a tag, splitting on the delimiters used in tag names.
pub fn tag_words(tag: &str) -> Vec<&str> {
    tag.split(['-', ' ', '_']).filter(|w| !w.is_empty()).collect()
}

pub fn split_stats(requests: &[Request]) -> SplitStats {
    let n = requests.len();
    let tag_total: usize = requests.iter().map(|r| r.tags.len()).sum();
    let word_total: usize = requests
        .iter()
        .flat_map(|r| r.tags.iter())
        .map(|t| tag_words(t).len())
        .sum();
    let necessary = requests.iter().filter(|r| r.necessity == Necessity::Necessary).count();
    SplitStats {
        n_requests: n,
        avg_tags_per_request: if n == 0 { 0.0 } else { tag_total as f64 / n as f64 },
        avg_words_per_tag: if tag_total == 0 { 0.0 } else { word_total as f64 / tag_total as f64 },
        necessary,
        unnecessary: n - necessary,
    }
}

pub fn corpus_stats(splits: &Splits, labels: &LabelSpace) -> CorpusStats {
    let mut out = CorpusStats {
        n_tags: labels.tags().len(),
        ..Default::default()
    };
    for (name, reqs) in splits.named() {
        out.n_requests += reqs.len();
        out.splits.insert(name.to_string(), split_stats(reqs));
    }
    out
}

pub fn write_requests(path: &Path, requests: &[Request]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in requests {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_requests(path: &Path) -> Result<Vec<Request>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Request = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: u64, tags: &[&str]) -> Request {
        Request {
            id,
            title: format!("t{id}"),
            description: String::new(),
            code: vec![],
            tags: tags.iter().map(|t| t.to_string()).collect(),
            necessity: Necessity::Necessary,
        }
    }

    fn post(score: i64, closed: bool, body: &str) -> RawPost {
        RawPost {
            id: 1,
            post_type: PostType::Question,
            title: "A  title".into(),
            body: body.into(),
            tags: vec!["c".into()],
            score,
            closed,
            creation_date: None,
        }
    }

    #[test]
    fn extraction_and_rules() {
        let r = extract_request(&post(-2, false, "<p>help</p><pre><code>int x;</code></pre>"), NecessityRule::ScoreSign);
        assert_eq!(r.description, "help");
        assert_eq!(r.code, vec!["int x;"]);
        assert_eq!(r.title, "A title");
        assert_eq!(r.necessity, Necessity::Unnecessary);
        assert_eq!(NecessityRule::ScoreSign.label(&post(0, false, "")), Necessity::Necessary);
        assert_eq!(NecessityRule::ScoreThreshold { k: 3 }.label(&post(2, false, "")), Necessity::Unnecessary);
        assert_eq!(NecessityRule::ClosedFlag.label(&post(9, true, "")), Necessity::Unnecessary);
        let empty = extract_request(&post(1, false, ""), NecessityRule::ScoreSign);
        assert!(empty.description.is_empty() && empty.code.is_empty());
    }

    #[test]
    fn rule_parsing() {
        assert_eq!("score_threshold:-1".parse::<NecessityRule>().unwrap(), NecessityRule::ScoreThreshold { k: -1 });
        assert!("majority_vote".parse::<NecessityRule>().is_err());
        for rule in [NecessityRule::ScoreSign, NecessityRule::ClosedFlag, NecessityRule::ScoreThreshold { k: 4 }] {
            assert_eq!(rule.to_string().parse::<NecessityRule>().unwrap(), rule);
        }
    }

    #[test]
    fn toy_filtering() {
        let toy = || vec![req(1, &["a", "b"]), req(2, &["b"]), req(3, &["a"])];
        let (kept, labels, stats) = filter_rare_tags(toy(), 2);
        assert_eq!(kept.len(), 3);
        assert_eq!(labels.tags(), &["a".to_string(), "b".to_string()]);
        assert_eq!(stats.n_dropped, 0);
        let (kept, labels, stats) = filter_rare_tags(toy(), 3);
        assert!(kept.is_empty());
        assert!(labels.tags().is_empty());
        assert_eq!(stats.n_input, stats.n_output + stats.n_dropped);
        let (kept, _, _) = filter_rare_tags(toy(), 1);
        assert_eq!(kept, toy());
    }

    #[test]
    fn partial_tag_removal() {
        let reqs = vec![req(1, &["a", "rare"]), req(2, &["a"]), req(3, &["rare2"])];
        let (kept, _, stats) = filter_rare_tags(reqs, 2);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].tags, vec!["a"]);
        assert_eq!(stats.n_dropped, 1);
    }

    #[test]
    fn split_exact_ratio_and_determinism() {
        let reqs: Vec<Request> = (0..10).map(|i| req(i, &["a"])).collect();
        let s = split(reqs.clone(), [8.0, 1.0, 1.0], 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        let again = split(reqs.clone(), [8.0, 1.0, 1.0], 7).unwrap();
        assert_eq!(s, again);
        assert!(split(reqs[..2].to_vec(), [8.0, 1.0, 1.0], 7).is_err());
    }

    #[test]
    fn split_sizes_within_one() {
        for n in [3usize, 11, 99, 1000, 76_161] {
            let sizes = split_sizes(n, [8.0, 1.0, 1.0]);
            assert_eq!(sizes.iter().sum::<usize>(), n);
            for (s, r) in sizes.iter().zip([0.8, 0.1, 0.1]) {
                assert!((*s as f64 - n as f64 * r).abs() <= 1.0, "n={n} sizes={sizes:?}");
            }
        }
    }

    #[test]
    fn stats_hand_count() {
        let mut reqs = vec![req(1, &["a", "b-c"]), req(2, &["a"]), req(3, &["x-y-z", "a", "b-c"]), req(4, &["a"])];
        reqs[1].necessity = Necessity::Unnecessary;
        let s = split_stats(&reqs);
        assert_eq!(s.n_requests, 4);
        assert_eq!(s.avg_tags_per_request, 7.0 / 4.0);
        // words: a=1, b-c=2, a, x-y-z=3, a, b-c=2, a -> 1+2+1+3+1+2+1 = 11 over 7 tags
        assert_eq!(s.avg_words_per_tag, 11.0 / 7.0);
        assert_eq!((s.necessary, s.unnecessary), (3, 1));
        assert_eq!(split_stats(&[req(1, &["a", "b", "c"])]).avg_tags_per_request, 3.0);
        assert_eq!(split_stats(&[]), SplitStats::default());
    }
}
