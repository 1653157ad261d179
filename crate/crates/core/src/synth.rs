//! Seeded synthetic code-review dumps in the StackExchange `Posts.xml` shape.
//!
//! Tags, titles and descriptions are correlated so that a model has
//! something to learn, and the necessity cue is carried by the wording of
//! the description.

use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{PostType, RawPost};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub questions: usize,
    /// Answer posts mixed in between questions (they are skipped on ingest).
    pub answers: usize,
    pub seed: u64,
    /// Topic tags beside the language tags, most frequent first.
    pub topics: Vec<String>,
    /// Zipf exponent of the topic frequency.
    pub zipf: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { questions: 1000, answers: 50, seed: 7, topics: default_topics(), zipf: 1.0 }
    }
}

pub fn default_topics() -> Vec<String> {
    [
        "performance", "beginner", "algorithm", "object-oriented", "programming-challenge", "strings",
        "array", "linked-list", "recursion", "sorting", "hash-map", "file", "parsing", "unit-testing",
        "multithreading", "error-handling", "game", "matrix", "tree", "graph", "dynamic-programming",
        "regex", "json", "database", "sql", "design-patterns", "memory-management", "iterator",
        "queue", "stack", "binary-search", "validation", "formatting", "networking", "simulation",
        "mathematics", "time-limit-exceeded", "interview-questions", "api", "cache",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

struct Lang {
    tag: &'static str,
    snippets: &'static [&'static str],
}

const LANGS: [Lang; 6] = [
    Lang {
        tag: "python",
        snippets: &[
            "def {f}({a}, {b}):\n    {c} = {a} + {b}\n    return {c} * 2\n",
            "{a} = []\nfor {b} in range(10):\n    {a}.append({b} * {b})\nprint({a})\n",
            "class {F}:\n    def __init__(self, {a}):\n        self.{a} = {a}\n\n    def {f}(self):\n        return self.{a}\n",
            "def {f}({a}):\n    if not {a}:\n        return None\n    {b} = {a}[0]\n    for {c} in {a}:\n        if {c} > {b}:\n            {b} = {c}\n    return {b}\n",
        ],
    },
    Lang {
        tag: "java",
        snippets: &[
            "public class {F} {\n    public static int {f}(int {a}, int {b}) {\n        int {c} = {a} * {b};\n        return {c} + {a};\n    }\n}\n",
            "List<Integer> {a} = new ArrayList<>();\nfor (int {b} = 0; {b} < 10; {b}++) {\n    {a}.add({b});\n}\n",
        ],
    },
    Lang {
        tag: "c++",
        snippets: &[
            "#include <vector>\nint {f}(const std::vector<int>& {a}) {\n    int {b} = 0;\n    for (int {c} : {a}) {\n        {b} += {c};\n    }\n    return {b};\n}\n",
            "template <typename T>\nT {f}(T {a}, T {b}) {\n    T {c} = {a} > {b} ? {a} : {b};\n    return {c};\n}\n",
        ],
    },
    Lang {
        tag: "c",
        snippets: &[
            "int {f}(int *{a}, int {b}) {\n    int {c} = 0;\n    for (int i = 0; i < {b}; i++) {\n        {c} += {a}[i];\n    }\n    return {c};\n}\n",
            "#include <stdlib.h>\nchar *{f}(int {a}) {\n    char *{b} = malloc({a});\n    *{b} = 0;\n    return {b};\n}\n",
        ],
    },
    Lang {
        tag: "javascript",
        snippets: &[
            "function {f}({a}, {b}) {\n  const {c} = {a}.map(x => x + {b});\n  return {c};\n}\n",
            "let {a} = 0;\nconst {b} = [1, 2, 3];\nfor (const {c} of {b}) {\n  {a} += {c};\n}\nconsole.log({a});\n",
        ],
    },
    Lang {
        tag: "c#",
        snippets: &[
            "public int {F}(int {a}, int {b})\n{\n    var {c} = {a} + {b};\n    return {c};\n}\n",
            "using System;\nclass {F}\n{\n    static void Main()\n    {\n        int {a} = 3;\n        int {b} = {a} * 2;\n        Console.WriteLine({b});\n    }\n}\n",
        ],
    },
];

const NAMES: [&str; 16] = [
    "value", "total", "items", "count", "node", "result", "data", "index", "buffer", "key", "left",
    "right", "acc", "temp", "row", "size",
];

const GOOD: [&str; 6] = [
    "The code works and passes my tests, please review it for style and readability.",
    "Everything runs correctly; I would like feedback on structure and naming.",
    "This is a working implementation and I am looking for ways to make it cleaner.",
    "It produces the right output. Any suggestions on idiomatic usage are welcome.",
    "I wrote this as practice and it works as expected, what could be improved?",
    "My solution is accepted, I would appreciate a review of the overall design.",
];

const BAD: [&str; 6] = [
    "It does not compile and I get an error I do not understand, can someone fix it?",
    "The program crashes with a segmentation fault, why is it broken?",
    "I get the wrong answer on some inputs and cannot find the bug.",
    "Please write the missing part for me, it throws an exception.",
    "Why does this not work? The output is wrong and I am stuck.",
    "Help, my code is broken and I need it fixed before the deadline.",
];

const FILLER: [&str; 8] = [
    "I am new to this and trying to learn.",
    "The input comes from a text file.",
    "I tried several approaches before this one.",
    "Here is the relevant part of the code.",
    "I am not sure about the naming.",
    "Speed matters because the input can be large.",
    "I followed the usual conventions as far as I know them.",
    "Comments are in the code below.",
];

fn zipf_pick<R: Rng>(rng: &mut R, n: usize, s: f64) -> usize {
    let weights: Vec<f64> = (1..=n).map(|r| 1.0 / (r as f64).powf(s)).collect();
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    n - 1
}

fn fill<R: Rng>(template: &str, rng: &mut R) -> String {
    let mut names: Vec<&str> = NAMES.to_vec();
    let mut pick = || {
        let i = rng.random_range(0..names.len());
        names.swap_remove(i)
    };
    let (a, b, c, f) = (pick(), pick(), pick(), pick());
    let upper = {
        let mut ch = f.chars();
        ch.next().map(|h| h.to_uppercase().collect::<String>() + ch.as_str()).unwrap_or_default()
    };
    template
        .replace("{a}", a)
        .replace("{b}", b)
        .replace("{c}", c)
        .replace("{F}", &upper)
        .replace("{f}", &format!("compute_{f}"))
}

fn html_escape_text(s: &str) -> String {
    html_escape::encode_text(s).into_owned()
}

/// Generate the posts. Question ids are 1-based and dense; answers get ids
/// after the last question.
pub fn synth_posts(cfg: &SynthConfig) -> Vec<RawPost> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut posts = Vec::with_capacity(cfg.questions + cfg.answers);
    for q in 0..cfg.questions {
        let lang = &LANGS[zipf_pick(&mut rng, LANGS.len(), 0.7)];
        let n_topics = rng.random_range(1..=3).min(cfg.topics.len());
        let mut topics: Vec<&String> = Vec::new();
        while topics.len() < n_topics {
            let t = &cfg.topics[zipf_pick(&mut rng, cfg.topics.len(), cfg.zipf)];
            if !topics.contains(&t) {
                topics.push(t);
            }
        }
        let words = |t: &str| t.replace('-', " ");
        let title = format!(
            "{} {} in {}",
            ["Improving", "Reviewing", "Simple", "Refactoring", "Faster"].choose(&mut rng).expect("non-empty"),
            topics.iter().map(|t| words(t)).collect::<Vec<_>>().join(" and "),
            lang.tag
        );
        let necessary = rng.random_bool(0.6);
        let cue = if necessary { GOOD.choose(&mut rng) } else { BAD.choose(&mut rng) }.expect("non-empty");
        let mut body = format!("<p>{}</p>\n", html_escape_text(FILLER.choose(&mut rng).expect("non-empty")));
        body.push_str(&format!(
            "<p>This is about {} using <code>{}</code>. {}</p>\n",
            html_escape_text(&words(topics[0])),
            html_escape_text(lang.tag),
            html_escape_text(cue)
        ));
        let blocks = if rng.random_bool(0.9) { rng.random_range(1..=2) } else { 0 };
        for _ in 0..blocks {
            let code = fill(lang.snippets.choose(&mut rng).expect("non-empty"), &mut rng);
            body.push_str(&format!("<pre><code>{}</code></pre>\n", html_escape_text(&code)));
        }
        let noisy = rng.random_bool(0.1);
        let score = match necessary != noisy {
            true => rng.random_range(0..20),
            false => -rng.random_range(1..6),
        };
        let mut tags = vec![lang.tag.to_string()];
        tags.extend(topics.into_iter().cloned());
        posts.push(RawPost {
            id: q as u64 + 1,
            post_type: PostType::Question,
            title,
            body,
            tags,
            score,
            closed: score < -3,
            creation_date: Some(format!("20{:02}-0{}-1{}T10:00:00.000", 11 + q % 13, 1 + q % 9, q % 10)),
        });
    }
    for a in 0..cfg.answers {
        posts.push(RawPost {
            id: (cfg.questions + a) as u64 + 1,
            post_type: PostType::Answer,
            title: String::new(),
            body: "<p>Consider using a helper function.</p>".into(),
            tags: Vec::new(),
            score: 1,
            closed: false,
            creation_date: None,
        });
    }
    posts
}

/// Write posts as a `Posts.xml` document.
pub fn write_posts_xml<W: Write>(posts: &[RawPost], mut w: W) -> std::io::Result<()> {
    writeln!(w, "<?xml version=\"1.0\" encoding=\"utf-8\"?>")?;
    writeln!(w, "<posts>")?;
    for p in posts {
        let attr = |s: &str| {
            html_escape::encode_double_quoted_attribute(s)
                .replace('\n', "&#xA;")
                .replace('\r', "&#xD;")
                .replace('\t', "&#x9;")
        };
        let type_id = match p.post_type {
            PostType::Question => 1,
            PostType::Answer => 2,
            PostType::Other => 3,
        };
        write!(w, "  <row Id=\"{}\" PostTypeId=\"{type_id}\" Score=\"{}\"", p.id, p.score)?;
        if let Some(d) = &p.creation_date {
            write!(w, " CreationDate=\"{}\"", attr(d))?;
        }
        if !p.title.is_empty() {
            write!(w, " Title=\"{}\"", attr(&p.title))?;
        }
        write!(w, " Body=\"{}\"", attr(&p.body))?;
        if !p.tags.is_empty() {
            let tags: String = p.tags.iter().map(|t| format!("<{t}>")).collect();
            write!(w, " Tags=\"{}\"", attr(&tags))?;
        }
        if p.closed {
            write!(w, " ClosedDate=\"2020-01-01T00:00:00.000\"")?;
        }
        writeln!(w, " />")?;
    }
    writeln!(w, "</posts>")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_dump, DumpFormat};

    #[test]
    fn xml_roundtrip_through_the_dump_parser() {
        let cfg = SynthConfig { questions: 40, answers: 5, ..Default::default() };
        let posts = synth_posts(&cfg);
        let mut buf = Vec::new();
        write_posts_xml(&posts, &mut buf).unwrap();
        let mut reader = parse_dump(std::io::Cursor::new(buf), DumpFormat::Xml);
        let back: Vec<RawPost> = reader.by_ref().map(|p| p.unwrap()).collect();
        assert_eq!(back.len(), 40);
        assert_eq!(reader.stats().non_questions, 5);
        assert_eq!(back[3].tags, posts[3].tags);
        assert_eq!(back[3].body, posts[3].body);
        assert_eq!(back[3].title, posts[3].title);
    }

    #[test]
    fn seeded() {
        let cfg = SynthConfig { questions: 10, ..Default::default() };
        assert_eq!(synth_posts(&cfg), synth_posts(&cfg));
    }
}
