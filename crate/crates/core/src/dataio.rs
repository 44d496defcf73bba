//! Corpus formats: canonical JSON lines, BIO triples, TOP TSV, and the
//! synthetic grammar.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::linearizer::{linearize, valid_label, validate_parse, LinearizeError, NodeKind, ParseNode, Query, SemanticParse, Style, TargetSequence};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Json { line: usize, reason: String },
    #[error("line {line}: invalid example: {reason}")]
    Invalid { line: usize, reason: String },
    #[error("misaligned files: {0}")]
    MisalignedFiles(String),
    #[error("line {line}, token {position}: illegal tag transition to {tag}")]
    IllegalTagTransition { line: usize, position: usize, tag: String },
    #[error("line {line}: malformed tag {tag:?}")]
    MalformedTag { line: usize, tag: String },
    #[error("row {row}: bracket parse error: {reason}")]
    BracketParse { row: usize, reason: String },
    #[error("row {row}: alignment error: {reason}")]
    Alignment { row: usize, reason: String },
    #[error("row {row}: missing column {column}")]
    MissingColumn { row: usize, column: usize },
    #[error("only {produced} unique queries available, {requested} requested")]
    LexiconTooSmall { requested: usize, produced: usize },
    #[error("example {index} is not flat and cannot be exported as BIO")]
    NotFlat { index: usize },
}

pub type Result<T> = std::result::Result<T, DataError>;

/// NFC-normalize and collapse whitespace.
pub fn normalize(raw: &str) -> String {
    let nfc: String = raw.nfc().collect();
    Query::new(&nfc).normalized()
}

/// One line of the canonical corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusExample {
    pub query: String,
    pub style: Style,
    pub parse: ParseNode,
}

impl CorpusExample {
    pub fn new(query: &str, parse: SemanticParse) -> Self {
        CorpusExample {
            query: query.to_string(),
            style: parse.style,
            parse: parse.root,
        }
    }

    pub fn query(&self) -> Query {
        Query::new(&self.query)
    }

    pub fn semantic_parse(&self) -> SemanticParse {
        SemanticParse {
            style: self.style,
            root: self.parse.clone(),
        }
    }

    pub fn target(&self) -> std::result::Result<TargetSequence, LinearizeError> {
        linearize(&self.semantic_parse(), &self.query())
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        let q = self.query();
        if q.is_empty() {
            return Err("empty query".into());
        }
        if q.normalized() != self.query {
            return Err("query is not whitespace-normalized".into());
        }
        validate_parse(&self.semantic_parse(), q.len()).map_err(|e| e.to_string())
    }
}

pub fn to_jsonl(examples: &[CorpusExample]) -> String {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e).expect("example serializes"));
        out.push('\n');
    }
    out
}

/// Parse and validate canonical JSON lines. Blank lines are skipped.
pub fn from_jsonl(text: &str) -> Result<Vec<CorpusExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: CorpusExample = serde_json::from_str(line).map_err(|err| DataError::Json {
            line: i + 1,
            reason: err.to_string(),
        })?;
        e.check().map_err(|reason| DataError::Invalid { line: i + 1, reason })?;
        out.push(e);
    }
    Ok(out)
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusExample>> {
    from_jsonl(&read_text(path)?)
}

/// Validates every example before writing.
pub fn write_corpus(path: &Path, examples: &[CorpusExample]) -> Result<()> {
    for (i, e) in examples.iter().enumerate() {
        e.check().map_err(|reason| DataError::Invalid { line: i + 1, reason })?;
    }
    write_text(path, &to_jsonl(examples))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub examples: usize,
    pub intents: usize,
    pub slots: usize,
    pub styles: BTreeMap<String, usize>,
    pub max_src_len: usize,
}

pub fn corpus_stats<'a>(examples: impl IntoIterator<Item = &'a CorpusExample>) -> CorpusStats {
    fn walk(n: &ParseNode, intents: &mut BTreeSet<String>, slots: &mut BTreeSet<String>) {
        match n.kind {
            NodeKind::Intent if !n.label.is_empty() => {
                intents.insert(n.label.clone());
            }
            NodeKind::Slot => {
                slots.insert(n.label.clone());
            }
            _ => {}
        }
        n.children.iter().for_each(|c| walk(c, intents, slots));
    }
    let mut stats = CorpusStats::default();
    let (mut intents, mut slots) = (BTreeSet::new(), BTreeSet::new());
    for e in examples {
        stats.examples += 1;
        *stats.styles.entry(e.style.to_string()).or_default() += 1;
        stats.max_src_len = stats.max_src_len.max(e.query().len());
        walk(&e.parse, &mut intents, &mut slots);
    }
    stats.intents = intents.len();
    stats.slots = slots.len();
    stats
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BioPolicy {
    /// Treat an orphan `I-x` as `B-x`.
    #[default]
    Repair,
    Reject,
}

fn lines(text: &str) -> Vec<&str> {
    text.lines().collect()
}

/// Import line-aligned token, BIO tag and intent label texts as flat parses.
pub fn import_bio(tokens: &str, tags: &str, labels: &str, policy: BioPolicy) -> Result<Vec<CorpusExample>> {
    let (tok_lines, tag_lines, label_lines) = (lines(tokens), lines(tags), lines(labels));
    if tok_lines.len() != tag_lines.len() || tok_lines.len() != label_lines.len() {
        return Err(DataError::MisalignedFiles(format!(
            "{} token lines, {} tag lines, {} label lines",
            tok_lines.len(),
            tag_lines.len(),
            label_lines.len()
        )));
    }
    let mut out = Vec::with_capacity(tok_lines.len());
    for (i, ((tl, gl), ll)) in tok_lines.iter().zip(&tag_lines).zip(&label_lines).enumerate() {
        let line = i + 1;
        let query = normalize(tl);
        let n = Query::new(&query).len();
        let tags: Vec<&str> = gl.split_whitespace().collect();
        if tags.len() != n {
            return Err(DataError::MisalignedFiles(format!(
                "line {line}: {n} tokens but {} tags",
                tags.len()
            )));
        }
        let intent = ll.trim();
        if !valid_label(intent) {
            return Err(DataError::Invalid {
                line,
                reason: format!("bad intent label {intent:?}"),
            });
        }
        let mut slots: Vec<(String, Vec<usize>)> = Vec::new();
        let mut open: Option<String> = None;
        for (pos, &tag) in tags.iter().enumerate() {
            if tag == "O" {
                open = None;
                continue;
            }
            let (begin, label) = match (tag.strip_prefix("B-"), tag.strip_prefix("I-")) {
                (Some(l), _) => (true, l),
                (_, Some(l)) => (false, l),
                _ => {
                    return Err(DataError::MalformedTag {
                        line,
                        tag: tag.to_string(),
                    })
                }
            };
            if !valid_label(label) {
                return Err(DataError::MalformedTag {
                    line,
                    tag: tag.to_string(),
                });
            }
            let continues = !begin && open.as_deref() == Some(label);
            if !begin && !continues && policy == BioPolicy::Reject {
                return Err(DataError::IllegalTagTransition {
                    line,
                    position: pos,
                    tag: tag.to_string(),
                });
            }
            if continues {
                slots.last_mut().expect("open slot").1.push(pos);
            } else {
                slots.push((label.to_string(), vec![pos]));
                open = Some(label.to_string());
            }
        }
        let parse = SemanticParse::flat(intent, slots.iter().map(|(l, ix)| (l.as_str(), ix.clone())).collect());
        let ex = CorpusExample::new(&query, parse);
        ex.check().map_err(|reason| DataError::Invalid { line, reason })?;
        out.push(ex);
    }
    Ok(out)
}

pub fn import_bio_files(tokens: &Path, tags: &Path, labels: &Path, policy: BioPolicy) -> Result<Vec<CorpusExample>> {
    import_bio(&read_text(tokens)?, &read_text(tags)?, &read_text(labels)?, policy)
}

/// Token, tag and label texts for flat examples, one line each.
pub fn export_bio(examples: &[CorpusExample]) -> Result<(String, String, String)> {
    let (mut toks, mut tags, mut labels) = (String::new(), String::new(), String::new());
    for (index, e) in examples.iter().enumerate() {
        if e.style != Style::Flat {
            return Err(DataError::NotFlat { index });
        }
        let q = e.query();
        let mut line = vec!["O".to_string(); q.len()];
        for slot in &e.parse.children {
            for (k, &i) in slot.indices.iter().enumerate() {
                line[i] = format!("{}-{}", if k == 0 { "B" } else { "I" }, slot.label);
            }
        }
        toks.push_str(&q.normalized());
        toks.push('\n');
        tags.push_str(&line.join(" "));
        tags.push('\n');
        labels.push_str(&e.parse.label);
        labels.push('\n');
    }
    Ok((toks, tags, labels))
}

/// Parse a bracketed annotation such as `[IN:A w1 [SL:B w2 ] ]`.
/// `kind` assigns the node kind from its label and depth (root = 0).
/// Returns the tree, with direct indices numbered by terminal order, and
/// the terminals.
pub fn parse_bracketed(
    text: &str,
    kind: impl Fn(&str, usize) -> std::result::Result<NodeKind, String>,
) -> std::result::Result<(ParseNode, Vec<String>), String> {
    let mut stack: Vec<ParseNode> = Vec::new();
    let mut root = None;
    let mut terminals = Vec::new();
    for tok in text.split_whitespace() {
        if root.is_some() {
            return Err(format!("text after the root closes: {tok:?}"));
        }
        if let Some(label) = tok.strip_prefix('[') {
            if !valid_label(label) {
                return Err(format!("bad label {label:?}"));
            }
            let k = kind(label, stack.len())?;
            stack.push(ParseNode {
                label: label.to_string(),
                kind: k,
                indices: vec![],
                children: vec![],
            });
        } else if tok == "]" {
            let node = stack.pop().ok_or("unbalanced ]")?;
            match stack.last_mut() {
                Some(parent) => parent.children.push(node),
                None => root = Some(node),
            }
        } else {
            let top = stack.last_mut().ok_or_else(|| format!("terminal {tok:?} outside brackets"))?;
            top.indices.push(terminals.len());
            terminals.push(tok.to_string());
        }
    }
    if !stack.is_empty() {
        return Err("unclosed bracket".into());
    }
    let root = root.ok_or("empty annotation")?;
    Ok((root, terminals))
}

fn top_kind(label: &str, _depth: usize) -> std::result::Result<NodeKind, String> {
    if label.starts_with("IN:") {
        Ok(NodeKind::Intent)
    } else if label.starts_with("SL:") {
        Ok(NodeKind::Slot)
    } else {
        Err(format!("label {label:?} is neither IN: nor SL:"))
    }
}

/// Zero-based column indices of a TOP TSV.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopColumns {
    pub utterance: usize,
    pub parse: usize,
}

impl Default for TopColumns {
    fn default() -> Self {
        TopColumns { utterance: 1, parse: 2 }
    }
}

/// Import TOP rows. Terminals of the bracketed parse are aligned left to
/// right with the utterance tokens by exact equality after NFC.
pub fn import_top(text: &str, cols: TopColumns) -> Result<Vec<CorpusExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let get = |c: usize| fields.get(c).copied().ok_or(DataError::MissingColumn { row, column: c });
        let query = normalize(get(cols.utterance)?);
        let annotation: String = get(cols.parse)?.nfc().collect();
        let (root, terminals) =
            parse_bracketed(&annotation, top_kind).map_err(|reason| DataError::BracketParse { row, reason })?;
        let tokens = Query::new(&query).tokens;
        for (k, term) in terminals.iter().enumerate() {
            match tokens.get(k) {
                Some(t) if t == term => {}
                Some(t) => {
                    return Err(DataError::Alignment {
                        row,
                        reason: format!("terminal {k} {term:?} does not match token {t:?}"),
                    })
                }
                None => {
                    return Err(DataError::Alignment {
                        row,
                        reason: format!("terminal {k} {term:?} beyond the {} utterance tokens", tokens.len()),
                    })
                }
            }
        }
        if terminals.len() != tokens.len() {
            return Err(DataError::Alignment {
                row,
                reason: format!("{} terminals for {} tokens", terminals.len(), tokens.len()),
            });
        }
        if root.kind != NodeKind::Intent {
            return Err(DataError::BracketParse {
                row,
                reason: "root is not an intent".into(),
            });
        }
        let ex = CorpusExample::new(&query, SemanticParse::tree(root));
        ex.check().map_err(|reason| DataError::BracketParse { row, reason })?;
        out.push(ex);
    }
    Ok(out)
}

pub fn import_top_file(path: &Path, cols: TopColumns) -> Result<Vec<CorpusExample>> {
    import_top(&read_text(path)?, cols)
}

const FLAT_TEMPLATES: &[&str] = &[
    "[PlayMusic play [SongName {song} ] by [ArtistName {artist} ] ]",
    "[PlayMusic i want to hear [SongName {song} ] ]",
    "[PlayMusic put on some [ArtistName {artist} ] ]",
    "[PlayMusic play [ArtistName {artist} ] [MediaType {media} ] {closer} ]",
    "[GetWeather what is the weather in [City {city} ] [Date {date} ] ]",
    "[GetWeather will it rain in [City {city} ] ]",
    "[GetWeather forecast for [Date {date} ] in [City {city} ] ]",
    "[BookRestaurant book a table at [RestaurantName {restaurant} ] ]",
    "[BookRestaurant reserve [RestaurantName {restaurant} ] for [Date {date} ] ]",
    "[SetAlarm set an alarm for [Time {time} ] ]",
    "[SetAlarm wake me up at [Time {time} ] [Date {date} ] ]",
    "[AddToPlaylist add [SongName {song} ] to my [PlaylistName {playlist} ] playlist ]",
    "[AddToPlaylist put [SongName {song} ] on [PlaylistName {playlist} ] ]",
];

const TREE_TEMPLATES: &[&str] = &[
    "[IN:GET_DISTANCE how far is [SL:DESTINATION {dest} ] ]",
    "[IN:GET_DISTANCE distance to [SL:DESTINATION {dest} ] ]",
    "[IN:GET_DISTANCE how many miles to [SL:DESTINATION {dest} ] from here ]",
    "[IN:GET_ETA how long to get to [SL:DESTINATION {dest} ] by [SL:METHOD_TRAVEL {travel} ] ]",
    "[IN:GET_ETA when will i reach [SL:DESTINATION {dest} ] if i leave [SL:DATE_TIME {date} ] ]",
    "[IN:GET_EVENT any [SL:CATEGORY_EVENT {event} ] events [SL:DATE_TIME {date} ] ]",
    "[IN:GET_EVENT find [SL:CATEGORY_EVENT {event} ] shows near [SL:DESTINATION {dest} ] ]",
];

const LEXICON: &[(&str, &[&str])] = &[
    ("song", &[
        "hey jude", "yesterday", "bohemian rhapsody", "hotel california", "imagine", "let it be",
        "wonderwall", "smells like teen spirit", "hallelujah", "purple rain", "thriller", "africa",
        "dancing queen", "like a rolling stone", "creep", "hurt", "jolene", "vogue", "halo", "roar",
        "umbrella", "shallow", "bad guy", "blinding lights", "levitating",
    ]),
    ("artist", &[
        "adele", "queen", "the beatles", "madonna", "prince", "drake", "coldplay", "radiohead",
        "rihanna", "beyonce", "nirvana", "eminem", "shakira", "u2", "abba", "toto", "dolly parton",
        "lady gaga", "billie eilish", "the weeknd",
    ]),
    ("media", &["hits", "songs", "tracks", "albums", "singles", "classics", "ballads", "remixes"]),
    ("closer", &["now", "please", "again", "loudly"]),
    ("city", &[
        "boston", "paris", "new york", "chicago", "tokyo", "london", "san francisco", "berlin",
        "seattle", "denver", "rome", "madrid", "austin", "miami", "dublin", "oslo", "lima", "cairo",
        "sydney", "toronto",
    ]),
    ("date", &[
        "today", "tomorrow", "tonight", "this weekend", "on monday", "on friday", "next week",
        "next tuesday", "in two days", "on sunday morning",
    ]),
    ("restaurant", &[
        "the olive garden", "chez panisse", "noma", "the french laundry", "joe's diner", "blue hill",
        "nobu", "the ivy", "el bulli", "sushi zen", "pizza hut", "the red lobster",
    ]),
    ("time", &[
        "6 am", "7 am", "noon", "5 30 pm", "8 o'clock", "midnight", "6 15", "9 pm",
        "half past seven", "quarter to eight",
    ]),
    ("playlist", &[
        "workout", "road trip", "chill", "party", "focus", "summer", "morning coffee", "throwback",
        "rainy day", "sleep",
    ]),
    ("place", &[
        "the airport", "downtown", "the mall", "central park", "the train station", "the stadium",
        "the library", "the beach", "city hall", "the museum", "the zoo", "the harbor",
    ]),
    ("dest", &[
        "{place}", "{place}", "{place}", "{place}",
        "[IN:GET_LOCATION_HOME my home ]", "[IN:GET_LOCATION_HOME my house ]",
        "[IN:GET_LOCATION_HOME home ]", "[IN:GET_LOCATION_WORK my office ]",
        "[IN:GET_LOCATION_WORK work ]", "[IN:GET_LOCATION_WORK my job ]",
        "[IN:GET_RESTAURANT_LOCATION the [SL:TYPE_FOOD {food} ] {shop} ]",
    ]),
    ("food", &["coffee", "pizza", "sushi", "taco", "burger", "noodle", "bagel", "donut"]),
    ("shop", &["shop", "place", "restaurant", "spot"]),
    ("travel", &["car", "bus", "train", "bike", "taxi", "subway"]),
    ("event", &["concert", "festival", "comedy", "theater", "football", "art", "jazz", "food truck"]),
];

const SPAN_PRE: &[&str] = &[
    "the pt. was diagnosed with", "patient presents with", "history of", "admitted for",
    "ct scan shows", "notes indicate",
];
const SPAN_MODIFIER: &[&str] = &["GI", "GU", "acute", "recurrent", "active", "massive"];
const SPAN_SITE: &[&str] = &["upper", "lower", "rectal", "nasal", "gastric", "retinal", "cerebral", "vaginal"];
const SPAN_EVENT: &[&str] = &["bleed", "bleeding", "hemorrhage", "oozing"];
const SPAN_SITED_EVENT: &[&str] = &["hematemesis", "epistaxis", "hematuria", "melena"];
const SPAN_POST: &[&str] = &["today.", "yesterday.", "overnight.", "again.", "last week."];

const EVENT: &str = "Bleeding_Event";
const SITE: &str = "Anatomical_Site";

/// Deterministic template grammar over flat, tree and span-set styles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGrammar {
    /// Maximum nodes on a root-to-leaf path of a tree parse.
    pub depth_limit: usize,
    /// Relative frequency of flat, tree and span-set examples.
    pub style_weights: [f64; 3],
}

impl Default for SyntheticGrammar {
    fn default() -> Self {
        SyntheticGrammar {
            depth_limit: 3,
            style_weights: [0.5, 0.35, 0.15],
        }
    }
}

fn lexicon(name: &str) -> &'static [&'static str] {
    LEXICON
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, v)| *v)
        .unwrap_or_else(|| panic!("no lexicon {name}"))
}

fn expand(template: &str, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let end = start + rest[start..].find('}').expect("closed placeholder");
        let choices = lexicon(&rest[start + 1..end]);
        out.push_str(&expand(choices[rng.gen_range(0..choices.len())], rng));
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    out
}

fn flat_kind(_label: &str, depth: usize) -> std::result::Result<NodeKind, String> {
    Ok(if depth == 0 { NodeKind::Intent } else { NodeKind::Slot })
}

fn from_template(annotation: &str, style: Style) -> CorpusExample {
    let kind = if style == Style::Flat { flat_kind } else { top_kind };
    let (mut root, terminals) = parse_bracketed(annotation, kind).expect("templates are well-formed");
    if style == Style::Flat {
        // words outside slots carry no annotation in the flat style
        root.indices.clear();
    }
    CorpusExample::new(&terminals.join(" "), SemanticParse { style, root })
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &'a [&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

fn span_set_example(rng: &mut ChaCha8Rng) -> CorpusExample {
    let pre = pick(rng, SPAN_PRE);
    let post = pick(rng, SPAN_POST);
    let mut words: Vec<String> = pre.split(' ').map(str::to_string).collect();
    let base = words.len();
    let annotations: Vec<(&str, Vec<usize>)> = match rng.gen_range(0..4) {
        0 => {
            // event split around its site
            words.extend([pick(rng, SPAN_MODIFIER), pick(rng, SPAN_SITE), pick(rng, SPAN_EVENT)].map(str::to_string));
            vec![(EVENT, vec![base, base + 2]), (SITE, vec![base + 1])]
        }
        1 => {
            words.extend([pick(rng, SPAN_SITE), pick(rng, SPAN_EVENT)].map(str::to_string));
            vec![(EVENT, vec![base + 1]), (SITE, vec![base])]
        }
        2 => {
            words.push(pick(rng, SPAN_EVENT).to_string());
            words.extend(["in", "the"].map(str::to_string));
            words.push(pick(rng, SPAN_SITE).to_string());
            words.push("region".to_string());
            vec![(EVENT, vec![base]), (SITE, vec![base + 3])]
        }
        _ => {
            // one word is both the event and its site
            words.push(pick(rng, SPAN_SITED_EVENT).to_string());
            vec![(EVENT, vec![base]), (SITE, vec![base])]
        }
    };
    words.push(post.to_string());
    let parse = SemanticParse::span_set(annotations).canonical();
    CorpusExample::new(&words.join(" "), parse)
}

impl SyntheticGrammar {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> CorpusExample {
        let total: f64 = self.style_weights.iter().sum();
        let mut r = rng.gen_range(0.0..total);
        let mut style = 2;
        for (i, w) in self.style_weights.iter().enumerate() {
            if r < *w {
                style = i;
                break;
            }
            r -= w;
        }
        match style {
            0 => from_template(&expand(pick(rng, FLAT_TEMPLATES), rng), Style::Flat),
            1 => loop {
                let ex = from_template(&expand(pick(rng, TREE_TEMPLATES), rng), Style::Tree);
                if ex.parse.depth() <= self.depth_limit {
                    break ex;
                }
            },
            _ => span_set_example(rng),
        }
    }

    fn labels(&self, kind: NodeKind) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let templates = FLAT_TEMPLATES.iter().chain(TREE_TEMPLATES).map(|t| t.to_string());
        let fillers = LEXICON.iter().flat_map(|(_, v)| v.iter().map(|s| s.to_string()));
        for text in templates.chain(fillers) {
            for tok in text.split_whitespace() {
                if let Some(l) = tok.strip_prefix('[') {
                    let is_slot = !l.starts_with("IN:") && (l.starts_with("SL:") || !FLAT_TEMPLATES.iter().any(|t| t.starts_with(tok)));
                    if (kind == NodeKind::Slot) == is_slot {
                        out.insert(l.to_string());
                    }
                }
            }
        }
        if self.depth_limit < 4 {
            out.remove("IN:GET_RESTAURANT_LOCATION");
            out.remove("SL:TYPE_FOOD");
        }
        if kind == NodeKind::Slot {
            out.insert(EVENT.into());
            out.insert(SITE.into());
        }
        out
    }

    pub fn intents(&self) -> BTreeSet<String> {
        self.labels(NodeKind::Intent)
    }

    pub fn slots(&self) -> BTreeSet<String> {
        self.labels(NodeKind::Slot)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<CorpusExample>,
    pub dev: Vec<CorpusExample>,
    pub test: Vec<CorpusExample>,
}

/// `count` examples with unique surface strings, split 8/1/1 in
/// generation order.
pub fn generate_synthetic(grammar: &SyntheticGrammar, count: usize, seed: u64) -> Result<Splits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let budget = 20 * count + 1000;
    for _ in 0..budget {
        if out.len() == count {
            break;
        }
        let ex = grammar.sample(&mut rng);
        debug_assert!(ex.check().is_ok(), "{ex:?}");
        if seen.insert(ex.query.clone()) {
            out.push(ex);
        }
    }
    if out.len() < count {
        return Err(DataError::LexiconTooSmall {
            requested: count,
            produced: out.len(),
        });
    }
    let n_train = count * 8 / 10;
    let n_dev = count / 10;
    let test = out.split_off(n_train + n_dev);
    let dev = out.split_off(n_train);
    Ok(Splits { train: out, dev, test })
}

/// Shuffled copy, for callers that want a different example order.
pub fn shuffled(examples: &[CorpusExample], seed: u64) -> Vec<CorpusExample> {
    let mut v = examples.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    const COFFEE_ROW: &str = "How far is the coffee shop\tHow far is the coffee shop\t[IN:GET_DISTANCE How far is [SL:DESTINATION [IN:GET_RESTAURANT_LOCATION the [SL:TYPE_FOOD coffee ] shop ] ] ]";

    #[test]
    fn top_row_becomes_nested_tree() {
        let ex = &import_top(COFFEE_ROW, TopColumns::default()).unwrap()[0];
        assert_eq!(ex.parse.label, "IN:GET_DISTANCE");
        assert_eq!(ex.parse.indices, vec![0, 1, 2]);
        let dest = &ex.parse.children[0];
        assert_eq!(dest.label, "SL:DESTINATION");
        let inner = &dest.children[0];
        assert_eq!(inner.label, "IN:GET_RESTAURANT_LOCATION");
        assert_eq!(inner.indices, vec![3, 5]);
        assert_eq!(inner.children[0].indices, vec![4]);
    }

    #[test]
    fn single_intent_row_is_depth_one() {
        let ex = &import_top("x\tturn it up\t[IN:VOLUME turn it up ]", TopColumns::default()).unwrap()[0];
        assert_eq!(ex.parse.depth(), 1);
    }

    #[test]
    fn top_errors() {
        let cols = TopColumns::default();
        assert!(matches!(
            import_top("a\tgo home\t[IN:X go home", cols),
            Err(DataError::BracketParse { row: 1, .. })
        ));
        assert!(matches!(
            import_top("a\tgo home\t[IN:X go house ]", cols),
            Err(DataError::Alignment { row: 1, .. })
        ));
        assert!(matches!(import_top("only one column", cols), Err(DataError::MissingColumn { .. })));
    }

    #[test]
    fn bio_import() {
        let ex = import_bio(
            "will there be fog in tahquamenon falls state park\n",
            "O O O B-condition_description O B-geographic_poi I-geographic_poi I-geographic_poi I-geographic_poi\n",
            "GetWeather\n",
            BioPolicy::Reject,
        )
        .unwrap();
        let p = &ex[0].parse;
        assert_eq!(p.label, "GetWeather");
        assert_eq!(p.children.len(), 2);
        assert_eq!(p.children[1].indices, vec![5, 6, 7, 8]);
    }

    #[test]
    fn bio_policies() {
        let all_o = import_bio("hi there\n", "O O\n", "Greet\n", BioPolicy::Reject).unwrap();
        assert!(all_o[0].parse.children.is_empty());
        assert!(matches!(
            import_bio("a b\n", "I-x O\n", "I\n", BioPolicy::Reject),
            Err(DataError::IllegalTagTransition { line: 1, position: 0, .. })
        ));
        let repaired = import_bio("a b\n", "I-x I-y\n", "I\n", BioPolicy::Repair).unwrap();
        assert_eq!(repaired[0].parse.children.len(), 2);
        assert!(matches!(
            import_bio("a b\n", "O\n", "I\n", BioPolicy::Repair),
            Err(DataError::MisalignedFiles(_))
        ));
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        let g = SyntheticGrammar::default();
        let a = generate_synthetic(&g, 300, 17).unwrap();
        let b = generate_synthetic(&g, 300, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.dev.len(), a.test.len()), (240, 30, 30));
        for e in a.train.iter().chain(&a.dev).chain(&a.test) {
            e.check().unwrap();
            assert!(e.parse.depth() <= 3);
        }
        assert_eq!(g.intents().len(), 10);
    }

    #[test]
    fn lexicon_exhaustion() {
        let g = SyntheticGrammar {
            depth_limit: 3,
            style_weights: [0.0, 0.0, 1.0],
        };
        assert!(matches!(
            generate_synthetic(&g, 20_000, 1),
            Err(DataError::LexiconTooSmall { .. })
        ));
    }
}
