//! Conversion between semantic parses and pointer-token target sequences.
//!
//! Three annotation styles share one symbol inventory:
//!
//! * `Flat`: a single intent tag followed by slot spans,
//!   `PlaySongIntent SongName( @ptr_3 @ptr_4 )SongName`.
//! * `Tree`: bracketed, arbitrarily nested intents and slots with
//!   label-specific close brackets, `[IN:A @ptr_0 [SL:B @ptr_1 SL:B] IN:A]`.
//! * `SpanSet`: labeled, possibly discontiguous and overlapping token sets,
//!   `Event( @ptr_5 @ptr_7 )Event Site( @ptr_6 )Site`.
//!
//! Pointer `@ptr_i` refers to the i-th whitespace token of the query.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Whitespace-tokenized source utterance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub tokens: Vec<String>,
    pub raw: String,
}

impl Query {
    pub fn new(raw: &str) -> Self {
        Query {
            tokens: raw.split_whitespace().map(str::to_string).collect(),
            raw: raw.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens joined by single spaces.
    pub fn normalized(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Flat,
    Tree,
    SpanSet,
}

impl Style {
    pub fn as_str(self) -> &'static str {
        match self {
            Style::Flat => "flat",
            Style::Tree => "tree",
            Style::SpanSet => "spanset",
        }
    }

    /// Style implied by the first symbol of a generated sequence.
    pub fn infer(seq: &TargetSequence) -> Option<Style> {
        match seq.content().next()? {
            TargetSymbol::IntentTag(_) => Some(Style::Flat),
            TargetSymbol::IntentOpen(_) => Some(Style::Tree),
            TargetSymbol::SlotOpen(_) => Some(Style::SpanSet),
            _ => None,
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Style {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flat" => Ok(Style::Flat),
            "tree" => Ok(Style::Tree),
            "spanset" => Ok(Style::SpanSet),
            other => Err(format!("unknown style {other:?} (expected flat, tree or spanset)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Intent,
    Slot,
}

/// One intent or slot. `indices` are the tokens this node covers directly,
/// not through its children, in ascending order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseNode {
    pub label: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub indices: Vec<usize>,
    #[serde(default)]
    pub children: Vec<ParseNode>,
}

impl ParseNode {
    pub fn intent(label: &str, indices: Vec<usize>, children: Vec<ParseNode>) -> Self {
        ParseNode {
            label: label.to_string(),
            kind: NodeKind::Intent,
            indices,
            children,
        }
    }

    pub fn slot(label: &str, indices: Vec<usize>, children: Vec<ParseNode>) -> Self {
        ParseNode {
            label: label.to_string(),
            kind: NodeKind::Slot,
            indices,
            children,
        }
    }

    /// All token indices covered by this node and its descendants.
    pub fn covered(&self) -> Vec<usize> {
        let mut out = self.indices.clone();
        for c in &self.children {
            out.extend(c.covered());
        }
        out.sort_unstable();
        out
    }

    /// Number of nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(ParseNode::depth).max().unwrap_or(0)
    }
}

/// Annotation of one query.
///
/// For `SpanSet` the root is an unlabeled container (empty label, kind
/// `Intent`, no indices) whose children are the annotations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticParse {
    pub style: Style,
    pub root: ParseNode,
}

impl SemanticParse {
    pub fn flat(intent: &str, slots: Vec<(&str, Vec<usize>)>) -> Self {
        SemanticParse {
            style: Style::Flat,
            root: ParseNode::intent(
                intent,
                vec![],
                slots
                    .into_iter()
                    .map(|(l, idx)| ParseNode::slot(l, idx, vec![]))
                    .collect(),
            ),
        }
    }

    pub fn tree(root: ParseNode) -> Self {
        SemanticParse {
            style: Style::Tree,
            root,
        }
    }

    pub fn span_set(annotations: Vec<(&str, Vec<usize>)>) -> Self {
        SemanticParse {
            style: Style::SpanSet,
            root: ParseNode::intent(
                "",
                vec![],
                annotations
                    .into_iter()
                    .map(|(l, idx)| ParseNode::slot(l, idx, vec![]))
                    .collect(),
            ),
        }
    }

    /// Canonical form: for `SpanSet`, indices ascending and annotations
    /// ordered by (first index, label). Other styles are already canonical
    /// when valid.
    pub fn canonical(&self) -> SemanticParse {
        let mut out = self.clone();
        if self.style == Style::SpanSet {
            for c in &mut out.root.children {
                c.indices.sort_unstable();
            }
            out.root
                .children
                .sort_by(|a, b| (a.indices.first(), &a.label).cmp(&(b.indices.first(), &b.label)));
        }
        out
    }

    /// Intent label at the root, if the style has one.
    pub fn intent(&self) -> Option<&str> {
        match self.style {
            Style::SpanSet => None,
            _ => Some(&self.root.label),
        }
    }
}

/// One element of a target sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TargetSymbol {
    IntentTag(String),
    IntentOpen(String),
    IntentClose(String),
    SlotOpen(String),
    SlotClose(String),
    Pointer(usize),
    Bos,
    Eos,
    Pad,
}

const TREE_SLOT_PREFIX: &str = "SL:";

/// Labels must survive the surface syntax unambiguously.
pub fn valid_label(label: &str) -> bool {
    !label.is_empty()
        && !label
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, '[' | ']' | '(' | ')'))
        && !label.starts_with('@')
        && !label.starts_with('<')
}

impl TargetSymbol {
    pub fn is_special(&self) -> bool {
        matches!(self, TargetSymbol::Bos | TargetSymbol::Eos | TargetSymbol::Pad)
    }

    pub fn open(kind: NodeKind, label: &str) -> Self {
        match kind {
            NodeKind::Intent => TargetSymbol::IntentOpen(label.to_string()),
            NodeKind::Slot => TargetSymbol::SlotOpen(label.to_string()),
        }
    }

    pub fn close(kind: NodeKind, label: &str) -> Self {
        match kind {
            NodeKind::Intent => TargetSymbol::IntentClose(label.to_string()),
            NodeKind::Slot => TargetSymbol::SlotClose(label.to_string()),
        }
    }
}

impl fmt::Display for TargetSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSymbol::IntentTag(l) => write!(f, "{l}"),
            TargetSymbol::IntentOpen(l) => write!(f, "[{l}"),
            TargetSymbol::IntentClose(l) => write!(f, "{l}]"),
            TargetSymbol::SlotOpen(l) if l.starts_with(TREE_SLOT_PREFIX) => write!(f, "[{l}"),
            TargetSymbol::SlotOpen(l) => write!(f, "{l}("),
            TargetSymbol::SlotClose(l) if l.starts_with(TREE_SLOT_PREFIX) => write!(f, "{l}]"),
            TargetSymbol::SlotClose(l) => write!(f, "){l}"),
            TargetSymbol::Pointer(i) => write!(f, "@ptr_{i}"),
            TargetSymbol::Bos => f.write_str("<s>"),
            TargetSymbol::Eos => f.write_str("</s>"),
            TargetSymbol::Pad => f.write_str("<pad>"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot read {0:?} as a target symbol")]
pub struct ParseSymbolError(pub String);

impl FromStr for TargetSymbol {
    type Err = ParseSymbolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ParseSymbolError(s.to_string());
        let labeled = |l: &str, make: fn(String) -> TargetSymbol| {
            if valid_label(l) {
                Ok(make(l.to_string()))
            } else {
                Err(bad())
            }
        };
        match s {
            "<s>" => return Ok(TargetSymbol::Bos),
            "</s>" => return Ok(TargetSymbol::Eos),
            "<pad>" => return Ok(TargetSymbol::Pad),
            _ => {}
        }
        if let Some(num) = s.strip_prefix("@ptr_") {
            if num.is_empty() || !num.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            return num.parse().map(TargetSymbol::Pointer).map_err(|_| bad());
        }
        if let Some(l) = s.strip_prefix('[') {
            return if l.starts_with(TREE_SLOT_PREFIX) {
                labeled(l, TargetSymbol::SlotOpen)
            } else {
                labeled(l, TargetSymbol::IntentOpen)
            };
        }
        if let Some(l) = s.strip_suffix(']') {
            return if l.starts_with(TREE_SLOT_PREFIX) {
                labeled(l, TargetSymbol::SlotClose)
            } else {
                labeled(l, TargetSymbol::IntentClose)
            };
        }
        if let Some(l) = s.strip_suffix('(') {
            return labeled(l, TargetSymbol::SlotOpen);
        }
        if let Some(l) = s.strip_prefix(')') {
            return labeled(l, TargetSymbol::SlotClose);
        }
        labeled(s, TargetSymbol::IntentTag)
    }
}

/// Linearized parse.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TargetSequence(pub Vec<TargetSymbol>);

impl TargetSequence {
    pub fn symbols(&self) -> &[TargetSymbol] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Symbols other than BOS, EOS and PAD.
    pub fn content(&self) -> impl Iterator<Item = &TargetSymbol> {
        self.0.iter().filter(|s| !s.is_special())
    }

    pub fn stripped(&self) -> TargetSequence {
        TargetSequence(self.content().cloned().collect())
    }
}

impl fmt::Display for TargetSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

impl FromStr for TargetSequence {
    type Err = ParseSymbolError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map(TargetSequence)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinearizeError {
    #[error("token index {index} out of range for a query of {len} tokens")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{style} style violation: {reason}")]
    StyleViolation { style: Style, reason: String },
}

/// First problem found in a target sequence, with the symbol position.
#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum Violation {
    #[error("unbalanced bracket at position {pos}")]
    UnbalancedBracket { pos: usize },
    #[error("close label {found:?} at position {pos} does not match open {expected:?}")]
    MismatchedCloseLabel {
        pos: usize,
        expected: String,
        found: String,
    },
    #[error("pointer @ptr_{index} at position {pos} out of range for {len} tokens")]
    PointerOutOfRange { pos: usize, index: usize, len: usize },
    #[error("sequence does not start with an intent")]
    MissingIntent,
    #[error("unexpected symbol {symbol} at position {pos}")]
    UnexpectedSymbol { pos: usize, symbol: String },
    #[error("span {label:?} closed at position {pos} covers no tokens")]
    EmptySpan { pos: usize, label: String },
    #[error("span {label:?} closed at position {pos} is not contiguous")]
    NonContiguousSpan { pos: usize, label: String },
    #[error("pointer at position {pos} is out of source order")]
    OutOfOrder { pos: usize },
    #[error("pointer @ptr_{index} repeated at position {pos}")]
    DuplicatePointer { pos: usize, index: usize },
    #[error("symbols after the root closes, from position {pos}")]
    TrailingSymbols { pos: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DelinearizeError {
    #[error("malformed target: {0}")]
    Malformed(Violation),
}

/// Result of [`validate`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WellFormedness {
    pub well_formed: bool,
    pub violations: Vec<Violation>,
}

fn violation(style: Style, reason: impl Into<String>) -> LinearizeError {
    LinearizeError::StyleViolation {
        style,
        reason: reason.into(),
    }
}

fn is_run(sorted: &[usize]) -> bool {
    sorted.windows(2).all(|w| w[1] == w[0] + 1)
}

fn strictly_increasing(v: &[usize]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// Check the style invariants of `parse` against a query of `n` tokens.
pub fn validate_parse(parse: &SemanticParse, n: usize) -> Result<(), LinearizeError> {
    fn check_range(node: &ParseNode, n: usize) -> Result<(), LinearizeError> {
        if let Some(&index) = node.indices.iter().find(|&&i| i >= n) {
            return Err(LinearizeError::IndexOutOfRange { index, len: n });
        }
        node.children.iter().try_for_each(|c| check_range(c, n))
    }
    check_range(&parse.root, n)?;

    let style = parse.style;
    let root = &parse.root;
    match style {
        Style::Flat => {
            if root.kind != NodeKind::Intent || !valid_label(&root.label) {
                return Err(violation(style, "root must be a labeled intent"));
            }
            if !root.indices.is_empty() {
                return Err(violation(style, "the intent does not point at tokens"));
            }
            let mut prev_end: Option<usize> = None;
            for slot in &root.children {
                if slot.kind != NodeKind::Slot || !slot.children.is_empty() || !valid_label(&slot.label) {
                    return Err(violation(style, format!("{:?} must be a labeled leaf slot", slot.label)));
                }
                if slot.indices.is_empty() {
                    return Err(violation(style, format!("slot {:?} is empty", slot.label)));
                }
                if !strictly_increasing(&slot.indices) || !is_run(&slot.indices) {
                    return Err(violation(style, format!("slot {:?} is not a contiguous ascending run", slot.label)));
                }
                if prev_end.is_some_and(|e| slot.indices[0] <= e) {
                    return Err(violation(style, format!("slot {:?} overlaps or precedes the previous slot", slot.label)));
                }
                prev_end = slot.indices.last().copied();
            }
            Ok(())
        }
        Style::Tree => {
            if root.kind != NodeKind::Intent {
                return Err(violation(style, "root must be an intent"));
            }
            check_tree_node(root).map(|_| ())
        }
        Style::SpanSet => {
            if !root.label.is_empty() || !root.indices.is_empty() {
                return Err(violation(style, "span-set root is an unlabeled container"));
            }
            for a in &root.children {
                if a.kind != NodeKind::Slot || !a.children.is_empty() || !valid_label(&a.label) {
                    return Err(violation(style, format!("{:?} must be a labeled leaf annotation", a.label)));
                }
                if a.indices.is_empty() {
                    return Err(violation(style, format!("annotation {:?} is empty", a.label)));
                }
                let mut sorted = a.indices.clone();
                sorted.sort_unstable();
                if !strictly_increasing(&sorted) {
                    return Err(violation(style, format!("annotation {:?} repeats a token", a.label)));
                }
            }
            Ok(())
        }
    }
}

/// Validates a tree node and returns its covered span `(lo, hi)`.
fn check_tree_node(node: &ParseNode) -> Result<(usize, usize), LinearizeError> {
    let style = Style::Tree;
    if !valid_label(&node.label) {
        return Err(violation(style, format!("invalid label {:?}", node.label)));
    }
    let slot_prefixed = node.label.starts_with(TREE_SLOT_PREFIX);
    if slot_prefixed != (node.kind == NodeKind::Slot) {
        return Err(violation(
            style,
            format!("{:?}: tree slots and only slots carry the SL: prefix", node.label),
        ));
    }
    if !strictly_increasing(&node.indices) {
        return Err(violation(style, format!("{:?}: direct indices not ascending", node.label)));
    }
    // items in source order: direct tokens as unit spans, children as their spans
    let mut items: Vec<(usize, usize)> = node.indices.iter().map(|&i| (i, i)).collect();
    let mut last_child_start: Option<usize> = None;
    for c in &node.children {
        let span = check_tree_node(c)?;
        if last_child_start.is_some_and(|s| span.0 <= s) {
            return Err(violation(style, format!("{:?}: children out of source order", node.label)));
        }
        last_child_start = Some(span.0);
        items.push(span);
    }
    if items.is_empty() {
        return Err(violation(style, format!("{:?} covers no tokens", node.label)));
    }
    items.sort_unstable();
    for w in items.windows(2) {
        if w[1].0 != w[0].1 + 1 {
            return Err(violation(
                style,
                format!("{:?}: span is not contiguous or overlaps", node.label),
            ));
        }
    }
    Ok((items[0].0, items[items.len() - 1].1))
}

/// Linearize `parse` for `query`. BOS/EOS framing is not included.
pub fn linearize(parse: &SemanticParse, query: &Query) -> Result<TargetSequence, LinearizeError> {
    validate_parse(parse, query.len())?;
    let mut out = Vec::new();
    match parse.style {
        Style::Flat => {
            out.push(TargetSymbol::IntentTag(parse.root.label.clone()));
            for slot in &parse.root.children {
                emit_span(&mut out, slot);
            }
        }
        Style::Tree => emit_tree(&mut out, &parse.root),
        Style::SpanSet => {
            for a in &parse.canonical().root.children {
                emit_span(&mut out, a);
            }
        }
    }
    Ok(TargetSequence(out))
}

fn emit_span(out: &mut Vec<TargetSymbol>, node: &ParseNode) {
    out.push(TargetSymbol::SlotOpen(node.label.clone()));
    out.extend(node.indices.iter().map(|&i| TargetSymbol::Pointer(i)));
    out.push(TargetSymbol::SlotClose(node.label.clone()));
}

fn emit_tree(out: &mut Vec<TargetSymbol>, node: &ParseNode) {
    out.push(TargetSymbol::open(node.kind, &node.label));
    let mut direct = node.indices.iter().peekable();
    for child in &node.children {
        let start = child.covered()[0];
        while let Some(&&i) = direct.peek() {
            if i > start {
                break;
            }
            out.push(TargetSymbol::Pointer(i));
            direct.next();
        }
        emit_tree(out, child);
    }
    out.extend(direct.map(|&i| TargetSymbol::Pointer(i)));
    out.push(TargetSymbol::close(node.kind, &node.label));
}

/// Rebuild the parse from a target sequence for a query of `n` tokens.
pub fn delinearize_len(target: &TargetSequence, n: usize, style: Style) -> Result<SemanticParse, DelinearizeError> {
    let (parse, mut violations) = analyze(target.symbols(), n, style);
    match parse {
        Some(p) if violations.is_empty() => Ok(p),
        _ => Err(DelinearizeError::Malformed(
            violations
                .drain(..)
                .next()
                .unwrap_or(Violation::MissingIntent),
        )),
    }
}

pub fn delinearize(target: &TargetSequence, query: &Query, style: Style) -> Result<SemanticParse, DelinearizeError> {
    delinearize_len(target, query.len(), style)
}

/// Well-formedness of `target` for a source of `n` tokens. Never fails;
/// `well_formed` is true exactly when [`delinearize`] would succeed.
pub fn validate(target: &TargetSequence, n: usize, style: Style) -> WellFormedness {
    let (parse, violations) = analyze(target.symbols(), n, style);
    WellFormedness {
        well_formed: parse.is_some() && violations.is_empty(),
        violations,
    }
}

fn analyze(syms: &[TargetSymbol], n: usize, style: Style) -> (Option<SemanticParse>, Vec<Violation>) {
    let mut v = Vec::new();
    let parse = match style {
        Style::Flat => analyze_flat(syms, n, &mut v),
        Style::Tree => analyze_tree(syms, n, &mut v),
        Style::SpanSet => analyze_span_set(syms, n, &mut v),
    };
    if parse.is_none() && v.is_empty() {
        v.push(Violation::MissingIntent);
    }
    (parse, v)
}

fn unexpected(pos: usize, s: &TargetSymbol) -> Violation {
    Violation::UnexpectedSymbol {
        pos,
        symbol: s.to_string(),
    }
}

/// A symbol in the wrong place; out-of-range pointers report their range.
fn stray(pos: usize, s: &TargetSymbol, n: usize) -> Violation {
    match s {
        TargetSymbol::Pointer(i) if *i >= n => Violation::PointerOutOfRange { pos, index: *i, len: n },
        _ => unexpected(pos, s),
    }
}

fn check_pointer(pos: usize, i: usize, n: usize, v: &mut Vec<Violation>) -> bool {
    if i >= n {
        v.push(Violation::PointerOutOfRange { pos, index: i, len: n });
        false
    } else {
        true
    }
}

/// A bracketed leaf span shared by the flat and span-set readers.
struct OpenSpan {
    label: String,
    indices: Vec<usize>,
}

fn analyze_flat(syms: &[TargetSymbol], n: usize, v: &mut Vec<Violation>) -> Option<SemanticParse> {
    let (intent, rest_start) = match syms.first() {
        Some(TargetSymbol::IntentTag(l)) => (Some(l.clone()), 1),
        _ => {
            v.push(Violation::MissingIntent);
            (None, 0)
        }
    };
    let mut slots = Vec::new();
    let mut open: Option<OpenSpan> = None;
    let mut prev_end: Option<usize> = None;
    for (pos, s) in syms.iter().enumerate().skip(rest_start) {
        match (s, open.as_mut()) {
            (TargetSymbol::SlotOpen(l), None) => {
                open = Some(OpenSpan {
                    label: l.clone(),
                    indices: vec![],
                })
            }
            (TargetSymbol::SlotOpen(l), Some(_)) => {
                v.push(Violation::UnbalancedBracket { pos });
                open = Some(OpenSpan {
                    label: l.clone(),
                    indices: vec![],
                });
            }
            (TargetSymbol::Pointer(i), Some(span)) => {
                if check_pointer(pos, *i, n, v) {
                    let floor = span.indices.last().copied().or(prev_end);
                    if let Some(&last) = span.indices.last() {
                        if *i <= last {
                            v.push(Violation::OutOfOrder { pos });
                        } else if *i != last + 1 {
                            v.push(Violation::NonContiguousSpan {
                                pos,
                                label: span.label.clone(),
                            });
                        }
                    } else if floor.is_some_and(|f| *i <= f) {
                        v.push(Violation::OutOfOrder { pos });
                    }
                    span.indices.push(*i);
                }
            }
            (TargetSymbol::SlotClose(l), Some(span)) => {
                if *l != span.label {
                    v.push(Violation::MismatchedCloseLabel {
                        pos,
                        expected: span.label.clone(),
                        found: l.clone(),
                    });
                }
                if span.indices.is_empty() {
                    v.push(Violation::EmptySpan {
                        pos,
                        label: span.label.clone(),
                    });
                }
                let span = open.take().unwrap();
                if let Some(&e) = span.indices.last() {
                    prev_end = Some(e);
                }
                slots.push(ParseNode::slot(&span.label, span.indices, vec![]));
            }
            (TargetSymbol::SlotClose(_), None) => v.push(Violation::UnbalancedBracket { pos }),
            (s, _) => v.push(stray(pos, s, n)),
        }
    }
    if open.is_some() {
        v.push(Violation::UnbalancedBracket { pos: syms.len() });
    }
    Some(SemanticParse {
        style: Style::Flat,
        root: ParseNode::intent(&intent?, vec![], slots),
    })
}

fn analyze_span_set(syms: &[TargetSymbol], n: usize, v: &mut Vec<Violation>) -> Option<SemanticParse> {
    let mut annotations = Vec::new();
    let mut open: Option<OpenSpan> = None;
    for (pos, s) in syms.iter().enumerate() {
        match (s, open.as_mut()) {
            (TargetSymbol::SlotOpen(l), current) => {
                if current.is_some() {
                    v.push(Violation::UnbalancedBracket { pos });
                }
                open = Some(OpenSpan {
                    label: l.clone(),
                    indices: vec![],
                });
            }
            (TargetSymbol::Pointer(i), Some(span)) => {
                if check_pointer(pos, *i, n, v) {
                    if span.indices.contains(i) {
                        v.push(Violation::DuplicatePointer { pos, index: *i });
                    }
                    span.indices.push(*i);
                }
            }
            (TargetSymbol::SlotClose(l), Some(span)) => {
                if *l != span.label {
                    v.push(Violation::MismatchedCloseLabel {
                        pos,
                        expected: span.label.clone(),
                        found: l.clone(),
                    });
                }
                if span.indices.is_empty() {
                    v.push(Violation::EmptySpan {
                        pos,
                        label: span.label.clone(),
                    });
                }
                let span = open.take().unwrap();
                annotations.push(ParseNode::slot(&span.label, span.indices, vec![]));
            }
            (TargetSymbol::SlotClose(_), None) => v.push(Violation::UnbalancedBracket { pos }),
            (s, _) => v.push(stray(pos, s, n)),
        }
    }
    if open.is_some() {
        v.push(Violation::UnbalancedBracket { pos: syms.len() });
    }
    let parse = SemanticParse {
        style: Style::SpanSet,
        root: ParseNode::intent("", vec![], annotations),
    };
    Some(parse.canonical())
}

fn analyze_tree(syms: &[TargetSymbol], n: usize, v: &mut Vec<Violation>) -> Option<SemanticParse> {
    if !matches!(syms.first(), Some(TargetSymbol::IntentOpen(_))) {
        v.push(Violation::MissingIntent);
    }
    let mut stack: Vec<ParseNode> = Vec::new();
    let mut root: Option<ParseNode> = None;
    let mut last_ptr: Option<usize> = None;
    for (pos, s) in syms.iter().enumerate() {
        if root.is_some() {
            v.push(Violation::TrailingSymbols { pos });
            break;
        }
        match s {
            TargetSymbol::IntentOpen(l) => stack.push(ParseNode::intent(l, vec![], vec![])),
            TargetSymbol::SlotOpen(l) => {
                if stack.is_empty() {
                    // a slot cannot be the root; the missing intent is already reported
                    if pos > 0 {
                        v.push(unexpected(pos, s));
                    }
                }
                stack.push(ParseNode::slot(l, vec![], vec![]));
            }
            TargetSymbol::Pointer(i) => {
                let Some(top) = stack.last_mut() else {
                    v.push(stray(pos, s, n));
                    continue;
                };
                if check_pointer(pos, *i, n, v) {
                    if last_ptr.is_some_and(|l| *i <= l) {
                        v.push(Violation::OutOfOrder { pos });
                    }
                    last_ptr = Some(*i);
                    top.indices.push(*i);
                }
            }
            TargetSymbol::IntentClose(l) | TargetSymbol::SlotClose(l) => {
                let Some(node) = stack.pop() else {
                    v.push(Violation::UnbalancedBracket { pos });
                    continue;
                };
                let kind = if matches!(s, TargetSymbol::IntentClose(_)) {
                    NodeKind::Intent
                } else {
                    NodeKind::Slot
                };
                if *l != node.label || kind != node.kind {
                    v.push(Violation::MismatchedCloseLabel {
                        pos,
                        expected: node.label.clone(),
                        found: l.clone(),
                    });
                }
                let covered = node.covered();
                if covered.is_empty() {
                    v.push(Violation::EmptySpan {
                        pos,
                        label: node.label.clone(),
                    });
                } else if !is_run(&covered) {
                    v.push(Violation::NonContiguousSpan {
                        pos,
                        label: node.label.clone(),
                    });
                }
                match stack.last_mut() {
                    Some(parent) => parent.children.push(node),
                    None => root = Some(node),
                }
            }
            other => v.push(unexpected(pos, other)),
        }
    }
    if !stack.is_empty() {
        v.push(Violation::UnbalancedBracket { pos: syms.len() });
    }
    let root = root?;
    if root.kind != NodeKind::Intent {
        return None;
    }
    Some(SemanticParse::tree(root))
}
