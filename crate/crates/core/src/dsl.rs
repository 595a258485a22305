//! Auxiliary-loss genomes: horizon, source/target bit masks and operator.
//!
//! A candidate selects two subsets of a window `{s, a, r}_{t..t+k}`. Each
//! subset is stored as a bit mask of length `3k + 3` with the fixed layout
//! `3j + 0 -> s_{t+j}`, `3j + 1 -> a_{t+j}`, `3j + 2 -> r_{t+j}`.
//!
//! The canonical text form is
//!
//! ```text
//! src:{s1,a1,a2,a3} tgt:{r0,r1,s2,s3} op:mse k:3
//! ```
//!
//! and is what every log and config file stores.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest horizon accepted by the rejection protocol.
pub const MAX_HORIZON: usize = 10;
/// Smallest horizon accepted by the rejection protocol.
pub const MIN_HORIZON: usize = 1;

/// Number of elements in a window of horizon `k`.
pub fn sequence_length(k: usize) -> usize {
    3 * k + 3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    State,
    Action,
    Reward,
}

impl ElementKind {
    pub const ALL: [ElementKind; 3] =
        [ElementKind::State, ElementKind::Action, ElementKind::Reward];

    fn slot(self) -> usize {
        match self {
            ElementKind::State => 0,
            ElementKind::Action => 1,
            ElementKind::Reward => 2,
        }
    }

    fn from_slot(slot: usize) -> Self {
        Self::ALL[slot % 3]
    }

    fn letter(self) -> char {
        match self {
            ElementKind::State => 's',
            ElementKind::Action => 'a',
            ElementKind::Reward => 'r',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ElementKind::State => "state",
            ElementKind::Action => "action",
            ElementKind::Reward => "reward",
        }
    }
}

/// One element of the window, `kind` at time `t + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ElementRef {
    pub kind: ElementKind,
    pub offset: usize,
}

impl ElementRef {
    pub const fn state(offset: usize) -> Self {
        Self {
            kind: ElementKind::State,
            offset,
        }
    }
    pub const fn action(offset: usize) -> Self {
        Self {
            kind: ElementKind::Action,
            offset,
        }
    }
    pub const fn reward(offset: usize) -> Self {
        Self {
            kind: ElementKind::Reward,
            offset,
        }
    }

    /// Bit index of this element under the `(s, a, r)`-per-step layout.
    pub fn bit_index(self) -> usize {
        3 * self.offset + self.kind.slot()
    }

    pub fn from_bit_index(index: usize) -> Self {
        Self {
            kind: ElementKind::from_slot(index),
            offset: index / 3,
        }
    }
}

impl fmt::Display for ElementRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind.letter(), self.offset)
    }
}

/// A bit mask over the elements of a window.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    bits: Vec<bool>,
}

impl Mask {
    pub fn zeros(horizon: usize) -> Self {
        Self {
            bits: vec![false; sequence_length(horizon)],
        }
    }

    pub fn ones(horizon: usize) -> Self {
        Self {
            bits: vec![true; sequence_length(horizon)],
        }
    }

    /// Builds a mask from raw bits; the length must be a multiple of three.
    pub fn from_bits(bits: Vec<bool>) -> Result<Self, DslError> {
        if bits.is_empty() || !bits.len().is_multiple_of(3) {
            return Err(DslError::MaskLength { len: bits.len() });
        }
        Ok(Self { bits })
    }

    /// Builds a mask of horizon `k` selecting `elements`.
    pub fn from_elements(horizon: usize, elements: &[ElementRef]) -> Result<Self, DslError> {
        let mut mask = Self::zeros(horizon);
        for e in elements {
            if e.offset > horizon {
                return Err(DslError::OffsetOutOfRange {
                    element: *e,
                    horizon,
                });
            }
            mask.bits[e.bit_index()] = true;
        }
        Ok(mask)
    }

    pub fn horizon(&self) -> usize {
        self.bits.len() / 3 - 1
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn contains(&self, element: ElementRef) -> bool {
        self.bits.get(element.bit_index()).copied().unwrap_or(false)
    }

    /// Selected elements in bit-index order.
    pub fn elements(&self) -> Vec<ElementRef> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| ElementRef::from_bit_index(i))
            .collect()
    }

    pub fn count(&self, kind: ElementKind) -> usize {
        element_count(self, kind)
    }

    /// `"000110010010"` style rendering, one character per bit.
    pub fn to_bit_string(&self) -> String {
        self.bits
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }
}

/// Number of selected bits of the given kind.
pub fn element_count(mask: &Mask, kind: ElementKind) -> usize {
    mask.bits
        .iter()
        .skip(kind.slot())
        .step_by(3)
        .filter(|&&b| b)
        .count()
}

/// Source and target masks sharing one horizon.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskPair {
    source: Mask,
    target: Mask,
}

impl MaskPair {
    pub fn new(source: Mask, target: Mask) -> Result<Self, DslError> {
        if source.len() != target.len() {
            return Err(DslError::MaskPairLength {
                source_len: source.len(),
                target_len: target.len(),
            });
        }
        Ok(Self { source, target })
    }

    pub fn horizon(&self) -> usize {
        self.source.horizon()
    }

    pub fn source(&self) -> &Mask {
        &self.source
    }

    pub fn target(&self) -> &Mask {
        &self.target
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Measure {
    Inner,
    Bilinear,
    Cosine,
    Mse,
    Nmse,
}

impl Measure {
    pub const ALL: [Measure; 5] = [
        Measure::Inner,
        Measure::Bilinear,
        Measure::Cosine,
        Measure::Mse,
        Measure::Nmse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Inner => "inner",
            Measure::Bilinear => "bilinear",
            Measure::Cosine => "cosine",
            Measure::Mse => "mse",
            Measure::Nmse => "nmse",
        }
    }

    /// Similarity measures are turned into a discrimination loss; the MSE
    /// family is an error measure.
    pub fn is_similarity(self) -> bool {
        matches!(self, Measure::Inner | Measure::Bilinear | Measure::Cosine)
    }
}

/// Loss operator: a measure, optionally contrasted against negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OperatorSpec {
    pub measure: Measure,
    pub negatives: bool,
}

impl OperatorSpec {
    pub const MSE: OperatorSpec = OperatorSpec {
        measure: Measure::Mse,
        negatives: false,
    };

    pub const fn new(measure: Measure, negatives: bool) -> Self {
        Self { measure, negatives }
    }

    /// All ten operators, without-negatives variant first for each measure.
    pub fn all() -> Vec<OperatorSpec> {
        Measure::ALL
            .iter()
            .flat_map(|&m| [OperatorSpec::new(m, false), OperatorSpec::new(m, true)])
            .collect()
    }
}

impl fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.measure.name())?;
        if self.negatives {
            f.write_str("-neg")?;
        }
        Ok(())
    }
}

impl FromStr for OperatorSpec {
    type Err = DslError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, negatives) = match s.strip_suffix("-neg") {
            Some(base) => (base, true),
            None => (s, false),
        };
        let measure = Measure::ALL
            .iter()
            .copied()
            .find(|m| m.name() == name)
            .ok_or_else(|| DslError::UnknownOperator(s.to_string()))?;
        Ok(OperatorSpec { measure, negatives })
    }
}

impl Serialize for OperatorSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OperatorSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Why a candidate fails the rejection protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error)]
pub enum Rejection {
    #[error("source has no state element, so no gradient reaches the encoder")]
    NoStateInSource,
    #[error("target is empty")]
    EmptyTarget,
    #[error("horizon {0} outside {MIN_HORIZON}..={MAX_HORIZON}")]
    HorizonOutOfRange(usize),
}

/// An auxiliary-loss genome. Value type: mutation produces new candidates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LossCandidate {
    masks: MaskPair,
    operator: OperatorSpec,
}

impl LossCandidate {
    pub fn new(masks: MaskPair, operator: OperatorSpec) -> Self {
        Self { masks, operator }
    }

    /// Convenience constructor from element lists.
    pub fn from_elements(
        horizon: usize,
        source: &[ElementRef],
        target: &[ElementRef],
        operator: OperatorSpec,
    ) -> Result<Self, DslError> {
        let masks = MaskPair::new(
            Mask::from_elements(horizon, source)?,
            Mask::from_elements(horizon, target)?,
        )?;
        Ok(Self { masks, operator })
    }

    pub fn horizon(&self) -> usize {
        self.masks.horizon()
    }

    pub fn masks(&self) -> &MaskPair {
        &self.masks
    }

    pub fn source(&self) -> &Mask {
        self.masks.source()
    }

    pub fn target(&self) -> &Mask {
        self.masks.target()
    }

    pub fn operator(&self) -> OperatorSpec {
        self.operator
    }

    pub fn with_operator(&self, operator: OperatorSpec) -> Self {
        Self {
            masks: self.masks.clone(),
            operator,
        }
    }

    pub fn validate(&self) -> Result<(), Rejection> {
        validate(self)
    }

    pub fn is_valid(&self) -> bool {
        validate(self).is_ok()
    }

    pub fn has_pattern(&self, pattern: &Pattern) -> bool {
        has_pattern(self, pattern)
    }
}

/// Applies the loss rejection protocol.
///
/// Checks run in a fixed order (state in source, nonempty target, horizon
/// range) so the reported reason is deterministic.
pub fn validate(candidate: &LossCandidate) -> Result<(), Rejection> {
    if candidate.source().count(ElementKind::State) == 0 {
        return Err(Rejection::NoStateInSource);
    }
    if candidate.target().is_empty() {
        return Err(Rejection::EmptyTarget);
    }
    let k = candidate.horizon();
    if !(MIN_HORIZON..=MAX_HORIZON).contains(&k) {
        return Err(Rejection::HorizonOutOfRange(k));
    }
    Ok(())
}

/// Best candidate of the image-based search: `{s1,a1,a2,a3} -> {r0,r1,s2,s3}`.
pub fn a2_winner() -> LossCandidate {
    use ElementRef as E;
    LossCandidate::from_elements(
        3,
        &[E::state(1), E::action(1), E::action(2), E::action(3)],
        &[E::reward(0), E::reward(1), E::state(2), E::state(3)],
        OperatorSpec::MSE,
    )
    .expect("static element lists fit horizon 3")
}

/// Best candidate of the vector-based search (horizon 9).
pub fn a2_winner_v() -> LossCandidate {
    use ElementRef as E;
    LossCandidate::from_elements(
        9,
        &[
            E::state(0),
            E::action(0),
            E::action(1),
            E::state(2),
            E::action(2),
            E::action(3),
            E::reward(3),
            E::action(4),
            E::reward(4),
            E::action(5),
            E::action(7),
            E::state(8),
            E::action(8),
            E::reward(8),
        ],
        &[
            E::state(1),
            E::state(3),
            E::action(4),
            E::state(6),
            E::state(9),
        ],
        OperatorSpec::MSE,
    )
    .expect("static element lists fit horizon 9")
}

/// `n_operators * sum_{k=1}^{k_max} 2^(6k+6)`, computed exactly.
pub fn search_space_size(k_max: u32, n_operators: u32) -> BigUint {
    let mut total = BigUint::from(0u32);
    for k in 1..=k_max {
        total += BigUint::from(1u32) << (6 * k + 6);
    }
    total * n_operators
}

/// A source/target template whose presence is tested statistically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub name: String,
    pub source: BTreeSet<ElementRef>,
    pub target: BTreeSet<ElementRef>,
}

impl Pattern {
    pub fn new(name: &str, source: &[ElementRef], target: &[ElementRef]) -> Self {
        Self {
            name: name.to_string(),
            source: source.iter().copied().collect(),
            target: target.iter().copied().collect(),
        }
    }

    pub fn forward_dynamics() -> Self {
        use ElementRef as E;
        Self::new(
            "forward dynamics",
            &[E::state(0), E::action(0)],
            &[E::state(1)],
        )
    }

    pub fn inverse_dynamics() -> Self {
        use ElementRef as E;
        Self::new(
            "inverse dynamics",
            &[E::action(0), E::state(1)],
            &[E::state(0)],
        )
    }

    pub fn reward_prediction() -> Self {
        use ElementRef as E;
        Self::new(
            "reward prediction",
            &[E::state(0), E::action(0)],
            &[E::reward(0)],
        )
    }

    pub fn action_inference() -> Self {
        use ElementRef as E;
        Self::new(
            "action inference",
            &[E::state(0), E::state(1)],
            &[E::action(0)],
        )
    }

    pub fn state_reconstruction() -> Self {
        use ElementRef as E;
        Self::new("state reconstruction", &[E::state(0)], &[E::state(0)])
    }

    /// The five typical patterns, in reporting order.
    pub fn builtin() -> Vec<Pattern> {
        vec![
            Self::forward_dynamics(),
            Self::inverse_dynamics(),
            Self::reward_prediction(),
            Self::action_inference(),
            Self::state_reconstruction(),
        ]
    }
}

/// True iff the pattern's source and target are subsets of the candidate's.
/// Elements past the candidate's horizon are simply absent.
pub fn has_pattern(candidate: &LossCandidate, pattern: &Pattern) -> bool {
    pattern
        .source
        .iter()
        .all(|&e| candidate.source().contains(e))
        && pattern
            .target
            .iter()
            .all(|&e| candidate.target().contains(e))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error("mask length {len} is not a positive multiple of 3")]
    MaskLength { len: usize },
    #[error("source mask has {source_len} bits but target mask has {target_len}")]
    MaskPairLength {
        source_len: usize,
        target_len: usize,
    },
    #[error("element {element} lies beyond horizon {horizon}")]
    OffsetOutOfRange { element: ElementRef, horizon: usize },
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("invalid candidate: {0}")]
    Invalid(#[from] Rejection),
}

impl fmt::Display for LossCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |mask: &Mask| {
            mask.elements()
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(
            f,
            "src:{{{}}} tgt:{{{}}} op:{} k:{}",
            join(self.source()),
            join(self.target()),
            self.operator,
            self.horizon()
        )
    }
}

impl FromStr for LossCandidate {
    type Err = DslError;

    /// Parses the canonical text form. Does not apply the rejection
    /// protocol; use [`parse_valid`] for that.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        Parser { text, pos: 0 }.candidate()
    }
}

/// Parses and then validates, forwarding the rejection reason.
pub fn parse_valid(text: &str) -> Result<LossCandidate, DslError> {
    let candidate: LossCandidate = text.parse()?;
    candidate.validate()?;
    Ok(candidate)
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn error<T>(&self, message: impl Into<String>) -> Result<T, DslError> {
        Err(DslError::Parse {
            position: self.pos,
            message: message.into(),
        })
    }

    fn rest(&self) -> &str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.text.len() - trimmed.len();
    }

    fn expect(&mut self, token: &str) -> Result<(), DslError> {
        if self.rest().starts_with(token) {
            self.pos += token.len();
            Ok(())
        } else {
            self.error(format!("expected `{token}`"))
        }
    }

    fn number(&mut self) -> Result<usize, DslError> {
        let digits = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            return self.error("expected a non-negative integer");
        }
        let value = self.rest()[..digits].parse::<usize>();
        match value {
            Ok(v) if v <= 1_000 => {
                self.pos += digits;
                Ok(v)
            }
            _ => self.error("integer too large"),
        }
    }

    fn element_set(&mut self) -> Result<Vec<(usize, ElementRef)>, DslError> {
        self.expect("{")?;
        let mut out = Vec::new();
        self.skip_ws();
        if self.rest().starts_with('}') {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            self.skip_ws();
            let at = self.pos;
            let kind = match self.rest().chars().next() {
                Some('s') => ElementKind::State,
                Some('a') => ElementKind::Action,
                Some('r') => ElementKind::Reward,
                _ => return self.error("expected element `s<i>`, `a<i>` or `r<i>`"),
            };
            self.pos += 1;
            let offset = self.number()?;
            out.push((at, ElementRef { kind, offset }));
            self.skip_ws();
            match self.rest().chars().next() {
                Some(',') => self.pos += 1,
                Some('}') => {
                    self.pos += 1;
                    return Ok(out);
                }
                _ => return self.error("expected `,` or `}`"),
            }
        }
    }

    fn candidate(mut self) -> Result<LossCandidate, DslError> {
        self.skip_ws();
        self.expect("src:")?;
        let source = self.element_set()?;
        self.skip_ws();
        self.expect("tgt:")?;
        let target = self.element_set()?;
        self.skip_ws();
        self.expect("op:")?;
        let op_start = self.pos;
        let op_len = self
            .rest()
            .find(char::is_whitespace)
            .unwrap_or(self.rest().len());
        let op_text = &self.rest()[..op_len];
        let operator = match op_text.parse::<OperatorSpec>() {
            Ok(op) => op,
            Err(_) => return self.error(format!("unknown operator `{op_text}`")),
        };
        self.pos = op_start + op_len;
        self.skip_ws();
        self.expect("k:")?;
        let horizon = self.number()?;
        self.skip_ws();
        if !self.rest().is_empty() {
            return self.error("trailing input");
        }
        for (at, e) in source.iter().chain(target.iter()) {
            if e.offset > horizon {
                return Err(DslError::Parse {
                    position: *at,
                    message: format!("element {e} lies beyond horizon {horizon}"),
                });
            }
        }
        let source: Vec<_> = source.into_iter().map(|(_, e)| e).collect();
        let target: Vec<_> = target.into_iter().map(|(_, e)| e).collect();
        LossCandidate::from_elements(horizon, &source, &target, operator)
    }
}
