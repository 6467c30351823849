//! Class-based tokenization and verbalization.
//!
//! Text is NFC-normalized, segmented into typed tokens, and then verbalized
//! so that numbers, currency amounts and units are spelled out as the words
//! a speech recognizer would emit. Every verbalized word keeps the character
//! span of the token it came from, which lets slot spans found on normalized
//! text be mapped back onto the original query.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Upper bound (exclusive) of integers that can be verbalized.
pub const MAX_VERBALIZED: i64 = 1_000_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Word,
    NumberLiteral,
    Currency,
    Unit,
    Punct,
    Symbol,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            TokenKind::Word => "Word",
            TokenKind::NumberLiteral => "NumberLiteral",
            TokenKind::Currency => "Currency",
            TokenKind::Unit => "Unit",
            TokenKind::Punct => "Punct",
            TokenKind::Symbol => "Symbol",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Half-open character range into [`NormalizedText::original`].
    pub span: Range<usize>,
    pub kind: TokenKind,
}

impl Token {
    fn new(text: impl Into<String>, span: Range<usize>, kind: TokenKind) -> Self {
        Token {
            text: text.into(),
            span,
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedText {
    /// NFC form of the input; token spans index its characters.
    pub original: String,
    pub tokens: Vec<Token>,
}

impl NormalizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    /// Token texts joined by single spaces.
    pub fn joined(&self) -> String {
        self.texts().join(" ")
    }

    /// Character span covered by the tokens in `range` (min start, max end).
    pub fn char_span(&self, range: Range<usize>) -> Option<Range<usize>> {
        let tokens = self.tokens.get(range)?;
        let start = tokens.iter().map(|t| t.span.start).min()?;
        let end = tokens.iter().map(|t| t.span.end).max()?;
        Some(start..end)
    }

    /// Substring of the original text for a character span.
    pub fn substring(&self, span: &Range<usize>) -> String {
        self.original
            .chars()
            .skip(span.start)
            .take(span.end.saturating_sub(span.start))
            .collect()
    }
}

/// Tokenize then verbalize.
pub fn normalize(text: &str) -> NormalizedText {
    verbalize(&tokenize(text))
}

/// Normalized token texts of `text`, joined by single spaces.
pub fn normalize_string(text: &str) -> String {
    normalize(text).joined()
}

fn is_currency(c: char) -> bool {
    matches!(c, '$' | '€' | '£')
}

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '’')
}

const SYMBOLS: &str = "%&+@#*/=<>^~|\\_`";

pub fn tokenize(text: &str) -> NormalizedText {
    let original: String = text.nfc().collect();
    let chars: Vec<char> = original.chars().collect();
    let mut tokens = Vec::new();
    let n = chars.len();
    let mut i = 0;
    while i < n {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphabetic() {
            let start = i;
            while i < n {
                let ch = chars[i];
                if ch.is_alphanumeric() {
                    i += 1;
                } else if is_apostrophe(ch)
                    && i + 1 < n
                    && chars[i + 1].is_alphabetic()
                    && chars[i - 1].is_alphabetic()
                {
                    i += 1;
                } else {
                    break;
                }
            }
            let word: String = chars[start..i]
                .iter()
                .map(|&ch| if ch == '’' { '\'' } else { ch })
                .collect::<String>()
                .to_lowercase();
            tokens.push(Token::new(word, start..i, TokenKind::Word));
        } else if c.is_ascii_digit() {
            let start = i;
            let mut digits = String::new();
            while i < n && chars[i].is_ascii_digit() {
                digits.push(chars[i]);
                i += 1;
            }
            // thousands separators: ",ddd" groups
            while i < n && chars[i] == ',' && has_digit_group(&chars, i + 1) {
                digits.extend(&chars[i + 1..i + 4]);
                i += 4;
            }
            if i + 1 < n && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                digits.push('.');
                i += 1;
                while i < n && chars[i].is_ascii_digit() {
                    digits.push(chars[i]);
                    i += 1;
                }
            } else if let Some(suffix) = ordinal_suffix_at(&chars, i) {
                digits.push_str(&suffix);
                i += 2;
            }
            tokens.push(Token::new(digits, start..i, TokenKind::NumberLiteral));
        } else if is_currency(c) {
            tokens.push(Token::new(c.to_string(), i..i + 1, TokenKind::Currency));
            i += 1;
        } else if c == '°' {
            let unit_letter = chars
                .get(i + 1)
                .map(|ch| ch.to_ascii_lowercase())
                .filter(|ch| matches!(ch, 'c' | 'f'));
            let bounded = chars.get(i + 2).is_none_or(|ch| !ch.is_alphanumeric());
            match unit_letter {
                Some(letter) if bounded => {
                    tokens.push(Token::new(format!("°{letter}"), i..i + 2, TokenKind::Unit));
                    i += 2;
                }
                _ => {
                    tokens.push(Token::new("°", i..i + 1, TokenKind::Unit));
                    i += 1;
                }
            }
        } else {
            let kind = if SYMBOLS.contains(c) || is_other_symbol(c) {
                TokenKind::Symbol
            } else {
                TokenKind::Punct
            };
            tokens.push(Token::new(c.to_string(), i..i + 1, kind));
            i += 1;
        }
    }
    NormalizedText { original, tokens }
}

fn has_digit_group(chars: &[char], at: usize) -> bool {
    chars.len() >= at + 3
        && chars[at..at + 3].iter().all(|c| c.is_ascii_digit())
        && chars.get(at + 3).is_none_or(|c| !c.is_ascii_digit())
}

fn ordinal_suffix_at(chars: &[char], at: usize) -> Option<String> {
    if at + 2 > chars.len() {
        return None;
    }
    let suffix: String = chars[at..at + 2].iter().collect::<String>().to_lowercase();
    let bounded = chars.get(at + 2).is_none_or(|c| !c.is_alphanumeric());
    (bounded && matches!(suffix.as_str(), "st" | "nd" | "rd" | "th")).then_some(suffix)
}

fn is_other_symbol(c: char) -> bool {
    // currency-like and math symbols outside the ASCII range
    !c.is_ascii() && !c.is_alphanumeric() && !is_general_punctuation(c)
}

fn is_general_punctuation(c: char) -> bool {
    matches!(c, '\u{2010}'..='\u{2027}' | '\u{2030}'..='\u{205E}' | '«' | '»' | '¡' | '¿')
}

const ONES: [&str; 20] = [
    "zero",
    "one",
    "two",
    "three",
    "four",
    "five",
    "six",
    "seven",
    "eight",
    "nine",
    "ten",
    "eleven",
    "twelve",
    "thirteen",
    "fourteen",
    "fifteen",
    "sixteen",
    "seventeen",
    "eighteen",
    "nineteen",
];

const TENS: [&str; 10] = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];

const SCALES: [(i64, &str); 3] = [
    (1_000_000_000, "billion"),
    (1_000_000, "million"),
    (1_000, "thousand"),
];

/// English cardinal words for `n` in `[0, 10^12)`: American scale, no
/// hyphens, no "and".
pub fn verbalize_number(n: i64) -> Result<Vec<String>> {
    if !(0..MAX_VERBALIZED).contains(&n) {
        return Err(Error::Range(format!(
            "{n} is outside the verbalizable range [0, {MAX_VERBALIZED})"
        )));
    }
    if n == 0 {
        return Ok(vec!["zero".to_string()]);
    }
    let mut words = Vec::new();
    let mut rest = n;
    for (scale, name) in SCALES {
        let group = rest / scale;
        if group > 0 {
            below_thousand(group, &mut words);
            words.push(name);
        }
        rest %= scale;
    }
    if rest > 0 {
        below_thousand(rest, &mut words);
    }
    Ok(words.into_iter().map(str::to_string).collect())
}

fn below_thousand(n: i64, out: &mut Vec<&'static str>) {
    let hundreds = n / 100;
    let rest = n % 100;
    if hundreds > 0 {
        out.push(ONES[hundreds as usize]);
        out.push("hundred");
    }
    if rest >= 20 {
        out.push(TENS[(rest / 10) as usize]);
        if rest % 10 > 0 {
            out.push(ONES[(rest % 10) as usize]);
        }
    } else if rest > 0 {
        out.push(ONES[rest as usize]);
    }
}

/// Ordinal words: the cardinal form with its last word turned ordinal.
pub fn verbalize_ordinal(n: i64) -> Result<Vec<String>> {
    let mut words = verbalize_number(n)?;
    if let Some(last) = words.last_mut() {
        *last = ordinal_of_cardinal_word(last);
    }
    Ok(words)
}

pub(crate) fn ordinal_of_cardinal_word(word: &str) -> String {
    match word {
        "one" => "first".into(),
        "two" => "second".into(),
        "three" => "third".into(),
        "five" => "fifth".into(),
        "eight" => "eighth".into(),
        "nine" => "ninth".into(),
        "twelve" => "twelfth".into(),
        w if w.ends_with('y') => format!("{}ieth", &w[..w.len() - 1]),
        w => format!("{w}th"),
    }
}

const DIGIT_WORDS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

/// Words for a numeric literal as produced by the tokenizer: integers,
/// decimals ("23.5") and digit ordinals ("3rd").
fn number_literal_words(literal: &str) -> Vec<String> {
    let lower = literal.to_lowercase();
    for suffix in ["st", "nd", "rd", "th"] {
        if let Some(digits) = lower.strip_suffix(suffix) {
            if let Ok(n) = digits.parse::<i64>() {
                if let Ok(words) = verbalize_ordinal(n) {
                    return words;
                }
            }
            return spell_digits(digits);
        }
    }
    let (int_part, frac_part) = match lower.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (lower.as_str(), None),
    };
    let mut words = match int_part.parse::<i64>() {
        Ok(n) if n < MAX_VERBALIZED => verbalize_number(n).unwrap_or_default(),
        _ => spell_digits(int_part),
    };
    if let Some(frac) = frac_part {
        words.push("point".to_string());
        words.extend(spell_digits(frac));
    }
    words
}

fn spell_digits(digits: &str) -> Vec<String> {
    digits
        .chars()
        .filter_map(|c| c.to_digit(10))
        .map(|d| DIGIT_WORDS[d as usize].to_string())
        .collect()
}

fn currency_word(symbol: &str, singular: bool) -> &'static str {
    match (symbol, singular) {
        ("$", true) => "dollar",
        ("$", false) => "dollars",
        ("€", true) => "euro",
        ("€", false) => "euros",
        ("£", true) => "pound",
        _ => "pounds",
    }
}

fn unit_words(unit: &str, singular: bool) -> Vec<&'static str> {
    let degrees = if singular { "degree" } else { "degrees" };
    match unit {
        "°c" => vec![degrees, "celsius"],
        "°f" => vec![degrees, "fahrenheit"],
        _ => vec![degrees],
    }
}

fn symbol_word(symbol: &str) -> Option<&'static str> {
    match symbol {
        "%" => Some("percent"),
        "&" => Some("and"),
        "+" => Some("plus"),
        "@" => Some("at"),
        _ => None,
    }
}

fn is_one(token: &Token) -> bool {
    token.kind == TokenKind::NumberLiteral && token.text == "1"
}

/// Spell out numbers, amounts and units; drop punctuation.
///
/// A currency symbol directly followed by a number is emitted after the
/// number ("$25" -> "twenty five dollars"). Emitted words keep the span of
/// the token they were produced from.
pub fn verbalize(nt: &NormalizedText) -> NormalizedText {
    let mut out = Vec::with_capacity(nt.tokens.len());
    let tokens = &nt.tokens;
    let mut i = 0;
    while i < tokens.len() {
        let tok = &tokens[i];
        match tok.kind {
            TokenKind::Word => out.push(tok.clone()),
            TokenKind::NumberLiteral => {
                push_words(&mut out, number_literal_words(&tok.text), &tok.span);
            }
            TokenKind::Currency => {
                let next_number = tokens
                    .get(i + 1)
                    .filter(|t| t.kind == TokenKind::NumberLiteral);
                if let Some(number) = next_number {
                    push_words(&mut out, number_literal_words(&number.text), &number.span);
                    let word = currency_word(&tok.text, is_one(number));
                    out.push(Token::new(word, tok.span.clone(), TokenKind::Word));
                    i += 1;
                } else {
                    let singular = i > 0 && is_one(&tokens[i - 1]);
                    let word = currency_word(&tok.text, singular);
                    out.push(Token::new(word, tok.span.clone(), TokenKind::Word));
                }
            }
            TokenKind::Unit => {
                let singular = i > 0 && is_one(&tokens[i - 1]);
                for word in unit_words(&tok.text, singular) {
                    out.push(Token::new(word, tok.span.clone(), TokenKind::Word));
                }
            }
            TokenKind::Symbol => {
                if let Some(word) = symbol_word(&tok.text) {
                    out.push(Token::new(word, tok.span.clone(), TokenKind::Word));
                }
            }
            TokenKind::Punct => {}
        }
        i += 1;
    }
    NormalizedText {
        original: nt.original.clone(),
        tokens: out,
    }
}

fn push_words(out: &mut Vec<Token>, words: Vec<String>, span: &Range<usize>) {
    out.extend(
        words
            .into_iter()
            .map(|w| Token::new(w, span.clone(), TokenKind::Word)),
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(nt: &NormalizedText) -> Vec<&str> {
        nt.texts()
    }

    #[test]
    fn tokenize_sentence_with_punctuation() {
        let nt = tokenize("Set the kitchen lights!");
        assert_eq!(texts(&nt), vec!["set", "the", "kitchen", "lights", "!"]);
        assert_eq!(nt.tokens[4].kind, TokenKind::Punct);
        assert!(nt.tokens[..4].iter().all(|t| t.kind == TokenKind::Word));
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn tokenize_currency_amount() {
        let nt = tokenize("$25");
        assert_eq!(nt.tokens.len(), 2);
        assert_eq!(nt.tokens[0], Token::new("$", 0..1, TokenKind::Currency));
        assert_eq!(nt.tokens[1], Token::new("25", 1..3, TokenKind::NumberLiteral));
    }

    #[test]
    fn tokenize_temperature_unit() {
        let nt = tokenize("23°C");
        assert_eq!(nt.tokens[0], Token::new("23", 0..2, TokenKind::NumberLiteral));
        assert_eq!(nt.tokens[1], Token::new("°c", 2..4, TokenKind::Unit));
    }

    #[test]
    fn apostrophes_stay_and_hyphens_split() {
        let nt = tokenize("Lennon's well-known");
        assert_eq!(texts(&nt), vec!["lennon's", "well", "-", "known"]);
        assert_eq!(nt.tokens[2].kind, TokenKind::Punct);
    }

    #[test]
    fn numbers_with_separators_decimals_and_ordinals() {
        let nt = tokenize("1,000 people 23.5 3rd 7pm");
        assert_eq!(texts(&nt), vec!["1000", "people", "23.5", "3rd", "7", "pm"]);
        assert_eq!(nt.tokens[0].span, 0..5);
    }

    #[test]
    fn cardinal_words() {
        assert_eq!(verbalize_number(0).unwrap(), vec!["zero"]);
        assert_eq!(verbalize_number(65).unwrap(), vec!["sixty", "five"]);
        assert_eq!(
            verbalize_number(1700).unwrap(),
            vec!["one", "thousand", "seven", "hundred"]
        );
        assert_eq!(
            verbalize_number(2_000_013).unwrap(),
            vec!["two", "million", "thirteen"]
        );
        assert_eq!(
            verbalize_number(999_999_999_999).unwrap().len(),
            // nine hundred ninety nine, four times, plus three scale words
            4 * 4 + 3
        );
    }

    #[test]
    fn cardinal_range_errors() {
        assert!(matches!(verbalize_number(-1), Err(Error::Range(_))));
        assert!(matches!(verbalize_number(MAX_VERBALIZED), Err(Error::Range(_))));
    }

    #[test]
    fn ordinals() {
        assert_eq!(verbalize_ordinal(3).unwrap(), vec!["third"]);
        assert_eq!(verbalize_ordinal(21).unwrap(), vec!["twenty", "first"]);
        assert_eq!(verbalize_ordinal(40).unwrap(), vec!["fortieth"]);
        assert_eq!(verbalize_ordinal(100).unwrap(), vec!["one", "hundredth"]);
        assert_eq!(normalize_string("the 3rd floor"), "the third floor");
    }

    #[test]
    fn verbalize_currency() {
        let nt = normalize("$25");
        assert_eq!(nt.joined(), "twenty five dollars");
        assert_eq!(nt.tokens[0].span, 1..3);
        assert_eq!(nt.tokens[2].span, 0..1);
        assert_eq!(normalize_string("£1"), "one pound");
        assert_eq!(normalize_string("10€"), "ten euros");
    }

    #[test]
    fn verbalize_numbers_and_punctuation() {
        assert_eq!(normalize_string("set to 65"), "set to sixty five");
        assert_eq!(normalize_string("hello."), "hello");
        assert_eq!(
            normalize_string("23°C"),
            "twenty three degrees celsius"
        );
        assert_eq!(normalize_string("70 °F"), "seventy degrees fahrenheit");
        assert_eq!(normalize_string("50%"), "fifty percent");
        assert_eq!(normalize_string("0.05"), "zero point zero five");
    }

    #[test]
    fn nfc_is_applied() {
        // "e" + combining acute composes to a single character
        let nt = tokenize("cafe\u{301}");
        assert_eq!(nt.tokens[0].text, "café");
        assert_eq!(nt.tokens[0].span, 0..4);
    }

    #[test]
    fn substring_uses_character_offsets() {
        let nt = normalize("Set the temperature to 23°C in the living room");
        let span = nt.char_span(4..7).unwrap();
        assert_eq!(nt.substring(&span), "23°C");
    }

    proptest! {
        #[test]
        fn verbalize_is_idempotent(text in "[ a-zA-Z0-9$€£°%,.!?'-]{0,40}") {
            let once = normalize(&text);
            prop_assert_eq!(verbalize(&once), once);
        }

        #[test]
        fn token_spans_are_ordered_and_in_bounds(text in "\\PC{0,40}") {
            let nt = tokenize(&text);
            let len = nt.original.chars().count();
            let mut last_end = 0;
            for tok in &nt.tokens {
                prop_assert!(!tok.text.is_empty());
                prop_assert!(tok.span.start >= last_end);
                prop_assert!(tok.span.start < tok.span.end && tok.span.end <= len);
                if tok.kind == TokenKind::Word {
                    prop_assert_eq!(tok.text.to_lowercase(), tok.text.clone());
                }
                last_end = tok.span.end;
            }
        }

        #[test]
        fn number_literal_spans_survive_verbalization(text in "[ a-z0-9$.]{0,30}") {
            let tokenized = tokenize(&text);
            let verbalized = verbalize(&tokenized);
            let len = tokenized.original.chars().count();
            for tok in &verbalized.tokens {
                prop_assert!(tok.span.end <= len);
            }
            let mut numbers: Vec<_> = tokenized
                .tokens
                .iter()
                .filter(|t| t.kind == TokenKind::NumberLiteral)
                .map(|t| t.span.clone())
                .map(|s| (s.start, s.end))
                .collect();
            let mut covered: Vec<_> = verbalized.tokens.iter().map(|t| (t.span.start, t.span.end)).collect();
            covered.dedup();
            numbers.retain(|s| !covered.contains(s));
            prop_assert!(numbers.is_empty());
        }
    }
}
