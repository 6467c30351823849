//! Cardinal and ordinal number grammars over normalized tokens.

const UNITS: [&str; 20] = [
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

const TENS: [&str; 8] = [
    "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];

const SCALES: [(&str, i64); 3] = [
    ("billion", 1_000_000_000),
    ("million", 1_000_000),
    ("thousand", 1_000),
];

fn unit_value(word: &str) -> Option<i64> {
    UNITS.iter().position(|w| *w == word).map(|p| p as i64)
}

fn tens_value(word: &str) -> Option<i64> {
    TENS.iter().position(|w| *w == word).map(|p| 20 + 10 * p as i64)
}

fn scale_value(word: &str) -> Option<i64> {
    SCALES.iter().find(|(w, _)| *w == word).map(|(_, v)| *v)
}

pub(crate) fn is_number_word(word: &str) -> bool {
    unit_value(word).is_some()
        || tens_value(word).is_some()
        || scale_value(word).is_some()
        || word == "hundred"
}

fn below_hundred(words: &[&str], i: usize) -> Option<(i64, usize)> {
    let first = *words.get(i)?;
    if let Some(tens) = tens_value(first) {
        match words.get(i + 1).and_then(|w| unit_value(w)) {
            Some(u) if (1..10).contains(&u) => Some((tens + u, 2)),
            _ => Some((tens, 1)),
        }
    } else {
        unit_value(first).filter(|&u| u > 0).map(|u| (u, 1))
    }
}

fn below_thousand(words: &[&str], i: usize) -> Option<(i64, usize)> {
    let first = *words.get(i)?;
    if let Some(h) = unit_value(first).filter(|h| (1..10).contains(h)) {
        if words.get(i + 1) == Some(&"hundred") {
            return match below_hundred(words, i + 2) {
                Some((rest, len)) => Some((h * 100 + rest, 2 + len)),
                None => Some((h * 100, 2)),
            };
        }
    }
    below_hundred(words, i)
}

/// Longest cardinal-word number starting at `i`, as (value, token count).
pub(crate) fn cardinal_words(words: &[&str], i: usize) -> Option<(i64, usize)> {
    if words.get(i) == Some(&"zero") {
        return Some((0, 1));
    }
    let mut total = 0i64;
    let mut j = i;
    let mut last_scale = i64::MAX;
    while let Some((group, len)) = below_thousand(words, j) {
        let k = j + len;
        match words.get(k).and_then(|w| scale_value(w)) {
            Some(scale) if scale < last_scale => {
                total += group * scale;
                last_scale = scale;
                j = k + 1;
            }
            _ => {
                total += group;
                j = k;
                break;
            }
        }
    }
    (j > i).then_some((total, j - i))
}

fn digit_literal(word: &str) -> Option<f64> {
    let (int, frac) = match word.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (word, None),
    };
    let digits_only = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits_only(int) || frac.is_some_and(|f| !digits_only(f)) {
        return None;
    }
    word.parse().ok()
}

/// Longest number (digits or words, optional "minus", optional "point"
/// decimals) starting at `i`.
pub(crate) fn number_at(words: &[&str], i: usize) -> Option<(f64, usize)> {
    if words.get(i) == Some(&"minus") {
        return number_at(words, i + 1).map(|(v, len)| (-v, len + 1));
    }
    let first = *words.get(i)?;
    if let Some(v) = digit_literal(first) {
        return Some((v, 1));
    }
    let (int, mut len) = cardinal_words(words, i)?;
    let mut value = int as f64;
    if words.get(i + len) == Some(&"point") {
        let mut digits = String::new();
        let mut j = i + len + 1;
        while let Some(d) = words.get(j).and_then(|w| unit_value(w)).filter(|d| *d < 10) {
            digits.push(char::from(b'0' + d as u8));
            j += 1;
        }
        if !digits.is_empty() {
            value = format!("{int}.{digits}").parse().unwrap_or(value);
            len = j - i;
        }
    }
    Some((value, len))
}

/// Integer-valued number at `i`, digits or words.
pub(crate) fn integer_at(words: &[&str], i: usize) -> Option<(i64, usize)> {
    let (v, len) = number_at(words, i)?;
    (v.fract() == 0.0 && v >= 0.0).then_some((v as i64, len))
}

const ORDINAL_IRREGULAR: [(&str, &str); 7] = [
    ("first", "one"),
    ("second", "two"),
    ("third", "three"),
    ("fifth", "five"),
    ("eighth", "eight"),
    ("ninth", "nine"),
    ("twelfth", "twelve"),
];

/// The cardinal word an ordinal word ends in ("twentieth" -> "twenty").
pub(crate) fn cardinal_of_ordinal(word: &str) -> Option<String> {
    if let Some((_, c)) = ORDINAL_IRREGULAR.iter().find(|(o, _)| *o == word) {
        return Some(c.to_string());
    }
    let candidate = if let Some(stem) = word.strip_suffix("ieth") {
        format!("{stem}y")
    } else {
        word.strip_suffix("th")?.to_string()
    };
    is_number_word(&candidate).then_some(candidate)
}

fn digit_ordinal(word: &str) -> Option<i64> {
    let digits = ["st", "nd", "rd", "th"]
        .iter()
        .find_map(|s| word.strip_suffix(s))?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Ordinal at `i`: a digit ordinal ("3rd") or cardinal words ending in an
/// ordinal word ("twenty first").
pub(crate) fn ordinal_at(words: &[&str], i: usize) -> Option<(i64, usize)> {
    let first = *words.get(i)?;
    if let Some(v) = digit_ordinal(first) {
        return Some((v, 1));
    }
    let mut k = i;
    while let Some(word) = words.get(k) {
        if let Some(cardinal) = cardinal_of_ordinal(word) {
            let mut candidate: Vec<&str> = words[i..k].to_vec();
            candidate.push(&cardinal);
            return match cardinal_words(&candidate, 0) {
                Some((v, len)) if len == candidate.len() => Some((v, len)),
                _ => None,
            };
        }
        if !is_number_word(word) {
            return None;
        }
        k += 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn cardinals() {
        assert_eq!(cardinal_words(&words("sixty five"), 0), Some((65, 2)));
        assert_eq!(
            cardinal_words(&words("one thousand seven hundred"), 0),
            Some((1700, 4))
        );
        assert_eq!(
            cardinal_words(&words("one hundred thousand and"), 0),
            Some((100_000, 3))
        );
        assert_eq!(cardinal_words(&words("five stars"), 0), Some((5, 1)));
        assert_eq!(cardinal_words(&words("stars"), 0), None);
        assert_eq!(cardinal_words(&words("zero"), 0), Some((0, 1)));
    }

    #[test]
    fn numbers_with_sign_and_decimals() {
        assert_eq!(number_at(&words("minus five"), 0), Some((-5.0, 2)));
        assert_eq!(
            number_at(&words("twenty three point five degrees"), 0),
            Some((23.5, 4))
        );
        assert_eq!(number_at(&words("23.5"), 0), Some((23.5, 1)));
        assert_eq!(number_at(&words("3rd"), 0), None);
    }

    #[test]
    fn ordinals() {
        assert_eq!(ordinal_at(&words("third floor"), 0), Some((3, 1)));
        assert_eq!(ordinal_at(&words("twenty first"), 0), Some((21, 2)));
        assert_eq!(ordinal_at(&words("one hundredth"), 0), Some((100, 2)));
        assert_eq!(ordinal_at(&words("21st"), 0), Some((21, 1)));
        assert_eq!(ordinal_at(&words("twenty"), 0), None);
        assert_eq!(ordinal_at(&words("nineteenth"), 0), Some((19, 1)));
    }
}
