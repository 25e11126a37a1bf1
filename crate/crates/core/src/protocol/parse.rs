//! Extraction of final answers and reflector scores from raw model text.
//!
//! Both parsers are total: any input yields a value, failures surface as
//! `Answer::Abstain` or the missing weight `-1`.

use crate::model::{Answer, Problem, MISSING_WEIGHT};
use regex::Regex;
use std::sync::OnceLock;

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)FINAL[_ ]ANSWER\s*[:=]?").unwrap())
}

fn answer_is_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\banswer\s+is\s*:?\s*(?:option\s+)?").unwrap()
    })
}

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[\s(\[{]*([A-Za-z][0-9]{0,2})\b").unwrap())
}

fn score_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)FINAL[_ ]SCORE").unwrap())
}

fn score_value_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*[:=]?\s*<?\s*([+-]?[0-9]+(?:\.[0-9]+)?)").unwrap())
}

/// Strips markdown emphasis, code ticks, math delimiters and LaTeX-escaped
/// underscores so marker matching sees plain text.
fn clean_line(line: &str) -> String {
    line.replace("\\_", "_")
        .chars()
        .filter(|c| !matches!(c, '*' | '`' | '$'))
        .collect()
}

/// Maps an answer token (`D`, `D4`, or an exact option code) to the option code.
fn map_option_token(token: &str, p: &Problem) -> Option<String> {
    if let Some(o) = p.options.iter().find(|o| o.code == token) {
        return Some(o.code.clone());
    }
    let mut chars = token.chars();
    let letter = chars.next()?;
    let digits: String = chars.collect();
    let index = (letter.to_ascii_uppercase() as usize).checked_sub('A' as usize)?;
    if index >= p.num_options() || !letter.is_ascii_alphabetic() {
        return None;
    }
    if digits.is_empty() {
        // lowercase single letters are too often ordinary words ("a")
        return letter.is_ascii_uppercase().then(|| p.options[index].code.clone());
    }
    if digits.parse::<usize>().ok()? == index + 1 {
        return Some(p.options[index].code.clone());
    }
    p.options
        .iter()
        .find(|o| o.code.eq_ignore_ascii_case(token))
        .map(|o| o.code.clone())
}

/// Option named at the start of `text`, either as a code token or by its
/// exact option text.
fn option_from_text(text: &str, p: &Problem) -> Option<String> {
    if let Some(code) = token_re()
        .captures(text)
        .and_then(|c| map_option_token(c.get(1)?.as_str(), p))
    {
        return Some(code);
    }
    let t = text.trim().trim_end_matches('.').trim();
    p.options.iter().find(|o| o.text.trim() == t).map(|o| o.code.clone())
}

fn free_text(text: &str) -> Option<String> {
    let t = text.trim().trim_start_matches(':').trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// Finds the solver's final answer, scanning bottom-up with three shapes in
/// priority order: a `FINAL_ANSWER:` marker, a bare option code on one of
/// the last non-empty lines, and "The answer is <code>".
pub fn parse_final_answer(raw: &str, p: &Problem) -> Answer {
    let lines: Vec<String> = raw.lines().map(clean_line).collect();

    for line in lines.iter().rev() {
        if let Some(m) = marker_re().find_iter(line).last() {
            let rest = &line[m.end()..];
            if p.is_free_form() {
                if let Some(t) = free_text(rest) {
                    return Answer::FreeForm(t);
                }
            } else if let Some(code) = option_from_text(rest, p) {
                return Answer::Option(code);
            }
        }
    }

    if !p.is_free_form() {
        for line in lines.iter().rev().filter(|l| !l.trim().is_empty()).take(2) {
            let bare = line
                .trim()
                .trim_matches(|c: char| matches!(c, '.' | '(' | ')' | '[' | ']' | ':'))
                .trim();
            if let Some(code) = map_option_token(bare, p) {
                return Answer::Option(code);
            }
        }
    }

    for line in lines.iter().rev() {
        if let Some(m) = answer_is_re().find_iter(line).last() {
            let rest = &line[m.end()..];
            if p.is_free_form() {
                if let Some(t) = free_text(rest.trim_end().trim_end_matches('.')) {
                    return Answer::FreeForm(t);
                }
            } else if let Some(code) = token_re()
                .captures(rest)
                .and_then(|c| map_option_token(c.get(1)?.as_str(), p))
            {
                return Answer::Option(code);
            }
        }
    }

    Answer::Abstain
}

/// Reads the reflector's weight from the last `FINAL_SCORE:` line. Values
/// outside {0, 1, 2}, malformed values and a missing marker all yield -1.
pub fn parse_final_score(raw: &str) -> i8 {
    let Some(line) = raw
        .lines()
        .rev()
        .map(clean_line)
        .find(|l| score_re().is_match(l))
    else {
        return MISSING_WEIGHT;
    };
    let m = score_re().find_iter(&line).last().expect("line matched");
    score_value_re()
        .captures(&line[m.end()..])
        .and_then(|c| c[1].parse::<i64>().ok())
        .filter(|v| (0..=2).contains(v))
        .map_or(MISSING_WEIGHT, |v| v as i8)
}
