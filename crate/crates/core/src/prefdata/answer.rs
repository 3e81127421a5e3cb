//! The standardized pairwise answer: `<subject> X is better than <subject> Y`.

use std::fmt;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SubjectKind {
    Image,
    Video,
    Response,
}

impl SubjectKind {
    pub const ALL: [SubjectKind; 3] = [SubjectKind::Image, SubjectKind::Video, SubjectKind::Response];

    pub fn as_str(self) -> &'static str {
        match self {
            SubjectKind::Image => "image",
            SubjectKind::Video => "video",
            SubjectKind::Response => "response",
        }
    }

    fn parse_word(word: &str) -> Option<SubjectKind> {
        SubjectKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(word))
    }
}

impl fmt::Display for SubjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParsedAnswer {
    pub subject: SubjectKind,
    pub winner: u64,
    pub loser: u64,
}

fn parse_index(tok: &str) -> Option<u64> {
    if tok.is_empty() || !tok.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    tok.parse().ok().filter(|&i| i >= 1)
}

/// Parses an answer sentence. Case-insensitive; any run of whitespace counts
/// as a single separator.
pub fn parse_pairwise_answer(text: &str) -> Result<ParsedAnswer> {
    let bad = || Error::UnrecognizedFormat(text.to_string());
    if text.contains(['\n', '\r']) {
        return Err(bad());
    }
    let toks: Vec<&str> = text.split_whitespace().collect();
    let [s1, i, is, better, than, s2, j] = toks[..] else {
        return Err(bad());
    };
    let phrase_ok = is.eq_ignore_ascii_case("is")
        && better.eq_ignore_ascii_case("better")
        && than.eq_ignore_ascii_case("than");
    if !phrase_ok {
        return Err(bad());
    }
    let (Some(first), Some(second)) = (SubjectKind::parse_word(s1), SubjectKind::parse_word(s2)) else {
        return Err(bad());
    };
    let (Some(winner), Some(loser)) = (parse_index(i), parse_index(j)) else {
        return Err(bad());
    };
    if first != second {
        return Err(Error::SubjectMismatch {
            first: first.to_string(),
            second: second.to_string(),
        });
    }
    if winner == loser {
        return Err(Error::IndexClash(winner));
    }
    Ok(ParsedAnswer {
        subject: first,
        winner,
        loser,
    })
}

/// Canonical lowercase answer sentence.
pub fn format_pairwise_answer(subject: SubjectKind, winner: u64, loser: u64) -> Result<String> {
    if winner == loser {
        return Err(Error::IndexClash(winner));
    }
    if winner == 0 || loser == 0 {
        return Err(Error::InvalidRange("answer indices start at 1".into()));
    }
    Ok(format!("{subject} {winner} is better than {subject} {loser}"))
}
