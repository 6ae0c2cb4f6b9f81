//! Word tokenization shared by corpus analysis and the built-in span scorer.
//!
//! A token is a maximal run of non-whitespace characters with leading and
//! trailing non-alphanumeric characters stripped. Runs that are entirely
//! punctuation produce no token.

/// A token with its byte range in the source string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub start: usize,
    pub end: usize,
    /// Lowercased surface form.
    pub norm: String,
    /// The whitespace run this token came from ended a sentence (`.`, `?`, `!`).
    pub ends_sentence: bool,
}

fn trim_punct(s: &str) -> (usize, &str) {
    let trimmed_front = s.trim_start_matches(|c: char| !c.is_alphanumeric());
    let offset = s.len() - trimmed_front.len();
    (offset, trimmed_front.trim_end_matches(|c: char| !c.is_alphanumeric()))
}

/// Iterates over word tokens without computing offsets.
pub fn words(s: &str) -> impl Iterator<Item = &str> {
    s.split_whitespace()
        .map(|w| trim_punct(w).1)
        .filter(|w| !w.is_empty())
}

/// Number of word tokens in `s`.
pub fn count_words(s: &str) -> usize {
    words(s).count()
}

/// Tokenizes `s`, keeping byte offsets and sentence boundaries.
pub fn tokenize(s: &str) -> Vec<Token> {
    let mut out: Vec<Token> = Vec::new();
    let mut run_start = None;
    for (i, c) in s.char_indices().chain(std::iter::once((s.len(), ' '))) {
        if c.is_whitespace() {
            if let Some(begin) = run_start.take() {
                push_run(&mut out, s, begin, i);
            }
        } else if run_start.is_none() {
            run_start = Some(i);
        }
    }
    out
}

fn push_run(out: &mut Vec<Token>, s: &str, begin: usize, end: usize) {
    let run = &s[begin..end];
    let ends_sentence = run.ends_with(['.', '?', '!']);
    let (offset, core) = trim_punct(run);
    if core.is_empty() {
        // a bare "." still closes the running sentence
        if ends_sentence {
            if let Some(last) = out.last_mut() {
                last.ends_sentence = true;
            }
        }
        return;
    }
    let start = begin + offset;
    out.push(Token {
        start,
        end: start + core.len(),
        norm: core.to_lowercase(),
        ends_sentence,
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_punctuation_and_keeps_offsets() {
        let s = "The drug (ribavirin) reduced mortality.";
        let toks = tokenize(s);
        let norms: Vec<_> = toks.iter().map(|t| t.norm.as_str()).collect();
        assert_eq!(norms, ["the", "drug", "ribavirin", "reduced", "mortality"]);
        for t in &toks {
            assert_eq!(s[t.start..t.end].to_lowercase(), t.norm);
        }
        assert!(toks[4].ends_sentence);
        assert!(!toks[3].ends_sentence);
    }

    #[test]
    fn inner_punctuation_survives() {
        assert_eq!(words("covid-19, U.S. o'neil").collect::<Vec<_>>(), ["covid-19", "U.S", "o'neil"]);
    }

    #[test]
    fn punctuation_only_runs_are_dropped() {
        let toks = tokenize("alpha - beta .  gamma");
        assert_eq!(toks.len(), 3);
        assert!(toks[1].ends_sentence);
        assert_eq!(count_words("  ... !! "), 0);
    }

    #[test]
    fn unicode_whitespace_and_letters() {
        let s = "café\u{00a0}naïve\u{2003}ok";
        assert_eq!(words(s).collect::<Vec<_>>(), ["café", "naïve", "ok"]);
        let toks = tokenize(s);
        assert_eq!(&s[toks[1].start..toks[1].end], "naïve");
    }
}
