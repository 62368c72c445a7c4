use std::collections::HashSet;

/// Distinct contiguous character substrings of `word` with length in
/// `nmin..=nmax`, ordered by length and then by position.
///
/// A substring equal to the whole word is included when its length falls in
/// range: `char_ngrams("Good", 3, 4)` is `["Goo", "ood", "Good"]`. The word's
/// own vector lives in the vocabulary table, not in this set.
pub fn char_ngrams(word: &str, nmin: usize, nmax: usize) -> Vec<String> {
    char_ngrams_with(word, nmin, nmax, false)
}

/// Like [`char_ngrams`], optionally wrapping the word in `<` and `>` first
/// (the convention of common pretrained subword models).
pub fn char_ngrams_with(word: &str, nmin: usize, nmax: usize, bracketed: bool) -> Vec<String> {
    if nmin == 0 || nmax < nmin {
        return Vec::new();
    }
    let chars: Vec<char> = if bracketed {
        std::iter::once('<')
            .chain(word.chars())
            .chain(std::iter::once('>'))
            .collect()
    } else {
        word.chars().collect()
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for n in nmin..=nmax.min(chars.len()) {
        for window in chars.windows(n) {
            let gram: String = window.iter().collect();
            if seen.insert(gram.clone()) {
                out.push(gram);
            }
        }
    }
    out
}
