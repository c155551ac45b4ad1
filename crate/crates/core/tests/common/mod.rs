#![allow(dead_code)]

use std::io::{self, Read};

/// Expected `(gender, number) -> (tokens, types)` of [`spanish_fixture`].
pub const SPANISH_CELLS: &[(&str, &str, u64, u64)] = &[
    ("Fem", "Plur", 50, 1),
    ("Fem", "Sing", 40, 1),
    ("Masc", "Plur", 150, 1),
    ("Masc", "Sing", 200, 2),
    ("∅", "Sing", 40, 1),
];

fn token(id: usize, lemma: &str, upos: &str, feats: &str) -> String {
    format!("{id}\t{lemma}\t{lemma}\t{upos}\t_\t{feats}\t0\troot\t_\t_\n")
}

/// 200 sentences whose noun cells are fixed by the sentence index.
///
/// Every sentence: one `gato`/`leon` [Masc,Sing], one [Fem,Plur] `gata` when
/// `s % 4 == 0` else `perro` [Masc,Plur], a verb, and a fourth token chosen by
/// `s % 5`: `mesa` [Fem,Sing], `amigo` without gender [Sing], or a multiword
/// range followed by a determiner.
pub fn spanish_fixture() -> String {
    let mut out = String::new();
    for s in 0..200 {
        out.push_str(&format!("# sent_id = {s}\n# text = frase {s}\n"));
        let masc = if s % 2 == 0 { "gato" } else { "leon" };
        out.push_str(&token(1, masc, "NOUN", "Gender=Masc|Number=Sing"));
        if s % 4 == 0 {
            out.push_str(&token(2, "gata", "NOUN", "Gender=Fem|Number=Plur"));
        } else {
            out.push_str(&token(2, "perro", "NOUN", "Gender=Masc|Number=Plur"));
        }
        out.push_str(&token(3, "correr", "VERB", "Mood=Ind|Number=Sing"));
        match s % 5 {
            0 => out.push_str(&token(4, "mesa", "NOUN", "Gender=Fem|Number=Sing")),
            1 => out.push_str(&token(4, "amigo", "NOUN", "Number=Sing")),
            _ => {
                out.push_str("4-5\tdel\t_\t_\t_\t_\t_\t_\t_\t_\n");
                out.push_str(&token(4, "de", "ADP", "_"));
                out.push_str(&token(5, "el", "DET", "Gender=Masc|Number=Sing"));
            }
        }
        out.push('\n');
    }
    out
}

/// English-style fixture: number only, 60 singular and 20 plural nouns.
pub fn english_fixture() -> String {
    let mut out = String::new();
    for s in 0..40 {
        out.push_str(&format!("# sent_id = en{s}\n"));
        out.push_str(&token(1, "dog", "NOUN", "Number=Sing"));
        if s % 2 == 0 {
            out.push_str(&token(2, "cat", "NOUN", "Number=Plur"));
        } else {
            out.push_str(&token(2, "cat", "NOUN", "Number=Sing"));
        }
        out.push_str(&token(3, "run", "VERB", "_"));
        out.push('\n');
    }
    out
}

/// Synthetic CONLL-U of at least `bytes` bytes produced on the fly.
pub struct SyntheticCorpus {
    remaining: usize,
    sentence: usize,
    buf: Vec<u8>,
    pos: usize,
    lemmas: usize,
}

impl SyntheticCorpus {
    pub fn new(bytes: usize, lemmas: usize) -> Self {
        Self {
            remaining: bytes,
            sentence: 0,
            buf: Vec::new(),
            pos: 0,
            lemmas,
        }
    }

    fn refill(&mut self) {
        const GENDERS: [&str; 3] = ["Masc", "Fem", "Neut"];
        const NUMBERS: [&str; 2] = ["Sing", "Plur"];
        let s = self.sentence;
        self.sentence += 1;
        let mut text = format!("# sent_id = {s}\n");
        for i in 0..12usize {
            let h = (s.wrapping_mul(2654435761) ^ i.wrapping_mul(40503)) % 1_000_003;
            let lemma = h % self.lemmas;
            let upos = if i % 3 == 2 { "VERB" } else { "NOUN" };
            let feats = format!("Gender={}|Number={}", GENDERS[lemma % 3], NUMBERS[(h / 7) % 2]);
            text.push_str(&format!(
                "{}\tw{lemma}\tlemma{lemma}\t{upos}\t_\t{feats}\t0\tdep\t_\t_\n",
                i + 1
            ));
        }
        text.push('\n');
        self.buf = text.into_bytes();
        self.pos = 0;
    }
}

impl Read for SyntheticCorpus {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.pos == self.buf.len() {
            if self.remaining == 0 {
                return Ok(0);
            }
            self.refill();
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        self.remaining = self.remaining.saturating_sub(n);
        Ok(n)
    }
}

/// Peak resident set size of this process in KiB, when available.
pub fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find(|l| l.starts_with("VmHWM:"))?
        .split_whitespace()
        .nth(1)?
        .parse()
        .ok()
}
