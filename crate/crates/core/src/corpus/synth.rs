//! Synthetic ATC phraseology and a pseudo-acoustic symbol channel.
//!
//! Utterances are a callsign plus one of six instruction templates, with
//! every number already spoken as words. Each word spells out as a fixed
//! 2-4 symbol code from a 64-symbol inventory; a [`ChannelProfile`] then
//! corrupts the symbol stream with seeded substitutions, insertions and
//! deletions.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SYMBOL_COUNT: u32 = 64;
pub const UTTERANCES_PER_FILE: usize = 100;

const AIRLINES: [&str; 12] = [
    "american", "united", "delta", "southwest", "jetblue", "alaska", "spirit", "frontier", "cactus", "speedbird",
    "lufthansa", "skywest",
];

const DIGITS: [&str; 10] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "niner"];

const PHONETIC: [&str; 26] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliett", "kilo", "lima",
    "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey",
    "xray", "yankee", "zulu",
];

const CITIES: [&str; 16] = [
    "dallas", "boston", "washington", "potomac", "logan", "regional", "houston", "denver", "chicago", "atlanta",
    "kennedy", "newark", "memphis", "jacksonville", "indianapolis", "albuquerque",
];
const FACILITIES: [&str; 7] = ["tower", "ground", "departure", "approach", "center", "clearance", "delivery"];
const SIDES: [&str; 3] = ["left", "right", "center"];
const FIXES: [&str; 6] = ["bosco", "jaybe", "ranger", "texoma", "wylie", "hoods"];

/// Instruction templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Template {
    Heading,
    Altitude,
    Frequency,
    RunwayClearance,
    HoldShort,
    Readback,
}

const TEMPLATES: [Template; 6] = [
    Template::Heading,
    Template::Altitude,
    Template::Frequency,
    Template::RunwayClearance,
    Template::HoldShort,
    Template::Readback,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// En-route heavy traffic, mostly the first six airlines.
    Base,
    /// Surface and runway heavy traffic, mostly the last six airlines.
    Atc,
}

impl Domain {
    fn template_weights(self) -> [f64; 6] {
        match self {
            Domain::Base => [0.26, 0.26, 0.22, 0.1, 0.08, 0.08],
            Domain::Atc => [0.1, 0.1, 0.15, 0.22, 0.23, 0.2],
        }
    }

    fn airline_weight(self, index: usize) -> f64 {
        let first_half = index < AIRLINES.len() / 2;
        match (self, first_half) {
            (Domain::Base, true) | (Domain::Atc, false) => 3.0,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("{name} probability {value} is outside [0, 1]")]
    BadProbability { name: &'static str, value: f64 },
    #[error("substitution + deletion probabilities exceed 1")]
    ExcessiveCorruption,
}

/// Symbol-level corruption model. Substitutions are systematic: symbol `s`
/// is always confused with `perm(s)`, a derangement fixed by
/// `confusion_seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub substitution: f64,
    pub insertion: f64,
    pub deletion: f64,
    pub confusion_seed: u64,
    pub domain: Domain,
}

impl ChannelProfile {
    pub fn new(
        substitution: f64,
        insertion: f64,
        deletion: f64,
        confusion_seed: u64,
        domain: Domain,
    ) -> Result<Self, ChannelError> {
        for (name, value) in [("substitution", substitution), ("insertion", insertion), ("deletion", deletion)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ChannelError::BadProbability { name, value });
            }
        }
        if substitution + deletion > 1.0 {
            return Err(ChannelError::ExcessiveCorruption);
        }
        Ok(ChannelProfile { substitution, insertion, deletion, confusion_seed, domain })
    }

    /// Source domain the toy model is pre-trained on.
    pub fn base() -> Self {
        ChannelProfile { substitution: 0.04, insertion: 0.02, deletion: 0.02, confusion_seed: 0x5EED_0001, domain: Domain::Base }
    }

    /// Target domain: a noisier channel with a different confusion structure.
    pub fn atc() -> Self {
        ChannelProfile { substitution: 0.5, insertion: 0.03, deletion: 0.03, confusion_seed: 0x5EED_0A7C, domain: Domain::Atc }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "base" => Some(Self::base()),
            "atc" => Some(Self::atc()),
            _ => None,
        }
    }

    /// The confusion derangement: a single cycle through a seeded shuffle.
    pub fn confusion(&self) -> Vec<u32> {
        let mut order: Vec<u32> = (0..SYMBOL_COUNT).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.confusion_seed));
        let mut perm = vec![0; SYMBOL_COUNT as usize];
        for (i, &s) in order.iter().enumerate() {
            perm[s as usize] = order[(i + 1) % order.len()];
        }
        perm
    }

    /// Corrupts `clean` in place of a real acoustic channel. For each symbol:
    /// delete with `deletion`, else confuse with `substitution`, else keep;
    /// then insert a uniformly random symbol with `insertion`.
    pub fn apply<R: Rng>(&self, clean: &[u32], perm: &[u32], rng: &mut R) -> Vec<u32> {
        let mut out = Vec::with_capacity(clean.len() + 4);
        for &s in clean {
            let u: f64 = rng.random();
            if u < self.deletion {
                // dropped
            } else if u < self.deletion + self.substitution {
                out.push(perm[s as usize]);
            } else {
                out.push(s);
            }
            if rng.random::<f64>() < self.insertion {
                out.push(rng.random_range(0..SYMBOL_COUNT));
            }
        }
        out
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Chosen so every grammar word gets a distinct code.
const CODE_SALT: u64 = 0;

/// The fixed 2-4 symbol code of a word, derived from a hash of its spelling.
pub fn word_symbols(word: &str) -> Vec<u32> {
    word_symbols_salted(word, CODE_SALT)
}

fn word_symbols_salted(word: &str, salt: u64) -> Vec<u32> {
    let h = fnv1a(word.as_bytes()) ^ splitmix(salt);
    let len = 2 + (h % 3) as usize;
    let mut state = h;
    (0..len)
        .map(|_| {
            state = splitmix(state);
            (state % SYMBOL_COUNT as u64) as u32
        })
        .collect()
}

pub fn text_symbols(text: &str) -> Vec<u32> {
    text.split_whitespace().flat_map(word_symbols).collect()
}

/// Every word the grammar can produce, sorted.
pub fn vocabulary() -> Vec<&'static str> {
    let mut set: BTreeSet<&'static str> = BTreeSet::new();
    set.extend(AIRLINES);
    set.extend(DIGITS);
    set.extend(PHONETIC);
    set.extend(CITIES);
    set.extend(FACILITIES);
    set.extend(SIDES);
    set.extend(FIXES);
    set.extend(INSTRUCTION_WORDS);
    set.into_iter().collect()
}

const INSTRUCTION_WORDS: [&str; 74] = [
    "turn", "heading", "climb", "descend", "and", "maintain", "flight", "level", "thousand", "hundred", "contact",
    "point", "good", "day", "runway", "cleared", "for", "takeoff", "to", "land", "wind", "at", "hold", "short", "of",
    "taxiway", "taxi", "via", "cross", "expect", "the", "ils", "visual", "roger", "wilco", "traffic", "o'clock",
    "miles", "report", "established", "localizer", "squawk", "reduce", "increase", "speed", "knots", "line", "up",
    "wait", "monitor", "vectors", "approach", "ident", "continue", "on", "say", "again", "caution", "wake",
    "turbulence", "heavy", "no", "factor", "in", "sight", "go", "around", "direct", "proceed", "frequency", "change",
    "approved", "when", "able",
];

struct Sentence(Vec<&'static str>);

impl Sentence {
    fn push(&mut self, w: &'static str) {
        self.0.push(w);
    }
    fn digits<R: Rng>(&mut self, rng: &mut R, n: usize) {
        for _ in 0..n {
            self.push(DIGITS[rng.random_range(0..10)]);
        }
    }
    fn pick<R: Rng>(&mut self, rng: &mut R, words: &[&'static str]) {
        self.push(words[rng.random_range(0..words.len())]);
    }
    fn coin<R: Rng>(rng: &mut R, p: f64) -> bool {
        rng.random::<f64>() < p
    }

    fn runway<R: Rng>(&mut self, rng: &mut R) {
        self.push("runway");
        let n = rng.random_range(1..=2);
        self.digits(rng, n);
        if Self::coin(rng, 0.6) {
            self.pick(rng, &SIDES);
        }
    }

    fn altitude<R: Rng>(&mut self, rng: &mut R) {
        match rng.random_range(0..3) {
            0 => {
                self.push("flight");
                self.push("level");
                self.digits(rng, 3);
            }
            1 => {
                self.push(DIGITS[rng.random_range(1..10)]);
                self.push("thousand");
            }
            _ => {
                self.push(DIGITS[rng.random_range(1..10)]);
                self.push("thousand");
                self.push(DIGITS[rng.random_range(1..10)]);
                self.push("hundred");
            }
        }
    }

    fn heading<R: Rng>(&mut self, rng: &mut R) {
        self.pick(rng, &["left", "right"]);
        self.push("heading");
        self.push(DIGITS[rng.random_range(0..4)]);
        self.digits(rng, 1);
        self.push(if Self::coin(rng, 0.5) { "zero" } else { "five" });
    }

    fn frequency<R: Rng>(&mut self, rng: &mut R) {
        self.push("one");
        self.digits(rng, 2);
        self.push("point");
        let n = rng.random_range(1..=2);
        self.digits(rng, n);
    }
}

fn callsign<R: Rng>(rng: &mut R, domain: Domain) -> Vec<&'static str> {
    let weights: Vec<f64> = (0..AIRLINES.len()).map(|i| domain.airline_weight(i)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut airline = AIRLINES[AIRLINES.len() - 1];
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            airline = AIRLINES[i];
            break;
        }
        u -= w;
    }
    let mut s = Sentence(vec![airline]);
    let n = rng.random_range(2..=4);
    s.push(DIGITS[rng.random_range(1..10)]);
    s.digits(rng, n - 1);
    if rng.random::<f64>() < 0.1 {
        s.push("heavy");
    }
    s.0
}

fn pick_template<R: Rng>(rng: &mut R, domain: Domain) -> Template {
    let weights = domain.template_weights();
    let mut u = rng.random::<f64>() * weights.iter().sum::<f64>();
    for (t, w) in TEMPLATES.iter().zip(weights) {
        if u < w {
            return *t;
        }
        u -= w;
    }
    TEMPLATES[TEMPLATES.len() - 1]
}

/// One grammatical utterance from `domain`'s template and airline mixture.
pub fn sentence<R: Rng>(rng: &mut R, domain: Domain) -> String {
    let call = callsign(rng, domain);
    let mut s = Sentence(Vec::with_capacity(20));
    let template = pick_template(rng, domain);
    if template != Template::Readback {
        s.0.extend(&call);
    }
    match template {
        Template::Heading => {
            if Sentence::coin(rng, 0.2) {
                s.pick(rng, &["direct", "proceed"]);
                if s.0.last() == Some(&"proceed") {
                    s.push("direct");
                }
                s.pick(rng, &FIXES);
                return s.0.join(" ");
            }
            s.push("turn");
            s.heading(rng);
            match rng.random_range(0..4) {
                0 => {
                    s.push("vectors");
                    s.push("for");
                    s.push("the");
                    s.pick(rng, &["ils", "visual"]);
                    s.push("approach");
                }
                1 => {
                    s.push("traffic");
                    s.push(DIGITS[rng.random_range(1..10)]);
                    s.push("o'clock");
                    s.push(DIGITS[rng.random_range(1..10)]);
                    s.push("miles");
                    if Sentence::coin(rng, 0.5) {
                        s.push("no");
                        s.push("factor");
                    }
                }
                2 => {
                    s.push("report");
                    s.push("established");
                    s.push("on");
                    s.push("the");
                    s.push("localizer");
                }
                _ => {}
            }
        }
        Template::Altitude => {
            if Sentence::coin(rng, 0.15) {
                s.push("expect");
                s.push("the");
                s.pick(rng, &["ils", "visual"]);
                s.push("approach");
            }
            s.pick(rng, &["climb", "descend"]);
            if Sentence::coin(rng, 0.15) {
                s.push("when");
                s.push("able");
            }
            s.push("and");
            s.push("maintain");
            s.altitude(rng);
            if Sentence::coin(rng, 0.25) {
                s.pick(rng, &["reduce", "increase"]);
                s.push("speed");
                s.push("to");
                s.push(DIGITS[rng.random_range(1..4)]);
                s.digits(rng, 1);
                s.push("zero");
                s.push("knots");
            }
        }
        Template::Frequency => {
            if Sentence::coin(rng, 0.15) {
                s.push("frequency");
                s.push("change");
                s.push("approved");
            }
            s.pick(rng, &["contact", "monitor"]);
            s.pick(rng, &CITIES);
            s.pick(rng, &FACILITIES);
            s.frequency(rng);
            if Sentence::coin(rng, 0.5) {
                s.push("good");
                s.push("day");
            }
        }
        Template::RunwayClearance => {
            if Sentence::coin(rng, 0.4) {
                s.push("wind");
                s.digits(rng, 3);
                s.push("at");
                s.digits(rng, 2);
            }
            if Sentence::coin(rng, 0.15) {
                s.push("caution");
                s.push("wake");
                s.push("turbulence");
            }
            s.runway(rng);
            match rng.random_range(0..5) {
                0 => {
                    s.push("cleared");
                    s.push("for");
                    s.push("takeoff");
                }
                1 => {
                    s.push("cleared");
                    s.push("to");
                    s.push("land");
                }
                2 => {
                    s.push("line");
                    s.push("up");
                    s.push("and");
                    s.push("wait");
                }
                3 => {
                    s.push("continue");
                    if Sentence::coin(rng, 0.5) {
                        s.push("traffic");
                        s.push("in");
                        s.push("sight");
                    }
                }
                _ => {
                    s.push("go");
                    s.push("around");
                    s.push("climb");
                    s.push("and");
                    s.push("maintain");
                    s.altitude(rng);
                }
            }
        }
        Template::HoldShort => {
            if Sentence::coin(rng, 0.5) {
                s.push("taxi");
                s.push("via");
                s.pick(rng, &PHONETIC);
                if Sentence::coin(rng, 0.5) {
                    s.pick(rng, &PHONETIC);
                }
            }
            if Sentence::coin(rng, 0.25) {
                s.push("cross");
                s.runway(rng);
            }
            s.push("hold");
            s.push("short");
            s.push("of");
            s.runway(rng);
            if Sentence::coin(rng, 0.3) {
                s.push("at");
                s.push("taxiway");
                s.pick(rng, &PHONETIC);
            }
        }
        Template::Readback => {
            match rng.random_range(0..5) {
                0 => s.heading(rng),
                1 => {
                    s.pick(rng, &["climb", "descend"]);
                    s.push("and");
                    s.push("maintain");
                    s.altitude(rng);
                }
                2 => s.frequency(rng),
                3 => {
                    s.push("hold");
                    s.push("short");
                    s.runway(rng);
                }
                _ => match rng.random_range(0..3) {
                    0 => {
                        s.pick(rng, &["roger", "wilco"]);
                        if Sentence::coin(rng, 0.5) {
                            s.push("squawk");
                            s.digits(rng, 4);
                            if Sentence::coin(rng, 0.3) {
                                s.push("ident");
                            }
                        }
                    }
                    1 => {
                        s.push("say");
                        s.push("again");
                    }
                    _ => {
                        s.push("traffic");
                        s.push("in");
                        s.push("sight");
                    }
                },
            }
            s.0.extend(&call);
        }
    }
    s.0.join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthUtterance {
    pub id: String,
    pub text: String,
    /// Symbol stream before the channel.
    pub clean_symbols: Vec<u32>,
    /// Symbol stream after the channel.
    pub symbols: Vec<u32>,
    pub start_s: f64,
    pub end_s: f64,
}

/// One line of `streams/*.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub id: String,
    pub symbols: Vec<u32>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub seed: u64,
    pub channel: ChannelProfile,
    pub utterances: Vec<SynthUtterance>,
}

const TEXT_STREAM: u64 = 0x7465_7874;
const CHANNEL_STREAM: u64 = 0x6368_616e;

pub fn file_stem(file_index: usize) -> String {
    format!("synth_{file_index:04}")
}

/// Generates `n` utterances. A pure function of `(seed, n, channel)`; the
/// sentence stream and the channel noise use independent generators.
pub fn synth_corpus(seed: u64, n: usize, channel: &ChannelProfile) -> SynthCorpus {
    let mut text_rng = ChaCha8Rng::seed_from_u64(seed ^ TEXT_STREAM);
    let mut channel_rng = ChaCha8Rng::seed_from_u64(seed ^ CHANNEL_STREAM);
    let perm = channel.confusion();
    let mut utterances = Vec::with_capacity(n);
    let mut clock = 0.0;
    for i in 0..n {
        let (file, index) = (i / UTTERANCES_PER_FILE, i % UTTERANCES_PER_FILE);
        if index == 0 {
            clock = 1.0;
        }
        let text = sentence(&mut text_rng, channel.domain);
        let clean_symbols = text_symbols(&text);
        let symbols = channel.apply(&clean_symbols, &perm, &mut channel_rng);
        let words = text.split(' ').count() as f64;
        // two-decimal times keep transcripts readable and round-trip exactly
        let start_s = (clock * 100.0_f64).round() / 100.0;
        let end_s = ((clock + 0.6 + 0.32 * words) * 100.0_f64).round() / 100.0;
        clock = end_s + 1.5;
        utterances.push(SynthUtterance {
            id: format!("{}_{index:05}", file_stem(file)),
            text,
            clean_symbols,
            symbols,
            start_s,
            end_s,
        });
    }
    SynthCorpus { seed, channel: *channel, utterances }
}

impl SynthCorpus {
    pub fn stream_records(&self) -> Vec<StreamRecord> {
        self.utterances
            .iter()
            .map(|u| StreamRecord { id: u.id.clone(), symbols: u.symbols.clone(), text: u.text.clone() })
            .collect()
    }

    /// Writes `transcripts/*.txt` and `streams/*.jsonl`, one file pair per
    /// hundred utterances.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let tdir = dir.join("transcripts");
        let sdir = dir.join("streams");
        fs::create_dir_all(&tdir)?;
        fs::create_dir_all(&sdir)?;
        for (file, chunk) in self.utterances.chunks(UTTERANCES_PER_FILE).enumerate() {
            let stem = file_stem(file);
            let mut transcript = format!(
                "# synthetic ATC phraseology, seed {} domain {:?}\n",
                self.seed, self.channel.domain
            );
            let mut streams = Vec::new();
            for u in chunk {
                let speaker = u.text.split(' ').next().unwrap_or_default().to_uppercase();
                let _ = writeln!(
                    transcript,
                    "((FROM {speaker}) (TO TWR) (TIMES {:.2} {:.2}) (TEXT {}))",
                    u.start_s, u.end_s, u.text
                );
                let rec = StreamRecord { id: u.id.clone(), symbols: u.symbols.clone(), text: u.text.clone() };
                serde_json::to_writer(&mut streams, &rec).map_err(std::io::Error::other)?;
                streams.push(b'\n');
            }
            fs::write(tdir.join(format!("{stem}.txt")), transcript)?;
            fs::File::create(sdir.join(format!("{stem}.jsonl")))?.write_all(&streams)?;
        }
        Ok(())
    }
}
