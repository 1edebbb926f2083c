//! Monophonic melodies as token sequences, and the synthetic corpus.
//!
//! Token ids: `0` rest, `1` hold (sustain the sounding note), `2..V` note-on
//! at MIDI pitch `pitch_base + id - 2`. One token per sixteenth note.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const REST: u8 = 0;
pub const HOLD: u8 = 1;
pub const FIRST_PITCH: u8 = 2;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const META_FILE: &str = "corpus_meta.json";

/// Vocabulary size, sequence length and pitch offset shared by a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelodyFormat {
    #[serde(rename = "V")]
    pub vocab: usize,
    #[serde(rename = "T")]
    pub length: usize,
    pub pitch_base: u32,
}

impl Default for MelodyFormat {
    fn default() -> Self {
        Self {
            vocab: 16,
            length: 32,
            pitch_base: 60,
        }
    }
}

impl MelodyFormat {
    pub fn validate(&self) -> Result<()> {
        if self.vocab <= FIRST_PITCH as usize || self.vocab > 256 || self.length == 0 {
            return Err(Error::Config(format!("invalid melody format {self:?}")));
        }
        Ok(())
    }

    /// Number of note-on ids.
    pub fn pitch_count(&self) -> usize {
        self.vocab - FIRST_PITCH as usize
    }

    pub fn token_for_pitch(&self, pitch: u32) -> Option<u8> {
        let off = pitch.checked_sub(self.pitch_base)? as usize;
        (off < self.pitch_count()).then(|| FIRST_PITCH + off as u8)
    }

    pub fn pitch_of(&self, token: u8) -> Option<u32> {
        (token >= FIRST_PITCH).then(|| self.pitch_base + (token - FIRST_PITCH) as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Melody {
    pub tokens: Vec<u8>,
}

impl Melody {
    /// Checks every token against the vocabulary size.
    pub fn new(tokens: Vec<u8>, vocab: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Invalid("melody has no tokens".into()));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::Invalid(format!("token {t} out of range for V={vocab}")));
        }
        Ok(Self { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// MIDI pitches of note-on events, in order.
    pub fn note_ons(&self, pitch_base: u32) -> impl Iterator<Item = u32> + '_ {
        self.tokens
            .iter()
            .filter(|&&t| t >= FIRST_PITCH)
            .map(move |&t| pitch_base + (t - FIRST_PITCH) as u32)
    }

    pub fn note_on_count(&self) -> usize {
        self.tokens.iter().filter(|&&t| t >= FIRST_PITCH).count()
    }
}

/// Set of pitch classes (pitch mod 12).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PitchSet {
    mask: u16,
}

impl PitchSet {
    pub fn new(classes: &[u8]) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Config("pitch set must be nonempty".into()));
        }
        let mut mask = 0u16;
        for &c in classes {
            if c >= 12 {
                return Err(Error::Config(format!("pitch class {c} out of range 0..12")));
            }
            mask |= 1 << c;
        }
        Ok(Self { mask })
    }

    pub fn c_major() -> Self {
        Self::new(&[0, 2, 4, 5, 7, 9, 11]).expect("valid classes")
    }

    pub fn contains(&self, pitch: u32) -> bool {
        self.mask >> (pitch % 12) & 1 == 1
    }

    pub fn classes(&self) -> Vec<u8> {
        (0..12).filter(|&c| self.mask >> c & 1 == 1).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Major,
    HarmonicMinor,
}

impl Mode {
    pub fn intervals(self) -> [u8; 7] {
        match self {
            Mode::Major => [0, 2, 4, 5, 7, 9, 11],
            Mode::HarmonicMinor => [0, 2, 3, 5, 7, 8, 11],
        }
    }
}

/// Generator parameters; stored in `corpus_meta.json` next to the corpus.
///
/// Rhythm cells span one beat (four sixteenths): `x` is an onset and `-`
/// sustains the previous note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub count: usize,
    pub seed: u64,
    pub format: MelodyFormat,
    pub modes: Vec<Mode>,
    pub sparse_cells: Vec<String>,
    pub dense_cells: Vec<String>,
    /// Chance that a cell's trailing sustain becomes a rest.
    pub rest_prob: f64,
    /// Melodic contours: cyclic patterns of scale-degree steps, one per phrase.
    pub contours: Vec<Vec<i64>>,
    /// Later bars restate the first, shifted by up to this many degrees.
    pub max_shift: usize,
    /// Chance that one phrase note becomes a chromatic neighbour tone.
    pub chromatic_prob: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let cells = |c: &[&str]| c.iter().map(|s| s.to_string()).collect();
        Self {
            count: 3300,
            seed: 0,
            format: MelodyFormat::default(),
            modes: vec![Mode::Major, Mode::HarmonicMinor],
            sparse_cells: cells(&["x---", "x-x-", "x--x"]),
            dense_cells: cells(&["x-x-", "xxxx", "x-xx", "xx-x"]),
            rest_prob: 0.15,
            contours: vec![
                vec![1],
                vec![-1],
                vec![2],
                vec![-2],
                vec![2, -1],
                vec![-2, 1],
                vec![1, -1],
                vec![-1, 1],
            ],
            max_shift: 2,
            chromatic_prob: 0.8,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        self.format.validate()?;
        let cell_ok = |c: &String| c.len() == 4 && c.starts_with('x') && c.chars().all(|ch| ch == 'x' || ch == '-');
        let ok = self.count > 0
            && !self.modes.is_empty()
            && !self.sparse_cells.is_empty()
            && !self.dense_cells.is_empty()
            && self.sparse_cells.iter().chain(&self.dense_cells).all(cell_ok)
            && (0.0..=1.0).contains(&self.rest_prob)
            && (0.0..=1.0).contains(&self.chromatic_prob)
            && !self.contours.is_empty()
            && self.contours.iter().all(|c| !c.is_empty());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid corpus generator config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    #[serde(rename = "V")]
    pub vocab: usize,
    #[serde(rename = "T")]
    pub length: usize,
    pub pitch_base: u32,
    pub generator: CorpusConfig,
}

fn reflect(degree: i64, top: i64) -> i64 {
    let mut d = degree;
    if d < 0 {
        d = -d;
    }
    if d > top {
        d = 2 * top - d;
    }
    d.clamp(0, top)
}

/// The semitone above `tok` when that is off the scale and in range, else
/// the semitone below.
fn neighbour(tok: u8, scale: &[u8], f: &MelodyFormat) -> u8 {
    let last = FIRST_PITCH + f.pitch_count() as u8 - 1;
    if tok < last && !scale.contains(&(tok + 1)) {
        tok + 1
    } else if tok > FIRST_PITCH && !scale.contains(&(tok - 1)) {
        tok - 1
    } else {
        tok
    }
}

/// Draws one melody: a random key and density regime, a one-bar phrase of
/// rhythm cells whose notes follow a contour over the key's in-range scale
/// tones,
/// then that phrase restated (shifted by a few degrees) in every later bar.
/// Some phrases carry one chromatic neighbour tone.
pub fn generate_melody(cfg: &CorpusConfig, rng: &mut Rng) -> Melody {
    let f = cfg.format;
    let tonic = rng.below(12) as u32;
    let mode = cfg.modes[rng.below(cfg.modes.len())];
    let scale: Vec<u8> = (0..f.pitch_count() as u32)
        .filter(|&o| {
            let pc = ((f.pitch_base + o) % 12 + 12 - tonic) % 12;
            mode.intervals().contains(&(pc as u8))
        })
        .map(|o| FIRST_PITCH + o as u8)
        .collect();
    let top = scale.len() as i64 - 1;
    let palette = if rng.bernoulli(0.5) { &cfg.sparse_cells } else { &cfg.dense_cells };

    // phrase: per step, Some(degree) for an onset, None for hold, and a rest flag
    let bar = 16.min(f.length);
    let mut phrase: Vec<(Option<i64>, bool)> = Vec::with_capacity(bar);
    let contour = &cfg.contours[rng.below(cfg.contours.len())];
    let mut degree = rng.below(scale.len()) as i64;
    let mut notes = 0;
    let mut first = true;
    while phrase.len() < bar {
        let cell = palette[rng.below(palette.len())].as_bytes();
        let cut = rng.bernoulli(cfg.rest_prob);
        let tail = cell.iter().rposition(|&c| c == b'x').unwrap_or(0);
        for (i, &c) in cell.iter().enumerate().take(bar - phrase.len()) {
            if c == b'x' {
                if !first {
                    degree = reflect(degree + contour[notes % contour.len()], top);
                    notes += 1;
                }
                first = false;
                phrase.push((Some(degree), false));
            } else {
                phrase.push((None, cut && i > tail));
            }
        }
    }

    let onsets: Vec<usize> = (1..bar).filter(|&i| phrase[i].0.is_some()).collect();
    let chromatic = (!onsets.is_empty() && rng.bernoulli(cfg.chromatic_prob)).then(|| onsets[rng.below(onsets.len())]);

    let mut tokens = Vec::with_capacity(f.length);
    let mut shift = 0;
    for i in 0..f.length {
        if i > 0 && i % bar == 0 {
            shift = rng.below(2 * cfg.max_shift + 1) as i64 - cfg.max_shift as i64;
        }
        tokens.push(match phrase[i % bar] {
            (Some(d), _) => {
                let tok = scale[reflect(d + shift, top) as usize];
                if chromatic == Some(i % bar) {
                    neighbour(tok, &scale, &f)
                } else {
                    tok
                }
            }
            (None, true) => REST,
            (None, false) => HOLD,
        });
    }
    Melody { tokens }
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Vec<Melody>> {
    cfg.validate()?;
    let mut rng = Rng::seeded(cfg.seed);
    Ok((0..cfg.count).map(|_| generate_melody(cfg, &mut rng)).collect())
}

pub fn write_corpus(dir: impl AsRef<Path>, melodies: &[Melody], cfg: &CorpusConfig) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(CORPUS_FILE);
    let mut out = Vec::new();
    for m in melodies {
        serde_json::to_writer(&mut out, m)?;
        out.push(b'\n');
    }
    fs::File::create(&path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(&path, e))?;
    let meta = CorpusMeta {
        vocab: cfg.format.vocab,
        length: cfg.format.length,
        pitch_base: cfg.format.pitch_base,
        generator: cfg.clone(),
    };
    let path = dir.join(META_FILE);
    fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_corpus(dir: impl AsRef<Path>) -> Result<(Vec<Melody>, CorpusMeta)> {
    let dir = dir.as_ref();
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CorpusMeta = serde_json::from_str(&text)?;
    let path = dir.join(CORPUS_FILE);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut melodies = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let m: Melody = serde_json::from_str(&line)?;
        if m.len() != meta.length {
            return Err(Error::Invalid(format!(
                "melody of length {} in a T={} corpus",
                m.len(),
                meta.length
            )));
        }
        melodies.push(Melody::new(m.tokens, meta.vocab)?);
    }
    Ok((melodies, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_melodies_are_valid_and_in_key() {
        let cfg = CorpusConfig {
            count: 300,
            ..CorpusConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let f = cfg.format;
        for m in &corpus {
            assert_eq!(m.len(), f.length);
            assert!(m.tokens.iter().all(|&t| (t as usize) < f.vocab));
            assert!(m.tokens[0] >= FIRST_PITCH);
            // second bar repeats the first bar's onset pattern
            for i in 0..16 {
                assert_eq!(m.tokens[i] >= FIRST_PITCH, m.tokens[i + 16] >= FIRST_PITCH);
            }
            // some key from the generator holds every note but one neighbour tone per bar
            let fits = (0..12).any(|tonic| {
                cfg.modes.iter().any(|mode| {
                    let classes: Vec<u8> =
                        mode.intervals().iter().map(|i| ((i + tonic) % 12) as u8).collect();
                    let set = PitchSet::new(&classes).unwrap();
                    m.note_ons(f.pitch_base).filter(|&p| !set.contains(p)).count() <= f.length / 16
                })
            });
            assert!(fits, "{:?}", m.tokens);
        }
    }

    #[test]
    fn later_bars_restate_the_phrase() {
        let corpus = generate_corpus(&CorpusConfig {
            count: 200,
            max_shift: 0,
            chromatic_prob: 0.5,
            ..CorpusConfig::default()
        })
        .unwrap();
        for m in &corpus {
            assert_eq!(m.tokens[..16], m.tokens[16..]);
        }
    }

    #[test]
    fn bad_generator_configs_are_rejected() {
        let base = CorpusConfig::default();
        for bad in [
            CorpusConfig {
                dense_cells: vec!["-x--".into()],
                ..base.clone()
            },
            CorpusConfig {
                contours: vec![vec![]],
                ..base.clone()
            },
            CorpusConfig { count: 0, ..base },
        ] {
            assert!(matches!(generate_corpus(&bad), Err(Error::Config(_))));
        }
    }

    #[test]
    fn density_regimes_differ() {
        let corpus = generate_corpus(&CorpusConfig::default()).unwrap();
        let mut counts: Vec<usize> = corpus.iter().map(Melody::note_on_count).collect();
        counts.sort_unstable();
        let (lo, hi) = (counts[counts.len() / 10], counts[counts.len() * 9 / 10]);
        assert!(hi >= lo + 8, "{lo}..{hi}");
    }

    #[test]
    fn corpus_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig {
            count: 20,
            seed: 3,
            ..CorpusConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        write_corpus(dir.path(), &corpus, &cfg).unwrap();
        let (back, meta) = read_corpus(dir.path()).unwrap();
        assert_eq!(back, corpus);
        assert_eq!(meta.generator, cfg);
        assert_eq!(meta.vocab, 16);
    }

    #[test]
    fn out_of_range_tokens_are_rejected() {
        assert!(Melody::new(vec![0, 16], 16).is_err());
        assert!(Melody::new(vec![], 16).is_err());
        assert!(Melody::new(vec![0, 1, 15], 16).is_ok());
    }

    #[test]
    fn pitch_set_uses_classes() {
        let c = PitchSet::c_major();
        assert!(c.contains(60) && c.contains(72) && c.contains(71));
        assert!(!c.contains(61) && !c.contains(73));
        assert_eq!(c.classes(), vec![0, 2, 4, 5, 7, 9, 11]);
        assert!(PitchSet::new(&[]).is_err());
        assert!(PitchSet::new(&[12]).is_err());
    }

    #[test]
    fn format_maps_tokens_and_pitches() {
        let f = MelodyFormat::default();
        assert_eq!(f.token_for_pitch(60), Some(2));
        assert_eq!(f.token_for_pitch(73), Some(15));
        assert_eq!(f.token_for_pitch(74), None);
        assert_eq!(f.pitch_of(HOLD), None);
        assert_eq!(f.pitch_of(5), Some(63));
    }
}
