//! Corpus layout on disk: one binary record file per split plus a CSV
//! manifest.
//!
//! Record file, little-endian:
//!
//! ```text
//! b"AVWWSREC"  u32 version  u32 audio_samples  u32 video_frames  u32 side  u64 count
//! per sample: u64 id, u8 label, i32 snr code, u64 seed,
//!             audio_samples x f32, video_frames * side * side x f32
//! ```

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::synth::{clip_samples, synth_sample, video_frames, Sample, Snr, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::features::{AudioClip, LipFrames, LIP_SIZE};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"AVWWSREC";
pub const RECORD_VERSION: u32 = 1;
const FILE_HEADER: u64 = 8 + 4 * 4 + 8;
const RECORD_HEADER: u64 = 8 + 1 + 4 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    /// Top byte of every generator seed in this split.
    pub fn seed_space(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Dev => 2,
            Split::Test => 3,
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub count: usize,
    /// SNR conditions cycled within each label.
    pub snrs: Vec<Snr>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub train: SplitSpec,
    pub dev: SplitSpec,
    pub test: SplitSpec,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let graded = vec![Snr::Db(-5), Snr::Db(0), Snr::Db(5)];
        CorpusConfig {
            seed: 42,
            train: SplitSpec {
                count: 2000,
                snrs: vec![Snr::Clean, Snr::Db(-5), Snr::Db(0), Snr::Db(5)],
            },
            dev: SplitSpec {
                count: 400,
                snrs: graded.clone(),
            },
            test: SplitSpec {
                count: 400,
                snrs: graded,
            },
        }
    }
}

impl CorpusConfig {
    /// Same seeds and SNR grids with different split sizes.
    pub fn with_counts(seed: u64, train: usize, dev: usize, test: usize) -> Self {
        let mut c = CorpusConfig {
            seed,
            ..Default::default()
        };
        c.train.count = train;
        c.dev.count = dev;
        c.test.count = test;
        c
    }

    pub fn split(&self, s: Split) -> &SplitSpec {
        match s {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in Split::ALL {
            let spec = self.split(s);
            if spec.count > 0 && spec.snrs.is_empty() {
                return Err(Error::Config(format!(
                    "{} split has samples but no SNR conditions",
                    s.as_str()
                )));
            }
            if spec.count >= 1 << 24 {
                return Err(Error::Config(format!(
                    "{} split exceeds 2^24 samples",
                    s.as_str()
                )));
            }
        }
        Ok(())
    }

    /// Manifest rows for one split, without file offsets.
    pub fn entries(&self, split: Split) -> Vec<ManifestEntry> {
        let spec = self.split(split);
        (0..spec.count)
            .map(|i| {
                let label = (i % 2) as u8;
                let snr = spec.snrs[(i / 2) % spec.snrs.len()];
                ManifestEntry {
                    split,
                    id: i as u64,
                    label,
                    snr,
                    seed: sample_seed(split, self.seed, i as u64),
                    offset: 0,
                }
            })
            .collect()
    }
}

pub fn sample_seed(split: Split, corpus_seed: u64, index: u64) -> u64 {
    (split.seed_space() << 56) | ((corpus_seed & 0xFFFF_FFFF) << 24) | (index & 0xFF_FFFF)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub id: u64,
    pub label: u8,
    pub snr: Snr,
    pub seed: u64,
    /// Byte offset of the record within its split file.
    pub offset: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_HEADER: &str = "split,id,label,snr,seed,offset,seed_space";

impl Manifest {
    pub fn split(&self, s: Split) -> Vec<ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.split == s)
            .cloned()
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.split.as_str(),
                e.id,
                e.label,
                e.snr,
                e.seed,
                e.offset,
                e.seed >> 56
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(Error::Format("manifest header mismatch".into()));
        }
        let bad = |n: usize, what: &str| Error::Format(format!("manifest line {n}: bad {what}"));
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let n = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(n, "field count"));
            }
            let e = ManifestEntry {
                split: f[0].parse()?,
                id: f[1].parse().map_err(|_| bad(n, "id"))?,
                label: f[2]
                    .parse()
                    .ok()
                    .filter(|&l: &u8| l <= 1)
                    .ok_or_else(|| bad(n, "label"))?,
                snr: f[3].parse().map_err(|_| bad(n, "snr"))?,
                seed: f[4].parse().map_err(|_| bad(n, "seed"))?,
                offset: f[5].parse().map_err(|_| bad(n, "offset"))?,
            };
            if f[6].parse::<u64>().ok() != Some(e.seed >> 56) {
                return Err(bad(n, "seed_space"));
            }
            entries.push(e);
        }
        Ok(Manifest { entries })
    }
}

/// Clips addressable by position within one split.
pub trait SampleSource {
    fn entries(&self) -> &[ManifestEntry];

    fn sample(&self, i: usize) -> Result<Sample>;

    fn len(&self) -> usize {
        self.entries().len()
    }

    fn is_empty(&self) -> bool {
        self.entries().is_empty()
    }
}

/// A split regenerated from its seeds on demand.
#[derive(Clone, Debug)]
pub struct GeneratedSplit {
    entries: Vec<ManifestEntry>,
    /// Replaces every clip's SNR condition when set.
    pub snr_override: Option<Snr>,
}

impl GeneratedSplit {
    pub fn new(cfg: &CorpusConfig, split: Split) -> Self {
        GeneratedSplit {
            entries: cfg.entries(split),
            snr_override: None,
        }
    }

    pub fn from_entries(entries: Vec<ManifestEntry>) -> Self {
        GeneratedSplit {
            entries,
            snr_override: None,
        }
    }

    /// Same clips with the noise left out.
    pub fn clean(mut self) -> Self {
        self.snr_override = Some(Snr::Clean);
        for e in &mut self.entries {
            e.snr = Snr::Clean;
        }
        self
    }
}

impl SampleSource for GeneratedSplit {
    fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    fn sample(&self, i: usize) -> Result<Sample> {
        let e = &self.entries[i];
        let mut s = synth_sample(e.label, self.snr_override.unwrap_or(e.snr), e.seed)?;
        s.seed = e.seed;
        Ok(s)
    }
}

fn record_len() -> u64 {
    RECORD_HEADER + 4 * (clip_samples() + video_frames() * LIP_SIZE * LIP_SIZE) as u64
}

fn write_split(path: &Path, entries: &mut [ManifestEntry]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for v in [
        RECORD_VERSION,
        clip_samples() as u32,
        video_frames() as u32,
        LIP_SIZE as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    let mut offset = FILE_HEADER;
    let mut buf = Vec::with_capacity(record_len() as usize);
    for e in entries.iter_mut() {
        let s = synth_sample(e.label, e.snr, e.seed)?;
        e.offset = offset;
        buf.clear();
        buf.extend_from_slice(&e.id.to_le_bytes());
        buf.push(e.label);
        buf.extend_from_slice(&e.snr.code().to_le_bytes());
        buf.extend_from_slice(&e.seed.to_le_bytes());
        for v in &s.clip.samples {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &v in s.lips.frames.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        offset += buf.len() as u64;
    }
    w.flush()?;
    Ok(())
}

pub fn record_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.rec", split.as_str()))
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.csv")
}

/// Writes `manifest.csv`, `corpus.json` and one record file per split.
/// Existing outputs are only replaced when `overwrite` is set.
pub fn build_corpus(cfg: &CorpusConfig, dir: &Path, overwrite: bool) -> Result<Manifest> {
    cfg.validate()?;
    let mut outputs = vec![manifest_path(dir), dir.join("corpus.json")];
    outputs.extend(Split::ALL.iter().map(|&s| record_path(dir, s)));
    if !overwrite {
        if let Some(p) = outputs.iter().find(|p| p.exists()) {
            return Err(Error::OutputExists(p.display().to_string()));
        }
    }
    std::fs::create_dir_all(dir)?;
    let mut manifest = Manifest::default();
    for split in Split::ALL {
        let mut entries = cfg.entries(split);
        write_split(&record_path(dir, split), &mut entries)?;
        manifest.entries.extend(entries);
    }
    std::fs::write(manifest_path(dir), manifest.to_csv())?;
    std::fs::write(
        dir.join("corpus.json"),
        serde_json::to_string_pretty(cfg)? + "\n",
    )?;
    Ok(manifest)
}

/// A split read back from its record file.
#[derive(Debug)]
pub struct RecordSplit {
    path: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl RecordSplit {
    pub fn open(dir: &Path, split: Split) -> Result<Self> {
        let manifest = Manifest::from_csv(&std::fs::read_to_string(manifest_path(dir))?)?;
        let path = record_path(dir, split);
        let mut f = File::open(&path)?;
        let mut head = [0u8; FILE_HEADER as usize];
        f.read_exact(&mut head)?;
        if &head[..8] != MAGIC {
            return Err(Error::Format(format!(
                "{} is not a record file",
                path.display()
            )));
        }
        let word =
            |i: usize| u32::from_le_bytes(head[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes"));
        if word(0) != RECORD_VERSION {
            return Err(Error::Format(format!(
                "unsupported record version {}",
                word(0)
            )));
        }
        if (word(1) as usize, word(2) as usize, word(3) as usize)
            != (clip_samples(), video_frames(), LIP_SIZE)
        {
            return Err(Error::Format(format!(
                "{} has an unexpected sample layout",
                path.display()
            )));
        }
        let entries = manifest.split(split);
        let count = u64::from_le_bytes(head[24..32].try_into().expect("8 bytes"));
        if count != entries.len() as u64 {
            return Err(Error::Format(format!(
                "{} holds {count} records but the manifest lists {}",
                path.display(),
                entries.len()
            )));
        }
        Ok(RecordSplit { path, entries })
    }
}

impl SampleSource for RecordSplit {
    fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    fn sample(&self, i: usize) -> Result<Sample> {
        let e = &self.entries[i];
        let mut f = File::open(&self.path)?;
        f.seek(SeekFrom::Start(e.offset))?;
        let mut buf = vec![0u8; record_len() as usize];
        f.read_exact(&mut buf)?;
        let id = u64::from_le_bytes(buf[0..8].try_into().expect("8 bytes"));
        let label = buf[8];
        let snr = Snr::from_code(i32::from_le_bytes(buf[9..13].try_into().expect("4 bytes")));
        let seed = u64::from_le_bytes(buf[13..21].try_into().expect("8 bytes"));
        if (id, label, snr, seed) != (e.id, e.label, e.snr, e.seed) {
            return Err(Error::Format(format!(
                "record {id} disagrees with the manifest"
            )));
        }
        let floats: Vec<f32> = buf[RECORD_HEADER as usize..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let (audio, lips) = floats.split_at(clip_samples());
        let frames = Tensor::new(
            vec![video_frames(), 1, LIP_SIZE, LIP_SIZE],
            lips.iter().map(|&v| f64::from(v)).collect(),
        )?;
        Ok(Sample {
            clip: AudioClip {
                samples: audio.to_vec(),
                sample_rate: SAMPLE_RATE,
            },
            lips: LipFrames { frames },
            label,
            snr,
            seed,
        })
    }
}
