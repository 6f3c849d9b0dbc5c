//! Writes a small synthetic corpus to disk, reads one clip back and prints
//! what it holds.
//!
//! ```text
//! cargo run --release --example synth_corpus -- /tmp/corpus
//! ```

use std::path::PathBuf;

use avwake::corpus::{build_corpus, plan_sample, CorpusConfig, RecordSplit, SampleSource, Split};

fn main() -> avwake::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("avwake-corpus"), PathBuf::from);
    let cfg = CorpusConfig::with_counts(42, 40, 12, 12);
    let manifest = build_corpus(&cfg, &dir, true)?;
    println!("{} clips in {}", manifest.entries.len(), dir.display());

    let test = RecordSplit::open(&dir, Split::Test)?;
    for (i, e) in test.entries().iter().take(6).enumerate() {
        let s = test.sample(i)?;
        let plan = plan_sample(e.label, e.seed)?;
        let peak = s.clip.samples.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        println!(
            "test #{i}: label {} at {} dB, {:?} audio, {:?} lips, peak {peak:.3}, {} lip frames",
            e.label,
            e.snr,
            plan.audio_kind,
            plan.lip_kind,
            s.lips.time()
        );
    }
    Ok(())
}
