pub mod evaluate;
pub mod generate;
pub mod inspect;
pub mod prepare;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};

use notasign::data::synthetic::{default_split, synthetic_corpus, write_corpus, SyntheticConfig};
use notasign::hamnosys::Vocabulary;

pub fn synthesize(out: &Path, count: usize, seed: u64) -> Result<()> {
    let samples = synthetic_corpus(count, seed, &Vocabulary::default_hamnosys(), &SyntheticConfig::default());
    let manifest = write_corpus(out, &samples, |i| default_split(i, count))?;
    eprintln!("wrote {count} samples, manifest {}", manifest.display());
    Ok(())
}

/// Writes a headed CSV; every row must match the header's width.
pub fn write_csv<R, I, S>(path: &Path, header: &[&str], rows: R) -> Result<()>
where
    R: IntoIterator<Item = I>,
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
