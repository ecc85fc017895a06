//! Feature files and utterance manifests.
//!
//! A feature file is a headerless sequence of frames, each `feature_dim`
//! little-endian f32 values. A manifest is a text file with one utterance
//! per line: `id<TAB>path[<TAB>reference]`, where `path` is relative to the
//! manifest's directory and the optional reference is a space-separated
//! unit transcript. Blank lines and lines starting with `#` are ignored.

use std::fs;
use std::path::{Path, PathBuf};

use attn_transducer_core::data::Utterance;
use attn_transducer_core::model::Vocabulary;

use crate::{Error, Result};

pub fn encode_frames(frames: &[Vec<f64>]) -> Vec<u8> {
    frames.iter().flatten().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn decode_frames(bytes: &[u8], feature_dim: usize) -> Result<Vec<Vec<f64>>> {
    if feature_dim == 0 || !bytes.len().is_multiple_of(4 * feature_dim) {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of {feature_dim}-dim f32 frames",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite feature value".into()));
    }
    Ok(values.chunks_exact(feature_dim).map(<[f64]>::to_vec).collect())
}

pub fn write_frames(path: &Path, frames: &[Vec<f64>]) -> Result<()> {
    fs::write(path, encode_frames(frames)).map_err(|e| Error::io(path, e))
}

pub fn read_frames(path: &Path, feature_dim: usize) -> Result<Vec<Vec<f64>>> {
    decode_frames(&fs::read(path).map_err(|e| Error::io(path, e))?, feature_dim)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub reference: Option<String>,
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut f = line.split('\t');
        let (Some(id), Some(path)) = (f.next(), f.next()) else {
            return Err(Error::Format(format!("manifest line {}: expected id<TAB>path", n + 1)));
        };
        let reference = f.next().map(str::to_string);
        if f.next().is_some() {
            return Err(Error::Format(format!("manifest line {}: too many fields", n + 1)));
        }
        out.push(ManifestEntry { id: id.to_string(), path: base.join(path), reference });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// A manifest entry with its features and (if present) reference loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedUtterance {
    pub id: String,
    pub features: Vec<Vec<f64>>,
    pub reference: Option<Vec<usize>>,
}

pub fn load_manifest(path: &Path, feature_dim: usize, vocab: &Vocabulary) -> Result<Vec<LoadedUtterance>> {
    read_manifest(path)?
        .into_iter()
        .map(|e| {
            let features = read_frames(&e.path, feature_dim)?;
            let reference = e.reference.as_deref().map(|r| vocab.encode(r)).transpose()?;
            Ok(LoadedUtterance { id: e.id, features, reference })
        })
        .collect()
}

/// Writes `data` as `utt-NNNN.f32` files plus `manifest.tsv` into `dir`.
pub fn write_dataset(dir: &Path, data: &[Utterance], vocab: &Vocabulary) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, u) in data.iter().enumerate() {
        let name = format!("utt-{i:04}.f32");
        write_frames(&dir.join(&name), &u.features)?;
        let reference = vocab.decode(&u.targets)?.join(" ");
        manifest.push_str(&format!("utt-{i:04}\t{name}\t{reference}\n"));
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    Ok(Vocabulary::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?)
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    fs::write(path, vocab.to_text()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use attn_transducer_core::data::{generate_synthetic_dataset, SyntheticTaskConfig};

    #[test]
    fn frames_round_trip_through_f32() {
        let frames = vec![vec![0.5, -1.25, 3.0], vec![1e-3, 2.0, -0.0]];
        let back = decode_frames(&encode_frames(&frames), 3).unwrap();
        for (a, b) in frames.iter().flatten().zip(back.iter().flatten()) {
            assert_eq!(*a as f32, *b as f32);
        }
        assert!(decode_frames(&[0u8; 10], 3).is_err());
        assert!(decode_frames(&f32::NAN.to_le_bytes(), 1).is_err());
    }

    #[test]
    fn manifest_parsing() {
        let m = parse_manifest("# c\na\tx.f32\tt1 t2\n\nb\tsub/y.f32\n", Path::new("/d")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].path, Path::new("/d/x.f32"));
        assert_eq!(m[0].reference.as_deref(), Some("t1 t2"));
        assert_eq!(m[1].reference, None);
        assert!(parse_manifest("only-id\n", Path::new(".")).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let task = SyntheticTaskConfig { utterances: 3, ..Default::default() };
        let data = generate_synthetic_dataset(&task).unwrap();
        let vocab = Vocabulary::synthetic(task.vocab_size);
        let manifest = write_dataset(dir.path(), &data, &vocab).unwrap();
        let loaded = load_manifest(&manifest, task.feature_dim, &vocab).unwrap();
        assert_eq!(loaded.len(), 3);
        for (l, u) in loaded.iter().zip(&data) {
            assert_eq!(l.reference.as_deref(), Some(&u.targets[..]));
            assert_eq!(l.features.len(), u.features.len());
        }
        let vpath = dir.path().join("vocab.txt");
        write_vocab(&vpath, &vocab).unwrap();
        assert_eq!(read_vocab(&vpath).unwrap(), vocab);
    }
}
