use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;

/// Class names of the five-category ultrasound corpus, in id order.
pub const DEFAULT_CLASS_NAMES: [&str; 5] = ["Benign", "Malignant", "Gall.", "COVID", "Pneu."];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        })
    }
}

impl FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(DataError::Validation(format!("unknown split tag {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub media_path: String,
    pub class_id: usize,
    pub split: Split,
    pub source_dataset: String,
    pub num_frames: usize,
}

impl ManifestEntry {
    /// Media path resolved against `base` unless already absolute.
    pub fn resolve(&self, base: &Path) -> PathBuf {
        let p = Path::new(&self.media_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub source_name: String,
    pub class_names: Vec<String>,
}

impl DatasetManifest {
    pub fn new(
        source_name: impl Into<String>,
        class_names: Vec<String>,
        entries: Vec<ManifestEntry>,
    ) -> Result<Self, DataError> {
        let m = Self {
            entries,
            source_name: source_name.into(),
            class_names,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.class_id >= self.class_names.len() {
                return Err(DataError::Validation(format!(
                    "entry {} has class id {} but only {} classes exist",
                    e.id,
                    e.class_id,
                    self.class_names.len()
                )));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(DataError::Validation(format!("duplicate entry id {}", e.id)));
            }
            if e.media_path.is_empty() {
                return Err(DataError::Validation(format!("entry {} has empty media path", e.id)));
            }
            if e.num_frames == 0 {
                return Err(DataError::Validation(format!("entry {} has zero frames", e.id)));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Entry count per class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for e in &self.entries {
            counts[e.class_id] += 1;
        }
        counts
    }

    /// Parses the tab-separated manifest body. Blank lines and lines starting
    /// with `#` are skipped.
    pub fn parse(source_name: &str, class_names: Vec<String>, text: &str) -> Result<Self, DataError> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |msg: &str| DataError::Parse {
                line: lineno + 1,
                message: msg.to_string(),
            };
            if fields.len() != 6 {
                return Err(bad(&format!("expected 6 tab-separated fields, got {}", fields.len())));
            }
            entries.push(ManifestEntry {
                id: fields[0].to_string(),
                media_path: fields[1].to_string(),
                class_id: fields[2].parse().map_err(|_| bad("class_id is not an integer"))?,
                split: fields[3].parse().map_err(|_| bad("unknown split tag"))?,
                source_dataset: fields[4].to_string(),
                num_frames: fields[5].parse().map_err(|_| bad("frames is not an integer"))?,
            });
        }
        Self::new(source_name, class_names, entries)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                e.id, e.media_path, e.class_id, e.split, e.source_dataset, e.num_frames
            ));
        }
        out
    }

    /// Reads `path` and its `classes.txt` sidecar from the same directory.
    /// Without a sidecar the default five class names are used.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let sidecar = classes_path(path);
        let class_names = if sidecar.exists() {
            fs::read_to_string(&sidecar)
                .map_err(|e| DataError::io(&sidecar, e))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect()
        } else {
            DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
        };
        let source = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(&source, class_names, &text)
    }

    /// Writes the manifest and its `classes.txt` sidecar, each by
    /// write-to-temp then rename.
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        atomic_write(path, self.to_tsv().as_bytes())?;
        let mut classes = self.class_names.join("\n");
        classes.push('\n');
        atomic_write(&classes_path(path), classes.as_bytes())
    }
}

pub fn classes_path(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("classes.txt")
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|f| f.to_string_lossy()).unwrap_or_default()
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| DataError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| DataError::io(&tmp, e))?;
    f.sync_all().map_err(|e| DataError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DataError::io(path, e))
}

/// Relabels every entry through `mapping` (old class id → new class name).
/// The new class list is the distinct targets in order of first appearance
/// when walking old class ids in ascending order.
pub fn merge_categories(
    manifest: &DatasetManifest,
    mapping: &BTreeMap<usize, String>,
) -> Result<DatasetManifest, DataError> {
    let present: HashSet<usize> = manifest.entries.iter().map(|e| e.class_id).collect();
    let mut missing: Vec<usize> = present.iter().copied().filter(|c| !mapping.contains_key(c)).collect();
    missing.sort_unstable();
    if let Some(&c) = missing.first() {
        return Err(DataError::UnmappedClass {
            class_id: c,
            name: manifest.class_names[c].clone(),
        });
    }
    let mut new_names: Vec<String> = Vec::new();
    let mut new_id = BTreeMap::new();
    for (&old, target) in mapping {
        if !present.contains(&old) && old >= manifest.class_names.len() {
            continue;
        }
        let id = match new_names.iter().position(|n| n == target) {
            Some(i) => i,
            None => {
                new_names.push(target.clone());
                new_names.len() - 1
            }
        };
        new_id.insert(old, id);
    }
    let entries = manifest
        .entries
        .iter()
        .map(|e| ManifestEntry {
            class_id: new_id[&e.class_id],
            ..e.clone()
        })
        .collect();
    DatasetManifest::new(manifest.source_name.clone(), new_names, entries)
}

/// Stratified split: within each class, a seeded shuffle assigns the first
/// `round(train_fraction * n)` entries to train and the rest to test.
pub fn split_train_test(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::Validation(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        by_class.entry(e.class_id).or_default().push(i);
    }
    let mut out = manifest.clone();
    for (class_id, mut idx) in by_class {
        if idx.len() < 2 {
            return Err(DataError::Validation(format!(
                "class {} ({}) has {} entr{}; at least 2 are needed to stratify",
                class_id,
                manifest.class_names[class_id],
                idx.len(),
                if idx.len() == 1 { "y" } else { "ies" }
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ class_id as u64);
        idx.shuffle(&mut rng);
        let n_train = (train_fraction * idx.len() as f64).round() as usize;
        for (rank, &i) in idx.iter().enumerate() {
            out.entries[i].split = if rank < n_train { Split::Train } else { Split::Test };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn fixture(counts: &[usize]) -> DatasetManifest {
        let mut entries = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                entries.push(ManifestEntry {
                    id: format!("c{c}_{i:03}"),
                    media_path: format!("videos/c{c}_{i:03}.npy"),
                    class_id: c,
                    split: Split::Unassigned,
                    source_dataset: "fixture".into(),
                    num_frames: 16,
                });
            }
        }
        let names = (0..counts.len()).map(|c| format!("class{c}")).collect();
        DatasetManifest::new("fixture", names, entries).unwrap()
    }

    #[test]
    fn gallbladder_subtypes_merge_into_one() {
        let m = fixture(&[30, 25, 25, 25, 25, 25, 25, 20, 20]);
        assert_eq!(m.entries.len(), 220);
        let mapping = (0..9).map(|c| (c, "Gallbladder Disease".to_string())).collect();
        let merged = merge_categories(&m, &mapping).unwrap();
        assert_eq!(merged.class_names, vec!["Gallbladder Disease"]);
        assert_eq!(merged.entries.len(), 220);
        assert!(merged.entries.iter().all(|e| e.class_id == 0));
    }

    #[test]
    fn identity_merge_is_noop() {
        let m = fixture(&[3, 4, 5]);
        let mapping = m.class_names.iter().cloned().enumerate().collect();
        assert_eq!(merge_categories(&m, &mapping).unwrap(), m);
    }

    #[test]
    fn renaming_bijection_preserves_counts() {
        let m = fixture(&[3, 4, 5, 6, 7]);
        let mapping: BTreeMap<usize, String> =
            (0..5).map(|c| (c, format!("renamed{}", 4 - c))).collect();
        let merged = merge_categories(&m, &mapping).unwrap();
        assert_eq!(merged.class_counts(), m.class_counts());
        assert_eq!(merged.class_names[0], "renamed4");
    }

    #[test]
    fn merge_missing_class_names_it() {
        let m = fixture(&[2, 2]);
        let mapping = [(0, "a".to_string())].into_iter().collect();
        let err = merge_categories(&m, &mapping).unwrap_err();
        assert!(err.to_string().contains("class1"), "{err}");
    }

    #[test]
    fn cuv_sized_split_counts() {
        // Benign, Malignant, Gall., COVID (33 + 20), Pneu.
        let m = fixture(&[74, 112, 220, 53, 36]);
        assert_eq!(m.entries.len(), 495);
        let s = split_train_test(&m, 0.8, 7).unwrap();
        let train = s.split(Split::Train).count();
        let test = s.split(Split::Test).count();
        assert_eq!(train + test, 495);
        assert_eq!(train, 396);
        assert_eq!(test, 99);
        for (c, &n) in m.class_counts().iter().enumerate() {
            let t = s.split(Split::Train).filter(|e| e.class_id == c).count();
            assert!((t as f64 - 0.8 * n as f64).abs() <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn split_is_seeded() {
        let m = fixture(&[4, 4, 4, 4, 4]);
        let a = split_train_test(&m, 0.8, 7).unwrap();
        let b = split_train_test(&m, 0.8, 7).unwrap();
        let c = split_train_test(&m, 0.8, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_singleton_class() {
        let m = fixture(&[3, 1]);
        assert!(split_train_test(&m, 0.8, 1).is_err());
        assert!(split_train_test(&fixture(&[3]), 1.0, 1).is_err());
    }

    #[test]
    fn tsv_roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        let m = split_train_test(&fixture(&[3, 3]), 0.5, 2).unwrap();
        m.save(&path).unwrap();
        let back = DatasetManifest::load(&path).unwrap();
        assert_eq!(back.entries, m.entries);
        assert_eq!(back.class_names, m.class_names);
    }

    #[test]
    fn parse_rejects_bad_rows() {
        let names = vec!["a".to_string()];
        assert!(DatasetManifest::parse("x", names.clone(), "id\tp\t0\ttrain\ts\n").is_err());
        assert!(DatasetManifest::parse("x", names.clone(), "id\tp\t3\ttrain\ts\t4\n").is_err());
        assert!(DatasetManifest::parse("x", names.clone(), "id\tp\t0\tval\ts\t4\n").is_err());
        assert!(DatasetManifest::parse("x", names, "id\tp\t0\ttrain\ts\t0\n").is_err());
    }

    proptest::proptest! {
        #[test]
        fn merge_preserves_entry_count(
            counts in proptest::collection::vec(1usize..6, 1..6),
            targets in proptest::collection::vec(0usize..3, 6),
        ) {
            let m = fixture(&counts);
            let mapping = (0..counts.len()).map(|c| (c, format!("t{}", targets[c]))).collect();
            let merged = merge_categories(&m, &mapping).unwrap();
            proptest::prop_assert_eq!(merged.entries.len(), m.entries.len());
            let used: HashSet<usize> = merged.entries.iter().map(|e| e.class_id).collect();
            proptest::prop_assert_eq!(used.len(), merged.class_names.len());
        }

        #[test]
        fn split_is_a_partition(
            counts in proptest::collection::vec(2usize..12, 1..6),
            frac in 0.05f64..0.95,
            seed in 0u64..1000,
        ) {
            let m = fixture(&counts);
            let s = split_train_test(&m, frac, seed).unwrap();
            proptest::prop_assert_eq!(s.entries.len(), m.entries.len());
            proptest::prop_assert!(s.entries.iter().all(|e| e.split != Split::Unassigned));
            let ids: HashSet<&str> = s.entries.iter().map(|e| e.id.as_str()).collect();
            proptest::prop_assert_eq!(ids.len(), m.entries.len());
        }
    }
}
