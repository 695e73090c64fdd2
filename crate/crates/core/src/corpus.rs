//! Image corpora with patient-disjoint splits, and random patch sampling.
//!
//! The index file has one record per line: relative image path, patient id
//! and split tag (`train`, `val` or `test`), separated by tabs. Blank lines
//! and lines starting with `#` are ignored.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{read_image, GrayImage};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Corpus(format!("unknown split `{s}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusRecord {
    pub path: PathBuf,
    pub patient: String,
    pub split: Split,
}

/// Records whose patients never appear in more than one split.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusIndex {
    records: Vec<CorpusRecord>,
    base_dir: PathBuf,
}

impl CorpusIndex {
    pub fn new(records: Vec<CorpusRecord>) -> Result<Self> {
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for r in &records {
            if r.patient.is_empty() || r.patient.contains(['\t', '\n']) {
                return Err(Error::Corpus(format!("invalid patient id {:?}", r.patient)));
            }
            match seen.insert(&r.patient, r.split) {
                Some(prev) if prev != r.split => {
                    return Err(Error::Corpus(format!(
                        "patient `{}` appears in both {prev} and {}",
                        r.patient, r.split
                    )));
                }
                _ => {}
            }
        }
        Ok(CorpusIndex {
            records,
            base_dir: PathBuf::new(),
        })
    }

    /// Parses index text; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [path, patient, split] = fields[..] else {
                return Err(Error::Corpus(format!(
                    "line {}: expected 3 tab-separated fields, got {}",
                    n + 1,
                    fields.len()
                )));
            };
            records.push(CorpusRecord {
                path: path.into(),
                patient: patient.to_string(),
                split: split
                    .parse()
                    .map_err(|e| Error::Corpus(format!("line {}: {e}", n + 1)))?,
            });
        }
        let mut index = CorpusIndex::new(records)?;
        index.base_dir = base_dir.into();
        Ok(index)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        CorpusIndex::parse(&text, base)
    }

    pub fn to_text(&self) -> String {
        self.records
            .iter()
            .map(|r| format!("{}\t{}\t{}\n", r.path.display(), r.patient, r.split))
            .collect()
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn resolve(&self, record: &CorpusRecord) -> PathBuf {
        self.base_dir.join(&record.path)
    }

    pub fn patients(&self, split: Split) -> BTreeSet<&str> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.patient.as_str())
            .collect()
    }
}

/// Deterministically assigns whole patients to splits: a shuffled
/// `train_fraction` go to train, `val_fraction` to validation and the rest
/// to test. With at least three patients every split is non-empty.
pub fn assign_splits(patients: &[String], train_fraction: f64, val_fraction: f64, seed: u64) -> HashMap<String, Split> {
    let mut ids: Vec<&String> = patients.iter().collect::<BTreeSet<_>>().into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let mut n_train = (n as f64 * train_fraction).round() as usize;
    let mut n_val = (n as f64 * val_fraction).round() as usize;
    if n >= 3 {
        n_val = n_val.max(1);
        n_train = n_train.clamp(1, n - n_val - 1);
    }
    n_train = n_train.min(n);
    n_val = n_val.min(n - n_train);
    ids.into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (id.clone(), split)
        })
        .collect()
}

/// An index with its images loaded.
#[derive(Clone, Debug)]
pub struct Corpus {
    index: CorpusIndex,
    images: Vec<GrayImage>,
}

impl Corpus {
    pub fn load(index: CorpusIndex) -> Result<Self> {
        let images = index
            .records
            .iter()
            .map(|r| read_image(index.resolve(r)))
            .collect::<Result<_>>()?;
        Ok(Corpus { index, images })
    }

    /// In-memory corpus; `path` fields are synthetic names.
    pub fn from_images(entries: Vec<(GrayImage, String, Split)>) -> Result<Self> {
        let mut records = Vec::with_capacity(entries.len());
        let mut images = Vec::with_capacity(entries.len());
        for (i, (img, patient, split)) in entries.into_iter().enumerate() {
            records.push(CorpusRecord {
                path: format!("image{i:05}").into(),
                patient,
                split,
            });
            images.push(img);
        }
        Ok(Corpus {
            index: CorpusIndex::new(records)?,
            images,
        })
    }

    pub fn index(&self) -> &CorpusIndex {
        &self.index
    }

    pub fn image(&self, i: usize) -> &GrayImage {
        &self.images[i]
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Indices of split members at least `n x n` in size. Smaller images are
    /// skipped with a warning; an empty result is an error.
    pub fn eligible(&self, split: Split, n: usize) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for (i, (r, img)) in self.index.records.iter().zip(&self.images).enumerate() {
            if r.split != split {
                continue;
            }
            if img.width() < n || img.height() < n {
                log::warn!(
                    "skipping {} ({}x{}): smaller than {n}x{n}",
                    r.path.display(),
                    img.width(),
                    img.height()
                );
                continue;
            }
            out.push(i);
        }
        if out.is_empty() {
            return Err(Error::Corpus(format!("no {split} images of at least {n}x{n}")));
        }
        Ok(out)
    }
}

/// Where a sampled patch came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CropSource {
    pub record: usize,
    pub patient: String,
    pub left: usize,
    pub top: usize,
}

#[derive(Clone, Debug)]
pub struct CropBatch {
    pub patches: Vec<GrayImage>,
    pub sources: Vec<CropSource>,
}

impl CropBatch {
    /// Patches stacked into a `(count, 1, n, n)` tensor in `[0, 1]`.
    pub fn tensor(&self) -> Result<Tensor> {
        let items: Vec<Tensor> = self.patches.iter().map(GrayImage::to_tensor).collect();
        Tensor::stack(&items)
    }
}

/// Draws patches from one split: a uniformly random eligible image, then a
/// uniformly random top-left corner.
#[derive(Debug)]
pub struct CropSampler<'a> {
    corpus: &'a Corpus,
    eligible: Vec<usize>,
    size: usize,
    rng: ChaCha8Rng,
}

impl<'a> CropSampler<'a> {
    pub fn new(corpus: &'a Corpus, split: Split, size: usize, seed: u64) -> Result<Self> {
        Ok(CropSampler {
            eligible: corpus.eligible(split, size)?,
            corpus,
            size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn sample(&mut self, count: usize) -> Result<CropBatch> {
        let n = self.size;
        let mut patches = Vec::with_capacity(count);
        let mut sources = Vec::with_capacity(count);
        for _ in 0..count {
            let record = self.eligible[self.rng.gen_range(0..self.eligible.len())];
            let img = self.corpus.image(record);
            let left = self.rng.gen_range(0..=img.width() - n);
            let top = self.rng.gen_range(0..=img.height() - n);
            patches.push(img.crop(left, top, n, n)?);
            sources.push(CropSource {
                record,
                patient: self.corpus.index.records[record].patient.clone(),
                left,
                top,
            });
        }
        Ok(CropBatch { patches, sources })
    }
}

/// `count` random `n x n` patches from `split`, deterministic per seed.
pub fn sample_crops(corpus: &Corpus, split: Split, n: usize, count: usize, seed: u64) -> Result<CropBatch> {
    CropSampler::new(corpus, split, n, seed)?.sample(count)
}
