//! On-disk dataset layout.
//!
//! * `manifest.jsonl`: one record per captioned scene
//! * `features.bin`: `PVFT`, u32 version, u32 dim, u64 record count, then an
//!   index of `(scene_id u64, offset u64, count u32)` entries and finally the
//!   little-endian f32 payload; `offset` counts floats from payload start
//! * `lexicon.tsv`: `a_word<TAB>b_word`
//! * `test.a.txt`, `test.b.txt`: the parallel test set

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{id_space, Dataset, Fact, GroundedCaption, ParallelPair, PivotFeature, SceneRecord, SceneSpec, SynthLexicon};
use crate::error::{Error, IoContext, Result};
use crate::textproc::{read_corpus, write_corpus};
use crate::Lang;

const FEATURE_MAGIC: &[u8; 4] = b"PVFT";
const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestRecord {
    scene_id: u64,
    split: String,
    language: Lang,
    tokens: Vec<String>,
    fact_indices: Vec<usize>,
    facts: Vec<Fact>,
    feature_file_offset: u64,
}

/// Per-fact feature vectors for a list of scenes, addressable by position.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub dim: usize,
    pub index: Vec<(u64, u64, u32)>,
    pub data: Vec<f32>,
}

impl FeatureFile {
    pub fn from_features<'a>(dim: usize, items: impl IntoIterator<Item = (u64, &'a PivotFeature)>) -> Self {
        let mut f = Self {
            dim,
            index: Vec::new(),
            data: Vec::new(),
        };
        for (id, feat) in items {
            f.index.push((id, f.data.len() as u64, feat.count() as u32));
            f.data.extend(feat.data.iter().map(|&x| x as f32));
        }
        f
    }

    pub fn feature(&self, pos: usize) -> PivotFeature {
        let (_, off, count) = self.index[pos];
        let (off, n) = (off as usize, count as usize * self.dim);
        PivotFeature {
            dim: self.dim,
            data: self.data[off..off + n].iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path).ctx(format!("create {}", path.display()))?);
        let mut buf = Vec::with_capacity(20 + self.index.len() * 20 + self.data.len() * 4);
        buf.extend_from_slice(FEATURE_MAGIC);
        buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.index.len() as u64).to_le_bytes());
        for &(id, off, count) in &self.index {
            buf.extend_from_slice(&id.to_le_bytes());
            buf.extend_from_slice(&off.to_le_bytes());
            buf.extend_from_slice(&count.to_le_bytes());
        }
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf).ctx("write features")?;
        w.flush().ctx("write features")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).ctx(format!("read {}", path.display()))?;
        let bad = |what: &str| Error::Format(format!("{}: {what}", path.display()));
        let mut r = Reader { bytes: &bytes, pos: 0 };
        if r.take(4).ok_or_else(|| bad("missing header"))? != FEATURE_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32().ok_or_else(|| bad("missing header"))?;
        if version != FEATURE_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let dim = r.u32().ok_or_else(|| bad("missing header"))? as usize;
        let n = r.u64().ok_or_else(|| bad("missing header"))? as usize;
        let mut index = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let e = (|| Some((r.u64()?, r.u64()?, r.u32()?)))().ok_or_else(|| bad("truncated index"))?;
            index.push(e);
        }
        let rest = &bytes[r.pos..];
        if rest.len() % 4 != 0 {
            return Err(bad("payload is not a whole number of floats"));
        }
        let data: Vec<f32> = rest
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        for &(_, off, count) in &index {
            if off as usize + count as usize * dim > data.len() {
                return Err(bad("index points past payload"));
            }
        }
        Ok(Self { dim, index, data })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

const SPLITS: [&str; 4] = ["train_x", "train_y", "valid_x", "valid_y"];

pub fn write_dataset(dir: &Path, d: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).ctx(format!("create {}", dir.display()))?;
    let splits = [&d.train_x, &d.train_y, &d.valid_x, &d.valid_y];
    let feats = FeatureFile::from_features(
        d.feature_dim,
        splits.iter().flat_map(|s| s.iter()).map(|r| (r.scene.id, &r.features)),
    );
    feats.save(&dir.join("features.bin"))?;

    let mut w = BufWriter::new(
        std::fs::File::create(dir.join("manifest.jsonl")).ctx("create manifest.jsonl")?,
    );
    let mut pos = 0;
    for (name, split) in SPLITS.iter().zip(splits) {
        for r in split {
            let rec = ManifestRecord {
                scene_id: r.scene.id,
                split: name.to_string(),
                language: r.caption.lang,
                tokens: r.caption.tokens.clone(),
                fact_indices: r.caption.facts.clone(),
                facts: r.scene.facts.clone(),
                feature_file_offset: feats.index[pos].1,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").ctx("write manifest")?;
            pos += 1;
        }
    }
    w.flush().ctx("write manifest")?;

    let mut lex = String::new();
    for (a, b) in &d.lexicon.pairs {
        lex.push_str(&format!("{a}\t{b}\n"));
    }
    std::fs::write(dir.join("lexicon.tsv"), lex).ctx("write lexicon")?;
    let (ta, tb): (Vec<_>, Vec<_>) = d.test.iter().map(|p| (p.a.clone(), p.b.clone())).unzip();
    write_corpus(&dir.join("test.a.txt"), &ta)?;
    write_corpus(&dir.join("test.b.txt"), &tb)
}

pub fn read_lexicon(path: &Path) -> Result<SynthLexicon> {
    let text = std::fs::read_to_string(path).ctx(format!("read {}", path.display()))?;
    let mut pairs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        match line.split_once('\t') {
            Some((a, b)) if !a.is_empty() && !b.is_empty() && !b.contains('\t') => {
                pairs.push((a.to_string(), b.to_string()))
            }
            _ => return Err(Error::Format(format!("lexicon line {}: {line:?}", ln + 1))),
        }
    }
    Ok(SynthLexicon { pairs })
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let feats = FeatureFile::load(&dir.join("features.bin"))?;
    let file = std::fs::File::open(dir.join("manifest.jsonl")).ctx("open manifest.jsonl")?;
    let mut splits: [Vec<SceneRecord>; 4] = Default::default();
    for (pos, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.ctx("read manifest")?;
        let rec: ManifestRecord = serde_json::from_str(&line)?;
        let k = SPLITS
            .iter()
            .position(|s| *s == rec.split)
            .ok_or_else(|| Error::Format(format!("manifest line {}: unknown split {}", pos + 1, rec.split)))?;
        let entry = feats
            .index
            .get(pos)
            .filter(|e| e.0 == rec.scene_id && e.1 == rec.feature_file_offset)
            .ok_or_else(|| Error::Format(format!("manifest line {} disagrees with feature index", pos + 1)))?;
        if entry.2 as usize != rec.facts.len() {
            return Err(Error::Format(format!("scene {} feature count mismatch", rec.scene_id)));
        }
        splits[k].push(SceneRecord {
            scene: SceneSpec {
                id: rec.scene_id,
                facts: rec.facts,
            },
            caption: GroundedCaption {
                scene_id: rec.scene_id,
                lang: rec.language,
                tokens: rec.tokens,
                facts: rec.fact_indices,
            },
            features: feats.feature(pos),
        });
    }
    let ta = read_corpus(&dir.join("test.a.txt"))?;
    let tb = read_corpus(&dir.join("test.b.txt"))?;
    if ta.len() != tb.len() {
        return Err(Error::Data("test sides differ in length".into()));
    }
    let test = ta
        .into_iter()
        .zip(tb)
        .enumerate()
        .map(|(i, (a, b))| ParallelPair {
            scene_id: id_space::TEST + i as u64,
            a,
            b,
        })
        .collect();
    let [train_x, train_y, valid_x, valid_y] = splits;
    Ok(Dataset {
        train_x,
        train_y,
        valid_x,
        valid_y,
        test,
        lexicon: read_lexicon(&dir.join("lexicon.tsv"))?,
        feature_dim: feats.dim,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{gen_dataset, SynthConfig};
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let cfg = SynthConfig {
            n_train: 20,
            n_valid: 5,
            n_test: 7,
            sigma: 0.3,
            ..SynthConfig::default()
        };
        let d = gen_dataset(&cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &d).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), d);
    }

    #[test]
    fn truncated_feature_file_is_rejected() {
        let f = PivotFeature {
            dim: 2,
            data: vec![1.0, 2.0, 3.0, 4.0],
        };
        let ff = FeatureFile::from_features(2, [(9, &f)]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        ff.save(&p).unwrap();
        assert_eq!(FeatureFile::load(&p).unwrap(), ff);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(FeatureFile::load(&p).is_err());
    }
}
