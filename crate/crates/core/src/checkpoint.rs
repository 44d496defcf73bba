//! On-disk checkpoints: one directory per saved step plus `best/`.
//!
//! ```text
//! manifest.json      format version, configs, step, last metrics
//! symtab.json        target vocabulary
//! source_vocab.json  source vocabulary
//! params.bin/.json   parameters
//! optim.bin/.json    Adam moments, named m.<param> and v.<param>
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ptrparse_tensor::{read_blob, write_blob, Tensor};
use serde::{Deserialize, Serialize};

use crate::decode::BeamConfig;
use crate::model::{Model, ModelConfig};
use crate::pipeline::{Error, Result, Vocabularies};
use crate::symtab::{SourceVocab, SymbolTable};
use crate::train::{AdamState, MetricsRecord, TrainConfig};

pub const FORMAT_VERSION: u32 = 1;
const KEEP: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub beam: BeamConfig,
    pub step: u64,
    pub metrics: Option<MetricsRecord>,
    pub best_dev_em: Option<f64>,
}

pub struct Checkpoint {
    pub manifest: Manifest,
    pub model: Model,
    pub optim: AdamState,
    pub vocab: Vocabularies,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Write a checkpoint into `dir`, replacing it atomically.
pub fn save(dir: &Path, manifest: &Manifest, model: &Model, optim: &AdamState, vocab: &Vocabularies) -> Result<()> {
    let tmp = dir.with_extension("tmp");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io(&tmp))?;
    }
    fs::create_dir_all(&tmp).map_err(io(&tmp))?;
    let manifest_text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(tmp.join("manifest.json"), manifest_text).map_err(io(&tmp))?;
    vocab.symtab.save(&tmp.join("symtab.json"))?;
    vocab.source.save(&tmp.join("source_vocab.json"))?;
    write_blob(&tmp.join("params.bin"), &tmp.join("params.json"), model.named_params())?;
    let names: Vec<(String, &Tensor)> = model
        .names()
        .iter()
        .zip(&optim.m)
        .map(|(n, t)| (format!("m.{n}"), t))
        .chain(model.names().iter().zip(&optim.v).map(|(n, t)| (format!("v.{n}"), t)))
        .collect();
    write_blob(
        &tmp.join("optim.bin"),
        &tmp.join("optim.json"),
        names.iter().map(|(n, t)| (n.as_str(), *t)),
    )?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io(dir))?;
    }
    fs::rename(&tmp, dir).map_err(io(dir))?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(&path, e.to_string()))?;
    let version = value.get("format_version").and_then(|v| v.as_u64());
    if version != Some(FORMAT_VERSION as u64) {
        return Err(bad(
            &path,
            format!("format version {version:?} is not the supported {FORMAT_VERSION}"),
        ));
    }
    serde_json::from_value(value).map_err(|e| bad(&path, e.to_string()))
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest = load_manifest(dir)?;
    let vocab = Vocabularies {
        symtab: SymbolTable::load(&dir.join("symtab.json"))?,
        source: SourceVocab::load(&dir.join("source_vocab.json"))?,
    };
    if vocab.symtab.vocab_size() != manifest.model.vocab_size || vocab.source.size() != manifest.model.src_vocab_size {
        return Err(bad(dir, "vocabulary sizes disagree with the model config"));
    }
    let params = read_blob(&dir.join("params.bin"), &dir.join("params.json"))?;
    let model = Model::from_params(manifest.model.clone(), params)?;
    let mut moments = read_blob(&dir.join("optim.bin"), &dir.join("optim.json"))?;
    let mut take = |prefix: &str| -> Result<Vec<Tensor>> {
        model
            .names()
            .iter()
            .map(|n| {
                let key = format!("{prefix}.{n}");
                let i = moments
                    .iter()
                    .position(|(k, _)| *k == key)
                    .ok_or_else(|| bad(dir, format!("optimizer state lacks {key}")))?;
                Ok(moments.swap_remove(i).1)
            })
            .collect()
    };
    let m = take("m")?;
    let v = take("v")?;
    for (t, p) in m.iter().chain(&v).zip(model.params().iter().chain(model.params())) {
        if t.shape() != p.shape() {
            return Err(bad(dir, "optimizer state shape mismatch"));
        }
    }
    let optim = AdamState {
        step: manifest.step,
        m,
        v,
    };
    Ok(Checkpoint {
        manifest,
        model,
        optim,
        vocab,
    })
}

/// A run directory holding `step-NNNNNN/` checkpoints and `best/`.
pub struct CheckpointStore {
    root: PathBuf,
}

impl CheckpointStore {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(io(root))?;
        Ok(CheckpointStore { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn step_dir(&self, step: u64) -> PathBuf {
        self.root.join(format!("step-{step:06}"))
    }

    pub fn best_dir(&self) -> PathBuf {
        self.root.join("best")
    }

    fn steps(&self) -> Result<Vec<(u64, PathBuf)>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io(&self.root))? {
            let entry = entry.map_err(io(&self.root))?;
            let name = entry.file_name();
            if let Some(step) = name.to_str().and_then(|n| n.strip_prefix("step-")).and_then(|s| s.parse().ok()) {
                if entry.path().join("manifest.json").exists() {
                    out.push((step, entry.path()));
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Save a step checkpoint and drop all but the newest three.
    pub fn save_step(&self, manifest: &Manifest, model: &Model, optim: &AdamState, vocab: &Vocabularies) -> Result<PathBuf> {
        let dir = self.step_dir(manifest.step);
        save(&dir, manifest, model, optim, vocab)?;
        let steps = self.steps()?;
        for (_, old) in steps.iter().take(steps.len().saturating_sub(KEEP)) {
            fs::remove_dir_all(old).map_err(io(old))?;
        }
        Ok(dir)
    }

    pub fn save_best(&self, manifest: &Manifest, model: &Model, optim: &AdamState, vocab: &Vocabularies) -> Result<PathBuf> {
        let dir = self.best_dir();
        save(&dir, manifest, model, optim, vocab)?;
        Ok(dir)
    }

    pub fn latest(&self) -> Result<Option<PathBuf>> {
        Ok(self.steps()?.pop().map(|(_, p)| p))
    }
}

/// A checkpoint directory itself, or a run directory: its `best/` if
/// present, else its newest step.
pub fn resolve(path: &Path) -> Result<PathBuf> {
    if path.join("manifest.json").exists() {
        return Ok(path.to_path_buf());
    }
    if !path.is_dir() {
        return Err(bad(path, "no such checkpoint"));
    }
    let store = CheckpointStore { root: path.to_path_buf() };
    if store.best_dir().join("manifest.json").exists() {
        return Ok(store.best_dir());
    }
    store.latest()?.ok_or_else(|| bad(path, "no checkpoint found"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SyntheticGrammar};

    fn fixture() -> (Manifest, Model, AdamState, Vocabularies) {
        let s = generate_synthetic(&SyntheticGrammar::default(), 30, 5).unwrap();
        let vocab = Vocabularies::build(&s.train, None).unwrap();
        let cfg = ModelConfig::tiny(vocab.symtab.vocab_size(), vocab.source.size(), vocab.symtab.max_src_len());
        let model = Model::new(cfg.clone(), 3).unwrap();
        let mut optim = AdamState::new(model.params());
        optim.m[0] = Tensor::full(optim.m[0].shape().to_vec(), 0.25);
        optim.step = 7;
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            model: cfg,
            train: TrainConfig::default(),
            beam: BeamConfig::default(),
            step: 7,
            metrics: None,
            best_dev_em: None,
        };
        (manifest, model, optim, vocab)
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (man, model, optim, vocab) = fixture();
        let path = dir.path().join("ck");
        save(&path, &man, &model, &optim, &vocab).unwrap();
        let ck = load(&path).unwrap();
        assert_eq!(ck.manifest, man);
        assert_eq!(ck.optim, optim);
        assert_eq!(ck.vocab, vocab);
        assert_eq!(ck.model.params(), model.params());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (mut man, model, optim, vocab) = fixture();
        man.format_version = FORMAT_VERSION + 1;
        save(dir.path(), &man, &model, &optim, &vocab).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn rotation_keeps_three_and_best() {
        let dir = tempfile::tempdir().unwrap();
        let store = CheckpointStore::new(dir.path()).unwrap();
        let (mut man, model, optim, vocab) = fixture();
        for step in 1..=5 {
            man.step = step;
            store.save_step(&man, &model, &optim, &vocab).unwrap();
        }
        store.save_best(&man, &model, &optim, &vocab).unwrap();
        let kept: Vec<u64> = store.steps().unwrap().iter().map(|s| s.0).collect();
        assert_eq!(kept, vec![3, 4, 5]);
        assert_eq!(resolve(dir.path()).unwrap(), store.best_dir());
    }
}
