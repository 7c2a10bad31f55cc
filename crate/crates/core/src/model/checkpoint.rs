//! Versioned binary checkpoints: a JSON header (kind, config echo, vocab,
//! labels) followed by named flat f64 weight sections.

use super::config::{PredictorConfig, SurrogateConfig};
use super::predictor::BBoxPredictor;
use super::surrogate::SurrogateModel;
use super::vocab::{LabelSet, Vocab};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"DADV";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SurrogateHeader {
    kind: String,
    config: SurrogateConfig,
    vocab: Vec<String>,
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct PredictorHeader {
    kind: String,
    config: PredictorConfig,
}

fn write_file(path: &Path, header: &[u8], sections: Vec<(String, &[f64])>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(header.len() as u64).to_le_bytes())?;
    f.write_all(header)?;
    f.write_all(&(sections.len() as u64).to_le_bytes())?;
    for (name, data) in sections {
        let nb = name.as_bytes();
        f.write_all(&(nb.len() as u64).to_le_bytes())?;
        f.write_all(nb)?;
        f.write_all(&(data.len() as u64).to_le_bytes())?;
        for v in data {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

struct Loaded {
    header: Vec<u8>,
    sections: Vec<(String, Vec<f64>)>,
}

fn read_file(path: &Path) -> Result<Loaded> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)
        .map_err(|_| bad("truncated magic"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut u32b = [0u8; 4];
    f.read_exact(&mut u32b)
        .map_err(|_| bad("truncated version"))?;
    let version = u32::from_le_bytes(u32b);
    if version != VERSION {
        return Err(bad(&format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let mut u64b = [0u8; 8];
    f.read_exact(&mut u64b)
        .map_err(|_| bad("truncated header length"))?;
    let hlen = u64::from_le_bytes(u64b) as usize;
    let mut header = vec![0u8; hlen];
    f.read_exact(&mut header)
        .map_err(|_| bad("truncated header"))?;
    f.read_exact(&mut u64b)
        .map_err(|_| bad("truncated section count"))?;
    let n = u64::from_le_bytes(u64b) as usize;
    let mut sections = Vec::with_capacity(n);
    for _ in 0..n {
        f.read_exact(&mut u64b)
            .map_err(|_| bad("truncated section name"))?;
        let nlen = u64::from_le_bytes(u64b) as usize;
        let mut nb = vec![0u8; nlen];
        f.read_exact(&mut nb)
            .map_err(|_| bad("truncated section name"))?;
        let name = String::from_utf8(nb).map_err(|_| bad("section name not utf-8"))?;
        f.read_exact(&mut u64b)
            .map_err(|_| bad("truncated section length"))?;
        let dlen = u64::from_le_bytes(u64b) as usize;
        let mut data = Vec::with_capacity(dlen);
        let mut f64b = [0u8; 8];
        for _ in 0..dlen {
            f.read_exact(&mut f64b)
                .map_err(|_| bad("truncated section data"))?;
            data.push(f64::from_le_bytes(f64b));
        }
        sections.push((name, data));
    }
    Ok(Loaded { header, sections })
}

fn fill_params(
    path: &Path,
    names: Vec<String>,
    params: Vec<&mut crate::diff::Tensor>,
    sections: Vec<(String, Vec<f64>)>,
) -> Result<()> {
    let map: std::collections::HashMap<String, Vec<f64>> = sections.into_iter().collect();
    if map.len() != names.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {} sections for {} parameters",
            path.display(),
            map.len(),
            names.len()
        )));
    }
    for (name, param) in names.into_iter().zip(params) {
        let data = map.get(&name).ok_or_else(|| {
            Error::Checkpoint(format!("{}: missing section '{name}'", path.display()))
        })?;
        if data.len() != param.numel() {
            return Err(Error::Checkpoint(format!(
                "{}: section '{name}' holds {} values, parameter wants {}",
                path.display(),
                data.len(),
                param.numel()
            )));
        }
        param.data_mut().copy_from_slice(data);
    }
    Ok(())
}

pub fn save_surrogate(path: &Path, model: &SurrogateModel) -> Result<()> {
    let header = serde_json::to_vec(&SurrogateHeader {
        kind: "surrogate".into(),
        config: model.cfg.clone(),
        vocab: model.vocab.words().to_vec(),
        labels: model.labels.tags().to_vec(),
    })?;
    let sections = model
        .param_names()
        .into_iter()
        .zip(model.params().into_iter().map(|t| t.data()))
        .collect();
    write_file(path, &header, sections)
}

pub fn load_surrogate(path: &Path) -> Result<SurrogateModel> {
    let loaded = read_file(path)?;
    let header: SurrogateHeader = serde_json::from_slice(&loaded.header)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if header.kind != "surrogate" {
        return Err(Error::Checkpoint(format!(
            "{}: checkpoint kind '{}' is not a surrogate",
            path.display(),
            header.kind
        )));
    }
    let vocab = Vocab::from_words(header.vocab);
    let labels = LabelSet::from_tags(header.labels);
    let mut model = SurrogateModel::new(header.config, vocab, labels)?;
    fill_params(
        path,
        model.param_names(),
        model.params_mut(),
        loaded.sections,
    )?;
    Ok(model)
}

pub fn save_predictor(path: &Path, predictor: &BBoxPredictor) -> Result<()> {
    let header = serde_json::to_vec(&PredictorHeader {
        kind: "bbox_predictor".into(),
        config: predictor.cfg.clone(),
    })?;
    let sections = predictor
        .param_names()
        .into_iter()
        .zip(predictor.params().into_iter().map(|t| t.data()))
        .collect();
    write_file(path, &header, sections)
}

pub fn load_predictor(path: &Path) -> Result<BBoxPredictor> {
    let loaded = read_file(path)?;
    let header: PredictorHeader = serde_json::from_slice(&loaded.header)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if header.kind != "bbox_predictor" {
        return Err(Error::Checkpoint(format!(
            "{}: checkpoint kind '{}' is not a bbox predictor",
            path.display(),
            header.kind
        )));
    }
    let mut predictor = BBoxPredictor::new(header.config)?;
    fill_params(
        path,
        predictor.param_names(),
        predictor.params_mut(),
        loaded.sections,
    )?;
    Ok(predictor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, Granularity, SynthConfig};
    use crate::model::{train_surrogate, SurrogateTrainConfig};

    fn tmp(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("docadv-ckpt-{name}-{}.dckpt", std::process::id()))
    }

    #[test]
    fn surrogate_round_trips() {
        let corpus = synth_corpus(&SynthConfig {
            docs: 10,
            seed: 41,
            rasters: false,
            ..Default::default()
        });
        let (model, _) = train_surrogate(
            &corpus,
            &SurrogateConfig::desk(1),
            &SurrogateTrainConfig {
                epochs: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let p = tmp("surrogate");
        save_surrogate(&p, &model).unwrap();
        let back = load_surrogate(&p).unwrap();
        assert_eq!(back, model);
        // loaded model computes identical losses
        assert_eq!(
            model.task_loss(&corpus.docs[0]).unwrap().to_bits(),
            back.task_loss(&corpus.docs[0]).unwrap().to_bits()
        );
    }

    #[test]
    fn predictor_round_trips() {
        let cfg = PredictorConfig::desk(16, Granularity::Line, 2);
        let pred = BBoxPredictor::new(cfg).unwrap();
        let p = tmp("predictor");
        save_predictor(&p, &pred).unwrap();
        let back = load_predictor(&p).unwrap();
        assert_eq!(back, pred);
    }

    #[test]
    fn kind_mismatch_is_an_error() {
        let cfg = PredictorConfig::desk(16, Granularity::Line, 2);
        let pred = BBoxPredictor::new(cfg).unwrap();
        let p = tmp("kind");
        save_predictor(&p, &pred).unwrap();
        assert!(load_surrogate(&p).is_err());
    }

    #[test]
    fn corrupt_file_is_an_error() {
        let p = tmp("corrupt");
        std::fs::write(&p, b"not a checkpoint").unwrap();
        assert!(load_surrogate(&p).is_err());
    }
}
