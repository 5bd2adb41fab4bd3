//! Desk-scale generative stand-in: a vector-quantizing codec over log-mel
//! frames and an n-gram model over its tokens.

mod codebook;
mod decoder;
mod ngram;

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use codebook::{fit_codebook, fit_codebook_with, fit_frames, Codebook, KMeansOptions};
pub use ngram::{train_ngram, ContextCounts, GenerationConfig, NGramModel, GREEDY_TEMPERATURE};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::spectral::Matrix;

/// Frame analysis shared by the codec and the detector.
pub type FeatureParams = crate::detect::MelParams;

pub fn encode(audio: &AudioBuffer, codebook: &Codebook) -> Result<Vec<u32>> {
    codebook.encode(audio)
}

pub fn decode(tokens: &[u32], codebook: &Codebook) -> Result<AudioBuffer> {
    codebook.decode(tokens)
}

pub fn generate_continuation(model: &NGramModel, prompt: &[u32], config: &GenerationConfig) -> Result<Vec<u32>> {
    model.generate(prompt, config)
}

const MAGIC: &[u8; 8] = b"PMTOKv1\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Payload {
    Codebook,
    Ngram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    payload: Payload,
    #[serde(rename = "K")]
    k: usize,
    order: Option<usize>,
    feature_params: Option<FeatureParams>,
    sample_rate: Option<u32>,
    smoothing: Option<f64>,
    decoder_bins: Option<usize>,
}

fn write_file(path: &Path, header: &Header, payload: &[u8]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let mut bytes = Vec::with_capacity(MAGIC.len() + 4 + json.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(payload);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path, expected: Payload) -> Result<(Header, Vec<u8>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CorruptFile(format!("{} is not a token model file", path.display())));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let json = bytes
        .get(12..12 + len)
        .ok_or_else(|| Error::CorruptFile("truncated header".into()))?;
    let header: Header = serde_json::from_slice(json)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedFormat(format!("format version {}", header.format_version)));
    }
    if header.payload != expected {
        return Err(Error::CorruptFile(format!(
            "{} holds a {:?} payload, expected {:?}",
            path.display(),
            header.payload,
            expected
        )));
    }
    Ok((header, bytes[12 + len..].to_vec()))
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.0.len() < N {
            return Err(Error::CorruptFile("truncated payload".into()));
        }
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(head.try_into().unwrap())
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let data = (0..rows)
            .map(|_| (0..cols).map(|_| self.f64()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(if rows == 0 { Matrix::zeros(0, cols) } else { Matrix::from_rows(&data) })
    }

    fn finish(&self) -> Result<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(Error::CorruptFile(format!("{} trailing bytes", self.0.len())))
        }
    }
}

pub fn save_codebook(path: &Path, codebook: &Codebook) -> Result<()> {
    let powers = codebook.synth.powers();
    let header = Header {
        format_version: FORMAT_VERSION,
        payload: Payload::Codebook,
        k: codebook.size(),
        order: None,
        feature_params: Some(codebook.params()),
        sample_rate: Some(codebook.sample_rate()),
        smoothing: None,
        decoder_bins: Some(powers.cols()),
    };
    let mut payload = Vec::new();
    for x in codebook.centroids().as_slice().iter().chain(powers.as_slice()) {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    write_file(path, &header, &payload)
}

pub fn load_codebook(path: &Path) -> Result<Codebook> {
    let (header, payload) = read_file(path, Payload::Codebook)?;
    let missing = |field: &str| Error::CorruptFile(format!("codebook header lacks {field}"));
    let params = header.feature_params.ok_or_else(|| missing("feature_params"))?;
    let sample_rate = header.sample_rate.ok_or_else(|| missing("sample_rate"))?;
    let bins = header.decoder_bins.ok_or_else(|| missing("decoder_bins"))?;
    let mut cur = Cursor(&payload);
    let centroids = cur.matrix(header.k, params.n_mels)?;
    let powers = cur.matrix(header.k, bins)?;
    cur.finish()?;
    Codebook::from_parts(centroids, params, sample_rate, powers)
}

pub fn save_model(path: &Path, model: &NGramModel) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        payload: Payload::Ngram,
        k: model.vocab(),
        order: Some(model.order()),
        feature_params: None,
        sample_rate: None,
        smoothing: Some(model.smoothing()),
        decoder_bins: None,
    };
    let mut payload = Vec::new();
    for table in &model.tables {
        let mut keys: Vec<&u64> = table.keys().collect();
        keys.sort_unstable();
        payload.extend_from_slice(&(keys.len() as u64).to_le_bytes());
        for key in keys {
            let counts = &table[key];
            payload.extend_from_slice(&key.to_le_bytes());
            payload.extend_from_slice(&(counts.next.len() as u32).to_le_bytes());
            for &(t, n) in &counts.next {
                payload.extend_from_slice(&t.to_le_bytes());
                payload.extend_from_slice(&n.to_le_bytes());
            }
        }
    }
    write_file(path, &header, &payload)
}

pub fn load_model(path: &Path) -> Result<NGramModel> {
    let (header, payload) = read_file(path, Payload::Ngram)?;
    let order = header.order.ok_or_else(|| Error::CorruptFile("model header lacks order".into()))?;
    let smoothing = header
        .smoothing
        .ok_or_else(|| Error::CorruptFile("model header lacks smoothing".into()))?;
    let mut cur = Cursor(&payload);
    let mut tables = Vec::with_capacity(order);
    for _ in 0..order {
        let n = cur.u64()? as usize;
        let mut table = HashMap::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let key = cur.u64()?;
            let len = cur.u32()? as usize;
            let mut next = Vec::with_capacity(len.min(1 << 16));
            for _ in 0..len {
                let t = cur.u32()?;
                if t as usize >= header.k {
                    return Err(Error::InvalidToken { token: t, size: header.k });
                }
                next.push((t, cur.u32()?));
            }
            let total = next.iter().map(|e| e.1 as u64).sum();
            table.insert(key, ContextCounts { next, total });
        }
        tables.push(table);
    }
    cur.finish()?;
    NGramModel::from_tables(order, header.k, smoothing, tables)
}

pub fn tokens_to_json(tokens: &[u32]) -> Result<String> {
    Ok(serde_json::to_string(tokens)?)
}

pub fn tokens_from_json(text: &str) -> Result<Vec<u32>> {
    Ok(serde_json::from_str(text)?)
}
