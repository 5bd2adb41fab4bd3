use std::sync::Arc;

use rand::seq::index;

use super::decoder::Synthesizer;
use super::FeatureParams;
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::rng;
use crate::spectral::{MelAnalyzer, Matrix};

/// k-means settings for [`fit_codebook_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct KMeansOptions {
    pub iterations: usize,
    /// Frames beyond this many are subsampled before clustering.
    pub max_frames: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            iterations: 20,
            max_frames: 8192,
        }
    }
}

/// Vector-quantization codebook over `log(1 + mel)` frames.
#[derive(Debug, Clone)]
pub struct Codebook {
    centroids: Matrix,
    params: FeatureParams,
    sample_rate: u32,
    analyzer: Arc<MelAnalyzer>,
    pub(super) synth: Arc<Synthesizer>,
}

impl PartialEq for Codebook {
    fn eq(&self, other: &Self) -> bool {
        self.centroids == other.centroids
            && self.params == other.params
            && self.sample_rate == other.sample_rate
            && self.synth.powers() == other.synth.powers()
    }
}

impl Codebook {
    /// Codebook with the given centroids; calibrates its decoder.
    pub fn from_centroids(centroids: Matrix, params: FeatureParams, sample_rate: u32) -> Result<Self> {
        let analyzer = analyzer_for(params, sample_rate)?;
        check_centroids(&centroids, params)?;
        let synth = Synthesizer::calibrate(&centroids, analyzer.filterbank(), params.hop)?;
        Ok(Self {
            centroids,
            params,
            sample_rate,
            analyzer,
            synth: Arc::new(synth),
        })
    }

    /// Codebook with decoder powers restored from storage.
    pub(super) fn from_parts(
        centroids: Matrix,
        params: FeatureParams,
        sample_rate: u32,
        powers: Matrix,
    ) -> Result<Self> {
        let analyzer = analyzer_for(params, sample_rate)?;
        check_centroids(&centroids, params)?;
        let synth = Synthesizer::from_powers(powers, params)?;
        if synth.powers().rows() != centroids.rows() {
            return Err(Error::CorruptFile("decoder table does not match the codebook size".into()));
        }
        Ok(Self {
            centroids,
            params,
            sample_rate,
            analyzer,
            synth: Arc::new(synth),
        })
    }

    pub fn size(&self) -> usize {
        self.centroids.rows()
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn params(&self) -> FeatureParams {
        self.params
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// `log(1 + mel)` frames of `audio`.
    pub fn features(&self, audio: &AudioBuffer) -> Result<Matrix> {
        log_mel_frames(&self.analyzer, audio)
    }

    /// Nearest-centroid token of every frame.
    pub fn encode(&self, audio: &AudioBuffer) -> Result<Vec<u32>> {
        Ok(self.encode_features(&self.features(audio)?))
    }

    pub fn encode_features(&self, features: &Matrix) -> Vec<u32> {
        features.iter_rows().map(|f| nearest(&self.centroids, f).0 as u32).collect()
    }

    pub fn decode(&self, tokens: &[u32]) -> Result<AudioBuffer> {
        self.synth.decode(tokens, self.sample_rate)
    }
}

fn analyzer_for(params: FeatureParams, sample_rate: u32) -> Result<Arc<MelAnalyzer>> {
    let fb = params.filterbank(sample_rate)?;
    Ok(Arc::new(MelAnalyzer::new(Arc::new(fb), params.hop)?))
}

fn check_centroids(centroids: &Matrix, params: FeatureParams) -> Result<()> {
    if centroids.rows() == 0 {
        return Err(Error::Config("codebook needs at least one centroid".into()));
    }
    if centroids.rows() > u32::MAX as usize {
        return Err(Error::Config("codebook too large".into()));
    }
    if centroids.cols() != params.n_mels {
        return Err(Error::DimMismatch {
            left: centroids.cols(),
            right: params.n_mels,
        });
    }
    if centroids.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::Config("centroids must be finite".into()));
    }
    Ok(())
}

fn log_mel_frames(analyzer: &MelAnalyzer, audio: &AudioBuffer) -> Result<Matrix> {
    let mut values = analyzer.analyze(audio)?.values;
    for i in 0..values.rows() {
        values.row_mut(i).iter_mut().for_each(|v| *v = v.ln_1p());
    }
    Ok(values)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the closest centroid; ties go to the
/// lower index.
fn nearest(centroids: &Matrix, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter_rows().enumerate() {
        let mut d = 0.0;
        for (a, b) in x.iter().zip(c) {
            d += (a - b) * (a - b);
            if d >= best.1 {
                break;
            }
        }
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// [`fit_codebook_with`] under default k-means options.
pub fn fit_codebook(corpus: &[AudioBuffer], k: usize, params: FeatureParams, seed: u64) -> Result<Codebook> {
    fit_codebook_with(corpus, k, params, seed, KMeansOptions::default())
}

/// k-means++ seeding followed by Lloyd iterations over the corpus frames.
pub fn fit_codebook_with(
    corpus: &[AudioBuffer],
    k: usize,
    params: FeatureParams,
    seed: u64,
    options: KMeansOptions,
) -> Result<Codebook> {
    if k == 0 {
        return Err(Error::Config("codebook size must be positive".into()));
    }
    if options.max_frames < k {
        return Err(Error::Config(format!(
            "max_frames {} is below the codebook size {k}",
            options.max_frames
        )));
    }
    let sample_rate = corpus.first().ok_or(Error::TooFewFrames { needed: k, got: 0 })?.sample_rate();
    let analyzer = analyzer_for(params, sample_rate)?;
    let mut frames = Vec::new();
    for audio in corpus {
        if audio.len() < params.n_fft {
            continue;
        }
        let f = log_mel_frames(&analyzer, audio)?;
        frames.extend(f.iter_rows().map(<[f64]>::to_vec));
    }
    fit_frames(frames, k, params, sample_rate, seed, options)
}

/// Clusters precomputed `log(1 + mel)` frames.
pub fn fit_frames(
    mut frames: Vec<Vec<f64>>,
    k: usize,
    params: FeatureParams,
    sample_rate: u32,
    seed: u64,
    options: KMeansOptions,
) -> Result<Codebook> {
    if frames.len() < k {
        return Err(Error::TooFewFrames {
            needed: k,
            got: frames.len(),
        });
    }
    let mut r = rng::seeded(seed);
    if frames.len() > options.max_frames {
        let mut keep = index::sample(&mut r, frames.len(), options.max_frames).into_vec();
        keep.sort_unstable();
        frames = keep.into_iter().map(|i| std::mem::take(&mut frames[i])).collect();
    }
    let data = Matrix::from_rows(&frames);
    let mut centroids = kmeans_pp(&data, k, &mut r)?;
    lloyd(&data, &mut centroids, options.iterations);
    Codebook::from_centroids(centroids, params, sample_rate)
}

/// Frames closer than this (squared distance) count as duplicates.
const DUPLICATE_SQ_DIST: f64 = 1e-18;

fn kmeans_pp(data: &Matrix, k: usize, r: &mut rng::StreamRng) -> Result<Matrix> {
    let n = data.rows();
    let mut chosen = vec![rng::below(r, n)];
    let gap = |x: &[f64], c: &[f64]| {
        let d = sq_dist(x, c);
        if d <= DUPLICATE_SQ_DIST {
            0.0
        } else {
            d
        }
    };
    let mut d2: Vec<f64> = data.iter_rows().map(|x| gap(x, data.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::TooFewFrames {
                needed: k,
                got: chosen.len(),
            });
        }
        let mut target = rng::uniform(r) * total;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        // Rounding at the end of the scan can land on a zero-weight frame.
        while d2[pick] == 0.0 {
            pick -= 1;
        }
        chosen.push(pick);
        let c = data.row(pick).to_vec();
        for (i, x) in data.iter_rows().enumerate() {
            d2[i] = d2[i].min(gap(x, &c));
        }
    }
    let rows: Vec<Vec<f64>> = chosen.iter().map(|&i| data.row(i).to_vec()).collect();
    Ok(Matrix::from_rows(&rows))
}

fn lloyd(data: &Matrix, centroids: &mut Matrix, iterations: usize) {
    let (k, dim) = (centroids.rows(), centroids.cols());
    let mut assign = vec![usize::MAX; data.rows()];
    for _ in 0..iterations {
        let mut changed = false;
        let mut dists = vec![0.0; data.rows()];
        for (i, x) in data.iter_rows().enumerate() {
            let (c, d) = nearest(centroids, x);
            dists[i] = d;
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, x) in data.iter_rows().enumerate() {
            counts[assign[i]] += 1;
            sums.row_mut(assign[i]).iter_mut().zip(x).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster at the worst-served frame.
                let far = (0..data.rows())
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap();
                centroids.row_mut(c).copy_from_slice(data.row(far));
                dists[far] = 0.0;
                assign[far] = c;
                continue;
            }
            let n = counts[c] as f64;
            centroids
                .row_mut(c)
                .iter_mut()
                .zip(sums.row(c))
                .for_each(|(m, s)| *m = s / n);
        }
    }
}
