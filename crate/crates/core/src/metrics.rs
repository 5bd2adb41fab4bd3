//! Imperceptibility and model-utility metrics: SI-SNR, KL divergence over
//! classifier label distributions, and Fréchet distance between Gaussian
//! fits of audio embeddings (FAD).

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::spectral::{mel_filterbank, MelAnalyzer};

/// Scale-invariant SNR in dB between a reference `s` and its marked copy
/// `s_w`. Returns `+inf` when the residual vanishes.
pub fn si_snr(s: &AudioBuffer, s_w: &AudioBuffer) -> Result<f64> {
    si_snr_samples(s.samples(), s_w.samples())
}

pub fn si_snr_samples(s: &[f64], s_w: &[f64]) -> Result<f64> {
    if s.len() != s_w.len() {
        return Err(Error::LengthMismatch {
            left: s.len(),
            right: s_w.len(),
        });
    }
    let energy: f64 = s.iter().map(|x| x * x).sum();
    if energy == 0.0 {
        return Err(Error::ZeroReference);
    }
    let alpha = s.iter().zip(s_w).map(|(a, b)| a * b).sum::<f64>() / energy;
    let target = alpha * alpha * energy;
    let residual: f64 = s
        .iter()
        .zip(s_w)
        .map(|(a, b)| (alpha * a - b).powi(2))
        .sum();
    // Rounding leaves ~1e-32 relative residue on exact rescalings.
    if residual < 1e-30 || residual <= 1e-26 * target {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (target / residual).log10())
}

/// Probabilities over named classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    labels: Vec<String>,
    probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn new(labels: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if labels.len() != probs.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} labels for {} probabilities",
                labels.len(),
                probs.len()
            )));
        }
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("no classes".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidDistribution("probabilities must be finite and ≥ 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(*l)) {
            return Err(Error::InvalidDistribution(format!("duplicate label {dup:?}")));
        }
        Ok(Self { labels, probs })
    }

    /// Distribution over labels `"0"`, `"1"`, ...
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let labels = (0..probs.len()).map(|i| i.to_string()).collect();
        Self::new(labels, probs)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `other`'s probabilities in `self`'s label order.
    fn aligned(&self, other: &LabelDistribution) -> Result<Vec<f64>> {
        if self.labels == other.labels {
            return Ok(other.probs.clone());
        }
        if self.labels.len() != other.labels.len() {
            return Err(Error::LabelMismatch);
        }
        let index: HashMap<&str, f64> = other
            .labels
            .iter()
            .map(String::as_str)
            .zip(other.probs.iter().copied())
            .collect();
        self.labels
            .iter()
            .map(|l| index.get(l.as_str()).copied().ok_or(Error::LabelMismatch))
            .collect()
    }
}

/// Natural-log KL divergence `D(p || q)`; `+inf` when `q` misses mass of `p`.
pub fn kld(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    let q_probs = p.aligned(q)?;
    let mut total = 0.0;
    for (&pi, &qi) in p.probs.iter().zip(&q_probs) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += pi * (pi / qi).ln();
    }
    // Rounding can leave a tiny negative sum for p ≈ q.
    Ok(total.max(0.0))
}

/// Smaller of the two KL directions.
pub fn kld_min(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    Ok(kld(p, q)?.min(kld(q, p)?))
}

/// Mean and covariance of a set of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub n: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

const EIGEN_EPS: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 10_000;

fn symmetric_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(m, EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::NumericalFailure("symmetric eigendecomposition did not converge".into()))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Rebuilds `V f(Λ) Vᵀ`.
fn spectral_map(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mapped = eig.eigenvalues.map(f);
    &eig.eigenvectors * DMatrix::from_diagonal(&mapped) * eig.eigenvectors.transpose()
}

/// Sample mean and unbiased covariance, with negative eigenvalues clamped.
pub fn fit_gaussian(embeddings: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let dim = embeddings[0].len();
    if let Some(bad) = embeddings.iter().find(|e| e.len() != dim) {
        return Err(Error::DimMismatch {
            left: dim,
            right: bad.len(),
        });
    }
    let data = DMatrix::from_fn(n, dim, |i, j| embeddings[i][j]);
    let mean = DVector::from_fn(dim, |j, _| data.column(j).sum() / n as f64);
    let mut centered = data;
    for j in 0..dim {
        let m = mean[j];
        centered.column_mut(j).iter_mut().for_each(|x| *x -= m);
    }
    let mut covariance = symmetrize(&(centered.transpose() * &centered / (n - 1) as f64));
    let eig = symmetric_eigen(covariance.clone())?;
    if eig.eigenvalues.iter().any(|&l| l < 0.0) {
        covariance = symmetrize(&spectral_map(&eig, |l| l.max(0.0)));
    }
    Ok(GaussianStats { mean, covariance, n })
}

/// Eigenvalues at or below this are rounding noise of a rank-deficient matrix.
fn rank_floor(eigenvalues: &DVector<f64>) -> f64 {
    let max = eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    max * eigenvalues.len() as f64 * f64::EPSILON
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2 (Σa Σb)^{1/2})`.
///
/// The trace of the product root is taken as `tr sqrt(Σa^{1/2} Σb Σa^{1/2})`,
/// which has the same eigenvalues and stays symmetric.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let eig_a = symmetric_eigen(symmetrize(&a.covariance))?;
    let floor_a = rank_floor(&eig_a.eigenvalues);
    let root_a = spectral_map(&eig_a, |l| if l > floor_a { l.sqrt() } else { 0.0 });
    let inner = symmetric_eigen(symmetrize(&(&root_a * &b.covariance * &root_a)))?.eigenvalues;
    let floor = rank_floor(&inner);
    let cross = inner.iter().filter(|&&l| l > floor).map(|l| l.sqrt()).sum::<f64>();
    let value = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    if value < 0.0 {
        let scale = 1.0 + a.covariance.trace() + b.covariance.trace();
        if value < -1e-8 * scale {
            return Err(Error::NumericalFailure(format!("negative Fréchet distance {value}")));
        }
        return Ok(0.0);
    }
    Ok(value)
}

/// Maps audio to a fixed-length embedding vector.
pub trait EmbeddingExtractor: Send + Sync {
    fn extract(&self, audio: &AudioBuffer) -> Result<Vec<f64>>;
    fn dim(&self) -> usize;
    fn name(&self) -> String;
}

/// Per-band mean and standard deviation of a `log(1 + x)` mel spectrogram.
///
/// Filterbanks are built per sample rate on first use.
#[derive(Debug)]
pub struct MelStatsExtractor {
    n_mels: usize,
    n_fft: usize,
    hop: usize,
    analyzers: std::sync::Mutex<HashMap<u32, Arc<MelAnalyzer>>>,
}

impl MelStatsExtractor {
    pub fn new(n_mels: usize, n_fft: usize, hop: usize) -> Self {
        Self {
            n_mels,
            n_fft,
            hop,
            analyzers: Default::default(),
        }
    }

    fn analyzer(&self, sample_rate: u32) -> Result<Arc<MelAnalyzer>> {
        let mut cache = self.analyzers.lock().expect("analyzer cache poisoned");
        if let Some(a) = cache.get(&sample_rate) {
            return Ok(a.clone());
        }
        let fb = mel_filterbank(self.n_mels, self.n_fft, sample_rate, 0.0, sample_rate as f64 / 2.0)?;
        let analyzer = Arc::new(MelAnalyzer::new(Arc::new(fb), self.hop)?);
        cache.insert(sample_rate, analyzer.clone());
        Ok(analyzer)
    }
}

impl EmbeddingExtractor for MelStatsExtractor {
    fn extract(&self, audio: &AudioBuffer) -> Result<Vec<f64>> {
        let mel = self.analyzer(audio.sample_rate())?.analyze(audio)?;
        let frames = mel.n_frames() as f64;
        let mut means = vec![0.0; self.n_mels];
        let mut sq = vec![0.0; self.n_mels];
        for row in mel.values.iter_rows() {
            for (b, v) in row.iter().enumerate() {
                let x = v.ln_1p();
                means[b] += x;
                sq[b] += x * x;
            }
        }
        let mut out = Vec::with_capacity(2 * self.n_mels);
        for m in &mut means {
            *m /= frames;
        }
        out.extend_from_slice(&means);
        out.extend(
            sq.iter()
                .zip(&means)
                .map(|(s, m)| (s / frames - m * m).max(0.0).sqrt()),
        );
        Ok(out)
    }

    fn dim(&self) -> usize {
        2 * self.n_mels
    }

    fn name(&self) -> String {
        format!("mel-stats-{}", self.n_mels)
    }
}

/// The built-in 128-dimensional extractor: 64 log-mel bands, mean and std.
pub fn default_extractor() -> MelStatsExtractor {
    MelStatsExtractor::new(64, 2048, 512)
}

pub fn embed_all(audios: &[AudioBuffer], extractor: &dyn EmbeddingExtractor) -> Result<Vec<Vec<f64>>> {
    audios.iter().map(|a| extractor.extract(a)).collect()
}

/// Fréchet audio distance between a reference and a generated set.
pub fn fad(
    reference: &[AudioBuffer],
    generated: &[AudioBuffer],
    extractor: &dyn EmbeddingExtractor,
) -> Result<f64> {
    for set in [reference, generated] {
        if set.len() < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: set.len(),
            });
        }
    }
    let a = fit_gaussian(&embed_all(reference, extractor)?)?;
    let b = fit_gaussian(&embed_all(generated, extractor)?)?;
    frechet_distance(&a, &b)
}

/// One serialized metric value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub n_reference: usize,
    pub n_generated: usize,
    pub extractor_name: Option<String>,
}

/// Mean with sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd, n })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn gauss_1d(mean: f64, var: f64) -> GaussianStats {
        GaussianStats {
            mean: DVector::from_vec(vec![mean]),
            covariance: DMatrix::from_vec(1, 1, vec![var]),
            n: 2,
        }
    }

    #[test]
    fn si_snr_cases() {
        let s: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        for c in [1.0, -2.5, 1e-3] {
            let sw: Vec<f64> = s.iter().map(|x| c * x).collect();
            assert_eq!(si_snr_samples(&s, &sw).unwrap(), f64::INFINITY);
        }
        // Orthogonal error with 1% of the reference energy -> 20 dB.
        let n = 1000;
        let s: Vec<f64> = (0..n).map(|i| (2.0 * PI * 5.0 * i as f64 / n as f64).sin()).collect();
        let e: Vec<f64> = (0..n).map(|i| 0.1 * (2.0 * PI * 17.0 * i as f64 / n as f64).cos()).collect();
        let dot: f64 = s.iter().zip(&e).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-9);
        let sw: Vec<f64> = s.iter().zip(&e).map(|(a, b)| a + b).collect();
        assert!((si_snr_samples(&s, &sw).unwrap() - 20.0).abs() < 1e-6);

        assert!(matches!(si_snr_samples(&[0.0; 4], &[1.0; 4]), Err(Error::ZeroReference)));
        assert!(matches!(si_snr_samples(&[1.0; 4], &[1.0; 3]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn kld_cases() {
        let p = LabelDistribution::from_probs(vec![1.0, 0.0]).unwrap();
        let q = LabelDistribution::from_probs(vec![0.5, 0.5]).unwrap();
        assert_eq!(kld(&p, &p).unwrap(), 0.0);
        assert!((kld(&p, &q).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(kld(&q, &p).unwrap(), f64::INFINITY);
        assert!((kld_min(&p, &q).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(kld_min(&p, &q).unwrap(), kld_min(&q, &p).unwrap());
        assert_eq!(kld_min(&q, &q).unwrap(), 0.0);
    }

    #[test]
    fn kld_label_alignment() {
        let p = LabelDistribution::new(vec!["drum".into(), "piano".into()], vec![0.25, 0.75]).unwrap();
        let q = LabelDistribution::new(vec!["piano".into(), "drum".into()], vec![0.75, 0.25]).unwrap();
        assert_eq!(kld(&p, &q).unwrap(), 0.0);
        let r = LabelDistribution::new(vec!["drum".into(), "voice".into()], vec![0.5, 0.5]).unwrap();
        assert!(matches!(kld(&p, &r), Err(Error::LabelMismatch)));
        assert!(LabelDistribution::from_probs(vec![0.5, 0.4]).is_err());
        assert!(LabelDistribution::from_probs(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn fit_gaussian_cases() {
        let g = fit_gaussian(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(g.mean[0], 1.0);
        assert_eq!(g.covariance[(0, 0)], 2.0);

        let same = fit_gaussian(&vec![vec![1.0, -2.0, 3.0]; 5]).unwrap();
        assert!(same.covariance.iter().all(|&c| c.abs() < 1e-15));

        assert!(matches!(fit_gaussian(&[vec![1.0]]), Err(Error::TooFewSamples { .. })));
        assert!(matches!(fit_gaussian(&[vec![1.0], vec![1.0, 2.0]]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn fit_gaussian_matches_double_loop() {
        let mut r = rng::seeded(9);
        let xs: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| rng::standard_normal(&mut r) * 2.0 + 1.0).collect())
            .collect();
        let g = fit_gaussian(&xs).unwrap();
        let n = xs.len() as f64;
        let mean: Vec<f64> = (0..3).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        for i in 0..3 {
            assert!((g.mean[i] - mean[i]).abs() < 1e-10);
            for j in 0..3 {
                let mut c = 0.0;
                for x in &xs {
                    c += (x[i] - mean[i]) * (x[j] - mean[j]);
                }
                c /= n - 1.0;
                assert!((g.covariance[(i, j)] - c).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn frechet_closed_forms() {
        assert!((frechet_distance(&gauss_1d(0.0, 1.0), &gauss_1d(3.0, 1.0)).unwrap() - 9.0).abs() < 1e-9);
        assert!((frechet_distance(&gauss_1d(0.0, 1.0), &gauss_1d(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-9);
        let g = gauss_1d(2.0, 0.7);
        assert!(frechet_distance(&g, &g).unwrap() < 1e-8);
        let wide = GaussianStats {
            mean: DVector::zeros(3),
            covariance: DMatrix::identity(3, 3),
            n: 2,
        };
        assert!(matches!(frechet_distance(&g, &wide), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn frechet_commuting_diagonals() {
        // Diagonal covariances commute: tr term is sum (sqrt a - sqrt b)^2.
        let a = GaussianStats {
            mean: DVector::from_vec(vec![1.0, 2.0]),
            covariance: DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0])),
            n: 2,
        };
        let b = GaussianStats {
            mean: DVector::from_vec(vec![0.0, 0.0]),
            covariance: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0])),
            n: 2,
        };
        let expected = 5.0 + (2.0f64 - 1.0).powi(2) + (3.0f64 - 1.0).powi(2);
        assert!((frechet_distance(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn extractor_cases() {
        let ex = default_extractor();
        assert_eq!(ex.dim(), 128);
        let silence = AudioBuffer::silence(16_000, 32_000).unwrap();
        let e = ex.extract(&silence).unwrap();
        assert_eq!(e.len(), 128);
        assert!(e[..64].iter().all(|&x| x == 0.0));

        let tone = AudioBuffer::from_fn(16_000, 32_000, |t| 0.5 * (2.0 * PI * 1000.0 * t).sin()).unwrap();
        let a = ex.extract(&tone).unwrap();
        assert_eq!(a, ex.extract(&tone).unwrap());
        let fb = mel_filterbank(64, 2048, 32_000, 0.0, 16_000.0).unwrap();
        let band = crate::spectral::band_for_frequency(&fb, 1000.0).unwrap();
        assert!(a[band] > 1.0);
        assert!(a[band] > e[band]);
    }

    fn noise_set(n: usize, seed: u64, gain: f64) -> Vec<AudioBuffer> {
        (0..n)
            .map(|i| {
                let mut r = rng::seeded(rng::derive_seed(seed, 0, i as u64));
                AudioBuffer::new((0..8192).map(|_| gain * rng::standard_normal(&mut r)).collect(), 32_000)
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn fad_cases() {
        let ex = default_extractor();
        let set = noise_set(6, 1, 0.1);
        assert!(fad(&set, &set, &ex).unwrap() < 1e-8);
        let doubled: Vec<AudioBuffer> = set.iter().map(|a| a.scaled(2.0).unwrap()).collect();
        assert!(fad(&set, &doubled, &ex).unwrap() > 0.0);
        assert!(matches!(fad(&set[..1], &set, &ex), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn fad_finite_sample_bias_shrinks() {
        // Two disjoint draws from one distribution.
        let ex = MelStatsExtractor::new(8, 512, 256);
        let small = fad(&noise_set(10, 2, 0.1), &noise_set(10, 3, 0.1), &ex).unwrap();
        let large = fad(&noise_set(80, 4, 0.1), &noise_set(80, 5, 0.1), &ex).unwrap();
        assert!(small > 0.0 && large > 0.0);
        assert!(large < small, "{large} !< {small}");
    }

    fn random_psd(r: &mut rng::StreamRng, dim: usize) -> GaussianStats {
        let a = DMatrix::from_fn(dim, dim, |_, _| rng::standard_normal(r));
        GaussianStats {
            mean: DVector::from_fn(dim, |_, _| rng::standard_normal(r)),
            covariance: &a * a.transpose(),
            n: 2,
        }
    }

    #[test]
    fn frechet_symmetric_and_nonnegative() {
        let mut r = rng::seeded(5);
        for _ in 0..50 {
            let a = random_psd(&mut r, 4);
            let b = random_psd(&mut r, 4);
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            assert!(ab >= 0.0);
            assert!((ab - ba).abs() < 1e-8 * (1.0 + ab));
        }
    }

    proptest! {
        #[test]
        fn si_snr_joint_and_single_scale_invariance(
            seed in any::<u64>(), c in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0]
        ) {
            let mut r = rng::seeded(seed);
            let s: Vec<f64> = (0..256).map(|_| rng::standard_normal(&mut r)).collect();
            let sw: Vec<f64> = s.iter().map(|x| x + 0.3 * rng::standard_normal(&mut r)).collect();
            let base = si_snr_samples(&s, &sw).unwrap();
            let cs: Vec<f64> = s.iter().map(|x| c * x).collect();
            let csw: Vec<f64> = sw.iter().map(|x| c * x).collect();
            prop_assert!((si_snr_samples(&cs, &csw).unwrap() - base).abs() < 1e-9);
            prop_assert!((si_snr_samples(&s, &csw).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn kld_gibbs(a in prop::collection::vec(0.0f64..1.0, 2..8), seed in any::<u64>()) {
            let total: f64 = a.iter().sum();
            prop_assume!(total > 1e-6);
            let p: Vec<f64> = a.iter().map(|x| x / total).collect();
            let mut r = rng::seeded(seed);
            let b: Vec<f64> = (0..p.len()).map(|_| rng::uniform(&mut r) + 1e-3).collect();
            let tb: f64 = b.iter().sum();
            let q: Vec<f64> = b.iter().map(|x| x / tb).collect();
            // Renormalize so sums are exact to within 1e-9.
            let p = LabelDistribution::from_probs(p).unwrap();
            let q = LabelDistribution::from_probs(q).unwrap();
            prop_assert!(kld(&p, &q).unwrap() >= 0.0);
            prop_assert!(kld_min(&p, &p).unwrap() == 0.0);
        }

        #[test]
        fn fad_is_permutation_invariant(seed in 0u64..1000) {
            let ex = MelStatsExtractor::new(8, 512, 256);
            let a = noise_set(5, seed, 0.1);
            let b = noise_set(5, seed + 1, 0.2);
            let mut a_rev = a.clone();
            a_rev.reverse();
            let mut b_rot = b.clone();
            b_rot.rotate_left(2);
            let x = fad(&a, &b, &ex).unwrap();
            let y = fad(&a_rev, &b_rot, &ex).unwrap();
            prop_assert!((x - y).abs() < 1e-8 * (1.0 + x));
        }
    }
}
