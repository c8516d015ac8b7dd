//! Synthetic source data and label-withheld test streams whose distribution
//! shift varies over time.
//!
//! The source task is `C` isotropic Gaussian clusters in `F` dimensions. Test
//! batches are fresh source draws pushed through a severity-scaled transform
//! `x ↦ G·((1-λ)I + λR)·x + s·o + s·σ·ε`, where `R` is a random rotation,
//! `G` a diagonal gain, `o` an offset and `λ` grows with severity `s`. The
//! transform is identical to the identity at `s = 0`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_err, Error, Result};
use crate::numeric::{l2_distance, Matrix};

/// Labelled dataset (source training data, or a revealed stream).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub n_classes: usize,
    pub dim: usize,
    /// `n_classes x dim`.
    pub cluster_means: Matrix,
    pub cluster_std: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Minimum pairwise distance between cluster means, in units of `cluster_std`.
pub const MIN_SEPARATION: f64 = 6.0;

impl SourceSpec {
    /// Cluster means along random orthonormal directions at distance `radius`
    /// from the origin (pairwise distance `radius·√2`). Needs `n_classes <= dim`.
    pub fn orthogonal(
        n_classes: usize,
        dim: usize,
        radius: f64,
        cluster_std: f64,
        n_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_classes > dim {
            return Err(Error::Config(format!(
                "{n_classes} orthogonal cluster means do not fit in {dim} dimensions"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_c1a55);
        let basis = random_orthogonal(dim, &mut rng);
        let means = (0..n_classes)
            .flat_map(|c| basis.row(c).iter().map(|v| v * radius).collect::<Vec<_>>())
            .collect();
        let spec = Self {
            n_classes,
            dim,
            cluster_means: Matrix::new(n_classes, dim, means)?,
            cluster_std,
            n_samples,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cluster_means.shape() != (self.n_classes, self.dim) {
            return Err(Error::Config("cluster mean shape does not match n_classes x dim".into()));
        }
        if !(self.cluster_std > 0.0 && self.cluster_std.is_finite()) {
            return Err(Error::Config("cluster_std must be positive".into()));
        }
        for a in 0..self.n_classes {
            for b in a + 1..self.n_classes {
                let d = l2_distance(self.cluster_means.row(a), self.cluster_means.row(b))?;
                if d < MIN_SEPARATION * self.cluster_std {
                    return Err(Error::Config(format!(
                        "clusters {a} and {b} are {d:.3} apart, need at least {} x cluster_std",
                        MIN_SEPARATION
                    )));
                }
            }
        }
        Ok(())
    }

    /// Draws `n` labelled points with uniformly random labels.
    fn draw(&self, n: usize, rng: &mut impl Rng) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::with_capacity(n * self.dim);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let c = rng.random_range(0..self.n_classes);
            y.push(c);
            for &m in self.cluster_means.row(c) {
                let z: f64 = rng.sample(StandardNormal);
                x.push(m + self.cluster_std * z);
            }
        }
        (x, y)
    }
}

/// `n_samples` points, labels balanced (`i mod C`), deterministic in `spec.seed`.
pub fn make_source(spec: &SourceSpec) -> Result<LabeledSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = Vec::with_capacity(spec.n_samples * spec.dim);
    let mut labels = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let c = i % spec.n_classes;
        labels.push(c);
        for &m in spec.cluster_means.row(c) {
            let z: f64 = rng.sample(StandardNormal);
            x.push(m + spec.cluster_std * z);
        }
    }
    Ok(LabeledSet {
        features: Matrix::new(spec.n_samples, spec.dim, x)?,
        labels,
    })
}

/// Shape of the shift family; severity scales every component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftFamily {
    /// Blend weight toward the random rotation at severity 1.
    pub rotation: f64,
    /// Norm of the mean offset at severity 1, in units of `cluster_std`.
    pub offset: f64,
    /// Std of the per-feature log-gain at severity 1.
    pub gain: f64,
    /// Additive noise std at severity 1, in units of `cluster_std`.
    pub noise: f64,
}

impl Default for ShiftFamily {
    fn default() -> Self {
        Self {
            rotation: 0.5,
            offset: 3.0,
            gain: 0.5,
            noise: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSegment {
    pub length: usize,
    pub severity: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulePattern {
    /// mild, severe, mild, severe, ...
    Alternating,
    /// Linear from the mild to the severe severity.
    Ramp,
    /// Every segment at the mild severity.
    Constant,
}

impl std::str::FromStr for SchedulePattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alternating" => Ok(Self::Alternating),
            "ramp" => Ok(Self::Ramp),
            "constant" => Ok(Self::Constant),
            other => Err(Error::Config(format!(
                "unknown schedule pattern {other:?} (expected alternating, ramp or constant)"
            ))),
        }
    }
}

impl std::fmt::Display for SchedulePattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Alternating => "alternating",
            Self::Ramp => "ramp",
            Self::Constant => "constant",
        })
    }
}

pub fn make_schedule(
    pattern: SchedulePattern,
    n_segments: usize,
    mild_severity: f64,
    severe_severity: f64,
    segment_length: usize,
    seed: u64,
) -> Result<Vec<ShiftSegment>> {
    if !(mild_severity >= 0.0 && severe_severity >= 0.0)
        || !mild_severity.is_finite()
        || !severe_severity.is_finite()
    {
        return Err(Error::Domain("severities must be finite and non-negative".into()));
    }
    Ok((0..n_segments)
        .map(|i| {
            let severity = match pattern {
                SchedulePattern::Alternating if i % 2 == 1 => severe_severity,
                SchedulePattern::Alternating | SchedulePattern::Constant => mild_severity,
                SchedulePattern::Ramp if n_segments == 1 => mild_severity,
                SchedulePattern::Ramp => {
                    let t = i as f64 / (n_segments - 1) as f64;
                    mild_severity + t * (severe_severity - mild_severity)
                }
            };
            ShiftSegment {
                length: segment_length,
                severity,
                seed: mix_seed(seed, i as u64),
            }
        })
        .collect())
}

/// Concrete affine map for one severity.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftTransform {
    /// `dim x dim`, applied as `x ↦ M·x`.
    pub matrix: Matrix,
    pub offset: Vec<f64>,
    pub noise_std: f64,
}

impl ShiftTransform {
    pub fn apply(&self, x: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        let dim = x.len();
        (0..dim)
            .map(|i| {
                let row = self.matrix.row(i);
                let v: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                let z: f64 = rng.sample(StandardNormal);
                v + self.offset[i] + self.noise_std * z
            })
            .collect()
    }
}

/// Random directions of one target domain, fixed by the stream seed.
#[derive(Debug, Clone)]
struct DomainDirections {
    rotation: Matrix,
    offset_dir: Vec<f64>,
    log_gain: Vec<f64>,
}

impl DomainDirections {
    fn draw(dim: usize, rng: &mut impl Rng) -> Self {
        let rotation = random_orthogonal(dim, rng);
        let raw: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let offset_dir = raw.into_iter().map(|v| v / norm).collect();
        let log_gain = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        Self {
            rotation,
            offset_dir,
            log_gain,
        }
    }

    fn transform(&self, family: &ShiftFamily, severity: f64, cluster_std: f64) -> ShiftTransform {
        let dim = self.offset_dir.len();
        let lambda = (family.rotation * severity).min(1.0);
        let mut m = vec![0.0; dim * dim];
        for i in 0..dim {
            let gain = (severity * family.gain * self.log_gain[i]).exp();
            for j in 0..dim {
                let ident = if i == j { 1.0 } else { 0.0 };
                m[i * dim + j] = gain * ((1.0 - lambda) * ident + lambda * self.rotation.get(i, j));
            }
        }
        ShiftTransform {
            matrix: Matrix::from_raw(dim, dim, m),
            offset: self
                .offset_dir
                .iter()
                .map(|d| severity * family.offset * cluster_std * d)
                .collect(),
            noise_std: severity * family.noise * cluster_std,
        }
    }
}

/// One engine-visible test batch. Carries no label information.
#[derive(Debug, Clone, PartialEq)]
pub struct TestBatch {
    pub features: Matrix,
    pub severity: f64,
    pub severity_label: String,
    pub segment: usize,
}

/// Materialised test stream. Labels stay inside until [`ShiftStream::into_labels`].
#[derive(Debug, Clone)]
pub struct ShiftStream {
    batches: Vec<TestBatch>,
    labels: Vec<Vec<usize>>,
    batch_size: usize,
    cursor: usize,
}

pub fn severity_label(severity: f64) -> String {
    format!("{severity}")
}

impl ShiftStream {
    pub fn generate(
        source: &SourceSpec,
        schedule: &[ShiftSegment],
        family: &ShiftFamily,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        source.validate()?;
        if batch_size == 0 {
            return dim_err("batch size must be positive");
        }
        let mut domain_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX));
        let domain = DomainDirections::draw(source.dim, &mut domain_rng);
        let mut batches = Vec::new();
        let mut labels = Vec::new();
        for (seg_idx, seg) in schedule.iter().enumerate() {
            let transform = domain.transform(family, seg.severity, source.cluster_std);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, seg.seed));
            for _ in 0..seg.length {
                let (x, y) = source.draw(batch_size, &mut rng);
                let mut shifted = Vec::with_capacity(x.len());
                for row in x.chunks_exact(source.dim) {
                    shifted.extend(transform.apply(row, &mut rng));
                }
                batches.push(TestBatch {
                    features: Matrix::new(batch_size, source.dim, shifted)?,
                    severity: seg.severity,
                    severity_label: severity_label(seg.severity),
                    segment: seg_idx,
                });
                labels.push(y);
            }
        }
        Ok(Self {
            batches,
            labels,
            batch_size,
            cursor: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn remaining(&self) -> usize {
        self.batches.len() - self.cursor
    }

    /// `None` once the stream is exhausted.
    pub fn next_batch(&mut self) -> Option<TestBatch> {
        let b = self.batches.get(self.cursor)?.clone();
        self.cursor += 1;
        Some(b)
    }

    /// Read-only view of every batch, in stream order.
    pub fn batches(&self) -> &[TestBatch] {
        &self.batches
    }

    /// Same batches in a seeded random order (Fisher-Yates at batch granularity).
    pub fn shuffled(&self, order_seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..self.batches.len()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));
        Self {
            batches: perm.iter().map(|&i| self.batches[i].clone()).collect(),
            labels: perm.iter().map(|&i| self.labels[i].clone()).collect(),
            batch_size: self.batch_size,
            cursor: 0,
        }
    }

    /// First `n` batches only.
    pub fn truncated(mut self, n: usize) -> Self {
        self.batches.truncate(n);
        self.labels.truncate(n);
        self.cursor = self.cursor.min(n);
        self
    }

    /// Consumes the stream and releases its labels for scoring.
    pub fn into_labels(self) -> Vec<Vec<usize>> {
        self.labels
    }

    pub(crate) fn labels(&self) -> &[Vec<usize>] {
        &self.labels
    }

    /// CSV with columns `step,severity,f0..f{F-1},label`, one row per sample.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let dim = self.batches.first().map_or(0, |b| b.features.cols());
        let mut header = vec!["step".to_string(), "severity".to_string()];
        header.extend((0..dim).map(|i| format!("f{i}")));
        header.push("label".into());
        w.write_record(&header)?;
        for (step, (b, ys)) in self.batches.iter().zip(&self.labels).enumerate() {
            for (row, y) in b.features.row_iter().zip(ys) {
                let mut rec = vec![step.to_string(), b.severity_label.clone()];
                rec.extend(row.iter().map(|v| v.to_string()));
                rec.push(y.to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Orthogonal matrix from Gram-Schmidt on a Gaussian draw.
pub fn random_orthogonal(dim: usize, rng: &mut impl Rng) -> Matrix {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for r in &rows {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Matrix::from_raw(dim, dim, rows.concat())
}

/// SplitMix64 finaliser over `a` and `b`.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(b)
        .wrapping_add(0x6a09_e667_f3bc_c909);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, seed: u64) -> SourceSpec {
        SourceSpec::orthogonal(4, 8, 5.0, 1.0, n, seed).unwrap()
    }

    #[test]
    fn source_basics() {
        assert!(make_source(&spec(0, 1)).unwrap().is_empty());
        assert_eq!(make_source(&spec(100, 1)).unwrap(), make_source(&spec(100, 1)).unwrap());
        let counts = make_source(&spec(100, 1)).unwrap().labels.iter().fold([0; 4], |mut c, &y| {
            c[y] += 1;
            c
        });
        assert_eq!(counts, [25; 4]);
    }

    #[test]
    fn separation_is_enforced() {
        assert!(matches!(
            SourceSpec::orthogonal(4, 8, 4.0, 1.0, 10, 0),
            Err(Error::Config(_))
        ));
        assert!(SourceSpec::orthogonal(5, 4, 9.0, 1.0, 10, 0).is_err());
    }

    #[test]
    fn schedule_patterns() {
        let s: Vec<f64> = make_schedule(SchedulePattern::Alternating, 4, 0.2, 1.0, 3, 0)
            .unwrap()
            .iter()
            .map(|s| s.severity)
            .collect();
        assert_eq!(s, vec![0.2, 1.0, 0.2, 1.0]);
        let s: Vec<f64> = make_schedule(SchedulePattern::Ramp, 5, 0.0, 1.0, 3, 0)
            .unwrap()
            .iter()
            .map(|s| s.severity)
            .collect();
        assert_eq!(s, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let s = make_schedule(SchedulePattern::Constant, 3, 0.0, 1.0, 3, 0).unwrap();
        assert!(s.iter().all(|seg| seg.severity == 0.0));
        assert!(make_schedule(SchedulePattern::Constant, 3, -1.0, 1.0, 3, 0).is_err());
    }

    #[test]
    fn zero_severity_is_identity() {
        let src = spec(10, 3);
        let d = DomainDirections::draw(8, &mut ChaCha8Rng::seed_from_u64(2));
        let t = d.transform(&ShiftFamily::default(), 0.0, 1.0);
        assert_eq!(t.matrix, Matrix::identity(8));
        assert!(t.offset.iter().all(|&v| v == 0.0));
        assert_eq!(t.noise_std, 0.0);
        let x: Vec<f64> = src.cluster_means.row(1).to_vec();
        assert_eq!(t.apply(&x, &mut ChaCha8Rng::seed_from_u64(0)), x);
    }

    #[test]
    fn stream_is_deterministic_and_sized() {
        let src = spec(0, 4);
        let sched = make_schedule(SchedulePattern::Alternating, 4, 0.0, 1.0, 5, 9).unwrap();
        let a = ShiftStream::generate(&src, &sched, &ShiftFamily::default(), 6, 1).unwrap();
        let b = ShiftStream::generate(&src, &sched, &ShiftFamily::default(), 6, 1).unwrap();
        assert_eq!(a.batches(), b.batches());
        assert_eq!(a.len(), 20);
        assert_eq!(a.batches()[0].features.shape(), (6, 8));
        let mut s = a.clone();
        let mut n = 0;
        while s.next_batch().is_some() {
            n += 1;
        }
        assert_eq!(n, 20);
        assert!(s.next_batch().is_none());
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let src = spec(0, 4);
        let sched = make_schedule(SchedulePattern::Alternating, 2, 0.0, 1.0, 10, 9).unwrap();
        let a = ShiftStream::generate(&src, &sched, &ShiftFamily::default(), 4, 1).unwrap();
        let b = a.shuffled(7);
        assert_ne!(a.batches(), b.batches());
        for (batch, ys) in b.batches().iter().zip(b.labels()) {
            let pos = a.batches().iter().position(|x| x == batch).unwrap();
            assert_eq!(&a.labels()[pos], ys);
        }
    }

    #[test]
    fn zero_severity_batches_match_source_statistics() {
        let src = spec(0, 4);
        let sched = make_schedule(SchedulePattern::Constant, 1, 0.0, 0.0, 400, 9).unwrap();
        let s = ShiftStream::generate(&src, &sched, &ShiftFamily::default(), 16, 1).unwrap();
        // overall feature mean should be the mean of the cluster means
        let mut mean = [0.0; 8];
        let mut n = 0.0;
        for b in s.batches() {
            for row in b.features.row_iter() {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
                n += 1.0;
            }
        }
        for j in 0..8 {
            let expected: f64 = (0..4).map(|c| src.cluster_means.get(c, j)).sum::<f64>() / 4.0;
            // label-frequency noise on a mean of radius-5 clusters, 6400 draws
            assert!((mean[j] / n - expected).abs() < 0.2, "feature {j}");
        }
    }

    #[test]
    fn orthogonal_matrix_is_orthogonal() {
        let q = random_orthogonal(6, &mut ChaCha8Rng::seed_from_u64(1));
        let qqt = crate::numeric::matmul(&q, &q.transpose()).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((qqt.get(i, j) - e).abs() < 1e-12);
            }
        }
    }
}
