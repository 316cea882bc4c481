//! Synthetic multimodal Gaussian classification data with a known
//! per-modality Bayes accuracy.
//!
//! Every modality draws its class-conditional inputs from an isotropic
//! Gaussian. Class means sit on the vertices of a regular simplex whose edge
//! length is `class_separation * noise_sigma`, so every pair of classes is
//! equally hard and the Bayes classifier for a modality is nearest-mean.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::nn::{named_rng, Matrix};

/// Draws used by the Monte-Carlo Bayes oracle.
pub const BAYES_MC_DRAWS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModalitySpec {
    pub dim: usize,
    /// Edge length of the class-mean simplex, in units of `noise_sigma`.
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub corrupt_fraction: f64,
    /// Standard deviation of the additive corruption noise (absolute units).
    pub corrupt_sigma: f64,
}

impl ModalitySpec {
    pub fn clean(dim: usize, class_separation: f64) -> Self {
        Self {
            dim,
            class_separation,
            noise_sigma: 1.0,
            corrupt_fraction: 0.0,
            corrupt_sigma: 0.0,
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("modality dimension must be at least 1"));
        }
        if self.dim + 1 < classes {
            return Err(Error::invalid(format!(
                "a {}-dimensional modality cannot hold {classes} equidistant class means",
                self.dim
            )));
        }
        if !(self.class_separation >= 0.0) || !self.class_separation.is_finite() {
            return Err(Error::invalid(
                "class separation must be finite and non-negative",
            ));
        }
        if !(self.noise_sigma > 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("noise sigma must be positive"));
        }
        if !(0.0..=1.0).contains(&self.corrupt_fraction) {
            return Err(Error::invalid("corrupt fraction must lie in [0, 1]"));
        }
        if !(self.corrupt_sigma >= 0.0) || !self.corrupt_sigma.is_finite() {
            return Err(Error::invalid(
                "corrupt sigma must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::format("split", other.to_string())),
        }
    }
}

/// One split of a multimodal dataset. Class indices are `0..classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub specs: Vec<ModalitySpec>,
    pub split: Split,
    pub seed: u64,
    labels: Vec<usize>,
    /// Per modality, one row per sample.
    inputs: Vec<Matrix>,
    /// Per modality, one flag per sample.
    corrupt: Vec<Vec<bool>>,
}

/// Inputs and labels for a mini-batch, copied out of a [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub labels: Vec<usize>,
    /// Per modality, one row per sample.
    pub inputs: Vec<Matrix>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn modalities(&self) -> usize {
        self.inputs.len()
    }
}

impl Dataset {
    pub fn new(
        classes: usize,
        specs: Vec<ModalitySpec>,
        split: Split,
        seed: u64,
        labels: Vec<usize>,
        inputs: Vec<Matrix>,
        corrupt: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if inputs.len() != specs.len() || corrupt.len() != specs.len() {
            return Err(Error::invalid(
                "one input matrix and mask per modality required",
            ));
        }
        for (m, (x, spec)) in inputs.iter().zip(&specs).enumerate() {
            if x.rows() != labels.len() || x.cols() != spec.dim {
                return Err(Error::invalid(format!(
                    "modality {m} inputs are {}x{}, expected {}x{}",
                    x.rows(),
                    x.cols(),
                    labels.len(),
                    spec.dim
                )));
            }
            if corrupt[m].len() != labels.len() {
                return Err(Error::invalid(format!(
                    "modality {m} mask has wrong length"
                )));
            }
        }
        if let Some(y) = labels.iter().find(|y| **y >= classes) {
            return Err(Error::invalid(format!("label {y} outside 0..{classes}")));
        }
        Ok(Self {
            classes,
            specs,
            split,
            seed,
            labels,
            inputs,
            corrupt,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn modalities(&self) -> usize {
        self.specs.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn input(&self, modality: usize, sample: usize) -> &[f64] {
        self.inputs[modality].row(sample)
    }

    pub fn inputs(&self, modality: usize) -> &Matrix {
        &self.inputs[modality]
    }

    pub fn is_corrupt(&self, modality: usize, sample: usize) -> bool {
        self.corrupt[modality][sample]
    }

    pub fn corrupt_mask(&self, sample: usize) -> Vec<bool> {
        self.corrupt.iter().map(|c| c[sample]).collect()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let inputs = self
            .inputs
            .iter()
            .map(|x| {
                let mut data = Vec::with_capacity(indices.len() * x.cols());
                for &i in indices {
                    data.extend_from_slice(x.row(i));
                }
                Matrix::from_vec(indices.len(), x.cols(), data)
                    .expect("rows copied from a valid matrix")
            })
            .collect();
        Batch {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            inputs,
        }
    }

    pub fn full_batch(&self) -> Batch {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }

    /// A copy of this split where a fraction of samples of one modality carry
    /// additive Gaussian noise. The clean draws are untouched, so the result
    /// differs from `self` only on the corrupted rows.
    pub fn with_corruption(
        &self,
        modality: usize,
        fraction: f64,
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if modality >= self.modalities() {
            return Err(Error::invalid(format!("no modality {modality}")));
        }
        if !(0.0..=1.0).contains(&fraction) || !(sigma >= 0.0) {
            return Err(Error::invalid(
                "corruption fraction must be in [0,1] and sigma >= 0",
            ));
        }
        let mut out = self.clone();
        let stream = format!("corruption/{}/{modality}", self.split.as_str());
        let mut rng = named_rng(seed, &stream);
        apply_corruption(
            &mut out.inputs[modality],
            &mut out.corrupt[modality],
            fraction,
            sigma,
            &mut rng,
        );
        out.specs[modality].corrupt_fraction = fraction;
        out.specs[modality].corrupt_sigma = sigma;
        Ok(out)
    }

    /// Accuracy of the nearest-true-mean rule on this split for one modality.
    pub fn bayes_rule_accuracy(&self, modality: usize) -> f64 {
        let means = class_means(
            &self.specs[modality],
            self.classes,
            self.specs[modality].dim,
        );
        let hits = (0..self.len())
            .filter(|&i| nearest(&means, self.input(modality, i)) == self.labels[i])
            .count();
        hits as f64 / self.len() as f64
    }

    fn metadata(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("format", "iibalance-dataset");
        kv.set("version", 1);
        kv.set("split", self.split.as_str());
        kv.set("seed", self.seed);
        kv.set("classes", self.classes);
        kv.set("samples", self.len());
        kv.set("modalities", self.modalities());
        for (m, s) in self.specs.iter().enumerate() {
            kv.set(format!("modality.{m}.dim"), s.dim);
            kv.set_f64(format!("modality.{m}.class_separation"), s.class_separation);
            kv.set_f64(format!("modality.{m}.noise_sigma"), s.noise_sigma);
            kv.set_f64(format!("modality.{m}.corrupt_fraction"), s.corrupt_fraction);
            kv.set_f64(format!("modality.{m}.corrupt_sigma"), s.corrupt_sigma);
        }
        kv
    }

    /// Writes `<dir>/<split>.csv` and the sidecar `<dir>/<split>.meta`.
    ///
    /// CSV columns: `sample,label,corrupt_0..corrupt_{M-1}`, then
    /// `x{m}_{k}` for every modality `m` and coordinate `k`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let csv_path = dir.join(format!("{}.csv", self.split.as_str()));
        let mut w = csv::Writer::from_path(&csv_path)?;
        let mut header = vec!["sample".to_string(), "label".to_string()];
        header.extend((0..self.modalities()).map(|m| format!("corrupt_{m}")));
        for (m, s) in self.specs.iter().enumerate() {
            header.extend((0..s.dim).map(|k| format!("x{m}_{k}")));
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![i.to_string(), self.labels[i].to_string()];
            rec.extend(self.corrupt.iter().map(|c| (c[i] as u8).to_string()));
            for m in 0..self.modalities() {
                rec.extend(self.input(m, i).iter().map(|v| format!("{v:?}")));
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        self.metadata()
            .save(&dir.join(format!("{}.meta", self.split.as_str())))
    }

    pub fn load(dir: &Path, split: Split) -> Result<Self> {
        let meta = KvMap::load(&dir.join(format!("{}.meta", split.as_str())))?;
        if meta.get("format") != Some("iibalance-dataset") {
            return Err(Error::format("dataset metadata", "missing format tag"));
        }
        let classes: usize = meta.require("classes")?;
        let n: usize = meta.require("samples")?;
        let modalities: usize = meta.require("modalities")?;
        let seed: u64 = meta.require("seed")?;
        let specs = (0..modalities)
            .map(|m| {
                Ok(ModalitySpec {
                    dim: meta.require(&format!("modality.{m}.dim"))?,
                    class_separation: meta.require(&format!("modality.{m}.class_separation"))?,
                    noise_sigma: meta.require(&format!("modality.{m}.noise_sigma"))?,
                    corrupt_fraction: meta.require(&format!("modality.{m}.corrupt_fraction"))?,
                    corrupt_sigma: meta.require(&format!("modality.{m}.corrupt_sigma"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let csv_path = dir.join(format!("{}.csv", split.as_str()));
        let mut r = csv::Reader::from_path(&csv_path)?;
        let width = 2 + modalities + specs.iter().map(|s| s.dim).sum::<usize>();
        let mut labels = Vec::with_capacity(n);
        let mut data: Vec<Vec<f64>> = specs
            .iter()
            .map(|s| Vec::with_capacity(n * s.dim))
            .collect();
        let mut corrupt = vec![Vec::with_capacity(n); modalities];
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != width {
                return Err(Error::format(
                    "dataset csv",
                    format!("row has {} fields, expected {width}", rec.len()),
                ));
            }
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|_| Error::format("dataset csv", format!("bad number `{}`", &rec[i])))
            };
            labels.push(
                rec[1].parse().map_err(|_| {
                    Error::format("dataset csv", format!("bad label `{}`", &rec[1]))
                })?,
            );
            for (m, c) in corrupt.iter_mut().enumerate() {
                c.push(&rec[2 + m] == "1");
            }
            let mut col = 2 + modalities;
            for (m, s) in specs.iter().enumerate() {
                for _ in 0..s.dim {
                    data[m].push(num(col)?);
                    col += 1;
                }
            }
        }
        if labels.len() != n {
            return Err(Error::format(
                "dataset csv",
                format!("{} rows, metadata says {n}", labels.len()),
            ));
        }
        let inputs = data
            .into_iter()
            .zip(&specs)
            .map(|(d, s)| Matrix::from_vec(n, s.dim, d))
            .collect::<Result<Vec<_>>>()?;
        Self::new(classes, specs, split, seed, labels, inputs, corrupt)
    }
}

/// Vertices of a regular simplex with edge `class_separation * noise_sigma`,
/// centred at the origin and embedded in the first `classes - 1` coordinates.
pub fn class_means(spec: &ModalitySpec, classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let edge = spec.class_separation * spec.noise_sigma;
    // e_c - centroid has length sqrt((C-1)/C) and pairwise distance sqrt(2)
    let scale = edge / std::f64::consts::SQRT_2;
    (0..classes)
        .map(|class| {
            let mut mean = vec![0.0; dim];
            // Helmert basis of the sum-zero subspace: b_k ∝ (1,..,1,-k,0,..)
            for k in 1..classes {
                let norm = ((k * (k + 1)) as f64).sqrt();
                let coord = if class < k {
                    1.0 / norm
                } else if class == k {
                    -(k as f64) / norm
                } else {
                    0.0
                };
                // the centroid is orthogonal to every b_k
                mean[k - 1] = coord * scale;
            }
            mean
        })
        .collect()
}

fn nearest(means: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, mu) in means.iter().enumerate() {
        let d: f64 = mu.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn apply_corruption<R: Rng>(
    x: &mut Matrix,
    mask: &mut [bool],
    fraction: f64,
    sigma: f64,
    rng: &mut R,
) {
    let n = mask.len();
    let k = ((fraction * n as f64).round() as usize).min(n);
    if k == 0 {
        return;
    }
    let mut chosen = index::sample(rng, n, k).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        mask[i] = true;
        for v in x.row_mut(i) {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn generate_split(
    specs: &[ModalitySpec],
    classes: usize,
    n: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    let tag = split.as_str();
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut named_rng(seed, &format!("dataset/{tag}/labels")));

    let mut inputs = Vec::with_capacity(specs.len());
    let mut corrupt = Vec::with_capacity(specs.len());
    for (m, spec) in specs.iter().enumerate() {
        let means = class_means(spec, classes, spec.dim);
        let mut rng = named_rng(seed, &format!("dataset/{tag}/modality{m}"));
        let mut data = Vec::with_capacity(n * spec.dim);
        for &y in &labels {
            for mu in &means[y] {
                data.push(mu + spec.noise_sigma * rng.sample::<f64, _>(StandardNormal));
            }
        }
        let mut x = Matrix::from_vec(n, spec.dim, data)?;
        let mut mask = vec![false; n];
        let mut crng = named_rng(seed, &format!("dataset/{tag}/corruption{m}"));
        apply_corruption(
            &mut x,
            &mut mask,
            spec.corrupt_fraction,
            spec.corrupt_sigma,
            &mut crng,
        );
        inputs.push(x);
        corrupt.push(mask);
    }
    Dataset::new(
        classes,
        specs.to_vec(),
        split,
        seed,
        labels,
        inputs,
        corrupt,
    )
}

/// Generates train and test splits from independent named streams of `seed`.
pub fn gen_dataset(
    specs: &[ModalitySpec],
    classes: usize,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if classes < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    if specs.is_empty() {
        return Err(Error::invalid("need at least one modality"));
    }
    if n_train == 0 || n_test == 0 {
        return Err(Error::invalid("train and test splits must be non-empty"));
    }
    for s in specs {
        s.validate(classes)?;
    }
    Ok((
        generate_split(specs, classes, n_train, seed, Split::Train)?,
        generate_split(specs, classes, n_test, seed, Split::Test)?,
    ))
}

/// Accuracy of the Bayes classifier for one modality on clean inputs.
///
/// Closed form `Φ(s/2)` for two classes; otherwise a seeded Monte-Carlo
/// estimate over [`BAYES_MC_DRAWS`] draws.
pub fn bayes_optimal_accuracy(spec: &ModalitySpec, classes: usize) -> f64 {
    if spec.class_separation == 0.0 {
        return 1.0 / classes as f64;
    }
    if classes == 2 {
        return standard_normal_cdf(spec.class_separation / 2.0);
    }
    bayes_accuracy_monte_carlo(spec, classes, BAYES_MC_DRAWS, 0x0ba7e5)
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Monte-Carlo estimate of nearest-mean accuracy. By symmetry of the simplex,
/// conditioning on class 0 suffices; only the `C - 1` informative
/// coordinates are simulated.
pub fn bayes_accuracy_monte_carlo(
    spec: &ModalitySpec,
    classes: usize,
    draws: usize,
    seed: u64,
) -> f64 {
    let dim = classes - 1;
    let unit = ModalitySpec {
        noise_sigma: 1.0,
        ..*spec
    };
    let means = class_means(&unit, classes, dim);
    let mut rng = named_rng(seed, "bayes-monte-carlo");
    let mut x = vec![0.0; dim];
    let mut hits = 0usize;
    for _ in 0..draws {
        for (xi, mu) in x.iter_mut().zip(&means[0]) {
            *xi = mu + rng.sample::<f64, _>(StandardNormal);
        }
        if nearest(&means, &x) == 0 {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn simplex_means_are_equidistant_and_centred() {
        for classes in 2..=6 {
            let spec = ModalitySpec::clean(8, 3.0);
            let means = class_means(&spec, classes, 8);
            for i in 0..classes {
                for j in i + 1..classes {
                    assert!((dist(&means[i], &means[j]) - 3.0).abs() < 1e-12);
                }
            }
            for k in 0..8 {
                let s: f64 = means.iter().map(|m| m[k]).sum();
                assert!(s.abs() < 1e-12);
            }
        }
        let two = class_means(&ModalitySpec::clean(1, 2.0), 2, 1);
        assert!((two[0][0] - 1.0).abs() < 1e-15 && (two[1][0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        let s = [ModalitySpec::clean(4, 1.0)];
        assert!(gen_dataset(&s, 4, 0, 10, 1).is_err());
        assert!(gen_dataset(&s, 4, 10, 0, 1).is_err());
        assert!(gen_dataset(&s, 1, 10, 10, 1).is_err());
        assert!(gen_dataset(&[ModalitySpec::clean(2, 1.0)], 4, 10, 10, 1).is_err());
        let bad = ModalitySpec {
            corrupt_fraction: 1.5,
            ..ModalitySpec::clean(4, 1.0)
        };
        assert!(gen_dataset(&[bad], 2, 10, 10, 1).is_err());
    }

    #[test]
    fn balanced_labels_and_clean_masks() {
        let (tr, te) = gen_dataset(&[ModalitySpec::clean(4, 1.0)], 4, 400, 100, 3).unwrap();
        for c in 0..4 {
            assert_eq!(tr.labels().iter().filter(|y| **y == c).count(), 100);
            assert_eq!(te.labels().iter().filter(|y| **y == c).count(), 25);
        }
        assert!((0..tr.len()).all(|i| !tr.is_corrupt(0, i)));
    }

    #[test]
    fn corruption_marks_exact_fraction() {
        let spec = ModalitySpec {
            corrupt_fraction: 0.3,
            corrupt_sigma: 5.0,
            ..ModalitySpec::clean(4, 1.0)
        };
        let (tr, _) = gen_dataset(&[spec], 2, 1000, 10, 9).unwrap();
        assert_eq!((0..tr.len()).filter(|&i| tr.is_corrupt(0, i)).count(), 300);
    }

    #[test]
    fn post_hoc_corruption_only_touches_masked_rows() {
        let (_, te) = gen_dataset(
            &[ModalitySpec::clean(4, 2.0), ModalitySpec::clean(4, 1.0)],
            2,
            10,
            200,
            5,
        )
        .unwrap();
        let c = te.with_corruption(0, 0.3, 5.0, 5).unwrap();
        let mut n = 0;
        for i in 0..te.len() {
            assert_eq!(te.input(1, i), c.input(1, i));
            if c.is_corrupt(0, i) {
                n += 1;
                assert_ne!(te.input(0, i), c.input(0, i));
            } else {
                assert_eq!(te.input(0, i), c.input(0, i));
            }
        }
        assert_eq!(n, 60);
    }

    #[test]
    fn bayes_closed_form_values() {
        assert_eq!(
            bayes_optimal_accuracy(&ModalitySpec::clean(3, 0.0), 4),
            0.25
        );
        let two_sigma = bayes_optimal_accuracy(&ModalitySpec::clean(1, 2.0), 2);
        assert!((two_sigma - 0.841_344_746_068_542_9).abs() < 1e-9);
        assert!(bayes_optimal_accuracy(&ModalitySpec::clean(1, 20.0), 2) > 0.999_999);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ModalitySpec {
            corrupt_fraction: 0.2,
            corrupt_sigma: 3.0,
            ..ModalitySpec::clean(3, 1.5)
        };
        let (tr, te) = gen_dataset(&[spec, ModalitySpec::clean(2, 0.5)], 3, 30, 12, 11).unwrap();
        tr.save(dir.path()).unwrap();
        te.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path(), Split::Train).unwrap(), tr);
        assert_eq!(Dataset::load(dir.path(), Split::Test).unwrap(), te);
    }
}
