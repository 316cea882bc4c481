//! Benchmarks, evaluation, ablations and sweeps.

use std::collections::BTreeMap;

use crate::budget::{
    estimate_budget, normalize_budget, pretrain_unimodal, BudgetPrior, PretrainConfig, UnimodalPair,
};
use crate::data::{bayes_optimal_accuracy, gen_dataset, Dataset, ModalitySpec};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::report::{config_digest, metadata, CsvTable};
use crate::train::{train, FusionKind, TrainConfig, TrainedModel};

/// Data, pretraining and training settings of one benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub specs: Vec<ModalitySpec>,
    /// Fraction and noise sigma applied to the anchor's test split.
    pub corruption: Option<(f64, f64)>,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
}

impl BenchmarkConfig {
    /// Two 16-dimensional modalities at separations 3.0σ and 0.8σ, four
    /// classes, 4000/1000 samples.
    pub fn standard() -> Self {
        Self {
            classes: 4,
            n_train: 4000,
            n_test: 1000,
            specs: vec![ModalitySpec::clean(16, 3.0), ModalitySpec::clean(16, 0.8)],
            corruption: None,
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
        }
    }

    /// The standard benchmark with 30% of the anchor's test samples hit by
    /// additive noise of sigma 5.
    pub fn corruption() -> Self {
        Self {
            corruption: Some((0.3, 5.0)),
            ..Self::standard()
        }
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("classes", self.classes);
        kv.set("n_train", self.n_train);
        kv.set("n_test", self.n_test);
        kv.set("modalities", self.specs.len());
        for (m, s) in self.specs.iter().enumerate() {
            kv.set(format!("modality.{m}.dim"), s.dim);
            kv.set_f64(format!("modality.{m}.separation"), s.class_separation);
            kv.set_f64(format!("modality.{m}.noise_sigma"), s.noise_sigma);
        }
        let (frac, sigma) = self.corruption.unwrap_or((0.0, 0.0));
        kv.set_f64("corrupt_fraction", frac);
        kv.set_f64("corrupt_sigma", sigma);
        kv.set("pretrain_epochs", self.pretrain.epochs);
        kv.set("pretrain_batch_size", self.pretrain.batch_size);
        kv.set_f64("pretrain_learning_rate", self.pretrain.adam.learning_rate);
        kv.merge(&self.train.to_kv());
        kv
    }

    /// Overrides every field named in `kv`. Unknown keys are rejected.
    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<()> {
        for (k, _) in kv.iter() {
            let known = BENCH_KEYS.contains(&k)
                || TrainConfig::KEYS.contains(&k)
                || k.strip_prefix("modality.").is_some_and(|rest| {
                    rest.split_once('.').is_some_and(|(m, f)| {
                        m.parse::<usize>().is_ok()
                            && ["dim", "separation", "noise_sigma"].contains(&f)
                    })
                });
            if !known {
                return Err(Error::invalid(format!("unknown config key `{k}`")));
            }
        }
        fn set<T: std::str::FromStr>(kv: &KvMap, key: &str, slot: &mut T) -> Result<()> {
            if let Some(v) = kv.parse_value(key)? {
                *slot = v;
            }
            Ok(())
        }
        set(kv, "classes", &mut self.classes)?;
        set(kv, "n_train", &mut self.n_train)?;
        set(kv, "n_test", &mut self.n_test)?;
        if let Some(m) = kv.parse_value::<usize>("modalities")? {
            self.specs.resize(m, ModalitySpec::clean(16, 1.0));
        }
        for (m, s) in self.specs.iter_mut().enumerate() {
            set(kv, &format!("modality.{m}.dim"), &mut s.dim)?;
            set(
                kv,
                &format!("modality.{m}.separation"),
                &mut s.class_separation,
            )?;
            set(kv, &format!("modality.{m}.noise_sigma"), &mut s.noise_sigma)?;
        }
        let (mut frac, mut sigma) = self.corruption.unwrap_or((0.0, 0.0));
        set(kv, "corrupt_fraction", &mut frac)?;
        set(kv, "corrupt_sigma", &mut sigma)?;
        self.corruption = (frac > 0.0).then_some((frac, sigma));
        set(kv, "pretrain_epochs", &mut self.pretrain.epochs)?;
        set(kv, "pretrain_batch_size", &mut self.pretrain.batch_size)?;
        set(
            kv,
            "pretrain_learning_rate",
            &mut self.pretrain.adam.learning_rate,
        )?;
        self.train.apply_kv(kv)?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.specs.is_empty() {
            return Err(Error::invalid("at least one modality required"));
        }
        for s in &self.specs {
            s.validate(self.classes)?;
        }
        if let Some((frac, sigma)) = self.corruption {
            if !(0.0..=1.0).contains(&frac) || !(sigma >= 0.0) {
                return Err(Error::invalid(
                    "corruption fraction must be in [0, 1] and sigma >= 0",
                ));
            }
        }
        if self.pretrain.hidden != self.train.hidden
            || self.pretrain.feature_dim != self.train.feature_dim
        {
            return Err(Error::invalid(
                "pretrained and multimodal encoders must share their architecture",
            ));
        }
        self.train.validate()
    }

    pub fn digest(&self) -> String {
        config_digest(&self.to_kv())
    }
}

const BENCH_KEYS: &[&str] = &[
    "classes",
    "n_train",
    "n_test",
    "modalities",
    "corrupt_fraction",
    "corrupt_sigma",
    "pretrain_epochs",
    "pretrain_batch_size",
    "pretrain_learning_rate",
];

/// Everything a seed needs before multimodal training.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    /// Test split with the anchor corrupted, when the benchmark asks for it.
    pub test_corrupt: Option<Dataset>,
    pub pairs: Vec<UnimodalPair>,
    pub prior: BudgetPrior,
    /// Budgets on the test split; diagnostic only.
    pub test_budget: Vec<f64>,
    pub oracle_accuracy: Vec<f64>,
}

impl Prepared {
    pub fn unimodal_accuracy(&self) -> Vec<f64> {
        self.pairs
            .iter()
            .map(UnimodalPair::final_test_accuracy)
            .collect()
    }

    /// Same pretraining, budget renormalized at another temperature.
    pub fn prior_at(&self, tau: f64) -> Result<BudgetPrior> {
        normalize_budget(self.prior.raw(), tau)
    }
}

/// Generates data, pretrains every modality and estimates the prior.
pub fn prepare(bench: &BenchmarkConfig, seed: u64) -> Result<Prepared> {
    bench.validate()?;
    let (train_data, test) = gen_dataset(
        &bench.specs,
        bench.classes,
        bench.n_train,
        bench.n_test,
        seed,
    )?;
    let pretrain = PretrainConfig {
        seed,
        ..bench.pretrain.clone()
    };
    let pairs = (0..bench.specs.len())
        .map(|m| pretrain_unimodal(&train_data, &test, m, &pretrain))
        .collect::<Result<Vec<_>>>()?;
    let raw = estimate_budget(&pairs, &train_data)?;
    let prior = normalize_budget(&raw, bench.train.tau)?;
    let test_budget = estimate_budget(&pairs, &test)?;
    let test_corrupt = bench
        .corruption
        .map(|(frac, sigma)| test.with_corruption(prior.anchor(), frac, sigma, seed))
        .transpose()?;
    let oracle_accuracy = bench
        .specs
        .iter()
        .map(|s| bayes_optimal_accuracy(s, bench.classes))
        .collect();
    Ok(Prepared {
        seed,
        train: train_data,
        test,
        test_corrupt,
        pairs,
        prior,
        test_budget,
        oracle_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub seed: u64,
    pub config_digest: String,
    pub acc_multimodal: f64,
    /// Accuracy of each modality's own classifier inside the trained model.
    pub acc_per_modality: Vec<f64>,
    /// Mean `w̃` over samples with no corrupted modality.
    pub mean_fusion_weights: Vec<f64>,
    /// Per modality, mean `w̃_m` over samples where modality `m` is corrupted
    /// (NaN when there are none).
    pub corrupt_fusion_weights: Vec<f64>,
    /// Per modality, clean mean minus corrupted mean of `w̃_m`.
    pub corrupted_vs_clean_weight_gap: Vec<f64>,
}

/// Fused and per-modality accuracy plus fusion-weight statistics on `data`.
pub fn evaluate(
    trained: &TrainedModel,
    data: &Dataset,
    seed: u64,
    config_digest: &str,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let fused = trained.fuse_dataset(data)?;
    let m_count = data.modalities();
    let labels = data.labels();
    let n = data.len() as f64;
    let acc_multimodal = fused
        .samples
        .iter()
        .zip(labels)
        .filter(|(s, y)| s.prediction == **y)
        .count() as f64
        / n;
    let mut hits = vec![0usize; m_count];
    for i in 0..data.len() {
        let inputs: Vec<Vec<f64>> = (0..m_count).map(|m| data.input(m, i).to_vec()).collect();
        let out = trained.infer(&inputs)?;
        for (m, p) in out.probs.iter().enumerate() {
            if p.argmax() == labels[i] {
                hits[m] += 1;
            }
        }
    }
    let acc_per_modality = hits.iter().map(|h| *h as f64 / n).collect();

    let mut clean = vec![Vec::new(); m_count];
    let mut corrupt = vec![Vec::new(); m_count];
    for (i, s) in fused.samples.iter().enumerate() {
        let mask = data.corrupt_mask(i);
        let any_corrupt = mask.iter().any(|c| *c);
        for m in 0..m_count {
            if mask[m] {
                corrupt[m].push(s.weights.weights[m]);
            } else if !any_corrupt {
                clean[m].push(s.weights.weights[m]);
            }
        }
    }
    let mean_fusion_weights: Vec<f64> = clean.iter().map(|v| shifted_mean(v)).collect();
    let corrupt_fusion_weights: Vec<f64> = corrupt.iter().map(|v| shifted_mean(v)).collect();
    let corrupted_vs_clean_weight_gap = mean_fusion_weights
        .iter()
        .zip(&corrupt_fusion_weights)
        .map(|(c, k)| c - k)
        .collect();
    Ok(EvalReport {
        seed,
        config_digest: config_digest.to_string(),
        acc_multimodal,
        acc_per_modality,
        mean_fusion_weights,
        corrupt_fusion_weights,
        corrupted_vs_clean_weight_gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightGap {
    pub modality: usize,
    pub beta: f64,
    pub mean_weight: f64,
    pub gap: f64,
}

/// β against the mean fusion weight per modality over clean samples.
pub fn compare_prior_weights(trained: &TrainedModel, data: &Dataset) -> Result<Vec<WeightGap>> {
    let report = evaluate(trained, data, trained.config.seed, "")?;
    Ok(trained
        .prior
        .beta()
        .iter()
        .zip(&report.mean_fusion_weights)
        .enumerate()
        .map(|(modality, (b, w))| WeightGap {
            modality,
            beta: *b,
            mean_weight: *w,
            gap: (b - w).abs(),
        })
        .collect())
}

pub fn weight_gap_table(gaps: &[WeightGap]) -> CsvTable {
    let mut t = CsvTable::new(&["modality", "beta", "mean_weight", "gap"]);
    for g in gaps {
        t.push(vec![
            g.modality.to_string(),
            format!("{:?}", g.beta),
            format!("{:?}", g.mean_weight),
            format!("{:?}", g.gap),
        ]);
    }
    t
}

/// Ablation variants plus the joint-training reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    Full,
    /// Uniform β.
    NoPrior,
    /// No alignment and `λ_start = 0`.
    NoStage1,
    /// Fixed `w̃ = β`, gate disabled.
    NoStage2,
    /// Uniform fixed weights, no gate, no alignment, `λ_start = 0`, `γ = 0`.
    Joint,
}

impl Variant {
    pub const ABLATIONS: [Variant; 4] = [
        Variant::Full,
        Variant::NoPrior,
        Variant::NoStage1,
        Variant::NoStage2,
    ];
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoPrior,
        Variant::NoStage1,
        Variant::NoStage2,
        Variant::Joint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPrior => "no_prior",
            Variant::NoStage1 => "no_stage1",
            Variant::NoStage2 => "no_stage2",
            Variant::Joint => "joint",
        }
    }

    /// Training config and prior for this variant, derived from the full ones.
    pub fn apply(
        self,
        config: &TrainConfig,
        prior: &BudgetPrior,
    ) -> Result<(TrainConfig, BudgetPrior)> {
        let mut cfg = config.clone();
        let mut prior = prior.clone();
        match self {
            Variant::Full => {}
            Variant::NoPrior => prior = BudgetPrior::uniform(prior.raw().to_vec(), prior.tau())?,
            Variant::NoStage1 => {
                cfg.lambda_start = 0.0;
                cfg.alignment = false;
            }
            Variant::NoStage2 => cfg.fusion = FusionKind::Prior,
            Variant::Joint => {
                cfg.fusion = FusionKind::Uniform;
                cfg.alignment = false;
                cfg.lambda_start = 0.0;
                cfg.gamma = 0.0;
            }
        }
        Ok((cfg, prior))
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`")))
    }
}

/// One trained model with its evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub trained: TrainedModel,
    pub report: EvalReport,
    /// Evaluation on the corrupted test split, when there is one.
    pub corrupt_report: Option<EvalReport>,
}

/// Runs experiments over seeds, sharing pretraining across runs and caching
/// each `(config, prior, seed)` training run.
#[derive(Debug, Clone)]
pub struct Lab {
    bench: BenchmarkConfig,
    prepared: BTreeMap<u64, Prepared>,
    runs: BTreeMap<(String, Vec<u8>, u64), RunOutcome>,
}

impl Lab {
    pub fn new(bench: BenchmarkConfig) -> Result<Self> {
        bench.validate()?;
        Ok(Self {
            bench,
            prepared: BTreeMap::new(),
            runs: BTreeMap::new(),
        })
    }

    pub fn bench(&self) -> &BenchmarkConfig {
        &self.bench
    }

    pub fn prepared(&mut self, seed: u64) -> Result<&Prepared> {
        if !self.prepared.contains_key(&seed) {
            let p = prepare(&self.bench, seed)?;
            self.prepared.insert(seed, p);
        }
        Ok(&self.prepared[&seed])
    }

    /// Trains (or recalls) one model.
    pub fn run(
        &mut self,
        config: &TrainConfig,
        prior: &BudgetPrior,
        seed: u64,
    ) -> Result<&RunOutcome> {
        let config = TrainConfig {
            seed,
            ..config.clone()
        };
        let key = (config.to_kv().to_string(), prior.to_bytes(), seed);
        if !self.runs.contains_key(&key) {
            let mut bench = self.bench.clone();
            bench.train = config.clone();
            let digest = bench.digest();
            let p = self.prepared(seed)?;
            let trained = train(&p.train, Some(&p.test), prior, &config, Some(&p.pairs))?;
            let report = evaluate(&trained, &p.test, seed, &digest)?;
            let corrupt_report = p
                .test_corrupt
                .as_ref()
                .map(|d| evaluate(&trained, d, seed, &digest))
                .transpose()?;
            self.runs.insert(
                key.clone(),
                RunOutcome {
                    trained,
                    report,
                    corrupt_report,
                },
            );
        }
        Ok(&self.runs[&key])
    }

    /// Trains one variant on one seed with the benchmark's training config.
    pub fn run_variant(&mut self, variant: Variant, seed: u64) -> Result<&RunOutcome> {
        let prior = self.prepared(seed)?.prior.clone();
        let (cfg, prior) = variant.apply(&self.bench.train, &prior)?;
        self.run(&cfg, &prior, seed)
    }

    pub fn run_ablation(&mut self, seeds: &[u64], variants: &[Variant]) -> Result<AblationResult> {
        if seeds.is_empty() || variants.is_empty() {
            return Err(Error::invalid(
                "ablation needs at least one seed and one variant",
            ));
        }
        let mut rows = Vec::new();
        for &variant in variants {
            let reports = seeds
                .iter()
                .map(|&s| Ok(self.run_variant(variant, s)?.report.clone()))
                .collect::<Result<Vec<_>>>()?;
            rows.push(VariantResult { variant, reports });
        }
        Ok(AblationResult { rows })
    }

    pub fn sweep(&mut self, param: SweepParam, grid: &[f64], seeds: &[u64]) -> Result<SweepResult> {
        if grid.is_empty() || seeds.is_empty() {
            return Err(Error::invalid("sweep needs a non-empty grid and seed list"));
        }
        let mut cells = Vec::new();
        for &value in grid {
            for &seed in seeds {
                let mut cfg = self.bench.train.clone();
                let prior = match param {
                    SweepParam::Tau => {
                        cfg.tau = value;
                        self.prepared(seed)?.prior_at(value)?
                    }
                    SweepParam::Gamma => {
                        cfg.gamma = value;
                        self.prepared(seed)?.prior.clone()
                    }
                };
                let acc = self.run(&cfg, &prior, seed)?.report.acc_multimodal;
                cells.push(SweepCell { value, seed, acc });
            }
        }
        Ok(SweepResult { param, cells })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub variant: Variant,
    pub reports: Vec<EvalReport>,
}

impl VariantResult {
    pub fn accuracies(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.acc_multimodal).collect()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.accuracies())
    }

    pub fn std(&self) -> f64 {
        std_dev(&self.accuracies())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub rows: Vec<VariantResult>,
}

impl AblationResult {
    pub fn get(&self, variant: Variant) -> Option<&VariantResult> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Seeds on which `a` scores at least `b`.
    pub fn paired_wins(&self, a: Variant, b: Variant) -> Option<usize> {
        let (ra, rb) = (self.get(a)?, self.get(b)?);
        Some(
            ra.accuracies()
                .iter()
                .zip(rb.accuracies())
                .filter(|(x, y)| **x >= *y)
                .count(),
        )
    }

    /// One row per (variant, seed), then one `mean` row per variant.
    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["variant", "seed", "acc_multimodal", "std", "wins_vs_full"]);
        for r in &self.rows {
            for rep in &r.reports {
                t.push(vec![
                    r.variant.name().into(),
                    rep.seed.to_string(),
                    format!("{:?}", rep.acc_multimodal),
                    String::new(),
                    String::new(),
                ]);
            }
        }
        for r in &self.rows {
            let wins = self
                .paired_wins(r.variant, Variant::Full)
                .map_or(String::new(), |w| w.to_string());
            t.push(vec![
                r.variant.name().into(),
                "mean".into(),
                format!("{:?}", r.mean()),
                format!("{:?}", r.std()),
                wins,
            ]);
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Tau,
    Gamma,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Tau => "tau",
            SweepParam::Gamma => "gamma",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau" => Ok(SweepParam::Tau),
            "gamma" => Ok(SweepParam::Gamma),
            _ => Err(Error::invalid(format!(
                "unknown sweep parameter `{s}` (tau | gamma)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub value: f64,
    pub seed: u64,
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub param: SweepParam,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    /// `(grid value, mean accuracy)` in grid order.
    pub fn means(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
        for c in &self.cells {
            match out.iter_mut().find(|(v, _)| *v == c.value) {
                Some((_, accs)) => accs.push(c.acc),
                None => out.push((c.value, vec![c.acc])),
            }
        }
        out.into_iter().map(|(v, a)| (v, mean(&a))).collect()
    }

    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&[self.param.name(), "seed", "acc_multimodal"]);
        for c in &self.cells {
            t.push(vec![
                format!("{:?}", c.value),
                c.seed.to_string(),
                format!("{:?}", c.acc),
            ]);
        }
        for (v, m) in self.means() {
            t.push(vec![format!("{v:?}"), "mean".into(), format!("{m:?}")]);
        }
        t
    }
}

pub fn eval_table(reports: &[EvalReport]) -> CsvTable {
    let m = reports.first().map_or(0, |r| r.acc_per_modality.len());
    let mut header = vec!["seed".to_string(), "acc_multimodal".to_string()];
    header.extend((0..m).map(|k| format!("acc_modality{k}")));
    header.extend((0..m).map(|k| format!("weight{k}")));
    header.extend((0..m).map(|k| format!("corrupt_weight{k}")));
    header.extend((0..m).map(|k| format!("weight_gap{k}")));
    header.push("config_digest".into());
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = CsvTable::new(&refs);
    for r in reports {
        let mut row = vec![r.seed.to_string(), format!("{:?}", r.acc_multimodal)];
        for v in r
            .acc_per_modality
            .iter()
            .chain(&r.mean_fusion_weights)
            .chain(&r.corrupt_fusion_weights)
            .chain(&r.corrupted_vs_clean_weight_gap)
        {
            row.push(format!("{v:?}"));
        }
        row.push(r.config_digest.clone());
        t.push(row);
    }
    t
}

/// Metadata block for a result file of this benchmark.
pub fn result_metadata(kind: &str, bench: &BenchmarkConfig, seed: u64) -> KvMap {
    let mut meta = metadata(kind, seed);
    meta.set("config_digest", bench.digest());
    meta
}

/// Mean taken relative to the first value, exact when all values are equal.
/// NaN for an empty slice.
fn shifted_mean(v: &[f64]) -> f64 {
    match v.first() {
        Some(first) => first + v.iter().map(|x| x - first).sum::<f64>() / v.len() as f64,
        None => f64::NAN,
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (0 for fewer than two values).
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bench_kv_round_trip_and_unknown_keys() {
        let mut b = BenchmarkConfig::corruption();
        b.train.gamma = 1.5;
        b.specs[1].class_separation = 0.5;
        let kv = b.to_kv();
        let mut back = BenchmarkConfig::standard();
        back.apply_kv(&kv).unwrap();
        assert_eq!(back, b);
        let mut bad = KvMap::new();
        bad.set("gama", 1);
        assert!(back.apply_kv(&bad).is_err());
        assert_ne!(BenchmarkConfig::standard().digest(), b.digest());
    }

    #[test]
    fn variant_definitions() {
        let prior = normalize_budget(&[0.8, 0.3], 0.07).unwrap();
        let cfg = TrainConfig::default();
        let (_, p) = Variant::NoPrior.apply(&cfg, &prior).unwrap();
        assert_eq!(p.beta(), &[0.5, 0.5]);
        let (c, _) = Variant::NoStage1.apply(&cfg, &prior).unwrap();
        assert_eq!(c.lambda_start, 0.0);
        assert!(c
            .alignment_config(&prior)
            .unwrap()
            .lambdas
            .iter()
            .all(|l| *l == 0.0));
        let (c, _) = Variant::NoStage2.apply(&cfg, &prior).unwrap();
        assert_eq!(c.fusion, FusionKind::Prior);
        let (c, _) = Variant::Joint.apply(&cfg, &prior).unwrap();
        assert_eq!(
            (c.fusion, c.gamma, c.lambda_start, c.alignment),
            (FusionKind::Uniform, 0.0, 0.0, false)
        );
        assert_eq!("no_stage2".parse::<Variant>().unwrap(), Variant::NoStage2);
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(std_dev(&[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(std_dev(&[4.0]), 0.0);
    }
}
