//! Command-line front end: data generation, pretraining, budget estimation,
//! training, evaluation, ablations and sweeps. Every command works inside a
//! run directory and writes CSV files with a `# key = value` metadata header.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use iibalance::budget::{
    estimate_budget, normalize_budget, pretrain_unimodal, BudgetPrior, UnimodalPair,
};
use iibalance::data::{gen_dataset, Dataset, Split};
use iibalance::harness::{
    compare_prior_weights, eval_table, evaluate, result_metadata, weight_gap_table,
    BenchmarkConfig, Lab, SweepParam, Variant,
};
use iibalance::kv::KvMap;
use iibalance::nn::{Checkpoint, DenseNet};
use iibalance::train::{log_table, train, TrainedModel};
use iibalance::Error;

const CONFIG_FILE: &str = "config.txt";
const PRETRAINED_FILE: &str = "pretrained.ckpt";
const BUDGET_FILE: &str = "budget.csv";
const MODEL_FILE: &str = "model.ckpt";
const CORRUPT_DIR: &str = "corrupt";

#[derive(Debug, Parser)]
#[command(
    name = "iibalance",
    version,
    about = "Capacity-aware multimodal training on synthetic Gaussian data"
)]
struct Cli {
    /// Key-value config file (`key = value` per line).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true, value_parser = parse_override)]
    overrides: Vec<(String, String)>,

    /// Seed for data, pretraining and training.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory holding inputs and outputs.
    #[arg(long, global = true, default_value = ".")]
    dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train and test splits.
    GenData,
    /// Pretrain one encoder and classifier per modality.
    Pretrain,
    /// Estimate information budgets and the normalized prior; with corruption
    /// configured, also write a corrupted copy of the anchor's test split.
    EstimateIib,
    /// Train the multimodal model.
    Train,
    /// Evaluate a trained model on the test split.
    Eval,
    /// Run the ablation variants over several seeds.
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "full,no_prior,no_stage1,no_stage2,joint"
        )]
        variants: Vec<String>,
    },
    /// Sweep the budget temperature or the auxiliary weight.
    Sweep {
        #[arg(long, value_enum)]
        param: Param,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
    },
    /// Compare the prior with the mean fusion weights on clean test samples.
    CompareWeights,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Param {
    Tau,
    Gamma,
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return Err(format!("empty key in `{s}`"));
    }
    Ok((k.to_string(), v.to_string()))
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

struct Context {
    dir: PathBuf,
    bench: BenchmarkConfig,
}

impl Context {
    fn seed(&self) -> u64 {
        self.bench.train.seed
    }

    fn meta(&self, kind: &str) -> KvMap {
        result_metadata(kind, &self.bench, self.seed())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn save_config(&self) -> CliResult<()> {
        self.bench.to_kv().save(&self.path(CONFIG_FILE))?;
        Ok(())
    }

    fn load_split(&self, split: Split) -> CliResult<Dataset> {
        Dataset::load(&self.dir, split).map_err(|e| {
            format!(
                "cannot read the {} split from {} ({e}); run gen-data first",
                split.as_str(),
                self.dir.display()
            )
            .into()
        })
    }

    fn load_pairs(&self) -> CliResult<Vec<UnimodalPair>> {
        let ckpt = Checkpoint::load(&self.path(PRETRAINED_FILE))
            .map_err(|e| format!("cannot read pretrained networks ({e}); run pretrain first"))?;
        let net = |name: String| -> CliResult<DenseNet> {
            Ok(ckpt
                .network(&name)
                .ok_or_else(|| format!("{PRETRAINED_FILE} lacks `{name}`"))?
                .clone())
        };
        (0..self.bench.specs.len())
            .map(|m| {
                Ok(UnimodalPair {
                    modality: m,
                    encoder: net(format!("encoder{m}"))?,
                    classifier: net(format!("classifier{m}"))?,
                    log: Vec::new(),
                })
            })
            .collect()
    }

    fn load_prior(&self) -> CliResult<BudgetPrior> {
        Ok(BudgetPrior::load_csv(&self.path(BUDGET_FILE))
            .map_err(|e| format!("cannot read the budget ({e}); run estimate-iib first"))?)
    }

    fn load_model(&self) -> CliResult<TrainedModel> {
        Ok(
            TrainedModel::load(&self.path(MODEL_FILE), self.bench.train.clone())
                .map_err(|e| format!("cannot read the model ({e}); run train first"))?,
        )
    }
}

fn build_context(cli: &Cli) -> Result<Context, Error> {
    let mut bench = BenchmarkConfig::standard();
    let stored = cli.dir.join(CONFIG_FILE);
    if stored.exists() {
        bench.apply_kv(&KvMap::load(&stored)?)?;
    }
    if let Some(path) = &cli.config {
        bench.apply_kv(&KvMap::load(path)?)?;
    }
    let mut kv = KvMap::new();
    for (k, v) in &cli.overrides {
        kv.set(k.as_str(), v);
    }
    if let Some(seed) = cli.seed {
        kv.set("seed", seed);
    }
    bench.apply_kv(&kv)?;
    Ok(Context {
        dir: cli.dir.clone(),
        bench,
    })
}

fn gen_data(ctx: &Context) -> CliResult<()> {
    let b = &ctx.bench;
    let (train_data, test) = gen_dataset(&b.specs, b.classes, b.n_train, b.n_test, ctx.seed())?;
    train_data.save(&ctx.dir)?;
    test.save(&ctx.dir)?;
    ctx.save_config()?;
    println!(
        "wrote {} train / {} test samples to {}",
        train_data.len(),
        test.len(),
        ctx.dir.display()
    );
    Ok(())
}

fn pretrain(ctx: &Context) -> CliResult<()> {
    let train_data = ctx.load_split(Split::Train)?;
    let test = ctx.load_split(Split::Test)?;
    let cfg = iibalance::budget::PretrainConfig {
        seed: ctx.seed(),
        ..ctx.bench.pretrain.clone()
    };
    let mut ckpt = Checkpoint::default();
    let mut log = None::<iibalance::report::CsvTable>;
    for m in 0..train_data.modalities() {
        let pair = pretrain_unimodal(&train_data, &test, m, &cfg)?;
        println!(
            "modality {m}: test accuracy {:.4}",
            pair.final_test_accuracy()
        );
        ckpt.networks
            .push((format!("encoder{m}"), pair.encoder.clone()));
        ckpt.networks
            .push((format!("classifier{m}"), pair.classifier.clone()));
        let t = pair.log_table();
        match &mut log {
            None => log = Some(t),
            Some(acc) => t.rows().iter().for_each(|r| acc.push(r.clone())),
        }
    }
    ckpt.save(&ctx.path(PRETRAINED_FILE))?;
    if let Some(log) = log {
        log.write(&ctx.path("pretrain_log.csv"), &ctx.meta("pretrain-log"))?;
    }
    ctx.save_config()?;
    Ok(())
}

fn estimate_iib(ctx: &Context) -> CliResult<()> {
    let train_data = ctx.load_split(Split::Train)?;
    let pairs = ctx.load_pairs()?;
    let raw = estimate_budget(&pairs, &train_data)?;
    let prior = normalize_budget(&raw, ctx.bench.train.tau)?;
    prior.save_csv(&ctx.path(BUDGET_FILE), &ctx.meta("budget"))?;
    println!(
        "B = {:?}, beta = {:?}, anchor = {}",
        prior.raw(),
        prior.beta(),
        prior.anchor()
    );
    if let Some((frac, sigma)) = ctx.bench.corruption {
        let dir = ctx.path(CORRUPT_DIR);
        fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        let test = ctx.load_split(Split::Test)?;
        test.with_corruption(prior.anchor(), frac, sigma, ctx.seed())?
            .save(&dir)?;
    }
    ctx.save_config()?;
    Ok(())
}

fn train_cmd(ctx: &Context) -> CliResult<()> {
    let train_data = ctx.load_split(Split::Train)?;
    let test = ctx.load_split(Split::Test)?;
    let stored = ctx.load_prior()?;
    let prior = if stored.tau() == ctx.bench.train.tau {
        stored
    } else {
        normalize_budget(stored.raw(), ctx.bench.train.tau)?
    };
    let pairs = if ctx.bench.train.warm_start {
        Some(ctx.load_pairs()?)
    } else {
        None
    };
    let trained = match train(
        &train_data,
        Some(&test),
        &prior,
        &ctx.bench.train,
        pairs.as_deref(),
    ) {
        Ok(t) => t,
        Err(Error::Diverged {
            epoch,
            batch,
            loss,
            last_good,
        }) => {
            let path = ctx.path("last_good.ckpt");
            last_good.to_checkpoint().save(&path)?;
            return Err(format!(
                "training diverged (loss {loss} at epoch {epoch}, batch {batch}); last good parameters in {}",
                path.display()
            )
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    trained.save(&ctx.path(MODEL_FILE))?;
    log_table(&trained.log).write(&ctx.path("train_log.csv"), &ctx.meta("train-log"))?;
    if let Some(last) = trained.log.last() {
        println!("final test accuracy {:.4}", last.test_acc);
    }
    ctx.save_config()?;
    Ok(())
}

fn eval_cmd(ctx: &Context) -> CliResult<()> {
    let trained = ctx.load_model()?;
    let test = ctx.load_split(Split::Test)?;
    let digest = ctx.bench.digest();
    let mut reports = vec![evaluate(&trained, &test, ctx.seed(), &digest)?];
    println!("Acc_m = {:.4}", reports[0].acc_multimodal);
    let corrupt_dir = ctx.path(CORRUPT_DIR);
    if corrupt_dir.exists() {
        let corrupt = Dataset::load(&corrupt_dir, Split::Test)?;
        reports.push(evaluate(&trained, &corrupt, ctx.seed(), &digest)?);
        eval_table(&reports[1..])
            .write(&ctx.path("eval_corrupt.csv"), &ctx.meta("eval-corrupt"))?;
    }
    eval_table(&reports[..1]).write(&ctx.path("eval.csv"), &ctx.meta("eval"))?;
    Ok(())
}

fn compare_weights(ctx: &Context) -> CliResult<()> {
    let trained = ctx.load_model()?;
    let test = ctx.load_split(Split::Test)?;
    let gaps = compare_prior_weights(&trained, &test)?;
    for g in &gaps {
        println!(
            "modality {}: beta {:.4}, mean weight {:.4}, gap {:.4}",
            g.modality, g.beta, g.mean_weight, g.gap
        );
    }
    weight_gap_table(&gaps).write(&ctx.path("weights.csv"), &ctx.meta("compare-weights"))?;
    Ok(())
}

fn ablate(ctx: &Context, seeds: &[u64], variants: &[String]) -> CliResult<()> {
    let variants = variants
        .iter()
        .map(|v| v.parse())
        .collect::<Result<Vec<Variant>, _>>()?;
    let mut lab = Lab::new(ctx.bench.clone())?;
    let result = lab.run_ablation(seeds, &variants)?;
    for r in &variants {
        let row = result.get(*r).expect("variant was run");
        println!("{:<10} {:.4} ± {:.4}", r.name(), row.mean(), row.std());
    }
    result
        .to_table()
        .write(&ctx.path("ablation.csv"), &ctx.meta("ablation"))?;
    Ok(())
}

fn sweep(ctx: &Context, param: Param, grid: &[f64], seeds: &[u64]) -> CliResult<()> {
    let param = match param {
        Param::Tau => SweepParam::Tau,
        Param::Gamma => SweepParam::Gamma,
    };
    let mut lab = Lab::new(ctx.bench.clone())?;
    let result = lab.sweep(param, grid, seeds)?;
    for (v, acc) in result.means() {
        println!("{} = {v}: {acc:.4}", param.name());
    }
    let name = format!("sweep_{}.csv", param.name());
    result
        .to_table()
        .write(&ctx.path(&name), &ctx.meta("sweep"))?;
    Ok(())
}

fn run(cli: &Cli, ctx: &Context) -> CliResult<()> {
    fs::create_dir_all(&ctx.dir).map_err(|e| format!("{}: {e}", ctx.dir.display()))?;
    match &cli.command {
        Command::GenData => gen_data(ctx),
        Command::Pretrain => pretrain(ctx),
        Command::EstimateIib => estimate_iib(ctx),
        Command::Train => train_cmd(ctx),
        Command::Eval => eval_cmd(ctx),
        Command::Ablate { seeds, variants } => ablate(ctx, seeds, variants),
        Command::Sweep { param, grid, seeds } => sweep(ctx, *param, grid, seeds),
        Command::CompareWeights => compare_weights(ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = match build_context(&cli) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("iibalance: configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cli, &ctx) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("iibalance: {e}");
            ExitCode::FAILURE
        }
    }
}
