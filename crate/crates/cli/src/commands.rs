use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use qfan::baselines::{ablation_csv, run_ablation_suite, AblationSettings, AblationSuite};
use qfan::config::{RecipeConfig, RunConfig};
use qfan::data::{load_dataset, save_csv, save_dataset, split as split_rows, synth_showers};
use qfan::evaluation::{evaluate as evaluate_sets, noise_accumulation_check, scaling_table};
use qfan::generation::{generate_batch, GenerationRecord};
use qfan::theory::{circuit_count_grid, ridge_bound_check, sketch_inner_product_check};
use qfan::training::{total_circuit_count, train_with};
use qfan::{BlockPartition, Dataset, Model, ModelBundle, ModelConfig, QfanError, Readout, ShowerRecipe};
use serde::Serialize;

use crate::{
    AblateArgs, EvaluateArgs, GenDataArgs, GenerateArgs, ScaleArgs, SplitArgs, SuiteArg, TheoryArgs, TheorySuite,
    TrainArgs,
};

pub struct Context {
    pub out_dir: PathBuf,
}

impl Context {
    fn path(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out_dir.join(default))
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(QfanError),
    /// A check ran to completion and did not hold.
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) | CliError::Check(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl From<QfanError> for CliError {
    fn from(e: QfanError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

type CliResult = Result<(), CliError>;

fn ensure_parent(path: &Path) -> std::io::Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    ensure_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    ensure_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn save_any(ds: &Dataset, path: &Path) -> CliResult {
    ensure_parent(path)?;
    if is_csv(path) {
        save_csv(ds, path)?;
    } else {
        save_dataset(ds, path)?;
    }
    Ok(())
}

fn load_run_config(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    let config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

pub fn gen_data(ctx: &Context, a: &GenDataArgs) -> CliResult {
    let recipe = match &a.recipe {
        Some(p) => RecipeConfig::load(p)?.recipe,
        None => ShowerRecipe::default(),
    };
    let ds = synth_showers(&recipe, a.d, a.n, a.seed)?;
    let out = ctx.path(&a.out, "data.bin");
    save_any(&ds, &out)?;
    write_json(&sidecar(&out, ".meta.json"), &ds.meta)?;
    println!("wrote {} x {} to {}", ds.n(), ds.d(), out.display());
    Ok(())
}

pub fn split(ctx: &Context, a: &SplitArgs) -> CliResult {
    let ds = load_dataset(&a.data)?;
    let (train, test) = split_rows(&ds, a.train, a.test, a.seed)?;
    let out_train = ctx.path(&a.out_train, "train.bin");
    let out_test = ctx.path(&a.out_test, "test.bin");
    save_any(&train, &out_train)?;
    save_any(&test, &out_test)?;
    println!(
        "train {} -> {}, test {} -> {}",
        train.n(),
        out_train.display(),
        test.n(),
        out_test.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainReport {
    seed: u64,
    d: usize,
    blocks: usize,
    feature_dim: usize,
    steps: usize,
    circuits: u64,
    expected_circuits: u64,
    initial_loss: qfan::training::LossSummary,
    final_loss: qfan::training::LossSummary,
    gain: f64,
    bundle_hash: String,
}

pub fn train(ctx: &Context, a: &TrainArgs) -> CliResult {
    let mut config = load_run_config(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if a.exact {
        config.train.exact = true;
    }
    let data = load_dataset(&a.data)?;
    let model = Model::new(&config.model, data.d(), config.seed)?;
    let out = ctx.path(&a.out, "bundle");
    fs::create_dir_all(&out)?;
    let mut history = fs::File::create(out.join("history.jsonl"))?;
    let mut write_err = None;
    let outcome = train_with(&model, &config.train, &data, config.seed, |r| {
        if write_err.is_none() {
            let line = serde_json::to_string(r).map_err(std::io::Error::from);
            if let Err(e) = line.and_then(|l| writeln!(history, "{l}")) {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    let circuits = outcome.total_circuits();
    let expected = if model.uses_circuit() {
        total_circuit_count(
            config.train.steps,
            config.train.batch,
            qfan::quantum::MEASUREMENT_GROUPS,
        )
    } else {
        0
    };
    if circuits != expected {
        return Err(CliError::Check(format!(
            "executed {circuits} circuits, expected {expected}"
        )));
    }
    let blocks = model.blocks();
    let feature_dim = model.feature_dim();
    let (initial_loss, final_loss) = (outcome.initial_loss, outcome.final_loss);
    let bundle = ModelBundle::new(model, outcome.theta, outcome.fits, config.train.clone())?;
    bundle.save(&out)?;
    let report = TrainReport {
        seed: config.seed,
        d: data.d(),
        blocks,
        feature_dim,
        steps: config.train.steps,
        circuits,
        expected_circuits: expected,
        gain: bundle.gain(),
        bundle_hash: bundle.hash()?,
        initial_loss,
        final_loss,
    };
    write_json(&out.join("train_report.json"), &report)?;
    println!(
        "loss {:.6} -> {:.6} +/- {:.6} (95%), circuits {} = 2*T*G*n_b",
        report.initial_loss.mean, report.final_loss.mean, report.final_loss.ci_half_width, circuits
    );
    println!("bundle {}", out.display());
    Ok(())
}

pub fn generate(ctx: &Context, a: &GenerateArgs) -> CliResult {
    let bundle = ModelBundle::load(&a.bundle)?;
    let readout = match (a.exact, a.shots) {
        (true, _) => Readout::Exact,
        (false, Some(s)) => Readout::Shots(s),
        (false, None) => bundle.train_config.readout(),
    };
    let residuals = !a.no_residuals;
    let y = generate_batch(&bundle, a.n, readout, a.seed, residuals)?;
    let ds = Dataset::from_matrix(y)?;
    let out = ctx.path(&a.out, "generated.bin");
    save_any(&ds, &out)?;
    let record = GenerationRecord {
        bundle_hash: bundle.hash()?,
        seed: a.seed,
        n: a.n,
        shots: match readout {
            Readout::Exact => None,
            Readout::Shots(s) => Some(s),
        },
        residuals,
    };
    write_json(&sidecar(&out, ".provenance.json"), &record)?;
    println!("wrote {} samples to {}", ds.n(), out.display());
    Ok(())
}

pub fn evaluate(ctx: &Context, a: &EvaluateArgs) -> CliResult {
    let truth = load_dataset(&a.truth)?;
    let gen = load_dataset(&a.gen)?;
    let d = truth.d();
    let partition = match (a.blocks, a.block_size) {
        (Some(b), _) => BlockPartition::balanced(d, b)?,
        (None, Some(w)) => BlockPartition::uniform(d, w)?,
        (None, None) => ModelConfig::default().partition(d)?,
    };
    let report = evaluate_sets(&truth.y, &gen.y, &partition)?;
    let out = ctx.path(&a.out, "report.json");
    write_json(&out, &report)?;
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_default();
    for (name, text) in report.csv_artifacts(&truth.y, &gen.y) {
        write_text(&dir.join(name), &text)?;
    }
    println!(
        "W1 mean {:.6} (iqr {:.6}), corr error {:.6}, energy W1 {:.6}, MMD2 {:.6}, signs {}/{}",
        report.w1.mean,
        report.iqr_scale,
        report.corr_error,
        report.energy.w1,
        report.mmd2,
        report.sign_matches,
        report.sign_checked
    );
    Ok(())
}

pub fn ablate(ctx: &Context, a: &AblateArgs) -> CliResult {
    let config = load_run_config(&a.config)?;
    if a.seeds.is_empty() {
        return Err(CliError::Usage("--seeds must list at least one seed".into()));
    }
    let train_data = load_dataset(&a.train)?;
    let test_data = load_dataset(&a.test)?;
    let suite = match a.suite {
        SuiteArg::Weight2 => AblationSuite::Weight2,
        SuiteArg::Blocksize => AblationSuite::Blocksize,
        SuiteArg::Rff => AblationSuite::Rff,
    };
    let settings = AblationSettings {
        train: config.train.clone(),
        seeds: a.seeds.clone(),
        generated: a.n_gen,
        residuals: !a.no_residuals,
    };
    let rows = run_ablation_suite(&train_data, &test_data, &config.model, suite, &settings)?;
    let out = ctx.path(&a.out, "ablation.csv");
    let csv = ablation_csv(&rows);
    write_text(&out, &csv)?;
    write_json(&out.with_extension("json"), &rows)?;
    print!("{csv}");
    Ok(())
}

pub fn theory_check(ctx: &Context, a: &TheoryArgs) -> CliResult {
    let out = ctx.path(&a.out, "theory.json");
    match a.suite {
        TheorySuite::Sketch => {
            let checks = [8, 32]
                .iter()
                .map(|&m| sketch_inner_product_check(12, m, a.plans, a.seed))
                .collect::<Result<Vec<_>, _>>()?;
            write_json(&out, &checks)?;
            for c in &checks {
                println!(
                    "m={} mean {:.6} truth {:.6} se {:.6} var {:.6} cap {:.6}",
                    c.m, c.mean, c.truth, c.std_error, c.variance, c.variance_cap
                );
            }
            if let Some(c) = checks.iter().find(|c| !(c.unbiased && c.variance_ok)) {
                return Err(CliError::Check(format!("sketch inner product at m={}", c.m)));
            }
        }
        TheorySuite::Noise => {
            let dir = a
                .bundle
                .as_ref()
                .ok_or_else(|| CliError::Usage("--bundle is required for the noise suite".into()))?;
            let bundle = ModelBundle::load(dir)?;
            let rows = noise_accumulation_check(&bundle, &a.shots, a.pairs, a.seed)?;
            write_json(&out, &rows)?;
            for r in &rows {
                println!(
                    "N_s={} empirical {:.6} bound {:.6} ratio {:.4}",
                    r.shots,
                    r.empirical,
                    r.bound,
                    r.ratio()
                );
            }
            if let Some(r) = rows.iter().find(|r| r.empirical > r.bound) {
                return Err(CliError::Check(format!("shot noise exceeds bound at N_s={}", r.shots)));
            }
        }
        TheorySuite::Counts => {
            let rows = circuit_count_grid(&[12, 25], &[2, 3], &[64, 128], a.seed)?;
            write_json(&out, &rows)?;
            for r in &rows {
                println!(
                    "d={} B={} n_b={} circuits {} expected {}",
                    r.d, r.blocks, r.batch, r.circuits, r.expected
                );
            }
            if let Some(r) = rows.iter().find(|r| r.circuits != r.expected) {
                return Err(CliError::Check(format!(
                    "circuit count {} != {}",
                    r.circuits, r.expected
                )));
            }
        }
        TheorySuite::Ridge => {
            let check = ridge_bound_check(200, a.seed)?;
            write_json(&out, &check)?;
            println!(
                "{}/{} within bound, max ratio {:.4}, max gain {:.3}",
                check.bound_holds, check.trials, check.max_ratio, check.max_gain
            );
            if check.bound_holds != check.trials {
                return Err(CliError::Check("ridge weight bound".into()));
            }
        }
    }
    Ok(())
}

pub fn scale_table(ctx: &Context, a: &ScaleArgs) -> CliResult {
    if a.d.len() != a.nq.len() {
        return Err(CliError::Usage(format!(
            "--d has {} entries but --nq has {}",
            a.d.len(),
            a.nq.len()
        )));
    }
    let m = match a.m.len() {
        0 => vec![32; a.d.len()],
        1 => vec![a.m[0]; a.d.len()],
        k if k == a.d.len() => a.m.clone(),
        k => {
            return Err(CliError::Usage(format!(
                "--m has {k} entries, expected 1 or {}",
                a.d.len()
            )))
        }
    };
    if !(a.rho_min > 0.0) {
        return Err(CliError::Core(QfanError::InvalidConfig(format!(
            "rho-min must be > 0, got {}",
            a.rho_min
        ))));
    }
    let triples: Vec<_> = a.d.iter().zip(&a.nq).zip(&m).map(|((&d, &n), &m)| (d, n, m)).collect();
    let rows = scaling_table(&triples, a.rho_min, a.n);
    let out = ctx.path(&a.out, "scale.json");
    write_json(&out, &rows)?;
    println!(
        "{:>7} {:>4} {:>5} {:>6} {:>6} {:>4} {:>12} {:>9}",
        "d", "n_q", "p_f", "b_max", "B_min", "m", "cache_MB", "fidelity"
    );
    for r in &rows {
        println!(
            "{:>7} {:>4} {:>5} {:>6} {:>6} {:>4} {:>12.3} {:>9.4}",
            r.d,
            r.n_qubits,
            r.p_f,
            r.b_max,
            r.b_min,
            r.sketch_dim,
            r.cache_bytes as f64 / 1e6,
            r.fidelity
        );
    }
    Ok(())
}
