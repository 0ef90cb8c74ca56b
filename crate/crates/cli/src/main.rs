use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rand_distr::StandardNormal;

use levelgen::catalog::{default_catalog, load_catalog, Level, ObjectCatalog};
use levelgen::codec::{decode, encode, GridSpec, LevelMatrix};
use levelgen::embedding::{cbow_train, CbowConfig, EmbeddingModel, Sentence, Vocabulary};
use levelgen::lve::{run_lve, HistoryRow, LveConfig, Objective, SearchMode, Solution};
use levelgen::metrics::{diversity_csv, stability_csv, stability_rate, DiversityReport};
use levelgen::render::render_svg;
use levelgen::seed::SeedTree;
use levelgen::seqvae::{EpochLog, InputEncoding, VaeConfig, VaeGenerator, VaeModel};
use levelgen::synth::{read_dataset, synth_dataset, write_dataset, SynthConfig};
use levelgen::xml::{parse_level, write_level};

#[derive(Parser)]
#[command(name = "levelgen", version, about = "Train and steer a sequential VAE level generator")]
struct Cli {
    /// Object catalog file (built-in catalog when omitted).
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus of stable tower levels.
    SynthDataset(SynthArgs),
    /// Level XML to level matrix text.
    Encode(InOut),
    /// Level matrix text to level XML.
    Decode(InOut),
    /// Collect the row vocabulary of a dataset.
    BuildVocab(BuildVocabArgs),
    /// Train the word embedding.
    TrainEmbed(TrainEmbedArgs),
    /// Train the sequential VAE.
    TrainVae(TrainVaeArgs),
    /// Sample levels from a trained model.
    Generate(GenerateArgs),
    /// Search the latent space for levels that optimise an objective.
    Evolve(EvolveArgs),
    /// Corpus diversity or stability report.
    Metrics(MetricsArgs),
    /// Draw a level as SVG.
    Render(InOut),
}

#[derive(Args)]
struct InOut {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_towers: usize,
    #[arg(long, default_value_t = 6)]
    max_towers: usize,
    #[arg(long, default_value_t = 2)]
    min_height: usize,
    #[arg(long, default_value_t = 8)]
    max_height: usize,
    #[arg(long, default_value_t = SynthConfig::default().pig_prob)]
    pig_prob: f64,
    #[arg(long, default_value_t = SynthConfig::default().tnt_prob)]
    tnt_prob: f64,
    #[arg(long, default_value_t = SynthConfig::default().platform_prob)]
    platform_prob: f64,
}

#[derive(Args)]
struct BuildVocabArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainEmbedArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    window: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct TrainVaeArgs {
    /// `key=value` training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Trained embedding; required unless `--one-hot`.
    #[arg(long)]
    emb: Option<PathBuf>,
    /// Feed one-hot words instead of embeddings.
    #[arg(long)]
    one_hot: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    kl_free_epochs: Option<usize>,
    #[arg(long)]
    kl_ramp_epochs: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dim_z: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Pigs,
    Tnt,
    Difficulty,
    Aesthetics,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Dist,
    Direct,
}

#[derive(Args)]
struct EvolveArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum)]
    objective: ObjectiveArg,
    #[arg(long, value_enum, default_value = "dist")]
    mode: ModeArg,
    #[arg(long, default_value_t = 100)]
    generations: usize,
    #[arg(long, default_value_t = 60)]
    lambda: usize,
    /// Levels per fitness evaluation in dist mode.
    #[arg(long, default_value_t = 30)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(value_enum)]
    kind: MetricKind,
    /// Level directories; one report row each.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Vocabulary for diversity; built from all inputs when omitted.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricKind {
    Diversity,
    Stability,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    Ok(BufReader::new(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn read_level(catalog: &ObjectCatalog, path: &Path) -> Result<Level> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_level(catalog, &bytes).with_context(|| format!("parsing {}", path.display()))
}

fn load_levels(catalog: &ObjectCatalog, dir: &Path) -> Result<Vec<Level>> {
    read_dataset(dir, catalog).with_context(|| format!("reading dataset {}", dir.display()))
}

fn encode_all(catalog: &ObjectCatalog, levels: &[Level]) -> Result<Vec<LevelMatrix>> {
    let spec = GridSpec::default();
    levels
        .iter()
        .enumerate()
        .map(|(i, l)| encode(catalog, &spec, l).with_context(|| format!("encoding level {i}")))
        .collect()
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::parse(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn sentences(vocab: &Vocabulary, matrices: &[LevelMatrix]) -> Vec<Sentence> {
    matrices.iter().map(|m| vocab.matrix_to_sentence(m)).collect()
}

fn load_model(path: &Path) -> Result<(VaeModel, Vocabulary)> {
    VaeModel::read(&mut open(path)?).with_context(|| format!("loading model {}", path.display()))
}

fn synth(catalog: &ObjectCatalog, a: &SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_levels: a.count,
        seed: a.seed,
        towers: (a.min_towers, a.max_towers),
        tower_height: (a.min_height, a.max_height),
        pig_prob: a.pig_prob,
        tnt_prob: a.tnt_prob,
        platform_prob: a.platform_prob,
    };
    let levels = synth_dataset(catalog, &config)?;
    write_dataset(&a.out, catalog, &levels)?;
    log::info!("wrote {} levels to {}", levels.len(), a.out.display());
    Ok(())
}

fn train_embed(catalog: &ObjectCatalog, a: &TrainEmbedArgs) -> Result<()> {
    let vocab = load_vocab(&a.vocab)?;
    let corpus = sentences(&vocab, &encode_all(catalog, &load_levels(catalog, &a.dataset)?)?);
    let config = CbowConfig {
        dim_x: a.dim,
        window: a.window,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
    };
    let (model, losses) = cbow_train(&corpus, vocab.len(), &config)?;
    let mut w = create(&a.out)?;
    model.write(&mut w)?;
    w.flush()?;
    if let Some(path) = &a.log {
        let mut csv = String::from("epoch,loss\n");
        for (i, l) in losses.iter().enumerate() {
            csv.push_str(&format!("{i},{l}\n"));
        }
        write_file(path, csv)?;
    }
    log::info!("final loss {:.5}", losses.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn train_vae(catalog: &ObjectCatalog, a: &TrainVaeArgs) -> Result<()> {
    let mut config = VaeConfig::default();
    if let Some(path) = &a.config {
        config.apply_text(&read_text(path)?)?;
    }
    let overrides = [
        ("seed", a.seed.map(|v| v.to_string())),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("kl_free_epochs", a.kl_free_epochs.map(|v| v.to_string())),
        ("kl_ramp_epochs", a.kl_ramp_epochs.map(|v| v.to_string())),
        ("hidden", a.hidden.map(|v| v.to_string())),
        ("dim_z", a.dim_z.map(|v| v.to_string())),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            config.set(k, &v)?;
        }
    }
    let vocab = load_vocab(&a.vocab)?;
    let matrices = encode_all(catalog, &load_levels(catalog, &a.dataset)?)?;
    let corpus = sentences(&vocab, &matrices);
    if corpus.iter().flatten().any(|&w| w == vocab.unk()) {
        bail!(levelgen::Error::Config("the dataset has rows missing from the vocabulary; rebuild it".into()));
    }
    let (encoding, emb) = match (&a.emb, a.one_hot) {
        (_, true) => (InputEncoding::OneHot, None),
        (Some(path), false) => (
            InputEncoding::Embedding,
            Some(EmbeddingModel::read(&mut open(path)?).with_context(|| format!("loading {}", path.display()))?),
        ),
        (None, false) => bail!(levelgen::Error::Config("pass --emb or --one-hot".into())),
    };
    let mut model = VaeModel::with_encoding(&config, encoding, &vocab, emb.as_ref())?;
    let logs = model.train(&corpus, &config)?;
    let mut w = create(&a.out)?;
    model.write(&mut w, &vocab)?;
    w.flush()?;
    if let Some(path) = &a.log {
        let mut csv = format!("{}\n", EpochLog::HEADER);
        for l in &logs {
            csv.push_str(&l.to_csv());
            csv.push('\n');
        }
        write_file(path, csv)?;
    }
    Ok(())
}

fn generate(catalog: &ObjectCatalog, a: &GenerateArgs) -> Result<()> {
    let (model, vocab) = load_model(&a.model)?;
    let mut rng = SeedTree::new(a.seed).rng("generate", 0);
    let zs: Vec<Vec<f64>> = (0..a.count)
        .map(|_| (0..model.dim_z()).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let generator = VaeGenerator { model: &model, vocab: &vocab, catalog, spec: GridSpec::default() };
    let levels = levelgen::lve::LevelGenerator::generate_levels(&generator, &zs)?;
    write_dataset(&a.out, catalog, &levels)?;
    Ok(())
}

fn evolve(catalog: &ObjectCatalog, a: &EvolveArgs) -> Result<()> {
    let (model, vocab) = load_model(&a.model)?;
    let objective = match a.objective {
        ObjectiveArg::Pigs => Objective::Pigs,
        ObjectiveArg::Tnt => Objective::Tnt,
        ObjectiveArg::Difficulty => Objective::Difficulty,
        ObjectiveArg::Aesthetics => Objective::Aesthetics,
    };
    let mode = match a.mode {
        ModeArg::Dist => SearchMode::Dist,
        ModeArg::Direct => SearchMode::Direct,
    };
    let config = LveConfig { generations: a.generations, lambda: a.lambda, samples: a.samples, seed: a.seed, ..LveConfig::default() };
    let generator = VaeGenerator { model: &model, vocab: &vocab, catalog, spec: GridSpec::default() };
    let result = run_lve(catalog, &generator, objective, mode, &config)?;

    let mut csv = format!("{}\n", HistoryRow::HEADER);
    for row in &result.history {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    write_file(&a.out.join("history.csv"), csv)?;
    let solution = Solution { mode, objective, fitness: result.best_fitness, x: result.best };
    let mut w = create(&a.out.join("best.bin"))?;
    solution.write(&mut w)?;
    w.flush()?;
    let zs = solution.latents(config.feature_samples, &mut SeedTree::new(a.seed).rng("evolve-show", 0));
    let levels = levelgen::lve::LevelGenerator::generate_levels(&generator, &zs)?;
    write_dataset(&a.out.join("levels"), catalog, &levels)?;
    println!("best {objective} fitness {}", solution.fitness);
    Ok(())
}

fn metrics(catalog: &ObjectCatalog, a: &MetricsArgs) -> Result<()> {
    let mut sets = Vec::with_capacity(a.inputs.len());
    for dir in &a.inputs {
        sets.push(load_levels(catalog, dir)?);
    }
    let name = |p: &PathBuf| p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
    let csv = match a.kind {
        MetricKind::Stability => {
            let mut rows = Vec::new();
            for (dir, levels) in a.inputs.iter().zip(&sets) {
                let rate = stability_rate(catalog, levels).with_context(|| format!("scoring {}", dir.display()))?;
                println!("{}: stability {rate}", dir.display());
                rows.push((name(dir), levels.len(), rate));
            }
            let borrowed: Vec<(&str, usize, f64)> = rows.iter().map(|(n, c, r)| (n.as_str(), *c, *r)).collect();
            stability_csv(&borrowed)
        }
        MetricKind::Diversity => {
            let spec = GridSpec::default();
            let mut matrices = Vec::with_capacity(sets.len());
            for (dir, levels) in a.inputs.iter().zip(&sets) {
                let mut ok = Vec::with_capacity(levels.len());
                for (i, l) in levels.iter().enumerate() {
                    match encode(catalog, &spec, l) {
                        Ok(m) => ok.push(m),
                        Err(e) => log::warn!("{}: skipping level {i}: {e}", dir.display()),
                    }
                }
                if ok.len() < levels.len() {
                    println!("{}: {} of {} levels do not encode and were skipped", dir.display(), levels.len() - ok.len(), levels.len());
                }
                matrices.push(ok);
            }
            let vocab = match &a.vocab {
                Some(p) => load_vocab(p)?,
                None => Vocabulary::build(&matrices.concat())?,
            };
            let mut rows = Vec::new();
            for (dir, m) in a.inputs.iter().zip(&matrices) {
                let r = DiversityReport::of(&sentences(&vocab, m));
                println!("{}: distinct-1 {} distinct-2 {}", dir.display(), r.distinct_1, r.distinct_2);
                rows.push((name(dir), r));
            }
            let borrowed: Vec<(&str, DiversityReport)> = rows.iter().map(|(n, r)| (n.as_str(), *r)).collect();
            diversity_csv(&borrowed)
        }
    };
    write_file(&a.out, csv)
}

fn run(cli: Cli) -> Result<()> {
    let catalog = match &cli.catalog {
        Some(p) => load_catalog(p).with_context(|| format!("loading catalog {}", p.display()))?,
        None => default_catalog(),
    };
    let spec = GridSpec::default();
    match &cli.command {
        Command::SynthDataset(a) => synth(&catalog, a),
        Command::Encode(a) => {
            let level = read_level(&catalog, &a.input)?;
            write_file(&a.out, encode(&catalog, &spec, &level)?.to_text())
        }
        Command::Decode(a) => {
            let m = LevelMatrix::parse(&read_text(&a.input)?).with_context(|| format!("parsing {}", a.input.display()))?;
            write_file(&a.out, write_level(&catalog, &decode(&catalog, &spec, &m)?)?)
        }
        Command::BuildVocab(a) => {
            let vocab = Vocabulary::build(&encode_all(&catalog, &load_levels(&catalog, &a.dataset)?)?)?;
            log::info!("{} words", vocab.len());
            write_file(&a.out, vocab.to_text())
        }
        Command::TrainEmbed(a) => train_embed(&catalog, a),
        Command::TrainVae(a) => train_vae(&catalog, a),
        Command::Generate(a) => generate(&catalog, a),
        Command::Evolve(a) => evolve(&catalog, a),
        Command::Metrics(a) => metrics(&catalog, a),
        Command::Render(a) => {
            let level = read_level(&catalog, &a.input)?;
            write_file(&a.out, render_svg(&catalog, &spec, &level)?)
        }
    }
}

/// 1 usage or configuration, 2 data, 3 numeric failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    use levelgen::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::NonFinite { .. } | E::NanFitness { .. } => 3,
                E::Config(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
