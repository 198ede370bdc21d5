use std::fs;
use std::path::{Path, PathBuf};

use babble_core::corpus::{
    gen_corpus, gen_inventory, read_corpus, write_corpus, Corpus, Utterance,
};
use babble_core::models::load_checkpoint;
use babble_core::plant::SpeakerPlant;
use babble_core::probes::{
    artic_recovery_csv, correctness_csv, offset_bins_csv, offset_samples_csv,
    probe_articulatory_recovery, probe_correctness, probe_forward_accuracy, spearman,
    CorrectnessRow, OffsetProbeParams, OffsetProbeResult,
};
use babble_core::rng::RngStream;
use babble_core::trainer::{
    read_run_meta, run_training, Profile, TrainConfig, TrainSet, METRICS_HEADER,
};
use babble_core::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "babble",
    version,
    about = "Self-supervised forward/inverse vocal imitation against a synthetic plant"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Generate a corpus of synthetic utterances for one speaker
    GenCorpus(GenCorpusArgs),
    /// Train a forward/inverse model pair against one corpus
    Train(TrainArgs),
    /// Run the speakers x seeds matrix and summarize final correctness
    Matrix(MatrixArgs),
    /// Probe a finished run: forward locality, correctness, articulatory recovery
    Probe(ProbeArgs),
    /// Concatenate per-run metrics into one table keyed by speaker, seed, epoch
    Report(ReportArgs),
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::GenCorpus(a) => cmd_gen_corpus(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Matrix(a) => cmd_matrix(a),
        Cmd::Probe(a) => cmd_probe(a),
        Cmd::Report(a) => cmd_report(a),
    }
}

// ---- gen-corpus ----

#[derive(Args)]
pub struct GenCorpusArgs {
    /// Speaker whose plant produces the material: RS, S1, or S2
    #[arg(long, default_value = "RS")]
    speaker: String,
    /// Number of utterances
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Generation seed; inventory, trajectories, and split all derive from it
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output corpus file
    #[arg(long)]
    out: PathBuf,
    /// Overwrite the output file if it exists
    #[arg(long)]
    force: bool,
}

fn cmd_gen_corpus(a: &GenCorpusArgs) -> Result<()> {
    if a.out.exists() && !a.force {
        return Err(Error::Config(format!(
            "{} exists; pass --force to overwrite",
            a.out.display()
        )));
    }
    let plant = SpeakerPlant::by_name(&a.speaker)?;
    let corpus = gen_corpus(&plant, a.n, a.seed)?;
    write_corpus(&corpus, &a.out)?;
    println!(
        "wrote {}: speaker {} seed {} split train/val/test = {}/{}/{}",
        a.out.display(),
        corpus.header.speaker,
        corpus.header.seed,
        corpus.split.train.len(),
        corpus.split.val.len(),
        corpus.split.test.len()
    );
    Ok(())
}

// ---- shared config plumbing ----

/// Optional config-file keys. Mirrors the override flags exactly; unknown
/// keys are rejected so typos cannot silently fall back to defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileOverrides {
    profile: Option<String>,
    seed: Option<u64>,
    agent_speaker: Option<String>,
    k: Option<usize>,
    lr_f: Option<f64>,
    lr_g: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    eps: Option<f64>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    recompute_for_inverse: Option<bool>,
    noise_sigma: Option<f64>,
    hidden_width: Option<usize>,
    n_blocks: Option<usize>,
    lstm_cells: Option<usize>,
    dropout_p: Option<f64>,
}

fn parse_overrides(path: &Path) -> Result<FileOverrides> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))
}

/// Training overrides; flags beat config-file keys, which beat the profile
/// defaults shown in brackets.
#[derive(Args, Debug, Default)]
pub struct OverrideFlags {
    /// Minibatch size in sequences [default: 8]
    #[arg(long)]
    k: Option<usize>,
    /// Forward-model Adam learning rate [default: 0.001]
    #[arg(long)]
    lr_f: Option<f64>,
    /// Inverse-model Adam learning rate [default: 0.001]
    #[arg(long)]
    lr_g: Option<f64>,
    /// Adam beta1 [default: 0.9]
    #[arg(long)]
    beta1: Option<f64>,
    /// Adam beta2 [default: 0.999]
    #[arg(long)]
    beta2: Option<f64>,
    /// Adam epsilon [default: 1e-8]
    #[arg(long)]
    eps: Option<f64>,
    /// Epoch cap [default: 300]
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Epochs without validation improvement before stopping [default: 20]
    #[arg(long)]
    patience: Option<usize>,
    /// Recompute the inversion against the just-updated forward model
    /// [default: true]
    #[arg(long)]
    recompute_for_inverse: Option<bool>,
    /// Stddev of exploration noise on executed commands [default: 0]
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Forward-model hidden width [default: 64 desk, 256 paper]
    #[arg(long)]
    hidden_width: Option<usize>,
    /// Forward-model hidden block count [default: 4]
    #[arg(long)]
    n_blocks: Option<usize>,
    /// LSTM cells per inverse-model layer [default: 32]
    #[arg(long)]
    lstm_cells: Option<usize>,
    /// Dropout probability in both models [default: 0.25]
    #[arg(long)]
    dropout_p: Option<f64>,
}

fn build_config(
    profile_flag: Option<&str>,
    seed_flag: Option<u64>,
    file: &FileOverrides,
    flags: &OverrideFlags,
) -> Result<TrainConfig> {
    let profile: Profile = profile_flag
        .map(str::to_string)
        .or_else(|| file.profile.clone())
        .unwrap_or_else(|| "desk".to_string())
        .parse()?;
    let seed = seed_flag.or(file.seed).unwrap_or(1);
    let mut cfg = TrainConfig::new(profile, seed);
    cfg.k = flags.k.or(file.k).unwrap_or(cfg.k);
    cfg.lr_f = flags.lr_f.or(file.lr_f).unwrap_or(cfg.lr_f);
    cfg.lr_g = flags.lr_g.or(file.lr_g).unwrap_or(cfg.lr_g);
    cfg.beta1 = flags.beta1.or(file.beta1).unwrap_or(cfg.beta1);
    cfg.beta2 = flags.beta2.or(file.beta2).unwrap_or(cfg.beta2);
    cfg.eps = flags.eps.or(file.eps).unwrap_or(cfg.eps);
    cfg.max_epochs = flags.max_epochs.or(file.max_epochs).unwrap_or(cfg.max_epochs);
    cfg.patience = flags.patience.or(file.patience).unwrap_or(cfg.patience);
    cfg.recompute_for_inverse = flags
        .recompute_for_inverse
        .or(file.recompute_for_inverse)
        .unwrap_or(cfg.recompute_for_inverse);
    cfg.noise_sigma = flags.noise_sigma.or(file.noise_sigma).unwrap_or(cfg.noise_sigma);
    cfg.model.hidden_width = flags
        .hidden_width
        .or(file.hidden_width)
        .unwrap_or(cfg.model.hidden_width);
    cfg.model.n_blocks = flags.n_blocks.or(file.n_blocks).unwrap_or(cfg.model.n_blocks);
    cfg.model.lstm_cells = flags
        .lstm_cells
        .or(file.lstm_cells)
        .unwrap_or(cfg.model.lstm_cells);
    cfg.model.dropout_p = flags.dropout_p.or(file.dropout_p).unwrap_or(cfg.model.dropout_p);
    cfg.validate()?;
    Ok(cfg)
}

/// Run directories are append-only: refuse a non-empty target unless --force,
/// in which case the old directory is replaced wholesale.
fn prepare_run_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && dir.read_dir()?.next().is_some() {
        if !force {
            return Err(Error::Config(format!(
                "run directory {} is not empty; pass --force to replace it",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir)?;
    }
    Ok(())
}

// ---- train ----

#[derive(Args)]
pub struct TrainArgs {
    /// Corpus file to imitate
    #[arg(long)]
    corpus: PathBuf,
    /// Run directory to create
    #[arg(long)]
    out: PathBuf,
    /// Run seed for init, shuffling, and dropout [default: 1]
    #[arg(long)]
    seed: Option<u64>,
    /// Architecture profile: desk or paper [default: desk]
    #[arg(long)]
    profile: Option<String>,
    /// Speaker whose plant executes the commands [default: RS]
    #[arg(long)]
    agent_speaker: Option<String>,
    /// Config file (JSON object) with the same keys as the override flags
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: OverrideFlags,
    /// Replace a non-empty run directory
    #[arg(long)]
    force: bool,
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => parse_overrides(p)?,
        None => FileOverrides::default(),
    };
    let cfg = build_config(a.profile.as_deref(), a.seed, &file, &a.overrides)?;
    let agent_name = a
        .agent_speaker
        .clone()
        .or_else(|| file.agent_speaker.clone())
        .unwrap_or_else(|| "RS".to_string());
    let agent = SpeakerPlant::by_name(&agent_name)?;
    prepare_run_dir(&a.out, a.force)?;
    let corpus = read_corpus(&a.corpus)?;
    let set = TrainSet::from_corpus(&corpus)?;
    let rec = run_training(&set, &agent, &cfg, &a.out)?;
    let last = rec.metrics.last().expect("at least one epoch");
    println!(
        "run {}: {} epochs (best {}{}), final rmse_inverse {:.4} rmse_forward {:.4}",
        a.out.display(),
        rec.metrics.len(),
        rec.best_epoch,
        if rec.stopped_early { ", stopped early" } else { "" },
        last.rmse_inverse,
        last.rmse_forward
    );
    Ok(())
}

// ---- matrix ----

#[derive(Args)]
pub struct MatrixArgs {
    /// Matrix root directory; corpora/ and runs/ are created inside
    #[arg(long)]
    dir: PathBuf,
    /// Target speakers to imitate
    #[arg(long, value_delimiter = ',', default_values_t = ["RS".to_string(), "S1".to_string(), "S2".to_string()])]
    speakers: Vec<String>,
    /// Run seeds per speaker
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    seeds: Vec<u64>,
    /// Utterances per generated corpus
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Corpus generation seed shared by all speakers
    #[arg(long, default_value_t = 7)]
    corpus_seed: u64,
    /// Speaker whose plant executes all imitations
    #[arg(long, default_value = "RS")]
    agent_speaker: String,
    /// Architecture profile: desk or paper [default: desk]
    #[arg(long)]
    profile: Option<String>,
    /// Config file applied to every cell
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: OverrideFlags,
    /// Replace non-empty run directories
    #[arg(long)]
    force: bool,
}

fn matrix_cell(
    corpus: &Corpus,
    agent: &SpeakerPlant,
    cfg: &TrainConfig,
    run_dir: &Path,
    force: bool,
) -> Result<CorrectnessRow> {
    prepare_run_dir(run_dir, force)?;
    let set = TrainSet::from_corpus(corpus)?;
    run_training(&set, agent, cfg, run_dir)?;
    let (_, g_final, final_epoch) = load_checkpoint(&run_dir.join("final.json"))?;
    let test = corpus.subset(&corpus.split.test)?;
    let inventory = gen_inventory(corpus.header.seed)?;
    let correctness = probe_correctness(&g_final, agent, &test, &inventory)?;
    Ok(CorrectnessRow {
        epoch: final_epoch,
        speaker: corpus.header.speaker.clone(),
        seed: cfg.seed,
        correctness,
    })
}

fn cmd_matrix(a: &MatrixArgs) -> Result<()> {
    if a.speakers.is_empty() || a.seeds.is_empty() {
        return Err(Error::Config(
            "matrix needs at least one speaker and one seed".into(),
        ));
    }
    let file = match &a.config {
        Some(p) => parse_overrides(p)?,
        None => FileOverrides::default(),
    };
    let agent = SpeakerPlant::by_name(&a.agent_speaker)?;
    fs::create_dir_all(a.dir.join("corpora"))?;
    fs::create_dir_all(a.dir.join("runs"))?;

    let mut corpora: Vec<Corpus> = Vec::new();
    for sp in &a.speakers {
        let path = a
            .dir
            .join("corpora")
            .join(format!("{}.corpus", sp.to_lowercase()));
        let corpus = if path.exists() {
            read_corpus(&path)?
        } else {
            let material = SpeakerPlant::by_name(sp)?;
            let c = gen_corpus(&material, a.n, a.corpus_seed)?;
            write_corpus(&c, &path)?;
            c
        };
        corpora.push(corpus);
    }

    // Cells are independent (own run directory, own models); they run
    // sequentially here because one desk run already saturates a core.
    let mut rows: Vec<CorrectnessRow> = Vec::new();
    let mut failed: Vec<String> = Vec::new();
    for (sp, corpus) in a.speakers.iter().zip(&corpora) {
        for &seed in &a.seeds {
            let run_dir = a
                .dir
                .join("runs")
                .join(format!("{}-seed{}", sp.to_lowercase(), seed));
            let cfg = build_config(a.profile.as_deref(), Some(seed), &file, &a.overrides)?;
            match matrix_cell(corpus, &agent, &cfg, &run_dir, a.force) {
                Ok(row) => {
                    println!(
                        "cell {sp} seed {seed}: final epoch {} correctness {:.4}",
                        row.epoch, row.correctness
                    );
                    rows.push(row);
                }
                Err(e) => {
                    eprintln!("cell {sp} seed {seed} failed: {e}");
                    failed.push(format!("{sp} seed {seed}"));
                }
            }
        }
    }

    let summary = a.dir.join("matrix-summary.csv");
    fs::write(&summary, correctness_csv(&rows))?;
    for sp in &a.speakers {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| &r.speaker == sp)
            .map(|r| r.correctness)
            .collect();
        if !vals.is_empty() {
            println!(
                "speaker {sp}: mean final correctness {:.4} over {} runs",
                vals.iter().sum::<f64>() / vals.len() as f64,
                vals.len()
            );
        }
    }
    println!("summary written to {}", summary.display());
    if !failed.is_empty() {
        return Err(Error::Contract(format!(
            "{} of {} matrix cells failed: {}",
            failed.len(),
            a.speakers.len() * a.seeds.len(),
            failed.join(", ")
        )));
    }
    Ok(())
}

// ---- probe ----

#[derive(Args)]
pub struct ProbeArgs {
    /// Run directory holding epoch-1.json and final.json
    #[arg(long)]
    run: PathBuf,
    /// Corpus the run imitated; labels and articulation are read from here
    #[arg(long)]
    corpus: PathBuf,
    /// Random offsets drawn per test frame
    #[arg(long, default_value_t = 4)]
    offsets_per_frame: usize,
    /// Largest offset magnitude before clamping
    #[arg(long, default_value_t = 1.5)]
    max_offset: f64,
    /// Number of equal-width distance bins
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Seed of the offset stream [default: the run seed]
    #[arg(long)]
    probe_seed: Option<u64>,
}

fn nearest_bin_error(r: &OffsetProbeResult) -> Option<f64> {
    r.bins.iter().find(|b| b.count > 0).map(|b| b.mean_error)
}

fn cmd_probe(a: &ProbeArgs) -> Result<()> {
    let meta = read_run_meta(&a.run)?;
    let agent = SpeakerPlant::by_name(&meta.agent)?;
    let corpus = read_corpus(&a.corpus)?;
    if corpus.header.speaker != meta.speaker {
        return Err(Error::Config(format!(
            "run imitated speaker {} but corpus {} holds speaker {}",
            meta.speaker,
            a.corpus.display(),
            corpus.header.speaker
        )));
    }
    let test: Vec<&Utterance> = corpus.subset(&corpus.split.test)?;
    let (f_first, _, first_epoch) = load_checkpoint(&a.run.join("epoch-1.json"))?;
    let (f_final, g_final, final_epoch) = load_checkpoint(&a.run.join("final.json"))?;
    let params = OffsetProbeParams {
        n_offsets_per_frame: a.offsets_per_frame,
        max_magnitude: a.max_offset,
        n_bins: a.bins,
    };
    let probe_seed = a.probe_seed.unwrap_or(meta.config.seed);
    // both probes replay the same stream so their errors differ only in f
    let first = probe_forward_accuracy(
        &g_final,
        &f_first,
        &agent,
        &test,
        &params,
        &mut RngStream::new(probe_seed, "probe"),
        &format!("epoch-{first_epoch}"),
    )?;
    let last = probe_forward_accuracy(
        &g_final,
        &f_final,
        &agent,
        &test,
        &params,
        &mut RngStream::new(probe_seed, "probe"),
        &format!("final-{final_epoch}"),
    )?;
    fs::write(a.run.join("offset-bins.csv"), offset_bins_csv(&[&first, &last]))?;
    fs::write(
        a.run.join("offset-samples.csv"),
        offset_samples_csv(&[&first, &last]),
    )?;

    let inventory = gen_inventory(corpus.header.seed)?;
    let correctness = probe_correctness(&g_final, &agent, &test, &inventory)?;
    fs::write(
        a.run.join("correctness.csv"),
        correctness_csv(&[CorrectnessRow {
            epoch: final_epoch,
            speaker: meta.speaker.clone(),
            seed: meta.config.seed,
            correctness,
        }]),
    )?;

    // recovery compares against the generator's articulation, which only
    // matches the agent's plant in the self-imitation cell
    if meta.speaker == meta.agent {
        let rec = probe_articulatory_recovery(&g_final, &test)?;
        fs::write(a.run.join("artic-recovery.csv"), artic_recovery_csv(&rec))?;
    }

    let centers: Vec<f64> = last
        .bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| (b.lo + b.hi) / 2.0)
        .collect();
    let errors: Vec<f64> = last
        .bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| b.mean_error)
        .collect();
    let rho = spearman(&centers, &errors)?;
    let (e1, ef) = (
        nearest_bin_error(&first).unwrap_or(0.0),
        nearest_bin_error(&last).unwrap_or(f64::NAN),
    );
    println!(
        "probe {}: correctness {:.4}, distance/error spearman {:.3}, nearest-bin error {:.4} (epoch 1: {:.4})",
        a.run.display(),
        correctness,
        rho,
        ef,
        e1
    );
    Ok(())
}

// ---- report ----

#[derive(Args)]
pub struct ReportArgs {
    /// Directory whose immediate subdirectories are run directories
    #[arg(long)]
    runs: PathBuf,
    /// Output CSV file; written to stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut dirs: Vec<PathBuf> = Vec::new();
    for entry in fs::read_dir(&a.runs)? {
        let p = entry?.path();
        if p.join("config.json").exists() && p.join("metrics.csv").exists() {
            dirs.push(p);
        }
    }
    dirs.sort();
    let mut out = format!("speaker,seed,{METRICS_HEADER}\n");
    for dir in &dirs {
        let meta = read_run_meta(dir)?;
        let text = fs::read_to_string(dir.join("metrics.csv"))?;
        for line in text.lines().skip(1) {
            out.push_str(&format!("{},{},{line}\n", meta.speaker, meta.config.seed));
        }
    }
    match &a.out {
        Some(p) => {
            fs::write(p, &out)?;
            println!("wrote {} ({} runs)", p.display(), dirs.len());
        }
        None => print!("{out}"),
    }
    Ok(())
}
