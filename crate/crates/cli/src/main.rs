use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod files;

#[derive(Parser)]
#[command(name = "specfm", version, about = "Spectrum foundation-model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Run configuration file (key = value lines)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Random seed; overrides train.seed
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Binned,
    OxoniumRatio,
    OxoniumGbdt,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset
    Synth {
        /// quality, chimera, phospho, glyco or denovo
        #[arg(long)]
        task: String,
        #[arg(long)]
        n: usize,
        /// Output MGF; its file stem becomes the run id
        #[arg(long)]
        out: PathBuf,
        /// Output label TSV (peptide TSV for the denovo task)
        #[arg(long)]
        labels: PathBuf,
        /// Optional JSON-lines record of planted peaks
        #[arg(long)]
        provenance: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Embed spectra with a trained encoder
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input MGF or mzML files, embedded in parallel
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Output embedding matrix; the row index goes to OUT.tsv
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Pre-train encoder and decoder on de novo sequencing
    PretrainDenovo {
        #[arg(long, required = true, num_args = 1..)]
        train: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        valid: Vec<PathBuf>,
        /// Peptide TSV files annotating the train and validation spectra
        #[arg(long, required = true, num_args = 1..)]
        peptides: Vec<PathBuf>,
        /// Continue from this checkpoint instead of a fresh initialization
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Validation log TSV
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a classifier head on frozen embeddings
    TrainHead {
        #[arg(long)]
        task: String,
        #[arg(long)]
        emb: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        labels: Vec<PathBuf>,
        #[arg(long)]
        valid_emb: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        valid_labels: Vec<PathBuf>,
        /// Output head file
        #[arg(long)]
        out: PathBuf,
        /// Embeddings to score with the trained head
        #[arg(long, requires = "scores")]
        score_emb: Option<PathBuf>,
        /// Output score TSV for --score-emb
        #[arg(long, requires = "score_emb")]
        scores: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train encoder and head from scratch on one task
    TrainE2e {
        #[arg(long)]
        task: String,
        #[arg(long, required = true, num_args = 1..)]
        train: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        valid: Vec<PathBuf>,
        /// Label TSV files covering the train and validation spectra
        #[arg(long, required = true, num_args = 1..)]
        labels: Vec<PathBuf>,
        /// Encoder depths to try, comma-separated
        #[arg(long, value_delimiter = ',')]
        layer_sweep: Vec<usize>,
        /// Output checkpoint
        #[arg(long)]
        out: PathBuf,
        #[arg(long, num_args = 1.., requires = "scores")]
        test: Vec<PathBuf>,
        #[arg(long, requires = "test")]
        scores: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a binned-intensity or oxonium-ion baseline and score test spectra
    TrainBaseline {
        #[arg(long, value_enum)]
        kind: BaselineKind,
        #[arg(long)]
        task: String,
        #[arg(long, num_args = 1..)]
        train: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        valid: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        test: Vec<PathBuf>,
        /// Label TSV files covering train, validation and (for sweeps) test spectra
        #[arg(long, num_args = 1..)]
        labels: Vec<PathBuf>,
        /// Output score TSV for the test spectra
        #[arg(long)]
        scores: PathBuf,
        /// Output model file (fitted kinds only)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replacement oxonium-ion table (name and m/z per line)
        #[arg(long)]
        oxonium_table: Option<PathBuf>,
        /// Bin counts to compare on the test set, comma-separated (binned only)
        #[arg(long, value_delimiter = ',', requires = "sweep_out")]
        sweep: Vec<usize>,
        #[arg(long, requires = "sweep")]
        sweep_out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Jointly fine-tune a pre-trained model on task heads and de novo sequencing
    FinetuneMultitask {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, requires = "quality_valid")]
        quality: Option<PathBuf>,
        #[arg(long)]
        quality_valid: Option<PathBuf>,
        #[arg(long, requires = "chimera_valid")]
        chimera: Option<PathBuf>,
        #[arg(long)]
        chimera_valid: Option<PathBuf>,
        #[arg(long, requires = "phospho_valid")]
        phospho: Option<PathBuf>,
        #[arg(long)]
        phospho_valid: Option<PathBuf>,
        #[arg(long, requires = "glyco_valid")]
        glyco: Option<PathBuf>,
        #[arg(long)]
        glyco_valid: Option<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        labels: Vec<PathBuf>,
        #[arg(long)]
        denovo: PathBuf,
        #[arg(long)]
        denovo_valid: Option<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        peptides: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compute AUROC, AUPR and F1 from scores and labels
    Eval {
        /// Label task to evaluate; inferred when the labels hold one task
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        labels: Vec<PathBuf>,
        #[arg(long)]
        json: PathBuf,
        #[arg(long)]
        roc: Option<PathBuf>,
        #[arg(long)]
        pr: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Project embeddings onto their leading principal components
    Pca {
        #[arg(long)]
        emb: PathBuf,
        /// Optional labels used to annotate rows
        #[arg(long, num_args = 1.., requires = "task")]
        labels: Vec<PathBuf>,
        #[arg(long)]
        task: Option<String>,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Test AUROC against training-set size for several methods
    LearningCurve {
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 10)]
        subsets: usize,
        #[arg(long, required = true, num_args = 1..)]
        train: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        valid: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        test: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        labels: Vec<PathBuf>,
        /// Pre-trained checkpoint for the frozen-embedding method
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Methods: foundation, scratch, binned
        #[arg(long, value_delimiter = ',', default_value = "foundation,scratch,binned")]
        methods: Vec<String>,
        /// Output TSV
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> specfm::Result<()> {
    use commands as c;
    match cli.command {
        Command::Synth {
            task,
            n,
            out,
            labels,
            provenance,
            common,
        } => c::synth(&task, n, &out, &labels, provenance.as_deref(), &common),
        Command::Embed { checkpoint, inputs, out, common } => c::embed(&checkpoint, &inputs, &out, &common),
        Command::PretrainDenovo {
            train,
            valid,
            peptides,
            init,
            out,
            log,
            common,
        } => c::pretrain(&train, &valid, &peptides, init.as_deref(), &out, log.as_deref(), &common),
        Command::TrainHead {
            task,
            emb,
            labels,
            valid_emb,
            valid_labels,
            out,
            score_emb,
            scores,
            log,
            common,
        } => c::train_head(c::HeadArgs {
            task: &task,
            emb: &emb,
            labels: &labels,
            valid_emb: &valid_emb,
            valid_labels: &valid_labels,
            out: &out,
            score: score_emb.as_deref().zip(scores.as_deref()),
            log: log.as_deref(),
            common: &common,
        }),
        Command::TrainE2e {
            task,
            train,
            valid,
            labels,
            layer_sweep,
            out,
            test,
            scores,
            log,
            common,
        } => c::train_e2e(c::E2eArgs {
            task: &task,
            train: &train,
            valid: &valid,
            labels: &labels,
            layer_sweep: &layer_sweep,
            out: &out,
            test: &test,
            scores: scores.as_deref(),
            log: log.as_deref(),
            common: &common,
        }),
        Command::TrainBaseline {
            kind,
            task,
            train,
            valid,
            test,
            labels,
            scores,
            out,
            oxonium_table,
            sweep,
            sweep_out,
            common,
        } => c::train_baseline(c::BaselineArgs {
            kind,
            task: &task,
            train: &train,
            valid: &valid,
            test: &test,
            labels: &labels,
            scores: &scores,
            out: out.as_deref(),
            oxonium_table: oxonium_table.as_deref(),
            sweep: &sweep,
            sweep_out: sweep_out.as_deref(),
            common: &common,
        }),
        Command::FinetuneMultitask {
            checkpoint,
            quality,
            quality_valid,
            chimera,
            chimera_valid,
            phospho,
            phospho_valid,
            glyco,
            glyco_valid,
            labels,
            denovo,
            denovo_valid,
            peptides,
            out,
            log,
            common,
        } => {
            let tasks: Vec<(&str, PathBuf, PathBuf)> = [
                ("quality", quality, quality_valid),
                ("chimera", chimera, chimera_valid),
                ("phospho", phospho, phospho_valid),
                ("glyco", glyco, glyco_valid),
            ]
            .into_iter()
            .filter_map(|(t, tr, va)| Some((t, tr?, va?)))
            .collect();
            c::finetune(c::MultitaskArgs {
                checkpoint: &checkpoint,
                tasks: &tasks,
                labels: &labels,
                denovo: &denovo,
                denovo_valid: denovo_valid.as_deref(),
                peptides: &peptides,
                out: &out,
                log: log.as_deref(),
                common: &common,
            })
        }
        Command::Eval {
            task,
            scores,
            labels,
            json,
            roc,
            pr,
            common,
        } => c::eval(task.as_deref(), &scores, &labels, &json, roc.as_deref(), pr.as_deref(), &common),
        Command::Pca {
            emb,
            labels,
            task,
            k,
            out,
            common,
        } => c::pca(&emb, &labels, task.as_deref(), k, &out, &common),
        Command::LearningCurve {
            task,
            subsets,
            train,
            valid,
            test,
            labels,
            checkpoint,
            methods,
            out,
            common,
        } => c::learning_curve(c::CurveArgs {
            task: &task,
            subsets,
            train: &train,
            valid: &valid,
            test: &test,
            labels: &labels,
            checkpoint: checkpoint.as_deref(),
            methods: &methods,
            out: &out,
            common: &common,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 1 })
        }
    }
}
