use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cnbnn::data::{
    load_records, parse_protocol_file, parse_scores, synth_corpus, write_scores, ProtocolEntry, ScoreLine,
    SynthOptions,
};
use cnbnn::gradsuite;
use cnbnn::model::Model;
use cnbnn::objective::{evaluate, min_tdcf, parse_asv_errors, Label, LabeledScore, TdcfParams};
use cnbnn::train::{load_checkpoint, save_checkpoint, score_records, EpochLog, Trainer};

use crate::{CliError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "cnbnn", version, about = "Raw-waveform anti-spoofing toolchain")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labeled corpus (WAV files and a protocol).
    SynthData(SynthArgs),
    /// Train one model per seed with dev-set model selection.
    Train(TrainArgs),
    /// Score utterances with a checkpoint.
    Score(ScoreArgs),
    /// Compute EER and min t-DCF for a score file.
    Evaluate(EvaluateArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Print parameter counts.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub n_genuine: usize,
    #[arg(long, default_value_t = 4)]
    pub n_spoof: usize,
    /// Seconds per utterance.
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Utterance id prefix.
    #[arg(long, default_value = "SYN")]
    pub prefix: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Audio directory of the dev set; defaults to the training one.
    #[arg(long)]
    pub dev_data_dir: Option<PathBuf>,
    #[arg(long)]
    pub protocol: Option<PathBuf>,
    #[arg(long)]
    pub dev_protocol: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One run per occurrence.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// Drop the channel-attention step from every block.
    #[arg(long)]
    pub no_meca: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub protocol: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub protocol: PathBuf,
    /// One line: `P_miss_asv P_fa_asv P_miss_spoof_asv`.
    #[arg(long)]
    pub asv_errors: Option<PathBuf>,
    #[arg(long)]
    pub per_attack: bool,
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seeds to run; defaults to 0 through 4.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub no_meca: bool,
}

pub(crate) fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::SynthData(a) => synth_data(a, out),
        Command::Train(a) => train(a, out, err),
        Command::Score(a) => score(a, out),
        Command::Evaluate(a) => evaluate_scores(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Params(a) => params(a, out),
    }
}

fn emit(out: &mut dyn Write, text: impl AsRef<str>) -> Result<(), CliError> {
    out.write_all(text.as_ref().as_bytes()).map_err(CliError::io)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn synth_data(a: SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(a.duration.is_finite() && a.duration > 0.0) {
        return Err(CliError::usage(format!("--duration must be positive, got {}", a.duration)));
    }
    if a.n_genuine == 0 || a.n_spoof == 0 {
        return Err(CliError::usage("--n-genuine and --n-spoof must be at least 1"));
    }
    let opts = SynthOptions {
        prefix: a.prefix,
        ..SynthOptions::new(a.n_genuine, a.n_spoof, a.duration, a.seed)
    };
    let entries = synth_corpus(&opts, &a.out)?;
    emit(out, format!("wrote {} utterances to {}\n", entries.len(), a.out.display()))
}

fn required(value: Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    value.ok_or_else(|| CliError::usage(format!("missing --{name} (or `{}` in the config file)", name.replace('-', "_"))))
}

/// Fails with the list of utterances lacking `<dir>/<utt>.wav`.
fn check_audio(entries: &[ProtocolEntry], dir: &Path) -> Result<(), CliError> {
    let missing: Vec<&str> = entries
        .iter()
        .filter(|e| !dir.join(format!("{}.wav", e.utt_id)).is_file())
        .map(|e| e.utt_id.as_str())
        .collect();
    if missing.is_empty() {
        return Ok(());
    }
    Err(CliError::io(format!(
        "missing audio in {} for {} utterance(s): {}",
        dir.display(),
        missing.len(),
        missing.join(" ")
    )))
}

fn epoch_csv(logs: &[EpochLog]) -> String {
    let mut s = String::from("epoch,loss,dev_eer,lr\n");
    for l in logs {
        s.push_str(&format!("{},{},{},{}\n", l.epoch, l.loss, l.dev_eer, l.lr));
    }
    s
}

fn train(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    macro_rules! flag {
        ($($field:ident),*) => {$(
            if a.$field.is_some() {
                cfg.$field = a.$field;
            }
        )*};
    }
    flag!(data_dir, dev_data_dir, protocol, dev_protocol, out);
    if a.no_meca {
        cfg.model.use_meca = false;
    }
    let data_dir = required(cfg.data_dir.clone(), "data-dir")?;
    let dev_dir = cfg.dev_data_dir.clone().unwrap_or_else(|| data_dir.clone());
    let protocol = required(cfg.protocol.clone(), "protocol")?;
    let dev_protocol = required(cfg.dev_protocol.clone(), "dev-protocol")?;
    let out_dir = required(cfg.out.clone(), "out")?;
    if cfg.train.input_len < cfg.model.min_input_len() {
        return Err(CliError::usage(format!(
            "input_len {} is shorter than the model's minimum {}",
            cfg.train.input_len,
            cfg.model.min_input_len()
        )));
    }

    let train_entries = parse_protocol_file(&protocol)?;
    let dev_entries = parse_protocol_file(&dev_protocol)?;
    check_audio(&train_entries, &data_dir)?;
    check_audio(&dev_entries, &dev_dir)?;
    let train_set = load_records(&train_entries, &data_dir)?;
    let dev_set = load_records(&dev_entries, &dev_dir)?;
    create_dir(&out_dir)?;

    let seeds = if a.seeds.is_empty() { vec![cfg.train.seed] } else { a.seeds };
    let mut best: Option<(u64, f64)> = None;
    for seed in seeds {
        let mut run_cfg = cfg.clone();
        run_cfg.train.seed = seed;
        let run_dir = out_dir.join(format!("seed{seed}"));
        create_dir(&run_dir)?;
        write_file(&run_dir.join("config.txt"), &run_cfg.to_text())?;
        let model = Model::new(run_cfg.model.clone(), seed)?;
        let n_params = model.param_count();
        let mut trainer = Trainer::new(model, run_cfg.train.clone(), &train_set)?;
        let csv = run_dir.join("epochs.csv");
        for _ in 0..run_cfg.train.epochs {
            let step = trainer.run_epoch(&train_set, &dev_set);
            write_file(&csv, &epoch_csv(trainer.logs()))?;
            let log = step?;
            let _ = writeln!(
                err,
                "seed {seed} epoch {} loss {:.6} dev_eer {:.2} lr {:.3e}",
                log.epoch, log.loss, log.dev_eer, log.lr
            );
        }
        let outcome = trainer.finish()?;
        let ckpt = run_dir.join("best.ckpt");
        save_checkpoint(&ckpt, &outcome.best)?;
        emit(
            out,
            format!(
                "run seed={seed} params={n_params} best_epoch={} dev_eer={:.2} checkpoint={}\n",
                outcome.best.epoch,
                outcome.best.dev_eer,
                ckpt.display()
            ),
        )?;
        if best.map_or(true, |(_, e)| outcome.best.dev_eer < e) {
            best = Some((seed, outcome.best.dev_eer));
        }
    }
    if let Some((seed, eer)) = best {
        emit(out, format!("best run seed={seed} dev_eer={eer:.2}\n"))?;
    }
    Ok(())
}

fn score(a: ScoreArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.batch_size == 0 {
        return Err(CliError::usage("--batch-size must be at least 1"));
    }
    let cp = load_checkpoint(&a.checkpoint)?;
    let model = cp.to_model()?;
    let entries = parse_protocol_file(&a.protocol)?;
    check_audio(&entries, &a.data_dir)?;
    let records = load_records(&entries, &a.data_dir)?;
    let scores = score_records(&model, &records, cp.input_len, a.batch_size)?;
    if let Some(s) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(CliError::numeric(format!("non-finite score for {}", s.utt_id)));
    }
    let lines: Vec<ScoreLine> = scores
        .into_iter()
        .map(|s| ScoreLine {
            utt_id: s.utt_id,
            score: s.score,
        })
        .collect();
    write_file(&a.out, &write_scores(&lines))?;
    emit(out, format!("scored {} utterances -> {}\n", lines.len(), a.out.display()))
}

/// Pairs scores with protocol labels, requiring the same id sets.
fn join(scores: &[ScoreLine], entries: &[ProtocolEntry]) -> Result<Vec<LabeledScore>, CliError> {
    let mut by_id: BTreeMap<&str, f64> = BTreeMap::new();
    for s in scores {
        if by_id.insert(&s.utt_id, s.score).is_some() {
            return Err(CliError::usage(format!("duplicate score for {}", s.utt_id)));
        }
    }
    let proto: BTreeSet<&str> = entries.iter().map(|e| e.utt_id.as_str()).collect();
    if proto.len() != entries.len() {
        return Err(CliError::usage("duplicate utterance ids in protocol"));
    }
    let only_scores: Vec<&str> = by_id.keys().filter(|k| !proto.contains(*k)).copied().collect();
    let only_proto: Vec<&str> = proto.iter().filter(|k| !by_id.contains_key(*k)).copied().collect();
    if !only_scores.is_empty() || !only_proto.is_empty() {
        return Err(CliError::usage(format!(
            "score and protocol ids differ; only in scores: [{}]; only in protocol: [{}]",
            only_scores.join(" "),
            only_proto.join(" ")
        )));
    }
    Ok(entries
        .iter()
        .map(|e| LabeledScore::new(e.utt_id.clone(), by_id[e.utt_id.as_str()], e.label, e.attack.clone()))
        .collect())
}

fn evaluate_scores(a: EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let scores = parse_scores(&read_text(&a.scores)?).map_err(|e| CliError::io(format!("{}: {e}", a.scores.display())))?;
    let entries = parse_protocol_file(&a.protocol)?;
    let labeled = join(&scores, &entries)?;
    let mut params = TdcfParams::default();
    if let Some(p) = &a.asv_errors {
        params = params.with_asv_errors(parse_asv_errors(&read_text(p)?).map_err(CliError::usage)?);
    }
    let report = evaluate(&labeled, &params)?;
    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    if a.per_attack {
        for (attack, eer) in &report.per_attack.eer {
            let subset: Vec<LabeledScore> = labeled
                .iter()
                .filter(|s| s.label == Label::Genuine || &s.attack == attack)
                .cloned()
                .collect();
            rows.push((attack.clone(), *eer, min_tdcf(&subset, &params)?));
        }
    }
    rows.push(("pooled".into(), report.eer.percent, report.min_tdcf));

    if a.csv {
        let mut s = String::from("attack,eer,min_tdcf\n");
        for (name, eer, tdcf) in &rows {
            s.push_str(&format!("{name},{eer:.6},{tdcf:.6}\n"));
        }
        return emit(out, s);
    }
    let mut s = format!("EER {:.2}, min-tDCF {:.4}\n", report.eer.percent, report.min_tdcf);
    if a.per_attack {
        s.push_str(&format!("{:<8} {:>8} {:>10}\n", "attack", "EER(%)", "min-tDCF"));
        for (name, eer, tdcf) in &rows {
            s.push_str(&format!("{name:<8} {eer:>8.2} {tdcf:>10.4}\n"));
        }
    }
    s.push_str(&format!("{} genuine, {} spoof\n", report.n_genuine, report.n_spoof));
    emit(out, s)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let seeds = if a.seeds.is_empty() { gradsuite::DEFAULT_SEEDS.to_vec() } else { a.seeds };
    let results = gradsuite::run(&seeds).map_err(CliError::numeric)?;
    let mut s = String::new();
    for r in &results {
        s.push_str(&format!(
            "{:<20} seed {:<3} max_rel_err {:.3e} {}\n",
            r.report.op,
            r.seed,
            r.report.max_rel_error,
            if r.passes() { "PASS" } else { "FAIL" }
        ));
    }
    let failed = results.iter().filter(|r| !r.passes()).count();
    s.push_str(&format!(
        "{}/{} checks within {:e}\n",
        results.len() - failed,
        results.len(),
        gradsuite::TOLERANCE
    ));
    emit(out, s)?;
    if failed > 0 {
        return Err(CliError::usage(format!("{failed} gradient check(s) failed")));
    }
    Ok(())
}

fn params(a: ParamsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    if a.no_meca {
        cfg.model.use_meca = false;
    }
    let model = Model::<f32>::new(cfg.model, 0)?;
    let mut s = format!("total {}\n", model.param_count());
    for (module, n) in model.param_breakdown() {
        s.push_str(&format!("  {module:<12} {n:>8}\n"));
    }
    s.push_str(&format!("meca weights {}\n", model.meca_param_count()));
    emit(out, s)
}
