use std::path::{Path, PathBuf};

use serde::Serialize;
use twopass_core::data::{read_split, read_vocab, Split, Vocab};
use twopass_core::model::{load_weights_for, save_weights, Model};
use twopass_core::training::{
    dev_wer, hypothesis_sets, mean_mwer, mwer_finetune, write_curve_csv, DevSet, EpochRecord, Example,
    HypothesisSource, MwerConfig, MwerEpoch, Phase, TrainConfig, Trainer,
};

use crate::config::RunConfig;
use crate::error::{at_path, CliError, CliResult};
use crate::io::write_file;

pub const MWER_WEIGHTS: &str = "mwer.tpw";
pub const MWER_CURVE: &str = "mwer.csv";

pub fn weights_path(work: &Path, stage: u8) -> PathBuf {
    work.join(format!("stage{stage}.tpw"))
}

pub fn curve_path(work: &Path, stage: u8) -> PathBuf {
    work.join(format!("stage{stage}.csv"))
}

pub fn load_model(cfg: &RunConfig, path: &Path) -> CliResult<Model> {
    let w = at_path(path, load_weights_for(path, &cfg.model))?;
    Ok(Model::new(cfg.model.clone(), w)?)
}

fn require(path: &Path, why: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::data(format!("{why} needs {}, which does not exist", path.display())))
    }
}

struct Data {
    train: Vec<Example>,
    dev: Vec<Example>,
    vocab: Vocab,
}

fn load_data(dir: &Path) -> CliResult<Data> {
    let split = |s: Split| -> CliResult<Vec<Example>> {
        let utts = at_path(&dir.join(s.file_name()), read_split(dir, s))?;
        Ok(Example::from_utterances(&utts)?)
    };
    Ok(Data {
        train: split(Split::Train)?,
        dev: split(Split::Dev)?,
        vocab: at_path(dir, read_vocab(dir))?,
    })
}

pub struct TrainArgs {
    pub stage: u8,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub resume: bool,
}

#[derive(Serialize)]
pub struct TrainSummary {
    pub stage: u8,
    pub start_epoch: usize,
    pub epochs: Vec<EpochRecord>,
}

fn count_rows(csv: &str) -> usize {
    csv.lines().skip(1).filter(|l| !l.trim().is_empty()).count()
}

pub fn train(cfg: &RunConfig, data_dir: &Path, work: &Path, a: &TrainArgs) -> CliResult<TrainSummary> {
    Phase::stage(a.stage)?;
    let wpath = weights_path(work, a.stage);
    let cpath = curve_path(work, a.stage);
    let (model, start, prior) = if a.resume {
        require(&wpath, &format!("resuming stage {}", a.stage))?;
        let prior = if cpath.exists() { at_path(&cpath, std::fs::read_to_string(&cpath))? } else { String::new() };
        (load_model(cfg, &wpath)?, count_rows(&prior), prior)
    } else if a.stage == 1 {
        (Model::init(cfg.model.clone(), cfg.seed)?, 0, String::new())
    } else {
        let prev = weights_path(work, a.stage - 1);
        require(&prev, &format!("stage {}", a.stage))?;
        (load_model(cfg, &prev)?, 0, String::new())
    };
    let data = load_data(data_dir)?;
    let sched = cfg.schedule(a.stage);
    let epochs = a.epochs.unwrap_or(sched.epochs);
    let tc = TrainConfig { learning_rate: a.learning_rate.unwrap_or(sched.learning_rate), ..cfg.train.clone() };
    let mut trainer = Trainer::new(model, a.stage - 1, tc)?;
    let dev = DevSet { examples: &data.dev, vocab: &data.vocab };
    let records = trainer.run_stage(a.stage, &data.train, Some(dev), start..start + epochs)?;
    for r in &records {
        eprintln!(
            "stage {} epoch {:>3}  loss {:>10.4}  dev wer {:>6.2}",
            r.phase,
            r.epoch,
            r.mean_loss,
            r.wer_dev.unwrap_or(f64::NAN)
        );
    }
    let model = trainer.into_model();
    at_path(work, std::fs::create_dir_all(work))?;
    at_path(&wpath, save_weights(model.weights(), &wpath))?;
    let mut buf = Vec::new();
    write_curve_csv(&mut buf, &records)?;
    let fresh = String::from_utf8(buf).expect("csv is utf-8");
    let csv = match prior.is_empty() {
        true => fresh,
        false => prior + fresh.split_once('\n').map_or("", |(_, rows)| rows),
    };
    write_file(&cpath, csv.as_bytes())?;
    Ok(TrainSummary { stage: a.stage, start_epoch: start, epochs: records })
}

pub struct MwerArgs {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub source: Option<HypothesisSource>,
    pub beam: Option<usize>,
    pub lambda_mle: Option<f64>,
}

#[derive(Serialize)]
pub struct MwerSummary {
    pub source: HypothesisSource,
    pub dev_wer_before: f64,
    pub dev_wer_after: f64,
    /// Mean expected relative word errors on dev sets drawn before tuning.
    pub heldout_mwer_before: f64,
    pub heldout_mwer_after: f64,
    pub epochs: Vec<MwerEpoch>,
}

pub fn mwer(cfg: &RunConfig, data_dir: &Path, work: &Path, a: &MwerArgs) -> CliResult<MwerSummary> {
    let src = weights_path(work, 3);
    require(&src, "MWER fine-tuning")?;
    let mut model = load_model(cfg, &src)?;
    let data = load_data(data_dir)?;
    let mc = MwerConfig {
        lambda_mle: a.lambda_mle.unwrap_or(cfg.mwer.lambda_mle),
        source: a.source.unwrap_or(cfg.mwer.source),
        beam_size: a.beam.unwrap_or(cfg.mwer.beam_size),
    };
    mc.validate()?;
    let sched = cfg.mwer_schedule;
    let tc = TrainConfig { learning_rate: a.learning_rate.unwrap_or(sched.learning_rate), ..cfg.train.clone() };
    let dev = DevSet { examples: &data.dev, vocab: &data.vocab };
    let heldout = hypothesis_sets(&model, &data.dev, &data.vocab, &mc)?;
    let heldout_mwer_before = mean_mwer(&model, &heldout, &data.dev)?;
    let dev_wer_before = dev_wer(&model, &dev, Phase::Mwer)?;
    let curve = mwer_finetune(&mut model, &data.train, &data.vocab, &mc, &tc, Some(dev), 0..a.epochs.unwrap_or(sched.epochs))?;
    for e in &curve {
        eprintln!(
            "mwer epoch {:>3}  loss {:>9.4}  mwer {:>9.4}  skipped {:>4}  dev wer {:>6.2}",
            e.epoch,
            e.mean_loss,
            e.mean_mwer,
            e.skipped,
            e.wer_dev.unwrap_or(f64::NAN)
        );
    }
    let heldout_mwer_after = mean_mwer(&model, &heldout, &data.dev)?;
    let dev_wer_after = match curve.last().and_then(|e| e.wer_dev) {
        Some(w) => w,
        None => dev_wer(&model, &dev, Phase::Mwer)?,
    };
    let wpath = work.join(MWER_WEIGHTS);
    at_path(&wpath, save_weights(model.weights(), &wpath))?;
    let mut buf = Vec::new();
    write_curve_csv(&mut buf, &curve.iter().map(MwerEpoch::record).collect::<Vec<_>>())?;
    write_file(&work.join(MWER_CURVE), &buf)?;
    Ok(MwerSummary {
        source: mc.source,
        dev_wer_before,
        dev_wer_after,
        heldout_mwer_before,
        heldout_mwer_after,
        epochs: curve,
    })
}
