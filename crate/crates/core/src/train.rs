//! BPR training with in-impression negative sampling.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::checkpoint::Checkpoint;
use crate::data::corpus::{ImpressionSample, PreparedCorpus};
use crate::data::preprocess::NewsArticle;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, ModelScorer};
use crate::model::{Forward, PpRec};
use crate::optim::Adam;
use crate::seed::rng_for;
use crate::tensor::Tensor;

/// One (positive, negative) pair per clicked candidate, the negative drawn
/// uniformly from the same impression's non-clicked candidates. Indices
/// refer to `sample.candidates`. `None` for single-class impressions.
pub fn sample_training_pairs<R: Rng + ?Sized>(
    sample: &ImpressionSample,
    rng: &mut R,
) -> Option<Vec<(usize, usize)>> {
    let negatives: Vec<usize> = (0..sample.candidates.len())
        .filter(|&i| !sample.candidates[i].clicked)
        .collect();
    if negatives.is_empty() {
        return None;
    }
    let pairs: Vec<(usize, usize)> = (0..sample.candidates.len())
        .filter(|&i| sample.candidates[i].clicked)
        .map(|p| (p, negatives[rng.random_range(0..negatives.len())]))
        .collect();
    (!pairs.is_empty()).then_some(pairs)
}

/// `−mean log σ(s⁺ − s⁻)` over `(s⁺, s⁻)` pairs.
pub fn bpr_loss(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Contract("BPR loss of an empty pair list".into()));
    }
    let total: f64 = pairs.iter().map(|&(p, n)| log_sigmoid(p - n)).sum();
    Ok(-total / pairs.len() as f64)
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Tape version: `positive` and `negative` are `[D, 1]` score columns.
pub fn bpr_loss_var(f: &mut Forward<'_>, positive: Var, negative: Var) -> Result<Var> {
    let margin = f.tape.sub(positive, negative)?;
    let ls = f.tape.log_sigmoid(margin);
    let mean = f.tape.mean(ls);
    Ok(f.tape.scale(mean, -1.0))
}

/// An impression with its sampled pairs.
#[derive(Clone, Debug)]
pub struct TrainingExample<'s> {
    pub sample: &'s ImpressionSample,
    pub pairs: Vec<(usize, usize)>,
}

/// Builds the loss of a batch on `f`. Each distinct article in the batch is
/// encoded once.
pub fn batch_loss(
    model: &PpRec,
    f: &mut Forward<'_>,
    articles: &[NewsArticle],
    batch: &[TrainingExample<'_>],
) -> Result<Var> {
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut unique: Vec<&NewsArticle> = Vec::new();
    let mut intern = |n: usize| -> usize {
        *slot.entry(n).or_insert_with(|| {
            unique.push(&articles[n]);
            unique.len() - 1
        })
    };
    let rows: Vec<(Vec<usize>, Vec<usize>)> = batch
        .iter()
        .map(|ex| {
            let hist = ex.sample.history.iter().map(|h| intern(h.news)).collect();
            let cands = ex
                .pairs
                .iter()
                .flat_map(|&(p, n)| [p, n])
                .map(|c| intern(ex.sample.candidates[c].news))
                .collect();
            (hist, cands)
        })
        .collect();
    if unique.is_empty() {
        return Err(Error::Contract("empty training batch".into()));
    }
    let encoded = model.news.encode_batch(f, &unique)?;
    let table = f.tape.concat(&encoded, 0)?;

    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (ex, (hist, cands)) in batch.iter().zip(&rows) {
        let history = if hist.is_empty() {
            None
        } else {
            Some(f.tape.gather_rows(table, hist)?)
        };
        let bins: Vec<usize> = ex.sample.history.iter().map(|h| h.popularity_bin).collect();
        let candidates = f.tape.gather_rows(table, cands)?;
        let picked: Vec<usize> = ex.pairs.iter().flat_map(|&(p, n)| [p, n]).collect();
        let recency: Vec<usize> = picked
            .iter()
            .map(|&c| ex.sample.candidates[c].recency)
            .collect();
        let ctr: Vec<f64> = picked
            .iter()
            .map(|&c| ex.sample.candidates[c].ctr)
            .collect();
        let nodes = model.score(f, history, &bins, candidates, &recency, &ctr)?;
        let even: Vec<usize> = (0..ex.pairs.len()).map(|i| 2 * i).collect();
        let odd: Vec<usize> = (0..ex.pairs.len()).map(|i| 2 * i + 1).collect();
        pos.push(f.tape.gather_rows(nodes.score, &even)?);
        neg.push(f.tape.gather_rows(nodes.score, &odd)?);
    }
    let pos = f.tape.concat(&pos, 0)?;
    let neg = f.tape.concat(&neg, 0)?;
    bpr_loss_var(f, pos, neg)
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Directory for per-epoch checkpoints and failure dumps.
    pub checkpoint_dir: Option<PathBuf>,
    /// Select the epoch with the best validation AUC (needs a validation split).
    pub select_by_validation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub batches: usize,
    pub pairs: usize,
    pub valid_auc: Option<f64>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub batch_losses: Vec<f64>,
    pub skipped_impressions: usize,
    /// 1-based epoch whose parameters the model ends with.
    pub selected_epoch: usize,
}

#[derive(Serialize)]
struct FailedBatch<'a> {
    epoch: usize,
    batch: usize,
    loss: f64,
    impressions: Vec<FailedImpression<'a>>,
}

#[derive(Serialize)]
struct FailedImpression<'a> {
    user: &'a str,
    time: i64,
    candidates: Vec<&'a str>,
    ctr: Vec<f64>,
    recency: Vec<usize>,
    history: Vec<&'a str>,
    pairs: &'a [(usize, usize)],
}

fn dump_failed_batch(
    dir: Option<&Path>,
    data: &PreparedCorpus,
    epoch: usize,
    batch_index: usize,
    loss: f64,
    batch: &[TrainingExample<'_>],
) -> String {
    let arts = data.catalog.articles();
    let dump = FailedBatch {
        epoch,
        batch: batch_index,
        loss,
        impressions: batch
            .iter()
            .map(|ex| FailedImpression {
                user: &ex.sample.user,
                time: ex.sample.time,
                candidates: ex
                    .sample
                    .candidates
                    .iter()
                    .map(|c| arts[c.news].id.as_str())
                    .collect(),
                ctr: ex.sample.candidates.iter().map(|c| c.ctr).collect(),
                recency: ex.sample.candidates.iter().map(|c| c.recency).collect(),
                history: ex
                    .sample
                    .history
                    .iter()
                    .map(|h| arts[h.news].id.as_str())
                    .collect(),
                pairs: &ex.pairs,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&dump).unwrap_or_default();
    if let Some(dir) = dir {
        let path = dir.join("failed_batch.json");
        if std::fs::write(&path, &json).is_ok() {
            return format!("batch dumped to {}", path.display());
        }
    }
    json
}

fn snapshot(model: &PpRec) -> Vec<Tensor> {
    model.params.iter().map(|(_, p)| p.value.clone()).collect()
}

fn restore(model: &mut PpRec, values: Vec<Tensor>) {
    for (p, v) in model.params.iter_mut().zip(values) {
        p.value = v;
    }
}

/// Mini-batch Adam over shuffled training impressions. Everything random
/// (shuffle, negatives, dropout) derives from `model.config.seed`.
pub fn train(model: &mut PpRec, data: &PreparedCorpus, opts: &TrainOptions) -> Result<TrainLog> {
    let cfg = model.config.clone();
    let adam = Adam::with_lr(cfg.learning_rate);
    let mut log = TrainLog::default();
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &format!("train/shuffle/{epoch}")));
        let mut pair_rng = rng_for(cfg.seed, &format!("train/negatives/{epoch}"));
        let mut examples = Vec::with_capacity(order.len());
        let mut skipped = 0;
        for &i in &order {
            match sample_training_pairs(&data.train[i], &mut pair_rng) {
                Some(pairs) => examples.push(TrainingExample {
                    sample: &data.train[i],
                    pairs,
                }),
                None => skipped += 1,
            }
        }
        if skipped > 0 {
            log::warn!(
                "epoch {epoch}: skipped {skipped} impressions without both clicks and non-clicks"
            );
        }
        log.skipped_impressions = skipped;
        if examples.is_empty() {
            return Err(Error::Ingestion(
                "no trainable impressions in the training split".into(),
            ));
        }

        let (mut loss_sum, mut pairs, mut batches) = (0.0, 0, 0);
        for (b, batch) in examples.chunks(cfg.batch_size.max(1)).enumerate() {
            let dropout_rng = rng_for(cfg.seed, &format!("train/dropout/{epoch}/{b}"));
            let (loss, grads) = {
                let mut f = Forward::train(&model.params, cfg.dropout, dropout_rng);
                let loss = batch_loss(model, &mut f, data.catalog.articles(), batch)?;
                let value = f.tape.value(loss).item();
                if !value.is_finite() {
                    let dump = dump_failed_batch(
                        opts.checkpoint_dir.as_deref(),
                        data,
                        epoch,
                        b,
                        value,
                        batch,
                    );
                    return Err(Error::Numeric(format!(
                        "loss {value} in epoch {epoch} batch {b}; {dump}"
                    )));
                }
                (value, f.tape.backward(loss)?)
            };
            model.params.accumulate(&grads);
            adam.step(&mut model.params);
            log.batch_losses.push(loss);
            loss_sum += loss;
            pairs += batch.iter().map(|e| e.pairs.len()).sum::<usize>();
            batches += 1;
        }
        let mean_loss = loss_sum / batches as f64;

        let valid_auc = if opts.select_by_validation && !data.valid.is_empty() {
            let scorer = ModelScorer::new(model, &data.catalog)?;
            Some(
                evaluate(&scorer, &data.valid, &data.catalog, EvalOptions::default())?
                    .metrics
                    .auc,
            )
        } else {
            None
        };
        let checkpoint = match &opts.checkpoint_dir {
            Some(dir) => {
                let path = dir.join(format!("epoch-{epoch}.json"));
                Checkpoint::from_model(model, &data.vocab, &data.entity_vocab).save(&path)?;
                Some(path)
            }
            None => None,
        };
        log::info!(
            "epoch {epoch}: loss {mean_loss:.4} over {batches} batches{}",
            valid_auc
                .map(|a| format!(", valid AUC {a:.4}"))
                .unwrap_or_default()
        );
        if let Some(auc) = valid_auc {
            if best.as_ref().is_none_or(|(b, _, _)| auc > *b) {
                best = Some((auc, epoch, snapshot(model)));
            }
        }
        log.epochs.push(EpochLog {
            epoch,
            mean_loss,
            batches,
            pairs,
            valid_auc,
            checkpoint,
        });
    }

    log.selected_epoch = cfg.epochs;
    if let Some((_, epoch, values)) = best {
        if epoch != cfg.epochs {
            restore(model, values);
        }
        log.selected_epoch = epoch;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::corpus::Candidate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn imp(clicks: &[bool]) -> ImpressionSample {
        ImpressionSample {
            user: "u".into(),
            time: 0,
            candidates: clicks
                .iter()
                .enumerate()
                .map(|(i, &c)| Candidate {
                    news: i,
                    clicked: c,
                    ctr: 0.0,
                    recency: 0,
                    lifetime_views: 0,
                    recent_views: 0,
                })
                .collect(),
            history: vec![],
        }
    }

    #[test]
    fn pairs_follow_positives() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            sample_training_pairs(&imp(&[true, false]), &mut rng),
            Some(vec![(0, 1)])
        );
        let s = imp(&[false, true, false, true, false]);
        for _ in 0..50 {
            let pairs = sample_training_pairs(&s, &mut rng).unwrap();
            assert_eq!(pairs.iter().map(|p| p.0).collect::<Vec<_>>(), vec![1, 3]);
            assert!(pairs.iter().all(|&(_, n)| !s.candidates[n].clicked));
        }
        assert_eq!(sample_training_pairs(&imp(&[true, true]), &mut rng), None);
        assert_eq!(sample_training_pairs(&imp(&[false, false]), &mut rng), None);
        let a = sample_training_pairs(&s, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(
            a,
            sample_training_pairs(&s, &mut ChaCha8Rng::seed_from_u64(9))
        );
    }

    #[test]
    fn bpr_examples() {
        assert!((bpr_loss(&[(0.3, 0.3), (-2.0, -2.0)]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(bpr_loss(&[(800.0, 0.0)]).unwrap() < 1e-300);
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let oracle = -0.5 * (sig(1.0).ln() + sig(-1.0).ln());
        let got = bpr_loss(&[(1.0, 0.0), (0.0, 1.0)]).unwrap();
        assert!((got - oracle).abs() < 1e-15);
        assert!((got - 0.8133).abs() < 1e-4);
        assert!(bpr_loss(&[]).is_err());
        assert!(bpr_loss(&[(-800.0, 0.0)]).unwrap().is_finite());
    }
}
