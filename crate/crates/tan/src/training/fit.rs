//! The epoch loop: shuffled mini-batches, the combined objective,
//! validation-driven early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig, TrainError};
use crate::corpus::Sentence;
use crate::evaluation::{assign_categories, micro_prf, predict_probabilities};
use crate::model::{forward_sentence, TanModel};
use crate::numerics::{
    mse_loss, orthogonality_penalty, orthogonality_penalty_op, Scalar, Tape, Tensor, TensorError,
    ValueId,
};

/// Mean squared error over all batch × category decisions plus the
/// weighted orthogonality penalty. `probs` is the flattened batch
/// probability vector; `topics` is absent for the single-attention
/// variant, making the penalty 0.
pub fn total_loss_op<T: Scalar>(
    tape: &mut Tape<T>,
    probs: ValueId,
    target: ValueId,
    topics: Option<ValueId>,
    weight: f64,
) -> Result<ValueId, TensorError> {
    let mse = tape.mse(probs, target)?;
    match topics {
        Some(topics) if weight != 0.0 => {
            let pen = orthogonality_penalty_op(tape, topics)?;
            let weighted = tape.scale(pen, T::from_f64(weight));
            tape.add(mse, weighted)
        }
        _ => Ok(mse),
    }
}

/// Tracks the best validation score. Patience counts epochs without a
/// strict F1 improvement; an equal F1 with a lower validation loss
/// replaces the kept checkpoint but does not reset patience.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    stale: usize,
    pub best_f1: f64,
    pub best_loss: f64,
    pub best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        assert!(patience > 0);
        EarlyStopping {
            patience,
            stale: 0,
            best_f1: f64::NEG_INFINITY,
            best_loss: f64::INFINITY,
            best_epoch: 0,
        }
    }

    /// Returns (replace_best, stop).
    pub fn update(&mut self, epoch: usize, f1: f64, loss: f64) -> (bool, bool) {
        if f1 > self.best_f1 {
            self.best_f1 = f1;
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            return (true, false);
        }
        self.stale += 1;
        let replace = f1 == self.best_f1 && loss < self.best_loss;
        if replace {
            self.best_loss = loss;
            self.best_epoch = epoch;
        }
        (replace, self.stale >= self.patience)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct FitResult<T> {
    /// The best checkpoint by validation F1, not the last epoch's state.
    pub model: TanModel<T>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub log: Vec<EpochRecord>,
    pub stopped_early: bool,
}

fn clip_gradients<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) {
    let total: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|&x| x.as_f64().powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if total > max_norm {
        let scale = T::from_f64(max_norm / total);
        for g in grads {
            for x in g.data_mut() {
                *x = *x * scale;
            }
        }
    }
}

/// Total objective over a sentence list without building a tape, used for
/// validation reporting.
fn dataset_loss<T: Scalar>(
    model: &TanModel<T>,
    probs: &[Vec<T>],
    sentences: &[Sentence],
    weight: f64,
) -> Result<f64, TrainError> {
    let flat_probs: Vec<T> = probs.iter().flatten().copied().collect();
    let flat_target: Vec<T> = sentences
        .iter()
        .flat_map(|s| s.target_vector::<T>())
        .collect();
    let mut loss = mse_loss(&flat_probs, &flat_target)?.as_f64();
    if weight != 0.0 {
        if let Some(topics) = model.head.topics() {
            loss += weight * orthogonality_penalty(topics)?.as_f64();
        }
    }
    Ok(loss)
}

/// Trains until validation F1 stops improving for `patience` epochs or
/// `max_epochs` is reached, and returns the best checkpoint.
pub fn fit<T: Scalar>(
    mut model: TanModel<T>,
    train: &[Sentence],
    validation: &[Sentence],
    cfg: &TrainConfig,
) -> Result<FitResult<T>, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if validation.is_empty() {
        return Err(TrainError::EmptyValidationSet);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.param_tensors());
    let mut stopping = EarlyStopping::new(cfg.patience);
    let mut best: Option<TanModel<T>> = None;
    let mut log = Vec::new();
    let mut stopped_early = false;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let started = std::time::Instant::now();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sentence> = chunk.iter().map(|&i| &train[i]).collect();
            let pad_to = batch.iter().map(|s| s.len()).max().expect("nonempty");

            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let mut prob_ids = Vec::with_capacity(batch.len());
            let mut targets: Vec<T> = Vec::with_capacity(batch.len());
            for sentence in &batch {
                let out = forward_sentence(
                    &mut tape,
                    &model,
                    &bound,
                    &sentence.token_ids,
                    pad_to,
                    Some(&mut rng),
                )?;
                prob_ids.push(out.probs);
                targets.extend(sentence.target_vector::<T>());
            }
            let probs = tape.concat(&prob_ids)?;
            let target = tape.input(Tensor::vector(targets));
            let topics_id = bound.topics_id();
            let loss = total_loss_op(&mut tape, probs, target, topics_id, cfg.regularizer_weight)?;
            loss_sum += tape.value(loss).item().as_f64() * batch.len() as f64;

            let grads = tape.backward(loss)?;
            let mut grad_list: Vec<Tensor<T>> = bound
                .param_ids
                .iter()
                .map(|&id| grads.get(id))
                .collect();
            if let Some(max_norm) = cfg.clip_norm {
                clip_gradients(&mut grad_list, max_norm);
            }
            let mut params = model.param_tensors();
            adam.step(&mut params, &grad_list, cfg.learning_rate);
            model.set_params(&params);
        }
        let train_loss = loss_sum / train.len() as f64;

        let val_probs = predict_probabilities(&model, validation)?;
        let gold: Vec<_> = validation.iter().map(|s| s.gold_indices()).collect();
        let pred: Vec<_> = val_probs
            .iter()
            .map(|p| assign_categories(p, cfg.threshold, false))
            .collect();
        let (_, _, val_f1) = micro_prf(&gold, &pred)?;
        let val_loss = dataset_loss(&model, &val_probs, validation, cfg.regularizer_weight)?;

        log.push(EpochRecord {
            epoch,
            train_loss,
            val_f1,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });

        let (replace, stop) = stopping.update(epoch, val_f1, val_loss);
        if replace {
            best = Some(model.clone());
        }
        if stop {
            stopped_early = true;
            break;
        }
    }

    Ok(FitResult {
        model: best.unwrap_or(model),
        best_epoch: stopping.best_epoch,
        best_val_f1: stopping.best_f1,
        log,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn loss_is_zero_for_perfect_predictions_and_orthonormal_topics() {
        let mut tape = Tape::<f64>::new();
        let probs = tape.input(Tensor::vector(vec![1.0, 0.0, 0.0, 1.0]));
        let target = tape.input(Tensor::vector(vec![1.0, 0.0, 0.0, 1.0]));
        let eye = tape.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let loss = total_loss_op(&mut tape, probs, target, Some(eye), 1.0).unwrap();
        assert_abs_diff_eq!(tape.value(loss).item(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn loss_is_one_for_all_wrong_predictions() {
        let mut tape = Tape::<f64>::new();
        let probs = tape.input(Tensor::vector(vec![0.0; 4]));
        let target = tape.input(Tensor::vector(vec![1.0; 4]));
        let eye = tape.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let loss = total_loss_op(&mut tape, probs, target, Some(eye), 1.0).unwrap();
        assert_abs_diff_eq!(tape.value(loss).item(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_weight_reduces_to_the_mse_term() {
        let mut tape = Tape::<f64>::new();
        let probs = tape.input(Tensor::vector(vec![0.5, 0.5]));
        let target = tape.input(Tensor::vector(vec![1.0, 0.0]));
        let skewed = tape.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap());
        let loss = total_loss_op(&mut tape, probs, target, Some(skewed), 0.0).unwrap();
        assert_abs_diff_eq!(tape.value(loss).item(), 0.25, epsilon = 1e-12);
        let weighted = total_loss_op(&mut tape, probs, target, Some(skewed), 1.0).unwrap();
        assert_abs_diff_eq!(
            tape.value(weighted).item(),
            0.25 + 2.0f64.sqrt(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn patience_counts_only_strict_f1_improvements() {
        // F1 sequence 0.5, 0.6, 0.6, 0.6 with patience 2: stops after the
        // fourth epoch and keeps the second epoch's checkpoint.
        let mut es = EarlyStopping::new(2);
        assert_eq!(es.update(1, 0.5, 1.0), (true, false));
        assert_eq!(es.update(2, 0.6, 1.0), (true, false));
        assert_eq!(es.update(3, 0.6, 1.0), (false, false));
        assert_eq!(es.update(4, 0.6, 1.0), (false, true));
        assert_eq!(es.best_epoch, 2);
        assert_eq!(es.best_f1, 0.6);
    }

    fn toy_sentences() -> (Vec<Sentence>, Vec<Sentence>) {
        // Vocab ids 3..=6 are pasta/overpriced/waiter/decor; categories
        // A and B get disjoint token pairs.
        let make = |id: usize, tokens: Vec<usize>, labels: [bool; 2]| Sentence {
            id: id.to_string(),
            tokens: tokens.iter().map(|t| format!("tok{t}")).collect(),
            token_ids: tokens,
            labels: labels.to_vec(),
        };
        let mut train = Vec::new();
        for i in 0..4 {
            train.push(make(i, vec![3, 4], [true, false]));
            train.push(make(10 + i, vec![5, 6], [false, true]));
        }
        let val = vec![
            make(100, vec![3], [true, false]),
            make(101, vec![6], [false, true]),
        ];
        (train, val)
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            model: crate::model::ModelConfig {
                variant: crate::model::Variant::Tan,
                embedding_dim: 6,
                hidden: 4,
                topics: 3,
                p1: 3,
                p2: 2,
                va_hidden: 5,
                dropout: 0.1,
                literal_eq3: false,
                shared_topic_heads: false,
                fine_tune_embeddings: false,
            },
            learning_rate: 0.05,
            batch_size: 4,
            max_epochs: 40,
            patience: 10,
            threshold: 0.5,
            seed: 5,
            regularizer_weight: 1.0,
            val_ratio: 0.1,
            clip_norm: None,
        }
    }

    #[test]
    fn fit_learns_a_separable_toy_corpus_deterministically() {
        use crate::model::testutil::tiny_model;
        let (train, val) = toy_sentences();
        let cfg = toy_config();
        let model = tiny_model(crate::model::Variant::Tan, cfg.seed);
        let run = || fit(model.clone(), &train, &val, &cfg).unwrap();
        let a = run();
        let b = run();
        // Bitwise-identical trajectories modulo wall-clock seconds.
        for (ra, rb) in a.log.iter().zip(&b.log) {
            assert_eq!(ra.epoch, rb.epoch);
            assert_eq!(ra.train_loss, rb.train_loss);
            assert_eq!(ra.val_f1, rb.val_f1);
            assert_eq!(ra.val_loss, rb.val_loss);
        }
        assert!(a.log.len() >= 10);
        assert!(
            a.log[9].train_loss < a.log[0].train_loss,
            "loss after epoch 10 ({}) should undercut epoch 1 ({})",
            a.log[9].train_loss,
            a.log[0].train_loss
        );
        assert!(a.best_val_f1 >= 0.5, "best validation F1 {}", a.best_val_f1);
        // The regularizer pushes topic rows toward orthogonality.
        let before = crate::numerics::orthogonality_penalty(
            model.head.topics().unwrap(),
        )
        .unwrap();
        let after = crate::numerics::orthogonality_penalty(
            a.model.head.topics().unwrap(),
        )
        .unwrap();
        assert!(after < before, "penalty went {before} -> {after}");
    }

    #[test]
    fn fit_rejects_empty_splits() {
        use crate::model::testutil::tiny_model;
        let (train, val) = toy_sentences();
        let cfg = toy_config();
        let model = tiny_model(crate::model::Variant::Tan, 1);
        assert!(matches!(
            fit(model.clone(), &[], &val, &cfg).unwrap_err(),
            TrainError::EmptyTrainingSet
        ));
        assert!(matches!(
            fit(model, &train, &[], &cfg).unwrap_err(),
            TrainError::EmptyValidationSet
        ));
    }

    #[test]
    fn equal_f1_with_lower_loss_replaces_without_resetting_patience() {
        let mut es = EarlyStopping::new(3);
        es.update(1, 0.7, 1.0);
        let (replace, stop) = es.update(2, 0.7, 0.5);
        assert!(replace && !stop);
        assert_eq!(es.best_epoch, 2);
        es.update(3, 0.7, 0.9);
        assert_eq!(es.best_epoch, 2);
        let (_, stop) = es.update(4, 0.7, 0.8);
        assert!(stop, "three stale epochs exhaust patience 3");
        assert!(es.best_f1 >= 0.7);
    }
}
