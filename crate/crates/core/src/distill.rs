//! Linear visual decoder, temperature-smoothed distillation loss and a
//! small deterministic trainer.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::{format_float, vlmg, Matrix, RandomSource};
use crate::{Error, Result, Scalar};

/// Logits = `V · weights (+ bias)`, weights `D × |vocab|`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualDecoder<T> {
    pub weights: Matrix<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> VisualDecoder<T> {
    /// Copy of the unembedding, no bias.
    pub fn from_unembedding(w_u: &Matrix<T>) -> Self {
        Self {
            weights: w_u.clone(),
            bias: None,
        }
    }

    /// Adds a zero bias so training updates it too.
    pub fn with_zero_bias(mut self) -> Self {
        self.bias = Some(vec![T::zero(); self.weights.cols()]);
        self
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.cols()
    }

    pub fn decode(&self, v: &Matrix<T>) -> Result<Matrix<T>> {
        let mut logits = v.matmul(&self.weights)?;
        if let Some(b) = &self.bias {
            for r in 0..logits.rows() {
                for (x, &bj) in logits.row_mut(r).iter_mut().zip(b) {
                    *x += bj;
                }
            }
        }
        Ok(logits)
    }

    fn is_finite(&self) -> bool {
        self.weights.data().iter().chain(self.bias.iter().flatten()).all(|x| x.is_finite())
    }
}

pub fn decode_visual<T: Scalar>(dec: &VisualDecoder<T>, v: &Matrix<T>) -> Result<Matrix<T>> {
    dec.decode(v)
}

fn default_warmup() -> usize {
    100
}

fn default_eval_every() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub tau: f64,
    /// Weight of the soft (KL) term.
    pub alpha_kd: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    /// Consecutive non-improving evaluations before stopping; 0 disables.
    pub early_stop_patience: usize,
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            alpha_kd: 0.5,
            lr: 0.5,
            steps: 2000,
            batch: 64,
            seed: 0,
            early_stop_patience: 5,
            warmup_steps: default_warmup(),
            eval_every: default_eval_every(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau", "must be a positive finite temperature"));
        }
        if !(0.0..=1.0).contains(&self.alpha_kd) {
            return Err(Error::invalid("alpha_kd", "must lie in [0, 1]"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr", "must be positive"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every", "must be at least 1"));
        }
        Ok(())
    }

    /// Linear warmup to `lr`, then cosine decay to zero at `steps`.
    pub fn learning_rate(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let t = ((step - self.warmup_steps) as f64 / span).min(1.0);
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

fn log_softmax<T: Scalar>(row: &[T], scale: T) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max) / scale;
    let lse = row.iter().map(|&x| (x / scale - max).exp()).sum::<T>().ln() + max;
    row.iter().map(|&x| x / scale - lse).collect()
}

/// Lowest index among the maxima.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// `alpha tau^2 KL(P_T || Q_T) + (1 - alpha) CE(argmax teacher, Q)`, averaged
/// over rows, and its gradient with respect to the student logits.
pub fn kd_loss<T: Scalar>(student: &Matrix<T>, teacher: &Matrix<T>, cfg: &DistillConfig) -> Result<(T, Matrix<T>)> {
    if !(cfg.tau > 0.0) {
        return Err(Error::invalid("tau", "must be positive"));
    }
    if student.shape() != teacher.shape() {
        return Err(Error::DimensionMismatch {
            expected: teacher.rows() * teacher.cols(),
            got: student.rows() * student.cols(),
        });
    }
    if student.is_empty() {
        return Err(Error::EmptyInput);
    }
    let tau = T::lit(cfg.tau);
    let alpha = T::lit(cfg.alpha_kd);
    let n = T::from_count(student.rows());
    let mut grad = Matrix::zeros(student.rows(), student.cols());
    let mut total = T::zero();
    for r in 0..student.rows() {
        let (s, t) = (student.row(r), teacher.row(r));
        let lq_t = log_softmax(s, tau);
        let lp_t = log_softmax(t, tau);
        let lq = log_softmax(s, T::one());
        let label = argmax(t);

        let mut kl = T::zero();
        for (&lp, &lq) in lp_t.iter().zip(&lq_t) {
            kl += lp.exp() * (lp - lq);
        }
        let ce = -lq[label];
        total += alpha * tau * tau * kl + (T::one() - alpha) * ce;

        let g = grad.row_mut(r);
        for j in 0..g.len() {
            let soft = tau * (lq_t[j].exp() - lp_t[j].exp());
            let onehot = if j == label { T::one() } else { T::zero() };
            let hard = lq[j].exp() - onehot;
            g[j] = (alpha * soft + (T::one() - alpha) * hard) / n;
        }
    }
    Ok((total / n, grad))
}

/// Cross-entropy of `softmax(student)` against the teacher's argmax labels.
pub fn hard_loss<T: Scalar>(student: &Matrix<T>, teacher: &Matrix<T>) -> Result<T> {
    let cfg = DistillConfig {
        tau: 1.0,
        alpha_kd: 0.0,
        ..DistillConfig::default()
    };
    Ok(kd_loss(student, teacher, &cfg)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Decoder at the best validation evaluation.
    pub decoder: VisualDecoder<T>,
    pub best_step: usize,
    pub best_val_loss: f64,
    pub steps_run: usize,
    pub stopped_early: bool,
    pub curve: Vec<LossPoint>,
}

impl<T> TrainOutcome<T> {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("step,train_loss,val_loss\n");
        for p in &self.curve {
            let _ = writeln!(s, "{},{},{}", p.step, format_float(p.train_loss), format_float(p.val_loss));
        }
        s
    }
}

fn check_pair<T: Scalar>(v: &Matrix<T>, t: &Matrix<T>, dec: &VisualDecoder<T>, what: &str) -> Result<()> {
    if v.rows() != t.rows() || v.cols() != dec.weights.rows() || t.cols() != dec.vocab_size() {
        return Err(Error::invalid(
            what,
            format!(
                "embeddings {}x{} and logits {}x{} do not fit a {}x{} decoder",
                v.rows(),
                v.cols(),
                t.rows(),
                t.cols(),
                dec.weights.rows(),
                dec.weights.cols()
            ),
        ));
    }
    Ok(())
}

/// Minibatch gradient descent on `kd_loss`. Validation uses the hard term
/// only; the returned decoder is the best one seen (the initial decoder
/// counts as step 0).
pub fn train_decoder<T: Scalar>(
    init: &VisualDecoder<T>,
    v_train: &Matrix<T>,
    teacher_train: &Matrix<T>,
    v_val: &Matrix<T>,
    teacher_val: &Matrix<T>,
    cfg: &DistillConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if v_train.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    check_pair(v_train, teacher_train, init, "train")?;
    check_pair(v_val, teacher_val, init, "val")?;

    let evaluate = |dec: &VisualDecoder<T>| -> Result<(f64, f64)> {
        let train = kd_loss(&dec.decode(v_train)?, teacher_train, cfg)?.0.as_f64();
        let val = if v_val.rows() == 0 {
            train
        } else {
            hard_loss(&dec.decode(v_val)?, teacher_val)?.as_f64()
        };
        Ok((train, val))
    };

    let (train0, val0) = evaluate(init)?;
    let mut curve = vec![LossPoint {
        step: 0,
        train_loss: train0,
        val_loss: val0,
    }];
    let mut best = init.clone();
    let (mut best_val, mut best_step) = (val0, 0);
    let mut dec = init.clone();
    let mut rng = RandomSource::new(cfg.seed);
    let batch = cfg.batch.min(v_train.rows());
    let mut bad_evals = 0;
    let mut stopped_early = false;
    let mut steps_run = 0;

    for step in 0..cfg.steps {
        let idx = rng.sample_indices(v_train.rows(), batch);
        let xb = v_train.select_rows(&idx)?;
        let tb = teacher_train.select_rows(&idx)?;
        let (_, g) = kd_loss(&dec.decode(&xb)?, &tb, cfg)?;
        let lr = T::lit(cfg.learning_rate(step));

        let (d, vsz) = dec.weights.shape();
        let mut w = std::mem::replace(&mut dec.weights, Matrix::zeros(0, 0)).into_data();
        for (x, gr) in xb.iter_rows().zip(g.iter_rows()) {
            for i in 0..d {
                let xi = lr * x[i];
                for (wij, &gj) in w[i * vsz..(i + 1) * vsz].iter_mut().zip(gr) {
                    *wij -= xi * gj;
                }
            }
        }
        dec.weights = Matrix::from_parts_unchecked(d, vsz, w);
        if let Some(b) = dec.bias.as_mut() {
            for gr in g.iter_rows() {
                for (bj, &gj) in b.iter_mut().zip(gr) {
                    *bj -= lr * gj;
                }
            }
        }
        steps_run = step + 1;

        if !dec.is_finite() {
            stopped_early = true;
            curve.push(LossPoint {
                step: steps_run,
                train_loss: f64::NAN,
                val_loss: f64::NAN,
            });
            break;
        }
        if steps_run % cfg.eval_every == 0 || steps_run == cfg.steps {
            let (train, val) = evaluate(&dec)?;
            curve.push(LossPoint {
                step: steps_run,
                train_loss: train,
                val_loss: val,
            });
            if val < best_val {
                best_val = val;
                best_step = steps_run;
                best = dec.clone();
                bad_evals = 0;
            } else {
                bad_evals += 1;
                if cfg.early_stop_patience > 0 && bad_evals >= cfg.early_stop_patience {
                    stopped_early = steps_run < cfg.steps;
                    break;
                }
            }
        }
    }

    Ok(TrainOutcome {
        decoder: best,
        best_step,
        best_val_loss: best_val,
        steps_run,
        stopped_early,
        curve,
    })
}

/// Mean hard loss of the teacher against its own argmax labels: the
/// floor a student matching the teacher exactly would reach.
pub fn teacher_floor<T: Scalar>(teacher: &Matrix<T>) -> Result<T> {
    hard_loss(teacher, teacher)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format: String,
    pub rows: usize,
    pub cols: usize,
    pub bias: Option<Vec<f64>>,
    pub config: DistillConfig,
}

/// Writes `<stem>.vlmg` (weights) and `<stem>.json` (bias and config).
pub fn save_checkpoint<T: Scalar>(dec: &VisualDecoder<T>, cfg: &DistillConfig, stem: &Path) -> Result<()> {
    vlmg::save(&dec.weights, stem.with_extension("vlmg"))?;
    let meta = CheckpointMeta {
        format: "VLMG1".into(),
        rows: dec.weights.rows(),
        cols: dec.weights.cols(),
        bias: dec.bias.as_ref().map(|b| b.iter().map(|x| x.as_f64()).collect()),
        config: cfg.clone(),
    };
    std::fs::write(
        stem.with_extension("json"),
        serde_json::to_string_pretty(&serde_json::to_value(&meta)?)? + "\n",
    )?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(stem: &Path) -> Result<(VisualDecoder<T>, DistillConfig)> {
    let weights = vlmg::load(stem.with_extension("vlmg"))?;
    let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
    if (meta.rows, meta.cols) != weights.shape() {
        return Err(Error::Format("sidecar shape does not match weights".into()));
    }
    let bias = meta.bias.map(|b| b.into_iter().map(T::lit).collect::<Vec<_>>());
    if bias.as_ref().is_some_and(|b| b.len() != meta.cols) {
        return Err(Error::Format("bias length does not match vocabulary".into()));
    }
    Ok((VisualDecoder { weights, bias }, meta.config))
}
