//! Sequential VAE over level sentences: an LSTM encoder to a Gaussian
//! latent, an LSTM decoder back to word logits, and greedy generation.
//!
//! Tensors are laid out step-major: row `t * batch + b` holds step `t` of
//! sentence `b`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::catalog::{Level, ObjectCatalog};
use crate::codec::{decode, GridSpec, LevelMatrix, MAX_COL, MAX_ROW};
use crate::embedding::{EmbeddingModel, Sentence, Vocabulary};
use crate::error::{Error, Result};
use crate::lve::LevelGenerator;
use crate::optim::{clip_global_norm, Adam};
use crate::seed::SeedTree;
use crate::tensor_io;

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    pub dim_z: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub word_drop: f64,
    pub kl_free_epochs: usize,
    pub kl_ramp_epochs: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            dim_z: 60,
            hidden: 400,
            epochs: 500,
            batch_size: 20,
            word_drop: 0.3,
            kl_free_epochs: 250,
            kl_ramp_epochs: 50,
            beta: 1.0,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim_z == 0 || self.hidden == 0 || self.batch_size == 0 {
            return bad("dim_z, hidden and batch_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.word_drop) {
            return bad("word_drop must lie in [0, 1]");
        }
        if self.kl_free_epochs > self.epochs {
            return bad("kl_free_epochs must not exceed epochs");
        }
        if !(self.beta >= 0.0 && self.learning_rate > 0.0 && self.grad_clip > 0.0) {
            return bad("beta must be non-negative, learning_rate and grad_clip positive");
        }
        Ok(())
    }

    /// KL weight: 0 during the free epochs, then a linear ramp up to `beta`.
    pub fn beta_eff(&self, epoch: usize) -> f64 {
        if epoch < self.kl_free_epochs {
            0.0
        } else if self.kl_ramp_epochs == 0 {
            self.beta
        } else {
            let ramp = (epoch - self.kl_free_epochs) as f64 / self.kl_ramp_epochs as f64;
            self.beta * ramp.min(1.0)
        }
    }

    /// `key=value` lines; `#` starts a comment. Unlisted keys keep `self`'s value.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "dim_z" => self.dim_z = p(key, value)?,
            "hidden" => self.hidden = p(key, value)?,
            "epochs" => self.epochs = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "word_drop" => self.word_drop = p(key, value)?,
            "kl_free_epochs" => self.kl_free_epochs = p(key, value)?,
            "kl_ramp_epochs" => self.kl_ramp_epochs = p(key, value)?,
            "beta" => self.beta = p(key, value)?,
            "learning_rate" => self.learning_rate = p(key, value)?,
            "grad_clip" => self.grad_clip = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }
}

impl fmt::Display for VaeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dim_z={}", self.dim_z)?;
        writeln!(f, "hidden={}", self.hidden)?;
        writeln!(f, "epochs={}", self.epochs)?;
        writeln!(f, "batch_size={}", self.batch_size)?;
        writeln!(f, "word_drop={}", self.word_drop)?;
        writeln!(f, "kl_free_epochs={}", self.kl_free_epochs)?;
        writeln!(f, "kl_ramp_epochs={}", self.kl_ramp_epochs)?;
        writeln!(f, "beta={}", self.beta)?;
        writeln!(f, "learning_rate={}", self.learning_rate)?;
        writeln!(f, "grad_clip={}", self.grad_clip)?;
        writeln!(f, "seed={}", self.seed)
    }
}

/// One LSTM cell; gate blocks are ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `input x 4H`
    pub wx: Array2<f64>,
    /// `H x 4H`
    pub wh: Array2<f64>,
    /// `1 x 4H`
    pub b: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeParams {
    pub enc: LstmParams,
    pub mu_w: Array2<f64>,
    pub mu_b: Array2<f64>,
    pub lv_w: Array2<f64>,
    pub lv_b: Array2<f64>,
    /// `Z x 2H`, maps the latent to `(h0, c0)`.
    pub init_w: Array2<f64>,
    pub init_b: Array2<f64>,
    pub dec: LstmParams,
    pub out_w: Array2<f64>,
    pub out_b: Array2<f64>,
}

pub const TENSOR_NAMES: [&str; 14] = [
    "enc_wx", "enc_wh", "enc_b", "mu_w", "mu_b", "lv_w", "lv_b", "init_w", "init_b", "dec_wx", "dec_wh", "dec_b",
    "out_w", "out_b",
];

impl VaeParams {
    fn random<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: usize, dim_z: usize, vocab: usize) -> Self {
        let mut u = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
        };
        let h4 = 4 * hidden;
        VaeParams {
            enc: LstmParams { wx: u(input, h4, input), wh: u(hidden, h4, hidden), b: u(1, h4, hidden) },
            mu_w: u(hidden, dim_z, hidden),
            mu_b: u(1, dim_z, hidden),
            lv_w: u(hidden, dim_z, hidden),
            lv_b: u(1, dim_z, hidden),
            init_w: u(dim_z, 2 * hidden, dim_z),
            init_b: u(1, 2 * hidden, dim_z),
            dec: LstmParams { wx: u(input, h4, input), wh: u(hidden, h4, hidden), b: u(1, h4, hidden) },
            out_w: u(hidden, vocab, hidden),
            out_b: u(1, vocab, hidden),
        }
    }

    pub fn tensors(&self) -> [&Array2<f64>; 14] {
        [
            &self.enc.wx, &self.enc.wh, &self.enc.b, &self.mu_w, &self.mu_b, &self.lv_w, &self.lv_b, &self.init_w,
            &self.init_b, &self.dec.wx, &self.dec.wh, &self.dec.b, &self.out_w, &self.out_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 14] {
        [
            &mut self.enc.wx, &mut self.enc.wh, &mut self.enc.b, &mut self.mu_w, &mut self.mu_b, &mut self.lv_w,
            &mut self.lv_b, &mut self.init_w, &mut self.init_b, &mut self.dec.wx, &mut self.dec.wh,
            &mut self.dec.b, &mut self.out_w, &mut self.out_b,
        ]
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }
}

/// What the LSTMs read at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputEncoding {
    /// Frozen rows of a trained word embedding.
    Embedding,
    /// One-hot vectors of width `|W|`; UNK is the uniform vector.
    OneHot,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub rec: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub rec: f64,
    pub kl: f64,
    pub beta_eff: f64,
    pub total: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch,rec,kl,beta_eff,total";

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{},{}", self.epoch, self.rec, self.kl, self.beta_eff, self.total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub params: VaeParams,
    /// `(|W| + 1) x input_dim` frozen input table; the last row is UNK.
    pub input: Array2<f64>,
    /// Word fed to the decoder at step 0.
    pub start: usize,
    pub seed: u64,
    /// Completed training epochs.
    pub epoch: usize,
}

pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    -0.5 * mu.iter().zip(logvar).map(|(m, lv)| 1.0 + lv - m * m - lv.exp()).sum::<f64>()
}

/// `-ln softmax(logits)[target]`.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// `mu + exp(logvar / 2) * eps` with standard normal `eps`.
pub fn sample_latent<R: Rng + ?Sized>(mu: &[f64], logvar: &[f64], rng: &mut R) -> Vec<f64> {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| {
            let e: f64 = rng.sample(StandardNormal);
            m + (lv / 2.0).exp() * e
        })
        .collect()
}

/// Decoder inputs for teacher forcing: `start`, then the sentence shifted
/// right by one, each teacher word replaced by `unk` with probability
/// `word_drop`.
pub fn decoder_inputs<R: Rng + ?Sized>(
    sentence: &[usize],
    start: usize,
    unk: usize,
    word_drop: f64,
    rng: &mut R,
) -> Vec<usize> {
    let mut out = Vec::with_capacity(sentence.len());
    if !sentence.is_empty() {
        out.push(start);
    }
    for &w in sentence.iter().take(sentence.len().saturating_sub(1)) {
        out.push(if rng.random::<f64>() < word_drop { unk } else { w });
    }
    out
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct LstmRun {
    batch: usize,
    steps: usize,
    hidden: usize,
    x: Array2<f64>,
    /// `(steps + 1) * batch x H`; block 0 is the initial state.
    hs: Array2<f64>,
    cs: Array2<f64>,
    /// Activated gates, `steps * batch x 4H`.
    gates: Array2<f64>,
    tc: Array2<f64>,
}

impl LstmRun {
    fn h(&self, t: usize) -> ArrayView2<'_, f64> {
        self.hs.slice(s![t * self.batch..(t + 1) * self.batch, ..])
    }

    /// `h_1 .. h_T` stacked.
    fn outputs(&self) -> ArrayView2<'_, f64> {
        self.hs.slice(s![self.batch.., ..])
    }
}

fn lstm_forward(p: &LstmParams, x: Array2<f64>, h0: ArrayView2<f64>, c0: ArrayView2<f64>) -> LstmRun {
    let batch = h0.nrows();
    let hidden = p.wh.nrows();
    let steps = x.nrows() / batch;
    let mut gates = x.dot(&p.wx);
    gates += &p.b;
    let mut hs = Array2::zeros(((steps + 1) * batch, hidden));
    let mut cs = Array2::zeros(((steps + 1) * batch, hidden));
    let mut tc = Array2::zeros((steps * batch, hidden));
    hs.slice_mut(s![..batch, ..]).assign(&h0);
    cs.slice_mut(s![..batch, ..]).assign(&c0);
    let bh = batch * hidden;
    for t in 0..steps {
        {
            let h_prev = hs.slice(s![t * batch..(t + 1) * batch, ..]);
            let mut a = gates.slice_mut(s![t * batch..(t + 1) * batch, ..]);
            general_mat_mul(1.0, &h_prev, &p.wh, 1.0, &mut a);
        }
        let a = &mut gates.as_slice_mut().expect("standard layout")[t * 4 * bh..(t + 1) * 4 * bh];
        let (c_lo, c_hi) = cs.as_slice_mut().expect("standard layout").split_at_mut((t + 1) * bh);
        let c_prev = &c_lo[t * bh..];
        let c_new = &mut c_hi[..bh];
        let h_new = &mut hs.as_slice_mut().expect("standard layout")[(t + 1) * bh..(t + 2) * bh];
        let tct = &mut tc.as_slice_mut().expect("standard layout")[t * bh..(t + 1) * bh];
        for r in 0..batch {
            let row = &mut a[r * 4 * hidden..(r + 1) * 4 * hidden];
            for j in 0..hidden {
                let i = sigmoid(row[j]);
                let f = sigmoid(row[hidden + j]);
                let g = row[2 * hidden + j].tanh();
                let o = sigmoid(row[3 * hidden + j]);
                row[j] = i;
                row[hidden + j] = f;
                row[2 * hidden + j] = g;
                row[3 * hidden + j] = o;
                let k = r * hidden + j;
                let c = f * c_prev[k] + i * g;
                c_new[k] = c;
                let th = c.tanh();
                tct[k] = th;
                h_new[k] = o * th;
            }
        }
    }
    LstmRun { batch, steps, hidden, x, hs, cs, gates, tc }
}

/// Backpropagation through time. `dh_ext` holds the loss gradient on each
/// output `h_1 .. h_T` (stacked); gradients are added into `g`. Returns the
/// gradients on `(h0, c0)`.
fn lstm_backward(p: &LstmParams, run: &LstmRun, dh_ext: ArrayView2<f64>, g: &mut LstmParams) -> (Array2<f64>, Array2<f64>) {
    let (batch, hidden, steps) = (run.batch, run.hidden, run.steps);
    let bh = batch * hidden;
    let mut da = Array2::zeros((steps * batch, 4 * hidden));
    let mut dh = Array2::<f64>::zeros((batch, hidden));
    let mut dc = vec![0.0; bh];
    let gates = run.gates.as_slice().expect("standard layout");
    let cs = run.cs.as_slice().expect("standard layout");
    let tc = run.tc.as_slice().expect("standard layout");
    for t in (0..steps).rev() {
        dh += &dh_ext.slice(s![t * batch..(t + 1) * batch, ..]);
        {
            let dhs = dh.as_slice().expect("standard layout");
            let dat = &mut da.as_slice_mut().expect("standard layout")[t * 4 * bh..(t + 1) * 4 * bh];
            let gt = &gates[t * 4 * bh..(t + 1) * 4 * bh];
            let c_prev = &cs[t * bh..(t + 1) * bh];
            let tct = &tc[t * bh..(t + 1) * bh];
            for r in 0..batch {
                let gr = &gt[r * 4 * hidden..(r + 1) * 4 * hidden];
                let dr = &mut dat[r * 4 * hidden..(r + 1) * 4 * hidden];
                for j in 0..hidden {
                    let k = r * hidden + j;
                    let (i, f, gg, o) = (gr[j], gr[hidden + j], gr[2 * hidden + j], gr[3 * hidden + j]);
                    let th = tct[k];
                    let d_o = dhs[k] * th;
                    let dck = dc[k] + dhs[k] * o * (1.0 - th * th);
                    dr[j] = dck * gg * i * (1.0 - i);
                    dr[hidden + j] = dck * c_prev[k] * f * (1.0 - f);
                    dr[2 * hidden + j] = dck * i * (1.0 - gg * gg);
                    dr[3 * hidden + j] = d_o * o * (1.0 - o);
                    dc[k] = dck * f;
                }
            }
        }
        let dat = da.slice(s![t * batch..(t + 1) * batch, ..]);
        general_mat_mul(1.0, &dat, &p.wh.t(), 0.0, &mut dh);
    }
    general_mat_mul(1.0, &run.x.t(), &da, 1.0, &mut g.wx);
    let h_prev = run.hs.slice(s![..steps * batch, ..]);
    general_mat_mul(1.0, &h_prev.t(), &da, 1.0, &mut g.wh);
    g.b += &da.sum_axis(Axis(0)).insert_axis(Axis(0));
    (dh, Array2::from_shape_vec((batch, hidden), dc).expect("shape"))
}

/// Row-wise softmax cross-entropy; `logits` becomes `scale * (p - onehot)`.
fn softmax_ce_grad(logits: &mut Array2<f64>, targets: &[usize], scale: f64) -> f64 {
    let mut total = 0.0;
    for (mut row, &t) in logits.rows_mut().into_iter().zip(targets) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        total -= (row[t] / sum).ln();
        row.mapv_inplace(|x| scale * x / sum);
        row[t] -= scale;
    }
    total
}

struct EncPass {
    run: LstmRun,
    mu: Array2<f64>,
    lv: Array2<f64>,
}

struct DecPass {
    run: LstmRun,
    logits: Array2<f64>,
}

impl VaeModel {
    /// Fresh parameters over a frozen input table with `|W| + 1` rows.
    pub fn init(config: &VaeConfig, input: Array2<f64>, start: usize) -> Result<Self> {
        config.validate()?;
        let vocab = input.nrows().checked_sub(1).filter(|&v| v > 0).ok_or(Error::EmptyDataset)?;
        if start >= vocab {
            return Err(Error::IndexOutOfRange { index: start, size: vocab });
        }
        let mut rng = SeedTree::new(config.seed).rng("vae-init", 0);
        let params = VaeParams::random(&mut rng, input.ncols(), config.hidden, config.dim_z, vocab);
        Ok(VaeModel { params, input, start, seed: config.seed, epoch: 0 })
    }

    pub fn with_encoding(
        config: &VaeConfig,
        encoding: InputEncoding,
        vocab: &Vocabulary,
        embedding: Option<&EmbeddingModel>,
    ) -> Result<Self> {
        let table = match encoding {
            InputEncoding::Embedding => {
                let emb = embedding.ok_or_else(|| Error::Config("embedding input needs a trained embedding".into()))?;
                if emb.vocab_size() != vocab.len() {
                    return Err(Error::DimensionMismatch { expected: vocab.len(), got: emb.vocab_size() });
                }
                emb.e.clone()
            }
            InputEncoding::OneHot => one_hot_table(vocab.len()),
        };
        Self::init(config, table, vocab.space_index())
    }

    pub fn dim_z(&self) -> usize {
        self.params.mu_w.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.params.enc.wh.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.params.out_w.ncols()
    }

    pub fn unk(&self) -> usize {
        self.vocab_size()
    }

    pub fn input_dim(&self) -> usize {
        self.input.ncols()
    }

    fn gather(&self, rows: impl Iterator<Item = usize>, n: usize) -> Array2<f64> {
        let mut x = Array2::zeros((n, self.input_dim()));
        for (mut dst, i) in x.rows_mut().into_iter().zip(rows) {
            dst.assign(&self.input.row(i));
        }
        x
    }

    /// Stacked step-major input rows for equal-length sequences.
    fn stack_inputs(&self, seqs: &[Vec<usize>]) -> Array2<f64> {
        let b = seqs.len();
        let steps = seqs.first().map_or(0, Vec::len);
        self.gather((0..steps * b).map(|k| seqs[k % b][k / b]), steps * b)
    }

    fn check_batch(&self, seqs: &[Vec<usize>], limit: usize) -> Result<usize> {
        let steps = seqs.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
        if steps == 0 {
            return Err(Error::EmptyDataset);
        }
        for s in seqs {
            if s.len() != steps {
                return Err(Error::DimensionMismatch { expected: steps, got: s.len() });
            }
            if let Some(&w) = s.iter().find(|&&w| w >= limit) {
                return Err(Error::IndexOutOfRange { index: w, size: limit });
            }
        }
        Ok(steps)
    }

    /// The encoder reads each sentence last word first, so the trailing run
    /// of Space words comes before the content instead of washing it out.
    fn enc_forward(&self, batch: &[Sentence]) -> EncPass {
        let b = batch.len();
        let h = self.hidden();
        let zeros = Array2::zeros((b, h));
        let steps = batch.first().map_or(0, Vec::len);
        let x = self.gather((0..steps * b).map(|k| batch[k % b][steps - 1 - k / b]), steps * b);
        let run = lstm_forward(&self.params.enc, x, zeros.view(), zeros.view());
        let last = run.h(run.steps);
        let mu = last.dot(&self.params.mu_w) + &self.params.mu_b;
        let lv = last.dot(&self.params.lv_w) + &self.params.lv_b;
        EncPass { run, mu, lv }
    }

    fn enc_backward(&self, pass: &EncPass, dmu: &Array2<f64>, dlv: &Array2<f64>, g: &mut VaeParams) {
        let run = &pass.run;
        let last = run.h(run.steps);
        general_mat_mul(1.0, &last.t(), dmu, 1.0, &mut g.mu_w);
        general_mat_mul(1.0, &last.t(), dlv, 1.0, &mut g.lv_w);
        g.mu_b += &dmu.sum_axis(Axis(0)).insert_axis(Axis(0));
        g.lv_b += &dlv.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut dh_ext = Array2::zeros((run.steps * run.batch, run.hidden));
        {
            let mut tail = dh_ext.slice_mut(s![(run.steps - 1) * run.batch.., ..]);
            general_mat_mul(1.0, dmu, &self.params.mu_w.t(), 0.0, &mut tail);
            general_mat_mul(1.0, dlv, &self.params.lv_w.t(), 1.0, &mut tail);
        }
        lstm_backward(&self.params.enc, run, dh_ext.view(), &mut g.enc);
    }

    fn initial_state(&self, z: &Array2<f64>) -> Array2<f64> {
        z.dot(&self.params.init_w) + &self.params.init_b
    }

    fn dec_forward(&self, z: &Array2<f64>, inputs: &[Vec<usize>]) -> DecPass {
        let h = self.hidden();
        let init = self.initial_state(z);
        let run = lstm_forward(
            &self.params.dec,
            self.stack_inputs(inputs),
            init.slice(s![.., ..h]),
            init.slice(s![.., h..]),
        );
        let logits = run.outputs().dot(&self.params.out_w) + &self.params.out_b;
        DecPass { run, logits }
    }

    /// Backward from logit gradients; returns the gradient on `z`.
    fn dec_backward(&self, pass: &DecPass, dlogits: &Array2<f64>, z: &Array2<f64>, g: &mut VaeParams) -> Array2<f64> {
        let out = pass.run.outputs();
        general_mat_mul(1.0, &out.t(), dlogits, 1.0, &mut g.out_w);
        g.out_b += &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dh_ext = dlogits.dot(&self.params.out_w.t());
        let (dh0, dc0) = lstm_backward(&self.params.dec, &pass.run, dh_ext.view(), &mut g.dec);
        let dinit = ndarray::concatenate(Axis(1), &[dh0.view(), dc0.view()]).expect("same rows");
        general_mat_mul(1.0, &z.t(), &dinit, 1.0, &mut g.init_w);
        g.init_b += &dinit.sum_axis(Axis(0)).insert_axis(Axis(0));
        dinit.dot(&self.params.init_w.t())
    }

    /// Posterior mean and log-variance for each sentence.
    pub fn encode_batch(&self, batch: &[Sentence]) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_batch(batch, self.vocab_size() + 1)?;
        let pass = self.enc_forward(batch);
        Ok((pass.mu, pass.lv))
    }

    pub fn encode_seq(&self, sentence: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mu, lv) = self.encode_batch(&[sentence.to_vec()])?;
        Ok((mu.row(0).to_vec(), lv.row(0).to_vec()))
    }

    /// Gradient of `sum(dmu * mu) + sum(dlv * logvar)` w.r.t. the parameters.
    pub fn encoder_vjp(&self, batch: &[Sentence], dmu: &Array2<f64>, dlv: &Array2<f64>) -> Result<VaeParams> {
        self.check_batch(batch, self.vocab_size() + 1)?;
        let pass = self.enc_forward(batch);
        let mut g = self.params.zeros_like();
        self.enc_backward(&pass, dmu, dlv, &mut g);
        Ok(g)
    }

    /// Summed teacher-forced cross-entropy (divided by the batch size),
    /// its parameter gradient and the gradient on `z`.
    pub fn decoder_loss_grad(
        &self,
        z: &Array2<f64>,
        inputs: &[Vec<usize>],
        targets: &[Sentence],
    ) -> Result<(f64, VaeParams, Array2<f64>)> {
        self.check_batch(inputs, self.vocab_size() + 1)?;
        self.check_batch(targets, self.vocab_size())?;
        let b = targets.len();
        let mut pass = self.dec_forward(z, inputs);
        let flat = stacked_targets(targets);
        let rec = softmax_ce_grad(&mut pass.logits, &flat, 1.0 / b as f64) / b as f64;
        let dlogits = std::mem::take(&mut pass.logits);
        let mut g = self.params.zeros_like();
        let dz = self.dec_backward(&pass, &dlogits, z, &mut g);
        Ok((rec, g, dz))
    }

    /// Loss on a batch with explicit reparameterisation noise and decoder
    /// inputs; gradients are returned when `want_grad`.
    pub fn loss_with(
        &self,
        batch: &[Sentence],
        inputs: &[Vec<usize>],
        eps: &Array2<f64>,
        beta_eff: f64,
        want_grad: bool,
    ) -> Result<(LossParts, Option<VaeParams>)> {
        self.check_batch(batch, self.vocab_size())?;
        self.check_batch(inputs, self.vocab_size() + 1)?;
        let b = batch.len();
        if eps.dim() != (b, self.dim_z()) {
            return Err(Error::DimensionMismatch { expected: b * self.dim_z(), got: eps.len() });
        }
        let enc = self.enc_forward(batch);
        let std = enc.lv.mapv(|v| (v / 2.0).exp());
        let z = &enc.mu + &(&std * eps);
        let mut dec = self.dec_forward(&z, inputs);
        let flat = stacked_targets(batch);
        let inv_b = 1.0 / b as f64;
        let rec = softmax_ce_grad(&mut dec.logits, &flat, inv_b) * inv_b;
        let kl = enc
            .mu
            .rows()
            .into_iter()
            .zip(enc.lv.rows())
            .map(|(m, l)| kl_divergence(m.as_slice().expect("row"), l.as_slice().expect("row")))
            .sum::<f64>()
            * inv_b;
        let parts = LossParts { rec, kl, total: rec + beta_eff * kl };
        if !want_grad {
            return Ok((parts, None));
        }
        let dlogits = std::mem::take(&mut dec.logits);
        let mut g = self.params.zeros_like();
        let dz = self.dec_backward(&dec, &dlogits, &z, &mut g);
        let dmu = &dz + &(&enc.mu * (beta_eff * inv_b));
        let mut dlv = &dz * eps * &std * 0.5;
        dlv += &enc.lv.mapv(|v| -0.5 * beta_eff * inv_b * (1.0 - v.exp()));
        self.enc_backward(&enc, &dmu, &dlv, &mut g);
        Ok((parts, Some(g)))
    }

    /// Loss for one batch with noise and word drop drawn from `rng`.
    pub fn loss<R: Rng + ?Sized>(&self, batch: &[Sentence], config: &VaeConfig, epoch: usize, rng: &mut R) -> Result<LossParts> {
        let (inputs, eps) = self.draw_noise(batch, config.word_drop, rng);
        Ok(self.loss_with(batch, &inputs, &eps, config.beta_eff(epoch), false)?.0)
    }

    fn draw_noise<R: Rng + ?Sized>(&self, batch: &[Sentence], word_drop: f64, rng: &mut R) -> (Vec<Vec<usize>>, Array2<f64>) {
        let inputs = batch
            .iter()
            .map(|s| decoder_inputs(s, self.start, self.unk(), word_drop, rng))
            .collect();
        let eps = Array2::from_shape_simple_fn((batch.len(), self.dim_z()), || rng.sample(StandardNormal));
        (inputs, eps)
    }

    /// Per-step logits for one latent vector. With a teacher sentence the
    /// inputs are teacher-forced (with word drop); without, each step reads
    /// the argmax of the previous one.
    pub fn decode_seq<R: Rng + ?Sized>(
        &self,
        z: &[f64],
        teacher: Option<&[usize]>,
        word_drop: f64,
        rng: &mut R,
    ) -> Result<Vec<Array1<f64>>> {
        if z.len() != self.dim_z() {
            return Err(Error::DimensionMismatch { expected: self.dim_z(), got: z.len() });
        }
        let zm = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("shape");
        match teacher {
            Some(t) => {
                let inputs = vec![decoder_inputs(t, self.start, self.unk(), word_drop, rng)];
                self.check_batch(&inputs, self.vocab_size() + 1)?;
                let pass = self.dec_forward(&zm, &inputs);
                Ok(pass.logits.rows().into_iter().map(|r| r.to_owned()).collect())
            }
            None => Ok(self.greedy(&zm, MAX_ROW).1),
        }
    }

    /// Greedy decoding of a batch of latents; also returns the logits of the
    /// first row.
    fn greedy(&self, z: &Array2<f64>, steps: usize) -> (Vec<Sentence>, Vec<Array1<f64>>) {
        let n = z.nrows();
        let hidden = self.hidden();
        let init = self.initial_state(z);
        let mut h = init.slice(s![.., ..hidden]).to_owned();
        let mut c = init.slice(s![.., hidden..]).to_owned();
        let mut prev = vec![self.start; n];
        let mut out = vec![Vec::with_capacity(steps); n];
        let mut first_logits = Vec::with_capacity(steps);
        let p = &self.params.dec;
        let mut a = Array2::zeros((n, 4 * hidden));
        let mut logits = Array2::zeros((n, self.vocab_size()));
        for _ in 0..steps {
            let x = self.gather(prev.iter().copied(), n);
            a.assign(&p.b.broadcast((n, 4 * hidden)).expect("broadcast"));
            general_mat_mul(1.0, &x, &p.wx, 1.0, &mut a);
            general_mat_mul(1.0, &h, &p.wh, 1.0, &mut a);
            lstm_cell_inplace(a.view_mut(), &mut h, &mut c);
            logits.assign(&self.params.out_b.broadcast((n, self.vocab_size())).expect("broadcast"));
            general_mat_mul(1.0, &h, &self.params.out_w, 1.0, &mut logits);
            for (r, row) in logits.rows().into_iter().enumerate() {
                let best = argmax(row.as_slice().expect("row"));
                out[r].push(best);
                prev[r] = best;
            }
            first_logits.push(logits.row(0).to_owned());
        }
        (out, first_logits)
    }

    /// Greedy sentences for each row of `z`.
    pub fn generate_sentences(&self, z: &Array2<f64>) -> Result<Vec<Sentence>> {
        if z.ncols() != self.dim_z() {
            return Err(Error::DimensionMismatch { expected: self.dim_z(), got: z.ncols() });
        }
        let mut out = Vec::with_capacity(z.nrows());
        for chunk in z.axis_chunks_iter(Axis(0), 256) {
            out.extend(self.greedy(&chunk.to_owned(), MAX_ROW).0);
        }
        Ok(out)
    }

    pub fn generate(&self, vocab: &Vocabulary, z: &[f64]) -> Result<LevelMatrix> {
        let zm = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("shape");
        let s = self.generate_sentences(&zm)?;
        vocab.sentence_to_matrix(&s[0])
    }

    /// Minibatch training for `config.epochs` epochs. Deterministic given
    /// `config.seed`.
    pub fn train(&mut self, dataset: &[Sentence], config: &VaeConfig) -> Result<Vec<EpochLog>> {
        config.validate()?;
        self.check_batch(dataset, self.vocab_size())?;
        let shapes: Vec<_> = self.params.tensors().iter().map(|t| t.dim()).collect();
        let mut opt = Adam::new(config.learning_rate, &shapes);
        let seeds = SeedTree::new(config.seed);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut logs = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            let beta_eff = config.beta_eff(epoch);
            order.shuffle(&mut seeds.rng("vae-shuffle", epoch as u64));
            let mut sums = LossParts::default();
            for (bi, idx) in order.chunks(config.batch_size).enumerate() {
                let batch: Vec<Sentence> = idx.iter().map(|&i| dataset[i].clone()).collect();
                let mut rng = seeds.rng("vae-step", ((epoch as u64) << 24) | bi as u64);
                let (inputs, eps) = self.draw_noise(&batch, config.word_drop, &mut rng);
                let (parts, grads) = self.loss_with(&batch, &inputs, &eps, beta_eff, true)?;
                if !parts.total.is_finite() {
                    return Err(Error::NonFinite { attribute: format!("loss at epoch {epoch}"), value: parts.total.to_string() });
                }
                let mut grads = grads.expect("requested");
                let mut gm = grads.tensors_mut();
                clip_global_norm(&mut gm, config.grad_clip);
                let gs: Vec<&Array2<f64>> = gm.iter().map(|g| &**g).collect();
                opt.step(&mut self.params.tensors_mut(), &gs);
                let w = batch.len() as f64;
                sums.rec += parts.rec * w;
                sums.kl += parts.kl * w;
            }
            let n = dataset.len() as f64;
            let (rec, kl) = (sums.rec / n, sums.kl / n);
            let entry = EpochLog { epoch, rec, kl, beta_eff, total: rec + beta_eff * kl };
            log::info!("epoch {epoch}: rec {rec:.4} kl {kl:.4} beta {beta_eff:.3}");
            logs.push(entry);
            self.epoch += 1;
        }
        Ok(logs)
    }

    /// Checkpoint with the vocabulary bundled so generation needs nothing else.
    pub fn write<W: Write>(&self, w: &mut W, vocab: &Vocabulary) -> Result<()> {
        if vocab.len() != self.vocab_size() {
            return Err(Error::DimensionMismatch { expected: self.vocab_size(), got: vocab.len() });
        }
        tensor_io::write_header(
            w,
            &[
                ("dim_z", self.dim_z().to_string()),
                ("hidden", self.hidden().to_string()),
                ("vocab_size", self.vocab_size().to_string()),
                ("dim_x", self.input_dim().to_string()),
                ("seed", self.seed.to_string()),
                ("epoch", self.epoch.to_string()),
                ("start", self.start.to_string()),
            ],
        )?;
        tensor_io::write_tensor(w, "input", &self.input)?;
        for (name, t) in TENSOR_NAMES.iter().zip(self.params.tensors()) {
            tensor_io::write_tensor(w, name, t)?;
        }
        let words = Array2::from_shape_fn((vocab.len(), MAX_COL), |(i, j)| vocab.words()[i][j] as f64);
        tensor_io::write_tensor(w, "vocab", &words)
    }

    pub fn read<R: BufRead>(r: &mut R) -> Result<(Self, Vocabulary)> {
        const WHAT: &str = "model checkpoint";
        let h = tensor_io::read_header(r, WHAT)?;
        let dim_z: usize = tensor_io::header_get(&h, "dim_z", WHAT)?;
        let hidden: usize = tensor_io::header_get(&h, "hidden", WHAT)?;
        let v: usize = tensor_io::header_get(&h, "vocab_size", WHAT)?;
        let dx: usize = tensor_io::header_get(&h, "dim_x", WHAT)?;
        let mut tensors = BTreeMap::new();
        while let Some((name, t)) = tensor_io::read_tensor(r, WHAT)? {
            tensors.insert(name, t);
        }
        let mut take = |name: &str, rows: usize, cols: usize| -> Result<Array2<f64>> {
            let t = tensors
                .remove(name)
                .ok_or_else(|| Error::format(WHAT, format!("missing tensor {name}")))?;
            if t.dim() != (rows, cols) {
                return Err(Error::format(WHAT, format!("tensor {name} has shape {:?}, expected {:?}", t.dim(), (rows, cols))));
            }
            Ok(t)
        };
        let h4 = 4 * hidden;
        let input = take("input", v + 1, dx)?;
        let params = VaeParams {
            enc: LstmParams { wx: take("enc_wx", dx, h4)?, wh: take("enc_wh", hidden, h4)?, b: take("enc_b", 1, h4)? },
            mu_w: take("mu_w", hidden, dim_z)?,
            mu_b: take("mu_b", 1, dim_z)?,
            lv_w: take("lv_w", hidden, dim_z)?,
            lv_b: take("lv_b", 1, dim_z)?,
            init_w: take("init_w", dim_z, 2 * hidden)?,
            init_b: take("init_b", 1, 2 * hidden)?,
            dec: LstmParams { wx: take("dec_wx", dx, h4)?, wh: take("dec_wh", hidden, h4)?, b: take("dec_b", 1, h4)? },
            out_w: take("out_w", hidden, v)?,
            out_b: take("out_b", 1, v)?,
        };
        let words = take("vocab", v, MAX_COL)?;
        let words: Vec<Vec<u16>> = words
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .map(|&x| {
                        if x >= 0.0 && x <= u16::MAX as f64 && x.fract() == 0.0 {
                            Ok(x as u16)
                        } else {
                            Err(Error::format(WHAT, format!("bad type id {x} in vocabulary")))
                        }
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let vocab = Vocabulary::from_words(words)?;
        let start: usize = tensor_io::header_get(&h, "start", WHAT)?;
        if start >= v {
            return Err(Error::format(WHAT, "start word out of range"));
        }
        let model = VaeModel {
            params,
            input,
            start,
            seed: tensor_io::header_get(&h, "seed", WHAT)?,
            epoch: tensor_io::header_get(&h, "epoch", WHAT)?,
        };
        Ok((model, vocab))
    }
}

fn stacked_targets(batch: &[Sentence]) -> Vec<usize> {
    let b = batch.len();
    let steps = batch.first().map_or(0, Vec::len);
    (0..steps * b).map(|k| batch[k % b][k / b]).collect()
}

/// One LSTM step on pre-activations `a`, updating `h` and `c` in place.
fn lstm_cell_inplace(mut a: ArrayViewMut2<f64>, h: &mut Array2<f64>, c: &mut Array2<f64>) {
    let hidden = h.ncols();
    let hs = h.as_slice_mut().expect("standard layout");
    let cs = c.as_slice_mut().expect("standard layout");
    for (r, row) in a.rows_mut().into_iter().enumerate() {
        let row = row.into_slice().expect("contiguous row");
        for j in 0..hidden {
            let i = sigmoid(row[j]);
            let f = sigmoid(row[hidden + j]);
            let g = row[2 * hidden + j].tanh();
            let o = sigmoid(row[3 * hidden + j]);
            let k = r * hidden + j;
            cs[k] = f * cs[k] + i * g;
            hs[k] = o * cs[k].tanh();
        }
    }
}

/// First index of the maximum.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Identity rows for the words plus a uniform UNK row.
pub fn one_hot_table(vocab: usize) -> Array2<f64> {
    let mut t = Array2::zeros((vocab + 1, vocab));
    for i in 0..vocab {
        t[[i, i]] = 1.0;
    }
    t.row_mut(vocab).fill(1.0 / vocab as f64);
    t
}

/// Latent vectors to levels: greedy sentence, matrix, then decoding.
pub struct VaeGenerator<'a> {
    pub model: &'a VaeModel,
    pub vocab: &'a Vocabulary,
    pub catalog: &'a ObjectCatalog,
    pub spec: GridSpec,
}

impl VaeGenerator<'_> {
    pub fn matrices(&self, zs: &[Vec<f64>]) -> Result<Vec<LevelMatrix>> {
        let dz = self.model.dim_z();
        if let Some(z) = zs.iter().find(|z| z.len() != dz) {
            return Err(Error::DimensionMismatch { expected: dz, got: z.len() });
        }
        let flat: Vec<f64> = zs.iter().flatten().copied().collect();
        let z = Array2::from_shape_vec((zs.len(), dz), flat).expect("shape");
        self.model
            .generate_sentences(&z)?
            .iter()
            .map(|s| self.vocab.sentence_to_matrix(s))
            .collect()
    }
}

impl LevelGenerator for VaeGenerator<'_> {
    fn latent_dim(&self) -> usize {
        self.model.dim_z()
    }

    fn generate_levels(&self, zs: &[Vec<f64>]) -> Result<Vec<Level>> {
        self.matrices(zs)?
            .iter()
            .map(|m| decode(self.catalog, &self.spec, m))
            .collect()
    }
}
