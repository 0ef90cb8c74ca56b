//! Level rows as words: the vocabulary over matrix rows and a
//! continuous-bag-of-words embedding trained on it.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::catalog::SPACE;
use crate::codec::{LevelMatrix, MAX_COL, MAX_ROW};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::seed::SeedTree;
use crate::tensor_io;

/// Word indices of one level, one per matrix row.
pub type Sentence = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<Vec<u16>>,
    index: HashMap<Vec<u16>, usize>,
}

impl Vocabulary {
    /// Distinct rows in first-appearance order; the all-Space row is
    /// appended if no matrix contains it.
    pub fn build(matrices: &[LevelMatrix]) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut words = Vec::new();
        let mut index = HashMap::new();
        for row in matrices.iter().flat_map(|m| m.rows()) {
            if !index.contains_key(row) {
                index.insert(row.to_vec(), words.len());
                words.push(row.to_vec());
            }
        }
        let space = vec![SPACE; MAX_COL];
        if !index.contains_key(&space) {
            index.insert(space.clone(), words.len());
            words.push(space);
        }
        Ok(Vocabulary { words, index })
    }

    pub fn from_words(words: Vec<Vec<u16>>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.len() != MAX_COL {
                return Err(Error::DimensionMismatch { expected: MAX_COL, got: w.len() });
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::format("vocabulary", format!("word {i} is a duplicate")));
            }
        }
        if !index.contains_key(&vec![SPACE; MAX_COL]) {
            return Err(Error::format("vocabulary", "the all-Space word is missing"));
        }
        Ok(Vocabulary { words, index })
    }

    /// Number of level words, `|W|`.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Reserved index for rows outside the vocabulary.
    pub fn unk(&self) -> usize {
        self.words.len()
    }

    pub fn space_index(&self) -> usize {
        self.index[&vec![SPACE; MAX_COL]]
    }

    pub fn words(&self) -> &[Vec<u16>] {
        &self.words
    }

    pub fn word(&self, index: usize) -> Option<&[u16]> {
        self.words.get(index).map(Vec::as_slice)
    }

    pub fn index_of(&self, row: &[u16]) -> Option<usize> {
        self.index.get(row).copied()
    }

    /// Sentence plus the number of rows that fell back to UNK.
    pub fn matrix_to_sentence_counted(&self, matrix: &LevelMatrix) -> (Sentence, usize) {
        let mut unknown = 0;
        let sentence = matrix
            .rows()
            .map(|r| {
                self.index_of(r).unwrap_or_else(|| {
                    unknown += 1;
                    self.unk()
                })
            })
            .collect();
        (sentence, unknown)
    }

    pub fn matrix_to_sentence(&self, matrix: &LevelMatrix) -> Sentence {
        let (sentence, unknown) = self.matrix_to_sentence_counted(matrix);
        if unknown > 0 {
            log::warn!("{unknown} row(s) not in the vocabulary were mapped to UNK");
        }
        sentence
    }

    /// UNK decodes to an empty row.
    pub fn sentence_to_matrix(&self, sentence: &[usize]) -> Result<LevelMatrix> {
        if sentence.len() > MAX_ROW {
            return Err(Error::DimensionMismatch { expected: MAX_ROW, got: sentence.len() });
        }
        let mut m = LevelMatrix::new();
        for (r, &w) in sentence.iter().enumerate() {
            if w == self.unk() {
                continue;
            }
            let word = self
                .word(w)
                .ok_or(Error::IndexOutOfRange { index: w, size: self.unk() + 1 })?;
            for (c, &id) in word.iter().enumerate() {
                m.set(r, c, id);
            }
        }
        Ok(m)
    }

    /// One line per word: `i<TAB>` and 94 comma-separated ids.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, w) in self.words.iter().enumerate() {
            let ids: Vec<String> = w.iter().map(u16::to_string).collect();
            out.push_str(&format!("{i}\t{}\n", ids.join(",")));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut words = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |msg: &str| Error::format("vocabulary", format!("line {}: {msg}", n + 1));
            let (i, ids) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            if i.trim().parse::<usize>().ok() != Some(words.len()) {
                return Err(bad("indices must count up from 0"));
            }
            let row = ids
                .split(',')
                .map(|v| v.trim().parse::<u16>().map_err(|_| bad("bad type id")))
                .collect::<Result<Vec<u16>>>()?;
            words.push(row);
        }
        Self::from_words(words)
    }
}

#[derive(Debug, Clone)]
pub struct CbowConfig {
    pub dim_x: usize,
    /// Context words taken on each side of the center.
    pub window: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for CbowConfig {
    fn default() -> Self {
        CbowConfig {
            dim_x: 50,
            window: 2,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    /// `(|W| + 1) x dim_x`, last row is UNK.
    pub e: Array2<f64>,
    /// `dim_x x |W|`.
    pub f: Array2<f64>,
    pub window: usize,
    pub seed: u64,
}

impl EmbeddingModel {
    pub fn init(vocab_size: usize, dim_x: usize, window: usize, seed: u64) -> Self {
        let mut rng = SeedTree::new(seed).rng("cbow-init", 0);
        let bound = 1.0 / (dim_x as f64).sqrt();
        let e = Array2::from_shape_fn((vocab_size + 1, dim_x), |_| rng.random_range(-bound..bound));
        let f = Array2::from_shape_fn((dim_x, vocab_size), |_| rng.random_range(-bound..bound));
        let mut model = EmbeddingModel { e, f, window, seed };
        model.refresh_unk();
        model
    }

    pub fn vocab_size(&self) -> usize {
        self.f.ncols()
    }

    pub fn dim_x(&self) -> usize {
        self.e.ncols()
    }

    /// Sets the UNK row to the mean of the word rows.
    pub fn refresh_unk(&mut self) {
        let v = self.vocab_size();
        if v > 0 {
            let mean = self.e.slice(s![..v, ..]).mean_axis(Axis(0)).expect("nonempty");
            self.e.row_mut(v).assign(&mean);
        }
    }

    /// Row lookup; index `|W|` is UNK.
    pub fn embed(&self, index: usize) -> Result<ArrayView1<'_, f64>> {
        if index > self.vocab_size() {
            return Err(Error::IndexOutOfRange { index, size: self.vocab_size() + 1 });
        }
        Ok(self.e.row(index))
    }

    /// Probability of each center word given the context words.
    pub fn forward(&self, context: &[usize]) -> Result<Array1<f64>> {
        let mut h = Array1::zeros(self.dim_x());
        for &c in context {
            h += &self.embed(c)?;
        }
        let mut p = h.dot(&self.f);
        softmax_inplace(p.view_mut());
        Ok(p)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        tensor_io::write_header(
            w,
            &[
                ("vocab_size", self.vocab_size().to_string()),
                ("dim_x", self.dim_x().to_string()),
                ("window", self.window.to_string()),
                ("seed", self.seed.to_string()),
            ],
        )?;
        tensor_io::write_f64s(w, self.e.iter().copied())?;
        tensor_io::write_f64s(w, self.f.iter().copied())
    }

    pub fn read<R: BufRead>(r: &mut R) -> Result<Self> {
        const WHAT: &str = "embedding checkpoint";
        let h = tensor_io::read_header(r, WHAT)?;
        let v: usize = tensor_io::header_get(&h, "vocab_size", WHAT)?;
        let d: usize = tensor_io::header_get(&h, "dim_x", WHAT)?;
        if v == 0 || d == 0 || v.saturating_mul(d) > 1 << 26 {
            return Err(Error::format(WHAT, "implausible dimensions"));
        }
        Ok(EmbeddingModel {
            e: tensor_io::read_matrix(r, v + 1, d, WHAT)?,
            f: tensor_io::read_matrix(r, d, v, WHAT)?,
            window: tensor_io::header_get(&h, "window", WHAT)?,
            seed: tensor_io::header_get(&h, "seed", WHAT)?,
        })
    }
}

/// `cbow_forward` as a free function.
pub fn cbow_forward(model: &EmbeddingModel, context: &[usize]) -> Result<Array1<f64>> {
    model.forward(context)
}

pub(crate) fn softmax_inplace(mut row: ndarray::ArrayViewMut1<f64>) {
    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    row.mapv_inplace(|x| (x - max).exp());
    let sum = row.sum();
    row.mapv_inplace(|x| x / sum);
}

/// A training example: center word and its 2m context words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub center: usize,
    pub context: Vec<usize>,
}

/// Every position at least `window` words away from both ends.
pub fn examples(corpus: &[Sentence], window: usize) -> Vec<Example> {
    let mut out = Vec::new();
    for s in corpus {
        for t in window..s.len().saturating_sub(window) {
            let mut context = Vec::with_capacity(2 * window);
            for i in 1..=window {
                context.push(s[t - i]);
                context.push(s[t + i]);
            }
            out.push(Example { center: s[t], context });
        }
    }
    out
}

/// Mean cross-entropy over `batch` with gradients w.r.t. E and F.
pub fn cbow_loss_grad(model: &EmbeddingModel, batch: &[Example]) -> (f64, Array2<f64>, Array2<f64>) {
    let n = batch.len().max(1) as f64;
    let mut h = Array2::zeros((batch.len(), model.dim_x()));
    for (mut row, ex) in h.rows_mut().into_iter().zip(batch) {
        for &c in &ex.context {
            row += &model.e.row(c);
        }
    }
    let mut p = h.dot(&model.f);
    let mut loss = 0.0;
    for (mut row, ex) in p.rows_mut().into_iter().zip(batch) {
        softmax_inplace(row.view_mut());
        loss -= row[ex.center].ln();
        row[ex.center] -= 1.0;
    }
    p /= n;
    let df = h.t().dot(&p);
    let dh = p.dot(&model.f.t());
    let mut de = Array2::zeros(model.e.raw_dim());
    for (row, ex) in dh.rows().into_iter().zip(batch) {
        for &c in &ex.context {
            let mut target = de.row_mut(c);
            target += &row;
        }
    }
    (loss / n, de, df)
}

/// Trains on every interior position; returns the model and the mean
/// loss of each epoch.
pub fn cbow_train(corpus: &[Sentence], vocab_size: usize, config: &CbowConfig) -> Result<(EmbeddingModel, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.window == 0 || config.batch_size == 0 {
        return Err(Error::Config("window and batch size must be positive".into()));
    }
    if let Some(&w) = corpus.iter().flatten().find(|&&w| w >= vocab_size) {
        return Err(Error::IndexOutOfRange { index: w, size: vocab_size });
    }
    let mut data = examples(corpus, config.window);
    if data.is_empty() {
        let len = corpus.iter().map(Vec::len).max().unwrap_or(0);
        return Err(Error::CorpusTooShort { len, window: config.window });
    }
    let mut model = EmbeddingModel::init(vocab_size, config.dim_x, config.window, config.seed);
    let shapes = [model.e.dim(), model.f.dim()];
    let mut opt = Adam::new(config.learning_rate, &shapes);
    let seeds = SeedTree::new(config.seed);
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        data.shuffle(&mut seeds.rng("cbow-shuffle", epoch as u64));
        let mut total = 0.0;
        for batch in data.chunks(config.batch_size) {
            let (loss, de, df) = cbow_loss_grad(&model, batch);
            total += loss * batch.len() as f64;
            opt.step(&mut [&mut model.e, &mut model.f], &[&de, &df]);
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite { attribute: "cbow loss".into(), value: mean.to_string() });
        }
        log::debug!("cbow epoch {epoch}: loss {mean:.5}");
        losses.push(mean);
    }
    model.refresh_unk();
    Ok((model, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrix_with(rows: &[(usize, usize, u16)]) -> LevelMatrix {
        let mut m = LevelMatrix::new();
        for &(r, c, v) in rows {
            m.set(r, c, v);
        }
        m
    }

    #[test]
    fn vocabulary_basics() {
        assert!(Vocabulary::build(&[]).is_err());
        let v = Vocabulary::build(&[LevelMatrix::new()]).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.unk(), 1);
        assert_eq!(v.matrix_to_sentence(&LevelMatrix::new()), vec![0; MAX_ROW]);

        let a = matrix_with(&[(0, 3, 2), (1, 3, 5)]);
        let b = matrix_with(&[(0, 3, 2)]);
        let va = Vocabulary::build(&[a.clone()]).unwrap();
        assert_eq!(Vocabulary::build(&[a.clone(), a.clone()]).unwrap(), va);
        let vab = Vocabulary::build(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(vab.len(), 3);
        for (i, w) in vab.words().iter().enumerate() {
            assert_eq!(vab.index_of(w), Some(i));
        }
        let s = vab.matrix_to_sentence(&a);
        assert_eq!(vab.sentence_to_matrix(&s).unwrap(), a);

        let unseen = matrix_with(&[(0, 7, 9)]);
        let (s, unknown) = vab.matrix_to_sentence_counted(&unseen);
        assert_eq!(unknown, 1);
        assert_eq!(s[0], vab.unk());
        assert!(vab.sentence_to_matrix(&[vab.unk() + 1]).is_err());
    }

    #[test]
    fn space_word_is_injected() {
        let mut full = LevelMatrix::new();
        for r in 0..MAX_ROW {
            full.set(r, 0, 1);
        }
        let v = Vocabulary::build(&[full]).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.space_index(), 1);
    }

    #[test]
    fn vocabulary_text_round_trip() {
        let v = Vocabulary::build(&[matrix_with(&[(0, 1, 4), (1, 93, 60)])]).unwrap();
        let text = v.to_text();
        assert!(text.starts_with("0\t0,4,0"));
        assert_eq!(Vocabulary::parse(&text).unwrap(), v);
        assert!(Vocabulary::parse("1\t0").is_err());
        assert!(Vocabulary::parse("0\t1,2").is_err());
    }

    #[test]
    fn forward_examples() {
        let mut m = EmbeddingModel::init(4, 3, 1, 0);
        let p = m.forward(&[0, 1]).unwrap();
        assert!((p.sum() - 1.0).abs() < 1e-9);
        m.e.fill(0.0);
        m.f.fill(0.0);
        let p = m.forward(&[2, 3]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));

        let mut two = EmbeddingModel::init(2, 1, 1, 0);
        two.e = Array2::from_shape_vec((3, 1), vec![1.0, 0.0, 0.5]).unwrap();
        two.f = Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
        let p = two.forward(&[0]).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!(two.forward(&[3]).is_err());
    }

    proptest! {
        #[test]
        fn forward_is_a_distribution(seed in 0u64..1000, ctx in proptest::collection::vec(0usize..7, 1..6)) {
            let m = EmbeddingModel::init(7, 5, 2, seed);
            let p = m.forward(&ctx).unwrap();
            prop_assert!(p.iter().all(|&x| x > 0.0));
            prop_assert!((p.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unk_is_mean_and_lookup_is_deterministic() {
        let m = EmbeddingModel::init(5, 4, 2, 3);
        let mean = m.e.slice(s![..5, ..]).mean_axis(Axis(0)).unwrap();
        let unk = m.embed(5).unwrap();
        assert!(unk.iter().zip(&mean).all(|(a, b)| (a - b).abs() < 1e-15));
        assert_eq!(m.embed(2).unwrap(), m.embed(2).unwrap());
        assert_ne!(m.embed(1).unwrap(), m.embed(2).unwrap());
        assert!(m.embed(6).is_err());
    }

    fn random_corpus(rng: &mut ChaCha8Rng, n: usize, len: usize, vocab: usize) -> Vec<Sentence> {
        (0..n).map(|_| (0..len).map(|_| rand::Rng::random_range(rng, 0..vocab)).collect()).collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for point in 0..20u64 {
            let model = EmbeddingModel::init(6, 4, 2, point);
            let batch = examples(&random_corpus(&mut rng, 2, 8, 6), 2);
            let (_, de, df) = cbow_loss_grad(&model, &batch);
            let h = 1e-4;
            for (which, grad) in [(0, &de), (1, &df)] {
                let shape = grad.dim();
                for i in 0..shape.0 {
                    for j in 0..shape.1 {
                        let mut plus = model.clone();
                        let mut minus = model.clone();
                        let (p, m) = if which == 0 { (&mut plus.e, &mut minus.e) } else { (&mut plus.f, &mut minus.f) };
                        p[[i, j]] += h;
                        m[[i, j]] -= h;
                        let fd = (cbow_loss_grad(&plus, &batch).0 - cbow_loss_grad(&minus, &batch).0) / (2.0 * h);
                        let an = grad[[i, j]];
                        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                        assert!(rel < 1e-4, "point {point} tensor {which} [{i},{j}]: {an} vs {fd}");
                    }
                }
            }
        }
    }

    #[test]
    fn degenerate_corpus_is_learned() {
        // A (0) always sits between B (1)s and is the only center
        let corpus = vec![vec![1, 1, 0, 1, 1]; 4];
        let config = CbowConfig { dim_x: 8, epochs: 400, learning_rate: 0.05, ..CbowConfig::default() };
        let (model, losses) = cbow_train(&corpus, 3, &config).unwrap();
        assert!(*losses.last().unwrap() < 1e-3, "{:?}", losses.last());
        assert!(model.forward(&[1, 1, 1, 1]).unwrap()[0] > 0.999);
    }

    #[test]
    fn full_batch_loss_does_not_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let corpus = random_corpus(&mut rng, 6, 12, 9);
        let config = CbowConfig { dim_x: 6, epochs: 60, batch_size: usize::MAX, ..CbowConfig::default() };
        let (_, losses) = cbow_train(&corpus, 9, &config).unwrap();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn training_is_seeded_and_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let corpus = random_corpus(&mut rng, 5, 10, 7);
        let config = CbowConfig { dim_x: 4, epochs: 3, seed: 9, ..CbowConfig::default() };
        let (a, la) = cbow_train(&corpus, 7, &config).unwrap();
        let (b, lb) = cbow_train(&corpus, 7, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert!(matches!(cbow_train(&[vec![0, 1, 2]], 7, &config), Err(Error::CorpusTooShort { .. })));
        assert!(matches!(cbow_train(&[], 7, &config), Err(Error::EmptyDataset)));
        assert!(cbow_train(&[vec![9; 10]], 7, &config).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = EmbeddingModel::init(5, 3, 2, 8);
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert!(buf.starts_with(b"vocab_size=5\ndim_x=3\nwindow=2\nseed=8\n\n"));
        let back = EmbeddingModel::read(&mut std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(back, m);
        buf.truncate(buf.len() - 1);
        assert!(EmbeddingModel::read(&mut std::io::Cursor::new(&buf)).is_err());
    }
}
