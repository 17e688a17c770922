//! Synthetic triplets by k-fold round-trip translation, `1 - TER` sample
//! weights, and the oversampling mix used for training.
//!
//! Fold `i` of a parallel corpus is translated by a model trained on the
//! other folds only, so every synthetic `mt` comes from a system that never
//! saw the line. The original target side becomes `pe`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{read_lines, write_lines, ConservativeSet, Corpus, Provenance, Triplet};
use crate::corpus::SRC_FILE;
use crate::decoder::{beam_search, DecodeConfig};
use crate::error::{Error, Result};
use crate::metrics::ter;
use crate::model::{train, ModelConfig, ModelParams, ModelScorer, TrainConfig, TrainSample};
use crate::vocab::{TokenId, Vocabulary};

/// Target side of a parallel corpus directory.
pub const TGT_FILE: &str = "tgt.txt";
pub const WEIGHTS_FILE: &str = "weights.txt";
pub const PROVENANCE_FILE: &str = "provenance.txt";

/// Sentence-aligned source and target token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    src: Vec<Vec<TokenId>>,
    tgt: Vec<Vec<TokenId>>,
}

impl ParallelCorpus {
    /// Both sides must have the same number of lines and no empty line.
    pub fn new(src: Vec<Vec<TokenId>>, tgt: Vec<Vec<TokenId>>) -> Result<Self> {
        if src.len() != tgt.len() {
            return Err(Error::LengthMismatch {
                what: "target lines vs source lines",
                expected: src.len(),
                actual: tgt.len(),
            });
        }
        if src.is_empty() {
            return Err(Error::EmptyInput("parallel corpus has no lines"));
        }
        for (i, (s, t)) in src.iter().zip(&tgt).enumerate() {
            if s.is_empty() || t.is_empty() {
                let side = if s.is_empty() { "source" } else { "target" };
                return Err(Error::InvalidTriplet(format!("{side} line is empty")).at_item(i));
            }
        }
        Ok(Self { src, tgt })
    }

    pub fn encode(src: &[String], tgt: &[String], vocab: &Vocabulary) -> Result<Self> {
        Self::new(
            src.iter().map(|l| vocab.encode(l)).collect(),
            tgt.iter().map(|l| vocab.encode(l)).collect(),
        )
    }

    /// Reads `src.txt` and `tgt.txt` from `dir`.
    pub fn read_lines(dir: &Path) -> Result<(Vec<String>, Vec<String>)> {
        Ok((read_lines(&dir.join(SRC_FILE))?, read_lines(&dir.join(TGT_FILE))?))
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn src(&self, i: usize) -> &[TokenId] {
        &self.src[i]
    }

    pub fn tgt(&self, i: usize) -> &[TokenId] {
        &self.tgt[i]
    }

    /// The lines at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            src: indices.iter().map(|&i| self.src[i].clone()).collect(),
            tgt: indices.iter().map(|&i| self.tgt[i].clone()).collect(),
        }
    }
}

/// Assignment of corpus lines to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    k: usize,
    assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Fold index of every line.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Lines of fold `i`, ascending.
    pub fn fold(&self, i: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&l| self.assignment[l] == i).collect()
    }

    /// Lines outside fold `i`, ascending.
    pub fn complement(&self, i: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&l| self.assignment[l] != i).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles line indices with `seed` and cuts the permutation into `k`
/// contiguous chunks; the first `n % k` folds get one extra line.
pub fn split_folds(n_lines: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::config("k", "need at least two folds"));
    }
    if k > n_lines {
        return Err(Error::config("k", format!("{k} folds for {n_lines} lines")));
    }
    let mut order: Vec<usize> = (0..n_lines).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n_lines / k, n_lines % k);
    let mut assignment = vec![0; n_lines];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &line in &order[pos..pos + size] {
            assignment[line] = fold;
        }
        pos += size;
    }
    Ok(FoldPlan { k, assignment })
}

/// A trained translation system.
pub trait Translator {
    fn translate(&self, src: &[TokenId]) -> Result<Vec<TokenId>>;
}

/// Builds one translation model per fold from that fold's training lines.
pub trait MtTrainer {
    type Model: Translator;

    fn train(&self, fold: usize, data: &ParallelCorpus) -> Result<Self::Model>;
}

/// The toy transformer used as a plain sequence-to-sequence model: the
/// encoder sees only the source, decoding is unpenalised.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerTrainer {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
}

impl TransformerTrainer {
    /// Each fold model gets its own seeds derived from the configured ones.
    pub fn new(model: ModelConfig, train: TrainConfig) -> Self {
        Self {
            model,
            train,
            decode: DecodeConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransformerTranslator {
    pub params: ModelParams,
    pub decode: DecodeConfig,
}

impl Translator for TransformerTranslator {
    fn translate(&self, src: &[TokenId]) -> Result<Vec<TokenId>> {
        use crate::decoder::Scorer;
        let scorer = ModelScorer::source_only(&self.params);
        let ctx = scorer.prepare(src, &[])?;
        let max_len = self.decode.max_len(src.len());
        let out = beam_search(&scorer, &ctx, &ConservativeSet::empty(), max_len, &self.decode)?;
        Ok(out.tokens)
    }
}

impl MtTrainer for TransformerTrainer {
    type Model = TransformerTranslator;

    fn train(&self, fold: usize, data: &ParallelCorpus) -> Result<TransformerTranslator> {
        let mut model = self.model;
        model.seed = model.seed.wrapping_add(fold as u32);
        let params = ModelParams::new(model)?;
        let samples = (0..data.len())
            .map(|i| {
                let input = params.encode_source(data.src(i)).map_err(|e| e.at_item(i))?;
                Ok(TrainSample::new(input, data.tgt(i).to_vec(), 1.0))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cfg = self.train;
        cfg.seed = cfg.seed.wrapping_add(fold as u64);
        let outcome = train(params, &samples, &cfg)?;
        Ok(TransformerTranslator {
            params: outcome.params,
            decode: self.decode,
        })
    }
}

/// Which lines each fold model was trained on and which it translated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesisAudit {
    pub plan: FoldPlan,
    pub trained_on: Vec<Vec<usize>>,
    pub translated: Vec<Vec<usize>>,
    /// Lines whose translation came out empty.
    pub dropped: Vec<usize>,
}

impl SynthesisAudit {
    /// True when every fold model translated exactly its own fold and none
    /// of those lines were in its training data.
    pub fn is_unbiased(&self) -> bool {
        (0..self.plan.k()).all(|i| {
            let own = self.plan.fold(i);
            self.translated[i] == own && self.trained_on[i].iter().all(|l| !own.contains(l))
        })
    }
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    /// Triplets tagged with the fold that produced them.
    pub corpus: Corpus,
    /// Source line of each output triplet.
    pub lines: Vec<usize>,
    pub audit: SynthesisAudit,
}

/// Round-trip synthesis: fold `i` is translated by a model trained on all
/// other folds. Empty translations are dropped.
pub fn synthesize<T: MtTrainer>(
    data: &ParallelCorpus,
    k: usize,
    trainer: &T,
    seed: u64,
) -> Result<Synthesis> {
    let plan = split_folds(data.len(), k, seed)?;
    let mut per_line: Vec<Option<Vec<TokenId>>> = vec![None; data.len()];
    let mut trained_on = Vec::with_capacity(k);
    let mut translated = Vec::with_capacity(k);
    for fold in 0..k {
        let train_lines = plan.complement(fold);
        let model = trainer
            .train(fold, &data.subset(&train_lines))
            .map_err(|e| Error::FoldTraining {
                fold,
                source: Box::new(e),
            })?;
        let own = plan.fold(fold);
        for &line in &own {
            let mt = model.translate(data.src(line)).map_err(|e| Error::FoldTraining {
                fold,
                source: Box::new(e.at_item(line)),
            })?;
            per_line[line] = Some(mt);
        }
        trained_on.push(train_lines);
        translated.push(own);
    }

    let mut corpus = Corpus::new();
    let mut lines = Vec::new();
    let mut dropped = Vec::new();
    for (line, mt) in per_line.into_iter().enumerate() {
        let mt = mt.expect("every line belongs to one fold");
        if mt.is_empty() {
            dropped.push(line);
            continue;
        }
        let t = Triplet::new(data.src(line).to_vec(), mt, Some(data.tgt(line).to_vec()))
            .map_err(|e| Error::FoldTraining {
                fold: plan.assignment()[line],
                source: Box::new(e.at_item(line)),
            })?;
        corpus.push(t, Provenance::SyntheticFold(plan.assignment()[line]));
        lines.push(line);
    }
    Ok(Synthesis {
        corpus,
        lines,
        audit: SynthesisAudit {
            plan,
            trained_on,
            translated,
            dropped,
        },
    })
}

/// A triplet with its training weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub triplet: Triplet,
    pub weight: f64,
    pub provenance: Provenance,
}

/// `max(0, 1 - TER(mt, pe))`.
pub fn ter_weight(mt: &[TokenId], pe: &[TokenId]) -> Result<f64> {
    Ok((1.0 - ter(mt, pe)?.score).max(0.0))
}

/// Weights every item of `corpus`; all items need a `pe`.
pub fn weigh(corpus: &Corpus) -> Result<Vec<WeightedSample>> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, (t, provenance))| {
            let pe = t
                .pe()
                .ok_or_else(|| Error::InvalidTriplet("pe is missing".into()).at_item(i))?;
            let weight = ter_weight(t.mt(), pe).map_err(|e| e.at_item(i))?;
            Ok(WeightedSample {
                triplet: t.clone(),
                weight,
                provenance,
            })
        })
        .collect()
}

/// Writes `src/mt/pe`, `weights.txt` and `provenance.txt` into `dir`.
pub fn write_weighted(dir: &Path, samples: &[WeightedSample], vocab: &Vocabulary) -> Result<()> {
    let mut corpus = Corpus::new();
    for s in samples {
        corpus.push(s.triplet.clone(), s.provenance);
    }
    corpus.to_raw(vocab).write_dir(dir)?;
    write_weights(&dir.join(WEIGHTS_FILE), samples.iter().map(|s| s.weight))?;
    let tags: Vec<String> = samples.iter().map(|s| s.provenance.to_string()).collect();
    write_lines(&dir.join(PROVENANCE_FILE), &tags)
}

pub fn write_weights(path: &Path, weights: impl Iterator<Item = f64>) -> Result<()> {
    let lines: Vec<String> = weights.map(|w| format!("{w:.6}")).collect();
    write_lines(path, &lines)
}

pub fn read_weights(path: &Path) -> Result<Vec<f64>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let w: f64 = l.trim().parse().map_err(|_| Error::Format {
                path: path.to_owned(),
                message: format!("line {}: {l:?} is not a number", i + 1),
            })?;
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Format {
                    path: path.to_owned(),
                    message: format!("line {}: weight {w} outside [0, 1]", i + 1),
                });
            }
            Ok(w)
        })
        .collect()
}

pub fn read_provenance(path: &Path) -> Result<Vec<Provenance>> {
    read_lines(path)?
        .iter()
        .map(|l| l.trim().parse())
        .collect()
}

/// Converts weighted triplets into decoder training samples.
pub fn training_samples<'a>(
    params: &ModelParams,
    samples: impl IntoIterator<Item = &'a WeightedSample>,
) -> Result<Vec<TrainSample>> {
    samples
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let pe = s
                .triplet
                .pe()
                .ok_or_else(|| Error::InvalidTriplet("pe is missing".into()).at_item(i))?;
            let input = params.encode_input(&s.triplet).map_err(|e| e.at_item(i))?;
            Ok(TrainSample::new(input, pe.to_vec(), s.weight))
        })
        .collect()
}

/// How many times each source is repeated in the training stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixSpec {
    pub in_domain_copies: usize,
    pub synthetic_copies: usize,
    pub shuffle_seed: u64,
}

impl Default for MixSpec {
    fn default() -> Self {
        Self {
            in_domain_copies: 20,
            synthetic_copies: 1,
            shuffle_seed: 0,
        }
    }
}

/// Pseudo-random bijection on `0..n` (balanced Feistel network with
/// cycle walking), so the mixed stream needs no index table.
#[derive(Debug, Clone)]
struct Permutation {
    n: u64,
    half_bits: u32,
    keys: [u64; 4],
}

impl Permutation {
    fn new(n: u64, seed: u64) -> Self {
        let bits = (u64::BITS - n.saturating_sub(1).leading_zeros()).max(2);
        let half_bits = bits.div_ceil(2);
        let mut k = seed ^ 0x5851_f42d_4c95_7f2d;
        let keys = std::array::from_fn(|_| {
            k = splitmix(k);
            k
        });
        Self { n, half_bits, keys }
    }

    fn round(&self, x: u64, key: u64) -> u64 {
        splitmix(x ^ key) & ((1 << self.half_bits) - 1)
    }

    fn apply(&self, mut x: u64) -> u64 {
        let mask = (1u64 << self.half_bits) - 1;
        loop {
            let (mut l, mut r) = (x >> self.half_bits, x & mask);
            for &key in &self.keys {
                (l, r) = (r, l ^ self.round(r, key));
            }
            x = (l << self.half_bits) | r;
            if x < self.n {
                return x;
            }
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Lazily shuffled stream over `copies × in_domain ⊎ copies × synthetic`.
#[derive(Debug, Clone)]
pub struct Mix<'a> {
    in_domain: &'a [WeightedSample],
    synthetic: &'a [WeightedSample],
    in_total: u64,
    perm: Permutation,
    next: u64,
}

impl<'a> Iterator for Mix<'a> {
    type Item = &'a WeightedSample;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next == self.perm.n {
            return None;
        }
        let j = self.perm.apply(self.next);
        self.next += 1;
        Some(if j < self.in_total {
            &self.in_domain[(j % self.in_domain.len() as u64) as usize]
        } else {
            let j = j - self.in_total;
            &self.synthetic[(j % self.synthetic.len() as u64) as usize]
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.perm.n - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for Mix<'_> {}

pub fn mix<'a>(
    in_domain: &'a [WeightedSample],
    synthetic: &'a [WeightedSample],
    spec: &MixSpec,
) -> Result<Mix<'a>> {
    if spec.in_domain_copies == 0 {
        return Err(Error::config("in_domain_copies", "must be at least 1"));
    }
    if spec.synthetic_copies == 0 {
        return Err(Error::config("synthetic_copies", "must be at least 1"));
    }
    if in_domain.is_empty() && synthetic.is_empty() {
        return Err(Error::EmptyInput("nothing to mix"));
    }
    let in_total = (in_domain.len() * spec.in_domain_copies) as u64;
    let total = in_total + (synthetic.len() * spec.synthetic_copies) as u64;
    Ok(Mix {
        in_domain,
        synthetic,
        in_total,
        perm: Permutation::new(total, spec.shuffle_seed),
        next: 0,
    })
}
