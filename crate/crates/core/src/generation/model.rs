use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GenerationError;
use crate::binio;
use crate::optim::ParamBlocks;
use crate::vocab::Vocab;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
/// Special tokens in their fixed id order.
pub const SPECIALS: [&str; 4] = [PAD, BOS, EOS, UNK];
pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

const MAGIC: &[u8; 8] = b"RSSEQ2SQ";
const VERSION: u32 = 1;

/// Weights of the recurrent encoder, decoder and output layer. Also used
/// to hold gradients of the same shapes.
///
/// Encoder: `h_t = tanh(W e(x_t) + U h_{t-1} + b)`, `h_0 = 0`.
/// Decoder: `s_i = tanh(W' e'(u_i) + U' s_{i-1} + b')`, `s_0 = h_n`, where
/// `u_1 = BOS` and `u_i = y_{i-1}`. Dot-product attention over `h` gives
/// the context `c_i`, and `logits_i = O [s_i; c_i] + o`.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqParams {
    pub enc_embeddings: Array2<f64>,
    pub enc_input: Array2<f64>,
    pub enc_recurrent: Array2<f64>,
    pub enc_bias: Array1<f64>,
    pub dec_embeddings: Array2<f64>,
    pub dec_input: Array2<f64>,
    pub dec_recurrent: Array2<f64>,
    pub dec_bias: Array1<f64>,
    pub out_weights: Array2<f64>,
    pub out_bias: Array1<f64>,
}

impl Seq2SeqParams {
    pub fn zeros(vocab_size: usize, d: usize) -> Self {
        Seq2SeqParams {
            enc_embeddings: Array2::zeros((vocab_size, d)),
            enc_input: Array2::zeros((d, d)),
            enc_recurrent: Array2::zeros((d, d)),
            enc_bias: Array1::zeros(d),
            dec_embeddings: Array2::zeros((vocab_size, d)),
            dec_input: Array2::zeros((d, d)),
            dec_recurrent: Array2::zeros((d, d)),
            dec_bias: Array1::zeros(d),
            out_weights: Array2::zeros((vocab_size, 2 * d)),
            out_bias: Array1::zeros(vocab_size),
        }
    }

    /// Uniform `±sqrt(3/fan_in)`; biases start at zero.
    pub fn random(vocab_size: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(vocab_size, d);
        let mut fill = |m: &mut Array2<f64>, fan_in: usize| {
            let bound = (3.0 / fan_in as f64).sqrt();
            m.mapv_inplace(|_| rng.random_range(-bound..bound));
        };
        fill(&mut p.enc_embeddings, d);
        fill(&mut p.enc_input, d);
        fill(&mut p.enc_recurrent, d);
        fill(&mut p.dec_embeddings, d);
        fill(&mut p.dec_input, d);
        fill(&mut p.dec_recurrent, d);
        fill(&mut p.out_weights, 2 * d);
        p
    }

    pub fn dim(&self) -> usize {
        self.enc_bias.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.out_bias.len()
    }

    fn check(&self) -> Result<(), GenerationError> {
        let (v, d) = (self.vocab_size(), self.dim());
        let shapes = [
            ("encoder embeddings", self.enc_embeddings.dim(), (v, d)),
            ("encoder input", self.enc_input.dim(), (d, d)),
            ("encoder recurrent", self.enc_recurrent.dim(), (d, d)),
            ("decoder embeddings", self.dec_embeddings.dim(), (v, d)),
            ("decoder input", self.dec_input.dim(), (d, d)),
            ("decoder recurrent", self.dec_recurrent.dim(), (d, d)),
            ("output weights", self.out_weights.dim(), (v, 2 * d)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(GenerationError::Shape(format!(
                    "{name} is {got:?}, expected {want:?}"
                )));
            }
        }
        if self.dec_bias.len() != d {
            return Err(GenerationError::Shape("decoder bias width".into()));
        }
        if self
            .blocks()
            .iter()
            .any(|b| b.iter().any(|x| !x.is_finite()))
        {
            return Err(GenerationError::NonFinite("model parameters"));
        }
        Ok(())
    }
}

impl ParamBlocks for Seq2SeqParams {
    fn blocks(&self) -> Vec<&[f64]> {
        let p = self;
        [
            p.enc_embeddings.as_slice(),
            p.enc_input.as_slice(),
            p.enc_recurrent.as_slice(),
            p.enc_bias.as_slice(),
            p.dec_embeddings.as_slice(),
            p.dec_input.as_slice(),
            p.dec_recurrent.as_slice(),
            p.dec_bias.as_slice(),
            p.out_weights.as_slice(),
            p.out_bias.as_slice(),
        ]
        .into_iter()
        .map(|b| b.expect("parameter arrays are contiguous"))
        .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let p = self;
        [
            p.enc_embeddings.as_slice_mut(),
            p.enc_input.as_slice_mut(),
            p.enc_recurrent.as_slice_mut(),
            p.enc_bias.as_slice_mut(),
            p.dec_embeddings.as_slice_mut(),
            p.dec_input.as_slice_mut(),
            p.dec_recurrent.as_slice_mut(),
            p.dec_bias.as_slice_mut(),
            p.out_weights.as_slice_mut(),
            p.out_bias.as_slice_mut(),
        ]
        .into_iter()
        .map(|b| b.expect("parameter arrays are contiguous"))
        .collect()
    }
}

/// Encoder states for one input, `h_1..h_n` as rows.
#[derive(Debug, Clone)]
pub struct EncodedInput {
    states: Array2<f64>,
}

impl EncodedInput {
    pub fn states(&self) -> &Array2<f64> {
        &self.states
    }
}

/// Everything a decoder step produces.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: Array1<f64>,
    pub attention: Array1<f64>,
    pub context: Array1<f64>,
    pub log_probs: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    vocab: Vocab,
    params: Seq2SeqParams,
}

fn log_softmax(logits: &Array1<f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let log_z = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    logits.mapv(|x| x - log_z)
}

fn softmax(scores: &Array1<f64>) -> Array1<f64> {
    log_softmax(scores).mapv(f64::exp)
}

fn rnn_cell(
    input: &Array2<f64>,
    recurrent: &Array2<f64>,
    bias: &Array1<f64>,
    x: ArrayView1<f64>,
    prev: &Array1<f64>,
) -> Array1<f64> {
    (input.dot(&x) + recurrent.dot(prev) + bias).mapv(f64::tanh)
}

impl Seq2SeqModel {
    /// The vocabulary must start with [`SPECIALS`] in order.
    pub fn new(vocab: Vocab, params: Seq2SeqParams) -> Result<Self, GenerationError> {
        if vocab.tokens().len() < SPECIALS.len() || vocab.tokens()[..SPECIALS.len()] != SPECIALS {
            return Err(GenerationError::Shape(format!(
                "vocabulary must start with {SPECIALS:?}"
            )));
        }
        if params.vocab_size() != vocab.len() {
            return Err(GenerationError::Shape(format!(
                "output layer has {} rows for a vocabulary of {}",
                params.vocab_size(),
                vocab.len()
            )));
        }
        if params.dim() == 0 {
            return Err(GenerationError::Shape(
                "hidden width must be positive".into(),
            ));
        }
        params.check()?;
        Ok(Seq2SeqModel { vocab, params })
    }

    /// Vocabulary from the given token sequences, specials first.
    pub fn build_vocab<'a, I>(sequences: I, min_count: usize, max_size: Option<usize>) -> Vocab
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        Vocab::build(sequences, &SPECIALS, UNK, min_count, max_size)
    }

    pub fn random(vocab: Vocab, d: usize, seed: u64) -> Result<Self, GenerationError> {
        let params = Seq2SeqParams::random(vocab.len(), d, seed);
        Self::new(vocab, params)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &Seq2SeqParams {
        &self.params
    }

    /// Mutable access for optimizers; callers must keep values finite.
    pub fn params_mut(&mut self) -> &mut Seq2SeqParams {
        &mut self.params
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    /// Token ids with UNK for unknown words.
    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        self.vocab.ids(tokens)
    }

    /// Target ids for a reply: the tokens followed by EOS.
    pub fn target_ids(&self, tokens: &[String]) -> Vec<usize> {
        let mut ids = self.ids(tokens);
        ids.push(EOS_ID);
        ids
    }

    /// Renders ids as text, stopping at EOS and skipping other specials.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&id| id != EOS_ID)
            .filter(|&&id| id >= SPECIALS.len() || id == UNK_ID)
            .filter_map(|&id| self.vocab.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn check_ids(&self, ids: &[usize]) -> Result<(), GenerationError> {
        match ids.iter().find(|&&id| id >= self.vocab.len()) {
            Some(&id) => Err(GenerationError::OutOfVocab(id)),
            None => Ok(()),
        }
    }

    /// Runs the encoder over `source` followed by EOS.
    pub fn encode(&self, source: &[usize]) -> Result<EncodedInput, GenerationError> {
        self.check_ids(source)?;
        let p = &self.params;
        let d = self.dim();
        let n = source.len() + 1;
        let mut states = Array2::zeros((n, d));
        let mut h = Array1::zeros(d);
        for (t, &id) in source.iter().chain(std::iter::once(&EOS_ID)).enumerate() {
            h = rnn_cell(
                &p.enc_input,
                &p.enc_recurrent,
                &p.enc_bias,
                p.enc_embeddings.row(id),
                &h,
            );
            states.row_mut(t).assign(&h);
        }
        Ok(EncodedInput { states })
    }

    /// Decoder state before the first step: the last encoder state.
    pub fn initial_state(&self, encoded: &EncodedInput) -> Array1<f64> {
        encoded.states.row(encoded.states.nrows() - 1).to_owned()
    }

    /// One decoder step fed `input` (BOS on the first step).
    pub fn step(&self, encoded: &EncodedInput, prev: &Array1<f64>, input: usize) -> StepOutput {
        let p = &self.params;
        let state = rnn_cell(
            &p.dec_input,
            &p.dec_recurrent,
            &p.dec_bias,
            p.dec_embeddings.row(input),
            prev,
        );
        let attention = softmax(&encoded.states.dot(&state));
        let context = encoded.states.t().dot(&attention);
        let d = self.dim();
        let logits = p.out_weights.slice(s![.., ..d]).dot(&state)
            + p.out_weights.slice(s![.., d..]).dot(&context)
            + &p.out_bias;
        StepOutput {
            state,
            attention,
            context,
            log_probs: log_softmax(&logits),
        }
    }

    /// `p(· | x, prefix)` as a probability vector over the vocabulary.
    pub fn next_token_dist(
        &self,
        source: &[usize],
        prefix: &[usize],
    ) -> Result<Array1<f64>, GenerationError> {
        self.check_ids(prefix)?;
        let encoded = self.encode(source)?;
        let mut state = self.initial_state(&encoded);
        let mut out = None;
        for &input in std::iter::once(&BOS_ID).chain(prefix) {
            let o = self.step(&encoded, &state, input);
            state = o.state.clone();
            out = Some(o);
        }
        Ok(out
            .expect("at least the BOS step runs")
            .log_probs
            .mapv(f64::exp))
    }

    /// `Σ_i log p(y_i | x, y_<i)`; `target` must end with EOS.
    pub fn sequence_log_prob(
        &self,
        source: &[usize],
        target: &[usize],
    ) -> Result<f64, GenerationError> {
        if target.last() != Some(&EOS_ID) {
            return Err(GenerationError::MissingEos);
        }
        self.check_ids(target)?;
        let encoded = self.encode(source)?;
        let mut state = self.initial_state(&encoded);
        let mut input = BOS_ID;
        let mut total = 0.0;
        for &y in target {
            let o = self.step(&encoded, &state, input);
            total += o.log_probs[y];
            state = o.state;
            input = y;
        }
        Ok(total)
    }

    /// Adds `scale * ∂(−log p(target | source))/∂θ` to `grads` and returns
    /// `log p(target | source)`. `target` must end with EOS.
    pub fn accumulate_gradient(
        &self,
        source: &[usize],
        target: &[usize],
        scale: f64,
        grads: &mut Seq2SeqParams,
    ) -> Result<f64, GenerationError> {
        if target.last() != Some(&EOS_ID) {
            return Err(GenerationError::MissingEos);
        }
        self.check_ids(target)?;
        let p = &self.params;
        let d = self.dim();
        let encoded = self.encode(source)?;
        let h = &encoded.states;
        let enc_inputs: Vec<usize> = source
            .iter()
            .copied()
            .chain(std::iter::once(EOS_ID))
            .collect();

        // Forward through the decoder, keeping every step.
        let mut dec_states = vec![self.initial_state(&encoded)];
        let mut steps = Vec::with_capacity(target.len());
        let mut input = BOS_ID;
        let mut log_prob = 0.0;
        for &y in target {
            let o = self.step(&encoded, dec_states.last().unwrap(), input);
            log_prob += o.log_probs[y];
            dec_states.push(o.state.clone());
            steps.push((input, o));
            input = y;
        }

        let out_s = p.out_weights.slice(s![.., ..d]);
        let out_c = p.out_weights.slice(s![.., d..]);
        let mut d_h = Array2::<f64>::zeros(h.dim());
        let mut d_state_carry = Array1::<f64>::zeros(d);
        for (i, (&y, (input, o))) in target.iter().zip(&steps).enumerate().rev() {
            let mut d_logits = o.log_probs.mapv(f64::exp);
            d_logits[y] -= 1.0;
            d_logits *= scale;
            let mut joint = Array1::zeros(2 * d);
            joint.slice_mut(s![..d]).assign(&o.state);
            joint.slice_mut(s![d..]).assign(&o.context);
            grads.out_weights += &outer(&d_logits, &joint);
            grads.out_bias += &d_logits;
            let mut d_state = out_s.t().dot(&d_logits) + &d_state_carry;
            let d_context = out_c.t().dot(&d_logits);

            // context = Σ_j α_j h_j and α = softmax(h · s).
            let d_alpha = h.dot(&d_context);
            d_h += &outer(&o.attention, &d_context);
            let mean = o.attention.dot(&d_alpha);
            let d_scores = &o.attention * &(d_alpha - mean);
            d_state += &h.t().dot(&d_scores);
            d_h += &outer(&d_scores, &o.state);

            let d_pre = d_state * o.state.mapv(|v| 1.0 - v * v);
            let emb = p.dec_embeddings.row(*input);
            grads.dec_input += &outer(&d_pre, &emb.to_owned());
            let mut d_emb = grads.dec_embeddings.row_mut(*input);
            d_emb += &p.dec_input.t().dot(&d_pre);
            grads.dec_recurrent += &outer(&d_pre, &dec_states[i]);
            grads.dec_bias += &d_pre;
            d_state_carry = p.dec_recurrent.t().dot(&d_pre);
        }

        // The first decoder state is the last encoder state.
        let last = h.nrows() - 1;
        let mut last_row = d_h.row_mut(last);
        last_row += &d_state_carry;

        let zero = Array1::zeros(d);
        let mut d_carry = Array1::<f64>::zeros(d);
        for t in (0..h.nrows()).rev() {
            let d_state = &d_h.row(t) + &d_carry;
            let h_t = h.row(t);
            let d_pre = d_state * h_t.mapv(|v| 1.0 - v * v);
            let id = enc_inputs[t];
            grads.enc_input += &outer(&d_pre, &p.enc_embeddings.row(id).to_owned());
            let mut d_emb = grads.enc_embeddings.row_mut(id);
            d_emb += &p.enc_input.t().dot(&d_pre);
            let prev = if t == 0 {
                zero.clone()
            } else {
                h.row(t - 1).to_owned()
            };
            grads.enc_recurrent += &outer(&d_pre, &prev);
            grads.enc_bias += &d_pre;
            d_carry = p.enc_recurrent.t().dot(&d_pre);
        }
        Ok(log_prob)
    }

    pub fn write<W: Write>(&self, out: &mut W) -> io::Result<()> {
        binio::write_header(out, MAGIC, VERSION)?;
        binio::write_len(out, self.vocab.len())?;
        binio::write_len(out, self.dim())?;
        for t in self.vocab.tokens() {
            binio::write_str(out, t)?;
        }
        let p = &self.params;
        for m in [&p.enc_embeddings, &p.enc_input, &p.enc_recurrent] {
            binio::write_matrix(out, m)?;
        }
        binio::write_vector(out, &p.enc_bias)?;
        for m in [&p.dec_embeddings, &p.dec_input, &p.dec_recurrent] {
            binio::write_matrix(out, m)?;
        }
        binio::write_vector(out, &p.dec_bias)?;
        binio::write_matrix(out, &p.out_weights)?;
        binio::write_vector(out, &p.out_bias)
    }

    pub fn read<R: Read>(input: &mut R) -> io::Result<Self> {
        binio::read_header(input, MAGIC, VERSION)?;
        let v = binio::read_u32(input)? as usize;
        let d = binio::read_u32(input)? as usize;
        let tokens = (0..v)
            .map(|_| binio::read_str(input))
            .collect::<io::Result<Vec<_>>>()?;
        let vocab = Vocab::from_tokens(tokens, UNK)
            .ok_or_else(|| binio::invalid("vocabulary lacks UNK or repeats a token".into()))?;
        let mut m = |rows, cols, name| binio::read_matrix_shaped(input, rows, cols, name);
        let enc_embeddings = m(v, d, "encoder embeddings")?;
        let enc_input = m(d, d, "encoder input")?;
        let enc_recurrent = m(d, d, "encoder recurrent")?;
        let enc_bias = binio::read_vector(input)?;
        let mut m = |rows, cols, name| binio::read_matrix_shaped(input, rows, cols, name);
        let dec_embeddings = m(v, d, "decoder embeddings")?;
        let dec_input = m(d, d, "decoder input")?;
        let dec_recurrent = m(d, d, "decoder recurrent")?;
        let dec_bias = binio::read_vector(input)?;
        let out_weights = binio::read_matrix_shaped(input, v, 2 * d, "output weights")?;
        let out_bias = binio::read_vector(input)?;
        let params = Seq2SeqParams {
            enc_embeddings,
            enc_input,
            enc_recurrent,
            enc_bias,
            dec_embeddings,
            dec_input,
            dec_recurrent,
            dec_bias,
            out_weights,
            out_bias,
        };
        Self::new(vocab, params).map_err(|e| binio::invalid(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out)?;
        out.flush()
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a = a.view().insert_axis(ndarray::Axis(1));
    let b = b.view().insert_axis(ndarray::Axis(0));
    a.dot(&b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn vocab(words: &[&str]) -> Vocab {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.iter().map(|w| w.to_string()));
        Vocab::from_tokens(tokens, UNK).unwrap()
    }

    pub(crate) fn tiny(seed: u64, words: usize, d: usize) -> Seq2SeqModel {
        let names: Vec<String> = (0..words).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut m = Seq2SeqModel::random(vocab(&refs), d, seed).unwrap();
        // Non-zero biases so their gradients are exercised too.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
        for b in [
            &mut m.params.enc_bias,
            &mut m.params.dec_bias,
            &mut m.params.out_bias,
        ] {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        m
    }

    #[test]
    fn hand_stepped_width_one_model() {
        // Vocabulary: 4 specials + "a" (id 4). Width 1, so every matrix is a scalar.
        let mut p = Seq2SeqParams::zeros(5, 1);
        p.enc_embeddings = Array2::from_shape_vec((5, 1), vec![0.0, 0.0, 0.3, 0.0, 1.0]).unwrap();
        p.enc_input[[0, 0]] = 0.8;
        p.enc_recurrent[[0, 0]] = 0.5;
        p.enc_bias[0] = 0.1;
        p.dec_embeddings = Array2::from_shape_vec((5, 1), vec![0.0, -1.0, 0.0, 0.0, 0.5]).unwrap();
        p.dec_input[[0, 0]] = 1.2;
        p.dec_recurrent[[0, 0]] = -0.4;
        p.dec_bias[0] = 0.05;
        p.out_weights = Array2::from_shape_vec(
            (5, 2),
            vec![0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -0.5, 2.0],
        )
        .unwrap();
        p.out_bias = Array1::from(vec![-1.0, -1.0, 0.2, -1.0, 0.0]);
        let model = Seq2SeqModel::new(vocab(&["a"]), p).unwrap();

        // Encoder over [a, EOS].
        let h1 = (0.8 * 1.0 + 0.1f64).tanh();
        let h2 = (0.8 * 0.3 + 0.5 * h1 + 0.1f64).tanh();
        // Decoder step 1 on BOS, then step 2 on "a".
        let dist = |s: f64| {
            let (a1, a2) = (h1 * s, h2 * s);
            let m = a1.max(a2);
            let (e1, e2) = ((a1 - m).exp(), (a2 - m).exp());
            let c = (e1 * h1 + e2 * h2) / (e1 + e2);
            let logits = [-1.0, -1.0, s - c + 0.2, -1.0, -0.5 * s + 2.0 * c];
            let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
            logits.map(|l| l.exp() / z)
        };
        let s1 = (1.2 * -1.0 - 0.4 * h2 + 0.05f64).tanh();
        let s2 = (1.2 * 0.5 - 0.4 * s1 + 0.05f64).tanh();
        let got1 = model.next_token_dist(&[4], &[]).unwrap();
        let got2 = model.next_token_dist(&[4], &[4]).unwrap();
        for (g, w) in got1.iter().zip(dist(s1)) {
            assert!((g - w).abs() < 1e-14);
        }
        for (g, w) in got2.iter().zip(dist(s2)) {
            assert!((g - w).abs() < 1e-14);
        }
        // Two-step chain product for "a EOS".
        let lp = model.sequence_log_prob(&[4], &[4, EOS_ID]).unwrap();
        assert!((lp - (dist(s1)[4] * dist(s2)[EOS_ID]).ln()).abs() < 1e-12);
    }

    #[test]
    fn sequence_log_prob_is_chain_of_dists() {
        let m = tiny(4, 5, 6);
        let x = [5, 6, 4];
        let y = [7, 4, 8, EOS_ID];
        let mut product = 1.0;
        for i in 0..y.len() {
            product *= m.next_token_dist(&x, &y[..i]).unwrap()[y[i]];
        }
        let lp = m.sequence_log_prob(&x, &y).unwrap();
        assert!((lp - product.ln()).abs() < 1e-12);
    }

    #[test]
    fn longer_sequence_has_lower_partial_prob() {
        let m = tiny(9, 4, 5);
        let x = [4, 5];
        let y = [6, 5, 7, EOS_ID];
        let partial = |k: usize| {
            (0..k)
                .map(|i| m.next_token_dist(&x, &y[..i]).unwrap()[y[i]].ln())
                .sum::<f64>()
        };
        for k in 1..=y.len() {
            assert!(partial(k) <= partial(k - 1));
        }
        assert!((partial(y.len()) - m.sequence_log_prob(&x, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let m = tiny(1, 3, 4);
        assert!(matches!(
            m.sequence_log_prob(&[4], &[5]),
            Err(GenerationError::MissingEos)
        ));
        assert!(matches!(
            m.sequence_log_prob(&[4], &[99, EOS_ID]),
            Err(GenerationError::OutOfVocab(99))
        ));
        assert!(matches!(
            m.next_token_dist(&[42], &[]),
            Err(GenerationError::OutOfVocab(42))
        ));
        let bad = Vocab::from_tokens(vec![UNK.into(), "a".into()], UNK).unwrap();
        assert!(Seq2SeqModel::random(bad, 4, 0).is_err());
        // Unknown words map to UNK rather than failing.
        assert_eq!(m.ids(&["nope".to_string()]), vec![UNK_ID]);
    }

    fn loss(m: &Seq2SeqModel, batch: &[(Vec<usize>, Vec<usize>)]) -> f64 {
        let tokens: usize = batch.iter().map(|b| b.1.len()).sum();
        -batch
            .iter()
            .map(|(x, y)| m.sequence_log_prob(x, y).unwrap())
            .sum::<f64>()
            / tokens as f64
    }

    fn relative_gradient_error(seed: u64) -> f64 {
        let m = tiny(seed, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seq = |max: usize| {
            (0..rng.random_range(0..=max))
                .map(|_| rng.random_range(3..7))
                .collect::<Vec<usize>>()
        };
        let batch: Vec<(Vec<usize>, Vec<usize>)> = (0..2)
            .map(|_| {
                let x = seq(3);
                let mut y = seq(3);
                y.push(EOS_ID);
                (x, y)
            })
            .collect();
        let tokens: usize = batch.iter().map(|b| b.1.len()).sum();
        let mut grads = Seq2SeqParams::zeros(m.vocab.len(), m.dim());
        for (x, y) in &batch {
            m.accumulate_gradient(x, y, 1.0 / tokens as f64, &mut grads)
                .unwrap();
        }
        let analytic = grads.blocks().concat();
        let mut numeric = Vec::new();
        let h = 1e-5;
        let sizes: Vec<usize> = m.params.blocks().iter().map(|b| b.len()).collect();
        for (b, &size) in sizes.iter().enumerate() {
            for k in 0..size {
                let mut plus = m.clone();
                plus.params.blocks_mut()[b][k] += h;
                let mut minus = m.clone();
                minus.params.blocks_mut()[b][k] -= h;
                numeric.push((loss(&plus, &batch) - loss(&minus, &batch)) / (2.0 * h));
            }
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        norm(&diff) / norm(&analytic).max(norm(&numeric))
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            let err = relative_gradient_error(seed);
            assert!(err <= 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = tiny(3, 4, 5);
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert_eq!(Seq2SeqModel::read(&mut &buf[..]).unwrap(), m);
        assert!(Seq2SeqModel::read(&mut &buf[..buf.len() - 8]).is_err());
        buf[0] = b'X';
        assert!(Seq2SeqModel::read(&mut &buf[..]).is_err());
    }

    #[test]
    fn detokenize_stops_at_eos() {
        let m = tiny(0, 3, 2);
        assert_eq!(m.detokenize(&[4, UNK_ID, 5, EOS_ID, 6]), "w0 <unk> w1");
        assert_eq!(m.detokenize(&[BOS_ID, PAD_ID, 6]), "w2");
    }

    proptest! {
        #[test]
        fn distributions_normalize(seed in any::<u64>(), words in 1usize..8, d in 1usize..9,
                                   x in proptest::collection::vec(0usize..12, 0..6),
                                   y in proptest::collection::vec(0usize..12, 0..6)) {
            let m = tiny(seed, words, d);
            let v = m.vocab.len();
            let x: Vec<usize> = x.into_iter().map(|i| i % v).collect();
            let y: Vec<usize> = y.into_iter().map(|i| i % v).collect();
            let p = m.next_token_dist(&x, &y).unwrap();
            prop_assert!(p.iter().all(|&q| q >= 0.0));
            prop_assert!((p.sum() - 1.0).abs() <= 1e-6);
            prop_assert_eq!(p, m.next_token_dist(&x, &y).unwrap());
        }
    }
}
