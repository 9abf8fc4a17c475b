use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::binio;
use crate::optim::ParamBlocks;
use crate::vocab::Vocab;

/// Token every out-of-vocabulary word (and the empty input) maps to.
pub const UNK: &str = "<unk>";

const MAGIC: &[u8; 8] = b"RSDUALEN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Message,
    Reply,
}

/// Maps token sequences to fixed-width vectors. Anything implementing this
/// can back a [`super::ResponseIndex`].
pub trait TextEncoder: Sync {
    fn dim(&self) -> usize;
    fn encode(&self, side: Side, tokens: &[String]) -> Array1<f64>;
    /// Identifies the current parameter values.
    fn params_hash(&self) -> String;
}

/// One tower: `encode(x) = projection · mean(embeddings[x_t])`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    vocab: Vocab,
    embeddings: Array2<f64>,
    projection: Array2<f64>,
}

impl EncoderParams {
    pub fn new(
        vocab: Vocab,
        embeddings: Array2<f64>,
        projection: Array2<f64>,
    ) -> Result<Self, RetrievalError> {
        let d = embeddings.ncols();
        if embeddings.nrows() != vocab.len() {
            return Err(RetrievalError::Shape(format!(
                "embeddings have {} rows for a vocabulary of {}",
                embeddings.nrows(),
                vocab.len()
            )));
        }
        if projection.dim() != (d, d) {
            return Err(RetrievalError::Shape(format!(
                "projection is {:?}, expected ({d}, {d})",
                projection.dim()
            )));
        }
        if d == 0 {
            return Err(RetrievalError::Shape(
                "embedding width must be positive".into(),
            ));
        }
        if embeddings
            .iter()
            .chain(projection.iter())
            .any(|v| !v.is_finite())
        {
            return Err(RetrievalError::NonFinite("encoder parameters"));
        }
        Ok(EncoderParams {
            vocab,
            embeddings,
            projection,
        })
    }

    /// Entries drawn uniformly from `±sqrt(3/d)` (variance `1/d`).
    pub fn random<R: Rng>(vocab: Vocab, d: usize, rng: &mut R) -> Result<Self, RetrievalError> {
        let bound = (3.0 / d as f64).sqrt();
        let mut draw = |shape: (usize, usize)| {
            Array2::from_shape_fn(shape, |_| rng.random_range(-bound..bound))
        };
        let embeddings = draw((vocab.len(), d));
        let projection = draw((d, d));
        Self::new(vocab, embeddings, projection)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn embeddings(&self) -> &Array2<f64> {
        &self.embeddings
    }

    pub fn projection(&self) -> &Array2<f64> {
        &self.projection
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    /// Vocabulary ids; an empty sequence becomes the lone UNK id.
    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        if tokens.is_empty() {
            vec![self.vocab.unk()]
        } else {
            self.vocab.ids(tokens)
        }
    }

    pub fn mean_embedding(&self, ids: &[usize]) -> Array1<f64> {
        let mut mean = Array1::zeros(self.dim());
        for &id in ids {
            mean += &self.embeddings.row(id);
        }
        mean / ids.len() as f64
    }

    pub fn encode(&self, tokens: &[String]) -> Array1<f64> {
        self.projection.dot(&self.mean_embedding(&self.ids(tokens)))
    }

    fn write<W: Write>(&self, out: &mut W) -> io::Result<()> {
        binio::write_len(out, self.vocab.len())?;
        for t in self.vocab.tokens() {
            binio::write_str(out, t)?;
        }
        binio::write_matrix(out, &self.embeddings)?;
        binio::write_matrix(out, &self.projection)
    }

    fn read<R: Read>(input: &mut R, d: usize) -> io::Result<Self> {
        let n = binio::read_u32(input)? as usize;
        let tokens = (0..n)
            .map(|_| binio::read_str(input))
            .collect::<io::Result<Vec<_>>>()?;
        let vocab = Vocab::from_tokens(tokens, UNK)
            .ok_or_else(|| binio::invalid("vocabulary lacks UNK or repeats a token".into()))?;
        let embeddings = binio::read_matrix_shaped(input, n, d, "embeddings")?;
        let projection = binio::read_matrix_shaped(input, d, d, "projection")?;
        Self::new(vocab, embeddings, projection).map_err(|e| binio::invalid(e.to_string()))
    }
}

/// Which parameter blocks training leaves untouched.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrozenMask {
    pub message_embeddings: bool,
    pub message_projection: bool,
    pub reply_embeddings: bool,
    pub reply_projection: bool,
}

impl FrozenMask {
    /// Both embedding tables frozen, projections trainable.
    pub fn embeddings() -> Self {
        FrozenMask {
            message_embeddings: true,
            reply_embeddings: true,
            ..Default::default()
        }
    }

    /// In block order: message embeddings, message projection, reply
    /// embeddings, reply projection.
    pub fn blocks(&self) -> [bool; 4] {
        [
            self.message_embeddings,
            self.message_projection,
            self.reply_embeddings,
            self.reply_projection,
        ]
    }
}

/// Message tower Φx and reply tower Φy with separate parameters.
#[derive(Debug, Clone)]
pub struct DualEncoder {
    message: EncoderParams,
    reply: EncoderParams,
    hash: OnceLock<String>,
}

impl PartialEq for DualEncoder {
    fn eq(&self, other: &Self) -> bool {
        self.message == other.message && self.reply == other.reply
    }
}

impl DualEncoder {
    pub fn new(message: EncoderParams, reply: EncoderParams) -> Result<Self, RetrievalError> {
        if message.dim() != reply.dim() {
            return Err(RetrievalError::Shape(format!(
                "message width {} differs from reply width {}",
                message.dim(),
                reply.dim()
            )));
        }
        Ok(DualEncoder {
            message,
            reply,
            hash: OnceLock::new(),
        })
    }

    pub fn random(
        message_vocab: Vocab,
        reply_vocab: Vocab,
        d: usize,
        seed: u64,
    ) -> Result<Self, RetrievalError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let message = EncoderParams::random(message_vocab, d, &mut rng)?;
        let reply = EncoderParams::random(reply_vocab, d, &mut rng)?;
        Self::new(message, reply)
    }

    pub fn tower(&self, side: Side) -> &EncoderParams {
        match side {
            Side::Message => &self.message,
            Side::Reply => &self.reply,
        }
    }

    pub fn relevance(&self, message: &[String], reply: &[String]) -> f64 {
        self.message.encode(message).dot(&self.reply.encode(reply))
    }

    /// `Θ[i][j] = Φx(message_i) · Φy(reply_j)` for a batch of pairs.
    pub fn score_matrix(
        &self,
        pairs: &[(Vec<String>, Vec<String>)],
    ) -> Result<super::ScoreMatrix, RetrievalError> {
        let d = self.dim();
        let mut x = Array2::zeros((pairs.len(), d));
        let mut y = Array2::zeros((pairs.len(), d));
        for (i, (m, r)) in pairs.iter().enumerate() {
            x.row_mut(i).assign(&self.message.encode(m));
            y.row_mut(i).assign(&self.reply.encode(r));
        }
        super::ScoreMatrix::new(x.dot(&y.t()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn write<W: Write>(&self, out: &mut W) -> io::Result<()> {
        binio::write_header(out, MAGIC, VERSION)?;
        binio::write_len(out, self.dim())?;
        self.message.write(out)?;
        self.reply.write(out)
    }

    pub fn read<R: Read>(input: &mut R) -> io::Result<Self> {
        binio::read_header(input, MAGIC, VERSION)?;
        let d = binio::read_u32(input)? as usize;
        let message = EncoderParams::read(input, d)?;
        let reply = EncoderParams::read(input, d)?;
        Self::new(message, reply).map_err(|e| binio::invalid(e.to_string()))
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

impl TextEncoder for DualEncoder {
    fn dim(&self) -> usize {
        self.message.dim()
    }

    fn encode(&self, side: Side, tokens: &[String]) -> Array1<f64> {
        self.tower(side).encode(tokens)
    }

    /// SHA-256 of the serialized parameters, cached until the next mutation.
    fn params_hash(&self) -> String {
        self.hash
            .get_or_init(|| binio::sha256_hex(&self.to_bytes()))
            .clone()
    }
}

fn flat(m: &Array2<f64>) -> &[f64] {
    m.as_slice().expect("parameter matrices are contiguous")
}

fn flat_mut(m: &mut Array2<f64>) -> &mut [f64] {
    m.as_slice_mut().expect("parameter matrices are contiguous")
}

impl ParamBlocks for DualEncoder {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![
            flat(&self.message.embeddings),
            flat(&self.message.projection),
            flat(&self.reply.embeddings),
            flat(&self.reply.projection),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.hash = OnceLock::new();
        vec![
            flat_mut(&mut self.message.embeddings),
            flat_mut(&mut self.message.projection),
            flat_mut(&mut self.reply.embeddings),
            flat_mut(&mut self.reply.projection),
        ]
    }
}

/// Gradients shaped like a [`DualEncoder`]'s parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGradients {
    pub message_embeddings: Array2<f64>,
    pub message_projection: Array2<f64>,
    pub reply_embeddings: Array2<f64>,
    pub reply_projection: Array2<f64>,
}

impl DualGradients {
    pub fn zeros_like(model: &DualEncoder) -> Self {
        DualGradients {
            message_embeddings: Array2::zeros(model.message.embeddings.dim()),
            message_projection: Array2::zeros(model.message.projection.dim()),
            reply_embeddings: Array2::zeros(model.reply.embeddings.dim()),
            reply_projection: Array2::zeros(model.reply.projection.dim()),
        }
    }

    pub fn apply_mask(&mut self, frozen: &FrozenMask) {
        for (block, frozen) in self.blocks_mut().into_iter().zip(frozen.blocks()) {
            if frozen {
                block.fill(0.0);
            }
        }
    }
}

impl ParamBlocks for DualGradients {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![
            flat(&self.message_embeddings),
            flat(&self.message_projection),
            flat(&self.reply_embeddings),
            flat(&self.reply_projection),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            flat_mut(&mut self.message_embeddings),
            flat_mut(&mut self.message_projection),
            flat_mut(&mut self.reply_embeddings),
            flat_mut(&mut self.reply_projection),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn vocab(words: &[&str]) -> Vocab {
        let mut tokens = vec![UNK.to_string()];
        tokens.extend(words.iter().map(|w| w.to_string()));
        Vocab::from_tokens(tokens, UNK).unwrap()
    }

    fn toy() -> EncoderParams {
        // rows: <unk>, a, b, c
        let emb = array![[0.5, 0.5], [1.0, 0.0], [0.0, 2.0], [3.0, 1.0]];
        let proj = array![[1.0, 2.0], [0.0, -1.0]];
        EncoderParams::new(vocab(&["a", "b", "c"]), emb, proj).unwrap()
    }

    #[test]
    fn zero_embeddings_give_zero_vector() {
        let p = EncoderParams::new(vocab(&["a"]), Array2::zeros((2, 3)), Array2::eye(3)).unwrap();
        assert_eq!(p.encode(&s(&["a", "zz"])), Array1::<f64>::zeros(3));
    }

    #[test]
    fn single_token_is_projected_row() {
        let p = toy();
        assert_eq!(p.encode(&s(&["c"])), array![5.0, -1.0]);
    }

    #[test]
    fn three_token_hand_example() {
        // mean of a, b, c = (4/3, 1); projection -> (4/3 + 2, -1)
        let got = toy().encode(&s(&["a", "b", "c"]));
        let want = array![4.0 / 3.0 + 2.0, -1.0];
        assert!((got - want).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn unknown_and_empty_use_unk_row() {
        let p = toy();
        assert_eq!(p.encode(&[]), array![1.5, -0.5]);
        assert_eq!(p.encode(&s(&["nope"])), p.encode(&[]));
        // "a" plus an unknown word averages with the UNK row.
        assert_eq!(p.encode(&s(&["a", "nope"])), array![0.75 + 0.5, -0.25]);
    }

    #[test]
    fn relevance_is_dot_product() {
        let m = EncoderParams::new(
            vocab(&["x"]),
            array![[0.0, 0.0], [1.0, 0.0]],
            Array2::eye(2),
        )
        .unwrap();
        let r = EncoderParams::new(
            vocab(&["y", "z"]),
            array![[0.0, 0.0], [0.0, 1.0], [3.0, 4.0]],
            Array2::eye(2),
        )
        .unwrap();
        let model = DualEncoder::new(m, r).unwrap();
        assert_eq!(model.relevance(&s(&["x"]), &s(&["y"])), 0.0);
        assert_eq!(model.relevance(&s(&["x"]), &s(&["z"])), 3.0);
        let same = DualEncoder::new(
            EncoderParams::new(
                vocab(&["v"]),
                array![[0.0, 0.0], [3.0, 4.0]],
                Array2::eye(2),
            )
            .unwrap(),
            EncoderParams::new(
                vocab(&["v"]),
                array![[0.0, 0.0], [3.0, 4.0]],
                Array2::eye(2),
            )
            .unwrap(),
        )
        .unwrap();
        assert_eq!(same.relevance(&s(&["v"]), &s(&["v"])), 25.0);
    }

    #[test]
    fn shape_and_finiteness_checks() {
        assert!(EncoderParams::new(vocab(&["a"]), Array2::zeros((3, 2)), Array2::eye(2)).is_err());
        assert!(EncoderParams::new(vocab(&["a"]), Array2::zeros((2, 2)), Array2::eye(3)).is_err());
        let nan = array![[0.0, f64::NAN], [0.0, 0.0]];
        assert!(EncoderParams::new(vocab(&["a"]), nan, Array2::eye(2)).is_err());
        let narrow =
            EncoderParams::new(vocab(&["a"]), Array2::zeros((2, 1)), Array2::eye(1)).unwrap();
        assert!(DualEncoder::new(toy(), narrow).is_err());
    }

    #[test]
    fn serialization_roundtrip_and_hash() {
        let model = DualEncoder::random(vocab(&["a", "b"]), vocab(&["c"]), 5, 9).unwrap();
        let bytes = model.to_bytes();
        let back = DualEncoder::read(&mut &bytes[..]).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.params_hash(), model.params_hash());
        let mut changed = model.clone();
        changed.blocks_mut()[1][0] += 1.0;
        assert_ne!(changed.params_hash(), model.params_hash());
        assert!(DualEncoder::read(&mut &bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn random_init_is_seeded_and_bounded() {
        let a = DualEncoder::random(vocab(&["a"]), vocab(&["b"]), 4, 1).unwrap();
        let b = DualEncoder::random(vocab(&["a"]), vocab(&["b"]), 4, 1).unwrap();
        let c = DualEncoder::random(vocab(&["a"]), vocab(&["b"]), 4, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (3.0f64 / 4.0).sqrt();
        assert!(a
            .blocks()
            .iter()
            .flat_map(|b| b.iter())
            .all(|v| v.abs() <= bound));
    }
}
