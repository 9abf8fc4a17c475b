use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::Serialize;

use super::{RetrievalError, Side, TextEncoder};
use crate::binio;
use crate::corpus::ResponseSet;
use crate::text;

const MAGIC: &[u8; 8] = b"RSRINDEX";
const VERSION: u32 = 1;

/// Reply vectors for a response set, precomputed under one set of encoder
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseIndex {
    responses: ResponseSet,
    vectors: Array2<f64>,
    params_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Suggestion {
    pub text: String,
    pub score: f64,
    /// Row in the response set.
    pub position: usize,
}

impl ResponseIndex {
    /// Encodes every reply with the reply tower. Replies are tokenized in
    /// the response set's language.
    pub fn build<E: TextEncoder>(encoder: &E, responses: ResponseSet) -> Self {
        let lang = responses.language().to_string();
        let rows: Vec<Array1<f64>> = responses
            .entries()
            .par_iter()
            .map(|e| encoder.encode(Side::Reply, &text::tokenize(&e.text, &lang)))
            .collect();
        let mut vectors = Array2::zeros((rows.len(), encoder.dim()));
        for (i, r) in rows.iter().enumerate() {
            vectors.row_mut(i).assign(r);
        }
        ResponseIndex {
            responses,
            vectors,
            params_hash: encoder.params_hash(),
        }
    }

    pub fn responses(&self) -> &ResponseSet {
        &self.responses
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn params_hash(&self) -> &str {
        &self.params_hash
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check_fresh<E: TextEncoder>(&self, encoder: &E) -> Result<(), RetrievalError> {
        let model = encoder.params_hash();
        if model != self.params_hash {
            return Err(RetrievalError::StaleIndex {
                index: self.params_hash.clone(),
                model,
            });
        }
        Ok(())
    }

    /// Scores of every response against an encoded message, in row order.
    pub fn scores(&self, message_vector: &Array1<f64>) -> Array1<f64> {
        self.vectors.dot(message_vector)
    }

    pub fn write<W: Write>(&self, out: &mut W) -> io::Result<()> {
        binio::write_header(out, MAGIC, VERSION)?;
        binio::write_str(out, &self.params_hash)?;
        binio::write_str(out, self.responses.language())?;
        binio::write_u64(out, self.responses.min_count() as u64)?;
        binio::write_u64(out, self.responses.max_size() as u64)?;
        binio::write_len(out, self.responses.len())?;
        for e in self.responses.entries() {
            binio::write_str(out, &e.text)?;
            binio::write_u64(out, e.count as u64)?;
        }
        binio::write_matrix(out, &self.vectors)
    }

    pub fn read<R: Read>(input: &mut R) -> io::Result<Self> {
        binio::read_header(input, MAGIC, VERSION)?;
        let params_hash = binio::read_str(input)?;
        let language = binio::read_str(input)?;
        let min_count = binio::read_u64(input)? as usize;
        let max_size = binio::read_u64(input)? as usize;
        let n = binio::read_u32(input)? as usize;
        let mut counts = Vec::with_capacity(n);
        for _ in 0..n {
            let text = binio::read_str(input)?;
            counts.push((text, binio::read_u64(input)? as usize));
        }
        let original: Vec<String> = counts.iter().map(|(t, _)| t.clone()).collect();
        let responses = ResponseSet::from_counts(counts, &language, min_count, max_size);
        if !responses.texts().eq(original.iter().map(String::as_str)) {
            return Err(binio::invalid(
                "index response rows are not in canonical order".into(),
            ));
        }
        let vectors = binio::read_matrix(input)?;
        if vectors.nrows() != n {
            return Err(binio::invalid(format!(
                "{} vectors for {n} responses",
                vectors.nrows()
            )));
        }
        Ok(ResponseIndex {
            responses,
            vectors,
            params_hash,
        })
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

/// Higher score first; equal scores keep response-set order.
fn ranks_before(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// The `k` highest-scoring responses for a tokenized message, by exact dot
/// products against every row. Fails if the index was built under other
/// parameters.
pub fn top_k<E: TextEncoder>(
    encoder: &E,
    index: &ResponseIndex,
    message: &[String],
    k: usize,
) -> Result<Vec<Suggestion>, RetrievalError> {
    index.check_fresh(encoder)?;
    let scores = index.scores(&encoder.encode(Side::Message, message));
    // Single pass keeping a sorted buffer of the best k seen so far.
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k.min(scores.len()) + 1);
    for (i, &s) in scores.iter().enumerate() {
        if best.len() == k && !best.last().is_some_and(|&last| ranks_before((s, i), last)) {
            continue;
        }
        let at = best.partition_point(|&b| ranks_before(b, (s, i)));
        best.insert(at, (s, i));
        best.truncate(k);
    }
    let entries = index.responses.entries();
    Ok(best
        .into_iter()
        .map(|(score, position)| Suggestion {
            text: entries[position].text.clone(),
            score,
            position,
        })
        .collect())
}
