use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::HarnessError;

/// One epoch in which every language contributes exactly as many examples
/// as the largest one: whole copies of a smaller set, then a seeded sample
/// without replacement for the remainder. The merged stream is shuffled.
pub fn oversample<T: Clone>(
    datasets: &BTreeMap<String, Vec<T>>,
    seed: u64,
) -> Result<Vec<T>, HarnessError> {
    if datasets.len() < 2 {
        return Err(HarnessError::Config(format!(
            "oversampling needs at least two languages, got {}",
            datasets.len()
        )));
    }
    if let Some((lang, _)) = datasets.iter().find(|(_, d)| d.is_empty()) {
        return Err(HarnessError::Data(format!(
            "no training pairs for language {lang:?}"
        )));
    }
    let target = datasets
        .values()
        .map(Vec::len)
        .max()
        .expect("non-empty map");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut merged = Vec::with_capacity(target * datasets.len());
    for data in datasets.values() {
        let n = data.len();
        for _ in 0..target / n {
            merged.extend(data.iter().cloned());
        }
        let mut extra = index::sample(&mut rng, n, target % n).into_vec();
        extra.sort_unstable();
        merged.extend(extra.into_iter().map(|i| data[i].clone()));
    }
    merged.shuffle(&mut rng);
    Ok(merged)
}
