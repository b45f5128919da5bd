//! Cross-view disagreement: cosine similarity between the two views' score
//! rows, thresholded into an uncertainty mask.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::ScoreMatrix;

/// Cosine similarity of two non-negative vectors; 0 when either has zero norm.
pub fn cosine_similarity(f: &[f64], g: &[f64]) -> Result<f64> {
    if f.len() != g.len() {
        return Err(Error::shape(format!("vectors of length {} and {}", f.len(), g.len())));
    }
    if f.iter().chain(g).any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("cosine similarity needs finite non-negative entries"));
    }
    Ok(cosine_unchecked(f, g))
}

fn cosine_unchecked(f: &[f64], g: &[f64]) -> f64 {
    let (mut dot, mut ff, mut gg) = (0.0, 0.0, 0.0);
    for (a, b) in f.iter().zip(g) {
        dot += a * b;
        ff += a * a;
        gg += b * b;
    }
    if ff == 0.0 || gg == 0.0 {
        return 0.0;
    }
    (dot / (ff.sqrt() * gg.sqrt())).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMask {
    pub uncertain: Vec<bool>,
    pub similarity: Vec<f64>,
    pub tau: f64,
}

impl UncertaintyMask {
    pub fn len(&self) -> usize {
        self.uncertain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uncertain.is_empty()
    }

    pub fn uncertain_indices(&self) -> Vec<usize> {
        self.uncertain.iter().enumerate().filter(|(_, &u)| u).map(|(i, _)| i).collect()
    }

    pub fn uncertain_count(&self) -> usize {
        self.uncertain.iter().filter(|&&u| u).count()
    }

    pub fn uncertain_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.uncertain_count() as f64 / self.len() as f64
        }
    }
}

/// Flags point `i` as uncertain when `s(F_i, G_i) <= tau`.
pub fn uncertainty_mask(f: &ScoreMatrix, g: &ScoreMatrix, tau: f64) -> Result<UncertaintyMask> {
    f.check_same_shape(g)?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau {tau} outside [0, 1]")));
    }
    let similarity: Vec<f64> = f.iter_rows().zip(g.iter_rows()).map(|(a, b)| cosine_unchecked(a, b)).collect();
    let uncertain = similarity.iter().map(|&s| s <= tau).collect();
    Ok(UncertaintyMask { uncertain, similarity, tau })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bin_lo,bin_hi,count` rows under a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (j, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[j], self.edges[j + 1], c));
        }
        out
    }
}

/// Equal-width bins over [0, 1]; the last bin is closed on the right.
pub fn similarity_histogram(mask: &UncertaintyMask, num_bins: usize) -> Result<Histogram> {
    if num_bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let mut counts = vec![0usize; num_bins];
    for &s in &mask.similarity {
        let b = ((s * num_bins as f64).floor().max(0.0) as usize).min(num_bins - 1);
        counts[b] += 1;
    }
    let edges = (0..=num_bins).map(|j| j as f64 / num_bins as f64).collect();
    Ok(Histogram { edges, counts })
}

/// Draws `batch_size` indices from `candidates` uniformly without replacement,
/// topping up with replacement when there are fewer candidates than slots.
pub fn sample_from(candidates: &[usize], batch_size: usize, seed: u64) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::Empty("no uncertain points to sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = batch_size.min(candidates.len());
    let mut batch: Vec<usize> =
        index::sample(&mut rng, candidates.len(), take).into_iter().map(|j| candidates[j]).collect();
    while batch.len() < batch_size {
        batch.push(candidates[rng.random_range(0..candidates.len())]);
    }
    Ok(batch)
}

pub fn sample_training_batch(mask: &UncertaintyMask, batch_size: usize, seed: u64) -> Result<Vec<usize>> {
    sample_from(&mask.uncertain_indices(), batch_size, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_fixtures() {
        assert_eq!(cosine_similarity(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 0.0);
        // <f,g> = 0.56, |f| = 0.82462, |g| = 0.72111
        let s = cosine_similarity(&[0.8, 0.2], &[0.6, 0.4]).unwrap();
        assert!((s - 0.9417).abs() < 1e-4, "{s}");
        assert!((s - 0.56 / (0.68f64.sqrt() * 0.52f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors_and_zero_norm() {
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
        assert!(cosine_similarity(&[-0.1, 1.1], &[0.5, 0.5]).is_err());
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[0.5, 0.5]).unwrap(), 0.0);
    }

    fn one_hot_pair() -> (ScoreMatrix, ScoreMatrix) {
        (
            ScoreMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.2, 0.5, 0.3]]).unwrap(),
            ScoreMatrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.2, 0.5, 0.3]]).unwrap(),
        )
    }

    #[test]
    fn mask_rules() {
        let (f, g) = one_hot_pair();
        let m = uncertainty_mask(&f, &f, 0.85).unwrap();
        assert!(m.uncertain.iter().all(|u| !u));
        let m = uncertainty_mask(&f, &g, 1.0).unwrap();
        assert!(m.uncertain.iter().all(|&u| u));
        let m = uncertainty_mask(&f, &g, 0.85).unwrap();
        assert_eq!(m.uncertain, vec![true, false]);
        assert!(uncertainty_mask(&f, &g, 1.5).is_err());
        let short = ScoreMatrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(uncertainty_mask(&f, &short, 0.5).is_err());
    }

    fn mask_with(similarity: Vec<f64>) -> UncertaintyMask {
        UncertaintyMask { uncertain: similarity.iter().map(|&s| s <= 0.85).collect(), similarity, tau: 0.85 }
    }

    #[test]
    fn histogram_fixtures() {
        let h = similarity_histogram(&mask_with(vec![0.0, 0.5, 0.9, 1.0]), 2).unwrap();
        assert_eq!(h.counts, vec![1, 3]);
        let h = similarity_histogram(&mask_with(vec![1.0; 7]), 10).unwrap();
        assert_eq!(h.counts[9], 7);
        assert!(similarity_histogram(&mask_with(vec![]), 0).is_err());
        assert!(h.to_csv().starts_with("bin_lo,bin_hi,count\n0,0.1,0\n"));
    }

    #[test]
    fn batch_sampling() {
        let m = UncertaintyMask {
            uncertain: vec![false, true, false, true, true],
            similarity: vec![1.0, 0.1, 1.0, 0.2, 0.3],
            tau: 0.85,
        };
        let mut b = sample_training_batch(&m, 3, 1).unwrap();
        b.sort();
        assert_eq!(b, vec![1, 3, 4]);

        let m2 = UncertaintyMask { uncertain: vec![true, false, true], similarity: vec![0.0, 1.0, 0.0], tau: 0.5 };
        let b = sample_training_batch(&m2, 5, 2).unwrap();
        assert_eq!(b.len(), 5);
        assert!(b.iter().all(|&i| i == 0 || i == 2));

        assert_eq!(sample_training_batch(&m, 2, 9).unwrap(), sample_training_batch(&m, 2, 9).unwrap());
        let none = UncertaintyMask { uncertain: vec![false], similarity: vec![1.0], tau: 0.5 };
        assert!(sample_training_batch(&none, 1, 0).is_err());
    }

    fn vec_pair(k: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (prop::collection::vec(0.0f64..1.0, k), prop::collection::vec(0.0f64..1.0, k))
    }

    proptest! {
        #[test]
        fn scale_invariant_and_symmetric((f, g) in vec_pair(6), a in 0.01f64..100.0, b in 0.01f64..100.0) {
            let s = cosine_similarity(&f, &g).unwrap();
            prop_assert_eq!(s, cosine_similarity(&g, &f).unwrap());
            let fa: Vec<f64> = f.iter().map(|v| v * a).collect();
            let gb: Vec<f64> = g.iter().map(|v| v * b).collect();
            prop_assert!((cosine_similarity(&fa, &gb).unwrap() - s).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn mask_monotone_in_tau(rows in prop::collection::vec(vec_pair(4), 1..30), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let norm = |v: &Vec<f64>| { let s: f64 = v.iter().sum::<f64>() + 1e-3; v.iter().map(|x| (x + 1e-3 / 4.0) / s).collect::<Vec<_>>() };
            let f = ScoreMatrix::from_rows(&rows.iter().map(|(a, _)| norm(a)).collect::<Vec<_>>()).unwrap();
            let g = ScoreMatrix::from_rows(&rows.iter().map(|(_, b)| norm(b)).collect::<Vec<_>>()).unwrap();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let m_lo = uncertainty_mask(&f, &g, lo).unwrap();
            let m_hi = uncertainty_mask(&f, &g, hi).unwrap();
            for (a, b) in m_lo.uncertain.iter().zip(&m_hi.uncertain) {
                prop_assert!(!a || *b);
            }
            let h = similarity_histogram(&m_lo, 7).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<usize>(), rows.len());
        }
    }
}
