//! Margin-distribution statistics over (positive, negative) score pairs.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::metrics::EvalError;

/// Histogram of margins (pos - neg) plus summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginHistogram {
    /// `counts.len() + 1` boundaries; bin i covers `[edges[i], edges[i+1])`,
    /// the last bin is right-inclusive.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Fraction of strictly negative margins.
    pub fraction_negative: f64,
    pub n: usize,
}

/// Bin the margins of aligned score pairs. Degenerate inputs (all margins
/// equal) produce a single occupied bin of width 1 around the value.
pub fn margin_stats(pos: &[f64], neg: &[f64], bins: usize) -> Result<MarginHistogram, EvalError> {
    if pos.is_empty() || pos.len() != neg.len() {
        return Err(EvalError::Empty("margin_stats needs aligned non-empty scores"));
    }
    let bins = bins.max(1);
    let margins: Vec<f64> = pos.iter().zip(neg).map(|(p, n)| p - n).collect();
    let lo = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = margins.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let edges: Vec<f64> = if lo == hi {
        vec![lo - 0.5, lo + 0.5]
    } else {
        let mut e: Vec<f64> = (0..=bins)
            .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
            .collect();
        // Pin the outer edges so the extreme margins always fall inside.
        e[0] = lo;
        e[bins] = hi;
        e
    };
    let nbins = edges.len() - 1;
    let mut counts = vec![0usize; nbins];
    for &m in &margins {
        for b in 0..nbins {
            let last = b == nbins - 1;
            if m >= edges[b] && (m < edges[b + 1] || (last && m <= edges[b + 1])) {
                counts[b] += 1;
                break;
            }
        }
    }

    let n = margins.len();
    let mean = margins.iter().sum::<f64>() / n as f64;
    let var = margins.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n as f64;
    let negative = margins.iter().filter(|&&m| m < 0.0).count();

    Ok(MarginHistogram {
        edges,
        counts,
        mean,
        std: var.sqrt(),
        fraction_negative: negative as f64 / n as f64,
        n,
    })
}

impl MarginHistogram {
    /// CSV export: `bin_low,bin_high,count` per line with a header.
    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(w, "bin_low,bin_high,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{},{}", self.edges[i], self.edges[i + 1], c)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fraction of pairs where pos > neg; ties count as incorrect.
pub fn pairwise_accuracy(pos: &[f64], neg: &[f64]) -> Result<f64, EvalError> {
    if pos.is_empty() || pos.len() != neg.len() {
        return Err(EvalError::Empty("pairwise_accuracy needs aligned non-empty scores"));
    }
    let correct = pos.iter().zip(neg).filter(|(p, n)| p > n).count();
    Ok(correct as f64 / pos.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_margins_single_bin_zero_std() {
        let pos = vec![2.0; 8];
        let neg = vec![0.5; 8];
        let h = margin_stats(&pos, &neg, 20).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.counts.iter().sum::<usize>(), 8);
        assert_eq!(h.std, 0.0);
        assert_eq!(h.mean, 1.5);
    }

    #[test]
    fn fraction_negative_counts() {
        // 98 positive margins, 2 negative.
        let mut pos = vec![1.0; 98];
        let mut neg = vec![0.0; 98];
        pos.extend([0.0, -1.0]);
        neg.extend([1.0, 0.5]);
        let h = margin_stats(&pos, &neg, 10).unwrap();
        assert!((h.fraction_negative - 0.02).abs() < 1e-12);
    }

    #[test]
    fn counts_match_brute_force_binning_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.gen_range(1..200);
            let pos: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let neg: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let bins = rng.gen_range(1..25);
            let h = margin_stats(&pos, &neg, bins).unwrap();

            let mut brute = vec![0usize; h.counts.len()];
            for (p, q) in pos.iter().zip(&neg) {
                let m = p - q;
                for b in 0..brute.len() {
                    let hi_ok = if b == brute.len() - 1 {
                        m <= h.edges[b + 1]
                    } else {
                        m < h.edges[b + 1]
                    };
                    if m >= h.edges[b] && hi_ok {
                        brute[b] += 1;
                        break;
                    }
                }
            }
            assert_eq!(h.counts, brute);
            assert_eq!(h.counts.iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn pairwise_accuracy_cases() {
        assert_eq!(pairwise_accuracy(&[2.0, 3.0], &[1.0, 0.0]).unwrap(), 1.0);
        // Ties count as incorrect.
        assert_eq!(pairwise_accuracy(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        let pos = vec![1.0, -1.0, 1.0, -1.0];
        let neg = vec![0.0; 4];
        assert_eq!(pairwise_accuracy(&pos, &neg).unwrap(), 0.5);
        assert!(pairwise_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn csv_export_shape() {
        let h = margin_stats(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        h.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "bin_low,bin_high,count");
        assert_eq!(lines.len(), 1 + h.counts.len());
    }
}
