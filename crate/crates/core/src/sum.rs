//! Pairwise (tree) summation.
//!
//! Every mean, trace and entropy sum in the crate goes through these helpers so
//! results depend only on element order, never on scheduling.

const BLOCK: usize = 8;

/// Pairwise sum of a slice.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= BLOCK {
        return values.iter().fold(0.0, |acc, v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise sum of `term(i)` for `i in 0..len`.
pub fn pairwise_sum_by<F>(len: usize, term: F) -> f64
where
    F: Fn(usize) -> f64,
{
    fn go<F: Fn(usize) -> f64>(lo: usize, hi: usize, term: &F) -> f64 {
        if hi - lo <= BLOCK {
            return (lo..hi).fold(0.0, |acc, i| acc + term(i));
        }
        let mid = lo + (hi - lo) / 2;
        go(lo, mid, term) + go(mid, hi, term)
    }
    go(0, len, &term)
}

/// Pairwise mean; `NaN` for an empty slice.
pub fn pairwise_mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_and_empty() {
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum(&[1.0, 2.0, 3.0]), 6.0);
    }

    #[test]
    fn closure_form_matches_slice_form_bitwise() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin() * 1e-3 + 1.0 / (i as f64 + 1.0)).collect();
        assert_eq!(
            pairwise_sum(&v).to_bits(),
            pairwise_sum_by(v.len(), |i| v[i]).to_bits()
        );
    }

    #[test]
    fn beats_naive_on_cancellation_prone_input() {
        let v = vec![0.1_f64; 1 << 20];
        let exact = 0.1 * (1u64 << 20) as f64;
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - exact).abs() <= (naive - exact).abs());
    }
}
