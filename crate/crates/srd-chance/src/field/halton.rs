//! Unscrambled Halton sequence in prime bases.

/// Radical inverse of `index` in base `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let mut result = 0.0;
    let mut frac = 1.0 / base as f64;
    while index > 0 {
        result += (index % base) as f64 * frac;
        index /= base;
        frac /= base as f64;
    }
    result
}

/// First `k` primes (Halton bases).
pub fn first_primes(k: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(k);
    let mut candidate = 2u64;
    while primes.len() < k {
        if primes.iter().all(|&p| candidate % p != 0) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// The `i`-th Halton point in `(0,1)^k`. The sequence is 1-based here: the
/// all-zero point at index 0 is skipped so the inverse normal transform
/// never sees 0.
pub fn halton_point(i: u64, bases: &[u64], out: &mut [f64]) {
    debug_assert!(i >= 1);
    for (d, &b) in bases.iter().enumerate() {
        out[d] = radical_inverse(i, b);
    }
}
