//! Minimal radix-2 FFT.
//!
//! The spectral estimators only ever see power-of-two segment lengths, so a
//! dependency-free iterative Cooley–Tukey transform is all that is needed.

use num_complex::Complex64;

use crate::{Error, Result};

/// Returns true when `n` is a power of two (and nonzero).
pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// In-place radix-2 decimation-in-time FFT.
///
/// `data.len()` must be a power of two.
pub fn fft_in_place(data: &mut [Complex64]) -> Result<()> {
    let n = data.len();
    if !is_power_of_two(n) {
        return Err(Error::InvalidInput(format!(
            "fft length {n} is not a power of two"
        )));
    }
    if n == 1 {
        return Ok(());
    }
    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            data.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let wlen = Complex64::from_polar(1.0, ang);
        for chunk in data.chunks_mut(len) {
            let mut w = Complex64::new(1.0, 0.0);
            let half = len / 2;
            for k in 0..half {
                let u = chunk[k];
                let v = chunk[k + half] * w;
                chunk[k] = u + v;
                chunk[k + half] = u - v;
                w *= wlen;
            }
        }
        len <<= 1;
    }
    Ok(())
}

/// FFT of a real sequence, returning the full complex spectrum.
pub fn fft_real(x: &[f64]) -> Result<Vec<Complex64>> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force DFT used as the oracle for the fast transform.
    fn dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                (0..n)
                    .map(|j| {
                        let ang = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
                        x[j] * Complex64::from_polar(1.0, ang)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        let mut state = 0x1234_5678_u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for &n in &[1usize, 2, 8, 64, 256] {
            let x: Vec<Complex64> = (0..n).map(|_| Complex64::new(next(), next())).collect();
            let mut fast = x.clone();
            fft_in_place(&mut fast).unwrap();
            let slow = dft(&x);
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).norm() < 1e-9 * (n as f64).sqrt().max(1.0));
            }
        }
    }

    #[test]
    fn single_tone_peaks_at_its_bin() {
        let n = 1024;
        let k0 = 37;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * k0 as f64 * i as f64 / n as f64).sin())
            .collect();
        let spec = fft_real(&x).unwrap();
        let mags: Vec<f64> = spec.iter().take(n / 2).map(|c| c.norm()).collect();
        let peak = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, k0);
    }

    #[test]
    fn rejects_non_power_of_two() {
        let mut buf = vec![Complex64::new(0.0, 0.0); 12];
        assert!(fft_in_place(&mut buf).is_err());
    }
}
