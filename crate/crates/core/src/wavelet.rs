//! Multi-level discrete wavelet transform with periodic boundary handling.
//!
//! Conventions (fixed so that tests are bit-reproducible):
//! - Analysis is correlation against the filter with even-index downsampling:
//!   `approx[i] = Σ_k g[k]·x[(2i+k) mod T]`, and likewise `detail` with `h`.
//! - Synthesis is the exact adjoint of analysis; for the orthonormal families
//!   here the adjoint is the inverse, so reconstruction is perfect.
//! - Multi-level analysis re-decomposes the approximation, producing the
//!   ordered coefficient sets `[approx_L, detail_L, detail_{L-1}, ..., detail_1]`.

use crate::error::{Error, Result};

/// Supported orthonormal filter families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum WaveletFamily {
    Haar,
    Db2,
}

impl WaveletFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            WaveletFamily::Haar => "haar",
            WaveletFamily::Db2 => "db2",
        }
    }
}

impl std::str::FromStr for WaveletFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haar" => Ok(WaveletFamily::Haar),
            "db2" => Ok(WaveletFamily::Db2),
            other => Err(Error::Usage(format!(
                "unknown wavelet family {other:?} (expected haar or db2)"
            ))),
        }
    }
}

const SQRT_2_INV: f64 = std::f64::consts::FRAC_1_SQRT_2;

// Daubechies-2 lowpass taps: ((1±√3), (3±√3)) / (4√2).
const DB2_LOWPASS: [f64; 4] = [
    0.48296291314469025,
    0.8365163037378079,
    0.22414386804185735,
    -0.12940952255092145,
];

/// Orthonormal analysis filter pair.
///
/// The highpass is derived from the lowpass by the quadrature-mirror
/// relation `h[k] = (-1)^k · g[len-1-k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilter {
    family: WaveletFamily,
    lowpass: Vec<f64>,
    highpass: Vec<f64>,
}

impl WaveletFilter {
    pub fn new(family: WaveletFamily) -> Self {
        let lowpass: Vec<f64> = match family {
            WaveletFamily::Haar => vec![SQRT_2_INV, SQRT_2_INV],
            WaveletFamily::Db2 => DB2_LOWPASS.to_vec(),
        };
        let highpass = quadrature_mirror(&lowpass);
        WaveletFilter {
            family,
            lowpass,
            highpass,
        }
    }

    pub fn family(&self) -> WaveletFamily {
        self.family
    }

    pub fn len(&self) -> usize {
        self.lowpass.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lowpass(&self) -> &[f64] {
        &self.lowpass
    }

    pub fn highpass(&self) -> &[f64] {
        &self.highpass
    }

    /// Selftest hook: returns a copy with `lowpass[0]` shifted by `delta`,
    /// breaking orthonormality so reconstruction suites must fail.
    #[doc(hidden)]
    pub fn perturbed(mut self, delta: f64) -> Self {
        self.lowpass[0] += delta;
        self.highpass = quadrature_mirror(&self.lowpass);
        self
    }
}

fn quadrature_mirror(lowpass: &[f64]) -> Vec<f64> {
    let n = lowpass.len();
    (0..n)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * lowpass[n - 1 - k]
        })
        .collect()
}

/// Ordered coefficient sets of a multi-level analysis.
///
/// `sets[0]` is the level-L approximation, `sets[1]` the level-L detail,
/// and each following set is the detail of the next-shallower level, twice
/// as long as its predecessor.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoefficients {
    levels: usize,
    sets: Vec<Vec<f64>>,
    original_length: usize,
}

impl WaveletCoefficients {
    pub fn new(levels: usize, sets: Vec<Vec<f64>>, original_length: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Precondition("levels must be >= 1".into()));
        }
        if sets.len() != levels + 1 {
            return Err(Error::Precondition(format!(
                "expected {} coefficient sets for {} levels, got {}",
                levels + 1,
                levels,
                sets.len()
            )));
        }
        let expected = segment_lengths(original_length, levels)?;
        for (i, (set, want)) in sets.iter().zip(&expected).enumerate() {
            if set.len() != *want {
                return Err(Error::Precondition(format!(
                    "coefficient set {} has length {}, expected {}",
                    i,
                    set.len(),
                    want
                )));
            }
        }
        Ok(WaveletCoefficients {
            levels,
            sets,
            original_length,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn original_length(&self) -> usize {
        self.original_length
    }

    pub fn sets(&self) -> &[Vec<f64>] {
        &self.sets
    }

    pub fn set_lengths(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }

    /// Flattens the sets back into one vector, preserving order.
    pub fn concat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.original_length);
        for set in &self.sets {
            out.extend_from_slice(set);
        }
        out
    }

    pub fn total_energy(&self) -> f64 {
        self.sets
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum()
    }
}

/// Per-set lengths `[T/2^L, T/2^L, T/2^{L-1}, ..., T/2]` for a length-T signal.
pub fn segment_lengths(total: usize, levels: usize) -> Result<Vec<usize>> {
    if levels == 0 {
        return Err(Error::Precondition("levels must be >= 1".into()));
    }
    let divisor = 1usize << levels;
    if total == 0 || total % divisor != 0 {
        return Err(Error::Precondition(format!(
            "length {total} is not divisible by 2^{levels}"
        )));
    }
    let mut lengths = Vec::with_capacity(levels + 1);
    lengths.push(total / divisor);
    for level in (1..=levels).rev() {
        lengths.push(total / (1usize << level));
    }
    Ok(lengths)
}

/// One analysis step: periodic correlation with each filter, keeping even offsets.
pub fn dwt_single_level(x: &[f64], filter: &WaveletFilter) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = x.len();
    if t % 2 != 0 {
        return Err(Error::Length(format!(
            "signal length {t} must be even for single-level analysis"
        )));
    }
    if t < filter.len() {
        return Err(Error::Length(format!(
            "signal length {t} shorter than filter length {}",
            filter.len()
        )));
    }
    let half = t / 2;
    let g = filter.lowpass();
    let h = filter.highpass();
    let mut approx = vec![0.0; half];
    let mut detail = vec![0.0; half];
    for i in 0..half {
        let mut a = 0.0;
        let mut d = 0.0;
        for (k, (&gk, &hk)) in g.iter().zip(h).enumerate() {
            let v = x[(2 * i + k) % t];
            a += gk * v;
            d += hk * v;
        }
        approx[i] = a;
        detail[i] = d;
    }
    Ok((approx, detail))
}

/// One synthesis step: exact adjoint of [`dwt_single_level`].
pub fn idwt_single_level(
    approx: &[f64],
    detail: &[f64],
    filter: &WaveletFilter,
) -> Result<Vec<f64>> {
    if approx.len() != detail.len() {
        return Err(Error::Length(format!(
            "approximation length {} != detail length {}",
            approx.len(),
            detail.len()
        )));
    }
    let half = approx.len();
    let t = 2 * half;
    if t < filter.len() {
        return Err(Error::Length(format!(
            "output length {t} shorter than filter length {}",
            filter.len()
        )));
    }
    let g = filter.lowpass();
    let h = filter.highpass();
    let mut out = vec![0.0; t];
    for i in 0..half {
        for (k, (&gk, &hk)) in g.iter().zip(h).enumerate() {
            out[(2 * i + k) % t] += gk * approx[i] + hk * detail[i];
        }
    }
    Ok(out)
}

/// L-level analysis: the approximation is re-decomposed at every level.
pub fn dwt_multilevel(
    x: &[f64],
    levels: usize,
    filter: &WaveletFilter,
) -> Result<WaveletCoefficients> {
    let t = x.len();
    if levels == 0 {
        return Err(Error::Precondition("levels must be >= 1".into()));
    }
    if t == 0 || t % (1usize << levels) != 0 {
        return Err(Error::Precondition(format!(
            "signal length {t} is not divisible by 2^{levels}"
        )));
    }
    let mut details: Vec<Vec<f64>> = Vec::with_capacity(levels);
    let mut current = x.to_vec();
    for _ in 0..levels {
        let (approx, detail) = dwt_single_level(&current, filter)?;
        details.push(detail);
        current = approx;
    }
    let mut sets = Vec::with_capacity(levels + 1);
    sets.push(current);
    while let Some(detail) = details.pop() {
        sets.push(detail);
    }
    WaveletCoefficients::new(levels, sets, t)
}

/// Inverse of [`dwt_multilevel`]: reconstructs bottom-up from level L.
pub fn idwt_multilevel(c: &WaveletCoefficients, filter: &WaveletFilter) -> Result<Vec<f64>> {
    let mut current = c.sets()[0].clone();
    for detail in &c.sets()[1..] {
        current = idwt_single_level(&current, detail, filter)?;
    }
    Ok(current)
}

/// Partitions a flat vector into the coefficient sets a length-`horizon`
/// reconstruction expects, preserving order.
pub fn split_wave(flat: &[f64], horizon: usize, levels: usize) -> Result<WaveletCoefficients> {
    if flat.len() != horizon {
        return Err(Error::Precondition(format!(
            "flat vector length {} != horizon {horizon}",
            flat.len()
        )));
    }
    let lengths = segment_lengths(horizon, levels)?;
    let mut sets = Vec::with_capacity(lengths.len());
    let mut offset = 0;
    for len in lengths {
        sets.push(flat[offset..offset + len].to_vec());
        offset += len;
    }
    WaveletCoefficients::new(levels, sets, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn haar() -> WaveletFilter {
        WaveletFilter::new(WaveletFamily::Haar)
    }

    fn db2() -> WaveletFilter {
        WaveletFilter::new(WaveletFamily::Db2)
    }

    #[test]
    fn filters_are_orthonormal() {
        for f in [haar(), db2()] {
            let g = f.lowpass();
            let h = f.highpass();
            let dc: f64 = g.iter().sum();
            assert!((dc - std::f64::consts::SQRT_2).abs() < 1e-12, "{:?}", f.family());
            let gg: f64 = g.iter().map(|v| v * v).sum();
            assert!((gg - 1.0).abs() < 1e-12);
            let gh: f64 = g.iter().zip(h).map(|(a, b)| a * b).sum();
            assert!(gh.abs() < 1e-12);
            for (k, &hk) in h.iter().enumerate() {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                assert_eq!(hk, sign * g[g.len() - 1 - k]);
            }
        }
    }

    #[test]
    fn haar_constant_signal_has_zero_detail() {
        let (approx, detail) = dwt_single_level(&[1.0, 1.0, 1.0, 1.0], &haar()).unwrap();
        for a in &approx {
            assert!((a - std::f64::consts::SQRT_2).abs() < 1e-12);
        }
        for d in &detail {
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn haar_ramp_matches_hand_evaluation() {
        let (approx, detail) = dwt_single_level(&[1.0, 2.0, 3.0, 4.0], &haar()).unwrap();
        assert!((approx[0] - 3.0 * SQRT_2_INV).abs() < 1e-12);
        assert!((approx[1] - 7.0 * SQRT_2_INV).abs() < 1e-12);
        assert!((detail[0] + SQRT_2_INV).abs() < 1e-12);
        assert!((detail[1] + SQRT_2_INV).abs() < 1e-12);
    }

    #[test]
    fn single_level_preserves_energy() {
        let x: Vec<f64> = (0..32).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        for f in [haar(), db2()] {
            let (a, d) = dwt_single_level(&x, &f).unwrap();
            let in_e: f64 = x.iter().map(|v| v * v).sum();
            let out_e: f64 = a.iter().chain(&d).map(|v| v * v).sum();
            assert!((in_e - out_e).abs() < 1e-10);
        }
    }

    #[test]
    fn odd_or_short_signals_are_rejected() {
        assert!(dwt_single_level(&[1.0, 2.0, 3.0], &haar()).is_err());
        assert!(dwt_single_level(&[1.0, 2.0], &db2()).is_err());
    }

    #[test]
    fn idwt_inverts_constant_case() {
        let s = std::f64::consts::SQRT_2;
        let x = idwt_single_level(&[s, s], &[0.0, 0.0], &haar()).unwrap();
        for v in &x {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_approx_coefficient_synthesizes_lowpass_atom() {
        let x = idwt_single_level(&[1.0, 0.0], &[0.0, 0.0], &haar()).unwrap();
        assert!((x[0] - SQRT_2_INV).abs() < 1e-12);
        assert!((x[1] - SQRT_2_INV).abs() < 1e-12);
        assert!(x[2].abs() < 1e-12 && x[3].abs() < 1e-12);
    }

    #[test]
    fn multilevel_lengths_follow_halving_rule() {
        let x = vec![0.5; 96];
        let c = dwt_multilevel(&x, 2, &haar()).unwrap();
        assert_eq!(c.set_lengths(), vec![24, 24, 48]);
        let c3 = dwt_multilevel(&x, 3, &haar()).unwrap();
        assert_eq!(c3.set_lengths(), vec![12, 12, 24, 48]);
        let c1 = dwt_multilevel(&vec![0.0; 8], 1, &haar()).unwrap();
        assert_eq!(c1.set_lengths(), vec![4, 4]);
    }

    #[test]
    fn multilevel_requires_divisibility() {
        assert!(dwt_multilevel(&vec![0.0; 40], 4, &haar()).is_err());
        assert!(dwt_multilevel(&vec![0.0; 10], 2, &haar()).is_err());
    }

    #[test]
    fn multilevel_roundtrip_and_parseval() {
        let x: Vec<f64> = (0..96)
            .map(|i| (i as f64 * 0.37).sin() + 0.3 * (i as f64 * 0.05).cos())
            .collect();
        for f in [haar(), db2()] {
            for levels in 1..=3 {
                let c = dwt_multilevel(&x, levels, &f).unwrap();
                let in_e: f64 = x.iter().map(|v| v * v).sum();
                assert!((c.total_energy() - in_e).abs() < 1e-9);
                let back = idwt_multilevel(&c, &f).unwrap();
                for (a, b) in x.iter().zip(&back) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn all_zero_coefficients_reconstruct_zero() {
        let c = split_wave(&vec![0.0; 16], 16, 2).unwrap();
        let back = idwt_multilevel(&c, &db2()).unwrap();
        assert!(back.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn split_wave_lengths_and_partition() {
        let flat: Vec<f64> = (0..96).map(|i| i as f64).collect();
        let c = split_wave(&flat, 96, 2).unwrap();
        assert_eq!(c.set_lengths(), vec![24, 24, 48]);
        let c3 = split_wave(&flat, 96, 3).unwrap();
        assert_eq!(c3.set_lengths(), vec![12, 12, 24, 48]);
        assert_eq!(c3.concat(), flat);
        let c1 = split_wave(&vec![1.0; 8], 8, 1).unwrap();
        assert_eq!(c1.set_lengths(), vec![4, 4]);
        assert!(split_wave(&flat, 96, 6).is_err());
    }

    #[test]
    fn perturbed_filter_breaks_reconstruction() {
        let f = haar().perturbed(1e-3);
        let x: Vec<f64> = (0..32).map(|i| (i as f64 * 0.9).cos()).collect();
        let c = dwt_multilevel(&x, 2, &f).unwrap();
        let back = idwt_multilevel(&c, &f).unwrap();
        let err = x
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(err > 1e-9);
    }
}
