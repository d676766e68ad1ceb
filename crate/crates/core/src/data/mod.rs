//! Dataset handling: chronological splitting, window sampling, scaling,
//! metrics, and the padding that services the wavelet divisibility rules.

mod csvio;

pub use csvio::{load_csv, write_forecast_csv, ForecastRecord, IngestReport, LoadOptions, NanPolicy};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rngutil;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A multivariate series: `values` is `T×N` (one row per timestamp).
#[derive(Debug, Clone)]
pub struct TimeSeriesDataset {
    pub name: String,
    pub timestamps: Option<Vec<String>>,
    pub values: Tensor,
    pub variate_names: Vec<String>,
}

impl TimeSeriesDataset {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn variates(&self) -> usize {
        self.values.cols()
    }
}

/// Contiguous, ordered, non-overlapping train/val/test segments.
#[derive(Debug, Clone)]
pub struct SplitSegments {
    pub train: Tensor,
    pub val: Tensor,
    pub test: Tensor,
}

impl SplitSegments {
    pub fn lengths(&self) -> (usize, usize, usize) {
        (self.train.rows(), self.val.rows(), self.test.rows())
    }
}

/// Splits rows chronologically by the given ratios (normalized), flooring
/// the first two boundaries and giving the remainder to the test segment.
pub fn chronological_split(values: &Tensor, ratios: (f64, f64, f64)) -> Result<SplitSegments> {
    let (a, b, c) = ratios;
    if a <= 0.0 || b <= 0.0 || c <= 0.0 {
        return Err(Error::config(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    let total = a + b + c;
    let t = values.rows();
    let n_train = ((a / total) * t as f64).floor() as usize;
    let n_val = ((b / total) * t as f64).floor() as usize;
    if n_train == 0 || n_val == 0 || t <= n_train + n_val {
        return Err(Error::config(format!(
            "dataset with {t} rows is too short for a {a}:{b}:{c} split"
        )));
    }
    let take = |from: usize, to: usize| -> Tensor {
        let n = values.cols();
        let mut vals = Vec::with_capacity((to - from) * n);
        for i in from..to {
            vals.extend_from_slice(values.row(i));
        }
        Tensor::matrix(to - from, n, vals).expect("contiguous block")
    };
    Ok(SplitSegments {
        train: take(0, n_train),
        val: take(n_train, n_train + n_val),
        test: take(n_train + n_val, t),
    })
}

/// One supervised sample: lookback `x` (`N×K`) immediately followed by the
/// target `y` (`N×F`).
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub x: Tensor,
    pub y: Tensor,
}

/// Sliding windows over one segment. Windows never cross segment
/// boundaries; an infeasible segment yields an empty list.
pub fn make_windows(segment: &Tensor, lookback: usize, horizon: usize, stride: usize) -> Vec<WindowSample> {
    assert!(stride >= 1, "stride must be >= 1");
    let t = segment.rows();
    let n = segment.cols();
    if t < lookback + horizon {
        return Vec::new();
    }
    let count = (t - lookback - horizon) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        let grab = |from: usize, len: usize| -> Tensor {
            let mut vals = Vec::with_capacity(n * len);
            for variate in 0..n {
                for row in from..from + len {
                    vals.push(segment.get2(row, variate));
                }
            }
            Tensor::matrix(n, len, vals).expect("window block")
        };
        out.push(WindowSample {
            x: grab(start, lookback),
            y: grab(start + lookback, horizon),
        });
    }
    out
}

/// Per-variate standardization statistics, fit on the training segment only.
/// Population (1/n) standard deviation convention.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Scaler {
    pub fn fit(train: &Tensor, variate_names: &[String]) -> Result<Self> {
        let (t, n) = (train.rows(), train.cols());
        if t == 0 {
            return Err(Error::Data("cannot fit a scaler on an empty segment".into()));
        }
        let mut means = vec![0.0; n];
        let mut stds = vec![0.0; n];
        for j in 0..n {
            let mut sum = 0.0;
            for i in 0..t {
                sum += train.get2(i, j);
            }
            let mean = sum / t as f64;
            let mut var = 0.0;
            for i in 0..t {
                let d = train.get2(i, j) - mean;
                var += d * d;
            }
            var /= t as f64;
            if var == 0.0 {
                let name = variate_names
                    .get(j)
                    .cloned()
                    .unwrap_or_else(|| format!("column {j}"));
                return Err(Error::Data(format!(
                    "variate {name:?} has zero variance on the training segment"
                )));
            }
            means[j] = mean;
            stds[j] = var.sqrt();
        }
        Ok(Scaler { means, stds })
    }

    /// Standardizes a `T×N` block (columns are variates).
    pub fn transform_columns(&self, m: &Tensor) -> Tensor {
        self.map_columns(m, |v, mean, sd| (v - mean) / sd)
    }

    /// Inverts [`transform_columns`](Self::transform_columns).
    pub fn inverse_columns(&self, m: &Tensor) -> Tensor {
        self.map_columns(m, |v, mean, sd| v * sd + mean)
    }

    /// Standardizes an `N×L` block (rows are variates).
    pub fn transform_rows(&self, m: &Tensor) -> Tensor {
        self.map_rows(m, |v, mean, sd| (v - mean) / sd)
    }

    /// Inverts [`transform_rows`](Self::transform_rows).
    pub fn inverse_rows(&self, m: &Tensor) -> Tensor {
        self.map_rows(m, |v, mean, sd| v * sd + mean)
    }

    fn map_columns(&self, m: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
        let n = m.cols();
        assert_eq!(n, self.means.len(), "scaler fitted for {} variates", self.means.len());
        let values = m
            .values()
            .iter()
            .enumerate()
            .map(|(idx, &v)| f(v, self.means[idx % n], self.stds[idx % n]))
            .collect();
        Tensor::new(m.shape().to_vec(), values).expect("same shape")
    }

    fn map_rows(&self, m: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
        let cols = m.cols();
        assert_eq!(m.rows(), self.means.len(), "scaler fitted for {} variates", self.means.len());
        let values = m
            .values()
            .iter()
            .enumerate()
            .map(|(idx, &v)| f(v, self.means[idx / cols], self.stds[idx / cols]))
            .collect();
        Tensor::new(m.shape().to_vec(), values).expect("same shape")
    }
}

/// Mean squared error over all elements.
pub fn mse(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    check_same_shape("mse", pred, truth)?;
    let n = pred.len() as f64;
    Ok(pred
        .values()
        .iter()
        .zip(truth.values())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Mean absolute error over all elements.
pub fn mae(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    check_same_shape("mae", pred, truth)?;
    let n = pred.len() as f64;
    Ok(pred
        .values()
        .iter()
        .zip(truth.values())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n)
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Right-pads by edge replication to the next multiple of `2^levels`.
/// Returns the padded vector and the original length.
pub fn pad_to_divisible(x: &[f64], levels: usize) -> (Vec<f64>, usize) {
    let target = crate::model::next_multiple_pow2(x.len(), levels);
    (pad_to_length_edge(x, target), x.len())
}

/// Right-pads by replicating the final value up to `target` length.
pub fn pad_to_length_edge(x: &[f64], target: usize) -> Vec<f64> {
    debug_assert!(!x.is_empty(), "cannot edge-pad an empty signal");
    let mut out = Vec::with_capacity(target.max(x.len()));
    out.extend_from_slice(x);
    let last = *x.last().expect("non-empty");
    while out.len() < target {
        out.push(last);
    }
    out
}

/// Deterministic synthetic benchmark: per variate, a sum of two sinusoids
/// with periods 24 and 96 (random phases) plus Gaussian noise with σ = 0.1.
pub fn synthetic_periodic(t: usize, variates: usize, seed: u64) -> TimeSeriesDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<(f64, f64)> = (0..variates)
        .map(|_| {
            (
                rngutil::uniform(&mut rng) * std::f64::consts::TAU,
                rngutil::uniform(&mut rng) * std::f64::consts::TAU,
            )
        })
        .collect();
    let mut values = Vec::with_capacity(t * variates);
    for step in 0..t {
        for (p24, p96) in &phases {
            let tt = step as f64;
            let clean = (std::f64::consts::TAU * tt / 24.0 + p24).sin()
                + (std::f64::consts::TAU * tt / 96.0 + p96).sin();
            values.push(clean + 0.1 * rngutil::normal(&mut rng));
        }
    }
    TimeSeriesDataset {
        name: format!("synthetic-periodic-{seed}"),
        timestamps: None,
        values: Tensor::matrix(t, variates, values).expect("generator shape"),
        variate_names: (0..variates).map(|i| format!("v{i}")).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize, n: usize) -> Tensor {
        Tensor::matrix(t, n, (0..t * n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn split_arithmetic() {
        let s = chronological_split(&ramp(100, 1), (7.0, 1.0, 2.0)).unwrap();
        assert_eq!(s.lengths(), (70, 10, 20));

        let s = chronological_split(&ramp(25635, 1), (7.0, 1.0, 2.0)).unwrap();
        assert_eq!(s.lengths(), (17944, 2563, 5128));

        assert!(chronological_split(&ramp(2, 1), (7.0, 1.0, 2.0)).is_err());
    }

    #[test]
    fn split_segments_are_contiguous_and_ordered() {
        let values = ramp(50, 2);
        let s = chronological_split(&values, (7.0, 1.0, 2.0)).unwrap();
        let mut rebuilt = Vec::new();
        for seg in [&s.train, &s.val, &s.test] {
            rebuilt.extend_from_slice(seg.values());
        }
        assert_eq!(rebuilt, values.values());
    }

    #[test]
    fn window_count_formula() {
        let seg = ramp(200, 1);
        assert_eq!(make_windows(&seg, 96, 96, 1).len(), 9);
        let exact = ramp(20, 1);
        assert_eq!(make_windows(&exact, 12, 8, 1).len(), 1);
        // stride K+F gives non-overlapping windows
        let seg = ramp(60, 1);
        let ws = make_windows(&seg, 10, 10, 20);
        assert_eq!(ws.len(), 3);
        assert_eq!(ws[0].x.get2(0, 0), 0.0);
        assert_eq!(ws[1].x.get2(0, 0), 20.0);
        assert!(make_windows(&ramp(5, 1), 10, 10, 1).is_empty());
    }

    #[test]
    fn windows_are_time_contiguous() {
        let seg = ramp(30, 2);
        let ws = make_windows(&seg, 4, 3, 1);
        for (w, sample) in ws.iter().enumerate() {
            // variate 0 of ramp(·, 2) holds value 2·row
            assert_eq!(sample.x.get2(0, 0), (2 * w) as f64);
            assert_eq!(sample.y.get2(0, 0), (2 * (w + 4)) as f64);
            // y starts exactly one step after x ends
            assert_eq!(sample.y.get2(0, 0), sample.x.get2(0, 3) + 2.0);
        }
    }

    #[test]
    fn scaler_hand_case_and_roundtrip() {
        let train = Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap();
        let s = Scaler::fit(&train, &["a".into()]).unwrap();
        assert_eq!(s.means, vec![2.0]);
        assert_eq!(s.stds, vec![1.0]); // population convention

        let m = Tensor::matrix(3, 1, vec![0.3, -4.0, 9.9]).unwrap();
        let back = s.inverse_columns(&s.transform_columns(&m));
        for (a, b) in back.values().iter().zip(m.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scaler_rejects_constant_variate() {
        let train = Tensor::matrix(3, 2, vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0]).unwrap();
        let err = Scaler::fit(&train, &["a".into(), "flat".into()])
            .unwrap_err()
            .to_string();
        assert!(err.contains("flat"), "{err}");
    }

    #[test]
    fn scaler_stats_come_from_train_only() {
        let train = Tensor::matrix(4, 1, vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        let val = Tensor::matrix(2, 1, vec![100.0, 102.0]).unwrap();
        let s = Scaler::fit(&train, &["a".into()]).unwrap();
        let scaled_val = s.transform_columns(&val);
        // val is scaled with train stats even though its own mean differs
        assert!(scaled_val.values()[0] > 10.0);
        // negative control: refitting on train ∪ val changes the stats
        let mut joined = train.values().to_vec();
        joined.extend_from_slice(val.values());
        let s2 = Scaler::fit(&Tensor::matrix(6, 1, joined).unwrap(), &["a".into()]).unwrap();
        assert_ne!(s.means, s2.means);
    }

    #[test]
    fn metric_examples() {
        let a = Tensor::vector(vec![1.0, 3.0]);
        let b = Tensor::vector(vec![1.0, 2.0]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 0.5);
        assert_eq!(mae(&a, &b).unwrap(), 0.5);

        let c = Tensor::vector(vec![2.5, 3.5, -1.5]);
        let offset = Tensor::vector(vec![5.5, 6.5, 1.5]);
        assert!((mse(&c, &offset).unwrap() - 9.0).abs() < 1e-12);
        assert!((mae(&c, &offset).unwrap() - 3.0).abs() < 1e-12);

        assert!(mse(&a, &c).is_err());
    }

    #[test]
    fn padding_examples() {
        let x = vec![1.0; 96];
        let (padded, orig) = pad_to_divisible(&x, 3);
        assert_eq!(padded.len(), 96);
        assert_eq!(orig, 96);

        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let (padded, orig) = pad_to_divisible(&x, 3);
        assert_eq!(padded.len(), 104);
        assert_eq!(orig, 100);
        assert!(padded[100..].iter().all(|v| *v == 99.0));
    }

    #[test]
    fn synthetic_benchmark_is_deterministic_and_periodic() {
        let a = synthetic_periodic(400, 3, 11);
        let b = synthetic_periodic(400, 3, 11);
        assert_eq!(a.values, b.values);
        let c = synthetic_periodic(400, 3, 12);
        assert_ne!(a.values, c.values);
        assert_eq!(a.variates(), 3);
        assert_eq!(a.len(), 400);
        // dominant 96-periodicity: high autocorrelation at lag 96
        let col: Vec<f64> = (0..400).map(|i| a.values.get2(i, 0)).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let denom: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let lag = 96;
        let num: f64 = (0..col.len() - lag)
            .map(|i| (col[i] - mean) * (col[i + lag] - mean))
            .sum();
        assert!(num / denom > 0.5, "autocorrelation {}", num / denom);
    }
}
