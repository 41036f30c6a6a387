use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    /// One-sided p-value for `mean(a - b) < 0`.
    pub p_value: f64,
}

/// Paired t-test of the alternative "a is smaller than b on average".
///
/// With zero spread in the differences the statistic is undefined; the
/// p-value is then 0, 0.5 or 1 according to the sign of the mean difference.
/// Fewer than two pairs give p = 1.
pub fn paired_t_test_less(a: &[f64], b: &[f64]) -> PairedTest {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    let n = a.len();
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = if n == 0 {
        0.0
    } else {
        diffs.iter().sum::<f64>() / n as f64
    };
    if n < 2 {
        return PairedTest {
            n,
            mean_diff: mean,
            t: f64::NAN,
            p_value: 1.0,
        };
    }
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    if se == 0.0 || !se.is_finite() {
        let p = if mean < 0.0 {
            0.0
        } else if mean == 0.0 {
            0.5
        } else {
            1.0
        };
        let t = if mean == 0.0 {
            0.0
        } else {
            mean.signum() * f64::INFINITY
        };
        return PairedTest {
            n,
            mean_diff: mean,
            t,
            p_value: p,
        };
    }
    let t = mean / se;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    PairedTest {
        n,
        mean_diff: mean,
        t,
        p_value: dist.cdf(t),
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}
