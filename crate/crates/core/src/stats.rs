//! Summation and sample-distribution helpers.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Mean, variance (denominator `n`), skewness and excess kurtosis of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn shape(xs: &[f64]) -> Shape {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let moment = |k: i32| xs.iter().map(|x| (x - mean).powi(k)).sum::<f64>() / n;
    let m2 = moment(2);
    Shape { mean, variance: m2, skewness: moment(3) / m2.powf(1.5), excess_kurtosis: moment(4) / (m2 * m2) - 3.0 }
}

/// Jarque–Bera normality test; returns the statistic and its asymptotic p-value.
pub fn jarque_bera(xs: &[f64]) -> (f64, f64) {
    let s = shape(xs);
    let n = xs.len() as f64;
    let stat = n / 6.0 * (s.skewness * s.skewness + s.excess_kurtosis * s.excess_kurtosis / 4.0);
    let chi2 = ChiSquared::new(2.0).expect("two degrees of freedom");
    (stat, 1.0 - chi2.cdf(stat))
}

/// Median of a sample (mean of the middle pair for even sizes).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}
