//! Small numeric helpers shared by the analytic and simulation modules.

/// Binomial pmf `C(n, k) p^k (1-p)^(n-k)`.
pub fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    binomial_coefficient(n, k) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

pub fn binomial_coefficient(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Ordinary least-squares fit `y = a + b x`, returning `(a, b)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let mut acc = RegressionSums::default();
    for (&x, &y) in xs.iter().zip(ys) {
        acc.push(x, y);
    }
    acc.fit()
}

/// Streaming sums for a least-squares line.
#[derive(Debug, Clone, Copy, Default)]
pub struct RegressionSums {
    n: f64,
    sx: f64,
    sy: f64,
    sxx: f64,
    sxy: f64,
}

impl RegressionSums {
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.sx += x;
        self.sy += y;
        self.sxx += x * x;
        self.sxy += x * y;
    }

    pub fn len(&self) -> usize {
        self.n as usize
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0.0
    }

    pub fn fit(&self) -> Option<(f64, f64)> {
        if self.n < 2.0 {
            return None;
        }
        // Centered form keeps precision when x is a large slot index.
        let mx = self.sx / self.n;
        let my = self.sy / self.n;
        let vxx = self.sxx - self.n * mx * mx;
        if vxx <= 0.0 {
            return None;
        }
        let slope = (self.sxy - self.n * mx * my) / vxx;
        Some((my - slope * mx, slope))
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}
