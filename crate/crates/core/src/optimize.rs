//! Golden-section search for one-dimensional unimodal minimization.

/// `(sqrt(5) - 1) / 2`
const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GoldenSection {
    /// Stop once the bracket is narrower than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GoldenSection {
    fn default() -> Self {
        GoldenSection {
            tol: 1e-10,
            max_iter: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
}

impl GoldenSection {
    pub fn new(tol: f64) -> Self {
        GoldenSection {
            tol,
            ..Default::default()
        }
    }

    /// Minimizes `f` over `[lo, hi]`, assuming it is unimodal there. The
    /// endpoints are compared against the interior optimum, so a monotone
    /// objective returns the better endpoint.
    pub fn minimize<F>(&self, f: F, lo: f64, hi: f64) -> Minimum
    where
        F: Fn(f64) -> f64,
    {
        let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let mut fc = f(c);
        let mut fd = f(d);
        let mut iterations = 0;
        while (b - a).abs() > self.tol && iterations < self.max_iter {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - INV_PHI * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + INV_PHI * (b - a);
                fd = f(d);
            }
            iterations += 1;
        }
        let (mut x, mut value) = if fc <= fd { (c, fc) } else { (d, fd) };
        for edge in [lo, hi] {
            let fe = f(edge);
            if fe < value {
                x = edge;
                value = fe;
            }
        }
        Minimum {
            x,
            value,
            iterations,
        }
    }
}
