//! Piecewise-cubic interpolation of sampled strategy curves.
//!
//! Slopes come from five-point Lagrange differentiation of the samples and
//! are then limited Fritsch-Carlson style so that strictly monotone data
//! yields a strictly monotone interpolant, which keeps curve inversion
//! well-posed.

/// Derivative of the degree-(n-1) Lagrange polynomial through `(ts, vs)`
/// evaluated at `ts[at]`. Works for arbitrary (distinct) spacing.
pub fn lagrange_derivative(ts: &[f64], vs: &[f64], at: usize) -> f64 {
    let n = ts.len();
    let x = ts[at];
    let mut d = 0.0;
    for j in 0..n {
        if j == at {
            // sum over k != at of 1/(x - t_k), times v_at
            let mut s = 0.0;
            for k in 0..n {
                if k != at {
                    s += 1.0 / (x - ts[k]);
                }
            }
            d += vs[at] * s;
        } else {
            // l_j'(x_at) = prod_{k != j, at} (x - t_k) / prod_{k != j} (t_j - t_k)
            let mut num = 1.0;
            let mut den = 1.0;
            for k in 0..n {
                if k != j {
                    den *= ts[j] - ts[k];
                    if k != at {
                        num *= x - ts[k];
                    }
                }
            }
            d += vs[j] * num / den;
        }
    }
    d
}

/// Five-point slope estimate at index `i` of a sampled function, falling back
/// to narrower stencils near the ends.
fn slope_at(ts: &[f64], vs: &[f64], i: usize) -> f64 {
    let n = ts.len();
    if n < 2 {
        return 0.0;
    }
    let half = 2usize;
    let lo = i.saturating_sub(half).min(n.saturating_sub(5));
    let hi = (lo + 5).min(n);
    let lo = hi.saturating_sub(5.min(n));
    lagrange_derivative(&ts[lo..hi], &vs[lo..hi], i - lo)
}

/// Monotone piecewise-cubic Hermite interpolant over an increasing time grid.
#[derive(Debug, Clone)]
pub struct CurveInterp {
    ts: Vec<f64>,
    vs: Vec<f64>,
    slopes: Vec<f64>,
}

impl CurveInterp {
    /// Builds the interpolant. `ts` must be strictly increasing.
    pub fn new(ts: Vec<f64>, vs: Vec<f64>) -> Self {
        assert_eq!(ts.len(), vs.len());
        assert!(ts.len() >= 2, "need at least two samples");
        let n = ts.len();
        let mut slopes = vec![0.0; n];
        for i in 0..n {
            slopes[i] = slope_at(&ts, &vs, i);
        }
        // Fritsch-Carlson limiting against the secant of each adjacent interval.
        for i in 0..n {
            let d_left = if i > 0 {
                (vs[i] - vs[i - 1]) / (ts[i] - ts[i - 1])
            } else {
                (vs[1] - vs[0]) / (ts[1] - ts[0])
            };
            let d_right = if i + 1 < n {
                (vs[i + 1] - vs[i]) / (ts[i + 1] - ts[i])
            } else {
                d_left
            };
            if d_left * d_right <= 0.0 {
                slopes[i] = 0.0;
            } else {
                let lim = 3.0 * d_left.abs().min(d_right.abs());
                if slopes[i] * d_left <= 0.0 {
                    slopes[i] = 0.0;
                } else if slopes[i].abs() > lim {
                    slopes[i] = lim * slopes[i].signum();
                }
            }
        }
        CurveInterp { ts, vs, slopes }
    }

    pub fn t_min(&self) -> f64 {
        self.ts[0]
    }

    pub fn t_max(&self) -> f64 {
        *self.ts.last().unwrap()
    }

    pub fn v_first(&self) -> f64 {
        self.vs[0]
    }

    pub fn v_last(&self) -> f64 {
        *self.vs.last().unwrap()
    }

    fn segment(&self, t: f64) -> usize {
        match self.ts.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(self.ts.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.ts.len() - 2),
        }
    }

    /// Evaluates the interpolant, clamping `t` to the sampled range.
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.clamp(self.t_min(), self.t_max());
        let i = self.segment(t);
        let h = self.ts[i + 1] - self.ts[i];
        let s = (t - self.ts[i]) / h;
        let (v0, v1) = (self.vs[i], self.vs[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        v0 * (2.0 * s3 - 3.0 * s2 + 1.0)
            + m0 * (s3 - 2.0 * s2 + s)
            + v1 * (-2.0 * s3 + 3.0 * s2)
            + m1 * (s3 - s2)
    }

    /// Derivative of the interpolant at `t`.
    pub fn deriv(&self, t: f64) -> f64 {
        let t = t.clamp(self.t_min(), self.t_max());
        let i = self.segment(t);
        let h = self.ts[i + 1] - self.ts[i];
        let s = (t - self.ts[i]) / h;
        let (v0, v1) = (self.vs[i], self.vs[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        (v0 * (6.0 * s2 - 6.0 * s)
            + m0 * (3.0 * s2 - 4.0 * s + 1.0)
            + v1 * (-6.0 * s2 + 6.0 * s)
            + m1 * (3.0 * s2 - 2.0 * s))
            / h
    }

    /// Inverts a strictly decreasing curve: returns `t` with `eval(t) = v`.
    /// `v` must lie within the sampled value range.
    pub fn invert_decreasing(&self, v: f64) -> Option<f64> {
        let (hi_v, lo_v) = (self.vs[0], *self.vs.last().unwrap());
        if v > hi_v || v < lo_v {
            return None;
        }
        // locate bracketing segment on the descending value array
        let mut lo = 0usize;
        let mut hi = self.vs.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.vs[mid] >= v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (mut a, mut b) = (self.ts[lo], self.ts[hi]);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if self.eval(mid) >= v {
                a = mid;
            } else {
                b = mid;
            }
            if b - a < 1e-14 * (1.0 + b.abs()) {
                break;
            }
        }
        Some(0.5 * (a + b))
    }
}
