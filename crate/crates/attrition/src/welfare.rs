//! Welfare analysis over solved equilibria: the minimum-stopping-time
//! distribution, expected payoffs and discount factors, on-path posterior
//! beliefs, and large-society limit quantities.

use crate::interp::CurveInterp;
use crate::model::{GameSpec, ModelError, SocietySpec, ValueDistribution};
use crate::shooting::EquilibriumSolution;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WelfareError {
    #[error("equilibrium has {eq} curves but game has {game} players")]
    Mismatch { eq: usize, game: usize },
    #[error("invalid society: {0}")]
    InvalidSociety(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Distribution of the minimum provision time `t_m` across a set of players:
/// an atom at `t = 0` (instant exit), a grid CDF on `(0, T]`, and the
/// probability that nobody ever provides.
#[derive(Debug, Clone)]
pub struct StoppingTimeDistribution {
    pub atom0: f64,
    /// Grid times, starting at 0.
    pub ts: Vec<f64>,
    /// CDF values at `ts`, inclusive of the atom (`cdf[0] = atom0`).
    pub cdf: Vec<f64>,
    /// Probability every included player waits forever.
    pub never_mass: f64,
}

impl StoppingTimeDistribution {
    /// Total mass eventually provided: the analytic limit of the CDF.
    pub fn limit(&self) -> f64 {
        1.0 - self.never_mass
    }

    /// CDF at an arbitrary time by monotone linear interpolation; clamps to
    /// the endpoints.
    pub fn cdf_at(&self, t: f64) -> f64 {
        if t <= self.ts[0] {
            return self.cdf[0];
        }
        if t >= *self.ts.last().unwrap() {
            return *self.cdf.last().unwrap();
        }
        let i = self.ts.partition_point(|&x| x <= t) - 1;
        let w = (t - self.ts[i]) / (self.ts[i + 1] - self.ts[i]);
        self.cdf[i] + w * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Fits `cdf(t) = L - A e^{-beta t}` on the tail of the grid and returns
    /// `(L, A, beta)`. Uses Shanks extrapolation at three equally spaced tail
    /// times, so a purely geometric tail is resolved exactly.
    fn tail_fit(&self) -> Option<(f64, f64, f64)> {
        let t_end = *self.ts.last().unwrap();
        let t0 = self.ts[0];
        let span = t_end - t0;
        if span <= 0.0 {
            return None;
        }
        let h = 0.15 * span;
        let (ta, tb, tc) = (t_end - 2.0 * h, t_end - h, t_end);
        let (fa, fb, fc) = (self.cdf_at(ta), self.cdf_at(tb), self.cdf_at(tc));
        let denom = fa + fc - 2.0 * fb;
        if denom.abs() < 1e-300 {
            return None;
        }
        let l = (fa * fc - fb * fb) / denom;
        if !(l >= fc && l <= 1.0 + 1e-9) {
            return None;
        }
        let (da, db) = (l - fa, l - fb);
        if da <= 0.0 || db <= 0.0 || db >= da {
            return None;
        }
        let beta = (da / db).ln() / h;
        let a = db * (beta * tb).exp();
        Some((l, a, beta))
    }

    /// Deviation of `atom0 + provided-in-finite-time mass + never_mass` from
    /// 1, with the grid CDF extended to its fitted tail limit.
    pub fn mass_defect(&self) -> f64 {
        let limit = match self.tail_fit() {
            Some((l, _, _)) => l,
            None => *self.cdf.last().unwrap(),
        };
        (limit + self.never_mass - 1.0).abs()
    }
}

/// Equilibrium profile evaluator: per-player curve interpolants with the
/// strict-waiting convention (a waiter's curve sits at their upper bound
/// until their division).
struct ProfileEval {
    interps: Vec<CurveInterp>,
    strict: Vec<f64>,
    uppers: Vec<f64>,
}

impl ProfileEval {
    fn new(eq: &EquilibriumSolution, game: &GameSpec) -> Result<Self, WelfareError> {
        if eq.curves.len() != game.players.len() {
            return Err(WelfareError::Mismatch {
                eq: eq.curves.len(),
                game: game.players.len(),
            });
        }
        let interps = eq
            .curves
            .iter()
            .map(|c| CurveInterp::new(c.ts.clone(), c.values.clone()))
            .collect();
        let strict = eq.curves.iter().map(|c| c.strict_wait).collect();
        let uppers = game.players.iter().map(|p| p.dist.v_hi()).collect();
        Ok(ProfileEval { interps, strict, uppers })
    }

    /// Curve value of player `j` at time `t` (upper bound while strictly
    /// waiting, last sample beyond the horizon).
    fn phi(&self, j: usize, t: f64) -> f64 {
        if t < self.strict[j] - 1e-15 {
            self.uppers[j]
        } else {
            self.interps[j].eval(t)
        }
    }
}

/// Builds the distribution of the minimum provision time over all players of
/// `game` (or all but `exclude`): `F(t) = 1 - prod_j F_j(phi_j(t))`.
pub fn stopping_distribution(
    eq: &EquilibriumSolution,
    game: &GameSpec,
    exclude: Option<usize>,
) -> Result<StoppingTimeDistribution, WelfareError> {
    let profile = ProfileEval::new(eq, game)?;
    let included: Vec<usize> = (0..game.players.len())
        .filter(|&j| Some(j) != exclude)
        .collect();

    let mut ts: Vec<f64> = eq
        .curves
        .iter()
        .flat_map(|c| c.ts.iter().copied())
        .collect();
    ts.push(0.0);
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut cdf = Vec::with_capacity(ts.len());
    for &t in &ts {
        let mut prod = 1.0;
        for &j in &included {
            let v = profile.phi(j, t).min(profile.uppers[j]);
            prod *= game.players[j].dist.eval(v)?.cdf.clamp(0.0, 1.0);
        }
        cdf.push((1.0 - prod).clamp(0.0, 1.0));
    }
    // enforce monotonicity against interpolation noise
    for k in 1..cdf.len() {
        if cdf[k] < cdf[k - 1] {
            cdf[k] = cdf[k - 1];
        }
    }
    let atom0 = cdf[0];
    let mut never = 1.0;
    for &j in &included {
        never *= game.players[j].dist.eval(game.players[j].c)?.cdf;
    }
    Ok(StoppingTimeDistribution {
        atom0,
        ts,
        cdf,
        never_mass: never,
    })
}

// 4-point Gauss-Legendre nodes/weights on [-1, 1].
const GL4_X: [f64; 4] = [
    -0.861136311594053,
    -0.339981043584856,
    0.339981043584856,
    0.861136311594053,
];
const GL4_W: [f64; 4] = [
    0.347854845137454,
    0.652145154862546,
    0.652145154862546,
    0.347854845137454,
];

/// Precomputed quadrature of `int e^{-rate t} dF` against one stopping-time
/// distribution: a monotone cubic interpolant of the grid CDF with per-cell
/// Gauss-Legendre prefix sums, so partial integrals to arbitrary times cost
/// one cell. Exact for flat stretches of F.
pub struct DiscountKernel {
    ts: Vec<f64>,
    cdf: Vec<f64>,
    interp: CurveInterp,
    rate: f64,
    /// prefix[k] = integral over (ts[0], ts[k]].
    prefix: Vec<f64>,
    atom0: f64,
    /// Fitted exponential tail beyond the grid: F(t) = L - A e^{-beta t}.
    tail: Option<(f64, f64, f64)>,
}

impl DiscountKernel {
    pub fn new(dist: &StoppingTimeDistribution, rate: f64) -> Self {
        assert!(rate > 0.0, "rate must be positive");
        let interp = CurveInterp::new(dist.ts.clone(), dist.cdf.clone());
        let n = dist.ts.len();
        let mut prefix = vec![0.0; n];
        for k in 0..n - 1 {
            let cell = if dist.cdf[k + 1] == dist.cdf[k] {
                0.0
            } else {
                gl4_cell(&interp, rate, dist.ts[k], dist.ts[k + 1])
            };
            prefix[k + 1] = prefix[k] + cell;
        }
        DiscountKernel {
            ts: dist.ts.clone(),
            cdf: dist.cdf.clone(),
            interp,
            rate,
            prefix,
            atom0: dist.atom0,
            tail: dist.tail_fit(),
        }
    }

    fn t_end(&self) -> f64 {
        *self.ts.last().unwrap()
    }

    /// Tail contribution of `int e^{-rate s} dF` over `(t_end, t]`, using
    /// dF = A beta e^{-beta s} ds beyond the grid.
    fn tail_integral(&self, t: f64) -> f64 {
        match self.tail {
            Some((_, a, beta)) => {
                let k = self.rate + beta;
                a * beta / k * ((-k * self.t_end()).exp() - (-k * t).exp())
            }
            None => 0.0,
        }
    }

    /// CDF at `t`, extended beyond the grid by the fitted tail.
    pub fn cdf_at(&self, t: f64) -> f64 {
        if t < self.t_end() {
            if t <= self.ts[0] {
                return self.cdf[0];
            }
            let k = self.ts.partition_point(|&x| x <= t) - 1;
            let w = (t - self.ts[k]) / (self.ts[k + 1] - self.ts[k]);
            return self.cdf[k] + w * (self.cdf[k + 1] - self.cdf[k]);
        }
        match self.tail {
            Some((l, a, beta)) => (l - a * (-beta * t).exp()).max(*self.cdf.last().unwrap()),
            None => *self.cdf.last().unwrap(),
        }
    }

    /// `int e^{-rate s} dF` over `(0, t]`, excluding the atom at 0.
    pub fn integral_to(&self, t: f64) -> f64 {
        if t <= self.ts[0] {
            return 0.0;
        }
        if t >= self.t_end() {
            return *self.prefix.last().unwrap() + self.tail_integral(t);
        }
        let k = self.ts.partition_point(|&x| x <= t) - 1;
        let partial = if self.cdf[k + 1] == self.cdf[k] {
            0.0
        } else {
            gl4_cell(&self.interp, self.rate, self.ts[k], t)
        };
        self.prefix[k] + partial
    }

    /// `E[e^{-rate t_m}]` including the atom and the full fitted tail.
    pub fn total(&self) -> f64 {
        self.atom0 + *self.prefix.last().unwrap() + self.tail_integral(f64::INFINITY)
    }
}

fn gl4_cell(interp: &CurveInterp, rate: f64, a: f64, b: f64) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc = 0.0;
    for j in 0..4 {
        let t = mid + half * GL4_X[j];
        acc += half * GL4_W[j] * (-rate * t).exp() * interp.deriv(t);
    }
    acc
}

/// `E[e^{-rate t_m}]`: the atom contributes 1, the grid part is integrated by
/// quadrature, the tail beyond the grid analytically via the fitted
/// exponential decay; never-provision contributes 0.
pub fn expected_discount_factor(dist: &StoppingTimeDistribution, rate: f64) -> f64 {
    DiscountKernel::new(dist, rate).total()
}

/// Expected payoff of player `i` with value `v` committing to provision time
/// `t_choice` (`f64::INFINITY` = never) against the equilibrium profile:
/// `v int_0^t e^{-rs} dF + (v - c) e^{-rt} (1 - F(t))` with the opponents'
/// minimum-time distribution `F`, atoms handled exactly.
pub fn expected_payoff(
    game: &GameSpec,
    eq: &EquilibriumSolution,
    i: usize,
    v: f64,
    t_choice: f64,
) -> Result<f64, WelfareError> {
    let dist = stopping_distribution(eq, game, Some(i))?;
    Ok(expected_payoff_against(game, &dist, i, v, t_choice))
}

/// Same as `expected_payoff` but with the opponents' stopping distribution
/// precomputed (to amortize it across many deviation times).
pub fn expected_payoff_against(
    game: &GameSpec,
    dist: &StoppingTimeDistribution,
    i: usize,
    v: f64,
    t_choice: f64,
) -> f64 {
    let kernel = DiscountKernel::new(dist, game.players[i].r);
    payoff_with_kernel(game.players[i].c, &kernel, v, t_choice)
}

/// Payoff evaluation against a precomputed discount kernel (the kernel's rate
/// must be the deviating player's own rate).
pub fn payoff_with_kernel(c: f64, kernel: &DiscountKernel, v: f64, t_choice: f64) -> f64 {
    if t_choice.is_infinite() {
        return v * kernel.total();
    }
    let early = kernel.atom0 + kernel.integral_to(t_choice);
    let f_t = kernel.cdf_at(t_choice);
    v * early + (v - c) * (-kernel.rate * t_choice).exp() * (1.0 - f_t)
}

/// On-path posterior about player `i` at time `t`: the prior lower-truncated
/// at the highest type that could still be waiting. Strict waiters keep the
/// full prior until their division; instant-exit players lose the mass above
/// their threshold immediately.
pub fn posterior_belief(
    eq: &EquilibriumSolution,
    game: &GameSpec,
    i: usize,
    t: f64,
) -> Result<ValueDistribution, WelfareError> {
    let profile = ProfileEval::new(eq, game)?;
    let prior = &game.players[i].dist;
    let upper = profile.phi(i, t);
    if upper >= prior.v_hi() - 1e-15 {
        return Ok(prior.clone());
    }
    Ok(ValueDistribution::lower_truncated(prior.clone(), upper)?)
}

/// Limit payoff of a type-`v` player in a large society at time `tau`:
/// `v (1 - c / v_bar)` where `v_bar` is the highest unrevealed type. In the
/// large-society limit no positive fraction of the top group has revealed at
/// any finite `tau`, so the decisive bound stays at the maximal group bound.
pub fn large_society_gain(
    society: &SocietySpec,
    v: f64,
    tau: f64,
) -> Result<f64, WelfareError> {
    society.validate()?;
    let c0 = society.groups[0].player.c;
    let r0 = society.groups[0].player.r;
    for g in &society.groups {
        if (g.player.c - c0).abs() > 1e-12 || (g.player.r - r0).abs() > 1e-12 {
            return Err(WelfareError::InvalidSociety(
                "groups differ in cost or rate".into(),
            ));
        }
    }
    assert!(tau >= 0.0, "tau must be nonnegative");
    let v_bar = society
        .groups
        .iter()
        .map(|g| g.player.dist.v_hi())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(v * (1.0 - c0 / v_bar))
}

/// Group indices sorted by the strict-waiting time of each group's highest
/// type (earliest entry among the group's players), ties broken by index.
pub fn strict_wait_ordering(
    society: &SocietySpec,
    eq: &EquilibriumSolution,
) -> Result<Vec<usize>, WelfareError> {
    let sizes = society.group_sizes();
    let total: usize = sizes.iter().sum();
    if eq.curves.len() != total {
        return Err(WelfareError::Mismatch {
            eq: eq.curves.len(),
            game: total,
        });
    }
    let mut waits = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &size in &sizes {
        let w = eq.curves[start..start + size]
            .iter()
            .map(|c| c.strict_wait)
            .fold(f64::INFINITY, f64::min);
        waits.push(w);
        start += size;
    }
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| waits[a].partial_cmp(&waits[b]).unwrap().then(a.cmp(&b)));
    Ok(order)
}
