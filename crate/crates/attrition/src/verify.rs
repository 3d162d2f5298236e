//! Independent verification of solved equilibria: the six-clause structural
//! audit, epsilon-best-response certification, seeded Monte Carlo simulation,
//! and pairwise comparative-statics ordering checks.

use crate::interp::{lagrange_derivative, CurveInterp};
use crate::model::{GameSpec, ModelError};
use crate::odecore::{indifference_residual, weighted_rhs, CurveState};
use crate::shooting::EquilibriumSolution;
use crate::welfare::{
    payoff_with_kernel, stopping_distribution, DiscountKernel, WelfareError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One clause of the structural audit with its worst-case margin
/// (nonnegative margin = pass).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClauseResult {
    pub name: String,
    pub pass: bool,
    /// Worst-case slack in the clause's own units; negative when violated.
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lemma1Audit {
    pub clauses: Vec<ClauseResult>,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McEstimates {
    pub seed: u64,
    pub trials: u64,
    /// E[e^{-r t_m}] at the reference rate (player 0's).
    pub discount: McEstimate,
    /// E[e^{-rho r t_m}] at the damped reference rate, rho = 1 - v_lo/c.
    pub discount_rho: McEstimate,
    pub payoffs: Vec<McEstimate>,
    pub provider_freq: Vec<McEstimate>,
    pub never_freq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Hazard,
    Cost,
    Rate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompStaticsVerdict {
    pub pair: (usize, usize),
    pub relation: Relation,
    /// False when the stated parameter relation does not hold for the pair.
    pub applicable: bool,
    pub holds: bool,
    /// Minimum ordered gap over the sampled common domain (signed in the
    /// expected direction; for the equal case, the max absolute deviation).
    pub min_gap: f64,
    pub points: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub lemma1: Lemma1Audit,
    pub best_response_eps: Option<f64>,
    pub mc: Option<McEstimates>,
    pub comp_statics: Vec<CompStaticsVerdict>,
}

const EQ3_RESIDUAL_TOL: f64 = 1e-7;
const SLOPE_TOL: f64 = -1e-12;

/// Six-clause structural audit of an equilibrium profile. Failures are
/// report entries, not errors.
pub fn audit_lemma1(eq: &EquilibriumSolution, game: &GameSpec) -> Result<Lemma1Audit, ModelError> {
    let n = game.players.len();
    let mut clauses = Vec::new();

    // (i) only types above cost ever provide: curves stay above cost
    let mut floor_margin = f64::INFINITY;
    for c in &eq.curves {
        let ci = game.players[c.player].c;
        for &v in &c.values {
            floor_margin = floor_margin.min(v - ci);
        }
    }
    clauses.push(ClauseResult {
        name: "curves_above_cost".into(),
        pass: floor_margin > 0.0,
        margin: floor_margin,
        detail: format!("min over curves of (value - cost) = {floor_margin:.3e}"),
    });

    // (ii) convergence to cost at the horizon, within the convergence band
    let mut conv_margin = f64::INFINITY;
    for c in &eq.curves {
        let p = &game.players[c.player];
        let band = 2e-6 * (p.dist.v_hi() - p.c);
        let last = *c.values.last().unwrap();
        conv_margin = conv_margin.min(band - (last - p.c));
    }
    clauses.push(ClauseResult {
        name: "converges_to_cost".into(),
        pass: conv_margin >= 0.0,
        margin: conv_margin,
        detail: format!("min over curves of (2e-6 gap band - terminal excess) = {conv_margin:.3e}"),
    });

    // (iii) at most N-2 strict waiters
    let waiters = eq.curves.iter().filter(|c| c.strict_wait > 0.0).count();
    let w_margin = n as f64 - 2.0 - waiters as f64;
    clauses.push(ClauseResult {
        name: "strict_waiter_count".into(),
        pass: waiters + 2 <= n,
        margin: w_margin,
        detail: format!("{waiters} strict waiters among {n} players"),
    });

    // (iv) at most one instant-exit player
    let exits = eq.instant_exit.len();
    clauses.push(ClauseResult {
        name: "single_instant_exit".into(),
        pass: exits <= 1,
        margin: 1.0 - exits as f64,
        detail: format!("{exits} instant-exit players"),
    });

    // (v) strict decrease of every curve
    let mut max_slope = f64::NEG_INFINITY;
    for c in &eq.curves {
        for k in 0..c.ts.len().saturating_sub(1) {
            let dt = c.ts[k + 1] - c.ts[k];
            if dt > 1e-14 {
                max_slope = max_slope.max((c.values[k + 1] - c.values[k]) / dt);
            }
        }
    }
    clauses.push(ClauseResult {
        name: "strictly_decreasing".into(),
        pass: max_slope < SLOPE_TOL,
        margin: SLOPE_TOL - max_slope,
        detail: format!("max finite-difference slope = {max_slope:.3e}"),
    });

    // (vi) dynamics and indifference residuals along the curves
    let (r3, r4) = dynamics_residuals(eq, game)?;
    let resid = r3.max(r4);
    clauses.push(ClauseResult {
        name: "dynamics_residuals".into(),
        pass: resid < EQ3_RESIDUAL_TOL,
        margin: EQ3_RESIDUAL_TOL - resid,
        detail: format!(
            "max curve-system residual = {r3:.3e}, max indifference residual = {r4:.3e}"
        ),
    });

    let pass = clauses.iter().all(|c| c.pass);
    Ok(Lemma1Audit { clauses, pass })
}

/// Worst residual of the curve dynamics and of the per-player indifference
/// condition along the sampled curves, using 5-point stencil derivatives on
/// timestamps shared by every active player of each epoch.
fn dynamics_residuals(
    eq: &EquilibriumSolution,
    game: &GameSpec,
) -> Result<(f64, f64), ModelError> {
    let sets = eq.active_sets();
    let mut max_r3 = 0.0f64;
    let mut max_r4 = 0.0f64;
    for (k, set) in sets.iter().enumerate() {
        if set.len() < 2 {
            continue;
        }
        let t_lo = eq.divisions[k].t;
        let t_hi = if k + 1 < eq.divisions.len() {
            eq.divisions[k + 1].t
        } else {
            eq.horizon
        };
        // timestamps of the last entrant, restricted to the epoch and present
        // in every other active curve
        let anchor = &eq.curves[*set.last().unwrap()];
        let mut ts: Vec<f64> = Vec::new();
        let mut vals: Vec<Vec<f64>> = vec![Vec::new(); set.len()];
        'outer: for &t in anchor
            .ts
            .iter()
            .filter(|&&t| t >= t_lo - 1e-12 && t <= t_hi + 1e-12)
        {
            let mut row = Vec::with_capacity(set.len());
            for &pi in set.iter() {
                let c = &eq.curves[pi];
                match c.ts.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
                    Ok(j) => row.push(c.values[j]),
                    Err(j) => {
                        let near = |j: usize| {
                            j < c.ts.len() && (c.ts[j] - t).abs() < 1e-12
                        };
                        if near(j) {
                            row.push(c.values[j]);
                        } else if j > 0 && near(j - 1) {
                            row.push(c.values[j - 1]);
                        } else {
                            continue 'outer;
                        }
                    }
                }
            }
            ts.push(t);
            for (q, v) in row.into_iter().enumerate() {
                vals[q].push(v);
            }
        }
        if ts.len() < 6 {
            continue;
        }
        let specs: Vec<&crate::model::PlayerSpec> =
            set.iter().map(|&pi| &game.players[pi]).collect();
        let counts = vec![1usize; set.len()];
        for j in 2..ts.len() - 2 {
            let window = &ts[j - 2..j + 3];
            let values: Vec<f64> = vals.iter().map(|v| v[j]).collect();
            let mut rhs = vec![0.0; set.len()];
            if weighted_rhs(&values, &specs, &counts, &mut rhs).is_err() {
                continue;
            }
            let mut dlog_f = vec![0.0; set.len()];
            let mut dphi = vec![0.0; set.len()];
            for (q, v) in vals.iter().enumerate() {
                dphi[q] = lagrange_derivative(window, &v[j - 2..j + 3], 2);
                let e = specs[q].dist.eval(values[q])?;
                dlog_f[q] = e.density / e.cdf.max(1e-300) * dphi[q];
            }
            for q in 0..set.len() {
                max_r3 = max_r3.max((dphi[q] - rhs[q]).abs());
            }
            let state = CurveState {
                t: ts[j],
                values: values.clone(),
                active_set: set.clone(),
            };
            if let Ok(res) = indifference_residual(&state, game, &dlog_f) {
                for r in res {
                    max_r4 = max_r4.max(r.abs());
                }
            }
        }
    }
    Ok((max_r3, max_r4))
}

/// Worst payoff improvement any sampled type can achieve over a log-spaced
/// deviation grid on [0, 3T] plus {0, infinity}. The equilibrium is
/// certified at the returned epsilon.
pub fn best_response_certificate(
    eq: &EquilibriumSolution,
    game: &GameSpec,
    type_samples: usize,
    deviation_grid: usize,
) -> Result<f64, WelfareError> {
    assert!(type_samples >= 10 && deviation_grid >= 10, "counts must be >= 10");
    let t_max = 3.0 * eq.horizon;
    // log-spaced grid resolving early times, plus the endpoints
    let mut grid: Vec<f64> = vec![0.0];
    let t_min = eq.horizon * 1e-4;
    for k in 0..deviation_grid {
        let s = k as f64 / (deviation_grid - 1) as f64;
        grid.push(t_min * (t_max / t_min).powf(s));
    }
    grid.push(f64::INFINITY);

    let mut worst: f64 = 0.0;
    for i in 0..game.players.len() {
        let p = &game.players[i];
        let dist = stopping_distribution(eq, game, Some(i))?;
        let kernel = DiscountKernel::new(&dist, p.r);
        let curve = &eq.curves[i];
        let interp = CurveInterp::new(curve.ts.clone(), curve.values.clone());
        let (v_lo, v_hi) = (p.dist.v_lo(), p.dist.v_hi());
        let exit = eq.instant_exit.iter().find(|x| x.player == i);
        for s in 0..type_samples {
            let v = v_lo + (v_hi - v_lo) * (s as f64 + 0.5) / type_samples as f64;
            // the equilibrium time of type v
            let t_star = if v <= p.c {
                f64::INFINITY
            } else if let Some(x) = exit.filter(|x| v > x.threshold) {
                let _ = x;
                0.0
            } else if v >= interp.v_first() {
                curve.strict_wait
            } else if v <= interp.v_last() {
                f64::INFINITY
            } else {
                interp.invert_decreasing(v).unwrap_or(eq.horizon)
            };
            let base = payoff_with_kernel(p.c, &kernel, v, t_star);
            for &t in &grid {
                let gain = payoff_with_kernel(p.c, &kernel, v, t) - base;
                worst = worst.max(gain);
            }
        }
    }
    Ok(worst)
}

/// Equilibrium strategy map of one player: provision time as a function of
/// the drawn value.
struct StrategyMap {
    c: f64,
    exit_threshold: Option<f64>,
    strict_wait: f64,
    interp: CurveInterp,
}

impl StrategyMap {
    fn time(&self, v: f64) -> f64 {
        if v <= self.c {
            return f64::INFINITY;
        }
        if let Some(u) = self.exit_threshold {
            if v > u {
                return 0.0;
            }
        }
        if v >= self.interp.v_first() {
            return self.strict_wait;
        }
        if v <= self.interp.v_last() {
            // types between cost and the curve terminus provide far beyond
            // the horizon; their discounted impact is negligible
            return f64::INFINITY;
        }
        self.interp
            .invert_decreasing(v)
            .unwrap_or(f64::INFINITY)
    }
}

/// Inverse-CDF sampling by bisection on the distribution's CDF.
fn sample_value(p: &crate::model::PlayerSpec, u: f64) -> f64 {
    let (mut lo, mut hi) = (p.dist.v_lo(), p.dist.v_hi());
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let cdf = p.dist.eval(mid).map(|e| e.cdf).unwrap_or(1.0);
        if cdf < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Seeded Monte Carlo play of the equilibrium: draws types, applies the
/// strategies, splits provision cost among simultaneous providers, and
/// reports discount factors, payoffs, and provider frequencies with standard
/// errors. Shards are deterministically seeded, so results are reproducible
/// regardless of thread scheduling.
pub fn simulate(
    eq: &EquilibriumSolution,
    game: &GameSpec,
    trials: u64,
    seed: u64,
) -> Result<McEstimates, WelfareError> {
    assert!(trials >= 1);
    let n = game.players.len();
    if eq.curves.len() != n {
        return Err(WelfareError::Mismatch {
            eq: eq.curves.len(),
            game: n,
        });
    }
    let strategies: Vec<StrategyMap> = (0..n)
        .map(|i| StrategyMap {
            c: game.players[i].c,
            exit_threshold: eq
                .instant_exit
                .iter()
                .find(|x| x.player == i)
                .map(|x| x.threshold),
            strict_wait: eq.curves[i].strict_wait,
            interp: CurveInterp::new(eq.curves[i].ts.clone(), eq.curves[i].values.clone()),
        })
        .collect();
    let r0 = game.players[0].r;
    let rho0 = 1.0 - game.players[0].dist.v_lo() / game.players[0].c;

    const SHARD: u64 = 1 << 14;
    let shards = trials.div_ceil(SHARD);
    #[derive(Clone, Default)]
    struct Acc {
        n: u64,
        disc: (f64, f64),
        disc_rho: (f64, f64),
        pay: Vec<(f64, f64)>,
        prov: Vec<(f64, f64)>,
        never: u64,
    }
    let total = (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s.wrapping_mul(0x9E3779B97F4A7C15)));
            let count = SHARD.min(trials - s * SHARD);
            let mut acc = Acc {
                pay: vec![(0.0, 0.0); n],
                prov: vec![(0.0, 0.0); n],
                ..Default::default()
            };
            let mut vs = vec![0.0; n];
            let mut times = vec![0.0; n];
            for _ in 0..count {
                for i in 0..n {
                    vs[i] = sample_value(&game.players[i], rng.gen::<f64>());
                    times[i] = strategies[i].time(vs[i]);
                }
                let t_m = times.iter().copied().fold(f64::INFINITY, f64::min);
                let (d, d_rho) = if t_m.is_finite() {
                    ((-r0 * t_m).exp(), (-rho0 * r0 * t_m).exp())
                } else {
                    (0.0, 0.0)
                };
                acc.disc.0 += d;
                acc.disc.1 += d * d;
                acc.disc_rho.0 += d_rho;
                acc.disc_rho.1 += d_rho * d_rho;
                if t_m.is_finite() {
                    let providers: Vec<usize> =
                        (0..n).filter(|&i| times[i] == t_m).collect();
                    let m = providers.len() as f64;
                    for i in 0..n {
                        let disc_i = (-game.players[i].r * t_m).exp();
                        let mut gain = vs[i] * disc_i;
                        if providers.contains(&i) {
                            gain -= game.players[i].c / m * disc_i;
                            acc.prov[i].0 += 1.0;
                            acc.prov[i].1 += 1.0;
                        }
                        acc.pay[i].0 += gain;
                        acc.pay[i].1 += gain * gain;
                    }
                } else {
                    acc.never += 1;
                }
                acc.n += 1;
            }
            acc
        })
        .reduce(
            || Acc {
                pay: vec![(0.0, 0.0); n],
                prov: vec![(0.0, 0.0); n],
                ..Default::default()
            },
            |mut a, b| {
                a.n += b.n;
                a.disc.0 += b.disc.0;
                a.disc.1 += b.disc.1;
                a.disc_rho.0 += b.disc_rho.0;
                a.disc_rho.1 += b.disc_rho.1;
                a.never += b.never;
                for i in 0..n {
                    a.pay[i].0 += b.pay[i].0;
                    a.pay[i].1 += b.pay[i].1;
                    a.prov[i].0 += b.prov[i].0;
                    a.prov[i].1 += b.prov[i].1;
                }
                a
            },
        );

    let est = |sum: f64, sumsq: f64| {
        let m = total.n as f64;
        let mean = sum / m;
        let var = (sumsq / m - mean * mean).max(0.0);
        McEstimate {
            mean,
            se: (var / m).sqrt(),
        }
    };
    Ok(McEstimates {
        seed,
        trials: total.n,
        discount: est(total.disc.0, total.disc.1),
        discount_rho: est(total.disc_rho.0, total.disc_rho.1),
        payoffs: total.pay.iter().map(|&(s, q)| est(s, q)).collect(),
        provider_freq: total.prov.iter().map(|&(s, q)| est(s, q)).collect(),
        never_freq: total.never as f64 / total.n as f64,
    })
}

/// Verifies the pointwise curve ordering implied by a parameter relation
/// between two players, over 500 points of their common domain.
pub fn comparative_statics_check(
    game: &GameSpec,
    eq: &EquilibriumSolution,
    pair: (usize, usize),
    relation: Relation,
) -> Result<CompStaticsVerdict, ModelError> {
    let (a, b) = pair;
    let pa = &game.players[a];
    let pb = &game.players[b];

    // hazard comparison on the shared value support
    let lo = pa.dist.v_lo().max(pb.dist.v_lo());
    let hi = pa.dist.v_hi().min(pb.dist.v_hi());
    let mut h_sign = 0i32; // +1: a dominates, -1: b dominates, 0: equal
    let mut h_mixed = false;
    for k in 1..100 {
        let v = lo + (hi - lo) * k as f64 / 100.0;
        let ha = pa.dist.eval(v)?.hazard;
        let hb = pb.dist.eval(v)?.hazard;
        if !ha.is_finite() || !hb.is_finite() {
            continue;
        }
        let d = ha - hb;
        if d.abs() > 1e-8 * hb.abs().max(1.0) {
            let s = if d > 0.0 { 1 } else { -1 };
            if h_sign == 0 {
                h_sign = s;
            } else if h_sign != s {
                h_mixed = true;
            }
        }
    }
    let c_cmp = (pa.c - pb.c).partial_cmp(&0.0).unwrap();
    let r_cmp = (pa.r - pb.r).partial_cmp(&0.0).unwrap();
    let equal_c = pa.c == pb.c;
    let equal_r = pa.r == pb.r;

    // expected sign of phi_a - phi_b on the common domain (0 = identical)
    use std::cmp::Ordering::*;
    let (applicable, expect, why): (bool, i32, String) = match relation {
        Relation::Hazard => {
            if h_mixed {
                (false, 0, "hazard ordering is mixed".into())
            } else {
                // a's hazard dominates => a's curve is lower
                (true, -h_sign, format!("hazard sign {h_sign}"))
            }
        }
        Relation::Cost => {
            if h_mixed || h_sign != 0 {
                (false, 0, "hazards differ".into())
            } else if !equal_r {
                (false, 0, "rates differ".into())
            } else {
                match c_cmp {
                    Greater => (true, 1, "c_a > c_b".into()),
                    Less => (true, -1, "c_a < c_b".into()),
                    Equal => (false, 0, "costs equal".into()),
                }
            }
        }
        Relation::Rate => {
            if h_mixed || h_sign != 0 {
                (false, 0, "hazards differ".into())
            } else if !equal_c {
                (false, 0, "costs differ".into())
            } else {
                match r_cmp {
                    Greater => (true, -1, "r_a > r_b".into()),
                    Less => (true, 1, "r_a < r_b".into()),
                    Equal => (false, 0, "rates equal".into()),
                }
            }
        }
    };
    if !applicable {
        return Ok(CompStaticsVerdict {
            pair,
            relation,
            applicable: false,
            holds: false,
            min_gap: f64::NAN,
            points: 0,
            detail: format!("inapplicable: {why}"),
        });
    }

    let ca = &eq.curves[a];
    let cb = &eq.curves[b];
    let ia = CurveInterp::new(ca.ts.clone(), ca.values.clone());
    let ib = CurveInterp::new(cb.ts.clone(), cb.values.clone());
    let t0 = ca.strict_wait.max(cb.strict_wait);
    let t1 = ia.t_max().min(ib.t_max());
    let points = 500usize;
    let mut min_gap = f64::INFINITY;
    let mut max_abs = 0.0f64;
    for k in 0..points {
        let t = t0 + (t1 - t0) * (k as f64 + 0.5) / points as f64;
        let d = ia.eval(t) - ib.eval(t);
        min_gap = min_gap.min(expect as f64 * d);
        max_abs = max_abs.max(d.abs());
    }
    let (holds, gap) = if expect == 0 {
        (max_abs < 1e-8, max_abs)
    } else {
        (min_gap > 0.0, min_gap)
    };
    Ok(CompStaticsVerdict {
        pair,
        relation,
        applicable: true,
        holds,
        min_gap: gap,
        points,
        detail: why,
    })
}
