//! Equilibrium computation by shooting: a monotone fixed point determines
//! the boundary values of the all-active phase, an outer bisection pins the
//! first bound touch, and backward induction places the division times.

use crate::model::{GameSpec, ModelError, PlayerSpec};
use crate::odecore::{
    self, conv_band, divergence_cap, integrate_system, weighted_rhs, Event, EventDirection,
    EventGuard, EventId, Integration, IntegrationOptions, OdeError, SampledCurve, TerminalTag,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("bracket failure in {context}: no sign change over [{lo}, {hi}]")]
    BracketFailure { context: String, lo: f64, hi: f64 },
    #[error("no bound touch found during backward induction (remaining players: {remaining})")]
    NoDivision { remaining: usize },
    #[error("fixed point did not settle within {0} sweeps")]
    FixedPointStall(usize),
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Integration horizon for the all-active phase; derived from the game
    /// when `None`.
    pub horizon: Option<f64>,
    /// Samples per curve segment in the assembled solution.
    pub samples_per_epoch: usize,
    /// Relative tolerance of the boundary-value fixed point.
    pub fp_tol: f64,
    pub max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rtol: 1e-9,
            atol: 1e-11,
            horizon: None,
            samples_per_epoch: 600,
            fp_tol: 1e-12,
            max_sweeps: 200,
        }
    }
}

/// Probability atom of immediate provision at `t = 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstantExit {
    pub player: usize,
    /// The player provides immediately iff their value exceeds `threshold`.
    pub threshold: f64,
    pub prob: f64,
}

/// A time at which one or more players' strict-waiting phase ends.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Division {
    pub t: f64,
    pub entering: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub divisions: Vec<Division>,
    pub instant_exit: Vec<InstantExit>,
    /// One curve per player, ordered by player index.
    pub curves: Vec<SampledCurve>,
    pub horizon: f64,
}

impl EquilibriumSolution {
    /// Active player sets per epoch, parallel to `divisions`.
    pub fn active_sets(&self) -> Vec<Vec<usize>> {
        let mut sets = Vec::new();
        let mut cur: Vec<usize> = Vec::new();
        for d in &self.divisions {
            cur.extend(d.entering.iter().copied());
            cur.sort_unstable();
            sets.push(cur.clone());
        }
        sets
    }
}

/// Boundary values of the all-active phase and which classes touch their
/// bound there.
#[derive(Debug, Clone)]
pub struct BoundarySelection {
    /// Boundary value per class at the start of the all-active phase.
    pub m: Vec<f64>,
    /// Classes at their bound (within tolerance).
    pub touched: Vec<usize>,
    pub pivot: usize,
}

/// Groups identical players (same cost, rate, and distribution) into
/// classes. Returns (class of each player, representative player per class,
/// class sizes).
pub fn classify(game: &GameSpec) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut reps: Vec<usize> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut class_of = Vec::with_capacity(game.players.len());
    for (i, p) in game.players.iter().enumerate() {
        if let Some(k) = reps.iter().position(|&r| game.players[r] == *p) {
            class_of.push(k);
            counts[k] += 1;
        } else {
            class_of.push(reps.len());
            reps.push(i);
            counts.push(1);
        }
    }
    (class_of, reps, counts)
}

/// Default horizon for the all-active phase.
pub fn default_horizon(game: &GameSpec) -> f64 {
    let n = game.players.len();
    let mut rate = f64::INFINITY;
    for p in &game.players {
        let rho = 1.0 - p.dist.v_lo() / p.c;
        rate = rate.min(p.r * rho.max(1e-6));
    }
    20.0 * (n as f64 - 1.0).max(1.0) / rate
}

const TOUCH_TOL: f64 = 1e-12;
const DROP_TOL_FRAC: f64 = 1e-7;

struct ClassSystem<'a> {
    specs: Vec<&'a PlayerSpec>,
    counts: Vec<usize>,
}

impl<'a> ClassSystem<'a> {
    fn new(game: &'a GameSpec) -> Self {
        let (_, reps, counts) = classify(game);
        ClassSystem {
            specs: reps.iter().map(|&i| &game.players[i]).collect(),
            counts,
        }
    }

    fn ode_opts(&self, opts: &SolverOptions) -> IntegrationOptions {
        IntegrationOptions {
            rtol: opts.rtol,
            atol: opts.atol,
            ..Default::default()
        }
    }

    /// Largest bound-to-cost gap over the classes.
    fn max_gap(&self) -> f64 {
        self.specs
            .iter()
            .map(|p| p.dist.v_hi() - p.c)
            .fold(0.0, f64::max)
    }

    /// Forward integration from `m` with divergence halting only; returns
    /// the component values at the halt time (cap, floor, or the horizon).
    fn probe(
        &self,
        m: &[f64],
        horizon: f64,
        opts: &SolverOptions,
    ) -> Result<Vec<f64>, SolverError> {
        let gap = self.max_gap();
        let mut events = Vec::new();
        for (k, p) in self.specs.iter().enumerate() {
            events.push(Event {
                guard: EventGuard::Level {
                    coord: k,
                    // strictly above the start so divergence, not the
                    // starting level, trips the guard
                    level: divergence_cap(p).max(m[k] + gap),
                },
                direction: EventDirection::Rising,
                id: EventId::Cap(k),
            });
            events.push(Event {
                guard: EventGuard::Level {
                    coord: k,
                    level: odecore::divergence_floor(p),
                },
                direction: EventDirection::Falling,
                id: EventId::Floor(k),
            });
        }
        let rhs =
            |_t: f64, y: &[f64], out: &mut [f64]| weighted_rhs(y, &self.specs, &self.counts, out);
        match integrate_system(rhs, 0.0, m, horizon, &events, &self.ode_opts(opts)) {
            Ok(r) => Ok(r.y_end),
            // finite-time blow-up inside the extended region: treat the
            // state at the failed step as the halt state
            Err(OdeError::StepUnderflow { y, .. }) => Ok(y),
            Err(e) => Err(e.into()),
        }
    }

    /// Residual of class `target` at boundary `m`: terminal value minus the
    /// convergence band. Monotone increasing in `m[target]`.
    fn residual(
        &self,
        m: &[f64],
        target: usize,
        horizon: f64,
        opts: &SolverOptions,
    ) -> Result<f64, SolverError> {
        let y = self.probe(m, horizon, opts)?;
        Ok(y[target] - conv_band(self.specs[target]))
    }

    /// Solves the non-pivot boundary values holding `m[pivot]` fixed, by
    /// Gauss-Seidel sweeps of warm-started bisections.
    fn solve_given_pivot(
        &self,
        pivot: f64,
        pivot_class: usize,
        m: &mut [f64],
        horizon: f64,
        opts: &SolverOptions,
    ) -> Result<(), SolverError> {
        m[pivot_class] = pivot;
        let nc = self.specs.len();
        if nc == 1 {
            return Ok(());
        }
        // pivot at its cost band forces every component to its own band
        if pivot <= conv_band(self.specs[pivot_class]) * (1.0 + 1e-12) {
            for k in 0..nc {
                if k != pivot_class {
                    m[k] = conv_band(self.specs[k]);
                }
            }
            return Ok(());
        }
        // relative movement of the previous sweep: drives the progressive
        // bisection tolerance and the warm bracket width
        let mut prev_move = 0.1f64;
        // sweep history for Aitken extrapolation of the linearly
        // convergent Gauss-Seidel iteration
        let mut hist: Vec<Vec<f64>> = Vec::new();
        for _sweep in 0..opts.max_sweeps {
            let tol_rel = (0.002 * prev_move).clamp(opts.fp_tol, 1e-3);
            let mut max_move: f64 = 0.0;
            for k in 0..nc {
                if k == pivot_class {
                    continue;
                }
                let p = self.specs[k];
                let scale = p.dist.v_hi() - p.c;
                let band = conv_band(p);
                let hi_max = p.c + 10.0 * self.max_gap();
                let prev = m[k];
                let mut width = (4.0 * prev_move * scale).max(64.0 * opts.fp_tol * scale);
                let (mut lo, mut hi);
                loop {
                    lo = (prev - width).max(band);
                    hi = (prev + width).min(hi_max);
                    m[k] = lo;
                    let r_lo = self.residual(m, k, horizon, opts)?;
                    m[k] = hi;
                    let r_hi = self.residual(m, k, horizon, opts)?;
                    if r_lo <= 0.0 && r_hi >= 0.0 {
                        break;
                    }
                    if r_lo > 0.0 && lo <= band {
                        // root pinned at the band
                        hi = lo;
                        break;
                    }
                    if r_hi < 0.0 && hi >= hi_max {
                        // root pinned at the bracket ceiling; the outer
                        // bisection will move the pivot down
                        lo = hi;
                        break;
                    }
                    width *= 4.0;
                }
                while hi - lo > tol_rel * scale {
                    let mid = 0.5 * (lo + hi);
                    m[k] = mid;
                    if self.residual(m, k, horizon, opts)? >= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                m[k] = 0.5 * (lo + hi);
                max_move = max_move.max((m[k] - prev).abs() / scale);
            }
            if max_move < 1e-10 && tol_rel <= opts.fp_tol * 1.0001 {
                return Ok(());
            }
            prev_move = max_move.max(opts.fp_tol);

            hist.push(m.to_vec());
            if hist.len() == 3 {
                // Aitken jump past the geometric tail
                let (a, b, c) = (hist[0].clone(), hist[1].clone(), hist[2].clone());
                let mut jump_rel: f64 = 0.0;
                for k in 0..nc {
                    if k == pivot_class {
                        continue;
                    }
                    let d1 = b[k] - a[k];
                    let d2 = c[k] - b[k];
                    let denom = d2 - d1;
                    if max_move > 1e-11 && denom.abs() > 1e-300 {
                        let jump = c[k] - d2 * d2 / denom;
                        let p = self.specs[k];
                        let scale = p.dist.v_hi() - p.c;
                        let hi_max = p.c + 10.0 * self.max_gap();
                        if (jump - c[k]).abs() < 200.0 * (d2.abs() + 1e-30) {
                            m[k] = jump.clamp(conv_band(p), hi_max);
                            jump_rel = jump_rel.max((m[k] - c[k]).abs() / scale);
                        }
                    }
                }
                hist.clear();
                prev_move = prev_move.max(jump_rel);
            }
        }
        Err(SolverError::FixedPointStall(opts.max_sweeps))
    }
}

/// Finds the boundary values of the all-active phase: the unique point where
/// the highest class sits exactly at its bound and none exceeds it.
pub fn just_touch(
    game: &GameSpec,
    horizon: f64,
    opts: &SolverOptions,
) -> Result<BoundarySelection, SolverError> {
    let sys = ClassSystem::new(game);
    let nc = sys.specs.len();
    let pivot = (0..nc)
        .max_by(|&a, &b| {
            let ga = sys.specs[a].dist.v_hi() - sys.specs[a].c;
            let gb = sys.specs[b].dist.v_hi() - sys.specs[b].c;
            ga.partial_cmp(&gb).unwrap()
        })
        .unwrap();

    if nc == 1 {
        let v_hi = sys.specs[0].dist.v_hi();
        return Ok(BoundarySelection {
            m: vec![v_hi],
            touched: vec![0],
            pivot,
        });
    }

    // seed the non-pivot values midway between cost and bound
    let mut m: Vec<f64> = sys
        .specs
        .iter()
        .map(|p| 0.5 * (p.c + p.dist.v_hi()))
        .collect();

    let touch = |m: &[f64]| -> f64 {
        m.iter()
            .zip(sys.specs.iter())
            .map(|(&mk, p)| mk - p.dist.v_hi())
            .fold(f64::NEG_INFINITY, f64::max)
    };

    let p0 = sys.specs[pivot];
    let scale = p0.dist.v_hi() - p0.c;
    let mut lo = conv_band(p0);
    sys.solve_given_pivot(lo, pivot, &mut m, horizon, opts)?;
    if touch(&m) > 0.0 {
        return Err(SolverError::BracketFailure {
            context: "pivot lower end already touches".into(),
            lo,
            hi: lo,
        });
    }
    let mut hi = p0.dist.v_hi();
    let mut m_hi = m.clone();
    let mut expand = 0;
    loop {
        sys.solve_given_pivot(hi, pivot, &mut m_hi, horizon, opts)?;
        if touch(&m_hi) >= 0.0 {
            break;
        }
        expand += 1;
        if expand > 5 {
            return Err(SolverError::BracketFailure {
                context: "pivot bracket expansion".into(),
                lo,
                hi,
            });
        }
        lo = hi;
        m = m_hi.clone();
        hi = p0.c + (hi - p0.c) * 2.0;
    }

    while hi - lo > TOUCH_TOL * scale {
        let mid = 0.5 * (lo + hi);
        let mut m_mid = m.clone();
        sys.solve_given_pivot(mid, pivot, &mut m_mid, horizon, opts)?;
        if touch(&m_mid) >= 0.0 {
            hi = mid;
            m_hi = m_mid;
        } else {
            lo = mid;
            m = m_mid;
        }
    }
    // use the touching side so at least one class is at its bound
    let m_star = m_hi;
    let mut touched = Vec::new();
    for (k, p) in sys.specs.iter().enumerate() {
        let drop_tol = DROP_TOL_FRAC * (p.dist.v_hi() - p.c);
        if m_star[k] >= p.dist.v_hi() - drop_tol.max(TOUCH_TOL * scale * 2.0) {
            touched.push(k);
        }
    }
    if touched.is_empty() {
        return Err(SolverError::BracketFailure {
            context: "no touching class at the just-touch point".into(),
            lo,
            hi,
        });
    }
    // clamp touched classes exactly onto their bounds
    let mut m_star = m_star;
    for &k in &touched {
        m_star[k] = sys.specs[k].dist.v_hi();
    }
    Ok(BoundarySelection {
        m: m_star,
        touched,
        pivot,
    })
}

/// One sampled epoch of the solution in shifted (sigma) time.
struct Epoch {
    classes: Vec<usize>,
    ts: Vec<f64>,
    /// values[j][k]: class `classes[k]` at time `ts[j]`
    values: Vec<Vec<f64>>,
    terminal: TerminalTag,
}

/// Computes the full equilibrium of the game.
pub fn solve_equilibrium(
    game: &GameSpec,
    opts: &SolverOptions,
) -> Result<EquilibriumSolution, SolverError> {
    game.validate()?;
    let sys = ClassSystem::new(game);
    let (class_of, _, _) = classify(game);
    let nc = sys.specs.len();

    let mut horizon = opts.horizon.unwrap_or_else(|| default_horizon(game));
    let mut boundary = just_touch(game, horizon, opts)?;
    if opts.horizon.is_none() {
        // escalate the horizon until the boundary values settle
        for _ in 0..6 {
            let longer = horizon * 1.5;
            let next = just_touch(game, longer, opts)?;
            let moved = boundary
                .m
                .iter()
                .zip(next.m.iter())
                .zip(sys.specs.iter())
                .map(|((&a, &b), p)| (a - b).abs() / (p.dist.v_hi() - p.c))
                .fold(0.0, f64::max);
            if moved < 1e-6 {
                break;
            }
            horizon = longer;
            boundary = next;
        }
    }

    let ode_opts = IntegrationOptions {
        rtol: opts.rtol,
        atol: opts.atol,
        ..Default::default()
    };

    // ---- forward tail: the all-active phase ----
    //
    // A forward run from the boundary values drifts off the converging
    // manifold (boundary error amplifies exponentially), so the tail is
    // produced by reverse shooting instead: integrate backward from the
    // convergence bands — the converging trajectory attracts in reverse
    // time — and phase-match by locating where the pivot class re-crosses
    // its boundary value. The tail is computed first so the backward
    // induction below can start from the junction state of the same
    // trajectory, keeping the assembled curves consistent across the seam.
    let (tail_epoch, junction_state) = {
        let specs = sys.specs.clone();
        let counts = sys.counts.clone();
        let probe_events = odecore::forward_events(&specs);
        let rhs = |_t: f64, y: &[f64], out: &mut [f64]| weighted_rhs(y, &specs, &counts, out);
        let probe = integrate_system(rhs, 0.0, &boundary.m, horizon, &probe_events, &ode_opts)?;
        // Start the reverse trajectory well inside the convergence band:
        // cross-class offsets in the start state decay toward the junction,
        // so a deep start keeps classes with identical hazards in lockstep.
        let band_state: Vec<f64> = specs
            .iter()
            .map(|p| p.c + 1e-9 * (p.dist.v_hi() - p.c))
            .collect();
        let pivot = boundary.pivot;
        let junction = Event {
            guard: EventGuard::Level {
                coord: pivot,
                level: boundary.m[pivot],
            },
            direction: EventDirection::Rising,
            id: EventId::BoundTouch(pivot),
        };
        let mut duration = None;
        let mut d0 = 2.0 * probe.t_end + 1.0;
        for _ in 0..6 {
            let rhs_b =
                |_t: f64, y: &[f64], out: &mut [f64]| weighted_rhs(y, &specs, &counts, out);
            let back = integrate_system(
                rhs_b,
                d0,
                &band_state,
                0.0,
                std::slice::from_ref(&junction),
                &ode_opts,
            )?;
            if let Some(h) = back.event {
                duration = Some(d0 - h.t);
                break;
            }
            d0 *= 2.0;
        }
        let (t_tail, converged) = match duration {
            Some(d) => (d, true),
            // the band is unreachable within any tried span: fall back to
            // the forward run truncated at the horizon
            None => (probe.t_end, false),
        };
        let n = 4 * opts.samples_per_epoch;
        // graded grid: the junction carries a slope kink (a class enters) and
        // nearby density limits downstream quadrature accuracy, while the far
        // tail is nearly flat
        let grid = odecore::graded_grid(t_tail, n, 4.0);
        let (mut seg, junction_state) = if converged {
            // Sample the same backward trajectory, but re-anchor the time
            // axis at the junction crossing: the measured duration carries
            // time jitter from the nearly stationary stretch at the band,
            // and pinning t = 0 to the crossing keeps that jitter where the
            // curves are flat and it cannot move values.
            let rev_grid: Vec<f64> = grid.iter().rev().copied().collect();
            let seg_opts = IntegrationOptions {
                grid: Some(rev_grid),
                ..ode_opts.clone()
            };
            let rhs2 =
                |_t: f64, y: &[f64], out: &mut [f64]| weighted_rhs(y, &specs, &counts, out);
            let pad = (1e-3 * t_tail).max(1e-3);
            let run = integrate_system(
                rhs2,
                t_tail,
                &band_state,
                -pad,
                std::slice::from_ref(&junction),
                &seg_opts,
            )?;
            let (t_c, junction_state) = match run.event {
                Some(ref h) => (h.t, h.y.clone()),
                None => (0.0, boundary.m.clone()),
            };
            let mut ts = vec![0.0];
            let mut ys = vec![junction_state.clone()];
            for (t, y) in run.ts.iter().zip(run.ys.into_iter()).rev() {
                let s = t - t_c;
                if s > 1e-12 {
                    ts.push(s);
                    ys.push(y);
                }
            }
            (
                Integration {
                    t_end: *ts.last().unwrap(),
                    y_end: ys.last().unwrap().clone(),
                    ts,
                    ys,
                    event: None,
                    n_steps: run.n_steps,
                },
                junction_state,
            )
        } else {
            let seg_opts = IntegrationOptions {
                grid: Some(grid),
                ..ode_opts.clone()
            };
            let rhs2 =
                |_t: f64, y: &[f64], out: &mut [f64]| weighted_rhs(y, &specs, &counts, out);
            let seg = integrate_system(rhs2, 0.0, &boundary.m, t_tail, &[], &seg_opts)?;
            (seg, boundary.m.clone())
        };
        // drop the flat stretch below the convergence bands: it exists only
        // to damp cross-class offsets in the reverse start state
        if let Some(j) = (0..seg.ts.len()).position(|j| {
            seg.ys[j]
                .iter()
                .zip(specs.iter())
                .all(|(&y, p)| y <= odecore::conv_band(p))
        }) {
            seg.ts.truncate(j + 1);
            seg.ys.truncate(j + 1);
        }
        // safety: keep only the strictly decreasing prefix of the samples
        let mut cut = seg.ts.len();
        for j in 1..seg.ts.len() {
            if (0..nc).any(|k| seg.ys[j][k] >= seg.ys[j - 1][k]) {
                cut = j;
                break;
            }
        }
        seg.ts.truncate(cut);
        seg.ys.truncate(cut);
        (
            Epoch {
                classes: (0..nc).collect(),
                ts: seg.ts,
                values: seg.ys,
                terminal: if converged {
                    TerminalTag::ConvergedToCost
                } else {
                    TerminalTag::TruncatedAtHorizon
                },
            },
            junction_state,
        )
    };

    // ---- backward induction over bound touches ----
    let mut active: Vec<usize> = (0..nc).collect();
    let mut values = junction_state;
    let mut sigma = 0.0f64;
    // (sigma, classes whose strict waiting ends there)
    let mut events_bwd: Vec<(f64, Vec<usize>)> = vec![(0.0, boundary.touched.clone())];
    let mut epochs: Vec<Epoch> = Vec::new();

    let retain_untouched = |active: &mut Vec<usize>, values: &mut Vec<f64>, drop: &[usize]| {
        let mut k = 0;
        active.retain(|c| {
            let keep = !drop.contains(c);
            if !keep {
                values.remove(k);
            } else {
                k += 1;
            }
            keep
        });
    };
    retain_untouched(&mut active, &mut values, &boundary.touched);

    while active.iter().map(|&k| sys.counts[k]).sum::<usize>() >= 2 {
        let specs: Vec<&PlayerSpec> = active.iter().map(|&k| sys.specs[k]).collect();
        let counts: Vec<usize> = active.iter().map(|&k| sys.counts[k]).collect();
        let events: Vec<Event> = specs
            .iter()
            .enumerate()
            .map(|(k, p)| Event {
                guard: EventGuard::Level {
                    coord: k,
                    level: p.dist.v_hi(),
                },
                direction: EventDirection::Rising,
                id: EventId::BoundTouch(k),
            })
            .collect();
        let rhs = |_t: f64, y: &[f64], out: &mut [f64]| weighted_rhs(y, &specs, &counts, out);
        let probe = integrate_system(rhs, sigma, &values, sigma - horizon, &events, &ode_opts)?;
        let hit = match probe.event {
            Some(h) => h,
            None => {
                return Err(SolverError::NoDivision {
                    remaining: counts.iter().sum(),
                })
            }
        };
        // re-run with an exact sampling grid over the located span
        let n = opts.samples_per_epoch;
        let grid: Vec<f64> = (0..=n)
            .map(|j| sigma + (hit.t - sigma) * j as f64 / n as f64)
            .collect();
        let seg_opts = IntegrationOptions {
            grid: Some(grid),
            ..ode_opts.clone()
        };
        let rhs2 = |_t: f64, y: &[f64], out: &mut [f64]| weighted_rhs(y, &specs, &counts, out);
        let seg = integrate_system(rhs2, sigma, &values, hit.t, &[], &seg_opts)?;
        epochs.push(Epoch {
            classes: active.clone(),
            ts: seg.ts.clone(),
            values: seg.ys.clone(),
            terminal: TerminalTag::TruncatedAtHorizon,
        });

        // drop every class within tolerance of its bound
        let mut dropped = Vec::new();
        for (k, &c) in active.iter().enumerate() {
            let p = sys.specs[c];
            let drop_tol = DROP_TOL_FRAC * (p.dist.v_hi() - p.c);
            if seg.y_end[k] >= p.dist.v_hi() - drop_tol {
                dropped.push(c);
            }
        }
        if dropped.is_empty() {
            return Err(SolverError::NoDivision {
                remaining: counts.iter().sum(),
            });
        }
        sigma = seg.t_end;
        values = seg.y_end.clone();
        events_bwd.push((sigma, dropped.clone()));
        retain_untouched(&mut active, &mut values, &dropped);
    }

    // leftover: at most one player left alone before the first division
    let mut instant_exit = Vec::new();
    if let Some(&leftover_class) = active.first() {
        let p = sys.specs[leftover_class];
        let u = values[0];
        let prob = 1.0 - p.dist.eval(u.min(p.dist.v_hi()))?.cdf;
        let player = class_of.iter().position(|&c| c == leftover_class).unwrap();
        instant_exit.push(InstantExit {
            player,
            threshold: u,
            prob,
        });
        events_bwd.last_mut().unwrap().1.push(leftover_class);
    }

    let sigma_min = sigma;
    epochs.push(tail_epoch);

    // ---- assemble divisions and per-player curves in shifted time ----
    let shift = -sigma_min;
    let mut divisions: Vec<Division> = events_bwd
        .iter()
        .rev()
        .map(|(s, classes)| Division {
            t: (s + shift).max(0.0),
            entering: game
                .players
                .iter()
                .enumerate()
                .filter(|(i, _)| classes.contains(&class_of[*i]))
                .map(|(i, _)| i)
                .collect(),
        })
        .collect();
    if !divisions.is_empty() {
        divisions[0].t = 0.0;
    }

    // order epochs forward in time: the backward segments reversed, then tail
    let n_bwd = epochs.len() - 1;
    let mut class_curves: Vec<(Vec<f64>, Vec<f64>, TerminalTag)> =
        vec![(Vec::new(), Vec::new(), TerminalTag::TruncatedAtHorizon); nc];
    for e in (0..n_bwd).rev() {
        let ep = &epochs[e];
        for (k, &c) in ep.classes.iter().enumerate() {
            let (ts, vs, _) = &mut class_curves[c];
            for j in (0..ep.ts.len()).rev() {
                let t = ep.ts[j] + shift;
                if ts.last().map_or(true, |&last: &f64| t > last + 1e-12) {
                    ts.push(t);
                    vs.push(ep.values[j][k]);
                }
            }
        }
    }
    let tail = epochs.last().unwrap();
    for (k, &c) in tail.classes.iter().enumerate() {
        let (ts, vs, term) = &mut class_curves[c];
        for j in 0..tail.ts.len() {
            let t = tail.ts[j] + shift;
            if ts.last().map_or(true, |&last: &f64| t > last + 1e-12) {
                ts.push(t);
                vs.push(tail.values[j][k]);
            }
        }
        *term = tail.terminal;
    }

    let curves: Vec<SampledCurve> = game
        .players
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let (ts, vs, term) = &class_curves[class_of[i]];
            SampledCurve {
                player: i,
                strict_wait: ts.first().copied().unwrap_or(0.0),
                ts: ts.clone(),
                values: vs.clone(),
                terminal: *term,
            }
        })
        .collect();

    Ok(EquilibriumSolution {
        divisions,
        instant_exit,
        curves,
        horizon: shift + epochs.last().unwrap().ts.last().copied().unwrap_or(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_ltd_game, ValueDistribution};

    fn uni_base() -> ValueDistribution {
        ValueDistribution::uniform(0.5, 2.0)
    }

    /// Symmetric closed-form curve (oracle for these tests).
    fn ultd(t: f64, m: usize, r: f64, c: f64, v_hi: f64, v_lo: f64) -> f64 {
        let lambda = 1.0 - (c - v_lo) / (v_hi - v_lo);
        let rho = 1.0 - v_lo / c;
        v_lo + (c - v_lo) / (1.0 - lambda * (-rho * r * t / (m as f64 - 1.0)).exp())
    }

    #[test]
    fn symmetric_two_player_matches_closed_form() {
        let g = make_ltd_game(&uni_base(), &[2.0, 2.0], 1.0, 1.0).unwrap();
        let sol = solve_equilibrium(&g, &SolverOptions::default()).unwrap();
        assert!(sol.instant_exit.is_empty());
        assert_eq!(sol.divisions.len(), 1);
        assert_eq!(sol.divisions[0].t, 0.0);
        assert_eq!(sol.divisions[0].entering, vec![0, 1]);
        let c = &sol.curves[0];
        assert_eq!(c.terminal, TerminalTag::ConvergedToCost);
        for (j, &t) in c.ts.iter().enumerate() {
            let exact = ultd(t, 2, 1.0, 1.0, 2.0, 0.5);
            assert!(
                (c.values[j] - exact).abs() < 1e-5,
                "t = {t}: {} vs {exact}",
                c.values[j]
            );
        }
    }

    #[test]
    fn two_player_ltd_boundary_and_atom() {
        // bounds (2.0, 1.5): both players enter at 0 on the shared curve
        // from 1.5; player 0 provides immediately with probability 1/3
        let g = make_ltd_game(&uni_base(), &[2.0, 1.5], 1.0, 1.0).unwrap();
        let sol = solve_equilibrium(&g, &SolverOptions::default()).unwrap();
        assert_eq!(sol.instant_exit.len(), 1);
        let ie = &sol.instant_exit[0];
        assert_eq!(ie.player, 0);
        assert!((ie.threshold - 1.5).abs() < 1e-6, "threshold {}", ie.threshold);
        assert!((ie.prob - 1.0 / 3.0).abs() < 1e-6, "prob {}", ie.prob);
        assert_eq!(sol.divisions.len(), 1);
        assert_eq!(sol.divisions[0].entering, vec![0, 1]);
        // both follow the symmetric curve started at 1.5
        let c = &sol.curves[1];
        for (j, &t) in c.ts.iter().enumerate() {
            let exact = ultd(t, 2, 1.0, 1.0, 1.5, 0.5);
            assert!(
                (c.values[j] - exact).abs() < 1e-5,
                "t = {t}: {} vs {exact}",
                c.values[j]
            );
        }
    }

    #[test]
    fn three_player_ltd_structure() {
        let g = make_ltd_game(&uni_base(), &[2.0, 1.5, 1.2], 1.0, 1.0).unwrap();
        let sol = solve_equilibrium(&g, &SolverOptions::default()).unwrap();
        assert_eq!(sol.instant_exit.len(), 1);
        assert_eq!(sol.instant_exit[0].player, 0);
        assert!((sol.instant_exit[0].prob - 1.0 / 3.0).abs() < 1e-6);
        assert_eq!(sol.divisions.len(), 2);
        assert_eq!(sol.divisions[0].t, 0.0);
        let mut first = sol.divisions[0].entering.clone();
        first.sort_unstable();
        assert_eq!(first, vec![0, 1]);
        assert_eq!(sol.divisions[1].entering, vec![2]);
        let d1 = 2.0 * (7.0f64 / 4.0).ln();
        assert!(
            (sol.divisions[1].t - d1).abs() < 1e-6,
            "division at {} vs {d1}",
            sol.divisions[1].t
        );
        // player 2's curve starts at its bound
        assert!((sol.curves[2].values[0] - 1.2).abs() < 1e-6);
        assert!((sol.curves[2].strict_wait - d1).abs() < 1e-6);
    }

    #[test]
    fn boundary_map_is_monotone_in_pivot() {
        // the induced non-pivot boundary value rises with the pivot value
        let g = GameSpec {
            players: vec![
                crate::model::PlayerSpec {
                    c: 1.0,
                    r: 1.0,
                    dist: ValueDistribution::uniform(0.5, 2.0),
                },
                crate::model::PlayerSpec {
                    c: 1.1,
                    r: 1.0,
                    dist: ValueDistribution::uniform(0.6, 1.9),
                },
            ],
        };
        let sys = ClassSystem::new(&g);
        let opts = SolverOptions::default();
        let horizon = default_horizon(&g);
        let mut prev = f64::NEG_INFINITY;
        for pivot in [1.3, 1.5, 1.7] {
            let mut m = vec![0.0, 1.5];
            sys.solve_given_pivot(pivot, 0, &mut m, horizon, &opts).unwrap();
            assert!(m[1] > prev, "m1({pivot}) = {} not increasing", m[1]);
            prev = m[1];
        }
    }

    #[test]
    fn asymmetric_game_solves_and_curves_decrease() {
        let g = GameSpec {
            players: vec![
                crate::model::PlayerSpec {
                    c: 1.0,
                    r: 1.0,
                    dist: ValueDistribution::uniform(0.5, 2.0),
                },
                crate::model::PlayerSpec {
                    c: 1.1,
                    r: 1.2,
                    dist: ValueDistribution::uniform(0.6, 1.9),
                },
                crate::model::PlayerSpec {
                    c: 0.9,
                    r: 0.8,
                    dist: ValueDistribution::piecewise_linear(vec![(0.4, 1.0), (2.2, 0.6)])
                        .unwrap(),
                },
            ],
        };
        let sol = solve_equilibrium(&g, &SolverOptions::default()).unwrap();
        for c in &sol.curves {
            for w in c.values.windows(2) {
                assert!(w[1] < w[0] + 1e-12, "curve not decreasing");
            }
            let p = &g.players[c.player];
            assert!(c.values[0] <= p.dist.v_hi() + 1e-9);
            assert!(*c.values.last().unwrap() > p.c - 1e-9);
        }
        // divisions sorted, first at 0
        assert_eq!(sol.divisions[0].t, 0.0);
        for w in sol.divisions.windows(2) {
            assert!(w[1].t > w[0].t);
        }
        // every player enters exactly once
        let mut seen: Vec<usize> = sol
            .divisions
            .iter()
            .flat_map(|d| d.entering.iter().copied())
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn extension_rule_does_not_move_solution() {
        let mk = |slope: Option<f64>| {
            let mut d = ValueDistribution::uniform(0.5, 2.0);
            if let Some(s) = slope {
                d = d.with_extension_slope(s);
            }
            let mut d2 = ValueDistribution::lower_truncated(d.clone(), 1.5).unwrap();
            if let Some(s) = slope {
                d2 = d2.with_extension_slope(s);
            }
            GameSpec {
                players: vec![
                    crate::model::PlayerSpec {
                        c: 1.0,
                        r: 1.0,
                        dist: d,
                    },
                    crate::model::PlayerSpec {
                        c: 1.0,
                        r: 1.0,
                        dist: d2,
                    },
                ],
            }
        };
        let a = solve_equilibrium(&mk(None), &SolverOptions::default()).unwrap();
        let b = solve_equilibrium(&mk(Some(-0.5)), &SolverOptions::default()).unwrap();
        for (ca, cb) in a.curves.iter().zip(b.curves.iter()) {
            assert!((ca.values[0] - cb.values[0]).abs() < 1e-6);
            let mid_a = ca.values[ca.values.len() / 2];
            let mid_b = cb.values[cb.values.len() / 2];
            assert!((mid_a - mid_b).abs() < 1e-6);
        }
    }

    #[test]
    fn symmetric_many_player_class_reduction() {
        let g = make_ltd_game(&uni_base(), &vec![2.0; 8], 1.0, 1.0).unwrap();
        let sol = solve_equilibrium(&g, &SolverOptions::default()).unwrap();
        assert_eq!(sol.divisions.len(), 1);
        assert_eq!(sol.divisions[0].entering.len(), 8);
        let c = &sol.curves[0];
        for (j, &t) in c.ts.iter().enumerate() {
            let exact = ultd(t, 8, 1.0, 1.0, 2.0, 0.5);
            assert!((c.values[j] - exact).abs() < 1e-5);
        }
    }
}


