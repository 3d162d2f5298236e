//! The M-player equilibrium ODE right-hand side and an adaptive embedded
//! Runge-Kutta (Dormand-Prince 5(4)) integrator with cubic-Hermite dense
//! output and bisection-based event location.

use crate::model::{GameSpec, ModelError, PlayerSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("degenerate active set: M = {0} < 2")]
    DegenerateActiveSet(usize),
    #[error("adaptive step underflow at t = {t} (h = {h})")]
    StepUnderflow { t: f64, h: f64, y: Vec<f64> },
    #[error("step budget exhausted after {0} steps")]
    MaxSteps(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// State of the curve system at one instant over an active index set.
#[derive(Debug, Clone)]
pub struct CurveState {
    pub t: f64,
    pub values: Vec<f64>,
    /// Player indices into the game, one per component of `values`.
    pub active_set: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalTag {
    ConvergedToCost,
    TruncatedAtHorizon,
}

/// One player's sampled inverse-strategy curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampledCurve {
    pub player: usize,
    /// Strict-waiting time: the curve starts at `ts[0] = strict_wait`.
    pub strict_wait: f64,
    pub ts: Vec<f64>,
    pub values: Vec<f64>,
    pub terminal: TerminalTag,
}

/// Shared core of the equilibrium ODE: curve components with multiplicities
/// (identical players collapse onto one component with `count > 1`).
pub(crate) fn weighted_rhs(
    values: &[f64],
    specs: &[&PlayerSpec],
    counts: &[usize],
    out: &mut [f64],
) -> Result<(), OdeError> {
    let m: usize = counts.iter().sum();
    if m < 2 {
        return Err(OdeError::DegenerateActiveSet(m));
    }
    let mut sum = 0.0;
    let mut f_over_cap = [0.0f64; 0].to_vec();
    f_over_cap.resize(values.len(), 0.0);
    for k in 0..values.len() {
        let s = specs[k];
        let e = s.dist.eval(values[k])?;
        let term = s.r / s.c * (values[k] - s.c);
        sum += counts[k] as f64 * term;
        // F/f, with the hazard singularity at v_lo mapping to 0
        f_over_cap[k] = if e.hazard.is_finite() {
            1.0 / e.hazard
        } else {
            0.0
        };
        out[k] = term;
    }
    let scale = 1.0 / (m as f64 - 1.0);
    for k in 0..values.len() {
        out[k] = f_over_cap[k] * (out[k] - scale * sum);
    }
    Ok(())
}

/// Eq.-3 right-hand side for the active players of `state`.
pub fn mproblem_rhs(state: &CurveState, game: &GameSpec) -> Result<Vec<f64>, OdeError> {
    let specs: Vec<&PlayerSpec> = state
        .active_set
        .iter()
        .map(|&i| &game.players[i])
        .collect();
    let counts = vec![1usize; specs.len()];
    let mut out = vec![0.0; specs.len()];
    weighted_rhs(&state.values, &specs, &counts, &mut out)?;
    Ok(out)
}

/// Indifference residual per active player: the provide-now gain minus the
/// wait-a-little gain, zero along any exact trajectory of the curve system.
pub fn indifference_residual(
    state: &CurveState,
    game: &GameSpec,
    dlog_f: &[f64],
) -> Result<Vec<f64>, OdeError> {
    let m = state.active_set.len();
    if m < 2 {
        return Err(OdeError::DegenerateActiveSet(m));
    }
    let mut out = vec![0.0; m];
    let total: f64 = dlog_f.iter().sum();
    for (i, &pi) in state.active_set.iter().enumerate() {
        let p = &game.players[pi];
        let others = total - dlog_f[i];
        out[i] = p.c * (-others) - p.r * (state.values[i] - p.c);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventDirection {
    Rising,
    Falling,
}

/// Identifies which classification boundary an event corresponds to. The
/// payload is the component index within the integrated system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventId {
    /// A component crossed its distribution upper bound (division detection).
    BoundTouch(usize),
    /// A component crossed the divergence cap.
    Cap(usize),
    /// A component fell to the lower-support floor.
    Floor(usize),
    /// A component fell through its cost level.
    CostCross(usize),
    /// All components entered their convergence bands.
    AllConverged,
}

#[derive(Debug, Clone)]
pub enum EventGuard {
    /// g = y[coord] - level
    Level { coord: usize, level: f64 },
    /// g = max_i (y[i] - levels[i])
    MaxOverLevels { levels: Vec<f64> },
}

impl EventGuard {
    fn eval(&self, y: &[f64]) -> f64 {
        match self {
            EventGuard::Level { coord, level } => y[*coord] - level,
            EventGuard::MaxOverLevels { levels } => y
                .iter()
                .zip(levels.iter())
                .map(|(a, b)| a - b)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Event {
    pub guard: EventGuard,
    pub direction: EventDirection,
    pub id: EventId,
}

impl Event {
    fn triggered(&self, g0: f64, g1: f64) -> bool {
        match self.direction {
            EventDirection::Rising => g0 < 0.0 && g1 >= 0.0,
            EventDirection::Falling => g0 > 0.0 && g1 <= 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EventHit {
    pub id: EventId,
    pub t: f64,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct IntegrationOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Absolute time tolerance for event location.
    pub event_time_tol: f64,
    /// Sample times (monotone in the integration direction). When `None`,
    /// only the endpoints are recorded.
    pub grid: Option<Vec<f64>>,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions {
            rtol: 1e-9,
            atol: 1e-11,
            max_steps: 5_000_000,
            event_time_tol: 1e-10,
            grid: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Integration {
    pub ts: Vec<f64>,
    pub ys: Vec<Vec<f64>>,
    pub t_end: f64,
    pub y_end: Vec<f64>,
    pub event: Option<EventHit>,
    pub n_steps: usize,
}

// Dormand-Prince 5(4) coefficients.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = B1 - 5179.0 / 57600.0;
const E3: f64 = B3 - 7571.0 / 16695.0;
const E4: f64 = B4 - 393.0 / 640.0;
const E5: f64 = B5 + 92097.0 / 339200.0;
const E6: f64 = B6 - 187.0 / 2100.0;
const E7: f64 = -1.0 / 40.0;

// Dense-output weights (4th-order continuous extension).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Continuous extension over one accepted step `[t0, t0+h]`.
struct DenseStep {
    t0: f64,
    h: f64,
    r1: Vec<f64>,
    r2: Vec<f64>,
    r3: Vec<f64>,
    r4: Vec<f64>,
    r5: Vec<f64>,
}

impl DenseStep {
    #[allow(clippy::too_many_arguments)]
    fn new(
        t0: f64,
        h: f64,
        y0: &[f64],
        y1: &[f64],
        k1: &[f64],
        k3: &[f64],
        k4: &[f64],
        k5: &[f64],
        k6: &[f64],
        k7: &[f64],
    ) -> Self {
        let n = y0.len();
        let mut r1 = vec![0.0; n];
        let mut r2 = vec![0.0; n];
        let mut r3 = vec![0.0; n];
        let mut r4 = vec![0.0; n];
        let mut r5 = vec![0.0; n];
        for i in 0..n {
            let ydiff = y1[i] - y0[i];
            let bspl = h * k1[i] - ydiff;
            r1[i] = y0[i];
            r2[i] = ydiff;
            r3[i] = bspl;
            r4[i] = ydiff - h * k7[i] - bspl;
            r5[i] = h
                * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
        DenseStep {
            t0,
            h,
            r1,
            r2,
            r3,
            r4,
            r5,
        }
    }

    fn eval(&self, t: f64) -> Vec<f64> {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        (0..self.r1.len())
            .map(|i| {
                self.r1[i]
                    + s * (self.r2[i] + s1 * (self.r3[i] + s * (self.r4[i] + s1 * self.r5[i])))
            })
            .collect()
    }
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t_end` (either direction),
/// halting at the first triggered event.
pub fn integrate_system<F>(
    mut rhs: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    events: &[Event],
    opts: &IntegrationOptions,
) -> Result<Integration, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), OdeError>,
{
    assert!(t_end != t0, "t_end must differ from t0");
    let dir = (t_end - t0).signum();
    let span = (t_end - t0).abs();
    let h_min = 1e-14 * span;
    let n = y0.len();

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut f_now = vec![0.0; n];
    rhs(t, &y, &mut f_now)?;

    let mut h = dir * (span / 100.0).min(1.0).max(h_min * 1e3);
    let mut err_prev: f64 = 1.0;

    let mut ts = Vec::new();
    let mut ys: Vec<Vec<f64>> = Vec::new();
    let mut grid_idx = 0usize;
    let grid = opts.grid.as_deref().unwrap_or(&[]);
    // emit any grid points at or before the start
    while grid_idx < grid.len() && dir * (grid[grid_idx] - t) <= 0.0 {
        ts.push(grid[grid_idx]);
        ys.push(y.clone());
        grid_idx += 1;
    }

    let mut g_now: Vec<f64> = events.iter().map(|e| e.guard.eval(&y)).collect();

    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut y_stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];

    let mut n_steps = 0usize;
    loop {
        if n_steps >= opts.max_steps {
            return Err(OdeError::MaxSteps(n_steps));
        }
        if dir * (t - t_end) >= 0.0 {
            break;
        }
        // do not step past the end
        if dir * (t + h - t_end) > 0.0 {
            h = t_end - t;
        }
        if h.abs() < h_min {
            return Err(OdeError::StepUnderflow { t, h, y });
        }

        // stages; an evaluation failure rejects the step with a smaller h
        let step_result: Result<f64, OdeError> = (|| {
            for i in 0..n {
                y_stage[i] = y[i] + h * A21 * f_now[i];
            }
            rhs(t + h / 5.0, &y_stage, &mut k2)?;
            for i in 0..n {
                y_stage[i] = y[i] + h * (A31 * f_now[i] + A32 * k2[i]);
            }
            rhs(t + 3.0 * h / 10.0, &y_stage, &mut k3)?;
            for i in 0..n {
                y_stage[i] = y[i] + h * (A41 * f_now[i] + A42 * k2[i] + A43 * k3[i]);
            }
            rhs(t + 4.0 * h / 5.0, &y_stage, &mut k4)?;
            for i in 0..n {
                y_stage[i] =
                    y[i] + h * (A51 * f_now[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            rhs(t + 8.0 * h / 9.0, &y_stage, &mut k5)?;
            for i in 0..n {
                y_stage[i] = y[i]
                    + h * (A61 * f_now[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            rhs(t + h, &y_stage, &mut k6)?;
            for i in 0..n {
                y_new[i] = y[i]
                    + h * (B1 * f_now[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
            }
            rhs(t + h, &y_new, &mut k7)?;
            let mut err_sq = 0.0;
            for i in 0..n {
                let e = h
                    * (E1 * f_now[i]
                        + E3 * k3[i]
                        + E4 * k4[i]
                        + E5 * k5[i]
                        + E6 * k6[i]
                        + E7 * k7[i]);
                let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
                err_sq += (e / sc) * (e / sc);
            }
            Ok((err_sq / n as f64).sqrt())
        })();

        n_steps += 1;
        let err = match step_result {
            Ok(e) => e,
            Err(OdeError::Model(_)) => {
                // stage left the evaluable domain; retry with a smaller step
                h *= 0.25;
                continue;
            }
            Err(e) => return Err(e),
        };

        if !err.is_finite() {
            h *= 0.25;
            continue;
        }
        if err > 1.0 {
            h *= (0.9 * err.powf(-0.2)).max(0.2);
            continue;
        }

        // accepted
        let t_new = t + h;
        let dense = DenseStep::new(t, h, &y, &y_new, &f_now, &k3, &k4, &k5, &k6, &k7);
        let g_new: Vec<f64> = events.iter().map(|e| e.guard.eval(&y_new)).collect();

        // find the earliest triggered event on this step
        let mut hit: Option<(f64, EventId)> = None;
        for (ei, ev) in events.iter().enumerate() {
            if ev.triggered(g_now[ei], g_new[ei]) {
                // bisect on the dense output
                let (mut a, mut b) = (t, t_new);
                while (b - a).abs() > opts.event_time_tol {
                    let mid = 0.5 * (a + b);
                    let ym = dense.eval(mid);
                    let gm = ev.guard.eval(&ym);
                    let crossed = match ev.direction {
                        EventDirection::Rising => gm >= 0.0,
                        EventDirection::Falling => gm <= 0.0,
                    };
                    if crossed {
                        b = mid;
                    } else {
                        a = mid;
                    }
                }
                let te = 0.5 * (a + b);
                match &hit {
                    Some((th, _)) if dir * (te - th) >= 0.0 => {}
                    _ => hit = Some((te, ev.id)),
                }
            }
        }

        let step_stop = hit.map(|(te, _)| te).unwrap_or(t_new);

        // emit grid samples inside (t, step_stop]
        while grid_idx < grid.len() && dir * (grid[grid_idx] - step_stop) <= 0.0 {
            let tg = grid[grid_idx];
            if dir * (tg - t) > 0.0 {
                ts.push(tg);
                ys.push(dense.eval(tg));
            }
            grid_idx += 1;
        }

        if let Some((te, id)) = hit {
            let ye = dense.eval(te);
            ts.push(te);
            ys.push(ye.clone());
            return Ok(Integration {
                ts,
                ys,
                t_end: te,
                y_end: ye.clone(),
                event: Some(EventHit { id, t: te, y: ye }),
                n_steps,
            });
        }

        t = t_new;
        std::mem::swap(&mut y, &mut y_new);
        std::mem::swap(&mut f_now, &mut k7); // FSAL
        g_now = g_new;

        // PI step-size controller
        let fac = 0.9 * err.max(1e-10).powf(-0.14) * err_prev.max(1e-10).powf(0.08);
        h *= fac.clamp(0.2, 5.0);
        err_prev = err.max(1e-10);
    }

    ts.push(t);
    ys.push(y.clone());
    Ok(Integration {
        ts,
        ys,
        t_end: t,
        y_end: y,
        event: None,
        n_steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Relative convergence band: a curve counts as converged to cost inside
/// `c + CONV_BAND_FRAC * (v_hi - c)`.
pub const CONV_BAND_FRAC: f64 = 1e-6;
/// Divergence cap: `v_hi + CAP_GAP_FACTOR * (v_hi - c)`.
pub const CAP_GAP_FACTOR: f64 = 2.0;
/// Divergence floor offset above `v_lo`.
pub const FLOOR_OFFSET: f64 = 1e-9;

/// A sampling grid on `[0, span]` with points clustered at 0: spacing grows
/// geometrically by a total factor of about `e^stretch` across the span.
/// Used where a curve has a kink or steep region at the segment start and
/// flattens out toward the end.
pub fn graded_grid(span: f64, n: usize, stretch: f64) -> Vec<f64> {
    let denom = stretch.exp_m1();
    (0..=n)
        .map(|j| span * (stretch * j as f64 / n as f64).exp_m1() / denom)
        .collect()
}

pub fn conv_band(p: &PlayerSpec) -> f64 {
    p.c + CONV_BAND_FRAC * (p.dist.v_hi() - p.c)
}

pub fn divergence_cap(p: &PlayerSpec) -> f64 {
    p.dist.v_hi() + CAP_GAP_FACTOR * (p.dist.v_hi() - p.c)
}

pub fn divergence_floor(p: &PlayerSpec) -> f64 {
    p.dist.v_lo() + FLOOR_OFFSET
}

/// Classification events for a forward trajectory of the given components.
pub fn forward_events(specs: &[&PlayerSpec]) -> Vec<Event> {
    let mut evs = Vec::new();
    evs.push(Event {
        guard: EventGuard::MaxOverLevels {
            levels: specs.iter().map(|p| conv_band(p)).collect(),
        },
        direction: EventDirection::Falling,
        id: EventId::AllConverged,
    });
    for (k, p) in specs.iter().enumerate() {
        evs.push(Event {
            guard: EventGuard::Level {
                coord: k,
                level: divergence_cap(p),
            },
            direction: EventDirection::Rising,
            id: EventId::Cap(k),
        });
        evs.push(Event {
            guard: EventGuard::Level {
                coord: k,
                level: divergence_floor(p),
            },
            direction: EventDirection::Falling,
            id: EventId::Floor(k),
        });
    }
    evs
}

/// Division-detection events for a backward trajectory.
pub fn backward_events(specs: &[&PlayerSpec]) -> Vec<Event> {
    specs
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
        .collect()
}

/// Integrates the curve system of `initial.active_set` to `t_end`, with the
/// standard classification events for the requested direction. Returns one
/// sampled curve per active player, the terminal state, and the halting
/// event (if any).
pub fn integrate(
    initial: &CurveState,
    game: &GameSpec,
    t_end: f64,
    direction: Direction,
    opts: &IntegrationOptions,
) -> Result<(Vec<SampledCurve>, CurveState, Option<EventHit>), OdeError> {
    let specs: Vec<&PlayerSpec> = initial
        .active_set
        .iter()
        .map(|&i| &game.players[i])
        .collect();
    let counts = vec![1usize; specs.len()];
    let events = match direction {
        Direction::Forward => forward_events(&specs),
        Direction::Backward => backward_events(&specs),
    };
    let mut opts = opts.clone();
    if opts.grid.is_none() {
        let n = 400;
        opts.grid = Some(
            (0..=n)
                .map(|k| initial.t + (t_end - initial.t) * k as f64 / n as f64)
                .collect(),
        );
    }
    let rhs = |_t: f64, y: &[f64], out: &mut [f64]| weighted_rhs(y, &specs, &counts, out);
    let result = integrate_system(rhs, initial.t, &initial.values, t_end, &events, &opts)?;

    let terminal_tag = match &result.event {
        Some(EventHit {
            id: EventId::AllConverged,
            ..
        }) => TerminalTag::ConvergedToCost,
        _ => TerminalTag::TruncatedAtHorizon,
    };
    let curves = initial
        .active_set
        .iter()
        .enumerate()
        .map(|(k, &pi)| SampledCurve {
            player: pi,
            strict_wait: initial.t.min(result.t_end),
            ts: result.ts.clone(),
            values: result.ys.iter().map(|y| y[k]).collect(),
            terminal: terminal_tag,
        })
        .collect();
    let terminal = CurveState {
        t: result.t_end,
        values: result.y_end.clone(),
        active_set: initial.active_set.clone(),
    };
    Ok((curves, terminal, result.event))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_ltd_game, ValueDistribution};
    use rand::{Rng, SeedableRng};

    fn sym_game(n: usize) -> GameSpec {
        let base = ValueDistribution::uniform(0.5, 2.0);
        make_ltd_game(&base, &vec![2.0; n], 1.0, 1.0).unwrap()
    }

    /// Symmetric U-LTD closed form (independent oracle for these tests).
    fn ultd(t: f64, m: usize, r: f64, c: f64, v_hi: f64, v_lo: f64) -> f64 {
        let lambda = 1.0 - (c - v_lo) / (v_hi - v_lo);
        let rho = 1.0 - v_lo / c;
        v_lo + (c - v_lo) / (1.0 - lambda * (-rho * r * t / (m as f64 - 1.0)).exp())
    }

    #[test]
    fn rhs_hand_values() {
        let g = sym_game(2);
        let s = CurveState {
            t: 0.0,
            values: vec![1.5, 1.5],
            active_set: vec![0, 1],
        };
        let d = mproblem_rhs(&s, &g).unwrap();
        assert!((d[0] + 0.5).abs() < 1e-12);
        assert!((d[1] + 0.5).abs() < 1e-12);

        let g3 = sym_game(3);
        let s3 = CurveState {
            t: 0.0,
            values: vec![1.5, 1.5, 1.5],
            active_set: vec![0, 1, 2],
        };
        let d3 = mproblem_rhs(&s3, &g3).unwrap();
        for v in d3 {
            assert!((v + 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn rhs_stationary_at_cost() {
        let g = sym_game(3);
        let s = CurveState {
            t: 0.0,
            values: vec![1.0, 1.0, 1.0],
            active_set: vec![0, 1, 2],
        };
        for v in mproblem_rhs(&s, &g).unwrap() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn rhs_rejects_single_player() {
        let g = sym_game(2);
        let s = CurveState {
            t: 0.0,
            values: vec![1.5],
            active_set: vec![0],
        };
        assert!(matches!(
            mproblem_rhs(&s, &g),
            Err(OdeError::DegenerateActiveSet(1))
        ));
    }

    #[test]
    fn rhs_summed_identity() {
        // sum_i (f/F)^{-1} Phi'_i = -S / (M-1) with S recomputed independently
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let g = make_ltd_game(
            &ValueDistribution::uniform(0.4, 2.5),
            &[2.5, 2.0, 1.7, 1.3],
            1.3,
            1.1,
        )
        .unwrap();
        for _ in 0..200 {
            let values: Vec<f64> = g
                .players
                .iter()
                .map(|p| rng.gen_range(p.c + 0.01..p.dist.v_hi()))
                .collect();
            let s = CurveState {
                t: 0.0,
                values: values.clone(),
                active_set: (0..4).collect(),
            };
            let d = mproblem_rhs(&s, &g).unwrap();
            let mut lhs = 0.0;
            let mut sum = 0.0;
            for (k, p) in g.players.iter().enumerate() {
                let e = p.dist.eval(values[k]).unwrap();
                lhs += e.hazard * d[k];
                sum += p.r / p.c * (values[k] - p.c);
            }
            let rhs = -sum / 3.0;
            assert!((lhs - rhs).abs() < 1e-12 * sum.abs().max(1.0));
        }
    }

    #[test]
    fn forward_matches_closed_form() {
        let g = sym_game(2);
        let grid: Vec<f64> = (0..=500).map(|k| k as f64 * 10.0 / 500.0).collect();
        let initial = CurveState {
            t: 0.0,
            values: vec![2.0, 2.0],
            active_set: vec![0, 1],
        };
        let opts = IntegrationOptions {
            grid: Some(grid.clone()),
            ..Default::default()
        };
        let (curves, _, _) = integrate(&initial, &g, 10.0, Direction::Forward, &opts).unwrap();
        for (k, &t) in grid.iter().enumerate() {
            let exact = ultd(t, 2, 1.0, 1.0, 2.0, 0.5);
            assert!(
                (curves[0].values[k] - exact).abs() < 1e-6,
                "t = {t}: {} vs {exact}",
                curves[0].values[k]
            );
        }
    }

    #[test]
    fn stationary_initial_state_stays_constant() {
        let g = sym_game(2);
        let initial = CurveState {
            t: 0.0,
            values: vec![1.0, 1.0],
            active_set: vec![0, 1],
        };
        let (curves, terminal, _) =
            integrate(&initial, &g, 5.0, Direction::Forward, &Default::default()).unwrap();
        for v in &curves[0].values {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!((terminal.values[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_event_location_matches_inverse() {
        // symmetric 2-player pair started at 1.2 rises to 1.5 backward in
        // time after exactly 2 ln(7/4) (closed-form inverse with v_hi = 1.5)
        let base = ValueDistribution::uniform(0.5, 2.0);
        let g = make_ltd_game(&base, &[1.5, 1.5], 1.0, 1.0).unwrap();
        let initial = CurveState {
            t: 0.0,
            values: vec![1.2, 1.2],
            active_set: vec![0, 1],
        };
        let (_, terminal, event) =
            integrate(&initial, &g, -10.0, Direction::Backward, &Default::default()).unwrap();
        let event = event.expect("bound touch expected");
        assert!(matches!(event.id, EventId::BoundTouch(_)));
        let expected = -2.0 * (7.0f64 / 4.0).ln();
        assert!(
            (event.t - expected).abs() < 1e-7,
            "event at {} vs {expected}",
            event.t
        );
        assert!((terminal.values[0] - 1.5).abs() < 1e-7);
    }

    #[test]
    fn indifference_residual_on_trajectory() {
        let g = make_ltd_game(
            &ValueDistribution::uniform(0.5, 2.0),
            &[2.0, 1.6, 1.4],
            1.0,
            1.0,
        )
        .unwrap();
        let values = vec![1.5, 1.4, 1.3];
        let s = CurveState {
            t: 0.0,
            values: values.clone(),
            active_set: vec![0, 1, 2],
        };
        let d = mproblem_rhs(&s, &g).unwrap();
        let dlog: Vec<f64> = (0..3)
            .map(|k| {
                let e = g.players[k].dist.eval(values[k]).unwrap();
                e.hazard * d[k]
            })
            .collect();
        let res = indifference_residual(&s, &g, &dlog).unwrap();
        for v in &res {
            assert!(v.abs() < 1e-8, "residual {v}");
        }

        // shifting one component by +0.01 with dlog fixed shifts its own
        // residual by -r * 0.01
        let mut s2 = s.clone();
        s2.values[1] += 0.01;
        let res2 = indifference_residual(&s2, &g, &dlog).unwrap();
        assert!((res2[1] - (res[1] - 1.0 * 0.01)).abs() < 1e-12);
        assert!((res2[0] - res[0]).abs() < 1e-12);

        // symmetric state gives identical residuals
        let sym = sym_game(3);
        let ss = CurveState {
            t: 0.0,
            values: vec![1.5, 1.5, 1.5],
            active_set: vec![0, 1, 2],
        };
        let dd = mproblem_rhs(&ss, &sym).unwrap();
        let dl: Vec<f64> = (0..3)
            .map(|k| sym.players[k].dist.eval(1.5).unwrap().hazard * dd[k])
            .collect();
        let rr = indifference_residual(&ss, &sym, &dl).unwrap();
        assert!((rr[0] - rr[1]).abs() < 1e-12);
        assert!((rr[1] - rr[2]).abs() < 1e-12);
    }

    #[test]
    fn time_invariance() {
        let g = sym_game(2);
        let from_zero = integrate(
            &CurveState {
                t: 0.0,
                values: vec![1.8, 1.8],
                active_set: vec![0, 1],
            },
            &g,
            6.0,
            Direction::Forward,
            &IntegrationOptions {
                grid: Some((0..=100).map(|k| k as f64 * 0.06).collect()),
                ..Default::default()
            },
        )
        .unwrap();
        let shifted = integrate(
            &CurveState {
                t: 3.0,
                values: vec![1.8, 1.8],
                active_set: vec![0, 1],
            },
            &g,
            9.0,
            Direction::Forward,
            &IntegrationOptions {
                grid: Some((0..=100).map(|k| 3.0 + k as f64 * 0.06).collect()),
                ..Default::default()
            },
        )
        .unwrap();
        for k in 0..=100 {
            assert!((from_zero.0[0].values[k] - shifted.0[0].values[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn tolerance_halving_convergence() {
        let g = make_ltd_game(
            &ValueDistribution::uniform(0.5, 2.0),
            &[2.0, 1.7],
            1.0,
            1.0,
        )
        .unwrap();
        let initial = CurveState {
            t: 0.0,
            values: vec![1.9, 1.65],
            active_set: vec![0, 1],
        };
        let run = |rtol: f64| {
            let opts = IntegrationOptions {
                rtol,
                atol: rtol * 1e-2,
                grid: None,
                ..Default::default()
            };
            integrate(&initial, &g, 4.0, Direction::Forward, &opts)
                .unwrap()
                .1
                .values
                .clone()
        };
        let coarse = run(1e-8);
        let fine = run(5e-9);
        let finest = run(1e-12);
        let err_coarse = (coarse[0] - finest[0]).abs();
        let err_fine = (fine[0] - finest[0]).abs();
        // halving rtol must not blow the terminal values apart
        assert!(err_fine <= 10.0 * err_coarse.max(1e-12));
    }
}
