//! Game specifications: value distributions, players, games, societies, and
//! the game transforms (lower truncation, redistribution transfers).
//!
//! Distributions are defined on a bounded support `[v_lo, v_hi]` with a
//! density bounded away from zero. Above `v_hi` every distribution carries a
//! smooth extension of `(F, f)` that the shooting solver uses while probing
//! boundary selections; the extended CDF may exceed 1 and is never used for
//! probability computations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative floor applied to the extended density: `f >= EXT_FLOOR_FRAC * f_max`.
pub const EXT_FLOOR_FRAC: f64 = 1e-6;
/// Cap applied to the extended density: `f <= EXT_CAP_FACTOR * f_max`.
pub const EXT_CAP_FACTOR: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("value {v} below distribution support (v_lo = {v_lo})")]
    BelowSupport { v: f64, v_lo: f64 },
    #[error("truncation bound {bound} out of range ({lo_excl}, {hi_incl}]")]
    BoundOutOfRange {
        bound: f64,
        lo_excl: f64,
        hi_incl: f64,
    },
    #[error("transfer plan unsupported: {0}")]
    UnsupportedPlan(String),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
}

/// Point evaluation of a distribution: CDF, density, and hazard `f/F`.
#[derive(Debug, Clone, Copy)]
pub struct DistEval {
    pub cdf: f64,
    pub density: f64,
    pub hazard: f64,
    /// True when `v` lies above `v_hi` and the extension was used.
    pub extended: bool,
}

/// A value distribution on a bounded support.
///
/// `extension_slope`, when set, overrides the density-derivative rule used to
/// extend the density above `v_hi` (e.g. `Some(0.0)` for a constant
/// extension).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueDistribution {
    #[serde(flatten)]
    pub kind: DistKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extension_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistKind {
    Uniform {
        v_lo: f64,
        v_hi: f64,
    },
    /// Piecewise-linear density through `nodes = [(v, f(v)), ...]` with
    /// strictly increasing abscissae and strictly positive densities,
    /// normalized to unit mass.
    PiecewiseLinear {
        nodes: Vec<(f64, f64)>,
    },
    /// Lower truncation of `base` at `bound`: `F(v) = F_base(v) / F_base(bound)`
    /// on `[v_lo_base, bound]`.
    LowerTruncated {
        base: Box<ValueDistribution>,
        bound: f64,
    },
}

impl ValueDistribution {
    pub fn uniform(v_lo: f64, v_hi: f64) -> Self {
        ValueDistribution {
            kind: DistKind::Uniform { v_lo, v_hi },
            extension_slope: None,
        }
    }

    /// Piecewise-linear density; node densities are rescaled to unit mass.
    pub fn piecewise_linear(nodes: Vec<(f64, f64)>) -> Result<Self, ModelError> {
        if nodes.len() < 2 {
            return Err(ModelError::InvalidSpec(
                "piecewise-linear density needs at least two nodes".into(),
            ));
        }
        let mut mass = 0.0;
        for w in nodes.windows(2) {
            let (v0, f0) = w[0];
            let (v1, f1) = w[1];
            if v1 <= v0 {
                return Err(ModelError::InvalidSpec(
                    "piecewise-linear nodes must have strictly increasing values".into(),
                ));
            }
            if f0 <= 0.0 || f1 <= 0.0 {
                return Err(ModelError::InvalidSpec(
                    "piecewise-linear densities must be strictly positive".into(),
                ));
            }
            mass += 0.5 * (f0 + f1) * (v1 - v0);
        }
        let nodes = nodes.into_iter().map(|(v, f)| (v, f / mass)).collect();
        Ok(ValueDistribution {
            kind: DistKind::PiecewiseLinear { nodes },
            extension_slope: None,
        })
    }

    pub fn lower_truncated(base: ValueDistribution, bound: f64) -> Result<Self, ModelError> {
        if bound <= base.v_lo() || bound > base.v_hi() {
            return Err(ModelError::BoundOutOfRange {
                bound,
                lo_excl: base.v_lo(),
                hi_incl: base.v_hi(),
            });
        }
        Ok(ValueDistribution {
            kind: DistKind::LowerTruncated {
                base: Box::new(base),
                bound,
            },
            extension_slope: None,
        })
    }

    /// Same distribution with a forced extension rule.
    pub fn with_extension_slope(mut self, slope: f64) -> Self {
        self.extension_slope = Some(slope);
        self
    }

    pub fn v_lo(&self) -> f64 {
        match &self.kind {
            DistKind::Uniform { v_lo, .. } => *v_lo,
            DistKind::PiecewiseLinear { nodes } => nodes[0].0,
            DistKind::LowerTruncated { base, .. } => base.v_lo(),
        }
    }

    pub fn v_hi(&self) -> f64 {
        match &self.kind {
            DistKind::Uniform { v_hi, .. } => *v_hi,
            DistKind::PiecewiseLinear { nodes } => nodes.last().unwrap().0,
            DistKind::LowerTruncated { bound, .. } => *bound,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (lo, hi) = (self.v_lo(), self.v_hi());
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ModelError::InvalidSpec(format!(
                "support [{lo}, {hi}] must be finite with v_lo < v_hi"
            )));
        }
        match &self.kind {
            DistKind::Uniform { .. } => Ok(()),
            DistKind::PiecewiseLinear { nodes } => {
                let mut mass = 0.0;
                for w in nodes.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(ModelError::InvalidSpec(
                            "piecewise-linear nodes out of order".into(),
                        ));
                    }
                    if w[0].1 <= 0.0 || w[1].1 <= 0.0 {
                        return Err(ModelError::InvalidSpec(
                            "piecewise-linear density not strictly positive".into(),
                        ));
                    }
                    mass += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
                }
                if (mass - 1.0).abs() > 1e-9 {
                    return Err(ModelError::InvalidSpec(format!(
                        "piecewise-linear density mass {mass} != 1 (normalize first)"
                    )));
                }
                Ok(())
            }
            DistKind::LowerTruncated { base, bound } => {
                base.validate()?;
                if *bound <= base.v_lo() || *bound > base.v_hi() {
                    return Err(ModelError::BoundOutOfRange {
                        bound: *bound,
                        lo_excl: base.v_lo(),
                        hi_incl: base.v_hi(),
                    });
                }
                Ok(())
            }
        }
    }

    /// CDF at `v` within `[v_lo, v_hi]` (no extension).
    fn cdf_inner(&self, v: f64) -> f64 {
        match &self.kind {
            DistKind::Uniform { v_lo, v_hi } => (v - v_lo) / (v_hi - v_lo),
            DistKind::PiecewiseLinear { nodes } => {
                let mut acc = 0.0;
                for w in nodes.windows(2) {
                    let (v0, f0) = w[0];
                    let (v1, f1) = w[1];
                    if v >= v1 {
                        acc += 0.5 * (f0 + f1) * (v1 - v0);
                    } else if v > v0 {
                        let x = v - v0;
                        let slope = (f1 - f0) / (v1 - v0);
                        acc += f0 * x + 0.5 * slope * x * x;
                        break;
                    } else {
                        break;
                    }
                }
                acc
            }
            DistKind::LowerTruncated { base, bound } => {
                base.cdf_inner(v) / base.cdf_inner(*bound)
            }
        }
    }

    /// Density at `v` within `[v_lo, v_hi]` (no extension).
    fn density_inner(&self, v: f64) -> f64 {
        match &self.kind {
            DistKind::Uniform { v_lo, v_hi } => 1.0 / (v_hi - v_lo),
            DistKind::PiecewiseLinear { nodes } => {
                for w in nodes.windows(2) {
                    let (v0, f0) = w[0];
                    let (v1, f1) = w[1];
                    if v <= v1 || w[1].0 == nodes.last().unwrap().0 {
                        if v >= v0 {
                            return f0 + (f1 - f0) * (v - v0) / (v1 - v0);
                        }
                    }
                }
                nodes[0].1
            }
            DistKind::LowerTruncated { base, bound } => {
                base.density_inner(v) / base.cdf_inner(*bound)
            }
        }
    }

    /// One-sided density derivative at `v` (slope of the density there).
    fn density_slope_at(&self, v: f64) -> f64 {
        match &self.kind {
            DistKind::Uniform { .. } => 0.0,
            DistKind::PiecewiseLinear { nodes } => {
                for w in nodes.windows(2) {
                    if v <= w[1].0 || w[1].0 == nodes.last().unwrap().0 {
                        if v >= w[0].0 {
                            return (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
                        }
                    }
                }
                0.0
            }
            DistKind::LowerTruncated { base, bound } => {
                base.density_slope_at(v) / base.cdf_inner(*bound)
            }
        }
    }

    /// Maximum density over the support.
    fn density_max(&self) -> f64 {
        match &self.kind {
            DistKind::Uniform { v_lo, v_hi } => 1.0 / (v_hi - v_lo),
            DistKind::PiecewiseLinear { nodes } => {
                nodes.iter().map(|n| n.1).fold(f64::MIN, f64::max)
            }
            DistKind::LowerTruncated { base, bound } => {
                let norm = base.cdf_inner(*bound);
                let mut fmax = base.density_inner(*bound);
                if let DistKind::PiecewiseLinear { nodes } = &base.kind {
                    for n in nodes {
                        if n.0 <= *bound {
                            fmax = fmax.max(n.1);
                        }
                    }
                } else {
                    fmax = fmax.max(base.density_max());
                }
                fmax / norm
            }
        }
    }

    /// Evaluates `(F, f, f/F)` at `v >= v_lo`, using the extension above
    /// `v_hi`. The extended CDF may exceed 1; `extended` flags this regime.
    pub fn eval(&self, v: f64) -> Result<DistEval, ModelError> {
        let (lo, hi) = (self.v_lo(), self.v_hi());
        if v < lo {
            return Err(ModelError::BelowSupport { v, v_lo: lo });
        }
        if v <= hi {
            let cdf = self.cdf_inner(v);
            let density = self.density_inner(v);
            let hazard = if cdf > 0.0 {
                density / cdf
            } else {
                f64::INFINITY
            };
            return Ok(DistEval {
                cdf,
                density,
                hazard,
                extended: false,
            });
        }
        // extension: density linear from (v_hi, f(v_hi)) clamped to
        // [EXT_FLOOR_FRAC * f_max, EXT_CAP_FACTOR * f_max]; CDF by integration.
        let f_hi = self.density_inner(hi);
        let f_max = self.density_max();
        let f_floor = EXT_FLOOR_FRAC * f_max;
        let f_cap = EXT_CAP_FACTOR * f_max;
        let slope = self
            .extension_slope
            .unwrap_or_else(|| self.density_slope_at(hi));
        let x = v - hi;
        let raw = f_hi + slope * x;
        let density = raw.clamp(f_floor, f_cap);
        // breakpoint where the clamp activates (if any)
        let x_break = if slope > 0.0 && f_cap > f_hi {
            (f_cap - f_hi) / slope
        } else if slope < 0.0 && f_hi > f_floor {
            (f_floor - f_hi) / slope
        } else {
            f64::INFINITY
        };
        let cdf = if x <= x_break {
            1.0 + f_hi * x + 0.5 * slope * x * x
        } else {
            let clamped = if slope > 0.0 { f_cap } else { f_floor };
            1.0 + f_hi * x_break + 0.5 * slope * x_break * x_break + clamped * (x - x_break)
        };
        Ok(DistEval {
            cdf,
            density,
            hazard: density / cdf,
            extended: true,
        })
    }

    /// Quantile function on `[0, 1]` (exact support, no extension).
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match &self.kind {
            DistKind::Uniform { v_lo, v_hi } => v_lo + p * (v_hi - v_lo),
            DistKind::PiecewiseLinear { nodes } => {
                let mut acc = 0.0;
                for w in nodes.windows(2) {
                    let (v0, f0) = w[0];
                    let (v1, f1) = w[1];
                    let seg = 0.5 * (f0 + f1) * (v1 - v0);
                    if acc + seg >= p || w[1].0 == nodes.last().unwrap().0 {
                        // solve f0*x + slope*x^2/2 = p - acc on this segment
                        let rem = (p - acc).max(0.0);
                        let slope = (f1 - f0) / (v1 - v0);
                        let x = if slope.abs() < 1e-14 * f0.abs() {
                            rem / f0
                        } else {
                            let disc = (f0 * f0 + 2.0 * slope * rem).max(0.0);
                            (disc.sqrt() - f0) / slope
                        };
                        return (v0 + x).clamp(nodes[0].0, nodes.last().unwrap().0);
                    }
                    acc += seg;
                }
                self.v_hi()
            }
            DistKind::LowerTruncated { base, bound } => {
                base.quantile(p * base.cdf_inner(*bound))
            }
        }
    }

    /// Support shift: the same density shape moved down by `y`.
    pub fn shifted_down(&self, y: f64) -> Self {
        let kind = match &self.kind {
            DistKind::Uniform { v_lo, v_hi } => DistKind::Uniform {
                v_lo: v_lo - y,
                v_hi: v_hi - y,
            },
            DistKind::PiecewiseLinear { nodes } => DistKind::PiecewiseLinear {
                nodes: nodes.iter().map(|&(v, f)| (v - y, f)).collect(),
            },
            DistKind::LowerTruncated { base, bound } => DistKind::LowerTruncated {
                base: Box::new(base.shifted_down(y)),
                bound: bound - y,
            },
        };
        ValueDistribution {
            kind,
            extension_slope: self.extension_slope,
        }
    }
}

/// One player: provision cost, discount rate, and value distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerSpec {
    pub c: f64,
    pub r: f64,
    pub dist: ValueDistribution,
}

impl PlayerSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.dist.validate()?;
        if self.c <= 0.0 || self.r <= 0.0 {
            return Err(ModelError::InvalidSpec(format!(
                "need c > 0 and r > 0, got c = {}, r = {}",
                self.c, self.r
            )));
        }
        if !(self.dist.v_lo() < self.c && self.c < self.dist.v_hi()) {
            return Err(ModelError::InvalidSpec(format!(
                "need v_lo < c < v_hi, got v_lo = {}, c = {}, v_hi = {}",
                self.dist.v_lo(),
                self.c,
                self.dist.v_hi()
            )));
        }
        Ok(())
    }
}

/// A proper war of attrition: an ordered list of players.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSpec {
    pub players: Vec<PlayerSpec>,
}

impl GameSpec {
    pub fn n(&self) -> usize {
        self.players.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.players.len() < 2 {
            return Err(ModelError::InvalidSpec("need at least 2 players".into()));
        }
        for p in &self.players {
            p.validate()?;
        }
        Ok(())
    }
}

/// A large society: total population split into homogeneous groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocietySpec {
    #[serde(rename = "N")]
    pub n: usize,
    pub groups: Vec<GroupSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub p: f64,
    pub player: PlayerSpec,
}

impl SocietySpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let total: f64 = self.groups.iter().map(|g| g.p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(ModelError::InvalidSpec(format!(
                "group proportions sum to {total}, expected 1"
            )));
        }
        for g in &self.groups {
            g.player.validate()?;
            let count = g.p * self.n as f64;
            if (count - count.round()).abs() > 1e-9 || count.round() < 1.0 {
                return Err(ModelError::InvalidSpec(format!(
                    "group proportion {} of N = {} is not a positive integer",
                    g.p, self.n
                )));
            }
        }
        Ok(())
    }

    /// Number of players in each group.
    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups
            .iter()
            .map(|g| (g.p * self.n as f64).round() as usize)
            .collect()
    }

    /// Expands the society into an explicit game; players of group `k` occupy
    /// a contiguous index block in group order.
    pub fn to_game(&self) -> GameSpec {
        let mut players = Vec::with_capacity(self.n);
        for (g, &size) in self.groups.iter().zip(self.group_sizes().iter()) {
            for _ in 0..size {
                players.push(g.player.clone());
            }
        }
        GameSpec { players }
    }
}

/// Builds an LTD war: every player's distribution is the lower truncation of
/// `base` at his upper bound; players are sorted by descending bound (stable).
pub fn make_ltd_game(
    base: &ValueDistribution,
    upper_bounds: &[f64],
    r: f64,
    c: f64,
) -> Result<GameSpec, ModelError> {
    base.validate()?;
    if base.v_lo() >= c {
        return Err(ModelError::InvalidSpec(format!(
            "base v_lo = {} must be below c = {c}",
            base.v_lo()
        )));
    }
    for &u in upper_bounds {
        if u <= c || u > base.v_hi() {
            return Err(ModelError::BoundOutOfRange {
                bound: u,
                lo_excl: c,
                hi_incl: base.v_hi(),
            });
        }
    }
    let mut bounds: Vec<f64> = upper_bounds.to_vec();
    bounds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let players = bounds
        .iter()
        .map(|&u| {
            Ok(PlayerSpec {
                c,
                r,
                dist: ValueDistribution::lower_truncated(base.clone(), u)?,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let game = GameSpec { players };
    game.validate()?;
    Ok(game)
}

/// The fixed-transfer redistribution plan: `y` moves from player `from` to
/// player `to` at the provision moment, conditional on `to` providing.
/// Equivalent game: both costs drop by `y`, the payer's support shifts down
/// by `y`.
pub fn apply_transfer_plan(
    game: &GameSpec,
    from: usize,
    to: usize,
    y: f64,
) -> Result<GameSpec, ModelError> {
    if game.n() != 2 {
        return Err(ModelError::UnsupportedPlan(format!(
            "fixed transfers are defined for 2-player games, got N = {}",
            game.n()
        )));
    }
    if from == to || from >= 2 || to >= 2 {
        return Err(ModelError::UnsupportedPlan(format!(
            "invalid player pair ({from}, {to})"
        )));
    }
    let min_cost = game.players.iter().map(|p| p.c).fold(f64::MAX, f64::min);
    if y < 0.0 || y >= min_cost {
        return Err(ModelError::UnsupportedPlan(format!(
            "transfer y = {y} must satisfy 0 <= y < min cost = {min_cost}"
        )));
    }
    let mut out = game.clone();
    for (idx, p) in out.players.iter_mut().enumerate() {
        p.c -= y;
        if idx == from {
            p.dist = p.dist.shifted_down(y);
        }
    }
    out.validate()?;
    Ok(out)
}

/// Point evaluation of a distribution (operation form of [`ValueDistribution::eval`]).
pub fn eval_distribution(dist: &ValueDistribution, v: f64) -> Result<DistEval, ModelError> {
    dist.eval(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn uni() -> ValueDistribution {
        ValueDistribution::uniform(0.5, 2.0)
    }

    #[test]
    fn uniform_point_values() {
        let e = uni().eval(1.25).unwrap();
        assert!((e.cdf - 0.5).abs() < 1e-15);
        assert!((e.density - 2.0 / 3.0).abs() < 1e-15);
        assert!((e.hazard - 4.0 / 3.0).abs() < 1e-15);
        assert!(!e.extended);

        let top = uni().eval(2.0).unwrap();
        assert!((top.cdf - 1.0).abs() < 1e-15);
        assert!((top.density - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_extension_is_constant_density() {
        // uniform density has zero derivative, so the extension is flat
        let e = uni().eval(2.3).unwrap();
        assert!(e.extended);
        assert!((e.cdf - 1.2).abs() < 1e-12);
        assert!((e.density - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn below_support_is_an_error() {
        assert!(matches!(
            uni().eval(0.4),
            Err(ModelError::BelowSupport { .. })
        ));
    }

    #[test]
    fn hazard_blows_up_at_lower_bound() {
        assert!(uni().eval(0.5).unwrap().hazard.is_infinite());
        assert!(uni().eval(0.5 + 1e-9).unwrap().hazard > 1e6);
    }

    #[test]
    fn ltd_game_construction() {
        // truncation at v_hi is the identity on [v_lo, v_hi]
        let g = make_ltd_game(&uni(), &[2.0, 2.0], 1.0, 1.0).unwrap();
        for p in &g.players {
            for k in 0..50 {
                let v = 0.5 + 1.5 * k as f64 / 49.0;
                let a = p.dist.eval(v).unwrap();
                let b = uni().eval(v).unwrap();
                assert!((a.cdf - b.cdf).abs() < 1e-12);
                assert!((a.density - b.density).abs() < 1e-12);
            }
        }

        // truncation at 1.5 scales the uniform CDF
        let g = make_ltd_game(&uni(), &[2.0, 1.5], 1.0, 1.0).unwrap();
        let p2 = &g.players[1];
        assert!((p2.dist.v_hi() - 1.5).abs() < 1e-15);
        let e = p2.dist.eval(1.0).unwrap();
        assert!((e.cdf - 0.5).abs() < 1e-12); // (v - 0.5) / 1.0

        assert!(matches!(
            make_ltd_game(&uni(), &[0.9, 2.0], 1.0, 1.0),
            Err(ModelError::BoundOutOfRange { .. })
        ));
    }

    #[test]
    fn ltd_bounds_sorted_descending() {
        let g = make_ltd_game(&uni(), &[1.2, 2.0, 1.5], 1.0, 1.0).unwrap();
        let bounds: Vec<f64> = g.players.iter().map(|p| p.dist.v_hi()).collect();
        assert_eq!(bounds, vec![2.0, 1.5, 1.2]);
    }

    #[test]
    fn transfer_plan_examples() {
        let game = GameSpec {
            players: vec![
                PlayerSpec {
                    c: 1.0,
                    r: 1.0,
                    dist: uni(),
                },
                PlayerSpec {
                    c: 1.0,
                    r: 1.0,
                    dist: uni(),
                },
            ],
        };
        // null transfer is the identity
        let same = apply_transfer_plan(&game, 1, 0, 0.0).unwrap();
        assert_eq!(same, game);

        let t = apply_transfer_plan(&game, 1, 0, 0.2).unwrap();
        assert!((t.players[0].c - 0.8).abs() < 1e-15);
        assert!((t.players[1].c - 0.8).abs() < 1e-15);
        assert!((t.players[1].dist.v_lo() - 0.3).abs() < 1e-15);
        assert!((t.players[1].dist.v_hi() - 1.8).abs() < 1e-15);
        assert!((t.players[0].dist.v_lo() - 0.5).abs() < 1e-15);

        assert!(apply_transfer_plan(&game, 1, 0, 1.0).is_err());
    }

    #[test]
    fn transfer_preserves_payer_mass() {
        let pwl = ValueDistribution::piecewise_linear(vec![(0.2, 1.0), (1.0, 2.0), (2.0, 0.5)])
            .unwrap();
        let game = GameSpec {
            players: vec![
                PlayerSpec {
                    c: 1.0,
                    r: 1.0,
                    dist: pwl,
                },
                PlayerSpec {
                    c: 1.0,
                    r: 1.0,
                    dist: uni(),
                },
            ],
        };
        let t = apply_transfer_plan(&game, 0, 1, 0.1).unwrap();
        let d = &t.players[0].dist;
        // numerical mass of the shifted density
        let (lo, hi) = (d.v_lo(), d.v_hi());
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let mut mass = 0.0;
        for k in 0..n {
            let a = lo + k as f64 * h;
            mass += 0.5 * (d.eval(a).unwrap().density + d.eval(a + h).unwrap().density) * h;
        }
        assert!((mass - 1.0).abs() < 1e-8);
        assert!((d.eval(hi).unwrap().cdf - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_matches_numerical_integral_of_density() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        // each distribution paired with the interior kinks of its density,
        // so the Simpson rule only ever sees smooth integrands
        let dists: Vec<(ValueDistribution, Vec<f64>)> = vec![
            (uni(), vec![]),
            (
                ValueDistribution::piecewise_linear(vec![(0.3, 0.8), (1.1, 1.9), (2.2, 0.4)])
                    .unwrap(),
                vec![1.1],
            ),
            (
                ValueDistribution::lower_truncated(uni(), 1.6).unwrap(),
                vec![],
            ),
            (
                ValueDistribution::lower_truncated(
                    ValueDistribution::piecewise_linear(vec![(0.3, 0.8), (1.1, 1.9), (2.2, 0.4)])
                        .unwrap(),
                    1.5,
                )
                .unwrap(),
                vec![1.1],
            ),
        ];
        let simpson = |d: &ValueDistribution, a: f64, b: f64| -> f64 {
            let n = 400;
            let h = (b - a) / n as f64;
            let mut s = d.eval(a).unwrap().density + d.eval(b).unwrap().density;
            for k in 1..n {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                s += w * d.eval(a + k as f64 * h).unwrap().density;
            }
            s * h / 3.0
        };
        for (d, kinks) in &dists {
            d.validate().unwrap();
            let (lo, hi) = (d.v_lo(), d.v_hi());
            for _ in 0..1000 {
                let v: f64 = rng.gen_range(lo..hi);
                let mut pts = vec![lo];
                pts.extend(kinks.iter().copied().filter(|&k| k > lo && k < v));
                pts.push(v);
                let integral: f64 = pts.windows(2).map(|w| simpson(d, w[0], w[1])).sum();
                assert!(
                    (integral - d.eval(v).unwrap().cdf).abs() < 1e-9,
                    "cdf mismatch at v = {v}"
                );
            }
        }
    }

    #[test]
    fn truncation_at_v_hi_is_identity() {
        let base = ValueDistribution::piecewise_linear(vec![(0.3, 0.8), (1.1, 1.9), (2.2, 0.4)])
            .unwrap();
        let t = ValueDistribution::lower_truncated(base.clone(), base.v_hi()).unwrap();
        for k in 0..=1000 {
            let v = 0.3 + (2.2 - 0.3) * k as f64 / 1000.0;
            let a = t.eval(v).unwrap();
            let b = base.eval(v).unwrap();
            assert!((a.cdf - b.cdf).abs() < 1e-12);
            assert!((a.density - b.density).abs() < 1e-12);
        }
    }

    #[test]
    fn hazards_agree_on_overlap_of_truncations() {
        let base = ValueDistribution::piecewise_linear(vec![(0.3, 0.8), (1.1, 1.9), (2.2, 0.4)])
            .unwrap();
        let t1 = ValueDistribution::lower_truncated(base.clone(), 1.4).unwrap();
        let t2 = ValueDistribution::lower_truncated(base.clone(), 2.0).unwrap();
        for k in 1..=500 {
            let v = 0.3 + (1.4 - 0.3) * k as f64 / 500.0;
            let h1 = t1.eval(v).unwrap().hazard;
            let h2 = t2.eval(v).unwrap().hazard;
            assert!((h1 - h2).abs() < 1e-12 * h1.abs().max(1.0), "v = {v}");
        }
    }

    #[test]
    fn extension_respects_clamps() {
        // steeply falling density: the extension must clamp at the floor
        let d = ValueDistribution::piecewise_linear(vec![(0.0, 3.0), (1.0, 0.01)]).unwrap();
        let far = d.eval(50.0).unwrap();
        assert!(far.extended);
        let f_max = d.eval(0.0).unwrap().density;
        assert!(far.density >= EXT_FLOOR_FRAC * f_max * 0.999);
        assert!(far.density <= EXT_CAP_FACTOR * f_max * 1.001);
        // CDF keeps increasing
        assert!(d.eval(50.0).unwrap().cdf > d.eval(10.0).unwrap().cdf);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let dists = vec![
            uni(),
            ValueDistribution::piecewise_linear(vec![(0.3, 0.8), (1.1, 1.9), (2.2, 0.4)]).unwrap(),
            ValueDistribution::lower_truncated(uni(), 1.5).unwrap(),
        ];
        for d in &dists {
            for k in 0..=200 {
                let p = k as f64 / 200.0;
                let v = d.quantile(p);
                assert!((d.eval(v).unwrap().cdf - p).abs() < 1e-10, "p = {p}");
            }
        }
    }

    #[test]
    fn society_expansion() {
        let s = SocietySpec {
            n: 6,
            groups: vec![
                GroupSpec {
                    p: 1.0 / 3.0,
                    player: PlayerSpec {
                        c: 1.0,
                        r: 1.0,
                        dist: uni(),
                    },
                },
                GroupSpec {
                    p: 2.0 / 3.0,
                    player: PlayerSpec {
                        c: 1.0,
                        r: 1.0,
                        dist: ValueDistribution::uniform(0.5, 1.8),
                    },
                },
            ],
        };
        s.validate().unwrap();
        let g = s.to_game();
        assert_eq!(g.n(), 6);
        assert_eq!(s.group_sizes(), vec![2, 4]);
        assert!((g.players[0].dist.v_hi() - 2.0).abs() < 1e-15);
        assert!((g.players[5].dist.v_hi() - 1.8).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let g = make_ltd_game(&uni(), &[2.0, 1.5, 1.2], 1.0, 1.0).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        let back: GameSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);
        // schema shape: players array with c, r, dist{kind, ...}
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert!(v["players"][0]["c"].is_number());
        assert_eq!(v["players"][0]["dist"]["kind"], "lower_truncated");
        assert_eq!(v["players"][0]["dist"]["base"]["kind"], "uniform");
    }
}
