//! Classical registrar: derivative-free pattern search over (tx, ty, θ)
//! maximizing an intensity similarity metric, with a coarse grid of
//! starting points. No learning involved; this is the reference method
//! the agent is compared against.

use crate::error::{Error, Result};
use crate::imgcore::{warp, Image2D, RigidTransform2D};
use crate::simkit::{correlation, dissimilarity, nmi, SimilarityConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineMetric {
    Nmi,
    Correlation,
    /// Minimized rather than maximized.
    Dissimilarity,
}

impl BaselineMetric {
    pub fn label(self) -> &'static str {
        match self {
            BaselineMetric::Nmi => "nmi",
            BaselineMetric::Correlation => "correlation",
            BaselineMetric::Dissimilarity => "dissimilarity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nmi" => Ok(BaselineMetric::Nmi),
            "correlation" => Ok(BaselineMetric::Correlation),
            "dissimilarity" => Ok(BaselineMetric::Dissimilarity),
            other => Err(Error::Config(format!(
                "unknown metric {:?}; expected nmi, correlation, or dissimilarity",
                other
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaselineConfig {
    pub metric: BaselineMetric,
    /// Number of starting points taken row-major from a square grid over
    /// tx, ty in ±start_extent (rotation always starts at zero).
    pub starts: usize,
    /// Metric-evaluation budget per start.
    pub max_evals: usize,
    /// Initial probe distance (px, px, deg).
    pub initial_step: (f64, f64, f64),
    /// Step multiplier applied when no probe improves.
    pub shrink: f64,
    /// Search stops once every step component falls below this.
    pub tol: f64,
    pub start_extent: f64,
    pub similarity: SimilarityConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            metric: BaselineMetric::Nmi,
            starts: 9,
            max_evals: 600,
            initial_step: (2.0, 2.0, 2.0),
            shrink: 0.5,
            tol: 0.05,
            start_extent: 5.0,
            similarity: SimilarityConfig::default(),
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.starts == 0 {
            return Err(Error::Config("starts must be at least 1".into()));
        }
        if self.max_evals == 0 {
            return Err(Error::Config("max_evals must be at least 1".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Config(format!("shrink = {} outside (0, 1)", self.shrink)));
        }
        let (a, b, c) = self.initial_step;
        if !(a > 0.0 && b > 0.0 && c > 0.0 && a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::Config("initial_step components must be positive".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!("tol = {} must be positive", self.tol)));
        }
        if !(self.start_extent >= 0.0 && self.start_extent.is_finite()) {
            return Err(Error::Config("start_extent must be non-negative".into()));
        }
        if self.similarity.nmi_bins < 2 {
            return Err(Error::Config("nmi_bins must be at least 2".into()));
        }
        Ok(())
    }

    /// Start points: a k×k grid (k = ⌈√starts⌉) over tx, ty spanning
    /// ±start_extent, truncated row-major to `starts` entries. A single
    /// start sits at the identity.
    pub fn start_grid(&self) -> Vec<RigidTransform2D> {
        let k = (self.starts as f64).sqrt().ceil() as usize;
        let coord = |i: usize| {
            if k == 1 {
                0.0
            } else {
                -self.start_extent + 2.0 * self.start_extent * i as f64 / (k - 1) as f64
            }
        };
        let mut grid = Vec::with_capacity(self.starts);
        'outer: for iy in 0..k {
            for ix in 0..k {
                if grid.len() == self.starts {
                    break 'outer;
                }
                grid.push(RigidTransform2D::new(coord(ix), coord(iy), 0.0));
            }
        }
        grid
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BaselineResult {
    pub transform: RigidTransform2D,
    /// Raw metric value at the returned transform.
    pub metric_value: f64,
    /// Total metric evaluations across all starts.
    pub evals: usize,
    /// Which start won (lowest index on ties).
    pub start_index: usize,
}

/// Returns `(objective, raw)`: the objective is maximized internally, so
/// the dissimilarity metric enters negated.
fn evaluate(
    fixed: &Image2D,
    moving: &Image2D,
    cfg: &BaselineConfig,
    t: &RigidTransform2D,
) -> Result<(f64, f64)> {
    let warped = warp(moving, t);
    match cfg.metric {
        BaselineMetric::Nmi => {
            let v = nmi(fixed, &warped, cfg.similarity.nmi_bins)?;
            Ok((v, v))
        }
        BaselineMetric::Correlation => {
            let v = correlation(fixed, &warped)?;
            Ok((v, v))
        }
        BaselineMetric::Dissimilarity => {
            let v = dissimilarity(fixed, &warped, &cfg.similarity)?;
            Ok((-v, v))
        }
    }
}

struct StartOutcome {
    transform: RigidTransform2D,
    objective: f64,
    raw: f64,
    evals: usize,
}

/// Compass search from one start: probe ± the current step along each
/// parameter, move to the best probe when it improves, shrink every step
/// when none does, stop once all steps drop below tol or the budget runs
/// out. Only improvements are ever accepted.
fn search_from(
    fixed: &Image2D,
    moving: &Image2D,
    cfg: &BaselineConfig,
    start: RigidTransform2D,
) -> Result<StartOutcome> {
    let mut evals = 0usize;
    let mut current = start;
    let (mut obj, mut raw) = evaluate(fixed, moving, cfg, &current)?;
    evals += 1;
    let mut step = cfg.initial_step;

    while evals < cfg.max_evals && (step.0 >= cfg.tol || step.1 >= cfg.tol || step.2 >= cfg.tol) {
        let probes = [
            RigidTransform2D::new(current.tx + step.0, current.ty, current.theta_deg),
            RigidTransform2D::new(current.tx - step.0, current.ty, current.theta_deg),
            RigidTransform2D::new(current.tx, current.ty + step.1, current.theta_deg),
            RigidTransform2D::new(current.tx, current.ty - step.1, current.theta_deg),
            RigidTransform2D::new(current.tx, current.ty, current.theta_deg + step.2),
            RigidTransform2D::new(current.tx, current.ty, current.theta_deg - step.2),
        ];
        let mut best: Option<(f64, f64, RigidTransform2D)> = None;
        for p in probes {
            if evals >= cfg.max_evals {
                break;
            }
            let (o, r) = evaluate(fixed, moving, cfg, &p)?;
            evals += 1;
            if best.as_ref().map_or(true, |(bo, _, _)| o > *bo) {
                best = Some((o, r, p));
            }
        }
        match best {
            Some((o, r, p)) if o > obj => {
                current = p;
                obj = o;
                raw = r;
            }
            _ => {
                step.0 *= cfg.shrink;
                step.1 *= cfg.shrink;
                step.2 *= cfg.shrink;
            }
        }
    }

    Ok(StartOutcome { transform: current, objective: obj, raw, evals })
}

/// Multi-start rigid registration of `moving` onto `fixed`. Deterministic:
/// no randomness anywhere, ties across starts resolve to the lowest index.
pub fn register(
    fixed: &Image2D,
    moving: &Image2D,
    cfg: &BaselineConfig,
) -> Result<BaselineResult> {
    cfg.validate()?;
    if fixed.height() != moving.height() || fixed.width() != moving.width() {
        return Err(Error::Dimension(format!(
            "fixed {}x{} vs moving {}x{}",
            fixed.height(),
            fixed.width(),
            moving.height(),
            moving.width()
        )));
    }
    if fixed.is_empty() {
        return Err(Error::Input("empty images".into()));
    }
    if !fixed.is_finite() || !moving.is_finite() {
        return Err(Error::Data("non-finite pixel in input pair".into()));
    }

    let mut total_evals = 0usize;
    let mut best: Option<(usize, StartOutcome)> = None;
    for (i, start) in cfg.start_grid().into_iter().enumerate() {
        let outcome = search_from(fixed, moving, cfg, start)?;
        total_evals += outcome.evals;
        if best.as_ref().map_or(true, |(_, b)| outcome.objective > b.objective) {
            best = Some((i, outcome));
        }
    }
    let (start_index, outcome) = best.expect("at least one start");
    Ok(BaselineResult {
        transform: outcome.transform,
        metric_value: outcome.raw,
        evals: total_evals,
        start_index,
    })
}
