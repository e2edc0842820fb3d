use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::solver::{solve_order_params, SolveMode, SolverOptions};
use super::{predict_precision, OrderParams, PrecisionPoint};
use crate::error::{Error, Result};
use crate::losses::Loss;
use crate::model::PopulationModel;

/// Strictly increasing, positive grid of ridge parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid(Vec<f64>);

impl LambdaGrid {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Usage("lambda grid is empty".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Usage("lambda grid values must be finite and > 0".into()));
        }
        values.sort_by(|a, b| a.total_cmp(b));
        values.dedup();
        Ok(LambdaGrid(values))
    }

    pub fn log_spaced(min: f64, max: f64, count: usize) -> Result<Self> {
        Self::check_bounds(min, max, count)?;
        let (a, b) = (min.ln(), max.ln());
        let step = (b - a) / (count - 1) as f64;
        Self::new(
            (0..count)
                .map(|i| match i {
                    0 => min,
                    _ if i + 1 == count => max,
                    _ => (a + step * i as f64).exp(),
                })
                .collect(),
        )
    }

    pub fn lin_spaced(min: f64, max: f64, count: usize) -> Result<Self> {
        Self::check_bounds(min, max, count)?;
        let step = (max - min) / (count - 1) as f64;
        Self::new(
            (0..count)
                .map(|i| if i + 1 == count { max } else { min + step * i as f64 })
                .collect(),
        )
    }

    fn check_bounds(min: f64, max: f64, count: usize) -> Result<()> {
        if !(min > 0.0 && max > min && min.is_finite() && max.is_finite()) {
            return Err(Error::Usage(format!(
                "lambda grid needs 0 < min < max, got {min}:{max}"
            )));
        }
        if count < 2 {
            return Err(Error::Usage("lambda grid needs at least 2 points".into()));
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::log_spaced(1e-3, 1e3, 50).expect("valid default grid")
    }
}

/// Parses `min:max:count(log|lin)`, e.g. `0.001:1000:50log`.
impl FromStr for LambdaGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Usage(format!("lambda grid `{s}` is not of the form min:max:count(log|lin)"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let min: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let max: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let spec = parts[2].trim();
        let (count, log) = if let Some(c) = spec.strip_suffix("log") {
            (c, true)
        } else if let Some(c) = spec.strip_suffix("lin") {
            (c, false)
        } else {
            (spec, true)
        };
        let count: usize = count.trim().parse().map_err(|_| bad())?;
        if log {
            LambdaGrid::log_spaced(min, max, count)
        } else {
            LambdaGrid::lin_spaced(min, max, count)
        }
    }
}

impl fmt::Display for LambdaGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = &self.0;
        let n = v.len();
        if n < 3 {
            return write!(f, "{}:{}:{n}log", v[0], v[n - 1]);
        }
        let linear = ((v[2] - v[1]) - (v[1] - v[0])).abs() <= 1e-9 * (v[1] - v[0]);
        write!(f, "{}:{}:{n}{}", v[0], v[n - 1], if linear { "lin" } else { "log" })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub lambda: f64,
    pub precision_plus: f64,
    pub precision_minus: f64,
    pub balanced: f64,
    /// False when the best grid point sits on the grid's edge (no bracketing neighbours).
    pub interior: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrecisionCurve {
    pub loss: Loss,
    pub mode: String,
    pub points: Vec<PrecisionPoint>,
    pub optimum: Option<Optimum>,
}

impl PrecisionCurve {
    pub fn converged_points(&self) -> impl Iterator<Item = &PrecisionPoint> {
        self.points.iter().filter(|p| p.order.converged)
    }

    pub fn unconverged(&self) -> usize {
        self.points.len() - self.converged_points().count()
    }
}

/// Solves along the grid from the largest `lambda` down, warm-starting each
/// point from its neighbour, then refines the argmax by golden section.
pub fn sweep_lambda(loss: &Loss, model: &PopulationModel, grid: &LambdaGrid) -> Result<PrecisionCurve> {
    sweep_lambda_with(
        loss,
        model,
        grid,
        SolveMode::for_model(model),
        &SolverOptions::default(),
    )
}

pub fn sweep_lambda_with(
    loss: &Loss,
    model: &PopulationModel,
    grid: &LambdaGrid,
    mode: SolveMode,
    opts: &SolverOptions,
) -> Result<PrecisionCurve> {
    let lambdas = grid.values();
    let mut points: Vec<Option<PrecisionPoint>> = vec![None; lambdas.len()];
    let mut warm: Option<OrderParams> = None;
    for (i, &lambda) in lambdas.iter().enumerate().rev() {
        let mut order = solve_order_params(loss, model, lambda, warm.as_ref(), mode, opts)?;
        if !order.converged && warm.is_some() {
            // Retry cold; keep whichever iterate is better.
            let cold = solve_order_params(loss, model, lambda, None, mode, opts)?;
            if cold.converged || cold.residual_norm < order.residual_norm {
                order = cold;
            }
        }
        if order.converged {
            warm = Some(order);
        }
        points[i] = Some(predict_precision(&order, model, lambda)?);
    }
    let points: Vec<PrecisionPoint> = points
        .into_iter()
        .map(|p| p.expect("every grid point solved"))
        .collect();

    let best = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.order.converged)
        .max_by(|a, b| a.1.balanced.total_cmp(&b.1.balanced))
        .map(|(i, _)| i);
    let optimum = best.map(|i| refine_optimum(loss, model, &points, i, mode, opts));
    let mode = match mode {
        SolveMode::Homogeneous => "homogeneous",
        SolveMode::General => "general",
    };
    Ok(PrecisionCurve {
        loss: *loss,
        mode: mode.into(),
        points,
        optimum,
    })
}

fn as_optimum(p: &PrecisionPoint, interior: bool) -> Optimum {
    Optimum {
        lambda: p.lambda,
        precision_plus: p.precision_plus,
        precision_minus: p.precision_minus,
        balanced: p.balanced,
        interior,
    }
}

fn refine_optimum(
    loss: &Loss,
    model: &PopulationModel,
    points: &[PrecisionPoint],
    best: usize,
    mode: SolveMode,
    opts: &SolverOptions,
) -> Optimum {
    let n = points.len();
    if best == 0 || best + 1 == n {
        return as_optimum(&points[best], false);
    }
    let warm = points[best].order;
    let eval = |t: f64| -> Option<PrecisionPoint> {
        let lambda = t.exp();
        let order = solve_order_params(loss, model, lambda, Some(&warm), mode, opts).ok()?;
        if !order.converged {
            return None;
        }
        predict_precision(&order, model, lambda).ok()
    };
    let score = |p: &Option<PrecisionPoint>| p.as_ref().map_or(f64::NEG_INFINITY, |p| p.balanced);

    let mut lo = points[best - 1].lambda.ln();
    let mut hi = points[best + 1].lambda.ln();
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut p1 = eval(x1);
    let mut p2 = eval(x2);
    let mut champion = points[best];
    while hi - lo > (1.0 + 1e-3f64).ln() {
        if score(&p1) >= score(&p2) {
            hi = x2;
            x2 = x1;
            p2 = p1;
            x1 = hi - inv_phi * (hi - lo);
            p1 = eval(x1);
        } else {
            lo = x1;
            x1 = x2;
            p1 = p2;
            x2 = lo + inv_phi * (hi - lo);
            p2 = eval(x2);
        }
        for p in [&p1, &p2].into_iter().flatten() {
            if p.balanced > champion.balanced {
                champion = *p;
            }
        }
    }
    as_optimum(&champion, true)
}
