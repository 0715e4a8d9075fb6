use serde::{Deserialize, Serialize};

use super::optimizer::OptimizerState;
use super::schedule::{lr_at, LrSchedule};
use crate::error::Result;

pub trait Objective {
    fn value(&self, w: &[f64]) -> f64;
    fn gradient(&self, w: &[f64]) -> Vec<f64>;
}

/// `sum_i c_i (w_i - x_i)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub curvature: Vec<f64>,
    pub center: Vec<f64>,
}

impl Quadratic {
    pub fn diagonal(curvature: Vec<f64>) -> Self {
        let center = vec![0.0; curvature.len()];
        Quadratic { curvature, center }
    }
}

impl Objective for Quadratic {
    fn value(&self, w: &[f64]) -> f64 {
        w.iter()
            .zip(&self.curvature)
            .zip(&self.center)
            .map(|((w, c), x)| c * (w - x) * (w - x))
            .sum()
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(&self.curvature)
            .zip(&self.center)
            .map(|((w, c), x)| 2.0 * c * (w - x))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl Objective for Constant {
    fn value(&self, _w: &[f64]) -> f64 {
        self.0
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        vec![0.0; w.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub lr: f64,
    pub value: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryPoint {
        self.points.last().expect("trajectory holds the starting point")
    }

    pub fn to_csv(&self) -> String {
        let dim = self.points.first().map_or(0, |p| p.weights.len());
        let mut out = String::from("step,lr,value");
        for i in 0..dim {
            out.push_str(&format!(",w{i}"));
        }
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!("{},{:e},{:e}", p.step, p.lr, p.value));
            for w in &p.weights {
                out.push_str(&format!(",{w:e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs `steps` updates from `state`. The learning rate comes from
/// `schedule` at each step number when given, otherwise from the state's
/// config. The returned trajectory starts with the initial point.
pub fn minimize(
    objective: &dyn Objective,
    steps: u64,
    mut state: OptimizerState,
    schedule: Option<&LrSchedule>,
) -> Result<(Trajectory, OptimizerState)> {
    let mut points = Vec::with_capacity(steps as usize + 1);
    points.push(TrajectoryPoint {
        step: state.step,
        lr: 0.0,
        value: objective.value(&state.weights),
        weights: state.weights.clone(),
    });
    for _ in 0..steps {
        let lr = match schedule {
            Some(s) => lr_at(s, state.step + 1)?,
            None => state.config.lr,
        };
        let gradient = objective.gradient(&state.weights);
        state.apply(&gradient, lr)?;
        points.push(TrajectoryPoint {
            step: state.step,
            lr,
            value: objective.value(&state.weights),
            weights: state.weights.clone(),
        });
    }
    Ok((Trajectory { points }, state))
}
