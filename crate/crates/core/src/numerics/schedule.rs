use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warmup from 0 to `base_lr`, then linear decay to 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base_lr: 3e-4,
            warmup_steps: 100,
            total_steps: 1100,
        }
    }
}

pub fn lr_at(schedule: &LrSchedule, step: u64) -> Result<f64> {
    let LrSchedule {
        base_lr,
        warmup_steps,
        total_steps,
    } = *schedule;
    if step > total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: total_steps,
        });
    }
    if warmup_steps > total_steps {
        return Err(Error::InvalidHyperparams(format!(
            "warmup_steps {warmup_steps} exceeds total_steps {total_steps}"
        )));
    }
    if step < warmup_steps {
        return Ok(base_lr * step as f64 / warmup_steps as f64);
    }
    if total_steps == warmup_steps {
        return Ok(base_lr);
    }
    Ok(base_lr * (total_steps - step) as f64 / (total_steps - warmup_steps) as f64)
}
