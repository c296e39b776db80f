use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// dζ/dt = −b ζ(t) + α ζ(t−T) / (1 + ζ(t−T)¹⁰), with ζ(t) = history_init
/// for t ≤ 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MackeyGlassConfig {
    pub alpha: f64,
    pub b: f64,
    /// Delay T in time units.
    pub delay: f64,
    /// Integration step in time units.
    pub step: f64,
    /// Number of unit-spaced samples returned.
    pub length: usize,
    pub history_init: f64,
    /// Time units simulated and dropped before the first returned sample.
    pub discard: usize,
}

impl Default for MackeyGlassConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            b: 0.1,
            delay: 17.0,
            step: 0.1,
            length: 1182,
            history_init: 1.2,
            discard: 0,
        }
    }
}

fn integral_ratio(num: f64, den: f64, what: &str) -> Result<usize> {
    let r = num / den;
    let k = r.round();
    if (r - k).abs() > 1e-9 * r.abs().max(1.0) || k < 0.0 {
        return Err(Error::InvalidParameter(format!("{what} must be an integer multiple of the step")));
    }
    Ok(k as usize)
}

impl MackeyGlassConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParameter("step must be positive".into()));
        }
        if self.length == 0 {
            return Err(Error::InvalidParameter("length must be at least 1".into()));
        }
        if !(self.delay >= 0.0) {
            return Err(Error::InvalidParameter("delay must be non-negative".into()));
        }
        integral_ratio(self.delay, self.step, "delay")?;
        integral_ratio(1.0, self.step, "the unit sampling interval")?;
        Ok(())
    }
}

/// Integrate with classical RK4; the delayed term at half steps is linearly
/// interpolated from the stored grid. Returns ζ at t = discard, discard+1, ….
pub fn mackey_glass_simulate(config: &MackeyGlassConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let h = config.step;
    let lag = integral_ratio(config.delay, h, "delay")?;
    let per_unit = integral_ratio(1.0, h, "unit")?;
    let total = (config.discard + config.length - 1) * per_unit;
    let mut z = Vec::with_capacity(total + 1);
    z.push(config.history_init);
    // Delayed value at grid index i − lag + frac (frac ∈ {0, ½, 1}).
    let delayed = |z: &[f64], i: usize, frac: f64| -> f64 {
        if lag == 0 {
            return f64::NAN;
        }
        let at = |k: isize| if k <= 0 { config.history_init } else { z[k as usize] };
        let base = i as isize - lag as isize;
        if frac == 0.0 {
            at(base)
        } else if frac == 1.0 {
            at(base + 1)
        } else {
            (1.0 - frac) * at(base) + frac * at(base + 1)
        }
    };
    let f = |y: f64, yd: f64| -config.b * y + config.alpha * yd / (1.0 + yd.powi(10));
    for i in 0..total {
        let y = z[i];
        let (d0, dh, d1) = if lag == 0 {
            (y, f64::NAN, f64::NAN)
        } else {
            (delayed(&z, i, 0.0), delayed(&z, i, 0.5), delayed(&z, i, 1.0))
        };
        let next = if lag == 0 {
            // No delay: the delayed state is the current state.
            let g = |y: f64| f(y, y);
            let k1 = g(y);
            let k2 = g(y + 0.5 * h * k1);
            let k3 = g(y + 0.5 * h * k2);
            let k4 = g(y + h * k3);
            y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        } else {
            let k1 = f(y, d0);
            let k2 = f(y + 0.5 * h * k1, dh);
            let k3 = f(y + 0.5 * h * k2, dh);
            let k4 = f(y + h * k3, d1);
            y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        };
        if !next.is_finite() {
            return Err(Error::NonFinite(format!("Mackey-Glass state at integration step {}", i + 1)));
        }
        z.push(next);
    }
    Ok((0..config.length)
        .map(|k| z[(config.discard + k) * per_unit])
        .collect())
}
