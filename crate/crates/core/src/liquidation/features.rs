use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::FeatureMap;

/// Length of [`LiquidationFeatures`] vectors.
pub const FEATURE_DIM: usize = 44;

const TIME_CENTERS: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
const TIME_WIDTH: f64 = 1.0 / 3.0;
const RATE_CENTERS: [f64; 4] = [0.75, 1.25, 1.75, 2.25];
const RATE_WIDTH: f64 = 0.5;

/// Basis over `[t, m, p]` with `τ = t/T`, `x = m/m0`, `y = p/rate_cap`:
///
/// | index  | feature |
/// |--------|---------|
/// | 0      | 1 |
/// | 1..4   | τ, x, y |
/// | 4..7   | τx, τy, xy |
/// | 7..10  | τ², x², y² |
/// | 10..26 | `k(τ, p)` on a 4×4 grid (τ-major) |
/// | 26..42 | `x·k(τ, p)` |
/// | 42, 43 | `h`, `x·h` with `h = exp(−(T − 1 − t))` |
///
/// `k` is a Gaussian bump with centers τ ∈ {0, 1/3, 2/3, 1} (width 1/3)
/// and p ∈ {0.75, 1.25, 1.75, 2.25} (width 0.5). States outside
/// `[0, T] × [0, m0] × [0, rate_cap]` are clamped and counted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiquidationFeatures {
    pub horizon: f64,
    pub initial_inventory: f64,
    pub rate_cap: f64,
    #[serde(skip)]
    clamped: Arc<AtomicU64>,
}

impl PartialEq for LiquidationFeatures {
    fn eq(&self, other: &Self) -> bool {
        self.horizon == other.horizon
            && self.initial_inventory == other.initial_inventory
            && self.rate_cap == other.rate_cap
    }
}

impl LiquidationFeatures {
    pub fn new(horizon: usize, initial_inventory: f64, rate_cap: f64) -> Self {
        Self { horizon: horizon as f64, initial_inventory, rate_cap, clamped: Arc::default() }
    }

    pub fn from_config(config: &super::LiquidationConfig) -> Self {
        Self::new(config.horizon, config.initial_inventory, config.rate_cap)
    }

    /// Number of inputs clamped so far (shared between clones).
    pub fn clamp_count(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }
}

impl FeatureMap for LiquidationFeatures {
    fn id(&self) -> String {
        format!("liquidation-v1(T={},m0={},cap={})", self.horizon, self.initial_inventory, self.rate_cap)
    }

    fn dim(&self) -> usize {
        FEATURE_DIM
    }

    fn features_into(&self, state: &[f64], out: &mut [f64]) {
        let clamp = |v: f64, hi: f64| {
            if !(0.0..=hi).contains(&v) {
                self.clamped.fetch_add(1, Ordering::Relaxed);
            }
            v.clamp(0.0, hi)
        };
        let t = clamp(state[0], self.horizon);
        let m = clamp(state[1], self.initial_inventory);
        let p = clamp(state[2], self.rate_cap);
        let (tau, x, y) = (t / self.horizon, m / self.initial_inventory, p / self.rate_cap);
        out[0] = 1.0;
        out[1] = tau;
        out[2] = x;
        out[3] = y;
        out[4] = tau * x;
        out[5] = tau * y;
        out[6] = x * y;
        out[7] = tau * tau;
        out[8] = x * x;
        out[9] = y * y;
        for (i, tc) in TIME_CENTERS.iter().enumerate() {
            let zt = (tau - tc) / TIME_WIDTH;
            for (j, pc) in RATE_CENTERS.iter().enumerate() {
                let zp = (p - pc) / RATE_WIDTH;
                let k = (-0.5 * (zt * zt + zp * zp)).exp();
                out[10 + 4 * i + j] = k;
                out[26 + 4 * i + j] = x * k;
            }
        }
        let h = (-(self.horizon - 1.0 - t).max(0.0)).exp();
        out[42] = h;
        out[43] = x * h;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phi() -> LiquidationFeatures {
        LiquidationFeatures::new(100, 100.0, 5.0)
    }

    #[test]
    fn deterministic_and_finite_at_origin() {
        let f = phi();
        let a = f.features(&[0.0, 0.0, 0.0]);
        assert_eq!(a, f.features(&[0.0, 0.0, 0.0]));
        assert_eq!(a.len(), FEATURE_DIM);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(f.clamp_count(), 0);
    }

    #[test]
    fn rate_change_touches_only_rate_coordinates() {
        let f = phi();
        let a = f.features(&[30.0, 60.0, 1.2]);
        let b = f.features(&[30.0, 60.0, 1.7]);
        let rate_dependent: Vec<usize> = [3, 5, 6, 9].into_iter().chain(10..42).collect();
        for i in 0..FEATURE_DIM {
            if rate_dependent.contains(&i) {
                assert_ne!(a[i], b[i], "coordinate {i}");
            } else {
                assert_eq!(a[i], b[i], "coordinate {i}");
            }
        }
    }

    #[test]
    fn out_of_box_states_are_clamped_and_counted() {
        let f = phi();
        let g = f.clone();
        assert_eq!(f.features(&[10.0, 50.0, 9.0]), f.features(&[10.0, 50.0, 5.0]));
        assert_eq!(g.clamp_count(), 1);
    }
}
