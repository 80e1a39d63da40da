use serde::{Deserialize, Serialize};

pub const N_PARAMS: usize = 8;

/// Column names in canonical order, shared by every file format.
pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "t0", "t1", "log_r0", "beta0", "beta1", "beta2", "beta3", "beta4",
];

pub const T0: usize = 0;
pub const T1: usize = 1;
pub const LOG_R0: usize = 2;
pub const BETA0: usize = 3;
pub const BETA1: usize = 4;
pub const BETA2: usize = 5;
pub const BETA3: usize = 6;
pub const BETA4: usize = 7;

/// The eight EPP inputs for one area.
///
/// `t1` is measured in years after `t0`: the r-trend stabilization term
/// switches on at calendar year `t0 + t1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub t0: f64,
    pub t1: f64,
    pub log_r0: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
}

impl Theta {
    pub fn from_array(v: [f64; N_PARAMS]) -> Self {
        Theta {
            t0: v[0],
            t1: v[1],
            log_r0: v[2],
            beta0: v[3],
            beta1: v[4],
            beta2: v[5],
            beta3: v[6],
            beta4: v[7],
        }
    }

    /// Panics unless `v.len() == 8`.
    pub fn from_slice(v: &[f64]) -> Self {
        let arr: [f64; N_PARAMS] = v.try_into().expect("theta needs 8 coordinates");
        Self::from_array(arr)
    }

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.t0,
            self.t1,
            self.log_r0,
            self.beta0,
            self.beta1,
            self.beta2,
            self.beta3,
            self.beta4,
        ]
    }

    pub fn get(&self, j: usize) -> f64 {
        self.to_array()[j]
    }

    /// Epidemic start rounded onto the 0.1-year simulation grid.
    pub fn t0_rounded(&self) -> f64 {
        round_tenth(self.t0)
    }

    pub fn t1_rounded(&self) -> f64 {
        round_tenth(self.t1)
    }

    pub fn r0(&self) -> f64 {
        self.log_r0.exp()
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl std::fmt::Display for Theta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = PARAM_NAMES
            .iter()
            .zip(self.to_array())
            .map(|(n, v)| format!("{n}={v}"))
            .collect();
        write!(f, "({})", parts.join(", "))
    }
}

pub fn round_tenth(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_round_trip() {
        let v = [1980.04, 20.0, 0.42, 0.46, 0.17, -0.68, -0.038, 0.14];
        let th = Theta::from_array(v);
        assert_eq!(th.to_array(), v);
        assert_eq!(th.t0_rounded(), 1980.0);
        assert_eq!(Theta::from_array([1983.26, 19.95, 0., 0., 0., 0., 0., 0.]).t0_rounded(), 1983.3);
        assert_eq!(th.get(BETA4), 0.14);
    }
}
