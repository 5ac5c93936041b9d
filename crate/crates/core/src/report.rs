use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Outcome of an empirical inequality probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub name: String,
    pub trials: usize,
    pub max_ratio: f64,
    pub argmax_input_id: Option<usize>,
    pub tolerance: f64,
    pub pass: bool,
    /// Named auxiliary quantities (sub-probe maxima, per-scale ratios).
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

impl ProbeReport {
    pub fn new(name: impl Into<String>, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            trials: 0,
            max_ratio: 0.0,
            argmax_input_id: None,
            tolerance,
            pass: false,
            extra: BTreeMap::new(),
        }
    }

    /// Record one trial; non-finite ratios are kept so `pass` can reject them.
    pub fn observe(&mut self, id: usize, ratio: f64) {
        self.trials += 1;
        if (ratio.is_nan() || ratio > self.max_ratio || self.argmax_input_id.is_none())
            && !(self.max_ratio.is_nan()) {
                self.max_ratio = ratio;
                self.argmax_input_id = Some(id);
            }
    }

    pub fn note(&mut self, key: impl Into<String>, value: f64) {
        self.extra.insert(key.into(), value);
    }
}
