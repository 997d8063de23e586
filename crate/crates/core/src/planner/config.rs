use serde::{Deserialize, Serialize};

use crate::composite::DEFAULT_CELL_SIZE;
use crate::error::{CoreError, Result};
use crate::generator::{T_FUTURE, T_PAST};

/// Width of every raw node feature row.
pub const FEATURE_WIDTH: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub d_model: usize,
    pub gnn_layers: usize,
    pub heads: usize,
    pub attn_out: usize,
    pub head_hidden: usize,
    pub t_past: usize,
    pub t_future: usize,
    pub feature_width: usize,
    /// Meters per unit of normalized position.
    pub coord_scale: f64,
    /// Pixels per unit of normalized box coordinate (the composite side, 3·S).
    pub pixel_scale: f64,
    /// Meters per second per unit of normalized speed.
    pub speed_scale: f64,
    /// Arc-length spacing used to sample map polylines.
    pub map_spacing: f64,
    /// Whether the ego descriptor is also a key/value of the global attention.
    pub ego_in_keys: bool,
    pub init_seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            gnn_layers: 3,
            heads: 4,
            attn_out: 128,
            head_hidden: 256,
            t_past: T_PAST,
            t_future: T_FUTURE,
            feature_width: FEATURE_WIDTH,
            coord_scale: 50.0,
            pixel_scale: 3.0 * DEFAULT_CELL_SIZE as f64,
            speed_scale: 20.0,
            map_spacing: 2.0,
            ego_in_keys: true,
            init_seed: 0,
        }
    }
}

impl PlannerConfig {
    /// Small network used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            d_model: 16,
            heads: 1,
            attn_out: 8,
            head_hidden: 16,
            ..Self::default()
        }
    }

    pub fn head_width(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let v = |field: &str, m: &str| Err(CoreError::validation(field, m));
        let dims = [
            ("d_model", self.d_model),
            ("gnn_layers", self.gnn_layers),
            ("heads", self.heads),
            ("attn_out", self.attn_out),
            ("head_hidden", self.head_hidden),
            ("t_past", self.t_past),
            ("t_future", self.t_future),
        ];
        for (name, d) in dims {
            if d == 0 {
                return v(name, "must be positive");
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return v("heads", "must divide d_model");
        }
        if self.feature_width != FEATURE_WIDTH {
            return v("feature_width", "node features are five wide");
        }
        for (name, s) in [
            ("coord_scale", self.coord_scale),
            ("pixel_scale", self.pixel_scale),
            ("speed_scale", self.speed_scale),
            ("map_spacing", self.map_spacing),
        ] {
            if !(s.is_finite() && s > 0.0) {
                return v(name, "must be positive");
            }
        }
        Ok(())
    }
}
