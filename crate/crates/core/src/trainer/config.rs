//! Training configuration as flat `key = value` text.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn format_value(&self) -> String;
}

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|e| format!("{e}"))
    }
    fn format_value(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for u64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|e| format!("{e}"))
    }
    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for usize {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|e| format!("{e}"))
    }
    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for bool {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "true" | "on" | "1" => Ok(true),
            "false" | "off" | "0" => Ok(false),
            _ => Err(format!("expected true/false, got {s:?}")),
        }
    }
    fn format_value(&self) -> String {
        self.to_string()
    }
}

macro_rules! train_config {
    ($( $(#[$doc:meta])* $name:ident : $ty:ty = $default:expr ),* $(,)?) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct TrainConfig {
            $( $(#[$doc])* pub $name: $ty, )*
        }

        impl Default for TrainConfig {
            fn default() -> Self {
                Self { $( $name: $default, )* }
            }
        }

        impl TrainConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($name) ),*];

            /// Sets one field from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($name) => {
                        self.$name = <$ty as ConfigValue>::parse_value(value)
                            .map_err(|e| Error::InvalidArgument(format!("config key {key}: {e}")))?;
                    } )*
                    _ => return Err(Error::InvalidArgument(format!("unknown config key {key:?}"))),
                }
                Ok(())
            }

            /// Canonical text form; parsing it yields an identical config.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $( let _ = writeln!(s, "{} = {}", stringify!($name), ConfigValue::format_value(&self.$name)); )*
                s
            }
        }
    };
}

train_config! {
    seed: u64 = 0,
    bootstrap_iters: u64 = 3000,
    total_iters: u64 = 30000,
    propagation_period: u64 = 1000,
    clamp_period: u64 = 3000,
    /// Phase of propagation events within their period.
    propagation_offset: u64 = 500,
    reflective_threshold: f64 = 0.1,
    opacity_floor: f64 = 0.9,
    r_floor: f64 = 0.001,
    axis_scale_factor: f64 = 1.5,
    sabotage_amplitude: f64 = 0.10,
    opacity_clamp_value: f64 = 0.01,
    termination_patience_iters: u64 = 2000,
    lr_position: f64 = 1.6e-4,
    lr_position_final: f64 = 1.6e-6,
    /// Multiplier on the position rates; 0 means the camera extent of the dataset.
    lr_position_scale: f64 = 0.0,
    lr_rotation: f64 = 1e-3,
    lr_scale: f64 = 5e-3,
    lr_opacity: f64 = 5e-2,
    lr_sh: f64 = 2.5e-3,
    /// Degree 1-3 coefficients, at 1/20 of the base rate as in 3DGS.
    lr_sh_rest: f64 = 1.25e-4,
    lr_reflection: f64 = 1e-2,
    lr_env: f64 = 1e-2,
    densify_from: u64 = 500,
    densify_until: u64 = 15000,
    densify_interval: u64 = 100,
    /// Mean screen-space gradient in NDC units.
    densify_grad_threshold: f64 = 1e-3,
    /// Clone/split boundary as a fraction of the camera extent.
    percent_dense: f64 = 0.01,
    prune_opacity: f64 = 0.005,
    max_gaussians: usize = 4000,
    lambda: f64 = 0.2,
    deferred_mode: bool = true,
    propagation_enabled: bool = true,
    sabotage_enabled: bool = true,
    /// When false, reflection strengths stay 0 and the environment map is frozen.
    reflection_enabled: bool = true,
    sh_degree_max: usize = 3,
    /// Sphere domain M for reflective Gaussians; radius 0 disables it.
    domain_radius: f64 = 0.0,
    domain_center_x: f64 = 0.0,
    domain_center_y: f64 = 0.0,
    domain_center_z: f64 = 0.0,
    init_points: usize = 2000,
    init_radius: f64 = 1.5,
    init_opacity: f64 = 0.1,
    env_height: usize = 64,
    env_init: f64 = 0.5,
    log_interval: u64 = 1000,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::InvalidArgument(format!(
                    "config line {}: expected key = value, got {raw:?}",
                    lineno + 1
                )));
            };
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("reflective_threshold", self.reflective_threshold),
            ("opacity_floor", self.opacity_floor),
            ("r_floor", self.r_floor),
            ("sabotage_amplitude", self.sabotage_amplitude),
            ("opacity_clamp_value", self.opacity_clamp_value),
            ("prune_opacity", self.prune_opacity),
            ("lambda", self.lambda),
            ("init_opacity", self.init_opacity),
        ];
        for (k, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{k} = {v} is outside [0, 1]")));
            }
        }
        let rates = [
            self.lr_position,
            self.lr_position_final,
            self.lr_position_scale,
            self.lr_rotation,
            self.lr_scale,
            self.lr_opacity,
            self.lr_sh,
            self.lr_sh_rest,
            self.lr_reflection,
            self.lr_env,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidArgument("learning rates must be finite and non-negative".into()));
        }
        if self.propagation_period == 0 || self.clamp_period == 0 || self.densify_interval == 0 {
            return Err(Error::InvalidArgument("periods must be positive".into()));
        }
        if self.propagation_offset >= self.propagation_period {
            return Err(Error::InvalidArgument("propagation_offset must be below propagation_period".into()));
        }
        if self.bootstrap_iters > self.total_iters {
            return Err(Error::InvalidArgument("bootstrap_iters exceeds total_iters".into()));
        }
        if !(self.axis_scale_factor > 0.0) || self.sh_degree_max > crate::sh::MAX_DEGREE || self.env_height == 0 {
            return Err(Error::InvalidArgument("axis_scale_factor, sh_degree_max or env_height out of range".into()));
        }
        if self.domain_radius < 0.0 || self.init_radius <= 0.0 || self.env_init < 0.0 {
            return Err(Error::InvalidArgument("domain_radius, init_radius or env_init out of range".into()));
        }
        // Both events fire on it iff gcd(periods) divides the offset (CRT).
        if self.propagation_offset % gcd(self.propagation_period, self.clamp_period) == 0 {
            return Err(Error::Contract(format!(
                "propagation (every {} at offset {}) and opacity clamp (every {}) can fire on the same iteration",
                self.propagation_period, self.propagation_offset, self.clamp_period
            )));
        }
        Ok(())
    }

    /// Propagation event on completed iteration `it` (reflection stage only).
    pub fn propagation_fires(&self, it: u64) -> bool {
        it > self.bootstrap_iters && it % self.propagation_period == self.propagation_offset
    }

    /// Opacity clamp on completed iteration `it` (within the densification window).
    pub fn clamp_fires(&self, it: u64) -> bool {
        it > 0 && it <= self.densify_until && it % self.clamp_period == 0
    }

    pub fn densify_fires(&self, it: u64) -> bool {
        it > self.densify_from && it <= self.densify_until && it % self.densify_interval == 0
    }

    /// Iteration from which the reflective count is tracked for termination.
    pub fn termination_start(&self) -> u64 {
        self.bootstrap_iters + self.propagation_offset
    }

    pub fn domain(&self) -> Option<crate::gaussian::SphereDomain> {
        (self.domain_radius > 0.0).then_some(crate::gaussian::SphereDomain {
            center: [self.domain_center_x, self.domain_center_y, self.domain_center_z],
            radius: self.domain_radius,
        })
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }
}
