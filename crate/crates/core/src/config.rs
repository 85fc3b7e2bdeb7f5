//! The resolved settings of one pipeline run, addressable as flat
//! `key = value` pairs.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::sampling::{DownsampleMethod, DEFAULT_DOWNSAMPLE_N};
use crate::srg::SrgSettings;
use crate::train::TrainConfig;

pub const DEFAULT_KNN_K: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Neighbors of the graph used for normals and region growing.
    pub knn_k: usize,
    pub downsample_n: usize,
    pub downsample_method: DownsampleMethod,
    /// Seeds downsampling, region growing and network initialization.
    pub rng_seed: u64,
    pub srg: SrgSettings,
    pub train: TrainConfig,
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            knn_k: DEFAULT_KNN_K,
            downsample_n: DEFAULT_DOWNSAMPLE_N,
            downsample_method: DownsampleMethod::default(),
            rng_seed: 0,
            srg: SrgSettings::default(),
            train: TrainConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

/// Every key accepted by [`RunConfig::set`], in echo order.
pub const KEYS: &[&str] = &[
    "knn_k",
    "downsample_n",
    "downsample_method",
    "rng_seed",
    "srg.d_max",
    "srg.theta_max_deg",
    "srg.target_k",
    "srg.min_cluster",
    "train.iterations",
    "train.lr",
    "train.momentum",
    "train.min_labels",
    "train.warmup",
    "train.balance_labels",
    "model.k_graph",
    "model.edge_widths",
    "model.transformer_widths",
    "model.cov_widths",
    "model.graph_widths",
    "model.post_widths",
    "model.bottleneck_dim",
    "model.head_widths",
    "model.out_labels",
    "model.dynamic_recompute",
    "model.leaky_slope",
    "model.center_logits",
];

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::InvalidParam(format!("{key} = {value}: expected {what}"))
}

fn int(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad(key, v, "a nonnegative integer"))
}

fn real(key: &str, v: &str) -> Result<f64> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(bad(key, v, "a finite real")),
    }
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, v, "true or false")),
    }
}

fn widths(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| int(key, s.trim())).collect()
}

/// `None` for the literal `auto`.
fn auto_real(key: &str, v: &str) -> Result<Option<f64>> {
    if v == "auto" {
        Ok(None)
    } else {
        real(key, v).map(Some)
    }
}

fn auto_int(key: &str, v: &str) -> Result<Option<usize>> {
    if v == "auto" {
        Ok(None)
    } else {
        int(key, v).map(Some)
    }
}

fn join(ws: &[usize]) -> String {
    ws.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
}

fn show_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".into(), |x| x.to_string())
}

impl RunConfig {
    /// Applies one `key = value` override. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "knn_k" => self.knn_k = int(key, v)?,
            "downsample_n" => self.downsample_n = int(key, v)?,
            "downsample_method" => self.downsample_method = v.parse()?,
            "rng_seed" => self.rng_seed = v.parse().map_err(|_| bad(key, v, "a 64-bit unsigned integer"))?,
            "srg.d_max" => self.srg.d_max = auto_real(key, v)?,
            "srg.theta_max_deg" => self.srg.theta_max = auto_real(key, v)?.map(f64::to_radians),
            "srg.target_k" => self.srg.target_k = auto_int(key, v)?,
            "srg.min_cluster" => self.srg.min_cluster = auto_int(key, v)?,
            "train.iterations" => self.train.iterations = int(key, v)?,
            "train.lr" => self.train.lr = real(key, v)?,
            "train.momentum" => self.train.momentum = real(key, v)?,
            "train.min_labels" => self.train.min_labels = int(key, v)?,
            "train.warmup" => self.train.warmup = int(key, v)?,
            "train.balance_labels" => self.train.balance_labels = boolean(key, v)?,
            "model.k_graph" => self.model.k_graph = int(key, v)?,
            "model.edge_widths" => self.model.edge_widths = widths(key, v)?,
            "model.transformer_widths" => {
                let w = widths(key, v)?;
                self.model.transformer_widths = w.try_into().map_err(|_| bad(key, v, "three widths"))?;
            }
            "model.cov_widths" => self.model.cov_widths = widths(key, v)?,
            "model.graph_widths" => self.model.graph_widths = widths(key, v)?,
            "model.post_widths" => self.model.post_widths = widths(key, v)?,
            "model.bottleneck_dim" => self.model.bottleneck_dim = int(key, v)?,
            "model.head_widths" => self.model.head_widths = widths(key, v)?,
            "model.out_labels" => self.model.out_labels = int(key, v)?,
            "model.dynamic_recompute" => self.model.dynamic_recompute = boolean(key, v)?,
            "model.leaky_slope" => self.model.leaky_slope = real(key, v)?,
            "model.center_logits" => self.model.center_logits = boolean(key, v)?,
            other => return Err(Error::InvalidParam(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "knn_k" => self.knn_k.to_string(),
            "downsample_n" => self.downsample_n.to_string(),
            "downsample_method" => self.downsample_method.to_string(),
            "rng_seed" => self.rng_seed.to_string(),
            "srg.d_max" => show_opt(&self.srg.d_max),
            "srg.theta_max_deg" => show_opt(&self.srg.theta_max.map(f64::to_degrees)),
            "srg.target_k" => show_opt(&self.srg.target_k),
            "srg.min_cluster" => show_opt(&self.srg.min_cluster),
            "train.iterations" => self.train.iterations.to_string(),
            "train.lr" => self.train.lr.to_string(),
            "train.momentum" => self.train.momentum.to_string(),
            "train.min_labels" => self.train.min_labels.to_string(),
            "train.warmup" => self.train.warmup.to_string(),
            "train.balance_labels" => self.train.balance_labels.to_string(),
            "model.k_graph" => self.model.k_graph.to_string(),
            "model.edge_widths" => join(&self.model.edge_widths),
            "model.transformer_widths" => join(&self.model.transformer_widths),
            "model.cov_widths" => join(&self.model.cov_widths),
            "model.graph_widths" => join(&self.model.graph_widths),
            "model.post_widths" => join(&self.model.post_widths),
            "model.bottleneck_dim" => self.model.bottleneck_dim.to_string(),
            "model.head_widths" => join(&self.model.head_widths),
            "model.out_labels" => self.model.out_labels.to_string(),
            "model.dynamic_recompute" => self.model.dynamic_recompute.to_string(),
            "model.leaky_slope" => self.model.leaky_slope.to_string(),
            "model.center_logits" => self.model.center_logits.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// All settings as `(key, value)` in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        KEYS.iter()
            .map(|&k| (k, self.get(k).expect("every key is readable")))
            .collect()
    }

    /// Region-growing settings carrying the run seed.
    pub fn srg_settings(&self) -> SrgSettings {
        SrgSettings {
            rng_seed: self.rng_seed,
            ..self.srg.clone()
        }
    }

    /// Training settings carrying the run seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.rng_seed,
            ..self.train
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.knn_k == 0 || self.downsample_n == 0 {
            return Err(Error::InvalidParam("knn_k and downsample_n must be >= 1".into()));
        }
        if matches!(self.srg.target_k, Some(0)) {
            return Err(Error::InvalidParam("srg.target_k must be >= 1".into()));
        }
        self.train.validate()?;
        self.model.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_reparse_to_the_same_config() {
        let mut a = RunConfig::default();
        a.set("srg.d_max", "0.25").unwrap();
        a.set("model.head_widths", "32, 16").unwrap();
        a.set("train.balance_labels", "false").unwrap();
        let mut b = RunConfig::default();
        for (k, v) in a.entries() {
            b.set(k, &v).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut c = RunConfig::default();
        assert!(c.set("train.lr_decay", "1").is_err());
        assert!(c.set("knn_k", "-3").is_err());
        assert!(c.set("train.lr", "NaN").is_err());
        assert!(c.set("model.transformer_widths", "1,2").is_err());
        assert!(c.set("model.center_logits", "yes").is_err());
    }
}
