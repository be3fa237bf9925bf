use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Fgsm,
    Ifgsm,
    Mifgsm,
    Amifgsm,
    UapCumulative,
    UapOptimized,
    UapGenerative,
    Korhonen,
    Madc,
}

impl AttackKind {
    pub const ALL: [AttackKind; 9] = [
        AttackKind::Fgsm,
        AttackKind::Ifgsm,
        AttackKind::Mifgsm,
        AttackKind::Amifgsm,
        AttackKind::UapCumulative,
        AttackKind::UapOptimized,
        AttackKind::UapGenerative,
        AttackKind::Korhonen,
        AttackKind::Madc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Ifgsm => "ifgsm",
            AttackKind::Mifgsm => "mifgsm",
            AttackKind::Amifgsm => "amifgsm",
            AttackKind::UapCumulative => "uap-cumulative",
            AttackKind::UapOptimized => "uap-optimized",
            AttackKind::UapGenerative => "uap-generative",
            AttackKind::Korhonen => "korhonen",
            AttackKind::Madc => "madc",
        }
    }

    /// Universal perturbations are trained once and then applied.
    pub fn is_uap(self) -> bool {
        matches!(
            self,
            AttackKind::UapCumulative | AttackKind::UapOptimized | AttackKind::UapGenerative
        )
    }

    pub fn is_iterative(self) -> bool {
        !matches!(self, AttackKind::Fgsm | AttackKind::UapCumulative)
    }

    /// One-line description, used by the generated attack catalog.
    pub fn summary(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "One signed gradient step of size epsilon, then clip to [0, 1].",
            AttackKind::Ifgsm => {
                "T signed steps of size alpha, each clipped to the epsilon ball around the original and to [0, 1]."
            }
            AttackKind::Mifgsm => "I-FGSM driven by the momentum gradient g_t = grad J + nu * g_(t-1).",
            AttackKind::Amifgsm => {
                "MI-FGSM with epsilon = 1 / provider(I) from a pluggable naturalness provider."
            }
            AttackKind::UapCumulative => {
                "Universal pattern: mean one-step signed perturbation over the training set, unit L-inf."
            }
            AttackKind::UapOptimized => {
                "Universal pattern trained with Adam to maximize the mean score of clip(I + a * P)."
            }
            AttackKind::UapGenerative => {
                "Small U-Net trained to map uniform noise to a universal pattern; one pattern is frozen."
            }
            AttackKind::Korhonen => {
                "Gradient steps masked by a Sobel spatial-activity map of the original image."
            }
            AttackKind::Madc => {
                "Score ascent projected orthogonal to the MSE gradient, with a search holding MSE fixed."
            }
        }
    }

    /// Keys read from `extra`, with defaults, for the catalog.
    pub fn extra_keys(self) -> &'static [(&'static str, &'static str)] {
        match self {
            AttackKind::Amifgsm => &[("provider", "naturalness-lite | constant"), ("provider_value", "20.0")],
            AttackKind::UapOptimized => &[("lr", "0.01"), ("epochs", "20"), ("batch_size", "4")],
            AttackKind::UapGenerative => {
                &[("lr", "0.01"), ("epochs", "20"), ("batch_size", "4"), ("width", "8")]
            }
            AttackKind::Korhonen => &[("normalize", "true")],
            AttackKind::Madc => &[("mse_budget", "0.001"), ("units", "unit | eight-bit"), ("precision", "0.04")],
            _ => &[],
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown attack kind `{s}`")))
    }
}

/// Diagnostic markers carried on results and perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flag {
    /// The gradient vanished everywhere; the image was returned unchanged.
    NoOp,
    /// MADC could not land within the MSE precision.
    NonConverged,
    /// A MADC step was skipped because the projected gradient vanished.
    ParallelSkip,
    /// A trained pattern came out identically zero.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub extra: BTreeMap<String, Value>,
}

pub mod defaults {
    pub fn epsilon() -> f64 {
        4.0 / 255.0
    }
    pub fn alpha() -> f64 {
        1.0 / 255.0
    }
    pub fn iterations() -> usize {
        10
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn amplitude() -> f64 {
        0.2
    }
    pub const AMPLITUDES: [f64; 3] = [0.2, 0.4, 0.8];
}

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        Self {
            kind,
            epsilon: defaults::epsilon(),
            alpha: defaults::alpha(),
            iterations: defaults::iterations(),
            momentum: defaults::momentum(),
            amplitude: defaults::amplitude(),
            seed: 0,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_epsilon(mut self, v: f64) -> Self {
        self.epsilon = v;
        self
    }

    pub fn with_alpha(mut self, v: f64) -> Self {
        self.alpha = v;
        self
    }

    pub fn with_iterations(mut self, v: usize) -> Self {
        self.iterations = v;
        self
    }

    pub fn with_momentum(mut self, v: f64) -> Self {
        self.momentum = v;
        self
    }

    pub fn with_amplitude(mut self, v: f64) -> Self {
        self.amplitude = v;
        self
    }

    pub fn with_seed(mut self, v: u64) -> Self {
        self.seed = v;
        self
    }

    pub fn with_extra(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.extra.insert(key.to_string(), value.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha {} must be >= 0", self.alpha));
        }
        if self.kind.is_iterative() && !self.kind.is_uap() && self.iterations == 0 {
            return bad(format!("{} needs iterations >= 1", self.kind));
        }
        if !(self.momentum >= 0.0 && self.momentum.is_finite()) {
            return bad(format!("momentum {} must be >= 0", self.momentum));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return bad(format!("amplitude {} must be >= 0", self.amplitude));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn extra_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.extra.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::InvalidSpec(format!("extra.{key} must be a number, got {v}"))),
        }
    }

    pub fn extra_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.extra.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| Error::InvalidSpec(format!("extra.{key} must be a non-negative integer, got {v}"))),
        }
    }

    pub fn extra_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.extra.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_bool()
                .ok_or_else(|| Error::InvalidSpec(format!("extra.{key} must be a boolean, got {v}"))),
        }
    }

    pub fn extra_str<'a>(&'a self, key: &str, default: &'a str) -> Result<&'a str> {
        match self.extra.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_str()
                .ok_or_else(|| Error::InvalidSpec(format!("extra.{key} must be a string, got {v}"))),
        }
    }
}
