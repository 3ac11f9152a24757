use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use malkin_core::cycle::CycleSearchConfig;
use malkin_core::forced::{MultistartConfig, NewtonConfig, Region};
use malkin_core::malkin::MalkinConfig;
use malkin_core::odeint::IntegratorConfig;
use malkin_core::sysdef::{register_builtin, ExpressionSpec, ParamValue, SystemDef};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub system: SystemBlock,
    #[serde(default = "one")]
    pub k: u32,
    pub cycle: CycleSearchConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub malkin: MalkinConfig,
    #[serde(default)]
    pub verify: VerifyBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemBlock {
    Builtin {
        name: String,
        #[serde(default)]
        params: BTreeMap<String, ParamValue>,
        #[serde(default)]
        forcing_period: Option<f64>,
    },
    Expressions {
        name: String,
        dimension: usize,
        f: Vec<String>,
        g: Vec<String>,
        #[serde(default)]
        params: BTreeMap<String, f64>,
        forcing_period: f64,
    },
}

impl SystemBlock {
    pub fn build(&self) -> Result<SystemDef> {
        let sys = match self {
            SystemBlock::Builtin { name, params, forcing_period } => register_builtin(name, params, *forcing_period)?,
            SystemBlock::Expressions { name, dimension, f, g, params, forcing_period } => {
                SystemDef::from_expressions(&ExpressionSpec {
                    name: name.clone(),
                    dimension: *dimension,
                    f: f.clone(),
                    g: g.clone(),
                    params: params.clone(),
                    forcing_period: *forcing_period,
                })?
            }
        };
        Ok(sys)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyBlock {
    pub eps_list: Vec<f64>,
    /// Defaults to the annulus between half the cycle's smallest radius and
    /// the system's a-priori radius bound.
    pub region: Option<Region>,
    pub multistart: MultistartConfig,
    pub newton: NewtonConfig,
    pub match_radius: Option<f64>,
    pub strict_theorem_rule: bool,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        let sweep = malkin_core::forced::SweepConfig::default();
        VerifyBlock {
            eps_list: sweep.eps_list,
            region: None,
            multistart: sweep.multistart,
            newton: sweep.newton,
            match_radius: sweep.match_radius,
            strict_theorem_rule: sweep.strict_theorem_rule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { dir: PathBuf::from("malkin-out") }
    }
}

/// Parses a config, reporting the key path of the first schema violation.
pub fn parse(text: &str) -> Result<AnalysisConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: AnalysisConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("config error at `{path}`: {}", e.into_inner())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<AnalysisConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    parse(&text).with_context(|| format!("invalid config {}", path.display()))
}

impl AnalysisConfig {
    /// Checks the blocks whose validity does not depend on the system.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            bail!("config error at `k`: must be at least 1");
        }
        self.integrator.validate().context("config error in `integrator`")?;
        self.malkin.validate().context("config error in `malkin`")?;
        self.sweep().validate().context("config error in `verify`")?;
        Ok(())
    }

    pub fn sweep(&self) -> malkin_core::forced::SweepConfig {
        malkin_core::forced::SweepConfig {
            eps_list: self.verify.eps_list.clone(),
            match_radius: self.verify.match_radius,
            multistart: self.verify.multistart.clone(),
            newton: self.verify.newton.clone(),
            strict_theorem_rule: self.verify.strict_theorem_rule,
        }
    }
}
