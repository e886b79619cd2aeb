//! User entry point: run configuration, workload declarations, end-to-end
//! drivers for single runs, the ablation ladder and design-space sweeps.
//!
//! Config and workload files are TOML with unknown keys rejected, so a
//! typo'd experiment fails to parse instead of silently running the wrong
//! thing. Reports are written as stable text: identical configurations
//! produce byte-identical files.

mod drivers;
mod special;
mod workloads;

pub use drivers::{ablation_csv, ablation_ladder, dse_csv, run_ablation, run_dse, run_workload, AblationRow, DseRow, RunOutcome};
pub use special::{build_saturation, build_stream, StreamStyle};
pub use workloads::{build as workload_build, BuiltWorkload, WorkloadDecl, WorkloadKind};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::{composite::KeySwitchParams, composite::PbsParams, CompileError, TopologyConfig};
use crate::dram::{DramError, DramGeometry, TimingParams};
use crate::engine::EngineError;
use crate::fabric::{FabricError, PeConfig};
use crate::layout::LayoutError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("workload parse error: {0}")]
    WorkloadParse(String),
    #[error(transparent)]
    Dram(#[from] DramError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("io error on {path}: {err}")]
    Io { path: String, err: String },
}

impl HarnessError {
    /// Process exit code: 1 config, 2 compile/validate, 3 co-sim mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::WorkloadParse(_) | HarnessError::Io { .. } => 1,
            HarnessError::Engine(EngineError::ValueMismatch { .. }) => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Cosim,
    Timing,
}

/// The complete description of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Geometry preset name ("table1") when `geometry` is not inlined.
    pub geometry_preset: String,
    /// Timing preset name ("table1" or "fig1-ns").
    pub timing_preset: String,
    pub geometry: Option<DramGeometry>,
    pub timing: Option<TimingParams>,
    pub pe: PeConfig,
    pub topology: TopologyConfig,
    pub mode: RunMode,
    /// Path of the workload declaration file.
    pub workload: String,
    /// Force a poly_col instead of the layout's maximum (sweeps).
    pub poly_col: Option<u32>,
    /// Host-link bandwidth for topology fallbacks, bytes per cycle.
    pub ext_bytes_per_cycle: u64,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            geometry_preset: "table1".into(),
            timing_preset: "table1".into(),
            geometry: None,
            timing: None,
            pe: PeConfig::default(),
            topology: TopologyConfig::default(),
            mode: RunMode::Cosim,
            workload: String::new(),
            poly_col: None,
            ext_bytes_per_cycle: 32,
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub pe_num: Vec<u32>,
    pub poly_col: Vec<u32>,
    /// poly_col held fixed while sweeping pe_num.
    pub fixed_poly_col: u32,
    /// pe_num held fixed while sweeping poly_col.
    pub fixed_pe_num: u32,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            pe_num: vec![1, 2, 4, 8, 16, 32, 64],
            poly_col: vec![16, 32, 64, 128, 256],
            fixed_poly_col: 16,
            fixed_pe_num: 8,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &str) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io { path: path.into(), err: e.to_string() })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let geometry = self.resolve_geometry()?;
        geometry.validate()?;
        self.resolve_timing()?.validate()?;
        self.pe.validate()?;
        if self.topology.dimm_link && geometry.dimms_per_channel * geometry.channels < 2 {
            return Err(HarnessError::Config(
                "dimm_link requires at least 2 DIMMs".into(),
            ));
        }
        for v in self.sweep.pe_num.iter().chain(&self.sweep.poly_col) {
            if !v.is_power_of_two() {
                return Err(HarnessError::Config(format!(
                    "sweep values must be powers of two, got {v}"
                )));
            }
        }
        if let Some(pc) = self.poly_col {
            if !pc.is_power_of_two() || pc > geometry.row_cols() {
                return Err(HarnessError::Config(format!("bad poly_col {pc}")));
            }
        }
        Ok(())
    }

    pub fn resolve_geometry(&self) -> Result<DramGeometry, HarnessError> {
        if let Some(g) = self.geometry {
            return Ok(g);
        }
        DramGeometry::preset(&self.geometry_preset).ok_or_else(|| {
            HarnessError::Config(format!("unknown geometry preset {:?}", self.geometry_preset))
        })
    }

    pub fn resolve_timing(&self) -> Result<TimingParams, HarnessError> {
        if let Some(t) = self.timing {
            return Ok(t);
        }
        TimingParams::preset(&self.timing_preset).ok_or_else(|| {
            HarnessError::Config(format!("unknown timing preset {:?}", self.timing_preset))
        })
    }
}

/// Per-kind extra parameters referenced from workload declarations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadParams {
    pub keyswitch: KeySwitchParams,
    pub pbs: PbsParams,
    pub bootstrap: BootstrapParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapParams {
    /// Parallel ciphertext rotations per baby step.
    pub rotations: u32,
    /// Chip pairs executing the stage.
    pub chip_pairs: u32,
    /// Elementwise passes in the final (post-shrink) phase.
    pub tail_passes: u32,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        Self { rotations: 8, chip_pairs: 4, tail_passes: 4 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_is_identity() {
        let mut cfg = RunConfig::default();
        cfg.workload = "workloads/ntt-2p12.toml".into();
        cfg.poly_col = Some(64);
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "workload = \"x.toml\"\nspeling_mistake = 3\n";
        assert!(matches!(RunConfig::from_toml(text), Err(HarnessError::Config(_))));
        let nested = "workload = \"x.toml\"\n[pe]\npe_num_per_pair = 8\nbogus = 1\n";
        assert!(RunConfig::from_toml(nested).is_err());
    }

    #[test]
    fn config_validation_catches_inconsistencies() {
        let mut cfg = RunConfig::default();
        cfg.sweep.pe_num = vec![3];
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        let mut g = DramGeometry::table1();
        g.dimms_per_channel = 1;
        cfg.geometry = Some(g);
        assert!(cfg.validate().is_err(), "dimm_link needs two DIMMs");
        cfg.topology.dimm_link = false;
        assert!(cfg.validate().is_ok());
    }
}
