//! End-to-end drivers: single workload runs, the cumulative ablation
//! ladder, and the design-space sweep over PE count and poly_col.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::compiler::{lower, CommandSchedule, OperatorGraph, TopologyConfig};
use crate::dram::DramState;
use crate::engine::{self, EngineConfig, Mode, SimReport};
use crate::layout::LayoutError;

use super::workloads::{build, BuiltWorkload, WorkloadDecl, WorkloadKind};
use super::{special, HarnessError, RunConfig, RunMode};

/// Result of one end-to-end run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub workload: String,
    pub report: SimReport,
    pub commands: usize,
}

impl RunOutcome {
    pub fn to_text(&self) -> String {
        format!("workload = {:?}\n{}", self.workload, self.report.to_text())
    }
}

fn engine_config(config: &RunConfig) -> Result<EngineConfig, HarnessError> {
    let geometry = config.resolve_geometry()?;
    let mut cfg = EngineConfig::for_geometry(&geometry, config.pe);
    cfg.ext_bytes_per_cycle = config.ext_bytes_per_cycle;
    Ok(cfg)
}

fn run_built(
    built: &BuiltWorkload,
    config: &RunConfig,
    topo: TopologyConfig,
    mode: Mode,
) -> Result<(SimReport, CommandSchedule), HarnessError> {
    let (sched, _) = lower(&built.graph, built.map.clone(), topo)?;
    let dram = DramState::new(config.resolve_geometry()?, config.resolve_timing()?);
    let cfg = engine_config(config)?;
    let (report, _) = engine::run(&sched, &built.graph, &built.inputs, mode, dram, &cfg)?;
    Ok((report, sched))
}

fn run_constructed(
    decl: &WorkloadDecl,
    config: &RunConfig,
) -> Result<(SimReport, CommandSchedule), HarnessError> {
    let geometry = config.resolve_geometry()?;
    let sched = match decl.kind {
        WorkloadKind::Saturation => special::build_saturation(&geometry, 2 * decl.polys.max(32)),
        WorkloadKind::Stream => {
            special::build_stream(&geometry, decl.polys.max(64), special::StreamStyle::PingPong)
        }
        _ => unreachable!(),
    };
    let dram = DramState::new(geometry, config.resolve_timing()?);
    let cfg = engine_config(config)?;
    let graph = OperatorGraph::new(decl.degree);
    let (report, _) =
        engine::run(&sched, &graph, &BTreeMap::new(), Mode::TimingOnly, dram, &cfg)?;
    Ok((report, sched))
}

/// End-to-end: build layout, lower, validate, run, report.
pub fn run_workload(config: &RunConfig, decl: &WorkloadDecl) -> Result<RunOutcome, HarnessError> {
    let (report, sched) = match decl.kind {
        WorkloadKind::Saturation | WorkloadKind::Stream => run_constructed(decl, config)?,
        _ => {
            let built = build(decl, config.resolve_geometry()?, config.pe, config.poly_col)?;
            let mode = match config.mode {
                RunMode::Cosim => Mode::CoSim,
                RunMode::Timing => Mode::TimingOnly,
            };
            run_built(&built, config, config.topology, mode)?
        }
    };
    Ok(RunOutcome { workload: decl.name.clone(), report, commands: sched.len() })
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: &'static str,
    pub total_cycles: u64,
    pub normalized_latency: f64,
    pub chip_transfer_fraction: f64,
    pub utilization: f64,
    pub remap_fraction: f64,
}

/// The cumulative-enable ladder: each rung keeps the previous rung's
/// hardware and adds one mechanism.
pub fn ablation_ladder() -> [(&'static str, TopologyConfig); 5] {
    let base = TopologyConfig::baseline();
    let bank = TopologyConfig { bank_net: true, ..base };
    let chip = TopologyConfig { chip_net: true, dimm_link: true, ..bank };
    let chain = TopologyConfig { pe_chain: true, ..chip };
    let all = TopologyConfig { remap: true, ..chain };
    [
        ("baseline", base),
        ("+bank_net", bank),
        ("+chip_net", chip),
        ("+pe_chain", chain),
        ("+remap", all),
    ]
}

/// Runs the ladder on one workload (timing-only) and emits normalized rows.
pub fn run_ablation(config: &RunConfig, decl: &WorkloadDecl) -> Result<Vec<AblationRow>, HarnessError> {
    let built = build(decl, config.resolve_geometry()?, config.pe, config.poly_col)?;
    let mut rows = Vec::new();
    let mut baseline = 0u64;
    for (label, topo) in ablation_ladder() {
        let (report, _) = run_built(&built, config, topo, Mode::TimingOnly)?;
        if baseline == 0 {
            baseline = report.total_cycles.max(1);
        }
        rows.push(AblationRow {
            label,
            total_cycles: report.total_cycles,
            normalized_latency: report.total_cycles as f64 / baseline as f64,
            chip_transfer_fraction: report.chip_transfer_fraction(),
            utilization: report.utilization_whole_run,
            remap_fraction: report.remap_fraction,
        });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "config,total_cycles,normalized_latency,chip_transfer_fraction,utilization,remap_fraction\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            r.label,
            r.total_cycles,
            r.normalized_latency,
            r.chip_transfer_fraction,
            r.utilization,
            r.remap_fraction
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct DseRow {
    pub pe_num: u32,
    pub poly_col: u32,
    pub total_cycles: u64,
    /// PE-cycle occupancy over the configured PEs of the engaged pairs.
    pub pe_utilization: f64,
    pub bw_utilization: f64,
    /// Set when the point does not fit; such rows are reported, not fatal.
    pub error: Option<String>,
}

/// Grid sweep: poly_col at the fixed PE count, then PE count at the fixed
/// poly_col, on the declared workload.
pub fn run_dse(config: &RunConfig, decl: &WorkloadDecl) -> Result<Vec<DseRow>, HarnessError> {
    let mut rows = Vec::new();
    let geometry = config.resolve_geometry()?;
    let mut grid: Vec<(u32, u32)> = Vec::new();
    for &pc in &config.sweep.poly_col {
        grid.push((config.sweep.fixed_pe_num, pc));
    }
    for &pe in &config.sweep.pe_num {
        grid.push((pe, config.sweep.fixed_poly_col));
    }
    for (pe_num, poly_col) in grid {
        let mut cfg = config.clone();
        cfg.pe.pe_num_per_pair = pe_num;
        cfg.poly_col = Some(poly_col);
        let row = match build(decl, geometry, cfg.pe, cfg.poly_col) {
            Ok(built) => match run_built(&built, &cfg, cfg.topology, Mode::TimingOnly) {
                Ok((report, _)) => DseRow {
                    pe_num,
                    poly_col,
                    total_cycles: report.total_cycles,
                    pe_utilization: pe_utilization(&report, pe_num),
                    bw_utilization: report.utilization_whole_run,
                    error: None,
                },
                Err(e) => error_row(pe_num, poly_col, e.to_string()),
            },
            Err(HarnessError::Layout(e @ LayoutError::CapacityExceeded(_)))
            | Err(HarnessError::Layout(e @ LayoutError::OutOfRange(..))) => {
                error_row(pe_num, poly_col, e.to_string())
            }
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    Ok(rows)
}

fn pe_utilization(report: &SimReport, pe_num: u32) -> f64 {
    let capacity = report.total_cycles * report.engaged_pairs * pe_num as u64;
    if capacity == 0 {
        0.0
    } else {
        report.pe_busy_pe_cycles as f64 / capacity as f64
    }
}

fn error_row(pe_num: u32, poly_col: u32, err: String) -> DseRow {
    DseRow { pe_num, poly_col, total_cycles: 0, pe_utilization: 0.0, bw_utilization: 0.0, error: Some(err) }
}

pub fn dse_csv(rows: &[DseRow]) -> String {
    let mut s =
        String::from("pe_num,poly_col,total_cycles,pe_utilization,bw_utilization,status\n");
    for r in rows {
        let status = r.error.as_deref().unwrap_or("ok");
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{}",
            r.pe_num,
            r.poly_col,
            r.total_cycles,
            r.pe_utilization,
            r.bw_utilization,
            status.replace(',', ";")
        );
    }
    s
}
