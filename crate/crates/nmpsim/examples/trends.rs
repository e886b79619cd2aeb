use nmpsim::compiler::TopologyConfig;
use nmpsim::harness::{self, RunConfig, RunMode, WorkloadDecl};

fn main() {
    let dir = "crates/nmpsim/workloads";
    let mut cfg = RunConfig::default();
    cfg.mode = RunMode::Timing;

    // ablation ladder on bootstrap-desk
    let decl = WorkloadDecl::load(&format!("{dir}/bootstrap-desk.toml")).unwrap();
    let t0 = std::time::Instant::now();
    let rows = harness::run_ablation(&cfg, &decl).unwrap();
    for r in &rows {
        println!(
            "{:10} cycles={:9} norm={:.3} chipfrac={:.3} util={:.3} remap={:.4}",
            r.label, r.total_cycles, r.normalized_latency, r.chip_transfer_fraction, r.utilization, r.remap_fraction
        );
    }
    println!("ladder took {:?}", t0.elapsed());

    // remap on/off on full topology
    let built = harness::workload_build(&decl, cfg.resolve_geometry().unwrap(), cfg.pe, None).unwrap();
    let all_on = TopologyConfig::default();
    let remap_off = TopologyConfig { remap: false, ..all_on };
    for (label, topo) in [("remap_on", all_on), ("remap_off", remap_off)] {
        let (sched, _) = nmpsim::compiler::lower(&built.graph, built.map.clone(), topo).unwrap();
        let dram = nmpsim::dram::DramState::new(cfg.resolve_geometry().unwrap(), cfg.resolve_timing().unwrap());
        let ecfg = nmpsim::engine::EngineConfig::for_geometry(&cfg.resolve_geometry().unwrap(), cfg.pe);
        let (rep, _) = nmpsim::engine::run(&sched, &built.graph, &built.inputs, nmpsim::engine::Mode::TimingOnly, dram, &ecfg).unwrap();
        println!("{label}: cycles={} util={:.4} remapfrac={:.4}", rep.total_cycles, rep.utilization_whole_run, rep.remap_fraction);
    }

    // DSE trends
    let decl = WorkloadDecl::load(&format!("{dir}/ntt-sweep.toml")).unwrap();
    let t0 = std::time::Instant::now();
    let rows = harness::run_dse(&cfg, &decl).unwrap();
    println!("{}", harness::dse_csv(&rows));
    println!("dse took {:?}", t0.elapsed());
}
