use nmpsim::harness::{self, RunConfig, WorkloadDecl};

fn main() {
    let dir = "crates/nmpsim/workloads";
    for wl in ["ntt-2p12", "bconv-l3k2", "keyswitch-desk", "pbs-desk", "lola-like", "saturation", "stream-pingpong", "bootstrap-desk"] {
        let t0 = std::time::Instant::now();
        let decl = WorkloadDecl::load(&format!("{dir}/{wl}.toml")).unwrap();
        let cfg = RunConfig::default();
        match harness::run_workload(&cfg, &decl) {
            Ok(out) => println!(
                "{wl}: cycles={} cmds={} util={:.3}/{:.3} rw={:.3} mv={:.3} remap={:.4} ext={:.3} chipfrac={:.3} [{:?}]",
                out.report.total_cycles, out.commands,
                out.report.utilization_whole_run, out.report.utilization_active_window,
                out.report.read_write_fraction, out.report.movement_fraction,
                out.report.remap_fraction, out.report.external_fraction(),
                out.report.chip_transfer_fraction(), t0.elapsed()
            ),
            Err(e) => println!("{wl}: ERROR {e}"),
        }
    }
}
