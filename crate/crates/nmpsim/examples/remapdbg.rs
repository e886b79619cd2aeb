use nmpsim::compiler::{lower, CmdKind, TopologyConfig};
use nmpsim::harness::{self, RunConfig, WorkloadDecl};

fn main() {
    let decl = WorkloadDecl::load("crates/nmpsim/workloads/bootstrap-desk.toml").unwrap();
    let cfg = RunConfig::default();
    let built = nmpsim::harness::workload_build(
        &decl,
        cfg.resolve_geometry().unwrap(),
        cfg.pe,
        cfg.poly_col,
    )
    .unwrap();
    let (sched, _) = lower(&built.graph, built.map.clone(), TopologyConfig::default()).unwrap();
    let remap_cmds: Vec<_> = sched.commands.iter().filter(|c| c.remap).collect();
    println!("total cmds {}, remap cmds {}", sched.len(), remap_cmds.len());
    let mut kinds = std::collections::BTreeMap::new();
    for c in &remap_cmds {
        let k = match &c.kind {
            CmdKind::Mem(m) => format!("mem {:?}", std::mem::discriminant(&m.kind)),
            CmdKind::Pe { .. } => "pe".into(),
            CmdKind::Chain { .. } => "chain".into(),
            CmdKind::Barrier => "barrier".into(),
            _ => "other".into(),
        };
        *kinds.entry(k).or_insert(0) += 1;
    }
    println!("{kinds:?}");
}
