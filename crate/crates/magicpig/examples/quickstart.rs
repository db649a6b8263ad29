use magicpig::{
    full_attention, gen_workload, magicpig_run, relative_error, LshConfig, StaticCachePolicy,
    WorkloadKind, WorkloadSpec,
};

fn main() -> Result<(), magicpig::Error> {
    let workload = gen_workload(&WorkloadSpec {
        kind: WorkloadKind::Cone {
            angle: 2.0,
            sink_flip: true,
        },
        n: 4096,
        d: 64,
        temperature: 0.1,
        seed: 7,
    })?;
    let exact = full_attention(&workload);
    let lsh = LshConfig::new(10, 150, 42)?; // K bits per table, L tables
    let report = magicpig_run(&workload, &lsh, &StaticCachePolicy::default())?;
    let err = relative_error(&report.estimate.output, &exact.output)?;
    println!(
        "relative error {err:.4} touching {} of {} tokens",
        report.sampled_count + report.static_count,
        workload.n()
    );
    Ok(())
}
