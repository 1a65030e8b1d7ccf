//! Ignored diagnostics: print executed episodes from a trained run so a
//! human can see *how* the planner behaves, not just its mean return.
//!
//! Usage:
//! ```text
//! MDIFF_DIAG_DIR=/path/to/run cargo test -p mdiff-cli --test diag_trace -- \
//!     --ignored --nocapture
//! ```
//! where the directory holds `dataset/` and `train/` from the CLI.

use mdiff_cli::commands::train::load_bundle;
use mdiff_core::datastore::{load_dataset, rollout};
use mdiff_core::diffusion::GuideConfig;
use mdiff_core::planner::plan_episode;
use mdiff_core::rng;
use mdiff_core::taskcontext::infer_context;

#[test]
#[ignore = "manual diagnostic; needs MDIFF_DIAG_DIR"]
fn print_executed_episodes() {
    let dir = std::path::PathBuf::from(
        std::env::var("MDIFF_DIAG_DIR").expect("set MDIFF_DIAG_DIR to a trained run directory"),
    );
    let ds = load_dataset(&dir.join("dataset")).unwrap();
    let b = load_bundle(&dir).unwrap();

    let variants: Vec<(&str, GuideConfig)> = vec![
        ("default", GuideConfig::default()),
        (
            "no guide (s=0, w=1)",
            GuideConfig {
                omega: 1.0,
                guide_step: 0.0,
                ..GuideConfig::default()
            },
        ),
        (
            "reward only (l=0)",
            GuideConfig {
                lambda: 0.0,
                ..GuideConfig::default()
            },
        ),
    ];

    for entry in ds.tasks.iter().filter(|t| t.split == mdiff_core::datastore::Split::Test).take(3) {
        let spec = &entry.spec;
        println!("\n=== task {} params {:?} ===", spec.task_id, spec.params);
        // Expert warm-start, mirroring the evaluation protocol.
        let warm: Vec<_> = (0..5u64)
            .map(|i| rollout(spec, "expert", rng::derive2(4242, spec.task_id as u64, i)).unwrap())
            .collect();
        let z = infer_context(&b.ctx, &ds.norm, &warm, 16, rng::derive(4243, spec.task_id as u64))
            .unwrap();

        for (name, cfg) in &variants {
            let tr = plan_episode(spec, &b.model, &b.sched, &b.ctx, &ds.norm, &z, cfg, 77).unwrap();
            println!("--- {name}: return {:.3}", tr.ret);
            for (t, s) in tr.states.iter().enumerate() {
                let a = tr.actions.get(t).map(|a| format!("{:+.3} {:+.3}", a[0], a[1]));
                println!(
                    "  t={t:02} s=({:+.3} {:+.3}) a=[{}]",
                    s[0],
                    s[1],
                    a.unwrap_or_default()
                );
            }
        }
    }
}
