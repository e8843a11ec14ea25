//! End-to-end gradient of the training loss against finite differences.

use loga_core::gradcheck::{gradcheck, GradCheckOptions};
use loga_core::objectives::Mining;
use loga_tensor::FaultSite;

#[test]
fn every_parameter_group_matches_finite_differences() {
    for (seed, mining) in [(0, Mining::Random), (1, Mining::BatchHard)] {
        let report = gradcheck(&GradCheckOptions { seed, mining, ..Default::default() }).unwrap();
        assert_eq!(report.groups.len(), 22);
        for g in &report.groups {
            assert!(g.max_relative_error < 1e-6, "{}: {:e}", g.name, g.max_relative_error);
        }
    }
}

#[test]
fn every_strategy_is_differentiable() {
    for strategy in ["mean_pool", "laq_only", "gcq_only", "dual_branch", "direct_connect"] {
        let report = gradcheck(&GradCheckOptions { strategy: strategy.into(), ..Default::default() }).unwrap();
        assert!(report.max_relative_error() < 1e-6, "{strategy}");
    }
}

#[test]
fn corrupted_backward_rules_are_caught() {
    let cases = [
        (FaultSite::Conv1dKernel, "laq.kernel"),
        (FaultSite::Conv2dKernel, "encoder.conv1.weight"),
        (FaultSite::BatchNormShift, "gcq.value.bn.shift"),
        (FaultSite::MatMulRhs, "laq.mlp.weight"),
    ];
    for (site, group) in cases {
        let report = gradcheck(&GradCheckOptions { fault: Some(site), ..Default::default() }).unwrap();
        let failed: Vec<&str> = report.failures().iter().map(|g| g.name.as_str()).collect();
        assert!(failed.contains(&group), "{site:?} flagged {failed:?}");
    }
}
