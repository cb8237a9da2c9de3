#![allow(dead_code)]

pub mod oracles;

/// `Ok(detail)` on success, `Err(reason)` on failure.
pub type CheckResult = Result<String, String>;

pub struct Check {
    pub name: &'static str,
    pub run: fn() -> CheckResult,
}

pub const ORACLE_CHECKS: &[Check] = &[
    Check { name: "mlp forward vs naive loops", run: oracles::naive_forward },
    Check { name: "backprop vs central differences", run: oracles::finite_difference_gradients },
    Check { name: "adam vs scalar reference", run: oracles::adam_scalar_reference },
    Check { name: "key-door start cells uniform", run: oracles::keydoor_start_uniform },
    Check { name: "bandit arm means", run: oracles::bandit_arm_means },
    Check { name: "gae vs direct summation", run: oracles::gae_direct_sum },
    Check { name: "ppo 2x2 hand adam step", run: oracles::ppo_hand_adam_step },
    Check { name: "epsilon = 1 uniform", run: oracles::epsilon_one_is_uniform },
    Check { name: "pqn target vs loop", run: oracles::pqn_target_loop },
    Check { name: "pqn terminal gradient", run: oracles::pqn_terminal_gradient },
    Check { name: "pqn two-state fixed point", run: oracles::pqn_two_state_fixed_point },
    Check { name: "feature rank vs svd", run: oracles::feature_rank_svd },
    Check { name: "dormant vs loop", run: oracles::dormant_loop },
    Check { name: "weight norm vs compensated sum", run: oracles::weight_norm_compensated },
    Check { name: "gaussian log-gradient kurtosis", run: oracles::kurtosis_gaussian },
    Check { name: "ess hand evaluation", run: oracles::ess_hand },
    Check { name: "policy variance oracles", run: oracles::policy_variance_oracles },
    Check { name: "projection vs dense eigen", run: oracles::projection_eigen },
    Check { name: "iqm vs replicate-and-trim", run: oracles::iqm_trim_oracle },
    Check { name: "bootstrap coverage", run: oracles::bootstrap_coverage },
];

pub const EXACT_CHECKS: &[Check] = &[
    Check { name: "mlp cases", run: trivial::mlp_cases },
    Check { name: "adam cases", run: trivial::adam_cases },
    Check { name: "env cases", run: trivial::env_cases },
    Check { name: "rollout cases", run: trivial::rollout_cases },
    Check { name: "ppo cases", run: trivial::ppo_cases },
    Check { name: "pqn cases", run: trivial::pqn_cases },
    Check { name: "diagnostic cases", run: trivial::diagnostic_cases },
    Check { name: "stats cases", run: trivial::stats_cases },
    Check { name: "harness cases", run: trivial::harness_cases },
];
