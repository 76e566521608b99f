use epl_core::field::{AcConfig, Conversion, FieldDims, SplitterKind};
use epl_core::gradcheck::{check_network_gradient, run_gradcheck, run_gradcheck_with, GradcheckOptions};
use epl_core::{LossConfig, LossKind, Norm, Reduction};

const DIMS: FieldDims = FieldDims {
    classes: 3,
    height: 8,
    width: 8,
};

fn assert_all_pass(kind: LossKind) {
    for seed in 0..3 {
        let rep = run_gradcheck(kind, DIMS, 40, seed).unwrap();
        assert_eq!(rep.fraction_passing, 1.0, "{rep:?}");
    }
}

#[test]
fn point_l2_matches_finite_differences() {
    assert_all_pass(LossKind::Point(Norm::L2));
}

#[test]
fn point_l1_matches_away_from_kink() {
    assert_all_pass(LossKind::Point(Norm::L1));
}

#[test]
fn line_matches_finite_differences() {
    for mu in [2, 4, 10] {
        assert_all_pass(LossKind::Line { mu });
    }
}

#[test]
fn cross_entropy_and_dice_match() {
    assert_all_pass(LossKind::CrossEntropy);
    assert_all_pass(LossKind::Dice);
}

#[test]
fn composite_through_adjoint_matches() {
    assert_all_pass(LossKind::composite_default());
    assert_all_pass(LossKind::Composite(LossConfig::default()));
}

#[test]
fn every_splitter_and_sum_reduction() {
    for splitter in SplitterKind::ALL {
        let opts = GradcheckOptions {
            splitter,
            reduction: Reduction::Sum,
            ..GradcheckOptions::default()
        };
        for kind in [LossKind::Point(Norm::L2), LossKind::Line { mu: 2 }] {
            let rep = run_gradcheck_with(kind, &opts, 30, 7).unwrap();
            assert_eq!(rep.fraction_passing, 1.0, "{splitter:?} {rep:?}");
        }
    }
}

#[test]
fn report_is_deterministic() {
    let a = run_gradcheck(LossKind::Line { mu: 4 }, DIMS, 10, 5).unwrap();
    let b = run_gradcheck(LossKind::Line { mu: 4 }, DIMS, 10, 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn network_parameters_match() {
    let conv = Conversion::Anisotropic(AcConfig::new(5, SplitterKind::A).unwrap());
    let cfg = LossConfig {
        lambda1: 1.0,
        lambda2: 1.0,
        mu_exp: 2,
        ..LossConfig::default()
    };
    let dims = FieldDims {
        classes: 3,
        height: 6,
        width: 6,
    };
    let rep = check_network_gradient(&conv, &cfg, dims, 20, 3, 1e-3).unwrap();
    assert_eq!(rep.fraction_passing, 1.0, "{rep:?}");
    let sc = Conversion::standard(5).unwrap();
    let rep = check_network_gradient(&sc, &cfg, dims, 20, 4, 1e-3).unwrap();
    assert_eq!(rep.fraction_passing, 1.0, "{rep:?}");
}
