use std::sync::Arc;

use pwcf::attacks::{
    attack_samples, lp_distance, pgd_baseline, AttackSpec, HarnessConfig, Metric, PgdConfig, PgdInner, SolverTag,
};
use pwcf::desk::{desk_solver_config, prepare, DeskConfig};
use pwcf::folding::{ClippedLoss, LossKind};
use pwcf::model::{
    adversarial_train, cross_entropy, margin_loss, Classifier, Dataset, DatasetConfig, IdentityInner, InnerMaximizer,
    Sample, TrainConfig,
};

fn pgd_robust_accuracy(model: &Classifier, samples: &[Sample], eps: f64) -> f64 {
    let spec = AttackSpec::max_loss(Metric::Linf, eps, ClippedLoss::unclipped(LossKind::Margin));
    let cfg = PgdConfig::default();
    let robust = samples
        .iter()
        .filter(|s| {
            model.predict(&s.x).unwrap() == s.y && {
                let run = pgd_baseline(model, &s.x, s.y, &spec, &cfg).unwrap();
                run.margins.iter().all(|m| *m <= 0.0)
            }
        })
        .count();
    robust as f64 / samples.len() as f64
}

#[test]
fn adversarial_training_improves_pgd_robust_accuracy() {
    let data = Dataset::generate(&DatasetConfig::default()).unwrap();
    let desk = DeskConfig::default();
    let eps = 0.2;
    let cfg = TrainConfig::default();

    let mut standard = Classifier::random(&desk.dims, desk.activation, desk.model_seed).unwrap();
    adversarial_train(&mut standard, &data, &IdentityInner, &cfg).unwrap();

    let inner_spec = AttackSpec::max_loss(Metric::Linf, eps, ClippedLoss::unclipped(LossKind::CrossEntropy));
    let mut robust = Classifier::random(&desk.dims, desk.activation, desk.model_seed).unwrap();
    adversarial_train(&mut robust, &data, &PgdInner::new(inner_spec), &cfg).unwrap();

    let before = pgd_robust_accuracy(&standard, &data.val, eps);
    let after = pgd_robust_accuracy(&robust, &data.val, eps);
    assert!(after >= before + 0.10, "standard {before}, adversarial {after}");
}

#[test]
fn pgd_inner_loss_is_monotone_in_steps() {
    let setup = prepare(&DeskConfig::default()).unwrap();
    let spec = AttackSpec::max_loss(Metric::Linf, 0.1, ClippedLoss::unclipped(LossKind::CrossEntropy));
    for (_, s) in setup.suite.iter().take(10) {
        let mut last = f64::NEG_INFINITY;
        for steps in 1..=20 {
            let xp = PgdInner::new(spec)
                .with_steps(steps)
                .maximize(&setup.model, &s.x, s.y, 0)
                .unwrap();
            let loss = cross_entropy(&setup.model.forward(&xp).unwrap(), s.y).unwrap().0;
            assert!(loss >= last - 1e-12, "steps {steps}: {loss} < {last}");
            last = loss;
        }
    }
}

#[test]
fn min_radius_solutions_sit_on_the_boundary_and_undercut_pgd() {
    let setup = prepare(&DeskConfig::default()).unwrap();
    let model: &Arc<Classifier> = &setup.model;
    let cfg = HarnessConfig {
        solver: desk_solver_config(),
        ..HarnessConfig::default()
    };
    let suite = &setup.suite[..20];
    let specs = [AttackSpec::min_radius(Metric::L2), AttackSpec::min_radius(Metric::Linf)];
    assert!(!specs[0].rescale && specs[1].rescale);
    let records = attack_samples(model, suite, &specs, &[SolverTag::Pwcf], &cfg).unwrap();
    let (l2, linf) = records.split_at(suite.len());
    for (i, (_, s)) in suite.iter().enumerate() {
        for (r, p) in [(&l2[i], 2.0), (&linf[i], f64::INFINITY)] {
            assert!(
                r.violation <= cfg.solver.tau_violation,
                "sample {}: violation {}",
                r.sample_id,
                r.violation
            );
            let (margin, _) = margin_loss(&model.forward(&r.x_prime).unwrap(), s.y).unwrap();
            assert!(
                margin >= -cfg.solver.tau_violation,
                "sample {}: margin {margin}",
                r.sample_id
            );
            assert!((r.objective_or_radius - lp_distance(&s.x, &r.x_prime, p).0).abs() <= 1e-12);
            assert!(r.x_prime.iter().all(|v| (-1e-8..=1.0 + 1e-8).contains(v)));
        }
        // only the ℓ2 solution is pinned to the boundary; an ℓ∞ minimizer can sit inside its box
        let (m2, _) = margin_loss(&model.forward(&l2[i].x_prime).unwrap(), s.y).unwrap();
        assert!(m2 <= 1e-4, "sample {}: ℓ2 boundary margin {m2}", l2[i].sample_id);
        // ‖δ‖∞ ≤ ‖δ‖₂ at the ℓ2 solution bounds the ℓ∞ radius
        assert!(
            linf[i].objective_or_radius <= l2[i].objective_or_radius + 1e-6,
            "sample {}",
            linf[i].sample_id
        );

        for (r, metric, p) in [(&l2[i], Metric::L2, 2.0), (&linf[i], Metric::Linf, f64::INFINITY)] {
            let pgd_spec = AttackSpec::max_loss(metric, 0.5, ClippedLoss::unclipped(LossKind::Margin));
            let run = pgd_baseline(model, &s.x, s.y, &pgd_spec, &PgdConfig::default()).unwrap();
            for (xp, m) in run.iterates.iter().zip(&run.margins) {
                if *m > 0.0 {
                    let d = lp_distance(&s.x, xp, p).0;
                    assert!(
                        r.objective_or_radius <= d + 1e-6,
                        "sample {}: radius {} > {d}",
                        r.sample_id,
                        r.objective_or_radius
                    );
                }
            }
        }
    }
}
