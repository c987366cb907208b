//! Cross-module behavior: standard-error coverage, disparity recovery,
//! confounding adjustment, simulation closure, QMC fitting and held-out
//! validation.

mod common;

use common::*;
use nalgebra::DMatrix;
use quirt::data::{simulate_cohort, GroupSpec, SimulationSpec};
use quirt::diagnostics::validate_heldout;
use quirt::estimation::{
    default_normal_init, em_fit_latent_class, em_fit_normal, standard_errors, FitOptions,
    LcStructural, ParamLayout,
};
use quirt::math::sigmoid;
use quirt::model::{ItemParams, ItemSpec, LatentSpec, ModelSpec, ResponseMatrix};
use quirt::quadrature::gauss_hermite_rule;
use quirt::rng::derive_rng;
use quirt::scoring::common_regression;
use quirt::structural::{
    disparity_from_class_model, disparity_from_latent_regression, StructuralModel,
};
use rand::Rng;

#[test]
fn wald_intervals_cover_truth() {
    let mut rng = derive_rng(1101, "wald");
    let mut covered = 0usize;
    let mut total = 0usize;
    for _rep in 0..50 {
        let slopes: Vec<f64> = (0..5).map(|_| rng.random_range(0.8..2.0)).collect();
        let inters: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let data = simulate_2pl(800, &slopes, &inters, &mut rng);
        let init = default_normal_init(&data, 1).unwrap();
        let fit = em_fit_normal(&data, &init, None, &FitOptions::default()).unwrap();
        let (ses, _) = standard_errors(&fit, &data, None).unwrap();
        let layout = ParamLayout::for_model(&fit.model);
        let est = layout.extract(&fit.model);
        let names = layout.names(&fit.model);
        for (k, name) in names.iter().enumerate() {
            // name is "item{i}.a1" or "item{i}.d1".
            let item: usize = name[4..5].parse().unwrap();
            let truth = if name.contains(".a") { slopes[item] } else { inters[item] };
            if ses[k].is_finite() {
                total += 1;
                if (est[k] - truth).abs() <= 1.96 * ses[k] {
                    covered += 1;
                }
            }
        }
    }
    let coverage = covered as f64 / total as f64;
    assert!(coverage >= 0.90, "Wald coverage {coverage:.3} over {total} intervals");
}

fn simulate_latent_regression_cohort(
    n: usize,
    effect: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> (ResponseMatrix, DMatrix<f64>) {
    let slopes = [1.4, 1.0, 1.8, 0.9, 1.2, 1.5];
    let inters = [0.0, 0.4, -0.4, 0.8, -0.8, 0.2];
    let items: Vec<ItemSpec> =
        (0..6).map(|i| ItemSpec::binary(&format!("i{i}"), "")).collect();
    let mut rows = Vec::with_capacity(n);
    let mut design = DMatrix::zeros(n, 1);
    for j in 0..n {
        let black = j % 2 == 0;
        design[(j, 0)] = f64::from(black);
        let theta = if black { effect } else { 0.0 } + standard_normal(rng);
        rows.push(
            slopes
                .iter()
                .zip(&inters)
                .map(|(a, d)| i16::from(rng.random::<f64>() < sigmoid(a * theta + d)))
                .collect(),
        );
    }
    let ids = (0..n).map(|j| format!("p{j}")).collect();
    (ResponseMatrix::from_rows(items, ids, rows).unwrap(), design)
}

#[test]
fn latent_regression_disparity_recovered_with_sign() {
    let mut rng = derive_rng(1201, "latreg-disp");
    let fit_effect = |effect: f64, rng: &mut rand_chacha::ChaCha8Rng| -> (f64, Option<f64>) {
        let (data, design) = simulate_latent_regression_cohort(5000, effect, rng);
        let mut init = default_normal_init(&data, 1).unwrap();
        init.structural = Some(
            StructuralModel::latent_regression(vec![vec![0.0]], vec!["black".into()]).unwrap(),
        );
        let fit = em_fit_normal(&data, &init, Some(&design), &FitOptions::default()).unwrap();
        let (ses, _) = standard_errors(&fit, &data, Some(&design)).unwrap();
        let mut fit = fit;
        fit.std_errors = Some(ses);
        let rows = disparity_from_latent_regression(&fit).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].group, "black");
        (rows[0].estimate, rows[0].se)
    };
    let (gamma, se) = fit_effect(-0.3, &mut rng);
    assert!((gamma + 0.3).abs() < 0.1, "estimate {gamma}");
    assert!(se.unwrap() > 0.0);
    // Sign convention: lowering the group's true mean lowers the estimate.
    let (gamma_deeper, _) = fit_effect(-0.6, &mut rng);
    assert!(gamma_deeper < gamma, "{gamma_deeper} vs {gamma}");
    // Null effect reports approximately zero.
    let (gamma_null, se_null) = fit_effect(0.0, &mut rng);
    assert!(gamma_null.abs() < 2.5 * se_null.unwrap(), "null estimate {gamma_null}");
}

#[test]
fn class_model_disparity_log_odds() {
    // Two groups; the second has a -0.8 logit shift away from class 2.
    let mut rng = derive_rng(1301, "class-disp");
    let n = 4000;
    let disc = [1.0, 1.6, 1.2, 1.8, 0.9, 1.4];
    let ease = [0.0, 0.3, -0.3, 0.5, 0.0, -0.2];
    let support = [vec![-1.5], vec![1.5]];
    let items: Vec<ItemSpec> =
        (0..6).map(|i| ItemSpec::binary(&format!("i{i}"), "")).collect();
    let mut rows = Vec::with_capacity(n);
    let mut design = DMatrix::zeros(n, 2);
    let names = vec!["white".to_string(), "black".to_string()];
    for j in 0..n {
        let black = j % 2 == 0;
        design[(j, 0)] = 1.0;
        design[(j, 1)] = f64::from(black);
        let base_logit = 0.4 + if black { -0.8 } else { 0.0 };
        let class = usize::from(rng.random::<f64>() < sigmoid(base_logit));
        rows.push(
            disc.iter()
                .zip(&ease)
                .map(|(a, d)| {
                    i16::from(rng.random::<f64>() < sigmoid(a * support[class][0] + d))
                })
                .collect(),
        );
    }
    let ids = (0..n).map(|j| format!("p{j}")).collect();
    let data = ResponseMatrix::from_rows(items, ids, rows).unwrap();
    let fit = em_fit_latent_class(
        &data,
        2,
        &[0; 6],
        LcStructural::Multinomial { design: &design, covariate_names: names.clone() },
        &FitOptions { n_random_starts: 3, seed: 3, ..FitOptions::default() },
    )
    .unwrap();
    let (ses, _) = standard_errors(&fit, &data, Some(&design)).unwrap();
    let mut fit = fit;
    fit.std_errors = Some(ses);
    // Classes may come out label-switched; orient by the support point.
    let LatentSpec::Discrete { support: est_support, .. } = &fit.model.latent else {
        unreachable!()
    };
    let class2_is_high = est_support[1][0] > est_support[0][0];
    let rows = disparity_from_class_model(&fit).unwrap();
    assert_eq!(rows.len(), 2);
    // Reference row is the intercept; group row is the injected effect.
    let intercept = rows.iter().find(|r| r.group == "white").unwrap();
    let black = rows.iter().find(|r| r.group == "black").unwrap();
    let (expect_int, expect_eff) =
        if class2_is_high { (0.4, -0.8) } else { (-0.4, 0.8) };
    assert!(
        (intercept.estimate - expect_int).abs() < 0.15,
        "intercept {}",
        intercept.estimate
    );
    assert!((black.estimate - expect_eff).abs() < 0.2, "effect {}", black.estimate);
    assert!(black.se.unwrap() > 0.0);
    // The odds-ratio reading: exp(estimate) close to exp(truth).
    let or = black.estimate.exp();
    assert!((or - expect_eff.exp()).abs() < 0.2 * expect_eff.exp().max(1.0), "OR {or}");
}

#[test]
fn zero_coefficient_class_model_reports_unit_odds() {
    let model = ModelSpec {
        items: vec![
            ItemParams::latent_class(1.0, 0.0, 0),
            ItemParams::latent_class(1.0, 0.2, 0),
        ],
        latent: LatentSpec::discrete(vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5]).unwrap(),
        structural: Some(
            StructuralModel::multinomial_logit(
                vec![vec![0.0, 0.0]],
                vec!["white".into(), "black".into()],
            )
            .unwrap(),
        ),
        identification: quirt::model::IdentificationScheme::AnchoredItems,
        slope_constraint: Default::default(),
        fixed_items: vec![],
    };
    let fit = quirt::estimation::FitResult {
        model,
        loglik: 0.0,
        n_params: 0,
        trace: vec![],
        std_errors: None,
        converged: true,
        n_used: 10,
        warnings: vec![],
        options: FitOptions::default(),
    };
    let rows = disparity_from_class_model(&fit).unwrap();
    for row in rows {
        assert_eq!(row.estimate.exp(), 1.0);
    }
}

#[test]
fn adding_health_design_moves_estimate_toward_truth() {
    // Confounded data: v raises Z and is more common in the minority group,
    // masking the true null disparity... and with a real disparity the
    // unadjusted estimate is biased.
    let mut rng = derive_rng(1401, "confound");
    let n = 4000;
    let truth = -0.25;
    let mut z = Vec::with_capacity(n);
    let mut w = DMatrix::zeros(n, 1);
    let mut v = DMatrix::zeros(n, 1);
    for j in 0..n {
        let minority = j % 2 == 0;
        let sick = rng.random::<f64>() < if minority { 0.7 } else { 0.3 };
        w[(j, 0)] = f64::from(minority);
        v[(j, 0)] = f64::from(sick);
        z.push(
            truth * f64::from(minority) - 0.8 * f64::from(sick)
                + 0.5 * standard_normal(&mut rng),
        );
    }
    let wnames = vec!["minority".to_string()];
    let vnames = vec!["sick".to_string()];
    let unadjusted = common_regression(&z, (&w, &wnames), None).unwrap();
    let adjusted = common_regression(&z, (&w, &wnames), Some((&v, &vnames))).unwrap();
    let err_un = (unadjusted[1].estimate - truth).abs();
    let err_adj = (adjusted[1].estimate - truth).abs();
    assert!(err_adj < err_un, "adjusted {err_adj} vs unadjusted {err_un}");
    assert!(err_adj < 0.05);
}

#[test]
fn simulation_fit_simulation_closure() {
    // simulate -> fit -> simulate-from-fit reproduces first- and
    // second-order margins within sampling error at N = 10000.
    let n = 10_000;
    let items: Vec<ItemSpec> =
        (0..6).map(|i| ItemSpec::binary(&format!("i{i}"), "")).collect();
    let params: Vec<ItemParams> = [1.4, 0.9, 1.8, 1.2, 0.7, 1.5]
        .iter()
        .zip(&[0.3, -0.5, 0.8, 0.0, -0.9, 0.4])
        .map(|(a, d)| ItemParams::latent_class(*a, *d, 0))
        .collect();
    let latent = LatentSpec::discrete(vec![vec![-1.4], vec![1.4]], vec![0.45, 0.55]).unwrap();
    let spec = SimulationSpec {
        model: ModelSpec::new(params, latent),
        items: items.clone(),
        n,
        groups: vec![GroupSpec { label: "all".into(), weight: 1.0, effect: vec![] }],
        covariates: vec![],
        na_probs: vec![],
        seed: 42,
    };
    let (data, _, _) = simulate_cohort(&spec).unwrap();
    let fit = em_fit_latent_class(
        &data,
        2,
        &[0; 6],
        LcStructural::None,
        &FitOptions { n_random_starts: 3, seed: 5, ..FitOptions::default() },
    )
    .unwrap();
    let respec = SimulationSpec { model: fit.model.clone(), seed: 4242, ..spec };
    let (data2, _, _) = simulate_cohort(&respec).unwrap();
    let margin1 = |data: &ResponseMatrix, i: usize| -> f64 {
        (0..data.n()).map(|j| f64::from(data.code(j, i) as i32)).sum::<f64>() / data.n() as f64
    };
    let margin2 = |data: &ResponseMatrix, a: usize, b: usize| -> f64 {
        (0..data.n())
            .filter(|&j| data.code(j, a) == 1 && data.code(j, b) == 1)
            .count() as f64
            / data.n() as f64
    };
    for i in 0..6 {
        let diff = (margin1(&data, i) - margin1(&data2, i)).abs();
        assert!(diff < 0.025, "item {i}: univariate margin differs by {diff:.4}");
    }
    for a in 0..6 {
        for b in (a + 1)..6 {
            let diff = (margin2(&data, a, b) - margin2(&data2, a, b)).abs();
            assert!(diff < 0.025, "pair ({a},{b}): joint margin differs by {diff:.4}");
        }
    }
}

#[test]
fn qmc_em_fits_above_three_traits() {
    // Four traits forces the QMC E-step. Smoke-level check: monotone trace,
    // convergence, finite parameters.
    let mut rng = derive_rng(1501, "qmcem");
    let slopes = [1.2, 1.5, 1.0, 1.4, 1.1, 1.3, 0.9, 1.6];
    let inters = [0.2, -0.4, 0.6, 0.0, -0.6, 0.3, -0.2, 0.1];
    let data = simulate_two_dim(600, &slopes, &inters, &mut rng);
    let init = default_normal_init(&data, 4).unwrap();
    let opts = FitOptions { qmc_points: 400, max_em_iters: 120, ..FitOptions::default() };
    let fit = em_fit_normal(&data, &init, None, &opts).unwrap();
    for w in fit.trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-8, "trace dipped: {:?}", w);
    }
    let layout = ParamLayout::for_model(&fit.model);
    assert!(layout.extract(&fit.model).iter().all(|v| v.is_finite()));
    // Same options, same result, bit for bit.
    let again = em_fit_normal(&data, &init, None, &opts).unwrap();
    assert_eq!(
        serde_json::to_string(&fit).unwrap(),
        serde_json::to_string(&again).unwrap()
    );
}

#[test]
fn heldout_validation_normal_trait() {
    let mut rng = derive_rng(1601, "heldout");
    let n = 5000;
    let slopes = [1.4, 1.0, 1.6, 0.8, 1.2];
    let inters = [0.0, 0.4, -0.4, 0.6, -0.6];
    let items: Vec<ItemSpec> =
        (0..5).map(|i| ItemSpec::binary(&format!("i{i}"), "")).collect();
    let mut rows = Vec::with_capacity(n);
    let mut heldout_related = Vec::with_capacity(n);
    let mut heldout_independent = Vec::with_capacity(n);
    for _ in 0..n {
        let theta = standard_normal(&mut rng);
        rows.push(
            slopes
                .iter()
                .zip(&inters)
                .map(|(a, d)| i16::from(rng.random::<f64>() < sigmoid(a * theta + d)))
                .collect::<Vec<i16>>(),
        );
        heldout_related.push(i16::from(rng.random::<f64>() < sigmoid(1.2 * theta)));
        heldout_independent.push(i16::from(rng.random::<f64>() < 0.5));
    }
    let ids = (0..n).map(|j| format!("p{j}")).collect();
    let data = ResponseMatrix::from_rows(items, ids, rows).unwrap();
    let init = default_normal_init(&data, 1).unwrap();
    let fit = em_fit_normal(&data, &init, None, &FitOptions::default()).unwrap();
    let rule = gauss_hermite_rule(21, 1, &[0.0], &[vec![1.0]]).unwrap();
    let related =
        validate_heldout(&data, &fit, None, Some(&rule), &heldout_related).unwrap();
    assert!(related.eap_difference.unwrap() > 0.3, "{:?}", related.eap_difference);
    let unrelated =
        validate_heldout(&data, &fit, None, Some(&rule), &heldout_independent).unwrap();
    assert!(
        unrelated.eap_difference.unwrap().abs() < 0.05,
        "{:?}",
        unrelated.eap_difference
    );
}
