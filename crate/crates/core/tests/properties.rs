mod common;

use common::*;
use polytuplet::data::{parse_dataset_json, to_json};
use polytuplet::loss::{
    distance_cce_loss, hybrid_loss, polytuplet_loss, polytuplet_with_terms, triplet_loss,
};
use polytuplet::manifold::{
    dot, project_to_sphere, project_to_sphere_backward, sq_distance,
};
use polytuplet::mining::{classify_negatives, mining_weights, NegativeCategory};
use polytuplet::{Embedding, EmbeddingBatch, McqaInstance, PolytupletConfig, TripletConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn raw_vector(max_dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 2..=max_dim)
        .prop_filter("non-degenerate", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
}

fn batch_strategy() -> impl Strategy<Value = EmbeddingBatch> {
    (any::<u64>(), 1usize..6, 2usize..6, prop::sample::select(vec![2usize, 3, 8, 64]))
        .prop_map(|(seed, b, n, d)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_unit_batch(&mut rng, b, n, d)
        })
}

fn margin() -> impl Strategy<Value = f64> {
    0.0f64..3.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn projection_has_unit_norm(v in raw_vector(64)) {
        let e = project_to_sphere(&v).unwrap();
        prop_assert!((e.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_is_scale_invariant(v in raw_vector(16), s in 1e-3f64..1e3) {
        let a = project_to_sphere(&v).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| x * s).collect();
        let b = project_to_sphere(&scaled).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_backward_is_tangent(v in raw_vector(16), g in prop::collection::vec(-1.0f64..1.0, 16)) {
        let g = &g[..v.len()];
        let back = project_to_sphere_backward(&v, g).unwrap();
        let radial: f64 = back.iter().zip(&v).map(|(a, b)| a * b).sum();
        prop_assert!(radial.abs() < 1e-10);
    }

    #[test]
    fn projection_backward_matches_differences(v in raw_vector(8), g in prop::collection::vec(-1.0f64..1.0, 8)) {
        let g = &g[..v.len()];
        let analytic = project_to_sphere_backward(&v, g).unwrap();
        let numeric = finite_difference(
            |x| project_to_sphere(x).unwrap().0.iter().zip(g).map(|(a, b)| a * b).sum(),
            &v,
            1e-5,
        );
        prop_assert!(max_rel_err(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn distances_bounded_and_symmetric(seed in any::<u64>(), d in 2usize..70) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Embedding(unit_vector(&mut rng, d));
        let b = Embedding(unit_vector(&mut rng, d));
        let ab = sq_distance(&a, &b).unwrap();
        prop_assert!((0.0..=4.0).contains(&ab));
        prop_assert_eq!(ab, sq_distance(&b, &a).unwrap());
        prop_assert!((ab - (2.0 - 2.0 * dot(&a.0, &b.0))).abs() < 1e-9);
    }

    #[test]
    fn polytuplet_matches_reference(batch in batch_strategy(), m in margin(), wh in 0.0f64..3.0, ws in 0.0f64..3.0) {
        let cfg = PolytupletConfig { margin: m, w_hard: wh, w_semi: ws, ..Default::default() };
        let got = polytuplet_loss(&batch, &cfg).unwrap().value;
        let want = naive_polytuplet(&batch, m, wh, ws);
        prop_assert!((got - want).abs() < 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn polytuplet_is_nonnegative_and_bounded(batch in batch_strategy(), m in margin()) {
        let cfg = PolytupletConfig { margin: m, ..Default::default() };
        let v = polytuplet_loss(&batch, &cfg).unwrap().value;
        let n = batch.n_answers() as f64;
        prop_assert!(v >= 0.0);
        prop_assert!(v <= (n - 1.0) * (4.0 + m) + 1e-12);
    }

    #[test]
    fn zero_loss_means_zero_gradient(batch in batch_strategy(), m in margin()) {
        let cfg = PolytupletConfig { margin: m, ..Default::default() };
        let out = polytuplet_loss(&batch, &cfg).unwrap();
        if out.value == 0.0 {
            prop_assert!(out.flat_grads().iter().all(|g| *g == 0.0));
        }
    }

    #[test]
    fn polytuplet_gradient_matches_differences(batch in batch_strategy(), m in margin()) {
        // Skip draws with a gap near 0 or m, where the hinge or category
        // changes inside the stencil.
        let cats_stable = {
            let mut stable = true;
            for i in 0..batch.batch_size() {
                let y = batch.labels[i];
                let a = &batch.context[i].0;
                let dp = naive_sq_dist(a, &batch.results[i][y].0);
                for j in 0..batch.n_answers() {
                    if j == y { continue; }
                    let gap = naive_sq_dist(a, &batch.results[i][j].0) - dp;
                    if gap.abs() < 1e-3 || (gap - m).abs() < 1e-3 { stable = false; }
                }
            }
            stable
        };
        prop_assume!(cats_stable);
        let cfg = PolytupletConfig { margin: m, w_hard: 1.7, w_semi: 0.4, ..Default::default() };
        let analytic = polytuplet_loss(&batch, &cfg).unwrap().flat_grads();
        let x = flatten(&batch);
        let numeric = finite_difference(
            |x| polytuplet_loss(&rebuild(&batch, x), &cfg).unwrap().value,
            &x,
            1e-5,
        );
        prop_assert!(max_rel_err(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn polytuplet_is_permutation_equivariant(batch in batch_strategy(), m in margin(), rot in 0usize..6) {
        let cfg = PolytupletConfig { margin: m, ..Default::default() };
        let n = batch.n_answers();
        let perm: Vec<usize> = (0..n).map(|j| (j + rot) % n).collect();
        let mut permuted = batch.clone();
        for i in 0..batch.batch_size() {
            for j in 0..n {
                permuted.results[i][perm[j]] = batch.results[i][j].clone();
            }
            permuted.labels[i] = perm[batch.labels[i]];
        }
        let a = polytuplet_loss(&batch, &cfg).unwrap();
        let b = polytuplet_loss(&permuted, &cfg).unwrap();
        prop_assert!((a.value - b.value).abs() < 1e-12);
        for i in 0..batch.batch_size() {
            for j in 0..n {
                for (x, y) in a.grad_results[i][j].iter().zip(&b.grad_results[i][perm[j]]) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn polytuplet_reduces_to_triplet(seed in any::<u64>(), m in margin(), d in 2usize..65) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = random_unit_batch(&mut rng, 1, 2, d);
        let y = batch.labels[0];
        let cfg = PolytupletConfig { margin: m, ..Default::default() };
        let poly = polytuplet_loss(&batch, &cfg).unwrap();
        let tri = triplet_loss(
            &batch.context[0],
            &batch.results[0][y],
            &batch.results[0][1 - y],
            &TripletConfig { alpha: m },
        ).unwrap();
        prop_assert!((poly.value - tri.value).abs() < 1e-9);
        prop_assert_eq!(&poly.grad_context[0], &tri.grad_anchor);
        prop_assert_eq!(&poly.grad_results[0][y], &tri.grad_positive);
        prop_assert_eq!(&poly.grad_results[0][1 - y], &tri.grad_negative);
    }

    #[test]
    fn mining_matches_reference(batch in batch_strategy(), m in margin()) {
        let report = classify_negatives(&batch, m).unwrap();
        let want = naive_categories(&batch, m);
        let hinges = naive_hinges(&batch, m);
        for i in 0..batch.batch_size() {
            for j in 0..batch.n_answers() {
                let got = report.mask[i][j].map(|c| match c {
                    NegativeCategory::Hard => 0u8,
                    NegativeCategory::SemiHard => 1,
                    NegativeCategory::Easy => 2,
                });
                prop_assert_eq!(got, want[i][j]);
                let h = hinges[i][j];
                match report.mask[i][j] {
                    None => {}
                    Some(NegativeCategory::Easy) => prop_assert_eq!(h, 0.0),
                    Some(NegativeCategory::SemiHard) => prop_assert!(h > 0.0 && h < m),
                    Some(NegativeCategory::Hard) => prop_assert!(h >= m && h <= 4.0 + m),
                }
            }
        }
        let total = report.counts.total();
        prop_assert_eq!(total, batch.batch_size() * (batch.n_answers() - 1));
    }

    #[test]
    fn unit_weights_recover_plain_sum(batch in batch_strategy(), m in margin()) {
        let cfg = PolytupletConfig { margin: m, ..Default::default() };
        let (_, terms) = polytuplet_with_terms(&batch, &cfg).unwrap();
        let plain: Vec<f64> = naive_hinges(&batch, m).iter().map(|r| r.iter().sum()).collect();
        for (a, b) in terms.iter().zip(&plain) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let report = classify_negatives(&batch, m).unwrap();
        let w = mining_weights(&report, 1.0, 1.0);
        for (i, row) in w.iter().enumerate() {
            prop_assert_eq!(row[batch.labels[i]], 0.0);
        }
    }

    #[test]
    fn cce_matches_reference(batch in batch_strategy(), t in 0.1f64..5.0) {
        let got = distance_cce_loss(&batch, t).unwrap().value;
        let want = naive_distance_cce(&batch, t);
        prop_assert!((got - want).abs() < 1e-10);
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn hybrid_is_weighted_sum(batch in batch_strategy(), lp in 0.0f64..2.0, lc in 0.0f64..2.0) {
        let cfg = PolytupletConfig { lambda_poly: lp, lambda_cce: lc, ..Default::default() };
        let got = hybrid_loss(&batch, &cfg).unwrap().value;
        let want = lp * naive_polytuplet(&batch, 1.0, 1.0, 1.0) + lc * naive_distance_cce(&batch, 1.0);
        prop_assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn dataset_json_round_trips(
        records in prop::collection::vec(
            ("[a-z][a-z ]{0,19}", "[a-z?]{1,10}", prop::collection::vec("[a-zA-Z0-9][a-zA-Z0-9 ]{0,11}", 4), prop::option::of(0usize..4), "[a-z0-9_]{1,8}"),
            1..12,
        )
    ) {
        let data: Vec<McqaInstance> = records
            .into_iter()
            .map(|(context, question, answers, label, id)| McqaInstance { context, question, answers, label, id })
            .collect();
        let back = parse_dataset_json(to_json(&data).as_bytes(), Some(4)).unwrap();
        prop_assert_eq!(back, data);
    }
}
