//! Randomized invariant checks across the library: parsing round trips,
//! split partitions, permutation algebra, click-model bounds, metric
//! ranges, pair sampling, loss nonnegativity, and model-output ranges.

use crum_core::click::{expected_clicks, position_decay, ClickModelConfig};
use crum_core::data::{
    binarize_labels, parse_letor, to_letor_string, truncate_and_split, Dataset, Item,
    RankedRequest,
};
use crum_core::evaluator::{predict_click_probs, Evaluator, EvaluatorArch};
use crum_core::metrics::{average_precision, ndcg_at_k, revenue_at_k};
use crum_core::oracle::enumerate_best_permutation;
use crum_core::rerank::{lambda_utility_loss, rerank, sample_pairs, Reranker, RerankerArch};
use crum_core::Permutation;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn arb_item(d: usize) -> impl Strategy<Value = Item<f32>> {
    (
        prop::collection::vec(-5.0f32..5.0, d),
        0u8..=4,
        0.5f32..1.5,
        any::<bool>(),
    )
        .prop_map(|(features, graded_label, bid, relevant)| Item {
            features,
            bid,
            graded_label,
            binary_label: u8::from(relevant),
        })
}

fn arb_permutation(n: usize) -> impl Strategy<Value = Permutation> {
    Just((0..n).collect::<Vec<usize>>())
        .prop_shuffle()
        .prop_map(|order| Permutation::from_order(&order).expect("shuffled order is a bijection"))
}

fn arb_request(d: usize) -> impl Strategy<Value = RankedRequest<f32>> {
    (1usize..6).prop_flat_map(move |n| {
        (prop::collection::vec(arb_item(d), n), arb_permutation(n)).prop_map(
            |(items, initial_positions)| RankedRequest {
                request_id: "q".to_string(),
                items,
                initial_positions,
                clicks: None,
            },
        )
    })
}

fn arb_dataset() -> impl Strategy<Value = Dataset<f32>> {
    (1usize..4).prop_flat_map(|d| {
        prop::collection::vec(arb_request(d), 1..6).prop_map(move |mut requests| {
            for (i, r) in requests.iter_mut().enumerate() {
                r.request_id = format!("q{i}");
            }
            let n_max = requests.iter().map(|r| r.len()).max().unwrap();
            Dataset::new(requests, d, n_max).expect("generated requests are well-formed")
        })
    })
}

fn sorted_ids(dataset: &Dataset<f32>) -> Vec<String> {
    let mut ids: Vec<String> = dataset.requests.iter().map(|r| r.request_id.clone()).collect();
    ids.sort();
    ids
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn letor_round_trip_preserves_labels_ids_and_features(ds in arb_dataset()) {
        let text = to_letor_string(&ds);
        let back: Dataset<f32> = parse_letor(&text).unwrap();
        prop_assert_eq!(back.len(), ds.len());
        prop_assert_eq!(back.feature_dim, ds.feature_dim);
        for (orig, parsed) in ds.requests.iter().zip(&back.requests) {
            prop_assert_eq!(&parsed.request_id, &orig.request_id);
            prop_assert_eq!(parsed.len(), orig.len());
            // Serialization writes display order, parsing assigns identity
            // positions: item t of the parse is the item shown at t+1.
            let order = orig.initial_positions.order();
            prop_assert!(parsed.initial_positions.is_identity());
            for (t, parsed_item) in parsed.items.iter().enumerate() {
                let shown = &orig.items[order[t]];
                prop_assert_eq!(parsed_item.graded_label, shown.graded_label);
                prop_assert_eq!(&parsed_item.features, &shown.features);
            }
        }
    }

    #[test]
    fn binarization_matches_the_threshold_everywhere(
        ds in arb_dataset(),
        threshold in 0u8..=4,
    ) {
        let out = binarize_labels(&ds, threshold);
        for (orig, req) in ds.requests.iter().zip(&out.requests) {
            for (o, b) in orig.items.iter().zip(&req.items) {
                prop_assert_eq!(b.binary_label, u8::from(o.graded_label > threshold));
                prop_assert_eq!(o.graded_label, b.graded_label, "grades untouched");
            }
        }
    }

    #[test]
    fn splits_partition_the_requests(
        ds in arb_dataset(),
        ratios in prop_oneof![
            Just((1.0, 0.0, 0.0)),
            Just((0.5, 0.25, 0.25)),
            Just((0.7, 0.0, 0.3)),
            Just((0.6, 0.2, 0.2)),
        ],
        n_max in 1usize..6,
        seed in any::<u64>(),
    ) {
        let (train, val, test) = truncate_and_split(&ds, n_max, ratios, seed).unwrap();
        prop_assert_eq!(train.len() + val.len() + test.len(), ds.len());

        let mut combined: Vec<String> = Vec::new();
        for split in [&train, &val, &test] {
            for r in &split.requests {
                prop_assert!(r.len() <= n_max, "truncation cap respected");
                combined.push(r.request_id.clone());
            }
        }
        combined.sort();
        prop_assert_eq!(combined, sorted_ids(&ds), "every request lands in exactly one split");

        let again = truncate_and_split(&ds, n_max, ratios, seed).unwrap();
        prop_assert_eq!(sorted_ids(&again.0), sorted_ids(&train));
        prop_assert_eq!(sorted_ids(&again.2), sorted_ids(&test));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn score_sorting_yields_a_descending_bijection(
        scores in prop::collection::vec(-1e3f64..1e3, 1..9),
    ) {
        let perm = Permutation::from_scores_desc(&scores, |i| i);
        let mut seen = vec![false; scores.len()];
        for &p in perm.positions() {
            prop_assert!(p >= 1 && p <= scores.len());
            prop_assert!(!seen[p - 1], "position used twice");
            seen[p - 1] = true;
        }
        let order = perm.order();
        for w in order.windows(2) {
            prop_assert!(scores[w[0]] >= scores[w[1]], "display order is descending");
        }
    }

    #[test]
    fn reversal_is_an_involution(n in 1usize..9, perm_seed in any::<u64>()) {
        let scores: Vec<f64> = (0..n)
            .map(|i| ((perm_seed >> (i % 48)) & 0xff) as f64)
            .collect();
        let perm = Permutation::from_scores_desc(&scores, |i| i);
        prop_assert_eq!(&perm.reversed().reversed(), &perm);
    }

    #[test]
    fn sampled_pairs_are_distinct_ordered_and_capped(
        n in 0usize..12,
        count in 0usize..40,
        seed in any::<u64>(),
    ) {
        let pairs = sample_pairs(n, count, seed);
        let total = if n < 2 { 0 } else { n * (n - 1) / 2 };
        prop_assert_eq!(pairs.len(), count.min(total));
        let mut seen = std::collections::HashSet::new();
        for &(hi, lo) in &pairs {
            prop_assert!(hi > lo, "pairs point from worse to better display rank");
            prop_assert!(hi < n);
            prop_assert!(seen.insert((hi, lo)), "pair drawn twice");
        }
        prop_assert_eq!(&pairs, &sample_pairs(n, count, seed), "same seed, same pairs");
    }

    #[test]
    fn pairwise_loss_is_nonnegative_and_vanishes_without_deltas(
        scores in prop::collection::vec(-10.0f64..10.0, 2..6),
        raw_pairs in prop::collection::vec((0usize..6, 0usize..6), 1..8),
        raw_deltas in prop::collection::vec(-3.0f64..3.0, 8),
        sigma in 0.1f64..4.0,
    ) {
        let n = scores.len();
        let pairs: Vec<(usize, usize)> = raw_pairs
            .into_iter()
            .map(|(a, b)| (a % n, b % n))
            .filter(|(a, b)| a != b)
            .collect();
        prop_assume!(!pairs.is_empty());
        let deltas = &raw_deltas[..pairs.len()];
        let loss = lambda_utility_loss(&scores, &pairs, deltas, sigma);
        prop_assert!(loss >= 0.0 && loss.is_finite());

        let zeros = vec![0.0f64; pairs.len()];
        let silent = lambda_utility_loss(&scores, &pairs, &zeros, sigma);
        prop_assert_eq!(silent, 0.0, "no utility difference, no loss");
    }

    #[test]
    fn ap_and_ndcg_stay_in_the_unit_interval(
        labels in prop::collection::vec(0u8..=4, 1..10),
    ) {
        let binary: Vec<u8> = labels.iter().map(|&l| u8::from(l > 1)).collect();
        let ap = average_precision(&binary);
        prop_assert!((0.0..=1.0).contains(&ap));
        for k in 1..=labels.len() {
            let ndcg = ndcg_at_k(&labels, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&ndcg), "nDCG@{k} = {ndcg}");
        }
    }

    #[test]
    fn ndcg_ignores_swaps_of_equal_labels(
        labels in prop::collection::vec(0u8..=2, 4..9),
        pick in any::<u64>(),
    ) {
        // Three grades over at least four slots guarantee a tied pair.
        let mut tied: Vec<(usize, usize)> = Vec::new();
        for i in 0..labels.len() {
            for j in i + 1..labels.len() {
                if labels[i] == labels[j] {
                    tied.push((i, j));
                }
            }
        }
        let (i, j) = tied[(pick as usize) % tied.len()];
        let mut swapped = labels.clone();
        swapped.swap(i, j);
        for k in 1..=labels.len() {
            prop_assert_eq!(
                ndcg_at_k(&labels, k).unwrap(),
                ndcg_at_k(&swapped, k).unwrap()
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn click_marginals_respect_the_decay_ceiling(
        request in arb_request(2),
        eta in 0.0f64..2.5,
        similarity in any::<bool>(),
    ) {
        let config = ClickModelConfig { eta, threshold: 1, similarity, exploration: 0.0 };
        let perm = &request.initial_positions;
        let marginals =
            expected_clicks(&request, perm, &config, &request.relevance_probs()).unwrap();
        for (i, &m) in marginals.iter().enumerate() {
            let ceiling = position_decay(perm.position_of(i), eta).unwrap();
            prop_assert!(m >= 0.0);
            prop_assert!(m <= ceiling + 1e-12, "marginal {m} above decay {ceiling}");
            prop_assert!(ceiling <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn without_similarity_marginals_factorize_exactly(request in arb_request(3)) {
        let config = ClickModelConfig { eta: 0.7, threshold: 1, similarity: false };
        let perm = &request.initial_positions;
        let rel = request.relevance_probs();
        let marginals = expected_clicks(&request, perm, &config, &rel).unwrap();
        for (i, &m) in marginals.iter().enumerate() {
            let expected = rel[i] * position_decay(perm.position_of(i), 0.7).unwrap();
            prop_assert!((m - expected).abs() <= 1e-9, "{m} vs {expected}");
        }
    }

    #[test]
    fn click_marginals_ignore_item_storage_order(
        request in arb_request(2),
        shuffle_seed in any::<u64>(),
    ) {
        let n = request.len();
        let config = ClickModelConfig::default();
        let rel = request.relevance_probs();
        let base = expected_clicks(
            &request,
            &request.initial_positions,
            &config,
            &rel,
        )
        .unwrap();

        // Reindex storage by a derived shuffle; the displayed list is
        // unchanged, so the marginals must follow the relabeling.
        let mut sigma: Vec<usize> = (0..n).collect();
        let mut rng_state = shuffle_seed;
        for i in (1..n).rev() {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            sigma.swap(i, (rng_state >> 33) as usize % (i + 1));
        }
        let items: Vec<Item<f32>> = sigma.iter().map(|&s| request.items[s].clone()).collect();
        let positions: Vec<usize> = sigma
            .iter()
            .map(|&s| request.initial_positions.position_of(s))
            .collect();
        let shuffled = RankedRequest {
            request_id: request.request_id.clone(),
            items,
            initial_positions: Permutation::from_positions(positions).unwrap(),
            clicks: None,
        };
        let shuffled_marginals = expected_clicks(
            &shuffled,
            &shuffled.initial_positions,
            &config,
            &shuffled.relevance_probs(),
        )
        .unwrap();
        for (j, &s) in sigma.iter().enumerate() {
            prop_assert!(
                (shuffled_marginals[j] - base[s]).abs() <= 1e-12,
                "storage order changed the marginal: {} vs {}",
                shuffled_marginals[j],
                base[s]
            );
        }
    }

    #[test]
    fn revenue_is_monotone_in_the_cutoff(
        mut request in arb_request(2),
        click_bits in prop::collection::vec(any::<bool>(), 5),
    ) {
        let n = request.len();
        request.clicks = Some(click_bits.iter().take(n).map(|&b| u8::from(b)).collect());
        let perm = request.initial_positions.clone();
        let ds = Dataset::new(vec![request], 2, n).unwrap();
        let mut previous = 0.0;
        for k in 1..=n {
            let r = revenue_at_k(&ds, std::slice::from_ref(&perm), k).unwrap();
            prop_assert!(r >= previous - 1e-12, "revenue dropped as k grew");
            previous = r;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn evaluator_probabilities_stay_strictly_inside_unit_interval(
        request in arb_request(3),
        init_seed in any::<u64>(),
        use_lstm in any::<bool>(),
    ) {
        let evaluator = Evaluator::new(EvaluatorArch {
            feature_dim: 3,
            n_max: 6,
            graph_width: 0,
            hidden: 4,
            mlp_hidden: vec![8],
            use_lstm,
            use_graph: false,
        })
        .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(init_seed);
        let params = evaluator.init::<f32>(&mut rng);
        let probs =
            predict_click_probs(&evaluator, &params, &request, &request.initial_positions, None)
                .unwrap();
        prop_assert_eq!(probs.len(), request.len());
        for &p in &probs {
            prop_assert!(p > 0.0 && p < 1.0, "probability {p} left (0, 1)");
        }
    }

    #[test]
    fn reranking_is_a_bijection_and_idempotent(
        request in arb_request(2),
        init_seed in any::<u64>(),
    ) {
        let reranker = Reranker::new(
            RerankerArch {
                feature_dim: 2,
                n_max: 6,
                graph_width: 0,
                mlp_hidden: vec![6],
                use_graph: false,
            },
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(init_seed);
        let params = reranker.init::<f32>(&mut rng);
        let perm = rerank(&reranker, &params, &request, None).unwrap();
        let mut seen = vec![false; request.len()];
        for &p in perm.positions() {
            prop_assert!(p >= 1 && p <= request.len());
            prop_assert!(!seen[p - 1]);
            seen[p - 1] = true;
        }
        let again = rerank(&reranker, &params, &request, None).unwrap();
        prop_assert_eq!(&again, &perm, "same params, same graph, same order");
    }

    #[test]
    fn exhaustive_search_visits_every_permutation(
        n in 1usize..=5,
        weights in prop::collection::vec(-2.0f64..2.0, 5),
    ) {
        let factorial: usize = (1..=n).product();
        let result = enumerate_best_permutation(
            n,
            |perm| {
                (0..n)
                    .map(|i| weights[i] * perm.position_of(i) as f64)
                    .sum::<f64>()
            },
            5,
        )
        .unwrap();
        prop_assert_eq!(result.visited, factorial);
        prop_assert_eq!(result.utility_of.len(), factorial);
        let max = result
            .utility_of
            .iter()
            .map(|(_, u)| *u)
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(result.best_utility, max, "reported best is the maximum");
    }
}
