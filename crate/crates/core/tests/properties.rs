mod common;

use docgraph::decode::{beam_search, bleu, corpus_bleu, greedy_search, BeamConfig, BleuMode, TableScorer};
use docgraph::graph::{build_document_graph, propagation_matrices, prune_to_radius};
use docgraph::model::{gate, Architecture, ContextScope, Fwd, Model, ModelConfig};
use docgraph::tensor::{Tape, Tensor};
use docgraph::tokenize::{join_subwords, learn_bpe};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn word() -> impl Strategy<Value = String> {
    "[a-e]{1,6}"
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-d]", 0..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn graph_matches_pairwise_scan(seed in any::<u64>()) {
        let doc = common::random_document(&mut rng(seed), 40, 20);
        let g = build_document_graph(&doc);
        prop_assert_eq!(g.edges(), &common::scan_edges(&doc));
    }

    #[test]
    fn pruning_matches_all_pairs_distances(seed in any::<u64>(), radius in 0usize..4) {
        let mut r = rng(seed);
        let doc = common::random_document(&mut r, 30, 20);
        let m = r.gen_range(0..doc.num_sentences());
        let g = build_document_graph(&doc);
        let pruned = prune_to_radius(&g, &doc, m, radius).unwrap();
        let seeds: Vec<usize> = doc.sentence_range(m).collect();
        let kept = common::nodes_within(doc.num_tokens(), g.edges(), &seeds, radius);
        prop_assert_eq!(pruned.graph.nodes(), kept.as_slice());
        let expected: Vec<_> = g
            .edges()
            .iter()
            .filter(|e| kept.contains(&e.src) && kept.contains(&e.dst))
            .copied()
            .collect();
        prop_assert_eq!(pruned.graph.edges().iter().copied().collect::<Vec<_>>(), expected);
        let current: Vec<usize> = seeds.iter().map(|s| kept.iter().position(|k| k == s).unwrap()).collect();
        prop_assert_eq!(pruned.current, current);
    }

    #[test]
    fn propagation_matches_dense_products(seed in any::<u64>(), n in 1usize..12, density in 0.0f64..0.6) {
        let g = common::random_graph(&mut rng(seed), n, density);
        let p = propagation_matrices(&g).unwrap();
        let out = common::dense_out_adjacency(&g);
        let inw = common::transpose(&out);
        prop_assert!(common::max_diff(&p.outward.normalized, &common::dense_normalized(&out)) < 1e-12);
        prop_assert!(common::max_diff(&p.inward.normalized, &common::dense_normalized(&inw)) < 1e-12);
        prop_assert_eq!(&p.inward.adjacency, &p.outward.adjacency.transpose());
        prop_assert_eq!(&p.self_loop.normalized, &Tensor::identity(n));
    }

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..9) {
        let x = Tensor::uniform(vec![rows, cols], 30.0, &mut rng(seed));
        let tape = Tape::new();
        let s = tape.constant(x).softmax_rows(None).unwrap().value();
        for r in 0..rows {
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(s.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn bpe_round_trips_words(corpus in prop::collection::vec(word(), 1..20), merges in 1usize..30, probe in word()) {
        let bpe = learn_bpe(std::slice::from_ref(&corpus), merges).unwrap();
        prop_assert_eq!(join_subwords(&bpe.apply(&probe).unwrap()), probe);
        for w in &corpus {
            let pieces = bpe.apply(w).unwrap();
            prop_assert_eq!(&join_subwords(&pieces), w);
            let ids = bpe.encode_word(w).unwrap();
            let decoded = bpe.decode_words(&ids);
            prop_assert_eq!(decoded.len(), 1);
            prop_assert_eq!(&decoded[0].0, w);
        }
    }

    #[test]
    fn bleu_ignores_segment_order(
        pairs in prop::collection::vec((sentence(), sentence()), 1..8),
        shift in 0usize..8,
        smooth in any::<bool>(),
    ) {
        let (hyps, refs): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let mut rotated = pairs.clone();
        rotated.rotate_left(shift % pairs.len());
        rotated.reverse();
        let (hyps2, refs2): (Vec<_>, Vec<_>) = rotated.into_iter().unzip();
        prop_assert_eq!(corpus_bleu(&hyps, &refs, smooth).unwrap(), corpus_bleu(&hyps2, &refs2, smooth).unwrap());
    }

    #[test]
    fn single_sentence_documents_score_alike(pairs in prop::collection::vec((sentence(), sentence()), 1..8)) {
        let hyp: Vec<Vec<Vec<String>>> = pairs.iter().map(|p| vec![p.0.clone()]).collect();
        let reference: Vec<Vec<Vec<String>>> = pairs.iter().map(|p| vec![p.1.clone()]).collect();
        let s = bleu(&hyp, &reference, BleuMode::Sentence, false).unwrap();
        let d = bleu(&hyp, &reference, BleuMode::DocumentAsSentence, false).unwrap();
        prop_assert_eq!(s.score, d.score);
        prop_assert_eq!(s.precisions, d.precisions);
        prop_assert_eq!(s.brevity_penalty, d.brevity_penalty);
    }

    #[test]
    fn beam_never_scores_below_greedy(seed in any::<u64>(), vocab in 2usize..6, cap in 1usize..7, beam in 1usize..5, alpha in 0.0f64..1.5) {
        let mut r = rng(seed);
        let weights: Vec<Vec<f64>> = (0..cap).map(|_| (0..vocab).map(|_| r.gen_range(0.05..1.0)).collect()).collect();
        let mut table = TableScorer::from_weights(&weights);
        let b = beam_search(&mut table, &BeamConfig::new(beam, alpha, cap, 0)).unwrap();
        let g = greedy_search(&mut table, cap, 0).unwrap();
        prop_assert!(b.score(alpha) >= g.score(alpha) - 1e-12);
    }

    #[test]
    fn gate_output_lies_between_its_inputs(seed in any::<u64>(), n in 1usize..5, d in 1usize..6) {
        let mut r = rng(seed);
        let tape = Tape::new();
        let mut t = |shape: Vec<usize>, bound| tape.constant(Tensor::uniform(shape, bound, &mut r));
        let (h_a, h_c) = (t(vec![n, d], 3.0), t(vec![n, d], 3.0));
        let (w_a, w_c) = (t(vec![d, d], 2.0), t(vec![d, d], 2.0));
        let out = gate(h_a, h_c, w_a, w_c).unwrap().value();
        let (a, c) = (h_a.value(), h_c.value());
        for i in 0..n * d {
            let (lo, hi) = (a.data()[i].min(c.data()[i]), a.data()[i].max(c.data()[i]));
            prop_assert!(out.data()[i] >= lo - 1e-12 && out.data()[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn decoder_is_causal(seed in any::<u64>(), arch in 0usize..3, cut in 1usize..4) {
        let config = ModelConfig {
            layers: 1,
            heads: 2,
            hidden: 8,
            ffn: 16,
            dropout: 0.0,
            src_vocab: 10,
            tgt_vocab: 10,
            architecture: Architecture::ALL[arch],
            use_src_graph: false,
            use_tgt_graph: false,
            context_scope: ContextScope::Current,
            ..ModelConfig::default()
        };
        let (model, store) = Model::new(config, seed).unwrap();
        let mut r = rng(seed);
        let src: Vec<usize> = (0..4).map(|_| r.gen_range(3..10)).collect();
        let mut tgt: Vec<usize> = (0..5).map(|_| r.gen_range(3..10)).collect();
        tgt[0] = 1;
        let run = |tgt: &[usize]| {
            let tape = Tape::new();
            let fx = Fwd::eval(&tape, &store);
            let input = docgraph::model::ModelInput { src: &src, src_graph: None, tgt_graph: None };
            model.log_probs(&fx, input, tgt).unwrap().value().as_ref().clone()
        };
        let before = run(&tgt);
        for t in tgt.iter_mut().skip(cut) {
            *t = 3 + (*t - 2) % 7;
        }
        let after = run(&tgt);
        for row in 0..cut {
            prop_assert_eq!(before.row(row), after.row(row));
        }
    }
}
