mod common;

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_string, random_table, toy_tokenizer, BridgeConfig, BridgeFault, MockBridge};
use tokspace::exact::exact_summary;
use tokspace::hardness::{build_marginal, build_most_likely, CnfFormula};
use tokspace::logspace::log_sum_exp;
use tokspace::model::{NgramModel, Query, RemoteModel, TableModel, UniformModel};
use tokspace::{Conditioning, Mdd, ModelError, ScoringModel, TokenId, Tokenizer, VocabFile};

fn random_prefix<R: Rng>(rng: &mut R, vocab_size: usize, max_len: usize) -> Vec<TokenId> {
    let len = rng.random_range(0..=max_len);
    (0..len)
        .map(|_| rng.random_range(0..vocab_size as TokenId))
        .collect()
}

fn assert_normalized(model: &dyn ScoringModel, prefixes: usize, tol: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = model.vocab_size();
    for _ in 0..prefixes {
        let prefix = random_prefix(&mut rng, v, 12);
        let row = model.next_logprobs(&prefix, None).unwrap();
        assert_eq!(row.len(), v);
        let total = log_sum_exp(&row).exp();
        assert!(
            (total - 1.0).abs() <= tol,
            "prefix {prefix:?} sums to {total}"
        );
        let cands: Vec<TokenId> = (0..3).map(|_| rng.random_range(0..v as TokenId)).collect();
        let sub = model.next_logprobs(&prefix, Some(&cands)).unwrap();
        for (c, lp) in cands.iter().zip(sub) {
            assert_eq!(lp, row[*c as usize]);
        }
    }
}

#[test]
fn built_in_models_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert_normalized(&UniformModel::new(17), 1000, 1e-9, 1);
    assert_normalized(&random_table(&mut rng, 9), 1000, 1e-9, 2);

    let corpus: Vec<Vec<TokenId>> = (0..40).map(|_| random_prefix(&mut rng, 11, 20)).collect();
    for order in 1..=3 {
        let m = NgramModel::train(order, 11, &corpus, 0.1).unwrap();
        assert_normalized(&m, 1000, 1e-9, 10 + order as u64);
    }

    let cnf = CnfFormula::parse_dimacs("p cnf 3 3\n1 -2 0\n2 3 -1 0\n-3 0\n").unwrap();
    for inst in [build_most_likely(&cnf), build_marginal(&cnf)] {
        assert_normalized(&inst.model, 1000, 1e-9, 20);
    }
}

#[test]
fn model_errors_name_the_bad_id() {
    let m = UniformModel::new(4);
    assert!(matches!(
        m.next_logprobs(&[], Some(&[4])),
        Err(ModelError::UnknownToken(4))
    ));
}

fn bridge_tokenizer() -> Tokenizer {
    toy_tokenizer(
        &["a", "b", "c", "ab", "bc", "abc", "ca"],
        &[("a", "b"), ("b", "c"), ("ab", "c"), ("c", "a")],
    )
}

fn start_bridge(model: Arc<dyn ScoringModel>, fault: BridgeFault, delay: Duration) -> MockBridge {
    let tok = bridge_tokenizer();
    MockBridge::start(BridgeConfig {
        model,
        vocab: VocabFile {
            vocab: tok.vocab().clone(),
            merges: tok.merges().clone(),
        },
        tokenizer: tok,
        fault,
        delay,
    })
}

fn served_table() -> Arc<TableModel> {
    Arc::new(random_table(&mut ChaCha8Rng::seed_from_u64(77), 7))
}

#[test]
fn remote_rows_match_the_served_table() {
    let local = served_table();
    let bridge = start_bridge(local.clone(), BridgeFault::None, Duration::ZERO);
    let remote = RemoteModel::connect(&bridge.url).unwrap();
    assert_eq!(remote.vocab_size(), 7);
    assert_eq!(
        remote.vocab_file().vocab.tokens(),
        bridge_tokenizer().vocab().tokens()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let prefix = random_prefix(&mut rng, 7, 8);
        let want = local.next_logprobs(&prefix, None).unwrap();
        let got = remote.next_logprobs(&prefix, None).unwrap();
        for (a, b) in want.iter().zip(&got) {
            assert!((a - b).abs() <= 1e-6);
        }
        assert!((log_sum_exp(&got).exp() - 1.0).abs() <= 1e-6);
        let cands = [6, 0, 3];
        let got = remote.next_logprobs(&prefix, Some(&cands)).unwrap();
        for (c, g) in cands.iter().zip(got) {
            assert!((want[*c as usize] - g).abs() <= 1e-6);
        }
    }
}

#[test]
fn remote_batch_is_one_request_and_matches_singles() {
    let local = served_table();
    let bridge = start_bridge(local.clone(), BridgeFault::None, Duration::ZERO);
    let remote = RemoteModel::connect(&bridge.url).unwrap();
    let queries: Vec<Query> = (0..6)
        .map(|i| Query {
            prefix: vec![i, (i + 1) % 7],
            candidates: if i % 2 == 0 { None } else { Some(vec![1, 2]) },
        })
        .collect();
    let before = bridge.logprobs_calls.load(Ordering::SeqCst);
    let batch = remote.next_logprobs_batch(&queries).unwrap();
    assert_eq!(bridge.logprobs_calls.load(Ordering::SeqCst), before + 1);

    let fresh = RemoteModel::connect(&bridge.url).unwrap();
    for (q, row) in queries.iter().zip(&batch) {
        let single = fresh
            .next_logprobs(&q.prefix, q.candidates.as_deref())
            .unwrap();
        assert_eq!(&single, row);
    }
    // Answered from the cache now.
    let calls = bridge.logprobs_calls.load(Ordering::SeqCst);
    assert_eq!(remote.next_logprobs_batch(&queries).unwrap(), batch);
    assert_eq!(bridge.logprobs_calls.load(Ordering::SeqCst), calls);
}

#[test]
fn remote_canonical_matches_local_encoder() {
    let bridge = start_bridge(served_table(), BridgeFault::None, Duration::ZERO);
    let remote = RemoteModel::connect(&bridge.url).unwrap();
    let tok = bridge_tokenizer();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let len = rng.random_range(1..10);
        let text = random_string(&mut rng, &['a', 'b', 'c'], len);
        assert_eq!(
            remote.canonical(&text).unwrap(),
            tok.canonical_encode(&text).unwrap().ids
        );
    }
    assert!(remote.canonical("xyz").is_err());
}

#[test]
fn exact_scores_agree_through_the_bridge() {
    let local = served_table();
    let bridge = start_bridge(local.clone(), BridgeFault::None, Duration::ZERO);
    let remote = RemoteModel::connect(&bridge.url).unwrap();
    let tok = bridge_tokenizer();
    let mdd = Mdd::compile("abcabca", tok.vocab()).unwrap();
    let cond = Conditioning::default();
    let a = exact_summary(local.as_ref(), &mdd, &cond, 10_000).unwrap();
    let b = exact_summary(&remote, &mdd, &cond, 10_000).unwrap();
    assert!((a.marginal - b.marginal).abs() <= 1e-6);
    assert_eq!(a.best.ids, b.best.ids);
}

#[test]
fn remote_requests_run_concurrently() {
    let bridge = start_bridge(
        served_table(),
        BridgeFault::None,
        Duration::from_millis(150),
    );
    let remote = RemoteModel::connect(&bridge.url).unwrap();
    std::thread::scope(|s| {
        for i in 0..6 {
            let remote = &remote;
            s.spawn(move || remote.next_logprobs(&[i], None).unwrap());
        }
    });
    assert!(bridge.max_in_flight.load(Ordering::SeqCst) > 1);
}

#[test]
fn remote_failures_surface_as_errors() {
    let bridge = start_bridge(served_table(), BridgeFault::ServerError, Duration::ZERO);
    let remote = RemoteModel::connect(&bridge.url).unwrap();
    match remote.next_logprobs(&[0], None) {
        Err(ModelError::Protocol(msg)) => assert!(msg.contains("500"), "{msg}"),
        other => panic!("expected a protocol error, got {other:?}"),
    }

    let bridge = start_bridge(served_table(), BridgeFault::ShortRows, Duration::ZERO);
    let remote = RemoteModel::connect(&bridge.url).unwrap();
    assert!(matches!(
        remote.next_logprobs(&[0], None),
        Err(ModelError::Protocol(_))
    ));
    assert!(matches!(
        remote.next_logprobs_batch(&[Query {
            prefix: vec![],
            candidates: Some(vec![1, 2]),
        }]),
        Err(ModelError::Protocol(_))
    ));

    let bridge = start_bridge(served_table(), BridgeFault::None, Duration::ZERO);
    let remote = RemoteModel::connect(&bridge.url).unwrap();
    assert!(matches!(
        remote.next_logprobs(&[9], None),
        Err(ModelError::UnknownToken(9))
    ));

    let bridge = start_bridge(served_table(), BridgeFault::Unhealthy, Duration::ZERO);
    assert!(RemoteModel::connect(&bridge.url).is_err());

    let closed = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", closed.local_addr().unwrap());
    drop(closed);
    assert!(matches!(
        RemoteModel::connect(&url),
        Err(ModelError::Transport(_))
    ));
}
