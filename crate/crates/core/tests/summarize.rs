use bnpmfa::summarize::chain_agreement;
use bnpmfa::types::{ChainTrace, PartitionState, TraceRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_trace(rng: &mut ChaCha8Rng, n: usize, h: usize, len: usize) -> ChainTrace {
    let records = (0..len)
        .map(|k| {
            let raw: Vec<usize> = (0..n).map(|_| rng.random_range(0..h)).collect();
            let p = PartitionState::from_labels(&raw);
            TraceRecord {
                iteration: k + 1,
                n_clusters: p.n_clusters(),
                labels: p.labels().to_vec(),
                log_score: 0.0,
            }
        })
        .collect();
    ChainTrace::from_records(records)
}

#[test]
fn independent_random_chains_do_not_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let traces: Vec<ChainTrace> = (0..4).map(|_| random_trace(&mut rng, 1000, 5, 3)).collect();
    let m = chain_agreement(&traces).unwrap();
    for a in 0..4 {
        assert_eq!(m[(a, a)], 1.0);
        for b in 0..4 {
            assert_eq!(m[(a, b)], m[(b, a)]);
            if a != b {
                assert!(m[(a, b)].abs() < 0.05, "{}", m[(a, b)]);
            }
        }
    }
}

#[test]
fn agreement_needs_two_chains() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    assert!(chain_agreement(&[random_trace(&mut rng, 10, 2, 2)]).is_err());
}
