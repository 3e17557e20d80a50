mod common;

use common::histories::{random_history, replays, serial_order_exists};
use learned_cc::workloads::oracle::{self, Verdict};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn graph_verdict_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut serializable, mut cyclic) = (0, 0);
    for _ in 0..3000 {
        let log = random_history(&mut rng, 5);
        let brute = serial_order_exists(&log);
        assert_eq!(oracle::brute_force_serializable(&log), brute, "{log:?}");
        match oracle::check_serializable(&log).unwrap() {
            Verdict::Serializable(order) => {
                assert!(brute, "graph accepted {log:?}");
                // The witness order itself must replay.
                let perm: Vec<usize> =
                    order.iter().map(|a| log.iter().position(|t| t.attempt == *a).unwrap()).collect();
                assert!(replays(&log, &perm), "witness {order:?} does not replay {log:?}");
                serializable += 1;
            }
            Verdict::Cycle(c) => {
                assert!(!brute, "graph rejected {log:?} with {c:?}");
                assert!(c.len() >= 2);
                cyclic += 1;
            }
        }
    }
    // Both verdicts must be well represented for the comparison to mean much.
    assert!(serializable > 500 && cyclic > 500, "{serializable} / {cyclic}");
}

#[test]
fn engine_histories_of_four_agree_with_brute_force() {
    use learned_cc::workloads::micro::{MicroConfig, Microbench};
    use learned_cc::workloads::Workload;
    use learned_cc::executor::sim;

    // Four workers, one transaction each, over four hot keys: every history
    // is small enough to enumerate all 24 serial orders.
    let workload = Microbench::new(MicroConfig { hot_keys: 4, cold_keys: 4, unique_keys: 4, theta: 0.5, ..MicroConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut total = 0;
    for seed in 0..200u64 {
        let (cc, backoff) = common::random_policy(&workload.schema(), &mut rng);
        let (engine, _) = common::sim_engine(&workload, cc, backoff);
        let streams = (0..4).map(|i| Box::new(workload.generator(seed, i).take(1)) as sim::ProgramStream).collect();
        let report = sim::run(&engine, streams, sim::SimConfig { ticks: 50_000, seed, keep_log: true, ..Default::default() });
        let log = report.log;
        assert!(log.len() <= 4);
        total += log.len();
        let graph = oracle::check_serializable(&log).unwrap().is_serializable();
        assert!(graph, "engine produced {log:?}");
        assert_eq!(serial_order_exists(&log), graph);
        assert_eq!(oracle::brute_force_serializable(&log), graph);
    }
    assert!(total > 600, "{total}");
}
