use del_cli::harness;
use del_cli::output::monte_carlo_csv;
use del_cli::transport::{with_threaded_transport, FileSink, ReplayTransport};
use del_core::datagen::{generate_cluster, ExperimentDesign};
use del_core::el::SolverOptions;
use del_core::protocol::{
    coordinate, make_workers, run_del, DelConfig, RecordingTransport, Transport,
};

#[test]
fn threaded_matches_sequential_bytes() {
    let design = ExperimentDesign::desk(10_000, 50);
    let (cluster, _) = generate_cluster(&design, 3).unwrap();
    let mu = [0.01, 0.0, -0.01, 0.02, 0.0];
    let lam0 = [0.0; 5];
    let base = run_del(&cluster, &mu, &lam0, &DelConfig::default()).unwrap();
    for threads in [1, 2, 3, 8, 64] {
        let workers = make_workers(&cluster, &mu, &lam0, SolverOptions::default());
        let r =
            with_threaded_transport(workers, threads, |t| coordinate(t, &lam0, 2, 1e-12)).unwrap();
        assert_eq!(r.to_bytes(), base.to_bytes(), "threads {threads}");
    }
}

#[test]
fn threaded_errors_name_the_machine() {
    let design = ExperimentDesign::desk(400, 4);
    let (cluster, _) = generate_cluster(&design, 0).unwrap();
    let mu = [40.0; 5];
    let workers = make_workers(&cluster, &mu, &[0.0; 5], SolverOptions::default());
    let err =
        with_threaded_transport(workers, 2, |t| coordinate(t, &[0.0; 5], 2, 1e-12)).unwrap_err();
    assert!(
        matches!(
            err,
            del_core::Error::HullViolation {
                machine: Some(1),
                ..
            }
        ),
        "{err:?}"
    );
}

#[test]
fn recorded_run_replays_identically() {
    let design = ExperimentDesign::desk(2_000, 10);
    let (cluster, _) = generate_cluster(&design, 1).unwrap();
    let mu = [0.05; 5];
    let lam0 = [0.0; 5];
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("frames.bin");

    let workers = make_workers(&cluster, &mu, &lam0, SolverOptions::default());
    let live = with_threaded_transport(workers, 3, |t| {
        let mut rec = RecordingTransport::new(t, FileSink::create(&log).unwrap());
        let r = coordinate(&mut rec, &lam0, 3, 0.0).unwrap();
        rec.into_parts().1.finish().unwrap();
        r
    });

    let mut replay = ReplayTransport::open(&log).unwrap();
    assert_eq!(replay.machine_ids(), (1..=10).collect::<Vec<_>>());
    let again = coordinate(&mut replay, &lam0, 3, 0.0).unwrap();
    assert!(replay.is_exhausted());
    assert_eq!(again.to_bytes(), live.to_bytes());

    // a different starting point diverges from the log
    let mut replay = ReplayTransport::open(&log).unwrap();
    let err = coordinate(&mut replay, &[0.0; 5], 4, 0.0).unwrap_err();
    assert!(matches!(err, del_core::Error::Transport(_)));
}

#[test]
fn monte_carlo_report_is_independent_of_thread_count() {
    let mut design = ExperimentDesign::desk(4_000, 20);
    design.n_byzantine = 3;
    design.repetitions = 24;
    let sequential = del_core::datagen::monte_carlo(&design).unwrap();
    let base = monte_carlo_csv(&[(String::new(), sequential)]);
    for threads in [1, 2, 5] {
        let r = harness::monte_carlo(&design, threads).unwrap();
        assert_eq!(
            monte_carlo_csv(&[(String::new(), r)]),
            base,
            "threads {threads}"
        );
    }
}
