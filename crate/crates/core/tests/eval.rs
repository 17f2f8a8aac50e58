mod common;

use std::sync::Arc;

use vla_rig::eval::{run_eval, run_eval_with, EndpointSpec, EvalPlan, PolicySpec, RolloutRecord};
use vla_rig::policy::DecodeMode;
use vla_rig::serve::{serve, LatencyProfile, LocalBackend};
use vla_rig::simlab::{
    ControllerMode, ExpertEndpoint, LocalPolicyEndpoint, PolicyEndpoint, SimConfig,
};

use common::{random_policy, simlab_codec};

fn plan(n_trials: usize, policies: Vec<PolicySpec>) -> EvalPlan {
    EvalPlan {
        task_name: "pick-place".into(),
        n_trials,
        master_seed: 42,
        mode: ControllerMode::blocking(5.0),
        policies,
        sim: SimConfig::default(),
        instruction: None,
    }
}

fn spec(name: &str, endpoint: EndpointSpec) -> PolicySpec {
    PolicySpec {
        name: name.into(),
        endpoint,
    }
}

fn records_of<'a>(records: &'a [RolloutRecord], name: &str) -> Vec<&'a RolloutRecord> {
    records.iter().filter(|r| r.policy == name).collect()
}

#[test]
fn expert_scores_perfectly() {
    let report = run_eval(&plan(170, vec![spec("expert", EndpointSpec::Expert)])).unwrap();
    let s = report.summary("expert").unwrap();
    assert_eq!((s.mean, s.stderr, s.n), (1.0, 0.0, 170));
    assert!(!report.any_invalid());
}

#[test]
fn arms_share_initial_states() {
    let p = plan(
        10,
        vec![
            spec("expert", EndpointSpec::Expert),
            spec("random", EndpointSpec::Expert),
        ],
    );
    let codec = simlab_codec();
    let mut endpoints: Vec<(String, Box<dyn PolicyEndpoint>)> = vec![
        ("expert".into(), Box::new(ExpertEndpoint::default())),
        (
            "random".into(),
            Box::new(LocalPolicyEndpoint {
                policy: random_policy(1, DecodeMode::Greedy),
                codec,
            }),
        ),
    ];
    let report = run_eval_with(&p, &mut endpoints).unwrap();
    let a = records_of(&report.records, "expert");
    let b = records_of(&report.records, "random");
    assert_eq!(a.len(), 10);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.trial_index, y.trial_index);
        assert_eq!(x.seed, y.seed);
        assert_eq!(x.initial, y.initial);
    }
    assert_eq!(report.scores.len(), 10);
    assert!(report
        .scores
        .iter()
        .all(|row| row.len() == 2 && row[0] == 1.0));
}

#[test]
fn local_files_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let policy_path = dir.path().join("policy.json");
    let codec_path = dir.path().join("codec.json");
    random_policy(2, DecodeMode::Greedy)
        .save(&policy_path)
        .unwrap();
    simlab_codec().save(&codec_path).unwrap();
    let local = |mode| EndpointSpec::Local {
        policy: policy_path.clone(),
        codec: codec_path.clone(),
        decode_mode: Some(mode),
    };
    let p = plan(
        8,
        vec![
            spec("greedy", local(DecodeMode::Greedy)),
            spec("dynamic", local(DecodeMode::Dynamic)),
        ],
    );
    let first = run_eval(&p).unwrap();
    let second = run_eval(&p).unwrap();
    assert_eq!(first.scores, second.scores);
    assert!(!first.any_invalid());
    assert!(first.records.iter().all(|r| r.answered));
}

#[test]
fn unreachable_endpoint_is_invalid_but_run_continues() {
    let dead = {
        let server = serve(
            Arc::new(
                LocalBackend::new(random_policy(0, DecodeMode::Greedy), simlab_codec()).unwrap(),
            ),
            "127.0.0.1:0",
            LatencyProfile::none(),
        )
        .unwrap();
        server.local_addr()
    };
    let p = plan(
        5,
        vec![
            spec("expert", EndpointSpec::Expert),
            spec(
                "down",
                EndpointSpec::Remote {
                    addr: dead.to_string(),
                    timeout_ms: Some(500),
                },
            ),
        ],
    );
    let report = run_eval(&p).unwrap();
    assert!(report.any_invalid());
    let down = report.summary("down").unwrap();
    assert!(down.invalid);
    assert_eq!((down.mean, down.n), (0.0, 5));
    assert!(records_of(&report.records, "down")
        .iter()
        .all(|r| r.score == 0.0 && r.reason.contains("unavailable")));
    assert_eq!(report.summary("expert").unwrap().mean, 1.0);
}

#[test]
fn remote_and_local_arms_agree() {
    let policy = random_policy(4, DecodeMode::Dynamic);
    let codec = simlab_codec();
    let server = serve(
        Arc::new(LocalBackend::new(policy.clone(), codec.clone()).unwrap()),
        "127.0.0.1:0",
        LatencyProfile::none(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let policy_path = dir.path().join("policy.json");
    let codec_path = dir.path().join("codec.json");
    policy.save(&policy_path).unwrap();
    codec.save(&codec_path).unwrap();
    let p = plan(
        6,
        vec![
            spec(
                "remote",
                EndpointSpec::Remote {
                    addr: server.local_addr().to_string(),
                    timeout_ms: None,
                },
            ),
            spec(
                "local",
                EndpointSpec::Local {
                    policy: policy_path,
                    codec: codec_path,
                    decode_mode: None,
                },
            ),
        ],
    );
    let report = run_eval(&p).unwrap();
    assert!(report.scores.iter().all(|row| row[0] == row[1]));
}

#[test]
fn mismatched_endpoints_rejected() {
    let p = plan(1, vec![spec("a", EndpointSpec::Expert)]);
    let mut endpoints: Vec<(String, Box<dyn PolicyEndpoint>)> =
        vec![("b".into(), Box::new(ExpertEndpoint::default()))];
    assert!(run_eval_with(&p, &mut endpoints).is_err());
}
