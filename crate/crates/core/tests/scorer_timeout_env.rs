use lightloop_core::scorer::{ExternalParams, TIMEOUT_ENV};

// Alone in its binary so the environment change cannot race other tests.
#[test]
fn env_overrides_timeout() {
    std::env::set_var(TIMEOUT_ENV, "1234");
    assert_eq!(ExternalParams::new("tcp://127.0.0.1:9", vec!["det".into()]).timeout_ms, 1234);
    std::env::set_var(TIMEOUT_ENV, "not a number");
    assert_eq!(ExternalParams::new("tcp://127.0.0.1:9", vec![]).timeout_ms, 30_000);
    std::env::remove_var(TIMEOUT_ENV);
}
