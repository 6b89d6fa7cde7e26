use std::time::Instant;

use realchart::bots::BotKind;
use realchart::engine::{ContestConfig, Mode};
use realchart::series::ChartWindow;
use realchart::stats::binomial_tail;
use realchart::synth::SyntheticSpec;
use realchart_server::{simulate, SimulationConfig};

#[test]
fn coin_contest_is_deterministic() {
    let cfg = SimulationConfig::new(BotKind::Coin, 26, 35, 7);
    let t = Instant::now();
    let a = simulate(&cfg, None, None).unwrap();
    eprintln!("one contest: {:?}", t.elapsed());
    let b = simulate(&cfg, None, None).unwrap();
    assert_eq!(a, b);
    let r = a.result.unwrap();
    assert_eq!(r.subjects, 26);
    assert_eq!(r.trials, 26 * 35);
}

fn tick_config(bot: BotKind, sessions: usize, data: SyntheticSpec, seed: u64) -> SimulationConfig {
    let window = ChartWindow::new(60, 60).unwrap();
    let mut cfg = SimulationConfig::new(bot, sessions, 35, seed);
    cfg.contest = ContestConfig::new("t", "Kite", Mode::Tick, window).with_charts(35);
    cfg.data = Some(data);
    cfg
}

/// Two-sided exact binomial p-value under p = 1/2.
fn two_sided(n: u64, k: u64) -> f64 {
    let hi = k.max(n - k);
    (2.0 * binomial_tail(n, hi).unwrap()).min(1.0)
}

#[test]
fn learning_bot_finds_nothing_in_iid_data() {
    let sessions = 290;
    let data = SyntheticSpec::RandomWalk {
        len: sessions * 35 * 60,
        sigma: 1.0,
    };
    let r = simulate(&tick_config(BotKind::Learning, sessions, data, 11), None, None).unwrap();
    let w = r.post_warmup;
    assert!(w.trials >= 8_700);
    let p = two_sided(w.trials, w.correct);
    assert!(p > 0.001, "accuracy {:?} on iid data, p = {p}", w.accuracy);
}

#[test]
fn learning_bot_detects_weak_autocorrelation() {
    let sessions = 60;
    let data = SyntheticSpec::Ar1 {
        len: sessions * 35 * 60,
        phi: 0.3,
        sigma: 1.0,
    };
    let r = simulate(&tick_config(BotKind::Learning, sessions, data, 12), None, None).unwrap();
    assert!(r.post_warmup.accuracy.unwrap() > 0.6, "{:?}", r.post_warmup);
}

#[test]
fn coin_accuracy_is_near_half() {
    let r = simulate(&SimulationConfig::new(BotKind::Coin, 100, 35, 13), None, None).unwrap();
    let result = r.result.unwrap();
    assert_eq!(result.trials, 3500);
    assert!(two_sided(result.trials, result.correct_guesses) > 0.001);
    assert_eq!(result.p_value, binomial_tail(3500, result.correct_guesses).unwrap());
}

#[test]
fn absent_subjects_are_all_excluded() {
    let r = simulate(&SimulationConfig::new(BotKind::Absent, 4, 10, 14), None, None).unwrap();
    assert!(r.result.is_none());
    assert_eq!(r.excluded.len(), 4);
    assert_eq!(r.post_warmup.trials, 4 * 5);
    assert_eq!(r.post_warmup.correct, 0);
}

#[test]
fn seed_changes_the_run() {
    let a = simulate(&SimulationConfig::new(BotKind::Coin, 5, 20, 1), None, None).unwrap();
    let b = simulate(&SimulationConfig::new(BotKind::Coin, 5, 20, 2), None, None).unwrap();
    assert_ne!(a.result.unwrap().histogram, b.result.unwrap().histogram);
}

#[test]
fn tick_pool_runs_out() {
    let data = SyntheticSpec::RandomWalk {
        len: 3 * 35 * 60,
        sigma: 1.0,
    };
    let err = simulate(&tick_config(BotKind::Coin, 4, data, 15), None, None).unwrap_err();
    assert!(err.to_string().contains("session 3"), "{err}");
}
