import numpy as np
import pytest

from mfgames.games.meeting import (
    ArrivalState,
    MeetingConfig,
    MeetingGame,
    actual_start,
    agent_cost,
    best_response_drift,
    generate_observations,
    run_neural,
    run_standard,
    simulate_neural,
    terminal_cost,
)
from mfgames.mfg import TrainingConfig, nash_gap, train


def test_actual_start_all_on_time():
    assert actual_start(np.array([14.0, 14.5, 13.0]), 15.0, 0.9) == 15.0


def test_actual_start_order_statistic():
    # quorum 0.5 of 4 agents -> 2nd order statistic; max(11, 12) = 12
    assert actual_start(np.array([10.0, 12.0, 14.0, 16.0]), 11.0, 0.5) == 12.0


def test_actual_start_full_quorum():
    tt = np.array([10.0, 12.0, 17.5])
    assert actual_start(tt, 11.0, 1.0) == 17.5
    assert actual_start(tt, 18.0, 1.0) == 18.0


def test_terminal_cost_cases():
    assert terminal_cost(15.0, 15.0, 15.0) == 0.0
    assert terminal_cost(16.0, 15.0, 15.0) == 2.0
    assert terminal_cost(14.0, 15.0, 15.5) == pytest.approx(1.5)


def test_terminal_cost_nonnegative_and_zero_only_at_start():
    rng = np.random.default_rng(0)
    for _ in range(200):
        tt, s = rng.uniform(10, 20, 2)
        ts = max(s, rng.uniform(10, 20))
        c = terminal_cost(tt, s, ts)
        assert c >= 0.0
        if c == 0.0:
            assert tt == s == ts


def test_cost_shift_equivariance():
    rng = np.random.default_rng(1)
    for _ in range(50):
        tt, s, shift = rng.uniform(-5, 5, 3)
        ts = s + abs(rng.normal())
        a = terminal_cost(tt, s, ts)
        b = terminal_cost(tt + shift, s + shift, ts + shift)
        assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_observations_statistics():
    means = []
    for seed in range(10):
        obs = generate_observations(n_groups=10, samples_per_group=10, seed=seed)
        assert obs.shape == (100,)
        assert np.all(np.isfinite(obs))
        means.append(obs.mean())
    # pooled mean within 3 standard errors of 15; group means have std 0.5
    se = np.sqrt((0.5**2 + 0.4**2) / (10 * 100))
    assert abs(np.mean(means) - 15.0) < 3 * se + 0.05


def test_observations_deterministic():
    a = generate_observations(seed=42)
    b = generate_observations(seed=42)
    assert np.array_equal(a, b)


def test_standard_start_never_before_schedule():
    cfg = MeetingConfig(n_agents=50, init_mean=15.0)
    for seed in range(3):
        for st in run_standard(cfg, seed=seed):
            assert actual_start(st.tau_tilde, cfg.scheduled, cfg.quorum) >= cfg.scheduled


def test_standard_degenerate_population_stays_degenerate():
    # all noise off and identical initial times: agents remain identical and
    # drift towards the cost minimum at the scheduled time
    cfg = MeetingConfig(n_agents=20, noise_std=0.0, sigma=0.0, init_std=0.0,
                        init_mean=12.0)
    states = run_standard(cfg, seed=0)
    for st in states:
        assert np.ptp(st.tau) == 0.0
    assert abs(states[-1].tau[0] - cfg.scheduled) < abs(states[0].tau[0] - cfg.scheduled)


def test_standard_distribution_narrows():
    ratios = []
    for seed in range(5):
        states = run_standard(MeetingConfig(n_agents=200), seed=seed)
        ratios.append(np.std(states[-1].tau_tilde) / np.std(states[0].tau_tilde))
    assert np.mean(ratios) < 0.25


def test_start_time_varies_across_seeds_with_diffusion():
    # init centred at the schedule puts the quorum statistic in the binding
    # regime, where the realized start time responds to the Brownian noise
    cfg = MeetingConfig(n_agents=100, init_mean=15.0, sigma=0.3)
    starts = []
    for seed in range(6):
        st = run_standard(cfg, seed=seed)[2]
        starts.append(actual_start(st.tau_tilde, cfg.scheduled, cfg.quorum))
    assert np.var(starts) > 0.0


def test_smoothing_zero_recovers_subgradient():
    assert best_response_drift(14.0, 15.0, 15.0, 1.0, 0.0) == 1.0
    assert best_response_drift(16.0, 15.0, 15.0, 1.0, 0.0) == -2.0
    assert best_response_drift(15.5, 15.0, 16.0, 1.0, 0.0) == 0.0


def test_neural_zeroed_nets_is_bitwise_standard():
    cfg = MeetingConfig(n_agents=12, sigma=0.0)
    game = MeetingGame(cfg, [generate_observations(seed=1)])
    for net in game.nets().values():
        net.zero_()
    neural = simulate_neural(cfg, game.nets(), seed=9)
    standard = run_standard(cfg, seed=9)
    for a, b in zip(neural, standard):
        assert np.array_equal(a.tau, b.tau)
        assert np.array_equal(a.tau_tilde, b.tau_tilde)


def test_neural_training_decreases_loss():
    cfg = MeetingConfig(n_agents=8)
    obs = [generate_observations(seed=k) for k in range(4)]
    training = TrainingConfig(epochs=8, games_per_epoch=4, seed=0)
    _, _, history = run_neural(cfg, obs, training)
    totals = [h.total for h in history]
    q = len(totals) // 4
    assert np.mean(totals[-q:]) < np.mean(totals[:q])


def test_neural_zero_weight_stays_near_standard():
    # with the data term switched off, the trained game should stay within the
    # untrained residual's reach of the predefined dynamics
    cfg = MeetingConfig(n_agents=8)
    obs = [generate_observations(seed=3)]
    training = TrainingConfig(epochs=2, games_per_epoch=2, seed=1, data_loss_weight=0.0)
    game, nets, _ = run_neural(cfg, obs, training)
    neural = simulate_neural(cfg, nets, seed=5)
    standard = run_standard(cfg, seed=5)
    assert abs(neural[-1].tau.mean() - standard[-1].tau.mean()) < 1.0


def test_nash_gap_shrinks_after_convergence():
    cfg = MeetingConfig(n_agents=40)
    candidates = list(np.linspace(11.0, 17.0, 13))

    def cost(states, i):
        return agent_cost(states, i, cfg)

    states = run_standard(cfg, seed=2)
    gap_init = max(nash_gap(cost, states[0].tau_tilde, i, candidates) for i in range(5))
    gap_final = max(nash_gap(cost, states[-1].tau_tilde, i, candidates) for i in range(5))
    assert gap_final <= gap_init
    assert gap_init > 0.0
