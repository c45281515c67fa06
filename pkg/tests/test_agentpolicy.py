import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evonav.agentpolicy import (
    N_FEATURES,
    FixedSource,
    LearnedPolicy,
    PolicyParams,
    TrainerConfig,
    act_learned,
    act_scripted,
    centered_ranks,
    features,
    train_policy,
)
from evonav.envs import EnvConfig
from evonav.errors import Divergence, NonFiniteParams
from evonav.simcore import PolicyInput
from evonav.worldmodel import AgentState

TINY = TrainerConfig(generations=2, pairs=2, episodes=2, time_limit=10.0, n_beams=36)
EASY = EnvConfig(ped_count=2)


def inp(ego_xy=(0.0, 0.0), goal=(5.0, 0.0), heading=0.0, others=()):
    ego = AgentState(ego_xy[0], ego_xy[1], radius=0.2, gx=goal[0], gy=goal[1], v_pref=1.0, heading=heading)
    return PolicyInput(ego, np.array(others, dtype=float).reshape(-1, 5))


def test_free_path_heads_to_goal():
    cmd = act_scripted(inp(goal=(3.0, 4.0)))
    assert cmd.speed == 1.0
    assert cmd.heading == pytest.approx(math.atan2(4, 3))


def test_head_on_breaks_right():
    cmd = act_scripted(inp(others=[(1.0, 0.0, -1.0, 0.0, 0.3)]))
    assert cmd.heading < 0


def test_crossing_from_left_turns_away():
    # agent ahead-left moving right, predicted to pass just in front of the ego
    cmd = act_scripted(inp(others=[(1.0, 0.8, 0.0, -0.6, 0.3)]))
    assert cmd.heading < 0 and cmd.speed < 1.0


@given(st.floats(-math.pi, math.pi), st.floats(-2, 2), st.floats(-2, 2), st.floats(-1, 1), st.floats(-1, 1))
def test_scripted_rotation_equivariance(theta, ox, oy, vx, vy):
    c, s = math.cos(theta), math.sin(theta)

    def rot(x, y):
        return c * x - s * y, s * x + c * y

    a = act_scripted(inp(goal=(4.0, 1.0), others=[(ox, oy, vx, vy, 0.3)]))
    gx, gy = rot(4.0, 1.0)
    px, py = rot(ox, oy)
    qx, qy = rot(vx, vy)
    b = act_scripted(inp(goal=(gx, gy), heading=theta, others=[(px, py, qx, qy, 0.3)]))
    assert b.speed == pytest.approx(a.speed, abs=1e-9)
    assert math.remainder(b.heading - a.heading - theta, 2 * math.pi) == pytest.approx(0.0, abs=1e-7)


def test_zero_params_centered():
    cmd = act_learned(PolicyParams.zeros(), inp(heading=0.4))
    assert cmd.speed == pytest.approx(0.5)
    assert cmd.heading == pytest.approx(0.4)


def test_learned_is_pure():
    p = PolicyParams(np.random.default_rng(0).normal(size=2 * N_FEATURES))
    x = inp(others=[(1.0, 1.0, 0.1, 0.0, 0.3)])
    assert act_learned(p, x) == act_learned(p, x)


def test_output_bounds():
    p = PolicyParams(np.full(2 * N_FEATURES, 1e3))
    cmd = act_learned(p, inp(heading=0.0))
    assert 0 <= cmd.speed <= 1.0 and abs(cmd.heading) <= math.pi / 4 + 1e-12


def test_features_shape_and_padding():
    f = features(inp(others=[(1.0, 0.0, 0.0, 0.0, 0.3)]))
    assert f.shape == (N_FEATURES,)
    assert f[0] == 1.0 and f[3] == pytest.approx(1.0)  # goal dead ahead
    assert f[5] == pytest.approx(0.2) and np.all(f[10:] == 0)


def test_non_finite_params_rejected():
    bad = PolicyParams.zeros()
    bad.theta[3] = np.nan
    with pytest.raises(NonFiniteParams):
        LearnedPolicy(bad)
    with pytest.raises(NonFiniteParams):
        train_policy(bad, FixedSource(EASY), TINY)


def test_params_file_round_trip(tmp_path):
    p = PolicyParams(np.arange(2 * N_FEATURES) / 7.0, metadata={"seed": 3})
    p.save(tmp_path / "p.txt")
    q = PolicyParams.load(tmp_path / "p.txt")
    assert np.array_equal(p.theta, q.theta) and q.metadata == {"seed": 3}
    (tmp_path / "bad.txt").write_text("# other-v9 {}\n0\n")
    with pytest.raises(ValueError):
        PolicyParams.load(tmp_path / "bad.txt")


def test_centered_ranks_ties():
    assert centered_ranks(np.array([1.0, 1.0, 1.0])).tolist() == [0.0, 0.0, 0.0]
    assert centered_ranks(np.array([3.0, 1.0, 2.0])).tolist() == [0.5, -0.5, 0.0]


def test_zero_budget_returns_initial():
    init = PolicyParams(np.linspace(-1, 1, 2 * N_FEATURES))
    out, log = train_policy(init, FixedSource(EASY), TrainerConfig(generations=0))
    assert np.array_equal(out.theta, init.theta) and log == []


def test_training_is_deterministic_and_resumable(tmp_path):
    a, log_a = train_policy(PolicyParams.zeros(), FixedSource(EASY), TINY, seed=5)
    b, _ = train_policy(PolicyParams.zeros(), FixedSource(EASY), TINY, seed=5)
    assert np.array_equal(a.theta, b.theta)
    assert not np.array_equal(a.theta, PolicyParams.zeros().theta)
    half, _ = train_policy(PolicyParams.zeros(), FixedSource(EASY),
                           TrainerConfig(**{**TINY.__dict__, "generations": 1}), seed=5)
    c, _ = train_policy(half, FixedSource(EASY), TINY, seed=5, start_generation=1)
    assert np.array_equal(a.theta, c.theta)
    assert [r["generation"] for r in log_a] == [0, 1]


def test_divergence_detected():
    cfg = TrainerConfig(generations=1, pairs=2, episodes=1, time_limit=1.0, n_beams=36, learning_rate=math.inf)
    with pytest.raises(Divergence):
        train_policy(PolicyParams.zeros(), FixedSource(EASY), cfg)


def test_source_receives_centre_returns():
    class Spy(FixedSource):
        def __init__(self, cfg):
            super().__init__(cfg)
            self.got = []

        def report(self, scores):
            self.got.append(list(scores))

    spy = Spy(EASY)
    train_policy(PolicyParams.zeros(), spy, TINY)
    assert len(spy.got) == 2 and all(len(g) == 2 and all(-1 <= v <= 1 for v in g) for g in spy.got)
