import math

import numpy as np
import pytest

from atg.policynet import (
    CheckpointError,
    NetConfig,
    NetParams,
    NumericFault,
    PolicyOut,
    RecurrentState,
    Rollout,
    entropy,
    forward,
    init_params,
    load_checkpoint,
    logit_input_gradient,
    loss_and_grads,
    loss_value,
    sample_action,
    save_checkpoint,
)
from atg.world import Action

REDUCED = NetConfig.reduced()


def random_rollout(config: NetConfig, rng: np.random.Generator, steps: int = 3, terminal: bool = False) -> Rollout:
    # centered frames keep the small test net's ReLU units alive on both sides
    frames = rng.random((steps, config.frame_hw, config.frame_hw, config.in_channels)) - 0.5
    return Rollout(
        frames=frames,
        actions=rng.integers(0, config.num_actions, steps),
        rewards=rng.normal(size=steps),
        values=np.zeros(steps),
        initial_recurrent=RecurrentState(
            rng.normal(scale=0.5, size=config.lstm_units), rng.normal(scale=0.5, size=config.lstm_units)
        ),
        bootstrap_value=0.0 if terminal else float(rng.normal()),
        terminal=terminal,
    )


def finite_difference_grads(params: NetParams, rollout: Rollout, returns, beta: float, step: float = 1e-5):
    """Central差-free oracle: perturb every scalar parameter and difference
    the surrogate loss with the advantages frozen at the base parameters."""
    base = loss_and_grads(params, rollout, returns, beta)
    cache_values = None
    # freeze advantages at the unperturbed parameters
    from atg.policynet import _forward_sequence  # test-only access

    cache = _forward_sequence(params, rollout.frames, rollout.initial_recurrent.h, rollout.initial_recurrent.c)
    frozen_adv = np.asarray(returns, dtype=np.float64) - cache["values"].astype(np.float64)

    fd = {}
    for name, arr in params.items():
        out = np.zeros_like(arr, dtype=np.float64)
        flat = arr.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_value(params, rollout, returns, beta, advantages=frozen_adv)
            flat[i] = orig - step
            down = loss_value(params, rollout, returns, beta, advantages=frozen_adv)
            flat[i] = orig
            out.ravel()[i] = (up - down) / (2 * step)
        fd[name] = out
    return fd


def max_rel_error(analytic: dict, numeric: dict) -> float:
    worst = 0.0
    for name in analytic:
        a = analytic[name].astype(np.float64)
        f = numeric[name]
        scale = max(np.abs(a).max(), np.abs(f).max(), 1e-8)
        worst = max(worst, float(np.abs(a - f).max() / scale))
    return worst


class TestForward:
    def test_feature_map_shapes(self):
        cfg = NetConfig()
        assert cfg.conv1_hw == 20
        assert cfg.conv2_hw == 9
        assert cfg.flat_units == 9 * 9 * 32

    def test_parameter_count(self):
        # frozen from independent shape arithmetic over the architecture
        params = init_params(0)
        assert params.param_count() == 1_202_231

    def test_zero_params_give_uniform_policy(self):
        params = init_params(0)
        for _, arr in params.items():
            arr[:] = 0
        frame = np.random.default_rng(0).random((84, 84, 3), dtype=np.float32)
        out, _ = forward(params, frame, RecurrentState.zeros(params.config))
        assert np.allclose(out.probs, 1.0 / 6.0, atol=1e-9)
        assert out.value == 0.0

    def test_probs_normalized(self):
        params = init_params(3)
        rng = np.random.default_rng(1)
        rstate = RecurrentState.zeros(params.config)
        for _ in range(5):
            out, rstate = forward(params, rng.random((84, 84, 3), dtype=np.float32), rstate)
            assert abs(out.probs.sum() - 1.0) < 1e-6
            assert (out.probs >= 0).all()

    def test_softmax_shift_invariance(self):
        from atg.policynet import _softmax

        rng = np.random.default_rng(2)
        z = rng.normal(size=6)
        assert np.allclose(_softmax(z), _softmax(z + 123.456), atol=1e-9)

    def test_forward_is_pure(self):
        params = init_params(1, REDUCED, dtype=np.float64)
        rng = np.random.default_rng(4)
        frame = rng.random((12, 12, 3))
        frame_copy = frame.copy()
        rstate = RecurrentState(rng.normal(size=8), rng.normal(size=8))
        h_copy, c_copy = rstate.h.copy(), rstate.c.copy()
        out1, new1 = forward(params, frame, rstate)
        out2, new2 = forward(params, frame, rstate)
        assert np.array_equal(frame, frame_copy)
        assert np.array_equal(rstate.h, h_copy) and np.array_equal(rstate.c, c_copy)
        assert np.array_equal(out1.probs, out2.probs) and out1.value == out2.value
        assert np.array_equal(new1.h, new2.h) and np.array_equal(new1.c, new2.c)

    def test_non_finite_input_reports_layer(self):
        params = init_params(1, REDUCED, dtype=np.float64)
        frame = np.full((12, 12, 3), np.nan)
        with pytest.raises(NumericFault):
            forward(params, frame, RecurrentState.zeros(REDUCED, dtype=np.float64))


class TestInit:
    def test_deterministic(self):
        a = init_params(99)
        b = init_params(99)
        for (_, x), (_, y) in zip(a.items(), b.items()):
            assert np.array_equal(x, y)

    def test_fan_in_bounds_and_forget_bias(self):
        params = init_params(5)
        bound1 = 1.0 / math.sqrt(8 * 8 * 3)
        assert np.abs(params.conv1_w).max() <= bound1
        assert np.isfinite(params.fc_w).all()
        lu = params.config.lstm_units
        assert (params.lstm_b[lu : 2 * lu] == 1.0).all()
        assert (params.lstm_b[:lu] == 0.0).all()

    def test_unknown_scheme_rejected(self):
        with pytest.raises(ValueError):
            init_params(0, scheme="orthogonal")


class TestSampling:
    def test_one_hot(self):
        probs = np.zeros(6)
        probs[3] = 1.0
        for seed in range(10):
            assert sample_action(probs, seed) == Action.TURN_RIGHT_MOVE

    def test_same_seed_same_action(self):
        probs = np.full(6, 1.0 / 6.0)
        assert sample_action(probs, 7) == sample_action(probs, 7)

    def test_uniform_frequencies_within_5_sigma(self):
        # binomial bound computed beforehand: mean 10000, 5*sigma = 456.44
        rng = np.random.default_rng(0)
        probs = np.full(6, 1.0 / 6.0)
        counts = np.zeros(6)
        for _ in range(60_000):
            counts[sample_action(probs, rng)] += 1
        assert (np.abs(counts - 10_000.0) < 456.44).all()

    def test_bad_distribution_rejected(self):
        with pytest.raises(ValueError):
            sample_action(np.full(6, 0.5), 0)


class TestEntropy:
    def test_uniform(self):
        assert entropy(np.full(6, 1.0 / 6.0)) == pytest.approx(math.log(6.0), abs=1e-12)

    def test_one_hot(self):
        p = np.zeros(6)
        p[2] = 1.0
        assert entropy(p) == 0.0

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        p = rng.random(6)
        p /= p.sum()
        assert entropy(p) == pytest.approx(entropy(p[::-1].copy()), abs=1e-12)


class TestGradients:
    def test_finite_difference_agreement(self):
        rng = np.random.default_rng(2024)
        for case in range(3):
            params = init_params(rng, REDUCED, dtype=np.float64)
            rollout = random_rollout(REDUCED, rng, steps=3)
            returns = rng.normal(size=3)
            grads, _ = loss_and_grads(params, rollout, returns, beta=0.01)
            fd = finite_difference_grads(params, rollout, returns, beta=0.01)
            assert max_rel_error(grads, fd) < 1e-4, f"case {case}"

    def test_two_step_window_unrolled(self):
        rng = np.random.default_rng(77)
        params = init_params(rng, REDUCED, dtype=np.float64)
        rollout = random_rollout(REDUCED, rng, steps=2)
        returns = rng.normal(size=2)
        grads, _ = loss_and_grads(params, rollout, returns, beta=0.01)
        fd = finite_difference_grads(params, rollout, returns, beta=0.01)
        assert max_rel_error(grads, fd) < 1e-4

    def test_zero_advantage_leaves_only_entropy(self):
        rng = np.random.default_rng(11)
        params = init_params(rng, REDUCED, dtype=np.float64)
        rollout = random_rollout(REDUCED, rng, steps=4)
        from atg.policynet import _forward_sequence

        cache = _forward_sequence(params, rollout.frames, rollout.initial_recurrent.h, rollout.initial_recurrent.c)
        returns = cache["values"].astype(np.float64).copy()  # advantage exactly zero

        grads_b0, diag_b0 = loss_and_grads(params, rollout, returns, beta=0.0)
        for name, arr in grads_b0.items():
            assert np.abs(arr).max() == 0.0, name
        assert diag_b0["policy_loss"] == 0.0
        assert diag_b0["value_loss"] == 0.0

        grads_b, _ = loss_and_grads(params, rollout, returns, beta=0.01)
        assert any(np.abs(arr).max() > 0 for arr in grads_b.values())

    def test_entropy_term_is_linear_in_beta(self):
        rng = np.random.default_rng(13)
        params = init_params(rng, REDUCED, dtype=np.float64)
        rollout = random_rollout(REDUCED, rng, steps=3)
        returns = rng.normal(size=3)
        g0, _ = loss_and_grads(params, rollout, returns, beta=0.0)
        g1, _ = loss_and_grads(params, rollout, returns, beta=0.01)
        g2, _ = loss_and_grads(params, rollout, returns, beta=0.02)
        for name in g0:
            lhs = g2[name] - g1[name]
            rhs = g1[name] - g0[name]
            assert np.allclose(lhs, rhs, atol=1e-10), name

    def test_input_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        params = init_params(rng, REDUCED, dtype=np.float64)
        frame = rng.random((12, 12, 3)) - 0.5
        rstate = RecurrentState(rng.normal(size=8), rng.normal(size=8))
        action_index = 2
        grad = logit_input_gradient(params, frame, rstate, action_index)
        assert grad.shape == frame.shape

        def logit(f):
            out, _ = forward(params, f, rstate)
            return out.logits[action_index]

        step = 1e-6
        for _ in range(40):
            i, j, k = rng.integers(0, 12), rng.integers(0, 12), rng.integers(0, 3)
            up = frame.copy()
            up[i, j, k] += step
            down = frame.copy()
            down[i, j, k] -= step
            fd = (logit(up) - logit(down)) / (2 * step)
            assert grad[i, j, k] == pytest.approx(fd, abs=1e-6, rel=1e-4)

    def test_misaligned_returns_rejected(self):
        rng = np.random.default_rng(19)
        params = init_params(rng, REDUCED, dtype=np.float64)
        rollout = random_rollout(REDUCED, rng, steps=3)
        with pytest.raises(ValueError):
            loss_and_grads(params, rollout, np.zeros(5), beta=0.01)


class TestRolloutInvariants:
    def test_terminal_requires_zero_bootstrap(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            Rollout(
                frames=rng.random((2, 12, 12, 3)),
                actions=[0, 1],
                rewards=[0.0, 0.0],
                values=[0.0, 0.0],
                initial_recurrent=RecurrentState.zeros(REDUCED, dtype=np.float64),
                bootstrap_value=1.0,
                terminal=True,
            )

    def test_alignment_enforced(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            Rollout(
                frames=rng.random((2, 12, 12, 3)),
                actions=[0, 1, 2],
                rewards=[0.0, 0.0],
                values=[0.0, 0.0],
                initial_recurrent=RecurrentState.zeros(REDUCED, dtype=np.float64),
                bootstrap_value=0.0,
                terminal=False,
            )


class TestCheckpoint:
    def test_byte_exact_round_trip(self, tmp_path):
        params = init_params(42, REDUCED)
        path_a = tmp_path / "a.ckpt"
        path_b = tmp_path / "b.ckpt"
        save_checkpoint(path_a, params)
        loaded = load_checkpoint(path_a)
        save_checkpoint(path_b, loaded)
        assert path_a.read_bytes() == path_b.read_bytes()
        for (_, x), (_, y) in zip(params.items(), loaded.items()):
            assert np.array_equal(x.astype(np.float32), y)

    def test_architecture_mismatch(self, tmp_path):
        params = init_params(0, REDUCED)
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, params)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, expected_config=NetConfig())

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint at all")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        params = init_params(0, REDUCED)
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, params)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 17])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
