import math

import numpy as np
import pytest

from sceneintent.exceptions import DataFormatError, NonFiniteGradientError, ShapeMismatchError

from .gradcheck import grad_check
from .layers import (
    LstmCellParams,
    init_linear,
    init_lstm,
    linear_backward,
    linear_forward,
    lstm_step,
    lstm_step_backward,
    lstm_step_cached,
    tensor2,
)
from .losses import bce_loss, bce_with_logits
from .optim import AdamState, adam_update
from .serializers import decode_params, encode_params, read_params, write_params


def squared_loss(target):
    def loss(output):
        diff = output - target
        return 0.5 * float(np.sum(diff ** 2)), diff
    return loss


def lstm_cell(rng, input_size, hidden_size, prefix='cell'):
    params = {}
    init_lstm(params, rng, prefix, input_size, hidden_size)
    return params, LstmCellParams.view(params, prefix)


class TestLstmStep:
    def test_zero_params_give_zero_state(self):
        params = {f'cell.{name}': np.zeros((3, 5)) for name in ('W_i', 'W_f', 'W_g', 'W_o')}
        params.update({f'cell.{name}': np.zeros(3) for name in ('b_i', 'b_f', 'b_g', 'b_o')})
        h, c = lstm_step(LstmCellParams.view(params, 'cell'), np.array([4.0, -2.0]), np.zeros(3), np.zeros(3))
        assert not h.any() and not c.any()

    def test_hidden_state_is_bounded(self, rng):
        _, cell = lstm_cell(rng, 4, 6)
        for _ in range(20):
            x = rng.normal(0, 50, size=(3, 4))
            h, _ = lstm_step(cell, x, rng.normal(size=(3, 6)), rng.normal(0, 10, size=(3, 6)))
            assert np.all(np.abs(h) < 1.0)

    def test_unit_weights_by_hand(self):
        params = {f'cell.{name}': np.ones((1, 2)) for name in ('W_i', 'W_f', 'W_g', 'W_o')}
        params.update({f'cell.{name}': np.zeros(1) for name in ('b_i', 'b_f', 'b_g', 'b_o')})
        h, c = lstm_step(LstmCellParams.view(params, 'cell'), np.array([1.0]), np.zeros(1), np.zeros(1))
        gate = 1.0 / (1.0 + math.exp(-1.0))
        expected_c = gate * math.tanh(1.0)
        assert c[0] == pytest.approx(expected_c, abs=1e-15)
        assert h[0] == pytest.approx(gate * math.tanh(expected_c), abs=1e-15)

    def test_shape_mismatch_names_dimension(self, rng):
        _, cell = lstm_cell(rng, 3, 4)
        with pytest.raises(ShapeMismatchError, match='input'):
            lstm_step(cell, np.zeros(2), np.zeros(4), np.zeros(4))
        with pytest.raises(ShapeMismatchError, match='h_prev'):
            lstm_step(cell, np.zeros(3), np.zeros(5), np.zeros(4))

    def test_forget_bias_starts_at_one(self, rng):
        params, cell = lstm_cell(rng, 2, 3)
        np.testing.assert_array_equal(params['cell.b_f'], np.ones(3))
        assert cell.input_size == 2 and cell.hidden_size == 3
        bound = 1.0 / math.sqrt(5)
        assert np.all(np.abs(params['cell.W_g']) <= bound)


class TestLosses:
    def test_half_against_one(self):
        assert bce_loss(0.5, 1.0) == pytest.approx(math.log(2), abs=1e-6)

    def test_clamped_certainty(self):
        assert bce_loss(1.0, 1.0) == pytest.approx(0.0, abs=1e-6)
        assert math.isfinite(bce_loss(0.0, 1.0))

    def test_soft_label(self):
        expected = -(0.3 * math.log(0.7) + 0.7 * math.log(0.3))
        assert bce_loss(0.7, 0.3) == pytest.approx(expected, abs=1e-12)
        assert bce_loss(0.7, 0.3) == pytest.approx(0.94981, abs=1e-4)

    def test_logit_gradient(self, rng):
        labels = rng.uniform(0, 1, size=(6, 1))

        def forward(params, _):
            return params['z'], lambda d: {'z': d}

        def loss(z):
            return bce_with_logits(z, labels)

        assert grad_check(forward, {'z': rng.normal(size=(6, 1))}, None, loss) < 1e-6


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = {'w': np.array([1.0, -2.0])}
        state = AdamState.create(params)
        new, state = adam_update(state, params, {'w': np.zeros(2)})
        np.testing.assert_array_equal(new['w'], params['w'])
        assert state.step == 1

    def test_first_step_size(self):
        params = {'w': np.array(3.0)}
        new, _ = adam_update(AdamState.create(params, learning_rate=0.1), params, {'w': np.array(1.0)})
        assert float(new['w'] - params['w']) == pytest.approx(-0.1 / (1.0 + 1e-8), abs=1e-12)

    def test_first_step_direction(self, rng):
        for grad in rng.normal(0, 100, size=10):
            params = {'w': np.array(0.0)}
            new, _ = adam_update(AdamState.create(params, learning_rate=0.05), params, {'w': np.array(grad)})
            assert float(new['w']) == pytest.approx(-np.sign(grad) * 0.05, rel=1e-6)

    def test_repeated_gradients_converge_to_learning_rate(self):
        params = {'w': np.array(0.0)}
        state = AdamState.create(params, learning_rate=0.01)
        deltas = []
        for _ in range(2000):
            new, state = adam_update(state, params, {'w': np.array(0.3)})
            deltas.append(float(params['w'] - new['w']))
            params = new
        assert deltas[-1] == pytest.approx(0.01, rel=1e-4)

    def test_non_finite_gradient(self):
        params = {'w': np.zeros(2)}
        with pytest.raises(NonFiniteGradientError):
            adam_update(AdamState.create(params), params, {'w': np.array([0.0, np.nan])})

    def test_inputs_are_not_modified(self):
        params = {'w': np.ones(3)}
        state = AdamState.create(params)
        adam_update(state, params, {'w': np.ones(3)})
        np.testing.assert_array_equal(params['w'], np.ones(3))
        assert state.step == 0 and not state.m['w'].any()


class TestGradCheck:
    def test_linear_layer(self, rng):
        params = {}
        init_linear(params, rng, 'fc', 4, 3)
        x = rng.normal(size=(5, 4))

        def forward(p, inputs):
            return linear_forward(p, 'fc', inputs), lambda d: _linear_grads(p, inputs, d)

        assert grad_check(forward, params, x, squared_loss(rng.normal(size=(5, 3)))) < 1e-6

    def test_single_lstm_step(self, rng):
        params, _ = lstm_cell(rng, 3, 4)
        x = rng.normal(size=(2, 3))
        state = (rng.normal(size=(2, 4)), rng.normal(size=(2, 4)))
        error = grad_check(_lstm_forward(x.shape[0], state), params, [x], squared_loss(rng.normal(size=(2, 4))))
        assert error < 1e-4

    def test_backward_matches_differences_over_seeds(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            input_size, hidden_size, batch = rng.integers(1, 5, size=3)
            params, _ = lstm_cell(rng, int(input_size), int(hidden_size))
            xs = [rng.normal(size=(batch, input_size)) for _ in range(3)]
            state = (np.zeros((batch, hidden_size)), np.zeros((batch, hidden_size)))
            target = rng.normal(size=(batch, hidden_size))
            assert grad_check(_lstm_forward(batch, state), params, xs, squared_loss(target)) < 1e-4

    def test_detects_wrong_gradient(self, rng):
        params = {'w': rng.normal(size=3)}

        def forward(p, _):
            return p['w'] ** 3, lambda d: {'w': 2.0 * d * p['w']}

        assert grad_check(forward, params, None, squared_loss(np.zeros(3))) > 0.1

    def test_input_gradient_of_lstm(self, rng):
        params, cell = lstm_cell(rng, 3, 2)
        h0, c0 = rng.normal(size=(1, 2)), rng.normal(size=(1, 2))

        def forward(p, _):
            h, c, cache = lstm_step_cached(cell, p['x'], h0, c0)

            def backward(d):
                dx, _, _ = lstm_step_backward(cell, cache, d, np.zeros_like(c), None, 'cell')
                return {'x': dx}
            return h, backward

        assert grad_check(forward, {'x': rng.normal(size=(1, 3))}, None, squared_loss(np.zeros((1, 2)))) < 1e-4


def _linear_grads(params, x, dy):
    grads = {}
    linear_backward(params, 'fc', x, dy, grads)
    return grads


def _lstm_forward(batch, state):
    def forward(params, xs):
        cell = LstmCellParams.view(params, 'cell')
        h, c = state
        caches = []
        for x in xs:
            h, c, cache = lstm_step_cached(cell, x, h, c)
            caches.append(cache)

        def backward(dh):
            grads = {}
            dc = np.zeros_like(c)
            for cache in reversed(caches):
                _, dh, dc = lstm_step_backward(cell, cache, dh, dc, grads, 'cell')
            return grads
        return h, backward
    return forward


class TestParamFiles:
    def test_round_trip_is_bit_exact(self, tmp_path, rng):
        sections = {
            'model': {'a.W': rng.normal(size=(3, 4)), 'a.b': rng.normal(size=4), 'scalar': np.array(0.1)},
            'extra': {'m': np.array([np.pi, -0.0, 1e-300])},
        }
        write_params(tmp_path / 'p.bin', sections, {'epoch': 3})
        back, meta = read_params(tmp_path / 'p.bin')
        assert meta == {'epoch': 3}
        for section, tensors in sections.items():
            for name, value in tensors.items():
                assert back[section][name].shape == np.shape(value)
                assert back[section][name].tobytes() == np.asarray(value).tobytes()
        assert encode_params(back, meta) == (tmp_path / 'p.bin').read_bytes()

    def test_bad_magic(self):
        blob = encode_params({'s': {'w': np.zeros(2)}})
        with pytest.raises(DataFormatError):
            decode_params(b'XXXXXXXX' + blob[8:])

    def test_truncated_data(self):
        blob = encode_params({'s': {'w': np.zeros(4)}})
        with pytest.raises(DataFormatError):
            decode_params(blob[:-3])

    def test_tensor_view(self):
        assert tensor2(range(6), 2, 3).shape == (2, 3)
        with pytest.raises(ShapeMismatchError):
            tensor2(range(5), 2, 3)
