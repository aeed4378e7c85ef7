import math

import numpy as np
import pytest

from spikegrad import autodiff as ad
from spikegrad.autodiff import Tape
from spikegrad.neurons import (
    AMOS,
    EGRU,
    EIF,
    LI,
    LIF,
    Izhikevich,
    MultiCompartment,
    MultiNeuronModel,
    QIF,
    Refractory,
    StateObserver,
)

from helpers import central_fd, rel_err


def _state(tape, model, n=1, **channels):
    y = model.init_state(n, tape)
    for c, vals in channels.items():
        y[c] = tape.leaf(np.asarray(vals, dtype=np.float64))
    return y


class TestLIF:
    def test_dynamics_values(self):
        m = LIF(tau_mem=20.0, tau_syn=5.0)
        with Tape() as t:
            y = _state(t, m, V=[0.5], I=[1.0])
            d = m.dynamics(t.constant(0.0), y)
            assert d["V"].value[0] == pytest.approx(0.025)
            assert d["I"].value[0] == pytest.approx(-0.2)

    def test_fixed_point_and_equilibrium(self):
        m = LIF()
        with Tape() as t:
            d = m.dynamics(t.constant(0.0), _state(t, m, V=[0.0], I=[0.0]))
            assert d["V"].value[0] == 0.0 and d["I"].value[0] == 0.0
            m2 = LIF()
            m2.Ic = 0.5
            d = m2.dynamics(t.constant(0.0), _state(t, m2, V=[0.5], I=[0.5]))
            assert d["V"].value[0] == 0.0 and d["I"].value[0] == 0.0

    def test_spike_condition(self):
        m = LIF(threshold=1.0)
        with Tape() as t:
            for v, expect in [(1.0, 0.0), (0.3, -0.7), (1.2, 0.2)]:
                g = m.spike_condition(t.constant(0.0), _state(t, m, V=[v], I=[0.0]))
                assert g.value[0] == pytest.approx(expect)

    def test_input_spike_additive(self):
        m = LIF()
        with Tape() as t:
            y = _state(t, m, V=[0.0], I=[0.0])
            y = m.input_spike(y, t.constant([0.4]))
            assert y["I"].value[0] == pytest.approx(0.4)
            y0 = m.input_spike(y, t.constant([0.0]))
            assert y0["I"].value[0] == pytest.approx(0.4)
            y2 = m.input_spike(y, t.constant([0.25]))
            assert y2["I"].value[0] == pytest.approx(0.65)

    def test_reset_touches_only_masked_v(self):
        m = LIF(v_reset=0.0)
        with Tape() as t:
            y = _state(t, m, V=[1.0, 0.5], I=[0.3, 0.4], n=2)
            out = m.reset_spiked(y, np.array([True, False]))
            assert np.allclose(out["V"].value, [0.0, 0.5])
            assert out["I"] is y["I"]
            same = m.reset_spiked(y, np.array([False, False]))
            assert same is y

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            LIF(tau_mem=5.0, tau_syn=5.0)
        with pytest.raises(ValueError):
            LIF(threshold=0.0, v_reset=0.0)


class TestQIF:
    def test_rest_is_fixed_point(self):
        m = QIF()
        with Tape() as t:
            d = m.dynamics(t.constant(0.0), _state(t, m, phi=[0.0], I=[0.0]))
            assert d["phi"].value[0] == pytest.approx(0.0, abs=1e-15)

    def test_midphase_rate_independent_of_current(self):
        m = QIF(tau_mem=20.0)
        expect = 2.0 / (2.0 * math.pi * 20.0)
        with Tape() as t:
            for i in [0.0, 2.0, -1.0]:
                d = m.dynamics(t.constant(0.0), _state(t, m, phi=[0.5], I=[i]))
                assert d["phi"].value[0] == pytest.approx(expect)

    def test_spike_at_unit_phase(self):
        m = QIF()
        with Tape() as t:
            g = m.spike_condition(t.constant(0.0), _state(t, m, phi=[1.0], I=[0.0]))
            assert g.value[0] == 0.0
            y = m.reset_spiked(_state(t, m, phi=[1.0], I=[0.7]), np.array([True]))
            assert y["phi"].value[0] == 0.0
            assert y["I"].value[0] == pytest.approx(0.7)


class TestEIF:
    def test_dynamics_at_soft_threshold(self):
        m = EIF()
        with Tape() as t:
            d = m.dynamics(t.constant(0.0), _state(t, m, V=[1.0], I=[0.0]))
            # -(1 - 0) + 0.2*exp(0) = -0.8, over tau_mem=20
            assert d["V"].value[0] == pytest.approx(-0.04)

    def test_cutoff_condition(self):
        m = EIF()
        with Tape() as t:
            g = m.spike_condition(t.constant(0.0), _state(t, m, V=[2.98], I=[0.0]))
            assert g.value[0] == pytest.approx(0.0)

    def test_upward_drift_at_leak_reversal(self):
        m = EIF()
        with Tape() as t:
            d = m.dynamics(t.constant(0.0), _state(t, m, V=[0.0], I=[0.0]))
            expect = 0.2 * math.exp((0.0 - 1.0) / 0.2) / 20.0
            assert d["V"].value[0] == pytest.approx(expect)
            assert d["V"].value[0] > 0.0


class TestIzhikevich:
    def test_reset_jump(self):
        m = Izhikevich()
        with Tape() as t:
            y = _state(t, m, v=[30.0], u=[-10.0], I=[0.0])
            out = m.reset_spiked(y, np.array([True]))
            assert out["v"].value[0] == pytest.approx(-65.0)
            assert out["u"].value[0] == pytest.approx(-6.0)

    def test_rest_derivative(self):
        m = Izhikevich()
        with Tape() as t:
            y = _state(t, m, v=[-65.0], u=[-13.0], I=[0.0])
            d = m.dynamics(t.constant(0.0), y)
            # 0.04*4225 - 325 + 140 + 13 = -3.0
            assert d["v"].value[0] == pytest.approx(-3.0)
            assert d["u"].value[0] == pytest.approx(0.0)

    def test_bias_init_range(self):
        m = Izhikevich()
        spec = m.param_spec(1000)
        arr = spec["Ic"][1](np.random.default_rng(0))
        assert arr.min() >= 2.5 and arr.max() <= 3.5


class TestEGRU:
    def test_free_decay(self):
        m = EGRU(tau=20.0)
        with Tape() as t:
            y = _state(t, m, c=[2.0])
            d = m.dynamics(t.constant(0.0), y)
            assert d["c"].value[0] == pytest.approx(-0.1)

    def test_subtraction_reset_at_threshold(self):
        m = EGRU()
        m.theta = 1.0
        with Tape() as t:
            y = _state(t, m, c=[1.0])
            g = m.spike_condition(t.constant(0.0), y)
            assert g.value[0] == pytest.approx(0.0)
            out = m.reset_spiked(y, np.array([True]))
            assert out["c"].value[0] == pytest.approx(0.0)

    def test_gated_update(self):
        m = EGRU()
        with Tape() as t:
            y = _state(t, m, c=[0.5])
            out = m.input_spike(y, (t.constant([0.0]), t.constant([0.0])))
            # u = sigmoid(0) = 0.5, z = tanh(0) = 0 -> c' = 0.25
            assert out["c"].value[0] == pytest.approx(0.25)


class TestMultiCompartment:
    def test_activation_at_transition(self):
        m = MultiCompartment(dendrites=2, in_size=3)
        with Tape() as t:
            v = t.leaf([m.v_th])
            assert m.activation(v).value[0] == pytest.approx(0.25)

    def test_activation_bounded_and_peaked(self):
        m = MultiCompartment(dendrites=1, in_size=1)
        with Tape() as t:
            vs = np.linspace(-3.0, 3.0, 101)
            vals = m.activation(t.leaf(vs)).value
            assert np.all(vals > 0.0) and np.all(vals < 1.0)
            assert abs(vs[int(np.argmax(vals))] - m.v_th) < 0.06

    def test_suppressed_coupling_when_vth_large(self):
        m = MultiCompartment(dendrites=2, in_size=3, v_th=50.0)
        with Tape() as t:
            y = m.init_state(2, t)
            d = m.dynamics(t.constant(0.0), y)
            assert np.allclose(d["vS"].value, 0.0, atol=1e-12)

    def test_no_dendrites_degenerates_to_leak(self):
        m = MultiCompartment(dendrites=0, in_size=2, tau_s=20.0)
        with Tape() as t:
            y = m.init_state(1, t)
            y["vS"] = t.leaf([0.8])
            d = m.dynamics(t.constant(0.0), y)
            assert d["vS"].value[0] == pytest.approx(-0.8 / 20.0)

    def test_input_targets_one_channel_block(self):
        m = MultiCompartment(dendrites=2, in_size=3)
        with Tape() as t:
            w = t.leaf(np.arange(8.0).reshape(4, 2))  # (n*D, fan) with fan=2? keep consistent
            y = m.init_state(2, t)
            pay = [(1, ad.column(w, 1))]
            out = m.input_spike(y, pay)
            isyn = out["Isyn"].value.reshape(3, 4)
            assert np.allclose(isyn[0], 0.0)
            assert np.allclose(isyn[1], [1.0, 3.0, 5.0, 7.0])
            assert np.allclose(isyn[2], 0.0)


class TestWrappers:
    def test_amos_clamps_after_spike(self):
        m = AMOS(LIF())
        with Tape() as t:
            y = m.init_state(2, t)
            y["V"] = t.leaf([1.5, 0.2])
            g0 = m.spike_condition(t.constant(0.0), y)
            assert g0.value[0] == pytest.approx(0.5)
            y = m.reset_spiked(y, np.array([True, False]))
            assert y["amos_fired"].tolist() == [True, False]
            y["V"] = t.leaf([1.5, 0.2])
            g1 = m.spike_condition(t.constant(0.0), y)
            assert g1.value[0] == -1.0
            assert g1.value[1] == pytest.approx(-0.8)

    def test_refractory_zero_window_is_identity(self):
        m = Refractory(LIF(), t_ref=0.0)
        with Tape() as t:
            y = m.init_state(1, t)
            y["V"] = t.leaf([0.5])
            y = m.reset_spiked(y, np.array([True]))
            y = m.on_event(y, np.array([True]), t.constant(3.0))
            g = m.spike_condition(t.constant(3.0), {**y, "V": t.leaf([0.4])})
            assert g.value[0] == pytest.approx(-0.6)
            assert m.next_boundary(3.0, y) is None

    def test_refractory_suppresses_then_releases(self):
        m = Refractory(LIF(), t_ref=5.0)
        with Tape() as t:
            y = m.init_state(1, t)
            y = m.on_event(y, np.array([True]), t.constant(2.0))
            g = m.spike_condition(t.constant(4.0), {**y, "V": t.leaf([2.0])})
            assert g.value[0] == -1.0
            val, var = m.next_boundary(4.0, y)
            assert val == pytest.approx(7.0)
            g2 = m.spike_condition(t.constant(7.5), {**y, "V": t.leaf([2.0])})
            assert g2.value[0] == pytest.approx(1.0)

    def test_observer_accumulators(self):
        m = StateObserver(LI(), lam=0.1)
        with Tape() as t:
            y = m.init_state(1, t)
            y["V"] = t.leaf([2.0])
            y["v_max"] = y["V"]
            d = m.dynamics(t.constant(3.0), y)
            assert d["z_int"].value[0] == pytest.approx(2.0)
            assert d["z_exp"].value[0] == pytest.approx(2.0 * math.exp(-0.3))
            y2 = dict(y)
            y2["V"] = t.leaf([1.0])
            y2 = m.commit_update(t.constant(4.0), y2)
            assert y2["v_max"].value[0] == pytest.approx(2.0)

    def test_observer_gate_blocks_exp_channel(self):
        m = StateObserver(LI(), lam=0.1, gate_time=10.0)
        with Tape() as t:
            y = m.init_state(1, t)
            y["V"] = t.leaf([2.0])
            d = m.dynamics(t.constant(3.0), y)
            assert "z_exp" not in d and "z_int" not in d
            d = m.dynamics(t.constant(12.0), y)
            assert d["z_exp"].value[0] == pytest.approx(2.0 * math.exp(-1.2))


class TestMultiNeuronModel:
    def test_single_partition_matches_inner(self):
        inner = LIF()
        m = MultiNeuronModel([inner], [2])
        with Tape() as t:
            y = m.init_state(2, t)
            y["p0:V"] = t.leaf([0.5, 0.2])
            y["p0:I"] = t.leaf([1.0, 0.0])
            d = m.dynamics(t.constant(0.0), y)
            yi = {"V": y["p0:V"], "I": y["p0:I"]}
            di = inner.dynamics(t.constant(0.0), yi)
            assert np.allclose(d["p0:V"].value, di["V"].value)
            g = m.spike_condition(t.constant(0.0), y)
            assert np.allclose(g.value, [-0.5, -0.8])

    def test_partition_isolation_on_reset(self):
        m = MultiNeuronModel([LIF(), LI()], [1, 1])
        with Tape() as t:
            y = m.init_state(2, t)
            y["p0:V"] = t.leaf([1.2])
            y["p1:V"] = t.leaf([0.7])
            out = m.reset_spiked(y, np.array([True, False]))
            assert out["p0:V"].value[0] == 0.0
            assert out["p1:V"].value[0] == pytest.approx(0.7)

    def test_lif_plus_li_condition(self):
        m = MultiNeuronModel([LIF(), LI()], [1, 2])
        with Tape() as t:
            y = m.init_state(3, t)
            g = m.spike_condition(t.constant(0.0), y)
            assert g.value.shape == (3,)
            assert np.allclose(g.value[1:], -1.0)


class TestModelGradients:
    @pytest.mark.parametrize(
        "factory,channels",
        [
            (lambda: LIF(), {"V": 0.6, "I": 0.4}),
            (lambda: QIF(), {"phi": 0.4, "I": 0.3}),
            (lambda: EIF(), {"V": 0.8, "I": 0.2}),
            (lambda: Izhikevich(), {"v": -60.0, "u": -12.0, "I": 1.0}),
        ],
    )
    def test_dynamics_gradients_match_fd(self, factory, channels):
        model = factory()
        names = list(channels)

        def f(x):
            with Tape() as t:
                y = {c: t.leaf([x[i]]) for i, c in enumerate(names)}
                d = model.dynamics(t.constant(0.0), y)
                out = 0.0
                for k, c in enumerate(names):
                    out = ad.add(ad.mul(ad.index(d[c], 0), float(k + 1)), out)
                return out

        x0 = np.array([channels[c] for c in names])

        def val(x):
            return f(x).value if isinstance(f(x), ad.Var) else f(x)

        with Tape() as t:
            y = {c: t.leaf([x0[i]]) for i, c in enumerate(names)}
            d = model.dynamics(t.constant(0.0), y)
            out = 0.0
            for k, c in enumerate(names):
                out = ad.add(ad.mul(ad.index(d[c], 0), float(k + 1)), out)
            grads = t.backward(out)
            g_ad = np.array([grads[y[c]] [0] for c in names])

        def scalar(x):
            with Tape() as t2:
                y2 = {c: t2.leaf([x[i]]) for i, c in enumerate(names)}
                d2 = model.dynamics(t2.constant(0.0), y2)
                out2 = 0.0
                for k, c in enumerate(names):
                    out2 = ad.add(ad.mul(ad.index(d2[c], 0), float(k + 1)), out2)
                return out2.value

        g_fd = central_fd(scalar, x0, eps=1e-6)
        assert rel_err(g_ad, g_fd) < 1e-6
