import itertools

import numpy as np
import pytest

from delaysnn.core import RngStream
from delaysnn.neuron import DelayState, NeuronParams, NeuronState, adlif_step, lif_step
from delaysnn.network import (
    delay_drive,
    delay_drive_adjoint,
    BatchNorm,
    LayerParams,
    LayerSpec,
    Model,
    Network,
    NetworkSpec,
    count_params,
    count_state_memory,
    layer_forward,
    readout_forward,
)


def single_neuron(n_d, scheme="ones"):
    spec = LayerSpec(1, "lif", n_d, scheme)
    p = LayerParams(W=np.ones((1, 1)), alpha=np.array([0.5]),
                    asd=np.ones((1, n_d)) if n_d else None)
    return spec, p


def test_zero_weights_never_spike():
    spec = LayerSpec(3, "radlif", 4)
    p = LayerParams.init(spec, 5, RngStream(0))
    p.W[:] = 0.0
    p.V[:] = 0.0
    out, _ = layer_forward(spec, p, np.zeros((30, 2, 5)))
    assert not out.any()


def test_constant_drive_saturates_below_threshold():
    # u[t] = 1 - 2^-t is exact in float64 up to t = 53; one step later it rounds to 1.0
    spec, p = single_neuron(0)
    out, cache = layer_forward(spec, p, np.ones((54, 1, 1)))
    assert not out.any()
    np.testing.assert_array_equal(cache.u[:, 0, 0], 1.0 - 2.0 ** -np.arange(54))
    out, _ = layer_forward(spec, p, np.ones((55, 1, 1)))
    assert np.flatnonzero(out[:, 0, 0]).tolist() == [54]


def test_ones_delay_brings_first_spike_to_step_two():
    spec, p = single_neuron(5)
    out, cache = layer_forward(spec, p, np.ones((10, 1, 1)))
    assert int(np.argmax(out[:, 0, 0] > 0)) == 2
    assert cache.u[2, 0, 0] == 1.75


def test_layer_shape_errors():
    spec = LayerSpec(3, "rlif")
    p = LayerParams.init(spec, 4, RngStream(0))
    with pytest.raises(ValueError):
        layer_forward(spec, p, np.zeros((5, 1, 2)))
    p.V[0, 0] = 0.1
    with pytest.raises(ValueError, match="diagonal"):
        layer_forward(spec, p, np.zeros((5, 1, 4)))
    lif = LayerSpec(3, "lif", 2)
    q = LayerParams.init(lif, 4, RngStream(0))
    q.asd = np.ones((3, 3))
    with pytest.raises(ValueError):
        layer_forward(lif, q, np.zeros((5, 1, 4)))


@pytest.mark.parametrize("model", ["lif", "adlif"])
@pytest.mark.parametrize("n_d", [0, 3])
def test_layer_matches_scalar_neurons(model, n_d):
    # without BN the layer is h independent copies of the scalar neuron
    spec = LayerSpec(4, model, n_d, "uniform")
    p = LayerParams.init(spec, 6, RngStream(2))
    x = (RngStream(3).random((80, 2, 6)) < 0.4).astype(float)
    out, cache = layer_forward(spec, p, x)
    step = adlif_step if spec.model.adaptive else lif_step
    for b in range(2):
        for j in range(4):
            params = NeuronParams(p.alpha[j], *(() if p.beta is None else (p.beta[j], p.a[j], p.b[j])))
            st_ = NeuronState(0.0, 0.0 if spec.model.adaptive else None)
            dl = DelayState.zeros(n_d)
            asd = p.asd[j] if n_d else []
            for t in range(80):
                drive = float(cache.ff[t, b, j])
                st_, dl, s = step(st_, dl, params, asd, drive, drive)
                assert s == out[t, b, j]
                if t + 1 < 80:
                    assert abs(st_.u - cache.u[t + 1, b, j]) <= 1e-12


def test_no_delay_network_is_plain_network():
    # n_d = 0 must leave no trace: same draws, same outputs as an independent LIF recursion
    spec = NetworkSpec.stack("lif", h=5, l=1, n_d=0, c_in=3, c_out=2, dropout_rate=0.0)
    net = Network(spec, 1)
    x = (RngStream(9).random((2, 50, 3)) < 0.5).astype(float)
    _, tape = net.forward(x)
    p = net.layers[0]
    ff = tape.layers[0].ff
    u = np.zeros((2, 5))
    for t in range(50):
        s = (u >= 1.0).astype(float)
        np.testing.assert_array_equal(tape.layers[0].s[t], s)
        u = p.alpha * u + (1 - p.alpha) * ff[t] - p.alpha * s


def test_readout_examples():
    W = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 3.0]])
    bn = BatchNorm(2)
    logits, _ = readout_forward(W, bn, np.zeros((7, 1, 3)))
    np.testing.assert_allclose(logits, [[0.0, 0.0]], atol=1e-12)
    spikes = np.ones((4, 1, 3))
    logits, _ = readout_forward(W, None, spikes)
    np.testing.assert_allclose(logits, [W.sum(axis=1)])
    s1 = np.array([[[1.0, 0.0, 1.0]]])
    logits, _ = readout_forward(W, None, s1)
    np.testing.assert_allclose(logits, [W @ s1[0, 0]])
    with pytest.raises(ValueError):
        readout_forward(W, None, np.zeros((0, 1, 3)))


def test_batchnorm_train_statistics():
    bn = BatchNorm(3)
    x = RngStream(0).random((500, 3)) * [1.0, 10.0, 100.0] + [5.0, -2.0, 0.0]
    y, _ = bn.forward(x, training=True)
    np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-6)
    np.testing.assert_allclose(y.var(axis=0), 1.0, atol=1e-6 + 1e-5 / x.var(axis=0).min())


def test_batchnorm_inference_is_affine():
    bn = BatchNorm(2)
    bn.running_mean = np.array([1.0, -1.0])
    bn.running_var = np.array([4.0, 0.25])
    bn.gamma = np.array([2.0, 1.0])
    bn.bias = np.array([0.5, 0.0])
    x = RngStream(1).random((10, 2))
    y, _ = bn.forward(x, training=False)
    np.testing.assert_allclose(y, 2.0 * (x - 1.0) / np.sqrt(4.0 + 1e-5) * [1, 0] + [0.5, 0]
                               + [0, 1] * (x + 1.0) / np.sqrt(0.25 + 1e-5))
    y2, _ = bn.forward(x, training=False)
    np.testing.assert_array_equal(y, y2)


def test_dropout_statistics():
    spec = LayerSpec(50, "lif")
    p = LayerParams(W=np.eye(50) * 10.0, alpha=np.full(50, 0.5))
    x = np.ones((40, 20, 50))
    clean, _ = layer_forward(spec, p, x)
    out, cache = layer_forward(spec, p, x, training=True, rng=RngStream(0), dropout=0.4)
    spiking = clean > 0
    n = spiking.sum()
    zeroed = (out[spiking] == 0).mean()
    assert abs(zeroed - 0.4) < 4 * np.sqrt(0.24 / n)
    np.testing.assert_allclose(np.unique(out[spiking]), [0.0, 1 / 0.6])
    same, _ = layer_forward(spec, p, x, training=False, dropout=0.4)
    np.testing.assert_array_equal(same, clean)


# -- accounting ------------------------------------------------------------

def test_delay_param_example():
    spec = NetworkSpec.stack("adlif", 128, 2, n_d=10, trainable_asd=True)
    assert count_params(spec).delay == 2560


def test_total_param_example():
    spec = NetworkSpec.stack("adlif", 128, 2, n_d=5, trainable_asd=False)
    pc = count_params(spec)
    assert (pc.feedforward, pc.recurrent, pc.neuron, pc.norm, pc.delay) == (36864, 0, 1024, 552, 0)
    assert pc.total == 38440


def test_no_delay_count_ignores_flag():
    spec = NetworkSpec.stack("lif", 16, 2, n_d=0)
    assert count_params(spec, True).delay == 0 == count_params(spec, False).delay


@pytest.mark.parametrize("model, n_d, trainable",
                         list(itertools.product(list(Model), [0, 5, 10, 20], [True, False])))
def test_param_count_matches_registered(model, n_d, trainable):
    spec = NetworkSpec.stack(model, h=6, l=2, n_d=n_d, trainable_asd=trainable, c_in=7, c_out=3)
    assert count_params(spec).total == Network(spec, 0).count_trainable()


@pytest.mark.parametrize("model, h, l, n_d, want", [
    ("lif", 128, 2, 0, 256),
    ("adlif", 128, 2, 5, 1792),
    ("adlif", 8, 2, 100, 1632),
])
def test_state_memory_examples(model, h, l, n_d, want):
    spec = NetworkSpec.stack(model, h, l, n_d=n_d)
    assert count_state_memory(spec) == want
    assert Network(spec, 0).state_memory() == want


# -- whole network ---------------------------------------------------------

def test_init_ranges_and_zero_diagonal():
    net = Network(NetworkSpec.stack("radlif", 20, 2, n_d=4, c_in=9, c_out=3), 5)
    for p in net.layers:
        assert np.all(np.diag(p.V) == 0)
        assert p.alpha.min() >= np.exp(-1 / 5) and p.alpha.max() <= 0.96
        assert p.beta.min() >= np.exp(-1 / 30) and p.beta.max() <= 0.99
        assert np.abs(p.W).max() <= 1 / np.sqrt(p.W.shape[1])


def test_forward_is_deterministic_for_a_seed():
    spec = NetworkSpec.stack("adlif", 6, 2, n_d=3, c_in=4, c_out=3)
    x = RngStream(0).random((3, 12, 4))
    a, _ = Network(spec, 4).forward(x, training=True, rng=RngStream(1))
    b, _ = Network(spec, 4).forward(x, training=True, rng=RngStream(1))
    np.testing.assert_array_equal(a, b)


def test_forward_rejects_bad_input():
    net = Network(NetworkSpec.stack("lif", 4, 1, c_in=3, c_out=2), 0)
    with pytest.raises(ValueError):
        net.forward(np.zeros((2, 5, 4)))


def test_checkpoint_round_trip(tmp_path):
    spec = NetworkSpec.stack("radlif", 5, 2, n_d=3, scheme="expdecay", trainable_asd=True, c_in=4, c_out=3)
    net = Network(spec, 3)
    x = RngStream(1).random((4, 15, 4))
    net.forward(x, training=True, rng=RngStream(2))
    path = tmp_path / "net.npz"
    net.save(path)
    back = Network.load(path)
    assert back.spec.to_dict() == spec.to_dict()
    for k, v in net.state_arrays().items():
        np.testing.assert_array_equal(back.state_arrays()[k], v)
    np.testing.assert_array_equal(back.forward(x)[0], net.forward(x)[0])


def test_spec_round_trip_and_validation():
    spec = NetworkSpec.stack("rlif", 3, 2, n_d=2, scheme="lineardecay", c_in=2, c_out=2)
    assert NetworkSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        NetworkSpec(2, 2, [])
    with pytest.raises(ValueError):
        LayerSpec(4, "lif", -1)
    with pytest.raises(ValueError):
        LayerSpec(4, "izhikevich")


def test_dropout_only_between_hidden_layers():
    spec = NetworkSpec.stack("lif", 6, 3, c_in=4, c_out=2, dropout_rate=0.4)
    _, tape = Network(spec, 0).forward(RngStream(0).random((3, 8, 4)), training=True, rng=RngStream(1))
    assert [c.mask is not None for c in tape.layers] == [True, True, False]


@pytest.mark.parametrize("T, n_d, lag", [(7, 3, 0), (7, 3, 1), (150, 5, 1), (130, 70, 0), (64, 1, 1), (3, 9, 1)])
def test_delay_drive_matches_direct_sum(T, n_d, lag):
    rng = np.random.default_rng(T * 100 + n_d)
    ff, asd = rng.normal(size=(T, 2, 3)), rng.normal(size=(3, n_d))
    want = np.zeros_like(ff)
    for t in range(T):
        for j in range(n_d):
            if t - j - lag >= 0:
                want[t] += asd[:, j] * ff[t - j - lag]
    np.testing.assert_allclose(delay_drive(ff, asd, lag), want, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("lag", [0, 1])
def test_delay_drive_adjoint_against_differences(lag):
    rng = np.random.default_rng(3 + lag)
    ff, asd, g = rng.normal(size=(70, 2, 3)), rng.normal(size=(3, 4)), rng.normal(size=(70, 2, 3))
    g_ff, g_asd = delay_drive_adjoint(g, ff, asd, lag)
    # the map is linear in each argument, so one central difference is exact up to rounding
    e = 1e-3
    for idx in [(0, 0, 0), (30, 1, 2), (69, 0, 1), (65, 1, 0)]:
        d = np.zeros_like(ff)
        d[idx] = e
        fd = ((delay_drive(ff + d, asd, lag) - delay_drive(ff - d, asd, lag)) * g).sum() / (2 * e)
        assert g_ff[idx] == pytest.approx(fd, rel=1e-8, abs=1e-10)
    for idx in [(0, 0), (2, 3), (1, 1)]:
        d = np.zeros_like(asd)
        d[idx] = e
        fd = ((delay_drive(ff, asd + d, lag) - delay_drive(ff, asd - d, lag)) * g).sum() / (2 * e)
        assert g_asd[idx] == pytest.approx(fd, rel=1e-8, abs=1e-10)
