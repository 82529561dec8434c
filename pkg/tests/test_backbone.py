import numpy as np
import pytest

from radartrl.backbone import Backbone, BackboneConfig, pair_input
from radartrl.tensor import Tensor, backprop

SMALL = BackboneConfig(widths=(4, 8, 8, 16), stride=4, out_channels=8)


def _net(cfg=SMALL, seed=0):
    return Backbone(cfg, np.random.default_rng(seed))


def test_output_shape():
    z = _net()(Tensor(np.random.default_rng(0).random((2, 64, 64))))
    assert z.shape == (8, 16, 16)


def test_output_shape_batched_and_non_square():
    z = _net()(Tensor(np.random.default_rng(0).random((3, 2, 32, 64))))
    assert z.shape == (3, 8, 8, 16)


def test_stride_two_shape():
    cfg = BackboneConfig(widths=(4, 4, 8, 8), stride=2, out_channels=4)
    z = _net(cfg)(Tensor(np.zeros((2, 32, 48))))
    assert z.shape == (4, 16, 24)


def test_indivisible_input_rejected():
    with pytest.raises(ValueError, match="divisible by 32"):
        _net()(Tensor(np.zeros((2, 48, 64))))


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        BackboneConfig(stride=3).validate()
    with pytest.raises(ValueError):
        BackboneConfig(widths=(4, 8)).validate()


def test_order_changes_output():
    rng = np.random.default_rng(1)
    a, b = rng.random((64, 64)), rng.random((64, 64))
    net = _net().eval()
    z1 = net(Tensor(pair_input(a, b))).data
    z2 = net(Tensor(pair_input(b, a))).data
    assert not np.allclose(z1, z2)


def test_zero_input_finite():
    z = _net().eval()(Tensor(np.zeros((2, 64, 64)))).data
    assert np.all(np.isfinite(z))
    z = _net()(Tensor(np.zeros((2, 2, 64, 64)))).data
    assert np.all(np.isfinite(z))


def test_every_parameter_receives_gradient():
    net = _net()
    x = Tensor(np.random.default_rng(2).random((2, 2, 32, 32)))
    z = net(x)
    probe = np.random.default_rng(3).standard_normal(z.shape)
    backprop((z * probe).sum())
    for name, p in net.named_parameters().items():
        assert p.grad is not None and np.any(p.grad != 0), name


def test_forward_bit_exact():
    x = Tensor(np.random.default_rng(4).random((2, 64, 64)))
    net = _net().eval()
    assert net(x).data.tobytes() == net(x).data.tobytes()
    assert _net().eval()(x).data.tobytes() == net(x).data.tobytes()
