import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bwex.audio_io import AudioBuffer
from bwex.audit import model_grad_check, tiny_model_config
from bwex.errors import ConfigError, ShapeError
from bwex.model import AudioUNet, ModelConfig, build, predict_track, timed_predict_track

GOLDEN_PARAMS_B4 = 21_185_473


def analytic_param_count(cfg: ModelConfig) -> int:
    total, c_in = 0, 1
    for f, k in zip(cfg.filters_down, cfg.kernel_down):
        total += c_in * f * k + f + 2 * f
        c_in = f
    for f, k, out in zip(cfg.up_conv_filters(), cfg.kernel_up, cfg.up_out_channels()):
        total += c_in * f * k + f + 2 * f
        c_in = out
    return total + c_in * cfg.final_kernel + 1


def test_default_schedule():
    cfg = ModelConfig()
    assert cfg.filters_down == [128, 256, 512, 512]
    assert cfg.kernel_down == [65, 33, 17, 9]
    assert cfg.filters_up == [512, 512, 256, 128]
    assert cfg.kernel_up == [9, 17, 33, 65]
    assert cfg.skip_channels() == [512, 256, 128, 0]
    assert cfg.up_out_channels() == [768, 512, 256, 64]


def test_default_parameter_count_golden():
    cfg = ModelConfig()
    assert analytic_param_count(cfg) == GOLDEN_PARAMS_B4
    assert build(cfg).num_parameters() == GOLDEN_PARAMS_B4


def test_config_errors():
    with pytest.raises(ConfigError):
        ModelConfig(patch_length=6001)
    with pytest.raises(ConfigError):
        ModelConfig(blocks=0)
    with pytest.raises(ConfigError):
        ModelConfig(blocks=2, patch_length=64, filters_down=[4])
    with pytest.raises(ConfigError):
        ModelConfig().variant("nope")


def test_seeded_init_is_deterministic():
    a, b = AudioUNet(tiny_model_config(), seed=3), AudioUNet(tiny_model_config(), seed=3)
    for k, t in a.store:
        np.testing.assert_array_equal(t.data, b.store[k].data)


@pytest.mark.parametrize("variant", ["full", "no_residual", "no_skip"])
def test_forward_shape_per_variant(variant, rng):
    cfg = tiny_model_config().variant(variant)
    net = AudioUNet(cfg, dtype=np.float64)
    x = rng.standard_normal((3, 1, 64))
    assert net.forward(x).shape == x.shape
    g = net.backward(rng.standard_normal(x.shape))
    assert g.shape == x.shape
    if variant == "no_skip":
        assert net.num_parameters() > AudioUNet(tiny_model_config()).num_parameters() - 1000


def test_no_skip_keeps_post_shuffle_widths():
    cfg = ModelConfig().variant("no_skip")
    assert cfg.up_conv_filters() == [1536, 1024, 512, 128]
    assert [f // 2 for f in cfg.up_conv_filters()] == cfg.up_out_channels()


def test_intermediate_shapes_b4(rng):
    net = AudioUNet(ModelConfig(channel_divisor=16), dtype=np.float32)
    x = rng.standard_normal((1, 1, 6000)).astype(np.float32)
    h, lengths = x, []
    for blk in net.down:
        h = blk.forward(h)
        lengths.append(h.shape)
    assert lengths == [(1, 8, 3000), (1, 16, 1500), (1, 32, 750), (1, 32, 375)]
    assert net.forward(x).shape == (1, 1, 6000)


def test_indivisible_length_rejected():
    net = AudioUNet(tiny_model_config())
    with pytest.raises(ShapeError):
        net.forward(np.zeros((1, 1, 30)))


@settings(max_examples=10)
@given(st.integers(1, 3), st.integers(1, 8), st.integers(0, 1000))
def test_zero_final_is_identity(blocks, mult, seed):
    cfg = ModelConfig(blocks=blocks, patch_length=2**blocks, channel_divisor=64, zero_final=True)
    net = AudioUNet(cfg, seed=seed)
    x = np.random.default_rng(seed).standard_normal((2, 1, mult * 2**blocks)).astype(np.float32)
    np.testing.assert_array_equal(net.forward(x), x)


def test_infer_mode_batch_independence(rng):
    net = AudioUNet(tiny_model_config(), dtype=np.float64)
    net.forward(rng.standard_normal((4, 1, 64)))
    x = rng.standard_normal((2, 1, 64))
    both = net.predict(x)
    single = np.concatenate([net.predict(x[:1]), net.predict(x[1:])])
    np.testing.assert_allclose(both, single, atol=1e-6)


def test_predict_track_lengths():
    net = AudioUNet(ModelConfig(channel_divisor=64, zero_final=True))
    net.forward(np.zeros((1, 1, 16), np.float32) + 0.1)
    low = AudioBuffer(np.sin(np.arange(1001) * 0.1), 4000)
    out, secs = timed_predict_track(net, low, 4)
    assert len(out) == 4004 and out.sample_rate == 16000 and secs > 0
    assert len(predict_track(net, AudioBuffer(np.zeros(12 * 4000), 4000), 4)) == 12 * 16000


def test_tiny_model_gradcheck():
    report = model_grad_check(seed=0)
    assert report.passed, report.summary()
