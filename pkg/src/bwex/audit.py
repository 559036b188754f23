"""Gradient audit over every nn op and a small composed model."""

from __future__ import annotations

import numpy as np

from bwex.model import AudioUNet, ModelConfig
from bwex.nn import functional as F
from bwex.nn.gradcheck import GradCheckReport, grad_check, grad_check_cases
from bwex.nn.layers import BatchNorm1d, Conv1d, Linear, Module, ReLU, Sequential, SubpixelShuffle1d
from bwex.nn.tensor import ParamStore

F64 = np.float64


class ConcatProbe(Module):
    """Concatenates the input with a learnable tensor so both adjoints are exercised."""

    def __init__(self, store: ParamStore, other: np.ndarray):
        self.other = store.add("other", other)
        self.split = None

    def forward(self, x):
        self.split = x.shape[1]
        return F.concat_channels(x, self.other.data)

    def backward(self, g):
        ga, gb = F.split_channels(g, self.split)
        self.other.accumulate(gb)
        return ga


class MSEProbe(Module):
    """Wraps ``mse_loss`` as a module producing a (1, 1, 1) output."""

    def __init__(self, target: np.ndarray, mode: str = "mean_sq"):
        self.target, self.mode = target, mode
        self._grad = None

    def forward(self, x):
        loss, self._grad = F.mse_loss(x, self.target, self.mode)
        return np.full((1, 1, 1), loss)

    def backward(self, g):
        return self._grad * float(g.sum())


def _conv_case(seed: int):
    rng = np.random.default_rng(1000 + seed)
    n, c_in, c_out = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    d, k, stride = rng.integers(3, 9), rng.choice([3, 5]), rng.choice([1, 2])
    store = ParamStore()
    conv = Conv1d(store, "conv", int(c_in), int(c_out), int(k), stride=int(stride), rng=rng, dtype=F64)
    store["conv.bias"].data[:] = rng.standard_normal(int(c_out))
    return conv, (int(n), int(c_in), int(d)), dict(store.params)


def _bn_case(seed: int):
    rng = np.random.default_rng(2000 + seed)
    n, c, d = rng.integers(1, 3), rng.integers(1, 4), rng.integers(2, 9)
    store = ParamStore()
    bn = BatchNorm1d(store, "bn", int(c), dtype=F64)
    store["bn.gamma"].data[:] = rng.uniform(0.5, 2.0, int(c))
    store["bn.beta"].data[:] = rng.standard_normal(int(c))
    return bn, (int(n), int(c), int(d)), dict(store.params)


def _bn_infer_case(seed: int):
    bn, shape, params = _bn_case(seed)
    rng = np.random.default_rng(2500 + seed)
    bn.forward(rng.standard_normal(shape))
    bn.eval()
    return bn, shape, params


def _away_from_zero(rng, shape):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < 0.1, np.sign(x) * 0.1 + x, x)


def _relu_case(seed: int):
    rng = np.random.default_rng(3000 + seed)
    return ReLU(), tuple(int(v) for v in rng.integers(1, 5, size=3)), {}


def _shuffle_case(seed: int):
    rng = np.random.default_rng(4000 + seed)
    n, c, d = rng.integers(1, 3), 2 * rng.integers(1, 4), rng.integers(1, 6)
    return SubpixelShuffle1d(), (int(n), int(c), int(d)), {}


def _concat_case(seed: int):
    rng = np.random.default_rng(5000 + seed)
    n, ca, cb, d = (int(v) for v in rng.integers(1, 4, size=4))
    store = ParamStore()
    probe = ConcatProbe(store, rng.standard_normal((n, cb, d)))
    return probe, (n, ca, d), dict(store.params)


def _linear_case(seed: int):
    rng = np.random.default_rng(6000 + seed)
    n, i, o = (int(v) for v in rng.integers(1, 6, size=3))
    store = ParamStore()
    lin = Linear(store, "linear", i, o, rng=rng, dtype=F64)
    return lin, (n, i), dict(store.params)


def _mse_case(seed: int, mode: str = "mean_sq"):
    rng = np.random.default_rng(7000 + seed)
    shape = tuple(int(v) for v in rng.integers(1, 5, size=3))
    return MSEProbe(rng.standard_normal(shape), mode), shape, {}


def _up_block_case(seed: int):
    rng = np.random.default_rng(8000 + seed)
    n, c_in, c_out, d = rng.integers(1, 3), rng.integers(1, 4), 2 * rng.integers(1, 3), rng.integers(3, 9)
    store = ParamStore()
    block = Sequential(
        Conv1d(store, "conv", int(c_in), int(c_out), 5, rng=rng, dtype=F64),
        BatchNorm1d(store, "bn", int(c_out), dtype=F64),
        ReLU(),
        SubpixelShuffle1d(),
    )
    return block, (int(n), int(c_in), int(d)), dict(store.params)


def tiny_model_config(**overrides) -> ModelConfig:
    """B=2 at length 64 with at most 8 channels."""
    base = dict(blocks=2, patch_length=64, filters_down=[4, 8], filters_up=[8, 4],
                kernel_down=[9, 5], kernel_up=[5, 9], final_kernel=5)
    base.update(overrides)
    return ModelConfig(**base)


def model_grad_check(seed: int = 0, variant: str = "full", max_probes: int = 12) -> GradCheckReport:
    net = AudioUNet(tiny_model_config().variant(variant), seed=seed, dtype=F64)
    rng = np.random.default_rng(9000 + seed)
    for k, t in net.store.params.items():
        if k.endswith(".bias") or k.endswith(".beta"):
            t.data[:] = 0.1 * rng.standard_normal(t.data.shape)
    return grad_check(net, (2, 1, 64), dict(net.store.params), name=f"audiounet[B=2,{variant}]",
                      seed=seed, max_probes=max_probes, signature=net.relu_signature)


def run_audit(cases: int = 20, model_cases: int = 20, tol: float = 1e-4) -> list[GradCheckReport]:
    """Every op over ``cases`` seeded configurations plus the composed model."""
    reports = [
        grad_check_cases(_conv_case, cases, name="conv1d", tol=tol),
        grad_check_cases(_bn_case, cases, name="batchnorm[train]", tol=tol),
        grad_check_cases(_bn_infer_case, cases, name="batchnorm[infer]", tol=tol),
        grad_check_cases(_relu_case, cases, name="relu", tol=tol, make_input=_away_from_zero),
        grad_check_cases(_shuffle_case, cases, name="subpixel_shuffle_1d", tol=tol),
        grad_check_cases(_concat_case, cases, name="concat_channels", tol=tol),
        grad_check_cases(_linear_case, cases, name="linear", tol=tol),
        grad_check_cases(_mse_case, cases, name="mse_loss[mean_sq]", tol=tol),
        grad_check_cases(lambda s: _mse_case(s, "paper_eq1"), cases, name="mse_loss[paper_eq1]", tol=tol),
        grad_check_cases(_up_block_case, cases, name="up_block", tol=tol),
    ]
    total = GradCheckReport("audiounet[B=2]", tol)
    for seed in range(model_cases):
        total.merge(model_grad_check(seed, ("full", "no_residual", "no_skip")[seed % 3]))
    reports.append(total)
    return reports
