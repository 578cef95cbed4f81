"""Shared test helpers: finite-difference gradient checking and miniature
model configurations small enough to difference exhaustively."""

import numpy as np
import pytest

from pricefusion.models import ConvSpec
from pricefusion.train import ce_grad, loss_ce_l1

FD_STEP = 1e-3
REL_TOL = 1e-3

# small kernels and stride-1 pooling keep miniature inputs viable through
# all conv/pool stages
MINI_CONV = ConvSpec(
    kernel=2,
    image_filters=(2, 3, 4),
    tabular_filters=(2, 3),
    pool_window=2,
    pool_stride=1,
    branch_dense=5,
)
MINI_HIDDEN = (8, 6)
MINI_IMAGE = (8, 8, 1)


def shadow64(model_or_layer):
    """Cast all parameters to float64 in place for exact differencing."""
    layers = (
        [model_or_layer]
        if hasattr(model_or_layer, "params")
        else _all_layers(model_or_layer)
    )
    for layer in layers:
        for name in layer.params:
            layer.params[name] = layer.params[name].astype(np.float64)
    return model_or_layer


def _all_layers(model):
    return list(model.tabular_branch) + list(model.image_branch or []) + list(model.head)


def rel_err(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-8)


def check_layer_gradients(layer, x, rng, samples=40):
    """FD-check a single layer against a random linear readout.

    Returns the worst relative error over sampled input and parameter
    coordinates.
    """
    shadow64(layer)
    out = layer.forward(x)
    readout = rng.uniform(-1.0, 1.0, out.shape, dtype=np.float64)
    dx, pgrads = layer.backward(readout)

    def objective():
        return float((layer.forward(x) * readout).sum())

    worst = 0.0
    for arr, grad in [(x, dx)] + [(layer.params[n], pgrads[n]) for n in pgrads]:
        for i in _sample_indices(arr.size, samples, rng):
            orig = arr.flat[i]
            arr.flat[i] = orig + FD_STEP
            up = objective()
            arr.flat[i] = orig - FD_STEP
            down = objective()
            arr.flat[i] = orig
            worst = max(worst, rel_err(grad.flat[i], (up - down) / (2 * FD_STEP)))
    return worst


def check_model_gradients(model, xt, aux, labels, l1_alpha=0.0, samples=6, rng=None):
    """FD-check the full composed graph against the training loss."""
    shadow64(model)
    xt = xt.astype(np.float64)
    aux = aux.astype(np.float64) if aux is not None else None

    def objective():
        probs = model.forward(xt, aux)
        weights = [
            arr for layer, name, arr in model.parameters()
            if name == "weight" and getattr(layer, "regularized", False)
        ]
        return loss_ce_l1(probs, labels, weights, l1_alpha)

    probs = model.forward(xt, aux)
    grads = model.backward(ce_grad(probs, labels))
    if l1_alpha > 0:
        from pricefusion.train import _add_l1_grads

        _add_l1_grads(model, grads, l1_alpha)
    worst = 0.0
    for layer, name, arr in model.parameters():
        grad = grads[(id(layer), name)]
        for i in _sample_indices(arr.size, samples, rng):
            orig = arr.flat[i]
            if l1_alpha > 0 and abs(orig) <= 10 * FD_STEP:
                continue  # |w| kink: central differences are invalid here
            arr.flat[i] = orig + FD_STEP
            up = objective()
            arr.flat[i] = orig - FD_STEP
            down = objective()
            arr.flat[i] = orig
            worst = max(worst, rel_err(grad.flat[i], (up - down) / (2 * FD_STEP)))
    return worst


def _sample_indices(size, samples, rng):
    if size <= samples:
        return range(size)
    return sorted({rng.integer(0, size) for _ in range(samples)})


@pytest.fixture
def rng():
    from pricefusion.rng import Rng

    return Rng(1234)
