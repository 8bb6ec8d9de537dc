"""Central-difference gradient checking."""

import numpy as np


def numerical_grad(f, x, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_error(a, b, floor=1e-3):
    """Norm-wise relative error ||a - b|| / max(||a||, ||b||, floor).

    The floor keeps parameters whose exact gradient is zero (biases feeding a
    normalization, output offsets under the scale-free loss) from turning
    difference noise of order 1e-9 into a relative error of 1.  With the
    default floor a tolerance of 1e-5 means an absolute error of 1e-8 for
    near-zero gradients.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    den = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / den)


def check_model_gradients(model, X, Y, tc, h=1e-5):
    """Per-parameter relative error of ``model.backward`` against central differences."""
    from .training import batch_loss

    def loss():
        return batch_loss(model.forward(X, cache=False), Y, tc)[0].total

    model.params.zero_grad()
    _, grad = batch_loss(model.forward(X), Y, tc)
    model.backward(grad)
    errors = {}
    for name in model.params.names():
        num = numerical_grad(loss, model.params[name], h)
        errors[name] = rel_error(model.params.grads[name], num)
    return errors
