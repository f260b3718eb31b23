"""Shared test utilities: finite-difference gradient checking and the
full per-op gradient battery (used by both the unit tests and the
acceptance gate)."""

from __future__ import annotations

import numpy as np

from zdcfast.nn import Tensor, ops

FD_STEP = 1e-3
FD_TOL = 1e-3


def numeric_grad(scalar_fn, arr: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of scalar_fn() wrt arr (perturbed in place).

    scalar_fn must return a python float computed with float64 accumulation;
    arr stays float32 so the perturbed forward runs exactly like training.
    """
    grad = np.zeros(arr.size, dtype=np.float64)
    flat = arr.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = scalar_fn()
        flat[i] = orig - h
        fm = scalar_fn()
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(arr.shape)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def away_from_kink(rng, shape, margin=5e-3):
    """Uniform values whose magnitude exceeds the FD step, for relu-like ops."""
    mag = rng.uniform(margin + 2 * FD_STEP, 1.0, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return (mag * sign).astype(np.float32)


def check_gradients(build_graph, tensors: dict, readout_target: np.ndarray,
                    tol: float = FD_TOL) -> dict:
    """Compare analytic gradients of mse(build_graph(), target) against
    central finite differences for every tensor in `tensors`.

    The numeric side recomputes the identical composition but reduces the
    final mean square in float64, avoiding the float32 rounding of the
    stored loss value.
    """
    t64 = readout_target.astype(np.float64)

    def loss_graph():
        return ops.mse(build_graph(), readout_target)

    def loss_value():
        out = build_graph()
        d = out.data.astype(np.float64) - t64
        return float(np.mean(d * d))

    loss = loss_graph()
    loss.backward()
    analytic = {name: t.grad.copy() for name, t in tensors.items()}
    errors = {}
    for name, t in tensors.items():
        num = numeric_grad(loss_value, t.data)
        err = rel_error(analytic[name], num)
        assert err <= tol, f"{name}: gradient rel err {err:.3e} > {tol}"
        errors[name] = err
    return errors


def check_scalar_gradients(graph_fn, value_fn, tensors: dict, tol: float = FD_TOL) -> dict:
    """Like check_gradients but for ops that already return a scalar loss."""
    loss = graph_fn()
    loss.backward()
    analytic = {name: t.grad.copy() for name, t in tensors.items()}
    errors = {}
    for name, t in tensors.items():
        num = numeric_grad(value_fn, t.data)
        err = rel_error(analytic[name], num)
        assert err <= tol, f"{name}: gradient rel err {err:.3e} > {tol}"
        errors[name] = err
    return errors


def gradient_battery(seed: int) -> list[str]:
    """Finite-difference checks for every differentiable op; returns the
    names of the ops checked."""
    rng = np.random.default_rng(seed)
    checked = []

    x = Tensor(rng.uniform(-1, 1, (4, 5)).astype(np.float32), requires_grad=True)
    w = Tensor(rng.uniform(-1, 1, (5, 3)).astype(np.float32), requires_grad=True)
    b = Tensor(rng.uniform(-1, 1, 3).astype(np.float32), requires_grad=True)
    check_gradients(lambda: ops.dense(x, w, b), {"x": x, "w": w, "b": b},
                    rng.uniform(-1, 1, (4, 3)).astype(np.float32))
    checked.append("dense")

    for stride, padding, hw in ((1, "valid", 6), (2, "same", 7), (1, "same", 5), (2, "valid", 8)):
        cx = Tensor(rng.uniform(-1, 1, (2, 2, hw, hw)).astype(np.float32), requires_grad=True)
        ck = Tensor(rng.uniform(-1, 1, (3, 2, 3, 3)).astype(np.float32), requires_grad=True)
        cb = Tensor(rng.uniform(-1, 1, 3).astype(np.float32), requires_grad=True)
        probe = ops.conv2d(Tensor(cx.data), Tensor(ck.data), Tensor(cb.data),
                           stride=stride, padding=padding)
        check_gradients(lambda s=stride, p=padding: ops.conv2d(cx, ck, cb, stride=s, padding=p),
                        {"x": cx, "k": ck, "b": cb},
                        rng.uniform(-1, 1, probe.shape).astype(np.float32))
        checked.append(f"conv2d[{padding},s{stride}]")

    ux = Tensor(rng.uniform(-1, 1, (2, 3, 4, 4)).astype(np.float32), requires_grad=True)
    check_gradients(lambda: ops.upsample_nearest2x(ux), {"x": ux},
                    rng.uniform(-1, 1, (2, 3, 8, 8)).astype(np.float32))
    checked.append("upsample_nearest2x")

    rx = Tensor(away_from_kink(rng, (4, 6)), requires_grad=True)
    check_gradients(lambda: ops.relu(rx), {"x": rx},
                    rng.uniform(-1, 1, (4, 6)).astype(np.float32))
    checked.append("relu")

    lx = Tensor(away_from_kink(rng, (4, 6)), requires_grad=True)
    check_gradients(lambda: ops.leaky_relu(lx, 0.2), {"x": lx},
                    rng.uniform(-1, 1, (4, 6)).astype(np.float32))
    checked.append("leaky_relu")

    sx = Tensor(rng.uniform(-2, 2, (4, 6)).astype(np.float32), requires_grad=True)
    check_gradients(lambda: ops.sigmoid(sx), {"x": sx},
                    rng.uniform(-1, 1, (4, 6)).astype(np.float32))
    checked.append("sigmoid")

    bx = Tensor(rng.uniform(-1, 1, (2, 3, 4, 4)).astype(np.float32), requires_grad=True)
    gamma = Tensor(rng.uniform(0.5, 1.5, 3).astype(np.float32), requires_grad=True)
    beta = Tensor(rng.uniform(-0.5, 0.5, 3).astype(np.float32), requires_grad=True)

    def bn_graph():
        return ops.batchnorm(bx, gamma, beta, np.zeros(3, np.float32),
                             np.ones(3, np.float32), train=True)

    check_gradients(bn_graph, {"x": bx, "gamma": gamma, "beta": beta},
                    rng.uniform(-1, 1, (2, 3, 4, 4)).astype(np.float32))
    checked.append("batchnorm")

    dx = Tensor(rng.uniform(-1, 1, (5, 8)).astype(np.float32), requires_grad=True)

    def drop_graph():
        return ops.dropout(dx, 0.3, train=True, rng=np.random.default_rng(seed + 99))

    check_gradients(drop_graph, {"x": dx},
                    rng.uniform(-1, 1, (5, 8)).astype(np.float32))
    checked.append("dropout")

    ca = Tensor(rng.uniform(-1, 1, (3, 4)).astype(np.float32), requires_grad=True)
    cb2 = Tensor(rng.uniform(-1, 1, (3, 2)).astype(np.float32), requires_grad=True)
    check_gradients(lambda: ops.concat(ca, cb2), {"a": ca, "b": cb2},
                    rng.uniform(-1, 1, (3, 6)).astype(np.float32))
    checked.append("concat")

    shx = Tensor(rng.uniform(-1, 1, (2, 12)).astype(np.float32), requires_grad=True)
    check_gradients(lambda: ops.reshape(shx, (2, 3, 2, 2)), {"x": shx},
                    rng.uniform(-1, 1, (2, 3, 2, 2)).astype(np.float32))
    checked.append("reshape")

    ex = Tensor(rng.uniform(-1, 1, (4, 5)).astype(np.float32), requires_grad=True)
    ey = Tensor(rng.uniform(-1, 1, (4, 5)).astype(np.float32), requires_grad=True)
    check_gradients(lambda: (ex + ey) * ex, {"x": ex, "y": ey},
                    rng.uniform(-1, 1, (4, 5)).astype(np.float32))
    checked.append("add/mul")

    gx = Tensor(rng.uniform(-1, 1, (4, 5)).astype(np.float32), requires_grad=True)
    from zdcfast import nn as _nn
    check_gradients(lambda: _nn.exp(gx * 0.5), {"x": gx},
                    rng.uniform(-1, 1, (4, 5)).astype(np.float32))
    checked.append("exp/scale")

    # Scalar losses checked directly with float64 twins.
    bt = (rng.random((6, 1)) < 0.5).astype(np.float32)
    bp = Tensor(rng.uniform(0.05, 0.95, (6, 1)).astype(np.float32), requires_grad=True)
    check_scalar_gradients(
        lambda: ops.bce(bp, bt),
        lambda: float(-np.mean(bt * np.log(bp.data.astype(np.float64))
                               + (1 - bt) * np.log1p(-bp.data.astype(np.float64)))),
        {"pred": bp})
    checked.append("bce")

    mt = rng.uniform(-1, 1, (5, 4)).astype(np.float32)
    mp = Tensor(rng.uniform(-1, 1, (5, 4)).astype(np.float32), requires_grad=True)
    check_scalar_gradients(
        lambda: ops.mse(mp, mt),
        lambda: float(np.mean((mp.data.astype(np.float64) - mt) ** 2)),
        {"pred": mp})
    checked.append("mse")

    km = Tensor(rng.uniform(-1, 1, (4, 6)).astype(np.float32), requires_grad=True)
    kv = Tensor(rng.uniform(-1, 1, (4, 6)).astype(np.float32), requires_grad=True)

    def kl_value():
        mu64 = km.data.astype(np.float64)
        lv64 = kv.data.astype(np.float64)
        return float(0.5 * np.sum(np.exp(lv64) + mu64 ** 2 - 1.0 - lv64) / 4)

    check_scalar_gradients(lambda: ops.kl_diag_gauss(km, kv), kl_value,
                           {"mu": km, "logvar": kv})
    checked.append("kl_diag_gauss")
    return checked
