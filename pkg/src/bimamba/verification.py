"""Numerical verification suites shared by the test bed and the CLI.

Four independent checks, each returning a JSON-ready summary dict with a
``passed`` flag and the measured worst-case error:

* ``scan_equivalence_suite`` — the chunked parallel scan agrees with the
  sequential recurrence for every chunk size, across random shapes.
* ``lti_equivalence_suite`` — with constant parameters, the recurrence
  collapses to a causal convolution with the impulse-response kernel.
* ``reversal_suite`` — reversing a bidirectional layer's input and swapping
  its direction parameter groups reverses the output exactly.
* ``gradient_suite`` — reverse-mode gradients of every differentiable op
  and all three mixer layers match central finite differences.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Variable, finite_diff_check
from .bidirectional import (
    ExtBiMambaParams,
    InnBiMambaParams,
    ext_bimamba_forward,
    init_ext_bimamba,
    init_inn_bimamba,
    inn_bimamba_forward,
)
from .mamba import MambaConfig, init_mamba, mamba_forward
from .scan import (
    SsmInputs,
    lti_apply,
    lti_kernel,
    selective_scan_parallel,
    selective_scan_sequential,
)

__all__ = [
    "scan_equivalence_suite",
    "lti_equivalence_suite",
    "reversal_suite",
    "gradient_suite",
    "GRAD_CASES",
]

SCAN_LENGTHS = (1, 2, 3, 16, 257, 1024)
SCAN_SIZES = (1, 4, 16)


def _random_inputs(rng, b: int, length: int, e: int, n: int) -> SsmInputs:
    return SsmInputs(
        u=rng.standard_normal((b, length, e)),
        delta=rng.uniform(1e-3, 0.3, (b, length, e)),
        a=-np.exp(rng.standard_normal((e, n))),
        bsel=rng.standard_normal((b, length, n)),
        csel=rng.standard_normal((b, length, n)),
        d=rng.standard_normal(e),
    )


def scan_equivalence_suite(seed: int = 0, n_instances: int = 100,
                           tol: float = 1e-10) -> dict:
    """Parallel == sequential scan over random instances and chunk sizes."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    combos = [(length, e, n) for length in SCAN_LENGTHS
              for e in SCAN_SIZES for n in SCAN_SIZES]
    for i in range(n_instances):
        length, e, n = combos[i % len(combos)]
        inp = _random_inputs(rng, int(rng.integers(1, 3)), length, e, n)
        ref = selective_scan_sequential(inp)
        for chunk in sorted({1, 2, 7, 64, length}):
            diff = float(np.max(np.abs(selective_scan_parallel(inp, chunk) - ref)))
            worst = max(worst, diff)
    return {"suite": "scan_equivalence", "n_instances": n_instances,
            "chunks": [1, 2, 7, 64, "L"], "max_abs_diff": worst,
            "tol": tol, "passed": worst < tol}


def lti_equivalence_suite(seed: int = 0, n_instances: int = 50,
                          tol: float = 1e-8) -> dict:
    """Constant-parameter recurrence == truncated causal convolution."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        b = int(rng.integers(1, 3))
        length = int(rng.integers(1, 96))
        e = int(rng.integers(1, 6))
        n = int(rng.integers(1, 6))
        u = rng.standard_normal((b, length, e))
        delta = rng.uniform(1e-3, 0.3, e)          # constant over batch/time
        a = -np.exp(rng.standard_normal((e, n)))
        bsel = rng.standard_normal(n)
        csel = rng.standard_normal(n)
        d = rng.standard_normal(e)
        inp = SsmInputs(
            u=u,
            delta=np.broadcast_to(delta, (b, length, e)).copy(),
            a=a,
            bsel=np.broadcast_to(bsel, (b, length, n)).copy(),
            csel=np.broadcast_to(csel, (b, length, n)).copy(),
            d=d,
        )
        ref = selective_scan_sequential(inp)
        abar = np.exp(delta[:, None] * a)          # [E, N]
        bbar = delta[:, None] * bsel[None, :]      # [E, N]
        kernel = lti_kernel(abar, bbar, csel, length)
        conv = lti_apply(u, kernel) + d * u
        worst = max(worst, float(np.max(np.abs(conv - ref))))
    return {"suite": "lti_equivalence", "n_instances": n_instances,
            "max_abs_diff": worst, "tol": tol, "passed": worst < tol}


def _swap_directions(params):
    if isinstance(params, InnBiMambaParams):
        return InnBiMambaParams(
            norm_gain=params.norm_gain, w_x=params.w_x, w_z=params.w_z,
            fwd=params.bwd, bwd=params.fwd, w_out=params.w_out)
    if isinstance(params, ExtBiMambaParams):
        return ExtBiMambaParams(norm_gain=params.norm_gain,
                                fwd=params.bwd, bwd=params.fwd)
    raise TypeError(f"not a bidirectional parameter container: {type(params)}")


def reversal_suite(seed: int = 0, n_instances: int = 50,
                   tol: float = 1e-10) -> dict:
    """forward(reverse(x), swapped directions) == reverse(forward(x))."""
    rng = np.random.default_rng(seed)
    worst = {"inn_bimamba": 0.0, "ext_bimamba": 0.0}
    for i in range(n_instances):
        d = int(rng.integers(2, 8))
        cfg = MambaConfig(d=d, e_f=int(rng.integers(1, 3)),
                          n=int(rng.integers(1, 5)),
                          d_conv=int(rng.integers(1, 4)), r=4)
        length = int(rng.integers(1, 24))
        x = rng.standard_normal((int(rng.integers(1, 3)), length, d))
        chunk = int(rng.integers(1, length + 1))
        for name, init, fwd in (
                ("inn_bimamba", init_inn_bimamba, inn_bimamba_forward),
                ("ext_bimamba", init_ext_bimamba, ext_bimamba_forward)):
            params = init(cfg, seed=1000 * i + seed)
            out = fwd(x, params, scan_impl="parallel", chunk=chunk).value
            swapped = fwd(x[:, ::-1].copy(), _swap_directions(params),
                          scan_impl="parallel", chunk=chunk).value
            diff = float(np.max(np.abs(swapped[:, ::-1] - out)))
            worst[name] = max(worst[name], diff)
    overall = max(worst.values())
    return {"suite": "reversal_equivariance", "n_instances": n_instances,
            "max_abs_diff": overall, "per_variant": worst,
            "tol": tol, "passed": overall < tol}


# ---------------------------------------------------------------------------
# gradient checks


def _grad_cases():
    """One (builder, params) pair per differentiable op, inputs kept away
    from kinks (relu at 0, power_compress at its floor) so the central
    difference is valid."""
    rng = np.random.default_rng(42)

    def v(*shape):
        return Variable(rng.standard_normal(shape))

    def vpos(*shape):
        return Variable(rng.uniform(0.5, 2.0, shape))

    cases = {}

    def case(name, params, build):
        cases[name] = (build, params)

    x, y = v(3, 4), v(3, 4)
    case("add", {"x": x, "y": y}, lambda: ad.sum_all(ad.add(x, y)))
    case("addc", {"x": x}, lambda: ad.sum_all(ad.addc(x, np.ones((3, 4)))))
    case("sub", {"x": x, "y": y}, lambda: ad.sum_all(ad.sub(x, y)))
    xb, yb = v(3, 4), v(4)
    case("mul_broadcast", {"x": xb, "y": yb},
         lambda: ad.sum_all(ad.mul(xb, yb)))
    xn = v(3, 4)
    case("neg", {"x": xn}, lambda: ad.sum_all(ad.neg(xn)))
    case("scale", {"x": xn}, lambda: ad.sum_all(ad.scale(xn, 0.37)))
    xe = Variable(rng.uniform(-1.0, 1.0, (3, 4)))
    case("exp", {"x": xe}, lambda: ad.sum_all(ad.exp(xe)))
    a2, b2 = v(3, 5), v(5, 4)
    case("matmul", {"a": a2, "b": b2}, lambda: ad.mean_all(ad.matmul(a2, b2)))
    a3, b3 = v(2, 3, 5), v(2, 5, 4)
    case("matmul_batched", {"a": a3, "b": b3},
         lambda: ad.mean_all(ad.matmul(a3, b3)))
    xs = v(3, 4)
    case("sigmoid", {"x": xs}, lambda: ad.sum_all(ad.sigmoid(xs)))
    case("silu", {"x": xs}, lambda: ad.sum_all(ad.silu(xs)))
    case("softplus", {"x": xs}, lambda: ad.sum_all(ad.softplus(xs)))
    xr = Variable(rng.uniform(0.2, 1.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4)))
    case("relu", {"x": xr}, lambda: ad.sum_all(ad.relu(xr)))
    xp = vpos(3, 4)
    case("power_compress", {"x": xp},
         lambda: ad.sum_all(ad.power_compress(xp, 0.3)))
    xc, wc, bc = v(2, 7, 3), v(3, 4), v(3)
    case("depthwise_conv_causal", {"x": xc, "w": wc, "b": bc},
         lambda: ad.sum_all(ad.mul(h := ad.depthwise_conv1d(xc, wc, bc, causal=True), h)))
    wc3 = v(3, 3)  # centered conv needs an odd kernel
    case("depthwise_conv_centered", {"x": xc, "w": wc3},
         lambda: ad.sum_all(ad.mul(h := ad.depthwise_conv1d(xc, wc3, None, causal=False), h)))
    xl, gl, bl = v(2, 5, 4), vpos(4), v(4)
    case("layer_norm", {"x": xl, "gain": gl, "bias": bl},
         lambda: ad.sum_all(ad.mul(h := ad.layer_norm(xl, gl, bl), h)))
    case("rms_norm", {"x": xl, "gain": gl},
         lambda: ad.sum_all(ad.mul(h := ad.rms_norm(xl, gl), h)))
    xrev = v(2, 6, 3)
    case("reverse_time", {"x": xrev},
         lambda: ad.sum_all(ad.mul(h := ad.reverse_time(xrev), ad.addc(h, np.arange(6.0)[:, None]))))
    xsm = v(2, 5, 4)
    case("softmax", {"x": xsm},
         lambda: ad.sum_all(ad.mul(h := ad.softmax(xsm), h)))
    xg = v(2, 5, 6)
    case("glu", {"x": xg}, lambda: ad.sum_all(ad.mul(h := ad.glu(xg), h)))
    xd = v(3, 8)
    case("dropout", {"x": xd},
         lambda: ad.sum_all(ad.mul(h := ad.dropout(xd, 0.25, np.random.default_rng(7)), h)))
    xrs = v(2, 6, 4)
    case("reshape", {"x": xrs},
         lambda: ad.sum_all(ad.mul(h := ad.reshape(xrs, (2, 24)), ad.addc(h, np.arange(24.0)))))
    case("transpose", {"x": xrs},
         lambda: ad.sum_all(ad.mul(h := ad.transpose(xrs, (0, 2, 1)), h)))
    p1, p2 = v(2, 3, 4), v(2, 5, 4)
    case("concat", {"p1": p1, "p2": p2},
         lambda: ad.sum_all(ad.mul(h := ad.concat([p1, p2], axis=1), h)))
    xsl = v(2, 5, 8)
    case("slice_last", {"x": xsl},
         lambda: ad.sum_all(ad.mul(h := ad.slice_last(xsl, 2, 6), h)))
    xm = v(4, 5)
    case("sum_all", {"x": xm}, lambda: ad.sum_all(ad.mul(xm, xm)))
    case("mean_all", {"x": xm}, lambda: ad.mean_all(ad.mul(xm, xm)))
    case("mean_axis", {"x": xrs},
         lambda: ad.sum_all(ad.mul(h := ad.mean_axis(xrs, 1), h)))
    logits = v(6, 3)
    onehot = np.eye(3)[rng.integers(0, 3, 6)]
    case("softmax_cross_entropy", {"logits": logits},
         lambda: ad.softmax_cross_entropy(logits, onehot))

    def scan_case(impl, chunk):
        u, delta = v(2, 5, 3), Variable(rng.uniform(0.05, 0.3, (2, 5, 3)))
        a = Variable(-np.exp(rng.standard_normal((3, 2))))
        bs, cs, dk = v(2, 5, 2), v(2, 5, 2), v(3)
        params = {"u": u, "delta": delta, "a": a, "bsel": bs, "csel": cs, "d": dk}

        def build():
            y = ad.selective_scan(u, ad.softplus(delta), ad.neg(ad.exp(a)),
                                  bs, cs, dk, impl=impl, chunk=chunk)
            return ad.sum_all(ad.mul(y, y))

        return build, params

    cases["selective_scan_sequential"] = scan_case("sequential", 1)
    cases["selective_scan_parallel"] = scan_case("parallel", 2)
    return cases


GRAD_CASES = sorted(_grad_cases())


def _layer_cases(seed: int):
    rng = np.random.default_rng(seed + 17)
    cfg = MambaConfig(d=4, e_f=2, n=3, d_conv=2, r=4)
    x = rng.standard_normal((1, 6, 4))
    out = {}
    for name, init, fwd, impl in (
            ("mamba_layer", init_mamba, mamba_forward, "sequential"),
            ("inn_bimamba_layer", init_inn_bimamba, inn_bimamba_forward, "parallel"),
            ("ext_bimamba_layer", init_ext_bimamba, ext_bimamba_forward, "parallel")):
        params = init(cfg, seed)
        named = params.named()

        def build(fwd=fwd, params=params, impl=impl):
            h = fwd(x, params, scan_impl=impl, chunk=3)
            return ad.mean_all(ad.mul(h, h))

        out[name] = (build, named)
    return out


def gradient_suite(seed: int = 0, num_coords: int = 200, eps: float = 1e-4,
                   tol: float = 1e-5) -> dict:
    """Finite-difference check of every op case and all three mixer layers."""
    all_cases = dict(_grad_cases())
    all_cases.update(_layer_cases(seed))
    per_case = {}
    for name in sorted(all_cases):
        build, params = all_cases[name]
        per_case[name] = finite_diff_check(build, params, eps=eps,
                                           num_coords=num_coords, seed=seed)
    worst = max(per_case.values())
    return {"suite": "gradient", "eps": eps, "num_coords": num_coords,
            "cases": per_case, "max_rel_err": worst,
            "tol": tol, "passed": worst < tol}
