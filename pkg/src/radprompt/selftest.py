"""Quick internal consistency checks run by ``radprompt selftest``.

Each check returns ``(name, passed, detail)``. The full oracle suites live in
the test directory; these are small enough to run on any install.
"""

from __future__ import annotations

import itertools

import numpy as np

from .encoders import FrozenTextEncoder, class_tokens
from .filters import DiscretizedROI
from .prompt_head import init_params, loss_and_grads, loss_only, softmax
from .rng import Rng
from .texture import glcm
from .volume import Label, derive_label


def check_gradients(seed: int = 0, eps: float = 1e-6) -> tuple[str, bool, str]:
    rng = Rng(seed)
    enc = FrozenTextEncoder(seed + 1, 8, 12, 6)
    ct = class_tokens(seed + 2, 3, 8, 1.0)
    params = init_params(10, 8, M=4, hidden=5, seed=seed + 3, context_std=0.5)
    params.b1[:] = rng.normal((5,), 0.5)
    params.b2[:] = rng.normal((8,), 0.5)
    x = rng.normal((5, 6))
    r = rng.normal((5, 10))
    y = np.array([rng.randbelow(3) for _ in range(5)])
    _, grads = loss_and_grads(params, x, r, y, enc, ct)
    worst = 0.0
    for name, arr in params.arrays().items():
        for i in range(arr.size):
            flat = arr.reshape(-1)
            old = flat[i]
            flat[i] = old + eps
            up = loss_only(params, x, r, y, enc, ct)
            flat[i] = old - eps
            down = loss_only(params, x, r, y, enc, ct)
            flat[i] = old
            fd = (up - down) / (2 * eps)
            a = grads[name].reshape(-1)[i]
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
    return "gradient", worst <= 1e-5, f"max relative error {worst:.2e}"


def check_softmax(seed: int = 0, n: int = 200) -> tuple[str, bool, str]:
    rng = Rng(seed)
    z = rng.normal((n, 3), 10.0)
    p = softmax(z)
    err = float(np.abs(p.sum(axis=1) - 1.0).max())
    same = bool(np.array_equal(softmax(z + 7.0).argmax(axis=1), p.argmax(axis=1)))
    return "softmax", err <= 1e-12 and same, f"max |sum - 1| {err:.1e}"


def check_glcm(seed: int = 0) -> tuple[str, bool, str]:
    rng = Rng(seed)
    grid = np.array([[1 + rng.randbelow(4) for _ in range(7)] for _ in range(6)], dtype=np.int64)
    roi = np.ones_like(grid, dtype=bool)
    roi[0, :3] = False
    grid[~roi] = 0
    m = glcm(DiscretizedROI(grid, roi, 4)).matrix
    offsets = ((0, 1), (1, 0), (1, 1), (1, -1))
    for d, (dr, dc) in enumerate(offsets):
        ref = np.zeros((4, 4))
        for r, c in itertools.product(range(6), range(7)):
            r2, c2 = r + dr, c + dc
            if 0 <= r2 < 6 and 0 <= c2 < 7 and roi[r, c] and roi[r2, c2]:
                ref[grid[r, c] - 1, grid[r2, c2] - 1] += 1
                ref[grid[r2, c2] - 1, grid[r, c] - 1] += 1
        if not np.array_equal(ref, m[d]):
            return "glcm", False, f"direction {offsets[d]} differs from enumeration"
    return "glcm", True, "matches enumeration"


def check_labels() -> tuple[str, bool, str]:
    means = (1.0, 2.49, 2.5, 3.5, 3.51, 5.0)
    want = (Label.BENIGN, Label.BENIGN, Label.UNSURE, Label.UNSURE, Label.UNSURE, Label.MALIGNANT)
    got = tuple(derive_label([m]) for m in means)
    return "label-rule", got == want, ", ".join(g.name.lower() for g in got)


CHECKS = (check_gradients, check_softmax, check_glcm, check_labels)


def run_all() -> list[tuple[str, bool, str]]:
    return [check() for check in CHECKS]
