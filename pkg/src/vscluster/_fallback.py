"""Pure-Python kernels. Results are bit-identical to the compiled ones."""

import hashlib
import math

import numpy as np


def sha256_iterate(data: bytes, times: int) -> bytes:
    """Apply SHA-256 ``times`` times (times >= 1)."""
    sha256 = hashlib.sha256
    d = sha256(data).digest()
    for _ in range(times - 1):
        d = sha256(d).digest()
    return d


def sha256_chain(data: bytes, n: int) -> list:
    sha256 = hashlib.sha256
    out = [sha256(data).digest()]
    for _ in range(n - 1):
        out.append(sha256(out[-1]).digest())
    return out


def snr_matrix(xs, ys, tx_power_dbm, ref_loss_db, ref_distance_m,
               exponent, noise_floor_dbm, min_distance_m):
    n = len(xs)
    out = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        xi = float(xs[i])
        yi = float(ys[i])
        for j in range(n):
            if i == j:
                continue
            dx = float(xs[j]) - xi
            dy = float(ys[j]) - yi
            d = math.sqrt(dx * dx + dy * dy)
            if d < min_distance_m:
                d = min_distance_m
            loss = ref_loss_db + 10.0 * exponent * math.log10(d / ref_distance_m)
            out[i, j] = math.pow(10.0, (tx_power_dbm - loss - noise_floor_dbm) / 10.0)
    return out
