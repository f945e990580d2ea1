import itertools

import numpy as np
import pytest

from ccb.arms import enumerate_mis, pomis_from_config, slice_diagram
from ccb.config import toy_template

# Exogenous success probabilities of the toy SEM, in column order U_Z, U_X, U_XY, U_Y.
TOY_P = np.array([0.6, 0.11, 0.51, 0.15])


def toy_oracle_mean(per_slice):
    """E[Y at the last slice] by enumerating every exogenous assignment over all slices.

    ``per_slice`` lists one ``{var: value}`` dict of do-assignments per slice.
    The structural equations are written out by hand so nothing is shared
    with the package under test.
    """
    slices = len(per_slice)
    k = 4 * slices
    bits = ((np.arange(2**k, dtype=np.int64)[:, None] >> np.arange(k)) & 1).astype(np.int8)
    p = np.tile(TOY_P, slices)
    weight = np.prod(np.where(bits == 1, p, 1 - p), axis=1)
    z = x = y = None
    for t, fixed in enumerate(per_slice):
        uz, ux, uxy, uy = (bits[:, 4 * t + j] for j in range(4))
        if t == 0:
            zn = uz
        else:
            zn = uz & z
        if "Z" in fixed:
            zn = np.full_like(uz, fixed["Z"])
        if t == 0:
            xn = ux ^ uxy ^ zn
        else:
            xn = ux ^ uxy ^ zn ^ x
        if "X" in fixed:
            xn = np.full_like(ux, fixed["X"])
        if t == 0:
            yn = 1 ^ uy ^ uxy ^ xn
        else:
            yn = 1 ^ uy ^ uxy ^ (xn & y)
        z, x, y = zn, xn, yn
    return float(np.dot(weight, y))


def lag1_slices(history, arm):
    """Per-slice assignments when only the previous implemented intervention is applied."""
    t = len(history)
    out = [{} for _ in range(t)] + [dict(arm)]
    if t:
        out[t - 1] = dict(history[-1])
    return out


def full_slices(history, arm):
    return [dict(h) for h in history] + [dict(arm)]


@pytest.fixture(scope="session")
def toy():
    return toy_template()


@pytest.fixture(scope="session")
def pomis_arms(toy):
    mis = enumerate_mis(slice_diagram(toy, 0), toy.reward)
    return pomis_from_config([["X"], ["Z"]], mis, toy.variables, list(toy.variables))


def all_binary(names):
    return [dict(zip(names, vals)) for vals in itertools.product((0, 1), repeat=len(names))]
