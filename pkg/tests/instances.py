"""Random small identification problems shared by the gradient tests."""

import numpy as np

from awjm.cost import CostSpec
from awjm.data import MeasurementSet, etch_preset
from awjm.model import Grid1D, ModelParams, TimeScheme, final_profile

MISFIT_CASES = [("single", 1), ("independent", 2), ("superposed", 2), ("independent", 3), ("superposed", 3)]
SUBSETS = [{"a"}, {"k"}, {"e"}, {"a", "k"}, {"a", "e"}, {"k", "e"}, {"a", "k", "e"}]


def random_instance(rng, case=None, regularizer=None):
    n = int(rng.integers(6, 31))
    steps = int(rng.integers(20, 201))
    grid = Grid1D.symmetric(1.0, n)
    scheme = TimeScheme(1.0, steps)
    truth = ModelParams(rng.uniform(0.5, 3), rng.uniform(0.5, 4),
                        etch_preset("gaussian", grid, rng.uniform(0.05, 0.15), rng.uniform(0.2, 0.5)))
    combine, count = MISFIT_CASES[rng.integers(len(MISFIT_CASES))] if case is None else case
    z = final_profile(truth, grid, scheme)
    profiles = [z + 0.02 * z.max() * rng.normal(size=n) for _ in range(count)]
    for prof in profiles:
        prof[[0, -1]] = 0.0
    meas = MeasurementSet(profiles, combine)
    reg = regularizer or ("background" if rng.random() < 0.5 else "grad_e")
    if combine == "single":
        variant = reg
    else:
        variant = "multi_" + combine if reg == "grad_e" else reg
    active = SUBSETS[rng.integers(len(SUBSETS))]
    ub = ModelParams(1.0, 1.5, np.zeros(n))
    spec = CostSpec(variant, 10 ** rng.uniform(-5, -1), ub if variant == "background" else None, active)
    trial = ModelParams(truth.a * rng.uniform(0.7, 1.3), truth.k * rng.uniform(0.7, 1.3),
                        truth.e * rng.uniform(0.7, 1.3, n))
    return trial, meas, spec, grid, scheme
