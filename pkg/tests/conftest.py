import numpy as np
import pytest

from rvesurrogate import datastore as ds


def synthetic_records(seed, n_records=30, d_gamma=16, d_tau=20,
                      min_steps=24, max_steps=48):
    """Deterministic nonlinear history-dependent records for engine tests.

    The gamma-like field accumulates a rectified drive (monotone per point);
    the tau-like field mixes an instantaneous and a cumulative response, so
    the mapping is learnable but not trivially linear.
    """
    rng = np.random.default_rng(seed)
    mix_a = rng.standard_normal((3, d_gamma)) * 0.6
    mix_b = rng.standard_normal((3, d_gamma)) * 0.3
    mix_t = rng.standard_normal((3, d_tau)) * 40.0
    records = []
    for _ in range(n_records):
        steps = int(rng.integers(min_steps, max_steps + 1))
        dx = rng.standard_normal((steps, 3)) * 0.01
        dx[0] = 0.0
        x = np.cumsum(dx, axis=0)
        gamma = np.cumsum(np.maximum(x @ mix_a, 0.0) + 0.2 * np.abs(x @ mix_b),
                          axis=0) * 0.05
        tau = np.abs(x @ mix_t) + 0.01 * np.cumsum(np.abs(x @ mix_t), axis=0)
        records.append(ds.SequenceRecord(x, gamma, tau))
    return records


@pytest.fixture(scope="session")
def synthetic_packed():
    records = synthetic_records(seed=1234, n_records=36)
    return ds.pack_records(records, lengths=(24, 36))
