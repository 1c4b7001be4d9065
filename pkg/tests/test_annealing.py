import numpy as np
import pytest

from aqflow.annealing import (
    AnnealParams, ReadoutSet, best_sample, exhaustive_solve, run_backend, simulated_annealing, with_seed,
)
from aqflow.hamiltonian import BinaryPolynomial, QuboProblem, Registry, quadratize
from aqflow.hamiltonian.variables import slack_bit


def random_qubo(rng, n=12):
    reg = Registry([slack_bit("q", k) for k in range(n)])
    q = rng.normal(size=(n, n))
    return QuboProblem((q + q.T) / 2, reg, 0.0)


def test_params_validation():
    with pytest.raises(ValueError):
        AnnealParams(readouts=0)
    with pytest.raises(ValueError):
        AnnealParams(t_start=1.0, t_end=2.0)


def test_schedule_geometric():
    betas = AnnealParams(t_start=10.0, t_end=0.01).schedule(1.0, 4)
    temps = 1 / betas
    assert temps[0] == pytest.approx(10.0) and temps[-1] == pytest.approx(0.01)
    assert np.allclose(temps[1:] / temps[:-1], temps[1] / temps[0])


def test_deterministic():
    q = random_qubo(np.random.default_rng(1))
    p = AnnealParams(readouts=50, sweeps_per_readout=20)
    a, b = run_backend("sa-qubo", q, p), run_backend("sa-qubo", q, p)
    assert a == b
    c = run_backend("sa-qubo", q, with_seed(p, 99))
    assert c.problem_digest == a.problem_digest and c.total_count == 50


def test_readout_counts_and_verify():
    q = random_qubo(np.random.default_rng(2))
    rs = simulated_annealing(q, AnnealParams(readouts=64, sweeps_per_readout=10))
    assert rs.total_count == 64
    rs.verify(q, atol=1e-12)
    assert rs.to_csv().startswith("bitstring,energy,count")


def test_exhaustive_finds_minimum():
    q = random_qubo(np.random.default_rng(3), n=10)
    rs = exhaustive_solve(q)
    x = ((np.arange(1024)[:, None] >> np.arange(10)) & 1).astype(np.uint8)
    assert best_sample(rs)[1] == pytest.approx(q.evaluate(x).min())


def test_qubo_only_backend_rejects_hobo():
    reg = Registry([slack_bit("q", k) for k in range(3)])
    p = BinaryPolynomial.from_terms(reg, {(0, 1, 2): 1.0})
    with pytest.raises(TypeError):
        run_backend("sa-qubo", p, AnnealParams(readouts=2))
    assert run_backend("sa-qubo", quadratize(p), AnnealParams(readouts=2)).total_count == 2


def test_unknown_backend():
    with pytest.raises(ValueError):
        run_backend("dwave", random_qubo(np.random.default_rng(0), 3), AnnealParams())


def test_initial_state_polish_keeps_local_minimum():
    q = random_qubo(np.random.default_rng(4), n=8)
    best, e = best_sample(exhaustive_solve(q))
    rs = simulated_annealing(q, AnnealParams(readouts=5, sweeps_per_readout=0), initial=best)
    assert best_sample(rs)[1] == pytest.approx(e)


def test_merge_pools_counts():
    q = random_qubo(np.random.default_rng(5), n=6)
    a = simulated_annealing(q, AnnealParams(readouts=10, seed=0))
    b = simulated_annealing(q, AnnealParams(readouts=10, seed=10))
    m = a.merge(b)
    assert isinstance(m, ReadoutSet) and m.total_count == 20
