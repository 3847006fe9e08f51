"""Closed-form predictors against the independent RK4 integrator.

These are spot checks at single operating points; the acceptance suite runs
the full grids with the advertised tolerances.
"""

import math

import numpy as np
import pytest

from msgate.hilbert import CompositeState
from msgate.magnus import (
    predict_coherence,
    predict_fidelity,
    predict_phase,
    predict_populations,
    predict_purity,
    predicted_state,
)
from msgate.oracle import observables, propagate_batch, relative_phase_pair


def _oracle_states(table, oracle_cutoff, fast_integrator, label, n, lams):
    cut = oracle_cutoff
    amps = np.zeros((cut.composite_dim, len(lams)), dtype=complex)
    q = ["gg", "ge", "eg", "ee"].index(label)
    amps[cut.index(q, n), :] = 1.0
    final, drift, guard = propagate_batch(
        amps, cut, table.params, np.asarray(lams), fast_integrator
    )
    assert drift.max() < 1e-9 and guard < 1e-10
    return final


class TestScalarPredictors:
    @pytest.mark.parametrize("n", [0, 2])
    def test_second_order_point(self, table, oracle_cutoff, fast_integrator, n):
        lam = 0.02
        final = _oracle_states(table, oracle_cutoff, fast_integrator, "gg", n, [lam])
        obs = observables(CompositeState(final[:, 0], oracle_cutoff), "gg", n)
        assert predict_phase(n, lam, table) == pytest.approx(
            obs["relative_phase"], abs=5e-5
        )
        # P(gg) at n=0 has a near-zero quadratic coefficient, so the cubic
        # remainder (~lam^3 * 9) sets the floor here.
        np.testing.assert_allclose(
            predict_populations(n, lam, table), obs["populations"], atol=1e-4
        )
        assert predict_fidelity(n, lam, table) == pytest.approx(
            obs["fidelity"], abs=5e-5
        )
        # One-sided comparison keeps the odd-order remainder; purity's cubic
        # coefficient is O(20), so allow lam^3 * 25 here.
        assert predict_purity(n, lam, table) == pytest.approx(
            obs["purity"], abs=2.5e-4
        )
        row, col = relative_phase_pair("gg")
        assert predict_coherence(n, lam, table) == pytest.approx(
            complex(obs["rho"].matrix[row, col]), abs=5e-4
        )

    def test_ee_input_mirror(self, table, oracle_cutoff, fast_integrator):
        lam, n = 0.02, 1
        final = _oracle_states(table, oracle_cutoff, fast_integrator, "ee", n, [lam])
        obs = observables(CompositeState(final[:, 0], oracle_cutoff), "ee", n)
        assert predict_phase(n, lam, table, initial="ee") == pytest.approx(
            obs["relative_phase"], abs=5e-5
        )
        np.testing.assert_allclose(
            predict_populations(n, lam, table, initial="ee"),
            obs["populations"],
            atol=5e-5,
        )

    def test_first_order_slope(self, table, derived, oracle_cutoff, fast_integrator):
        h, n = 0.01, 1
        final = _oracle_states(
            table, oracle_cutoff, fast_integrator, "gg", n, [-h, h]
        )
        phases = [
            observables(CompositeState(final[:, j], oracle_cutoff), "gg", n)[
                "relative_phase"
            ]
            for j in (0, 1)
        ]
        slope = (phases[1] - phases[0]) / (2 * h)
        assert slope == pytest.approx(derived.a[n], rel=1e-3)


class TestStateResidualScaling:
    @pytest.mark.parametrize("label,n", [("gg", 0), ("ge", 1)])
    def test_orders(self, table, oracle_cutoff, fast_integrator, label, n):
        lams = np.array([0.02, 0.04, 0.08])
        final = _oracle_states(table, oracle_cutoff, fast_integrator, label, n, lams)
        pad = oracle_cutoff.composite_dim - table.cutoff.composite_dim

        slopes = {}
        for order in (1, 2):
            residuals = []
            for j, lam in enumerate(lams):
                pred = predicted_state(label, n, float(lam), table, order=order)
                padded = np.concatenate(
                    [
                        np.pad(pred.qubit_block(q), (0, pad // 4))
                        for q in range(4)
                    ]
                )
                residuals.append(np.linalg.norm(final[:, j] - padded))
            slopes[order] = np.polyfit(np.log(lams), np.log(residuals), 1)[0]

        # Neglected terms are one order higher than the kept expansion.
        assert 1.7 < slopes[1] < 2.3
        assert 2.6 < slopes[2] < 3.3
        assert slopes[2] > slopes[1]
