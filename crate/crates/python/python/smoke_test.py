"""Smoke test for the tls_census extension module.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`.
"""

import json
import math
import tempfile
from pathlib import Path

import tls_census as tc


def main():
    g = tc.coupling_from_loss(0.10, 100e-9)
    assert abs(g - 0.5121) < 1e-4, g
    assert abs(tc.loss_from_coupling(g, 0.0) - 0.10) < 1e-10
    assert abs(tc.zpf_field(65e-15, 2e-9, 1.3) - 3204.0) < 1.0
    assert abs(tc.quality_factor(6.0, 35e-6) / 1e6 - 1.32) < 0.01

    # closed form against direct integration, one detuned defect
    p = tc.loss_from_coupling(1.0, 2.0)
    q = tc.oracle_swap([(5.002, 1.0, 0.0)], 5.0)
    assert abs(p - q) < 1e-6, (p, q)

    qubit = tc.QubitModel(22.0, 0.22)
    top = qubit.sweet_spot_freq()
    grid = tc.uniform_grid(top - 1.6, top)
    band = (grid[0], grid[-1])
    ens = tc.DefectEnsemble([(band[0] + 0.4, 2.0, 0.05), (band[0] + 1.1, 3.0, 0.05)], band)
    spec = tc.generate_spectrum(qubit, ens, grid, shots=1000, seed=1)
    rep = tc.count_defects(spec)
    assert rep.n_peaks == 2, rep
    for f, d in zip(rep.peak_frequencies_ghz, sorted(ens.frequencies_ghz)):
        assert abs(f - d) < 0.01, (f, d)

    reports = []
    for seed in range(8):
        e = tc.DefectEnsemble.sample(band, 0.87, seed, g_range_mhz=(1.0, 5.0))
        reports.append(tc.count_defects(tc.generate_spectrum(qubit, e, grid, shots=1000, seed=seed)))
    rho, lo, hi = tc.bootstrap_density(reports, n_boot=500)
    assert lo <= rho <= hi

    fit = tc.fit_area_scaling([0.04, 0.1, 0.2], [0.2, 0.5, 1.0], [0.05, 0.05, 0.05])
    assert abs(fit["alpha"] - 5.0) < 1e-9 and abs(fit["beta"]) < 1e-9

    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "run.json"
        cfg.write_text(json.dumps({
            "master_seed": 3,
            "bootstrap": {"n_boot": 200},
            "temporal": {"cooldowns": 2},
            "chips": [
                {"label": "0-0", "n_qubits": 3, "junction_areas_um2": [0.02, 0.02]},
                {"label": "1-0", "n_qubits": 3, "junction_areas_um2": [0.1, 0.1]},
            ],
        }))
        ds = Path(tmp) / "ds"
        n = tc.simulate(str(cfg), str(ds))
        tc.analyze(str(ds))
        tc.sweep(str(ds), [0.1, 0.4])
        f = tc.fit(str(ds))
        tc.report(str(ds))
        assert n > 0 and math.isfinite(f["alpha"])
        assert (ds / "report" / "chip_summary.csv").read_text().startswith("label,cleaning")
        try:
            tc.count_defects(tc.SwapSpectrum([4.0, 4.1], [0.0, 0.0]))
        except ValueError:
            pass
        else:
            raise AssertionError("short spectrum accepted")

    print("tls_census smoke test ok")


if __name__ == "__main__":
    main()
