"""Exit criteria.  Each test prints one ``CRITERION n: PASS|FAIL`` line.

Run ``pytest tests/test_acceptance.py -v -s`` or ``python tests/test_acceptance.py``.
"""
import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import gamma

from iotsense.clustering import DbscanParams, dbscan
from iotsense.detection import analytic_pd_rayleigh, analytic_pfa, binarize, calibrate_noise, \
    threshold_from_pfa
from iotsense.models import (MEASURED_SITES, arrival_rate_vs_bandwidth, fit_temporal_model,
                             generator_matrix, normalized_traffic, transition_probabilities)
from iotsense.pipeline import sense, sense_blocks
from iotsense.simulator import (Distribution, TrafficSpec, generate_traffic, roc_sweep,
                                simulate_ctmc, synthesize_psd, thresholds_for_pfa)
from iotsense.spectrogram import SpectrogramConfig

sys.path.insert(0, str(Path(__file__).parent))
from oracles import brute_dbscan, same_partition  # noqa: E402

pytestmark = pytest.mark.acceptance


def report(n, ok, detail, started):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - started:.1f} s) {detail}"
    # under pytest -v the line would otherwise trail the test id
    lead = "\n" if "_pytest" in sys.modules else ""
    sys.__stdout__.write(lead + line + "\n")
    sys.__stdout__.flush()
    return ok


def criterion_1():
    t = time.perf_counter()
    worst = 0.0
    parts = []
    for name, (psi, tau, lam, quoted) in MEASURED_SITES.items():
        g = normalized_traffic(lam, psi, tau)
        worst = max(worst, abs(g - quoted))
        parts.append(f"{name} G={g:.4f}/{quoted}")
    return report(1, worst <= 0.005, "; ".join(parts), t)


def criterion_2():
    t = time.perf_counter()
    cfg = SpectrogramConfig(window_size=15000, averaging=10)
    fs = 30e6
    got = (cfg.time_resolution(fs), cfg.frequency_resolution(fs), cfg.dft_points)
    ok = got == (0.5e-3, 20e3, 1500)
    return report(2, ok, f"dt={got[0]} df={got[1]} N_f={got[2]}", t)


def criterion_3():
    t = time.perf_counter()
    spec = TrafficSpec(arrival_rate=0, duration=50, band=2e6, seed=3)  # 100000 x 100 cells
    psd = synthesize_psd(generate_traffic(spec), spec)
    n = psd.values.size
    ok, parts = n >= 10**7, []
    for p_f in (1e-3, 1e-4):
        theta = float(thresholds_for_pfa([p_f], spec.noise_power)[0])
        rate = float(binarize(psd, theta).bits.mean())
        sigma = math.sqrt(p_f * (1 - p_f) / n)
        z = (rate - p_f) / sigma
        ok &= abs(z) <= 3
        parts.append(f"p_f={p_f:g}: {rate:.3e} ({z:+.2f} sigma)")
    return report(3, ok, f"{n} cells; " + "; ".join(parts), t)


ROC_PF = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4, 1e-5]


def roc_points():
    spec = TrafficSpec(duration=10, band=1e6, frame_count=20, min_gap=10, seed=0)
    return spec, roc_sweep(spec, thresholds_for_pfa(ROC_PF, spec.noise_power), [-5, 0, 5])


def dominance_failures(points):
    """ED points inside the framework's measured p_f range with no dominating framework point."""
    bad = []
    for snr in sorted({p.snr_db for p in points}):
        pts = [p for p in points if p.snr_db == snr]
        lo, hi = min(p.pfa_fw for p in pts), max(p.pfa_fw for p in pts)
        for e in pts:
            if not lo <= e.pfa_ed <= hi:
                continue
            if not any(f.pfa_fw <= e.pfa_ed and f.frame_pd_fw >= e.frame_pd_ed for f in pts):
                bad.append((snr, e.pfa_ed, e.frame_pd_ed))
    return bad


def criterion_4():
    t = time.perf_counter()
    spec, points = roc_points()
    worst, n_cmp = 0.0, 0
    for p in points:
        pf = analytic_pfa(p.threshold, spec.noise_power)
        pd = analytic_pd_rayleigh(p.threshold, spec.noise_power, 10 ** (p.snr_db / 10))
        for got, want, n in ((p.pfa_ed, pf, p.n_idle), (p.pd_ed, pd, p.n_busy)):
            sigma = math.sqrt(max(want * (1 - want), 1e-300) / n)
            worst = max(worst, abs(got - want) / sigma)
            n_cmp += 1
    cells = points[0].n_idle + points[0].n_busy
    bad = dominance_failures(points)
    ok = worst <= 3 and not bad and cells >= 10**6
    detail = (f"{cells} cells; {n_cmp} analytic comparisons, worst {worst:.2f} sigma; "
              f"dominance failures {bad}")
    return report(4, ok, detail, t)


def match_frames(truth_frames, est_frames):
    """First estimated box covering >= 50% of each true frame; returns (recovered, false)."""
    used = set()
    recovered = 0
    for fr in truth_frames:
        for i, e in enumerate(est_frames):
            rows = min(fr.row1, e.row1) - max(fr.row0, e.row0) + 1
            cols = min(fr.col1, e.col1) - max(fr.col0, e.col0) + 1
            if rows > 0 and cols > 0 and rows * cols >= 0.5 * fr.cells:
                used.add(i)
                if abs(e.rows - fr.rows) <= 1 and abs(e.cols - fr.cols) <= 1:
                    recovered += 1
                break
    return recovered, len(est_frames) - len(used)


def criterion_5(seed=0):
    t = time.perf_counter()
    spec = TrafficSpec(duration=30, band=5e6, snr_db=10, frame_count=200, min_gap=10,
                       averaging=10, seed=seed)
    noise_spec = TrafficSpec(arrival_rate=0, duration=5, band=5e6, averaging=10, seed=seed + 1000)
    noise = synthesize_psd(generate_traffic(noise_spec), noise_spec)
    theta = threshold_from_pfa(calibrate_noise(noise), 1e-4)
    truth = generate_traffic(spec)
    res = sense(synthesize_psd(truth, spec), theta)
    rec, false = match_frames(truth.frames, res.frames.frames)
    n = len(truth.frames)
    ok = rec >= 0.99 * n and false <= 0.01 * n
    return report(5, ok, f"{rec}/{n} frames within one cell, {false} false frames", t)


def criterion_6():
    t = time.perf_counter()
    psi, tau, dt = 0.02, 7.85e-3, 0.5e-3
    passes, errs = 0, []
    for seed in range(20):
        states = simulate_ctmc(psi, tau, 60.0, dt, seed=seed)
        model, _ = fit_temporal_model(states[:, None], dt, max_lag=50e-3)
        e_tau = model.tau_corr / tau - 1
        e_psi = model.duty_cycle / psi - 1
        errs.append((e_tau, e_psi))
        passes += abs(e_tau) <= 0.10 and abs(e_psi) <= 0.10
    e = np.abs(np.array(errs))
    detail = (f"{passes}/20 seeds within 10% (need 18); "
              f"median |err| tau {np.median(e[:, 0]):.1%}, psi {np.median(e[:, 1]):.1%}")
    return report(6, passes >= 18, detail, t)


def criterion_7():
    t = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_ck = worst_exp = 0.0
    for _ in range(1000):
        psi = rng.uniform(0.001, 0.999)
        tau_c = 10 ** rng.uniform(-4, 0)
        s, u = rng.uniform(0, 5 * tau_c, 2)
        p = lambda x: transition_probabilities(psi, tau_c, x)  # noqa: E731
        worst_ck = max(worst_ck, np.abs(p(s + u) - p(s) @ p(u)).max())
        worst_exp = max(worst_exp, np.abs(expm(generator_matrix(psi, tau_c) * s) - p(s)).max())
    ok = worst_ck <= 1e-6 and worst_exp <= 1e-6
    return report(7, ok, f"max Chapman-Kolmogorov err {worst_ck:.1e}, max expm err {worst_exp:.1e}", t)


def criterion_8():
    t = time.perf_counter()
    rng = np.random.default_rng(8)
    same = 0
    for _ in range(100):
        n = int(rng.integers(1, 301))
        if rng.random() < 0.5:
            xy = rng.uniform(0, 30, (n, 2))
        else:  # lattice points as produced by the grid mapping
            xy = rng.integers(0, 40, (n, 2)) * (1.0, 0.5)
        mu, eps = int(rng.integers(1, 8)), float(rng.uniform(0.3, 4))
        ref, _ = brute_dbscan(xy, mu, eps)
        same += same_partition(dbscan(xy, DbscanParams(mu, eps)).labels, ref)
    return report(8, same == 100, f"{same}/100 partitions identical", t)


def criterion_9(seed=0):
    t = time.perf_counter()
    lam, dur = 57.86, 100.0
    spec = TrafficSpec(arrival_rate=lam, duration=dur, band=13e6, snr_db=10, averaging=10,
                       seed=seed, toa=Distribution("uniform", (0.002, 0.01)),
                       bandwidth=Distribution("uniform", (40e3, 125e3)))
    truth = generate_traffic(spec)
    theta = float(gamma.isf(1e-4, spec.averaging, scale=spec.noise_power / spec.averaging))
    blocks = (synthesize_psd(truth, spec, r, r + 20000) for r in range(0, spec.rows, 20000))
    res = sense_blocks(blocks, theta, keep_grids=False, time_span=dur)
    fit = arrival_rate_vs_bandwidth(res.frames, n_cols=spec.cols, time_span=dur, df=spec.df)
    tol = 3 * math.sqrt(lam * dur) / dur
    err = fit.lambda_B - lam
    detail = (f"lambda(B)={fit.lambda_B:.2f} (err {err:+.2f}, tol {tol:.3f}); "
              f"{len(truth.frames)} true frames; fit MSE {fit.mse:.3g}")
    return report(9, abs(err) <= tol, detail, t)


def _cli(args, env):
    return subprocess.run([sys.executable, "-m", "iotsense", *args], env=env,
                          capture_output=True, text=True)


def criterion_10(tmp):
    t = time.perf_counter()
    tmp = Path(tmp)
    cfg = tmp / "cfg.json"
    cfg.write_text(json.dumps({
        "simulator": {"duration": 2.0, "band": 1e6, "arrival_rate": 10, "seed": 5},
        "spectrogram": {"window_size": 500, "averaging": 10},
        "roc": {"p_f": [1e-1, 1e-2, 1e-3], "snr_db": [0, 5]},
    }))
    env = dict(os.environ, SOURCE_DATE_EPOCH="1700000000")
    mismatched = []
    for cmd in (["simulate"], ["simulate", "--iq"], ["roc"]):
        outs = []
        for k in range(2):
            out = tmp / f"{'_'.join(cmd)}_{k}"
            r = _cli([cmd[0], "-c", str(cfg), "-o", str(out), *cmd[1:]], env)
            if r.returncode:
                mismatched.append(f"{cmd}: exit {r.returncode} {r.stderr.strip()[-200:]}")
            outs.append(out)
        a = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
        b = sorted(p.relative_to(outs[1]) for p in outs[1].rglob("*") if p.is_file())
        if a != b or not a:
            mismatched.append(f"{cmd}: file lists differ")
            continue
        mismatched += [f"{cmd}: {p}" for p in a
                       if (outs[0] / p).read_bytes() != (outs[1] / p).read_bytes()]
    return report(10, not mismatched, f"differences: {mismatched}", t)


def test_criterion_1(capsys):
    # let the PASS/FAIL line through pytest's capture
    with capsys.disabled():
        assert criterion_1()


def test_criterion_2(capsys):
    with capsys.disabled():
        assert criterion_2()


def test_criterion_3(capsys):
    with capsys.disabled():
        assert criterion_3()


def test_criterion_4(capsys):
    with capsys.disabled():
        assert criterion_4()


def test_criterion_5(capsys):
    with capsys.disabled():
        assert criterion_5()


def test_criterion_6(capsys):
    with capsys.disabled():
        assert criterion_6()


def test_criterion_7(capsys):
    with capsys.disabled():
        assert criterion_7()


def test_criterion_8(capsys):
    with capsys.disabled():
        assert criterion_8()


def test_criterion_9(capsys):
    with capsys.disabled():
        assert criterion_9()


def test_criterion_10(tmp_path, capsys):
    with capsys.disabled():
        assert criterion_10(tmp_path)


if __name__ == "__main__":
    import tempfile

    results = [criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(),
               criterion_6(), criterion_7(), criterion_8(), criterion_9()]
    with tempfile.TemporaryDirectory() as d:
        results.append(criterion_10(d))
    print(f"{sum(results)}/10 criteria pass")
