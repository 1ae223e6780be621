"""Experiment runner and verification harness.

Subcommands:

* verify         -- run the built-in invariant suite, emit a JSON report
* risk-gap       -- collective vs measure-then-apply risk over a range of n (CSV)
* definetti      -- de Finetti approximation error for a product family (CSV)
* classical-demo -- classifier-mixture pipeline on a random protocol (JSON)
* gen-channel    -- sample a random non-signalling Choi state (JSON)

Exit codes: 0 success, 1 a verification check failed, 2 bad configuration.
Identical configurations produce byte-identical outputs; randomness only
enters through explicit seeds (numpy's seeded default generator, PCG64).
"""

from __future__ import annotations

import argparse
import io
import json
import sys

import numpy as np

from . import __version__
from .channels import (
    choi_of_global_kraus,
    choi_of_kraus,
    is_cptp,
    is_nonsignalling,
    marginal_channel,
    measure_and_prepare_choi,
    random_nonsignalling_choi,
)
from .classical import (
    classical_expected_risk,
    is_nonsignalling_classical,
    lemma1_pipeline,
    random_nonsignalling_protocol,
)
from .definetti import (
    approx_error,
    branch_extension,
    build_grid,
    definetti_bound,
    extract_measure,
)
from .locc import operator_chebyshev, repair_distance_bound, tp_repair
from .risk import classification_task, risk_gap_experiment
from .tensor_core import Factorization, Operator, operator_to_json, partial_trace, op


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 2


def _load_config(args) -> dict:
    cfg = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
    # explicit flags override file values
    for key in ("seed", "out", "grid", "tol", "n"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    for key, val in vars(args).items():
        if key not in cfg and val is not None:
            cfg[key] = val
    return cfg


def _parse_n_range(spec) -> list[int]:
    if isinstance(spec, int):
        return [spec]
    if isinstance(spec, list):
        return [int(v) for v in spec]
    text = str(spec)
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",")]


def _write(out_path: str | None, text: str):
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def _check(name: str, lhs: float, rhs: float, ok: bool | None = None) -> dict:
    if ok is None:
        ok = bool(lhs <= rhs)
    return {"name": name, "ok": bool(ok), "lhs": float(lhs), "rhs": float(rhs)}


def _verify_checks(seed: int) -> list[dict]:
    rng = np.random.default_rng(seed)
    checks = []

    # Choi action equals the Kraus sum
    g = rng.standard_normal((4, 2, 2)) + 1j * rng.standard_normal((4, 2, 2))
    norm = sum(k.conj().T @ k for k in g)
    w, v = np.linalg.eigh(norm)
    fix = (v * (1 / np.sqrt(w))) @ v.conj().T
    kraus = [k @ fix for k in g]
    ch = choi_of_kraus(kraus, 2, 2)
    rho = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    rho = rho @ rho.conj().T
    rho /= np.trace(rho).real
    from .channels import apply_channel
    from .tensor_core import tensor
    rho_full = tensor(op(np.eye(1), ("A", 1)), op(rho, ("X1", 2)))
    out = apply_channel(ch, rho_full)
    expect = sum(k @ rho @ k.conj().T for k in kraus)
    checks.append(_check("choi_matches_kraus",
                         float(np.abs(out.matrix - expect).max()), 1e-10))

    # non-signalling detection, positive and negative control
    povm = [op(np.diag([1.0, 0.0]), ("A", 2)), op(np.diag([0.0, 1.0]), ("A", 2))]
    preps = [op(np.eye(4) / 4, ("X1", 2), ("Y1", 2))] * 2
    mp = measure_and_prepare_choi(povm, preps, 2)
    checks.append(_check("measure_prepare_nonsignalling",
                         is_nonsignalling(mp).max_residual, 1e-10))
    swap = np.zeros((4, 4), dtype=complex)
    for i in range(2):
        for j in range(2):
            swap[j * 2 + i, i * 2 + j] = 1
    crossing = choi_of_global_kraus([swap], 2, 2, n=2)
    res = is_nonsignalling(crossing).max_residual
    checks.append(_check("output_crossing_detected", 0.5, res, ok=res >= 0.5))

    # trace-preserving repair distance guarantee
    worst = (0.0, 0.0)
    for _ in range(50):
        m = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        m = m @ m.conj().T
        m /= np.trace(m).real
        phi = op(m, ("X1", 2), ("Y1", 2))
        lhs, rhs = repair_distance_bound(phi)
        if lhs - rhs > worst[0] - worst[1]:
            worst = (lhs, rhs)
    checks.append(_check("repair_distance_bound", worst[0], worst[1] + 1e-9))

    # operator Chebyshev on the two-projector ensemble
    emp, bnd = operator_chebyshev(
        [(np.diag([1.0, 0.0]), 0.5), (np.diag([0.0, 1.0]), 0.5)], 0.4)
    checks.append(_check("operator_chebyshev", emp, bnd + 1e-9))

    # classifier-mixture pipeline preserves the risk exactly
    dist = np.array([[0.3, 0.2], [0.1, 0.4]])
    worst_gap = 0.0
    for s in range(5):
        p = random_nonsignalling_protocol(2, 2, 2, 2, seed=seed + s)
        rec, _ = lemma1_pipeline(p)
        for a in range(2):
            worst_gap = max(worst_gap, abs(
                classical_expected_risk(p, dist, a)
                - classical_expected_risk(rec, dist, a)))
    checks.append(_check("classical_mixture_risk_equality", worst_gap, 1e-12))

    # de Finetti k=0 identity on a small branch extension
    sigma = np.array([[0.7, 0.1], [0.1, 0.3]], dtype=complex)
    site = np.outer([1.0, 0.0], [1.0, 0.0]).astype(complex)
    ext = branch_extension([(sigma, site)], n=4)
    grid = build_grid(4, 4, mode="haar", seed=seed, count=1200)
    ap = extract_measure(ext, grid)
    checks.append(_check("definetti_k0_identity", ap.povm_deficit,
                         ap.grid_residual + 1e-8))

    return checks


def cmd_verify(cfg: dict) -> int:
    seed = int(cfg.get("seed", 0))
    checks = _verify_checks(seed)
    if cfg.get("inject_signalling"):
        # negative-control fixture: a signalling channel must fail the gate
        swap = np.zeros((4, 4), dtype=complex)
        for i in range(2):
            for j in range(2):
                swap[j * 2 + i, i * 2 + j] = 1
        crossing = choi_of_global_kraus([swap], 2, 2, n=2)
        res = is_nonsignalling(crossing).max_residual
        checks.append(_check("injected_signalling_passes_gate", res, 1e-8))
    report = {"version": __version__, "seed": seed,
              "passed": all(c["ok"] for c in checks), "checks": checks}
    _write(cfg.get("out"), json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0 if report["passed"] else 1


# ---------------------------------------------------------------------------
# risk-gap
# ---------------------------------------------------------------------------

def _classification_family(overlap: float):
    """Fixed measure-then-classify family used by the risk-gap experiment."""
    v0 = np.array([1.0, 0.0])
    v1 = np.array([overlap, np.sqrt(1 - overlap ** 2)])
    rho0, rho1 = np.outer(v0, v0), np.outer(v1, v1)
    d, v = np.linalg.eigh(rho0 / 2 - rho1 / 2)
    p_plus = sum(np.outer(v[:, i], v[:, i].conj()) for i in range(2) if d[i] > 0)
    povm = [op(np.kron(p_plus, np.eye(2)), ("A", 4)),
            op(np.kron(np.eye(2) - p_plus, np.eye(2)), ("A", 4))]

    def classifier(basis):
        kr = [np.outer(np.eye(2)[y], basis[:, y].conj()) for y in range(2)]
        return partial_trace(choi_of_kraus(kr, 2, 2).omega, ["X1", "Y1"])

    preps = [classifier(v[:, ::-1]), classifier(v)]
    return rho0, rho1, povm, preps


def cmd_risk_gap(cfg: dict) -> int:
    overlap = float(cfg.get("overlap", 0.6))
    seed = int(cfg.get("seed", 0))
    ns = _parse_n_range(cfg.get("n", "1..4"))
    grid = cfg.get("grid") or f"haar:{seed}:2000"
    rho0, rho1, povm, preps = _classification_family(overlap)
    rows = []
    for n in sorted(ns):
        q = measure_and_prepare_choi(povm, preps, n)
        task = classification_task([0.5, 0.5], [rho0, rho1], n=n)
        rep = risk_gap_experiment(task, q, grid_spec=grid)
        rows.append((n, rep.risk_collective, rep.risk_locc, rep.gap,
                     rep.bound, rep.grid_residual, seed))
    buf = io.StringIO()
    buf.write("n,risk_collective,risk_locc,gap,bound,grid_residual,seed\n")
    for row in rows:
        buf.write("{},{:.12g},{:.12g},{:.12g},{:.12g},{:.12g},{}\n".format(*row))
    _write(cfg.get("out"), buf.getvalue())
    return 0


# ---------------------------------------------------------------------------
# definetti
# ---------------------------------------------------------------------------

def cmd_definetti(cfg: dict) -> int:
    seed = int(cfg.get("seed", 0))
    ns = _parse_n_range(cfg.get("n", [4, 8, 16, 32]))
    count = int(cfg.get("count", 5000))
    ks = _parse_n_range(cfg.get("k", [0, 1]))
    sigma = np.array([[1.0]], dtype=complex)
    site = np.outer([1.0, 0.0], [1.0, 0.0]).astype(complex)
    rows = []
    for n in sorted(ns):
        ext = branch_extension([(sigma, site)], n=n)
        grid = build_grid(4, n, mode="haar", seed=seed, count=count)
        ap = extract_measure(ext, grid)
        for k in sorted(ks):
            if k == 0:
                delta_k = ap.povm_deficit
            else:
                target = site
                for _ in range(k - 1):
                    target = np.kron(target, site)
                fac = Factorization.of(
                    ("A", 1), *((f"B{i}", 2) for i in range(1, k + 1)))
                omega_k = Operator(target, fac)
                delta_k = approx_error(omega_k, ap, k)
            rows.append((n, k, delta_k, definetti_bound(2, k, n),
                         ap.grid_residual))
    buf = io.StringIO()
    buf.write("n,k,delta_k,bound,grid_residual\n")
    for row in rows:
        buf.write("{},{},{:.12g},{:.12g},{:.12g}\n".format(*row))
    _write(cfg.get("out"), buf.getvalue())
    return 0


# ---------------------------------------------------------------------------
# classical-demo / gen-channel
# ---------------------------------------------------------------------------

def cmd_classical_demo(cfg: dict) -> int:
    seed = int(cfg.get("seed", 0))
    p = random_nonsignalling_protocol(2, 2, 2, 2, seed=seed)
    rec, mixes = lemma1_pipeline(p)
    dist = np.array([[0.3, 0.2], [0.1, 0.4]])
    report = {
        "seed": seed,
        "ns_deviation": is_nonsignalling_classical(p).max_deviation,
        "per_a": [],
    }
    for a in range(p.na):
        report["per_a"].append({
            "a": a,
            "risk_original": classical_expected_risk(p, dist, a),
            "risk_reconstructed": classical_expected_risk(rec, dist, a),
            "mixture_weights": {"".join(map(str, f)): float(w)
                                for f, w in zip(mixes[a].functions,
                                                mixes[a].weights)},
        })
    _write(cfg.get("out"), json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_gen_channel(cfg: dict) -> int:
    seed = int(cfg.get("seed", 0))
    n = _parse_n_range(cfg.get("n", 2))[0]
    d_a = int(cfg.get("d_a", 2))
    d_x = int(cfg.get("d_x", 2))
    d_y = int(cfg.get("d_y", 2))
    ch = random_nonsignalling_choi(d_a, d_x, d_y, n, seed=seed)
    payload = {
        "seed": seed, "d_a": d_a, "d_x": d_x, "d_y": d_y, "n": n,
        "cptp": {"psd_violation": is_cptp(ch).psd_violation,
                 "tp_violation": is_cptp(ch).tp_violation},
        "ns_residual": is_nonsignalling(ch).max_residual,
        "omega": operator_to_json(ch.omega),
    }
    _write(cfg.get("out"), json.dumps(payload, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="nslocc",
        description="non-signalling to measure-then-apply reduction toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")
    for name in ("verify", "risk-gap", "definetti", "classical-demo",
                 "gen-channel"):
        sp = sub.add_parser(name)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--config")
        sp.add_argument("--out")
        sp.add_argument("--grid")
        sp.add_argument("--tol", type=float)
        sp.add_argument("--n")
        if name == "risk-gap":
            sp.add_argument("--overlap", type=float)
        if name == "definetti":
            sp.add_argument("--count", type=int)
            sp.add_argument("--k")
        if name == "gen-channel":
            sp.add_argument("--d-a", dest="d_a", type=int)
            sp.add_argument("--d-x", dest="d_x", type=int)
            sp.add_argument("--d-y", dest="d_y", type=int)
        if name == "verify":
            sp.add_argument("--inject-signalling", dest="inject_signalling",
                            action="store_true", default=None)

    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 2
    try:
        cfg = _load_config(args)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(f"bad config: {exc}")
    handlers = {
        "verify": cmd_verify,
        "risk-gap": cmd_risk_gap,
        "definetti": cmd_definetti,
        "classical-demo": cmd_classical_demo,
        "gen-channel": cmd_gen_channel,
    }
    try:
        return handlers[args.command](cfg)
    except ValueError as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
