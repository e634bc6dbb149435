"""Command-line scenario runner.

Usage::

    bidirq --scenario scatter-sweep --input model.json --out results/

Every run writes its tables plus ``manifest.json`` (input hash, package
versions, tolerances, checks, wall time) into the output directory, which
defaults to ``$BIDIRQ_OUT_DIR`` or ``./bidirq-out``.  ``--input`` also
accepts ``builtin:<name>`` for the example files shipped with the package.

Exit status: 0 all checks passed, 1 a check failed, 2 usage error,
3 unreadable or invalid input file, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata, resources
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from bidirq.dynamics import propagator, segment_propagators
from bidirq.errors import BidirqError, InsufficientGrid, ModelFileError
from bidirq.iomap import IOState, io_transform, normalize_input, star_product, two_point_trajectory
from bidirq.krein import BlockOperator, maxabs, pseudo_hermitian_residual
from bidirq.modelfile import (
    build_setup,
    grid,
    load_cross_section,
    load_model,
    load_vacuum,
    schema_errors,
)
from bidirq.models import (
    cross_sections,
    cross_sections_from_length,
    discriminant,
    vacuum_asymptotics,
    vacuum_decay_fit,
    vacuum_expectations,
    vacuum_hamiltonian,
    vacuum_solution,
)
from bidirq.scattering import PoleHitWarning, on_shell, open_channels, transition_rate, unitarity_defect

SCENARIOS = ("io-demo", "scatter-sweep", "rate-check", "vacuum", "cross-section", "validate")
EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    input: str
    out_dir: Optional[str] = None
    eps: Optional[float] = None
    tol: Optional[float] = None
    grid: Optional[tuple] = None  # (start, stop, num)
    format: str = "csv"
    threads: int = 1

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise UsageError(f"unknown scenario {self.scenario!r}")
        if self.format not in ("csv", "json"):
            raise UsageError("format must be csv or json")
        if self.threads < 1:
            raise UsageError("threads must be >= 1")
        if self.eps is not None and not self.eps > 0:
            raise UsageError("eps must be positive")
        if self.tol is not None and not self.tol > 0:
            raise UsageError("tol must be positive")


@dataclass
class Check:
    name: str
    passed: bool
    value: float = float("nan")
    tolerance: float = float("nan")
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.value = float(self.value)
        self.tolerance = float(self.tolerance)


@dataclass
class RunResult:
    checks: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


# --------------------------------------------------------------------------
# helpers


def resolve_input(spec: str) -> Path:
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        if not name.endswith(".json"):
            name += ".json"
        path = resources.files("bidirq") / "data" / name
        if not path.is_file():
            raise UsageError(f"no shipped example named {name!r}")
        return Path(str(path))
    return Path(spec)


def builtin_examples():
    return sorted(p.name for p in (resources.files("bidirq") / "data").iterdir() if p.name.endswith(".json"))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _json_value(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else _fmt(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_table(out_dir: Path, stem: str, columns, rows, fmt: str, result: RunResult):
    path = out_dir / f"{stem}.{fmt}"
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    else:
        data = [{c: _json_value(v) for c, v in zip(columns, row)} for row in rows]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"columns": list(columns), "rows": data}, fh, indent=1)
            fh.write("\n")
    result.outputs.append(path.name)
    return path


def _grid_override(cfg: ScenarioConfig, default):
    if cfg.grid is None:
        g = np.asarray(default, dtype=float)
    else:
        start, stop, num = cfg.grid
        g = np.linspace(start, stop, int(num))
    if g.size == 0:
        raise UsageError("the grid is empty")
    if g.size > 1 and np.any(np.diff(g) <= 0):
        raise UsageError("the grid must be strictly increasing")
    return g


def _parse_grid(text):
    try:
        start, stop, num = text.split(":")
        return float(start), float(stop), int(num)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("grid must be START:STOP:NUM") from exc


# --------------------------------------------------------------------------
# scenarios


def _scatter_sweep(cfg, path, out, result):
    setup = load_model(path)
    energies = _grid_override(cfg, setup.energies)
    eps = cfg.eps if cfg.eps is not None else setup.default_eps
    model, h1 = setup.model, setup.h1
    has_band = any(ch.kind == "band" for ch in model.channels)
    tol = cfg.tol if cfg.tol is not None else 1e-8
    result.tolerances.update(eps=eps, unitarity=tol)

    def at(E):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PoleHitWarning)
            if not open_channels(model, E):
                return E, None, None
            sh = on_shell(model, h1, E, eps)
            halving = None
            if has_band:
                halving = [unitarity_defect(model, h1, E, eps * f) for f in (1.0, 0.5, 0.25)]
            return E, sh, halving

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        results = list(pool.map(at, energies))

    rows, summary = [], []
    worst, monotone, skipped = 0.0, True, 0
    for E, sh, halving in results:
        if sh is None:
            skipped += 1
            continue
        S = sh.s
        k = len(S)
        u = max(maxabs(S @ S.conj().T - np.eye(k)), maxabs(S.conj().T @ S - np.eye(k)))
        worst = max(worst, u)
        for i, out_ch in enumerate(sh.channels):
            for j, in_ch in enumerate(sh.channels):
                rows.append((E, out_ch.name, in_ch.name, S[i, j].real, S[i, j].imag, abs(S[i, j]) ** 2))
        defect = maxabs(sh.defect)
        if halving is not None:
            monotone &= halving[0] > halving[1] > halving[2]
        summary.append((E, k, u, defect) + (tuple(halving) if halving else (np.nan,) * 3))
    if skipped:
        result.notes.append(f"{skipped} energies had no open channel and were skipped")
    if not rows:
        raise UsageError("no energy in the grid has an open channel")
    write_table(out, "s_matrix", ("energy", "out_channel", "in_channel", "re", "im", "abs2"), rows, cfg.format, result)
    write_table(
        out,
        "unitarity",
        ("energy", "n_open", "unitarity_error", "defect", "defect_eps", "defect_eps_half", "defect_eps_quarter"),
        summary,
        cfg.format,
        result,
    )
    if has_band:
        result.checks.append(Check("defect decreases under eps halving", bool(monotone)))
    else:
        result.checks.append(Check("S unitarity", worst <= tol, worst, tol))


def _rate_check(cfg, path, out, result):
    setup = load_model(path)
    rc = setup.document.get("rate_check")
    if rc is None:
        raise ModelFileError("model has no 'rate_check' section", where="$.rate_check")
    eps = cfg.eps if cfg.eps is not None else setup.default_eps
    tol = cfg.tol if cfg.tol is not None else rc.get("tolerance", 0.05)
    times = _grid_override(cfg, grid(rc["times"]))
    if times.size < 2:
        raise UsageError("rate check needs at least two times")
    result.tolerances.update(eps=eps, relative=tol)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PoleHitWarning)
        rate = transition_rate(setup.model, setup.h1, rc["energy"], rc["source"], rc["target"], eps)
    labels = list(setup.labels)
    if rc["source"] not in labels:
        raise ModelFileError("rate_check source must be a state label", where="$.rate_check.source")
    src = labels.index(rc["source"])
    H = BlockOperator(setup.h0.data + setup.h1.data, setup.signature)

    def prob(t):
        u = io_transform(propagator(H, 0.0, t)).data
        return 1.0 - abs(u[src, src]) ** 2

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        probs = list(pool.map(prob, times))
    slope = float(np.polyfit(times, probs, 1)[0])
    rel = abs(slope - rate) / abs(rate) if rate else math.inf
    write_table(out, "probability", ("time", "transition_probability"), list(zip(times, probs)), cfg.format, result)
    write_table(
        out,
        "rate",
        ("energy", "eps", "formula_rate", "time_domain_slope", "relative_difference"),
        [(rc["energy"], eps, rate, slope, rel)],
        cfg.format,
        result,
    )
    result.checks.append(Check("golden rule vs time domain", rel <= tol, rel, tol))


def _io_demo(cfg, path, out, result):
    setup = load_model(path)
    demo = setup.document.get("io_demo", {"t_minus": 0.0, "t_plus": 1.0})
    sig, labels = setup.signature, list(setup.labels)
    t0, t1 = float(demo["t_minus"]), float(demo["t_plus"])
    if not t1 > t0:
        raise ModelFileError("need t_plus > t_minus", where="$.io_demo")
    nseg = int(cfg.grid[2]) if cfg.grid is not None else int(demo.get("segments", 10))
    if nseg < 1:
        raise UsageError("the grid is empty")
    vec = np.zeros(sig.n, dtype=complex)
    spec = demo.get("input") or {labels[0]: 1.0}
    for lab, v in spec.items():
        if lab not in labels:
            raise ModelFileError(f"unknown state label {lab!r}", where=f"$.io_demo.input.{lab}")
        vec[labels.index(lab)] = complex(v[0], v[1]) if isinstance(v, list) else complex(v)
    inp = normalize_input(IOState(vec[sig.forward], vec[sig.backward]))
    tol = cfg.tol if cfg.tol is not None else 1e-10
    result.tolerances.update(unitarity=tol, eta_norm_drift=1e-8)
    H = BlockOperator(setup.h0.data + setup.h1.data, sig)
    times = np.linspace(t0, t1, nseg + 1)
    segs = segment_propagators(H, times)
    u = io_transform(segs[0])
    for seg in segs[1:]:
        u = star_product(u, io_transform(seg))
    uerr = max(maxabs(u.data.conj().T @ u.data - np.eye(sig.n)), maxabs(u.data @ u.data.conj().T - np.eye(sig.n)))
    states = two_point_trajectory(segs, inp)
    eta_norms = np.einsum("ki,i,ki->k", states.conj(), sig.signs, states).real
    output = u.data @ inp.stacked
    rows = []
    for k, t in enumerate(times):
        for i, lab in enumerate(labels):
            rows.append((t, lab, states[k, i].real, states[k, i].imag))
    write_table(out, "trajectory", ("time", "state", "re", "im"), rows, cfg.format, result)
    write_table(out, "eta_norm", ("time", "eta_norm"), list(zip(times, eta_norms)), cfg.format, result)
    io_rows = [("input", lab, inp.stacked[i].real, inp.stacked[i].imag) for i, lab in enumerate(labels)]
    io_rows += [("output", lab, output[i].real, output[i].imag) for i, lab in enumerate(labels)]
    write_table(out, "io", ("role", "state", "re", "im"), io_rows, cfg.format, result)
    drift = float(np.abs(eta_norms - eta_norms[0]).max())
    norm_err = abs(np.linalg.norm(output) - 1.0)
    result.checks.append(Check("io map unitarity", uerr <= tol, uerr, tol))
    result.checks.append(Check("output norm", norm_err <= tol, norm_err, tol))
    result.checks.append(Check("eta-norm conservation", drift <= 1e-8, drift, 1e-8))


def _vacuum(cfg, path, out, result):
    setup = load_vacuum(path)
    p = setup.params
    taus = _grid_override(cfg, setup.taus)
    if np.any(taus <= 0):
        raise UsageError("tau values must be positive")
    if not discriminant(p.couplings) < 0:
        raise ModelFileError("vacuum closed form needs a negative discriminant", where="$.couplings")
    rate = p.decay_rate
    rows = []
    for tau in taus:
        q = p.with_tau(float(tau))
        i_av, h_av = vacuum_expectations(q)
        i_as, h_as = vacuum_asymptotics(q)
        rows.append((tau, rate * tau, i_av, h_av, i_as, h_as, math.exp(-rate * tau)))
    write_table(
        out,
        "vacuum_sweep",
        ("tau", "mu_e1_tau", "I_av", "H_av", "I_asymptotic", "H_asymptotic", "envelope"),
        rows,
        cfg.format,
        result,
    )

    q = p.with_tau(float(taus[-1]))
    ts = np.linspace(0.0, q.tau, setup.samples)
    pf, pb = vacuum_solution(q, ts)
    i_av, h_av = vacuum_expectations(q)
    traj = [(t, a.real, a.imag, b.real, b.imag, i_av, h_av) for t, a, b in zip(ts, pf, pb)]
    write_table(out, "vacuum_trajectory", ("t", "phi_f_re", "phi_f_im", "phi_b_re", "phi_b_im", "I_av", "H_av"), traj, cfg.format, result)

    tol = cfg.tol if cfg.tol is not None else 1e-10
    result.tolerances.update(bvp=tol, decay_fit_relative=0.01)
    if rate * q.tau <= 30:
        M, _ = vacuum_hamiltonian(q)
        n = max(setup.samples - 1, int(math.ceil(2 * rate * q.tau)))
        grid_t = np.linspace(0.0, q.tau, n + 1)
        inp = IOState([math.cos(q.theta)], [np.exp(1j * q.psi) * math.sin(q.theta)])
        states = two_point_trajectory(segment_propagators(M, grid_t), inp)
        cf, cb = vacuum_solution(q, grid_t)
        dev = max(maxabs(states[:, 0] - cf), maxabs(states[:, 1] - cb))
        result.checks.append(Check("closed form vs boundary-value solve", dev <= tol, dev, tol))
    else:
        result.notes.append("boundary-value comparison skipped: mu E1 tau > 30")
    try:
        fit = vacuum_decay_fit(p, taus)
    except InsufficientGrid as exc:
        result.notes.append(f"decay fit skipped: {exc}")
    else:
        err_i, err_h = fit.relative_errors
        write_table(
            out,
            "decay_fit",
            ("quantity", "fitted_rate", "expected_rate", "relative_error"),
            [("I_av", fit.rate_identity, rate, err_i), ("H_av", fit.rate_hamiltonian, rate, err_h)],
            cfg.format,
            result,
        )
        result.checks.append(Check("decay rate of I_av", err_i <= 0.01, err_i, 0.01))
        result.checks.append(Check("decay rate of H_av", err_h <= 0.01, err_h, 0.01))


def _cross_section(cfg, path, out, result):
    setup = load_cross_section(path)
    c = setup.couplings
    rows = []
    if setup.lengths is not None:
        xs = _grid_override(cfg, np.sort(setup.lengths)) if cfg.grid else setup.lengths
        if xs.size == 0:
            raise UsageError("the grid is empty")
        for L in xs:
            s = cross_sections_from_length(c, float(L))
            rows.append((L, s.ff, s.bb, s.bf, s.fb))
        cols = ("hbar_c_over_e_cm_m", "sigma_ff_m2", "sigma_bb_m2", "sigma_bf_m2", "sigma_fb_m2")
    else:
        xs = _grid_override(cfg, np.sort(setup.e_cm)) if cfg.grid else setup.e_cm
        if xs.size == 0:
            raise UsageError("the grid is empty")
        for E in xs:
            s = cross_sections(c, float(E))
            rows.append((E, s.ff, s.bb, s.bf, s.fb))
        cols = ("e_cm_joule", "sigma_ff_m2", "sigma_bb_m2", "sigma_bf_m2", "sigma_fb_m2")
    write_table(out, "cross_sections", cols, rows, cfg.format, result)
    ok = all(np.isfinite(r[1:]).all() and min(r[1:]) >= 0 for r in rows)
    result.checks.append(Check("cross sections finite and non-negative", bool(ok)))


def validate_model(path) -> dict:
    """Run schema and physics checks on a model or parameter file.

    Returns ``{"file", "format", "passed", "checks": [{"name", "passed", "detail"}]}``;
    never raises for a bad file.
    """
    path = Path(path)
    report = {"file": str(path), "format": None, "passed": False, "checks": []}

    def add(name, ok, detail=""):
        report["checks"].append({"name": name, "passed": bool(ok), "detail": detail})
        return ok

    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        add("readable", False, str(exc))
        return report
    except json.JSONDecodeError as exc:
        add("parse", False, f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}")
        return report
    add("parse", True)
    fmt = doc.get("format") if isinstance(doc, dict) else None
    report["format"] = fmt
    errors = schema_errors(doc)
    if errors:
        for where, msg in errors:
            add("schema", False, f"{where}: {msg}")
        return report
    add("schema", True)
    if fmt == "bidirq-model":
        try:
            setup = build_setup(doc)
        except ModelFileError as exc:
            add("model construction", False, str(exc))
            return report
        sig = setup.signature
        add("signature", sig.n == len(setup.labels), f"n_forward={sig.n_forward}, n_backward={sig.n_backward}")
        r0 = pseudo_hermitian_residual(setup.h0)
        add("H0 pseudo-Hermitian", r0 <= 1e-10 * max(1.0, maxabs(setup.h0.data)), f"residual {r0:.3g}")
        r1 = pseudo_hermitian_residual(setup.h1)
        add(
            "H1 block pattern (Hermitian diagonal blocks, H_FB = -H_BF^dag)",
            r1 <= 1e-10 * max(1.0, maxabs(setup.h1.data)),
            f"residual {r1:.3g}",
        )
        m = setup.model
        lam = np.diag(m.eigenvalues)
        err_h = maxabs(m.basis_transform @ lam @ m._inverse - setup.h0.data)
        err_eta = maxabs(m.basis_transform.conj().T @ (sig.signs[:, None] * m.basis_transform) - m.eta_canonical())
        add("canonical form", max(err_h, err_eta) <= 1e-9, f"residuals {err_h:.3g}, {err_eta:.3g}")
    elif fmt == "bidirq-vacuum":
        c = doc["couplings"]
        d = (c["zeta_f"] - c["zeta_b"]) ** 2 / 4 - c["xi"] ** 2
        add("negative discriminant", d < 0, f"D = {d:.17g}")
    report["passed"] = all(ch["passed"] for ch in report["checks"])
    return report


def _validate(cfg, path, out, result):
    report = validate_model(path)
    with open(out / "validation.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    result.outputs.append("validation.json")
    for ch in report["checks"]:
        result.checks.append(Check(ch["name"], ch["passed"], detail=ch["detail"]))


RUNNERS = {
    "io-demo": _io_demo,
    "scatter-sweep": _scatter_sweep,
    "rate-check": _rate_check,
    "vacuum": _vacuum,
    "cross-section": _cross_section,
    "validate": _validate,
}


def _versions():
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"bidirq": own, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def run_scenario(cfg: ScenarioConfig, stream=sys.stderr) -> int:
    """Run one scenario, write its artifacts and manifest, and return the exit status."""
    start = time.perf_counter()
    path = resolve_input(cfg.input)
    out = Path(cfg.out_dir or os.environ.get("BIDIRQ_OUT_DIR") or "bidirq-out")
    result = RunResult()
    error = None
    try:
        if not path.is_file():
            raise ModelFileError("input file does not exist", where=str(path))
        out.mkdir(parents=True, exist_ok=True)
        RUNNERS[cfg.scenario](cfg, path, out, result)
        status = EXIT_OK if result.passed else EXIT_CHECK
    except UsageError as exc:
        error, status = f"usage error: {exc}", EXIT_USAGE
    except ModelFileError as exc:
        error, status = f"{type(exc).__name__}: {exc}", EXIT_INPUT
    except BidirqError as exc:
        error, status = f"{type(exc).__name__}: {exc}", EXIT_NUMERIC
    digest = hashlib.sha256(path.read_bytes()).hexdigest() if path.is_file() else None
    manifest = {
        "scenario": cfg.scenario,
        "input": str(path),
        "input_sha256": digest,
        "format": cfg.format,
        "threads": cfg.threads,
        "versions": _versions(),
        "tolerances": result.tolerances,
        "checks": [
            {"name": c.name, "passed": c.passed, "value": _json_value(c.value), "tolerance": _json_value(c.tolerance), "detail": c.detail}
            for c in result.checks
        ],
        "notes": result.notes,
        "outputs": result.outputs,
        "error": error,
        "exit_status": status,
        "wall_time_s": time.perf_counter() - start,
    }
    if out.is_dir():
        with open(out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1)
            fh.write("\n")
    for c in result.checks:
        mark = "PASS" if c.passed else "FAIL"
        extra = "" if math.isnan(c.value) else f" ({c.value:.3g} vs {c.tolerance:.3g})"
        print(f"{mark} {c.name}{extra}", file=stream)
        if c.detail and not c.passed:
            print(f"     {c.detail}", file=stream)
    for note in result.notes:
        print(f"note: {note}", file=stream)
    if error:
        print(error, file=stream)
    return status


def build_parser():
    ap = argparse.ArgumentParser(prog="bidirq", description="Bidirectional-time quantum dynamics scenarios.")
    ap.add_argument("--scenario", choices=SCENARIOS, help="what to run")
    ap.add_argument("--input", help="model or parameter file, or builtin:<name>")
    ap.add_argument("--out", help="output directory (default: $BIDIRQ_OUT_DIR or ./bidirq-out)")
    ap.add_argument("--eps", type=float, help="resolvent regularization")
    ap.add_argument("--tol", type=float, help="override the scenario's pass/fail tolerance")
    ap.add_argument("--grid", type=_parse_grid, help="override the sweep grid as START:STOP:NUM")
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--list-examples", action="store_true", help="list shipped example files and exit")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.list_examples:
        for name in builtin_examples():
            print(f"builtin:{name[:-5]}")
        return EXIT_OK
    if not args.scenario or not args.input:
        ap.print_usage(sys.stderr)
        print("bidirq: error: --scenario and --input are required", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = ScenarioConfig(args.scenario, args.input, args.out, args.eps, args.tol, args.grid, args.format, args.threads)
        return run_scenario(cfg)
    except UsageError as exc:
        print(f"bidirq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
