"""Command-line surface: verify, simulate, characteristics, mcf-compare.

Exit codes: 0 success, 1 verification failure, 2 config/validation error,
3 runtime blow-up.  With a fixed seed and thread count every output file and
report is byte-identical across runs.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import flux, mcf, minors, solver
from .minors import DomainError, enumerate_layout
from .solver import ConfigError, Grid, Mode
from .state import PrimitiveState

DEFAULT_VERIFY_SHAPES = ((1, 1), (2, 1), (1, 2), (2, 2), (2, 3), (3, 2), (3, 3))


# ---------------------------------------------------------------------------
# configuration


def _require_keys(obj: dict, allowed: dict, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{where}: unknown key '{key}'")
    for key, required in allowed.items():
        if required and key not in obj:
            raise ConfigError(f"{where}: missing key '{key}'")


def _finite(x, where: str) -> float:
    try:
        v = float(x)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number, got {x!r}") from None
    if not np.isfinite(v):
        raise ConfigError(f"{where}: value must be finite")
    return v


def _parse_modes(items, n: int, where: str) -> list[Mode]:
    if not isinstance(items, list):
        raise ConfigError(f"{where}: expected a list of modes")
    out = []
    for k, item in enumerate(items):
        _require_keys(item, {"component": True, "wave": True, "amplitude": True, "phase": False}, f"{where}[{k}]")
        wave = item["wave"]
        if not isinstance(wave, list) or len(wave) != n or any(int(w) != w for w in wave):
            raise ConfigError(f"{where}[{k}].wave: expected {n} integers")
        out.append(
            Mode(
                component=int(item["component"]),
                wave=tuple(int(w) for w in wave),
                amplitude=_finite(item["amplitude"], f"{where}[{k}].amplitude"),
                phase=_finite(item.get("phase", 0.0), f"{where}[{k}].phase"),
            )
        )
    return out


@dataclass
class RunConfig:
    """Validated simulate configuration (schema 1)."""

    m: int
    n: int
    grid: Grid
    stencil_order: int
    cfl: float
    filter_strength: float
    t_end: float
    output_cadence: float
    x_modes: list[Mode]
    v_modes: list[Mode]
    oracle_compare: bool
    mcf_compare: bool
    seed: int
    output_dir: str
    snapshot_cadence: float | None = None


def parse_run_config(data: dict) -> RunConfig:
    _require_keys(
        data,
        {
            "schema": True,
            "m": True,
            "n": True,
            "grid": True,
            "scheme": True,
            "t_end": True,
            "output_cadence": True,
            "initial_data": True,
            "toggles": False,
            "seed": False,
            "snapshot_cadence": False,
            "output_dir": False,
        },
        "config",
    )
    if data["schema"] != 1:
        raise ConfigError(f"config.schema: unsupported schema {data['schema']!r}")
    m, n = int(data["m"]), int(data["n"])
    if not 1 <= m <= 3:
        raise ConfigError("config.m: must lie in [1, 3]")
    if not 1 <= n <= 2:
        raise ConfigError("config.n: must lie in [1, 2]")
    _require_keys(data["grid"], {"sizes": True, "lengths": True}, "config.grid")
    sizes = data["grid"]["sizes"]
    lengths = data["grid"]["lengths"]
    if not isinstance(sizes, list) or len(sizes) != n:
        raise ConfigError(f"config.grid.sizes: expected {n} entries")
    if not isinstance(lengths, list) or len(lengths) != n:
        raise ConfigError(f"config.grid.lengths: expected {n} entries")
    grid = Grid(tuple(int(s) for s in sizes), tuple(_finite(x, "config.grid.lengths") for x in lengths))
    scheme = data["scheme"]
    _require_keys(scheme, {"stencil_order": False, "cfl": False, "filter_strength": False}, "config.scheme")
    order = int(scheme.get("stencil_order", 2))
    if order not in (2, 4):
        raise ConfigError("config.scheme.stencil_order: must be 2 or 4")
    cfl = _finite(scheme.get("cfl", 0.4), "config.scheme.cfl")
    if not 0 < cfl <= 1:
        raise ConfigError("config.scheme.cfl: must lie in (0, 1]")
    filt = _finite(scheme.get("filter_strength", 0.0), "config.scheme.filter_strength")
    if filt < 0:
        raise ConfigError("config.scheme.filter_strength: must be >= 0")
    t_end = _finite(data["t_end"], "config.t_end")
    if t_end <= 0:
        raise ConfigError("config.t_end: must be positive")
    cadence = _finite(data["output_cadence"], "config.output_cadence")
    init = data["initial_data"]
    _require_keys(init, {"X_modes": True, "V_modes": False}, "config.initial_data")
    x_modes = _parse_modes(init["X_modes"], n, "config.initial_data.X_modes")
    v_modes = _parse_modes(init.get("V_modes", []), n, "config.initial_data.V_modes")
    for mode in x_modes + v_modes:
        if not 1 <= mode.component <= m:
            raise ConfigError(f"config.initial_data: mode component {mode.component} out of range 1..{m}")
    toggles = data.get("toggles", {})
    _require_keys(toggles, {"oracle_compare": False, "mcf_compare": False}, "config.toggles")
    snap = data.get("snapshot_cadence")
    return RunConfig(
        m=m,
        n=n,
        grid=grid,
        stencil_order=order,
        cfl=cfl,
        filter_strength=filt,
        t_end=t_end,
        output_cadence=cadence,
        x_modes=x_modes,
        v_modes=v_modes,
        oracle_compare=bool(toggles.get("oracle_compare", False)),
        mcf_compare=bool(toggles.get("mcf_compare", False)),
        seed=int(data.get("seed", 0)),
        output_dir=str(data.get("output_dir", "out")),
        snapshot_cadence=None if snap is None else _finite(snap, "config.snapshot_cadence"),
    )


def load_json(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


# ---------------------------------------------------------------------------
# verify


@dataclass
class VerifyReport:
    """Outcome of the exact-rational identity suites."""

    seed: int
    samples: int
    shapes: list[tuple[int, int]]
    passes: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    elapsed_s: float = 0.0

    def all_passed(self) -> bool:
        return not self.failures

    def to_json(self) -> str:
        # elapsed time varies run to run, so it stays out of the report body
        doc = {
            "schema": 1,
            "seed": self.seed,
            "samples": self.samples,
            "shapes": [list(s) for s in self.shapes],
            "identities": {k: self.passes[k] for k in sorted(self.passes)},
            "failures": self.failures,
            "all_passed": self.all_passed(),
        }
        return json.dumps(doc, indent=1, sort_keys=True)


def _rand_fraction(rng: random.Random) -> Fraction:
    # entries in [-5, 5] with small denominators keeps the suites fast
    return Fraction(rng.randint(-10, 10), rng.randint(1, 2))


def _rand_matrix(rng: random.Random, m: int, n: int) -> list[list[Fraction]]:
    return [[_rand_fraction(rng) for _ in range(n)] for _ in range(m)]


def cmd_verify(shapes=DEFAULT_VERIFY_SHAPES, samples: int = 200, seed: int = 0) -> VerifyReport:
    """Run every exact identity suite; failures carry a reproducing input."""
    t0 = time.perf_counter()
    report = VerifyReport(seed=seed, samples=samples, shapes=[tuple(s) for s in shapes])
    names = ("cauchy_binet", "xi", "xi_prime", "z_matrix", "laplace_mixed")
    for name in names:
        report.passes[name] = {"pass": 0, "fail": 0}

    def record(name, ok, shape, payload):
        report.passes[name]["pass" if ok else "fail"] += 1
        if not ok:
            report.failures.append({"identity": name, "shape": list(shape), "input": payload})

    rng = random.Random(seed)
    for m, n in shapes:
        layout = enumerate_layout(m, n)
        for _ in range(samples):
            F = _rand_matrix(rng, m, n)
            payload = [[str(x) for x in row] for row in F]
            mv = minors.all_minors(F, layout)

            ok = minors.xi(F) == minors.xi_minor_sum(mv, layout)
            record("xi", ok, (m, n), payload)

            ok = minors.xi_prime(F) == minors.xi_prime_minor_sum(mv, layout)
            record("xi_prime", ok, (m, n), payload)

            ok = minors.z_matrix(F) == minors.z_minor_sum(mv, layout)
            record("z_matrix", ok, (m, n), payload)

            ok3 = True
            for A, I in layout._raw:
                k = len(A)
                for q in range(1, k + 1):
                    for j in range(1, n + 1):
                        got = minors.laplace_mixed(F, A, I, q, j)
                        iq = I[q - 1]
                        icut = tuple(x for x in I if x != iq)
                        if j in icut:
                            want = Fraction(0)
                        else:
                            swapped = tuple(sorted(icut + (j,)))
                            s = minors._sign(minors._rank(swapped, j) + q)
                            want = s * minors.minor(F, A, swapped)
                        if got != want:
                            ok3 = False
            record("laplace_mixed", ok3, (m, n), payload)

            l = rng.randint(1, 3)
            M = _rand_matrix(rng, m, l)
            N = _rand_matrix(rng, l, n)
            okcb = True
            for k in range(0, min(m, n, l) + 1):
                I = tuple(sorted(rng.sample(range(1, m + 1), k)))
                J = tuple(sorted(rng.sample(range(1, n + 1), k)))
                lhs, rhs = minors.cauchy_binet_check(M, N, I, J)
                if lhs != rhs:
                    okcb = False
            record(
                "cauchy_binet",
                okcb,
                (m, n),
                {"M": [[str(x) for x in r] for r in M], "N": [[str(x) for x in r] for r in N]},
            )
    report.elapsed_s = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# simulate


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_simulate(config_path: str, output_dir: str | None = None) -> int:
    cfg = parse_run_config(load_json(config_path))
    out_dir = Path(output_dir or cfg.output_dir)
    fld, oracle, _ = solver.initial_fields(cfg.grid, cfg.m, cfg.x_modes, cfg.v_modes)
    try:
        result = solver.run(
            fld,
            t_end=cfg.t_end,
            cfl=cfg.cfl,
            order=cfg.stencil_order,
            filter_strength=cfg.filter_strength,
            output_cadence=cfg.output_cadence,
            oracle=oracle if cfg.oracle_compare else None,
            snapshot_cadence=cfg.snapshot_cadence,
        )
    except solver.BlowUpError as exc:
        _write(out_dir / "diagnostics.csv", solver.rows_to_csv(exc.rows))
        for t, snap in exc.snapshots:
            _write(out_dir / f"snapshot_t{t:.6f}.json", solver.snapshot_to_json(snap))
        print(f"blow-up at t={exc.t:.6g}; partial diagnostics written to {out_dir}", file=sys.stderr)
        return 3
    _write(out_dir / "diagnostics.csv", solver.rows_to_csv(result.rows))
    for t, snap in result.snapshots:
        _write(out_dir / f"snapshot_t{t:.6f}.json", solver.snapshot_to_json(snap))
    last = result.rows[-1]
    print(
        "final t={} lambda_Linf={} omega_Linf={} phi_Linf={} psi_Linf={} sigma_Linf={}".format(
            solver._fmt(last.t),
            solver._fmt(last.lambda_Linf),
            solver._fmt(last.omega_Linf),
            solver._fmt(last.phi_Linf),
            solver._fmt(last.psi_Linf),
            solver._fmt(last.sigma_Linf),
        )
    )
    return 0


# ---------------------------------------------------------------------------
# characteristics


def _state_from_json(data: dict) -> tuple[PrimitiveState, list[float] | None]:
    _require_keys(
        data, {"schema": False, "m": True, "n": True, "state": True, "nu": False}, "state file"
    )
    m, n = int(data["m"]), int(data["n"])
    layout = enumerate_layout(m, n)
    st = data["state"]
    _require_keys(st, {"tau": True, "d": True, "v": True, "minors": True}, "state")
    d = [_finite(x, "state.d") for x in st["d"]]
    v = [_finite(x, "state.v") for x in st["v"]]
    mm = [_finite(x, "state.minors") for x in st["minors"]]
    if len(d) != m or len(v) != n or len(mm) != layout.minor_count:
        raise ConfigError(
            f"state needs d[{m}], v[{n}], minors[{layout.minor_count}] for (m, n) = ({m}, {n})"
        )
    W = PrimitiveState(_finite(st["tau"], "state.tau"), d, v, mm, layout)
    nu = data.get("nu")
    if nu is not None:
        nu = [_finite(x, "nu") for x in nu]
        if len(nu) != n:
            raise ConfigError(f"nu must have length {n}")
    return W, nu


def cmd_characteristics(path: str) -> int:
    W, nu = _state_from_json(load_json(path))
    n = W.layout.n
    if nu is None:
        nu = [0.0] * n
        nu[0] = 1.0
    if n == 1:
        lp, lm, fields = flux.char_speeds_n1(W)
        res = flux.linear_degeneracy_residual(W)
        print("speed multiplicity")
        for f in fields:
            print(f"{solver._fmt(f.speed)} {f.multiplicity}")
        print(f"linear_degeneracy_residual {solver._fmt(res)}")
    spectrum = flux.wave_speeds(W, np.asarray(nu) / np.linalg.norm(nu))
    print("spectrum " + " ".join(solver._fmt(x) for x in spectrum))
    return 0


# ---------------------------------------------------------------------------
# mcf-compare


def parse_mcf_config(data: dict) -> dict:
    _require_keys(
        data,
        {
            "schema": True,
            "m": True,
            "n": True,
            "grid": True,
            "scheme": False,
            "initial_data": True,
            "dt_values": True,
            "circle": False,
            "graph_flow": False,
            "output_dir": False,
        },
        "config",
    )
    if data["schema"] != 1:
        raise ConfigError("config.schema: unsupported schema")
    m, n = int(data["m"]), int(data["n"])
    _require_keys(data["grid"], {"sizes": True, "lengths": True}, "config.grid")
    grid = Grid(tuple(data["grid"]["sizes"]), tuple(data["grid"]["lengths"]))
    scheme = data.get("scheme", {})
    _require_keys(scheme, {"stencil_order": False, "cfl": False}, "config.scheme")
    init = data["initial_data"]
    _require_keys(init, {"X_modes": True, "V_modes": False}, "config.initial_data")
    x_modes = _parse_modes(init["X_modes"], n, "config.initial_data.X_modes")
    v_modes = _parse_modes(init.get("V_modes", []), n, "config.initial_data.V_modes")
    if any(mode.amplitude != 0.0 for mode in v_modes):
        raise ConfigError("config.initial_data.V_modes: the quadratic-time comparison requires V = 0")
    dts = data["dt_values"]
    if not isinstance(dts, list) or not dts:
        raise ConfigError("config.dt_values: expected a non-empty list")
    out = {
        "m": m,
        "grid": grid,
        "order": int(scheme.get("stencil_order", 2)),
        "cfl": _finite(scheme.get("cfl", 0.4), "config.scheme.cfl"),
        "x_modes": x_modes,
        "dt_values": [_finite(x, "config.dt_values") for x in dts],
        "circle": None,
        "graph_flow": None,
        "output_dir": str(data.get("output_dir", "out")),
    }
    if "circle" in data:
        _require_keys(
            data["circle"],
            {"radius": True, "points": True, "theta_end": True, "step_factor": False},
            "config.circle",
        )
        out["circle"] = {
            "radius": _finite(data["circle"]["radius"], "config.circle.radius"),
            "points": int(data["circle"]["points"]),
            "theta_end": _finite(data["circle"]["theta_end"], "config.circle.theta_end"),
            "step_factor": _finite(data["circle"].get("step_factor", 0.1), "config.circle.step_factor"),
        }
    if "graph_flow" in data:
        _require_keys(data["graph_flow"], {"theta_end": True, "step_factor": False}, "config.graph_flow")
        out["graph_flow"] = {
            "theta_end": _finite(data["graph_flow"]["theta_end"], "config.graph_flow.theta_end"),
            "step_factor": _finite(data["graph_flow"].get("step_factor", 0.1), "config.graph_flow.step_factor"),
        }
    return out


def measured_order(errors, steps) -> float | None:
    """Least-squares slope of log(error) against log(step)."""
    e = np.asarray(errors, dtype=float)
    s = np.asarray(steps, dtype=float)
    if e.size < 2 or np.any(e <= 0):
        return None
    coef = np.polyfit(np.log(s), np.log(e), 1)
    return float(coef[0])


def cmd_mcf_compare(config_path: str, output_dir: str | None = None) -> int:
    cfg = parse_mcf_config(load_json(config_path))
    grid = cfg["grid"]
    out_dir = Path(output_dir or cfg["output_dir"])
    lines = ["t,err_acceleration_Linf,tangency_residual,radius_or_amplitude"]

    u0, _ = solver.fourier_series(cfg["x_modes"], grid, cfg["m"])
    E0 = mcf.EmbeddingField.from_graph(grid, u0)
    tan0 = mcf.tangency_residual(E0, cfg["order"])
    amp0 = float(np.max(np.abs(u0)))

    errors = []
    for dt in cfg["dt_values"]:
        err = mcf.acceleration_limit_test(grid, cfg["x_modes"], dt, order=cfg["order"], cfl=cfg["cfl"])
        errors.append(err)
        lines.append(",".join([solver._fmt(dt), solver._fmt(err), solver._fmt(tan0), solver._fmt(amp0)]))

    if len(cfg["dt_values"]) >= 2:
        p = measured_order(errors, cfg["dt_values"])
        print(f"acceleration order in dt: {solver._fmt(p)}")
    else:
        print("acceleration order in dt:")

    if cfg["circle"] is not None:
        c = cfg["circle"]
        thetas, radii = mcf.shrinking_circle_radii(c["points"], c["radius"], c["theta_end"], c["step_factor"])
        Ec = mcf.circle_embedding(c["points"], c["radius"])
        tanc = mcf.tangency_residual(Ec)
        for t, rr in zip(thetas[:: max(1, len(thetas) // 32)], radii[:: max(1, len(thetas) // 32)]):
            lines.append(",".join([solver._fmt(t), "", solver._fmt(tanc), solver._fmt(rr)]))

    if cfg["graph_flow"] is not None:
        gcfg = cfg["graph_flow"]
        thetas, amps = mcf.graph_amplitude_decay(grid, cfg["x_modes"], gcfg["theta_end"], gcfg["step_factor"])
        for t, a in zip(thetas[:: max(1, len(thetas) // 32)], amps[:: max(1, len(thetas) // 32)]):
            lines.append(",".join([solver._fmt(t), "", solver._fmt(tan0), solver._fmt(a)]))

    _write(out_dir / "mcf_compare.csv", "\n".join(lines) + "\n")
    print(f"comparison written to {out_dir / 'mcf_compare.csv'}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="branesim", description=__doc__)
    parser.add_argument("--threads", type=int, default=1, help="worker thread count (kernels are vectorized; results are thread-count independent)")
    parser.add_argument("--output-dir", default=None, help="override the config output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub = parser.add_subparsers(dest="command", required=True)

    pv = sub.add_parser("verify", help="run the exact-rational identity suites")
    pv.add_argument("--samples", type=int, default=200)
    pv.add_argument(
        "--shapes",
        default=",".join(f"{m}x{n}" for m, n in DEFAULT_VERIFY_SHAPES),
        help="comma-separated list like 2x2,2x3",
    )

    ps = sub.add_parser("simulate", help="evolve a configuration and write diagnostics")
    ps.add_argument("config")

    pc = sub.add_parser("characteristics", help="print propagation speeds for a state")
    pc.add_argument("state")

    pm = sub.add_parser("mcf-compare", help="quadratic-time limit against mean curvature flow")
    pm.add_argument("config")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.command == "verify":
            shapes = []
            for token in args.shapes.split(","):
                m, _, n = token.strip().partition("x")
                if not (m.isdigit() and n.isdigit()):
                    raise ConfigError(f"bad shape token {token!r}; expected like 2x3")
                shapes.append((int(m), int(n)))
            if args.samples < 0:
                raise ConfigError("--samples must be >= 0")
            report = cmd_verify(shapes, args.samples, args.seed if args.seed is not None else 0)
            print(report.to_json())
            print(f"verify completed in {report.elapsed_s:.3f}s", file=sys.stderr)
            return 0 if report.all_passed() else 1
        if args.command == "simulate":
            return cmd_simulate(args.config, args.output_dir)
        if args.command == "characteristics":
            return cmd_characteristics(args.state)
        if args.command == "mcf-compare":
            return cmd_mcf_compare(args.config, args.output_dir)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except solver.BlowUpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
