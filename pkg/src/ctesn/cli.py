"""Command-line interface: ``ctesn {solve,train,predict,heatmap,benchmark}``.

Exit codes: 0 success, 2 configuration error, 3 solver or training failure,
4 parameter outside the declared box.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import jsonschema
import numpy as np

from . import ode
from .harness import (
    DEFAULT_N_LIST,
    ScalingConfig,
    ScalingError,
    run_heatmap,
    run_scaling,
)
from .models import (
    HeatingParams,
    ModelFamily,
    RobertsonParams,
    heating_family,
    robertson_family,
)
from .ode import SolverConfig
from .parameter_space import BoxSpace, DomainError
from .readout import FitConfig, sample_times
from .reservoir import ReservoirSpec
from .surrogate import (
    SurrogateFormatError,
    TrainingConfig,
    default_training_config,
    evaluation_times,
    load,
    predict,
    save,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVE = 3
EXIT_DOMAIN = 4

SCHEMA_VERSION = 1
SURROGATE_FILE = "surrogate.ctesn"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _config_error(msg: str) -> CliError:
    return CliError(EXIT_CONFIG, msg)


def load_schema() -> dict:
    text = resources.files("ctesn").joinpath("data/config_schema.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class RunConfig:
    """Validated contents of a JSON run configuration."""

    model: str = "robertson"
    model_params: Dict[str, Any] = field(default_factory=dict)
    box: Optional[Dict[str, List[float]]] = None
    tspan: Optional[List[float]] = None
    training: Dict[str, Any] = field(default_factory=dict)
    output_dir: Optional[str] = None
    seed: Optional[int] = None
    heatmap: Dict[str, Any] = field(default_factory=dict)
    benchmark: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        try:
            jsonschema.validate(raw, load_schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise _config_error(f"config error at {where}: {exc.message}") from None
        body = {k: v for k, v in raw.items() if k != "schema_version"}
        return cls(**body)

    def family(self) -> ModelFamily:
        params = dict(self.model_params)
        try:
            if self.model == "heating":
                fam = heating_family(HeatingParams(**params))
            else:
                rel_width = params.pop("rel_width", 0.1)
                fam = robertson_family(RobertsonParams(**params), rel_width=rel_width)
            if self.box is not None:
                names = fam.space.names
                space = BoxSpace(tuple(self.box["lower"]), tuple(self.box["upper"]), names)
                if space.dim != fam.space.dim:
                    raise ValueError(
                        f"box has {space.dim} dimensions, model {self.model} "
                        f"has {fam.space.dim} parameters"
                    )
                fam = replace(fam, space=space)
            if self.tspan is not None:
                t0, tf = (float(v) for v in self.tspan)
                if not tf > t0:
                    raise ValueError(f"tspan must satisfy tf > t0, got {self.tspan}")
                fam = replace(fam, tspan=(t0, tf))
        except (TypeError, ValueError) as exc:
            raise _config_error(f"config error: {exc}") from None
        return fam

    def training_config(self, seed: Optional[int] = None) -> TrainingConfig:
        t = dict(self.training)
        try:
            base = default_training_config(self.model)
            res = replace(base.reservoir, **t.pop("reservoir", {}))
            seed = self.seed if seed is None else seed
            if seed is not None:
                res = replace(res, seed=int(seed))
            cfg = replace(
                base,
                reservoir=res,
                fit=FitConfig(**t.pop("fit", {})),
                solver=SolverConfig(**t.pop("solver", {})),
                reservoir_solver=SolverConfig(**t.pop("reservoir_solver", {})),
                **t,
            )
        except (TypeError, ValueError) as exc:
            raise _config_error(f"config error: {exc}") from None
        return cfg


def read_config(path: Optional[str], model: Optional[str] = None) -> RunConfig:
    raw: dict = {"schema_version": SCHEMA_VERSION}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise _config_error(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise _config_error(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise _config_error("config must be a JSON object")
    if model is not None:
        raw = dict(raw, model=model)
    return RunConfig.from_dict(raw)


def parse_params(text: Optional[str], space: BoxSpace) -> np.ndarray:
    """``"k=v,..."`` into a parameter vector; omitted entries take the midpoint.

    Keys are the box dimension names or ``p1 .. pd``.
    """
    p = space.midpoint.copy()
    if not text:
        return p
    names = list(space.names or ())
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep:
            raise _config_error(f"malformed --params entry {item!r}; expected k=v")
        if key in names:
            j = names.index(key)
        elif key.startswith("p") and key[1:].isdigit() and 1 <= int(key[1:]) <= space.dim:
            j = int(key[1:]) - 1
        else:
            known = ", ".join(names + [f"p{i + 1}" for i in range(space.dim)])
            raise _config_error(f"unknown parameter {key!r}; known: {known}")
        try:
            p[j] = float(value)
        except ValueError:
            raise _config_error(f"parameter {key} has non-numeric value {value!r}") from None
    return p


def parse_times(spec: Optional[str], tspan, default: str) -> Optional[np.ndarray]:
    """``log:N``, ``linear:N``, ``steps`` or an explicit comma list."""
    spec = (spec or default).strip()
    if spec == "steps":
        return None
    kind, sep, count = spec.partition(":")
    try:
        if sep and kind in ("log", "linear"):
            return sample_times(tspan, FitConfig(n_samples=int(count), time_grid=kind))
        times = np.array([float(v) for v in spec.split(",")])
    except ValueError as exc:
        raise _config_error(f"bad --times spec {spec!r}: {exc}") from None
    if times.size == 0 or np.any(np.diff(times) <= 0):
        raise _config_error("--times list must be non-empty and strictly increasing")
    if times[0] < tspan[0] or times[-1] > tspan[1]:
        raise CliError(
            EXIT_DOMAIN, f"--times must lie in [{tspan[0]:g}, {tspan[1]:g}]"
        )
    return times


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(path: Optional[Path], header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    if path is None:
        sys.stdout.write(buf.getvalue())
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue())


def trajectory_rows(times, states):
    # states is (T, N)
    for t, x in zip(times, states):
        yield [float(t)] + [float(v) for v in x]


def _out_dir(args, cfg: RunConfig) -> Optional[Path]:
    out = args.out or cfg.output_dir
    return Path(out) if out else None


def _check_box(space: BoxSpace, p) -> None:
    bad = space.violations(p)
    if bad:
        raise CliError(EXIT_DOMAIN, "parameter outside the box: " + "; ".join(bad))


def cmd_solve(args) -> int:
    cfg = read_config(args.config, args.model)
    fam = cfg.family()
    p = parse_params(args.params, fam.space)
    times = parse_times(args.times, fam.tspan, default="steps")
    solver = cfg.training_config(args.seed).solver
    try:
        sol = ode.solve_stiff(fam.make(p), fam.tspan, fam.y0(p), solver)
    except (ode.SolverError, ValueError, ArithmeticError) as exc:
        raise CliError(EXIT_SOLVE, f"solve failed: {exc}") from None
    if not sol.success:
        raise CliError(
            EXIT_SOLVE,
            f"solve failed at p={p.tolist()}: {sol.status.value} at t={sol.times[-1]!r}",
        )
    if times is None:
        times, states = sol.times, sol.states
    else:
        states = ode.interpolate(sol, times)
    header = ["t"] + [f"x{i + 1}" for i in range(fam.dim)]
    out = _out_dir(args, cfg)
    write_csv(out / "solve.csv" if out else None, header, trajectory_rows(times, states))
    return EXIT_OK


def _json_dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    cfg = read_config(args.config, args.model)
    fam = cfg.family()
    tcfg = cfg.training_config(args.seed)
    out = _out_dir(args, cfg) or Path(".")
    try:
        s = train(fam, tcfg)
    except Exception as exc:
        raise CliError(EXIT_SOLVE, f"training failed: {type(exc).__name__}: {exc}") from None
    out.mkdir(parents=True, exist_ok=True)
    save(s, out / SURROGATE_FILE)
    residuals = [m.fit_residual for m in s.matrices]
    report = {
        "model": fam.name,
        "model_dim": fam.dim,
        "seed": tcfg.reservoir.seed,
        "n_train": tcfg.n_train,
        "readout_rank": s.metadata["readout_rank"],
        "fit_residuals": residuals,
        "max_fit_residual": max(residuals),
        "train_params": s.train_params.tolist(),
        "pstar": s.pstar.tolist(),
        "wall_times_s": s.timings,
        "config": {
            "model": cfg.model,
            "model_params": cfg.model_params,
            "box": {"lower": list(fam.space.lower), "upper": list(fam.space.upper)},
            "tspan": list(fam.tspan),
            "training": asdict(tcfg),
        },
    }
    _json_dump(report, out / "train_report.json")
    return EXIT_OK


def _load_surrogate(path: Optional[str]):
    if not path:
        raise _config_error("--surrogate PATH is required")
    try:
        return load(path)
    except FileNotFoundError:
        raise _config_error(f"surrogate file not found: {path}") from None
    except SurrogateFormatError as exc:
        raise _config_error(f"cannot read surrogate {path}: {exc}") from None


def cmd_predict(args) -> int:
    s = _load_surrogate(args.surrogate)
    p = parse_params(args.params, s.space)
    _check_box(s.space, p)
    times = parse_times(args.times, s.tspan, default=f"log:{len(evaluation_times(s.tspan))}")
    if times is None:
        times = s.reservoir_solution.sol.times
    try:
        x = predict(s, p, times)
    except DomainError as exc:
        raise CliError(EXIT_DOMAIN, str(exc)) from None
    header = ["t"] + [f"x{i + 1}" for i in range(s.model_dim)]
    out = Path(args.out) if args.out else None
    write_csv(out / "predict.csv" if out else None, header, trajectory_rows(times, x.T))
    return EXIT_OK


def _parse_resolution(text: Optional[str], default) -> tuple:
    if not text:
        return tuple(default)
    try:
        n1, n2 = (int(v) for v in text.lower().replace(",", "x").split("x"))
    except ValueError:
        raise _config_error(f"bad --resolution {text!r}; expected e.g. 23x23") from None
    if n1 < 2 or n2 < 2:
        raise _config_error("--resolution needs at least 2 points per axis")
    return n1, n2


def cmd_heatmap(args) -> int:
    s = _load_surrogate(args.surrogate)
    cfg = read_config(args.config, args.model or s.metadata.get("model"))
    fam = replace(cfg.family(), space=s.space, tspan=tuple(s.tspan))
    if fam.dim != s.model_dim:
        raise _config_error(
            f"config model has dimension {fam.dim}, surrogate has {s.model_dim}"
        )
    if fam.space.dim != 2:
        raise _config_error("heatmaps need a 2-parameter model")
    res = _parse_resolution(args.resolution, cfg.heatmap.get("resolution", (23, 23)))
    solver = cfg.training_config(args.seed).solver
    hm = run_heatmap(s, fam, res, solver=solver, workers=cfg.heatmap.get("workers", 1))
    out = _out_dir(args, cfg) or Path(".")
    rows = sorted(((float(p[0]), float(p[1]), float(e)) for p, e in hm.grid))
    write_csv(out / "heatmap.csv", ["p1", "p2", "rel_err"], rows)
    stats = hm.stats.as_dict()
    stats["resolution"] = list(hm.resolution)
    stats["failures"] = list(hm.messages)
    _json_dump(stats, out / "heatmap_stats.json")
    return EXIT_OK


def _parse_n_list(text: Optional[str], default) -> List[int]:
    if not text:
        return list(default)
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise _config_error(f"bad --n-list {text!r}") from None
    if not vals or any(b <= a for a, b in zip(vals, vals[1:])) or vals[0] < 1:
        raise _config_error("--n-list must be strictly increasing positive integers")
    return vals


def cmd_benchmark(args) -> int:
    cfg = read_config(args.config, "heating")
    b = dict(cfg.benchmark)
    n_list = _parse_n_list(args.n_list, b.pop("n_list", DEFAULT_N_LIST))
    tcfg = cfg.training_config(args.seed)
    if "n_train" in b:
        tcfg = replace(tcfg, n_train=b.pop("n_train"))
    heating = HeatingParams(**cfg.model_params) if cfg.model_params else HeatingParams()
    try:
        scfg = ScalingConfig(training=tcfg, heating=heating, **b)
    except (TypeError, ValueError) as exc:
        raise _config_error(f"config error: {exc}") from None
    try:
        result = run_scaling(n_list, scfg)
    except ScalingError as exc:
        raise CliError(EXIT_SOLVE, str(exc)) from None
    out = _out_dir(args, cfg) or Path(".")
    rows = [
        [r.n, r.full_solve_s, r.train_s, r.predict_s, r.max_rel_err] for r in result.rows
    ]
    write_csv(
        out / "benchmark.csv",
        ["N", "full_solve_s", "train_s", "predict_s", "max_rel_err"],
        rows,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctesn", description="CTESN surrogates for stiff ODE models."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="reservoir RNG seed (u64)")
        if model:
            p.add_argument("--model", choices=("robertson", "heating"),
                           help="override the config's model")

    p = sub.add_parser("solve", help="stiff solve of the full model, trajectory CSV")
    common(p)
    p.add_argument("--params", help='parameters as "k=v,..." (default: box midpoint)')
    p.add_argument("--times", help="log:N, linear:N, steps (default) or t1,t2,...")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train", help="train a surrogate; writes surrogate.ctesn and train_report.json")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="surrogate trajectory CSV")
    common(p, model=False)
    p.add_argument("--surrogate", help="trained surrogate file")
    p.add_argument("--params", help='parameters as "k=v,..." (default: box midpoint)')
    p.add_argument("--times", help="log:N (default log:400), linear:N, steps or t1,t2,...")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("heatmap", help="error heatmap CSV against fresh solves")
    common(p)
    p.add_argument("--surrogate", help="trained surrogate file")
    p.add_argument("--resolution", help="grid size, e.g. 23x23")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("benchmark", help="heating scaling study CSV")
    common(p, model=False)
    p.add_argument("--n-list", dest="n_list", help="comma-separated room counts")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, matching EXIT_CONFIG
        return int(exc.code or 0)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("ctesn: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as exc:
        print(f"ctesn: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
