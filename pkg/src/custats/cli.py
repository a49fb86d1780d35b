"""Command-line front end.

``custats COMMAND [options]`` where COMMAND is one of ``count``, ``moments``,
``degeneracy``, ``simulate``, ``renewal`` and ``spectral``.  Options may also
come from a JSON config (``--config``); explicit flags override the config.
Every output embeds the fully resolved config, and a JSON summary written
by a previous run is itself accepted as a config.

Exit codes: 0 success, 2 invalid input, 3 budget or degeneracy failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import jsonschema
import numpy as np

from .core import Constraint, u_stat_constrained, u_stat_exact_constrained
from .errors import (BudgetExceeded, ConditioningImpossible, DegenerateTarget, Inconclusive,
                     NegativeVariance)
from .kernels import PermPatternKernel, TableKernel, WordKernel, constant_kernel
from .models import IIDFinite, IIDUniform01, xor_factor
from .named import EXAMPLES, get_example

__all__ = ["main", "build_parser", "resolve_config", "CONFIG_SCHEMA", "format_json", "run"]

# errors that mean the request was well formed but cannot be carried out
FAILURES = (BudgetExceeded, DegenerateTarget, Inconclusive, NegativeVariance, ConditioningImpossible)

COMMANDS = ("count", "moments", "degeneracy", "simulate", "renewal", "spectral")

DEFAULTS = {
    "command": None,
    "example": None, "word": None, "perm": None, "table": None,
    "alphabet": None, "gaps": None, "exact": False,
    "model": None, "p": None,
    "text": None, "text_file": None, "index_file": None, "perm_values": None, "perm_file": None,
    "seed": 0, "reps": 1000, "n_grid": [256, 512, 1024], "t_grid": [0.25, 0.5, 1.0],
    "x_grid": [512.0], "budget": None, "tol": None, "samples": 200_000,
    "mode": "clt", "power": None,
    "h_letter": None, "h_const": None, "nu": None, "side": "minus", "conditioned": False,
    "grid": 2000, "eigs": 6, "mgf_s": None, "n_max": 200,
    "workers": 1, "out": None, "format": "json",
}

_num = {"type": "number"}
_int = {"type": "integer"}
_str = {"type": "string"}
_null = {"type": "null"}


def _opt(*types):
    return {"anyOf": [*types, _null]}


CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": _opt({"enum": list(COMMANDS)}),
        "example": _opt({"enum": list(EXAMPLES)}),
        "word": _opt(_str),
        "perm": _opt(_str),
        "table": _opt(_str, {"type": "object"}),
        "alphabet": _opt(_str, {"type": "array"}),
        "gaps": _opt(_str, {"type": "array", "items": {"anyOf": [_int, _str]}}),
        "exact": {"type": "boolean"},
        "model": _opt({"enum": ["iid", "uniform01", "xor"]}),
        "p": _opt({"type": "array", "items": _num}),
        "text": _opt(_str),
        "text_file": _opt(_str),
        "index_file": _opt(_str),
        "perm_values": _opt(_str, {"type": "array", "items": _num}),
        "perm_file": _opt(_str),
        "seed": {"type": "integer", "minimum": 0},
        "reps": {"type": "integer", "minimum": 1},
        "n_grid": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "t_grid": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "x_grid": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "budget": _opt({"type": "number", "exclusiveMinimum": 0}),
        "tol": _opt({"type": "number", "minimum": 0}),
        "samples": {"type": "integer", "minimum": 100},
        "mode": {"enum": ["clt", "degenerate", "functional"]},
        "power": _opt(_num),
        "h_letter": _opt(_str),
        "h_const": _opt(_num),
        "nu": _opt({"type": "number", "exclusiveMinimum": 0}),
        "side": {"enum": ["minus", "plus"]},
        "conditioned": {"type": "boolean"},
        "grid": {"type": "integer", "minimum": 100},
        "eigs": {"type": "integer", "minimum": 1},
        "mgf_s": _opt(_num),
        "n_max": {"type": "integer", "minimum": 50},
        "workers": {"type": "integer", "minimum": 1},
        "out": _opt(_str),
        "format": {"enum": ["json", "csv"]},
    },
}


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# argument parsing and config resolution

def _int_list(text):
    return [int(float(v)) for v in text.split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="custats", description=__doc__.split("\n")[0],
                                 argument_default=None)
    ap.add_argument("command", nargs="?", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config (or a previous JSON summary)")
    g = ap.add_argument_group("kernel")
    g.add_argument("--example", choices=EXAMPLES)
    g.add_argument("--word", help="word indicator, e.g. 101")
    g.add_argument("--perm", help="permutation pattern, e.g. 21 or 2,1")
    g.add_argument("--table", help="path to a JSON table kernel {alphabet, arity, values}")
    g.add_argument("--alphabet", help="alphabet letters, e.g. 01 or abcd")
    g.add_argument("--gaps", help="gap bounds, e.g. 1,inf (default: unconstrained)")
    g.add_argument("--exact", action="store_const", const=True,
                   help="gaps are equalities instead of upper bounds")
    g = ap.add_argument_group("model")
    g.add_argument("--model", choices=["iid", "uniform01", "xor"])
    g.add_argument("--p", type=_float_list, help="letter probabilities, e.g. 0.3,0.7")
    g = ap.add_argument_group("input data (count)")
    g.add_argument("--text")
    g.add_argument("--text-file", help="UTF-8 text over the alphabet (whitespace ignored)")
    g.add_argument("--index-file", help="binary file of symbol indices, one byte each")
    g.add_argument("--perm-values", help="whitespace-separated numbers")
    g.add_argument("--perm-file", help="file of whitespace-separated numbers")
    g = ap.add_argument_group("experiment")
    g.add_argument("--seed", type=int)
    g.add_argument("--reps", type=int)
    g.add_argument("--n-grid", type=_int_list)
    g.add_argument("--t-grid", type=_float_list)
    g.add_argument("--x-grid", type=_float_list)
    g.add_argument("--budget", type=float)
    g.add_argument("--tol", type=float)
    g.add_argument("--samples", type=int, help="Monte-Carlo draws for moment estimates")
    g.add_argument("--mode", choices=["clt", "degenerate", "functional"])
    g.add_argument("--power", type=float, help="rescaling exponent in degenerate mode")
    g.add_argument("--h-letter", help="renewal increment h = indicator of this letter")
    g.add_argument("--h-const", type=float, help="renewal increment h = constant")
    g.add_argument("--nu", type=float, help="declared E h(X_1)")
    g.add_argument("--side", choices=["minus", "plus"])
    g.add_argument("--conditioned", action="store_const", const=True)
    g.add_argument("--grid", type=int, help="grid size for the integral operator")
    g.add_argument("--eigs", type=int, help="number of eigenvalues to report")
    g.add_argument("--mgf-s", type=float)
    g.add_argument("--n-max", type=int)
    g.add_argument("--workers", type=int)
    g = ap.add_argument_group("output")
    g.add_argument("--out", help="write OUT.json and OUT.csv; stdout gets a digest")
    g.add_argument("--format", choices=["json", "csv"])
    return ap


def _load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if isinstance(doc, dict) and "config" in doc and "result" in doc:
        doc = doc["config"]
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    return doc


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags; validated against the schema."""
    cfg = dict(DEFAULTS)
    if args.config:
        loaded = _load_config(args.config)
        jsonschema.validate(loaded, {**CONFIG_SCHEMA, "required": []})
        cfg.update(loaded)
    for key, val in vars(args).items():
        if key != "config" and val is not None:
            cfg[key] = val
    if isinstance(cfg.get("perm_values"), list):
        cfg["perm_values"] = " ".join(format(v, ".17g") for v in cfg["perm_values"])
    jsonschema.validate(cfg, CONFIG_SCHEMA)
    if cfg["command"] is None:
        raise UsageError("no command given (positional or in the config)")
    return cfg


# ---------------------------------------------------------------------------
# kernel, model and data from a config

def _kernel(cfg):
    given = [k for k in ("example", "word", "perm", "table") if cfg[k] is not None]
    if len(given) != 1:
        raise UsageError("give exactly one of --example, --word, --perm, --table")
    ex = None
    if cfg["example"]:
        ex = get_example(cfg["example"])
        f = ex.kernel
    elif cfg["word"]:
        f = WordKernel(cfg["word"], cfg["alphabet"])
    elif cfg["perm"]:
        tau = cfg["perm"].replace(",", " ").split() if "," in cfg["perm"] else list(cfg["perm"])
        f = PermPatternKernel([int(t) for t in tau])
    else:
        doc = cfg["table"]
        if isinstance(doc, str):
            try:
                doc = json.loads(Path(doc).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read table {cfg['table']}: {exc}") from None
        f = TableKernel.from_json(doc)
    if cfg["gaps"] is not None:
        D = Constraint.parse(cfg["gaps"] if isinstance(cfg["gaps"], str) else list(cfg["gaps"]),
                             f.arity)
    elif ex is not None:
        D = ex.constraint
    else:
        D = Constraint.unconstrained(f.arity)
    return f, D, ex


def _model(cfg, f, ex):
    kind = cfg["model"]
    if kind is None:
        if ex is not None:
            return ex.model
        kind = "uniform01" if f.alphabet is None else "iid"
    if kind == "uniform01":
        return IIDUniform01()
    if kind == "xor":
        return xor_factor(cfg["p"])
    if f.alphabet is None:
        raise UsageError("an i.i.d. letter model needs a finite-alphabet kernel")
    return IIDFinite(f.alphabet, cfg["p"])


def _count_input(cfg, f):
    if f.alphabet is None:
        src = cfg["perm_values"]
        if cfg["perm_file"]:
            src = Path(cfg["perm_file"]).read_text(encoding="utf-8")
        if src is None:
            raise UsageError("give --perm-values or --perm-file")
        return np.array([float(v) for v in src.split()])
    if cfg["index_file"]:
        idx = np.frombuffer(Path(cfg["index_file"]).read_bytes(), dtype=np.uint8)
        if idx.size and idx.max() >= f.A:
            raise UsageError(f"symbol index {int(idx.max())} outside alphabet of size {f.A}")
        return [f.alphabet[i] for i in idx]
    text = cfg["text"]
    if cfg["text_file"]:
        text = Path(cfg["text_file"]).read_text(encoding="utf-8")
    if text is None:
        raise UsageError("give --text, --text-file or --index-file")
    return "".join(text.split())


def _h_kernel(cfg, model):
    if (cfg["h_letter"] is None) == (cfg["h_const"] is None):
        raise UsageError("give exactly one of --h-letter, --h-const")
    if cfg["h_const"] is not None:
        c = cfg["h_const"]
        if model.alphabet is not None:
            return constant_kernel(int(c) if float(c).is_integer() else c, 1, model.alphabet)
        return constant_kernel(c, 1)
    if model.alphabet is None:
        raise UsageError("--h-letter needs a finite-alphabet model")
    return WordKernel(cfg["h_letter"], model.alphabet)


# ---------------------------------------------------------------------------
# commands

def _est(e):
    out = {"value": float(e), "method": getattr(e, "method", None)}
    if getattr(e, "exact", None) is not None:
        out["exact"] = str(e.exact)
    if getattr(e, "se", None) is not None:
        out["se"] = e.se
    return out


def _cmd_count(cfg):
    f, D, _ = _kernel(cfg)
    data = _count_input(cfg, f)
    budget = cfg["budget"] or 1e9
    if isinstance(f, WordKernel):
        from .patterns import count_word_dp
        c = count_word_dp(f.word, D, data, "exact" if cfg["exact"] else "bounded", f.alphabet)
    elif isinstance(f, PermPatternKernel) and not cfg["exact"]:
        from .patterns import count_perm_pattern
        c = count_perm_pattern(f.tau, D, data, budget=budget)
    else:
        fn = u_stat_exact_constrained if cfg["exact"] else u_stat_constrained
        c = fn(f, D, data, budget=budget)
    c = int(c) if float(c).is_integer() else c
    return {"n": len(data), "constraint": D.to_json(), "count": c}


def _moment_report(cfg):
    from .moments import sigma2
    f, D, ex = _kernel(cfg)
    model = _model(cfg, f, ex)
    kw = {}
    if cfg["budget"] is not None:
        kw["budget"] = int(cfg["budget"])
    rep = sigma2(f, D, model, exact_constraint=cfg["exact"], samples=cfg["samples"],
                 seed=cfg["seed"], tol=cfg["tol"], **kw)
    return f, D, model, rep


def _cmd_moments(cfg):
    _, D, _, rep = _moment_report(cfg)
    return {"kernel": rep.kernel, "model": rep.model, "constraint": D.to_json(),
            "exact_constraint": rep.exact_constraint, "b": rep.b, "M": rep.M,
            "mu": _est(rep.mu), "mu_D": _est(rep.mu_D), "mu_D_exact": _est(rep.mu_Dq),
            "sigma2": _est(rep.sigma2), "B": rep.B.tolist(),
            "beta": [[str(x) for x in row] for row in rep.beta],
            "method": rep.method,
            "degenerate": rep.degenerate}


def _cmd_degeneracy(cfg):
    from .moments import degeneracy_test
    from .spectral import degeneracy_order
    f, D, model, rep = _moment_report(cfg)
    verdict = degeneracy_test(rep, cfg["tol"])
    out = {"kernel": rep.kernel, "model": rep.model, "constraint": D.to_json(),
           "verdict": "degenerate" if verdict.degenerate else "non-degenerate",
           "sigma2": _est(rep.sigma2), "max_abs_B": verdict.max_abs_B, "B": verdict.B.tolist(),
           "tol": verdict.tol, "method": verdict.method}
    if verdict.se_B is not None:
        out["se_B"] = verdict.se_B.tolist()
    if isinstance(model, IIDFinite) and D.is_unconstrained and f.alphabet is not None:
        k = degeneracy_order(f.table(), model.p)
        out["degeneracy_order"] = k
        out["first_projection_zero"] = k != 1
    return out


def _cmd_simulate(cfg):
    from . import simulate as sim
    f, D, ex = _kernel(cfg)
    model = _model(cfg, f, ex)
    kw = dict(exact_constraint=cfg["exact"], workers=cfg["workers"])
    mode = cfg["mode"]
    if mode == "clt":
        s = sim.mc_clt(f, D, model, cfg["n_grid"], cfg["reps"], cfg["seed"], **kw)
        if len(cfg["n_grid"]) >= 2:
            s.extra["rate"] = sim.rate_envelope_check(cfg["n_grid"], s.column("d_K"), cfg["reps"])
    elif mode == "degenerate":
        ident = ex.identity if ex is not None and D == ex.constraint else None
        s = sim.mc_degenerate(f, D, model, cfg["n_grid"], cfg["reps"], cfg["seed"],
                              power=cfg["power"], identity=ident, **kw)
    else:
        s = sim.functional_paths(f, D, model, cfg["n_grid"][-1], cfg["t_grid"], cfg["reps"],
                                 cfg["seed"], **kw)
    return s


def _cmd_renewal(cfg):
    from .simulate import mc_renewal
    f, D, ex = _kernel(cfg)
    model = _model(cfg, f, ex)
    h = _h_kernel(cfg, model)
    return mc_renewal(f, D, model, h, cfg["x_grid"], cfg["reps"], cfg["seed"], side=cfg["side"],
                      conditioned=cfg["conditioned"], nu=cfg["nu"], exact_constraint=cfg["exact"],
                      workers=cfg["workers"])


def _cmd_spectral(cfg):
    from . import spectral as sp
    f, D, ex = _kernel(cfg)
    if f.alphabet is None:
        raise UsageError("spectral analysis needs a finite-alphabet kernel")
    model = _model(cfg, f, ex)
    if not isinstance(model, IIDFinite):
        raise UsageError("spectral analysis needs an i.i.d. letter model")
    T = np.asarray(f.table(), dtype=float)
    p = model.p
    levels = []
    for k in range(f.arity + 1):
        P = sp.project(T, k, p=p)
        levels.append({"k": k, "norm2": sp.inner_v(P, P, p),
                       "dim": sp.level_dimension(f.A, f.arity, k)})
    out = {"kernel": repr(f), "p": p.tolist(), "levels": levels,
           "degeneracy_order": sp.degeneracy_order(T, p, cfg["tol"] or 1e-10)}
    if f.arity == 2:
        ev = sp.integral_operator_eigs(T, p, cfg["grid"], cfg["eigs"])
        out["eigenvalues"] = ev.tolist()
        out["grid"] = cfg["grid"]
    s = cfg["mgf_s"]
    if s is None and ex is not None and ex.name == "e4":
        s = 1.0
    if s is not None and ex is not None and ex.name == "e4":
        out["mgf_check"] = sp.e4_limit_mgf_check(cfg["reps"], cfg["seed"], cfg["n_max"], s)
    return out


HANDLERS = {"count": _cmd_count, "moments": _cmd_moments, "degeneracy": _cmd_degeneracy,
            "simulate": _cmd_simulate, "renewal": _cmd_renewal, "spectral": _cmd_spectral}


# ---------------------------------------------------------------------------
# formatting

def _real(x: float) -> str:
    if math.isnan(x):
        return "null"
    if math.isinf(x):
        return json.dumps("inf" if x > 0 else "-inf")
    return format(x, ".17g")


def _plain(obj):
    """Convert numpy scalars/arrays and fractions to JSON-friendly builtins."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def format_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with reals at 17 significant digits and exact integers."""
    obj = _plain(obj)
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {format_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(format_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + format_json(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _real(obj)
    return json.dumps(obj)


def _cell(v):
    v = _plain(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return _real(v).strip('"')
    if isinstance(v, (dict, list)):
        return format_json(v).replace("\n", "").replace("  ", "")
    return "" if v is None else str(v)


def _flatten(prefix, obj, rows):
    obj = _plain(obj)
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(f"{prefix}.{k}" if prefix else k, v, rows)
    else:
        rows.append((prefix, obj))


def to_csv(result, cfg) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    embedded = {k: v for k, v in cfg.items() if k not in ("out", "format", "workers")}
    buf.write("# config " + format_json(embedded, indent=0).replace("\n", "") + "\n")
    if hasattr(result, "to_rows"):
        w.writerow(["grid", "statistic", "value"])
        for g, key, val in result.to_rows():
            w.writerow([_cell(g), key, _cell(val)])
        rows = []
        _flatten("", result.extra, rows)
        for key, val in rows:
            w.writerow(["", "extra." + key, _cell(val)])
    else:
        w.writerow(["key", "value"])
        rows = []
        _flatten("", result, rows)
        for key, val in rows:
            w.writerow([key, _cell(val)])
    return buf.getvalue()


def _result_json(result):
    return result.to_json() if hasattr(result, "to_json") else result


def _digest(cmd, result) -> str:
    lines = [f"custats {cmd}"]
    if hasattr(result, "stats"):
        for st in result.stats:
            keys = [k for k in ("grid", "var", "se_var", "d_K", "mean", "m4") if k in st]
            lines.append("  " + "  ".join(f"{k}={_cell(st[k])}" for k in keys))
    else:
        for key, val in result.items():
            if not isinstance(val, (list, dict)):
                lines.append(f"  {key}: {_cell(val)}")
            elif isinstance(val, dict) and "value" in val:
                lines.append(f"  {key}: {_cell(val['value'])}")
    return "\n".join(lines)


def run(cfg: dict, stdout=None) -> int:
    stdout = stdout or sys.stdout
    result = HANDLERS[cfg["command"]](cfg)
    doc = {"command": cfg["command"], "config": cfg, "result": _result_json(result)}
    if cfg["out"]:
        base = Path(cfg["out"])
        base.parent.mkdir(parents=True, exist_ok=True)
        Path(str(base) + ".json").write_text(format_json(doc) + "\n", encoding="utf-8")
        Path(str(base) + ".csv").write_text(to_csv(result, cfg), encoding="utf-8")
        print(_digest(cfg["command"], result), file=stdout)
    elif cfg["format"] == "csv":
        stdout.write(to_csv(result, cfg))
    else:
        print(format_json(doc), file=stdout)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return run(cfg)
    except FAILURES as exc:
        print(f"custats: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except jsonschema.ValidationError as exc:
        print(f"custats: invalid config: {exc.message}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"custats: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
