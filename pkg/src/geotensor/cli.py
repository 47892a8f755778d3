"""Command-line experiment runner.

    geotensor <subcommand> <config.ini> <output-dir>
    geotensor report <output-dir>

Configs are INI files.  Every key a subcommand reads is resolved against
DEFAULTS and the resolved set is written to the manifest, together with
package versions, timings and a sha256 for every artifact.

Exit codes: 0 success, 1 numerical failure, 2 usage or config, 3 I/O.
"""

import argparse
import configparser
import csv
import hashlib
import json
import os
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, GeotensorError, NearTangencyWarning

EXIT_OK, EXIT_NUMERICS, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

DEFAULTS = {
    "metric": {"family": "euclidean", "radius": "1.0", "curvature0": "0.0",
               "amplitude": "0.0", "center": "0.0, 0.0", "width": "0.5"},
    "grid": {"n": "257"},
    "fan": {"n_z": "360", "n_w": "359", "eps_w": "0.03"},
    "rays": {"step": "0.01", "cap": "50.0", "directions": "256"},
    "run": {"seed": "0", "workers": "0"},
    "field": {"kind": "random", "rank": "1", "bumps": "6", "width": "0.18",
              "complex": "false", "potential": "false"},
    "geodesics": {"n_z": "8", "n_w": "5", "locus_n_z": "24", "locus_n_w": "11"},
    "pair": {"kind": "none", "x0": "-1.0, 0.0", "direction": "1.0, 0.0", "index": "1",
             "distance": "1.0"},
    "symbol": {"m": "0", "x0": "0.0, 0.0", "xi": "0.0, 1.0", "lambdas": "20, 40, 80",
               "chirp": "10.0", "width_f": "0.4", "width_g": "0.15", "tolerance": "0.05",
               "convention": "scalar", "sweep_points": "0.0 0.0; 0.3 0.0; 0.0 0.4",
               "sweep_angles": "8"},
    "hessian": {"points": "0.0 0.0; 0.3 0.4; -0.4 0.2; 0.1 -0.5; 0.5 0.1",
                "angles": "0.0, 1.1, 2.3", "chirp": "10.0", "tolerance": "0.01"},
    "cancel": {"m": "0", "lambdas": "30, 45, 60, 80", "half_angle": "0.2",
               "probe_width": "0.3", "regularization": "0.0", "cg_maxiter": "15",
               "cg_tol": "1e-4", "target": "0.25", "n_z": "256", "n_w": "255",
               "cap": "6.0"},
}

SECTIONS = {
    "geodesics": ("metric", "geodesics", "rays", "run"),
    "sinogram": ("metric", "grid", "fan", "rays", "run", "field"),
    "backproject": ("metric", "grid", "fan", "rays", "run", "field"),
    "normal": ("metric", "grid", "fan", "rays", "run", "field"),
    "decompose": ("metric", "grid", "run", "field"),
    "symbol": ("metric", "symbol", "pair", "run"),
    "verify-symbol": ("metric", "grid", "fan", "rays", "run", "symbol", "pair"),
    "hessian": ("metric", "hessian", "pair", "run"),
    "cancel-demo": ("metric", "grid", "rays", "run", "cancel", "pair"),
}


class NumericalFailure(GeotensorError):
    """A computed quantity missed its configured tolerance."""


# -- configuration ------------------------------------------------------------

class Config:
    """Resolved INI config that remembers the line of every key."""

    def __init__(self, parser, lines, path):
        self.parser = parser
        self.lines = lines
        self.path = path
        self.used = {}

    @classmethod
    def read(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found")
        except OSError as exc:
            raise OSError(f"cannot read {path}: {exc}")
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text, source=str(path))
        except configparser.ParsingError as exc:
            line = exc.errors[0][0] if exc.errors else None
            raise ConfigError(f"cannot parse {path}", line=line)
        except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
            raise ConfigError(str(exc).split(":")[0], line=exc.lineno)
        except configparser.Error as exc:
            raise ConfigError(str(exc), line=getattr(exc, "lineno", None))
        return cls(parser, _key_lines(text), path)

    def _raw(self, section, key):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key)
        try:
            return DEFAULTS[section][key]
        except KeyError:
            raise ConfigError(f"no default for [{section}] {key}")

    def get(self, section, key, kind=str):
        raw = self._raw(section, key)
        try:
            value = _convert(raw, kind)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}",
                              line=self.lines.get((section, key)))
        self.used.setdefault(section, {})[key] = raw.strip()
        return value

    def check_unknown(self, sections):
        for sec in self.parser.sections():
            if sec not in DEFAULTS:
                raise ConfigError(f"unknown section [{sec}]", line=self.lines.get((sec, None)))
            for key in self.parser.options(sec):
                if key not in DEFAULTS[sec]:
                    raise ConfigError(f"unknown key [{sec}] {key}",
                                      line=self.lines.get((sec, key)))

    def resolve(self, sections):
        """Touch every key of the sections so no default stays implicit."""
        for sec in sections:
            for key in DEFAULTS[sec]:
                self.used.setdefault(sec, {})[key] = self._raw(sec, key).strip()
        return self.used

    def digest(self):
        blob = json.dumps(self.used, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _key_lines(text):
    lines, section = {}, None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            lines[(section, None)] = i
        elif s and not s.startswith(("#", ";")) and ("=" in s or ":" in s):
            key = s.split("=", 1)[0].split(":", 1)[0].strip().lower()
            lines[(section, key)] = i
    return lines


def _floats(raw):
    return [float(v) for v in raw.replace(",", " ").split()]


def _convert(raw, kind):
    raw = raw.strip()
    if kind is str:
        return raw
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected a boolean")
    if kind == "floats":
        return _floats(raw)
    if kind == "points":
        pts = [_floats(p) for p in raw.split(";") if p.strip()]
        if not pts or any(len(p) != 2 for p in pts):
            raise ValueError("expected 'x y; x y; ...'")
        return [np.array(p) for p in pts]
    if kind == "vector":
        v = _floats(raw)
        if len(v) != 2:
            raise ValueError("expected two numbers")
        return np.array(v)
    return kind(raw)


# -- builders -----------------------------------------------------------------

def build_metric(cfg):
    from .geometry import MetricField
    fam = cfg.get("metric", "family")
    R = cfg.get("metric", "radius", float)
    if fam == "euclidean":
        return MetricField.euclidean(R)
    if fam == "constant_curvature":
        return MetricField.constant_curvature(cfg.get("metric", "curvature0", float), R)
    if fam == "gaussian_bump":
        return MetricField.gaussian_bump(cfg.get("metric", "amplitude", float),
                                         tuple(cfg.get("metric", "center", "vector")),
                                         cfg.get("metric", "width", float), R)
    raise ConfigError(f"unknown metric family {fam!r}", line=cfg.lines.get(("metric", "family")))


def build_xray(cfg, metric, fan=None, cap=None):
    from .tensorfield import Grid
    from .xray import FanSpec, RaySettings, XRay
    grid = Grid(cfg.get("grid", "n", int), metric.radius)
    fan = fan or FanSpec(cfg.get("fan", "n_z", int), cfg.get("fan", "n_w", int),
                         cfg.get("fan", "eps_w", float))
    rays = RaySettings(step=cfg.get("rays", "step", float),
                       cap=cap if cap is not None else cfg.get("rays", "cap", float),
                       directions=cfg.get("rays", "directions", int))
    return XRay(metric, grid, fan, rays)


def build_field(cfg, grid, metric, rng):
    from .tensorfield import random_field, sym_derivative
    kind = cfg.get("field", "kind")
    m = cfg.get("field", "rank", int)
    if kind != "random":
        raise ConfigError(f"unknown field kind {kind!r}", line=cfg.lines.get(("field", "kind")))
    cplx = cfg.get("field", "complex", bool)
    bumps = cfg.get("field", "bumps", int)
    width = cfg.get("field", "width", float)
    if cfg.get("field", "potential", bool):
        if m < 1:
            raise ConfigError("a potential field needs rank >= 1")
        u = random_field(grid, m - 1, rng, bumps, width, 0.6, cplx)
        return sym_derivative(u, metric)
    return random_field(grid, m, rng, bumps, width, 0.75, cplx)


def build_pair(cfg, metric):
    """Conjugate datum, straight control pair, or None."""
    from .cancel import straight_pair
    from .geometry import shoot_geodesic
    from .jacobi import build_conjugate_datum, find_conjugate_points
    kind = cfg.get("pair", "kind")
    if kind == "none":
        return None
    x0 = cfg.get("pair", "x0", "vector")
    d = cfg.get("pair", "direction", "vector")
    if kind == "straight":
        return straight_pair(metric, x0, d, cfg.get("pair", "distance", float))
    if kind != "conjugate":
        raise ConfigError(f"unknown pair kind {kind!r}", line=cfg.lines.get(("pair", "kind")))
    path = shoot_geodesic(metric, (tuple(x0), tuple(metric.unit(x0, d))))
    roots = [s for s in find_conjugate_points(path, 0.0) if s > 0]
    idx = cfg.get("pair", "index", int)
    if len(roots) < idx:
        raise NumericalFailure(f"geodesic from {tuple(x0)} has {len(roots)} conjugate points",
                               requested=idx)
    return build_conjugate_datum(path, 0.0, roots[idx - 1])


# -- artifacts ------------------------------------------------------------------

class Outputs:
    def __init__(self, root):
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {root}: {exc}")
        self.files = []

    def path(self, name):
        p = self.root / name
        self.files.append(p)
        return p

    def csv(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])

    def json(self, name, obj):
        self.path(name).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")

    def field(self, name, f):
        from .tensorfield import save_field
        self.files.extend(save_field(f, self.root / name))

    def sinogram(self, name, s):
        from .xray import save_sinogram
        self.files.extend(save_sinogram(s, self.root / name))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions():
    import numba
    import scipy
    return {"geotensor": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def write_manifest(out, command, cfg, timings, status, extra=None):
    files = sorted({str(p.relative_to(out.root)) for p in out.files})
    manifest = {
        "command": command,
        "config_path": str(cfg.path) if cfg else None,
        "config": cfg.used if cfg else {},
        "config_sha256": cfg.digest() if cfg else None,
        "versions": versions(),
        "timings": timings,
        "status": status,
        "artifacts": {f: sha256(out.root / f) for f in files},
    }
    if extra:
        manifest.update(extra)
    (out.root / "manifest.json").write_text(json.dumps(_plain(manifest), indent=2,
                                                       sort_keys=True) + "\n")


# -- subcommands ----------------------------------------------------------------

def cmd_geodesics(cfg, out, metric):
    from .geometry import shoot_from_boundary
    from .jacobi import conjugate_locus_sweep
    step = cfg.get("rays", "step", float) * 0.1 * metric.radius
    cap = cfg.get("rays", "cap", float) * metric.radius
    nz, nw = cfg.get("geodesics", "n_z", int), cfg.get("geodesics", "n_w", int)
    L = metric.boundary.length
    rows = []
    for i, z in enumerate(np.arange(nz) * L / nz):
        for j, w in enumerate(np.linspace(-1.2, 1.2, nw)):
            path = shoot_from_boundary(metric, z, w, step, cap)
            for r in path.to_csv_rows():
                rows.append((i * nw + j, *r))
    out.csv("geodesics.csv", ["ray", "t", "x1", "x2", "v1", "v2"], rows)
    locus = conjugate_locus_sweep(metric, cfg.get("geodesics", "locus_n_z", int),
                                  cfg.get("geodesics", "locus_n_w", int), step=step, cap=cap)
    out.csv("conjugate_locus.csv", ["z", "w", "first_conjugate_time"], locus)
    summary = {"rays": nz * nw, "conjugate_rays": len(locus),
               "strictly_convex": metric.is_strictly_convex()}
    out.json("geodesics.json", summary)
    return summary


def _forward_setup(cfg, metric):
    xray = build_xray(cfg, metric)
    rng = np.random.default_rng(cfg.get("run", "seed", int))
    return xray, build_field(cfg, xray.grid, metric, rng)


def cmd_sinogram(cfg, out, metric):
    from .tensorfield import l2_norm
    xray, f = _forward_setup(cfg, metric)
    s = xray.forward(f)
    out.field("field", f)
    out.sinogram("sinogram", s)
    summary = {"rank": f.rank, "field_norm": l2_norm(f, metric),
               "sinogram_max": float(np.max(np.abs(s.values)))}
    out.json("sinogram_summary.json", summary)
    return summary


def cmd_backproject(cfg, out, metric):
    from .tensorfield import l2_inner
    from .xray import boundary_inner
    xray, f = _forward_setup(cfg, metric)
    s = xray.forward(f)
    b = xray.backproject(s)
    out.field("backprojection", b)
    lhs = boundary_inner(s, s)
    rhs = l2_inner(f, b, metric)
    summary = {"rank": f.rank, "adjoint_lhs": lhs, "adjoint_rhs": rhs,
               "adjoint_relative_gap": abs(lhs - rhs) / abs(lhs)}
    out.json("backproject_summary.json", summary)
    return summary


def cmd_normal(cfg, out, metric):
    from .tensorfield import l2_norm
    xray, f = _forward_setup(cfg, metric)
    nf = xray.normal(f)
    out.field("field", f)
    out.field("normal", nf)
    summary = {"rank": f.rank, "field_norm": l2_norm(f, metric), "normal_norm": l2_norm(nf, metric)}
    out.json("normal_summary.json", summary)
    return summary


def cmd_decompose(cfg, out, metric):
    from .helmholtz import project_solenoidal, stability_report
    from .tensorfield import Grid
    grid = Grid(cfg.get("grid", "n", int), metric.radius)
    rng = np.random.default_rng(cfg.get("run", "seed", int))
    f = build_field(cfg, grid, metric, rng)
    if f.rank < 1:
        raise ConfigError("decompose needs [field] rank >= 1", line=cfg.lines.get(("field", "rank")))
    sf, u = project_solenoidal(f, metric)
    out.field("solenoidal", sf)
    out.field("potential", u)
    rep = stability_report(f, metric)
    out.json("decomposition.json", rep)
    return rep


def cmd_symbol(cfg, out, metric):
    from .symbols import fio_symbol, symbol_sweep
    m = cfg.get("symbol", "m", int)
    conv = cfg.get("symbol", "convention")
    pts = cfg.get("symbol", "sweep_points", "points")
    na = cfg.get("symbol", "sweep_angles", int)
    angles = np.arange(na) * np.pi / na
    rows = symbol_sweep(metric, m, pts, angles, conv)
    out.csv("psido_symbol_sweep.csv", ["x1", "x2", "angle", "re", "im", "angle_term0",
                                       "angle_term1"], rows)
    summary = {"rank": m, "rows": len(rows)}
    pair = build_pair(cfg, metric)
    if pair is not None and hasattr(pair, "f0"):
        s = fio_symbol(pair, m, convention=conv)
        summary["fio"] = {"coefficient": s.coefficient, "entries": s.entries,
                          "angle_terms": s.angle_terms, "datum": pair.summary()}
    out.json("symbol.json", summary)
    return summary


def cmd_verify_symbol(cfg, out, metric):
    from .microlocal import stationary_phase_check
    xray = build_xray(cfg, metric)
    pair = build_pair(cfg, metric)
    datum = pair if pair is not None and hasattr(pair, "f0") else None
    res = stationary_phase_check(
        xray, cfg.get("symbol", "x0", "vector"), cfg.get("symbol", "xi", "vector"),
        cfg.get("symbol", "m", int), cfg.get("symbol", "lambdas", "floats"), datum,
        cfg.get("symbol", "chirp", float), cfg.get("symbol", "width_f", float),
        cfg.get("symbol", "width_g", float))
    out.csv("convergence.csv", ["lambda", "k_i", "k_j", "re", "im", "re_predicted",
                                "im_predicted"], res.table())
    out.json("plot_triples.json", res.plot_triples())
    k, pred = res.predicted.pure_entry()
    K = res.coefficients[-1]
    err = abs(K[k] - pred) / abs(pred)
    scale = abs(K[k])
    off = [abs(K[i, j]) / scale for i in range(K.shape[0]) for j in range(K.shape[1])
           if (i, j) != tuple(k)]
    tol = cfg.get("symbol", "tolerance", float)
    summary = {
        "kind": res.kind, "rank": res.rank, "lambdas": res.lambdas,
        "coefficient": K[k], "coefficient_matrix": K, "predicted": pred,
        "predicted_matrix": res.predicted.entries, "relative_error": err,
        "magnitude_relative_error": abs(abs(K[k]) - abs(pred)) / abs(pred),
        "off_entry_max_ratio": max(off) if off else 0.0,
        "extrapolated": res.extrapolated[k], "monotone": res.monotone,
        "normalization": res.normalization, "tolerance": tol, "passed": bool(err <= tol),
    }
    out.json("verify_symbol.json", summary)
    if not summary["passed"]:
        raise NumericalFailure(f"harness coefficient misses the symbol by {err:.3g} > {tol}",
                               summary=summary)
    return summary


def cmd_hessian(cfg, out, metric):
    from .microlocal import (conjugate_phase, critical_configurations, diagonal_phase,
                             numerical_hessian)
    chirp = cfg.get("hessian", "chirp", float)
    tol = cfg.get("hessian", "tolerance", float)
    rows = []
    for x in cfg.get("hessian", "points", "points"):
        for th in cfg.get("hessian", "angles", "floats"):
            ph = diagonal_phase(metric, x, (np.cos(th), np.sin(th)), chirp)
            for cfg4 in critical_configurations(ph):
                H = numerical_hessian(ph, cfg4)
                expect = -chirp ** 2 * np.cos(cfg4[3]) ** 2
                rows.append(("diagonal", x[0], x[1], th, *cfg4, H.determinant, H.signature,
                             expect, abs(H.determinant - expect) / abs(expect)))
    pair = build_pair(cfg, metric)
    if pair is not None and hasattr(pair, "f0"):
        ph = conjugate_phase(pair, chirp)
        for cfg4 in critical_configurations(ph, pair):
            H = numerical_hessian(ph, cfg4)
            rows.append(("conjugate", pair.x0[0], pair.x0[1], float("nan"), *cfg4,
                         H.determinant, H.signature, float("nan"), float("nan")))
    out.csv("hessian.csv", ["phase", "x1", "x2", "angle", "t", "s", "z", "w", "determinant",
                            "signature", "expected_determinant", "relative_error"], rows)
    diag = [r for r in rows if r[0] == "diagonal"]
    summary = {
        "configurations": len(rows),
        "all_negative": all(r[8] < 0 for r in rows),
        "all_signature_two": all(r[9] == 2 for r in rows),
        "max_diagonal_relative_error": max((r[11] for r in diag), default=0.0),
    }
    summary["passed"] = bool(summary["all_negative"] and summary["all_signature_two"]
                             and summary["max_diagonal_relative_error"] <= tol)
    out.json("hessian.json", summary)
    if not summary["passed"]:
        raise NumericalFailure("Hessian checks failed", summary=summary)
    return summary


def cmd_cancel_demo(cfg, out, metric):
    from .cancel import CancelConfig, cancellation_demo, is_monotone_decreasing
    from .xray import FanSpec
    fan = FanSpec(cfg.get("cancel", "n_z", int), cfg.get("cancel", "n_w", int))
    xray = build_xray(cfg, metric, fan, cap=cfg.get("cancel", "cap", float))
    pair = build_pair(cfg, metric)
    if pair is None:
        raise ConfigError("cancel-demo needs a [pair] section")
    m = cfg.get("cancel", "m", int)
    cc = CancelConfig(half_angle=cfg.get("cancel", "half_angle", float),
                      probe_width=cfg.get("cancel", "probe_width", float),
                      regularization=cfg.get("cancel", "regularization", float),
                      cg_tol=cfg.get("cancel", "cg_tol", float),
                      cg_maxiter=cfg.get("cancel", "cg_maxiter", int))
    lams = cfg.get("cancel", "lambdas", "floats")
    target = cfg.get("cancel", "target", float)
    rows, reports = [], []
    for lam in lams:
        rep = cancellation_demo(xray, pair, lam, m, cc)
        rows.append((lam, rep.ratio, rep.energy_S2, rep.energy_S12, rep.parametrix.residual))
        reports.append(rep)
    out.csv("rho_vs_lambda.csv", ["lambda", "rho", "energy_S2", "energy_S12", "cg_residual"],
            rows)
    pick = min(range(len(lams)), key=lambda i: abs(lams[i] - 60.0))
    rep = reports[pick]
    out.field("f1", rep.fields["f1"])
    out.field("f2", rep.fields["f2"])
    out.sinogram("S2", rep.fields["S2"])
    out.sinogram("S12", rep.fields["S12"])
    ratios = [r[1] for r in rows]
    per = []
    for r in reports:
        d = r.summary()
        d.pop("timings")
        per.append(d)
    summary = {"rank": m, "conjugate": bool(getattr(pair, "conjugate", True)),
               "reports": per, "ratios": ratios, "fields_lambda": lams[pick],
               "monotone": is_monotone_decreasing(ratios), "target": target}
    if summary["conjugate"]:
        summary["passed"] = bool(rep.ratio <= target and summary["monotone"])
    else:
        summary["passed"] = bool(all(0.9 <= r <= 1.1 for r in ratios))
    out.json("cancel_report.json", summary)
    if not summary["passed"]:
        raise NumericalFailure("cancellation ratio misses its target", ratios=ratios)
    return summary


COMMANDS = {
    "geodesics": cmd_geodesics,
    "sinogram": cmd_sinogram,
    "backproject": cmd_backproject,
    "normal": cmd_normal,
    "decompose": cmd_decompose,
    "symbol": cmd_symbol,
    "verify-symbol": cmd_verify_symbol,
    "hessian": cmd_hessian,
    "cancel-demo": cmd_cancel_demo,
}


# -- report ---------------------------------------------------------------------

def render_report(root):
    """PNG figures for whatever artifacts an output directory holds."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    root = Path(root)
    if not root.is_dir():
        raise OSError(f"{root} is not a directory")
    made = []

    def save(fig, name):
        p = root / name
        fig.savefig(p, dpi=120, bbox_inches="tight")
        plt.close(fig)
        made.append(p)

    def read_csv(name):
        with open(root / name) as fh:
            rows = list(csv.reader(fh))
        return rows[0], rows[1:]

    if (root / "geodesics.csv").exists():
        _, rows = read_csv("geodesics.csv")
        a = np.array(rows, dtype=float)
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        for ray in np.unique(a[:, 0]):
            sel = a[a[:, 0] == ray]
            ax.plot(sel[:, 2], sel[:, 3], lw=0.7, color="0.25")
        R = np.max(np.hypot(a[:, 2], a[:, 3]))
        th = np.linspace(0, 2 * np.pi, 400)
        ax.plot(R * np.cos(th), R * np.sin(th), color="k", lw=1)
        ax.set_aspect("equal")
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        save(fig, "geodesics.png")
    if (root / "conjugate_locus.csv").exists():
        _, rows = read_csv("conjugate_locus.csv")
        if rows:
            a = np.array(rows, dtype=float)
            fig, ax = plt.subplots(figsize=(5, 3.5))
            sc = ax.scatter(a[:, 0], a[:, 1], c=a[:, 2], s=12, cmap="viridis")
            fig.colorbar(sc, ax=ax, label="first conjugate time")
            ax.set_xlabel("z")
            ax.set_ylabel("w")
            save(fig, "conjugate_locus.png")
    if (root / "plot_triples.json").exists():
        trip = json.loads((root / "plot_triples.json").read_text())
        lam = [t["lambda"] for t in trip]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(lam, [t["coefficient"][0] for t in trip], "o-", label="measured (real part)")
        ax.axhline(trip[0]["predicted"][0], color="k", ls="--", label="symbol")
        ax.set_xscale("log")
        ax.set_xlabel("lambda")
        ax.set_ylabel("coefficient")
        ax.legend(frameon=False)
        save(fig, "convergence.png")
    if (root / "rho_vs_lambda.csv").exists():
        _, rows = read_csv("rho_vs_lambda.csv")
        a = np.array(rows, dtype=float)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.semilogy(a[:, 0], a[:, 1], "o-")
        ax.set_xlabel("lambda")
        ax.set_ylabel("sinogram cone energy ratio")
        save(fig, "rho_vs_lambda.png")
    for name in ("S2", "S12", "sinogram"):
        if (root / f"{name}.json").exists():
            from .xray import load_sinogram
            s = load_sinogram(root / name)
            fig, ax = plt.subplots(figsize=(5, 3.5))
            im = ax.imshow(np.abs(s.values).T, origin="lower", aspect="auto",
                           extent=(s.z[0], s.length, s.w[0], s.w[-1]), cmap="magma")
            fig.colorbar(im, ax=ax)
            ax.set_xlabel("z")
            ax.set_ylabel("w")
            save(fig, f"{name}.png")
    for name in ("f1", "f2", "field", "normal", "backprojection", "solenoidal"):
        if (root / f"{name}.json").exists():
            from .tensorfield import load_field
            f = load_field(root / name)
            R = f.grid.radius
            fig, ax = plt.subplots(figsize=(4.5, 4))
            mag = np.sqrt(np.sum(np.abs(f.comps) ** 2, axis=0))
            im = ax.imshow(mag.T, origin="lower", extent=(-R, R, -R, R), cmap="magma")
            fig.colorbar(im, ax=ax)
            ax.set_title(f"|{name}|")
            save(fig, f"{name}.png")
    if (root / "hessian.csv").exists():
        _, rows = read_csv("hessian.csv")
        d = [r for r in rows if r[0] == "diagonal"]
        if d:
            w = np.array([float(r[7]) for r in d])
            det = np.array([float(r[8]) for r in d])
            fig, ax = plt.subplots(figsize=(5, 3.5))
            ww = np.linspace(w.min() - 0.1, w.max() + 0.1, 200)
            ax.plot(w, det, "o", label="finite differences")
            exp = np.array([float(r[10]) for r in d])
            c2 = float(np.median(-exp / np.cos(w) ** 2))
            ax.plot(ww, -c2 * np.cos(ww) ** 2, "k--", label="-c^2 cos^2 w")
            ax.set_xlabel("w")
            ax.set_ylabel("det H")
            ax.legend(frameon=False)
            save(fig, "hessian.png")
    return made


# -- entry point ------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="geotensor", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", metavar="command")
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config")
        s.add_argument("output")
    r = sub.add_parser("report")
    r.add_argument("output")
    return p


def _set_workers(n):
    if n > 0:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def run(command, config_path, output):
    """Run one subcommand; returns the exit status."""
    tic = time.perf_counter()
    cfg = None
    try:
        cfg = Config.read(config_path)
        cfg.check_unknown(SECTIONS[command])
        cfg.resolve(SECTIONS[command])
        _set_workers(cfg.get("run", "workers", int))
        metric = build_metric(cfg)
        out = Outputs(output)
    except ConfigError as exc:
        print(f"geotensor {command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"geotensor {command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GeotensorError as exc:
        print(f"geotensor {command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    status, extra = EXIT_OK, None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NearTangencyWarning)
            summary = COMMANDS[command](cfg, out, metric)
    except ConfigError as exc:
        print(f"geotensor {command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"geotensor {command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GeotensorError as exc:
        module = type(exc).__module__.rsplit(".", 1)[-1]
        print(f"geotensor {command}: {type(exc).__name__} [{module}]: {exc}", file=sys.stderr)
        status, extra = EXIT_NUMERICS, {"error": {"type": type(exc).__name__, "message": str(exc)}}
        summary = None
    try:
        write_manifest(out, command, cfg, {"total_seconds": time.perf_counter() - tic},
                       status, extra)
    except OSError as exc:
        print(f"geotensor {command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if summary is not None:
        print(json.dumps(_plain(summary), sort_keys=True, default=str))
    return status


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.command == "report":
        try:
            made = render_report(args.output)
        except OSError as exc:
            print(f"geotensor report: I/O error: {exc}", file=sys.stderr)
            return EXIT_IO
        for p in made:
            print(p)
        return EXIT_OK
    if not os.path.exists(args.config):
        parser.print_usage(sys.stderr)
        print(f"geotensor: config file {args.config} not found", file=sys.stderr)
        return EXIT_USAGE
    return run(args.command, args.config, args.output)


if __name__ == "__main__":
    sys.exit(main())
