"""Experiment configuration: flat key = value files with bracketed lists.

Sections:
  [problem]      problem = mpt | mpet, network count, material parameters,
                 mesh_sizes, preconditioner choice
  [sweep]        lists that are swept in a Cartesian product (mu, lambda,
                 tau, s, xi, K1..Kn); rows iterate sweeps in file order
                 with mesh sizes innermost
  [solver]       tol (ratio of preconditioned residual inner products),
                 maxit, seed, threads, out, plot, solution_out
  [diagonalize]  k_file / e_file matrix paths for the diagonalize command

Scalar values are plain literals; lists use bracket syntax, e.g.
K = [1e-6, 1, 1e6]; matrices nest brackets row by row.
"""

from __future__ import annotations

import ast
import configparser
import itertools

import numpy as np

from .congruence import MpetParameters

__all__ = ["ConfigError", "ExperimentConfig", "parse_config"]


class ConfigError(Exception):
    """Raised for unreadable or inconsistent configuration files."""


def _parse_value(text):
    text = text.strip()
    if text.startswith("["):
        try:
            return ast.literal_eval(text)
        except (ValueError, SyntaxError) as err:
            raise ConfigError(f"malformed list value {text!r}: {err}") from err
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


class ExperimentConfig:
    """One experiment description: base parameter point plus sweep lists."""

    def __init__(self, problem="mpet", J=2, mu=1.0, lam=1.0, tau=1.0,
                 alpha=None, s=1.0, K=None, xi=0.0, mesh_sizes=(16,),
                 precond="transformed", include_storage=False, tol=1e-6,
                 maxit=5000, seed=0, threads=1, out=None, plot=False,
                 solution_out=None, sweeps=None, diagonalize=None):
        if problem not in ("mpt", "mpet"):
            raise ConfigError(f"problem must be 'mpt' or 'mpet', got {problem!r}")
        if precond not in ("naive", "transformed"):
            raise ConfigError(f"precond must be 'naive' or 'transformed', got {precond!r}")
        self.problem = problem
        self.J = int(J)
        self.mu = float(mu)
        self.lam = float(lam)
        self.tau = float(tau)
        self.alpha = np.full(self.J, 0.5 / max(self.J / 2, 1)) if alpha is None \
            else np.atleast_1d(np.asarray(alpha, dtype=float))
        self.s = s
        self.K = np.ones(self.J) if K is None else np.atleast_1d(np.asarray(K, dtype=float))
        self.xi = xi
        self.mesh_sizes = [int(n) for n in np.atleast_1d(mesh_sizes)]
        self.precond = precond
        self.include_storage = bool(include_storage)
        self.tol = float(tol)
        self.maxit = int(maxit)
        self.seed = int(seed)
        self.threads = int(threads)
        self.out = out
        self.plot = bool(plot)
        self.solution_out = solution_out
        self.sweeps = dict(sweeps or {})
        self.diagonalize = dict(diagonalize or {})
        if not self.mesh_sizes:
            raise ConfigError("mesh_sizes must be nonempty")
        if not (0.0 < self.tol < 1.0):
            raise ConfigError(f"tol must lie in (0, 1), got {self.tol}")
        for key, values in self.sweeps.items():
            if not isinstance(values, (list, tuple)) or len(values) == 0:
                raise ConfigError(f"sweep list {key!r} must be a nonempty list")

    def _xi_matrix(self, xi_value):
        J = self.J
        if np.isscalar(xi_value):
            xi = np.full((J, J), float(xi_value))
            np.fill_diagonal(xi, 0.0)
            return xi
        xi = np.asarray(xi_value, dtype=float)
        if xi.ndim == 1:
            raise ConfigError("xi must be a scalar (uniform coupling) or a full matrix")
        return xi

    def point_params(self, overrides=None):
        """MpetParameters for the base point with sweep overrides applied."""
        values = {
            "mu": self.mu, "lambda": self.lam, "tau": self.tau,
            "s": self.s, "xi": self.xi,
        }
        K = np.array(self.K, dtype=float, copy=True)
        for key, val in (overrides or {}).items():
            if key in values:
                values[key] = val
            elif key.startswith("K") and key[1:].isdigit():
                idx = int(key[1:]) - 1
                if not 0 <= idx < self.J:
                    raise ConfigError(f"sweep key {key!r} outside 1..{self.J}")
                K[idx] = val
            else:
                raise ConfigError(f"unknown sweep key {key!r}")
        s = values["s"]
        s_vec = np.full(self.J, float(s)) if np.isscalar(s) \
            else np.asarray(s, dtype=float)
        return MpetParameters(
            mu=values["mu"], lam=values["lambda"], alpha=self.alpha, s=s_vec,
            K=K, xi=self._xi_matrix(values["xi"]), tau=values["tau"],
        )

    def sweep_points(self):
        """Ordered (overrides, params) product of the sweep lists."""
        keys = list(self.sweeps)
        if not keys:
            return [({}, self.point_params())]
        points = []
        for combo in itertools.product(*(self.sweeps[k] for k in keys)):
            overrides = dict(zip(keys, combo))
            points.append((overrides, self.point_params(overrides)))
        return points


_PROBLEM_KEYS = {
    "problem", "J", "mu", "lambda", "tau", "alpha", "s", "K", "xi",
    "mesh_sizes", "precond", "include_storage",
}
_SOLVER_KEYS = {"tol", "maxit", "seed", "threads", "out", "plot", "solution_out"}


def parse_config(path):
    """Read an ExperimentConfig from a flat key = value file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except configparser.Error as err:
        raise ConfigError(f"malformed config {path}: {err}") from err

    kwargs = {}
    for section in parser.sections():
        if section not in ("problem", "solver", "sweep", "diagonalize"):
            raise ConfigError(f"unknown section [{section}] in {path}")
    if parser.has_section("problem"):
        for key, raw in parser.items("problem"):
            if key not in _PROBLEM_KEYS:
                raise ConfigError(f"unknown key {key!r} in [problem]")
            value = _parse_value(raw)
            kwargs["lam" if key == "lambda" else key] = value
    if parser.has_section("solver"):
        for key, raw in parser.items("solver"):
            if key not in _SOLVER_KEYS:
                raise ConfigError(f"unknown key {key!r} in [solver]")
            kwargs[key] = _parse_value(raw)
    if parser.has_section("sweep"):
        sweeps = {}
        for key, raw in parser.items("sweep"):
            value = _parse_value(raw)
            if not isinstance(value, list):
                raise ConfigError(f"sweep key {key!r} must carry a bracketed list")
            sweeps[key] = value
        kwargs["sweeps"] = sweeps
    if parser.has_section("diagonalize"):
        kwargs["diagonalize"] = {k: _parse_value(v) for k, v in parser.items("diagonalize")}
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as err:
        raise ConfigError(f"invalid configuration {path}: {err}") from err
