"""Command-line front end.

Commands: simulate, clt, lln, coupling, oracle, spectral, selftest.
Exit codes: 0 success, 1 statistical failure, 2 malformed configuration,
3 resource cap exceeded.

Oracle and spectral queries print bare values with repr precision, so CLI
output equals the library value bit-for-bit. The default diffusion for
parameter-style queries is sigma^2 = 2: at mu = 1 the equilibrium measure
is then the standard normal and the degree-1 orthonormal eigenfunction is
literally x.
"""

from __future__ import annotations

import argparse
import math
import re
import sys

from .engine import Limits
from .errors import BouLabError, ConfigError, ResourceLimitError
from .oracles import GWLaw, gw_laplace, hinf_moment, population_moment
from .params import ModelParams
from .spectral import (SpectralFunction, gradient_mean, sigma2_critical,
                       sigma2_critical_hermite, sigma2_small, sigma2_small_integral)

EXIT_OK = 0
EXIT_STAT_FAIL = 1
EXIT_CONFIG = 2
EXIT_RESOURCE = 3

DEFAULT_SIGMA = math.sqrt(2.0)


def _add_run_flags(sub):
    sub.add_argument("--config", required=True, help="TOML or JSON experiment config")
    sub.add_argument("--out", required=True, help="output directory for artifacts")
    sub.add_argument("--seed", type=int, default=None, help="override config seed")
    sub.add_argument("--replicas", type=int, default=None, help="override replica count")
    sub.add_argument("--threads", type=int, default=None, help="worker process count")


def _add_param_flags(sub, with_d: bool = False):
    sub.add_argument("--p", type=float, default=0.75)
    sub.add_argument("--lambda", dest="lam", type=float, default=1.0)
    sub.add_argument("--mu", type=float, default=1.0)
    sub.add_argument("--sigma", type=float, default=None,
                     help=f"diffusion sigma (default sqrt(2) = {DEFAULT_SIGMA!r})")
    if with_d:
        sub.add_argument("--d", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bou-lab",
        description="Branching Ornstein-Uhlenbeck simulation and verification lab")
    subs = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("simulate", "run a replica ensemble and emit per-replica CSV"),
        ("clt", "run the regime-appropriate CLT experiment"),
        ("lln", "run the law-of-large-numbers experiment"),
        ("coupling", "run the pathwise coupling experiment"),
    ]:
        _add_run_flags(subs.add_parser(name, help=help_text))

    oracle = subs.add_parser("oracle", help="print closed-form oracle values")
    oracle.add_argument("--query", required=True,
                        choices=["vinf-var", "vinf-mean", "extinction-prob",
                                 "growth-rate", "pop-moment", "gw-laplace",
                                 "hinf-moment"])
    _add_param_flags(oracle)
    oracle.add_argument("--t", type=float, default=None)
    oracle.add_argument("--theta", type=float, default=None)
    oracle.add_argument("--k", type=int, default=None)

    spectral = subs.add_parser("spectral", help="spectral variance functionals")
    spectral.add_argument("--sigma2", required=True,
                          choices=["small", "small-integral", "critical",
                                   "critical-hermite"])
    spectral.add_argument("--f", required=True,
                          help="test function: poly:<1-d polynomial in x>, "
                               "hermite:<degree>, or json:<config-style spec>")
    _add_param_flags(spectral, with_d=True)

    grad = subs.add_parser("gradient-mean", help="equilibrium mean of the gradient")
    grad.add_argument("--f", required=True)
    _add_param_flags(grad, with_d=True)

    subs.add_parser("selftest", help="run the exact-identity self tests")
    return parser


_TERM_RE = re.compile(r"^([+-]?\d*\.?\d*(?:[eE][+-]?\d+)?)\s*\*?\s*(x(?:\^(\d+))?)?$")


def parse_function(spec: str, params: ModelParams) -> SpectralFunction:
    """Parse poly:<expr> (1-d), hermite:<degree>, or json:<spec> forms."""
    if spec.startswith("hermite:"):
        degree = int(spec.split(":", 1)[1])
        alpha = [0] * params.d
        alpha[0] = degree
        return SpectralFunction.from_hermite([[1.0, alpha]], params)
    if spec.startswith("json:"):
        import json as _json

        entry = _json.loads(spec.split(":", 1)[1])
        if "poly" in entry:
            return SpectralFunction.from_poly(entry["poly"], params.d)
        if "hermite" in entry:
            return SpectralFunction.from_hermite(entry["hermite"], params)
        raise ConfigError("json function spec must declare 'poly' or 'hermite'")
    if spec.startswith("poly:"):
        if params.d != 1:
            raise ConfigError("poly:<expr> parsing is 1-d; use json:{...} for d > 1")
        body = spec.split(":", 1)[1].replace(" ", "").replace("-", "+-")
        terms = []
        for chunk in filter(None, body.split("+")):
            m = _TERM_RE.match(chunk)
            if not m:
                raise ConfigError(f"cannot parse polynomial term {chunk!r}")
            coeff_s, xpart, power_s = m.groups()
            coeff = float(coeff_s) if coeff_s not in ("", "+", "-") else float(coeff_s + "1")
            power = (int(power_s) if power_s else 1) if xpart else 0
            terms.append([coeff, [power]])
        return SpectralFunction.from_poly(terms, 1)
    raise ConfigError(f"unknown function spec {spec!r}; use poly:, hermite: or json:")


def _params_from_args(args) -> ModelParams:
    sigma = args.sigma if args.sigma is not None else DEFAULT_SIGMA
    return ModelParams(d=getattr(args, "d", 1), sigma=sigma, mu=args.mu,
                       lam=args.lam, p=args.p)


def _run_oracle(args) -> int:
    law = GWLaw(lam=args.lam, p=args.p)
    q = args.query
    if q == "vinf-var":
        value = 1.0 / (2.0 * args.p - 1.0)
    elif q == "vinf-mean":
        value = args.p / (2.0 * args.p - 1.0)
    elif q == "extinction-prob":
        value = law.p_e
    elif q == "growth-rate":
        value = law.lambda_p
    elif q == "pop-moment":
        if args.t is None or args.k is None:
            raise ConfigError("pop-moment requires --t and --k")
        value = population_moment(args.t, args.k, law)
    elif q == "gw-laplace":
        if args.t is None or args.theta is None:
            raise ConfigError("gw-laplace requires --t and --theta")
        value = gw_laplace(args.t, args.theta, law)
    else:  # hinf-moment
        if args.k is None:
            raise ConfigError("hinf-moment requires --k")
        value = hinf_moment(args.k, _params_from_args(args))
    print(format(float(value), ".15g"))
    return EXIT_OK


def _run_spectral(args) -> int:
    params = _params_from_args(args)
    f = parse_function(args.f, params)
    mode = args.sigma2
    if mode == "small":
        value = sigma2_small(f, params)
    elif mode == "small-integral":
        value = sigma2_small_integral(f, params)
    elif mode == "critical":
        value = sigma2_critical(f, params)
    else:
        value = sigma2_critical_hermite(f, params)
    print(format(float(value), ".15g"))
    return EXIT_OK


def _run_gradient(args) -> int:
    params = _params_from_args(args)
    f = parse_function(args.f, params)
    print(" ".join(format(float(v), ".15g") for v in gradient_mean(f, params)))
    return EXIT_OK


def _run_experiment(args, kind: str) -> int:
    from . import harness
    from .config import load_experiment

    config = load_experiment(args.config, seed=args.seed, replicas=args.replicas,
                             workers=args.threads)
    if kind == "coupling":
        report = harness.coupling_experiment(config)
        result = None
    else:
        result = harness.run_ensemble(config)
        if kind == "simulate":
            report = harness.ensemble_summary(config, result)
        elif kind == "lln":
            report = harness.lln_experiment(config, result=result)
        else:
            report = harness.clt_experiment(config, result=result)
    paths = harness.write_report(args.out, report, config, result)
    for line in report.summary_lines():
        print(line)
    print(f"report: {paths['report']}")
    return EXIT_OK if report.all_passed else EXIT_STAT_FAIL


def _run_selftest() -> int:
    """Exact-identity battery: fails loudly, exits 0 when everything holds."""
    import numpy as np

    from . import ou
    from .engine import population_functional, simulate
    from .oracles import vinf_conditional_cdf
    from .rng import fixed_stream
    from .stats import kolmogorov_cdf, kolmogorov_quantile

    checks = []

    def check(name, ok):
        checks.append((name, ok))
        print(f"  [{'ok' if ok else 'FAIL'}] {name}")

    params = ModelParams(d=1, sigma=1.0, mu=math.pi, lam=1.0, p=0.75)
    check("equilibrium density prefactor", abs(ou.equilibrium_density([0.0], params) - 1.0) < 1e-14)

    params = ModelParams(d=1, sigma=DEFAULT_SIGMA, mu=1.0, lam=1.0, p=0.75)
    x = ou.ou_transition_sample([1.25], 0.0, params, fixed_stream(7))
    check("dt = 0 transition is the identity", float(x[0]) == 1.25)

    f1 = SpectralFunction.monomial((1,))
    val = ou.ou_semigroup_apply(f1, 0.7, [2.0], params)
    check("semigroup preserves linearity", abs(val - 2.0 * math.exp(-0.7)) < 1e-12)

    law = GWLaw(lam=1.0, p=0.75)
    check("gw laplace total mass", gw_laplace(3.0, 0.0, law) == 1.0)
    check("gw laplace initial condition",
          abs(gw_laplace(0.0, 0.4, law) - math.exp(-0.4)) < 1e-15)
    check("vinf cdf at 0", vinf_conditional_cdf(0.0, law) == 0.0)
    check("population moment at t=0", population_moment(0.0, 4, law) == 1.0)

    s = simulate(params, [0.5], [0.0], fixed_stream(3))
    check("snapshot at t=0 is the initial particle",
          s.snapshots[0].count == 1 and float(s.snapshots[0].h_value[0]) == 0.5)
    check("population functional of f = 1",
          population_functional(s.snapshots[0], SpectralFunction.monomial((0,))) == 1.0)

    q = kolmogorov_quantile(0.99)
    check("kolmogorov quantile round trip", abs(kolmogorov_cdf(q) - 0.99) < 1e-9)

    xs, ys = ou.coupled_pair_transition([1.0], [0.0], math.log(2.0), params, fixed_stream(5))
    check("coupling contraction at dt = ln 2",
          abs(float(xs[0] - ys[0]) - 0.5) < 1e-12)

    failed = [name for name, ok in checks if not ok]
    print(f"selftest: {len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_OK if not failed else EXIT_STAT_FAIL


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "oracle":
            return _run_oracle(args)
        if args.command == "spectral":
            return _run_spectral(args)
        if args.command == "gradient-mean":
            return _run_gradient(args)
        if args.command == "selftest":
            return _run_selftest()
        return _run_experiment(args, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceLimitError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except BouLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
