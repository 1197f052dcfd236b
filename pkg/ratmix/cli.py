"""Command-line entry point: `ratmix <module> --op <operation> ...` and `ratmix run SPEC.json`."""
import functools
import logging
import sys

import click

from ratmix import config
from ratmix.errors import RatmixError
from ratmix.experiments import ExperimentSpec, emit, execute, load_specs, operations

EXIT_FAILED_CHECK = 2
EXIT_ERROR = 1


def common_options(fn):
    """Horizon, grid, tolerance, numeric mode, emission and worker options shared by every module."""
    options = [
        click.option("--N", "N", type=int, default=1000, show_default=True, help="Horizon"),
        click.option("--grid", default="dyadic", show_default=True, help="dyadic or linear:<step>"),
        click.option("--tol", type=float, default=config.DEFAULT_TOL, show_default=True,
                     help="Tolerance of at-horizon verdicts"),
        click.option("--eps", type=float, default=config.DEFAULT_EPS, show_default=True,
                     help="Level of exceptional sets"),
        click.option("--mode", type=click.Choice(["float", "rational"]), default="float", show_default=True),
        click.option("--emit", type=click.Choice(["report", "plot-data"]), default="report", show_default=True,
                     help="Report JSON, or profile CSVs only"),
        click.option("--jobs", type=int, default=1, show_default=True, help="Worker threads for per-pair work"),
        click.option("--out", type=click.Path(file_okay=False), default=None,
                     help="Write artifacts to this directory instead of stdout"),
        click.option("--name", default=None, help="Artifact name prefix"),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _run_specs(specs):
    failed = False
    for spec in specs:
        report, artifacts = execute(spec)
        emit(spec, report, artifacts, click.echo)
        if not report.passed:
            failed = True
            click.echo(f"{spec.label}: failed checks {sorted(k for k, ok in report.checks.items() if not ok)}",
                       err=True)
    return failed


def _guarded(fn):
    """Map RatmixError to exit 1 with "Error: ..." and failed checks to exit 2."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            failed = fn(*args, **kwargs)
        except RatmixError as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_ERROR)
        if failed:
            sys.exit(EXIT_FAILED_CHECK)
    return wrapper


def _module_command(command, op, options, inputs):
    spec = ExperimentSpec(command=command, op=op, inputs=inputs, **options)
    return _run_specs([spec])


def _split(kwargs):
    common = {k: kwargs.pop(k) for k in ("N", "grid", "tol", "eps", "mode", "emit", "jobs", "out", "name")}
    return common, kwargs


def _op_choice(command):
    return click.Choice(operations(command))


@click.group()
@click.option("--log-level", default=config.LOG_LEVEL, show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def main(log_level):
    """Finite-horizon diagnostics for renewal sequences, Markov shifts and rational weak mixing."""
    logging.basicConfig(level=log_level.upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("spec_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Override the output directory")
@click.option("--jobs", type=int, default=None, help="Override worker threads")
@_guarded
def run(spec_file, out, jobs):
    """Execute an experiment spec (a single spec or a list of steps)."""
    specs = load_specs(spec_file)
    for spec in specs:
        if out is not None:
            spec.out = out
        if jobs is not None:
            spec.jobs = max(1, jobs)
    return _run_specs(specs)


@main.command()
@click.option("--op", type=_op_choice("weights"), required=True)
@click.option("--weight", default="harmonic", show_default=True,
              help="power(b), harmonic, constant(c), alternating(k), hopf-asymptotic, kaluza-log, "
                   "renewal:<family>, occupation(s) or an n,u CSV")
@click.option("--chain", default=None, help="Chain for occupation weights")
@click.option("--p", type=int, default=None, help="Subsampling step")
@click.option("--theta", default=None, help="Comma-separated frequencies in (0, 1)")
@common_options
@_guarded
def weights(op, **kwargs):
    """Weight calculus: smoothness, regular variation, subsampling, Kaluza checks."""
    common, inputs = _split(kwargs)
    return _module_command("weights", op, common, inputs)


@main.command()
@click.option("--op", type=_op_choice("sets"), required=True)
@click.option("--set", "set_", default="counterexample", show_default=True,
              help="Generator such as counterexample, squares, bernoulli(density,seed), or set JSON")
@click.option("--weight", default="harmonic", show_default=True)
@common_options
@_guarded
def sets(op, set_, **kwargs):
    """Small sets: u-smallness against counting density."""
    common, inputs = _split(kwargs)
    return _module_command("sets", op, common, {**inputs, "set": set_})


@main.command()
@click.option("--op", type=_op_choice("renewal"), required=True)
@click.option("--family", default=None, help="geometric(p), st-petersburg, pareto(g), delta(k) or lifetime JSON")
@click.option("--weight", default=None, help="Sequence to invert instead of a family")
@click.option("--k", type=int, default=None, help="Jump factor of the construction")
@click.option("--gamma", type=float, default=None,
              help="Target of the Garsia-Lamperti ratio (defaults to a pareto index)")
@click.option("--negative-tol", "negative_tol", type=float, default=None,
              help="Inverted masses below minus this value reject the input as not a renewal sequence")
@click.option("--theta", default=None, help="Comma-separated frequencies in (0, 1)")
@common_options
@_guarded
def renewal(op, **kwargs):
    """Renewal sequences and lifetimes."""
    common, inputs = _split(kwargs)
    return _module_command("renewal", op, common, inputs)


@main.command()
@click.option("--op", type=_op_choice("chain"), required=True)
@click.option("--kind", type=click.Choice(["hopf", "renewal-shift"]), default=None)
@click.option("--family", default=None, help="Lifetime of a renewal shift")
@click.option("--chain", default=None, help="hopf or renewal-shift:<family>")
@click.option("--s", type=int, default=None, help="Reference state")
@click.option("--targets", default=None, help="Comma-separated target states")
@click.option("--triples", default=None, help="r,t,l triples separated by ';'")
@click.option("--A", "A", default=None, help="Cylinder such as [1,2]_0")
@click.option("--B", "B", default=None)
@click.option("--window", type=int, default=None)
@common_options
@_guarded
def chain(op, **kwargs):
    """Markov shifts: occupation, n-step rows, first passage, ratio limits, correlations."""
    common, inputs = _split(kwargs)
    return _module_command("chain", op, common, inputs)


@main.command()
@click.option("--op", type=_op_choice("mixing"), required=True)
@click.option("--chain", default="hopf", show_default=True)
@click.option("--pairs", default=None, help="Basket JSON of cylinders or cylinder pairs")
@click.option("--A", "A", default=None)
@click.option("--B", "B", default=None)
@click.option("--E", "E", default=None, help="Cylinders of E separated by ';'")
@click.option("--F", "F", default=None, help="Cylinders of F separated by ';'")
@click.option("--s", type=int, default=None, help="State of the occupation weight")
@click.option("--weight", default=None, help="Weight instead of the occupation sequence")
@click.option("--gamma", type=float, default=None, help="Target of the Garsia-Lamperti ratio")
@common_options
@_guarded
def mixing(op, **kwargs):
    """Rational weak mixing, Krickeberg ratios, density convergence, return sequences."""
    common, inputs = _split(kwargs)
    return _module_command("mixing", op, common, inputs)


@main.command()
@click.option("--op", type=_op_choice("affine"), required=True)
@click.option("--chain", default="hopf", show_default=True)
@click.option("--cutoff", type=int, default=None, help="Largest laid out state")
@click.option("--x", default=None)
@click.option("--y", default=None)
@click.option("--length", type=int, default=None, help="Orbit length")
@click.option("--intervals", type=int, default=None, help="Random subintervals to test")
@click.option("--cylinders", default=None, help="Words separated by ';'")
@click.option("--samples", type=int, default=None)
@click.option("--seed", type=int, default=None)
@common_options
@_guarded
def affine(op, **kwargs):
    """Piecewise affine realization and its natural extension."""
    common, inputs = _split(kwargs)
    return _module_command("affine", op, common, inputs)


if __name__ == "__main__":
    main()
