"""
Experiment specs and the operation registry behind the command line.

An ExperimentSpec names a module (`command`), an operation within it and the
inputs that operation reads. `execute` resolves the inputs, runs the
operation and returns its Report together with any extra artifacts; `emit`
writes them. Nothing here depends on wall time, so identical specs give
byte-identical artifacts.
"""
import dataclasses
import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from ratmix import affine, config, indexsets, markov, mixing, renewal, weights
from ratmix.errors import ConfigError
from ratmix.numeric import dyadic_grid, parse_grid, require_rational_horizon
from ratmix.report import ConvergenceProfile, Report, dumps

logger = logging.getLogger(__name__)

COMMANDS = ("weights", "sets", "renewal", "chain", "mixing", "affine")
MODES = ("float", "rational")
EMITS = ("report", "plot-data")
HASH_EXCLUDED = ("out", "jobs", "base")  # Fields that never change the numbers

OPERATIONS = {}


def operation(command, name):
    """Register handler(spec) -> (Report, {artifact name: text}) for `ratmix <command> --op <name>`."""
    def register(fn):
        OPERATIONS[(command, name)] = fn
        return fn
    return register


def operations(command):
    return sorted(op for cmd, op in OPERATIONS if cmd == command)


@dataclass
class ExperimentSpec:
    """
    One diagnostic run.

    :param command: module the operation belongs to
    :param op: operation name
    :param N: horizon
    :param grid: "dyadic" or "linear:<step>"
    :param mode: "float" or "rational"
    :param inputs: operation inputs (weight, family, chain, set, cylinders, ...)
    :param base: directory that relative input paths resolve against
    """
    command: str
    op: str
    N: int = 1000
    grid: str = "dyadic"
    tol: float = config.DEFAULT_TOL
    eps: float = config.DEFAULT_EPS
    mode: str = "float"
    emit: str = "report"
    jobs: int = 1
    out: str = None
    name: str = None
    inputs: dict = field(default_factory=dict)
    base: str = "."

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; expected one of {list(COMMANDS)}")
        if (self.command, self.op) not in OPERATIONS:
            raise ConfigError(f"unknown operation {self.op!r} for {self.command}; expected one of {operations(self.command)}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {list(MODES)}, got {self.mode!r}")
        if self.emit not in EMITS:
            raise ConfigError(f"emit must be one of {list(EMITS)}, got {self.emit!r}")
        self.N = int(self.N)
        if self.N < 1:
            raise ConfigError(f"horizon must be positive, got {self.N}")
        self.jobs = max(1, int(self.jobs))
        self.inputs = {k: v for k, v in self.inputs.items() if v is not None}

    @classmethod
    def from_dict(cls, data, base="."):
        """Known fields are taken as they are; every other key becomes an input."""
        known = {f.name for f in dataclasses.fields(cls)} - {"inputs", "base"}
        kwargs = {k: v for k, v in data.items() if k in known}
        inputs = dict(data.get("inputs", {}))
        inputs.update({k: v for k, v in data.items() if k not in known and k not in ("inputs", "steps")})
        if "command" not in kwargs or "op" not in kwargs:
            raise ConfigError("an experiment spec needs 'command' and 'op'")
        return cls(inputs=inputs, base=str(base), **kwargs)

    @property
    def exact(self):
        return self.mode == "rational"

    @property
    def label(self):
        return self.name or f"{self.command}-{self.op}"

    def get(self, key, default=None):
        return self.inputs.get(key, default)

    def grid_points(self, horizon=None):
        return parse_grid(self.grid, self.N if horizon is None else horizon)

    def canonical(self):
        data = {k: v for k, v in dataclasses.asdict(self).items() if k not in HASH_EXCLUDED}
        return json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)

    def digest(self):
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def path(self, value):
        p = Path(value)
        return p if p.is_absolute() else Path(self.base) / p


def load_specs(path):
    """
    Specs from a JSON file: one spec, or {"steps": [...]} whose top-level keys
    are defaults for every step.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read spec {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: a spec must be a JSON object")
    base = path.parent
    steps = data.get("steps")
    if steps is None:
        return [ExperimentSpec.from_dict(data, base)]
    defaults = {k: v for k, v in data.items() if k != "steps"}
    specs = []
    for i, step in enumerate(steps):
        merged = {**defaults, **step}
        merged.setdefault("name", f"step{i + 1}-{merged.get('command')}-{merged.get('op')}")
        specs.append(ExperimentSpec.from_dict(merged, base))
    return specs


# Input resolution

CALL = re.compile(r"^\s*([A-Za-z][\w\-]*)\s*(?:\((.*)\))?\s*$")


def _number(token):
    token = token.strip()
    if re.fullmatch(r"[+-]?\d+", token):
        return int(token)
    if "/" in token:
        return Fraction(token)
    try:
        return float(token)
    except ValueError as e:
        raise ConfigError(f"bad number {token!r}") from e


def parse_call(text):
    """"pareto(0.75)" -> ("pareto", (0.75,)); a bare name has no parameters."""
    match = CALL.match(str(text))
    if not match:
        raise ConfigError(f"cannot parse {text!r}; expected name or name(p1, p2, ...)")
    raw = match.group(2)
    params = tuple(_number(t) for t in raw.split(",")) if raw and raw.strip() else ()
    return match.group(1), params


def _read_json(spec, value):
    if isinstance(value, (dict, list)):
        return value
    try:
        return json.loads(spec.path(value).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read {value}: {e}") from e


def build_lifetime(spec, value=None):
    """Lifetime from a family string, a lifetime dict or a path to lifetime JSON."""
    value = value if value is not None else spec.get("lifetime", spec.get("family"))
    if value is None:
        raise ConfigError(f"{spec.label}: needs a lifetime (family or lifetime JSON)")
    if isinstance(value, str) and value.endswith(".json"):
        value = _read_json(spec, value)
    if isinstance(value, dict):
        return renewal.LifetimeDist.from_dict(value, exact=spec.exact)
    name, params = parse_call(value)
    f = renewal.family(name, params, exact=spec.exact, horizon=spec.N + 2)
    if not isinstance(f, renewal.LifetimeDist):
        raise ConfigError(f"{name} is a renewal sequence, not a lifetime")
    return f


def build_chain(spec, value=None):
    """Chain from "hopf", "renewal-shift:<family>(...)" or a chain dict."""
    value = value if value is not None else spec.get("chain")
    if value is None:
        kind = spec.get("kind", "hopf")
        value = kind if kind == "hopf" else f"{kind}:{spec.get('family', 'geometric(0.5)')}"
    if isinstance(value, str) and value.endswith(".json"):
        value = _read_json(spec, value)
    if isinstance(value, dict):
        return markov.chain_from_dict(value, exact=spec.exact)
    kind, _, rest = str(value).partition(":")
    kind = kind.strip()
    if kind == "hopf":
        return markov.hopf_chain()
    if kind == "renewal-shift":
        if not rest:
            raise ConfigError("renewal-shift needs a lifetime, e.g. renewal-shift:geom(0.5)")
        return markov.renewal_shift(build_lifetime(spec, rest))
    raise ConfigError(f"unknown chain {value!r}; expected hopf or renewal-shift:<family>")


def build_weight(spec, horizon=None):
    """
    Weight named by the "weight" input: a named weight such as "power(0.5)",
    "renewal:<family>" for a renewal sequence, "occupation(<s>)" on the
    chain input, or a path to an `n,u` CSV.
    """
    horizon = spec.N + 1 if horizon is None else horizon
    value = spec.get("weight", "harmonic")
    if isinstance(value, str) and value.endswith(".csv"):
        try:
            text = spec.path(value).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read {value}: {e}") from e
        return weights.WeightSeq.from_csv(text, label=value)
    text = str(value)
    if text.startswith("renewal:"):
        f = build_lifetime(spec, text.split(":", 1)[1])
        return renewal.renewal_from_lifetime(f, horizon, mode=spec.mode)
    name, params = parse_call(text)
    if name == "occupation":
        s = int(params[0]) if params else 1
        return markov.occupation_sequence(build_chain(spec), s, horizon, exact=spec.exact)
    params = tuple(float(p) if isinstance(p, Fraction) else p for p in params)
    if name == "kaluza-log" and spec.exact:
        raise ConfigError("kaluza-log has no exact form")
    return weights.named(name, params, horizon)


def build_set(spec):
    """Index set from a generator string such as "bernoulli(0.01,7)", a dict or a JSON path."""
    value = spec.get("set", "counterexample")
    if isinstance(value, str) and value.endswith(".json"):
        value = _read_json(spec, value)
    if isinstance(value, dict):
        return indexsets.IndexSet.from_dict(value)
    name, params = parse_call(value)
    return indexsets.IndexSet(generator=name, params=params, known_to=spec.N)


def _cylinder(value):
    if isinstance(value, markov.Cylinder):
        return value
    if isinstance(value, dict):
        return markov.Cylinder.from_dict(value)
    if isinstance(value, (list, tuple)):
        return markov.Cylinder(tuple(value))
    return markov.Cylinder.parse(str(value))


def build_pairs(spec):
    """
    Ordered cylinder pairs from the "pairs" input: a basket JSON holding
    {"cylinders": [...]} (all ordered pairs), {"pairs": [[A, B], ...]} or a
    bare list of cylinders.
    """
    value = spec.get("pairs")
    if value is None:
        if spec.get("A") is None:
            raise ConfigError(f"{spec.label}: needs a basket (pairs) or cylinders A and B")
        return [(_cylinder(spec.get("A")), _cylinder(spec.get("B", spec.get("A"))))]
    data = _read_json(spec, value)
    if isinstance(data, dict) and "pairs" in data:
        return [(_cylinder(a), _cylinder(b)) for a, b in data["pairs"]]
    cylinders = data.get("cylinders", []) if isinstance(data, dict) else data
    cylinders = [_cylinder(c) for c in cylinders]
    if not cylinders:
        raise ConfigError(f"{spec.label}: empty basket")
    return [(a, b) for a in cylinders for b in cylinders]


def _cylinder_list(spec, key):
    value = spec.get(key)
    if value is None:
        raise ConfigError(f"{spec.label}: needs {key}")
    if isinstance(value, str) and value.endswith(".json"):
        value = _read_json(spec, value)
    if isinstance(value, str):
        value = [v for v in value.split(";") if v.strip()]
    return [_cylinder(v) for v in value]


def _ints(value, default=()):
    if value is None:
        return tuple(default)
    if isinstance(value, str):
        return tuple(int(v) for v in value.replace(";", ",").split(",") if v.strip())
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    return (int(value),)


def _floats(value, default=()):
    if value is None:
        return tuple(default)
    if isinstance(value, str):
        return tuple(float(_number(v)) for v in value.split(",") if v.strip())
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return (float(value),)


def _triples(value):
    if value is None:
        raise ConfigError("ratio-limit needs triples r,t,l (e.g. \"1,2,0;3,1,2\")")
    if isinstance(value, str):
        value = [v for v in value.split(";") if v.strip()]
    return [_ints(v) for v in value]


def _single(report_name, spec, profile, key, verdict=None, **values):
    report = Report(report_name, horizon=spec.N, params=dict(spec.inputs))
    report.add_profile(key, profile)
    report.values.update(values)
    report.values.setdefault("last", profile.last)
    if verdict:
        report.verdict = verdict
    return report


# weights

@operation("weights", "sequence")
def _weights_sequence(spec):
    u = build_weight(spec)
    report = Report("weight", horizon=u.horizon, params=dict(spec.inputs))
    report.values.update({"label": u.label, "a_u(N)": u.partial_sum(spec.N)})
    return report, {"weight.csv": u.to_csv(spec.N)}


@operation("weights", "smoothness")
def _weights_smoothness(spec):
    u = build_weight(spec)
    profile = weights.smoothness_profile(u, spec.grid_points(), spec.tol)
    smooth = profile.settles_below(spec.tol)
    return _single("smoothness", spec, profile, "sigma",
                   "smooth at horizon" if smooth else "not smooth at horizon",
                   decreasing=profile.is_decreasing_tail()), {}


@operation("weights", "rv")
def _weights_rv(spec):
    start = int(spec.get("fit_from", max(1, spec.N // 1000)))
    u = build_weight(spec)
    fit = weights.rv_index_estimate(u, dyadic_grid(spec.N, start=start))
    report = Report("rv-index", horizon=spec.N, params=dict(spec.inputs))
    report.values.update({"index": fit.index, "intercept": fit.intercept, "residual_norm": fit.residual_norm})
    report.verdict = f"index {fit.index:.4f}"
    return report, {}


@operation("weights", "subsample")
def _weights_subsample(spec):
    p = int(spec.get("p", 2))
    u = build_weight(spec)
    n = int(spec.get("n", (spec.N - 1) // p))
    return weights.subsample_report(u, p, n), {}


@operation("weights", "kaluza")
def _weights_kaluza(spec):
    return weights.kaluza_report(build_weight(spec)), {}


@operation("weights", "comparability")
def _weights_comparability(spec):
    u = build_weight(spec)
    eta, M = weights.comparability_constants(u, spec.grid_points())
    report = Report("comparability", horizon=spec.N, params=dict(spec.inputs))
    report.values.update({"eta": eta, "M": M})
    report.verdict = "comparable at horizon" if eta > 0 else "not comparable"
    return report, {}


@operation("weights", "met")
def _weights_met(spec):
    return _met(spec, build_weight(spec))


def _met(spec, u):
    thetas = _floats(spec.get("theta"), default=[k / 10 for k in range(1, 10)])
    grid = spec.grid_points()
    report = Report("met-fourier", horizon=spec.N, params={**spec.inputs, "theta": list(thetas)})
    worst = 0.0
    for theta in thetas:
        profile = report.add_profile(f"theta={theta:g}", renewal.met_fourier_profile(u, theta, grid))
        worst = max(worst, profile.last)
    report.values["max_abs_T"] = worst
    report.verdict = "Fourier averages vanish at horizon" if worst < spec.tol else "Fourier averages persist"
    return report, {}


# sets

@operation("sets", "smallness")
def _sets_smallness(spec):
    K = build_set(spec)
    u = build_weight(spec)
    grid = spec.grid_points()
    report = Report("smallness", horizon=spec.N, params=dict(spec.inputs))
    small = report.add_profile("smallness", indexsets.smallness_profile(K, u, grid, spec.tol))
    density = report.add_profile("density", indexsets.density_profile(K, grid))
    report.values.update({"smallness": small.last, "density": density.last,
                          "count": K.count(0, spec.N), "decreasing": small.is_decreasing_tail()})
    report.verdict = "small at horizon" if small.settles_below(spec.tol) else "not small at horizon"
    return report, {"set.json": K.upto(spec.N).to_json() + "\n"}


@operation("sets", "density")
def _sets_density(spec):
    K = build_set(spec)
    profile = indexsets.density_profile(K, spec.grid_points())
    return _single("density", spec, profile, "density",
                   "zero density at horizon" if profile.settles_below(spec.tol) else "positive density at horizon",
                   count=K.count(1, spec.N)), {}


# renewal

@operation("renewal", "sequence")
def _renewal_sequence(spec):
    f = build_lifetime(spec)
    u = renewal.renewal_from_lifetime(f, spec.N, mode=spec.mode)
    report = Report("renewal", horizon=spec.N, params=dict(spec.inputs))
    report.values.update({"lifetime": f.to_dict(), "u_N": u.value(spec.N), "aperiodic_gcd": renewal.aperiodicity(u)})
    return report, {"renewal.csv": u.to_csv()}


@operation("renewal", "invert")
def _renewal_invert(spec):
    value = spec.get("weight")
    if value is None:
        u = renewal.renewal_from_lifetime(build_lifetime(spec), spec.N, mode=spec.mode)
    else:
        u = build_weight(spec)
    f = renewal.lifetime_from_renewal(u, spec.N, float(spec.get("negative_tol", config.NEGATIVE_TOLERANCE)))
    probs = f.probs(spec.N, exact=f.exact)
    report = Report("lifetime", horizon=spec.N, params=dict(spec.inputs))
    report.values.update({"total": f.total(exact=f.exact), "support_max": f.support_max,
                          "min_mass": min(probs[1:]) if spec.N else 0})
    report.truncation = f.tail(spec.N + 1, exact=f.exact) if f.exact else 0.0
    return report, {"lifetime.json": dumps(f.to_dict())}


@operation("renewal", "tail")
def _renewal_tail(spec):
    f = build_lifetime(spec)
    report = Report("tail-moment", horizon=spec.N, params=dict(spec.inputs))
    L, V = renewal.tail_and_moment(f, spec.N)
    report.values.update({"L": L, "V": V, "tail": f.tail(spec.N + 1, exact=f.exact)})
    return report, {}


@operation("renewal", "prop83")
def _renewal_prop83(spec):
    return renewal.prop83_report(build_lifetime(spec), spec.N, spec.tol), {}


@operation("renewal", "srlp")
def _renewal_srlp(spec):
    f = build_lifetime(spec)
    u = renewal.renewal_from_lifetime(f, spec.N + 1, mode=spec.mode)
    profile = renewal.srlp_profile(u, spec.grid_points())
    if profile.meta["overflow"]:
        verdict = "ratios overflow on the grid"
    elif abs(profile.last - 1) < spec.tol:
        verdict = "ratios settle near 1"
    else:
        verdict = "ratios away from 1 at horizon"
    return _single("srlp", spec, profile, "ratio", verdict, saturated=profile.meta["saturated"]), {}


@operation("renewal", "dyson")
def _renewal_dyson(spec):
    f = build_lifetime(spec)
    result = renewal.dyson_construct(f, spec.eps, int(spec.get("k", 10)), spec.get("max_horizon"))
    return result.report, {"lifetime.json": dumps(result.g.to_dict())}


@operation("renewal", "met")
def _renewal_met(spec):
    u = renewal.renewal_from_lifetime(build_lifetime(spec), spec.N, mode=spec.mode)
    return _met(spec, u)


@operation("renewal", "gl")
def _renewal_gl(spec):
    f = build_lifetime(spec)
    u = renewal.renewal_from_lifetime(f, spec.N, mode=spec.mode)
    # a pareto tail index is the limit of the ratio
    gamma = f.spec["params"][0] if f.spec.get("name") == "pareto" else None
    return _gl(spec, u, gamma)


@operation("renewal", "kaluza-certificate")
def _renewal_kaluza_certificate(spec):
    return renewal.kaluza_log_certificate(spec.N), {}


# chain

@operation("chain", "occupation")
def _chain_occupation(spec):
    c = build_chain(spec)
    s = int(spec.get("s", 1))
    if spec.exact:
        require_rational_horizon(spec.N)
    u = markov.occupation_sequence(c, s, spec.N, exact=spec.exact)
    grid = spec.grid_points()
    values = np.asarray([float(u.value(n)) for n in grid.tolist()]) * np.sqrt(grid.astype(float))
    profile = ConvergenceProfile(grid, values, "u_n sqrt(n)", {"state": s, "chain": c.label})
    start = max(1, spec.N // 1000)
    positive = dyadic_grid(spec.N, start=start)
    positive = positive[np.asarray([float(u.value(n)) for n in positive.tolist()]) > 0]
    index = weights.rv_index_estimate(u, positive).index if positive.size >= 2 else float("nan")
    report = _single("occupation", spec, profile, "u_n sqrt(n)", rv_index=index, u_N=u.value(spec.N))
    report.params["chain"] = c.to_dict()
    return report, {"occupation.csv": u.to_csv()}


@operation("chain", "nstep")
def _chain_nstep(spec):
    c = build_chain(spec)
    s = int(spec.get("s", 1))
    if spec.exact:
        require_rational_horizon(spec.N)
    row = markov.nstep_row(c, s, spec.N, exact=spec.exact)
    report = Report("nstep", horizon=spec.N, params={**spec.inputs, "chain": c.to_dict()})
    report.values.update({"row": {t: row[t] for t in sorted(row)}, "total": row.total()})
    report.truncation = row.dropped
    return report, {}


@operation("chain", "chung")
def _chain_chung(spec):
    c = build_chain(spec)
    s = int(spec.get("s", 1))
    targets = _ints(spec.get("targets"), default=range(1, 9))
    if spec.exact:
        require_rational_horizon(spec.N)
    sums = markov.chung_partial_sums(c, s, targets, spec.N, exact=spec.exact)
    report = Report("chung", horizon=spec.N, params={**spec.inputs, "chain": c.to_dict()})
    for t, (partial, limit) in sums.items():
        gap = limit - partial[-1]
        report.values[str(t)] = {"sum": partial[-1], "limit": limit, "gap": gap}
        report.check(f"monotone_below_limit_{t}", partial[-1] <= limit * (1 if spec.exact else 1 + 1e-12))
    report.verdict = "first-passage sums approach their limits"
    return report, {}


@operation("chain", "stationarity")
def _chain_stationarity(spec):
    c = build_chain(spec)
    window = int(spec.get("window", min(spec.N, 256)))
    residual = markov.stationarity_residual(c, window, exact=spec.exact if spec.exact else None)
    report = Report("stationarity", horizon=window, params={**spec.inputs, "chain": c.to_dict()})
    report.values["residual"] = residual
    report.check("stationary", residual <= (0 if spec.exact and c.exact else spec.tol))
    report.verdict = "pi is stationary on the window" if report.passed else "pi is not stationary"
    return report, {}


@operation("chain", "ratio-limit")
def _chain_ratio_limit(spec):
    c = build_chain(spec)
    return markov.ratio_limit_report(c, int(spec.get("s", 1)), _triples(spec.get("triples")),
                                     spec.N, spec.eps, spec.jobs, spec.grid_points()), {}


@operation("chain", "correlation")
def _chain_correlation(spec):
    c = build_chain(spec)
    (A, B), *_ = build_pairs(spec)
    if spec.exact:
        require_rational_horizon(spec.N)
    corr = markov.correlation_sequence(c, A, B, spec.N, exact=spec.exact)
    report = Report("correlation", horizon=spec.N, params={**spec.inputs, "chain": c.to_dict()})
    report.values.update({"A": str(A), "B": str(B), "m(A)": markov.cylinder_measure(c, A, spec.exact),
                          "m(B)": markov.cylinder_measure(c, B, spec.exact), "last": corr[-1]})
    seq = weights.WeightSeq(values=corr, label=f"m({A} & T^-n {B})")
    return report, {"correlation.csv": seq.to_csv()}


# mixing

def _mixing_weight(spec, c):
    if spec.get("weight") is not None:
        return build_weight(spec)
    return markov.occupation_sequence(c, int(spec.get("s", 1)), spec.N, exact=spec.exact)


@operation("mixing", "rwm")
def _mixing_rwm(spec):
    c = build_chain(spec)
    if spec.exact:
        require_rational_horizon(spec.N)
    u = _mixing_weight(spec, c)
    return mixing.rwm_report(c, build_pairs(spec), u, spec.N, spec.tol, spec.jobs, spec.exact), {}


@operation("mixing", "krickeberg")
def _mixing_krickeberg(spec):
    c = build_chain(spec)
    (A, B), *_ = build_pairs(spec)
    u = _mixing_weight(spec, c)
    profile, K = mixing.krickeberg_profile(c, A, B, u, spec.grid_points(), spec.eps)
    report = _single("krickeberg", spec, profile, f"{A}|{B}",
                     "ratio mixing at horizon" if abs(profile.last - 1) < spec.eps else "no ratio mixing at horizon",
                     exceptional_count=K.count(0, spec.N))
    report.params["chain"] = c.to_dict()
    return report, {}


@operation("mixing", "density")
def _mixing_density(spec):
    c = build_chain(spec)
    (A, B), *_ = build_pairs(spec)
    u = _mixing_weight(spec, c)
    mA, mB = markov.cylinder_measure(c, A, False), markov.cylinder_measure(c, B, False)
    corr = np.asarray(markov.correlation_sequence(c, A, B, spec.N + 1, exact=False), dtype=float)
    scale = float(mA) * float(mB) * np.asarray([float(x) for x in u.take(spec.N + 1)])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(scale > 0, corr / scale, np.inf)
    return mixing.density_report(ratios, u, spec.N, spec.eps, spec.get("density_tol", 0.05)), {}


@operation("mixing", "return")
def _mixing_return(spec):
    c = build_chain(spec)
    F = _cylinder_list(spec, "F")
    E = _cylinder_list(spec, "E") if spec.get("E") is not None else F
    if spec.exact:
        require_rational_horizon(spec.N)
    u = mixing.intrinsic_weight(c, E, F, spec.N, spec.exact)
    grid = spec.grid_points()
    sums = weights.positive_partial_sums(u, grid)
    profile = ConvergenceProfile(grid, sums, "return sequence a_n(F)", {"F": [str(A) for A in F]})
    report = _single("return-sequence", spec, profile, "a_n", a_N=profile.last)
    report.note("the n = 0 term m(F)/(m(E) m(F)) is included in a_n(F)")
    report.params["chain"] = c.to_dict()
    return report, {"intrinsic.csv": u.to_csv()}


def _gl(spec, u, gamma=None):
    """Pointwise ratio profile; with a target gamma also the exceptional set and its u-smallness."""
    profile = mixing.gl_ratio_profile(u, spec.grid_points())
    gamma = spec.get("gamma", gamma)
    report = _single("gl-ratio", spec, profile, "n u_n / a_u(n)", f"ratio {profile.last:.4f} at horizon")
    if gamma is None:
        return report, {}
    gamma = float(_number(str(gamma)))
    K, smallness = mixing.gl_exceptional(u, gamma, spec.N, spec.eps)
    report.add_profile("exceptional smallness", smallness)
    decreasing = smallness.meta["decreasing_last_decade"]
    report.values.update({
        "gamma": gamma,
        "exceptional_count": K.count(1, spec.N),
        "exceptional_smallness": smallness.last,
        "smallness_decreasing_last_decade": decreasing,
    })
    if abs(profile.last - gamma) <= spec.eps:
        report.verdict = f"ratio within {spec.eps:g} of {gamma:g} at horizon"
    elif decreasing:
        report.verdict = f"ratio off {gamma:g} at horizon, exceptional set thinning"
    else:
        report.verdict = f"ratio off {gamma:g} at horizon"
    return report, {}


@operation("mixing", "gl")
def _mixing_gl(spec):
    return _gl(spec, _mixing_weight(spec, build_chain(spec)))


@operation("mixing", "second-moment")
def _mixing_second_moment(spec):
    c = build_chain(spec)
    profile = mixing.second_moment_profile(c, int(spec.get("s", 1)), spec.grid_points())
    report = _single("second-moment", spec, profile, "R_n", f"R_N = {profile.last:.4f}",
                     bounded_by_two=profile.meta["bounded_by_two"])
    if not profile.meta["bounded_by_two"]:
        report.note("R_n exceeds 2 on the grid")
    return report, {}


# affine

def _layout(spec):
    c = build_chain(spec)
    return affine.build_layout(c, int(spec.get("cutoff", 64)))


def _subintervals(layout, count, seed):
    """Every cell plus `count` random subintervals of the laid out region."""
    cells = [(left, right) for left, right in layout.cells.values()]
    right_end = max(r for _, r in cells)
    rng = np.random.default_rng(seed)
    out = list(cells)
    for _ in range(count):
        a, b = np.sort(rng.random(2))
        if layout.exact:
            a, b = Fraction(int(a * 2 ** 20), 2 ** 20), Fraction(int(b * 2 ** 20), 2 ** 20)
        if a == b:
            continue
        out.append((a * right_end, b * right_end))
    return out


@operation("affine", "layout")
def _affine_layout(spec):
    layout = _layout(spec)
    report = Report("layout", horizon=layout.cutoff, params=dict(spec.inputs))
    report.values.update({"cells": len(layout.cells), "subcells": len(layout.subcells),
                          "endpoint_error": layout.endpoint_error})
    report.truncation = layout.truncated
    return report, {"layout.json": layout.to_json()}


@operation("affine", "preservation")
def _affine_preservation(spec):
    layout = _layout(spec)
    intervals = _subintervals(layout, int(spec.get("intervals", 100)), int(spec.get("seed", 0)))
    report = Report("measure-preservation", horizon=layout.cutoff, params=dict(spec.inputs))
    worst = 0
    for i, interval in enumerate(intervals):
        sub = affine.measure_preservation_test(layout, interval, spec.tol if not layout.exact else 0)
        worst = max(worst, sub.values["discrepancy"])
        report.check(f"interval_{i}", sub.passed)
    report.values.update({"intervals": len(intervals), "max_discrepancy": worst})
    report.truncation = layout.truncated
    report.verdict = "exact" if worst == 0 else ("within bound" if report.passed else "violated")
    return report, {}


@operation("affine", "orbit")
def _affine_orbit(spec):
    layout = _layout(spec)
    x, y = spec.get("x", "1/3"), spec.get("y", "1/2")
    x, y = (Fraction(str(x)), Fraction(str(y))) if layout.exact else (float(_number(str(x))), float(_number(str(y))))
    rows = affine.orbit(layout, x, y, int(spec.get("length", min(spec.N, 100))))
    report = Report("orbit", horizon=len(rows) - 1, params=dict(spec.inputs))
    report.values["states"] = [state for *_, state in rows]
    return report, {"orbit.csv": affine.orbit_csv(rows)}


@operation("affine", "montecarlo")
def _affine_montecarlo(spec):
    layout = _layout(spec)
    c = build_chain(spec)
    cylinders = [A.states for A in _cylinder_list(spec, "cylinders")]
    samples = int(spec.get("samples", 10 ** 6))
    rng = np.random.default_rng(int(spec.get("seed", 0)))
    total = float(max(r for _, r in layout.cells.values()))
    xs = rng.random(samples) * total
    words = affine.batch_itinerary(layout, xs, max(len(w) for w in cylinders))
    freqs = affine.cylinder_frequencies(words, cylinders)
    report = Report("itinerary-frequencies", horizon=samples, params=dict(spec.inputs))
    for word, (freq, se) in freqs.items():
        expected = float(markov.cylinder_measure(c, markov.Cylinder(word))) / total
        key = ",".join(map(str, word))
        report.values[key] = {"frequency": freq, "measure": expected, "se": se}
        report.check(f"within_4se_{key}", abs(freq - expected) <= 4 * max(se, 1 / samples))
    report.verdict = "frequencies match measures" if report.passed else "frequencies off"
    return report, {}


# Running and emission

def execute(spec):
    """Run one spec; the report carries the spec hash."""
    logger.info("running %s (%s)", spec.label, spec.mode)
    report, artifacts = OPERATIONS[(spec.command, spec.op)](spec)
    report.spec_hash = spec.digest()
    return report, artifacts


def _slug(text):
    return re.sub(r"[^A-Za-z0-9]+", "-", str(text)).strip("-").lower() or "profile"


def artifact_files(spec, report, artifacts):
    """{file name: text} for the report JSON, each profile CSV and extra artifacts."""
    files = {f"{spec.label}.json": report.to_json()}
    for key, profile in report.profiles.items():
        files[f"{spec.label}-{_slug(key)}.csv"] = profile.to_csv()
    for name, text in artifacts.items():
        files[f"{spec.label}-{name}"] = text
    return files


def emit(spec, report, artifacts, echo):
    """
    Write artifacts under spec.out, or print to `echo`: the report JSON, or
    with plot-data the profile and table CSVs.
    """
    if spec.out:
        out = Path(spec.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in artifact_files(spec, report, artifacts).items():
            (out / name).write_text(text)
        logger.info("wrote %s to %s", spec.label, out)
        return
    if spec.emit == "report":
        echo(report.to_json().rstrip("\n"))
        return
    blocks = [(key, p.to_csv()) for key, p in report.profiles.items()]
    blocks += [(name, text) for name, text in artifacts.items() if name.endswith(".csv")]
    if len(blocks) == 1:
        echo(blocks[0][1].rstrip("\n"))
        return
    for key, text in blocks:
        echo(f"# {key}")
        echo(text.rstrip("\n"))
