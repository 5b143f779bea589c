"""Command-line experiment harness: configs, seeded batches, artifacts and replay."""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np
import scipy

from . import anticonc, constants, graph, spectral, suite, walk
from .errors import InvalidParameter, ResourceLimit
from .model import ModelParams, sample_iid, sample_modified
from .rng import child_seed

SCHEMA_VERSION = 1
EXPERIMENTS = ("spectrum", "logpot", "moments", "walk", "expansion", "anticonc", "subcritical",
               "verify-linear-algebra")

EXIT_OK, EXIT_CONFIG, EXIT_FAILED, EXIT_RESOURCE, EXIT_VERSION = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


# configuration ------------------------------------------------------------------------------

@dataclass
class ModelSection:
    n: int = 600
    d: float = 4.0
    cutoff: int = 8
    seed: int = 0
    kind: str = "modified"     # "modified" or "iid"


@dataclass
class WalkSection:
    z: list = field(default_factory=lambda: [1.0, 1.0])
    K: float = constants.WALK_K
    tau: float | str = 1.0     # number or "pilot"
    stride: int = 1
    events: bool = True
    star_k: int = 2


@dataclass
class ExperimentConfig:
    experiment: str = "spectrum"
    model: ModelSection = field(default_factory=ModelSection)
    walk: WalkSection = field(default_factory=WalkSection)
    trials: int = 1
    jobs: int = 1
    out: str = "out"
    options: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    schema: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def z(self) -> complex:
        return complex(*self.walk.z)

    def model_params(self) -> ModelParams:
        m = self.model
        return ModelParams(m.n, m.d, m.cutoff, m.seed)

    def walk_params(self) -> walk.WalkParams:
        w = self.walk
        k = self.overrides.get("WALK_K", w.K)
        kappa = self.overrides.get("KAPPA", constants.KAPPA)
        return walk.WalkParams(self.model_params(), self.z, k, float(w.tau), w.stride, w.events,
                               w.star_k, kappa=kappa)

    def identity(self) -> dict:
        """Fields that determine numeric output (no job width or output path)."""
        d = self.to_dict()
        d.pop("jobs")
        d.pop("out")
        return d

    def digest(self) -> str:
        return hashlib.sha256(_canonical(self.identity()).encode()).hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


_TYPES = {int: "integer", float: "number", str: "string", bool: "boolean", list: "array", dict: "object"}


def _check_type(path: str, value, expected) -> None:
    ok = isinstance(value, expected) and not (expected in (int, float) and isinstance(value, bool))
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        ok = True
    if not ok:
        raise ConfigError(f"field '{path}': expected {_TYPES[expected]}, got {type(value).__name__}")


def _fill(section, data: dict, path: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"field '{path}': expected object")
    for key, value in data.items():
        if not hasattr(section, key):
            raise ConfigError(f"field '{path}.{key}': unknown key")
        default = getattr(section, key)
        if path == "walk" and key == "tau":
            if value != "pilot":
                _check_type(f"{path}.{key}", value, float)
        elif path == "walk" and key == "z":
            if not (isinstance(value, list) and len(value) == 2
                    and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
                raise ConfigError(f"field '{path}.z': expected [re, im]")
        else:
            _check_type(f"{path}.{key}", value, type(default))
        setattr(section, key, float(value) if isinstance(default, float) and not isinstance(value, str)
                else value)


# constants the harness passes into experiments
OVERRIDABLE = {"WALK_K", "KAPPA", "C_FIT.lkr", "C_FIT.slice", "C_FIT.final_window", "C_FIT.rotational_band"}


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Schema-checked config; errors name the line or the offending field."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be an object")
    cfg = ExperimentConfig()
    schema = data.pop("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"{source}: field 'schema': unsupported version {schema}")
    for key, value in data.items():
        if key in ("model", "walk"):
            _fill(getattr(cfg, key), value, key)
        elif hasattr(cfg, key):
            _check_type(key, value, type(getattr(cfg, key)))
            setattr(cfg, key, value)
        else:
            raise ConfigError(f"{source}: field '{key}': unknown key")
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"field 'experiment': unknown experiment {cfg.experiment!r}")
    if cfg.model.kind not in ("modified", "iid"):
        raise ConfigError("field 'model.kind': expected 'modified' or 'iid'")
    if cfg.trials < 1:
        raise ConfigError("field 'trials': must be >= 1")
    if cfg.jobs < 1:
        raise ConfigError("field 'jobs': must be >= 1")
    if cfg.model.seed < 0:
        raise ConfigError("field 'model.seed': must be >= 0")
    for key, value in cfg.overrides.items():
        if key not in OVERRIDABLE:
            raise ConfigError(f"field 'overrides.{key}': not an overridable constant")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"field 'overrides.{key}': expected number")
    try:
        cfg.model_params()
    except InvalidParameter as exc:
        raise ConfigError(f"field 'model': {exc}") from None


def resolved_constants(cfg: ExperimentConfig) -> dict:
    table = {"WALK_K": constants.WALK_K, "KAPPA": constants.KAPPA, "C_FIT": dict(constants.C_FIT)}
    for key, value in cfg.overrides.items():
        if "." in key:
            group, name = key.split(".", 1)
            table[group][name] = value
        else:
            table[key] = value
    return table


def versions() -> dict:
    return {"sparse_spectra": constants.VERSION, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__}


def metadata(cfg: ExperimentConfig) -> dict:
    return {"tool": "sparse-spectra", "experiment": cfg.experiment, "config_hash": cfg.digest(),
            "seed": cfg.model.seed, "constants": resolved_constants(cfg), "overrides": cfg.overrides,
            "versions": versions()}


# per-trial work -------------------------------------------------------------------------------

def _sample(cfg: ExperimentConfig, trial: int):
    mp = cfg.model_params()
    return sample_iid(mp, trial) if cfg.model.kind == "iid" else sample_modified(mp, trial)


def _trial_spectrum(cfg, trial):
    eigs = spectral.eigen_spectrum(_sample(cfg, trial)).points
    return {"re": eigs.real.tolist(), "im": eigs.imag.tolist()}


def _points(cfg):
    return [complex(*p) for p in cfg.options.get("z", [cfg.walk.z])]


def _trial_logpot(cfg, trial):
    m = _sample(cfg, trial)
    eigs = spectral.eigen_spectrum(m).points
    rows = []
    for z in _points(cfg):
        lp = spectral.log_potential(m, z)
        rows.append({"z": [z.real, z.imag], "value": lp.value, "determinant_form": lp.determinant_form,
                     "eigen_form": spectral.eigen_log_potential(eigs, z), "finite": lp.finite})
    return {"points": rows}


def _extracted(cfg, trial):
    """B_m for the modified model (the matrix left after extraction); the sample itself for iid."""
    b = _sample(cfg, trial)
    if cfg.model.kind == "iid":
        return b
    proc = walk.build_process(b, cfg.model_params(), cfg.model.seed, trial)
    return b.principal(proc.order[:proc.m])


def _trial_moments(cfg, trial):
    r_max = int(cfg.options.get("r_max", 4))
    diffs = spectral.rotational_differences(_extracted(cfg, trial), cfg.z, r_max)
    return {"differences": diffs.tolist()}


def _trial_walk(cfg, trial):
    b = sample_modified(cfg.model_params(), trial)
    wp = cfg.walk_params()
    consts = resolved_constants(cfg)
    tr = walk.run_walk(b, wp, seed=cfg.model.seed, trial=trial)
    rec = {"final_height": tr.final_height if tr.height else None, "iterate_holds": tr.iterate_holds(),
           "complete": tr.complete, "rules": tr.summary()["rules"]}
    if tr.complete:
        fw = walk.final_window_check(tr, b, wp, consts["C_FIT"]["final_window"],
                                     cfg.options.get("sigma_rate"))
        rec.update(final_pass=bool(fw.passed), log_product=fw.log_product,
                   log_threshold=fw.log_threshold, sigma_pass=bool(fw.sigma_passed))
    else:
        rec.update(final_pass=False, log_product=None, log_threshold=None, sigma_pass=False)
    if trial < int(cfg.options.get("traces", 1)):
        rec["trace_csv"] = tr.to_csv()
    return rec


def _trial_expansion(cfg, trial):
    o = cfg.options
    rep = graph.expansion_census(_sample(cfg, trial), int(o.get("r_min", 1)), int(o.get("k_max", 3)),
                                 mode=o.get("mode", "sampled"), budget=int(o.get("budget", 2000)),
                                 seed=child_seed(cfg.model.seed, "expansion", trial),
                                 n_alpha=cfg.model.n)
    rec = json.loads(rep.to_json())
    rec["holds"] = rep.holds
    return rec


def _trial_anticonc(cfg, trial):
    families = cfg.options.get("families", list(anticonc.FAMILIES))
    c_fit = resolved_constants(cfg)["C_FIT"]
    return anticonc.run_family(families[trial], int(cfg.options.get("mc_trials", 1000)), cfg.model.seed,
                               c_fit["lkr"], c_fit["slice"])


def _trial_subcritical(cfg, trial):
    m = _sample(cfg, trial)
    n = m.rows
    count, _ = graph.trivial_image_census(graph.Digraph.from_matrix(m))
    zero = graph.zero_eigen_multiplicity(m)
    return {"zero_fraction": zero / n, "trivial_fraction": count / n}


_SUITE_CHECKS = ("secular", "girko", "circulant", "norms", "window")


def _trial_suite(cfg, trial):
    scale = float(cfg.options.get("scale", 1.0))
    seed = cfg.model.seed

    def count(base):
        return max(1, int(round(base * scale)))
    name = _SUITE_CHECKS[trial]
    res = {"secular": lambda: suite.check_secular(count(1000), seed),
           "girko": lambda: suite.check_girko(count(200), seed),
           "circulant": lambda: suite.check_circulant(count(100), 12, seed),
           "norms": lambda: suite.check_norm_inequalities(count(10_000), seed),
           "window": lambda: suite.check_window_inequality(count(10_000), seed)}[name]()
    return res.to_dict()


TRIALS = {"spectrum": _trial_spectrum, "logpot": _trial_logpot, "moments": _trial_moments,
          "walk": _trial_walk, "expansion": _trial_expansion, "anticonc": _trial_anticonc,
          "subcritical": _trial_subcritical, "verify-linear-algebra": _trial_suite}


def trial_count(cfg: ExperimentConfig) -> int:
    if cfg.experiment == "verify-linear-algebra":
        return len(_SUITE_CHECKS)
    if cfg.experiment == "anticonc":
        return len(cfg.options.get("families", anticonc.FAMILIES))
    return cfg.trials


def _run_one(args):
    cfg, trial = args
    return TRIALS[cfg.experiment](cfg, trial)


def run_trials(cfg: ExperimentConfig) -> list:
    """Trial records in trial order; identical for every job width."""
    tasks = [(cfg, t) for t in range(trial_count(cfg))]
    if cfg.jobs == 1 or len(tasks) == 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(tasks))) as pool:
        return list(pool.map(_run_one, tasks))


# summaries ------------------------------------------------------------------------------------

def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


def _final_spectrum(cfg, recs):
    pts = np.concatenate([np.array(r["re"]) + 1j * np.array(r["im"]) for r in recs])
    meas = spectral.EmpiricalMeasure(pts, "complex")
    scaled = pts / math.sqrt(cfg.model.d)
    summary = {"points": int(pts.size), "trials": len(recs),
               "max_modulus_scaled": float(np.abs(scaled).max()),
               "fraction_in_unit_disk_scaled": float(np.mean(np.abs(scaled) <= 1.0))}
    files = {"eigenvalues.csv": meas.to_csv(), "spectrum.svg": spectral.eigen_svg(scaled)}
    return summary, files, True


def _final_logpot(cfg, recs):
    rows, worst = [], 0.0
    for t, r in enumerate(recs):
        for p in r["points"]:
            rows.append([t, p["z"][0], p["z"][1], p["value"], p["determinant_form"], p["eigen_form"]])
            if p["finite"]:
                worst = max(worst, abs(p["value"] - p["determinant_form"]), abs(p["value"] - p["eigen_form"]))
    ok = worst <= 1e-8
    summary = {"trials": len(recs), "max_identity_gap": worst, "identity_holds": ok,
               "mean_value": {f"{z.real},{z.imag}": float(np.mean([r["points"][i]["value"] for r in recs]))
                              for i, z in enumerate(_points(cfg))}}
    return summary, {"logpot.csv": _csv(["trial", "z_re", "z_im", "value", "determinant_form", "eigen_form"],
                                        rows)}, ok


def _final_moments(cfg, recs):
    diffs = np.array([r["differences"] for r in recs])
    r_max = diffs.shape[1]
    mean = diffs.mean(axis=0)
    se = diffs.std(axis=0, ddof=1) / math.sqrt(len(recs)) if len(recs) > 1 else np.zeros(r_max)
    band = resolved_constants(cfg)["C_FIT"]["rotational_band"] * cfg.model.n ** (-1 / 3)
    within = np.abs(mean) <= band + 3 * se
    rows = [[t, r + 1, float(diffs[t, r])] for t in range(len(recs)) for r in range(r_max)]
    summary = {"trials": len(recs), "band": band, "mean_difference": mean.tolist(), "stderr": se.tolist(),
               "within": within.tolist(), "passed": bool(within.all())}
    return summary, {"moments.csv": _csv(["trial", "r", "difference"], rows)}, bool(within.all())


def _final_walk(cfg, recs):
    zero = float(np.mean([r["final_height"] == 0 for r in recs]))
    final = float(np.mean([r["final_pass"] for r in recs]))
    iterate = all(r["iterate_holds"] for r in recs)
    complete = all(r["complete"] for r in recs)
    verdicts = {"iterate_every_step": iterate, "final_height_zero_at_least_0.8": zero >= 0.8,
                "final_window_at_least_0.9": final >= 0.9, "complete": complete}
    summary = {"trials": len(recs), "final_height_zero_fraction": zero, "final_window_pass_fraction": final,
               "sigma_pass_fraction": float(np.mean([r["sigma_pass"] for r in recs])),
               "tau": cfg.walk.tau, "window": cfg.walk_params().window, "verdicts": verdicts}
    rows = [[t, r["final_height"], int(r["iterate_holds"]), int(r["final_pass"]), int(r["sigma_pass"]),
             r["log_product"], r["log_threshold"]] for t, r in enumerate(recs)]
    files = {"walk_trials.csv": _csv(["trial", "final_X", "iterate_holds", "final_pass", "sigma_pass",
                                      "log_product", "log_threshold"], rows)}
    for t, r in enumerate(recs):
        if "trace_csv" in r:
            files[f"walk_trace_{t}.csv"] = r["trace_csv"]
    return summary, files, all(verdicts.values())


def _final_expansion(cfg, recs):
    rows = []
    for t, r in enumerate(recs):
        for k in r["sizes"]:
            rows.append([t, k, r["draws"][str(k)], r["violations"][str(k)]])
    summary = {"trials": len(recs), "holds_fraction": float(np.mean([r["holds"] for r in recs]))}
    return summary, {"expansion.csv": _csv(["trial", "size", "draws", "violations"], rows)}, True


def _final_anticonc(cfg, recs):
    ok = all(r["passed"] for r in recs)
    return {"families": recs, "passed": ok}, {}, ok


def _final_subcritical(cfg, recs):
    zero = np.array([r["zero_fraction"] for r in recs])
    triv = np.array([r["trivial_fraction"] for r in recs])
    pilot = constants.PILOTS["subcritical_trivial_image"]["value"]
    verdicts = {"zero_at_least_trivial_every_trial": bool(np.all(zero >= triv)),
                "mean_zero_at_least_0.9": bool(zero.mean() >= 0.9)}
    if pilot is not None:
        verdicts["trivial_within_0.05_of_pilot"] = bool(abs(triv.mean() - pilot) <= 0.05)
    summary = {"trials": len(recs), "mean_zero_fraction": float(zero.mean()),
               "mean_trivial_fraction": float(triv.mean()), "pilot_trivial_fraction": pilot,
               "verdicts": verdicts}
    rows = [[t, float(a), float(b)] for t, (a, b) in enumerate(zip(zero, triv))]
    return summary, {"subcritical.csv": _csv(["trial", "zero_fraction", "trivial_fraction"], rows)}, \
        all(verdicts.values())


def _final_suite(cfg, recs):
    ok = all(r["passed"] for r in recs)
    rows = [[r["name"], r["instances"], r["failures"], r["worst"], r["tolerance"], r["inconclusive"]]
            for r in recs]
    return {"checks": recs, "passed": ok}, \
        {"suite.csv": _csv(["check", "instances", "failures", "worst", "tolerance", "inconclusive"], rows)}, ok


FINALIZE = {"spectrum": _final_spectrum, "logpot": _final_logpot, "moments": _final_moments,
            "walk": _final_walk, "expansion": _final_expansion, "anticonc": _final_anticonc,
            "subcritical": _final_subcritical, "verify-linear-algebra": _final_suite}


# artifacts ------------------------------------------------------------------------------------

def _with_header(name: str, body: str, meta: dict) -> str:
    line = _canonical(meta)
    if name.endswith(".csv"):
        return f"# metadata: {line}\n" + body
    if name.endswith(".svg"):
        head, rest = body.split("\n", 1)
        return f"{head}\n<!-- metadata: {line} -->\n{rest}"
    raise ValueError(name)


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def produce(cfg: ExperimentConfig) -> tuple[dict, bool]:
    """Run an experiment and return ``{file name: bytes}`` plus the verdict."""
    if cfg.experiment == "walk" and cfg.walk.tau == "pilot":
        cfg = copy.deepcopy(cfg)
        cfg.walk.tau = walk.tau_pilot(walk.WalkParams(cfg.model_params(), cfg.z, cfg.walk.K,
                                                      events=False), seed=cfg.model.seed)
    meta = metadata(cfg)
    recs = run_trials(cfg)
    summary, files, ok = FINALIZE[cfg.experiment](cfg, recs)
    out = {name: _with_header(name, body, meta).encode() for name, body in files.items()}
    result = {"metadata": meta, "summary": summary, "passed": ok}
    out["summary.json"] = (json.dumps(result, sort_keys=True, indent=1, default=_json_default) + "\n").encode()
    return out, ok


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def write_outputs(cfg: ExperimentConfig, files: dict, out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    digests = {}
    for name, data in sorted(files.items()):
        (out_dir / name).write_bytes(data)
        digests[name] = _digest(data)
    manifest = {"schema": SCHEMA_VERSION, "config": cfg.to_dict(), "versions": versions(),
                "files": digests}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return digests


def run_experiment(cfg: ExperimentConfig) -> int:
    files, ok = produce(cfg)
    write_outputs(cfg, files, Path(cfg.out))
    print(json.dumps({"experiment": cfg.experiment, "out": cfg.out, "passed": ok}))
    return EXIT_OK if ok else EXIT_FAILED


def replay(manifest_path: str, jobs: int | None = None, seed: int | None = None,
           out: str | None = None) -> int:
    """Regenerate a run from its manifest and compare digests."""
    try:
        manifest = json.loads(Path(manifest_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"replay: cannot read manifest: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if manifest.get("versions") != versions():
        print(json.dumps({"version_mismatch": {"manifest": manifest.get("versions"), "current": versions()}}))
        return EXIT_VERSION
    cfg = parse_config(json.dumps(manifest["config"]), manifest_path)
    if jobs is not None:
        cfg.jobs = jobs
    if seed is not None:
        cfg.model.seed = seed
    files, _ = produce(cfg)
    if out is not None:
        cfg.out = out
        write_outputs(cfg, files, Path(out))
    fresh = {name: _digest(data) for name, data in files.items()}
    expected = manifest["files"]
    diff = [{"file": name, "expected": expected.get(name), "got": fresh.get(name)}
            for name in sorted(set(expected) | set(fresh)) if expected.get(name) != fresh.get(name)]
    print(json.dumps({"identical": not diff, "differences": diff}, indent=1))
    return EXIT_OK if not diff else EXIT_FAILED


# entry point ----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparse-spectra",
                                description="Desk-scale experiments on sparse random digraph matrices.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        s.add_argument("--jobs", type=int)
        s.add_argument("--trials", type=int)
    r = sub.add_parser("replay")
    r.add_argument("manifest")
    r.add_argument("--jobs", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    return p


def config_from_args(args) -> ExperimentConfig:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"{args.config}: {exc.strerror}") from None
        cfg = parse_config(text, args.config)
        if "experiment" in json.loads(text) and cfg.experiment != args.command:
            raise ConfigError(f"{args.config}: field 'experiment': {cfg.experiment!r} does not match "
                              f"subcommand {args.command!r}")
    else:
        cfg = ExperimentConfig()
    cfg.experiment = args.command
    if args.seed is not None:
        cfg.model.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.trials is not None:
        cfg.trials = args.trials
    validate(cfg)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            return replay(args.manifest, args.jobs, args.seed, args.out)
        return run_experiment(config_from_args(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceLimit as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except InvalidParameter as exc:
        print(f"invalid parameter: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
