"""modalx command-line entry point.

    modalx check FRAME                       frame class, accessible cluster
    modalx orbits FRAME                      stabilizer, orbits, (Ext) per orbit
    modalx decompose FRAME --measure M.csv --atoms K
    modalx sample FRAME --spec S.cfg -n N --seed S --out data.csv
    modalx verify FRAME --spec S.cfg -n N --seed S --tests rigidity,exchangeability,...
    modalx posterior FRAME --spec S.cfg (--data data.csv | -n N --seed S)

Exit status: 0 success, 1 a verification failed, 2 bad input.
Reports are JSON (sorted keys) by default and contain no timestamps, so
identical inputs give byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .frame import FrameError, accessible_cluster, classify, load_frame
from .hierspec import SpecError, load_spec
from .measure import (
    MAX_EXACT_WORLDS,
    AtomSet,
    ExactMeasure,
    MeasureError,
    check_invariance_exact,
    ergodic_decompose,
    symmetrize,
)
from .sampler import Dataset, DatasetError, sample_replicates
from .symmetry import DEFAULT_ENUM_BOUND, SymmetryError, analyze
from .verify import (
    PosteriorState,
    VerifyError,
    cross_orbit_report,
    estimate_directing,
    posterior_update,
    test_exchangeability,
    test_invariance_mc,
    test_principal_principle,
    test_rigidity,
)

ALL_TESTS = ("rigidity", "exchangeability", "invariance", "pp", "coupling")
INPUT_ERRORS = (FrameError, SpecError, MeasureError, DatasetError, VerifyError, SymmetryError,
                OSError, ValueError)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str
    frame: str
    spec: str | None = None
    measure: str | None = None
    data: str | None = None
    out: str | None = None
    n: int = 10_000
    seed: int = 0
    alpha: float = 0.01
    atoms: int | None = None
    tests: tuple[str, ...] = ALL_TESTS
    m: int = 2
    pp_tol: float = 0.02
    pp_bins: int = 10
    pp_min_obs: int = 10**6
    coupling_tol: float = 0.02
    expect_coupling: str | None = None
    observe: tuple[str, ...] | None = None
    prior_a: float = 1.0
    prior_b: float = 1.0
    symmetrize: bool = False
    bonferroni: bool = True
    plot_dir: str | None = None
    output_format: str = "json"
    enum_bound: int = DEFAULT_ENUM_BOUND
    max_worlds: int = MAX_EXACT_WORLDS

    def validate(self) -> None:
        need = {"decompose": ["measure"], "sample": ["spec"], "verify": ["spec"],
                "posterior": ["spec"]}.get(self.subcommand, [])
        for attr in ["frame"] + need:
            path = getattr(self, attr)
            if path is None:
                raise ConfigError(f"{self.subcommand} requires --{attr}")
            if not Path(path).is_file():
                raise ConfigError(f"{attr} file not found: {path}")
        if self.data is not None and not Path(self.data).is_file():
            raise ConfigError(f"data file not found: {self.data}")
        if self.subcommand == "decompose" and self.atoms is None:
            raise ConfigError("decompose requires --atoms")
        if self.n < 1:
            raise ConfigError("-n must be at least 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("--alpha must lie in (0, 1)")
        unknown = set(self.tests) - set(ALL_TESTS)
        if unknown:
            raise ConfigError(f"unknown test(s): {', '.join(sorted(unknown))}")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _header(cfg: RunConfig, frame) -> dict:
    inputs = {"frame": {"path": cfg.frame, "sha256": _sha256(cfg.frame),
                        "canonical_sha256": frame.fingerprint()}}
    for attr in ("spec", "measure", "data"):
        path = getattr(cfg, attr)
        if path is not None:
            inputs[attr] = {"path": path, "sha256": _sha256(path)}
    return {"tool": "modalx", "version": __version__, "command": cfg.subcommand,
            "inputs": inputs}


def _cmd_check(cfg, frame):
    fc = classify(frame)
    sym = analyze(frame, cfg.enum_bound)
    cluster = accessible_cluster(frame)
    return 0, {
        "frame": frame.name,
        "worlds": list(frame.worlds),
        "designated": frame.worlds[frame.designated],
        "class": {"label": fc.label, "reflexive": fc.reflexive, "transitive": fc.transitive,
                  "symmetric": fc.symmetric},
        "cluster": [frame.worlds[w] for w in sorted(cluster)],
        "stabilizer_order": sym.group.order,
        "point_homogeneous": sym.point_homogeneous,
    }


def _cmd_orbits(cfg, frame):
    sym = analyze(frame, cfg.enum_bound)
    out = sym.to_dict()
    out["class"] = classify(frame).label
    return 0, out


def _cmd_decompose(cfg, frame):
    sym = analyze(frame, cfg.enum_bound)
    p = ExactMeasure.from_csv(cfg.measure, frame, AtomSet.of_size(cfg.atoms), cfg.max_worlds)
    if cfg.symmetrize:
        p = symmetrize(p, sym.group)
    ok, dev = check_invariance_exact(p, sym.group)
    out = {"invariant": ok, "max_deviation": dev, "stabilizer_order": sym.group.order,
           "symmetrized": cfg.symmetrize}
    if not ok:
        out["note"] = "measure is not invariant under the stabilizer; rerun with --symmetrize"
        return 1, out
    dec = ergodic_decompose(p, sym.group)
    recon = float(abs(dec.reconstruct().probs - p.probs).max())
    out.update(dec.to_dict())
    out["reconstruction_error"] = recon
    return 0, out


def _load_inputs(cfg, frame):
    sym = analyze(frame, cfg.enum_bound)
    spec = load_spec(cfg.spec)
    spec.validate(len(sym.partition))
    return sym, spec


def _cmd_sample(cfg, frame):
    sym, spec = _load_inputs(cfg, frame)
    data = sample_replicates(spec, sym.partition, cfg.n, cfg.seed, frame)
    out = {"n": data.n, "seed": cfg.seed, "spec_fingerprint": data.fingerprint,
           "orbits": [[frame.worlds[w] for w in b] for b in sym.partition.sorted_blocks()]}
    if cfg.out:
        data.to_csv(cfg.out)
        out["dataset"] = {"path": cfg.out, "sha256": _sha256(cfg.out)}
    return 0, out


def _default_projection(sym) -> list[int]:
    blocks = sym.partition.sorted_blocks()
    proj = [b[0] for b in blocks][:3]
    for b in blocks:
        for w in b[1:]:
            if len(proj) < 3:
                proj.append(w)
    return proj


def _write_plot_data(cfg, frame, sym, data, pp_reports):
    d = Path(cfg.plot_dir)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for o, block in enumerate(sym.partition.sorted_blocks()):
        est = estimate_directing(data, block)
        path = d / f"directing_hist_orbit{o}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(est.hist_edges[:-1], est.hist_edges[1:], est.hist_counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
        written.append(str(path))
    if pp_reports:
        path = d / "calibration.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["atom", "orbit", "bin", "mean_chance", "frequency", "observations"])
            for rep in pp_reports:
                for row in rep.details["bins"]:
                    w.writerow([rep.details["atom"], row["orbit"], row["bin"],
                                repr(row["mean_chance"]), repr(row["frequency"]), row["observations"]])
        written.append(str(path))
    return written


def _cmd_verify(cfg, frame):
    sym, spec = _load_inputs(cfg, frame)
    if cfg.data:
        data = Dataset.from_csv(cfg.data, frame)
        data = Dataset(data.outcomes, data.world_names, data.atom_names, data.latents,
                       data.latent_forms, cfg.seed, spec.fingerprint())
    else:
        data = sample_replicates(spec, sym.partition, cfg.n, cfg.seed, frame)
    blocks = sym.partition.sorted_blocks()
    reports, pp_reports = [], []
    if "rigidity" in cfg.tests:
        reports.append(test_rigidity(data, sym.partition, cfg.alpha, bonferroni=cfg.bonferroni))
    if "exchangeability" in cfg.tests:
        for o, block in enumerate(blocks):
            if len(block) < 2 or not sym.ext[o].holds:
                continue
            rep = test_exchangeability(data, block, min(cfg.m, len(block)), cfg.alpha)
            rep.details["orbit_index"] = o
            reports.append(rep)
    if "invariance" in cfg.tests:
        reports.append(test_invariance_mc(data, sym.group.generators, _default_projection(sym),
                                          cfg.alpha, bonferroni=cfg.bonferroni))
    if "pp" in cfg.tests and data.has_latents:
        for atom in range(data.k):
            rep = test_principal_principle(data, sym.partition, atom, cfg.pp_bins, cfg.pp_tol,
                                           cfg.pp_min_obs)
            reports.append(rep)
            pp_reports.append(rep)
    if "coupling" in cfg.tests and len(blocks) >= 2:
        _, rep = cross_orbit_report(data, blocks[0], blocks[1], 0, cfg.expect_coupling,
                                    cfg.coupling_tol)
        reports.append(rep)
    out = {
        "n": data.n,
        "seed": cfg.seed,
        "alpha": cfg.alpha,
        "spec_fingerprint": spec.fingerprint(),
        "orbits": [[frame.worlds[w] for w in b] for b in blocks],
        "reports": [r.to_dict() for r in reports],
        "all_pass": all(r.verdict for r in reports),
    }
    if cfg.plot_dir:
        out["plot_data"] = _write_plot_data(cfg, frame, sym, data, pp_reports)
    return (0 if out["all_pass"] else 1), out


def _cmd_posterior(cfg, frame):
    sym, spec = _load_inputs(cfg, frame)
    if cfg.data:
        data = Dataset.from_csv(cfg.data, frame)
    else:
        data = sample_replicates(spec, sym.partition, cfg.n, cfg.seed, frame)
    observed = None
    if cfg.observe is not None:
        observed = [frame.index(w) for w in cfg.observe]
    prior = PosteriorState.uniform(len(sym.partition), data.k, cfg.prior_a, cfg.prior_b)
    post = posterior_update(data, sym.partition, prior, observed)
    return 0, {
        "n": data.n,
        "seed": None if cfg.data else cfg.seed,
        "observed": None if observed is None else [frame.worlds[w] for w in observed],
        "atoms": list(data.atom_names),
        "orbits": [[frame.worlds[w] for w in b] for b in sym.partition.sorted_blocks()],
        "prior": prior.to_dict(),
        "posterior": post.to_dict(),
        "unchanged_orbits": [o for o in prior.a if post.a[o].tolist() == prior.a[o].tolist()
                             and post.b[o].tolist() == prior.b[o].tolist()],
    }


COMMANDS = {
    "check": _cmd_check,
    "orbits": _cmd_orbits,
    "decompose": _cmd_decompose,
    "sample": _cmd_sample,
    "verify": _cmd_verify,
    "posterior": _cmd_posterior,
}


def run(cfg: RunConfig) -> tuple[int, dict]:
    """Execute one subcommand; returns ``(exit_status, report)``."""
    try:
        cfg.validate()
        frame = load_frame(cfg.frame)
        report = _header(cfg, frame)
        status, body = COMMANDS[cfg.subcommand](cfg, frame)
    except INPUT_ERRORS as exc:
        return 2, {"tool": "modalx", "version": __version__, "command": cfg.subcommand,
                   "error": f"{type(exc).__name__}: {exc}"}
    report.update(body)
    report["status"] = status
    return status, report


def _is_flat(v) -> bool:
    scalar = (int, float, str, bool, type(None))
    if isinstance(v, dict):
        return all(isinstance(x, scalar) for x in v.values())
    return all(isinstance(x, scalar) or (isinstance(x, list) and _is_flat(x)) for x in v)


def _render_text(obj, indent=0) -> str:
    pad = "  " * indent
    lines = []
    if isinstance(obj, dict):
        for k, v in obj.items():
            if isinstance(v, (dict, list)) and not _is_flat(v):
                lines.append(f"{pad}{k}:")
                lines.append(_render_text(v, indent + 1))
            else:
                lines.append(f"{pad}{k}: {v if isinstance(v, str) else json.dumps(v)}")
    elif isinstance(obj, list):
        for item in obj:
            if isinstance(item, (dict, list)) and not _is_flat(item):
                lines.append(f"{pad}-")
                lines.append(_render_text(item, indent + 1))
            else:
                lines.append(f"{pad}- {item if isinstance(item, str) else json.dumps(item)}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modalx", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"modalx {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("frame", help="frame file")
        p.add_argument("--format", dest="output_format", choices=["json", "text"], default="json")
        p.add_argument("--json", dest="output_format", action="store_const", const="json",
                       help="JSON output (default)")
        p.add_argument("--enum-bound", type=int, default=DEFAULT_ENUM_BOUND,
                       help="enumerate group elements up to this order")
        return p

    common(sub.add_parser("check", help="frame class and accessible cluster"))
    common(sub.add_parser("orbits", help="stabilizer orbits and (Ext)"))

    p = common(sub.add_parser("decompose", help="exact ergodic decomposition of a measure"))
    p.add_argument("--measure", required=True)
    p.add_argument("--atoms", type=int, required=True, help="number of atoms k")
    p.add_argument("--symmetrize", action="store_true",
                   help="average over the stabilizer before decomposing")
    p.add_argument("--max-worlds", type=int, default=MAX_EXACT_WORLDS)

    def sampling(p):
        p.add_argument("--spec", required=True)
        p.add_argument("-n", type=int, default=10_000)
        p.add_argument("--seed", type=int, default=0)
        return p

    p = sampling(common(sub.add_parser("sample", help="sample replicates to CSV")))
    p.add_argument("--out", help="dataset CSV path")

    p = sampling(common(sub.add_parser("verify", help="statistical verification suite")))
    p.add_argument("--data", help="verify an existing dataset CSV instead of sampling")
    p.add_argument("--tests", default=",".join(ALL_TESTS))
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--no-bonferroni", dest="bonferroni", action="store_false",
                   help="compare each p-value with alpha directly")
    p.add_argument("--m", type=int, default=2, help="tuple size for exchangeability (1-3)")
    p.add_argument("--pp-tol", type=float, default=0.02)
    p.add_argument("--pp-bins", type=int, default=10)
    p.add_argument("--pp-min-obs", type=int, default=10**6)
    p.add_argument("--coupling-tol", type=float, default=0.02)
    p.add_argument("--expect-coupling", choices=["independent", "coupled"])
    p.add_argument("--emit-plot-data", dest="plot_dir", metavar="DIR")

    p = sampling(common(sub.add_parser("posterior", help="Beta-Bernoulli posterior per orbit")))
    p.add_argument("--data", help="dataset CSV (default: sample from --spec)")
    p.add_argument("--observe", help="comma-separated worlds to learn from (default: all)")
    p.add_argument("--prior-a", type=float, default=1.0)
    p.add_argument("--prior-b", type=float, default=1.0)
    return parser


def config_from_args(args) -> RunConfig:
    kw = {k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__ and v is not None}
    if isinstance(kw.get("tests"), str):
        kw["tests"] = tuple(t.strip() for t in kw["tests"].split(",") if t.strip())
    if isinstance(kw.get("observe"), str):
        kw["observe"] = tuple(w.strip() for w in kw["observe"].split(",") if w.strip())
    return RunConfig(**kw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = config_from_args(args)
    status, report = run(cfg)
    if cfg.output_format == "text":
        text = _render_text(report)
    else:
        text = json.dumps(report, indent=2, sort_keys=True, allow_nan=False)
    print(text)
    if "error" in report:
        print(f"modalx: {report['error']}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
