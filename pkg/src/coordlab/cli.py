"""``coordlab`` command-line front end.

Every command writes a JSON document ``{"manifest": ..., "result": ...}``
(``boundary`` writes CSV) to ``--out`` or standard output.  The manifest
records everything needed to repeat the run; ``coordlab rerun --manifest
FILE`` repeats it and reproduces the outputs byte for byte.

Exit codes: 0 success, 1 invalid input, 2 undecided search, 3 infeasible.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, beliefs, codec, game, model, regions
from .errors import CoordlabError
from .regions import RatePoint
from .search import SearchConfig

EXIT_OK, EXIT_INVALID, EXIT_UNDECIDED, EXIT_INFEASIBLE = 0, 1, 2, 3
VARIANTS = ("causal", "no-action", "two-sided", "feedback", "strictly-causal", "corollary")
# flags that only say where to write; they never enter the manifest
OUTPUT_FLAGS = ("out", "csv")


class UsageError(Exception):
    """Bad command line or unreadable input file (exit 1)."""


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def _created() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch and epoch.isdigit() else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


@dataclass
class RunManifest:
    """What a run did, enough to repeat it.

    ``created`` comes from ``SOURCE_DATE_EPOCH`` when set and is carried
    over unchanged by ``rerun``, so repeated runs embed identical manifests.
    """

    command: str
    spec_path: str
    spec_sha256: str
    params: dict
    seed: int
    version: str = __version__
    created: str = field(default_factory=_created)

    def to_json(self) -> dict:
        return {"command": self.command, "spec": {"path": self.spec_path, "sha256": self.spec_sha256},
                "params": dict(sorted(self.params.items())), "seed": self.seed,
                "version": self.version, "created": self.created}

    @classmethod
    def from_json(cls, doc: dict) -> "RunManifest":
        if "manifest" in doc:
            doc = doc["manifest"]
        try:
            return cls(doc["command"], doc["spec"]["path"], doc["spec"]["sha256"], dict(doc["params"]),
                       int(doc["seed"]), doc.get("version", __version__), doc["created"])
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"malformed manifest: {exc}") from None


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _read_spec(path: str) -> tuple[model.ProblemSpec, str]:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"spec file not found: {path}")
    return model.load_problem(p), _sha256(p)


def _dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _write(text: str, dest: Optional[str]) -> None:
    if dest is None or dest == "-":
        sys.stdout.write(text)
        return
    Path(dest).parent.mkdir(parents=True, exist_ok=True)
    with open(dest, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _csv_text(manifest: RunManifest, header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    buf.write("# manifest: " + json.dumps(manifest.to_json(), sort_keys=True, separators=(",", ":")) + "\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join("" if v is None else repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _search(args) -> SearchConfig:
    return SearchConfig(restarts=args.restarts, seed=args.seed, grid=args.grid, w1=args.w1, w2=args.w2,
                        threads=args.threads)


def _load_aux(path: str, spec: model.ProblemSpec):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"aux file not found: {path}")
    return model.aux_from_json(p.read_text(), spec)


def _cache_dir() -> Optional[Path]:
    d = os.environ.get("COORDLAB_CACHE_DIR")
    return Path(d) if d else None


def _witness(variant: str, r: float, spec: model.ProblemSpec, cfg: SearchConfig, spec_hash: str):
    """Min-leakage witness at rate ``r``, cached under ``COORDLAB_CACHE_DIR``."""
    cache = _cache_dir()
    key = hashlib.sha256(json.dumps([spec_hash, variant, repr(r), repr(cfg)]).encode()).hexdigest()[:32]
    if cache is not None:
        f = cache / f"witness-{key}.json"
        if f.is_file():
            doc = json.loads(f.read_text())
            return doc["status"], (model.aux_from_json(doc["aux"], spec) if doc["aux"] else None)
    res = regions.min_leakage(variant, r, spec, cfg)
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
        doc = {"status": res.status, "aux": res.witness.to_json() if res.witness is not None else None}
        (cache / f"witness-{key}.json").write_text(_dumps(doc))
    return res.status, res.witness


def _status_code(status: str) -> int:
    return {"undecided": EXIT_UNDECIDED, "infeasible": EXIT_INFEASIBLE}.get(status, EXIT_OK)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_region(args, spec, manifest) -> tuple[dict, int]:
    point = RatePoint(args.rate, args.leakage)
    if args.aux:
        aux = _load_aux(args.aux, spec)
        if aux.variant != args.variant:
            raise UsageError(f"aux is for variant {aux.variant!r}, not {args.variant!r}")
        rep = regions.constraints(args.variant, aux)
        rep.point = point
        rep.feasible = rep.check(point)
        return rep.to_json(), EXIT_OK
    dec = regions.is_achievable(args.variant, point, spec, _search(args))
    code = EXIT_OK
    if dec.status == "undecided":
        code = EXIT_UNDECIDED
    elif dec.status == "not-achievable" and dec.e_star is None and dec.note == "no feasible aux found":
        code = EXIT_INFEASIBLE
    return dec.to_json(), code


def cmd_min_leakage(args, spec, manifest) -> tuple[dict, int]:
    res = regions.min_leakage(args.variant, args.rate, spec, _search(args))
    return res.to_json(), _status_code(res.status)


def cmd_game(args, spec, manifest) -> tuple[dict, int]:
    sol = game.solve_maximin(args.rate, spec, _search(args), with_gap=args.gap)
    return sol.to_json(), _status_code(sol.status)


def cmd_simulate(args, spec, manifest) -> tuple[dict, int]:
    if args.aux:
        aux = _load_aux(args.aux, spec)
    else:
        status, aux = _witness(args.variant, args.rate, spec, _search(args), manifest.spec_sha256)
        if aux is None:
            return {"status": status, "note": "no witness aux at this rate"}, _status_code(status)
    leakage = args.leakage
    if leakage is None:
        leakage = codec.aux_info(aux)["H(S)"]
    params = codec.derive_rate_params(aux, leakage, args.rate, args.epsilon, args.n, args.blocks)
    reports, rows = codec.simulate(aux, params, args.seed, args.trials, args.delta, args.threads)
    if args.csv:
        _write(_csv_text(manifest, ["trial", "seed", "decode_error", "tv", "leakage"],
                         [[r.trial, r.seed, float(r.decode_error), float(r.tv),
                           None if r.leakage is None else float(r.leakage)] for r in rows]), args.csv)
    errs = sorted(r.decode_error for r in rows)
    tvs = sorted(r.tv for r in rows)
    mid = len(rows) // 2
    med = (lambda v: float(v[mid]) if len(v) % 2 else float((v[mid - 1] + v[mid]) / 2)) if rows else None
    result = {"params": params.to_json(), "aux": aux.to_json(),
              "median_decode_error": med(errs) if rows else None,
              "median_tv": med(tvs) if rows else None,
              "trials": [{"trial": r.trial, "seed": r.seed, "decode_error": float(r.decode_error),
                          "tv": float(r.tv), "leakage": None if r.leakage is None else float(r.leakage),
                          "block_errors": [int(b) for b in r.block_errors]} for r in rows]}
    return result, EXIT_OK


def cmd_beliefs(args, spec, manifest) -> tuple[dict, int]:
    aux = _load_aux(args.aux, spec) if args.aux else model.degenerate_aux("causal", spec)
    if args.mix:
        aux = beliefs.mix_full_support(aux, spec, args.mix)
    code = beliefs.random_code(aux, args.n, args.messages, args.seed)
    audit = beliefs.audit_theorem3(code, aux, args.delta, threads=args.threads, strict=False)
    sets = beliefs.belief_sets(code, aux, args.alpha, args.gamma, args.delta, strict=False)
    out = {"audit": audit.to_json(), "belief_sets": {k: v for k, v in sets.to_json().items() if k != "outcomes"}}
    ok = audit.holds and sets.holds
    if spec.distortion is not None:
        gap = beliefs.distortion_gap(code, aux, spec.distortion, args.alpha, args.gamma, args.delta,
                                     strict=False)
        out["distortion_gap"] = gap.to_json()
        ok = ok and gap.holds
    out["all_hold"] = ok
    return out, EXIT_OK


def cmd_boundary(args, spec, manifest) -> tuple[str, int]:
    aux = _load_aux(args.aux, spec)
    pts = regions.region_boundary(aux)
    return _csv_text(manifest, ["r", "e"], [[float(p.r), float(p.e)] for p in pts]), EXIT_OK


COMMANDS = {"region": cmd_region, "min-leakage": cmd_min_leakage, "game": cmd_game,
            "simulate": cmd_simulate, "beliefs": cmd_beliefs, "boundary": cmd_boundary}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _nonneg_float(s: str) -> float:
    v = float(s)
    if not (v >= 0 and v < float("inf")):
        raise argparse.ArgumentTypeError(f"expected a finite number >= 0, got {s!r}")
    return v


def _pos_float(s: str) -> float:
    v = _nonneg_float(s)
    if v == 0:
        raise argparse.ArgumentTypeError("expected a positive number")
    return v


def _pos_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {s!r}")
    return v


def _nonneg_int(s: str) -> int:
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {s!r}")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 like every other validation failure
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_INVALID)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="coordlab", description="Rate, leakage and coordination tools for state-dependent channels.")
    p.add_argument("--version", action="version", version=f"coordlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, search: bool = True):
        sp.add_argument("--spec", required=True, help="problem JSON file")
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--seed", type=_nonneg_int, default=0)
        sp.add_argument("--threads", type=_nonneg_int, default=1, help="worker threads, 0 = auto")
        if search:
            sp.add_argument("--restarts", type=_pos_int, default=64)
            sp.add_argument("--grid", action="store_true", help="exhaustive grid oracle instead of local search")
            sp.add_argument("--w1", type=_pos_int, default=None, help="|W1| (default: spec cap)")
            sp.add_argument("--w2", type=_pos_int, default=None, help="|W2| (default: spec cap)")

    sp = sub.add_parser("region", help="decide whether (R, E) is achievable")
    common(sp)
    sp.add_argument("--variant", choices=VARIANTS, default="causal")
    sp.add_argument("--rate", type=_nonneg_float, required=True)
    sp.add_argument("--leakage", type=_nonneg_float, required=True)
    sp.add_argument("--aux", help="evaluate this aux instead of searching")

    sp = sub.add_parser("min-leakage", help="smallest leakage lower bound at a rate")
    common(sp)
    sp.add_argument("--variant", choices=VARIANTS, default="causal")
    sp.add_argument("--rate", type=_nonneg_float, required=True)

    sp = sub.add_parser("game", help="state-estimation game value at a rate")
    common(sp)
    sp.add_argument("--rate", type=_nonneg_float, default=0.0)
    sp.add_argument("--gap", action="store_true", help="also compute the minimax value")

    sp = sub.add_parser("simulate", help="Monte-Carlo runs of the block-Markov scheme")
    common(sp)
    sp.add_argument("--variant", choices=("causal", "no-action"), default="causal")
    sp.add_argument("--aux", help="aux JSON (default: min-leakage witness at --rate)")
    sp.add_argument("--rate", type=_nonneg_float, required=True)
    sp.add_argument("--leakage", type=_nonneg_float, default=None, help="target leakage (default: H(S))")
    sp.add_argument("--n", type=_pos_int, default=200)
    sp.add_argument("--blocks", type=_pos_int, default=8)
    sp.add_argument("--trials", type=_pos_int, default=10)
    sp.add_argument("--delta", type=_pos_float, default=codec.DEFAULT_DELTA)
    sp.add_argument("--epsilon", type=_nonneg_float, default=0.01)
    sp.add_argument("--csv", help="per-trial CSV (trial,seed,decode_error,tv,leakage)")

    sp = sub.add_parser("beliefs", help="exact audit of the belief bounds on a small random code")
    common(sp, search=False)
    sp.add_argument("--aux", help="causal aux JSON (default: |W1| = |W2| = 1 following target_x)")
    sp.add_argument("--n", type=_pos_int, default=4)
    sp.add_argument("--messages", type=_pos_int, default=2)
    sp.add_argument("--alpha", type=_pos_float, default=0.5)
    sp.add_argument("--gamma", type=_pos_float, default=0.5)
    sp.add_argument("--delta", type=_pos_float, default=0.5)
    sp.add_argument("--mix", type=_pos_float, default=None, metavar="W",
                    help="mix aux kernels with uniform at weight W (e.g. 1e-3) to get full support")

    sp = sub.add_parser("boundary", help="CSV vertices of the region supported by an aux")
    common(sp, search=False)
    sp.add_argument("--aux", required=True)

    sp = sub.add_parser("rerun", help="repeat a run from its manifest")
    sp.add_argument("--manifest", required=True, help="manifest JSON or any JSON output of coordlab")
    sp.add_argument("--out")
    sp.add_argument("--csv")
    return p


def _params(args) -> dict:
    skip = {"command", "spec", "seed"} | set(OUTPUT_FLAGS)
    return {k: v for k, v in vars(args).items() if k not in skip}


def _execute(args, manifest: Optional[RunManifest] = None) -> int:
    spec, sha = _read_spec(args.spec)
    if manifest is None:
        manifest = RunManifest(args.command, args.spec, sha, _params(args), args.seed)
    elif manifest.spec_sha256 != sha:
        raise UsageError(f"spec file {args.spec} changed since the manifest was written")
    result, code = COMMANDS[args.command](args, spec, manifest)
    if isinstance(result, str):
        _write(result, args.out)
    else:
        _write(_dumps({"manifest": manifest.to_json(), "result": result}), args.out)
    return code


def _rerun(args) -> int:
    path = Path(args.manifest)
    if not path.is_file():
        raise UsageError(f"manifest not found: {args.manifest}")
    text = path.read_text()
    if text.startswith("# manifest: "):
        doc = json.loads(text.splitlines()[0][len("# manifest: "):])
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"manifest is not JSON: {exc}") from None
    man = RunManifest.from_json(doc)
    if man.command not in COMMANDS:
        raise UsageError(f"unknown command in manifest: {man.command!r}")
    spec_path = man.spec_path
    if not Path(spec_path).is_file() and (path.parent / spec_path).is_file():
        spec_path = str(path.parent / spec_path)
    ns = argparse.Namespace(command=man.command, spec=spec_path, seed=man.seed, out=args.out, csv=args.csv,
                            **man.params)
    return _execute(ns, man)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "rerun":
            return _rerun(args)
        return _execute(args)
    except (UsageError, CoordlabError, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"coordlab: error: {exc}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
