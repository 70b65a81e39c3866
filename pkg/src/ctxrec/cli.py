"""Configuration files and the command-line runner.

A configuration is a ``key=value`` file (``#`` starts a comment).  Values may
carry options, e.g.::

    dataset.ratings.lins=data/ratings.txt
    ratings.setup=-threshold -1 -datatransformation 1
    recommender=usersplitting -traditional biasedmf -minlength 2
    item.ranking=off -topN 10
    evaluation.setup=cv -k 5 -p on --rand-seed 1 --test-view all --early-stop RMSE
    output.setup=-folder CARSKit.Workspace -verbose off --to-file results.txt
    num.factors=10
"""

from __future__ import annotations

import argparse
import logging
import shlex
import sys
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Sequence, TextIO

from .core import CarsError, compute_stats
from .engine import HyperParams, algorithms
from .evaluation import CrossValidation, EvalReport, GivenRatio, evaluate
from .ingest import WORKSPACE, binarize, prepare_workspace

log = logging.getLogger(__name__)

HYPERPARAM_KEYS = {
    "num.factors": ("num_factors", int),
    "learn.rate": ("learn_rate", float),
    "reg.user": ("reg_user", float),
    "reg.item": ("reg_item", float),
    "reg.context": ("reg_context", float),
    "reg.l1": ("l1_reg", float),
    "reg.l2": ("l2_reg", float),
    "num.max.iter": ("num_iterations", int),
    "init.std": ("init_std", float),
    "knn.k": ("knn_k", int),
    "knn.shrinkage": ("knn_shrinkage", float),
}
KNOWN_KEYS = {"dataset.ratings.wins", "dataset.ratings.lins", "ratings.setup", "recommender",
              "item.ranking", "evaluation.setup", "output.setup"} | set(HYPERPARAM_KEYS)
SPLITTING = ("itemsplitting", "usersplitting", "uisplitting")


class ConfigError(CarsError, ValueError):
    pass


@dataclass(frozen=True)
class OutputSetup:
    folder: str = WORKSPACE
    verbose: bool = False
    results_file: str = "results.txt"
    to_clipboard: bool = False


@dataclass
class ExperimentConfig:
    recommender: str
    recommender_options: dict = field(default_factory=dict)
    data_path_windows: str | None = None
    data_path_other: str | None = None
    threshold: float = -1.0
    data_transformation: int = 1
    item_ranking: bool = False
    top_n: int = 10
    protocol: CrossValidation | GivenRatio = field(default_factory=CrossValidation)
    early_stop: str | None = None
    output: OutputSetup = field(default_factory=OutputSetup)
    hyperparams: dict = field(default_factory=dict)
    base_dir: Path | None = field(default=None, compare=False)
    warnings: list = field(default_factory=list, compare=False)

    @property
    def task(self) -> str:
        return "ranking" if self.item_ranking else "rating"

    def hp(self) -> HyperParams:
        values = {HYPERPARAM_KEYS[k][0]: HYPERPARAM_KEYS[k][1](v) for k, v in self.hyperparams.items()}
        return HyperParams(top_n=self.top_n, rand_seed=self.protocol.seed, early_stop_metric=self.early_stop,
                           verbose=self.output.verbose, **values)

    def describe(self) -> str:
        """The parameter string reported next to results."""
        rec = " ".join([self.recommender] + [f"-{k} {v}" for k, v in self.recommender_options.items()])
        hp = self.hp()
        params = " ".join(f"{key}={getattr(hp, name)}" for key, (name, _) in HYPERPARAM_KEYS.items())
        return f"{rec}; {_render_protocol(self)}; topN={self.top_n}; threshold={self.threshold:g}; {params}"


def _is_option(token: str) -> bool:
    if not token.startswith("-") or len(token) < 2:
        return False
    try:
        float(token)
        return False
    except ValueError:
        return True


def parse_options(value: str, lineno: int, flags: Sequence[str] = ()) -> tuple[str, dict[str, str | bool]]:
    """Split ``head -a 1 --bb x y`` into ``("head", {"a": "1", "bb": "x y"})``.

    Option names are lower-cased.  Only names listed in ``flags`` may appear
    without a value.
    """
    try:
        tokens = shlex.split(value)
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: {exc}") from None
    head = []
    while tokens and not _is_option(tokens[0]):
        head.append(tokens.pop(0))
    options: dict[str, str | bool] = {}
    while tokens:
        name = tokens.pop(0).lstrip("-").lower()
        values = []
        while tokens and not _is_option(tokens[0]):
            values.append(tokens.pop(0))
        if values:
            options[name] = " ".join(values)
        elif name in flags:
            options[name] = True
        else:
            raise ConfigError(f"line {lineno}: option -{name} requires a value")
    return " ".join(head), options


def _on_off(value, lineno: int, name: str) -> bool:
    word = str(value).replace(",", " ").split()[0].lower() if value is not True else "on"
    if word in ("on", "true", "yes", "1"):
        return True
    if word in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"line {lineno}: option {name} expects on/off, got {value!r}")


def _number(value, lineno: int, name: str, kind=float):
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"line {lineno}: {name} expects a number, got {value!r}") from None


def _unknown(cfg_warnings: list, lineno: int, what: str):
    msg = f"line {lineno}: ignoring unknown {what}"
    cfg_warnings.append(msg)
    log.warning(msg)


def parse_config(text: str, base_dir: str | Path | None = None) -> ExperimentConfig:
    entries: dict[str, tuple[int, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value")
        entries[key.strip().lower()] = (lineno, value.strip())
    if "recommender" not in entries or not entries["recommender"][1]:
        raise ConfigError("recommender not set")

    warnings: list[str] = []
    lineno, value = entries["recommender"]
    name, opts = parse_options(value, lineno)
    name = name.lower()
    rec_opts = {}
    for k, v in opts.items():
        if name in SPLITTING and k == "traditional":
            rec_opts[k] = str(v).lower()
        elif name in SPLITTING and k == "minlength":
            rec_opts[k] = _number(v, lineno, "-minlength", int)
        elif name in SPLITTING and k == "alpha":
            rec_opts[k] = _number(v, lineno, "-alpha")
        else:
            _unknown(warnings, lineno, f"recommender option -{k}")
    cfg = ExperimentConfig(recommender=name, recommender_options=rec_opts, warnings=warnings,
                           base_dir=Path(base_dir) if base_dir is not None else None)

    for key, (lineno, value) in entries.items():
        if key == "dataset.ratings.wins":
            cfg.data_path_windows = value or None
        elif key == "dataset.ratings.lins":
            cfg.data_path_other = value or None
        elif key == "ratings.setup":
            _, opts = parse_options(value, lineno)
            for k, v in opts.items():
                if k == "threshold":
                    cfg.threshold = _number(v, lineno, "-threshold")
                elif k == "datatransformation":
                    cfg.data_transformation = _number(v, lineno, "-datatransformation", int)
                else:
                    _unknown(warnings, lineno, f"ratings option -{k}")
        elif key == "item.ranking":
            head, opts = parse_options(value, lineno)
            cfg.item_ranking = _on_off(head or "off", lineno, "item.ranking")
            for k, v in opts.items():
                if k == "topn":
                    cfg.top_n = _number(v, lineno, "-topN", int)
                else:
                    _unknown(warnings, lineno, f"item.ranking option -{k}")
        elif key == "evaluation.setup":
            cfg.protocol, cfg.early_stop = _parse_protocol(value, lineno, warnings)
        elif key == "output.setup":
            cfg.output = _parse_output(value, lineno, warnings)
        elif key in HYPERPARAM_KEYS:
            _number(value, lineno, key, HYPERPARAM_KEYS[key][1])
            cfg.hyperparams[key] = value
        elif key != "recommender":
            _unknown(warnings, lineno, f"key {key}")
    try:
        cfg.hp()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _parse_protocol(value: str, lineno: int, warnings: list):
    head, opts = parse_options(value, lineno)
    head = head.lower() or "cv"
    seed = _number(opts.pop("rand-seed", 1), lineno, "--rand-seed", int)
    early = opts.pop("early-stop", None)
    try:
        if head == "cv":
            k = _number(opts.pop("k", 5), lineno, "-k", int)
            parallel = _on_off(opts.pop("p", "off"), lineno, "-p")
            view = str(opts.pop("test-view", "all")).lower()
            protocol = CrossValidation(k, seed, parallel, view)
        elif head == "given-ratio":
            protocol = GivenRatio(_number(opts.pop("r", 0.8), lineno, "-r"), seed)
        else:
            raise ConfigError(f"line {lineno}: unknown evaluation protocol {head!r}")
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: {exc}") from None
    for k in opts:
        _unknown(warnings, lineno, f"evaluation option -{k}")
    return protocol, (early.upper() if early else None)


def _parse_output(value: str, lineno: int, warnings: list) -> OutputSetup:
    _, opts = parse_options(value, lineno, flags=("to-clipboard",))
    folder = str(opts.pop("folder", WORKSPACE))
    verbose = _on_off(opts.pop("verbose", "off"), lineno, "-verbose")
    results = str(opts.pop("to-file", "results.txt"))
    clip = bool(opts.pop("to-clipboard", False))
    if clip:
        msg = f"line {lineno}: --to-clipboard is not supported and is ignored"
        warnings.append(msg)
        log.warning(msg)
    for k in opts:
        _unknown(warnings, lineno, f"output option -{k}")
    return OutputSetup(folder, verbose, results, clip)


def _render_protocol(cfg: ExperimentConfig) -> str:
    p = cfg.protocol
    if isinstance(p, CrossValidation):
        text = f"cv -k {p.k} -p {'on' if p.parallel else 'off'} --rand-seed {p.seed} --test-view {p.test_view}"
    else:
        text = f"given-ratio -r {p.ratio!r} --rand-seed {p.seed}"
    if cfg.early_stop:
        text += f" --early-stop {cfg.early_stop}"
    return text


def render_config(cfg: ExperimentConfig) -> str:
    """Canonical text for ``cfg``; ``parse_config(render_config(c)) == c``."""
    lines = []
    if cfg.data_path_windows:
        lines.append(f"dataset.ratings.wins={cfg.data_path_windows}")
    if cfg.data_path_other:
        lines.append(f"dataset.ratings.lins={cfg.data_path_other}")
    lines.append(f"ratings.setup=-threshold {cfg.threshold!r} -datatransformation {cfg.data_transformation}")
    rec = " ".join([cfg.recommender] + [f"-{k} {v!r}" if isinstance(v, float) else f"-{k} {v}"
                                        for k, v in cfg.recommender_options.items()])
    lines.append(f"recommender={rec}")
    lines.append(f"item.ranking={'on' if cfg.item_ranking else 'off'} -topN {cfg.top_n}")
    lines.append(f"evaluation.setup={_render_protocol(cfg)}")
    o = cfg.output
    out = f"output.setup=-folder {o.folder} -verbose {'on' if o.verbose else 'off'}"
    if o.to_clipboard:
        out += " --to-clipboard"
    lines.append(out + f" --to-file {o.results_file}")
    lines += [f"{k}={v}" for k, v in cfg.hyperparams.items()]
    return "\n".join(lines) + "\n"


def resolve_data_path(cfg: ExperimentConfig, platform: str | None = None) -> Path:
    platform = platform or sys.platform
    windows = platform.lower().startswith("win")
    order = [cfg.data_path_windows, cfg.data_path_other]
    if not windows:
        order.reverse()
    chosen = next((p for p in order if p), None)
    if chosen is None:
        raise ConfigError("no data path: set dataset.ratings.wins or dataset.ratings.lins")
    path = Path(chosen)
    if not path.is_absolute() and cfg.base_dir is not None:
        path = cfg.base_dir / path
    return path


def format_metrics(report: EvalReport) -> str:
    return ",".join(f"{k}={v:.6f}" for k, v in report.metrics.items())


def write_results(report: EvalReport, output: OutputSetup, directory: str | Path,
                  timestamp: datetime | None = None) -> str:
    """Append one tab-separated line: timestamp, algorithm, task, metrics, parameters."""
    stamp = (timestamp or datetime.now()).isoformat(timespec="seconds")
    line = "\t".join([stamp, report.algorithm, report.task, format_metrics(report), report.params])
    with open(Path(directory) / output.results_file, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
    return line


def parse_results_line(line: str) -> dict:
    stamp, algorithm, task, metrics, params = line.rstrip("\n").split("\t")
    values = dict(kv.split("=", 1) for kv in metrics.split(","))
    return {"timestamp": datetime.fromisoformat(stamp), "algorithm": algorithm, "task": task,
            "metrics": {k: float(v) for k, v in values.items()}, "params": params}


def run_config(path: str | Path, out: TextIO | None = None, platform: str | None = None) -> str:
    out = out or sys.stdout
    path = Path(path)
    cfg = parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)
    data_path = resolve_data_path(cfg, platform)
    table = prepare_workspace(data_path, cfg.data_transformation, cfg.output.folder)
    table = binarize(table, cfg.threshold)
    print(f"== {path.name}: {cfg.recommender} ({cfg.task})", file=out)
    print(compute_stats(table).format(), file=out)
    report = evaluate(cfg.recommender, table, cfg.protocol, cfg.task, cfg.hp(), cfg.recommender_options,
                      params=cfg.describe())
    print(f"Results: {format_metrics(report)}", file=out)
    print(f"Parameters: {report.params}", file=out)
    return write_results(report, cfg.output, data_path.parent / cfg.output.folder)


def run(configs: Sequence[str | Path], out: TextIO | None = None, err: TextIO | None = None,
        platform: str | None = None) -> int:
    """Run each configuration in order; failures are reported and skipped."""
    out, err = out or sys.stdout, err or sys.stderr
    failed = 0
    for path in configs:
        try:
            run_config(path, out, platform)
        except (CarsError, ValueError, OSError) as exc:
            failed += 1
            print(f"error: {path}: {exc}", file=err)
    return 1 if failed else 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ctxrec", description="Run context-aware recommendation experiments.")
    parser.add_argument("-c", dest="configs", nargs="+", default=[], metavar="CONF",
                        help="configuration file(s), run in order")
    parser.add_argument("paths", nargs="*", metavar="CONF", help="configuration file(s) without -c")
    parser.add_argument("--list", action="store_true", help="list algorithm names and exit")
    args = parser.parse_args(argv)
    if args.list:
        print("\n".join(algorithms()))
        return 0
    configs = args.configs + args.paths
    if not configs:
        parser.error("no configuration file given")
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    return run(configs)


if __name__ == "__main__":
    sys.exit(main())
