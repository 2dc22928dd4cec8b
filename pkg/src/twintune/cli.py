"""Command-line front end and run-directory persistence.

Configuration is layered: built-in defaults, then a key=value config file
with section headers, then TWINTUNE_<SECTION>_<KEY> environment variables,
then command-line flags (highest priority). The resolved configuration is
snapshotted into the run directory before any training starts.
"""

from __future__ import annotations

import argparse
import configparser
import os
import statistics
import sys
from pathlib import Path

import torch

from . import data, models, protocols, stats
from .losses import LossConfig
from .models import ArchiveError, EncoderSpec
from .protocols import PretrainConfig, ProtocolError, ScheduleParams, TrainConfig
from .schedule import lr_find

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4

ENV_PREFIX = "TWINTUNE"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# (section, key, type, default, help) — every key can come from the config
# file, from TWINTUNE_<SECTION>_<KEY>, or from the mirrored --key flag.
SETTINGS = [
    ("data", "manifest", str, "", "manifest path(s): path[:mult][,path[:mult]...]"),
    ("data", "image_size", int, 256, "square input edge in pixels"),
    ("data", "include_cutout", bool, False, "enable centered cutout in the view pipelines"),
    ("model", "encoder", str, "resnet50-shape", "encoder kind: resnet50-shape or tiny-conv"),
    ("model", "output_dim", int, 0, "encoder feature width (0 = kind default)"),
    ("model", "init_seed", int, 0, "seed fixing random encoder initialization"),
    ("model", "archive", str, "", "encoder weight archive to start from"),
    ("loss", "lambda", float, 1.0 / 8192, "off-diagonal trade-off weight"),
    ("loss", "alpha", float, 0.01, "sparsity penalty weight"),
    ("loss", "l21_groups", str, "rows", "L2,1 grouping: rows or columns"),
    ("schedule", "div", float, 25.0, "start lr divisor"),
    ("schedule", "final_div", float, 1e4, "final lr divisor (applied to start lr)"),
    ("schedule", "pct_ramp", float, 0.25, "fraction of steps spent ramping up"),
    ("schedule", "m_max", float, 0.95, "momentum at the cycle ends"),
    ("schedule", "m_min", float, 0.85, "momentum at peak lr"),
    ("schedule", "interp", str, "cosine", "interpolation: cosine or linear"),
    ("pretrain", "mode", str, "ssl", "unfreeze mode: ssl (all) or ssl_p (final block)"),
    ("pretrain", "epochs_phase1", int, 1, "projector warmup epochs"),
    ("pretrain", "epochs_phase2", int, 100, "scheduled epochs"),
    ("pretrain", "batch_size", int, 128, "two-view batch size"),
    ("pretrain", "lr_phase1", float, 1e-3, "fixed warmup lr"),
    ("pretrain", "lr_max", float, 0.0, "peak lr (0 = search)"),
    ("pretrain", "projector_width", int, 8192, "projector layer width"),
    ("pretrain", "projector_layers", int, 3, "projector layer count"),
    ("train", "epochs_phase1", int, 1, "head warmup epochs"),
    ("train", "epochs_phase2", int, 40, "scheduled epochs"),
    ("train", "batch_size", int, 64, "batch size"),
    ("train", "lr_phase1", float, 1e-3, "fixed warmup lr"),
    ("train", "lr_max", float, 0.0, "peak lr (0 = search)"),
    ("train", "tta_k", int, 3, "augmented views averaged at test time"),
    ("run", "seed", int, 0, "run seed"),
    ("run", "seeds", str, "", "comma-separated seed list for multi-run batches"),
    ("run", "out", str, "", "output run directory"),
    ("run", "deterministic", bool, False, "force reproducible kernels (slower)"),
]

COMMAND_SECTIONS = {
    "pretrain": ("data", "model", "loss", "schedule", "pretrain", "run"),
    "finetune": ("data", "model", "schedule", "train", "run"),
    "probe": ("data", "model", "schedule", "train", "run"),
    "lrfind": ("data", "model", "schedule", "train", "run"),
    "eval": ("data", "train", "run"),
}


def _parse_bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


class Config:
    """Layered key/value store resolved once per command."""

    def __init__(self, sections: tuple[str, ...], config_path: str | None, cli_values: dict):
        self.sections = sections
        self.file = configparser.ConfigParser()
        if config_path:
            if not Path(config_path).exists():
                raise CliError(EXIT_MISSING, f"config file not found: {config_path}")
            self.file.read(config_path)
        self.cli_values = cli_values

    def get(self, section: str, key: str):
        spec = next(
            (s for s in SETTINGS if s[0] == section and s[1] == key), None
        )
        if spec is None:
            raise CliError(EXIT_CONFIG, f"unknown config key {section}.{key}")
        _, _, typ, default, _ = spec
        dest = f"{section}_{key}"
        cli = self.cli_values.get(dest)
        if cli is not None:
            return cli
        env = os.environ.get(f"{ENV_PREFIX}_{section.upper()}_{key.upper()}")
        if env is not None:
            return self._cast(typ, env, section, key)
        if self.file.has_option(section, key):
            return self._cast(typ, self.file.get(section, key), section, key)
        return default

    @staticmethod
    def _cast(typ, text: str, section: str, key: str):
        try:
            if typ is bool:
                return _parse_bool(text)
            return typ(text)
        except ValueError as e:
            raise CliError(EXIT_CONFIG, f"bad value for {section}.{key}: {e}") from e

    def snapshot(self, path: Path, overrides: dict | None = None) -> None:
        overrides = overrides or {}
        out = configparser.ConfigParser()
        for section in self.sections:
            out.add_section(section)
            for s, key, *_ in SETTINGS:
                if s == section:
                    value = overrides.get((s, key), self.get(section, key))
                    out.set(section, key, str(value))
        with open(path, "w") as f:
            out.write(f)


def _add_config_flags(parser: argparse.ArgumentParser, sections: tuple[str, ...]) -> None:
    parser.add_argument("--config", default=None, help="config file (key=value with [section] headers)")
    for section, key, typ, _, help_text in SETTINGS:
        if section not in sections:
            continue
        flag = "--" + key.replace("_", "-")
        dest = f"{section}_{key}"
        if typ is bool:
            parser.add_argument(flag, dest=dest, action="store_true", default=None, help=help_text)
        else:
            parser.add_argument(flag, dest=dest, type=typ, default=None, help=help_text)


def _build_config(args: argparse.Namespace, command: str) -> Config:
    sections = COMMAND_SECTIONS[command]
    cli_values = {
        f"{s}_{k}": getattr(args, f"{s}_{k}", None) for s, k, *_ in SETTINGS if s in sections
    }
    return Config(sections, args.config, cli_values)


def _apply_determinism(cfg: Config) -> None:
    if cfg.get("run", "deterministic"):
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def _encoder_spec(cfg: Config) -> EncoderSpec:
    kind = cfg.get("model", "encoder")
    dim = cfg.get("model", "output_dim")
    if dim == 0:
        dim = 2048 if kind == "resnet50-shape" else 256
    archive = cfg.get("model", "archive")
    if archive and not Path(archive).exists():
        raise CliError(EXIT_MISSING, f"encoder archive not found: {archive}")
    try:
        return EncoderSpec(
            kind=kind,
            output_dim=dim,
            init="from-archive" if archive else "random",
            archive_path=archive or None,
            init_seed=cfg.get("model", "init_seed"),
        )
    except ValueError as e:
        raise CliError(EXIT_CONFIG, str(e)) from e


def _load_corpus(cfg: Config) -> tuple[data.Dataset, data.Dataset]:
    """Parse the manifest setting into (full dataset, composed pretrain corpus)."""
    raw = cfg.get("data", "manifest")
    if not raw:
        raise CliError(EXIT_CONFIG, "no manifest configured")
    parts = []
    for chunk in raw.split(","):
        path, _, mult = chunk.partition(":")
        parts.append((path, int(mult) if mult else 1))
    datasets = {}
    for path, _ in parts:
        if path not in datasets:
            if not Path(path).exists():
                raise CliError(EXIT_MISSING, f"manifest not found: {path}")
            datasets[path] = data.load_manifest(path)
    full = datasets[parts[0][0]]
    spec = data.CorpusSpec(tuple((path, mult) for path, mult in parts))
    corpus = data.compose_corpus(
        spec, {path: ds.split("pretrain") for path, ds in datasets.items()}
    )
    for ds in datasets.values():
        data.check_no_test_leakage(corpus, ds)
    return full, corpus


def _load_dataset(cfg: Config) -> data.Dataset:
    raw = cfg.get("data", "manifest")
    if not raw:
        raise CliError(EXIT_CONFIG, "no manifest configured")
    path = raw.split(",")[0].partition(":")[0]
    if not Path(path).exists():
        raise CliError(EXIT_MISSING, f"manifest not found: {path}")
    return data.load_manifest(path)


def _schedule_params(cfg: Config) -> ScheduleParams:
    return ScheduleParams(
        div=cfg.get("schedule", "div"),
        final_div=cfg.get("schedule", "final_div"),
        pct_ramp=cfg.get("schedule", "pct_ramp"),
        m_max=cfg.get("schedule", "m_max"),
        m_min=cfg.get("schedule", "m_min"),
        interp=cfg.get("schedule", "interp"),
    )


def _out_dir(cfg: Config, required: bool = True) -> Path | None:
    out = cfg.get("run", "out")
    if not out:
        if required:
            raise CliError(EXIT_CONFIG, "no output directory configured (--out)")
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _seed_list(cfg: Config) -> list[int]:
    seeds = cfg.get("run", "seeds")
    if seeds:
        try:
            return [int(s) for s in seeds.split(",")]
        except ValueError as e:
            raise CliError(EXIT_CONFIG, f"bad seeds list: {seeds!r}") from e
    return [cfg.get("run", "seed")]


def cmd_synth(args: argparse.Namespace) -> int:
    imbalance = None
    if args.imbalance:
        imbalance = [float(x) for x in args.imbalance.split(",")]
    manifest = data.synth_generate(
        args.out,
        num_classes=args.classes,
        n_train=args.train,
        n_test=args.test,
        image_size=args.size,
        imbalance=imbalance,
        seed=args.seed,
    )
    print(f"manifest={manifest} classes={args.classes} train={args.train} test={args.test}")
    return EXIT_OK


def cmd_pretrain(args: argparse.Namespace) -> int:
    cfg = _build_config(args, "pretrain")
    _apply_determinism(cfg)
    out = _out_dir(cfg)
    cfg.snapshot(out / "config.snapshot")
    _, corpus = _load_corpus(cfg)
    encoder = models.build_encoder(_encoder_spec(cfg))
    lr_max = cfg.get("pretrain", "lr_max")
    pcfg = PretrainConfig(
        mode=cfg.get("pretrain", "mode"),
        epochs_phase1=cfg.get("pretrain", "epochs_phase1"),
        epochs_phase2=cfg.get("pretrain", "epochs_phase2"),
        batch_size=cfg.get("pretrain", "batch_size"),
        image_size=cfg.get("data", "image_size"),
        projector_width=cfg.get("pretrain", "projector_width"),
        projector_layers=cfg.get("pretrain", "projector_layers"),
        loss=LossConfig(lambd=cfg.get("loss", "lambda"), alpha=cfg.get("loss", "alpha")),
        l21_groups=cfg.get("loss", "l21_groups"),
        lr_phase1=cfg.get("pretrain", "lr_phase1"),
        lr_max=lr_max or None,
        schedule=_schedule_params(cfg),
        include_cutout=cfg.get("data", "include_cutout"),
        seed=cfg.get("run", "seed"),
    )
    _, record = protocols.further_pretrain(encoder, corpus, pcfg, out)
    losses2 = record.phase_losses["phase2"]
    first = losses2[0] if losses2 else record.phase_losses["phase1"][0]
    last = losses2[-1] if losses2 else record.phase_losses["phase1"][-1]
    print(
        f"pretrain mode={pcfg.mode} first_epoch_loss={first:.6g} "
        f"final_epoch_loss={last:.6g} archive={record.archive_path}"
    )
    return EXIT_OK


def _train_config(cfg: Config, seed: int, freeze_encoder: bool) -> TrainConfig:
    lr_max = cfg.get("train", "lr_max")
    return TrainConfig(
        epochs_phase1=cfg.get("train", "epochs_phase1"),
        epochs_phase2=cfg.get("train", "epochs_phase2"),
        batch_size=cfg.get("train", "batch_size"),
        image_size=cfg.get("data", "image_size"),
        lr_phase1=cfg.get("train", "lr_phase1"),
        lr_max=lr_max or None,
        schedule=_schedule_params(cfg),
        tta_k=cfg.get("train", "tta_k"),
        freeze_encoder=freeze_encoder,
        seed=seed,
    )


def _cmd_supervised(args: argparse.Namespace, command: str) -> int:
    cfg = _build_config(args, command)
    _apply_determinism(cfg)
    out = _out_dir(cfg)
    cfg.snapshot(out / "config.snapshot")
    dataset = _load_dataset(cfg)
    spec = _encoder_spec(cfg)
    seeds = _seed_list(cfg)
    freeze = command == "probe"
    runs = []
    for seed in seeds:
        run_dir = out / f"seed_{seed}" if len(seeds) > 1 else out
        run_dir.mkdir(parents=True, exist_ok=True)
        if run_dir != out:
            cfg.snapshot(
                run_dir / "config.snapshot",
                overrides={("run", "seed"): seed, ("run", "seeds"): ""},
            )
        encoder = models.build_encoder(spec)
        tcfg = _train_config(cfg, seed, freeze)
        fn = protocols.linear_probe if freeze else protocols.finetune
        _, record = fn(encoder, dataset, tcfg, run_dir)
        runs.append(record.metrics)
        m = record.metrics
        print(f"seed={seed} accuracy={m.accuracy!r} weighted_f1={m.weighted_f1!r}")
    stats.write_metrics_csv(out / "metrics.csv", runs)
    stats.emit_report(out, {command: runs})
    if len(runs) > 1:
        med = statistics.median(r.accuracy for r in runs)
        print(f"median_accuracy={med!r} runs={len(runs)}")
    return EXIT_OK


def cmd_finetune(args: argparse.Namespace) -> int:
    return _cmd_supervised(args, "finetune")


def cmd_probe(args: argparse.Namespace) -> int:
    return _cmd_supervised(args, "probe")


def cmd_eval(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    snapshot = run_dir / "config.snapshot"
    archive = run_dir / "weights" / "model_final.archive"
    if not snapshot.exists():
        raise CliError(EXIT_MISSING, f"missing config snapshot: {snapshot}")
    if not archive.exists():
        raise CliError(EXIT_MISSING, f"missing model archive: {archive}")
    cfg = _build_config(args, "eval")
    base = configparser.ConfigParser()
    base.read(snapshot)

    def pick(section, key, typ):
        override = cfg.cli_values.get(f"{section}_{key}")
        if override is not None:
            return override
        return typ(base.get(section, key))

    manifest = pick("data", "manifest", str)
    if not Path(manifest).exists():
        raise CliError(EXIT_MISSING, f"manifest not found: {manifest}")
    dataset = data.load_manifest(manifest)
    kind = base.get("model", "encoder")
    dim = int(base.get("model", "output_dim"))
    if dim == 0:
        dim = 2048 if kind == "resnet50-shape" else 256
    encoder = models.build_encoder(EncoderSpec(kind=kind, output_dim=dim))
    head = torch.nn.Linear(dim, len(dataset.classes))
    model = models.ComposedModel(encoder, head)
    models.load_archive(archive, model)
    acc, wf1, pcf = protocols.evaluate_tta(
        model,
        dataset.split("test"),
        image_size=pick("data", "image_size", int),
        k=pick("train", "tta_k", int),
        seed=pick("run", "seed", int),
    )
    per_class = ";".join(f"{v:.6g}" for v in pcf)
    print(f"accuracy={acc!r} weighted_f1={wf1!r} per_class_f1={per_class}")
    return EXIT_OK


def cmd_lrfind(args: argparse.Namespace) -> int:
    cfg = _build_config(args, "lrfind")
    _apply_determinism(cfg)
    out = _out_dir(cfg)
    dataset = _load_dataset(cfg)
    train_ds = dataset.split("train")
    if len(train_ds) == 0:
        raise CliError(EXIT_CONFIG, "train split is empty")
    encoder = models.build_encoder(_encoder_spec(cfg))
    seed = cfg.get("run", "seed")
    image_size = cfg.get("data", "image_size")
    batch_size = cfg.get("train", "batch_size")

    from . import augment
    from .seeding import derive_seed, rng_for

    images = train_ds.load_all(image_size)
    targets = torch.from_numpy(train_ds.targets())
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "head"))
        head = torch.nn.Linear(encoder.output_dim, len(dataset.classes))
    model = models.ComposedModel(encoder, head)
    if args.freeze_encoder:
        models.set_trainable(model, lambda name: name.startswith("head."))
    models.train_with_freeze(model)
    batches = protocols._index_batches(len(targets), batch_size, rng_for(seed, "lrfind-order"))[:8]
    prepared = []
    for idx in batches:
        x = augment.train_augment(images[idx], global_seed=seed, epoch=-1, sample_indices=idx)
        prepared.append((protocols._to_chw_batch(x), targets[idx]))
    result = lr_find(
        model,
        protocols._adam,
        lambda mdl, batch, i: torch.nn.functional.cross_entropy(mdl(batch[0]), batch[1]),
        prepared,
        budget=args.budget,
    )
    lines = ["lr,smoothed_loss,raw_loss"]
    for lr, sm, raw in zip(result.lrs, result.smoothed_losses, result.raw_losses):
        lines.append(f"{lr!r},{sm!r},{raw!r}")
    (out / "lrfind.csv").write_text("\n".join(lines) + "\n")

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(result.lrs, result.smoothed_losses)
    if result.suggestion is not None:
        ax.axvline(result.suggestion, linestyle="--", color="gray")
    ax.set_xscale("log")
    ax.set_xlabel("learning rate")
    ax.set_ylabel("smoothed loss")
    fig.tight_layout()
    fig.savefig(plots / "lr_find.png", dpi=100)
    plt.close(fig)

    if result.no_valley:
        print("suggested_lr=none no_valley=true")
    else:
        print(f"suggested_lr={result.suggestion!r} no_valley=false")
    return EXIT_OK


def _parse_summary(text: str) -> stats.SummaryStat:
    fields = {}
    for part in text.split(","):
        key, _, value = part.partition("=")
        fields[key.strip()] = value.strip()
    try:
        return stats.SummaryStat(
            mean=float(fields["mean"]), std=float(fields["std"]), n=int(fields["n"])
        )
    except (KeyError, ValueError) as e:
        raise CliError(EXIT_CONFIG, f"bad summary {text!r}; expected mean=..,std=..,n=..") from e


def cmd_compare(args: argparse.Namespace) -> int:
    null = args.null
    if args.summary_a or args.summary_b:
        if not (args.summary_a and args.summary_b):
            raise CliError(EXIT_CONFIG, "summary mode needs both --summary-a and --summary-b")
        a = _parse_summary(args.summary_a)
        b = _parse_summary(args.summary_b)
        res = stats.welch_test(a, b, null)
        verdict = "greater" if null == "le" and res.p < args.alpha else "equal-undetermined"
        print(f"t={res.t:.6g} df={res.df:.6g} p={res.p!r} verdict={verdict} degenerate={res.degenerate}")
        return EXIT_OK
    if not (args.a and args.b):
        raise CliError(EXIT_CONFIG, "need --a/--b run directories or --summary-a/--summary-b")
    runs = {}
    for label, d in (("a", args.a), ("b", args.b)):
        path = Path(d) / "metrics.csv"
        if not path.exists():
            raise CliError(EXIT_MISSING, f"missing metrics: {path}")
        runs[label] = stats.read_metrics_csv(path)
    result = stats.compare(
        runs["a"], runs["b"], null, alpha=args.alpha, name_a=args.a, name_b=args.b
    )
    print(
        f"p_accuracy={result.p_accuracy!r} p_f1={result.p_f1!r} "
        f"verdict={result.verdict} degenerate={result.degenerate}"
    )
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    path = run_dir / "metrics.csv"
    if not path.exists():
        raise CliError(EXIT_MISSING, f"missing metrics: {path}")
    runs = stats.read_metrics_csv(path)
    if not runs:
        raise CliError(EXIT_CONFIG, "metrics.csv holds no runs")
    stats.emit_report(run_dir, {run_dir.name or "run": runs})
    print(f"report={run_dir / 'report.md'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twintune",
        description="Self-supervised further pre-training, fine-tuning, and probing toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the procedural image corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--train", type=int, default=512)
    p.add_argument("--test", type=int, default=2048)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--imbalance", default="", help="comma-separated class weights")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("pretrain", help="two-phase self-supervised further pre-training")
    _add_config_flags(p, COMMAND_SECTIONS["pretrain"])
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="head warmup then whole-network training")
    _add_config_flags(p, COMMAND_SECTIONS["finetune"])
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("probe", help="fine-tune with the encoder frozen throughout")
    _add_config_flags(p, COMMAND_SECTIONS["probe"])
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("eval", help="re-evaluate a finished run's saved model")
    p.add_argument("--run-dir", required=True)
    _add_config_flags(p, COMMAND_SECTIONS["eval"])
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("lrfind", help="sweep learning rates and plot the loss curve")
    _add_config_flags(p, COMMAND_SECTIONS["lrfind"])
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--freeze-encoder", action="store_true")
    p.set_defaults(fn=cmd_lrfind)

    p = sub.add_parser("compare", help="significance-test two run batches or summaries")
    p.add_argument("--a", default="", help="run directory for side a")
    p.add_argument("--b", default="", help="run directory for side b")
    p.add_argument("--summary-a", default="", help="mean=..,std=..,n=..")
    p.add_argument("--summary-b", default="", help="mean=..,std=..,n=..")
    p.add_argument("--null", choices=("le", "eq"), default="le")
    p.add_argument("--alpha", type=float, default=0.01)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("report", help="regenerate report and plots from metrics.csv")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error[{e.code}]: {e}", file=sys.stderr)
        return e.code
    except (data.ManifestError, ValueError, ProtocolError) as e:
        print(f"error[{EXIT_CONFIG}]: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ArchiveError as e:
        print(f"error[{EXIT_MISSING}]: {e}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as e:
        print(f"error[{EXIT_MISSING}]: {e}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as e:  # pragma: no cover - last-resort guard
        print(f"error[{EXIT_FAILURE}]: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
